use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{AgentContext, AgentError, CorpusIndex, RetrievalAgent};
use crate::domain::{ExclusionSet, Query, RankedEntry, RankedList};

/// Below this many rows per worker a partitioned scan is not worth it.
const SCAN_TILE: usize = 256;
const MIN_ROWS_PER_WORKER: usize = 4096;

/// Query vectors whose rankings are kept.
const CACHED_QUERIES: usize = 256;

/// Rows ranked beyond what the first call needs.
const CACHE_SLACK: usize = 1024;

/// Turns query text into a vector in the corpus space.
pub trait QueryEncoder: Send + Sync {
    fn encode(&self, ctx: &AgentContext<'_>, text: &str) -> Result<Vec<f32>, AgentError>;
}

/// Encoder backed by a fixed table of precomputed query vectors.
#[derive(Debug, Clone, Default)]
pub struct LookupEncoder {
    table: HashMap<String, Vec<f32>>,
}

impl LookupEncoder {
    pub fn new(table: HashMap<String, Vec<f32>>) -> Self {
        Self { table }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f32>) {
        self.table.insert(text.into(), vector);
    }
}

impl QueryEncoder for LookupEncoder {
    fn encode(&self, _ctx: &AgentContext<'_>, text: &str) -> Result<Vec<f32>, AgentError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| AgentError::MissingEmbedding(text.to_string()))
    }
}

/// Inner product with eight independent accumulators.
///
/// The summation order depends only on the slice length, so a given pair of
/// vectors always produces the same bits.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let (xs, xt) = a.as_chunks::<8>();
    let (ys, yt) = b.as_chunks::<8>();
    let acc = lanes(xs, ys);
    let mut tail = 0.0f32;
    for (x, y) in xt.iter().zip(yt) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn lanes(xs: &[[f32; 8]], ys: &[[f32; 8]]) -> [f32; 8] {
    use std::arch::x86_64::*;
    // SAFETY: SSE is part of the x86_64 baseline and every load reads
    // within an 8-float chunk.
    unsafe {
        let (mut lo, mut hi) = (_mm_setzero_ps(), _mm_setzero_ps());
        for (x, y) in xs.iter().zip(ys) {
            let (x, y) = (x.as_ptr(), y.as_ptr());
            lo = _mm_add_ps(lo, _mm_mul_ps(_mm_loadu_ps(x), _mm_loadu_ps(y)));
            hi = _mm_add_ps(hi, _mm_mul_ps(_mm_loadu_ps(x.add(4)), _mm_loadu_ps(y.add(4))));
        }
        let mut acc = [0.0f32; 8];
        _mm_storeu_ps(acc.as_mut_ptr(), lo);
        _mm_storeu_ps(acc.as_mut_ptr().add(4), hi);
        acc
    }
}

/// `dot(q, row)` for every `q.len()`-wide row of `slab`, written to `out`.
fn dots(q: &[f32], slab: &[f32], out: &mut Vec<f32>) {
    out.clear();
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was just checked.
        unsafe { dots_avx(q, slab, out) };
        return;
    }
    out.extend(slab.chunks_exact(q.len()).map(|row| dot(q, row)));
}

/// [`dots`] four rows at a time, each row keeping the lane order of [`dot`].
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn dots_avx(q: &[f32], slab: &[f32], out: &mut Vec<f32>) {
    use std::arch::x86_64::*;
    let d = q.len();
    let (qs, _) = q.as_chunks::<8>();
    let mut groups = slab.chunks_exact(4 * d);
    for g in groups.by_ref() {
        let p = g.as_ptr();
        let mut v = [_mm256_setzero_ps(); 4];
        for (c, qc) in qs.iter().enumerate() {
            // SAFETY: row `j` spans `j * d..(j + 1) * d` of `g` and
            // `8 * c + 8 <= d`.
            unsafe {
                let y = _mm256_loadu_ps(qc.as_ptr());
                for (j, acc) in v.iter_mut().enumerate() {
                    let x = _mm256_loadu_ps(p.add(j * d + 8 * c));
                    *acc = _mm256_add_ps(*acc, _mm256_mul_ps(y, x));
                }
            }
        }
        for (j, acc) in v.into_iter().enumerate() {
            out.push(finish(acc, q, &g[j * d..(j + 1) * d]));
        }
    }
    for row in groups.remainder().chunks_exact(d) {
        let mut acc = _mm256_setzero_ps();
        for (qc, xc) in qs.iter().zip(row.as_chunks::<8>().0) {
            // SAFETY: both loads read one 8-float chunk.
            unsafe {
                acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(qc.as_ptr()), _mm256_loadu_ps(xc.as_ptr())));
            }
        }
        out.push(finish(acc, q, row));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
#[inline]
fn finish(v: std::arch::x86_64::__m256, q: &[f32], row: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    // SAFETY: `acc` holds eight floats.
    unsafe { std::arch::x86_64::_mm256_storeu_ps(acc.as_mut_ptr(), v) };
    let mut tail = 0.0f32;
    for (x, y) in q.as_chunks::<8>().1.iter().zip(row.as_chunks::<8>().1) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(not(target_arch = "x86_64"))]
#[inline]
fn lanes(xs: &[[f32; 8]], ys: &[[f32; 8]]) -> [f32; 8] {
    let mut acc = [0.0f32; 8];
    for (x, y) in xs.iter().zip(ys) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc
}

/// `v` scaled to unit length, or `None` for a zero or non-finite vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Top rows of the whole corpus for one query vector, in ranking order.
struct Ranking {
    vector: Vec<f32>,
    rows: Arc<Vec<(f64, usize)>>,
}

/// Exhaustive cosine scan over a [`CorpusIndex`].
///
/// Rankings of recent query vectors are kept, so repeated retrieval with a
/// growing exclusion set filters a cached prefix instead of rescanning.
/// Results are identical either way.
pub struct ExactRetriever {
    index: Arc<CorpusIndex>,
    encoder: Option<Arc<dyn QueryEncoder>>,
    workers: usize,
    cache: Mutex<VecDeque<Ranking>>,
}

impl ExactRetriever {
    pub fn new(index: Arc<CorpusIndex>) -> Self {
        Self {
            index,
            encoder: None,
            workers: 1,
            cache: Mutex::new(VecDeque::new()),
        }
    }

    /// Used for queries that carry no embedding of their own.
    pub fn with_encoder(mut self, encoder: Arc<dyn QueryEncoder>) -> Self {
        self.encoder = Some(encoder);
        self
    }

    /// Scan partitions; results are identical for any value.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn index(&self) -> &Arc<CorpusIndex> {
        &self.index
    }

    pub fn query_vector(&self, ctx: &AgentContext<'_>, query: &Query) -> Result<Vec<f32>, AgentError> {
        let raw = match (query.embedding(), &self.encoder) {
            (Some(v), _) => v.to_vec(),
            (None, Some(encoder)) => encoder.encode(ctx, query.text())?,
            (None, None) => return Err(AgentError::MissingEmbedding(query.text().to_string())),
        };
        if raw.len() != self.index.dimension() {
            return Err(AgentError::Dimension {
                expected: self.index.dimension(),
                got: raw.len(),
            });
        }
        normalize(&raw).ok_or_else(|| AgentError::Backend("query vector is zero or not finite".into()))
    }

    /// Top-`limit` unexcluded rows for a unit query vector.
    pub fn search(&self, vector: &[f32], excluded: &ExclusionSet, limit: usize) -> RankedList {
        let n = self.index.len();
        let cached = self.cached(vector).and_then(|rows| self.take(&rows, excluded, limit));
        let best = match cached {
            Some(best) => best,
            None => {
                let depth = limit.saturating_add(excluded.len()).saturating_add(CACHE_SLACK).min(n);
                let rows = Arc::new(self.rank(vector, depth));
                self.remember(vector, rows.clone());
                self.take(&rows, excluded, limit)
                    .expect("depth covers the limit plus every exclusion")
            }
        };
        let entries = best
            .into_iter()
            .map(|(score, row)| RankedEntry::new(self.index.id(row).clone(), score))
            .collect();
        RankedList::from_scored(entries).expect("scores are finite and ids unique")
    }

    fn cached(&self, vector: &[f32]) -> Option<Arc<Vec<(f64, usize)>>> {
        let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.iter().find(|r| r.vector == vector).map(|r| r.rows.clone())
    }

    fn remember(&self, vector: &[f32], rows: Arc<Vec<(f64, usize)>>) {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.retain(|r| r.vector != vector);
        if cache.len() >= CACHED_QUERIES {
            cache.pop_front();
        }
        cache.push_back(Ranking {
            vector: vector.to_vec(),
            rows,
        });
    }

    /// The first `limit` unexcluded rows of a ranking, or `None` when the
    /// ranking is a strict prefix of the corpus and runs out first.
    fn take(&self, rows: &[(f64, usize)], excluded: &ExclusionSet, limit: usize) -> Option<Vec<(f64, usize)>> {
        let mut out = Vec::with_capacity(limit.min(rows.len()));
        if limit == 0 {
            return Some(out);
        }
        for &hit in rows {
            if !excluded.contains(self.index.id(hit.1)) {
                out.push(hit);
                if out.len() == limit {
                    return Some(out);
                }
            }
        }
        (rows.len() == self.index.len()).then_some(out)
    }

    /// Top `depth` rows of the whole corpus in ranking order.
    fn rank(&self, vector: &[f32], depth: usize) -> Vec<(f64, usize)> {
        let n = self.index.len();
        let workers = self.workers.min(n.div_ceil(MIN_ROWS_PER_WORKER)).max(1);
        let mut best = if workers <= 1 {
            self.scan(vector, depth, 0..n)
        } else {
            let span = n.div_ceil(workers);
            let parts: Vec<Vec<(f64, usize)>> = (0..workers)
                .into_par_iter()
                .map(|w| self.scan(vector, depth, w * span..((w + 1) * span).min(n)))
                .collect();
            let mut merged: Vec<(f64, usize)> = parts.into_iter().flatten().collect();
            self.keep_best(&mut merged, depth);
            merged
        };
        best.sort_unstable_by(|a, b| self.cmp(a, b));
        best
    }

    fn scan(&self, vector: &[f32], limit: usize, rows: std::ops::Range<usize>) -> Vec<(f64, usize)> {
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let prune_at = limit.saturating_mul(4).max(1024);
        // Score of the `limit`-th best hit so far; anything lower can no
        // longer make the cut.
        let mut floor = f64::NEG_INFINITY;
        let mut scores = Vec::with_capacity(SCAN_TILE);
        let mut start = rows.start;
        while start < rows.end {
            let end = (start + SCAN_TILE).min(rows.end);
            dots(vector, self.index.rows(start..end), &mut scores);
            for (&score, row) in scores.iter().zip(start..end) {
                let score = score as f64;
                if score < floor {
                    continue;
                }
                hits.push((score, row));
                if hits.len() == limit && floor == f64::NEG_INFINITY {
                    floor = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
                }
                // Amortized pruning keeps memory at O(limit).
                if hits.len() >= prune_at {
                    self.keep_best(&mut hits, limit);
                    if let Some(worst) = hits.last() {
                        floor = worst.0;
                    }
                }
            }
            start = end;
        }
        self.keep_best(&mut hits, limit);
        hits
    }

    fn cmp(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.index.id(a.1).cmp(self.index.id(b.1)))
    }

    /// The best `limit` of `hits`, unordered.
    fn keep_best(&self, hits: &mut Vec<(f64, usize)>, limit: usize) {
        if hits.len() > limit {
            if limit > 0 {
                hits.select_nth_unstable_by(limit - 1, |a, b| self.cmp(a, b));
            }
            hits.truncate(limit);
        }
    }
}

impl RetrievalAgent for ExactRetriever {
    fn retrieve(
        &self,
        ctx: &AgentContext<'_>,
        query: &Query,
        excluded: &ExclusionSet,
        limit: usize,
    ) -> Result<RankedList, AgentError> {
        let vector = self.query_vector(ctx, query)?;
        Ok(self.search(&vector, excluded, limit))
    }
}
