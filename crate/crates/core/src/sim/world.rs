use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::agents::{dot, normalize, CorpusIndex};
use crate::domain::{CandidateId, Query};
use crate::eval::{Qrels, QrelsRecord};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    /// Random background; q0 is the intent rotated by `drift`.
    Standard,
    /// Background plus, per topic, a distractor cluster the initial query
    /// favours and a relevant cluster around the intent.
    TwoCluster,
}

/// Generator parameters, also the on-disk world spec (`key = value` lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub kind: WorldKind,
    pub dimension: usize,
    /// Background candidates shared by all topics.
    pub corpus_size: usize,
    pub topics: usize,
    /// Relevance threshold on cosine to the intent. When absent it is solved
    /// so the background alone holds `expected_relevant` per topic on average.
    pub rho: Option<f64>,
    pub expected_relevant: f64,
    /// Angle in radians between q0 and the intent (standard world).
    pub drift: f64,
    /// Distractor cluster size per topic (two-cluster world).
    pub distractors: usize,
    /// Relevant cluster size per topic (two-cluster world).
    pub cluster: usize,
    /// Noise scale of cluster members around their centre.
    pub spread: f64,
    /// Weight of the distractor direction in q0 (two-cluster world).
    pub lure: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            kind: WorldKind::Standard,
            dimension: 64,
            corpus_size: 10_000,
            topics: 30,
            rho: None,
            expected_relevant: 100.0,
            drift: 1.0,
            distractors: 1500,
            cluster: 60,
            spread: 0.6,
            lure: 0.8,
            seed: 0,
        }
    }
}

impl WorldParams {
    pub fn two_cluster() -> Self {
        Self {
            kind: WorldKind::TwoCluster,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Spec(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_spec_string(&self) -> String {
        toml::to_string(self).expect("world params always serialize")
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(m));
        if self.dimension < 2 {
            return bad(format!("dimension must be at least 2, got {}", self.dimension));
        }
        if self.corpus_size == 0 || self.topics == 0 {
            return bad("corpus_size and topics must be positive".into());
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho must be in (0, 1), got {rho}"));
            }
        } else if !(self.expected_relevant > 0.0 && self.expected_relevant < self.corpus_size as f64) {
            return bad(format!(
                "expected_relevant must be in (0, corpus_size), got {}",
                self.expected_relevant
            ));
        }
        if !(0.0..=1.0).contains(&self.lure) || !self.spread.is_finite() || self.spread < 0.0 {
            return bad("lure must be in [0, 1] and spread non-negative".into());
        }
        if !self.drift.is_finite() {
            return bad("drift must be finite".into());
        }
        Ok(())
    }
}

/// Probability that a uniformly random unit vector in `d` dimensions has
/// cosine at least `rho` with a fixed direction.
pub fn cosine_tail(d: usize, rho: f64) -> f64 {
    // Density of the cosine is proportional to (1 - t^2)^((d - 3) / 2).
    let e = (d as f64 - 3.0) / 2.0;
    let f = |t: f64| (1.0 - t * t).max(0.0).powf(e);
    let simpson = |a: f64, b: f64| {
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let rho = rho.clamp(-1.0, 1.0);
    simpson(rho, 1.0) / simpson(-1.0, 1.0)
}

/// The threshold at which `n` random candidates hold `expected` above it.
pub fn rho_for_expected(d: usize, n: usize, expected: f64) -> f64 {
    let target = expected / n as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cosine_tail(d, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTopic {
    pub id: String,
    pub intent: Vec<f32>,
    pub query: Vec<f32>,
    pub relevant: usize,
}

impl SimTopic {
    pub fn initial_query(&self) -> Query {
        Query::original(format!("synthetic topic {}", self.id))
            .expect("non-empty text")
            .with_embedding(self.query.clone())
    }
}

/// A generated corpus, its topics and complete relevance judgments.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    pub rho: f64,
    pub index: Arc<CorpusIndex>,
    pub qrels: Arc<Qrels>,
    pub topics: Vec<SimTopic>,
}

impl SyntheticWorld {
    pub fn relevant_counts(&self) -> Vec<usize> {
        self.topics.iter().map(|t| t.relevant).collect()
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = normalize(&v) {
            return u;
        }
    }
}

/// A random unit vector orthogonal to every vector in `basis` (itself
/// orthonormal).
fn orthogonal_unit(rng: &mut ChaCha8Rng, basis: &[&[f32]]) -> Vec<f32> {
    loop {
        let mut v = gaussian_unit(rng, basis[0].len());
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(*b).for_each(|(x, y)| *x -= p * y);
        }
        if let Some(u) = normalize(&v) {
            return u;
        }
    }
}

fn around(rng: &mut ChaCha8Rng, centre: &[f32], spread: f64) -> Vec<f32> {
    let scale = spread / (centre.len() as f64).sqrt();
    loop {
        let v: Vec<f32> = centre
            .iter()
            .map(|&c| {
                let g: f64 = StandardNormal.sample(rng);
                (c as f64 + scale * g) as f32
            })
            .collect();
        if let Some(u) = normalize(&v) {
            return u;
        }
    }
}

fn combine(a: &[f32], wa: f64, b: &[f32], wb: f64) -> Vec<f32> {
    let v: Vec<f32> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (wa * x as f64 + wb * y as f64) as f32)
        .collect();
    normalize(&v).expect("orthogonal unit vectors combine to a non-zero vector")
}

/// Builds a world. Identical params give identical worlds.
pub fn generate_world(params: &WorldParams) -> Result<SyntheticWorld, SimError> {
    params.validate()?;
    let d = params.dimension;
    let rho = params
        .rho
        .unwrap_or_else(|| rho_for_expected(d, params.corpus_size, params.expected_relevant));

    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(params.corpus_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(params.seed, "corpus"));
    for _ in 0..params.corpus_size {
        rows.push(gaussian_unit(&mut rng, d));
    }

    let topic_root = seeds::derive(params.seed, "topics");
    let mut topics = Vec::with_capacity(params.topics);
    for i in 0..params.topics {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_index(topic_root, i as u64));
        let intent = gaussian_unit(&mut rng, d);
        let query = match params.kind {
            WorldKind::Standard => {
                let w = orthogonal_unit(&mut rng, &[&intent]);
                combine(&intent, params.drift.cos(), &w, params.drift.sin())
            }
            WorldKind::TwoCluster => {
                let a = orthogonal_unit(&mut rng, &[&intent]);
                let lure = params.lure;
                let q = combine(&a, lure, &intent, (1.0 - lure * lure).sqrt());
                for _ in 0..params.distractors {
                    rows.push(around(&mut rng, &a, params.spread));
                }
                for _ in 0..params.cluster {
                    rows.push(around(&mut rng, &intent, params.spread));
                }
                q
            }
        };
        topics.push(SimTopic {
            id: format!("t{i:03}"),
            intent,
            query,
            relevant: 0,
        });
    }

    let width = rows.len().to_string().len().max(6);
    let ids: Vec<CandidateId> = (0..rows.len())
        .map(|r| CandidateId::new(format!("v{r:0width$}")).expect("non-empty id"))
        .collect();

    let mut qrels = Qrels::new();
    for topic in &mut topics {
        for (row, v) in rows.iter().enumerate() {
            if dot(v, &topic.intent) as f64 >= rho {
                qrels.insert(QrelsRecord {
                    topic: topic.id.clone(),
                    stratum: "0".into(),
                    candidate: ids[row].clone(),
                    grade: 1,
                })?;
                topic.relevant += 1;
            }
        }
        if topic.relevant == 0 {
            return Err(SimError::Infeasible {
                topic: topic.id.clone(),
                rho,
            });
        }
    }

    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let index = CorpusIndex::new(ids, d, flat).map_err(|e| SimError::InvalidParams(e.to_string()))?;
    Ok(SyntheticWorld {
        params: params.clone(),
        rho,
        index: Arc::new(index),
        qrels: Arc::new(qrels),
        topics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: WorldKind) -> WorldParams {
        WorldParams {
            kind,
            dimension: 16,
            corpus_size: 2000,
            topics: 4,
            expected_relevant: 40.0,
            distractors: 100,
            cluster: 20,
            seed: 5,
            ..WorldParams::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        for kind in [WorldKind::Standard, WorldKind::TwoCluster] {
            let a = generate_world(&small(kind)).unwrap();
            let b = generate_world(&small(kind)).unwrap();
            assert_eq!(a.index.ids(), b.index.ids());
            assert_eq!(a.topics, b.topics);
            assert_eq!(a.qrels, b.qrels);
            assert!((0..a.index.len()).all(|i| a.index.row(i) == b.index.row(i)));
            let c = generate_world(&small(kind).with_seed(6)).unwrap();
            assert_ne!(a.topics, c.topics);
        }
    }

    #[test]
    fn rho_near_one_is_infeasible() {
        let params = WorldParams {
            rho: Some(0.999),
            ..small(WorldKind::Standard)
        };
        assert!(matches!(generate_world(&params), Err(SimError::Infeasible { .. })));
    }

    #[test]
    fn invalid_params_are_rejected() {
        for p in [
            WorldParams { dimension: 1, ..small(WorldKind::Standard) },
            WorldParams { rho: Some(1.0), ..small(WorldKind::Standard) },
            WorldParams { topics: 0, ..small(WorldKind::Standard) },
            WorldParams { lure: 1.5, ..small(WorldKind::TwoCluster) },
        ] {
            assert!(matches!(generate_world(&p), Err(SimError::InvalidParams(_))), "{p:?}");
        }
    }

    #[test]
    fn cosine_tail_matches_closed_forms() {
        // d = 3: the cosine is uniform on [-1, 1].
        for rho in [-0.5, 0.0, 0.3, 0.9] {
            assert!((cosine_tail(3, rho) - (1.0 - rho) / 2.0).abs() < 1e-9);
        }
        // Symmetry about zero in any dimension.
        assert!((cosine_tail(64, 0.0) - 0.5).abs() < 1e-9);
        let rho = rho_for_expected(64, 10_000, 100.0);
        assert!((cosine_tail(64, rho) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn relevant_counts_land_near_target() {
        let world = generate_world(&WorldParams {
            seed: 11,
            ..WorldParams::default()
        })
        .unwrap();
        let counts = world.relevant_counts();
        assert_eq!(counts.len(), 30);
        assert!(counts.iter().all(|&c| (50..=200).contains(&c)), "{counts:?}");
    }

    #[test]
    fn vectors_are_unit_and_queries_sit_where_planted() {
        let p = small(WorldKind::Standard);
        let world = generate_world(&p).unwrap();
        for i in 0..world.index.len() {
            let n = dot(world.index.row(i), world.index.row(i));
            assert!((n - 1.0).abs() < 1e-5);
        }
        for t in &world.topics {
            assert!((dot(&t.query, &t.intent) as f64 - p.drift.cos()).abs() < 1e-5);
            assert_eq!(world.qrels.relevant_count(&t.id), t.relevant);
        }

        let p = small(WorldKind::TwoCluster);
        let world = generate_world(&p).unwrap();
        assert_eq!(world.index.len(), 2000 + 4 * 120);
        for t in &world.topics {
            let expected = (1.0 - p.lure * p.lure).sqrt();
            assert!((dot(&t.query, &t.intent) as f64 - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn spec_file_round_trips() {
        let p = WorldParams {
            rho: Some(0.3),
            ..WorldParams::two_cluster()
        };
        let text = p.to_spec_string();
        assert!(text.contains("kind = \"two_cluster\""));
        assert_eq!(WorldParams::parse(&text).unwrap(), p);
        let partial = WorldParams::parse("dimension = 8\ntopics = 2\n").unwrap();
        assert_eq!(partial.dimension, 8);
        assert_eq!(partial.corpus_size, 10_000);
        assert!(WorldParams::parse("dimensions = 8").is_err());
    }
}
