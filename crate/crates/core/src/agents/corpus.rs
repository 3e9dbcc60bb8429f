use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::domain::{CandidateId, DomainError};

/// First four bytes of a matrix file.
pub const MATRIX_MAGIC: [u8; 4] = *b"MAGV";
pub const MATRIX_VERSION: u32 = 1;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("{ids} ids but {vectors} vectors")]
    CountMismatch { ids: usize, vectors: usize },
    #[error("vector for {id} has norm {norm}, expected 1")]
    NotUnit { id: CandidateId, norm: f64 },
    #[error("vector for {0} is zero or not finite")]
    Degenerate(CandidateId),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Unit-normalized candidate embeddings stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    ids: Vec<CandidateId>,
    dimension: usize,
    vectors: Vec<f32>,
    positions: HashMap<CandidateId, usize>,
}

impl CorpusIndex {
    /// Builds an index from vectors that must already be unit length.
    pub fn new(ids: Vec<CandidateId>, dimension: usize, vectors: Vec<f32>) -> Result<Self, CorpusError> {
        Self::build(ids, dimension, vectors, false)
    }

    /// Builds an index, scaling every vector to unit length.
    pub fn normalized(
        ids: Vec<CandidateId>,
        dimension: usize,
        vectors: Vec<f32>,
    ) -> Result<Self, CorpusError> {
        Self::build(ids, dimension, vectors, true)
    }

    fn build(
        ids: Vec<CandidateId>,
        dimension: usize,
        mut vectors: Vec<f32>,
        normalize: bool,
    ) -> Result<Self, CorpusError> {
        if dimension == 0 {
            return Err(CorpusError::ZeroDimension);
        }
        if vectors.len() != ids.len() * dimension {
            return Err(CorpusError::CountMismatch {
                ids: ids.len(),
                vectors: vectors.len() / dimension,
            });
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(DomainError::DuplicateCandidate(id.clone()).into());
            }
            let row = &mut vectors[i * dimension..(i + 1) * dimension];
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(CorpusError::Degenerate(id.clone()));
            }
            if normalize {
                row.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
            } else if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(CorpusError::NotUnit {
                    id: id.clone(),
                    norm,
                });
            }
        }
        Ok(Self {
            ids,
            dimension,
            vectors,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn ids(&self) -> &[CandidateId] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &CandidateId {
        &self.ids[row]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Consecutive rows as one flat slice.
    pub fn rows(&self, rows: std::ops::Range<usize>) -> &[f32] {
        &self.vectors[rows.start * self.dimension..rows.end * self.dimension]
    }

    pub fn position(&self, id: &CandidateId) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn vector(&self, id: &CandidateId) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    /// Reads a matrix file and its companion id list (one id per line).
    pub fn load_matrix(matrix: impl AsRef<Path>, id_list: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let (matrix, id_list) = (matrix.as_ref(), id_list.as_ref());
        let bad = |reason: String| CorpusError::Format {
            path: matrix.to_path_buf(),
            reason,
        };
        let mut reader = BufReader::new(std::fs::File::open(matrix).map_err(io_err(matrix))?);
        let mut header = [0u8; 20];
        reader.read_exact(&mut header).map_err(|_| bad("truncated header".into()))?;
        if header[0..4] != MATRIX_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != MATRIX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dimension = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let floats = count
            .checked_mul(dimension)
            .ok_or_else(|| bad("count x dimension overflows".into()))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(io_err(matrix))?;
        if bytes.len() != floats * 4 {
            return Err(bad(format!(
                "expected {} bytes of vectors, found {}",
                floats * 4,
                bytes.len()
            )));
        }
        let vectors: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();

        let file = std::fs::File::open(id_list).map_err(io_err(id_list))?;
        let mut ids = Vec::with_capacity(count);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(id_list))?;
            if line.is_empty() {
                continue;
            }
            ids.push(CandidateId::new(line).map_err(|e| CorpusError::Format {
                path: id_list.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })?);
        }
        Self::new(ids, dimension, vectors)
    }

    /// Writes the matrix file and id list read by [`CorpusIndex::load_matrix`].
    pub fn save_matrix(&self, matrix: impl AsRef<Path>, id_list: impl AsRef<Path>) -> Result<(), CorpusError> {
        let (matrix, id_list) = (matrix.as_ref(), id_list.as_ref());
        let mut w = BufWriter::new(std::fs::File::create(matrix).map_err(io_err(matrix))?);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(matrix));
        write(&MATRIX_MAGIC)?;
        write(&MATRIX_VERSION.to_le_bytes())?;
        write(&(self.len() as u64).to_le_bytes())?;
        write(&(self.dimension as u32).to_le_bytes())?;
        for x in &self.vectors {
            write(&x.to_le_bytes())?;
        }
        w.flush().map_err(io_err(matrix))?;
        let mut ids = String::new();
        for id in &self.ids {
            ids.push_str(id.as_str());
            ids.push('\n');
        }
        std::fs::write(id_list, ids).map_err(io_err(id_list))
    }

    /// Loads every `<id>.vec` file in `dir` (whitespace-separated floats),
    /// ordered by id. Vectors are normalized on load.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "vec"))
            .collect();
        files.sort();
        let mut ids = Vec::with_capacity(files.len());
        let mut vectors = Vec::new();
        let mut dimension = None;
        for path in &files {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let row = text
                .split_whitespace()
                .map(str::parse::<f32>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CorpusError::Format {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            match dimension {
                None => dimension = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(CorpusError::Format {
                        path: path.clone(),
                        reason: format!("{} values where {d} were expected", row.len()),
                    })
                }
                Some(_) => {}
            }
            ids.push(CandidateId::new(stem)?);
            vectors.extend(row);
        }
        Self::normalized(ids, dimension.unwrap_or(0), vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> CandidateId {
        CandidateId::new(s).unwrap()
    }

    #[test]
    fn rejects_non_unit_vectors_unless_normalizing() {
        let ids = vec![id("a"), id("b")];
        let raw = vec![3.0, 4.0, 0.0, 2.0];
        assert!(matches!(
            CorpusIndex::new(ids.clone(), 2, raw.clone()),
            Err(CorpusError::NotUnit { .. })
        ));
        let index = CorpusIndex::normalized(ids, 2, raw).unwrap();
        assert_eq!(index.row(0), &[0.6, 0.8]);
        assert_eq!(index.vector(&id("b")).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_shape_and_duplicate_errors() {
        assert!(matches!(
            CorpusIndex::new(vec![id("a")], 0, vec![]),
            Err(CorpusError::ZeroDimension)
        ));
        assert!(matches!(
            CorpusIndex::new(vec![id("a")], 2, vec![1.0]),
            Err(CorpusError::CountMismatch { .. })
        ));
        assert!(CorpusIndex::new(vec![id("a"), id("a")], 1, vec![1.0, 1.0]).is_err());
        assert!(matches!(
            CorpusIndex::normalized(vec![id("z")], 2, vec![0.0, 0.0]),
            Err(CorpusError::Degenerate(_))
        ));
    }

    #[test]
    fn matrix_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let index = CorpusIndex::normalized(
            vec![id("v1"), id("v2"), id("v3")],
            3,
            vec![1.0, 2.0, 2.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.25],
        )
        .unwrap();
        let (m, i) = (dir.path().join("c.bin"), dir.path().join("c.ids"));
        index.save_matrix(&m, &i).unwrap();
        let bytes = std::fs::read(&m).unwrap();
        assert_eq!(&bytes[..4], b"MAGV");
        assert_eq!(bytes.len(), 20 + 9 * 4);
        assert_eq!(CorpusIndex::load_matrix(&m, &i).unwrap(), index);
    }

    #[test]
    fn truncated_matrix_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (m, i) = (dir.path().join("c.bin"), dir.path().join("c.ids"));
        let mut bytes = MATRIX_MAGIC.to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        std::fs::write(&m, bytes).unwrap();
        std::fs::write(&i, "a\nb\n").unwrap();
        assert!(matches!(
            CorpusIndex::load_matrix(&m, &i),
            Err(CorpusError::Format { .. })
        ));
    }

    #[test]
    fn directory_fixture_loads_sorted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.vec"), "0 2\n").unwrap();
        std::fs::write(dir.path().join("a.vec"), "3 4").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let index = CorpusIndex::load_dir(dir.path()).unwrap();
        assert_eq!(index.ids(), &[id("a"), id("b")]);
        assert_eq!(index.row(0), &[0.6, 0.8]);
    }
}
