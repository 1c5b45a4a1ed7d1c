//! Versioned model container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "CORF" | version u32 | header len u32 | header JSON | body len u64 | body JSON | crc32 u32
//! ```
//!
//! The checksum covers every byte before the footer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codata::CoDataFit;
use crate::error::{CorfError, Result};
use crate::forest::{oob_probabilities, predict_forest, Forest, Matrix, PrimaryDataset, SamplingWeights};
use crate::io::preprocess::Preprocessing;
use crate::io::table::LabeledMatrix;
use crate::pipeline::{CoDataSummary, CorfResult, Performance};

pub const MAGIC: &[u8; 4] = b"CORF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Variable ids in forest column order (after preprocessing).
    pub variable_ids: Vec<String>,
    pub preprocessing: Preprocessing,
    pub seed: u64,
    pub gamma: f64,
    pub gamma_scores: Vec<(f64, f64)>,
    pub degraded: bool,
    pub uniform_fallback: bool,
    pub base_oob: Performance,
    pub corf_oob: Performance,
    pub labels: Vec<u8>,
    pub oob_base: Vec<Option<f64>>,
    pub oob_corf: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    /// The co-data moderated forest used for prediction.
    pub forest: Forest,
    /// Split counts of the base forest.
    pub base_split_counts: Vec<u64>,
    pub codata: Option<CoDataSummary>,
    pub p_hat: Vec<f64>,
    pub weights: SamplingWeights,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    created_by: String,
    n_variables: usize,
    ntree: usize,
    seed: u64,
}

impl ModelArtifact {
    pub fn from_result(
        result: &CorfResult,
        data: &PrimaryDataset,
        preprocessing: Preprocessing,
        seed: u64,
    ) -> Result<Self> {
        let oob_base = oob_probabilities(&result.base_forest, data)?.votes;
        let oob_corf = oob_probabilities(&result.corf_forest, data)?.votes;
        Ok(ModelArtifact {
            format_version: FORMAT_VERSION,
            forest: result.corf_forest.clone(),
            base_split_counts: result.base_forest.split_counts.clone(),
            codata: result.codata.clone(),
            p_hat: result.p_hat.clone(),
            weights: result.weights.clone(),
            metadata: TrainingMetadata {
                variable_ids: data.variable_ids().to_vec(),
                preprocessing,
                seed,
                gamma: result.chosen_gamma,
                gamma_scores: result.gamma_scores.clone(),
                degraded: result.degraded,
                uniform_fallback: result.uniform_fallback,
                base_oob: result.base_oob,
                corf_oob: result.corf_oob,
                labels: data.y().to_vec(),
                oob_base,
                oob_corf,
            },
        })
    }

    pub fn codata_fit(&self) -> Option<&CoDataFit> {
        match &self.codata {
            Some(CoDataSummary::Model(fit)) => Some(fit),
            _ => None,
        }
    }

    /// Class-1 vote fractions for a matrix already in training column layout.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        predict_forest(&self.forest, x)
    }

    /// Aligns raw columns by id, replays preprocessing and predicts.
    ///
    /// Training variables absent from `m` are an error unless `allow_subset`,
    /// in which case they are filled with their raw training mean.
    pub fn predict_labeled(&self, m: &LabeledMatrix, allow_subset: bool) -> Result<Vec<f64>> {
        let pre = &self.metadata.preprocessing;
        let index: HashMap<&str, usize> =
            m.column_ids.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();
        let missing: Vec<&String> = pre
            .input_ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .collect();
        if let Some(first) = missing.first() {
            if !allow_subset {
                return Err(CorfError::invalid(format!(
                    "{} training variable(s) missing from the input, first '{first}' (use --allow-subset)",
                    missing.len()
                )));
            }
            log::warn!("{} training variable(s) missing; filled with training means", missing.len());
        }
        let n = m.values.nrows();
        let columns: Vec<Vec<f64>> = pre
            .input_ids
            .iter()
            .zip(&pre.input_means)
            .map(|(id, &mean)| match index.get(id.as_str()) {
                Some(&c) => m.values.column(c).to_vec(),
                None => vec![mean; n],
            })
            .collect();
        let x = pre.apply(&Matrix::from_columns(n, columns)?)?;
        self.predict(&x)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            created_by: format!("corf {}", env!("CARGO_PKG_VERSION")),
            n_variables: self.forest.n_variables,
            ntree: self.forest.ntree(),
            seed: self.metadata.seed,
        })
        .map_err(|e| CorfError::contract(format!("header encoding: {e}")))?;
        let body = serde_json::to_vec(self)
            .map_err(|e| CorfError::contract(format!("model encoding: {e}")))?;
        let mut out = Vec::with_capacity(24 + header.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = &bytes[..bytes.len().min(4)];
        if head != &MAGIC[..head.len()] {
            return Err(CorfError::NotCorfModel);
        }
        let mut r = Cursor { bytes, pos: 4 };
        if bytes.len() < 4 {
            return Err(CorfError::TruncatedContainer);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CorfError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        r.take(hlen)?;
        let blen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let blen = usize::try_from(blen).map_err(|_| CorfError::TruncatedContainer)?;
        let body_start = r.pos;
        r.take(blen)?;
        let payload_end = r.pos;
        let stored = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if r.pos != bytes.len() || crc32fast::hash(&bytes[..payload_end]) != stored {
            return Err(CorfError::CorruptContainer);
        }
        let artifact: ModelArtifact = serde_json::from_slice(&bytes[body_start..payload_end])
            .map_err(|_| CorfError::CorruptContainer)?;
        if artifact.format_version != version {
            return Err(CorfError::CorruptContainer);
        }
        Ok(artifact)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).ok_or(CorfError::TruncatedContainer)?;
        if end > self.bytes.len() {
            return Err(CorfError::TruncatedContainer);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn persist_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, artifact.to_bytes()?).map_err(|e| CorfError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CorfError::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codata::CoDataDesign;
    use crate::forest::ForestParams;
    use crate::pipeline::{run_corf, CoData, PipelineParams};
    use rand::{Rng, SeedableRng};

    fn artifact() -> (ModelArtifact, PrimaryDataset) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.gen::<f64>()).collect()).collect();
        let y = rows.iter().map(|r| u8::from(r[0] > 0.5)).collect();
        let data = PrimaryDataset::from_matrix(Matrix::from_rows(&rows).unwrap(), y).unwrap();
        let params = PipelineParams {
            forest: ForestParams {
                ntree: 50,
                seed: 2,
                ..ForestParams::default()
            },
            ..PipelineParams::default()
        };
        let r = run_corf(&data, &CoData::Model(CoDataDesign::intercept_only(6)), &params).unwrap();
        let a = ModelArtifact::from_result(&r, &data, Preprocessing::identity(&data), 2).unwrap();
        (a, data)
    }

    #[test]
    fn round_trip_reproduces_predictions() {
        let (a, _) = artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.corf");
        persist_model(&a, &path).unwrap();
        let b = load_model(&path).unwrap();
        assert_eq!(a, b);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..6).map(|_| rng.gen::<f64>()).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let pa = a.predict(&x).unwrap();
        let pb = b.predict(&x).unwrap();
        assert!(pa.iter().zip(&pb).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn container_errors_are_distinct() {
        let (a, _) = artifact();
        let bytes = a.to_bytes().unwrap();
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes[..bytes.len() / 2]),
            Err(CorfError::TruncatedContainer)
        ));
        assert!(matches!(ModelArtifact::from_bytes(&bytes[..2]), Err(CorfError::TruncatedContainer)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = ModelArtifact::from_bytes(&bad).unwrap_err();
        assert_eq!(e.to_string(), "not a CoRF model");
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x20;
        assert!(matches!(ModelArtifact::from_bytes(&flipped), Err(CorfError::CorruptContainer)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            ModelArtifact::from_bytes(&v2),
            Err(CorfError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert_eq!(
            ModelArtifact::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err().to_string(),
            "truncated container"
        );
    }

    #[test]
    fn labeled_prediction_aligns_by_id() {
        let (a, data) = artifact();
        let mut order: Vec<usize> = (0..6).collect();
        order.reverse();
        let m = LabeledMatrix {
            row_ids: data.sample_ids().to_vec(),
            column_ids: order.iter().map(|&j| data.variable_ids()[j].clone()).collect(),
            values: data.x().select_columns(&order),
        };
        assert_eq!(a.predict_labeled(&m, false).unwrap(), a.predict(data.x()).unwrap());
        let partial = LabeledMatrix {
            row_ids: m.row_ids.clone(),
            column_ids: m.column_ids[..5].to_vec(),
            values: m.values.select_columns(&[0, 1, 2, 3, 4]),
        };
        assert!(a.predict_labeled(&partial, false).is_err());
        assert_eq!(a.predict_labeled(&partial, true).unwrap().len(), data.n_samples());
    }
}
