//! Seeded synthetic benchmark: standard normal primary data in which the
//! informative variables form a weakly correlated module driving a logistic
//! response, plus co-data of controllable quality.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codata::{CoDataColumn, CoDataDesign, Monotonicity};
use crate::error::{CorfError, Result};
use crate::forest::{Matrix, PrimaryDataset};

/// Pairwise correlation among informative columns.
pub const MODULE_CORRELATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub n_informative: usize,
    /// Logistic slope on the standardized mean of the informative columns.
    pub effect_size: f64,
    /// Probability that the co-data flag agrees with the truth.
    pub codata_quality: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: PrimaryDataset,
    /// Columns `flag` (nominal 0/1) and `score` (continuous, increasing).
    pub design: CoDataDesign,
    /// Sorted indices of the informative variables.
    pub truth: Vec<usize>,
    pub flags: Vec<bool>,
    pub scores: Vec<f64>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let SyntheticSpec {
        n,
        p,
        n_informative: k,
        effect_size,
        codata_quality: q,
        seed,
    } = *spec;
    if n < 2 || p < 1 || k > p {
        return Err(CorfError::invalid(format!(
            "invalid synthetic dimensions n={n}, P={p}, informative={k}"
        )));
    }
    if !(0.0..=1.0).contains(&q) || !effect_size.is_finite() || effect_size < 0.0 {
        return Err(CorfError::invalid("codata_quality must lie in [0,1] and effect_size be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut truth = sample(&mut rng, p, k).into_vec();
    truth.sort_unstable();
    let mut is_true = vec![false; p];
    for &j in &truth {
        is_true[j] = true;
    }

    // informative columns load on a shared per-sample factor; the logit is
    // effect_size times the standardized mean of the informative columns
    let load = MODULE_CORRELATION.sqrt();
    let resid = (1.0 - MODULE_CORRELATION).sqrt();
    let mean_sd = (MODULE_CORRELATION + (1.0 - MODULE_CORRELATION) / k.max(1) as f64).sqrt();
    let mut columns = vec![vec![0.0; n]; p];
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let mut sum = 0.0;
        for (j, col) in columns.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            col[i] = if is_true[j] {
                let v = load * z + resid * e;
                sum += v;
                v
            } else {
                e
            };
        }
        let eta = if k > 0 { effect_size * sum / k as f64 / mean_sd } else { 0.0 };
        let prob = 1.0 / (1.0 + (-eta).exp());
        y.push(u8::from(rng.gen::<f64>() < prob));
    }

    let flags: Vec<bool> = is_true
        .iter()
        .map(|&t| if rng.gen::<f64>() < q { t } else { !t })
        .collect();
    let scores: Vec<f64> = flags
        .iter()
        .map(|&f| {
            let e: f64 = rng.sample(StandardNormal);
            f64::from(u8::from(f)) + (1.0 - q) * e
        })
        .collect();

    let data = PrimaryDataset::from_matrix(Matrix::from_columns(n, columns)?, y)?;
    let design = CoDataDesign::new(
        p,
        vec![
            CoDataColumn::indicator("flag", &flags)?,
            CoDataColumn::continuous("score", scores.clone(), Monotonicity::Increasing)?,
        ],
    )?;
    Ok(SyntheticData {
        data,
        design,
        truth,
        flags,
        scores,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CorfError::io(path, e))
}

impl SyntheticData {
    /// Writes `primary.csv`, `labels.csv`, `codata.csv`, `schema.json` and `truth.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CorfError::io(dir, e))?;
        let d = &self.data;
        let mut primary = String::from("sample");
        for id in d.variable_ids() {
            primary.push(',');
            primary.push_str(id);
        }
        primary.push('\n');
        for i in 0..d.n_samples() {
            primary.push_str(&d.sample_ids()[i]);
            for j in 0..d.n_variables() {
                primary.push(',');
                primary.push_str(&d.x().get(i, j).to_string());
            }
            primary.push('\n');
        }
        write_text(&dir.join("primary.csv"), &primary)?;

        let mut labels = String::from("sample,label\n");
        for (id, y) in d.sample_ids().iter().zip(d.y()) {
            labels.push_str(&format!("{id},{y}\n"));
        }
        write_text(&dir.join("labels.csv"), &labels)?;

        let mut codata = String::from("variable,flag,score\n");
        for (j, id) in d.variable_ids().iter().enumerate() {
            codata.push_str(&format!("{id},{},{}\n", u8::from(self.flags[j]), self.scores[j]));
        }
        write_text(&dir.join("codata.csv"), &codata)?;
        write_text(
            &dir.join("schema.json"),
            "{\n  \"columns\": [\n    {\"name\": \"flag\", \"kind\": \"nominal\"},\n    \
             {\"name\": \"score\", \"kind\": \"continuous\", \"monotonicity\": \"increasing\"}\n  ]\n}\n",
        )?;

        let mut truth = String::from("variable\n");
        for &j in &self.truth {
            truth.push_str(&d.variable_ids()[j]);
            truth.push('\n');
        }
        write_text(&dir.join("truth.csv"), &truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn spec(q: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: 20,
            p: 10_000,
            n_informative: 2_000,
            effect_size: 1.0,
            codata_quality: q,
            seed,
        }
    }

    #[test]
    fn perfect_quality_flags_truth() {
        let s = generate_synthetic(&spec(1.0, 3)).unwrap();
        let flagged: Vec<usize> = (0..s.flags.len()).filter(|&j| s.flags[j]).collect();
        assert_eq!(flagged, s.truth);
        assert!(s.scores.iter().zip(&s.flags).all(|(&v, &f)| v == f64::from(u8::from(f))));
    }

    #[test]
    fn half_quality_flag_is_independent_of_truth() {
        let s = generate_synthetic(&spec(0.5, 4)).unwrap();
        let mut table = [[0.0f64; 2]; 2];
        let mut truth = vec![false; s.flags.len()];
        for &j in &s.truth {
            truth[j] = true;
        }
        for (t, f) in truth.iter().zip(&s.flags) {
            table[usize::from(*t)][usize::from(*f)] += 1.0;
        }
        let total: f64 = table.iter().flatten().sum();
        let mut stat = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let e = (table[r][0] + table[r][1]) * (table[0][c] + table[1][c]) / total;
                stat += (table[r][c] - e).powi(2) / e;
            }
        }
        let p_value = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
        assert!(p_value > 0.001, "chi-square p = {p_value}");
    }

    #[test]
    fn reruns_are_byte_identical() {
        let small = SyntheticSpec {
            n: 15,
            p: 40,
            n_informative: 5,
            effect_size: 2.0,
            codata_quality: 0.8,
            seed: 9,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small).unwrap().write_to(a.path()).unwrap();
        generate_synthetic(&small).unwrap().write_to(b.path()).unwrap();
        for f in ["primary.csv", "labels.csv", "codata.csv", "schema.json", "truth.csv"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        // written files load back into the same data
        let d = crate::io::load_primary(a.path().join("primary.csv"), a.path().join("labels.csv")).unwrap();
        let s = generate_synthetic(&small).unwrap();
        assert_eq!(d.x(), s.data.x());
        assert_eq!(d.y(), s.data.y());
        let schema = crate::io::CoDataSchema::load(a.path().join("schema.json")).unwrap();
        let c = crate::io::load_codata(a.path().join("codata.csv"), &schema, d.variable_ids()).unwrap();
        let crate::pipeline::CoData::Model(design) = c else { panic!() };
        assert_eq!(design, s.design);
    }

    #[test]
    fn invalid_dimensions() {
        let mut s = spec(0.9, 1);
        s.n_informative = s.p + 1;
        assert!(generate_synthetic(&s).is_err());
    }
}
