//! Variance stabilization and standardization of the primary matrix.

use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};
use crate::forest::{Matrix, PrimaryDataset};

/// Elementwise `sqrt(x + 3/8)` for count-like data.
pub fn anscombe_transform(x: &Matrix) -> Result<Matrix> {
    if let Some(v) = x.iter().find(|v| **v < 0.0) {
        return Err(CorfError::invalid(format!(
            "Anscombe transform needs nonnegative entries, found {v}"
        )));
    }
    let mut out = x.clone();
    out.map_inplace(|v| (v + 0.375).sqrt());
    Ok(out)
}

/// Column centring and scaling fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Input columns retained, in order.
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    /// Sample standard deviation (`n - 1` denominator).
    pub sd: Vec<f64>,
    /// Constant input columns that were dropped.
    pub dropped: Vec<usize>,
}

impl Standardization {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(CorfError::invalid(format!("standardization needs n >= 2, got {n}")));
        }
        let mut s = Standardization {
            kept: Vec::new(),
            mean: Vec::new(),
            sd: Vec::new(),
            dropped: Vec::new(),
        };
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd > 0.0 && col.iter().any(|&v| v != col[0]) {
                s.kept.push(j);
                s.mean.push(mean);
                s.sd.push(sd);
            } else {
                s.dropped.push(j);
            }
        }
        if !s.dropped.is_empty() {
            log::warn!("dropped {} constant column(s) before standardizing", s.dropped.len());
        }
        if s.kept.is_empty() {
            return Err(CorfError::invalid("every column is constant"));
        }
        Ok(s)
    }

    /// Applies the stored parameters; `x` must have the training column layout.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let width = self.kept.len() + self.dropped.len();
        if x.ncols() != width {
            return Err(CorfError::contract(format!(
                "standardization fitted on {width} columns, got {}",
                x.ncols()
            )));
        }
        let columns = self
            .kept
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&j, (&m, &s))| x.column(j).iter().map(|v| (v - m) / s).collect())
            .collect();
        Matrix::from_columns(x.nrows(), columns)
    }
}

/// Standardized copy of `x` and the parameters that produced it.
pub fn standardize_columns(x: &Matrix) -> Result<(Matrix, Standardization)> {
    let s = Standardization::fit(x)?;
    let out = s.apply(x)?;
    Ok((out, s))
}

/// Preprocessing fitted on training data and replayed on new data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub anscombe: bool,
    pub standardize: Option<Standardization>,
    /// Raw input variable ids before any column was dropped.
    pub input_ids: Vec<String>,
    /// Raw training column means, used to fill absent variables.
    pub input_means: Vec<f64>,
}

impl Preprocessing {
    /// No transformation; records ids and means only.
    pub fn identity(data: &PrimaryDataset) -> Self {
        Self::fit(data, false, false).expect("identity preprocessing").1
    }

    /// Fits the requested steps on `data` and returns the transformed dataset.
    pub fn fit(data: &PrimaryDataset, anscombe: bool, standardize: bool) -> Result<(PrimaryDataset, Self)> {
        let mut x = if anscombe {
            anscombe_transform(data.x())?
        } else {
            data.x().clone()
        };
        let mut ids = data.variable_ids().to_vec();
        let standardize = if standardize {
            let (z, s) = standardize_columns(&x)?;
            x = z;
            ids = s.kept.iter().map(|&j| ids[j].clone()).collect();
            Some(s)
        } else {
            None
        };
        let pre = Preprocessing {
            anscombe,
            standardize,
            input_ids: data.variable_ids().to_vec(),
            input_means: (0..data.n_variables())
                .map(|j| data.x().column(j).iter().sum::<f64>() / data.n_samples() as f64)
                .collect(),
        };
        let out = PrimaryDataset::new(x, data.y().to_vec(), ids, data.sample_ids().to_vec())?;
        Ok((out, pre))
    }

    /// Replays the fitted steps on a matrix laid out like the training input.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let x = if self.anscombe {
            anscombe_transform(x)?
        } else {
            x.clone()
        };
        match &self.standardize {
            Some(s) => s.apply(&x),
            None => Ok(x),
        }
    }
}
