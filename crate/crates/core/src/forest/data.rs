use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};

/// Dense real matrix stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_columns(nrows: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = columns.len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != nrows {
                return Err(CorfError::contract(format!(
                    "column {j} has {} entries, expected {nrows}",
                    col.len()
                )));
            }
            data.extend(col);
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(CorfError::contract(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.nrows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.nrows + row] = value;
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.nrows..(col + 1) * self.nrows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.nrows..(col + 1) * self.nrows]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.ncols).map(|j| self.get(row, j)).collect()
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.ncols);
        for j in 0..self.ncols {
            let src = self.column(j);
            let dst = out.column_mut(j);
            for (k, &i) in rows.iter().enumerate() {
                dst[k] = src[i];
            }
        }
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for &j in cols {
            data.extend_from_slice(self.column(j));
        }
        Matrix {
            nrows: self.nrows,
            ncols: cols.len(),
            data,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// Samples-by-variables design with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryDataset {
    x: Matrix,
    y: Vec<u8>,
    variable_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl PrimaryDataset {
    pub fn new(
        x: Matrix,
        y: Vec<u8>,
        variable_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n < 2 {
            return Err(CorfError::invalid(format!("need at least 2 samples, got {n}")));
        }
        if p < 1 {
            return Err(CorfError::invalid("need at least one variable"));
        }
        if y.len() != n {
            return Err(CorfError::contract(format!(
                "{} labels for {n} samples",
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(CorfError::invalid(format!("label {bad} is not 0/1")));
        }
        if variable_ids.len() != p || sample_ids.len() != n {
            return Err(CorfError::contract("id vectors do not match matrix shape"));
        }
        for j in 0..p {
            if let Some(i) = x.column(j).iter().position(|v| !v.is_finite()) {
                return Err(CorfError::invalid(format!(
                    "non-finite value at ({},{})",
                    sample_ids[i], variable_ids[j]
                )));
            }
        }
        let mut seen = HashSet::with_capacity(p);
        for id in &variable_ids {
            if !seen.insert(id.as_str()) {
                return Err(CorfError::invalid(format!("duplicate variable id '{id}'")));
            }
        }
        Ok(PrimaryDataset {
            x,
            y,
            variable_ids,
            sample_ids,
        })
    }

    /// Dataset with generated ids `v0..`, `s0..`.
    pub fn from_matrix(x: Matrix, y: Vec<u8>) -> Result<Self> {
        let vids = (0..x.ncols()).map(|j| format!("v{j}")).collect();
        let sids = (0..x.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(x, y, vids, sids)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_variables(&self) -> usize {
        self.x.ncols()
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - ones, ones]
    }

    /// Restriction to a subset of samples (order preserved as given).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        PrimaryDataset::new(
            self.x.select_rows(rows),
            rows.iter().map(|&i| self.y[i]).collect(),
            self.variable_ids.clone(),
            rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        )
    }

    /// Same data with classes 0 and 1 swapped.
    pub fn flipped_labels(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.y {
            *v = 1 - *v;
        }
        out
    }
}
