use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::reparam::Direction;
use crate::error::{CorfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    None,
}

impl Monotonicity {
    pub fn direction(self) -> Option<Direction> {
        match self {
            Monotonicity::Increasing => Some(Direction::Increasing),
            Monotonicity::Decreasing => Some(Direction::Decreasing),
            Monotonicity::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Categorical co-data; the first level is the reference.
    Nominal { levels: Vec<String> },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnValues {
    Levels(Vec<usize>),
    Real(Vec<f64>),
}

/// One kind of side information, one entry per primary variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoDataColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub monotonicity: Monotonicity,
    pub values: ColumnValues,
}

impl CoDataColumn {
    pub fn nominal(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if levels.len() < 2 {
            return Err(CorfError::invalid(format!(
                "nominal co-data '{name}' needs at least two levels"
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c >= levels.len()) {
            return Err(CorfError::invalid(format!(
                "nominal co-data '{name}' has level code {c} beyond {} levels",
                levels.len()
            )));
        }
        Ok(CoDataColumn {
            name,
            kind: ColumnKind::Nominal { levels },
            monotonicity: Monotonicity::None,
            values: ColumnValues::Levels(codes),
        })
    }

    /// Binary indicator column with levels "0" and "1".
    pub fn indicator(name: impl Into<String>, flags: &[bool]) -> Result<Self> {
        Self::nominal(
            name,
            vec!["0".into(), "1".into()],
            flags.iter().map(|&f| usize::from(f)).collect(),
        )
    }

    /// Continuous column; `Monotonicity::None` gives a linear term,
    /// otherwise a monotone spline term.
    pub fn continuous(
        name: impl Into<String>,
        values: Vec<f64>,
        monotonicity: Monotonicity,
    ) -> Result<Self> {
        let name = name.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorfError::invalid(format!(
                "continuous co-data '{name}' has non-finite values"
            )));
        }
        Ok(CoDataColumn {
            name,
            kind: ColumnKind::Continuous,
            monotonicity,
            values: ColumnValues::Real(values),
        })
    }

    pub fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Levels(v) => v.len(),
            ColumnValues::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, ColumnKind::Continuous) && self.monotonicity != Monotonicity::None
    }

    fn validate(&self) -> Result<()> {
        match (&self.kind, &self.values) {
            (ColumnKind::Nominal { levels }, ColumnValues::Levels(codes)) => {
                if self.monotonicity != Monotonicity::None {
                    return Err(CorfError::invalid(format!(
                        "monotonicity declared on nominal column '{}'",
                        self.name
                    )));
                }
                if levels.len() < 2 || codes.iter().any(|&c| c >= levels.len()) {
                    return Err(CorfError::invalid(format!(
                        "nominal column '{}' has invalid levels",
                        self.name
                    )));
                }
                Ok(())
            }
            (ColumnKind::Continuous, ColumnValues::Real(v)) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(CorfError::invalid(format!(
                        "continuous column '{}' has non-finite values",
                        self.name
                    )));
                }
                Ok(())
            }
            _ => Err(CorfError::invalid(format!(
                "column '{}' kind does not match its values",
                self.name
            ))),
        }
    }
}

/// Variables-by-co-data design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoDataDesign {
    columns: Vec<CoDataColumn>,
    n_variables: usize,
}

impl CoDataDesign {
    pub fn new(n_variables: usize, columns: Vec<CoDataColumn>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &columns {
            c.validate()?;
            if c.len() != n_variables {
                return Err(CorfError::invalid(format!(
                    "co-data column '{}' has {} entries for {n_variables} variables",
                    c.name,
                    c.len()
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(CorfError::invalid(format!(
                    "duplicate co-data column '{}'",
                    c.name
                )));
            }
        }
        Ok(CoDataDesign {
            columns,
            n_variables,
        })
    }

    /// Design without co-data: the model reduces to an intercept.
    pub fn intercept_only(n_variables: usize) -> Self {
        CoDataDesign {
            columns: Vec::new(),
            n_variables,
        }
    }

    pub fn columns(&self) -> &[CoDataColumn] {
        &self.columns
    }

    pub fn n_variables(&self) -> usize {
        self.n_variables
    }

    /// Rows reordered so that new row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let cols = self
            .columns
            .iter()
            .map(|c| {
                let values = match &c.values {
                    ColumnValues::Levels(v) => ColumnValues::Levels(order.iter().map(|&i| v[i]).collect()),
                    ColumnValues::Real(v) => ColumnValues::Real(order.iter().map(|&i| v[i]).collect()),
                };
                CoDataColumn {
                    values,
                    ..c.clone()
                }
            })
            .collect();
        CoDataDesign::new(order.len(), cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let good = CoDataColumn::continuous("tau", vec![0.1, 0.2], Monotonicity::Increasing).unwrap();
        assert!(CoDataDesign::new(2, vec![good.clone(), good.clone()]).is_err());
        assert!(CoDataDesign::new(3, vec![good.clone()]).is_err());
        let mut bad = CoDataColumn::indicator("sig", &[true, false]).unwrap();
        bad.monotonicity = Monotonicity::Increasing;
        let err = CoDataDesign::new(2, vec![bad]).unwrap_err();
        assert!(err.to_string().contains("monotonicity declared on nominal"));
        assert!(CoDataColumn::nominal("one", vec!["a".into()], vec![0, 0]).is_err());
    }
}
