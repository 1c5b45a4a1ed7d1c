use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};

/// Exponent arguments are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

/// Maps unconstrained parameters to monotone spline coefficients.
///
/// `theta[l] = tt[0] + sign * sum_{m=1..=l} exp(tt[m])`, so consecutive
/// coefficients never move against `direction`.
pub fn sigma_reparam(theta_tilde: &[f64], direction: Direction) -> Result<Vec<f64>> {
    if theta_tilde.iter().any(|v| !v.is_finite()) {
        return Err(CorfError::contract("non-finite spline parameter"));
    }
    let Some((&first, rest)) = theta_tilde.split_first() else {
        return Ok(Vec::new());
    };
    let sign = direction.sign();
    let mut acc = first;
    let mut out = Vec::with_capacity(theta_tilde.len());
    out.push(acc);
    for &t in rest {
        acc += sign * t.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        out.push(acc);
    }
    Ok(out)
}
