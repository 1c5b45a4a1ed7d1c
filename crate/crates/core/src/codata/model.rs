//! Penalized quasi-binomial regression of split frequencies on co-data.
//!
//! Each variable's split count `V_j` out of `K` total splits is modelled
//! with a logit link. Nominal co-data enter through treatment dummies,
//! continuous co-data without a declared direction enter linearly, and
//! continuous co-data with a direction enter through a monotone B-spline
//! whose coefficients are cumulative sums of exponentials. The first spline
//! parameter is pinned to zero because the basis sums to one and would
//! otherwise duplicate the intercept.
//!
//! Parameters are estimated by Fisher scoring on the penalized binomial
//! log-likelihood with step halving, escalating to Levenberg damping when
//! halving stalls. Smoothing weights are picked per spline from a grid by a
//! quasi-AIC. The dispersion is reported but does not affect the fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{build_bspline_basis, SplineBasis};
use super::design::{CoDataDesign, ColumnKind, ColumnValues, Monotonicity};
use super::reparam::{sigma_reparam, Direction, EXP_CLAMP};
use crate::error::{CorfError, Diagnostics, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    /// Basis functions per spline.
    pub q: usize,
    pub degree: usize,
    pub lambda_grid: Vec<f64>,
    pub max_iterations: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            q: 10,
            degree: 3,
            lambda_grid: (-2..=4).map(|k| 10f64.powi(k)).collect(),
            max_iterations: 200,
        }
    }
}

/// How one design column enters the fitted linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedTerm {
    Nominal {
        column: String,
        reference: usize,
        /// `(level code, coefficient)` for each non-reference level seen in training.
        effects: Vec<(usize, f64)>,
    },
    Linear {
        column: String,
        coefficient: f64,
    },
    Smooth {
        column: String,
        smooth: usize,
    },
    Dropped {
        column: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    pub column: String,
    pub direction: Direction,
    /// Basis without its construction-time evaluation matrix.
    pub basis: SplineBasis,
    /// Unconstrained parameters; the first is fixed at zero.
    pub theta_tilde: Vec<f64>,
    /// Monotone coefficients produced from `theta_tilde`.
    pub theta: Vec<f64>,
    pub lambda: f64,
    /// `(lambda, criterion)` for every grid value tried in the final sweep.
    pub lambda_scores: Vec<(f64, f64)>,
}

impl SmoothFit {
    pub fn value(&self, x: f64) -> f64 {
        self.basis
            .evaluate(x)
            .iter()
            .zip(&self.theta)
            .map(|(b, t)| b * t)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub monotonicity: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoDataFit {
    pub alpha0: f64,
    pub terms: Vec<FittedTerm>,
    pub smooths: Vec<SmoothFit>,
    /// Pearson dispersion estimate.
    pub tau: f64,
    pub p_hat: Vec<f64>,
    pub total_splits: u64,
    pub edf: f64,
    pub criterion: f64,
    pub diagnostics: Diagnostics,
    pub schema: Vec<ColumnSchema>,
}

impl CoDataFit {
    /// Named coefficients of the nominal and linear terms.
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                FittedTerm::Nominal {
                    column, effects, ..
                } => {
                    let levels = self.levels_of(column);
                    for &(code, a) in effects {
                        let label = levels
                            .and_then(|l| l.get(code).cloned())
                            .unwrap_or_else(|| code.to_string());
                        out.push((format!("{column}={label}"), a));
                    }
                }
                FittedTerm::Linear {
                    column,
                    coefficient,
                } => out.push((column.clone(), *coefficient)),
                _ => {}
            }
        }
        out
    }

    fn levels_of(&self, column: &str) -> Option<&Vec<String>> {
        self.schema.iter().find(|s| s.name == column).and_then(|s| match &s.kind {
            ColumnKind::Nominal { levels } => Some(levels),
            ColumnKind::Continuous => None,
        })
    }

    /// Fitted smooth and the reference-level probability on a regular grid.
    ///
    /// The probability holds every other term at its reference: nominal
    /// columns at the reference level, linear columns at zero and other
    /// smooths at their lower boundary (where they are zero).
    pub fn smooth_curve(&self, smooth: usize, n_points: usize) -> Vec<CurvePoint> {
        let s = &self.smooths[smooth];
        let (lo, hi) = (s.basis.lower, s.basis.upper);
        (0..n_points)
            .map(|k| {
                let x = if n_points == 1 {
                    lo
                } else {
                    lo + (hi - lo) * k as f64 / (n_points - 1) as f64
                };
                let f = s.value(x);
                CurvePoint {
                    x,
                    f,
                    p: inv_logit(self.alpha0 + f),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub f: f64,
    pub p: f64,
}

#[inline]
fn inv_logit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Layout of one design column in the parameter vector.
#[derive(Debug, Clone)]
enum WorkTerm {
    Nominal {
        column: usize,
        reference: usize,
        /// level codes with a dummy, in parameter order
        levels: Vec<usize>,
        offset: usize,
    },
    Linear {
        column: usize,
        offset: usize,
    },
    Smooth {
        column: usize,
        smooth: usize,
    },
    Dropped {
        column: usize,
    },
}

#[derive(Debug, Clone)]
struct WorkSmooth {
    offset: usize,
    sign: f64,
    basis: SplineBasis,
    /// `cum[m][j] = sum_{l > m} B_l(x_j)`, one column per free parameter.
    cum: Vec<Vec<f64>>,
    /// Second-difference penalty over the free parameters.
    penalty: DMatrix<f64>,
}

/// Penalized binomial pseudo-log-likelihood of split counts given co-data.
#[derive(Debug, Clone)]
pub struct PenalizedLikelihood {
    counts: Vec<f64>,
    total: f64,
    /// Columns of the linear part: intercept, dummies, linear co-data.
    fixed: Vec<Vec<f64>>,
    smooths: Vec<WorkSmooth>,
    terms: Vec<WorkTerm>,
    lambdas: Vec<f64>,
    n_params: usize,
}

fn second_difference_penalty(m: usize) -> DMatrix<f64> {
    if m < 3 {
        return DMatrix::zeros(m, m);
    }
    let mut d = DMatrix::zeros(m - 2, m);
    for r in 0..m - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Canonical relabeling of a nominal column: codes renumbered by first appearance.
fn partition_signature(codes: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    codes
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

impl PenalizedLikelihood {
    /// Sets up the objective. `lambdas` has one entry per monotone smooth.
    pub fn new(
        counts: &[u64],
        design: &CoDataDesign,
        settings: &ModelSettings,
        lambdas: &[f64],
    ) -> Result<Self> {
        let p = counts.len();
        if design.n_variables() != p {
            return Err(CorfError::contract(format!(
                "design has {} variables, counts have {p}",
                design.n_variables()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(CorfError::EmptyForest);
        }

        let mut fixed = vec![vec![1.0; p]];
        let mut smooths = Vec::new();
        let mut terms = Vec::new();
        let mut seen_partitions: Vec<Vec<usize>> = Vec::new();
        let mut smooth_specs = Vec::new();

        for (ci, col) in design.columns().iter().enumerate() {
            match (&col.values, col.monotonicity.direction()) {
                (ColumnValues::Levels(codes), _) => {
                    let sig = partition_signature(codes);
                    let mut present: Vec<usize> = codes.clone();
                    present.sort_unstable();
                    present.dedup();
                    if present.len() < 2 {
                        log::warn!("nominal co-data '{}' has a single observed level; dropping", col.name);
                        terms.push(WorkTerm::Dropped { column: ci });
                        continue;
                    }
                    if seen_partitions.contains(&sig) {
                        log::warn!("nominal co-data '{}' duplicates an earlier column; dropping", col.name);
                        terms.push(WorkTerm::Dropped { column: ci });
                        continue;
                    }
                    seen_partitions.push(sig);
                    let offset = fixed.len();
                    for &lvl in &present[1..] {
                        fixed.push(codes.iter().map(|&c| f64::from(u8::from(c == lvl))).collect());
                    }
                    terms.push(WorkTerm::Nominal {
                        column: ci,
                        reference: present[0],
                        levels: present[1..].to_vec(),
                        offset,
                    });
                }
                (ColumnValues::Real(x), None) => {
                    if x.iter().all(|&v| v == x[0]) {
                        log::warn!("linear co-data '{}' is constant; dropping", col.name);
                        terms.push(WorkTerm::Dropped { column: ci });
                        continue;
                    }
                    terms.push(WorkTerm::Linear {
                        column: ci,
                        offset: fixed.len(),
                    });
                    fixed.push(x.clone());
                }
                (ColumnValues::Real(x), Some(dir)) => {
                    let basis = build_bspline_basis(x, settings.q, settings.degree).map_err(|e| match e {
                        CorfError::DegenerateCoData(_) => CorfError::DegenerateCoData(col.name.clone()),
                        other => other,
                    })?;
                    terms.push(WorkTerm::Smooth {
                        column: ci,
                        smooth: smooth_specs.len(),
                    });
                    smooth_specs.push((basis, dir));
                }
            }
        }
        if lambdas.len() != smooth_specs.len() {
            return Err(CorfError::contract(format!(
                "{} smoothing weights for {} smooths",
                lambdas.len(),
                smooth_specs.len()
            )));
        }

        let mut offset = fixed.len();
        for (basis, dir) in smooth_specs {
            let q = basis.q;
            let cum = (1..q)
                .map(|m| {
                    basis
                        .evaluation
                        .iter()
                        .map(|row| row[m..].iter().sum())
                        .collect()
                })
                .collect();
            smooths.push(WorkSmooth {
                offset,
                sign: dir.sign(),
                basis,
                cum,
                penalty: second_difference_penalty(q - 1),
            });
            offset += q - 1;
        }

        Ok(PenalizedLikelihood {
            counts: counts.iter().map(|&c| c as f64).collect(),
            total: total as f64,
            fixed,
            smooths,
            terms,
            lambdas: lambdas.to_vec(),
            n_params: offset,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_smooths(&self) -> usize {
        self.smooths.len()
    }

    fn set_lambdas(&mut self, lambdas: &[f64]) {
        self.lambdas.copy_from_slice(lambdas);
    }

    /// Intercept at the logit of the mean proportion, everything else zero.
    pub fn initial_params(&self) -> Vec<f64> {
        let mean = 1.0 / self.counts.len() as f64;
        let mut b = vec![0.0; self.n_params];
        b[0] = (mean / (1.0 - mean)).ln();
        b
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.counts.len();
        let mut eta = vec![0.0; p];
        for (f, col) in self.fixed.iter().enumerate() {
            let b = beta[f];
            if b != 0.0 {
                for j in 0..p {
                    eta[j] += b * col[j];
                }
            }
        }
        for s in &self.smooths {
            for (m, col) in s.cum.iter().enumerate() {
                let w = s.sign * beta[s.offset + m].clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                for j in 0..p {
                    eta[j] += w * col[j];
                }
            }
        }
        eta
    }

    fn penalty_value(&self, beta: &[f64]) -> f64 {
        self.smooths
            .iter()
            .zip(&self.lambdas)
            .map(|(s, &lam)| {
                let th = DVector::from_column_slice(&beta[s.offset..s.offset + s.cum.len()]);
                0.5 * lam * (th.transpose() * &s.penalty * &th)[(0, 0)]
            })
            .sum()
    }

    fn log_lik_from_eta(&self, eta: &[f64]) -> f64 {
        // sum V eta - K log(1 + e^eta), stable form
        eta.iter()
            .zip(&self.counts)
            .map(|(&e, &v)| {
                let log1pexp = if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                };
                v * e - self.total * log1pexp
            })
            .sum()
    }

    /// Penalized pseudo-log-likelihood (to be maximized).
    pub fn value(&self, beta: &[f64]) -> f64 {
        self.log_lik_from_eta(&self.linear_predictor(beta)) - self.penalty_value(beta)
    }

    /// Column `k` of the Jacobian of the linear predictor.
    fn jacobian_column(&self, beta: &[f64], k: usize) -> Vec<f64> {
        if k < self.fixed.len() {
            return self.fixed[k].clone();
        }
        let s = self
            .smooths
            .iter()
            .rev()
            .find(|s| s.offset <= k)
            .expect("smooth parameter");
        let m = k - s.offset;
        let w = s.sign * beta[k].clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        s.cum[m].iter().map(|c| w * c).collect()
    }

    fn jacobian(&self, beta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_params)
            .map(|k| self.jacobian_column(beta, k))
            .collect()
    }

    fn penalty_gradient_into(&self, beta: &[f64], g: &mut [f64]) {
        for (s, &lam) in self.smooths.iter().zip(&self.lambdas) {
            let n = s.cum.len();
            let th = DVector::from_column_slice(&beta[s.offset..s.offset + n]);
            let pg = &s.penalty * th * lam;
            for m in 0..n {
                g[s.offset + m] -= pg[m];
            }
        }
    }

    /// Analytic gradient of [`value`](Self::value).
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.linear_predictor(beta);
        let resid: Vec<f64> = eta
            .iter()
            .zip(&self.counts)
            .map(|(&e, &v)| v - self.total * inv_logit(e))
            .collect();
        let mut g: Vec<f64> = self
            .jacobian(beta)
            .iter()
            .map(|col| col.iter().zip(&resid).map(|(a, r)| a * r).sum())
            .collect();
        self.penalty_gradient_into(beta, &mut g);
        g
    }

    fn penalty_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n_params, self.n_params);
        for (sm, &lam) in self.smooths.iter().zip(&self.lambdas) {
            let n = sm.cum.len();
            let mut view = s.view_mut((sm.offset, sm.offset), (n, n));
            view += &sm.penalty * lam;
        }
        s
    }

    /// Gradient, expected information of the likelihood part, and fitted probabilities.
    fn scoring_terms(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
        let eta = self.linear_predictor(beta);
        let prob: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
        let jac = self.jacobian(beta);
        let k = self.n_params;
        let mut g = vec![0.0; k];
        let mut info = DMatrix::zeros(k, k);
        let w: Vec<f64> = prob.iter().map(|p| self.total * p * (1.0 - p)).collect();
        for a in 0..k {
            g[a] = jac[a]
                .iter()
                .zip(&self.counts)
                .zip(&prob)
                .map(|((j, v), p)| j * (v - self.total * p))
                .sum();
            for b in 0..=a {
                let v: f64 = jac[a]
                    .iter()
                    .zip(&jac[b])
                    .zip(&w)
                    .map(|((x, y), w)| x * y * w)
                    .sum();
                info[(a, b)] = v;
                info[(b, a)] = v;
            }
        }
        self.penalty_gradient_into(beta, &mut g);
        (DVector::from_vec(g), info, prob)
    }

    /// True when no parameter would move by more than a relative 1e-10,
    /// ignoring spline parameters pinned at the clamp and pushed outward.
    fn step_negligible(&self, beta: &[f64], step: &[f64]) -> bool {
        let pinned = |k: usize| {
            self.smooths.iter().any(|s| k >= s.offset && k < s.offset + s.cum.len())
                && beta[k].abs() >= EXP_CLAMP
                && beta[k].signum() == step[k].signum()
        };
        (0..beta.len()).all(|k| pinned(k) || step[k].abs() <= 1e-10 * (1.0 + beta[k].abs()))
    }

    fn clamp_params(&self, beta: &mut [f64]) {
        for s in &self.smooths {
            for v in &mut beta[s.offset..s.offset + s.cum.len()] {
                *v = v.clamp(-EXP_CLAMP, EXP_CLAMP);
            }
        }
    }
}

/// Solves `(h + ridge * diag) x = g`, raising the ridge until factorizable.
fn solve_damped(h: &DMatrix<f64>, g: &DVector<f64>, damping: f64) -> DVector<f64> {
    let k = h.nrows();
    let scale = (0..k).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = damping.max(1e-12);
    loop {
        let mut m = h.clone();
        for i in 0..k {
            m[(i, i)] += ridge * h[(i, i)].abs().max(1e-8 * scale);
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(g);
        }
        ridge *= 10.0;
    }
}

#[derive(Debug, Clone)]
struct Solution {
    beta: Vec<f64>,
    prob: Vec<f64>,
    objective: f64,
    edf: f64,
    iterations: usize,
    gradient_norm: f64,
}

fn fit_fixed_lambdas(
    model: &PenalizedLikelihood,
    start: &[f64],
    max_iterations: usize,
) -> Result<Solution> {
    let mut beta = start.to_vec();
    model.clamp_params(&mut beta);
    let mut obj = model.value(&beta);
    let penalty = model.penalty_matrix();
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for it in 0..max_iterations {
        iterations = it + 1;
        let (g, info, _) = model.scoring_terms(&beta);
        grad_norm = g.amax();
        let h = &info + &penalty;
        let tol = 1e-16 * (1.0 + obj.abs());

        let mut damping = 0.0;
        let mut accepted = None;
        'outer: for _ in 0..6 {
            let step = solve_damped(&h, &g, damping);
            let decrement = g.dot(&step);
            if damping == 0.0 && (decrement.abs() < tol || model.step_negligible(&beta, step.as_slice())) {
                converged = true;
                break 'outer;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let mut trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                model.clamp_params(&mut trial);
                let val = model.value(&trial);
                if val.is_finite() && val >= obj {
                    accepted = Some((trial, val));
                    break 'outer;
                }
                t *= 0.5;
            }
            damping = if damping == 0.0 { 1e-4 } else { damping * 100.0 };
        }
        if converged {
            break;
        }
        match accepted {
            Some((trial, val)) => {
                let gain = val - obj;
                beta = trial;
                obj = val;
                if gain <= 1e-13 * (1.0 + obj.abs()) {
                    stalled += 1;
                    if stalled >= 3 {
                        converged = true;
                        break;
                    }
                } else {
                    stalled = 0;
                }
            }
            None => {
                // no ascent direction left at machine precision
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(CorfError::Convergence(Diagnostics {
            iterations,
            gradient_norm: grad_norm,
            objective: obj,
        }));
    }

    // intercept score equation: sum of fitted probabilities equals one
    for _ in 0..50 {
        let eta = model.linear_predictor(&beta);
        let prob: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
        let sp: f64 = prob.iter().sum();
        if (sp - 1.0).abs() < 1e-14 {
            break;
        }
        let h0: f64 = prob.iter().map(|p| p * (1.0 - p)).sum();
        beta[0] -= (sp - 1.0) / h0;
    }

    let (g, info, prob) = model.scoring_terms(&beta);
    let h = &info + &penalty;
    let edf = match h.clone().cholesky() {
        Some(ch) => ch.solve(&info).trace(),
        None => {
            let hinv_info = (0..info.ncols())
                .map(|c| solve_damped(&h, &info.column(c).into_owned(), 1e-10)[c])
                .sum::<f64>();
            hinv_info
        }
    };
    Ok(Solution {
        objective: model.value(&beta),
        beta,
        prob,
        edf,
        iterations,
        gradient_norm: g.amax(),
    })
}

fn deviance(counts: &[f64], total: f64, prob: &[f64]) -> f64 {
    let xlogy = |x: f64, y: f64| if x > 0.0 { x * (x / y).ln() } else { 0.0 };
    2.0 * counts
        .iter()
        .zip(prob)
        .map(|(&v, &p)| xlogy(v, total * p) + xlogy(total - v, total * (1.0 - p)))
        .sum::<f64>()
}

fn pearson(counts: &[f64], total: f64, prob: &[f64]) -> f64 {
    counts
        .iter()
        .zip(prob)
        .map(|(&v, &p)| (v - total * p).powi(2) / (total * p * (1.0 - p)))
        .sum()
}

/// Fits the co-data model to split counts `counts` (summing to `total_splits`).
pub fn fit_codata_model(
    counts: &[u64],
    total_splits: u64,
    design: &CoDataDesign,
    settings: &ModelSettings,
) -> Result<CoDataFit> {
    let p = counts.len();
    let sum: u64 = counts.iter().sum();
    if total_splits == 0 || sum == 0 {
        return Err(CorfError::EmptyForest);
    }
    if sum != total_splits {
        return Err(CorfError::contract(format!(
            "split counts sum to {sum}, not {total_splits}"
        )));
    }
    if (total_splits as usize) < p {
        log::warn!("only {total_splits} splits for {p} variables; the co-data fit may be unstable");
    }
    if settings.lambda_grid.is_empty() || settings.lambda_grid.iter().any(|&l| l.is_nan() || l < 0.0) {
        return Err(CorfError::contract("lambda grid must be nonempty and nonnegative"));
    }

    let grid = &settings.lambda_grid;
    let n_smooth = design.columns().iter().filter(|c| c.is_smooth()).count();
    let mut lambdas = vec![grid[0]; n_smooth];
    let mut model = PenalizedLikelihood::new(counts, design, settings, &lambdas)?;
    let start = model.initial_params();
    let mut best = fit_fixed_lambdas(&model, &start, settings.max_iterations)?;

    let n = p as f64;
    let tau_ref = (pearson(&model.counts, model.total, &best.prob) / (n - best.edf).max(1.0))
        .max(f64::MIN_POSITIVE);
    let counts = model.counts.clone();
    let total = model.total;
    let criterion = |s: &Solution| deviance(&counts, total, &s.prob) / tau_ref + 2.0 * s.edf;
    let mut best_crit = criterion(&best);
    let mut scores: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_smooth];

    let sweeps = if n_smooth > 1 { 2 } else { 1 };
    for _ in 0..sweeps {
        for d in 0..n_smooth {
            let mut tried = Vec::with_capacity(grid.len());
            let mut sweep_best: Option<(f64, f64, Solution)> = None;
            for &lam in grid {
                lambdas[d] = lam;
                model.set_lambdas(&lambdas);
                let warm = fit_fixed_lambdas(&model, &best.beta, settings.max_iterations);
                let sol = match warm.or_else(|_| fit_fixed_lambdas(&model, &start, settings.max_iterations)) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("co-data fit failed at lambda {lam}: {e}");
                        tried.push((lam, f64::INFINITY));
                        continue;
                    }
                };
                let crit = criterion(&sol);
                tried.push((lam, crit));
                if sweep_best.as_ref().is_none_or(|b| crit < b.1) {
                    sweep_best = Some((lam, crit, sol));
                }
            }
            let (lam, crit, sol) = sweep_best.ok_or(CorfError::Convergence(Diagnostics {
                iterations: settings.max_iterations,
                gradient_norm: best.gradient_norm,
                objective: best.objective,
            }))?;
            lambdas[d] = lam;
            best = sol;
            best_crit = crit;
            scores[d] = tried;
        }
    }
    model.set_lambdas(&lambdas);
    let tau = pearson(&model.counts, model.total, &best.prob) / (n - best.edf).max(1.0);

    let mut fit = assemble(&model, design, &best, &lambdas, scores, total_splits, tau, best_crit);
    fit.p_hat = predict_pj(&fit, design)?;
    Ok(fit)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &PenalizedLikelihood,
    design: &CoDataDesign,
    sol: &Solution,
    lambdas: &[f64],
    scores: Vec<Vec<(f64, f64)>>,
    total_splits: u64,
    tau: f64,
    criterion: f64,
) -> CoDataFit {
    let cols = design.columns();
    let beta = &sol.beta;
    let terms = model
        .terms
        .iter()
        .map(|t| match t {
            WorkTerm::Nominal {
                column,
                reference,
                levels,
                offset,
            } => FittedTerm::Nominal {
                column: cols[*column].name.clone(),
                reference: *reference,
                effects: levels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (l, beta[offset + i]))
                    .collect(),
            },
            WorkTerm::Linear { column, offset } => FittedTerm::Linear {
                column: cols[*column].name.clone(),
                coefficient: beta[*offset],
            },
            WorkTerm::Smooth { column, smooth } => FittedTerm::Smooth {
                column: cols[*column].name.clone(),
                smooth: *smooth,
            },
            WorkTerm::Dropped { column } => FittedTerm::Dropped {
                column: cols[*column].name.clone(),
            },
        })
        .collect();

    let smooth_columns: Vec<usize> = model
        .terms
        .iter()
        .filter_map(|t| match t {
            WorkTerm::Smooth { column, .. } => Some(*column),
            _ => None,
        })
        .collect();
    let smooths = model
        .smooths
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let mut theta_tilde = vec![0.0];
            theta_tilde.extend(
                beta[s.offset..s.offset + s.cum.len()]
                    .iter()
                    .map(|v| v.clamp(-EXP_CLAMP, EXP_CLAMP)),
            );
            let direction = if s.sign > 0.0 {
                Direction::Increasing
            } else {
                Direction::Decreasing
            };
            let theta = sigma_reparam(&theta_tilde, direction).expect("finite parameters");
            let mut basis = s.basis.clone();
            basis.evaluation.clear();
            SmoothFit {
                column: cols[smooth_columns[d]].name.clone(),
                direction,
                basis,
                theta_tilde,
                theta,
                lambda: lambdas[d],
                lambda_scores: scores[d].clone(),
            }
        })
        .collect();

    CoDataFit {
        alpha0: beta[0],
        terms,
        smooths,
        tau,
        p_hat: Vec::new(),
        total_splits,
        edf: sol.edf,
        criterion,
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            gradient_norm: sol.gradient_norm,
            objective: sol.objective,
        },
        schema: cols
            .iter()
            .map(|c| ColumnSchema {
                name: c.name.clone(),
                kind: c.kind.clone(),
                monotonicity: c.monotonicity,
            })
            .collect(),
    }
}

/// Fitted selection probabilities for the variables of `design`.
///
/// `design` must have the training schema; its number of rows is free.
pub fn predict_pj(fit: &CoDataFit, design: &CoDataDesign) -> Result<Vec<f64>> {
    let cols = design.columns();
    if cols.len() != fit.schema.len()
        || cols.iter().zip(&fit.schema).any(|(c, s)| {
            c.name != s.name || c.kind != s.kind || c.monotonicity != s.monotonicity
        })
    {
        return Err(CorfError::contract(
            "co-data design does not match the schema the model was fitted on",
        ));
    }
    let n = design.n_variables();
    let mut eta = vec![fit.alpha0; n];
    for (term, col) in fit.terms.iter().zip(cols) {
        match (term, &col.values) {
            (FittedTerm::Nominal { effects, .. }, ColumnValues::Levels(codes)) => {
                for (j, c) in codes.iter().enumerate() {
                    if let Some((_, a)) = effects.iter().find(|(l, _)| l == c) {
                        eta[j] += a;
                    }
                }
            }
            (FittedTerm::Linear { coefficient, .. }, ColumnValues::Real(x)) => {
                for j in 0..n {
                    eta[j] += coefficient * x[j];
                }
            }
            (FittedTerm::Smooth { smooth, .. }, ColumnValues::Real(x)) => {
                let s = &fit.smooths[*smooth];
                for j in 0..n {
                    eta[j] += s.value(x[j]);
                }
            }
            (FittedTerm::Dropped { .. }, _) => {}
            _ => return Err(CorfError::contract("co-data column kind changed")),
        }
    }
    Ok(eta.into_iter().map(inv_logit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codata::CoDataColumn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Counts from a known per-variable probability with multiplicative noise.
    fn counts_from(p: &[f64], total: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let s: f64 = p.iter().sum();
        p.iter()
            .map(|&v| (total * v / s * (0.6 + 0.8 * rng.gen::<f64>())).round() as u64)
            .collect()
    }

    fn smooth_case(p: usize, seed: u64) -> (Vec<u64>, CoDataDesign) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let z: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let flag: Vec<bool> = (0..p).map(|_| rng.gen::<f64>() < 0.2).collect();
        let truth: Vec<f64> = (0..p)
            .map(|j| (3.0 * x[j].powi(2) - 1.5 * z[j] + if flag[j] { 1.0 } else { 0.0 }).exp())
            .collect();
        let counts = counts_from(&truth, 20.0 * p as f64, &mut rng);
        let design = CoDataDesign::new(
            p,
            vec![
                CoDataColumn::continuous("x", x, Monotonicity::Increasing).unwrap(),
                CoDataColumn::continuous("z", z, Monotonicity::Decreasing).unwrap(),
                CoDataColumn::indicator("flag", &flag).unwrap(),
            ],
        )
        .unwrap();
        (counts, design)
    }

    #[test]
    fn intercept_only_gives_uniform() {
        let counts = vec![5, 0, 12, 3, 7];
        let fit = fit_codata_model(&counts, 27, &CoDataDesign::intercept_only(5), &ModelSettings::default())
            .unwrap();
        for p in &fit.p_hat {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let other = CoDataDesign::intercept_only(3);
        for p in predict_pj(&fit, &other).unwrap() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_group_fit_is_group_mean() {
        let counts: Vec<u64> = vec![10, 30, 5, 0, 2, 1, 1, 3, 0, 8];
        let group = [true, true, true, false, false, false, false, false, false, true];
        let k: u64 = counts.iter().sum();
        let design = CoDataDesign::new(10, vec![CoDataColumn::indicator("g", &group).unwrap()]).unwrap();
        let fit = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        for g in [true, false] {
            let members: Vec<usize> = (0..10).filter(|&j| group[j] == g).collect();
            let share = members.iter().map(|&j| counts[j]).sum::<u64>() as f64 / k as f64;
            let expect = share / members.len() as f64;
            for &j in &members {
                assert!((fit.p_hat[j] - expect).abs() < 1e-9, "{j}: {} vs {expect}", fit.p_hat[j]);
            }
        }
    }

    fn pseudo_loglik(counts: &[u64], x: &[f64], a0: f64, a1: f64) -> f64 {
        let k: u64 = counts.iter().sum();
        counts
            .iter()
            .zip(x)
            .map(|(&v, &xj)| {
                let p = 1.0 / (1.0 + (-(a0 + a1 * xj)).exp());
                v as f64 * p.ln() + (k - v) as f64 * (1.0 - p).ln()
            })
            .sum()
    }

    #[test]
    fn linear_fit_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..50).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let truth: Vec<f64> = x.iter().map(|v| (0.8 * v).exp()).collect();
        let counts = counts_from(&truth, 2000.0, &mut rng);
        let k: u64 = counts.iter().sum();
        let design = CoDataDesign::new(
            50,
            vec![CoDataColumn::continuous("x", x.clone(), Monotonicity::None).unwrap()],
        )
        .unwrap();
        let fit = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        let a1 = fit.coefficients()[0].1;

        // zooming 2-D grid over (intercept, slope)
        let (mut c0, mut c1, mut half) = (-4.0, 0.0, 4.0);
        for _ in 0..12 {
            let mut best = (f64::NEG_INFINITY, c0, c1);
            for i in 0..=40 {
                for j in 0..=40 {
                    let a = c0 - half + 2.0 * half * i as f64 / 40.0;
                    let b = c1 - half + 2.0 * half * j as f64 / 40.0;
                    let v = pseudo_loglik(&counts, &x, a, b);
                    if v > best.0 {
                        best = (v, a, b);
                    }
                }
            }
            c0 = best.1;
            c1 = best.2;
            half /= 4.0;
        }
        assert!((fit.alpha0 - c0).abs() < 1e-3, "{} vs {c0}", fit.alpha0);
        assert!((a1 - c1).abs() < 1e-3, "{a1} vs {c1}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (counts, design) = smooth_case(120, 8);
        let settings = ModelSettings::default();
        let model = PenalizedLikelihood::new(&counts, &design, &settings, &[0.5, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let beta: Vec<f64> = (0..model.n_params())
                .map(|k| if k == 0 { -5.0 + rng.gen::<f64>() } else { rng.gen::<f64>() * 2.0 - 1.5 })
                .collect();
            let g = model.gradient(&beta);
            for k in 0..beta.len() {
                let h = 1e-5 * (1.0 + beta[k].abs());
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (model.value(&up) - model.value(&dn)) / (2.0 * h);
                let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-5, "param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn smooth_fit_is_monotone_and_normalized() {
        let (counts, design) = smooth_case(400, 3);
        let k: u64 = counts.iter().sum();
        let fit = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        assert!((fit.p_hat.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(fit.p_hat.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(fit.smooths.len(), 2);
        for s in &fit.smooths {
            let curve = fit.smooth_curve(fit.smooths.iter().position(|t| t.column == s.column).unwrap(), 200);
            for w in curve.windows(2) {
                match s.direction {
                    Direction::Increasing => assert!(w[1].f >= w[0].f - 1e-10),
                    Direction::Decreasing => assert!(w[1].f <= w[0].f + 1e-10),
                }
            }
            // the chosen smoothing weight attains the minimum recorded criterion
            let min = s.lambda_scores.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
            let chosen = s.lambda_scores.iter().find(|t| t.0 == s.lambda).unwrap().1;
            assert_eq!(chosen, min);
            assert_eq!(s.lambda_scores.len(), 7);
        }
        // increasing smooth actually rises, decreasing one falls
        assert!(fit.smooths[0].theta.last().unwrap() > &0.5);
        assert!(fit.smooths[1].theta.last().unwrap() < &-0.3);
        assert!(fit.tau > 0.0);
        assert_eq!(predict_pj(&fit, &design).unwrap(), fit.p_hat);
    }

    #[test]
    fn permuting_variables_permutes_fit() {
        let (counts, design) = smooth_case(150, 4);
        let k: u64 = counts.iter().sum();
        let fit = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        let order: Vec<usize> = (0..150).rev().collect();
        let pc: Vec<u64> = order.iter().map(|&i| counts[i]).collect();
        let pfit = fit_codata_model(&pc, k, &design.permuted(&order).unwrap(), &ModelSettings::default())
            .unwrap();
        for (new, &old) in order.iter().enumerate() {
            assert!((pfit.p_hat[new] - fit.p_hat[old]).abs() < 1e-7 * fit.p_hat[old].max(1e-3));
        }
    }

    #[test]
    fn error_paths() {
        let design = CoDataDesign::intercept_only(3);
        assert!(matches!(
            fit_codata_model(&[0, 0, 0], 0, &design, &ModelSettings::default()),
            Err(CorfError::EmptyForest)
        ));
        assert!(fit_codata_model(&[1, 2, 3], 7, &design, &ModelSettings::default()).is_err());
        let constant = CoDataDesign::new(
            3,
            vec![CoDataColumn::continuous("c", vec![1.0; 3], Monotonicity::Increasing).unwrap()],
        )
        .unwrap();
        let err = fit_codata_model(&[1, 2, 3], 6, &constant, &ModelSettings::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate continuous co-data"));
    }

    #[test]
    fn collinear_nominal_dropped_and_schema_checked() {
        let flags = [true, false, true, false, false, true];
        let inverse: Vec<bool> = flags.iter().map(|f| !f).collect();
        let design = CoDataDesign::new(
            6,
            vec![
                CoDataColumn::indicator("a", &flags).unwrap(),
                CoDataColumn::indicator("b", &inverse).unwrap(),
            ],
        )
        .unwrap();
        let counts = [9, 1, 7, 2, 1, 8];
        let fit = fit_codata_model(&counts, 28, &design, &ModelSettings::default()).unwrap();
        assert!(matches!(fit.terms[1], FittedTerm::Dropped { .. }));
        assert!((fit.p_hat[0] - 24.0 / 28.0 / 3.0).abs() < 1e-9);

        let other = CoDataDesign::new(6, vec![CoDataColumn::indicator("a", &flags).unwrap()]).unwrap();
        assert!(predict_pj(&fit, &other).is_err());
    }

    #[test]
    fn deterministic_refit() {
        let (counts, design) = smooth_case(200, 9);
        let k: u64 = counts.iter().sum();
        let a = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        let b = fit_codata_model(&counts, k, &design, &ModelSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
