//! Base forest, co-data weights, refit; plus gamma tuning and cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codata::{fit_codata_model, CoDataDesign, CoDataFit, ModelSettings};
use crate::error::{CorfError, Result};
use crate::forest::{
    fit_forest, oob_probabilities, predict_forest, Forest, ForestParams, PrimaryDataset,
};
use crate::metrics::{auc, brier_score, error_rate, ScoredLabels};

pub use crate::forest::SamplingWeights;

/// Independent sub-seed for a pipeline stage.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BASE_STREAM: u64 = 0;
const CORF_STREAM: u64 = 1;
const FOLD_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OobCriterion {
    Auc,
    Brier,
    ErrorRate,
}

impl OobCriterion {
    /// Score where larger is better.
    fn score(self, perf: &Performance) -> f64 {
        match self {
            OobCriterion::Auc => perf.auc.unwrap_or(f64::NEG_INFINITY),
            OobCriterion::Brier => -perf.brier,
            OobCriterion::ErrorRate => -perf.error_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub gamma: f64,
    pub gamma_grid: Option<Vec<f64>>,
    pub forest: ForestParams,
    pub cv_folds: usize,
    pub criterion: OobCriterion,
    pub codata_settings: ModelSettings,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            gamma: 1.0,
            gamma_grid: None,
            forest: ForestParams::default(),
            cv_folds: 10,
            criterion: OobCriterion::Auc,
            codata_settings: ModelSettings::default(),
        }
    }
}

/// A priori grouping of the variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingCoData {
    group_of: Vec<usize>,
    names: Vec<String>,
}

impl GroupingCoData {
    pub fn new(group_of: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if let Some(g) = group_of.iter().find(|&&g| g >= names.len()) {
            return Err(CorfError::contract(format!("group index {g} has no name")));
        }
        let sizes = Self::sizes_of(&group_of, names.len());
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(CorfError::contract(format!("group '{}' is empty", names[g])));
        }
        Ok(GroupingCoData { group_of, names })
    }

    /// Groups numbered by first appearance of each label.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = Vec::new();
        let group_of = labels
            .iter()
            .map(|l| match names.iter().position(|n| n == l.as_ref()) {
                Some(g) => g,
                None => {
                    names.push(l.as_ref().to_string());
                    names.len() - 1
                }
            })
            .collect();
        GroupingCoData { group_of, names }
    }

    fn sizes_of(group_of: &[usize], n: usize) -> Vec<usize> {
        let mut sizes = vec![0; n];
        for &g in group_of {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        Self::sizes_of(&self.group_of, self.names.len())
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_variables(&self) -> usize {
        self.group_of.len()
    }
}

#[derive(Debug, Clone)]
pub enum CoData {
    Model(CoDataDesign),
    Groups(GroupingCoData),
}

impl CoData {
    fn n_variables(&self) -> usize {
        match self {
            CoData::Model(d) => d.n_variables(),
            CoData::Groups(g) => g.n_variables(),
        }
    }
}

/// Sampling weights after thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholded {
    pub weights: SamplingWeights,
    /// Every thresholded weight was zero and uniform weights were used.
    pub uniform_fallback: bool,
}

fn threshold(p_hat: &[f64], gamma: f64) -> Result<Thresholded> {
    let base = gamma / p_hat.len() as f64;
    let w: Vec<f64> = p_hat.iter().map(|&p| (p - base).max(0.0)).collect();
    Ok(match SamplingWeights::normalized(&w)? {
        Some(weights) => Thresholded {
            weights,
            uniform_fallback: false,
        },
        None => {
            log::warn!("gamma {gamma} zeroes every sampling weight; falling back to uniform");
            Thresholded {
                weights: SamplingWeights::uniform(p_hat.len()),
                uniform_fallback: true,
            }
        }
    })
}

/// Per-variable selection probability implied by a grouping:
/// the group's share of all splits divided by its size.
pub fn group_selection_probabilities(
    split_counts: &[u64],
    total_splits: u64,
    grouping: &GroupingCoData,
) -> Result<Vec<f64>> {
    if total_splits == 0 {
        return Err(CorfError::EmptyForest);
    }
    if split_counts.len() != grouping.n_variables() {
        return Err(CorfError::contract("grouping does not cover every variable"));
    }
    let sizes = grouping.group_sizes();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(CorfError::contract(format!(
            "group '{}' is empty",
            grouping.names[g]
        )));
    }
    let mut share = vec![0u64; sizes.len()];
    for (&v, &g) in split_counts.iter().zip(&grouping.group_of) {
        share[g] += v;
    }
    let per_group: Vec<f64> = share
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| s as f64 / total_splits as f64 / n as f64)
        .collect();
    Ok(grouping.group_of.iter().map(|&g| per_group[g]).collect())
}

/// Group-specific weights `(p_g - gamma / P)+`, normalized over variables.
pub fn group_weights(
    split_counts: &[u64],
    total_splits: u64,
    grouping: &GroupingCoData,
    gamma: f64,
) -> Result<Thresholded> {
    check_gamma(gamma)?;
    let p = group_selection_probabilities(split_counts, total_splits, grouping)?;
    threshold(&p, gamma)
}

/// Model-based weights `(p_j - gamma / P)+`, normalized.
pub fn model_weights(p_hat: &[f64], gamma: f64) -> Result<Thresholded> {
    check_gamma(gamma)?;
    if p_hat.is_empty() {
        return Err(CorfError::contract("empty probability vector"));
    }
    if p_hat.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(CorfError::contract("fitted probabilities must be finite and in [0,1]"));
    }
    threshold(p_hat, gamma)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(CorfError::contract(format!("gamma must be a nonnegative number, got {gamma}")));
    }
    Ok(())
}

/// Performance of class-1 scores against labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub brier: f64,
    pub error_rate: f64,
    pub n: usize,
}

impl Performance {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let s = ScoredLabels::new(scores, labels)?;
        let both = labels.contains(&0) && labels.contains(&1);
        Ok(Performance {
            auc: if both { Some(auc(&s)?) } else { None },
            brier: brier_score(&s)?,
            error_rate: error_rate(&s, 0.5)?,
            n: scores.len(),
        })
    }

    /// Out-of-bag performance, over samples with a defined oob vote.
    pub fn oob(forest: &Forest, data: &PrimaryDataset) -> Result<Self> {
        let oob = oob_probabilities(forest, data)?;
        let (idx, votes) = oob.defined();
        let labels: Vec<u8> = idx.iter().map(|&i| data.y()[i]).collect();
        Self::compute(&votes, &labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoDataSummary {
    Model(CoDataFit),
    Groups {
        names: Vec<String>,
        sizes: Vec<usize>,
        /// Per-group split share divided by group size.
        selection_probability: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct CorfResult {
    pub base_forest: Forest,
    /// `None` in degraded mode.
    pub codata: Option<CoDataSummary>,
    /// Per-variable fitted selection probabilities (uniform in degraded mode).
    pub p_hat: Vec<f64>,
    pub weights: SamplingWeights,
    pub corf_forest: Forest,
    pub base_oob: Performance,
    pub corf_oob: Performance,
    pub chosen_gamma: f64,
    /// `(gamma, criterion score)` per grid value; a single entry without tuning.
    pub gamma_scores: Vec<(f64, f64)>,
    /// The co-data fit failed; CoRF was refit with uniform weights.
    pub degraded: bool,
    pub uniform_fallback: bool,
}

struct CoDataStage {
    summary: Option<CoDataSummary>,
    p_hat: Vec<f64>,
    degraded: bool,
}

fn base_params(params: &PipelineParams) -> ForestParams {
    ForestParams {
        seed: derive_seed(params.forest.seed, BASE_STREAM),
        sampling_weights: None,
        ..params.forest.clone()
    }
}

fn fit_codata_stage(base: &Forest, codata: &CoData, settings: &ModelSettings) -> Result<CoDataStage> {
    let p = base.n_variables;
    match codata {
        CoData::Groups(grouping) => {
            let p_hat = group_selection_probabilities(&base.split_counts, base.total_splits, grouping)?;
            let sizes = grouping.group_sizes();
            let mut sel = vec![0.0; sizes.len()];
            for (&g, &v) in grouping.group_of().iter().zip(&p_hat) {
                sel[g] = v;
            }
            Ok(CoDataStage {
                summary: Some(CoDataSummary::Groups {
                    names: grouping.names().to_vec(),
                    sizes,
                    selection_probability: sel,
                }),
                p_hat,
                degraded: false,
            })
        }
        CoData::Model(design) => {
            match fit_codata_model(&base.split_counts, base.total_splits, design, settings) {
                Ok(fit) => Ok(CoDataStage {
                    p_hat: fit.p_hat.clone(),
                    summary: Some(CoDataSummary::Model(fit)),
                    degraded: false,
                }),
                Err(e) => {
                    log::warn!("co-data model failed ({e}); continuing with uniform weights");
                    Ok(CoDataStage {
                        summary: None,
                        p_hat: vec![1.0 / p as f64; p],
                        degraded: true,
                    })
                }
            }
        }
    }
}

fn refit(
    data: &PrimaryDataset,
    params: &PipelineParams,
    stage: &CoDataStage,
    gamma: f64,
) -> Result<(Thresholded, Forest, Performance)> {
    let th = if stage.degraded {
        Thresholded {
            weights: SamplingWeights::uniform(stage.p_hat.len()),
            uniform_fallback: true,
        }
    } else {
        model_weights(&stage.p_hat, gamma)?
    };
    let fp = ForestParams {
        seed: derive_seed(params.forest.seed, CORF_STREAM),
        sampling_weights: Some(th.weights.clone()),
        ..params.forest.clone()
    };
    let forest = fit_forest(data, &fp)?;
    let perf = Performance::oob(&forest, data)?;
    Ok((th, forest, perf))
}

fn check_codata(data: &PrimaryDataset, codata: &CoData) -> Result<()> {
    if codata.n_variables() != data.n_variables() {
        return Err(CorfError::contract(format!(
            "co-data covers {} variables, data has {}",
            codata.n_variables(),
            data.n_variables()
        )));
    }
    Ok(())
}

/// Base forest, co-data fit, weights at `params.gamma`, refit.
pub fn run_corf(data: &PrimaryDataset, codata: &CoData, params: &PipelineParams) -> Result<CorfResult> {
    run_with_grid(data, codata, params, &[params.gamma])
}

/// Like [`run_corf`], refitting once per value of `params.gamma_grid` and
/// keeping the value with the best oob criterion (ties go to the larger gamma).
pub fn tune_gamma(data: &PrimaryDataset, codata: &CoData, params: &PipelineParams) -> Result<CorfResult> {
    let grid = params
        .gamma_grid
        .as_deref()
        .filter(|g| !g.is_empty())
        .ok_or_else(|| CorfError::contract("gamma tuning needs a nonempty grid"))?;
    run_with_grid(data, codata, params, grid)
}

fn run_with_grid(
    data: &PrimaryDataset,
    codata: &CoData,
    params: &PipelineParams,
    grid: &[f64],
) -> Result<CorfResult> {
    check_codata(data, codata)?;
    for &g in grid {
        check_gamma(g)?;
    }
    let base_forest = fit_forest(data, &base_params(params))?;
    let base_oob = Performance::oob(&base_forest, data)?;
    let stage = fit_codata_stage(&base_forest, codata, &params.codata_settings)?;

    let mut best: Option<(f64, f64, Thresholded, Forest, Performance)> = None;
    let mut gamma_scores = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let (th, forest, perf) = refit(data, params, &stage, gamma)?;
        let score = params.criterion.score(&perf);
        gamma_scores.push((gamma, score));
        let replace = match &best {
            None => true,
            Some((bg, bs, ..)) => score > *bs || (score == *bs && gamma > *bg),
        };
        if replace {
            best = Some((gamma, score, th, forest, perf));
        }
    }
    let (chosen_gamma, _, th, corf_forest, corf_oob) = best.expect("nonempty grid");

    Ok(CorfResult {
        base_forest,
        codata: stage.summary,
        p_hat: stage.p_hat,
        weights: th.weights,
        corf_forest,
        base_oob,
        corf_oob,
        chosen_gamma,
        gamma_scores,
        degraded: stage.degraded,
        uniform_fallback: th.uniform_fallback,
    })
}

/// Stratified fold index (0-based) for every sample.
///
/// With `folds == n` every sample is its own fold.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if folds < 2 || folds > n {
        return Err(CorfError::invalid(format!("fold count {folds} outside 2..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if folds == n {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut assign = vec![0; n];
        for (f, i) in order.into_iter().enumerate() {
            assign[i] = f;
        }
        return Ok(assign);
    }
    let mut assign = vec![0; n];
    let mut next = 0;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(CorfError::invalid(format!(
                "impossible stratification: class {class} has {} samples for {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assign[i] = next % folds;
            next += 1;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub test_indices: Vec<usize>,
    /// `None` per metric when the fold holds fewer than two classes.
    pub corf: Performance,
    pub base: Performance,
    pub chosen_gamma: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub assignment: Vec<usize>,
    pub folds: Vec<FoldResult>,
    /// Held-out class-1 vote fractions, indexed by sample.
    pub corf_predictions: Vec<f64>,
    pub base_predictions: Vec<f64>,
    pub corf_pooled: Performance,
    pub base_pooled: Performance,
}

/// Runs the full pipeline inside each training fold and scores held-out samples.
///
/// Held-out samples are passed to the fitted forests as a bare feature
/// matrix; their labels are only used after all folds are fitted.
pub fn cross_validate(
    data: &PrimaryDataset,
    codata: &CoData,
    params: &PipelineParams,
    folds: usize,
) -> Result<CvResult> {
    check_codata(data, codata)?;
    let assignment = stratified_folds(data.y(), folds, derive_seed(params.forest.seed, FOLD_STREAM))?;
    let n = data.n_samples();
    let mut corf_predictions = vec![f64::NAN; n];
    let mut base_predictions = vec![f64::NAN; n];
    let mut fold_meta = Vec::with_capacity(folds);

    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
        let train_data = data.subset(&train)?;
        let test_x = data.x().select_rows(&test);

        let mut fold_params = params.clone();
        fold_params.forest.seed = derive_seed(params.forest.seed, 100 + f as u64);
        let result = if params.gamma_grid.is_some() {
            tune_gamma(&train_data, codata, &fold_params)?
        } else {
            run_corf(&train_data, codata, &fold_params)?
        };
        let corf = predict_forest(&result.corf_forest, &test_x)?;
        let base = predict_forest(&result.base_forest, &test_x)?;
        for (k, &i) in test.iter().enumerate() {
            corf_predictions[i] = corf[k];
            base_predictions[i] = base[k];
        }
        fold_meta.push((test, result.chosen_gamma, result.degraded));
    }

    let y = data.y();
    let mut fold_results = Vec::with_capacity(folds);
    for (test, chosen_gamma, degraded) in fold_meta {
        let labels: Vec<u8> = test.iter().map(|&i| y[i]).collect();
        let pick = |v: &[f64]| test.iter().map(|&i| v[i]).collect::<Vec<_>>();
        fold_results.push(FoldResult {
            corf: Performance::compute(&pick(&corf_predictions), &labels)?,
            base: Performance::compute(&pick(&base_predictions), &labels)?,
            test_indices: test,
            chosen_gamma,
            degraded,
        });
    }
    Ok(CvResult {
        corf_pooled: Performance::compute(&corf_predictions, y)?,
        base_pooled: Performance::compute(&base_predictions, y)?,
        assignment,
        folds: fold_results,
        corf_predictions,
        base_predictions,
    })
}
