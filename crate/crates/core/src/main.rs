use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use corf::codata::CoDataDesign;
use corf::forest::ForestParams;
use corf::io::{
    emit_report, generate_synthetic, load_codata, load_matrix, load_model, load_primary, persist_model,
    write_manifest, CoDataSchema, ModelArtifact, Preprocessing, SyntheticSpec,
};
use corf::pipeline::{cross_validate, run_corf, tune_gamma, CoData, OobCriterion, PipelineParams};
use corf::{CorfError, Result};

#[derive(Parser, Debug)]
#[command(name = "corf", version, about = "Random forests with co-data moderated variable sampling")]
struct Cli {
    /// Worker threads (falls back to CORF_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit base and co-data moderated forests, save the model and a report
    Fit(FitArgs),
    /// Tune gamma on out-of-bag performance and cross-validate the tuned procedure
    Tune(TuneArgs),
    /// Cross-validate the full procedure
    Cv(TuneArgs),
    /// Predict class-1 probabilities for a new matrix
    Predict(PredictArgs),
    /// Write a synthetic dataset with co-data
    Simulate(SimulateArgs),
    /// Regenerate report files from a saved model
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Primary matrix CSV (samples x variables, first row/column are ids)
    #[arg(long)]
    primary: PathBuf,
    /// Labels CSV (sample id, 0/1)
    #[arg(long)]
    labels: PathBuf,
    /// Co-data CSV keyed by variable id; omit for an intercept-only model
    #[arg(long, requires = "schema")]
    codata: Option<PathBuf>,
    /// Co-data schema JSON
    #[arg(long, requires = "codata")]
    schema: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Apply sqrt(x + 3/8) before fitting
    #[arg(long)]
    anscombe: bool,
    /// Centre and scale columns before fitting
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug)]
struct ForestArgs {
    #[arg(long, default_value_t = 5000)]
    ntree: usize,
    /// Candidates per split (default ceil(sqrt(P)))
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 2)]
    min_node_size: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    forest: ForestArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Criterion {
    Auc,
    Brier,
    Error,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Comma-separated gamma values
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = Criterion::Auc)]
    criterion: Criterion,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    /// Matrix CSV to score
    #[arg(long)]
    primary: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Fill training variables absent from the input with training means
    #[arg(long)]
    allow_subset: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 150)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    informative: usize,
    #[arg(long, default_value_t = 1.5)]
    effect_size: f64,
    #[arg(long, default_value_t = 0.9)]
    quality: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Loaded {
    data: corf::forest::PrimaryDataset,
    codata: CoData,
    preprocessing: Preprocessing,
}

fn load_inputs(a: &DataArgs) -> Result<Loaded> {
    let raw = load_primary(&a.primary, &a.labels)?;
    let (data, preprocessing) = Preprocessing::fit(&raw, a.anscombe, a.standardize)?;
    let codata = match (&a.codata, &a.schema) {
        (Some(c), Some(s)) => load_codata(c, &CoDataSchema::load(s)?, data.variable_ids())?,
        _ => CoData::Model(CoDataDesign::intercept_only(data.n_variables())),
    };
    Ok(Loaded {
        data,
        codata,
        preprocessing,
    })
}

fn inputs(a: &DataArgs) -> Vec<&Path> {
    let mut v = vec![a.primary.as_path(), a.labels.as_path()];
    v.extend(a.codata.as_deref());
    v.extend(a.schema.as_deref());
    v
}

fn pipeline_params(f: &ForestArgs) -> PipelineParams {
    PipelineParams {
        gamma: f.gamma,
        forest: ForestParams {
            ntree: f.ntree,
            mtry: f.mtry,
            min_node_size: f.min_node_size,
            seed: f.seed,
            sampling_weights: None,
        },
        ..PipelineParams::default()
    }
}

fn params_json(p: &PipelineParams, a: &DataArgs) -> serde_json::Value {
    json!({
        "pipeline": p,
        "anscombe": a.anscombe,
        "standardize": a.standardize,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CorfError::io(path, e))
}

fn save_fit(
    loaded: &Loaded,
    result: &corf::pipeline::CorfResult,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let artifact = ModelArtifact::from_result(result, &loaded.data, loaded.preprocessing.clone(), seed)?;
    std::fs::create_dir_all(out).map_err(|e| CorfError::io(out, e))?;
    persist_model(&artifact, out.join("model.corf"))?;
    emit_report(&artifact, out)?;
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let loaded = load_inputs(&a.data)?;
    let params = pipeline_params(&a.forest);
    let result = run_corf(&loaded.data, &loaded.codata, &params)?;
    save_fit(&loaded, &result, a.forest.seed, &a.data.out)?;
    write_manifest(&a.data.out, "fit", a.forest.seed, params_json(&params, &a.data), &inputs(&a.data))?;
    log::info!(
        "oob AUC base {:?}, CoRF {:?}",
        result.base_oob.auc,
        result.corf_oob.auc
    );
    Ok(())
}

fn tune_params(a: &TuneArgs) -> PipelineParams {
    let mut params = pipeline_params(&a.forest);
    params.gamma_grid = a.gamma_grid.clone();
    params.cv_folds = a.folds;
    params.criterion = match a.criterion {
        Criterion::Auc => OobCriterion::Auc,
        Criterion::Brier => OobCriterion::Brier,
        Criterion::Error => OobCriterion::ErrorRate,
    };
    params
}

fn write_cv(out: &Path, loaded: &Loaded, cv: &corf::pipeline::CvResult) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CorfError::io(out, e))?;
    let mut pred = String::from("sample,label,fold,base,corf\n");
    for i in 0..loaded.data.n_samples() {
        pred.push_str(&format!(
            "{},{},{},{},{}\n",
            loaded.data.sample_ids()[i],
            loaded.data.y()[i],
            cv.assignment[i],
            cv.base_predictions[i],
            cv.corf_predictions[i]
        ));
    }
    write_text(&out.join("cv_predictions.csv"), &pred)?;
    let mut m = serde_json::Map::new();
    for (name, p) in [("base", &cv.base_pooled), ("corf", &cv.corf_pooled)] {
        m.insert(format!("cv_{name}_auc"), json!(p.auc));
        m.insert(format!("cv_{name}_brier"), json!(p.brier));
        m.insert(format!("cv_{name}_error_rate"), json!(p.error_rate));
    }
    for (k, f) in cv.folds.iter().enumerate() {
        m.insert(format!("fold{k}_corf_auc"), json!(f.corf.auc));
        m.insert(format!("fold{k}_base_auc"), json!(f.base.auc));
        m.insert(format!("fold{k}_gamma"), json!(f.chosen_gamma));
    }
    write_text(
        &out.join("cv_metrics.json"),
        &(serde_json::to_string_pretty(&m).expect("json") + "\n"),
    )
}

fn tune(a: &TuneArgs) -> Result<()> {
    let loaded = load_inputs(&a.data)?;
    let mut params = tune_params(a);
    if params.gamma_grid.is_none() {
        params.gamma_grid = Some(vec![0.0, 0.5, 1.0, 2.0]);
    }
    let result = tune_gamma(&loaded.data, &loaded.codata, &params)?;
    save_fit(&loaded, &result, a.forest.seed, &a.data.out)?;
    let cv = cross_validate(&loaded.data, &loaded.codata, &params, a.folds)?;
    write_cv(&a.data.out, &loaded, &cv)?;
    write_manifest(&a.data.out, "tune", a.forest.seed, params_json(&params, &a.data), &inputs(&a.data))?;
    Ok(())
}

fn cv(a: &TuneArgs) -> Result<()> {
    let loaded = load_inputs(&a.data)?;
    let params = tune_params(a);
    let cv = cross_validate(&loaded.data, &loaded.codata, &params, a.folds)?;
    write_cv(&a.data.out, &loaded, &cv)?;
    write_manifest(&a.data.out, "cv", a.forest.seed, params_json(&params, &a.data), &inputs(&a.data))?;
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let m = load_matrix(&a.primary)?;
    let p = model.predict_labeled(&m, a.allow_subset)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CorfError::io(&a.out, e))?;
    let mut text = String::from("sample,probability\n");
    for (id, v) in m.row_ids.iter().zip(&p) {
        text.push_str(&format!("{id},{v}\n"));
    }
    write_text(&a.out.join("predictions.csv"), &text)?;
    write_manifest(
        &a.out,
        "predict",
        model.metadata.seed,
        json!({ "allow_subset": a.allow_subset }),
        &[a.model.as_path(), a.primary.as_path()],
    )?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n: a.n,
        p: a.p,
        n_informative: a.informative,
        effect_size: a.effect_size,
        codata_quality: a.quality,
        seed: a.seed,
    };
    generate_synthetic(&spec)?.write_to(&a.out)?;
    write_manifest(&a.out, "simulate", a.seed, json!(spec), &[])?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    emit_report(&model, &a.out)?;
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let threads = match threads {
        Some(t) => Some(t),
        None => match std::env::var("CORF_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CorfError::invalid(format!("CORF_THREADS='{v}' is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CorfError::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Tune(a) => tune(a),
        Command::Cv(a) => cv(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("corf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
