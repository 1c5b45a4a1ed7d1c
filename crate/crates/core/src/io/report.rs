//! Plot-ready report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::codata::FittedTerm;
use crate::error::{CorfError, Result};
use crate::io::artifact::ModelArtifact;
use crate::metrics::{roc_curve, RocPoint, ScoredLabels};
use crate::pipeline::CoDataSummary;

pub const CURVE_POINTS: usize = 200;

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CorfError::io(path, e))
}

fn roc_of(votes: &[Option<f64>], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (s, y): (Vec<f64>, Vec<u8>) = votes
        .iter()
        .zip(labels)
        .filter_map(|(v, &l)| v.map(|v| (v, l)))
        .unzip();
    roc_curve(&ScoredLabels::new(&s, &y)?)
}

fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,tpr,fpr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    out
}

fn inv_logit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn curves_csv(a: &ModelArtifact) -> String {
    let mut out = String::from("column,kind,x,level,f,p\n");
    let Some(fit) = a.codata_fit() else {
        return out;
    };
    for (k, s) in fit.smooths.iter().enumerate() {
        for pt in fit.smooth_curve(k, CURVE_POINTS) {
            let _ = writeln!(out, "{},smooth,{},,{},{}", s.column, pt.x, pt.f, pt.p);
        }
    }
    for t in &fit.terms {
        match t {
            FittedTerm::Nominal {
                column,
                reference,
                effects,
            } => {
                let levels = fit
                    .schema
                    .iter()
                    .find(|c| &c.name == column)
                    .and_then(|c| match &c.kind {
                        crate::codata::ColumnKind::Nominal { levels } => Some(levels.clone()),
                        _ => None,
                    })
                    .unwrap_or_default();
                let label = |code: usize| levels.get(code).cloned().unwrap_or_else(|| code.to_string());
                let _ = writeln!(
                    out,
                    "{column},nominal,,{},0,{}",
                    label(*reference),
                    inv_logit(fit.alpha0)
                );
                for &(code, e) in effects {
                    let _ = writeln!(
                        out,
                        "{column},nominal,,{},{e},{}",
                        label(code),
                        inv_logit(fit.alpha0 + e)
                    );
                }
            }
            FittedTerm::Linear {
                column,
                coefficient,
            } => {
                let _ = writeln!(out, "{column},linear,,,{coefficient},");
            }
            _ => {}
        }
    }
    out
}

fn weights_csv(a: &ModelArtifact) -> String {
    let mut out = String::from("variable,p_hat,weight,split_count\n");
    for (j, id) in a.metadata.variable_ids.iter().enumerate() {
        let _ = writeln!(
            out,
            "{id},{},{},{}",
            a.p_hat[j],
            a.weights.as_slice()[j],
            a.base_split_counts[j]
        );
    }
    out
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Flat key/value summary of the run.
pub fn metrics_summary(a: &ModelArtifact) -> Map<String, Value> {
    let m = &a.metadata;
    let mut out = Map::new();
    for (prefix, perf) in [("base", &m.base_oob), ("corf", &m.corf_oob)] {
        out.insert(format!("{prefix}_oob_auc"), m_opt(perf.auc));
        out.insert(format!("{prefix}_oob_brier"), num(perf.brier));
        out.insert(format!("{prefix}_oob_error_rate"), num(perf.error_rate));
    }
    out.insert("gamma".into(), num(m.gamma));
    for (g, s) in &m.gamma_scores {
        out.insert(format!("gamma_score.{g}"), num(*s));
    }
    out.insert("degraded".into(), json!(m.degraded));
    out.insert("uniform_fallback".into(), json!(m.uniform_fallback));
    out.insert("seed".into(), json!(m.seed));
    out.insert("ntree".into(), json!(a.forest.ntree()));
    out.insert("mtry".into(), json!(a.forest.params.mtry));
    out.insert("min_node_size".into(), json!(a.forest.params.min_node_size));
    out.insert("n_samples".into(), json!(m.labels.len()));
    out.insert("n_variables".into(), json!(a.forest.n_variables));
    out.insert("weight_support".into(), json!(a.weights.support().len()));
    match &a.codata {
        Some(CoDataSummary::Model(fit)) => {
            out.insert("codata_alpha0".into(), num(fit.alpha0));
            out.insert("codata_tau".into(), num(fit.tau));
            out.insert("codata_edf".into(), num(fit.edf));
            out.insert("codata_iterations".into(), json!(fit.diagnostics.iterations));
            out.insert("codata_gradient_norm".into(), num(fit.diagnostics.gradient_norm));
            out.insert("codata_sum_p_hat".into(), num(fit.p_hat.iter().sum()));
            for (name, c) in fit.coefficients() {
                out.insert(format!("coef.{name}"), num(c));
            }
            for s in &fit.smooths {
                out.insert(format!("lambda.{}", s.column), num(s.lambda));
            }
        }
        Some(CoDataSummary::Groups {
            names,
            selection_probability,
            ..
        }) => {
            for (n, p) in names.iter().zip(selection_probability) {
                out.insert(format!("group_p.{n}"), num(*p));
            }
        }
        None => {}
    }
    out
}

fn m_opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// Writes `roc_base.csv`, `roc_corf.csv`, `codata_curves.csv`,
/// `weights.csv`, `metrics.json` and, with a fitted co-data model,
/// `codata_model.json`.
pub fn emit_report(a: &ModelArtifact, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CorfError::io(dir, e))?;
    let m = &a.metadata;
    let mut files = vec![
        ("roc_base.csv", roc_csv(&roc_of(&m.oob_base, &m.labels)?)),
        ("roc_corf.csv", roc_csv(&roc_of(&m.oob_corf, &m.labels)?)),
        ("codata_curves.csv", curves_csv(a)),
        ("weights.csv", weights_csv(a)),
        (
            "metrics.json",
            serde_json::to_string_pretty(&Value::Object(metrics_summary(a))).expect("json") + "\n",
        ),
    ];
    if let Some(fit) = a.codata_fit() {
        files.push((
            "codata_model.json",
            serde_json::to_string_pretty(fit).expect("json") + "\n",
        ));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// CRC32 of a file's bytes.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CorfError::io(path, e))?;
    Ok(crc32fast::hash(&bytes))
}

/// Records the command, seed, parameters and input checksums of a run.
pub fn write_manifest(
    dir: impl AsRef<Path>,
    command: &str,
    seed: u64,
    params: Value,
    inputs: &[&Path],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CorfError::io(dir, e))?;
    let mut checks = Map::new();
    for p in inputs {
        checks.insert(
            p.display().to_string(),
            json!(format!("{:08x}", file_checksum(p)?)),
        );
    }
    let manifest = json!({
        "tool": format!("corf {}", env!("CARGO_PKG_VERSION")),
        "command": command,
        "seed": seed,
        "params": params,
        "inputs": checks,
    });
    let path = dir.join("manifest.json");
    write_file(&path, &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    Ok(path)
}
