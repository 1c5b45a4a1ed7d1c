use std::path::Path;
use std::process::Command;

fn corf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_corf"))
        .args(args)
        .env("CORF_THREADS", "2")
        .output()
        .expect("run corf")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) {
    let out = corf(&[
        "simulate", "--n", "50", "--p", "60", "--informative", "6", "--effect-size", "3", "--seed", "2",
        "--out", p(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_predict_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim);
    let file = |n: &str| sim.join(n).to_str().unwrap().to_string();
    let run_fit = |out: &Path| {
        corf(&[
            "fit", "--primary", &file("primary.csv"), "--labels", &file("labels.csv"), "--codata",
            &file("codata.csv"), "--schema", &file("schema.json"), "--ntree", "150", "--seed", "4",
            "--out", p(out),
        ])
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run_fit(dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "model.corf", "manifest.json", "metrics.json", "weights.csv", "roc_base.csv", "roc_corf.csv",
        "codata_curves.csv",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let pred = tmp.path().join("pred");
    let out = corf(&["predict", "--model", p(&a.join("model.corf")), "--primary", &file("primary.csv"), "--out", p(&pred)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);

    let rep = tmp.path().join("rep");
    assert!(corf(&["report", "--model", p(&a.join("model.corf")), "--out", p(&rep)]).status.success());
    assert_eq!(
        std::fs::read(rep.join("weights.csv")).unwrap(),
        std::fs::read(a.join("weights.csv")).unwrap()
    );
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim);
    let file = |n: &str| sim.join(n).to_str().unwrap().to_string();

    let missing = corf(&["fit", "--primary", "/nonexistent.csv", "--labels", &file("labels.csv"), "--out", p(tmp.path())]);
    assert_eq!(missing.status.code(), Some(4));
    assert_eq!(String::from_utf8_lossy(&missing.stderr).trim().lines().count(), 1);

    let bad_schema = tmp.path().join("bad.json");
    std::fs::write(&bad_schema, r#"{"columns":[{"name":"flag","kind":"nominal"}],"colour":1}"#).unwrap();
    let out = corf(&[
        "fit", "--primary", &file("primary.csv"), "--labels", &file("labels.csv"), "--codata",
        &file("codata.csv"), "--schema", p(&bad_schema), "--out", p(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let junk = tmp.path().join("junk.corf");
    std::fs::write(&junk, b"hello world").unwrap();
    let out = corf(&["report", "--model", p(&junk), "--out", p(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a CoRF model"));
}

#[test]
fn predict_requires_full_coverage_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim);
    let file = |n: &str| sim.join(n).to_str().unwrap().to_string();
    let fit = tmp.path().join("fit");
    let out = corf(&[
        "fit", "--primary", &file("primary.csv"), "--labels", &file("labels.csv"), "--ntree", "50",
        "--standardize", "--out", p(&fit),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // drop the last column of the matrix
    let text = std::fs::read_to_string(file("primary.csv")).unwrap();
    let cut: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    let partial = tmp.path().join("partial.csv");
    std::fs::write(&partial, cut).unwrap();
    let model = fit.join("model.corf");
    let out = corf(&["predict", "--model", p(&model), "--primary", p(&partial), "--out", p(&tmp.path().join("p1"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = corf(&[
        "predict", "--model", p(&model), "--primary", p(&partial), "--out", p(&tmp.path().join("p2")),
        "--allow-subset",
    ]);
    assert!(out.status.success());
}
