//! Bundled configurations parse, run at reduced scale, and write deterministic CSV.

use std::fs;
use std::path::{Path, PathBuf};

use defectfe::cli::{main_with_args, run, RunConfig, RunOptions, Selector, CHECK_HEADER, CONVERGENCE_HEADER, TABLE_HEADER};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn reduced(name: &str) -> RunConfig {
    let (mut cfg, _) = RunConfig::load(&bundled(name)).unwrap();
    cfg.n.truncate(3);
    cfg.sampler.steps_per_stage = 200;
    cfg.sampler.replicas = 4;
    cfg.sampler.stages = 4;
    cfg
}

fn run_to(dir: &Path, file: &str, selector: Selector, cfg: &RunConfig) -> String {
    let opts = RunOptions {
        out: Some(dir.join(file)),
        workers: Some(2),
        config_sha: "test".into(),
        ..RunOptions::default()
    };
    let summary = run(selector, cfg, &opts).unwrap();
    let meta = fs::read_to_string(&summary.meta_path).unwrap();
    assert!(meta.starts_with('#') && meta.lines().count() == 1, "{meta}");
    fs::read_to_string(summary.csv_path).unwrap()
}

fn assert_convergence_schema(csv: &str) {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CONVERGENCE_HEADER));
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "{line}");
        fields[0].parse::<usize>().unwrap();
        for f in &fields[2..] {
            let x: f64 = f.parse().unwrap();
            assert!(x.is_finite(), "{line}");
        }
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn bundled_configs_run_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["quartic_defect.cfg", "forces_decay.cfg", "harmonic_validation.cfg"] {
        let mut cfg = reduced(name);
        if let Some(ps) = cfg.p_sweep.as_mut() {
            ps.truncate(2);
        }
        let first = run_to(dir.path(), "a.csv", Selector::Convergence, &cfg);
        let second = run_to(dir.path(), "b.csv", Selector::Convergence, &cfg);
        assert_convergence_schema(&first);
        assert_eq!(first, second, "{name} is not reproducible");
        let series = cfg.estimators.len() * cfg.p_sweep.as_ref().map_or(1, Vec::len);
        assert_eq!(first.lines().count(), 1 + series * cfg.n.len(), "{name}");
    }
}

#[test]
fn check_selector_reports_constant_harmonic_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = reduced("harmonic_validation.cfg");
    let csv = run_to(dir.path(), "check.csv", Selector::Check, &cfg);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CHECK_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k1: f64 = row[0].parse().unwrap();
    let k2: f64 = row[1].parse().unwrap();
    assert!((k1 - 2.0).abs() < 1e-12 && (k2 - 2.0).abs() < 1e-12);
    assert_eq!(row[6], "true");
}

#[test]
fn table_and_limit_selectors_write_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reduced("quartic_defect.cfg");
    cfg.cb_table.n = Some(9);
    let table = run_to(dir.path(), "table.csv", Selector::CbTable, &cfg);
    assert_eq!(table.lines().next(), Some(TABLE_HEADER));
    assert_eq!(table.lines().count(), 10);
    let ginf = run_to(dir.path(), "ginf.csv", Selector::Ginf, &cfg);
    assert_eq!(ginf.lines().count(), 2);
    assert!(ginf.lines().nth(1).unwrap().starts_with("ginf,"));
}

#[test]
fn exit_codes_distinguish_config_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("harmonic_validation.cfg")).unwrap();
    let bad_beta = dir.path().join("beta.cfg");
    fs::write(&bad_beta, text.replace("A = 1.0", "A = 1.0\nbeta = 2.0")).unwrap();
    let out = dir.path().join("x.csv");
    let args = |cfg: &Path, sel: &str| {
        vec![
            "defectfe".to_string(),
            sel.to_string(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    assert_eq!(main_with_args(args(&bad_beta, "gncg")), 2);
    assert_eq!(main_with_args(args(&dir.path().join("missing.cfg"), "gncg")), 2);
    assert_eq!(main_with_args(vec!["defectfe", "nonsense"]), 2);

    // A five-bond dense request is a configuration problem.
    assert_eq!(main_with_args(args(&bundled("quartic_defect.cfg"), "gn-dense")), 2);

    let tiny = dir.path().join("tiny.cfg");
    fs::write(
        &tiny,
        "A = 1.0\nN = [2, 3, 4]\n[potential]\nkind = \"harmonic\"\nstiffness = 1.0\n[defect]\nkind = \"harmonic\"\nstiffness = 1.0\n",
    )
    .unwrap();
    assert_eq!(main_with_args(args(&tiny, "gn-dense")), 0);
    assert!(fs::read_to_string(&out).unwrap().starts_with(CONVERGENCE_HEADER));

    // A subdivision budget too small to meet tolerance is a numerical failure.
    let starved = dir.path().join("starved.cfg");
    let body = fs::read_to_string(&tiny).unwrap();
    fs::write(&starved, format!("{body}[quadrature]\nmax_subdivisions = 1\nrel_tol = 1e-15\nabs_tol = 1e-300\n")).unwrap();
    assert_eq!(main_with_args(args(&starved, "gncg")), 3);
}
