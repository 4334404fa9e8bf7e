//! Batch front-end: configuration schema, selectors, CSV artifacts and slope fits.
//!
//! ```text
//! defectfe <selector> --config <path> [--out <path>] [--seed <u64>] [--workers <n>]
//! ```
//!
//! Every CSV float is written with 17 significant digits. Provenance (tool version,
//! seed, configuration digest) goes to a sidecar file `<out>.meta` holding a single
//! line prefixed with `#`, so the CSV body depends only on configuration and seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cauchy_born::CauchyBornEvaluator;
use crate::coarse_grain::{ChainSpec, CoarseGrainConfig, CoarseGrainer};
use crate::error::{Error, Result};
use crate::oracles::{dense_g_n, harmonic_g_n, HarmonicParams};
use crate::potentials::{build_force_sequence, check_assumptions, make_potential, DefectSpec, ForceSpec, Potential, PotentialSpec};
use crate::quadrature::QuadratureConfig;
use crate::sampler::{estimate_g_n, MalaConfig};

pub const CONVERGENCE_HEADER: &str = "N,estimator,value,stderr,abs_err,ginf";
pub const GINF_HEADER: &str = "estimator,A,value";
pub const CHECK_HEADER: &str = "kappa1,kappa2,varsigma1,varsigma2,window_lo,window_hi,pass";
pub const TABLE_HEADER: &str = "A,W,W_prime,W_second";

pub const OUT_DIR_ENV: &str = "DEFECTFE_OUT_DIR";
pub const WORKERS_ENV: &str = "DEFECTFE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    GnSample,
    GnDense,
    Gncg,
    Ginf,
    Convergence,
    Check,
    CbTable,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::GnSample => "gn-sample",
            Selector::GnDense => "gn-dense",
            Selector::Gncg => "gncg",
            Selector::Ginf => "ginf",
            Selector::Convergence => "convergence",
            Selector::Check => "check",
            Selector::CbTable => "cb-table",
        }
    }
}

/// Finite-`N` estimators available to convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Sampled `G_N`.
    GnSample,
    /// Nested quadrature, `N ≤ 4` only.
    GnDense,
    /// Coarse-grained `G_N^cg`.
    Gncg,
    /// Harmonic closed form of `G_N`.
    Harmonic,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::GnSample => "gn-sample",
            Estimator::GnDense => "gn-dense",
            Estimator::Gncg => "gncg",
            Estimator::Harmonic => "harmonic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub step_size: f64,
    pub steps_per_stage: usize,
    pub burn_in_fraction: f64,
    pub replicas: usize,
    pub stages: usize,
    pub adapt: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = MalaConfig::default();
        SamplerSection {
            step_size: d.step_size,
            steps_per_stage: d.steps_per_stage,
            burn_in_fraction: d.burn_in_fraction,
            replicas: d.replicas,
            stages: d.stages,
            adapt: d.adapt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub m: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let d = QuadratureConfig::default();
        QuadratureSection {
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            m: d.m,
            max_subdivisions: d.max_subdivisions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseGrainSection {
    pub n_exact: usize,
    pub tail_budget: f64,
}

impl Default for CoarseGrainSection {
    fn default() -> Self {
        let d = CoarseGrainConfig::default();
        CoarseGrainSection {
            n_exact: d.n_exact,
            tail_budget: d.tail_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Defaults to the potential's window around `A`.
    pub window: Option<[f64; 2]>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    /// Defaults to `[A − 2, A + 2]`.
    pub range: Option<[f64; 2]>,
    pub n: Option<usize>,
}

fn default_beta() -> f64 {
    1.0
}

fn default_defect() -> PotentialSpec {
    PotentialSpec::Zero
}

fn default_forces() -> ForceSpec {
    ForceSpec::None
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Gncg]
}

/// Contents of a run configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "A")]
    pub a: f64,
    /// Inverse temperature; only `1` is supported.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub potential: PotentialSpec,
    #[serde(default = "default_defect")]
    pub defect: PotentialSpec,
    #[serde(default = "default_forces")]
    pub forces: ForceSpec,
    /// Repeat the run for each power-law exponent, overriding `forces`.
    #[serde(default)]
    pub p_sweep: Option<Vec<f64>>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub coarse_grain: CoarseGrainSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub cb_table: TableSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, hex_sha256(text.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta != 1.0 {
            return Err(Error::config("beta", format!("inverse temperature is fixed at 1, got {}", self.beta)));
        }
        if !self.a.is_finite() {
            return Err(Error::config("A", "must be finite"));
        }
        if self.n.is_empty() {
            return Err(Error::config("N", "list is empty"));
        }
        if let Some(&bad) = self.n.iter().find(|&&n| n < 2) {
            return Err(Error::config("N", format!("every chain length must be at least 2, got {bad}")));
        }
        if self.n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("N", "list must be strictly increasing"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators", "list is empty"));
        }
        if let Some(ps) = &self.p_sweep {
            if ps.is_empty() {
                return Err(Error::config("p_sweep", "list is empty"));
            }
            if let Some(p) = ps.iter().find(|p| !(**p > 2.0)) {
                return Err(Error::config("p_sweep", format!("exponents must exceed 2, got {p}")));
            }
        }
        make_potential(&self.potential).map_err(|e| Error::config("potential", e.to_string()))?;
        make_potential(&self.defect).map_err(|e| Error::config("defect", e.to_string()))?;
        self.mala(self.seed).validate().map_err(|e| Error::config("sampler", e.to_string()))?;
        self.quad().validate().map_err(|e| Error::config("quadrature", e.to_string()))?;
        Ok(())
    }

    pub fn mala(&self, seed: u64) -> MalaConfig {
        let s = &self.sampler;
        MalaConfig {
            step_size: s.step_size,
            steps_per_stage: s.steps_per_stage,
            burn_in_fraction: s.burn_in_fraction,
            seed,
            replicas: s.replicas,
            stages: s.stages,
            adapt: s.adapt,
        }
    }

    pub fn quad(&self) -> QuadratureConfig {
        let q = &self.quadrature;
        QuadratureConfig {
            rel_tol: q.rel_tol,
            abs_tol: q.abs_tol,
            m: q.m,
            max_subdivisions: q.max_subdivisions,
        }
    }

    fn cg_config(&self) -> CoarseGrainConfig {
        CoarseGrainConfig {
            n_exact: self.coarse_grain.n_exact,
            tail_budget: self.coarse_grain.tail_budget,
        }
    }

    /// `(label suffix, force spec)` for each load case of the run.
    fn force_cases(&self) -> Vec<(String, ForceSpec)> {
        match &self.p_sweep {
            Some(ps) => ps.iter().map(|&p| (format!("[p={p}]"), ForceSpec::PowerLaw { p })).collect(),
            None => vec![(String::new(), self.forces.clone())],
        }
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One row of the convergence schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub abs_err: f64,
    pub ginf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    /// Rows dropped as non-positive or below ten standard errors.
    pub excluded: usize,
}

/// Ordinary least squares of `log error` on `log N` over `(N, error, stderr)` rows.
pub fn fit_slope(rows: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(n, e, s)| *n > 0.0 && *e > 0.0 && e.is_finite() && *e >= 10.0 * s)
        .map(|(n, e, _)| (n.ln(), e.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientPoints {
            usable: usable.len(),
            total: rows.len(),
        });
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientPoints {
            usable: 1,
            total: rows.len(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
        excluded: rows.len() - usable.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Fit per estimator label, or the reason none was possible.
    pub fits: Vec<(String, std::result::Result<SlopeFit, String>)>,
}

/// Everything needed to evaluate one load case.
struct Case {
    label: String,
    psi: Potential,
    defect: DefectSpec,
    forces: ForceSpec,
}

impl Case {
    fn chain(&self, cfg: &RunConfig, n: usize) -> Result<ChainSpec> {
        ChainSpec::new(n, cfg.a, self.psi.clone(), self.defect.clone(), build_force_sequence(&self.forces, n)?)
    }
}

fn cases(cfg: &RunConfig) -> Result<Vec<Case>> {
    let psi = make_potential(&cfg.potential)?;
    let defect = DefectSpec::new(make_potential(&cfg.defect)?);
    Ok(cfg
        .force_cases()
        .into_iter()
        .map(|(label, forces)| Case {
            label,
            psi: psi.clone(),
            defect: defect.clone(),
            forces,
        })
        .collect())
}

fn harmonic_params(case: &Case, cfg: &RunConfig, n: usize) -> Result<HarmonicParams> {
    let alpha = case
        .psi
        .harmonic_stiffness()
        .ok_or_else(|| Error::config("estimators", "the harmonic estimator needs a harmonic potential"))?;
    let beta = if case.defect.is_zero() {
        0.0
    } else {
        case.defect
            .potential
            .harmonic_stiffness()
            .ok_or_else(|| Error::config("estimators", "the harmonic estimator needs a harmonic or zero defect"))?
    };
    if !matches!(case.forces, ForceSpec::None) {
        return Err(Error::config("estimators", "the harmonic estimator does not support loads"));
    }
    HarmonicParams::new(alpha, beta, cfg.a, n)
}

/// Convergence rows for the given estimators and every `N` and load case.
pub fn convergence(cfg: &RunConfig, estimators: &[Estimator], seed: u64) -> Result<ConvergenceReport> {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for case in cases(cfg)? {
        let cg = CoarseGrainer::new(case.psi.clone(), cfg.quad(), cfg.cg_config())?;
        let ginf = cg.g_inf(&case.chain(cfg, 2)?)?;
        for &est in estimators {
            let label = format!("{}{}", est.name(), case.label);
            let case_rows: Vec<ConvergenceRow> = cfg
                .n
                .par_iter()
                .map(|&n| {
                    let spec = case.chain(cfg, n)?;
                    let (value, stderr) = match est {
                        Estimator::GnSample => {
                            let e = estimate_g_n(&spec, &cfg.mala(seed))?;
                            (e.value, e.stderr)
                        }
                        Estimator::GnDense => (dense_g_n(&spec)?, 0.0),
                        Estimator::Gncg => (cg.g_n_cg(&spec)?, 0.0),
                        Estimator::Harmonic => (harmonic_g_n(&harmonic_params(&case, cfg, n)?)?, 0.0),
                    };
                    Ok(ConvergenceRow {
                        n,
                        estimator: label.clone(),
                        value,
                        stderr,
                        abs_err: (value - ginf).abs(),
                        ginf,
                    })
                })
                .collect::<Result<_>>()?;
            let points: Vec<(f64, f64, f64)> = case_rows.iter().map(|r| (r.n as f64, r.abs_err, r.stderr)).collect();
            fits.push((label, fit_slope(&points).map_err(|e| e.to_string())));
            rows.extend(case_rows);
        }
    }
    Ok(ConvergenceReport { rows, fits })
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(CONVERGENCE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.n,
            r.estimator,
            fmt(r.value),
            fmt(r.stderr),
            fmt(r.abs_err),
            fmt(r.ginf)
        );
    }
    s
}

/// Options supplied on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Digest of the configuration file, recorded in the provenance sidecar.
    pub config_sha: String,
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub meta_path: PathBuf,
    /// Lines intended for standard output.
    pub report: Vec<String>,
}

fn resolve_out(selector: Selector, cfg: &RunConfig, opts: &RunOptions) -> PathBuf {
    let path = opts
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", selector.name())));
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path,
    }
}

fn workers(opts: &RunOptions) -> Result<Option<usize>> {
    if let Some(w) = opts.workers {
        return Ok(Some(w));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::config(WORKERS_ENV, format!("not a worker count: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

/// Runs one selector and writes its CSV and provenance sidecar.
pub fn run(selector: Selector, cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers(opts)? {
        if w == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let (body, report) = pool.install(|| produce(selector, cfg, seed))?;

    let csv_path = resolve_out(selector, cfg, opts);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&csv_path, body)?;
    let meta = meta_path(&csv_path);
    let mut f = std::fs::File::create(&meta)?;
    writeln!(
        f,
        "# defectfe {} selector={} seed={} config_sha256={}",
        env!("CARGO_PKG_VERSION"),
        selector.name(),
        seed,
        opts.config_sha
    )?;
    Ok(RunSummary {
        csv_path,
        meta_path: meta,
        report,
    })
}

fn fit_lines(fits: &[(String, std::result::Result<SlopeFit, String>)]) -> Vec<String> {
    fits.iter()
        .map(|(label, fit)| match fit {
            Ok(f) => format!(
                "slope {label}: {:.4} (intercept {:.4}, rms residual {:.3e}, excluded {})",
                f.slope, f.intercept, f.residual, f.excluded
            ),
            Err(reason) => format!("slope {label}: unavailable ({reason})"),
        })
        .collect()
}

fn produce(selector: Selector, cfg: &RunConfig, seed: u64) -> Result<(String, Vec<String>)> {
    match selector {
        Selector::GnSample | Selector::GnDense | Selector::Gncg | Selector::Convergence => {
            let estimators: Vec<Estimator> = match selector {
                Selector::GnSample => vec![Estimator::GnSample],
                Selector::GnDense => vec![Estimator::GnDense],
                Selector::Gncg => vec![Estimator::Gncg],
                _ => cfg.estimators.clone(),
            };
            let report = convergence(cfg, &estimators, seed)?;
            Ok((convergence_csv(&report.rows), fit_lines(&report.fits)))
        }
        Selector::Ginf => {
            let mut s = String::from(GINF_HEADER);
            s.push('\n');
            let mut lines = Vec::new();
            for case in cases(cfg)? {
                let cg = CoarseGrainer::new(case.psi.clone(), cfg.quad(), cfg.cg_config())?;
                let v = cg.g_inf(&case.chain(cfg, 2)?)?;
                let label = format!("ginf{}", case.label);
                let _ = writeln!(s, "{label},{},{}", fmt(cfg.a), fmt(v));
                lines.push(format!("{label} = {v:.12}"));
            }
            Ok((s, lines))
        }
        Selector::Check => {
            let psi = make_potential(&cfg.potential)?;
            let defect = DefectSpec::new(make_potential(&cfg.defect)?);
            let (lo, hi) = cfg
                .check
                .window
                .map(|[lo, hi]| (lo, hi))
                .unwrap_or_else(|| Potential::default_window(cfg.a));
            let r = check_assumptions(&psi, &defect, (lo, hi), cfg.check.grid_points.unwrap_or(1000))?;
            let body = format!(
                "{CHECK_HEADER}\n{},{},{},{},{},{},{}\n",
                fmt(r.kappa1),
                fmt(r.kappa2),
                fmt(r.varsigma1),
                fmt(r.varsigma2),
                fmt(lo),
                fmt(hi),
                r.pass
            );
            let line = format!(
                "kappa1={} kappa2={} varsigma1={} varsigma2={} on [{lo}, {hi}]: {}",
                r.kappa1,
                r.kappa2,
                r.varsigma1,
                r.varsigma2,
                if r.pass { "pass" } else { "FAIL" }
            );
            Ok((body, vec![line]))
        }
        Selector::CbTable => {
            let psi = make_potential(&cfg.potential)?;
            let [lo, hi] = cfg.cb_table.range.unwrap_or([cfg.a - 2.0, cfg.a + 2.0]);
            let n = cfg.cb_table.n.unwrap_or(65);
            let table = CauchyBornEvaluator::new(psi, QuadratureConfig { m: cfg.quad().m, ..QuadratureConfig::tight() })?
                .tabulate(lo, hi, n)?;
            let mut buf = Vec::new();
            table.write_table_csv(&mut buf)?;
            let body = String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))?;
            Ok((body, vec![format!("tabulated W on [{lo}, {hi}] with {n} nodes")]))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "defectfe", version, about = "Defect-formation free energy of a 1D chain")]
pub struct Cli {
    /// Computation to run.
    #[arg(value_enum)]
    pub selector: Selector,
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV path (default: <selector>.csv, under $DEFECTFE_OUT_DIR if set).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: $DEFECTFE_WORKERS or all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Parses arguments, runs, prints the report, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = RunConfig::load(&cli.config).and_then(|(cfg, sha)| {
        let opts = RunOptions {
            out: cli.out.clone(),
            seed: cli.seed,
            workers: cli.workers,
            config_sha: sha,
        };
        run(cli.selector, &cfg, &opts)
    });
    match result {
        Ok(summary) => {
            for line in &summary.report {
                println!("{line}");
            }
            println!("wrote {}", summary.csv_path.display());
            0
        }
        Err(e) => {
            eprintln!("defectfe {}: {e}", cli.selector.name());
            e.exit_code()
        }
    }
}
