//! Executes one experiment and persists its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use exittails::estimators::{self, TailEstimate, KS_CRIT_5};
use exittails::linear_exact::{self, LinearModel};
use exittails::linearizer::{build_map, DEFAULT_MAP_TOL};
use exittails::sde_sim::{self, LinearizedSetting, SimTarget, Threshold};
use exittails::theory::{self, Branch};
use exittails::{validate_model, Job, Map, Model, Noise, Record, Side};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TESTS_FILE: &str = "tests.csv";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Library(#[from] exittails::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub role: String,
    /// relative to the manifest's directory
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub artifact_version: String,
    pub master_seed: u64,
    pub parallelism: usize,
    pub created_utc: String,
    pub wall_clock_seconds: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
    pub config: ExperimentConfig,
}

impl ResultManifest {
    pub fn file(&self, role: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.role == role)
    }
}

/// A finished run: where it went and what it says.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: ResultManifest,
}

/// Failure after the output directory was created; the partial manifest is
/// on disk at `manifest_path`.
#[derive(Debug, thiserror::Error)]
#[error("{source} (partial manifest at {})", manifest_path.display())]
pub struct RunFailure {
    pub manifest_path: PathBuf,
    #[source]
    pub source: RunError,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn write(&mut self, role: &str, file: &str, bytes: &[u8]) -> Result<(), RunError> {
        fs::write(self.dir.join(file), bytes)?;
        self.files.push(FileEntry { role: role.into(), path: file.into() });
        Ok(())
    }
}

pub fn timestamp(t: &chrono::DateTime<chrono::Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

/// Creates `root/<name>-<UTC timestamp>`, adding a numeric suffix if that
/// directory already exists.
pub fn fresh_dir(root: &Path, name: &str, stamp: &str) -> Result<PathBuf, RunError> {
    fs::create_dir_all(root)?;
    let base = format!("{name}-{stamp}");
    for k in 0u32.. {
        let candidate = if k == 0 { root.join(&base) } else { root.join(format!("{base}-{k}")) };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

/// Runs the experiment and writes its outputs under `out_root`.
pub fn run(config: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome, RunFailure> {
    let started = Instant::now();
    let now = chrono::Utc::now();
    let stamp = timestamp(&now);
    let dir = fresh_dir(out_root, &config.name, &stamp)
        .map_err(|source| RunFailure { manifest_path: out_root.join(MANIFEST_FILE), source })?;
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    let result = execute(config, &mut out);
    let manifest = ResultManifest {
        name: config.name.clone(),
        kind: config.kind,
        artifact_version: ARTIFACT_VERSION.into(),
        master_seed: config.master_seed,
        parallelism: config.parallelism,
        created_utc: now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        status: if result.is_ok() { RunStatus::Ok } else { RunStatus::Failed },
        error: result.as_ref().err().map(|e| e.to_string()),
        files: out.files,
        config: config.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(RunError::from)
        .and_then(|bytes| fs::write(&manifest_path, bytes).map_err(RunError::from));
    match (result, written) {
        (Ok(()), Ok(())) => Ok(RunOutcome { dir, manifest }),
        (Err(source), _) | (Ok(()), Err(source)) => Err(RunFailure { manifest_path, source }),
    }
}

fn execute(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    match cfg.kind {
        ExperimentKind::Validate => run_validate(cfg, out),
        ExperimentKind::Linearize => run_linearize(cfg, out),
        ExperimentKind::Predict => run_predict(cfg, out),
        ExperimentKind::TailX | ExperimentKind::TailY | ExperimentKind::LinearTail => run_tail(cfg, out),
        ExperimentKind::ConditionalLaw => run_conditional(cfg, out),
        ExperimentKind::Equidist => run_equidist(cfg, out),
        ExperimentKind::Coupling => run_coupling(cfg, out),
    }
}

fn model_and_map(cfg: &ExperimentConfig) -> Result<(Model, Map), RunError> {
    let model = cfg.model.build()?;
    let map = build_map(&model, cfg.grid_points, DEFAULT_MAP_TOL)?;
    Ok((model, map))
}

fn c_eps(cfg: &ExperimentConfig, noise: &Noise) -> f64 {
    cfg.c_eps.unwrap_or(noise.c)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| RunError::Setup(e.to_string()))
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

/// Columns of `tests.csv`.
pub const TESTS_HEADER: [&str; 6] = ["test", "label", "statistic", "critical", "pass", "detail"];

struct TestRow {
    test: &'static str,
    label: String,
    statistic: f64,
    critical: f64,
    pass: bool,
    detail: String,
}

impl TestRow {
    fn cells(&self) -> Vec<String> {
        vec![s(self.test), self.label.clone(), s(self.statistic), s(self.critical), s(self.pass), self.detail.clone()]
    }
}

fn write_tests(out: &mut Outputs, tests: &[TestRow]) -> Result<(), RunError> {
    let rows: Vec<Vec<String>> = tests.iter().map(TestRow::cells).collect();
    out.write("tests", TESTS_FILE, &csv_bytes(&TESTS_HEADER, &rows)?)
}

fn run_validate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let model = cfg.model.build()?;
    let report = validate_model(&model, 10_001, exittails::model::DEFAULT_VALIDATION_TOL)?;
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| vec![s(c.name), s(c.passed), s(c.measured), c.detail.clone()])
        .collect();
    out.write("validation", SUMMARY_FILE, &csv_bytes(&["check", "passed", "measured", "detail"], &rows)?)?;
    let tests: Vec<TestRow> = report
        .checks
        .iter()
        .map(|c| TestRow {
            test: "validation",
            label: c.name.into(),
            statistic: c.measured,
            critical: f64::NAN,
            pass: c.passed,
            detail: c.detail.clone(),
        })
        .collect();
    write_tests(out, &tests)
}

fn run_linearize(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let (model, map) = model_and_map(cfg)?;
    let rows: Vec<Vec<String>> = map.table().map(|r| vec![s(r.x), s(r.f_x)]).collect();
    out.write("table", "table.csv", &csv_bytes(&["x", "f_x"], &rows)?)?;
    let summary = vec![
        vec![s("lambda"), s(model.lambda())],
        vec![s("f_qminus"), s(map.f_qminus())],
        vec![s("f_qplus"), s(map.f_qplus())],
        vec![s("accuracy"), s(map.accuracy())],
        vec![s("grid_points"), s(map.len())],
    ];
    out.write("summary", SUMMARY_FILE, &csv_bytes(&["key", "value"], &summary)?)
}

/// Columns of a prediction table.
pub const PREDICT_HEADER: [&str; 10] =
    ["quantity", "epsilon", "alpha", "shift", "start", "side", "value", "coefficient", "eps_power", "warning"];

fn prediction_row(p: &exittails::Prediction) -> Vec<String> {
    vec![
        serde_json::to_value(p.quantity).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        s(p.inputs.epsilon),
        s(p.inputs.alpha),
        s(p.inputs.shift),
        s(p.inputs.start),
        side_name(p.inputs.side).into(),
        s(p.value),
        s(p.coefficient),
        s(p.eps_power),
        p.warning.clone().unwrap_or_default(),
    ]
}

fn side_name(b: Branch) -> &'static str {
    match b {
        Branch::Left => "left",
        Branch::Right => "right",
        Branch::Total => "total",
    }
}

const BRANCHES: [Branch; 3] = [Branch::Total, Branch::Left, Branch::Right];

fn run_predict(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let (model, map) = model_and_map(cfg)?;
    let lam = model.lambda();
    let mut rows = Vec::new();
    for &eps in &cfg.epsilon {
        let noise = Noise::new(eps)?;
        for &alpha in &cfg.alpha {
            for &t in &cfg.t {
                for side in BRANCHES {
                    let p = theory::main_tail_prediction(&map, &model, &noise, cfg.x0, alpha, t, side)?;
                    rows.push(prediction_row(&p));
                }
            }
            let mut starts = vec![cfg.y0];
            if cfg.z != cfg.y0 {
                starts.push(cfg.z);
            }
            for &c in &cfg.c {
                for &start in &starts {
                    for side in BRANCHES {
                        let p = theory::small_nbhd_prediction(start, alpha, c, cfg.beta, &noise, lam, model.sigma0(), side)?;
                        rows.push(prediction_row(&p));
                    }
                }
            }
        }
        for (right, name) in [(false, "left"), (true, "right")] {
            let t = theory::deterministic_transit(&map, &model, &noise, cfg.beta, right)?;
            rows.push(vec![
                s("deterministic_transit"),
                s(eps),
                String::new(),
                String::new(),
                s(cfg.beta),
                s(name),
                s(t),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
    }
    let law = theory::conditional_limit_law(&map, lam);
    for (q, side, v) in [
        ("conditional_side_weight", "left", law.weight_left),
        ("conditional_side_weight", "right", law.weight_right),
        ("conditional_overshoot_rate", "total", law.rate),
    ] {
        rows.push(vec![s(q), String::new(), String::new(), String::new(), String::new(), s(side), s(v), String::new(), String::new(), String::new()]);
    }
    out.write("predictions", SUMMARY_FILE, &csv_bytes(&PREDICT_HEADER, &rows)?)
}

/// Columns of the tail summary.
pub const TAIL_HEADER: [&str; 16] = [
    "threshold_label",
    "epsilon",
    "alpha",
    "shift",
    "start",
    "side",
    "threshold_time",
    "n",
    "survivors",
    "p_hat",
    "ci_lo",
    "ci_hi",
    "theory",
    "ratio",
    "log_eps",
    "log_p_hat",
];

/// One threshold of a tail batch with its prediction per side.
struct TailPoint {
    eps: f64,
    alpha: f64,
    shift: f64,
    threshold: Threshold<f64>,
    theory: [f64; 3],
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    path_index: u64,
    seed: u64,
    tau: f64,
    side: Side,
    x_exit: f64,
    survived: BTreeMap<&'a str, bool>,
}

fn append_records(buf: &mut Vec<u8>, records: &[Record], labels: &[String]) -> Result<(), RunError> {
    for r in records {
        let survived = labels.iter().map(String::as_str).zip(r.crossed_thresholds.iter().map(|f| f.survived)).collect();
        let line = JsonRecord { path_index: r.path_index, seed: r.seed, tau: r.tau, side: r.side, x_exit: r.x_exit, survived };
        serde_json::to_writer(&mut *buf, &line)?;
        buf.push(b'\n');
    }
    Ok(())
}

pub fn threshold_label(kind: ExperimentKind, eps: f64, alpha: f64, shift: f64) -> String {
    let shift_key = if kind == ExperimentKind::TailX || kind == ExperimentKind::ConditionalLaw { "t" } else { "C" };
    format!("eps={eps};alpha={alpha};{shift_key}={shift}")
}

/// Builds the batch job for one epsilon together with its thresholds and
/// predictions.
fn tail_job(
    cfg: &ExperimentConfig,
    model: &Model,
    map: &Map,
    eps: f64,
) -> Result<(Job, Vec<TailPoint>), RunError> {
    let noise = Noise::new(eps)?;
    let lam = model.lambda();
    let sigma0 = model.sigma0();
    let mut points = Vec::new();
    let kind = cfg.kind;
    let full_interval = matches!(kind, ExperimentKind::TailX | ExperimentKind::ConditionalLaw);
    let shifts = if full_interval { &cfg.t } else { &cfg.c };
    let ce = c_eps(cfg, &noise);
    for &alpha in &cfg.alpha {
        for &shift in shifts {
            let (time, theory_vals) = if full_interval {
                let time = alpha / lam * noise.log_inv() + shift;
                let mut v = [0.0; 3];
                for (k, side) in BRANCHES.into_iter().enumerate() {
                    v[k] = theory::main_tail_prediction(map, model, &noise, cfg.x0, alpha, shift, side)?.value;
                }
                (time, v)
            } else {
                let time = (alpha - cfg.beta) / lam * noise.log_inv() - shift + ce;
                let start = if kind == ExperimentKind::TailY { cfg.y0 } else { cfg.z };
                let mut v = [0.0; 3];
                for (k, side) in BRANCHES.into_iter().enumerate() {
                    v[k] = theory::small_nbhd_prediction(start, alpha, shift, cfg.beta, &noise, lam, sigma0, side)?.value;
                }
                (time, v)
            };
            if !(time > 0.0) {
                return Err(RunError::Setup(format!("threshold time {time} is not positive (eps={eps}, alpha={alpha})")));
            }
            points.push(TailPoint {
                eps,
                alpha,
                shift,
                threshold: Threshold { label: threshold_label(kind, eps, alpha, shift), time },
                theory: theory_vals,
            });
        }
    }
    let t_max = points.iter().map(|p| p.threshold.time).fold(0.0, f64::max);
    let target = match kind {
        ExperimentKind::TailX | ExperimentKind::ConditionalLaw => {
            let x0 = eps * cfg.x0;
            if !model.contains(x0) {
                return Err(RunError::Setup(format!("start eps*x0 = {x0} is outside the interval")));
            }
            SimTarget::X { model: model.clone(), noise, x0 }
        }
        ExperimentKind::TailY => SimTarget::Y {
            setting: LinearizedSetting::new(model.clone(), map.clone()),
            noise,
            y0: eps * cfg.y0,
            beta: cfg.beta,
            backend: cfg.backend,
        },
        _ => {
            let first_alpha = cfg.alpha[0];
            let m = LinearModel::new(lam, sigma0, eps, cfg.z, cfg.beta, first_alpha, cfg.c[0])?
                .with_delta(cfg.delta_eps)?
                .with_c_eps(ce);
            SimTarget::Linear { model: m }
        }
    };
    let max_time = if kind == ExperimentKind::LinearTail { 10.0 * t_max } else { t_max + 10.0 / lam };
    let job = Job {
        target,
        thresholds: points.iter().map(|p| p.threshold.clone()).collect(),
        dt: cfg.dt,
        max_time,
        n_paths: cfg.n_paths,
        master_seed: cfg.master_seed,
        brownian_substeps: 1,
        track_martingale: false,
    };
    Ok((job, points))
}

fn tail_rows(
    cfg: &ExperimentConfig,
    points: &[TailPoint],
    summary: &exittails::BatchSummary,
    rows: &mut Vec<Vec<String>>,
    tests: &mut Vec<TestRow>,
    fit_input: &mut BTreeMap<(u64, u64), Vec<(f64, TailEstimate)>>,
) -> Result<(), RunError> {
    let start = match cfg.kind {
        ExperimentKind::TailX | ExperimentKind::ConditionalLaw => cfg.x0,
        ExperimentKind::TailY => cfg.y0,
        _ => cfg.z,
    };
    for (p, count) in points.iter().zip(&summary.thresholds) {
        for (k, side) in BRANCHES.into_iter().enumerate() {
            let survivors = match side {
                Branch::Total => count.survivors,
                Branch::Left => count.survivors_left,
                Branch::Right => count.survivors_right,
            };
            let est = TailEstimate::from_counts(summary.n_paths, survivors, p.threshold.label.clone())?;
            let theory = p.theory[k];
            let ratio = est.p_hat / theory;
            rows.push(vec![
                p.threshold.label.clone(),
                s(p.eps),
                s(p.alpha),
                s(p.shift),
                s(start),
                s(side_name(side)),
                s(p.threshold.time),
                s(est.n),
                s(est.survivors),
                s(est.p_hat),
                s(est.ci_lo),
                s(est.ci_hi),
                s(theory),
                s(ratio),
                s(p.eps.ln()),
                s(est.p_hat.ln()),
            ]);
            let critical = (3.0 * est.half_width()).max(cfg.tolerance * theory);
            let statistic = (est.p_hat - theory).abs();
            tests.push(TestRow {
                test: "tail_vs_theory",
                label: format!("{};side={}", p.threshold.label, side_name(side)),
                statistic,
                critical,
                pass: statistic <= critical,
                detail: format!("p_hat={} theory={theory} ratio={ratio}", est.p_hat),
            });
            if side == Branch::Total {
                fit_input.entry((p.alpha.to_bits(), p.shift.to_bits())).or_default().push((p.eps, est));
            }
        }
    }
    Ok(())
}

fn fit_tests(fit_input: &BTreeMap<(u64, u64), Vec<(f64, TailEstimate)>>, tests: &mut Vec<TestRow>) {
    for (&(a, sh), pairs) in fit_input {
        if pairs.len() < 3 {
            continue;
        }
        let (alpha, shift) = (f64::from_bits(a), f64::from_bits(sh));
        let label = format!("alpha={alpha};shift={shift}");
        match estimators::exponent_regression(pairs) {
            Ok(fit) => {
                let dev = (fit.slope - (alpha - 1.0)).abs();
                tests.push(TestRow {
                    test: "exponent_regression",
                    label,
                    statistic: fit.slope,
                    critical: alpha - 1.0,
                    pass: dev <= 0.15 && fit.r_squared >= 0.98,
                    detail: format!(
                        "slope={} stderr={} intercept={} r2={}",
                        fit.slope, fit.slope_stderr, fit.intercept, fit.r_squared
                    ),
                });
            }
            Err(e) => tests.push(TestRow {
                test: "exponent_regression",
                label,
                statistic: f64::NAN,
                critical: alpha - 1.0,
                pass: false,
                detail: e.to_string(),
            }),
        }
    }
}

fn run_tail(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let (model, map) = model_and_map(cfg)?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    let mut fit_input = BTreeMap::new();
    for &eps in &cfg.epsilon {
        let (job, points) = tail_job(cfg, &model, &map, eps)?;
        let batch = sde_sim::run_batch(&job, cfg.parallelism)?;
        let labels: Vec<String> = points.iter().map(|p| p.threshold.label.clone()).collect();
        append_records(&mut records, &batch.records, &labels)?;
        tail_rows(cfg, &points, &batch.summary, &mut rows, &mut tests, &mut fit_input)?;
    }
    fit_tests(&fit_input, &mut tests);
    out.write("records", RECORDS_FILE, &records)?;
    out.write("summary", SUMMARY_FILE, &csv_bytes(&TAIL_HEADER, &rows)?)?;
    write_tests(out, &tests)
}

fn run_conditional(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let (model, map) = model_and_map(cfg)?;
    let law = theory::conditional_limit_law(&map, model.lambda());
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    let mut fit_input = BTreeMap::new();
    for &eps in &cfg.epsilon {
        let (job, points) = tail_job(cfg, &model, &map, eps)?;
        let batch = sde_sim::run_batch(&job, cfg.parallelism)?;
        let labels: Vec<String> = points.iter().map(|p| p.threshold.label.clone()).collect();
        append_records(&mut records, &batch.records, &labels)?;
        tail_rows(cfg, &points, &batch.summary, &mut rows, &mut tests, &mut fit_input)?;
        for (k, p) in points.iter().enumerate() {
            let label = p.threshold.label.clone();
            let (over, censored) = estimators::overshoots(&batch.records, k);
            match estimators::ks_exponential(&over, law.rate) {
                Ok(ks) => {
                    let critical = KS_CRIT_5 / (ks.n as f64).sqrt() * (1.0 + cfg.ks_slack);
                    tests.push(TestRow {
                        test: "ks_exponential",
                        label: label.clone(),
                        statistic: ks.statistic,
                        critical,
                        pass: ks.statistic < critical,
                        detail: format!("n={} p_value={} censored={censored}", ks.n, ks.p_value),
                    });
                    let mean = over.iter().sum::<f64>() / over.len() as f64;
                    let rate = 1.0 / mean;
                    let rel = (rate / law.rate - 1.0).abs();
                    tests.push(TestRow {
                        test: "overshoot_rate",
                        label: label.clone(),
                        statistic: rate,
                        critical: law.rate,
                        pass: rel <= cfg.tolerance,
                        detail: format!("relative deviation {rel}"),
                    });
                }
                Err(e) => tests.push(TestRow {
                    test: "ks_exponential",
                    label: label.clone(),
                    statistic: f64::NAN,
                    critical: f64::NAN,
                    pass: false,
                    detail: e.to_string(),
                }),
            }
            match estimators::side_split_records(&batch.records, k, law.weight_right) {
                Ok(split) => tests.push(TestRow {
                    test: "side_split",
                    label,
                    statistic: split.z_score,
                    critical: estimators::Z95,
                    pass: split.pass,
                    detail: format!("right={} total={} weight_right={}", split.right, split.total, split.weight_right),
                }),
                Err(e) => tests.push(TestRow {
                    test: "side_split",
                    label,
                    statistic: f64::NAN,
                    critical: estimators::Z95,
                    pass: false,
                    detail: e.to_string(),
                }),
            }
        }
    }
    out.write("records", RECORDS_FILE, &records)?;
    out.write("summary", SUMMARY_FILE, &csv_bytes(&TAIL_HEADER, &rows)?)?;
    write_tests(out, &tests)
}

/// Deviation bound on the equidistribution histogram.
pub const EQUIDIST_MAX_DEVIATION: f64 = 0.05;
/// Allowed distance of the test-function functional from 1/2.
pub const EQUIDIST_FUNCTIONAL_TOL: f64 = 0.05;

fn run_equidist(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let model = cfg.model.build()?;
    let (lam, sigma0) = (model.lambda(), model.sigma0());
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for &eps in &cfg.epsilon {
        let noise = Noise::new(eps)?;
        for &alpha in &cfg.alpha {
            for &c in &cfg.c {
                let m = LinearModel::new(lam, sigma0, eps, cfg.z, cfg.beta, alpha, c)?
                    .with_delta(cfg.delta_eps)?
                    .with_c_eps(c_eps(cfg, &noise));
                let label = threshold_label(cfg.kind, eps, alpha, c);
                let rep = linear_exact::equidistribution_experiment(
                    &m,
                    cfg.n_paths,
                    cfg.bins,
                    cfg.delta,
                    cfg.master_seed,
                    cfg.dt,
                    cfg.parallelism,
                )?;
                let mut line = serde_json::to_value(&rep)?;
                line["label"] = serde_json::Value::String(label.clone());
                serde_json::to_writer(&mut lines, &line)?;
                lines.push(b'\n');
                let half = 1.0 - cfg.delta;
                let width = 2.0 * half / cfg.bins as f64;
                for (k, &count) in rep.histogram.iter().enumerate() {
                    let lo = -half + width * k as f64;
                    let freq = count as f64 / rep.n_conditioned as f64;
                    rows.push(vec![
                        label.clone(),
                        s(k),
                        s(lo),
                        s(lo + width),
                        s(count),
                        s(rep.n_conditioned),
                        s(freq / width),
                    ]);
                }
                tests.push(TestRow {
                    test: "equidist_max_deviation",
                    label: label.clone(),
                    statistic: rep.max_deviation,
                    critical: EQUIDIST_MAX_DEVIATION,
                    pass: rep.max_deviation < EQUIDIST_MAX_DEVIATION,
                    detail: format!("n_conditioned={} of {}", rep.n_conditioned, rep.n_paths),
                });
                let dev = (rep.functional - rep.functional_target).abs();
                tests.push(TestRow {
                    test: "equidist_functional",
                    label,
                    statistic: rep.functional,
                    critical: EQUIDIST_FUNCTIONAL_TOL,
                    pass: dev <= EQUIDIST_FUNCTIONAL_TOL,
                    detail: format!("target {} warning={}", rep.functional_target, rep.warning.unwrap_or_default()),
                });
            }
        }
    }
    out.write("records", RECORDS_FILE, &lines)?;
    out.write(
        "summary",
        SUMMARY_FILE,
        &csv_bytes(&["label", "bin", "lo", "hi", "count", "n_conditioned", "density"], &rows)?,
    )?;
    write_tests(out, &tests)
}

/// Bound on the fraction of coupled paths that exceed the deviation level.
pub const COUPLING_MAX_FRACTION: f64 = 0.01;

#[derive(Serialize)]
struct CouplingLine<'a> {
    label: &'a str,
    path_index: u64,
    seed: u64,
    sup_delta: f64,
    horizon: f64,
    stopped_at: f64,
    threshold: f64,
    exceeded: bool,
}

fn run_coupling(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let (model, map) = model_and_map(cfg)?;
    let setting = LinearizedSetting::new(model.clone(), map);
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for &eps in &cfg.epsilon {
        let noise = Noise::new(eps)?;
        for &alpha in &cfg.alpha {
            let horizon = sde_sim::coupling_horizon(alpha, cfg.beta, model.lambda(), &noise, cfg.coupling_l);
            let label = format!("eps={eps};alpha={alpha}");
            let recs = sde_sim::run_coupled_batch(
                &setting,
                &noise,
                eps * cfg.y0,
                cfg.master_seed,
                cfg.n_paths,
                cfg.dt,
                horizon,
                cfg.beta,
                cfg.beta_prime,
                alpha,
                cfg.parallelism,
            )?;
            for (i, r) in recs.iter().enumerate() {
                let line = CouplingLine {
                    label: &label,
                    path_index: i as u64,
                    seed: exittails::rng::derive_seed(cfg.master_seed, i as u64),
                    sup_delta: r.sup_delta,
                    horizon: r.horizon,
                    stopped_at: r.stopped_at,
                    threshold: r.threshold,
                    exceeded: r.exceeded,
                };
                serde_json::to_writer(&mut lines, &line)?;
                lines.push(b'\n');
            }
            let exceeded = recs.iter().filter(|r| r.exceeded).count() as u64;
            let est = TailEstimate::from_counts(recs.len() as u64, exceeded, label.clone())?;
            let max_sup = recs.iter().map(|r| r.sup_delta).fold(0.0, f64::max);
            rows.push(vec![
                label.clone(),
                s(eps),
                s(alpha),
                s(horizon),
                s(recs[0].threshold),
                s(est.n),
                s(exceeded),
                s(est.p_hat),
                s(est.ci_lo),
                s(est.ci_hi),
                s(max_sup),
            ]);
            tests.push(TestRow {
                test: "coupling_exceedance",
                label,
                statistic: est.p_hat,
                critical: COUPLING_MAX_FRACTION,
                pass: est.p_hat < COUPLING_MAX_FRACTION,
                detail: format!("max sup_delta={max_sup}"),
            });
        }
    }
    out.write("records", RECORDS_FILE, &lines)?;
    out.write(
        "summary",
        SUMMARY_FILE,
        &csv_bytes(
            &["label", "epsilon", "alpha", "horizon", "threshold", "n", "exceeded", "fraction", "ci_lo", "ci_hi", "max_sup_delta"],
            &rows,
        )?,
    )?;
    write_tests(out, &tests)
}

/// Reads back `tests.csv` of a finished run as `(test, label, pass)`.
pub fn read_tests(dir: &Path) -> Result<Vec<(String, String, bool)>, RunError> {
    let mut r = csv::Reader::from_path(dir.join(TESTS_FILE))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[1].to_string(), &rec[4] == "true"));
    }
    Ok(out)
}
