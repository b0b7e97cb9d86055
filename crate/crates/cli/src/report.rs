//! Joins tail estimates from finished runs with predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use exittails::estimators::TailEstimate;

use crate::config::ExperimentKind;
use crate::run::{ResultManifest, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("incompatible manifests, mismatched keys [{}]: {detail}", keys.join(", "))]
    Join { keys: Vec<String>, detail: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Invalid(String),
}

pub const REPORT_HEADER: [&str; 20] = [
    "run",
    "kind",
    "epsilon",
    "alpha",
    "shift",
    "start",
    "n",
    "p_hat",
    "ci_lo",
    "ci_hi",
    "theory",
    "ratio",
    "p_hat_left",
    "theory_left",
    "ratio_left",
    "p_hat_right",
    "theory_right",
    "ratio_right",
    "tolerance",
    "pass",
];

/// Estimate and prediction for one exit side (or both).
#[derive(Debug, Clone, PartialEq)]
pub struct SideComparison {
    pub estimate: TailEstimate,
    pub theory: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// One parameter set. `pass` requires all three comparisons to pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub kind: ExperimentKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub shift: f64,
    pub start: f64,
    pub total: SideComparison,
    pub left: SideComparison,
    pub right: SideComparison,
    pub tolerance: f64,
    pub pass: bool,
}

impl ReportRow {
    fn cells(&self) -> Vec<String> {
        let t = &self.total;
        vec![
            self.run.clone(),
            self.kind.as_str().into(),
            self.epsilon.to_string(),
            self.alpha.to_string(),
            self.shift.to_string(),
            self.start.to_string(),
            t.estimate.n.to_string(),
            t.estimate.p_hat.to_string(),
            t.estimate.ci_lo.to_string(),
            t.estimate.ci_hi.to_string(),
            t.theory.to_string(),
            t.ratio.to_string(),
            self.left.estimate.p_hat.to_string(),
            self.left.theory.to_string(),
            self.left.ratio.to_string(),
            self.right.estimate.p_hat.to_string(),
            self.right.theory.to_string(),
            self.right.ratio.to_string(),
            self.tolerance.to_string(),
            self.pass.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub csv: Vec<u8>,
    pub text: String,
}

/// Accepts either a manifest file or the directory holding it.
pub fn load_manifest(path: &Path) -> Result<(PathBuf, ResultManifest), ReportError> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(|source| ReportError::Io { path: file.clone(), source })?;
    let m: ResultManifest =
        serde_json::from_slice(&bytes).map_err(|source| ReportError::Json { path: file.clone(), source })?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, m))
}

/// Kinds whose summary is comparable with the full-interval tail formula.
fn family(kind: ExperimentKind) -> Option<&'static str> {
    match kind {
        ExperimentKind::TailX | ExperimentKind::ConditionalLaw => Some("full_interval"),
        ExperimentKind::TailY | ExperimentKind::LinearTail => Some("neighbourhood"),
        _ => None,
    }
}

fn start_of(m: &ResultManifest) -> f64 {
    match m.kind {
        ExperimentKind::TailX | ExperimentKind::ConditionalLaw => m.config.x0,
        ExperimentKind::TailY => m.config.y0,
        _ => m.config.z,
    }
}

/// Keys on which two manifests differ. Predictions carry their start point
/// per row, so `start` and `dt` are compared between tail runs only.
fn mismatched(a: &ResultManifest, b: &ResultManifest, between_tails: bool) -> Vec<String> {
    let mut keys = Vec::new();
    let fam_a = family(a.kind).unwrap_or("prediction");
    let fam_b = family(b.kind).unwrap_or("prediction");
    if fam_a != fam_b && fam_a != "prediction" && fam_b != "prediction" {
        keys.push("kind".into());
    }
    if a.config.model != b.config.model {
        keys.push("model".into());
    }
    if a.config.beta != b.config.beta {
        keys.push("beta".into());
    }
    if between_tails && start_of(a) != start_of(b) {
        keys.push("start".into());
    }
    if between_tails && a.config.dt != b.config.dt {
        keys.push("dt".into());
    }
    keys
}

struct SummaryLine {
    epsilon: f64,
    alpha: f64,
    shift: f64,
    start: f64,
    side: String,
    n: u64,
    survivors: u64,
    theory: f64,
    label: String,
}

fn read_summary(path: &Path) -> Result<Vec<SummaryLine>, ReportError> {
    let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            ReportError::Invalid(format!("{}: summary has no column {name}", path.display()))
        })
    };
    let idx: Vec<usize> = ["epsilon", "alpha", "shift", "start", "side", "n", "survivors", "theory", "threshold_label"]
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let num = |v: &str| {
        v.parse::<f64>().map_err(|e| ReportError::Invalid(format!("{}: bad number {v:?}: {e}", path.display())))
    };
    let int = |v: &str| {
        v.parse::<u64>().map_err(|e| ReportError::Invalid(format!("{}: bad count {v:?}: {e}", path.display())))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.push(SummaryLine {
            epsilon: num(&rec[idx[0]])?,
            alpha: num(&rec[idx[1]])?,
            shift: num(&rec[idx[2]])?,
            start: num(&rec[idx[3]])?,
            side: rec[idx[4]].to_string(),
            n: int(&rec[idx[5]])?,
            survivors: int(&rec[idx[6]])?,
            theory: num(&rec[idx[7]])?,
            label: rec[idx[8]].to_string(),
        });
    }
    Ok(out)
}

type PredKey = (&'static str, u64, u64, u64, u64, String);
/// (epsilon, alpha, shift) bit patterns to per-side comparisons with their start.
type SideTable = BTreeMap<(u64, u64, u64), Vec<(String, f64, SideComparison)>>;

fn pred_key(quantity_family: &'static str, eps: f64, alpha: f64, shift: f64, start: f64, side: &str) -> PredKey {
    (quantity_family, eps.to_bits(), alpha.to_bits(), shift.to_bits(), start.to_bits(), side.to_string())
}

/// Prediction values from a predict run, keyed by family, eps, alpha, shift, side.
fn read_predictions(path: &Path) -> Result<BTreeMap<PredKey, f64>, ReportError> {
    let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let fam = match &rec[0] {
            "tail_total" | "tail_joint_side" => "full_interval",
            "small_nbhd_tail" => "neighbourhood",
            _ => continue,
        };
        let parse = |i: usize| rec[i].parse::<f64>().ok();
        if let (Some(eps), Some(alpha), Some(shift), Some(start), Some(value)) =
            (parse(1), parse(2), parse(3), parse(4), parse(6))
        {
            out.insert(pred_key(fam, eps, alpha, shift, start, &rec[5]), value);
        }
    }
    Ok(out)
}

/// Builds the comparison table for the given runs.
///
/// Tail runs are compared against a predict run when one is supplied, and
/// otherwise against the theory column recorded with the estimates.
pub fn report(paths: &[PathBuf]) -> Result<Report, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::Usage("report needs at least one manifest".into()));
    }
    let loaded: Vec<(PathBuf, ResultManifest)> = paths.iter().map(|p| load_manifest(p)).collect::<Result<_, _>>()?;
    let (tails, others): (Vec<_>, Vec<_>) = loaded.into_iter().partition(|(_, m)| family(m.kind).is_some());
    if tails.is_empty() {
        return Err(ReportError::Usage("no tail experiment among the manifests".into()));
    }
    let mut predictions = Vec::new();
    for (dir, m) in &others {
        if m.kind != ExperimentKind::Predict {
            return Err(ReportError::Join {
                keys: vec!["kind".into()],
                detail: format!("{} is a {} run, which carries no tail estimates", m.name, m.kind.as_str()),
            });
        }
        predictions.push((dir, m));
    }
    let reference = &tails[0].1;
    for (_, m) in &tails[1..] {
        let keys = mismatched(reference, m, true);
        if !keys.is_empty() {
            return Err(ReportError::Join { keys, detail: format!("{} vs {}", reference.name, m.name) });
        }
    }
    let mut table = BTreeMap::new();
    for (dir, m) in &predictions {
        let keys = mismatched(reference, m, false);
        if !keys.is_empty() {
            return Err(ReportError::Join { keys, detail: format!("{} vs {}", reference.name, m.name) });
        }
        let file = m
            .file("predictions")
            .ok_or_else(|| ReportError::Invalid(format!("{} lists no predictions file", m.name)))?;
        table.extend(read_predictions(&dir.join(&file.path))?);
    }

    let mut rows = Vec::new();
    for (dir, m) in &tails {
        let fam = family(m.kind).unwrap_or_default();
        let file = m
            .file("summary")
            .ok_or_else(|| ReportError::Invalid(format!("{} lists no summary file", m.name)))?;
        let tolerance = m.config.tolerance;
        let mut sides = SideTable::new();
        for line in read_summary(&dir.join(&file.path))? {
            let theory = if table.is_empty() {
                line.theory
            } else {
                *table.get(&pred_key(fam, line.epsilon, line.alpha, line.shift, line.start, &line.side)).ok_or_else(|| {
                    ReportError::Join {
                        keys: vec!["epsilon".into(), "alpha".into(), "shift".into(), "start".into()],
                        detail: format!("no prediction for {} side={}", line.label, line.side),
                    }
                })?
            };
            let estimate = TailEstimate::from_counts(line.n, line.survivors, line.label.clone())
                .map_err(|e| ReportError::Invalid(e.to_string()))?;
            let allowed = (3.0 * estimate.half_width()).max(tolerance * theory);
            let cmp = SideComparison {
                ratio: estimate.p_hat / theory,
                pass: (estimate.p_hat - theory).abs() <= allowed,
                estimate,
                theory,
            };
            sides
                .entry((line.epsilon.to_bits(), line.alpha.to_bits(), line.shift.to_bits()))
                .or_default()
                .push((line.side, line.start, cmp));
        }
        for ((eps, alpha, shift), group) in sides {
            let pick = |name: &str| {
                group.iter().find(|g| g.0 == name).map(|g| g.2.clone()).ok_or_else(|| {
                    ReportError::Invalid(format!("{}: summary lacks side {name}", m.name))
                })
            };
            let (total, left, right) = (pick("total")?, pick("left")?, pick("right")?);
            rows.push(ReportRow {
                run: m.name.clone(),
                kind: m.kind,
                epsilon: f64::from_bits(eps),
                alpha: f64::from_bits(alpha),
                shift: f64::from_bits(shift),
                start: group[0].1,
                pass: total.pass && left.pass && right.pass,
                total,
                left,
                right,
                tolerance,
            });
        }
    }
    rows.sort_by(|a, b| {
        b.epsilon.total_cmp(&a.epsilon).then(a.alpha.total_cmp(&b.alpha)).then(a.shift.total_cmp(&b.shift))
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| ReportError::Csv { path: PathBuf::from("report.csv"), source };
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r.cells()).map_err(csv_err)?;
    }
    let csv = w.into_inner().map_err(|e| ReportError::Invalid(e.to_string()))?;
    Ok(Report { text: render(&rows), rows, csv })
}

fn render(rows: &[ReportRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:>8} {:>6} {:>6} {:>9} {:>11} {:>23} {:>11} {:>7} {:>7} {:>7} {:>5}",
        "eps", "alpha", "shift", "n", "p_hat", "95% CI", "theory", "ratio", "left", "right", "pass"
    );
    for r in rows {
        let e = &r.total.estimate;
        let _ = writeln!(
            t,
            "{:>8} {:>6} {:>6} {:>9} {:>11.5e} [{:>10.4e},{:>10.4e}] {:>11.5e} {:>7.4} {:>7.4} {:>7.4} {:>5}",
            r.epsilon,
            r.alpha,
            r.shift,
            e.n,
            e.p_hat,
            e.ci_lo,
            e.ci_hi,
            r.total.theory,
            r.total.ratio,
            r.left.ratio,
            r.right.ratio,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    t
}
