//! Statistics on completed record sets: binomial tail estimates, log-log
//! exponent fits, Kolmogorov–Smirnov tests, side-split tests and the
//! martingale tail diagnostic. Everything here works in `f64`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sde_sim::{ExitRecord, Side};
use crate::Real;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Asymptotic Kolmogorov critical values `c(a)`, reject when `sqrt(n) D > c`.
pub const KS_CRIT_5: f64 = 1.358;
pub const KS_CRIT_1: f64 = 1.628;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub n: u64,
    pub survivors: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub threshold_label: String,
}

impl TailEstimate {
    pub fn from_counts(n: u64, survivors: u64, label: impl Into<String>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if survivors > n {
            return Err(Error::Data(format!("{survivors} survivors out of {n}")));
        }
        let (ci_lo, ci_hi) = wilson_interval(survivors, n);
        Ok(Self { n, survivors, p_hat: survivors as f64 / n as f64, ci_lo, ci_hi, threshold_label: label.into() })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }

    /// Normal-approximation standard error of `p_hat`.
    pub fn std_error(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.n as f64).sqrt()
    }
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Survival fraction at threshold `index` of every record.
pub fn tail_estimate<T: Real>(records: &[ExitRecord<T>], index: usize, label: &str) -> Result<TailEstimate> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut survivors = 0u64;
    for r in records {
        let flag = r
            .crossed_thresholds
            .get(index)
            .ok_or_else(|| Error::Data(format!("record {} has no threshold {index}", r.path_index)))?;
        survivors += flag.survived as u64;
    }
    TailEstimate::from_counts(records.len() as u64, survivors, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Weighted least squares of `log p_hat` on `log eps` with delta-method
/// weights `n p / (1 - p)`. The slope estimates the tail exponent.
pub fn exponent_regression(pairs: &[(f64, TailEstimate)]) -> Result<FitResult> {
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!("{} distinct epsilon values, need 3", distinct.len())));
    }
    let mut pts = Vec::with_capacity(pairs.len());
    for (eps, est) in pairs {
        if !(est.p_hat > 0.0) {
            return Err(Error::Regression { epsilon: *eps });
        }
        let q = (1.0 - est.p_hat).max(0.5 / est.n as f64);
        pts.push((eps.ln(), est.p_hat.ln(), est.n as f64 * est.p_hat / q));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = pts.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(FitResult { slope, intercept, slope_stderr: (1.0 / sxx).sqrt(), r_squared })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    /// Asymptotic critical value of the statistic at level `c` (e.g. `KS_CRIT_5`).
    pub fn critical(&self, c: f64) -> f64 {
        c / (self.n as f64).sqrt()
    }
}

pub const MIN_KS_SAMPLE: usize = 50;

/// One-sample KS test against `1 - exp(-rate s)`.
pub fn ks_exponential(sample: &[f64], rate: f64) -> Result<KsResult> {
    if sample.len() < MIN_KS_SAMPLE {
        return Err(Error::InsufficientData(format!("{} overshoots, need {MIN_KS_SAMPLE}", sample.len())));
    }
    if !(rate > 0.0) {
        return Err(Error::Data(format!("rate {rate} must be positive")));
    }
    if let Some(bad) = sample.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Data(format!("negative overshoot {bad}")));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = -(-rate * x).exp_m1();
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(n.sqrt() * d), n: xs.len() })
}

/// Two-sample KS statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(ne.sqrt() * d), n: ne.round() as usize })
}

/// `tau - threshold` for paths that survived threshold `index` and exited
/// (censored paths excluded), with the number of censored survivors.
pub fn overshoots<T: Real>(records: &[ExitRecord<T>], index: usize) -> (Vec<f64>, u64) {
    let mut out = Vec::new();
    let mut censored = 0;
    for r in records {
        let flag = r.crossed_thresholds[index];
        if !flag.survived {
            continue;
        }
        if r.side == Side::Censored {
            censored += 1;
        } else {
            out.push((r.tau - flag.time).to_f64_lossy());
        }
    }
    (out, censored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideSplit {
    pub right: u64,
    pub total: u64,
    pub weight_right: f64,
    pub z_score: f64,
    pub pass: bool,
}

pub const MIN_SIDE_SPLIT: u64 = 30;

/// Binomial z-test of the right-exit frequency against `weight_right`.
pub fn side_split_test(right: u64, total: u64, weight_right: f64) -> Result<SideSplit> {
    if total == 0 {
        return Err(Error::InsufficientData("no conditioned exits".into()));
    }
    if total < MIN_SIDE_SPLIT {
        return Err(Error::InsufficientData(format!("{total} conditioned exits, need {MIN_SIDE_SPLIT}")));
    }
    if !(weight_right > 0.0 && weight_right < 1.0) {
        return Err(Error::Data(format!("weight {weight_right} is not in (0, 1)")));
    }
    let n = total as f64;
    let z = (right as f64 - n * weight_right) / (n * weight_right * (1.0 - weight_right)).sqrt();
    Ok(SideSplit { right, total, weight_right, z_score: z, pass: z.abs() < Z95 })
}

/// Side split of records that survived threshold `index` and exited.
pub fn side_split_records<T: Real>(records: &[ExitRecord<T>], index: usize, weight_right: f64) -> Result<SideSplit> {
    let mut right = 0;
    let mut total = 0;
    for r in records.iter().filter(|r| r.crossed_thresholds[index].survived) {
        match r.side {
            Side::Right => {
                right += 1;
                total += 1;
            }
            Side::Left => total += 1,
            Side::Censored => {}
        }
    }
    side_split_test(right, total, weight_right)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceedanceRow {
    pub level: f64,
    pub exceedance: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleDiagnostic {
    pub rows: Vec<ExceedanceRow>,
    pub c1: f64,
    pub c2: f64,
    /// `log P(sup > N)` is concave in `N^2` on the grid (up to sampling noise)
    pub log_concave: bool,
}

/// Empirical `P(sup |U| > N)` on `grid` with a fitted `c1 exp(-c2 N^2)`.
pub fn martingale_diagnostic(sups: &[f64], grid: &[f64]) -> MartingaleDiagnostic {
    let n = sups.len().max(1) as f64;
    let mut sorted = sups.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut levels = grid.to_vec();
    levels.sort_by(f64::total_cmp);
    let exceed: Vec<f64> = levels
        .iter()
        .map(|&l| (sorted.len() - sorted.partition_point(|&s| s <= l)) as f64 / n)
        .collect();
    let pts: Vec<(f64, f64)> =
        levels.iter().zip(&exceed).filter(|(_, &p)| p > 0.0).map(|(&l, &p)| (l * l, p.ln())).collect();
    let (c1, c2) = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        ((ym - slope * xm).exp(), -slope)
    } else {
        (1.0, 0.0)
    };
    // second divided differences of log p against N^2, with slack for noise
    let sd = |lp: f64| ((1.0 - lp.exp()) / (n * lp.exp())).sqrt();
    let mut log_concave = true;
    for w in pts.windows(3) {
        let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
        let gap = (w[1].0 - w[0].0).min(w[2].0 - w[1].0);
        let slack = 2.0 * (sd(w[0].1) + 2.0 * sd(w[1].1) + sd(w[2].1)) / gap;
        if s2 > s1 + slack {
            log_concave = false;
        }
    }
    let rows = levels
        .iter()
        .zip(&exceed)
        .map(|(&level, &exceedance)| ExceedanceRow { level, exceedance, bound: c1 * (-c2 * level * level).exp() })
        .collect();
    MartingaleDiagnostic { rows, c1, c2, log_concave }
}
