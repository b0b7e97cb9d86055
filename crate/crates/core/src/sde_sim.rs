//! Monte Carlo engine: Euler–Maruyama exits for the full SDE, for the process
//! in linearized coordinates, and the coupled pair (Y, Z) driven by one
//! Brownian path; plus deterministic parallel batches.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::linear_exact::{self, LinearModel};
use crate::linearizer::LinearizationMap;
use crate::model::{NoiseLevel, VectorFieldModel};
use crate::rng::{derive_seed, path_rng, PathRng};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Censored,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Censored => "censored",
        }
    }
}

/// Survival flag for one threshold time: `survived == (tau > time)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdFlag<T: Real> {
    pub time: T,
    pub survived: bool,
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRecord<T: Real> {
    pub tau: T,
    pub side: Side,
    pub x_exit: T,
    pub path_index: u64,
    pub seed: u64,
    pub crossed_thresholds: Vec<ThresholdFlag<T>>,
    /// `sup |U(t)|` of the Duhamel martingale, when tracking was requested.
    #[serde(skip)]
    pub sup_martingale: Option<T>,
}

impl<T: Real> ExitRecord<T> {
    pub fn survived(&self, threshold: usize) -> bool {
        self.crossed_thresholds[threshold].survived
    }
}

/// Knobs shared by all path simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions<T: Real> {
    pub dt: T,
    pub thresholds: Vec<T>,
    pub max_time: T,
    /// Each step's Gaussian increment is the normalized sum of this many
    /// draws, so a run at `dt` with `k = 2` sees the same Brownian path as a
    /// run at `dt/2` with `k = 1`.
    pub brownian_substeps: u32,
    pub track_martingale: bool,
}

impl<T: Real> SimOptions<T> {
    pub fn new(dt: T, thresholds: Vec<T>, max_time: T) -> Self {
        Self { dt, thresholds, max_time, brownian_substeps: 1, track_martingale: false }
    }

    /// Censoring horizon `(alpha/lambda) log(1/eps) + 10/lambda`.
    pub fn default_max_time(alpha: T, lambda: T, noise: &NoiseLevel<T>) -> T {
        alpha / lambda * noise.log_inv() + T::lit(10.0) / lambda
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(param("dt", "must be positive"));
        }
        if !(self.max_time >= T::zero()) {
            return Err(param("max_time", "must be nonnegative"));
        }
        if self.brownian_substeps == 0 {
            return Err(param("brownian_substeps", "must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn flags(&self, tau: T) -> Vec<ThresholdFlag<T>> {
        self.thresholds.iter().map(|&time| ThresholdFlag { time, survived: tau > time }).collect()
    }
}

#[inline]
pub(crate) fn increment<T: Real>(rng: &mut PathRng, substeps: u32) -> T {
    if substeps == 1 {
        T::standard_normal(rng)
    } else {
        let mut s = T::zero();
        for _ in 0..substeps {
            s = s + T::standard_normal(rng);
        }
        s / T::lit(substeps as f64).sqrt()
    }
}

/// Euler–Maruyama for `dX = drift(X) dt + eps diff(X) dW` until `X` leaves
/// `(lo, hi)`. The exit time is linearly interpolated within the
/// overshooting step and the exit location is reported as the boundary.
#[allow(clippy::too_many_arguments)]
fn em_exit<T: Real, D, S>(
    drift: D,
    diff: S,
    mart: Option<&dyn Fn(T) -> T>,
    lambda: T,
    eps: T,
    x0: T,
    lo: T,
    hi: T,
    seed: u64,
    path_index: u64,
    opts: &SimOptions<T>,
) -> Result<ExitRecord<T>>
where
    D: Fn(T) -> T,
    S: Fn(T) -> T,
{
    let finish = |tau: T, side: Side, x_exit: T, sup: Option<T>| ExitRecord {
        tau,
        side,
        x_exit,
        path_index,
        seed,
        crossed_thresholds: opts.flags(tau),
        sup_martingale: sup,
    };
    let track = opts.track_martingale && mart.is_some();
    if x0 >= hi {
        return Ok(finish(T::zero(), Side::Right, hi, track.then(T::zero)));
    }
    if x0 <= lo {
        return Ok(finish(T::zero(), Side::Left, lo, track.then(T::zero)));
    }
    let dt = opts.dt;
    let sq = dt.sqrt();
    let decay = (-lambda * dt).exp();
    let mut rng = path_rng(seed);
    let mut x = x0;
    let mut n: u64 = 0;
    let mut t = T::zero();
    let mut u = T::zero();
    let mut sup_u = T::zero();
    let mut weight = T::one();
    loop {
        if t >= opts.max_time {
            return Ok(finish(opts.max_time, Side::Censored, x, track.then_some(sup_u)));
        }
        let xi: T = increment(&mut rng, opts.brownian_substeps);
        let dw = sq * xi;
        let x_new = x + drift(x) * dt + eps * diff(x) * dw;
        if track {
            if let Some(m) = mart {
                u = u + weight * m(x) * dw;
                sup_u = sup_u.max(u.abs());
                weight = weight * decay;
            }
        }
        if !x_new.is_finite() {
            return Err(Error::NonFinite { path_index, seed, t: t.to_f64_lossy() });
        }
        if x_new >= hi || x_new <= lo {
            let (bound, side) = if x_new >= hi { (hi, Side::Right) } else { (lo, Side::Left) };
            let theta = (bound - x) / (x_new - x);
            let tau = t + theta * dt;
            return Ok(finish(tau, side, bound, track.then_some(sup_u)));
        }
        x = x_new;
        n += 1;
        t = T::lit(n as f64) * dt;
    }
}

/// Exit of the full SDE `dX = b(X) dt + eps sigma(X) dW` from the interval.
pub fn simulate_exit_x<T: Real>(
    model: &VectorFieldModel<T>,
    noise: &NoiseLevel<T>,
    x0: T,
    seed: u64,
    path_index: u64,
    opts: &SimOptions<T>,
) -> Result<ExitRecord<T>> {
    opts.check()?;
    if !model.contains(x0) {
        return Err(param("x0", format!("{x0} is outside the interval")));
    }
    em_exit(
        |x| model.b(x),
        |x| model.sigma(x),
        None,
        model.lambda(),
        noise.epsilon,
        x0,
        model.q_minus(),
        model.q_plus(),
        seed,
        path_index,
        opts,
    )
}

/// Coefficients of the SDE in linearized coordinates,
/// `dY = lambda Y dt + eps sigma~(Y) dW + (eps^2/2) h(Y) dt`, with
/// `sigma~(y) = f'(g(y)) sigma(g(y))` and `h(y) = f''(g(y)) sigma(g(y))^2`,
/// tabulated on a uniform grid over `f(I)`.
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients<T: Real> {
    y0: T,
    inv_step: T,
    sigma_tilde: Vec<T>,
    h: Vec<T>,
}

pub const DEFAULT_COEFFICIENT_NODES: usize = 8193;

impl<T: Real> LinearizedCoefficients<T> {
    pub fn build(model: &VectorFieldModel<T>, map: &LinearizationMap<T>, nodes: usize) -> Self {
        let nodes = nodes.max(3);
        let (a, b) = (map.f_qminus(), map.f_qplus());
        let step = (b - a) / T::lit((nodes - 1) as f64);
        let mut sigma_tilde = Vec::with_capacity(nodes);
        let mut h = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let y = a + step * T::lit(k as f64);
            let x = map.eval_g(y);
            let s = model.sigma(x);
            sigma_tilde.push(map.f_prime(x) * s);
            h.push(map.f_second(x) * s * s);
        }
        Self { y0: a, inv_step: step.recip(), sigma_tilde, h }
    }

    #[inline]
    fn lookup(&self, table: &[T], y: T) -> T {
        let pos = ((y - self.y0) * self.inv_step).max(T::zero());
        let last = table.len() - 1;
        let i = pos.floor().to_usize().unwrap_or(last).min(last - 1);
        let frac = (pos - T::lit(i as f64)).min(T::one());
        table[i] + (table[i + 1] - table[i]) * frac
    }

    #[inline]
    pub fn sigma_tilde(&self, y: T) -> T {
        self.lookup(&self.sigma_tilde, y)
    }

    #[inline]
    pub fn h(&self, y: T) -> T {
        self.lookup(&self.h, y)
    }
}

/// How the linearized-coordinate process is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum YBackend {
    /// simulate X and map through `f`
    #[default]
    ViaX,
    /// Euler–Maruyama on the linearized SDE itself
    Direct,
}

/// Everything needed to simulate in linearized coordinates.
#[derive(Debug, Clone)]
pub struct LinearizedSetting<T: Real> {
    pub model: VectorFieldModel<T>,
    pub map: Arc<LinearizationMap<T>>,
    pub coefficients: Arc<LinearizedCoefficients<T>>,
}

impl<T: Real> LinearizedSetting<T> {
    pub fn new(model: VectorFieldModel<T>, map: LinearizationMap<T>) -> Self {
        let coefficients = LinearizedCoefficients::build(&model, &map, DEFAULT_COEFFICIENT_NODES);
        Self { model, map: Arc::new(map), coefficients: Arc::new(coefficients) }
    }
}

/// Exit of `Y = f(X)` from `[-eps^beta, eps^beta]`, started at `y0`.
/// `x_exit` is reported in linearized coordinates.
pub fn simulate_exit_y<T: Real>(
    setting: &LinearizedSetting<T>,
    noise: &NoiseLevel<T>,
    y0: T,
    beta: T,
    backend: YBackend,
    seed: u64,
    path_index: u64,
    opts: &SimOptions<T>,
) -> Result<ExitRecord<T>> {
    opts.check()?;
    let level = noise.epsilon.powf(beta);
    let map = &setting.map;
    let model = &setting.model;
    if !(level < map.f_qplus() && -level > map.f_qminus()) {
        return Err(param("beta", format!("eps^beta = {level} is not inside f(I)")));
    }
    if !(y0.abs() < level) {
        return Err(param("y0", format!("|y0| = {} must be below eps^beta = {level}", y0.abs())));
    }
    let lam = model.lambda();
    let eps = noise.epsilon;
    match backend {
        YBackend::ViaX => {
            let (lo, hi) = (map.eval_g(-level), map.eval_g(level));
            let mart = |x: T| map.f_prime(x) * model.sigma(x);
            let mut rec = em_exit(
                |x| model.b(x),
                |x| model.sigma(x),
                Some(&mart),
                lam,
                eps,
                map.eval_g(y0),
                lo,
                hi,
                seed,
                path_index,
                opts,
            )?;
            rec.x_exit = match rec.side {
                Side::Right => level,
                Side::Left => -level,
                Side::Censored => map.eval_f(rec.x_exit),
            };
            Ok(rec)
        }
        YBackend::Direct => {
            let coef = &setting.coefficients;
            let half_eps2 = eps * eps / T::lit(2.0);
            let mart = |y: T| coef.sigma_tilde(y);
            em_exit(
                |y| lam * y + half_eps2 * coef.h(y),
                |y| coef.sigma_tilde(y),
                Some(&mart),
                lam,
                eps,
                y0,
                -level,
                level,
                seed,
                path_index,
                opts,
            )
        }
    }
}

/// Sup-distance between `Y` and the linear process `Z` driven by the same noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingRecord<T: Real> {
    pub sup_delta: T,
    pub horizon: T,
    /// `sup_delta > eps^{beta + beta' - (alpha - 1)}`
    pub exceeded: bool,
    pub threshold: T,
    pub stopped_at: T,
}

/// Horizon `((alpha - beta)/lambda) log(L/eps)` of the coupling bound.
pub fn coupling_horizon<T: Real>(alpha: T, beta: T, lambda: T, noise: &NoiseLevel<T>, l: T) -> T {
    (alpha - beta) / lambda * (l / noise.epsilon).ln()
}

/// Runs `Y` (direct backend) and `Z` (same Euler recursion with constant
/// diffusion `sigma(0)`) from `y0` on one Brownian path, tracking
/// `sup |Y - Z|` until `horizon` or until `|Y|` first reaches `2 eps^beta`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_yz<T: Real>(
    setting: &LinearizedSetting<T>,
    noise: &NoiseLevel<T>,
    y0: T,
    seed: u64,
    dt: T,
    horizon: T,
    beta: T,
    beta_prime: T,
    alpha: T,
) -> Result<CouplingRecord<T>> {
    if !(dt > T::zero()) {
        return Err(param("dt", "must be positive"));
    }
    let eps = noise.epsilon;
    let threshold = eps.powf(beta + beta_prime - (alpha - T::one()));
    let stop_level = T::lit(2.0) * eps.powf(beta);
    let coef = &setting.coefficients;
    let lam = setting.model.lambda();
    let sigma0 = setting.model.sigma0();
    let half_eps2 = eps * eps / T::lit(2.0);
    let sq = dt.sqrt();
    let mut rng = path_rng(seed);
    let (mut y, mut z) = (y0, y0);
    let mut sup = T::zero();
    let mut n: u64 = 0;
    let mut t = T::zero();
    while t < horizon && y.abs() < stop_level {
        let dw = sq * T::standard_normal(&mut rng);
        let y_new = y + (lam * y + half_eps2 * coef.h(y)) * dt + eps * coef.sigma_tilde(y) * dw;
        let z_new = z + lam * z * dt + eps * sigma0 * dw;
        if !y_new.is_finite() || !z_new.is_finite() {
            return Err(Error::NonFinite { path_index: 0, seed, t: t.to_f64_lossy() });
        }
        y = y_new;
        z = z_new;
        sup = sup.max((y - z).abs());
        n += 1;
        t = T::lit(n as f64) * dt;
    }
    Ok(CouplingRecord { sup_delta: sup, horizon, exceeded: sup > threshold, threshold, stopped_at: t.min(horizon) })
}

/// What a batch simulates.
#[derive(Debug, Clone)]
pub enum SimTarget<T: Real> {
    X { model: VectorFieldModel<T>, noise: NoiseLevel<T>, x0: T },
    Y { setting: LinearizedSetting<T>, noise: NoiseLevel<T>, y0: T, beta: T, backend: YBackend },
    Linear { model: LinearModel<T> },
}

/// Named threshold time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Threshold<T: Real> {
    pub label: String,
    pub time: T,
}

#[derive(Debug, Clone)]
pub struct BatchJob<T: Real> {
    pub target: SimTarget<T>,
    pub thresholds: Vec<Threshold<T>>,
    pub dt: T,
    pub max_time: T,
    pub n_paths: u64,
    pub master_seed: u64,
    pub brownian_substeps: u32,
    pub track_martingale: bool,
}

impl<T: Real> BatchJob<T> {
    pub fn options(&self) -> SimOptions<T> {
        SimOptions {
            dt: self.dt,
            thresholds: self.thresholds.iter().map(|t| t.time).collect(),
            max_time: self.max_time,
            brownian_substeps: self.brownian_substeps,
            track_martingale: self.track_martingale,
        }
    }

    /// Simulates path `path_index` with its derived seed.
    pub fn simulate_path(&self, path_index: u64, opts: &SimOptions<T>) -> Result<ExitRecord<T>> {
        let seed = derive_seed(self.master_seed, path_index);
        match &self.target {
            SimTarget::X { model, noise, x0 } => simulate_exit_x(model, noise, *x0, seed, path_index, opts),
            SimTarget::Y { setting, noise, y0, beta, backend } => {
                simulate_exit_y(setting, noise, *y0, *beta, *backend, seed, path_index, opts)
            }
            SimTarget::Linear { model } => linear_exact::sample_exit_path(model, seed, path_index, opts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThresholdCount {
    pub label: String,
    pub survivors: u64,
    pub survivors_left: u64,
    pub survivors_right: u64,
}

/// Integer aggregate of a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub n_paths: u64,
    pub left: u64,
    pub right: u64,
    pub censored: u64,
    pub thresholds: Vec<ThresholdCount>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput<T: Real> {
    pub records: Vec<ExitRecord<T>>,
    pub summary: BatchSummary,
}

/// Aggregates records in path order.
pub fn summarize<T: Real>(thresholds: &[Threshold<T>], records: &[ExitRecord<T>]) -> BatchSummary {
    let mut summary = BatchSummary {
        n_paths: records.len() as u64,
        left: 0,
        right: 0,
        censored: 0,
        thresholds: thresholds
            .iter()
            .map(|t| ThresholdCount { label: t.label.clone(), survivors: 0, survivors_left: 0, survivors_right: 0 })
            .collect(),
    };
    for r in records {
        match r.side {
            Side::Left => summary.left += 1,
            Side::Right => summary.right += 1,
            Side::Censored => summary.censored += 1,
        }
        for (count, flag) in summary.thresholds.iter_mut().zip(&r.crossed_thresholds) {
            if flag.survived {
                count.survivors += 1;
                match r.side {
                    Side::Left => count.survivors_left += 1,
                    Side::Right => count.survivors_right += 1,
                    Side::Censored => {}
                }
            }
        }
    }
    summary
}

/// Runs `n_paths` independent paths on `parallelism` worker threads. Path
/// `i` uses `derive_seed(master_seed, i)`, and records come back in path
/// order, so the output does not depend on `parallelism`.
pub fn run_batch<T: Real>(job: &BatchJob<T>, parallelism: usize) -> Result<BatchOutput<T>> {
    use rayon::prelude::*;

    if job.n_paths == 0 {
        return Err(param("n_paths", "must be at least 1"));
    }
    let opts = job.options();
    opts.check()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| param("parallelism", e.to_string()))?;
    let results: Vec<std::thread::Result<Result<ExitRecord<T>>>> = pool.install(|| {
        (0..job.n_paths)
            .into_par_iter()
            .map(|i| catch_unwind(AssertUnwindSafe(|| job.simulate_path(i, &opts))))
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(Ok(rec)) => records.push(rec),
            Ok(Err(e)) => return Err(e),
            Err(_) => return Err(Error::WorkerPanic { path_index: i as u64, completed: records.len() }),
        }
    }
    let summary = summarize(&job.thresholds, &records);
    Ok(BatchOutput { records, summary })
}

/// Coupled runs for `n_paths` derived seeds, in path order.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_batch<T: Real>(
    setting: &LinearizedSetting<T>,
    noise: &NoiseLevel<T>,
    y0: T,
    master_seed: u64,
    n_paths: u64,
    dt: T,
    horizon: T,
    beta: T,
    beta_prime: T,
    alpha: T,
    parallelism: usize,
) -> Result<Vec<CouplingRecord<T>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| param("parallelism", e.to_string()))?;
    pool.install(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                simulate_coupled_yz(setting, noise, y0, derive_seed(master_seed, i), dt, horizon, beta, beta_prime, alpha)
            })
            .collect()
    })
}
