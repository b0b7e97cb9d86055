//! The linear process `dZ = lambda Z dt + eps sigma0 dW`, started at `eps z`.
//! Transitions are Gaussian and sampled exactly; side probabilities come
//! from the scale function by quadrature.

use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::model::NoiseLevel;
use crate::quadrature;
use crate::rng::{derive_seed, path_rng};
use crate::sde_sim::{increment, ExitRecord, Side, SimOptions};
use crate::theory::psi0;
use crate::Real;

/// Parameters of the linear process and of the exit problem from
/// `[-eps^beta (1 + delta_eps), eps^beta (1 + delta_eps)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearModel<T: Real> {
    pub lambda: T,
    pub sigma0: T,
    pub epsilon: T,
    /// start is `eps * z`
    pub z: T,
    pub beta: T,
    pub delta_eps: T,
    pub alpha: T,
    /// time shift `C`
    pub c: T,
    /// correction `c(eps)`, by default `1/log(1/eps)`
    pub c_eps: T,
}

pub const MIN_CONDITIONED: usize = 100;

impl<T: Real> LinearModel<T> {
    /// Model with `delta_eps = 0` and `c(eps) = 1/log(1/eps)`.
    pub fn new(lambda: T, sigma0: T, epsilon: T, z: T, beta: T, alpha: T, c: T) -> Result<Self> {
        if !(lambda > T::zero()) {
            return Err(param("lambda", "must be positive"));
        }
        if !(sigma0 > T::zero()) {
            return Err(param("sigma0", "must be positive"));
        }
        let noise = NoiseLevel::new(epsilon)?;
        if !(beta > T::zero() && beta < T::one()) {
            return Err(param("beta", format!("{beta} is not in (0, 1)")));
        }
        Ok(Self { lambda, sigma0, epsilon, z, beta, delta_eps: T::zero(), alpha, c, c_eps: noise.c })
    }

    pub fn with_delta(mut self, delta_eps: T) -> Result<Self> {
        if !(delta_eps >= T::zero()) {
            return Err(param("delta_eps", "must be nonnegative"));
        }
        self.delta_eps = delta_eps;
        Ok(self)
    }

    pub fn with_c_eps(mut self, c_eps: T) -> Self {
        self.c_eps = c_eps;
        self
    }

    pub fn with_z(mut self, z: T) -> Self {
        self.z = z;
        self
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    /// Exit level `eps^beta (1 + delta_eps)`.
    pub fn level(&self) -> T {
        self.epsilon.powf(self.beta) * (T::one() + self.delta_eps)
    }

    pub fn start(&self) -> T {
        self.epsilon * self.z
    }

    /// `t_eps = ((alpha - beta)/lambda) log(1/eps) - C + c(eps)`.
    pub fn t_eps(&self) -> Result<T> {
        let t = (self.alpha - self.beta) / self.lambda * (-self.epsilon.ln()) - self.c + self.c_eps;
        if t > T::zero() {
            Ok(t)
        } else {
            Err(param("C", format!("t_eps = {t} is not positive")))
        }
    }
}

/// Normal law; `degenerate` marks a zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianSpec<T: Real> {
    pub mean: T,
    pub variance: T,
    pub degenerate: bool,
}

impl<T: Real> GaussianSpec<T> {
    pub fn density(&self, x: T) -> T {
        let d = x - self.mean;
        (-d * d / (T::lit(2.0) * self.variance)).exp() / (T::lit(2.0) * T::PI() * self.variance).sqrt()
    }
}

/// `r(t) = sigma0^2 (1 - e^{-2 lambda t}) / (2 lambda)`, the variance of the
/// time-changed Brownian motion in the Duhamel representation.
pub fn time_change_variance<T: Real>(m: &LinearModel<T>, t: T) -> T {
    let two_lam = T::lit(2.0) * m.lambda;
    m.sigma0 * m.sigma0 * -(-two_lam * t).exp_m1() / two_lam
}

/// Law of `Z(t)` without stopping.
pub fn exact_marginal<T: Real>(m: &LinearModel<T>, t: T) -> GaussianSpec<T> {
    let grow = (m.lambda * t).exp();
    let two_lam = T::lit(2.0) * m.lambda;
    let variance = m.epsilon * m.epsilon * m.sigma0 * m.sigma0 * (two_lam * t).exp_m1() / two_lam;
    GaussianSpec { mean: m.start() * grow, variance, degenerate: !(variance > T::zero()) }
}

/// One exact transition over `dt`.
#[derive(Debug, Clone, Copy)]
struct Step<T> {
    a: T,
    sd: T,
}

impl<T: Real> Step<T> {
    fn new(m: &LinearModel<T>, dt: T) -> Self {
        let two_lam = T::lit(2.0) * m.lambda;
        Self {
            a: (m.lambda * dt).exp(),
            sd: m.epsilon * m.sigma0 * ((two_lam * dt).exp_m1() / two_lam).sqrt(),
        }
    }
}

fn check_dt<T: Real>(m: &LinearModel<T>, dt: T) -> Result<()> {
    if !(dt > T::zero() && dt <= T::lit(1e-2) / m.lambda * (T::one() + T::epsilon())) {
        return Err(param("dt", format!("{dt} is not in (0, 1e-2/lambda]")));
    }
    Ok(())
}

/// Crossing time inside a step from `|z0|` to `|z1| >= level`, interpolated
/// linearly in `log |Z|`.
fn crossing_fraction<T: Real>(z0: T, z1: T, level: T) -> T {
    let (a0, a1) = (z0.abs(), z1.abs());
    if a0 > T::zero() && a1 > a0 {
        ((level.ln() - a0.ln()) / (a1.ln() - a0.ln())).max(T::zero()).min(T::one())
    } else if a1 > a0 {
        ((level - a0) / (a1 - a0)).max(T::zero()).min(T::one())
    } else {
        T::one()
    }
}

/// Exact-step simulation of the exit from `[-level, level]`, censored at
/// `opts.max_time`. Reported `x_exit` is the signed level.
pub fn sample_exit_path<T: Real>(
    m: &LinearModel<T>,
    seed: u64,
    path_index: u64,
    opts: &SimOptions<T>,
) -> Result<ExitRecord<T>> {
    check_dt(m, opts.dt)?;
    let level = m.level();
    let finish = |tau: T, side: Side, x_exit: T| ExitRecord {
        tau,
        side,
        x_exit,
        path_index,
        seed,
        crossed_thresholds: opts.flags(tau),
        sup_martingale: None,
    };
    let z0 = m.start();
    if z0.abs() >= level {
        let side = if z0 > T::zero() { Side::Right } else { Side::Left };
        return Ok(finish(T::zero(), side, level.copysign(z0)));
    }
    let step = Step::new(m, opts.dt);
    let mut rng = path_rng(seed);
    let mut z = z0;
    let mut n: u64 = 0;
    let mut t = T::zero();
    loop {
        if t >= opts.max_time {
            return Ok(finish(opts.max_time, Side::Censored, z));
        }
        let xi: T = increment(&mut rng, opts.brownian_substeps);
        let z_new = z * step.a + step.sd * xi;
        if !z_new.is_finite() {
            return Err(Error::NonFinite { path_index, seed, t: t.to_f64_lossy() });
        }
        if z_new.abs() >= level {
            let tau = t + crossing_fraction(z, z_new, level) * opts.dt;
            let side = if z_new > T::zero() { Side::Right } else { Side::Left };
            return Ok(finish(tau, side, level.copysign(z_new)));
        }
        z = z_new;
        n += 1;
        t = T::lit(n as f64) * opts.dt;
    }
}

/// Exit record with the single threshold `t_eps` and censoring at
/// `10 t_eps`.
pub fn sample_exit<T: Real>(m: &LinearModel<T>, seed: u64, dt: T) -> Result<ExitRecord<T>> {
    let t_eps = m.t_eps()?;
    let opts = SimOptions::new(dt, vec![t_eps], T::lit(10.0) * t_eps);
    sample_exit_path(m, seed, 0, &opts)
}

/// `Z(t)` without stopping, advanced by exact steps of size `dt` (the last
/// step is shortened to land on `t`).
pub fn sample_marginal<T: Real>(m: &LinearModel<T>, t: T, seed: u64, dt: T) -> Result<T> {
    check_dt(m, dt)?;
    let mut rng = path_rng(seed);
    let step = Step::new(m, dt);
    let full = (t / dt).floor().to_u64().unwrap_or(0);
    let mut z = m.start();
    for _ in 0..full {
        z = z * step.a + step.sd * T::standard_normal(&mut rng);
    }
    let rest = t - T::lit(full as f64) * dt;
    if rest > T::zero() {
        let last = Step::new(m, rest);
        z = z * last.a + last.sd * T::standard_normal(&mut rng);
    }
    Ok(z)
}

/// Asymptotic level of `P(tau > t_eps)`: `eps^{alpha-1} 2 e^{lambda C} psi0(z)`.
pub fn tail_theory<T: Real>(m: &LinearModel<T>) -> T {
    m.epsilon.powf(m.alpha - T::one()) * T::lit(2.0) * (m.lambda * m.c).exp() * psi0(m.z, m.lambda, m.sigma0)
}

/// `P(Z hits +level before -level)` from the scale function
/// `S(x) = int_0^x exp(-lambda u^2 / (eps sigma0)^2) du`.
pub fn exit_side_oracle<T: Real>(m: &LinearModel<T>, level: T) -> Result<T> {
    if !(level > T::zero()) {
        return Err(param("level", "must be positive"));
    }
    let x0 = m.start();
    if x0 >= level {
        return Ok(T::one());
    }
    if x0 <= -level {
        return Ok(T::zero());
    }
    let s = m.epsilon * m.sigma0;
    let k = m.lambda / (s * s);
    let rel = T::lit(1e-12).max(T::tol_floor());
    let scale = |a: T, b: T| -> Result<T> {
        let q = quadrature::integrate(|u: T| (-k * u * u).exp(), a, b, T::zero(), rel)?;
        Ok(q.value)
    };
    // S(x0) - S(-level) and S(level) - S(-level) = 2 S(level)
    let num = scale(-level, x0)?;
    let den = T::lit(2.0) * scale(T::zero(), level)?;
    Ok(num / den)
}

/// Histogram and functional of `Z(t_eps)` among paths that have not exited
/// by `t_eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquidistReport {
    pub n_paths: u64,
    pub n_conditioned: u64,
    pub bins: usize,
    pub delta: f64,
    /// counts over `[-(1-delta), 1-delta]` in units of `eps^beta`
    pub histogram: Vec<u64>,
    /// `2 max |freq * bins / (2 (1-delta)) - 1/2|`
    pub max_deviation: f64,
    /// `eps^{-(1-beta)} mean h(Z/eps)` with `h` the standard normal density
    pub functional: f64,
    pub functional_target: f64,
    pub predicted_acceptance: f64,
    pub warning: Option<String>,
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Position of path `i` at `t_eps`, or `None` when it exits first.
fn conditioned_position<T: Real>(m: &LinearModel<T>, t_eps: T, dt: T, seed: u64) -> Option<T> {
    let level = m.level();
    let mut z = m.start();
    if z.abs() >= level {
        return None;
    }
    let step = Step::new(m, dt);
    let full = (t_eps / dt).floor().to_u64().unwrap_or(0);
    let mut rng = path_rng(seed);
    for _ in 0..full {
        z = z * step.a + step.sd * T::standard_normal(&mut rng);
        if z.abs() >= level {
            return None;
        }
    }
    let rest = t_eps - T::lit(full as f64) * dt;
    if rest > T::zero() {
        let last = Step::new(m, rest);
        z = z * last.a + last.sd * T::standard_normal(&mut rng);
        if z.abs() >= level {
            return None;
        }
    }
    Some(z)
}

/// Runs `n_paths` exact-step paths to `t_eps`, keeps those still inside,
/// and compares the law of `Z(t_eps) / eps^beta` with the uniform law on
/// `[-1, 1]`.
pub fn equidistribution_experiment<T: Real>(
    m: &LinearModel<T>,
    n_paths: u64,
    bins: usize,
    delta: T,
    master_seed: u64,
    dt: T,
    parallelism: usize,
) -> Result<EquidistReport> {
    use rayon::prelude::*;

    if bins == 0 {
        return Err(param("bins", "must be at least 1"));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(param("delta", format!("{delta} is not in (0, 1)")));
    }
    check_dt(m, dt)?;
    let t_eps = m.t_eps()?;
    let predicted = tail_theory(m).to_f64_lossy();
    let warning = (predicted < 1e-3)
        .then(|| format!("predicted acceptance {predicted:.3e} is below 1e-3; rejection sampling will be slow"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| param("parallelism", e.to_string()))?;
    let finals: Vec<Option<T>> = pool.install(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| conditioned_position(m, t_eps, dt, derive_seed(master_seed, i)))
            .collect()
    });

    let scale = m.epsilon.powf(m.beta).to_f64_lossy();
    let eps = m.epsilon.to_f64_lossy();
    let half = 1.0 - delta.to_f64_lossy();
    let width = 2.0 * half / bins as f64;
    let mut histogram = vec![0u64; bins];
    let mut n_conditioned = 0u64;
    let mut h_sum = 0.0;
    for z in finals.into_iter().flatten() {
        let z = z.to_f64_lossy();
        n_conditioned += 1;
        h_sum += std_normal_pdf(z / eps);
        let u = z / scale;
        if u >= -half && u < half {
            let k = (((u + half) / width) as usize).min(bins - 1);
            histogram[k] += 1;
        }
    }
    if (n_conditioned as usize) < MIN_CONDITIONED {
        return Err(Error::InsufficientConditioning { got: n_conditioned as usize, need: MIN_CONDITIONED });
    }
    let n = n_conditioned as f64;
    let max_deviation = histogram
        .iter()
        .map(|&c| 2.0 * (c as f64 / n * bins as f64 / (2.0 * half) - 0.5).abs())
        .fold(0.0, f64::max);
    let beta = m.beta.to_f64_lossy();
    let functional = eps.powf(-(1.0 - beta)) * h_sum / n;
    Ok(EquidistReport {
        n_paths,
        n_conditioned,
        bins,
        delta: delta.to_f64_lossy(),
        histogram,
        max_deviation,
        functional,
        functional_target: 0.5,
        predicted_acceptance: predicted,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> LinearModel<f64> {
        LinearModel::new(1.0, 1.0, 0.05, 0.0, 0.75, 1.5, 0.0).unwrap()
    }

    #[test]
    fn t_eps_values() {
        let m = LinearModel::new(1.0, 1.0, (-4.0f64).exp(), 0.0, 0.75, 1.5, 0.0).unwrap().with_c_eps(0.0);
        assert!((m.t_eps().unwrap() - 3.0).abs() < 1e-12);
        let m = LinearModel { c: 0.2, ..base() };
        let l20 = 20f64.ln();
        assert!((m.t_eps().unwrap() - (0.75 * l20 - 0.2 + 1.0 / l20)).abs() < 1e-12);
        assert!((m.t_eps().unwrap() - 2.380607).abs() < 1e-6);
        assert!(LinearModel { c: 10.0, ..base() }.t_eps().is_err());
    }

    #[test]
    fn marginal_values() {
        let m = LinearModel::new(1.0, 1.0, 0.1, 1.0, 0.75, 1.5, 0.0).unwrap();
        let g = exact_marginal(&m, 0.0);
        assert_eq!((g.mean, g.variance, g.degenerate), (0.1, 0.0, true));
        let g = exact_marginal(&m, 1.0);
        let e = 1f64.exp();
        assert!((g.mean - 0.1 * e).abs() < 1e-15);
        assert!((g.variance - 0.01 * e * e * (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((g.variance - 0.031945).abs() < 1e-6);
        assert!((time_change_variance(&m, 60.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn time_change_identity() {
        let m = LinearModel::new(1.7, 0.6, 0.03, 0.4, 0.75, 1.5, 0.0).unwrap();
        for k in 0..20 {
            let t = 0.05 + 0.4 * k as f64;
            let g = exact_marginal(&m, t);
            let via = m.epsilon * m.epsilon * (2.0 * m.lambda * t).exp() * time_change_variance(&m, t);
            assert!((g.variance - via).abs() <= 1e-12 * g.variance, "t = {t}");
        }
    }

    #[test]
    fn starts_outside() {
        let m = base().with_z(20.0);
        let r = sample_exit(&m, 3, 1e-3).unwrap();
        assert_eq!((r.tau, r.side), (0.0, Side::Right));
        let r = sample_exit(&base().with_z(-20.0), 3, 1e-3).unwrap();
        assert_eq!(r.side, Side::Left);
    }

    #[test]
    fn dt_precondition() {
        assert!(sample_exit(&base(), 1, 0.02).is_err());
        assert!(sample_exit(&base(), 1, 0.0).is_err());
    }

    #[test]
    fn seed_determinism() {
        let a = sample_exit(&base(), 77, 1e-3).unwrap();
        let b = sample_exit(&base(), 77, 1e-3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tau.to_bits(), b.tau.to_bits());
    }

    #[test]
    fn tail_theory_values() {
        assert!((tail_theory(&base()) - 0.252313).abs() < 1e-6);
        assert!((tail_theory(&base()) - 2.0 / std::f64::consts::PI.sqrt() * 0.05f64.sqrt()).abs() < 1e-15);
        let doubled = LinearModel { c: 2f64.ln(), ..base() };
        assert!((tail_theory(&doubled) / tail_theory(&base()) - 2.0).abs() < 1e-14);
        assert!(tail_theory(&base().with_z(40.0)) < 1e-300);
    }

    #[test]
    fn side_oracle_matches_erf() {
        assert_eq!(exit_side_oracle(&base(), 0.2).unwrap(), 0.5);
        let m = LinearModel::new(1.0, 1.0, 0.1, 0.5, 0.75, 1.5, 0.0).unwrap();
        let level = 0.1f64.powf(0.75);
        assert_eq!(exit_side_oracle(&m.with_z(level / 0.1), level).unwrap(), 1.0);
        // S(x) is proportional to erf(sqrt(lambda) x / (eps sigma0))
        let s = |x: f64| libm::erf(x / 0.1);
        let expect = (s(0.05) + s(level)) / (2.0 * s(level));
        let got = exit_side_oracle(&m, level).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn equidist_single_bin_and_errors() {
        let r = equidistribution_experiment(&base(), 4000, 1, 0.1, 5, 1e-2, 1).unwrap();
        assert_eq!(r.histogram.len(), 1);
        let mass = r.histogram[0] as f64 / r.n_conditioned as f64;
        assert!((r.max_deviation - (mass / 0.9 - 1.0).abs()).abs() < 1e-12);
        let deep = base().with_alpha(4.0);
        assert!(matches!(
            equidistribution_experiment(&deep, 200, 10, 0.1, 5, 1e-2, 1),
            Err(Error::InsufficientConditioning { .. })
        ));
    }
}
