//! Problem instances: the drift/diffusion pair on an interval around a
//! repelling equilibrium at the origin, and the noise level.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::Real;

/// Shared, thread-safe scalar function.
pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Default tolerance on `|b(0)|`.
pub const DEFAULT_VALIDATION_TOL: f64 = 1e-9;

/// Built-in drift registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    /// `b(x) = lambda * x`
    Linear {
        #[serde(default = "one")]
        lambda: f64,
    },
    /// `b(x) = x - x^3`
    Cubic,
    /// `b(x) = sin x`
    Sine,
    /// `b(x) = sum_k coefficients[k] * x^k`; the declared rate is `coefficients[1]`.
    CustomPolynomial { coefficients: Vec<f64> },
}

/// Built-in diffusion coefficient registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SigmaSpec {
    Constant { c: f64 },
    /// `max(c0 + c1 * x, AFFINE_SIGMA_FLOOR)`
    Affine { c0: f64, c1: f64 },
}

/// Lower clip applied to the affine diffusion coefficient.
pub const AFFINE_SIGMA_FLOOR: f64 = 1e-6;

fn one() -> f64 {
    1.0
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Constant { c: 1.0 }
    }
}

impl DriftSpec {
    pub fn declared_lambda(&self) -> f64 {
        match self {
            DriftSpec::Linear { lambda } => *lambda,
            DriftSpec::Cubic | DriftSpec::Sine => 1.0,
            DriftSpec::CustomPolynomial { coefficients } => {
                coefficients.get(1).copied().unwrap_or(0.0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftSpec::Linear { .. } => "linear",
            DriftSpec::Cubic => "cubic",
            DriftSpec::Sine => "sine",
            DriftSpec::CustomPolynomial { .. } => "custom-polynomial",
        }
    }

    fn drift<T: Real>(&self) -> ScalarFn<T> {
        match self {
            DriftSpec::Linear { lambda } => {
                let l = T::lit(*lambda);
                Arc::new(move |x: T| l * x)
            }
            DriftSpec::Cubic => Arc::new(|x: T| x - x * x * x),
            DriftSpec::Sine => Arc::new(|x: T| x.sin()),
            DriftSpec::CustomPolynomial { coefficients } => {
                let c: Vec<T> = coefficients.iter().map(|&v| T::lit(v)).collect();
                Arc::new(move |x: T| c.iter().rev().fold(T::zero(), |acc, &ck| acc * x + ck))
            }
        }
    }

    /// Closed-form linearizing map, where one is known.
    fn analytic_f<T: Real>(&self) -> Option<ScalarFn<T>> {
        match self {
            DriftSpec::Linear { .. } => Some(Arc::new(|x: T| x)),
            DriftSpec::Cubic => Some(Arc::new(|x: T| x / (T::one() - x * x).sqrt())),
            DriftSpec::Sine => {
                let two = T::lit(2.0);
                Some(Arc::new(move |x: T| two * (x / two).tan()))
            }
            DriftSpec::CustomPolynomial { .. } => None,
        }
    }
}

impl SigmaSpec {
    fn diffusion<T: Real>(&self) -> ScalarFn<T> {
        match *self {
            SigmaSpec::Constant { c } => {
                let c = T::lit(c);
                Arc::new(move |_| c)
            }
            SigmaSpec::Affine { c0, c1 } => {
                let (c0, c1, floor) = (T::lit(c0), T::lit(c1), T::lit(AFFINE_SIGMA_FLOOR));
                Arc::new(move |x: T| (c0 + c1 * x).max(floor))
            }
        }
    }
}

/// Drift `b`, diffusion `sigma` and the interval `[q_minus, q_plus]` around
/// the repelling zero of `b` at the origin. Immutable once built.
#[derive(Clone)]
pub struct VectorFieldModel<T: Real> {
    name: String,
    b: ScalarFn<T>,
    sigma: ScalarFn<T>,
    q_minus: T,
    q_plus: T,
    lambda: T,
    analytic_f: Option<ScalarFn<T>>,
}

impl<T: Real> fmt::Debug for VectorFieldModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldModel")
            .field("name", &self.name)
            .field("q_minus", &self.q_minus)
            .field("q_plus", &self.q_plus)
            .field("lambda", &self.lambda)
            .field("analytic_f", &self.analytic_f.is_some())
            .finish()
    }
}

impl<T: Real> VectorFieldModel<T> {
    /// Builds a model from black-box functions. Only the interval and the
    /// declared rate are checked here; see [`validate_model`] for the rest.
    pub fn new(
        name: impl Into<String>,
        b: ScalarFn<T>,
        sigma: ScalarFn<T>,
        q_minus: T,
        q_plus: T,
        lambda: T,
    ) -> Result<Self> {
        if !(q_minus < T::zero() && T::zero() < q_plus) || !q_minus.is_finite() || !q_plus.is_finite() {
            return Err(Error::InvalidModel(format!(
                "interval [{q_minus}, {q_plus}] must contain the origin in its interior"
            )));
        }
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidModel(format!("lambda = {lambda} must be positive")));
        }
        Ok(Self {
            name: name.into(),
            b,
            sigma,
            q_minus,
            q_plus,
            lambda,
            analytic_f: None,
        })
    }

    /// Instantiates a registry drift with unit constant diffusion.
    pub fn from_spec(drift: &DriftSpec, sigma: &SigmaSpec, q_minus: T, q_plus: T) -> Result<Self> {
        let model = Self::new(
            drift.name(),
            drift.drift(),
            sigma.diffusion(),
            q_minus,
            q_plus,
            T::lit(drift.declared_lambda()),
        )?;
        Ok(match drift.analytic_f() {
            Some(f) => model.with_analytic_f(f),
            None => model,
        })
    }

    /// `b(x) = lambda x`, `sigma = 1`.
    pub fn linear(lambda: T, q_minus: T, q_plus: T) -> Result<Self> {
        Self::from_spec(
            &DriftSpec::Linear { lambda: lambda.to_f64_lossy() },
            &SigmaSpec::default(),
            q_minus,
            q_plus,
        )
    }

    /// `b(x) = x - x^3`, `sigma = 1`.
    pub fn cubic(q_minus: T, q_plus: T) -> Result<Self> {
        Self::from_spec(&DriftSpec::Cubic, &SigmaSpec::default(), q_minus, q_plus)
    }

    /// `b(x) = sin x`, `sigma = 1`.
    pub fn sine(q_minus: T, q_plus: T) -> Result<Self> {
        Self::from_spec(&DriftSpec::Sine, &SigmaSpec::default(), q_minus, q_plus)
    }

    pub fn with_sigma(mut self, sigma: ScalarFn<T>) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_sigma_spec(self, sigma: &SigmaSpec) -> Self {
        self.with_sigma(sigma.diffusion())
    }

    pub fn with_analytic_f(mut self, f: ScalarFn<T>) -> Self {
        self.analytic_f = Some(f);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn b(&self, x: T) -> T {
        (self.b)(x)
    }

    #[inline]
    pub fn sigma(&self, x: T) -> T {
        (self.sigma)(x)
    }

    /// `sigma(0)`, the diffusion coefficient of the linear auxiliary process.
    pub fn sigma0(&self) -> T {
        self.sigma(T::zero())
    }

    pub fn q_minus(&self) -> T {
        self.q_minus
    }

    pub fn q_plus(&self) -> T {
        self.q_plus
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn analytic_f(&self) -> Option<&ScalarFn<T>> {
        self.analytic_f.as_ref()
    }

    /// Closed interval membership.
    pub fn contains(&self, x: T) -> bool {
        self.q_minus <= x && x <= self.q_plus
    }

    /// `min(|q_minus|, q_plus)`.
    pub fn inner_radius(&self) -> T {
        self.q_minus.abs().min(self.q_plus)
    }

    pub(crate) fn drift_fn(&self) -> &ScalarFn<T> {
        &self.b
    }

    pub(crate) fn sigma_fn(&self) -> &ScalarFn<T> {
        &self.sigma
    }
}

/// Noise magnitude together with the subpolynomial helper functions
/// `K(eps)` (growth) and `c(eps)` (decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseLevel<T: Real> {
    pub epsilon: T,
    pub k: T,
    pub c: T,
}

impl<T: Real> NoiseLevel<T> {
    /// `K = log(1/eps)`, `c = 1/log(1/eps)`.
    pub fn new(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < T::one()) {
            return Err(param("epsilon", format!("{epsilon} is not in (0, 1)")));
        }
        let log_inv = -epsilon.ln();
        Ok(Self {
            epsilon,
            k: log_inv,
            c: log_inv.recip(),
        })
    }

    /// The noiseless limit. Only meaningful for the simulation engine, where it
    /// reproduces the deterministic flow.
    pub fn deterministic() -> Self {
        Self {
            epsilon: T::zero(),
            k: T::infinity(),
            c: T::zero(),
        }
    }

    pub fn with_k(mut self, k: T) -> Result<Self> {
        if !(k > T::zero()) {
            return Err(param("K", "must be positive"));
        }
        self.k = k;
        Ok(self)
    }

    pub fn with_c(mut self, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(param("c", "must be positive"));
        }
        self.c = c;
        Ok(self)
    }

    /// `log(1/eps)`.
    pub fn log_inv(&self) -> T {
        -self.epsilon.ln()
    }
}

/// One named validation check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_B0: &str = "b(0)=0";
pub const CHECK_LAMBDA: &str = "b'(0)=lambda>0";
pub const CHECK_UNIQUE_ZERO: &str = "no other zero in I";
pub const CHECK_SIGMA0: &str = "sigma(0)>0";

fn eval_checked<T: Real>(f: &ScalarFn<T>, x: T) -> Result<T> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            x: x.to_f64_lossy(),
            value: v.to_f64_lossy(),
        })
    }
}

/// Central difference `(b(h) - b(-h)) / 2h`.
pub fn effective_lambda<T: Real>(model: &VectorFieldModel<T>, h: T) -> Result<T> {
    let h_max = T::lit(1e-4) * model.inner_radius();
    if !(h > T::zero() && h <= h_max) {
        return Err(param("h", format!("{h} is not in (0, {h_max}]")));
    }
    let up = eval_checked(model.drift_fn(), h)?;
    let down = eval_checked(model.drift_fn(), -h)?;
    Ok((up - down) / (h + h))
}

/// Step used by [`validate_model`] for the derivative check.
fn validation_step<T: Real>(model: &VectorFieldModel<T>) -> T {
    // Balances truncation O(h^2) against rounding O(eps/h) in f64.
    T::lit(1e-5) * model.inner_radius().min(T::one())
}

/// Checks the structural assumptions: `b(0)=0`, `b'(0)=lambda>0`, no other
/// zero of `b` on the interval, `sigma(0)>0`.
///
/// The zero check samples `grid_points` uniformly spaced points; wherever the
/// sign of `b` disagrees with the sign of `x`, the offending zero is located by
/// bisection and reported.
pub fn validate_model<T: Real>(
    candidate: &VectorFieldModel<T>,
    grid_points: usize,
    tol: T,
) -> Result<ValidationReport> {
    if grid_points < 100 {
        return Err(param("grid_points", format!("{grid_points} < 100")));
    }
    if !(tol > T::zero()) {
        return Err(param("tol", "must be positive"));
    }
    let (qm, qp) = (candidate.q_minus(), candidate.q_plus());
    let b = candidate.drift_fn();
    let sigma = candidate.sigma_fn();

    let n = grid_points - 1;
    let grid: Vec<T> = (0..=n)
        .map(|i| qm + (qp - qm) * T::lit(i as f64) / T::lit(n as f64))
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for &x in &grid {
        values.push(eval_checked(b, x)?);
        eval_checked(sigma, x)?;
    }

    let mut checks = Vec::with_capacity(4);

    let b0 = eval_checked(b, T::zero())?;
    checks.push(Check {
        name: CHECK_B0,
        passed: b0.abs() <= tol,
        measured: b0.to_f64_lossy(),
        detail: format!("|b(0)| = {:e}, tolerance {:e}", b0.abs().to_f64_lossy(), tol.to_f64_lossy()),
    });

    let lam = effective_lambda(candidate, validation_step(candidate))?;
    let declared = candidate.lambda();
    let rel = ((lam - declared) / declared).abs();
    checks.push(Check {
        name: CHECK_LAMBDA,
        passed: lam > T::zero() && rel <= T::lit(1e-3),
        measured: lam.to_f64_lossy(),
        detail: format!("central difference {lam}, declared {declared}"),
    });

    let bad_zero = find_spurious_zero(b, &grid, &values, tol)?;
    checks.push(Check {
        name: CHECK_UNIQUE_ZERO,
        passed: bad_zero.is_none(),
        measured: bad_zero.map_or(f64::NAN, |z| z.to_f64_lossy()),
        detail: match bad_zero {
            Some(z) => format!("b changes sign or vanishes near x = {z}"),
            None => format!("sign(b(x)) = sign(x) on {grid_points} grid points"),
        },
    });

    let s0 = eval_checked(sigma, T::zero())?;
    checks.push(Check {
        name: CHECK_SIGMA0,
        passed: s0 > T::zero(),
        measured: s0.to_f64_lossy(),
        detail: format!("sigma(0) = {s0}"),
    });

    Ok(ValidationReport { checks })
}

/// First grid point (scanning outward from the origin on each side) where
/// `sign(b(x)) != sign(x)`, refined by bisection to the zero it indicates.
fn find_spurious_zero<T: Real>(
    b: &ScalarFn<T>,
    grid: &[T],
    values: &[T],
    tol: T,
) -> Result<Option<T>> {
    let ok = |x: T, v: T| x.abs() <= tol || (v * x.signum() > T::zero());
    // right side, scanning outward
    let mut last_good = T::zero();
    for (&x, &v) in grid.iter().zip(values).filter(|(x, _)| **x > T::zero()) {
        if !ok(x, v) {
            return bisect_sign(b, last_good.max(tol), x).map(Some);
        }
        last_good = x;
    }
    let mut last_good = T::zero();
    for (&x, &v) in grid.iter().zip(values).rev().filter(|(x, _)| **x < T::zero()) {
        if !ok(x, v) {
            return bisect_sign(b, -(last_good.abs().max(tol)), x).map(Some);
        }
        last_good = x;
    }
    Ok(None)
}

/// Bisects between `good` (where `sign(b) = sign(x)`) and `bad`.
fn bisect_sign<T: Real>(b: &ScalarFn<T>, good: T, bad: T) -> Result<T> {
    let side = good.signum();
    let (mut lo, mut hi) = (good, bad);
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid == lo || mid == hi {
            break;
        }
        if eval_checked(b, mid)? * side > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(coefficients: &[f64], qm: f64, qp: f64) -> VectorFieldModel<f64> {
        VectorFieldModel::<f64>::from_spec(
            &DriftSpec::CustomPolynomial { coefficients: coefficients.to_vec() },
            &SigmaSpec::default(),
            qm,
            qp,
        )
        .unwrap()
    }

    #[test]
    fn linear_model_validates() {
        let m = VectorFieldModel::<f64>::linear(1.0, -1.0, 1.0).unwrap();
        let r = validate_model(&m, 1000, 1e-9).unwrap();
        assert!(r.accepted(), "{r:?}");
        assert_eq!(r.checks.len(), 4);
    }

    #[test]
    fn cubic_model_validates() {
        let m = VectorFieldModel::<f64>::cubic(-0.5, 0.5).unwrap();
        let r = validate_model(&m, 10_000, 1e-9).unwrap();
        assert!(r.accepted(), "{r:?}");
    }

    #[test]
    fn interior_zero_is_reported() {
        // b(x) = x - x^2 vanishes at x = 1
        let m = poly(&[0.0, 1.0, -1.0], -0.5, 1.5);
        let r = validate_model(&m, 1000, 1e-9).unwrap();
        assert!(!r.accepted());
        let c = r.check(CHECK_UNIQUE_ZERO).unwrap();
        assert!(!c.passed);
        assert!((c.measured - 1.0).abs() < 1e-9, "zero located at {}", c.measured);
        assert!(r.check(CHECK_B0).unwrap().passed);
    }

    #[test]
    fn negative_side_zero_is_reported() {
        // b(x) = x + x^2 vanishes at x = -1
        let m = poly(&[0.0, 1.0, 1.0], -1.5, 0.5);
        let r = validate_model(&m, 1000, 1e-9).unwrap();
        let c = r.check(CHECK_UNIQUE_ZERO).unwrap();
        assert!(!c.passed);
        assert!((c.measured + 1.0).abs() < 1e-9);
    }

    #[test]
    fn shifted_equilibrium_fails_b0() {
        let m = poly(&[1e-3, 1.0], -1.0, 1.0);
        let r = validate_model(&m, 200, 1e-9).unwrap();
        assert!(!r.check(CHECK_B0).unwrap().passed);
    }

    #[test]
    fn nonpositive_sigma0_fails() {
        let m = VectorFieldModel::<f64>::linear(1.0, -1.0, 1.0)
            .unwrap()
            .with_sigma(Arc::new(|x: f64| x));
        let r = validate_model(&m, 200, 1e-9).unwrap();
        assert!(!r.check(CHECK_SIGMA0).unwrap().passed);
    }

    #[test]
    fn evaluation_failure_names_the_point() {
        let m = VectorFieldModel::<f64>::new(
            "log",
            Arc::new(|x: f64| if x > 0.9 { f64::NAN } else { x }),
            Arc::new(|_| 1.0),
            -1.0,
            1.0,
            1.0,
        )
        .unwrap();
        match validate_model(&m, 101, 1e-9) {
            Err(Error::Evaluation { x, .. }) => assert!(x > 0.9),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_grid_points() {
        let m = VectorFieldModel::<f64>::linear(1.0, -1.0, 1.0).unwrap();
        assert!(validate_model(&m, 99, 1e-9).is_err());
    }

    #[test]
    fn effective_lambda_examples() {
        let lin = VectorFieldModel::<f64>::linear(1.0, -1.0, 1.0).unwrap();
        assert!((effective_lambda(&lin, 1e-5).unwrap() - 1.0).abs() < 1e-12);
        let cub = VectorFieldModel::<f64>::cubic(-0.5, 0.5).unwrap();
        // odd cubic term contributes -h^2
        assert!((effective_lambda(&cub, 1e-5).unwrap() - 1.0).abs() < 1e-9);
        let quad = poly(&[0.0, 2.0, 1.0], -1.0, 1.0);
        assert!((effective_lambda(&quad, 1e-5).unwrap() - 2.0).abs() < 1e-5);
        assert!(effective_lambda(&quad, 1e-3).is_err());
    }

    #[test]
    fn bundled_models_agree_with_declared_lambda() {
        let models = [
            VectorFieldModel::<f64>::linear(1.0, -1.0, 1.0).unwrap(),
            VectorFieldModel::<f64>::linear(2.5, -1.0, 2.0).unwrap(),
            VectorFieldModel::<f64>::cubic(-0.5, 0.5).unwrap(),
            VectorFieldModel::<f64>::sine(-1.0, 1.0).unwrap(),
        ];
        for m in &models {
            let h = validation_step(m);
            let lam = effective_lambda(m, h).unwrap();
            assert!(((lam - m.lambda()) / m.lambda()).abs() < 1e-3, "{}", m.name());
        }
    }

    #[test]
    fn accepted_models_have_sign_of_x_on_dense_grid() {
        let models = [
            VectorFieldModel::<f64>::cubic(-0.5, 0.5).unwrap(),
            VectorFieldModel::<f64>::sine(-1.0, 1.0).unwrap(),
            VectorFieldModel::<f64>::linear(1.0, -1.0, 2.0).unwrap(),
        ];
        for m in &models {
            assert!(validate_model(m, 500, 1e-9).unwrap().accepted());
            let n = 10_000;
            for i in 0..=n {
                let x = m.q_minus() + (m.q_plus() - m.q_minus()) * i as f64 / n as f64;
                if x.abs() > 1e-9 {
                    assert!(m.b(x).signum() * x.signum() > 0.0, "{} at {x}", m.name());
                }
            }
        }
    }

    #[test]
    fn f32_models_validate() {
        let m = VectorFieldModel::<f32>::cubic(-0.5, 0.5).unwrap();
        let r = validate_model(&m, 1000, 1e-6).unwrap();
        assert!(r.check(CHECK_UNIQUE_ZERO).unwrap().passed);
        assert!(r.check(CHECK_B0).unwrap().passed);
    }

    #[test]
    fn noise_level_defaults() {
        let n = NoiseLevel::new(0.05f64).unwrap();
        assert!((n.k - 20f64.ln()).abs() < 1e-15);
        assert!((n.c * n.k - 1.0).abs() < 1e-15);
        assert!(NoiseLevel::new(1.0f64).is_err());
        assert!(NoiseLevel::new(0.0f64).is_err());
        assert!(NoiseLevel::new(0.1f64).unwrap().with_k(-1.0).is_err());
    }

    #[test]
    fn invalid_interval_rejected() {
        assert!(VectorFieldModel::<f64>::linear(1.0, 0.5, 1.0).is_err());
        assert!(VectorFieldModel::<f64>::linear(-1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_maps_registered() {
        let s = VectorFieldModel::<f64>::sine(-1.0, 1.0).unwrap();
        let f = s.analytic_f().unwrap();
        // f'(x) b(x) = f(x) for f = 2 tan(x/2), b = sin
        let x = 0.7;
        let h = 1e-6;
        let fp = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!((fp * x.sin() - f(x)).abs() < 1e-8);
    }
}
