//! The conjugating diffeomorphism `f(x) = lim_{t->inf} e^{lambda t} S^{-t} x`,
//! its inverse `g`, and the boundary images `f(q_minus)`, `f(q_plus)`.
//!
//! `f` is evaluated pointwise by pushing `x` backward along the flow with
//! doubling time horizons until the rescaled value settles. A map over the
//! whole interval tabulates `f` on Chebyshev–Lobatto nodes and interpolates
//! with monotone cubic Hermite pieces whose slopes come from the conjugation
//! identity `f'(x) b(x) = lambda f(x)`.

use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::flow::{flow_backward, flow_forward};
use crate::interp::MonotoneCubic;
use crate::model::VectorFieldModel;
use crate::Real;

/// Default node count for [`build_map`].
pub const DEFAULT_GRID_POINTS: usize = 513;
/// Default pointwise tolerance for [`build_map`].
pub const DEFAULT_MAP_TOL: f64 = 1e-11;
/// Horizon (in units of `1/lambda`) after which the limit is declared divergent.
pub const T_MAX_LAMBDA_UNITS: f64 = 50.0;
/// Relative finite-difference step on the table, as a fraction of `q_plus - q_minus`.
pub const FD_STEP_FRACTION: f64 = 1e-5;

/// `f(x)` to absolute accuracy `tol`.
pub fn linearize_point<T: Real>(model: &VectorFieldModel<T>, x: T, tol: T) -> Result<T> {
    if !model.contains(x) {
        return Err(param("x", format!("{x} is outside [{}, {}]", model.q_minus(), model.q_plus())));
    }
    if !(tol > T::zero()) {
        return Err(param("tol", "must be positive"));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    let lam = model.lambda();
    let t_max = T::lit(T_MAX_LAMBDA_UNITS) / lam;
    let rel_tol = (tol * T::lit(0.01)).min(T::lit(1e-12)).max(T::tol_floor());

    let mut y = x;
    let mut t_total = T::zero();
    let mut step = lam.recip();
    let mut prev: Option<T> = None;
    loop {
        let r = flow_backward(model, y, step, rel_tol)?;
        y = r.x_end;
        t_total = t_total + step;
        // e^{lambda t} y without overflowing for small scalar types
        let value = if y == T::zero() {
            T::zero()
        } else {
            y.signum() * (y.abs().ln() + lam * t_total).exp()
        };
        if let Some(p) = prev {
            if (value - p).abs() < tol * T::lit(0.5) {
                return Ok(value);
            }
        }
        if t_total >= t_max {
            return Err(Error::Convergence { x: x.to_f64_lossy(), t_max: t_max.to_f64_lossy() });
        }
        prev = Some(value);
        step = t_total.min(t_max - t_total);
    }
}

/// Tabulated linearizing map over the whole interval.
#[derive(Debug, Clone)]
pub struct LinearizationMap<T: Real> {
    table: MonotoneCubic<T>,
    f_qminus: T,
    f_qplus: T,
    accuracy: T,
    lambda: T,
    fd_step: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableRow<T: Real> {
    pub x: T,
    pub f_x: T,
}

impl<T: Real> LinearizationMap<T> {
    /// `f(x)`; arguments are clamped to the interval.
    #[inline]
    pub fn eval_f(&self, x: T) -> T {
        let (lo, hi) = self.table.domain();
        self.table.eval(x.max(lo).min(hi))
    }

    /// `g(y) = f^{-1}(y)` on `[f(q_minus), f(q_plus)]`; clamped outside.
    #[inline]
    pub fn eval_g(&self, y: T) -> T {
        self.table.invert(y)
    }

    pub fn f_qminus(&self) -> T {
        self.f_qminus
    }

    pub fn f_qplus(&self) -> T {
        self.f_qplus
    }

    /// `|f(q_side)|`, right side when `right` is set.
    pub fn boundary_image(&self, right: bool) -> T {
        if right {
            self.f_qplus.abs()
        } else {
            self.f_qminus.abs()
        }
    }

    /// Certified absolute error bound of `eval_f`.
    pub fn accuracy(&self) -> T {
        self.accuracy
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn domain(&self) -> (T, T) {
        self.table.domain()
    }

    pub fn table(&self) -> impl Iterator<Item = TableRow<T>> + '_ {
        self.table.xs().iter().zip(self.table.ys()).map(|(&x, &f_x)| TableRow { x, f_x })
    }

    pub fn len(&self) -> usize {
        self.table.xs().len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.xs().is_empty()
    }

    /// `f'(x)` by centered finite differences on the table (one-sided at the
    /// interval ends).
    pub fn f_prime(&self, x: T) -> T {
        let h = self.fd_step;
        let (lo, hi) = self.domain();
        let two = T::lit(2.0);
        if x - h < lo {
            let (f0, f1, f2) = (self.eval_f(x), self.eval_f(x + h), self.eval_f(x + two * h));
            (T::lit(-3.0) * f0 + T::lit(4.0) * f1 - f2) / (two * h)
        } else if x + h > hi {
            let (f0, f1, f2) = (self.eval_f(x), self.eval_f(x - h), self.eval_f(x - two * h));
            (T::lit(3.0) * f0 - T::lit(4.0) * f1 + f2) / (two * h)
        } else {
            (self.eval_f(x + h) - self.eval_f(x - h)) / (two * h)
        }
    }

    /// `f''(x)` by finite differences on the table.
    pub fn f_second(&self, x: T) -> T {
        let h = self.fd_step;
        let (lo, hi) = self.domain();
        let two = T::lit(2.0);
        let c = if x - h < lo {
            x + h
        } else if x + h > hi {
            x - h
        } else {
            x
        };
        (self.eval_f(c + h) - two * self.eval_f(c) + self.eval_f(c - h)) / (h * h)
    }
}

fn chebyshev_lobatto<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    let mid = (lo + hi) / T::lit(2.0);
    let rad = (hi - lo) / T::lit(2.0);
    let mut nodes: Vec<T> = (0..n)
        .map(|k| mid - rad * (T::PI() * T::lit(k as f64) / T::lit((n - 1) as f64)).cos())
        .collect();
    nodes[0] = lo;
    nodes[n - 1] = hi;
    nodes
}

/// Tabulates `f` over the interval on `grid_points` Chebyshev–Lobatto nodes.
///
/// The returned accuracy is the largest disagreement between the
/// interpolant and a direct evaluation at the angular midpoints of the
/// nodes, plus the pointwise tolerance.
pub fn build_map<T: Real>(model: &VectorFieldModel<T>, grid_points: usize, tol: T) -> Result<LinearizationMap<T>> {
    if grid_points < 257 {
        return Err(param("grid_points", format!("{grid_points} < 257")));
    }
    let (qm, qp) = (model.q_minus(), model.q_plus());
    let lam = model.lambda();
    let xs = chebyshev_lobatto(qm, qp, grid_points);
    let mut fs = Vec::with_capacity(grid_points);
    for &x in &xs {
        fs.push(linearize_point(model, x, tol)?);
    }
    for w in xs.windows(2).zip(fs.windows(2)) {
        let (xw, fw) = w;
        if fw[1] <= fw[0] {
            return Err(Error::Monotonicity { x: xw[1].to_f64_lossy() });
        }
    }
    let slopes: Vec<T> = xs
        .iter()
        .zip(&fs)
        .map(|(&x, &f)| {
            let b = model.b(x);
            if x == T::zero() || b == T::zero() {
                T::one()
            } else {
                lam * f / b
            }
        })
        .collect();
    let f_qminus = fs[0];
    let f_qplus = fs[grid_points - 1];
    if !(f_qminus < T::zero() && T::zero() < f_qplus) {
        return Err(Error::Monotonicity { x: 0.0 });
    }
    let table = MonotoneCubic::new(xs, fs, slopes);

    let mut worst = T::zero();
    let n1 = T::lit((grid_points - 1) as f64);
    let mid = (qm + qp) / T::lit(2.0);
    let rad = (qp - qm) / T::lit(2.0);
    for k in 0..grid_points - 1 {
        let theta = T::PI() * (T::lit(k as f64) + T::lit(0.5)) / n1;
        let x = mid - rad * theta.cos();
        let direct = linearize_point(model, x, tol)?;
        worst = worst.max((table.eval(x) - direct).abs());
    }

    Ok(LinearizationMap {
        table,
        f_qminus,
        f_qplus,
        accuracy: worst + tol,
        lambda: lam,
        fd_step: T::lit(FD_STEP_FRACTION) * (qp - qm),
    })
}

/// Map with the default grid and tolerance.
pub fn build_default_map<T: Real>(model: &VectorFieldModel<T>) -> Result<LinearizationMap<T>> {
    build_map(model, DEFAULT_GRID_POINTS, T::lit(DEFAULT_MAP_TOL).max(T::tol_floor()))
}

/// `|f(S^t x) - e^{lambda t} f(x)|`. Requires `S^t x` to stay in the interval.
pub fn conjugation_residual<T: Real>(
    map: &LinearizationMap<T>,
    model: &VectorFieldModel<T>,
    x: T,
    t: T,
) -> Result<T> {
    if t == T::zero() {
        return Ok(T::zero());
    }
    let r = flow_forward(model, x, t, T::lit(1e-12).max(T::tol_floor()))?;
    if r.t_elapsed < t {
        return Err(param("t", format!("S^t x leaves the interval at t = {}", r.t_elapsed)));
    }
    Ok((map.eval_f(r.x_end) - (model.lambda() * t).exp() * map.eval_f(x)).abs())
}
