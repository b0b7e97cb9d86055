//! Deterministic dynamics `x' = b(x)`: forward and backward flow and the
//! deterministic exit time from the interval.
//!
//! Integration uses the Dormand–Prince 5(4) embedded pair with a relative
//! error controller. Boundary crossings are located by bisection on the
//! step fraction, re-evaluating a single step from the last accepted state.

use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::model::VectorFieldModel;
use crate::Real;

/// Default relative tolerance for all flow computations.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Below this magnitude the backward flow is continued with the linear flow.
pub const BACKWARD_CUTOFF: f64 = 1e-14;

/// Accuracy to which boundary hits are located, in space.
pub const BOUNDARY_TOL: f64 = 1e-10;

const MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowResult<T: Real> {
    pub x_end: T,
    pub t_elapsed: T,
    pub steps_taken: usize,
    pub max_local_error_estimate: T,
}

// Dormand–Prince 5(4) tableau; the nodes are not needed for autonomous fields.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Scalar autonomous Dormand–Prince stepper for `y' = dir * b(y)`.
struct Stepper<'a, T: Real> {
    model: &'a VectorFieldModel<T>,
    dir: T,
    a: [[T; 6]; 7],
    b5: [T; 7],
    e: [T; 7],
}

impl<'a, T: Real> Stepper<'a, T> {
    fn new(model: &'a VectorFieldModel<T>, backward: bool) -> Self {
        Self {
            model,
            dir: if backward { -T::one() } else { T::one() },
            a: A.map(|row| row.map(T::lit)),
            b5: B5.map(T::lit),
            e: E.map(T::lit),
        }
    }

    #[inline]
    fn rhs(&self, y: T) -> T {
        self.dir * self.model.b(y)
    }

    /// One step of size `h`; returns the 5th-order solution and the embedded
    /// error estimate.
    fn step(&self, y: T, h: T) -> (T, T) {
        let mut k = [T::zero(); 7];
        k[0] = self.rhs(y);
        for s in 1..7 {
            let mut acc = T::zero();
            for (j, kj) in k.iter().enumerate().take(s) {
                acc = acc + self.a[s][j] * *kj;
            }
            k[s] = self.rhs(y + h * acc);
        }
        let mut y5 = T::zero();
        let mut err = T::zero();
        for (s, ks) in k.iter().enumerate() {
            y5 = y5 + self.b5[s] * *ks;
            err = err + self.e[s] * *ks;
        }
        (y + h * y5, (h * err).abs())
    }
}

struct Controller<T: Real> {
    rtol: T,
    atol: T,
}

impl<T: Real> Controller<T> {
    fn new(rel_tol: T) -> Result<Self> {
        if !(rel_tol > T::zero()) {
            return Err(param("rel_tol", "must be positive"));
        }
        Ok(Self {
            // tighter than the target so the accumulated error stays within it
            rtol: (rel_tol * T::lit(0.1)).max(T::tol_floor()),
            atol: T::min_positive_value().sqrt(),
        })
    }

    #[inline]
    fn norm(&self, err: T, y0: T, y1: T) -> T {
        err / (self.atol + self.rtol * y0.abs().max(y1.abs()))
    }

    #[inline]
    fn factor(&self, ratio: T) -> T {
        if ratio == T::zero() {
            return T::lit(5.0);
        }
        (T::lit(0.9) * ratio.powf(T::lit(-0.2))).max(T::lit(0.2)).min(T::lit(5.0))
    }
}

enum Stop<T> {
    /// stop at the first time `|y| >= bound` is crossed on the side of `y`
    Boundary { lo: T, hi: T },
    /// stop once `|y| < cutoff`
    Cutoff(T),
}

struct Outcome<T: Real> {
    y: T,
    t: T,
    steps: usize,
    max_err: T,
    stopped: bool,
}

fn integrate<T: Real>(
    stepper: &Stepper<'_, T>,
    ctl: &Controller<T>,
    y0: T,
    t_end: T,
    stop: &Stop<T>,
) -> Result<Outcome<T>> {
    let mut y = y0;
    let mut t = T::zero();
    let mut steps = 0usize;
    let mut max_err = T::zero();
    if t_end <= T::zero() {
        return Ok(Outcome { y, t, steps, max_err, stopped: false });
    }
    let lam = stepper.model.lambda();
    let mut h = (T::lit(0.05) / lam).min(t_end);
    let h_min = T::epsilon() * T::lit(16.0);

    while t < t_end {
        if let Stop::Cutoff(c) = stop {
            if y.abs() < *c {
                return Ok(Outcome { y, t, steps, max_err, stopped: true });
            }
        }
        if steps >= MAX_STEPS {
            return Err(Error::Stiffness { t: t.to_f64_lossy(), x: y.to_f64_lossy() });
        }
        let h_try = h.min(t_end - t);
        let (y_new, err) = stepper.step(y, h_try);
        let ratio = ctl.norm(err, y, y_new);
        if !y_new.is_finite() || ratio > T::one() {
            h = h_try * ctl.factor(ratio).min(T::lit(0.5));
            if !y_new.is_finite() {
                h = h_try * T::lit(0.25);
            }
            if h < h_min * (T::one() + t) {
                return Err(Error::Stiffness { t: t.to_f64_lossy(), x: y.to_f64_lossy() });
            }
            continue;
        }
        steps += 1;
        max_err = max_err.max(err);

        if let Stop::Boundary { lo, hi } = *stop {
            if y_new <= lo || y_new >= hi {
                let target = if y_new >= hi { hi } else { lo };
                let theta = locate_crossing(stepper, y, h_try, target);
                return Ok(Outcome {
                    y: target,
                    t: t + theta * h_try,
                    steps,
                    max_err,
                    stopped: true,
                });
            }
        }
        y = y_new;
        t = t + h_try;
        h = h_try * ctl.factor(ratio);
    }
    Ok(Outcome { y, t: t_end, steps, max_err, stopped: false })
}

/// Fraction `theta` of the step at which the single-step solution reaches `target`.
fn locate_crossing<T: Real>(stepper: &Stepper<'_, T>, y: T, h: T, target: T) -> T {
    let side = (target - y).signum();
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..80 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid == lo || mid == hi {
            break;
        }
        let (ym, _) = stepper.step(y, mid * h);
        if (ym - target) * side < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn check_inside<T: Real>(model: &VectorFieldModel<T>, x0: T) -> Result<()> {
    if model.contains(x0) {
        Ok(())
    } else {
        Err(param("x0", format!("{x0} is outside [{}, {}]", model.q_minus(), model.q_plus())))
    }
}

/// `S^t x0`, stopping early at the boundary of the interval.
pub fn flow_forward<T: Real>(
    model: &VectorFieldModel<T>,
    x0: T,
    t: T,
    rel_tol: T,
) -> Result<FlowResult<T>> {
    check_inside(model, x0)?;
    if t < T::zero() {
        return Err(param("t", "must be nonnegative"));
    }
    let (qm, qp) = (model.q_minus(), model.q_plus());
    if (x0 <= qm || x0 >= qp) && x0 != T::zero() {
        return Ok(FlowResult { x_end: x0, t_elapsed: T::zero(), steps_taken: 0, max_local_error_estimate: T::zero() });
    }
    let out = integrate(
        &Stepper::new(model, false),
        &Controller::new(rel_tol)?,
        x0,
        t,
        &Stop::Boundary { lo: qm, hi: qp },
    )?;
    Ok(FlowResult {
        x_end: out.y,
        t_elapsed: out.t,
        steps_taken: out.steps,
        max_local_error_estimate: out.max_err,
    })
}

/// `S^{-t} x0`. Once `|x| < BACKWARD_CUTOFF` the remaining time is covered by
/// the linear flow `x e^{-lambda s}`, whose relative error there is `O(|x|)`.
pub fn flow_backward<T: Real>(
    model: &VectorFieldModel<T>,
    x0: T,
    t: T,
    rel_tol: T,
) -> Result<FlowResult<T>> {
    check_inside(model, x0)?;
    if t < T::zero() {
        return Err(param("t", "must be nonnegative"));
    }
    let out = integrate(
        &Stepper::new(model, true),
        &Controller::new(rel_tol)?,
        x0,
        t,
        &Stop::Cutoff(T::lit(BACKWARD_CUTOFF)),
    )?;
    let x_end = if out.stopped {
        out.y * (-model.lambda() * (t - out.t)).exp()
    } else {
        out.y
    };
    Ok(FlowResult {
        x_end,
        t_elapsed: t,
        steps_taken: out.steps,
        max_local_error_estimate: out.max_err,
    })
}

/// Time `T(x)` for the deterministic flow started at `x != 0` to reach the
/// boundary of the interval.
pub fn deterministic_exit_time<T: Real>(model: &VectorFieldModel<T>, x: T) -> Result<T> {
    deterministic_exit_time_tol(model, x, T::lit(DEFAULT_REL_TOL))
}

pub fn deterministic_exit_time_tol<T: Real>(model: &VectorFieldModel<T>, x: T, rel_tol: T) -> Result<T> {
    if x == T::zero() {
        return Err(Error::UndefinedExit);
    }
    check_inside(model, x)?;
    if x <= model.q_minus() || x >= model.q_plus() {
        return Ok(T::zero());
    }
    // |x| as small as the smallest normal needs ~708/lambda in f64
    let horizon = T::lit(2e3) / model.lambda();
    let r = flow_forward(model, x, horizon, rel_tol)?;
    let at_boundary = (r.x_end - model.q_plus()).abs() <= T::lit(BOUNDARY_TOL)
        || (r.x_end - model.q_minus()).abs() <= T::lit(BOUNDARY_TOL);
    if !at_boundary {
        return Err(Error::Convergence { x: x.to_f64_lossy(), t_max: horizon.to_f64_lossy() });
    }
    Ok(r.t_elapsed)
}
