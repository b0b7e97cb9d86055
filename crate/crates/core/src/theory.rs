//! Closed-form small-noise predictions: the Gaussian kernel `psi0`, exit-time
//! tail levels for the full interval and for the `eps^beta` neighbourhood in
//! linearized coordinates, deterministic transit times, and the conditional
//! limit law of (overshoot, exit side).
//!
//! Tail predictions are asymptotic. They are returned with their `eps`
//! power separated out and are never clamped to `[0, 1]`.

use serde::Serialize;

use crate::error::{param, Result};
use crate::linearizer::LinearizationMap;
use crate::model::{NoiseLevel, VectorFieldModel};
use crate::Real;

/// Exit side selector for predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Left,
    Right,
    /// both sides summed
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    TailJointSide,
    TailTotal,
    SmallNbhdTail,
    DeterministicTransit,
    ConditionalSideWeight,
    ConditionalOvershootRate,
}

/// Parameters a prediction was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionInputs<T: Real> {
    pub epsilon: T,
    pub alpha: T,
    /// time shift `t` (full interval) or `C` (neighbourhood)
    pub shift: T,
    /// starting point in units of `eps`
    pub start: T,
    pub side: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryPrediction<T: Real> {
    pub quantity: Quantity,
    /// `eps^{alpha-1} * coefficient`
    pub value: T,
    pub coefficient: T,
    pub eps_power: T,
    pub inputs: PredictionInputs<T>,
    pub warning: Option<String>,
}

/// `psi0(x) = sqrt(lambda/pi) exp(-lambda (x/sigma0)^2) / sigma0`, the centred
/// normal density with variance `sigma0^2 / (2 lambda)`.
#[inline]
pub fn psi0<T: Real>(x: T, lambda: T, sigma0: T) -> T {
    let r = x / sigma0;
    (lambda / T::PI()).sqrt() * (-lambda * r * r).exp() / sigma0
}

fn alpha_warning<T: Real>(alpha: T) -> Option<String> {
    (alpha <= T::one()).then(|| {
        format!("alpha = {alpha} is outside the asymptotic regime alpha > 1; value is the formal limit")
    })
}

/// Asymptotic level of `P(tau > (alpha/lambda) log(1/eps) + t; exit at side)`
/// for a start at `eps * x`:
/// `eps^{alpha-1} e^{-lambda t} |f(q_side)| psi0(x)`; `Total` sums both sides.
pub fn main_tail_prediction<T: Real>(
    map: &LinearizationMap<T>,
    model: &VectorFieldModel<T>,
    noise: &NoiseLevel<T>,
    x: T,
    alpha: T,
    t: T,
    side: Branch,
) -> Result<TheoryPrediction<T>> {
    if x.abs() > noise.k {
        return Err(param("x", format!("|x| = {} exceeds K(eps) = {}", x.abs(), noise.k)));
    }
    let lam = model.lambda();
    let image = match side {
        Branch::Left => map.boundary_image(false),
        Branch::Right => map.boundary_image(true),
        Branch::Total => map.boundary_image(false) + map.boundary_image(true),
    };
    let coefficient = (-lam * t).exp() * image * psi0(x, lam, model.sigma0());
    let eps_power = alpha - T::one();
    Ok(TheoryPrediction {
        quantity: if side == Branch::Total { Quantity::TailTotal } else { Quantity::TailJointSide },
        value: noise.epsilon.powf(eps_power) * coefficient,
        coefficient,
        eps_power,
        inputs: PredictionInputs { epsilon: noise.epsilon, alpha, shift: t, start: x, side },
        warning: alpha_warning(alpha),
    })
}

/// Limit law of `(tau - threshold, exit side)` given survival past the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalLaw<T: Real> {
    pub rate: T,
    pub weight_left: T,
    pub weight_right: T,
}

pub fn conditional_limit_law<T: Real>(map: &LinearizationMap<T>, lambda: T) -> ConditionalLaw<T> {
    let l = map.boundary_image(false);
    let r = map.boundary_image(true);
    let weight_right = r / (l + r);
    ConditionalLaw {
        rate: lambda,
        weight_left: T::one() - weight_right,
        weight_right,
    }
}

/// Asymptotic level of the exit from `[-eps^beta, eps^beta]` in linearized
/// coordinates after time `((alpha-beta)/lambda) log(1/eps) - C`:
/// `eps^{alpha-1} e^{lambda C} psi0(y)` per side.
#[allow(clippy::too_many_arguments)]
pub fn small_nbhd_prediction<T: Real>(
    y: T,
    alpha: T,
    c: T,
    beta: T,
    noise: &NoiseLevel<T>,
    lambda: T,
    sigma0: T,
    side: Branch,
) -> Result<TheoryPrediction<T>> {
    if !(beta > T::zero() && beta < T::one()) {
        return Err(param("beta", format!("{beta} is not in (0, 1)")));
    }
    let per_side = (lambda * c).exp() * psi0(y, lambda, sigma0);
    let coefficient = match side {
        Branch::Total => per_side + per_side,
        _ => per_side,
    };
    let eps_power = alpha - T::one();
    Ok(TheoryPrediction {
        quantity: Quantity::SmallNbhdTail,
        value: noise.epsilon.powf(eps_power) * coefficient,
        coefficient,
        eps_power,
        inputs: PredictionInputs { epsilon: noise.epsilon, alpha, shift: c, start: y, side },
        warning: alpha_warning(alpha),
    })
}

/// Deterministic transit time from `g(+-eps^beta)` to `q_side`:
/// `(beta/lambda) log(1/eps) + (1/lambda) log |f(q_side)|`.
pub fn deterministic_transit<T: Real>(
    map: &LinearizationMap<T>,
    model: &VectorFieldModel<T>,
    noise: &NoiseLevel<T>,
    beta: T,
    right: bool,
) -> Result<T> {
    let level = noise.epsilon.powf(beta);
    let inner = map.boundary_image(false).min(map.boundary_image(true));
    if !(level < inner) {
        return Err(param("beta", format!("eps^beta = {level} is not inside f(I)")));
    }
    let lam = model.lambda();
    Ok(beta / lam * noise.log_inv() + map.boundary_image(right).ln() / lam)
}
