//! Exit-time tails of one-dimensional small-noise diffusions started near a
//! repelling equilibrium.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases at the bottom of this file fix `f64`.

// `!(x > 0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// operation signatures follow the documented parameter lists
#![allow(clippy::too_many_arguments)]

pub mod error;
pub mod estimators;
pub mod flow;
pub mod interp;
pub mod linear_exact;
pub mod linearizer;
pub mod model;
pub mod quadrature;
mod real;
pub mod rng;
pub mod sde_sim;
pub mod theory;

pub use error::{Error, Result};
pub use real::Real;

pub use estimators::{FitResult, KsResult, SideSplit, TailEstimate};
pub use flow::{deterministic_exit_time, flow_backward, flow_forward, FlowResult};
pub use linear_exact::{EquidistReport, GaussianSpec};
pub use linearizer::{build_default_map, build_map, conjugation_residual};
pub use model::{validate_model, DriftSpec, SigmaSpec, ValidationReport};
pub use sde_sim::{run_batch, BatchJob, BatchSummary, Side, SimTarget, Threshold, YBackend};
pub use theory::{Branch, Quantity};

pub type Model = model::VectorFieldModel<f64>;
pub type Noise = model::NoiseLevel<f64>;
pub type Map = linearizer::LinearizationMap<f64>;
pub type LinearModel = linear_exact::LinearModel<f64>;
pub type Record = sde_sim::ExitRecord<f64>;
pub type Coupling = sde_sim::CouplingRecord<f64>;
pub type Options = sde_sim::SimOptions<f64>;
pub type Setting = sde_sim::LinearizedSetting<f64>;
pub type Prediction = theory::TheoryPrediction<f64>;
pub type Job = sde_sim::BatchJob<f64>;
