//! Mean-field optimal control for continuous-depth networks.
//!
//! Training a residual network in the continuous-time limit is posed as a
//! control problem: a shared parameter path `θ` drives the ODE
//! `ẋ = f(x, θ)` for every input-target pair `(x0, y0) ~ μ0`, and the loss
//! `J(θ) = E[Φ(x_T, y0) + ∫ L(x_t, θ_t) dt]` is minimized over paths.
//!
//! The crate provides:
//!
//! * [`model`]: built-in dynamics, Hamiltonian `H = p·f − L` and derivatives;
//! * [`ode`]: time grids, piecewise-constant controls, RK4 state and costate sweeps;
//! * [`population`]: finite-support `μ0`, seeded sampling, exact expectations, `W₂`;
//! * [`pmp`]: the mean-field maximum principle solved by successive approximation,
//!   plus residual, gradient, constancy, Hessian and stability diagnostics;
//! * [`hjb`]: grid and exhaustive-search checks of the dynamic-programming side;
//! * [`experiments`]: config ingestion, seeded studies and the validation suite.

pub mod error;
pub mod experiments;
pub mod hjb;
pub mod model;
pub mod ode;
pub mod pmp;
pub mod population;
pub mod reduce;

pub use error::{Error, Result};
pub use model::{BuiltinModel, Dims, Model, ModelSpec, ThetaHessian, ThetaSet};
pub use ode::{ControlPath, CostatePath, Rk4, StatePath, TimeGrid};
pub use population::{EmpiricalMeasure, PopulationSpec, Sample, WeightedSamples};
