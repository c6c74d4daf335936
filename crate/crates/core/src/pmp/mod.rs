//! Mean-field maximum principle: sweeps, residual map, loss and gradient.
//!
//! For a control path `θ`, every sample is swept forward (state) and
//! backward (costate). The residual map is the averaged parameter gradient
//! of the Hamiltonian,
//!
//! ```text
//! F(θ)_k = E[ Σᵢ bᵢ ∇_θf(Xₖᵢ, θ_k)ᵀ Pₖᵢ − ∇_θL(x_k, θ_k) ]
//! ```
//!
//! where `Xₖᵢ`, `Pₖᵢ` are the RK4 stage states and stage costates of
//! interval `k` and `bᵢ` the RK4 weights (averaged over substeps). It tends
//! to `E ∇_θH(x_{t_k}, p_{t_k}, θ_k)` as the step shrinks and equals
//! `−(1/dt) ∂J/∂θ_k` exactly for the discrete loss.

mod diagnostics;
mod msa;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{
    estimate_stability_constant, hamiltonian_constancy, hessian_check, stability_ratio, HessianReport,
    StabilityEstimate,
};
pub use msa::{maximization_step, msa_solve};

use crate::error::{check_dim, Error, Result};
use crate::model::{Dims, Model};
use crate::ode::{ControlPath, CostatePath, Rk4, StatePath};
use crate::population::{Sample, WeightedSamples};

const RK4_WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// State and costate paths of one sample under a fixed control.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub sample: Sample,
    pub states: StatePath,
    pub costates: CostatePath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Maximizer {
    /// Exact `g / 2λ` (clamped) for models quadratic in `θ`.
    ClosedFormQuadratic,
    /// Projected gradient ascent on the averaged interval Hamiltonian,
    /// started from the current iterate.
    ProjectedGradient { inner_iters: usize, step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Sup-norm residual tolerance.
    pub tol: f64,
    /// Damping `β ∈ (0, 1]` in `θ ← (1 − β)θ + βθ̂`.
    pub damping: f64,
    pub maximizer: Maximizer,
    /// Halve `β` (up to 30 times) when a step does not reduce the residual.
    pub backtrack: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 500,
            tol: 1e-10,
            damping: 0.5,
            maximizer: Maximizer::ClosedFormQuadratic,
            backtrack: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tol must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if let Maximizer::ProjectedGradient { inner_iters, step } = self.maximizer {
            if inner_iters == 0 || !(step > 0.0) {
                return Err(Error::InvalidArgument("projected gradient needs iterations and a positive step".into()));
            }
        }
        Ok(())
    }
}

/// Output of [`msa_solve`].
#[derive(Debug, Clone)]
pub struct PMPSolution {
    pub control: ControlPath,
    pub samples: WeightedSamples,
    pub bundles: Vec<TrajectoryBundle>,
    /// Sup-norm residual after each iteration (first entry: the initial guess).
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub rk: Rk4,
}

impl PMPSolution {
    /// Residual of the returned control.
    pub fn residual(&self) -> f64 {
        self.residual_history
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Residual path (`n × m`, row-major by interval) and its sup norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub path: Vec<f64>,
    pub sup_norm: f64,
    pub param_dim: usize,
}

impl Residual {
    pub fn interval(&self, k: usize) -> &[f64] {
        &self.path[k * self.param_dim..(k + 1) * self.param_dim]
    }
}

fn check_inputs(model: &dyn Model, samples: &WeightedSamples, ctrl: &ControlPath) -> Result<Dims> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let dims = model.dims();
    check_dim("control parameter", dims.param, ctrl.param_dim())?;
    for s in samples.samples() {
        check_dim("sample x", dims.state, s.x.len())?;
        check_dim("sample y", dims.target, s.y.len())?;
    }
    Ok(dims)
}

/// Forward and backward sweep of every sample (samples processed in
/// parallel, results kept in sample order).
pub fn sweep(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    ctrl: &ControlPath,
) -> Result<Vec<TrajectoryBundle>> {
    check_inputs(model, samples, ctrl)?;
    samples
        .samples()
        .par_iter()
        .map(|s| {
            let states = rk.integrate_state(model, &s.x, ctrl)?;
            let costates = rk.integrate_costate(model, &states, &s.y, ctrl)?;
            Ok(TrajectoryBundle {
                sample: s.clone(),
                states,
                costates,
            })
        })
        .collect()
}

/// `Σᵢ bᵢ ∇_θf(Xᵢ, θ)ᵀ Pᵢ` averaged over the substeps of interval `k`, the
/// coefficient of the drift part of the interval Hamiltonian's gradient.
fn drift_coefficient(model: &dyn Model, rk: Rk4, bundle: &TrajectoryBundle, k: usize, theta: &[f64], out: &mut [f64]) {
    let Dims { state: d, param: m, .. } = model.dims();
    let mut jt = vec![0.0; d * m];
    out.fill(0.0);
    let s = rk.substeps;
    for j in k * s..(k + 1) * s {
        for (i, b) in RK4_WEIGHTS.iter().enumerate() {
            model.drift_dtheta(bundle.states.stage(j, i), theta, &mut jt);
            let p = bundle.costates.stage(j, i);
            for (c, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += jt[r * m + c] * p[r];
                }
                *o += b * acc;
            }
        }
    }
    let inv = 1.0 / s as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Per-sample interval gradient of the Hamiltonian at parameter `theta`.
fn interval_gradient(model: &dyn Model, rk: Rk4, bundle: &TrajectoryBundle, k: usize, theta: &[f64], out: &mut [f64]) {
    let m = model.dims().param;
    drift_coefficient(model, rk, bundle, k, theta, out);
    let mut lt = vec![0.0; m];
    let s = rk.substeps;
    let mut cost_grad = vec![0.0; m];
    for j in k * s..(k + 1) * s {
        model.running_cost_dtheta(bundle.states.fine_node(j), theta, &mut lt);
        for (c, v) in cost_grad.iter_mut().zip(&lt) {
            *c += v;
        }
    }
    let inv = 1.0 / s as f64;
    for (o, c) in out.iter_mut().zip(&cost_grad) {
        *o -= c * inv;
    }
}

/// Unprojected `F(θ)` from precomputed bundles.
pub fn residual_from_bundles(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    bundles: &[TrajectoryBundle],
    ctrl: &ControlPath,
) -> Vec<f64> {
    let m = model.dims().param;
    let n = ctrl.len();
    let rows: Vec<Vec<f64>> = bundles
        .par_iter()
        .map(|b| {
            let mut row = vec![0.0; n * m];
            for k in 0..n {
                interval_gradient(model, rk, b, k, ctrl.value(k), &mut row[k * m..(k + 1) * m]);
            }
            row
        })
        .collect();
    samples.weighted_sum_rows(&rows)
}

/// Residual as reported to the solver: `F` itself for unbounded `Θ`, the
/// projected composite `clamp(θ + F) − θ` for a box.
pub(crate) fn residual_report(model: &dyn Model, ctrl: &ControlPath, raw: Vec<f64>) -> Residual {
    let m = model.dims().param;
    let mut path = raw;
    if model.theta_set().is_bounded() {
        let mut shifted = vec![0.0; m];
        for k in 0..ctrl.len() {
            let theta = ctrl.value(k);
            for c in 0..m {
                shifted[c] = theta[c] + path[k * m + c];
            }
            model.theta_set().project(&mut shifted);
            for c in 0..m {
                path[k * m + c] = shifted[c] - theta[c];
            }
        }
    }
    let sup_norm = path
        .chunks(m)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Residual {
        path,
        sup_norm,
        param_dim: m,
    }
}

/// `F(θ)_k = E ∇_θH` per control interval, with its sup norm.
pub fn pmp_residual(model: &dyn Model, rk: Rk4, samples: &WeightedSamples, ctrl: &ControlPath) -> Result<Residual> {
    let bundles = sweep(model, rk, samples, ctrl)?;
    let raw = residual_from_bundles(model, rk, samples, &bundles, ctrl);
    Ok(residual_report(model, ctrl, raw))
}

/// Gradient density of the loss: `(1/dt) ∂J/∂θ_k = −F(θ)_k`.
pub fn adjoint_gradient(model: &dyn Model, rk: Rk4, samples: &WeightedSamples, ctrl: &ControlPath) -> Result<Vec<f64>> {
    let bundles = sweep(model, rk, samples, ctrl)?;
    let raw = residual_from_bundles(model, rk, samples, &bundles, ctrl);
    Ok(raw.into_iter().map(|v| -v).collect())
}

/// `J(θ) = Σ wᵢ [Φ(x_T, y) + Σ_j L(x_j, θ_j) h]`, left-endpoint rule.
pub fn loss(model: &dyn Model, rk: Rk4, samples: &WeightedSamples, ctrl: &ControlPath) -> Result<f64> {
    check_inputs(model, samples, ctrl)?;
    let h = ctrl.grid().dt() / rk.substeps as f64;
    let per_sample: Result<Vec<f64>> = samples
        .samples()
        .par_iter()
        .map(|s| {
            let path = rk.integrate_state(model, &s.x, ctrl)?;
            let mut running = 0.0;
            for j in 0..path.n_fine_steps() {
                running += model.running_cost(path.fine_node(j), ctrl.value(j / rk.substeps)) * h;
            }
            Ok(model.terminal_loss(path.terminal(), &s.y) + running)
        })
        .collect();
    Ok(samples.weighted_sum(&per_sample?))
}

/// Writes a control path as CSV with columns `t, theta_1..theta_m`.
pub fn write_control_csv<W: Write>(out: &mut W, ctrl: &ControlPath) -> Result<()> {
    let mut header = String::from("t");
    for i in 1..=ctrl.param_dim() {
        header.push_str(&format!(",theta_{i}"));
    }
    writeln!(out, "{header}")?;
    for k in 0..ctrl.len() {
        let mut line = format!("{:?}", ctrl.grid().time(k));
        for v in ctrl.value(k) {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Config section for the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    #[serde(default = "defaults::maximizer")]
    pub maximizer: String,
    #[serde(default = "defaults::inner_iters")]
    pub inner_iters: usize,
    #[serde(default = "defaults::step")]
    pub step: f64,
    #[serde(default = "defaults::backtrack")]
    pub backtrack: bool,
}

mod defaults {
    pub fn max_iter() -> usize {
        500
    }
    pub fn tol() -> f64 {
        1e-10
    }
    pub fn damping() -> f64 {
        0.5
    }
    pub fn maximizer() -> String {
        "closed_form_quadratic".into()
    }
    pub fn inner_iters() -> usize {
        50
    }
    pub fn step() -> f64 {
        0.1
    }
    pub fn backtrack() -> bool {
        true
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            max_iter: defaults::max_iter(),
            tol: defaults::tol(),
            damping: defaults::damping(),
            maximizer: defaults::maximizer(),
            inner_iters: defaults::inner_iters(),
            step: defaults::step(),
            backtrack: defaults::backtrack(),
        }
    }
}

impl SolverSection {
    pub fn build(&self) -> Result<SolverConfig> {
        let maximizer = match self.maximizer.as_str() {
            "closed_form_quadratic" => Maximizer::ClosedFormQuadratic,
            "projected_gradient" => Maximizer::ProjectedGradient {
                inner_iters: self.inner_iters,
                step: self.step,
            },
            other => return Err(Error::Config(format!("unknown solver.maximizer `{other}`"))),
        };
        let cfg = SolverConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            damping: self.damping,
            maximizer,
            backtrack: self.backtrack,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
