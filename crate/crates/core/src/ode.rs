//! Time grids, piecewise-constant controls and fixed-step RK4 sweeps.
//!
//! The backward sweep is the exact reverse-mode derivative of the forward
//! RK4 map, evaluated at the stage states recorded during the forward
//! pass. The costate at the nodes is `p = −∂J/∂x` for the discrete loss,
//! so the adjoint gradient and finite differences of the loss agree to
//! roundoff rather than to `O(dt)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Model;

/// Components above this magnitude abort integration.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// RK4 quadrature weights.
const B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node time `k·T/n`, computed directly rather than by accumulation.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.n_steps as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.time(k))
    }
}

/// Piecewise-constant control: `values[k]` holds on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    grid: TimeGrid,
    param_dim: usize,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("ControlPath: intervals", grid.n_steps(), values.len())?;
        let param_dim = values.first().map_or(0, Vec::len);
        if param_dim == 0 {
            return Err(Error::InvalidArgument("control values must be nonempty".into()));
        }
        let mut flat = Vec::with_capacity(param_dim * values.len());
        for v in &values {
            check_dim("ControlPath: parameter", param_dim, v.len())?;
            flat.extend_from_slice(v);
        }
        Ok(ControlPath {
            grid,
            param_dim,
            values: flat,
        })
    }

    pub fn from_flat(grid: TimeGrid, param_dim: usize, values: Vec<f64>) -> Result<Self> {
        if param_dim == 0 {
            return Err(Error::InvalidArgument("parameter dimension must be positive".into()));
        }
        check_dim("ControlPath: flat length", grid.n_steps() * param_dim, values.len())?;
        Ok(ControlPath {
            grid,
            param_dim,
            values,
        })
    }

    pub fn constant(grid: TimeGrid, theta: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.n_steps() * theta.len());
        for _ in 0..grid.n_steps() {
            values.extend_from_slice(theta);
        }
        ControlPath {
            grid,
            param_dim: theta.len(),
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn len(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.param_dim..(k + 1) * self.param_dim]
    }

    pub fn value_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.param_dim..(k + 1) * self.param_dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `max_k ‖self_k − other_k‖₂`, the discrete `L∞([0,T])` distance.
    pub fn sup_distance(&self, other: &ControlPath) -> f64 {
        (0..self.len())
            .map(|k| {
                self.value(k)
                    .iter()
                    .zip(other.value(k))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn project(&mut self, theta_set: &crate::model::ThetaSet) {
        for k in 0..self.len() {
            theta_set.project(self.value_mut(k));
        }
    }
}

/// Node values (and recorded RK4 stages) of a forward sweep.
///
/// With `substeps = s`, node `j` of the integration grid sits at time
/// `j·dt/s`; [`StatePath::node`] indexes control nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    grid: TimeGrid,
    substeps: usize,
    dim: usize,
    first_step: usize,
    nodes: Vec<f64>,
    stages: Vec<f64>,
}

impl StatePath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Number of integration steps covered.
    pub fn n_fine_steps(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    /// Value at integration node `j` (relative to the first stored node).
    pub fn fine_node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    /// Value at control node `k` (relative to the first stored node).
    pub fn node(&self, k: usize) -> &[f64] {
        self.fine_node(k * self.substeps)
    }

    pub fn initial(&self) -> &[f64] {
        self.fine_node(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.fine_node(self.n_fine_steps())
    }

    /// Stage state `i ∈ {0,1,2,3}` of integration step `j`.
    pub fn stage(&self, j: usize, i: usize) -> &[f64] {
        if i == 0 {
            return self.fine_node(j);
        }
        let off = (j * 3 + (i - 1)) * self.dim;
        &self.stages[off..off + self.dim]
    }

    pub fn nodes_flat(&self) -> &[f64] {
        &self.nodes
    }
}

/// Costate node values and stage costates of the discrete adjoint sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CostatePath {
    grid: TimeGrid,
    substeps: usize,
    dim: usize,
    nodes: Vec<f64>,
    stages: Vec<f64>,
}

impl CostatePath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_fine_steps(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    pub fn fine_node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node(&self, k: usize) -> &[f64] {
        self.fine_node(k * self.substeps)
    }

    pub fn initial(&self) -> &[f64] {
        self.fine_node(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.fine_node(self.n_fine_steps())
    }

    /// Stage costate `i` of step `j`: the multiplier paired with stage
    /// state `i`, scaled so it approximates `p` at the stage time.
    pub fn stage(&self, j: usize, i: usize) -> &[f64] {
        let off = (j * 4 + i) * self.dim;
        &self.stages[off..off + self.dim]
    }
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|a| a.is_finite() && a.abs() <= BLOW_UP_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::BlowUp { step })
    }
}

/// Fixed-step RK4 with `substeps` integration steps per control interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rk4 {
    pub substeps: usize,
}

impl Default for Rk4 {
    fn default() -> Self {
        Rk4 { substeps: 1 }
    }
}

impl Rk4 {
    pub fn new(substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        Ok(Rk4 { substeps })
    }

    pub fn integrate_state(&self, model: &dyn Model, x0: &[f64], ctrl: &ControlPath) -> Result<StatePath> {
        self.integrate_window(model, x0, ctrl, 0, ctrl.len())
    }

    /// Integrates over control intervals `k0..k1` starting from `x0` at `t_{k0}`.
    ///
    /// The step size is the parent grid's, so a split run reproduces the
    /// corresponding nodes of the full run bit for bit.
    pub fn integrate_window(
        &self,
        model: &dyn Model,
        x0: &[f64],
        ctrl: &ControlPath,
        k0: usize,
        k1: usize,
    ) -> Result<StatePath> {
        let dims = model.dims();
        let d = dims.state;
        check_dim("integrate_state: x0", d, x0.len())?;
        check_dim("integrate_state: control", dims.param, ctrl.param_dim())?;
        if k0 > k1 || k1 > ctrl.len() {
            return Err(Error::InvalidArgument(format!("bad window {k0}..{k1}")));
        }
        let s = self.substeps;
        let h = ctrl.grid().dt() / s as f64;
        let half_h = 0.5 * h;
        let n_fine = (k1 - k0) * s;
        let first_step = k0 * s;
        check_finite(x0, first_step)?;

        let mut nodes = Vec::with_capacity((n_fine + 1) * d);
        let mut stages = Vec::with_capacity(n_fine * 3 * d);
        nodes.extend_from_slice(x0);

        let mut x = x0.to_vec();
        let mut k1v = vec![0.0; d];
        let mut k2v = vec![0.0; d];
        let mut k3v = vec![0.0; d];
        let mut k4v = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for j in 0..n_fine {
            let theta = ctrl.value(k0 + j / s);
            model.drift(&x, theta, &mut k1v);
            for i in 0..d {
                tmp[i] = x[i] + half_h * k1v[i];
            }
            stages.extend_from_slice(&tmp);
            model.drift(&tmp, theta, &mut k2v);
            for i in 0..d {
                tmp[i] = x[i] + half_h * k2v[i];
            }
            stages.extend_from_slice(&tmp);
            model.drift(&tmp, theta, &mut k3v);
            for i in 0..d {
                tmp[i] = x[i] + h * k3v[i];
            }
            stages.extend_from_slice(&tmp);
            model.drift(&tmp, theta, &mut k4v);
            for i in 0..d {
                x[i] += (h / 6.0) * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            }
            check_finite(&x, first_step + j + 1)?;
            nodes.extend_from_slice(&x);
        }
        Ok(StatePath {
            grid: *ctrl.grid(),
            substeps: s,
            dim: d,
            first_step,
            nodes,
            stages,
        })
    }

    /// Backward sweep for `p_T = −∇ₓΦ(x_T, y0)`, `ṗ = −∇ₓH(x, p, θ)`.
    pub fn integrate_costate(
        &self,
        model: &dyn Model,
        states: &StatePath,
        y0: &[f64],
        ctrl: &ControlPath,
    ) -> Result<CostatePath> {
        let dims = model.dims();
        let d = dims.state;
        check_dim("integrate_costate: y0", dims.target, y0.len())?;
        check_dim("integrate_costate: state", d, states.dim())?;
        if states.substeps != self.substeps
            || states.grid != *ctrl.grid()
            || states.first_step != 0
            || states.n_fine_steps() != ctrl.len() * self.substeps
        {
            return Err(Error::InvalidArgument(
                "state path was not produced on this control grid".into(),
            ));
        }
        let s = self.substeps;
        let h = ctrl.grid().dt() / s as f64;
        let n_fine = states.n_fine_steps();

        let mut nodes = vec![0.0; (n_fine + 1) * d];
        let mut stage_costates = vec![0.0; n_fine * 4 * d];

        // Work with the loss adjoint a = ∂J/∂x = −p.
        let mut a = vec![0.0; d];
        model.terminal_loss_dx(states.terminal(), y0, &mut a);
        check_finite(&a, n_fine)?;
        for i in 0..d {
            nodes[n_fine * d + i] = -a[i];
        }

        let mut jac = vec![0.0; d * d];
        let mut g = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut u = vec![0.0; d];
        let mut lx = vec![0.0; d];
        let mut next = vec![0.0; d];
        for j in (0..n_fine).rev() {
            let theta = ctrl.value(j / s);
            next.copy_from_slice(&a);
            for i in 0..d {
                g[3][i] = h * B[3] * a[i];
                g[2][i] = h * B[2] * a[i];
                g[1][i] = h * B[1] * a[i];
                g[0][i] = h * B[0] * a[i];
            }
            // Stage i feeds stage i+1 with coefficient c: 1/2, 1/2, 1.
            let coupling = [0.5 * h, 0.5 * h, h];
            for stage in (0..4).rev() {
                model.drift_dx(states.stage(j, stage), theta, &mut jac);
                for col in 0..d {
                    let mut acc = 0.0;
                    for row in 0..d {
                        acc += jac[row * d + col] * g[stage][row];
                    }
                    u[col] = acc;
                }
                for i in 0..d {
                    next[i] += u[i];
                }
                if stage > 0 {
                    for i in 0..d {
                        g[stage - 1][i] += coupling[stage - 1] * u[i];
                    }
                }
            }
            model.running_cost_dx(states.fine_node(j), theta, &mut lx);
            for i in 0..d {
                next[i] += h * lx[i];
            }
            for (stage, (gs, b)) in g.iter().zip(B).enumerate() {
                let off = (j * 4 + stage) * d;
                for i in 0..d {
                    stage_costates[off + i] = -gs[i] / (b * h);
                }
            }
            check_finite(&next, j)?;
            a.copy_from_slice(&next);
            for i in 0..d {
                nodes[j * d + i] = -a[i];
            }
        }
        Ok(CostatePath {
            grid: *ctrl.grid(),
            substeps: s,
            dim: d,
            nodes,
            stages: stage_costates,
        })
    }
}

pub fn integrate_state(model: &dyn Model, x0: &[f64], ctrl: &ControlPath) -> Result<StatePath> {
    Rk4::default().integrate_state(model, x0, ctrl)
}

pub fn integrate_costate(
    model: &dyn Model,
    states: &StatePath,
    y0: &[f64],
    ctrl: &ControlPath,
) -> Result<CostatePath> {
    Rk4::default().integrate_costate(model, states, y0, ctrl)
}

/// `‖full − (split at control node k, restart)‖∞` over all nodes.
pub fn restart_consistency(
    model: &dyn Model,
    rk: Rk4,
    x0: &[f64],
    ctrl: &ControlPath,
    split: usize,
) -> Result<f64> {
    if split > ctrl.len() {
        return Err(Error::InvalidArgument(format!(
            "split node {split} beyond {} intervals",
            ctrl.len()
        )));
    }
    let full = rk.integrate_state(model, x0, ctrl)?;
    let head = rk.integrate_window(model, x0, ctrl, 0, split)?;
    let tail = rk.integrate_window(model, head.terminal(), ctrl, split, ctrl.len())?;
    let d = full.dim();
    let split_fine = split * rk.substeps;
    let mut worst = 0.0_f64;
    for j in 0..=full.n_fine_steps() {
        let piece = if j <= split_fine {
            head.fine_node(j)
        } else {
            tail.fine_node(j - split_fine)
        };
        for i in 0..d {
            worst = worst.max((full.fine_node(j)[i] - piece[i]).abs());
        }
    }
    Ok(worst)
}

/// Config section for the time discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    1
}

impl TimeConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn rk4(&self) -> Result<Rk4> {
        Rk4::new(self.substeps)
    }
}
