//! Dynamic-programming checks at desk scale.
//!
//! Two reductions of the value function `v(t, μ)` are computed:
//!
//! * the single-atom case `μ = δ_(x, y)` in one dimension, where `v` solves
//!   a classical HJB equation, by semi-Lagrangian backward induction;
//! * populations of up to three atoms, by exhaustive search over
//!   piecewise-constant controls on a coarse grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Model;
use crate::ode::{ControlPath, Rk4, TimeGrid};
use crate::pmp::PMPSolution;
use crate::population::{wasserstein2_weighted, PopulationSpec, Sample};

/// Maximum number of controls [`value_by_search`] will enumerate.
pub const SEARCH_BUDGET: u128 = 1_000_000;
/// Maximum number of atoms accepted by the exhaustive search.
pub const MAX_SEARCH_ATOMS: usize = 3;

/// Uniform nodes `lo + j·(hi − lo)/(n − 1)`; halving the spacing keeps the
/// old nodes bit for bit.
fn uniform_node(lo: f64, hi: f64, nodes: usize, j: usize) -> f64 {
    if nodes == 1 {
        return lo;
    }
    lo + j as f64 * ((hi - lo) / (nodes - 1) as f64)
}

/// Discretization of the single-atom HJB problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbGrids {
    pub time: TimeGrid,
    pub x_lo: f64,
    pub x_hi: f64,
    pub x_nodes: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub theta_nodes: usize,
}

impl HjbGrids {
    pub fn validate(&self) -> Result<()> {
        if self.x_nodes < 3 || !(self.x_hi > self.x_lo) {
            return Err(Error::InvalidArgument("x-grid needs x_lo < x_hi and at least 3 nodes".into()));
        }
        if self.theta_nodes == 0 || !(self.theta_hi >= self.theta_lo) {
            return Err(Error::InvalidArgument("theta-grid needs lo <= hi and at least 1 node".into()));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.x_nodes - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        uniform_node(self.x_lo, self.x_hi, self.x_nodes, j)
    }

    pub fn theta(&self, j: usize) -> f64 {
        uniform_node(self.theta_lo, self.theta_hi, self.theta_nodes, j)
    }
}

/// Value function of the single-atom reduction on a space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grids: HjbGrids,
    pub target: f64,
    /// `values[k * x_nodes + j] = v(t_k, x_j)`.
    values: Vec<f64>,
    /// Grid argmin of the parameter at `(t_k, x_j)`, `k < n_steps`.
    policy: Vec<f64>,
}

impl ValueGrid {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grids.x_nodes;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grids.x_nodes + j]
    }

    /// Feedback parameter chosen at `(t_k, x_j)`.
    pub fn policy(&self, k: usize, j: usize) -> f64 {
        self.policy[k * self.grids.x_nodes + j]
    }

    /// Node index of `x` when it sits exactly on the grid.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        (0..self.grids.x_nodes).find(|&j| self.grids.x(j) == x)
    }

    fn dx_slice(&self, k: usize, x: f64) -> f64 {
        let g = &self.grids;
        let hx = g.hx();
        let v = self.slice(k);
        let d = |j: usize| (v[j + 1] - v[j - 1]) / (2.0 * hx);
        let s = ((x - g.x_lo) / hx).clamp(1.0, (g.x_nodes - 2) as f64);
        let i = (s.floor() as usize).min(g.x_nodes - 3);
        let frac = s - i as f64;
        (1.0 - frac) * d(i) + frac * d(i + 1)
    }

    /// `∂ₓv(t, x)` from central differences, linearly interpolated in `x`
    /// and `t`. `x` must lie in `[x_lo + hx, x_hi − hx]`.
    pub fn dx(&self, t: f64, x: f64) -> Result<f64> {
        let g = &self.grids;
        let hx = g.hx();
        let slack = 1e-12 * hx;
        if !(x >= g.x_lo + hx - slack && x <= g.x_hi - hx + slack) {
            return Err(Error::TrajectoryExitsGrid { t, x });
        }
        let n = g.time.n_steps();
        let s = (t / g.time.dt()).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let frac = s - k as f64;
        let a = self.dx_slice(k, x);
        if frac == 0.0 {
            return Ok(a);
        }
        Ok((1.0 - frac) * a + frac * self.dx_slice(k + 1, x))
    }

    /// Writes `t, x, v` rows, time-major.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,x,v")?;
        for k in 0..=self.grids.time.n_steps() {
            let t = self.grids.time.time(k);
            for j in 0..self.grids.x_nodes {
                writeln!(out, "{:?},{:?},{:?}", t, self.grids.x(j), self.value(k, j))?;
            }
        }
        Ok(())
    }
}

/// Linear interpolation at fractional node position `s ∈ [0, n − 1]`,
/// written so the result stays between the two neighbours in floating
/// point (keeps the scheme monotone).
fn interpolate(v: &[f64], s: f64) -> f64 {
    let last = v.len() - 1;
    let i = (s.floor() as usize).min(last - 1);
    let frac = s - i as f64;
    if frac == 0.0 {
        return v[i];
    }
    let (a, b) = (v[i], v[i + 1]);
    ((1.0 - frac) * a + frac * b).clamp(a.min(b), a.max(b))
}

/// Semi-Lagrangian backward induction for the single-atom reduction,
///
/// ```text
/// v(t_k, x) = min_θ [ L(x, θ) dt + v(t_{k+1}, x + f(x, θ) dt) ],
/// v(T, x)   = Φ(x, y),
/// ```
///
/// with `θ` over a uniform grid and linear interpolation in `x`. Feet that
/// land within one cell outside the grid take the edge value; feet further
/// out are an error.
pub fn solve_classical_hjb_1d(model: &dyn Model, y: f64, grids: &HjbGrids) -> Result<ValueGrid> {
    grids.validate()?;
    let dims = model.dims();
    if dims.state != 1 || dims.param != 1 || dims.target != 1 {
        return Err(Error::Unsupported("grid HJB solver needs a one-dimensional model".into()));
    }
    let nx = grids.x_nodes;
    let n = grids.time.n_steps();
    let dt = grids.time.dt();
    let hx = grids.hx();
    let thetas: Vec<f64> = (0..grids.theta_nodes).map(|j| grids.theta(j)).collect();

    let mut values = vec![0.0; (n + 1) * nx];
    let mut policy = vec![0.0; n * nx];
    for j in 0..nx {
        values[n * nx + j] = model.terminal_loss(&[grids.x(j)], &[y]);
    }
    for k in (0..n).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * nx);
        let next = &tail[..nx];
        let t = grids.time.time(k);
        let row: Result<Vec<(f64, f64)>> = (0..nx)
            .into_par_iter()
            .map(|j| {
                let x = grids.x(j);
                let mut best = (f64::INFINITY, thetas[0]);
                let mut f = [0.0];
                for &theta in &thetas {
                    model.drift(&[x], &[theta], &mut f);
                    let s = j as f64 + f[0] * dt / hx;
                    if !(s >= -1.0 && s <= nx as f64) {
                        return Err(Error::DomainTooSmall {
                            t,
                            x,
                            theta,
                            foot: x + f[0] * dt,
                            lo: grids.x_lo - hx,
                            hi: grids.x_hi + hx,
                        });
                    }
                    let cand = model.running_cost(&[x], &[theta]) * dt + interpolate(next, s.clamp(0.0, (nx - 1) as f64));
                    if cand < best.0 {
                        best = (cand, theta);
                    }
                }
                Ok(best)
            })
            .collect();
        for (j, (v, theta)) in row?.into_iter().enumerate() {
            head[k * nx + j] = v;
            policy[k * nx + j] = theta;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { step: 0 });
    }
    Ok(ValueGrid {
        grids: *grids,
        target: y,
        values,
        policy,
    })
}

/// Family of piecewise-constant controls for the exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseControlSpec {
    /// Terminal time `T`.
    pub horizon: f64,
    /// Equal-length control blocks covering `[t_start, T]`.
    pub n_blocks: usize,
    /// RK4 steps per block.
    pub steps_per_block: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub theta_step: f64,
}

impl CoarseControlSpec {
    pub fn theta_nodes(&self) -> usize {
        ((self.theta_hi - self.theta_lo) / self.theta_step).round() as usize + 1
    }

    pub fn theta(&self, j: usize) -> f64 {
        uniform_node(self.theta_lo, self.theta_hi, self.theta_nodes(), j)
    }

    fn validate(&self) -> Result<()> {
        if self.steps_per_block == 0 || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("coarse control family needs a horizon and steps".into()));
        }
        if !(self.theta_hi >= self.theta_lo) || !(self.theta_step > 0.0) {
            return Err(Error::InvalidArgument("coarse theta grid needs lo <= hi and a positive step".into()));
        }
        Ok(())
    }

    /// Number of controls enumerated for `m` parameters.
    pub fn count(&self, m: usize) -> u128 {
        let per_block = (self.theta_nodes() as u128).saturating_pow(m as u32);
        per_block.saturating_pow(self.n_blocks as u32)
    }

    /// The control path realizing block values `blocks` (each of length
    /// `m`) on `[t_start, T]`.
    pub fn control(&self, t_start: f64, blocks: &[Vec<f64>]) -> Result<ControlPath> {
        let grid = TimeGrid::new(self.horizon - t_start, self.n_blocks * self.steps_per_block)?;
        let mut values = Vec::new();
        for b in blocks {
            for _ in 0..self.steps_per_block {
                values.push(b.clone());
            }
        }
        ControlPath::new(grid, values)
    }
}

struct Search<'a> {
    model: &'a dyn Model,
    coarse: &'a CoarseControlSpec,
    grid: TimeGrid,
    candidates: Vec<Vec<f64>>,
    weights: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

impl Search<'_> {
    /// Advances every atom through block `b` under `theta`, accumulating
    /// the left-endpoint running cost in the same order as the loss.
    fn advance(
        &self,
        ctrl: &mut ControlPath,
        b: usize,
        theta: &[f64],
        states: &[Vec<f64>],
        running: &[f64],
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let spb = self.coarse.steps_per_block;
        let (k0, k1) = (b * spb, (b + 1) * spb);
        for k in k0..k1 {
            ctrl.value_mut(k).copy_from_slice(theta);
        }
        let h = self.grid.dt();
        let mut out_states = Vec::with_capacity(states.len());
        let mut out_running = Vec::with_capacity(states.len());
        for (x, r) in states.iter().zip(running) {
            let path = Rk4::default().integrate_window(self.model, x, ctrl, k0, k1)?;
            let mut r = *r;
            for j in 0..spb {
                r += self.model.running_cost(path.fine_node(j), theta) * h;
            }
            out_states.push(path.terminal().to_vec());
            out_running.push(r);
        }
        Ok((out_states, out_running))
    }

    fn leaf(&self, states: &[Vec<f64>], running: &[f64]) -> f64 {
        let totals: Vec<f64> = states
            .iter()
            .zip(running)
            .zip(&self.targets)
            .map(|((x, r), y)| self.model.terminal_loss(x, y) + r)
            .collect();
        weighted_total(&self.weights, &totals)
    }

    fn descend(&self, ctrl: &mut ControlPath, b: usize, states: &[Vec<f64>], running: &[f64]) -> Result<f64> {
        if b == self.coarse.n_blocks {
            return Ok(self.leaf(states, running));
        }
        let mut best = f64::INFINITY;
        for theta in &self.candidates {
            let (s, r) = self.advance(ctrl, b, theta, states, running)?;
            best = best.min(self.descend(ctrl, b + 1, &s, &r)?);
        }
        Ok(best)
    }
}

fn weighted_total(weights: &[f64], values: &[f64]) -> f64 {
    let terms: Vec<f64> = weights.iter().zip(values).map(|(w, v)| w * v).collect();
    crate::reduce::pairwise_sum(&terms)
}

fn cartesian(nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                nodes.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn search_population(model: &dyn Model, spec: &PopulationSpec) -> Result<(Vec<Sample>, Vec<f64>)> {
    let dims = model.dims();
    if dims.state != 1 {
        return Err(Error::Unsupported("exhaustive value search needs a one-dimensional model".into()));
    }
    if spec.len() > MAX_SEARCH_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive value search takes at most {MAX_SEARCH_ATOMS} atoms, got {}",
            spec.len()
        )));
    }
    let ws = spec.as_weighted();
    for s in ws.samples() {
        check_dim("value search: atom y", dims.target, s.y.len())?;
    }
    Ok((ws.samples().to_vec(), ws.weights().to_vec()))
}

fn search_from(
    model: &dyn Model,
    atoms: &[Sample],
    weights: &[f64],
    t_start: f64,
    coarse: &CoarseControlSpec,
) -> Result<f64> {
    coarse.validate()?;
    if !(t_start >= 0.0 && t_start <= coarse.horizon) {
        return Err(Error::InvalidArgument(format!("t_start {t_start} outside [0, {}]", coarse.horizon)));
    }
    let m = model.dims().param;
    let count = coarse.count(m);
    if count > SEARCH_BUDGET {
        return Err(Error::BudgetExceeded {
            count,
            limit: SEARCH_BUDGET,
        });
    }
    let states: Vec<Vec<f64>> = atoms.iter().map(|a| a.x.clone()).collect();
    let targets: Vec<Vec<f64>> = atoms.iter().map(|a| a.y.clone()).collect();
    let running = vec![0.0; atoms.len()];
    if coarse.n_blocks == 0 || t_start == coarse.horizon {
        let totals: Vec<f64> = states
            .iter()
            .zip(&targets)
            .map(|(x, y)| model.terminal_loss(x, y) + 0.0)
            .collect();
        return Ok(weighted_total(weights, &totals));
    }
    let nodes: Vec<f64> = (0..coarse.theta_nodes()).map(|j| coarse.theta(j)).collect();
    let search = Search {
        model,
        coarse,
        grid: TimeGrid::new(coarse.horizon - t_start, coarse.n_blocks * coarse.steps_per_block)?,
        candidates: cartesian(&nodes, m),
        weights: weights.to_vec(),
        targets,
    };
    let template = ControlPath::constant(search.grid, &vec![0.0; m]);
    let best: Result<Vec<f64>> = search
        .candidates
        .par_iter()
        .map(|theta| {
            let mut ctrl = template.clone();
            let (s, r) = search.advance(&mut ctrl, 0, theta, &states, &running)?;
            search.descend(&mut ctrl, 1, &s, &r)
        })
        .collect();
    Ok(best?.into_iter().fold(f64::INFINITY, f64::min))
}

/// `v(t_start, μ)` approximated by the minimum of the loss over every
/// piecewise-constant control in the coarse family (exact expectation over
/// the atoms). Refuses families larger than [`SEARCH_BUDGET`].
pub fn value_by_search(
    model: &dyn Model,
    spec: &PopulationSpec,
    t_start: f64,
    coarse: &CoarseControlSpec,
) -> Result<f64> {
    let (atoms, weights) = search_population(model, spec)?;
    search_from(model, &atoms, &weights, t_start, coarse)
}

/// One first-segment control of a DPP check and its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct DppCandidate {
    pub first_segment: Vec<Vec<f64>>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DPPReport {
    pub t: f64,
    pub t_hat: f64,
    pub candidates: Vec<DppCandidate>,
    pub v_left: f64,
    pub best_rhs: f64,
    pub residual: f64,
}

/// Checks `v(t, μ) = min_θ [ ∫ₜ^t̂ E L dt + v(t̂, μ_t̂^θ) ]` with both sides
/// computed by [`value_by_search`] over the same control family.
///
/// `t̂` must fall on a block boundary of `coarse` over `[t, T]`.
pub fn dpp_check(
    model: &dyn Model,
    spec: &PopulationSpec,
    t: f64,
    t_hat: f64,
    coarse: &CoarseControlSpec,
) -> Result<DPPReport> {
    dpp_check_mismatched(model, spec, t, t_hat, coarse, coarse)
}

/// As [`dpp_check`], but the value at `t̂` searches over `right`'s θ-grid.
pub fn dpp_check_mismatched(
    model: &dyn Model,
    spec: &PopulationSpec,
    t: f64,
    t_hat: f64,
    coarse: &CoarseControlSpec,
    right: &CoarseControlSpec,
) -> Result<DPPReport> {
    coarse.validate()?;
    right.validate()?;
    if !(0.0 <= t && t <= t_hat && t_hat <= coarse.horizon) {
        return Err(Error::InvalidArgument(format!("need 0 <= t <= t_hat <= T, got t={t}, t_hat={t_hat}")));
    }
    let (atoms, weights) = search_population(model, spec)?;
    let v_left = search_from(model, &atoms, &weights, t, coarse)?;

    let blocks = coarse.n_blocks as f64;
    let split = if t == coarse.horizon { 0.0 } else { blocks * (t_hat - t) / (coarse.horizon - t) };
    let b1 = split.round() as usize;
    if (split - b1 as f64).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("t_hat = {t_hat} is not on a control block boundary")));
    }
    let rest = CoarseControlSpec {
        n_blocks: coarse.n_blocks - b1,
        ..*right
    };
    let m = model.dims().param;

    let mut candidates = Vec::new();
    if b1 == 0 {
        let v = search_from(model, &atoms, &weights, t_hat, &rest)?;
        candidates.push(DppCandidate {
            first_segment: Vec::new(),
            rhs: 0.0 + v,
        });
    } else {
        let first = CoarseControlSpec {
            horizon: t_hat,
            n_blocks: b1,
            ..*coarse
        };
        let nodes: Vec<f64> = (0..first.theta_nodes()).map(|j| first.theta(j)).collect();
        let per_block = cartesian(&nodes, m);
        let mut sequences = vec![Vec::<Vec<f64>>::new()];
        for _ in 0..b1 {
            sequences = sequences
                .into_iter()
                .flat_map(|prefix| {
                    per_block.iter().map(move |th| {
                        let mut p = prefix.clone();
                        p.push(th.clone());
                        p
                    })
                })
                .collect();
        }
        let results: Result<Vec<DppCandidate>> = sequences
            .into_par_iter()
            .map(|seq| {
                let ctrl = first.control(t, &seq)?;
                let h = ctrl.grid().dt();
                let mut moved = Vec::with_capacity(atoms.len());
                let mut running = Vec::with_capacity(atoms.len());
                for a in &atoms {
                    let path = Rk4::default().integrate_state(model, &a.x, &ctrl)?;
                    let mut r = 0.0;
                    for j in 0..path.n_fine_steps() {
                        r += model.running_cost(path.fine_node(j), ctrl.value(j)) * h;
                    }
                    moved.push(Sample::new(path.terminal().to_vec(), a.y.clone()));
                    running.push(r);
                }
                let v = search_from(model, &moved, &weights, t_hat, &rest)?;
                Ok(DppCandidate {
                    first_segment: seq,
                    rhs: weighted_total(&weights, &running) + v,
                })
            })
            .collect();
        candidates = results?;
    }
    let best_rhs = candidates.iter().map(|c| c.rhs).fold(f64::INFINITY, f64::min);
    Ok(DPPReport {
        t,
        t_hat,
        candidates,
        v_left,
        best_rhs,
        residual: (v_left - best_rhs).abs(),
    })
}

/// `max_k |p_k + ∂ₓv(t_k, x_k)|` along a single-atom PMP solution.
pub fn costate_consistency(solution: &PMPSolution, vgrid: &ValueGrid) -> Result<f64> {
    if solution.bundles.len() != 1 {
        return Err(Error::InvalidArgument("costate consistency needs a single-atom solution".into()));
    }
    let b = &solution.bundles[0];
    check_dim("costate consistency: state", 1, b.states.dim())?;
    let grid = solution.control.grid();
    let mut worst: f64 = 0.0;
    for k in 0..=grid.n_steps() {
        let t = grid.time(k);
        let dv = vgrid.dx(t, b.states.node(k)[0])?;
        worst = worst.max((b.costates.node(k)[0] + dv).abs());
    }
    Ok(worst)
}

/// A population state at a time, for Lipschitz probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub t: f64,
    pub spec: PopulationSpec,
}

/// `max |v(t, μ) − v(t̂, μ̂)| / (|t − t̂| + W₂(μ, μ̂))` over the pairs;
/// identical pairs are skipped.
pub fn lipschitz_probe(
    model: &dyn Model,
    pairs: &[(Scenario, Scenario)],
    coarse: &CoarseControlSpec,
) -> Result<f64> {
    let mut worst: Option<f64> = None;
    for (a, b) in pairs {
        let den = (a.t - b.t).abs() + wasserstein2_weighted(&a.spec, &b.spec)?;
        if den == 0.0 {
            continue;
        }
        let va = value_by_search(model, &a.spec, a.t, coarse)?;
        let vb = value_by_search(model, &b.spec, b.t, coarse)?;
        let r = (va - vb).abs() / den;
        worst = Some(worst.map_or(r, |w: f64| w.max(r)));
    }
    worst.ok_or_else(|| Error::InvalidArgument("no distinct scenario pairs".into()))
}

/// Config section for the grid solver and the exhaustive searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbConfig {
    #[serde(default = "defaults::x_lo")]
    pub x_lo: f64,
    #[serde(default = "defaults::x_hi")]
    pub x_hi: f64,
    #[serde(default = "defaults::x_nodes")]
    pub x_nodes: usize,
    #[serde(default = "defaults::theta_nodes")]
    pub theta_nodes: usize,
    #[serde(default = "defaults::theta_box")]
    pub theta_box: [f64; 2],
    /// Time steps of the grid solver; defaults to the x spacing.
    #[serde(default)]
    pub time_steps: Option<usize>,
    #[serde(default = "defaults::search_blocks")]
    pub search_blocks: usize,
    #[serde(default = "defaults::search_steps_per_block")]
    pub search_steps_per_block: usize,
    #[serde(default = "defaults::search_theta_step")]
    pub search_theta_step: f64,
    #[serde(default = "defaults::t_hat")]
    pub t_hat: f64,
}

mod defaults {
    pub fn x_lo() -> f64 {
        -1.0
    }
    pub fn x_hi() -> f64 {
        2.0
    }
    pub fn x_nodes() -> usize {
        301
    }
    pub fn theta_nodes() -> usize {
        201
    }
    pub fn theta_box() -> [f64; 2] {
        [-1.0, 1.0]
    }
    pub fn search_blocks() -> usize {
        2
    }
    pub fn search_steps_per_block() -> usize {
        10
    }
    pub fn search_theta_step() -> f64 {
        1e-2
    }
    pub fn t_hat() -> f64 {
        0.5
    }
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig {
            x_lo: defaults::x_lo(),
            x_hi: defaults::x_hi(),
            x_nodes: defaults::x_nodes(),
            theta_nodes: defaults::theta_nodes(),
            theta_box: defaults::theta_box(),
            time_steps: None,
            search_blocks: defaults::search_blocks(),
            search_steps_per_block: defaults::search_steps_per_block(),
            search_theta_step: defaults::search_theta_step(),
            t_hat: defaults::t_hat(),
        }
    }
}

impl HjbConfig {
    pub fn grids(&self, horizon: f64) -> Result<HjbGrids> {
        let hx = (self.x_hi - self.x_lo) / (self.x_nodes.max(2) - 1) as f64;
        let steps = self.time_steps.unwrap_or_else(|| (horizon / hx).round().max(1.0) as usize);
        let grids = HjbGrids {
            time: TimeGrid::new(horizon, steps)?,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            x_nodes: self.x_nodes,
            theta_lo: self.theta_box[0],
            theta_hi: self.theta_box[1],
            theta_nodes: self.theta_nodes,
        };
        grids.validate()?;
        Ok(grids)
    }

    pub fn coarse(&self, horizon: f64) -> CoarseControlSpec {
        CoarseControlSpec {
            horizon,
            n_blocks: self.search_blocks,
            steps_per_block: self.search_steps_per_block,
            theta_lo: self.theta_box[0],
            theta_hi: self.theta_box[1],
            theta_step: self.search_theta_step,
        }
    }
}
