//! Fixed small problems shared by the validation suite, tests and guide.

use crate::hjb::{CoarseControlSpec, HjbGrids, Scenario};
use crate::model::ModelSpec;
use crate::ode::{ControlPath, TimeGrid};
use crate::population::{counter_uniform, PopulationSpec, Sample};

/// `f = θ`, `L = ½θ²`, `Φ = ½(x − y)²`: optimum `θ* ≡ (y − x0)/(T + 1)`.
pub fn lq_model() -> ModelSpec {
    ModelSpec::constant_drive(1, 0.5)
}

/// The single atom `x0 = 0`, `y = 1`, for which `θ* ≡ 0.5`, `J* = 0.25`.
pub fn lq_atom() -> PopulationSpec {
    PopulationSpec::point_mass(vec![0.0], vec![1.0])
}

/// Value of the LQ single-atom problem, `v(t, x) = λ(y − x)²/(T − t + 2λ)`.
pub fn lq_value(lambda: f64, horizon: f64, t: f64, x: f64, y: f64) -> f64 {
    lambda * (y - x) * (y - x) / (horizon - t + 2.0 * lambda)
}

/// Four-atom population for the sampled-versus-population study.
pub fn lq_population() -> PopulationSpec {
    PopulationSpec::new(
        vec![
            Sample::new(vec![0.0], vec![1.0]),
            Sample::new(vec![0.5], vec![-0.5]),
            Sample::new(vec![-1.0], vec![0.5]),
            Sample::new(vec![1.0], vec![2.0]),
        ],
        vec![0.1, 0.2, 0.3, 0.4],
        3.0,
    )
    .expect("valid population")
}

/// `TanhBilinear(λ = 0.1)`, `d = 1`.
pub fn tanh_model() -> ModelSpec {
    ModelSpec::tanh_bilinear(1, 0.1)
}

/// Atoms `(1, 2)` and `(−1, −2)` with weight ½ each.
pub fn tanh_population() -> PopulationSpec {
    PopulationSpec::new(
        vec![Sample::new(vec![1.0], vec![2.0]), Sample::new(vec![-1.0], vec![-2.0])],
        vec![0.5, 0.5],
        3.0,
    )
    .expect("valid population")
}

/// `TanhBilinear(λ = 0.1)`, `d = 2`: the optimal control varies in time.
pub fn tanh_model_2d() -> ModelSpec {
    ModelSpec::tanh_bilinear(2, 0.1)
}

pub fn tanh_population_2d() -> PopulationSpec {
    PopulationSpec::new(
        vec![
            Sample::new(vec![1.0, 0.5], vec![2.0, -1.0]),
            Sample::new(vec![-1.0, 0.3], vec![-2.0, 1.0]),
        ],
        vec![0.5, 0.5],
        5.0,
    )
    .expect("valid population")
}

/// Uniform grid spacing `h` in `x`, `θ` and `t` on `[−1, 2] × [−1, 1] × [0, 1]`.
pub fn lq_hjb_grids(h: f64) -> HjbGrids {
    HjbGrids {
        time: TimeGrid::new(1.0, (1.0 / h).round() as usize).expect("positive steps"),
        x_lo: -1.0,
        x_hi: 2.0,
        x_nodes: (3.0 / h).round() as usize + 1,
        theta_lo: -1.0,
        theta_hi: 1.0,
        theta_nodes: (2.0 / h).round() as usize + 1,
    }
}

/// Grid for the single atom `(1, 2)` under [`tanh_model`]; `dt = h/2` keeps
/// characteristic feet within one cell for `|θ| ≤ 2`.
pub fn tanh_hjb_grids(h: f64) -> HjbGrids {
    HjbGrids {
        time: TimeGrid::new(1.0, (2.0 / h).round() as usize).expect("positive steps"),
        x_lo: -1.0,
        x_hi: 3.0,
        x_nodes: (4.0 / h).round() as usize + 1,
        theta_lo: -2.0,
        theta_hi: 2.0,
        theta_nodes: (4.0 / h).round() as usize + 1,
    }
}

/// Piecewise-constant family on `[0, 1]` used by the DPP and Lipschitz
/// checks: `θ ∈ {0, step, …, 1}`.
pub fn lq_coarse(step: f64, blocks: usize) -> CoarseControlSpec {
    CoarseControlSpec {
        horizon: 1.0,
        n_blocks: blocks,
        steps_per_block: 4,
        theta_lo: 0.0,
        theta_hi: 1.0,
        theta_step: step,
    }
}

/// Scenario pairs probing the LQ value function in time and measure.
pub fn lq_lipschitz_pairs() -> Vec<(Scenario, Scenario)> {
    let atom = |x: f64, y: f64| PopulationSpec::point_mass(vec![x], vec![y]);
    let two = |a: f64, b: f64| {
        PopulationSpec::new(
            vec![Sample::new(vec![a], vec![1.0]), Sample::new(vec![b], vec![0.5])],
            vec![0.5, 0.5],
            2.0,
        )
        .expect("valid population")
    };
    let s = |t: f64, spec: PopulationSpec| Scenario { t, spec };
    vec![
        (s(0.0, atom(0.0, 1.0)), s(0.5, atom(0.0, 1.0))),
        (s(0.0, atom(0.0, 1.0)), s(0.0, atom(0.1, 1.0))),
        (s(0.0, atom(0.0, 1.0)), s(0.0, atom(0.0, 0.8))),
        (s(0.25, atom(0.2, 1.0)), s(0.5, atom(0.3, 0.9))),
        (s(0.0, two(0.0, -0.2)), s(0.0, two(0.1, -0.2))),
        (s(0.0, two(0.0, -0.2)), s(0.25, atom(0.0, 1.0))),
        (s(0.75, atom(-0.5, 0.5)), s(0.0, atom(-0.5, 0.5))),
    ]
}

/// Control with every coordinate uniform in `[−range, range]`, keyed by
/// `seed`.
pub fn random_control(grid: TimeGrid, m: usize, range: f64, seed: u64) -> ControlPath {
    let values = (0..grid.n_steps() * m)
        .map(|i| range * (2.0 * counter_uniform(seed, i as u64) - 1.0))
        .collect();
    ControlPath::from_flat(grid, m, values).expect("sizes match by construction")
}
