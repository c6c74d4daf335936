use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pmp_residual, PMPSolution};
use crate::error::{Error, Result};
use crate::model::{hamiltonian, Model};
use crate::ode::{ControlPath, Rk4};
use crate::population::WeightedSamples;

/// Denominators below this flag the residual map as non-stable.
pub const STABILITY_FLOOR: f64 = 1e-14;
const MAX_REDRAWS: usize = 100;

/// `max h − min h` for `h_k = E H(x_k, p_k, θ_k)` over the control nodes
/// (the last node uses the last interval's parameter).
pub fn hamiltonian_constancy(model: &dyn Model, solution: &PMPSolution) -> Result<f64> {
    let ctrl = &solution.control;
    let n = ctrl.len();
    let mut rows = Vec::with_capacity(solution.bundles.len());
    for b in &solution.bundles {
        let mut row = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let theta = ctrl.value(k.min(n - 1));
            row.push(hamiltonian(model, b.states.node(k), b.costates.node(k), theta)?);
        }
        rows.push(row);
    }
    let h = solution.samples.weighted_sum_rows(&rows);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianReport {
    pub pass: bool,
    pub worst_eigenvalue: f64,
}

/// Checks `λ_max(E ∇²_θθ H) ≤ −λ0` at every node (equality passes).
///
/// Only constant Hessian descriptors are supported, for which the
/// expectation is the descriptor itself at every node.
pub fn hessian_check(model: &dyn Model, solution: &PMPSolution, lambda0: f64) -> Result<HessianReport> {
    let hess = model
        .theta_hessian()
        .ok_or_else(|| Error::Unsupported("model does not expose a theta Hessian".into()))?;
    if solution.bundles.is_empty() {
        return Err(Error::EmptySample);
    }
    let worst = hess.max_eigenvalue();
    Ok(HessianReport {
        pass: worst <= -lambda0,
        worst_eigenvalue: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityEstimate {
    /// Lower-bound estimate of the stability constant.
    Stable { k_hat: f64 },
    /// Some probe pair moved the control without moving `F`.
    NonStable,
}

/// `‖y − z‖∞ / ‖F(y) − F(z)‖∞`, or `None` when the denominator falls below
/// [`STABILITY_FLOOR`]. Both norms are sup over intervals of the Euclidean
/// norm.
pub fn stability_ratio(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    y: &ControlPath,
    z: &ControlPath,
) -> Result<Option<f64>> {
    let fy = pmp_residual(model, rk, samples, y)?;
    let fz = pmp_residual(model, rk, samples, z)?;
    let m = fy.param_dim;
    let den = fy
        .path
        .chunks(m)
        .zip(fz.path.chunks(m))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if den < STABILITY_FLOOR {
        return Ok(None);
    }
    Ok(Some(y.sup_distance(z) / den))
}

fn perturb(center: &ControlPath, model: &dyn Model, radius: f64, rng: &mut ChaCha8Rng) -> ControlPath {
    let mut out = center.clone();
    for v in out.as_flat_mut() {
        *v += rng.gen_range(-radius..=radius);
    }
    out.project(model.theta_set());
    out
}

/// Probes the stability constant of the residual map around `center`.
///
/// Draws `pairs` control pairs with every interval perturbed uniformly in a
/// box of half-width `ρ/√m` (so each interval stays in the Euclidean
/// `ρ`-ball), clamped to `Θ`. Identical pairs are redrawn.
pub fn estimate_stability_constant(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    center: &ControlPath,
    rho: f64,
    pairs: usize,
    seed: u64,
) -> Result<StabilityEstimate> {
    if !(rho > 0.0) || pairs == 0 {
        return Err(Error::InvalidArgument("stability probe needs rho > 0 and at least one pair".into()));
    }
    let radius = rho / (center.param_dim() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k_hat: f64 = 0.0;
    for _ in 0..pairs {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let y = perturb(center, model, radius, &mut rng);
            let z = perturb(center, model, radius, &mut rng);
            if y.as_flat() != z.as_flat() {
                drawn = Some((y, z));
                break;
            }
        }
        let (y, z) = drawn.ok_or_else(|| Error::InvalidArgument("could not draw distinct probe controls".into()))?;
        match stability_ratio(model, rk, samples, &y, &z)? {
            Some(r) => k_hat = k_hat.max(r),
            None => return Ok(StabilityEstimate::NonStable),
        }
    }
    Ok(StabilityEstimate::Stable { k_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::ode::TimeGrid;
    use crate::pmp::{msa_solve, sweep, SolverConfig};
    use crate::population::{PopulationSpec, Sample};

    fn lq() -> (ModelSpec, WeightedSamples, TimeGrid) {
        (
            ModelSpec::constant_drive(1, 0.5),
            PopulationSpec::point_mass(vec![0.0], vec![1.0]).as_weighted(),
            TimeGrid::new(1.0, 40).unwrap(),
        )
    }

    fn solution(model: &ModelSpec, s: &WeightedSamples, ctrl: ControlPath) -> PMPSolution {
        let bundles = sweep(model, Rk4::default(), s, &ctrl).unwrap();
        PMPSolution {
            control: ctrl,
            samples: s.clone(),
            bundles,
            residual_history: vec![0.0],
            converged: true,
            rk: Rk4::default(),
        }
    }

    #[test]
    fn lq_hamiltonian_is_constant() {
        let (m, s, g) = lq();
        let sol = msa_solve(&m, Rk4::default(), &s, &ControlPath::constant(g, &[0.0]), &SolverConfig::default()).unwrap();
        assert!(hamiltonian_constancy(&m, &sol).unwrap() <= 1e-8);
    }

    #[test]
    fn degenerate_model_spread_is_zero() {
        // ConstantDrive with zero control and λ = 0: f ≡ 0 and L ≡ 0.
        let m = ModelSpec::constant_drive(1, 0.0);
        let s = PopulationSpec::point_mass(vec![0.2], vec![1.0]).as_weighted();
        let g = TimeGrid::new(1.0, 8).unwrap();
        let sol = solution(&m, &s, ControlPath::constant(g, &[0.0]));
        assert_eq!(hamiltonian_constancy(&m, &sol).unwrap(), 0.0);
    }

    #[test]
    fn hessian_examples() {
        let s = WeightedSamples::new(vec![Sample::new(vec![1.0], vec![2.0])], vec![1.0]);
        let g = TimeGrid::new(1.0, 4).unwrap();
        let m = ModelSpec::tanh_bilinear(1, 0.5);
        let sol = solution(&m, &s, ControlPath::constant(g, &[0.0]));
        let r = hessian_check(&m, &sol, 0.9).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst_eigenvalue, -1.0);
        assert!(hessian_check(&m, &sol, 1.0).unwrap().pass);
        assert!(!hessian_check(&m, &sol, 1.0 + 1e-12).unwrap().pass);
        let flat = m.with_lambda(0.0);
        assert!(!hessian_check(&flat, &sol, 1e-9).unwrap().pass);
        // f = θx with L ≡ 0 is linear in θ: zero Hessian.
        let ls = ModelSpec::linear_scalar();
        let sol = solution(&ls, &s, ControlPath::constant(g, &[0.0]));
        assert_eq!(hessian_check(&ls, &sol, 0.1).unwrap().worst_eigenvalue, 0.0);
    }

    #[test]
    fn constant_direction_ratio() {
        let (m, s, g) = lq();
        let y = ControlPath::constant(g, &[0.6]);
        let z = ControlPath::constant(g, &[0.4]);
        let r = stability_ratio(&m, Rk4::default(), &s, &y, &z).unwrap().unwrap();
        assert!((r - 0.5).abs() <= 1e-10, "{r}");
        match estimate_stability_constant(&m, Rk4::default(), &s, &ControlPath::constant(g, &[0.5]), 0.1, 20, 7).unwrap() {
            StabilityEstimate::Stable { k_hat } => assert!(k_hat >= 0.5 - 1e-12, "{k_hat}"),
            StabilityEstimate::NonStable => panic!("LQ map is stable"),
        }
    }

    #[test]
    fn flat_residual_is_non_stable() {
        // x0 = 0 stays at 0, so ∇θf = tanh(0) = 0; with λ = 0, F ≡ 0.
        let m = ModelSpec::tanh_bilinear(1, 0.0);
        let s = PopulationSpec::point_mass(vec![0.0], vec![1.0]).as_weighted();
        let g = TimeGrid::new(1.0, 8).unwrap();
        let est = estimate_stability_constant(&m, Rk4::default(), &s, &ControlPath::constant(g, &[0.0]), 0.5, 3, 1).unwrap();
        assert_eq!(est, StabilityEstimate::NonStable);
    }
}
