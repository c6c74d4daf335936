use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::desk::random_control;
use super::{derive_seed, StudyKind};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ode::{ControlPath, Rk4, TimeGrid};
use crate::pmp::{msa_solve, SolverConfig};
use crate::population::PopulationSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessRow {
    pub horizon: f64,
    pub init_a: usize,
    pub init_b: usize,
    pub pairwise_dist: f64,
    /// Whether every init at this horizon converged.
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessStudy {
    pub rows: Vec<UniquenessRow>,
    /// `converged[i][j]` for horizon `i`, init `j`.
    pub converged: Vec<Vec<bool>>,
    /// Largest pairwise distance per horizon.
    pub max_dist: Vec<f64>,
}

/// Solves from `inits` seeded random starts for every horizon and reports
/// all pairwise distances between the resulting controls.
#[allow(clippy::too_many_arguments)]
pub fn run_uniqueness_study(
    model: &dyn Model,
    rk: Rk4,
    steps: usize,
    spec: &PopulationSpec,
    solver: &SolverConfig,
    horizons: &[f64],
    inits: usize,
    init_range: f64,
    base_seed: u64,
) -> Result<UniquenessStudy> {
    match model.theta_hessian() {
        Some(h) if h.max_eigenvalue() < 0.0 => {}
        _ => {
            return Err(Error::Unsupported(
                "uniqueness study needs a strictly concave Hamiltonian in theta".into(),
            ))
        }
    }
    let samples = spec.as_weighted();
    let m = model.dims().param;
    let mut rows = Vec::new();
    let mut converged = Vec::new();
    let mut max_dist = Vec::new();
    for (h, &horizon) in horizons.iter().enumerate() {
        let grid = TimeGrid::new(horizon, steps)?;
        let sols: Result<Vec<(ControlPath, bool)>> = (0..inits)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(base_seed, StudyKind::Uniqueness, h as u64, i as u64);
                let start = random_control(grid, m, init_range, seed);
                let sol = msa_solve(model, rk, &samples, &start, solver)?;
                Ok((sol.control, sol.converged))
            })
            .collect();
        let sols = sols?;
        let flags: Vec<bool> = sols.iter().map(|s| s.1).collect();
        let all = flags.iter().all(|&c| c);
        let mut worst: f64 = 0.0;
        for a in 0..inits {
            for b in a + 1..inits {
                let d = sols[a].0.sup_distance(&sols[b].0);
                worst = worst.max(d);
                rows.push(UniquenessRow {
                    horizon,
                    init_a: a,
                    init_b: b,
                    pairwise_dist: d,
                    all_converged: all,
                });
            }
        }
        converged.push(flags);
        max_dist.push(worst);
    }
    Ok(UniquenessStudy {
        rows,
        converged,
        max_dist,
    })
}

pub fn write_uniqueness_csv<W: Write>(out: &mut W, rows: &[UniquenessRow]) -> Result<()> {
    writeln!(out, "T,init_a,init_b,pairwise_dist,all_converged")?;
    for r in rows {
        writeln!(
            out,
            "{:?},{},{},{:?},{}",
            r.horizon, r.init_a, r.init_b, r.pairwise_dist, r.all_converged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::population::Sample;

    #[test]
    fn identical_inits_agree_exactly() {
        let model = ModelSpec::tanh_bilinear(1, 1.0);
        let spec = PopulationSpec::new(vec![Sample::new(vec![1.0], vec![2.0])], vec![1.0], 3.0).unwrap();
        // Zero range: every init is the zero control.
        let study = run_uniqueness_study(&model, Rk4::default(), 10, &spec, &SolverConfig::default(), &[0.1], 3, 0.0, 5).unwrap();
        assert_eq!(study.rows.len(), 3);
        assert!(study.rows.iter().all(|r| r.pairwise_dist == 0.0 && r.all_converged));
    }

    #[test]
    fn needs_concave_hamiltonian() {
        let model = ModelSpec::tanh_bilinear(1, 0.0);
        let spec = PopulationSpec::point_mass(vec![1.0], vec![2.0]);
        let r = run_uniqueness_study(&model, Rk4::default(), 10, &spec, &SolverConfig::default(), &[0.1], 2, 1.0, 5);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }
}
