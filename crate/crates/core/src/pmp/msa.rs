use rayon::prelude::*;

use super::{
    interval_gradient, drift_coefficient, residual_from_bundles, residual_report, sweep, Maximizer, PMPSolution,
    Residual, SolverConfig, TrajectoryBundle,
};
use crate::error::{Error, Result};
use crate::model::{argmax_hamiltonian_quadratic, Model};
use crate::ode::{ControlPath, Rk4};
use crate::population::WeightedSamples;

const MAX_HALVINGS: usize = 30;

/// Per-interval maximizer of the sample-averaged Hamiltonian for fixed
/// bundles (the "maximization step" of successive approximation).
pub fn maximization_step(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    bundles: &[TrajectoryBundle],
    ctrl: &ControlPath,
    maximizer: Maximizer,
) -> Result<ControlPath> {
    let m = model.dims().param;
    let n = ctrl.len();
    let mut out = ctrl.clone();
    match maximizer {
        Maximizer::ClosedFormQuadratic => {
            let lambda = model.quadratic_weight().ok_or_else(|| {
                Error::Unsupported("closed-form maximization needs a model quadratic in theta".into())
            })?;
            let rows: Vec<Vec<f64>> = bundles
                .par_iter()
                .map(|b| {
                    let mut row = vec![0.0; n * m];
                    for k in 0..n {
                        drift_coefficient(model, rk, b, k, ctrl.value(k), &mut row[k * m..(k + 1) * m]);
                    }
                    row
                })
                .collect();
            let g = samples.weighted_sum_rows(&rows);
            for k in 0..n {
                let theta = argmax_hamiltonian_quadratic(&g[k * m..(k + 1) * m], lambda, model.theta_set())?;
                out.value_mut(k).copy_from_slice(&theta);
            }
        }
        Maximizer::ProjectedGradient { inner_iters, step } => {
            let updated: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|k| {
                    let mut theta = ctrl.value(k).to_vec();
                    let mut buf = vec![0.0; m];
                    for _ in 0..inner_iters {
                        let rows: Vec<Vec<f64>> = bundles
                            .iter()
                            .map(|b| {
                                interval_gradient(model, rk, b, k, &theta, &mut buf);
                                buf.clone()
                            })
                            .collect();
                        let grad = samples.weighted_sum_rows(&rows);
                        for (t, g) in theta.iter_mut().zip(&grad) {
                            *t += step * g;
                        }
                        model.theta_set().project(&mut theta);
                    }
                    theta
                })
                .collect();
            for (k, theta) in updated.iter().enumerate() {
                out.value_mut(k).copy_from_slice(theta);
            }
        }
    }
    Ok(out)
}

struct Iterate {
    control: ControlPath,
    bundles: Vec<TrajectoryBundle>,
    residual: Residual,
}

fn evaluate(model: &dyn Model, rk: Rk4, samples: &WeightedSamples, control: ControlPath) -> Result<Iterate> {
    let bundles = sweep(model, rk, samples, &control)?;
    let raw = residual_from_bundles(model, rk, samples, &bundles, &control);
    let residual = residual_report(model, &control, raw);
    Ok(Iterate {
        control,
        bundles,
        residual,
    })
}

fn blend(current: &ControlPath, target: &ControlPath, beta: f64) -> ControlPath {
    let mut out = current.clone();
    if beta == 1.0 {
        out.as_flat_mut().copy_from_slice(target.as_flat());
        return out;
    }
    for (o, t) in out.as_flat_mut().iter_mut().zip(target.as_flat()) {
        *o = (1.0 - beta) * *o + beta * t;
    }
    out
}

/// Damped method of successive approximations.
///
/// Each iteration sweeps all samples, maximizes the averaged Hamiltonian on
/// every interval and moves `θ ← (1 − β)θ + βθ̂`. With `backtrack`, a step
/// that fails to reduce the sup residual (or blows up) is retried with `β/2`;
/// after 30 halvings the smallest step is accepted as is. The best iterate
/// seen is returned.
pub fn msa_solve(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    ctrl0: &ControlPath,
    cfg: &SolverConfig,
) -> Result<PMPSolution> {
    cfg.validate()?;
    let mut start = ctrl0.clone();
    start.project(model.theta_set());
    let mut current = evaluate(model, rk, samples, start)?;
    let mut history = vec![current.residual.sup_norm];
    let mut best: Option<Iterate> = None;

    let mut iter = 0;
    while current.residual.sup_norm > cfg.tol && iter < cfg.max_iter {
        iter += 1;
        let target = maximization_step(model, rk, samples, &current.bundles, &current.control, cfg.maximizer)?;
        let mut beta = cfg.damping;
        let mut halvings = 0;
        let next = loop {
            let mut cand = blend(&current.control, &target, beta);
            cand.project(model.theta_set());
            let last_try = !cfg.backtrack || halvings >= MAX_HALVINGS;
            match evaluate(model, rk, samples, cand) {
                Ok(it) if last_try || it.residual.sup_norm < current.residual.sup_norm => break it,
                Err(e) if last_try => return Err(e),
                Err(Error::BlowUp { .. }) | Ok(_) => {
                    beta *= 0.5;
                    halvings += 1;
                }
                Err(e) => return Err(e),
            }
        };
        history.push(next.residual.sup_norm);
        let prev = std::mem::replace(&mut current, next);
        if best.as_ref().is_none_or(|b| prev.residual.sup_norm < b.residual.sup_norm) {
            best = Some(prev);
        }
    }
    let best = match best {
        Some(b) if b.residual.sup_norm < current.residual.sup_norm => b,
        _ => current,
    };
    Ok(PMPSolution {
        converged: best.residual.sup_norm <= cfg.tol,
        control: best.control,
        samples: samples.clone(),
        bundles: best.bundles,
        residual_history: history,
        rk,
    })
}
