use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, ls_slope, median, StudyKind};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ode::{ControlPath, Rk4, TimeGrid};
use crate::pmp::{loss, msa_solve, SolverConfig};
use crate::population::{draw_samples, PopulationSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// `‖θᴺ − θ*‖` in the sup-over-intervals norm.
    pub err_sup: f64,
    /// `|J(θᴺ) − J(θ*)|`, both evaluated under the exact population.
    pub loss_gap: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NSummary {
    pub n: usize,
    pub median_err_sup: Option<f64>,
    pub median_loss_gap: Option<f64>,
    pub used: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub per_n: Vec<NSummary>,
    /// Slope of `log(median err_sup)` against `log N`; `None` when fewer
    /// than two sizes have a positive median.
    pub slope: Option<f64>,
    pub flagged: usize,
}

impl ConvergenceSummary {
    /// Whether the per-`N` median loss gaps never increase with `N`.
    pub fn loss_gap_non_increasing(&self) -> bool {
        let gaps: Vec<f64> = self.per_n.iter().filter_map(|s| s.median_loss_gap).collect();
        gaps.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub theta_star: ControlPath,
    pub theta_star_residual: f64,
    pub loss_star: f64,
    pub rows: Vec<ConvergenceRow>,
    pub summary: ConvergenceSummary,
}

/// Per-`N` medians over converged rows and the log-log slope. Rows are
/// sorted by `(N, trial)` first, so the result ignores row order.
pub fn summarize_convergence(rows: &[ConvergenceRow]) -> ConvergenceSummary {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| (r.n, r.trial));
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    let per_n: Vec<NSummary> = ns
        .iter()
        .map(|&n| {
            let group: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.n == n).collect();
            let used: Vec<&&ConvergenceRow> = group.iter().filter(|r| r.converged).collect();
            let errs: Vec<f64> = used.iter().map(|r| r.err_sup).collect();
            let gaps: Vec<f64> = used.iter().map(|r| r.loss_gap).collect();
            NSummary {
                n,
                median_err_sup: median(&errs),
                median_loss_gap: median(&gaps),
                used: used.len(),
                flagged: group.len() - used.len(),
            }
        })
        .collect();
    let points: Vec<(f64, f64)> = per_n
        .iter()
        .filter_map(|s| match s.median_err_sup {
            Some(e) if e > 0.0 => Some(((s.n as f64).ln(), e.ln())),
            _ => None,
        })
        .collect();
    ConvergenceSummary {
        slope: ls_slope(&points),
        flagged: per_n.iter().map(|s| s.flagged).sum(),
        per_n,
    }
}

/// Sampled-versus-population study.
///
/// `θ*` solves the problem under the exact finite-support population (to
/// `tol/10`); each `θᴺ` solves it under `N` draws, started from `θ*` so the
/// nearby solution is found. Trials run in parallel; rows come back in
/// `(N, trial)` order.
#[allow(clippy::too_many_arguments)]
pub fn run_convergence_study(
    model: &dyn Model,
    rk: Rk4,
    grid: TimeGrid,
    spec: &PopulationSpec,
    solver: &SolverConfig,
    n_list: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<ConvergenceStudy> {
    let exact = spec.as_weighted();
    let reference_cfg = SolverConfig {
        tol: solver.tol / 10.0,
        ..*solver
    };
    let start = ControlPath::constant(grid, &vec![0.0; model.dims().param]);
    let star = msa_solve(model, rk, &exact, &start, &reference_cfg)?;
    if !star.converged {
        return Err(Error::InvalidArgument(format!(
            "reference solve reached residual {} > tol/10 = {}",
            star.residual(),
            reference_cfg.tol
        )));
    }
    let theta_star = star.control.clone();
    let loss_star = loss(model, rk, &exact, &theta_star)?;

    let jobs: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let rows: Result<Vec<ConvergenceRow>> = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let seed = derive_seed(base_seed, StudyKind::Convergence, n as u64, trial as u64);
            let draws = draw_samples(spec, n, seed)?.as_weighted();
            let sol = msa_solve(model, rk, &draws, &theta_star, solver)?;
            let gap = (loss(model, rk, &exact, &sol.control)? - loss_star).abs();
            Ok(ConvergenceRow {
                n,
                trial,
                seed,
                err_sup: sol.control.sup_distance(&theta_star),
                loss_gap: gap,
                residual: sol.residual(),
                converged: sol.converged,
            })
        })
        .collect();
    let rows = rows?;
    Ok(ConvergenceStudy {
        theta_star,
        theta_star_residual: star.residual(),
        loss_star,
        summary: summarize_convergence(&rows),
        rows,
    })
}

pub fn write_convergence_csv<W: Write>(out: &mut W, rows: &[ConvergenceRow]) -> Result<()> {
    writeln!(out, "N,trial,seed,err_sup,loss_gap,residual,converged")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{}",
            r.n, r.trial, r.seed, r.err_sup, r.loss_gap, r.residual, r.converged
        )?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}

/// Per-`N` medians, then a final `slope` row.
pub fn write_convergence_summary_csv<W: Write>(out: &mut W, summary: &ConvergenceSummary) -> Result<()> {
    writeln!(out, "N,median_err_sup,median_loss_gap,used,flagged")?;
    for s in &summary.per_n {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.n,
            opt(s.median_err_sup),
            opt(s.median_loss_gap),
            s.used,
            s.flagged
        )?;
    }
    writeln!(out, "slope,{},,,{}", opt(summary.slope), summary.flagged)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn row(n: usize, trial: usize, err: f64, converged: bool) -> ConvergenceRow {
        ConvergenceRow {
            n,
            trial,
            seed: 0,
            err_sup: err,
            loss_gap: err * err,
            residual: 0.0,
            converged,
        }
    }

    #[test]
    fn single_atom_has_no_sampling_error() {
        let model = ModelSpec::constant_drive(1, 0.5);
        let spec = PopulationSpec::point_mass(vec![0.0], vec![1.0]);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let study = run_convergence_study(&model, Rk4::default(), grid, &spec, &SolverConfig::default(), &[4, 8], 3, 1).unwrap();
        assert!(study.rows.iter().all(|r| r.err_sup == 0.0 && r.converged));
        assert_eq!(study.summary.slope, None);
        let mut buf = Vec::new();
        write_convergence_summary_csv(&mut buf, &study.summary).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("slope,undefined"));
    }

    #[test]
    fn summary_ignores_row_order_and_flags() {
        let rows = vec![
            row(16, 0, 0.4, true),
            row(16, 1, 0.2, true),
            row(64, 0, 0.1, true),
            row(64, 1, 0.3, false),
            row(64, 2, 0.1, true),
        ];
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let a = summarize_convergence(&rows);
        assert_eq!(a, summarize_convergence(&shuffled));
        assert_eq!(a.flagged, 1);
        assert_eq!(a.per_n[0].median_err_sup, Some(0.30000000000000004));
        assert_eq!(a.per_n[1].median_err_sup, Some(0.1));
        let expected = (0.1f64.ln() - 0.30000000000000004f64.ln()) / (64f64.ln() - 16f64.ln());
        assert!((a.slope.unwrap() - expected).abs() < 1e-12);
        assert!(a.loss_gap_non_increasing());
    }
}
