use std::fs::File;
use std::io::{BufWriter, Write};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use meanfield::experiments::{
    derive_seed, run_convergence_study, run_uniqueness_study, run_validation_suite, write_convergence_csv,
    write_convergence_summary_csv, write_uniqueness_csv, write_validation_csv, Manifest, StudyKind,
};
use meanfield::hjb::{costate_consistency, dpp_check as dpp, solve_classical_hjb_1d};
use meanfield::pmp::{estimate_stability_constant, loss, msa_solve, write_control_csv, StabilityEstimate};
use meanfield::{ControlPath, Model};

use crate::Run;

fn manifest(run: &Run) -> Manifest {
    Manifest::new(run.command, &run.config, run.config.study.base_seed, run.threads)
}

/// Writes one CSV into the output directory through `body`.
fn table(
    run: &Run,
    outputs: &mut Vec<String>,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> meanfield::Result<()>,
) -> Result<()> {
    let path = run.out.join(name);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w)?;
    w.flush()?;
    outputs.push(name.to_string());
    Ok(())
}

fn finish(run: &Run, mut m: Manifest, outputs: Vec<String>, started: Instant) -> Result<()> {
    m.set("outputs", outputs).timing("total", started.elapsed());
    m.write(&run.out.join("manifest.json"))?;
    Ok(())
}

fn zero_control(model: &dyn Model, grid: meanfield::TimeGrid) -> ControlPath {
    ControlPath::constant(grid, &vec![0.0; model.dims().param])
}

pub fn validate(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let report = run_validation_suite(&run.config)?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "validation.csv", |w| write_validation_csv(w, &report))?;
    let mut m = manifest(run);
    m.set("checks", &report.checks)
        .set("overrides", &report.overrides)
        .set("isolated", &report.isolated)
        .set("passed", report.passed());
    finish(run, m, outputs, started)?;
    for c in &report.checks {
        println!(
            "{:<22} {} observed {:e} (tolerance {:e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.observed,
            c.tolerance
        );
    }
    Ok(report.passed())
}

pub fn train(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let (grid, rk) = cfg.time()?;
    let samples = cfg.population()?.as_weighted();
    let sol = msa_solve(&model, rk, &samples, &zero_control(&model, grid), &cfg.solver()?)?;
    let j = loss(&model, rk, &samples, &sol.control)?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "control.csv", |w| write_control_csv(w, &sol.control))?;
    table(run, &mut outputs, "residual_history.csv", |w| {
        writeln!(w, "iteration,residual")?;
        for (i, r) in sol.residual_history.iter().enumerate() {
            writeln!(w, "{i},{r:?}")?;
        }
        Ok(())
    })?;
    let mut m = manifest(run);
    m.set("converged", sol.converged)
        .set("residual", sol.residual())
        .set("iterations", sol.residual_history.len() - 1)
        .set("loss", j);
    finish(run, m, outputs, started)?;
    println!(
        "converged {} after {} iterations, residual {:e}, loss {j}",
        sol.converged,
        sol.residual_history.len() - 1,
        sol.residual()
    );
    Ok(true)
}

pub fn converge_study(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let (grid, rk) = cfg.time()?;
    let spec = cfg.population()?;
    let s = &cfg.study;
    let study = run_convergence_study(&model, rk, grid, &spec, &cfg.solver()?, &s.n_list, s.trials, s.base_seed)?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "convergence.csv", |w| write_convergence_csv(w, &study.rows))?;
    table(run, &mut outputs, "convergence_summary.csv", |w| {
        write_convergence_summary_csv(w, &study.summary)
    })?;
    let mut m = manifest(run);
    m.set("theta_star_residual", study.theta_star_residual)
        .set("loss_star", study.loss_star)
        .set("slope", study.summary.slope)
        .set("flagged_rows", study.summary.flagged)
        .set("loss_gap_non_increasing", study.summary.loss_gap_non_increasing());
    finish(run, m, outputs, started)?;
    for n in &study.summary.per_n {
        println!(
            "N={:<5} median err_sup {:>12} median loss_gap {:>12} flagged {}",
            n.n,
            n.median_err_sup.map_or("-".into(), |v| format!("{v:.4e}")),
            n.median_loss_gap.map_or("-".into(), |v| format!("{v:.4e}")),
            n.flagged
        );
    }
    match study.summary.slope {
        Some(slope) => println!("slope {slope:.4}"),
        None => println!("slope undefined"),
    }
    Ok(true)
}

pub fn uniqueness_study(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let t = cfg.time.context("missing [time] section")?;
    let spec = cfg.population()?;
    let s = &cfg.study;
    let study = run_uniqueness_study(
        &model,
        t.rk4()?,
        t.steps,
        &spec,
        &cfg.solver()?,
        &s.t_list,
        s.inits,
        s.init_range,
        s.base_seed,
    )?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "uniqueness.csv", |w| write_uniqueness_csv(w, &study.rows))?;
    let mut m = manifest(run);
    m.set("horizons", &s.t_list)
        .set("converged", &study.converged)
        .set("max_dist", &study.max_dist);
    finish(run, m, outputs, started)?;
    for ((h, d), c) in s.t_list.iter().zip(&study.max_dist).zip(&study.converged) {
        let ok = c.iter().filter(|&&b| b).count();
        println!("T={h}: {ok}/{} converged, max pairwise distance {d:e}", c.len());
    }
    Ok(true)
}

pub fn hjb_check(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let (grid, rk) = cfg.time()?;
    let spec = cfg.population()?;
    if spec.len() != 1 || spec.atoms()[0].x.len() != 1 || spec.atoms()[0].y.len() != 1 {
        bail!("hjb-check needs a single scalar atom in [population]");
    }
    let atom = &spec.atoms()[0];
    let grids = cfg.hjb.grids(grid.horizon())?;
    let v = solve_classical_hjb_1d(&model, atom.y[0], &grids)?;
    let sol = msa_solve(&model, rk, &spec.as_weighted(), &zero_control(&model, grid), &cfg.solver()?)?;
    let mismatch = costate_consistency(&sol, &v)?;
    let bound = 5.0 * grids.hx().max(grids.time.dt());
    let v0 = v.node_index(atom.x[0]).map(|j| v.value(0, j));
    let j = loss(&model, rk, &spec.as_weighted(), &sol.control)?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "value_grid.csv", |w| v.write_csv(w))?;
    let mut m = manifest(run);
    m.set("v_at_x0", v0)
        .set("pmp_loss", j)
        .set("pmp_converged", sol.converged)
        .set("costate_mismatch", mismatch)
        .set("costate_bound", bound);
    finish(run, m, outputs, started)?;
    match v0 {
        Some(v0) => println!("v(0, x0) = {v0} (PMP loss {j})"),
        None => println!("x0 is not a grid node; PMP loss {j}"),
    }
    println!("costate mismatch {mismatch:e} (5·max(hx, dt) = {bound:e})");
    Ok(true)
}

pub fn dpp_check(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let (grid, _) = cfg.time()?;
    let spec = cfg.population()?;
    let coarse = cfg.hjb.coarse(grid.horizon());
    let report = dpp(&model, &spec, 0.0, cfg.hjb.t_hat, &coarse)?;
    let mut outputs = Vec::new();
    table(run, &mut outputs, "dpp.csv", |w| {
        writeln!(w, "candidate,first_segment,rhs")?;
        for (i, c) in report.candidates.iter().enumerate() {
            let seg: Vec<String> = c
                .first_segment
                .iter()
                .map(|b| b.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
                .collect();
            writeln!(w, "{i},{},{:?}", seg.join(";"), c.rhs)?;
        }
        Ok(())
    })?;
    let mut m = manifest(run);
    m.set("t", report.t)
        .set("t_hat", report.t_hat)
        .set("v_left", report.v_left)
        .set("best_rhs", report.best_rhs)
        .set("residual", report.residual);
    finish(run, m, outputs, started)?;
    println!(
        "v(0) = {} best rhs = {} residual {:e} over {} candidates",
        report.v_left,
        report.best_rhs,
        report.residual,
        report.candidates.len()
    );
    Ok(true)
}

pub fn stability_probe(run: &Run) -> Result<bool> {
    let started = Instant::now();
    let cfg = &run.config;
    let model = cfg.model()?;
    let (grid, rk) = cfg.time()?;
    let samples = cfg.population()?.as_weighted();
    let s = &cfg.study;
    let center = msa_solve(&model, rk, &samples, &zero_control(&model, grid), &cfg.solver()?)?;
    let seed = derive_seed(s.base_seed, StudyKind::Stability, 0, 0);
    let estimate = estimate_stability_constant(&model, rk, &samples, &center.control, s.rho, s.pairs, seed)?;
    let (status, k_hat) = match estimate {
        StabilityEstimate::Stable { k_hat } => ("stable", Some(k_hat)),
        StabilityEstimate::NonStable => ("non_stable", None),
    };
    let mut outputs = Vec::new();
    table(run, &mut outputs, "stability.csv", |w| {
        writeln!(w, "rho,pairs,seed,center_residual,status,k_hat")?;
        let k = k_hat.map_or_else(|| "undefined".to_string(), |k| format!("{k:?}"));
        writeln!(w, "{:?},{},{seed},{:?},{status},{k}", s.rho, s.pairs, center.residual())?;
        Ok(())
    })?;
    let mut m = manifest(run);
    m.set("center_residual", center.residual())
        .set("center_converged", center.converged)
        .set("probe_seed", seed)
        .set("status", status)
        .set("k_hat", k_hat);
    finish(run, m, outputs, started)?;
    match k_hat {
        Some(k) => println!("stable, K lower bound {k:e}"),
        None => println!("non-stable: a probe pair left the residual unchanged"),
    }
    Ok(true)
}
