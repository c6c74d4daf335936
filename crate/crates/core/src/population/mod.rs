//! Finite-support input-target distributions, seeded sampling, exact
//! expectations and 2-Wasserstein distances between empirical measures.

mod assignment;

use std::cmp::Ordering;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use assignment::min_cost_assignment;

use crate::error::{check_dim, Error, Result};
use crate::model::Model;
use crate::ode::{ControlPath, Rk4};
use crate::reduce::{pairwise_sum, pairwise_sum_rows};

/// Largest `N` accepted by the assignment solver.
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// Largest replica count used when splitting weighted atoms.
pub const MAX_REPLICAS: usize = 64;

/// One input-target pair `w = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Sample { x, y }
    }

    /// Concatenated `(x, y)`.
    pub fn joint(&self) -> Vec<f64> {
        let mut w = self.x.clone();
        w.extend_from_slice(&self.y);
        w
    }

    fn canonical_cmp(&self, other: &Sample) -> Ordering {
        lex_cmp(&self.x, &other.x).then_with(|| lex_cmp(&self.y, &other.y))
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (u, v) in a.iter().zip(b) {
        match u.total_cmp(v) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Finite-support distribution `μ0 = Σ wᵢ δ_(xᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    atoms: Vec<Sample>,
    weights: Vec<f64>,
    bound: f64,
}

impl PopulationSpec {
    /// Validates weights (nonnegative, summing to one within 1e-12) and the
    /// support bound `‖x‖ + ‖y‖ ≤ M`, then renormalizes the weights.
    pub fn new(atoms: Vec<Sample>, weights: Vec<f64>, bound: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySample);
        }
        check_dim("PopulationSpec: weights", atoms.len(), weights.len())?;
        let (dx, dy) = (atoms[0].x.len(), atoms[0].y.len());
        for a in &atoms {
            check_dim("PopulationSpec: atom x", dx, a.x.len())?;
            check_dim("PopulationSpec: atom y", dy, a.y.len())?;
            if !a.x.iter().chain(&a.y).all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("atoms must be finite".into()));
            }
            let size = norm(&a.x) + norm(&a.y);
            if size > bound {
                return Err(Error::InvalidArgument(format!(
                    "atom with ‖x‖+‖y‖ = {size} exceeds support bound {bound}"
                )));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        // Sum in sorted order so the normalization ignores atom order.
        let mut sorted = weights.clone();
        sorted.sort_by(f64::total_cmp);
        let total = pairwise_sum(&sorted);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(PopulationSpec { atoms, weights, bound })
    }

    /// Single atom with weight one; the bound is the atom's own size.
    pub fn point_mass(x: Vec<f64>, y: Vec<f64>) -> Self {
        let bound = norm(&x) + norm(&y);
        PopulationSpec {
            atoms: vec![Sample::new(x, y)],
            weights: vec![1.0],
            bound,
        }
    }

    pub fn atoms(&self) -> &[Sample] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn as_weighted(&self) -> WeightedSamples {
        WeightedSamples::new(self.atoms.clone(), self.weights.clone())
    }

    /// Smallest `q ≤ 64` such that every `q·wᵢ` is an integer (within 1e-9).
    pub fn replica_resolution(&self) -> Option<usize> {
        (1..=MAX_REPLICAS).find(|&q| {
            self.weights.iter().all(|w| {
                let scaled = w * q as f64;
                (scaled - scaled.round()).abs() <= 1e-9
            })
        })
    }

    /// Splits each atom into `q·wᵢ` unit-weight replicas.
    pub fn to_unit_replicas(&self, q: usize) -> Result<EmpiricalMeasure> {
        let mut points = Vec::with_capacity(q);
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let scaled = w * q as f64;
            let count = scaled.round();
            if (scaled - count).abs() > 1e-9 {
                return Err(Error::UnsupportedPairing(format!(
                    "weight {w} is not a multiple of 1/{q}"
                )));
            }
            for _ in 0..count as usize {
                points.push(a.clone());
            }
        }
        EmpiricalMeasure::new(points)
    }
}

/// Empirical measure `(1/N) Σ δ_(xᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Sample>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Sample>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        if !points.iter().all(|p| p.x.iter().chain(&p.y).all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("sample points must be finite".into()));
        }
        Ok(EmpiricalMeasure { points })
    }

    /// Builds a measure from joint points with the given state dimension.
    pub fn from_joint(points: &[Vec<f64>], state_dim: usize) -> Result<Self> {
        EmpiricalMeasure::new(
            points
                .iter()
                .map(|w| Sample::new(w[..state_dim].to_vec(), w[state_dim..].to_vec()))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Sample] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn as_weighted(&self) -> WeightedSamples {
        let w = 1.0 / self.points.len() as f64;
        WeightedSamples::new(self.points.clone(), vec![w; self.points.len()])
    }
}

/// Samples with probability weights, stored in canonical (sorted) order so
/// that every reduction over them is independent of the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    samples: Vec<Sample>,
    weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(samples: Vec<Sample>, weights: Vec<f64>) -> Self {
        assert_eq!(samples.len(), weights.len(), "one weight per sample");
        let total: f64 = weights.iter().sum();
        assert!(
            weights.is_empty() || (total - 1.0).abs() <= 1e-9,
            "weights must sum to one, got {total}"
        );
        let mut pairs: Vec<(Sample, f64)> = samples.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.canonical_cmp(&b.0).then_with(|| a.1.total_cmp(&b.1)));
        let (samples, weights) = pairs.into_iter().unzip();
        WeightedSamples { samples, weights }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, f64)> {
        self.samples.iter().zip(self.weights.iter().copied())
    }

    /// `Σ wᵢ vᵢ` with the deterministic tree reduction.
    pub fn weighted_sum(&self, values: &[f64]) -> f64 {
        let terms: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| w * v).collect();
        pairwise_sum(&terms)
    }

    /// Component-wise `Σ wᵢ rowᵢ`.
    pub fn weighted_sum_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let width = rows.first().map_or(0, Vec::len);
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| r.iter().map(|v| w * v).collect())
            .collect();
        pairwise_sum_rows(&scaled, width)
    }
}

/// Uniform draw in `[0, 1)` from the counter-based stream `(seed, index)`.
pub fn counter_uniform(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * index as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `N` i.i.d. categorical draws over the atoms of `spec`.
///
/// Draw `i` depends only on `(seed, i)`, so the output is reproducible on any
/// machine and the first `n` draws of a longer run coincide with a shorter one.
pub fn draw_samples(spec: &PopulationSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut cumulative = Vec::with_capacity(spec.len());
    let mut acc = 0.0;
    for w in spec.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let last = spec.len() - 1;
    let points = (0..n as u64)
        .map(|i| {
            let u = counter_uniform(seed, i);
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or(last);
            spec.atoms()[idx].clone()
        })
        .collect();
    EmpiricalMeasure::new(points)
}

/// `Σ wᵢ g(atomᵢ)` with atoms visited in canonical order.
pub fn expect(spec: &PopulationSpec, g: impl Fn(&Sample) -> f64) -> f64 {
    let ws = spec.as_weighted();
    let values: Vec<f64> = ws.samples().iter().map(g).collect();
    ws.weighted_sum(&values)
}

fn pair_cost(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Total matching cost: pair costs sorted ascending then summed, which makes
/// the result independent of which side is called first.
fn matching_total(mut costs: Vec<f64>) -> f64 {
    costs.sort_by(f64::total_cmp);
    costs.iter().sum()
}

/// `W₂` between two equal-size empirical measures.
///
/// Exact sorted matching in one dimension, exact optimal assignment
/// otherwise; returns `sqrt(min cost / N)`.
pub fn wasserstein2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnsupportedPairing(format!(
            "measures of sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    let wa: Vec<Vec<f64>> = a.points().iter().map(Sample::joint).collect();
    let wb: Vec<Vec<f64>> = b.points().iter().map(Sample::joint).collect();
    let dim = wa[0].len();
    for w in wa.iter().chain(&wb) {
        check_dim("wasserstein2: point", dim, w.len())?;
    }
    let n = wa.len();
    let total = if dim == 1 {
        let mut sa: Vec<f64> = wa.iter().map(|w| w[0]).collect();
        let mut sb: Vec<f64> = wb.iter().map(|w| w[0]).collect();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        matching_total(sa.iter().zip(&sb).map(|(u, v)| (u - v) * (u - v)).collect())
    } else {
        if n > MAX_ASSIGNMENT_SIZE {
            return Err(Error::Unsupported(format!(
                "assignment size {n} exceeds {MAX_ASSIGNMENT_SIZE}"
            )));
        }
        let mut cost = Vec::with_capacity(n * n);
        for u in &wa {
            for v in &wb {
                cost.push(pair_cost(u, v));
            }
        }
        let assign = min_cost_assignment(&cost, n);
        matching_total(assign.iter().enumerate().map(|(r, &c)| cost[r * n + c]).collect())
    };
    Ok((total / n as f64).sqrt())
}

/// `W₂` between two finite-support distributions, after splitting both into
/// unit replicas at a common resolution of at most 64.
pub fn wasserstein2_weighted(a: &PopulationSpec, b: &PopulationSpec) -> Result<f64> {
    let qa = a
        .replica_resolution()
        .ok_or_else(|| Error::UnsupportedPairing("weights need more than 64 replicas".into()))?;
    let qb = b
        .replica_resolution()
        .ok_or_else(|| Error::UnsupportedPairing("weights need more than 64 replicas".into()))?;
    let q = lcm(qa, qb);
    if q > MAX_REPLICAS {
        return Err(Error::UnsupportedPairing(format!(
            "common replica count {q} exceeds {MAX_REPLICAS}"
        )));
    }
    wasserstein2(&a.to_unit_replicas(q)?, &b.to_unit_replicas(q)?)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// A smooth scalar test function on the joint space `(x, y)`.
pub struct ScalarField<'a> {
    pub value: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub gradient: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
}

/// Largest defect over integration nodes in
/// `E ψ(w_t) = E ψ(w_0) + ∫₀ᵗ E[∇ψ(w_s)·f̄(w_s, θ_s)] ds`, the time
/// integral taken by the trapezoid rule on the integration grid.
pub fn chain_rule_probe(
    model: &dyn Model,
    rk: Rk4,
    samples: &WeightedSamples,
    ctrl: &ControlPath,
    psi: &ScalarField<'_>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let dims = model.dims();
    let d = dims.state;
    let h = ctrl.grid().dt() / rk.substeps as f64;
    let per_sample: Vec<Result<(Vec<f64>, Vec<f64>)>> = samples
        .samples()
        .par_iter()
        .map(|s| {
            let path = rk.integrate_state(model, &s.x, ctrl)?;
            let n = path.n_fine_steps();
            let mut w = vec![0.0; d + dims.target];
            let mut grad = vec![0.0; d + dims.target];
            let mut f = vec![0.0; d];
            let mut lhs = Vec::with_capacity(n + 1);
            let mut rhs = Vec::with_capacity(n + 1);
            let integrand = |x: &[f64], theta: &[f64], w: &mut [f64], grad: &mut [f64], f: &mut [f64]| {
                w[..d].copy_from_slice(x);
                w[d..].copy_from_slice(&s.y);
                (psi.gradient)(w, grad);
                model.drift(x, theta, f);
                grad[..d].iter().zip(f.iter()).map(|(g, v)| g * v).sum::<f64>()
            };
            w[..d].copy_from_slice(path.fine_node(0));
            w[d..].copy_from_slice(&s.y);
            let psi0 = (psi.value)(&w);
            lhs.push(psi0);
            rhs.push(psi0);
            let mut integral = 0.0;
            for j in 0..n {
                let theta = ctrl.value(j / rk.substeps);
                let left = integrand(path.fine_node(j), theta, &mut w, &mut grad, &mut f);
                let right = integrand(path.fine_node(j + 1), theta, &mut w, &mut grad, &mut f);
                integral += 0.5 * h * (left + right);
                w[..d].copy_from_slice(path.fine_node(j + 1));
                w[d..].copy_from_slice(&s.y);
                lhs.push((psi.value)(&w));
                rhs.push(psi0 + integral);
            }
            Ok((lhs, rhs))
        })
        .collect();
    let mut lhs_rows = Vec::with_capacity(samples.len());
    let mut rhs_rows = Vec::with_capacity(samples.len());
    for r in per_sample {
        let (l, r) = r?;
        lhs_rows.push(l);
        rhs_rows.push(r);
    }
    let lhs = samples.weighted_sum_rows(&lhs_rows);
    let rhs = samples.weighted_sum_rows(&rhs_rows);
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// One atom of the population config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
}

/// Config section describing `μ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub atoms: Vec<AtomConfig>,
    pub bound: f64,
}

impl PopulationConfig {
    pub fn build(&self) -> Result<PopulationSpec> {
        PopulationSpec::new(
            self.atoms.iter().map(|a| Sample::new(a.x.clone(), a.y.clone())).collect(),
            self.atoms.iter().map(|a| a.w).collect(),
            self.bound,
        )
    }
}

/// Writes draws as CSV with columns `trial, index, x1.., y1..`.
pub fn write_samples_csv<W: Write>(out: &mut W, trials: &[(usize, &EmpiricalMeasure)]) -> Result<()> {
    let Some((_, first)) = trials.first() else {
        return Ok(());
    };
    let (dx, dy) = (first.points()[0].x.len(), first.points()[0].y.len());
    let mut header = String::from("trial,index");
    for i in 1..=dx {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=dy {
        header.push_str(&format!(",y{i}"));
    }
    writeln!(out, "{header}")?;
    for (trial, measure) in trials {
        for (idx, p) in measure.points().iter().enumerate() {
            let mut line = format!("{trial},{idx}");
            for v in p.x.iter().chain(&p.y) {
                line.push_str(&format!(",{v:?}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
