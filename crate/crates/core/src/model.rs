//! Dynamics, losses and Hamiltonians for the built-in models.
//!
//! A [`Model`] bundles the feed-forward field `f(x, θ)`, the running cost
//! `L(x, θ)`, the terminal loss `Φ(x, y)` and the partial derivatives the
//! costate sweep and the Hamiltonian maximization need. Jacobians are passed
//! as row-major flat slices: `drift_dx` fills `out[i * d + j] = ∂f_i/∂x_j`
//! and `drift_dtheta` fills `out[i * m + k] = ∂f_i/∂θ_k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// State dimension `d`.
    pub state: usize,
    /// Target dimension `l`.
    pub target: usize,
    /// Parameter dimension `m`.
    pub param: usize,
}

/// Admissible control set.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSet {
    Unbounded,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ThetaSet {
    /// Box with the same bounds on every coordinate.
    pub fn uniform_box(m: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("theta box [{lo}, {hi}] is empty")));
        }
        Ok(ThetaSet::Box {
            lo: vec![lo; m],
            hi: vec![hi; m],
        })
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, ThetaSet::Box { .. })
    }

    pub fn project(&self, theta: &mut [f64]) {
        if let ThetaSet::Box { lo, hi } = self {
            for ((t, l), h) in theta.iter_mut().zip(lo).zip(hi) {
                *t = t.clamp(*l, *h);
            }
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            ThetaSet::Unbounded => theta.iter().all(|t| t.is_finite()),
            ThetaSet::Box { lo, hi } => theta
                .iter()
                .zip(lo)
                .zip(hi)
                .all(|((t, l), h)| *l <= *t && *t <= *h),
        }
    }

    /// Largest absolute coordinate value allowed, if bounded.
    pub fn max_abs(&self) -> Option<f64> {
        match self {
            ThetaSet::Unbounded => None,
            ThetaSet::Box { lo, hi } => Some(
                lo.iter()
                    .chain(hi)
                    .fold(0.0_f64, |acc, v| acc.max(v.abs())),
            ),
        }
    }
}

/// Second derivative of `H` in `θ` when it does not depend on `(x, p, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaHessian {
    /// `∇²_θθ H = c · I`.
    ScaledIdentity(f64),
}

impl ThetaHessian {
    pub fn max_eigenvalue(&self) -> f64 {
        match *self {
            ThetaHessian::ScaledIdentity(c) => c,
        }
    }
}

pub trait Model: Sync {
    fn dims(&self) -> Dims;
    fn theta_set(&self) -> &ThetaSet;

    fn drift(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn drift_dx(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn drift_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    fn running_cost(&self, x: &[f64], theta: &[f64]) -> f64;
    fn running_cost_dx(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn running_cost_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    fn terminal_loss(&self, x: &[f64], y: &[f64]) -> f64;
    fn terminal_loss_dx(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Exact `∇²_θθ H`, when the model can report it.
    fn theta_hessian(&self) -> Option<ThetaHessian> {
        None
    }

    /// `Some(λ)` when `f` is linear in `θ` and `L = λ‖θ‖²`, so the
    /// Hamiltonian is `g·θ − λ‖θ‖²` for a coefficient `g` independent of `θ`.
    fn quadratic_weight(&self) -> Option<f64> {
        None
    }

    /// Declared bound on `|f_i|` over states × `Θ`, when one exists.
    fn drift_bound(&self) -> Option<f64> {
        None
    }

    /// Models that violate the bounded-drift assumption and only serve as
    /// closed-form references.
    fn analytic_only(&self) -> bool {
        false
    }
}

/// `H(x, p, θ) = p·f(x, θ) − L(x, θ)`.
pub fn hamiltonian(model: &dyn Model, x: &[f64], p: &[f64], theta: &[f64]) -> Result<f64> {
    let dims = model.dims();
    check_dim("hamiltonian: x", dims.state, x.len())?;
    check_dim("hamiltonian: p", dims.state, p.len())?;
    check_dim("hamiltonian: theta", dims.param, theta.len())?;
    let mut f = vec![0.0; dims.state];
    model.drift(x, theta, &mut f);
    let pf: f64 = p.iter().zip(&f).map(|(a, b)| a * b).sum();
    Ok(pf - model.running_cost(x, theta))
}

/// Returns `(∇ₓH, ∇_θH)`.
pub fn grad_hamiltonian(
    model: &dyn Model,
    x: &[f64],
    p: &[f64],
    theta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Dims { state: d, param: m, .. } = model.dims();
    check_dim("grad_hamiltonian: x", d, x.len())?;
    check_dim("grad_hamiltonian: p", d, p.len())?;
    check_dim("grad_hamiltonian: theta", m, theta.len())?;

    let mut jx = vec![0.0; d * d];
    let mut jt = vec![0.0; d * m];
    model.drift_dx(x, theta, &mut jx);
    model.drift_dtheta(x, theta, &mut jt);
    let mut lx = vec![0.0; d];
    let mut lt = vec![0.0; m];
    model.running_cost_dx(x, theta, &mut lx);
    model.running_cost_dtheta(x, theta, &mut lt);

    let mut gx = vec![0.0; d];
    for (j, g) in gx.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += jx[i * d + j] * p[i];
        }
        *g = acc - lx[j];
    }
    let mut gt = vec![0.0; m];
    for (k, g) in gt.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += jt[i * m + k] * p[i];
        }
        *g = acc - lt[k];
    }
    Ok((gx, gt))
}

/// Maximizes `θ ↦ g·θ − λ‖θ‖²` over `Θ`.
///
/// The objective is separable and concave, so clamping the unconstrained
/// maximizer `g / 2λ` coordinate-wise is exact on a box.
pub fn argmax_hamiltonian_quadratic(g: &[f64], lambda: f64, theta_set: &ThetaSet) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::UnboundedMaximization { lambda });
    }
    if let ThetaSet::Box { lo, .. } = theta_set {
        check_dim("argmax_hamiltonian_quadratic", lo.len(), g.len())?;
    }
    let two_lambda = 2.0 * lambda;
    let mut theta: Vec<f64> = g.iter().map(|gi| gi / two_lambda).collect();
    theta_set.project(&mut theta);
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    /// `f(x, θ) = Θ tanh(x)` with `θ` the row-major flattening of a `d×d`
    /// matrix, `L = λ‖θ‖²`, `Φ = ½‖x − y‖²`.
    TanhBilinear { lambda: f64 },
    /// `d = m = 1`: `f = θx`, `L ≡ 0`, `Φ = ½(x − y)²`. Unbounded drift.
    LinearScalar,
    /// `d = m`: `f = θ`, `L = λ‖θ‖²`, `Φ = ½‖x − y‖²`.
    ConstantDrive { lambda: f64 },
}

/// A built-in model together with its dimension and control set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: BuiltinModel,
    dim: usize,
    theta_set: ThetaSet,
}

impl ModelSpec {
    pub fn tanh_bilinear(dim: usize, lambda: f64) -> Self {
        ModelSpec {
            kind: BuiltinModel::TanhBilinear { lambda },
            dim,
            theta_set: ThetaSet::Unbounded,
        }
    }

    pub fn linear_scalar() -> Self {
        ModelSpec {
            kind: BuiltinModel::LinearScalar,
            dim: 1,
            theta_set: ThetaSet::Unbounded,
        }
    }

    pub fn constant_drive(dim: usize, lambda: f64) -> Self {
        ModelSpec {
            kind: BuiltinModel::ConstantDrive { lambda },
            dim,
            theta_set: ThetaSet::Unbounded,
        }
    }

    /// Restricts every parameter coordinate to `[lo, hi]`.
    pub fn with_theta_box(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.theta_set = ThetaSet::uniform_box(self.dims().param, lo, hi)?;
        Ok(self)
    }

    pub fn lambda(&self) -> f64 {
        match self.kind {
            BuiltinModel::TanhBilinear { lambda } | BuiltinModel::ConstantDrive { lambda } => lambda,
            BuiltinModel::LinearScalar => 0.0,
        }
    }

    /// Same model with the regularization weight replaced.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let kind = match self.kind {
            BuiltinModel::TanhBilinear { .. } => BuiltinModel::TanhBilinear { lambda },
            BuiltinModel::ConstantDrive { .. } => BuiltinModel::ConstantDrive { lambda },
            BuiltinModel::LinearScalar => BuiltinModel::LinearScalar,
        };
        ModelSpec { kind, ..self.clone() }
    }
}

fn half_sq_dist(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

impl Model for ModelSpec {
    fn dims(&self) -> Dims {
        let d = self.dim;
        match self.kind {
            BuiltinModel::TanhBilinear { .. } => Dims {
                state: d,
                target: d,
                param: d * d,
            },
            BuiltinModel::LinearScalar => Dims {
                state: 1,
                target: 1,
                param: 1,
            },
            BuiltinModel::ConstantDrive { .. } => Dims {
                state: d,
                target: d,
                param: d,
            },
        }
    }

    fn theta_set(&self) -> &ThetaSet {
        &self.theta_set
    }

    fn drift(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        match self.kind {
            BuiltinModel::TanhBilinear { .. } => {
                let d = self.dim;
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += theta[i * d + j] * x[j].tanh();
                    }
                    *o = acc;
                }
            }
            BuiltinModel::LinearScalar => out[0] = theta[0] * x[0],
            BuiltinModel::ConstantDrive { .. } => out.copy_from_slice(theta),
        }
    }

    fn drift_dx(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        match self.kind {
            BuiltinModel::TanhBilinear { .. } => {
                let d = self.dim;
                for j in 0..d {
                    let t = x[j].tanh();
                    let sech2 = 1.0 - t * t;
                    for i in 0..d {
                        out[i * d + j] = theta[i * d + j] * sech2;
                    }
                }
            }
            BuiltinModel::LinearScalar => out[0] = theta[0],
            BuiltinModel::ConstantDrive { .. } => out.fill(0.0),
        }
    }

    fn drift_dtheta(&self, x: &[f64], _theta: &[f64], out: &mut [f64]) {
        match self.kind {
            BuiltinModel::TanhBilinear { .. } => {
                let d = self.dim;
                let m = d * d;
                out.fill(0.0);
                for i in 0..d {
                    for j in 0..d {
                        out[i * m + i * d + j] = x[j].tanh();
                    }
                }
            }
            BuiltinModel::LinearScalar => out[0] = x[0],
            BuiltinModel::ConstantDrive { .. } => {
                let d = self.dim;
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            }
        }
    }

    fn running_cost(&self, _x: &[f64], theta: &[f64]) -> f64 {
        self.lambda() * sq_norm(theta)
    }

    fn running_cost_dx(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn running_cost_dtheta(&self, _x: &[f64], theta: &[f64], out: &mut [f64]) {
        let two_lambda = 2.0 * self.lambda();
        for (o, t) in out.iter_mut().zip(theta) {
            *o = two_lambda * t;
        }
    }

    fn terminal_loss(&self, x: &[f64], y: &[f64]) -> f64 {
        half_sq_dist(x, y)
    }

    fn terminal_loss_dx(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = a - b;
        }
    }

    fn theta_hessian(&self) -> Option<ThetaHessian> {
        Some(ThetaHessian::ScaledIdentity(-2.0 * self.lambda()))
    }

    fn quadratic_weight(&self) -> Option<f64> {
        Some(self.lambda())
    }

    fn drift_bound(&self) -> Option<f64> {
        let theta_max = self.theta_set.max_abs()?;
        match self.kind {
            // |Σ_j Θ_ij tanh(x_j)| ≤ d · max|Θ_ij|
            BuiltinModel::TanhBilinear { .. } => Some(self.dim as f64 * theta_max),
            BuiltinModel::ConstantDrive { .. } => Some(theta_max),
            BuiltinModel::LinearScalar => None,
        }
    }

    fn analytic_only(&self) -> bool {
        matches!(self.kind, BuiltinModel::LinearScalar)
    }
}

/// Config section selecting a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub theta_box: Option<[f64; 2]>,
}

fn default_dim() -> usize {
    1
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        if self.dim == 0 {
            return Err(Error::Config("model.dim must be positive".into()));
        }
        let spec = match self.name.as_str() {
            "tanh_bilinear" => ModelSpec::tanh_bilinear(self.dim, self.lambda),
            "linear_scalar" => {
                if self.dim != 1 {
                    return Err(Error::Config("linear_scalar requires model.dim = 1".into()));
                }
                ModelSpec::linear_scalar()
            }
            "constant_drive" => ModelSpec::constant_drive(self.dim, self.lambda),
            other => return Err(Error::Config(format!("unknown model.name `{other}`"))),
        };
        match self.theta_box {
            Some([lo, hi]) => spec.with_theta_box(lo, hi),
            None => Ok(spec),
        }
    }
}

/// Randomized check that `|f_i(x, θ)|` stays within the declared bound for
/// states in `[-state_radius, state_radius]^d` and `θ ∈ Θ`.
///
/// Returns the largest observed component magnitude.
pub fn probe_drift_bound(model: &dyn Model, state_radius: f64, probes: usize, seed: u64) -> Result<f64> {
    if model.analytic_only() {
        return Err(Error::Unsupported("model is flagged analytic-only (unbounded drift)".into()));
    }
    let bound = model
        .drift_bound()
        .ok_or_else(|| Error::Unsupported("model declares no drift bound".into()))?;
    let ThetaSet::Box { lo, hi } = model.theta_set() else {
        return Err(Error::Unsupported("drift bound probing needs a box control set".into()));
    };
    let Dims { state: d, param: m, .. } = model.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let mut theta = vec![0.0; m];
    let mut f = vec![0.0; d];
    let mut worst = 0.0_f64;
    for _ in 0..probes {
        for xi in x.iter_mut() {
            *xi = rng.gen_range(-state_radius..=state_radius);
        }
        for (k, t) in theta.iter_mut().enumerate() {
            *t = if lo[k] < hi[k] { rng.gen_range(lo[k]..=hi[k]) } else { lo[k] };
        }
        model.drift(&x, &theta, &mut f);
        for &v in &f {
            worst = worst.max(v.abs());
        }
    }
    if worst > bound {
        return Err(Error::InvalidArgument(format!(
            "drift magnitude {worst} exceeds declared bound {bound}"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], k: usize, h: f64) -> f64 {
        let mut plus = at.to_vec();
        let mut minus = at.to_vec();
        plus[k] += h;
        minus[k] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    #[test]
    fn hamiltonian_constant_drive() {
        let m = ModelSpec::constant_drive(1, 0.5);
        let h = hamiltonian(&m, &[0.7], &[3.0], &[2.0]).unwrap();
        assert_eq!(h, 4.0);
    }

    #[test]
    fn hamiltonian_zero_costate_zero_cost() {
        let m = ModelSpec::linear_scalar();
        assert_eq!(hamiltonian(&m, &[1.3], &[0.0], &[0.4]).unwrap(), 0.0);
        let (gx, gt) = grad_hamiltonian(&m, &[1.3], &[0.0], &[0.4]).unwrap();
        assert_eq!(gx, vec![0.0]);
        assert_eq!(gt, vec![0.0]);
    }

    #[test]
    fn hamiltonian_tanh_bilinear_scalar() {
        // 2 * 1.5 * tanh(1) - 0.5 * 1.5^2
        let m = ModelSpec::tanh_bilinear(1, 0.5);
        let h = hamiltonian(&m, &[1.0], &[2.0], &[1.5]).unwrap();
        assert_relative_eq!(h, 1.159_782_467_867_294_7, epsilon = 1e-14);
    }

    #[test]
    fn grad_hamiltonian_examples() {
        let m = ModelSpec::constant_drive(1, 0.5);
        let (gx, gt) = grad_hamiltonian(&m, &[0.3], &[1.0], &[0.0]).unwrap();
        assert_eq!(gx, vec![0.0]);
        assert_eq!(gt, vec![1.0]);
        let fd = central_diff(|t| hamiltonian(&m, &[0.3], &[1.0], t).unwrap(), &[0.0], 0, 1e-6);
        assert_relative_eq!(fd, 1.0, epsilon = 1e-8);

        let m = ModelSpec::tanh_bilinear(1, 0.5);
        let (_, gt) = grad_hamiltonian(&m, &[1.0], &[2.0], &[1.5]).unwrap();
        let fd = central_diff(|t| hamiltonian(&m, &[1.0], &[2.0], t).unwrap(), &[1.5], 0, 1e-6);
        assert_relative_eq!(gt[0], 0.023_188_311_911_529_7, epsilon = 1e-12);
        assert_relative_eq!(gt[0], fd, epsilon = 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = ModelSpec::tanh_bilinear(2, 0.5);
        let err = hamiltonian(&m, &[1.0], &[1.0, 1.0], &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, got: 1, .. }));
        assert!(grad_hamiltonian(&m, &[1.0, 1.0], &[1.0, 1.0], &[0.0; 3]).is_err());
    }

    /// Grid search over `[lo, hi]` with the given step; returns the best point.
    fn grid_argmax(g: f64, lambda: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|j| lo + j as f64 * step)
            .map(|t| (t, g * t - lambda * t * t))
            .fold((lo, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
            .0
    }

    #[test]
    fn argmax_examples() {
        let g = 1.523188;
        let t = argmax_hamiltonian_quadratic(&[g], 0.5, &ThetaSet::Unbounded).unwrap();
        assert_relative_eq!(t[0], 1.523188, epsilon = 1e-15);
        assert!((grid_argmax(g, 0.5, -5.0, 5.0, 1e-4) - t[0]).abs() <= 1e-4);

        let t0 = argmax_hamiltonian_quadratic(&[0.0], 0.5, &ThetaSet::Unbounded).unwrap();
        assert_eq!(t0, vec![0.0]);

        let boxed = ThetaSet::uniform_box(1, -1.0, 1.0).unwrap();
        let t = argmax_hamiltonian_quadratic(&[g], 0.5, &boxed).unwrap();
        assert_eq!(t, vec![1.0]);
        assert!((grid_argmax(g, 0.5, -1.0, 1.0, 1e-4) - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn argmax_rejects_nonpositive_weight() {
        assert!(matches!(
            argmax_hamiltonian_quadratic(&[1.0], 0.0, &ThetaSet::Unbounded),
            Err(Error::UnboundedMaximization { .. })
        ));
    }

    #[test]
    fn drift_bound_probe() {
        let m = ModelSpec::tanh_bilinear(3, 0.1).with_theta_box(-2.0, 1.5).unwrap();
        let worst = probe_drift_bound(&m, 10.0, 2000, 11).unwrap();
        assert!(worst <= 6.0);
        let m = ModelSpec::constant_drive(2, 0.1).with_theta_box(-1.0, 1.0).unwrap();
        assert!(probe_drift_bound(&m, 10.0, 500, 3).unwrap() <= 1.0);
        let lin = ModelSpec::linear_scalar().with_theta_box(-1.0, 1.0).unwrap();
        assert!(probe_drift_bound(&lin, 10.0, 10, 1).is_err());
    }

    #[test]
    fn config_builds_models() {
        let cfg: ModelConfig = toml::from_str("name = \"tanh_bilinear\"\nlambda = 0.25\ndim = 2\ntheta_box = [-1.0, 1.0]").unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.dims(), Dims { state: 2, target: 2, param: 4 });
        assert!(m.theta_set().is_bounded());
        let bad: ModelConfig = toml::from_str("name = \"resnet\"").unwrap();
        assert!(bad.build().is_err());
    }
}
