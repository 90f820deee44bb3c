//! Coefficient interfaces, drift taming and the built-in models.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{check_finite, config_err, Error, Result};
use crate::stats::compensated_sum;

/// Upper bound on the number of delay offsets a model may use.
pub const MAX_ARITY: usize = 16;

/// Drift taming variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Taming {
    /// Drift passes through unchanged.
    None,
    /// `b / (1 + δ|b|)`.
    #[default]
    Scheme1,
    /// `b / (1 + δ b²)`.
    Scheme2,
}

impl Taming {
    /// Applies the taming transform without finiteness checks.
    #[inline]
    pub fn apply(self, b: f64, delta: f64) -> f64 {
        match self {
            Taming::None => b,
            Taming::Scheme1 => b / (1.0 + delta * b.abs()),
            Taming::Scheme2 => b / (1.0 + delta * b * b),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Taming::None => "none",
            Taming::Scheme1 => "scheme1",
            Taming::Scheme2 => "scheme2",
        }
    }
}

impl FromStr for Taming {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Taming::None),
            "scheme1" => Ok(Taming::Scheme1),
            "scheme2" => Ok(Taming::Scheme2),
            other => Err(config_err(format!("unknown taming `{other}`"))),
        }
    }
}

impl fmt::Display for Taming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Tamed drift `b_δ`; fails on a non-finite input.
pub fn tame_drift(b: f64, delta: f64, scheme: Taming) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(config_err(format!("taming needs a positive mesh, got {delta}")));
    }
    let b = check_finite("drift", b)?;
    Ok(scheme.apply(b, delta))
}

/// An empirical measure seen through its atoms and cached summaries.
#[derive(Debug, Clone, Copy)]
pub struct MeasureView<'a> {
    atoms: &'a [f64],
    mean: f64,
    second_moment: f64,
}

impl<'a> MeasureView<'a> {
    /// Computes the summaries of `atoms` (compensated sums).
    pub fn from_atoms(atoms: &'a [f64]) -> Self {
        let n = atoms.len().max(1) as f64;
        let mean = compensated_sum(atoms) / n;
        let mut sq = crate::stats::CompensatedSum::default();
        for &x in atoms {
            sq.add(x * x);
        }
        Self {
            atoms,
            mean,
            second_moment: sq.value() / n,
        }
    }

    /// Wraps atoms whose summaries are already known.
    pub fn with_summary(atoms: &'a [f64], mean: f64, second_moment: f64) -> Self {
        Self {
            atoms,
            mean,
            second_moment,
        }
    }

    /// A summary-only measure without atom access.
    pub fn from_moments(mean: f64, second_moment: f64) -> MeasureView<'static> {
        MeasureView {
            atoms: &[],
            mean,
            second_moment,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn atoms(&self) -> &'a [f64] {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Structural facts the steppers use to skip work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelFlags {
    pub drift_uses_delay: bool,
    pub diffusion_uses_measure_grad: bool,
    pub diffusion_uses_state_grad: bool,
}

/// Coefficients `b(x_1..x_k, μ_1..μ_k)` and `σ(x_1..x_k, μ_1..μ_k)` of a
/// point-delay McKean–Vlasov SDE in one dimension, where `x_l` and `μ_l` are
/// the state and the law at time `t + s_l`.
///
/// Gradient indices `l` run over `0..arity()`. Measure gradients are
/// L-derivatives evaluated at the probe point `y`. All methods must be pure.
pub trait DelayCoefficients: Send + Sync {
    fn arity(&self) -> usize;
    fn flags(&self) -> ModelFlags;
    fn drift(&self, x: &[f64], mu: &[MeasureView<'_>]) -> f64;
    fn diffusion(&self, x: &[f64], mu: &[MeasureView<'_>]) -> f64;
    fn drift_state_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>]) -> f64;
    fn drift_measure_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>], y: f64) -> f64;
    fn diffusion_state_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>]) -> f64;
    fn diffusion_measure_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>], y: f64)
        -> f64;
}

/// The one-point delay shape `dX = b(X, μ) dt + σ(X, X(t-τ)) dW`.
pub trait OnePointDelayModel: Send + Sync {
    fn drift(&self, x: f64, mu: &MeasureView<'_>) -> f64;
    fn diffusion(&self, x: f64, x_delayed: f64) -> f64;
    fn diffusion_grad1(&self, x: f64, x_delayed: f64) -> f64;
    fn diffusion_grad2(&self, x: f64, x_delayed: f64) -> f64;

    /// `∂_x b`, used only for diagnostics.
    fn drift_state_grad(&self, _x: f64, _mu: &MeasureView<'_>) -> f64 {
        f64::NAN
    }

    /// `∂_μ b(·)(y)`, used only for diagnostics.
    fn drift_measure_grad(&self, _x: f64, _mu: &MeasureView<'_>, _y: f64) -> f64 {
        f64::NAN
    }
}

/// Presents a [`OnePointDelayModel`] through the general interface with
/// offsets `(0, -τ)`.
#[derive(Clone)]
pub struct OnePointAdapter(pub Arc<dyn OnePointDelayModel>);

impl DelayCoefficients for OnePointAdapter {
    fn arity(&self) -> usize {
        2
    }

    fn flags(&self) -> ModelFlags {
        ModelFlags {
            drift_uses_delay: false,
            diffusion_uses_measure_grad: false,
            diffusion_uses_state_grad: true,
        }
    }

    fn drift(&self, x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        self.0.drift(x[0], &mu[0])
    }

    fn diffusion(&self, x: &[f64], _mu: &[MeasureView<'_>]) -> f64 {
        self.0.diffusion(x[0], x[1])
    }

    fn drift_state_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        if l == 0 {
            self.0.drift_state_grad(x[0], &mu[0])
        } else {
            0.0
        }
    }

    fn drift_measure_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>], y: f64) -> f64 {
        if l == 0 {
            self.0.drift_measure_grad(x[0], &mu[0], y)
        } else {
            0.0
        }
    }

    fn diffusion_state_grad(&self, l: usize, x: &[f64], _mu: &[MeasureView<'_>]) -> f64 {
        match l {
            0 => self.0.diffusion_grad1(x[0], x[1]),
            1 => self.0.diffusion_grad2(x[0], x[1]),
            _ => 0.0,
        }
    }

    fn diffusion_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_of_means(mu: &[MeasureView<'_>]) -> f64 {
    mu.iter().map(|m| m.mean()).sum::<f64>() / mu.len() as f64
}

/// `b = 1 - x³ + x + mean(x_l) + mean(E[x_l])` with `σ = mean(x_l)`.
#[derive(Debug, Clone, Copy)]
pub struct Example1 {
    pub k: usize,
}

impl DelayCoefficients for Example1 {
    fn arity(&self) -> usize {
        self.k
    }

    fn flags(&self) -> ModelFlags {
        ModelFlags {
            drift_uses_delay: self.k > 1,
            diffusion_uses_measure_grad: false,
            diffusion_uses_state_grad: true,
        }
    }

    fn drift(&self, x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        let x0 = x[0];
        1.0 - x0 * x0 * x0 + x0 + mean_of(x) + mean_of_means(mu)
    }

    fn diffusion(&self, x: &[f64], _mu: &[MeasureView<'_>]) -> f64 {
        mean_of(x)
    }

    fn drift_state_grad(&self, l: usize, x: &[f64], _mu: &[MeasureView<'_>]) -> f64 {
        let own = if l == 0 { 1.0 - 3.0 * x[0] * x[0] } else { 0.0 };
        own + 1.0 / self.k as f64
    }

    fn drift_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        1.0 / self.k as f64
    }

    fn diffusion_state_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        1.0 / self.k as f64
    }

    fn diffusion_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }
}

/// Example 1's drift with the law-dependent diffusion `σ = mean(E[x_l])`.
#[derive(Debug, Clone, Copy)]
pub struct Example2 {
    pub k: usize,
}

impl DelayCoefficients for Example2 {
    fn arity(&self) -> usize {
        self.k
    }

    fn flags(&self) -> ModelFlags {
        ModelFlags {
            drift_uses_delay: self.k > 1,
            diffusion_uses_measure_grad: true,
            diffusion_uses_state_grad: false,
        }
    }

    fn drift(&self, x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        Example1 { k: self.k }.drift(x, mu)
    }

    fn diffusion(&self, _x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        mean_of_means(mu)
    }

    fn drift_state_grad(&self, l: usize, x: &[f64], mu: &[MeasureView<'_>]) -> f64 {
        Example1 { k: self.k }.drift_state_grad(l, x, mu)
    }

    fn drift_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        1.0 / self.k as f64
    }

    fn diffusion_state_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        0.0
    }

    fn diffusion_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        1.0 / self.k as f64
    }
}

/// One-point delay model `b = 1 - x³ + x + E[X]`, `σ = (x + x(t-τ))/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AntitheticExample1;

impl OnePointDelayModel for AntitheticExample1 {
    fn drift(&self, x: f64, mu: &MeasureView<'_>) -> f64 {
        1.0 - x * x * x + x + mu.mean()
    }

    fn diffusion(&self, x: f64, x_delayed: f64) -> f64 {
        0.5 * (x + x_delayed)
    }

    fn diffusion_grad1(&self, _: f64, _: f64) -> f64 {
        0.5
    }

    fn diffusion_grad2(&self, _: f64, _: f64) -> f64 {
        0.5
    }

    fn drift_state_grad(&self, x: f64, _mu: &MeasureView<'_>) -> f64 {
        1.0 - 3.0 * x * x
    }

    fn drift_measure_grad(&self, _: f64, _: &MeasureView<'_>, _: f64) -> f64 {
        1.0
    }
}

/// Test fixture: `b = c + λ x`, `σ ≡ s`.
#[derive(Debug, Clone, Copy)]
pub struct ConstDiffusion {
    pub drift_constant: f64,
    pub drift_linear: f64,
    pub sigma: f64,
    pub k: usize,
}

impl DelayCoefficients for ConstDiffusion {
    fn arity(&self) -> usize {
        self.k
    }

    fn flags(&self) -> ModelFlags {
        ModelFlags::default()
    }

    fn drift(&self, x: &[f64], _: &[MeasureView<'_>]) -> f64 {
        self.drift_constant + self.drift_linear * x[0]
    }

    fn diffusion(&self, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        self.sigma
    }

    fn drift_state_grad(&self, l: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        if l == 0 {
            self.drift_linear
        } else {
            0.0
        }
    }

    fn drift_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }

    fn diffusion_state_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        0.0
    }

    fn diffusion_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }
}

impl OnePointDelayModel for ConstDiffusion {
    fn drift(&self, x: f64, _: &MeasureView<'_>) -> f64 {
        self.drift_constant + self.drift_linear * x
    }

    fn diffusion(&self, _: f64, _: f64) -> f64 {
        self.sigma
    }

    fn diffusion_grad1(&self, _: f64, _: f64) -> f64 {
        0.0
    }

    fn diffusion_grad2(&self, _: f64, _: f64) -> f64 {
        0.0
    }

    fn drift_state_grad(&self, _: f64, _: &MeasureView<'_>) -> f64 {
        self.drift_linear
    }

    fn drift_measure_grad(&self, _: f64, _: &MeasureView<'_>, _: f64) -> f64 {
        0.0
    }
}

/// Test fixture: geometric Brownian motion `b = a x`, `σ = s x` in the current state.
#[derive(Debug, Clone, Copy)]
pub struct GbmLike {
    pub drift_rate: f64,
    pub volatility: f64,
    pub k: usize,
}

impl DelayCoefficients for GbmLike {
    fn arity(&self) -> usize {
        self.k
    }

    fn flags(&self) -> ModelFlags {
        ModelFlags {
            diffusion_uses_state_grad: true,
            ..ModelFlags::default()
        }
    }

    fn drift(&self, x: &[f64], _: &[MeasureView<'_>]) -> f64 {
        self.drift_rate * x[0]
    }

    fn diffusion(&self, x: &[f64], _: &[MeasureView<'_>]) -> f64 {
        self.volatility * x[0]
    }

    fn drift_state_grad(&self, l: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        if l == 0 {
            self.drift_rate
        } else {
            0.0
        }
    }

    fn drift_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }

    fn diffusion_state_grad(&self, l: usize, _: &[f64], _: &[MeasureView<'_>]) -> f64 {
        if l == 0 {
            self.volatility
        } else {
            0.0
        }
    }

    fn diffusion_measure_grad(&self, _: usize, _: &[f64], _: &[MeasureView<'_>], _: f64) -> f64 {
        0.0
    }
}

impl OnePointDelayModel for GbmLike {
    fn drift(&self, x: f64, _: &MeasureView<'_>) -> f64 {
        self.drift_rate * x
    }

    fn diffusion(&self, x: f64, _: f64) -> f64 {
        self.volatility * x
    }

    fn diffusion_grad1(&self, _: f64, _: f64) -> f64 {
        self.volatility
    }

    fn diffusion_grad2(&self, _: f64, _: f64) -> f64 {
        0.0
    }

    fn drift_state_grad(&self, _: f64, _: &MeasureView<'_>) -> f64 {
        self.drift_rate
    }

    fn drift_measure_grad(&self, _: f64, _: &MeasureView<'_>, _: f64) -> f64 {
        0.0
    }
}

/// Identifiers of the built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    Example1,
    Example2,
    AntitheticExample1,
    ConstDiffusion,
    GbmLike,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 5] = [
        BuiltinModel::Example1,
        BuiltinModel::Example2,
        BuiltinModel::AntitheticExample1,
        BuiltinModel::ConstDiffusion,
        BuiltinModel::GbmLike,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BuiltinModel::Example1 => "example1",
            BuiltinModel::Example2 => "example2",
            BuiltinModel::AntitheticExample1 => "antithetic-example1",
            BuiltinModel::ConstDiffusion => "const-diffusion",
            BuiltinModel::GbmLike => "gbm-like",
        }
    }

    /// Builds the model for `k` delay offsets with default fixture parameters
    /// (`const-diffusion`: `b ≡ 0, σ ≡ 1`; `gbm-like`: `b ≡ 0, σ(x) = x`).
    pub fn build(self, k: usize) -> Result<ModelHandle> {
        self.build_with(k, &FixtureParams::default())
    }

    /// Like [`BuiltinModel::build`] with explicit fixture parameters.
    pub fn build_with(self, k: usize, p: &FixtureParams) -> Result<ModelHandle> {
        if k == 0 || k > MAX_ARITY {
            return Err(config_err(format!("k must lie in 1..={MAX_ARITY}, got {k}")));
        }
        let id = self.id().to_string();
        Ok(match self {
            BuiltinModel::Example1 => ModelHandle::general(id, Arc::new(Example1 { k })),
            BuiltinModel::Example2 => ModelHandle::general(id, Arc::new(Example2 { k })),
            BuiltinModel::AntitheticExample1 => {
                if k != 2 {
                    return Err(config_err("antithetic-example1 needs exactly k = 2 offsets"));
                }
                ModelHandle::one_point(id, Arc::new(AntitheticExample1))
            }
            BuiltinModel::ConstDiffusion => {
                let m = ConstDiffusion {
                    drift_constant: p.drift_constant,
                    drift_linear: p.drift_linear,
                    sigma: p.sigma.unwrap_or(1.0),
                    k,
                };
                ModelHandle::both(id, Arc::new(m), Arc::new(m), k == 2)
            }
            BuiltinModel::GbmLike => {
                let m = GbmLike {
                    drift_rate: p.drift_linear,
                    volatility: p.sigma.unwrap_or(1.0),
                    k,
                };
                ModelHandle::both(id, Arc::new(m), Arc::new(m), k == 2)
            }
        })
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BuiltinModel::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Parameters of the `const-diffusion` and `gbm-like` fixtures.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FixtureParams {
    pub drift_constant: f64,
    pub drift_linear: f64,
    pub sigma: Option<f64>,
}

/// A model as seen by the steppers: always usable through the general
/// interface, and through the one-point interface when the shape allows it.
#[derive(Clone)]
pub struct ModelHandle {
    id: String,
    general: Arc<dyn DelayCoefficients>,
    one_point: Option<Arc<dyn OnePointDelayModel>>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("id", &self.id)
            .field("arity", &self.general.arity())
            .field("one_point", &self.one_point.is_some())
            .finish()
    }
}

impl ModelHandle {
    pub fn general(id: impl Into<String>, model: Arc<dyn DelayCoefficients>) -> Self {
        Self {
            id: id.into(),
            general: model,
            one_point: None,
        }
    }

    pub fn one_point(id: impl Into<String>, model: Arc<dyn OnePointDelayModel>) -> Self {
        Self {
            id: id.into(),
            general: Arc::new(OnePointAdapter(model.clone())),
            one_point: Some(model),
        }
    }

    fn both(
        id: String,
        general: Arc<dyn DelayCoefficients>,
        one_point: Arc<dyn OnePointDelayModel>,
        expose_one_point: bool,
    ) -> Self {
        Self {
            id,
            general,
            one_point: expose_one_point.then_some(one_point),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn coefficients(&self) -> &Arc<dyn DelayCoefficients> {
        &self.general
    }

    pub fn as_one_point(&self) -> Option<&Arc<dyn OnePointDelayModel>> {
        self.one_point.as_ref()
    }
}

/// Largest deviation found for one gradient family.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub component: usize,
    pub max_error: f64,
}

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientReport {
    pub checks: Vec<GradientCheck>,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.max_error <= tol)
    }
}

/// Error measure used by [`check_gradients`]: absolute below magnitude one, relative above.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let e = (analytic - numeric).abs() / numeric.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// Compares the supplied gradients against finite differences at one point.
///
/// State gradients use central differences with step `h`. The measure
/// gradient at atom `y_j` of `μ_l` is compared with
/// `N·[f(μ_l with y_j shifted by h) − f(μ_l)]/h`.
pub fn check_gradients(
    coeffs: &dyn DelayCoefficients,
    x: &[f64],
    measures: &[Vec<f64>],
    h: f64,
) -> GradientReport {
    let k = coeffs.arity();
    let mut report = GradientReport::default();
    let views: Vec<MeasureView<'_>> = measures.iter().map(|a| MeasureView::from_atoms(a)).collect();
    type Base = fn(&dyn DelayCoefficients, &[f64], &[MeasureView<'_>]) -> f64;
    let bases: [Base; 2] = [|c, x, m| c.drift(x, m), |c, x, m| c.diffusion(x, m)];
    for (fi, f) in bases.iter().enumerate() {
        for l in 0..k {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[l] += h;
            xm[l] -= h;
            let fd = (f(coeffs, &xp, &views) - f(coeffs, &xm, &views)) / (2.0 * h);
            let an = if fi == 0 {
                coeffs.drift_state_grad(l, x, &views)
            } else {
                coeffs.diffusion_state_grad(l, x, &views)
            };
            report.checks.push(GradientCheck {
                name: if fi == 0 { "drift_state_grad" } else { "diffusion_state_grad" },
                component: l,
                max_error: rel_err(an, fd),
            });
        }
        let base = f(coeffs, x, &views);
        for l in 0..k.min(measures.len()) {
            let n = measures[l].len();
            let mut worst: f64 = 0.0;
            for j in 0..n {
                let mut shifted = measures[l].clone();
                let y = shifted[j];
                shifted[j] += h;
                let mut v2 = views.clone();
                v2[l] = MeasureView::from_atoms(&shifted);
                let fd = n as f64 * (f(coeffs, x, &v2) - base) / h;
                let an = if fi == 0 {
                    coeffs.drift_measure_grad(l, x, &views, y)
                } else {
                    coeffs.diffusion_measure_grad(l, x, &views, y)
                };
                worst = worst.max(rel_err(an, fd));
            }
            report.checks.push(GradientCheck {
                name: if fi == 0 { "drift_measure_grad" } else { "diffusion_measure_grad" },
                component: l,
                max_error: worst,
            });
        }
    }
    report
}
