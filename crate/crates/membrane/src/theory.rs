//! Closed-form constants and predicted exponents: the analytic side of
//! every comparison the experiments run.
//!
//! The membrane constant is `g = 8/π²`; thresholds scale as
//! `sqrt(2 d g) · level · log N`, which in the critical dimension `d = 4`
//! is the familiar `2 sqrt(2g) · level · log N`. The 2-d DGFF analogues
//! (`g = 2/π`, dimension `2(1−η²)`) are external literature values used
//! only to calibrate the estimator pipeline and are flagged as such.

use crate::operators::Model;

/// Provenance of a predicted value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Closed form carried by the membrane results themselves.
    Theorem,
    /// External literature value (DGFF comparison model).
    External,
}

/// A named prediction with its parameters pinned.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Prediction {
    pub name: &'static str,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub value: f64,
    pub provenance: Provenance,
}

/// `g = 8/π²`, the variance growth constant of the 4-d membrane model.
pub fn g_const() -> f64 {
    8.0 / (std::f64::consts::PI * std::f64::consts::PI)
}

/// Variance growth constant per model: `8/π²` for the membrane (d = 4),
/// `2/π` for the 2-d DGFF (external literature value).
pub fn g_for(model: Model) -> f64 {
    match model {
        Model::Membrane => g_const(),
        Model::Dgff => 2.0 / std::f64::consts::PI,
    }
}

/// First-order growth rate of the maximum: `sqrt(2 d g)`, which for the
/// membrane at `d = 4` equals `2 sqrt(2g) = 8/π ≈ 2.5465`.
pub fn max_rate_for(model: Model, d: usize) -> f64 {
    (2.0 * d as f64 * g_for(model)).sqrt()
}

/// `2 sqrt(2g)` for the membrane in its critical dimension.
pub fn max_rate() -> f64 {
    max_rate_for(Model::Membrane, 4)
}

/// Fractal dimension of the η-high points of the 4-d membrane: `4(1−η²)`.
pub fn high_point_dim(eta: f64) -> f64 {
    4.0 * (1.0 - eta * eta)
}

/// 2-d DGFF analogue `2(1−η²)`; external calibration target.
pub fn dgff_high_point_dim(eta: f64) -> f64 {
    2.0 * (1.0 - eta * eta)
}

/// Cluster exponent around a fixed center: `4β(1−(α/β)²)` for `0<α<β<1`.
pub fn cluster_dim(alpha: f64, beta: f64) -> f64 {
    4.0 * beta * (1.0 - (alpha / beta) * (alpha / beta))
}

/// Cluster exponent conditioned on the center being high: `4β(1−α²)`.
pub fn cluster_dim_conditional(alpha: f64, beta: f64) -> f64 {
    4.0 * beta * (1.0 - alpha * alpha)
}

/// `F_{h,β}(γ) = γ²(1−β) + h(1−γ(1−β))²/β`.
pub fn f_hb(h: f64, beta: f64, gamma: f64) -> f64 {
    let t = 1.0 - gamma * (1.0 - beta);
    gamma * gamma * (1.0 - beta) + h * t * t / beta
}

/// Fixed point `γ⋆ = 2/(2−β)`, the unconstrained minimizer of `F_{2,β}`.
pub fn gamma_star(beta: f64) -> f64 {
    2.0 / (2.0 - beta)
}

/// Right endpoint `γ₊ = 1/α` of the admissible interval `Γ_{α,β} = [0, 1/α]`.
pub fn gamma_plus(alpha: f64) -> f64 {
    1.0 / alpha
}

/// Detailed evaluation of the pair exponent `ρ(α,β)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RhoDetail {
    /// Minimizer of `F_{2,β}` over `[0, 1/α]`: `min{γ⋆, 1/α}`.
    pub gamma_min: f64,
    /// The attained infimum `F_{2,β}(γ_min)`.
    pub f_min: f64,
    /// `F_{2,β}(1)`, the value behind the lower bound `4(1−α²)(1+β)`.
    pub f_at_one: f64,
    pub rho: f64,
}

/// Pair-of-high-points exponent
/// `ρ(α,β) = 4 + 4β − 4α² inf_{γ ∈ [0,1/α]} F_{2,β}(γ)`.
///
/// `F_{2,β}` is a parabola in `γ` with vertex at `γ⋆ = 2/(2−β)`, so the
/// constrained infimum sits at `min{γ⋆, 1/α}`. Both `F_{2,β}(1)` and the
/// true infimum are reported, since they differ whenever `γ⋆ ≠ 1`.
pub fn rho_detail(alpha: f64, beta: f64) -> RhoDetail {
    let gamma_min = gamma_star(beta).min(gamma_plus(alpha));
    let f_min = f_hb(2.0, beta, gamma_min);
    let f_at_one = f_hb(2.0, beta, 1.0);
    RhoDetail {
        gamma_min,
        f_min,
        f_at_one,
        rho: 4.0 + 4.0 * beta - 4.0 * alpha * alpha * f_min,
    }
}

/// The pair exponent itself.
pub fn rho(alpha: f64, beta: f64) -> f64 {
    rho_detail(alpha, beta).rho
}

/// Exponent of the biggest high square: `(1−η)/2` for `−1 < η < 1`.
pub fn square_exp(eta: f64) -> f64 {
    (1.0 - eta) / 2.0
}

/// Height threshold defining level-`level` high points at box parameter `N`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LevelThreshold {
    pub level: f64,
    pub n: u32,
    /// `sqrt(2 d g)` for the model and dimension in force.
    pub rate: f64,
    /// `rate · level · log N` (natural log).
    pub value: f64,
}

impl LevelThreshold {
    pub fn new(model: Model, d: usize, level: f64, n: u32) -> Self {
        let rate = max_rate_for(model, d);
        Self {
            level,
            n,
            rate,
            value: rate * level * (n as f64).ln(),
        }
    }
}

/// Bundle of the named predictions at given parameters, mostly for reports.
pub fn predictions(eta: f64, alpha: f64, beta: f64) -> Vec<Prediction> {
    vec![
        Prediction {
            name: "high_point_dim",
            eta: Some(eta),
            alpha: None,
            beta: None,
            value: high_point_dim(eta),
            provenance: Provenance::Theorem,
        },
        Prediction {
            name: "cluster_dim_conditional",
            eta: None,
            alpha: Some(alpha),
            beta: Some(beta),
            value: cluster_dim_conditional(alpha, beta),
            provenance: Provenance::Theorem,
        },
        Prediction {
            name: "pair_exponent",
            eta: None,
            alpha: Some(alpha),
            beta: Some(beta),
            value: rho(alpha, beta),
            provenance: Provenance::Theorem,
        },
        Prediction {
            name: "square_exponent",
            eta: Some(eta),
            alpha: None,
            beta: None,
            value: square_exp(eta),
            provenance: Provenance::Theorem,
        },
        Prediction {
            name: "dgff_high_point_dim",
            eta: Some(eta),
            alpha: None,
            beta: None,
            value: dgff_high_point_dim(eta),
            provenance: Provenance::External,
        },
    ]
}
