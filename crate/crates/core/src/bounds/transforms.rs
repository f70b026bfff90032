//! The Γ and Ψ transforms linking surrogate and target calibration gaps.
//!
//! Every transform depends on the family only through `W_eff·γ`, the largest
//! margin a hypothesis can put on a pair that sits just outside the
//! abstention radius.

use std::fmt;
use std::str::FromStr;

use crate::distribution::Setting;
use crate::losses::{PhiKind, PhiSpec};

use super::BoundError;

/// Which coefficient the bipartite exponential Γ uses.
///
/// The theorem statement multiplies the linear branch by `coth(W_eff γ)`,
/// while inverting the bipartite Ψ yields `tanh(W_eff γ)`. Since
/// `tanh <= 1 <= coth`, the statement is the looser of the two. Only the
/// bipartite exponential case differs between variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GammaVariant {
    #[default]
    TheoremStatement,
    AppendixDerivation,
}

impl GammaVariant {
    pub const ALL: [GammaVariant; 2] = [GammaVariant::TheoremStatement, GammaVariant::AppendixDerivation];

    pub fn name(self) -> &'static str {
        match self {
            GammaVariant::TheoremStatement => "theorem",
            GammaVariant::AppendixDerivation => "appendix",
        }
    }
}

impl fmt::Display for GammaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GammaVariant {
    type Err = BoundError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "theorem" | "theorem-statement" | "theorem_statement" => Ok(GammaVariant::TheoremStatement),
            "appendix" | "appendix-derivation" | "appendix_derivation" => Ok(GammaVariant::AppendixDerivation),
            other => Err(BoundError::Config(format!("unknown gamma variant `{other}`"))),
        }
    }
}

fn check_scale(kind: PhiKind, w_eff: f64, gamma: f64) -> Result<f64, BoundError> {
    if !(w_eff.is_finite() && w_eff > 0.0) {
        return Err(BoundError::Domain(format!("W_eff must be positive, got {w_eff}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(BoundError::Domain(format!("gamma must be non-negative, got {gamma}")));
    }
    if gamma == 0.0 {
        return Err(BoundError::Degenerate(format!(
            "the {kind} transform is unbounded at gamma = 0: without abstention an equicontinuous family \
             admits no non-trivial consistency bound"
        )));
    }
    Ok(w_eff * gamma)
}

fn check_t(t: f64) -> Result<(), BoundError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(BoundError::Domain(format!("transform argument must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// `Γ_Φ(t)`, the bound on the target excess given a surrogate excess `t`.
pub fn gamma_transform(
    phi: &PhiSpec,
    setting: Setting,
    t: f64,
    w_eff: f64,
    gamma: f64,
    variant: GammaVariant,
) -> Result<f64, BoundError> {
    check_t(t)?;
    let s = check_scale(phi.kind(), w_eff, gamma)?;
    let value = match phi.kind() {
        PhiKind::Hinge => t / s.min(1.0),
        PhiKind::Sigmoid => t / (phi.k() * s).tanh(),
        PhiKind::Exponential => {
            let coth = 1.0 / s.tanh();
            match (setting, variant) {
                (Setting::General, _) => (2.0 * t).sqrt().max(2.0 * coth * t),
                (Setting::Bipartite, GammaVariant::TheoremStatement) => t.sqrt().max(coth * t),
                (Setting::Bipartite, GammaVariant::AppendixDerivation) => t.sqrt().max(s.tanh() * t),
            }
        }
    };
    Ok(value)
}

/// Exact `Ψ_exp` lower bound on the exponential surrogate gap.
///
/// General: `1 - sqrt(1 - t²)` up to `t = tanh(W_eff γ)`, then the tangent
/// expression `1 - ((1 + t)/2) e^{-W_eff γ} - ((1 - t)/2) e^{W_eff γ}`; the two
/// branches meet with matching slopes. Bipartite: `min{t², coth(W_eff γ) t}`.
pub fn psi_exp(setting: Setting, t: f64, w_eff: f64, gamma: f64) -> Result<f64, BoundError> {
    check_t(t)?;
    let s = check_scale(PhiKind::Exponential, w_eff, gamma)?;
    match setting {
        Setting::General => {
            if t > 1.0 {
                return Err(BoundError::Domain(format!("general Ψ_exp is defined on [0, 1], got {t}")));
            }
            if t <= s.tanh() {
                Ok(1.0 - (1.0 - t * t).sqrt())
            } else {
                Ok(1.0 - 0.5 * (1.0 + t) * (-s).exp() - 0.5 * (1.0 - t) * s.exp())
            }
        }
        Setting::Bipartite => {
            if t > 2.0 {
                return Err(BoundError::Domain(format!("bipartite Ψ_exp is defined on [0, 2], got {t}")));
            }
            Ok((t * t).min(t / s.tanh()))
        }
    }
}

/// The relaxed general `Ψ̃_exp`: `t²/2` up to `tanh(W_eff γ)`, then `tanh(W_eff γ) t / 2`.
/// It lies below [`psi_exp`] and is inverted by the general exponential Γ.
pub fn psi_exp_relaxed(t: f64, w_eff: f64, gamma: f64) -> Result<f64, BoundError> {
    check_t(t)?;
    if t > 1.0 {
        return Err(BoundError::Domain(format!("relaxed Ψ_exp is defined on [0, 1], got {t}")));
    }
    let th = check_scale(PhiKind::Exponential, w_eff, gamma)?.tanh();
    Ok(if t <= th { 0.5 * t * t } else { 0.5 * th * t })
}

/// The convex Ψ matching each Γ: linear for hinge and sigmoid, [`psi_exp`] for exponential.
pub fn psi_transform(phi: &PhiSpec, setting: Setting, t: f64, w_eff: f64, gamma: f64) -> Result<f64, BoundError> {
    check_t(t)?;
    let s = check_scale(phi.kind(), w_eff, gamma)?;
    match phi.kind() {
        PhiKind::Hinge => Ok(s.min(1.0) * t),
        PhiKind::Sigmoid => Ok((phi.k() * s).tanh() * t),
        PhiKind::Exponential => psi_exp(setting, t.min(if setting == Setting::General { 1.0 } else { 2.0 }), w_eff, gamma),
    }
}
