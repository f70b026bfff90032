//! Instances on which no consistency bound can hold without abstention.
//!
//! Every family here is equicontinuous: `|h(x') - h(x)| <= W_eff ‖x - x'‖_p`.
//! Placing two points at distance `ε / W_eff` therefore caps every achievable
//! margin at `ε`, so the surrogate cannot tell the null scorer from the best
//! one while the target loss still separates them completely.

use crate::distribution::{BipartiteDistribution, Distribution, GeneralDistribution, Setting};
use crate::hypothesis::{Hypothesis, HypothesisClass};
use crate::losses::{AbstentionConfig, PhiSpec};
use crate::report::fmt_g9;
use crate::risk::{atoms, expected_min_conditional_risk, expected_risk, LossSelector};

use super::BoundError;

/// Builds the two-point instance and the null hypothesis.
///
/// General: a single pair `(0, x')` whose label is always `-1`. Bipartite:
/// points `0` (always positive) and `x'` (always negative) with all pair mass on
/// the ordered pair `(0, x')`. In both cases `‖x'‖_p = ε / W_eff`.
pub fn negative_construct(
    setting: Setting,
    epsilon: f64,
    class: &HypothesisClass,
) -> Result<(Distribution, Hypothesis), BoundError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(BoundError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let radius = epsilon / class.w_eff();
    if radius > 1.0 {
        return Err(BoundError::Domain(format!(
            "epsilon {epsilon} needs a point at norm {radius} > 1 for W_eff = {}",
            class.w_eff()
        )));
    }
    if class.dim == 0 {
        return Err(BoundError::Config("input dimension must be at least 1".into()));
    }
    let p = class.constraints.p();
    let x0 = vec![0.0; class.dim];
    let mut xp = vec![0.0; class.dim];
    xp[0] = radius;
    let dist: Distribution = match setting {
        Setting::General => GeneralDistribution::new(vec![(x0, xp)], vec![1.0], vec![0.0], p)?.into(),
        Setting::Bipartite => BipartiteDistribution::new(vec![x0, xp], vec![0.5, 0.5], vec![1.0, 0.0], p)?
            .with_pair_law(vec![(0, 1, 1.0)])?
            .into(),
    };
    Ok((dist, class.null()))
}

/// One row of the negative-result table.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeRow {
    pub setting: Setting,
    pub phi: PhiSpec,
    pub epsilon: f64,
    /// `R(h0) - R*(H)` for the misranking loss.
    pub target_excess: f64,
    /// `R_Φ(h0) - R*_Φ(H)`.
    pub surrogate_excess: f64,
    /// `Φ(0) - Φ(ε)`.
    pub surrogate_excess_bound: f64,
    /// Abstention loss excess of `h0` with `γ = 2ε / W_eff`.
    pub abstention_remedy_excess: f64,
}

impl NegativeRow {
    pub const CSV_HEADER: [&'static str; 6] =
        ["setting", "phi", "epsilon", "target_excess", "surrogate_excess_bound", "abstention_remedy_excess"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.setting.to_string(),
            self.phi.to_string(),
            fmt_g9(self.epsilon),
            fmt_g9(self.target_excess),
            fmt_g9(self.surrogate_excess_bound),
            fmt_g9(self.abstention_remedy_excess),
        ]
    }
}

/// Excess risk of `h` on a single-pair instance, where the best-in-class risk
/// equals the closed-form conditional minimum.
fn single_atom_excess(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    dist: &Distribution,
    h: &Hypothesis,
    w_eff: f64,
) -> Result<f64, BoundError> {
    let flat = atoms(dist);
    debug_assert_eq!(flat.len(), 1);
    let inf = expected_min_conditional_risk(loss, cfg, &flat, w_eff)?;
    Ok(expected_risk(loss, cfg, h, dist)? - inf)
}

/// Target and surrogate excess of the null hypothesis for each `ε`, plus the
/// abstention remedy that makes the target excess vanish.
pub fn negative_report(
    setting: Setting,
    epsilons: &[f64],
    phi: PhiSpec,
    class: &HypothesisClass,
    remedy_cost: f64,
) -> Result<Vec<NegativeRow>, BoundError> {
    let p = class.constraints.p();
    let w_eff = class.w_eff();
    epsilons
        .iter()
        .map(|&epsilon| {
            let (dist, h0) = negative_construct(setting, epsilon, class)?;
            let none = AbstentionConfig::none(p);
            let target_excess = single_atom_excess(&LossSelector::Misranking, &none, &dist, &h0, w_eff)?;
            let surrogate_excess = single_atom_excess(&LossSelector::Surrogate(phi), &none, &dist, &h0, w_eff)?;
            let remedy = AbstentionConfig::new(2.0 * epsilon / w_eff, remedy_cost, p)?;
            let abstention_remedy_excess = single_atom_excess(&LossSelector::Target, &remedy, &dist, &h0, w_eff)?;
            Ok(NegativeRow {
                setting,
                phi,
                epsilon,
                target_excess,
                surrogate_excess,
                surrogate_excess_bound: phi.eval(0.0)? - phi.eval(epsilon)?,
                abstention_remedy_excess,
            })
        })
        .collect()
}
