//! Numerical verification of consistency bounds on finite distributions.

use crate::distribution::{Distribution, Setting};
use crate::hypothesis::{Hypothesis, HypothesisClass};
use crate::losses::{AbstentionConfig, PhiSpec};
use crate::numeric::pairwise_sum;
use crate::report::fmt_g9;
use crate::risk::{
    atoms, best_in_class_over_atoms, calibration_gap, expected_min_conditional_risk, expected_risk_at_margins,
    margins, LossSelector, RStarEstimate, RStarMethod, WeightedAtom,
};

use super::transforms::{gamma_transform, GammaVariant};
use super::BoundError;

/// Default absolute tolerance added to the recorded estimation slack.
pub const DEFAULT_BASE_TOLERANCE: f64 = 1e-6;

/// Both sides of one bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub setting: Setting,
    pub phi: PhiSpec,
    pub variant: GammaVariant,
    pub gamma: f64,
    pub cost: f64,
    pub w_eff: f64,
    /// Target excess risk plus target minimizability gap.
    pub lhs: f64,
    /// Surrogate excess risk plus surrogate minimizability gap, the argument of Γ.
    pub surrogate_excess_plus_gap: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub tolerance: f64,
    pub holds: bool,
    pub target_minimizability_gap: f64,
    pub surrogate_minimizability_gap: f64,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 10] =
        ["setting", "phi", "variant", "gamma", "cost", "W_eff", "lhs", "rhs", "slack", "holds"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.setting.to_string(),
            self.phi.to_string(),
            self.variant.to_string(),
            fmt_g9(self.gamma),
            fmt_g9(self.cost),
            fmt_g9(self.w_eff),
            fmt_g9(self.lhs),
            fmt_g9(self.rhs),
            fmt_g9(self.slack),
            self.holds.to_string(),
        ]
    }
}

/// Precomputed best-in-class quantities for one `(distribution, Φ, γ, c, H)`,
/// reused across many hypotheses.
#[derive(Debug, Clone)]
pub struct BoundVerifier {
    setting: Setting,
    phi: PhiSpec,
    cfg: AbstentionConfig,
    class: HypothesisClass,
    atoms: Vec<WeightedAtom>,
    rstar_target: RStarEstimate,
    rstar_surrogate: RStarEstimate,
    inner_target: f64,
    inner_surrogate: f64,
    base_tolerance: f64,
    gamma_scale: f64,
}

impl BoundVerifier {
    pub fn new(
        dist: &Distribution,
        phi: PhiSpec,
        cfg: AbstentionConfig,
        class: HypothesisClass,
        method: RStarMethod,
    ) -> Result<Self, BoundError> {
        let flat = atoms(dist);
        let rstar_surrogate = best_in_class_over_atoms(&LossSelector::Surrogate(phi), &cfg, &flat, &class, method)?;
        Self::with_surrogate_rstar(dist, phi, cfg, class, method, rstar_surrogate)
    }

    /// Like [`BoundVerifier::new`] with a surrogate `R*` computed elsewhere on the
    /// same distribution. The surrogate does not depend on `(γ, c)`, so campaigns share it.
    pub fn with_surrogate_rstar(
        dist: &Distribution,
        phi: PhiSpec,
        cfg: AbstentionConfig,
        class: HypothesisClass,
        method: RStarMethod,
        rstar_surrogate: RStarEstimate,
    ) -> Result<Self, BoundError> {
        if cfg.p() != dist.p() || class.constraints.p() != dist.p() {
            return Err(BoundError::Config(format!(
                "norms disagree: abstention l{}, inputs l{}, weights l{}",
                cfg.p(),
                dist.p(),
                class.constraints.q()
            )));
        }
        // Surface the γ = 0 degeneracy before any work is done.
        gamma_transform(&phi, dist.setting(), 0.0, class.w_eff(), cfg.gamma(), GammaVariant::default())?;
        let flat = atoms(dist);
        let rstar_target = best_in_class_over_atoms(&LossSelector::Target, &cfg, &flat, &class, method)?;
        let inner_target = expected_min_conditional_risk(&LossSelector::Target, &cfg, &flat, class.w_eff())?;
        let inner_surrogate =
            expected_min_conditional_risk(&LossSelector::Surrogate(phi), &cfg, &flat, class.w_eff())?;
        Ok(BoundVerifier {
            setting: dist.setting(),
            phi,
            cfg,
            class,
            atoms: flat,
            rstar_target,
            rstar_surrogate,
            inner_target,
            inner_surrogate,
            base_tolerance: DEFAULT_BASE_TOLERANCE,
            gamma_scale: 1.0,
        })
    }

    pub fn with_base_tolerance(mut self, tol: f64) -> Self {
        self.base_tolerance = tol;
        self
    }

    /// Test hook: multiplies every Γ value so that a deliberately wrong
    /// transform can be shown to be caught.
    #[doc(hidden)]
    pub fn with_gamma_scale(mut self, scale: f64) -> Self {
        self.gamma_scale = scale;
        self
    }

    pub fn target_minimizability_gap(&self) -> f64 {
        self.rstar_target.value - self.inner_target
    }

    pub fn surrogate_minimizability_gap(&self) -> f64 {
        self.rstar_surrogate.value - self.inner_surrogate
    }

    pub fn rstar_target(&self) -> &RStarEstimate {
        &self.rstar_target
    }

    pub fn rstar_surrogate(&self) -> &RStarEstimate {
        &self.rstar_surrogate
    }

    pub fn atoms(&self) -> &[WeightedAtom] {
        &self.atoms
    }

    pub fn tolerance(&self) -> f64 {
        self.base_tolerance + self.rstar_target.slack + self.rstar_surrogate.slack
    }

    /// Per-atom calibration gaps and the aggregate excesses for `h`.
    pub fn gap_profile(&self, h: &Hypothesis) -> Result<GapProfile, BoundError> {
        let ms = margins(h, &self.atoms)?;
        let target = LossSelector::Target;
        let surrogate = LossSelector::Surrogate(self.phi);
        let w_eff = self.class.w_eff();
        let gaps = |loss: &LossSelector| -> Result<Vec<f64>, BoundError> {
            self.atoms
                .iter()
                .zip(&ms)
                .map(|(a, &m)| Ok(calibration_gap(loss, &self.cfg, &a.atom, m, w_eff)?))
                .collect()
        };
        let risk_t = expected_risk_at_margins(&target, &self.cfg, &self.atoms, &ms)?;
        let risk_s = expected_risk_at_margins(&surrogate, &self.cfg, &self.atoms, &ms)?;
        Ok(GapProfile {
            weights: self.atoms.iter().map(|a| a.weight).collect(),
            target_gaps: gaps(&target)?,
            surrogate_gaps: gaps(&surrogate)?,
            target_excess: risk_t - self.rstar_target.value,
            target_minimizability_gap: self.target_minimizability_gap(),
            surrogate_excess: risk_s - self.rstar_surrogate.value,
            surrogate_minimizability_gap: self.surrogate_minimizability_gap(),
        })
    }

    pub fn verify(&self, h: &Hypothesis, variant: GammaVariant) -> Result<BoundReport, BoundError> {
        let profile = self.gap_profile(h)?;
        let lhs = profile.target_excess + profile.target_minimizability_gap;
        let arg = profile.surrogate_excess + profile.surrogate_minimizability_gap;
        // Both sides are non-negative in exact arithmetic; clip round-off before Γ.
        let rhs = self.gamma_scale
            * gamma_transform(&self.phi, self.setting, arg.max(0.0), self.class.w_eff(), self.cfg.gamma(), variant)?;
        let slack = rhs - lhs;
        let tolerance = self.tolerance();
        Ok(BoundReport {
            setting: self.setting,
            phi: self.phi,
            variant,
            gamma: self.cfg.gamma(),
            cost: self.cfg.cost(),
            w_eff: self.class.w_eff(),
            lhs,
            surrogate_excess_plus_gap: arg,
            rhs,
            slack,
            tolerance,
            holds: slack >= -tolerance,
            target_minimizability_gap: profile.target_minimizability_gap,
            surrogate_minimizability_gap: profile.surrogate_minimizability_gap,
        })
    }
}

/// Checks one instance of the bound for a single hypothesis, computing `R*` from scratch.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem_bound(
    h: &Hypothesis,
    dist: &Distribution,
    phi: PhiSpec,
    cfg: AbstentionConfig,
    class: HypothesisClass,
    variant: GammaVariant,
    method: RStarMethod,
) -> Result<BoundReport, BoundError> {
    BoundVerifier::new(dist, phi, cfg, class, method)?.verify(h, variant)
}

/// Per-atom calibration gaps of a target loss `L2` and a surrogate `L1` for one
/// hypothesis, together with the aggregate excess risks and minimizability gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub weights: Vec<f64>,
    pub target_gaps: Vec<f64>,
    pub surrogate_gaps: Vec<f64>,
    /// `R_{L2}(h) - R*_{L2}(H)`.
    pub target_excess: f64,
    pub target_minimizability_gap: f64,
    /// `R_{L1}(h) - R*_{L1}(H)`.
    pub surrogate_excess: f64,
    pub surrogate_minimizability_gap: f64,
}

/// Outcome of a generic transfer check.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub holds: bool,
    /// Atoms where the truncated pointwise condition fails.
    pub pointwise_violations: usize,
}

fn truncate(t: f64, epsilon: f64) -> f64 {
    if t > epsilon {
        t
    } else {
        0.0
    }
}

fn shape_grid(upper: f64) -> Vec<f64> {
    let n = 1000;
    (0..=n).map(|i| upper * i as f64 / n as f64).collect()
}

fn check_non_decreasing<F: Fn(f64) -> f64>(f: &F, grid: &[f64], what: &str) -> Result<(), BoundError> {
    for w in grid.windows(2) {
        let (a, b) = (f(w[0]), f(w[1]));
        if b < a - 1e-12 * a.abs().max(1.0) {
            return Err(BoundError::Config(format!("{what} decreases between {} and {}", w[0], w[1])));
        }
    }
    Ok(())
}

fn check_midpoint<F: Fn(f64) -> f64>(f: &F, grid: &[f64], concave: bool, what: &str) -> Result<(), BoundError> {
    for w in grid.windows(3) {
        let (a, m, b) = (f(w[0]), f(w[1]), f(w[2]));
        let chord = 0.5 * (a + b);
        let tol = 1e-12 * chord.abs().max(1.0);
        let bad = if concave { m < chord - tol } else { m > chord + tol };
        if bad {
            let shape = if concave { "concave" } else { "convex" };
            return Err(BoundError::Config(format!("{what} is not {shape} near {}", w[1])));
        }
    }
    Ok(())
}

/// Transfer through a non-decreasing concave `Γ`: if
/// `⟨ΔC_{L2}⟩_ε <= Γ(⟨ΔC_{L1}⟩_ε)` on every atom, then
/// `R_{L2}(h) - R*_{L2} <= Γ(R_{L1}(h) - R*_{L1} + M_{L1}) - M_{L2} + ε`.
///
/// The shape of `Γ` is checked on a grid over `[0, range]` first.
pub fn generic_gamma_transfer<G: Fn(f64) -> f64>(
    profile: &GapProfile,
    gamma: G,
    epsilon: f64,
    range: f64,
    tolerance: f64,
) -> Result<TransferReport, BoundError> {
    if !(epsilon >= 0.0) {
        return Err(BoundError::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let grid = shape_grid(range);
    check_non_decreasing(&gamma, &grid, "Γ")?;
    check_midpoint(&gamma, &grid, true, "Γ")?;
    let pointwise_violations = profile
        .target_gaps
        .iter()
        .zip(&profile.surrogate_gaps)
        .filter(|(t, s)| truncate(**t, epsilon) > gamma(truncate(s.max(0.0), epsilon)) + tolerance)
        .count();
    let lhs = profile.target_excess;
    let arg = (profile.surrogate_excess + profile.surrogate_minimizability_gap).max(0.0);
    let rhs = gamma(arg) - profile.target_minimizability_gap + epsilon;
    let slack = rhs - lhs;
    Ok(TransferReport { lhs, rhs, slack, tolerance, holds: slack >= -tolerance, pointwise_violations })
}

/// Transfer through a convex `Ψ` with `Ψ(0) >= 0`: if
/// `Ψ(⟨ΔC_{L2}⟩_ε) <= ⟨ΔC_{L1}⟩_ε` on every atom, then
/// `Ψ(R_{L2}(h) - R*_{L2} + M_{L2}) <= R_{L1}(h) - R*_{L1} + M_{L1} + max{Ψ(0), Ψ(ε)}`.
pub fn generic_psi_transfer<P: Fn(f64) -> f64>(
    profile: &GapProfile,
    psi: P,
    epsilon: f64,
    range: f64,
    tolerance: f64,
) -> Result<TransferReport, BoundError> {
    if !(epsilon >= 0.0) {
        return Err(BoundError::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if psi(0.0) < 0.0 {
        return Err(BoundError::Config("Ψ(0) must be non-negative".into()));
    }
    check_midpoint(&psi, &shape_grid(range), false, "Ψ")?;
    let pointwise_violations = profile
        .target_gaps
        .iter()
        .zip(&profile.surrogate_gaps)
        .filter(|(t, s)| psi(truncate(t.max(0.0), epsilon)) > truncate(**s, epsilon) + tolerance)
        .count();
    let lhs = psi((profile.target_excess + profile.target_minimizability_gap).max(0.0));
    let rhs = profile.surrogate_excess + profile.surrogate_minimizability_gap + psi(0.0).max(psi(epsilon));
    let slack = rhs - lhs;
    Ok(TransferReport { lhs, rhs, slack, tolerance, holds: slack >= -tolerance, pointwise_violations })
}

impl GapProfile {
    /// `E[ΔC_{L2}]`, which equals the target excess plus its minimizability gap.
    pub fn mean_target_gap(&self) -> f64 {
        let terms: Vec<f64> = self.weights.iter().zip(&self.target_gaps).map(|(w, g)| w * g).collect();
        pairwise_sum(&terms)
    }

    pub fn mean_surrogate_gap(&self) -> f64 {
        let terms: Vec<f64> = self.weights.iter().zip(&self.surrogate_gaps).map(|(w, g)| w * g).collect();
        pairwise_sum(&terms)
    }
}
