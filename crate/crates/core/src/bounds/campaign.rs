//! Randomized verification campaigns over distributions and hypotheses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distribution::{BipartiteDistribution, Distribution, GeneralDistribution, Setting};
use crate::hypothesis::{random_point_in_unit_ball, HypothesisClass};
use crate::losses::{AbstentionConfig, PNorm, PhiSpec};
use crate::risk::{best_in_class_over_atoms, atoms, LossSelector, RStarMethod};

use super::transforms::GammaVariant;
use super::verify::{BoundReport, BoundVerifier, DEFAULT_BASE_TOLERANCE};
use super::BoundError;

fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // Strictly positive so every atom carries mass.
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// `n` pairs of independent uniform points of the unit ball with uniform `η`.
pub fn random_general_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize, p: PNorm) -> GeneralDistribution {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|_| (random_point_in_unit_ball(rng, dim, p), random_point_in_unit_ball(rng, dim, p)))
        .collect();
    let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let weights = random_weights(rng, n);
    GeneralDistribution::normalized(pairs, weights, eta, p).expect("generated support is valid by construction")
}

/// `n` uniform points of the unit ball with uniform `η`, paired by the product law.
pub fn random_bipartite_distribution<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    dim: usize,
    p: PNorm,
) -> BipartiteDistribution {
    let points: Vec<Vec<f64>> = (0..n).map(|_| random_point_in_unit_ball(rng, dim, p)).collect();
    let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let weights = random_weights(rng, n);
    BipartiteDistribution::normalized(points, weights, eta, p).expect("generated support is valid by construction")
}

/// A random distribution of the requested setting with between 1 and `max_atoms` atoms.
pub fn random_distribution<R: Rng + ?Sized>(
    rng: &mut R,
    setting: Setting,
    max_atoms: usize,
    dim: usize,
    p: PNorm,
) -> Distribution {
    let n = rng.gen_range(1..=max_atoms.max(1));
    match setting {
        Setting::General => random_general_distribution(rng, n, dim, p).into(),
        Setting::Bipartite => random_bipartite_distribution(rng, n, dim, p).into(),
    }
}

/// Grid of checks: distributions × hypotheses × Φ × γ × c × Γ variants.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub setting: Setting,
    pub class: HypothesisClass,
    pub n_distributions: usize,
    pub max_atoms: usize,
    pub n_hypotheses: usize,
    pub phis: Vec<PhiSpec>,
    pub gammas: Vec<f64>,
    pub costs: Vec<f64>,
    pub variants: Vec<GammaVariant>,
    pub method: RStarMethod,
    pub seed: u64,
    pub base_tolerance: f64,
    #[doc(hidden)]
    pub gamma_scale: f64,
}

impl CampaignSpec {
    /// 20 distributions × 50 hypotheses × all Φ × γ ∈ {0.2, 0.5} × c ∈ {0.1, 0.5}.
    pub fn standard(setting: Setting, class: HypothesisClass) -> Self {
        CampaignSpec {
            setting,
            class,
            n_distributions: 20,
            max_atoms: match setting {
                Setting::General => 10,
                Setting::Bipartite => 6,
            },
            n_hypotheses: 50,
            phis: vec![PhiSpec::hinge(), PhiSpec::exponential(), PhiSpec::sigmoid(PhiSpec::DEFAULT_SIGMOID_SLOPE).unwrap()],
            gammas: vec![0.2, 0.5],
            costs: vec![0.1, 0.5],
            variants: match setting {
                Setting::General => vec![GammaVariant::TheoremStatement],
                Setting::Bipartite => GammaVariant::ALL.to_vec(),
            },
            method: RStarMethod::default_for(&class),
            seed: 0,
            base_tolerance: DEFAULT_BASE_TOLERANCE,
            gamma_scale: 1.0,
        }
    }

    pub fn n_checks(&self) -> usize {
        self.n_distributions * self.n_hypotheses * self.phis.len() * self.gammas.len() * self.costs.len() * self.variants.len()
    }
}

/// One verified check together with the smallest calibration gap seen on it.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub distribution: usize,
    pub hypothesis: usize,
    pub report: BoundReport,
    pub min_target_calibration_gap: f64,
    pub min_surrogate_calibration_gap: f64,
    /// Atoms where `ΔC_target > Γ(ΔC_surrogate)` beyond `1e-8`.
    pub pointwise_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub rows: Vec<CampaignRow>,
}

impl CampaignResult {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.report.holds)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CampaignRow> {
        self.rows.iter().filter(|r| !r.report.holds)
    }

    pub fn min_minimizability_gap(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.report.target_minimizability_gap, r.report.surrogate_minimizability_gap])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_calibration_gap(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.min_target_calibration_gap, r.min_surrogate_calibration_gap])
            .fold(f64::INFINITY, f64::min)
    }
}

fn run_distribution(spec: &CampaignSpec, index: usize) -> Result<Vec<CampaignRow>, BoundError> {
    let p = spec.class.constraints.p();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64));
    let dist = random_distribution(&mut rng, spec.setting, spec.max_atoms, spec.class.dim, p);
    let hyps: Vec<_> = (0..spec.n_hypotheses).map(|_| spec.class.random(&mut rng)).collect();
    let flat = atoms(&dist);
    let mut rows = Vec::new();
    for phi in &spec.phis {
        let none = AbstentionConfig::none(p);
        let rstar_surrogate =
            best_in_class_over_atoms(&LossSelector::Surrogate(*phi), &none, &flat, &spec.class, spec.method)?;
        for &gamma in &spec.gammas {
            for &cost in &spec.costs {
                let cfg = AbstentionConfig::new(gamma, cost, p)?;
                let verifier =
                    BoundVerifier::with_surrogate_rstar(&dist, *phi, cfg, spec.class, spec.method, rstar_surrogate.clone())?
                        .with_base_tolerance(spec.base_tolerance)
                        .with_gamma_scale(spec.gamma_scale);
                for (hi, h) in hyps.iter().enumerate() {
                    let profile = verifier.gap_profile(h)?;
                    for &variant in &spec.variants {
                        let report = verifier.verify(h, variant)?;
                        let pointwise_violations = profile
                            .target_gaps
                            .iter()
                            .zip(&profile.surrogate_gaps)
                            .filter(|(t, s)| {
                                let g = super::transforms::gamma_transform(
                                    phi,
                                    spec.setting,
                                    s.max(0.0),
                                    spec.class.w_eff(),
                                    gamma,
                                    variant,
                                )
                                .unwrap_or(f64::INFINITY);
                                **t > g + 1e-8
                            })
                            .count();
                        rows.push(CampaignRow {
                            distribution: index,
                            hypothesis: hi,
                            report,
                            min_target_calibration_gap: profile.target_gaps.iter().copied().fold(f64::INFINITY, f64::min),
                            min_surrogate_calibration_gap: profile
                                .surrogate_gaps
                                .iter()
                                .copied()
                                .fold(f64::INFINITY, f64::min),
                            pointwise_violations,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Runs every check in the campaign. Distributions are processed in parallel;
/// rows come back in grid order.
pub fn run_campaign(spec: &CampaignSpec) -> Result<CampaignResult, BoundError> {
    let per_dist: Vec<Vec<CampaignRow>> = (0..spec.n_distributions)
        .into_par_iter()
        .map(|i| run_distribution(spec, i))
        .collect::<Result<_, BoundError>>()?;
    Ok(CampaignResult { rows: per_dist.into_iter().flatten().collect() })
}
