//! Conditional, expected and best-in-class risks.
//!
//! Every quantity is computed from *atoms*: a pair `(x, x')` with its
//! probability, its conditional label law and the distance `‖x - x'‖_p`.
//! Risks depend on a hypothesis only through the margin `m = h(x') - h(x)`,
//! so the per-atom minimum over a family is a one-dimensional problem over
//! the family's achievable margin interval.
//!
//! In the bipartite setting an atom carries `η(x)` and `η(x')`. The two
//! mixed-label outcomes have probabilities `a = η(x)(1 - η(x'))` for
//! `(+1, -1)` and `b = η(x')(1 - η(x))` for `(-1, +1)`. Same-label outcomes
//! only matter for the abstention loss, which charges `c` for every label
//! pair on abstained atoms.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::distribution::{Distribution, Setting};
use crate::hypothesis::{dual_maximizer, project_norm_ball, Hypothesis, HypothesisClass, HypothesisError, ModelKind, Params};
use crate::losses::{
    abstention_loss, bipartite_abstention_loss, bipartite_misranking_loss, bipartite_surrogate_loss, misranking_loss,
    surrogate_loss, AbstentionConfig, LossError, PhiKind, PhiSpec, ScoredPair, Sign,
};
use crate::numeric::{linspace, pairwise_sum, try_par_indexed_sum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Which loss a risk is taken with respect to. The abstention parameters come
/// from the accompanying [`AbstentionConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSelector {
    /// The abstention loss (pairwise or bipartite, depending on the atom).
    Target,
    /// The misranking loss without abstention.
    Misranking,
    /// The margin-based surrogate built from `Φ`.
    Surrogate(PhiSpec),
}

impl LossSelector {
    pub fn name(&self) -> String {
        match self {
            LossSelector::Target => "abstention".into(),
            LossSelector::Misranking => "misranking".into(),
            LossSelector::Surrogate(phi) => format!("surrogate_{}", phi.kind()),
        }
    }

    pub fn phi(&self) -> Option<PhiSpec> {
        match self {
            LossSelector::Surrogate(phi) => Some(*phi),
            _ => None,
        }
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Conditional label law and distance of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    General { eta: f64, dist: f64 },
    Bipartite { eta_x: f64, eta_xp: f64, dist: f64 },
}

impl Atom {
    pub fn dist(&self) -> f64 {
        match *self {
            Atom::General { dist, .. } | Atom::Bipartite { dist, .. } => dist,
        }
    }

    pub fn setting(&self) -> Setting {
        match self {
            Atom::General { .. } => Setting::General,
            Atom::Bipartite { .. } => Setting::Bipartite,
        }
    }

    /// `(a, b)` for bipartite atoms, `(η, 1 - η)` for general ones.
    pub fn coefficients(&self) -> (f64, f64) {
        match *self {
            Atom::General { eta, .. } => (eta, 1.0 - eta),
            Atom::Bipartite { eta_x, eta_xp, .. } => (eta_x * (1.0 - eta_xp), eta_xp * (1.0 - eta_x)),
        }
    }
}

fn weighted(coef: f64, value: impl FnOnce() -> Result<f64, LossError>) -> Result<f64, LossError> {
    // Zero-probability outcomes are skipped so saturated losses cannot poison the sum.
    if coef == 0.0 {
        Ok(0.0)
    } else {
        Ok(coef * value()?)
    }
}

/// Conditional risk of an atom at margin `m = h(x') - h(x)`.
pub fn conditional_risk(loss: &LossSelector, cfg: &AbstentionConfig, atom: &Atom, m: f64) -> Result<f64, RiskError> {
    let sp = ScoredPair::from_margin(m, atom.dist())?;
    let (p, n) = (Sign::Pos, Sign::Neg);
    let value = match (*atom, loss) {
        (Atom::General { .. }, LossSelector::Target) if cfg.abstains(sp.dist) => cfg.cost(),
        (Atom::Bipartite { .. }, LossSelector::Target) if cfg.abstains(sp.dist) => cfg.cost(),
        (Atom::General { eta, .. }, _) => {
            let l = |y: Sign| -> Result<f64, LossError> {
                match loss {
                    LossSelector::Target => Ok(abstention_loss(&sp, y, cfg)),
                    LossSelector::Misranking => Ok(misranking_loss(&sp, y)),
                    LossSelector::Surrogate(phi) => surrogate_loss(phi, &sp, y),
                }
            };
            weighted(eta, || l(p))? + weighted(1.0 - eta, || l(n))?
        }
        (Atom::Bipartite { .. }, _) => {
            let (a, b) = atom.coefficients();
            let l = |y: Sign, yp: Sign| -> Result<f64, LossError> {
                match loss {
                    LossSelector::Target => Ok(bipartite_abstention_loss(&sp, y, yp, cfg)),
                    LossSelector::Misranking => Ok(bipartite_misranking_loss(&sp, y, yp)),
                    LossSelector::Surrogate(phi) => bipartite_surrogate_loss(phi, &sp, y, yp),
                }
            };
            weighted(a, || l(p, n))? + weighted(b, || l(n, p))?
        }
    };
    Ok(value)
}

/// `η L(h, x, x', +1) + (1 - η) L(h, x, x', -1)` for a concrete hypothesis.
pub fn conditional_risk_general(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    h: &Hypothesis,
    x: &[f64],
    xp: &[f64],
    eta: f64,
) -> Result<f64, RiskError> {
    let m = h.eval(xp)? - h.eval(x)?;
    conditional_risk(loss, cfg, &Atom::General { eta, dist: cfg.p().distance(x, xp) }, m)
}

/// Bipartite conditional risk of a concrete hypothesis on the pair `(x, x')`.
pub fn conditional_risk_bipartite(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    h: &Hypothesis,
    x: &[f64],
    xp: &[f64],
    eta_x: f64,
    eta_xp: f64,
) -> Result<f64, RiskError> {
    let m = h.eval(xp)? - h.eval(x)?;
    conditional_risk(loss, cfg, &Atom::Bipartite { eta_x, eta_xp, dist: cfg.p().distance(x, xp) }, m)
}

fn exp_checked(t: f64) -> Result<f64, RiskError> {
    let v = t.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LossError::Saturated(t).into())
    }
}

/// Closed-form infimum of the conditional risk over margins in `[-w_eff·d, w_eff·d]`.
///
/// With `(A, B)` the coefficients of the outcome favouring a positive and a
/// negative margin respectively (`(η, 1 - η)` or `(b, a)` after the bipartite
/// sign flip), the minima are symmetric in `(A, B)` and depend only on
/// `max`, `min` and `|A - B|`.
pub fn min_conditional_risk_closed(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atom: &Atom,
    w_eff: f64,
) -> Result<f64, RiskError> {
    let d = atom.dist();
    if d == 0.0 {
        // The achievable range is the single margin 0.
        return conditional_risk(loss, cfg, atom, 0.0);
    }
    if matches!(loss, LossSelector::Target) && cfg.abstains(d) {
        return Ok(cfg.cost());
    }
    let (a, b) = atom.coefficients();
    let r = w_eff * d;
    let (hi, lo) = (a.max(b), a.min(b));
    let total = a + b;
    let diff = hi - lo;
    let value = match loss {
        LossSelector::Target | LossSelector::Misranking => lo,
        LossSelector::Surrogate(phi) => match phi.kind() {
            PhiKind::Hinge => total - diff * r.min(1.0),
            PhiKind::Sigmoid => total - diff * (phi.k() * r).tanh(),
            PhiKind::Exponential => {
                if hi == 0.0 {
                    0.0
                } else if lo > 0.0 && 0.5 * (hi / lo).ln() <= r {
                    2.0 * (a * b).sqrt()
                } else {
                    let far = hi * exp_checked(-r)?;
                    if lo == 0.0 {
                        far
                    } else {
                        far + lo * exp_checked(r)?
                    }
                }
            }
        },
    };
    Ok(value)
}

/// Brute-force minimum of the conditional risk over a uniform margin grid.
///
/// `resolution` is the grid step as a fraction of the range width; the grid
/// always contains both endpoints and margin 0.
pub fn min_conditional_risk_oracle(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atom: &Atom,
    w_eff: f64,
    resolution: f64,
) -> Result<f64, RiskError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(RiskError::Unsupported(format!("grid resolution must be positive, got {resolution}")));
    }
    let r = w_eff * atom.dist();
    if r == 0.0 {
        return conditional_risk(loss, cfg, atom, 0.0);
    }
    let intervals = (1.0 / resolution).ceil() as usize;
    let mut best = conditional_risk(loss, cfg, atom, 0.0)?;
    for m in linspace(-r, r, intervals + 1) {
        best = best.min(conditional_risk(loss, cfg, atom, m)?);
    }
    Ok(best)
}

/// `C_L(h, atom) - C*_L(H, atom)` at margin `m`.
pub fn calibration_gap(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atom: &Atom,
    m: f64,
    w_eff: f64,
) -> Result<f64, RiskError> {
    Ok(conditional_risk(loss, cfg, atom, m)? - min_conditional_risk_closed(loss, cfg, atom, w_eff)?)
}

/// Indicator form of the general target calibration gap: `|2η - 1|` when the
/// pair is not abstained and `sign(m)` disagrees with `2η - 1`.
pub fn target_gap_general(eta: f64, m: f64, dist: f64, cfg: &AbstentionConfig) -> f64 {
    if cfg.abstains(dist) {
        return 0.0;
    }
    let s = if m >= 0.0 { 1.0 } else { -1.0 };
    if s * (2.0 * eta - 1.0) <= 0.0 {
        (2.0 * eta - 1.0).abs()
    } else {
        0.0
    }
}

/// Indicator form of the bipartite target calibration gap: `|η(x) - η(x')|`
/// when the scores are strictly in the wrong order and half that on ties.
pub fn target_gap_bipartite(eta_x: f64, eta_xp: f64, m: f64, dist: f64, cfg: &AbstentionConfig) -> f64 {
    if cfg.abstains(dist) {
        return 0.0;
    }
    let gap = (eta_x - eta_xp).abs();
    // `h(x) - h(x') = -m` should share the sign of `η(x) - η(x')`.
    let agreement = -m * (eta_x - eta_xp);
    if m == 0.0 {
        0.5 * gap
    } else if agreement < 0.0 {
        gap
    } else {
        0.0
    }
}

/// A pair with its probability and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAtom {
    pub weight: f64,
    pub atom: Atom,
    pub x: Vec<f64>,
    pub xp: Vec<f64>,
}

impl WeightedAtom {
    pub fn delta(&self) -> Vec<f64> {
        self.xp.iter().zip(&self.x).map(|(a, b)| a - b).collect()
    }
}

/// Flattens a distribution into weighted atoms. Bipartite supports expand
/// through their pair law.
pub fn atoms(dist: &Distribution) -> Vec<WeightedAtom> {
    match dist {
        Distribution::General(d) => (0..d.len())
            .filter(|&i| d.weights()[i] > 0.0)
            .map(|i| WeightedAtom {
                weight: d.weights()[i],
                atom: Atom::General { eta: d.eta()[i], dist: d.dist(i) },
                x: d.pairs()[i].0.clone(),
                xp: d.pairs()[i].1.clone(),
            })
            .collect(),
        Distribution::Bipartite(d) => d
            .pair_atoms()
            .into_iter()
            .map(|(i, j, w)| WeightedAtom {
                weight: w,
                atom: Atom::Bipartite { eta_x: d.eta()[i], eta_xp: d.eta()[j], dist: d.dist(i, j) },
                x: d.points()[i].clone(),
                xp: d.points()[j].clone(),
            })
            .collect(),
    }
}

fn check_norms(cfg: &AbstentionConfig, dist: &Distribution) -> Result<(), RiskError> {
    if cfg.p() != dist.p() {
        return Err(RiskError::Unsupported(format!(
            "abstention uses the l{} norm but the distribution uses l{}",
            cfg.p(),
            dist.p()
        )));
    }
    Ok(())
}

/// Margins `h(x') - h(x)` of every atom.
pub fn margins(h: &Hypothesis, atoms: &[WeightedAtom]) -> Result<Vec<f64>, RiskError> {
    atoms.iter().map(|a| Ok(h.eval(&a.xp)? - h.eval(&a.x)?)).collect()
}

/// `Σ_i w_i C(atom_i, m_i)`, reduced in a fixed order.
pub fn expected_risk_at_margins(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    margins: &[f64],
) -> Result<f64, RiskError> {
    let terms = atoms
        .iter()
        .zip(margins)
        .map(|(a, &m)| Ok(a.weight * conditional_risk(loss, cfg, &a.atom, m)?))
        .collect::<Result<Vec<f64>, RiskError>>()?;
    Ok(pairwise_sum(&terms))
}

/// Exact expected risk `R_L(h)`.
pub fn expected_risk(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    h: &Hypothesis,
    dist: &Distribution,
) -> Result<f64, RiskError> {
    check_norms(cfg, dist)?;
    let atoms = atoms(dist);
    try_par_indexed_sum(atoms.len(), |i| {
        let a = &atoms[i];
        let m = h.eval(&a.xp)? - h.eval(&a.x)?;
        Ok(a.weight * conditional_risk(loss, cfg, &a.atom, m)?)
    })
}

/// `E[C*_L(H, atom)]` from the closed forms.
pub fn expected_min_conditional_risk(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    w_eff: f64,
) -> Result<f64, RiskError> {
    let terms = atoms
        .iter()
        .map(|a| Ok(a.weight * min_conditional_risk_closed(loss, cfg, &a.atom, w_eff)?))
        .collect::<Result<Vec<f64>, RiskError>>()?;
    Ok(pairwise_sum(&terms))
}

/// Strategy for estimating `R*_L(H) = inf_h R_L(h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RStarMethod {
    /// Grid over linear weight vectors in dimension at most 2, optionally refined once
    /// around the incumbent. Biases cancel in margins, so they are not searched.
    ExhaustiveGrid { steps: usize, refine: bool },
    /// Projected gradient descent from several random starts plus the null hypothesis.
    MultiRestartPgd { restarts: usize, iters: usize, seed: u64 },
}

impl RStarMethod {
    pub const DEFAULT_GRID: RStarMethod = RStarMethod::ExhaustiveGrid { steps: 400, refine: true };
    pub const DEFAULT_PGD: RStarMethod = RStarMethod::MultiRestartPgd { restarts: 32, iters: 300, seed: 0 };

    pub fn name(&self) -> &'static str {
        match self {
            RStarMethod::ExhaustiveGrid { .. } => "exhaustive_grid",
            RStarMethod::MultiRestartPgd { .. } => "multi_restart_pgd",
        }
    }

    /// The grid when it applies to the class, projected gradient otherwise.
    pub fn default_for(class: &HypothesisClass) -> RStarMethod {
        if class.kind == ModelKind::Linear && class.dim <= 2 {
            Self::DEFAULT_GRID
        } else {
            Self::DEFAULT_PGD
        }
    }
}

impl fmt::Display for RStarMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An upper estimate of `R*_L(H)` and how far it may be from the infimum.
#[derive(Debug, Clone, PartialEq)]
pub struct RStarEstimate {
    pub value: f64,
    pub method: RStarMethod,
    /// Improvement achieved by the last search phase (refinement or final
    /// iterations); a heuristic measure of residual estimation error.
    pub slack: f64,
    pub witness: Hypothesis,
}

fn linear_objective(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    deltas: &[Vec<f64>],
    w: &[f64],
) -> Result<f64, RiskError> {
    let terms = atoms
        .iter()
        .zip(deltas)
        .map(|(a, d)| {
            let m: f64 = w.iter().zip(d).map(|(wi, di)| wi * di).sum();
            Ok(a.weight * conditional_risk(loss, cfg, &a.atom, m)?)
        })
        .collect::<Result<Vec<f64>, RiskError>>()?;
    Ok(pairwise_sum(&terms))
}

fn grid_points(dim: usize, center: &[f64], half: f64, steps: usize, class: &HypothesisClass) -> Vec<Vec<f64>> {
    let c = &class.constraints;
    let axes: Vec<Vec<f64>> = (0..dim).map(|k| linspace(center[k] - half, center[k] + half, steps + 1)).collect();
    let mut out = Vec::new();
    match dim {
        1 => {
            for &u in &axes[0] {
                out.push(project_norm_ball(&[u], c.q(), c.w_bound()));
            }
        }
        2 => {
            for &u in &axes[0] {
                for &v in &axes[1] {
                    out.push(project_norm_ball(&[u, v], c.q(), c.w_bound()));
                }
            }
        }
        _ => unreachable!("grid search is limited to dimension <= 2"),
    }
    out
}

fn argmin_candidates(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    deltas: &[Vec<f64>],
    candidates: &[Vec<f64>],
) -> Result<(usize, f64), RiskError> {
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|w| linear_objective(loss, cfg, atoms, deltas, w))
        .collect::<Result<_, RiskError>>()?;
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

fn grid_search(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    class: &HypothesisClass,
    steps: usize,
    refine: bool,
) -> Result<RStarEstimate, RiskError> {
    let dim = class.dim;
    let c = &class.constraints;
    let deltas: Vec<Vec<f64>> = atoms.iter().map(WeightedAtom::delta).collect();
    let steps = steps.max(2);
    let mut candidates = grid_points(dim, &vec![0.0; dim], c.w_bound(), steps, class);
    candidates.push(vec![0.0; dim]);
    // Per-atom extreme weights attain each atom's margin-range endpoints exactly.
    for d in &deltas {
        if c.p().norm(d) > 0.0 {
            let z = dual_maximizer(d, c.p());
            candidates.push(z.iter().map(|v| v * c.w_bound()).collect());
            candidates.push(z.iter().map(|v| -v * c.w_bound()).collect());
        }
    }
    let (i, coarse) = argmin_candidates(loss, cfg, atoms, &deltas, &candidates)?;
    let mut best_w = candidates[i].clone();
    let mut best = coarse;
    if refine {
        let step = 2.0 * c.w_bound() / steps as f64;
        let fine = grid_points(dim, &best_w, 2.0 * step, steps, class);
        let (j, v) = argmin_candidates(loss, cfg, atoms, &deltas, &fine)?;
        if v < best {
            best = v;
            best_w = fine[j].clone();
        }
    }
    let witness = Hypothesis::new(Params::Linear { w: best_w, b: 0.0 }, *c)?;
    Ok(RStarEstimate {
        value: best,
        method: RStarMethod::ExhaustiveGrid { steps, refine },
        slack: coarse - best,
        witness,
    })
}

/// `dC/dm` of the objective minimized by projected gradient. For the
/// discontinuous target losses a logistic smoothing with temperature `tau`
/// stands in for the indicator; only its gradient is used.
fn margin_derivative(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atom: &Atom,
    m: f64,
    tau: f64,
) -> Result<f64, RiskError> {
    let (a, b) = atom.coefficients();
    match loss {
        LossSelector::Surrogate(phi) => match atom {
            // C = η Φ(m) + (1 - η) Φ(-m)
            Atom::General { .. } => Ok(a * phi.grad(m)? - b * phi.grad(-m)?),
            // C = a Φ(-m) + b Φ(m)
            Atom::Bipartite { .. } => Ok(-a * phi.grad(-m)? + b * phi.grad(m)?),
        },
        LossSelector::Target | LossSelector::Misranking => {
            if matches!(loss, LossSelector::Target) && cfg.abstains(atom.dist()) {
                return Ok(0.0);
            }
            let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
            let dsig = |t: f64| {
                let s = sig(t);
                s * (1.0 - s) / tau
            };
            // Loss for a "should be positive" outcome ≈ σ(-m/τ), and the reverse.
            let (pos, neg) = match atom {
                Atom::General { .. } => (a, b),
                Atom::Bipartite { .. } => (b, a),
            };
            Ok(-pos * dsig(-m / tau) + neg * dsig(m / tau))
        }
    }
}

fn exact_objective(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    h: &Hypothesis,
) -> Result<f64, RiskError> {
    expected_risk_at_margins(loss, cfg, atoms, &margins(h, atoms)?)
}

struct PgdRun {
    best: f64,
    best_at_checkpoint: f64,
    witness: Hypothesis,
}

fn pgd_run(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    start: Hypothesis,
    iters: usize,
    lr0: f64,
    tau: f64,
) -> Result<PgdRun, RiskError> {
    let mut h = start.project();
    let mut best = exact_objective(loss, cfg, atoms, &h)?;
    let mut witness = h.clone();
    let mut best_at_checkpoint = best;
    let checkpoint = iters - iters / 10;
    let n = h.num_params();
    let mut velocity = vec![0.0; n];
    let momentum = 0.9;
    for t in 0..iters {
        let mut grad = vec![0.0; n];
        for a in atoms {
            let m = h.eval(&a.xp)? - h.eval(&a.x)?;
            let g = a.weight * margin_derivative(loss, cfg, &a.atom, m, tau)?;
            if g != 0.0 {
                h.accumulate_grad(&a.xp, g, &mut grad);
                h.accumulate_grad(&a.x, -g, &mut grad);
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let lr = lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / iters as f64).cos());
        let mut theta = h.flat_params();
        for k in 0..n {
            velocity[k] = momentum * velocity[k] + grad[k];
            theta[k] -= lr * (grad[k] + momentum * velocity[k]);
        }
        h = h.with_flat_params(&theta)?.project();
        let v = exact_objective(loss, cfg, atoms, &h)?;
        if v < best {
            best = v;
            witness = h.clone();
        }
        if t + 1 == checkpoint {
            best_at_checkpoint = best;
        }
    }
    Ok(PgdRun { best, best_at_checkpoint, witness })
}

fn pgd_search(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    class: &HypothesisClass,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<RStarEstimate, RiskError> {
    let iters = iters.max(10);
    let mut starts = vec![class.null()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        starts.push(class.random(&mut rng));
    }
    let max_dist = atoms.iter().map(|a| a.atom.dist()).fold(0.0, f64::max);
    let scale = (class.w_eff() * max_dist).max(1e-12);
    let tau = 0.02 * scale;
    let lr0 = 0.5 * class.constraints.w_bound().max(class.constraints.lambda());
    let mut runs: Vec<PgdRun> = starts
        .into_par_iter()
        .map(|s| pgd_run(loss, cfg, atoms, s, iters, lr0, tau))
        .collect::<Result<_, RiskError>>()?;
    let mut best_idx = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.best < runs[best_idx].best {
            best_idx = i;
        }
    }
    let checkpoint = runs.iter().map(|r| r.best_at_checkpoint).fold(f64::INFINITY, f64::min);
    let best = runs[best_idx].best;
    Ok(RStarEstimate {
        value: best,
        method: RStarMethod::MultiRestartPgd { restarts, iters, seed },
        slack: (checkpoint - best).max(0.0),
        witness: runs.swap_remove(best_idx).witness,
    })
}

/// Upper estimate of `R*_L(H)` over a hypothesis class.
pub fn best_in_class_risk(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    dist: &Distribution,
    class: &HypothesisClass,
    method: RStarMethod,
) -> Result<RStarEstimate, RiskError> {
    check_norms(cfg, dist)?;
    if class.constraints.p() != dist.p() {
        return Err(RiskError::Unsupported(format!(
            "hypothesis weights use l{} but inputs use l{}; the norms must be conjugate",
            class.constraints.q(),
            dist.p()
        )));
    }
    if class.dim != dist.dim() {
        return Err(HypothesisError::DimensionMismatch { expected: class.dim, got: dist.dim() }.into());
    }
    best_in_class_over_atoms(loss, cfg, &atoms(dist), class, method)
}

/// [`best_in_class_risk`] on pre-flattened atoms.
pub fn best_in_class_over_atoms(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    atoms: &[WeightedAtom],
    class: &HypothesisClass,
    method: RStarMethod,
) -> Result<RStarEstimate, RiskError> {
    match method {
        RStarMethod::ExhaustiveGrid { steps, refine } => {
            if class.kind != ModelKind::Linear || class.dim > 2 || class.dim == 0 {
                return Err(RiskError::Unsupported(format!(
                    "exhaustive grid needs a linear model in dimension 1 or 2, got {} in dimension {}",
                    class.kind, class.dim
                )));
            }
            grid_search(loss, cfg, atoms, class, steps, refine)
        }
        RStarMethod::MultiRestartPgd { restarts, iters, seed } => {
            pgd_search(loss, cfg, atoms, class, restarts, iters, seed)
        }
    }
}

/// `M_L(H) = R*_L(H) - E[C*_L(H, atom)]`, with the estimate it was computed from.
pub fn minimizability_gap(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    dist: &Distribution,
    class: &HypothesisClass,
    method: RStarMethod,
) -> Result<(f64, RStarEstimate), RiskError> {
    let est = best_in_class_risk(loss, cfg, dist, class, method)?;
    let inner = expected_min_conditional_risk(loss, cfg, &atoms(dist), class.w_eff())?;
    Ok((est.value - inner, est))
}

/// Expected risk, best-in-class risk and gaps of one hypothesis under one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub loss: LossSelector,
    pub setting: Setting,
    pub gamma: f64,
    pub cost: f64,
    pub expected_risk: f64,
    pub best_in_class: f64,
    pub minimizability_gap: f64,
    pub method: RStarMethod,
    pub rstar_slack: f64,
    pub per_atom_calibration_gaps: Vec<f64>,
}

impl RiskReport {
    pub const CSV_HEADER: [&'static str; 9] =
        ["loss", "setting", "phi", "gamma", "cost", "expected_risk", "best_in_class", "minimizability_gap", "method"];

    pub fn csv_record(&self) -> Vec<String> {
        use crate::report::fmt_g9;
        let phi = self.loss.phi().map(|p| p.to_string()).unwrap_or_else(|| "none".into());
        let loss = match self.loss {
            LossSelector::Target => "abstention",
            LossSelector::Misranking => "misranking",
            LossSelector::Surrogate(_) => "surrogate",
        };
        vec![
            loss.into(),
            self.setting.to_string(),
            phi,
            fmt_g9(self.gamma),
            fmt_g9(self.cost),
            fmt_g9(self.expected_risk),
            fmt_g9(self.best_in_class),
            fmt_g9(self.minimizability_gap),
            self.method.to_string(),
        ]
    }
}

pub fn risk_report(
    loss: &LossSelector,
    cfg: &AbstentionConfig,
    h: &Hypothesis,
    dist: &Distribution,
    class: &HypothesisClass,
    method: RStarMethod,
) -> Result<RiskReport, RiskError> {
    let expected = expected_risk(loss, cfg, h, dist)?;
    let (gap, est) = minimizability_gap(loss, cfg, dist, class, method)?;
    let flat = atoms(dist);
    let ms = margins(h, &flat)?;
    let per_atom = flat
        .iter()
        .zip(&ms)
        .map(|(a, &m)| calibration_gap(loss, cfg, &a.atom, m, class.w_eff()))
        .collect::<Result<Vec<f64>, RiskError>>()?;
    Ok(RiskReport {
        loss: *loss,
        setting: dist.setting(),
        gamma: cfg.gamma(),
        cost: cfg.cost(),
        expected_risk: expected,
        best_in_class: est.value,
        minimizability_gap: gap,
        method: est.method,
        rstar_slack: est.slack,
        per_atom_calibration_gaps: per_atom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{BipartiteDistribution, GeneralDistribution};
    use crate::hypothesis::ConstraintSpec;
    use crate::losses::PNorm;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(gamma: f64, cost: f64) -> AbstentionConfig {
        AbstentionConfig::new(gamma, cost, PNorm::L2).unwrap()
    }

    fn gen(eta: f64, dist: f64) -> Atom {
        Atom::General { eta, dist }
    }

    #[test]
    fn conditional_risk_examples() {
        let none = AbstentionConfig::none(PNorm::L2);
        assert_abs_diff_eq!(conditional_risk(&LossSelector::Misranking, &none, &gen(0.3, 1.0), 0.2).unwrap(), 0.7);
        assert_eq!(conditional_risk(&LossSelector::Misranking, &none, &gen(0.0, 1.0), -0.4).unwrap(), 0.0);
        let exp = LossSelector::Surrogate(PhiSpec::exponential());
        for m in [-0.7, 0.0, 0.3, 1.1] {
            assert_abs_diff_eq!(conditional_risk(&exp, &none, &gen(0.5, 1.0), m).unwrap(), m.cosh(), epsilon = 1e-14);
        }

        let tie = Atom::Bipartite { eta_x: 1.0, eta_xp: 0.0, dist: 0.4 };
        assert_eq!(conditional_risk(&LossSelector::Misranking, &none, &tie, 0.0).unwrap(), 0.5);
        let same = Atom::Bipartite { eta_x: 0.4, eta_xp: 0.4, dist: 0.4 };
        assert_abs_diff_eq!(conditional_risk(&LossSelector::Misranking, &none, &same, 0.3).unwrap(), 0.24);
        // h(x) > h(x') means a negative margin; only the (-1, +1) outcome is misranked.
        let mixed = Atom::Bipartite { eta_x: 0.8, eta_xp: 0.3, dist: 0.4 };
        assert_abs_diff_eq!(
            conditional_risk(&LossSelector::Misranking, &none, &mixed, -0.2).unwrap(),
            0.3 * 0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn closed_form_examples() {
        let c = cfg(0.1, 0.4);
        assert_abs_diff_eq!(min_conditional_risk_closed(&LossSelector::Target, &c, &gen(0.3, 0.5), 1.0).unwrap(), 0.3);
        assert_eq!(min_conditional_risk_closed(&LossSelector::Target, &c, &gen(0.3, 0.05), 1.0).unwrap(), 0.4);
        let hinge = LossSelector::Surrogate(PhiSpec::hinge());
        assert_abs_diff_eq!(min_conditional_risk_closed(&hinge, &c, &gen(0.8, 0.5), 1.0).unwrap(), 0.7, epsilon = 1e-15);
        let exp = LossSelector::Surrogate(PhiSpec::exponential());
        let v = min_conditional_risk_closed(&exp, &c, &gen(0.9, 0.5), 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.9 * (-0.5f64).exp() + 0.1 * 0.5f64.exp(), epsilon = 1e-15);
        assert!((v - 0.710749).abs() < 1e-6);
    }

    #[test]
    fn oracle_examples() {
        let c = cfg(0.1, 0.4);
        let hinge = LossSelector::Surrogate(PhiSpec::hinge());
        let v = min_conditional_risk_oracle(&hinge, &c, &gen(0.8, 0.5), 1.0, 1e-4).unwrap();
        assert!((v - 0.7).abs() <= 1e-4);
        let exp = LossSelector::Surrogate(PhiSpec::exponential());
        assert_eq!(min_conditional_risk_oracle(&exp, &c, &gen(0.5, 0.7), 1.3, 1e-3).unwrap(), 1.0);
        assert_eq!(min_conditional_risk_oracle(&LossSelector::Target, &c, &gen(0.2, 0.05), 1.0, 0.3).unwrap(), 0.4);
    }

    #[test]
    fn calibration_gap_examples() {
        let c = cfg(0.1, 0.4);
        let g = calibration_gap(&LossSelector::Target, &c, &gen(0.3, 0.5), 0.2, 1.0).unwrap();
        assert_abs_diff_eq!(g, 0.4, epsilon = 1e-15);
        let bip = Atom::Bipartite { eta_x: 0.8, eta_xp: 0.3, dist: 0.5 };
        let g = calibration_gap(&LossSelector::Target, &c, &bip, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(g, 0.25, epsilon = 1e-15);
        assert_eq!(calibration_gap(&LossSelector::Target, &c, &gen(0.9, 0.1), -1.0, 1.0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn target_gap_matches_indicator_forms(eta in 0.0..=1.0f64, eta2 in 0.0..=1.0f64, m in -1.0..1.0f64,
                                              d in 0.0..1.0f64, gamma in 0.0..0.6f64, c in 0.0..=1.0f64) {
            let cfg = cfg(gamma, c);
            let ms = [m, 0.0];
            for &m in &ms {
                let g = calibration_gap(&LossSelector::Target, &cfg, &gen(eta, d), m, 1.0).unwrap();
                if d > 0.0 {
                    prop_assert!((g - target_gap_general(eta, m, d, &cfg)).abs() < 1e-14);
                }
                let a = Atom::Bipartite { eta_x: eta, eta_xp: eta2, dist: d };
                let g = calibration_gap(&LossSelector::Target, &cfg, &a, m, 1.0).unwrap();
                if d > 0.0 {
                    prop_assert!((g - target_gap_bipartite(eta, eta2, m, d, &cfg)).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn gamma_zero_target_is_misranking(eta in 0.0..=1.0f64, eta2 in 0.0..=1.0f64, m in -1.0..1.0f64,
                                           d in 1e-9..1.0f64, c in 0.0..=1.0f64) {
            let cfg = cfg(0.0, c);
            for atom in [gen(eta, d), Atom::Bipartite { eta_x: eta, eta_xp: eta2, dist: d }] {
                let t = conditional_risk(&LossSelector::Target, &cfg, &atom, m).unwrap();
                let r = conditional_risk(&LossSelector::Misranking, &cfg, &atom, m).unwrap();
                prop_assert_eq!(t, r);
            }
        }

        #[test]
        fn closed_form_is_a_lower_bound_on_achievable_risks(eta in 0.0..=1.0f64, eta2 in 0.0..=1.0f64,
                                                             u in -1.0..=1.0f64, d in 0.0..1.5f64,
                                                             w in 0.1..3.0f64, k in 0.2..4.0f64) {
            let cfg = cfg(0.3, 0.2);
            let losses = [
                LossSelector::Target,
                LossSelector::Surrogate(PhiSpec::hinge()),
                LossSelector::Surrogate(PhiSpec::exponential()),
                LossSelector::Surrogate(PhiSpec::sigmoid(k).unwrap()),
            ];
            for atom in [gen(eta, d), Atom::Bipartite { eta_x: eta, eta_xp: eta2, dist: d }] {
                for loss in &losses {
                    let m = u * w * d;
                    let g = calibration_gap(loss, &cfg, &atom, m, w).unwrap();
                    prop_assert!(g >= -1e-12, "{loss} {atom:?} m={m}: {g}");
                }
            }
        }
    }

    fn line_dist(pairs: &[(f64, f64, f64, f64)]) -> Distribution {
        GeneralDistribution::new(
            pairs.iter().map(|p| (vec![p.0], vec![p.1])).collect(),
            pairs.iter().map(|p| p.2).collect(),
            pairs.iter().map(|p| p.3).collect(),
            PNorm::L2,
        )
        .unwrap()
        .into()
    }

    #[test]
    fn expected_risk_examples() {
        let none = AbstentionConfig::none(PNorm::L2);
        let d = line_dist(&[(0.0, 0.5, 1.0, 0.3)]);
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let up = class.from_params(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(expected_risk(&LossSelector::Misranking, &none, &up, &d).unwrap(), 0.7, epsilon = 1e-15);

        let two = line_dist(&[(0.0, 0.5, 0.25, 0.2), (0.5, -0.5, 0.75, 0.6)]);
        let exp = LossSelector::Surrogate(PhiSpec::exponential());
        let h = class.from_params(&[0.4, 0.1]).unwrap();
        let m1: f64 = 0.4 * 0.5;
        let m2: f64 = -0.4;
        let hand = 0.25 * (0.2 * (-m1).exp() + 0.8 * m1.exp()) + 0.75 * (0.6 * (-m2).exp() + 0.4 * m2.exp());
        assert_abs_diff_eq!(expected_risk(&exp, &none, &h, &two).unwrap(), hand, epsilon = 1e-14);

        let t = cfg(0.1, 0.3);
        let h0 = class.null();
        assert_abs_diff_eq!(expected_risk(&LossSelector::Target, &t, &h0, &two).unwrap(), 0.25 * 0.8 + 0.75 * 0.4, epsilon = 1e-15);
    }

    #[test]
    fn expected_risk_is_linear_in_weights() {
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let h = class.from_params(&[-0.7, 0.0]).unwrap();
        let cfg = cfg(0.2, 0.35);
        let base = [(0.0, 0.5, 0.0, 0.2), (0.5, -0.5, 0.0, 0.9), (0.1, 0.15, 0.0, 0.4)];
        let with = |w: [f64; 3]| {
            let mut p = base;
            for (row, wi) in p.iter_mut().zip(w) {
                row.2 = wi;
            }
            line_dist(&p)
        };
        let (p1, p2) = ([0.2, 0.5, 0.3], [0.6, 0.1, 0.3]);
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
        for loss in [LossSelector::Target, LossSelector::Surrogate(PhiSpec::sigmoid(2.0).unwrap())] {
            let r1 = expected_risk(&loss, &cfg, &h, &with(p1)).unwrap();
            let r2 = expected_risk(&loss, &cfg, &h, &with(p2)).unwrap();
            let rm = expected_risk(&loss, &cfg, &h, &with([mix[0], mix[1], mix[2]])).unwrap();
            assert_abs_diff_eq!(rm, 0.3 * r1 + 0.7 * r2, epsilon = 1e-14);
        }
    }

    #[test]
    fn compatible_preferences_have_zero_gap() {
        // Every pair prefers the point further along e1, so w = e1 is optimal everywhere.
        let d = line_dist(&[(0.0, 0.5, 0.3, 0.9), (-0.5, 0.2, 0.3, 0.8), (0.1, 0.9, 0.4, 1.0)]);
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let cfg = AbstentionConfig::new(0.1, 0.2, PNorm::L2).unwrap();
        for loss in [
            LossSelector::Target,
            LossSelector::Surrogate(PhiSpec::hinge()),
            LossSelector::Surrogate(PhiSpec::sigmoid(1.5).unwrap()),
        ] {
            let (gap, est) = minimizability_gap(&loss, &cfg, &d, &class, RStarMethod::DEFAULT_GRID).unwrap();
            assert!(gap.abs() <= 1e-12, "{loss}: gap {gap}");
            let inner = expected_min_conditional_risk(&loss, &cfg, &atoms(&d), 1.0).unwrap();
            assert_abs_diff_eq!(est.value, inner, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_atom_gap_vanishes() {
        let d = line_dist(&[(0.2, -0.3, 1.0, 0.35)]);
        let class = HypothesisClass::linear(1, ConstraintSpec::new(1.5, 1.0, 1.0, PNorm::L2).unwrap());
        let cfg = AbstentionConfig::new(0.2, 0.3, PNorm::L2).unwrap();
        for phi in [PhiSpec::hinge(), PhiSpec::exponential(), PhiSpec::sigmoid(0.7).unwrap()] {
            let loss = LossSelector::Surrogate(phi);
            let (gap, _) = minimizability_gap(&loss, &cfg, &d, &class, RStarMethod::DEFAULT_GRID).unwrap();
            assert!(gap.abs() <= 1e-10, "{phi}: {gap}");
        }
    }

    #[test]
    fn conflicting_preferences_have_positive_gap() {
        // Same difference vector, opposite preferences, unequal weights.
        let d = line_dist(&[(0.0, 0.5, 0.6, 1.0), (0.3, 0.8, 0.4, 0.0)]);
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let cfg = AbstentionConfig::none(PNorm::L2);
        for loss in [LossSelector::Misranking, LossSelector::Surrogate(PhiSpec::exponential())] {
            let (gap, _) = minimizability_gap(&loss, &cfg, &d, &class, RStarMethod::DEFAULT_GRID).unwrap();
            assert!(gap > 1e-3, "{loss}: {gap}");
        }
    }

    #[test]
    fn pgd_agrees_with_grid_on_linear_instance() {
        let d = line_dist(&[(0.0, 0.5, 0.5, 0.9), (0.4, -0.4, 0.5, 0.3)]);
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let cfg = AbstentionConfig::none(PNorm::L2);
        let loss = LossSelector::Surrogate(PhiSpec::exponential());
        let grid = best_in_class_risk(&loss, &cfg, &d, &class, RStarMethod::DEFAULT_GRID).unwrap();
        let pgd = best_in_class_risk(&loss, &cfg, &d, &class, RStarMethod::MultiRestartPgd { restarts: 4, iters: 200, seed: 1 })
            .unwrap();
        assert!((grid.value - pgd.value).abs() < 1e-6, "{} vs {}", grid.value, pgd.value);
    }

    #[test]
    fn bipartite_expected_risk_enumerates_product_pairs() {
        let b = BipartiteDistribution::new(vec![vec![0.0], vec![0.5]], vec![0.4, 0.6], vec![0.9, 0.2], PNorm::L2).unwrap();
        let d: Distribution = b.into();
        let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
        let h = class.from_params(&[-1.0, 0.0]).unwrap();
        let none = AbstentionConfig::none(PNorm::L2);
        // h(x0) = 0 > h(x1) = -0.5: off-diagonal pairs misrank only when x0 is negative
        // and x1 positive. Diagonal pairs are ties and cost 1/2 on mixed labels.
        let off = 0.4 * 0.6 * (0.2 * 0.1) + 0.6 * 0.4 * (0.2 * 0.1);
        let diag = 0.4 * 0.4 * (0.9 * 0.1) + 0.6 * 0.6 * (0.2 * 0.8);
        let hand = off + diag;
        assert_abs_diff_eq!(expected_risk(&LossSelector::Misranking, &none, &h, &d).unwrap(), hand, epsilon = 1e-15);
        // Abstaining on everything costs c for every pair, diagonal included.
        let all = AbstentionConfig::new(5.0, 0.3, PNorm::L2).unwrap();
        assert_abs_diff_eq!(expected_risk(&LossSelector::Target, &all, &h, &d).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn grid_rejects_unsupported_classes() {
        let d = line_dist(&[(0.0, 0.5, 1.0, 0.9)]);
        let nn = HypothesisClass::relu_net(1, 2, ConstraintSpec::unit(PNorm::L2));
        let none = AbstentionConfig::none(PNorm::L2);
        let r = best_in_class_risk(&LossSelector::Misranking, &none, &d, &nn, RStarMethod::DEFAULT_GRID);
        assert!(matches!(r, Err(RiskError::Unsupported(_))));
    }
}
