//! Projected SGD with Nesterov momentum on the empirical surrogate risk.
//!
//! A general training set is a list of labelled pairs. A bipartite training set
//! is a list of labelled points and the objective averages over all `n²`
//! ordered pairs (including `i = j`, which contribute zero), so it coincides
//! with the surrogate risk under the empirical product law.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distribution::{
    BipartiteDistribution, Distribution, DistributionError, GeneralDistribution, GeneralExample, PointExample,
    Setting,
};
use crate::hypothesis::{Hypothesis, HypothesisError};
use crate::losses::{
    abstention_loss, bipartite_abstention_loss, AbstentionConfig, Label, LossError, PNorm, PhiSpec, ScoredPair,
};
use crate::numeric::{pairwise_sum, try_par_indexed_sum};
use crate::report::fmt_g9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    Empty,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is {data} but the configuration asks for {config}")]
    SettingMismatch { data: Setting, config: Setting },
    #[error("example {index} has dimension {found}, model expects {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error("initial hypothesis violates its constraints")]
    Infeasible,
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("diverged at epoch {epoch}: mean surrogate loss {loss} exceeds 10x the initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate at `step` out of `total` steps.
    pub fn rate(self, lr0: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr0,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * lr0 * (1.0 + (PI * frac).cos())
            }
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LrSchedule {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(TrainError::Config(format!("unknown learning-rate schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub phi: PhiSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub setting: Setting,
    /// Target loss reported alongside the surrogate in the trace. Never affects the updates.
    pub target: AbstentionConfig,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 200;
    pub const DEFAULT_BATCH_SIZE: usize = 64;
    pub const DEFAULT_LR0: f64 = 0.1;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    pub fn new(phi: PhiSpec, setting: Setting, p: PNorm) -> Self {
        TrainConfig {
            phi,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            lr0: Self::DEFAULT_LR0,
            momentum: Self::DEFAULT_MOMENTUM,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            setting,
            target: AbstentionConfig::none(p),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        // Zero is allowed: it freezes the model, which is useful as a baseline.
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(TrainError::Config(format!("lr0 must be a non-negative real, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Labels of one training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    General(Label),
    Bipartite(Label, Label),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairExample<'a> {
    pub x: &'a [f64],
    pub xp: &'a [f64],
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingSet {
    General(Vec<GeneralExample>),
    Bipartite(Vec<PointExample>),
}

impl TrainingSet {
    pub fn setting(&self) -> Setting {
        match self {
            TrainingSet::General(_) => Setting::General,
            TrainingSet::Bipartite(_) => Setting::Bipartite,
        }
    }

    /// Number of pairs in the objective.
    pub fn n_pairs(&self) -> usize {
        match self {
            TrainingSet::General(s) => s.len(),
            TrainingSet::Bipartite(s) => s.len() * s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_pairs() == 0
    }

    /// Pair `k` in row-major order (`(k / n, k % n)` for bipartite sets).
    pub fn pair(&self, k: usize) -> PairExample<'_> {
        match self {
            TrainingSet::General(s) => {
                let e = &s[k];
                PairExample { x: &e.x, xp: &e.xp, label: PairLabel::General(e.y) }
            }
            TrainingSet::Bipartite(s) => {
                let (a, b) = (&s[k / s.len()], &s[k % s.len()]);
                PairExample { x: &a.x, xp: &b.x, label: PairLabel::Bipartite(a.y, b.y) }
            }
        }
    }

    fn check_dim(&self, expected: usize) -> Result<(), TrainError> {
        let dims: Vec<usize> = match self {
            TrainingSet::General(s) => s.iter().flat_map(|e| [e.x.len(), e.xp.len()]).collect(),
            TrainingSet::Bipartite(s) => s.iter().map(|e| e.x.len()).collect(),
        };
        match dims.iter().position(|&d| d != expected) {
            Some(i) => {
                let index = if self.setting() == Setting::General { i / 2 } else { i };
                Err(TrainError::Dimension { index, expected, found: dims[i] })
            }
            None => Ok(()),
        }
    }

    /// The empirical law whose risks equal this set's empirical means.
    pub fn to_distribution(&self, p: PNorm) -> Result<Distribution, DistributionError> {
        Ok(match self {
            TrainingSet::General(s) => GeneralDistribution::empirical(s, p)?.into(),
            TrainingSet::Bipartite(s) => BipartiteDistribution::empirical(s, p)?.into(),
        })
    }
}

/// Surrogate loss of one pair; adds `scale · ∂loss/∂θ` into `grad` when given.
fn pair_surrogate(
    h: &Hypothesis,
    phi: &PhiSpec,
    pair: &PairExample<'_>,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64, TrainError> {
    // Both settings reduce to Φ(σ · (h(a) - h(b))) for an orientation σ and an ordered pair (a, b).
    let (sigma, a, b) = match pair.label {
        PairLabel::General(y) => (y.value(), pair.xp, pair.x),
        PairLabel::Bipartite(y, yp) if y != yp => (y.value(), pair.x, pair.xp),
        PairLabel::Bipartite(..) => return Ok(0.0),
    };
    let t = sigma * (h.eval(a)? - h.eval(b)?);
    if let Some(g) = grad {
        let coef = scale * sigma * phi.grad(t)?;
        if coef != 0.0 {
            h.accumulate_grad(a, coef, g);
            h.accumulate_grad(b, -coef, g);
        }
    }
    Ok(phi.eval(t)?)
}

fn pair_target(h: &Hypothesis, cfg: &AbstentionConfig, pair: &PairExample<'_>) -> Result<f64, TrainError> {
    let sp = ScoredPair::new(h.eval(pair.x)?, h.eval(pair.xp)?, cfg.p().distance(pair.x, pair.xp))?;
    Ok(match pair.label {
        PairLabel::General(y) => abstention_loss(&sp, y, cfg),
        PairLabel::Bipartite(y, yp) => bipartite_abstention_loss(&sp, y, yp, cfg),
    })
}

/// Mean surrogate loss of `h` over every pair of `data`.
pub fn empirical_surrogate_loss(h: &Hypothesis, data: &TrainingSet, phi: &PhiSpec) -> Result<f64, TrainError> {
    let n = data.n_pairs();
    if n == 0 {
        return Err(TrainError::Empty);
    }
    Ok(try_par_indexed_sum(n, |k| pair_surrogate(h, phi, &data.pair(k), 1.0, None))? / n as f64)
}

/// Mean target abstention loss of `h` over every pair of `data`.
pub fn empirical_target_loss(h: &Hypothesis, data: &TrainingSet, cfg: &AbstentionConfig) -> Result<f64, TrainError> {
    let n = data.n_pairs();
    if n == 0 {
        return Err(TrainError::Empty);
    }
    Ok(try_par_indexed_sum(n, |k| pair_target(h, cfg, &data.pair(k)))? / n as f64)
}

/// Mean surrogate loss over `batch` and its gradient in the flat parameter layout.
pub fn minibatch_surrogate_grad(
    h: &Hypothesis,
    batch: &[PairExample<'_>],
    phi: &PhiSpec,
) -> Result<(f64, Vec<f64>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Empty);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; h.num_params()];
    let mut losses = Vec::with_capacity(batch.len());
    for pair in batch {
        losses.push(pair_surrogate(h, phi, pair, scale, Some(&mut grad))?);
    }
    Ok((pairwise_sum(&losses) * scale, grad))
}

/// Full-sample gradient of [`empirical_surrogate_loss`].
pub fn empirical_surrogate_grad(h: &Hypothesis, data: &TrainingSet, phi: &PhiSpec) -> Result<Vec<f64>, TrainError> {
    let pairs: Vec<PairExample<'_>> = (0..data.n_pairs()).map(|k| data.pair(k)).collect();
    Ok(minibatch_surrogate_grad(h, &pairs, phi)?.1)
}

/// Momentum buffer carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
    pub step: usize,
}

impl SgdState {
    pub fn new(h: &Hypothesis) -> Self {
        SgdState { velocity: vec![0.0; h.num_params()], step: 0 }
    }
}

/// One Nesterov step `v ← μv + g`, `θ ← θ − lr (g + μv)`, followed by projection.
pub fn sgd_step(
    h: &Hypothesis,
    batch: &[PairExample<'_>],
    state: &mut SgdState,
    phi: &PhiSpec,
    lr: f64,
    momentum: f64,
) -> Result<Hypothesis, TrainError> {
    if state.velocity.len() != h.num_params() {
        return Err(TrainError::Config(format!(
            "velocity has {} entries, model has {} parameters",
            state.velocity.len(),
            h.num_params()
        )));
    }
    let (_, grad) = minibatch_surrogate_grad(h, batch, phi)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step: state.step });
    }
    let mut theta = h.flat_params();
    for ((t, v), g) in theta.iter_mut().zip(state.velocity.iter_mut()).zip(&grad) {
        *v = momentum * *v + g;
        *t -= lr * (g + momentum * *v);
    }
    state.step += 1;
    Ok(h.with_flat_params(&theta)?.project())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub mean_surrogate_loss: f64,
    pub mean_target_abstention_loss: f64,
}

/// Per-epoch losses of the incumbent; row 0 is the projected initial model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub const CSV_HEADER: [&'static str; 3] = ["epoch", "mean_surrogate_loss", "mean_target_abstention_loss"];

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![r.epoch.to_string(), fmt_g9(r.mean_surrogate_loss), fmt_g9(r.mean_target_abstention_loss)]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub hypothesis: Hypothesis,
    pub trace: LossTrace,
    /// Epoch at which the returned model was reached; 0 means the initial model.
    pub best_epoch: usize,
}

pub fn train(data: &TrainingSet, h0: &Hypothesis, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if data.setting() != cfg.setting {
        return Err(TrainError::SettingMismatch { data: data.setting(), config: cfg.setting });
    }
    data.check_dim(h0.dim())?;
    if !h0.is_feasible(1e-9) {
        return Err(TrainError::Infeasible);
    }

    let phi = &cfg.phi;
    let mut h = h0.project();
    let initial = empirical_surrogate_loss(&h, data, phi)?;
    let mut best = (h.clone(), initial, 0usize);
    let mut trace = LossTrace::default();
    let row = |epoch, h: &Hypothesis, surrogate| -> Result<TraceRow, TrainError> {
        Ok(TraceRow { epoch, mean_surrogate_loss: surrogate, mean_target_abstention_loss: empirical_target_loss(h, data, &cfg.target)? })
    };
    trace.rows.push(row(0, &h, initial)?);

    let n = data.n_pairs();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = SgdState::new(&h);
    let mut best_row = trace.rows[0];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PairExample<'_>> = chunk.iter().map(|&k| data.pair(k)).collect();
            let lr = cfg.lr_schedule.rate(cfg.lr0, state.step, total_steps);
            h = sgd_step(&h, &batch, &mut state, phi, lr, cfg.momentum)?;
        }
        let loss = empirical_surrogate_loss(&h, data, phi)?;
        if !loss.is_finite() || (initial > 0.0 && loss > 10.0 * initial) {
            return Err(TrainError::Diverged { epoch, loss, initial });
        }
        if loss < best.1 {
            best = (h.clone(), loss, epoch);
            best_row = row(epoch, &h, loss)?;
        }
        trace.rows.push(TraceRow { epoch, ..best_row });
    }
    Ok(TrainOutcome { hypothesis: best.0, trace, best_epoch: best.2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{ConstraintSpec, HypothesisClass, Params};
    use crate::losses::Sign;
    use crate::risk::{expected_risk, LossSelector};

    fn linear(w: &[f64], b: f64) -> Hypothesis {
        Hypothesis::new(Params::Linear { w: w.to_vec(), b }, ConstraintSpec::unit(PNorm::L2)).unwrap()
    }

    fn general_set() -> TrainingSet {
        let ex = |x: f64, xp: f64, y| GeneralExample { x: vec![x], xp: vec![xp], y };
        TrainingSet::General(vec![ex(-0.4, 0.3, Sign::Pos), ex(0.2, -0.5, Sign::Neg), ex(0.1, 0.6, Sign::Pos)])
    }

    #[test]
    fn single_hinge_step_is_minus_lr_times_subgradient() {
        let ex = [GeneralExample { x: vec![0.1, 0.2], xp: vec![0.3, -0.1], y: Sign::Pos }];
        let data = TrainingSet::General(ex.to_vec());
        let h = linear(&[0.1, 0.1], 0.0);
        let mut state = SgdState::new(&h);
        let batch = [data.pair(0)];
        let next = sgd_step(&h, &batch, &mut state, &PhiSpec::hinge(), 0.5, 0.0).unwrap();
        // Margin 0.01 < 1, so the subgradient in w is -(x' - x) and zero in b.
        let want = [0.1 + 0.5 * 0.2, 0.1 + 0.5 * -0.3, 0.0];
        for (got, want) in next.flat_params().iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_model_in_place() {
        let data = TrainingSet::General(vec![GeneralExample { x: vec![0.0], xp: vec![1.0], y: Sign::Pos }]);
        let h = linear(&[1.0], 0.25);
        let mut state = SgdState::new(&h);
        let next = sgd_step(&h, &[data.pair(0)], &mut state, &PhiSpec::hinge(), 1.0, 0.9).unwrap();
        assert_eq!(next, h);
    }

    #[test]
    fn zero_learning_rate_returns_projected_start() {
        let data = general_set();
        let h0 = linear(&[0.6], 0.3);
        let mut cfg = TrainConfig::new(PhiSpec::exponential(), Setting::General, PNorm::L2);
        cfg.lr0 = 0.0;
        cfg.epochs = 3;
        let out = train(&data, &h0, &cfg).unwrap();
        assert_eq!(out.hypothesis, h0.project());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = general_set();
        let h0 = linear(&[0.0], 0.0);
        let base = TrainConfig::new(PhiSpec::hinge(), Setting::General, PNorm::L2);
        for cfg in [
            TrainConfig { epochs: 0, ..base },
            TrainConfig { batch_size: 0, ..base },
            TrainConfig { momentum: 1.0, ..base },
            TrainConfig { lr0: -1.0, ..base },
        ] {
            assert!(matches!(train(&data, &h0, &cfg), Err(TrainError::Config(_))));
        }
        let bip = TrainConfig { setting: Setting::Bipartite, ..base };
        assert!(matches!(train(&data, &h0, &bip), Err(TrainError::SettingMismatch { .. })));
        let infeasible = linear(&[3.0], 0.0);
        assert_eq!(train(&data, &infeasible, &base), Err(TrainError::Infeasible));
    }

    #[test]
    fn divergence_guard_fires() {
        // Conflicting labels on one pair: the optimum is w = 0, but a huge step overshoots to
        // the boundary of a wide ball where the exponential loss is about e^10 / 2.
        let ex = |y| GeneralExample { x: vec![0.0], xp: vec![1.0], y };
        let data = TrainingSet::General(vec![ex(Sign::Pos), ex(Sign::Neg), ex(Sign::Neg)]);
        let c = ConstraintSpec::new(10.0, 1.0, 1.0, PNorm::L2).unwrap();
        let h0 = Hypothesis::new(Params::Linear { w: vec![0.01], b: 0.0 }, c).unwrap();
        let cfg = TrainConfig {
            lr0: 1e6,
            momentum: 0.0,
            lr_schedule: LrSchedule::Constant,
            ..TrainConfig::new(PhiSpec::exponential(), Setting::General, PNorm::L2)
        };
        match train(&data, &h0, &cfg) {
            Err(TrainError::Diverged { epoch: 1, loss, initial }) => assert!(loss > 10.0 * initial),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_matches_risk_module_on_empirical_law() {
        let data = general_set();
        let h0 = linear(&[0.0], 0.0);
        let cfg = TrainConfig { epochs: 20, batch_size: 2, ..TrainConfig::new(PhiSpec::hinge(), Setting::General, PNorm::L2) };
        let out = train(&data, &h0, &cfg).unwrap();
        let dist = data.to_distribution(PNorm::L2).unwrap();
        let risk = expected_risk(&LossSelector::Surrogate(cfg.phi), &cfg.target, &out.hypothesis, &dist).unwrap();
        assert!((risk - out.trace.last().unwrap().mean_surrogate_loss).abs() < 1e-12);
        let target = expected_risk(&LossSelector::Target, &cfg.target, &out.hypothesis, &dist).unwrap();
        assert!((target - out.trace.last().unwrap().mean_target_abstention_loss).abs() < 1e-12);
    }

    #[test]
    fn bipartite_objective_is_product_law_risk() {
        let pt = |x: f64, y| PointExample { x: vec![x, -x / 2.0], y };
        let data = TrainingSet::Bipartite(vec![pt(0.3, Sign::Pos), pt(-0.2, Sign::Neg), pt(0.5, Sign::Neg), pt(0.3, Sign::Pos)]);
        let class = HypothesisClass::relu_net(2, 3, ConstraintSpec::unit(PNorm::L2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = class.random(&mut rng);
        let phi = PhiSpec::sigmoid(2.0).unwrap();
        let dist = data.to_distribution(PNorm::L2).unwrap();
        let want = expected_risk(&LossSelector::Surrogate(phi), &AbstentionConfig::none(PNorm::L2), &h, &dist).unwrap();
        assert!((empirical_surrogate_loss(&h, &data, &phi).unwrap() - want).abs() < 1e-12);
    }
}
