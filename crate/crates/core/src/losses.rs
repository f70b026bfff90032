//! Pointwise ranking losses.
//!
//! Two settings share one margin convention. In the general pairwise setting a
//! labelled triple `(x, x', y)` asks whether `x'` should be ranked above `x`
//! (`y = +1`) or below it (`y = -1`); `x'` is considered ranked above `x` when
//! `h(x') >= h(x)`. In the bipartite setting each point carries its own label
//! and a pair is misranked when the negative point outscores the positive one.
//!
//! Abstention variants charge a fixed cost `c` instead of the misranking
//! indicator whenever the two inputs are within distance `gamma` of each other
//! (boundary inclusive).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Errors raised by pointwise loss evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("exponential loss saturated at margin {0}; margins this large violate the norm constraints")]
    Saturated(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A sign in `{-1, +1}`, also used for labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Neg,
    Pos,
}

/// Labels share the sign type.
pub type Label = Sign;

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }
}

/// `sign(u) = 1{u >= 0} - 1{u < 0}`; ties map to `+1`.
///
/// This is the only place the tie convention lives; every loss routes through it.
pub fn sign(u: f64) -> Result<Sign, LossError> {
    if !u.is_finite() {
        return Err(LossError::NonFinite(u));
    }
    Ok(if u >= 0.0 { Sign::Pos } else { Sign::Neg })
}

/// Which auxiliary margin function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhiKind {
    Hinge,
    Exponential,
    Sigmoid,
}

impl PhiKind {
    pub const ALL: [PhiKind; 3] = [PhiKind::Hinge, PhiKind::Exponential, PhiKind::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            PhiKind::Hinge => "hinge",
            PhiKind::Exponential => "exp",
            PhiKind::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hinge" => Ok(PhiKind::Hinge),
            "exp" | "exponential" | "rankboost" => Ok(PhiKind::Exponential),
            "sig" | "sigmoid" => Ok(PhiKind::Sigmoid),
            other => Err(LossError::InvalidParameter(format!("unknown phi kind `{other}`"))),
        }
    }
}

/// A non-increasing margin function upper bounding `u -> 1{u <= 0}`.
///
/// `k` is the sigmoid slope and is ignored by the other kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiSpec {
    kind: PhiKind,
    k: f64,
}

impl PhiSpec {
    pub const DEFAULT_SIGMOID_SLOPE: f64 = 1.0;

    pub fn hinge() -> Self {
        PhiSpec { kind: PhiKind::Hinge, k: 1.0 }
    }

    pub fn exponential() -> Self {
        PhiSpec { kind: PhiKind::Exponential, k: 1.0 }
    }

    pub fn sigmoid(k: f64) -> Result<Self, LossError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(LossError::InvalidParameter(format!("sigmoid slope must be positive, got {k}")));
        }
        Ok(PhiSpec { kind: PhiKind::Sigmoid, k })
    }

    pub fn new(kind: PhiKind, k: f64) -> Result<Self, LossError> {
        match kind {
            PhiKind::Hinge => Ok(Self::hinge()),
            PhiKind::Exponential => Ok(Self::exponential()),
            PhiKind::Sigmoid => Self::sigmoid(k),
        }
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    /// Sigmoid slope; `1.0` for the other kinds.
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn eval(&self, t: f64) -> Result<f64, LossError> {
        if !t.is_finite() {
            return Err(LossError::NonFinite(t));
        }
        match self.kind {
            PhiKind::Hinge => Ok((1.0 - t).max(0.0)),
            PhiKind::Exponential => {
                let v = (-t).exp();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(LossError::Saturated(t))
                }
            }
            PhiKind::Sigmoid => Ok(1.0 - (self.k * t).tanh()),
        }
    }

    /// Derivative of [`PhiSpec::eval`]. The hinge kink at `t = 1` takes subgradient `0`.
    pub fn grad(&self, t: f64) -> Result<f64, LossError> {
        if !t.is_finite() {
            return Err(LossError::NonFinite(t));
        }
        match self.kind {
            PhiKind::Hinge => Ok(if t < 1.0 { -1.0 } else { 0.0 }),
            PhiKind::Exponential => {
                let v = (-t).exp();
                if v.is_finite() {
                    Ok(-v)
                } else {
                    Err(LossError::Saturated(t))
                }
            }
            PhiKind::Sigmoid => {
                let th = (self.k * t).tanh();
                Ok(-self.k * (1.0 - th * th))
            }
        }
    }
}

impl fmt::Display for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PhiKind::Sigmoid => write!(f, "sigmoid(k={})", self.k),
            kind => f.write_str(kind.name()),
        }
    }
}

/// Supported ℓp exponents. Conjugate pairs are (1, ∞), (2, 2) and (∞, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PNorm {
    L1,
    L2,
    LInf,
}

impl PNorm {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            PNorm::L1 => v.iter().map(|a| a.abs()).sum(),
            PNorm::L2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            PNorm::LInf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            PNorm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            PNorm::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            PNorm::LInf => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    /// The conjugate exponent `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> PNorm {
        match self {
            PNorm::L1 => PNorm::LInf,
            PNorm::L2 => PNorm::L2,
            PNorm::LInf => PNorm::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PNorm::L1 => "1",
            PNorm::L2 => "2",
            PNorm::LInf => "inf",
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PNorm {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(PNorm::L1),
            "2" | "l2" => Ok(PNorm::L2),
            "inf" | "infinity" | "linf" | "max" => Ok(PNorm::LInf),
            other => Err(LossError::InvalidParameter(format!(
                "unsupported norm exponent `{other}` (expected 1, 2 or inf)"
            ))),
        }
    }
}

/// Abstention threshold, cost and the norm used to measure pair distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstentionConfig {
    gamma: f64,
    cost: f64,
    p: PNorm,
}

impl AbstentionConfig {
    pub fn new(gamma: f64, cost: f64, p: PNorm) -> Result<Self, LossError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(LossError::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(0.0..=1.0).contains(&cost) {
            return Err(LossError::InvalidParameter(format!("cost must lie in [0, 1], got {cost}")));
        }
        Ok(AbstentionConfig { gamma, cost, p })
    }

    /// No abstention.
    pub fn none(p: PNorm) -> Self {
        AbstentionConfig { gamma: 0.0, cost: 0.0, p }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn p(&self) -> PNorm {
        self.p
    }

    pub fn with_gamma(self, gamma: f64) -> Result<Self, LossError> {
        Self::new(gamma, self.cost, self.p)
    }

    /// `dist <= gamma`: the boundary abstains. `gamma = 0` turns abstention off,
    /// coincident inputs included.
    pub fn abstains(&self, dist: f64) -> bool {
        self.gamma > 0.0 && dist <= self.gamma
    }
}

/// The two scores of a pair and the distance between its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub hx: f64,
    pub hxp: f64,
    pub dist: f64,
}

impl ScoredPair {
    pub fn new(hx: f64, hxp: f64, dist: f64) -> Result<Self, LossError> {
        for v in [hx, hxp, dist, hxp - hx] {
            if !v.is_finite() {
                return Err(LossError::NonFinite(v));
            }
        }
        if dist < 0.0 {
            return Err(LossError::InvalidParameter(format!("distance must be >= 0, got {dist}")));
        }
        Ok(ScoredPair { hx, hxp, dist })
    }

    /// A pair whose margin `h(x') - h(x)` equals `margin`.
    pub fn from_margin(margin: f64, dist: f64) -> Result<Self, LossError> {
        Self::new(0.0, margin, dist)
    }

    /// `h(x') - h(x)`.
    pub fn margin(&self) -> f64 {
        self.hxp - self.hx
    }
}

fn pair_sign(sp: &ScoredPair) -> Sign {
    sign(sp.margin()).expect("ScoredPair margins are finite by construction")
}

/// `1{y != sign(h(x') - h(x))}`.
pub fn misranking_loss(sp: &ScoredPair, y: Label) -> f64 {
    if pair_sign(sp) == y {
        0.0
    } else {
        1.0
    }
}

pub fn abstention_loss(sp: &ScoredPair, y: Label, cfg: &AbstentionConfig) -> f64 {
    if cfg.abstains(sp.dist) {
        cfg.cost
    } else {
        misranking_loss(sp, y)
    }
}

/// `Φ(y (h(x') - h(x)))`.
pub fn surrogate_loss(phi: &PhiSpec, sp: &ScoredPair, y: Label) -> Result<f64, LossError> {
    phi.eval(y.value() * sp.margin())
}

/// `1{(y - y')(h(x) - h(x')) < 0} + 1/2 · 1{h(x) = h(x') and y != y'}`.
pub fn bipartite_misranking_loss(sp: &ScoredPair, y: Label, yp: Label) -> f64 {
    if y == yp {
        return 0.0;
    }
    if sp.hx == sp.hxp {
        return 0.5;
    }
    // y != yp, so (y - y') has the sign of y.
    let product = y.value() * (sp.hx - sp.hxp);
    if product < 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn bipartite_abstention_loss(sp: &ScoredPair, y: Label, yp: Label, cfg: &AbstentionConfig) -> f64 {
    if cfg.abstains(sp.dist) {
        cfg.cost
    } else {
        bipartite_misranking_loss(sp, y, yp)
    }
}

/// `Φ((y - y')(h(x) - h(x')) / 2) · 1{y != y'}`.
pub fn bipartite_surrogate_loss(phi: &PhiSpec, sp: &ScoredPair, y: Label, yp: Label) -> Result<f64, LossError> {
    if y == yp {
        return Ok(0.0);
    }
    let arg = (y.value() - yp.value()) * (sp.hx - sp.hxp) / 2.0;
    phi.eval(arg)
}
