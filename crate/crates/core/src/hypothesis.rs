//! Norm-constrained linear scorers and one-hidden-layer ReLU networks.
//!
//! Inputs live in the unit ℓp ball and weight vectors in an ℓq ball of radius
//! `W`, with `q` conjugate to `p`. Under these constraints the set of
//! achievable score differences `h(x') - h(x)` over the whole family is the
//! symmetric interval `[-W_eff·‖x - x'‖_p, W_eff·‖x - x'‖_p]`, where `W_eff`
//! is `W` for linear models and `Λ·W` for ReLU networks. Biases cancel in
//! score differences and never affect that interval.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::losses::PNorm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HypothesisError {
    #[error("input has dimension {got}, hypothesis expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    ReluNet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::ReluNet => "relu_nn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = HypothesisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(ModelKind::Linear),
            "relu_nn" | "nn" | "relu" => Ok(ModelKind::ReluNet),
            other => Err(HypothesisError::InvalidConstraint(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Norm-ball constraint parameters shared by every member of a family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpec {
    w_bound: f64,
    b_bound: f64,
    lambda: f64,
    q: PNorm,
}

impl ConstraintSpec {
    pub fn new(w_bound: f64, b_bound: f64, lambda: f64, q: PNorm) -> Result<Self, HypothesisError> {
        if !(w_bound.is_finite() && w_bound > 0.0) {
            return Err(HypothesisError::InvalidConstraint(format!("W must be positive, got {w_bound}")));
        }
        if !(b_bound.is_finite() && b_bound >= 0.0) {
            return Err(HypothesisError::InvalidConstraint(format!("B must be >= 0, got {b_bound}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(HypothesisError::InvalidConstraint(format!("Lambda must be positive, got {lambda}")));
        }
        Ok(ConstraintSpec { w_bound, b_bound, lambda, q })
    }

    /// `W = B = Λ = 1` with the given weight norm.
    pub fn unit(q: PNorm) -> Self {
        ConstraintSpec { w_bound: 1.0, b_bound: 1.0, lambda: 1.0, q }
    }

    pub fn w_bound(&self) -> f64 {
        self.w_bound
    }

    pub fn b_bound(&self) -> f64 {
        self.b_bound
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Norm on weight vectors.
    pub fn q(&self) -> PNorm {
        self.q
    }

    /// Norm on inputs, conjugate to `q`.
    pub fn p(&self) -> PNorm {
        self.q.dual()
    }

    /// Lipschitz constant of the family with respect to `‖·‖_p`.
    pub fn w_eff(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Linear => self.w_bound,
            ModelKind::ReluNet => self.lambda * self.w_bound,
        }
    }
}

/// Closed interval of achievable score differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginRange {
    pub lo: f64,
    pub hi: f64,
}

impl MarginRange {
    pub fn contains(&self, m: f64, tol: f64) -> bool {
        m >= self.lo - tol && m <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `{h(x') - h(x) : h in H}` for a pair at distance `dist`.
pub fn margin_range(constraints: &ConstraintSpec, kind: ModelKind, dist: f64) -> MarginRange {
    let r = constraints.w_eff(kind) * dist.max(0.0);
    MarginRange { lo: -r, hi: r }
}

/// A hypothesis family: kind, input dimension, hidden width and constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisClass {
    pub kind: ModelKind,
    pub dim: usize,
    /// Hidden width; ignored for linear models.
    pub hidden: usize,
    pub constraints: ConstraintSpec,
}

impl HypothesisClass {
    pub const DEFAULT_HIDDEN: usize = 16;

    pub fn linear(dim: usize, constraints: ConstraintSpec) -> Self {
        HypothesisClass { kind: ModelKind::Linear, dim, hidden: 0, constraints }
    }

    pub fn relu_net(dim: usize, hidden: usize, constraints: ConstraintSpec) -> Self {
        HypothesisClass { kind: ModelKind::ReluNet, dim, hidden: hidden.max(1), constraints }
    }

    pub fn w_eff(&self) -> f64 {
        self.constraints.w_eff(self.kind)
    }

    pub fn margin_range(&self, dist: f64) -> MarginRange {
        margin_range(&self.constraints, self.kind, dist)
    }

    /// The null hypothesis `x -> 0`.
    pub fn null(&self) -> Hypothesis {
        let params = match self.kind {
            ModelKind::Linear => Params::Linear { w: vec![0.0; self.dim], b: 0.0 },
            ModelKind::ReluNet => Params::ReluNet {
                w: vec![vec![0.0; self.dim]; self.hidden],
                b: vec![0.0; self.hidden],
                u: vec![0.0; self.hidden],
            },
        };
        Hypothesis { params, constraints: self.constraints }
    }

    /// Parameters drawn uniformly from a bounding box, then projected onto the family.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Hypothesis {
        let c = &self.constraints;
        let mut box_vec = |n: usize, r: f64| -> Vec<f64> {
            (0..n).map(|_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 }).collect()
        };
        let params = match self.kind {
            ModelKind::Linear => {
                let w = box_vec(self.dim, c.w_bound);
                let b = box_vec(1, c.b_bound)[0];
                Params::Linear { w, b }
            }
            ModelKind::ReluNet => {
                let w = (0..self.hidden).map(|_| box_vec(self.dim, c.w_bound)).collect();
                let b = box_vec(self.hidden, c.b_bound);
                let u = box_vec(self.hidden, c.lambda);
                Params::ReluNet { w, b, u }
            }
        };
        Hypothesis { params, constraints: *c }.project()
    }

    pub fn from_params(&self, flat: &[f64]) -> Result<Hypothesis, HypothesisError> {
        self.null().with_flat_params(flat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Linear { w: Vec<f64>, b: f64 },
    /// `x -> Σ_j u_j (w_j · x + b_j)_+`.
    ReluNet { w: Vec<Vec<f64>>, b: Vec<f64>, u: Vec<f64> },
}

/// A concrete scorer together with the constraints it must satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    params: Params,
    constraints: ConstraintSpec,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Hypothesis {
    pub fn new(params: Params, constraints: ConstraintSpec) -> Result<Self, HypothesisError> {
        if let Params::ReluNet { w, b, u } = &params {
            let n = w.len();
            if n == 0 || b.len() != n || u.len() != n {
                return Err(HypothesisError::InvalidConstraint(
                    "hidden weights, biases and output weights must share a non-zero length".into(),
                ));
            }
            let d = w[0].len();
            if w.iter().any(|row| row.len() != d) {
                return Err(HypothesisError::InvalidConstraint("hidden weight rows differ in length".into()));
            }
        }
        let all_finite = match &params {
            Params::Linear { w, b } => w.iter().chain(std::iter::once(b)).all(|v| v.is_finite()),
            Params::ReluNet { w, b, u } => w.iter().flatten().chain(b).chain(u).all(|v| v.is_finite()),
        };
        if !all_finite {
            return Err(HypothesisError::InvalidConstraint("parameters must be finite".into()));
        }
        Ok(Hypothesis { params, constraints })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn constraints(&self) -> &ConstraintSpec {
        &self.constraints
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            Params::Linear { .. } => ModelKind::Linear,
            Params::ReluNet { .. } => ModelKind::ReluNet,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            Params::Linear { w, .. } => w.len(),
            Params::ReluNet { w, .. } => w[0].len(),
        }
    }

    pub fn hidden(&self) -> usize {
        match &self.params {
            Params::Linear { .. } => 0,
            Params::ReluNet { u, .. } => u.len(),
        }
    }

    pub fn class(&self) -> HypothesisClass {
        HypothesisClass { kind: self.kind(), dim: self.dim(), hidden: self.hidden(), constraints: self.constraints }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, HypothesisError> {
        if x.len() != self.dim() {
            return Err(HypothesisError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Linear { w, b } => dot(w, x) + b,
            Params::ReluNet { w, b, u } => {
                w.iter().zip(b).zip(u).map(|((wj, bj), uj)| uj * (dot(wj, x) + bj).max(0.0)).sum()
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.params {
            Params::Linear { w, .. } => w.len() + 1,
            Params::ReluNet { w, u, .. } => u.len() * (w[0].len() + 2),
        }
    }

    /// Parameters flattened as `[w.., b]` (linear) or `[w row-major.., b.., u..]` (network).
    pub fn flat_params(&self) -> Vec<f64> {
        match &self.params {
            Params::Linear { w, b } => w.iter().copied().chain(std::iter::once(*b)).collect(),
            Params::ReluNet { w, b, u } => w.iter().flatten().chain(b).chain(u).copied().collect(),
        }
    }

    /// Same shape, new parameters. No projection is applied.
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Hypothesis, HypothesisError> {
        if flat.len() != self.num_params() {
            return Err(HypothesisError::ParamLength { expected: self.num_params(), got: flat.len() });
        }
        let params = match &self.params {
            Params::Linear { w, .. } => {
                let d = w.len();
                Params::Linear { w: flat[..d].to_vec(), b: flat[d] }
            }
            Params::ReluNet { w, .. } => {
                let (n, d) = (w.len(), w[0].len());
                let rows = flat[..n * d].chunks(d).map(<[f64]>::to_vec).collect();
                Params::ReluNet {
                    w: rows,
                    b: flat[n * d..n * d + n].to_vec(),
                    u: flat[n * d + n..].to_vec(),
                }
            }
        };
        Hypothesis::new(params, self.constraints)
    }

    /// Adds `∂h(x)/∂θ · scale` into `grad` (flat layout) and returns `h(x)`.
    pub fn accumulate_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.num_params());
        match &self.params {
            Params::Linear { w, b } => {
                let d = w.len();
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += scale * xi;
                }
                grad[d] += scale;
                dot(w, x) + b
            }
            Params::ReluNet { w, b, u } => {
                let (n, d) = (w.len(), w[0].len());
                let mut value = 0.0;
                for j in 0..n {
                    let z = dot(&w[j], x) + b[j];
                    if z > 0.0 {
                        value += u[j] * z;
                        let s = scale * u[j];
                        for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *g += s * xi;
                        }
                        grad[n * d + j] += s;
                        grad[n * d + n + j] += scale * z;
                    }
                }
                value
            }
        }
    }

    /// Nearest point (per block) of the constraint set.
    pub fn project(&self) -> Hypothesis {
        let c = &self.constraints;
        let clip_b = |b: f64| b.clamp(-c.b_bound, c.b_bound);
        let params = match &self.params {
            Params::Linear { w, b } => {
                Params::Linear { w: project_norm_ball(w, c.q, c.w_bound), b: clip_b(*b) }
            }
            Params::ReluNet { w, b, u } => Params::ReluNet {
                w: w.iter().map(|wj| project_norm_ball(wj, c.q, c.w_bound)).collect(),
                b: b.iter().map(|&bj| clip_b(bj)).collect(),
                u: project_norm_ball(u, PNorm::L1, c.lambda),
            },
        };
        Hypothesis { params, constraints: self.constraints }
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        let c = &self.constraints;
        let b_ok = |b: f64| b.abs() <= c.b_bound + tol;
        match &self.params {
            Params::Linear { w, b } => c.q.norm(w) <= c.w_bound + tol && b_ok(*b),
            Params::ReluNet { w, b, u } => {
                w.iter().all(|wj| c.q.norm(wj) <= c.w_bound + tol)
                    && b.iter().all(|&bj| b_ok(bj))
                    && PNorm::L1.norm(u) <= c.lambda + tol
            }
        }
    }

    /// Plain-text `key = value` serialization; numbers use shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        let c = &self.constraints;
        let join = |v: &[f64]| v.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "kind = {}", self.kind());
        let _ = writeln!(out, "dim = {}", self.dim());
        let _ = writeln!(out, "hidden = {}", self.hidden());
        let _ = writeln!(out, "W = {:?}", c.w_bound);
        let _ = writeln!(out, "B = {:?}", c.b_bound);
        let _ = writeln!(out, "Lambda = {:?}", c.lambda);
        let _ = writeln!(out, "q = {}", c.q);
        match &self.params {
            Params::Linear { w, b } => {
                let _ = writeln!(out, "w = {}", join(w));
                let _ = writeln!(out, "b = {b:?}");
            }
            Params::ReluNet { w, b, u } => {
                let flat: Vec<f64> = w.iter().flatten().copied().collect();
                let _ = writeln!(out, "w = {}", join(&flat));
                let _ = writeln!(out, "b = {}", join(b));
                let _ = writeln!(out, "u = {}", join(u));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Hypothesis, HypothesisError> {
        let mut fields: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HypothesisError::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            fields.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| -> Result<(usize, &str), HypothesisError> {
            fields
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(l, _, v)| (*l, v.as_str()))
                .ok_or_else(|| HypothesisError::Parse { line: 0, msg: format!("missing key `{key}`") })
        };
        let parse_f = |key: &str| -> Result<f64, HypothesisError> {
            let (line, v) = get(key)?;
            v.parse::<f64>()
                .map_err(|e| HypothesisError::Parse { line, msg: format!("`{key}`: {e}") })
        };
        let parse_u = |key: &str| -> Result<usize, HypothesisError> {
            let (line, v) = get(key)?;
            v.parse::<usize>()
                .map_err(|e| HypothesisError::Parse { line, msg: format!("`{key}`: {e}") })
        };
        let parse_vec = |key: &str, len: usize| -> Result<Vec<f64>, HypothesisError> {
            let (line, v) = get(key)?;
            let vals = v
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HypothesisError::Parse { line, msg: format!("`{key}`: {e}") })?;
            if vals.len() != len {
                return Err(HypothesisError::Parse {
                    line,
                    msg: format!("`{key}` has {} values, expected {len}", vals.len()),
                });
            }
            Ok(vals)
        };

        let (line, kind_str) = get("kind")?;
        let kind: ModelKind =
            kind_str.parse().map_err(|e: HypothesisError| HypothesisError::Parse { line, msg: e.to_string() })?;
        let dim = parse_u("dim")?;
        let (qline, q_str) = get("q")?;
        let q: PNorm = q_str.parse().map_err(|e: crate::losses::LossError| HypothesisError::Parse {
            line: qline,
            msg: e.to_string(),
        })?;
        let constraints = ConstraintSpec::new(parse_f("W")?, parse_f("B")?, parse_f("Lambda")?, q)?;
        let params = match kind {
            ModelKind::Linear => Params::Linear { w: parse_vec("w", dim)?, b: parse_f("b")? },
            ModelKind::ReluNet => {
                let n = parse_u("hidden")?;
                if n == 0 || dim == 0 {
                    return Err(HypothesisError::Parse { line: 0, msg: "network needs hidden >= 1 and dim >= 1".into() });
                }
                let flat = parse_vec("w", n * dim)?;
                Params::ReluNet {
                    w: flat.chunks(dim).map(<[f64]>::to_vec).collect(),
                    b: parse_vec("b", n)?,
                    u: parse_vec("u", n)?,
                }
            }
        };
        Hypothesis::new(params, constraints)
    }
}

/// Euclidean projection of `v` onto the ℓq ball of the given radius.
pub fn project_norm_ball(v: &[f64], q: PNorm, radius: f64) -> Vec<f64> {
    match q {
        PNorm::L2 => {
            let n = PNorm::L2.norm(v);
            if n <= radius {
                v.to_vec()
            } else {
                v.iter().map(|a| a * (radius / n)).collect()
            }
        }
        PNorm::LInf => v.iter().map(|a| a.clamp(-radius, radius)).collect(),
        PNorm::L1 => project_l1_ball(v, radius),
    }
}

/// Sort-and-threshold projection onto `{z : ‖z‖_1 <= radius}`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    if PNorm::L1.norm(v) <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|a| a.abs()).collect();
    // Stable sort keeps equal magnitudes in index order.
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|a| a.signum() * (a.abs() - theta).max(0.0)).collect()
}

/// A vector in the unit dual ball maximizing `z · d`, so that `z · d = ‖d‖_p`.
pub fn dual_maximizer(d: &[f64], p: PNorm) -> Vec<f64> {
    match p {
        PNorm::L2 => {
            let n = PNorm::L2.norm(d);
            if n == 0.0 {
                vec![0.0; d.len()]
            } else {
                d.iter().map(|a| a / n).collect()
            }
        }
        PNorm::L1 => d.iter().map(|a| if *a == 0.0 { 0.0 } else { a.signum() }).collect(),
        PNorm::LInf => {
            let mut z = vec![0.0; d.len()];
            if let Some((i, _)) = d.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
                z[i] = if d[i] == 0.0 { 0.0 } else { d[i].signum() };
            }
            z
        }
    }
}

/// Uniform-in-box draw rejected until it lands in the unit ℓp ball.
pub fn random_point_in_unit_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, p: PNorm) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if p.norm(&x) <= 1.0 {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lin(w: Vec<f64>, b: f64, q: PNorm) -> Hypothesis {
        Hypothesis::new(Params::Linear { w, b }, ConstraintSpec::unit(q)).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_abs_diff_eq!(lin(vec![1.0, 0.0], 0.5, PNorm::L2).eval(&[0.5, 0.3]).unwrap(), 1.0);
        let dead = Hypothesis::new(
            Params::ReluNet { w: vec![vec![1.0, 0.0]], b: vec![-2.0], u: vec![1.0] },
            ConstraintSpec::new(1.0, 2.0, 1.0, PNorm::L2).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let null = HypothesisClass::linear(2, ConstraintSpec::unit(PNorm::L2)).null();
        for _ in 0..50 {
            let x = random_point_in_unit_ball(&mut rng, 2, PNorm::L2);
            assert_eq!(dead.eval(&x).unwrap(), 0.0);
            assert_eq!(null.eval(&x).unwrap(), 0.0);
        }
        assert!(matches!(null.eval(&[1.0]), Err(HypothesisError::DimensionMismatch { .. })));
    }

    #[test]
    fn projection_examples() {
        let h = lin(vec![3.0, 4.0], 0.0, PNorm::L2).project();
        let Params::Linear { w, .. } = h.params() else { unreachable!() };
        assert_abs_diff_eq!(w[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.8, epsilon = 1e-15);

        let h = lin(vec![2.0, -0.5], 3.0, PNorm::LInf).project();
        assert_eq!(h.flat_params(), vec![1.0, -0.5, 1.0]);

        let feasible = lin(vec![0.3, -0.2], 0.1, PNorm::L1);
        assert_eq!(feasible.project(), feasible);

        assert_eq!(project_l1_ball(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_l1_ball(&[1.0, 1.0], 1.0), vec![0.5, 0.5]);
    }

    #[test]
    fn margin_range_examples() {
        let c = ConstraintSpec::new(2.0, 1.0, 3.0, PNorm::L2).unwrap();
        assert_eq!(margin_range(&c, ModelKind::Linear, 0.5), MarginRange { lo: -1.0, hi: 1.0 });
        assert_eq!(margin_range(&c, ModelKind::ReluNet, 0.5), MarginRange { lo: -3.0, hi: 3.0 });
        let z = margin_range(&c, ModelKind::Linear, 0.0);
        assert_eq!((z.lo, z.hi), (0.0, 0.0));
    }

    #[test]
    fn margin_range_endpoint_is_attained() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in [PNorm::L2, PNorm::LInf, PNorm::L1] {
            let c = ConstraintSpec::new(1.7, 1.0, 1.0, q).unwrap();
            let p = c.p();
            for _ in 0..200 {
                let x = random_point_in_unit_ball(&mut rng, 3, p);
                let xp = random_point_in_unit_ball(&mut rng, 3, p);
                let d: Vec<f64> = xp.iter().zip(&x).map(|(a, b)| a - b).collect();
                let w: Vec<f64> = dual_maximizer(&d, p).iter().map(|z| z * c.w_bound()).collect();
                let h = Hypothesis::new(Params::Linear { w, b: 0.0 }, c).unwrap();
                assert!(h.is_feasible(1e-12));
                let m = h.eval(&xp).unwrap() - h.eval(&x).unwrap();
                let hi = margin_range(&c, ModelKind::Linear, p.distance(&x, &xp)).hi;
                assert!((m - hi).abs() <= 1e-9, "q={q}: {m} vs {hi}");
            }
        }
    }

    #[test]
    fn text_round_trip_network() {
        let class = HypothesisClass::relu_net(2, 3, ConstraintSpec::new(1.5, 0.5, 2.0, PNorm::L1).unwrap());
        let h = class.random(&mut ChaCha8Rng::seed_from_u64(11));
        let back = Hypothesis::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn text_parse_errors_carry_lines() {
        let err = Hypothesis::from_text("kind = linear\ndim = 2\nhidden = 0\nW = 1\nB = 1\nLambda = 1\nq = 2\nw = 1 zz\nb = 0\n")
            .unwrap_err();
        assert!(matches!(err, HypothesisError::Parse { line: 8, .. }), "{err}");
        assert!(Hypothesis::from_text("kind linear").is_err());
    }

    fn arb_q() -> impl Strategy<Value = PNorm> {
        prop_oneof![Just(PNorm::L1), Just(PNorm::L2), Just(PNorm::LInf)]
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(raw in prop::collection::vec(-5.0..5.0f64, 12),
                                                 q in arb_q(), w in 0.1..3.0f64, lam in 0.1..3.0f64) {
            let c = ConstraintSpec::new(w, 0.7, lam, q).unwrap();
            let class = HypothesisClass::relu_net(2, 3, c);
            let h = class.from_params(&raw).unwrap().project();
            prop_assert!(h.is_feasible(1e-12));
            let again = h.project();
            for (a, b) in again.flat_params().iter().zip(h.flat_params()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let lin = HypothesisClass::linear(3, c).from_params(&raw[..4]).unwrap().project();
            prop_assert!(lin.is_feasible(1e-12));
        }

        #[test]
        fn text_round_trip_linear(w in prop::collection::vec(-1.0..1.0f64, 1..4), b in -1.0..1.0f64) {
            let h = Hypothesis::new(Params::Linear { w, b }, ConstraintSpec::unit(PNorm::LInf)).unwrap();
            prop_assert_eq!(Hypothesis::from_text(&h.to_text()).unwrap(), h);
        }
    }

    #[test]
    fn score_differences_lie_in_margin_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in [PNorm::L1, PNorm::L2, PNorm::LInf] {
            let c = ConstraintSpec::new(1.3, 1.0, 2.0, q).unwrap();
            for class in [HypothesisClass::linear(2, c), HypothesisClass::relu_net(2, 4, c)] {
                for _ in 0..1000 {
                    let h = class.random(&mut rng);
                    let x = random_point_in_unit_ball(&mut rng, 2, c.p());
                    let xp = random_point_in_unit_ball(&mut rng, 2, c.p());
                    let m = h.eval(&xp).unwrap() - h.eval(&x).unwrap();
                    let dist = c.p().distance(&x, &xp);
                    assert!(class.margin_range(dist).contains(m, 1e-12));
                    assert!(m.abs() <= class.w_eff() * dist + 1e-12);
                }
            }
        }
    }
}
