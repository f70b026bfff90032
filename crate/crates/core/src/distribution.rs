//! Finite-support distributions for the general pairwise and bipartite settings.
//!
//! Because supports are finite, every expected risk downstream is an exact
//! weighted sum. Sampling exists only to produce training data.
//!
//! Text format, one atom per line, fields separated by `;`:
//!
//! ```text
//! # general: x-coords ; x'-coords ; weight ; eta
//! 0.1 0.2 ; -0.3 0.0 ; 0.5 ; 0.9
//! # bipartite: x-coords ; weight ; eta
//! 0.1 0.2 ; 0.25 ; 1.0
//! ```
//!
//! Coordinates may be separated by whitespace or commas. Everything after `#`
//! is ignored. A file must use a single layout throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{PNorm, Sign};

/// Weight vectors must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Tolerance for the unit-ball membership check.
pub const BALL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution has empty support")]
    Empty,
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("atom {index}: weight {value} is negative or non-finite")]
    Weight { index: usize, value: f64 },
    #[error("atom {index}: eta {value} outside [0, 1]")]
    Eta { index: usize, value: f64 },
    #[error("atom {index}: point has l{p} norm {norm} > 1")]
    OutsideBall { index: usize, p: PNorm, norm: f64 },
    #[error("atom {index}: dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("pair law: {0}")]
    PairLaw(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    General,
    Bipartite,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::General => "general",
            Setting::Bipartite => "bipartite",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = DistributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" | "pairwise" => Ok(Setting::General),
            "bipartite" => Ok(Setting::Bipartite),
            other => Err(DistributionError::Parse { line: 0, msg: format!("unknown setting `{other}`") }),
        }
    }
}

/// A labeled pair drawn from a general distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralExample {
    pub x: Vec<f64>,
    pub xp: Vec<f64>,
    pub y: Sign,
}

/// A labeled point drawn from a bipartite distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointExample {
    pub x: Vec<f64>,
    pub y: Sign,
}

fn check_weights(weights: &[f64]) -> Result<(), DistributionError> {
    if weights.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(DistributionError::Weight { index, value });
        }
    }
    let total: f64 = crate::numeric::pairwise_sum(weights);
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(DistributionError::WeightSum(total));
    }
    Ok(())
}

fn check_eta(eta: &[f64]) -> Result<(), DistributionError> {
    for (index, &value) in eta.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(DistributionError::Eta { index, value });
        }
    }
    Ok(())
}

fn check_point(index: usize, x: &[f64], dim: usize, p: PNorm) -> Result<(), DistributionError> {
    if x.len() != dim {
        return Err(DistributionError::Dimension { index, expected: dim, got: x.len() });
    }
    let norm = p.norm(x);
    if !(norm <= 1.0 + BALL_TOL) {
        return Err(DistributionError::OutsideBall { index, p, norm });
    }
    Ok(())
}

fn normalize(weights: &[f64]) -> Vec<f64> {
    let total: f64 = crate::numeric::pairwise_sum(weights);
    weights.iter().map(|w| w / total).collect()
}

/// Finite-support law over pairs `(x, x')` with `η(x, x') = P(Y = +1 | x, x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralDistribution {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    weights: Vec<f64>,
    eta: Vec<f64>,
    p: PNorm,
}

impl GeneralDistribution {
    /// Validates the support. Degenerate pairs with `x = x'` get `η = 1/2`.
    pub fn new(
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
        weights: Vec<f64>,
        mut eta: Vec<f64>,
        p: PNorm,
    ) -> Result<Self, DistributionError> {
        if pairs.is_empty() {
            return Err(DistributionError::Empty);
        }
        if weights.len() != pairs.len() || eta.len() != pairs.len() {
            return Err(DistributionError::Parse {
                line: 0,
                msg: format!("{} pairs but {} weights and {} eta values", pairs.len(), weights.len(), eta.len()),
            });
        }
        check_weights(&weights)?;
        check_eta(&eta)?;
        let dim = pairs[0].0.len();
        for (i, (x, xp)) in pairs.iter().enumerate() {
            check_point(i, x, dim, p)?;
            check_point(i, xp, dim, p)?;
            if x == xp {
                eta[i] = 0.5;
            }
        }
        Ok(GeneralDistribution { pairs, weights, eta, p })
    }

    /// Like [`GeneralDistribution::new`] but rescales non-negative weights to sum to one.
    pub fn normalized(
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
        weights: Vec<f64>,
        eta: Vec<f64>,
        p: PNorm,
    ) -> Result<Self, DistributionError> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
            return Err(DistributionError::WeightSum(weights.iter().sum()));
        }
        Self::new(pairs, normalize(&weights), eta, p)
    }

    /// Empirical law of a sample: identical pairs are merged, `η` is the fraction of `+1` labels.
    pub fn empirical(sample: &[GeneralExample], p: PNorm) -> Result<Self, DistributionError> {
        if sample.is_empty() {
            return Err(DistributionError::Empty);
        }
        let key = |e: &GeneralExample| -> Vec<u64> { e.x.iter().chain(&e.xp).map(|v| v.to_bits()).collect() };
        let mut groups: BTreeMap<Vec<u64>, (usize, usize, usize)> = BTreeMap::new();
        for (i, e) in sample.iter().enumerate() {
            let entry = groups.entry(key(e)).or_insert((i, 0, 0));
            entry.1 += 1;
            if e.y == Sign::Pos {
                entry.2 += 1;
            }
        }
        // Keep first-occurrence order so the result does not depend on bit patterns.
        let mut rows: Vec<(usize, usize, usize)> = groups.into_values().collect();
        rows.sort_by_key(|r| r.0);
        let n = sample.len() as f64;
        let pairs = rows.iter().map(|r| (sample[r.0].x.clone(), sample[r.0].xp.clone())).collect();
        let weights = rows.iter().map(|r| r.1 as f64 / n).collect();
        let eta = rows.iter().map(|r| r.2 as f64 / r.1 as f64).collect();
        Self::normalized(pairs, weights, eta, p)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].0.len()
    }

    pub fn p(&self) -> PNorm {
        self.p
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// `‖x_i - x'_i‖_p`.
    pub fn dist(&self, i: usize) -> f64 {
        self.p.distance(&self.pairs[i].0, &self.pairs[i].1)
    }

    pub fn min_positive_dist(&self) -> Option<f64> {
        (0..self.len()).map(|i| self.dist(i)).filter(|d| *d > 0.0).min_by(f64::total_cmp)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<GeneralExample>, DistributionError> {
        let index = WeightedIndex::new(&self.weights).map_err(|_| DistributionError::Empty)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let i = index.sample(&mut rng);
                let y = if rng.gen_bool(self.eta[i]) { Sign::Pos } else { Sign::Neg };
                GeneralExample { x: self.pairs[i].0.clone(), xp: self.pairs[i].1.clone(), y }
            })
            .collect())
    }
}

/// How pairs of points are formed in the bipartite setting.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PairLaw {
    /// Two independent draws from the point distribution; all ordered pairs `(i, j)`, including `i = j`.
    #[default]
    Product,
    /// An explicit law over ordered index pairs `(i, j, weight)`; weights sum to one.
    Explicit(Vec<(usize, usize, f64)>),
}

/// Finite-support law over points with `η(x) = P(Y = +1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    eta: Vec<f64>,
    p: PNorm,
    pair_law: PairLaw,
}

impl BipartiteDistribution {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, eta: Vec<f64>, p: PNorm) -> Result<Self, DistributionError> {
        if points.is_empty() {
            return Err(DistributionError::Empty);
        }
        if weights.len() != points.len() || eta.len() != points.len() {
            return Err(DistributionError::Parse {
                line: 0,
                msg: format!("{} points but {} weights and {} eta values", points.len(), weights.len(), eta.len()),
            });
        }
        check_weights(&weights)?;
        check_eta(&eta)?;
        let dim = points[0].len();
        for (i, x) in points.iter().enumerate() {
            check_point(i, x, dim, p)?;
        }
        Ok(BipartiteDistribution { points, weights, eta, p, pair_law: PairLaw::Product })
    }

    pub fn normalized(points: Vec<Vec<f64>>, weights: Vec<f64>, eta: Vec<f64>, p: PNorm) -> Result<Self, DistributionError> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
            return Err(DistributionError::WeightSum(weights.iter().sum()));
        }
        Self::new(points, normalize(&weights), eta, p)
    }

    /// Replaces the product pair law with an explicit one.
    pub fn with_pair_law(mut self, law: Vec<(usize, usize, f64)>) -> Result<Self, DistributionError> {
        if law.is_empty() {
            return Err(DistributionError::PairLaw("explicit pair law is empty".into()));
        }
        for &(i, j, w) in &law {
            if i >= self.points.len() || j >= self.points.len() {
                return Err(DistributionError::PairLaw(format!("pair ({i}, {j}) out of range")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(DistributionError::PairLaw(format!("pair ({i}, {j}) has weight {w}")));
            }
        }
        let ws: Vec<f64> = law.iter().map(|t| t.2).collect();
        let total = crate::numeric::pairwise_sum(&ws);
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DistributionError::PairLaw(format!("pair weights sum to {total}")));
        }
        self.pair_law = PairLaw::Explicit(law);
        Ok(self)
    }

    /// Empirical law of a point sample under the product pair law.
    pub fn empirical(sample: &[PointExample], p: PNorm) -> Result<Self, DistributionError> {
        if sample.is_empty() {
            return Err(DistributionError::Empty);
        }
        let mut groups: BTreeMap<Vec<u64>, (usize, usize, usize)> = BTreeMap::new();
        for (i, e) in sample.iter().enumerate() {
            let entry = groups.entry(e.x.iter().map(|v| v.to_bits()).collect()).or_insert((i, 0, 0));
            entry.1 += 1;
            if e.y == Sign::Pos {
                entry.2 += 1;
            }
        }
        let mut rows: Vec<(usize, usize, usize)> = groups.into_values().collect();
        rows.sort_by_key(|r| r.0);
        let n = sample.len() as f64;
        let points = rows.iter().map(|r| sample[r.0].x.clone()).collect();
        let weights = rows.iter().map(|r| r.1 as f64 / n).collect();
        let eta = rows.iter().map(|r| r.2 as f64 / r.1 as f64).collect();
        Self::normalized(points, weights, eta, p)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn p(&self) -> PNorm {
        self.p
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn pair_law(&self) -> &PairLaw {
        &self.pair_law
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.p.distance(&self.points[i], &self.points[j])
    }

    /// Ordered index pairs with their probabilities. Zero-weight pairs are skipped.
    pub fn pair_atoms(&self) -> Vec<(usize, usize, f64)> {
        match &self.pair_law {
            PairLaw::Product => {
                let n = self.len();
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let w = self.weights[i] * self.weights[j];
                        if w > 0.0 {
                            out.push((i, j, w));
                        }
                    }
                }
                out
            }
            PairLaw::Explicit(law) => law.iter().copied().filter(|t| t.2 > 0.0).collect(),
        }
    }

    pub fn min_positive_dist(&self) -> Option<f64> {
        self.pair_atoms().iter().map(|&(i, j, _)| self.dist(i, j)).filter(|d| *d > 0.0).min_by(f64::total_cmp)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<PointExample>, DistributionError> {
        let index = WeightedIndex::new(&self.weights).map_err(|_| DistributionError::Empty)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let i = index.sample(&mut rng);
                let y = if rng.gen_bool(self.eta[i]) { Sign::Pos } else { Sign::Neg };
                PointExample { x: self.points[i].clone(), y }
            })
            .collect())
    }

    /// Labeled pairs drawn from the pair law; labels of the two points are independent.
    pub fn sample_pairs(&self, n: usize, seed: u64) -> Result<Vec<(PointExample, PointExample)>, DistributionError> {
        let atoms = self.pair_atoms();
        let ws: Vec<f64> = atoms.iter().map(|t| t.2).collect();
        let index = WeightedIndex::new(&ws).map_err(|_| DistributionError::Empty)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |i: usize, rng: &mut ChaCha8Rng| PointExample {
            x: self.points[i].clone(),
            y: if rng.gen_bool(self.eta[i]) { Sign::Pos } else { Sign::Neg },
        };
        Ok((0..n)
            .map(|_| {
                let (i, j, _) = atoms[index.sample(&mut rng)];
                let a = draw(i, &mut rng);
                let b = draw(j, &mut rng);
                (a, b)
            })
            .collect())
    }
}

/// Either kind of finite-support distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    General(GeneralDistribution),
    Bipartite(BipartiteDistribution),
}

impl Distribution {
    pub fn setting(&self) -> Setting {
        match self {
            Distribution::General(_) => Setting::General,
            Distribution::Bipartite(_) => Setting::Bipartite,
        }
    }

    pub fn p(&self) -> PNorm {
        match self {
            Distribution::General(d) => d.p(),
            Distribution::Bipartite(d) => d.p(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::General(d) => d.dim(),
            Distribution::Bipartite(d) => d.dim(),
        }
    }

    /// Smallest strictly positive distance among pairs with positive mass.
    pub fn min_positive_dist(&self) -> Option<f64> {
        match self {
            Distribution::General(d) => d.min_positive_dist(),
            Distribution::Bipartite(d) => d.min_positive_dist(),
        }
    }

    pub fn load(path: &Path, p: PNorm) -> Result<Self, DistributionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DistributionError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text, p)
    }

    pub fn from_text(text: &str, p: PNorm) -> Result<Self, DistributionError> {
        let mut general: Vec<(usize, Vec<f64>, Vec<f64>, f64, f64)> = Vec::new();
        let mut bipartite: Vec<(usize, Vec<f64>, f64, f64)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(';').map(str::trim).collect();
            let err = |msg: String| DistributionError::Parse { line: line_no, msg };
            let coords = |s: &str| -> Result<Vec<f64>, DistributionError> {
                let v = s
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate `{t}`: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if v.is_empty() {
                    return Err(err("empty coordinate list".into()));
                }
                Ok(v)
            };
            let scalar = |s: &str, what: &str| -> Result<f64, DistributionError> {
                s.parse::<f64>().map_err(|e| err(format!("bad {what} `{s}`: {e}")))
            };
            match fields.len() {
                4 => {
                    general.push((line_no, coords(fields[0])?, coords(fields[1])?, scalar(fields[2], "weight")?, scalar(fields[3], "eta")?));
                }
                3 => bipartite.push((line_no, coords(fields[0])?, scalar(fields[1], "weight")?, scalar(fields[2], "eta")?)),
                n => return Err(err(format!("expected 3 (bipartite) or 4 (general) `;`-separated fields, got {n}"))),
            }
            if !general.is_empty() && !bipartite.is_empty() {
                return Err(err("file mixes general and bipartite layouts".into()));
            }
        }
        // Re-attach line numbers to validation failures.
        let relabel = |lines: Vec<usize>, e: DistributionError| match e {
            DistributionError::Eta { index, .. }
            | DistributionError::Weight { index, .. }
            | DistributionError::OutsideBall { index, .. }
            | DistributionError::Dimension { index, .. } => {
                DistributionError::Parse { line: lines[index], msg: e.to_string() }
            }
            other => other,
        };
        if !general.is_empty() {
            let lines: Vec<usize> = general.iter().map(|r| r.0).collect();
            let pairs = general.iter().map(|r| (r.1.clone(), r.2.clone())).collect();
            let weights = general.iter().map(|r| r.3).collect();
            let eta = general.iter().map(|r| r.4).collect();
            GeneralDistribution::new(pairs, weights, eta, p).map(Distribution::General).map_err(|e| relabel(lines, e))
        } else if !bipartite.is_empty() {
            let lines: Vec<usize> = bipartite.iter().map(|r| r.0).collect();
            let points = bipartite.iter().map(|r| r.1.clone()).collect();
            let weights = bipartite.iter().map(|r| r.2).collect();
            let eta = bipartite.iter().map(|r| r.3).collect();
            BipartiteDistribution::new(points, weights, eta, p)
                .map(Distribution::Bipartite)
                .map_err(|e| relabel(lines, e))
        } else {
            Err(DistributionError::Empty)
        }
    }

    /// Serializes in the layout accepted by [`Distribution::from_text`]. The pair law is not stored.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        match self {
            Distribution::General(d) => {
                let _ = writeln!(out, "# x ; x' ; weight ; eta");
                for i in 0..d.len() {
                    let (x, xp) = &d.pairs[i];
                    let _ = writeln!(out, "{} ; {} ; {:?} ; {:?}", join(x), join(xp), d.weights[i], d.eta[i]);
                }
            }
            Distribution::Bipartite(d) => {
                let _ = writeln!(out, "# x ; weight ; eta");
                for i in 0..d.len() {
                    let _ = writeln!(out, "{} ; {:?} ; {:?}", join(&d.points[i]), d.weights[i], d.eta[i]);
                }
            }
        }
        out
    }
}

impl From<GeneralDistribution> for Distribution {
    fn from(d: GeneralDistribution) -> Self {
        Distribution::General(d)
    }
}

impl From<BipartiteDistribution> for Distribution {
    fn from(d: BipartiteDistribution) -> Self {
        Distribution::Bipartite(d)
    }
}
