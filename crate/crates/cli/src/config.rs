//! Experiment configuration files.
//!
//! One `key = value` per line, `#` starts a comment, keys are dotted. List
//! values are separated by whitespace or commas. Every key is optional; the
//! defaults are listed in [`ExperimentConfig::default`] and in the README.
//!
//! ```text
//! distribution = data/toy.txt
//! phi = sigmoid
//! phi.k = 2
//! constraints.W = 1
//! abstention.gamma_list = 0 0.3 0.5
//! train.epochs = 100
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rankabs::distribution::Setting;
use rankabs::hypothesis::{ConstraintSpec, HypothesisClass, ModelKind};
use rankabs::losses::{AbstentionConfig, PNorm, PhiKind, PhiSpec};
use rankabs::risk::RStarMethod;
use rankabs::trainer::{LrSchedule, TrainConfig};

use crate::CliError;

/// Training hyperparameters plus the size of the sample drawn to train on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub sample_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RStarChoice {
    Auto,
    Grid,
    Pgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub n_distributions: usize,
    pub max_atoms: Option<usize>,
    pub n_hypotheses: usize,
    pub dim: usize,
    pub phis: Vec<PhiSpec>,
    pub gamma_list: Vec<f64>,
    pub cost_list: Vec<f64>,
    pub rstar: RStarChoice,
    pub base_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSettings {
    pub epsilons: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Resolved relative to the directory of the config file.
    pub distribution_path: Option<PathBuf>,
    /// When unset, the setting is read off the distribution file.
    pub setting: Option<Setting>,
    pub phi: PhiSpec,
    pub model: ModelKind,
    pub hidden: usize,
    pub constraints: ConstraintSpec,
    /// Abstention used by `train` (trace column) and `eval`.
    pub gamma: f64,
    pub cost: f64,
    pub gamma_list: Vec<f64>,
    pub cost_list: Vec<f64>,
    pub train: TrainSettings,
    pub sweep_seeds: Vec<u64>,
    pub verify: VerifySettings,
    pub negative: NegativeSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            distribution_path: None,
            setting: None,
            phi: PhiSpec::exponential(),
            model: ModelKind::Linear,
            hidden: HypothesisClass::DEFAULT_HIDDEN,
            constraints: ConstraintSpec::unit(PNorm::L2),
            gamma: 0.0,
            cost: 0.3,
            gamma_list: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            cost_list: vec![0.1, 0.3, 0.5],
            train: TrainSettings {
                epochs: TrainConfig::DEFAULT_EPOCHS,
                batch_size: TrainConfig::DEFAULT_BATCH_SIZE,
                lr0: TrainConfig::DEFAULT_LR0,
                momentum: TrainConfig::DEFAULT_MOMENTUM,
                lr_schedule: LrSchedule::Cosine,
                sample_size: 256,
            },
            sweep_seeds: vec![1, 2, 3],
            verify: VerifySettings {
                n_distributions: 20,
                max_atoms: None,
                n_hypotheses: 50,
                dim: 2,
                phis: vec![PhiSpec::hinge(), PhiSpec::exponential(), PhiSpec::sigmoid(1.0).expect("valid slope")],
                gamma_list: vec![0.2, 0.5],
                cost_list: vec![0.1, 0.5],
                rstar: RStarChoice::Auto,
                base_tolerance: rankabs::bounds::verify::DEFAULT_BASE_TOLERANCE,
            },
            negative: NegativeSettings { epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4], cost: 0.3 },
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "distribution",
    "setting",
    "phi",
    "phi.k",
    "model",
    "model.hidden",
    "constraints.W",
    "constraints.B",
    "constraints.Lambda",
    "constraints.q",
    "abstention.gamma",
    "abstention.cost",
    "abstention.gamma_list",
    "abstention.cost_list",
    "train.epochs",
    "train.batch_size",
    "train.lr0",
    "train.momentum",
    "train.lr_schedule",
    "train.sample_size",
    "sweep.seeds",
    "verify.n_distributions",
    "verify.max_atoms",
    "verify.n_hypotheses",
    "verify.dim",
    "verify.phis",
    "verify.gamma_list",
    "verify.cost_list",
    "verify.rstar",
    "verify.base_tolerance",
    "negative.epsilons",
    "negative.cost",
    "output_dir",
    "seed",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::config(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::config(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(CliError::config(line, format!("`{key}` has no value")));
            }
            if let Some((first, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return Err(CliError::config(line, format!("`{key}` already set on line {first}")));
            }
        }
        Ok(Entries { map })
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |(l, _)| *l)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => {
                v.parse().map(Some).map_err(|e| CliError::config(*line, format!("`{key}`: cannot parse `{v}`: {e}")))
            }
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| CliError::config(*line, format!("`{key}`: cannot parse `{s}`: {e}"))))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ExperimentConfig {
    /// Parses a config. Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let e = Entries::parse(text)?;
        let mut c = ExperimentConfig::default();

        c.distribution_path = e.get::<String>("distribution")?.map(|p| base_dir.join(p));
        c.setting = match e.get::<String>("setting")?.as_deref() {
            None => None,
            Some("general") => Some(Setting::General),
            Some("bipartite") => Some(Setting::Bipartite),
            Some(other) => {
                return Err(CliError::config(
                    e.line("setting"),
                    format!("`setting` must be general or bipartite, got `{other}`"),
                ))
            }
        };

        let kind: Option<PhiKind> = e.get("phi")?;
        let k: Option<f64> = e.get("phi.k")?;
        if kind.is_some() || k.is_some() {
            let kind = kind.unwrap_or(c.phi.kind());
            let k = k.unwrap_or(PhiSpec::DEFAULT_SIGMOID_SLOPE);
            let line = e.line(if e.map.contains_key("phi.k") { "phi.k" } else { "phi" });
            c.phi = PhiSpec::new(kind, k).map_err(|err| CliError::config(line, err.to_string()))?;
        }

        set(&mut c.model, e.get("model")?);
        set(&mut c.hidden, e.get("model.hidden")?);
        if c.hidden == 0 {
            return Err(CliError::config(e.line("model.hidden"), "`model.hidden` must be at least 1"));
        }

        let d = c.constraints;
        let w = e.get("constraints.W")?.unwrap_or(d.w_bound());
        let b = e.get("constraints.B")?.unwrap_or(d.b_bound());
        let lambda = e.get("constraints.Lambda")?.unwrap_or(d.lambda());
        let q = e.get("constraints.q")?.unwrap_or(d.q());
        c.constraints = ConstraintSpec::new(w, b, lambda, q).map_err(|err| {
            let line = ["constraints.W", "constraints.B", "constraints.Lambda", "constraints.q"]
                .iter()
                .map(|k| e.line(k))
                .max()
                .unwrap_or(0);
            CliError::config(line, err.to_string())
        })?;

        set(&mut c.gamma, e.get("abstention.gamma")?);
        set(&mut c.cost, e.get("abstention.cost")?);
        AbstentionConfig::new(c.gamma, c.cost, q).map_err(|err| {
            CliError::config(e.line("abstention.gamma").max(e.line("abstention.cost")), err.to_string())
        })?;
        set(&mut c.gamma_list, e.list("abstention.gamma_list")?);
        set(&mut c.cost_list, e.list("abstention.cost_list")?);
        check_grid("abstention.gamma_list", &c.gamma_list, e.line("abstention.gamma_list"))?;
        check_costs("abstention.cost_list", &c.cost_list, e.line("abstention.cost_list"))?;

        let t = &mut c.train;
        set(&mut t.epochs, e.get("train.epochs")?);
        set(&mut t.batch_size, e.get("train.batch_size")?);
        set(&mut t.lr0, e.get("train.lr0")?);
        set(&mut t.momentum, e.get("train.momentum")?);
        set(&mut t.lr_schedule, e.get("train.lr_schedule")?);
        set(&mut t.sample_size, e.get("train.sample_size")?);
        if t.sample_size == 0 {
            return Err(CliError::config(e.line("train.sample_size"), "`train.sample_size` must be at least 1"));
        }
        // Reuse the trainer's own checks so messages stay in one place.
        let probe = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            momentum: t.momentum,
            ..TrainConfig::new(c.phi, Setting::General, q)
        };
        probe.validate().map_err(|err| {
            let line = ["train.epochs", "train.batch_size", "train.lr0", "train.momentum"]
                .iter()
                .map(|k| e.line(k))
                .max()
                .unwrap_or(0);
            CliError::config(line, err.to_string())
        })?;

        set(&mut c.sweep_seeds, e.list("sweep.seeds")?);
        if c.sweep_seeds.is_empty() {
            return Err(CliError::config(e.line("sweep.seeds"), "`sweep.seeds` must not be empty"));
        }

        let v = &mut c.verify;
        set(&mut v.n_distributions, e.get("verify.n_distributions")?);
        v.max_atoms = e.get("verify.max_atoms")?.or(v.max_atoms);
        set(&mut v.n_hypotheses, e.get("verify.n_hypotheses")?);
        set(&mut v.dim, e.get("verify.dim")?);
        if let Some(names) = e.list::<String>("verify.phis")? {
            v.phis = names
                .iter()
                .map(|n| {
                    let kind: PhiKind = n.parse().map_err(|err: rankabs::losses::LossError| {
                        CliError::config(e.line("verify.phis"), err.to_string())
                    })?;
                    PhiSpec::new(kind, c.phi.k()).map_err(|err| CliError::config(e.line("verify.phis"), err.to_string()))
                })
                .collect::<Result<_, _>>()?;
        }
        set(&mut v.gamma_list, e.list("verify.gamma_list")?);
        set(&mut v.cost_list, e.list("verify.cost_list")?);
        if let Some(s) = e.get::<String>("verify.rstar")? {
            v.rstar = match s.as_str() {
                "auto" => RStarChoice::Auto,
                "grid" => RStarChoice::Grid,
                "pgd" => RStarChoice::Pgd,
                other => {
                    return Err(CliError::config(
                        e.line("verify.rstar"),
                        format!("`verify.rstar` must be auto, grid or pgd, got `{other}`"),
                    ))
                }
            };
        }
        set(&mut v.base_tolerance, e.get("verify.base_tolerance")?);
        if v.dim == 0 || v.n_distributions == 0 || v.n_hypotheses == 0 || v.max_atoms == Some(0) || v.phis.is_empty() {
            let line = ["verify.dim", "verify.n_distributions", "verify.n_hypotheses", "verify.max_atoms", "verify.phis"]
                .iter()
                .map(|k| e.line(k))
                .max()
                .unwrap_or(0);
            return Err(CliError::config(line, "verify counts, dimension and Φ list must be non-zero"));
        }
        if v.gamma_list.is_empty() || v.gamma_list.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(CliError::config(e.line("verify.gamma_list"), "`verify.gamma_list` needs non-negative values"));
        }
        check_costs("verify.cost_list", &v.cost_list, e.line("verify.cost_list"))?;

        set(&mut c.negative.epsilons, e.list("negative.epsilons")?);
        set(&mut c.negative.cost, e.get("negative.cost")?);
        if c.negative.epsilons.is_empty() || c.negative.epsilons.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(CliError::config(e.line("negative.epsilons"), "`negative.epsilons` needs positive values"));
        }
        check_costs("negative.cost", &[c.negative.cost], e.line("negative.cost"))?;

        if let Some(dir) = e.get::<String>("output_dir")? {
            c.output_dir = base_dir.join(dir);
        }
        set(&mut c.seed, e.get("seed")?);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    pub fn class(&self, dim: usize) -> HypothesisClass {
        match self.model {
            ModelKind::Linear => HypothesisClass::linear(dim, self.constraints),
            ModelKind::ReluNet => HypothesisClass::relu_net(dim, self.hidden, self.constraints),
        }
    }

    pub fn abstention(&self) -> AbstentionConfig {
        AbstentionConfig::new(self.gamma, self.cost, self.constraints.p()).expect("validated on parse")
    }

    pub fn train_config(&self, setting: Setting, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            phi: self.phi,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            momentum: t.momentum,
            lr_schedule: t.lr_schedule,
            seed,
            setting,
            target: self.abstention(),
        }
    }

    pub fn rstar_method(&self, class: &HypothesisClass) -> RStarMethod {
        match self.verify.rstar {
            RStarChoice::Auto => RStarMethod::default_for(class),
            RStarChoice::Grid => RStarMethod::DEFAULT_GRID,
            RStarChoice::Pgd => RStarMethod::MultiRestartPgd { restarts: 32, iters: 300, seed: self.seed },
        }
    }
}

fn check_grid(key: &str, values: &[f64], line: usize) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::config(line, format!("`{key}` must not be empty")));
    }
    if values.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(CliError::config(line, format!("`{key}` values must be non-negative")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config(line, format!("`{key}` must be strictly ascending")));
    }
    Ok(())
}

fn check_costs(key: &str, values: &[f64], line: usize) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::config(line, format!("`{key}` must not be empty")));
    }
    if values.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CliError::config(line, format!("`{key}` values must lie in [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_follow_the_published_grid() {
        let c = parse("").unwrap();
        assert_eq!(c.gamma_list, vec![0.0, 0.3, 0.5, 0.7, 0.9]);
        assert_eq!(c.cost_list, vec![0.1, 0.3, 0.5]);
        assert_eq!(c.sweep_seeds, vec![1, 2, 3]);
        assert_eq!(c.train.epochs, 200);
    }

    #[test]
    fn parses_every_section() {
        let c = parse(
            "# experiment\n\
             distribution = data/toy.txt\n\
             setting = bipartite\n\
             phi = sigmoid   # slope below\n\
             phi.k = 2.5\n\
             model = relu_nn\n\
             model.hidden = 4\n\
             constraints.W = 2\n\
             constraints.q = inf\n\
             abstention.gamma_list = 0, 0.25 0.5\n\
             train.lr_schedule = constant\n\
             sweep.seeds = 7 8\n\
             verify.phis = hinge exp\n\
             verify.rstar = pgd\n\
             negative.epsilons = 0.1 0.001\n\
             output_dir = results\n\
             seed = 42\n",
        )
        .unwrap();
        assert_eq!(c.distribution_path, Some(PathBuf::from("/base/data/toy.txt")));
        assert_eq!(c.setting, Some(Setting::Bipartite));
        assert_eq!(c.phi, PhiSpec::sigmoid(2.5).unwrap());
        assert_eq!(c.model, ModelKind::ReluNet);
        assert_eq!(c.constraints.w_bound(), 2.0);
        assert_eq!(c.constraints.p(), PNorm::L1);
        assert_eq!(c.gamma_list, vec![0.0, 0.25, 0.5]);
        assert_eq!(c.train.lr_schedule, LrSchedule::Constant);
        assert_eq!(c.sweep_seeds, vec![7, 8]);
        assert_eq!(c.verify.phis.len(), 2);
        assert_eq!(c.verify.rstar, RStarChoice::Pgd);
        assert_eq!(c.output_dir, PathBuf::from("/base/results"));
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn diagnostics_name_the_line() {
        let cases = [
            ("seed = 1\nbogus = 2\n", 2, "unknown key"),
            ("\n\nphi", 3, "key = value"),
            ("train.epochs = ten\n", 1, "cannot parse"),
            ("abstention.gamma_list = 0.5 0.3\n", 1, "ascending"),
            ("\nabstention.cost_list = 0.1 1.5\n", 2, "[0, 1]"),
            ("seed = 1\nseed = 2\n", 2, "already set on line 1"),
            ("constraints.W = -1\n", 1, "W"),
            ("train.momentum = 1\n", 1, "momentum"),
            ("phi = sigmoid\nphi.k = 0\n", 2, ""),
        ];
        for (text, line, needle) in cases {
            match parse(text) {
                Err(CliError::Config { line: got, message, .. }) => {
                    assert_eq!(got, line, "{text:?}: {message}");
                    assert!(message.contains(needle), "{text:?}: {message}");
                }
                other => panic!("{text:?}: expected a config error, got {other:?}"),
            }
        }
    }
}
