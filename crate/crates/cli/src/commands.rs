//! The five subcommands. Each returns its table and writes it as CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rankabs::bounds::{negative_report, run_campaign, BoundReport, CampaignRow, CampaignSpec, NegativeRow};
use rankabs::distribution::{Distribution, PairLaw, Setting};
use rankabs::hypothesis::Hypothesis;
use rankabs::losses::AbstentionConfig;
use rankabs::numeric::mean_std;
use rankabs::report::{fmt_g9, write_csv};
use rankabs::risk::{expected_risk, risk_report, LossSelector, RiskReport};
use rankabs::trainer::{train, LossTrace, TrainingSet};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Where and how to write a command's files.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    /// Drops the timestamp comment so reruns are byte-identical.
    pub reproducible: bool,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, reproducible: bool) -> Self {
        Output { dir: dir.into(), reproducible }
    }

    fn comment(&self, command: &str) -> Option<String> {
        if self.reproducible {
            return None;
        }
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Some(format!("rankabs {command} run at unix time {secs}"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn ensure_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))
    }

    fn csv(&self, command: &str, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        self.ensure_dir()?;
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_csv(std::io::BufWriter::new(file), self.comment(command).as_deref(), header, rows)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn text(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        self.ensure_dir()?;
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub const MODEL_FILE: &str = "model.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRAIN_SAMPLE_FILE: &str = "train_sample.txt";
pub const EVAL_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";
pub const NEGATIVE_FILE: &str = "negative.csv";

/// Loads the configured distribution and checks it against the configured setting.
pub fn load_distribution(cfg: &ExperimentConfig) -> Result<Distribution, CliError> {
    let path = cfg
        .distribution_path
        .as_ref()
        .ok_or_else(|| CliError::Validation("the config must set `distribution`".into()))?;
    load_distribution_from(path, cfg)
}

fn load_distribution_from(path: &Path, cfg: &ExperimentConfig) -> Result<Distribution, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let dist = Distribution::from_text(&text, cfg.constraints.p()).map_err(|e| match e {
        rankabs::distribution::DistributionError::Parse { line, msg } => {
            CliError::Config { file: Some(path.to_path_buf()), line, message: msg }
        }
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    if let Some(s) = cfg.setting {
        if s != dist.setting() {
            return Err(CliError::Validation(format!(
                "config asks for the {s} setting but {} holds a {} distribution",
                path.display(),
                dist.setting()
            )));
        }
    }
    Ok(dist)
}

/// Draws `n` training examples from `dist`.
pub fn training_sample(dist: &Distribution, n: usize, seed: u64) -> Result<TrainingSet, CliError> {
    Ok(match dist {
        Distribution::General(d) => TrainingSet::General(d.sample(n, seed)?),
        Distribution::Bipartite(d) => {
            if matches!(d.pair_law(), PairLaw::Explicit(_)) {
                return Err(CliError::Validation(
                    "training on a bipartite distribution needs the product pair law".into(),
                ));
            }
            TrainingSet::Bipartite(d.sample(n, seed)?)
        }
    })
}

fn train_one(cfg: &ExperimentConfig, dist: &Distribution, seed: u64) -> Result<(Hypothesis, LossTrace, TrainingSet), CliError> {
    let data = training_sample(dist, cfg.train.sample_size, seed)?;
    let class = cfg.class(dist.dim());
    let h0 = class.random(&mut ChaCha8Rng::seed_from_u64(seed));
    let out = train(&data, &h0, &cfg.train_config(dist.setting(), seed))?;
    Ok((out.hypothesis, out.trace, data))
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub hypothesis: Hypothesis,
    pub trace: LossTrace,
    /// Empirical law of the training sample, as written to [`TRAIN_SAMPLE_FILE`].
    pub sample: Distribution,
}

/// Trains on a sample of the configured distribution and writes the model, the
/// loss trace and the sample's empirical law.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Output) -> Result<TrainRun, CliError> {
    let dist = load_distribution(cfg)?;
    let (hypothesis, trace, data) = train_one(cfg, &dist, cfg.seed)?;
    let sample = data.to_distribution(cfg.constraints.p())?;
    out.text(MODEL_FILE, &hypothesis.to_text())?;
    out.text(TRAIN_SAMPLE_FILE, &sample.to_text())?;
    out.csv("train", TRACE_FILE, &LossTrace::CSV_HEADER, &trace.csv_records())?;
    Ok(TrainRun { hypothesis, trace, sample })
}

/// Scores a saved model on a distribution: abstention target, plain misranking and the surrogate.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    model: &Path,
    data: Option<&Path>,
    out: &Output,
) -> Result<Vec<RiskReport>, CliError> {
    let text = fs::read_to_string(model).map_err(|e| CliError::io(model, e))?;
    let h = Hypothesis::from_text(&text).map_err(|e| match e {
        rankabs::hypothesis::HypothesisError::Parse { line, msg } => {
            CliError::Config { file: Some(model.to_path_buf()), line, message: msg }
        }
        other => CliError::Validation(format!("{}: {other}", model.display())),
    })?;
    let dist = match data {
        Some(p) => load_distribution_from(p, cfg)?,
        None => load_distribution(cfg)?,
    };
    if dist.dim() != h.dim() {
        return Err(CliError::Validation(format!(
            "model expects inputs of dimension {} but the distribution has dimension {}",
            h.dim(),
            dist.dim()
        )));
    }
    let class = h.class();
    let method = cfg.rstar_method(&class);
    let none = AbstentionConfig::none(cfg.constraints.p());
    let jobs = [(LossSelector::Target, cfg.abstention()), (LossSelector::Misranking, none), (LossSelector::Surrogate(cfg.phi), none)];
    let reports = jobs
        .iter()
        .map(|(loss, a)| risk_report(loss, a, &h, &dist, &class, method))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = reports.iter().map(RiskReport::csv_record).collect();
    out.csv("eval", EVAL_FILE, &RiskReport::CSV_HEADER, &rows)?;
    Ok(reports)
}

/// Mean and standard deviation over seeds of the abstention loss for every (γ, c) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub gammas: Vec<f64>,
    pub costs: Vec<f64>,
    /// `per_seed[s][ci][gi]`.
    pub per_seed: Vec<Vec<Vec<f64>>>,
    /// `mean[ci][gi]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub models: Vec<Hypothesis>,
}

impl SweepTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["cost".to_string()];
        for g in &self.gammas {
            h.push(format!("mean_gamma_{}", fmt_g9(*g)));
            h.push(format!("std_gamma_{}", fmt_g9(*g)));
        }
        h
    }

    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.costs
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let mut row = vec![fmt_g9(*c)];
                for gi in 0..self.gammas.len() {
                    row.push(fmt_g9(self.mean[ci][gi]));
                    row.push(fmt_g9(self.std[ci][gi]));
                }
                row
            })
            .collect()
    }
}

/// Trains one model per seed and evaluates the exact abstention risk over the
/// configured distribution for every cell of the γ × c grid.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Output) -> Result<SweepTable, CliError> {
    let dist = load_distribution(cfg)?;
    let p = cfg.constraints.p();
    let per_model: Vec<(Hypothesis, Vec<Vec<f64>>)> = cfg
        .sweep_seeds
        .par_iter()
        .map(|&seed| {
            let (h, _, _) = train_one(cfg, &dist, seed)?;
            let cells = cfg
                .cost_list
                .iter()
                .map(|&c| {
                    cfg.gamma_list
                        .iter()
                        .map(|&g| {
                            let a = AbstentionConfig::new(g, c, p)?;
                            Ok(expected_risk(&LossSelector::Target, &a, &h, &dist)?)
                        })
                        .collect::<Result<Vec<f64>, CliError>>()
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok((h, cells))
        })
        .collect::<Result<_, CliError>>()?;
    let (models, per_seed): (Vec<_>, Vec<_>) = per_model.into_iter().unzip();
    let (nc, ng) = (cfg.cost_list.len(), cfg.gamma_list.len());
    let mut mean = vec![vec![0.0; ng]; nc];
    let mut std = vec![vec![0.0; ng]; nc];
    for ci in 0..nc {
        for gi in 0..ng {
            let vals: Vec<f64> = per_seed.iter().map(|s: &Vec<Vec<f64>>| s[ci][gi]).collect();
            (mean[ci][gi], std[ci][gi]) = mean_std(&vals);
        }
    }
    let table = SweepTable { gammas: cfg.gamma_list.clone(), costs: cfg.cost_list.clone(), per_seed, mean, std, models };
    let header = table.header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("sweep", SWEEP_FILE, &header, &table.csv_records())?;
    Ok(table)
}

fn settings(cfg: &ExperimentConfig) -> Vec<Setting> {
    match cfg.setting {
        Some(s) => vec![s],
        None => vec![Setting::General, Setting::Bipartite],
    }
}

#[derive(Debug, Clone)]
pub struct VerifyRun {
    pub rows: Vec<CampaignRow>,
    pub violations: usize,
}

pub const BOUNDS_EXTRA_COLUMNS: [&str; 2] = ["distribution", "hypothesis"];

/// Runs the bound-verification campaign for the configured setting (both when unset).
///
/// The CSV is written before a violation is reported, so failing rows can be inspected.
/// `gamma_scale` multiplies every Γ and exists only to exercise the failure path.
pub fn cmd_verify_bounds(cfg: &ExperimentConfig, gamma_scale: f64, out: &Output) -> Result<VerifyRun, CliError> {
    let v = &cfg.verify;
    let class = cfg.class(v.dim);
    let mut rows = Vec::new();
    for setting in settings(cfg) {
        let standard = CampaignSpec::standard(setting, class);
        let spec = CampaignSpec {
            n_distributions: v.n_distributions,
            max_atoms: v.max_atoms.unwrap_or(standard.max_atoms),
            n_hypotheses: v.n_hypotheses,
            phis: v.phis.clone(),
            gammas: v.gamma_list.clone(),
            costs: v.cost_list.clone(),
            method: cfg.rstar_method(&class),
            seed: cfg.seed,
            base_tolerance: v.base_tolerance,
            gamma_scale,
            ..standard
        };
        rows.extend(run_campaign(&spec)?.rows);
    }
    let header: Vec<&str> = BOUNDS_EXTRA_COLUMNS.iter().chain(BoundReport::CSV_HEADER.iter()).copied().collect();
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.distribution.to_string(), r.hypothesis.to_string()];
            rec.extend(r.report.csv_record());
            rec
        })
        .collect();
    out.csv("verify-bounds", BOUNDS_FILE, &header, &records)?;
    let violations = rows.iter().filter(|r| !r.report.holds).count();
    Ok(VerifyRun { rows, violations })
}

/// Negative-result table for the configured Φ and setting (both when unset).
pub fn cmd_negative_demo(cfg: &ExperimentConfig, out: &Output) -> Result<Vec<NegativeRow>, CliError> {
    let class = cfg.class(cfg.verify.dim);
    let mut rows = Vec::new();
    for setting in settings(cfg) {
        rows.extend(negative_report(setting, &cfg.negative.epsilons, cfg.phi, &class, cfg.negative.cost)?);
    }
    let records: Vec<Vec<String>> = rows.iter().map(NegativeRow::csv_record).collect();
    out.csv("negative-demo", NEGATIVE_FILE, &NegativeRow::CSV_HEADER, &records)?;
    Ok(rows)
}
