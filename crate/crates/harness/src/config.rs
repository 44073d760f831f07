//! Line-oriented `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. The `experiment`
//! key selects the defaults for every other key, so it is read first
//! wherever it appears. All problems are collected before reporting.

use std::fmt;
use std::str::FromStr;

use cogd_core::coupling::{CouplingConfig, Norm};
use cogd_core::deep::MaskInit;
use cogd_core::optim::{OptimizerConfig, OptimizerKind, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Beale,
    BilinearLsq,
    CscReconstruct,
    CscInpaint,
    PruneToy,
    TrainToy,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Beale,
        Experiment::BilinearLsq,
        Experiment::CscReconstruct,
        Experiment::CscInpaint,
        Experiment::PruneToy,
        Experiment::TrainToy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Beale => "beale",
            Experiment::BilinearLsq => "bilinear-lsq",
            Experiment::CscReconstruct => "csc-reconstruct",
            Experiment::CscInpaint => "csc-inpaint",
            Experiment::PruneToy => "prune-toy",
            Experiment::TrainToy => "train-toy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    /// The n-th `--set` override, counted from 1.
    Override(usize),
    Document,
}

impl Location {
    /// Document lines first, then overrides, then whole-document checks.
    fn order(&self) -> (u8, usize) {
        match self {
            Location::Line(n) => (0, *n),
            Location::Override(n) => (1, *n),
            Location::Document => (2, 0),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Override(n) => write!(f, "--set #{n}"),
            Location::Document => f.write_str("config"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub location: Location,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}: {}", self.location, self.message)
        } else {
            write!(f, "{}: {}: {}", self.location, self.key, self.message)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Empty means `runs/<experiment>-<seed>`.
    pub output_dir: String,

    pub coupling: CouplingConfig,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub schedule: ScheduleKind,

    pub start_x1: f64,
    pub start_x2: f64,
    pub iterations: usize,
    pub lr_sgd: f64,
    pub lr_momentum: f64,
    pub lr_adam: f64,

    pub rows: usize,
    pub cols: usize,
    pub density: f64,
    pub noise: f64,
    pub lambda: f64,
    pub dense_reg: f64,

    /// PGM path; empty means a synthetic image.
    pub image: String,
    pub filters: usize,
    pub filter_size: usize,
    pub image_size: usize,
    pub code_density: f64,
    pub rho: f64,
    pub epochs: usize,
    pub inner_iters: usize,
    pub keep_fraction: f64,
    pub inpaint_iters: usize,
    pub normalize: bool,

    pub samples: usize,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub batch_size: usize,
    pub weight_reg: f64,
    pub quantile: f64,
    pub mask_init: MaskInit,
    pub prune_threshold: f64,
}

/// Every key in serialization order.
pub const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "output_dir",
    "kernel_exponent",
    "beta_scale",
    "alpha_sparse",
    "alpha_dense",
    "period",
    "coupling_epsilon",
    "norm",
    "gate",
    "optimizer",
    "learning_rate",
    "momentum",
    "beta1",
    "beta2",
    "adam_epsilon",
    "schedule",
    "start_x1",
    "start_x2",
    "iterations",
    "lr_sgd",
    "lr_momentum",
    "lr_adam",
    "rows",
    "cols",
    "density",
    "noise",
    "lambda",
    "dense_reg",
    "image",
    "filters",
    "filter_size",
    "image_size",
    "code_density",
    "rho",
    "epochs",
    "inner_iters",
    "keep_fraction",
    "inpaint_iters",
    "normalize",
    "samples",
    "input_dim",
    "hidden",
    "outputs",
    "batch_size",
    "weight_reg",
    "quantile",
    "mask_init",
    "prune_threshold",
];

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            seed: 0,
            output_dir: String::new(),
            coupling: CouplingConfig::default(),
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            schedule: ScheduleKind::Constant,
            start_x1: -2.0,
            start_x2: -2.0,
            iterations: 200,
            lr_sgd: 0.001,
            lr_momentum: 0.005,
            lr_adam: 0.1,
            rows: 20,
            cols: 40,
            density: 0.2,
            noise: 0.01,
            lambda: 0.05,
            dense_reg: 0.0,
            image: String::new(),
            filters: 8,
            filter_size: 5,
            image_size: 32,
            code_density: 0.05,
            rho: 1.0,
            epochs: 20,
            inner_iters: 1,
            keep_fraction: 1.0,
            inpaint_iters: 100,
            normalize: true,
            samples: 1000,
            input_dim: 16,
            hidden: vec![32, 32],
            outputs: 1,
            batch_size: 50,
            weight_reg: 0.0002,
            quantile: 0.5,
            mask_init: MaskInit::AbsNormal,
            prune_threshold: 0.01,
        };
        match experiment {
            Experiment::Beale => {}
            Experiment::BilinearLsq => {
                c.iterations = 500;
                c.coupling.alpha_sparse = 5.0;
            }
            Experiment::CscReconstruct => {}
            Experiment::CscInpaint => {
                c.keep_fraction = 0.25;
            }
            Experiment::PruneToy => {
                c.optimizer = OptimizerKind::Momentum;
                c.learning_rate = 0.01;
                c.epochs = 30;
                c.lambda = 0.005;
                c.noise = 0.0;
                c.coupling.alpha_sparse = 0.5;
            }
            Experiment::TrainToy => {
                c.optimizer = OptimizerKind::Momentum;
                c.learning_rate = 0.1;
                c.schedule = ScheduleKind::Cosine;
                c.epochs = 30;
                c.lambda = 0.0;
                c.noise = 0.0;
                c.weight_reg = 0.0001;
                c.quantile = 0.95;
                c.mask_init = MaskInit::Ones;
                c.coupling.alpha_sparse = 0.5;
            }
        }
        c
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleKind::Constant => Schedule::Constant,
            ScheduleKind::Cosine => Schedule::Cosine { total: self.epochs },
        }
    }

    /// Assigns one key. `experiment` is handled by the caller.
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let c = &mut self.coupling;
        match key {
            "seed" => self.seed = parse(value)?,
            "output_dir" => self.output_dir = value.to_string(),
            "kernel_exponent" => c.kernel_exponent = at_least(parse(value)?, 1)?,
            "beta_scale" => c.beta_scale = non_negative(parse(value)?)?,
            "alpha_sparse" => c.alpha_sparse = non_negative(parse(value)?)?,
            "alpha_dense" => c.alpha_dense = non_negative(parse(value)?)?,
            "period" => c.period = at_least(parse(value)?, 1)?,
            "coupling_epsilon" => c.epsilon = non_negative(parse(value)?)?,
            "norm" => {
                c.norm = match value {
                    "l1" => Norm::L1,
                    "l2" => Norm::L2,
                    _ => return Err(choices(value, &["l1", "l2"])),
                }
            }
            "gate" => c.enabled = on_off(value)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::parse(value)
                    .ok_or_else(|| choices(value, &["sgd", "momentum", "adam"]))?
            }
            "learning_rate" => self.learning_rate = positive(parse(value)?)?,
            "momentum" => self.momentum = half_open_unit(parse(value)?)?,
            "beta1" => self.beta1 = half_open_unit(parse(value)?)?,
            "beta2" => self.beta2 = half_open_unit(parse(value)?)?,
            "adam_epsilon" => self.adam_epsilon = positive(parse(value)?)?,
            "schedule" => {
                self.schedule = match value {
                    "constant" => ScheduleKind::Constant,
                    "cosine" => ScheduleKind::Cosine,
                    _ => return Err(choices(value, &["constant", "cosine"])),
                }
            }
            "start_x1" => self.start_x1 = finite(parse(value)?)?,
            "start_x2" => self.start_x2 = finite(parse(value)?)?,
            "iterations" => self.iterations = at_least(parse(value)?, 1)?,
            "lr_sgd" => self.lr_sgd = positive(parse(value)?)?,
            "lr_momentum" => self.lr_momentum = positive(parse(value)?)?,
            "lr_adam" => self.lr_adam = positive(parse(value)?)?,
            "rows" => self.rows = at_least(parse(value)?, 1)?,
            "cols" => self.cols = at_least(parse(value)?, 1)?,
            "density" => self.density = unit_interval(parse(value)?)?,
            "noise" => self.noise = non_negative(parse(value)?)?,
            "lambda" => self.lambda = non_negative(parse(value)?)?,
            "dense_reg" => self.dense_reg = non_negative(parse(value)?)?,
            "image" => self.image = value.to_string(),
            "filters" => self.filters = at_least(parse(value)?, 1)?,
            "filter_size" => self.filter_size = at_least(parse(value)?, 1)?,
            "image_size" => self.image_size = at_least(parse(value)?, 1)?,
            "code_density" => self.code_density = unit_interval(parse(value)?)?,
            "rho" => self.rho = positive(parse(value)?)?,
            "epochs" => self.epochs = at_least(parse(value)?, 1)?,
            "inner_iters" => self.inner_iters = at_least(parse(value)?, 1)?,
            "keep_fraction" => {
                let v: f64 = parse(value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(format!("{v} is outside (0, 1]"));
                }
                self.keep_fraction = v;
            }
            "inpaint_iters" => self.inpaint_iters = at_least(parse(value)?, 1)?,
            "normalize" => self.normalize = boolean(value)?,
            "samples" => self.samples = at_least(parse(value)?, 2)?,
            "input_dim" => self.input_dim = at_least(parse(value)?, 1)?,
            "hidden" => {
                let widths = value
                    .split(',')
                    .map(|w| parse::<usize>(w.trim()).and_then(|w| at_least(w, 1)))
                    .collect::<Result<Vec<_>, _>>()?;
                self.hidden = widths;
            }
            "outputs" => self.outputs = at_least(parse(value)?, 1)?,
            "batch_size" => self.batch_size = at_least(parse(value)?, 2)?,
            "weight_reg" => self.weight_reg = non_negative(parse(value)?)?,
            "quantile" => self.quantile = unit_interval(parse(value)?)?,
            "mask_init" => {
                self.mask_init = match value {
                    "ones" => MaskInit::Ones,
                    "abs-normal" => MaskInit::AbsNormal,
                    "normal" => MaskInit::Normal,
                    _ => return Err(choices(value, &["ones", "abs-normal", "normal"])),
                }
            }
            "prune_threshold" => self.prune_threshold = non_negative(parse(value)?)?,
            _ => return Err(format!("unknown key; valid keys are {}", KEYS.join(", "))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let c = &self.coupling;
        match key {
            "experiment" => self.experiment.name().into(),
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.clone(),
            "kernel_exponent" => c.kernel_exponent.to_string(),
            "beta_scale" => c.beta_scale.to_string(),
            "alpha_sparse" => c.alpha_sparse.to_string(),
            "alpha_dense" => c.alpha_dense.to_string(),
            "period" => c.period.to_string(),
            "coupling_epsilon" => c.epsilon.to_string(),
            "norm" => match c.norm {
                Norm::L1 => "l1".into(),
                Norm::L2 => "l2".into(),
            },
            "gate" => if c.enabled { "on" } else { "off" }.into(),
            "optimizer" => self.optimizer.name().into(),
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "schedule" => match self.schedule {
                ScheduleKind::Constant => "constant".into(),
                ScheduleKind::Cosine => "cosine".into(),
            },
            "start_x1" => self.start_x1.to_string(),
            "start_x2" => self.start_x2.to_string(),
            "iterations" => self.iterations.to_string(),
            "lr_sgd" => self.lr_sgd.to_string(),
            "lr_momentum" => self.lr_momentum.to_string(),
            "lr_adam" => self.lr_adam.to_string(),
            "rows" => self.rows.to_string(),
            "cols" => self.cols.to_string(),
            "density" => self.density.to_string(),
            "noise" => self.noise.to_string(),
            "lambda" => self.lambda.to_string(),
            "dense_reg" => self.dense_reg.to_string(),
            "image" => self.image.clone(),
            "filters" => self.filters.to_string(),
            "filter_size" => self.filter_size.to_string(),
            "image_size" => self.image_size.to_string(),
            "code_density" => self.code_density.to_string(),
            "rho" => self.rho.to_string(),
            "epochs" => self.epochs.to_string(),
            "inner_iters" => self.inner_iters.to_string(),
            "keep_fraction" => self.keep_fraction.to_string(),
            "inpaint_iters" => self.inpaint_iters.to_string(),
            "normalize" => self.normalize.to_string(),
            "samples" => self.samples.to_string(),
            "input_dim" => self.input_dim.to_string(),
            "hidden" => self
                .hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "outputs" => self.outputs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "weight_reg" => self.weight_reg.to_string(),
            "quantile" => self.quantile.to_string(),
            "mask_init" => match self.mask_init {
                MaskInit::Ones => "ones".into(),
                MaskInit::AbsNormal => "abs-normal".into(),
                MaskInit::Normal => "normal".into(),
            },
            "prune_threshold" => self.prune_threshold.to_string(),
            _ => unreachable!("{key} is not a config key"),
        }
    }

    /// All keys with their values, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k))).collect()
    }

    /// A document that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    fn cross_check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.coupling.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.optimizer_config().validate() {
            errs.push(e.to_string());
        }
        if self.filter_size > self.image_size {
            errs.push(format!(
                "filter_size {} exceeds image_size {}",
                self.filter_size, self.image_size
            ));
        }
        if self.hidden.is_empty() {
            errs.push("hidden needs at least one layer".into());
        }
        errs
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {}", std::any::type_name::<T>()))
}

fn finite(v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not finite"))
    }
}

fn positive(v: f64) -> Result<f64, String> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be > 0"))
    }
}

fn non_negative(v: f64) -> Result<f64, String> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

fn unit_interval(v: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn half_open_unit(v: f64) -> Result<f64, String> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1)"))
    }
}

fn at_least<T: PartialOrd + fmt::Display>(v: T, min: T) -> Result<T, String> {
    if v >= min {
        Ok(v)
    } else {
        Err(format!("{v} must be >= {min}"))
    }
}

fn boolean(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(choices(value, &["true", "false"])),
    }
}

fn on_off(value: &str) -> Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(choices(value, &["on", "off"])),
    }
}

fn choices(value: &str, valid: &[&str]) -> String {
    format!("{value:?} is not one of {}", valid.join(", "))
}

fn split_line(line: &str) -> Option<Result<(&str, &str), String>> {
    let t = line.trim();
    if t.is_empty() || t.starts_with('#') {
        return None;
    }
    Some(match t.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => Err(format!("expected key=value, got {t:?}")),
    })
}

/// Parses a document; see [`parse_config_with`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_with(text, &[])
}

/// Parses a document followed by `key=value` overrides.
pub fn parse_config_with(
    text: &str,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut entries: Vec<(Location, String, String)> = Vec::new();
    let sources = text
        .lines()
        .enumerate()
        .map(|(i, l)| (Location::Line(i + 1), l))
        .chain(
            overrides
                .iter()
                .enumerate()
                .map(|(i, l)| (Location::Override(i + 1), l.as_str())),
        );
    for (loc, line) in sources {
        match split_line(line) {
            None => {}
            Some(Ok((k, v))) => entries.push((loc, k.to_string(), v.to_string())),
            Some(Err(message)) => errors.push(ConfigError {
                location: loc,
                key: String::new(),
                message,
            }),
        }
    }

    let mut experiment = None;
    for (loc, k, v) in &entries {
        if k == "experiment" {
            match Experiment::parse(v) {
                Some(e) => experiment = Some(e),
                None => errors.push(ConfigError {
                    location: loc.clone(),
                    key: k.clone(),
                    message: choices(v, &Experiment::ALL.map(|e| e.name())),
                }),
            }
        }
    }
    let Some(experiment) = experiment else {
        if errors.is_empty() {
            errors.push(ConfigError {
                location: Location::Document,
                key: "experiment".into(),
                message: "missing; set experiment=<name>".into(),
            });
        }
        errors.sort_by_key(|e| e.location.order());
        return Err(ConfigErrors(errors));
    };

    let mut cfg = ExperimentConfig::defaults(experiment);
    for (loc, k, v) in &entries {
        if k == "experiment" {
            continue;
        }
        if let Err(message) = cfg.set(k, v) {
            errors.push(ConfigError {
                location: loc.clone(),
                key: k.clone(),
                message,
            });
        }
    }
    if errors.is_empty() {
        for message in cfg.cross_check() {
            errors.push(ConfigError {
                location: Location::Document,
                key: String::new(),
                message,
            });
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        errors.sort_by_key(|e| e.location.order());
        Err(ConfigErrors(errors))
    }
}
