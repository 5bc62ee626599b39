//! Flat `key = value` configuration files.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key must be
//! known. Values resolve with precedence command line > file > defaults,
//! and defaults depend on the subcommand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use htopt_core::bounds::{cor1_batch, BoundInputs};
use htopt_core::experiments::lemmas::BernsteinSpec;
use htopt_core::experiments::presets::Preset;
use htopt_core::experiments::{AlgorithmSpec, ExperimentKind, ExperimentSpec, LemmaSpec};
use htopt_core::{
    AccumulationConfig, ClipPlacement, EstimatorConfig, EstimatorMode, InitScheme, NoiseModel,
    OptimizerConfig, SeedSpec, StepSchedule,
};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {reason}")]
    Range { key: String, reason: String },
    #[error(transparent)]
    Core(#[from] htopt_core::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Which subcommand the configuration is resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Experiment(ExperimentKind),
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Experiment(k) => k.name(),
            Command::Bounds => "bounds",
        }
    }
}

/// Every accepted key with its command-independent default.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment.preset", "none"),
    ("experiment.replicates", "10"),
    ("experiment.seed", "0"),
    ("problem.kind", "quadratic"),
    ("problem.dim", "10"),
    ("problem.init", "normal"),
    ("noise.kind", "pareto"),
    ("noise.p", "1.5"),
    ("noise.scale", "1"),
    ("noise.std", "1"),
    (
        "estimator.mode",
        "global-clip, ps-clip-increasing, normalize",
    ),
    ("estimator.alpha", "1"),
    ("estimator.beta", "1"),
    ("estimator.gamma", "1"),
    ("estimator.batch_size", "64"),
    ("optimizer.eta", "0.01"),
    ("optimizer.schedule", "constant"),
    ("optimizer.warmup_steps", "0"),
    ("optimizer.floor_fraction", "0.1"),
    ("optimizer.momentum", "0"),
    ("optimizer.weight_decay", "0"),
    ("optimizer.steps", "2000"),
    ("optimizer.theorem_mode", "false"),
    (
        "quantile.deltas",
        "0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0001",
    ),
    ("lemma.p", "1.3, 1.6, 2.0"),
    ("lemma.n_grid", "1, 4, 16, 64, 256, 1024"),
    ("lemma.n", "64"),
    ("lemma.deltas", "0.2, 0.1, 0.05, 0.01"),
    ("bernstein.dim", "3"),
    ("bernstein.truncation", "2"),
    ("bernstein.n_grid", "10, 100"),
    ("bernstein.epsilons", "0.25, 0.5, 1, 2"),
    ("accum.m", "8"),
    ("accum.k", "64"),
    ("accum.placement", "per-micro-batch"),
    ("accum.gamma", "1"),
    ("bounds.delta1", "1"),
    ("bounds.L", "1"),
    ("bounds.sigma", "1"),
    ("bounds.p", "2"),
    ("bounds.T", "100"),
    ("bounds.n", "auto"),
    ("bounds.delta", "0.01"),
    ("bounds.eta", "auto"),
];

fn command_defaults(cmd: Command) -> &'static [(&'static str, &'static str)] {
    use ExperimentKind::*;
    match cmd {
        Command::Experiment(Quantile) => &[
            ("optimizer.steps", "100"),
            ("experiment.replicates", "10000"),
        ],
        Command::Experiment(LemmaB1) => &[("experiment.replicates", "10000")],
        Command::Experiment(LemmaC1) | Command::Experiment(Bernstein) => {
            &[("experiment.replicates", "100000")]
        }
        Command::Experiment(PropB1) => &[
            ("experiment.replicates", "100"),
            ("optimizer.eta", "0.25"),
            ("optimizer.steps", "100"),
            (
                "estimator.mode",
                "plain-mean, ps-clip-increasing, ps-clip-constant, global-clip, normalize",
            ),
        ],
        Command::Experiment(AccumCompare) => &[
            ("noise.p", "1.2"),
            ("optimizer.eta", "0.1"),
            ("optimizer.schedule", "warmup-cosine"),
            ("optimizer.warmup_steps", "100"),
            ("optimizer.steps", "1000"),
        ],
        Command::Experiment(Convergence) | Command::Bounds => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    CommandLine,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::CommandLine => "command line",
        })
    }
}

/// Parses config text into `(key, value, line)` triples.
pub fn parse_str(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            reason: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                reason: "empty key or value".into(),
            });
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.into(),
            });
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(ConfigError::Parse {
                line,
                reason: format!("duplicate key `{key}` (first set on line {first})"),
            });
        }
        out.push((key.to_string(), value.to_string(), line));
    }
    Ok(out)
}

/// Fully resolved key-value configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    command: Command,
    values: BTreeMap<&'static str, (String, Source)>,
}

impl Resolved {
    pub fn resolve(command: Command, file: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut values: BTreeMap<&'static str, (String, Source)> = KEYS
            .iter()
            .map(|&(k, v)| (k, (v.to_string(), Source::Default)))
            .collect();
        for &(k, v) in command_defaults(command) {
            values.insert(k, (v.to_string(), Source::Default));
        }
        for (key, value, _) in parse_str(file)? {
            let k = static_key(&key).expect("parse_str checks keys");
            values.insert(k, (value, Source::File));
        }
        for (key, value) in overrides {
            let k = static_key(key).ok_or_else(|| ConfigError::Range {
                key: key.to_string(),
                reason: "unknown key".into(),
            })?;
            values.insert(k, (value.clone(), Source::CommandLine));
        }
        Ok(Self { command, values })
    }

    pub fn load(command: Command, path: &Path, overrides: &[(&str, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::resolve(command, &text, overrides)
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values[key].0
    }

    fn range(key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Range {
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Self::range(key, format!("expected {what}, got `{raw}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key, "a number")?;
        if v.is_nan() {
            return Err(Self::range(key, "NaN is not allowed"));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key, "a non-negative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, "true or false")
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse()
                    .map_err(|_| Self::range(key, format!("expected a list of {what}, got `{s}`")))
            })
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key, "numbers")
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.list(key, "integers")
    }

    /// All keys with their resolved values, as embedded in output files.
    pub fn echo(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), Value::String(self.command.name().into()));
        for (k, (v, _)) in &self.values {
            m.insert((*k).into(), Value::String(v.clone()));
        }
        Value::Object(m)
    }

    /// One line per key naming where its value came from.
    pub fn precedence_report(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, s))| format!("{k} = {v}  [{s}]\n"))
            .collect()
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        if self.raw("problem.kind") != "quadratic" {
            return Err(Self::range("problem.kind", "only `quadratic` is supported"));
        }
        let dim = self.usize("problem.dim")?;
        let model = match self.raw("noise.kind") {
            "pareto" => NoiseModel::pareto(self.f64("noise.p")?, self.f64("noise.scale")?, dim),
            "gaussian" => NoiseModel::gaussian(self.f64("noise.std")?, dim),
            "none" => NoiseModel::none(dim),
            other => {
                return Err(Self::range(
                    "noise.kind",
                    format!("expected pareto, gaussian or none, got `{other}`"),
                ))
            }
        }?;
        Ok(model)
    }

    fn schedule(&self) -> Result<StepSchedule> {
        let eta = self.f64("optimizer.eta")?;
        match self.raw("optimizer.schedule") {
            "constant" => Ok(StepSchedule::Constant { eta }),
            "warmup-cosine" => Ok(StepSchedule::WarmupCosine {
                eta_max: eta,
                warmup_steps: self.usize("optimizer.warmup_steps")?,
                floor_fraction: self.f64("optimizer.floor_fraction")?,
            }),
            other => Err(Self::range(
                "optimizer.schedule",
                format!("expected constant or warmup-cosine, got `{other}`"),
            )),
        }
    }

    fn optimizer(&self, estimator: EstimatorConfig) -> Result<OptimizerConfig> {
        Ok(OptimizerConfig {
            schedule: self.schedule()?,
            momentum: self.f64("optimizer.momentum")?,
            weight_decay: self.f64("optimizer.weight_decay")?,
            steps: self.usize("optimizer.steps")?,
            estimator,
            theorem_mode: self.bool("optimizer.theorem_mode")?,
        })
    }

    fn algorithms(&self) -> Result<Vec<AlgorithmSpec>> {
        let batch = self.usize("estimator.batch_size")?;
        let steps = self.usize("optimizer.steps")?;
        match self.raw("experiment.preset") {
            "none" => {}
            name => {
                let preset: Preset = name
                    .parse()
                    .map_err(|e: String| Self::range("experiment.preset", e))?;
                return Ok(preset.algorithms(self.f64("noise.p")?, batch, steps)?);
            }
        }
        let modes: Vec<EstimatorMode> = self
            .raw("estimator.mode")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e: String| Self::range("estimator.mode", e))
            })
            .collect::<Result<_>>()?;
        if modes.is_empty() {
            return Err(Self::range(
                "estimator.mode",
                "at least one mode is required",
            ));
        }
        modes
            .into_iter()
            .map(|mode| {
                let est = EstimatorConfig::new(mode, batch)
                    .with_alpha(self.f64("estimator.alpha")?)
                    .with_beta(self.f64("estimator.beta")?)
                    .with_gamma(self.f64("estimator.gamma")?);
                est.validate()?;
                Ok(AlgorithmSpec::new(self.optimizer(est)?))
            })
            .collect()
    }

    fn accumulation(&self) -> Result<AccumulationConfig> {
        let placement = ClipPlacement::parse(self.raw("accum.placement")).ok_or_else(|| {
            Self::range(
                "accum.placement",
                "expected per-micro-batch or post-accumulation",
            )
        })?;
        let acc = AccumulationConfig {
            micro_batch: self.usize("accum.m")?,
            accumulation_steps: self.usize("accum.k")?,
            placement,
            gamma: self.f64("accum.gamma")?,
        };
        acc.validate()?;
        Ok(acc)
    }

    pub fn lemma(&self) -> Result<LemmaSpec> {
        Ok(LemmaSpec {
            p_grid: self.f64_list("lemma.p")?,
            n_grid: self.usize_list("lemma.n_grid")?,
            n: self.usize("lemma.n")?,
            delta_grid: self.f64_list("lemma.deltas")?,
        })
    }

    pub fn bernstein(&self) -> Result<BernsteinSpec> {
        Ok(BernsteinSpec {
            dim: self.usize("bernstein.dim")?,
            truncation: self.f64("bernstein.truncation")?,
            n_grid: self.usize_list("bernstein.n_grid")?,
            epsilon_grid: self.f64_list("bernstein.epsilons")?,
        })
    }

    pub fn seed(&self) -> Result<SeedSpec> {
        Ok(SeedSpec::new(self.u64("experiment.seed")?, 0))
    }

    pub fn replicates(&self) -> Result<usize> {
        let r = self.usize("experiment.replicates")?;
        if r == 0 {
            return Err(Self::range("experiment.replicates", "must be >= 1"));
        }
        Ok(r)
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let kind = match self.command {
            Command::Experiment(k) => k,
            Command::Bounds => {
                return Err(Self::range(
                    "experiment.kind",
                    "bounds is not an experiment",
                ))
            }
        };
        let init = InitScheme::parse(self.raw("problem.init"))
            .ok_or_else(|| Self::range("problem.init", "expected normal, uniform or ones"))?;
        let mut algorithms = self.algorithms()?;
        let accumulation = if kind == ExperimentKind::AccumCompare {
            let acc = self.accumulation()?;
            algorithms.truncate(1);
            for a in &mut algorithms {
                a.label = "accumulated".into();
            }
            Some(acc)
        } else {
            None
        };
        let spec = ExperimentSpec {
            kind,
            noise: self.noise()?,
            init,
            algorithms,
            replicates: self.replicates()?,
            seed: self.seed()?,
            delta_grid: self.f64_list("quantile.deltas")?,
            accumulation,
            lemma: self.lemma()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bound_inputs(&self) -> Result<BoundInputs> {
        let t = self.u64("bounds.T")?;
        let l = self.f64("bounds.L")?;
        let mut inp = BoundInputs {
            delta1: self.f64("bounds.delta1")?,
            l,
            sigma: self.f64("bounds.sigma")?,
            p: self.f64("bounds.p")?,
            t,
            n: 1,
            delta: self.f64("bounds.delta")?,
            eta: vec![],
        };
        inp.n = match self.raw("bounds.n") {
            "auto" => cor1_batch(&inp)?,
            _ => self.u64("bounds.n")?,
        };
        let eta = match self.raw("bounds.eta") {
            "auto" => 0.5 / l,
            _ => self.f64("bounds.eta")?,
        };
        if t > 10_000_000 {
            return Err(Self::range("bounds.T", "must be <= 10^7"));
        }
        inp.eta = vec![eta; t as usize];
        inp.validate()?;
        Ok(inp)
    }
}

fn static_key(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(k, _)| *k)
}
