//! `htopt`: run experiments, validators and bound calculators from a config
//! file.
//!
//! Exit codes: 0 success, 1 a validated inequality failed, 2 configuration
//! or I/O error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use htopt_core::bounds::BoundReport;
use htopt_core::experiments::{
    accum_compare, convergence_study, lemmas, output, quantile_study, ExperimentKind,
};
use serde_json::{json, Value};

use config::{Command as ConfigCommand, ConfigError, Resolved};

#[derive(Parser)]
#[command(
    name = "htopt",
    version,
    about = "Heavy-tailed SGD experiments and bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment.replicates`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "HTOPT_WORKERS")]
    workers: Option<usize>,
    /// Print every resolved key and where its value came from.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    LemmaB1,
    LemmaC1,
    PropB1,
    Bernstein,
}

#[derive(Subcommand)]
enum Command {
    /// Replicate-averaged convergence curves.
    BenchConvergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantiles of per-run average gradient norms.
    BenchQuantile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo check of an error bound or inequality.
    Validate {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print closed-form bounds as JSON.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Compare per-micro-batch and post-accumulation clipping.
    AccumCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Config(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<htopt_core::Error> for Failure {
    fn from(e: htopt_core::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn resolve(kind: ConfigCommand, common: &Common) -> Result<(Resolved, usize), Failure> {
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("experiment.seed", s.to_string()));
    }
    if let Some(r) = common.replicates {
        overrides.push(("experiment.replicates", r.to_string()));
    }
    let resolved = Resolved::load(kind, &common.config, &overrides)?;
    if common.verbose {
        eprint!("{}", resolved.precedence_report());
    }
    let workers = common
        .workers
        .unwrap_or_else(htopt_core::experiments::default_workers);
    if workers == 0 {
        return Err(Failure::Config(
            "invalid value for `--workers`: must be >= 1".into(),
        ));
    }
    Ok((resolved, workers))
}

fn write_summary(out: &Path, config: &Value, results: Value) -> Result<(), Failure> {
    output::write_atomic(
        &out.join("summary.json"),
        &output::summary_json(config, results),
    )?;
    Ok(())
}

fn check(ok: bool, what: &str) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{what} violated")))
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn validate(target: Target, common: &Common, out: Option<&Path>) -> Result<(), Failure> {
    let kind = match target {
        Target::LemmaB1 => ExperimentKind::LemmaB1,
        Target::LemmaC1 => ExperimentKind::LemmaC1,
        Target::PropB1 => ExperimentKind::PropB1,
        Target::Bernstein => ExperimentKind::Bernstein,
    };
    let (cfg, workers) = resolve(ConfigCommand::Experiment(kind), common)?;
    let echo = cfg.echo();
    let seed = cfg.seed()?;
    let replicates = cfg.replicates()?;
    let (results, ok, what) = match target {
        Target::LemmaB1 => {
            let lemma = cfg.lemma()?;
            let reports = lemma
                .p_grid
                .iter()
                .map(|&p| lemmas::validate_lemma_b1(p, &lemma.n_grid, replicates, seed, workers))
                .collect::<htopt_core::Result<Vec<_>>>()?;
            let ok = reports.iter().all(|r| r.bound_holds());
            (to_json(&reports), ok, "in-expectation estimator bound")
        }
        Target::LemmaC1 => {
            let lemma = cfg.lemma()?;
            let reports = lemma
                .p_grid
                .iter()
                .map(|&p| {
                    lemmas::validate_lemma_c1(
                        p,
                        lemma.n,
                        &lemma.delta_grid,
                        replicates,
                        seed,
                        workers,
                    )
                })
                .collect::<htopt_core::Result<Vec<_>>>()?;
            let ok = reports.iter().all(|r| r.bound_holds());
            (to_json(&reports), ok, "high-probability estimator bound")
        }
        Target::PropB1 => {
            let report = lemmas::validate_prop_b1(&cfg.experiment()?, workers)?;
            let ok = report.passed == report.total;
            let mut v = to_json(&report);
            if let Some(obj) = v.as_object_mut() {
                obj.remove("rows");
            }
            (v, ok, "descent inequality")
        }
        Target::Bernstein => {
            let report = lemmas::validate_bernstein(&cfg.bernstein()?, replicates, seed, workers)?;
            let ok = report.bound_holds();
            (to_json(&report), ok, "Bernstein tail bound")
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&results).unwrap_or_default()
    );
    if let Some(dir) = out {
        write_summary(dir, &echo, json!({ "passed": ok, "report": results }))?;
    }
    check(ok, what)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BenchConvergence { common, out } => {
            let (cfg, workers) = resolve(
                ConfigCommand::Experiment(ExperimentKind::Convergence),
                &common,
            )?;
            let report = convergence_study(&cfg.experiment()?, workers)?;
            output::write_convergence(&out, &cfg.echo(), &report)?;
            for a in &report.algorithms {
                println!(
                    "{}: avg_grad_norm={:.6} min_grad_norm={:.6}",
                    a.label, a.avg_grad_norm, a.min_grad_norm
                );
            }
            Ok(())
        }
        Command::BenchQuantile { common, out } => {
            let (cfg, workers) =
                resolve(ConfigCommand::Experiment(ExperimentKind::Quantile), &common)?;
            let report = quantile_study(&cfg.experiment()?, workers)?;
            output::write_quantile(&out, &cfg.echo(), &report)?;
            for s in &report.summaries {
                let qs: Vec<String> = s
                    .quantiles
                    .iter()
                    .map(|(d, q)| format!("{d}:{q:.4}"))
                    .collect();
                println!("{}: {}", s.label, qs.join(" "));
            }
            Ok(())
        }
        Command::Validate {
            target,
            common,
            out,
        } => validate(target, &common, out.as_deref()),
        Command::Bounds { config, verbose } => {
            let cfg = Resolved::load(ConfigCommand::Bounds, &config, &[])?;
            if verbose {
                eprint!("{}", cfg.precedence_report());
            }
            let report = BoundReport::evaluate(&cfg.bound_inputs()?)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).unwrap_or_default()
            );
            Ok(())
        }
        Command::AccumCompare { common, out } => {
            let (cfg, workers) = resolve(
                ConfigCommand::Experiment(ExperimentKind::AccumCompare),
                &common,
            )?;
            let cmp = accum_compare(&cfg.experiment()?, workers)?;
            output::write_accum(&out, &cfg.echo(), &cmp)?;
            println!(
                "per-micro-batch avg_grad_norm={:.6}, post-accumulation avg_grad_norm={:.6}, per-micro-batch no worse in {}/{} seeds",
                cmp.per_micro_batch.avg_grad_norm,
                cmp.post_accumulation.avg_grad_norm,
                cmp.per_micro_batch_wins,
                cmp.replicates
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
