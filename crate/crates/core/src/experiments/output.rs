//! Files written by the harness. Every file carries the resolved
//! configuration, and every write goes through a temporary file that is
//! renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::optimizers::RunTrace;

use super::accum::AccumComparison;
use super::convergence::ConvergenceReport;
use super::quantile::QuantileReport;

pub const TRACE_HEADER: &str = "t,eta,true_grad_norm,est_error,objective,clipped_count";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// First 12 hex digits of the SHA-256 of the compact JSON encoding.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(6).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The configuration as `# `-prefixed pretty JSON lines.
pub fn comment_block(config: &Value) -> String {
    let pretty = serde_json::to_string_pretty(config).unwrap_or_default();
    let mut out = format!("# config_hash: {}\n", config_hash(config));
    for line in pretty.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &RunTrace, config: &Value) -> String {
    let mut out = comment_block(config);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            fmt_float(r.eta),
            fmt_float(r.true_grad_norm),
            fmt_float(r.est_error),
            fmt_float(r.objective),
            r.clipped_count
        );
    }
    out
}

/// Two-column `x y` series.
pub fn dat_series(config: &Value, columns: (&str, &str), points: &[(f64, f64)]) -> String {
    let mut out = comment_block(config);
    let _ = writeln!(out, "# {} {}", columns.0, columns.1);
    for &(x, y) in points {
        let _ = writeln!(out, "{} {}", fmt_float(x), fmt_float(y));
    }
    out
}

pub fn summary_json(config: &Value, results: Value) -> String {
    let doc = json!({
        "config": config,
        "config_hash": config_hash(config),
        "results": results,
    });
    let mut s = serde_json::to_string_pretty(&doc).unwrap_or_default();
    s.push('\n');
    s
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn curve_points(curve: &[f64]) -> Vec<(f64, f64)> {
    curve
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect()
}

pub fn write_convergence(dir: &Path, config: &Value, report: &ConvergenceReport) -> Result<()> {
    for alg in &report.algorithms {
        let stem = file_stem(&alg.label);
        if let Some(trace) = &alg.first_trace {
            write_atomic(
                &dir.join(format!("trace_{stem}.csv")),
                &trace_csv(trace, config),
            )?;
        }
        let dat = dat_series(
            config,
            ("t", "mean_grad_norm"),
            &curve_points(&alg.mean_curve),
        );
        write_atomic(&dir.join(format!("curve_{stem}.dat")), &dat)?;
    }
    let results: Vec<Value> = report
        .algorithms
        .iter()
        .map(|a| {
            json!({
                "label": a.label,
                "min_grad_norm": a.min_grad_norm,
                "avg_grad_norm": a.avg_grad_norm,
                "per_run_avg_grad_norm": a.per_run_avg_grad_norm,
            })
        })
        .collect();
    write_atomic(
        &dir.join("summary.json"),
        &summary_json(
            config,
            json!({ "replicates": report.replicates, "algorithms": results }),
        ),
    )
}

pub fn write_quantile(dir: &Path, config: &Value, report: &QuantileReport) -> Result<()> {
    for s in &report.summaries {
        let pts: Vec<(f64, f64)> = s
            .quantiles
            .iter()
            .map(|&(d, q)| ((1.0 / d).ln(), q))
            .collect();
        let dat = dat_series(config, ("ln_inv_delta", "quantile"), &pts);
        write_atomic(
            &dir.join(format!("quantile_{}.dat", file_stem(&s.label))),
            &dat,
        )?;
    }
    let results: Vec<Value> = report
        .summaries
        .iter()
        .map(|s| {
            json!({
                "label": s.label,
                "quantiles": s.quantiles.iter().map(|&(d, q)| json!({"delta": d, "quantile": q})).collect::<Vec<_>>(),
                "concave_fraction": super::quantile::concave_fraction(s),
            })
        })
        .collect();
    write_atomic(
        &dir.join("summary.json"),
        &summary_json(
            config,
            json!({ "replicates": report.replicates, "algorithms": results }),
        ),
    )
}

pub fn write_accum(dir: &Path, config: &Value, cmp: &AccumComparison) -> Result<()> {
    for s in [&cmp.per_micro_batch, &cmp.post_accumulation] {
        let dat = dat_series(
            config,
            ("t", "mean_grad_norm"),
            &curve_points(&s.mean_curve),
        );
        write_atomic(&dir.join(format!("curve_{}.dat", s.placement.name())), &dat)?;
    }
    let placement = |s: &super::accum::PlacementSummary| {
        json!({
            "placement": s.placement.name(),
            "avg_grad_norm": s.avg_grad_norm,
            "final_objective_mean": s.final_objective_mean,
            "per_run_avg_grad_norm": s.per_run_avg_grad_norm,
        })
    };
    write_atomic(
        &dir.join("summary.json"),
        &summary_json(
            config,
            json!({
                "replicates": cmp.replicates,
                "per_micro_batch": placement(&cmp.per_micro_batch),
                "post_accumulation": placement(&cmp.post_accumulation),
                "per_micro_batch_wins": cmp.per_micro_batch_wins,
            }),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EstimatorConfig, EstimatorMode};
    use crate::noise::NoiseModel;
    use crate::optimizers::{run, OptimizerConfig};
    use crate::problems::Quadratic;
    use crate::rng::SeedSpec;
    use crate::vector::Vector;

    #[test]
    fn floats_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            1e-300,
            12345.678901234567,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = json!({"x": 1, "y": [1, 2]});
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_eq!(config_hash(&a).len(), 12);
        assert_ne!(config_hash(&a), config_hash(&json!({"x": 2, "y": [1, 2]})));
    }

    #[test]
    fn trace_csv_layout() {
        let prob = Quadratic::new(NoiseModel::none(2).unwrap());
        let opt =
            OptimizerConfig::constant(0.5, 3, EstimatorConfig::new(EstimatorMode::PlainMean, 1));
        let tr = run(&prob, &opt, SeedSpec::new(0, 0), &Vector::from([1.0, 0.0])).unwrap();
        let cfg = json!({"optimizer.eta": 0.5});
        let csv = trace_csv(&tr, &cfg);
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], TRACE_HEADER);
        assert_eq!(body.len(), 4);
        assert_eq!(
            body[2],
            "2,5.0000000000000000e-1,5.0000000000000000e-1,0.0000000000000000e0,1.2500000000000000e-1,0"
        );
        assert!(csv.contains("optimizer.eta"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, "one").unwrap();
        write_atomic(&path, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(
            std::fs::read_dir(path.parent().unwrap()).unwrap().count(),
            1
        );
    }

    #[test]
    fn summary_embeds_config() {
        let cfg = json!({"k": "v"});
        let doc: Value = serde_json::from_str(&summary_json(&cfg, json!({"r": 1}))).unwrap();
        assert_eq!(doc["config"], cfg);
        assert_eq!(doc["config_hash"], config_hash(&cfg));
        assert_eq!(doc["results"]["r"], 1);
    }
}
