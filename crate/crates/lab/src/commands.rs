//! One function per subcommand: run the experiment, write its files under the
//! output directory and summarize the outcome.

use std::path::Path;

use gpae_core::approx::{grad_check_actor, grad_check_critic, grad_check_value, ActorLossConfig, GradCheckConfig, GradCheckReport};
use gpae_core::trainer::{train as run_training, MetricsRecord, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};

use crate::compare::{self, CompareConfig};
use crate::gap::{self, GapConfig};
use crate::output::{config_hash, csv_writer, write_csv, write_json};
use crate::verify::{self, VerifyConfig};
use crate::{LabError, RunSummary};

/// Configs that accept a `--seed` override.
pub trait Seeded {
    fn set_seed(&mut self, seed: u64);
}

macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl Seeded for $t {
            fn set_seed(&mut self, seed: u64) {
                self.seed = seed;
            }
        })*
    };
}

seeded!(VerifyConfig, CompareConfig, GapConfig, TrainConfig);

impl Seeded for GradcheckCommandConfig {
    fn set_seed(&mut self, seed: u64) {
        self.check.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckCommandConfig {
    pub check: GradCheckConfig,
    pub actor: ActorLossConfig,
    /// Maximum allowed relative error per parameter block.
    pub tolerance: f64,
}

impl Default for GradcheckCommandConfig {
    fn default() -> Self {
        Self { check: GradCheckConfig::default(), actor: ActorLossConfig::default(), tolerance: 1e-4 }
    }
}

fn rel(out: &Path, name: &str) -> (std::path::PathBuf, String) {
    (out.join(name), name.to_string())
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct ClaimLine<'a> {
    claim: &'a str,
    passed: bool,
    worst_margin: f64,
}

#[derive(Serialize)]
struct VerifySummaryFile<'a> {
    passed: bool,
    config_sha256: &'a str,
    claims: Vec<ClaimLine<'a>>,
}

pub fn verify(cfg: &VerifyConfig, out: &Path) -> Result<RunSummary, LabError> {
    let hash = config_hash(cfg);
    let certs = verify::run(cfg);
    let mut files = vec!["config.json".to_string()];
    write_json(&out.join("config.json"), cfg)?;
    let mut lines = Vec::new();
    for cert in &certs {
        let (path, name) = rel(out, &format!("{}.json", cert.claim.name()));
        write_json(&path, cert)?;
        files.push(name);
        let detail = match (&cert.error, cert.worst()) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(w)) => format!("worst {}: measured {:.3e}, limit {:.3e}", w.label, w.measured, w.limit),
            (None, None) => "no checks".into(),
        };
        lines.push(format!("{} {} ({detail})", verdict(cert.passed), cert.claim.name()));
    }
    let passed = certs.iter().all(|c| c.passed);
    let summary = VerifySummaryFile {
        passed,
        config_sha256: &hash,
        claims: certs.iter().map(|c| ClaimLine { claim: c.claim.name(), passed: c.passed, worst_margin: c.worst_margin }).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    Ok(RunSummary { passed, files, lines })
}

pub fn compare(cfg: &CompareConfig, out: &Path) -> Result<RunSummary, LabError> {
    let hash = config_hash(cfg);
    let rows = compare::run(cfg)?;
    let summary = compare::summarize(cfg, &rows);
    write_json(&out.join("config.json"), cfg)?;
    write_csv(&out.join("compare.csv"), "compare", &hash, &rows)?;
    write_json(&out.join("compare_summary.json"), &summary)?;
    let lines = vec![format!(
        "dt smallest gap in {}/{} seeds (mean dt {:.4}, st {:.4}, it {:.4})",
        summary.dt_smallest_seeds, summary.seeds, summary.mean_dt, summary.mean_st, summary.mean_it
    )];
    Ok(RunSummary { passed: true, files: vec!["config.json".into(), "compare.csv".into(), "compare_summary.json".into()], lines })
}

pub fn gap(cfg: &GapConfig, out: &Path) -> Result<RunSummary, LabError> {
    let hash = config_hash(cfg);
    let (rows, perf) = gap::run(cfg)?;
    let summary = gap::summarize(&rows, &perf);
    write_json(&out.join("config.json"), cfg)?;
    write_csv(&out.join("gap_delta_a.csv"), "gap", &hash, &rows)?;
    write_csv(&out.join("gap_performance.csv"), "gap", &hash, &perf)?;
    write_json(&out.join("gap_summary.json"), &summary)?;
    let mut lines: Vec<String> = summary
        .estimators
        .iter()
        .map(|e| {
            let ret = e.mean_final_return.map_or("-".to_string(), |r| format!("{r:.4}"));
            format!("{:<9} mean delta_a {:+.5} (sd {:.5}), final return {ret}", e.estimator, e.mean_delta_a, e.std_delta_a)
        })
        .collect();
    lines.push(format!(
        "gpae_off > 0: t = {:.3}, one-sided p = {:.3e}; gpae_off >= gpae_on in {}/{} seeds",
        summary.gpae_off_t, summary.gpae_off_p_value, summary.off_at_least_on_seeds, summary.seeds
    ));
    let files = ["config.json", "gap_delta_a.csv", "gap_performance.csv", "gap_summary.json"].map(String::from).to_vec();
    Ok(RunSummary { passed: true, files, lines })
}

#[derive(Serialize)]
struct GradcheckFile<'a> {
    tolerance: f64,
    passed: bool,
    reports: &'a [GradCheckReport],
}

pub fn gradcheck(cfg: &GradcheckCommandConfig, out: &Path) -> Result<RunSummary, LabError> {
    let reports = vec![grad_check_critic(&cfg.check)?, grad_check_value(&cfg.check)?, grad_check_actor(&cfg.check, &cfg.actor)?];
    let passed = reports.iter().all(|r| r.passed(cfg.tolerance));
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("gradcheck.json"), &GradcheckFile { tolerance: cfg.tolerance, passed, reports: &reports })?;
    let lines = reports
        .iter()
        .map(|r| {
            format!(
                "{} {}: max relative error {:.3e} over {} points ({} excluded)",
                verdict(r.passed(cfg.tolerance)),
                r.loss,
                r.max_rel_error,
                r.points_checked,
                r.points_excluded
            )
        })
        .collect();
    Ok(RunSummary { passed, files: vec!["config.json".into(), "gradcheck.json".into()], lines })
}

/// Runs training, streaming metrics rows to `metrics.csv` as they are
/// produced so an aborted run leaves its partial metrics behind.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<RunSummary, LabError> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    write_json(&out.join("config.json"), cfg)?;
    let metrics_path = out.join("metrics.csv");
    let mut writer = csv_writer(&metrics_path, "train", &hash)?;
    writer.write_record(MetricsRecord::COLUMNS)?;
    writer.flush().map_err(|e| LabError::io(&metrics_path, e))?;
    let result = run_training(cfg, |record| {
        writer.serialize(record).map_err(TrainError::from)?;
        writer.flush()?;
        Ok(())
    });
    writer.flush().map_err(|e| LabError::io(&metrics_path, e))?;
    drop(writer);
    let outcome = result?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    write_json(&out.join("final_eval.json"), &outcome.final_eval)?;
    let mut lines = vec![format!("{} iterations, {} env steps", outcome.checkpoint.iteration, outcome.checkpoint.env_steps)];
    if let Some(e) = outcome.final_eval {
        let success = e.success_rate.map_or(String::new(), |s| format!(", success rate {s:.3}"));
        lines.push(format!("final evaluation over {} episodes: mean return {:.4}{success}", e.episodes, e.mean_return));
    }
    let files = ["config.json", "metrics.csv", "checkpoint.json", "final_eval.json"].map(String::from).to_vec();
    Ok(RunSummary { passed: true, files, lines })
}
