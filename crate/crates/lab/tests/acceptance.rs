//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to the real
//! stdout (bypassing capture) before asserting, so a plain `cargo test` run
//! shows the full verdict table.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gpae_core::approx::{grad_check_actor, grad_check_critic, ActorLossConfig, GradCheckConfig};
use gpae_core::trainer::TrainConfig;
use gpae_lab::commands::{self, Seeded};
use gpae_lab::compare::{self, CompareConfig};
use gpae_lab::gap::{self, GapConfig};
use gpae_lab::learning::{self, LearningConfig};
use gpae_lab::verify::{certify, Certificate, Claim, VerifyConfig};

fn report(name: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{verdict} {name}: {detail}");
    let _ = out.flush();
}

fn cert_detail(cert: &Certificate) -> String {
    if let Some(e) = &cert.error {
        return format!("error: {e}");
    }
    cert.worst().map_or("no checks".into(), |w| format!("worst {}: measured {:.3e}, limit {:.3e}", w.label, w.measured, w.limit))
}

/// Certifies one claim under the default configuration within `budget`.
fn claim(name: &str, which: Claim, budget: Option<Duration>) {
    let cfg = VerifyConfig { claims: vec![which], ..Default::default() };
    let start = Instant::now();
    let cert = certify(which, &cfg);
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed < b);
    let passed = cert.passed && !cert.checks.is_empty() && in_time;
    report(name, passed, &format!("{} ({} checks, {:.2?})", cert_detail(&cert), cert.checks.len(), elapsed));
    assert!(passed, "{name}: {cert:#?}");
}

#[test]
fn contraction_of_the_on_policy_operator() {
    let cfg = VerifyConfig::default();
    assert!(cfg.pairs >= 20 && cfg.models.len() >= 4);
    assert_eq!(cfg.lambdas, vec![0.5, 0.95, 1.0]);
    claim("on-policy contraction", Claim::Contraction, Some(Duration::from_secs(10)));
}

#[test]
fn tighter_on_policy_constant() {
    claim("tighter on-policy constant", Claim::TightConstant, None);
}

#[test]
fn fixed_point_is_the_counterfactual_value() {
    claim("fixed point", Claim::FixedPoint, None);
}

#[test]
fn telescoping_gives_policy_invariance() {
    assert!(VerifyConfig::default().telescoping_models.len() >= 2);
    claim("telescoping", Claim::Telescoping, Some(Duration::from_secs(30)));
}

#[test]
fn off_policy_unbiasedness_and_contraction() {
    let cfg = VerifyConfig::default();
    let unbiased = certify(Claim::OffPolicyUnbiased, &cfg);
    let contraction = certify(Claim::OffPolicyContraction, &cfg);
    let passed = unbiased.passed && contraction.passed;
    let detail = format!(
        "unbiasedness {} [{}]; contraction {} [{}]",
        if unbiased.passed { "holds" } else { "fails" },
        cert_detail(&unbiased),
        if contraction.passed { "holds" } else { "fails" },
        cert_detail(&contraction)
    );
    report("off-policy unbiasedness and contraction", passed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn off_policy_operator_reduces_to_on_policy() {
    assert!(VerifyConfig::default().reduction_inputs >= 10);
    claim("operator reduction", Claim::Reduction, None);
}

#[test]
fn single_agent_reduction_to_gae() {
    assert!(VerifyConfig::default().single_agent_trajectories >= 100);
    claim("single-agent reduction", Claim::SingleAgentReduction, None);
}

#[test]
fn double_truncation_algebra() {
    assert!(VerifyConfig::default().dt_samples >= 100_000);
    claim("double-truncation algebra", Claim::DtAlgebra, None);
}

#[test]
fn double_truncation_has_the_smallest_trace_gap() {
    let cfg = CompareConfig::default();
    assert_eq!(cfg.seeds, 20);
    let start = Instant::now();
    let rows = compare::run(&cfg).expect("compare run");
    let elapsed = start.elapsed();
    let s = compare::summarize(&cfg, &rows);
    let passed = s.dt_smallest_seeds >= 15 && elapsed < Duration::from_secs(120);
    report(
        "trace-gap ordering",
        passed,
        &format!(
            "dt smallest in {}/{} seeds (need 15); mean dt {:.4}, st {:.4}, it {:.4} ({:.2?})",
            s.dt_smallest_seeds, s.seeds, s.mean_dt, s.mean_st, s.mean_it, elapsed
        ),
    );
    assert!(passed);
}

#[test]
fn advantage_gap_diagnostic() {
    let cfg = GapConfig::default();
    assert!(cfg.seeds >= 20);
    let start = Instant::now();
    let (rows, perf) = gap::run(&cfg).expect("gap run");
    let elapsed = start.elapsed();
    let s = gap::summarize(&rows, &perf);
    let gae_zero = s.gae_max_abs_delta_a == 0.0;
    let significant = s.gpae_off_t > 0.0 && s.gpae_off_p_value < 0.05;
    let ordered = s.off_at_least_on_seeds >= 12;
    let passed = gae_zero && significant && ordered && elapsed < Duration::from_secs(600);
    report(
        "advantage-gap diagnostic",
        passed,
        &format!(
            "gae max |delta_a| {:e}; gpae_off t {:.2}, p {:.2e}; off >= on in {}/{} seeds (need 12) ({:.2?})",
            s.gae_max_abs_delta_a, s.gpae_off_t, s.gpae_off_p_value, s.off_at_least_on_seeds, s.seeds, elapsed
        ),
    );
    assert!(passed);
}

#[test]
fn gradient_fidelity() {
    let cfg = GradCheckConfig::default();
    assert!(cfg.points >= 50);
    let critic = grad_check_critic(&cfg).expect("critic check");
    let actor = grad_check_actor(&cfg, &ActorLossConfig::default()).expect("actor check");
    let enough = critic.points_checked >= 50 && actor.points_checked >= 50;
    let passed = enough && critic.passed(1e-4) && actor.passed(1e-4);
    report(
        "gradient fidelity",
        passed,
        &format!(
            "critic {:.2e} over {} points, actor {:.2e} over {} points (limit 1e-4)",
            critic.max_rel_error, critic.points_checked, actor.max_rel_error, actor.points_checked
        ),
    );
    assert!(passed);
}

#[test]
fn off_policy_learning_matches_or_beats_baseline() {
    let cfg = LearningConfig::default();
    assert_eq!(cfg.model.name, "chain_gather");
    assert!(cfg.seeds == 5 && cfg.total_timesteps <= 200_000);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let start = Instant::now();
    let rows = pool.install(|| learning::run(&cfg)).expect("learning run");
    let elapsed = start.elapsed();
    let s = learning::summarize(&rows);
    let passed = s.gpae_at_least_baseline >= 4 && elapsed < Duration::from_secs(300);
    report(
        "learning ordering",
        passed,
        &format!(
            "gpae-dt >= baseline in {}/{} seeds (need 4); mean {:.3} vs {:.3} ({:.2?}, one thread)",
            s.gpae_at_least_baseline, s.seeds, s.mean_gpae, s.mean_baseline, elapsed
        ),
    );
    assert!(passed);
}

/// Names and contents of every file in `dir`, sorted by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("read output dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read output file"))
        })
        .collect();
    files.sort();
    files
}

/// Runs `f` twice into fresh directories and lists files whose bytes differ.
fn rerun_diff(tmp: &Path, label: &str, f: impl Fn(&Path)) -> (usize, Vec<String>) {
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|run| tmp.join(format!("{label}-{run}"))).collect();
    for dir in &dirs {
        std::fs::create_dir_all(dir).expect("create output dir");
        f(dir);
    }
    let (first, second) = (snapshot(&dirs[0]), snapshot(&dirs[1]));
    let mut mismatched = Vec::new();
    if first.is_empty() || first.len() != second.len() {
        mismatched.push(format!("{label}: file sets differ"));
    }
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        if a != b {
            mismatched.push(format!("{label}/{name}"));
        }
    }
    (first.len(), mismatched)
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut verify_cfg = VerifyConfig::default();
    verify_cfg.set_seed(3);
    let (verify_files, mut mismatched) = rerun_diff(tmp.path(), "verify", |dir| {
        commands::verify(&verify_cfg, dir).expect("verify run");
    });
    let mut train_cfg: TrainConfig =
        serde_json::from_str(r#"{"total_timesteps": 2048, "hidden": 16, "rollout_steps": 32, "eval_every": 2, "eval_episodes": 8}"#).expect("train config");
    train_cfg.set_seed(3);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let (train_files, train_mismatched) = rerun_diff(tmp.path(), "train", |dir| {
        pool.install(|| commands::train(&train_cfg, dir)).expect("train run");
    });
    mismatched.extend(train_mismatched);
    let passed = mismatched.is_empty();
    let detail = if passed {
        format!("{verify_files} verify files and {train_files} train files identical across runs")
    } else {
        format!("differing: {}", mismatched.join(", "))
    };
    report("determinism", passed, &detail);
    assert!(passed);
}
