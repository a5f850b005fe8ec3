use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;

use sace_cli::commands::{self, FitArgs, SimulateArgs, StudyArgs, SummarizeArgs};
use sace_cli::io::read_trial_csv;
use sace_cli::CliError;
use sace_core::model::ModelVariant;

fn simulate(scenario: &str, seed: u64, out: &Path) {
    commands::simulate(&SimulateArgs {
        scenario: scenario.into(),
        seed: Some(seed),
        truth_cache: None,
        out_dir: out.into(),
    })
    .unwrap();
}

fn fit_args(data: &Path, config: &Path, out: &Path) -> FitArgs {
    FitArgs {
        data: data.into(),
        config: Some(config.into()),
        model: None,
        seed: None,
        chains: None,
        threads: None,
        mass: 0.95,
        out_dir: out.into(),
    }
}

fn key_values(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn sace() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sace"))
}

#[test]
fn simulate_writes_every_cluster_period() {
    let dir = tempfile::tempdir().unwrap();
    simulate("scenario1", 3, dir.path());
    let data = read_trial_csv(&dir.path().join("trial.csv")).unwrap();
    let cps: BTreeSet<(usize, usize)> = data
        .individuals
        .iter()
        .map(|i| (i.cluster_id, i.period))
        .collect();
    assert_eq!(cps.len(), 36);
    let truth = key_values(&dir.path().join("truth.txt"));
    let ldiff: f64 = truth["mu_ldiff"].parse().unwrap();
    assert!((ldiff + 1.180).abs() < 0.01, "{ldiff}");
}

#[test]
fn truth_file_depends_on_scenario_not_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate("scenario2", 1, a.path());
    simulate("scenario2", 2, b.path());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_ne!(read(a.path(), "trial.csv"), read(b.path(), "trial.csv"));
    assert_eq!(read(a.path(), "truth.txt"), read(b.path(), "truth.txt"));
    let ldiff: f64 = key_values(&a.path().join("truth.txt"))["mu_ldiff"]
        .parse()
        .unwrap();
    assert!((ldiff + 1.182).abs() < 0.01, "{ldiff}");
}

#[test]
fn truth_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = |seed| SimulateArgs {
        scenario: "scenario3".into(),
        seed: Some(seed),
        truth_cache: Some(cache.clone()),
        out_dir: dir.path().join(format!("s{seed}")),
    };
    let (_, t1) = commands::simulate(&args(1)).unwrap();
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let (_, t2) = commands::simulate(&args(2)).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn fit_retains_chains_times_kept_sweeps_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    simulate("scenario1", 11, dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(
        &cfg,
        "iterations = 300\nburn_in = 75\nthinning = 3\nn_chains = 4\nseed = 21\n",
    )
    .unwrap();
    let trial = dir.path().join("trial.csv");
    let out1 = dir.path().join("fit1");
    let out2 = dir.path().join("fit2");
    let fit = commands::fit(&fit_args(&trial, &cfg, &out1)).unwrap();
    assert_eq!(fit.draws.len(), 4 * 75);
    assert_eq!(fit.summary.n_chains, 4);
    let mut again = fit_args(&trial, &cfg, &out2);
    again.threads = Some(2);
    commands::fit(&again).unwrap();
    for f in [
        "draws.csv",
        "summary.txt",
        "trace_chain0.csv",
        "trace_chain3.csv",
    ] {
        assert_eq!(
            fs::read(out1.join(f)).unwrap(),
            fs::read(out2.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = key_values(&out1.join("manifest.txt"));
    assert_eq!(manifest["n_chains"], "4");
    assert_eq!(manifest["seed"], "21");
    assert_eq!(manifest["n_failures"], "0");
    assert!(fs::read_to_string(out1.join("draws.csv"))
        .unwrap()
        .starts_with("# manifest = manifest.txt"));

    let text = commands::summarize_draws(&SummarizeArgs {
        draws: out1.join("draws.csv"),
        mass: 0.95,
        out_dir: None,
    })
    .unwrap();
    let saved = fs::read_to_string(out1.join("summary.txt")).unwrap();
    assert!(saved.starts_with(&text));
}

#[test]
fn peptic_like_fit_reports_every_summary_field() {
    let dir = tempfile::tempdir().unwrap();
    simulate("peptic-like", 4, dir.path());
    let data = read_trial_csv(&dir.path().join("trial.csv")).unwrap();
    let n = data.n_individuals() as f64;
    assert!(
        (n / 100.0 - 269.0).abs() < 15.0,
        "mean cluster-period size {}",
        n / 100.0
    );
    let cfg = dir.path().join("cfg.txt");
    fs::write(
        &cfg,
        "model = A\niterations = 90\nburn_in = 30\nn_chains = 1\n",
    )
    .unwrap();
    let out = dir.path().join("fit");
    commands::fit(&fit_args(&dir.path().join("trial.csv"), &cfg, &out)).unwrap();
    let s = key_values(&out.join("summary.txt"));
    let mut fields = vec!["mu_ldiff", "mu_rom", "pi_00", "pi_10", "pi_11"];
    fields.extend(sace_core::model::VarianceComponents::NAMES);
    for f in fields {
        for stat in ["mean", "sd", "hpd_lower", "hpd_upper"] {
            let v = &s[&format!("{f}.{stat}")];
            assert!(
                v.parse::<f64>().is_ok_and(f64::is_finite),
                "{f}.{stat} = {v}"
            );
        }
    }
}

#[test]
fn study_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("sc.txt");
    fs::write(
        &sc,
        "preset = scenario1\nn_clusters = 6\nsize_min = 20\nsize_max = 30\n",
    )
    .unwrap();
    let args = |threads, out: &str| StudyArgs {
        scenario: sc.display().to_string(),
        config: None,
        models: vec![
            ModelVariant::M1,
            ModelVariant::M2,
            ModelVariant::M3,
            ModelVariant::M4,
        ],
        replicates: 3,
        iterations: Some(120),
        burn_in: Some(60),
        seed: Some(5),
        chains: None,
        threads: Some(threads),
        mass: 0.95,
        truth_cache: None,
        out_dir: dir.path().join(out),
    };
    let r1 = commands::study(&args(1, "t1")).unwrap();
    commands::study(&args(3, "t3")).unwrap();
    for f in ["aggregate.csv", "replicates.csv", "truth.txt"] {
        assert_eq!(
            fs::read(dir.path().join("t1").join(f)).unwrap(),
            fs::read(dir.path().join("t3").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(r1.metrics.len(), 4);
    let agg = fs::read_to_string(dir.path().join("t1/aggregate.csv")).unwrap();
    let rows: Vec<&str> = agg.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].contains("failure_rate") && rows[0].contains("ldiff_coverage"));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("out");
    let code = |args: &[&str]| sace().args(args).output().unwrap().status.code();

    assert_eq!(
        code(&[
            "fit",
            d.join("missing.csv").to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap()
        ]),
        Some(4)
    );

    let bad = d.join("bad.csv");
    fs::write(
        &bad,
        "cluster_id,period,treatment,survived,outcome\n1,1,1,0,2.0\n",
    )
    .unwrap();
    let o = sace()
        .args([
            "fit",
            bad.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains(":2:"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let cfg = d.join("cfg.txt");
    fs::write(&cfg, "iterations = 100\nnot_a_key = 1\n").unwrap();
    simulate("scenario1", 1, d);
    let trial = d.join("trial.csv");
    assert_eq!(
        code(&[
            "fit",
            trial.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap()
        ]),
        Some(2)
    );
    assert_eq!(
        code(&["fit", trial.to_str().unwrap(), "--model", "7"]),
        Some(2)
    );

    // two alternating clusters, nobody survives
    let dead = d.join("dead.csv");
    fs::write(
        &dead,
        "cluster_id,period,treatment,survived,outcome\n1,1,1,0,\n1,2,0,0,\n2,1,0,0,\n2,2,1,0,\n",
    )
    .unwrap();
    let o = sace()
        .args([
            "fit",
            dead.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m = key_values(&out.join("manifest.txt"));
    assert_eq!(m["n_failures"], "4");
}

#[test]
fn all_chain_failure_is_reported_from_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let dead = dir.path().join("dead.csv");
    fs::write(
        &dead,
        "cluster_id,period,treatment,survived,outcome\n1,1,1,0,\n1,2,0,0,\n2,1,0,0,\n2,2,1,0,\n",
    )
    .unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "n_chains = 2\n").unwrap();
    let err = commands::fit(&fit_args(&dead, &cfg, &dir.path().join("o"))).unwrap_err();
    assert!(
        matches!(err, CliError::AllChainsFailed { n_chains: 2, .. }),
        "{err}"
    );
    assert_eq!(err.exit_code(), 3);
}
