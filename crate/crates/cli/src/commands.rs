//! The `fit`, `simulate`, `study` and `summarize` commands.

use std::fs;
use std::path::{Path, PathBuf};

use sace_core::design::build_designs;
use sace_core::estimands::{summarize, SaceSummary};
use sace_core::gibbs::run_chains;
use sace_core::model::{ModelConfig, ModelVariant, PosteriorDraws};
use sace_core::rand_dist::RngStream;
use sace_core::simulate::{
    generate_trial, replicate_stream_base, run_study, true_sace, Scenario, StudyConfig,
    StudyReport, TruthValues, TRUTH_CLUSTERS,
};

use crate::config::{
    load_scenario, model_config_from, model_config_lines, render, scenario_lines, KeyValues,
};
use crate::error::{CliError, Result};
use crate::io::{
    read_draws_csv, read_trial_csv, read_truth, summary_lines, truth_lines, write_aggregate_csv,
    write_draws_csv, write_key_values, write_replicates_csv, write_trial_csv,
};
use crate::manifest::{sha256_file, sha256_hex, RunManifest, MANIFEST_FILE};

pub const DRAWS_FILE: &str = "draws.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRIAL_FILE: &str = "trial.csv";
pub const TRUTH_FILE: &str = "truth.txt";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn trace_file(chain: usize) -> String {
    format!("trace_chain{chain}.csv")
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Validation(format!("cannot start {n} worker threads: {e}"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_model_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => model_config_from(KeyValues::read(p)?),
        None => Ok(ModelConfig::for_variant(ModelVariant::M1)),
    }
}

fn with_manifest_ref(
    mut lines: Vec<(String, String)>,
    manifest: &RunManifest,
) -> Vec<(String, String)> {
    lines.push(("manifest".into(), MANIFEST_FILE.into()));
    lines.push(("run_id".into(), manifest.run_id()));
    lines
}

/// Truth of `sc`, read from `cache` when a file for the same scenario exists.
pub fn scenario_truth(sc: &Scenario, cache: Option<&Path>) -> Result<TruthValues> {
    let hash = sc.truth_hash();
    let cached = cache.map(|dir| dir.join(format!("truth-{hash:016x}.txt")));
    if let Some(p) = cached.as_deref().filter(|p| p.exists()) {
        let (h, t) = read_truth(p)?;
        if h == hash {
            return Ok(t);
        }
    }
    let t = true_sace(sc)?;
    if let (Some(dir), Some(p)) = (cache, cached) {
        ensure_dir(dir)?;
        write_key_values(&p, &truth_lines(hash, &t, TRUTH_CLUSTERS))?;
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub model: Option<ModelVariant>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub mass: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub config: ModelConfig,
    pub summary: SaceSummary,
    pub draws: PosteriorDraws,
    pub failures: Vec<String>,
}

pub fn fit(args: &FitArgs) -> Result<FitOutcome> {
    let mut config = load_model_config(args.config.as_deref())?;
    if let Some(m) = args.model {
        config.set_variant(m);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(c) = args.chains {
        config.n_chains = c;
    }
    config.validate()?;
    if !(args.mass > 0.0 && args.mass < 1.0) {
        return Err(CliError::Validation(format!(
            "--mass must lie in (0, 1), got {}",
            args.mass
        )));
    }
    let data = read_trial_csv(&args.data)?;
    let dm = build_designs(&data)?;
    ensure_dir(&args.out_dir)?;

    let config_hash = sha256_hex(render(&model_config_lines(&config)).as_bytes());
    let mut manifest = RunManifest::start(
        "fit",
        config_hash,
        sha256_file(&args.data)?,
        config.seed,
        config.n_chains,
    );
    let results = with_threads(args.threads, || run_chains(&data, &dm, &config, 0))?;

    let stamp = manifest.stamp();
    let mut draws = PosteriorDraws::default();
    for r in results {
        match r {
            Ok(out) => {
                let name = trace_file(out.chain_id);
                write_draws_csv(&args.out_dir.join(&name), &out.draws.records, Some(&stamp))?;
                manifest.outputs.push(name);
                draws.extend(out.draws);
            }
            Err(f) => manifest.failures.push(f.to_string()),
        }
    }
    if draws.is_empty() {
        manifest.finish(&args.out_dir)?;
        return Err(CliError::AllChainsFailed {
            n_chains: config.n_chains,
            details: manifest.failures.join("; "),
        });
    }
    let summary = summarize(&draws, args.mass);
    write_draws_csv(&args.out_dir.join(DRAWS_FILE), &draws.records, Some(&stamp))?;
    write_key_values(
        &args.out_dir.join(SUMMARY_FILE),
        &with_manifest_ref(summary_lines(&summary), &manifest),
    )?;
    manifest
        .outputs
        .extend([DRAWS_FILE.to_string(), SUMMARY_FILE.to_string()]);
    manifest.finish(&args.out_dir)?;
    Ok(FitOutcome {
        config,
        summary,
        draws,
        failures: manifest.failures,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    /// Scenario file or preset name.
    pub scenario: String,
    pub seed: Option<u64>,
    pub truth_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Generates one trial. The trial for seed `s` is replicate 0 of a study with seed `s`.
pub fn simulate(args: &SimulateArgs) -> Result<(Scenario, TruthValues)> {
    let mut sc = load_scenario(&args.scenario)?;
    if let Some(s) = args.seed {
        sc.seed = s;
    }
    sc.validate()?;
    ensure_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start(
        "simulate",
        sha256_hex(render(&scenario_lines(&sc)).as_bytes()),
        "-".into(),
        sc.seed,
        0,
    );
    let mut rng = RngStream::new(sc.seed, replicate_stream_base(0));
    let (data, _) = generate_trial(&sc, &mut rng)?;
    let truth = scenario_truth(&sc, args.truth_cache.as_deref())?;
    write_trial_csv(
        &args.out_dir.join(TRIAL_FILE),
        &data,
        Some(&manifest.stamp()),
    )?;
    let mut tl = truth_lines(sc.truth_hash(), &truth, TRUTH_CLUSTERS);
    tl.push(("manifest".into(), MANIFEST_FILE.into()));
    write_key_values(&args.out_dir.join(TRUTH_FILE), &tl)?;
    manifest
        .outputs
        .extend([TRIAL_FILE.to_string(), TRUTH_FILE.to_string()]);
    manifest.finish(&args.out_dir)?;
    Ok((sc, truth))
}

#[derive(Debug, Clone)]
pub struct StudyArgs {
    pub scenario: String,
    pub config: Option<PathBuf>,
    pub models: Vec<ModelVariant>,
    pub replicates: usize,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub mass: f64,
    pub truth_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Study settings: the model file supplies sampler settings and priors; flags override it.
pub fn study_config(args: &StudyArgs) -> Result<StudyConfig> {
    let defaults = StudyConfig::default();
    let base = match &args.config {
        Some(p) => model_config_from(KeyValues::read(p)?)?,
        None => defaults.model_config(ModelVariant::M1),
    };
    let models = if args.models.is_empty() {
        defaults.models.clone()
    } else {
        args.models.clone()
    };
    let study = StudyConfig {
        models,
        n_replicates: args.replicates,
        iterations: args.iterations.unwrap_or(base.iterations),
        burn_in: args.burn_in.unwrap_or(base.burn_in),
        thinning: base.thinning,
        n_chains: args.chains.unwrap_or(base.n_chains),
        seed: args.seed.unwrap_or(base.seed),
        mass: args.mass,
        priors: base.priors,
    };
    if study.n_replicates == 0 {
        return Err(CliError::Validation(
            "--replicates must be at least 1".into(),
        ));
    }
    if !(study.mass > 0.0 && study.mass < 1.0) {
        return Err(CliError::Validation(format!(
            "--mass must lie in (0, 1), got {}",
            study.mass
        )));
    }
    for m in &study.models {
        study.model_config(*m).validate()?;
    }
    Ok(study)
}

fn study_hash(sc: &Scenario, study: &StudyConfig) -> String {
    let models: Vec<&str> = study.models.iter().map(|m| m.label()).collect();
    let mut lines = scenario_lines(sc);
    lines.push(("models".into(), models.join(",")));
    lines.push(("n_replicates".into(), study.n_replicates.to_string()));
    lines.push(("mass".into(), format!("{:?}", study.mass)));
    lines.extend(model_config_lines(&study.model_config(study.models[0])));
    sha256_hex(render(&lines).as_bytes())
}

pub fn study(args: &StudyArgs) -> Result<StudyReport> {
    let sc = load_scenario(&args.scenario)?;
    let study = study_config(args)?;
    ensure_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start(
        "study",
        study_hash(&sc, &study),
        "-".into(),
        study.seed,
        study.n_chains,
    );
    let truth = scenario_truth(&sc, args.truth_cache.as_deref())?;
    let report = with_threads(args.threads, || run_study(&sc, &study, &truth))??;

    let stamp = manifest.stamp();
    write_replicates_csv(
        &args.out_dir.join(REPLICATES_FILE),
        &report.rows,
        Some(&stamp),
    )?;
    write_aggregate_csv(
        &args.out_dir.join(AGGREGATE_FILE),
        &report.metrics,
        Some(&stamp),
    )?;
    let mut tl = truth_lines(sc.truth_hash(), &truth, TRUTH_CLUSTERS);
    tl.push(("manifest".into(), MANIFEST_FILE.into()));
    write_key_values(&args.out_dir.join(TRUTH_FILE), &tl)?;
    manifest
        .outputs
        .extend([REPLICATES_FILE, AGGREGATE_FILE, TRUTH_FILE].map(String::from));
    manifest.failures = report
        .rows
        .iter()
        .filter_map(|r| {
            r.failure
                .as_ref()
                .map(|f| format!("replicate {} model {}: {f}", r.replicate, r.model.label()))
        })
        .collect();
    manifest.finish(&args.out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SummarizeArgs {
    pub draws: PathBuf,
    pub mass: f64,
    pub out_dir: Option<PathBuf>,
}

/// Re-summarizes saved draws. Returns the summary text.
pub fn summarize_draws(args: &SummarizeArgs) -> Result<String> {
    if !(args.mass > 0.0 && args.mass < 1.0) {
        return Err(CliError::Validation(format!(
            "--mass must lie in (0, 1), got {}",
            args.mass
        )));
    }
    let draws = read_draws_csv(&args.draws)?;
    if draws.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no draws",
            args.draws.display()
        )));
    }
    let summary = summarize(&draws, args.mass);
    let lines = summary_lines(&summary);
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        let mut manifest = RunManifest::start(
            "summarize",
            sha256_hex(format!("mass={:?}", args.mass).as_bytes()),
            sha256_file(&args.draws)?,
            0,
            summary.n_chains,
        );
        write_key_values(
            &dir.join(SUMMARY_FILE),
            &with_manifest_ref(lines.clone(), &manifest),
        )?;
        manifest.outputs.push(SUMMARY_FILE.into());
        manifest.finish(dir)?;
    }
    Ok(render(&lines))
}
