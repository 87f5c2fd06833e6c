//! Command-line front end: corpus generation, protocol training,
//! calibration, evaluation, attacks, session simulation, and report
//! aggregation. Every run is reproducible from the config seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;

use svip_core::attacks::AsrCurve;
use svip_core::config::ExperimentConfig;
use svip_core::corpus::save_corpus;
use svip_core::error::{Result, SvipError};
use svip_core::harness::pipeline::{honest_distances, CALIBRATION_SECRETS_PER_PROMPT};
use svip_core::harness::{
    adapter_attack_sweep, build_corpus, direct_attack_comparison, estimate_stack_delta,
    evaluate_spec, export_report, instantiate_roster, retrain_job, run_session,
    secret_recovery_sweep, summarize_accuracy, summarize_sessions, train_simple_stack,
    AccuracySummary, AdapterSweep, CorpusBundle, DirectAttackSummary, ReportInputs, Roster,
    SessionSettings, SessionSummary, SpecStack, StrategyKind, TrainedStack,
};
use svip_core::labeling::{train_labeling_network, LabelingNetwork};
use svip_core::models::ProjectionMatrix;
use svip_core::numerics::ParameterSet;
use svip_core::proxy::{train_secret_proxy, ProxyBundle};
use svip_core::verify::{calibrate_threshold, EvalReport, Threshold};

#[derive(Parser)]
#[command(
    name = "svip",
    about = "Secret-based verifiable inference protocol at desk scale",
    version
)]
struct Cli {
    /// Experiment config (TOML); built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the (synthetic or ingested) prompt corpus to corpus.txt.
    GenCorpus,
    /// Train the secret-conditioned labeling network.
    TrainLabeler,
    /// Train the proxy bundle for specified models (requires the labeler).
    TrainProxy {
        /// Single specified model; all of them when omitted.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Calibrate the verification threshold on the validation split.
    Calibrate {
        #[arg(long)]
        spec: Option<String>,
    },
    /// Empirical FNR/FPR/AUC against every alternative plus the random baseline.
    Evaluate {
        #[arg(long)]
        spec: Option<String>,
    },
    /// Run an attack sweep.
    Attack {
        /// direct | adapter | recovery
        #[arg(long)]
        kind: String,
        #[arg(long)]
        spec: Option<String>,
        /// Alternative model for the adapter attack.
        #[arg(long)]
        alt: Option<String>,
    },
    /// Run verification sessions under a provider strategy.
    Simulate {
        /// honest | substitute:<alt> | random | replay-cache
        #[arg(long, default_value = "honest")]
        strategy: String,
        #[arg(long, default_value_t = 200)]
        sessions: usize,
        #[arg(long, default_value_t = 30)]
        queries: usize,
        #[arg(long)]
        spec: Option<String>,
    },
    /// Aggregate saved artifacts into summary.json and CSV tables.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match cli_config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn labeler_path(out: &Path) -> PathBuf {
    out.join("labeler.svip")
}

fn bundle_path(out: &Path, spec: &str) -> PathBuf {
    out.join(format!("bundle_{spec}.svip"))
}

fn threshold_path(out: &Path, spec: &str) -> PathBuf {
    out.join(format!("threshold_{spec}.json"))
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(SvipError::InvalidArgument(format!(
            "missing artifact {} — run `svip {produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

fn load_labeler(out: &Path) -> Result<LabelingNetwork> {
    require(&labeler_path(out), "train-labeler")?;
    LabelingNetwork::from_parameter_set(&ParameterSet::load(labeler_path(out))?)
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| SvipError::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SvipError::Format(format!("{}: {e}", path.display())))
}

fn spec_names(cfg: &ExperimentConfig, chosen: &Option<String>) -> Result<Vec<String>> {
    let all: Vec<String> = cfg.specified().iter().map(|m| m.name.clone()).collect();
    match chosen {
        None => Ok(all),
        Some(name) => {
            if all.iter().any(|n| n == name) {
                Ok(vec![name.clone()])
            } else {
                Err(SvipError::Config(format!(
                    "{name} is not a specified model in the roster"
                )))
            }
        }
    }
}

/// Reassembles the trained stack for the given specified models from disk
/// artifacts plus the deterministic corpus/roster rebuild.
fn load_stack(cfg: &ExperimentConfig, out: &Path, names: &[String]) -> Result<TrainedStack> {
    let corpus = build_corpus(cfg)?;
    let full_roster = instantiate_roster(cfg);
    let labeler = load_labeler(out)?;

    let mut specs = Vec::new();
    let mut kept_specified = Vec::new();
    for name in names {
        require(&bundle_path(out, name), "train-proxy")?;
        let bundle =
            ProxyBundle::from_parameter_set(&ParameterSet::load(bundle_path(out, name))?)?;
        require(&threshold_path(out, name), "calibrate")?;
        let threshold: Threshold = load_json(&threshold_path(out, name))?;
        if threshold.stack_id != bundle.stack_id {
            return Err(SvipError::StackMismatch(format!(
                "threshold {} does not match bundle {}",
                threshold.stack_id, bundle.stack_id
            )));
        }
        let val_fnr = threshold
            .calibration
            .iter()
            .filter(|&&d| d > threshold.eta)
            .count() as f64
            / threshold.calibration.len().max(1) as f64;
        let model = full_roster
            .by_name(name)
            .ok_or_else(|| SvipError::Config(format!("unknown model {name}")))?
            .clone();
        kept_specified.push(model);
        specs.push(SpecStack {
            bundle,
            threshold,
            val_fnr,
        });
    }

    let roster = Roster {
        specified: kept_specified,
        alternatives: full_roster.alternatives,
    };
    let projections = roster
        .alternatives
        .iter()
        .map(|alt| {
            roster
                .specified
                .iter()
                .map(|spec| {
                    if alt.spec.hidden_dim == spec.spec.hidden_dim {
                        None
                    } else {
                        Some(ProjectionMatrix::for_pair(
                            &alt.spec.name,
                            &spec.spec.name,
                            alt.spec.hidden_dim,
                            spec.spec.hidden_dim,
                            cfg.seed,
                        ))
                    }
                })
                .collect()
        })
        .collect();

    Ok(TrainedStack {
        labeler,
        specs,
        roster,
        corpus,
        projections,
    })
}

fn parse_strategy(s: &str) -> Result<StrategyKind> {
    match s {
        "honest" => Ok(StrategyKind::Honest),
        "random" => Ok(StrategyKind::Random),
        "replay-cache" => Ok(StrategyKind::ReplayCache),
        other => {
            if let Some(alt) = other.strip_prefix("substitute:") {
                Ok(StrategyKind::Substitute {
                    model: alt.to_string(),
                })
            } else {
                Err(SvipError::Config(format!(
                    "unknown strategy {other}; expected honest, random, replay-cache, or substitute:<alt>"
                )))
            }
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    let out = &cli.out;
    std::fs::create_dir_all(out)?;

    match cli.command {
        Command::GenCorpus => {
            let corpus = build_corpus(&cfg)?;
            let path = out.join("corpus.txt");
            save_corpus(&corpus.prompts, &path)?;
            println!(
                "wrote {} prompts to {} (train/val/test = {}/{}/{})",
                corpus.prompts.len(),
                path.display(),
                corpus.split.train.len(),
                corpus.split.validation.len(),
                corpus.split.test.len()
            );
        }

        Command::TrainLabeler => {
            let corpus = build_corpus(&cfg)?;
            let seed = cfg.rng("init").gen();
            let (labeler, report) = train_labeling_network(
                &corpus.seqs,
                &corpus.split.train,
                cfg.labeler_dims(),
                &cfg.labeler,
                seed,
            )?;
            labeler.to_parameter_set().save(labeler_path(out))?;
            println!(
                "labeler trained ({} steps, final loss {:.4}) → {}",
                report.steps,
                report.final_loss(),
                labeler_path(out).display()
            );
        }

        Command::TrainProxy { spec } => {
            let names = spec_names(&cfg, &spec)?;
            let corpus = build_corpus(&cfg)?;
            let roster = instantiate_roster(&cfg);
            let labeler = load_labeler(out)?;
            for name in &names {
                let mi = roster
                    .specified
                    .iter()
                    .position(|m| &m.spec.name == name)
                    .expect("validated specified name");
                let model = &roster.specified[mi];
                let seed = cfg.rng_indexed("init-proxy", mi as u64).gen();
                let (bundle, report) = train_secret_proxy(
                    model,
                    &labeler,
                    &corpus.seqs,
                    &corpus.split.train,
                    &corpus.split.validation,
                    &cfg.proxy,
                    seed,
                )?;
                bundle.to_parameter_set().save(bundle_path(out, name))?;
                println!(
                    "{name}: proxy trained ({} steps, val distance {:.4}) → {}",
                    report.steps,
                    report.val_metric.last().copied().unwrap_or(f64::NAN),
                    bundle_path(out, name).display()
                );
            }
        }

        Command::Calibrate { spec } => {
            let names = spec_names(&cfg, &spec)?;
            let corpus = build_corpus(&cfg)?;
            let roster = instantiate_roster(&cfg);
            let labeler = load_labeler(out)?;
            for name in &names {
                let mi = roster
                    .specified
                    .iter()
                    .position(|m| &m.spec.name == name)
                    .expect("validated specified name");
                require(&bundle_path(out, name), "train-proxy")?;
                let bundle = ProxyBundle::from_parameter_set(&ParameterSet::load(bundle_path(
                    out, name,
                ))?)?;
                let mut rng = cfg.rng_indexed("secrets", mi as u64);
                let corpus_view = CorpusBundle {
                    prompts: corpus.prompts.clone(),
                    seqs: corpus.seqs.clone(),
                    split: corpus.split.clone(),
                };
                let distances = honest_distances(
                    &bundle,
                    &labeler,
                    &roster.specified[mi],
                    &corpus_view,
                    &corpus.split.validation,
                    CALIBRATION_SECRETS_PER_PROMPT,
                    &mut rng,
                )?;
                let threshold =
                    calibrate_threshold(&distances, cfg.verification.percentile, &bundle.stack_id)?;
                save_json(&threshold_path(out, name), &threshold)?;
                println!(
                    "{name}: eta = {:.6} ({}th percentile of {} honest distances) → {}",
                    threshold.eta,
                    (cfg.verification.percentile * 100.0) as u32,
                    threshold.calibration.len(),
                    threshold_path(out, name).display()
                );
            }
        }

        Command::Evaluate { spec } => {
            let names = spec_names(&cfg, &spec)?;
            let stack = load_stack(&cfg, out, &names)?;
            for (si, name) in names.iter().enumerate() {
                let report = evaluate_spec(&cfg, &stack, si)?;
                let delta = estimate_stack_delta(&cfg, &stack, si, 30)?;
                let accuracy = summarize_accuracy(&report, stack.specs[si].val_fnr, delta);
                save_json(&out.join(format!("eval_{name}.json")), &report)?;
                save_json(&out.join(format!("accuracy_{name}.json")), &accuracy)?;
                println!(
                    "{name}: FNR {:.3} | max FPR {:.3} | min AUC {:.3} | delta {:.4}",
                    report.fnr,
                    report.max_fpr(),
                    report.min_auc(),
                    delta
                );
            }
        }

        Command::Attack { kind, spec, alt } => {
            let names = spec_names(&cfg, &spec)?;
            let name = names
                .first()
                .cloned()
                .ok_or_else(|| SvipError::Config("no specified model".into()))?;
            let stack = load_stack(&cfg, out, &[name.clone()])?;
            match kind.as_str() {
                "adapter" => {
                    let alt_name =
                        alt.unwrap_or_else(|| stack.roster.alternatives[0].spec.name.clone());
                    let ai = stack
                        .roster
                        .alternatives
                        .iter()
                        .position(|m| m.spec.name == alt_name)
                        .ok_or_else(|| {
                            SvipError::Config(format!("{alt_name} is not an alternative model"))
                        })?;
                    let sweep = adapter_attack_sweep(&cfg, &stack, 0, ai)?;
                    save_json(&out.join(format!("adapter_{name}_{alt_name}.json")), &sweep)?;
                    println!(
                        "adapter sweep {}: budgets {:?} → median ASR {:?}",
                        sweep.scenario, sweep.budgets, sweep.median_asr
                    );
                }
                "recovery" => {
                    let (curve, runs) = secret_recovery_sweep(&cfg, &stack, 0)?;
                    save_json(&out.join(format!("recovery_{name}.json")), &curve)?;
                    save_json(&out.join(format!("recovery_runs_{name}.json")), &runs)?;
                    println!(
                        "secret recovery {}: budgets {:?} → median ASR {:?}",
                        curve.scenario, curve.budgets, curve.asr
                    );
                }
                "direct" => {
                    let simple = train_simple_stack(&cfg, &stack, 0, 100)?;
                    let summary = direct_attack_comparison(&cfg, &stack, &simple, 0, 100, 3)?;
                    save_json(&out.join(format!("direct_{name}.json")), &summary)?;
                    println!(
                        "direct attack {name}: simple ASR {:.3}, secret-guess ASR {:.3}",
                        summary.simple_asr, summary.secret_guess_asr
                    );
                }
                other => {
                    return Err(SvipError::Config(format!(
                        "unknown attack kind {other}; expected direct, adapter, or recovery"
                    )))
                }
            }
        }

        Command::Simulate {
            strategy,
            sessions,
            queries,
            spec,
        } => {
            let names = spec_names(&cfg, &spec)?;
            let name = names
                .first()
                .cloned()
                .ok_or_else(|| SvipError::Config("no specified model".into()))?;
            let stack = load_stack(&cfg, out, &[name.clone()])?;
            let kind = parse_strategy(&strategy)?;
            let mut transcripts = Vec::with_capacity(sessions);
            for s in 0..sessions {
                let settings = SessionSettings {
                    queries,
                    tau: cfg.verification.tau,
                    seed: cfg.rng_indexed("sessions", s as u64).gen::<u64>(),
                    strategy: kind.clone(),
                };
                transcripts.push(run_session(&cfg, &stack, 0, &settings, None)?);
            }
            let summary = summarize_sessions(&transcripts)
                .ok_or_else(|| SvipError::InvalidArgument("no sessions run".into()))?;
            save_json(
                &out.join(format!("sessions_{}_{name}.json", sanitize(&strategy))),
                &summary,
            )?;
            // latency goes to stdout only; report files stay byte-identical
            // across runs
            let mean_p: std::time::Duration = transcripts
                .iter()
                .map(|t| t.mean_provider_latency())
                .sum::<std::time::Duration>()
                / sessions.max(1) as u32;
            let mean_v: std::time::Duration = transcripts
                .iter()
                .map(|t| t.mean_verify_latency())
                .sum::<std::time::Duration>()
                / sessions.max(1) as u32;
            println!(
                "{sessions} sessions × {queries} queries [{strategy}]: {} honest verdicts, {} dishonest; mean latency provider {mean_p:?}, verify {mean_v:?}",
                summary.honest_verdicts, summary.dishonest_verdicts
            );
            if transcripts.iter().any(|t| t.retrain_flagged) {
                let job = retrain_job(&cfg);
                save_json(&out.join("retrain_job.json"), &job)?;
                println!(
                    "retraining flagged → retrain_job.json (new seed {})",
                    job.new_seed
                );
            }
        }

        Command::Report => {
            let mut inputs = ReportInputs::default();
            for entry in sorted_dir(out)? {
                let fname = entry
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .to_string();
                if fname.starts_with("eval_") && fname.ends_with(".json") {
                    inputs.eval_reports.push(load_json::<EvalReport>(&entry)?);
                } else if fname.starts_with("accuracy_") && fname.ends_with(".json") {
                    inputs.accuracy.push(load_json::<AccuracySummary>(&entry)?);
                } else if fname.starts_with("adapter_") && fname.ends_with(".json") {
                    inputs
                        .adapter_sweeps
                        .push(load_json::<AdapterSweep>(&entry)?);
                } else if fname.starts_with("recovery_runs_") {
                    // raw per-run samples feed no table directly
                } else if fname.starts_with("recovery_") && fname.ends_with(".json") {
                    inputs.recovery_curves.push(load_json::<AsrCurve>(&entry)?);
                } else if fname.starts_with("direct_") && fname.ends_with(".json") {
                    inputs
                        .direct_attacks
                        .push(load_json::<DirectAttackSummary>(&entry)?);
                } else if fname.starts_with("sessions_") && fname.ends_with(".json") {
                    inputs.sessions.push(load_json::<SessionSummary>(&entry)?);
                }
            }
            let written = export_report(&inputs, out)?;
            println!("report: {} files", written.len());
            for p in written {
                println!("  {}", p.display());
            }
        }
    }
    Ok(())
}
