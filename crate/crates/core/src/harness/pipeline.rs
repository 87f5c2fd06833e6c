//! End-to-end protocol training: corpus, roster, labeler, per-specified-
//! model proxy bundles, threshold calibration, and evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CorpusSource, ExperimentConfig};
use crate::corpus::{
    generate_corpus, load_corpus, split_dataset, tokenize_and_pad, DatasetSplit, Prompt, Secret,
    TokenSequence,
};
use crate::error::Result;
use crate::labeling::{estimate_delta, train_labeling_network, LabelingNetwork};
use crate::models::{ProjectionMatrix, StandInModel};
use crate::proxy::{train_secret_proxy, ProxyBundle};
use crate::verify::{
    calibrate_threshold, empirical_fnr_fpr, EvalReport, ProviderScenario, Threshold,
};

pub struct CorpusBundle {
    pub prompts: Vec<Prompt>,
    pub seqs: Vec<TokenSequence>,
    pub split: DatasetSplit,
}

pub fn build_corpus(cfg: &ExperimentConfig) -> Result<CorpusBundle> {
    let prompts = match &cfg.corpus.source {
        CorpusSource::Synthetic { size } => {
            let mut rng = cfg.rng("corpus");
            let seed: u64 = rng.gen();
            generate_corpus(*size, seed)
        }
        CorpusSource::File { path } => load_corpus(path)?,
    };
    let seqs: Vec<TokenSequence> = prompts
        .iter()
        .map(|p| tokenize_and_pad(p, cfg.dims.t))
        .collect();
    let split = split_dataset(
        prompts.len(),
        (
            cfg.corpus.train_ratio,
            cfg.corpus.val_ratio,
            cfg.corpus.test_ratio,
        ),
        cfg.seed,
    )?;
    Ok(CorpusBundle {
        prompts,
        seqs,
        split,
    })
}

pub struct Roster {
    pub specified: Vec<StandInModel>,
    pub alternatives: Vec<StandInModel>,
}

pub fn instantiate_roster(cfg: &ExperimentConfig) -> Roster {
    Roster {
        specified: cfg
            .specified()
            .iter()
            .map(StandInModel::instantiate)
            .collect(),
        alternatives: cfg
            .alternatives()
            .iter()
            .map(StandInModel::instantiate)
            .collect(),
    }
}

impl Roster {
    pub fn by_name(&self, name: &str) -> Option<&StandInModel> {
        self.specified
            .iter()
            .chain(self.alternatives.iter())
            .find(|m| m.spec.name == name)
    }
}

/// Trained verification artifacts for one specified model.
pub struct SpecStack {
    pub bundle: ProxyBundle,
    pub threshold: Threshold,
    pub val_fnr: f64,
}

pub struct TrainedStack {
    pub labeler: LabelingNetwork,
    pub specs: Vec<SpecStack>,
    pub roster: Roster,
    pub corpus: CorpusBundle,
    /// Projection per (alternative index, specified index) pair.
    pub projections: Vec<Vec<Option<ProjectionMatrix>>>,
}

impl TrainedStack {
    pub fn projection(&self, alt_idx: usize, spec_idx: usize) -> Option<&ProjectionMatrix> {
        self.projections[alt_idx][spec_idx].as_ref()
    }

    pub fn spec_index(&self, name: &str) -> Option<usize> {
        self.roster
            .specified
            .iter()
            .position(|m| m.spec.name == name)
    }
}

/// Honest-inference verification distances over a split, with fresh
/// secrets per prompt; the calibration input.
pub fn honest_distances(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    model: &StandInModel,
    corpus: &CorpusBundle,
    idx: &[usize],
    secrets_per_prompt: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut distances = Vec::with_capacity(idx.len() * secrets_per_prompt);
    for &i in idx {
        let seq = &corpus.seqs[i];
        let h = model.hidden_states(seq);
        let u = labeler.embed_text(seq);
        for _ in 0..secrets_per_prompt {
            let secret = Secret::sample(labeler.dims.d_s, rng);
            let token = bundle.embed_secret(&secret)?;
            let z = bundle.compress(Some(&token), &h, &seq.mask)?;
            let pred = bundle.predict(&z)?;
            let label = labeler.label_from_embedding(&u, &secret);
            distances.push(pred.distance(&label));
        }
    }
    Ok(distances)
}

/// Calibration secrets per validation prompt; enough for a stable 95th
/// percentile without dominating runtime.
pub const CALIBRATION_SECRETS_PER_PROMPT: usize = 10;

/// Trains the full secret-protocol stack: one labeler shared across
/// specified models, then per-model proxy bundles calibrated on the
/// validation split (never the test split).
pub fn train_stack(cfg: &ExperimentConfig) -> Result<TrainedStack> {
    cfg.validate()?;
    let corpus = build_corpus(cfg)?;
    let roster = instantiate_roster(cfg);

    let labeler_seed = cfg.rng("init").gen();
    let (labeler, _) = train_labeling_network(
        &corpus.seqs,
        &corpus.split.train,
        cfg.labeler_dims(),
        &cfg.labeler,
        labeler_seed,
    )?;

    let mut specs = Vec::new();
    for (mi, model) in roster.specified.iter().enumerate() {
        let proxy_seed = cfg.rng_indexed("init-proxy", mi as u64).gen();
        let (bundle, _report) = train_secret_proxy(
            model,
            &labeler,
            &corpus.seqs,
            &corpus.split.train,
            &corpus.split.validation,
            &cfg.proxy,
            proxy_seed,
        )?;
        let mut cal_rng = cfg.rng_indexed("secrets", mi as u64);
        let distances = honest_distances(
            &bundle,
            &labeler,
            model,
            &corpus,
            &corpus.split.validation,
            CALIBRATION_SECRETS_PER_PROMPT,
            &mut cal_rng,
        )?;
        let threshold =
            calibrate_threshold(&distances, cfg.verification.percentile, &bundle.stack_id)?;
        let val_fnr = distances
            .iter()
            .filter(|&&d| d > threshold.eta)
            .count() as f64
            / distances.len() as f64;
        specs.push(SpecStack {
            bundle,
            threshold,
            val_fnr,
        });
    }

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

/// Test-split FNR/FPR evaluation for one trained specified model against
/// every alternative plus the random-representation baseline.
pub fn evaluate_spec(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
) -> Result<EvalReport> {
    let spec_stack = &stack.specs[spec_idx];
    let model = &stack.roster.specified[spec_idx];
    let mut scenarios = vec![ProviderScenario::Honest { model }];
    for (ai, alt) in stack.roster.alternatives.iter().enumerate() {
        scenarios.push(ProviderScenario::Substitute {
            model: alt,
            projection: stack.projection(ai, spec_idx),
        });
    }
    scenarios.push(ProviderScenario::RandomHidden {
        d_spec: model.spec.hidden_dim,
        seed: cfg.seed ^ 0x5eed,
    });
    empirical_fnr_fpr(
        &spec_stack.bundle,
        &stack.labeler,
        &spec_stack.threshold,
        &stack.corpus.seqs,
        &stack.corpus.split.test,
        cfg.verification.secrets_per_prompt,
        &scenarios,
        cfg.seed ^ spec_idx as u64,
        cfg.verification.histogram_bins,
    )
}

/// Secret-distinguishability estimate on the test split at the calibrated
/// threshold.
pub fn estimate_stack_delta(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
    pairs_per_prompt: usize,
) -> Result<f64> {
    let spec_stack = &stack.specs[spec_idx];
    let test_refs: Vec<&TokenSequence> = stack
        .corpus
        .split
        .test
        .iter()
        .map(|&i| &stack.corpus.seqs[i])
        .collect();
    let mut rng = cfg.rng_indexed("secrets-delta", spec_idx as u64);
    estimate_delta(
        &stack.labeler,
        &test_refs,
        spec_stack.threshold.eta,
        pairs_per_prompt,
        &mut rng,
    )
}

/// Summary row per specified model (the accuracy-table analogue).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub spec_model: String,
    pub eta: f64,
    pub fnr: f64,
    pub val_fnr: f64,
    pub fpr_per_scenario: Vec<(String, f64)>,
    pub auc_per_scenario: Vec<(String, f64)>,
    pub delta_hat: f64,
}

pub fn summarize_accuracy(
    report: &EvalReport,
    val_fnr: f64,
    delta_hat: f64,
) -> AccuracySummary {
    AccuracySummary {
        spec_model: report.spec_model.clone(),
        eta: report.eta,
        fnr: report.fnr,
        val_fnr,
        fpr_per_scenario: report
            .scenarios
            .iter()
            .filter(|s| !s.scenario.starts_with("honest"))
            .map(|s| (s.scenario.clone(), s.accept_rate))
            .collect(),
        auc_per_scenario: report
            .scenarios
            .iter()
            .filter_map(|s| s.auc_vs_honest.map(|a| (s.scenario.clone(), a)))
            .collect(),
        delta_hat,
    }
}

/// Retraining descriptor emitted when the ledger exhausts its secrets:
/// a fresh protocol generation under a new seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrainJob {
    pub new_seed: u64,
    pub reason: String,
}

pub fn retrain_job(cfg: &ExperimentConfig) -> RetrainJob {
    let mut rng = cfg.rng("retrain");
    let mut new_seed: u64 = rng.gen();
    if new_seed == cfg.seed {
        new_seed = new_seed.wrapping_add(1);
    }
    RetrainJob {
        new_seed,
        reason: format!("secret budget exhausted (N* = {})", cfg.update.n_star),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::models::ModelRole;

    pub fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.corpus.source = CorpusSource::Synthetic { size: 120 };
        cfg.dims.t = 12;
        cfg.dims.d_s = 8;
        cfg.dims.d_y = 8;
        cfg.dims.d_g = 16;
        cfg.dims.d_u = 12;
        cfg.dims.d_secret = 12;
        cfg.roster = vec![
            crate::config::ModelEntry {
                name: "spec-a".into(),
                hidden_dim: 24,
                depth: 2,
                seed: 11,
                family: "toy".into(),
                role: ModelRole::Specified,
            },
            crate::config::ModelEntry {
                name: "alt-a".into(),
                hidden_dim: 16,
                depth: 2,
                seed: 21,
                family: "toy".into(),
                role: ModelRole::Alternative,
            },
        ];
        cfg.labeler.epochs = 2;
        cfg.labeler.batch_size = 32;
        cfg.proxy.epochs = 4;
        cfg.proxy.batch_size = 32;
        cfg.proxy.d_g = 16;
        cfg.proxy.lr = 1e-3;
        cfg.verification.secrets_per_prompt = 3;
        cfg
    }

    #[test]
    fn tiny_stack_trains_and_evaluates() {
        let cfg = tiny_config();
        let stack = train_stack(&cfg).unwrap();
        assert_eq!(stack.specs.len(), 1);
        assert!(stack.specs[0].val_fnr <= 0.05 + 1e-9);
        let report = evaluate_spec(&cfg, &stack, 0).unwrap();
        assert_eq!(report.scenarios.len(), 3); // honest, alt-a, random
        assert!(report.fnr >= 0.0 && report.fnr <= 1.0);
        // even a lightly trained tiny stack separates the substitute well
        let sub_auc = report
            .scenarios
            .iter()
            .find(|s| s.scenario.starts_with("substitute"))
            .and_then(|s| s.auc_vs_honest)
            .unwrap();
        assert!(sub_auc >= 0.9, "substitute AUC {sub_auc}");
    }

    #[test]
    fn corpus_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = build_corpus(&cfg).unwrap();
        let b = build_corpus(&cfg).unwrap();
        assert_eq!(a.prompts[0].text, b.prompts[0].text);
        assert_eq!(a.split.train, b.split.train);
    }

    #[test]
    fn retrain_job_changes_seed() {
        let cfg = tiny_config();
        let job = retrain_job(&cfg);
        assert_ne!(job.new_seed, cfg.seed);
    }
}
