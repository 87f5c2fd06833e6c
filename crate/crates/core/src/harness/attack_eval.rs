//! Attack sweeps over sample budgets: adapter mimicking, secret recovery,
//! and the direct-vector comparison between the simple and secret
//! protocols.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    adapter_asr, direct_vector_attack, inverse_exact_match_rate, substitute_asr,
    train_adapter_mimic, train_inverse_model, AdapterAttackConfig, AsrCurve, AttackTargetKind,
    DirectAttackConfig, InverseAttackConfig,
};
use crate::config::ExperimentConfig;
use crate::corpus::Secret;
use crate::error::{Result, SvipError};
use crate::labeling::{sow_label, sow_vocab_top_k, LabelVector, SowVocab};
use crate::proxy::{train_simple_proxy, ProxyBundle, ProxyTrainReport};
use crate::verify::accepts;

use super::pipeline::TrainedStack;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterSweep {
    pub scenario: String,
    pub budgets: Vec<usize>,
    /// Median ASR per budget over independent (secret, init) runs.
    pub median_asr: Vec<f64>,
    pub runs_per_budget: Vec<Vec<f64>>,
    /// ASR of the largest-budget adapters under a fresh secret.
    pub fresh_secret_asr: Vec<f64>,
    /// No-adapter substitute baseline under the same fresh secrets.
    pub fresh_secret_baseline: Vec<f64>,
    pub spec_queries_per_run: Vec<usize>,
}

impl AdapterSweep {
    pub fn to_curve(&self) -> AsrCurve {
        AsrCurve {
            scenario: self.scenario.clone(),
            budgets: self.budgets.clone(),
            asr: self.median_asr.clone(),
            stderr: self
                .runs_per_budget
                .iter()
                .map(|runs| crate::attacks::summarize_asr(runs).1)
                .collect(),
        }
    }
}

/// Adapter attack across the budget grid. Each run draws its own secret,
/// collects `m` attack prompts from the validation split (never protocol
/// training or test data), buys the honest responses for them, trains the
/// adapter, and scores ASR on the test split under the training secret.
pub fn adapter_attack_sweep(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
    alt_idx: usize,
) -> Result<AdapterSweep> {
    let spec_stack = &stack.specs[spec_idx];
    let bundle = &spec_stack.bundle;
    let model = &stack.roster.specified[spec_idx];
    let alt = &stack.roster.alternatives[alt_idx];
    let projection = stack.projection(alt_idx, spec_idx);
    let attack_pool = &stack.corpus.split.validation;
    let test_idx = &stack.corpus.split.test;
    let adapter_cfg = AdapterAttackConfig::default();

    let max_budget = *cfg.attacks.adapter_budgets.iter().max().unwrap_or(&0);
    if max_budget > attack_pool.len() {
        return Err(SvipError::Config(format!(
            "adapter budget {max_budget} exceeds the {}-prompt attack pool",
            attack_pool.len()
        )));
    }

    let mut runs_per_budget: Vec<Vec<f64>> = Vec::new();
    let mut spec_queries = Vec::new();
    let mut fresh_secret_asr = Vec::new();
    let mut fresh_secret_baseline = Vec::new();

    for (bi, &m) in cfg.attacks.adapter_budgets.iter().enumerate() {
        let mut runs = Vec::new();
        for run in 0..cfg.attacks.adapter_seeds {
            let run_seed = cfg
                .rng_indexed("attacks-adapter", (bi * 1000 + run) as u64)
                .gen::<u64>();
            let mut rng = crate::numerics::rng::substream(run_seed, "adapter-run");
            let secret = Secret::sample(cfg.dims.d_s, &mut rng);
            let token = bundle.embed_secret(&secret)?;

            // attack dataset: m prompts + the provider's own alt states +
            // honest responses bought from the real provider
            let mut pool = attack_pool.clone();
            use rand::seq::SliceRandom;
            pool.shuffle(&mut rng);
            let chosen = &pool[..m];
            let mut alt_hidden = Vec::with_capacity(m);
            let mut masks = Vec::with_capacity(m);
            let mut targets = Vec::with_capacity(m);
            for &i in chosen {
                let seq = &stack.corpus.seqs[i];
                let mut h = alt.hidden_states(seq);
                if let Some(p) = projection {
                    h = crate::models::align_dims(&h, p)?;
                }
                alt_hidden.push(h);
                masks.push(seq.mask.clone());
                let h_spec = model.hidden_states(seq);
                targets.push(bundle.compress(Some(&token), &h_spec, &seq.mask)?);
            }
            let (adapter, cost) = train_adapter_mimic(
                &bundle.extractor,
                &token,
                &alt_hidden,
                &masks,
                &targets,
                &adapter_cfg,
                run_seed,
            )?;
            debug_assert_eq!(cost.spec_model_queries, m);
            let asr = adapter_asr(
                bundle,
                &stack.labeler,
                &spec_stack.threshold,
                &adapter,
                alt,
                projection,
                &stack.corpus.seqs,
                test_idx,
                &secret,
            )?;
            runs.push(asr);

            // rotation defense: the same adapter under a fresh secret
            if m == max_budget {
                let fresh = loop {
                    let c = Secret::sample(cfg.dims.d_s, &mut rng);
                    if c != secret {
                        break c;
                    }
                };
                fresh_secret_asr.push(adapter_asr(
                    bundle,
                    &stack.labeler,
                    &spec_stack.threshold,
                    &adapter,
                    alt,
                    projection,
                    &stack.corpus.seqs,
                    test_idx,
                    &fresh,
                )?);
                fresh_secret_baseline.push(substitute_asr(
                    bundle,
                    &stack.labeler,
                    &spec_stack.threshold,
                    alt,
                    projection,
                    &stack.corpus.seqs,
                    test_idx,
                    &fresh,
                )?);
            }
        }
        spec_queries.push(m);
        runs_per_budget.push(runs);
    }

    let median_asr = runs_per_budget
        .iter()
        .map(|runs| median(&mut runs.clone()))
        .collect();

    Ok(AdapterSweep {
        scenario: format!("{}-vs-{}", model.spec.name, alt.spec.name),
        budgets: cfg.attacks.adapter_budgets.clone(),
        median_asr,
        runs_per_budget,
        fresh_secret_asr,
        fresh_secret_baseline,
        spec_queries_per_run: spec_queries,
    })
}

/// Secret-recovery attack across collected-pair budgets. Each run samples
/// its own training pairs (the attacker poses as user and provider to see
/// both sides) and is scored by exact-match rate on unseen pairs.
pub fn secret_recovery_sweep(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
) -> Result<(AsrCurve, Vec<Vec<f64>>)> {
    let bundle = &stack.specs[spec_idx].bundle;
    let inv_cfg = InverseAttackConfig::default();
    let mut medians = Vec::new();
    let mut stderrs = Vec::new();
    let mut all_runs = Vec::new();

    for (bi, &n) in cfg.attacks.recovery_budgets.iter().enumerate() {
        let mut runs = Vec::new();
        for run in 0..cfg.attacks.recovery_seeds {
            let run_seed = cfg
                .rng_indexed("attacks-recovery", (bi * 1000 + run) as u64)
                .gen::<u64>();
            let mut rng = crate::numerics::rng::substream(run_seed, "recovery-run");
            let mut train_pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let s = Secret::sample(cfg.dims.d_s, &mut rng);
                let t = bundle.embed_secret(&s)?;
                train_pairs.push((s, t));
            }
            let inv = train_inverse_model(&train_pairs, &inv_cfg, run_seed)?;
            let mut test_pairs = Vec::with_capacity(cfg.attacks.recovery_test_pairs);
            for _ in 0..cfg.attacks.recovery_test_pairs {
                let s = Secret::sample(cfg.dims.d_s, &mut rng);
                let t = bundle.embed_secret(&s)?;
                test_pairs.push((s, t));
            }
            runs.push(inverse_exact_match_rate(&inv, &test_pairs)?);
        }
        let (_, se) = crate::attacks::summarize_asr(&runs);
        medians.push(median(&mut runs.clone()));
        stderrs.push(se);
        all_runs.push(runs);
    }

    Ok((
        AsrCurve {
            scenario: format!("secret-recovery:{}", bundle.spec_model),
            budgets: cfg.attacks.recovery_budgets.clone(),
            asr: medians,
            stderr: stderrs,
        },
        all_runs,
    ))
}

/// Simple-protocol artifacts for the direct-attack comparison.
pub struct SimpleStack {
    pub bundle: ProxyBundle,
    pub vocab: SowVocab,
    pub report: ProxyTrainReport,
}

/// Trains the simple (set-of-words) proxy for one specified model with
/// the top-100 training-corpus tokens as the label vocabulary.
pub fn train_simple_stack(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
    vocab_size: usize,
) -> Result<SimpleStack> {
    let model = &stack.roster.specified[spec_idx];
    let train_seqs: Vec<crate::corpus::TokenSequence> = stack
        .corpus
        .split
        .train
        .iter()
        .map(|&i| stack.corpus.seqs[i].clone())
        .collect();
    let vocab = sow_vocab_top_k(&train_seqs, vocab_size);
    let seed = cfg.rng_indexed("init-simple", spec_idx as u64).gen();
    let (bundle, report) = train_simple_proxy(
        model,
        &stack.corpus.seqs,
        &stack.corpus.split.train,
        &stack.corpus.split.validation,
        &vocab,
        &cfg.proxy,
        seed,
    )?;
    Ok(SimpleStack {
        bundle,
        vocab,
        report,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectAttackSummary {
    pub spec_model: String,
    /// Exact-label-match rate against the simple protocol.
    pub simple_asr: f64,
    /// Acceptance rate against the secret protocol with guessed secrets.
    pub secret_guess_asr: f64,
    pub prompts: usize,
    pub guesses_per_prompt: usize,
}

/// Direct vector optimization against both protocols on the same corpus:
/// the attacker solves for z against the public label (simple) or a
/// guessed secret's label (secret), and the secret protocol scores the
/// result against the true secret.
pub fn direct_attack_comparison(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    simple: &SimpleStack,
    spec_idx: usize,
    prompts: usize,
    guesses_per_prompt: usize,
) -> Result<DirectAttackSummary> {
    let spec_stack = &stack.specs[spec_idx];
    let direct_cfg = DirectAttackConfig {
        steps: cfg.attacks.direct_steps,
        lr: cfg.attacks.direct_lr,
    };
    let test_idx: Vec<usize> = stack
        .corpus
        .split
        .test
        .iter()
        .take(prompts)
        .copied()
        .collect();

    // Simple protocol: the label is public; success is an exact match.
    let mut rng = cfg.rng("attacks");
    let mut simple_hits = 0usize;
    for &i in &test_idx {
        let seq = &stack.corpus.seqs[i];
        let label = sow_label(seq, &simple.vocab);
        let (z, _) = direct_vector_attack(
            &simple.bundle.head,
            &label,
            AttackTargetKind::Binary,
            &direct_cfg,
            &mut rng,
        )?;
        let bits = simple.bundle.predict_bits(&z)?;
        if bits == label {
            simple_hits += 1;
        }
    }
    let simple_asr = simple_hits as f64 / test_idx.len() as f64;

    // Secret protocol: the attacker can only guess a secret; verification
    // runs against the true one.
    let mut secret_hits = 0usize;
    let mut secret_total = 0usize;
    for &i in &test_idx {
        let seq = &stack.corpus.seqs[i];
        let u = stack.labeler.embed_text(seq);
        for _ in 0..guesses_per_prompt {
            let true_secret = Secret::sample(cfg.dims.d_s, &mut rng);
            let guess = Secret::sample(cfg.dims.d_s, &mut rng);
            let guessed_label =
                LabelVector::continuous(stack.labeler.label_from_embedding(&u, &guess).values);
            let (z, _) = direct_vector_attack(
                &spec_stack.bundle.head,
                &guessed_label,
                AttackTargetKind::Continuous,
                &direct_cfg,
                &mut rng,
            )?;
            let pred = spec_stack.bundle.predict(&z)?;
            let true_label = stack.labeler.label_from_embedding(&u, &true_secret);
            if accepts(pred.distance(&true_label), spec_stack.threshold.eta) {
                secret_hits += 1;
            }
            secret_total += 1;
        }
    }
    let secret_guess_asr = secret_hits as f64 / secret_total.max(1) as f64;

    Ok(DirectAttackSummary {
        spec_model: spec_stack.bundle.spec_model.clone(),
        simple_asr,
        secret_guess_asr,
        prompts: test_idx.len(),
        guesses_per_prompt,
    })
}
