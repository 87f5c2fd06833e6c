//! Adversarial provider strategies and their evaluation: direct vector
//! optimization, adapter attacks (representation-mimicking and
//! label-targeting), alternative-model fine-tuning, and secret recovery.
//!
//! Threat-model hygiene is structural: each attack function's signature
//! admits only the artifacts its leakage model grants. The mimic adapter
//! sees the extractor and one distributed task token, never the head, the
//! secret embedder, or the labeler; label-driven attacks are refused
//! outright against secret-mode bundles.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Secret, TokenSequence};
use crate::error::{Result, SvipError};
use crate::labeling::{LabelVector, LabelingNetwork};
use crate::models::{align_dims, HiddenStates, ProjectionMatrix, StandInModel};
use crate::numerics::loss::{bce_with_logits, l2_norm, squared_l2};
use crate::numerics::rng::substream;
use crate::numerics::{
    Activation, AdamConfig, AdamState, Mlp, MlpSpec, Tensor,
};
use crate::proxy::{CompressedVector, Extractor, ProxyBundle, ProxyMode};
use crate::verify::{accepts, Threshold};

/// Budget → success-rate curve for one attack scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrCurve {
    pub scenario: String,
    pub budgets: Vec<usize>,
    pub asr: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectAttackConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for DirectAttackConfig {
    fn default() -> Self {
        // 100 optimization steps of Adam per attacked query.
        DirectAttackConfig { steps: 100, lr: 0.05 }
    }
}

/// Distance loss against a continuous target, or per-bit BCE against a
/// binary one.
#[derive(Debug, Clone, Copy)]
pub enum AttackTargetKind {
    Continuous,
    Binary,
}

/// Optimizes a d_g-vector directly against the head so that f(z) hits the
/// target label. Requires only the head: the simple protocol leaks it
/// together with the public labels; against the secret protocol the call
/// models an attacker guessing a secret.
pub fn direct_vector_attack(
    head: &Mlp,
    target: &LabelVector,
    kind: AttackTargetKind,
    cfg: &DirectAttackConfig,
    rng: &mut impl Rng,
) -> Result<(CompressedVector, f64)> {
    let d_g = head.in_dim();
    let mut z = Tensor::from_vec(
        &[1, d_g],
        (0..d_g).map(|_| rng.gen_range(-0.1..0.1)).collect(),
    )?;
    let target_row = Tensor::from_vec(&[1, target.dim()], target.values.clone())?;
    let adam_cfg = AdamConfig::new(cfg.lr, 0.0, 0);
    let mut adam = AdamState::new(adam_cfg, &[&z]);
    let mut head_grads = head.zero_grads();
    let mut final_loss = f64::INFINITY;
    for _ in 0..cfg.steps {
        let (pred, cache) = head.forward_cached(&z, None)?;
        let (loss, d_pred) = match kind {
            AttackTargetKind::Continuous => squared_l2(&pred, &target_row),
            AttackTargetKind::Binary => bce_with_logits(&pred, &target_row),
        };
        final_loss = loss;
        for g in head_grads.iter_mut() {
            g.fill(0.0);
        }
        let d_z = head.backward(&cache, &d_pred, &mut head_grads);
        adam.apply(&mut [&mut z], &[d_z]);
    }
    Ok((
        CompressedVector {
            z: z.row(0).to_vec(),
            query_id: None,
        },
        final_loss,
    ))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdapterAttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for AdapterAttackConfig {
    fn default() -> Self {
        // 3-layer MLP, dropout 0.3, 5 epochs, batch 128.
        AdapterAttackConfig {
            epochs: 5,
            batch_size: 128,
            dropout: 0.3,
            lr: 1e-3,
            hidden: 128,
        }
    }
}

/// Attack cost bookkeeping: targets for the mimic adapter require real
/// specified-model queries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackCost {
    pub spec_model_queries: usize,
}

fn adapter_mlp(d_alt: usize, d_spec: usize, hidden: usize, rng: &mut impl Rng) -> Mlp {
    Mlp::init(
        MlpSpec::new(
            vec![d_alt, hidden, hidden, d_spec],
            Activation::Gelu,
            Activation::Linear,
        ),
        rng,
    )
}

fn apply_adapter(adapter: &Mlp, h_alt: &HiddenStates) -> Result<HiddenStates> {
    Ok(HiddenStates {
        values: adapter.forward(&h_alt.values)?,
        model: format!("{}+adapter", h_alt.model),
    })
}

/// Trains an adapter to make the alternative model's compressed vectors
/// mimic the specified model's, under a single distributed task token.
/// The attacker holds: the extractor, one task token, its own alternative
/// hidden states, and `targets` — honest responses it previously bought.
pub fn train_adapter_mimic(
    extractor: &Extractor,
    task_token: &Tensor,
    alt_hidden: &[HiddenStates],
    masks: &[Vec<bool>],
    targets: &[CompressedVector],
    cfg: &AdapterAttackConfig,
    seed: u64,
) -> Result<(Mlp, AttackCost)> {
    let m = alt_hidden.len();
    if m < 1 {
        return Err(SvipError::InvalidArgument(
            "adapter attack needs at least one collected prompt".into(),
        ));
    }
    if targets.len() != m || masks.len() != m {
        return Err(SvipError::InvalidArgument(
            "hidden states, masks, and targets must align".into(),
        ));
    }
    let d_alt = alt_hidden[0].width();
    let d_spec = extractor.d_spec();
    let mut rng = substream(seed, "adapter-mimic");
    let mut adapter = adapter_mlp(d_alt, d_spec, cfg.hidden, &mut rng);
    let adam_cfg = AdamConfig::new(cfg.lr, 0.0, 0);
    let mut adam = AdamState::new(adam_cfg, &adapter.params().as_slice());

    // Extractor parameters are frozen; its grad buffers are scratch.
    let mut scratch_enc = extractor.encoder.zero_grads();
    let mut scratch_pw = Tensor::zeros(extractor.proj.w.shape());
    let mut scratch_pb = Tensor::zeros(extractor.proj.b.shape());

    let order_base: Vec<usize> = (0..m).collect();
    for _epoch in 0..cfg.epochs {
        let mut order = order_base.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = adapter.zero_grads();
            for &i in chunk {
                let (mapped, a_cache) = adapter
                    .forward_cached(&alt_hidden[i].values, Some((cfg.dropout, &mut rng)))?;
                let mapped_h = HiddenStates {
                    values: mapped,
                    model: "adapted".into(),
                };
                let (z, x_cache) =
                    extractor.compress_cached_for_attack(Some(task_token), &mapped_h, &masks[i])?;
                let z_row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
                let t_row = Tensor::from_vec(&[1, targets[i].dim()], targets[i].z.clone())?;
                let (_, mut d_z) = l2_norm(&z_row, &t_row);
                d_z.scale(scale);
                for g in scratch_enc.iter_mut() {
                    g.fill(0.0);
                }
                scratch_pw.fill(0.0);
                scratch_pb.fill(0.0);
                let d_rows = extractor.backward_for_attack(
                    &x_cache,
                    &d_z,
                    &mut scratch_enc,
                    &mut scratch_pw,
                    &mut scratch_pb,
                );
                // rows 1.. are the adapter outputs (row 0 is the token)
                let l = alt_hidden[i].values.rows();
                let mut d_mapped = Tensor::zeros(&[l, d_spec]);
                for r in 0..l {
                    d_mapped.row_mut(r).copy_from_slice(d_rows.row(r + 1));
                }
                adapter.backward(&a_cache, &d_mapped, &mut grads);
            }
            adam.apply(&mut adapter.params_mut(), &grads);
        }
    }
    Ok((
        adapter,
        AttackCost {
            spec_model_queries: m,
        },
    ))
}

/// Label-targeting adapter: trains against the public set-of-words label
/// through the frozen extractor and head. Only meaningful when labels are
/// public, so secret-mode bundles are refused.
pub fn train_adapter_label(
    bundle: &ProxyBundle,
    alt_hidden: &[HiddenStates],
    masks: &[Vec<bool>],
    labels: &[LabelVector],
    cfg: &AdapterAttackConfig,
    seed: u64,
) -> Result<Mlp> {
    if bundle.mode == ProxyMode::Secret {
        return Err(SvipError::InvalidArgument(
            "label-targeting adapter requires label access, unavailable under the secret protocol"
                .into(),
        ));
    }
    let m = alt_hidden.len();
    if m < 1 {
        return Err(SvipError::InvalidArgument(
            "adapter attack needs at least one collected prompt".into(),
        ));
    }
    let d_alt = alt_hidden[0].width();
    let d_spec = bundle.d_spec();
    let mut rng = substream(seed, "adapter-label");
    let mut adapter = adapter_mlp(d_alt, d_spec, cfg.hidden, &mut rng);
    let adam_cfg = AdamConfig::new(cfg.lr, 0.0, 0);
    let mut adam = AdamState::new(adam_cfg, &adapter.params().as_slice());

    let mut scratch_enc = bundle.extractor.encoder.zero_grads();
    let mut scratch_pw = Tensor::zeros(bundle.extractor.proj.w.shape());
    let mut scratch_pb = Tensor::zeros(bundle.extractor.proj.b.shape());
    let mut scratch_head = bundle.head.zero_grads();

    let order_base: Vec<usize> = (0..m).collect();
    for _epoch in 0..cfg.epochs {
        let mut order = order_base.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = adapter.zero_grads();
            for &i in chunk {
                let (mapped, a_cache) = adapter
                    .forward_cached(&alt_hidden[i].values, Some((cfg.dropout, &mut rng)))?;
                let mapped_h = HiddenStates {
                    values: mapped,
                    model: "adapted".into(),
                };
                let (z, x_cache) =
                    bundle
                        .extractor
                        .compress_cached_for_attack(None, &mapped_h, &masks[i])?;
                let z_row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
                let (logits, h_cache) = bundle.head.forward_cached(&z_row, None)?;
                let t_row = Tensor::from_vec(&[1, labels[i].dim()], labels[i].values.clone())?;
                let (_, mut d_logits) = bce_with_logits(&logits, &t_row);
                d_logits.scale(scale);
                for g in scratch_head.iter_mut() {
                    g.fill(0.0);
                }
                let d_z = bundle.head.backward(&h_cache, &d_logits, &mut scratch_head);
                for g in scratch_enc.iter_mut() {
                    g.fill(0.0);
                }
                scratch_pw.fill(0.0);
                scratch_pb.fill(0.0);
                let d_rows = bundle.extractor.backward_for_attack(
                    &x_cache,
                    &d_z,
                    &mut scratch_enc,
                    &mut scratch_pw,
                    &mut scratch_pb,
                );
                adapter.backward(&a_cache, &d_rows, &mut grads);
            }
            adam.apply(&mut adapter.params_mut(), &grads);
        }
    }
    Ok(adapter)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FinetuneAttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FinetuneAttackConfig {
    fn default() -> Self {
        FinetuneAttackConfig {
            epochs: 5,
            batch_size: 32,
            lr: 3e-4,
        }
    }
}

/// Fine-tunes the alternative model itself (embedding and encoder) so its
/// hidden states produce the public label through the frozen proxy.
/// Requires matching hidden widths and the simple protocol's label access.
pub fn finetune_attack(
    alt_model: &StandInModel,
    bundle: &ProxyBundle,
    seqs: &[TokenSequence],
    attack_idx: &[usize],
    labels: &[LabelVector],
    cfg: &FinetuneAttackConfig,
    seed: u64,
) -> Result<StandInModel> {
    if bundle.mode == ProxyMode::Secret {
        return Err(SvipError::InvalidArgument(
            "fine-tuning attack requires label access, unavailable under the secret protocol"
                .into(),
        ));
    }
    if alt_model.spec.hidden_dim != bundle.d_spec() {
        return Err(SvipError::shape(
            "finetune_attack hidden width",
            bundle.d_spec(),
            alt_model.spec.hidden_dim,
        ));
    }
    let mut tuned = alt_model.clone();
    let mut rng = substream(seed, "finetune-attack");
    let adam_cfg = AdamConfig::new(cfg.lr, 0.0, 0);
    let n_params = 1 + tuned.encoder.params().len();
    let mut param_refs: Vec<&Tensor> = vec![&tuned.embedding.table];
    param_refs.extend(tuned.encoder.params());
    let mut adam = AdamState::new(adam_cfg, &param_refs);
    drop(param_refs);

    let mut scratch_enc = bundle.extractor.encoder.zero_grads();
    let mut scratch_pw = Tensor::zeros(bundle.extractor.proj.w.shape());
    let mut scratch_pb = Tensor::zeros(bundle.extractor.proj.b.shape());
    let mut scratch_head = bundle.head.zero_grads();

    for _epoch in 0..cfg.epochs {
        let mut order = attack_idx.to_vec();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads: Vec<Tensor> = vec![Tensor::zeros(tuned.embedding.table.shape())];
            grads.extend(tuned.encoder.zero_grads());
            debug_assert_eq!(grads.len(), n_params);
            for &i in chunk {
                let seq = &seqs[i];
                let x = tuned.embedding.forward(&seq.ids);
                let (h, alt_cache) = tuned.encoder.forward_cached(&x, &seq.mask)?;
                let hh = HiddenStates {
                    values: h,
                    model: tuned.spec.name.clone(),
                };
                let (z, x_cache) =
                    bundle
                        .extractor
                        .compress_cached_for_attack(None, &hh, &seq.mask)?;
                let z_row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
                let (logits, h_cache) = bundle.head.forward_cached(&z_row, None)?;
                let t_row = Tensor::from_vec(&[1, labels[i].dim()], labels[i].values.clone())?;
                let (_, mut d_logits) = bce_with_logits(&logits, &t_row);
                d_logits.scale(scale);
                for g in scratch_head.iter_mut() {
                    g.fill(0.0);
                }
                let d_z = bundle.head.backward(&h_cache, &d_logits, &mut scratch_head);
                for g in scratch_enc.iter_mut() {
                    g.fill(0.0);
                }
                scratch_pw.fill(0.0);
                scratch_pb.fill(0.0);
                let d_h = bundle.extractor.backward_for_attack(
                    &x_cache,
                    &d_z,
                    &mut scratch_enc,
                    &mut scratch_pw,
                    &mut scratch_pb,
                );
                let (emb_grad, enc_grads) = grads.split_at_mut(1);
                let d_x = tuned.encoder.backward(&alt_cache, &d_h, enc_grads);
                tuned.embedding.backward(&seq.ids, &d_x, &mut emb_grad[0]);
            }
            let mut params: Vec<&mut Tensor> = vec![&mut tuned.embedding.table];
            params.extend(tuned.encoder.params_mut());
            adam.apply(&mut params, &grads);
        }
    }
    Ok(tuned)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InverseAttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for InverseAttackConfig {
    fn default() -> Self {
        // 3-layer MLP with sigmoid output, 100 epochs, batch 256.
        InverseAttackConfig {
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            hidden: 128,
        }
    }
}

/// Trains the inverse model mapping collected task tokens back to raw
/// secrets; predictions are the rounded sigmoid outputs.
pub fn train_inverse_model(
    pairs: &[(Secret, Tensor)],
    cfg: &InverseAttackConfig,
    seed: u64,
) -> Result<Mlp> {
    if pairs.is_empty() {
        return Err(SvipError::InvalidArgument(
            "secret recovery needs at least one collected pair".into(),
        ));
    }
    let d_spec = pairs[0].1.len();
    let d_s = pairs[0].0.len();
    let mut rng = substream(seed, "inverse-model");
    let mut inv = Mlp::init(
        MlpSpec::new(
            vec![d_spec, cfg.hidden, cfg.hidden, d_s],
            Activation::Gelu,
            Activation::Sigmoid,
        ),
        &mut rng,
    );
    let adam_cfg = AdamConfig::new(cfg.lr, 0.0, 0);
    let mut adam = AdamState::new(adam_cfg, &inv.params().as_slice());

    let order_base: Vec<usize> = (0..pairs.len()).collect();
    for _epoch in 0..cfg.epochs {
        let mut order = order_base.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut x = Tensor::zeros(&[n, d_spec]);
            let mut t = Tensor::zeros(&[n, d_s]);
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(pairs[i].1.data());
                t.row_mut(r).copy_from_slice(&pairs[i].0.as_f64());
            }
            let (pred, cache) = inv.forward_cached(&x, None)?;
            let (_, mut d_pred) = squared_l2(&pred, &t);
            d_pred.scale(1.0 / n as f64);
            let mut grads = inv.zero_grads();
            inv.backward(&cache, &d_pred, &mut grads);
            adam.apply(&mut inv.params_mut(), &grads);
        }
    }
    Ok(inv)
}

/// Rounds the inverse model's sigmoid outputs to a candidate secret.
pub fn invert_token(inv: &Mlp, token: &Tensor) -> Result<Secret> {
    let row = Tensor::from_vec(&[1, token.len()], token.data().to_vec())?;
    let out = inv.forward(&row)?;
    Secret::from_bits(
        out.row(0)
            .iter()
            .map(|&v| if v >= 0.5 { 1 } else { 0 })
            .collect(),
    )
}

/// Exact-match rate over held-out (secret, token) pairs: the attack
/// succeeds only when every recovered bit matches.
pub fn inverse_exact_match_rate(inv: &Mlp, test_pairs: &[(Secret, Tensor)]) -> Result<f64> {
    if test_pairs.is_empty() {
        return Err(SvipError::InvalidArgument("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for (secret, token) in test_pairs {
        if invert_token(inv, token)? == *secret {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_pairs.len() as f64)
}

/// ASR of an adapter under one secret: the fraction of test prompts whose
/// adapted response passes verification against the true label.
#[allow(clippy::too_many_arguments)]
pub fn adapter_asr(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    threshold: &Threshold,
    adapter: &Mlp,
    alt_model: &StandInModel,
    projection: Option<&ProjectionMatrix>,
    seqs: &[TokenSequence],
    test_idx: &[usize],
    secret: &Secret,
) -> Result<f64> {
    let token = bundle.embed_secret(secret)?;
    let mut hits = 0usize;
    for &i in test_idx {
        let seq = &seqs[i];
        let mut h = alt_model.hidden_states(seq);
        if let Some(p) = projection {
            h = align_dims(&h, p)?;
        }
        let adapted = apply_adapter(adapter, &h)?;
        let z = bundle.compress(Some(&token), &adapted, &seq.mask)?;
        let pred = bundle.predict(&z)?;
        let label = labeler.label(seq, secret);
        if accepts(pred.distance(&label), threshold.eta) {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_idx.len().max(1) as f64)
}

/// Baseline acceptance of the raw substitute (no adapter) under a secret.
pub fn substitute_asr(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    threshold: &Threshold,
    alt_model: &StandInModel,
    projection: Option<&ProjectionMatrix>,
    seqs: &[TokenSequence],
    test_idx: &[usize],
    secret: &Secret,
) -> Result<f64> {
    let token = bundle.embed_secret(secret)?;
    let mut hits = 0usize;
    for &i in test_idx {
        let seq = &seqs[i];
        let mut h = alt_model.hidden_states(seq);
        if let Some(p) = projection {
            h = align_dims(&h, p)?;
        }
        let z = bundle.compress(Some(&token), &h, &seq.mask)?;
        let pred = bundle.predict(&z)?;
        let label = labeler.label(seq, secret);
        if accepts(pred.distance(&label), threshold.eta) {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_idx.len().max(1) as f64)
}

/// Mean and standard error over per-secret ASR runs.
pub fn summarize_asr(per_secret: &[f64]) -> (f64, f64) {
    let n = per_secret.len() as f64;
    let mean = per_secret.iter().sum::<f64>() / n;
    if per_secret.len() < 2 {
        return (mean, 0.0);
    }
    let var = per_secret.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Linear;

    #[test]
    fn direct_attack_solves_full_rank_linear_head() {
        // Linear head f(z) = A z with invertible A: the optimum is exact,
        // cross-checked against the least-squares solution (here: solve).
        let mut rng = substream(1, "lin");
        let d = 6;
        let mut head = Mlp::init(
            MlpSpec::new(vec![d, d], Activation::Linear, Activation::Linear),
            &mut rng,
        );
        // strengthen the diagonal so A is comfortably invertible
        for i in 0..d {
            let v = head.layers[0].w.row(i)[i];
            head.layers[0].w.row_mut(i)[i] = v + 1.5;
        }
        let target = LabelVector::continuous(vec![0.3, -0.8, 0.5, 0.0, 1.2, -0.4]);
        let cfg = DirectAttackConfig {
            steps: 800,
            lr: 0.05,
        };
        let (z, loss) = direct_vector_attack(
            &head,
            &target,
            AttackTargetKind::Continuous,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert!(loss < 1e-6, "residual loss {loss}");
        assert_eq!(z.dim(), d);
    }

    #[test]
    fn inverse_model_memorizes_single_pair() {
        let mut rng = substream(2, "inv");
        let s = Secret::sample(8, &mut rng);
        let token = Tensor::vector((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let cfg = InverseAttackConfig {
            epochs: 200,
            batch_size: 4,
            ..Default::default()
        };
        let inv = train_inverse_model(&[(s.clone(), token.clone())], &cfg, 3).unwrap();
        assert_eq!(invert_token(&inv, &token).unwrap(), s);
    }

    #[test]
    fn inverse_rejects_empty_training_set() {
        assert!(train_inverse_model(&[], &InverseAttackConfig::default(), 0).is_err());
    }

    #[test]
    fn summarize_asr_mean_and_stderr() {
        let (mean, se) = summarize_asr(&[0.2, 0.4, 0.6]);
        assert!((mean - 0.4).abs() < 1e-12);
        assert!(se > 0.0);
        let (_, se1) = summarize_asr(&[0.5]);
        assert_eq!(se1, 0.0);
    }

    #[test]
    fn linear_head_exact_solution_via_normal_equations() {
        // Independent oracle for the full-rank case: solve A z = y by
        // Gaussian elimination and check f(z) hits y exactly.
        let mut rng = substream(4, "ne");
        let d = 4;
        let mut a = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                a.row_mut(i)[j] = rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 };
            }
        }
        let y = vec![0.5, -0.25, 1.0, 0.75];
        // solve
        let mut aug: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row = a.row(i).to_vec();
                row.push(y[i]);
                row
            })
            .collect();
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&r1, &r2| aug[r1][col].abs().partial_cmp(&aug[r2][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            let p = aug[col][col];
            for r in 0..d {
                if r != col {
                    let f = aug[r][col] / p;
                    for c in col..=d {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        let z_solved: Vec<f64> = (0..d).map(|i| aug[i][d] / aug[i][i]).collect();
        let head = Mlp {
            spec: MlpSpec::new(vec![d, d], Activation::Linear, Activation::Linear),
            layers: vec![Linear {
                w: a.clone(),
                b: Tensor::zeros(&[d]),
            }],
        };
        let z_row = Tensor::from_vec(&[1, d], z_solved).unwrap();
        let out = head.forward(&z_row).unwrap();
        for (o, t) in out.row(0).iter().zip(&y) {
            assert!((o - t).abs() < 1e-9);
        }
    }
}
