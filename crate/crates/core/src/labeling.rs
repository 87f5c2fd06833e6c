//! Self-labeling functions for the proxy task: the set-of-words baseline
//! and the trainable secret-conditioned labeling network, with secret
//! distinguishability (delta) estimation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Secret, TokenSequence, VOCAB_SIZE};
use crate::error::{Result, SvipError};
use crate::numerics::rng::substream;
use crate::numerics::{
    l2_distance, Activation, AdamConfig, AdamState, Embedding, Mlp, MlpSpec, ParameterSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Binary,
    Continuous,
}

/// Proxy-task target: binary set-of-words bits or a continuous vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<f64>,
    pub mode: LabelMode,
}

impl LabelVector {
    pub fn binary(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v == 0.0 || v == 1.0));
        LabelVector {
            values,
            mode: LabelMode::Binary,
        }
    }

    pub fn continuous(values: Vec<f64>) -> Self {
        LabelVector {
            values,
            mode: LabelMode::Continuous,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &LabelVector) -> f64 {
        l2_distance(&self.values, &other.values)
    }
}

/// Ordered token set for the set-of-words baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SowVocab {
    pub tokens: Vec<u32>,
}

impl SowVocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Top-k most frequent tokens over the given sequences (pad excluded),
/// ties broken by token id for determinism.
pub fn sow_vocab_top_k(seqs: &[TokenSequence], k: usize) -> SowVocab {
    let mut counts = vec![0u64; VOCAB_SIZE];
    for seq in seqs {
        for (&id, &m) in seq.ids.iter().zip(&seq.mask) {
            if m {
                counts[id as usize] += 1;
            }
        }
    }
    let mut order: Vec<u32> = (0..VOCAB_SIZE as u32).collect();
    order.sort_by(|&a, &b| {
        counts[b as usize]
            .cmp(&counts[a as usize])
            .then(a.cmp(&b))
    });
    SowVocab {
        tokens: order
            .into_iter()
            .filter(|&t| counts[t as usize] > 0)
            .take(k)
            .collect(),
    }
}

/// Bit i is 1 iff vocab token i occurs anywhere in the (non-pad) input;
/// frequency-invariant by construction.
pub fn sow_label(seq: &TokenSequence, vocab: &SowVocab) -> LabelVector {
    assert!(!vocab.is_empty(), "set-of-words vocabulary must be non-empty");
    let mut present = [false; VOCAB_SIZE];
    for (&id, &m) in seq.ids.iter().zip(&seq.mask) {
        if m {
            present[id as usize] = true;
        }
    }
    LabelVector::binary(
        vocab
            .tokens
            .iter()
            .map(|&t| if present[t as usize] { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Frozen seeded stand-in for a pretrained sentence embedder: mean-pooled
/// token embeddings through a 2-layer MLP.
#[derive(Debug, Clone)]
pub struct TextEmbedder {
    pub embedding: Embedding,
    pub mlp: Mlp,
}

impl TextEmbedder {
    fn init(d_u: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "text-embedder");
        TextEmbedder {
            embedding: Embedding::init(&mut rng, VOCAB_SIZE, d_u),
            mlp: Mlp::init(
                MlpSpec::new(vec![d_u, 2 * d_u, d_u], Activation::Gelu, Activation::Linear),
                &mut rng,
            ),
        }
    }

    /// u(x): (1, d_u). All-pad inputs embed to the MLP image of zero.
    pub fn embed(&self, seq: &TokenSequence) -> Tensor {
        let d = self.embedding.dim();
        let mut pooled = Tensor::zeros(&[1, d]);
        let mut count = 0.0;
        for (&id, &m) in seq.ids.iter().zip(&seq.mask) {
            if m {
                let row = self.embedding.table.row(id as usize);
                for (p, &v) in pooled.row_mut(0).iter_mut().zip(row) {
                    *p += v;
                }
                count += 1.0;
            }
        }
        if count > 0.0 {
            pooled.scale(1.0 / count);
        }
        self.mlp.forward(&pooled).expect("embedder dims fixed at init")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LabelerDims {
    pub d_s: usize,
    pub d_u: usize,
    pub d_secret: usize,
    pub d_y: usize,
}

/// Trainable labeling network y(x, s): frozen text embedder, 2-layer
/// secret embedder, and a 3-layer combiner over the concatenation.
#[derive(Debug, Clone)]
pub struct LabelingNetwork {
    pub dims: LabelerDims,
    pub text_embedder: TextEmbedder,
    pub secret_embedder: Mlp,
    pub combiner: Mlp,
    pub seed: u64,
    pub trained: bool,
}

impl LabelingNetwork {
    pub fn init(dims: LabelerDims, seed: u64) -> Self {
        let mut rng = substream(seed, "labeler-init");
        let secret_embedder = Mlp::init(
            MlpSpec::new(
                vec![dims.d_s, 2 * dims.d_secret, dims.d_secret],
                Activation::Gelu,
                Activation::Linear,
            ),
            &mut rng,
        );
        let d_in = dims.d_u + dims.d_secret;
        let combiner = Mlp::init(
            MlpSpec::new(
                vec![d_in, 2 * d_in, d_in, dims.d_y],
                Activation::Gelu,
                Activation::Linear,
            ),
            &mut rng,
        );
        LabelingNetwork {
            dims,
            text_embedder: TextEmbedder::init(dims.d_u, seed),
            secret_embedder,
            combiner,
            seed,
            trained: false,
        }
    }

    pub fn embed_text(&self, seq: &TokenSequence) -> Tensor {
        self.text_embedder.embed(seq)
    }

    /// y(x, s) for one prompt and secret.
    pub fn label(&self, seq: &TokenSequence, secret: &Secret) -> LabelVector {
        let u = self.embed_text(seq);
        self.label_from_embedding(&u, secret)
    }

    /// Same as `label` but reusing a precomputed text embedding.
    pub fn label_from_embedding(&self, u: &Tensor, secret: &Secret) -> LabelVector {
        let e = self
            .secret_embedder
            .forward(&Tensor::from_vec(&[1, secret.len()], secret.as_f64()).expect("secret row"))
            .expect("secret embedder dims");
        let mut row = Vec::with_capacity(self.dims.d_u + self.dims.d_secret);
        row.extend_from_slice(u.row(0));
        row.extend_from_slice(e.row(0));
        let input = Tensor::from_vec(&[1, row.len()], row).expect("combiner row");
        let y = self.combiner.forward(&input).expect("combiner dims");
        LabelVector::continuous(y.row(0).to_vec())
    }

    /// Trainable parameters (the text embedder stays frozen).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.secret_embedder.params();
        p.extend(self.combiner.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.secret_embedder.params_mut();
        p.extend(self.combiner.params_mut());
        p
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        let mut g = self.secret_embedder.zero_grads();
        g.extend(self.combiner.zero_grads());
        g
    }

    pub fn to_parameter_set(&self) -> ParameterSet {
        let arch = serde_json::json!({
            "dims": self.dims,
            "seed": self.seed,
            "trained": self.trained,
        });
        let mut named = Vec::new();
        named.push((
            "text_embedder.table".to_string(),
            self.text_embedder.embedding.table.clone(),
        ));
        for (name, t) in self
            .text_embedder
            .mlp
            .param_names("text_embedder.mlp")
            .into_iter()
            .zip(self.text_embedder.mlp.params())
        {
            named.push((name, t.clone()));
        }
        for (name, t) in self
            .secret_embedder
            .param_names("secret_embedder")
            .into_iter()
            .zip(self.secret_embedder.params())
        {
            named.push((name, t.clone()));
        }
        for (name, t) in self
            .combiner
            .param_names("combiner")
            .into_iter()
            .zip(self.combiner.params())
        {
            named.push((name, t.clone()));
        }
        ParameterSet::new("labeler", arch, named).expect("labeler parameter names are unique")
    }

    pub fn from_parameter_set(ps: &ParameterSet) -> Result<Self> {
        if ps.role() != "labeler" {
            return Err(SvipError::Format(format!(
                "expected labeler container, got {}",
                ps.role()
            )));
        }
        let dims: LabelerDims = serde_json::from_value(ps.descriptor.arch["dims"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let seed = ps.descriptor.arch["seed"].as_u64().unwrap_or(0);
        let trained = ps.descriptor.arch["trained"].as_bool().unwrap_or(false);
        let mut net = LabelingNetwork::init(dims, seed);
        net.trained = trained;
        let table = ps
            .tensor("text_embedder.table")
            .ok_or_else(|| SvipError::Format("missing tensor text_embedder.table".into()))?;
        if table.shape() != net.text_embedder.embedding.table.shape() {
            return Err(SvipError::shape(
                "text_embedder.table",
                format!("{:?}", net.text_embedder.embedding.table.shape()),
                format!("{:?}", table.shape()),
            ));
        }
        net.text_embedder.embedding.table = table.clone();
        let names = net.text_embedder.mlp.param_names("text_embedder.mlp");
        for (name, t) in names.iter().zip(net.text_embedder.mlp.params_mut()) {
            let src = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?;
            *t = src.clone();
        }
        let names = net.secret_embedder.param_names("secret_embedder");
        for (name, t) in names.iter().zip(net.secret_embedder.params_mut()) {
            let src = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?;
            *t = src.clone();
        }
        let names = net.combiner.param_names("combiner");
        for (name, t) in names.iter().zip(net.combiner.params_mut()) {
            let src = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?;
            *t = src.clone();
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Weight between the secret-contrast term and the prompt-anchoring term.
    pub w: f64,
}

impl Default for LabelerTrainConfig {
    fn default() -> Self {
        LabelerTrainConfig {
            epochs: 6,
            batch_size: 128,
            lr: 3e-4,
            weight_decay: 0.01,
            warmup_steps: 50,
            w: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// One training batch's loss and the gradients it induces; factored out
/// so tests can check the w=1 degenerate case and finite differences.
pub struct LabelerBatchEval {
    pub loss: f64,
    pub secret_term: f64,
    pub prompt_term: f64,
}

fn labeler_batch(
    net: &LabelingNetwork,
    u_embeds: &[Tensor],
    u_dists: &[f64],
    prompts: &[usize],
    partners: &[usize],
    secrets_a: &Tensor,
    secrets_b: &Tensor,
    w: f64,
    grads: Option<&mut [Tensor]>,
) -> LabelerBatchEval {
    let n = prompts.len();
    let d_u = net.dims.d_u;
    let d_e = net.dims.d_secret;

    // Secret embedder over 2n rows: [s_1..s_n, s'_1..s'_n].
    let mut secret_rows = Tensor::zeros(&[2 * n, net.dims.d_s]);
    for i in 0..n {
        secret_rows.row_mut(i).copy_from_slice(secrets_a.row(i));
        secret_rows.row_mut(n + i).copy_from_slice(secrets_b.row(i));
    }
    let (emb, emb_cache) = net
        .secret_embedder
        .forward_cached(&secret_rows, None)
        .expect("secret embedder dims");

    // Combiner over 3n rows: a_i=(u_i,e_i), b_i=(u_i,e'_i), c_i=(u_j,e_i).
    let d_in = d_u + d_e;
    let mut comb_in = Tensor::zeros(&[3 * n, d_in]);
    for i in 0..n {
        let (ui, uj) = (u_embeds[prompts[i]].row(0), u_embeds[partners[i]].row(0));
        comb_in.row_mut(i)[..d_u].copy_from_slice(ui);
        comb_in.row_mut(i)[d_u..].copy_from_slice(emb.row(i));
        comb_in.row_mut(n + i)[..d_u].copy_from_slice(ui);
        comb_in.row_mut(n + i)[d_u..].copy_from_slice(emb.row(n + i));
        comb_in.row_mut(2 * n + i)[..d_u].copy_from_slice(uj);
        comb_in.row_mut(2 * n + i)[d_u..].copy_from_slice(emb.row(i));
    }
    let (y, comb_cache) = net
        .combiner
        .forward_cached(&comb_in, None)
        .expect("combiner dims");

    let d_y = net.dims.d_y;
    let mut d_out = Tensor::zeros(&[3 * n, d_y]);
    let mut secret_term = 0.0;
    let mut prompt_term = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let (a, b, c) = (y.row(i), y.row(n + i), y.row(2 * n + i));
        let dist_ab = l2_distance(a, b);
        let dist_ac = l2_distance(a, c);
        secret_term += dist_ab * inv_n;
        let gap = dist_ac - u_dists[i];
        prompt_term += gap.abs() * inv_n;

        if grads.is_some() {
            // -w * ||a-b||: gradient -(w/n)(a-b)/||a-b||
            if dist_ab > 1e-12 {
                let coeff = -w * inv_n / dist_ab;
                for k in 0..d_y {
                    let g = coeff * (a[k] - b[k]);
                    d_out.row_mut(i)[k] += g;
                    d_out.row_mut(n + i)[k] -= g;
                }
            }
            // (1-w) * |dist_ac - u_dist|
            if dist_ac > 1e-12 && gap.abs() > 1e-12 {
                let coeff = (1.0 - w) * inv_n * gap.signum() / dist_ac;
                for k in 0..d_y {
                    let g = coeff * (a[k] - c[k]);
                    d_out.row_mut(i)[k] += g;
                    d_out.row_mut(2 * n + i)[k] -= g;
                }
            }
        }
    }
    let loss = -w * secret_term + (1.0 - w) * prompt_term;

    if let Some(grads) = grads {
        let n_se = net.secret_embedder.params().len();
        let (se_grads, comb_grads) = grads.split_at_mut(n_se);
        let d_comb_in = net.combiner.backward(&comb_cache, &d_out, comb_grads);
        // Route the secret-embedding part of the input gradient back.
        let mut d_emb = Tensor::zeros(&[2 * n, d_e]);
        for i in 0..n {
            for k in 0..d_e {
                d_emb.row_mut(i)[k] +=
                    d_comb_in.row(i)[d_u + k] + d_comb_in.row(2 * n + i)[d_u + k];
                d_emb.row_mut(n + i)[k] += d_comb_in.row(n + i)[d_u + k];
            }
        }
        net.secret_embedder.backward(&emb_cache, &d_emb, se_grads);
    }

    LabelerBatchEval {
        loss,
        secret_term,
        prompt_term,
    }
}

fn secret_matrix(n: usize, d_s: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let mut t = Tensor::zeros(&[n, d_s]);
    for i in 0..n {
        for v in t.row_mut(i) {
            *v = (rng.next_u32() & 1) as f64;
        }
    }
    t
}

use rand::RngCore;

/// Trains the labeling network with the two-term objective: push labels
/// apart across secrets while anchoring prompt-induced label distances to
/// frozen text-embedding distances (the anti-collapse term).
pub fn train_labeling_network(
    seqs: &[TokenSequence],
    train_idx: &[usize],
    dims: LabelerDims,
    cfg: &LabelerTrainConfig,
    seed: u64,
) -> Result<(LabelingNetwork, TrainReport)> {
    if train_idx.is_empty() {
        return Err(SvipError::InvalidArgument("empty training split".into()));
    }
    if !(0.0..=1.0).contains(&cfg.w) {
        return Err(SvipError::Config(format!("labeler weight w={} outside [0,1]", cfg.w)));
    }
    let mut net = LabelingNetwork::init(dims, seed);
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((net, report));
    }

    // The text embedder is frozen: embed every training prompt once.
    let u_embeds: Vec<Tensor> = seqs.iter().map(|s| net.embed_text(s)).collect();

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay, cfg.warmup_steps);
    let mut adam = AdamState::new(adam_cfg, &net.params());
    let mut rng = substream(seed, "labeler-train");

    for _epoch in 0..cfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            if n < 2 {
                continue;
            }
            let mut partners: Vec<usize> = chunk.to_vec();
            partners.rotate_left(1);
            let secrets_a = secret_matrix(n, dims.d_s, &mut rng);
            let secrets_b = secret_matrix(n, dims.d_s, &mut rng);
            let u_dists: Vec<f64> = chunk
                .iter()
                .zip(&partners)
                .map(|(&i, &j)| l2_distance(u_embeds[i].row(0), u_embeds[j].row(0)))
                .collect();

            let mut grads = net.zero_grads();
            let eval = labeler_batch(
                &net,
                &u_embeds,
                &u_dists,
                chunk,
                &partners,
                &secrets_a,
                &secrets_b,
                cfg.w,
                Some(&mut grads),
            );
            if !eval.loss.is_finite() {
                return Err(SvipError::Diverged(format!(
                    "labeler loss became non-finite at step {}",
                    report.steps
                )));
            }
            adam.apply(&mut net.params_mut(), &grads);
            report.steps += 1;
            epoch_loss += eval.loss;
            batches += 1.0;
        }
        report.epoch_losses.push(epoch_loss / batches.max(1.0));
    }
    net.trained = true;
    Ok((net, report))
}

/// Fraction of sampled (x, s, s') pairs with s != s' whose label distance
/// reaches the calibrated threshold: the empirical secret
/// distinguishability.
pub fn estimate_delta(
    net: &LabelingNetwork,
    test_seqs: &[&TokenSequence],
    eta: f64,
    pairs_per_prompt: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if test_seqs.is_empty() {
        return Err(SvipError::InvalidArgument("empty test set".into()));
    }
    let d_s = net.dims.d_s;
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in test_seqs {
        let u = net.embed_text(seq);
        for _ in 0..pairs_per_prompt {
            let s = Secret::sample(d_s, rng);
            // s' != s by construction: resample until distinct.
            let s_prime = loop {
                let c = Secret::sample(d_s, rng);
                if c != s {
                    break c;
                }
            };
            let ya = net.label_from_embedding(&u, &s);
            let yb = net.label_from_embedding(&u, &s_prime);
            if ya.distance(&yb) >= eta {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
