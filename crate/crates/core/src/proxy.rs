//! The proxy task: provider-side compression g, user-side head f, secret
//! task-token embedding t, and the training objectives for the simple
//! (set-of-words) and secret-conditioned protocols.

use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Secret, TokenSequence};
use crate::error::{Result, SvipError};
use crate::labeling::{sow_label, LabelVector, LabelingNetwork, SowVocab};
use crate::models::{HiddenStates, StandInModel};
use crate::numerics::rng::substream;
use crate::numerics::{
    loss::{bce_with_logits, squared_l2},
    masked_mean, masked_mean_backward, Activation, AdamConfig, AdamState, EncoderSpec, Linear,
    Mlp, MlpSpec, ParameterSet, Tensor, TransformerEncoder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    Simple,
    Secret,
}

/// Provider-returned compressed feature z(x) of dimension d_g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedVector {
    pub z: Vec<f64>,
    pub query_id: Option<String>,
}

impl CompressedVector {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Wire cost when shipped as f32 (the in-memory f64 is a training
    /// convenience, not the transport format).
    pub fn wire_size_bytes(&self) -> usize {
        self.z.len() * 4
    }

    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = Some(id.into());
        self
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

/// What the platform distributes to the computing provider: the feature
/// extractor only. The head, the secret embedder, and the labeler never
/// cross this boundary.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub encoder: TransformerEncoder,
    pub proj: Linear,
    pub d_g: usize,
}

pub struct ExtractorCache {
    include: Vec<bool>,
    enc_cache: crate::numerics::encoder::EncoderCache,
    pooled: Tensor,
}

impl Extractor {
    pub fn d_spec(&self) -> usize {
        self.encoder.width()
    }

    /// Builds the (L+1, d) or (L, d) input block: optional task token at
    /// position 0 followed by the hidden-state rows.
    fn assemble(
        &self,
        task_token: Option<&Tensor>,
        h: &HiddenStates,
        mask: &[bool],
    ) -> Result<(Tensor, Vec<bool>)> {
        if h.values.cols() != self.d_spec() {
            return Err(SvipError::shape(
                "extractor input width",
                self.d_spec(),
                h.values.cols(),
            ));
        }
        let l = h.values.rows();
        match task_token {
            Some(t) => {
                if t.len() != self.d_spec() {
                    return Err(SvipError::shape("task token", self.d_spec(), t.len()));
                }
                let mut rows = Tensor::zeros(&[l + 1, self.d_spec()]);
                rows.row_mut(0).copy_from_slice(t.data());
                for i in 0..l {
                    rows.row_mut(i + 1).copy_from_slice(h.values.row(i));
                }
                let mut include = Vec::with_capacity(l + 1);
                include.push(true);
                include.extend_from_slice(mask);
                Ok((rows, include))
            }
            None => Ok((h.values.clone(), mask.to_vec())),
        }
    }

    pub fn compress(
        &self,
        task_token: Option<&Tensor>,
        h: &HiddenStates,
        mask: &[bool],
    ) -> Result<CompressedVector> {
        let (rows, include) = self.assemble(task_token, h, mask)?;
        let encoded = self.encoder.forward(&rows, &include)?;
        let pooled = masked_mean(&encoded, &include);
        let z = self.proj.forward(&pooled);
        Ok(CompressedVector {
            z: z.row(0).to_vec(),
            query_id: None,
        })
    }

    fn compress_cached(
        &self,
        task_token: Option<&Tensor>,
        h: &HiddenStates,
        mask: &[bool],
    ) -> Result<(CompressedVector, ExtractorCache)> {
        let (rows, include) = self.assemble(task_token, h, mask)?;
        let (encoded, enc_cache) = self.encoder.forward_cached(&rows, &include)?;
        let pooled = masked_mean(&encoded, &include);
        drop(rows);
        let z = self.proj.forward(&pooled);
        Ok((
            CompressedVector {
                z: z.row(0).to_vec(),
                query_id: None,
            },
            ExtractorCache {
                include,
                enc_cache,
                pooled,
            },
        ))
    }

    /// Backward from d_z; accumulates grads (encoder grads then proj w/b)
    /// and returns the gradient w.r.t. the assembled input rows.
    fn backward(
        &self,
        cache: &ExtractorCache,
        d_z: &Tensor,
        enc_grads: &mut [Tensor],
        g_proj_w: &mut Tensor,
        g_proj_b: &mut Tensor,
    ) -> Tensor {
        let d_pooled = self.proj.backward(&cache.pooled, d_z, g_proj_w, g_proj_b);
        let d_encoded = masked_mean_backward(&d_pooled, &cache.include);
        self.encoder.backward(&cache.enc_cache, &d_encoded, enc_grads)
    }

    /// Attack code optimizes inputs through a frozen extractor; these
    /// shims expose the cached forward/backward without widening the
    /// public compression API.
    pub(crate) fn compress_cached_for_attack(
        &self,
        task_token: Option<&Tensor>,
        h: &HiddenStates,
        mask: &[bool],
    ) -> Result<(CompressedVector, ExtractorCache)> {
        self.compress_cached(task_token, h, mask)
    }

    pub(crate) fn backward_for_attack(
        &self,
        cache: &ExtractorCache,
        d_z: &Tensor,
        enc_grads: &mut [Tensor],
        g_proj_w: &mut Tensor,
        g_proj_b: &mut Tensor,
    ) -> Tensor {
        self.backward(cache, d_z, enc_grads, g_proj_w, g_proj_b)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.push(&self.proj.w);
        p.push(&self.proj.b);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.push(&mut self.proj.w);
        p.push(&mut self.proj.b);
        p
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = self.encoder.param_names(&format!("{prefix}.encoder"));
        names.push(format!("{prefix}.proj.w"));
        names.push(format!("{prefix}.proj.b"));
        names
    }

    pub fn to_parameter_set(&self) -> ParameterSet {
        let arch = serde_json::json!({
            "encoder": self.encoder.spec,
            "d_g": self.d_g,
        });
        let named = self
            .param_names("extractor")
            .into_iter()
            .zip(self.params().into_iter().cloned())
            .collect();
        ParameterSet::new("extractor", arch, named).expect("extractor names unique")
    }

    pub fn from_parameter_set(ps: &ParameterSet) -> Result<Self> {
        if ps.role() != "extractor" {
            return Err(SvipError::Format(format!(
                "expected extractor container, got {}",
                ps.role()
            )));
        }
        let spec: EncoderSpec = serde_json::from_value(ps.descriptor.arch["encoder"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let d_g = ps.descriptor.arch["d_g"].as_u64().unwrap_or(0) as usize;
        let mut rng = substream(0, "extractor-load");
        let mut ex = Extractor {
            encoder: TransformerEncoder::init(spec, &mut rng),
            proj: Linear::init(&mut rng, 1, 1),
            d_g,
        };
        ex.proj = Linear {
            w: ps
                .tensor("extractor.proj.w")
                .ok_or_else(|| SvipError::Format("missing extractor.proj.w".into()))?
                .clone(),
            b: ps
                .tensor("extractor.proj.b")
                .ok_or_else(|| SvipError::Format("missing extractor.proj.b".into()))?
                .clone(),
        };
        let names = ex.encoder.param_names("extractor.encoder");
        for (name, t) in names.iter().zip(ex.encoder.params_mut()) {
            let src = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?;
            *t = src.clone();
        }
        Ok(ex)
    }
}

/// Trained proxy stack for one specified model.
#[derive(Debug, Clone)]
pub struct ProxyBundle {
    pub mode: ProxyMode,
    pub spec_model: String,
    pub d_g: usize,
    pub label_dim: usize,
    pub extractor: Extractor,
    pub head: Mlp,
    pub secret_embedder: Option<Mlp>,
    /// Identifies the consistent training run this bundle belongs to.
    pub stack_id: String,
    /// Labeler the bundle was trained against (secret mode).
    pub labeler_id: Option<String>,
}

impl ProxyBundle {
    pub fn d_spec(&self) -> usize {
        self.extractor.d_spec()
    }

    /// t(s): task token in the specified model's hidden width.
    pub fn embed_secret(&self, secret: &Secret) -> Result<Tensor> {
        let emb = self.secret_embedder.as_ref().ok_or_else(|| {
            SvipError::InvalidArgument("simple-mode bundle has no secret embedder".into())
        })?;
        let row = Tensor::from_vec(&[1, secret.len()], secret.as_f64())?;
        let out = emb.forward(&row)?;
        Ok(Tensor::vector(out.row(0).to_vec()))
    }

    pub fn compress(
        &self,
        task_token: Option<&Tensor>,
        h: &HiddenStates,
        mask: &[bool],
    ) -> Result<CompressedVector> {
        match (self.mode, task_token) {
            (ProxyMode::Secret, None) => Err(SvipError::InvalidArgument(
                "secret-mode compression requires a task token".into(),
            )),
            (ProxyMode::Simple, Some(_)) => Err(SvipError::InvalidArgument(
                "simple-mode compression takes no task token".into(),
            )),
            _ => self.extractor.compress(task_token, h, mask),
        }
    }

    /// f(z): raw head output (continuous label estimate, or logits in
    /// simple mode).
    pub fn predict(&self, z: &CompressedVector) -> Result<LabelVector> {
        if z.dim() != self.d_g {
            return Err(SvipError::shape("compressed vector", self.d_g, z.dim()));
        }
        let row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
        let out = self.head.forward(&row)?;
        Ok(LabelVector::continuous(out.row(0).to_vec()))
    }

    /// Simple-mode prediction binarized at probability 1/2.
    pub fn predict_bits(&self, z: &CompressedVector) -> Result<LabelVector> {
        let logits = self.predict(z)?;
        Ok(LabelVector::binary(
            logits
                .values
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { 0.0 })
                .collect(),
        ))
    }

    pub fn to_parameter_set(&self) -> ParameterSet {
        let arch = serde_json::json!({
            "mode": self.mode,
            "spec_model": self.spec_model,
            "d_g": self.d_g,
            "label_dim": self.label_dim,
            "encoder": self.extractor.encoder.spec,
            "head_spec": self.head.spec,
            "secret_spec": self.secret_embedder.as_ref().map(|m| m.spec.clone()),
            "stack_id": self.stack_id,
            "labeler_id": self.labeler_id,
        });
        let mut named: Vec<(String, Tensor)> = self
            .extractor
            .param_names("extractor")
            .into_iter()
            .zip(self.extractor.params().into_iter().cloned())
            .collect();
        named.extend(
            self.head
                .param_names("head")
                .into_iter()
                .zip(self.head.params().into_iter().cloned()),
        );
        if let Some(emb) = &self.secret_embedder {
            named.extend(
                emb.param_names("secret_embedder")
                    .into_iter()
                    .zip(emb.params().into_iter().cloned()),
            );
        }
        ParameterSet::new("proxy-bundle", arch, named).expect("bundle names unique")
    }

    pub fn from_parameter_set(ps: &ParameterSet) -> Result<Self> {
        if ps.role() != "proxy-bundle" {
            return Err(SvipError::Format(format!(
                "expected proxy-bundle container, got {}",
                ps.role()
            )));
        }
        let arch = &ps.descriptor.arch;
        let mode: ProxyMode = serde_json::from_value(arch["mode"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let enc_spec: EncoderSpec = serde_json::from_value(arch["encoder"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let head_spec: MlpSpec = serde_json::from_value(arch["head_spec"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let secret_spec: Option<MlpSpec> = serde_json::from_value(arch["secret_spec"].clone())
            .map_err(|e| SvipError::Format(e.to_string()))?;
        let mut rng = substream(0, "bundle-load");
        let mut bundle = ProxyBundle {
            mode,
            spec_model: arch["spec_model"].as_str().unwrap_or("").to_string(),
            d_g: arch["d_g"].as_u64().unwrap_or(0) as usize,
            label_dim: arch["label_dim"].as_u64().unwrap_or(0) as usize,
            extractor: Extractor {
                encoder: TransformerEncoder::init(enc_spec, &mut rng),
                proj: Linear::init(&mut rng, 1, 1),
                d_g: arch["d_g"].as_u64().unwrap_or(0) as usize,
            },
            head: Mlp::init(head_spec, &mut rng),
            secret_embedder: secret_spec.map(|s| Mlp::init(s, &mut rng)),
            stack_id: arch["stack_id"].as_str().unwrap_or("").to_string(),
            labeler_id: arch["labeler_id"].as_str().map(|s| s.to_string()),
        };
        bundle.extractor.proj = Linear {
            w: ps
                .tensor("extractor.proj.w")
                .ok_or_else(|| SvipError::Format("missing extractor.proj.w".into()))?
                .clone(),
            b: ps
                .tensor("extractor.proj.b")
                .ok_or_else(|| SvipError::Format("missing extractor.proj.b".into()))?
                .clone(),
        };
        let names = bundle.extractor.encoder.param_names("extractor.encoder");
        for (name, t) in names.iter().zip(bundle.extractor.encoder.params_mut()) {
            *t = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?
                .clone();
        }
        let names = bundle.head.param_names("head");
        for (name, t) in names.iter().zip(bundle.head.params_mut()) {
            *t = ps
                .tensor(name)
                .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?
                .clone();
        }
        if let Some(emb) = bundle.secret_embedder.as_mut() {
            let names = emb.param_names("secret_embedder");
            for (name, t) in names.iter().zip(emb.params_mut()) {
                *t = ps
                    .tensor(name)
                    .ok_or_else(|| SvipError::Format(format!("missing tensor {name}")))?
                    .clone();
            }
        }
        Ok(bundle)
    }
}

/// Hidden states computed once per prompt and reused for every epoch and
/// secret pairing; `gets` counts reads, `len` the one-time computations.
pub struct HiddenCache {
    pub model_name: String,
    states: Vec<HiddenStates>,
    masks: Vec<Vec<bool>>,
    gets: Cell<u64>,
}

impl HiddenCache {
    pub fn build(model: &StandInModel, seqs: &[TokenSequence]) -> Self {
        let states = seqs.iter().map(|s| model.hidden_states(s)).collect();
        let masks = seqs.iter().map(|s| s.mask.clone()).collect();
        HiddenCache {
            model_name: model.spec.name.clone(),
            states,
            masks,
            gets: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, idx: usize) -> (&HiddenStates, &[bool]) {
        self.gets.set(self.gets.get() + 1);
        (&self.states[idx], &self.masks[idx])
    }

    pub fn reads(&self) -> u64 {
        self.gets.get()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Secret-mode: fresh secrets drawn per prompt per epoch.
    pub secrets_per_prompt: usize,
    pub extractor_depth: usize,
    pub d_g: usize,
}

impl Default for ProxyTrainConfig {
    fn default() -> Self {
        ProxyTrainConfig {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 100,
            secrets_per_prompt: 2,
            extractor_depth: 2,
            d_g: 64,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProxyTrainReport {
    pub epoch_losses: Vec<f64>,
    /// Mean verification distance on the validation split per epoch
    /// (secret mode) or validation bit accuracy (simple mode).
    pub val_metric: Vec<f64>,
    pub steps: usize,
    pub cached_prompts: usize,
}

fn pick_heads(dim: usize) -> usize {
    for h in [8, 4, 2] {
        if dim % h == 0 {
            return h;
        }
    }
    1
}

fn init_bundle(
    mode: ProxyMode,
    spec_model: &str,
    d_spec: usize,
    label_dim: usize,
    d_s: usize,
    cfg: &ProxyTrainConfig,
    max_len: usize,
    seed: u64,
    labeler_id: Option<String>,
) -> ProxyBundle {
    let mut rng = substream(seed, "proxy-init");
    let enc_spec = EncoderSpec::new(d_spec, cfg.extractor_depth, pick_heads(d_spec), max_len + 1);
    let extractor = Extractor {
        encoder: TransformerEncoder::init(enc_spec, &mut rng),
        proj: Linear::init(&mut rng, d_spec, cfg.d_g),
        d_g: cfg.d_g,
    };
    let head = Mlp::init(
        MlpSpec::new(
            vec![cfg.d_g, 2 * cfg.d_g, cfg.d_g, label_dim],
            Activation::Gelu,
            Activation::Linear,
        ),
        &mut rng,
    );
    let secret_embedder = match mode {
        ProxyMode::Secret => Some(Mlp::init(
            MlpSpec::new(
                vec![d_s, d_spec, d_spec, d_spec, d_spec],
                Activation::Gelu,
                Activation::Linear,
            ),
            &mut rng,
        )),
        ProxyMode::Simple => None,
    };
    let mode_tag = match mode {
        ProxyMode::Simple => "simple",
        ProxyMode::Secret => "secret",
    };
    ProxyBundle {
        mode,
        spec_model: spec_model.to_string(),
        d_g: cfg.d_g,
        label_dim,
        extractor,
        head,
        secret_embedder,
        stack_id: format!("{spec_model}-{mode_tag}-{seed:016x}"),
        labeler_id,
    }
}

struct BundleGrads {
    enc: Vec<Tensor>,
    proj_w: Tensor,
    proj_b: Tensor,
    head: Vec<Tensor>,
    secret: Option<Vec<Tensor>>,
}

impl BundleGrads {
    fn zero(bundle: &ProxyBundle) -> Self {
        BundleGrads {
            enc: bundle.extractor.encoder.zero_grads(),
            proj_w: Tensor::zeros(bundle.extractor.proj.w.shape()),
            proj_b: Tensor::zeros(bundle.extractor.proj.b.shape()),
            head: bundle.head.zero_grads(),
            secret: bundle.secret_embedder.as_ref().map(|m| m.zero_grads()),
        }
    }

    fn flat(self) -> Vec<Tensor> {
        let mut all = self.enc;
        all.push(self.proj_w);
        all.push(self.proj_b);
        all.extend(self.head);
        if let Some(s) = self.secret {
            all.extend(s);
        }
        all
    }
}

fn bundle_params_mut(bundle: &mut ProxyBundle) -> Vec<&mut Tensor> {
    let mut p = bundle.extractor.params_mut();
    p.extend(bundle.head.params_mut());
    if let Some(emb) = bundle.secret_embedder.as_mut() {
        p.extend(emb.params_mut());
    }
    p
}

fn bundle_params(bundle: &ProxyBundle) -> Vec<&Tensor> {
    let mut p = bundle.extractor.params();
    p.extend(bundle.head.params());
    if let Some(emb) = bundle.secret_embedder.as_ref() {
        p.extend(emb.params());
    }
    p
}

/// One secret-mode example: forward to the squared-L2 loss against the
/// frozen labeler target, backward into all three networks.
fn secret_example_pass(
    bundle: &ProxyBundle,
    h: &HiddenStates,
    mask: &[bool],
    secret_row: &Tensor,
    target: &[f64],
    scale: f64,
    grads: Option<&mut BundleGrads>,
) -> Result<f64> {
    let emb = bundle
        .secret_embedder
        .as_ref()
        .expect("secret-mode bundle");
    let (token_out, emb_cache) = emb.forward_cached(secret_row, None)?;
    let token = Tensor::vector(token_out.row(0).to_vec());
    let (z, ex_cache) = bundle.extractor.compress_cached(Some(&token), h, mask)?;
    let z_row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
    let (pred, head_cache) = bundle.head.forward_cached(&z_row, None)?;
    let target_row = Tensor::from_vec(&[1, target.len()], target.to_vec())?;
    let (loss, mut d_pred) = squared_l2(&pred, &target_row);
    if let Some(g) = grads {
        d_pred.scale(scale);
        let d_z = bundle.head.backward(&head_cache, &d_pred, &mut g.head);
        let d_rows = bundle
            .extractor
            .backward(&ex_cache, &d_z, &mut g.enc, &mut g.proj_w, &mut g.proj_b);
        // Row 0 of the assembled input is the task token.
        let d_token = Tensor::from_vec(&[1, d_rows.cols()], d_rows.row(0).to_vec())?;
        emb.backward(&emb_cache, &d_token, g.secret.as_mut().expect("secret grads"));
    }
    Ok(loss)
}

/// Simple-mode example: per-bit BCE against the set-of-words label.
fn simple_example_pass(
    bundle: &ProxyBundle,
    h: &HiddenStates,
    mask: &[bool],
    target_bits: &[f64],
    scale: f64,
    grads: Option<&mut BundleGrads>,
) -> Result<f64> {
    let (z, ex_cache) = bundle.extractor.compress_cached(None, h, mask)?;
    let z_row = Tensor::from_vec(&[1, z.dim()], z.z.clone())?;
    let (logits, head_cache) = bundle.head.forward_cached(&z_row, None)?;
    let target_row = Tensor::from_vec(&[1, target_bits.len()], target_bits.to_vec())?;
    let (loss, mut d_logits) = bce_with_logits(&logits, &target_row);
    if let Some(g) = grads {
        d_logits.scale(scale);
        let d_z = bundle.head.backward(&head_cache, &d_logits, &mut g.head);
        bundle
            .extractor
            .backward(&ex_cache, &d_z, &mut g.enc, &mut g.proj_w, &mut g.proj_b);
    }
    Ok(loss)
}

/// Trains the secret-conditioned proxy jointly over (extractor, head,
/// secret embedder); the labeler stays frozen as the target function.
pub fn train_secret_proxy(
    model: &StandInModel,
    labeler: &LabelingNetwork,
    seqs: &[TokenSequence],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &ProxyTrainConfig,
    seed: u64,
) -> Result<(ProxyBundle, ProxyTrainReport)> {
    if !labeler.trained {
        return Err(SvipError::InvalidArgument(
            "labeler must be trained (or explicitly flagged) before proxy training".into(),
        ));
    }
    let d_s = labeler.dims.d_s;
    let max_len = seqs.first().map(|s| s.len()).unwrap_or(0);
    let mut bundle = init_bundle(
        ProxyMode::Secret,
        &model.spec.name,
        model.spec.hidden_dim,
        labeler.dims.d_y,
        d_s,
        cfg,
        max_len,
        seed,
        Some(labeler_id(labeler)),
    );
    let mut report = ProxyTrainReport::default();
    if cfg.epochs == 0 {
        return Ok((bundle, report));
    }

    let cache = HiddenCache::build(model, seqs);
    report.cached_prompts = cache.len();
    let u_embeds: Vec<Tensor> = seqs.iter().map(|s| labeler.embed_text(s)).collect();

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay, cfg.warmup_steps);
    let mut adam = AdamState::new(adam_cfg, &bundle_params(&bundle));
    let mut rng = substream(seed, "proxy-train");

    for _epoch in 0..cfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let m = (chunk.len() * cfg.secrets_per_prompt) as f64;
            let mut grads = BundleGrads::zero(&bundle);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (h, mask) = cache.get(idx);
                for _ in 0..cfg.secrets_per_prompt {
                    let secret = Secret::sample(d_s, &mut rng);
                    let target = labeler
                        .label_from_embedding(&u_embeds[idx], &secret)
                        .values;
                    let secret_row = Tensor::from_vec(&[1, d_s], secret.as_f64())?;
                    let loss = secret_example_pass(
                        &bundle,
                        h,
                        mask,
                        &secret_row,
                        &target,
                        1.0 / m,
                        Some(&mut grads),
                    )?;
                    batch_loss += loss / m;
                }
            }
            if !batch_loss.is_finite() {
                return Err(SvipError::Diverged(format!(
                    "proxy loss became non-finite at step {}",
                    report.steps
                )));
            }
            adam.apply(&mut bundle_params_mut(&mut bundle), &grads.flat());
            report.steps += 1;
            epoch_loss += batch_loss;
            batches += 1.0;
        }
        report.epoch_losses.push(epoch_loss / batches.max(1.0));
        report
            .val_metric
            .push(mean_val_distance(&bundle, labeler, &cache, &u_embeds, val_idx, &mut rng)?);
    }
    Ok((bundle, report))
}

/// Mean verification distance over a validation split with one fresh
/// secret per prompt.
pub fn mean_val_distance(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    cache: &HiddenCache,
    u_embeds: &[Tensor],
    val_idx: &[usize],
    rng: &mut impl Rng,
) -> Result<f64> {
    if val_idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for &idx in val_idx {
        let (h, mask) = cache.get(idx);
        let secret = Secret::sample(labeler.dims.d_s, rng);
        let token = bundle.embed_secret(&secret)?;
        let z = bundle.compress(Some(&token), h, mask)?;
        let pred = bundle.predict(&z)?;
        let target = labeler.label_from_embedding(&u_embeds[idx], &secret);
        total += pred.distance(&target);
    }
    Ok(total / val_idx.len() as f64)
}

pub fn labeler_id(labeler: &LabelingNetwork) -> String {
    format!("labeler-{:016x}-dy{}", labeler.seed, labeler.dims.d_y)
}

/// Trains the simple (set-of-words) proxy over (extractor, head).
pub fn train_simple_proxy(
    model: &StandInModel,
    seqs: &[TokenSequence],
    train_idx: &[usize],
    val_idx: &[usize],
    vocab: &SowVocab,
    cfg: &ProxyTrainConfig,
    seed: u64,
) -> Result<(ProxyBundle, ProxyTrainReport)> {
    let max_len = seqs.first().map(|s| s.len()).unwrap_or(0);
    let mut bundle = init_bundle(
        ProxyMode::Simple,
        &model.spec.name,
        model.spec.hidden_dim,
        vocab.len(),
        0,
        cfg,
        max_len,
        seed,
        None,
    );
    let mut report = ProxyTrainReport::default();
    if cfg.epochs == 0 {
        return Ok((bundle, report));
    }

    let cache = HiddenCache::build(model, seqs);
    report.cached_prompts = cache.len();
    let labels: Vec<Vec<f64>> = seqs.iter().map(|s| sow_label(s, vocab).values).collect();

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay, cfg.warmup_steps);
    let mut adam = AdamState::new(adam_cfg, &bundle_params(&bundle));
    let mut rng = substream(seed, "proxy-train-simple");

    for _epoch in 0..cfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let m = chunk.len() as f64;
            let mut grads = BundleGrads::zero(&bundle);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (h, mask) = cache.get(idx);
                let loss =
                    simple_example_pass(&bundle, h, mask, &labels[idx], 1.0 / m, Some(&mut grads))?;
                batch_loss += loss / m;
            }
            if !batch_loss.is_finite() {
                return Err(SvipError::Diverged(format!(
                    "simple proxy loss became non-finite at step {}",
                    report.steps
                )));
            }
            adam.apply(&mut bundle_params_mut(&mut bundle), &grads.flat());
            report.steps += 1;
            epoch_loss += batch_loss;
            batches += 1.0;
        }
        report.epoch_losses.push(epoch_loss / batches.max(1.0));
        report
            .val_metric
            .push(bit_accuracy(&bundle, &cache, &labels, val_idx)?);
    }
    Ok((bundle, report))
}

/// Fraction of label bits predicted correctly over a split.
pub fn bit_accuracy(
    bundle: &ProxyBundle,
    cache: &HiddenCache,
    labels: &[Vec<f64>],
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for &i in idx {
        let (h, mask) = cache.get(i);
        let z = bundle.compress(None, h, mask)?;
        let bits = bundle.predict_bits(&z)?;
        for (p, t) in bits.values.iter().zip(&labels[i]) {
            if (p - t).abs() < 0.5 {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, tokenize_and_pad};
    use crate::labeling::{sow_vocab_top_k, train_labeling_network, LabelerDims, LabelerTrainConfig};
    use crate::models::{ModelRole, ModelSpec};
    use crate::numerics::check_gradients;

    fn toy_model(seed: u64) -> StandInModel {
        StandInModel::instantiate(&ModelSpec {
            name: format!("toy-{seed}"),
            hidden_dim: 16,
            depth: 2,
            seed,
            family: "toy".into(),
            role: ModelRole::Specified,
        })
    }

    fn toy_seqs(n: usize) -> Vec<TokenSequence> {
        generate_corpus(n, 55)
            .iter()
            .map(|p| tokenize_and_pad(p, 12))
            .collect()
    }

    fn toy_labeler(seqs: &[TokenSequence]) -> LabelingNetwork {
        let idx: Vec<usize> = (0..seqs.len()).collect();
        let dims = LabelerDims {
            d_s: 8,
            d_u: 12,
            d_secret: 10,
            d_y: 6,
        };
        let cfg = LabelerTrainConfig {
            epochs: 1,
            batch_size: 16,
            ..Default::default()
        };
        train_labeling_network(seqs, &idx, dims, &cfg, 3).unwrap().0
    }

    fn small_cfg() -> ProxyTrainConfig {
        ProxyTrainConfig {
            epochs: 1,
            batch_size: 8,
            secrets_per_prompt: 1,
            d_g: 8,
            ..Default::default()
        }
    }

    #[test]
    fn secret_embedding_is_deterministic_and_sized() {
        let seqs = toy_seqs(12);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(1);
        let idx: Vec<usize> = (0..12).collect();
        let (bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &small_cfg(), 7).unwrap();
        let mut rng = substream(1, "s");
        let s = Secret::sample(8, &mut rng);
        let t1 = bundle.embed_secret(&s).unwrap();
        let t2 = bundle.embed_secret(&s).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.len(), 16);
    }

    #[test]
    fn simple_bundle_refuses_secret_embedding() {
        let seqs = toy_seqs(12);
        let model = toy_model(2);
        let vocab = sow_vocab_top_k(&seqs, 10);
        let idx: Vec<usize> = (0..12).collect();
        let (bundle, _) =
            train_simple_proxy(&model, &seqs, &idx, &[], &vocab, &small_cfg(), 7).unwrap();
        let mut rng = substream(2, "s");
        let s = Secret::sample(8, &mut rng);
        assert!(bundle.embed_secret(&s).is_err());
    }

    #[test]
    fn compression_mode_checks_and_determinism() {
        let seqs = toy_seqs(10);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(3);
        let idx: Vec<usize> = (0..10).collect();
        let (bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &small_cfg(), 9).unwrap();
        let h = model.hidden_states(&seqs[0]);
        let mut rng = substream(3, "s");
        let s = Secret::sample(8, &mut rng);
        let token = bundle.embed_secret(&s).unwrap();
        let z1 = bundle.compress(Some(&token), &h, &seqs[0].mask).unwrap();
        let z2 = bundle.compress(Some(&token), &h, &seqs[0].mask).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(z1.dim(), 8);
        assert!(bundle.compress(None, &h, &seqs[0].mask).is_err());
    }

    #[test]
    fn payload_is_about_4kb_at_dg_1024() {
        let z = CompressedVector {
            z: vec![0.0; 1024],
            query_id: None,
        };
        assert_eq!(z.wire_size_bytes(), 4096);
    }

    #[test]
    fn changing_secret_changes_compressed_vector() {
        let seqs = toy_seqs(16);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(4);
        let idx: Vec<usize> = (0..16).collect();
        let (bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &small_cfg(), 11).unwrap();
        let mut rng = substream(4, "s");
        let mut changed = 0;
        let trials = 50;
        for i in 0..trials {
            let seq = &seqs[i % seqs.len()];
            let h = model.hidden_states(seq);
            let s1 = Secret::sample(8, &mut rng);
            let s2 = loop {
                let c = Secret::sample(8, &mut rng);
                if c != s1 {
                    break c;
                }
            };
            let t1 = bundle.embed_secret(&s1).unwrap();
            let t2 = bundle.embed_secret(&s2).unwrap();
            let z1 = bundle.compress(Some(&t1), &h, &seq.mask).unwrap();
            let z2 = bundle.compress(Some(&t2), &h, &seq.mask).unwrap();
            let dz: f64 = z1
                .z
                .iter()
                .zip(&z2.z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dz > 0.0 {
                changed += 1;
            }
        }
        assert!(changed as f64 / trials as f64 >= 0.99, "{changed}/{trials}");
    }

    #[test]
    fn zero_epochs_returns_untrained_bundle() {
        let seqs = toy_seqs(8);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(5);
        let idx: Vec<usize> = (0..8).collect();
        let cfg = ProxyTrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (_, report) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &cfg, 13).unwrap();
        assert_eq!(report.steps, 0);
        assert_eq!(report.cached_prompts, 0);
    }

    #[test]
    fn hidden_cache_counts_one_entry_per_prompt() {
        let seqs = toy_seqs(9);
        let model = toy_model(6);
        let cache = HiddenCache::build(&model, &seqs);
        assert_eq!(cache.len(), 9);
        cache.get(0);
        cache.get(0);
        assert_eq!(cache.reads(), 2);
    }

    #[test]
    fn untrained_zeroed_head_predicts_its_bias() {
        let seqs = toy_seqs(8);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(7);
        let idx: Vec<usize> = (0..8).collect();
        let cfg = ProxyTrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (mut bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &cfg, 15).unwrap();
        for t in bundle.head.params_mut() {
            t.fill(0.0);
        }
        let h = model.hidden_states(&seqs[0]);
        let mut rng = substream(5, "s");
        let s = Secret::sample(8, &mut rng);
        let token = bundle.embed_secret(&s).unwrap();
        let z = bundle.compress(Some(&token), &h, &seqs[0].mask).unwrap();
        let pred = bundle.predict(&z).unwrap();
        assert!(pred.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_rejects_wrong_length() {
        let seqs = toy_seqs(8);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(8);
        let idx: Vec<usize> = (0..8).collect();
        let (bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &small_cfg(), 17).unwrap();
        let z = CompressedVector {
            z: vec![0.0; 5],
            query_id: None,
        };
        assert!(bundle.predict(&z).is_err());
    }

    #[test]
    fn secret_proxy_gradients_pass_finite_difference_check() {
        let seqs = toy_seqs(4);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(9);
        let idx: Vec<usize> = (0..4).collect();
        let cfg = ProxyTrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (mut bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &cfg, 19).unwrap();

        let h = model.hidden_states(&seqs[0]);
        let mask = seqs[0].mask.clone();
        let mut rng = substream(6, "fd");
        let s = Secret::sample(8, &mut rng);
        let secret_row = Tensor::from_vec(&[1, 8], s.as_f64()).unwrap();
        let target = labeler.label(&seqs[0], &s).values;

        let mut grads = BundleGrads::zero(&bundle);
        secret_example_pass(&bundle, &h, &mask, &secret_row, &target, 1.0, Some(&mut grads))
            .unwrap();
        let flat = grads.flat();

        let report = check_gradients(
            &mut bundle,
            &flat,
            bundle_params_mut,
            |b| secret_example_pass(b, &h, &mask, &secret_row, &target, 1.0, None).unwrap(),
            &mut rng,
            50,
        );
        assert!(report.passed(), "worst {:?}", report.worst);
    }

    #[test]
    fn training_reduces_validation_distance() {
        let seqs = toy_seqs(60);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(10);
        let train: Vec<usize> = (0..48).collect();
        let val: Vec<usize> = (48..60).collect();
        let cfg = ProxyTrainConfig {
            epochs: 6,
            batch_size: 16,
            secrets_per_prompt: 2,
            d_g: 8,
            lr: 1e-3,
            ..Default::default()
        };
        let (_, report) =
            train_secret_proxy(&model, &labeler, &seqs, &train, &val, &cfg, 21).unwrap();
        let first = report.val_metric.first().copied().unwrap();
        let last = report.val_metric.last().copied().unwrap();
        assert!(
            last < first,
            "validation distance should fall: {first} → {last}"
        );
        assert_eq!(report.cached_prompts, 60);
    }

    #[test]
    fn bundle_container_round_trip() {
        let seqs = toy_seqs(10);
        let labeler = toy_labeler(&seqs);
        let model = toy_model(11);
        let idx: Vec<usize> = (0..10).collect();
        let (bundle, _) =
            train_secret_proxy(&model, &labeler, &seqs, &idx, &[], &small_cfg(), 23).unwrap();
        let ps = bundle.to_parameter_set();
        let back = ProxyBundle::from_parameter_set(&ps).unwrap();
        assert_eq!(back.stack_id, bundle.stack_id);
        let h = model.hidden_states(&seqs[0]);
        let mut rng = substream(7, "s");
        let s = Secret::sample(8, &mut rng);
        let t = bundle.embed_secret(&s).unwrap();
        let t2 = back.embed_secret(&s).unwrap();
        assert_eq!(t, t2);
        let z1 = bundle.compress(Some(&t), &h, &seqs[0].mask).unwrap();
        let z2 = back.compress(Some(&t2), &h, &seqs[0].mask).unwrap();
        assert_eq!(z1, z2);
    }
}
