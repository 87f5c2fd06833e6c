//! Three-party session simulation: the platform's secret ledger with
//! rotation and retraining triggers, provider strategies (honest and
//! adversarial), per-query verification, and the batch verdict.
//!
//! Transport is in-process message passing: the user sends a
//! `QueryRequest`, the provider answers with a `QueryResponse`, the
//! platform only distributes task tokens. The transcript schema carries no
//! transport details, so the roles could be moved behind sockets without
//! changing it.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{Secret, TokenSequence};
use crate::decision::{batch_decide, BatchVerdict};
use crate::error::{Result, SvipError};
use crate::models::{align_dims, ModelSpec, ProjectionMatrix, StandInModel};
use crate::numerics::rng::{standard_normal, substream_indexed};
use crate::numerics::{Mlp, ParameterSet, Tensor};
use crate::proxy::CompressedVector;
use crate::verify::verify_query;

use super::pipeline::TrainedStack;

/// One activated secret: the user-held bits, the provider-held token, and
/// usage accounting.
#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub secret: Secret,
    pub token: Tensor,
    pub activated_at: u64,
    pub queries: u64,
}

/// Platform-side ledger: at most one active secret, per-secret query cap
/// M*, total-secret cap N*, and a rate limit on activations.
#[derive(Debug, Clone)]
pub struct SecretLedger {
    entries: Vec<LedgerEntry>,
    pub m_star: u64,
    pub n_star: usize,
    pub min_interval: u64,
}

impl SecretLedger {
    pub fn new(m_star: u64, n_star: usize, min_interval: u64, secret: Secret, token: Tensor) -> Self {
        SecretLedger {
            entries: vec![LedgerEntry {
                secret,
                token,
                activated_at: 0,
                queries: 0,
            }],
            m_star,
            n_star,
            min_interval,
        }
    }

    pub fn active(&self) -> &LedgerEntry {
        self.entries.last().expect("ledger always has one active secret")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record_query(&mut self) -> Result<()> {
        let m_star = self.m_star;
        let e = self.entries.last_mut().expect("active secret");
        if e.queries >= m_star {
            return Err(SvipError::InvalidArgument(
                "active secret exhausted its query budget without rotation".into(),
            ));
        }
        e.queries += 1;
        Ok(())
    }

    pub fn rotation_due(&self) -> bool {
        self.active().queries >= self.m_star
    }

    /// Activates the next secret. Rejected when attempted before the rate
    /// limit allows it.
    pub fn rotate(&mut self, now: u64, secret: Secret, token: Tensor) -> Result<()> {
        let last = self.active();
        if now < last.activated_at + self.min_interval {
            return Err(SvipError::InvalidArgument(format!(
                "rotation at {now} violates the rate limit ({} + {})",
                last.activated_at, self.min_interval
            )));
        }
        self.entries.push(LedgerEntry {
            secret,
            token,
            activated_at: now,
            queries: 0,
        });
        Ok(())
    }

    /// True exactly when the generation's secret budget is used up.
    pub fn retrain_due(&self) -> bool {
        self.entries.len() >= self.n_star
    }
}

/// Per-query compute units: quadratic in hidden width, linear in depth
/// and sequence length. Only relative magnitudes matter (the cheating
/// incentive is the gap between specified and alternative costs).
pub fn model_cost_units(spec: &ModelSpec, t: usize) -> u64 {
    (spec.hidden_dim * spec.hidden_dim * spec.depth * t) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StrategyKind {
    /// Runs the specified model and compresses honestly.
    Honest,
    /// Runs a smaller roster model (with dimension alignment) instead.
    Substitute { model: String },
    /// Emits random hidden-state-shaped Gaussians, then compresses.
    Random,
    /// Replays the honest response of the first query for every later one.
    ReplayCache,
    /// Substitute plus a trained adapter artifact.
    Adapter { model: String, artifact: String },
}

impl StrategyKind {
    pub fn name(&self) -> String {
        match self {
            StrategyKind::Honest => "honest".into(),
            StrategyKind::Substitute { model } => format!("substitute:{model}"),
            StrategyKind::Random => "random".into(),
            StrategyKind::ReplayCache => "replay-cache".into(),
            StrategyKind::Adapter { model, .. } => format!("adapter:{model}"),
        }
    }
}

pub struct QueryRequest {
    pub query_id: String,
    pub seq: TokenSequence,
}

pub struct QueryResponse {
    /// Text completion is out of scope; providers return a placeholder.
    pub completion: String,
    pub z: CompressedVector,
    pub latency: Duration,
    pub cost_units: u64,
}

/// Provider-side simulation. Holds only what the platform distributes
/// (the extractor and the current task token) plus whatever models the
/// provider itself owns.
pub struct ProviderSim<'a> {
    pub kind: StrategyKind,
    extractor: &'a crate::proxy::Extractor,
    token: Tensor,
    spec_model: &'a StandInModel,
    alt: Option<(&'a StandInModel, Option<&'a ProjectionMatrix>)>,
    adapter: Option<&'a Mlp>,
    rng: ChaCha12Rng,
    replay: Option<CompressedVector>,
    t: usize,
}

impl<'a> ProviderSim<'a> {
    pub fn new(
        kind: StrategyKind,
        extractor: &'a crate::proxy::Extractor,
        token: Tensor,
        spec_model: &'a StandInModel,
        alt: Option<(&'a StandInModel, Option<&'a ProjectionMatrix>)>,
        adapter: Option<&'a Mlp>,
        t: usize,
        seed: u64,
    ) -> Self {
        ProviderSim {
            kind,
            extractor,
            token,
            spec_model,
            alt,
            adapter,
            rng: substream_indexed(seed, "provider", 0),
            replay: None,
            t,
        }
    }

    /// Platform-side token distribution on rotation.
    pub fn receive_token(&mut self, token: Tensor) {
        self.token = token;
        // a cached response under the old token is worthless
        self.replay = None;
    }

    pub fn current_token(&self) -> &Tensor {
        &self.token
    }

    pub fn respond(&mut self, req: &QueryRequest) -> Result<QueryResponse> {
        let start = Instant::now();
        let (z, cost) = match &self.kind {
            StrategyKind::Honest => {
                let h = self.spec_model.hidden_states(&req.seq);
                let z = self.extractor.compress(Some(&self.token), &h, &req.seq.mask)?;
                (z, model_cost_units(&self.spec_model.spec, self.t))
            }
            StrategyKind::Substitute { .. } => {
                let (alt, proj) = self.alt.ok_or_else(|| {
                    SvipError::InvalidArgument("substitute strategy without an alt model".into())
                })?;
                let mut h = alt.hidden_states(&req.seq);
                if let Some(p) = proj {
                    h = align_dims(&h, p)?;
                }
                let z = self.extractor.compress(Some(&self.token), &h, &req.seq.mask)?;
                (z, model_cost_units(&alt.spec, self.t))
            }
            StrategyKind::Random => {
                let d = self.extractor.d_spec();
                let data = (0..req.seq.len() * d)
                    .map(|_| standard_normal(&mut self.rng))
                    .collect();
                let h = crate::models::HiddenStates {
                    values: Tensor::from_vec(&[req.seq.len(), d], data)?,
                    model: "random".into(),
                };
                let z = self.extractor.compress(Some(&self.token), &h, &req.seq.mask)?;
                (z, 0)
            }
            StrategyKind::ReplayCache => {
                match &self.replay {
                    Some(z) => (z.clone(), 0),
                    None => {
                        // one honest query to seed the cache
                        let h = self.spec_model.hidden_states(&req.seq);
                        let z =
                            self.extractor.compress(Some(&self.token), &h, &req.seq.mask)?;
                        self.replay = Some(z.clone());
                        (z, model_cost_units(&self.spec_model.spec, self.t))
                    }
                }
            }
            StrategyKind::Adapter { .. } => {
                let (alt, proj) = self.alt.ok_or_else(|| {
                    SvipError::InvalidArgument("adapter strategy without an alt model".into())
                })?;
                let adapter = self.adapter.ok_or_else(|| {
                    SvipError::InvalidArgument("adapter strategy without an artifact".into())
                })?;
                let mut h = alt.hidden_states(&req.seq);
                if let Some(p) = proj {
                    h = align_dims(&h, p)?;
                }
                let mapped = crate::models::HiddenStates {
                    values: adapter.forward(&h.values)?,
                    model: format!("{}+adapter", alt.spec.name),
                };
                let z = self
                    .extractor
                    .compress(Some(&self.token), &mapped, &req.seq.mask)?;
                (z, model_cost_units(&alt.spec, self.t))
            }
        };
        Ok(QueryResponse {
            completion: format!("[completion for {}]", req.query_id),
            z: z.with_query_id(req.query_id.clone()),
            latency: start.elapsed(),
            cost_units: cost,
        })
    }

    /// Everything the provider could persist to disk. The trust-boundary
    /// check scans these names for user/platform-side artifacts.
    pub fn persistable_state(&self) -> ParameterSet {
        let mut named: Vec<(String, Tensor)> = self
            .extractor
            .param_names("extractor")
            .into_iter()
            .zip(self.extractor.params().into_iter().cloned())
            .collect();
        named.push(("task_token".into(), self.token.clone()));
        ParameterSet::new(
            "provider-state",
            serde_json::json!({ "strategy": self.kind.name() }),
            named,
        )
        .expect("provider state names unique")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub prompt_idx: usize,
    pub secret_hex: String,
    pub distance: f64,
    pub accepted: bool,
    pub provider_cost_units: u64,
    #[serde(skip)]
    pub provider_latency: Duration,
    #[serde(skip)]
    pub verify_latency: Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub strategy: String,
    pub spec_model: String,
    pub seed: u64,
    pub records: Vec<QueryRecord>,
    pub verdict: BatchVerdict,
    /// Query indices at which a new secret was activated.
    pub rotations: Vec<u64>,
    pub retrain_flagged: bool,
    pub total_provider_cost: u64,
}

impl SessionTranscript {
    pub fn mean_provider_latency(&self) -> Duration {
        let total: Duration = self.records.iter().map(|r| r.provider_latency).sum();
        total / self.records.len().max(1) as u32
    }

    pub fn mean_verify_latency(&self) -> Duration {
        let total: Duration = self.records.iter().map(|r| r.verify_latency).sum();
        total / self.records.len().max(1) as u32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSettings {
    pub queries: usize,
    pub tau: f64,
    pub seed: u64,
    pub strategy: StrategyKind,
}

/// Runs one session against the given specified model's trained stack:
/// the user draws prompts, the provider responds per its strategy, every
/// response is verified, the ledger rotates secrets at M* and flags
/// retraining at N*, and the session ends with a batch verdict.
pub fn run_session(
    cfg: &ExperimentConfig,
    stack: &TrainedStack,
    spec_idx: usize,
    settings: &SessionSettings,
    adapter: Option<&Mlp>,
) -> Result<SessionTranscript> {
    let spec_stack = stack
        .specs
        .get(spec_idx)
        .ok_or_else(|| SvipError::InvalidArgument(format!("no trained stack #{spec_idx}")))?;
    let bundle = &spec_stack.bundle;
    let model = &stack.roster.specified[spec_idx];

    let alt = match &settings.strategy {
        StrategyKind::Substitute { model: name } | StrategyKind::Adapter { model: name, .. } => {
            let ai = stack
                .roster
                .alternatives
                .iter()
                .position(|m| &m.spec.name == name)
                .ok_or_else(|| {
                    SvipError::Config(format!("strategy references unknown model {name}"))
                })?;
            Some((
                &stack.roster.alternatives[ai],
                stack.projection(ai, spec_idx),
            ))
        }
        _ => None,
    };
    if matches!(settings.strategy, StrategyKind::Adapter { .. }) && adapter.is_none() {
        return Err(SvipError::InvalidArgument(
            "adapter strategy requires a trained adapter artifact".into(),
        ));
    }

    let mut secret_rng = substream_indexed(settings.seed, "session-secrets", 0);
    let mut prompt_rng = substream_indexed(settings.seed, "session-prompts", 0);

    let first_secret = Secret::sample(cfg.dims.d_s, &mut secret_rng);
    let first_token = bundle.embed_secret(&first_secret)?;
    let mut ledger = SecretLedger::new(
        cfg.update.m_star,
        cfg.update.n_star,
        cfg.update.min_rotation_interval,
        first_secret,
        first_token.clone(),
    );

    let mut provider = ProviderSim::new(
        settings.strategy.clone(),
        &bundle.extractor,
        first_token,
        model,
        alt,
        adapter,
        cfg.dims.t,
        settings.seed,
    );

    let test_pool = &stack.corpus.split.test;
    let mut records = Vec::with_capacity(settings.queries);
    let mut outcomes = Vec::with_capacity(settings.queries);
    let mut rotations = Vec::new();
    let mut retrain_flagged = false;
    let mut total_cost = 0u64;

    for q in 0..settings.queries as u64 {
        let prompt_idx = test_pool[prompt_rng.gen_range(0..test_pool.len())];
        let seq = stack.corpus.seqs[prompt_idx].clone();
        let query_id = format!("q{q:06}");
        let secret = ledger.active().secret.clone();

        let req = QueryRequest {
            query_id: query_id.clone(),
            seq,
        };
        let resp = provider.respond(&req)?;
        total_cost += resp.cost_units;

        let verify_start = Instant::now();
        let outcome = verify_query(
            bundle,
            &stack.labeler,
            &stack.corpus.seqs[prompt_idx],
            &secret,
            &resp.z,
            &spec_stack.threshold,
        )?;
        let verify_latency = verify_start.elapsed();

        ledger.record_query()?;
        outcomes.push(outcome.accepted);
        records.push(QueryRecord {
            query_id,
            prompt_idx,
            secret_hex: outcome.secret_hex,
            distance: outcome.distance,
            accepted: outcome.accepted,
            provider_cost_units: resp.cost_units,
            provider_latency: resp.latency,
            verify_latency,
        });

        if ledger.rotation_due() {
            if ledger.retrain_due() {
                retrain_flagged = true;
            } else {
                let next = Secret::sample(cfg.dims.d_s, &mut secret_rng);
                let token = bundle.embed_secret(&next)?;
                ledger.rotate(q + 1, next, token.clone())?;
                provider.receive_token(token);
                rotations.push(q + 1);
            }
        }
    }
    if ledger.retrain_due() {
        retrain_flagged = true;
    }

    let verdict = batch_decide(&outcomes, settings.tau)?;
    Ok(SessionTranscript {
        strategy: settings.strategy.name(),
        spec_model: model.spec.name.clone(),
        seed: settings.seed,
        records,
        verdict,
        rotations,
        retrain_flagged,
        total_provider_cost: total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_ledger() -> SecretLedger {
        let mut rng = crate::numerics::rng::substream(0, "ledger");
        let s = Secret::sample(8, &mut rng);
        SecretLedger::new(3, 4, 2, s, Tensor::vector(vec![0.0; 4]))
    }

    #[test]
    fn rotation_boundary_at_m_star() {
        let mut ledger = dummy_ledger();
        ledger.record_query().unwrap();
        ledger.record_query().unwrap();
        assert!(!ledger.rotation_due());
        ledger.record_query().unwrap();
        assert!(ledger.rotation_due());
        // budget is exhausted until rotation happens
        assert!(ledger.record_query().is_err());
    }

    #[test]
    fn rotation_rate_limit_enforced() {
        let mut ledger = dummy_ledger();
        let mut rng = crate::numerics::rng::substream(1, "ledger");
        let s2 = Secret::sample(8, &mut rng);
        let s3 = Secret::sample(8, &mut rng);
        ledger.rotate(2, s2, Tensor::vector(vec![0.0; 4])).unwrap();
        // second rotation inside the 2-query window is rejected
        let err = ledger.rotate(3, s3, Tensor::vector(vec![0.0; 4])).unwrap_err();
        assert!(err.to_string().contains("rate limit"));
        assert_eq!(ledger.len(), 2);
    }

    #[test]
    fn retrain_trigger_at_n_star() {
        let mut ledger = dummy_ledger();
        let mut rng = crate::numerics::rng::substream(2, "ledger");
        for k in 0..3u64 {
            assert!(!ledger.retrain_due());
            let s = Secret::sample(8, &mut rng);
            ledger
                .rotate(2 * (k + 1), s, Tensor::vector(vec![0.0; 4]))
                .unwrap();
        }
        assert_eq!(ledger.len(), 4);
        assert!(ledger.retrain_due());
    }

    #[test]
    fn cost_model_favors_the_substitute() {
        let spec = ModelSpec {
            name: "big".into(),
            hidden_dim: 64,
            depth: 3,
            seed: 0,
            family: "toy".into(),
            role: crate::models::ModelRole::Specified,
        };
        let alt = ModelSpec {
            name: "small".into(),
            hidden_dim: 32,
            depth: 2,
            seed: 0,
            family: "toy".into(),
            role: crate::models::ModelRole::Alternative,
        };
        assert!(model_cost_units(&alt, 16) < model_cost_units(&spec, 16));
    }
}
