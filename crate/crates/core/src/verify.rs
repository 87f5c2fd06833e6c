//! Threshold calibration on honest-inference distances, the per-query
//! verification function, and empirical FNR/FPR evaluation with
//! distance-distribution export.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Secret, TokenSequence};
use crate::error::{Result, SvipError};
use crate::labeling::LabelingNetwork;
use crate::models::{align_dims, HiddenStates, ProjectionMatrix, StandInModel};
use crate::numerics::rng::{standard_normal, substream_indexed};
use crate::numerics::Tensor;
use crate::proxy::{labeler_id, CompressedVector, ProxyBundle};

pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Calibrated acceptance threshold: the stated percentile of the stored
/// honest-inference distances, recomputable from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Threshold {
    pub eta: f64,
    pub percentile: f64,
    pub calibration: Vec<f64>,
    pub stack_id: String,
}

impl Threshold {
    /// Re-derives the percentile from the stored calibration set; equal to
    /// `eta` by construction.
    pub fn recompute(&self) -> f64 {
        nearest_rank(&self.calibration, self.percentile)
    }
}

/// Nearest-rank percentile with upward tie-breaking: the smallest stored
/// value at or above rank ceil(p*n).
fn nearest_rank(values: &[f64], percentile: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = sorted.len();
    let rank = ((percentile * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn calibrate_threshold(
    distances: &[f64],
    percentile: f64,
    stack_id: impl Into<String>,
) -> Result<Threshold> {
    if distances.len() < MIN_CALIBRATION_SAMPLES {
        return Err(SvipError::InvalidArgument(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} distances, got {}",
            distances.len()
        )));
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(SvipError::InvalidArgument(format!(
            "percentile {percentile} outside [0, 1]"
        )));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(SvipError::InvalidArgument(
            "calibration distances must be finite and non-negative".into(),
        ));
    }
    Ok(Threshold {
        eta: nearest_rank(distances, percentile),
        percentile,
        calibration: distances.to_vec(),
        stack_id: stack_id.into(),
    })
}

/// Acceptance indicator: the boundary distance d == eta is accepted.
pub fn accepts(distance: f64, eta: f64) -> bool {
    distance <= eta
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub accepted: bool,
    pub distance: f64,
    pub query_id: Option<String>,
    pub secret_hex: String,
}

/// Computes d(x,s) = ||f(z) - y(x,s)||₂ and accepts iff d ≤ eta. The
/// bundle, labeler, and threshold must come from one training run.
pub fn verify_query(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    seq: &TokenSequence,
    secret: &Secret,
    z: &CompressedVector,
    threshold: &Threshold,
) -> Result<VerificationOutcome> {
    if threshold.stack_id != bundle.stack_id {
        return Err(SvipError::StackMismatch(format!(
            "threshold calibrated for {} but bundle is {}",
            threshold.stack_id, bundle.stack_id
        )));
    }
    if let Some(expected) = &bundle.labeler_id {
        let actual = labeler_id(labeler);
        if *expected != actual {
            return Err(SvipError::StackMismatch(format!(
                "bundle trained against {expected} but got {actual}"
            )));
        }
    }
    let pred = bundle.predict(z)?;
    let label = labeler.label(seq, secret);
    if pred.dim() != label.dim() {
        return Err(SvipError::shape("verification label", label.dim(), pred.dim()));
    }
    let distance = pred.distance(&label);
    Ok(VerificationOutcome {
        accepted: accepts(distance, threshold.eta),
        distance,
        query_id: z.query_id.clone(),
        secret_hex: secret.to_hex(),
    })
}

/// Provider behavior during evaluation.
pub enum ProviderScenario<'a> {
    Honest {
        model: &'a StandInModel,
    },
    /// Alternative model, with dimension alignment when widths differ.
    Substitute {
        model: &'a StandInModel,
        projection: Option<&'a ProjectionMatrix>,
    },
    /// Random hidden-state-shaped Gaussians, then the honest extractor.
    RandomHidden {
        d_spec: usize,
        seed: u64,
    },
}

impl ProviderScenario<'_> {
    pub fn name(&self) -> String {
        match self {
            ProviderScenario::Honest { model } => format!("honest:{}", model.spec.name),
            ProviderScenario::Substitute { model, .. } => {
                format!("substitute:{}", model.spec.name)
            }
            ProviderScenario::RandomHidden { .. } => "random".to_string(),
        }
    }

    fn hidden(&self, seq: &TokenSequence, query_index: u64) -> Result<HiddenStates> {
        match self {
            ProviderScenario::Honest { model } => Ok(model.hidden_states(seq)),
            ProviderScenario::Substitute { model, projection } => {
                let h = model.hidden_states(seq);
                match projection {
                    Some(p) => align_dims(&h, p),
                    None => Ok(h),
                }
            }
            ProviderScenario::RandomHidden { d_spec, seed } => {
                let mut rng: ChaCha12Rng = substream_indexed(*seed, "random-provider", query_index);
                let data = (0..seq.len() * d_spec)
                    .map(|_| standard_normal(&mut rng))
                    .collect();
                Ok(HiddenStates {
                    values: Tensor::from_vec(&[seq.len(), *d_spec], data)?,
                    model: "random".into(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize, max: f64) -> Self {
        let max = if max > 0.0 { max } else { 1.0 };
        let width = max / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let mut b = (v / width) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1;
        }
        let bin_edges = (0..=bins).map(|i| i as f64 * width).collect();
        Histogram { bin_edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub scenario: String,
    /// Fraction of queries accepted (1-FNR for honest, FPR otherwise).
    pub accept_rate: f64,
    pub median_distance: f64,
    /// AUC of the distance score separating this scenario from honest
    /// (honest lower); absent for the honest scenario itself.
    pub auc_vs_honest: Option<f64>,
    pub histogram: Histogram,
    #[serde(skip)]
    pub distances: Vec<f64>,
}

/// Per-query error-rate evaluation report for one specified model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec_model: String,
    pub eta: f64,
    pub secrets_per_prompt: usize,
    pub test_prompts: usize,
    pub fnr: f64,
    pub scenarios: Vec<ScenarioEval>,
}

impl EvalReport {
    pub fn fpr(&self, scenario: &str) -> Option<f64> {
        self.scenarios
            .iter()
            .find(|s| s.scenario == scenario)
            .filter(|s| !s.scenario.starts_with("honest"))
            .map(|s| s.accept_rate)
    }

    pub fn max_fpr(&self) -> f64 {
        self.scenarios
            .iter()
            .filter(|s| !s.scenario.starts_with("honest"))
            .map(|s| s.accept_rate)
            .fold(0.0, f64::max)
    }

    pub fn min_auc(&self) -> f64 {
        self.scenarios
            .iter()
            .filter_map(|s| s.auc_vs_honest)
            .fold(1.0, f64::min)
    }
}

/// P(honest distance < dishonest distance), ties at half weight: the
/// probability the distance score ranks an honest query below a
/// dishonest one.
pub fn roc_auc(honest: &[f64], dishonest: &[f64]) -> f64 {
    if honest.is_empty() || dishonest.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    let mut sorted_honest = honest.to_vec();
    sorted_honest.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &d in dishonest {
        // binary search: honest values strictly below d
        let below = sorted_honest.partition_point(|&h| h < d);
        let equal = sorted_honest[below..].iter().take_while(|&&h| h == d).count();
        wins += below as f64 + 0.5 * equal as f64;
    }
    wins / (honest.len() as f64 * dishonest.len() as f64)
}

/// Pairs every test prompt with fresh secrets and measures acceptance per
/// provider scenario. The first scenario must be the honest one; it
/// defines FNR and the AUC baseline.
pub fn empirical_fnr_fpr(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    threshold: &Threshold,
    seqs: &[TokenSequence],
    test_idx: &[usize],
    secrets_per_prompt: usize,
    scenarios: &[ProviderScenario<'_>],
    seed: u64,
    histogram_bins: usize,
) -> Result<EvalReport> {
    if scenarios.is_empty() || !matches!(scenarios[0], ProviderScenario::Honest { .. }) {
        return Err(SvipError::InvalidArgument(
            "scenario list must start with the honest provider".into(),
        ));
    }
    if threshold.stack_id != bundle.stack_id {
        return Err(SvipError::StackMismatch(format!(
            "threshold {} vs bundle {}",
            threshold.stack_id, bundle.stack_id
        )));
    }
    let d_s = labeler.dims.d_s;
    let mut rng = substream_indexed(seed, "eval-secrets", 0);
    let mut all_distances: Vec<Vec<f64>> = scenarios.iter().map(|_| Vec::new()).collect();

    let mut query_index = 0u64;
    for &idx in test_idx {
        let seq = &seqs[idx];
        let u = labeler.embed_text(seq);
        for _ in 0..secrets_per_prompt {
            let secret = Secret::sample(d_s, &mut rng);
            let token = bundle.embed_secret(&secret)?;
            let label = labeler.label_from_embedding(&u, &secret);
            for (si, scenario) in scenarios.iter().enumerate() {
                let h = scenario.hidden(seq, query_index)?;
                let z = bundle.compress(Some(&token), &h, &seq.mask)?;
                let pred = bundle.predict(&z)?;
                all_distances[si].push(pred.distance(&label));
            }
            query_index += 1;
        }
    }

    let honest = all_distances[0].clone();
    let fnr = honest.iter().filter(|&&d| !accepts(d, threshold.eta)).count() as f64
        / honest.len().max(1) as f64;

    let hist_max = all_distances
        .iter()
        .flat_map(|v| v.iter())
        .fold(threshold.eta, |m, &v| m.max(v));

    let mut evals = Vec::new();
    for (si, scenario) in scenarios.iter().enumerate() {
        let distances = std::mem::take(&mut all_distances[si]);
        let accept_rate = distances.iter().filter(|&&d| accepts(d, threshold.eta)).count() as f64
            / distances.len().max(1) as f64;
        let mut sorted = distances.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let auc = if si == 0 {
            None
        } else {
            Some(roc_auc(&honest, &distances))
        };
        evals.push(ScenarioEval {
            scenario: scenario.name(),
            accept_rate,
            median_distance: median,
            auc_vs_honest: auc,
            histogram: Histogram::build(&distances, histogram_bins, hist_max),
            distances,
        });
    }

    Ok(EvalReport {
        spec_model: bundle.spec_model.clone(),
        eta: threshold.eta,
        secrets_per_prompt,
        test_prompts: test_idx.len(),
        fnr,
        scenarios: evals,
    })
}

/// Distance histogram for a single scenario (plotting hook).
pub fn distance_distribution(
    bundle: &ProxyBundle,
    labeler: &LabelingNetwork,
    seqs: &[TokenSequence],
    test_idx: &[usize],
    scenario: &ProviderScenario<'_>,
    secrets_per_prompt: usize,
    seed: u64,
    bins: usize,
) -> Result<Histogram> {
    let d_s = labeler.dims.d_s;
    let mut rng: ChaCha12Rng = substream_indexed(seed, "dist-secrets", 1);
    let mut distances = Vec::new();
    let mut query_index = 0u64;
    for &idx in test_idx {
        let seq = &seqs[idx];
        let u = labeler.embed_text(seq);
        for _ in 0..secrets_per_prompt {
            let secret = Secret::sample(d_s, &mut rng);
            let token = bundle.embed_secret(&secret)?;
            let label = labeler.label_from_embedding(&u, &secret);
            let h = scenario.hidden(seq, query_index)?;
            let z = bundle.compress(Some(&token), &h, &seq.mask)?;
            let pred = bundle.predict(&z)?;
            distances.push(pred.distance(&label));
            query_index += 1;
        }
    }
    let max = distances.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(Histogram::build(&distances, bins, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let distances: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let t = calibrate_threshold(&distances, 0.95, "s").unwrap();
        assert_eq!(t.eta, 95.0);
        // Calibration-set FNR is at most 1 - percentile by construction.
        let fnr = distances.iter().filter(|&&d| !accepts(d, t.eta)).count() as f64 / 100.0;
        assert!(fnr <= 0.05 + 1e-12);
    }

    #[test]
    fn constant_distances_calibrate_to_the_constant() {
        let t = calibrate_threshold(&vec![2.5; 30], 0.95, "s").unwrap();
        assert_eq!(t.eta, 2.5);
    }

    #[test]
    fn recompute_reproduces_eta_exactly() {
        let distances: Vec<f64> = (0..50).map(|i| (i as f64 * 37.0) % 11.0).collect();
        let t = calibrate_threshold(&distances, 0.95, "s").unwrap();
        assert_eq!(t.recompute(), t.eta);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(calibrate_threshold(&[1.0; 10], 0.95, "s").is_err());
    }

    #[test]
    fn boundary_semantics_accept_at_eta() {
        assert!(accepts(1.0, 1.0));
        assert!(!accepts(1.0 + 1e-9, 1.0));
        assert!(accepts(0.0, 1.0));
    }

    #[test]
    fn auc_of_separated_distributions_is_one() {
        let honest = vec![0.1, 0.2, 0.3];
        let bad = vec![1.0, 2.0, 3.0];
        assert_eq!(roc_auc(&honest, &bad), 1.0);
        assert_eq!(roc_auc(&bad, &honest), 0.0);
        let same = vec![1.0, 1.0];
        assert!((roc_auc(&same, &same) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_equals_sample_count() {
        let values = vec![0.1, 0.4, 0.9, 1.5, 2.2, 2.2];
        let h = Histogram::build(&values, 8, 2.2);
        assert_eq!(h.total(), 6);
        assert_eq!(h.bin_edges.len(), 9);
        assert!(h.bin_edges[0] >= 0.0);
    }
}
