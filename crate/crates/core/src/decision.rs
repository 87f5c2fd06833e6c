//! Batch-level decision theory: normal-approximation hypothesis testing
//! over per-query verification bits, and EM inference for providers that
//! switch models only occasionally.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};
use crate::numerics::special::std_normal_cdf;

/// Type-I/II error rates of the batch-level test at the given operating
/// point. Derived under the normal approximation to the Bernoulli mean,
/// valid for B ≳ 30.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorRates {
    pub alpha: f64,
    pub beta: f64,
    pub p0: f64,
    pub p1: f64,
    pub batch_size: usize,
    pub tau: f64,
}

/// alpha = Phi((tau - p1) / sqrt(p1(1-p1)/B)),
/// beta  = Phi(-(tau - p0) / sqrt(p0(1-p0)/B)).
///
/// beta is evaluated through the lower tail (never as 1 - Phi), so values
/// like 1e-199 keep full relative accuracy.
pub fn error_rates(p0: f64, p1: f64, batch_size: usize, tau: f64) -> Result<ErrorRates> {
    if !(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0) {
        return Err(SvipError::InvalidArgument(
            "p0 and p1 must lie strictly inside (0, 1): the variance degenerates at the endpoints"
                .into(),
        ));
    }
    if p0 >= p1 {
        return Err(SvipError::InvalidArgument(format!(
            "expected p0 < p1, got p0={p0}, p1={p1}"
        )));
    }
    if batch_size < 30 {
        return Err(SvipError::InvalidArgument(format!(
            "normal approximation needs B >= 30, got {batch_size}"
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SvipError::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let b = batch_size as f64;
    let sd1 = (p1 * (1.0 - p1) / b).sqrt();
    let sd0 = (p0 * (1.0 - p0) / b).sqrt();
    let alpha = std_normal_cdf((tau - p1) / sd1);
    let beta = std_normal_cdf(-(tau - p0) / sd0);
    Ok(ErrorRates {
        alpha,
        beta,
        p0,
        p1,
        batch_size,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Honest,
    Dishonest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub mean_outcome: f64,
    pub tau: f64,
    pub decision: Verdict,
    pub batch_size: usize,
}

/// Rejects honesty iff the mean outcome falls strictly below tau.
pub fn batch_decide(outcomes: &[bool], tau: f64) -> Result<BatchVerdict> {
    if outcomes.is_empty() {
        return Err(SvipError::InvalidArgument("empty outcome list".into()));
    }
    let mean = outcomes.iter().filter(|&&v| v).count() as f64 / outcomes.len() as f64;
    let decision = if mean < tau {
        Verdict::Dishonest
    } else {
        Verdict::Honest
    };
    Ok(BatchVerdict {
        mean_outcome: mean,
        tau,
        decision,
        batch_size: outcomes.len(),
    })
}

/// EM state for the occasional-switching model: latent Z_i picks between
/// Bernoulli(p1) (specified model) and Bernoulli(p0) (alternative), with
/// mixing weight pi.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EMState {
    pub p1: f64,
    pub p0: f64,
    pub pi: f64,
    pub responsibilities: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Roles were swapped after convergence to restore p1 >= p0.
    pub label_swapped: bool,
}

fn em_log_likelihood(outcomes: &[bool], p1: f64, p0: f64, pi: f64) -> f64 {
    outcomes
        .iter()
        .map(|&v| {
            let (l1, l0) = if v { (p1, p0) } else { (1.0 - p1, 1.0 - p0) };
            (pi * l1 + (1.0 - pi) * l0).max(1e-300).ln()
        })
        .sum()
}

/// Alternates the posterior-responsibility and parameter-update steps
/// until the parameter change drops below `tol` or `max_iter` is hit.
pub fn em_infer(
    outcomes: &[bool],
    init: (f64, f64, f64),
    max_iter: usize,
    tol: f64,
) -> Result<EMState> {
    let (mut p1, mut p0, mut pi) = init;
    if outcomes.is_empty() {
        return Err(SvipError::InvalidArgument("empty outcome list".into()));
    }
    for (name, v) in [("p1", p1), ("p0", p0), ("pi", pi)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(SvipError::InvalidArgument(format!(
                "EM init {name}={v} must lie strictly inside (0, 1)"
            )));
        }
    }
    let all_same = outcomes.iter().all(|&v| v == outcomes[0]);
    if all_same && (p1 - p0).abs() < 1e-12 {
        return Err(SvipError::NonIdentifiable(
            "all outcomes identical and the initialization is symmetric: the two mixture roles \
             cannot be distinguished (label-swap ambiguity)"
                .into(),
        ));
    }

    let b = outcomes.len() as f64;
    let mut ll_trace = vec![em_log_likelihood(outcomes, p1, p0, pi)];
    let mut gammas = vec![0.0; outcomes.len()];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        iterations += 1;
        // E-step: responsibility that query i used the specified model.
        for (g, &v) in gammas.iter_mut().zip(outcomes) {
            let (l1, l0) = if v { (p1, p0) } else { (1.0 - p1, 1.0 - p0) };
            let num = pi * l1;
            let den = num + (1.0 - pi) * l0;
            *g = if den > 0.0 { num / den } else { 0.5 };
        }
        // M-step.
        let sum_g: f64 = gammas.iter().sum();
        let sum_gv: f64 = gammas
            .iter()
            .zip(outcomes)
            .map(|(g, &v)| if v { *g } else { 0.0 })
            .sum();
        let sum_c = b - sum_g;
        let sum_cv: f64 = gammas
            .iter()
            .zip(outcomes)
            .map(|(g, &v)| if v { 1.0 - *g } else { 0.0 })
            .sum();

        let new_p1 = if sum_g > 1e-12 { sum_gv / sum_g } else { p1 };
        let new_p0 = if sum_c > 1e-12 { sum_cv / sum_c } else { p0 };
        let new_pi = sum_g / b;

        // Degenerate estimates (exactly 0 or 1) freeze the likelihood at a
        // boundary; clamp just inside to keep the next E-step defined.
        let clamp = |v: f64| v.clamp(1e-9, 1.0 - 1e-9);
        let (new_p1, new_p0, new_pi) = (clamp(new_p1), clamp(new_p0), clamp(new_pi));

        let delta = (new_p1 - p1)
            .abs()
            .max((new_p0 - p0).abs())
            .max((new_pi - pi).abs());
        p1 = new_p1;
        p0 = new_p0;
        pi = new_pi;
        ll_trace.push(em_log_likelihood(outcomes, p1, p0, pi));
        if delta < tol {
            converged = true;
            break;
        }
    }

    // The mixture is symmetric under (p1, p0, pi) -> (p0, p1, 1-pi);
    // restore the convention p1 >= p0.
    let mut label_swapped = false;
    if p1 < p0 {
        std::mem::swap(&mut p1, &mut p0);
        pi = 1.0 - pi;
        for g in gammas.iter_mut() {
            *g = 1.0 - *g;
        }
        label_swapped = true;
    }

    Ok(EMState {
        p1,
        p0,
        pi,
        responsibilities: gammas,
        iterations,
        log_likelihood: ll_trace,
        converged,
        label_swapped,
    })
}

impl EMState {
    /// Checks the per-iteration monotonicity of the observed-data
    /// log-likelihood (up to tiny numerical slack).
    pub fn log_likelihood_nondecreasing(&self, slack: f64) -> bool {
        self.log_likelihood
            .windows(2)
            .all(|w| w[1] >= w[0] - slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_operating_point_reproduced() {
        // alpha reference frozen from 60-digit evaluation: 1.7039e-49;
        // beta is ~8.1e-199.
        let r = error_rates(0.0081, 0.9687, 30, 0.5).unwrap();
        let target = 1.7039222071074343e-49;
        assert!(
            r.alpha > target / 2.0 && r.alpha < target * 2.0,
            "alpha {}",
            r.alpha
        );
        assert!(r.beta < 1e-100, "beta {}", r.beta);
    }

    #[test]
    fn symmetric_point_matches_high_precision_oracle() {
        // Frozen oracle: alpha = beta = 5.1491327559342076e-95 at
        // (0.05, 0.95, 100, 0.5).
        let r = error_rates(0.05, 0.95, 100, 0.5).unwrap();
        let want = 5.1491327559342076e-95;
        assert!((r.alpha - want).abs() / want < 1e-10, "alpha {}", r.alpha);
        assert!((r.beta - want).abs() / want < 1e-10, "beta {}", r.beta);
    }

    #[test]
    fn tau_at_p1_gives_alpha_half() {
        let r = error_rates(0.05, 0.95, 50, 0.95).unwrap();
        assert!((r.alpha - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_probabilities_rejected() {
        assert!(error_rates(0.0, 0.9, 30, 0.5).is_err());
        assert!(error_rates(0.1, 1.0, 30, 0.5).is_err());
        assert!(error_rates(0.1, 0.9, 10, 0.5).is_err());
    }

    #[test]
    fn error_rates_monotone_in_batch_size() {
        let mut last_alpha = f64::INFINITY;
        let mut last_beta = f64::INFINITY;
        for b in [30, 60, 120, 240, 480] {
            let r = error_rates(0.05, 0.95, b, 0.5).unwrap();
            assert!(r.alpha <= last_alpha, "alpha rose at B={b}");
            assert!(r.beta <= last_beta, "beta rose at B={b}");
            last_alpha = r.alpha;
            last_beta = r.beta;
        }
    }

    #[test]
    fn batch_decide_boundary_is_honest() {
        let all_pass = vec![true; 10];
        assert_eq!(batch_decide(&all_pass, 0.5).unwrap().decision, Verdict::Honest);
        let all_fail = vec![false; 10];
        assert_eq!(
            batch_decide(&all_fail, 0.5).unwrap().decision,
            Verdict::Dishonest
        );
        // Exactly at tau: the rejection region is strict, so honest.
        let half: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert_eq!(batch_decide(&half, 0.5).unwrap().decision, Verdict::Honest);
        assert!(batch_decide(&[], 0.5).is_err());
    }

    #[test]
    fn em_posterior_dominated_by_all_ones() {
        let outcomes = vec![true; 40];
        let state = em_infer(&outcomes, (0.999, 0.001, 0.5), 200, 1e-8).unwrap();
        assert!(state.responsibilities.iter().all(|&g| g > 0.99));
        assert!(state.pi > 0.99, "pi {}", state.pi);
        assert!(state.log_likelihood_nondecreasing(1e-9));
    }

    #[test]
    fn em_fixed_point_property() {
        let outcomes: Vec<bool> = (0..100).map(|i| i % 10 != 0).collect();
        let state = em_infer(&outcomes, (0.9, 0.1, 0.6), 500, 1e-10).unwrap();
        assert!(state.converged);
        let again = em_infer(&outcomes, (state.p1, state.p0, state.pi), 500, 1e-10).unwrap();
        assert!((again.p1 - state.p1).abs() < 1e-6);
        assert!((again.p0 - state.p0).abs() < 1e-6);
        assert!((again.pi - state.pi).abs() < 1e-6);
    }

    #[test]
    fn em_flags_non_identifiable_symmetric_init() {
        let outcomes = vec![true; 20];
        let err = em_infer(&outcomes, (0.5, 0.5, 0.5), 100, 1e-8).unwrap_err();
        assert!(matches!(err, SvipError::NonIdentifiable(_)), "{err}");
    }

    #[test]
    fn em_recovers_synthetic_switching_rate() {
        // With one bit per query the mixture is identified only along the
        // ridge pi*p1+(1-pi)*p0 = q, so the component rates are anchored at
        // the protocol's calibrated per-query TPR/FPR and EM infers pi.
        use rand::Rng;
        let mut rng = crate::numerics::rng::substream(99, "em-synth");
        let (p1, p0, pi) = (0.95, 0.02, 0.7);
        let mut errs = Vec::new();
        for _ in 0..20 {
            let outcomes: Vec<bool> = (0..1000)
                .map(|_| {
                    let honest = rng.gen::<f64>() < pi;
                    let p = if honest { p1 } else { p0 };
                    rng.gen::<f64>() < p
                })
                .collect();
            let state = em_infer(&outcomes, (p1, p0, 0.5), 500, 1e-8).unwrap();
            assert!(state.log_likelihood_nondecreasing(1e-9));
            errs.push((state.pi - pi).abs());
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[errs.len() / 2];
        assert!(median <= 0.05, "median |pi error| {median}");
    }

    #[test]
    fn em_label_swap_restores_convention() {
        let mut rng = crate::numerics::rng::substream(7, "em-swap");
        use rand::Rng;
        let outcomes: Vec<bool> = (0..500)
            .map(|_| {
                let honest = rng.gen::<f64>() < 0.6;
                let p = if honest { 0.9 } else { 0.1 };
                rng.gen::<f64>() < p
            })
            .collect();
        // deliberately swapped init
        let state = em_infer(&outcomes, (0.1, 0.9, 0.4), 500, 1e-8).unwrap();
        assert!(state.p1 >= state.p0, "p1 {} p0 {}", state.p1, state.p0);
    }
}
