//! Seeded stand-in language models that emit last-layer hidden states,
//! plus random-projection alignment between mismatched hidden widths.
//!
//! The stand-ins are frozen randomly initialized transformer encoders:
//! never trained, but input-dependent and seed-distinguishable, which is
//! all the proxy task needs to discriminate between them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Result, SvipError};
use crate::numerics::rng::{standard_normal, substream};
use crate::numerics::{Embedding, EncoderSpec, Tensor, TransformerEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Specified,
    Alternative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub hidden_dim: usize,
    pub depth: usize,
    pub seed: u64,
    pub family: String,
    pub role: ModelRole,
}

/// Last-layer representations h_M(x) of one tokenized prompt, (L, d_M).
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub values: Tensor,
    pub model: String,
}

impl HiddenStates {
    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

/// Frozen stand-in model: byte embedding plus a random-weight encoder.
#[derive(Debug, Clone)]
pub struct StandInModel {
    pub spec: ModelSpec,
    pub embedding: Embedding,
    pub encoder: TransformerEncoder,
}

impl StandInModel {
    pub fn instantiate(spec: &ModelSpec) -> Self {
        let mut rng = substream(spec.seed, "standin-init");
        let heads = pick_heads(spec.hidden_dim);
        let enc_spec = EncoderSpec::new(spec.hidden_dim, spec.depth, heads, 512);
        StandInModel {
            spec: spec.clone(),
            embedding: Embedding::init(&mut rng, crate::corpus::VOCAB_SIZE, spec.hidden_dim),
            encoder: TransformerEncoder::init(enc_spec, &mut rng),
        }
    }

    /// Deterministic per (spec, tokens); pad positions are masked out of
    /// attention but still produce output rows, mirroring a fixed-shape
    /// (T, d_M) return.
    pub fn hidden_states(&self, tokens: &TokenSequence) -> HiddenStates {
        let x = self.embedding.forward(&tokens.ids);
        let values = self
            .encoder
            .forward(&x, &tokens.mask)
            .expect("stand-in encoder accepts tokenized input");
        debug_assert!(values.is_finite(), "hidden states must stay finite");
        HiddenStates {
            values,
            model: self.spec.name.clone(),
        }
    }
}

fn pick_heads(dim: usize) -> usize {
    for h in [8, 4, 2] {
        if dim % h == 0 {
            return h;
        }
    }
    1
}

/// Random projection W ∈ R^{d_alt × d_spec} with standard-normal entries,
/// fixed once per (alternative, specified) pair.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    pub w: Tensor,
    pub seed: u64,
}

impl ProjectionMatrix {
    pub fn sample(d_alt: usize, d_spec: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "projection");
        let data = (0..d_alt * d_spec)
            .map(|_| standard_normal(&mut rng))
            .collect();
        ProjectionMatrix {
            w: Tensor::from_vec(&[d_alt, d_spec], data).expect("projection shape"),
            seed,
        }
    }

    /// Fixed per (alternative, specified) pair: the pair name scopes the
    /// seed, so re-deriving it always yields the same W.
    pub fn for_pair(
        alt_name: &str,
        spec_name: &str,
        d_alt: usize,
        d_spec: usize,
        master_seed: u64,
    ) -> Self {
        let mut rng = substream(master_seed, &format!("projection/{alt_name}->{spec_name}"));
        let seed: u64 = rng.gen();
        ProjectionMatrix::sample(d_alt, d_spec, seed)
    }
}

/// h·W per position, mapping (L, d_alt) onto the specified width.
pub fn align_dims(h: &HiddenStates, proj: &ProjectionMatrix) -> Result<HiddenStates> {
    if h.values.cols() != proj.w.rows() {
        return Err(SvipError::shape(
            "align_dims",
            format!("hidden width {}", proj.w.rows()),
            h.values.cols(),
        ));
    }
    Ok(HiddenStates {
        values: h.values.matmul(&proj.w),
        model: h.model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_and_pad, Prompt};

    fn spec_named(name: &str, dim: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            name: name.into(),
            hidden_dim: dim,
            depth: 2,
            seed,
            family: "toy".into(),
            role: ModelRole::Alternative,
        }
    }

    #[test]
    fn hidden_states_deterministic_and_shaped() {
        let model = StandInModel::instantiate(&spec_named("m", 16, 1));
        let seq = tokenize_and_pad(&Prompt::new("hello there", "t"), 12);
        let a = model.hidden_states(&seq);
        let b = model.hidden_states(&seq);
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.shape(), &[12, 16]);
    }

    #[test]
    fn different_seeds_give_different_representations() {
        let m1 = StandInModel::instantiate(&spec_named("m1", 16, 1));
        let m2 = StandInModel::instantiate(&spec_named("m2", 16, 2));
        let seq = tokenize_and_pad(&Prompt::new("same tokens either way", "t"), 16);
        let a = m1.hidden_states(&seq);
        let b = m2.hidden_states(&seq);
        let differing = a
            .values
            .data()
            .iter()
            .zip(b.values.data())
            .filter(|(x, y)| (**x - **y).abs() > 1e-6)
            .count();
        let frac = differing as f64 / a.values.len() as f64;
        assert!(frac >= 0.99, "only {frac} of entries differ");
    }

    #[test]
    fn reinstantiation_is_frozen() {
        let spec = spec_named("m", 16, 7);
        let m1 = StandInModel::instantiate(&spec);
        let m2 = StandInModel::instantiate(&spec);
        let seq = tokenize_and_pad(&Prompt::new("freeze", "t"), 8);
        assert_eq!(m1.hidden_states(&seq).values, m2.hidden_states(&seq).values);
    }

    #[test]
    fn hidden_states_depend_on_input() {
        let model = StandInModel::instantiate(&spec_named("m", 16, 3));
        let a = model.hidden_states(&tokenize_and_pad(&Prompt::new("first", "t"), 8));
        let b = model.hidden_states(&tokenize_and_pad(&Prompt::new("other", "t"), 8));
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn align_dims_is_linear() {
        let proj = ProjectionMatrix::sample(8, 12, 5);
        let zero = HiddenStates {
            values: Tensor::zeros(&[4, 8]),
            model: "z".into(),
        };
        let out = align_dims(&zero, &proj).unwrap();
        assert!(out.values.data().iter().all(|&v| v == 0.0));

        let mut rng = substream(6, "lin");
        let h = HiddenStates {
            values: Tensor::from_vec(&[3, 8], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap(),
            model: "h".into(),
        };
        let scaled = HiddenStates {
            values: h.values.map(|v| 2.5 * v),
            model: "h".into(),
        };
        let a = align_dims(&scaled, &proj).unwrap();
        let b = align_dims(&h, &proj).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - 2.5 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn align_dims_rejects_width_mismatch() {
        let proj = ProjectionMatrix::sample(8, 12, 5);
        let h = HiddenStates {
            values: Tensor::zeros(&[4, 9]),
            model: "bad".into(),
        };
        assert!(align_dims(&h, &proj).is_err());
    }

    #[test]
    fn projection_preserves_expected_norm_ratio() {
        // For unit-norm rows and standard-normal W, E||hW||^2 = d_spec.
        let d_alt = 8;
        let d_spec = 24;
        let mut rng = substream(9, "chi2");
        let mut total_ratio = 0.0;
        let trials = 1000;
        for t in 0..trials {
            let proj = ProjectionMatrix::sample(d_alt, d_spec, 1000 + t);
            let mut row: Vec<f64> = (0..d_alt).map(|_| standard_normal(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            let h = Tensor::from_vec(&[1, d_alt], row).unwrap();
            let out = h.matmul(&proj.w);
            total_ratio += out.data().iter().map(|v| v * v).sum::<f64>();
        }
        let mean = total_ratio / trials as f64;
        let rel = (mean - d_spec as f64).abs() / d_spec as f64;
        assert!(rel < 0.10, "mean squared norm {mean}, expected {d_spec}");
    }
}
