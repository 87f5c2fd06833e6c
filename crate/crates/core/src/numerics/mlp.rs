use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};

use super::activation::Activation;
use super::linear::Linear;
use super::tensor::Tensor;

/// Layer sizes and activations for a feed-forward network.
/// `dims` includes the input dimension, so a 3-layer MLP has 4 entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        MlpSpec {
            dims,
            hidden_activation: hidden,
            output_activation: output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("MlpSpec with no dims")
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Per-layer intermediates needed for the backward pass.
pub struct MlpCache {
    inputs: Vec<Tensor>,
    preacts: Vec<Tensor>,
    dropout_masks: Option<Vec<Tensor>>,
}

impl Mlp {
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        assert!(spec.dims.len() >= 2, "MLP needs at least one layer");
        let layers = spec
            .dims
            .windows(2)
            .map(|w| Linear::init(rng, w[0], w[1]))
            .collect();
        Mlp { spec, layers }
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(SvipError::shape(
                format!("mlp layer 0 (expects {} inputs)", self.in_dim()),
                self.in_dim(),
                x.cols(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = if i == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            h = layer.forward(&h).map(|v| act.apply(v));
        }
        Ok(h)
    }

    /// Forward pass that keeps intermediates. When `dropout` is set, a
    /// Bernoulli keep-mask scaled by 1/(1-rate) is applied to every hidden
    /// activation (training mode only; evaluation uses `forward`).
    pub fn forward_cached(
        &self,
        x: &Tensor,
        dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<(Tensor, MlpCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut masks: Option<Vec<Tensor>> = dropout.as_ref().map(|_| Vec::new());
        let (rate, mut rng) = match dropout {
            Some((r, rng)) => (r, Some(rng)),
            None => (0.0, None),
        };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let pre = layer.forward(&h);
            preacts.push(pre.clone());
            let act = if i == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            h = pre.map(|v| act.apply(v));
            if i != last {
                if let (Some(masks), Some(rng)) = (masks.as_mut(), rng.as_deref_mut()) {
                    let keep = 1.0 - rate;
                    let mut mask = Tensor::zeros(h.shape());
                    for m in mask.data_mut() {
                        let u: f64 = rand::Rng::gen(rng);
                        *m = if u < keep { 1.0 / keep } else { 0.0 };
                    }
                    for (v, m) in h.data_mut().iter_mut().zip(mask.data().iter()) {
                        *v *= m;
                    }
                    masks.push(mask);
                }
            }
        }
        Ok((
            h,
            MlpCache {
                inputs,
                preacts,
                dropout_masks: masks,
            },
        ))
    }

    /// Backpropagates `d_out`, accumulating into `grads` (layout from
    /// `zero_grads`) and returning the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Tensor, grads: &mut [Tensor]) -> Tensor {
        debug_assert_eq!(grads.len(), self.layers.len() * 2);
        let last = self.layers.len() - 1;
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let act = if i == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            if i != last {
                if let Some(masks) = &cache.dropout_masks {
                    for (dv, m) in d.data_mut().iter_mut().zip(masks[i].data().iter()) {
                        *dv *= m;
                    }
                }
            }
            let mut d_pre = d;
            for (dv, &p) in d_pre.data_mut().iter_mut().zip(cache.preacts[i].data()) {
                *dv *= act.derivative(p);
            }
            let (gw, gb) = {
                let (a, b) = grads.split_at_mut(2 * i + 1);
                (&mut a[2 * i], &mut b[0])
            };
            d = self.layers[i].backward(&cache.inputs[i], &d_pre, gw, gb);
        }
        d
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [Tensor::zeros(l.w.shape()), Tensor::zeros(l.b.shape())])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.layer{i}.w"), format!("{prefix}.layer{i}.b")])
            .collect()
    }
}
