use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};

use super::activation::Activation;
use super::linear::Linear;
use super::tensor::Tensor;

const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    /// Add sinusoidal positional encodings before the first block.
    pub positional: bool,
}

impl EncoderSpec {
    pub fn new(width: usize, depth: usize, heads: usize, max_len: usize) -> Self {
        assert!(width % heads == 0, "width must divide into heads");
        EncoderSpec {
            width,
            depth,
            heads,
            ff_hidden: 2 * width,
            max_len,
            positional: true,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    fn init(width: usize) -> Self {
        LayerNorm {
            gamma: Tensor::from_vec(&[width], vec![1.0; width]).unwrap(),
            beta: Tensor::zeros(&[width]),
        }
    }

    fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let (n, d) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(&[n, d]);
        let mut normalized = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let n_row = normalized.row_mut(i);
            let o_row = out.row_mut(i);
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                n_row[j] = xh;
                o_row[j] = xh * self.gamma.data()[j] + self.beta.data()[j];
            }
        }
        (out, LayerNormCache { normalized, inv_std })
    }

    fn backward(
        &self,
        cache: &LayerNormCache,
        d_out: &Tensor,
        g_gamma: &mut Tensor,
        g_beta: &mut Tensor,
    ) -> Tensor {
        let (n, d) = (d_out.rows(), d_out.cols());
        let mut dx = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let dy = d_out.row(i);
            let xh = cache.normalized.row(i);
            for j in 0..d {
                g_gamma.data_mut()[j] += dy[j] * xh[j];
                g_beta.data_mut()[j] += dy[j];
            }
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            let gamma = self.gamma.data();
            for j in 0..d {
                let dxh = dy[j] * gamma[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[j];
            }
            let inv_d = 1.0 / d as f64;
            let is = cache.inv_std[i];
            let dx_row = dx.row_mut(i);
            for j in 0..d {
                let dxh = dy[j] * gamma[j];
                dx_row[j] = is * (dxh - inv_d * sum_dxh - xh[j] * inv_d * sum_dxh_xh);
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

impl Block {
    fn init(rng: &mut impl Rng, spec: &EncoderSpec) -> Self {
        let d = spec.width;
        Block {
            wq: Linear::init(rng, d, d),
            wk: Linear::init(rng, d, d),
            wv: Linear::init(rng, d, d),
            wo: Linear::init(rng, d, d),
            ln1: LayerNorm::init(d),
            ff1: Linear::init(rng, d, spec.ff_hidden),
            ff2: Linear::init(rng, spec.ff_hidden, d),
            ln2: LayerNorm::init(d),
        }
    }
}

struct BlockCache {
    input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax weights, one L×L matrix per head.
    attn: Vec<Tensor>,
    context: Tensor,
    residual1: LayerNormCache,
    normed1: Tensor,
    ff_pre: Tensor,
    ff_mid: Tensor,
    residual2: LayerNormCache,
}

pub struct EncoderCache {
    blocks: Vec<BlockCache>,
}

impl EncoderCache {
    /// Attention weights for a given block and head (test/diagnostic hook).
    pub fn attention_weights(&self, block: usize, head: usize) -> &Tensor {
        &self.blocks[block].attn[head]
    }
}

/// Multi-block transformer encoder over row-major (L, width) inputs with
/// optional key masking. Pad positions are excluded as attention keys; a
/// fully masked sequence falls back to uniform attention so the output
/// stays finite.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub spec: EncoderSpec,
    blocks: Vec<Block>,
}

impl TransformerEncoder {
    pub fn init(spec: EncoderSpec, rng: &mut impl Rng) -> Self {
        let blocks = (0..spec.depth).map(|_| Block::init(rng, &spec)).collect();
        TransformerEncoder { spec, blocks }
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.spec.width {
            return Err(SvipError::shape(
                "encoder input",
                format!("(L, {})", self.spec.width),
                format!("{:?}", x.shape()),
            ));
        }
        if x.rows() == 0 {
            return Err(SvipError::InvalidArgument("encoder input with L=0".into()));
        }
        if x.rows() > self.spec.max_len {
            return Err(SvipError::InvalidArgument(format!(
                "sequence length {} exceeds configured maximum {}",
                x.rows(),
                self.spec.max_len
            )));
        }
        Ok(())
    }

    fn positional_encoding(&self, len: usize) -> Tensor {
        let d = self.spec.width;
        let mut pe = Tensor::zeros(&[len, d]);
        for pos in 0..len {
            let row = pe.row_mut(pos);
            for j in 0..d {
                let exponent = (2 * (j / 2)) as f64 / d as f64;
                let angle = pos as f64 / 10000f64.powf(exponent);
                row[j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        pe
    }

    pub fn forward(&self, x: &Tensor, key_allowed: &[bool]) -> Result<Tensor> {
        self.forward_cached(x, key_allowed).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        key_allowed: &[bool],
    ) -> Result<(Tensor, EncoderCache)> {
        self.check_input(x)?;
        let len = x.rows();
        assert_eq!(key_allowed.len(), len, "key mask length");
        // A sequence with no usable keys would make softmax degenerate.
        let any_key = key_allowed.iter().any(|&k| k);
        let effective_mask: Vec<bool> = if any_key {
            key_allowed.to_vec()
        } else {
            vec![true; len]
        };

        let mut h = x.clone();
        if self.spec.positional {
            h.axpy(1.0, &self.positional_encoding(len));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = self.block_forward(block, &h, &effective_mask);
            caches.push(cache);
            h = next;
        }
        Ok((h, EncoderCache { blocks: caches }))
    }

    fn block_forward(&self, block: &Block, x: &Tensor, mask: &[bool]) -> (Tensor, BlockCache) {
        let (len, d) = (x.rows(), x.cols());
        let heads = self.spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = block.wq.forward(x);
        let k = block.wk.forward(x);
        let v = block.wv.forward(x);

        let mut context = Tensor::zeros(&[len, d]);
        let mut attn = Vec::with_capacity(heads);
        for hix in 0..heads {
            let off = hix * dh;
            let mut weights = Tensor::zeros(&[len, len]);
            for i in 0..len {
                let qi = &q.row(i)[off..off + dh];
                let row = weights.row_mut(i);
                let mut max_s = f64::NEG_INFINITY;
                for j in 0..len {
                    let s = if mask[j] {
                        let kj = &k.row(j)[off..off + dh];
                        scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>()
                    } else {
                        MASKED_SCORE
                    };
                    row[j] = s;
                    max_s = max_s.max(s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max_s).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
            }
            for i in 0..len {
                let w_row = weights.row(i);
                for j in 0..len {
                    let w = w_row[j];
                    if w == 0.0 {
                        continue;
                    }
                    let vj = &v.row(j)[off..off + dh];
                    let ctx = &mut context.row_mut(i)[off..off + dh];
                    for (c, &vv) in ctx.iter_mut().zip(vj) {
                        *c += w * vv;
                    }
                }
            }
            attn.push(weights);
        }

        let attn_out = block.wo.forward(&context);
        let r1 = x.add(&attn_out);
        let (normed1, residual1) = block.ln1.forward(&r1);
        let ff_pre = block.ff1.forward(&normed1);
        let ff_mid = ff_pre.map(|v| Activation::Gelu.apply(v));
        let ff_out = block.ff2.forward(&ff_mid);
        let r2 = normed1.add(&ff_out);
        let (out, residual2) = block.ln2.forward(&r2);

        (
            out,
            BlockCache {
                input: x.clone(),
                q,
                k,
                v,
                attn,
                context,
                residual1,
                normed1,
                ff_pre,
                ff_mid,
                residual2,
            },
        )
    }

    /// Gradient layout: 16 tensors per block, in `param_names` order.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flat_map(|b| {
                vec![
                    &b.wq.w, &b.wq.b, &b.wk.w, &b.wk.b, &b.wv.w, &b.wv.b, &b.wo.w, &b.wo.b,
                    &b.ln1.gamma, &b.ln1.beta, &b.ff1.w, &b.ff1.b, &b.ff2.w, &b.ff2.b,
                    &b.ln2.gamma, &b.ln2.beta,
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                vec![
                    &mut b.wq.w, &mut b.wq.b, &mut b.wk.w, &mut b.wk.b, &mut b.wv.w, &mut b.wv.b,
                    &mut b.wo.w, &mut b.wo.b, &mut b.ln1.gamma, &mut b.ln1.beta, &mut b.ff1.w,
                    &mut b.ff1.b, &mut b.ff2.w, &mut b.ff2.b, &mut b.ln2.gamma, &mut b.ln2.beta,
                ]
            })
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let fields = [
            "wq.w", "wq.b", "wk.w", "wk.b", "wv.w", "wv.b", "wo.w", "wo.b", "ln1.g", "ln1.b",
            "ff1.w", "ff1.b", "ff2.w", "ff2.b", "ln2.g", "ln2.b",
        ];
        (0..self.blocks.len())
            .flat_map(|i| fields.iter().map(move |f| format!("{prefix}.block{i}.{f}")))
            .collect()
    }

    /// Backpropagates through every block; accumulates into `grads`
    /// (layout from `zero_grads`) and returns the input gradient.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Tensor, grads: &mut [Tensor]) -> Tensor {
        debug_assert_eq!(grads.len(), self.blocks.len() * 16);
        let mut d = d_out.clone();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let g = &mut grads[bi * 16..(bi + 1) * 16];
            d = self.block_backward(block, &cache.blocks[bi], &d, g);
        }
        // Positional encodings are additive constants: d_input is unchanged.
        d
    }

    fn block_backward(
        &self,
        block: &Block,
        cache: &BlockCache,
        d_out: &Tensor,
        g: &mut [Tensor],
    ) -> Tensor {
        let (len, d) = (cache.input.rows(), cache.input.cols());
        let heads = self.spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // LN2
        let (g_ln2g, g_ln2b) = {
            let (a, b) = g.split_at_mut(15);
            (&mut a[14], &mut b[0])
        };
        let d_r2 = block.ln2.backward(&cache.residual2, d_out, g_ln2g, g_ln2b);

        // FF branch: r2 = normed1 + ff2(gelu(ff1(normed1)))
        let mut d_ff_mid = {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(13);
                (&mut a[12], &mut b[0])
            };
            block.ff2.backward(&cache.ff_mid, &d_r2, gw, gb)
        };
        for (dv, &p) in d_ff_mid.data_mut().iter_mut().zip(cache.ff_pre.data()) {
            *dv *= Activation::Gelu.derivative(p);
        }
        let d_normed1_ff = {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(11);
                (&mut a[10], &mut b[0])
            };
            block.ff1.backward(&cache.normed1, &d_ff_mid, gw, gb)
        };
        let d_normed1 = d_r2.add(&d_normed1_ff);

        // LN1
        let (g_ln1g, g_ln1b) = {
            let (a, b) = g.split_at_mut(9);
            (&mut a[8], &mut b[0])
        };
        let d_r1 = block.ln1.backward(&cache.residual1, &d_normed1, g_ln1g, g_ln1b);

        // Attention branch: r1 = x + wo(context)
        let d_context = {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(7);
                (&mut a[6], &mut b[0])
            };
            block.wo.backward(&cache.context, &d_r1, gw, gb)
        };

        let mut d_q = Tensor::zeros(&[len, d]);
        let mut d_k = Tensor::zeros(&[len, d]);
        let mut d_v = Tensor::zeros(&[len, d]);
        for hix in 0..heads {
            let off = hix * dh;
            let weights = &cache.attn[hix];
            // d_v and dA from context gradient
            let mut d_a = Tensor::zeros(&[len, len]);
            for i in 0..len {
                let dctx = &d_context.row(i)[off..off + dh];
                let w_row = weights.row(i);
                let da_row = d_a.row_mut(i);
                for j in 0..len {
                    let vj = &cache.v.row(j)[off..off + dh];
                    da_row[j] = dctx.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let w = w_row[j];
                    if w != 0.0 {
                        let dvj = &mut d_v.row_mut(j)[off..off + dh];
                        for (dv, &dc) in dvj.iter_mut().zip(dctx) {
                            *dv += w * dc;
                        }
                    }
                }
            }
            // softmax backward, then scores → q, k
            for i in 0..len {
                let w_row = weights.row(i);
                let da_row = d_a.row(i);
                let dot: f64 = w_row.iter().zip(da_row).map(|(w, da)| w * da).sum();
                let qi: Vec<f64> = cache.q.row(i)[off..off + dh].to_vec();
                for j in 0..len {
                    let ds = w_row[j] * (da_row[j] - dot);
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[off..off + dh];
                    let dqi = &mut d_q.row_mut(i)[off..off + dh];
                    for (dq, &kv) in dqi.iter_mut().zip(kj) {
                        *dq += ds * scale * kv;
                    }
                    let dkj = &mut d_k.row_mut(j)[off..off + dh];
                    for (dk, &qv) in dkj.iter_mut().zip(qi.iter()) {
                        *dk += ds * scale * qv;
                    }
                }
            }
        }

        let mut d_x = d_r1.clone();
        {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(1);
                (&mut a[0], &mut b[0])
            };
            d_x.axpy(1.0, &block.wq.backward(&cache.input, &d_q, gw, gb));
        }
        {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(3);
                (&mut a[2], &mut b[0])
            };
            d_x.axpy(1.0, &block.wk.backward(&cache.input, &d_k, gw, gb));
        }
        {
            let (gw, gb) = {
                let (a, b) = g.split_at_mut(5);
                (&mut a[4], &mut b[0])
            };
            d_x.axpy(1.0, &block.wv.backward(&cache.input, &d_v, gw, gb));
        }
        d_x
    }
}

/// Mean over the rows of `x` whose mask entry is true; returns a (1, d)
/// tensor. Falls back to all rows when nothing is included.
pub fn masked_mean(x: &Tensor, include: &[bool]) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    debug_assert_eq!(include.len(), n);
    let count = include.iter().filter(|&&b| b).count();
    let mut out = Tensor::zeros(&[1, d]);
    let (rows, denom): (Vec<usize>, f64) = if count == 0 {
        ((0..n).collect(), n as f64)
    } else {
        (
            (0..n).filter(|&i| include[i]).collect(),
            count as f64,
        )
    };
    for i in rows {
        let row = x.row(i);
        for (o, &v) in out.row_mut(0).iter_mut().zip(row) {
            *o += v;
        }
    }
    out.scale(1.0 / denom);
    out
}

/// Distributes a pooled gradient back over the included rows.
pub fn masked_mean_backward(d_pooled: &Tensor, include: &[bool]) -> Tensor {
    let n = include.len();
    let d = d_pooled.cols();
    let count = include.iter().filter(|&&b| b).count();
    let mut out = Tensor::zeros(&[n, d]);
    let (rows, denom): (Vec<usize>, f64) = if count == 0 {
        ((0..n).collect(), n as f64)
    } else {
        ((0..n).filter(|&i| include[i]).collect(), count as f64)
    };
    for i in rows {
        let row = out.row_mut(i);
        for (o, &g) in row.iter_mut().zip(d_pooled.row(0)) {
            *o = g / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::substream;

    fn small_encoder(seed: u64) -> TransformerEncoder {
        let spec = EncoderSpec::new(8, 2, 2, 32);
        TransformerEncoder::init(spec, &mut substream(seed, "enc"))
    }

    fn random_input(rng: &mut impl Rng, l: usize, d: usize) -> Tensor {
        Tensor::from_vec(
            &[l, d],
            (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let enc = small_encoder(1);
        let mut rng = substream(2, "x");
        let x = random_input(&mut rng, 5, 8);
        let mask = [true, true, true, false, false];
        let (_, cache) = enc.forward_cached(&x, &mask).unwrap();
        for b in 0..2 {
            for h in 0..2 {
                let w = cache.attention_weights(b, h);
                for i in 0..5 {
                    let s: f64 = w.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                    // masked keys receive zero weight
                    assert!(w.row(i)[3].abs() < 1e-12 && w.row(i)[4].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_position_attention_is_identity_weight() {
        let enc = small_encoder(3);
        let mut rng = substream(4, "x");
        let x = random_input(&mut rng, 1, 8);
        let (_, cache) = enc.forward_cached(&x, &[true]).unwrap();
        let w = cache.attention_weights(0, 0);
        assert_eq!(w.shape(), &[1, 1]);
        assert!((w.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_statistics() {
        let ln = LayerNorm::init(16);
        let mut rng = substream(5, "x");
        let x = random_input(&mut rng, 3, 16);
        let (y, _) = ln.forward(&x);
        for i in 0..3 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn permuting_positions_changes_output() {
        let enc = small_encoder(6);
        let mut rng = substream(7, "x");
        let x = random_input(&mut rng, 4, 8);
        let mut permuted = Tensor::zeros(&[4, 8]);
        for (dst, src) in [(0usize, 2usize), (1, 0), (2, 3), (3, 1)] {
            permuted.row_mut(dst).copy_from_slice(x.row(src));
        }
        let mask = [true; 4];
        let y1 = enc.forward(&x, &mask).unwrap();
        let y2 = enc.forward(&permuted, &mask).unwrap();
        let diff: f64 = y1
            .data()
            .iter()
            .zip(y2.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3, "positional encodings should break symmetry");
    }

    #[test]
    fn rejects_overlong_sequences() {
        let enc = small_encoder(8);
        let x = Tensor::zeros(&[40, 8]);
        assert!(enc.forward(&x, &vec![true; 40]).is_err());
    }

    #[test]
    fn deterministic_forward() {
        let enc = small_encoder(9);
        let mut rng = substream(10, "x");
        let x = random_input(&mut rng, 6, 8);
        let mask = vec![true; 6];
        let y1 = enc.forward(&x, &mask).unwrap();
        let y2 = enc.forward(&x, &mask).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn fully_masked_input_stays_finite() {
        let enc = small_encoder(11);
        let x = Tensor::zeros(&[3, 8]);
        let y = enc.forward(&x, &[false, false, false]).unwrap();
        assert!(y.is_finite());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = small_encoder(12);
        let mut rng = substream(13, "x");
        let x = random_input(&mut rng, 4, 8);
        let mask = vec![true, true, true, false];
        let target = random_input(&mut rng, 4, 8);

        let loss_of = |e: &TransformerEncoder, xs: &Tensor| -> f64 {
            let out = e.forward(xs, &mask).unwrap();
            out.sub(&target).data().iter().map(|v| v * v).sum()
        };

        let (out, cache) = enc.forward_cached(&x, &mask).unwrap();
        let d_out = out.sub(&target).map(|v| 2.0 * v);
        let mut grads = enc.zero_grads();
        let d_in = enc.backward(&cache, &d_out, &mut grads);

        let mut enc = enc;
        let h = 1e-5;
        // sample a few coordinates from each parameter kind
        let picks: Vec<(usize, usize)> = (0..32)
            .map(|t| {
                let pi = rng.gen_range(0..32);
                let n = enc.params()[pi].len();
                (pi, t % n.max(1))
            })
            .collect();
        for (pi, ci) in picks {
            {
                let mut ps = enc.params_mut();
                ps[pi].data_mut()[ci] += h;
            }
            let up = loss_of(&enc, &x);
            {
                let mut ps = enc.params_mut();
                ps[pi].data_mut()[ci] -= 2.0 * h;
            }
            let down = loss_of(&enc, &x);
            {
                let mut ps = enc.params_mut();
                ps[pi].data_mut()[ci] += h;
            }
            let fd = (up - down) / (2.0 * h);
            let an = grads[pi].data()[ci];
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-3,
                "param {pi} coord {ci}: fd {fd} analytic {an}"
            );
        }
        // input gradient
        let mut xp = x.clone();
        for ci in [0usize, 9, 17, 30] {
            xp.data_mut()[ci] += h;
            let up = loss_of(&enc, &xp);
            xp.data_mut()[ci] -= 2.0 * h;
            let down = loss_of(&enc, &xp);
            xp.data_mut()[ci] += h;
            let fd = (up - down) / (2.0 * h);
            let an = d_in.data()[ci];
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-3,
                "input coord {ci}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn masked_mean_and_backward_are_consistent() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 100.0, 200.0]).unwrap();
        let m = masked_mean(&x, &[true, true, false]);
        assert_eq!(m.data(), &[2.0, 3.0]);
        let d = masked_mean_backward(&Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(), &[true, true, false]);
        assert_eq!(d.data(), &[0.5, 0.5, 0.5, 0.5, 0.0, 0.0]);
    }
}
