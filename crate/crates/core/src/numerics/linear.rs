use rand::Rng;

use super::rng::xavier_uniform;
use super::tensor::Tensor;

/// Affine layer y = x·Wᵀ + b with W stored as (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn init(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Self {
        let w = Tensor::from_vec(
            &[out_dim, in_dim],
            xavier_uniform(rng, in_dim, out_dim, in_dim * out_dim),
        )
        .expect("xavier init length");
        Linear {
            w,
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// x: (n, in) → (n, out).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = x.matmul_nt(&self.w);
        let b = self.b.data();
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.iter()) {
                *o += bv;
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        x: &Tensor,
        d_out: &Tensor,
        g_w: &mut Tensor,
        g_b: &mut Tensor,
    ) -> Tensor {
        g_w.axpy(1.0, &d_out.matmul_tn(x));
        for i in 0..d_out.rows() {
            for (g, &d) in g_b.data_mut().iter_mut().zip(d_out.row(i).iter()) {
                *g += d;
            }
        }
        d_out.matmul(&self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::substream;

    #[test]
    fn forward_matches_hand_arithmetic() {
        let layer = Linear {
            w: Tensor::matrix(2, 2, vec![0.5, -0.3, 0.2, 0.1]).unwrap(),
            b: Tensor::vector(vec![0.1, -0.2]),
        };
        let x = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let y = layer.forward(&x);
        assert!((y.data()[0] - 0.6).abs() < 1e-15);
        assert!((y.data()[1] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = substream(11, "linear-fd");
        let layer = Linear::init(&mut rng, 3, 2);
        let x = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7]).unwrap();
        // loss = 0.5 * ||forward(x)||^2 so d_out = forward(x)
        let out = layer.forward(&x);
        let mut gw = Tensor::zeros(layer.w.shape());
        let mut gb = Tensor::zeros(layer.b.shape());
        let dx = layer.backward(&x, &out, &mut gw, &mut gb);

        let loss = |l: &Linear, xs: &Tensor| -> f64 {
            l.forward(xs).data().iter().map(|v| 0.5 * v * v).sum()
        };
        let h = 1e-6;
        let mut pert = layer.clone();
        for idx in [0usize, 2, 5] {
            pert.w.data_mut()[idx] += h;
            let up = loss(&pert, &x);
            pert.w.data_mut()[idx] -= 2.0 * h;
            let down = loss(&pert, &x);
            pert.w.data_mut()[idx] += h;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gw.data()[idx]).abs() < 1e-6);
        }
        let mut xp = x.clone();
        for idx in [0usize, 4] {
            xp.data_mut()[idx] += h;
            let up = loss(&layer, &xp);
            xp.data_mut()[idx] -= 2.0 * h;
            let down = loss(&layer, &xp);
            xp.data_mut()[idx] += h;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx.data()[idx]).abs() < 1e-6);
        }
    }
}
