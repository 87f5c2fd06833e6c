use rand::Rng;

use super::rng::xavier_uniform;
use super::tensor::Tensor;

/// Token-id lookup table (vocab, dim).
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn init(rng: &mut impl Rng, vocab: usize, dim: usize) -> Self {
        Embedding {
            table: Tensor::from_vec(&[vocab, dim], xavier_uniform(rng, dim, dim, vocab * dim))
                .expect("embedding init"),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn forward(&self, ids: &[u32]) -> Tensor {
        let d = self.dim();
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.table.row(id as usize));
        }
        out
    }

    pub fn backward(&self, ids: &[u32], d_out: &Tensor, g_table: &mut Tensor) {
        for (i, &id) in ids.iter().enumerate() {
            let g_row = g_table.row_mut(id as usize);
            for (g, &d) in g_row.iter_mut().zip(d_out.row(i)) {
                *g += d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::substream;

    #[test]
    fn lookup_and_gradient_accumulation() {
        let emb = Embedding::init(&mut substream(0, "emb"), 5, 3);
        let out = emb.forward(&[2, 2, 4]);
        assert_eq!(out.row(0), emb.table.row(2));
        assert_eq!(out.row(1), emb.table.row(2));
        let mut g = Tensor::zeros(&[5, 3]);
        let d = Tensor::matrix(3, 3, vec![1.0; 9]).unwrap();
        emb.backward(&[2, 2, 4], &d, &mut g);
        assert_eq!(g.row(2), &[2.0, 2.0, 2.0]);
        assert_eq!(g.row(4), &[1.0, 1.0, 1.0]);
        assert_eq!(g.row(0), &[0.0, 0.0, 0.0]);
    }
}
