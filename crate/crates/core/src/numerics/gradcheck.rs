//! Central finite-difference checking for manually derived gradients.
//!
//! Every trainable architecture in the repo is validated against this
//! oracle; the backward passes are only trusted because these checks pass.

use rand::Rng;

use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= FD_REL_TOL
    }
}

/// Compares `analytic` gradients against central finite differences of
/// `loss` on `n_coords` randomly sampled coordinates. `with_params` must
/// expose the same tensors, in the same order, that `analytic` was
/// accumulated over.
pub fn check_gradients<S>(
    state: &mut S,
    analytic: &[Tensor],
    mut with_params: impl FnMut(&mut S) -> Vec<&mut Tensor>,
    mut loss: impl FnMut(&S) -> f64,
    rng: &mut impl Rng,
    n_coords: usize,
) -> GradCheckReport {
    let sizes: Vec<usize> = analytic.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    assert!(total > 0, "no parameters to check");

    let mut max_rel = 0.0f64;
    let mut worst = None;
    for _ in 0..n_coords {
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let ci = flat;

        {
            let mut ps = with_params(state);
            ps[pi].data_mut()[ci] += FD_STEP;
        }
        let up = loss(state);
        {
            let mut ps = with_params(state);
            ps[pi].data_mut()[ci] -= 2.0 * FD_STEP;
        }
        let down = loss(state);
        {
            let mut ps = with_params(state);
            ps[pi].data_mut()[ci] += FD_STEP;
        }

        let fd = (up - down) / (2.0 * FD_STEP);
        let an = analytic[pi].data()[ci];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
            worst = Some((pi, ci, fd, an));
        }
    }
    GradCheckReport {
        coords_checked: n_coords,
        max_rel_err: max_rel,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::substream;

    #[test]
    fn quadratic_gradient_equals_parameter() {
        // loss = 0.5 ||p||^2 → gradient is p itself, exactly.
        struct S {
            p: Tensor,
        }
        let mut s = S {
            p: Tensor::vector(vec![0.3, -1.2, 4.0]),
        };
        let analytic = vec![s.p.clone()];
        let mut rng = substream(0, "gc");
        let report = check_gradients(
            &mut s,
            &analytic,
            |s| vec![&mut s.p],
            |s| 0.5 * s.p.dot(&s.p),
            &mut rng,
            30,
        );
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        struct S {
            p: Tensor,
        }
        let mut s = S {
            p: Tensor::vector(vec![0.0, 0.0]),
        };
        let analytic = vec![Tensor::zeros(&[2])];
        let mut rng = substream(1, "gc");
        let report = check_gradients(
            &mut s,
            &analytic,
            |s| vec![&mut s.p],
            |s| 0.5 * s.p.dot(&s.p),
            &mut rng,
            10,
        );
        assert!(report.passed());
    }
}
