//! Linear layers and weight initialization.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};

/// Negative slope of every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully connected layer. Weights are stored `[in x out]` so that a batch
/// `[n x in]` maps by plain `x @ w + b`; fan-in is the row count.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Kaiming-uniform for leaky-ReLU trunks:
    /// `bound = gain * sqrt(3 / fan_in)` with
    /// `gain = sqrt(2 / (1 + slope^2))`. Biases start at zero.
    pub fn kaiming(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Linear {
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        Linear::uniform(fan_in, fan_out, bound, rng)
    }

    /// Xavier-uniform for heads and gates:
    /// `bound = sqrt(6 / (fan_in + fan_out))`. Biases start at zero.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear::uniform(fan_in, fan_out, bound, rng)
    }

    fn uniform(fan_in: usize, fan_out: usize, bound: f64, rng: &mut impl Rng) -> Linear {
        let mut w = Tensor::zeros(fan_in, fan_out);
        for v in w.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Linear {
            w,
            b: Tensor::zeros(1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    /// `x @ w + b` on raw tensors.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        use crate::autodiff::kernels;
        let xw = kernels::matmul(x, &self.w).expect("layer dimensions are fixed at init");
        kernels::add_row(&xw, &self.b).expect("bias spans out_dim")
    }

    /// `x @ w + b` on the tape, given this layer's bound nodes.
    pub fn apply_graph(
        &self,
        g: &mut Graph,
        w: NodeId,
        b: NodeId,
        x: NodeId,
    ) -> crate::error::Result<NodeId> {
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = Linear::kaiming(50, 30, &mut rng);
        let gain = (2.0_f64 / (1.0 + 0.0001)).sqrt();
        let kb = gain * (3.0_f64 / 50.0).sqrt();
        assert!(k.w.data().iter().all(|v| v.abs() < kb));
        assert!(k.b.data().iter().all(|&v| v == 0.0));

        let x = Linear::xavier(50, 30, &mut rng);
        let xb = (6.0_f64 / 80.0).sqrt();
        assert!(x.w.data().iter().all(|v| v.abs() < xb));
        // With 1500 draws the empirical max should come close to the bound;
        // a much smaller max would mean the wrong fan or gain.
        let wmax = x.w.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(wmax > 0.9 * xb, "max |w| = {wmax}, bound {xb}");
    }

    #[test]
    fn apply_matches_manual_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Linear::xavier(2, 2, &mut rng);
        layer.w = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        layer.b = Tensor::from_vec(1, 2, vec![10.0, 20.0]).unwrap();
        let x = Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let y = layer.apply(&x);
        assert_eq!(y.data(), &[14.0, 26.0]);
    }

    #[test]
    fn same_rng_state_reproduces_weights() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let la = Linear::kaiming(7, 5, &mut a);
        let lb = Linear::kaiming(7, 5, &mut b);
        assert_eq!(la.w.data(), lb.w.data());
    }
}
