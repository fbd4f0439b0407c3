//! Variational encoder-decoder with a diagonal Gaussian latent.

use rand::Rng;

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

use super::layers::{Linear, LEAKY_SLOPE};
use super::{ForwardOut, LatentNodes, LAYER_NORM_EPS};

/// Shared leaky-ReLU trunk into two linear heads (`mu`, `log_sigma`),
/// mirrored decoder from the latent back to the output window.
#[derive(Debug)]
pub struct VaeNet {
    enc: Vec<Linear>,
    mu: Linear,
    log_sigma: Linear,
    dec: Vec<Linear>,
    layer_norm: bool,
}

impl VaeNet {
    /// Draw order matches [`param_names`](Self::param_names): trunk, `mu`
    /// head, `log_sigma` head, decoder stack. Trunk layers are Kaiming,
    /// both heads and the final decoder layer Xavier.
    pub fn init(
        in_dim: usize,
        hidden: &[usize],
        latent_size: usize,
        out_dim: usize,
        layer_norm: bool,
        rng: &mut impl Rng,
    ) -> VaeNet {
        let mut enc = Vec::with_capacity(hidden.len());
        let mut prev = in_dim;
        for &h in hidden {
            enc.push(Linear::kaiming(prev, h, rng));
            prev = h;
        }
        let mu = Linear::xavier(prev, latent_size, rng);
        let log_sigma = Linear::xavier(prev, latent_size, rng);

        let mut dec = Vec::with_capacity(hidden.len() + 1);
        let mut prev = latent_size;
        for &h in hidden.iter().rev() {
            dec.push(Linear::kaiming(prev, h, rng));
            prev = h;
        }
        dec.push(Linear::xavier(prev, out_dim, rng));
        VaeNet {
            enc,
            mu,
            log_sigma,
            dec,
            layer_norm,
        }
    }

    pub fn latent_size(&self) -> usize {
        self.mu.out_dim()
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.enc {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.mu.w);
        out.push(&self.mu.b);
        out.push(&self.log_sigma.w);
        out.push(&self.log_sigma.b);
        for l in &self.dec {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.enc {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.mu.w);
        out.push(&mut self.mu.b);
        out.push(&mut self.log_sigma.w);
        out.push(&mut self.log_sigma.b);
        for l in &mut self.dec {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.enc.len() {
            out.push(format!("enc.{i}.w"));
            out.push(format!("enc.{i}.b"));
        }
        out.push("mu.w".to_string());
        out.push("mu.b".to_string());
        out.push("log_sigma.w".to_string());
        out.push("log_sigma.b".to_string());
        for i in 0..self.dec.len() {
            out.push(format!("dec.{i}.w"));
            out.push(format!("dec.{i}.b"));
        }
        out
    }

    fn trunk(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &self.enc {
            h = kernels::leaky_relu(&l.apply(&h), LEAKY_SLOPE);
        }
        if self.layer_norm {
            h = kernels::layer_norm(&h, LAYER_NORM_EPS);
        }
        h
    }

    /// `(mu, log_sigma)`, one row per input row.
    pub fn encode(&self, x: &Tensor) -> (Tensor, Tensor) {
        let h = self.trunk(x);
        (self.mu.apply(&h), self.log_sigma.apply(&h))
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        let mut h = z.clone();
        for l in &self.dec[..self.dec.len() - 1] {
            h = kernels::leaky_relu(&l.apply(&h), LEAKY_SLOPE);
        }
        self.dec[self.dec.len() - 1].apply(&h)
    }

    /// Mean path: `decode(mu(x))`.
    pub fn predict_mean(&self, x: &Tensor) -> Tensor {
        self.decode(&self.encode(x).0)
    }

    /// Sampled path: `decode(mu + exp(log_sigma) * eps)`.
    pub fn predict_sampled(&self, x: &Tensor, eps: &Tensor) -> Tensor {
        let (mu, log_sigma) = self.encode(x);
        let sigma = kernels::exp(&log_sigma);
        let z = kernels::add(&mu, &kernels::mul(&sigma, eps).expect("eps shape checked"))
            .expect("latent shapes agree");
        self.decode(&z)
    }

    /// Tape forward. With `eps` the latent is reparameterized,
    /// `z = mu + exp(log_sigma) * eps`; without it the mean path is taken
    /// and `z` aliases `mu`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
        eps: Option<&Tensor>,
    ) -> Result<ForwardOut> {
        let mut k = 0;
        let mut next = || {
            let pair = (ids[k], ids[k + 1]);
            k += 2;
            pair
        };

        let mut h = x;
        for l in &self.enc {
            let (w, b) = next();
            h = l.apply_graph(g, w, b, h)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        if self.layer_norm {
            h = g.layer_norm(h, LAYER_NORM_EPS);
        }
        let (w, b) = next();
        let mu = self.mu.apply_graph(g, w, b, h)?;
        let (w, b) = next();
        let log_sigma = self.log_sigma.apply_graph(g, w, b, h)?;

        let z = match eps {
            Some(e) => {
                let (rows, cols) = (g.value(mu).rows(), g.value(mu).cols());
                if e.rows() != rows || e.cols() != cols {
                    return Err(Error::shape(
                        "reparameterize",
                        format!(
                            "noise is {}, latent is {}x{}",
                            e.shape_string(),
                            rows,
                            cols
                        ),
                    ));
                }
                let en = g.constant(e.clone());
                let sigma = g.exp(log_sigma);
                let scaled = g.mul(sigma, en)?;
                g.add(mu, scaled)?
            }
            None => mu,
        };

        let mut d = z;
        for (i, l) in self.dec.iter().enumerate() {
            let (w, b) = next();
            d = l.apply_graph(g, w, b, d)?;
            if i + 1 < self.dec.len() {
                d = g.leaky_relu(d, LEAKY_SLOPE);
            }
        }
        Ok(ForwardOut {
            prediction: d,
            latent: Some(LatentNodes::Gaussian { mu, log_sigma, z }),
        })
    }
}
