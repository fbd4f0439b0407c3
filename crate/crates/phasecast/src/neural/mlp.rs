//! Deterministic encoder-decoder.

use rand::Rng;

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::Result;

use super::layers::{Linear, LEAKY_SLOPE};
use super::{ForwardOut, LatentNodes, LAYER_NORM_EPS};

/// Leaky-ReLU trunk into a linear latent head, mirrored decoder back to
/// the output window. The bottleneck has no activation so supervised
/// latents can take arbitrary factor values.
#[derive(Debug)]
pub struct MlpNet {
    enc: Vec<Linear>,
    latent: Linear,
    dec: Vec<Linear>,
    layer_norm: bool,
}

impl MlpNet {
    /// Draw order matches [`param_names`](Self::param_names): encoder
    /// trunk, latent head, decoder stack. Trunk layers are Kaiming, the
    /// latent head and the final decoder layer Xavier.
    pub fn init(
        in_dim: usize,
        hidden: &[usize],
        latent_size: usize,
        out_dim: usize,
        layer_norm: bool,
        rng: &mut impl Rng,
    ) -> MlpNet {
        let mut enc = Vec::with_capacity(hidden.len());
        let mut prev = in_dim;
        for &h in hidden {
            enc.push(Linear::kaiming(prev, h, rng));
            prev = h;
        }
        let latent = Linear::xavier(prev, latent_size, rng);

        let mut dec = Vec::with_capacity(hidden.len() + 1);
        let mut prev = latent_size;
        for &h in hidden.iter().rev() {
            dec.push(Linear::kaiming(prev, h, rng));
            prev = h;
        }
        dec.push(Linear::xavier(prev, out_dim, rng));
        MlpNet {
            enc,
            latent,
            dec,
            layer_norm,
        }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.enc {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.latent.w);
        out.push(&self.latent.b);
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
        out.push(&mut self.latent.w);
        out.push(&mut self.latent.b);
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
        out.push("latent.w".to_string());
        out.push("latent.b".to_string());
        for i in 0..self.dec.len() {
            out.push(format!("dec.{i}.w"));
            out.push(format!("dec.{i}.b"));
        }
        out
    }

    /// Latent code, one row per input row.
    pub fn encode(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &self.enc {
            h = kernels::leaky_relu(&l.apply(&h), LEAKY_SLOPE);
        }
        if self.layer_norm {
            h = kernels::layer_norm(&h, LAYER_NORM_EPS);
        }
        self.latent.apply(&h)
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        let mut h = z.clone();
        for l in &self.dec[..self.dec.len() - 1] {
            h = kernels::leaky_relu(&l.apply(&h), LEAKY_SLOPE);
        }
        self.dec[self.dec.len() - 1].apply(&h)
    }

    pub fn predict(&self, x: &Tensor) -> Tensor {
        self.decode(&self.encode(x))
    }

    /// Tape forward. `ids` follows [`param_names`](Self::param_names).
    pub fn forward_graph(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<ForwardOut> {
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
        let z = self.latent.apply_graph(g, w, b, h)?;

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
            latent: Some(LatentNodes::Deterministic(z)),
        })
    }
}
