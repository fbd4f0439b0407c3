//! Training objectives.
//!
//! The variational families minimize, per window,
//!
//! ```text
//! L = (1/gamma) * sum_d |x_d - mu_x(z)_d| + d * ln(gamma)     reconstruction
//!   + sum_j (sigma_j^2 - ln sigma_j^2 + mu_j^2)               kl
//!   + delta * sum_k |xi_k - S(mu_k)|                           supervision
//! ```
//!
//! averaged over the batch. `S` is the identity or the linear map onto the
//! training factor ranges, depending on the model's scaling mode. The
//! deterministic families keep only a mean-L1 reconstruction plus, when
//! supervised, the same latent term; the LSTM trains on mean L1 alone.
//!
//! Each term is exposed both as a scalar reference implementation and as a
//! tape builder, and the two must agree — tests hold the graph to the
//! scalar form.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::neural::{ForwardOut, LatentNodes, Model, SupScaling};

/// `(1/gamma) * sum |x - mu_x| + d * ln(gamma)` for one window.
pub fn reconstruction_nll(target: &[f64], pred: &[f64], gamma: f64) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::shape(
            "reconstruction",
            format!("{} target values vs {} predicted", target.len(), pred.len()),
        ));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::config(format!("gamma must be positive, got {gamma}")));
    }
    let l1: f64 = target.iter().zip(pred).map(|(&t, &p)| (t - p).abs()).sum();
    Ok(l1 / gamma + target.len() as f64 * gamma.ln())
}

/// `sum_j (sigma_j^2 - ln sigma_j^2 + mu_j^2)` with `sigma = exp(log_sigma)`.
pub fn kl_divergence(mu: &[f64], log_sigma: &[f64]) -> Result<f64> {
    if mu.len() != log_sigma.len() {
        return Err(Error::shape(
            "kl",
            format!("{} means vs {} log-sigmas", mu.len(), log_sigma.len()),
        ));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| (2.0 * ls).exp() - 2.0 * ls + m * m)
        .sum())
}

/// `sum_k |xi_k - s_k|`; callers apply any latent scaling to `s` first.
pub fn supervision_l1(factors: &[f64], scaled_latents: &[f64]) -> Result<f64> {
    if factors.len() != scaled_latents.len() {
        return Err(Error::shape(
            "supervision",
            format!(
                "{} factors vs {} supervised latents",
                factors.len(),
                scaled_latents.len()
            ),
        ));
    }
    Ok(factors
        .iter()
        .zip(scaled_latents)
        .map(|(&f, &s)| (f - s).abs())
        .sum())
}

/// Mean absolute error over all entries.
pub fn mean_l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "mean_l1",
            format!("{} values vs {}", a.len(), b.len()),
        ));
    }
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Scalar nodes of one loss evaluation, each already batch-averaged.
pub struct LossNodes {
    pub total: NodeId,
    pub reconstruction: NodeId,
    pub kl: Option<NodeId>,
    pub supervised: Option<NodeId>,
}

/// Batch-averaged term values read off the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: Option<f64>,
    pub supervised: Option<f64>,
}

impl LossNodes {
    pub fn terms(&self, g: &Graph) -> LossTerms {
        LossTerms {
            total: g.value(self.total).value(),
            reconstruction: g.value(self.reconstruction).value(),
            kl: self.kl.map(|n| g.value(n).value()),
            supervised: self.supervised.map(|n| g.value(n).value()),
        }
    }
}

/// Builds the model's training loss over a forward pass. `target` is the
/// `[batch x output_dim]` ground truth; supervised families additionally
/// take the `[batch x factor_count]` hidden factors, others must not.
///
/// With `delta == 0` the supervised term is still computed for the record
/// but kept out of `total`, so the graph that gradients flow through is
/// exactly the unsupervised one.
pub fn build_loss(
    g: &mut Graph,
    model: &Model,
    out: &ForwardOut,
    target: &Tensor,
    factors: Option<&Tensor>,
) -> Result<LossNodes> {
    let spec = model.spec();
    let n = target.rows();
    let d = target.cols();
    {
        let pred = g.value(out.prediction);
        if pred.rows() != n || pred.cols() != d {
            return Err(Error::shape(
                "loss",
                format!(
                    "prediction is {}, target is {}",
                    pred.shape_string(),
                    target.shape_string()
                ),
            ));
        }
    }
    if factors.is_some() != spec.family.is_supervised() {
        return Err(Error::config(format!(
            "family {} {} hidden factors",
            spec.family.name(),
            if spec.family.is_supervised() {
                "requires"
            } else {
                "does not take"
            }
        )));
    }

    let target_node = g.constant(target.clone());
    let diff = g.sub(target_node, out.prediction)?;
    let absdiff = g.abs(diff);

    let reconstruction = if spec.family.is_variational() {
        let gamma = spec.decoder_gamma;
        let sumabs = g.sum(absdiff);
        let scaled = g.scale(sumabs, 1.0 / (n as f64 * gamma));
        let offset = g.constant(Tensor::scalar(d as f64 * gamma.ln()));
        g.add(scaled, offset)?
    } else {
        g.mean(absdiff)
    };

    let kl = match &out.latent {
        Some(LatentNodes::Gaussian { mu, log_sigma, .. }) => {
            let two_ls = g.scale(*log_sigma, 2.0);
            let var = g.exp(two_ls);
            let musq = g.square(*mu);
            let t = g.sub(var, two_ls)?;
            let t = g.add(t, musq)?;
            let s = g.sum(t);
            Some(g.scale(s, 1.0 / n as f64))
        }
        _ => None,
    };

    let supervised = match factors {
        Some(f) => {
            let k = model.system().factor_count();
            if f.rows() != n || f.cols() != k {
                return Err(Error::shape(
                    "supervision",
                    format!(
                        "factor matrix is {}, expected {} x {}",
                        f.shape_string(),
                        n,
                        k
                    ),
                ));
            }
            let latent_mean = match &out.latent {
                Some(LatentNodes::Gaussian { mu, .. }) => *mu,
                Some(LatentNodes::Deterministic(z)) => *z,
                None => {
                    return Err(Error::config(
                        "supervision needs a latent code".to_string(),
                    ));
                }
            };
            let mu_k = g.slice_cols(latent_mean, 0, k)?;
            let s = match spec.sup_scaling {
                SupScaling::None => mu_k,
                SupScaling::Linear => {
                    let ranges = model.factor_ranges().ok_or_else(|| {
                        Error::config(
                            "linear supervision scaling needs the training factor ranges"
                                .to_string(),
                        )
                    })?;
                    let span = g.constant(Tensor::row(
                        ranges.iter().map(|&(lo, hi)| hi - lo).collect::<Vec<_>>(),
                    )?);
                    let lo = g.constant(Tensor::row(
                        ranges.iter().map(|&(lo, _)| lo).collect::<Vec<_>>(),
                    )?);
                    let stretched = g.mul_row(mu_k, span)?;
                    g.add_row(stretched, lo)?
                }
            };
            let fnode = g.constant(f.clone());
            let sdiff = g.sub(fnode, s)?;
            let sabs = g.abs(sdiff);
            let ssum = g.sum(sabs);
            Some(g.scale(ssum, 1.0 / n as f64))
        }
        None => None,
    };

    let mut total = reconstruction;
    if let Some(kl) = kl {
        total = g.add(total, kl)?;
    }
    if let Some(sup) = supervised {
        if spec.supervision_delta != 0.0 {
            let weighted = g.scale(sup, spec.supervision_delta);
            total = g.add(total, weighted)?;
        }
    }

    Ok(LossNodes {
        total,
        reconstruction,
        kl,
        supervised,
    })
}
