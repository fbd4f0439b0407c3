//! Model families.
//!
//! All families map a flattened window of `input_steps` noisy states to the
//! `output_steps` states that follow it:
//!
//! * `MlpAe` / `MlpSd`: deterministic encoder-decoder; `MlpSd` additionally
//!   supervises the first `k` latent units with the hidden factors.
//! * `Vae` / `VaeSd` / `VaeSsd`: variational encoder with diagonal Gaussian
//!   latent; the supervised variants tie the first `k` latent means to the
//!   factors, either directly (`VaeSd`) or through a linear map onto the
//!   training factor ranges (`VaeSsd`).
//! * `Lstm`: stacked LSTM baseline that consumes the window step by step
//!   and generates autoregressively, with optional teacher forcing during
//!   training.
//!
//! Encoders use leaky ReLU hidden layers initialized Kaiming-uniform;
//! output and latent heads (and the LSTM) are Xavier-uniform; biases start
//! at zero. Inference uses the latent mean; drawing `z` instead stays
//! available behind an explicit flag on the evaluation side.

mod checkpoint;
mod layers;
mod lstm;
mod mlp;
mod vae;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};
pub use layers::{Linear, LEAKY_SLOPE};
pub use lstm::{LstmNet, LstmSpec, TeacherForcing};
pub use mlp::MlpNet;
pub use vae::VaeNet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dynsys::SystemKind;
use crate::error::{Error, Result};
use crate::streams;

/// Epsilon under the square root in latent layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MlpAe,
    MlpSd,
    Vae,
    VaeSd,
    VaeSsd,
    Lstm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::MlpAe => "mlp_ae",
            Family::MlpSd => "mlp_sd",
            Family::Vae => "vae",
            Family::VaeSd => "vae_sd",
            Family::VaeSsd => "vae_ssd",
            Family::Lstm => "lstm",
        }
    }

    pub fn is_variational(self) -> bool {
        matches!(self, Family::Vae | Family::VaeSd | Family::VaeSsd)
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, Family::MlpSd | Family::VaeSd | Family::VaeSsd)
    }
}

/// How supervised latents are compared against the factors: either the raw
/// latent mean, or the mean mapped linearly onto the training ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupScaling {
    #[default]
    None,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ModelSpecFile")]
pub struct ModelSpec {
    pub family: Family,
    /// Window length fed to the model, in grid steps.
    pub input_steps: usize,
    /// Steps predicted per forward pass.
    pub output_steps: usize,
    /// Encoder hidden sizes; the decoder mirrors them in reverse.
    pub hidden: Vec<usize>,
    pub latent_size: usize,
    /// Layer normalization on the last encoder activation.
    pub layer_norm_latent: bool,
    /// Decoder variance weight of the reconstruction loss (VAE families).
    pub decoder_gamma: f64,
    /// Weight of the supervised latent term (supervised families).
    pub supervision_delta: f64,
    pub sup_scaling: SupScaling,
    pub lstm: Option<LstmSpec>,
    /// Seed for parameter initialization.
    pub seed: u64,
}

/// Wire form of [`ModelSpec`]: everything beyond the family, window
/// shape, and seed may be omitted and falls back to the family defaults
/// of [`ModelSpec::new`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpecFile {
    family: Family,
    input_steps: usize,
    output_steps: usize,
    hidden: Option<Vec<usize>>,
    latent_size: Option<usize>,
    layer_norm_latent: Option<bool>,
    decoder_gamma: Option<f64>,
    supervision_delta: Option<f64>,
    sup_scaling: Option<SupScaling>,
    lstm: Option<LstmSpec>,
    seed: u64,
}

impl From<ModelSpecFile> for ModelSpec {
    fn from(f: ModelSpecFile) -> ModelSpec {
        let mut spec = ModelSpec::new(f.family, f.input_steps, f.output_steps, f.seed);
        if let Some(v) = f.hidden {
            spec.hidden = v;
        }
        if let Some(v) = f.latent_size {
            spec.latent_size = v;
        }
        if let Some(v) = f.layer_norm_latent {
            spec.layer_norm_latent = v;
        }
        if let Some(v) = f.decoder_gamma {
            spec.decoder_gamma = v;
        }
        if let Some(v) = f.supervision_delta {
            spec.supervision_delta = v;
        }
        if let Some(v) = f.sup_scaling {
            spec.sup_scaling = v;
        }
        if let Some(v) = f.lstm {
            spec.lstm = Some(v);
        }
        spec
    }
}

impl ModelSpec {
    /// Family defaults: `[400, 200]` hidden stack, latent 4, no layer norm,
    /// `gamma = 1e-4`, `delta = 0.1` where supervision applies, linear
    /// scaling only for the families defined by it.
    pub fn new(family: Family, input_steps: usize, output_steps: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            family,
            input_steps,
            output_steps,
            hidden: vec![400, 200],
            latent_size: if family == Family::Lstm { 0 } else { 4 },
            layer_norm_latent: false,
            decoder_gamma: 1e-4,
            supervision_delta: match family {
                Family::MlpSd | Family::VaeSd | Family::VaeSsd => 0.1,
                _ => 0.0,
            },
            sup_scaling: match family {
                Family::VaeSsd | Family::MlpSd => SupScaling::Linear,
                _ => SupScaling::None,
            },
            lstm: if family == Family::Lstm {
                Some(LstmSpec::default())
            } else {
                None
            },
            seed,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> ModelSpec {
        self.hidden = hidden;
        self
    }

    pub fn with_latent(mut self, latent_size: usize) -> ModelSpec {
        self.latent_size = latent_size;
        self
    }

    pub fn with_layer_norm(mut self, on: bool) -> ModelSpec {
        self.layer_norm_latent = on;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> ModelSpec {
        self.decoder_gamma = gamma;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> ModelSpec {
        self.supervision_delta = delta;
        self
    }

    pub fn with_scaling(mut self, scaling: SupScaling) -> ModelSpec {
        self.sup_scaling = scaling;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> ModelSpec {
        self.seed = seed;
        self
    }

    pub fn validate(&self, system: SystemKind) -> Result<()> {
        if self.input_steps == 0 || self.output_steps == 0 {
            return Err(Error::config("window sizes must be positive".to_string()));
        }
        if self.output_steps > self.input_steps {
            return Err(Error::config(format!(
                "output window ({}) cannot exceed input window ({}); rollout refeeds predictions",
                self.output_steps, self.input_steps
            )));
        }
        if self.input_steps + self.output_steps > system.seq_len() {
            return Err(Error::config(format!(
                "window of {} + {} steps does not fit a {}-step {} trajectory",
                self.input_steps,
                self.output_steps,
                system.seq_len(),
                system.name()
            )));
        }
        if !self.family.is_supervised() && self.supervision_delta != 0.0 {
            return Err(Error::config(format!(
                "supervision_delta applies only to supervised families, not {}",
                self.family.name()
            )));
        }
        if self.supervision_delta < 0.0 || !self.supervision_delta.is_finite() {
            return Err(Error::config(format!(
                "supervision_delta must be finite and non-negative, got {}",
                self.supervision_delta
            )));
        }
        match self.family {
            Family::Lstm => {
                if self.lstm.is_none() {
                    return Err(Error::config("lstm family needs an lstm section".to_string()));
                }
                if self.layer_norm_latent {
                    return Err(Error::config(
                        "layer_norm_latent does not apply to the lstm family".to_string(),
                    ));
                }
                if self.latent_size != 0 {
                    return Err(Error::config(
                        "latent_size does not apply to the lstm family".to_string(),
                    ));
                }
                if let Some(l) = &self.lstm {
                    if l.layers == 0 || l.hidden_size == 0 {
                        return Err(Error::config(
                            "lstm needs at least one layer and a positive hidden size".to_string(),
                        ));
                    }
                    if let TeacherForcing::Partial(p) = l.teacher_forcing {
                        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                            return Err(Error::config(format!(
                                "teacher forcing probability must lie in [0, 1], got {p}"
                            )));
                        }
                    }
                }
            }
            _ => {
                if self.lstm.is_some() {
                    return Err(Error::config(format!(
                        "lstm section is not valid for family {}",
                        self.family.name()
                    )));
                }
                if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
                    return Err(Error::config("hidden sizes must be positive".to_string()));
                }
                if self.latent_size == 0 {
                    return Err(Error::config("latent_size must be positive".to_string()));
                }
                if self.family.is_supervised() && self.latent_size < system.factor_count() {
                    return Err(Error::config(format!(
                        "latent size {} cannot supervise {} factors of {}",
                        self.latent_size,
                        system.factor_count(),
                        system.name()
                    )));
                }
                if self.family.is_variational()
                    && (!self.decoder_gamma.is_finite() || self.decoder_gamma <= 0.0)
                {
                    return Err(Error::config(format!(
                        "decoder_gamma must be positive, got {}",
                        self.decoder_gamma
                    )));
                }
            }
        }
        match (self.family, self.sup_scaling) {
            (Family::VaeSd, SupScaling::Linear) => {
                return Err(Error::config(
                    "vae_sd uses unscaled supervision; vae_ssd is the scaled variant".to_string(),
                ));
            }
            (Family::VaeSsd, SupScaling::None) => {
                return Err(Error::config(
                    "vae_ssd is defined by linear supervision scaling".to_string(),
                ));
            }
            (Family::MlpAe | Family::Vae | Family::Lstm, SupScaling::Linear) => {
                return Err(Error::config(format!(
                    "sup_scaling does not apply to family {}",
                    self.family.name()
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the latent space for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianLatent {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Latent code of one input, deterministic or Gaussian depending on the
/// family.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Deterministic(Vec<f64>),
    Gaussian(GaussianLatent),
}

/// `z = mu + sigma * eps` elementwise.
pub fn reparameterize(latent: &GaussianLatent, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != latent.mu.len() {
        return Err(Error::shape(
            "reparameterize",
            format!("{} noise values for a {}-dim latent", eps.len(), latent.mu.len()),
        ));
    }
    Ok(latent
        .mu
        .iter()
        .zip(&latent.log_sigma)
        .zip(eps)
        .map(|((&m, &ls), &e)| m + ls.exp() * e)
        .collect())
}

/// Linear map from latent means onto factor ranges:
/// `G(mu)_i = mu_i * (max_i - min_i) + min_i`.
pub fn scale_latent(mu_k: &[f64], ranges: &[(f64, f64)]) -> Result<Vec<f64>> {
    if mu_k.len() != ranges.len() {
        return Err(Error::shape(
            "scale_latent",
            format!("{} latents for {} ranges", mu_k.len(), ranges.len()),
        ));
    }
    for &(lo, hi) in ranges {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!(
                "scaling needs non-degenerate ranges, got [{lo}, {hi}]"
            )));
        }
    }
    Ok(mu_k
        .iter()
        .zip(ranges)
        .map(|(&m, &(lo, hi))| m * (hi - lo) + lo)
        .collect())
}

/// Per-family graph forward context. Training passes sampling noise and,
/// for the LSTM, the teacher sequence with per-step coins; inference passes
/// neither.
#[derive(Default)]
pub struct ForwardCtx<'a> {
    /// `[batch x latent]` standard normal draws; `None` uses `z = mu`.
    pub eps: Option<&'a Tensor>,
    /// `[batch x output_steps * dim]` ground-truth continuation.
    pub teacher: Option<&'a Tensor>,
    /// One coin per generated step after the first: `true` feeds the
    /// teacher step, `false` the model's own prediction.
    pub teacher_coins: Option<&'a [bool]>,
}

/// Latent nodes of a graph forward pass.
pub enum LatentNodes {
    Deterministic(NodeId),
    Gaussian {
        mu: NodeId,
        log_sigma: NodeId,
        z: NodeId,
    },
}

pub struct ForwardOut {
    /// `[batch x output_steps * dim]` prediction.
    pub prediction: NodeId,
    pub latent: Option<LatentNodes>,
}

/// Bound parameter nodes of one graph pass, in canonical parameter order.
pub struct BoundParams {
    pub ids: Vec<NodeId>,
}

#[derive(Debug)]
enum Net {
    Mlp(MlpNet),
    Vae(VaeNet),
    Lstm(LstmNet),
}

/// A built model: spec, system binding, parameters.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    system: SystemKind,
    /// Training factor ranges backing the linear supervision scaling;
    /// set before training and persisted in checkpoints.
    factor_ranges: Option<Vec<(f64, f64)>>,
    net: Net,
}

impl Model {
    /// Initializes parameters from `spec.seed` (stream
    /// [`streams::MODEL_INIT`]). The same spec always yields the same
    /// parameters, regardless of family tag differences that do not touch
    /// the architecture.
    pub fn build(spec: ModelSpec, system: SystemKind) -> Result<Model> {
        spec.validate(system)?;
        let dim = system.state_dim();
        let in_dim = spec.input_steps * dim;
        let out_dim = spec.output_steps * dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(streams::MODEL_INIT);

        let net = match spec.family {
            Family::MlpAe | Family::MlpSd => Net::Mlp(MlpNet::init(
                in_dim,
                &spec.hidden,
                spec.latent_size,
                out_dim,
                spec.layer_norm_latent,
                &mut rng,
            )),
            Family::Vae | Family::VaeSd | Family::VaeSsd => Net::Vae(VaeNet::init(
                in_dim,
                &spec.hidden,
                spec.latent_size,
                out_dim,
                spec.layer_norm_latent,
                &mut rng,
            )),
            Family::Lstm => {
                let lspec = spec.lstm.clone().expect("validated");
                Net::Lstm(LstmNet::init(dim, &lspec, &mut rng))
            }
        };
        Ok(Model {
            spec,
            system,
            factor_ranges: None,
            net,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn system(&self) -> SystemKind {
        self.system
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_steps * self.state_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_steps * self.state_dim()
    }

    pub fn factor_ranges(&self) -> Option<&[(f64, f64)]> {
        self.factor_ranges.as_deref()
    }

    /// Records the training factor ranges used by linear supervision
    /// scaling.
    pub fn set_factor_ranges(&mut self, ranges: Vec<(f64, f64)>) -> Result<()> {
        if ranges.len() != self.system.factor_count() {
            return Err(Error::config(format!(
                "{} has {} factors, got {} ranges",
                self.system.name(),
                self.system.factor_count(),
                ranges.len()
            )));
        }
        self.factor_ranges = Some(ranges);
        Ok(())
    }

    /// Canonical parameter views, stable across runs; checkpoints and the
    /// optimizer rely on this order.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        match &self.net {
            Net::Mlp(n) => n.param_tensors(),
            Net::Vae(n) => n.param_tensors(),
            Net::Lstm(n) => n.param_tensors(),
        }
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.net {
            Net::Mlp(n) => n.param_tensors_mut(),
            Net::Vae(n) => n.param_tensors_mut(),
            Net::Lstm(n) => n.param_tensors_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.net {
            Net::Mlp(n) => n.param_names(),
            Net::Vae(n) => n.param_names(),
            Net::Lstm(n) => n.param_names(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Binds every parameter onto the tape, tracked or constant.
    pub fn bind(&self, g: &mut Graph, tracked: bool) -> BoundParams {
        let ids = self
            .param_tensors()
            .into_iter()
            .map(|t| {
                if tracked {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundParams { ids }
    }

    /// Graph forward pass over a `[batch x input_dim]` window matrix.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        ctx: &ForwardCtx,
    ) -> Result<ForwardOut> {
        if g.value(x).cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!(
                    "window matrix has {} columns, {} expects {}",
                    g.value(x).cols(),
                    self.family().name(),
                    self.input_dim()
                ),
            ));
        }
        match &self.net {
            Net::Mlp(n) => n.forward_graph(g, &bound.ids, x),
            Net::Vae(n) => n.forward_graph(g, &bound.ids, x, ctx.eps),
            Net::Lstm(n) => n.forward_graph(
                g,
                &bound.ids,
                x,
                self.spec.input_steps,
                self.spec.output_steps,
                self.state_dim(),
                ctx.teacher,
                ctx.teacher_coins,
            ),
        }
    }

    /// Latent code for a single flattened window. The variational families
    /// return the Gaussian; sampling from it is the caller's choice.
    pub fn encode(&self, x: &[f64]) -> Result<Latent> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "encode",
                format!("input of {} values, expected {}", x.len(), self.input_dim()),
            ));
        }
        let xt = Tensor::from_vec(1, x.len(), x.to_vec())?;
        match &self.net {
            Net::Mlp(n) => Ok(Latent::Deterministic(n.encode(&xt).data().to_vec())),
            Net::Vae(n) => {
                let (mu, ls) = n.encode(&xt);
                Ok(Latent::Gaussian(GaussianLatent {
                    mu: mu.data().to_vec(),
                    log_sigma: ls.data().to_vec(),
                }))
            }
            Net::Lstm(_) => Err(Error::config(
                "the lstm family has no latent encoder".to_string(),
            )),
        }
    }

    /// Decodes a latent vector into a predicted continuation.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.spec.latent_size {
            return Err(Error::shape(
                "decode",
                format!("latent of {} values, expected {}", z.len(), self.spec.latent_size),
            ));
        }
        let zt = Tensor::from_vec(1, z.len(), z.to_vec())?;
        match &self.net {
            Net::Mlp(n) => Ok(n.decode(&zt).data().to_vec()),
            Net::Vae(n) => Ok(n.decode(&zt).data().to_vec()),
            Net::Lstm(_) => Err(Error::config(
                "the lstm family has no latent decoder".to_string(),
            )),
        }
    }

    /// Mean-path batch prediction: `[batch x input_dim]` to
    /// `[batch x output_dim]`. Variational families use `z = mu`.
    pub fn predict_batch(&self, windows: &Tensor) -> Result<Tensor> {
        if windows.cols() != self.input_dim() {
            return Err(Error::shape(
                "predict",
                format!(
                    "window matrix has {} columns, expected {}",
                    windows.cols(),
                    self.input_dim()
                ),
            ));
        }
        match &self.net {
            Net::Mlp(n) => Ok(n.predict(windows)),
            Net::Vae(n) => Ok(n.predict_mean(windows)),
            Net::Lstm(n) => {
                n.predict(windows, self.spec.input_steps, self.spec.output_steps, self.state_dim())
            }
        }
    }

    /// Batch prediction with latent sampling for the variational families;
    /// other families fall back to the deterministic path.
    pub fn predict_batch_sampled(
        &self,
        windows: &Tensor,
        rng: &mut impl rand::Rng,
    ) -> Result<Tensor> {
        match &self.net {
            Net::Vae(n) => {
                if windows.cols() != self.input_dim() {
                    return Err(Error::shape(
                        "predict",
                        format!(
                            "window matrix has {} columns, expected {}",
                            windows.cols(),
                            self.input_dim()
                        ),
                    ));
                }
                let normal = rand_distr::StandardNormal;
                let mut eps = Tensor::zeros(windows.rows(), self.spec.latent_size);
                for v in eps.data_mut() {
                    *v = rand_distr::Distribution::sample(&normal, rng);
                }
                Ok(n.predict_sampled(windows, &eps))
            }
            _ => self.predict_batch(windows),
        }
    }
}

/// Anything that can forecast `output_steps` from an `input_steps` window;
/// rollout evaluation is written against this.
pub trait Predictor {
    fn input_steps(&self) -> usize;
    fn output_steps(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// `[batch x input_steps * dim]` to `[batch x output_steps * dim]`.
    fn predict_windows(&self, windows: &Tensor) -> Result<Tensor>;
}

impl Predictor for Model {
    fn input_steps(&self) -> usize {
        self.spec.input_steps
    }

    fn output_steps(&self) -> usize {
        self.spec.output_steps
    }

    fn state_dim(&self) -> usize {
        Model::state_dim(self)
    }

    fn predict_windows(&self, windows: &Tensor) -> Result<Tensor> {
        self.predict_batch(windows)
    }
}
