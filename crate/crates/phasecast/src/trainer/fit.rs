//! The training loop: minibatch windows, Adam with clipping, plateau
//! schedule, early stopping on a frozen validation batch, best-epoch
//! restore.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::neural::{ForwardCtx, Model, ModelSpec, TeacherForcing};
use crate::objective::{build_loss, LossTerms};
use crate::streams;

use super::adam::{clip_global_l2, Adam, AdamConfig};
use super::schedule::{improves, Plateau, PlateauConfig};
use super::windows::sample_windows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optimizer steps per epoch; unset means one nominal pass,
    /// `ceil(n_sequences / batch_size)`.
    pub windows_per_epoch: Option<usize>,
    pub lr: f64,
    /// Global gradient L2 ceiling; unset disables clipping.
    pub clip_norm: Option<f64>,
    pub plateau: PlateauConfig,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub early_stop_patience: usize,
    /// Size of the frozen validation batch sampled once before training.
    pub val_windows: usize,
    /// Train against clean states instead of noisy observations.
    pub clean_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 2000,
            windows_per_epoch: None,
            lr: 1e-3,
            clip_norm: Some(1.0),
            plateau: PlateauConfig::default(),
            early_stop_patience: 30,
            val_windows: 512,
            clean_targets: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.val_windows == 0 {
            return Err(Error::config(
                "batch size, epoch budget, and validation windows must be positive".to_string(),
            ));
        }
        if self.windows_per_epoch == Some(0) {
            return Err(Error::config("windows_per_epoch must be positive".to_string()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return Err(Error::config(format!(
                "plateau factor must lie in (0, 1), got {}",
                self.plateau.factor
            )));
        }
        if !(self.plateau.min_lr > 0.0) || self.plateau.min_lr > self.lr {
            return Err(Error::config(format!(
                "min_lr must lie in (0, lr], got {}",
                self.plateau.min_lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_reconstruction: f64,
    pub train_kl: Option<f64>,
    pub train_supervised: Option<f64>,
    pub val_loss: f64,
    /// Learning rate the epoch ran at.
    pub lr: f64,
}

/// One finished run. Contains only what a rerun reproduces exactly —
/// wall-clock time deliberately lives outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: u32,
    pub system: crate::dynsys::SystemKind,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub stop: StopReason,
    /// Epoch whose parameters the returned model carries; 0 when no epoch
    /// ever improved on infinity.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

pub struct FitOutcome {
    pub model: Model,
    pub record: RunRecord,
    pub wall: Duration,
}

/// CRC32 over the canonical JSON of everything that determines a run.
pub fn config_hash(
    system: crate::dynsys::SystemKind,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<u32> {
    let blob = serde_json::to_vec(&(system, spec, cfg))
        .map_err(|e| Error::format(format!("encode run config: {e}")))?;
    Ok(crc32fast::hash(&blob))
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    t
}

/// Trains `spec` on `train`, stopping on `val`. Every random choice —
/// parameter init, window draws, latent noise, teacher coins — derives
/// from `spec.seed` through its own named stream, so a rerun with the
/// same inputs reproduces the record bit for bit.
pub fn fit(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let system = train.system;
    if val.system != system {
        return Err(Error::config(format!(
            "validation split is {}, training split is {}",
            val.system.name(),
            system.name()
        )));
    }

    let mut model = Model::build(spec.clone(), system)?;
    model.set_factor_ranges(train.spec.factor_ranges.clone())?;
    let supervised = spec.family.is_supervised();
    let variational = spec.family.is_variational();
    let teacher_forcing = spec.lstm.as_ref().map(|l| l.teacher_forcing);
    let latent = spec.latent_size;
    let n_in = spec.input_steps;
    let n_out = spec.output_steps;

    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        rng
    };
    let mut win_rng = stream_rng(streams::WINDOWS);
    let mut eps_rng = stream_rng(streams::NOISE_EPS);
    let mut teacher_rng = stream_rng(streams::TEACHER);

    // The validation batch and its latent noise are drawn once; every
    // epoch sees the same windows, so the early-stopping signal moves only
    // with the parameters.
    let val_batch = sample_windows(
        val,
        n_in,
        n_out,
        cfg.val_windows,
        cfg.clean_targets,
        &mut stream_rng(streams::VAL_WINDOWS),
    )?;
    let val_eps = variational.then(|| {
        standard_normal_matrix(&mut stream_rng(streams::VAL_EVAL), cfg.val_windows, latent)
    });

    let steps = cfg
        .windows_per_epoch
        .unwrap_or_else(|| train.len().div_ceil(cfg.batch_size));
    let mut opt = Adam::new(&model.param_tensors(), AdamConfig::default());
    let mut plateau = Plateau::new(cfg.lr, cfg.plateau);

    let mut snapshot: Vec<Tensor> = model.param_tensors().iter().map(|t| (*t).clone()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stall = 0usize;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    'training: for epoch in 1..=cfg.max_epochs {
        let lr = plateau.lr();
        let mut sums = LossTerms {
            total: 0.0,
            reconstruction: 0.0,
            kl: None,
            supervised: None,
        };
        for _ in 0..steps {
            let batch = sample_windows(
                train,
                n_in,
                n_out,
                cfg.batch_size,
                cfg.clean_targets,
                &mut win_rng,
            )?;
            let eps = variational
                .then(|| standard_normal_matrix(&mut eps_rng, cfg.batch_size, latent));
            let coins: Option<Vec<bool>> = match teacher_forcing {
                Some(TeacherForcing::Full) => Some(vec![true; n_out - 1]),
                Some(TeacherForcing::Partial(p)) => {
                    Some((1..n_out).map(|_| teacher_rng.random_bool(p)).collect())
                }
                Some(TeacherForcing::None) | None => None,
            };

            let mut g = crate::autodiff::Graph::new();
            let bound = model.bind(&mut g, true);
            let x = g.constant(batch.inputs.clone());
            let ctx = ForwardCtx {
                eps: eps.as_ref(),
                teacher: coins.is_some().then_some(&batch.targets),
                teacher_coins: coins.as_deref(),
            };
            let out = model.forward_graph(&mut g, &bound, x, &ctx)?;
            let loss = build_loss(
                &mut g,
                &model,
                &out,
                &batch.targets,
                supervised.then_some(&batch.factors),
            )?;
            let terms = loss.terms(&g);
            if !terms.total.is_finite() {
                stop = StopReason::Diverged;
                break 'training;
            }
            sums.total += terms.total;
            sums.reconstruction += terms.reconstruction;
            if let Some(k) = terms.kl {
                *sums.kl.get_or_insert(0.0) += k;
            }
            if let Some(s) = terms.supervised {
                *sums.supervised.get_or_insert(0.0) += s;
            }

            let mut grads_store = g.backward(loss.total)?;
            let mut grads: Vec<Tensor> = Vec::with_capacity(bound.ids.len());
            for (&id, p) in bound.ids.iter().zip(model.param_tensors()) {
                grads.push(
                    grads_store
                        .take(id)
                        .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())),
                );
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_l2(&mut grads, c);
            }
            let mut params = model.param_tensors_mut();
            if opt.step(&mut params, &grads, lr).is_err() {
                stop = StopReason::Diverged;
                break 'training;
            }
        }

        let inv = 1.0 / steps as f64;
        let train_terms = LossTerms {
            total: sums.total * inv,
            reconstruction: sums.reconstruction * inv,
            kl: sums.kl.map(|v| v * inv),
            supervised: sums.supervised.map(|v| v * inv),
        };

        let val_loss = {
            let mut g = crate::autodiff::Graph::new();
            let bound = model.bind(&mut g, false);
            let x = g.constant(val_batch.inputs.clone());
            let ctx = ForwardCtx {
                eps: val_eps.as_ref(),
                ..Default::default()
            };
            let out = model.forward_graph(&mut g, &bound, x, &ctx)?;
            let loss = build_loss(
                &mut g,
                &model,
                &out,
                &val_batch.targets,
                supervised.then_some(&val_batch.factors),
            )?;
            loss.terms(&g).total
        };
        if !val_loss.is_finite() {
            stop = StopReason::Diverged;
            break 'training;
        }

        epochs.push(EpochRecord {
            epoch,
            train_total: train_terms.total,
            train_reconstruction: train_terms.reconstruction,
            train_kl: train_terms.kl,
            train_supervised: train_terms.supervised,
            val_loss,
            lr,
        });

        if improves(val_loss, best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            stall = 0;
            for (s, p) in snapshot.iter_mut().zip(model.param_tensors()) {
                s.data_mut().copy_from_slice(p.data());
            }
        } else {
            stall += 1;
            if stall > cfg.early_stop_patience {
                stop = StopReason::EarlyStop;
                break 'training;
            }
        }
        plateau.observe(val_loss);
    }

    for (p, s) in model.param_tensors_mut().into_iter().zip(&snapshot) {
        p.data_mut().copy_from_slice(s.data());
    }

    let record = RunRecord {
        config_hash: config_hash(system, spec, cfg)?,
        system,
        spec: spec.clone(),
        train: cfg.clone(),
        stop,
        best_epoch,
        best_val: best_val.is_finite().then_some(best_val),
        epochs,
    };
    Ok(FitOutcome {
        model,
        record,
        wall: started.elapsed(),
    })
}
