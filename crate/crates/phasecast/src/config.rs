//! Job descriptions for the command-line pipeline.
//!
//! Each command takes one JSON file describing the whole job; flags only
//! override the handful of knobs that vary between otherwise identical
//! invocations (seed, worker count, horizon). Unknown keys are rejected
//! so a typo cannot silently fall back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::Split;
use crate::dynsys::{SystemKind, ThreeBodyCoupling};
use crate::error::{Error, Result};
use crate::neural::ModelSpec;
use crate::trainer::{GridSpec, TrainConfig};

/// Reads and parses one job file.
pub fn load_job<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Per-split sequence counts; omitted splits keep the canonical count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub val: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
    #[serde(default)]
    pub ood_easy: Option<usize>,
    #[serde(default)]
    pub ood_hard: Option<usize>,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> Option<usize> {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::OodEasy => self.ood_easy,
            Split::OodHard => self.ood_hard,
        }
    }
}

/// Dataset generation job: which system, which splits, how many
/// sequences. Ranges and noise levels are fixed per system; only the
/// scale of the job is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateJob {
    pub system: SystemKind,
    pub seed: u64,
    /// Splits to generate; all five when omitted.
    #[serde(default)]
    pub splits: Option<Vec<Split>>,
    #[serde(default)]
    pub counts: Option<SplitCounts>,
    /// Integrator tolerance override.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub coupling: Option<ThreeBodyCoupling>,
}

impl GenerateJob {
    pub fn splits(&self) -> Vec<Split> {
        self.splits.clone().unwrap_or_else(|| Split::ALL.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(splits) = &self.splits {
            if splits.is_empty() {
                return Err(Error::config("splits list is empty"));
            }
            for (i, s) in splits.iter().enumerate() {
                if splits[..i].contains(s) {
                    return Err(Error::config(format!("split {} listed twice", s.name())));
                }
            }
        }
        if let Some(counts) = &self.counts {
            for split in Split::ALL {
                if counts.get(split) == Some(0) {
                    return Err(Error::config(format!(
                        "{} count must be positive",
                        split.name()
                    )));
                }
            }
        }
        if let Some(tol) = self.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(Error::config(format!("tol must be positive, got {tol}")));
            }
        }
        if self.coupling.is_some() && self.system != SystemKind::ThreeBody {
            return Err(Error::config(format!(
                "coupling only applies to {}",
                SystemKind::ThreeBody.name()
            )));
        }
        Ok(())
    }
}

/// Single training run: one model spec against one generated dataset
/// directory (expects `train/` and `val/` inside `data`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub data: PathBuf,
    pub spec: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Hyperparameter sweep over one dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridJob {
    pub data: PathBuf,
    pub grid: GridSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Wall budget in seconds; the sweep stops before launching a run
    /// that would start past the budget.
    #[serde(default)]
    pub budget_secs: Option<u64>,
}

fn default_horizon() -> usize {
    crate::evalkit::DEFAULT_HORIZON
}

fn default_eval_splits() -> Vec<Split> {
    vec![Split::Test, Split::OodEasy, Split::OodHard]
}

fn default_top_k() -> usize {
    3
}

/// Closed-loop evaluation of one checkpoint on one or more splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJob {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default = "default_eval_splits")]
    pub splits: Vec<Split>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Draw latents instead of using their means, seeded here.
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

impl EvalJob {
    pub fn validate(&self) -> Result<()> {
        if self.splits.is_empty() {
            return Err(Error::config("splits list is empty"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        Ok(())
    }
}

/// Aggregated comparison across a finished sweep: per family, keep the
/// `top_k` runs by validation forecast error and report their test and
/// OOD errors as a CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJob {
    pub data: PathBuf,
    /// Sweep directory containing `grid.json`.
    pub sweep: PathBuf,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_eval_splits")]
    pub splits: Vec<Split>,
}

impl ReportJob {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::config("top_k must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if self.splits.is_empty() {
            return Err(Error::config("splits list is empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Family, ModelSpec, SupScaling};

    #[test]
    fn generate_job_round_trips_and_rejects_unknown_keys() {
        let text = r#"{
            "system": "pendulum",
            "seed": 7,
            "splits": ["train", "val"],
            "counts": { "train": 40, "val": 10 }
        }"#;
        let job: GenerateJob = serde_json::from_str(text).unwrap();
        assert_eq!(job.system, SystemKind::Pendulum);
        assert_eq!(job.splits(), vec![Split::Train, Split::Val]);
        assert_eq!(job.counts.unwrap().get(Split::Train), Some(40));
        assert_eq!(job.counts.unwrap().get(Split::Test), None);
        job.validate().unwrap();

        let err = serde_json::from_str::<GenerateJob>(r#"{"system": "pendulum", "seed": 1, "noise": 2.0}"#)
            .unwrap_err();
        assert!(err.to_string().contains("noise"), "{err}");
    }

    #[test]
    fn generate_job_rejects_bad_shapes() {
        let dup = GenerateJob {
            system: SystemKind::Pendulum,
            seed: 1,
            splits: Some(vec![Split::Train, Split::Train]),
            counts: None,
            tol: None,
            coupling: None,
        };
        assert!(dup.validate().unwrap_err().to_string().contains("twice"));

        let zero = GenerateJob {
            system: SystemKind::Pendulum,
            seed: 1,
            splits: None,
            counts: Some(SplitCounts {
                train: Some(0),
                val: None,
                test: None,
                ood_easy: None,
                ood_hard: None,
            }),
            tol: None,
            coupling: None,
        };
        assert!(zero.validate().is_err());

        let coupling = GenerateJob {
            system: SystemKind::Pendulum,
            seed: 1,
            splits: None,
            counts: None,
            tol: None,
            coupling: Some(ThreeBodyCoupling::Kinematic),
        };
        assert!(coupling.validate().unwrap_err().to_string().contains("coupling"));
    }

    #[test]
    fn train_job_parses_nested_spec_and_config() {
        let text = r#"{
            "data": "data/pendulum",
            "spec": {
                "family": "vae_sd",
                "input_steps": 50,
                "output_steps": 10,
                "hidden": [32, 16],
                "latent_size": 4,
                "layer_norm_latent": true,
                "decoder_gamma": 1e-4,
                "supervision_delta": 0.1,
                "sup_scaling": "none",
                "seed": 3
            },
            "train": { "batch_size": 16, "max_epochs": 5 }
        }"#;
        let job: TrainJob = serde_json::from_str(text).unwrap();
        assert_eq!(job.spec.family, Family::VaeSd);
        assert_eq!(job.train.batch_size, 16);
        assert_eq!(job.train.max_epochs, 5);
        // Unset training knobs keep their defaults.
        assert_eq!(job.train.early_stop_patience, 30);
    }

    #[test]
    fn partial_model_spec_fills_family_defaults() {
        let text = r#"{
            "data": "d",
            "spec": { "family": "vae_ssd", "input_steps": 50, "output_steps": 10, "seed": 3 }
        }"#;
        let job: TrainJob = serde_json::from_str(text).unwrap();
        assert_eq!(job.spec, ModelSpec::new(Family::VaeSsd, 50, 10, 3));
        assert_eq!(job.spec.sup_scaling, SupScaling::Linear);

        // Explicit values win over the family defaults.
        let text = r#"{
            "data": "d",
            "spec": { "family": "vae", "input_steps": 5, "output_steps": 2, "seed": 1,
                      "hidden": [8], "decoder_gamma": 0.5 }
        }"#;
        let job: TrainJob = serde_json::from_str(text).unwrap();
        assert_eq!(job.spec.hidden, vec![8]);
        assert_eq!(job.spec.decoder_gamma, 0.5);

        let err = serde_json::from_str::<TrainJob>(
            r#"{"data": "d",
                "spec": {"family": "vae", "input_steps": 5, "output_steps": 2,
                         "seed": 1, "latents": 4}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("latents"), "{err}");
    }

    #[test]
    fn eval_and_report_jobs_default_sensibly() {
        let eval: EvalJob =
            serde_json::from_str(r#"{"data": "d", "checkpoint": "c"}"#).unwrap();
        assert_eq!(eval.horizon, 200);
        assert_eq!(eval.splits, vec![Split::Test, Split::OodEasy, Split::OodHard]);
        eval.validate().unwrap();

        let report: ReportJob =
            serde_json::from_str(r#"{"data": "d", "sweep": "s", "top_k": 2}"#).unwrap();
        assert_eq!(report.top_k, 2);
        assert_eq!(report.horizon, 200);
        report.validate().unwrap();

        let bad: ReportJob =
            serde_json::from_str(r#"{"data": "d", "sweep": "s", "top_k": 0}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
