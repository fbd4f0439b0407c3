//! Hyperparameter grid enumeration and sweep execution.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::neural::{save_checkpoint, Family, ModelSpec};

use super::fit::{fit, StopReason, TrainConfig};

/// Axes of a sweep. Enumeration is nested in declaration order — family,
/// latent size, gamma, delta, layer norm, seed — with axes that do not
/// apply to a family collapsed to a single value, so the run list is
/// deterministic and free of duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub families: Vec<Family>,
    pub input_steps: usize,
    pub output_steps: usize,
    pub hidden: Vec<usize>,
    pub latent_sizes: Vec<usize>,
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub layer_norm: Vec<bool>,
    pub seeds: Vec<u64>,
}

/// Expands the axes into concrete model specs, validated against `system`.
pub fn enumerate_grid(
    grid: &GridSpec,
    system: crate::dynsys::SystemKind,
) -> Result<Vec<ModelSpec>> {
    if grid.families.is_empty() || grid.seeds.is_empty() {
        return Err(Error::config(
            "a grid needs at least one family and one seed".to_string(),
        ));
    }
    let one = |v: f64| vec![v];
    let mut specs = Vec::new();
    for &family in &grid.families {
        let latents: Vec<usize> = if family == Family::Lstm {
            vec![0]
        } else if grid.latent_sizes.is_empty() {
            return Err(Error::config("latent_sizes must not be empty".to_string()));
        } else {
            grid.latent_sizes.clone()
        };
        let gammas = if family.is_variational() {
            grid.gammas.clone()
        } else {
            one(1e-4)
        };
        let deltas = if family.is_supervised() {
            grid.deltas.clone()
        } else {
            one(0.0)
        };
        let norms = if family == Family::Lstm {
            vec![false]
        } else {
            grid.layer_norm.clone()
        };
        if gammas.is_empty() || deltas.is_empty() || norms.is_empty() {
            return Err(Error::config(format!(
                "family {} has an empty axis after collapsing",
                family.name()
            )));
        }
        for &latent in &latents {
            for &gamma in &gammas {
                for &delta in &deltas {
                    for &norm in &norms {
                        for &seed in &grid.seeds {
                            let spec =
                                ModelSpec::new(family, grid.input_steps, grid.output_steps, seed)
                                    .with_hidden(grid.hidden.clone())
                                    .with_latent(latent)
                                    .with_gamma(gamma)
                                    .with_delta(delta)
                                    .with_layer_norm(norm);
                            spec.validate(system)?;
                            specs.push(spec);
                        }
                    }
                }
            }
        }
    }
    Ok(specs)
}

/// One completed sweep entry; paths are relative to the sweep directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub index: usize,
    pub spec: ModelSpec,
    pub config_hash: u32,
    pub stop: StopReason,
    pub best_val: Option<f64>,
    pub record: String,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub total: usize,
    pub completed: Vec<GridRun>,
}

/// Runs the sweep sequentially, persisting each run's record and
/// checkpoint as soon as it finishes and rewriting `grid.json` after every
/// run, so an interrupted sweep leaves everything it completed. A wall
/// budget stops the sweep before launching the next run; it never cuts a
/// run short.
pub fn run_grid(
    grid: &GridSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
    budget: Option<Duration>,
) -> Result<GridSummary> {
    let specs = enumerate_grid(grid, train.system)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;
    let started = Instant::now();

    let mut summary = GridSummary {
        total: specs.len(),
        completed: Vec::new(),
    };
    for (index, spec) in specs.into_iter().enumerate() {
        if let Some(b) = budget {
            if started.elapsed() >= b && !summary.completed.is_empty() {
                break;
            }
        }
        let outcome = fit(&spec, train, val, cfg)?;

        let record_name = format!("run_{index:03}.json");
        let record_json = serde_json::to_string_pretty(&outcome.record)
            .map_err(|e| Error::format(format!("encode run record: {e}")))?;
        fs::write(out_dir.join(&record_name), record_json)
            .map_err(|e| Error::io(format!("write {record_name}"), e))?;

        let ckpt_name = format!("ckpt_{index:03}");
        save_checkpoint(&outcome.model, None, &out_dir.join(&ckpt_name))?;

        summary.completed.push(GridRun {
            index,
            spec,
            config_hash: outcome.record.config_hash,
            stop: outcome.record.stop,
            best_val: outcome.record.best_val,
            record: record_name,
            checkpoint: ckpt_name,
        });
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::format(format!("encode grid summary: {e}")))?;
        fs::write(out_dir.join("grid.json"), json)
            .map_err(|e| Error::io("write grid.json".to_string(), e))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SystemKind;

    #[test]
    fn pendulum_vae_grid_expands_to_72_runs() {
        let grid = GridSpec {
            families: vec![Family::Vae, Family::VaeSd],
            input_steps: 50,
            output_steps: 10,
            hidden: vec![400, 200],
            latent_sizes: vec![4, 8],
            gammas: vec![1e-4, 1e-2],
            deltas: vec![0.1, 1.0],
            layer_norm: vec![false, true],
            seeds: vec![1, 2, 3],
        };
        let specs = enumerate_grid(&grid, SystemKind::Pendulum).unwrap();
        // vae: 2 latents x 2 gammas x 1 delta x 2 norms x 3 seeds = 24
        // vae_sd: the same with 2 deltas = 48
        assert_eq!(specs.len(), 72);
        assert!(specs[..24].iter().all(|s| s.family == Family::Vae));
        assert!(specs[..24].iter().all(|s| s.supervision_delta == 0.0));
        assert!(specs[24..].iter().all(|s| s.family == Family::VaeSd));
        // Seeds vary fastest.
        assert_eq!(specs[0].seed, 1);
        assert_eq!(specs[1].seed, 2);
        assert_eq!(specs[2].seed, 3);
        assert_eq!(specs[3].seed, 1);
        assert!(!specs[0].layer_norm_latent && specs[3].layer_norm_latent);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let grid = GridSpec {
            families: vec![Family::VaeSsd, Family::MlpAe],
            input_steps: 20,
            output_steps: 5,
            hidden: vec![32, 16],
            latent_sizes: vec![4],
            gammas: vec![1e-4],
            deltas: vec![0.5],
            layer_norm: vec![false],
            seeds: vec![7, 8],
        };
        let a = enumerate_grid(&grid, SystemKind::LotkaVolterra).unwrap();
        let b = enumerate_grid(&grid, SystemKind::LotkaVolterra).unwrap();
        assert_eq!(a, b);
        // mlp_ae collapses gamma and delta: 1 x 1 x 1 x 1 x 2 seeds.
        assert_eq!(a.len(), 2 + 2);
    }

    #[test]
    fn invalid_member_specs_fail_the_whole_enumeration() {
        let grid = GridSpec {
            families: vec![Family::VaeSd],
            input_steps: 20,
            output_steps: 5,
            hidden: vec![32],
            latent_sizes: vec![2], // fewer than the 4 LV factors
            gammas: vec![1e-4],
            deltas: vec![0.1],
            layer_norm: vec![false],
            seeds: vec![1],
        };
        assert!(enumerate_grid(&grid, SystemKind::LotkaVolterra).is_err());
    }
}
