//! Command implementations behind the `phasecast` binary.
//!
//! Each command is an ordinary function over a parsed job plus flag
//! overrides, writing its data product to `out` and progress to `log`,
//! so the whole pipeline is drivable from tests without spawning a
//! process. Data goes to stdout, diagnostics to stderr; `--dry-run`
//! validates the full job and prints the resolved plan without writing
//! anything.

use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::config::{EvalJob, GenerateJob, GridJob, ReportJob, TrainJob};
use crate::datagen::{
    build_dataset_with, canonical_ranges, read_dataset, write_dataset, Dataset, GenOptions, Split,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    build_report, evaluate_split, evaluate_split_with, select_top_k, Candidate, ReportEntry,
};
use crate::neural::{load_checkpoint, save_checkpoint, Model, Predictor, TrainState};
use crate::trainer::{fit, run_grid, StopReason};
use crate::{streams, trainer};

/// Flag overrides shared across commands; every field defaults to "use
/// the job file".
#[derive(Debug, Clone, Default)]
pub struct CmdOpts {
    pub seed: Option<u64>,
    /// `0` = all cores, `1` = sequential.
    pub workers: Option<usize>,
    pub horizon: Option<usize>,
    pub force: bool,
    pub dry_run: bool,
}

fn emit(w: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(w, "{text}").map_err(|e| Error::io("write output".to_string(), e))
}

fn emit_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("encode output: {e}")))?;
    emit(w, &json)
}

/// Refuses to clobber `dir` unless `force` was given. A forced rerun
/// overwrites the files inside rather than deleting the directory.
fn guard_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        return Err(Error::config(format!(
            "{} already exists; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

/// Decorrelates the per-split generator seeds: splits of one job must
/// not replay each other's factor draws, which they would under a shared
/// seed because sequence streams restart at zero in every split.
fn split_seed(seed: u64, split: Split) -> u64 {
    let idx = Split::ALL.iter().position(|&s| s == split).unwrap() as u64;
    seed.wrapping_add(idx.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Serialize)]
struct GeneratedSplit {
    split: String,
    n_sequences: usize,
    seq_len: usize,
    dir: String,
}

#[derive(Debug, Serialize)]
struct GenerateOutput {
    system: String,
    seed: u64,
    splits: Vec<GeneratedSplit>,
}

pub fn cmd_generate(
    job: &GenerateJob,
    out_dir: &Path,
    opts: &CmdOpts,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    job.validate()?;
    let seed = opts.seed.unwrap_or(job.seed);
    let splits = job.splits();

    let mut specs = Vec::with_capacity(splits.len());
    for &split in &splits {
        let mut spec = SplitSpec::canonical(job.system, split);
        if let Some(n) = job.counts.as_ref().and_then(|c| c.get(split)) {
            spec = spec.with_count(n);
        }
        spec.validate(job.system)?;
        specs.push(spec);
    }

    if opts.dry_run {
        for spec in &specs {
            emit(
                out,
                &format!(
                    "plan {}/{}: {} sequences x {} steps -> {}",
                    job.system.name(),
                    spec.split.name(),
                    spec.n_sequences,
                    spec.seq_len,
                    out_dir.join(spec.split.name()).display()
                ),
            )?;
        }
        return Ok(());
    }

    for spec in &specs {
        guard_out_dir(&out_dir.join(spec.split.name()), opts.force)?;
    }

    let gen_opts = GenOptions {
        tol: job.tol.unwrap_or(crate::dynsys::DEFAULT_TOL),
        coupling: job.coupling.unwrap_or_default(),
        workers: opts.workers.unwrap_or(0),
    };
    let train_ranges = canonical_ranges(job.system, Split::Train);

    let mut written = Vec::with_capacity(specs.len());
    for spec in &specs {
        let started = Instant::now();
        let ds = build_dataset_with(job.system, spec, &train_ranges, split_seed(seed, spec.split), gen_opts)?;
        let dir = out_dir.join(spec.split.name());
        write_dataset(&ds, &dir)?;
        emit(
            log,
            &format!(
                "generated {}: {} sequences in {:.1}s -> {}",
                spec.split.name(),
                ds.len(),
                started.elapsed().as_secs_f64(),
                dir.display()
            ),
        )?;
        written.push(GeneratedSplit {
            split: spec.split.name().to_string(),
            n_sequences: ds.len(),
            seq_len: ds.seq_len(),
            dir: dir.display().to_string(),
        });
    }

    emit_json(
        out,
        &GenerateOutput {
            system: job.system.name().to_string(),
            seed,
            splits: written,
        },
    )
}

#[derive(Debug, Serialize)]
struct TrainOutput {
    system: String,
    family: String,
    config_hash: u32,
    stop: StopReason,
    best_epoch: usize,
    best_val: Option<f64>,
    epochs_run: usize,
    record: String,
    checkpoint: String,
}

pub fn cmd_train(
    job: &TrainJob,
    out_dir: &Path,
    opts: &CmdOpts,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    job.train.validate()?;
    let train = read_dataset(&job.data.join(Split::Train.name()))?;
    let val = read_dataset(&job.data.join(Split::Val.name()))?;
    job.spec.validate(train.system)?;

    if opts.dry_run {
        #[derive(Serialize)]
        struct Plan<'a> {
            system: String,
            spec: &'a crate::neural::ModelSpec,
            train: &'a trainer::TrainConfig,
            out_dir: String,
        }
        return emit_json(
            out,
            &Plan {
                system: train.system.name().to_string(),
                spec: &job.spec,
                train: &job.train,
                out_dir: out_dir.display().to_string(),
            },
        );
    }

    guard_out_dir(out_dir, opts.force)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;

    let outcome = fit(&job.spec, &train, &val, &job.train)?;
    emit(
        log,
        &format!(
            "trained {} on {}: stop={:?} best_val={:?} wall={:.1}s",
            job.spec.family.name(),
            train.system.name(),
            outcome.record.stop,
            outcome.record.best_val,
            outcome.wall.as_secs_f64()
        ),
    )?;

    let record_json = serde_json::to_string_pretty(&outcome.record)
        .map_err(|e| Error::format(format!("encode run record: {e}")))?;
    let record_path = out_dir.join("record.json");
    fs::write(&record_path, record_json)
        .map_err(|e| Error::io(format!("write {}", record_path.display()), e))?;

    let last_lr = outcome
        .record
        .epochs
        .last()
        .map_or(job.train.lr, |e| e.lr);
    let state = outcome.record.best_val.map(|bv| TrainState {
        epoch: outcome.record.best_epoch,
        lr: last_lr,
        best_val: bv,
    });
    let ckpt_path = out_dir.join("checkpoint");
    save_checkpoint(&outcome.model, state.as_ref(), &ckpt_path)?;

    emit_json(
        out,
        &TrainOutput {
            system: train.system.name().to_string(),
            family: job.spec.family.name().to_string(),
            config_hash: outcome.record.config_hash,
            stop: outcome.record.stop,
            best_epoch: outcome.record.best_epoch,
            best_val: outcome.record.best_val,
            epochs_run: outcome.record.epochs.len(),
            record: record_path.display().to_string(),
            checkpoint: ckpt_path.display().to_string(),
        },
    )
}

pub fn cmd_grid(
    job: &GridJob,
    out_dir: &Path,
    opts: &CmdOpts,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    job.train.validate()?;
    let train = read_dataset(&job.data.join(Split::Train.name()))?;
    let val = read_dataset(&job.data.join(Split::Val.name()))?;
    let specs = trainer::enumerate_grid(&job.grid, train.system)?;

    if opts.dry_run {
        #[derive(Serialize)]
        struct Plan<'a> {
            system: String,
            total: usize,
            runs: &'a [crate::neural::ModelSpec],
        }
        return emit_json(
            out,
            &Plan {
                system: train.system.name().to_string(),
                total: specs.len(),
                runs: &specs,
            },
        );
    }

    guard_out_dir(out_dir, opts.force)?;
    emit(log, &format!("sweep: {} runs", specs.len()))?;
    let started = Instant::now();
    let budget = job.budget_secs.map(std::time::Duration::from_secs);
    let summary = run_grid(&job.grid, &train, &val, &job.train, out_dir, budget)?;
    emit(
        log,
        &format!(
            "completed {}/{} runs in {:.1}s -> {}",
            summary.completed.len(),
            summary.total,
            started.elapsed().as_secs_f64(),
            out_dir.display()
        ),
    )?;
    emit_json(out, &summary)
}

/// Closed-loop prediction with latents drawn rather than taken at their
/// means; mirrors the deterministic `Predictor` path apart from the
/// sampling noise.
struct SampledPredictor<'a> {
    model: &'a Model,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a> SampledPredictor<'a> {
    fn new(model: &'a Model, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(streams::REPORT_EVAL);
        SampledPredictor {
            model,
            rng: RefCell::new(rng),
        }
    }
}

impl Predictor for SampledPredictor<'_> {
    fn input_steps(&self) -> usize {
        self.model.input_steps()
    }

    fn output_steps(&self) -> usize {
        self.model.output_steps()
    }

    fn state_dim(&self) -> usize {
        Predictor::state_dim(self.model)
    }

    fn predict_windows(&self, windows: &Tensor) -> Result<Tensor> {
        self.model.predict_batch_sampled(windows, &mut *self.rng.borrow_mut())
    }
}

#[derive(Debug, Serialize)]
struct EvalSplitOutput {
    split: String,
    n_sequences: usize,
    /// `None` when every trajectory diverged.
    mae: Option<f64>,
    n_diverged: usize,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    system: String,
    family: String,
    horizon: usize,
    sampled: bool,
    splits: Vec<EvalSplitOutput>,
}

pub fn cmd_eval(
    job: &EvalJob,
    opts: &CmdOpts,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    job.validate()?;
    let horizon = opts.horizon.unwrap_or(job.horizon);
    let (model, _) = load_checkpoint(&job.checkpoint)?;

    if opts.dry_run {
        #[derive(Serialize)]
        struct Plan {
            system: String,
            family: String,
            horizon: usize,
            splits: Vec<String>,
        }
        return emit_json(
            out,
            &Plan {
                system: model.system().name().to_string(),
                family: model.family().name().to_string(),
                horizon,
                splits: job.splits.iter().map(|s| s.name().to_string()).collect(),
            },
        );
    }

    let mut results = Vec::with_capacity(job.splits.len());
    for &split in &job.splits {
        let ds = read_dataset(&job.data.join(split.name()))?;
        if ds.system != model.system() {
            return Err(Error::config(format!(
                "checkpoint was trained on {}, split {} holds {}",
                model.system().name(),
                split.name(),
                ds.system.name()
            )));
        }
        // Sampled rollouts consume one shared random stream and must stay
        // sequential; the mean path fans out.
        let eval = match job.sample_seed {
            Some(seed) => evaluate_split(&SampledPredictor::new(&model, seed), &ds, horizon)?,
            None => evaluate_split_with(&model, &ds, horizon, opts.workers.unwrap_or(0))?,
        };
        emit(
            log,
            &format!(
                "evaluated {}: mae={:?} diverged={}/{}",
                split.name(),
                eval.mae,
                eval.n_diverged,
                ds.len()
            ),
        )?;
        results.push(EvalSplitOutput {
            split: split.name().to_string(),
            n_sequences: ds.len(),
            mae: eval.mae,
            n_diverged: eval.n_diverged,
        });
    }

    emit_json(
        out,
        &EvalOutput {
            system: model.system().name().to_string(),
            family: model.family().name().to_string(),
            horizon,
            sampled: job.sample_seed.is_some(),
            splits: results,
        },
    )
}

pub fn cmd_report(
    job: &ReportJob,
    out_file: Option<&Path>,
    opts: &CmdOpts,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    job.validate()?;
    let horizon = opts.horizon.unwrap_or(job.horizon);

    let summary_path = job.sweep.join("grid.json");
    let text = fs::read_to_string(&summary_path)
        .map_err(|e| Error::io(format!("read {}", summary_path.display()), e))?;
    let summary: trainer::GridSummary = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", summary_path.display())))?;
    if summary.completed.is_empty() {
        return Err(Error::config("sweep has no completed runs"));
    }

    // Family groups in first-appearance order, which the sweep
    // enumeration makes the grid's family order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, run) in summary.completed.iter().enumerate() {
        let name = run.spec.family.name().to_string();
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, members)) => members.push(i),
            None => groups.push((name, vec![i])),
        }
    }

    if opts.dry_run {
        #[derive(Serialize)]
        struct Plan {
            families: Vec<(String, usize)>,
            top_k: usize,
            horizon: usize,
            splits: Vec<String>,
        }
        return emit_json(
            out,
            &Plan {
                families: groups.iter().map(|(n, m)| (n.clone(), m.len())).collect(),
                top_k: job.top_k,
                horizon,
                splits: job.splits.iter().map(|s| s.name().to_string()).collect(),
            },
        );
    }

    if let Some(path) = out_file {
        guard_out_dir(path, opts.force)?;
    }

    let val = read_dataset(&job.data.join(Split::Val.name()))?;
    let mut split_data = Vec::with_capacity(job.splits.len());
    for &split in &job.splits {
        split_data.push(read_dataset(&job.data.join(split.name()))?);
    }

    let mut models = Vec::with_capacity(summary.completed.len());
    for run in &summary.completed {
        let (model, _) = load_checkpoint(&job.sweep.join(&run.checkpoint))?;
        if model.system() != val.system {
            return Err(Error::config(format!(
                "run {} was trained on {}, data holds {}",
                run.index,
                model.system().name(),
                val.system.name()
            )));
        }
        models.push(model);
    }

    // Rank each family's runs by validation forecast error and keep the
    // best `top_k`.
    let mut entries = Vec::with_capacity(groups.len());
    for (family, members) in &groups {
        let mut candidates = Vec::with_capacity(members.len());
        for &m in members {
            let eval = evaluate_split_with(&models[m], &val, horizon, opts.workers.unwrap_or(0))?;
            let run = &summary.completed[m];
            candidates.push(Candidate {
                id: m,
                val_mae: eval.mae,
                seed: run.spec.seed,
                config_hash: run.config_hash,
            });
        }
        let kept = select_top_k(&candidates, job.top_k);
        emit(
            log,
            &format!(
                "{family}: kept {} of {} runs by val mae",
                kept.len(),
                members.len()
            ),
        )?;
        // `select_top_k` hands back the caller-side ids, which here are
        // indices into the full run list, not into `candidates`.
        entries.push(ReportEntry {
            family: family.clone(),
            models: kept.iter().map(|&id| &models[id]).collect(),
        });
    }

    let split_refs: Vec<&Dataset> = split_data.iter().collect();
    let report = build_report(val.system, &entries, &split_refs, horizon)?;
    for w in &report.warnings {
        emit(log, &format!("warning: {w}"))?;
    }

    let csv = report.to_csv();
    match out_file {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
            emit(log, &format!("wrote report -> {}", path.display()))?;
        }
        None => {
            write!(out, "{csv}").map_err(|e| Error::io("write output".to_string(), e))?;
        }
    }
    Ok(())
}
