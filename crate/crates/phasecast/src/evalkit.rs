//! Rollout evaluation: closed-loop forecasts against clean trajectories,
//! model selection, and the cross-split report.
//!
//! A rollout seeds the model with the first `input_steps` noisy
//! observations and then feeds its own predictions back in, `output_steps`
//! at a time, until `horizon` steps exist. All trajectories of a split
//! roll as rows of one matrix: every operator in the models works row by
//! row, so one trajectory blowing up cannot leak into the others, and the
//! batch keeps going.
//!
//! Forecast error is the mean absolute error against the *clean* states
//! over `[input_steps, input_steps + horizon)`. A trajectory counts as
//! diverged from the first step containing a non-finite value or one
//! beyond [`DIVERGENCE_LIMIT`]; diverged trajectories carry no error and
//! are reported as a count instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{kernels, Tensor};
use crate::datagen::Dataset;
use crate::dynsys::SystemKind;
use crate::error::{Error, Result};
use crate::neural::{Model, Predictor};
use crate::parallel;
use crate::streams;

/// Forecast values at or beyond this magnitude mark a trajectory as
/// diverged even while still finite.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Default forecast length in grid steps.
pub const DEFAULT_HORIZON: usize = 200;

/// One batched rollout: `[n x horizon * dim]` forecast states, plus each
/// row's first diverged step, if any.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub states: Tensor,
    pub diverged_at: Vec<Option<usize>>,
}

fn rollout_core(
    input_steps: usize,
    output_steps: usize,
    dim: usize,
    seeds: &Tensor,
    horizon: usize,
    mut predict: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<RolloutBatch> {
    if horizon == 0 {
        return Err(Error::config("rollout horizon must be positive".to_string()));
    }
    if seeds.cols() != input_steps * dim {
        return Err(Error::shape(
            "rollout",
            format!(
                "seed matrix has {} columns, expected {}",
                seeds.cols(),
                input_steps * dim
            ),
        ));
    }
    let n = seeds.rows();
    let mut window = seeds.clone();
    let mut states = Tensor::zeros(n, horizon * dim);
    let mut diverged_at: Vec<Option<usize>> = vec![None; n];

    let mut filled = 0;
    while filled < horizon {
        let pred = predict(&window)?;
        if pred.rows() != n || pred.cols() != output_steps * dim {
            return Err(Error::shape(
                "rollout",
                format!(
                    "prediction is {}, expected {} x {}",
                    pred.shape_string(),
                    n,
                    output_steps * dim
                ),
            ));
        }
        let take = output_steps.min(horizon - filled);
        for r in 0..n {
            let src = pred.row_slice(r);
            let dst = &mut states.data_mut()[r * horizon * dim..(r + 1) * horizon * dim];
            dst[filled * dim..(filled + take) * dim].copy_from_slice(&src[..take * dim]);
            if diverged_at[r].is_none() {
                for s in 0..take {
                    let bad = src[s * dim..(s + 1) * dim]
                        .iter()
                        .any(|v| !v.is_finite() || v.abs() >= DIVERGENCE_LIMIT);
                    if bad {
                        diverged_at[r] = Some(filled + s);
                        break;
                    }
                }
            }
        }
        filled += take;
        if filled < horizon {
            let combined = kernels::concat_cols(&window, &pred)?;
            let w = combined.cols();
            window = kernels::slice_cols(&combined, w - input_steps * dim, w)?;
        }
    }
    Ok(RolloutBatch {
        states,
        diverged_at,
    })
}

/// Mean-path batched rollout.
pub fn rollout<P: Predictor>(model: &P, seeds: &Tensor, horizon: usize) -> Result<RolloutBatch> {
    rollout_core(
        model.input_steps(),
        model.output_steps(),
        model.state_dim(),
        seeds,
        horizon,
        |w| model.predict_windows(w),
    )
}

/// Rollout with the latent drawn instead of taken at its mean; `seed`
/// feeds the dedicated evaluation stream. Only meaningful for the
/// variational families — others fall back to the mean path.
pub fn rollout_sampled(
    model: &Model,
    seeds: &Tensor,
    horizon: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(streams::REPORT_EVAL);
    rollout_core(
        model.input_steps(),
        model.output_steps(),
        Predictor::state_dim(model),
        seeds,
        horizon,
        |w| model.predict_batch_sampled(w, &mut rng),
    )
}

/// Forecast quality of one model on one split.
#[derive(Debug, Clone)]
pub struct SplitEval {
    pub horizon: usize,
    /// Mean over non-diverged trajectories; `None` when every trajectory
    /// diverged.
    pub mae: Option<f64>,
    /// Per-trajectory MAE, `None` where diverged.
    pub per_traj: Vec<Option<f64>>,
    pub n_diverged: usize,
}

/// Compensated mean in index order, `None` on an empty iterator.
fn kahan_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    let mut n = 0usize;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Rows per job on the parallel path. Fixed, so the rows each rollout
/// sees — and therefore every bit of the result — never depend on the
/// worker count.
const EVAL_CHUNK: usize = 64;

fn check_eval_inputs(dim: usize, n_in: usize, ds: &Dataset, horizon: usize) -> Result<()> {
    if ds.state_dim() != dim {
        return Err(Error::config(format!(
            "dataset carries {}-dim states, model expects {dim}",
            ds.state_dim()
        )));
    }
    if n_in + horizon > ds.seq_len() {
        return Err(Error::config(format!(
            "seed of {n_in} steps plus horizon {horizon} exceeds {}-step sequences",
            ds.seq_len()
        )));
    }
    if ds.is_empty() {
        return Err(Error::config("cannot evaluate an empty split".to_string()));
    }
    Ok(())
}

/// Rolls rows `lo..hi` of `ds` and scores each against its clean states.
fn score_rows<P: Predictor>(
    model: &P,
    ds: &Dataset,
    horizon: usize,
    lo: usize,
    hi: usize,
) -> Result<Vec<Option<f64>>> {
    let dim = model.state_dim();
    let n_in = model.input_steps();
    let n = hi - lo;
    let mut seeds = Tensor::zeros(n, n_in * dim);
    for r in 0..n {
        seeds.data_mut()[r * n_in * dim..(r + 1) * n_in * dim]
            .copy_from_slice(&ds.noisy(lo + r)[..n_in * dim]);
    }
    let rb = rollout(model, &seeds, horizon)?;

    let mut per_traj = Vec::with_capacity(n);
    for r in 0..n {
        if rb.diverged_at[r].is_some() {
            per_traj.push(None);
            continue;
        }
        let truth = &ds.trajectory(lo + r).states()[n_in * dim..(n_in + horizon) * dim];
        let pred = rb.states.row_slice(r);
        per_traj.push(kahan_mean(
            truth.iter().zip(pred).map(|(&t, &p)| (t - p).abs()),
        ));
    }
    Ok(per_traj)
}

fn finish_eval(per_traj: Vec<Option<f64>>, horizon: usize) -> SplitEval {
    let n_diverged = per_traj.iter().filter(|m| m.is_none()).count();
    let mae = kahan_mean(per_traj.iter().filter_map(|m| *m));
    SplitEval {
        horizon,
        mae,
        per_traj,
        n_diverged,
    }
}

/// Rolls every trajectory of `ds` and scores it against the clean states.
pub fn evaluate_split<P: Predictor>(model: &P, ds: &Dataset, horizon: usize) -> Result<SplitEval> {
    check_eval_inputs(model.state_dim(), model.input_steps(), ds, horizon)?;
    let per_traj = score_rows(model, ds, horizon, 0, ds.len())?;
    Ok(finish_eval(per_traj, horizon))
}

/// [`evaluate_split`] with the rollout fanned out over fixed-width row
/// chunks. Every model operator works row by row, so the chunked result
/// is bit-identical to the sequential one; `workers` follows
/// [`parallel::run_indexed`] (`0` = all cores, `1` = sequential).
pub fn evaluate_split_with<P: Predictor + Sync>(
    model: &P,
    ds: &Dataset,
    horizon: usize,
    workers: usize,
) -> Result<SplitEval> {
    check_eval_inputs(model.state_dim(), model.input_steps(), ds, horizon)?;
    let n = ds.len();
    let n_chunks = n.div_ceil(EVAL_CHUNK);
    let chunks = parallel::run_indexed(n_chunks, workers, |c| {
        let lo = c * EVAL_CHUNK;
        let hi = ((c + 1) * EVAL_CHUNK).min(n);
        score_rows(model, ds, horizon, lo, hi)
    });
    let mut per_traj = Vec::with_capacity(n);
    for chunk in chunks {
        per_traj.extend(chunk?);
    }
    Ok(finish_eval(per_traj, horizon))
}

/// One model's claim to a place in the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Caller-side index, returned by the selection.
    pub id: usize,
    /// Validation forecast MAE; `None` means the model diverged on the
    /// validation split.
    pub val_mae: Option<f64>,
    pub seed: u64,
    pub config_hash: u32,
}

/// Picks the `k` best candidates by validation MAE, ascending. Models
/// that diverged on validation sort behind every scored one; ties break
/// by `(seed, config_hash)` so selection is deterministic.
pub fn select_top_k(candidates: &[Candidate], k: usize) -> Vec<usize> {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        match (a.val_mae, b.val_mae) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
        .then_with(|| a.seed.cmp(&b.seed))
        .then_with(|| a.config_hash.cmp(&b.config_hash))
    });
    order.into_iter().take(k).map(|c| c.id).collect()
}

/// One `(family, split)` aggregate over the selected models.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub family: String,
    pub split: String,
    /// Mean over models with a finite split MAE; NaN when none has one.
    pub mae_mean: f64,
    /// Population standard deviation over the same models; 0 for one.
    pub mae_std: f64,
    pub n_models: usize,
    /// Share of models with at least one diverged trajectory, percent.
    pub diverged_pct: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Non-fatal observations, e.g. an error ordering across splits that
    /// contradicts the expected in-distribution-to-OOD increase.
    pub warnings: Vec<String>,
}

impl Report {
    /// `system,family,split,mae_mean,mae_std,n_models,diverged_pct`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,family,split,mae_mean,mae_std,n_models,diverged_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.system, r.family, r.split, r.mae_mean, r.mae_std, r.n_models, r.diverged_pct
            ));
        }
        out
    }
}

/// The models backing one family's rows.
pub struct ReportEntry<'a> {
    pub family: String,
    pub models: Vec<&'a Model>,
}

/// Evaluates every entry's models on every split and aggregates. Rows
/// come out in entry order, splits in the given order within each entry.
pub fn build_report(
    system: SystemKind,
    entries: &[ReportEntry],
    splits: &[&Dataset],
    horizon: usize,
) -> Result<Report> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for entry in entries {
        if entry.models.is_empty() {
            return Err(Error::config(format!(
                "family {} has no models to report",
                entry.family
            )));
        }
        let mut by_split: Vec<(String, f64)> = Vec::new();
        for ds in splits {
            let split_name = ds.spec.split.name().to_string();
            let mut maes: Vec<f64> = Vec::new();
            let mut hit_divergence = 0usize;
            for model in &entry.models {
                let eval = evaluate_split(*model, ds, horizon)?;
                if eval.n_diverged > 0 {
                    hit_divergence += 1;
                }
                if let Some(m) = eval.mae {
                    maes.push(m);
                }
            }
            let n_models = entry.models.len();
            let (mae_mean, mae_std) = if maes.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = kahan_mean(maes.iter().copied()).expect("non-empty");
                let var = kahan_mean(maes.iter().map(|m| (m - mean) * (m - mean)))
                    .expect("non-empty");
                (mean, var.sqrt())
            };
            if mae_mean.is_finite() {
                by_split.push((split_name.clone(), mae_mean));
            }
            rows.push(ReportRow {
                system: system.name().to_string(),
                family: entry.family.clone(),
                split: split_name,
                mae_mean,
                mae_std,
                n_models,
                diverged_pct: 100.0 * hit_divergence as f64 / n_models as f64,
            });
        }

        let find = |name: &str| by_split.iter().find(|(s, _)| s == name).map(|&(_, m)| m);
        if let (Some(test), Some(easy), Some(hard)) =
            (find("test"), find("ood_easy"), find("ood_hard"))
        {
            if !(test <= easy && easy <= hard) {
                warnings.push(format!(
                    "{} {}: forecast error does not grow test -> ood_easy -> ood_hard \
                     ({test:.6}, {easy:.6}, {hard:.6})",
                    system.name(),
                    entry.family
                ));
            }
        }
    }
    Ok(Report { rows, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Forecasts `last state + 1` for every output step.
    struct StepUp {
        n_in: usize,
        n_out: usize,
        dim: usize,
    }

    impl Predictor for StepUp {
        fn input_steps(&self) -> usize {
            self.n_in
        }
        fn output_steps(&self) -> usize {
            self.n_out
        }
        fn state_dim(&self) -> usize {
            self.dim
        }
        fn predict_windows(&self, windows: &Tensor) -> Result<Tensor> {
            let n = windows.rows();
            let mut out = Tensor::zeros(n, self.n_out * self.dim);
            for r in 0..n {
                let w = windows.row_slice(r);
                let last = &w[(self.n_in - 1) * self.dim..];
                for s in 0..self.n_out {
                    for d in 0..self.dim {
                        out.data_mut()[r * self.n_out * self.dim + s * self.dim + d] =
                            last[d] + (s + 1) as f64;
                    }
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn rollout_refeeds_its_own_predictions() {
        // Seeds end at 10 and 20; each predicted step adds one, and the
        // window slides by n_out, so the forecast counts upward without
        // gaps across refeeds.
        let m = StepUp { n_in: 3, n_out: 2, dim: 1 };
        let seeds = Tensor::from_vec(2, 3, vec![8.0, 9.0, 10.0, 18.0, 19.0, 20.0]).unwrap();
        let rb = rollout(&m, &seeds, 5).unwrap();
        assert_eq!(rb.states.row_slice(0), &[11.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(rb.states.row_slice(1), &[21.0, 22.0, 23.0, 24.0, 25.0]);
        assert_eq!(rb.diverged_at, vec![None, None]);
    }

    /// Doubles the last state; rows seeded large enough blow past the
    /// divergence limit while others stay put.
    struct Doubler {
        n_in: usize,
        dim: usize,
    }

    impl Predictor for Doubler {
        fn input_steps(&self) -> usize {
            self.n_in
        }
        fn output_steps(&self) -> usize {
            1
        }
        fn state_dim(&self) -> usize {
            self.dim
        }
        fn predict_windows(&self, windows: &Tensor) -> Result<Tensor> {
            let n = windows.rows();
            let mut out = Tensor::zeros(n, self.dim);
            for r in 0..n {
                let w = windows.row_slice(r);
                let last = &w[(self.n_in - 1) * self.dim..];
                for d in 0..self.dim {
                    out.data_mut()[r * self.dim + d] = 2.0 * last[d];
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn divergence_stays_confined_to_its_row() {
        let m = Doubler { n_in: 1, dim: 1 };
        // Row 0 stays at zero; row 1 doubles from 1e5 and crosses 1e6
        // at step index 3 (2e5, 4e5, 8e5, 1.6e6).
        let seeds = Tensor::from_vec(2, 1, vec![0.0, 1e5]).unwrap();
        let rb = rollout(&m, &seeds, 6).unwrap();
        assert_eq!(rb.diverged_at[0], None);
        assert_eq!(rb.diverged_at[1], Some(3));
        assert_eq!(rb.states.row_slice(0), &[0.0; 6]);
    }

    #[test]
    fn selection_orders_by_val_mae_with_diverged_last() {
        let c = |id, mae: Option<f64>, seed| Candidate {
            id,
            val_mae: mae,
            seed,
            config_hash: 0xabc,
        };
        let cands = vec![
            c(0, Some(0.5), 1),
            c(1, Some(0.2), 2),
            c(2, Some(0.9), 3),
        ];
        assert_eq!(select_top_k(&cands, 2), vec![1, 0]);

        // A diverged candidate loses to any scored one regardless of seed.
        let cands = vec![c(0, None, 0), c(1, Some(3.0), 9), c(2, Some(1.0), 5)];
        assert_eq!(select_top_k(&cands, 3), vec![2, 1, 0]);

        // Exact ties fall back to the seed.
        let cands = vec![c(0, Some(1.0), 7), c(1, Some(1.0), 3)];
        assert_eq!(select_top_k(&cands, 1), vec![1]);
    }

    #[test]
    fn kahan_mean_handles_empty_and_matches_plain_mean() {
        assert_eq!(kahan_mean(std::iter::empty()), None);
        let got = kahan_mean([1.0, 2.0, 3.0, 4.0].into_iter()).unwrap();
        assert!((got - 2.5).abs() < 1e-15);
    }
}
