//! Window sampling from generated splits.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// One batch of training windows: noisy inputs, the continuation right
/// after each window as targets (noisy by default, clean on request), and
/// each source trajectory's hidden factors.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub factors: Tensor,
}

/// Draws `count` windows uniformly: trajectory index first, then a start
/// offset in `0..=T - input_steps - output_steps`, two draws per window.
pub fn sample_windows(
    ds: &Dataset,
    input_steps: usize,
    output_steps: usize,
    count: usize,
    clean_targets: bool,
    rng: &mut impl Rng,
) -> Result<WindowBatch> {
    if ds.is_empty() || count == 0 {
        return Err(Error::config(
            "window sampling needs a non-empty dataset and a positive count".to_string(),
        ));
    }
    let t = ds.seq_len();
    if input_steps + output_steps > t {
        return Err(Error::config(format!(
            "window of {input_steps} + {output_steps} steps does not fit {t}-step sequences"
        )));
    }
    let dim = ds.state_dim();
    let k = ds.factor_count();
    let max_start = t - input_steps - output_steps;

    let mut inputs = Tensor::zeros(count, input_steps * dim);
    let mut targets = Tensor::zeros(count, output_steps * dim);
    let mut factors = Tensor::zeros(count, k);
    for w in 0..count {
        let seq = rng.random_range(0..ds.len());
        let start = rng.random_range(0..=max_start);

        let noisy = ds.noisy(seq);
        let in_at = start * dim;
        inputs.data_mut()[w * input_steps * dim..(w + 1) * input_steps * dim]
            .copy_from_slice(&noisy[in_at..in_at + input_steps * dim]);

        let tgt_at = (start + input_steps) * dim;
        let tgt_src = if clean_targets {
            ds.trajectory(seq).states()
        } else {
            noisy
        };
        targets.data_mut()[w * output_steps * dim..(w + 1) * output_steps * dim]
            .copy_from_slice(&tgt_src[tgt_at..tgt_at + output_steps * dim]);

        factors.data_mut()[w * k..(w + 1) * k]
            .copy_from_slice(ds.trajectory(seq).factors().values());
    }
    Ok(WindowBatch {
        inputs,
        targets,
        factors,
    })
}
