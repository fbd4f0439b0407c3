//! Dataset construction: factor sampling per split, trajectory simulation,
//! observation noise, and persistence.
//!
//! A dataset is one split of one system: `n_sequences` trajectories whose
//! hidden factors are drawn uniformly from per-split ranges. The two
//! out-of-distribution splits additionally reject any draw that lands
//! entirely inside the training ranges, so every OOD sequence has at least
//! one factor outside what the models saw during training.
//!
//! Determinism contract: sequence `i` derives its RNG from
//! `(seed, stream = i)`, so datasets are reproducible bit-for-bit and
//! independent of how many workers generated them.

pub mod format;

pub use format::{read_dataset, write_dataset};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynsys::{self, FactorVector, SystemKind, ThreeBodyCoupling, Trajectory};
use crate::error::{Error, Result};
use crate::parallel;

/// Attempt budget for rejection sampling of out-of-distribution factors.
const OOD_DRAW_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    OodEasy,
    OodHard,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Val, Split::Test, Split::OodEasy, Split::OodHard];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::OodEasy => "ood_easy",
            Split::OodHard => "ood_hard",
        }
    }

    pub fn is_ood(self) -> bool {
        matches!(self, Split::OodEasy | Split::OodHard)
    }
}

/// Everything needed to generate one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split: Split,
    /// Per-factor `[min, max)` sampling ranges, ordered like the system's
    /// factor names.
    pub factor_ranges: Vec<(f64, f64)>,
    pub n_sequences: usize,
    /// Variance of the additive Gaussian observation noise.
    pub noise_var: f64,
    /// Trajectory length; always the system's canonical length.
    pub seq_len: usize,
}

impl SplitSpec {
    /// Canonical spec for one split of one system, with the default
    /// sequence counts (8000 train, 1000 for every other split).
    pub fn canonical(kind: SystemKind, split: Split) -> SplitSpec {
        let n_sequences = match split {
            Split::Train => 8000,
            _ => 1000,
        };
        SplitSpec {
            split,
            factor_ranges: canonical_ranges(kind, split),
            n_sequences,
            noise_var: match kind {
                SystemKind::Pendulum | SystemKind::LotkaVolterra => 0.05,
                SystemKind::ThreeBody => 0.01,
            },
            seq_len: kind.seq_len(),
        }
    }

    pub fn with_count(mut self, n_sequences: usize) -> SplitSpec {
        self.n_sequences = n_sequences;
        self
    }

    pub fn validate(&self, kind: SystemKind) -> Result<()> {
        if self.factor_ranges.len() != kind.factor_count() {
            return Err(Error::config(format!(
                "{} needs {} factor ranges, got {}",
                kind.name(),
                kind.factor_count(),
                self.factor_ranges.len()
            )));
        }
        for (name, &(lo, hi)) in kind.factor_names().iter().zip(&self.factor_ranges) {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) || lo <= 0.0 {
                return Err(Error::config(format!(
                    "range for factor {name} must be positive with min < max, got [{lo}, {hi}]"
                )));
            }
        }
        if self.n_sequences == 0 {
            return Err(Error::config("split needs at least one sequence".to_string()));
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::config(format!(
                "noise variance must be finite and non-negative, got {}",
                self.noise_var
            )));
        }
        if self.seq_len != kind.seq_len() {
            return Err(Error::config(format!(
                "{} trajectories are {} steps, spec says {}",
                kind.name(),
                kind.seq_len(),
                self.seq_len
            )));
        }
        Ok(())
    }
}

/// Canonical factor ranges per system and split.
pub fn canonical_ranges(kind: SystemKind, split: Split) -> Vec<(f64, f64)> {
    match kind {
        SystemKind::Pendulum => match split {
            Split::Train | Split::Val | Split::Test => vec![(1.0, 1.5)],
            Split::OodEasy => vec![(1.5, 1.6)],
            Split::OodHard => vec![(0.9, 1.0)],
        },
        SystemKind::LotkaVolterra => {
            // Factors [alpha, beta, gamma, delta]; the OOD splits widen each
            // training range symmetrically by 0.01 (easy) or 0.02 (hard).
            let base = [(1.95, 2.05), (0.95, 1.05), (3.95, 4.05), (1.95, 2.05)];
            widen(&base, split)
        }
        SystemKind::ThreeBody => {
            let base = [(1.95, 2.05); 4];
            widen(&base, split)
        }
    }
}

fn widen(base: &[(f64, f64); 4], split: Split) -> Vec<(f64, f64)> {
    let pad = match split {
        Split::Train | Split::Val | Split::Test => 0.0,
        Split::OodEasy => 0.01,
        Split::OodHard => 0.02,
    };
    base.iter().map(|&(lo, hi)| (lo - pad, hi + pad)).collect()
}

/// The five canonical split specs for a system.
pub fn canonical_splits(kind: SystemKind) -> Vec<SplitSpec> {
    Split::ALL.iter().map(|&s| SplitSpec::canonical(kind, s)).collect()
}

/// Draws one factor configuration for `spec`. For OOD splits the draw is
/// rejected until at least one factor falls outside the training ranges;
/// exhausting the attempt budget is a configuration error.
pub fn sample_factors(
    kind: SystemKind,
    spec: &SplitSpec,
    train_ranges: &[(f64, f64)],
    rng: &mut impl Rng,
) -> Result<FactorVector> {
    if spec.split.is_ood() && train_ranges.len() != spec.factor_ranges.len() {
        return Err(Error::config(format!(
            "OOD rejection needs {} training ranges, got {}",
            spec.factor_ranges.len(),
            train_ranges.len()
        )));
    }
    let draw = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        spec.factor_ranges
            .iter()
            .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect()
    };
    if !spec.split.is_ood() {
        return FactorVector::new(kind, draw(rng));
    }
    for _ in 0..OOD_DRAW_LIMIT {
        let values = draw(rng);
        let outside = values
            .iter()
            .zip(train_ranges)
            .any(|(&v, &(lo, hi))| v < lo || v > hi);
        if outside {
            return FactorVector::new(kind, values);
        }
    }
    Err(Error::config(format!(
        "no out-of-distribution draw found in {OOD_DRAW_LIMIT} attempts; \
         split ranges may coincide with the training ranges"
    )))
}

/// Initial state for one sequence. The pendulum starts at a uniformly
/// random angle between 10 and 170 degrees with zero velocity; the other
/// systems use fixed initial conditions.
pub fn initial_state(kind: SystemKind, rng: &mut impl Rng) -> Vec<f64> {
    match kind {
        SystemKind::Pendulum => {
            let deg = 10.0 + rng.random::<f64>() * 160.0;
            vec![deg.to_radians(), 0.0]
        }
        SystemKind::LotkaVolterra => vec![5.0, 3.0],
        SystemKind::ThreeBody => vec![
            -1.0, -1.0, 1.0, -1.0, 0.0, 1.0, //
            0.0, 0.5, 0.5, -0.5, -0.5, 0.0,
        ],
    }
}

/// Adds i.i.d. Gaussian noise with variance `var` to every entry. Zero
/// variance returns the clean data unchanged, bit for bit.
pub fn add_noise(clean: &[f64], var: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(var >= 0.0) || !var.is_finite() {
        return Err(Error::config(format!("noise variance must be non-negative, got {var}")));
    }
    if var == 0.0 {
        return Ok(clean.to_vec());
    }
    let normal = Normal::new(0.0, var.sqrt())
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
    Ok(clean.iter().map(|&v| v + normal.sample(rng)).collect())
}

/// One generated split: clean trajectories plus their noisy observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub system: SystemKind,
    pub spec: SplitSpec,
    pub seed: u64,
    trajectories: Vec<Trajectory>,
    /// Noisy observations, same layout as each trajectory's states.
    noisy: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        system: SystemKind,
        spec: SplitSpec,
        seed: u64,
        trajectories: Vec<Trajectory>,
        noisy: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if trajectories.len() != spec.n_sequences || noisy.len() != spec.n_sequences {
            return Err(Error::shape(
                "Dataset::new",
                format!(
                    "spec promises {} sequences, got {} trajectories and {} noisy buffers",
                    spec.n_sequences,
                    trajectories.len(),
                    noisy.len()
                ),
            ));
        }
        for (i, (t, n)) in trajectories.iter().zip(&noisy).enumerate() {
            if t.system() != system || t.n_steps() != spec.seq_len {
                return Err(Error::shape(
                    "Dataset::new",
                    format!("trajectory {i} does not match the split spec"),
                ));
            }
            if n.len() != t.states().len() {
                return Err(Error::shape(
                    "Dataset::new",
                    format!("noisy buffer {i} has {} entries, expected {}", n.len(), t.states().len()),
                ));
            }
        }
        Ok(Dataset {
            system,
            spec,
            seed,
            trajectories,
            noisy,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Flat noisy observations of sequence `i`, row-major `[seq_len x dim]`.
    pub fn noisy(&self, i: usize) -> &[f64] {
        &self.noisy[i]
    }

    /// Noisy state of sequence `i` at grid index `t`.
    pub fn noisy_state(&self, i: usize, t: usize) -> &[f64] {
        let dim = self.system.state_dim();
        &self.noisy[i][t * dim..(t + 1) * dim]
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn seq_len(&self) -> usize {
        self.spec.seq_len
    }

    pub fn factor_count(&self) -> usize {
        self.system.factor_count()
    }
}

/// Generation options beyond the split spec itself.
#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub tol: f64,
    pub coupling: ThreeBodyCoupling,
    /// `0` = all cores, `1` = sequential.
    pub workers: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            tol: dynsys::DEFAULT_TOL,
            coupling: ThreeBodyCoupling::default(),
            workers: 0,
        }
    }
}

/// Generates one split. `train_ranges` are the training-factor ranges the
/// OOD rejection tests against; for in-distribution splits they are
/// ignored (pass the split's own ranges).
///
/// Sequence `i` uses RNG stream `i` of `seed` for its factor draw, initial
/// state, and noise, in that order.
pub fn build_dataset(
    kind: SystemKind,
    spec: &SplitSpec,
    train_ranges: &[(f64, f64)],
    seed: u64,
) -> Result<Dataset> {
    build_dataset_with(kind, spec, train_ranges, seed, GenOptions::default())
}

pub fn build_dataset_with(
    kind: SystemKind,
    spec: &SplitSpec,
    train_ranges: &[(f64, f64)],
    seed: u64,
    opts: GenOptions,
) -> Result<Dataset> {
    spec.validate(kind)?;

    let results = parallel::run_indexed(spec.n_sequences, opts.workers, |i| -> Result<(Trajectory, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let factors = sample_factors(kind, spec, train_ranges, &mut rng)?;
        let init = initial_state(kind, &mut rng);
        let traj = dynsys::integrate_with(
            kind,
            &factors,
            &init,
            spec.seq_len,
            dynsys::DT,
            opts.tol,
            opts.coupling,
        )
        .map_err(|e| Error::numerics(format!("sequence {i}: {e}")))?;
        let noisy = add_noise(traj.states(), spec.noise_var, &mut rng)?;
        Ok((traj, noisy))
    });

    let mut trajectories = Vec::with_capacity(spec.n_sequences);
    let mut noisy = Vec::with_capacity(spec.n_sequences);
    for r in results {
        let (t, n) = r?;
        trajectories.push(t);
        noisy.push(n);
    }
    Dataset::new(kind, spec.clone(), seed, trajectories, noisy)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// RngCore over a fixed queue of u64 words; `random::<f64>()` consumes
    /// one word as `(w >> 11) / 2^53`.
    struct QueueRng {
        words: Vec<u64>,
        next: usize,
    }

    impl QueueRng {
        fn from_unit(us: &[f64]) -> Self {
            QueueRng {
                words: us.iter().map(|&u| (u * (1u64 << 53) as f64) as u64 * (1 << 11)).collect(),
                next: 0,
            }
        }
    }

    impl rand::RngCore for QueueRng {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }

        fn next_u64(&mut self) -> u64 {
            let w = self.words[self.next % self.words.len()];
            self.next += 1;
            w
        }

        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for chunk in dest.chunks_mut(8) {
                let bytes = self.next_u64().to_le_bytes();
                chunk.copy_from_slice(&bytes[..chunk.len()]);
            }
        }
    }

    #[test]
    fn pendulum_midpoint_initial_angle_is_ninety_degrees() {
        let mut rng = QueueRng::from_unit(&[0.5]);
        let s = initial_state(SystemKind::Pendulum, &mut rng);
        assert!((s[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn fixed_initial_states_match_reference_configuration() {
        let mut rng = QueueRng::from_unit(&[0.5]);
        assert_eq!(initial_state(SystemKind::LotkaVolterra, &mut rng), vec![5.0, 3.0]);
        let tb = initial_state(SystemKind::ThreeBody, &mut rng);
        assert_eq!(&tb[..6], &[-1.0, -1.0, 1.0, -1.0, 0.0, 1.0]);
        assert_eq!(&tb[6..], &[0.0, 0.5, 0.5, -0.5, -0.5, 0.0]);
    }

    #[test]
    fn ood_draw_inside_training_ranges_is_rejected() {
        let kind = SystemKind::LotkaVolterra;
        let spec = SplitSpec::canonical(kind, Split::OodEasy);
        let train = canonical_ranges(kind, Split::Train);
        // First attempt: all four factors dead center (inside training).
        // Second attempt: alpha at the low edge of the widened range.
        let mut rng = QueueRng::from_unit(&[0.5, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5]);
        let f = sample_factors(kind, &spec, &train, &mut rng).unwrap();
        assert_eq!(rng.next, 8, "first draw must have been rejected");
        assert!((f.values()[0] - 1.94).abs() < 1e-12);
    }

    #[test]
    fn pendulum_ood_hard_factors_never_in_training_range() {
        let kind = SystemKind::Pendulum;
        let spec = SplitSpec::canonical(kind, Split::OodHard).with_count(200);
        let train = canonical_ranges(kind, Split::Train);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let f = sample_factors(kind, &spec, &train, &mut rng).unwrap();
            let l = f.values()[0];
            assert!((0.9..1.0).contains(&l), "l = {l}");
        }
    }

    #[test]
    fn factor_draws_cover_deciles_uniformly() {
        let kind = SystemKind::LotkaVolterra;
        let spec = SplitSpec::canonical(kind, Split::Train);
        let train = canonical_ranges(kind, Split::Train);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![[0usize; 10]; 4];
        for _ in 0..1000 {
            let f = sample_factors(kind, &spec, &train, &mut rng).unwrap();
            for (j, (&v, &(lo, hi))) in f.values().iter().zip(&spec.factor_ranges).enumerate() {
                let d = (((v - lo) / (hi - lo) * 10.0) as usize).min(9);
                counts[j][d] += 1;
            }
        }
        for j in 0..4 {
            for d in 0..10 {
                assert!(
                    (70..=130).contains(&counts[j][d]),
                    "factor {j} decile {d}: {}",
                    counts[j][d]
                );
            }
        }
    }

    #[test]
    fn zero_variance_noise_is_identity() {
        let clean = vec![0.1, -0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = add_noise(&clean, 0.0, &mut rng).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn noise_statistics_match_requested_variance() {
        let clean = vec![0.0; 100_000];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = add_noise(&clean, 0.05, &mut rng).unwrap();
        let mean: f64 = noisy.iter().sum::<f64>() / noisy.len() as f64;
        let var: f64 = noisy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / noisy.len() as f64;
        assert!(mean.abs() < 3e-3, "mean {mean}");
        assert!((var - 0.05).abs() < 2e-3, "var {var}");
    }

    #[test]
    fn build_dataset_is_reproducible_and_worker_independent() {
        let kind = SystemKind::Pendulum;
        let spec = SplitSpec::canonical(kind, Split::Train).with_count(6);
        let ranges = spec.factor_ranges.clone();
        let seq = build_dataset_with(
            kind,
            &spec,
            &ranges,
            42,
            GenOptions { workers: 1, ..GenOptions::default() },
        )
        .unwrap();
        let par = build_dataset_with(
            kind,
            &spec,
            &ranges,
            42,
            GenOptions { workers: 0, ..GenOptions::default() },
        )
        .unwrap();
        for i in 0..6 {
            assert_eq!(seq.trajectory(i).states(), par.trajectory(i).states());
            assert_eq!(seq.noisy(i), par.noisy(i));
            assert_eq!(seq.trajectory(i).factors(), par.trajectory(i).factors());
        }
    }

    #[test]
    fn seed_changes_content() {
        let kind = SystemKind::Pendulum;
        let spec = SplitSpec::canonical(kind, Split::Val).with_count(2);
        let ranges = spec.factor_ranges.clone();
        let a = build_dataset(kind, &spec, &ranges, 1).unwrap();
        let b = build_dataset(kind, &spec, &ranges, 2).unwrap();
        assert_ne!(a.trajectory(0).factors(), b.trajectory(0).factors());
    }

    #[test]
    fn split_spec_rejects_wrong_seq_len() {
        let mut spec = SplitSpec::canonical(SystemKind::Pendulum, Split::Train);
        spec.seq_len = 1000;
        assert!(spec.validate(SystemKind::Pendulum).is_err());
    }
}
