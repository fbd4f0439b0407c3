//! On-disk dataset layout (`DYNSET`, version 1).
//!
//! A dataset directory holds `meta.json` plus three flat binary files of
//! little-endian `f64`:
//!
//! * `states.bin`: clean trajectories, row-major `[sequence][time][dim]`
//! * `noisy.bin`: noisy observations, same layout
//! * `factors.bin`: hidden factors, `[sequence][factor]`
//!
//! The metadata records shapes, ranges, the generation seed, and a CRC32
//! per binary file. Readers validate byte counts against the declared
//! shapes and verify every checksum before handing data out, so silent
//! truncation or corruption surfaces as a format error instead of NaNs in
//! a training run.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynsys::{FactorVector, SystemKind, Trajectory};
use crate::error::{Error, Result};

use super::{Dataset, SplitSpec};

pub const FORMAT_NAME: &str = "DYNSET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FileMeta {
    pub(crate) bytes: u64,
    pub(crate) crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format: String,
    version: u32,
    system: SystemKind,
    spec: SplitSpec,
    factor_names: Vec<String>,
    state_dim: usize,
    dt: f64,
    seed: u64,
    states: FileMeta,
    noisy: FileMeta,
    factors: FileMeta,
}

pub(crate) fn write_f64_file(path: &Path, values: impl Iterator<Item = f64>) -> Result<FileMeta> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut writer = std::io::BufWriter::new(file);
    let mut hasher = crc32fast::Hasher::new();
    let mut bytes = 0u64;
    for v in values {
        let le = v.to_le_bytes();
        hasher.update(&le);
        writer
            .write_all(&le)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
        bytes += 8;
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("flush {}", path.display()), e))?;
    Ok(FileMeta {
        bytes,
        crc32: hasher.finalize(),
    })
}

pub(crate) fn read_f64_file(path: &Path, expect: &FileMeta, what: &str) -> Result<Vec<f64>> {
    let mut file = fs::File::open(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    if raw.len() as u64 != expect.bytes {
        return Err(Error::format(format!(
            "{what}: expected {} bytes, found {}",
            expect.bytes,
            raw.len()
        )));
    }
    let crc = crc32fast::hash(&raw);
    if crc != expect.crc32 {
        return Err(Error::format(format!(
            "{what}: checksum mismatch (expected {:#010x}, found {crc:#010x})",
            expect.crc32
        )));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes `ds` into `dir`, creating the directory if needed. Existing
/// files are overwritten; callers guard against clobbering.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;

    let states = write_f64_file(
        &dir.join("states.bin"),
        ds.trajectories().iter().flat_map(|t| t.states().iter().copied()),
    )?;
    let noisy = write_f64_file(
        &dir.join("noisy.bin"),
        (0..ds.len()).flat_map(|i| ds.noisy(i).iter().copied()),
    )?;
    let factors = write_f64_file(
        &dir.join("factors.bin"),
        ds.trajectories()
            .iter()
            .flat_map(|t| t.factors().values().iter().copied()),
    )?;

    let meta = DatasetMeta {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        system: ds.system,
        spec: ds.spec.clone(),
        factor_names: ds.system.factor_names().iter().map(|s| s.to_string()).collect(),
        state_dim: ds.system.state_dim(),
        dt: crate::dynsys::DT,
        seed: ds.seed,
        states,
        noisy,
        factors,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::format(format!("encode meta: {e}")))?;
    fs::write(dir.join("meta.json"), json)
        .map_err(|e| Error::io(format!("write {}", dir.join("meta.json").display()), e))?;
    Ok(())
}

/// Reads a dataset directory back, verifying shapes and checksums.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_raw = fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(format!("read {}", meta_path.display()), e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_raw)
        .map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?;

    if meta.format != FORMAT_NAME {
        return Err(Error::format(format!("unknown format {:?}", meta.format)));
    }
    if meta.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported version {} (reader supports {FORMAT_VERSION})",
            meta.version
        )));
    }
    let kind = meta.system;
    meta.spec.validate(kind)?;
    if meta.state_dim != kind.state_dim() {
        return Err(Error::format(format!(
            "meta declares state_dim {}, {} has {}",
            meta.state_dim,
            kind.name(),
            kind.state_dim()
        )));
    }

    let n = meta.spec.n_sequences;
    let t = meta.spec.seq_len;
    let dim = kind.state_dim();
    let k = kind.factor_count();

    let expect_states = (n * t * dim * 8) as u64;
    if meta.states.bytes != expect_states {
        return Err(Error::format(format!(
            "meta shape [{n} x {t} x {dim}] implies {expect_states} state bytes, meta declares {}",
            meta.states.bytes
        )));
    }
    if meta.noisy.bytes != expect_states {
        return Err(Error::format(format!(
            "meta shape implies {expect_states} noisy bytes, meta declares {}",
            meta.noisy.bytes
        )));
    }
    let expect_factors = (n * k * 8) as u64;
    if meta.factors.bytes != expect_factors {
        return Err(Error::format(format!(
            "meta shape implies {expect_factors} factor bytes, meta declares {}",
            meta.factors.bytes
        )));
    }

    let states = read_f64_file(&dir.join("states.bin"), &meta.states, "states.bin")?;
    let noisy_flat = read_f64_file(&dir.join("noisy.bin"), &meta.noisy, "noisy.bin")?;
    let factors_flat = read_f64_file(&dir.join("factors.bin"), &meta.factors, "factors.bin")?;

    let mut trajectories = Vec::with_capacity(n);
    let mut noisy = Vec::with_capacity(n);
    for i in 0..n {
        let fv = FactorVector::new(kind, factors_flat[i * k..(i + 1) * k].to_vec())
            .map_err(|e| Error::format(format!("sequence {i}: {e}")))?;
        let seq = states[i * t * dim..(i + 1) * t * dim].to_vec();
        let init = seq[..dim].to_vec();
        let traj = Trajectory::new(kind, fv, init, meta.dt, seq)
            .map_err(|e| Error::format(format!("sequence {i}: {e}")))?;
        trajectories.push(traj);
        noisy.push(noisy_flat[i * t * dim..(i + 1) * t * dim].to_vec());
    }

    Dataset::new(kind, meta.spec, meta.seed, trajectories, noisy)
}
