//! On-disk cohort layout.
//!
//! ```text
//! <dir>/manifest.json                  config echo, fold plan, slice index
//! <dir>/patients/<pid>/slice_NNN.bin   training/evaluation slice
//! <dir>/patients/<pid>/twin_NNN.bin    oracle healthy twin (pathological only)
//! ```
//!
//! Slice files: magic `b"ACYCSLC1"`, `u32` height, `u32` width (LE), then
//! `h*w` little-endian `f32` pixels, `h*w` bytes of gt mask, `h*w` bytes of
//! infiltration mask (0/1).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cohort, CohortConfig, Domain, FoldPlan, Image, Mask, Severity, Slice};
use crate::archive::write_atomic;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

const MAGIC: &[u8; 8] = b"ACYCSLC1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub id: String,
    pub patient_id: String,
    pub slice_index: usize,
    pub domain: Domain,
    pub severity: Severity,
    pub file: String,
    pub healthy_twin_id: Option<String>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CohortConfig,
    pub config_hash: String,
    pub fold_seed: u64,
    pub folds: FoldPlan,
    pub slices: Vec<SliceEntry>,
    pub twins: Vec<SliceEntry>,
}

impl Manifest {
    /// Hash over the config echo, fold plan and slice checksums; run
    /// directories record it to tie themselves to one cohort.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        sha256_hex(&bytes)
    }
}

pub fn config_hash(config: &CohortConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

pub fn encode_slice(s: &Slice) -> Vec<u8> {
    let (h, w) = (s.pixels.height, s.pixels.width);
    let mut out = Vec::with_capacity(16 + 6 * h * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in &s.pixels.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(s.gt_mask.data.iter().map(|&b| b as u8));
    out.extend(s.infiltration_mask.data.iter().map(|&b| b as u8));
    out
}

fn decode_slice(bytes: &[u8], entry: &SliceEntry, path: &Path) -> Result<Slice> {
    let corrupt = |d: &str| Error::Corrupt {
        path: path.to_path_buf(),
        detail: d.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let n = h * w;
    if bytes.len() != 16 + 6 * n {
        return Err(corrupt("length does not match dimensions"));
    }
    let px = &bytes[16..16 + 4 * n];
    let pixels: Vec<f32> = px
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let gt = bytes[16 + 4 * n..16 + 5 * n].iter().map(|&b| b != 0).collect();
    let inf = bytes[16 + 5 * n..].iter().map(|&b| b != 0).collect();
    let slice = Slice {
        patient_id: entry.patient_id.clone(),
        slice_index: entry.slice_index,
        domain: entry.domain,
        severity: entry.severity,
        pixels: Image::from_vec(h, w, pixels)?,
        gt_mask: Mask::from_vec(h, w, gt)?,
        infiltration_mask: Mask::from_vec(h, w, inf)?,
        healthy_twin_id: entry.healthy_twin_id.clone(),
    };
    slice.validate()?;
    Ok(slice)
}

fn entry_for(s: &Slice, id: String, file: String, bytes: &[u8]) -> SliceEntry {
    SliceEntry {
        id,
        patient_id: s.patient_id.clone(),
        slice_index: s.slice_index,
        domain: s.domain,
        severity: s.severity,
        file,
        healthy_twin_id: s.healthy_twin_id.clone(),
        sha256: sha256_hex(bytes),
    }
}

/// True when `dir` exists and contains anything.
pub fn is_non_empty(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Writes the cohort and its fold plan. Refuses a non-empty target unless
/// `overwrite` is set, in which case the previous contents are removed.
pub fn write_cohort(
    dir: &Path,
    cohort: &Cohort,
    folds: &FoldPlan,
    fold_seed: u64,
    overwrite: bool,
) -> Result<Manifest> {
    if is_non_empty(dir) {
        if !overwrite {
            return Err(Error::NotEmpty(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut slices = Vec::new();
    let mut twins = Vec::new();
    for (list, out, prefix) in [
        (&cohort.slices, &mut slices, "slice"),
        (&cohort.twins, &mut twins, "twin"),
    ] {
        for s in list {
            let file = format!("patients/{}/{prefix}_{:03}.bin", s.patient_id, s.slice_index);
            let bytes = encode_slice(s);
            write_atomic(&dir.join(&file), &bytes)?;
            let id = if prefix == "twin" {
                super::twin_id(&s.patient_id, s.slice_index)
            } else {
                s.id()
            };
            out.push(entry_for(s, id, file, &bytes));
        }
    }
    let manifest = Manifest {
        config: cohort.config.clone(),
        config_hash: config_hash(&cohort.config),
        fold_seed,
        folds: folds.clone(),
        slices,
        twins,
    };
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_entries(dir: &Path, entries: &[SliceEntry]) -> Result<Vec<Slice>> {
    entries
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(Error::Corrupt {
                    path,
                    detail: "checksum mismatch".into(),
                });
            }
            decode_slice(&bytes, e, &path)
        })
        .collect()
}

/// Loads a cohort written by [`write_cohort`], verifying checksums.
pub fn read_cohort(dir: &Path) -> Result<(Manifest, Cohort)> {
    let manifest = read_manifest(dir)?;
    let slices = load_entries(dir, &manifest.slices)?;
    let twins = load_entries(dir, &manifest.twins)?;
    let cohort = Cohort {
        config: manifest.config.clone(),
        slices,
        twins,
    };
    Ok((manifest, cohort))
}
