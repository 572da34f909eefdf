//! Simulated datasets: generation, splitting and the on-disk layout used by
//! the `simulate` command.
//!
//! A dataset directory holds, per case `NNNN`, the files
//! `case_NNNN_{artifact,clean,mask}.f32` (see [`crate::io`]) with a PNG
//! preview next to each, plus `manifest.jsonl` with one JSON record per
//! case.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{mask_from_f32, mask_to_f32, read_f32_array, write_f32_array, write_png};
use crate::{corrupt, generate_phantom, CorruptionParams, Image, Result, SimError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Role of a case. The two training pools come from disjoint phantoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Only the corrupted image is used for training.
    ArtifactPool,
    /// Only the clean image is used for training.
    CleanPool,
    /// Held out; both images are used for scoring.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub size: usize,
    pub count: usize,
    pub test_count: usize,
    pub n_angles: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub params: CorruptionParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 64,
            count: 220,
            test_count: 20,
            n_angles: 180,
            min_ellipses: 3,
            max_ellipses: 6,
            params: CorruptionParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.test_count > self.count {
            return Err(SimError::InvalidArgument("test_count exceeds count".into()));
        }
        if self.min_ellipses == 0 || self.min_ellipses > self.max_ellipses {
            return Err(SimError::InvalidArgument("bad ellipse count range".into()));
        }
        Ok(())
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index >= self.count - self.test_count {
            Split::Test
        } else if index % 2 == 0 {
            Split::ArtifactPool
        } else {
            Split::CleanPool
        }
    }
}

/// SplitMix64 step, used to derive independent per-case seeds.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimCase {
    pub index: usize,
    pub seed: u64,
    pub split: Split,
    /// Corrupted reconstruction with its metal mask.
    pub artifact: Image,
    /// Metal-free reconstruction of the same phantom.
    pub clean: Image,
}

/// Simulates one case.
pub fn simulate_case(cfg: &SimConfig, index: usize) -> Result<SimCase> {
    let seed = mix_seed(cfg.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ellipses = rng.random_range(cfg.min_ellipses..=cfg.max_ellipses);
    let phantom = generate_phantom(seed, cfg.size, n_ellipses, true)?;
    let pair = corrupt(&phantom, &cfg.params, cfg.n_angles, mix_seed(seed, 0xA5A5))?;
    Ok(SimCase {
        index,
        seed,
        split: cfg.split_of(index),
        artifact: pair.artifact,
        clean: pair.clean,
    })
}

pub fn simulate_dataset(cfg: &SimConfig) -> Result<Vec<SimCase>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| simulate_case(cfg, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub case: usize,
    pub seed: u64,
    pub split: Split,
    pub size: usize,
    pub n_angles: usize,
    pub artifact: String,
    pub clean: String,
    pub mask: String,
    pub artifact_png: String,
    pub clean_png: String,
    pub mask_png: String,
    pub params: CorruptionParams,
}

fn stem(index: usize) -> String {
    format!("case_{index:04}")
}

pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SimConfig, cases: &[SimCase]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    for case in cases {
        let s = stem(case.index);
        let record = ManifestRecord {
            case: case.index,
            seed: case.seed,
            split: case.split,
            size: cfg.size,
            n_angles: cfg.n_angles,
            artifact: format!("{s}_artifact.f32"),
            clean: format!("{s}_clean.f32"),
            mask: format!("{s}_mask.f32"),
            artifact_png: format!("{s}_artifact.png"),
            clean_png: format!("{s}_clean.png"),
            mask_png: format!("{s}_mask.png"),
            params: cfg.params,
        };
        let mask = mask_to_f32(&case.artifact.metal_mask);
        write_f32_array(dir.join(&record.artifact), &case.artifact.pixels)?;
        write_f32_array(dir.join(&record.clean), &case.clean.pixels)?;
        write_f32_array(dir.join(&record.mask), &mask)?;
        write_png(dir.join(&record.artifact_png), &case.artifact.pixels)?;
        write_png(dir.join(&record.clean_png), &case.clean.pixels)?;
        write_png(dir.join(&record.mask_png), &mask)?;
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let file = File::open(dir.as_ref().join(MANIFEST_FILE))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<SimCase>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            let mask = mask_from_f32(&read_f32_array(dir.join(&r.mask))?);
            Ok(SimCase {
                index: r.case,
                seed: r.seed,
                split: r.split,
                artifact: Image::with_mask(read_f32_array(dir.join(&r.artifact))?, mask)?,
                clean: Image::new(read_f32_array(dir.join(&r.clean))?),
            })
        })
        .collect()
}
