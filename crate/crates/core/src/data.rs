//! Training and evaluation views of a simulated dataset.
//!
//! Training sees [`UnpairedPools`] only: corrupted images from the artifact
//! pool and clean images from the disjoint clean pool. The paired ground
//! truth of a corrupted image is dropped when the pools are built and lives
//! on only in [`HeldOut`], which the evaluator owns.

use candle_core::{Device, Tensor};
use std::path::Path;

use dtec_ctsim::dataset::{read_manifest, SimCase, Split};
use dtec_ctsim::io::{mask_from_f32, read_f32_array};
use dtec_ctsim::Image;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One training image and the case it came from.
#[derive(Clone, Debug)]
pub struct PoolImage {
    pub case: usize,
    pub pixels: Array2<f32>,
}

#[derive(Clone, Debug)]
pub struct UnpairedPools {
    artifact: Vec<PoolImage>,
    clean: Vec<PoolImage>,
    size: (usize, usize),
}

impl UnpairedPools {
    /// Keeps `artifact` of artifact-pool cases and `clean` of clean-pool
    /// cases; everything else is dropped.
    pub fn from_cases(cases: impl IntoIterator<Item = SimCase>) -> Result<Self> {
        let mut artifact = Vec::new();
        let mut clean = Vec::new();
        for case in cases {
            match case.split {
                Split::ArtifactPool => artifact.push(PoolImage { case: case.index, pixels: case.artifact.pixels }),
                Split::CleanPool => clean.push(PoolImage { case: case.index, pixels: case.clean.pixels }),
                Split::Test => {}
            }
        }
        Self::new(artifact, clean)
    }

    pub fn new(artifact: Vec<PoolImage>, clean: Vec<PoolImage>) -> Result<Self> {
        if artifact.is_empty() || clean.is_empty() {
            return Err(Error::Data(format!(
                "training pools must be non-empty (artifact {}, clean {})",
                artifact.len(),
                clean.len()
            )));
        }
        let size = artifact[0].pixels.dim();
        if artifact.iter().chain(&clean).any(|p| p.pixels.dim() != size) {
            return Err(Error::Data("pool images differ in size".into()));
        }
        if artifact.iter().any(|a| clean.iter().any(|c| c.case == a.case)) {
            return Err(Error::Data("a case appears in both training pools".into()));
        }
        Ok(Self { artifact, clean, size })
    }

    pub fn artifact_len(&self) -> usize {
        self.artifact.len()
    }

    pub fn clean_len(&self) -> usize {
        self.clean.len()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.size
    }

    pub fn artifact_cases(&self) -> Vec<usize> {
        self.artifact.iter().map(|p| p.case).collect()
    }

    pub fn clean_cases(&self) -> Vec<usize> {
        self.clean.iter().map(|p| p.case).collect()
    }

    /// `(x_a, y_c)` tensors of shape `(B, 1, H, W)` for one draw.
    pub fn batch(&self, draw: &BatchDraw, device: &Device) -> Result<(Tensor, Tensor)> {
        let x_a: Vec<&Array2<f32>> = draw.artifact.iter().map(|&i| &self.artifact[i].pixels).collect();
        let y_c: Vec<&Array2<f32>> = draw.clean.iter().map(|&i| &self.clean[i].pixels).collect();
        for (a, c) in draw.artifact.iter().zip(&draw.clean) {
            // pools are disjoint by construction; this guards future edits
            assert_ne!(
                self.artifact[*a].case, self.clean[*c].case,
                "paired ground truth reached a training step"
            );
        }
        Ok((stack(&x_a, device)?, stack(&y_c, device)?))
    }
}

/// Stacks equally sized images into a `(B, 1, H, W)` f32 tensor.
pub fn stack(images: &[&Array2<f32>], device: &Device) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dim() != (h, w) {
            return Err(Error::Data("batch images differ in size".into()));
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?)
}

/// Pool positions drawn for one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchDraw {
    pub artifact: Vec<usize>,
    pub clean: Vec<usize>,
}

/// Seeded sampler drawing both pools independently, with replacement.
#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    rng: ChaCha8Rng,
    batch: usize,
    artifact_len: usize,
    clean_len: usize,
}

impl UnpairedSampler {
    pub fn new(seed: u64, batch: usize, pools: &UnpairedPools) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch,
            artifact_len: pools.artifact_len(),
            clean_len: pools.clean_len(),
        }
    }

    pub fn draw(&mut self) -> BatchDraw {
        let artifact = (0..self.batch).map(|_| self.rng.random_range(0..self.artifact_len)).collect();
        let clean = (0..self.batch).map(|_| self.rng.random_range(0..self.clean_len)).collect();
        BatchDraw { artifact, clean }
    }
}

/// A held-out case with its reference.
#[derive(Clone, Debug)]
pub struct HeldOutCase {
    pub case: usize,
    pub artifact: Image,
    pub clean: Image,
}

#[derive(Clone, Debug, Default)]
pub struct HeldOut {
    pub cases: Vec<HeldOutCase>,
}

impl HeldOut {
    pub fn from_cases(cases: impl IntoIterator<Item = SimCase>) -> Self {
        let cases = cases
            .into_iter()
            .filter(|c| c.split == Split::Test)
            .map(|c| HeldOutCase { case: c.index, artifact: c.artifact, clean: c.clean })
            .collect();
        Self { cases }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Reads the training view of a dataset directory. Only the corrupted file
/// of artifact-pool cases and the clean file of clean-pool cases are opened.
pub fn load_pools(dir: impl AsRef<Path>) -> Result<UnpairedPools> {
    let dir = dir.as_ref();
    let mut artifact = Vec::new();
    let mut clean = Vec::new();
    for r in read_manifest(dir)? {
        match r.split {
            Split::ArtifactPool => artifact.push(PoolImage { case: r.case, pixels: read_f32_array(dir.join(&r.artifact))? }),
            Split::CleanPool => clean.push(PoolImage { case: r.case, pixels: read_f32_array(dir.join(&r.clean))? }),
            Split::Test => {}
        }
    }
    UnpairedPools::new(artifact, clean)
}

/// Reads the held-out cases of a dataset directory and its angle count.
pub fn load_held_out(dir: impl AsRef<Path>) -> Result<(HeldOut, usize)> {
    let dir = dir.as_ref();
    let records = read_manifest(dir)?;
    let n_angles = records
        .first()
        .map(|r| r.n_angles)
        .ok_or_else(|| Error::Data(format!("{}: empty manifest", dir.display())))?;
    let mut cases = Vec::new();
    for r in records.into_iter().filter(|r| r.split == Split::Test) {
        let mask = mask_from_f32(&read_f32_array(dir.join(&r.mask))?);
        cases.push(HeldOutCase {
            case: r.case,
            artifact: Image::with_mask(read_f32_array(dir.join(&r.artifact))?, mask)?,
            clean: Image::new(read_f32_array(dir.join(&r.clean))?),
        });
    }
    Ok((HeldOut { cases }, n_angles))
}

/// Splits a dataset into the training view and the held-out set.
pub fn split_dataset(cases: Vec<SimCase>) -> Result<(UnpairedPools, HeldOut)> {
    let (test, train): (Vec<_>, Vec<_>) = cases.into_iter().partition(|c| c.split == Split::Test);
    Ok((UnpairedPools::from_cases(train)?, HeldOut::from_cases(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(case: usize) -> PoolImage {
        PoolImage { case, pixels: Array2::from_elem((4, 4), case as f32) }
    }

    #[test]
    fn sampler_is_seeded() {
        let pools = UnpairedPools::new((0..10).map(image).collect(), (10..20).map(image).collect()).unwrap();
        let mut a = UnpairedSampler::new(7, 2, &pools);
        let mut b = UnpairedSampler::new(7, 2, &pools);
        for _ in 0..50 {
            assert_eq!(a.draw(), b.draw());
        }
    }

    #[test]
    fn rejects_overlapping_or_empty_pools() {
        assert!(UnpairedPools::new(vec![image(1)], vec![image(1)]).is_err());
        assert!(UnpairedPools::new(vec![], vec![image(1)]).is_err());
    }

    #[test]
    fn batch_has_image_layout() {
        let pools = UnpairedPools::new(vec![image(0), image(2)], vec![image(1)]).unwrap();
        let draw = BatchDraw { artifact: vec![1, 0], clean: vec![0, 0] };
        let (x, y) = pools.batch(&draw, &Device::Cpu).unwrap();
        assert_eq!(x.dims(), &[2, 1, 4, 4]);
        assert_eq!(x.get(0).unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(), 2.0);
        assert_eq!(y.min_all().unwrap().to_scalar::<f32>().unwrap(), 1.0);
    }
}
