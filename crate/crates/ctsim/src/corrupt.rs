//! Metal-artifact corruption of a phantom in the projection domain.
//!
//! The polychromatic surrogate adds `beta * s_m^2` to every ray, where `s_m`
//! is the metal-only line integral, then draws Poisson photon counts at
//! `I0 * exp(-ATTENUATION_SCALE * s)` and converts them back to line
//! integrals. Rays that do not cross metal only see the photon noise.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::image::clamp_unit;
use crate::phantom::METAL_VALUE;
use crate::radon::{check_geometry, default_detector_count, fbp_unclipped, project};
use crate::{Image, MetalMask, Result, SimError};

/// Converts normalized pixel-unit line integrals to optical depth for the
/// photon model.
pub const ATTENUATION_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    /// beta in `s' = s + beta * s_m^2`.
    pub beam_hardening: f64,
    /// Incident photons per ray; `f64::INFINITY` disables the noise.
    /// Stored as `null` in JSON since JSON has no infinity.
    #[serde(with = "photons")]
    pub photon_count: f64,
    /// Multiplier applied to metal pixels before projection.
    pub metal_attenuation: f64,
}

mod photons {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            beam_hardening: 0.5,
            photon_count: 1e5,
            metal_attenuation: 1.0,
        }
    }
}

impl CorruptionParams {
    /// No beam hardening, no noise.
    pub fn disabled() -> Self {
        Self {
            beam_hardening: 0.0,
            photon_count: f64::INFINITY,
            metal_attenuation: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beam_hardening >= 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "beam hardening must be >= 0, got {}",
                self.beam_hardening
            )));
        }
        if !(self.photon_count > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "photon count must be > 0, got {}",
                self.photon_count
            )));
        }
        if !(self.metal_attenuation >= 1.0) {
            return Err(SimError::InvalidArgument(format!(
                "metal attenuation must be >= 1, got {}",
                self.metal_attenuation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedPair {
    /// Corrupted reconstruction; metal pixels re-inserted at the maximum value.
    pub artifact: Image,
    /// Reconstruction of the same anatomy without metal (empty mask).
    pub clean: Image,
}

/// Replaces each metal region by the mean of the tissue ring around it.
pub fn fill_metal(img: &Image) -> Array2<f32> {
    let (h, w) = img.dim();
    let mask = &img.metal_mask;
    let mut out = img.pixels.clone();
    let mut seen = Array2::from_elem((h, w), false);
    for start in 0..h * w {
        let (si, sj) = (start / w, start % w);
        if !mask[(si, sj)] || seen[(si, sj)] {
            continue;
        }
        let mut component = Vec::new();
        let mut stack = vec![(si, sj)];
        seen[(si, sj)] = true;
        let (mut ring_sum, mut ring_n) = (0.0f64, 0usize);
        let mut ring_seen = std::collections::HashSet::new();
        while let Some((i, j)) = stack.pop() {
            component.push((i, j));
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if mask[(ni, nj)] {
                        if !seen[(ni, nj)] {
                            seen[(ni, nj)] = true;
                            stack.push((ni, nj));
                        }
                    } else if ring_seen.insert((ni, nj)) {
                        ring_sum += img.pixels[(ni, nj)] as f64;
                        ring_n += 1;
                    }
                }
            }
        }
        let fill = if ring_n > 0 { (ring_sum / ring_n as f64) as f32 } else { 0.0 };
        for p in component {
            out[p] = fill;
        }
    }
    out
}

fn reinsert_metal(mut pixels: Array2<f32>, mask: &MetalMask) -> Image {
    ndarray::Zip::from(&mut pixels).and(mask).for_each(|p, &m| {
        if m {
            *p = METAL_VALUE;
        }
    });
    Image {
        pixels,
        metal_mask: mask.clone(),
    }
}

/// Reconstruction of an uncorrupted projection of `img`, post-processed the
/// same way as [`corrupt`]'s artifact image.
pub fn reconstruct_with_metal(img: &Image, n_angles: usize) -> Image {
    let size = img.dim().0;
    let sino = project(img.pixels.view(), n_angles, default_detector_count(size));
    reinsert_metal(clamp_unit(&fbp_unclipped(&sino, size)), &img.metal_mask)
}

/// Simulates a metal-corrupted scan of `img` and its metal-free counterpart.
pub fn corrupt(img: &Image, params: &CorruptionParams, n_angles: usize, noise_seed: u64) -> Result<CorruptedPair> {
    params.validate()?;
    if !img.has_metal() {
        return Err(SimError::EmptyMetalMask);
    }
    let (size, width) = img.dim();
    if size != width {
        return Err(SimError::InvalidArgument("corrupt expects a square image".into()));
    }
    let n_dets = default_detector_count(size);
    check_geometry(img.dim(), n_angles, n_dets)?;

    let mu = params.metal_attenuation as f32;
    let physical = if mu == 1.0 {
        img.pixels.clone()
    } else {
        let mut p = img.pixels.clone();
        ndarray::Zip::from(&mut p).and(&img.metal_mask).for_each(|v, &m| {
            if m {
                *v *= mu;
            }
        });
        p
    };
    let metal_only = img.metal_mask.mapv(|m| if m { mu } else { 0.0 });

    let mut sino = project(physical.view(), n_angles, n_dets);
    let metal_sino = project(metal_only.view(), n_angles, n_dets);
    let beta = params.beam_hardening;
    ndarray::Zip::from(&mut sino).and(&metal_sino).for_each(|s, &sm| {
        *s += beta * sm * sm;
    });

    if params.photon_count.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let i0 = params.photon_count;
        for s in sino.iter_mut() {
            let expected = i0 * (-ATTENUATION_SCALE * *s).exp();
            let counts = if expected > 0.0 {
                Poisson::new(expected).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            };
            *s = -(counts.max(1.0) / i0).ln() / ATTENUATION_SCALE;
        }
    }

    let artifact = reinsert_metal(clamp_unit(&fbp_unclipped(&sino, size)), &img.metal_mask);
    let tissue = fill_metal(img);
    let clean_sino = project(tissue.view(), n_angles, n_dets);
    let clean = Image::new(clamp_unit(&fbp_unclipped(&clean_sino, size)));
    Ok(CorruptedPair { artifact, clean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate_phantom;
    use crate::metrics::psnr_masked;

    #[test]
    fn rejects_images_without_metal() {
        let img = generate_phantom(2, 64, 3, false).unwrap();
        assert!(matches!(
            corrupt(&img, &CorruptionParams::default(), 90, 0),
            Err(SimError::EmptyMetalMask)
        ));
    }

    #[test]
    fn rejects_bad_params() {
        let img = generate_phantom(2, 64, 3, true).unwrap();
        let mut p = CorruptionParams::default();
        p.beam_hardening = -1.0;
        assert!(corrupt(&img, &p, 90, 0).is_err());
        let mut p = CorruptionParams::default();
        p.photon_count = 0.0;
        assert!(corrupt(&img, &p, 90, 0).is_err());
        let mut p = CorruptionParams::default();
        p.metal_attenuation = 0.5;
        assert!(corrupt(&img, &p, 90, 0).is_err());
    }

    #[test]
    fn disabled_corruption_matches_plain_reconstruction_bitwise() {
        let img = generate_phantom(4, 64, 4, true).unwrap();
        let pair = corrupt(&img, &CorruptionParams::disabled(), 90, 1).unwrap();
        assert_eq!(pair.artifact, reconstruct_with_metal(&img, 90));
    }

    #[test]
    fn disabled_corruption_is_close_to_clean_outside_metal() {
        let img = generate_phantom(4, 64, 4, true).unwrap();
        let pair = corrupt(&img, &CorruptionParams::disabled(), 180, 1).unwrap();
        let p = psnr_masked(&pair.artifact.pixels, &pair.clean.pixels, Some(&img.metal_mask), 1.0).unwrap();
        assert!(p > 30.0, "psnr outside metal {p}");
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let img = generate_phantom(6, 64, 4, true).unwrap();
        let p = CorruptionParams::default();
        let a = corrupt(&img, &p, 90, 42).unwrap();
        let b = corrupt(&img, &p, 90, 42).unwrap();
        assert_eq!(a, b);
        let c = corrupt(&img, &p, 90, 43).unwrap();
        assert_ne!(a.artifact, c.artifact);
        assert_eq!(a.clean, c.clean);
    }

    #[test]
    fn fill_metal_uses_surrounding_tissue() {
        let plain = generate_phantom(12, 64, 1, false).unwrap();
        let metal = generate_phantom(12, 64, 1, true).unwrap();
        // single ellipse: the ring is homogeneous tissue
        let filled = fill_metal(&metal);
        for ((f, p), m) in filled.iter().zip(plain.pixels.iter()).zip(metal.metal_mask.iter()) {
            if *m {
                assert!((f - p).abs() < 1e-6);
            }
        }
    }
}
