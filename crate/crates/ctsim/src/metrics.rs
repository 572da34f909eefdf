//! PSNR, SSIM and MSE on normalized images.
//!
//! The `*_masked` variants drop the pixels flagged in `exclude` (normally
//! the metal mask) from the average.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Default scale applied before MSE.
pub const MSE_SCALE: f64 = 255.0;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn check_shapes(a: &Array2<f32>, b: &Array2<f32>, exclude: Option<&Array2<bool>>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(SimError::ShapeMismatch(a.dim(), b.dim()));
    }
    if let Some(m) = exclude {
        if m.dim() != a.dim() {
            return Err(SimError::ShapeMismatch(a.dim(), m.dim()));
        }
    }
    Ok(())
}

/// Mean squared difference over the scored pixels, without any scaling.
fn raw_mse(a: &Array2<f32>, b: &Array2<f32>, exclude: Option<&Array2<bool>>) -> Result<f64> {
    check_shapes(a, b, exclude)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((idx, &x), &y) in a.indexed_iter().zip(b.iter()) {
        if exclude.is_some_and(|m| m[idx]) {
            continue;
        }
        let d = x as f64 - y as f64;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(SimError::EmptyScoringRegion);
    }
    Ok(sum / n as f64)
}

pub fn psnr(a: &Array2<f32>, b: &Array2<f32>, peak: f64) -> Result<f64> {
    psnr_masked(a, b, None, peak)
}

pub fn psnr_masked(a: &Array2<f32>, b: &Array2<f32>, exclude: Option<&Array2<bool>>, peak: f64) -> Result<f64> {
    let mse = raw_mse(a, b, exclude)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// MSE after multiplying both images by `scale`.
pub fn mse(a: &Array2<f32>, b: &Array2<f32>, scale: f64) -> Result<f64> {
    mse_masked(a, b, None, scale)
}

pub fn mse_masked(a: &Array2<f32>, b: &Array2<f32>, exclude: Option<&Array2<bool>>, scale: f64) -> Result<f64> {
    Ok(raw_mse(a, b, exclude)? * scale * scale)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

pub fn ssim(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    ssim_masked(a, b, None)
}

/// Gaussian-windowed SSIM averaged over all windows that fit inside the
/// image ("valid" placement). With `exclude`, windows whose centre pixel is
/// excluded are skipped.
pub fn ssim_masked(a: &Array2<f32>, b: &Array2<f32>, exclude: Option<&Array2<bool>>) -> Result<f64> {
    check_shapes(a, b, exclude)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(SimError::ImageTooSmall((h, w), SSIM_WINDOW));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let half = SSIM_WINDOW / 2;

    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            if exclude.is_some_and(|m| m[(i + half, j + half)]) {
                continue;
            }
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (di, gi) in g.iter().enumerate() {
                for (dj, gj) in g.iter().enumerate() {
                    let wgt = gi * gj;
                    let x = a[(i + di, j + dj)] as f64;
                    let y = b[(i + di, j + dj)] as f64;
                    ma += wgt * x;
                    mb += wgt * y;
                    saa += wgt * x * x;
                    sbb += wgt * y * y;
                    sab += wgt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    if n == 0 {
        return Err(SimError::EmptyScoringRegion);
    }
    Ok(total / n as f64)
}

/// The three scores reported for a restoration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl Scores {
    /// Scores `restored` against `reference`, skipping `exclude` pixels.
    pub fn compute(restored: &Array2<f32>, reference: &Array2<f32>, exclude: Option<&Array2<bool>>) -> Result<Self> {
        Ok(Self {
            psnr: psnr_masked(restored, reference, exclude, 1.0)?,
            ssim: ssim_masked(restored, reference, exclude)?,
            mse: mse_masked(restored, reference, exclude, MSE_SCALE)?,
        })
    }
}
