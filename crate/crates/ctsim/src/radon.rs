//! Parallel-beam Radon transform and Ram-Lak filtered back-projection.
//!
//! Geometry: unit pixel spacing, unit detector spacing, the rotation centre
//! at the middle of the grid. Pixel `(i, j)` sits at
//! `x = j - (W-1)/2`, `y = (H-1)/2 - i`; detector bin `k` of a `D`-bin row
//! sits at `t = k - (D-1)/2`. Angle `a` of `A` is `pi * a / A`.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use crate::image::clamp_unit;
use crate::{Image, MetalMask, Result, SimError};

pub const MIN_ANGLES: usize = 16;

/// Sample step along each ray, in pixels.
const RAY_STEP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    /// `angles x detectors` line integrals.
    pub values: Array2<f64>,
    pub angles: Vec<f64>,
    /// Bins whose ray touches metal.
    pub metal_trace: Array2<bool>,
}

impl Sinogram {
    pub fn n_angles(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dets(&self) -> usize {
        self.values.ncols()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.mapv(|v| v * a),
            angles: self.angles.clone(),
            metal_trace: self.metal_trace.clone(),
        }
    }
}

/// Smallest odd detector count covering the diagonal of a `size` grid.
pub fn default_detector_count(size: usize) -> usize {
    let d = (size as f64 * std::f64::consts::SQRT_2).ceil() as usize + 2;
    d | 1
}

pub fn projection_angles(n_angles: usize) -> Vec<f64> {
    (0..n_angles).map(|a| PI * a as f64 / n_angles as f64).collect()
}

#[inline]
fn bilinear(img: &ArrayView2<'_, f32>, row: f64, col: f64) -> f64 {
    let (h, w) = img.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[(r as usize, c as usize)] as f64
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Raw line integrals of `pixels`, `n_angles x n_dets`.
pub fn project(pixels: ArrayView2<'_, f32>, n_angles: usize, n_dets: usize) -> Array2<f64> {
    let (h, w) = pixels.dim();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let half_len = 0.5 * ((h * h + w * w) as f64).sqrt() + 1.0;
    let n_steps = (2.0 * half_len / RAY_STEP).ceil() as usize + 1;
    let det_centre = (n_dets as f64 - 1.0) / 2.0;

    let mut out = Array2::<f64>::zeros((n_angles, n_dets));
    for (a, theta) in projection_angles(n_angles).into_iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        for k in 0..n_dets {
            let t = k as f64 - det_centre;
            let mut acc = 0.0;
            for s in 0..n_steps {
                let u = -half_len + s as f64 * RAY_STEP;
                let x = t * cos - u * sin;
                let y = t * sin + u * cos;
                let col = x + cx;
                let row = cy - y;
                if row <= -1.0 || col <= -1.0 || row >= h as f64 || col >= w as f64 {
                    continue;
                }
                acc += bilinear(&pixels, row, col);
            }
            out[(a, k)] = acc * RAY_STEP;
        }
    }
    out
}

/// Support of the forward projection of a metal mask.
pub fn metal_trace(mask: &MetalMask, n_angles: usize, n_dets: usize) -> Array2<bool> {
    let as_float = mask.mapv(|m| if m { 1.0f32 } else { 0.0 });
    project(as_float.view(), n_angles, n_dets).mapv(|v| v > 0.0)
}

pub(crate) fn check_geometry(size: (usize, usize), n_angles: usize, n_dets: usize) -> Result<()> {
    if n_angles < MIN_ANGLES {
        return Err(SimError::InvalidArgument(format!(
            "n_angles must be >= {MIN_ANGLES}, got {n_angles}"
        )));
    }
    let largest = size.0.max(size.1);
    if n_dets < largest {
        return Err(SimError::InvalidArgument(format!(
            "n_dets must be >= image size {largest}, got {n_dets}"
        )));
    }
    Ok(())
}

/// Parallel-beam projection of an image, recording its metal trace.
pub fn radon(img: &Image, n_angles: usize, n_dets: usize) -> Result<Sinogram> {
    check_geometry(img.dim(), n_angles, n_dets)?;
    Ok(Sinogram {
        values: project(img.pixels.view(), n_angles, n_dets),
        angles: projection_angles(n_angles),
        metal_trace: metal_trace(&img.metal_mask, n_angles, n_dets),
    })
}

/// Discrete Ram-Lak kernel for unit detector spacing, indexed by `n + (len - 1)`.
fn ram_lak(n_dets: usize) -> Vec<f64> {
    let len = n_dets as isize;
    (-(len - 1)..len)
        .map(|n| match n {
            0 => 0.25,
            n if n % 2 == 0 => 0.0,
            n => -1.0 / (PI * PI * (n * n) as f64),
        })
        .collect()
}

/// Ramp-filters each projection row (linear, non-circular convolution).
pub fn ramp_filter(values: &Array2<f64>) -> Array2<f64> {
    let n_dets = values.ncols();
    let kernel = ram_lak(n_dets);
    let mut out = Array2::<f64>::zeros(values.raw_dim());
    for (row, mut dst) in values.rows().into_iter().zip(out.rows_mut()) {
        for k in 0..n_dets {
            let mut acc = 0.0;
            for (j, &p) in row.iter().enumerate() {
                acc += kernel[k + n_dets - 1 - j] * p;
            }
            dst[k] = acc;
        }
    }
    out
}

/// Filtered back-projection onto a `size x size` grid, without clipping.
pub fn fbp_unclipped(values: &Array2<f64>, size: usize) -> Array2<f64> {
    let (n_angles, n_dets) = values.dim();
    let filtered = ramp_filter(values);
    let angles = projection_angles(n_angles);
    let trig: Vec<(f64, f64)> = angles.iter().map(|t| t.sin_cos()).collect();
    let centre = (size as f64 - 1.0) / 2.0;
    let det_centre = (n_dets as f64 - 1.0) / 2.0;
    let scale = PI / n_angles as f64;

    let mut out = Array2::<f64>::zeros((size, size));
    for ((i, j), v) in out.indexed_iter_mut() {
        let x = j as f64 - centre;
        let y = centre - i as f64;
        let mut acc = 0.0;
        for (a, &(sin, cos)) in trig.iter().enumerate() {
            let pos = x * cos + y * sin + det_centre;
            let k0 = pos.floor();
            let f = pos - k0;
            let k0 = k0 as isize;
            if k0 >= 0 && (k0 as usize) < n_dets {
                acc += (1.0 - f) * filtered[(a, k0 as usize)];
            }
            if k0 + 1 >= 0 && ((k0 + 1) as usize) < n_dets {
                acc += f * filtered[(a, (k0 + 1) as usize)];
            }
        }
        *v = acc * scale;
    }
    out
}

/// Ram-Lak filtered back-projection, clipped to nonnegative values.
pub fn fbp(sino: &Sinogram, size: usize) -> Image {
    let values = fbp_unclipped(&sino.values, size);
    Image::new(values.mapv(|v| v.max(0.0) as f32))
}

/// Reconstruction clamped to the normalized `[0, 1]` range.
pub fn fbp_unit(values: &Array2<f64>, size: usize) -> Array2<f32> {
    clamp_unit(&fbp_unclipped(values, size))
}
