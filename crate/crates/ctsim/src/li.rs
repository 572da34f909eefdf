//! Linear interpolation (LI) metal artifact reduction baseline.

use ndarray::Array2;

use crate::image::clamp_unit;
use crate::radon::{check_geometry, default_detector_count, fbp_unclipped, metal_trace, project};
use crate::{Image, MetalMask, Result, SimError};

/// Replaces every run of trace bins in each projection row by a straight
/// line between the nearest untouched bins on either side. Runs touching a
/// row end are extended flat from their single anchor.
pub fn interpolate_trace(values: &Array2<f64>, trace: &Array2<bool>) -> Result<Array2<f64>> {
    if values.dim() != trace.dim() {
        return Err(SimError::ShapeMismatch(values.dim(), trace.dim()));
    }
    let mut out = values.clone();
    let n_dets = values.ncols();
    for (a, (mut row, flags)) in out.rows_mut().into_iter().zip(trace.rows()).enumerate() {
        if flags.iter().all(|&f| f) {
            return Err(SimError::TraceCoversRow(a));
        }
        let mut k = 0;
        while k < n_dets {
            if !flags[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k < n_dets && flags[k] {
                k += 1;
            }
            let end = k; // exclusive
            let left = start.checked_sub(1).map(|l| (l, row[l]));
            let right = (end < n_dets).then(|| (end, row[end]));
            match (left, right) {
                (Some((l, lv)), Some((r, rv))) => {
                    let span = (r - l) as f64;
                    for j in start..end {
                        let f = (j - l) as f64 / span;
                        row[j] = lv + f * (rv - lv);
                    }
                }
                (Some((_, v)), None) | (None, Some((_, v))) => {
                    for j in start..end {
                        row[j] = v;
                    }
                }
                (None, None) => unreachable!("row fully covered was rejected above"),
            }
        }
    }
    Ok(out)
}

/// LI baseline: re-project the corrupted image, bridge the metal trace,
/// reconstruct and paste the metal pixels back.
pub fn li_mar(artifact_img: &Image, mask: &MetalMask, n_angles: usize) -> Result<Image> {
    if artifact_img.dim() != mask.dim() {
        return Err(SimError::ShapeMismatch(artifact_img.dim(), mask.dim()));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(artifact_img.clone());
    }
    let (size, width) = artifact_img.dim();
    if size != width {
        return Err(SimError::InvalidArgument("li_mar expects a square image".into()));
    }
    let n_dets = default_detector_count(size);
    check_geometry(artifact_img.dim(), n_angles, n_dets)?;

    let sino = project(artifact_img.pixels.view(), n_angles, n_dets);
    let trace = metal_trace(mask, n_angles, n_dets);
    let bridged = interpolate_trace(&sino, &trace)?;
    let mut pixels = clamp_unit(&fbp_unclipped(&bridged, size));
    ndarray::Zip::from(&mut pixels)
        .and(mask)
        .and(&artifact_img.pixels)
        .for_each(|p, &m, &src| {
            if m {
                *p = src;
            }
        });
    Image::with_mask(pixels, mask.clone())
}
