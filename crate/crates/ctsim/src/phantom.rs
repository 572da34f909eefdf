//! Random ellipse phantoms with optional metal disks.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Image, Result, SimError};

pub const MIN_PHANTOM_SIZE: usize = 32;

/// Value written into metal pixels; also the image maximum.
pub const METAL_VALUE: f32 = 1.0;

const TISSUE_MIN: f64 = 0.1;
const TISSUE_MAX: f64 = 0.6;

/// Metal disks use their own stream so a phantom's anatomy does not depend
/// on whether metal was requested.
const METAL_STREAM: u64 = 0x6d65_7461_6c21;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    /// Squared normalized radius of `(x, y)` in the ellipse frame; `<= 1` inside.
    fn radius2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Maps ellipse-frame coordinates (unit disk) back to the plane.
    fn to_plane(&self, u: f64, v: f64) -> (f64, f64) {
        let (u, v) = (u * self.a, v * self.b);
        (
            self.cx + u * self.cos - v * self.sin,
            self.cy + u * self.sin + v * self.cos,
        )
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, cx: f64, cy: f64, a: f64, b: f64) -> Ellipse {
    let theta = rng.random_range(0.0..PI);
    Ellipse {
        cx,
        cy,
        a,
        b,
        cos: theta.cos(),
        sin: theta.sin(),
        value: rng.random_range(TISSUE_MIN..=TISSUE_MAX),
    }
}

/// Generates a deterministic phantom.
///
/// The first ellipse is the body outline; the remaining `n_ellipses - 1`
/// are organs painted over it and clipped to the body. Coordinates are in
/// units of the half field of view. With `with_metal`, one to three disks
/// of value [`METAL_VALUE`] are dropped inside the body and recorded in the
/// metal mask.
pub fn generate_phantom(seed: u64, size: usize, n_ellipses: usize, with_metal: bool) -> Result<Image> {
    if size < MIN_PHANTOM_SIZE {
        return Err(SimError::PhantomTooSmall(size));
    }
    if n_ellipses == 0 {
        return Err(SimError::InvalidArgument("n_ellipses must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = {
        let cx = rng.random_range(-0.05..0.05);
        let cy = rng.random_range(-0.05..0.05);
        let a = rng.random_range(0.65..0.85);
        let b = rng.random_range(0.5..0.75);
        random_ellipse(&mut rng, cx, cy, a, b)
    };
    let mut organs = Vec::with_capacity(n_ellipses - 1);
    for _ in 1..n_ellipses {
        let r = rng.random_range(0.0..0.6_f64).sqrt();
        let phi = rng.random_range(0.0..2.0 * PI);
        let (cx, cy) = body.to_plane(r * phi.cos(), r * phi.sin());
        let a = rng.random_range(0.08..0.3) * body.a;
        let b = rng.random_range(0.08..0.3) * body.b;
        organs.push(random_ellipse(&mut rng, cx, cy, a, b));
    }

    let half = size as f64 / 2.0;
    let centre = (size as f64 - 1.0) / 2.0;
    let coord = |i: usize, j: usize| ((j as f64 - centre) / half, (centre - i as f64) / half);

    let mut pixels = Array2::<f32>::zeros((size, size));
    for ((i, j), p) in pixels.indexed_iter_mut() {
        let (x, y) = coord(i, j);
        if body.radius2(x, y) > 1.0 {
            continue;
        }
        let mut value = body.value;
        for organ in &organs {
            if organ.radius2(x, y) <= 1.0 {
                value = organ.value;
            }
        }
        *p = value as f32;
    }

    let mut metal_mask = Array2::from_elem((size, size), false);
    if with_metal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ METAL_STREAM);
        let scale = size as f64 / 64.0;
        let n_disks = rng.random_range(1..=3);
        for _ in 0..n_disks {
            let radius = rng.random_range(1.5..3.5) * scale;
            let r = rng.random_range(0.0..0.45_f64).sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let (x, y) = body.to_plane(r * phi.cos(), r * phi.sin());
            // back to pixel coordinates
            let (pc, pr) = (x * half + centre, centre - y * half);
            for ((i, j), m) in metal_mask.indexed_iter_mut() {
                let d2 = (i as f64 - pr).powi(2) + (j as f64 - pc).powi(2);
                if d2 <= radius * radius {
                    *m = true;
                }
            }
        }
        ndarray::Zip::from(&mut pixels).and(&metal_mask).for_each(|p, &m| {
            if m {
                *p = METAL_VALUE;
            }
        });
    }
    Image::with_mask(pixels, metal_mask)
}
