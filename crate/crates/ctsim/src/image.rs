use ndarray::Array2;

use crate::{Result, SimError};

/// Binary metal mask, `true` where metal was inserted.
pub type MetalMask = Array2<bool>;

/// Single-channel attenuation map in normalized units plus its metal mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub pixels: Array2<f32>,
    pub metal_mask: MetalMask,
}

impl Image {
    /// Image without metal.
    pub fn new(pixels: Array2<f32>) -> Self {
        let metal_mask = Array2::from_elem(pixels.raw_dim(), false);
        Self { pixels, metal_mask }
    }

    pub fn with_mask(pixels: Array2<f32>, metal_mask: MetalMask) -> Result<Self> {
        if pixels.dim() != metal_mask.dim() {
            return Err(SimError::ShapeMismatch(pixels.dim(), metal_mask.dim()));
        }
        Ok(Self { pixels, metal_mask })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(Array2::zeros((h, w)))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn has_metal(&self) -> bool {
        self.metal_mask.iter().any(|&m| m)
    }

    pub fn metal_pixel_count(&self) -> usize {
        self.metal_mask.iter().filter(|&&m| m).count()
    }

    /// Copy of the image with every pixel multiplied by `a`; the mask is kept.
    pub fn scaled(&self, a: f32) -> Self {
        Self {
            pixels: self.pixels.mapv(|v| v * a),
            metal_mask: self.metal_mask.clone(),
        }
    }

    /// Writes `value` into every metal pixel.
    pub fn set_metal_value(&mut self, value: f32) {
        ndarray::Zip::from(&mut self.pixels)
            .and(&self.metal_mask)
            .for_each(|p, &m| {
                if m {
                    *p = value;
                }
            });
    }
}

/// Clamps an unclipped reconstruction into the normalized `[0, 1]` range.
pub(crate) fn clamp_unit(values: &Array2<f64>) -> Array2<f32> {
    values.mapv(|v| v.clamp(0.0, 1.0) as f32)
}
