//! On-disk formats.
//!
//! Float arrays: the 4 magic bytes `DTEC`, then `u32` height and `u32`
//! width, then `height * width` `f32` values in row-major order. All
//! integers and floats are little-endian. PNGs are 8-bit grayscale with
//! values clamped to `[0, 1]` before quantization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::{Result, SimError};

pub const ARRAY_MAGIC: &[u8; 4] = b"DTEC";

pub fn encode_f32_array(values: &Array2<f32>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = Vec::with_capacity(12 + 4 * h * w);
    out.extend_from_slice(ARRAY_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f32_array(bytes: &[u8]) -> Result<Array2<f32>> {
    if bytes.len() < 12 || &bytes[..4] != ARRAY_MAGIC {
        return Err(SimError::Format("missing DTEC header".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * h * w {
        return Err(SimError::Format(format!(
            "expected {} payload bytes for {h}x{w}, found {}",
            4 * h * w,
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((h, w), data).map_err(|e| SimError::Format(e.to_string()))
}

pub fn write_f32_array(path: impl AsRef<Path>, values: &Array2<f32>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_f32_array(values))?;
    f.flush()?;
    Ok(())
}

pub fn read_f32_array(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_f32_array(&bytes)
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: impl AsRef<Path>, values: &Array2<f32>) -> Result<()> {
    let (h, w) = values.dim();
    let buf = ::image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        ::image::Luma([to_u8(values[(y as usize, x as usize)])])
    });
    buf.save(path)?;
    Ok(())
}

pub fn mask_to_f32(mask: &Array2<bool>) -> Array2<f32> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 })
}

pub fn mask_from_f32(values: &Array2<f32>) -> Array2<bool> {
    values.mapv(|v| v > 0.5)
}
