//! Comparison figures: `[input | LI | model | reference]` per case.
//!
//! Metal pixels are tinted red on every panel. Under each restored panel
//! a caption `PSNR/SSIM` is drawn with a 3×5 bitmap font; the same numbers
//! go to a captions CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dtec_ctsim::{li_mar, Image, Scores};
use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::data::HeldOut;
use crate::error::Result;
use crate::eval::restore_images;
use crate::train::Model;

pub const PANELS: [&str; 4] = ["input", "LI", "model", "reference"];
pub const CAPTIONS_CSV: &str = "captions.csv";

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);
const INK: Rgb<u8> = Rgb([255, 255, 0]);

fn glyph(c: char) -> [u8; GLYPH_H] {
    // rows top to bottom, bit 2 is the left column
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '/' => [0b001, 0b001, 0b010, 0b100, 0b100],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        _ => [0; GLYPH_H],
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x0: usize, y0: usize, scale: usize) {
    for (k, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x0 + k * (GLYPH_W + 1) * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (x, y) = ((gx + col * scale + dx) as u32, (y0 + r * scale + dy) as u32);
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, INK);
                        }
                    }
                }
            }
        }
    }
}

/// Gray value, or a red tint of it on metal.
pub fn panel_pixel(value: f32, metal: bool) -> Rgb<u8> {
    let v = (value.clamp(0.0, 1.0) * 255.0).round() as u8;
    if metal {
        Rgb([v.max(160), v / 3, v / 3])
    } else {
        Rgb([v, v, v])
    }
}

pub fn caption(s: &Scores) -> String {
    format!("{:.2}/{:.3}", s.psnr, s.ssim)
}

/// One figure: panels side by side, each upscaled by `scale`, captions below.
pub fn compose(panels: &[&Array2<f32>], mask: &Array2<bool>, captions: &[Option<String>], scale: usize) -> RgbImage {
    let (h, w) = mask.dim();
    let gap = 2 * scale;
    let caption_h = (GLYPH_H + 2) * scale;
    let width = panels.len() * w * scale + (panels.len().saturating_sub(1)) * gap;
    let height = h * scale + caption_h;
    let mut img = RgbImage::from_pixel(width as u32, height as u32, BACKGROUND);
    for (p, panel) in panels.iter().enumerate() {
        let x0 = p * (w * scale + gap);
        for ((i, j), &v) in panel.indexed_iter() {
            let px = panel_pixel(v, mask[(i, j)]);
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel((x0 + j * scale + dx) as u32, (i * scale + dy) as u32, px);
                }
            }
        }
        if let Some(Some(text)) = captions.get(p) {
            draw_text(&mut img, text, x0 + scale, h * scale + scale, (scale / 2).max(1));
        }
    }
    img
}

pub struct FigureCase<'a> {
    pub case: usize,
    pub artifact: &'a Image,
    pub reference: &'a Image,
    pub li: Image,
    pub restored: Array2<f32>,
}

/// Writes `case_NNNN.png` per held-out case and the captions CSV; returns
/// the PNG paths.
pub fn export_figures(model: &Model, held: &HeldOut, n_angles: usize, out_dir: &Path, scale: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let restored = restore_images(model, &held.cases.iter().map(|c| &c.artifact).collect::<Vec<_>>())?;
    let mut csv = String::from("case,panel,PSNR,SSIM\n");
    let mut paths = Vec::new();
    for (case, restored) in held.cases.iter().zip(restored) {
        let li = li_mar(&case.artifact, &case.artifact.metal_mask, n_angles)?;
        let mask = &case.artifact.metal_mask;
        let ex = if case.artifact.has_metal() { Some(mask) } else { None };
        let reference = &case.clean.pixels;
        let panels = [&case.artifact.pixels, &li.pixels, &restored, reference];
        let mut captions = Vec::new();
        for (name, panel) in PANELS.iter().zip(panels.iter()).take(3) {
            let s = Scores::compute(panel, reference, ex)?;
            let _ = writeln!(csv, "{},{},{:.6},{:.6}", case.case, name, s.psnr, s.ssim);
            captions.push(Some(caption(&s)));
        }
        captions.push(None);
        let img = compose(&panels, mask, &captions, scale);
        let path = out_dir.join(format!("case_{:04}.png", case.case));
        img.save(&path)?;
        paths.push(path);
    }
    std::fs::write(out_dir.join(CAPTIONS_CSV), csv)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tint_only_on_metal() {
        let panel = Array2::from_elem((6, 6), 0.5f32);
        let mut mask = Array2::from_elem((6, 6), false);
        mask[(2, 3)] = true;
        let img = compose(&[&panel, &panel, &panel, &panel], &mask, &[None, None, None, None], 1);
        assert_eq!(img.width(), 4 * 6 + 3 * 2);
        for p in 0..4u32 {
            let x0 = p * 8;
            for i in 0..6u32 {
                for j in 0..6u32 {
                    let Rgb([r, g, b]) = *img.get_pixel(x0 + j, i);
                    if mask[(i as usize, j as usize)] {
                        assert!(r > g && g == b);
                    } else {
                        assert!(r == g && g == b);
                    }
                }
            }
        }
    }

    #[test]
    fn captions_are_drawn_below_panels() {
        let panel = Array2::from_elem((8, 20), 0.0f32);
        let mask = Array2::from_elem((8, 20), false);
        let img = compose(&[&panel], &mask, &[Some("1.0".into())], 2);
        let inked = img.enumerate_pixels().filter(|(_, _, p)| **p == INK).count();
        assert!(inked > 0);
        assert!(img.enumerate_pixels().all(|(_, y, p)| *p != INK || y >= 16));
    }

    #[test]
    fn caption_format() {
        let s = Scores { psnr: 31.456, ssim: 0.91234, mse: 3.0 };
        assert_eq!(caption(&s), "31.46/0.912");
    }
}
