//! Held-out scoring of the corrupted input, the LI baseline and a model.

use std::fmt::Write as _;

use candle_core::{DType, Device};
use dtec_ctsim::{li_mar, Image, Scores};
use ndarray::Array2;
use serde::Serialize;

use crate::data::{stack, HeldOut};
use crate::error::Result;
use crate::train::Model;

pub const METHOD_INPUT: &str = "input";
pub const METHOD_LI: &str = "LI";
pub const METHOD_MODEL: &str = "model";

const EVAL_BATCH: usize = 4;

/// Runs the model on each image, clamps to [0, 1] and copies the metal
/// pixels back from the input.
pub fn restore_images(model: &Model, images: &[&Image]) -> Result<Vec<Array2<f32>>> {
    let device = model.params.device();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let pixels: Vec<&Array2<f32>> = chunk.iter().map(|i| &i.pixels).collect();
        let x = stack(&pixels, &device)?.to_dtype(model.params.dtype())?;
        let y = model.restore(&x)?.clamp(0.0, 1.0)?.to_dtype(DType::F32)?.to_device(&Device::Cpu)?;
        for (k, img) in chunk.iter().enumerate() {
            let v: Vec<f32> = y.get(k)?.flatten_all()?.to_vec1()?;
            let mut restored = Array2::from_shape_vec(img.dim(), v).expect("decoder keeps the input size");
            ndarray::Zip::from(&mut restored)
                .and(&img.metal_mask)
                .and(&img.pixels)
                .for_each(|r, &m, &p| {
                    if m {
                        *r = p;
                    }
                });
            out.push(restored);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseScore {
    pub case: usize,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub cases: Vec<CaseScore>,
}

impl EvalReport {
    fn push(&mut self, case: usize, method: &str, s: Scores) {
        self.cases.push(CaseScore { case, method: method.into(), psnr: s.psnr, ssim: s.ssim, mse: s.mse });
    }

    /// Per-method means, in first-seen order.
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<&str> = Vec::new();
        for c in &self.cases {
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        methods
            .into_iter()
            .map(|m| {
                let rows: Vec<&CaseScore> = self.cases.iter().filter(|c| c.method == m).collect();
                let n = rows.len() as f64;
                MethodSummary {
                    method: m.to_string(),
                    psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
                    ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
                    mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn method(&self, name: &str) -> Option<MethodSummary> {
        self.summary().into_iter().find(|m| m.method == name)
    }

    pub fn cases_csv(&self) -> String {
        let mut s = String::from("case,method,PSNR,SSIM,MSE\n");
        for c in &self.cases {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", c.case, c.method, c.psnr, c.ssim, c.mse);
        }
        s
    }
}

pub fn summary_csv(rows: &[MethodSummary]) -> String {
    let mut s = String::from("method,PSNR,SSIM,MSE\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.4},{:.4},{:.4}", r.method, r.psnr, r.ssim, r.mse);
    }
    s
}

pub fn summary_table(rows: &[MethodSummary]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:>8}  {:>7}  {:>9}\n", "method", "PSNR", "SSIM", "MSE");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>8.2}  {:>7.4}  {:>9.3}", r.method, r.psnr, r.ssim, r.mse);
    }
    s
}

fn exclusion(img: &Image, include_metal: bool) -> Option<&Array2<bool>> {
    if include_metal || !img.has_metal() {
        None
    } else {
        Some(&img.metal_mask)
    }
}

/// Scores input, LI and (when given) the model on every held-out case.
/// Metal pixels are excluded unless `include_metal`.
pub fn evaluate(model: Option<&Model>, held: &HeldOut, n_angles: usize, include_metal: bool) -> Result<EvalReport> {
    let restored = match model {
        Some(m) => Some(restore_images(m, &held.cases.iter().map(|c| &c.artifact).collect::<Vec<_>>())?),
        None => None,
    };
    let mut report = EvalReport::default();
    for (k, case) in held.cases.iter().enumerate() {
        let reference = &case.clean.pixels;
        let ex = exclusion(&case.artifact, include_metal);
        report.push(case.case, METHOD_INPUT, Scores::compute(&case.artifact.pixels, reference, ex)?);
        let li = li_mar(&case.artifact, &case.artifact.metal_mask, n_angles)?;
        report.push(case.case, METHOD_LI, Scores::compute(&li.pixels, reference, ex)?);
        if let Some(r) = &restored {
            report.push(case.case, METHOD_MODEL, Scores::compute(&r[k], reference, ex)?);
        }
    }
    Ok(report)
}
