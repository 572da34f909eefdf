//! The five ablation variants, trained and scored under one seed and budget.

use std::fmt::Write as _;

use candle_core::Device;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{HeldOut, UnpairedPools};
use crate::error::Result;
use crate::eval::{evaluate, METHOD_MODEL};
use crate::train::train;

pub const LABEL_ONE_DTD: &str = "HDE with one DTD";
pub const LABEL_TWO_DTD: &str = "HDE with two DTD";
pub const LABEL_ONLY_TRANSFORMER: &str = "HDE with three DTD (only Transformer)";
pub const LABEL_NO_SOD_MAR: &str = "HDE with three DTD (without SOD-MAR)";
pub const LABEL_FULL: &str = "HDE with three DTD (with SOD-MAR)";

/// Row label and config for each variant, in report order. Everything but
/// the ablation flags is taken from `base`.
pub fn variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let with = |n_dtd: usize, only_transformer: bool, sod_mar: bool| {
        let mut cfg = base.clone();
        cfg.model.n_dtd = n_dtd;
        cfg.model.only_transformer = only_transformer;
        cfg.model.sod_mar = sod_mar;
        cfg
    };
    vec![
        (LABEL_ONE_DTD, with(1, false, true)),
        (LABEL_TWO_DTD, with(2, false, true)),
        (LABEL_ONLY_TRANSFORMER, with(3, true, true)),
        (LABEL_NO_SOD_MAR, with(3, false, false)),
        (LABEL_FULL, with(3, false, true)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub seed: u64,
    pub iterations: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.model == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,PSNR,SSIM,MSE\n");
        for r in &self.rows {
            let _ = writeln!(s, "\"{}\",{:.4},{:.4},{:.4}", r.model, r.psnr, r.ssim, r.mse);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5);
        let mut s = format!("{:<width$}  {:>8}  {:>7}  {:>9}\n", "model", "PSNR", "SSIM", "MSE");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>8.2}  {:>7.4}  {:>9.3}", r.model, r.psnr, r.ssim, r.mse);
        }
        s
    }
}

/// Trains every variant from `base` and scores it on `held`. `on_row` is
/// called as each row finishes.
pub fn run_ablation(
    base: &TrainConfig,
    pools: &UnpairedPools,
    held: &HeldOut,
    n_angles: usize,
    device: &Device,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for (label, cfg) in variants(base) {
        log::info!("ablation: training {label:?}");
        let outcome = train(&cfg, pools, None, device)?;
        let scores = evaluate(Some(&outcome.model), held, n_angles, cfg.include_metal)?
            .method(METHOD_MODEL)
            .expect("model rows present");
        let row = AblationRow {
            model: label.to_string(),
            seed: cfg.seed,
            iterations: cfg.iterations,
            psnr: scores.psnr,
            ssim: scores.ssim,
            mse: scores.mse,
        };
        on_row(&row);
        report.rows.push(row);
    }
    Ok(report)
}
