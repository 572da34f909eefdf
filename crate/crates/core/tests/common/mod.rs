#![allow(dead_code)]

pub mod audits;
pub mod grads;

use candle_core::{DType, Device, Result, Tensor, Var};
use dtec_core::params::Params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

pub fn cpu() -> Device {
    Device::Cpu
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b)
        .unwrap()
        .abs()
        .unwrap()
        .flatten_all()
        .unwrap()
        .max(0)
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap()
}

/// Adds uniform noise in `[-scale, scale]` to every weight, so
/// zero-initialized maps stop hiding the paths behind them.
pub fn jitter(p: &Params, scale: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for var in p.vars() {
        let noise: Vec<f64> = (0..var.elem_count()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let noise = Tensor::from_vec(noise, var.shape(), var.device())?.to_dtype(var.dtype())?;
        var.set(&(var.as_tensor() + noise)?)?;
    }
    Ok(())
}

pub fn random_var(shape: &[usize], seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu).unwrap()).unwrap()
}

/// Fixed random weighting turning an output into a scalar loss.
pub fn probe_loss(out: &Tensor, probe: &Tensor) -> Result<Tensor> {
    (out * probe)?.sum_all()
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.fraction() >= 0.99
    }
}

fn coordinate_value(var: &Var, idx: usize) -> Result<f64> {
    var.as_tensor().flatten_all()?.get(idx)?.to_scalar::<f64>()
}

fn set_coordinate(var: &Var, idx: usize, value: f64) -> Result<()> {
    let mut data = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
    data[idx] = value;
    var.set(&Tensor::from_vec(data, var.shape(), var.device())?)
}

/// Central finite differences against backprop for `samples` coordinates of
/// each target. `loss` must read the targets' current values on every call.
pub fn grad_check(
    loss: impl Fn() -> Result<Tensor>,
    targets: &[Var],
    samples: usize,
    seed: u64,
) -> Result<GradReport> {
    let grads = loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    for var in targets {
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().and_then(|g| g.to_vec1::<f64>()))
            .transpose()?
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let n = var.elem_count();
        let picks: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.random_range(0..n)).collect()
        };
        for idx in picks {
            let orig = coordinate_value(var, idx)?;
            set_coordinate(var, idx, orig + STEP)?;
            let up = loss()?.to_scalar::<f64>()?;
            set_coordinate(var, idx, orig - STEP)?;
            let down = loss()?.to_scalar::<f64>()?;
            set_coordinate(var, idx, orig)?;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel <= REL_TOL {
                report.passed += 1;
            }
            report.worst = report.worst.max(rel);
        }
    }
    Ok(report)
}

pub fn vars_under(p: &Params, prefix: &str) -> Vec<Var> {
    p.named_vars()
        .into_iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, v)| v)
        .collect()
}

pub fn small_sim() -> dtec_ctsim::dataset::SimConfig {
    dtec_ctsim::dataset::SimConfig {
        size: 32,
        count: 16,
        test_count: 4,
        n_angles: 48,
        ..Default::default()
    }
}

/// A model and data small enough for a few dozen steps per second.
pub fn small_train_config() -> dtec_core::TrainConfig {
    let mut cfg = dtec_core::TrainConfig::default();
    cfg.model = dtec_core::ModelConfig::with_channels(8);
    cfg.model.decoder_blocks = 1;
    cfg.model.encoder_blocks = 1;
    cfg.model.dense_convs = 2;
    cfg.model.disc_channels = 4;
    cfg.sim = small_sim();
    cfg.iterations = 4;
    cfg
}

pub fn hash_pixels(values: impl IntoIterator<Item = f32>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}
