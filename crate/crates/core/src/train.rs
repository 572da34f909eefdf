//! Alternating adversarial training on unpaired pools.
//!
//! Each iteration draws `x_a` and `y_c` independently, takes one Adam step
//! on the generator against the current discriminators, then one step on
//! the discriminators against the (detached) generator outputs of the same
//! forward pass. The trainer only ever sees [`UnpairedPools`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::{BatchDraw, UnpairedPools, UnpairedSampler};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{art_loss, rec_loss, self_loss, Discriminators, GeneratorLosses, LossRecord};
use crate::params::Params;

pub const GENERATOR_SCOPE: &str = "generator";
pub const DISCRIMINATOR_SCOPE: &str = "discriminators";
pub const LOSS_CSV: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const FINAL_CHECKPOINT: &str = "model.safetensors";
pub const NAN_DUMP: &str = "nan_dump.json";

/// Generator and discriminators sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: Params,
    pub generator: Generator,
    pub discriminators: Discriminators,
    pub config: ModelConfig,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let params = Params::new(seed, dtype, device);
        let generator = Generator::new(&params.pp(GENERATOR_SCOPE), config)?;
        let discriminators = Discriminators::new(&params.pp(DISCRIMINATOR_SCOPE), config.disc_channels)?;
        Ok(Self { params, generator, discriminators, config: config.clone() })
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let model = Self::new(&ck.model, 0, DType::F32, device)?;
        model.params.load(&ck.tensors)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path, device)?, device)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.params, &self.config)
    }

    pub fn generator_vars(&self) -> Vec<Var> {
        self.params.pp(GENERATOR_SCOPE).vars()
    }

    pub fn discriminator_vars(&self) -> Vec<Var> {
        self.params.pp(DISCRIMINATOR_SCOPE).vars()
    }

    /// Artifact removal on a `(B, 1, H, W)` batch.
    pub fn restore(&self, x_a: &Tensor) -> Result<Tensor> {
        Ok(self.generator.restore(x_a)?)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Serialize)]
struct TensorStats {
    min: f64,
    max: f64,
    mean: f64,
}

fn stats(t: &Tensor) -> TensorStats {
    let v: Vec<f64> = t
        .to_dtype(DType::F64)
        .and_then(|t| t.flatten_all())
        .and_then(|t| t.to_vec1())
        .unwrap_or_default();
    let n = v.len().max(1) as f64;
    TensorStats {
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: v.iter().sum::<f64>() / n,
    }
}

#[derive(Serialize)]
struct NanDump<'a> {
    iteration: usize,
    losses: &'a LossRecord,
    artifact_cases: Vec<usize>,
    clean_cases: Vec<usize>,
    x_a: TensorStats,
    y_c: TensorStats,
    x_c: TensorStats,
    y_a: TensorStats,
}

pub struct Trainer<'a> {
    pub model: Model,
    pools: &'a UnpairedPools,
    sampler: UnpairedSampler,
    opt_g: AdamW,
    opt_d: AdamW,
    cfg: TrainConfig,
    iteration: usize,
    dump_dir: Option<PathBuf>,
    last_draw: Option<BatchDraw>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, pools: &'a UnpairedPools, device: &Device) -> Result<Self> {
        cfg.validate()?;
        crate::conv::set_parallel(!cfg.deterministic);
        let model = Model::new(&cfg.model, cfg.seed, DType::F32, device)?;
        let adam = ParamsAdamW { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: 1e-8, weight_decay: 0.0 };
        let opt_g = AdamW::new(model.generator_vars(), adam.clone())?;
        let opt_d = AdamW::new(model.discriminator_vars(), adam)?;
        // the sampler stream is decorrelated from weight init
        let sampler = UnpairedSampler::new(cfg.seed ^ 0x5eed_da7a, cfg.batch_size, pools);
        Ok(Self { model, pools, sampler, opt_g, opt_d, cfg: cfg.clone(), iteration: 0, dump_dir: None, last_draw: None })
    }

    /// Directory for the diagnostic dump written on a numerical abort.
    pub fn set_dump_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = Some(dir.into());
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Pool positions fed to the most recent step.
    pub fn last_draw(&self) -> Option<&BatchDraw> {
        self.last_draw.as_ref()
    }

    pub fn pools(&self) -> &UnpairedPools {
        self.pools
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let draw = self.sampler.draw();
        let device = self.model.params.device();
        let (x_a, y_c) = self.pools.batch(&draw, &device)?;
        self.last_draw = Some(draw.clone());
        let g = &self.model.generator;
        let d = &self.model.discriminators;
        let w = &self.cfg.loss;

        let out = g.forward(&x_a, &y_c)?;
        let adv = match d.generator_loss(&out.x_c, &out.y_a) {
            Ok(l) => l,
            Err(_) => {
                let record = LossRecord { iteration: self.iteration + 1, ..LossRecord::nan() };
                return Err(self.abort(&record, &draw, &x_a, &y_c, &out.x_c, &out.y_a));
            }
        };
        let parts = GeneratorLosses {
            adv,
            rec: rec_loss(&out.x_a_rec, &x_a, &out.y_c_rec, &y_c)?,
            art: art_loss(&x_a, &out.x_c, &y_c, &out.y_a)?,
            self_reduction: self_loss(&out.y_c_self, &y_c)?,
        };
        let total = parts.total(w)?;
        let mut record = LossRecord {
            iteration: self.iteration + 1,
            adv_d: f64::NAN,
            adv_g: scalar(&parts.adv)?,
            rec: scalar(&parts.rec)?,
            art: scalar(&parts.art)?,
            self_reduction: scalar(&parts.self_reduction)?,
            total: scalar(&total)?,
        };
        if !record.total.is_finite() {
            return Err(self.abort(&record, &draw, &x_a, &y_c, &out.x_c, &out.y_a));
        }
        self.opt_g.step(&total.backward()?)?;

        let (x_c, y_a) = (out.x_c.detach(), out.y_a.detach());
        let logits = d.logits(&x_c, &y_c, &x_a, &y_a)?;
        let d_loss = match logits.discriminator_loss() {
            Ok(l) => l,
            Err(_) => return Err(self.abort(&record, &draw, &x_a, &y_c, &x_c, &y_a)),
        };
        record.adv_d = scalar(&d_loss)?;
        if !record.is_finite() {
            return Err(self.abort(&record, &draw, &x_a, &y_c, &x_c, &y_a));
        }
        self.opt_d.step(&d_loss.backward()?)?;
        self.iteration += 1;
        Ok(record)
    }

    fn abort(&self, record: &LossRecord, draw: &BatchDraw, x_a: &Tensor, y_c: &Tensor, x_c: &Tensor, y_a: &Tensor) -> Error {
        let msg = format!("non-finite loss at iteration {}: {}", record.iteration, record.csv_row());
        if let Some(dir) = &self.dump_dir {
            let dump = NanDump {
                iteration: record.iteration,
                losses: record,
                artifact_cases: draw.artifact.clone(),
                clean_cases: draw.clean.clone(),
                x_a: stats(x_a),
                y_c: stats(y_c),
                x_c: stats(x_c),
                y_a: stats(y_a),
            };
            let path = dir.join(NAN_DUMP);
            match serde_json::to_string_pretty(&dump).map(|s| std::fs::write(&path, s)) {
                Ok(Ok(())) => log::error!("diagnostic dump written to {}", path.display()),
                _ => log::error!("could not write diagnostic dump to {}", path.display()),
            }
        }
        Error::Numerical(msg)
    }
}

/// Result of a full run.
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<LossRecord>,
}

/// Runs `cfg.iterations` steps. With an output directory, writes the loss
/// CSV, a rolling checkpoint after every epoch and the final model.
pub fn train(cfg: &TrainConfig, pools: &UnpairedPools, out_dir: Option<&Path>, device: &Device) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, pools, device)?;
    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            trainer.set_dump_dir(dir);
            let mut f = BufWriter::new(File::create(dir.join(LOSS_CSV))?);
            writeln!(f, "{}", LossRecord::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let epoch = cfg.epoch_len(pools.artifact_len());
    let mut records = Vec::with_capacity(cfg.iterations);
    let started = std::time::Instant::now();
    for it in 1..=cfg.iterations {
        let record = trainer.step()?;
        if let Some(f) = csv.as_mut() {
            if it % cfg.log_every == 0 || it == cfg.iterations {
                writeln!(f, "{}", record.csv_row())?;
            }
        }
        if it % epoch == 0 {
            log::info!(
                "epoch {} (iteration {it}/{}): total {:.4}, D {:.4}, {:.1}s",
                it / epoch,
                cfg.iterations,
                record.total,
                record.adv_d,
                started.elapsed().as_secs_f64()
            );
            if let (Some(dir), Some(f)) = (out_dir, csv.as_mut()) {
                f.flush()?;
                trainer.model.save(dir.join(CHECKPOINT_FILE))?;
            }
        }
        records.push(record);
    }
    if let (Some(dir), Some(f)) = (out_dir, csv.as_mut()) {
        f.flush()?;
        trainer.model.save(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { model: trainer.model, records })
}
