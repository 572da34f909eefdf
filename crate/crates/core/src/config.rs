//! Model, loss and training configuration plus the `key = value` file format.
//!
//! One setting per line, `#` starts a comment, keys are dotted
//! (`model.channels = 32`). Unknown keys and unparsable values are errors.
//! See [`TrainConfig::set`] for the full key list.

use std::path::{Path, PathBuf};

use dtec_ctsim::dataset::SimConfig;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::dtd::DtdConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width `c` of every encoder and decoder.
    pub channels: usize,
    /// Dense transformer blocks in the main encoder (1..=3).
    pub n_dtd: usize,
    pub dense_convs: usize,
    pub squeezed: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
    pub position_bias: bool,
    pub se_reduction: usize,
    pub gate_from_output: bool,
    pub only_transformer: bool,
    /// When off, the clean decoder sees only the last encoder feature.
    pub sod_mar: bool,
    /// Residual blocks in the artifact and clean-content encoders.
    pub encoder_blocks: usize,
    /// Residual blocks in every decoder trunk.
    pub decoder_blocks: usize,
    pub disc_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_channels(32)
    }
}

impl ModelConfig {
    pub fn with_channels(channels: usize) -> Self {
        let att = AttentionConfig::for_channels(channels);
        Self {
            channels,
            n_dtd: 3,
            dense_convs: 6,
            squeezed: att.squeezed,
            heads: att.heads,
            head_dim: att.head_dim,
            window: att.window,
            position_bias: true,
            se_reduction: 4,
            gate_from_output: false,
            only_transformer: false,
            sod_mar: true,
            encoder_blocks: 2,
            decoder_blocks: 4,
            disc_channels: 64,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            channels: self.channels,
            squeezed: self.squeezed,
            head_dim: self.head_dim,
            heads: self.heads,
            window: self.window,
            position_bias: self.position_bias,
        }
    }

    pub fn dtd(&self) -> DtdConfig {
        DtdConfig {
            attention: self.attention(),
            dense_convs: self.dense_convs,
            reduction: self.se_reduction,
            gate_from_output: self.gate_from_output,
            only_transformer: self.only_transformer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_dtd) {
            return Err(Error::Config(format!("model.n_dtd must be 1, 2 or 3, got {}", self.n_dtd)));
        }
        if self.channels == 0 || self.disc_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        self.dtd().validate().map_err(Error::Config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub rec: f64,
    pub art: f64,
    pub self_reduction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, rec: 20.0, art: 20.0, self_reduction: 20.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("adv", self.adv), ("rec", self.rec), ("art", self.art), ("self", self.self_reduction)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss.{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Single-threaded kernels; bit-reproducible runs.
    pub deterministic: bool,
    /// Write a loss CSV row every this many iterations.
    pub log_every: usize,
    /// Dataset directory written by `simulate`; simulated in memory when unset.
    pub data_dir: Option<PathBuf>,
    pub sim: SimConfig,
    /// Score metal pixels too during evaluation.
    pub include_metal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            batch_size: 2,
            iterations: 2000,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            deterministic: true,
            log_every: 1,
            data_dir: None,
            sim: SimConfig::default(),
            include_metal: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be > 0".into()));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{k} must lie in [0, 1)")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("train.log_every must be >= 1".into()));
        }
        self.sim.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one setting.
    ///
    /// Keys: `model.{channels, n_dtd, dense_convs, squeezed, heads, head_dim,
    /// window, position_bias, se_reduction, gate_from_output,
    /// only_transformer, sod_mar, encoder_blocks, decoder_blocks,
    /// disc_channels}`, `loss.{adv, rec, art, self}`, `train.{batch_size,
    /// iterations, lr, beta1, beta2, seed, deterministic, log_every,
    /// data_dir}`, `sim.{seed, size, count, test_count, n_angles,
    /// min_ellipses, max_ellipses, beam_hardening, photon_count,
    /// metal_attenuation}`, `eval.include_metal`.
    ///
    /// Setting `model.channels` also resets the attention widths derived
    /// from it; set those afterwards to override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "model.channels" => {
                let c: usize = parse(key, value)?;
                let att = AttentionConfig::for_channels(c);
                m.channels = c;
                m.squeezed = att.squeezed;
                m.head_dim = att.head_dim;
            }
            "model.n_dtd" => m.n_dtd = parse(key, value)?,
            "model.dense_convs" => m.dense_convs = parse(key, value)?,
            "model.squeezed" => m.squeezed = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.head_dim" => m.head_dim = parse(key, value)?,
            "model.window" => m.window = parse(key, value)?,
            "model.position_bias" => m.position_bias = parse(key, value)?,
            "model.se_reduction" => m.se_reduction = parse(key, value)?,
            "model.gate_from_output" => m.gate_from_output = parse(key, value)?,
            "model.only_transformer" => m.only_transformer = parse(key, value)?,
            "model.sod_mar" => m.sod_mar = parse(key, value)?,
            "model.encoder_blocks" => m.encoder_blocks = parse(key, value)?,
            "model.decoder_blocks" => m.decoder_blocks = parse(key, value)?,
            "model.disc_channels" => m.disc_channels = parse(key, value)?,
            "loss.adv" => self.loss.adv = parse(key, value)?,
            "loss.rec" => self.loss.rec = parse(key, value)?,
            "loss.art" => self.loss.art = parse(key, value)?,
            "loss.self" => self.loss.self_reduction = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.iterations" => self.iterations = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.beta1" => self.beta1 = parse(key, value)?,
            "train.beta2" => self.beta2 = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.deterministic" => self.deterministic = parse(key, value)?,
            "train.log_every" => self.log_every = parse(key, value)?,
            "train.data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "sim.seed" => self.sim.seed = parse(key, value)?,
            "sim.size" => self.sim.size = parse(key, value)?,
            "sim.count" => self.sim.count = parse(key, value)?,
            "sim.test_count" => self.sim.test_count = parse(key, value)?,
            "sim.n_angles" => self.sim.n_angles = parse(key, value)?,
            "sim.min_ellipses" => self.sim.min_ellipses = parse(key, value)?,
            "sim.max_ellipses" => self.sim.max_ellipses = parse(key, value)?,
            "sim.beam_hardening" => self.sim.params.beam_hardening = parse(key, value)?,
            "sim.photon_count" => self.sim.params.photon_count = parse(key, value)?,
            "sim.metal_attenuation" => self.sim.params.metal_attenuation = parse(key, value)?,
            "eval.include_metal" => self.include_metal = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Applies the settings in `text` on top of `self`, then validates.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    /// Every setting as `key = value` lines; [`TrainConfig::parse_str`]
    /// reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut lines = vec![
            format!("model.channels = {}", m.channels),
            format!("model.n_dtd = {}", m.n_dtd),
            format!("model.dense_convs = {}", m.dense_convs),
            format!("model.squeezed = {}", m.squeezed),
            format!("model.heads = {}", m.heads),
            format!("model.head_dim = {}", m.head_dim),
            format!("model.window = {}", m.window),
            format!("model.position_bias = {}", m.position_bias),
            format!("model.se_reduction = {}", m.se_reduction),
            format!("model.gate_from_output = {}", m.gate_from_output),
            format!("model.only_transformer = {}", m.only_transformer),
            format!("model.sod_mar = {}", m.sod_mar),
            format!("model.encoder_blocks = {}", m.encoder_blocks),
            format!("model.decoder_blocks = {}", m.decoder_blocks),
            format!("model.disc_channels = {}", m.disc_channels),
            format!("loss.adv = {}", self.loss.adv),
            format!("loss.rec = {}", self.loss.rec),
            format!("loss.art = {}", self.loss.art),
            format!("loss.self = {}", self.loss.self_reduction),
            format!("train.batch_size = {}", self.batch_size),
            format!("train.iterations = {}", self.iterations),
            format!("train.lr = {}", self.lr),
            format!("train.beta1 = {}", self.beta1),
            format!("train.beta2 = {}", self.beta2),
            format!("train.seed = {}", self.seed),
            format!("train.deterministic = {}", self.deterministic),
            format!("train.log_every = {}", self.log_every),
        ];
        if let Some(dir) = &self.data_dir {
            lines.push(format!("train.data_dir = {}", dir.display()));
        }
        let sim = &self.sim;
        lines.extend([
            format!("sim.seed = {}", sim.seed),
            format!("sim.size = {}", sim.size),
            format!("sim.count = {}", sim.count),
            format!("sim.test_count = {}", sim.test_count),
            format!("sim.n_angles = {}", sim.n_angles),
            format!("sim.min_ellipses = {}", sim.min_ellipses),
            format!("sim.max_ellipses = {}", sim.max_ellipses),
            format!("sim.beam_hardening = {}", sim.params.beam_hardening),
            format!("sim.photon_count = {}", sim.params.photon_count),
            format!("sim.metal_attenuation = {}", sim.params.metal_attenuation),
            format!("eval.include_metal = {}", self.include_metal),
        ]);
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Steps per epoch: one pass over the artifact pool.
    pub fn epoch_len(&self, artifact_pool: usize) -> usize {
        artifact_pool.div_ceil(self.batch_size).max(1)
    }
}
