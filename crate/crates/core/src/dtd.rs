//! Dense transformer block.
//!
//! `x2 = f_1(T(x1))`, then `x_{j+1} = f_j(cat(x1, .., x_j))` for
//! `j = 2..=J`, each `f_j` a 3×3 convolution with ReLU emitting `C`
//! channels. The block returns `x_{J+1} * gate + x1`, where the per-channel
//! gate is a squeeze-excitation MLP over the pooled block input.

use candle_core::{Module, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, LightTransformer};
use crate::layers::{Conv2d, Linear};
use crate::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtdConfig {
    pub attention: AttentionConfig,
    /// `J`, dense convolutions after the transformer.
    pub dense_convs: usize,
    /// Hidden width of the gate MLP is `C / reduction`.
    pub reduction: usize,
    /// Pool the gate from `x_{J+1}` instead of `x1`.
    pub gate_from_output: bool,
    /// Drop the dense convolutions and keep only the transformer.
    pub only_transformer: bool,
}

impl DtdConfig {
    pub fn for_channels(channels: usize) -> Self {
        Self {
            attention: AttentionConfig::for_channels(channels),
            dense_convs: 6,
            reduction: 4,
            gate_from_output: false,
            only_transformer: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.attention.channels
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.attention.validate()?;
        let c = self.channels();
        if self.dense_convs == 0 {
            return Err("dense_convs must be >= 1".into());
        }
        if self.reduction == 0 || c % self.reduction != 0 {
            return Err(format!("reduction {} must divide {c}", self.reduction));
        }
        Ok(())
    }
}

/// Squeeze-excitation gate: `sigmoid(W2 relu(W1 mean(x)))`, one value per channel.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelAttention {
    pub fn new(p: &Params, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            fc1: Linear::new(&p.pp("fc1"), channels, hidden)?,
            fc2: Linear::new(&p.pp("fc2"), hidden, channels)?,
        })
    }

    /// `(B, C, 1, 1)` gate values in (0, 1).
    pub fn gate(&self, source: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = source.dims4()?;
        let pooled = source.mean((2, 3))?;
        let h = self.fc1.forward(&pooled)?.relu()?;
        candle_nn::ops::sigmoid(&self.fc2.forward(&h)?)?.reshape((b, c, 1, 1))
    }

    /// `features * gate(source) + residual`.
    pub fn apply(&self, features: &Tensor, source: &Tensor, residual: &Tensor) -> Result<Tensor> {
        if features.shape() != residual.shape() || features.shape() != source.shape() {
            candle_core::bail!(
                "channel attention shapes differ: {:?} / {:?} / {:?}",
                features.shape(),
                source.shape(),
                residual.shape()
            );
        }
        features.broadcast_mul(&self.gate(source)?)? + residual
    }
}

#[derive(Clone, Debug)]
pub struct Dtd {
    pub transformer: LightTransformer,
    pub convs: Vec<Conv2d>,
    pub gate: ChannelAttention,
    cfg: DtdConfig,
}

impl Dtd {
    pub fn new(p: &Params, cfg: &DtdConfig) -> Result<Self> {
        if let Err(e) = cfg.validate() {
            candle_core::bail!("dtd config: {e}");
        }
        let c = cfg.channels();
        let convs = if cfg.only_transformer {
            Vec::new()
        } else {
            (1..=cfg.dense_convs)
                .map(|j| Conv2d::same(&p.pp(format!("convs.{}", j - 1)), j * c, c, 3))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            transformer: LightTransformer::new(&p.pp("transformer"), &cfg.attention)?,
            convs,
            gate: ChannelAttention::new(&p.pp("gate"), c, cfg.reduction)?,
            cfg: *cfg,
        })
    }

    pub fn config(&self) -> &DtdConfig {
        &self.cfg
    }

    /// Output of the last dense convolution, `x_{J+1}` (or `T(x1)` when
    /// only the transformer is kept).
    pub fn dense_features(&self, x1: &Tensor) -> Result<Tensor> {
        let c = self.cfg.channels();
        if x1.dim(1)? != c {
            candle_core::bail!("dtd expects {c} channels, got {}", x1.dim(1)?);
        }
        let t = self.transformer.forward(x1)?;
        let Some((first, rest)) = self.convs.split_first() else {
            return Ok(t);
        };
        let mut feats = vec![x1.clone(), first.forward(&t)?.relu()?];
        for conv in rest {
            let next = conv.forward(&Tensor::cat(&feats, 1)?)?.relu()?;
            feats.push(next);
        }
        Ok(feats.pop().expect("at least two features"))
    }
}

impl Module for Dtd {
    fn forward(&self, x1: &Tensor) -> Result<Tensor> {
        let dense = self.dense_features(x1)?;
        let source = if self.cfg.gate_from_output { &dense } else { x1 };
        self.gate.apply(&dense, source, x1)
    }
}
