//! Generator: three encoders and four decoders.
//!
//! | path                         | output                  |
//! |------------------------------|-------------------------|
//! | `Decoder1(HDE(x_a))`         | `x_c`, artifact removed |
//! | `Decoder2(x_h, x_m)`         | `x̃_a`, identity of `x_a` |
//! | `Decoder3(x_s, x_m)`         | `y_a`, artifact added   |
//! | `Decoder4(x_s)`              | `ỹ_c`, identity of `y_c` |
//! | `Decoder1(HDE(y_a))`         | `ŷ_c`, self-reduction   |
//!
//! `x_m` comes from the artifact encoder on `x_a`, `x_s` from the content
//! encoder on `y_c`. Everything runs at full input resolution.

use candle_core::{Module, Result, Tensor};

use crate::config::ModelConfig;
use crate::hde::{FeatureSequence, Hde};
use crate::layers::{Conv2d, ResBlock};
use crate::params::Params;

/// 3×3 stem to `c` channels followed by residual blocks.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub stem: Conv2d,
    pub blocks: Vec<ResBlock>,
}

impl ConvEncoder {
    pub fn new(p: &Params, channels: usize, n_blocks: usize) -> Result<Self> {
        Ok(Self {
            stem: Conv2d::same(&p.pp("stem"), 1, channels, 3)?,
            blocks: (0..n_blocks)
                .map(|i| ResBlock::new(&p.pp(format!("blocks.{i}")), channels))
                .collect::<Result<_>>()?,
        })
    }
}

impl Module for ConvEncoder {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }
}

/// Residual blocks then a 3×3 projection to one image channel.
#[derive(Clone, Debug)]
pub struct DecoderTrunk {
    pub blocks: Vec<ResBlock>,
    pub out: Conv2d,
}

impl DecoderTrunk {
    pub fn new(p: &Params, channels: usize, n_blocks: usize) -> Result<Self> {
        Ok(Self {
            blocks: (0..n_blocks)
                .map(|i| ResBlock::new(&p.pp(format!("blocks.{i}")), channels))
                .collect::<Result<_>>()?,
            out: Conv2d::same(&p.pp("out"), channels, 1, 3)?,
        })
    }
}

impl Module for DecoderTrunk {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        self.out.forward(&h)
    }
}

/// One 1×1 accept header per input feature, concatenation, 1×1
/// compression, trunk.
#[derive(Clone, Debug)]
pub struct SequenceDecoder {
    pub headers: Vec<Conv2d>,
    pub compress: Conv2d,
    pub trunk: DecoderTrunk,
}

impl SequenceDecoder {
    pub fn new(p: &Params, channels: usize, n_inputs: usize, n_blocks: usize) -> Result<Self> {
        Ok(Self {
            headers: (0..n_inputs)
                .map(|i| Conv2d::same(&p.pp(format!("headers.{i}")), channels, channels, 1))
                .collect::<Result<_>>()?,
            compress: Conv2d::same(&p.pp("compress"), n_inputs * channels, channels, 1)?,
            trunk: DecoderTrunk::new(&p.pp("trunk"), channels, n_blocks)?,
        })
    }

    pub fn accepts(&self) -> usize {
        self.headers.len()
    }

    pub fn decode(&self, inputs: &[Tensor]) -> Result<Tensor> {
        if inputs.len() != self.headers.len() {
            candle_core::bail!("decoder accepts {} features, got {}", self.headers.len(), inputs.len());
        }
        let heads = self
            .headers
            .iter()
            .zip(inputs)
            .map(|(h, x)| h.forward(x))
            .collect::<Result<Vec<_>>>()?;
        self.trunk.forward(&self.compress.forward(&Tensor::cat(&heads, 1)?)?)
    }
}

/// Two features concatenated, compressed by a 1×1 convolution, then a trunk.
#[derive(Clone, Debug)]
pub struct PairDecoder {
    pub compress: Conv2d,
    pub trunk: DecoderTrunk,
}

impl PairDecoder {
    pub fn new(p: &Params, channels: usize, n_blocks: usize) -> Result<Self> {
        Ok(Self {
            compress: Conv2d::same(&p.pp("compress"), 2 * channels, channels, 1)?,
            trunk: DecoderTrunk::new(&p.pp("trunk"), channels, n_blocks)?,
        })
    }

    pub fn decode(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            candle_core::bail!("decoder inputs differ: {:?} vs {:?}", a.shape(), b.shape());
        }
        self.trunk.forward(&self.compress.forward(&Tensor::cat(&[a, b], 1)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorOutputs {
    pub x_c: Tensor,
    pub y_a: Tensor,
    pub x_a_rec: Tensor,
    pub y_c_rec: Tensor,
    /// `Decoder1(HDE(y_a))`.
    pub y_c_self: Tensor,
    pub sequence: FeatureSequence,
    pub x_m: Tensor,
    pub x_s: Tensor,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub encoder1: Hde,
    pub encoder2: ConvEncoder,
    pub encoder3: ConvEncoder,
    pub decoder1: SequenceDecoder,
    pub decoder2: PairDecoder,
    pub decoder3: PairDecoder,
    pub decoder4: SequenceDecoder,
    sod_mar: bool,
}

impl Generator {
    pub fn new(p: &Params, cfg: &ModelConfig) -> Result<Self> {
        if let Err(e) = cfg.validate() {
            candle_core::bail!("{e}");
        }
        let c = cfg.channels;
        let accepts = if cfg.sod_mar { cfg.n_dtd + 1 } else { 1 };
        Ok(Self {
            encoder1: Hde::new(&p.pp("encoder1"), cfg.n_dtd, &cfg.dtd())?,
            encoder2: ConvEncoder::new(&p.pp("encoder2"), c, cfg.encoder_blocks)?,
            encoder3: ConvEncoder::new(&p.pp("encoder3"), c, cfg.encoder_blocks)?,
            decoder1: SequenceDecoder::new(&p.pp("decoder1"), c, accepts, cfg.decoder_blocks)?,
            decoder2: PairDecoder::new(&p.pp("decoder2"), c, cfg.decoder_blocks)?,
            decoder3: PairDecoder::new(&p.pp("decoder3"), c, cfg.decoder_blocks)?,
            decoder4: SequenceDecoder::new(&p.pp("decoder4"), c, 1, cfg.decoder_blocks)?,
            sod_mar: cfg.sod_mar,
        })
    }

    pub fn sod_mar(&self) -> bool {
        self.sod_mar
    }

    pub fn encode_artifact_sequence(&self, x_a: &Tensor) -> Result<FeatureSequence> {
        self.encoder1.encode(x_a)
    }

    /// `x_m`.
    pub fn encode_artifact(&self, x_a: &Tensor) -> Result<Tensor> {
        self.encoder2.forward(x_a)
    }

    /// `x_s`.
    pub fn encode_clean(&self, y_c: &Tensor) -> Result<Tensor> {
        self.encoder3.forward(y_c)
    }

    /// `x_c` from the full sequence, or from `x_h` alone without SOD-MAR.
    pub fn decode_clean(&self, seq: &FeatureSequence) -> Result<Tensor> {
        if self.sod_mar {
            self.decoder1.decode(&seq.entries)
        } else {
            self.decoder1.decode(std::slice::from_ref(seq.high_level()))
        }
    }

    /// `x̃_a` from `x_h` and `x_m` only.
    pub fn decode_artifact_recon(&self, x_h: &Tensor, x_m: &Tensor) -> Result<Tensor> {
        self.decoder2.decode(x_h, x_m)
    }

    /// `y_a`.
    pub fn decode_artifact_add(&self, x_s: &Tensor, x_m: &Tensor) -> Result<Tensor> {
        self.decoder3.decode(x_s, x_m)
    }

    /// `ỹ_c`.
    pub fn decode_clean_identity(&self, x_s: &Tensor) -> Result<Tensor> {
        self.decoder4.decode(std::slice::from_ref(x_s))
    }

    /// Artifact removal alone, as used at inference.
    pub fn restore(&self, x_a: &Tensor) -> Result<Tensor> {
        self.decode_clean(&self.encode_artifact_sequence(x_a)?)
    }

    pub fn forward(&self, x_a: &Tensor, y_c: &Tensor) -> Result<GeneratorOutputs> {
        if x_a.shape() != y_c.shape() {
            candle_core::bail!("x_a {:?} and y_c {:?} differ in shape", x_a.shape(), y_c.shape());
        }
        let sequence = self.encode_artifact_sequence(x_a)?;
        let x_m = self.encode_artifact(x_a)?;
        let x_s = self.encode_clean(y_c)?;
        self.decode_latents(sequence, x_m, x_s)
    }

    /// Every decoder path from already-encoded latents; the second half of
    /// [`Generator::forward`].
    pub fn decode_latents(&self, sequence: FeatureSequence, x_m: Tensor, x_s: Tensor) -> Result<GeneratorOutputs> {
        let x_c = self.decode_clean(&sequence)?;
        let x_a_rec = self.decode_artifact_recon(sequence.high_level(), &x_m)?;
        let y_a = self.decode_artifact_add(&x_s, &x_m)?;
        let y_c_rec = self.decode_clean_identity(&x_s)?;
        let y_c_self = self.restore(&y_a)?;
        Ok(GeneratorOutputs { x_c, y_a, x_a_rec, y_c_rec, y_c_self, sequence, x_m, x_s })
    }
}
