//! Hierarchical disentangling encoder.
//!
//! A 3×3 stem gives `x_l0`; block `i` sees a 1×1 compression of every
//! earlier feature, newest first: `x_li = DTD_i(s_i(cat(x_l{i-1}, .., x_l0)))`.
//! The first block reads `x_l0` directly.

use candle_core::{Module, Result, Tensor};

use crate::dtd::{Dtd, DtdConfig};
use crate::layers::Conv2d;
use crate::params::Params;

/// `[x_l0, .., x_lN]`; the last entry is the high-level feature `x_h`.
#[derive(Clone, Debug)]
pub struct FeatureSequence {
    pub entries: Vec<Tensor>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn high_level(&self) -> &Tensor {
        self.entries.last().expect("feature sequence is never empty")
    }
}

#[derive(Clone, Debug)]
pub struct Hde {
    pub stem: Conv2d,
    pub blocks: Vec<Dtd>,
    /// `compress[k]` feeds block `k + 2` and maps `(k + 2)·c → c`.
    pub compress: Vec<Conv2d>,
}

impl Hde {
    pub fn new(p: &Params, n_dtd: usize, dtd: &DtdConfig) -> Result<Self> {
        if n_dtd == 0 {
            candle_core::bail!("the encoder needs at least one dense transformer block");
        }
        let c = dtd.channels();
        let blocks = (0..n_dtd)
            .map(|i| Dtd::new(&p.pp(format!("dtd.{i}")), dtd))
            .collect::<Result<_>>()?;
        let compress = (2..=n_dtd)
            .map(|i| Conv2d::same(&p.pp(format!("compress.{}", i - 2)), i * c, c, 1))
            .collect::<Result<_>>()?;
        Ok(Self {
            stem: Conv2d::same(&p.pp("stem"), 1, c, 3)?,
            blocks,
            compress,
        })
    }

    pub fn n_dtd(&self) -> usize {
        self.blocks.len()
    }

    pub fn encode(&self, x: &Tensor) -> Result<FeatureSequence> {
        let mut entries = vec![self.stem.forward(x)?];
        for (i, block) in self.blocks.iter().enumerate() {
            let input = if i == 0 {
                entries[0].clone()
            } else {
                let newest_first: Vec<Tensor> = entries.iter().rev().cloned().collect();
                self.compress[i - 1].forward(&Tensor::cat(&newest_first, 1)?)?
            };
            entries.push(block.forward(&input)?);
        }
        Ok(FeatureSequence { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn cfg(c: usize) -> DtdConfig {
        let mut cfg = DtdConfig::for_channels(c);
        cfg.attention.window = 4;
        cfg
    }

    #[test]
    fn sequence_length_is_n_plus_one() {
        for n in 1..=3 {
            let p = Params::new(0, DType::F32, &Device::Cpu);
            let hde = Hde::new(&p, n, &cfg(8)).unwrap();
            let x = Tensor::randn(0f32, 1.0, (2, 1, 8, 8), &Device::Cpu).unwrap();
            let seq = hde.encode(&x).unwrap();
            assert_eq!(seq.len(), n + 1);
            assert_eq!(hde.compress.len(), n - 1);
            for e in &seq.entries {
                assert_eq!(e.dims(), &[2, 8, 8, 8]);
            }
        }
    }

    #[test]
    fn compression_widths() {
        let p = Params::new(0, DType::F32, &Device::Cpu);
        let hde = Hde::new(&p, 3, &cfg(32)).unwrap();
        let widths: Vec<_> = hde.compress.iter().map(|c| c.in_channels()).collect();
        assert_eq!(widths, vec![64, 96]);
    }

    #[test]
    fn zero_blocks_rejected() {
        let p = Params::new(0, DType::F32, &Device::Cpu);
        assert!(Hde::new(&p, 0, &cfg(8)).is_err());
    }
}
