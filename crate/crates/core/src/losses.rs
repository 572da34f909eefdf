//! Patch discriminators and the training objectives.
//!
//! `D0` judges the clean domain (`y_c` real, `x_c` fake), `D1` the artifact
//! domain (`x_a` real, `y_a` fake). The discriminators maximize
//!
//! ```text
//! log(1 - D0(x_c)) + log D0(y_c) + log D1(x_a) + log(1 - D1(y_a))
//! ```
//!
//! with patch probabilities averaged to scalars, while the generator
//! minimizes `-(log D0(x_c) + log D1(y_a))`. All pixel terms are mean L1.

use candle_core::{Module, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::conv::ConvGeometry;
use crate::layers::{leaky_relu, Conv2d};
use crate::params::Params;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-6;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Three 4×4 stride-2 convolutions (`base`, `2·base`, `4·base` channels)
/// and a 3×3 head emitting one logit per patch.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub convs: Vec<Conv2d>,
    pub head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(p: &Params, base: usize) -> Result<Self> {
        let widths = [1, base, 2 * base, 4 * base];
        let convs = (0..3)
            .map(|i| Conv2d::new(&p.pp(format!("convs.{i}")), widths[i], widths[i + 1], ConvGeometry::new(4, 2, 1)))
            .collect::<Result<_>>()?;
        Ok(Self {
            convs,
            head: Conv2d::same(&p.pp("head"), 4 * base, 1, 3)?,
        })
    }
}

impl Module for PatchDiscriminator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, LEAKY_SLOPE)?;
        }
        self.head.forward(&h)
    }
}

fn check_finite(name: &str, logits: &Tensor) -> Result<()> {
    let s = logits.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        candle_core::bail!("non-finite {name} logits");
    }
    Ok(())
}

/// Mean of `log(clamp(sigmoid(logits)))`, or of `log(1 - ...)` when `complement`.
pub fn mean_log_prob(logits: &Tensor, complement: bool) -> Result<Tensor> {
    let p = candle_nn::ops::sigmoid(logits)?;
    let p = if complement { p.affine(-1.0, 1.0)? } else { p };
    p.clamp(EPS, 1.0 - EPS)?.log()?.mean_all()
}

/// Patch logits of both discriminators on one batch.
#[derive(Clone, Debug)]
pub struct AdversarialLogits {
    pub d0_fake: Tensor,
    pub d0_real: Tensor,
    pub d1_real: Tensor,
    pub d1_fake: Tensor,
}

impl AdversarialLogits {
    pub fn check_finite(&self) -> Result<()> {
        check_finite("D0(x_c)", &self.d0_fake)?;
        check_finite("D0(y_c)", &self.d0_real)?;
        check_finite("D1(x_a)", &self.d1_real)?;
        check_finite("D1(y_a)", &self.d1_fake)
    }

    /// The two-discriminator objective; the discriminators ascend it.
    pub fn objective(&self) -> Result<Tensor> {
        self.check_finite()?;
        let terms = [
            mean_log_prob(&self.d0_fake, true)?,
            mean_log_prob(&self.d0_real, false)?,
            mean_log_prob(&self.d1_real, false)?,
            mean_log_prob(&self.d1_fake, true)?,
        ];
        Tensor::stack(&terms, 0)?.sum_all()
    }

    pub fn discriminator_loss(&self) -> Result<Tensor> {
        self.objective()?.neg()
    }
}

#[derive(Clone, Debug)]
pub struct Discriminators {
    /// Clean domain.
    pub d0: PatchDiscriminator,
    /// Artifact domain.
    pub d1: PatchDiscriminator,
}

impl Discriminators {
    pub fn new(p: &Params, base: usize) -> Result<Self> {
        Ok(Self {
            d0: PatchDiscriminator::new(&p.pp("d0"), base)?,
            d1: PatchDiscriminator::new(&p.pp("d1"), base)?,
        })
    }

    pub fn logits(&self, x_c: &Tensor, y_c: &Tensor, x_a: &Tensor, y_a: &Tensor) -> Result<AdversarialLogits> {
        Ok(AdversarialLogits {
            d0_fake: self.d0.forward(x_c)?,
            d0_real: self.d0.forward(y_c)?,
            d1_real: self.d1.forward(x_a)?,
            d1_fake: self.d1.forward(y_a)?,
        })
    }

    /// Non-saturating generator term `-(log D0(x_c) + log D1(y_a))`.
    pub fn generator_loss(&self, x_c: &Tensor, y_a: &Tensor) -> Result<Tensor> {
        let d0 = self.d0.forward(x_c)?;
        let d1 = self.d1.forward(y_a)?;
        check_finite("D0(x_c)", &d0)?;
        check_finite("D1(y_a)", &d1)?;
        (mean_log_prob(&d0, false)? + mean_log_prob(&d1, false)?)?.neg()
    }
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        candle_core::bail!("L1 shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    }
    (a - b)?.abs()?.mean_all()
}

/// `|x̃_a - x_a| + |ỹ_c - y_c|`, each a pixel mean.
pub fn rec_loss(x_a_rec: &Tensor, x_a: &Tensor, y_c_rec: &Tensor, y_c: &Tensor) -> Result<Tensor> {
    l1(x_a_rec, x_a)? + l1(y_c_rec, y_c)?
}

/// Mean `|(x_a - x_c) - (y_a - y_c)|`.
pub fn art_loss(x_a: &Tensor, x_c: &Tensor, y_c: &Tensor, y_a: &Tensor) -> Result<Tensor> {
    l1(&(x_a - x_c)?, &(y_a - y_c)?)
}

/// Mean `|ŷ_c - y_c|`.
pub fn self_loss(y_c_self: &Tensor, y_c: &Tensor) -> Result<Tensor> {
    l1(y_c_self, y_c)
}

/// Scalar parts of one generator step.
#[derive(Clone, Debug)]
pub struct GeneratorLosses {
    pub adv: Tensor,
    pub rec: Tensor,
    pub art: Tensor,
    pub self_reduction: Tensor,
}

impl GeneratorLosses {
    pub fn total(&self, w: &LossWeights) -> Result<Tensor> {
        total_loss(&self.adv, &self.rec, &self.art, &self.self_reduction, w)
    }
}

pub fn total_loss(adv: &Tensor, rec: &Tensor, art: &Tensor, self_reduction: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let terms = [
        (adv * w.adv)?,
        (rec * w.rec)?,
        (art * w.art)?,
        (self_reduction * w.self_reduction)?,
    ];
    Tensor::stack(&terms, 0)?.sum_all()
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub adv_d: f64,
    pub adv_g: f64,
    pub rec: f64,
    pub art: f64,
    pub self_reduction: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,L_adv_D,L_adv_G,L_rec,L_art,L_self,total";

    /// Every loss unset.
    pub fn nan() -> Self {
        Self {
            iteration: 0,
            adv_d: f64::NAN,
            adv_g: f64::NAN,
            rec: f64::NAN,
            art: f64::NAN,
            self_reduction: f64::NAN,
            total: f64::NAN,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.adv_d, self.adv_g, self.rec, self.art, self.self_reduction, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.adv_d, self.adv_g, self.rec, self.art, self.self_reduction, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}
