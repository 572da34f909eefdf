//! Finite-difference gradient scenarios shared by the test suites.

use candle_core::{DType, Module, Tensor};
use dtec_core::attention::{AttentionConfig, LightTransformer};
use dtec_core::dtd::{ChannelAttention, Dtd, DtdConfig};
use dtec_core::generator::Generator;
use dtec_core::hde::FeatureSequence;
use dtec_core::params::Params;
use dtec_core::ModelConfig;

use super::{grad_check, jitter, probe_loss, random_var, vars_under, GradReport};

const C: usize = 8;
const HW: usize = 16;

fn params(seed: u64) -> Params {
    Params::new(seed, DType::F64, &super::cpu())
}

fn probe(shape: &[usize], seed: u64) -> Tensor {
    random_var(shape, seed).as_tensor().clone()
}

pub fn light_transformer() -> GradReport {
    let p = params(1);
    let block = LightTransformer::new(&p, &AttentionConfig::for_channels(C)).unwrap();
    jitter(&p, 0.1, 99).unwrap();
    let x = random_var(&[1, C, HW, HW], 2);
    let w = probe(&[1, C, HW, HW], 3);
    let mut targets = vec![x.clone()];
    targets.extend(p.vars());
    grad_check(|| probe_loss(&block.forward(x.as_tensor())?, &w), &targets, 12, 4).unwrap()
}

pub fn dtd_forward() -> GradReport {
    let p = params(5);
    let block = Dtd::new(&p, &DtdConfig::for_channels(C)).unwrap();
    jitter(&p, 0.1, 99).unwrap();
    let x = random_var(&[1, C, HW, HW], 6);
    let w = probe(&[1, C, HW, HW], 7);
    let mut targets = vec![x.clone()];
    targets.extend(p.vars());
    grad_check(|| probe_loss(&block.forward(x.as_tensor())?, &w), &targets, 8, 8).unwrap()
}

pub fn channel_attention() -> GradReport {
    let p = params(9);
    let gate = ChannelAttention::new(&p, C, 4).unwrap();
    let feats = random_var(&[2, C, 8, 8], 10);
    let x1 = random_var(&[2, C, 8, 8], 11);
    let w = probe(&[2, C, 8, 8], 12);
    let mut targets = vec![feats.clone(), x1.clone()];
    targets.extend(p.vars());
    grad_check(
        || probe_loss(&gate.apply(feats.as_tensor(), x1.as_tensor(), x1.as_tensor())?, &w),
        &targets,
        40,
        13,
    )
    .unwrap()
}

fn tiny_generator(seed: u64, jitter_scale: f64) -> (Params, Generator) {
    let p = params(seed);
    let mut cfg = ModelConfig::with_channels(C);
    cfg.dense_convs = 2;
    let g = Generator::new(&p, &cfg).unwrap();
    jitter(&p, jitter_scale, seed).unwrap();
    (p, g)
}

pub fn encode_artifact() -> GradReport {
    let (p, g) = tiny_generator(14, 0.05);
    let x = random_var(&[1, 1, HW, HW], 15);
    let w = probe(&[1, C, HW, HW], 16);
    let mut targets = vec![x.clone()];
    targets.extend(vars_under(&p, "encoder2."));
    grad_check(|| probe_loss(&g.encode_artifact(x.as_tensor())?, &w), &targets, 16, 17).unwrap()
}

pub fn decode_clean() -> GradReport {
    // At fan-in scale the trunk activations shrink to a few hundredths, and a
    // 1e-4 bias step then flips hundreds of ReLUs. Larger weights keep the
    // activations O(1) so the central difference stays on one linear piece.
    let (p, g) = tiny_generator(18, 0.2);
    let entries: Vec<_> = (0..4).map(|i| random_var(&[1, C, HW, HW], 19 + i)).collect();
    let w = probe(&[1, 1, HW, HW], 30);
    let mut targets = entries.clone();
    targets.extend(vars_under(&p, "decoder1."));
    grad_check(
        || {
            let seq = FeatureSequence { entries: entries.iter().map(|v| v.as_tensor().clone()).collect() };
            probe_loss(&g.decode_clean(&seq)?, &w)
        },
        &targets,
        10,
        31,
    )
    .unwrap()
}
