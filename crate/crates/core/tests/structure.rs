mod common;

use candle_core::{DType, Module, Tensor, Var};
use common::{cpu, jitter, max_abs_diff, random_var};
use dtec_core::attention::{AttentionConfig, LightTransformer};
use dtec_core::dtd::{ChannelAttention, Dtd, DtdConfig};
use dtec_core::generator::Generator;
use dtec_core::hde::{FeatureSequence, Hde};
use dtec_core::params::Params;
use dtec_core::ModelConfig;

fn params(seed: u64) -> Params {
    Params::new(seed, DType::F64, &cpu())
}

fn tiny(c: usize) -> ModelConfig {
    let mut cfg = ModelConfig::with_channels(c);
    cfg.window = 4;
    cfg.dense_convs = 2;
    cfg
}

#[test]
fn hde_sequence_length_follows_block_count() {
    for (n, len) in [(1, 2), (2, 3), (3, 4)] {
        let p = params(0);
        let mut cfg = DtdConfig::for_channels(8);
        cfg.attention.window = 4;
        let hde = Hde::new(&p, n, &cfg).unwrap();
        let seq = hde.encode(random_var(&[1, 1, 8, 8], 1).as_tensor()).unwrap();
        assert_eq!(seq.len(), len);
    }
}

#[test]
fn hde_compression_widths_at_default_width() {
    let p = Params::new(0, DType::F32, &cpu());
    let hde = Hde::new(&p, 3, &DtdConfig::for_channels(32)).unwrap();
    let widths: Vec<(usize, usize)> = hde.compress.iter().map(|c| (c.in_channels(), c.out_channels())).collect();
    assert_eq!(widths, vec![(64, 32), (96, 32)]);
}

#[test]
fn zeroed_dtd_weights_leave_the_compression_chain() {
    let p = params(2);
    let mut cfg = DtdConfig::for_channels(8);
    cfg.attention.window = 4;
    let hde = Hde::new(&p, 3, &cfg).unwrap();
    p.zero_where(|n| n.starts_with("dtd.")).unwrap();
    let x = random_var(&[1, 1, 8, 8], 3);
    let seq = hde.encode(x.as_tensor()).unwrap();
    let l0 = hde.stem.forward(x.as_tensor()).unwrap();
    let l1 = l0.clone();
    let l2 = hde.compress[0].forward(&Tensor::cat(&[&l1, &l0], 1).unwrap()).unwrap();
    let l3 = hde.compress[1].forward(&Tensor::cat(&[&l2, &l1, &l0], 1).unwrap()).unwrap();
    for (got, want) in seq.entries.iter().zip([l0, l1, l2, l3]) {
        assert_eq!(max_abs_diff(got, &want), 0.0);
    }
}

#[test]
fn sod_mar_wiring_reachability() {
    let violations = common::audits::sod_mar_violations();
    assert!(violations.is_empty(), "{violations:#?}");
}

#[test]
fn without_sod_mar_only_the_high_level_feature_reaches_x_c() {
    let p = params(8);
    let mut cfg = tiny(8);
    cfg.sod_mar = false;
    let g = Generator::new(&p, &cfg).unwrap();
    assert_eq!(g.decoder1.accepts(), 1);
    let entries: Vec<Var> = (0..4).map(|i| random_var(&[1, 8, 8, 8], 10 + i)).collect();
    let seq = FeatureSequence { entries: entries.iter().map(|v| v.as_tensor().clone()).collect() };
    let grads = g.decode_clean(&seq).unwrap().sum_all().unwrap().backward().unwrap();
    for v in &entries[..3] {
        assert!(grads.get(v.as_tensor()).is_none());
    }
    assert!(grads.get(entries[3].as_tensor()).is_some());
}

#[test]
fn zeroed_light_transformer_is_the_identity() {
    let p = params(9);
    let block = LightTransformer::new(&p, &AttentionConfig::for_channels(8)).unwrap();
    jitter(&p, 0.1, 1).unwrap();
    p.zero_all().unwrap();
    let x = random_var(&[2, 8, 16, 16], 11);
    assert_eq!(max_abs_diff(&block.forward(x.as_tensor()).unwrap(), x.as_tensor()), 0.0);
}

#[test]
fn fresh_light_transformer_starts_as_the_identity() {
    let p = params(12);
    let block = LightTransformer::new(&p, &AttentionConfig::for_channels(8)).unwrap();
    let x = random_var(&[1, 8, 16, 16], 13);
    assert_eq!(max_abs_diff(&block.forward(x.as_tensor()).unwrap(), x.as_tensor()), 0.0);
}

fn small_dtd(p: &Params) -> Dtd {
    let mut cfg = DtdConfig::for_channels(8);
    cfg.attention.window = 4;
    Dtd::new(p, &cfg).unwrap()
}

#[test]
fn dtd_with_zeroed_dense_convs_is_the_identity() {
    let p = params(14);
    let block = small_dtd(&p);
    jitter(&p, 0.1, 2).unwrap();
    p.zero_where(|n| n.starts_with("convs.")).unwrap();
    let x = random_var(&[1, 8, 8, 8], 15);
    assert_eq!(max_abs_diff(&block.forward(x.as_tensor()).unwrap(), x.as_tensor()), 0.0);
}

#[test]
fn dtd_with_closed_gate_is_the_identity() {
    let p = params(16);
    let block = small_dtd(&p);
    jitter(&p, 0.1, 3).unwrap();
    p.zero_where(|n| n.starts_with("gate.fc2.weight")).unwrap();
    let bias = p.var("gate.fc2.bias").unwrap();
    bias.set(&(bias.ones_like().unwrap() * -1e4).unwrap()).unwrap();
    let x = random_var(&[1, 8, 8, 8], 17);
    assert_eq!(max_abs_diff(&block.forward(x.as_tensor()).unwrap(), x.as_tensor()), 0.0);
}

#[test]
fn last_dense_conv_reads_six_blocks_of_channels() {
    let p = Params::new(0, DType::F32, &cpu());
    let block = Dtd::new(&p, &DtdConfig::for_channels(8)).unwrap();
    let widths: Vec<usize> = block.convs.iter().map(|c| c.in_channels()).collect();
    assert_eq!(widths, vec![8, 16, 24, 32, 40, 48]);
    assert!(block.convs.iter().all(|c| c.out_channels() == 8));
}

#[test]
fn dense_path_keeps_reading_the_block_input() {
    let p = params(18);
    let block = small_dtd(&p);
    jitter(&p, 0.1, 4).unwrap();
    // x2 is forced to zero, so only x1 feeds the later convolutions
    p.zero_where(|n| n.starts_with("convs.0.")).unwrap();
    let a = random_var(&[1, 8, 8, 8], 19);
    let b = random_var(&[1, 8, 8, 8], 20);
    let fa = block.dense_features(a.as_tensor()).unwrap();
    let fb = block.dense_features(b.as_tensor()).unwrap();
    assert!(max_abs_diff(&fa, &fb) > 0.0);
}

#[test]
fn gate_is_computed_from_the_block_input() {
    let p = params(21);
    let block = small_dtd(&p);
    jitter(&p, 0.1, 5).unwrap();
    let x = random_var(&[1, 8, 8, 8], 22);
    let dense = block.dense_features(x.as_tensor()).unwrap();
    let out = block.forward(x.as_tensor()).unwrap();
    let expected = (dense.broadcast_mul(&block.gate.gate(x.as_tensor()).unwrap()).unwrap() + x.as_tensor()).unwrap();
    assert!(max_abs_diff(&out, &expected) < 1e-12);
    // ablating x_{J+1} leaves the gate value unchanged
    let g1 = block.gate.gate(x.as_tensor()).unwrap();
    p.zero_where(|n| n.starts_with("convs.")).unwrap();
    let g2 = block.gate.gate(x.as_tensor()).unwrap();
    assert_eq!(max_abs_diff(&g1, &g2), 0.0);
}

#[test]
fn zero_mlp_gate_is_one_half() {
    let p = params(23);
    let ca = ChannelAttention::new(&p, 8, 4).unwrap();
    p.zero_all().unwrap();
    let feats = random_var(&[2, 8, 5, 5], 24);
    let zeros = feats.as_tensor().zeros_like().unwrap();
    let out = ca.apply(feats.as_tensor(), &zeros, &zeros).unwrap();
    assert!(max_abs_diff(&out, &(feats.as_tensor() * 0.5).unwrap()) < 1e-15);
}

#[test]
fn gates_stay_strictly_inside_the_unit_interval() {
    let p = params(25);
    let ca = ChannelAttention::new(&p, 8, 4).unwrap();
    jitter(&p, 0.5, 6).unwrap();
    for seed in 0..5 {
        let x = (random_var(&[3, 8, 4, 4], 26 + seed).as_tensor() * 20.0).unwrap();
        for v in ca.gate(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!(v > 0.0 && v < 1.0);
        }
    }
}

fn generator_count(cfg: &ModelConfig) -> (Params, usize) {
    let p = Params::new(0, DType::F32, &cpu());
    Generator::new(&p, cfg).unwrap();
    let n = p.count();
    (p, n)
}

#[test]
fn parameter_count_grows_with_block_count() {
    let counts: Vec<usize> = (1..=3)
        .map(|n| {
            let mut cfg = ModelConfig::with_channels(16);
            cfg.n_dtd = n;
            generator_count(&cfg).1
        })
        .collect();
    assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
}

#[test]
fn only_transformer_drops_exactly_the_dense_convolutions() {
    let c = 16;
    let full = ModelConfig::with_channels(c);
    let mut lean = full.clone();
    lean.only_transformer = true;
    let per_block: usize = (1..=full.dense_convs).map(|j| j * c * c * 9 + c).sum();
    assert_eq!(generator_count(&full).1 - generator_count(&lean).1, full.n_dtd * per_block);
}

#[test]
fn decoder_accept_headers_follow_the_sequence_length() {
    for (n, accepts, width) in [(1, 2, 16), (2, 3, 24), (3, 4, 32)] {
        let mut cfg = tiny(8);
        cfg.n_dtd = n;
        let p = Params::new(0, DType::F32, &cpu());
        let g = Generator::new(&p, &cfg).unwrap();
        assert_eq!(g.decoder1.accepts(), accepts);
        assert_eq!(g.decoder1.compress.in_channels(), width);
    }
}

#[test]
fn artifact_and_content_encoders_own_separate_weights() {
    let (p, _) = generator_count(&tiny(8));
    let e2 = p.pp("encoder2").named_vars();
    let e3 = p.pp("encoder3").named_vars();
    assert_eq!(e2.len(), e3.len());
    for ((n2, v2), (n3, v3)) in e2.iter().zip(&e3) {
        assert_eq!(n2.strip_prefix("encoder2."), n3.strip_prefix("encoder3."));
        assert_ne!(v2.as_tensor().id(), v3.as_tensor().id());
    }
    // writing into one leaves the other alone
    let probe = e2.values().next().unwrap();
    let twin = e3.values().next().unwrap();
    let before = twin.as_tensor().copy().unwrap();
    probe.set(&(probe.as_tensor() + 1.0).unwrap()).unwrap();
    assert_eq!(max_abs_diff(twin.as_tensor(), &before), 0.0);
}

#[test]
fn decoder2_with_zero_weights_emits_its_bias() {
    let p = params(30);
    let g = Generator::new(&p, &tiny(8)).unwrap();
    jitter(&p, 0.1, 7).unwrap();
    p.zero_where(|n| n.starts_with("decoder2.")).unwrap();
    let bias = p.var("decoder2.trunk.out.bias").unwrap();
    bias.set(&(bias.ones_like().unwrap() * 0.3).unwrap()).unwrap();
    let x_h = random_var(&[1, 8, 8, 8], 31);
    let x_m = x_h.as_tensor().zeros_like().unwrap();
    let out = g.decode_artifact_recon(x_h.as_tensor(), &x_m).unwrap();
    let flat = out.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    assert!(flat.iter().all(|&v| v == 0.3));
}

#[test]
fn artifact_recon_gradient_reaches_both_inputs() {
    let p = params(32);
    let g = Generator::new(&p, &tiny(8)).unwrap();
    jitter(&p, 0.1, 8).unwrap();
    let x_h = random_var(&[1, 8, 8, 8], 33);
    let x_m = random_var(&[1, 8, 8, 8], 34);
    let grads = g.decode_artifact_recon(x_h.as_tensor(), x_m.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
    for v in [&x_h, &x_m] {
        let norm = grads.get(v.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(norm > 0.0);
    }
}

#[test]
fn artifact_addition_is_sensitive_to_the_artifact_code() {
    let p = params(35);
    let g = Generator::new(&p, &tiny(8)).unwrap();
    jitter(&p, 0.1, 9).unwrap();
    let x_s = random_var(&[1, 8, 8, 8], 36);
    let x_m = random_var(&[1, 8, 8, 8], 37);
    let bumped = (x_m.as_tensor() + 0.1).unwrap();
    let a = g.decode_artifact_add(x_s.as_tensor(), x_m.as_tensor()).unwrap();
    let b = g.decode_artifact_add(x_s.as_tensor(), &bumped).unwrap();
    assert!(max_abs_diff(&a, &b) > 0.0);
}

#[test]
fn encoders_are_deterministic_and_map_zero_to_zero_without_bias() {
    let p = params(38);
    let g = Generator::new(&p, &tiny(8)).unwrap();
    let y = random_var(&[1, 1, 8, 8], 39);
    let a = g.encode_clean(y.as_tensor()).unwrap();
    let b = g.encode_clean(y.as_tensor()).unwrap();
    assert_eq!(a.dims(), &[1, 8, 8, 8]);
    assert_eq!(max_abs_diff(&a, &b), 0.0);
    p.zero_where(|n| n.starts_with("encoder2.") && n.ends_with(".bias")).unwrap();
    let zero = y.as_tensor().zeros_like().unwrap();
    let x_m = g.encode_artifact(&zero).unwrap();
    assert_eq!(x_m.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
}
