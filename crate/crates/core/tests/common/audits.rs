//! Structural and attention audits shared by the test suites.

use candle_core::{DType, Tensor, Var, D};
use candle_core::Module;
use dtec_core::attention::{AttentionConfig, WindowAttention};
use dtec_core::generator::Generator;
use dtec_core::hde::FeatureSequence;
use dtec_core::params::Params;
use dtec_core::ModelConfig;

use super::{cpu, jitter, max_abs_diff, random_var};

fn detached(t: &Tensor) -> Var {
    Var::from_tensor(&t.detach()).unwrap()
}

fn reaches(output: &Tensor, latent: &Var) -> bool {
    let grads = output.sum_all().unwrap().backward().unwrap();
    grads
        .get(latent.as_tensor())
        .map(|g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap() > 0.0)
        .unwrap_or(false)
}

/// Feeds detached copies of every latent into the decoder half of the
/// generator and lists each output/latent pair whose gradient reachability
/// differs from the intended wiring. Empty means the wiring holds.
pub fn sod_mar_violations() -> Vec<String> {
    let p = Params::new(4, DType::F64, &cpu());
    let mut cfg = ModelConfig::with_channels(8);
    cfg.window = 4;
    cfg.dense_convs = 2;
    let g = Generator::new(&p, &cfg).unwrap();
    jitter(&p, 0.05, 5).unwrap();
    let x_a = random_var(&[1, 1, 8, 8], 6);
    let y_c = random_var(&[1, 1, 8, 8], 7);
    let seq = g.encode_artifact_sequence(x_a.as_tensor()).unwrap();
    let entries: Vec<Var> = seq.entries.iter().map(detached).collect();
    let x_m = detached(&g.encode_artifact(x_a.as_tensor()).unwrap());
    let x_s = detached(&g.encode_clean(y_c.as_tensor()).unwrap());
    let out = g
        .decode_latents(
            FeatureSequence { entries: entries.iter().map(|v| v.as_tensor().clone()).collect() },
            x_m.as_tensor().clone(),
            x_s.as_tensor().clone(),
        )
        .unwrap();

    let mut expect: Vec<(String, &Tensor, &Var, bool)> = Vec::new();
    for (i, l) in entries[..3].iter().enumerate() {
        expect.push((format!("x_l{i} -> x_c"), &out.x_c, l, true));
        expect.push((format!("x_l{i} -> x_a_rec"), &out.x_a_rec, l, false));
        expect.push((format!("x_l{i} -> y_a"), &out.y_a, l, false));
        expect.push((format!("x_l{i} -> y_c_rec"), &out.y_c_rec, l, false));
        expect.push((format!("x_l{i} -> y_c_self"), &out.y_c_self, l, false));
    }
    let x_h = &entries[3];
    expect.push(("x_h -> x_c".into(), &out.x_c, x_h, true));
    expect.push(("x_h -> x_a_rec".into(), &out.x_a_rec, x_h, true));
    expect.push(("x_m -> x_a_rec".into(), &out.x_a_rec, &x_m, true));
    expect.push(("x_m -> y_a".into(), &out.y_a, &x_m, true));
    expect.push(("x_m -> x_c".into(), &out.x_c, &x_m, false));
    expect.push(("x_m -> y_c_rec".into(), &out.y_c_rec, &x_m, false));
    expect.push(("x_m -> y_c_self".into(), &out.y_c_self, &x_m, true));
    expect.push(("x_s -> y_a".into(), &out.y_a, &x_s, true));
    expect.push(("x_s -> y_c_rec".into(), &out.y_c_rec, &x_s, true));
    expect.push(("x_s -> x_c".into(), &out.x_c, &x_s, false));
    expect.push(("x_s -> x_a_rec".into(), &out.x_a_rec, &x_s, false));
    expect
        .into_iter()
        .filter(|(_, o, l, want)| reaches(o, l) != *want)
        .map(|(name, _, _, want)| format!("{name}: expected reachable={want}"))
        .collect()
}

pub fn attention_layer(seed: u64, window: usize, position_bias: bool) -> (Params, WindowAttention) {
    let cfg = AttentionConfig { channels: 8, squeezed: 4, head_dim: 3, heads: 2, window, position_bias };
    let p = Params::new(seed, DType::F64, &cpu());
    let msa = WindowAttention::new(&p, &cfg).unwrap();
    jitter(&p, 0.3, seed).unwrap();
    (p, msa)
}

/// `tokens · W[rows]ᵀ + b[rows]` for a slice of the fused projection.
pub fn projection_rows(p: &Params, tokens: &Tensor, rows: std::ops::Range<usize>) -> Tensor {
    let w = p.var("qkv.weight").unwrap().as_tensor().narrow(0, rows.start, rows.len()).unwrap();
    let b = p.var("qkv.bias").unwrap().as_tensor().narrow(0, rows.start, rows.len()).unwrap();
    let (n, t, c) = tokens.dims3().unwrap();
    tokens
        .reshape((n * t, c))
        .unwrap()
        .matmul(&w.t().unwrap())
        .unwrap()
        .broadcast_add(&b)
        .unwrap()
        .reshape((n, t, rows.len()))
        .unwrap()
}

pub fn output_map(p: &Params, x: &Tensor) -> Tensor {
    let w = p.var("proj.weight").unwrap();
    let b = p.var("proj.bias").unwrap();
    let (n, t, c) = x.dims3().unwrap();
    x.reshape((n * t, c))
        .unwrap()
        .matmul(&w.as_tensor().t().unwrap())
        .unwrap()
        .broadcast_add(b.as_tensor())
        .unwrap()
        .reshape((n, t, ()))
        .unwrap()
}

/// Largest `|row sum - 1|` and smallest entry of the attention matrices.
pub fn attention_row_sums() -> (f64, f64) {
    let (_, msa) = attention_layer(1, 4, true);
    let tokens = (random_var(&[6, 16, 4], 2).as_tensor() * 4.0).unwrap();
    let w = msa.attention_weights(&tokens).unwrap();
    let sums = w.sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let err = sums.iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    let min = w.flatten_all().unwrap().min(0).unwrap().to_scalar::<f64>().unwrap();
    (err, min)
}

/// Distance between a one-token window's output and the mapped value.
pub fn single_token_error() -> f64 {
    let (p, msa) = attention_layer(3, 2, false);
    let tokens = random_var(&[5, 1, 4], 4).as_tensor().clone();
    let v = projection_rows(&p, &tokens, 12..18);
    max_abs_diff(&msa.forward(&tokens).unwrap(), &output_map(&p, &v))
}

/// With zero queries and zero bias every token should get the mapped window
/// mean of the values; returns the largest deviation.
pub fn zero_query_error() -> f64 {
    let (p, msa) = attention_layer(5, 4, true);
    p.zero_where(|n| n == "position_bias").unwrap();
    for name in ["qkv.weight", "qkv.bias"] {
        let var = p.var(name).unwrap();
        let t = var.as_tensor();
        let kept = t.narrow(0, 6, 12).unwrap();
        let zeros = t.narrow(0, 0, 6).unwrap().zeros_like().unwrap();
        var.set(&Tensor::cat(&[&zeros, &kept], 0).unwrap()).unwrap();
    }
    let tokens = random_var(&[3, 16, 4], 6).as_tensor().clone();
    let v = projection_rows(&p, &tokens, 12..18);
    let mean = v.mean_keepdim(1).unwrap().broadcast_as(v.shape()).unwrap().contiguous().unwrap();
    max_abs_diff(&msa.forward(&tokens).unwrap(), &output_map(&p, &mean))
}
