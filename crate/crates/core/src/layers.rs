//! Small building blocks shared by the encoders, decoders and discriminators.

use candle_core::{CpuStorage, CustomOp1, Layout, Module, Result, Shape, Tensor, D};

use crate::conv::{conv2d, ConvGeometry};
use crate::params::{Init, Params};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    geom: ConvGeometry,
}

impl Conv2d {
    pub fn new(p: &Params, cin: usize, cout: usize, geom: ConvGeometry) -> Result<Self> {
        let fan_in = cin * geom.kernel * geom.kernel;
        Self::with_init(p, cin, cout, geom, Init::FanIn(fan_in))
    }

    /// "Same" convolution with odd kernel `k` and stride 1.
    pub fn same(p: &Params, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(p, cin, cout, ConvGeometry::new(k, 1, k / 2))
    }

    pub fn with_init(p: &Params, cin: usize, cout: usize, geom: ConvGeometry, init: Init) -> Result<Self> {
        let k = geom.kernel;
        let weight = p.get((cout, cin, k, k), "weight", init)?;
        let bias = p.get(cout, "bias", init)?;
        Ok(Self { weight, bias: Some(bias), geom })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.geom)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

/// `x + conv2(relu(conv1(x)))` with 3×3 convolutions.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(p: &Params, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::same(&p.pp("conv1"), channels, channels, 3)?,
            conv2: Conv2d::same(&p.pp("conv2"), channels, channels, 3)?,
        })
    }
}

impl Module for ResBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(x)?.relu()?;
        x + self.conv2.forward(&h)?
    }
}

/// Affine map over the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(p: &Params, input: usize, output: usize) -> Result<Self> {
        Self::with_init(p, input, output, Init::FanIn(input))
    }

    pub fn with_init(p: &Params, input: usize, output: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: p.get((output, input), "weight", init)?,
            bias: p.get(output, "bias", init)?,
        })
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // fold leading dims so the product is a single GEMM
        let dims = x.dims();
        let (lead, features) = dims.split_at(dims.len() - 1);
        let rows: usize = lead.iter().product();
        let y = x
            .reshape((rows, features[0]))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out_shape = lead.to_vec();
        out_shape.push(self.weight.dim(0)?);
        y.reshape(out_shape)
    }
}

/// Layer normalization over the last dimension.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &Params, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.get(features, "gamma", Init::Ones)?,
            beta: p.get(features, "beta", Init::Zeros)?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.maximum(&(x * slope)?)
}

struct SoftmaxLast;

fn softmax_rows<T: num_traits::Float>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - max).exp();
            sum = sum + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    out
}

/// `dx = s * (g - sum(g * s))` per row.
fn softmax_rows_grad<T: num_traits::Float>(s: &[T], g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); s.len()];
    for ((sr, gr), dr) in s.chunks_exact(n).zip(g.chunks_exact(n)).zip(out.chunks_exact_mut(n)) {
        let dot = sr.iter().zip(gr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for ((d, &a), &b) in dr.iter_mut().zip(sr).zip(gr) {
            *d = a * (b - dot);
        }
    }
    out
}

impl CustomOp1 for SoftmaxLast {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let Some((a, b)) = layout.contiguous_offsets() else {
            candle_core::bail!("softmax: input must be contiguous");
        };
        let n = layout.dims().last().copied().unwrap_or(1);
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows(&v[a..b], n)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows(&v[a..b], n)),
            _ => candle_core::bail!("softmax: only f32/f64"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(res.apply_op2_no_bwd(&grad.contiguous()?, &SoftmaxGrad)?))
    }
}

struct SoftmaxGrad;

impl candle_core::CustomOp2 for SoftmaxGrad {
    fn name(&self) -> &'static str {
        "softmax-last-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (Some((a1, b1)), Some((a2, b2))) = (l1.contiguous_offsets(), l2.contiguous_offsets()) else {
            candle_core::bail!("softmax grad: inputs must be contiguous");
        };
        let n = l1.dims().last().copied().unwrap_or(1);
        let out = match (s1, s2) {
            (CpuStorage::F32(s), CpuStorage::F32(g)) => CpuStorage::F32(softmax_rows_grad(&s[a1..b1], &g[a2..b2], n)),
            (CpuStorage::F64(s), CpuStorage::F64(g)) => CpuStorage::F64(softmax_rows_grad(&s[a1..b1], &g[a2..b2], n)),
            _ => candle_core::bail!("softmax grad: dtype mismatch"),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(SoftmaxLast)
}
