//! Lightweight windowed transformer.
//!
//! Channels are squeezed from `C` to `C_in`, refined by one residual block,
//! split into non-overlapping `P×P` windows and mixed by multi-head
//! self-attention inside each window. After the windows are stitched back,
//! a 3×3 convolution followed by a per-token layer norm (POP) cleans up the
//! result, a zero-initialized 1×1 convolution restores `C` channels and the
//! block input is added back. There is no shifted-window stage.

use candle_core::{Module, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::layers::{softmax_last, Conv2d, LayerNorm, Linear, ResBlock};
use crate::params::{Init, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// `C`, channels entering and leaving the block.
    pub channels: usize,
    /// `C_in`, channels seen by the attention.
    pub squeezed: usize,
    /// `C_a`, per-head query/key/value width.
    pub head_dim: usize,
    pub heads: usize,
    /// Window side `P`.
    pub window: usize,
    /// Learned relative position bias on the attention logits.
    pub position_bias: bool,
}

impl AttentionConfig {
    /// `C_in = C/2`, two heads, `C_a = C_in/2`, 8×8 windows.
    pub fn for_channels(channels: usize) -> Self {
        let squeezed = (channels / 2).max(1);
        let heads = 2;
        Self {
            channels,
            squeezed,
            head_dim: (squeezed / heads).max(1),
            heads,
            window: 8,
            position_bias: true,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.squeezed == 0 || self.squeezed >= self.channels {
            return Err(format!(
                "squeezed width {} must be in 1..{}",
                self.squeezed, self.channels
            ));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err("heads and head_dim must be positive".into());
        }
        if self.window < 2 {
            return Err(format!("window {} must be >= 2", self.window));
        }
        Ok(())
    }
}

/// Where a window batch came from, enough to undo the partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub window: usize,
}

impl WindowLayout {
    pub fn grid(&self) -> (usize, usize) {
        (self.padded_height / self.window, self.padded_width / self.window)
    }

    pub fn windows_per_image(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }
}

/// `(B·windows, P², C)` tokens. Windows are row-major over the window grid
/// (image-major across the batch), tokens row-major inside each window.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub tokens: Tensor,
    pub layout: WindowLayout,
}

fn reflect_indices(n: usize, pad: usize) -> Vec<u32> {
    (0..n + pad)
        .map(|i| if i < n { i } else { 2 * (n - 1) - i } as u32)
        .collect()
}

/// Reflect-pads the bottom and right edges of a `(B, C, H, W)` tensor.
pub fn reflect_pad(x: &Tensor, pad_h: usize, pad_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if pad_h >= h.max(2) || pad_w >= w.max(2) {
        candle_core::bail!("reflect padding ({pad_h}, {pad_w}) too large for {h}x{w}");
    }
    let dev = x.device();
    let mut out = x.clone();
    if pad_h > 0 {
        let idx = Tensor::new(reflect_indices(h, pad_h), dev)?;
        out = out.index_select(&idx, 2)?;
    }
    if pad_w > 0 {
        let idx = Tensor::new(reflect_indices(w, pad_w), dev)?;
        out = out.index_select(&idx, 3)?;
    }
    Ok(out)
}

pub fn window_partition(x: &Tensor, window: usize) -> Result<WindowBatch> {
    let (b, c, h, w) = x.dims4()?;
    let pad_h = (window - h % window) % window;
    let pad_w = (window - w % window) % window;
    let x = reflect_pad(x, pad_h, pad_w)?;
    let (hp, wp) = (h + pad_h, w + pad_w);
    let (gh, gw) = (hp / window, wp / window);
    let tokens = x
        .reshape((b, c, gh, window, gw, window))?
        .permute((0, 2, 4, 3, 5, 1))?
        .contiguous()?
        .reshape((b * gh * gw, window * window, c))?;
    Ok(WindowBatch {
        tokens,
        layout: WindowLayout {
            batch: b,
            channels: c,
            height: h,
            width: w,
            padded_height: hp,
            padded_width: wp,
            window,
        },
    })
}

/// Inverse of [`window_partition`], cropping any padding. The token width
/// may differ from the partitioned channel count.
pub fn window_reverse(windows: &WindowBatch) -> Result<Tensor> {
    let l = windows.layout;
    let (gh, gw) = l.grid();
    let c = windows.tokens.dim(2)?;
    let x = windows
        .tokens
        .reshape((l.batch, gh, gw, l.window, l.window, c))?
        .permute((0, 5, 1, 3, 2, 4))?
        .contiguous()?
        .reshape((l.batch, c, l.padded_height, l.padded_width))?;
    if l.padded_height == l.height && l.padded_width == l.width {
        Ok(x)
    } else {
        x.narrow(2, 0, l.height)?.narrow(3, 0, l.width)?.contiguous()
    }
}

/// Multi-head self-attention applied independently inside each window.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    bias_table: Option<Tensor>,
    rel_index: Tensor,
    heads: usize,
    head_dim: usize,
    window: usize,
}

/// Index into the `(2P-1)²` relative offset table for every token pair.
fn relative_index(window: usize) -> Vec<u32> {
    let span = 2 * window - 1;
    let n = window * window;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / window, i % window);
        for j in 0..n {
            let (yj, xj) = (j / window, j % window);
            let dy = yi + window - 1 - yj;
            let dx = xi + window - 1 - xj;
            out.push((dy * span + dx) as u32);
        }
    }
    out
}

impl WindowAttention {
    pub fn new(p: &Params, cfg: &AttentionConfig) -> Result<Self> {
        let inner = cfg.heads * cfg.head_dim;
        let span = 2 * cfg.window - 1;
        let bias_table = if cfg.position_bias {
            Some(p.get((span * span, cfg.heads), "position_bias", Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            qkv: Linear::new(&p.pp("qkv"), cfg.squeezed, 3 * inner)?,
            proj: Linear::new(&p.pp("proj"), inner, cfg.squeezed)?,
            bias_table,
            rel_index: Tensor::new(relative_index(cfg.window), &p.device())?,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            window: cfg.window,
        })
    }

    /// `(1, heads, P², P²)` bias, or `None` when disabled.
    pub fn position_bias(&self) -> Result<Option<Tensor>> {
        let Some(table) = &self.bias_table else {
            return Ok(None);
        };
        let n = self.window * self.window;
        let bias = table
            .index_select(&self.rel_index, 0)?
            .reshape((n, n, self.heads))?
            .permute((2, 0, 1))?
            .unsqueeze(0)?;
        Ok(Some(bias))
    }

    fn qkv_heads(&self, tokens: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (bw, t, _) = tokens.dims3()?;
        let qkv = self
            .qkv
            .forward(tokens)?
            .reshape((bw, t, 3, self.heads, self.head_dim))?
            .permute((2, 0, 3, 1, 4))?;
        Ok((
            qkv.get(0)?.contiguous()?,
            qkv.get(1)?.contiguous()?,
            qkv.get(2)?.contiguous()?,
        ))
    }

    /// Row-stochastic attention matrices, `(windows, heads, T, T)`.
    pub fn attention_weights(&self, tokens: &Tensor) -> Result<Tensor> {
        let (q, k, _) = self.qkv_heads(tokens)?;
        self.weights_from(&q, &k, tokens.dim(1)?)
    }

    fn weights_from(&self, q: &Tensor, k: &Tensor, t: usize) -> Result<Tensor> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut logits = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(bias) = self.position_bias()? {
            if t != self.window * self.window {
                candle_core::bail!("position bias needs {} tokens per window, got {t}", self.window * self.window);
            }
            logits = logits.broadcast_add(&bias)?;
        }
        softmax_last(&logits)
    }

    pub fn forward_windows(&self, w: &WindowBatch) -> Result<WindowBatch> {
        Ok(WindowBatch {
            tokens: self.forward(&w.tokens)?,
            layout: w.layout,
        })
    }
}

impl Module for WindowAttention {
    fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let (bw, t, _) = tokens.dims3()?;
        let (q, k, v) = self.qkv_heads(tokens)?;
        let attn = self.weights_from(&q, &k, t)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((bw, t, self.heads * self.head_dim))?;
        self.proj.forward(&out)
    }
}

#[derive(Clone, Debug)]
pub struct LightTransformer {
    pub squeeze: Conv2d,
    pub residual: ResBlock,
    pub attention: WindowAttention,
    pub pop_conv: Conv2d,
    pub pop_norm: LayerNorm,
    pub unsqueeze: Conv2d,
    window: usize,
}

impl LightTransformer {
    pub fn new(p: &Params, cfg: &AttentionConfig) -> Result<Self> {
        if let Err(e) = cfg.validate() {
            candle_core::bail!("attention config: {e}");
        }
        let unsqueeze = Conv2d::with_init(
            &p.pp("unsqueeze"),
            cfg.squeezed,
            cfg.channels,
            crate::conv::ConvGeometry::new(1, 1, 0),
            Init::Zeros,
        )?;
        Ok(Self {
            squeeze: Conv2d::same(&p.pp("squeeze"), cfg.channels, cfg.squeezed, 1)?,
            residual: ResBlock::new(&p.pp("residual"), cfg.squeezed)?,
            attention: WindowAttention::new(&p.pp("attention"), cfg)?,
            pop_conv: Conv2d::same(&p.pp("pop_conv"), cfg.squeezed, cfg.squeezed, 3)?,
            pop_norm: LayerNorm::new(&p.pp("pop_norm"), cfg.squeezed)?,
            unsqueeze,
            window: cfg.window,
        })
    }
}

impl Module for LightTransformer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.residual.forward(&self.squeeze.forward(x)?)?;
        let windows = window_partition(&s, self.window)?;
        let s = window_reverse(&self.attention.forward_windows(&windows)?)?;
        let s = self.pop_conv.forward(&s)?;
        let (b, c, h, w) = s.dims4()?;
        let s = self
            .pop_norm
            .forward(&s.flatten_from(2)?.transpose(1, 2)?)?
            .transpose(1, 2)?
            .reshape((b, c, h, w))?;
        x + self.unsqueeze.forward(&s)?
    }
}
