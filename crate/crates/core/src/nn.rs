//! Building blocks shared by the encoders and the task heads.
//!
//! Everything here is composed from differentiable candle primitives so
//! that gradients flow in both `f32` and `f64`.

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;
use crate::params::ParamStore;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the last dimension. Weight is stored `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = store.normal(&join(prefix, "weight"), &[out_dim, in_dim], std)?;
        let bias = if bias {
            Some(store.zeros(&join(prefix, "bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn with_std(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, std: f64) -> Result<Self> {
        let weight = store.normal(&join(prefix, "weight"), &[out_dim, in_dim], std)?;
        let bias = Some(store.zeros(&join(prefix, "bias"), &[out_dim])?);
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&w)?,
            _ => x.broadcast_matmul(&w)?,
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Layer normalisation over the last dimension with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.ones(&join(prefix, "weight"), &[dim])?,
            bias: store.zeros(&join(prefix, "bias"), &[dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = normalize_last(x, self.eps)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

/// Zero-mean, unit-variance normalisation over the last dimension.
pub fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &join(prefix, "fc1"), dim, hidden, true)?,
            fc2: Linear::new(store, &join(prefix, "fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.fc1.forward(x)?.gelu_erf()?;
        self.fc2.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            qkv: Linear::new(store, &join(prefix, "qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(store, &join(prefix, "proj"), dim, dim, true)?,
            heads,
        })
    }

    /// `x` is `(B, T, D)`; `mask` is an additive `(T, T)` bias (0 or -inf).
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut att = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(m) = mask {
            att = att.broadcast_add(m)?;
        }
        let att = candle_nn::ops::softmax(&att, candle_core::D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.proj.forward(&y)
    }
}

/// Pre-norm Transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub(crate) ln1: LayerNorm,
    pub(crate) attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &join(prefix, "ln1"), dim)?,
            attn: Attention::new(store, &join(prefix, "attn"), dim, heads)?,
            ln2: LayerNorm::new(store, &join(prefix, "ln2"), dim)?,
            mlp: Mlp::new(store, &join(prefix, "mlp"), dim, dim * mlp_ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        self.forward_from_normed(x, &h, mask)
    }

    /// Completes the block given the residual input `x` and `normed = ln1(x)`.
    pub fn forward_from_normed(&self, x: &Tensor, normed: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(normed, mask)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + self.mlp.forward(&h)?)?)
    }
}

/// Additive causal mask: 0 on and below the diagonal, -inf above.
pub fn causal_mask(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let values: Vec<f64> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j > i { f64::NEG_INFINITY } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(values, (t, t), device)?.to_dtype(dtype)?)
}

/// 1×1 convolution over `(B, C, H, W)` maps.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    linear: Linear,
}

impl Conv1x1 {
    pub fn new(store: &mut ParamStore, prefix: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, prefix, in_ch, out_ch, true)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.linear.out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.permute((0, 2, 3, 1))?.contiguous()?;
        Ok(self.linear.forward(&x)?.permute((0, 3, 1, 2))?.contiguous()?)
    }
}

/// 3×3 convolution with unit padding.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    weight: Tensor,
    bias: Tensor,
}

impl Conv3x3 {
    pub fn new(store: &mut ParamStore, prefix: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        let std = 1.0 / ((in_ch * 9) as f64).sqrt();
        Ok(Self {
            weight: store.normal(&join(prefix, "weight"), &[out_ch, in_ch, 3, 3], std)?,
            bias: store.zeros(&join(prefix, "bias"), &[out_ch])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.contiguous()?.conv2d(&self.weight, 1, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Row-stochastic `(out, in)` matrix for 1-D bilinear resampling with
/// half-pixel centres and edge clamping.
pub fn bilinear_matrix(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; output * input];
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[o * input + i0] += 1.0 - frac;
        m[o * input + i1] += frac;
    }
    m
}

/// Row-stochastic `(out, in)` matrix for 1-D adaptive average pooling.
pub fn adaptive_pool_matrix(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; output * input];
    for o in 0..output {
        let start = (o * input) / output;
        let end = ((o + 1) * input).div_ceil(output);
        let w = 1.0 / (end - start) as f64;
        for i in start..end {
            m[o * input + i] = w;
        }
    }
    m
}

/// Applies separable row/column operators to a `(B, C, H, W)` tensor.
fn separable(x: &Tensor, rows: Vec<f64>, out_h: usize, cols: Vec<f64>, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let dev = x.device();
    let dt = x.dtype();
    let rh = Tensor::from_vec(rows, (out_h, h), dev)?.to_dtype(dt)?;
    let rw = Tensor::from_vec(cols, (out_w, w), dev)?.to_dtype(dt)?;
    let y = x.contiguous()?.broadcast_matmul(&rw.t()?)?;
    let y = rh.broadcast_matmul(&y)?;
    Ok(y)
}

pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    separable(x, bilinear_matrix(h, out_h), out_h, bilinear_matrix(w, out_w), out_w)
}

pub fn adaptive_avg_pool(x: &Tensor, out: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    separable(x, adaptive_pool_matrix(h, out), out, adaptive_pool_matrix(w, out), out)
}

/// `(B, 4C, H, W)` → `(B, C, 2H, 2W)`; pairs with a 1×1 conv to form a
/// stride-2 transposed convolution with kernel 2.
pub fn depth_to_space2(x: &Tensor) -> Result<Tensor> {
    let (b, c4, h, w) = x.dims4()?;
    let c = c4 / 4;
    let y = x
        .reshape((b, c, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, c, 2 * h, 2 * w))?;
    Ok(y)
}

/// Transposed convolution with kernel 2 and stride 2.
#[derive(Debug, Clone)]
pub struct Upsample2 {
    conv: Conv1x1,
}

impl Upsample2 {
    pub fn new(store: &mut ParamStore, prefix: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1x1::new(store, prefix, in_ch, out_ch * 4)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depth_to_space2(&self.conv.forward(x)?)
    }
}

/// 2×2 max-pool with stride 2; a trailing odd row or column is dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let x = x.narrow(2, 0, oh * 2)?.narrow(3, 0, ow * 2)?.contiguous()?;
    Ok(x.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}
