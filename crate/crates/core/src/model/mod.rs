//! Fully convolutional encoder-decoder mapping a BEV RGB grid to a
//! per-pixel unit-norm embedding.
//!
//! The encoder is a stack of stride-2 3x3 convolutions. Each decoder level
//! upsamples (nearest) the coarser features, concatenates the encoder
//! features of the same resolution and applies a 3x3 convolution. A full
//! resolution head sees the upsampled decoder output next to the raw input,
//! a 1x1 projection produces `D` channels and the last layer L2-normalizes
//! every pixel, so dot products between embeddings are cosine similarities.

mod checkpoint;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::BevGrid;
use crate::error::{Error, Result};
pub use checkpoint::{load, load_expecting, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use tensor::{relu_backward, relu_inplace, upsample2, upsample2_backward, Conv};
pub use tensor::{Scalar, Tensor};

const NORM_EPS: f64 = 1e-12;

/// Layer-shape descriptor; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    /// Output channels of each stride-2 encoder block, finest first.
    pub encoder_channels: Vec<usize>,
    pub head_channels: usize,
    pub embedding_dim: usize,
    pub kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: vec![16, 24, 32, 32],
            head_channels: 16,
            embedding_dim: 16,
            kernel: 3,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.encoder_channels.is_empty()
            || self.encoder_channels.contains(&0)
            || self.head_channels == 0
            || self.embedding_dim == 0
            || self.kernel.is_multiple_of(2)
        {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// Smallest input side the encoder accepts without collapsing.
    pub fn min_input(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    pub(crate) fn plan(&self) -> Plan {
        let k = self.kernel;
        let pad = k / 2;
        let mut offset = 0;
        let mut next = |cin: usize, cout: usize, k: usize, stride: usize, pad: usize| {
            let c = Conv {
                cin,
                cout,
                k,
                stride,
                pad,
                offset,
            };
            offset += c.param_len();
            c
        };
        let ch = &self.encoder_channels;
        let mut enc = Vec::with_capacity(ch.len());
        let mut cin = self.in_channels;
        for &c in ch {
            enc.push(next(cin, c, k, 2, pad));
            cin = c;
        }
        let dec: Vec<Conv> = (0..ch.len() - 1).map(|lvl| next(ch[lvl + 1] + ch[lvl], ch[lvl], k, 1, pad)).collect();
        let head = next(ch[0] + self.in_channels, self.head_channels, k, 1, pad);
        let proj = next(self.head_channels, self.embedding_dim, 1, 1, 0);
        Plan {
            enc,
            dec,
            head,
            proj,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.plan().total
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub enc: Vec<Conv>,
    pub dec: Vec<Conv>,
    pub head: Conv,
    pub proj: Conv,
    pub total: usize,
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: Tensor<T>,
    enc_out: Vec<Tensor<T>>,
    dec_in: Vec<Tensor<T>>,
    dec_out: Vec<Tensor<T>>,
    head_in: Tensor<T>,
    head_out: Tensor<T>,
    norms: Vec<T>,
    /// Normalized embeddings, (D, H, W).
    pub output: Tensor<T>,
}

pub fn network_forward<T: Scalar>(arch: &Architecture, params: &[T], input: Tensor<T>) -> Trace<T> {
    let plan = arch.plan();
    assert_eq!(params.len(), plan.total, "parameter vector does not match architecture");
    let n = plan.enc.len();
    let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(n);
    for (i, conv) in plan.enc.iter().enumerate() {
        let src = if i == 0 { &input } else { &enc_out[i - 1] };
        let mut y = conv.forward(src, params);
        relu_inplace(&mut y);
        enc_out.push(y);
    }
    let mut dec_in = vec![None; n.saturating_sub(1)];
    let mut dec_out = vec![None; n.saturating_sub(1)];
    for lvl in (0..n.saturating_sub(1)).rev() {
        let prev: &Tensor<T> = if lvl + 1 < n - 1 { dec_out[lvl + 1].as_ref().unwrap() } else { &enc_out[n - 1] };
        let skip = &enc_out[lvl];
        let cat = Tensor::concat(&upsample2(prev, skip.h, skip.w), skip);
        let mut y = plan.dec[lvl].forward(&cat, params);
        relu_inplace(&mut y);
        dec_in[lvl] = Some(cat);
        dec_out[lvl] = Some(y);
    }
    let dec_in: Vec<Tensor<T>> = dec_in.into_iter().map(Option::unwrap).collect();
    let dec_out: Vec<Tensor<T>> = dec_out.into_iter().map(Option::unwrap).collect();
    let top = dec_out.first().unwrap_or(&enc_out[0]);
    let head_in = Tensor::concat(&upsample2(top, input.h, input.w), &input);
    let mut head_out = plan.head.forward(&head_in, params);
    relu_inplace(&mut head_out);
    let mut output = plan.proj.forward(&head_out, params);
    let norms = normalize_pixels(&mut output);
    Trace {
        input,
        enc_out,
        dec_in,
        dec_out,
        head_in,
        head_out,
        norms,
        output,
    }
}

fn normalize_pixels<T: Scalar>(y: &mut Tensor<T>) -> Vec<T> {
    let p = y.plane();
    let mut norms = vec![T::zero(); p];
    for c in 0..y.c {
        for (i, v) in y.data[c * p..(c + 1) * p].iter().enumerate() {
            norms[i] = norms[i] + *v * *v;
        }
    }
    let eps = T::from_f64(NORM_EPS);
    for v in &mut norms {
        *v = v.sqrt().max(eps);
    }
    for c in 0..y.c {
        for (i, v) in y.data[c * p..(c + 1) * p].iter_mut().enumerate() {
            *v = *v / norms[i];
        }
    }
    norms
}

/// Gradient of the loss w.r.t. every parameter, given the gradient w.r.t.
/// the normalized output `(D, H, W)`.
pub fn network_backward<T: Scalar>(arch: &Architecture, params: &[T], trace: &Trace<T>, dout: &Tensor<T>) -> Vec<T> {
    let plan = arch.plan();
    let n = plan.enc.len();
    let mut grads = vec![T::zero(); plan.total];

    // through the per-pixel normalization: dy = (g - u (u.g)) / |y|
    let out = &trace.output;
    let p = out.plane();
    let mut dots = vec![T::zero(); p];
    for c in 0..out.c {
        let (u, g) = (&out.data[c * p..(c + 1) * p], &dout.data[c * p..(c + 1) * p]);
        for i in 0..p {
            dots[i] = dots[i] + u[i] * g[i];
        }
    }
    let mut dy = Tensor::zeros(out.c, out.h, out.w);
    for c in 0..out.c {
        for i in 0..p {
            let j = c * p + i;
            dy.data[j] = (dout.data[j] - out.data[j] * dots[i]) / trace.norms[i];
        }
    }

    let mut dhead = plan.proj.backward(&trace.head_out, &dy, params, &mut grads, true).unwrap();
    relu_backward(&mut dhead, &trace.head_out);
    let dhead_in = plan.head.backward(&trace.head_in, &dhead, params, &mut grads, true).unwrap();
    let top_c = plan.enc[0].cout;
    let (dup, _) = dhead_in.split(top_c);
    let top = trace.dec_out.first().unwrap_or(&trace.enc_out[0]);
    let mut dcur = upsample2_backward(&dup, top.h, top.w);

    let mut denc: Vec<Tensor<T>> = trace.enc_out.iter().map(|e| Tensor::zeros(e.c, e.h, e.w)).collect();
    for lvl in 0..n.saturating_sub(1) {
        relu_backward(&mut dcur, &trace.dec_out[lvl]);
        let dcat = plan.dec[lvl].backward(&trace.dec_in[lvl], &dcur, params, &mut grads, true).unwrap();
        let prev = if lvl + 1 < n - 1 { &trace.dec_out[lvl + 1] } else { &trace.enc_out[n - 1] };
        let (dup, dskip) = dcat.split(prev.c);
        denc[lvl].add_assign(&dskip);
        dcur = upsample2_backward(&dup, prev.h, prev.w);
    }
    denc[n - 1].add_assign(&dcur);

    for i in (0..n).rev() {
        let mut g = std::mem::replace(&mut denc[i], Tensor::zeros(0, 0, 0));
        relu_backward(&mut g, &trace.enc_out[i]);
        let src = if i == 0 { &trace.input } else { &trace.enc_out[i - 1] };
        if let Some(dx) = plan.enc[i].backward(src, &g, params, &mut grads, i > 0) {
            denc[i - 1].add_assign(&dx);
        }
    }
    grads
}

/// BEV RGB scaled to [-0.5, 0.5] in (3, H, W) layout.
pub fn bev_to_tensor<T: Scalar>(bev: &BevGrid) -> Tensor<T> {
    let (h, w) = (bev.spec.height_cells, bev.spec.width_cells);
    let mut t = Tensor::zeros(3, h, w);
    let p = h * w;
    for (i, rgb) in bev.rgb.iter().enumerate() {
        for c in 0..3 {
            t.data[c * p + i] = T::from_f64(rgb[c] as f64 / 255.0 - 0.5);
        }
    }
    t
}

/// Per-pixel embeddings in pixel-major (H, W, D) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_chw<T: Scalar>(t: &Tensor<T>) -> Self {
        let p = t.plane();
        let mut fm = Self::zeros(t.h, t.w, t.c);
        for c in 0..t.c {
            for i in 0..p {
                fm.data[i * t.c + c] = t.data[c * p + i].to_f32();
            }
        }
        fm
    }

    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let p = self.len();
        let mut t = Tensor::zeros(self.dim, self.height, self.width);
        for i in 0..p {
            for c in 0..self.dim {
                t.data[c * p + i] = T::from_f32(self.data[i * self.dim + c]);
            }
        }
        t
    }
}

/// Network weights plus the descriptor and seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub seed: u64,
    pub params: Vec<f32>,
}

impl ModelParams {
    /// He fan-in initialization; the final projection uses unit gain.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let plan = arch.plan();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; plan.total];
        let mut fill = |conv: &Conv, gain: f64| {
            let std = (gain / conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for w in &mut params[conv.offset..conv.offset + conv.weight_len()] {
                *w = normal.sample(&mut rng) as f32;
            }
        };
        for c in plan.enc.iter().chain(&plan.dec).chain([&plan.head]) {
            fill(c, 2.0);
        }
        fill(&plan.proj, 1.0);
        Ok(Self { arch, seed, params })
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    fn check_input(&self, bev: &BevGrid) -> Result<()> {
        let min = self.arch.min_input();
        if self.arch.in_channels != 3 || bev.spec.height_cells < min || bev.spec.width_cells < min {
            return Err(Error::Config(format!(
                "BEV {}x{} does not fit architecture (3 input channels, sides >= {min})",
                bev.spec.height_cells, bev.spec.width_cells
            )));
        }
        Ok(())
    }

    pub fn forward(&self, bev: &BevGrid) -> Result<FeatureMap> {
        Ok(FeatureMap::from_chw(&self.forward_traced(bev)?.output))
    }

    pub fn forward_traced(&self, bev: &BevGrid) -> Result<Trace<f32>> {
        self.check_input(bev)?;
        Ok(network_forward(&self.arch, &self.params, bev_to_tensor(bev)))
    }

    /// Parameter gradient for an upstream gradient in (H, W, D) layout.
    pub fn backward_traced(&self, trace: &Trace<f32>, upstream: &FeatureMap) -> Vec<f32> {
        network_backward(&self.arch, &self.params, trace, &upstream.to_chw())
    }
}

/// Forward pass.
pub fn forward(params: &ModelParams, bev: &BevGrid) -> Result<FeatureMap> {
    params.forward(bev)
}

/// Gradient of a scalar loss w.r.t. every parameter, given its gradient
/// w.r.t. the feature map of `bev`.
pub fn backward(params: &ModelParams, bev: &BevGrid, upstream: &FeatureMap) -> Result<Vec<f32>> {
    let trace = params.forward_traced(bev)?;
    if (upstream.height, upstream.width, upstream.dim) != (trace.output.h, trace.output.w, trace.output.c) {
        return Err(Error::Config("upstream gradient shape does not match the feature map".into()));
    }
    Ok(params.backward_traced(&trace, upstream))
}
