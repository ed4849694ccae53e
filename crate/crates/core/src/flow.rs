//! Reversible projection flow network for style transfer.
//!
//! The network is a stack of blocks, each one squeeze (space to channel,
//! factor 2) followed by flow steps of Actnorm -> invertible channel mix
//! -> additive coupling. Every step is exactly invertible, so an image
//! projected to feature space and reverted comes back bit-for-bit up to
//! float rounding: repeated style transfer cannot leak content.
//!
//! Style transfer itself happens in feature space by channel-statistics
//! matching (`transfer`), which is unbiased: transfer(f, f) = f.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::math;
use crate::nn::{relu, relu_backward, Conv2d};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Variance floor in `transfer`; keeps constant channels finite
/// (effective std epsilon 1e-6).
const TRANSFER_VAR_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// squeeze / unsqueeze

/// Space-to-channel, factor 2: (C, H, W) -> (4C, H/2, W/2).
pub fn squeeze(x: &Tensor) -> Tensor {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c * 4, h, w);
    for c in 0..x.c {
        for dy in 0..2 {
            for dx in 0..2 {
                let oc = c * 4 + dy * 2 + dx;
                for y in 0..h {
                    for xx in 0..w {
                        *out.at_mut(oc, y, xx) = x.at(c, 2 * y + dy, 2 * xx + dx);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`squeeze`].
pub fn unsqueeze(x: &Tensor) -> Tensor {
    debug_assert!(x.c % 4 == 0);
    let c_out = x.c / 4;
    let mut out = Tensor::zeros(c_out, x.h * 2, x.w * 2);
    for c in 0..c_out {
        for dy in 0..2 {
            for dx in 0..2 {
                let ic = c * 4 + dy * 2 + dx;
                for y in 0..x.h {
                    for xx in 0..x.w {
                        *out.at_mut(c, 2 * y + dy, 2 * xx + dx) = x.at(ic, y, xx);
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Actnorm

/// Per-channel affine normalization with data-dependent initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actnorm {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub initialized: bool,
}

impl Actnorm {
    pub fn new(channels: usize) -> Self {
        Actnorm { scale: vec![1.0; channels], bias: vec![0.0; channels], initialized: false }
    }

    /// Set scale/bias so the given batch has per-channel mean 0, var 1
    /// after the layer.
    pub fn initialize_from(&mut self, batch: &[&Tensor]) {
        let c = self.scale.len();
        for ch in 0..c {
            let mut sum = 0.0;
            let mut n = 0usize;
            for t in batch {
                for &v in t.channel(ch) {
                    sum += v;
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            let mut var = 0.0;
            for t in batch {
                for &v in t.channel(ch) {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= n as f64;
            let std = math::sqrt(var + 1e-12);
            self.scale[ch] = 1.0 / std;
            self.bias[ch] = -mean / std;
        }
        self.initialized = true;
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for ch in 0..x.c {
            let (s, b) = (self.scale[ch], self.bias[ch]);
            for v in y.channel_mut(ch) {
                *v = s * *v + b;
            }
        }
        y
    }

    pub fn inverse(&self, y: &Tensor) -> Tensor {
        let mut x = y.clone();
        for ch in 0..y.c {
            let (s, b) = (self.scale[ch], self.bias[ch]);
            for v in x.channel_mut(ch) {
                *v = (*v - b) / s;
            }
        }
        x
    }

    /// Backward through `forward`, given the layer input.
    pub fn forward_backward(&self, x: &Tensor, grad_y: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let mut gx = grad_y.clone();
        let mut gs = vec![0.0; x.c];
        let mut gb = vec![0.0; x.c];
        for ch in 0..x.c {
            let s = self.scale[ch];
            let xs = x.channel(ch);
            let gys = grad_y.channel(ch);
            let mut acc_s = 0.0;
            let mut acc_b = 0.0;
            for (g, xv) in gys.iter().zip(xs) {
                acc_s += g * xv;
                acc_b += g;
            }
            gs[ch] = acc_s;
            gb[ch] = acc_b;
            for v in gx.channel_mut(ch) {
                *v *= s;
            }
        }
        (gx, gs, gb)
    }

    /// Backward through `inverse`, given the inverse-path input `y`.
    pub fn inverse_backward(&self, y: &Tensor, grad_x: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let mut gy = grad_x.clone();
        let mut gs = vec![0.0; y.c];
        let mut gb = vec![0.0; y.c];
        for ch in 0..y.c {
            let (s, b) = (self.scale[ch], self.bias[ch]);
            let ys = y.channel(ch);
            let gxs = grad_x.channel(ch);
            let mut acc_s = 0.0;
            let mut acc_b = 0.0;
            for (g, yv) in gxs.iter().zip(ys) {
                let x = (yv - b) / s;
                acc_s += -g * x / s;
                acc_b += -g / s;
            }
            gs[ch] = acc_s;
            gb[ch] = acc_b;
            for v in gy.channel_mut(ch) {
                *v /= s;
            }
        }
        (gy, gs, gb)
    }
}

// ---------------------------------------------------------------------------
// invertible channel mixing (1x1 convolution)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMix {
    /// C x C row-major weight; must stay invertible.
    pub weight: Vec<f64>,
    pub channels: usize,
}

impl ChannelMix {
    /// Initialize to a random orthogonal matrix (|det| = 1).
    pub fn orthogonal(channels: usize, rng: &mut Rng) -> Self {
        ChannelMix { weight: linalg::random_orthogonal(channels, rng), channels }
    }

    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for i in 0..channels {
            weight[i * channels + i] = 1.0;
        }
        ChannelMix { weight, channels }
    }

    pub fn det(&self) -> f64 {
        linalg::det(self.channels, &self.weight)
    }

    fn check_det(&self) -> Result<()> {
        let d = self.det();
        if math::abs(d) <= 1e-8 {
            return Err(CoreError::Numerical(format!("channel mix determinant {d} too small")));
        }
        Ok(())
    }

    fn apply(matrix: &[f64], x: &Tensor) -> Tensor {
        let c = x.c;
        let plane = x.h * x.w;
        let mut out = Tensor::zeros(c, x.h, x.w);
        for i in 0..c {
            for j in 0..c {
                let w = matrix[i * c + j];
                if w == 0.0 {
                    continue;
                }
                let src = &x.data[j * plane..(j + 1) * plane];
                let dst = &mut out.data[i * plane..(i + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        Self::apply(&self.weight, x)
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check_det()?;
        let inv = linalg::inverse(self.channels, &self.weight)?;
        Ok(Self::apply(&inv, y))
    }

    /// Sum over pixels of the outer product grad ⊗ input.
    fn outer_accumulate(grad: &Tensor, input: &Tensor) -> Vec<f64> {
        let c = grad.c;
        let plane = grad.h * grad.w;
        let mut gm = vec![0.0; c * c];
        for i in 0..c {
            let gi = &grad.data[i * plane..(i + 1) * plane];
            for j in 0..c {
                let xj = &input.data[j * plane..(j + 1) * plane];
                gm[i * c + j] = gi.iter().zip(xj).map(|(a, b)| a * b).sum();
            }
        }
        gm
    }

    pub fn forward_backward(&self, x: &Tensor, grad_y: &Tensor) -> (Tensor, Vec<f64>) {
        let wt = linalg::transpose(self.channels, &self.weight);
        let gx = Self::apply(&wt, grad_y);
        let gw = Self::outer_accumulate(grad_y, x);
        (gx, gw)
    }

    /// Backward through `inverse`: x = W^-1 y, so
    /// dL/dW = -W^-T (dL/dW^-1) W^-T.
    pub fn inverse_backward(&self, y: &Tensor, grad_x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let n = self.channels;
        let v = linalg::inverse(n, &self.weight)?;
        let vt = linalg::transpose(n, &v);
        let gy = Self::apply(&vt, grad_x);
        let gv = Self::outer_accumulate(grad_x, y);
        let mut gw = linalg::matmul(n, &vt, &linalg::matmul(n, &gv, &vt));
        for g in gw.iter_mut() {
            *g = -*g;
        }
        Ok((gy, gw))
    }
}

// ---------------------------------------------------------------------------
// additive coupling

/// Small convolutional shift network: conv3x3 -> relu -> conv3x3.
/// The second convolution is zero-initialized so a fresh coupling layer
/// is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ShiftNet {
    pub fn new(half_channels: usize, hidden: usize, rng: &mut Rng) -> Self {
        ShiftNet {
            conv1: Conv2d::seeded(half_channels, hidden, 3, 1, 1, rng),
            conv2: Conv2d::zeros(hidden, half_channels, 3, 1, 1),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.conv2.forward(&relu(&self.conv1.forward(x)))
    }

    /// Returns (grad wrt input, grads in flat param order).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Vec<f64>) {
        let a = self.conv1.forward(x);
        let r = relu(&a);
        let (gr, gw2, gb2) = self.conv2.backward(&r, grad_out);
        let ga = relu_backward(&a, &gr);
        let (gx, gw1, gb1) = self.conv1.backward(x, &ga);
        let mut grads = gw1;
        grads.extend(gb1);
        grads.extend(gw2);
        grads.extend(gb2);
        (gx, grads)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }
}

/// Volume-preserving additive coupling: the second half of the channels is
/// shifted by a function of the first half. Jacobian log-determinant is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveCoupling {
    pub net: ShiftNet,
    pub channels: usize,
}

impl AdditiveCoupling {
    pub fn new(channels: usize, hidden: usize, rng: &mut Rng) -> Self {
        debug_assert!(channels % 2 == 0);
        AdditiveCoupling { net: ShiftNet::new(channels / 2, hidden, rng), channels }
    }

    fn split(x: &Tensor) -> (Tensor, Tensor) {
        let half = x.c / 2;
        let plane = x.h * x.w;
        let x1 = Tensor { c: half, h: x.h, w: x.w, data: x.data[..half * plane].to_vec() };
        let x2 = Tensor { c: half, h: x.h, w: x.w, data: x.data[half * plane..].to_vec() };
        (x1, x2)
    }

    fn join(x1: &Tensor, x2: &Tensor) -> Tensor {
        let mut data = x1.data.clone();
        data.extend_from_slice(&x2.data);
        Tensor { c: x1.c * 2, h: x1.h, w: x1.w, data }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (x1, x2) = Self::split(x);
        let shift = self.net.forward(&x1);
        let mut y2 = x2;
        for (v, s) in y2.data.iter_mut().zip(&shift.data) {
            *v += s;
        }
        Self::join(&x1, &y2)
    }

    pub fn inverse(&self, y: &Tensor) -> Tensor {
        let (y1, y2) = Self::split(y);
        let shift = self.net.forward(&y1);
        let mut x2 = y2;
        for (v, s) in x2.data.iter_mut().zip(&shift.data) {
            *v -= s;
        }
        Self::join(&y1, &x2)
    }

    pub fn forward_backward(&self, x: &Tensor, grad_y: &Tensor) -> (Tensor, Vec<f64>) {
        let (x1, _) = Self::split(x);
        let (gy1, gy2) = Self::split(grad_y);
        let (g_through, pgrads) = self.net.backward(&x1, &gy2);
        let mut gx1 = gy1;
        for (v, t) in gx1.data.iter_mut().zip(&g_through.data) {
            *v += t;
        }
        (Self::join(&gx1, &gy2), pgrads)
    }

    pub fn inverse_backward(&self, y: &Tensor, grad_x: &Tensor) -> (Tensor, Vec<f64>) {
        let (y1, _) = Self::split(y);
        let (gx1, gx2) = Self::split(grad_x);
        let (g_through, mut pgrads) = self.net.backward(&y1, &gx2);
        for g in pgrads.iter_mut() {
            *g = -*g;
        }
        let mut gy1 = gx1;
        for (v, t) in gy1.data.iter_mut().zip(&g_through.data) {
            *v -= t;
        }
        (Self::join(&gy1, &gx2), pgrads)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

// ---------------------------------------------------------------------------
// flow network

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub in_channels: usize,
    pub num_blocks: usize,
    pub steps_per_block: usize,
    /// Hidden channels of each coupling shift network.
    pub coupling_hidden: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { in_channels: 3, num_blocks: 2, steps_per_block: 8, coupling_hidden: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    pub actnorm: Actnorm,
    pub mix: ChannelMix,
    pub coupling: AdditiveCoupling,
}

impl FlowStep {
    fn param_count(&self) -> usize {
        self.actnorm.scale.len() * 2 + self.mix.weight.len() + self.coupling.param_count()
    }
}

/// The full projection network: `num_blocks` blocks of one squeeze plus
/// `steps_per_block` flow steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub config: FlowConfig,
    pub blocks: Vec<Vec<FlowStep>>,
}

/// Cached intermediate tensors of one projection, for backprop.
pub struct ProjectCache {
    /// Per step in application order: inputs to actnorm, mix, coupling.
    step_inputs: Vec<(Tensor, Tensor, Tensor)>,
    input_dims: (usize, usize, usize),
}

/// Cached intermediate tensors of one reversion, for backprop.
pub struct RevertCache {
    /// Per step in inverse application order: inputs to coupling.inverse,
    /// mix.inverse, actnorm.inverse.
    step_inputs: Vec<(Tensor, Tensor, Tensor)>,
}

impl FlowNetwork {
    /// Near-identity initialization: orthogonal channel mixing, unit
    /// actnorm, zero coupling shifts.
    pub fn new(config: FlowConfig) -> Self {
        let mut rng = Rng::from_seed(config.seed);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut channels = config.in_channels;
        for _ in 0..config.num_blocks {
            channels *= 4;
            let steps = (0..config.steps_per_block)
                .map(|_| FlowStep {
                    actnorm: Actnorm::new(channels),
                    mix: ChannelMix::orthogonal(channels, &mut rng),
                    coupling: AdditiveCoupling::new(channels, config.coupling_hidden, &mut rng),
                })
                .collect();
            blocks.push(steps);
        }
        FlowNetwork { config, blocks }
    }

    /// All layers set to exact identity (squeeze-only network).
    pub fn identity(config: FlowConfig) -> Self {
        let mut net = Self::new(config);
        let mut channels = config.in_channels;
        for block in net.blocks.iter_mut() {
            channels *= 4;
            for step in block.iter_mut() {
                step.mix = ChannelMix::identity(channels);
                step.coupling.net.conv1 = Conv2d::zeros(channels / 2, config.coupling_hidden, 3, 1, 1);
                step.coupling.net.conv2 = Conv2d::zeros(config.coupling_hidden, channels / 2, 3, 1, 1);
                step.actnorm.initialized = true;
            }
        }
        net
    }

    /// Randomize every parameter; channel-mix matrices are redrawn until
    /// |det| > 1e-3. Intended for invertibility stress tests.
    pub fn randomize(&mut self, rng: &mut Rng) {
        for block in self.blocks.iter_mut() {
            for step in block.iter_mut() {
                for s in step.actnorm.scale.iter_mut() {
                    let mag = rng.range(0.5, 2.0);
                    *s = if rng.uniform() < 0.5 { -mag } else { mag };
                }
                for b in step.actnorm.bias.iter_mut() {
                    *b = rng.range(-1.0, 1.0);
                }
                step.actnorm.initialized = true;
                loop {
                    for w in step.mix.weight.iter_mut() {
                        *w = rng.normal() * 0.5;
                    }
                    if math::abs(step.mix.det()) > 1e-3 {
                        break;
                    }
                }
                for w in step.coupling.net.conv1.weight.iter_mut() {
                    *w = rng.normal() * 0.2;
                }
                for w in step.coupling.net.conv2.weight.iter_mut() {
                    *w = rng.normal() * 0.2;
                }
                for b in step.coupling.net.conv2.bias.iter_mut() {
                    *b = rng.range(-0.1, 0.1);
                }
            }
        }
    }

    pub fn spatial_divisor(&self) -> usize {
        1 << self.config.num_blocks
    }

    pub fn latent_channels(&self) -> usize {
        self.config.in_channels * (1 << (2 * self.config.num_blocks))
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let d = self.spatial_divisor();
        if image.c != self.config.in_channels {
            return Err(CoreError::ShapeMismatch(format!(
                "expected {} channels, got {}",
                self.config.in_channels, image.c
            )));
        }
        if image.h % d != 0 || image.w % d != 0 {
            return Err(CoreError::ShapeMismatch(format!(
                "image dims {}x{} not divisible by {d}",
                image.h, image.w
            )));
        }
        Ok(())
    }

    /// Data-dependent Actnorm initialization from a batch of images,
    /// layer by layer along the projection path.
    pub fn initialize_actnorm(&mut self, batch: &[&Tensor]) -> Result<()> {
        for img in batch {
            self.check_input(img)?;
        }
        let mut current: Vec<Tensor> = batch.iter().map(|t| (*t).clone()).collect();
        for block in self.blocks.iter_mut() {
            for t in current.iter_mut() {
                *t = squeeze(t);
            }
            for step in block.iter_mut() {
                if !step.actnorm.initialized {
                    let refs: Vec<&Tensor> = current.iter().collect();
                    step.actnorm.initialize_from(&refs);
                }
                for t in current.iter_mut() {
                    let a = step.actnorm.forward(t);
                    let m = step.mix.forward(&a);
                    *t = step.coupling.forward(&m);
                }
            }
        }
        Ok(())
    }

    /// Project an image to latent features: (C, H, W) ->
    /// (C * 4^blocks, H / 2^blocks, W / 2^blocks).
    pub fn project(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.project_cached(image)?.0)
    }

    pub fn project_cached(&self, image: &Tensor) -> Result<(Tensor, ProjectCache)> {
        self.check_input(image)?;
        let mut cache = ProjectCache {
            step_inputs: Vec::new(),
            input_dims: (image.c, image.h, image.w),
        };
        let mut t = image.clone();
        for block in &self.blocks {
            t = squeeze(&t);
            for step in block {
                let x_act = t;
                let x_mix = step.actnorm.forward(&x_act);
                let x_coup = step.mix.forward(&x_mix);
                t = step.coupling.forward(&x_coup);
                cache.step_inputs.push((x_act, x_mix, x_coup));
            }
        }
        Ok((t, cache))
    }

    /// Exact inverse of [`project`].
    pub fn revert(&self, latent: &Tensor) -> Result<Tensor> {
        Ok(self.revert_cached(latent)?.0)
    }

    pub fn revert_cached(&self, latent: &Tensor) -> Result<(Tensor, RevertCache)> {
        if latent.c != self.latent_channels() {
            return Err(CoreError::ShapeMismatch(format!(
                "latent has {} channels, expected {}",
                latent.c,
                self.latent_channels()
            )));
        }
        let mut cache = RevertCache { step_inputs: Vec::new() };
        let mut t = latent.clone();
        for block in self.blocks.iter().rev() {
            for step in block.iter().rev() {
                let y_coup = t;
                let y_mix = step.coupling.inverse(&y_coup);
                let y_act = step.mix.inverse(&y_mix)?;
                t = step.actnorm.inverse(&y_act);
                cache.step_inputs.push((y_coup, y_mix, y_act));
            }
            t = unsqueeze(&t);
        }
        Ok((t, cache))
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().flatten().map(FlowStep::param_count).sum()
    }

    /// Flatten parameters in canonical order (block-major; per step:
    /// actnorm scale, actnorm bias, mix weight, coupling convs).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for step in self.blocks.iter().flatten() {
            out.extend(&step.actnorm.scale);
            out.extend(&step.actnorm.bias);
            out.extend(&step.mix.weight);
            out.extend(&step.coupling.net.conv1.weight);
            out.extend(&step.coupling.net.conv1.bias);
            out.extend(&step.coupling.net.conv2.weight);
            out.extend(&step.coupling.net.conv2.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &params[pos..pos + n];
            pos += n;
            s
        };
        for step in self.blocks.iter_mut().flatten() {
            let c = step.actnorm.scale.len();
            step.actnorm.scale.copy_from_slice(take(c));
            step.actnorm.bias.copy_from_slice(take(c));
            let n = step.mix.weight.len();
            step.mix.weight.copy_from_slice(take(n));
            let net = &mut step.coupling.net;
            let n = net.conv1.weight.len();
            net.conv1.weight.copy_from_slice(take(n));
            let n = net.conv1.bias.len();
            net.conv1.bias.copy_from_slice(take(n));
            let n = net.conv2.weight.len();
            net.conv2.weight.copy_from_slice(take(n));
            let n = net.conv2.bias.len();
            net.conv2.bias.copy_from_slice(take(n));
        }
        debug_assert_eq!(pos, params.len());
    }

    fn accumulate_step_grads(
        grads: &mut [f64],
        offset: usize,
        step: &FlowStep,
        gs: &[f64],
        gb: &[f64],
        gw_mix: &[f64],
        gp_coup: &[f64],
    ) -> usize {
        let mut pos = offset;
        for (i, g) in gs.iter().enumerate() {
            grads[pos + i] += g;
        }
        pos += gs.len();
        for (i, g) in gb.iter().enumerate() {
            grads[pos + i] += g;
        }
        pos += gb.len();
        for (i, g) in gw_mix.iter().enumerate() {
            grads[pos + i] += g;
        }
        pos += gw_mix.len();
        for (i, g) in gp_coup.iter().enumerate() {
            grads[pos + i] += g;
        }
        pos += gp_coup.len();
        debug_assert_eq!(pos - offset, step.param_count());
        pos
    }

    fn step_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::new();
        let mut pos = 0;
        for step in self.blocks.iter().flatten() {
            offsets.push(pos);
            pos += step.param_count();
        }
        offsets
    }

    /// Backprop through a cached projection. Adds parameter gradients
    /// into `param_grads` (canonical order) and returns the gradient
    /// w.r.t. the input image.
    pub fn backward_project(
        &self,
        cache: &ProjectCache,
        grad_latent: &Tensor,
        param_grads: &mut [f64],
    ) -> Tensor {
        let offsets = self.step_offsets();
        let mut g = grad_latent.clone();
        let mut step_idx = self.blocks.iter().flatten().count();
        for block in self.blocks.iter().rev() {
            for step in block.iter().rev() {
                step_idx -= 1;
                let (x_act, x_mix, x_coup) = &cache.step_inputs[step_idx];
                let (g_coup, gp_coup) = step.coupling.forward_backward(x_coup, &g);
                let (g_mix, gw_mix) = step.mix.forward_backward(x_mix, &g_coup);
                let (g_act, gs, gb) = step.actnorm.forward_backward(x_act, &g_mix);
                Self::accumulate_step_grads(
                    param_grads,
                    offsets[step_idx],
                    step,
                    &gs,
                    &gb,
                    &gw_mix,
                    &gp_coup,
                );
                g = g_act;
            }
            g = unsqueeze(&g);
        }
        debug_assert_eq!((g.c, g.h, g.w), cache.input_dims);
        g
    }

    /// Backprop through a cached reversion: given the gradient w.r.t. the
    /// reverted image, returns the gradient w.r.t. the latent.
    pub fn backward_revert(
        &self,
        cache: &RevertCache,
        grad_image: &Tensor,
        param_grads: &mut [f64],
    ) -> Result<Tensor> {
        let offsets = self.step_offsets();
        let total_steps = self.blocks.iter().flatten().count();
        let mut g = grad_image.clone();
        // Reversion applied blocks in reverse; walk them forward again.
        let mut cache_idx = total_steps;
        let mut step_idx_base: Vec<(usize, &FlowStep)> = Vec::with_capacity(total_steps);
        for (i, step) in self.blocks.iter().flatten().enumerate() {
            step_idx_base.push((i, step));
        }
        for block_i in 0..self.blocks.len() {
            g = squeeze(&g);
            let block = &self.blocks[block_i];
            for (pos_in_block, step) in block.iter().enumerate() {
                cache_idx -= 1;
                let global_idx = block_i * self.config.steps_per_block + pos_in_block;
                let (y_coup, y_mix, y_act) = &cache.step_inputs[cache_idx];
                // inverse ops were applied coupling -> mix -> actnorm,
                // so backprop visits actnorm -> mix -> coupling.
                let (g_to_yact, gs, gb) = step.actnorm.inverse_backward(y_act, &g);
                let (g_to_ymix, gw_mix) = step.mix.inverse_backward(y_mix, &g_to_yact)?;
                let (g_to_ycoup, gp_coup) = step.coupling.inverse_backward(y_coup, &g_to_ymix);
                Self::accumulate_step_grads(
                    param_grads,
                    offsets[global_idx],
                    step,
                    &gs,
                    &gb,
                    &gw_mix,
                    &gp_coup,
                );
                g = g_to_ycoup;
            }
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// feature-statistics transfer

fn channel_stats(t: &Tensor, ch: usize) -> (f64, f64) {
    let data = t.channel(ch);
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var + TRANSFER_VAR_EPS))
}

/// Channel-statistics matching: recenter and rescale each content channel
/// to the style channel's mean and std. Unbiased: transfer(f, f) = f.
pub fn transfer(content: &Tensor, style: &Tensor) -> Result<Tensor> {
    if content.c != style.c {
        return Err(CoreError::ShapeMismatch(format!(
            "content has {} channels, style has {}",
            content.c, style.c
        )));
    }
    let mut out = content.clone();
    for ch in 0..content.c {
        let (mc, sc) = channel_stats(content, ch);
        let (ms, ss) = channel_stats(style, ch);
        for v in out.channel_mut(ch) {
            *v = (*v - mc) / sc * ss + ms;
        }
    }
    Ok(out)
}

/// Backward through [`transfer`]: gradients w.r.t. content and style
/// features given the upstream gradient.
pub fn transfer_backward(
    content: &Tensor,
    style: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let mut g_content = Tensor::zeros(content.c, content.h, content.w);
    let mut g_style = Tensor::zeros(style.c, style.h, style.w);
    for ch in 0..content.c {
        let (mc, sc) = channel_stats(content, ch);
        let (ms, ss) = channel_stats(style, ch);
        let c_data = content.channel(ch);
        let s_data = style.channel(ch);
        let g = grad_out.channel(ch);
        let n = c_data.len() as f64;

        // content side: instance-norm backward scaled by ss
        let xhat: Vec<f64> = c_data.iter().map(|v| (v - mc) / sc).collect();
        let gxhat: Vec<f64> = g.iter().map(|v| v * ss).collect();
        let mean_g = gxhat.iter().sum::<f64>() / n;
        let mean_gx = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for (i, out) in g_content.channel_mut(ch).iter_mut().enumerate() {
            *out = (gxhat[i] - mean_g - xhat[i] * mean_gx) / sc;
        }

        // style side: out depends on style through ms and ss
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        let ns = s_data.len() as f64;
        for (i, out) in g_style.channel_mut(ch).iter_mut().enumerate() {
            *out = sum_g / ns + sum_gx * (s_data[i] - ms) / (ns * ss);
        }
    }
    (g_content, g_style)
}
