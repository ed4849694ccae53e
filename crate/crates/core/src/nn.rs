//! Convolution, activation, and optimizer primitives with hand-written
//! backward passes. Everything is f64 and deterministic.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// 2-D convolution with square kernel, zero padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Layout: [out_c][in_c][k][k].
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    /// He-style initialization: N(0, 2 / fan_in).
    pub fn seeded(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let mut conv = Self::zeros(in_c, out_c, k, stride, pad);
        let std = math::sqrt(2.0 / (in_c * k * k) as f64);
        for w in conv.weight.iter_mut() {
            *w = std * rng.normal();
        }
        conv
    }

    /// Append weights then biases to a flat parameter vector.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    /// Read weights then biases starting at `offset`; returns the offset
    /// past this layer's parameters.
    pub fn read_params(&mut self, params: &[f64], offset: usize) -> usize {
        let nw = self.weight.len();
        let nb = self.bias.len();
        self.weight.copy_from_slice(&params[offset..offset + nw]);
        self.bias.copy_from_slice(&params[offset + nw..offset + nw + nb]);
        offset + nw + nb
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_dims(x.h, x.w);
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            out.channel_mut(oc).fill(self.bias[oc]);
        }
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                let xin = x.channel(ic);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= x.h {
                                continue;
                            }
                            let iy = iy as usize;
                            let orow = oc * oh * ow + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix as usize >= x.w {
                                    continue;
                                }
                                out.data[orow + ox] += wv * xin[iy * x.w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward pass: gradients w.r.t. input, weight, and bias.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (oh, ow) = self.out_dims(x.h, x.w);
        debug_assert_eq!((grad_out.c, grad_out.h, grad_out.w), (self.out_c, oh, ow));
        let mut gin = Tensor::zeros(x.c, x.h, x.w);
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_c];
        for oc in 0..self.out_c {
            gb[oc] = grad_out.channel(oc).iter().sum();
        }
        for oc in 0..self.out_c {
            let gout = grad_out.channel(oc);
            for ic in 0..self.in_c {
                let xin = x.channel(ic);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let widx = ((oc * self.in_c + ic) * self.k + ky) * self.k + kx;
                        let wv = self.weight[widx];
                        let mut wacc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= x.h {
                                continue;
                            }
                            let iy = iy as usize;
                            let grow = oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix as usize >= x.w {
                                    continue;
                                }
                                let g = gout[grow + ox];
                                wacc += g * xin[iy * x.w + ix as usize];
                                gin.data[(ic * x.h + iy) * x.w + ix as usize] += g * wv;
                            }
                        }
                        gw[widx] = wacc;
                    }
                }
            }
        }
        (gin, gw, gb)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.c, x.h * 2, x.w * 2);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let v = x.at(c, y, xx);
                for dy in 0..2 {
                    for dx in 0..2 {
                        *out.at_mut(c, 2 * y + dy, 2 * xx + dx) = v;
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`upsample2`]: 2x2 sum pooling of the upstream gradient.
pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut g = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += grad_out.at(c, 2 * y + dy, 2 * xx + dx);
                    }
                }
                *g.at_mut(c, y, xx) = acc;
            }
        }
    }
    g
}

/// SGD with classical momentum and L2 weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, param_count: usize) -> Self {
        SgdMomentum { lr, momentum, weight_decay, velocity: vec![0.0; param_count] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.velocity.len());
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= self.lr * *v;
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, param_count: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.t as i32);
        let bc2 = 1.0 - math::powi(self.beta2, self.t as i32);
        for (i, (p, &g0)) in params.iter_mut().zip(grads).enumerate() {
            let g = g0 + self.weight_decay * *p;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            *p -= self.lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }
}
