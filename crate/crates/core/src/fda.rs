//! Fourier low-frequency spectrum swap.
//!
//! Per channel, both images are taken to the frequency domain; the
//! amplitudes inside a centered low-frequency window are replaced by the
//! target image's amplitudes while the source phase is kept everywhere,
//! then the result is transformed back. Content (phase) stays with the
//! source, coarse appearance moves toward the target.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapConfig {
    /// Side fraction of the centered low-frequency amplitude window.
    pub window_fraction: f64,
}

impl Default for SwapConfig {
    fn default() -> Self {
        // 0.01 is the classic choice for full-size photos; desk-size
        // images need a larger window to move any appreciable energy.
        SwapConfig { window_fraction: 0.1 }
    }
}

impl SwapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.window_fraction) {
            return Err(CoreError::InvalidConfig(format!(
                "window_fraction must be in [0,1], got {}",
                self.window_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn abs(self) -> f64 {
        math::hypot(self.re, self.im)
    }
}

/// Naive 1-D DFT with a precomputed twiddle table. `sign` is -1 for the
/// forward transform, +1 for the inverse (without normalization).
fn dft_1d(input: &[Complex], sign: f64) -> Vec<Complex> {
    let n = input.len();
    let mut table = Vec::with_capacity(n);
    for k in 0..n {
        let angle = sign * math::TAU * k as f64 / n as f64;
        table.push(Complex { re: math::cos(angle), im: math::sin(angle) });
    }
    let mut out = vec![Complex { re: 0.0, im: 0.0 }; n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex { re: 0.0, im: 0.0 };
        for (j, v) in input.iter().enumerate() {
            let t = table[(k * j) % n];
            acc.re += v.re * t.re - v.im * t.im;
            acc.im += v.re * t.im + v.im * t.re;
        }
        *o = acc;
    }
    out
}

/// Row-column 2-D DFT of a real plane. Output is unshifted (DC at [0][0]).
pub fn dft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex> {
    let mut rows: Vec<Complex> = plane.iter().map(|&v| Complex { re: v, im: 0.0 }).collect();
    for y in 0..h {
        let row = dft_1d(&rows[y * w..(y + 1) * w], -1.0);
        rows[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    let mut out = rows.clone();
    let mut col = vec![Complex { re: 0.0, im: 0.0 }; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        let t = dft_1d(&col, -1.0);
        for y in 0..h {
            out[y * w + x] = t[y];
        }
    }
    out
}

/// Inverse of [`dft2`], returning (real plane, max imaginary residue).
pub fn idft2(spec: &[Complex], h: usize, w: usize) -> (Vec<f64>, f64) {
    let mut rows = spec.to_vec();
    for y in 0..h {
        let row = dft_1d(&rows[y * w..(y + 1) * w], 1.0);
        rows[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    let mut full = rows.clone();
    let mut col = vec![Complex { re: 0.0, im: 0.0 }; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        let t = dft_1d(&col, 1.0);
        for y in 0..h {
            full[y * w + x] = t[y];
        }
    }
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; h * w];
    let mut max_im = 0.0f64;
    for (i, c) in full.iter().enumerate() {
        out[i] = c.re * norm;
        max_im = max_im.max(math::abs(c.im * norm));
    }
    (out, max_im)
}

/// Window side length: `floor(fraction * n)`, forced odd so the window is
/// symmetric about DC, full plane when the fraction reaches 1.
pub fn window_side(fraction: f64, n: usize) -> usize {
    let side = math::floor(fraction * n as f64) as usize;
    if side == 0 {
        0
    } else if side >= n {
        n
    } else if side % 2 == 0 {
        side - 1
    } else {
        side
    }
}

/// Indices of the centered window in shifted coordinates mapped back to
/// unshifted spectrum positions.
fn window_positions(h: usize, w: usize, fraction: f64) -> Vec<usize> {
    let wh = window_side(fraction, h);
    let ww = window_side(fraction, w);
    if wh == 0 || ww == 0 {
        return Vec::new();
    }
    let (cy, cx) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(wh * ww);
    for dy in 0..wh {
        let sy = cy + dy - (wh - 1) / 2;
        let uy = (sy + h - cy) % h; // unshift
        for dx in 0..ww {
            let sx = cx + dx - (ww - 1) / 2;
            let ux = (sx + w - cx) % w;
            out.push(uy % h * w + ux);
        }
    }
    out
}

/// Swap the low-frequency amplitude window of `source` for `target`'s,
/// keeping the source phase everywhere. Output clamped to [0,1].
pub fn fourier_swap(source: &Tensor, target: &Tensor, config: &SwapConfig) -> Result<Tensor> {
    config.validate()?;
    if !source.same_shape(target) {
        return Err(CoreError::ShapeMismatch(format!(
            "source ({},{},{}) vs target ({},{},{})",
            source.c, source.h, source.w, target.c, target.h, target.w
        )));
    }
    let (h, w) = (source.h, source.w);
    let window = window_positions(h, w, config.window_fraction);
    let mut out = Tensor::zeros(source.c, h, w);
    for ch in 0..source.c {
        let mut spec_s = dft2(source.channel(ch), h, w);
        if !window.is_empty() {
            let spec_t = dft2(target.channel(ch), h, w);
            for &p in &window {
                let amp_t = spec_t[p].abs();
                let amp_s = spec_s[p].abs();
                spec_s[p] = if amp_s > 1e-300 {
                    let scale = amp_t / amp_s;
                    Complex { re: spec_s[p].re * scale, im: spec_s[p].im * scale }
                } else {
                    // Phase undefined at a zero source bin; a real value
                    // keeps the spectrum conjugate-symmetric.
                    Complex { re: amp_t, im: 0.0 }
                };
            }
        }
        let (plane, max_im) = idft2(&spec_s, h, w);
        if max_im > 1e-6 {
            return Err(CoreError::Numerical(format!(
                "imaginary residue {max_im} after spectrum swap"
            )));
        }
        for (dst, &v) in out.channel_mut(ch).iter_mut().zip(&plane) {
            *dst = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
