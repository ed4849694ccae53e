//! Small encoder-decoder segmentation network and its training harness.
//!
//! Three stride-2 encoder stages, three nearest-neighbour upsampling
//! decoder stages with additive skip connections, and a 1x1 class head.
//! Training uses SGD with momentum on the mean pixel negative
//! log-likelihood, optionally plus a weighted mean prediction-entropy
//! term that pushes the model towards confident outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImage;
use crate::error::{CoreError, Result};
use crate::math;
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nn::{relu, relu_backward, upsample2, upsample2_backward, Conv2d, SgdMomentum};
use crate::rng::Rng;
use crate::tensor::Tensor;

const BASE_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegModel {
    pub num_classes: usize,
    enc: Conv2d,   // 3 -> 8, stride 1
    down1: Conv2d, // 8 -> 16, stride 2
    down2: Conv2d, // 16 -> 32, stride 2
    down3: Conv2d, // 32 -> 32, stride 2
    up1: Conv2d,   // 32 -> 32 after upsample, + skip e3
    up2: Conv2d,   // 32 -> 16 after upsample, + skip e2
    up3: Conv2d,   // 16 -> 8 after upsample, + skip e1
    head: Conv2d,  // 8 -> K, 1x1
}

/// Every intermediate needed to backpropagate one forward pass.
struct ForwardCache {
    input: Tensor,
    z_enc: Tensor,
    e1: Tensor,
    z_d1: Tensor,
    e2: Tensor,
    z_d2: Tensor,
    e3: Tensor,
    z_d3: Tensor,
    u1_in: Tensor,
    z_u1: Tensor,
    u2_in: Tensor,
    z_u2: Tensor,
    u3_in: Tensor,
    z_u3: Tensor,
    s3: Tensor,
}

impl SegModel {
    pub fn new(num_classes: usize, seed: u64) -> Self {
        let b = BASE_CHANNELS;
        let mut rng = Rng::from_seed(seed);
        SegModel {
            num_classes,
            enc: Conv2d::seeded(3, b, 3, 1, 1, &mut rng),
            down1: Conv2d::seeded(b, 2 * b, 3, 2, 1, &mut rng),
            down2: Conv2d::seeded(2 * b, 4 * b, 3, 2, 1, &mut rng),
            down3: Conv2d::seeded(4 * b, 4 * b, 3, 2, 1, &mut rng),
            up1: Conv2d::seeded(4 * b, 4 * b, 3, 1, 1, &mut rng),
            up2: Conv2d::seeded(4 * b, 2 * b, 3, 1, 1, &mut rng),
            up3: Conv2d::seeded(2 * b, b, 3, 1, 1, &mut rng),
            head: Conv2d::seeded(b, num_classes, 1, 1, 0, &mut rng),
        }
    }

    fn convs(&self) -> [&Conv2d; 8] {
        [&self.enc, &self.down1, &self.down2, &self.down3, &self.up1, &self.up2, &self.up3, &self.head]
    }

    fn convs_mut(&mut self) -> [&mut Conv2d; 8] {
        [
            &mut self.enc,
            &mut self.down1,
            &mut self.down2,
            &mut self.down3,
            &mut self.up1,
            &mut self.up2,
            &mut self.up3,
            &mut self.head,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in self.convs() {
            c.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for c in self.convs_mut() {
            offset = c.read_params(params, offset);
        }
        debug_assert_eq!(offset, params.len());
    }

    fn forward_cached(&self, image: &Tensor) -> ForwardCache {
        let z_enc = self.enc.forward(image);
        let e1 = relu(&z_enc);
        let z_d1 = self.down1.forward(&e1);
        let e2 = relu(&z_d1);
        let z_d2 = self.down2.forward(&e2);
        let e3 = relu(&z_d2);
        let z_d3 = self.down3.forward(&e3);
        let e4 = relu(&z_d3);

        let u1_in = upsample2(&e4);
        let z_u1 = self.up1.forward(&u1_in);
        let mut s1 = relu(&z_u1);
        for (a, b) in s1.data.iter_mut().zip(&e3.data) {
            *a += b;
        }
        let u2_in = upsample2(&s1);
        let z_u2 = self.up2.forward(&u2_in);
        let mut s2 = relu(&z_u2);
        for (a, b) in s2.data.iter_mut().zip(&e2.data) {
            *a += b;
        }
        let u3_in = upsample2(&s2);
        let z_u3 = self.up3.forward(&u3_in);
        let mut s3 = relu(&z_u3);
        for (a, b) in s3.data.iter_mut().zip(&e1.data) {
            *a += b;
        }
        ForwardCache {
            input: image.clone(),
            z_enc,
            e1,
            z_d1,
            e2,
            z_d2,
            e3,
            z_d3,
            u1_in,
            z_u1,
            u2_in,
            z_u2,
            u3_in,
            z_u3,
            s3,
        }
    }

    /// Class scores (logits) with shape (num_classes, H, W). H and W must
    /// be divisible by 8 so the three stride-2 stages align with the skips.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        let cache = self.forward_cached(image);
        Ok(self.head.forward(&cache.s3))
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.c != 3 || image.h % 8 != 0 || image.w % 8 != 0 || image.h == 0 {
            return Err(CoreError::ShapeMismatch(format!(
                "segmentation input must be 3 channels with H, W divisible by 8, got ({}, {}, {})",
                image.c, image.h, image.w
            )));
        }
        Ok(())
    }

    /// Backward pass: accumulates parameter gradients (canonical flat
    /// order matching [`SegModel::params`]) into `grads`.
    fn backward(&self, cache: &ForwardCache, grad_scores: &Tensor, grads: &mut [f64]) {
        let convs = self.convs();
        let mut offsets = [0usize; 8];
        let mut off = 0;
        for (i, c) in convs.iter().enumerate() {
            offsets[i] = off;
            off += c.param_count();
        }
        let add = |idx: usize, gw: &[f64], gb: &[f64], grads: &mut [f64]| {
            let o = offsets[idx];
            for (k, v) in gw.iter().enumerate() {
                grads[o + k] += v;
            }
            for (k, v) in gb.iter().enumerate() {
                grads[o + gw.len() + k] += v;
            }
        };

        let (g_s3, gw, gb) = self.head.backward(&cache.s3, grad_scores);
        add(7, &gw, &gb, grads);

        // s3 = relu(z_u3) + e1: gradient splits into both branches.
        let mut g_e1 = g_s3.clone();
        let g = relu_backward(&cache.z_u3, &g_s3);
        let (g_u3_in, gw, gb) = self.up3.backward(&cache.u3_in, &g);
        add(6, &gw, &gb, grads);
        let g_s2 = upsample2_backward(&g_u3_in);

        let mut g_e2 = g_s2.clone();
        let g = relu_backward(&cache.z_u2, &g_s2);
        let (g_u2_in, gw, gb) = self.up2.backward(&cache.u2_in, &g);
        add(5, &gw, &gb, grads);
        let g_s1 = upsample2_backward(&g_u2_in);

        let mut g_e3 = g_s1.clone();
        let g = relu_backward(&cache.z_u1, &g_s1);
        let (g_u1_in, gw, gb) = self.up1.backward(&cache.u1_in, &g);
        add(4, &gw, &gb, grads);
        let g_e4 = upsample2_backward(&g_u1_in);

        let g = relu_backward(&cache.z_d3, &g_e4);
        let (g, gw, gb) = self.down3.backward(&cache.e3, &g);
        add(3, &gw, &gb, grads);
        for (a, b) in g_e3.data.iter_mut().zip(&g.data) {
            *a += b;
        }
        let g = relu_backward(&cache.z_d2, &g_e3);
        let (g, gw, gb) = self.down2.backward(&cache.e2, &g);
        add(2, &gw, &gb, grads);
        for (a, b) in g_e2.data.iter_mut().zip(&g.data) {
            *a += b;
        }
        let g = relu_backward(&cache.z_d1, &g_e2);
        let (g, gw, gb) = self.down1.backward(&cache.e1, &g);
        add(1, &gw, &gb, grads);
        for (a, b) in g_e1.data.iter_mut().zip(&g.data) {
            *a += b;
        }
        let g = relu_backward(&cache.z_enc, &g_e1);
        let (_, gw, gb) = self.enc.backward(&cache.input, &g);
        add(0, &gw, &gb, grads);
    }

    /// Hard class assignment: per-pixel argmax over scores (lowest class
    /// id wins ties).
    pub fn predict(&self, image: &Tensor) -> Result<Vec<u8>> {
        let scores = self.forward(image)?;
        let plane = scores.h * scores.w;
        let mut out = vec![0u8; plane];
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = scores.data[p];
            for k in 1..scores.c {
                let v = scores.data[k * plane + p];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            out[p] = best as u8;
        }
        Ok(out)
    }
}

/// Numerically stable per-pixel softmax columns of a score tensor.
fn softmax_columns(scores: &Tensor) -> Vec<f64> {
    let k = scores.c;
    let plane = scores.h * scores.w;
    let mut probs = vec![0.0; k * plane];
    for p in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for c in 0..k {
            max = max.max(scores.data[c * plane + p]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = math::exp(scores.data[c * plane + p] - max);
            probs[c * plane + p] = e;
            sum += e;
        }
        for c in 0..k {
            probs[c * plane + p] /= sum;
        }
    }
    probs
}

/// Mean per-pixel negative log-likelihood of the ground-truth class,
/// with its gradient with respect to the scores.
pub fn supervised_loss(scores: &Tensor, mask: &[u8]) -> Result<(f64, Tensor)> {
    let k = scores.c;
    let plane = scores.h * scores.w;
    if mask.len() != plane {
        return Err(CoreError::ShapeMismatch(format!(
            "mask has {} pixels, scores have {}",
            mask.len(),
            plane
        )));
    }
    let probs = softmax_columns(scores);
    let inv_n = 1.0 / plane as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(k, scores.h, scores.w);
    for (p, &gt) in mask.iter().enumerate() {
        let gt = gt as usize;
        if gt >= k {
            return Err(CoreError::ClassOutOfRange { value: gt, num_classes: k, context: "supervised loss mask".into() });
        }
        loss -= math::ln(probs[gt * plane + p].max(1e-300)) * inv_n;
        for c in 0..k {
            let indicator = if c == gt { 1.0 } else { 0.0 };
            grad.data[c * plane + p] = (probs[c * plane + p] - indicator) * inv_n;
        }
    }
    Ok((loss, grad))
}

/// Mean per-pixel entropy of the predicted distribution, with its
/// gradient with respect to the scores.
pub fn entropy_loss(scores: &Tensor) -> (f64, Tensor) {
    let k = scores.c;
    let plane = scores.h * scores.w;
    let probs = softmax_columns(scores);
    let inv_n = 1.0 / plane as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(k, scores.h, scores.w);
    for p in 0..plane {
        let mut h = 0.0;
        for c in 0..k {
            let pr = probs[c * plane + p];
            if pr > 0.0 {
                h -= pr * math::ln(pr);
            }
        }
        loss += h * inv_n;
        for c in 0..k {
            let pr = probs[c * plane + p];
            let lp = if pr > 0.0 { math::ln(pr) } else { 0.0 };
            grad.data[c * plane + p] = -pr * (lp + h) * inv_n;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the mean-entropy term added to the supervised loss.
    pub entropy_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_classes: 4,
            epochs: 40,
            batch_size: 4,
            learning_rate: 5e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            entropy_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CoreError::InvalidConfig("need at least 2 classes".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if self.entropy_weight < 0.0 {
            return Err(CoreError::InvalidConfig("entropy weight must be non-negative".into()));
        }
        Ok(())
    }
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for c in 0..t.c {
        let ch = out.channel_mut(c);
        for row in ch.chunks_mut(t.w) {
            row.reverse();
        }
    }
    out
}

fn flip_mask(mask: &[u8], w: usize) -> Vec<u8> {
    let mut out = mask.to_vec();
    for row in out.chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Train a fresh model on the given labeled images. Images are shuffled
/// each epoch and flipped horizontally with probability 1/2 (both seeded
/// by `config.seed`). Returns the model and the mean loss per epoch.
pub fn train(images: &[LabeledImage], config: &TrainConfig) -> Result<(SegModel, Vec<f64>)> {
    config.validate()?;
    if images.is_empty() {
        return Err(CoreError::InvalidConfig("no training images".into()));
    }
    let mut model = SegModel::new(config.num_classes, config.seed);
    for (i, img) in images.iter().enumerate() {
        model.check_input(&img.pixels)?;
        if let Some(&c) = img.classes_present.iter().next_back() {
            if c >= config.num_classes {
                return Err(CoreError::ClassOutOfRange {
                    value: c,
                    num_classes: config.num_classes,
                    context: "training image mask".into(),
                });
            }
        }
        if i > 0 && (img.pixels.h != images[0].pixels.h || img.pixels.w != images[0].pixels.w) {
            return Err(CoreError::ShapeMismatch("training images must share one size".into()));
        }
    }

    let mut opt = SgdMomentum::new(
        config.learning_rate,
        config.momentum,
        config.weight_decay,
        model.param_count(),
    );
    let mut params = model.params();
    let mut rng = Rng::from_seed(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batch_count = 0usize;
        for (batch_id, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = vec![0.0; model.param_count()];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let img = &images[idx];
                let flip = rng.uniform() < 0.5;
                let (pixels, mask) = if flip {
                    (flip_horizontal(&img.pixels), flip_mask(&img.mask, img.pixels.w))
                } else {
                    (img.pixels.clone(), img.mask.clone())
                };
                let cache = model.forward_cached(&pixels);
                let scores = model.head.forward(&cache.s3);
                let (sup, mut g) = supervised_loss(&scores, &mask)?;
                let mut loss = sup;
                if config.entropy_weight > 0.0 {
                    let (ent, ge) = entropy_loss(&scores);
                    loss += config.entropy_weight * ent;
                    for (a, b) in g.data.iter_mut().zip(&ge.data) {
                        *a += config.entropy_weight * b;
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for v in g.data.iter_mut() {
                    *v *= scale;
                }
                model.backward(&cache, &g, &mut grads);
                batch_loss += loss * scale;
            }
            if !batch_loss.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "training loss diverged at epoch {epoch}, batch {batch_id}"
                )));
            }
            opt.step(&mut params, &grads);
            model.set_params(&params);
            epoch_loss += batch_loss;
            batch_count += 1;
        }
        history.push(epoch_loss / batch_count as f64);
    }
    Ok((model, history))
}

/// Evaluate a model: per-pixel argmax predictions against ground truth,
/// aggregated into one confusion matrix over all images.
pub fn evaluate(model: &SegModel, images: &[LabeledImage]) -> Result<MetricsReport> {
    if images.is_empty() {
        return Err(CoreError::InvalidConfig("no evaluation images".into()));
    }
    let mut cm = ConfusionMatrix::new(model.num_classes);
    for img in images {
        let pred = model.predict(&img.pixels)?;
        cm.accumulate(&pred, &img.mask)?;
    }
    cm.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Domain;
    use alloc::string::ToString;

    fn random_scores(seed: u64, k: usize, h: usize, w: usize) -> Tensor {
        let mut rng = Rng::from_seed(seed);
        Tensor::from_vec(k, h, w, (0..k * h * w).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn uniform_scores_give_ln_k_nll() {
        let scores = Tensor::zeros(4, 2, 2);
        let mask = vec![0u8, 1, 2, 3];
        let (loss, _) = supervised_loss(&scores, &mask).unwrap();
        assert!((loss - math::ln(4.0)).abs() < 1e-12);
        let (ent, _) = entropy_loss(&scores);
        assert!((ent - math::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_pixel_nll() {
        // Pixel 0: scores (ln 3, 0), gt 0 -> p = 3/4, nll = ln(4/3).
        // Pixel 1: scores (0, 0), gt 1 -> nll = ln 2.
        let scores = Tensor::from_vec(2, 1, 2, vec![math::ln(3.0), 0.0, 0.0, 0.0]).unwrap();
        let (loss, _) = supervised_loss(&scores, &[0, 1]).unwrap();
        let want = 0.5 * (math::ln(4.0 / 3.0) + math::ln(2.0));
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn one_hot_distribution_has_zero_entropy() {
        let mut scores = Tensor::zeros(4, 1, 1);
        scores.data[2] = 1e4;
        let (ent, _) = entropy_loss(&scores);
        assert!(ent.abs() < 1e-9);
    }

    #[test]
    fn half_half_distribution_has_ln2_entropy() {
        // p = (0.5, 0.5, ~0, ~0)
        let scores = Tensor::from_vec(4, 1, 1, vec![10.0, 10.0, -40.0, -40.0]).unwrap();
        let (ent, _) = entropy_loss(&scores);
        assert!((ent - math::ln(2.0)).abs() < 1e-9);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let scores = random_scores(3, 3, 4, 4);
        let mask: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let (_, g_sup) = supervised_loss(&scores, &mask).unwrap();
        let (_, g_ent) = entropy_loss(&scores);
        let eps = 1e-6;
        for i in 0..scores.len() {
            let mut p = scores.clone();
            p.data[i] += eps;
            let mut m = scores.clone();
            m.data[i] -= eps;
            let fd = (supervised_loss(&p, &mask).unwrap().0 - supervised_loss(&m, &mask).unwrap().0)
                / (2.0 * eps);
            assert!((fd - g_sup.data[i]).abs() < 1e-6, "sup {i}");
            let fd = (entropy_loss(&p).0 - entropy_loss(&m).0) / (2.0 * eps);
            assert!((fd - g_ent.data[i]).abs() < 1e-6, "ent {i}");
        }
    }

    fn tiny_image(seed: u64, h: usize, w: usize, num_classes: usize) -> LabeledImage {
        let mut rng = Rng::from_seed(seed);
        let mut pixels = Tensor::zeros(3, h, w);
        let mut mask = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let class = if x < w / 2 { 0 } else { (1 + (y * num_classes / h) % (num_classes - 1)) as u8 };
                mask[y * w + x] = class;
                for c in 0..3 {
                    let base = class as f64 / num_classes as f64;
                    pixels.data[c * h * w + y * w + x] =
                        (base + 0.1 * rng.uniform() + 0.2 * c as f64 * base).min(1.0);
                }
            }
        }
        LabeledImage::new("t".to_string() + &seed.to_string(), pixels, mask, Domain::Source, num_classes).unwrap()
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let model = SegModel::new(3, 7);
        let img = tiny_image(8, 8, 8, 3);
        let cache = model.forward_cached(&img.pixels);
        let scores = model.head.forward(&cache.s3);
        let (_, g_scores) = supervised_loss(&scores, &img.mask).unwrap();
        let mut grads = vec![0.0; model.param_count()];
        model.backward(&cache, &g_scores, &mut grads);

        let params = model.params();
        let eps = 1e-5;
        let mut checked = 0;
        for i in (0..params.len()).step_by(97) {
            let mut m2 = model.clone();
            let mut p = params.clone();
            p[i] += eps;
            m2.set_params(&p);
            let lp = supervised_loss(&m2.forward(&img.pixels).unwrap(), &img.mask).unwrap().0;
            p[i] -= 2.0 * eps;
            m2.set_params(&p);
            let lm = supervised_loss(&m2.forward(&img.pixels).unwrap(), &img.mask).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - grads[i]).abs() / (1e-6 + fd.abs().max(grads[i].abs()));
            assert!(rel < 1e-3, "param {i}: fd {fd} vs {}", grads[i]);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn params_roundtrip() {
        let model = SegModel::new(4, 1);
        let mut other = SegModel::new(4, 2);
        other.set_params(&model.params());
        assert_eq!(model, other);
    }

    #[test]
    fn overfits_a_single_image() {
        let img = tiny_image(11, 16, 16, 3);
        let config = TrainConfig {
            num_classes: 3,
            epochs: 120,
            batch_size: 1,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            entropy_weight: 0.0,
            seed: 3,
        };
        let (model, history) = train(core::slice::from_ref(&img), &config).unwrap();
        assert!(history.last().unwrap() < &0.2, "final loss {}", history.last().unwrap());
        let report = evaluate(&model, core::slice::from_ref(&img)).unwrap();
        assert!(report.miou > 0.9, "miou {}", report.miou);
    }

    #[test]
    fn zero_epochs_returns_fresh_model() {
        let img = tiny_image(12, 8, 8, 3);
        let config = TrainConfig { num_classes: 3, epochs: 0, seed: 9, ..Default::default() };
        let (model, history) = train(core::slice::from_ref(&img), &config).unwrap();
        assert!(history.is_empty());
        assert_eq!(model.params(), SegModel::new(3, 9).params());
    }

    #[test]
    fn training_is_deterministic() {
        let imgs: Vec<LabeledImage> = (0..3).map(|i| tiny_image(20 + i, 8, 8, 3)).collect();
        let config = TrainConfig { num_classes: 3, epochs: 3, entropy_weight: 0.1, ..Default::default() };
        let (m1, h1) = train(&imgs, &config).unwrap();
        let (m2, h2) = train(&imgs, &config).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn rejects_out_of_range_mask() {
        let img = tiny_image(30, 8, 8, 4);
        let config = TrainConfig { num_classes: 3, epochs: 1, ..Default::default() };
        assert!(matches!(
            train(core::slice::from_ref(&img), &config),
            Err(CoreError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_unaligned_input_size() {
        let model = SegModel::new(3, 0);
        let bad = Tensor::zeros(3, 12, 12);
        assert!(matches!(model.forward(&bad), Err(CoreError::ShapeMismatch(_))));
    }
}
