//! Style and content losses over a fixed feature pyramid, plus training
//! of the projection flow network.
//!
//! The extractor is a seeded random convolutional pyramid that is never
//! updated: lower layers feed the Gram-matrix style loss, the top layer
//! feeds the content loss. Training minimizes
//! `content_loss + style_weight * style_loss` of the stylized image
//! revert(transfer(project(content), project(style))) with Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::flow::{transfer, transfer_backward, FlowNetwork};
use crate::nn::{relu, relu_backward, Adam, Conv2d};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fixed three-scale feature pyramid. Layers 0 and 1 are the designated
/// "lower" (style) layers, layer 2 the "higher" (content) layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    conv0: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
}

/// Activations (and pre-activations, kept for backprop) of one image.
pub struct Features {
    z0: Tensor,
    pub a0: Tensor,
    z1: Tensor,
    pub a1: Tensor,
    z2: Tensor,
    pub a2: Tensor,
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = Rng::from_seed(seed);
        FeatureExtractor {
            conv0: Conv2d::seeded(3, 8, 3, 1, 1, &mut rng),
            conv1: Conv2d::seeded(8, 16, 3, 2, 1, &mut rng),
            conv2: Conv2d::seeded(16, 24, 3, 2, 1, &mut rng),
        }
    }

    pub fn features(&self, image: &Tensor) -> Features {
        let z0 = self.conv0.forward(image);
        let a0 = relu(&z0);
        let z1 = self.conv1.forward(&a0);
        let a1 = relu(&z1);
        let z2 = self.conv2.forward(&a1);
        let a2 = relu(&z2);
        Features { z0, a0, z1, a1, z2, a2 }
    }

    /// Backprop gradients injected at each activation down to the image.
    /// `g0`/`g1`/`g2` may be None when a loss does not touch that layer.
    fn backward_to_input(
        &self,
        image: &Tensor,
        feats: &Features,
        g0: Option<&Tensor>,
        g1: Option<&Tensor>,
        g2: Option<&Tensor>,
    ) -> Tensor {
        let zero2 = Tensor::zeros(feats.a2.c, feats.a2.h, feats.a2.w);
        let mut g = g2.unwrap_or(&zero2).clone();
        g = relu_backward(&feats.z2, &g);
        let (mut ga1, _, _) = self.conv2.backward(&feats.a1, &g);
        if let Some(extra) = g1 {
            for (a, b) in ga1.data.iter_mut().zip(&extra.data) {
                *a += b;
            }
        }
        let g = relu_backward(&feats.z1, &ga1);
        let (mut ga0, _, _) = self.conv1.backward(&feats.a0, &g);
        if let Some(extra) = g0 {
            for (a, b) in ga0.data.iter_mut().zip(&extra.data) {
                *a += b;
            }
        }
        let g = relu_backward(&feats.z0, &ga0);
        let (gin, _, _) = self.conv0.backward(image, &g);
        gin
    }
}

/// Gram matrix of a feature map: G[i][j] = sum_p f_i(p) f_j(p) / (H*W).
pub fn gram(features: &Tensor) -> Vec<f64> {
    let c = features.c;
    let plane = features.h * features.w;
    let norm = 1.0 / plane as f64;
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        let fi = features.channel(i);
        for j in i..c {
            let fj = features.channel(j);
            let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
            g[i * c + j] = dot * norm;
            g[j * c + i] = dot * norm;
        }
    }
    g
}

/// Backward of [`gram`]: dL/df given dL/dG.
fn gram_backward(features: &Tensor, grad_g: &[f64]) -> Tensor {
    let c = features.c;
    let plane = features.h * features.w;
    let norm = 1.0 / plane as f64;
    let mut out = Tensor::zeros(c, features.h, features.w);
    for i in 0..c {
        for j in 0..c {
            let coeff = (grad_g[i * c + j] + grad_g[j * c + i]) * norm;
            if coeff == 0.0 {
                continue;
            }
            let fj = features.channel(j);
            let oi = &mut out.data[i * plane..(i + 1) * plane];
            for (o, f) in oi.iter_mut().zip(fj) {
                *o += coeff * f;
            }
        }
    }
    out
}

fn gram_frobenius_loss(ft: &Tensor, fs: &Tensor) -> (f64, Vec<f64>) {
    let gt = gram(ft);
    let gs = gram(fs);
    let mut loss = 0.0;
    let mut grad = vec![0.0; gt.len()];
    for (k, (a, b)) in gt.iter().zip(&gs).enumerate() {
        let d = a - b;
        loss += d * d;
        grad[k] = 2.0 * d;
    }
    (loss, grad)
}

/// Squared Frobenius distance between Gram matrices at the lower layers.
pub fn style_loss(stylized: &Tensor, style: &Tensor, extractor: &FeatureExtractor) -> f64 {
    let ft = extractor.features(stylized);
    let fs = extractor.features(style);
    gram_frobenius_loss(&ft.a0, &fs.a0).0 + gram_frobenius_loss(&ft.a1, &fs.a1).0
}

/// Style loss plus its gradient with respect to the stylized image.
pub fn style_loss_with_grad(
    stylized: &Tensor,
    style: &Tensor,
    extractor: &FeatureExtractor,
) -> (f64, Tensor) {
    let ft = extractor.features(stylized);
    let fs = extractor.features(style);
    let (l0, gg0) = gram_frobenius_loss(&ft.a0, &fs.a0);
    let (l1, gg1) = gram_frobenius_loss(&ft.a1, &fs.a1);
    let g0 = gram_backward(&ft.a0, &gg0);
    let g1 = gram_backward(&ft.a1, &gg1);
    let gin = extractor.backward_to_input(stylized, &ft, Some(&g0), Some(&g1), None);
    (l0 + l1, gin)
}

/// Squared Euclidean distance of top-layer activations.
pub fn content_loss(stylized: &Tensor, content: &Tensor, extractor: &FeatureExtractor) -> f64 {
    let ft = extractor.features(stylized);
    let fc = extractor.features(content);
    ft.a2.data.iter().zip(&fc.a2.data).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Content loss plus its gradient with respect to the stylized image.
pub fn content_loss_with_grad(
    stylized: &Tensor,
    content: &Tensor,
    extractor: &FeatureExtractor,
) -> (f64, Tensor) {
    let ft = extractor.features(stylized);
    let fc = extractor.features(content);
    let mut loss = 0.0;
    let mut g2 = Tensor::zeros(ft.a2.c, ft.a2.h, ft.a2.w);
    for ((gv, a), b) in g2.data.iter_mut().zip(&ft.a2.data).zip(&fc.a2.data) {
        let d = a - b;
        loss += d * d;
        *gv = 2.0 * d;
    }
    let gin = extractor.backward_to_input(stylized, &ft, None, None, Some(&g2));
    (loss, gin)
}

/// Stylize one image: project both, match channel statistics, revert.
pub fn stylize(net: &FlowNetwork, content: &Tensor, style: &Tensor) -> Result<Tensor> {
    let zc = net.project(content)?;
    let zs = net.project(style)?;
    net.revert(&transfer(&zc, &zs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the style loss in the combined objective.
    pub style_weight: f64,
    pub seed: u64,
}

impl Default for StyleTrainConfig {
    fn default() -> Self {
        StyleTrainConfig {
            iterations: 200,
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            style_weight: 1.0,
            seed: 0,
        }
    }
}

/// Train the flow network on fixed (content, style) image pairs with Adam.
/// Returns the per-iteration combined loss. Pairs are visited cyclically
/// after a seeded shuffle. Aborts on non-finite loss.
pub fn train_style(
    net: &mut FlowNetwork,
    pairs: &[(Tensor, Tensor)],
    extractor: &FeatureExtractor,
    config: &StyleTrainConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidConfig("no style pairs to train on".into()));
    }
    // Data-dependent Actnorm init from the first batch of content images.
    let first_batch: Vec<&Tensor> = pairs.iter().take(4).map(|(c, _)| c).collect();
    net.initialize_actnorm(&first_batch)?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = Rng::from_seed(config.seed);
    rng.shuffle(&mut order);

    let mut opt = Adam::new(config.learning_rate, config.weight_decay, net.param_count());
    let mut params = net.params();
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let (content, style) = &pairs[order[it % order.len()]];
        let (zc, cache_c) = net.project_cached(content)?;
        let (zs, cache_s) = net.project_cached(style)?;
        let zt = transfer(&zc, &zs)?;
        let (t_img, cache_r) = net.revert_cached(&zt)?;

        let (lc, gc) = content_loss_with_grad(&t_img, content, extractor);
        let loss = if config.style_weight != 0.0 {
            let (ls, gs) = style_loss_with_grad(&t_img, style, extractor);
            let mut g_t = gc;
            for (a, b) in g_t.data.iter_mut().zip(&gs.data) {
                *a += config.style_weight * b;
            }
            run_backward(net, &cache_c, &cache_s, &cache_r, &zc, &zs, &g_t, &mut params, &mut opt)?;
            lc + config.style_weight * ls
        } else {
            run_backward(net, &cache_c, &cache_s, &cache_r, &zc, &zs, &gc, &mut params, &mut opt)?;
            lc
        };
        if !loss.is_finite() {
            return Err(CoreError::Numerical(format!("loss diverged at iteration {it}")));
        }
        history.push(loss);
    }
    Ok(history)
}

#[allow(clippy::too_many_arguments)]
fn run_backward(
    net: &mut FlowNetwork,
    cache_c: &crate::flow::ProjectCache,
    cache_s: &crate::flow::ProjectCache,
    cache_r: &crate::flow::RevertCache,
    zc: &Tensor,
    zs: &Tensor,
    grad_t: &Tensor,
    params: &mut Vec<f64>,
    opt: &mut Adam,
) -> Result<()> {
    let mut pgrads = vec![0.0; net.param_count()];
    let g_zt = net.backward_revert(cache_r, grad_t, &mut pgrads)?;
    let (g_zc, g_zs) = transfer_backward(zc, zs, &g_zt);
    net.backward_project(cache_c, &g_zc, &mut pgrads);
    net.backward_project(cache_s, &g_zs, &mut pgrads);
    opt.step(params, &pgrads);
    net.set_params(params);
    Ok(())
}
