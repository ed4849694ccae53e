//! Data model for the two-domain segmentation corpus: labeled images,
//! manifests, synthetic generation, and style-pair assignment.
//!
//! The synthetic generator stands in for a simulated-capture pipeline.
//! Both domains draw mask geometry from the same distribution (smooth
//! random blobs, 1-3 foreground classes per image) but differ in
//! appearance: the source domain uses flat per-class colors while the
//! target domain applies a fixed hue rotation, per-pixel texture noise,
//! and a brightness gradient, all scaled by `style_gap`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// An H x W x 3 image in [0,1] with its class-index mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Tensor,
    pub mask: Vec<u8>,
    pub domain: Domain,
    pub classes_present: BTreeSet<usize>,
}

impl LabeledImage {
    /// Build an image, deriving `classes_present` from the mask and
    /// checking every invariant.
    pub fn new(
        id: String,
        pixels: Tensor,
        mask: Vec<u8>,
        domain: Domain,
        num_classes: usize,
    ) -> Result<Self> {
        if pixels.c != 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "image '{id}' must have 3 channels, got {}",
                pixels.c
            )));
        }
        if mask.len() != pixels.h * pixels.w {
            return Err(CoreError::ShapeMismatch(format!(
                "image '{id}': mask has {} pixels, image is {}x{}",
                mask.len(),
                pixels.h,
                pixels.w
            )));
        }
        if !pixels.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(CoreError::InvalidConfig(format!(
                "image '{id}': pixel values must be finite and in [0,1]"
            )));
        }
        let mut classes_present = BTreeSet::new();
        for &m in &mask {
            if m as usize >= num_classes {
                return Err(CoreError::ClassOutOfRange {
                    value: m as usize,
                    num_classes,
                    context: format!("mask of image '{id}'"),
                });
            }
            if m != 0 {
                classes_present.insert(m as usize);
            }
        }
        Ok(LabeledImage { id, pixels, mask, domain, classes_present })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub domain: Domain,
    pub classes_present: BTreeSet<usize>,
}

/// Index of one domain's images: class names, entries, per-class counts.
/// An image containing several foreground classes is counted once per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub counts_per_class: BTreeMap<usize, usize>,
}

impl DatasetManifest {
    /// Assemble a manifest, recomputing `counts_per_class` and checking
    /// path uniqueness and class-id ranges.
    pub fn from_entries(class_names: Vec<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let k = class_names.len();
        let mut seen_paths = BTreeSet::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &entries {
            for path in [&e.image_path, &e.mask_path] {
                if !seen_paths.insert(path.clone()) {
                    return Err(CoreError::InvalidConfig(format!("duplicate path '{path}'")));
                }
            }
            for &c in &e.classes_present {
                if c == 0 || c >= k {
                    return Err(CoreError::ClassOutOfRange {
                        value: c,
                        num_classes: k,
                        context: format!("entry '{}'", e.id),
                    });
                }
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        Ok(DatasetManifest { class_names, entries, counts_per_class: counts })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Foreground class ids (everything except background 0).
    pub fn foreground_classes(&self) -> Vec<usize> {
        (1..self.class_names.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Check `counts_per_class` against the entries.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::from_entries(self.class_names.clone(), self.entries.clone())?;
        if rebuilt.counts_per_class != self.counts_per_class {
            return Err(CoreError::InvalidConfig(String::from(
                "counts_per_class inconsistent with entries",
            )));
        }
        Ok(())
    }
}

/// Configuration for the synthetic two-domain generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Requested number of images containing each foreground class,
    /// applied to each domain independently.
    pub images_per_class: BTreeMap<usize, usize>,
    pub image_size: (usize, usize),
    /// Appearance divergence between domains, 0 = identical distributions.
    pub style_gap: f64,
    pub num_classes: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 16 || w < 16 || h % 2 != 0 || w % 2 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "image size must be >= 16 and even, got {h}x{w}"
            )));
        }
        if !(0.0..=1.0).contains(&self.style_gap) {
            return Err(CoreError::InvalidConfig(format!(
                "style_gap must be in [0,1], got {}",
                self.style_gap
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(CoreError::InvalidConfig(format!(
                "num_classes must be in [2,256], got {}",
                self.num_classes
            )));
        }
        for &c in self.images_per_class.keys() {
            if c == 0 || c >= self.num_classes {
                return Err(CoreError::InvalidConfig(format!(
                    "images_per_class references class {c} outside 1..{}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Fixed per-class fill color, spread around the hue circle.
fn class_color(class: usize, num_classes: usize) -> [f64; 3] {
    if class == 0 {
        return [0.12, 0.10, 0.14];
    }
    let t = class as f64 / num_classes as f64;
    [
        0.5 + 0.4 * math::cos(math::TAU * t),
        0.5 + 0.4 * math::cos(math::TAU * t + 2.0),
        0.5 + 0.4 * math::cos(math::TAU * t + 4.0),
    ]
}

/// Smooth value noise: a coarse random grid bilinearly interpolated to H x W.
fn value_noise(rng: &mut Rng, h: usize, w: usize, grid: usize) -> Vec<f64> {
    let gh = grid + 1;
    let gw = grid + 1;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.uniform()).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / h as f64 * grid as f64;
        let y0 = fy as usize;
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 / w as f64 * grid as f64;
            let x0 = fx as usize;
            let tx = fx - x0 as f64;
            let v00 = lattice[y0 * gw + x0];
            let v01 = lattice[y0 * gw + x0 + 1];
            let v10 = lattice[(y0 + 1) * gw + x0];
            let v11 = lattice[(y0 + 1) * gw + x0 + 1];
            out[y * w + x] =
                v00 * (1.0 - ty) * (1.0 - tx) + v01 * (1.0 - ty) * tx + v10 * ty * (1.0 - tx) + v11 * ty * tx;
        }
    }
    out
}

/// One smooth blob mask for `classes`: each class gets a radial bump at a
/// random center plus low-frequency noise; pixels take the argmax class
/// where the field exceeds a threshold, else background.
fn blob_mask(rng: &mut Rng, h: usize, w: usize, classes: &[usize]) -> (Vec<u8>, BTreeSet<usize>) {
    const THRESHOLD: f64 = 0.55;
    let mut fields: Vec<Vec<f64>> = Vec::with_capacity(classes.len());
    for _ in classes {
        let cy = rng.range(0.2, 0.8) * h as f64;
        let cx = rng.range(0.2, 0.8) * w as f64;
        let radius = rng.range(0.15, 0.3) * h.min(w) as f64;
        let noise = value_noise(rng, h, w, 4);
        let mut field = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let d = math::hypot(y as f64 - cy, x as f64 - cx) / radius;
                let bump = if d < 1.0 { 1.0 - d * d } else { 0.0 };
                field[y * w + x] = bump + 0.35 * noise[y * w + x];
            }
        }
        fields.push(field);
    }
    let mut mask = vec![0u8; h * w];
    let mut present = BTreeSet::new();
    for p in 0..h * w {
        let mut best = THRESHOLD;
        let mut label = 0usize;
        for (fi, field) in fields.iter().enumerate() {
            if field[p] > best {
                best = field[p];
                label = classes[fi];
            }
        }
        mask[p] = label as u8;
        if label != 0 {
            present.insert(label);
        }
    }
    (mask, present)
}

/// Rotate RGB around the gray axis by `angle` radians (hue shift).
fn hue_rotate(rgb: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    let one_third = 1.0 / 3.0;
    let sqrt3 = math::sqrt(3.0);
    let mut m = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[i][j] = c * delta
                + (1.0 - c) * one_third
                + s / sqrt3 * if (j + 1) % 3 == i { 1.0 } else if (i + 1) % 3 == j { -1.0 } else { 0.0 };
        }
    }
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2];
    }
    out
}

/// Decide the class set of each image so that the number of images
/// containing class `c` equals `images_per_class[c]` exactly.
fn plan_class_sets(rng: &mut Rng, images_per_class: &BTreeMap<usize, usize>) -> Vec<Vec<usize>> {
    let mut remaining: BTreeMap<usize, usize> =
        images_per_class.iter().filter(|(_, &n)| n > 0).map(|(&c, &n)| (c, n)).collect();
    let mut sets = Vec::new();
    while !remaining.is_empty() {
        let avail: Vec<usize> = remaining.keys().copied().collect();
        let max_take = avail.len().min(3);
        let take = 1 + rng.below(max_take);
        let mut chosen = avail.clone();
        rng.shuffle(&mut chosen);
        chosen.truncate(take);
        chosen.sort_unstable();
        for &c in &chosen {
            let n = remaining.get_mut(&c).unwrap();
            *n -= 1;
            if *n == 0 {
                remaining.remove(&c);
            }
        }
        sets.push(chosen);
    }
    sets
}

fn render_image(
    rng: &mut Rng,
    config: &SynthConfig,
    domain: Domain,
    classes: &[usize],
) -> Result<(Tensor, Vec<u8>)> {
    let (h, w) = config.image_size;
    // Retry blob placement until every requested class is visible.
    let mut attempt = 0;
    let (mask, present) = loop {
        let (mask, present) = blob_mask(rng, h, w, classes);
        if classes.iter().all(|c| present.contains(c)) {
            break (mask, present);
        }
        attempt += 1;
        if attempt > 64 {
            return Err(CoreError::Numerical(format!(
                "could not place blobs for classes {classes:?} after {attempt} attempts"
            )));
        }
    };
    let _ = present;

    let gap = config.style_gap;
    let noise_amp = 0.15 * gap;
    let grad_amp = 0.3 * gap;
    // Fixed cross-domain shift: hue rotation plus a contrast ramp that
    // inverts luminance ordering at large gaps (hue rotation alone keeps
    // luminance, which a source-trained model can key on). Mild per-image
    // jitter spreads the target domain around that shift.
    let hue_angle = gap * (2.1 + 1.0 * (rng.uniform() - 0.5));
    let contrast = 1.0 - 1.7 * gap;
    let brightness = 0.3 * gap * (rng.uniform() - 0.5);
    let mut pixels = Tensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let base = class_color(mask[y * w + x] as usize, config.num_classes);
            let rgb = match domain {
                Domain::Source => base,
                Domain::Target => {
                    let mut rgb = hue_rotate(base, hue_angle);
                    let grad = grad_amp * (y as f64 / h as f64 - 0.5);
                    for v in rgb.iter_mut() {
                        *v = 0.5 + contrast * (*v - 0.5);
                        *v += noise_amp * (rng.uniform() - 0.5) + grad + brightness;
                    }
                    rgb
                }
            };
            for ch in 0..3 {
                *pixels.at_mut(ch, y, x) = rgb[ch].clamp(0.0, 1.0);
            }
        }
    }
    Ok((pixels, mask))
}

/// Generate both domains in memory. Pure function of the config: the same
/// seed always yields the same images.
pub fn generate_synthetic_images(
    config: &SynthConfig,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    config.validate()?;
    let mut out = Vec::with_capacity(2);
    for (domain, stream, prefix) in [(Domain::Source, 0u64, "src"), (Domain::Target, 1u64, "tgt")] {
        let mut rng = Rng::substream(config.seed, stream);
        let sets = plan_class_sets(&mut rng, &config.images_per_class);
        let mut images = Vec::with_capacity(sets.len());
        for (i, classes) in sets.iter().enumerate() {
            let (pixels, mask) = render_image(&mut rng, config, domain, classes)?;
            images.push(LabeledImage::new(
                format!("{prefix}_{i:04}"),
                pixels,
                mask,
                domain,
                config.num_classes,
            )?);
        }
        out.push(images);
    }
    let target = out.pop().unwrap();
    let source = out.pop().unwrap();
    Ok((source, target))
}

/// Pair every source image with a random target image sharing at least one
/// foreground class. Uniform among eligible targets, deterministic by seed.
pub fn assign_style_pairs(
    source: &DatasetManifest,
    target: &DatasetManifest,
    rng_seed: u64,
) -> Result<Vec<(String, String)>> {
    let mut rng = Rng::from_seed(rng_seed);
    let mut pairs = Vec::with_capacity(source.entries.len());
    for s in &source.entries {
        let eligible: Vec<&ManifestEntry> = target
            .entries
            .iter()
            .filter(|t| !t.classes_present.is_disjoint(&s.classes_present))
            .collect();
        if eligible.is_empty() {
            return Err(CoreError::Unpairable {
                source_id: s.id.clone(),
                classes: s.classes_present.iter().copied().collect(),
            });
        }
        let pick = eligible[rng.below(eligible.len())];
        pairs.push((s.id.clone(), pick.id.clone()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(style_gap: f64) -> SynthConfig {
        SynthConfig {
            seed: 7,
            images_per_class: BTreeMap::from([(1, 6), (2, 4), (3, 5)]),
            image_size: (32, 32),
            style_gap,
            num_classes: 4,
        }
    }

    fn counts_of(images: &[LabeledImage]) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for img in images {
            for &c in &img.classes_present {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn counts_match_request_exactly() {
        let cfg = small_config(0.5);
        let (source, target) = generate_synthetic_images(&cfg).unwrap();
        let want = cfg.images_per_class.clone();
        assert_eq!(counts_of(&source), want);
        assert_eq!(counts_of(&target), want);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config(0.8);
        let (s1, t1) = generate_synthetic_images(&cfg).unwrap();
        let (s2, t2) = generate_synthetic_images(&cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn zero_gap_collapses_domains() {
        let cfg = small_config(0.0);
        let (source, target) = generate_synthetic_images(&cfg).unwrap();
        // Per-class mean colors must agree across domains.
        for class in 0..cfg.num_classes {
            let mean_color = |imgs: &[LabeledImage]| -> Option<[f64; 3]> {
                let mut sum = [0.0; 3];
                let mut n = 0usize;
                for img in imgs {
                    for (p, &m) in img.mask.iter().enumerate() {
                        if m as usize == class {
                            let (y, x) = (p / img.pixels.w, p % img.pixels.w);
                            for ch in 0..3 {
                                sum[ch] += img.pixels.at(ch, y, x);
                            }
                            n += 1;
                        }
                    }
                }
                (n > 0).then(|| sum.map(|v| v / n as f64))
            };
            if let (Some(a), Some(b)) = (mean_color(&source), mean_color(&target)) {
                for ch in 0..3 {
                    assert!((a[ch] - b[ch]).abs() < 1e-6, "class {class} channel {ch}");
                }
            }
        }
    }

    #[test]
    fn masks_are_valid_and_classes_present_consistent() {
        let cfg = small_config(1.0);
        let (source, target) = generate_synthetic_images(&cfg).unwrap();
        for img in source.iter().chain(&target) {
            let mut found = BTreeSet::new();
            for &m in &img.mask {
                assert!((m as usize) < cfg.num_classes);
                if m != 0 {
                    found.insert(m as usize);
                }
            }
            assert_eq!(found, img.classes_present);
            assert!((1..=3).contains(&img.classes_present.len()));
        }
    }

    fn manifest_from_images(images: &[LabeledImage], class_names: &[&str]) -> DatasetManifest {
        let entries = images
            .iter()
            .map(|img| ManifestEntry {
                id: img.id.clone(),
                image_path: format!("images/{}.png", img.id),
                mask_path: format!("masks/{}.png", img.id),
                domain: img.domain,
                classes_present: img.classes_present.clone(),
            })
            .collect();
        DatasetManifest::from_entries(class_names.iter().map(|s| String::from(*s)).collect(), entries)
            .unwrap()
    }

    #[test]
    fn style_pairs_share_a_class_and_are_deterministic() {
        let cfg = small_config(0.6);
        let (source, target) = generate_synthetic_images(&cfg).unwrap();
        let names = ["background", "a", "b", "c"];
        let sm = manifest_from_images(&source, &names);
        let tm = manifest_from_images(&target, &names);
        let pairs = assign_style_pairs(&sm, &tm, 42).unwrap();
        assert_eq!(pairs.len(), sm.entries.len());
        for (sid, tid) in &pairs {
            let s = sm.entries.iter().find(|e| &e.id == sid).unwrap();
            let t = tm.entries.iter().find(|e| &e.id == tid).unwrap();
            assert!(!s.classes_present.is_disjoint(&t.classes_present));
        }
        assert_eq!(pairs, assign_style_pairs(&sm, &tm, 42).unwrap());
    }

    #[test]
    fn single_image_pools_pair_uniquely() {
        let mk = |id: &str, domain| ManifestEntry {
            id: String::from(id),
            image_path: format!("images/{id}.png"),
            mask_path: format!("masks/{id}.png"),
            domain,
            classes_present: BTreeSet::from([1]),
        };
        let names = vec![String::from("background"), String::from("a")];
        let sm = DatasetManifest::from_entries(names.clone(), vec![mk("s", Domain::Source)]).unwrap();
        let tm = DatasetManifest::from_entries(names, vec![mk("t", Domain::Target)]).unwrap();
        let pairs = assign_style_pairs(&sm, &tm, 0).unwrap();
        assert_eq!(pairs, vec![(String::from("s"), String::from("t"))]);
    }

    #[test]
    fn unpairable_source_reports_its_classes() {
        let mk = |id: &str, domain, classes: &[usize]| ManifestEntry {
            id: String::from(id),
            image_path: format!("images/{id}.png"),
            mask_path: format!("masks/{id}.png"),
            domain,
            classes_present: classes.iter().copied().collect(),
        };
        let names: Vec<String> =
            ["background", "a", "b"].iter().map(|s| String::from(*s)).collect();
        let sm =
            DatasetManifest::from_entries(names.clone(), vec![mk("s", Domain::Source, &[1])]).unwrap();
        let tm =
            DatasetManifest::from_entries(names, vec![mk("t", Domain::Target, &[2])]).unwrap();
        match assign_style_pairs(&sm, &tm, 0) {
            Err(CoreError::Unpairable { source_id, classes }) => {
                assert_eq!(source_id, "s");
                assert_eq!(classes, vec![1]);
            }
            other => panic!("expected Unpairable, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_config(0.5);
        cfg.image_size = (15, 32);
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(0.5);
        cfg.style_gap = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(0.5);
        cfg.images_per_class.insert(9, 3);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let e = ManifestEntry {
            id: String::from("x"),
            image_path: String::from("images/x.png"),
            mask_path: String::from("images/x.png"),
            domain: Domain::Source,
            classes_present: BTreeSet::from([1]),
        };
        let names = vec![String::from("background"), String::from("a")];
        assert!(DatasetManifest::from_entries(names, vec![e]).is_err());
    }
}
