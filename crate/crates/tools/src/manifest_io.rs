//! On-disk dataset layout: `<root>/{images,masks}/<id>.png` plus
//! `<root>/manifest.json`. Images are 8-bit RGB, masks single-channel
//! 8-bit class indices.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{GrayImage, RgbImage};

use sim2real_core::dataset::{DatasetManifest, LabeledImage, ManifestEntry};
use sim2real_core::Tensor;

/// Write a set of labeled images as a dataset directory and return the
/// manifest that was saved alongside them.
pub fn save_dataset(
    root: &Path,
    class_names: &[String],
    images: &[LabeledImage],
) -> Result<DatasetManifest> {
    if images.is_empty() {
        bail!("refusing to save an empty dataset to {}", root.display());
    }
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let image_rel = format!("images/{}.png", img.id);
        let mask_rel = format!("masks/{}.png", img.id);
        save_rgb(&root.join(&image_rel), &img.pixels)
            .with_context(|| format!("writing {image_rel}"))?;
        save_mask(&root.join(&mask_rel), &img.mask, img.pixels.h, img.pixels.w)
            .with_context(|| format!("writing {mask_rel}"))?;
        entries.push(ManifestEntry {
            id: img.id.clone(),
            image_path: image_rel,
            mask_path: mask_rel,
            domain: img.domain,
            classes_present: img.classes_present.clone(),
        });
    }
    let manifest = DatasetManifest::from_entries(class_names.to_vec(), entries)?;
    save_manifest(root, &manifest)?;
    Ok(manifest)
}

pub fn save_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(root)?;
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(root.join("manifest.json"), json)?;
    Ok(())
}

/// Load and validate `<root>/manifest.json`.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Load one entry's pixels and mask, re-validating every invariant.
pub fn load_entry(root: &Path, entry: &ManifestEntry, num_classes: usize) -> Result<LabeledImage> {
    let img_path = root.join(&entry.image_path);
    let rgb = image::open(&img_path)
        .with_context(|| format!("reading {}", img_path.display()))?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Tensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                pixels.data[c * h * w + y * w + x] = p.0[c] as f64 / 255.0;
            }
        }
    }
    let mask_path = root.join(&entry.mask_path);
    let gray = image::open(&mask_path)
        .with_context(|| format!("reading {}", mask_path.display()))?
        .to_luma8();
    if (gray.width() as usize, gray.height() as usize) != (w, h) {
        bail!(
            "{}: mask size {}x{} does not match image {}x{}",
            mask_path.display(),
            gray.width(),
            gray.height(),
            w,
            h
        );
    }
    let mask: Vec<u8> = gray.into_raw();
    if let Some(&bad) = mask.iter().find(|&&v| v as usize >= num_classes) {
        bail!(
            "{}: mask contains class id {bad}, but the dataset has {num_classes} classes",
            mask_path.display()
        );
    }
    let labeled = LabeledImage::new(entry.id.clone(), pixels, mask, entry.domain, num_classes)?;
    if labeled.classes_present != entry.classes_present {
        bail!(
            "{}: classes in mask {:?} disagree with manifest {:?}",
            mask_path.display(),
            labeled.classes_present,
            entry.classes_present
        );
    }
    Ok(labeled)
}

/// Load every image of a dataset in manifest order.
pub fn load_images(root: &Path, manifest: &DatasetManifest) -> Result<Vec<LabeledImage>> {
    if manifest.is_empty() {
        bail!("manifest at {} has no entries", root.display());
    }
    manifest
        .entries
        .iter()
        .map(|e| load_entry(root, e, manifest.num_classes()))
        .collect()
}

fn save_rgb(path: &Path, pixels: &Tensor) -> Result<()> {
    let (h, w) = (pixels.h, pixels.w);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = pixels.data[c * h * w + y * w + x].clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

fn save_mask(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, mask.to_vec())
        .with_context(|| format!("mask buffer size mismatch for {}", path.display()))?;
    img.save(path)?;
    Ok(())
}

/// Quantize pixels to the 8-bit grid used on disk, so an in-memory image
/// compares equal to its saved-and-reloaded self.
pub fn quantize(pixels: &Tensor) -> Tensor {
    pixels.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}
