//! Synthetic two-domain dataset generation written straight to the
//! standard dataset layout.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};

use sim2real_core::dataset::{generate_synthetic_images, SynthConfig};

use crate::manifest_io::save_dataset;

/// Default class names: background plus the three oropharyngeal organs.
pub fn default_class_names() -> Vec<String> {
    ["background", "uvula", "epiglottis", "glottis"].map(String::from).to_vec()
}

/// Generate both domains and write them under `<out>/source` and
/// `<out>/target`.
pub fn generate_to_disk(
    out: &Path,
    config: &SynthConfig,
    class_names: &[String],
) -> Result<()> {
    if class_names.len() != config.num_classes {
        bail!(
            "{} class names given for {} classes",
            class_names.len(),
            config.num_classes
        );
    }
    let (source, target) = generate_synthetic_images(config)?;
    save_dataset(&out.join("source"), class_names, &source)?;
    save_dataset(&out.join("target"), class_names, &target)?;
    Ok(())
}

/// Parse an images-per-class spec like "1=60,2=40,3=50".
pub fn parse_images_per_class(spec: &str) -> Result<BTreeMap<usize, usize>> {
    let mut map = BTreeMap::new();
    for part in spec.split(',') {
        let (class, count) = part
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("bad images-per-class entry '{part}', want class=count"))?;
        map.insert(class.trim().parse()?, count.trim().parse()?);
    }
    if map.is_empty() {
        bail!("images-per-class spec is empty");
    }
    Ok(map)
}
