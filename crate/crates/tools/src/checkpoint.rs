//! Versioned single-file checkpoints (JSON) and loss-history CSVs.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sim2real_core::flow::FlowNetwork;
use sim2real_core::seg::{SegModel, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FlowCheckpoint {
    version: u32,
    kind: String,
    net: FlowNetwork,
}

#[derive(Serialize, Deserialize)]
struct SegCheckpoint {
    version: u32,
    kind: String,
    config: TrainConfig,
    model: SegModel,
}

fn check_header(path: &Path, version: u32, kind: &str, want_kind: &str) -> Result<()> {
    if version != CHECKPOINT_VERSION {
        bail!("{}: unsupported checkpoint version {version}", path.display());
    }
    if kind != want_kind {
        bail!("{}: expected a {want_kind} checkpoint, found '{kind}'", path.display());
    }
    Ok(())
}

pub fn save_flow(path: &Path, net: &FlowNetwork) -> Result<()> {
    let cp = FlowCheckpoint { version: CHECKPOINT_VERSION, kind: "flow".into(), net: net.clone() };
    fs::write(path, serde_json::to_string(&cp)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<FlowNetwork> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cp: FlowCheckpoint = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    check_header(path, cp.version, &cp.kind, "flow")?;
    Ok(cp.net)
}

pub fn save_seg(path: &Path, model: &SegModel, config: &TrainConfig) -> Result<()> {
    let cp = SegCheckpoint {
        version: CHECKPOINT_VERSION,
        kind: "seg".into(),
        config: config.clone(),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&cp)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_seg(path: &Path) -> Result<(SegModel, TrainConfig)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cp: SegCheckpoint = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    check_header(path, cp.version, &cp.kind, "seg")?;
    Ok((cp.model, cp.config))
}

/// Write a loss history as a two-column CSV (step, loss).
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        wtr.write_record([i.to_string(), format!("{l}")])?;
    }
    wtr.flush()?;
    Ok(())
}
