//! End-to-end experiment runner: optional style transfer, optional
//! Fourier spectrum swap, then blend-mode training repeated over seeds,
//! with records persisted as JSON and aggregated into summary tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use sim2real_core::dataset::{assign_style_pairs, DatasetManifest, LabeledImage};
use sim2real_core::fda::fourier_swap;
use sim2real_core::flow::FlowNetwork;
use sim2real_core::irb::{irb_loop, initial_blend, IrbState, DEFAULT_RATIOS};
use sim2real_core::metrics::MetricsReport;
use sim2real_core::seg::{evaluate, train, SegModel};
use sim2real_core::style::{stylize, train_style, FeatureExtractor};
use sim2real_core::Tensor;

use crate::config::{thread_limit, BlendMode, ExperimentConfig, SCHEMA_VERSION};
use crate::manifest_io::{load_images, load_manifest, quantize};

/// Names of the pipeline stages in their mandated execution order.
pub const STAGE_STYLE: &str = "style_transfer";
pub const STAGE_FDA: &str = "fourier_swap";
pub const STAGE_BLEND_TRAIN: &str = "blend_train";

/// One finished training run. Everything serialized here is a pure
/// function of the experiment config, so re-runs produce byte-identical
/// files; wall-clock stage times stay in memory only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub label: String,
    /// Blend-plan grammar label ("none", "10-r", "10-532", ...).
    pub blend_label: String,
    pub seed: u64,
    /// Stage names in the order they executed for this record.
    pub stage_log: Vec<String>,
    pub report: MetricsReport,
    pub epoch_losses: Vec<f64>,
    pub irb: Option<IrbSummary>,
    /// Milliseconds since pipeline start at which each stage finished.
    /// Not serialized: excluded so records stay reproducible.
    #[serde(skip)]
    pub stage_times_ms: Vec<(String, u128)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbSummary {
    pub iterations: usize,
    pub best: usize,
    pub round_labels: Vec<String>,
    pub round_mious: Vec<f64>,
}

fn image_map(images: Vec<LabeledImage>) -> BTreeMap<String, LabeledImage> {
    images.into_iter().map(|img| (img.id.clone(), img)).collect()
}

/// Train the flow on the paired images and rewrite every source image's
/// appearance, keeping masks untouched.
pub fn apply_style_transfer(
    source: &mut [LabeledImage],
    target: &BTreeMap<String, LabeledImage>,
    pairs: &[(String, String)],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<FlowNetwork> {
    let by_id: BTreeMap<&str, &LabeledImage> =
        source.iter().map(|img| (img.id.as_str(), img)).collect();
    let tensor_pairs: Vec<(Tensor, Tensor)> = pairs
        .iter()
        .map(|(s, t)| {
            let c = by_id.get(s.as_str()).ok_or_else(|| anyhow!("unknown source id {s}"))?;
            let st = target.get(t).ok_or_else(|| anyhow!("unknown target id {t}"))?;
            Ok((c.pixels.clone(), st.pixels.clone()))
        })
        .collect::<Result<_>>()?;
    let mut net = FlowNetwork::new(config.style.flow_config(seed));
    let extractor = FeatureExtractor::seeded(config.style.extractor_seed);
    train_style(&mut net, &tensor_pairs, &extractor, &config.style.to_core(seed))?;

    let pair_of: BTreeMap<&str, &str> =
        pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
    for img in source.iter_mut() {
        let tid = pair_of
            .get(img.id.as_str())
            .ok_or_else(|| anyhow!("source image {} has no style pair", img.id))?;
        let style = &target[*tid];
        let out = stylize(&net, &img.pixels, &style.pixels)?;
        img.pixels = quantize(&out);
    }
    Ok(net)
}

/// Replace each source image's low-frequency amplitude spectrum with its
/// paired target image's.
pub fn apply_fourier_swap(
    source: &mut [LabeledImage],
    target: &BTreeMap<String, LabeledImage>,
    pairs: &[(String, String)],
    config: &ExperimentConfig,
) -> Result<()> {
    let pair_of: BTreeMap<&str, &str> =
        pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
    let swap = config.swap.to_core();
    for img in source.iter_mut() {
        let tid = pair_of
            .get(img.id.as_str())
            .ok_or_else(|| anyhow!("source image {} has no swap pair", img.id))?;
        let style = &target[*tid];
        img.pixels = quantize(&fourier_swap(&img.pixels, &style.pixels, &swap)?);
    }
    Ok(())
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    source: &'a [LabeledImage],
    target_manifest: &'a DatasetManifest,
    target: &'a BTreeMap<String, LabeledImage>,
    num_classes: usize,
    prefix_stages: &'a [String],
    start: Instant,
}

fn train_blend(
    ctx: &RunContext,
    blended_ids: &[String],
    seed: u64,
) -> Result<(SegModel, Vec<f64>)> {
    let mut images: Vec<LabeledImage> = ctx.source.to_vec();
    for id in blended_ids {
        images.push(
            ctx.target
                .get(id)
                .ok_or_else(|| anyhow!("blended id {id} not in target dataset"))?
                .clone(),
        );
    }
    let train_cfg = ctx.config.train.to_core(ctx.num_classes, seed);
    Ok(train(&images, &train_cfg)?)
}

fn eval_on(ctx: &RunContext, model: &SegModel, ids: &[String]) -> Result<MetricsReport> {
    let eval_images: Vec<LabeledImage> = ids.iter().map(|id| ctx.target[id].clone()).collect();
    Ok(evaluate(model, &eval_images)?)
}

fn run_one(ctx: &RunContext, seed: u64) -> Result<ExperimentRecord> {
    let mut stage_log = ctx.prefix_stages.to_vec();
    stage_log.push(STAGE_BLEND_TRAIN.to_string());
    let all_target_ids: Vec<String> =
        ctx.target_manifest.entries.iter().map(|e| e.id.clone()).collect();

    let (blend_label, report, losses, irb) = match ctx.config.blend {
        BlendMode::None => {
            let (model, losses) = train_blend(ctx, &[], seed)?;
            let report = eval_on(ctx, &model, &all_target_ids)?;
            ("none".to_string(), report, losses, None)
        }
        BlendMode::Random => {
            let (plan, ids) = initial_blend(ctx.target_manifest, ctx.config.blend_total, seed)?;
            let heldout: Vec<String> =
                all_target_ids.iter().filter(|id| !ids.contains(id)).cloned().collect();
            let (model, losses) = train_blend(ctx, &ids, seed)?;
            let report = eval_on(ctx, &model, &heldout)?;
            (plan.label, report, losses, None)
        }
        BlendMode::Irb => {
            let state = run_irb(ctx, seed)?;
            let best = state.best_round();
            let summary = IrbSummary {
                iterations: state.iteration,
                best: state.best,
                round_labels: state.history.iter().map(|r| r.plan.label.clone()).collect(),
                round_mious: state.history.iter().map(|r| r.report.miou).collect(),
            };
            (best.plan.label.clone(), best.report.clone(), Vec::new(), Some(summary))
        }
    };

    let mut stage_times_ms: Vec<(String, u128)> = Vec::new();
    stage_times_ms.push((STAGE_BLEND_TRAIN.to_string(), ctx.start.elapsed().as_millis()));

    Ok(ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        label: ctx.config.label.clone(),
        blend_label,
        seed,
        stage_log,
        report,
        epoch_losses: losses,
        irb,
        stage_times_ms,
    })
}

/// Full IRB curriculum for one seed: each iteration trains a fresh model
/// on source + blended target images and evaluates on the held-out rest.
fn run_irb(ctx: &RunContext, seed: u64) -> Result<IrbState> {
    let trainer = |ids: &[String], s: u64| {
        let (model, _) = train_blend(ctx, ids, s).map_err(to_core_stage)?;
        Ok(model)
    };
    let evaluator = |model: &SegModel, heldout: &[String]| {
        eval_on(ctx, model, heldout).map_err(to_core_stage)
    };
    Ok(irb_loop(
        trainer,
        evaluator,
        ctx.target_manifest,
        ctx.config.blend_total,
        seed,
        ctx.config.irb_max_iterations,
        &DEFAULT_RATIOS,
    )?)
}

fn to_core_stage(e: anyhow::Error) -> sim2real_core::CoreError {
    sim2real_core::CoreError::StageFailed { stage: "training".into(), detail: e.to_string() }
}

/// Run the whole experiment: style transfer, then Fourier swap, then the
/// blend-mode training runs, one per listed seed.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let start = Instant::now();
    let source_manifest = load_manifest(&config.source_root)?;
    let target_manifest = load_manifest(&config.target_root)?;
    if source_manifest.class_names != target_manifest.class_names {
        bail!("source and target datasets disagree on class names");
    }
    let num_classes = source_manifest.num_classes();
    let mut source = load_images(&config.source_root, &source_manifest)?;
    let target = image_map(load_images(&config.target_root, &target_manifest)?);

    let mut prefix_stages: Vec<String> = Vec::new();
    let mut prefix_times: Vec<(String, u128)> = Vec::new();
    if config.use_style_transfer || config.use_fourier_swap {
        let pairs = assign_style_pairs(&source_manifest, &target_manifest, config.seeds[0])?;
        if config.use_style_transfer {
            apply_style_transfer(&mut source, &target, &pairs, config, config.seeds[0])
                .context("style transfer stage")?;
            prefix_stages.push(STAGE_STYLE.to_string());
            prefix_times.push((STAGE_STYLE.to_string(), start.elapsed().as_millis()));
        }
        if config.use_fourier_swap {
            apply_fourier_swap(&mut source, &target, &pairs, config)
                .context("fourier swap stage")?;
            prefix_stages.push(STAGE_FDA.to_string());
            prefix_times.push((STAGE_FDA.to_string(), start.elapsed().as_millis()));
        }
    }

    let ctx = RunContext {
        config,
        source: &source,
        target_manifest: &target_manifest,
        target: &target,
        num_classes,
        prefix_stages: &prefix_stages,
        start,
    };

    let limit = thread_limit(config.repeats);
    let mut records: Vec<Option<ExperimentRecord>> = (0..config.repeats).map(|_| None).collect();
    if limit <= 1 {
        for (i, &seed) in config.seeds.iter().enumerate() {
            records[i] = Some(
                run_one(&ctx, seed).with_context(|| format!("blend stage, seed {seed}"))?,
            );
        }
    } else {
        for chunk_start in (0..config.repeats).step_by(limit) {
            let chunk_end = (chunk_start + limit).min(config.repeats);
            let results: Vec<Result<ExperimentRecord>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (chunk_start..chunk_end)
                    .map(|i| {
                        let ctx = &ctx;
                        let seed = config.seeds[i];
                        scope.spawn(move || run_one(ctx, seed))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
            });
            for (i, res) in (chunk_start..chunk_end).zip(results) {
                let seed = config.seeds[i];
                records[i] = Some(res.with_context(|| format!("blend stage, seed {seed}"))?);
            }
        }
    }
    let mut records: Vec<ExperimentRecord> = records.into_iter().map(Option::unwrap).collect();
    for r in records.iter_mut() {
        let mut times = prefix_times.clone();
        times.extend(r.stage_times_ms.drain(..));
        r.stage_times_ms = times;
    }
    persist_records(&config.output_root, &records)?;
    Ok(records)
}

/// Write each record under `<out>/records/`, named by label, run index,
/// and seed so re-runs overwrite deterministically.
pub fn persist_records(output_root: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let dir = output_root.join("records");
    fs::create_dir_all(&dir)?;
    for (i, r) in records.iter().enumerate() {
        let path = dir.join(format!("{}_run{}_seed{}.json", r.label, i, r.seed));
        fs::write(&path, serde_json::to_string_pretty(r)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Read every record JSON under `<root>/records/`, sorted by file name.
pub fn load_records(output_root: &Path) -> Result<Vec<ExperimentRecord>> {
    let dir = output_root.join("records");
    let mut paths: Vec<_> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

/// One configuration's aggregate row. mIoU columns are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub repeats: usize,
    pub mean_miou: f64,
    pub min_miou: f64,
    pub max_miou: f64,
    /// Range (max - min) of mIoU across the repeats.
    pub stability: f64,
    pub stddev_miou: f64,
    pub mean_macc: f64,
    /// Per-class mean IoU, percentage, in class-id order.
    pub class_iou: BTreeMap<usize, f64>,
}

/// Aggregate records per configuration label. Pure function of the input.
pub fn summarize(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        bail!("no records to summarize");
    }
    let mut groups: BTreeMap<&str, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.label).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (label, group) in groups {
        let mious: Vec<f64> = group.iter().map(|r| 100.0 * r.report.miou).collect();
        let n = mious.len() as f64;
        let mean = mious.iter().sum::<f64>() / n;
        let min = mious.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = mious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let var = mious.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
        let mean_macc =
            group.iter().map(|r| 100.0 * r.report.macc).sum::<f64>() / n;
        let mut class_iou: BTreeMap<usize, f64> = BTreeMap::new();
        let mut class_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in group.iter() {
            for (&c, &iou) in &r.report.iou_per_class {
                *class_iou.entry(c).or_insert(0.0) += 100.0 * iou;
                *class_counts.entry(c).or_insert(0) += 1;
            }
        }
        for (c, v) in class_iou.iter_mut() {
            *v /= class_counts[c] as f64;
        }
        rows.push(SummaryRow {
            label: label.to_string(),
            repeats: group.len(),
            mean_miou: mean,
            min_miou: min,
            max_miou: max,
            stability: max - min,
            stddev_miou: var.sqrt(),
            mean_macc,
            class_iou,
        });
    }
    Ok(rows)
}

/// Write `<out>/summary.csv` plus `<out>/boxplot.json` (per-label mIoU
/// lists, ready for plotting).
pub fn write_summary(output_root: &Path, records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    let rows = summarize(records)?;
    fs::create_dir_all(output_root)?;
    let path = output_root.join("summary.csv");
    let mut wtr = csv::Writer::from_path(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record([
        "label",
        "repeats",
        "mean_miou",
        "min_miou",
        "max_miou",
        "stability",
        "stddev_miou",
        "mean_macc",
        "class_iou",
    ])?;
    for row in &rows {
        let class_iou = row
            .class_iou
            .iter()
            .map(|(c, v)| format!("{c}:{v:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        wtr.write_record([
            row.label.clone(),
            row.repeats.to_string(),
            format!("{:.3}", row.mean_miou),
            format!("{:.3}", row.min_miou),
            format!("{:.3}", row.max_miou),
            format!("{:.3}", row.stability),
            format!("{:.3}", row.stddev_miou),
            format!("{:.3}", row.mean_macc),
            class_iou,
        ])?;
    }
    wtr.flush()?;

    let mut boxplot: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        boxplot.entry(&r.label).or_default().push(100.0 * r.report.miou);
    }
    fs::write(output_root.join("boxplot.json"), serde_json::to_string_pretty(&boxplot)?)?;
    Ok(rows)
}
