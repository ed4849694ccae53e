use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sim2real_core::dataset::{assign_style_pairs, SynthConfig};
use sim2real_core::flow::FlowNetwork;
use sim2real_core::style::{train_style, FeatureExtractor};
use sim2real_core::Tensor;

use sim2real_tools::checkpoint::{load_flow, save_flow, write_loss_csv};
use sim2real_tools::config::{load_config, BlendMode, ExperimentConfig, StyleSection};
use sim2real_tools::manifest_io::{load_images, load_manifest, save_dataset};
use sim2real_tools::pipeline::{apply_fourier_swap, load_records, run_pipeline, write_summary};
use sim2real_tools::synth::{default_class_names, generate_to_disk, parse_images_per_class};

/// Sim-to-real segmentation experiment toolkit.
#[derive(Parser)]
#[command(name = "sim2real", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset.
    GenData(GenDataArgs),
    /// Style-transfer operations on datasets.
    #[command(subcommand)]
    Style(StyleCommand),
    /// Fourier low-frequency amplitude swap operations.
    #[command(subcommand)]
    Fda(FdaCommand),
    /// Run the configured experiment (blend mode taken from the config).
    Train(ConfigArgs),
    /// IoU-ranking blend curriculum operations.
    #[command(subcommand)]
    Irb(IrbCommand),
    /// Aggregate persisted records into summary tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory; source/ and target/ are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Appearance gap between the domains, in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    style_gap: f64,
    /// Requested image counts, e.g. "1=60,2=40,3=50".
    #[arg(long, default_value = "1=20,2=20,3=20")]
    images_per_class: String,
    /// Square image side; must be even and at least 16.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Subcommand)]
enum StyleCommand {
    /// Train the projection flow network on paired images.
    Train(StyleTrainArgs),
    /// Stylize a source dataset with a trained checkpoint.
    Apply(StyleApplyArgs),
}

#[derive(Args)]
struct StyleTrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV path for the loss history.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct StyleApplyArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output dataset root for the stylized source domain.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the style-pair assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum FdaCommand {
    /// Swap a source dataset's low-frequency amplitudes with its pairs'.
    Apply(FdaArgs),
}

#[derive(Args)]
struct FdaArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output dataset root for the swapped source domain.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    window_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum IrbCommand {
    /// Run the full curriculum (forces blend = "irb").
    Run(ConfigArgs),
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output root containing records/.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => gen_data(args),
        Command::Style(StyleCommand::Train(args)) => style_train(args),
        Command::Style(StyleCommand::Apply(args)) => style_apply(args),
        Command::Fda(FdaCommand::Apply(args)) => fda_apply(args),
        Command::Train(args) => run_experiment(load_config(&args.config)?),
        Command::Irb(IrbCommand::Run(args)) => {
            let mut config = load_config(&args.config)?;
            config.blend = BlendMode::Irb;
            run_experiment(config)
        }
        Command::Report(args) => report(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let images_per_class = parse_images_per_class(&args.images_per_class)?;
    let num_classes = 1 + images_per_class.keys().max().copied().unwrap_or(0);
    let class_names = if num_classes == 4 {
        default_class_names()
    } else {
        let mut names = vec!["background".to_string()];
        names.extend((1..num_classes).map(|c| format!("class{c}")));
        names
    };
    let config = SynthConfig {
        seed: args.seed,
        images_per_class,
        image_size: (args.size, args.size),
        style_gap: args.style_gap,
        num_classes,
    };
    generate_to_disk(&args.out, &config, &class_names)?;
    println!("wrote source/ and target/ under {}", args.out.display());
    Ok(())
}

fn load_pairs(
    source_root: &PathBuf,
    target_root: &PathBuf,
    seed: u64,
) -> Result<(
    Vec<sim2real_core::dataset::LabeledImage>,
    BTreeMap<String, sim2real_core::dataset::LabeledImage>,
    Vec<(String, String)>,
    Vec<String>,
)> {
    let source_manifest = load_manifest(source_root)?;
    let target_manifest = load_manifest(target_root)?;
    if source_manifest.class_names != target_manifest.class_names {
        bail!("source and target datasets disagree on class names");
    }
    let source = load_images(source_root, &source_manifest)?;
    let target = load_images(target_root, &target_manifest)?;
    let pairs = assign_style_pairs(&source_manifest, &target_manifest, seed)?;
    let target_map: BTreeMap<_, _> =
        target.into_iter().map(|img| (img.id.clone(), img)).collect();
    Ok((source, target_map, pairs, source_manifest.class_names))
}

fn style_train(args: StyleTrainArgs) -> Result<()> {
    let (source, target, pairs, _) = load_pairs(&args.source, &args.target, args.seed)?;
    let by_id: BTreeMap<&str, &Tensor> =
        source.iter().map(|img| (img.id.as_str(), &img.pixels)).collect();
    let tensor_pairs: Vec<(Tensor, Tensor)> = pairs
        .iter()
        .map(|(s, t)| ((*by_id[s.as_str()]).clone(), target[t].pixels.clone()))
        .collect();
    let style = StyleSection { iterations: args.iterations, ..StyleSection::default() };
    let mut net = FlowNetwork::new(style.flow_config(args.seed));
    let extractor = FeatureExtractor::seeded(style.extractor_seed);
    let history = train_style(&mut net, &tensor_pairs, &extractor, &style.to_core(args.seed))?;
    save_flow(&args.out, &net)?;
    if let Some(csv) = &args.loss_csv {
        write_loss_csv(csv, &history)?;
    }
    println!(
        "trained {} iterations, final loss {:.6}, checkpoint at {}",
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn style_apply(args: StyleApplyArgs) -> Result<()> {
    let (mut source, target, pairs, class_names) =
        load_pairs(&args.source, &args.target, args.seed)?;
    let net = load_flow(&args.checkpoint)?;
    for img in source.iter_mut() {
        let (_, tid) = pairs
            .iter()
            .find(|(s, _)| s == &img.id)
            .with_context(|| format!("no pair for {}", img.id))?;
        let out = sim2real_core::style::stylize(&net, &img.pixels, &target[tid].pixels)?;
        img.pixels = sim2real_tools::manifest_io::quantize(&out);
    }
    save_dataset(&args.out, &class_names, &source)?;
    println!("stylized dataset written to {}", args.out.display());
    Ok(())
}

fn fda_apply(args: FdaArgs) -> Result<()> {
    let (mut source, target, pairs, class_names) =
        load_pairs(&args.source, &args.target, args.seed)?;
    let mut config = stage_only_config(&args.source, &args.target, &args.out);
    config.swap.window_fraction = args.window_fraction;
    apply_fourier_swap(&mut source, &target, &pairs, &config)?;
    save_dataset(&args.out, &class_names, &source)?;
    println!("spectrum-swapped dataset written to {}", args.out.display());
    Ok(())
}

/// Minimal config used when a subcommand runs one stage outside a full
/// experiment.
fn stage_only_config(source: &PathBuf, target: &PathBuf, out: &PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: sim2real_tools::config::SCHEMA_VERSION,
        label: "stage".into(),
        source_root: source.clone(),
        target_root: target.clone(),
        output_root: out.clone(),
        use_style_transfer: false,
        use_fourier_swap: false,
        blend: BlendMode::None,
        blend_total: 10,
        repeats: 1,
        seeds: vec![0],
        irb_max_iterations: 6,
        train: Default::default(),
        swap: Default::default(),
        style: Default::default(),
    }
}

fn run_experiment(config: ExperimentConfig) -> Result<()> {
    let records = run_pipeline(&config)?;
    let rows = write_summary(&config.output_root, &records)?;
    for r in &records {
        println!(
            "seed {}: blend {} mIoU {:.3}% mAcc {:.3}%",
            r.seed,
            r.blend_label,
            100.0 * r.report.miou,
            100.0 * r.report.macc
        );
    }
    for row in rows {
        println!(
            "{}: mean mIoU {:.3}% stability {:.3} ({} repeats)",
            row.label, row.mean_miou, row.stability, row.repeats
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let records = load_records(&args.out)?;
    let rows = write_summary(&args.out, &records)?;
    for row in rows {
        println!(
            "{}: mean mIoU {:.3}% min {:.3} max {:.3} stability {:.3} stddev {:.3}",
            row.label, row.mean_miou, row.min_miou, row.max_miou, row.stability, row.stddev_miou
        );
    }
    println!("summary written to {}", args.out.join("summary.csv").display());
    Ok(())
}
