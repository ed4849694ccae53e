//! Acceptance gate: one test per shipped guarantee, each printing a
//! pass line (visible with `cargo test -- --nocapture`).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use sim2real_core::dataset::{
    generate_synthetic_images, DatasetManifest, Domain, ManifestEntry, SynthConfig,
};
use sim2real_core::fda::{fourier_swap, SwapConfig};
use sim2real_core::flow::{transfer, AdditiveCoupling, FlowConfig, FlowNetwork};
use sim2real_core::irb::{blend_percentage, irb_loop, proportioned_blend, ClassRanking};
use sim2real_core::metrics::{ConfusionMatrix, MetricsReport};
use sim2real_core::rng::Rng;
use sim2real_core::seg::{entropy_loss, supervised_loss};
use sim2real_core::style::{content_loss, style_loss, FeatureExtractor};
use sim2real_core::Tensor;

use sim2real_tools::config::{BlendMode, ExperimentConfig, SCHEMA_VERSION};
use sim2real_tools::manifest_io::save_dataset;
use sim2real_tools::pipeline::{
    run_pipeline, ExperimentRecord, STAGE_BLEND_TRAIN, STAGE_FDA, STAGE_STYLE,
};
use sim2real_tools::synth::default_class_names;

fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = Rng::from_seed(seed);
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.uniform()).collect()).unwrap()
}

/// Criterion 1: published blend-percentage table, all 12 values to three
/// decimal places given the per-class virtual-image counts.
#[test]
fn acceptance_01_blend_percentage_table() {
    let counts = [601usize, 395, 507];
    let expected = [
        [1.637, 3.221, 4.754, 6.240],
        [2.469, 4.819, 7.059, 9.195],
        [1.934, 3.795, 5.587, 7.313],
    ];
    for (ci, &count) in counts.iter().enumerate() {
        for (bi, &blends) in [10usize, 20, 30, 40].iter().enumerate() {
            let got = blend_percentage(count, blends).unwrap();
            let rounded = (got * 1000.0).round() / 1000.0;
            assert_eq!(
                rounded, expected[ci][bi],
                "count {count}, blends {blends}: got {got}"
            );
        }
    }
    println!("ACCEPTANCE 1 (blend percentage table): pass");
}

fn target_manifest(per_class: usize) -> DatasetManifest {
    // Disjoint single-class images so per-class pools never collide.
    let mut entries = Vec::new();
    for class in 1..=3usize {
        for i in 0..per_class {
            let id = format!("tgt_c{class}_{i:03}");
            entries.push(ManifestEntry {
                id: id.clone(),
                image_path: format!("images/{id}.png"),
                mask_path: format!("masks/{id}.png"),
                domain: Domain::Target,
                classes_present: [class].into_iter().collect(),
            });
        }
    }
    DatasetManifest::from_entries(
        default_class_names(),
        entries,
    )
    .unwrap()
}

/// Criterion 2: the 5:3:2 partition, worst class first, for every total
/// in {10, 20, 30, 40}.
#[test]
fn acceptance_02_irb_partition() {
    // Ranking best-first [A=1, B=2, C=3], so C is worst.
    let ranking = ClassRanking { order: vec![1, 2, 3], ious: vec![0.9, 0.5, 0.1] };
    let target = target_manifest(25);
    for total in [10usize, 20, 30, 40] {
        let n = total / 10;
        let (plan, ids) = proportioned_blend(&ranking, total, &target, 7, &[5, 3, 2]).unwrap();
        assert_eq!(plan.per_class[&3], 5 * n, "worst class gets 5n");
        assert_eq!(plan.per_class[&2], 3 * n);
        assert_eq!(plan.per_class[&1], 2 * n);
        assert_eq!(ids.len(), total);
        assert_eq!(plan.label, format!("{total}-235"));
    }
    println!("ACCEPTANCE 2 (IRB 5:3:2 partition): pass");
}

fn stub_report(ious: [f64; 3]) -> MetricsReport {
    let iou_per_class: BTreeMap<usize, f64> =
        (1..=3).map(|c| (c, ious[c - 1])).collect();
    let miou = ious.iter().sum::<f64>() / 3.0;
    MetricsReport {
        acc_per_class: iou_per_class.clone(),
        iou_per_class,
        miou,
        macc: miou,
        pixel_count: 100,
    }
}

/// Criterion 3: termination at the first repeated ranking, within the
/// pigeonhole bound 3! + 1, with best = argmax mIoU over history.
#[test]
fn acceptance_03_irb_termination() {
    let target = target_manifest(40);
    // Rankings cycle r0, r1, r2, r0 -> must stop right at the repeat.
    let reports = [
        stub_report([0.9, 0.5, 0.1]),
        stub_report([0.1, 0.9, 0.5]),
        stub_report([0.6, 0.2, 0.95]),
        stub_report([0.95, 0.55, 0.15]), // same ranking as round 0
        stub_report([0.99, 0.99, 0.99]), // never reached
    ];
    let mut calls = 0usize;
    let state = irb_loop(
        |_, _| Ok(()),
        |_, _| {
            let r = reports[calls].clone();
            calls += 1;
            Ok(r)
        },
        &target,
        10,
        3,
        20,
        &[5, 3, 2],
    )
    .unwrap();
    assert_eq!(state.history.len(), 4, "halt at first repeated ranking");
    assert!(state.history.len() <= 7, "within 3! + 1 iterations");
    // Round 2 has the largest stub mIoU among the four executed rounds.
    assert_eq!(state.best, 2);
    let best_miou = state.best_round().report.miou;
    for r in &state.history {
        assert!(r.report.miou <= best_miou);
    }

    // Constant ranking: exactly two iterations regardless of the cap.
    let state = irb_loop(
        |_, _| Ok(()),
        |_, _| Ok(stub_report([0.7, 0.4, 0.2])),
        &target,
        10,
        3,
        50,
        &[5, 3, 2],
    )
    .unwrap();
    assert_eq!(state.history.len(), 2);
    println!("ACCEPTANCE 3 (IRB termination and best): pass");
}

/// Criterion 4: metrics equal a brute-force per-pixel enumeration,
/// exactly, on 50 random 8x8 K=4 mask pairs.
#[test]
fn acceptance_04_metrics_oracle() {
    let mut rng = Rng::from_seed(404);
    for case in 0..50 {
        let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&pred, &gt).unwrap();
        let report = cm.report().unwrap();

        // Brute-force enumeration.
        let mut ious = BTreeMap::new();
        let mut accs = BTreeMap::new();
        for class in 0..4u8 {
            let tp = pred.iter().zip(&gt).filter(|(p, g)| **p == class && **g == class).count();
            let union = pred.iter().zip(&gt).filter(|(p, g)| **p == class || **g == class).count();
            let gt_count = gt.iter().filter(|&&g| g == class).count();
            if union > 0 {
                ious.insert(class as usize, tp as f64 / union as f64);
            }
            if gt_count > 0 {
                accs.insert(class as usize, tp as f64 / gt_count as f64);
            }
        }
        let miou = ious.values().sum::<f64>() / ious.len() as f64;
        let macc = accs.values().sum::<f64>() / accs.len() as f64;
        assert_eq!(report.iou_per_class, ious, "case {case}");
        assert_eq!(report.acc_per_class, accs, "case {case}");
        assert_eq!(report.miou, miou, "case {case}");
        assert_eq!(report.macc, macc, "case {case}");
        assert_eq!(report.pixel_count, 64);
    }
    println!("ACCEPTANCE 4 (metrics oracle): pass");
}

/// Criterion 5: flow invertibility over 100 seeds and unit coupling
/// Jacobian log-determinant.
#[test]
fn acceptance_05_flow_invertibility() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut net = FlowNetwork::new(FlowConfig { seed, ..FlowConfig::default() });
        let x = random_image(1000 + seed, 3, 32, 32);
        net.initialize_actnorm(&[&x]).unwrap();
        let z = net.project(&x).unwrap();
        let back = net.revert(&z).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
    }
    assert!(worst < 1e-4, "worst roundtrip error {worst}");

    // Numerical Jacobian of an additive coupling on a 4-channel 4x4 input:
    // log|det| must vanish.
    let mut rng = Rng::from_seed(55);
    let coupling = AdditiveCoupling::new(4, 8, &mut rng);
    let x = random_image(56, 4, 4, 4);
    let n = x.len();
    let eps = 1e-5;
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut p = x.clone();
        p.data[j] += eps;
        let mut m = x.clone();
        m.data[j] -= eps;
        let fp = coupling.forward(&p);
        let fm = coupling.forward(&m);
        for i in 0..n {
            jac[i * n + j] = (fp.data[i] - fm.data[i]) / (2.0 * eps);
        }
    }
    let det = sim2real_core::linalg::det(n, &jac);
    let log_abs_det = det.abs().ln();
    assert!(log_abs_det.abs() < 1e-5, "coupling log|det| = {log_abs_det}");
    println!("ACCEPTANCE 5 (flow invertibility): pass");
}

/// Criterion 6: statistics transfer is unbiased and leaks no content.
#[test]
fn acceptance_06_unbiased_transfer() {
    let f = random_image(606, 48, 8, 8);
    let out = transfer(&f, &f).unwrap();
    assert!(out.max_abs_diff(&f) < 1e-6);

    let mut net = FlowNetwork::new(FlowConfig { seed: 66, ..FlowConfig::default() });
    let c = random_image(607, 3, 32, 32);
    net.initialize_actnorm(&[&c]).unwrap();
    let z = net.project(&c).unwrap();
    let back = net.revert(&transfer(&z, &z).unwrap()).unwrap();
    assert!(back.max_abs_diff(&c) < 1e-3, "content leak {}", back.max_abs_diff(&c));
    println!("ACCEPTANCE 6 (unbiased transfer): pass");
}

/// Criterion 7: every loss gradient matches central finite differences.
#[test]
fn acceptance_07_gradient_checks() {
    let rel = |fd: f64, g: f64| (fd - g).abs() / (1.0 + fd.abs().max(g.abs()));
    let eps = 1e-6;

    let ex = FeatureExtractor::seeded(707);
    let t = random_image(708, 3, 8, 8);
    let s = random_image(709, 3, 8, 8);
    let c = random_image(710, 3, 8, 8);
    let (_, g_style) = sim2real_core::style::style_loss_with_grad(&t, &s, &ex);
    let (_, g_content) = sim2real_core::style::content_loss_with_grad(&t, &c, &ex);
    for i in (0..t.len()).step_by(11) {
        let mut p = t.clone();
        p.data[i] += eps;
        let mut m = t.clone();
        m.data[i] -= eps;
        let fd = (style_loss(&p, &s, &ex) - style_loss(&m, &s, &ex)) / (2.0 * eps);
        assert!(rel(fd, g_style.data[i]) < 1e-4, "style grad {i}");
        let fd = (content_loss(&p, &c, &ex) - content_loss(&m, &c, &ex)) / (2.0 * eps);
        assert!(rel(fd, g_content.data[i]) < 1e-4, "content grad {i}");
    }

    let scores = random_image(711, 4, 4, 4);
    let mask: Vec<u8> = (0..16).map(|i| (i % 4) as u8).collect();
    let (_, g_sup) = supervised_loss(&scores, &mask).unwrap();
    let (_, g_ent) = entropy_loss(&scores);
    for i in 0..scores.len() {
        let mut p = scores.clone();
        p.data[i] += eps;
        let mut m = scores.clone();
        m.data[i] -= eps;
        let fd = (supervised_loss(&p, &mask).unwrap().0 - supervised_loss(&m, &mask).unwrap().0)
            / (2.0 * eps);
        assert!(rel(fd, g_sup.data[i]) < 1e-4, "supervised grad {i}");
        let fd = (entropy_loss(&p).0 - entropy_loss(&m).0) / (2.0 * eps);
        assert!(rel(fd, g_ent.data[i]) < 1e-4, "entropy grad {i}");
    }
    println!("ACCEPTANCE 7 (loss gradient checks): pass");
}

/// Direct O(N^2) DFT used as the acceptance oracle for the swap.
fn dft2_oracle(plane: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -2.0 * std::f64::consts::PI
                        * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                    re += plane[y * w + x] * ang.cos();
                    im += plane[y * w + x] * ang.sin();
                }
            }
            out[ky * w + kx] = (re, im);
        }
    }
    out
}

fn idft2_oracle(spec: &[(f64, f64)], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut re = 0.0;
            for ky in 0..h {
                for kx in 0..w {
                    let ang = 2.0 * std::f64::consts::PI
                        * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                    let (sr, si) = spec[ky * w + kx];
                    re += sr * ang.cos() - si * ang.sin();
                }
            }
            out[y * w + x] = re / (h * w) as f64;
        }
    }
    out
}

/// Swap oracle: amplitude of the target inside the centered window, phase
/// of the source everywhere.
fn swap_oracle(src: &Tensor, tgt: &Tensor, fraction: f64) -> Tensor {
    let (h, w) = (src.h, src.w);
    let side = |n: usize| -> usize {
        let s = (fraction * n as f64).floor() as usize;
        if s == 0 {
            0
        } else if s >= n {
            n
        } else if s % 2 == 0 {
            s - 1
        } else {
            s
        }
    };
    let (sh, sw) = (side(h), side(w));
    // Frequencies covered by the centered window, mapped back to
    // unshifted indices.
    let axis_window = |n: usize, s: usize| -> Vec<usize> {
        let c = n / 2;
        (0..s).map(|d| (c + d - (s - 1) / 2 + n - c) % n).collect()
    };
    let (ys, xs) = (axis_window(h, sh), axis_window(w, sw));
    let in_window =
        |ky: usize, kx: usize| -> bool { ys.contains(&ky) && xs.contains(&kx) };
    let mut out = Tensor::zeros(src.c, h, w);
    for c in 0..src.c {
        let fs = dft2_oracle(src.channel(c), h, w);
        let ft = dft2_oracle(tgt.channel(c), h, w);
        let mut merged = fs.clone();
        for ky in 0..h {
            for kx in 0..w {
                if in_window(ky, kx) {
                    let (sr, si) = fs[ky * w + kx];
                    let amp_s = (sr * sr + si * si).sqrt();
                    let (tr, ti) = ft[ky * w + kx];
                    let amp_t = (tr * tr + ti * ti).sqrt();
                    merged[ky * w + kx] = if amp_s > 0.0 {
                        (sr / amp_s * amp_t, si / amp_s * amp_t)
                    } else {
                        (amp_t, 0.0)
                    };
                }
            }
        }
        let plane = idft2_oracle(&merged, h, w);
        for (o, v) in out.channel_mut(c).iter_mut().zip(&plane) {
            *o = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Criterion 8: Fourier swap identities and oracle agreement.
#[test]
fn acceptance_08_fourier_swap() {
    let src = random_image(808, 3, 4, 4);
    let tgt = random_image(809, 3, 4, 4);

    let out = fourier_swap(&src, &tgt, &SwapConfig { window_fraction: 0.0 }).unwrap();
    assert!(out.max_abs_diff(&src) < 1e-5, "f=0 identity");

    let out = fourier_swap(&src, &src, &SwapConfig { window_fraction: 0.6 }).unwrap();
    assert!(out.max_abs_diff(&src) < 1e-5, "self-swap identity");

    for fraction in [0.3, 0.6, 1.0] {
        let got = fourier_swap(&src, &tgt, &SwapConfig { window_fraction: fraction }).unwrap();
        let want = swap_oracle(&src, &tgt, fraction);
        assert!(
            got.max_abs_diff(&want) < 1e-6,
            "oracle mismatch at fraction {fraction}: {}",
            got.max_abs_diff(&want)
        );
    }
    println!("ACCEPTANCE 8 (Fourier swap invariants): pass");
}

fn trend_config(
    label: &str,
    data: &Path,
    out: &Path,
    blend: BlendMode,
    seeds: Vec<u64>,
    epochs: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        label: label.to_string(),
        source_root: data.join("source"),
        target_root: data.join("target"),
        output_root: out.to_path_buf(),
        use_style_transfer: false,
        use_fourier_swap: false,
        blend,
        blend_total: 10,
        repeats: seeds.len(),
        seeds,
        irb_max_iterations: 3,
        train: sim2real_tools::config::TrainSection {
            epochs,
            ..Default::default()
        },
        swap: Default::default(),
        style: Default::default(),
    }
}

fn mean_miou_percent(records: &[ExperimentRecord]) -> f64 {
    100.0 * records.iter().map(|r| r.report.miou).sum::<f64>() / records.len() as f64
}

/// Criterion 9: the blending trend on desk-scale synthetic data. Three
/// seeds per arm, 128x128, style gap 0.9; mean mIoU must rise by more
/// than 10 points from no blending to a random 10-image blend, and the
/// converged IRB plan must not fall below the random blend.
#[test]
fn acceptance_09_blend_trend() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SynthConfig {
        seed: 42,
        images_per_class: BTreeMap::from([(1, 11), (2, 11), (3, 11)]),
        image_size: (128, 128),
        style_gap: 0.9,
        num_classes: 4,
    };
    let (source, target) = generate_synthetic_images(&synth).unwrap();
    let names = default_class_names();
    save_dataset(&data.join("source"), &names, &source).unwrap();
    save_dataset(&data.join("target"), &names, &target).unwrap();

    let seeds = vec![101u64, 102, 103];
    let epochs = 10;
    let none = run_pipeline(&trend_config(
        "none",
        &data,
        &dir.path().join("out_none"),
        BlendMode::None,
        seeds.clone(),
        epochs,
    ))
    .unwrap();
    let random = run_pipeline(&trend_config(
        "random",
        &data,
        &dir.path().join("out_random"),
        BlendMode::Random,
        seeds.clone(),
        epochs,
    ))
    .unwrap();
    let irb = run_pipeline(&trend_config(
        "irb",
        &data,
        &dir.path().join("out_irb"),
        BlendMode::Irb,
        seeds,
        epochs,
    ))
    .unwrap();

    let m_none = mean_miou_percent(&none);
    let m_random = mean_miou_percent(&random);
    let m_irb = mean_miou_percent(&irb);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    println!(
        "trend: none {m_none:.2}% random {m_random:.2}% irb {m_irb:.2}% ({minutes:.1} min)"
    );
    assert!(
        m_none + 10.0 <= m_random,
        "random blend must beat no blend by 10 points: {m_none:.2} vs {m_random:.2}"
    );
    assert!(
        m_irb >= m_random,
        "IRB best must not fall below random blend: {m_irb:.2} vs {m_random:.2}"
    );
    assert!(minutes < 30.0, "trend experiment took {minutes:.1} min");
    println!("ACCEPTANCE 9 (desk-scale blend trend): pass");
}

fn full_stage_config(data: &Path, out: &Path) -> ExperimentConfig {
    let mut config = trend_config("stages", data, out, BlendMode::Random, vec![5], 1);
    config.use_style_transfer = true;
    config.use_fourier_swap = true;
    config.style.iterations = 3;
    config
}

fn make_tiny_dataset(data: &Path) {
    let synth = SynthConfig {
        seed: 9,
        images_per_class: BTreeMap::from([(1, 7), (2, 7), (3, 7)]),
        image_size: (32, 32),
        style_gap: 0.8,
        num_classes: 4,
    };
    let (source, target) = generate_synthetic_images(&synth).unwrap();
    let names = default_class_names();
    save_dataset(&data.join("source"), &names, &source).unwrap();
    save_dataset(&data.join("target"), &names, &target).unwrap();
}

/// Criterion 10: with every stage enabled, style transfer executes before
/// the Fourier swap, which executes before blend training.
#[test]
fn acceptance_10_stage_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_tiny_dataset(&data);
    let records = run_pipeline(&full_stage_config(&data, &dir.path().join("out"))).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.stage_log, vec![STAGE_STYLE, STAGE_FDA, STAGE_BLEND_TRAIN]);
    // Wall-clock stage completions are monotone in the same order.
    let times = &r.stage_times_ms;
    assert_eq!(times.len(), 3);
    assert_eq!(times[0].0, STAGE_STYLE);
    assert_eq!(times[1].0, STAGE_FDA);
    assert_eq!(times[2].0, STAGE_BLEND_TRAIN);
    assert!(times[0].1 <= times[1].1 && times[1].1 <= times[2].1);
    println!("ACCEPTANCE 10 (stage order): pass");
}

/// Criterion 11: identical config and seeds produce byte-identical
/// record files.
#[test]
fn acceptance_11_byte_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_tiny_dataset(&data);
    let out = dir.path().join("out");
    let config = full_stage_config(&data, &out);

    let read_records = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(root.join("records"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect()
    };

    run_pipeline(&config).unwrap();
    let first = read_records(&out);
    std::fs::remove_dir_all(out.join("records")).unwrap();
    run_pipeline(&config).unwrap();
    let second = read_records(&out);
    assert!(!first.is_empty());
    assert_eq!(first, second, "records must be byte-identical across re-runs");
    println!("ACCEPTANCE 11 (record determinism): pass");
}
