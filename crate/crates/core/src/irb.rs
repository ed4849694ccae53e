//! IoU-ranking blend curriculum.
//!
//! The curriculum injects a small batch of labeled target-domain images
//! into the source training set. After each training round the foreground
//! classes are ranked by test IoU and the blended batch is re-partitioned
//! worst-first (default ratio 5:3:2), iterating until a ranking repeats.
//! The best-mIoU round wins.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{CoreError, Result};
use crate::metrics::MetricsReport;
use crate::rng::Rng;

pub const DEFAULT_RATIOS: [usize; 3] = [5, 3, 2];

/// Foreground classes sorted by test IoU, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRanking {
    pub order: Vec<usize>,
    pub ious: Vec<f64>,
}

/// Per-class allocation of blended target images for one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendPlan {
    pub total: usize,
    pub per_class: BTreeMap<usize, usize>,
    /// `None` for the random initial blend.
    pub ranking_used: Option<ClassRanking>,
    /// "<total>-r" for random, "<total>-<share digits in class-id order>"
    /// for proportioned plans (e.g. shares {1:2, 2:3, 3:5} -> "40-235").
    pub label: String,
}

impl BlendPlan {
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 || self.total % 10 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "blend total must be a positive multiple of 10, got {}",
                self.total
            )));
        }
        let sum: usize = self.per_class.values().sum();
        if sum != self.total {
            return Err(CoreError::InvalidConfig(format!(
                "per-class counts sum to {sum}, expected {}",
                self.total
            )));
        }
        if self.ranking_used.is_some() {
            let n = self.total / 10;
            if let Some(&min) = self.per_class.values().min() {
                if min < 2 * n {
                    return Err(CoreError::InvalidConfig(format!(
                        "smallest proportioned share {min} below minimum {}",
                        2 * n
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_total(total: usize) -> Result<()> {
    if total == 0 || total % 10 != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "blend total must be a positive multiple of 10, got {total}"
        )));
    }
    Ok(())
}

/// Percentage of blended images in a class subset after mixing `blends`
/// target images into a class with `class_count` source images.
pub fn blend_percentage(class_count: usize, blends: usize) -> Result<f64> {
    if class_count == 0 {
        return Err(CoreError::InvalidConfig("class_count must be > 0".to_string()));
    }
    Ok(100.0 * blends as f64 / (class_count + blends) as f64)
}

/// Draw `total` target images uniformly without replacement.
/// `per_class` is descriptive: each drawn image is tallied under its
/// lowest-id foreground class.
pub fn initial_blend(
    target: &DatasetManifest,
    total: usize,
    rng_seed: u64,
) -> Result<(BlendPlan, Vec<String>)> {
    check_total(total)?;
    if target.len() < total {
        return Err(CoreError::InsufficientPool(format!(
            "need {total} target images, pool has {}",
            target.len()
        )));
    }
    let mut rng = Rng::from_seed(rng_seed);
    let idx = rng.sample_indices(target.len(), total);
    let mut ids = Vec::with_capacity(total);
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for i in idx {
        let e = &target.entries[i];
        ids.push(e.id.clone());
        if let Some(&c) = e.classes_present.iter().next() {
            *per_class.entry(c).or_insert(0) += 1;
        }
    }
    let plan = BlendPlan {
        total,
        per_class,
        ranking_used: None,
        label: format!("{total}-r"),
    };
    Ok((plan, ids))
}

/// Sort foreground classes by IoU descending; ties broken by ascending id.
pub fn rank_classes(report: &MetricsReport, foreground_classes: &[usize]) -> Result<ClassRanking> {
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(foreground_classes.len());
    for &c in foreground_classes {
        let iou = report.iou_per_class.get(&c).copied().ok_or_else(|| {
            CoreError::InvalidConfig(format!("report has no IoU for class {c}"))
        })?;
        pairs.push((c, iou));
    }
    pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ClassRanking {
        order: pairs.iter().map(|p| p.0).collect(),
        ious: pairs.iter().map(|p| p.1).collect(),
    })
}

fn validate_ratios(ratios: &[usize], num_foreground: usize) -> Result<()> {
    if ratios.len() != num_foreground {
        return Err(CoreError::InvalidConfig(format!(
            "{} ratios given for {num_foreground} foreground classes",
            ratios.len()
        )));
    }
    let sum: usize = ratios.iter().sum();
    if sum != 10 {
        return Err(CoreError::InvalidConfig(format!("ratios must sum to 10, got {sum}")));
    }
    let min = *ratios.iter().min().unwrap();
    if min == 0 || min % 2 != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "smallest ratio share must be a positive multiple of 2, got {min}"
        )));
    }
    Ok(())
}

/// Re-partition the blend worst-first: `ratios[0]`/10 of the images go to
/// the worst-ranked class, `ratios[1]`/10 to the next, and so on. Images
/// are drawn uniformly among target images containing the class; an image
/// counts only toward the class it was drawn for.
pub fn proportioned_blend(
    ranking: &ClassRanking,
    total: usize,
    target: &DatasetManifest,
    rng_seed: u64,
    ratios: &[usize],
) -> Result<(BlendPlan, Vec<String>)> {
    check_total(total)?;
    validate_ratios(ratios, ranking.order.len())?;
    let n = total / 10;

    let mut rng = Rng::from_seed(rng_seed);
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let mut ids = Vec::with_capacity(total);
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    // Worst-ranked class first: reverse of the descending IoU order.
    for (i, &class) in ranking.order.iter().rev().enumerate() {
        let want = ratios[i] * n;
        let pool: Vec<usize> = target
            .entries
            .iter()
            .enumerate()
            .filter(|(idx, e)| e.classes_present.contains(&class) && !chosen.contains(idx))
            .map(|(idx, _)| idx)
            .collect();
        if pool.len() < want {
            return Err(CoreError::InsufficientPool(format!(
                "class {class}: need {want} images, only {} available",
                pool.len()
            )));
        }
        for pick in rng.sample_indices(pool.len(), want) {
            let idx = pool[pick];
            chosen.insert(idx);
            ids.push(target.entries[idx].id.clone());
        }
        per_class.insert(class, want);
    }

    // Label digits: each class's share in ascending class-id order.
    let mut label = format!("{total}-");
    for (_, &count) in &per_class {
        label.push_str(&(count / n).to_string());
    }
    let plan = BlendPlan {
        total,
        per_class,
        ranking_used: Some(ranking.clone()),
        label,
    };
    plan.validate()?;
    Ok((plan, ids))
}

/// One completed round of the curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbRound {
    pub plan: BlendPlan,
    pub blended_ids: Vec<String>,
    pub report: MetricsReport,
    pub ranking: ClassRanking,
    pub seed: u64,
}

/// Loop state: full history plus the set of rankings already seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbState {
    pub iteration: usize,
    pub history: Vec<IrbRound>,
    pub seen_rankings: BTreeSet<Vec<usize>>,
    /// Index into `history` with maximal mIoU.
    pub best: usize,
}

impl IrbState {
    pub fn best_round(&self) -> &IrbRound {
        &self.history[self.best]
    }
}

/// Run the full curriculum. `trainer(blended_ids, seed)` must build a model
/// from a fresh parameter initialization; `evaluator(model, heldout_ids)`
/// scores it on the target images not blended into training. Stops at the
/// first repeated ranking or after `max_iterations` rounds.
pub fn irb_loop<M>(
    mut trainer: impl FnMut(&[String], u64) -> Result<M>,
    mut evaluator: impl FnMut(&M, &[String]) -> Result<MetricsReport>,
    target: &DatasetManifest,
    total: usize,
    base_seed: u64,
    max_iterations: usize,
    ratios: &[usize],
) -> Result<IrbState> {
    check_total(total)?;
    if max_iterations == 0 {
        return Err(CoreError::InvalidConfig("max_iterations must be >= 1".to_string()));
    }
    let foreground = target.foreground_classes();
    validate_ratios(ratios, foreground.len())?;

    let mut state = IrbState {
        iteration: 0,
        history: Vec::new(),
        seen_rankings: BTreeSet::new(),
        best: 0,
    };

    for iteration in 0..max_iterations {
        let seed = base_seed.wrapping_add(iteration as u64);
        let (plan, blended_ids) = if iteration == 0 {
            initial_blend(target, total, seed)?
        } else {
            let prev = &state.history[iteration - 1].ranking;
            proportioned_blend(prev, total, target, seed, ratios)?
        };

        let blended: BTreeSet<&String> = blended_ids.iter().collect();
        let heldout: Vec<String> = target
            .entries
            .iter()
            .filter(|e| !blended.contains(&e.id))
            .map(|e| e.id.clone())
            .collect();

        let stage = |what: &str, e: CoreError| CoreError::StageFailed {
            stage: format!("iteration {iteration} {what}"),
            detail: e.to_string(),
        };
        let model = trainer(&blended_ids, seed).map_err(|e| stage("trainer", e))?;
        let report = evaluator(&model, &heldout).map_err(|e| stage("evaluator", e))?;
        let ranking = rank_classes(&report, &foreground)?;

        if report.miou > state.history.get(state.best).map_or(f64::NEG_INFINITY, |r| r.report.miou) {
            state.best = iteration;
        }
        let repeat = state.seen_rankings.contains(&ranking.order);
        state.seen_rankings.insert(ranking.order.clone());
        state.history.push(IrbRound { plan, blended_ids, report, ranking, seed });
        state.iteration = iteration + 1;
        if iteration > 0 && repeat {
            break;
        }
    }
    Ok(state)
}
