//! Accuracy metrics over predicted and ground-truth profiles.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, OracleError};
use crate::geometry::{CadProfile, Category, PointFrame, PolarGridSpec, Pose};
use crate::oracle::{label_from_scene_detailed, TraversabilityRules};
use crate::sim::SceneSpec;

/// Error threshold for a direction to count as correct.
pub const ACCURACY_THRESHOLD: f64 = 0.5;
/// Distance within which a wrong prediction is attributed to a dynamic point.
pub const IHD_EPSILON: f64 = 0.3;
pub const WORST_K: [usize; 2] = [5, 20];

fn check(pred: &CadProfile, gt: &CadProfile, spec: &PolarGridSpec) -> Result<(), EvalError> {
    for (name, p) in [("prediction", pred), ("ground truth", gt)] {
        if p.len() != spec.n_phi() {
            return Err(EvalError::SpecMismatch(format!("{name} has {} directions, grid has {}", p.len(), spec.n_phi())));
        }
        if let Some(&d) = p.depth_index.iter().find(|&&d| d >= spec.n_r()) {
            return Err(EvalError::SpecMismatch(format!("{name} bin {d} exceeds n_r = {}", spec.n_r())));
        }
    }
    Ok(())
}

/// Metric error per direction.
pub fn direction_errors(pred: &CadProfile, gt: &CadProfile, spec: &PolarGridSpec) -> Result<Vec<f64>, EvalError> {
    check(pred, gt, spec)?;
    Ok(pred
        .depth_index
        .iter()
        .zip(&gt.depth_index)
        .map(|(&p, &g)| (spec.depth_of_bin(p).unwrap() - spec.depth_of_bin(g).unwrap()).abs())
        .collect())
}

pub fn mae(pred: &CadProfile, gt: &CadProfile, spec: &PolarGridSpec) -> Result<f64, EvalError> {
    let e = direction_errors(pred, gt, spec)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn accuracy_at(pred: &CadProfile, gt: &CadProfile, spec: &PolarGridSpec, threshold: f64) -> Result<f64, EvalError> {
    let e = direction_errors(pred, gt, spec)?;
    Ok(e.iter().filter(|&&x| x <= threshold).count() as f64 / e.len() as f64)
}

/// Mean of the `k` largest errors.
pub fn worst_k(errors: &[f64], k: usize) -> Result<f64, EvalError> {
    if k == 0 || errors.len() < k {
        return Err(EvalError::InsufficientData { needed: k.max(1), available: errors.len() });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IhdCount {
    pub count: usize,
    pub eligible: usize,
}

impl IhdCount {
    pub fn ratio(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.count as f64 / self.eligible as f64
        }
    }
}

/// Interference by historical dynamic points.
///
/// `frames` must already be in the current frame. A direction is eligible
/// when a historical dynamic point lies in its sector closer than the
/// ground truth; it counts when the prediction is wrong by more than the
/// accuracy threshold and lands within `epsilon` of such a point.
pub fn ihd(
    pred: &CadProfile,
    gt: &CadProfile,
    frames: &[PointFrame],
    spec: &PolarGridSpec,
    epsilon: f64,
) -> Result<IhdCount, EvalError> {
    check(pred, gt, spec)?;
    let mut ghosts: Vec<Vec<f64>> = vec![Vec::new(); spec.n_phi()];
    for frame in frames.iter().filter(|f| f.frame_index > 0) {
        let tags = frame.tags.as_ref().ok_or(EvalError::MissingTags)?;
        for (p, t) in frame.points.iter().zip(tags) {
            if t.dynamic && p.x.is_finite() && p.y.is_finite() {
                ghosts[spec.phi_bin_of(p.azimuth())].push(p.radius());
            }
        }
    }
    let mut out = IhdCount::default();
    for j in 0..spec.n_phi() {
        let gt_d = spec.depth_of_bin(gt.depth_index[j])?;
        let pred_d = spec.depth_of_bin(pred.depth_index[j])?;
        let near: Vec<f64> = ghosts[j].iter().copied().filter(|&r| r < gt_d).collect();
        if near.is_empty() {
            continue;
        }
        out.eligible += 1;
        if (pred_d - gt_d).abs() > ACCURACY_THRESHOLD && near.iter().any(|r| (pred_d - r).abs() <= epsilon) {
            out.count += 1;
        }
    }
    Ok(out)
}

/// Category of the structure that bounds each ground-truth direction.
pub fn categorize_directions(
    scene: &SceneSpec,
    ego: &Pose,
    spec: &PolarGridSpec,
    rules: &TraversabilityRules,
    time: f64,
) -> Result<Vec<Category>, OracleError> {
    Ok(label_from_scene_detailed(scene, ego, spec, rules, time)?.categories())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub directions: usize,
    pub mae: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub total: CategoryStats,
    pub thin: CategoryStats,
    pub dynamic: CategoryStats,
    pub negative: CategoryStats,
    pub others: CategoryStats,
    /// `(K, mean of the K largest errors)`; pooled over all directions.
    pub worst_k: Vec<(usize, f64)>,
    pub ihd_count: usize,
    pub ihd_eligible: usize,
    pub ihd_ratio: f64,
    pub mean_confidence: f64,
    pub accuracy_threshold: f64,
    pub ihd_epsilon: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: usize,
    err: f64,
    correct: usize,
}

impl Sums {
    fn add(&mut self, e: f64, threshold: f64) {
        self.n += 1;
        self.err += e;
        self.correct += (e <= threshold) as usize;
    }

    fn stats(&self) -> CategoryStats {
        if self.n == 0 {
            return CategoryStats::default();
        }
        CategoryStats { directions: self.n, mae: self.err / self.n as f64, accuracy: self.correct as f64 / self.n as f64 }
    }
}

/// Accumulates per-sample results into an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct Evaluator {
    spec: PolarGridSpec,
    threshold: f64,
    epsilon: f64,
    samples: usize,
    per_cat: [Sums; 4],
    uncategorized: Sums,
    errors: Vec<f64>,
    confidence_sum: f64,
    ihd: IhdCount,
}

impl Evaluator {
    pub fn new(spec: PolarGridSpec) -> Self {
        Self::with_thresholds(spec, ACCURACY_THRESHOLD, IHD_EPSILON)
    }

    pub fn with_thresholds(spec: PolarGridSpec, threshold: f64, epsilon: f64) -> Self {
        Self {
            spec,
            threshold,
            epsilon,
            samples: 0,
            per_cat: [Sums::default(); 4],
            uncategorized: Sums::default(),
            errors: Vec::new(),
            confidence_sum: 0.0,
            ihd: IhdCount::default(),
        }
    }

    /// Adds one sample. `frames` (current-frame coordinates, with tags)
    /// enable the IHD count.
    pub fn add(
        &mut self,
        pred: &CadProfile,
        gt: &CadProfile,
        categories: Option<&[Category]>,
        frames: Option<&[PointFrame]>,
    ) -> Result<(), EvalError> {
        let errs = direction_errors(pred, gt, &self.spec)?;
        if let Some(c) = categories {
            if c.len() != errs.len() {
                return Err(EvalError::SpecMismatch(format!("{} categories for {} directions", c.len(), errs.len())));
            }
        }
        if let Some(frames) = frames {
            let c = ihd(pred, gt, frames, &self.spec, self.epsilon)?;
            self.ihd.count += c.count;
            self.ihd.eligible += c.eligible;
        }
        for (j, &e) in errs.iter().enumerate() {
            match categories {
                Some(c) => self.per_cat[Category::ALL.iter().position(|k| *k == c[j]).unwrap()].add(e, self.threshold),
                None => self.uncategorized.add(e, self.threshold),
            }
        }
        self.errors.extend_from_slice(&errs);
        self.confidence_sum += pred.confidence.iter().sum::<f64>() / pred.len() as f64;
        self.samples += 1;
        Ok(())
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn finish(&self) -> EvalReport {
        let mut total = self.uncategorized;
        for s in &self.per_cat {
            total.n += s.n;
            total.err += s.err;
            total.correct += s.correct;
        }
        let worst = WORST_K.iter().filter_map(|&k| worst_k(&self.errors, k).ok().map(|v| (k, v))).collect();
        EvalReport {
            samples: self.samples,
            total: total.stats(),
            thin: self.per_cat[0].stats(),
            dynamic: self.per_cat[1].stats(),
            negative: self.per_cat[2].stats(),
            others: self.per_cat[3].stats(),
            worst_k: worst,
            ihd_count: self.ihd.count,
            ihd_eligible: self.ihd.eligible,
            ihd_ratio: self.ihd.ratio(),
            mean_confidence: if self.samples == 0 { 0.0 } else { self.confidence_sum / self.samples as f64 },
            accuracy_threshold: self.threshold,
            ihd_epsilon: self.epsilon,
        }
    }
}

impl EvalReport {
    /// Fixed-width table: one column per category, MAE and accuracy rows.
    pub fn to_table(&self) -> String {
        let cols = [
            ("Total", &self.total),
            ("Thin", &self.thin),
            ("Dynamic", &self.dynamic),
            ("Negative", &self.negative),
            ("Others", &self.others),
        ];
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# samples {}  accuracy threshold {} m  worst-K pooled over all directions  IHD epsilon {} m",
            self.samples, self.accuracy_threshold, self.ihd_epsilon
        );
        let _ = write!(s, "{:<14}", "");
        for (name, _) in cols {
            let _ = write!(s, "{name:>10}");
        }
        s.push('\n');
        let rows: [(&str, fn(&CategoryStats) -> String); 3] = [
            ("directions", |c| c.directions.to_string()),
            ("MAE (m)", |c| if c.directions > 0 { format!("{:.3}", c.mae) } else { "-".into() }),
            ("Acc (%)", |c| if c.directions > 0 { format!("{:.2}", 100.0 * c.accuracy) } else { "-".into() }),
        ];
        for (label, f) in rows {
            let _ = write!(s, "{label:<14}");
            for (_, c) in cols {
                let _ = write!(s, "{:>10}", f(c));
            }
            s.push('\n');
        }
        for (k, v) in &self.worst_k {
            let _ = writeln!(s, "{:<14}{v:>10.3}", format!("Worst-{k} (m)"));
        }
        let _ = writeln!(s, "{:<14}{:>10}", "IHD", format!("{}/{}", self.ihd_count, self.ihd_eligible));
        let _ = writeln!(s, "{:<14}{:>10.2}", "IHD (%)", 100.0 * self.ihd_ratio);
        let _ = writeln!(s, "{:<14}{:>10.2}", "Conf (%)", 100.0 * self.mean_confidence);
        s
    }
}
