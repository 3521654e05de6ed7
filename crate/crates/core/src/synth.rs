//! Labeled synthetic samples: a random scene, a rendered frame sequence and
//! its analytic label.

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::error::{OracleError, SynthError};
use crate::io::{write_label, write_scene, Dataset, DatasetManifest, LabelFile, SampleRecord, Split};
use crate::geometry::{transform_to_current, PointFrame, PolarGridSpec, Pose};
use crate::oracle::{aggregate_viewpoints, label_from_scene_detailed, SceneLabel, TraversabilityRules};
use crate::sim::{generate_sequence, mix_seed, sample_random_scene, DifficultyProfile, LidarModel, SceneSpec, SequenceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub profile: DifficultyProfile,
    pub lidar: LidarModel,
    pub grid: PolarGridSpec,
    pub rules: TraversabilityRules,
    /// Historical frames per sample.
    pub f: usize,
    /// Seconds between frames.
    pub period: f64,
    /// Extra viewpoints (ego horizontal frame) whose scans are merged into
    /// the current frame; empty keeps the single sensor.
    #[serde(default)]
    pub viewpoints: Vec<[f64; 2]>,
}

impl SynthConfig {
    /// Desk grid and sensor, two historical frames 0.2 s apart.
    pub fn desk(profile: DifficultyProfile) -> Self {
        Self {
            profile,
            lidar: LidarModel::desk(),
            grid: PolarGridSpec::desk(),
            rules: TraversabilityRules::default(),
            f: 2,
            period: 0.2,
            viewpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub scene: SceneSpec,
    pub sequence: SequenceSpec,
    /// Current frame first, with world poses and per-point tags.
    pub frames: Vec<PointFrame>,
    /// World base pose of the current frame.
    pub ego: Pose,
    pub label: SceneLabel,
}

impl SynthSample {
    /// Frames re-expressed in the current vehicle frame.
    pub fn aligned(&self) -> Vec<PointFrame> {
        self.frames.iter().map(|fr| transform_to_current(fr, &self.ego)).collect()
    }
}

/// Concatenates frames that share a coordinate frame into one current frame.
fn merge_frames(frames: &[PointFrame], pose: Pose) -> PointFrame {
    let points = frames.iter().flat_map(|f| f.points.iter().copied()).collect();
    if frames.iter().all(|f| f.tags.is_some()) {
        let tags = frames.iter().flat_map(|f| f.tags.iter().flatten().copied()).collect();
        PointFrame::with_tags(points, pose, 0, tags).expect("one tag per point")
    } else {
        PointFrame::new(points, pose, 0)
    }
}

/// Builds sample `index` of the stream `seed`; identical arguments give
/// identical samples.
pub fn synth_sample(seed: u64, index: u64, cfg: &SynthConfig) -> Result<SynthSample, OracleError> {
    let scene_seed = mix_seed(seed, 2 * index);
    let scene = sample_random_scene(scene_seed, &cfg.profile)?;
    let sequence = cfg.profile.ego_sequence(cfg.f, cfg.period);
    let mut frames = generate_sequence(&scene, &sequence, &cfg.lidar, mix_seed(seed, 2 * index + 1))?;
    let ego = frames[0].pose;
    if !cfg.viewpoints.is_empty() {
        let views = aggregate_viewpoints(&scene, &ego, &cfg.lidar, &cfg.viewpoints, sequence.t0, mix_seed(seed, 2 * index + 1))?;
        frames[0] = merge_frames(&views, ego);
    }
    let label = label_from_scene_detailed(&scene, &ego, &cfg.grid, &cfg.rules, sequence.t0)?;
    Ok(SynthSample { scene, sequence, frames, ego, label })
}

/// Writes `n` samples of stream `seed` as a dataset under `root`.
///
/// Every record keeps its scene file; `with_labels` also writes the analytic
/// label with per-direction categories. All records start in the validation
/// split.
pub fn write_synth_dataset(
    root: &Path,
    n: usize,
    seed: u64,
    cfg: &SynthConfig,
    with_labels: bool,
) -> Result<Dataset, SynthError> {
    let mut ds = Dataset { root: root.to_path_buf(), manifest: DatasetManifest::new(cfg.grid, cfg.f) };
    for i in 0..n {
        let s = synth_sample(seed, i as u64, cfg)?;
        let id = format!("s{i:05}");
        let frames = ds.write_frames(&id, &s.frames)?;
        let scene = Dataset::scene_path(&id);
        write_scene(root.join(&scene), &s.scene)?;
        let label = if with_labels {
            let rel = Dataset::label_path(&id);
            let file = LabelFile { profile: s.label.profile.clone(), categories: Some(s.label.categories()) };
            write_label(root.join(&rel), &file, &cfg.grid)?;
            Some(rel)
        } else {
            None
        };
        ds.manifest.records.push(SampleRecord {
            id,
            frames,
            poses: s.frames.iter().map(|f| f.pose).collect(),
            label,
            split: Split::Validation,
            scene: Some(scene),
            time: Some(s.sequence.t0),
        });
    }
    ds.save_manifest()?;
    Ok(ds)
}
