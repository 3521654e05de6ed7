//! Point-cloud, pose, label and manifest files.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.jsonl          header line, then one record per line
//! frames/<id>_<k>.bin     KITTI layout, k = 0 is the current frame
//! frames/<id>_<k>.tags    optional per-point (u32 object id, u8 dynamic)
//! labels/<id>.json        header line, then the profile line
//! scenes/<id>.json        optional generating scene
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::sim::SceneSpec;
use crate::geometry::{CadProfile, Category, Point3, PointFrame, PointTag, PolarGridSpec, Pose, ROTATION_TOL};

const MANIFEST_KIND: &str = "cad-manifest";
const LABEL_KIND: &str = "cad-label";
const SCENE_KIND: &str = "cad-scene";
const FORMAT_VERSION: u32 = 1;

/// Rotations further than this from orthonormal are rejected on read.
pub const POSE_REPAIR_TOL: f64 = 1e-6;

fn read_bytes(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|e| DatasetError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| DatasetError::malformed(path, "not valid UTF-8"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    f.write_all(bytes).map_err(|e| DatasetError::io(path, e))
}

// ---------------------------------------------------------------- KITTI bin

/// Decodes little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn decode_kitti_bin(bytes: &[u8], path: &Path) -> Result<Vec<Point3>, DatasetError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(DatasetError::malformed(path, format!("length {} is not a multiple of 16", bytes.len())));
    }
    bytes
        .chunks_exact(16)
        .enumerate()
        .map(|(i, c)| {
            let f = |k: usize| f32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]]);
            let p = Point3::new(f(0) as f64, f(1) as f64, f(2) as f64, f(3) as f64);
            // intensity is passed through unnormalized
            if [p.x, p.y, p.z, p.intensity].iter().all(|v| v.is_finite()) {
                Ok(p)
            } else {
                Err(DatasetError::malformed(path, format!("non-finite value in point {i}")))
            }
        })
        .collect()
}

pub fn encode_kitti_bin(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a KITTI `.bin` scan as a frame with identity pose and index 0.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointFrame, DatasetError> {
    let path = path.as_ref();
    let points = decode_kitti_bin(&read_bytes(path)?, path)?;
    Ok(PointFrame::new(points, Pose::identity(), 0))
}

/// Writes points in KITTI layout; coordinates are narrowed to `f32`.
pub fn write_kitti_bin(path: impl AsRef<Path>, points: &[Point3]) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), &encode_kitti_bin(points))
}

// ---------------------------------------------------------------- tags

pub fn decode_tags(bytes: &[u8], path: &Path) -> Result<Vec<PointTag>, DatasetError> {
    if !bytes.len().is_multiple_of(5) {
        return Err(DatasetError::malformed(path, format!("length {} is not a multiple of 5", bytes.len())));
    }
    bytes
        .chunks_exact(5)
        .map(|c| match c[4] {
            0 | 1 => Ok(PointTag { object_id: u32::from_le_bytes([c[0], c[1], c[2], c[3]]), dynamic: c[4] == 1 }),
            v => Err(DatasetError::malformed(path, format!("dynamic flag {v} is not 0 or 1"))),
        })
        .collect()
}

pub fn encode_tags(tags: &[PointTag]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tags.len() * 5);
    for t in tags {
        out.extend_from_slice(&t.object_id.to_le_bytes());
        out.push(t.dynamic as u8);
    }
    out
}

pub fn read_tags(path: impl AsRef<Path>) -> Result<Vec<PointTag>, DatasetError> {
    let path = path.as_ref();
    decode_tags(&read_bytes(path)?, path)
}

pub fn write_tags(path: impl AsRef<Path>, tags: &[PointTag]) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), &encode_tags(tags))
}

// ---------------------------------------------------------------- poses

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Builds a pose from a row-major `[R | t]`, projecting nearly orthonormal
/// rotations onto SO(3). Exactly valid rotations are kept bit-for-bit.
fn pose_from_row_major(v: &[f64; 12]) -> Result<Pose, Option<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(None);
    }
    if let Ok(p) = Pose::from_row_major_3x4(v) {
        return Ok(p);
    }
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let dev = orthonormality_error(&r);
    if dev > POSE_REPAIR_TOL || r.determinant() <= 0.0 {
        return Err(Some(dev));
    }
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.ok_or(Some(dev))?, svd.v_t.ok_or(Some(dev))?);
    let fixed = u * vt;
    debug_assert!(orthonormality_error(&fixed) < ROTATION_TOL);
    Pose::new(fixed, nalgebra::Vector3::new(v[3], v[7], v[11])).map_err(|_| Some(dev))
}

pub fn parse_pose_text(text: &str, path: &Path) -> Result<Vec<Pose>, DatasetError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(DatasetError::MalformedLine {
                path: path.into(),
                line: line_no,
                reason: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 12];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| DatasetError::MalformedLine {
                path: path.into(),
                line: line_no,
                reason: format!("`{f}` is not a number"),
            })?;
        }
        let pose = pose_from_row_major(&v).map_err(|dev| match dev {
            Some(deviation) => DatasetError::NonOrthonormal { path: path.into(), line: line_no, deviation },
            None => DatasetError::MalformedLine { path: path.into(), line: line_no, reason: "non-finite value".into() },
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Vec<Pose>, DatasetError> {
    let path = path.as_ref();
    parse_pose_text(&read_text(path)?, path)
}

/// One pose per line; shortest round-trip decimal formatting.
pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let fields: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pose_file(path: impl AsRef<Path>, poses: &[Pose]) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), format_poses(poses).as_bytes())
}

// ---------------------------------------------------------------- labels

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    version: u32,
    grid: PolarGridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<usize>,
}

/// Contents of a label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    #[serde(flatten)]
    pub profile: CadProfile,
    #[serde(default)]
    pub categories: Option<Vec<Category>>,
}

fn two_lines<'a>(text: &'a str, path: &Path) -> Result<(&'a str, &'a str), DatasetError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let (Some(a), Some(b), None) = (lines.next(), lines.next(), lines.next()) else {
        return Err(DatasetError::malformed(path, "expected a header line and a body line"));
    };
    Ok((a, b))
}

fn parse_header(line: &str, kind: &str, path: &Path) -> Result<Header, DatasetError> {
    let h: Header =
        serde_json::from_str(line).map_err(|e| DatasetError::malformed(path, format!("header: {e}")))?;
    if h.kind != kind {
        return Err(DatasetError::malformed(path, format!("expected kind `{kind}`, found `{}`", h.kind)));
    }
    if h.version != FORMAT_VERSION {
        return Err(DatasetError::malformed(path, format!("unsupported version {}", h.version)));
    }
    Ok(h)
}

fn check_grid(found: &PolarGridSpec, expected: &PolarGridSpec) -> Result<(), DatasetError> {
    if found != expected {
        return Err(DatasetError::SpecMismatch(format!(
            "file grid {}x{} (R = {}) differs from expected {}x{} (R = {})",
            found.n_r(),
            found.n_phi(),
            found.max_radius(),
            expected.n_r(),
            expected.n_phi(),
            expected.max_radius()
        )));
    }
    Ok(())
}

pub fn encode_label(label: &LabelFile, spec: &PolarGridSpec) -> Result<String, DatasetError> {
    label.profile.validate(spec)?;
    if let Some(c) = &label.categories {
        if c.len() != spec.n_phi() {
            return Err(DatasetError::SpecMismatch(format!("{} categories for {} directions", c.len(), spec.n_phi())));
        }
    }
    let header = Header { kind: LABEL_KIND.into(), version: FORMAT_VERSION, grid: *spec, f: None };
    let head = serde_json::to_string(&header).expect("header serializes");
    let body = serde_json::to_string(label).expect("label serializes");
    Ok(format!("{head}\n{body}\n"))
}

/// Parses a label and checks it against `spec`.
pub fn decode_label(text: &str, spec: &PolarGridSpec, path: &Path) -> Result<LabelFile, DatasetError> {
    let (head, body) = two_lines(text, path)?;
    let header = parse_header(head, LABEL_KIND, path)?;
    check_grid(&header.grid, spec)?;
    let label: LabelFile =
        serde_json::from_str(body).map_err(|e| DatasetError::malformed(path, format!("body: {e}")))?;
    label.profile.validate(spec).map_err(|e| DatasetError::malformed(path, e.to_string()))?;
    if label.categories.as_ref().is_some_and(|c| c.len() != spec.n_phi()) {
        return Err(DatasetError::malformed(path, "category count differs from n_phi"));
    }
    Ok(label)
}

/// Reads a label together with the grid recorded in its header.
pub fn read_label_any(path: impl AsRef<Path>) -> Result<(PolarGridSpec, LabelFile), DatasetError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (head, _) = two_lines(&text, path)?;
    let grid = parse_header(head, LABEL_KIND, path)?.grid;
    Ok((grid, decode_label(&text, &grid, path)?))
}

pub fn write_label(path: impl AsRef<Path>, label: &LabelFile, spec: &PolarGridSpec) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), encode_label(label, spec)?.as_bytes())
}

pub fn read_label(path: impl AsRef<Path>, spec: &PolarGridSpec) -> Result<LabelFile, DatasetError> {
    let path = path.as_ref();
    decode_label(&read_text(path)?, spec, path)
}

// ---------------------------------------------------------------- scenes

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    kind: String,
    version: u32,
}

pub fn encode_scene(scene: &SceneSpec) -> Result<String, DatasetError> {
    scene.validate().map_err(|e| DatasetError::malformed("<scene>", e.to_string()))?;
    let head = serde_json::to_string(&SceneHeader { kind: SCENE_KIND.into(), version: FORMAT_VERSION })
        .expect("header serializes");
    let body = serde_json::to_string(scene).expect("scene serializes");
    Ok(format!("{head}\n{body}\n"))
}

pub fn decode_scene(text: &str, path: &Path) -> Result<SceneSpec, DatasetError> {
    let (head, body) = two_lines(text, path)?;
    let h: SceneHeader =
        serde_json::from_str(head).map_err(|e| DatasetError::malformed(path, format!("header: {e}")))?;
    if h.kind != SCENE_KIND || h.version != FORMAT_VERSION {
        return Err(DatasetError::malformed(path, format!("expected {SCENE_KIND} v{FORMAT_VERSION}")));
    }
    let scene: SceneSpec =
        serde_json::from_str(body).map_err(|e| DatasetError::malformed(path, format!("body: {e}")))?;
    scene.validate().map_err(|e| DatasetError::malformed(path, e.to_string()))?;
    Ok(scene)
}

pub fn write_scene(path: impl AsRef<Path>, scene: &SceneSpec) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), encode_scene(scene)?.as_bytes())
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SceneSpec, DatasetError> {
    let path = path.as_ref();
    decode_scene(&read_text(path)?, path)
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    LabeledTrain,
    UnlabeledTrain,
    Validation,
}

/// One sample: `f + 1` frames, current first, with absolute world poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    /// Frame paths relative to the dataset root.
    pub frames: Vec<String>,
    #[serde(with = "pose_list")]
    pub poses: Vec<Pose>,
    /// Label path relative to the dataset root.
    #[serde(default)]
    pub label: Option<String>,
    pub split: Split,
    /// Scene path relative to the dataset root, for simulated samples.
    #[serde(default)]
    pub scene: Option<String>,
    /// Sample time of the current frame, for simulated samples.
    #[serde(default)]
    pub time: Option<f64>,
}

mod pose_list {
    use super::*;
    use serde::de::Error;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(poses: &[Pose], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 12]> = poses.iter().map(Pose::to_row_major_3x4).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Pose>, D::Error> {
        let rows: Vec<[f64; 12]> = Vec::deserialize(d)?;
        rows.iter()
            .map(|r| {
                pose_from_row_major(r).map_err(|dev| match dev {
                    Some(dev) => D::Error::custom(format!("rotation deviates from orthonormal by {dev:e}")),
                    None => D::Error::custom("non-finite pose component"),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub grid: PolarGridSpec,
    /// Historical frames per sample.
    pub f: usize,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(grid: PolarGridSpec, f: usize) -> Self {
        Self { grid, f, records: Vec::new() }
    }

    /// Checks frame counts, unique ids and that labeled-train records carry labels.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(format!("duplicate record id `{}`", r.id));
            }
            if r.frames.len() != self.f + 1 || r.poses.len() != self.f + 1 {
                return Err(format!(
                    "record `{}` has {} frames and {} poses, expected {}",
                    r.id,
                    r.frames.len(),
                    r.poses.len(),
                    self.f + 1
                ));
            }
            if r.split == Split::LabeledTrain && r.label.is_none() {
                return Err(format!("labeled-train record `{}` has no label", r.id));
            }
        }
        Ok(())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.in_split(split).count()
    }
}

pub fn encode_manifest(m: &DatasetManifest) -> Result<String, DatasetError> {
    m.validate().map_err(|e| DatasetError::malformed("<manifest>", e))?;
    let header = Header { kind: MANIFEST_KIND.into(), version: FORMAT_VERSION, grid: m.grid, f: Some(m.f) };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &m.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_manifest(text: &str, path: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| DatasetError::malformed(path, "empty manifest"))?;
    let header = parse_header(head, MANIFEST_KIND, path)?;
    let f = header.f.ok_or_else(|| DatasetError::malformed(path, "header lacks `f`"))?;
    let mut m = DatasetManifest::new(header.grid, f);
    for (i, line) in lines {
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| DatasetError::MalformedLine {
            path: path.into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        m.records.push(rec);
    }
    m.validate().map_err(|e| DatasetError::malformed(path, e))?;
    Ok(m)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<(), DatasetError> {
    write_bytes(path.as_ref(), encode_manifest(m)?.as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    decode_manifest(&read_text(path)?, path)
}

// ---------------------------------------------------------------- splits

/// Fractions of records assigned to labeled-train, unlabeled-train and
/// validation. Sizes are floor-rounded; the remainder goes to validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub labeled: f64,
    pub unlabeled: f64,
    pub validation: f64,
}

impl SplitFractions {
    pub fn new(labeled: f64, unlabeled: f64, validation: f64) -> Self {
        Self { labeled, unlabeled, validation }
    }
}

fn floor_count(frac: f64, n: usize) -> usize {
    // guard against 0.29 * 100 = 28.999...
    ((frac * n as f64) + 1e-9).floor() as usize
}

/// Deterministically reassigns every record to a split.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let SplitFractions { labeled, unlabeled, validation } = fractions;
    let all = [labeled, unlabeled, validation];
    if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DatasetError::InvalidFractions(format!("fractions must be nonnegative, got {all:?}")));
    }
    if all.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(DatasetError::InvalidFractions(format!("fractions sum above 1: {all:?}")));
    }
    let n = manifest.records.len();
    let n_l = floor_count(labeled, n);
    let n_u = floor_count(unlabeled, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut with_label: Vec<usize> = (0..n).filter(|&i| manifest.records[i].label.is_some()).collect();
    if n_l > with_label.len() {
        return Err(DatasetError::InsufficientLabels { requested: n_l, available: with_label.len() });
    }
    with_label.shuffle(&mut rng);
    let chosen: HashSet<usize> = with_label[..n_l].iter().copied().collect();
    let mut rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
    rest.shuffle(&mut rng);
    let unl: HashSet<usize> = rest[..n_u.min(rest.len())].iter().copied().collect();
    let mut out = manifest.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        r.split = if chosen.contains(&i) {
            Split::LabeledTrain
        } else if unl.contains(&i) {
            Split::UnlabeledTrain
        } else {
            Split::Validation
        };
    }
    Ok(out)
}

// ---------------------------------------------------------------- dataset

/// A manifest bound to its root directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        let manifest = read_manifest(root.join(MANIFEST_FILE))?;
        Ok(Self { root, manifest })
    }

    pub fn save_manifest(&self) -> Result<(), DatasetError> {
        write_manifest(self.root.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn frame_path(id: &str, k: usize) -> String {
        format!("frames/{id}_{k}.bin")
    }

    pub fn label_path(id: &str) -> String {
        format!("labels/{id}.json")
    }

    pub fn scene_path(id: &str) -> String {
        format!("scenes/{id}.json")
    }

    /// Tag sidecar next to a frame file.
    pub fn tags_path(frame: &str) -> String {
        match frame.strip_suffix(".bin") {
            Some(stem) => format!("{stem}.tags"),
            None => format!("{frame}.tags"),
        }
    }

    /// Loads all frames of a record with poses, frame indices and any tags.
    pub fn load_frames(&self, record: &SampleRecord) -> Result<Vec<PointFrame>, DatasetError> {
        record
            .frames
            .iter()
            .zip(&record.poses)
            .enumerate()
            .map(|(k, (rel, pose))| {
                let path = self.root.join(rel);
                let points = decode_kitti_bin(&read_bytes(&path)?, &path)?;
                let tags_path = self.root.join(Self::tags_path(rel));
                if tags_path.exists() {
                    let tags = read_tags(&tags_path)?;
                    PointFrame::with_tags(points, *pose, k, tags)
                        .map_err(|e| DatasetError::malformed(&tags_path, e.to_string()))
                } else {
                    Ok(PointFrame::new(points, *pose, k))
                }
            })
            .collect()
    }

    /// Frames of a record expressed in its current frame.
    pub fn load_aligned(&self, record: &SampleRecord) -> Result<Vec<PointFrame>, DatasetError> {
        let frames = self.load_frames(record)?;
        let current = frames[0].pose;
        Ok(frames.iter().map(|fr| crate::geometry::transform_to_current(fr, &current)).collect())
    }

    pub fn load_scene(&self, record: &SampleRecord) -> Result<Option<SceneSpec>, DatasetError> {
        record.scene.as_ref().map(|rel| read_scene(self.root.join(rel))).transpose()
    }

    pub fn load_label(&self, record: &SampleRecord) -> Result<Option<LabelFile>, DatasetError> {
        record.label.as_ref().map(|rel| read_label(self.root.join(rel), &self.manifest.grid)).transpose()
    }

    /// Writes the frames of a new record and returns their relative paths.
    pub fn write_frames(&self, id: &str, frames: &[PointFrame]) -> Result<Vec<String>, DatasetError> {
        frames
            .iter()
            .enumerate()
            .map(|(k, fr)| {
                let rel = Self::frame_path(id, k);
                write_kitti_bin(self.root.join(&rel), &fr.points)?;
                if let Some(tags) = &fr.tags {
                    write_tags(self.root.join(Self::tags_path(&rel)), tags)?;
                }
                Ok(rel)
            })
            .collect()
    }
}
