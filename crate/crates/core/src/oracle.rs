//! Ground-truth accessible depth.
//!
//! Two labelers share one rule set:
//!
//! * [`label_from_scene`] marches exact rays against the analytic scene. The
//!   ground surface and every prism footprint are piecewise constant along a
//!   horizontal ray, so the march visits footprint-boundary events instead
//!   of sampling.
//! * [`label_from_points`] applies the same rules to per-pillar point
//!   summaries. It is the practical labeler for aggregated clouds and the
//!   non-learned baseline predictor.
//!
//! Both report, per direction, the last radial bin whose center lies before
//! the first rule violation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{OracleError, SimError};
use crate::geometry::{CadProfile, Category, PointFrame, PolarGridSpec, Pose};
use crate::sim::{ground_height_at, LidarModel, ObjectClass, SceneSpec, raycast_scan, mix_seed};

/// Binary traversability thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversabilityRules {
    /// Height above local ground that counts as an obstruction.
    pub h_obs: f64,
    /// Drop below local ground that counts as a negative obstacle.
    pub h_neg: f64,
    /// Longest run of unsupported (empty) radial distance that is tolerated.
    pub g_max: f64,
    /// Vertical band above a pillar's lowest point treated as its ground.
    pub ground_window: f64,
    /// Anything higher than this above local ground is overhead and ignored.
    pub clearance: f64,
    /// Pillars closer than this establish the initial ground height.
    pub ground_ref_radius: f64,
    /// Lateral spacing of the analytic sub-rays at the outer radius.
    pub lateral_resolution: f64,
}

impl Default for TraversabilityRules {
    fn default() -> Self {
        Self {
            h_obs: 0.15,
            h_neg: 0.15,
            g_max: 0.6,
            ground_window: 0.08,
            clearance: 1.2,
            ground_ref_radius: 4.0,
            lateral_resolution: 0.02,
        }
    }
}

impl TraversabilityRules {
    pub fn validate(&self) -> Result<(), OracleError> {
        let positive = [
            ("h_obs", self.h_obs),
            ("h_neg", self.h_neg),
            ("g_max", self.g_max),
            ("ground_window", self.ground_window),
            ("clearance", self.clearance),
            ("ground_ref_radius", self.ground_ref_radius),
            ("lateral_resolution", self.lateral_resolution),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OracleError::InvalidRules(format!("{name} must be positive, got {v}")));
            }
        }
        if self.h_neg < self.ground_window {
            return Err(OracleError::InvalidRules("h_neg must be >= ground_window".into()));
        }
        Ok(())
    }
}

/// What ended the march in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderKind {
    /// A prism rising above the obstruction height.
    Obstruction,
    /// The ground stepping up by more than the obstruction height.
    StepUp,
    /// The ground dropping, or ending, below the negative threshold.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terminator {
    pub kind: BorderKind,
    /// Object responsible; `None` for the void past the scene's ground.
    pub object_id: Option<u32>,
    pub class: Option<ObjectClass>,
    /// Metric distance of the border from the ego.
    pub border: f64,
}

impl Terminator {
    /// Category used for per-class evaluation.
    pub fn category(&self) -> Category {
        match (self.kind, self.class) {
            (BorderKind::Drop, _) => Category::Negative,
            (_, Some(ObjectClass::Cylinder)) => Category::Thin,
            (_, Some(ObjectClass::Actor)) => Category::Dynamic,
            _ => Category::Others,
        }
    }
}

/// Analytic label with the terminating object per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLabel {
    pub profile: CadProfile,
    pub terminators: Vec<Option<Terminator>>,
}

/// Analytic accessible depth around `ego` (world base pose) at `time`.
pub fn label_from_scene(
    scene: &SceneSpec,
    ego: &Pose,
    spec: &PolarGridSpec,
    rules: &TraversabilityRules,
    time: f64,
) -> Result<CadProfile, OracleError> {
    label_from_scene_detailed(scene, ego, spec, rules, time).map(|l| l.profile)
}

pub fn label_from_scene_detailed(
    scene: &SceneSpec,
    ego: &Pose,
    spec: &PolarGridSpec,
    rules: &TraversabilityRules,
    time: f64,
) -> Result<SceneLabel, OracleError> {
    rules.validate()?;
    let marcher = SceneMarcher::new(scene, ego, spec, rules, time)?;
    let sub_rays = ((spec.max_radius() * spec.phi_width() / rules.lateral_resolution).ceil() as usize).max(2);
    let mut depth = Vec::with_capacity(spec.n_phi());
    let mut terminators = Vec::with_capacity(spec.n_phi());
    for j in 0..spec.n_phi() {
        let mut best: Option<Terminator> = None;
        // both sector edges are sampled so that slivers of footprints
        // crossing an edge are not lost between sub-rays
        for m in 0..=sub_rays {
            let frac = if m == sub_rays { 1.0 - 1e-9 } else { m as f64 / sub_rays as f64 };
            let phi = (j as f64 + frac) * spec.phi_width();
            if let Some(t) = marcher.march(ego.yaw() + phi) {
                if best.is_none_or(|b| t.border < b.border) {
                    best = Some(t);
                }
            }
        }
        depth.push(best.map_or(spec.n_r() - 1, |t| spec.depth_index_for_border(t.border)));
        terminators.push(best);
    }
    Ok(SceneLabel { profile: CadProfile::from_depths(depth), terminators })
}

struct SceneMarcher<'a> {
    scene: &'a SceneSpec,
    solids: Vec<crate::sim::Solid>,
    regions: Vec<crate::sim::Footprint>,
    origin: [f64; 2],
    ground0: f64,
    rules: &'a TraversabilityRules,
    radius: f64,
}

impl SceneLabel {
    /// Per-direction categories; unobstructed directions count as others.
    pub fn categories(&self) -> Vec<Category> {
        self.terminators.iter().map(|t| t.map_or(Category::Others, |t| t.category())).collect()
    }
}

impl<'a> SceneMarcher<'a> {
    fn new(
        scene: &'a SceneSpec,
        ego: &Pose,
        spec: &PolarGridSpec,
        rules: &'a TraversabilityRules,
        time: f64,
    ) -> Result<Self, OracleError> {
        let t = ego.translation();
        let origin = [t.x, t.y];
        let solids = scene.solids_at(time)?;
        let surface = scene.surface_at(origin[0], origin[1]).ok_or(OracleError::EgoBlocked)?;
        let ground0 = surface.height;
        let blocked = solids
            .iter()
            .any(|s| s.footprint.contains(origin[0], origin[1]) && obstructs(s.base_z, s.top_z, ground0, rules));
        if blocked {
            return Err(OracleError::EgoBlocked);
        }
        Ok(Self {
            scene,
            solids,
            regions: scene.ground_regions().collect(),
            origin,
            ground0,
            rules,
            radius: spec.max_radius(),
        })
    }

    /// First rule violation along the horizontal ray at world heading `theta`.
    fn march(&self, theta: f64) -> Option<Terminator> {
        let d = [theta.cos(), theta.sin()];
        let o = self.origin;
        let mut breaks = vec![0.0, self.radius];
        let footprints = self.regions.iter().chain(self.solids.iter().map(|s| &s.footprint));
        for fp in footprints {
            if let Some((a, b)) = fp.ray_interval(o, d) {
                breaks.extend([a, b].into_iter().filter(|t| *t > 0.0 && *t < self.radius));
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut g = self.ground0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let (x, y) = (o[0] + mid * d[0], o[1] + mid * d[1]);
            let Some(surface) = self.scene.surface_at(x, y) else {
                return Some(Terminator { kind: BorderKind::Drop, object_id: None, class: None, border: a });
            };
            if let Some(s) = self
                .solids
                .iter()
                .filter(|s| s.footprint.contains(x, y) && obstructs(s.base_z, s.top_z, g, self.rules))
                .min_by_key(|s| s.id)
            {
                return Some(Terminator {
                    kind: BorderKind::Obstruction,
                    object_id: Some(s.id),
                    class: Some(s.class),
                    border: a,
                });
            }
            if surface.height - g > self.rules.h_obs {
                return Some(Terminator {
                    kind: BorderKind::StepUp,
                    object_id: Some(surface.object_id),
                    class: Some(surface.class),
                    border: a,
                });
            }
            if surface.height < g - self.rules.h_neg {
                return Some(Terminator {
                    kind: BorderKind::Drop,
                    object_id: Some(surface.object_id),
                    class: Some(surface.class),
                    border: a,
                });
            }
            g = surface.height;
        }
        None
    }
}

/// A prism blocks when it pokes above `h_obs` and starts below the clearance.
fn obstructs(base_z: f64, top_z: f64, ground: f64, rules: &TraversabilityRules) -> bool {
    top_z - ground > rules.h_obs && base_z - ground < rules.clearance
}

/// Per-pillar point lists `(radius, z)` used by the point labeler.
pub struct PillarCloud {
    spec: PolarGridSpec,
    pillars: Vec<Vec<(f64, f64)>>,
}

impl PillarCloud {
    /// Bins the static points of `frames` (already in the current frame).
    ///
    /// Points tagged dynamic are kept only from the current frame so that
    /// moving objects appear at their present position alone. Points above
    /// the grid's top are ignored; points below its floor are kept because
    /// they witness drops.
    pub fn build(frames: &[PointFrame], spec: &PolarGridSpec) -> Self {
        let mut pillars = vec![Vec::new(); spec.n_pillars()];
        for frame in frames {
            for (p, tag) in frame.tagged_points() {
                if frame.frame_index > 0 && tag.is_some_and(|t| t.dynamic) {
                    continue;
                }
                if !(p.z <= spec.z_max()) || !p.x.is_finite() || !p.y.is_finite() {
                    continue;
                }
                if let Some(idx) = spec.bin_xy(p.x, p.y) {
                    pillars[spec.flat(idx)].push((p.radius(), p.z));
                }
            }
        }
        Self { spec: *spec, pillars }
    }

    pub fn pillar(&self, r_bin: usize, phi_bin: usize) -> &[(f64, f64)] {
        &self.pillars[r_bin * self.spec.n_phi() + phi_bin]
    }

    pub fn count(&self, r_bin: usize, phi_bin: usize) -> usize {
        self.pillar(r_bin, phi_bin).len()
    }
}

/// Mean height of the points in the lowest `window` band of a pillar.
fn pillar_ground(points: &[(f64, f64)], window: f64) -> Option<f64> {
    let min_z = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if !min_z.is_finite() {
        return None;
    }
    let (sum, n) = points
        .iter()
        .filter(|p| p.1 <= min_z + window)
        .fold((0.0, 0usize), |(s, n), p| (s + p.1, n + 1));
    Some(sum / n as f64)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

const GROUND_HISTORY: usize = 5;

/// Geometric accessible depth from points expressed in the current frame.
pub fn label_from_points(
    frames: &[PointFrame],
    spec: &PolarGridSpec,
    rules: &TraversabilityRules,
) -> Result<CadProfile, OracleError> {
    rules.validate()?;
    let cloud = PillarCloud::build(frames, spec);
    label_from_pillars(&cloud, rules)
}

pub fn label_from_pillars(cloud: &PillarCloud, rules: &TraversabilityRules) -> Result<CadProfile, OracleError> {
    let spec = &cloud.spec;
    let w = spec.r_width();
    let ref_bins = ((rules.ground_ref_radius / w).ceil() as usize).clamp(1, spec.n_r());
    let mut refs: Vec<f64> = (0..ref_bins)
        .flat_map(|d| (0..spec.n_phi()).map(move |j| (d, j)))
        .filter_map(|(d, j)| pillar_ground(cloud.pillar(d, j), rules.ground_window))
        .collect();
    if refs.is_empty() {
        return Err(OracleError::NoGroundReference);
    }
    let ground0 = median(&mut refs);

    let mut depth = Vec::with_capacity(spec.n_phi());
    for j in 0..spec.n_phi() {
        let mut history: VecDeque<f64> = VecDeque::from([ground0]);
        let mut g = ground0;
        let mut gap_start: Option<f64> = None;
        let mut border: Option<f64> = None;
        // empty pillars before the first return are the sensor's blind zone
        let mut seen_support = false;
        for d in 0..spec.n_r() {
            let pts: Vec<(f64, f64)> = cloud
                .pillar(d, j)
                .iter()
                .copied()
                .filter(|p| p.1 - g <= rules.clearance)
                .collect();
            if pts.is_empty() {
                if !seen_support {
                    continue;
                }
                let start = *gap_start.get_or_insert(d as f64 * w);
                if (d + 1) as f64 * w - start > rules.g_max {
                    border = Some(start);
                    break;
                }
                continue;
            }
            let gap = gap_start.take();
            seen_support = true;
            let obstruction = pts
                .iter()
                .filter(|p| p.1 - g > rules.h_obs)
                .map(|p| p.0)
                .fold(f64::INFINITY, f64::min);
            // a drop seen past an unsupported stretch starts where support ended
            let drop = pts
                .iter()
                .filter(|p| p.1 < g - rules.h_neg)
                .map(|p| p.0)
                .fold(f64::INFINITY, f64::min);
            let drop = if drop.is_finite() { gap.unwrap_or(drop) } else { drop };
            let violating = obstruction.min(drop);
            if violating.is_finite() {
                border = Some(violating);
                break;
            }
            if let Some(ground) = pillar_ground(&pts, rules.ground_window) {
                history.push_back(ground);
                if history.len() > GROUND_HISTORY {
                    history.pop_front();
                }
                let mut h: Vec<f64> = history.iter().copied().collect();
                g = median(&mut h);
            }
        }
        depth.push(border.map_or(spec.n_r() - 1, |b| spec.depth_index_for_border(b)));
    }
    Ok(CadProfile::from_depths(depth))
}

/// Directions in which every bin from bin 1 through one bin past the
/// reference depth holds at least one labeler-visible point. Bin 0 is the
/// ego's own cell and usually lies in the sensor's blind zone.
pub fn covered_directions(cloud: &PillarCloud, reference: &CadProfile) -> Vec<bool> {
    let spec = &cloud.spec;
    reference
        .depth_index
        .iter()
        .enumerate()
        .map(|(j, &gt)| {
            let last = (gt + 1).min(spec.n_r() - 1);
            (1..=last).all(|d| cloud.count(d, j) > 0)
        })
        .collect()
}

/// Horizontal offsets of `counts[i]` evenly spaced viewpoints on circles of
/// radius `radii[i]`, preceded by the origin.
pub fn ring_offsets(radii: &[f64], counts: &[usize]) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0, 0.0]];
    for (&r, &n) in radii.iter().zip(counts) {
        for k in 0..n {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            out.push([r * a.cos(), r * a.sin()]);
        }
    }
    out
}

/// Dense reference cloud: scans from viewpoints at `offsets` (in the ego's
/// horizontal frame) at `time`, expressed in the ego frame with frame index 0.
/// Viewpoints within 0.3 m of a solid are skipped; the origin never is.
pub fn aggregate_viewpoints(
    scene: &SceneSpec,
    ego: &Pose,
    lidar: &LidarModel,
    offsets: &[[f64; 2]],
    time: f64,
    seed: u64,
) -> Result<Vec<PointFrame>, SimError> {
    let solids = scene.solids_at(time)?;
    let t = ego.translation();
    let yaw = ego.yaw();
    let (s, c) = yaw.sin_cos();
    let mut out = Vec::with_capacity(offsets.len());
    for (v, off) in offsets.iter().enumerate() {
        let x = t.x + c * off[0] - s * off[1];
        let y = t.y + s * off[0] + c * off[1];
        let near_solid = solids.iter().any(|sol| {
            let (center, radius) = sol.footprint.bounding_circle();
            (x - center[0]).hypot(y - center[1]) < radius + 0.3
        });
        if v > 0 && (near_solid || scene.surface_at(x, y).is_none()) {
            continue;
        }
        let pose = Pose::from_xyz_yaw(x, y, ground_height_at(scene, x, y), yaw);
        let frame = raycast_scan(scene, lidar, &pose, time, mix_seed(seed, v as u64))?;
        let mut local = crate::geometry::transform_to_current(&frame, ego);
        local.frame_index = 0;
        out.push(local);
    }
    Ok(out)
}
