//! Deterministic ray-cast LiDAR over parametric scenes.
//!
//! Points are reported in the vehicle base frame of the scan (origin on the
//! ground below the sensor, `+x` forward); the sensor sits `mount_height`
//! above that origin. Every return carries the id of the object it hit and
//! whether that object is a moving actor.

mod random;
mod scene;

pub use random::{sample_random_scene, CountRange, DifficultyProfile};
pub use scene::{
    Actor, ActorShape, BoxObstacle, CylinderObstacle, Footprint, GroundPatch, GroundPlane, ObjectClass, Pit,
    SceneSpec, Solid, Surface, Trajectory, Waypoint,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{Point3, PointFrame, PointTag, Pose};

/// Intensity written for every simulated return.
pub const SIM_INTENSITY: f64 = 0.5;

/// Spinning multi-beam LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    /// Elevation of each channel in degrees, strictly increasing.
    pub vertical_angles_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub mount_height: f64,
    /// Standard deviation of additive range noise, meters. Zero disables it.
    pub range_noise_sigma: f64,
}

impl LidarModel {
    pub fn new(
        vertical_angles_deg: Vec<f64>,
        azimuth_step_deg: f64,
        max_range: f64,
        mount_height: f64,
        range_noise_sigma: f64,
    ) -> Result<Self, SimError> {
        let m = Self { vertical_angles_deg, azimuth_step_deg, max_range, mount_height, range_noise_sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: &str| Err(SimError::InvalidLidar(s.to_string()));
        if self.vertical_angles_deg.is_empty() {
            return bad("no channels");
        }
        if self.vertical_angles_deg.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("vertical angles must be strictly increasing");
        }
        if self.vertical_angles_deg.iter().any(|a| !(a.is_finite() && a.abs() < 90.0)) {
            return bad("vertical angles must lie in (-90, 90)");
        }
        if !(self.azimuth_step_deg > 0.0 && self.azimuth_step_deg <= 360.0) {
            return bad("azimuth step must be in (0, 360]");
        }
        let n = 360.0 / self.azimuth_step_deg;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return bad("azimuth step must divide 360");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max range must be positive");
        }
        if !(self.mount_height.is_finite() && self.range_noise_sigma >= 0.0 && self.range_noise_sigma.is_finite()) {
            return bad("invalid mount height or noise");
        }
        Ok(())
    }

    /// 16 channels over ±15° at 2° spacing, 0.8 m mount.
    pub fn vlp16() -> Self {
        Self {
            vertical_angles_deg: (0..16).map(|i| -15.0 + 2.0 * i as f64).collect(),
            azimuth_step_deg: 0.4,
            max_range: 100.0,
            mount_height: 0.8,
            range_noise_sigma: 0.01,
        }
    }

    /// 32 channels from -30° to +6°, 1° azimuth steps; the CPU-scale default.
    pub fn desk() -> Self {
        Self {
            vertical_angles_deg: (0..32).map(|i| -30.0 + 36.0 * i as f64 / 31.0).collect(),
            azimuth_step_deg: 1.0,
            max_range: 40.0,
            mount_height: 0.8,
            range_noise_sigma: 0.01,
        }
    }

    /// High-resolution sensor for building dense reference clouds.
    pub fn dense(mount_height: f64) -> Self {
        Self {
            vertical_angles_deg: (0..256).map(|i| -85.0 + 87.0 * i as f64 / 255.0).collect(),
            azimuth_step_deg: 0.2,
            max_range: 40.0,
            mount_height,
            range_noise_sigma: 0.0,
        }
    }

    pub fn n_azimuth(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    pub fn without_noise(mut self) -> Self {
        self.range_noise_sigma = 0.0;
        self
    }
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub object_id: u32,
    pub dynamic: bool,
}

/// Ray caster over one instant of a scene.
pub struct SceneSnapshot<'a> {
    scene: &'a SceneSpec,
    regions: Vec<Footprint>,
    solids: Vec<Solid>,
}

impl<'a> SceneSnapshot<'a> {
    pub fn new(scene: &'a SceneSpec, time: f64) -> Result<Self, SimError> {
        Ok(Self {
            scene,
            regions: scene.ground_regions().collect(),
            solids: scene.solids_at(time)?,
        })
    }

    pub fn solids(&self) -> &[Solid] {
        &self.solids
    }

    /// Casts a world-frame ray with unit direction `dir`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let ground = self.cast_ground(origin, dir, max_range);
        let solid = self.cast_solids(origin, dir, ground.map_or(max_range, |h| h.range));
        solid.or(ground)
    }

    fn cast_ground(&self, o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let (oxy, dxy) = ([o.x, o.y], [d.x, d.y]);
        let mut breaks = vec![0.0, max_range];
        for r in &self.regions {
            if let Some((a, b)) = r.ray_interval(oxy, dxy) {
                breaks.extend([a, b].into_iter().filter(|t| *t > 0.0 && *t < max_range));
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let Some(surface) = self.scene.surface_at(o.x + mid * d.x, o.y + mid * d.y) else {
                continue;
            };
            let za = o.z + a * d.z;
            if za < surface.height {
                if a > 0.0 {
                    return Some(Hit { range: a, object_id: surface.object_id, dynamic: false });
                }
                // sensor below this surface: nothing sensible to report
                continue;
            }
            if d.z < 0.0 {
                let t = (surface.height - o.z) / d.z;
                if t >= a && t < b && t > 0.0 {
                    return Some(Hit { range: t, object_id: surface.object_id, dynamic: false });
                }
            }
        }
        None
    }

    fn cast_solids(&self, o: &Vector3<f64>, d: &Vector3<f64>, limit: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut best_t = limit;
        for s in &self.solids {
            let Some((a, b)) = s.footprint.ray_interval([o.x, o.y], [d.x, d.y]) else {
                continue;
            };
            let (za, zb) = if d.z.abs() < 1e-15 {
                if o.z < s.base_z || o.z > s.top_z {
                    continue;
                }
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                let t1 = (s.base_z - o.z) / d.z;
                let t2 = (s.top_z - o.z) / d.z;
                (t1.min(t2), t1.max(t2))
            };
            let enter = a.max(za);
            let exit = b.min(zb);
            if enter <= exit && enter > 1e-9 && enter < best_t {
                best_t = enter;
                best = Some(Hit { range: enter, object_id: s.id, dynamic: s.dynamic });
            }
        }
        best
    }
}

/// Height of the ground under a planar position, 0 over the void.
pub fn ground_height_at(scene: &SceneSpec, x: f64, y: f64) -> f64 {
    scene.surface_at(x, y).map_or(0.0, |s| s.height)
}

/// One sweep from a vehicle at world pose `pose` (base frame) at `time`.
///
/// Rays are generated azimuth-major. Range noise is Gaussian truncated at
/// three sigma, drawn from a stream seeded by `noise_seed`; rays that hit
/// nothing produce no point.
pub fn raycast_scan(
    scene: &SceneSpec,
    lidar: &LidarModel,
    pose: &Pose,
    time: f64,
    noise_seed: u64,
) -> Result<PointFrame, SimError> {
    let snap = SceneSnapshot::new(scene, time)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = if lidar.range_noise_sigma > 0.0 {
        Some(Normal::new(0.0, lidar.range_noise_sigma).expect("sigma validated"))
    } else {
        None
    };
    let sensor_local = Vector3::new(0.0, 0.0, lidar.mount_height);
    let origin = pose.apply_vec(&sensor_local);
    let elevations: Vec<(f64, f64)> = lidar.vertical_angles_deg.iter().map(|a| a.to_radians().sin_cos()).collect();
    let n_az = lidar.n_azimuth();
    let mut points = Vec::new();
    let mut tags = Vec::new();
    for ia in 0..n_az {
        let (sa, ca) = (ia as f64 * lidar.azimuth_step_deg).to_radians().sin_cos();
        for &(se, ce) in &elevations {
            let local_dir = Vector3::new(ce * ca, ce * sa, se);
            let dir = pose.rotation() * local_dir;
            let Some(hit) = snap.cast(&origin, &dir, lidar.max_range) else {
                continue;
            };
            let range = match &noise {
                Some(n) => {
                    let limit = 3.0 * lidar.range_noise_sigma;
                    hit.range + n.sample(&mut rng).clamp(-limit, limit)
                }
                None => hit.range,
            };
            if range <= 0.0 {
                continue;
            }
            let p = sensor_local + local_dir * range;
            points.push(Point3::new(p.x, p.y, p.z, SIM_INTENSITY));
            tags.push(PointTag { object_id: hit.object_id, dynamic: hit.dynamic });
        }
    }
    Ok(PointFrame { points, pose: *pose, frame_index: 0, tags: Some(tags) })
}

/// Timing of a multi-frame sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// Number of historical frames.
    pub f: usize,
    /// Seconds between consecutive frames.
    pub period: f64,
    /// Time of the current frame.
    pub t0: f64,
    /// Planar ego trajectory; height follows the scene surface.
    pub ego: Trajectory,
}

impl SequenceSpec {
    pub fn frame_time(&self, k: usize) -> f64 {
        self.t0 - k as f64 * self.period
    }

    /// Ego base pose at time `t`.
    pub fn ego_pose(&self, scene: &SceneSpec, t: f64) -> Result<Pose, SimError> {
        let (x, y, yaw) = self.ego.at(t)?;
        Ok(Pose::from_xyz_yaw(x, y, ground_height_at(scene, x, y), yaw))
    }
}

/// Derives an independent stream seed for `(seed, stream)`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders the `f + 1` frames of a sample, current frame first.
///
/// Frames carry absolute (world) poses and per-point tags.
pub fn generate_sequence(
    scene: &SceneSpec,
    seq: &SequenceSpec,
    lidar: &LidarModel,
    seed: u64,
) -> Result<Vec<PointFrame>, SimError> {
    if !(seq.period > 0.0) {
        return Err(SimError::InvalidScene("frame period must be positive".into()));
    }
    lidar.validate()?;
    (0..=seq.f)
        .map(|k| {
            let t = seq.frame_time(k);
            let pose = seq.ego_pose(scene, t)?;
            let mut frame = raycast_scan(scene, lidar, &pose, t, mix_seed(seed, k as u64))?;
            frame.frame_index = k;
            Ok(frame)
        })
        .collect()
}
