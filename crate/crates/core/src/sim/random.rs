//! Seeded random scene generation.
//!
//! The profiles here are our own choices; they only aim to exercise each
//! obstacle class (thin poles, moving actors, pits and curbs) at CPU scale.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{
    Actor, ActorShape, BoxObstacle, CylinderObstacle, GroundPatch, GroundPlane, Pit, SceneSpec, Trajectory,
};
use super::{ground_height_at, SequenceSpec};
use crate::error::SimError;

const ATTEMPTS: usize = 400;
const EGO_MARGIN: f64 = 0.5;
const SEPARATION: f64 = 0.3;

/// Inclusive count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub const NONE: CountRange = CountRange::new(0, 0);

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.max <= self.min {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub name: String,
    /// Obstacles are placed with centers inside this radius around the ego.
    pub extent: f64,
    /// Radius kept free around every ego position, on top of a fixed 0.5 m margin.
    pub clear_radius: f64,
    pub ego_speed: f64,
    /// Longest history (seconds) the scene must stay valid for.
    pub max_history: f64,
    pub boxes: CountRange,
    pub cylinders: CountRange,
    pub pits: CountRange,
    pub patches: CountRange,
    pub actors: CountRange,
    /// Probability that the ego drives on a raised sidewalk.
    pub sidewalk_probability: f64,
    pub actor_speed: (f64, f64),
}

impl DifficultyProfile {
    /// Ground plane only.
    pub fn bare() -> Self {
        Self {
            name: "bare".into(),
            extent: 9.0,
            clear_radius: 1.0,
            ego_speed: 1.0,
            max_history: 2.0,
            boxes: CountRange::NONE,
            cylinders: CountRange::NONE,
            pits: CountRange::NONE,
            patches: CountRange::NONE,
            actors: CountRange::NONE,
            sidewalk_probability: 0.0,
            actor_speed: (0.8, 2.0),
        }
    }

    /// Mixed static clutter plus a few pedestrians; desk-grid sized.
    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            boxes: CountRange::new(1, 3),
            cylinders: CountRange::new(1, 4),
            pits: CountRange::new(1, 2),
            patches: CountRange::new(0, 1),
            actors: CountRange::new(1, 3),
            sidewalk_probability: 0.25,
            ..Self::bare()
        }
    }

    /// Many fast actors crossing near the vehicle.
    pub fn dynamic() -> Self {
        Self {
            name: "dynamic".into(),
            extent: 7.5,
            boxes: CountRange::new(0, 1),
            cylinders: CountRange::new(0, 2),
            pits: CountRange::NONE,
            patches: CountRange::NONE,
            actors: CountRange::new(3, 6),
            sidewalk_probability: 0.0,
            actor_speed: (1.5, 3.0),
            ..Self::bare()
        }
    }

    /// Static scenes with a wide clear zone, used for dense multi-viewpoint
    /// reference clouds.
    pub fn static_check() -> Self {
        Self {
            name: "static-check".into(),
            clear_radius: 2.5,
            boxes: CountRange::new(1, 3),
            cylinders: CountRange::new(1, 3),
            pits: CountRange::new(1, 2),
            patches: CountRange::new(0, 1),
            actors: CountRange::NONE,
            sidewalk_probability: 0.0,
            ..Self::bare()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "bare" => Some(Self::bare()),
            "standard" => Some(Self::standard()),
            "dynamic" => Some(Self::dynamic()),
            "static-check" => Some(Self::static_check()),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 4] = ["bare", "standard", "dynamic", "static-check"];

    /// Ego driving along `+x` through the origin, reaching it at `t = 0`.
    pub fn ego_sequence(&self, f: usize, period: f64) -> SequenceSpec {
        let span = (f as f64 * period).max(self.max_history);
        SequenceSpec {
            f,
            period,
            t0: 0.0,
            ego: Trajectory::linear(0.0, 0.0, self.ego_speed, 0.0, -span, 0.0),
        }
    }

    fn path_len(&self) -> f64 {
        self.ego_speed * self.max_history
    }
}

/// Distance from `p` to the ego path segment `[(-len, 0), (0, 0)]`.
fn path_distance(p: [f64; 2], len: f64) -> f64 {
    let x = p[0].clamp(-len, 0.0);
    (p[0] - x).hypot(p[1])
}

struct Placer<'a> {
    rng: &'a mut ChaCha8Rng,
    profile: &'a DifficultyProfile,
    taken: Vec<([f64; 2], f64)>,
}

impl Placer<'_> {
    /// Draws a center for a footprint of bounding radius `radius`.
    fn place(&mut self, radius: f64, what: &str) -> Result<[f64; 2], SimError> {
        let min_r = self.profile.clear_radius + EGO_MARGIN + radius;
        if min_r >= self.profile.extent {
            return Err(SimError::PlacementFailure { what: what.into(), attempts: 0 });
        }
        for _ in 0..ATTEMPTS {
            let r = self.rng.gen_range(min_r..self.profile.extent);
            let a = self.rng.gen_range(0.0..TAU);
            let c = [r * a.cos(), r * a.sin()];
            if path_distance(c, self.profile.path_len()) < min_r {
                continue;
            }
            if self
                .taken
                .iter()
                .any(|(o, ro)| (o[0] - c[0]).hypot(o[1] - c[1]) < ro + radius + SEPARATION)
            {
                continue;
            }
            self.taken.push((c, radius));
            return Ok(c);
        }
        Err(SimError::PlacementFailure { what: what.into(), attempts: ATTEMPTS })
    }
}

/// Builds a random scene; identical `(seed, profile)` give identical scenes.
pub fn sample_random_scene(seed: u64, profile: &DifficultyProfile) -> Result<SceneSpec, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SceneSpec::flat_ground();
    scene.seed = seed;
    let mut next_id = 1u32;
    let mut id = || {
        let v = next_id;
        next_id += 1;
        v
    };

    if profile.sidewalk_probability > 0.0 && rng.gen_bool(profile.sidewalk_probability.clamp(0.0, 1.0)) {
        let left = rng.gen_range(2.0..5.0);
        let right = rng.gen_range(2.0..5.0);
        scene.patches.push(GroundPatch {
            id: id(),
            min: [-40.0, -right],
            max: [40.0, left],
            height: rng.gen_range(0.25..0.35),
        });
    }

    let n_patches = profile.patches.sample(&mut rng);
    let n_pits = profile.pits.sample(&mut rng);
    let n_boxes = profile.boxes.sample(&mut rng);
    let n_cyl = profile.cylinders.sample(&mut rng);
    let n_actors = profile.actors.sample(&mut rng);

    let mut placer = Placer { rng: &mut rng, profile, taken: Vec::new() };

    let mut raised = Vec::new();
    for _ in 0..n_patches {
        let hx: f64 = placer.rng.gen_range(0.5..1.5);
        let hy: f64 = placer.rng.gen_range(0.5..1.5);
        let c = placer.place(hx.hypot(hy), "patch")?;
        let height = ground_height_at(&scene, c[0], c[1]) + placer.rng.gen_range(0.3..0.6);
        raised.push(GroundPatch { id: 0, min: [c[0] - hx, c[1] - hy], max: [c[0] + hx, c[1] + hy], height });
    }
    let mut pits = Vec::new();
    for _ in 0..n_pits {
        let hx: f64 = placer.rng.gen_range(0.4..1.2);
        let hy: f64 = placer.rng.gen_range(0.4..1.2);
        let c = placer.place(hx.hypot(hy), "pit")?;
        let depth = placer.rng.gen_range(0.4..1.2);
        pits.push(Pit { id: 0, min: [c[0] - hx, c[1] - hy], max: [c[0] + hx, c[1] + hy], depth });
    }
    let mut boxes = Vec::new();
    for _ in 0..n_boxes {
        let hx: f64 = placer.rng.gen_range(0.2..1.0);
        let hy: f64 = placer.rng.gen_range(0.2..1.0);
        let c = placer.place(hx.hypot(hy), "box")?;
        let yaw = placer.rng.gen_range(0.0..TAU);
        let height = placer.rng.gen_range(0.4..1.6);
        boxes.push(BoxObstacle { id: 0, center: c, half_extents: [hx, hy], yaw, base_z: 0.0, height });
    }
    let mut cylinders = Vec::new();
    for _ in 0..n_cyl {
        let radius = placer.rng.gen_range(0.05..0.2);
        let c = placer.place(radius, "cylinder")?;
        let height = placer.rng.gen_range(0.8..2.0);
        cylinders.push(CylinderObstacle { id: 0, center: c, radius, base_z: 0.0, height });
    }

    let path_len = profile.path_len();
    let t_lo = -profile.max_history - 0.5;
    let t_hi = 0.5;
    let mut actors = Vec::new();
    for _ in 0..n_actors {
        let mut placed = None;
        for _ in 0..ATTEMPTS {
            let pedestrian = placer.rng.gen_bool(0.7);
            let shape = if pedestrian {
                ActorShape::Cylinder { radius: placer.rng.gen_range(0.25..0.35), height: placer.rng.gen_range(1.5..1.8) }
            } else {
                ActorShape::Box { half_extents: [0.5, 0.35], height: placer.rng.gen_range(0.8..1.2) }
            };
            let radius = match shape {
                ActorShape::Cylinder { radius, .. } => radius,
                ActorShape::Box { half_extents, .. } => half_extents[0].hypot(half_extents[1]),
            };
            let min_r = profile.clear_radius + EGO_MARGIN + radius;
            if min_r >= profile.extent {
                break;
            }
            let r = placer.rng.gen_range(min_r..profile.extent);
            let a = placer.rng.gen_range(0.0..TAU);
            let heading = placer.rng.gen_range(0.0..TAU);
            let speed = placer.rng.gen_range(profile.actor_speed.0..profile.actor_speed.1);
            let traj = Trajectory::linear(r * a.cos(), r * a.sin(), speed * heading.cos(), speed * heading.sin(), t_lo, t_hi);
            let steps = 40;
            let clear = (0..=steps).all(|i| {
                let t = t_lo + (t_hi - t_lo) * i as f64 / steps as f64;
                let (x, y, _) = traj.at(t).expect("inside span");
                path_distance([x, y], path_len) >= min_r
            });
            if clear {
                placed = Some((shape, traj));
                break;
            }
        }
        let (shape, trajectory) = placed.ok_or(SimError::PlacementFailure { what: "actor".into(), attempts: ATTEMPTS })?;
        actors.push(Actor { id: 0, shape, base_z: 0.0, trajectory });
    }

    for mut p in raised {
        p.id = id();
        scene.patches.push(p);
    }
    for mut p in pits {
        p.id = id();
        scene.pits.push(p);
    }
    for mut b in boxes {
        b.id = id();
        b.base_z = ground_height_at(&scene, b.center[0], b.center[1]);
        scene.boxes.push(b);
    }
    for mut c in cylinders {
        c.id = id();
        c.base_z = ground_height_at(&scene, c.center[0], c.center[1]);
        scene.cylinders.push(c);
    }
    for mut a in actors {
        a.id = id();
        let (x, y, _) = a.trajectory.at(0.0).expect("0 inside actor span");
        a.base_z = ground_height_at(&scene, x, y);
        scene.actors.push(a);
    }
    debug_assert!(scene.ground == Some(GroundPlane { id: 0, height: 0.0 }));
    scene.validate()?;
    Ok(scene)
}
