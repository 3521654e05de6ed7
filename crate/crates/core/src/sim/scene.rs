//! Parametric scenes: a piecewise-flat ground heightfield (base plane,
//! raised/lowered patches, pits) plus vertical prisms (boxes, cylinders,
//! moving actors).

use serde::{Deserialize, Serialize};

use crate::error::SimError;

const EPS: f64 = 1e-12;

/// Horizontal shape of a region or a vertical prism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Footprint {
    /// Axis-aligned rectangle.
    Rect { min: [f64; 2], max: [f64; 2] },
    /// Rectangle rotated by `yaw` about its center.
    Oriented { center: [f64; 2], half_extents: [f64; 2], yaw: f64 },
    Circle { center: [f64; 2], radius: f64 },
}

impl Footprint {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Footprint::Rect { min, max } => x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1],
            Footprint::Oriented { center, half_extents, yaw } => {
                let (lx, ly) = to_local(x - center[0], y - center[1], yaw);
                lx.abs() <= half_extents[0] && ly.abs() <= half_extents[1]
            }
            Footprint::Circle { center, radius } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                dx * dx + dy * dy <= radius * radius
            }
        }
    }

    /// Parameter interval `[t0, t1]` over which `o + t·d` lies inside the
    /// footprint. `d` need not be normalized; a zero `d` yields either the
    /// whole line or nothing.
    pub fn ray_interval(&self, o: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
        match *self {
            Footprint::Rect { min, max } => slab_2d(o, d, [min[0], min[1]], [max[0], max[1]]),
            Footprint::Oriented { center, half_extents, yaw } => {
                let (ox, oy) = to_local(o[0] - center[0], o[1] - center[1], yaw);
                let (dx, dy) = to_local(d[0], d[1], yaw);
                slab_2d(
                    [ox, oy],
                    [dx, dy],
                    [-half_extents[0], -half_extents[1]],
                    [half_extents[0], half_extents[1]],
                )
            }
            Footprint::Circle { center, radius } => {
                let (px, py) = (o[0] - center[0], o[1] - center[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                let c = px * px + py * py - radius * radius;
                if a < EPS {
                    return (c <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let b = 2.0 * (px * d[0] + py * d[1]);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
            }
        }
    }

    /// Center and radius of a circle enclosing the footprint.
    pub fn bounding_circle(&self) -> ([f64; 2], f64) {
        match *self {
            Footprint::Rect { min, max } => {
                let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
                (c, ((max[0] - min[0]) / 2.0).hypot((max[1] - min[1]) / 2.0))
            }
            Footprint::Oriented { center, half_extents, .. } => (center, half_extents[0].hypot(half_extents[1])),
            Footprint::Circle { center, radius } => (center, radius),
        }
    }

    /// Same shape moved to `center` and rotated by `yaw` (rectangles become
    /// oriented).
    pub fn placed(&self, center: [f64; 2], yaw: f64) -> Footprint {
        match *self {
            Footprint::Rect { min, max } => Footprint::Oriented {
                center,
                half_extents: [(max[0] - min[0]) / 2.0, (max[1] - min[1]) / 2.0],
                yaw,
            },
            Footprint::Oriented { half_extents, yaw: y0, .. } => {
                Footprint::Oriented { center, half_extents, yaw: y0 + yaw }
            }
            Footprint::Circle { radius, .. } => Footprint::Circle { center, radius },
        }
    }

    fn is_finite(&self) -> bool {
        let vals: Vec<f64> = match *self {
            Footprint::Rect { min, max } => vec![min[0], min[1], max[0], max[1]],
            Footprint::Oriented { center, half_extents, yaw } => {
                vec![center[0], center[1], half_extents[0], half_extents[1], yaw]
            }
            Footprint::Circle { center, radius } => vec![center[0], center[1], radius],
        };
        vals.iter().all(|v| v.is_finite())
    }
}

fn to_local(x: f64, y: f64, yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c * x + s * y, -s * x + c * y)
}

fn slab_2d(o: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..2 {
        if d[i].abs() < EPS {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
        } else {
            let a = (lo[i] - o[i]) / d[i];
            let b = (hi[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Infinite horizontal ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub id: u32,
    pub height: f64,
}

/// Region whose ground surface sits at `height` (sidewalk, platform, step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPatch {
    pub id: u32,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

/// Rectangular depression `depth` meters below the surrounding surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pit {
    pub id: u32,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub depth: f64,
}

/// Static cuboid standing on `base_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub id: u32,
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
    pub base_z: f64,
    pub height: f64,
}

/// Static vertical cylinder; the thin-obstacle primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderObstacle {
    pub id: u32,
    pub center: [f64; 2],
    pub radius: f64,
    pub base_z: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActorShape {
    Box { half_extents: [f64; 2], height: f64 },
    Cylinder { radius: f64, height: f64 },
}

/// Timed planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Piecewise-linear planar trajectory. Waypoints are sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(mut waypoints: Vec<Waypoint>) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::InvalidScene("trajectory needs at least one waypoint".into()));
        }
        if waypoints.iter().any(|w| !(w.t.is_finite() && w.x.is_finite() && w.y.is_finite() && w.yaw.is_finite())) {
            return Err(SimError::InvalidScene("non-finite waypoint".into()));
        }
        waypoints.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self { waypoints })
    }

    /// Stationary at `(x, y, yaw)` over `[t0, t1]`.
    pub fn stationary(x: f64, y: f64, yaw: f64, t0: f64, t1: f64) -> Self {
        Self {
            waypoints: vec![Waypoint { t: t0, x, y, yaw }, Waypoint { t: t1, x, y, yaw }],
        }
    }

    /// Constant-velocity straight line through `(x, y)` at time 0.
    pub fn linear(x: f64, y: f64, vx: f64, vy: f64, t0: f64, t1: f64) -> Self {
        let yaw = if vx == 0.0 && vy == 0.0 { 0.0 } else { vy.atan2(vx) };
        Self {
            waypoints: vec![
                Waypoint { t: t0, x: x + vx * t0, y: y + vy * t0, yaw },
                Waypoint { t: t1, x: x + vx * t1, y: y + vy * t1, yaw },
            ],
        }
    }

    pub fn time_span(&self) -> (f64, f64) {
        (self.waypoints[0].t, self.waypoints[self.waypoints.len() - 1].t)
    }

    /// Interpolated `(x, y, yaw)`; yaw follows the shorter arc.
    pub fn at(&self, t: f64) -> Result<(f64, f64, f64), SimError> {
        let (start, end) = self.time_span();
        if !(t >= start - 1e-9 && t <= end + 1e-9) {
            return Err(SimError::TrajectoryOutOfRange { t, start, end });
        }
        let w = &self.waypoints;
        if w.len() == 1 {
            return Ok((w[0].x, w[0].y, w[0].yaw));
        }
        let i = w.partition_point(|p| p.t <= t).clamp(1, w.len() - 1);
        let (a, b) = (&w[i - 1], &w[i]);
        let span = b.t - a.t;
        let s = if span > 0.0 { ((t - a.t) / span).clamp(0.0, 1.0) } else { 1.0 };
        let mut dyaw = (b.yaw - a.yaw) % std::f64::consts::TAU;
        if dyaw > std::f64::consts::PI {
            dyaw -= std::f64::consts::TAU;
        } else if dyaw < -std::f64::consts::PI {
            dyaw += std::f64::consts::TAU;
        }
        Ok((a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), a.yaw + s * dyaw))
    }
}

/// Moving prism following a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub shape: ActorShape,
    pub base_z: f64,
    pub trajectory: Trajectory,
}

/// Obstacle class used for category attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Ground,
    Patch,
    Pit,
    Box,
    Cylinder,
    Actor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub ground: Option<GroundPlane>,
    #[serde(default)]
    pub patches: Vec<GroundPatch>,
    #[serde(default)]
    pub pits: Vec<Pit>,
    #[serde(default)]
    pub boxes: Vec<BoxObstacle>,
    #[serde(default)]
    pub cylinders: Vec<CylinderObstacle>,
    #[serde(default)]
    pub actors: Vec<Actor>,
    #[serde(default)]
    pub seed: u64,
}

/// A vertical prism instantiated at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solid {
    pub id: u32,
    pub class: ObjectClass,
    pub footprint: Footprint,
    pub base_z: f64,
    pub top_z: f64,
    pub dynamic: bool,
}

/// Ground surface at a horizontal position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub height: f64,
    /// Region that defines the surface here (plane, patch or pit id).
    pub object_id: u32,
    pub class: ObjectClass,
}

impl SceneSpec {
    /// Scene with only a ground plane at `z = 0`, id 0.
    pub fn flat_ground() -> Self {
        Self {
            ground: Some(GroundPlane { id: 0, height: 0.0 }),
            patches: vec![],
            pits: vec![],
            boxes: vec![],
            cylinders: vec![],
            actors: vec![],
            seed: 0,
        }
    }

    pub fn empty() -> Self {
        Self { ground: None, ..Self::flat_ground() }
    }

    /// Largest object id in use, 0 for an empty scene.
    pub fn max_id(&self) -> u32 {
        self.object_ids().into_iter().max().unwrap_or(0)
    }

    fn object_ids(&self) -> Vec<u32> {
        self.ground
            .iter()
            .map(|g| g.id)
            .chain(self.patches.iter().map(|p| p.id))
            .chain(self.pits.iter().map(|p| p.id))
            .chain(self.boxes.iter().map(|b| b.id))
            .chain(self.cylinders.iter().map(|c| c.id))
            .chain(self.actors.iter().map(|a| a.id))
            .collect()
    }

    /// Checks finiteness, positive sizes and id uniqueness.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut ids = self.object_ids();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidScene("duplicate object id".into()));
        }
        let bad = |what: &str| Err(SimError::InvalidScene(format!("invalid {what}")));
        if let Some(g) = &self.ground {
            if !g.height.is_finite() {
                return bad("ground plane");
            }
        }
        for p in &self.patches {
            if !(p.height.is_finite() && Footprint::Rect { min: p.min, max: p.max }.is_finite() && p.min[0] < p.max[0] && p.min[1] < p.max[1]) {
                return bad("patch");
            }
        }
        for p in &self.pits {
            if !(p.depth.is_finite() && p.depth > 0.0 && Footprint::Rect { min: p.min, max: p.max }.is_finite() && p.min[0] < p.max[0] && p.min[1] < p.max[1]) {
                return bad("pit");
            }
        }
        for b in &self.boxes {
            if !(b.half_extents[0] > 0.0 && b.half_extents[1] > 0.0 && b.height > 0.0 && b.base_z.is_finite() && b.yaw.is_finite() && b.center.iter().all(|v| v.is_finite()) && b.height.is_finite()) {
                return bad("box");
            }
        }
        for c in &self.cylinders {
            if !(c.radius > 0.0 && c.height > 0.0 && c.radius.is_finite() && c.height.is_finite() && c.base_z.is_finite() && c.center.iter().all(|v| v.is_finite())) {
                return bad("cylinder");
            }
        }
        for a in &self.actors {
            let ok = match a.shape {
                ActorShape::Box { half_extents, height } => half_extents[0] > 0.0 && half_extents[1] > 0.0 && height > 0.0,
                ActorShape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
            };
            if !ok || a.trajectory.waypoints.is_empty() || !a.base_z.is_finite() {
                return bad("actor");
            }
        }
        Ok(())
    }

    /// Ground surface at `(x, y)`, `None` over the void.
    ///
    /// Patches replace the base plane (the highest covering patch wins);
    /// pits then lower whatever surface they sit in by their depth (the
    /// deepest covering pit wins).
    pub fn surface_at(&self, x: f64, y: f64) -> Option<Surface> {
        let mut surface = self
            .ground
            .map(|g| Surface { height: g.height, object_id: g.id, class: ObjectClass::Ground });
        let mut best_patch: Option<&GroundPatch> = None;
        for p in &self.patches {
            if (Footprint::Rect { min: p.min, max: p.max }).contains(x, y)
                && best_patch.is_none_or(|b| p.height > b.height)
            {
                best_patch = Some(p);
            }
        }
        if let Some(p) = best_patch {
            surface = Some(Surface { height: p.height, object_id: p.id, class: ObjectClass::Patch });
        }
        let mut surface = surface?;
        let mut best_pit: Option<&Pit> = None;
        for p in &self.pits {
            if (Footprint::Rect { min: p.min, max: p.max }).contains(x, y)
                && best_pit.is_none_or(|b| p.depth > b.depth)
            {
                best_pit = Some(p);
            }
        }
        if let Some(p) = best_pit {
            surface = Surface { height: surface.height - p.depth, object_id: p.id, class: ObjectClass::Pit };
        }
        Some(surface)
    }

    /// Footprints of every ground region whose boundary can change the
    /// surface height.
    pub fn ground_regions(&self) -> impl Iterator<Item = Footprint> + '_ {
        self.patches
            .iter()
            .map(|p| Footprint::Rect { min: p.min, max: p.max })
            .chain(self.pits.iter().map(|p| Footprint::Rect { min: p.min, max: p.max }))
    }

    /// All prisms (static and actors) at time `t`.
    pub fn solids_at(&self, t: f64) -> Result<Vec<Solid>, SimError> {
        let mut out = Vec::with_capacity(self.boxes.len() + self.cylinders.len() + self.actors.len());
        for b in &self.boxes {
            out.push(Solid {
                id: b.id,
                class: ObjectClass::Box,
                footprint: Footprint::Oriented { center: b.center, half_extents: b.half_extents, yaw: b.yaw },
                base_z: b.base_z,
                top_z: b.base_z + b.height,
                dynamic: false,
            });
        }
        for c in &self.cylinders {
            out.push(Solid {
                id: c.id,
                class: ObjectClass::Cylinder,
                footprint: Footprint::Circle { center: c.center, radius: c.radius },
                base_z: c.base_z,
                top_z: c.base_z + c.height,
                dynamic: false,
            });
        }
        for a in &self.actors {
            let (x, y, yaw) = a.trajectory.at(t)?;
            let (footprint, height) = match a.shape {
                ActorShape::Box { half_extents, height } => {
                    (Footprint::Oriented { center: [x, y], half_extents, yaw }, height)
                }
                ActorShape::Cylinder { radius, height } => (Footprint::Circle { center: [x, y], radius }, height),
            };
            out.push(Solid {
                id: a.id,
                class: ObjectClass::Actor,
                footprint,
                base_z: a.base_z,
                top_z: a.base_z + height,
                dynamic: true,
            });
        }
        Ok(out)
    }

    /// Class of the object with `id`, if any.
    pub fn class_of(&self, id: u32) -> Option<ObjectClass> {
        if self.ground.is_some_and(|g| g.id == id) {
            return Some(ObjectClass::Ground);
        }
        if self.patches.iter().any(|p| p.id == id) {
            return Some(ObjectClass::Patch);
        }
        if self.pits.iter().any(|p| p.id == id) {
            return Some(ObjectClass::Pit);
        }
        if self.boxes.iter().any(|p| p.id == id) {
            return Some(ObjectClass::Box);
        }
        if self.cylinders.iter().any(|p| p.id == id) {
            return Some(ObjectClass::Cylinder);
        }
        if self.actors.iter().any(|p| p.id == id) {
            return Some(ObjectClass::Actor);
        }
        None
    }

    /// Scene rotated about the vertical axis through `(cx, cy)` by `angle`.
    ///
    /// Axis-aligned regions only stay axis-aligned for multiples of 90°;
    /// other angles are rejected when the scene has patches or pits.
    pub fn rotated_about(&self, cx: f64, cy: f64, angle: f64) -> Result<SceneSpec, SimError> {
        let quarter = angle / std::f64::consts::FRAC_PI_2;
        let quarter_turn = (quarter - quarter.round()).abs() < 1e-12;
        if !quarter_turn && (!self.patches.is_empty() || !self.pits.is_empty()) {
            return Err(SimError::InvalidScene("axis-aligned regions need quarter-turn rotations".into()));
        }
        let (s, c) = angle.sin_cos();
        let rot = |p: [f64; 2]| {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            [cx + c * dx - s * dy, cy + s * dx + c * dy]
        };
        let rot_rect = |min: [f64; 2], max: [f64; 2]| {
            let a = rot(min);
            let b = rot(max);
            ([a[0].min(b[0]), a[1].min(b[1])], [a[0].max(b[0]), a[1].max(b[1])])
        };
        let mut out = self.clone();
        for p in &mut out.patches {
            (p.min, p.max) = rot_rect(p.min, p.max);
        }
        for p in &mut out.pits {
            (p.min, p.max) = rot_rect(p.min, p.max);
        }
        for b in &mut out.boxes {
            b.center = rot(b.center);
            b.yaw += angle;
        }
        for cyl in &mut out.cylinders {
            cyl.center = rot(cyl.center);
        }
        for a in &mut out.actors {
            for w in &mut a.trajectory.waypoints {
                let p = rot([w.x, w.y]);
                w.x = p[0];
                w.y = p[1];
                w.yaw += angle;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_interval() {
        let c = Footprint::Circle { center: [5.0, 0.0], radius: 1.0 };
        let (a, b) = c.ray_interval([0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((a - 4.0).abs() < 1e-12 && (b - 6.0).abs() < 1e-12);
        assert!(c.ray_interval([0.0, 0.0], [0.0, 1.0]).is_none());
    }

    #[test]
    fn oriented_rect_interval() {
        let r = Footprint::Oriented { center: [4.0, 0.0], half_extents: [1.0, 1.0], yaw: std::f64::consts::FRAC_PI_4 };
        let (a, _) = r.ray_interval([0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((a - (4.0 - 2f64.sqrt())).abs() < 1e-12);
        assert!(r.contains(4.0, 1.3));
        assert!(!r.contains(5.0, 1.0));
    }

    #[test]
    fn surface_layering() {
        let mut s = SceneSpec::flat_ground();
        s.patches.push(GroundPatch { id: 1, min: [0.0, 0.0], max: [2.0, 2.0], height: 0.2 });
        s.pits.push(Pit { id: 2, min: [1.0, 1.0], max: [1.5, 1.5], depth: 1.0 });
        assert_eq!(s.surface_at(-1.0, -1.0).unwrap().height, 0.0);
        assert_eq!(s.surface_at(0.5, 0.5).unwrap().height, 0.2);
        let pit = s.surface_at(1.2, 1.2).unwrap();
        assert!((pit.height + 0.8).abs() < 1e-12);
        assert_eq!(pit.class, ObjectClass::Pit);
        assert!(SceneSpec::empty().surface_at(0.0, 0.0).is_none());
    }

    #[test]
    fn trajectory_interpolates_and_bounds() {
        let t = Trajectory::linear(0.0, 0.0, 2.0, 0.0, -1.0, 1.0);
        let (x, y, _) = t.at(0.5).unwrap();
        assert!((x - 1.0).abs() < 1e-12 && y == 0.0);
        assert!(matches!(t.at(-2.0), Err(SimError::TrajectoryOutOfRange { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = SceneSpec::flat_ground();
        s.cylinders.push(CylinderObstacle { id: 0, center: [1.0, 1.0], radius: 0.1, base_z: 0.0, height: 1.0 });
        assert!(s.validate().is_err());
    }
}
