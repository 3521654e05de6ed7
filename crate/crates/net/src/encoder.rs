//! Point-to-pillar input preparation.

use cad_autodiff::Tensor;
use cad_core::geometry::normalize_angle;
use cad_core::{PointFrame, PolarGridSpec};

use crate::config::FeatureMode;

/// Feature rows and pillar ids of one frame's in-grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRows {
    /// `(n, width)`; `None` when no point falls in the grid.
    pub features: Option<Tensor>,
    /// Flat pillar id `r_bin * n_phi + phi_bin` per row.
    pub pillar_ids: Vec<usize>,
}

/// Network input for one sample, current frame first.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub frames: Vec<FrameRows>,
}

impl PreparedInput {
    pub fn n_points(&self) -> usize {
        self.frames.iter().map(|f| f.pillar_ids.len()).sum()
    }

    pub fn current_points(&self) -> usize {
        self.frames.first().map_or(0, |f| f.pillar_ids.len())
    }
}

/// Builds per-point features of frames already expressed in the current
/// vehicle frame. Points outside the cylinder are dropped.
pub fn prepare_input(frames: &[PointFrame], spec: &PolarGridSpec, mode: FeatureMode) -> PreparedInput {
    let width = mode.width();
    let frames = frames
        .iter()
        .map(|frame| {
            let mut data = Vec::with_capacity(frame.len() * width);
            let mut ids = Vec::with_capacity(frame.len());
            for p in &frame.points {
                let Some(idx) = spec.bin_point(p) else { continue };
                ids.push(spec.flat(idx));
                match mode {
                    FeatureMode::Raw => {
                        data.extend_from_slice(&[p.x / spec.max_radius(), p.y / spec.max_radius(), p.z, p.intensity])
                    }
                    FeatureMode::Augmented => {
                        let r = p.radius();
                        let dphi = normalize_angle(p.azimuth() - spec.phi_center(idx.phi_bin) + std::f64::consts::PI)
                            - std::f64::consts::PI;
                        let r_center = (idx.r_bin as f64 + 0.5) * spec.r_width();
                        data.extend_from_slice(&[
                            r * dphi.cos() / spec.max_radius(),
                            r * dphi.sin(),
                            p.z,
                            p.intensity,
                            (r - r_center) / spec.r_width(),
                            dphi / spec.phi_width(),
                            (p.z - spec.z_min()) / spec.height(),
                        ]);
                    }
                }
            }
            let features = (!ids.is_empty()).then(|| Tensor::new(vec![ids.len(), width], data).expect("row layout"));
            FrameRows { features, pillar_ids: ids }
        })
        .collect();
    PreparedInput { frames }
}
