use std::fmt::Write;

use cad_core::{CadProfile, PointFrame, PolarGridSpec};

/// Point colors by frame age, current frame first.
const AGE_COLORS: [&str; 5] = ["#111111", "#d95f02", "#7570b3", "#1b9e77", "#e7298a"];

pub struct PlotInput<'a> {
    pub grid: PolarGridSpec,
    pub profile: &'a CadProfile,
    pub gt: Option<&'a CadProfile>,
    /// Frames in current-frame coordinates, current first.
    pub frames: &'a [PointFrame],
    /// Width and height in pixels.
    pub size: u32,
}

struct Canvas {
    center: f64,
    scale: f64,
}

impl Canvas {
    fn at(&self, r: f64, phi: f64) -> (f64, f64) {
        // SVG y grows downward
        (self.center + self.scale * r * phi.cos(), self.center - self.scale * r * phi.sin())
    }
}

/// Closed outline of a profile: a radial segment into each sector and an
/// arc across it at the outer edge of the last accessible bin.
fn profile_path(c: &Canvas, grid: &PolarGridSpec, p: &CadProfile) -> String {
    let w = grid.r_width();
    let dphi = grid.phi_width();
    let mut d = String::new();
    for (j, &bin) in p.depth_index.iter().enumerate() {
        let r = (bin + 1) as f64 * w;
        let (x0, y0) = c.at(r, j as f64 * dphi);
        let (x1, y1) = c.at(r, (j + 1) as f64 * dphi);
        let rp = r * c.scale;
        let cmd = if j == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{x0:.2},{y0:.2} A{rp:.2},{rp:.2} 0 0 0 {x1:.2},{y1:.2} ");
    }
    d.push('Z');
    d
}

/// Renders the accessible region, an optional ground-truth outline and an
/// optional point overlay. Output depends only on the inputs.
pub fn render_svg(input: &PlotInput) -> String {
    let size = input.size as f64;
    let grid = &input.grid;
    let c = Canvas { center: size / 2.0, scale: 0.45 * size / grid.max_radius() };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        input.size
    );
    let _ = writeln!(s, r#"<rect width="{0}" height="{0}" fill="white"/>"#, input.size);
    let _ = writeln!(
        s,
        r##"<circle cx="{0:.2}" cy="{0:.2}" r="{1:.2}" fill="none" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##,
        c.center,
        c.scale * grid.max_radius()
    );
    let _ = writeln!(
        s,
        r##"<path id="accessible" d="{}" fill="#3b7dd8" fill-opacity="0.45" stroke="#1f4f99" stroke-width="1"/>"##,
        profile_path(&c, grid, input.profile)
    );
    if let Some(gt) = input.gt {
        let _ = writeln!(
            s,
            r##"<path id="ground-truth" d="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
            profile_path(&c, grid, gt)
        );
    }
    if !input.frames.is_empty() {
        s.push_str("<g id=\"points\">\n");
        // oldest first so the current frame is drawn on top
        for (age, frame) in input.frames.iter().enumerate().rev() {
            let color = AGE_COLORS[age.min(AGE_COLORS.len() - 1)];
            for p in frame.points.iter().filter(|p| p.radius() < grid.max_radius()) {
                let (x, y) = (c.center + c.scale * p.x, c.center - c.scale * p.y);
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1" fill="{color}"/>"#);
            }
        }
        s.push_str("</g>\n");
    }
    let _ = writeln!(s, r#"<circle cx="{0:.2}" cy="{0:.2}" r="3" fill="black"/>"#, c.center);
    s.push_str("</svg>\n");
    s
}
