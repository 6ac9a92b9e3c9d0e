//! Meridional cross-section drawings.

use crate::lens::{LensSystem, AIR};
use std::fmt::Write as _;

/// Pixels per millimeter.
const SCALE: f64 = 6.0;
const MARGIN: f64 = 5.0;
/// Points per drawn surface profile.
const PROFILE_POINTS: usize = 33;

/// Points `(z, x)` along a surface profile from `+extent` to `-extent`.
pub fn surface_profile(lens: &LensSystem, surface: usize) -> Vec<[f64; 2]> {
    let s = &lens.surfaces()[surface];
    let z0 = lens.vertex_positions()[surface];
    (0..PROFILE_POINTS)
        .map(|i| {
            let x = s.extent * (1.0 - 2.0 * i as f64 / (PROFILE_POINTS - 1) as f64);
            [z0 + s.sag(x), x]
        })
        .collect()
}

struct Frame {
    z_min: f64,
    half: f64,
}

impl Frame {
    fn px(&self, [z, x]: [f64; 2]) -> (f64, f64) {
        ((z - self.z_min + MARGIN) * SCALE, (self.half + MARGIN - x) * SCALE)
    }
}

fn points_attr(frame: &Frame, pts: impl IntoIterator<Item = [f64; 2]>) -> String {
    let mut out = String::new();
    for p in pts {
        let (u, v) = frame.px(p);
        if !out.is_empty() {
            out.push(' ');
        }
        write!(out, "{u:.3},{v:.3}").expect("write to string");
    }
    out
}

/// SVG drawing of `lens`: glass fills, surface profiles, the sensor line
/// and optional ray paths given as 3D polylines (drawn in the x-z plane).
/// The target plane is not drawn; ray segments are clipped to start at
/// the first vertex's left margin.
pub fn render_svg(lens: &LensSystem, rays: Option<&[Vec<[f64; 3]>]>) -> String {
    let sensor = lens.sensor_z();
    let max_extent = lens.surfaces().iter().map(|s| s.extent).fold(0.0, f64::max);
    let sensor_half = max_extent.max(crate::loss::FULL_FRAME_DIAGONAL / 2.0);
    let profiles: Vec<Vec<[f64; 2]>> = (0..lens.surface_count())
        .map(|i| surface_profile(lens, i))
        .collect();
    let z_min = profiles
        .iter()
        .flatten()
        .map(|p| p[0])
        .fold(0.0f64, f64::min)
        - 10.0;
    let z_max = profiles.iter().flatten().map(|p| p[0]).fold(sensor, f64::max);
    let frame = Frame {
        z_min,
        half: sensor_half,
    };
    let width = (z_max - z_min + 2.0 * MARGIN) * SCALE;
    let height = (2.0 * sensor_half + 2.0 * MARGIN) * SCALE;
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.3} {height:.3}\">"
    )
    .expect("write to string");
    for (i, s) in lens.surfaces().iter().enumerate() {
        if s.index_after != AIR && i + 1 < lens.surface_count() {
            let mut outline = profiles[i].clone();
            outline.extend(profiles[i + 1].iter().rev());
            writeln!(
                svg,
                "  <polygon class=\"glass\" points=\"{}\" fill=\"#cfe3f5\" stroke=\"none\"/>",
                points_attr(&frame, outline)
            )
            .expect("write to string");
        }
    }
    for p in &profiles {
        writeln!(
            svg,
            "  <polyline class=\"surface\" points=\"{}\" fill=\"none\" stroke=\"#1f3b57\" stroke-width=\"1.5\"/>",
            points_attr(&frame, p.iter().copied())
        )
        .expect("write to string");
    }
    if let Some(rays) = rays {
        for path in rays {
            let pts = path
                .iter()
                .map(|p| clip_start(p, path, z_min))
                .map(|p| [p[2], p[0]]);
            writeln!(
                svg,
                "  <polyline class=\"ray\" points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"0.6\"/>",
                points_attr(&frame, pts)
            )
            .expect("write to string");
        }
    }
    let (u, v0) = frame.px([sensor, sensor_half]);
    let (_, v1) = frame.px([sensor, -sensor_half]);
    writeln!(
        svg,
        "  <line class=\"sensor\" x1=\"{u:.3}\" y1=\"{v0:.3}\" x2=\"{u:.3}\" y2=\"{v1:.3}\" stroke=\"#000000\" stroke-width=\"2\"/>"
    )
    .expect("write to string");
    svg.push_str("</svg>\n");
    svg
}

/// Moves a path's origin forward along its first segment to `z_min`.
fn clip_start(p: &[f64; 3], path: &[[f64; 3]], z_min: f64) -> [f64; 3] {
    if !std::ptr::eq(p, &path[0]) || path.len() < 2 || p[2] >= z_min {
        return *p;
    }
    let q = path[1];
    let t = (z_min - p[2]) / (q[2] - p[2]);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), z_min]
}
