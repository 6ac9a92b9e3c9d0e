//! Bundled sample lenses: synthetic wide-angle, normal, macro and telephoto
//! designs built from classic layouts, scaled to an exact focal length and
//! focused on an object one meter in front of the first vertex.

use crate::lens::{ElementKind, LensSystem, SurfaceSpec};
use crate::paraxial::focal_length;
use crate::trace::{trace_path, Ray};
use std::fmt;

/// Object distance of the bundled lenses, mm.
pub const OBJECT_DISTANCE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StandardLens {
    Wide28,
    Normal50,
    Macro105,
    Tele135,
}

impl StandardLens {
    pub const ALL: [StandardLens; 4] = [
        StandardLens::Wide28,
        StandardLens::Normal50,
        StandardLens::Macro105,
        StandardLens::Tele135,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StandardLens::Wide28 => "wide28",
            StandardLens::Normal50 => "normal50",
            StandardLens::Macro105 => "macro105",
            StandardLens::Tele135 => "tele135",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }

    pub fn focal_length(self) -> f64 {
        match self {
            StandardLens::Wide28 => 28.0,
            StandardLens::Normal50 => 50.0,
            StandardLens::Macro105 => 105.0,
            StandardLens::Tele135 => 135.0,
        }
    }

    /// Unscaled layout: rows of (radius, semi-aperture, gap, index after),
    /// with element kinds. A zero radius is a flat surface.
    fn layout(self) -> (Vec<[f64; 4]>, Vec<ElementKind>) {
        use ElementKind::*;
        match self {
            // Negative meniscus in front of a triplet.
            StandardLens::Wide28 => (
                vec![
                    [80.0, 16.0, 1.5, 1.5168],
                    [40.0, 14.0, 15.0, 1.0],
                    [22.014, 10.0, 3.259, 1.6204],
                    [-435.76, 9.0, 6.008, 1.0],
                    [-22.213, 6.0, 1.0, 1.62],
                    [20.292, 6.0, 4.75, 1.0],
                    [79.684, 8.0, 2.952, 1.6204],
                    [-18.395, 8.0, 40.0, 1.0],
                ],
                vec![Singlet; 4],
            ),
            // Air-spaced triplet.
            StandardLens::Normal50 => (
                vec![
                    [22.014, 10.0, 3.259, 1.6204],
                    [-435.76, 9.0, 6.008, 1.0],
                    [-22.213, 6.0, 1.0, 1.62],
                    [20.292, 6.0, 4.75, 1.0],
                    [79.684, 8.0, 2.952, 1.6204],
                    [-18.395, 8.0, 40.0, 1.0],
                ],
                vec![Singlet; 3],
            ),
            // Two singlets and a cemented rear doublet.
            StandardLens::Macro105 => (
                vec![
                    [25.0, 11.0, 4.0, 1.611],
                    [-300.0, 11.0, 3.0, 1.0],
                    [-45.0, 9.0, 1.2, 1.6034],
                    [22.0, 9.0, 3.5, 1.0],
                    [-180.0, 9.0, 1.0, 1.54],
                    [23.0, 10.0, 4.5, 1.611],
                    [-34.0, 10.0, 80.0, 1.0],
                ],
                vec![Singlet, Singlet, CementedDoublet],
            ),
            // Positive front doublet, negative rear singlet.
            StandardLens::Tele135 => (
                vec![
                    [60.0, 16.0, 5.0, 1.5168],
                    [-45.0, 16.0, 2.0, 1.62],
                    [-150.0, 16.0, 30.0, 1.0],
                    [-40.0, 10.0, 2.0, 1.5168],
                    [-70.0, 10.0, 80.0, 1.0],
                ],
                vec![CementedDoublet, Singlet],
            ),
        }
    }

    /// The lens, scaled to its focal length and focused at
    /// [`OBJECT_DISTANCE`].
    pub fn lens(self) -> LensSystem {
        let (rows, elements) = self.layout();
        let surfaces: Vec<SurfaceSpec> = rows
            .iter()
            .map(|&[r, e, g, n]| SurfaceSpec::new(if r == 0.0 { 0.0 } else { 1.0 / r }, e, g, n))
            .collect();
        let base = LensSystem::new(surfaces, elements.clone(), -OBJECT_DISTANCE)
            .expect("bundled layouts are valid");
        let f0 = focal_length(&base).expect("bundled layouts have power");
        let s = self.focal_length() / f0;
        assert!(s > 0.0, "bundled layout {} has negative power", self.name());
        let scaled: Vec<SurfaceSpec> = base
            .surfaces()
            .iter()
            .map(|p| SurfaceSpec::new(p.curvature / s, p.extent * s, p.gap * s, p.index_after))
            .collect();
        let lens = LensSystem::new(scaled, elements, -OBJECT_DISTANCE).expect("scaling keeps validity");
        focus(&lens)
    }
}

impl fmt::Display for StandardLens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sets the back gap so that a near-axis ray from the on-axis object point
/// crosses the axis on the sensor.
pub fn focus(lens: &LensSystem) -> LensSystem {
    let mut theta = lens.to_vector();
    let back = theta.len() - 2;
    theta[back] = 10.0 * OBJECT_DISTANCE;
    let probe = lens.with_vector(&theta).expect("long back gap is valid");
    let h = 1e-4 * lens.surfaces()[0].extent;
    let ray = Ray::new([0.0, 0.0, lens.target_z()], [h, 0.0, -lens.target_z()]);
    let (points, outcome) = trace_path(&ray, &probe);
    assert!(outcome.hit().is_some(), "near-axis ray must reach the sensor");
    let [a, b] = [points[points.len() - 2], points[points.len() - 1]];
    let z = a[2] - a[0] * (b[2] - a[2]) / (b[0] - a[0]);
    let last_vertex = *probe.vertex_positions().last().expect("nonempty lens");
    theta[back] = z - last_vertex;
    lens.with_vector(&theta).expect("positive back focus")
}

/// Bundled lens by name.
pub fn standard_lens(name: &str) -> Option<LensSystem> {
    StandardLens::from_name(name).map(StandardLens::lens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::trace;

    #[test]
    fn focal_lengths_are_exact() {
        for l in StandardLens::ALL {
            let f = focal_length(&l.lens()).unwrap();
            assert!((f / l.focal_length() - 1.0).abs() < 1e-12, "{l}: {f}");
        }
    }

    #[test]
    fn on_axis_point_is_focused() {
        for l in StandardLens::ALL {
            let lens = l.lens();
            assert!(lens.back_gap() > 0.0, "{l}");
            let h = 1e-3 * lens.surfaces()[0].extent;
            let ray = Ray::new([0.0, 0.0, lens.target_z()], [h, 0.0, OBJECT_DISTANCE]);
            let hit = trace(&ray, &lens).hit().unwrap();
            assert!(hit[0].abs() < 1e-6 * h.max(1.0), "{l}: {hit:?}");
        }
    }
}
