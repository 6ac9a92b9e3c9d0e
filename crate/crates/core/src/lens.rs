//! Lens data model and the flat parameter-vector bijection.
//!
//! Every refractive surface carries four parameters, stored entrance to
//! sensor as `(curvature, extent, gap, index_after)`. A lens with `K`
//! surfaces therefore maps onto a vector of length `4K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of parameters per surface.
pub const PARAMS_PER_SURFACE: usize = 4;

/// Refractive index of the medium around the lens.
pub const AIR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LensError {
    #[error("parameter vector has length {found}, elements imply {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("surface {surface}: {field} = {value} {reason}")]
    Invalid {
        surface: usize,
        field: Field,
        value: f64,
        reason: &'static str,
    },
    #[error("elements span {spanned} surfaces but the lens has {surfaces}")]
    Partition { spanned: usize, surfaces: usize },
    #[error("target plane at z = {0} must lie before the first surface")]
    TargetPlane(f64),
}

/// One of the four per-surface parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Curvature,
    Extent,
    Gap,
    IndexAfter,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Curvature, Field::Extent, Field::Gap, Field::IndexAfter];

    /// Field stored at position `i` of the flat parameter vector.
    pub fn of_index(i: usize) -> Field {
        Self::ALL[i % PARAMS_PER_SURFACE]
    }

    pub fn offset(self) -> usize {
        match self {
            Field::Curvature => 0,
            Field::Extent => 1,
            Field::Gap => 2,
            Field::IndexAfter => 3,
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Field::Curvature => "curvature",
            Field::Extent => "extent",
            Field::Gap => "gap",
            Field::IndexAfter => "index_after",
        })
    }
}

/// Flat index of `field` on surface `surface`.
pub fn param_index(surface: usize, field: Field) -> usize {
    surface * PARAMS_PER_SURFACE + field.offset()
}

/// A spherical refractive surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    /// Signed curvature in 1/mm; positive when the center of curvature lies
    /// toward the sensor.
    pub curvature: f64,
    /// Semi-aperture in mm.
    pub extent: f64,
    /// Axial distance to the next surface (or the sensor) in mm.
    pub gap: f64,
    /// Refractive index of the medium after this surface.
    pub index_after: f64,
}

impl SurfaceSpec {
    pub fn new(curvature: f64, extent: f64, gap: f64, index_after: f64) -> Self {
        Self {
            curvature,
            extent,
            gap,
            index_after,
        }
    }

    /// Axial sag of the surface at radial height `r`.
    pub fn sag(&self, r: f64) -> f64 {
        let k = self.curvature;
        k * r * r / (1.0 + (1.0 - k * k * r * r).sqrt())
    }

    pub fn check(&self, surface: usize) -> Result<(), LensError> {
        let bad = |field, value, reason| Err(LensError::Invalid {
            surface,
            field,
            value,
            reason,
        });
        if !self.curvature.is_finite() {
            return bad(Field::Curvature, self.curvature, "is not finite");
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(Field::Extent, self.extent, "must be positive");
        }
        if !(self.gap >= 0.0 && self.gap.is_finite()) {
            return bad(Field::Gap, self.gap, "must be non-negative");
        }
        if !(self.index_after >= 1.0 && self.index_after.is_finite()) {
            return bad(Field::IndexAfter, self.index_after, "must be at least 1");
        }
        if self.curvature.abs() * self.extent >= 1.0 {
            return bad(
                Field::Extent,
                self.extent,
                "exceeds the hemisphere of the surface (|curvature|·extent ≥ 1)",
            );
        }
        Ok(())
    }
}

/// Kind of a lens element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Singlet,
    #[serde(alias = "doublet")]
    CementedDoublet,
}

impl ElementKind {
    pub fn surface_count(self) -> usize {
        match self {
            ElementKind::Singlet => 2,
            ElementKind::CementedDoublet => 3,
        }
    }
}

/// An ordered stack of singlets and cemented doublets between a target
/// plane and a sensor plane.
///
/// Coordinates put the first surface vertex at `z = 0`; the sensor sits at
/// the sum of all gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct LensSystem {
    surfaces: Vec<SurfaceSpec>,
    elements: Vec<ElementKind>,
    target_z: f64,
    /// Sensor distance used only by a lens without surfaces.
    bare_gap: f64,
}

impl LensSystem {
    pub fn new(
        surfaces: Vec<SurfaceSpec>,
        elements: Vec<ElementKind>,
        target_z: f64,
    ) -> Result<Self, LensError> {
        let lens = Self {
            surfaces,
            elements,
            target_z,
            bare_gap: 0.0,
        };
        lens.validate()?;
        Ok(lens)
    }

    /// A lens with no surfaces: free propagation over `gap` to the sensor.
    pub fn empty(target_z: f64, gap: f64) -> Self {
        Self {
            surfaces: Vec::new(),
            elements: Vec::new(),
            target_z,
            bare_gap: gap,
        }
    }

    pub fn validate(&self) -> Result<(), LensError> {
        if !(self.target_z <= 0.0 && self.target_z.is_finite()) {
            return Err(LensError::TargetPlane(self.target_z));
        }
        let spanned: usize = self.elements.iter().map(|e| e.surface_count()).sum();
        if spanned != self.surfaces.len() {
            return Err(LensError::Partition {
                spanned,
                surfaces: self.surfaces.len(),
            });
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            s.check(i)?;
        }
        for (e, range) in self.element_spans().iter().enumerate() {
            let last = range.end - 1;
            let s = &self.surfaces[last];
            if s.index_after != AIR {
                return Err(LensError::Invalid {
                    surface: last,
                    field: Field::IndexAfter,
                    value: s.index_after,
                    reason: "must be 1 (air) after the last surface of an element",
                });
            }
            if self.elements[e] == ElementKind::CementedDoublet {
                for i in range.start..last {
                    if self.surfaces[i].index_after <= AIR {
                        return Err(LensError::Invalid {
                            surface: i,
                            field: Field::IndexAfter,
                            value: self.surfaces[i].index_after,
                            reason: "must exceed 1 inside a cemented doublet",
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn surfaces(&self) -> &[SurfaceSpec] {
        &self.surfaces
    }

    pub fn elements(&self) -> &[ElementKind] {
        &self.elements
    }

    pub fn target_z(&self) -> f64 {
        self.target_z
    }

    pub fn surface_count(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Axial position of each surface vertex.
    pub fn vertex_positions(&self) -> Vec<f64> {
        let mut z = 0.0;
        self.surfaces
            .iter()
            .map(|s| {
                let here = z;
                z += s.gap;
                here
            })
            .collect()
    }

    /// Axial position of the sensor plane.
    pub fn sensor_z(&self) -> f64 {
        if self.surfaces.is_empty() {
            self.bare_gap
        } else {
            self.surfaces.iter().map(|s| s.gap).sum()
        }
    }

    /// Distance from the last surface (or the first vertex for an empty
    /// lens) to the sensor.
    pub fn back_gap(&self) -> f64 {
        self.surfaces.last().map_or(self.bare_gap, |s| s.gap)
    }

    /// Surface index range covered by each element.
    pub fn element_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.elements
            .iter()
            .map(|e| {
                let r = start..start + e.surface_count();
                start = r.end;
                r
            })
            .collect()
    }

    /// Center thickness of each element: the sum of its internal gaps.
    pub fn element_thicknesses(&self) -> Vec<f64> {
        self.element_spans()
            .into_iter()
            .map(|r| self.surfaces[r.start..r.end - 1].iter().map(|s| s.gap).sum())
            .collect()
    }

    /// Refractive index in front of surface `i`.
    pub fn index_before(&self, i: usize) -> f64 {
        if i == 0 {
            AIR
        } else {
            self.surfaces[i - 1].index_after
        }
    }

    /// Parameter indices that the topology pins: the air index after every
    /// element.
    pub fn structural_indices(&self) -> Vec<usize> {
        self.element_spans()
            .into_iter()
            .map(|r| param_index(r.end - 1, Field::IndexAfter))
            .collect()
    }

    /// Flat parameter vector, entrance to sensor.
    pub fn to_vector(&self) -> Vec<f64> {
        self.surfaces
            .iter()
            .flat_map(|s| [s.curvature, s.extent, s.gap, s.index_after])
            .collect()
    }

    /// Inverse of [`LensSystem::to_vector`] for a given element grouping.
    pub fn from_vector(
        theta: &[f64],
        elements: &[ElementKind],
        target_z: f64,
    ) -> Result<Self, LensError> {
        let count: usize = elements.iter().map(|e| e.surface_count()).sum();
        let expected = count * PARAMS_PER_SURFACE;
        if theta.len() != expected {
            return Err(LensError::LengthMismatch {
                expected,
                found: theta.len(),
            });
        }
        let surfaces = theta
            .chunks_exact(PARAMS_PER_SURFACE)
            .map(|c| SurfaceSpec::new(c[0], c[1], c[2], c[3]))
            .collect();
        Self::new(surfaces, elements.to_vec(), target_z)
    }

    /// Same topology with new parameters.
    pub fn with_vector(&self, theta: &[f64]) -> Result<Self, LensError> {
        if self.surfaces.is_empty() && theta.is_empty() {
            return Ok(self.clone());
        }
        Self::from_vector(theta, &self.elements, self.target_z)
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(
        surfaces: Vec<SurfaceSpec>,
        elements: Vec<ElementKind>,
        target_z: f64,
    ) -> Self {
        Self {
            surfaces,
            elements,
            target_z,
            bare_gap: 0.0,
        }
    }
}

/// Random lens generators for tests and benchmarks.
pub mod testing {
    use super::*;
    use rand::Rng;

    /// Random valid lens of `n` elements; doublet probability `p_doublet`.
    pub fn random_lens<R: Rng>(rng: &mut R, n: usize, p_doublet: f64) -> LensSystem {
        let mut surfaces = Vec::new();
        let mut elements = Vec::new();
        for e in 0..n {
            let kind = if rng.random::<f64>() < p_doublet {
                ElementKind::CementedDoublet
            } else {
                ElementKind::Singlet
            };
            elements.push(kind);
            let m = kind.surface_count();
            for j in 0..m {
                let extent = rng.random_range(8.0..14.0);
                let curvature = rng.random_range(-0.03..0.03);
                let last = j + 1 == m;
                let gap = if last {
                    if e + 1 == n {
                        rng.random_range(30.0..60.0)
                    } else {
                        rng.random_range(1.0..6.0)
                    }
                } else {
                    rng.random_range(3.0..6.0)
                };
                let index = if last { AIR } else { rng.random_range(1.45..1.8) };
                surfaces.push(SurfaceSpec::new(curvature, extent, gap, index));
            }
        }
        LensSystem::new(surfaces, elements, -200.0).expect("random lens is valid")
    }
}
