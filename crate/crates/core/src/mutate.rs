//! Topology mutations: adding, removing and gluing singlets, splitting
//! doublets, followed by a paraxial projection back to the original
//! first-order behavior.

use crate::lens::{param_index, ElementKind, Field, LensError, LensSystem, SurfaceSpec, AIR};
use crate::paraxial::{paraxial_project, paraxial_state, ParaxialError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Common crown glass.
pub const CROWN_INDEX: f64 = 1.5168;

/// Air gap opened when a doublet is split, mm.
pub const SPLIT_GAP: f64 = 0.5;

/// Air gap behind a singlet inserted in front of the first element, mm.
pub const FRONT_INSERT_GAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "site", rename_all = "snake_case")]
pub enum MutationKind {
    /// Insert a singlet before element `slot` (or after the last one when
    /// `slot` equals the element count).
    AddSinglet(usize),
    RemoveSinglet(usize),
    /// Cement singlet `e` to singlet `e + 1`.
    GlueSinglets(usize),
    SplitDoublet(usize),
}

impl MutationKind {
    pub fn name(&self) -> &'static str {
        match self {
            MutationKind::AddSinglet(_) => "add",
            MutationKind::RemoveSinglet(_) => "remove",
            MutationKind::GlueSinglets(_) => "glue",
            MutationKind::SplitDoublet(_) => "split",
        }
    }

    pub fn site(&self) -> usize {
        match *self {
            MutationKind::AddSinglet(s)
            | MutationKind::RemoveSinglet(s)
            | MutationKind::GlueSinglets(s)
            | MutationKind::SplitDoublet(s) => s,
        }
    }

    /// Parses a name as printed by [`MutationKind::name`] with a site.
    pub fn from_name(name: &str, site: usize) -> Option<Self> {
        match name {
            "add" => Some(MutationKind::AddSinglet(site)),
            "remove" => Some(MutationKind::RemoveSinglet(site)),
            "glue" => Some(MutationKind::GlueSinglets(site)),
            "split" => Some(MutationKind::SplitDoublet(site)),
            _ => None,
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name(), self.site())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutateError {
    #[error("mutation {0} does not apply to this lens")]
    NotApplicable(MutationKind),
    #[error(transparent)]
    Lens(#[from] LensError),
}

/// Random geometry of an inserted singlet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingletSeed {
    pub thickness_mean: f64,
    pub thickness_sd: f64,
    pub thickness_floor: f64,
    pub curvature_sd: f64,
    pub index: f64,
}

impl Default for SingletSeed {
    fn default() -> Self {
        Self {
            thickness_mean: 1.0,
            thickness_sd: 1.0,
            thickness_floor: 0.1,
            curvature_sd: 0.01,
            index: CROWN_INDEX,
        }
    }
}

impl SingletSeed {
    /// Draws `(thickness, front curvature, back curvature)`; curvatures are
    /// redrawn until both surfaces fit within `extent`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, extent: f64) -> (f64, f64, f64) {
        let t = Normal::new(self.thickness_mean, self.thickness_sd)
            .expect("finite thickness distribution")
            .sample(rng)
            .abs()
            + self.thickness_floor;
        let k = Normal::new(0.0, self.curvature_sd).expect("finite curvature distribution");
        let draw_k = |rng: &mut R| loop {
            let v = k.sample(rng);
            if v.abs() * extent < 0.95 {
                return v;
            }
        };
        let k1 = draw_k(rng);
        let k2 = draw_k(rng);
        (t, k1, k2)
    }

    /// Log density of a draw, ignoring the curvature redraws (which only
    /// reject values far in the tails for typical extents).
    pub fn log_density(&self, t: f64, k1: f64, k2: f64) -> f64 {
        let x = t - self.thickness_floor;
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let tn = Normal::new(self.thickness_mean, self.thickness_sd).expect("finite");
        let kn = Normal::new(0.0, self.curvature_sd).expect("finite");
        (pdf(&tn, x) + pdf(&tn, -x)).ln() + pdf(&kn, k1).ln() + pdf(&kn, k2).ln()
    }
}

fn pdf(n: &Normal<f64>, x: f64) -> f64 {
    let z = (x - n.mean()) / n.std_dev();
    (-0.5 * z * z).exp() / (n.std_dev() * (2.0 * std::f64::consts::PI).sqrt())
}

/// Every legal mutation of `lens`.
pub fn applicable_mutations(lens: &LensSystem) -> Vec<MutationKind> {
    let elements = lens.elements();
    let e = elements.len();
    let mut out: Vec<MutationKind> = (0..=e).map(MutationKind::AddSinglet).collect();
    if e >= 2 {
        for (i, k) in elements.iter().enumerate() {
            if *k == ElementKind::Singlet {
                out.push(MutationKind::RemoveSinglet(i));
            }
        }
    }
    for i in 0..e.saturating_sub(1) {
        if elements[i] == ElementKind::Singlet && elements[i + 1] == ElementKind::Singlet {
            out.push(MutationKind::GlueSinglets(i));
        }
    }
    for (i, k) in elements.iter().enumerate() {
        if *k == ElementKind::CementedDoublet {
            out.push(MutationKind::SplitDoublet(i));
        }
    }
    out
}

/// A mutated lens and the parameter indices the projection must keep.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutated {
    pub lens: LensSystem,
    pub frozen: Vec<usize>,
}

fn rebuild(
    lens: &LensSystem,
    surfaces: Vec<SurfaceSpec>,
    elements: Vec<ElementKind>,
) -> Result<LensSystem, MutateError> {
    if surfaces.is_empty() {
        return Ok(LensSystem::empty(lens.target_z(), lens.sensor_z()));
    }
    Ok(LensSystem::new(surfaces, elements, lens.target_z())?)
}

/// Applies `m` to `lens`. Added singlets draw their geometry from `seed`.
pub fn apply_mutation<R: Rng + ?Sized>(
    lens: &LensSystem,
    m: MutationKind,
    seed: &SingletSeed,
    rng: &mut R,
) -> Result<Mutated, MutateError> {
    if !applicable_mutations(lens).contains(&m) {
        return Err(MutateError::NotApplicable(m));
    }
    let spans = lens.element_spans();
    let mut surfaces = lens.surfaces().to_vec();
    let mut elements = lens.elements().to_vec();
    let mut frozen = Vec::new();
    match m {
        MutationKind::AddSinglet(slot) => {
            let at = spans.get(slot).map_or(surfaces.len(), |r| r.start);
            let before = at.checked_sub(1).map(|i| surfaces[i].extent);
            let after = surfaces.get(at).map(|s| s.extent);
            let extent = match (before, after) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => 10.0,
            };
            let (t, k1, k2) = seed.draw(rng, extent);
            let trailing = if at == 0 {
                if surfaces.is_empty() {
                    lens.back_gap()
                } else {
                    FRONT_INSERT_GAP
                }
            } else {
                let host = surfaces[at - 1].gap;
                surfaces[at - 1].gap = 0.5 * host;
                0.5 * host
            };
            surfaces.insert(at, SurfaceSpec::new(k2, extent, trailing, AIR));
            surfaces.insert(at, SurfaceSpec::new(k1, extent, t, seed.index));
            elements.insert(slot, ElementKind::Singlet);
            for s in at..at + 2 {
                for f in Field::ALL {
                    frozen.push(param_index(s, f));
                }
            }
        }
        MutationKind::RemoveSinglet(e) => {
            let r = spans[e].clone();
            let removed: f64 = surfaces[r.clone()].iter().map(|s| s.gap).sum();
            if r.start > 0 {
                surfaces[r.start - 1].gap += removed;
            }
            surfaces.drain(r);
            elements.remove(e);
        }
        MutationKind::GlueSinglets(e) => {
            let a = spans[e].start;
            let (a1, b0, b1) = (surfaces[a + 1], surfaces[a + 2], surfaces[a + 3]);
            let mid = SurfaceSpec::new(
                0.5 * (a1.curvature + b0.curvature),
                a1.extent.min(b0.extent),
                b0.gap,
                b0.index_after,
            );
            let back = SurfaceSpec::new(b1.curvature, b1.extent, b1.gap + a1.gap, b1.index_after);
            surfaces.splice(a + 1..a + 4, [mid, back]);
            elements.splice(e..e + 2, [ElementKind::CementedDoublet]);
        }
        MutationKind::SplitDoublet(e) => {
            let a = spans[e].start;
            let interface = surfaces[a + 1];
            let glass = interface.index_after;
            let front_back = SurfaceSpec::new(interface.curvature, interface.extent, SPLIT_GAP, AIR);
            let rear_front = SurfaceSpec::new(interface.curvature, interface.extent, interface.gap, glass);
            surfaces[a + 2].gap = (surfaces[a + 2].gap - SPLIT_GAP).max(0.0);
            surfaces.splice(a + 1..a + 2, [front_back, rear_front]);
            elements.splice(e..e + 1, [ElementKind::Singlet, ElementKind::Singlet]);
            for f in Field::ALL {
                frozen.push(param_index(a + 2, f));
            }
        }
    }
    Ok(Mutated {
        lens: rebuild(lens, surfaces, elements)?,
        frozen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Refine mutated lenses by paraxial projection.
    pub project: bool,
    pub seed: SingletSeed,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            project: true,
            seed: SingletSeed::default(),
        }
    }
}

/// What happened to the projection step.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionStatus {
    Skipped,
    Converged { residual: f64 },
    Failed(ParaxialError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationOutcome {
    pub lens: LensSystem,
    /// `None` when the lens had no applicable mutation.
    pub kind: Option<MutationKind>,
    pub projection: ProjectionStatus,
}

/// Projects `mutated` back to the paraxial state of `original`.
pub fn project_mutant(
    original: &LensSystem,
    mutated: &Mutated,
) -> (LensSystem, ProjectionStatus) {
    match paraxial_project(&mutated.lens, paraxial_state(original), &mutated.frozen) {
        Ok(p) => (
            p.lens,
            ProjectionStatus::Converged {
                residual: p.residual,
            },
        ),
        Err(e) => (mutated.lens.clone(), ProjectionStatus::Failed(e)),
    }
}

/// Applies a uniformly chosen applicable mutation, then projects to the
/// original paraxial state. A failed projection keeps the raw mutant.
pub fn mutate_lens<R: Rng + ?Sized>(
    lens: &LensSystem,
    cfg: &MutationConfig,
    rng: &mut R,
) -> MutationOutcome {
    let options = applicable_mutations(lens);
    if options.is_empty() {
        return MutationOutcome {
            lens: lens.clone(),
            kind: None,
            projection: ProjectionStatus::Skipped,
        };
    }
    let kind = options[rng.random_range(0..options.len())];
    let mutated = apply_mutation(lens, kind, &cfg.seed, rng).expect("applicable mutation");
    let (out, projection) = if cfg.project {
        project_mutant(lens, &mutated)
    } else {
        (mutated.lens, ProjectionStatus::Skipped)
    };
    MutationOutcome {
        lens: out,
        kind: Some(kind),
        projection,
    }
}
