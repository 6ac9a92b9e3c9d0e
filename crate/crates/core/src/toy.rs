//! Small design problems with one or two free axial distances, for checking
//! what distribution a sampler visits against a quadrature reference.

use crate::lens::{ElementKind, Field, LensSystem, SurfaceSpec, AIR, PARAMS_PER_SURFACE};
use crate::loss::{boltzmann, cone_solid_angle, LossConfig, LossError, LossModel};
use crate::paraxial::{paraxial_project, paraxial_state};
use crate::mutate::ProjectionStatus;
use crate::restore::{Assessment, Landscape, Move};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyVariant {
    /// One singlet; free: its distance to the sensor.
    OneGap,
    /// Two singlets; free: their spacing and the back distance.
    TwoGaps,
    /// Either of the above, switched by add/remove moves.
    Mixed,
}

impl ToyVariant {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "1d" | "one-gap" => Some(Self::OneGap),
            "2d" | "two-gaps" => Some(Self::TwoGaps),
            "mixed" => Some(Self::Mixed),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ToyError {
    #[error("point {0:?} lies outside the toy domain")]
    OutOfBounds(Vec<f64>),
    #[error("point has {0} coordinates; expected 1 or 2")]
    Dimension(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Fixed singlet geometry used in every toy lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySinglet {
    pub front_curvature: f64,
    pub back_curvature: f64,
    pub thickness: f64,
    pub index: f64,
    pub extent: f64,
}

impl Default for ToySinglet {
    fn default() -> Self {
        Self {
            front_curvature: 0.02,
            back_curvature: -0.02,
            thickness: 4.0,
            index: 1.5168,
            extent: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub variant: ToyVariant,
    pub singlet: ToySinglet,
    /// Distance from the object plane to the first vertex, mm.
    pub object_distance: f64,
    /// Back distance range with one singlet.
    pub one_back: (f64, f64),
    /// Spacing range with two singlets.
    pub two_spacing: (f64, f64),
    /// Back distance range with two singlets.
    pub two_back: (f64, f64),
    pub temperature: f64,
    pub rays: usize,
}

impl ToyProblem {
    pub fn new(variant: ToyVariant) -> Self {
        Self {
            variant,
            singlet: ToySinglet::default(),
            object_distance: 200.0,
            one_back: (52.0, 72.0),
            two_spacing: (2.0, 20.0),
            two_back: (12.0, 34.0),
            temperature: 1.0,
            rays: 64,
        }
    }

    /// Dimensions of the topologies this problem allows.
    pub fn dims(&self) -> &'static [usize] {
        match self.variant {
            ToyVariant::OneGap => &[1],
            ToyVariant::TwoGaps => &[2],
            ToyVariant::Mixed => &[1, 2],
        }
    }

    pub fn bounds(&self, dim: usize) -> Vec<(f64, f64)> {
        match dim {
            1 => vec![self.one_back],
            _ => vec![self.two_spacing, self.two_back],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.dims().contains(&x.len())
            && self
                .bounds(x.len())
                .iter()
                .zip(x)
                .all(|((lo, hi), v)| *v >= *lo && *v <= *hi)
    }

    fn singlet(&self, back: f64) -> [SurfaceSpec; 2] {
        let s = &self.singlet;
        [
            SurfaceSpec::new(s.front_curvature, s.extent, s.thickness, s.index),
            SurfaceSpec::new(s.back_curvature, s.extent, back, AIR),
        ]
    }

    /// Lens at free-parameter point `x`: `[back]` or `[spacing, back]`.
    pub fn lens(&self, x: &[f64]) -> Result<LensSystem, ToyError> {
        if !matches!(x.len(), 1 | 2) {
            return Err(ToyError::Dimension(x.len()));
        }
        if !self.contains(x) {
            return Err(ToyError::OutOfBounds(x.to_vec()));
        }
        let (surfaces, elements) = match x {
            [back] => (self.singlet(*back).to_vec(), vec![ElementKind::Singlet]),
            [spacing, back] => {
                let mut v = self.singlet(*spacing).to_vec();
                v.extend(self.singlet(*back));
                (v, vec![ElementKind::Singlet; 2])
            }
            _ => unreachable!(),
        };
        Ok(LensSystem::new(surfaces, elements, -self.object_distance)
            .expect("toy lenses are valid"))
    }

    /// Free-parameter point of a toy lens.
    pub fn point(&self, lens: &LensSystem) -> Vec<f64> {
        free_gaps(lens)
            .into_iter()
            .map(|i| lens.to_vector()[i])
            .collect()
    }

    /// Loss stack used by the toy: on-axis spot, throughput and thickness
    /// terms (no focal term).
    pub fn loss_model(&self) -> Result<LossModel, ToyError> {
        let t0 = cone_solid_angle(self.object_distance, self.singlet.extent);
        let cfg = LossConfig {
            w_spot: 1.0 / t0,
            w_throughput: 1.0,
            w_focal: 0.0,
            w_thickness: 1.0,
            d_min: 1.0,
            t0,
            focal_length: 50.0,
            field_points: vec![[0.0, 0.0, -self.object_distance]],
            rays_per_point: self.rays,
            entrance_radius: self.singlet.extent,
            clip_softness: 0.05,
        };
        Ok(LossModel::new(cfg)?)
    }
}

/// Parameter indices of the gaps a toy sampler may move: the spacing
/// between singlets (if any) and the back distance.
fn free_gaps(lens: &LensSystem) -> Vec<usize> {
    let k = lens.surface_count();
    let g = Field::Gap.offset();
    if k == 4 {
        vec![PARAMS_PER_SURFACE + g, 3 * PARAMS_PER_SURFACE + g]
    } else {
        vec![(k - 1) * PARAMS_PER_SURFACE + g]
    }
}

/// The toy problem as a sampler landscape.
#[derive(Debug, Clone)]
pub struct ToyLandscape {
    pub problem: ToyProblem,
    pub model: LossModel,
    /// Adam learning rate of the free distances, mm.
    pub rate: f64,
}

impl ToyLandscape {
    pub fn new(problem: ToyProblem) -> Result<Self, ToyError> {
        Ok(Self {
            model: problem.loss_model()?,
            problem,
            rate: 0.5,
        })
    }

    /// Unnormalized target density at `x`.
    pub fn density(&self, x: &[f64]) -> Result<f64, ToyError> {
        let lens = self.problem.lens(x)?;
        let l = self.model.evaluate(&lens)?.total;
        Ok(boltzmann(l, self.problem.temperature))
    }

    fn clamp_point(&self, x: &mut [f64]) {
        let bounds = self.problem.bounds(x.len());
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    fn uniform_point(&self, dim: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        self.problem
            .bounds(dim)
            .into_iter()
            .map(|(lo, hi)| rng.random_range(lo..=hi))
            .collect()
    }

    /// Projects `lens` onto the paraxial state `reference` moving only the
    /// free distances, then clamps into the domain.
    fn refine(&self, lens: &LensSystem, reference: [f64; 2]) -> (LensSystem, ProjectionStatus) {
        let free = free_gaps(lens);
        let frozen: Vec<usize> = (0..lens.surface_count() * PARAMS_PER_SURFACE)
            .filter(|i| !free.contains(i))
            .collect();
        let (out, status) = match paraxial_project(lens, reference, &frozen) {
            Ok(p) => (p.lens, ProjectionStatus::Converged { residual: p.residual }),
            Err(e) => (lens.clone(), ProjectionStatus::Failed(e)),
        };
        let mut x = self.problem.point(&out);
        self.clamp_point(&mut x);
        (self.problem.lens(&x).expect("clamped point"), status)
    }
}

impl Landscape for ToyLandscape {
    fn assess(&self, lens: &LensSystem) -> Option<Assessment> {
        self.model.evaluate(lens).ok().map(|b| Assessment::from(&b))
    }

    fn gradient(&self, lens: &LensSystem) -> Option<(Assessment, Vec<f64>)> {
        let (b, g) = self.model.gradient(lens).ok()?;
        Some((Assessment::from(&b), g))
    }

    fn step_sizes(&self, lens: &LensSystem) -> Vec<f64> {
        let mut lr = vec![0.0; lens.surface_count() * PARAMS_PER_SURFACE];
        for i in free_gaps(lens) {
            lr[i] = self.rate;
        }
        lr
    }

    fn constrain(&self, lens: &LensSystem, theta: &[f64]) -> LensSystem {
        let mut x: Vec<f64> = free_gaps(lens).into_iter().map(|i| theta[i]).collect();
        self.clamp_point(&mut x);
        self.problem.lens(&x).expect("clamped point")
    }

    fn try_params(&self, lens: &LensSystem, theta: &[f64]) -> Option<LensSystem> {
        let x: Vec<f64> = free_gaps(lens).into_iter().map(|i| theta[i]).collect();
        self.problem.lens(&x).ok()
    }

    fn sample_global(&self, rng: &mut dyn RngCore) -> LensSystem {
        let dims = self.problem.dims();
        let dim = dims[rng.random_range(0..dims.len())];
        let x = self.uniform_point(dim, rng);
        self.problem.lens(&x).expect("sampled inside bounds")
    }

    /// In the mixed variant: add a singlet at a uniform spacing, or remove
    /// one of the two, then refine the distances paraxially. Otherwise the
    /// identity.
    fn mutate(&self, lens: &LensSystem, rng: &mut dyn RngCore) -> Move {
        if self.problem.variant != ToyVariant::Mixed {
            return Move {
                lens: lens.clone(),
                kind: None,
                projection: ProjectionStatus::Skipped,
            };
        }
        let reference = paraxial_state(lens);
        let x = self.problem.point(lens);
        let (raw, kind) = if x.len() == 1 {
            let (lo, hi) = self.problem.two_spacing;
            let (blo, bhi) = self.problem.two_back;
            let spacing = rng.random_range(lo..=hi);
            let raw = self.problem.lens(&[spacing, x[0].clamp(blo, bhi)]);
            (raw, crate::mutate::MutationKind::AddSinglet(1))
        } else {
            let e = rng.random_range(0..2usize);
            let (lo, hi) = self.problem.one_back;
            let back = if e == 0 { x[1] } else { x[1] + x[0] };
            (
                self.problem.lens(&[back.clamp(lo, hi)]),
                crate::mutate::MutationKind::RemoveSinglet(e),
            )
        };
        let raw = raw.expect("clamped point");
        let (out, projection) = self.refine(&raw, reference);
        Move {
            lens: out,
            kind: Some(kind),
            projection,
        }
    }
}

/// Target density tabulated on a regular grid, normalized by the
/// trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTable {
    pub dim: usize,
    /// Grid nodes per axis.
    pub axes: Vec<Vec<f64>>,
    /// Unnormalized densities, row-major (first axis slowest).
    pub values: Vec<f64>,
    /// Trapezoid integral of `values`.
    pub integral: f64,
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

impl ToyLandscape {
    /// Densities of the `dim`-dimensional topology on an `n`-per-axis grid.
    pub fn tabulate(&self, dim: usize, n: usize) -> Result<ToyTable, ToyError> {
        let axes: Vec<Vec<f64>> = self
            .problem
            .bounds(dim)
            .into_iter()
            .map(|b| linspace(b, n))
            .collect();
        let points: Vec<Vec<f64>> = match dim {
            1 => axes[0].iter().map(|&a| vec![a]).collect(),
            _ => axes[0]
                .iter()
                .flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b]))
                .collect(),
        };
        let values = points
            .par_iter()
            .map(|x| self.density(x))
            .collect::<Result<Vec<f64>, _>>()?;
        let w: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
        let integral = match dim {
            1 => values.iter().zip(&w[0]).map(|(v, w)| v * w).sum(),
            _ => values
                .iter()
                .enumerate()
                .map(|(k, v)| v * w[0][k / n] * w[1][k % n])
                .sum(),
        };
        Ok(ToyTable {
            dim,
            axes,
            values,
            integral,
        })
    }
}

/// Histogram layout over all topologies of a toy problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBins {
    pub bins_per_axis: usize,
    dims: Vec<usize>,
    bounds: Vec<Vec<(f64, f64)>>,
}

impl ToyBins {
    pub fn new(problem: &ToyProblem, bins_per_axis: usize) -> Self {
        let dims = problem.dims().to_vec();
        let bounds = dims.iter().map(|&d| problem.bounds(d)).collect();
        Self {
            bins_per_axis,
            dims,
            bounds,
        }
    }

    fn block_size(&self, dim: usize) -> usize {
        self.bins_per_axis.pow(dim as u32)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().map(|&d| self.block_size(d)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First bin of topology `dim`.
    pub fn offset(&self, dim: usize) -> usize {
        self.dims
            .iter()
            .take_while(|&&d| d != dim)
            .map(|&d| self.block_size(d))
            .sum()
    }

    /// Bin index of point `x`, or `None` for an unknown topology.
    pub fn index(&self, x: &[f64]) -> Option<usize> {
        let t = self.dims.iter().position(|&d| d == x.len())?;
        let n = self.bins_per_axis;
        let mut idx = 0;
        for (v, (lo, hi)) in x.iter().zip(&self.bounds[t]) {
            let b = (((v - lo) / (hi - lo)) * n as f64).floor() as isize;
            idx = idx * n + b.clamp(0, n as isize - 1) as usize;
        }
        Some(self.offset(x.len()) + idx)
    }

    /// Normalized histogram of visited points.
    pub fn histogram<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
        let mut h = vec![0.0; self.len()];
        let mut n = 0usize;
        for x in points {
            if let Some(i) = self.index(x) {
                h[i] += 1.0;
                n += 1;
            }
        }
        if n > 0 {
            h.iter_mut().for_each(|v| *v /= n as f64);
        }
        h
    }

    /// Bin masses of the normalized target. `per_bin` quadrature nodes per
    /// bin and axis (midpoint rule).
    pub fn target(&self, landscape: &ToyLandscape, per_bin: usize) -> Result<Vec<f64>, ToyError> {
        let n = self.bins_per_axis;
        let m = n * per_bin;
        let mut out = Vec::with_capacity(self.len());
        for (t, &dim) in self.dims.iter().enumerate() {
            let mids: Vec<Vec<f64>> = self.bounds[t]
                .iter()
                .map(|&(lo, hi)| {
                    (0..m)
                        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / m as f64)
                        .collect()
                })
                .collect();
            let cell: f64 = self.bounds[t].iter().map(|(lo, hi)| (hi - lo) / m as f64).product();
            let mut block = vec![0.0; self.block_size(dim)];
            let pts: Vec<(usize, Vec<f64>)> = match dim {
                1 => (0..m).map(|i| (i / per_bin, vec![mids[0][i]])).collect(),
                _ => (0..m * m)
                    .map(|k| {
                        let (i, j) = (k / m, k % m);
                        ((i / per_bin) * n + j / per_bin, vec![mids[0][i], mids[1][j]])
                    })
                    .collect(),
            };
            let dens = pts
                .par_iter()
                .map(|(_, x)| landscape.density(x))
                .collect::<Result<Vec<f64>, _>>()?;
            for ((b, _), d) in pts.iter().zip(dens) {
                block[*b] += d * cell;
            }
            out.extend(block);
        }
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        Ok(out)
    }
}

/// Total variation distance between two discrete distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Golden-section minimizer of `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::spot_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lenses_round_trip_points() {
        let p = ToyProblem::new(ToyVariant::Mixed);
        for x in [vec![60.0], vec![5.0, 30.0]] {
            let lens = p.lens(&x).unwrap();
            assert_eq!(p.point(&lens), x);
        }
        assert!(matches!(p.lens(&[10.0]), Err(ToyError::OutOfBounds(_))));
        assert!(matches!(p.lens(&[1.0, 2.0, 3.0]), Err(ToyError::Dimension(3))));
    }

    #[test]
    fn density_positive_on_domain() {
        let l = ToyLandscape::new(ToyProblem::new(ToyVariant::Mixed)).unwrap();
        for x in linspace(l.problem.one_back, 31) {
            let d = l.density(&[x]).unwrap();
            assert!(d > 0.0 && d.is_finite());
        }
        for s in linspace(l.problem.two_spacing, 7) {
            for b in linspace(l.problem.two_back, 7) {
                let d = l.density(&[s, b]).unwrap();
                assert!(d > 0.0 && d.is_finite());
            }
        }
    }

    #[test]
    fn quadrature_is_stable_under_refinement() {
        let l = ToyLandscape::new(ToyProblem::new(ToyVariant::OneGap)).unwrap();
        let a = l.tabulate(1, 10_000).unwrap().integral;
        let b = l.tabulate(1, 20_000).unwrap().integral;
        assert!(((a - b) / b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn mode_minimizes_spot() {
        let l = ToyLandscape::new(ToyProblem::new(ToyVariant::OneGap)).unwrap();
        let table = l.tabulate(1, 3001).unwrap();
        let (imax, _) = table
            .values
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let grid = &l.model.grids()[0];
        let best = golden_section(
            |b| spot_loss(&l.problem.lens(&[b]).unwrap(), grid),
            l.problem.one_back.0,
            l.problem.one_back.1,
            1e-6,
        );
        let h = table.axes[0][1] - table.axes[0][0];
        assert!((table.axes[0][imax] - best).abs() <= h, "{} vs {best}", table.axes[0][imax]);
    }

    #[test]
    fn bins_cover_topologies() {
        let p = ToyProblem::new(ToyVariant::Mixed);
        let bins = ToyBins::new(&p, 10);
        assert_eq!(bins.len(), 110);
        assert_eq!(bins.index(&[52.0]), Some(0));
        assert_eq!(bins.index(&[72.0]), Some(9));
        assert_eq!(bins.index(&[2.0, 12.0]), Some(10));
        assert_eq!(bins.index(&[20.0, 34.0]), Some(109));
        let h = bins.histogram([&[60.0][..], &[2.0, 15.0][..]]);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn target_bins_sum_to_one() {
        let l = ToyLandscape::new(ToyProblem::new(ToyVariant::Mixed)).unwrap();
        let bins = ToyBins::new(&l.problem, 8);
        let t = bins.target(&l, 4).unwrap();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.iter().all(|v| *v > 0.0));
        assert_eq!(total_variation(&t, &t), 0.0);
    }

    #[test]
    fn mixed_mutation_switches_topology() {
        let l = ToyLandscape::new(ToyProblem::new(ToyVariant::Mixed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = l.problem.lens(&[64.0]).unwrap();
        let m = l.mutate(&one, &mut rng);
        assert_eq!(m.lens.surface_count(), 4);
        assert!(l.problem.contains(&l.problem.point(&m.lens)));
        let back = l.mutate(&m.lens, &mut rng);
        assert_eq!(back.lens.surface_count(), 2);
        let fixed = ToyLandscape::new(ToyProblem::new(ToyVariant::OneGap)).unwrap();
        assert_eq!(fixed.mutate(&one, &mut rng).lens, one);
    }

    #[test]
    fn golden_section_quadratic() {
        let x = golden_section(|x| (x - 1.3).powi(2), -4.0, 5.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-8);
    }
}
