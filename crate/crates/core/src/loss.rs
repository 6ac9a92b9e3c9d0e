//! Spot, throughput, focal and thickness losses and the Boltzmann target.
//!
//! All integrals over ray directions are evaluated on a fixed
//! [`DirectionGrid`] per field point, so the loss of a lens is a
//! deterministic function of its parameters.

use crate::ad::{HyperDual, Scalar};
use crate::lens::{Field, LensSystem, PARAMS_PER_SURFACE};
use crate::paraxial::lens_matrix;
use crate::trace::{differentiate_ray, trace, DirectionGrid, TraceError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Image diagonal of a 36×24 mm sensor.
pub const FULL_FRAME_DIAGONAL: f64 = 43.27;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("target plane sits at the front focal plane of the reference thin lens (s_o = {object_distance} mm)")]
    ImageAtInfinity { object_distance: f64 },
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// Weights and sampling setup of the total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_spot: f64,
    pub w_throughput: f64,
    pub w_focal: f64,
    pub w_thickness: f64,
    /// Minimum element thickness, mm.
    pub d_min: f64,
    /// Reference throughput, sr.
    pub t0: f64,
    /// Target focal length, mm.
    pub focal_length: f64,
    /// Field points on the target plane, mm.
    pub field_points: Vec<[f64; 3]>,
    pub rays_per_point: usize,
    /// Radius of the disc at the first vertex that the ray cones aim at, mm.
    pub entrance_radius: f64,
    /// Width of the smooth clip used for throughput gradients, mm.
    pub clip_softness: f64,
}

impl LossConfig {
    /// Configuration for designing around `lens` with focal length `f`:
    /// four field points whose thin-lens images are spread uniformly from
    /// the axis to the full-frame corner, cones aimed at the first
    /// surface's aperture, and `T0` equal to the on-axis cone.
    pub fn for_lens(lens: &LensSystem, f: f64) -> Result<Self, LossError> {
        let entrance_radius = lens
            .surfaces()
            .first()
            .map_or(10.0, |s| s.extent);
        let field_points = field_points(lens, f, 4, FULL_FRAME_DIAGONAL)?;
        let t0 = cone_solid_angle(-lens.target_z(), entrance_radius);
        Ok(Self {
            w_spot: 1.0 / t0,
            w_throughput: 1.0,
            w_focal: 1.0,
            w_thickness: 1.0,
            d_min: 1.0,
            t0,
            focal_length: f,
            field_points,
            rays_per_point: 64,
            entrance_radius,
            clip_softness: 0.05,
        })
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let weights = [self.w_spot, self.w_throughput, self.w_focal, self.w_thickness];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(LossError::Config("weights must be nonnegative".into()));
        }
        if !(self.t0 > 0.0) {
            return Err(LossError::Config("T0 must be positive".into()));
        }
        if self.focal_length == 0.0 || !self.focal_length.is_finite() {
            return Err(LossError::Config("focal length must be finite and nonzero".into()));
        }
        if self.field_points.is_empty() {
            return Err(LossError::Config("at least one field point is required".into()));
        }
        if self.rays_per_point == 0 {
            return Err(LossError::Config("rays_per_point must be positive".into()));
        }
        if !(self.entrance_radius > 0.0) || !(self.clip_softness > 0.0) {
            return Err(LossError::Config(
                "entrance radius and clip softness must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solid angle of a cone from a point at distance `d` to a disc of radius `r`.
pub fn cone_solid_angle(d: f64, r: f64) -> f64 {
    2.0 * std::f64::consts::PI * (1.0 - (r / d).atan().cos())
}

/// `count` field points on the target plane whose images through a thin
/// lens of focal length `f` are spaced uniformly from 0 to half of
/// `diagonal`.
pub fn field_points(
    lens: &LensSystem,
    f: f64,
    count: usize,
    diagonal: f64,
) -> Result<Vec<[f64; 3]>, LossError> {
    let m = thin_lens_magnification(lens, f)?.value;
    let half = 0.5 * diagonal;
    Ok((0..count)
        .map(|j| {
            let h = if count > 1 {
                half * j as f64 / (count - 1) as f64
            } else {
                0.0
            };
            [0.0, h / m.abs(), lens.target_z()]
        })
        .collect())
}

/// Magnification of the reference thin lens and its parameter gradient.
struct Magnification {
    value: f64,
    grad: Vec<f64>,
}

/// Distance from the target plane to the front principal plane, generic so
/// it can be differentiated. Falls back to the first vertex for an afocal
/// lens.
fn object_distance<S: Scalar>(theta: &[S], target_z: f64) -> S {
    if theta.is_empty() {
        return S::cst(-target_z);
    }
    let m = crate::paraxial::chain_generic(theta);
    let power = -m.m[0][1];
    if power.value().abs() < 1e-12 {
        return S::cst(-target_z);
    }
    (S::cst(1.0) - m.m[0][0]) / power - S::cst(target_z)
}

fn thin_lens_magnification(lens: &LensSystem, f: f64) -> Result<Magnification, LossError> {
    let theta = lens.to_vector();
    let s_o = object_distance(&theta, lens.target_z());
    if (f - s_o).abs() < 1e-9 * f.abs().max(1.0) {
        return Err(LossError::ImageAtInfinity { object_distance: s_o });
    }
    let value = f / (f - s_o);
    let dm_ds = f / ((f - s_o) * (f - s_o));
    let grad = (0..theta.len())
        .map(|i| {
            let seeded: Vec<HyperDual> = theta
                .iter()
                .enumerate()
                .map(|(j, &v)| HyperDual::new(v, if i == j { 1.0 } else { 0.0 }, 0.0))
                .collect();
            dm_ds * object_distance(&seeded, lens.target_z()).a
        })
        .collect();
    debug_assert!(lens_matrix(lens).m[0][0].is_finite());
    Ok(Magnification { value, grad })
}

/// Ideal image of `x0` through a thin lens of focal length `f` placed at
/// the front principal plane of `lens`.
pub fn thin_lens_image(lens: &LensSystem, x0: [f64; 3], f: f64) -> Result<[f64; 2], LossError> {
    let m = thin_lens_magnification(lens, f)?.value;
    Ok([m * x0[0], m * x0[1]])
}

struct Hits {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

fn valid_hits(lens: &LensSystem, grid: &DirectionGrid) -> Hits {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (ray, w) in grid.rays().zip(&grid.weights) {
        if let Some(h) = trace(&ray, lens).hit() {
            points.push([h[0], h[1]]);
            weights.push(*w);
        }
    }
    Hits { points, weights }
}

fn centroid(points: &[[f64; 2]], weights: &[f64]) -> Option<[f64; 2]> {
    let total: f64 = weights.iter().sum();
    if points.is_empty() || !(total > 0.0) {
        return None;
    }
    let mut c = [0.0; 2];
    for (p, w) in points.iter().zip(weights) {
        c[0] += w * p[0];
        c[1] += w * p[1];
    }
    Some([c[0] / total, c[1] / total])
}

fn spot_of(h: &Hits) -> f64 {
    let Some(c) = centroid(&h.points, &h.weights) else {
        return 0.0;
    };
    h.points
        .iter()
        .zip(&h.weights)
        .map(|(p, w)| w * ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
        .sum()
}

fn throughput_of(h: &Hits, t0: f64) -> f64 {
    (1.0 - h.weights.iter().sum::<f64>() / t0).max(0.0)
}

/// Weighted variance of valid sensor hits about their centroid, mm²·sr.
pub fn spot_loss(lens: &LensSystem, grid: &DirectionGrid) -> f64 {
    spot_of(&valid_hits(lens, grid))
}

/// One minus the valid solid angle over `t0`, clamped at 0.
pub fn throughput_loss(lens: &LensSystem, grid: &DirectionGrid, t0: f64) -> f64 {
    throughput_of(&valid_hits(lens, grid), t0)
}

/// Squared distance between the hit centroid and the thin-lens image of
/// the grid origin, mm². Zero when no ray is valid.
pub fn focal_loss(lens: &LensSystem, grid: &DirectionGrid, f: f64) -> Result<f64, LossError> {
    let ideal = thin_lens_image(lens, grid.origin, f)?;
    let h = valid_hits(lens, grid);
    Ok(centroid(&h.points, &h.weights)
        .map_or(0.0, |c| (c[0] - ideal[0]).powi(2) + (c[1] - ideal[1]).powi(2)))
}

/// Sum over elements of `max(d_min − t, 0)²`, mm².
pub fn thickness_loss(lens: &LensSystem, d_min: f64) -> f64 {
    lens.element_thicknesses()
        .iter()
        .map(|t| (d_min - t).max(0.0).powi(2))
        .sum()
}

fn thickness_gradient(lens: &LensSystem, d_min: f64) -> Vec<f64> {
    let mut g = vec![0.0; lens.surface_count() * PARAMS_PER_SURFACE];
    for (span, t) in lens.element_spans().iter().zip(lens.element_thicknesses()) {
        let deficit = (d_min - t).max(0.0);
        for s in span.start..span.end - 1 {
            g[crate::lens::param_index(s, Field::Gap)] = -2.0 * deficit;
        }
    }
    g
}

/// Unweighted loss terms; spot, throughput and focal per field point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spot: Vec<f64>,
    pub throughput: Vec<f64>,
    pub focal: Vec<f64>,
    pub thickness: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn spot_sum(&self) -> f64 {
        self.spot.iter().sum()
    }

    pub fn throughput_sum(&self) -> f64 {
        self.throughput.iter().sum()
    }

    pub fn focal_sum(&self) -> f64 {
        self.focal.iter().sum()
    }

    /// Weighted sum of the parts.
    pub fn recombine(&self, cfg: &LossConfig) -> f64 {
        let mut total = 0.0;
        for m in 0..self.spot.len() {
            total += cfg.w_spot * self.spot[m]
                + cfg.w_throughput * self.throughput[m]
                + cfg.w_focal * self.focal[m];
        }
        total + cfg.w_thickness * self.thickness
    }
}

/// Terms and gradient contributions of one field point.
struct PointTerms {
    spot: f64,
    throughput: f64,
    focal: f64,
    grad: Vec<f64>,
}

/// Loss evaluator with the direction grids precomputed.
#[derive(Debug, Clone)]
pub struct LossModel {
    cfg: LossConfig,
    grids: Vec<DirectionGrid>,
}

impl LossModel {
    pub fn new(cfg: LossConfig) -> Result<Self, LossError> {
        cfg.validate()?;
        let grids = cfg
            .field_points
            .iter()
            .map(|p| DirectionGrid::cone(*p, cfg.entrance_radius, cfg.rays_per_point))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cfg, grids })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn grids(&self) -> &[DirectionGrid] {
        &self.grids
    }

    /// Same sampling, different weights.
    pub fn with_weights(&self, w_spot: f64, w_throughput: f64) -> Self {
        let mut out = self.clone();
        out.cfg.w_spot = w_spot;
        out.cfg.w_throughput = w_throughput;
        out
    }

    pub fn evaluate(&self, lens: &LensSystem) -> Result<LossBreakdown, LossError> {
        let cfg = &self.cfg;
        let m = if cfg.w_focal > 0.0 {
            Some(thin_lens_magnification(lens, cfg.focal_length)?.value)
        } else {
            None
        };
        let terms: Vec<(f64, f64, f64)> = self
            .grids
            .par_iter()
            .map(|grid| {
                let h = valid_hits(lens, grid);
                let focal = match (m, centroid(&h.points, &h.weights)) {
                    (Some(m), Some(c)) => {
                        (c[0] - m * grid.origin[0]).powi(2) + (c[1] - m * grid.origin[1]).powi(2)
                    }
                    _ => 0.0,
                };
                (spot_of(&h), throughput_of(&h, cfg.t0), focal)
            })
            .collect();
        Ok(self.assemble(lens, terms.into_iter()))
    }

    fn assemble(
        &self,
        lens: &LensSystem,
        terms: impl Iterator<Item = (f64, f64, f64)>,
    ) -> LossBreakdown {
        let mut b = LossBreakdown {
            spot: Vec::new(),
            throughput: Vec::new(),
            focal: Vec::new(),
            thickness: thickness_loss(lens, self.cfg.d_min),
            total: 0.0,
        };
        for (s, t, f) in terms {
            b.spot.push(s);
            b.throughput.push(t);
            b.focal.push(f);
        }
        b.total = b.recombine(&self.cfg);
        b
    }

    /// Loss and its gradient. Spot and focal terms use the validity set of
    /// the current parameters; the throughput term is differentiated
    /// through smooth extent clips.
    pub fn gradient(&self, lens: &LensSystem) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        let cfg = &self.cfg;
        let n = lens.surface_count() * PARAMS_PER_SURFACE;
        let mag = if cfg.w_focal > 0.0 {
            Some(thin_lens_magnification(lens, cfg.focal_length)?)
        } else {
            None
        };
        let per_point: Vec<PointTerms> = self
            .grids
            .par_iter()
            .map(|grid| self.point_gradient(lens, grid, mag.as_ref(), n))
            .collect();
        let mut grad = vec![0.0; n];
        for p in &per_point {
            for (g, v) in grad.iter_mut().zip(&p.grad) {
                *g += v;
            }
        }
        if cfg.w_thickness > 0.0 {
            for (g, v) in grad.iter_mut().zip(thickness_gradient(lens, cfg.d_min)) {
                *g += cfg.w_thickness * v;
            }
        }
        let b = self.assemble(
            lens,
            per_point.iter().map(|p| (p.spot, p.throughput, p.focal)),
        );
        Ok((b, grad))
    }

    fn point_gradient(
        &self,
        lens: &LensSystem,
        grid: &DirectionGrid,
        mag: Option<&Magnification>,
        n: usize,
    ) -> PointTerms {
        let cfg = &self.cfg;
        let mut grad = vec![0.0; n];
        let derivs: Vec<(f64, _)> = grid
            .rays()
            .zip(&grid.weights)
            .filter_map(|(ray, w)| differentiate_ray(lens, &ray, cfg.clip_softness).map(|d| (*w, d)))
            .collect();

        // Smooth throughput surrogate: 1 − Σ w·s/T0 over geometrically
        // traceable rays, s the product of clip sigmoids.
        if cfg.w_throughput > 0.0 {
            let scale = -cfg.w_throughput / cfg.t0;
            for (w, d) in &derivs {
                let s = d.log_soft.exp();
                for (g, v) in grad.iter_mut().zip(&d.d_log_soft) {
                    *g += scale * w * s * v;
                }
            }
        }

        let valid: Vec<&(f64, _)> = derivs.iter().filter(|(_, d)| d.valid).collect();
        let points: Vec<[f64; 2]> = valid.iter().map(|(_, d)| [d.hit[0], d.hit[1]]).collect();
        let weights: Vec<f64> = valid.iter().map(|(w, _)| *w).collect();
        let h = Hits { points, weights };
        let spot = spot_of(&h);
        let throughput = throughput_of(&h, cfg.t0);
        let mut focal = 0.0;

        if let Some(c) = centroid(&h.points, &h.weights) {
            let total_w: f64 = h.weights.iter().sum();
            if cfg.w_spot > 0.0 {
                for (w, d) in &valid {
                    for axis in 0..2 {
                        let r = 2.0 * cfg.w_spot * w * (d.hit[axis] - c[axis]);
                        for (g, v) in grad.iter_mut().zip(&d.d_hit[axis]) {
                            *g += r * v;
                        }
                    }
                }
            }
            if let Some(m) = mag {
                let ideal = [m.value * grid.origin[0], m.value * grid.origin[1]];
                let diff = [c[0] - ideal[0], c[1] - ideal[1]];
                focal = diff[0] * diff[0] + diff[1] * diff[1];
                for axis in 0..2 {
                    let r = 2.0 * cfg.w_focal * diff[axis];
                    for (w, d) in &valid {
                        for (g, v) in grad.iter_mut().zip(&d.d_hit[axis]) {
                            *g += r * w / total_w * v;
                        }
                    }
                    for (g, v) in grad.iter_mut().zip(&m.grad) {
                        *g -= r * grid.origin[axis] * v;
                    }
                }
            }
        }
        PointTerms {
            spot,
            throughput,
            focal,
            grad,
        }
    }
}

/// Loss breakdown of `lens` under `cfg`.
pub fn total_loss(lens: &LensSystem, cfg: &LossConfig) -> Result<LossBreakdown, LossError> {
    LossModel::new(cfg.clone())?.evaluate(lens)
}

/// Gradient of the total loss with respect to the flat parameters.
pub fn grad_total_loss(lens: &LensSystem, cfg: &LossConfig) -> Result<Vec<f64>, LossError> {
    Ok(LossModel::new(cfg.clone())?.gradient(lens)?.1)
}

/// Target density `exp(−L/T)`.
pub fn boltzmann(loss: f64, temperature: f64) -> f64 {
    (-loss / temperature).exp()
}

/// Temperature giving the reference loss a density of one half.
pub fn calibrate_temperature(reference_loss: f64) -> f64 {
    reference_loss / std::f64::consts::LN_2
}
