//! Sequential ray tracing through spherical surfaces, and derivatives of
//! traced sensor positions with respect to the lens parameters.
//!
//! Each surface step is written once over [`Scalar`]. The primal trace runs
//! it with `f64`; derivatives come from evaluating the step with [`Dual`]
//! numbers to get local Jacobians, then chaining them backwards from the
//! sensor (one adjoint sweep per output).

use crate::ad::{log_sigmoid, Dual, Scalar};
use crate::lens::{param_index, Field, LensSystem, SurfaceSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

type V3<S> = [S; 3];

#[inline]
fn dot<S: Scalar>(a: &V3<S>, b: &V3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: [f64; 3], direction: [f64; 3]) -> Self {
        Self {
            origin,
            direction: normalize(direction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockReason {
    MissedSurface,
    ExceededExtent,
    TotalInternalReflection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOutcome {
    SensorHit([f64; 3]),
    Blocked { surface: usize, reason: BlockReason },
}

impl TraceOutcome {
    pub fn hit(&self) -> Option<[f64; 3]> {
        match self {
            TraceOutcome::SensorHit(p) => Some(*p),
            TraceOutcome::Blocked { .. } => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("cone origin z = {0} does not lie before the first surface")]
    DegenerateCone(f64),
    #[error("a direction grid needs at least one sample")]
    EmptyGrid,
}

/// Intersection with the vertex-side cap of a sphere through the local
/// origin, `κ|p|² − 2z = 0`. Returns `None` when there is no forward hit.
#[inline]
fn local_hit<S: Scalar>(p: &V3<S>, d: &V3<S>, kappa: S) -> Option<V3<S>> {
    let a = kappa * dot(d, d);
    let b = kappa * dot(p, d) - d[2];
    let c = kappa * dot(p, p) - p[2].scale(2.0);
    let disc = b * b - a * c;
    if !(disc.value() >= 0.0) {
        return None;
    }
    // Both forms give the vertex-side root; each avoids cancellation on
    // its side of b = 0.
    let t = if b.value() <= 0.0 {
        let q = -b + disc.sqrt();
        if !(q.value() > 0.0) {
            return None;
        }
        c / q
    } else {
        (-b - disc.sqrt()) / a
    };
    if !(t.value() >= 0.0) {
        return None;
    }
    Some([p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]])
}

#[inline]
fn surface_normal<S: Scalar>(hit: &V3<S>, kappa: S) -> V3<S> {
    let n = [-(kappa * hit[0]), -(kappa * hit[1]), S::cst(1.0) - kappa * hit[2]];
    let len = dot(&n, &n).sqrt();
    [n[0] / len, n[1] / len, n[2] / len]
}

/// Vector Snell refraction with the normal oriented along the ray.
#[inline]
fn snell<S: Scalar>(d: &V3<S>, n: &V3<S>, n_in: S, n_out: S) -> Result<V3<S>, BlockReason> {
    let cos_i = dot(d, n);
    if !(cos_i.value() > 0.0) {
        return Err(BlockReason::MissedSurface);
    }
    let mu = n_in / n_out;
    let k = S::cst(1.0) - mu * mu * (S::cst(1.0) - cos_i * cos_i);
    if !(k.value() >= 0.0) {
        return Err(BlockReason::TotalInternalReflection);
    }
    let g = k.sqrt() - mu * cos_i;
    Ok([
        mu * d[0] + g * n[0],
        mu * d[1] + g * n[1],
        mu * d[2] + g * n[2],
    ])
}

/// Ray state in the frame of the next vertex: position then direction.
type State<S> = [S; 6];

struct StepOut<S> {
    state: State<S>,
    /// Hit point in the frame of the surface just crossed.
    hit: V3<S>,
    inside: bool,
    log_soft: S,
}

/// Crosses one surface: intersect, clip test, refract, then shift into the
/// frame of the next vertex `gap` further along the axis.
#[inline]
fn surface_step<S: Scalar>(
    state: &State<S>,
    kappa: S,
    extent: S,
    gap: S,
    n_before: S,
    n_after: S,
    softness: f64,
) -> Result<StepOut<S>, BlockReason> {
    let p = [state[0], state[1], state[2]];
    let d = [state[3], state[4], state[5]];
    let hit = local_hit(&p, &d, kappa).ok_or(BlockReason::MissedSurface)?;
    let r2 = hit[0] * hit[0] + hit[1] * hit[1];
    let inside = r2.value() <= extent.value() * extent.value();
    let log_soft = if softness > 0.0 {
        let r = (r2 + S::cst(1e-24)).sqrt();
        log_sigmoid((extent - r).scale(1.0 / softness))
    } else {
        S::cst(0.0)
    };
    let normal = surface_normal(&hit, kappa);
    let out = snell(&d, &normal, n_before, n_after)?;
    Ok(StepOut {
        state: [hit[0], hit[1], hit[2] - gap, out[0], out[1], out[2]],
        hit,
        inside,
        log_soft,
    })
}

/// Propagates to the plane `z = 0` of the current frame.
#[inline]
fn to_plane<S: Scalar>(state: &State<S>) -> Result<[S; 2], BlockReason> {
    if !(state[5].value() > 0.0) {
        return Err(BlockReason::MissedSurface);
    }
    let t = -state[2] / state[5];
    if !(t.value() >= 0.0) {
        return Err(BlockReason::MissedSurface);
    }
    Ok([state[0] + t * state[3], state[1] + t * state[4]])
}

/// Intersects `ray` with `surface` whose vertex sits at `vertex_z`.
///
/// Returns the hit point in absolute coordinates.
pub fn intersect(ray: &Ray, surface: &SurfaceSpec, vertex_z: f64) -> Result<[f64; 3], BlockReason> {
    let p = [ray.origin[0], ray.origin[1], ray.origin[2] - vertex_z];
    if !(ray.direction[2] > 0.0) {
        return Err(BlockReason::MissedSurface);
    }
    let h = local_hit(&p, &ray.direction, surface.curvature).ok_or(BlockReason::MissedSurface)?;
    if h[0] * h[0] + h[1] * h[1] > surface.extent * surface.extent {
        return Err(BlockReason::ExceededExtent);
    }
    Ok([h[0], h[1], h[2] + vertex_z])
}

/// Refracts a unit `direction` at an interface with unit `normal`.
///
/// The normal may point either way; it is flipped to face along the ray.
pub fn refract(
    direction: [f64; 3],
    normal: [f64; 3],
    n_in: f64,
    n_out: f64,
) -> Result<[f64; 3], BlockReason> {
    let n = if dot(&direction, &normal) < 0.0 {
        [-normal[0], -normal[1], -normal[2]]
    } else {
        normal
    };
    snell(&direction, &n, n_in, n_out)
}

fn initial_state(ray: &Ray) -> State<f64> {
    [
        ray.origin[0],
        ray.origin[1],
        ray.origin[2],
        ray.direction[0],
        ray.direction[1],
        ray.direction[2],
    ]
}

/// Traces `ray` through `lens` to the sensor plane.
pub fn trace(ray: &Ray, lens: &LensSystem) -> TraceOutcome {
    trace_path(ray, lens).1
}

/// Traces `ray`, also returning every surface intersection in absolute
/// coordinates (the ray origin first).
pub fn trace_path(ray: &Ray, lens: &LensSystem) -> (Vec<[f64; 3]>, TraceOutcome) {
    let mut points = vec![ray.origin];
    let mut state = initial_state(ray);
    let mut vertex = 0.0;
    for (i, s) in lens.surfaces().iter().enumerate() {
        let step = match surface_step(
            &state,
            s.curvature,
            s.extent,
            s.gap,
            lens.index_before(i),
            s.index_after,
            0.0,
        ) {
            Ok(step) => step,
            Err(reason) => return (points, TraceOutcome::Blocked { surface: i, reason }),
        };
        points.push([step.hit[0], step.hit[1], step.hit[2] + vertex]);
        if !step.inside {
            return (
                points,
                TraceOutcome::Blocked {
                    surface: i,
                    reason: BlockReason::ExceededExtent,
                },
            );
        }
        state = step.state;
        vertex += s.gap;
    }
    if lens.is_empty() {
        state[2] -= lens.back_gap();
    }
    let sensor_z = lens.sensor_z();
    match to_plane(&state) {
        Ok([x, y]) => {
            let hit = [x, y, sensor_z];
            points.push(hit);
            (points, TraceOutcome::SensorHit(hit))
        }
        Err(reason) => (
            points,
            TraceOutcome::Blocked {
                surface: lens.surface_count(),
                reason,
            },
        ),
    }
}

const LOCAL: usize = 11;

/// Local Jacobians of one surface step.
struct LocalJacobian {
    /// d(next state)/d(state), row-major 6×6.
    a: [[f64; 6]; 6],
    /// d(next state)/d(κ, extent, gap, n_before, n_after).
    b: [[f64; 5]; 6],
    /// d(log soft weight)/d(state).
    sa: [f64; 6],
    /// d(log soft weight)/d(params).
    sb: [f64; 5],
}

/// Derivatives of one traced ray.
#[derive(Debug, Clone)]
pub(crate) struct RayDerivatives {
    /// Sensor hit in absolute coordinates.
    pub hit: [f64; 3],
    /// Whether the ray passes every extent clip.
    pub valid: bool,
    /// d(hit x)/dθ and d(hit y)/dθ.
    pub d_hit: [Vec<f64>; 2],
    /// Log of the product of smooth clip weights.
    pub log_soft: f64,
    pub d_log_soft: Vec<f64>,
}

fn local_param_indices(k: usize) -> [Option<usize>; 5] {
    [
        Some(param_index(k, Field::Curvature)),
        Some(param_index(k, Field::Extent)),
        Some(param_index(k, Field::Gap)),
        k.checked_sub(1).map(|j| param_index(j, Field::IndexAfter)),
        Some(param_index(k, Field::IndexAfter)),
    ]
}

/// Traces `ray` ignoring extent clips and differentiates the sensor hit
/// and the smooth clip weight. `None` if the ray misses a surface, is
/// totally internally reflected or misses the sensor.
pub(crate) fn differentiate_ray(
    lens: &LensSystem,
    ray: &Ray,
    softness: f64,
) -> Option<RayDerivatives> {
    let n_params = lens.surface_count() * 4;
    let mut state = initial_state(ray);
    let mut locals = Vec::with_capacity(lens.surface_count());
    let mut valid = true;
    let mut log_soft = 0.0;
    for (k, s) in lens.surfaces().iter().enumerate() {
        let mut st = [Dual::<LOCAL>::constant(0.0); 6];
        for i in 0..6 {
            st[i] = Dual::var(state[i], i);
        }
        let step = surface_step(
            &st,
            Dual::var(s.curvature, 6),
            Dual::var(s.extent, 7),
            Dual::var(s.gap, 8),
            Dual::var(lens.index_before(k), 9),
            Dual::var(s.index_after, 10),
            softness,
        )
        .ok()?;
        valid &= step.inside;
        log_soft += step.log_soft.v;
        let mut lj = LocalJacobian {
            a: [[0.0; 6]; 6],
            b: [[0.0; 5]; 6],
            sa: [0.0; 6],
            sb: [0.0; 5],
        };
        for (r, out) in step.state.iter().enumerate() {
            lj.a[r].copy_from_slice(&out.d[..6]);
            lj.b[r].copy_from_slice(&out.d[6..]);
            state[r] = out.v;
        }
        lj.sa.copy_from_slice(&step.log_soft.d[..6]);
        lj.sb.copy_from_slice(&step.log_soft.d[6..]);
        locals.push(lj);
    }
    if lens.is_empty() {
        state[2] -= lens.back_gap();
    }
    let mut st = [Dual::<6>::constant(0.0); 6];
    for i in 0..6 {
        st[i] = Dual::var(state[i], i);
    }
    let xy = to_plane(&st).ok()?;

    let sweep = |seed: [f64; 6], with_soft: bool| -> Vec<f64> {
        let mut grad = vec![0.0; n_params];
        let mut lambda = seed;
        for k in (0..locals.len()).rev() {
            let lj = &locals[k];
            let idx = local_param_indices(k);
            for (j, slot) in idx.iter().enumerate() {
                if let Some(p) = slot {
                    let mut g = if with_soft { lj.sb[j] } else { 0.0 };
                    for r in 0..6 {
                        g += lj.b[r][j] * lambda[r];
                    }
                    grad[*p] += g;
                }
            }
            let mut next = if with_soft { lj.sa } else { [0.0; 6] };
            for (c, nc) in next.iter_mut().enumerate() {
                for r in 0..6 {
                    *nc += lj.a[r][c] * lambda[r];
                }
            }
            lambda = next;
        }
        grad
    };

    let dx = sweep(xy[0].d, false);
    let dy = sweep(xy[1].d, false);
    let d_log_soft = if softness > 0.0 {
        sweep([0.0; 6], true)
    } else {
        vec![0.0; n_params]
    };
    Some(RayDerivatives {
        hit: [xy[0].v, xy[1].v, lens.sensor_z()],
        valid,
        d_hit: [dx, dy],
        log_soft,
        d_log_soft,
    })
}

/// Jacobian of one valid ray's sensor hit.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorJacobian {
    /// Position of the ray in the input slice.
    pub ray: usize,
    pub hit: [f64; 3],
    /// `rows[c][i]` = d(hit component c)/dθ_i.
    pub rows: [Vec<f64>; 3],
}

/// Derivatives of the sensor hits of all valid rays with respect to the
/// flat parameter vector. Blocked rays contribute no rows.
pub fn grad_trace(lens: &LensSystem, rays: &[Ray]) -> Vec<SensorJacobian> {
    let n = lens.surface_count() * 4;
    let dz: Vec<f64> = (0..n)
        .map(|i| if Field::of_index(i) == Field::Gap { 1.0 } else { 0.0 })
        .collect();
    rays.iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let d = differentiate_ray(lens, r, 0.0)?;
            d.valid.then(|| SensorJacobian {
                ray: i,
                hit: d.hit,
                rows: [d.d_hit[0].clone(), d.d_hit[1].clone(), dz.clone()],
            })
        })
        .collect()
}

/// Deterministic equal-area sampling of a cone of directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    pub origin: [f64; 3],
    pub cone_axis: [f64; 3],
    pub cone_half_angle: f64,
    pub directions: Vec<[f64; 3]>,
    /// Solid angle represented by each direction, in sr.
    pub weights: Vec<f64>,
}

impl DirectionGrid {
    /// Stratified grid over the cone from `origin` toward a disc of radius
    /// `radius` centered on the first surface vertex (the origin of lens
    /// coordinates).
    ///
    /// The cone is split into equal-area rings and sectors, one direction
    /// at the center of each cell, so every weight equals `Ω/n`.
    pub fn cone(origin: [f64; 3], radius: f64, n: usize) -> Result<Self, TraceError> {
        if n == 0 {
            return Err(TraceError::EmptyGrid);
        }
        if !(origin[2] < 0.0) {
            return Err(TraceError::DegenerateCone(origin[2]));
        }
        let to_disc = [-origin[0], -origin[1], -origin[2]];
        let dist = dot(&to_disc, &to_disc).sqrt();
        let axis = normalize(to_disc);
        let half_angle = (radius / dist).atan();
        let cos_a = half_angle.cos();
        let solid_angle = 2.0 * std::f64::consts::PI * (1.0 - cos_a);

        let helper = if axis[0].abs() > 0.9 {
            [0.0, 1.0, 0.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        let hd = dot(&helper, &axis);
        let u = normalize([
            helper[0] - hd * axis[0],
            helper[1] - hd * axis[1],
            helper[2] - hd * axis[2],
        ]);
        let v = cross(axis, u);

        let sectors = sector_count(n);
        let rings = n / sectors;
        let mut directions = Vec::with_capacity(n);
        if n == 1 {
            directions.push(axis);
        } else {
            for ring in 0..rings {
                let frac = (ring as f64 + 0.5) / rings as f64;
                let cos_t = 1.0 - frac * (1.0 - cos_a);
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                for s in 0..sectors {
                    let phi = 2.0 * std::f64::consts::PI * (s as f64 + 0.5) / sectors as f64;
                    let (sp, cp) = phi.sin_cos();
                    directions.push(normalize([
                        cos_t * axis[0] + sin_t * (cp * u[0] + sp * v[0]),
                        cos_t * axis[1] + sin_t * (cp * u[1] + sp * v[1]),
                        cos_t * axis[2] + sin_t * (cp * u[2] + sp * v[2]),
                    ]));
                }
            }
        }
        Ok(Self {
            origin,
            cone_axis: axis,
            cone_half_angle: half_angle,
            weights: vec![solid_angle / n as f64; n],
            directions,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn solid_angle(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn rays(&self) -> impl Iterator<Item = Ray> + '_ {
        self.directions.iter().map(move |d| Ray {
            origin: self.origin,
            direction: *d,
        })
    }
}

/// Divisor of `n` closest to `sqrt(πn)`, so cells are roughly square.
fn sector_count(n: usize) -> usize {
    let ideal = (std::f64::consts::PI * n as f64).sqrt();
    (1..=n)
        .filter(|d| n % d == 0)
        .min_by(|a, b| {
            let da = (*a as f64 - ideal).abs();
            let db = (*b as f64 - ideal).abs();
            da.partial_cmp(&db).unwrap().then(b.cmp(a))
        })
        .unwrap_or(1)
}
