//! Ray-transfer matrices, paraxial equivalence and the paraxial projection.
//!
//! Matrices act on the paraxial ray state `(φ, y)`, angle first. A surface
//! with curvature `κ` between media `n` (before) and `n'` (after) maps
//! `φ' = (n/n')·φ + κ(n − n')/n'·y`, the paraxial limit of the tracer's
//! Snell refraction. Curvature is positive when the center of curvature
//! lies toward the sensor.

use crate::ad::{HyperDual, Scalar};
use crate::lens::{Field, LensError, LensSystem, PARAMS_PER_SURFACE};
use nalgebra::{DMatrix, DVector};
use std::ops::Mul;
use thiserror::Error;

/// 2×2 matrix on `(φ, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix<S = f64> {
    pub m: [[S; 2]; 2],
}

impl<S: Scalar> TransferMatrix<S> {
    pub fn identity() -> Self {
        Self {
            m: [[S::cst(1.0), S::cst(0.0)], [S::cst(0.0), S::cst(1.0)]],
        }
    }

    /// Free propagation over `d`: `y' = dφ + y`.
    pub fn propagation(d: S) -> Self {
        Self {
            m: [[S::cst(1.0), S::cst(0.0)], [d, S::cst(1.0)]],
        }
    }

    /// Refraction at a surface of curvature `kappa`.
    pub fn refraction(kappa: S, n_before: S, n_after: S) -> Self {
        Self {
            m: [
                [n_before / n_after, kappa * (n_before - n_after) / n_after],
                [S::cst(0.0), S::cst(1.0)],
            ],
        }
    }

    pub fn apply(&self, v: [S; 2]) -> [S; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn det(&self) -> S {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

impl<S: Scalar> Mul for TransferMatrix<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }
}

pub fn prop_matrix(d: f64) -> TransferMatrix {
    TransferMatrix::propagation(d)
}

pub fn refract_matrix(kappa: f64, n_before: f64, n_after: f64) -> TransferMatrix {
    TransferMatrix::refraction(kappa, n_before, n_after)
}

/// Product of the surface and gap matrices over a flat parameter vector.
/// With `back_gap` false the propagation after the last surface is left
/// out.
fn chain<S: Scalar>(theta: &[S], back_gap: bool) -> TransferMatrix<S> {
    let k = theta.len() / PARAMS_PER_SURFACE;
    let mut m = TransferMatrix::identity();
    let mut n_before = S::cst(1.0);
    for s in 0..k {
        let p = &theta[s * PARAMS_PER_SURFACE..(s + 1) * PARAMS_PER_SURFACE];
        m = TransferMatrix::refraction(p[0], n_before, p[3]) * m;
        if back_gap || s + 1 < k {
            m = TransferMatrix::propagation(p[2]) * m;
        }
        n_before = p[3];
    }
    m
}

/// Lens matrix (first to last vertex) over generic parameters.
pub(crate) fn chain_generic<S: Scalar>(theta: &[S]) -> TransferMatrix<S> {
    chain(theta, false)
}

/// Matrix from the first vertex to the sensor plane.
pub fn system_matrix(lens: &LensSystem) -> TransferMatrix {
    if lens.is_empty() {
        return prop_matrix(lens.back_gap());
    }
    chain(&lens.to_vector(), true)
}

/// Matrix from the first to the last vertex.
pub fn lens_matrix(lens: &LensSystem) -> TransferMatrix {
    chain(&lens.to_vector(), false)
}

/// Image on the sensor plane of the unit-height ray parallel to the axis.
pub fn paraxial_state(lens: &LensSystem) -> [f64; 2] {
    system_matrix(lens).apply([0.0, 1.0])
}

fn state_of<S: Scalar>(theta: &[S]) -> [S; 2] {
    chain(theta, true).apply([S::cst(0.0), S::cst(1.0)])
}

/// Default tolerance of [`paraxial_equal`].
pub const EQUIVALENCE_TOL: f64 = 1e-8;

pub fn paraxial_equal(a: &LensSystem, b: &LensSystem, tol: f64) -> bool {
    let (sa, sb) = (paraxial_state(a), paraxial_state(b));
    (sa[0] - sb[0]).abs() <= tol && (sa[1] - sb[1]).abs() <= tol
}

/// Effective focal length from the lens matrix, `None` for an afocal lens.
pub fn focal_length(lens: &LensSystem) -> Option<f64> {
    let power = -lens_matrix(lens).m[0][1];
    (power.abs() > 1e-15).then(|| 1.0 / power)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParaxialError {
    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("constraint system is singular")]
    SingularKkt,
    #[error(transparent)]
    Lens(#[from] LensError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub max_iter: usize,
    /// Bound on both the constraint residual and the stationarity residual.
    pub tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub lens: LensSystem,
    /// Input parameter vector the projection measured distance from.
    pub input: Vec<f64>,
    pub multipliers: [f64; 2],
    /// Parameter indices held fixed (frozen, structural, extents, clamped).
    pub fixed: Vec<usize>,
    /// Largest constraint violation at the solution.
    pub residual: f64,
    pub iterations: usize,
}

/// Constraint value, Jacobian and per-constraint Hessians restricted to the
/// `vars` entries of `theta`.
struct Local {
    c: [f64; 2],
    jac: DMatrix<f64>,
    hess: [DMatrix<f64>; 2],
}

fn hyper(theta: &[f64], i: usize, j: usize) -> Vec<HyperDual> {
    let mut v: Vec<HyperDual> = theta.iter().map(|&x| HyperDual::cst(x)).collect();
    v[i].a = 1.0;
    v[j].b += 1.0;
    v
}

fn local_model(theta: &[f64], vars: &[usize]) -> Local {
    let n = vars.len();
    let mut jac = DMatrix::zeros(2, n);
    let mut hess = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let c = state_of(theta);
    for (a, &i) in vars.iter().enumerate() {
        for (b, &j) in vars.iter().enumerate().skip(a) {
            let s = state_of(&hyper(theta, i, j));
            for k in 0..2 {
                hess[k][(a, b)] = s[k].ab;
                hess[k][(b, a)] = s[k].ab;
                if a == b {
                    jac[(k, a)] = s[k].a;
                }
            }
        }
    }
    Local { c, jac, hess }
}

/// Entries the projection may move.
fn free_entries(lens: &LensSystem, fixed: &[usize]) -> Vec<usize> {
    let structural = lens.structural_indices();
    (0..lens.surface_count() * PARAMS_PER_SURFACE)
        .filter(|i| Field::of_index(*i) != Field::Extent)
        .filter(|i| !structural.contains(i) && !fixed.contains(i))
        .collect()
}

struct Solve {
    theta: Vec<f64>,
    lambda: [f64; 2],
    constraint: f64,
    stationarity: f64,
    iterations: usize,
}

fn kkt_residual(
    theta: &[f64],
    input: &[f64],
    vars: &[usize],
    reference: [f64; 2],
    lambda: [f64; 2],
    local: &Local,
) -> (DVector<f64>, f64, f64) {
    let n = vars.len();
    let mut f = DVector::zeros(n + 2);
    let mut stat: f64 = 0.0;
    for (a, &i) in vars.iter().enumerate() {
        let g = theta[i] - input[i]
            + local.jac[(0, a)] * lambda[0]
            + local.jac[(1, a)] * lambda[1];
        f[a] = g;
        stat = stat.max(g.abs());
    }
    let mut cons: f64 = 0.0;
    for k in 0..2 {
        f[n + k] = local.c[k] - reference[k];
        cons = cons.max(f[n + k].abs());
    }
    (f, cons, stat)
}

/// Damped Newton iteration on the KKT conditions, starting at `input` with
/// zero multipliers.
fn newton(
    input: &[f64],
    start: &[f64],
    vars: &[usize],
    reference: [f64; 2],
    cfg: &ProjectionConfig,
) -> Result<Solve, ParaxialError> {
    let n = vars.len();
    let mut theta = start.to_vec();
    let mut lambda = [0.0; 2];
    let mut local = local_model(&theta, vars);
    let (mut f, mut cons, mut stat) = kkt_residual(&theta, input, vars, reference, lambda, &local);
    let mut iterations = 0;
    let target = cfg.tol * 1e-3;
    while iterations < cfg.max_iter && (cons > target || stat > target) {
        iterations += 1;
        let mut k = DMatrix::zeros(n + 2, n + 2);
        for a in 0..n {
            for b in 0..n {
                k[(a, b)] = lambda[0] * local.hess[0][(a, b)] + lambda[1] * local.hess[1][(a, b)];
            }
            k[(a, a)] += 1.0;
            for c in 0..2 {
                k[(a, n + c)] = local.jac[(c, a)];
                k[(n + c, a)] = local.jac[(c, a)];
            }
        }
        let step = k.lu().solve(&(-&f)).ok_or(ParaxialError::SingularKkt)?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(ParaxialError::SingularKkt);
        }
        let merit = f.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = theta.clone();
            for (a, &i) in vars.iter().enumerate() {
                trial[i] += t * step[a];
            }
            let trial_lambda = [lambda[0] + t * step[n], lambda[1] + t * step[n + 1]];
            let trial_local = local_model(&trial, vars);
            let (tf, tc, ts) =
                kkt_residual(&trial, input, vars, reference, trial_lambda, &trial_local);
            // Filter acceptance: the KKT norm mixes mm and rad, so a step that
            // reduces only the constraint violation is also taken.
            if tf.norm() < merit || tc < cons {
                theta = trial;
                lambda = trial_lambda;
                local = trial_local;
                f = tf;
                cons = tc;
                stat = ts;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Solve {
        theta,
        lambda,
        constraint: cons,
        stationarity: stat,
        iterations,
    })
}

/// Pulls entries back inside the parameter domain. Returns the indices
/// that had to move.
fn clamp_feasible(theta: &mut [f64], vars: &[usize], lens: &LensSystem) -> Vec<usize> {
    let mut moved = Vec::new();
    for &i in vars {
        let s = i / PARAMS_PER_SURFACE;
        match Field::of_index(i) {
            Field::Gap if theta[i] < 0.0 => {
                theta[i] = 1e-3;
                moved.push(i);
            }
            Field::IndexAfter if theta[i] <= 1.0 => {
                theta[i] = 1.001;
                moved.push(i);
            }
            Field::Curvature => {
                let extent = lens.surfaces()[s].extent;
                if theta[i].abs() * extent >= 1.0 {
                    theta[i] = theta[i].signum() * 0.999 / extent;
                    moved.push(i);
                }
            }
            _ => {}
        }
    }
    moved
}

/// Nearest lens to `mutated` (Euclidean in θ) whose paraxial state equals
/// `reference`, with `frozen` entries held fixed.
pub fn paraxial_project(
    mutated: &LensSystem,
    reference: [f64; 2],
    frozen: &[usize],
) -> Result<Projection, ParaxialError> {
    paraxial_project_with(mutated, reference, frozen, &ProjectionConfig::default())
}

pub fn paraxial_project_with(
    mutated: &LensSystem,
    reference: [f64; 2],
    frozen: &[usize],
    cfg: &ProjectionConfig,
) -> Result<Projection, ParaxialError> {
    let input = mutated.to_vector();
    let mut fixed: Vec<usize> = frozen.to_vec();
    let mut start = input.clone();
    let mut total = 0;
    for attempt in 0..2 {
        let vars = free_entries(mutated, &fixed);
        let mut solve = newton(&input, &start, &vars, reference, cfg)?;
        total += solve.iterations;
        if solve.constraint > cfg.tol || solve.stationarity > cfg.tol {
            return Err(ParaxialError::NoConvergence {
                iterations: total,
                residual: solve.constraint.max(solve.stationarity),
            });
        }
        let moved = clamp_feasible(&mut solve.theta, &vars, mutated);
        if moved.is_empty() {
            let lens = mutated.with_vector(&solve.theta)?;
            let s = paraxial_state(&lens);
            let residual = (s[0] - reference[0]).abs().max((s[1] - reference[1]).abs());
            let structural = mutated.structural_indices();
            let mut fixed_all: Vec<usize> = (0..input.len())
                .filter(|i| {
                    Field::of_index(*i) == Field::Extent
                        || structural.contains(i)
                        || fixed.contains(i)
                })
                .collect();
            fixed_all.sort_unstable();
            return Ok(Projection {
                lens,
                input,
                multipliers: solve.lambda,
                fixed: fixed_all,
                residual,
                iterations: total,
            });
        }
        if attempt == 1 {
            break;
        }
        fixed.extend(moved.iter().copied());
        start = input.clone();
        for &i in &moved {
            start[i] = solve.theta[i];
        }
    }
    Err(ParaxialError::NoConvergence {
        iterations: total,
        residual: f64::INFINITY,
    })
}

/// Derivative of the projected parameters with respect to the input
/// parameters, `J[i][j] = dθ*_i/dθ_j`.
///
/// Differentiates the KKT conditions at the solution: stationarity rows
/// for moving entries, identity rows for fixed ones, and the linearized
/// constraint, giving a square system of size `4K + 2`.
pub fn projection_jacobian(p: &Projection) -> Result<DMatrix<f64>, ParaxialError> {
    let theta = p.lens.to_vector();
    let n = theta.len();
    let all: Vec<usize> = (0..n).collect();
    let local = local_model(&theta, &all);
    let mut k = DMatrix::zeros(n + 2, n + 2);
    for i in 0..n {
        if p.fixed.contains(&i) {
            k[(i, i)] = 1.0;
            continue;
        }
        for j in 0..n {
            k[(i, j)] = p.multipliers[0] * local.hess[0][(i, j)]
                + p.multipliers[1] * local.hess[1][(i, j)];
        }
        k[(i, i)] += 1.0;
        k[(i, n)] = local.jac[(0, i)];
        k[(i, n + 1)] = local.jac[(1, i)];
    }
    for c in 0..2 {
        for j in 0..n {
            k[(n + c, j)] = local.jac[(c, j)];
        }
    }
    let mut rhs = DMatrix::zeros(n + 2, n);
    for i in 0..n {
        rhs[(i, i)] = 1.0;
    }
    let lu = k.lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(ParaxialError::SingularKkt);
    }
    let sol = lu.solve(&rhs).ok_or(ParaxialError::SingularKkt)?;
    Ok(sol.rows(0, n).into_owned())
}
