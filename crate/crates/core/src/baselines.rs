//! Comparison methods: reversible-jump Metropolis-Hastings with Langevin
//! perturbations, and brute-force add/remove search followed by descent.

use crate::lens::LensSystem;
use crate::mutate::{applicable_mutations, apply_mutation, MutationConfig, MutationKind};
use crate::paraxial::{paraxial_project, paraxial_state, projection_jacobian, Projection};
use crate::restore::{
    Adam, AdamConfig, Assessment, Event, Landscape, LensLandscape, LogRecord, ReversibleMove,
};
use crate::loss::boltzmann;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Langevin proposal `θ' = θ − η s²∇L + √η s ε`, with per-parameter scales
/// `s` (one everywhere gives the plain form; zero pins an entry).
pub fn mala_propose<R: Rng + ?Sized>(
    theta: &[f64],
    grad: &[f64],
    scales: &[f64],
    eta: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(eta > 0.0, "step size must be positive");
    theta
        .iter()
        .zip(grad)
        .zip(scales)
        .map(|((x, g), s)| {
            let e: f64 = rng.sample(StandardNormal);
            x - eta * s * s * g + eta.sqrt() * s * e
        })
        .collect()
}

/// Log density of the Langevin proposal from `theta` (with gradient
/// `grad`) to `to`, over the entries with nonzero scale.
pub fn mala_log_density(theta: &[f64], grad: &[f64], scales: &[f64], eta: f64, to: &[f64]) -> f64 {
    let mut out = 0.0;
    for i in 0..theta.len() {
        let s = scales[i];
        if s == 0.0 {
            continue;
        }
        let var = eta * s * s;
        let mean = theta[i] - var * grad[i];
        let z = to[i] - mean;
        out += -0.5 * z * z / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
    }
    out
}

/// Acceptance probability `min(1, exp((L_old − L_new)/T) q_rev/q_fwd)`
/// with the proposal densities given as logarithms.
pub fn mh_alpha(l_old: f64, l_new: f64, log_q_fwd: f64, log_q_rev: f64, temperature: f64) -> f64 {
    if !l_new.is_finite() || log_q_rev == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_a = (l_old - l_new) / temperature + log_q_rev - log_q_fwd;
    log_a.min(0.0).exp()
}

/// Metropolis-Hastings test with proposal densities `q_fwd > 0` and `q_rev`.
pub fn mh_accept<R: Rng + ?Sized>(
    l_old: f64,
    l_new: f64,
    q_fwd: f64,
    q_rev: f64,
    temperature: f64,
    rng: &mut R,
) -> bool {
    assert!(q_fwd > 0.0, "forward proposal density must be positive");
    let alpha = mh_alpha(l_old, l_new, q_fwd.ln(), q_rev.ln(), temperature);
    rng.random::<f64>() < alpha
}

/// Log pseudo-determinant: sum of logs of the singular values above a
/// relative cutoff.
fn log_pdet(j: &nalgebra::DMatrix<f64>) -> f64 {
    let sv = j.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter()
        .filter(|s| **s > 1e-10 * top)
        .map(|s| s.ln())
        .sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The deterministic move that undoes `m`, if any. Undoing a removal
/// needs the removed geometry to be redrawn exactly, which has zero
/// probability.
fn inverse(m: MutationKind) -> Option<MutationKind> {
    match m {
        MutationKind::AddSinglet(slot) => Some(MutationKind::RemoveSinglet(slot)),
        MutationKind::GlueSinglets(e) => Some(MutationKind::SplitDoublet(e)),
        MutationKind::SplitDoublet(e) => Some(MutationKind::GlueSinglets(e)),
        MutationKind::RemoveSinglet(_) => None,
    }
}

fn apply_and_project(
    lens: &LensSystem,
    m: MutationKind,
    cfg: &MutationConfig,
    rng: &mut dyn RngCore,
) -> Option<(LensSystem, Option<Projection>)> {
    let mutated = apply_mutation(lens, m, &cfg.seed, rng).ok()?;
    if !cfg.project {
        return Some((mutated.lens, None));
    }
    let p = paraxial_project(&mutated.lens, paraxial_state(lens), &mutated.frozen).ok()?;
    Some((p.lens.clone(), Some(p)))
}

/// Draws a uniform applicable mutation of `lens` and computes its
/// reverse/forward density ratio. The ratio is nonzero only when the
/// inverse move applied to the result reproduces `lens` to 1e-9; it then
/// carries the mutation-choice counts, the inserted singlet's seed density
/// and the projection Jacobians' pseudo-determinants.
pub fn reversible_mutation(
    lens: &LensSystem,
    cfg: &MutationConfig,
    rng: &mut dyn RngCore,
) -> Option<ReversibleMove> {
    let options = applicable_mutations(lens);
    if options.is_empty() {
        return None;
    }
    let kind = options[rng.random_range(0..options.len())];
    let (moved, fwd) = apply_and_project(lens, kind, cfg, rng)?;
    let log_ratio = reverse_log_ratio(lens, &moved, kind, fwd.as_ref(), options.len(), cfg);
    Some(ReversibleMove {
        lens: moved,
        kind,
        log_ratio,
    })
}

fn reverse_log_ratio(
    from: &LensSystem,
    moved: &LensSystem,
    kind: MutationKind,
    fwd: Option<&Projection>,
    n_fwd: usize,
    cfg: &MutationConfig,
) -> f64 {
    let Some(inv) = inverse(kind) else {
        return f64::NEG_INFINITY;
    };
    // The inverse moves are deterministic, so any rng will do.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let Some((back, rev)) = apply_and_project(moved, inv, cfg, &mut rng) else {
        return f64::NEG_INFINITY;
    };
    if back.elements() != from.elements() || max_abs_diff(&back.to_vector(), &from.to_vector()) > 1e-9
    {
        return f64::NEG_INFINITY;
    }
    let n_rev = applicable_mutations(moved).len();
    let mut out = (n_fwd as f64).ln() - (n_rev as f64).ln();
    if let MutationKind::AddSinglet(slot) = kind {
        let at = moved.element_spans()[slot].start;
        let s = moved.surfaces();
        out -= cfg.seed.log_density(s[at].gap, s[at].curvature, s[at + 1].curvature);
    }
    let jac = |p: Option<&Projection>| {
        p.and_then(|p| projection_jacobian(p).ok())
            .map_or(0.0, |j| log_pdet(&j))
    };
    out + jac(fwd) - jac(rev.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Langevin step size.
    pub eta: f64,
    /// Probability of a Langevin perturbation; the rest are mutations.
    pub perturb_weight: f64,
    pub temperature: f64,
    /// Loss assigned to lenses that cannot be evaluated.
    pub loss_ceiling: f64,
}

impl MhConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            eta: 1.0,
            perturb_weight: 0.9,
            temperature,
            loss_ceiling: 1e6,
        }
    }
}

/// Proposals made and accepted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub proposed: usize,
    pub accepted: usize,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as usize;
    }
}

#[derive(Debug, Clone)]
pub struct MhResult {
    pub best: LensSystem,
    pub best_loss: Assessment,
    pub initial_loss: Assessment,
    pub perturbations: Tally,
    pub mutations: Tally,
    pub log: Vec<LogRecord>,
}

struct State {
    lens: LensSystem,
    loss: Assessment,
    grad: Option<Vec<f64>>,
}

fn state_of<L: Landscape + ?Sized>(landscape: &L, lens: LensSystem, ceiling: f64) -> State {
    match landscape.gradient(&lens) {
        Some((loss, g)) if loss.total.is_finite() => {
            let grad = g.iter().all(|v| v.is_finite()).then_some(g);
            State { lens, loss, grad }
        }
        _ => State {
            lens,
            loss: Assessment::ceiling(ceiling),
            grad: None,
        },
    }
}

/// Reversible-jump Metropolis-Hastings over lenses: Langevin
/// perturbations mixed with topology moves from
/// [`Landscape::propose_reversible`]. The Langevin scales are the
/// landscape's step sizes.
pub fn rjmh_run<L: Landscape + ?Sized>(
    landscape: &L,
    initial: &LensSystem,
    cfg: &MhConfig,
    iterations: usize,
    seed: u64,
) -> MhResult {
    assert!(cfg.eta > 0.0, "step size must be positive");
    assert!((0.0..=1.0).contains(&cfg.perturb_weight), "perturb weight must lie in [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = state_of(landscape, initial.clone(), cfg.loss_ceiling);
    let initial_loss = cur.loss;
    let mut best = (cur.lens.clone(), cur.loss);
    let mut perturbations = Tally::default();
    let mut mutations = Tally::default();
    let mut log = Vec::with_capacity(iterations);
    for it in 1..=iterations {
        let event = if rng.random::<f64>() < cfg.perturb_weight {
            let ok = perturb(landscape, &mut cur, cfg, &mut rng);
            perturbations.record(ok);
            if ok {
                Event::PerturbAccepted
            } else {
                Event::PerturbRejected
            }
        } else {
            let ok = match landscape.propose_reversible(&cur.lens, &mut rng) {
                Some(mv) => {
                    let next = state_of(landscape, mv.lens, cfg.loss_ceiling);
                    let a = mh_alpha(cur.loss.total, next.loss.total, 0.0, mv.log_ratio, cfg.temperature);
                    let ok = rng.random::<f64>() < a;
                    if ok {
                        cur = next;
                    }
                    ok
                }
                None => false,
            };
            mutations.record(ok);
            if ok {
                Event::MutationAccepted
            } else {
                Event::MutationRejected
            }
        };
        if cur.loss.total < best.1.total {
            best = (cur.lens.clone(), cur.loss);
        }
        log.push(LogRecord {
            iteration: it,
            event,
            k: cur.lens.surface_count(),
            loss: cur.loss,
            pi: boltzmann(cur.loss.total, cfg.temperature),
        });
    }
    MhResult {
        best: best.0,
        best_loss: best.1,
        initial_loss,
        perturbations,
        mutations,
        log,
    }
}

fn perturb<L: Landscape + ?Sized>(
    landscape: &L,
    cur: &mut State,
    cfg: &MhConfig,
    rng: &mut ChaCha8Rng,
) -> bool {
    let Some(grad) = cur.grad.as_ref() else {
        return false;
    };
    let scales = landscape.step_sizes(&cur.lens);
    let theta = cur.lens.to_vector();
    let proposal = mala_propose(&theta, grad, &scales, cfg.eta, rng);
    let Some(lens) = landscape.try_params(&cur.lens, &proposal) else {
        return false;
    };
    let next = state_of(landscape, lens, cfg.loss_ceiling);
    let Some(next_grad) = next.grad.as_ref() else {
        return false;
    };
    let q_fwd = mala_log_density(&theta, grad, &scales, cfg.eta, &proposal);
    let q_rev = mala_log_density(&proposal, next_grad, &scales, cfg.eta, &theta);
    let a = mh_alpha(cur.loss.total, next.loss.total, q_fwd, q_rev, cfg.temperature);
    let ok = rng.random::<f64>() < a;
    if ok {
        *cur = next;
    }
    ok
}

/// Plain Adam descent from `lens`. Returns the lowest-loss lens seen
/// (including the start) and a log with one record per step.
pub fn descend<L: Landscape + ?Sized>(
    landscape: &L,
    lens: &LensSystem,
    adam_cfg: &AdamConfig,
    iterations: usize,
) -> (LensSystem, Option<Assessment>, Vec<LogRecord>) {
    let mut adam = Adam::default();
    let mut cur = lens.clone();
    let mut best: (LensSystem, Option<Assessment>) = (cur.clone(), landscape.assess(&cur));
    let mut log = Vec::with_capacity(iterations);
    for it in 1..=iterations {
        let Some((_, grad)) = landscape.gradient(&cur) else {
            break;
        };
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let lr = landscape.step_sizes(&cur);
        let delta = adam.update(adam_cfg, &grad, &lr);
        let theta: Vec<f64> = cur.to_vector().iter().zip(&delta).map(|(x, d)| x + d).collect();
        cur = landscape.constrain(&cur, &theta);
        let Some(a) = landscape.assess(&cur) else {
            break;
        };
        if best.1.is_none_or(|b| a.total < b.total) {
            best = (cur.clone(), Some(a));
        }
        log.push(LogRecord {
            iteration: it,
            event: Event::Step,
            k: cur.surface_count(),
            loss: a,
            pi: f64::NAN,
        });
    }
    (best.0, best.1, log)
}

/// One add or remove candidate of a brute-force search.
#[derive(Debug, Clone)]
pub struct Branch {
    pub kind: MutationKind,
    pub best: LensSystem,
    pub best_loss: Option<Assessment>,
    pub log: Vec<LogRecord>,
}

#[derive(Debug, Clone)]
pub struct BruteResult {
    pub best: LensSystem,
    pub best_loss: Option<Assessment>,
    pub initial_loss: Option<Assessment>,
    pub branches: Vec<Branch>,
}

/// The add and remove moves a brute-force search tries.
pub fn brute_force_candidates(lens: &LensSystem) -> Vec<MutationKind> {
    applicable_mutations(lens)
        .into_iter()
        .filter(|m| matches!(m, MutationKind::AddSinglet(_) | MutationKind::RemoveSinglet(_)))
        .collect()
}

/// Tries every single-singlet insertion and removal, descends each
/// candidate for an equal share of `iterations`, and keeps the best lens
/// (the initial lens included).
pub fn brute_force_search(
    landscape: &LensLandscape,
    initial: &LensSystem,
    adam_cfg: &AdamConfig,
    iterations: usize,
    seed: u64,
) -> BruteResult {
    let initial_loss = landscape.assess(initial);
    let candidates = brute_force_candidates(initial);
    let share = if candidates.is_empty() {
        0
    } else {
        iterations / candidates.len()
    };
    let branches: Vec<Branch> = if share == 0 {
        Vec::new()
    } else {
        candidates
            .par_iter()
            .enumerate()
            .filter_map(|(i, &kind)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let seeded = apply_mutation(initial, kind, &landscape.mutation.seed, &mut rng).ok()?;
                let (best, best_loss, log) = descend(landscape, &seeded.lens, adam_cfg, share);
                Some(Branch {
                    kind,
                    best,
                    best_loss,
                    log,
                })
            })
            .collect()
    };
    let mut best = (initial.clone(), initial_loss);
    for b in &branches {
        if let Some(l) = b.best_loss {
            if best.1.is_none_or(|cur| l.total < cur.total) {
                best = (b.best.clone(), Some(l));
            }
        }
    }
    BruteResult {
        best: best.0,
        best_loss: best.1,
        initial_loss,
        branches,
    }
}
