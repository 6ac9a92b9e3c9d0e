//! The regenerating sampler: noiseless Adam gradient sequences that end
//! with a probability driven by the change in target density, followed by
//! regeneration from a reservoir of good lenses (or, rarely, a global
//! sample) and a topology mutation.

use crate::lens::{ElementKind, Field, LensSystem, SurfaceSpec, AIR, PARAMS_PER_SURFACE};
use crate::loss::{boltzmann, LossBreakdown, LossModel};
use crate::mutate::{mutate_lens, MutationConfig, MutationKind, ProjectionStatus};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Loss value and its unweighted parts summed over field points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub spot: f64,
    pub throughput: f64,
    pub focal: f64,
    pub thickness: f64,
    pub total: f64,
}

impl Assessment {
    /// Stand-in for lenses whose loss cannot be evaluated.
    pub fn ceiling(total: f64) -> Self {
        Self {
            spot: f64::NAN,
            throughput: f64::NAN,
            focal: f64::NAN,
            thickness: f64::NAN,
            total,
        }
    }
}

impl From<&LossBreakdown> for Assessment {
    fn from(b: &LossBreakdown) -> Self {
        Self {
            spot: b.spot_sum(),
            throughput: b.throughput_sum(),
            focal: b.focal_sum(),
            thickness: b.thickness,
            total: b.total,
        }
    }
}

/// Result of a topology move proposed by a landscape.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub lens: LensSystem,
    pub kind: Option<MutationKind>,
    pub projection: ProjectionStatus,
}

/// Everything a sampler needs to know about the design problem.
pub trait Landscape: Sync {
    /// Loss of `lens`; `None` when it cannot be evaluated.
    fn assess(&self, lens: &LensSystem) -> Option<Assessment>;

    /// Loss and gradient over the flat parameters.
    fn gradient(&self, lens: &LensSystem) -> Option<(Assessment, Vec<f64>)>;

    /// Adam learning rate per parameter; zero pins a parameter.
    fn step_sizes(&self, lens: &LensSystem) -> Vec<f64>;

    /// Lens with parameters `theta`, pulled back into the valid domain.
    fn constrain(&self, lens: &LensSystem, theta: &[f64]) -> LensSystem;

    /// Lens with parameters `theta` if they are valid as given.
    fn try_params(&self, lens: &LensSystem, theta: &[f64]) -> Option<LensSystem>;

    fn sample_global(&self, rng: &mut dyn RngCore) -> LensSystem;

    fn mutate(&self, lens: &LensSystem, rng: &mut dyn RngCore) -> Move;

    /// Topology move for reversible samplers, with its proposal-density
    /// ratio. `None` when the landscape has no such moves.
    fn propose_reversible(
        &self,
        _lens: &LensSystem,
        _rng: &mut dyn RngCore,
    ) -> Option<ReversibleMove> {
        None
    }
}

/// A topology move with `ln(q_rev / q_fwd)`; `-inf` when the reverse move
/// cannot reproduce the starting lens.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibleMove {
    pub lens: LensSystem,
    pub kind: MutationKind,
    pub log_ratio: f64,
}

/// Learning rates per parameter class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub curvature: f64,
    pub extent: f64,
    pub gap: f64,
    pub index: f64,
}

impl Default for ClassRates {
    fn default() -> Self {
        Self {
            curvature: 3e-4,
            extent: 0.06,
            gap: 0.06,
            index: 1.5e-3,
        }
    }
}

impl ClassRates {
    pub fn of(&self, f: Field) -> f64 {
        match f {
            Field::Curvature => self.curvature,
            Field::Extent => self.extent,
            Field::Gap => self.gap,
            Field::IndexAfter => self.index,
        }
    }

    /// Per-parameter rates with the topology-pinned air indices at zero.
    pub fn for_lens(&self, lens: &LensSystem) -> Vec<f64> {
        let pinned = lens.structural_indices();
        (0..lens.surface_count() * PARAMS_PER_SURFACE)
            .map(|i| {
                if pinned.contains(&i) {
                    0.0
                } else {
                    self.of(Field::of_index(i))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments of the current gradient sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn reset(&mut self) {
        self.m.clear();
        self.v.clear();
        self.t = 0;
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Parameter update for `grad` with per-parameter rates `lr`.
    pub fn update(&mut self, cfg: &AdamConfig, grad: &[f64], lr: &[f64]) -> Vec<f64> {
        if self.m.len() != grad.len() {
            self.m = vec![0.0; grad.len()];
            self.v = vec![0.0; grad.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                -lr[i] * mh / (vh.sqrt() + cfg.eps)
            })
            .collect()
    }
}

/// Probability of ending a gradient sequence after the density moved from
/// `pi_old` to `pi_new`.
pub fn termination_prob(pi_old: f64, pi_new: f64, c: f64) -> f64 {
    (pi_old - pi_new + c) / (pi_old + c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirEntry {
    pub lens: LensSystem,
    pub pi: f64,
    pub loss: f64,
}

/// The best lenses seen at sequence ends, sorted by density, highest
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    capacity: usize,
    entries: Vec<ReservoirEntry>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
        }
    }

    pub fn entries(&self) -> &[ReservoirEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn min_pi(&self) -> Option<f64> {
        self.entries.last().map(|e| e.pi)
    }

    /// Inserts unless full and `pi` does not beat the worst entry.
    pub fn update(&mut self, lens: &LensSystem, pi: f64, loss: f64) {
        if self.capacity == 0 {
            return;
        }
        if self.is_full() && self.min_pi().is_some_and(|m| !(pi > m)) {
            return;
        }
        let at = self.entries.partition_point(|e| e.pi >= pi);
        self.entries.insert(
            at,
            ReservoirEntry {
                lens: lens.clone(),
                pi,
                loss,
            },
        );
        self.entries.truncate(self.capacity);
    }

    /// Uniform draw over stored entries.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&ReservoirEntry> {
        (!self.entries.is_empty()).then(|| &self.entries[rng.random_range(0..self.entries.len())])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Step,
    RegenGlobal,
    RegenReservoir,
    PerturbAccepted,
    PerturbRejected,
    MutationAccepted,
    MutationRejected,
}

impl Event {
    pub fn as_str(&self) -> &'static str {
        match self {
            Event::Step => "step",
            Event::RegenGlobal => "regen-global",
            Event::RegenReservoir => "regen-reservoir",
            Event::PerturbAccepted => "perturb-accepted",
            Event::PerturbRejected => "perturb-rejected",
            Event::MutationAccepted => "mutation-accepted",
            Event::MutationRejected => "mutation-rejected",
        }
    }

    pub fn is_rejection(&self) -> bool {
        matches!(self, Event::PerturbRejected | Event::MutationRejected)
    }

    pub fn is_regeneration(&self) -> bool {
        matches!(self, Event::RegenGlobal | Event::RegenReservoir)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of a sampler log: the state after the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub event: Event,
    /// Surface count.
    pub k: usize,
    pub loss: Assessment,
    pub pi: f64,
}

/// Column names of [`LogRecord`] CSV output.
pub const LOG_HEADER: &str = "iteration,event,K,L_spot,L_throughput,L_focal,L_thickness,L_total,pi";

impl LogRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.iteration,
            self.event,
            self.k,
            self.loss.spot,
            self.loss.throughput,
            self.loss.focal,
            self.loss.thickness,
            self.loss.total,
            self.pi
        )
    }
}

/// Writes a log as CSV.
pub fn log_csv(log: &[LogRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestoreConfig {
    /// Weight of global samples in the regeneration mixture.
    pub gamma: f64,
    /// Termination constant.
    pub c: f64,
    pub temperature: f64,
    pub adam: AdamConfig,
    pub reservoir_capacity: usize,
    /// Loss assigned to lenses that cannot be evaluated.
    pub loss_ceiling: f64,
}

impl RestoreConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            gamma: 0.02,
            c: 2.0,
            temperature,
            adam: AdamConfig::default(),
            reservoir_capacity: 5,
            loss_ceiling: 1e6,
        }
    }
}

/// A lens together with its cached loss, density and gradient.
#[derive(Debug, Clone)]
struct Point {
    lens: LensSystem,
    loss: Assessment,
    pi: f64,
    grad: Option<Vec<f64>>,
}

/// Sampler state between iterations.
pub struct Restore<'a, L: Landscape + ?Sized> {
    landscape: &'a L,
    cfg: RestoreConfig,
    current: Point,
    adam: Adam,
    reservoir: Reservoir,
    rng: ChaCha8Rng,
    iteration: usize,
    best: (LensSystem, Assessment, f64),
    log: Vec<LogRecord>,
}

/// Outcome of [`Restore::run`] / [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub best: LensSystem,
    pub best_loss: Assessment,
    pub initial_loss: Assessment,
    pub reservoir: Reservoir,
    pub log: Vec<LogRecord>,
}

impl RunResult {
    /// Fraction of logged iterations whose lens has a lower total loss than
    /// the initial lens.
    pub fn better_than_initial(&self) -> f64 {
        better_fraction(&self.log, self.initial_loss.total, |_| true)
    }

    /// Same fraction restricted to regeneration points.
    pub fn better_than_initial_at_regenerations(&self) -> f64 {
        better_fraction(&self.log, self.initial_loss.total, |r| r.event.is_regeneration())
    }
}

fn better_fraction(log: &[LogRecord], l0: f64, keep: impl Fn(&LogRecord) -> bool) -> f64 {
    let (mut n, mut better) = (0usize, 0usize);
    for r in log.iter().filter(|r| keep(r)) {
        n += 1;
        if r.loss.total < l0 {
            better += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        better as f64 / n as f64
    }
}

impl<'a, L: Landscape + ?Sized> Restore<'a, L> {
    pub fn new(landscape: &'a L, initial: &LensSystem, cfg: RestoreConfig, seed: u64) -> Self {
        assert!(cfg.c >= 1.0, "termination constant must be at least 1");
        assert!(cfg.reservoir_capacity > 0, "reservoir needs room for one lens");
        assert!(cfg.temperature > 0.0, "temperature must be positive");
        let current = Self::point(landscape, &cfg, initial.clone());
        let best = (current.lens.clone(), current.loss, current.pi);
        Self {
            landscape,
            cfg,
            current,
            adam: Adam::default(),
            reservoir: Reservoir::new(cfg.reservoir_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            best,
            log: Vec::new(),
        }
    }

    fn point(landscape: &L, cfg: &RestoreConfig, lens: LensSystem) -> Point {
        match landscape.gradient(&lens) {
            Some((loss, grad))
                if loss.total.is_finite() && grad.iter().all(|g| g.is_finite()) =>
            {
                let pi = boltzmann(loss.total, cfg.temperature);
                Point {
                    lens,
                    loss,
                    pi,
                    grad: Some(grad),
                }
            }
            Some((loss, _)) if loss.total.is_finite() => Point {
                lens,
                pi: boltzmann(loss.total, cfg.temperature),
                loss,
                grad: None,
            },
            _ => Point {
                lens,
                loss: Assessment::ceiling(cfg.loss_ceiling),
                pi: boltzmann(cfg.loss_ceiling, cfg.temperature),
                grad: None,
            },
        }
    }

    pub fn lens(&self) -> &LensSystem {
        &self.current.lens
    }

    pub fn pi(&self) -> f64 {
        self.current.pi
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn adam_steps(&self) -> i32 {
        self.adam.steps()
    }

    /// Current lens after one noiseless Adam step, or `None` when the
    /// gradient is unavailable.
    fn gradient_step(&mut self) -> Option<Point> {
        let grad = self.current.grad.as_ref()?;
        let lr = self.landscape.step_sizes(&self.current.lens);
        let delta = self.adam.update(&self.cfg.adam, grad, &lr);
        let theta: Vec<f64> = self
            .current
            .lens
            .to_vector()
            .iter()
            .zip(&delta)
            .map(|(x, d)| x + d)
            .collect();
        let lens = self.landscape.constrain(&self.current.lens, &theta);
        Some(Self::point(self.landscape, &self.cfg, lens))
    }

    fn note_best(&mut self, p: &Point) {
        if p.pi > self.best.2 || (p.pi == self.best.2 && p.loss.total < self.best.1.total) {
            self.best = (p.lens.clone(), p.loss, p.pi);
        }
    }

    /// One iteration with the two uniform draws supplied by the caller.
    pub fn step_with(&mut self, u_terminate: f64, u_mixture: f64) -> LogRecord {
        let stepped = self.gradient_step();
        let (next, beta) = match stepped {
            Some(p) => {
                let beta = termination_prob(self.current.pi, p.pi, self.cfg.c);
                assert!(
                    (0.0..=1.0).contains(&beta),
                    "termination probability {beta} outside [0, 1]"
                );
                (p, beta)
            }
            // No usable gradient: the sequence is forced to end here.
            None => (self.current.clone(), 1.0),
        };
        self.note_best(&next);
        let event = if u_terminate < beta {
            self.reservoir.update(&next.lens, next.pi, next.loss.total);
            let (seed_lens, event) = if u_mixture < self.cfg.gamma {
                (self.landscape.sample_global(&mut self.rng), Event::RegenGlobal)
            } else {
                let e = self
                    .reservoir
                    .sample(&mut self.rng)
                    .expect("reservoir holds at least the lens just stored");
                (e.lens.clone(), Event::RegenReservoir)
            };
            let moved = self.landscape.mutate(&seed_lens, &mut self.rng);
            self.adam.reset();
            self.current = Self::point(self.landscape, &self.cfg, moved.lens);
            let cur = self.current.clone();
            self.note_best(&cur);
            event
        } else {
            self.current = next;
            Event::Step
        };
        self.iteration += 1;
        let rec = LogRecord {
            iteration: self.iteration,
            event,
            k: self.current.lens.surface_count(),
            loss: self.current.loss,
            pi: self.current.pi,
        };
        self.log.push(rec);
        rec
    }

    /// One iteration of the sampler.
    pub fn step(&mut self) -> LogRecord {
        let u_terminate: f64 = self.rng.random();
        let u_mixture: f64 = self.rng.random();
        self.step_with(u_terminate, u_mixture)
    }

    pub fn run(mut self, iterations: usize) -> RunResult {
        let initial_loss = self.current.loss;
        for _ in 0..iterations {
            self.step();
        }
        RunResult {
            best: self.best.0,
            best_loss: self.best.1,
            initial_loss,
            reservoir: self.reservoir,
            log: self.log,
        }
    }
}

/// Runs the sampler for `iterations` steps from `initial`.
pub fn run<L: Landscape + ?Sized>(
    landscape: &L,
    initial: &LensSystem,
    cfg: RestoreConfig,
    iterations: usize,
    seed: u64,
) -> RunResult {
    Restore::new(landscape, initial, cfg, seed).run(iterations)
}

/// Parameter bounds of global samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalBounds {
    pub curvature: (f64, f64),
    pub extent: (f64, f64),
    pub gap: (f64, f64),
    pub index: (f64, f64),
    pub max_elements: usize,
}

impl Default for GlobalBounds {
    fn default() -> Self {
        Self {
            curvature: (-0.05, 0.05),
            extent: (2.0, 30.0),
            gap: (0.1, 50.0),
            index: (1.4, 1.9),
            max_elements: 8,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl GlobalBounds {
    /// Uniform topology (element count and kinds), then uniform entries.
    /// Extents are capped so every surface stays below a hemisphere.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, target_z: f64) -> LensSystem {
        let n = rng.random_range(1..=self.max_elements.max(1));
        let elements: Vec<ElementKind> = (0..n)
            .map(|_| {
                if rng.random::<bool>() {
                    ElementKind::Singlet
                } else {
                    ElementKind::CementedDoublet
                }
            })
            .collect();
        self.sample_topology(rng, &elements, target_z)
    }

    pub fn sample_topology<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        elements: &[ElementKind],
        target_z: f64,
    ) -> LensSystem {
        let mut surfaces = Vec::new();
        for kind in elements {
            let m = kind.surface_count();
            for j in 0..m {
                let curvature = uniform(rng, self.curvature);
                let cap = if curvature == 0.0 {
                    f64::INFINITY
                } else {
                    0.99 / curvature.abs()
                };
                let extent = uniform(rng, (self.extent.0.min(cap), self.extent.1.min(cap)));
                let gap = uniform(rng, self.gap);
                let index = if j + 1 == m {
                    AIR
                } else {
                    uniform(rng, self.index)
                };
                surfaces.push(SurfaceSpec::new(curvature, extent, gap, index));
            }
        }
        LensSystem::new(surfaces, elements.to_vec(), target_z)
            .expect("global samples satisfy lens invariants by construction")
    }
}

/// Pulls a parameter vector back into the lens domain.
pub fn clamp_params(lens: &LensSystem, theta: &[f64]) -> LensSystem {
    let mut t = theta.to_vec();
    for s in 0..lens.surface_count() {
        let base = s * PARAMS_PER_SURFACE;
        t[base + 1] = t[base + 1].max(0.1);
        t[base + 2] = t[base + 2].max(0.0);
        if !lens.structural_indices().contains(&(base + 3)) {
            t[base + 3] = t[base + 3].clamp(1.001, 3.0);
        }
        let e = t[base + 1];
        if t[base].abs() * e >= 0.999 {
            t[base] = t[base].signum() * 0.998 / e;
        }
    }
    lens.with_vector(&t)
        .expect("clamped parameters satisfy lens invariants")
}

/// The lens-design problem: real losses, class learning rates, global
/// samples within bounds and paraxially projected mutations.
#[derive(Debug, Clone)]
pub struct LensLandscape {
    pub model: LossModel,
    pub rates: ClassRates,
    pub bounds: GlobalBounds,
    pub mutation: MutationConfig,
    /// Allow topology changes; without them a regeneration only restarts
    /// from the sampled lens.
    pub mutations: bool,
}

impl LensLandscape {
    pub fn new(model: LossModel) -> Self {
        Self {
            model,
            rates: ClassRates::default(),
            bounds: GlobalBounds::default(),
            mutation: MutationConfig::default(),
            mutations: true,
        }
    }
}

impl Landscape for LensLandscape {
    fn assess(&self, lens: &LensSystem) -> Option<Assessment> {
        let b = self.model.evaluate(lens).ok()?;
        b.total.is_finite().then(|| Assessment::from(&b))
    }

    fn gradient(&self, lens: &LensSystem) -> Option<(Assessment, Vec<f64>)> {
        let (b, g) = self.model.gradient(lens).ok()?;
        Some((Assessment::from(&b), g))
    }

    fn step_sizes(&self, lens: &LensSystem) -> Vec<f64> {
        self.rates.for_lens(lens)
    }

    fn constrain(&self, lens: &LensSystem, theta: &[f64]) -> LensSystem {
        clamp_params(lens, theta)
    }

    fn try_params(&self, lens: &LensSystem, theta: &[f64]) -> Option<LensSystem> {
        lens.with_vector(theta).ok()
    }

    fn sample_global(&self, rng: &mut dyn RngCore) -> LensSystem {
        self.bounds.sample(rng, self.model.config().field_points[0][2])
    }

    fn mutate(&self, lens: &LensSystem, rng: &mut dyn RngCore) -> Move {
        if !self.mutations {
            return Move {
                lens: lens.clone(),
                kind: None,
                projection: ProjectionStatus::Skipped,
            };
        }
        let out = mutate_lens(lens, &self.mutation, rng);
        Move {
            lens: out.lens,
            kind: out.kind,
            projection: out.projection,
        }
    }

    fn propose_reversible(
        &self,
        lens: &LensSystem,
        rng: &mut dyn RngCore,
    ) -> Option<ReversibleMove> {
        if !self.mutations {
            return None;
        }
        crate::baselines::reversible_mutation(lens, &self.mutation, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn termination_probability_values() {
        assert!((termination_prob(0.5, 0.5, 2.0) - 0.8).abs() <= 1e-15);
        assert!((termination_prob(0.5, 0.9, 2.0) - 0.64).abs() <= 1e-15);
        assert!((termination_prob(0.5, 0.1, 2.0) - 0.96).abs() <= 1e-15);
    }

    #[test]
    fn termination_probability_bounds() {
        let c = 1.0;
        for i in 0..=50 {
            for j in 0..=50 {
                let (a, b) = (i as f64 / 50.0, j as f64 / 50.0);
                let beta = termination_prob(a.max(1e-12), b.max(1e-12), c);
                assert!((0.0..=1.0).contains(&beta));
                assert!(beta >= (c - 1.0) / (c + 1.0) - 1e-15);
            }
        }
    }

    fn lens(gap: f64) -> LensSystem {
        LensSystem::new(
            vec![
                SurfaceSpec::new(0.0, 10.0, 2.0, 1.5),
                SurfaceSpec::new(0.0, 10.0, gap, 1.0),
            ],
            vec![ElementKind::Singlet],
            -100.0,
        )
        .unwrap()
    }

    #[test]
    fn reservoir_updates() {
        let mut r = Reservoir::new(3);
        r.update(&lens(1.0), 0.2, 1.0);
        assert_eq!(r.len(), 1);
        r.update(&lens(2.0), 0.5, 1.0);
        r.update(&lens(3.0), 0.3, 1.0);
        assert!(r.is_full());
        let before = r.clone();
        r.update(&lens(4.0), 0.1, 1.0);
        assert_eq!(r, before);
        r.update(&lens(5.0), 0.4, 1.0);
        let pis: Vec<f64> = r.entries().iter().map(|e| e.pi).collect();
        assert_eq!(pis, vec![0.5, 0.4, 0.3]);
    }

    #[test]
    fn adam_on_a_quadratic() {
        let mut adam = Adam::default();
        let cfg = AdamConfig::default();
        let mut x = 1.0f64;
        let mut last = x * x;
        for _ in 0..50 {
            x += adam.update(&cfg, &[2.0 * x], &[1e-2])[0];
            assert!(x * x < last);
            last = x * x;
        }
        let mut fresh = Adam::default();
        assert_eq!(fresh.update(&cfg, &[0.0], &[1e-2]), vec![0.0]);
    }

    #[test]
    fn global_samples_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = GlobalBounds::default();
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let l = b.sample(&mut rng, -500.0);
            assert!(l.validate().is_ok());
            assert!(l.elements().len() <= 8);
            sum += l.surfaces()[0].curvature;
        }
        // Uniform on [−0.05, 0.05]: sd of the mean is 0.1/√12/√n.
        let sd = 0.1 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn collapsed_bounds_are_deterministic() {
        let b = GlobalBounds {
            curvature: (0.01, 0.01),
            extent: (5.0, 5.0),
            gap: (3.0, 3.0),
            index: (1.6, 1.6),
            max_elements: 1,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let kinds = [ElementKind::Singlet];
        assert_eq!(
            b.sample_topology(&mut r1, &kinds, -10.0),
            b.sample_topology(&mut r2, &kinds, -10.0)
        );
    }
}
