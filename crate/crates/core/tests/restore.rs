use lensforge_core::lens::LensSystem;
use lensforge_core::restore::{
    run, Assessment, Event, Landscape, Move, Restore, RestoreConfig,
};
use lensforge_core::toy::{ToyLandscape, ToyProblem, ToyVariant};
use rand::RngCore;

fn toy() -> ToyLandscape {
    ToyLandscape::new(ToyProblem::new(ToyVariant::OneGap)).unwrap()
}

/// Toy landscape with a fixed global sample and a recognizable mutation.
struct Marked(ToyLandscape);

impl Landscape for Marked {
    fn assess(&self, lens: &LensSystem) -> Option<Assessment> {
        self.0.assess(lens)
    }
    fn gradient(&self, lens: &LensSystem) -> Option<(Assessment, Vec<f64>)> {
        self.0.gradient(lens)
    }
    fn step_sizes(&self, lens: &LensSystem) -> Vec<f64> {
        self.0.step_sizes(lens)
    }
    fn constrain(&self, lens: &LensSystem, theta: &[f64]) -> LensSystem {
        self.0.constrain(lens, theta)
    }
    fn try_params(&self, lens: &LensSystem, theta: &[f64]) -> Option<LensSystem> {
        self.0.try_params(lens, theta)
    }
    fn sample_global(&self, _rng: &mut dyn RngCore) -> LensSystem {
        self.0.problem.lens(&[55.0]).unwrap()
    }
    fn mutate(&self, lens: &LensSystem, _rng: &mut dyn RngCore) -> Move {
        let x = self.0.problem.point(lens);
        Move {
            lens: self.0.problem.lens(&[x[0] + 1.0]).unwrap(),
            kind: None,
            projection: lensforge_core::mutate::ProjectionStatus::Skipped,
        }
    }
}

#[test]
fn forced_termination_takes_the_global_branch() {
    let l = Marked(toy());
    let start = l.0.problem.lens(&[66.0]).unwrap();
    let mut s = Restore::new(&l, &start, RestoreConfig::new(1.0), 0);
    assert!(s.reservoir().is_empty());
    let rec = s.step_with(0.0, 0.0);
    assert_eq!(rec.event, Event::RegenGlobal);
    assert_eq!(l.0.problem.point(s.lens()), vec![56.0]);
    assert_eq!(s.adam_steps(), 0);
    assert_eq!(s.reservoir().len(), 1);
}

#[test]
fn forced_termination_reservoir_branch_mutates_a_stored_lens() {
    let l = Marked(toy());
    let start = l.0.problem.lens(&[66.0]).unwrap();
    let mut s = Restore::new(&l, &start, RestoreConfig::new(1.0), 0);
    let rec = s.step_with(0.0, 0.99);
    assert_eq!(rec.event, Event::RegenReservoir);
    let stored = l.0.problem.point(&s.reservoir().entries()[0].lens)[0];
    assert_eq!(l.0.problem.point(s.lens())[0], stored + 1.0);
}

#[test]
fn forced_continue_is_one_adam_step() {
    let l = toy();
    let start = l.problem.lens(&[66.0]).unwrap();
    let (_, g) = l.gradient(&start).unwrap();
    let gi = 4 + 2;
    let mut s = Restore::new(&l, &start, RestoreConfig::new(1.0), 0);
    let rec = s.step_with(1.0, 0.0);
    assert_eq!(rec.event, Event::Step);
    // The first Adam step moves each free entry by its rate against the
    // gradient sign.
    let moved = l.problem.point(s.lens())[0];
    let expect = 66.0 - l.rate * g[gi].signum();
    assert!((moved - expect).abs() < 1e-6, "{moved} vs {expect}");
    assert_eq!(s.adam_steps(), 1);
}

#[test]
fn zero_iterations_return_the_initial_lens() {
    let l = toy();
    let start = l.problem.lens(&[70.0]).unwrap();
    let r = run(&l, &start, RestoreConfig::new(1.0), 0, 3);
    assert_eq!(r.best, start);
    assert!(r.log.is_empty());
}

#[test]
fn seeded_runs_repeat_exactly() {
    let l = ToyLandscape::new(ToyProblem::new(ToyVariant::Mixed)).unwrap();
    let start = l.problem.lens(&[70.0]).unwrap();
    let a = run(&l, &start, RestoreConfig::new(1.0), 100, 11);
    let b = run(&l, &start, RestoreConfig::new(1.0), 100, 11);
    assert_eq!(
        lensforge_core::restore::log_csv(&a.log),
        lensforge_core::restore::log_csv(&b.log)
    );
    assert_eq!(a.best, b.best);
}

#[test]
fn run_invariants() {
    let l = ToyLandscape::new(ToyProblem::new(ToyVariant::Mixed)).unwrap();
    let start = l.problem.lens(&[70.0]).unwrap();
    let mut s = Restore::new(&l, &start, RestoreConfig::new(1.0), 5);
    let initial = l.assess(&start).unwrap().total;
    let mut min_pi: Option<f64> = None;
    for _ in 0..500 {
        s.step();
        if s.reservoir().is_full() {
            let m = s.reservoir().min_pi().unwrap();
            assert!(min_pi.is_none_or(|p| m >= p));
            min_pi = Some(m);
        }
        let pis: Vec<f64> = s.reservoir().entries().iter().map(|e| e.pi).collect();
        assert!(pis.windows(2).all(|w| w[0] >= w[1]));
        assert!(pis.len() <= 5);
    }
    assert!(s.log().iter().all(|r| !r.event.is_rejection()));
    let r = s.run(0);
    assert!(r.best_loss.total <= initial);
}
