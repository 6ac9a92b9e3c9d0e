use lensforge_core::baselines::{brute_force_search, rjmh_run, MhConfig};
use lensforge_core::io::{render_svg, Prescription};
use lensforge_core::mutate::{
    apply_mutation, project_mutant, MutationKind, ProjectionStatus, SingletSeed,
};
use lensforge_core::loss::LossModel;
use lensforge_core::restore::{log_csv, Assessment, LogRecord, Restore, RestoreConfig};
use lensforge_core::toy::{total_variation, ToyBins, ToyLandscape, ToyProblem, ToyVariant};
use lensforge_core::trace::trace_path;
use lensforge_core::{trace, LensSystem, Ray};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{load_lens, loss_model, RunConfig, Setup};
use crate::{CliError, Command, LensArgs, RunArgs};

pub const TRACE_HEADER: &str = "field,ray,x,y,valid";
pub const PARETO_HEADER: &str =
    "w_spot,w_throughput,L_spot,L_throughput,L_focal,L_thickness,L_total,K";
const TOY_HEADER: &str = "bin,dim,lo_1,hi_1,lo_2,hi_2,visited,target";
/// Quadrature nodes per bin and axis for toy targets.
const TOY_QUADRATURE: usize = 8;

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

pub fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Optimize {
            run,
            no_projection,
            no_mutations,
        } => optimize(&run, no_projection, no_mutations),
        Command::BaselineMh { run } => baseline_mh(&run),
        Command::BaselineBrute { run } => baseline_brute(&run),
        Command::Trace { lens, rays, out } => trace_cmd(&lens, rays, out.as_deref()),
        Command::Project {
            lens,
            mutation,
            site,
            seed,
            out,
        } => project(&lens, &mutation, site, seed, out.as_deref()),
        Command::Toy {
            variant,
            iters,
            seed,
            bins,
            out,
        } => toy(&variant, iters, seed, bins, out.as_deref()),
        Command::Pareto {
            lens,
            iters,
            seed,
            spot_scales,
            throughput_weights,
            no_mutations,
            out,
        } => pareto(
            &lens,
            iters,
            seed,
            &spot_scales,
            &throughput_weights,
            no_mutations,
            out.as_deref(),
        ),
        Command::Render { lens, rays, out } => render(&lens, rays, out.as_deref()),
    }
}

struct Loaded {
    prescription: Prescription,
    lens: LensSystem,
    cfg: RunConfig,
}

fn load(args: &LensArgs) -> Result<Loaded, CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (prescription, lens) = load_lens(&args.lens)?;
    Ok(Loaded {
        prescription,
        lens,
        cfg,
    })
}

fn load_run(args: &RunArgs) -> Result<Loaded, CliError> {
    let mut l = load(&args.lens)?;
    if let Some(n) = args.iters {
        l.cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        l.cfg.seed = s;
    }
    Ok(l)
}

fn finish(
    args: &RunArgs,
    loaded: &Loaded,
    log: &[LogRecord],
    best: &LensSystem,
    initial: Option<Assessment>,
    best_loss: Option<Assessment>,
) -> Result<(), CliError> {
    emit(args.out.as_deref(), &log_csv(log))?;
    if let Some(p) = &args.best {
        let f = loaded.cfg.focal_length.or(loaded.prescription.focal_length);
        let mut out = Prescription::from_lens(&loaded.prescription.name, best, f);
        out.sensor_diagonal = loaded.prescription.sensor_diagonal;
        emit(Some(p), &out.to_json())?;
    }
    if let Some(p) = &args.svg {
        emit(Some(p), &render_svg(best, None))?;
    }
    let total = |a: Option<Assessment>| a.map_or(f64::NAN, |a| a.total);
    eprintln!(
        "initial_loss {:.6} best_loss {:.6} K {}",
        total(initial),
        total(best_loss),
        best.surface_count()
    );
    Ok(())
}

fn optimize(args: &RunArgs, no_projection: bool, no_mutations: bool) -> Result<(), CliError> {
    let mut loaded = load_run(args)?;
    if no_projection {
        loaded.cfg.projection = false;
    }
    if no_mutations {
        loaded.cfg.mutations = false;
    }
    let setup = Setup::new(&loaded.prescription, loaded.lens.clone(), &loaded.cfg)?;
    let r = Restore::new(&setup.landscape, &setup.lens, setup.restore, loaded.cfg.seed)
        .run(loaded.cfg.iterations);
    finish(
        args,
        &loaded,
        &r.log,
        &r.best,
        Some(r.initial_loss),
        Some(r.best_loss),
    )
}

fn baseline_mh(args: &RunArgs) -> Result<(), CliError> {
    let loaded = load_run(args)?;
    let setup = Setup::new(&loaded.prescription, loaded.lens.clone(), &loaded.cfg)?;
    let mut mh = MhConfig::new(setup.restore.temperature);
    mh.eta = loaded.cfg.eta;
    mh.perturb_weight = loaded.cfg.perturb_weight;
    if !(mh.eta > 0.0) || !(0.0..=1.0).contains(&mh.perturb_weight) {
        return Err(input("need eta > 0 and perturb_weight in [0, 1]"));
    }
    let r = rjmh_run(
        &setup.landscape,
        &setup.lens,
        &mh,
        loaded.cfg.iterations,
        loaded.cfg.seed,
    );
    eprintln!(
        "perturbation_acceptance {:.4} mutation_acceptance {:.4}",
        r.perturbations.rate(),
        r.mutations.rate()
    );
    finish(
        args,
        &loaded,
        &r.log,
        &r.best,
        Some(r.initial_loss),
        Some(r.best_loss),
    )
}

fn baseline_brute(args: &RunArgs) -> Result<(), CliError> {
    let loaded = load_run(args)?;
    let setup = Setup::new(&loaded.prescription, loaded.lens.clone(), &loaded.cfg)?;
    let r = brute_force_search(
        &setup.landscape,
        &setup.lens,
        &setup.restore.adam,
        loaded.cfg.iterations,
        loaded.cfg.seed,
    );
    let log: Vec<LogRecord> = r.branches.iter().flat_map(|b| b.log.clone()).collect();
    for b in &r.branches {
        eprintln!(
            "branch {} best_loss {:.6}",
            b.kind,
            b.best_loss.map_or(f64::NAN, |a| a.total)
        );
    }
    finish(args, &loaded, &log, &r.best, r.initial_loss, r.best_loss)
}

fn trace_cmd(args: &LensArgs, rays: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let mut loaded = load(args)?;
    if let Some(n) = rays {
        loaded.cfg.rays_per_point = n;
    }
    let model = loss_model(&loaded.prescription, &loaded.lens, &loaded.cfg)?;
    let mut csv = format!("{TRACE_HEADER}\n");
    for (f, grid) in model.grids().iter().enumerate() {
        for (i, ray) in grid.rays().enumerate() {
            match trace(&ray, &loaded.lens).hit() {
                Some(p) => writeln!(csv, "{f},{i},{},{},1", p[0], p[1]),
                None => writeln!(csv, "{f},{i},,,0"),
            }
            .expect("write to string");
        }
    }
    emit(out, &csv)
}

fn project(
    args: &LensArgs,
    mutation: &str,
    site: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load(args)?;
    let kind = MutationKind::from_name(mutation, site).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown mutation {mutation:?}; expected add, remove, glue or split"
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutated =
        apply_mutation(&loaded.lens, kind, &SingletSeed::default(), &mut rng).map_err(input)?;
    let (lens, status) = project_mutant(&loaded.lens, &mutated);
    match status {
        ProjectionStatus::Converged { residual } => {
            println!("mutation {kind} residual {residual:e}");
            if let Some(p) = out {
                let f = loaded.prescription.focal_length;
                emit(Some(p), &Prescription::from_lens(&loaded.prescription.name, &lens, f).to_json())?;
            }
            Ok(())
        }
        ProjectionStatus::Failed(e) => Err(input(format!("projection failed: {e}"))),
        ProjectionStatus::Skipped => unreachable!("projection always runs here"),
    }
}

fn toy(
    variant: &str,
    iters: usize,
    seed: u64,
    bins: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let v = ToyVariant::from_name(variant).ok_or_else(|| {
        CliError::Usage(format!("unknown toy variant {variant:?}; expected 1d, 2d or mixed"))
    })?;
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let report = toy_run(v, iters, seed, bins)?;
    emit(out, &report.csv)?;
    println!("tv_distance {}", report.tv);
    Ok(())
}

/// Result of a seeded toy run.
pub struct ToyReport {
    pub tv: f64,
    pub visited: Vec<f64>,
    pub target: Vec<f64>,
    pub csv: String,
}

/// Runs the sampler on a toy problem from the center of its first
/// topology's domain and bins every visited state.
pub fn toy_run(v: ToyVariant, iters: usize, seed: u64, bins: usize) -> Result<ToyReport, CliError> {
    let problem = ToyProblem::new(v);
    let landscape = ToyLandscape::new(problem.clone()).map_err(input)?;
    let start: Vec<f64> = problem
        .bounds(problem.dims()[0])
        .iter()
        .map(|(lo, hi)| 0.5 * (lo + hi))
        .collect();
    let initial = problem.lens(&start).map_err(input)?;
    let cfg = RestoreConfig::new(problem.temperature);
    let mut sampler = Restore::new(&landscape, &initial, cfg, seed);
    let mut points = Vec::with_capacity(iters);
    for _ in 0..iters {
        sampler.step();
        points.push(problem.point(sampler.lens()));
    }
    let grid = ToyBins::new(&problem, bins);
    let visited = grid.histogram(points.iter().map(Vec::as_slice));
    let target = grid.target(&landscape, TOY_QUADRATURE).map_err(input)?;
    let tv = total_variation(&visited, &target);
    let mut csv = format!("{TOY_HEADER}\n");
    for &dim in problem.dims() {
        let bounds = problem.bounds(dim);
        let offset = grid.offset(dim);
        for local in 0..bins.pow(dim as u32) {
            let mut cells = Vec::new();
            let mut rest = local;
            for (lo, hi) in bounds.iter().rev() {
                let b = rest % bins;
                rest /= bins;
                let w = (hi - lo) / bins as f64;
                cells.push((lo + b as f64 * w, lo + (b + 1) as f64 * w));
            }
            cells.reverse();
            let col = |i: usize, hi: bool| {
                cells
                    .get(i)
                    .map_or(String::new(), |c| (if hi { c.1 } else { c.0 }).to_string())
            };
            let i = offset + local;
            writeln!(
                csv,
                "{i},{dim},{},{},{},{},{},{}",
                col(0, false),
                col(0, true),
                col(1, false),
                col(1, true),
                visited[i],
                target[i]
            )
            .expect("write to string");
        }
    }
    Ok(ToyReport {
        tv,
        visited,
        target,
        csv,
    })
}

/// One design of a weight sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoRow {
    pub w_spot: f64,
    pub w_throughput: f64,
    pub loss: Assessment,
    pub k: usize,
}

impl ParetoRow {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.w_spot, self.w_throughput, l.spot, l.throughput, l.focal, l.thickness, l.total, self.k
        )
    }
}

/// Rows not dominated in (spot, throughput) by any other row, in input
/// order.
pub fn non_dominated(rows: &[ParetoRow]) -> Vec<ParetoRow> {
    let dominates = |a: &ParetoRow, b: &ParetoRow| {
        let (a, b) = (&a.loss, &b.loss);
        a.spot <= b.spot
            && a.throughput <= b.throughput
            && (a.spot < b.spot || a.throughput < b.throughput)
    };
    rows.iter()
        .filter(|r| !rows.iter().any(|o| dominates(o, r)))
        .copied()
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn pareto(
    args: &LensArgs,
    iters: Option<usize>,
    seed: Option<u64>,
    spot_scales: &[f64],
    throughput_weights: &[f64],
    no_mutations: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut loaded = load(args)?;
    if let Some(n) = iters {
        loaded.cfg.iterations = n;
    }
    if let Some(s) = seed {
        loaded.cfg.seed = s;
    }
    if no_mutations {
        loaded.cfg.mutations = false;
    }
    if spot_scales.iter().chain(throughput_weights).any(|w| !(*w >= 0.0)) {
        return Err(CliError::Usage("weights must be non-negative".into()));
    }
    let base = loss_model(&loaded.prescription, &loaded.lens, &loaded.cfg)?;
    let w_spot = base.config().w_spot;
    let mut rows = Vec::new();
    for &s in spot_scales {
        for &wt in throughput_weights {
            let mut cfg = loaded.cfg.clone();
            cfg.w_spot = Some(w_spot * s);
            cfg.w_throughput = wt;
            let setup = Setup::new(&loaded.prescription, loaded.lens.clone(), &cfg)?;
            let r = Restore::new(&setup.landscape, &setup.lens, setup.restore, cfg.seed)
                .run(cfg.iterations);
            rows.push(ParetoRow {
                w_spot: w_spot * s,
                w_throughput: wt,
                loss: r.best_loss,
                k: r.best.surface_count(),
            });
        }
    }
    let mut csv = format!("{PARETO_HEADER}\n");
    for r in non_dominated(&rows) {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    emit(out, &csv)
}

/// Paths of a meridional fan from each loss field point, rotated into the
/// drawing plane.
fn ray_fan(model: &LossModel, lens: &LensSystem, n: usize) -> Vec<Vec<[f64; 3]>> {
    let cfg = model.config();
    let r = cfg.entrance_radius;
    let mut paths = Vec::new();
    for p in &cfg.field_points {
        let origin = [p[1], p[0], p[2]];
        for i in 0..n {
            let a = if n == 1 {
                0.0
            } else {
                -r + 2.0 * r * i as f64 / (n - 1) as f64
            };
            let ray = Ray::new(origin, [a - origin[0], -origin[1], -origin[2]]);
            paths.push(trace_path(&ray, lens).0);
        }
    }
    paths
}

fn render(args: &LensArgs, rays: usize, out: Option<&Path>) -> Result<(), CliError> {
    let loaded = load(args)?;
    let svg = if rays == 0 {
        render_svg(&loaded.lens, None)
    } else {
        let model = loss_model(&loaded.prescription, &loaded.lens, &loaded.cfg)?;
        render_svg(&loaded.lens, Some(&ray_fan(&model, &loaded.lens, rays)))
    };
    emit(out, &svg)
}
