//! Named validation cases. Each returns a [`ValidationReport`] whose
//! thresholds are the acceptance bounds of the engine.

use std::time::Instant;

use serde::Serialize;

use super::{l1_distance, ritter_solution, seeded_bathymetry, self_convergence_order, Metric, ValidationReport};
use crate::error::{FloodError, Result};
use crate::forcing::SourceSpec;
use crate::grid::{max_speed, FlowState, Manning, PhysicalParams, Terrain};
use crate::nesting::{NestedSolver, NestingConfig, WindowSpec};
use crate::series::Series;
use crate::stepper::{Solver, SolverConfig, StageTimings, StepReport};

pub const CASE_NAMES: [&str; 10] = [
    "lake-at-rest",
    "dam-break",
    "smooth-bump-convergence",
    "mass-ledger",
    "wet-dry",
    "mirror-symmetry",
    "skip-equivalence",
    "zoom-mass",
    "speedup",
    "stage-shares",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseOptions {
    /// Grid size `N`; `None` uses the case default.
    pub resolution: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    /// Step count override for the cases that run a fixed number of steps.
    pub steps: Option<usize>,
}

impl Default for CaseOptions {
    fn default() -> Self {
        CaseOptions {
            resolution: None,
            seed: 1,
            workers: 0,
            steps: None,
        }
    }
}

impl CaseOptions {
    fn n(&self, default: usize) -> usize {
        self.resolution.unwrap_or(default)
    }

    fn steps(&self, default: usize) -> usize {
        self.steps.unwrap_or(default)
    }

    fn config(&self, skip: bool) -> SolverConfig {
        SolverConfig {
            skip,
            workers: self.workers,
            ..SolverConfig::default()
        }
    }
}

pub fn run_case(name: &str, opts: &CaseOptions) -> Result<ValidationReport> {
    match name {
        "lake-at-rest" => lake_at_rest(opts),
        "dam-break" => dam_break(opts),
        "smooth-bump-convergence" => smooth_bump(opts),
        "mass-ledger" => mass_ledger(opts),
        "wet-dry" => wet_dry(opts),
        "mirror-symmetry" => mirror_symmetry(opts),
        "skip-equivalence" => skip_equivalence(opts),
        "zoom-mass" => zoom_mass(opts),
        "speedup" => Ok(speedup_and_shares(opts)?.0),
        "stage-shares" => Ok(speedup_and_shares(opts)?.1),
        _ => Err(FloodError::config(format!(
            "unknown case '{name}'; expected one of {}",
            CASE_NAMES.join(", ")
        ))),
    }
}

/// Terrain, initial state and sources of a test scenario.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub terrain: Terrain,
    pub state: FlowState,
    pub params: PhysicalParams,
    pub sources: Vec<SourceSpec>,
}

impl CaseSetup {
    pub fn solver(&self, config: SolverConfig) -> Result<Solver> {
        Solver::new(self.terrain.clone(), self.state.clone(), self.params.clone(), config)?
            .with_sources(self.sources.clone())
    }
}

pub fn run_steps(solver: &mut Solver, steps: usize) -> Result<Vec<StepReport>> {
    (0..steps).map(|_| solver.step()).collect()
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((p * v.len() as f64) as usize).min(v.len() - 1)]
}

fn lowest_cell(t: &Terrain) -> (usize, usize) {
    let k = (0..t.n_cells()).min_by(|&a, &b| t.bed()[a].total_cmp(&t.bed()[b])).unwrap_or(0);
    (k % t.nx(), k / t.nx())
}

/// Seeded bumpy bed (50 m cells) flooded up to the `wet_fraction`
/// quantile of the bed, with a discharge of `q` m^3/s into the lowest cell.
pub fn partial_flood(n: usize, seed: u64, wet_fraction: f64, q: f64) -> Result<CaseSetup> {
    let terrain = seeded_bathymetry(n, n, 50.0, seed, 5.0)?;
    let level = percentile(terrain.bed(), wet_fraction);
    let state = FlowState::still_water(&terrain, level);
    let sources = if q > 0.0 {
        vec![SourceSpec::discharge(vec![lowest_cell(&terrain)], Series::constant(q))]
    } else {
        Vec::new()
    };
    Ok(CaseSetup {
        terrain,
        state,
        params: PhysicalParams::default(),
        sources,
    })
}

/// Scenario shared by the skip-equivalence and worker-count checks.
pub fn skip_scenario(n: usize, seed: u64) -> Result<CaseSetup> {
    partial_flood(n, seed, 0.35, 100_000.0)
}

/// Dam break onto a dry seeded bed: the left third holds water 2 m above
/// the highest point of the bed.
pub fn wet_dry_scenario(n: usize, seed: u64) -> Result<CaseSetup> {
    let terrain = seeded_bathymetry(n, n, 10.0, seed, 5.0)?;
    let top = terrain.bed().iter().cloned().fold(f64::MIN, f64::max);
    let depth = (0..terrain.n_cells())
        .map(|k| if k % n < n / 3 { top + 2.0 - terrain.bed()[k] } else { 0.0 })
        .collect();
    let state = FlowState::from_depth(&terrain, depth)?;
    Ok(CaseSetup {
        terrain,
        state,
        params: PhysicalParams::default(),
        sources: Vec::new(),
    })
}

fn lake_at_rest(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(128);
    let terrain = seeded_bathymetry(n, n, 10.0, opts.seed, 5.0)?;
    let state = FlowState::still_water(&terrain, 0.0);
    let depth0 = state.depth.clone();
    let mut solver = Solver::new(terrain, state, PhysicalParams::default(), opts.config(true))?;
    let clock = Instant::now();
    let eps = solver.params().dry_eps;
    let mut umax: f64 = 0.0;
    let mut dhmax: f64 = 0.0;
    for _ in 0..opts.steps(1000) {
        solver.step()?;
        let s = solver.state();
        umax = umax.max(max_speed(s, eps));
        dhmax = s.depth.iter().zip(&depth0).map(|(a, b)| (a - b).abs()).fold(dhmax, f64::max);
    }
    Ok(ValidationReport::new(
        "lake-at-rest",
        vec![
            Metric::at_most("max_speed", umax, 1e-10),
            Metric::at_most("max_depth_change", dhmax, 1e-12),
            Metric::info("steps", solver.steps() as f64),
            Metric::at_most("runtime_s", clock.elapsed().as_secs_f64(), 60.0),
        ],
    ))
}

/// L1 depth error against the Ritter profile on an `n`-cell channel over
/// `[-100, 100]` m at `t = 10` s, averaged over the rows.
pub fn dam_break_error(n: usize, workers: usize) -> Result<f64> {
    let (h_l, t_end, rows) = (1.0, 10.0, 4);
    let h = 200.0 / n as f64;
    let terrain = Terrain::flat(n, rows, h, 0.0)?.with_origin((-100.0, 0.0));
    let depth = (0..n * rows)
        .map(|k| if terrain.cell_center(k % n, k / n).0 < 0.0 { h_l } else { 0.0 })
        .collect();
    let state = FlowState::from_depth(&terrain, depth)?;
    let params = PhysicalParams::inviscid(9.81);
    let g = params.gravity;
    let config = SolverConfig {
        workers,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(terrain, state, params, config)?;
    solver.advance_to(t_end)?;
    let t = solver.terrain();
    let exact: Vec<f64> = (0..n * rows).map(|k| ritter_solution(h_l, g, t.cell_center(k % n, k / n).0, t_end).0).collect();
    Ok(l1_distance(&solver.state().depth, &exact, h) / rows as f64)
}

fn dam_break(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(400);
    let coarse = dam_break_error(n / 2, opts.workers)?;
    let fine = dam_break_error(n, opts.workers)?;
    Ok(ValidationReport::new(
        "dam-break",
        vec![
            Metric::info("l1_depth_coarse", coarse),
            Metric::info("l1_depth_fine", fine),
            Metric::at_least("l1_ratio", coarse / fine, 1.7),
        ],
    ))
}

/// Depth after a smooth hump of water spreads over a smooth bed in a
/// closed unit square, on an `n x n` grid.
pub fn smooth_bump_depth(n: usize, workers: usize) -> Result<Vec<f64>> {
    use std::f64::consts::TAU;
    let h = 1.0 / n as f64;
    let terrain = Terrain::from_fn(n, n, h, |x, y| 0.1 * (TAU * x).cos() * (TAU * y).cos())?;
    let depth = (0..n * n)
        .map(|k| {
            let (x, y) = terrain.cell_center(k % n, k / n);
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            1.0 + 0.1 * (-r2 / 0.01).exp() - terrain.bed()[k]
        })
        .collect();
    let state = FlowState::from_depth(&terrain, depth)?;
    let config = SolverConfig {
        workers,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(terrain, state, PhysicalParams::inviscid(9.81), config)?;
    solver.advance_to(0.05)?;
    Ok(solver.state().depth.clone())
}

fn smooth_bump(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(128);
    let a = smooth_bump_depth(n, opts.workers)?;
    let b = smooth_bump_depth(2 * n, opts.workers)?;
    let c = smooth_bump_depth(4 * n, opts.workers)?;
    let order = self_convergence_order(&a, &b, &c, n, 1.0)?;
    Ok(ValidationReport::new(
        "smooth-bump-convergence",
        vec![Metric::at_least("l1_order", order, 1.5)],
    ))
}

fn mass_ledger(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(256);
    let steps = opts.steps(2000);
    // sloshing: tilted surface over a seeded bed, closed walls
    let terrain = seeded_bathymetry(n, n, 50.0, opts.seed, 5.0)?;
    let extent = n as f64 * 50.0;
    let depth = (0..n * n)
        .map(|k| {
            let x = terrain.cell_center(k % n, k / n).0;
            (2.0 * (x / extent - 0.5) - terrain.bed()[k]).max(0.0)
        })
        .collect();
    let state = FlowState::from_depth(&terrain, depth)?;
    let mut solver = Solver::new(terrain.clone(), state, PhysicalParams::default(), opts.config(true))?;
    let v0 = solver.volume();
    run_steps(&mut solver, steps)?;
    let drift = ((solver.volume() - v0) / v0).abs();

    // a single 50 m cell fed with 100000 m^3/s, i.e. 40 m/s of depth
    let still = FlowState::still_water(&terrain, 0.0);
    let src = SourceSpec::discharge(vec![lowest_cell(&terrain)], Series::constant(100_000.0));
    let mut fed = Solver::new(terrain, still, PhysicalParams::default(), opts.config(true))?.with_sources(vec![src])?;
    run_steps(&mut fed, steps)?;
    let imbalance = fed.ledger().relative_imbalance(fed.volume()).abs();
    Ok(ValidationReport::new(
        "mass-ledger",
        vec![
            Metric::at_most("closed_basin_drift", drift, 1e-11),
            Metric::at_most("source_ledger_imbalance", imbalance, 1e-10),
            Metric::info("source_volume", fed.ledger().sources),
        ],
    ))
}

/// Dam break onto the dry seeded bed; every step is checked for
/// non-finite values and negative depths.
fn wet_dry(opts: &CaseOptions) -> Result<ValidationReport> {
    let setup = wet_dry_scenario(opts.n(64), opts.seed)?;
    let mut solver = setup.solver(opts.config(true))?;
    let mut non_finite = 0usize;
    let mut min_depth = f64::INFINITY;
    for _ in 0..opts.steps(10_000) {
        solver.step()?;
        let s = solver.state();
        non_finite += s.depth.iter().chain(&s.mom_x).chain(&s.mom_y).filter(|v| !v.is_finite()).count();
        min_depth = s.depth.iter().copied().fold(min_depth, f64::min);
    }
    Ok(ValidationReport::new(
        "wet-dry",
        vec![
            Metric::at_most("non_finite_values", non_finite as f64, 0.0),
            Metric::at_least("min_depth", min_depth, 0.0),
            Metric::info("final_time_s", solver.time()),
            Metric::info("wet_fraction", crate::grid::wet_fraction(solver.state(), solver.params().dry_eps)),
        ],
    ))
}

fn mirror_symmetry(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(64);
    let setup = wet_dry_scenario(n, opts.seed)?;
    let mut a = setup.solver(opts.config(true))?;
    let mut b = Solver::new(
        setup.terrain.mirrored_x(),
        setup.state.mirrored_x(n),
        setup.params.clone(),
        opts.config(true),
    )?;
    let steps = opts.steps(200);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        a.step()?;
        b.step()?;
        let back = b.state().mirrored_x(n);
        let s = a.state();
        for k in 0..s.n_cells() {
            worst = worst
                .max((s.depth[k] - back.depth[k]).abs())
                .max((s.mom_x[k] - back.mom_x[k]).abs())
                .max((s.mom_y[k] - back.mom_y[k]).abs());
        }
    }
    Ok(ValidationReport::new(
        "mirror-symmetry",
        vec![Metric::at_most("max_mirror_difference", worst, 1e-12)],
    ))
}

/// Number of cells whose depth or momenta differ bitwise.
pub fn bitwise_differences(a: &FlowState, b: &FlowState) -> usize {
    (0..a.n_cells())
        .filter(|&k| {
            a.depth[k].to_bits() != b.depth[k].to_bits()
                || a.mom_x[k].to_bits() != b.mom_x[k].to_bits()
                || a.mom_y[k].to_bits() != b.mom_y[k].to_bits()
        })
        .count()
        + usize::from(a.time.to_bits() != b.time.to_bits())
}

fn skip_equivalence(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(256);
    let steps = opts.steps(50);
    let setup = skip_scenario(n, opts.seed)?;
    let mut on = setup.solver(opts.config(true))?;
    let mut off = setup.solver(opts.config(false))?;
    let rep = run_steps(&mut on, steps)?;
    run_steps(&mut off, steps)?;
    let skipped: usize = rep.iter().map(|r| r.skipped.total).sum();
    Ok(ValidationReport::new(
        "skip-equivalence",
        vec![
            Metric::at_most("differing_cells", bitwise_differences(on.state(), off.state()) as f64, 0.0),
            Metric::info("skipped_block_stages", skipped as f64),
        ],
    ))
}

/// Bitwise comparison of the skip scenario run with two worker counts.
pub fn worker_determinism(n: usize, seed: u64, steps: usize, workers: (usize, usize)) -> Result<usize> {
    let setup = skip_scenario(n, seed)?;
    let config = |w| SolverConfig {
        workers: w,
        ..SolverConfig::default()
    };
    let mut a = setup.solver(config(workers.0))?;
    let mut b = setup.solver(config(workers.1))?;
    run_steps(&mut a, steps)?;
    run_steps(&mut b, steps)?;
    Ok(bitwise_differences(a.state(), b.state()))
}

/// Coarse flood wave crossing an `r = 4` window.
pub fn zoom_scenario(n: usize, seed: u64) -> Result<(CaseSetup, WindowSpec)> {
    let mut setup = partial_flood(n, seed, 0.35, 0.0)?;
    let top = setup.terrain.bed().iter().cloned().fold(f64::MIN, f64::max);
    // a column of deep water released from the west edge
    for k in 0..setup.terrain.n_cells() {
        if k % n < n / 8 {
            setup.state.depth[k] = top + 3.0 - setup.terrain.bed()[k];
        }
    }
    setup.params.manning = Manning::Uniform(0.03);
    let w = n / 4;
    let window = WindowSpec {
        i0: n / 4,
        j0: n / 2 - w / 2,
        nx: w,
        ny: w,
        ratio: 4,
        fine_bed: None,
    };
    Ok((setup, window))
}

fn zoom_mass(opts: &CaseOptions) -> Result<ValidationReport> {
    let n = opts.n(64);
    let steps = opts.steps(100);
    let (setup, window) = zoom_scenario(n, opts.seed)?;

    let mut two_way = NestedSolver::new(setup.solver(opts.config(true))?, vec![window.clone()], NestingConfig::default())?;
    let v0 = two_way.total_volume();
    for _ in 0..steps {
        two_way.coupled_step()?;
    }
    let drift = ((two_way.total_volume() - v0) / v0).abs();

    let one_way_cfg = NestingConfig { two_way: false };
    let mut one_way = NestedSolver::new(setup.solver(opts.config(true))?, vec![window.clone()], one_way_cfg)?;
    let mut plain = setup.solver(opts.config(true))?;
    for _ in 0..steps {
        one_way.coupled_step()?;
        plain.step()?;
    }
    let outside = |k: usize| {
        let (i, j) = (k % n, k / n);
        !(i >= window.i0 && i < window.i0 + window.nx && j >= window.j0 && j < window.j0 + window.ny)
    };
    let (a, b) = (one_way.coarse().state(), plain.state());
    let differing = (0..a.n_cells())
        .filter(|&k| outside(k))
        .filter(|&k| {
            a.depth[k].to_bits() != b.depth[k].to_bits()
                || a.mom_x[k].to_bits() != b.mom_x[k].to_bits()
                || a.mom_y[k].to_bits() != b.mom_y[k].to_bits()
        })
        .count();
    Ok(ValidationReport::new(
        "zoom-mass",
        vec![
            Metric::at_most("relative_mass_drift", drift, 1e-8),
            Metric::at_most("one_way_differing_cells", differing as f64, 0.0),
            Metric::info("fine_volume", two_way.fine_volume()),
        ],
    ))
}

/// Timing comparison of skipping on and off.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedupMeasurement {
    pub secs_skip: f64,
    pub secs_full: f64,
    pub active_fraction: f64,
    pub wet_fraction: f64,
    pub timings: StageTimings,
}

impl SpeedupMeasurement {
    pub fn speedup(&self) -> f64 {
        self.secs_full / self.secs_skip
    }
}

/// Time `steps` steps of `setup` with and without block skipping. Both runs
/// start from the same state; only the kernels are timed.
pub fn measure_speedup(setup: &CaseSetup, steps: usize, workers: usize) -> Result<SpeedupMeasurement> {
    let mut timings = StageTimings::default();
    let mut secs = [0.0; 2];
    let mut active = 0.0;
    for (slot, skip) in [(0, true), (1, false)] {
        let config = SolverConfig {
            skip,
            workers,
            ..SolverConfig::default()
        };
        let mut solver = setup.solver(config)?;
        let reps = run_steps(&mut solver, steps)?;
        let mut t = StageTimings::default();
        reps.iter().for_each(|r| t.accumulate(&r.timings));
        secs[slot] = t.total();
        if skip {
            timings = t;
            active = reps.iter().map(|r| r.active_fraction).sum::<f64>() / reps.len().max(1) as f64;
        }
    }
    let eps = setup.params.dry_eps;
    let wet = setup.state.depth.iter().filter(|&&d| d > eps).count() as f64 / setup.state.n_cells() as f64;
    Ok(SpeedupMeasurement {
        secs_skip: secs[0],
        secs_full: secs[1],
        active_fraction: active,
        wet_fraction: wet,
        timings,
    })
}

/// Speedup and stage-share reports from one timing run.
pub fn speedup_and_shares(opts: &CaseOptions) -> Result<(ValidationReport, ValidationReport)> {
    let n = opts.n(1024);
    let setup = partial_flood(n, opts.seed, 0.35, 100_000.0)?;
    let m = measure_speedup(&setup, opts.steps(20), opts.workers)?;
    let speedup = ValidationReport::new(
        "speedup",
        vec![
            Metric::at_least("speedup", m.speedup(), 1.3),
            Metric::info("secs_skip", m.secs_skip),
            Metric::info("secs_full", m.secs_full),
            Metric::info("wet_fraction", m.wet_fraction),
            Metric::info("active_block_fraction", m.active_fraction),
        ],
    );
    let shares = m.timings.shares();
    let mut metrics = vec![
        Metric::at_least("flux_share_pct", shares[6], 40.0),
        Metric::at_most("lagrangian_share_pct", shares[3] + shares[5], 20.0),
        Metric::at_most(
            "flux_minus_largest_other_pct",
            shares.iter().enumerate().filter(|(k, _)| *k != 6).map(|(_, s)| *s).fold(0.0, f64::max) - shares[6],
            0.0,
        ),
    ];
    for (name, s) in crate::stepper::STAGE_NAMES.iter().zip(shares) {
        metrics.push(Metric::info(&format!("share {name}"), s));
    }
    Ok((speedup, ValidationReport::new("stage-shares", metrics)))
}
