//! Scenario files, rasters and the run driver.

pub mod cli;
pub mod config;
pub mod esri;
pub mod output;

use std::path::Path;
use std::time::Instant;

use crate::error::Result;
use crate::grid::{total_volume, wet_fraction};
use crate::nesting::NestedSolver;
use crate::stepper::{Solver, StageTimings, StepReport};

pub use config::{load_scenario, parse_scenario, Scenario, ScenarioConfig};
pub use esri::{load_terrain, read_raster, write_raster, Raster};
pub use output::{write_snapshot, RunSummary, SnapshotRow};

/// A single grid or a coarse grid with nested windows.
pub enum Driver {
    Single(Solver),
    Nested(NestedSolver),
}

impl Driver {
    /// Build the solver described by `cfg`.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let Scenario {
            terrain,
            params,
            state,
            sources,
            wind,
            windows,
        } = cfg.load()?;
        let solver = Solver::new(terrain, state, params, cfg.solver_config())?
            .with_sources(sources)?
            .with_wind(wind);
        if windows.is_empty() {
            Ok(Driver::Single(solver))
        } else {
            Ok(Driver::Nested(NestedSolver::new(solver, windows, cfg.nesting_config())?))
        }
    }

    /// The global grid.
    pub fn solver(&self) -> &Solver {
        match self {
            Driver::Single(s) => s,
            Driver::Nested(n) => n.coarse(),
        }
    }

    pub fn time(&self) -> f64 {
        self.solver().time()
    }

    /// One step that lands exactly on `t_end` if it would pass it.
    pub fn step_until(&mut self, t_end: f64) -> Result<StepReport> {
        let remaining = t_end - self.time();
        match self {
            Driver::Single(s) => {
                let rep = s.step_capped(remaining)?;
                if rep.dt >= remaining {
                    s.set_time(t_end);
                }
                Ok(rep)
            }
            Driver::Nested(n) => Ok(n.coupled_step_capped(remaining)?.coarse),
        }
    }
}

/// Run `cfg` to its duration. Snapshots go to `out` when given.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    let mut driver = Driver::from_config(cfg)?;
    let eps = driver.solver().params().dry_eps;
    let mut summary = RunSummary::default();
    let mut timings = StageTimings::default();
    let mut last_dt = 0.0;

    for (index, t_snap) in cfg.snapshot_times().into_iter().enumerate() {
        while driver.time() < t_snap {
            let rep = driver.step_until(t_snap)?;
            timings.accumulate(&rep.timings);
            last_dt = rep.dt;
            summary.dt_history.push(rep.dt);
            summary.wet_fraction_history.push(wet_fraction(driver.solver().state(), eps));
        }
        let s = driver.solver();
        summary.snapshots.push(SnapshotRow::of(s.state(), s.terrain(), eps, last_dt));
        if let Some(dir) = out {
            write_snapshot(s.state(), s.terrain(), eps, index, dir)?;
        }
        log::info!("snapshot {index} at t = {:.3} s after {} steps", s.time(), s.steps());
    }

    let s = driver.solver();
    summary.steps = s.steps();
    summary.final_time = s.time();
    summary.ledger = *s.ledger();
    summary.final_volume = total_volume(s.state(), s.terrain());
    summary.mass_imbalance = s.ledger().relative_imbalance(summary.final_volume);
    summary.set_timings(&timings);
    summary.wall_seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        summary.write(dir)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Terrain;

    fn write_case(dir: &Path, extra: &str) -> std::path::PathBuf {
        let t = Terrain::from_fn(24, 16, 10.0, |x, _| 0.01 * x).unwrap();
        write_raster(&dir.join("dem.asc"), &t, t.bed()).unwrap();
        let path = dir.join("case.toml");
        let text = format!(
            "terrain = \"dem.asc\"\nduration = 20.0\nsnapshot_interval = 10.0\n\
             [[sources]]\ncells = [[2, 8]]\ndischarge = [[0.0, 5.0]]\n{extra}"
        );
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn run_writes_snapshots_and_balances() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_scenario(&write_case(dir.path(), "")).unwrap();
        let out = dir.path().join("out");
        let sum = run_scenario(&cfg, Some(&out)).unwrap();
        assert_eq!(sum.snapshots.len(), 3);
        assert_eq!(sum.final_time, 20.0);
        assert!((sum.final_volume - 100.0).abs() < 1e-9, "{}", sum.final_volume);
        assert!(sum.mass_imbalance.abs() < 1e-12);
        assert!(out.join("h_0002.asc").exists() && out.join("summary.json").exists());
    }

    #[test]
    fn nested_run_lands_on_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_case(dir.path(), "[[windows]]\ni0 = 4\nj0 = 4\nnx = 6\nny = 6\nratio = 2\n");
        let cfg = load_scenario(&path).unwrap();
        let sum = run_scenario(&cfg, None).unwrap();
        let times: Vec<f64> = sum.snapshots.iter().map(|r| r.time).collect();
        assert_eq!(times, vec![0.0, 10.0, 20.0]);
        assert!(sum.mass_imbalance.abs() < 1e-10, "{}", sum.mass_imbalance);
    }
}
