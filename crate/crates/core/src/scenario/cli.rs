//! Batch command line.
//!
//! Exit codes: 0 success, 1 bad input or a failed validation criterion,
//! 2 numerical abort.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{FloodError, Result};
use crate::grid::wet_fraction;
use crate::stepper::{Solver, StageTimings, STAGE_NAMES};
use crate::validation::{run_case, CaseOptions, ValidationReport, CASE_NAMES};

use super::config::{load_scenario, Scenario, ScenarioConfig};
use super::esri::read_raster;
use super::run_scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "floodsim", version, about = "Block-sparse shallow-water flood solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write snapshots and a summary.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run a named validation case, or `all`.
    Validate {
        case: String,
        #[command(flatten)]
        run: RunFlags,
        /// Seed of the randomised terrains.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Grid size override.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Time a scenario with block skipping on and off.
    Bench {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Print statistics of an elevation raster.
    Info { terrain: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    /// Worker threads (0: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Process every block every step.
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunFlags {
    fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.no_skip {
            cfg.skip = false;
        }
        if let Some(b) = self.block_size {
            cfg.block_size = b;
        }
        cfg.validate()
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run { scenario, run } => {
            let mut cfg = load_scenario(&scenario)?;
            run.apply(&mut cfg)?;
            let summary = run_scenario(&cfg, run.out.as_deref())?;
            print!("{}", summary.to_text());
            Ok(EXIT_OK)
        }
        Command::Validate {
            case,
            run,
            seed,
            resolution,
        } => {
            let opts = CaseOptions {
                resolution,
                seed,
                workers: run.workers.unwrap_or(0),
                steps: None,
            };
            let names: Vec<&str> = if case == "all" { CASE_NAMES.to_vec() } else { vec![case.as_str()] };
            let mut ok = true;
            for name in names {
                let report = run_case(name, &opts)?;
                print!("{}", report.to_text());
                if let Some(dir) = &run.out {
                    write_report(dir, &report)?;
                }
                ok &= report.passed;
            }
            Ok(if ok { EXIT_OK } else { EXIT_INPUT })
        }
        Command::Bench { scenario, run, steps } => {
            let mut cfg = load_scenario(&scenario)?;
            run.apply(&mut cfg)?;
            let text = bench(&cfg, steps)?;
            print!("{text}");
            if let Some(dir) = &run.out {
                fs::create_dir_all(dir).map_err(|e| FloodError::io(dir, e))?;
                let path = dir.join("bench.txt");
                fs::write(&path, &text).map_err(|e| FloodError::io(&path, e))?;
            }
            Ok(EXIT_OK)
        }
        Command::Info { terrain } => {
            print!("{}", info(&terrain)?);
            Ok(EXIT_OK)
        }
    }
}

fn write_report(dir: &Path, report: &ValidationReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FloodError::io(dir, e))?;
    let path = dir.join(format!("{}.csv", report.case));
    fs::write(&path, report.to_csv()).map_err(|e| FloodError::io(&path, e))
}

/// Time `steps` steps of the global grid with skipping on, then off.
pub fn bench(cfg: &ScenarioConfig, steps: usize) -> Result<String> {
    if !cfg.windows.is_empty() {
        log::warn!("bench times the global grid only; windows are ignored");
    }
    let Scenario {
        terrain,
        params,
        state,
        sources,
        wind,
        ..
    } = cfg.load()?;
    let eps = params.dry_eps;
    let wet = wet_fraction(&state, eps);
    let mut out = String::new();
    let mut totals = [0.0; 2];
    let mut shares = [0.0; 8];
    for (slot, skip) in [true, false].into_iter().enumerate() {
        let mut config = cfg.solver_config();
        config.skip = skip;
        let mut solver = Solver::new(terrain.clone(), state.clone(), params.clone(), config)?
            .with_sources(sources.clone())?
            .with_wind(wind.clone());
        let mut t = StageTimings::default();
        for _ in 0..steps {
            t.accumulate(&solver.step()?.timings);
        }
        totals[slot] = t.total();
        if skip {
            shares = t.shares();
        }
    }
    let _ = writeln!(out, "steps {steps}  initial wet fraction {wet:.3}");
    let _ = writeln!(out, "kernel time with skipping {:.3} s, without {:.3} s", totals[0], totals[1]);
    let _ = writeln!(out, "speedup {:.3}", totals[1] / totals[0]);
    for (name, pct) in STAGE_NAMES.iter().zip(shares) {
        let _ = writeln!(out, "  {name:<16} {pct:6.2} %");
    }
    Ok(out)
}

/// Size, extent and elevation range of a raster.
pub fn info(path: &Path) -> Result<String> {
    let r = read_raster(path)?;
    let valid: Vec<f64> = r.values.iter().copied().filter(|&v| !r.is_nodata(v)).collect();
    let nodata = r.values.len() - valid.len();
    let mut out = String::new();
    let _ = writeln!(out, "{}", path.display());
    let _ = writeln!(out, "grid {} x {}  cellsize {}", r.ncols, r.nrows, r.cellsize);
    let _ = writeln!(
        out,
        "extent x [{}, {}]  y [{}, {}]",
        r.xll,
        r.xll + r.ncols as f64 * r.cellsize,
        r.yll,
        r.yll + r.nrows as f64 * r.cellsize
    );
    if valid.is_empty() {
        let _ = writeln!(out, "no valid cells");
    } else {
        let min = valid.iter().copied().fold(f64::INFINITY, f64::min);
        let max = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        let _ = writeln!(out, "elevation min {min:.3}  mean {mean:.3}  max {max:.3}");
    }
    let _ = writeln!(out, "nodata cells {nodata}");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Terrain;
    use crate::scenario::esri::write_raster;

    fn case(dir: &Path) -> PathBuf {
        let t = Terrain::from_fn(16, 16, 5.0, |x, y| 0.02 * (x + y)).unwrap();
        write_raster(&dir.join("dem.asc"), &t, t.bed()).unwrap();
        let path = dir.join("case.toml");
        fs::write(
            &path,
            "terrain = \"dem.asc\"\nduration = 5.0\n[initial]\nkind = \"level\"\nlevel = 0.5\n",
        )
        .unwrap();
        path
    }

    fn code(args: &[&str]) -> i32 {
        cli_run(std::iter::once("floodsim").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(code(&["frobnicate"]), EXIT_INPUT);
        assert_eq!(code(&["run", "x.toml", "--bogus"]), EXIT_INPUT);
        assert_eq!(code(&["run", "/nonexistent/x.toml"]), EXIT_INPUT);
        assert_eq!(code(&["validate", "no-such-case"]), EXIT_INPUT);
    }

    #[test]
    fn run_and_info_succeed() {
        let dir = tempfile::tempdir().unwrap();
        let path = case(dir.path());
        let out = dir.path().join("out");
        let (p, o) = (path.to_str().unwrap(), out.to_str().unwrap());
        assert_eq!(code(&["run", p, "--workers", "1", "--block-size", "8", "--out", o]), EXIT_OK);
        assert!(out.join("summary.csv").exists());
        assert_eq!(code(&["info", dir.path().join("dem.asc").to_str().unwrap()]), EXIT_OK);
        assert_eq!(code(&["bench", p, "--steps", "2", "--no-skip"]), EXIT_OK);
    }

    #[test]
    fn bad_flag_value_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = case(dir.path());
        assert_eq!(code(&["run", path.to_str().unwrap(), "--block-size", "0"]), EXIT_INPUT);
    }

    #[test]
    fn info_counts_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.asc");
        fs::write(&path, "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n-9999 4\n").unwrap();
        let text = info(&path).unwrap();
        assert!(text.contains("nodata cells 1") && text.contains("max 4.000"), "{text}");
    }
}
