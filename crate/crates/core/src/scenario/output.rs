//! Snapshot rasters and run summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{FloodError, Result};
use crate::grid::{max_speed, total_volume, wet_fraction, FlowState, Terrain};
use crate::stepper::{MassLedger, StageTimings, STAGE_NAMES};

use super::esri::write_raster;

/// One row of the snapshot table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub time: f64,
    pub volume: f64,
    pub wet_fraction: f64,
    pub max_speed: f64,
    /// Last step length before the snapshot (0 at the start).
    pub dt: f64,
}

impl SnapshotRow {
    pub fn of(state: &FlowState, terrain: &Terrain, eps: f64, dt: f64) -> Self {
        SnapshotRow {
            time: state.time,
            volume: total_volume(state, terrain),
            wet_fraction: wet_fraction(state, eps),
            max_speed: max_speed(state, eps),
            dt,
        }
    }
}

/// Depth, velocity and free-surface rasters of one state.
pub fn snapshot_fields(state: &FlowState, terrain: &Terrain, eps: f64) -> [(&'static str, Vec<f64>); 4] {
    let n = state.n_cells();
    let view = state.view();
    let (ux, uy): (Vec<f64>, Vec<f64>) = (0..n).map(|k| view.velocity(k, eps)).unzip();
    let eta = (0..n).map(|k| state.depth[k] + terrain.bed()[k]).collect();
    [("h", state.depth.clone()), ("ux", ux), ("uy", uy), ("eta", eta)]
}

/// Write the four rasters of snapshot `index` into `dir`; returns their paths.
pub fn write_snapshot(state: &FlowState, terrain: &Terrain, eps: f64, index: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| FloodError::io(dir, e))?;
    snapshot_fields(state, terrain, eps)
        .iter()
        .map(|(name, values)| {
            let path = dir.join(format!("{name}_{index:04}.asc"));
            write_raster(&path, terrain, values)?;
            Ok(path)
        })
        .collect()
}

/// Everything reported about a finished run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub final_time: f64,
    pub ledger: MassLedger,
    pub final_volume: f64,
    pub mass_imbalance: f64,
    pub snapshots: Vec<SnapshotRow>,
    /// Step lengths of every step.
    pub dt_history: Vec<f64>,
    /// Wet-cell fraction after every step.
    pub wet_fraction_history: Vec<f64>,
    pub stage_seconds: Vec<(String, f64)>,
    pub stage_percent: Vec<(String, f64)>,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn set_timings(&mut self, t: &StageTimings) {
        let shares = t.shares();
        self.stage_seconds = STAGE_NAMES.iter().zip(t.secs).map(|(n, s)| (n.to_string(), s)).collect();
        self.stage_percent = STAGE_NAMES.iter().zip(shares).map(|(n, s)| (n.to_string(), s)).collect();
    }

    pub fn max_speed(&self) -> f64 {
        self.snapshots.iter().map(|r| r.max_speed).fold(0.0, f64::max)
    }

    pub fn snapshot_csv(&self) -> String {
        let mut out = String::from("time,volume,wet_fraction,max_speed,dt\n");
        for r in &self.snapshots {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                r.time, r.volume, r.wet_fraction, r.max_speed, r.dt
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "steps {}  final time {:.3} s  wall {:.2} s\n",
            self.steps, self.final_time, self.wall_seconds
        );
        out.push_str(&format!(
            "volume {:.6e} m^3  expected {:.6e}  imbalance {:.3e}\n",
            self.final_volume,
            self.ledger.expected(),
            self.mass_imbalance
        ));
        out.push_str(&format!(
            "sources {:.6e}  boundary {:.6e}  clamped {:.6e}  coupling {:.6e}\n",
            self.ledger.sources, self.ledger.boundary, self.ledger.clamped, self.ledger.external
        ));
        out.push_str(&format!("max |U| at snapshots {:.6e} m/s\n", self.max_speed()));
        for (name, pct) in &self.stage_percent {
            out.push_str(&format!("  {name:<16} {pct:6.2} %\n"));
        }
        out
    }

    /// Write `summary.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FloodError::io(dir, e))?;
        let csv = dir.join("summary.csv");
        fs::write(&csv, self.snapshot_csv()).map_err(|e| FloodError::io(&csv, e))?;
        let json = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| FloodError::config(format!("summary: {e}")))?;
        fs::write(&json, text).map_err(|e| FloodError::io(&json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::esri::read_raster;

    #[test]
    fn depth_raster_round_trips() {
        let t = Terrain::from_fn(4, 3, 10.0, |x, y| 0.01 * x - 0.02 * y).unwrap();
        let mut s = FlowState::still_water(&t, 0.1);
        s.mom_x[5] = 0.01 * s.depth[5];
        let dir = tempfile::tempdir().unwrap();
        let paths = write_snapshot(&s, &t, 1e-6, 0, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        let back = read_raster(&paths[0]).unwrap();
        for (a, b) in s.depth.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1e-6 * a.abs() + 1e-300);
        }
    }

    #[test]
    fn dry_state_has_eta_equal_to_bed() {
        let t = Terrain::from_fn(3, 3, 1.0, |x, y| x * y).unwrap();
        let s = FlowState::dry(&t);
        let fields = snapshot_fields(&s, &t, 1e-6);
        assert_eq!(fields[3].1, t.bed());
    }

    #[test]
    fn summary_files_are_written() {
        let mut sum = RunSummary::default();
        sum.snapshots.push(SnapshotRow {
            time: 0.0,
            volume: 1.0,
            wet_fraction: 0.5,
            max_speed: 0.0,
            dt: 0.0,
        });
        sum.set_timings(&StageTimings { secs: [1.0; 8] });
        let dir = tempfile::tempdir().unwrap();
        sum.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(sum.to_text().contains("12.50 %"));
    }
}
