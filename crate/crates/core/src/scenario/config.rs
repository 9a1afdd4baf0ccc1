//! Declarative scenario files (TOML).
//!
//! Every physical default lives in [`PhysicsSection::default`]:
//!
//! | key | default |
//! |-----|---------|
//! | `gravity` | 9.81 m/s^2 |
//! | `manning` | 0.03 s/m^(1/3) |
//! | `viscosity` | 0 m^2/s |
//! | `latitude` / `omega_z` | 0 |
//! | `wind_drag` (C_a) | 1e-3 |
//! | `air_density` | 1.2 kg/m^3 |
//! | `water_density` | 1000 kg/m^3 |
//! | `dry_eps` | 1e-6 m |
//!
//! plus `courant = 0.5`, `dt_max = 60`, `dt_min = 1e-8`, `block_size = 16`,
//! skipping on and walls on every edge.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::block::DEFAULT_BLOCK_SIZE;
use crate::error::{FloodError, Result};
use crate::forcing::{ForceTerms, SourceKind, SourceSpec};
use crate::grid::{omega_z_from_latitude, FlowState, Manning, PhysicalParams, Terrain, WindForcing};
use crate::nesting::{NestingConfig, WindowSpec};
use crate::series::Series;
use crate::stepper::{Boundaries, SolverConfig, TimestepControl};

use super::esri::{load_terrain, read_raster};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Global elevation raster.
    pub terrain: PathBuf,
    /// Simulated time [s].
    pub duration: f64,
    /// Time between snapshots [s]; defaults to the duration.
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_true")]
    pub skip: bool,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub timestep: TimestepControl,
    #[serde(default)]
    pub boundaries: Boundaries,
    #[serde(default)]
    pub forces: ForceTerms,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub sources: Vec<SourceSection>,
    #[serde(default)]
    pub wind: WindSection,
    #[serde(default)]
    pub windows: Vec<WindowSection>,
    #[serde(default = "default_true")]
    pub two_way: bool,
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub gravity: f64,
    pub manning: f64,
    /// Raster of per-cell Manning coefficients; overrides `manning`.
    pub manning_raster: Option<PathBuf>,
    pub viscosity: f64,
    /// Latitude in degrees; sets `omega_z` unless that is given.
    pub latitude: Option<f64>,
    pub omega_z: Option<f64>,
    pub wind_drag: f64,
    pub air_density: f64,
    pub water_density: f64,
    pub dry_eps: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        PhysicsSection {
            gravity: p.gravity,
            manning: 0.03,
            manning_raster: None,
            viscosity: p.viscosity,
            latitude: None,
            omega_z: None,
            wind_drag: p.wind_drag,
            air_density: p.air_density,
            water_density: p.water_density,
            dry_eps: p.dry_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Dry,
    /// Still water up to a free-surface level [m].
    Level { level: f64 },
    /// Depth raster on the terrain grid.
    Raster { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Explicit `(i, j)` cells.
    #[serde(default)]
    pub cells: Vec<(usize, usize)>,
    /// Inclusive rectangle `[i0, j0, i1, j1]`.
    #[serde(default)]
    pub region: Option<[usize; 4]>,
    /// Hydrograph samples `(t, Q)` [s, m^3/s].
    #[serde(default)]
    pub discharge: Option<Series>,
    /// Rain (or drain) rate samples `(t, sigma)` [s, m/s].
    #[serde(default)]
    pub rain: Option<Series>,
    /// Velocity of the injected water [m/s].
    #[serde(default)]
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindSection {
    /// Constant wind `(wx, wy)` [m/s].
    pub constant: Option<(f64, f64)>,
    /// Samples `(t, wx, wy)`.
    pub series: Option<Vec<(f64, f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub i0: usize,
    pub j0: usize,
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    /// Finer elevation raster covering exactly the window.
    #[serde(default)]
    pub terrain: Option<PathBuf>,
}

fn default_ratio() -> usize {
    4
}

/// Parse a scenario from TOML text; relative paths are resolved against
/// `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| FloodError::config(format!("scenario: {e}")))?;
    let mut cfg: ScenarioConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| FloodError::config(format!("scenario field '{}': {}", e.path(), e.inner())))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.terrain);
    if let Some(p) = cfg.physics.manning_raster.as_mut() {
        resolve(p);
    }
    if let InitialState::Raster { path } = &mut cfg.initial {
        resolve(path);
    }
    for w in &mut cfg.windows {
        if let Some(p) = w.terrain.as_mut() {
            resolve(p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FloodError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}

impl ScenarioConfig {
    /// Checks that need no files.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(FloodError::config(format!("duration must be > 0, got {}", self.duration)));
        }
        if let Some(c) = self.snapshot_interval {
            if !(c > 0.0 && c.is_finite()) {
                return Err(FloodError::config(format!("snapshot_interval must be > 0, got {c}")));
            }
        }
        if self.block_size == 0 {
            return Err(FloodError::config("block_size must be positive"));
        }
        self.timestep.validate()?;
        for (k, s) in self.sources.iter().enumerate() {
            if s.discharge.is_some() == s.rain.is_some() {
                return Err(FloodError::config(format!(
                    "sources[{k}]: give exactly one of 'discharge' or 'rain'"
                )));
            }
            if s.cells.is_empty() && s.region.is_none() {
                return Err(FloodError::config(format!("sources[{k}]: give 'cells' or 'region'")));
            }
            if let Some([i0, j0, i1, j1]) = s.region {
                if i1 < i0 || j1 < j0 {
                    return Err(FloodError::config(format!("sources[{k}]: empty region")));
                }
            }
        }
        if self.wind.constant.is_some() && self.wind.series.is_some() {
            return Err(FloodError::config("wind: give either 'constant' or 'series'"));
        }
        Ok(())
    }

    pub fn snapshot_interval(&self) -> f64 {
        self.snapshot_interval.unwrap_or(self.duration)
    }

    /// Snapshot times including `t = 0` and the end time.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let c = self.snapshot_interval();
        let n = (self.duration / c + 1e-9).floor() as usize;
        (0..=n).map(|k| (k as f64 * c).min(self.duration)).collect()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            control: self.timestep,
            boundaries: self.boundaries,
            block_size: self.block_size,
            skip: self.skip,
            workers: self.workers,
            terms: self.forces,
        }
    }

    pub fn nesting_config(&self) -> NestingConfig {
        NestingConfig { two_way: self.two_way }
    }

    fn params(&self, terrain: &Terrain) -> Result<PhysicalParams> {
        let p = &self.physics;
        let manning = match &p.manning_raster {
            Some(path) => {
                let r = read_raster(path)?;
                if (r.ncols, r.nrows) != (terrain.nx(), terrain.ny()) {
                    return Err(FloodError::config(format!(
                        "manning raster {} is {}x{}, terrain is {}x{}",
                        path.display(),
                        r.ncols,
                        r.nrows,
                        terrain.nx(),
                        terrain.ny()
                    )));
                }
                Manning::Field(r.values)
            }
            None => Manning::Uniform(p.manning),
        };
        let params = PhysicalParams {
            gravity: p.gravity,
            manning,
            viscosity: p.viscosity,
            omega_z: p.omega_z.unwrap_or_else(|| p.latitude.map_or(0.0, omega_z_from_latitude)),
            wind_drag: p.wind_drag,
            air_density: p.air_density,
            water_density: p.water_density,
            dry_eps: p.dry_eps,
        };
        params.validate(terrain.n_cells())?;
        Ok(params)
    }

    fn initial_state(&self, terrain: &Terrain) -> Result<FlowState> {
        match &self.initial {
            InitialState::Dry => Ok(FlowState::dry(terrain)),
            InitialState::Level { level } => Ok(FlowState::still_water(terrain, *level)),
            InitialState::Raster { path } => {
                let r = read_raster(path)?;
                if (r.ncols, r.nrows) != (terrain.nx(), terrain.ny()) {
                    return Err(FloodError::config(format!(
                        "initial depth raster {} does not match the terrain grid",
                        path.display()
                    )));
                }
                let depth = r.values.iter().map(|&v| if r.is_nodata(v) { 0.0 } else { v }).collect();
                FlowState::from_depth(terrain, depth)
            }
        }
    }

    fn sources(&self, terrain: &Terrain) -> Result<Vec<SourceSpec>> {
        self.sources
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut cells = s.cells.clone();
                if let Some([i0, j0, i1, j1]) = s.region {
                    cells.extend(SourceSpec::region(i0, j0, i1, j1));
                }
                let kind = match (&s.discharge, &s.rain) {
                    (Some(q), _) => SourceKind::Discharge(q.clone()),
                    (None, Some(r)) => SourceKind::Rain(r.clone()),
                    (None, None) => unreachable!("checked by validate"),
                };
                let spec = SourceSpec {
                    cells,
                    kind,
                    velocity: s.velocity,
                };
                spec.validate(terrain)
                    .map_err(|e| FloodError::config(format!("sources[{k}]: {e}")))?;
                Ok(spec)
            })
            .collect()
    }

    fn wind(&self) -> Result<WindForcing> {
        match (&self.wind.constant, &self.wind.series) {
            (Some((wx, wy)), _) => Ok(WindForcing::Constant { wx: *wx, wy: *wy }),
            (None, Some(s)) => WindForcing::series(s.clone()),
            (None, None) => Ok(WindForcing::default()),
        }
    }

    fn windows(&self, terrain: &Terrain) -> Result<Vec<WindowSpec>> {
        self.windows
            .iter()
            .map(|w| {
                let fine_bed = match &w.terrain {
                    Some(path) => {
                        let r = read_raster(path)?;
                        if (r.ncols, r.nrows) != (w.nx * w.ratio, w.ny * w.ratio) {
                            return Err(FloodError::config(format!(
                                "window raster {} is {}x{}, expected {}x{}",
                                path.display(),
                                r.ncols,
                                r.nrows,
                                w.nx * w.ratio,
                                w.ny * w.ratio
                            )));
                        }
                        Some(r.into_terrain()?.bed().to_vec())
                    }
                    None => None,
                };
                let spec = WindowSpec {
                    i0: w.i0,
                    j0: w.j0,
                    nx: w.nx,
                    ny: w.ny,
                    ratio: w.ratio,
                    fine_bed,
                };
                spec.validate(terrain)?;
                Ok(spec)
            })
            .collect()
    }

    /// Read every referenced file and build the run inputs.
    pub fn load(&self) -> Result<Scenario> {
        let terrain = load_terrain(&self.terrain)?;
        let params = self.params(&terrain)?;
        let state = self.initial_state(&terrain)?;
        let sources = self.sources(&terrain)?;
        let wind = self.wind()?;
        let windows = self.windows(&terrain)?;
        Ok(Scenario {
            terrain,
            params,
            state,
            sources,
            wind,
            windows,
        })
    }
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub terrain: Terrain,
    pub params: PhysicalParams,
    pub state: FlowState,
    pub sources: Vec<SourceSpec>,
    pub wind: WindForcing,
    pub windows: Vec<WindowSpec>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        parse_scenario(text, Path::new("/data"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("terrain = \"dem.asc\"\nduration = 100.0\n").unwrap();
        assert_eq!(c.terrain, PathBuf::from("/data/dem.asc"));
        assert_eq!(c.timestep.courant, 0.5);
        assert_eq!(c.block_size, 16);
        assert_eq!(c.physics.dry_eps, 1e-6);
        assert_eq!(c.physics.wind_drag, 1e-3);
        assert_eq!(c.boundaries, Boundaries::walls());
        assert!(c.skip && c.two_way);
        assert_eq!(c.snapshot_times(), vec![0.0, 100.0]);
    }

    #[test]
    fn flood_scenario_is_accepted() {
        let c = parse(
            r#"
terrain = "volga.asc"
duration = 72000.0
snapshot_interval = 3600.0
[physics]
manning = 0.035
latitude = 48.5
[[sources]]
cells = [[10, 500]]
discharge = [[0.0, 100000.0]]
"#,
        )
        .unwrap();
        assert_eq!(c.snapshot_times().len(), 21);
        assert_eq!(c.sources[0].discharge.as_ref().unwrap().at(5.0), 100000.0);
    }

    #[test]
    fn decreasing_hydrograph_is_rejected() {
        let e = parse(
            "terrain = \"d.asc\"\nduration = 1.0\n[[sources]]\ncells = [[0, 0]]\ndischarge = [[10.0, 1.0], [5.0, 2.0]]\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("sources"), "{e}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = parse("terrain = \"d.asc\"\nduration = 1.0\n[timestep]\ncourant = \"half\"\n").unwrap_err();
        assert!(e.to_string().contains("timestep.courant"), "{e}");
        let e = parse("terrain = \"d.asc\"\nduration = 1.0\n[physics]\ngravty = 9.8\n").unwrap_err();
        assert!(e.to_string().contains("gravty"), "{e}");
        assert!(parse("terrain = \"d.asc\"\nduration = -1.0\n").is_err());
        assert!(parse("terrain = \"d.asc\"\nduration = 1.0\nsnapshot_interval = 0.0\n").is_err());
        assert!(parse("duration = 1.0\n").is_err());
    }

    #[test]
    fn source_needs_one_kind_and_cells() {
        let base = "terrain = \"d.asc\"\nduration = 1.0\n[[sources]]\n";
        assert!(parse(&format!("{base}cells = [[0, 0]]\n")).is_err());
        assert!(parse(&format!("{base}discharge = [[0.0, 1.0]]\n")).is_err());
        assert!(parse(&format!("{base}cells = [[0, 0]]\ndischarge = [[0.0, 1.0]]\nrain = [[0.0, 1.0]]\n")).is_err());
        assert!(parse(&format!("{base}region = [0, 0, 1, 1]\nrain = [[0.0, 1e-5]]\n")).is_ok());
    }

    #[test]
    fn initial_state_variants() {
        let c = parse("terrain = \"d.asc\"\nduration = 1.0\n[initial]\nkind = \"level\"\nlevel = 3.5\n").unwrap();
        assert_eq!(c.initial, InitialState::Level { level: 3.5 });
        let c = parse("terrain = \"d.asc\"\nduration = 1.0\n[initial]\nkind = \"raster\"\npath = \"h.asc\"\n").unwrap();
        assert_eq!(c.initial, InitialState::Raster { path: "/data/h.asc".into() });
    }

    #[test]
    fn snapshot_count_is_floor_plus_one() {
        let c = parse("terrain = \"d.asc\"\nduration = 10.0\nsnapshot_interval = 3.0\n").unwrap();
        assert_eq!(c.snapshot_times(), vec![0.0, 3.0, 6.0, 9.0]);
    }
}
