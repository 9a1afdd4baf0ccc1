//! Grid geometry, bathymetry and the conserved flow state.
//!
//! Storage is row-major with `index = i + j * nx`; `i` runs east, `j` runs
//! north, and the origin is the south-west corner of cell `(0, 0)`.

use crate::error::{FloodError, Result};
use crate::series::{interpolate, Series};

/// Bed elevation on a uniform grid of square cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
    bed: Vec<f64>,
}

impl Terrain {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64), bed: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(FloodError::config(format!("grid must be non-empty, got {nx}x{ny}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(FloodError::config(format!("cell size must be positive, got {h}")));
        }
        if bed.len() != nx * ny {
            return Err(FloodError::config(format!(
                "bed has {} values for a {nx}x{ny} grid",
                bed.len()
            )));
        }
        if let Some(k) = bed.iter().position(|b| !b.is_finite()) {
            return Err(FloodError::config(format!(
                "non-finite bed elevation at cell ({}, {})",
                k % nx,
                k / nx
            )));
        }
        Ok(Terrain {
            nx,
            ny,
            h,
            origin,
            bed,
        })
    }

    /// Flat bed at `level`.
    pub fn flat(nx: usize, ny: usize, h: f64, level: f64) -> Result<Self> {
        Terrain::new(nx, ny, h, (0.0, 0.0), vec![level; nx * ny])
    }

    /// Bed sampled from `f(x, y)` at cell centres.
    pub fn from_fn(nx: usize, ny: usize, h: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut bed = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                bed.push(f((i as f64 + 0.5) * h, (j as f64 + 0.5) * h));
            }
        }
        Terrain::new(nx, ny, h, (0.0, 0.0), bed)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn with_origin(mut self, origin: (f64, f64)) -> Self {
        self.origin = origin;
        self
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    pub fn checked_idx(&self, i: usize, j: usize) -> Result<usize> {
        if i < self.nx && j < self.ny {
            Ok(self.idx(i, j))
        } else {
            Err(FloodError::Index {
                i,
                j,
                nx: self.nx,
                ny: self.ny,
            })
        }
    }

    pub fn bed(&self) -> &[f64] {
        &self.bed
    }

    pub fn bed_at(&self, i: usize, j: usize) -> f64 {
        self.bed[self.idx(i, j)]
    }

    /// Centre of cell `(i, j)` in world coordinates.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.h,
            self.origin.1 + (j as f64 + 0.5) * self.h,
        )
    }

    /// Mirror the grid east-west.
    pub fn mirrored_x(&self) -> Terrain {
        let mut bed = self.bed.clone();
        for row in bed.chunks_mut(self.nx) {
            row.reverse();
        }
        Terrain { bed, ..self.clone() }
    }
}

/// Conserved variables `(H, HUx, HUy)` at cell centres plus the clock.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub depth: Vec<f64>,
    pub mom_x: Vec<f64>,
    pub mom_y: Vec<f64>,
    pub time: f64,
}

impl FlowState {
    pub fn dry(terrain: &Terrain) -> Self {
        let n = terrain.n_cells();
        FlowState {
            depth: vec![0.0; n],
            mom_x: vec![0.0; n],
            mom_y: vec![0.0; n],
            time: 0.0,
        }
    }

    /// Still water with free surface at `level`; cells with bed above it stay dry.
    pub fn still_water(terrain: &Terrain, level: f64) -> Self {
        let mut s = FlowState::dry(terrain);
        for (h, b) in s.depth.iter_mut().zip(terrain.bed()) {
            *h = (level - b).max(0.0);
        }
        s
    }

    pub fn from_depth(terrain: &Terrain, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != terrain.n_cells() {
            return Err(FloodError::config(format!(
                "depth field has {} values for {} cells",
                depth.len(),
                terrain.n_cells()
            )));
        }
        if depth.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(FloodError::config("depth must be finite and non-negative"));
        }
        let mut s = FlowState::dry(terrain);
        s.depth = depth;
        Ok(s)
    }

    pub fn n_cells(&self) -> usize {
        self.depth.len()
    }

    pub fn view(&self) -> StateView<'_> {
        StateView {
            depth: &self.depth,
            mom_x: &self.mom_x,
            mom_y: &self.mom_y,
        }
    }

    /// Zero momentum wherever the depth is at or below `eps`.
    pub fn normalize_dry(&mut self, eps: f64) {
        for k in 0..self.depth.len() {
            if self.depth[k] <= eps {
                self.mom_x[k] = 0.0;
                self.mom_y[k] = 0.0;
            }
        }
    }

    pub fn mirrored_x(&self, nx: usize) -> FlowState {
        let mut s = self.clone();
        for ((h, mx), my) in s
            .depth
            .chunks_mut(nx)
            .zip(s.mom_x.chunks_mut(nx))
            .zip(s.mom_y.chunks_mut(nx))
        {
            h.reverse();
            mx.reverse();
            my.reverse();
            mx.iter_mut().for_each(|m| *m = -*m);
        }
        s
    }
}

/// Borrowed `(H, HUx, HUy)` fields, so the force model can run on either the
/// time-level state or the half-step predictor state.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub depth: &'a [f64],
    pub mom_x: &'a [f64],
    pub mom_y: &'a [f64],
}

impl StateView<'_> {
    #[inline]
    pub fn velocity(&self, k: usize, eps: f64) -> (f64, f64) {
        let h = self.depth[k];
        if h > eps {
            (self.mom_x[k] / h, self.mom_y[k] / h)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Manning roughness, uniform or per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Manning {
    Uniform(f64),
    Field(Vec<f64>),
}

impl Manning {
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Manning::Uniform(n) => *n,
            Manning::Field(v) => v[k],
        }
    }
}

/// Mean angular velocity of the Earth [1/s].
pub const EARTH_ROTATION: f64 = 7.2921e-5;

/// Physical constants and the dry threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    pub gravity: f64,
    pub manning: Manning,
    pub viscosity: f64,
    /// Vertical component of the Earth's angular velocity [1/s].
    pub omega_z: f64,
    pub wind_drag: f64,
    pub air_density: f64,
    pub water_density: f64,
    pub dry_eps: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            gravity: 9.81,
            manning: Manning::Uniform(0.03),
            viscosity: 0.0,
            omega_z: 0.0,
            wind_drag: 1.0e-3,
            air_density: 1.2,
            water_density: 1000.0,
            dry_eps: 1.0e-6,
        }
    }
}

impl PhysicalParams {
    /// Frictionless, inviscid, non-rotating, windless water.
    pub fn inviscid(gravity: f64) -> Self {
        PhysicalParams {
            gravity,
            manning: Manning::Uniform(0.0),
            wind_drag: 0.0,
            ..PhysicalParams::default()
        }
    }

    pub fn validate(&self, n_cells: usize) -> Result<()> {
        let bad = |what: &str| Err(FloodError::config(format!("invalid physical parameter: {what}")));
        if !(self.gravity > 0.0) {
            return bad("gravity must be > 0");
        }
        match &self.manning {
            Manning::Uniform(n) if !(*n >= 0.0) => return bad("manning must be >= 0"),
            Manning::Field(v) if v.len() != n_cells => return bad("manning field size mismatch"),
            Manning::Field(v) if v.iter().any(|n| !(*n >= 0.0)) => {
                return bad("manning must be >= 0")
            }
            _ => {}
        }
        if !(self.viscosity >= 0.0) {
            return bad("viscosity must be >= 0");
        }
        if !self.omega_z.is_finite() {
            return bad("omega_z must be finite");
        }
        if !(self.wind_drag >= 0.0) {
            return bad("wind_drag must be >= 0");
        }
        if !(self.water_density > 0.0) {
            return bad("water_density must be > 0");
        }
        if !(self.air_density >= 0.0) {
            return bad("air_density must be >= 0");
        }
        if !(self.dry_eps > 0.0) {
            return bad("dry_eps must be > 0");
        }
        Ok(())
    }
}

/// f-plane Coriolis parameter component for a latitude in degrees.
pub fn omega_z_from_latitude(latitude_deg: f64) -> f64 {
    EARTH_ROTATION * latitude_deg.to_radians().sin()
}

/// Horizontal wind, constant or a linearly interpolated record.
#[derive(Debug, Clone, PartialEq)]
pub enum WindForcing {
    Constant { wx: f64, wy: f64 },
    Series { times: Vec<f64>, wx: Vec<f64>, wy: Vec<f64> },
}

impl Default for WindForcing {
    fn default() -> Self {
        WindForcing::Constant { wx: 0.0, wy: 0.0 }
    }
}

impl WindForcing {
    pub fn series(samples: Vec<(f64, f64, f64)>) -> Result<Self> {
        // reuse the scalar series validation on the time axis
        Series::new(samples.iter().map(|s| (s.0, s.1)).collect())?;
        Series::new(samples.iter().map(|s| (s.0, s.2)).collect())?;
        Ok(WindForcing::Series {
            times: samples.iter().map(|s| s.0).collect(),
            wx: samples.iter().map(|s| s.1).collect(),
            wy: samples.iter().map(|s| s.2).collect(),
        })
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        match self {
            WindForcing::Constant { wx, wy } => (*wx, *wy),
            WindForcing::Series { times, wx, wy } => {
                (interpolate(times, wx, t), interpolate(times, wy, t))
            }
        }
    }
}

/// Per-cell source density and source-water velocity at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    /// Source (+) / drain (-) surface density [m/s].
    pub sigma: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    /// 1 where `sigma != 0`.
    pub index_q: Vec<u8>,
}

impl SourceField {
    pub fn empty(n: usize) -> Self {
        SourceField {
            sigma: vec![0.0; n],
            vx: vec![0.0; n],
            vy: vec![0.0; n],
            index_q: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn total_rate(&self, cell_area: f64) -> f64 {
        self.sigma.iter().sum::<f64>() * cell_area
    }
}

/// Free-surface level `H + b` of one cell.
pub fn free_surface(state: &FlowState, terrain: &Terrain, i: usize, j: usize) -> Result<f64> {
    let k = terrain.checked_idx(i, j)?;
    Ok(state.depth[k] + terrain.bed()[k])
}

/// Depth-averaged velocity; exactly zero at or below the dry threshold.
pub fn velocity(
    state: &FlowState,
    params: &PhysicalParams,
    terrain: &Terrain,
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    let k = terrain.checked_idx(i, j)?;
    Ok(state.view().velocity(k, params.dry_eps))
}

/// Stored water volume `sum(H) * h^2`.
pub fn total_volume(state: &FlowState, terrain: &Terrain) -> f64 {
    state.depth.iter().sum::<f64>() * terrain.cell_area()
}

/// Fraction of cells with depth above `eps`.
pub fn wet_fraction(state: &FlowState, eps: f64) -> f64 {
    let wet = state.depth.iter().filter(|&&h| h > eps).count();
    wet as f64 / state.depth.len().max(1) as f64
}

pub fn max_speed(state: &FlowState, eps: f64) -> f64 {
    let v = state.view();
    (0..state.n_cells())
        .map(|k| {
            let (u, w) = v.velocity(k, eps);
            u.hypot(w)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_cell(h: f64, b: f64) -> (Terrain, FlowState) {
        let t = Terrain::new(1, 1, 1.0, (0.0, 0.0), vec![b]).unwrap();
        let mut s = FlowState::dry(&t);
        s.depth[0] = h;
        (t, s)
    }

    #[test]
    fn free_surface_examples() {
        let (t, s) = one_cell(2.0, 3.0);
        assert_eq!(free_surface(&s, &t, 0, 0).unwrap(), 5.0);
        let (t, s) = one_cell(0.0, -1.5);
        assert_eq!(free_surface(&s, &t, 0, 0).unwrap(), -1.5);
        let (t, s) = one_cell(0.75, 0.25);
        assert_eq!(free_surface(&s, &t, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn free_surface_rejects_out_of_range() {
        let (t, s) = one_cell(1.0, 0.0);
        assert!(matches!(
            free_surface(&s, &t, 1, 0),
            Err(FloodError::Index { i: 1, j: 0, .. })
        ));
    }

    #[test]
    fn velocity_examples() {
        let p = PhysicalParams::default();
        let (t, mut s) = one_cell(2.0, 0.0);
        s.mom_x[0] = 4.0;
        assert_eq!(velocity(&s, &p, &t, 0, 0).unwrap(), (2.0, 0.0));

        s.depth[0] = 0.0;
        assert_eq!(velocity(&s, &p, &t, 0, 0).unwrap(), (0.0, 0.0));

        s.depth[0] = p.dry_eps / 2.0;
        s.mom_x[0] = 1.0;
        assert_eq!(velocity(&s, &p, &t, 0, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn total_volume_examples() {
        let t = Terrain::flat(10, 10, 50.0, 0.0).unwrap();
        let mut s = FlowState::dry(&t);
        assert_eq!(total_volume(&s, &t), 0.0);
        s.depth.iter_mut().for_each(|h| *h = 1.0);
        assert_eq!(total_volume(&s, &t), 250_000.0);

        let t = Terrain::flat(1, 1, 2.0, 0.0).unwrap();
        let mut s = FlowState::dry(&t);
        s.depth[0] = 0.5;
        assert_eq!(total_volume(&s, &t), 2.0);
    }

    #[test]
    fn terrain_rejects_bad_geometry() {
        assert!(Terrain::new(0, 3, 1.0, (0.0, 0.0), vec![]).is_err());
        assert!(Terrain::new(2, 2, 0.0, (0.0, 0.0), vec![0.0; 4]).is_err());
        assert!(Terrain::new(2, 2, 1.0, (0.0, 0.0), vec![0.0; 3]).is_err());
        assert!(Terrain::new(2, 2, 1.0, (0.0, 0.0), vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn velocity_always_finite(h in 0.0f64..1e3, mx in -1e6f64..1e6, my in -1e6f64..1e6) {
            let p = PhysicalParams::default();
            let (t, mut s) = one_cell(h, 0.0);
            s.mom_x[0] = mx;
            s.mom_y[0] = my;
            let (u, v) = velocity(&s, &p, &t, 0, 0).unwrap();
            prop_assert!(u.is_finite() && v.is_finite());
        }

        #[test]
        fn volume_is_additive_and_permutation_invariant(
            depths in proptest::collection::vec(0.0f64..10.0, 16),
            split in 0usize..16,
        ) {
            let t = Terrain::flat(16, 1, 3.0, 0.0).unwrap();
            let s = FlowState::from_depth(&t, depths.clone()).unwrap();
            let whole = total_volume(&s, &t);

            let mut rev = depths.clone();
            rev.reverse();
            let sr = FlowState::from_depth(&t, rev).unwrap();
            prop_assert!((total_volume(&sr, &t) - whole).abs() <= 1e-12 * whole.max(1.0));

            let a: f64 = depths[..split].iter().sum::<f64>() * 9.0;
            let b: f64 = depths[split..].iter().sum::<f64>() * 9.0;
            prop_assert!((a + b - whole).abs() <= 1e-12 * whole.max(1.0));
        }
    }
}
