//! Two-level zoom-in coupling: fine windows embedded in a coarse grid.

use log::warn;
use rayon::prelude::*;

use crate::error::{FloodError, Result};
use crate::forcing::{SourceKind, SourceSpec};
use crate::grid::{FlowState, Terrain};
use crate::series::Series;
use crate::stepper::{Boundaries, FaceId, Solver, SolverConfig, StepReport};

/// Width of the interpolated ghost band in fine cells.
pub const BAND: usize = 3;

/// Mean absolute bed deviation above which a fine DEM is reported as
/// inconsistent with the coarse one.
pub const BED_TOLERANCE: f64 = 0.5;

/// Rectangle of coarse cells refined by `ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub i0: usize,
    pub j0: usize,
    pub nx: usize,
    pub ny: usize,
    pub ratio: usize,
    /// Fine bed over the window interior, `(nx r) x (ny r)` row-major. When
    /// absent the coarse bed is injected.
    pub fine_bed: Option<Vec<f64>>,
}

impl WindowSpec {
    fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i < self.i0 + self.nx && j >= self.j0 && j < self.j0 + self.ny
    }

    fn overlaps(&self, o: &WindowSpec) -> bool {
        self.i0 < o.i0 + o.nx && o.i0 < self.i0 + self.nx && self.j0 < o.j0 + o.ny && o.j0 < self.j0 + self.ny
    }

    pub fn validate(&self, coarse: &Terrain) -> Result<()> {
        if self.ratio == 0 || self.nx == 0 || self.ny == 0 {
            return Err(FloodError::config("window needs a positive size and refinement ratio"));
        }
        if self.i0 == 0 || self.j0 == 0 || self.i0 + self.nx >= coarse.nx() || self.j0 + self.ny >= coarse.ny() {
            return Err(FloodError::config(format!(
                "window ({}, {}) {}x{} must lie strictly inside the {}x{} grid",
                self.i0,
                self.j0,
                self.nx,
                self.ny,
                coarse.nx(),
                coarse.ny()
            )));
        }
        if let Some(bed) = &self.fine_bed {
            let want = self.nx * self.ny * self.ratio * self.ratio;
            if bed.len() != want {
                return Err(FloodError::config(format!(
                    "fine bed has {} values, window needs {want}",
                    bed.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestingConfig {
    /// Feed fine results back to the coarse grid.
    pub two_way: bool,
}

impl Default for NestingConfig {
    fn default() -> Self {
        NestingConfig { two_way: true }
    }
}

/// Coarse state at the start of a coupled step.
#[derive(Debug, Clone)]
struct Snapshot {
    depth: Vec<f64>,
    mom_x: Vec<f64>,
    mom_y: Vec<f64>,
}

impl Snapshot {
    fn of(s: &FlowState) -> Self {
        Snapshot {
            depth: s.depth.clone(),
            mom_x: s.mom_x.clone(),
            mom_y: s.mom_y.clone(),
        }
    }
}

/// Coarse fields at the two ends of a step and the interpolation weight.
struct CoarseTimes<'a> {
    terrain: &'a Terrain,
    old: &'a Snapshot,
    new: &'a FlowState,
    theta: f64,
    eps: f64,
}

impl CoarseTimes<'_> {
    /// Depth and momentum of coarse cell `k` at the interpolated time.
    fn cell(&self, k: usize) -> (f64, f64, f64) {
        let th = self.theta;
        let mix = |a: f64, b: f64| if th == 0.0 { a } else { (1.0 - th) * a + th * b };
        (
            mix(self.old.depth[k], self.new.depth[k]),
            mix(self.old.mom_x[k], self.new.mom_x[k]),
            mix(self.old.mom_y[k], self.new.mom_y[k]),
        )
    }
}

/// A fine grid covering one window plus its ghost band.
#[derive(Debug)]
pub struct NestedGrid {
    pub spec: WindowSpec,
    fine: Solver,
    /// `(coarse face, fine faces)` pairs on the window boundary.
    coarse_faces: Vec<FaceId>,
    fine_faces: Vec<FaceId>,
    fine_groups: Vec<std::ops::Range<usize>>,
    /// Coarse cell outside the window next to each coarse face and the
    /// sign turning a +x/+y volume into inflow to that cell.
    neighbours: Vec<(usize, f64)>,
}

impl NestedGrid {
    pub fn fine(&self) -> &Solver {
        &self.fine
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        let r = self.spec.ratio;
        let nxf = self.fine.terrain().nx();
        (0..self.spec.ny * r).flat_map(move |j| (0..self.spec.nx * r).map(move |i| (i + BAND) + (j + BAND) * nxf))
    }

    /// Volume of the window interior.
    pub fn interior_volume(&self) -> f64 {
        let d = &self.fine.state().depth;
        self.interior().map(|k| d[k]).sum::<f64>() * self.fine.terrain().cell_area()
    }

    fn faces_of(&self, f: usize) -> impl Iterator<Item = FaceId> + '_ {
        self.fine_faces[self.fine_groups[f].clone()].iter().copied()
    }

    fn is_band(&self, i: usize, j: usize) -> bool {
        let t = self.fine.terrain();
        i < BAND || j < BAND || i >= t.nx() - BAND || j >= t.ny() - BAND
    }
}

fn build_fine_terrain(coarse: &Terrain, spec: &WindowSpec) -> Result<Terrain> {
    let r = spec.ratio;
    let (nxf, nyf) = (spec.nx * r + 2 * BAND, spec.ny * r + 2 * BAND);
    let hf = coarse.h() / r as f64;
    let (ox, oy) = coarse.origin();
    let origin = (
        ox + spec.i0 as f64 * coarse.h() - BAND as f64 * hf,
        oy + spec.j0 as f64 * coarse.h() - BAND as f64 * hf,
    );
    let coarse_of = |f: usize, c0: usize| c0 as isize + (f as isize - BAND as isize).div_euclid(r as isize);
    let mut bed = Vec::with_capacity(nxf * nyf);
    for j in 0..nyf {
        for i in 0..nxf {
            let (ci, cj) = (coarse_of(i, spec.i0) as usize, coarse_of(j, spec.j0) as usize);
            let inside = i >= BAND && j >= BAND && i < nxf - BAND && j < nyf - BAND;
            let z = match (&spec.fine_bed, inside) {
                (Some(fb), true) => fb[(i - BAND) + (j - BAND) * spec.nx * r],
                _ => coarse.bed_at(ci, cj),
            };
            bed.push(z);
        }
    }
    let terrain = Terrain::new(nxf, nyf, hf, origin, bed)?;
    if spec.fine_bed.is_some() {
        let dev = bed_deviation(coarse, &terrain, spec);
        if dev > BED_TOLERANCE {
            warn!(
                "fine bed of window ({}, {}) deviates from the coarse bed by {dev:.3} m on average after restriction",
                spec.i0, spec.j0
            );
        }
    }
    Ok(terrain)
}

/// Mean absolute difference between the restricted fine bed and the coarse
/// bed over the window.
pub fn bed_deviation(coarse: &Terrain, fine: &Terrain, spec: &WindowSpec) -> f64 {
    let r = spec.ratio;
    let mut total = 0.0;
    for cj in 0..spec.ny {
        for ci in 0..spec.nx {
            let mean = block_mean(fine.bed(), fine.nx(), ci, cj, r);
            total += (mean - coarse.bed_at(spec.i0 + ci, spec.j0 + cj)).abs();
        }
    }
    total / (spec.nx * spec.ny) as f64
}

/// Mean of the `r x r` interior block of window cell `(ci, cj)`.
fn block_mean(field: &[f64], nxf: usize, ci: usize, cj: usize, r: usize) -> f64 {
    let mut s = 0.0;
    for dj in 0..r {
        let row = (cj * r + dj + BAND) * nxf + BAND + ci * r;
        s += field[row..row + r].iter().sum::<f64>();
    }
    s / (r * r) as f64
}

/// Copy of the coarse sources restricted to the window and mapped to fine
/// cells. Discharges keep the share of their cells inside the window.
fn fine_sources(sources: &[SourceSpec], spec: &WindowSpec) -> Result<Vec<SourceSpec>> {
    let r = spec.ratio;
    let mut out = Vec::new();
    for src in sources {
        let inside: Vec<(usize, usize)> = src.cells.iter().copied().filter(|&(i, j)| spec.contains(i, j)).collect();
        if inside.is_empty() {
            continue;
        }
        let mut cells = Vec::with_capacity(inside.len() * r * r);
        for &(i, j) in &inside {
            for dj in 0..r {
                for di in 0..r {
                    cells.push((BAND + (i - spec.i0) * r + di, BAND + (j - spec.j0) * r + dj));
                }
            }
        }
        let kind = match &src.kind {
            SourceKind::Discharge(q) => {
                let share = inside.len() as f64 / src.cells.len() as f64;
                SourceKind::Discharge(Series::new(q.points().map(|(t, v)| (t, v * share)).collect())?)
            }
            SourceKind::Rain(rate) => SourceKind::Rain(rate.clone()),
        };
        out.push(SourceSpec {
            cells,
            kind,
            velocity: src.velocity,
        });
    }
    Ok(out)
}

/// Interpolated `(H, HU, HV)` for a fine cell with bed `bed_f` centred at
/// `(x, y)`: free surface and velocity are bilinear over the wet coarse
/// neighbours, and depth follows from the fine bed.
fn prolong_point(c: &CoarseTimes<'_>, x: f64, y: f64, bed_f: f64) -> (f64, f64, f64) {
    let t = c.terrain;
    let (ox, oy) = t.origin();
    let fx = (x - ox) / t.h() - 0.5;
    let fy = (y - oy) / t.h() - 0.5;
    let (i0, j0) = (fx.floor(), fy.floor());
    let (wx, wy) = (fx - i0, fy - j0);
    let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    if wx == 0.0 && wy == 0.0 {
        let k = t.idx(clamp(i0, t.nx()), clamp(j0, t.ny()));
        if t.bed()[k] == bed_f {
            let (h, mx, my) = c.cell(k);
            return if h > c.eps { (h, mx, my) } else { (h.max(0.0), 0.0, 0.0) };
        }
    }
    let mut acc = [0.0; 4];
    for (di, dj, w) in [
        (0.0, 0.0, (1.0 - wx) * (1.0 - wy)),
        (1.0, 0.0, wx * (1.0 - wy)),
        (0.0, 1.0, (1.0 - wx) * wy),
        (1.0, 1.0, wx * wy),
    ] {
        if w == 0.0 {
            continue;
        }
        let k = t.idx(clamp(i0 + di, t.nx()), clamp(j0 + dj, t.ny()));
        let (h, mx, my) = c.cell(k);
        if h > c.eps {
            acc[0] += w * (h + t.bed()[k]);
            acc[1] += w * mx / h;
            acc[2] += w * my / h;
            acc[3] += w;
        }
    }
    if acc[3] == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let depth = acc[0] / acc[3] - bed_f;
    if depth > c.eps {
        (depth, depth * acc[1] / acc[3], depth * acc[2] / acc[3])
    } else {
        (depth.max(0.0), 0.0, 0.0)
    }
}

/// Overwrite the ghost band of `grid` with coarse values interpolated to
/// `theta` in `[0, 1]` between `old` and `new`.
fn prolong_band(grid: &mut NestedGrid, coarse_terrain: &Terrain, old: &Snapshot, new: &FlowState, theta: f64) {
    let eps = grid.fine.params().dry_eps;
    let times = CoarseTimes {
        terrain: coarse_terrain,
        old,
        new,
        theta,
        eps,
    };
    let ft = grid.fine.terrain().clone();
    let band: Vec<(usize, usize)> = (0..ft.ny())
        .flat_map(|j| (0..ft.nx()).map(move |i| (i, j)))
        .filter(|&(i, j)| grid.is_band(i, j))
        .collect();
    grid.fine.overwrite_cells(|s| {
        for &(i, j) in &band {
            let k = ft.idx(i, j);
            let (x, y) = ft.cell_center(i, j);
            let (h, mx, my) = prolong_point(&times, x, y, ft.bed()[k]);
            s.depth[k] = h;
            s.mom_x[k] = mx;
            s.mom_y[k] = my;
        }
    });
}

/// Ghost values of a window from the coarse state.
pub fn prolong_boundary(coarse: &Solver, grid: &mut NestedGrid) {
    let snap = Snapshot::of(coarse.state());
    prolong_band(grid, coarse.terrain(), &snap, coarse.state(), 0.0);
}

/// Replace each coarse window cell by the mean of its fine cells.
pub fn restrict_feedback(grid: &mut NestedGrid, coarse: &mut Solver) {
    restrict_and_reflux(grid, coarse, None);
}

/// Inner fine cell next to a fine window-boundary face, given the sign that
/// marks the face as west/south (`-1`) or east/north (`+1`).
fn inner_cell(face: FaceId, sign: f64, nxf: usize) -> usize {
    match (face, sign < 0.0) {
        (FaceId::X { i, j }, true) => i + j * nxf,
        (FaceId::X { i, j }, false) => i - 1 + j * nxf,
        (FaceId::Y { i, j }, true) => i + j * nxf,
        (FaceId::Y { i, j }, false) => i + (j - 1) * nxf,
    }
}

/// Move the fine-minus-coarse volume mismatch on each window face into the
/// coarse cell outside it. What that cell cannot supply is taken from the
/// fine cells just inside the face instead.
fn reflux(grid: &mut NestedGrid, coarse: &Solver, coarse_vol: &[f64], fine_vol: &[f64]) -> Vec<(usize, f64)> {
    let area = coarse.terrain().cell_area();
    let nxf = grid.fine.terrain().nx();
    let fine_area = grid.fine.terrain().cell_area();
    let mut outside = Vec::with_capacity(grid.neighbours.len());
    let mut take: Vec<(usize, f64)> = Vec::new();
    for (f, &(k, sign)) in grid.neighbours.iter().enumerate() {
        let change = sign * (fine_vol[f] - coarse_vol[f]);
        let have = coarse.state().depth[k] * area;
        if have + change >= 0.0 {
            outside.push((k, change / area));
            continue;
        }
        outside.push((k, -have / area));
        let short = -(have + change);
        let cells: Vec<usize> = grid.faces_of(f).map(|face| inner_cell(face, sign, nxf)).collect();
        let held: f64 = cells.iter().map(|&c| grid.fine.state().depth[c]).sum::<f64>() * fine_area;
        if held > 0.0 {
            let keep = (1.0 - short / held).max(0.0);
            take.extend(cells.into_iter().map(|c| (c, keep)));
        }
    }
    if !take.is_empty() {
        grid.fine.overwrite_cells(|s| {
            for &(c, keep) in &take {
                s.depth[c] *= keep;
                s.mom_x[c] *= keep;
                s.mom_y[c] *= keep;
            }
        });
    }
    outside
}

fn restrict_and_reflux(grid: &mut NestedGrid, coarse: &mut Solver, fluxes: Option<(&[f64], &[f64])>) {
    let outside = match fluxes {
        Some((c, f)) => reflux(grid, coarse, c, f),
        None => Vec::new(),
    };
    let spec = &grid.spec;
    let r = spec.ratio;
    let nxf = grid.fine.terrain().nx();
    let fs = grid.fine.state();
    let nxc = coarse.terrain().nx();
    coarse.overwrite_cells(|s| {
        for cj in 0..spec.ny {
            for ci in 0..spec.nx {
                let k = (spec.i0 + ci) + (spec.j0 + cj) * nxc;
                s.depth[k] = block_mean(&fs.depth, nxf, ci, cj, r);
                s.mom_x[k] = block_mean(&fs.mom_x, nxf, ci, cj, r);
                s.mom_y[k] = block_mean(&fs.mom_y, nxf, ci, cj, r);
            }
        }
        for &(k, dh) in &outside {
            s.depth[k] += dh;
        }
    });
}

/// Coarse solver plus non-overlapping fine windows.
#[derive(Debug)]
pub struct NestedSolver {
    coarse: Solver,
    grids: Vec<NestedGrid>,
    config: NestingConfig,
}

/// Outcome of one coupled step.
#[derive(Debug, Clone)]
pub struct CoupledReport {
    pub coarse: StepReport,
    /// Fine substeps per window.
    pub substeps: Vec<usize>,
}

impl NestedSolver {
    pub fn new(mut coarse: Solver, windows: Vec<WindowSpec>, config: NestingConfig) -> Result<Self> {
        for (a, w) in windows.iter().enumerate() {
            w.validate(coarse.terrain())?;
            if windows[..a].iter().any(|o| o.overlaps(w)) {
                return Err(FloodError::config("nested windows overlap"));
            }
        }
        let ct = coarse.terrain().clone();
        let nxc = ct.nx();
        let mut grids = Vec::with_capacity(windows.len());
        let mut probes = Vec::new();
        for spec in windows {
            let terrain = build_fine_terrain(&ct, &spec)?;
            let r = spec.ratio;
            let mut coarse_faces = Vec::new();
            let mut fine_faces = Vec::new();
            let mut fine_groups = Vec::new();
            let mut neighbours = Vec::new();
            let mut add = |cf: FaceId, fine: Vec<FaceId>, nb: usize, sign: f64| {
                coarse_faces.push(cf);
                fine_groups.push(fine_faces.len()..fine_faces.len() + fine.len());
                fine_faces.extend(fine);
                neighbours.push((nb, sign));
            };
            let (e, n) = (BAND + spec.nx * r, BAND + spec.ny * r);
            for j in spec.j0..spec.j0 + spec.ny {
                let rows = || (0..r).map(move |d| BAND + (j - spec.j0) * r + d);
                add(
                    FaceId::X { i: spec.i0, j },
                    rows().map(|jf| FaceId::X { i: BAND, j: jf }).collect(),
                    spec.i0 - 1 + j * nxc,
                    -1.0,
                );
                add(
                    FaceId::X { i: spec.i0 + spec.nx, j },
                    rows().map(|jf| FaceId::X { i: e, j: jf }).collect(),
                    spec.i0 + spec.nx + j * nxc,
                    1.0,
                );
            }
            for i in spec.i0..spec.i0 + spec.nx {
                let cols = || (0..r).map(move |d| BAND + (i - spec.i0) * r + d);
                add(
                    FaceId::Y { i, j: spec.j0 },
                    cols().map(|i_f| FaceId::Y { i: i_f, j: BAND }).collect(),
                    i + (spec.j0 - 1) * nxc,
                    -1.0,
                );
                add(
                    FaceId::Y { i, j: spec.j0 + spec.ny },
                    cols().map(|i_f| FaceId::Y { i: i_f, j: n }).collect(),
                    i + (spec.j0 + spec.ny) * nxc,
                    1.0,
                );
            }
            probes.extend(coarse_faces.iter().copied());

            // interior by injection of the free surface, band by interpolation
            let cs = coarse.state();
            let mut state = FlowState::dry(&terrain);
            state.time = cs.time;
            let eps = coarse.params().dry_eps;
            for jf in 0..terrain.ny() {
                for i_f in 0..terrain.nx() {
                    let ci = (spec.i0 as isize + (i_f as isize - BAND as isize).div_euclid(r as isize)) as usize;
                    let cj = (spec.j0 as isize + (jf as isize - BAND as isize).div_euclid(r as isize)) as usize;
                    let kc = ct.idx(ci, cj);
                    let kf = terrain.idx(i_f, jf);
                    let hc = cs.depth[kc];
                    if hc <= 0.0 {
                        continue;
                    }
                    let h = if terrain.bed()[kf] == ct.bed()[kc] {
                        hc
                    } else {
                        (hc + ct.bed()[kc] - terrain.bed()[kf]).max(0.0)
                    };
                    // films below eps keep their volume but not their momentum
                    state.depth[kf] = h;
                    if hc > eps && h > eps {
                        state.mom_x[kf] = h * cs.mom_x[kc] / hc;
                        state.mom_y[kf] = h * cs.mom_y[kc] / hc;
                    }
                }
            }
            let fine_config = SolverConfig {
                boundaries: Boundaries::open(),
                ..coarse.config().clone()
            };
            let sources = fine_sources(coarse.sources(), &spec)?;
            let mut fine = Solver::new(terrain, state, coarse.params().clone(), fine_config)?
                .with_sources(sources)?
                .with_wind(coarse.wind().clone());
            fine.set_probes(fine_faces.clone())?;
            let mut grid = NestedGrid {
                spec,
                fine,
                coarse_faces,
                fine_faces,
                fine_groups,
                neighbours,
            };
            prolong_boundary(&coarse, &mut grid);
            if config.two_way {
                restrict_feedback(&mut grid, &mut coarse);
            }
            grids.push(grid);
        }
        coarse.set_probes(probes)?;
        Ok(NestedSolver { coarse, grids, config })
    }

    pub fn coarse(&self) -> &Solver {
        &self.coarse
    }

    pub fn grids(&self) -> &[NestedGrid] {
        &self.grids
    }

    pub fn time(&self) -> f64 {
        self.coarse.time()
    }

    /// Volume of the coarse grid, which holds the restricted fine solution
    /// inside the windows in two-way mode.
    pub fn total_volume(&self) -> f64 {
        self.coarse.volume()
    }

    pub fn fine_volume(&self) -> f64 {
        self.grids.iter().map(NestedGrid::interior_volume).sum()
    }

    /// Advance the coarse grid by one step and every window to the same
    /// time, then feed the windows back.
    pub fn coupled_step(&mut self) -> Result<CoupledReport> {
        self.coupled_step_capped(f64::INFINITY)
    }

    /// Coupled step whose coarse step is no longer than `dt_cap`.
    pub fn coupled_step_capped(&mut self, dt_cap: f64) -> Result<CoupledReport> {
        let old = Snapshot::of(self.coarse.state());
        let t0 = self.coarse.time();
        let report = self.coarse.step_capped(dt_cap)?;
        if report.dt >= dt_cap {
            self.coarse.set_time(t0 + dt_cap);
        }
        let t1 = self.coarse.time();
        let coarse_vol = self.coarse.take_probe_volumes();
        let ct = self.coarse.terrain();
        let new = self.coarse.state();

        let substeps = self
            .grids
            .par_iter_mut()
            .map(|g| subcycle(g, ct, &old, new, t0, t1))
            .collect::<Result<Vec<usize>>>()?;

        if self.config.two_way {
            let mut offset = 0;
            for g in &mut self.grids {
                let fine_vol = g.fine.take_probe_volumes();
                let per_face: Vec<f64> = g.fine_groups.iter().map(|rg| fine_vol[rg.clone()].iter().sum()).collect();
                let nf = g.coarse_faces.len();
                restrict_and_reflux(g, &mut self.coarse, Some((&coarse_vol[offset..offset + nf], &per_face)));
                offset += nf;
            }
        } else {
            self.grids.iter_mut().for_each(|g| {
                g.fine.take_probe_volumes();
            });
        }
        Ok(CoupledReport {
            coarse: report,
            substeps,
        })
    }

    pub fn advance_to(&mut self, t_end: f64) -> Result<usize> {
        let mut steps = 0;
        while self.time() < t_end {
            self.coupled_step_capped(t_end - self.time())?;
            steps += 1;
        }
        Ok(steps)
    }
}

fn subcycle(g: &mut NestedGrid, ct: &Terrain, old: &Snapshot, new: &FlowState, t0: f64, t1: f64) -> Result<usize> {
    let mut n = 0;
    while g.fine.time() < t1 {
        let theta = (g.fine.time() - t0) / (t1 - t0);
        prolong_band(g, ct, old, new, theta);
        let remaining = t1 - g.fine.time();
        let rep = g.fine.step_capped(remaining)?;
        if rep.dt >= remaining {
            g.fine.set_time(t1);
        }
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhysicalParams;
    use crate::validation::seeded_bathymetry;

    fn config() -> SolverConfig {
        SolverConfig {
            workers: 1,
            ..SolverConfig::default()
        }
    }

    fn window(i0: usize, j0: usize, w: usize, r: usize) -> WindowSpec {
        WindowSpec {
            i0,
            j0,
            nx: w,
            ny: w,
            ratio: r,
            fine_bed: None,
        }
    }

    #[test]
    fn rejects_bad_windows() {
        let t = Terrain::flat(16, 16, 10.0, 0.0).unwrap();
        let s = FlowState::still_water(&t, 1.0);
        let mk = || Solver::new(t.clone(), s.clone(), PhysicalParams::default(), config()).unwrap();
        assert!(NestedSolver::new(mk(), vec![window(0, 2, 4, 2)], NestingConfig::default()).is_err());
        assert!(NestedSolver::new(mk(), vec![window(12, 2, 4, 2)], NestingConfig::default()).is_err());
        assert!(NestedSolver::new(mk(), vec![window(2, 2, 4, 2), window(5, 5, 4, 2)], NestingConfig::default()).is_err());
        let mut w = window(2, 2, 4, 2);
        w.fine_bed = Some(vec![0.0; 3]);
        assert!(NestedSolver::new(mk(), vec![w], NestingConfig::default()).is_err());
    }

    #[test]
    fn uniform_depth_prolongs_to_constant() {
        let t = Terrain::flat(16, 16, 10.0, 0.0).unwrap();
        let s = FlowState::still_water(&t, 1.5);
        let solver = Solver::new(t, s, PhysicalParams::default(), config()).unwrap();
        let nested = NestedSolver::new(solver, vec![window(4, 4, 4, 4)], NestingConfig::default()).unwrap();
        let fine = nested.grids()[0].fine().state();
        assert!(fine.depth.iter().all(|&h| (h - 1.5).abs() < 1e-14));
    }

    #[test]
    fn linear_ramp_is_reproduced_in_band() {
        let t = Terrain::flat(16, 16, 10.0, 0.0).unwrap();
        let depth = (0..256).map(|k| 1.0 + 0.01 * t.cell_center(k % 16, k / 16).0).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let solver = Solver::new(t, s, PhysicalParams::default(), config()).unwrap();
        let nested = NestedSolver::new(solver, vec![window(4, 4, 4, 4)], NestingConfig { two_way: false }).unwrap();
        let g = &nested.grids()[0];
        let ft = g.fine().terrain();
        for j in 0..ft.ny() {
            for i in 0..ft.nx() {
                if g.is_band(i, j) {
                    let x = ft.cell_center(i, j).0;
                    let h = g.fine().state().depth[ft.idx(i, j)];
                    assert!((h - (1.0 + 0.01 * x)).abs() < 1e-12, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn thin_films_survive_window_setup() {
        let t = Terrain::flat(16, 16, 10.0, 0.0).unwrap();
        let depth = (0..256).map(|k| if k % 3 == 0 { 4e-7 } else { 0.0 }).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let solver = Solver::new(t, s, PhysicalParams::default(), config()).unwrap();
        let before = solver.volume();
        let nested = NestedSolver::new(solver, vec![window(4, 4, 6, 2)], NestingConfig::default()).unwrap();
        assert!((nested.total_volume() - before).abs() <= 1e-15 * before.max(1.0));
        assert!((nested.fine_volume() - 12.0 * 4e-7 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn restriction_averages_checkerboard() {
        let t = Terrain::flat(8, 8, 10.0, 0.0).unwrap();
        let s = FlowState::still_water(&t, 1.0);
        let coarse = Solver::new(t, s, PhysicalParams::default(), config()).unwrap();
        let mut nested = NestedSolver::new(coarse, vec![window(2, 2, 2, 2)], NestingConfig::default()).unwrap();
        let g = &mut nested.grids[0];
        let ft = g.fine.terrain().clone();
        g.fine.overwrite_cells(|s| {
            for j in 0..ft.ny() {
                for i in 0..ft.nx() {
                    s.depth[ft.idx(i, j)] = if (i + j) % 2 == 0 { 0.0 } else { 2.0 };
                }
            }
        });
        let fine_volume = g.interior_volume();
        restrict_feedback(&mut nested.grids[0], &mut nested.coarse);
        let c = nested.coarse.state();
        let window_volume: f64 = (2..4)
            .flat_map(|j| (2..4).map(move |i| i + 8 * j))
            .map(|k| c.depth[k])
            .sum::<f64>()
            * 100.0;
        assert!((c.depth[2 + 8 * 2] - 1.0).abs() < 1e-15);
        assert!((window_volume - fine_volume).abs() < 1e-12);
    }

    #[test]
    fn lake_at_rest_stays_at_rest() {
        let t = seeded_bathymetry(32, 32, 20.0, 4, 5.0).unwrap();
        let s = FlowState::still_water(&t, 0.5);
        let coarse = Solver::new(t, s.clone(), PhysicalParams::default(), config()).unwrap();
        let mut nested = NestedSolver::new(coarse, vec![window(8, 8, 12, 4)], NestingConfig::default()).unwrap();
        for _ in 0..20 {
            nested.coupled_step().unwrap();
        }
        let eps = 1e-6;
        assert!(crate::grid::max_speed(nested.coarse().state(), eps) < 1e-10);
        assert!(crate::grid::max_speed(nested.grids()[0].fine().state(), eps) < 1e-10);
        let dh = nested.coarse().state().depth.iter().zip(&s.depth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dh < 1e-12, "{dh}");
    }

    #[test]
    fn dry_window_matches_plain_run() {
        let t = Terrain::from_fn(32, 16, 10.0, |x, _| if x > 200.0 { 5.0 } else { 0.0 }).unwrap();
        let depth = (0..512).map(|k| if k % 32 < 6 { 2.0 } else { 0.0 }).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let mk = || Solver::new(t.clone(), s.clone(), PhysicalParams::default(), config()).unwrap();
        let mut nested = NestedSolver::new(mk(), vec![window(24, 4, 6, 4)], NestingConfig::default()).unwrap();
        let mut plain = mk();
        for _ in 0..30 {
            nested.coupled_step().unwrap();
            plain.step().unwrap();
        }
        assert_eq!(nested.coarse().state(), plain.state());
    }

    #[test]
    fn unit_ratio_tracks_coarse() {
        let t = seeded_bathymetry(32, 32, 10.0, 9, 2.0).unwrap();
        let depth = (0..1024).map(|k| if k % 32 < 10 { 4.0 - t.bed()[k] } else { (1.0 - t.bed()[k]).max(0.0) }).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let mk = || Solver::new(t.clone(), s.clone(), PhysicalParams::default(), config()).unwrap();
        let mut nested = NestedSolver::new(mk(), vec![window(8, 8, 12, 1)], NestingConfig { two_way: false }).unwrap();
        let mut plain = mk();
        for _ in 0..20 {
            nested.coupled_step().unwrap();
            plain.step().unwrap();
        }
        let g = &nested.grids()[0];
        let ft = g.fine().terrain();
        let mut worst: f64 = 0.0;
        for j in 0..12 {
            for i in 0..12 {
                let hf = g.fine().state().depth[ft.idx(i + BAND, j + BAND)];
                let hc = plain.state().depth[t.idx(i + 8, j + 8)];
                worst = worst.max((hf - hc).abs());
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn coupled_mass_is_conserved() {
        let t = seeded_bathymetry(48, 48, 50.0, 2, 5.0).unwrap();
        let depth = (0..48 * 48).map(|k| if k % 48 < 8 { 9.0 - t.bed()[k] } else { (-1.0 - t.bed()[k]).max(0.0) }).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let coarse = Solver::new(t, s, PhysicalParams::default(), config()).unwrap();
        let mut nested = NestedSolver::new(coarse, vec![window(12, 16, 12, 4)], NestingConfig::default()).unwrap();
        let v0 = nested.total_volume();
        let mut fine_steps = 0;
        for _ in 0..60 {
            fine_steps += nested.coupled_step().unwrap().substeps[0];
        }
        assert!(fine_steps >= 60);
        let drift = ((nested.total_volume() - v0) / v0).abs();
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn fine_bed_deviation_is_measured() {
        let t = Terrain::flat(16, 16, 10.0, 0.0).unwrap();
        let mut w = window(4, 4, 2, 2);
        w.fine_bed = Some(vec![1.0; 16]);
        let fine = build_fine_terrain(&t, &w).unwrap();
        assert!((bed_deviation(&t, &fine, &w) - 1.0).abs() < 1e-15);
        w.fine_bed = None;
        let fine = build_fine_terrain(&t, &w).unwrap();
        assert_eq!(bed_deviation(&t, &fine, &w), 0.0);
    }
}
