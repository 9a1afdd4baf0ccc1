//! Right-hand-side forces of the momentum equations and the mass sources.
//!
//! All accelerations are specific forces [m/s^2]. The per-term functions
//! are the reference definitions; [`assemble_forces`] evaluates the same
//! formulas for every cell of the active blocks.

use serde::{Deserialize, Serialize};

use crate::block::{BlockLayout, BlockMask, Dispatch, Shared, StageKind};
use crate::error::{FloodError, Result};
use crate::grid::{PhysicalParams, SourceField, StateView, Terrain, WindForcing};
use crate::series::Series;

/// Switches for the individual force terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceTerms {
    pub surface: bool,
    pub friction: bool,
    pub viscosity: bool,
    pub coriolis: bool,
    pub wind: bool,
    pub source_exchange: bool,
}

impl Default for ForceTerms {
    fn default() -> Self {
        ForceTerms::all()
    }
}

impl ForceTerms {
    pub fn all() -> Self {
        ForceTerms {
            surface: true,
            friction: true,
            viscosity: true,
            coriolis: true,
            wind: true,
            source_exchange: true,
        }
    }

    pub fn none() -> Self {
        ForceTerms {
            surface: false,
            friction: false,
            viscosity: false,
            coriolis: false,
            wind: false,
            source_exchange: false,
        }
    }
}

/// Per-cell forces for one state.
///
/// `fx, fy` is the full acceleration. The stepper needs some parts on their
/// own: the free-surface term (its conservative form is carried by the flux
/// stage), the explicit body forces, and the friction coefficient for the
/// semi-implicit friction update.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceField {
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    /// `-g grad(eta)`.
    pub surf_x: Vec<f64>,
    pub surf_y: Vec<f64>,
    /// Viscous + Coriolis + wind.
    pub body_x: Vec<f64>,
    pub body_y: Vec<f64>,
    /// Hydraulic friction coefficient `lambda = 2 g n^2 / H^(4/3)`; 0 when dry.
    pub lambda: Vec<f64>,
    /// Effective source density [m/s].
    pub sigma: Vec<f64>,
    /// Momentum carried in by the source water, `sigma * V` [m^2/s^2].
    pub sv_x: Vec<f64>,
    pub sv_y: Vec<f64>,
}

impl ForceField {
    pub fn zeros(n: usize) -> Self {
        ForceField {
            fx: vec![0.0; n],
            fy: vec![0.0; n],
            surf_x: vec![0.0; n],
            surf_y: vec![0.0; n],
            body_x: vec![0.0; n],
            body_y: vec![0.0; n],
            lambda: vec![0.0; n],
            sigma: vec![0.0; n],
            sv_x: vec![0.0; n],
            sv_y: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.fx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fx.is_empty()
    }
}

/// `lambda = 2 g n^2 / H^(4/3)`.
#[inline]
pub fn hydraulic_friction(depth: f64, manning: f64, gravity: f64) -> f64 {
    2.0 * gravity * manning * manning / depth.powf(4.0 / 3.0)
}

/// Bottom friction `-(lambda/2) U |U|` for a wet cell.
pub fn bottom_friction(u: (f64, f64), depth: f64, manning: f64, params: &PhysicalParams) -> (f64, f64) {
    let lambda = hydraulic_friction(depth, manning, params.gravity);
    let speed = (u.0 * u.0 + u.1 * u.1).sqrt();
    (-0.5 * lambda * u.0 * speed, -0.5 * lambda * u.1 * speed)
}

/// f-plane Coriolis force `2 [U x Omega]` with vertical `Omega`.
#[inline]
pub fn coriolis_force(u: (f64, f64), params: &PhysicalParams) -> (f64, f64) {
    (2.0 * u.1 * params.omega_z, -2.0 * u.0 * params.omega_z)
}

/// Wind stress `C_a rho_a / (rho H) (W - U) |W - U|` for wind `w`.
#[inline]
pub fn wind_stress(u: (f64, f64), depth: f64, w: (f64, f64), params: &PhysicalParams) -> (f64, f64) {
    let (rx, ry) = (w.0 - u.0, w.1 - u.1);
    let rel = (rx * rx + ry * ry).sqrt();
    let c = params.wind_drag * params.air_density / (params.water_density * depth);
    (c * rx * rel, c * ry * rel)
}

/// Wind stress with the wind record sampled at time `t`.
pub fn wind_force(
    u: (f64, f64),
    depth: f64,
    wind: &WindForcing,
    t: f64,
    params: &PhysicalParams,
) -> (f64, f64) {
    wind_stress(u, depth, wind.at(t), params)
}

/// `nu * laplacian(U)` with the 5-point stencil. Dry or out-of-grid
/// neighbours take the centre value.
pub fn viscous_force(
    state: StateView<'_>,
    params: &PhysicalParams,
    terrain: &Terrain,
    i: usize,
    j: usize,
) -> (f64, f64) {
    let nx = terrain.nx();
    let ny = terrain.ny();
    let k = terrain.idx(i, j);
    viscous_at(state, params, nx, ny, terrain.h(), k, i, j)
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn viscous_at(
    state: StateView<'_>,
    params: &PhysicalParams,
    nx: usize,
    ny: usize,
    h: f64,
    k: usize,
    i: usize,
    j: usize,
) -> (f64, f64) {
    let eps = params.dry_eps;
    let uc = state.velocity(k, eps);
    let pick = |cond: bool, kk: usize| -> (f64, f64) {
        if cond && state.depth[kk] > eps {
            state.velocity(kk, eps)
        } else {
            uc
        }
    };
    let e = pick(i + 1 < nx, k + 1);
    let w = pick(i > 0, k.wrapping_sub(1));
    let n = pick(j + 1 < ny, k + nx);
    let s = pick(j > 0, k.wrapping_sub(nx));
    let c = params.viscosity / (h * h);
    (
        c * (e.0 + w.0 + n.0 + s.0 - 4.0 * uc.0),
        c * (e.1 + w.1 + n.1 + s.1 - 4.0 * uc.1),
    )
}

/// `-g grad(eta)` by central differences, one-sided next to dry cells and
/// the domain edge, zero where both neighbours along an axis are unusable.
pub fn surface_gradient_force(
    state: StateView<'_>,
    terrain: &Terrain,
    params: &PhysicalParams,
    i: usize,
    j: usize,
) -> (f64, f64) {
    let k = terrain.idx(i, j);
    surface_gradient_at(state, terrain.bed(), params, terrain.nx(), terrain.ny(), terrain.h(), k, i, j)
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn surface_gradient_at(
    state: StateView<'_>,
    bed: &[f64],
    params: &PhysicalParams,
    nx: usize,
    ny: usize,
    h: f64,
    k: usize,
    i: usize,
    j: usize,
) -> (f64, f64) {
    let eps = params.dry_eps;
    let eta = |kk: usize| state.depth[kk] + bed[kk];
    let wet = |cond: bool, kk: usize| cond && state.depth[kk] > eps;
    let ec = eta(k);
    let axis = |lo_ok: bool, lo: usize, hi_ok: bool, hi: usize| -> f64 {
        match (wet(lo_ok, lo), wet(hi_ok, hi)) {
            (true, true) => (eta(hi) - eta(lo)) / (2.0 * h),
            (false, true) => (eta(hi) - ec) / h,
            (true, false) => (ec - eta(lo)) / h,
            (false, false) => 0.0,
        }
    };
    let gx = axis(i > 0, k.wrapping_sub(1), i + 1 < nx, k + 1);
    let gy = axis(j > 0, k.wrapping_sub(nx), j + 1 < ny, k + nx);
    (-params.gravity * gx, -params.gravity * gy)
}

/// What a source injects.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    /// Discharge hydrograph `Q(t)` [m^3/s] shared evenly by the cells.
    Discharge(Series),
    /// Rainfall (or a uniform drain when negative) `sigma(t)` [m/s] per cell.
    Rain(Series),
}

/// A source or drain attached to a set of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub cells: Vec<(usize, usize)>,
    pub kind: SourceKind,
    /// Velocity of the injected water [m/s]; ignored for rainfall.
    pub velocity: (f64, f64),
}

impl SourceSpec {
    pub fn discharge(cells: Vec<(usize, usize)>, hydrograph: Series) -> Self {
        SourceSpec {
            cells,
            kind: SourceKind::Discharge(hydrograph),
            velocity: (0.0, 0.0),
        }
    }

    pub fn rain(cells: Vec<(usize, usize)>, rate: Series) -> Self {
        SourceSpec {
            cells,
            kind: SourceKind::Rain(rate),
            velocity: (0.0, 0.0),
        }
    }

    /// All cells of the inclusive rectangle `(i0, j0)..=(i1, j1)`.
    pub fn region(i0: usize, j0: usize, i1: usize, j1: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                cells.push((i, j));
            }
        }
        cells
    }

    pub fn validate(&self, terrain: &Terrain) -> Result<()> {
        if self.cells.is_empty() {
            return Err(FloodError::config("source has no cells"));
        }
        for &(i, j) in &self.cells {
            if i >= terrain.nx() || j >= terrain.ny() {
                return Err(FloodError::config(format!(
                    "source cell ({i}, {j}) outside {}x{} grid",
                    terrain.nx(),
                    terrain.ny()
                )));
            }
        }
        if !self.velocity.0.is_finite() || !self.velocity.1.is_finite() {
            return Err(FloodError::config("source velocity must be finite"));
        }
        Ok(())
    }
}

/// Evaluate all sources at time `t` into a per-cell field.
///
/// Overlapping sources add their densities; the source velocity of a cell
/// is the density-weighted mean. Drains are not clamped here.
pub fn source_terms(sources: &[SourceSpec], t: f64, terrain: &Terrain) -> Result<SourceField> {
    let mut field = SourceField::empty(terrain.n_cells());
    fill_source_terms(sources, t, terrain, &mut field)?;
    Ok(field)
}

pub(crate) fn fill_source_terms(
    sources: &[SourceSpec],
    t: f64,
    terrain: &Terrain,
    field: &mut SourceField,
) -> Result<()> {
    for k in 0..field.len() {
        if field.index_q[k] != 0 {
            field.sigma[k] = 0.0;
            field.vx[k] = 0.0;
            field.vy[k] = 0.0;
            field.index_q[k] = 0;
        }
    }
    if sources.is_empty() {
        return Ok(());
    }
    let area = terrain.cell_area();
    // accumulate sigma * V in vx/vy, normalise afterwards
    for src in sources {
        src.validate(terrain)?;
        let (sigma, v) = match &src.kind {
            SourceKind::Discharge(q) => (q.at(t) / (src.cells.len() as f64 * area), src.velocity),
            SourceKind::Rain(rate) => (rate.at(t), (0.0, 0.0)),
        };
        for &(i, j) in &src.cells {
            let k = terrain.idx(i, j);
            field.sigma[k] += sigma;
            field.vx[k] += sigma * v.0;
            field.vy[k] += sigma * v.1;
            field.index_q[k] = 1;
        }
    }
    for k in 0..field.len() {
        if field.index_q[k] != 0 {
            let s = field.sigma[k];
            if s != 0.0 {
                field.vx[k] /= s;
                field.vy[k] /= s;
            } else {
                field.vx[k] = 0.0;
                field.vy[k] = 0.0;
                field.index_q[k] = 0;
            }
        }
    }
    Ok(())
}

/// Inputs shared by every cell of one force evaluation.
#[derive(Clone, Copy)]
pub struct ForceInputs<'a> {
    pub state: StateView<'a>,
    pub terrain: &'a Terrain,
    pub params: &'a PhysicalParams,
    pub terms: ForceTerms,
    pub wind: (f64, f64),
    pub sources: &'a SourceField,
}

/// Forces for every cell (no block skipping).
pub fn assemble_forces(
    state: StateView<'_>,
    terrain: &Terrain,
    params: &PhysicalParams,
    terms: ForceTerms,
    wind: &WindForcing,
    sources: &SourceField,
    t: f64,
) -> ForceField {
    let layout = BlockLayout::new(terrain.nx(), terrain.ny(), crate::block::DEFAULT_BLOCK_SIZE);
    let mask = BlockMask::empty(layout);
    let mut out = ForceField::zeros(terrain.n_cells());
    let inputs = ForceInputs {
        state,
        terrain,
        params,
        terms,
        wind: wind.at(t),
        sources,
    };
    assemble_forces_into(&inputs, Dispatch::new(&mask, false), &mut out);
    out
}

/// Kernels K2/K5: evaluate forces on the blocks with interior water.
pub fn assemble_forces_into(inp: &ForceInputs<'_>, dispatch: Dispatch<'_>, out: &mut ForceField) {
    let terrain = inp.terrain;
    let (nx, ny, h) = (terrain.nx(), terrain.ny(), terrain.h());
    let layout = dispatch.layout();
    debug_assert_eq!((layout.nx, layout.ny), (nx, ny));

    let fx = Shared::new(&mut out.fx);
    let fy = Shared::new(&mut out.fy);
    let sx = Shared::new(&mut out.surf_x);
    let sy = Shared::new(&mut out.surf_y);
    let bx = Shared::new(&mut out.body_x);
    let by = Shared::new(&mut out.body_y);
    let lam = Shared::new(&mut out.lambda);
    let sig = Shared::new(&mut out.sigma);
    let svx = Shared::new(&mut out.sv_x);
    let svy = Shared::new(&mut out.sv_y);

    let p = inp.params;
    let terms = inp.terms;
    let eps = p.dry_eps;
    let st = inp.state;
    let src = inp.sources;
    let bed = terrain.bed();

    dispatch.for_each(StageKind::Lagrangian, |ib| {
        let (ir, jr) = layout.cells(ib);
        for j in jr {
            for i in ir.clone() {
                let k = i + j * nx;
                let depth = st.depth[k];
                let sigma = src.sigma[k];
                let v = (src.vx[k], src.vy[k]);
                let (sv_x, sv_y) = if terms.source_exchange {
                    (sigma * v.0, sigma * v.1)
                } else {
                    (0.0, 0.0)
                };
                // SAFETY: each cell belongs to exactly one block.
                unsafe {
                    // a stored zero sigma always comes with zero sigma * V,
                    // so source-free cells need no store
                    if sigma != 0.0 || sig.get(k) != 0.0 {
                        sig.set(k, sigma);
                        svx.set(k, sv_x);
                        svy.set(k, sv_y);
                    }
                }
                if depth <= eps {
                    // SAFETY: as above.
                    unsafe {
                        fx.set(k, 0.0);
                        fy.set(k, 0.0);
                        sx.set(k, 0.0);
                        sy.set(k, 0.0);
                        bx.set(k, 0.0);
                        by.set(k, 0.0);
                        lam.set(k, 0.0);
                    }
                    continue;
                }
                let u = st.velocity(k, eps);

                let surf = if terms.surface {
                    surface_gradient_at(st, bed, p, nx, ny, h, k, i, j)
                } else {
                    (0.0, 0.0)
                };
                let visc = if terms.viscosity && p.viscosity != 0.0 {
                    viscous_at(st, p, nx, ny, h, k, i, j)
                } else {
                    (0.0, 0.0)
                };
                let cor = if terms.coriolis { coriolis_force(u, p) } else { (0.0, 0.0) };
                let wind = if terms.wind {
                    wind_stress(u, depth, inp.wind, p)
                } else {
                    (0.0, 0.0)
                };
                let lambda = if terms.friction {
                    hydraulic_friction(depth, p.manning.at(k), p.gravity)
                } else {
                    0.0
                };
                let speed = (u.0 * u.0 + u.1 * u.1).sqrt();
                let fric = (-0.5 * lambda * u.0 * speed, -0.5 * lambda * u.1 * speed);

                let exch = if terms.source_exchange {
                    (sigma / depth * (v.0 - u.0), sigma / depth * (v.1 - u.1))
                } else {
                    (0.0, 0.0)
                };

                let body = (visc.0 + cor.0 + wind.0, visc.1 + cor.1 + wind.1);
                let total = (
                    surf.0 + fric.0 + body.0 + exch.0,
                    surf.1 + fric.1 + body.1 + exch.1,
                );
                // SAFETY: as above.
                unsafe {
                    fx.set(k, total.0);
                    fy.set(k, total.1);
                    sx.set(k, surf.0);
                    sy.set(k, surf.1);
                    bx.set(k, body.0);
                    by.set(k, body.1);
                    lam.set(k, lambda);
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FlowState, Manning};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> PhysicalParams {
        PhysicalParams {
            gravity: 9.81,
            manning: Manning::Uniform(0.02),
            ..PhysicalParams::default()
        }
    }

    #[test]
    fn friction_examples() {
        let p = params();
        assert_eq!(bottom_friction((0.0, 0.0), 3.0, 0.02, &p), (0.0, 0.0));
        let f = bottom_friction((1.0, 2.0), 3.0, 0.0, &p);
        assert_eq!(f, (-0.0, -0.0));
        // lambda = 2 * 9.81 * 4e-4 / 1 = 7.848e-3
        assert_relative_eq!(hydraulic_friction(1.0, 0.02, 9.81), 7.848e-3, max_relative = 1e-12);
        let f = bottom_friction((1.0, 0.0), 1.0, 0.02, &p);
        assert_relative_eq!(f.0, -3.924e-3, max_relative = 1e-12);
        assert_eq!(f.1, 0.0);
    }

    #[test]
    fn coriolis_examples() {
        let mut p = params();
        p.omega_z = 0.0;
        assert_eq!(coriolis_force((3.0, -1.0), &p), (-0.0, -0.0));
        p.omega_z = 7.292e-5;
        assert_eq!(coriolis_force((0.0, 0.0), &p), (0.0, -0.0));
        let f = coriolis_force((1.0, 0.0), &p);
        assert_eq!(f.0, 0.0);
        assert_relative_eq!(f.1, -1.4584e-4, max_relative = 1e-12);
    }

    #[test]
    fn wind_examples() {
        let mut p = params();
        let w = WindForcing::Constant { wx: 5.0, wy: 0.0 };
        assert_eq!(wind_force((5.0, 0.0), 2.0, &w, 0.0, &p), (0.0, 0.0));
        p.wind_drag = 0.0;
        assert_eq!(wind_force((0.0, 0.0), 2.0, &w, 0.0, &p), (0.0, 0.0));
        p.wind_drag = 1e-3;
        p.air_density = 1.2;
        p.water_density = 1000.0;
        let f = wind_force((0.0, 0.0), 2.0, &w, 0.0, &p);
        assert_relative_eq!(f.0, 1.5e-5, max_relative = 1e-12);
        assert_eq!(f.1, 0.0);
    }

    #[test]
    fn wind_series_is_interpolated() {
        let p = params();
        let w = WindForcing::series(vec![(0.0, 0.0, 0.0), (10.0, 10.0, 0.0)]).unwrap();
        let a = wind_force((0.0, 0.0), 2.0, &w, 5.0, &p);
        let b = wind_stress((0.0, 0.0), 2.0, (5.0, 0.0), &p);
        assert_eq!(a, b);
    }

    fn grid3(depth: [f64; 9], ux: [f64; 9]) -> (Terrain, FlowState) {
        let t = Terrain::flat(3, 3, 1.0, 0.0).unwrap();
        let mut s = FlowState::from_depth(&t, depth.to_vec()).unwrap();
        for k in 0..9 {
            s.mom_x[k] = ux[k] * depth[k];
        }
        (t, s)
    }

    #[test]
    fn viscous_examples() {
        let mut p = params();
        p.viscosity = 1.0;
        let (t, s) = grid3([1.0; 9], [2.0; 9]);
        assert_eq!(viscous_force(s.view(), &p, &t, 1, 1), (0.0, 0.0));

        let (t, s) = grid3([1.0; 9], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(viscous_force(s.view(), &p, &t, 1, 1), (4.0, 0.0));
        p.viscosity = 0.0;
        assert_eq!(viscous_force(s.view(), &p, &t, 1, 1), (0.0, 0.0));
    }

    #[test]
    fn viscous_dry_neighbour_takes_centre_value() {
        let mut p = params();
        p.viscosity = 1.0;
        // east neighbour dry: contributes the centre value instead of its own
        let (t, s) = grid3(
            [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0],
            [0.0, 1.0, 0.0, 1.0, 0.0, 9.0, 0.0, 1.0, 0.0],
        );
        assert_eq!(viscous_force(s.view(), &p, &t, 1, 1), (3.0, 0.0));
    }

    #[test]
    fn surface_gradient_examples() {
        let p = params();
        // lake at rest over a bumpy bed
        let t = Terrain::from_fn(5, 5, 50.0, |x, y| (x * 0.01).sin() + 0.1 * y / 50.0).unwrap();
        let s = FlowState::still_water(&t, 10.0);
        for j in 0..5 {
            for i in 0..5 {
                let f = surface_gradient_force(s.view(), &t, &p, i, j);
                assert!(f.0.abs() < 1e-12 && f.1.abs() < 1e-12, "{f:?}");
            }
        }

        // eta rising 0.1 m per 50 m in x
        let t = Terrain::flat(5, 1, 50.0, 0.0).unwrap();
        let depth: Vec<f64> = (0..5).map(|i| 1.0 + 0.1 * i as f64).collect();
        let s = FlowState::from_depth(&t, depth).unwrap();
        let f = surface_gradient_force(s.view(), &t, &p, 2, 0);
        assert_relative_eq!(f.0, -0.01962, max_relative = 1e-10);
        assert_eq!(f.1, -0.0);
    }

    #[test]
    fn surface_gradient_dry_bank_is_one_sided() {
        let p = params();
        // wet cells at 0..2 with eta = 1, dry bank at i = 3 higher than eta
        let t = Terrain::new(4, 1, 10.0, (0.0, 0.0), vec![0.0, 0.2, 0.5, 3.0]).unwrap();
        let s = FlowState::still_water(&t, 1.0);
        assert_eq!(s.depth[3], 0.0);
        let f = surface_gradient_force(s.view(), &t, &p, 2, 0);
        assert_eq!(f.0, -0.0);
    }

    #[test]
    fn source_examples() {
        let t = Terrain::flat(20, 20, 50.0, 0.0).unwrap();
        let f = source_terms(&[], 0.0, &t).unwrap();
        assert!(f.sigma.iter().all(|&s| s == 0.0));
        assert!(f.index_q.iter().all(|&q| q == 0));

        let q = Series::constant(100_000.0);
        let f = source_terms(&[SourceSpec::discharge(vec![(3, 4)], q.clone())], 0.0, &t).unwrap();
        assert_eq!(f.sigma[t.idx(3, 4)], 40.0);
        assert_eq!(f.index_q.iter().map(|&q| q as usize).sum::<usize>(), 1);

        let cells = SourceSpec::region(0, 0, 9, 9);
        let f = source_terms(&[SourceSpec::discharge(cells, q.clone())], 0.0, &t).unwrap();
        assert_relative_eq!(f.sigma[t.idx(5, 5)], 0.4, max_relative = 1e-12);
        assert_relative_eq!(f.total_rate(t.cell_area()), 100_000.0, max_relative = 1e-12);

        let bad = SourceSpec::discharge(vec![(20, 0)], q);
        assert!(matches!(source_terms(&[bad], 0.0, &t), Err(FloodError::Config(_))));
    }

    #[test]
    fn source_velocity_is_density_weighted() {
        let t = Terrain::flat(4, 4, 1.0, 0.0).unwrap();
        let mut a = SourceSpec::rain(vec![(1, 1)], Series::constant(1.0));
        a.velocity = (9.0, 9.0); // ignored for rain
        let mut b = SourceSpec::discharge(vec![(1, 1)], Series::constant(3.0));
        b.velocity = (4.0, -4.0);
        let f = source_terms(&[a, b], 0.0, &t).unwrap();
        let k = t.idx(1, 1);
        assert_eq!(f.sigma[k], 4.0);
        assert_eq!((f.vx[k], f.vy[k]), (3.0, -3.0));
    }

    fn patch() -> (Terrain, FlowState, SourceField, PhysicalParams, WindForcing) {
        let t = Terrain::from_fn(5, 5, 2.0, |x, y| 0.05 * x - 0.03 * y + 0.01 * x * y).unwrap();
        let mut s = FlowState::dry(&t);
        for k in 0..25 {
            s.depth[k] = 1.0 + 0.1 * (k as f64).sin();
            s.mom_x[k] = s.depth[k] * (0.3 + 0.05 * k as f64);
            s.mom_y[k] = s.depth[k] * (-0.2 + 0.02 * (k as f64).cos());
        }
        let mut src = SourceField::empty(25);
        src.sigma[12] = 0.01;
        src.vx[12] = 1.0;
        src.index_q[12] = 1;
        let p = PhysicalParams {
            viscosity: 0.5,
            omega_z: 1e-4,
            ..params()
        };
        (t, s, src, p, WindForcing::Constant { wx: 7.0, wy: 2.0 })
    }

    #[test]
    fn assembled_forces_are_sum_of_terms() {
        let (t, s, src, p, w) = patch();
        let full = assemble_forces(s.view(), &t, &p, ForceTerms::all(), &w, &src, 0.0);
        for j in 1..4 {
            for i in 1..4 {
                let k = t.idx(i, j);
                let u = s.view().velocity(k, p.dry_eps);
                let h = s.depth[k];
                let parts = [
                    surface_gradient_force(s.view(), &t, &p, i, j),
                    bottom_friction(u, h, 0.02, &p),
                    viscous_force(s.view(), &p, &t, i, j),
                    coriolis_force(u, &p),
                    wind_force(u, h, &w, 0.0, &p),
                    (src.sigma[k] / h * (src.vx[k] - u.0), src.sigma[k] / h * (src.vy[k] - u.1)),
                ];
                let sum = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
                assert_relative_eq!(full.fx[k], sum.0, max_relative = 1e-12, epsilon = 1e-15);
                assert_relative_eq!(full.fy[k], sum.1, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_term_matches_standalone_op() {
        let (t, s, src, p, w) = patch();
        let (i, j) = (2, 3);
        let k = t.idx(i, j);
        let u = s.view().velocity(k, p.dry_eps);
        let only = |f: fn(&mut ForceTerms)| {
            let mut terms = ForceTerms::none();
            f(&mut terms);
            let ff = assemble_forces(s.view(), &t, &p, terms, &w, &src, 0.0);
            (ff.fx[k], ff.fy[k])
        };
        assert_eq!(only(|t| t.surface = true), surface_gradient_force(s.view(), &t, &p, i, j));
        assert_eq!(only(|t| t.viscosity = true), viscous_force(s.view(), &p, &t, i, j));
        assert_eq!(only(|t| t.coriolis = true), coriolis_force(u, &p));
        assert_eq!(only(|t| t.wind = true), wind_force(u, s.depth[k], &w, 0.0, &p));
        assert_eq!(only(|t| t.friction = true), bottom_friction(u, s.depth[k], 0.02, &p));
    }

    #[test]
    fn disabling_a_term_removes_exactly_that_term() {
        let (t, s, src, p, w) = patch();
        let all = assemble_forces(s.view(), &t, &p, ForceTerms::all(), &w, &src, 0.0);
        let mut no_cor = ForceTerms::all();
        no_cor.coriolis = false;
        let part = assemble_forces(s.view(), &t, &p, no_cor, &w, &src, 0.0);
        for k in 0..25 {
            let u = s.view().velocity(k, p.dry_eps);
            let c = coriolis_force(u, &p);
            assert_relative_eq!(all.fx[k] - part.fx[k], c.0, epsilon = 1e-14);
            assert_relative_eq!(all.fy[k] - part.fy[k], c.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn still_lake_has_zero_forces() {
        let t = Terrain::from_fn(8, 8, 25.0, |x, y| 2.0 * (x / 40.0).cos() * (y / 30.0).sin()).unwrap();
        let s = FlowState::still_water(&t, 1.0);
        let p = params();
        let src = SourceField::empty(64);
        let f = assemble_forces(s.view(), &t, &p, ForceTerms::all(), &WindForcing::default(), &src, 0.0);
        for k in 0..64 {
            assert!(f.fx[k].abs() < 1e-13 && f.fy[k].abs() < 1e-13);
        }
    }

    #[test]
    fn dry_cells_get_zero_or_source_only() {
        let t = Terrain::flat(4, 4, 1.0, 0.0).unwrap();
        let s = FlowState::dry(&t);
        let mut src = SourceField::empty(16);
        src.sigma[5] = 2.0;
        src.vx[5] = 1.5;
        src.index_q[5] = 1;
        let f = assemble_forces(s.view(), &t, &params(), ForceTerms::all(), &WindForcing::default(), &src, 0.0);
        for k in 0..16 {
            assert_eq!((f.fx[k], f.fy[k], f.lambda[k]), (0.0, 0.0, 0.0));
        }
        assert_eq!(f.sigma[5], 2.0);
        assert_eq!(f.sv_x[5], 3.0);
    }

    proptest! {
        #[test]
        fn friction_opposes_motion(ux in -10.0f64..10.0, uy in -10.0f64..10.0, h in 0.01f64..50.0, n in 0.0f64..0.1) {
            let p = params();
            let f = bottom_friction((ux, uy), h, n, &p);
            prop_assert!(f.0 * ux + f.1 * uy <= 0.0);
        }

        #[test]
        fn coriolis_does_no_work(ux in -10.0f64..10.0, uy in -10.0f64..10.0, om in -1e-3f64..1e-3) {
            let mut p = params();
            p.omega_z = om;
            let f = coriolis_force((ux, uy), &p);
            let scale = 2.0 * om.abs() * (ux * ux + uy * uy);
            prop_assert!((f.0 * ux + f.1 * uy).abs() <= 1e-15 * scale.max(1e-300));
        }

        #[test]
        fn wind_pushes_along_relative_wind(ux in -5.0f64..5.0, uy in -5.0f64..5.0,
                                           wx in -30.0f64..30.0, wy in -30.0f64..30.0, h in 0.01f64..20.0) {
            let p = params();
            prop_assume!(wx.hypot(wy) > ux.hypot(uy));
            let f = wind_stress((ux, uy), h, (wx, wy), &p);
            prop_assert!(f.0 * (wx - ux) + f.1 * (wy - uy) >= 0.0);
        }
    }
}
