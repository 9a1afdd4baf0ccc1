//! Time integration.
//!
//! One step runs eight kernels in a fixed order:
//!
//! | kernel | work |
//! |--------|------|
//! | K1 | block activity mask |
//! | K2 | forces at `t_n` |
//! | K3 | CFL time step |
//! | K4 | Lagrangian predictor to `t_n + tau/2` |
//! | K5 | forces on the half-step state |
//! | K6 | Lagrangian corrector: provisional `Ht`, `HVt`, displacement `dr` |
//! | K7 | reconstruction, face fluxes and per-cell flux sums |
//! | K8 | conservative update, scratch reset |
//!
//! The free-surface force drives the particle velocities (and therefore the
//! time-centred face states) but is not added to `HVt`: the flux stage
//! carries hydrostatic pressure and bed slope in conservative,
//! well-balanced form.

mod boundary;
pub mod riemann;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use boundary::{ghost, Boundaries, BoundaryKind};
use riemann::{face_flux, minmod, FaceFlux, FaceState};

use crate::block::{compute_block_mask, BlockLayout, BlockMask, Dispatch, Shared, StageKind, DEFAULT_BLOCK_SIZE};
use crate::error::{FloodError, Result};
use crate::forcing::{assemble_forces_into, fill_source_terms, ForceField, ForceInputs, ForceTerms, SourceSpec};
use crate::grid::{FlowState, PhysicalParams, SourceField, StateView, Terrain, WindForcing};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimestepControl {
    /// Courant number `K`.
    pub courant: f64,
    pub dt_max: f64,
    /// Steps shorter than this abort the run.
    pub dt_min: f64,
}

impl Default for TimestepControl {
    fn default() -> Self {
        TimestepControl {
            courant: 0.5,
            dt_max: 60.0,
            dt_min: 1e-8,
        }
    }
}

impl TimestepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.courant > 0.0 && self.courant < 1.0) {
            return Err(FloodError::config(format!("courant number {} not in (0, 1)", self.courant)));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return Err(FloodError::config(format!(
                "need 0 < dt_min < dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        Ok(())
    }
}

pub const STAGE_NAMES: [&str; 8] = [
    "K1 block mask",
    "K2 forces",
    "K3 time step",
    "K4 predictor",
    "K5 half forces",
    "K6 corrector",
    "K7 flux",
    "K8 update",
];

/// Wall-clock seconds spent in each kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub secs: [f64; 8],
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.secs.iter().sum()
    }

    /// Per-kernel share of the total in percent.
    pub fn shares(&self) -> [f64; 8] {
        let total = self.total();
        let mut out = [0.0; 8];
        if total > 0.0 {
            for (o, s) in out.iter_mut().zip(self.secs) {
                *o = 100.0 * s / total;
            }
        }
        out
    }

    pub fn accumulate(&mut self, other: &StageTimings) {
        for (a, b) in self.secs.iter_mut().zip(other.secs) {
            *a += b;
        }
    }
}

/// Volume bookkeeping of a run [m^3].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MassLedger {
    pub initial: f64,
    /// Added by sources, removed by drains.
    pub sources: f64,
    /// Net inflow through open edges.
    pub boundary: f64,
    /// Added by clamping negative depths to zero.
    pub clamped: f64,
    /// Changes made from outside the integrator (grid coupling).
    pub external: f64,
}

impl MassLedger {
    pub fn expected(&self) -> f64 {
        self.initial + self.sources + self.boundary + self.clamped + self.external
    }

    /// `(current - expected) / scale` where `scale` is the larger of the
    /// expected volume and the total throughput.
    pub fn relative_imbalance(&self, current: f64) -> f64 {
        let scale = self
            .expected()
            .abs()
            .max(self.initial.abs() + self.sources.abs() + self.boundary.abs());
        if scale == 0.0 {
            current.abs()
        } else {
            (current - self.expected()) / scale
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SkipCounts {
    pub lagrangian: usize,
    pub flux: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    /// Time after the step.
    pub time: f64,
    pub dt: f64,
    pub timings: StageTimings,
    pub active_fraction: f64,
    pub skipped: SkipCounts,
}

/// Per-cell provisional fields of the Lagrangian stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianScratch {
    /// Half-step state, the input of K5.
    pub h_half: Vec<f64>,
    pub mh_x: Vec<f64>,
    pub mh_y: Vec<f64>,
    /// Half-step particle velocity.
    pub u_half_x: Vec<f64>,
    pub u_half_y: Vec<f64>,
    pub ht: Vec<f64>,
    pub hvt_x: Vec<f64>,
    pub hvt_y: Vec<f64>,
    /// Full-step particle displacement.
    pub dr_x: Vec<f64>,
    pub dr_y: Vec<f64>,
}

impl LagrangianScratch {
    pub fn new(n: usize) -> Self {
        LagrangianScratch {
            h_half: vec![0.0; n],
            mh_x: vec![0.0; n],
            mh_y: vec![0.0; n],
            u_half_x: vec![0.0; n],
            u_half_y: vec![0.0; n],
            ht: vec![0.0; n],
            hvt_x: vec![0.0; n],
            hvt_y: vec![0.0; n],
            dr_x: vec![0.0; n],
            dr_y: vec![0.0; n],
        }
    }

    pub fn half_state(&self) -> StateView<'_> {
        StateView {
            depth: &self.h_half,
            mom_x: &self.mh_x,
            mom_y: &self.mh_y,
        }
    }

    pub fn is_clear(&self) -> bool {
        [
            &self.h_half,
            &self.mh_x,
            &self.mh_y,
            &self.u_half_x,
            &self.u_half_y,
            &self.ht,
            &self.hvt_x,
            &self.hvt_y,
            &self.dr_x,
            &self.dr_y,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

/// Net flux into each cell, times `h` (so `H += tau/h * fh`).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub fh: Vec<f64>,
    pub fv_x: Vec<f64>,
    pub fv_y: Vec<f64>,
}

impl FluxField {
    pub fn new(n: usize) -> Self {
        FluxField {
            fh: vec![0.0; n],
            fv_x: vec![0.0; n],
            fv_y: vec![0.0; n],
        }
    }
}

/// Work arrays of the flux stage.
///
/// x-faces are indexed `i + j (nx + 1)` with face `i` on the west side of
/// cell `i`; y-faces `i + j nx` with face `j` on the south side of row `j`.
#[derive(Debug, Clone)]
pub struct FluxWork {
    /// Low and high face states of each cell in the current sweep.
    pub faces: Vec<(FaceState, FaceState)>,
    pub x: Vec<FaceFlux>,
    pub y: Vec<FaceFlux>,
    /// State after the first sweep.
    pub mid_depth: Vec<f64>,
    pub mid_x: Vec<f64>,
    pub mid_y: Vec<f64>,
}

impl FluxWork {
    pub fn new(nx: usize, ny: usize) -> Self {
        FluxWork {
            faces: vec![(FaceState::default(), FaceState::default()); nx * ny],
            x: vec![FaceFlux::ZERO; (nx + 1) * ny],
            y: vec![FaceFlux::ZERO; nx * (ny + 1)],
            mid_depth: vec![0.0; nx * ny],
            mid_x: vec![0.0; nx * ny],
            mid_y: vec![0.0; nx * ny],
        }
    }
}

/// What every stage needs besides its own inputs.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub terrain: &'a Terrain,
    pub params: &'a PhysicalParams,
    pub boundaries: Boundaries,
    pub dispatch: Dispatch<'a>,
}

/// A cell takes part in the Lagrangian stage: it holds water or a source.
#[inline]
fn lagrangian_cell(depth: &[f64], index_q: &[u8], eps: f64, k: usize) -> bool {
    depth[k] > eps || index_q[k] != 0
}

/// Kernel K3: `tau = min(dt_max, K h / max(U_s, U_p))` over wet cells.
pub fn compute_dt(
    state: &FlowState,
    forces: &ForceField,
    ctx: &StageContext<'_>,
    ctl: &TimestepControl,
) -> Result<f64> {
    let terrain = ctx.terrain;
    let (nx, h) = (terrain.nx(), terrain.h());
    let eps = ctx.params.dry_eps;
    let g = ctx.params.gravity;
    let layout = ctx.dispatch.layout();
    let view = state.view();

    let per_block = ctx.dispatch.map(StageKind::Lagrangian, |ib| {
        let (ir, jr) = layout.cells(ib);
        let mut smax = 0.0f64;
        for j in jr {
            for i in ir.clone() {
                let k = i + j * nx;
                let depth = view.depth[k];
                let (u, v) = view.velocity(k, eps);
                let c = (g * depth).sqrt();
                let us = (u.abs() + c).max(v.abs() + c);
                let (fx, fy) = (forces.fx[k], forces.fy[k]);
                let px = (u + fx.signum() * (h * fx.abs()).sqrt()).abs();
                let py = (v + fy.signum() * (h * fy.abs()).sqrt()).abs();
                let s = us.max(px.max(py));
                if depth > eps {
                    // NaN must survive the reduction
                    smax = if s.is_nan() { s } else { smax.max(s) };
                }
            }
        }
        smax
    });
    let smax = per_block
        .into_iter()
        .fold(0.0f64, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) });

    let tau = if smax == 0.0 {
        ctl.dt_max
    } else {
        ctl.dt_max.min(ctl.courant * h / smax)
    };
    if !(tau >= ctl.dt_min) {
        return Err(FloodError::Numerical {
            time: state.time,
            msg: format!("time step {tau:e} s below dt_min {:e} s (max signal speed {smax:e} m/s)", ctl.dt_min),
        });
    }
    Ok(tau)
}

/// Kernel K4: advance particles half a step with the forces at `t_n`.
///
/// Friction enters through the factor `1 / (1 + tau/2 * lambda/2 * |U'|)`.
pub fn lagrangian_predictor(
    state: &FlowState,
    forces: &ForceField,
    index_q: &[u8],
    tau: f64,
    ctx: &StageContext<'_>,
    lag: &mut LagrangianScratch,
) {
    let nx = ctx.terrain.nx();
    let eps = ctx.params.dry_eps;
    let layout = ctx.dispatch.layout();
    let half = 0.5 * tau;

    let h_half = Shared::new(&mut lag.h_half);
    let mh_x = Shared::new(&mut lag.mh_x);
    let mh_y = Shared::new(&mut lag.mh_y);
    let uh_x = Shared::new(&mut lag.u_half_x);
    let uh_y = Shared::new(&mut lag.u_half_y);

    ctx.dispatch.for_each(StageKind::Lagrangian, |ib| {
        let (ir, jr) = layout.cells(ib);
        for j in jr {
            for i in ir.clone() {
                let k = i + j * nx;
                let depth = state.depth[k];
                let active = lagrangian_cell(&state.depth, index_q, eps, k);

                let hh = (depth + half * forces.sigma[k]).max(0.0);
                let mx = state.mom_x[k]
                    + half * (depth * (forces.surf_x[k] + forces.body_x[k]) + forces.sv_x[k]);
                let my = state.mom_y[k]
                    + half * (depth * (forces.surf_y[k] + forces.body_y[k]) + forces.sv_y[k]);
                let (ux, uy) = if hh > eps { (mx / hh, my / hh) } else { (0.0, 0.0) };
                let damp = 1.0 + half * 0.5 * forces.lambda[k] * (ux * ux + uy * uy).sqrt();
                let (ux, uy) = (ux / damp, uy / damp);

                // SAFETY: each cell belongs to exactly one block.
                unsafe {
                    if active {
                        h_half.set(k, hh);
                        mh_x.set(k, hh * ux);
                        mh_y.set(k, hh * uy);
                        uh_x.set(k, ux);
                        uh_y.set(k, uy);
                    } else {
                        h_half.set(k, depth);
                        mh_x.set(k, 0.0);
                        mh_y.set(k, 0.0);
                        uh_x.set(k, 0.0);
                        uh_y.set(k, 0.0);
                    }
                }
            }
        }
    });
}

/// Mass bookkeeping of the corrector.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorrectorReport {
    /// `sum(tau * sigma)` over the step [m].
    pub source_depth: f64,
    /// Water added by clamping `Ht` at zero [m].
    pub clamped_depth: f64,
}

/// Kernel K6: full-step provisional depth, momentum and displacement.
pub fn lagrangian_corrector(
    state: &FlowState,
    forces_half: &ForceField,
    index_q: &[u8],
    tau: f64,
    ctx: &StageContext<'_>,
    lag: &mut LagrangianScratch,
) -> Result<CorrectorReport> {
    let nx = ctx.terrain.nx();
    let h = ctx.terrain.h();
    let eps = ctx.params.dry_eps;
    let layout = ctx.dispatch.layout();

    let ht = Shared::new(&mut lag.ht);
    let hv_x = Shared::new(&mut lag.hvt_x);
    let hv_y = Shared::new(&mut lag.hvt_y);
    let dr_x = Shared::new(&mut lag.dr_x);
    let dr_y = Shared::new(&mut lag.dr_y);
    let h_half = &lag.h_half;
    let (uh_x, uh_y) = (&lag.u_half_x, &lag.u_half_y);

    let per_block = ctx.dispatch.map(StageKind::Lagrangian, |ib| {
        let (ir, jr) = layout.cells(ib);
        let mut rep = CorrectorReport::default();
        let mut worst: Option<(usize, usize, f64)> = None;
        for j in jr {
            for i in ir.clone() {
                let k = i + j * nx;
                let depth = state.depth[k];
                let active = lagrangian_cell(&state.depth, index_q, eps, k);

                let sigma = forces_half.sigma[k];
                let raw = depth + tau * sigma;
                let hn = if raw > 0.0 { raw } else { 0.0 };
                let mx = state.mom_x[k] + tau * (h_half[k] * forces_half.body_x[k] + forces_half.sv_x[k]);
                let my = state.mom_y[k] + tau * (h_half[k] * forces_half.body_y[k] + forces_half.sv_y[k]);
                let (ux, uy) = if hn > eps { (mx / hn, my / hn) } else { (0.0, 0.0) };
                let damp = 1.0 + tau * 0.5 * forces_half.lambda[k] * (ux * ux + uy * uy).sqrt();
                let (dx, dy) = (tau * uh_x[k], tau * uh_y[k]);

                // SAFETY: each cell belongs to exactly one block.
                unsafe {
                    if active {
                        ht.set(k, hn);
                        hv_x.set(k, hn * ux / damp);
                        hv_y.set(k, hn * uy / damp);
                        dr_x.set(k, dx);
                        dr_y.set(k, dy);
                        rep.source_depth += tau * sigma;
                        if raw < 0.0 {
                            rep.clamped_depth -= raw;
                        }
                        let d = dx.abs().max(dy.abs());
                        if !(d < 0.5 * h) && worst.is_none_or(|w| d > w.2 || d.is_nan()) {
                            worst = Some((i, j, d));
                        }
                    } else {
                        ht.set(k, depth);
                        hv_x.set(k, 0.0);
                        hv_y.set(k, 0.0);
                        dr_x.set(k, 0.0);
                        dr_y.set(k, 0.0);
                    }
                }
            }
        }
        (rep, worst)
    });

    let mut total = CorrectorReport::default();
    for (rep, worst) in per_block {
        if let Some((i, j, d)) = worst {
            return Err(FloodError::Numerical {
                time: state.time,
                msg: format!("particle displacement {d:e} m at cell ({i}, {j}) reaches half a cell (h = {h} m)"),
            });
        }
        total.source_depth += rep.source_depth;
        total.clamped_depth += rep.clamped_depth;
    }
    Ok(total)
}

/// Direction of one sweep of the flux stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Order of the two directional sweeps of K7, alternated every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    XFirst,
    YFirst,
}

impl SweepOrder {
    pub fn for_step(step: u64) -> Self {
        if step.is_multiple_of(2) {
            SweepOrder::XFirst
        } else {
            SweepOrder::YFirst
        }
    }

    fn axes(self) -> [Axis; 2] {
        match self {
            SweepOrder::XFirst => [Axis::X, Axis::Y],
            SweepOrder::YFirst => [Axis::Y, Axis::X],
        }
    }
}

/// Linear reconstruction of one cell along `axis`, shifted to the half
/// step: returns the low and high face states.
///
/// `cur` is the state the sweep starts from and `base` the state at `t_n`;
/// the particle stage enters as the velocity increment `U_half - U^n` and
/// the displacement `dr`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    cur: StateView<'_>,
    base: StateView<'_>,
    bed: &[f64],
    lag: &LagrangianScratch,
    eps: f64,
    (nx, ny, h, tau): (usize, usize, f64, f64),
    axis: Axis,
    i: usize,
    j: usize,
) -> (FaceState, FaceState) {
    let k = i + j * nx;
    let (stride, has_lo, has_hi, dr, uh_n, uh_t) = match axis {
        Axis::X => (1, i > 0, i + 1 < nx, lag.dr_x[k], lag.u_half_x[k], lag.u_half_y[k]),
        Axis::Y => (nx, j > 0, j + 1 < ny, lag.dr_y[k], lag.u_half_y[k], lag.u_half_x[k]),
    };
    let oriented = |view: &StateView<'_>, kk: usize| {
        let (u, v) = view.velocity(kk, eps);
        match axis {
            Axis::X => (u, v),
            Axis::Y => (v, u),
        }
    };
    let wet = |kk: usize| cur.depth[kk] > eps;
    let hc = cur.depth[k];
    let bc = bed[k];
    let ec = hc + bc;
    let (un_c, ut_c) = oriented(&cur, k);
    let (un_b, ut_b) = oriented(&base, k);

    let [dh, de, dun, dut] = if has_lo && has_hi && wet(k) && wet(k - stride) && wet(k + stride) {
        let (lo, hi) = (k - stride, k + stride);
        let (unl, utl) = oriented(&cur, lo);
        let (unh, uth) = oriented(&cur, hi);
        [
            minmod(hc - cur.depth[lo], cur.depth[hi] - hc),
            minmod(ec - (cur.depth[lo] + bed[lo]), (cur.depth[hi] + bed[hi]) - ec),
            minmod(un_c - unl, unh - un_c),
            minmod(ut_c - utl, uth - ut_c),
        ]
    } else {
        [0.0; 4]
    };

    let inv_h = 1.0 / h;
    let d = 0.5 * dr;
    let shift = -dh * d * inv_h - 0.5 * tau * hc * dun * inv_h;
    let un0 = un_c + (uh_n - un_b) - dun * d * inv_h;
    let ut0 = ut_c + (uh_t - ut_b) - dut * d * inv_h;
    let face = |s0: f64| {
        let raw = hc + dh * s0 + shift;
        FaceState {
            h: if raw > 0.0 { raw } else { 0.0 },
            b: bc + (de - dh) * s0,
            un: un0 + dun * s0,
            ut: ut0 + dut * s0,
        }
    };
    (face(-0.5), face(0.5))
}

/// Kernel K7: two directional sweeps of reconstruction, face fluxes and
/// per-cell sums. The second sweep starts from the state advanced by the
/// first; `out` receives the sum of both.
///
/// Returns the net volume that entered through the domain edges.
#[allow(clippy::too_many_arguments)]
pub fn tvd_flux(
    state: &FlowState,
    lag: &LagrangianScratch,
    index_q: &[u8],
    tau: f64,
    order: SweepOrder,
    ctx: &StageContext<'_>,
    work: &mut FluxWork,
    out: &mut FluxField,
) -> Result<f64> {
    let [first, second] = order.axes();
    let base = state.view();
    let mut inflow = sweep(first, base, base, lag, index_q, tau, ctx, work, out, false, state.time)?;

    // state after the first sweep; skipped blocks have no fluxes
    {
        let nx = ctx.terrain.nx();
        let c = tau / ctx.terrain.h();
        let layout = ctx.dispatch.layout();
        let md = Shared::new(&mut work.mid_depth);
        let mx = Shared::new(&mut work.mid_x);
        let my = Shared::new(&mut work.mid_y);
        let fl = &*out;
        ctx.dispatch.map_or_else(
            StageKind::Flux,
            |ib| {
                let (ir, jr) = layout.cells(ib);
                for j in jr {
                    for k in ir.clone().map(|i| i + j * nx) {
                        let d = state.depth[k] + c * fl.fh[k];
                        // SAFETY: each cell belongs to exactly one block.
                        unsafe {
                            md.set(k, if d > 0.0 { d } else { 0.0 });
                            mx.set(k, state.mom_x[k] + c * fl.fv_x[k]);
                            my.set(k, state.mom_y[k] + c * fl.fv_y[k]);
                        }
                    }
                }
            },
            |ib| {
                let (ir, jr) = layout.cells(ib);
                for j in jr {
                    for k in ir.clone().map(|i| i + j * nx) {
                        // SAFETY: as above.
                        unsafe {
                            md.set(k, state.depth[k]);
                            mx.set(k, state.mom_x[k] + 0.0);
                            my.set(k, state.mom_y[k] + 0.0);
                        }
                    }
                }
            },
        );
    }
    let mid_depth = std::mem::take(&mut work.mid_depth);
    let mid_x = std::mem::take(&mut work.mid_x);
    let mid_y = std::mem::take(&mut work.mid_y);
    let mid = StateView {
        depth: &mid_depth,
        mom_x: &mid_x,
        mom_y: &mid_y,
    };
    let second_inflow = sweep(second, mid, base, lag, index_q, tau, ctx, work, out, true, state.time);
    work.mid_depth = mid_depth;
    work.mid_x = mid_x;
    work.mid_y = mid_y;
    inflow += second_inflow?;
    Ok(inflow)
}

/// One directional sweep: reconstruct from `cur`, solve the faces normal to
/// `axis` and gather their sums into `out` (added when `accumulate`).
#[allow(clippy::too_many_arguments)]
fn sweep(
    axis: Axis,
    cur: StateView<'_>,
    base: StateView<'_>,
    lag: &LagrangianScratch,
    index_q: &[u8],
    tau: f64,
    ctx: &StageContext<'_>,
    work: &mut FluxWork,
    out: &mut FluxField,
    accumulate: bool,
    time: f64,
) -> Result<f64> {
    let terrain = ctx.terrain;
    let (nx, ny, h) = (terrain.nx(), terrain.ny(), terrain.h());
    let bed = terrain.bed();
    let eps = ctx.params.dry_eps;
    let g = ctx.params.gravity;
    let bc = ctx.boundaries;
    let layout = ctx.dispatch.layout();
    let act = |k: usize| lagrangian_cell(base.depth, index_q, eps, k);
    let (stride, lo_kind, hi_kind) = match axis {
        Axis::X => (1, bc.west, bc.east),
        Axis::Y => (nx, bc.south, bc.north),
    };
    // position along the sweep and its extent
    let along = |i: usize, j: usize| match axis {
        Axis::X => (i, nx),
        Axis::Y => (j, ny),
    };
    // index of the face on the low side of cell (i, j); the high face of the
    // last cell in a line is `face + stride_f`
    let face_of = |i: usize, j: usize| match axis {
        Axis::X => (i + j * (nx + 1), 1),
        Axis::Y => (i + j * nx, nx),
    };

    // (a) reconstruction
    {
        let faces = Shared::new(&mut work.faces);
        ctx.dispatch.for_each(StageKind::Flux, |ib| {
            let (ir, jr) = layout.cells(ib);
            for j in jr {
                for i in ir.clone() {
                    let pair = reconstruct(cur, base, bed, lag, eps, (nx, ny, h, tau), axis, i, j);
                    // SAFETY: each cell belongs to exactly one block.
                    unsafe { faces.set(i + j * nx, pair) };
                }
            }
        });
    }

    // (b) face fluxes: every cell solves its low face, the last cell of a
    // line also the domain edge behind it
    let faces = &work.faces;
    let failures = {
        let ff = Shared::new(match axis {
            Axis::X => &mut work.x,
            Axis::Y => &mut work.y,
        });
        let solve = |l: &FaceState, r: &FaceState, active: bool| -> FaceFlux {
            let f = face_flux(l, r, g, eps);
            if active {
                f
            } else {
                FaceFlux::ZERO
            }
        };
        ctx.dispatch.map(StageKind::Flux, |ib| {
            let (ir, jr) = layout.cells(ib);
            let mut bad: Option<(usize, usize)> = None;
            let mut check = |f: &FaceFlux, i: usize, j: usize| {
                if !f.is_finite() && bad.is_none() {
                    bad = Some((i, j));
                }
            };
            for j in jr {
                for i in ir.clone() {
                    let k = i + j * nx;
                    let (lo, hi) = &faces[k];
                    let a = act(k);
                    let (p, n) = along(i, j);
                    let (fk, fs) = face_of(i, j);
                    let f = if p > 0 {
                        solve(&faces[k - stride].1, lo, a || act(k - stride))
                    } else {
                        boundary::enforce(lo_kind, solve(&ghost(lo_kind, lo), lo, a))
                    };
                    check(&f, i, j);
                    // SAFETY: each face has exactly one owning cell.
                    unsafe { ff.set(fk, f) };
                    if p + 1 == n {
                        let f = boundary::enforce(hi_kind, solve(hi, &ghost(hi_kind, hi), a));
                        match axis {
                            Axis::X => check(&f, nx, j),
                            Axis::Y => check(&f, i, ny),
                        }
                        unsafe { ff.set(fk + fs, f) };
                    }
                }
            }
            bad
        })
    };
    if let Some((i, j)) = failures.into_iter().flatten().next() {
        let name = if axis == Axis::X { 'x' } else { 'y' };
        return Err(FloodError::Numerical {
            time,
            msg: format!("non-finite flux on {name}-face ({i}, {j})"),
        });
    }

    // (c) per-cell sums plus the centred bed-slope source
    let ff = match axis {
        Axis::X => &work.x,
        Axis::Y => &work.y,
    };
    let fh = Shared::new(&mut out.fh);
    let fvx = Shared::new(&mut out.fv_x);
    let fvy = Shared::new(&mut out.fv_y);
    let edge = ctx.dispatch.map(StageKind::Flux, |ib| {
        let (ir, jr) = layout.cells(ib);
        let mut inflow = 0.0;
        for j in jr {
            for i in ir.clone() {
                let k = i + j * nx;
                let a = act(k);
                let (p, n) = along(i, j);
                let (fk, fs) = face_of(i, j);
                let pick = |f: &FaceFlux, on: bool| if on { *f } else { FaceFlux::ZERO };
                let lo = pick(&ff[fk], a || (p > 0 && act(k - stride)));
                let hi = pick(&ff[fk + fs], a || (p + 1 < n && act(k + stride)));
                let (fl, fr) = &faces[k];
                let bed_src = -g * 0.5 * (fl.h + fr.h) * (fr.b - fl.b);
                let mass = lo.mass - hi.mass;
                let normal = lo.mom_r - hi.mom_l + bed_src;
                let tangential = lo.mom_t - hi.mom_t;
                let (mom_x, mom_y) = match axis {
                    Axis::X => (normal, tangential),
                    Axis::Y => (tangential, normal),
                };
                // SAFETY: each cell belongs to exactly one block.
                unsafe {
                    if accumulate {
                        fh.set(k, fh.get(k) + mass);
                        fvx.set(k, fvx.get(k) + mom_x);
                        fvy.set(k, fvy.get(k) + mom_y);
                    } else {
                        fh.set(k, mass);
                        fvx.set(k, mom_x);
                        fvy.set(k, mom_y);
                    }
                }
                if p == 0 {
                    inflow += lo.mass;
                }
                if p + 1 == n {
                    inflow -= hi.mass;
                }
            }
        }
        inflow
    });
    Ok(tau * h * edge.into_iter().sum::<f64>())
}

/// Kernel K8: conservative update and scratch reset.
///
/// Returns the depth added by clamping negative results [m].
pub fn final_update(
    state: &mut FlowState,
    lag: &mut LagrangianScratch,
    flux: &FluxField,
    index_q: &[u8],
    tau: f64,
    ctx: &StageContext<'_>,
) -> Result<f64> {
    let nx = ctx.terrain.nx();
    let c = tau / ctx.terrain.h();
    let eps = ctx.params.dry_eps;
    let layout = ctx.dispatch.layout();
    let time = state.time;

    let depth = Shared::new(&mut state.depth);
    let mom_x = Shared::new(&mut state.mom_x);
    let mom_y = Shared::new(&mut state.mom_y);
    let scratch = [
        Shared::new(&mut lag.h_half),
        Shared::new(&mut lag.mh_x),
        Shared::new(&mut lag.mh_y),
        Shared::new(&mut lag.u_half_x),
        Shared::new(&mut lag.u_half_y),
        Shared::new(&mut lag.ht),
        Shared::new(&mut lag.hvt_x),
        Shared::new(&mut lag.hvt_y),
        Shared::new(&mut lag.dr_x),
        Shared::new(&mut lag.dr_y),
    ];
    let clear = |ib: usize| {
        let (ir, jr) = layout.cells(ib);
        for s in &scratch {
            for j in jr.clone() {
                for k in ir.clone().map(|i| i + j * nx) {
                    // SAFETY: each cell belongs to exactly one block.
                    unsafe { s.set(k, 0.0) };
                }
            }
        }
    };

    let per_block = ctx.dispatch.map_or_else(
        StageKind::Final,
        |ib| {
            let (ir, jr) = layout.cells(ib);
            let mut clamped = 0.0;
            let mut bad = None;
            for j in jr {
                for i in ir.clone() {
                    let k = i + j * nx;
                    // SAFETY: each cell belongs to exactly one block; only
                    // cell k is read or written here.
                    unsafe {
                        let d0 = depth.get(k);
                        let active = d0 > eps || index_q[k] != 0;
                        let (h0, mx0, my0) = if active {
                            (scratch[5].get(k), scratch[6].get(k), scratch[7].get(k))
                        } else {
                            (d0, 0.0, 0.0)
                        };
                        let raw = h0 + c * flux.fh[k];
                        let hn = if raw > 0.0 { raw } else { 0.0 };
                        if raw < 0.0 {
                            clamped -= raw;
                        }
                        if !raw.is_finite() && bad.is_none() {
                            bad = Some((i, j));
                        }
                        let (mx, my) = if hn > eps {
                            (mx0 + c * flux.fv_x[k], my0 + c * flux.fv_y[k])
                        } else {
                            (0.0, 0.0)
                        };
                        depth.set(k, hn);
                        mom_x.set(k, mx);
                        mom_y.set(k, my);
                    }
                }
            }
            clear(ib);
            (clamped, bad)
        },
        |ib| {
            clear(ib);
            (0.0, None)
        },
    );

    let mut clamped = 0.0;
    for (cl, bad) in per_block {
        if let Some((i, j)) = bad {
            return Err(FloodError::Numerical {
                time,
                msg: format!("non-finite depth at cell ({i}, {j})"),
            });
        }
        clamped += cl;
    }
    state.time += tau;
    Ok(clamped)
}

/// Sources at the half step, restricted to the cells flagged at `t_n` so
/// that a source switching on mid-step starts with the next one.
pub fn half_step_sources(
    sources: &[SourceSpec],
    t_half: f64,
    terrain: &Terrain,
    index_q_n: &[u8],
    out: &mut SourceField,
) -> Result<()> {
    fill_source_terms(sources, t_half, terrain, out)?;
    for (k, &was) in index_q_n.iter().enumerate() {
        if out.index_q[k] != 0 && was == 0 {
            out.sigma[k] = 0.0;
            out.vx[k] = 0.0;
            out.vy[k] = 0.0;
            out.index_q[k] = 0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub control: TimestepControl,
    pub boundaries: Boundaries,
    pub block_size: usize,
    /// Skip dry blocks.
    pub skip: bool,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub terms: ForceTerms,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            control: TimestepControl::default(),
            boundaries: Boundaries::walls(),
            block_size: DEFAULT_BLOCK_SIZE,
            skip: true,
            workers: 0,
            terms: ForceTerms::all(),
        }
    }
}

/// A face whose transported volume is recorded every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceId {
    /// x-face on the west side of cell `(i, j)`; `i == nx` is the east edge.
    X { i: usize, j: usize },
    /// y-face on the south side of cell `(i, j)`; `j == ny` is the north edge.
    Y { i: usize, j: usize },
}

/// Single-grid driver that owns the state, scratch arrays and workers.
pub struct Solver {
    terrain: Terrain,
    params: PhysicalParams,
    config: SolverConfig,
    wind: WindForcing,
    sources: Vec<SourceSpec>,
    state: FlowState,
    forces: ForceField,
    lag: LagrangianScratch,
    work: FluxWork,
    flux: FluxField,
    src_n: SourceField,
    src_half: SourceField,
    mask: BlockMask,
    pool: Arc<rayon::ThreadPool>,
    ledger: MassLedger,
    steps: u64,
    probes: Vec<FaceId>,
    probe_volume: Vec<f64>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("nx", &self.terrain.nx())
            .field("ny", &self.terrain.ny())
            .field("time", &self.state.time)
            .field("steps", &self.steps)
            .finish()
    }
}

pub(crate) fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FloodError::config(format!("cannot start {workers} workers: {e}")))
}

impl Solver {
    pub fn new(terrain: Terrain, mut state: FlowState, params: PhysicalParams, config: SolverConfig) -> Result<Self> {
        let n = terrain.n_cells();
        params.validate(n)?;
        config.control.validate()?;
        if config.block_size == 0 {
            return Err(FloodError::config("block size must be positive"));
        }
        check_state(&state, &terrain)?;
        state.normalize_dry(params.dry_eps);
        let layout = BlockLayout::new(terrain.nx(), terrain.ny(), config.block_size);
        let pool = Arc::new(build_pool(config.workers)?);
        let initial = state.depth.iter().sum::<f64>() * terrain.cell_area();
        Ok(Solver {
            forces: ForceField::zeros(n),
            lag: LagrangianScratch::new(n),
            work: FluxWork::new(terrain.nx(), terrain.ny()),
            flux: FluxField::new(n),
            src_n: SourceField::empty(n),
            src_half: SourceField::empty(n),
            mask: BlockMask::empty(layout),
            pool,
            ledger: MassLedger {
                initial,
                ..MassLedger::default()
            },
            steps: 0,
            probes: Vec::new(),
            probe_volume: Vec::new(),
            wind: WindForcing::default(),
            sources: Vec::new(),
            terrain,
            params,
            config,
            state,
        })
    }

    pub fn with_sources(mut self, sources: Vec<SourceSpec>) -> Result<Self> {
        for s in &sources {
            s.validate(&self.terrain)?;
        }
        self.sources = sources;
        Ok(self)
    }

    pub fn with_wind(mut self, wind: WindForcing) -> Self {
        self.wind = wind;
        self
    }

    pub fn wind(&self) -> &WindForcing {
        &self.wind
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn ledger(&self) -> &MassLedger {
        &self.ledger
    }

    /// Block mask of the last step.
    pub fn mask(&self) -> &BlockMask {
        &self.mask
    }

    pub fn volume(&self) -> f64 {
        self.state.depth.iter().sum::<f64>() * self.terrain.cell_area()
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.state.time = t;
    }

    pub fn set_skip(&mut self, skip: bool) {
        self.config.skip = skip;
    }

    /// Replace cell values from outside the integrator; the volume change
    /// is booked as external in the ledger.
    pub fn overwrite_cells<F>(&mut self, mut edit: F)
    where
        F: FnMut(&mut FlowState),
    {
        let before = self.volume();
        edit(&mut self.state);
        for k in 0..self.state.n_cells() {
            if !(self.state.depth[k] > 0.0) {
                self.state.depth[k] = 0.0;
            }
        }
        self.state.normalize_dry(self.params.dry_eps);
        self.ledger.external += self.volume() - before;
    }

    /// Record the volume crossing these faces (positive along +x / +y).
    pub fn set_probes(&mut self, probes: Vec<FaceId>) -> Result<()> {
        let (nx, ny) = (self.terrain.nx(), self.terrain.ny());
        for p in &probes {
            let ok = match *p {
                FaceId::X { i, j } => i <= nx && j < ny,
                FaceId::Y { i, j } => i < nx && j <= ny,
            };
            if !ok {
                return Err(FloodError::config(format!("probe face {p:?} outside the grid")));
            }
        }
        self.probe_volume = vec![0.0; probes.len()];
        self.probes = probes;
        Ok(())
    }

    /// Volumes accumulated since the last call, then reset.
    pub fn take_probe_volumes(&mut self) -> Vec<f64> {
        let out = self.probe_volume.clone();
        self.probe_volume.iter_mut().for_each(|v| *v = 0.0);
        out
    }

    pub fn step(&mut self) -> Result<StepReport> {
        self.step_capped(f64::INFINITY)
    }

    /// One step no longer than `dt_cap` (used to land on output times).
    pub fn step_capped(&mut self, dt_cap: f64) -> Result<StepReport> {
        let pool = Arc::clone(&self.pool);
        pool.install(|| self.step_inner(dt_cap))
    }

    /// Step until `t_end`, truncating the last step to land on it exactly.
    pub fn advance_to(&mut self, t_end: f64) -> Result<Vec<StepReport>> {
        let mut reports = Vec::new();
        while self.state.time < t_end {
            let remaining = t_end - self.state.time;
            let rep = self.step_capped(remaining)?;
            if rep.dt >= remaining {
                self.state.time = t_end;
            }
            reports.push(rep);
        }
        Ok(reports)
    }

    fn step_inner(&mut self, dt_cap: f64) -> Result<StepReport> {
        let mut timings = StageTimings::default();
        let t = self.state.time;
        let eps = self.params.dry_eps;
        let layout = self.mask.layout;

        // K1
        let clock = Instant::now();
        fill_source_terms(&self.sources, t, &self.terrain, &mut self.src_n)?;
        self.mask = compute_block_mask(&self.state.depth, &self.src_n.index_q, eps, layout);
        timings.secs[0] = clock.elapsed().as_secs_f64();

        let ctx = StageContext {
            terrain: &self.terrain,
            params: &self.params,
            boundaries: self.config.boundaries,
            dispatch: Dispatch::new(&self.mask, self.config.skip),
        };
        let q = &self.src_n.index_q;

        // K2
        let clock = Instant::now();
        let inputs = ForceInputs {
            state: self.state.view(),
            terrain: &self.terrain,
            params: &self.params,
            terms: self.config.terms,
            wind: self.wind.at(t),
            sources: &self.src_n,
        };
        assemble_forces_into(&inputs, ctx.dispatch, &mut self.forces);
        timings.secs[1] = clock.elapsed().as_secs_f64();

        // K3
        let clock = Instant::now();
        let tau = compute_dt(&self.state, &self.forces, &ctx, &self.config.control)?.min(dt_cap);
        timings.secs[2] = clock.elapsed().as_secs_f64();

        // K4
        let clock = Instant::now();
        lagrangian_predictor(&self.state, &self.forces, q, tau, &ctx, &mut self.lag);
        timings.secs[3] = clock.elapsed().as_secs_f64();

        // K5
        let clock = Instant::now();
        let t_half = t + 0.5 * tau;
        half_step_sources(&self.sources, t_half, &self.terrain, q, &mut self.src_half)?;
        let inputs = ForceInputs {
            state: self.lag.half_state(),
            terrain: &self.terrain,
            params: &self.params,
            // the corrector reads body forces, sources and friction only;
            // pressure enters through the fluxes
            terms: ForceTerms {
                surface: false,
                ..self.config.terms
            },
            wind: self.wind.at(t_half),
            sources: &self.src_half,
        };
        assemble_forces_into(&inputs, ctx.dispatch, &mut self.forces);
        timings.secs[4] = clock.elapsed().as_secs_f64();

        // K6
        let clock = Instant::now();
        let corr = lagrangian_corrector(&self.state, &self.forces, q, tau, &ctx, &mut self.lag)?;
        timings.secs[5] = clock.elapsed().as_secs_f64();

        // K7
        let clock = Instant::now();
        let order = SweepOrder::for_step(self.steps);
        let inflow = tvd_flux(&self.state, &self.lag, q, tau, order, &ctx, &mut self.work, &mut self.flux)?;
        timings.secs[6] = clock.elapsed().as_secs_f64();

        record_probes(
            &self.probes,
            &mut self.probe_volume,
            &self.work,
            &self.state,
            q,
            &self.terrain,
            eps,
            tau,
        );

        // K8
        let clock = Instant::now();
        let clamped = final_update(&mut self.state, &mut self.lag, &self.flux, q, tau, &ctx)?;
        timings.secs[7] = clock.elapsed().as_secs_f64();

        let area = self.terrain.cell_area();
        self.ledger.sources += corr.source_depth * area;
        self.ledger.clamped += (corr.clamped_depth + clamped) * area;
        self.ledger.boundary += inflow;
        self.steps += 1;

        let n_blocks = layout.n_blocks();
        Ok(StepReport {
            time: self.state.time,
            dt: tau,
            timings,
            active_fraction: crate::block::active_fraction(&self.mask),
            skipped: SkipCounts {
                lagrangian: if self.config.skip {
                    n_blocks - self.mask.count_active(StageKind::Lagrangian)
                } else {
                    0
                },
                flux: if self.config.skip {
                    n_blocks - self.mask.count_active(StageKind::Flux)
                } else {
                    0
                },
                total: n_blocks,
            },
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn record_probes(
    probes: &[FaceId],
    volume: &mut [f64],
    work: &FluxWork,
    state: &FlowState,
    q: &[u8],
    terrain: &Terrain,
    eps: f64,
    tau: f64,
) {
    let (nx, ny) = (terrain.nx(), terrain.ny());
    let act = |i: usize, j: usize| lagrangian_cell(&state.depth, q, eps, i + j * nx);
    let scale = tau * terrain.h();
    for (p, acc) in probes.iter().zip(volume.iter_mut()) {
        let (active, f) = match *p {
            FaceId::X { i, j } => ((i < nx && act(i, j)) || (i > 0 && act(i - 1, j)), work.x[i + j * (nx + 1)]),
            FaceId::Y { i, j } => ((j < ny && act(i, j)) || (j > 0 && act(i, j - 1)), work.y[i + j * nx]),
        };
        if active {
            *acc += scale * f.mass;
        }
    }
}

fn check_state(state: &FlowState, terrain: &Terrain) -> Result<()> {
    let n = terrain.n_cells();
    if state.depth.len() != n || state.mom_x.len() != n || state.mom_y.len() != n {
        return Err(FloodError::config(format!(
            "state has {} cells, terrain {}",
            state.depth.len(),
            n
        )));
    }
    for k in 0..n {
        if !(state.depth[k] >= 0.0) || !state.mom_x[k].is_finite() || !state.mom_y[k].is_finite() {
            return Err(FloodError::config(format!(
                "invalid initial state at cell ({}, {})",
                k % terrain.nx(),
                k / terrain.nx()
            )));
        }
    }
    if !state.time.is_finite() {
        return Err(FloodError::config("initial time must be finite"));
    }
    Ok(())
}
