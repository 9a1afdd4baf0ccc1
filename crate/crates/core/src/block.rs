//! Wet-block activity masking and block-parallel dispatch.
//!
//! The grid is tiled into `B x B` blocks (the last row/column of blocks may
//! be partial). Each step the mask records, per block, how many interior
//! cells hold water or a source (`interior`) and how many edge-adjacent
//! cells just outside the block do (`halo`). Stages then run only on the
//! blocks that can change: Lagrangian stages need interior water, flux-type
//! stages also need halo water because fluxes cross block edges.
//!
//! Water moves at most one cell per step under the Courant limit, so a
//! one-cell halo is enough for skipping to be exact.

use std::marker::PhantomData;

use rayon::prelude::*;

use crate::grid::FlowState;

pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// Runs where the block itself is wet (K2, K4, K5, K6).
    Lagrangian,
    /// Runs where the block or its halo is wet (K7).
    Flux,
    /// Like `Flux`, but skipped blocks still get their scratch cleared (K8).
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub nx: usize,
    pub ny: usize,
    pub b: usize,
    pub nbx: usize,
    pub nby: usize,
}

impl BlockLayout {
    pub fn new(nx: usize, ny: usize, b: usize) -> Self {
        assert!(b > 0, "block size must be positive");
        BlockLayout {
            nx,
            ny,
            b,
            nbx: nx.div_ceil(b),
            nby: ny.div_ceil(b),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.nbx * self.nby
    }

    /// Cell ranges `(i0..i1, j0..j1)` covered by block `ib`.
    #[inline]
    pub fn cells(&self, ib: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let bx = ib % self.nbx;
        let by = ib / self.nbx;
        let i0 = bx * self.b;
        let j0 = by * self.b;
        (i0..(i0 + self.b).min(self.nx), j0..(j0 + self.b).min(self.ny))
    }

    pub fn block_of(&self, i: usize, j: usize) -> usize {
        i / self.b + (j / self.b) * self.nbx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMask {
    pub layout: BlockLayout,
    /// Flagged interior cells per block.
    pub interior: Vec<u32>,
    /// Flagged edge-adjacent outside cells per block.
    pub halo: Vec<u32>,
}

impl BlockMask {
    pub fn empty(layout: BlockLayout) -> Self {
        let n = layout.n_blocks();
        BlockMask {
            layout,
            interior: vec![0; n],
            halo: vec![0; n],
        }
    }

    #[inline]
    pub fn is_active(&self, ib: usize, kind: StageKind) -> bool {
        match kind {
            StageKind::Lagrangian => self.interior[ib] > 0,
            StageKind::Flux | StageKind::Final => self.interior[ib] > 0 || self.halo[ib] > 0,
        }
    }

    pub fn count_active(&self, kind: StageKind) -> usize {
        (0..self.layout.n_blocks())
            .filter(|&ib| self.is_active(ib, kind))
            .count()
    }
}

/// Flag blocks holding water (`depth > eps`) or an active source (kernel K1).
///
/// Halo cells are the edge neighbours just outside the block; at the domain
/// edge the neighbour index is clamped onto the cell itself.
pub fn compute_block_mask(depth: &[f64], index_q: &[u8], eps: f64, layout: BlockLayout) -> BlockMask {
    let (nx, ny) = (layout.nx, layout.ny);
    assert_eq!(depth.len(), nx * ny);
    assert_eq!(index_q.len(), nx * ny);
    let flagged = |i: usize, j: usize| -> u32 {
        let k = i + j * nx;
        u32::from(depth[k] > eps || index_q[k] > 0)
    };

    let counts: Vec<(u32, u32)> = (0..layout.n_blocks())
        .into_par_iter()
        .map(|ib| {
            let (ir, jr) = layout.cells(ib);
            let mut interior = 0;
            for j in jr.clone() {
                for i in ir.clone() {
                    interior += flagged(i, j);
                }
            }
            let mut halo = 0;
            let (i0, i1, j0, j1) = (ir.start, ir.end - 1, jr.start, jr.end - 1);
            for j in jr.clone() {
                halo += flagged(i0.saturating_sub(1), j);
                halo += flagged((i1 + 1).min(nx - 1), j);
            }
            for i in ir.clone() {
                halo += flagged(i, j0.saturating_sub(1));
                halo += flagged(i, (j1 + 1).min(ny - 1));
            }
            (interior, halo)
        })
        .collect();

    let (interior, halo) = counts.into_iter().unzip();
    BlockMask {
        layout,
        interior,
        halo,
    }
}

/// Convenience wrapper over [`compute_block_mask`] for a flow state.
pub fn mask_for_state(state: &FlowState, index_q: &[u8], eps: f64, layout: BlockLayout) -> BlockMask {
    compute_block_mask(&state.depth, index_q, eps, layout)
}

/// Share of blocks that any flux-type stage would visit.
pub fn active_fraction(mask: &BlockMask) -> f64 {
    let n = mask.layout.n_blocks();
    if n == 0 {
        return 0.0;
    }
    mask.count_active(StageKind::Flux) as f64 / n as f64
}

/// Mask plus the skip switch; with skipping off every block runs.
#[derive(Debug, Clone, Copy)]
pub struct Dispatch<'a> {
    pub mask: &'a BlockMask,
    pub skip: bool,
}

impl<'a> Dispatch<'a> {
    pub fn new(mask: &'a BlockMask, skip: bool) -> Self {
        Dispatch { mask, skip }
    }

    pub fn layout(&self) -> BlockLayout {
        self.mask.layout
    }

    #[inline]
    pub fn runs(&self, ib: usize, kind: StageKind) -> bool {
        !self.skip || self.mask.is_active(ib, kind)
    }

    fn blocks(&self, kind: StageKind) -> Vec<usize> {
        (0..self.mask.layout.n_blocks())
            .filter(|&ib| self.runs(ib, kind))
            .collect()
    }

    pub fn skipped(&self, kind: StageKind) -> usize {
        self.mask.layout.n_blocks() - self.blocks(kind).len()
    }

    /// Run `body` on every block that this stage kind visits.
    pub fn for_each<F>(&self, kind: StageKind, body: F)
    where
        F: Fn(usize) + Sync + Send,
    {
        self.blocks(kind).into_par_iter().for_each(body);
    }

    /// Map over visited blocks; results come back in block order so any
    /// subsequent fold is independent of the worker count.
    pub fn map<T, F>(&self, kind: StageKind, body: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.blocks(kind).into_par_iter().map(body).collect()
    }

    /// Map over all blocks, calling `skipped` for those this stage skips.
    pub fn map_or_else<T, F, G>(&self, kind: StageKind, body: F, skipped: G) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
        G: Fn(usize) -> T + Sync + Send,
    {
        (0..self.mask.layout.n_blocks())
            .into_par_iter()
            .map(|ib| if self.runs(ib, kind) { body(ib) } else { skipped(ib) })
            .collect()
    }
}

/// Run `body` on the blocks active for `kind` (`interior`, plus `halo` for
/// flux-type stages). For [`StageKind::Final`] the `skipped` callback runs
/// on every other block so it can clear per-step scratch.
pub fn for_each_active_block<F, G>(mask: &BlockMask, kind: StageKind, body: F, skipped: G)
where
    F: Fn(usize) + Sync + Send,
    G: Fn(usize) + Sync + Send,
{
    (0..mask.layout.n_blocks()).into_par_iter().for_each(|ib| {
        if mask.is_active(ib, kind) {
            body(ib);
        } else if kind == StageKind::Final {
            skipped(ib);
        }
    });
}

/// Write handle to a slice shared between block workers.
///
/// Blocks partition the cells and each face has exactly one owning cell,
/// so within one dispatch no index is written by two workers and no index
/// written in a stage is read by another block in that same stage.
pub(crate) struct Shared<'a, T> {
    ptr: *mut T,
    len: usize,
    _marker: PhantomData<&'a mut [T]>,
}

unsafe impl<T: Send> Send for Shared<'_, T> {}
unsafe impl<T: Send> Sync for Shared<'_, T> {}

impl<'a, T: Copy> Shared<'a, T> {
    pub fn new(slice: &'a mut [T]) -> Self {
        Shared {
            ptr: slice.as_mut_ptr(),
            len: slice.len(),
            _marker: PhantomData,
        }
    }

    /// # Safety
    /// No other worker may access index `k` during the current dispatch.
    #[inline]
    pub unsafe fn set(&self, k: usize, v: T) {
        debug_assert!(k < self.len);
        *self.ptr.add(k) = v;
    }

    /// # Safety
    /// Same contract as [`Shared::set`].
    #[inline]
    pub unsafe fn get(&self, k: usize) -> T {
        debug_assert!(k < self.len);
        *self.ptr.add(k)
    }
}
