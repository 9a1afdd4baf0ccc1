//! Property tests of the solver on small random scenarios.

use floodsim::grid::{FlowState, PhysicalParams};
use floodsim::stepper::{Solver, SolverConfig};
use floodsim::validation::cases::{bitwise_differences, partial_flood};
use floodsim::validation::seeded_bathymetry;
use proptest::prelude::*;

fn config(skip: bool, block_size: usize) -> SolverConfig {
    SolverConfig {
        skip,
        block_size,
        workers: 1,
        ..SolverConfig::default()
    }
}

/// A seeded bed with a random still-water level plus a raised blob.
fn blob_state(n: usize, seed: u64, level: f64, bump: f64, at: (usize, usize)) -> (floodsim::grid::Terrain, FlowState) {
    let t = seeded_bathymetry(n, n, 20.0, seed, 3.0).unwrap();
    let depth = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let r2 = (i as f64 - at.0 as f64).powi(2) + (j as f64 - at.1 as f64).powi(2);
            (level + bump * (-r2 / 4.0).exp() - t.bed()[k]).max(0.0)
        })
        .collect();
    let s = FlowState::from_depth(&t, depth).unwrap();
    (t, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn depth_stays_non_negative_and_volume_balances(
        n in 8usize..24,
        seed in 0u64..1000,
        level in -3.0f64..3.0,
        bump in 0.0f64..4.0,
        fi in 0.0f64..1.0,
        fj in 0.0f64..1.0,
    ) {
        let at = ((fi * n as f64) as usize, (fj * n as f64) as usize);
        let (t, s) = blob_state(n, seed, level, bump, at);
        let mut solver = Solver::new(t, s, PhysicalParams::default(), config(true, 8)).unwrap();
        for _ in 0..30 {
            solver.step().unwrap();
        }
        let st = solver.state();
        prop_assert!(st.depth.iter().all(|&h| h >= 0.0 && h.is_finite()));
        prop_assert!(st.mom_x.iter().chain(&st.mom_y).all(|v| v.is_finite()));
        let imbalance = solver.ledger().relative_imbalance(solver.volume());
        prop_assert!(imbalance.abs() <= 1e-12, "imbalance {imbalance:e}");
    }

    #[test]
    fn skipping_never_changes_the_result(
        seed in 0u64..1000,
        block_size in prop::sample::select(vec![4usize, 8, 16]),
        q in 0.0f64..2e4,
    ) {
        let setup = partial_flood(32, seed, 0.3, q).unwrap();
        let mut on = setup.solver(config(true, block_size)).unwrap();
        let mut off = setup.solver(config(false, block_size)).unwrap();
        for _ in 0..15 {
            on.step().unwrap();
            off.step().unwrap();
        }
        prop_assert_eq!(bitwise_differences(on.state(), off.state()), 0);
    }

    #[test]
    fn still_water_stays_still(n in 8usize..20, seed in 0u64..1000, level in -2.0f64..4.0) {
        let t = seeded_bathymetry(n, n, 10.0, seed, 3.0).unwrap();
        let s = FlowState::still_water(&t, level);
        let mut solver = Solver::new(t, s.clone(), PhysicalParams::default(), config(true, 8)).unwrap();
        for _ in 0..20 {
            solver.step().unwrap();
        }
        let st = solver.state();
        for k in 0..st.n_cells() {
            prop_assert!((st.depth[k] - s.depth[k]).abs() <= 1e-12);
            prop_assert!(st.mom_x[k].abs() <= 1e-10 * st.depth[k].max(1.0));
            prop_assert!(st.mom_y[k].abs() <= 1e-10 * st.depth[k].max(1.0));
        }
    }
}
