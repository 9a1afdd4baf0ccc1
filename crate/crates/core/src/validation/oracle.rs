//! Analytic and exact reference solutions. Nothing here shares code with
//! the stepper.

use crate::error::{FloodError, Result};

/// Ritter dam break onto a dry, flat, frictionless bed with the dam at
/// `x = 0` and still water of depth `h_l` on the left at `t = 0`.
pub fn ritter_solution(h_l: f64, g: f64, x: f64, t: f64) -> (f64, f64) {
    let c0 = (g * h_l).sqrt();
    if x <= -c0 * t {
        (h_l, 0.0)
    } else if x < 2.0 * c0 * t {
        let xi = x / t;
        let s = 2.0 * c0 - xi;
        (s * s / (9.0 * g), 2.0 / 3.0 * (xi + c0))
    } else {
        (0.0, 0.0)
    }
}

/// Depth, normal and tangential velocity of one side of a Riemann problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannState {
    pub h: f64,
    pub u: f64,
    pub v: f64,
}

impl RiemannState {
    pub fn new(h: f64, u: f64, v: f64) -> Self {
        RiemannState { h, u, v }
    }

    fn flux(&self, g: f64) -> [f64; 3] {
        let q = self.h * self.u;
        [q, q * self.u + 0.5 * g * self.h * self.h, q * self.v]
    }
}

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;

/// Left (or right) wave function: velocity jump across a rarefaction or
/// shock connecting depth `hk` to `h`.
fn wave(h: f64, hk: f64, g: f64) -> f64 {
    if h <= hk {
        2.0 * ((g * h).sqrt() - (g * hk).sqrt())
    } else {
        (h - hk) * (0.5 * g * (h + hk) / (h * hk)).sqrt()
    }
}

/// Star-region depth by bisection.
pub fn star_depth(l: RiemannState, r: RiemannState, g: f64) -> Result<f64> {
    let f = |h: f64| wave(h, l.h, g) + wave(h, r.h, g) + r.u - l.u;
    let mut lo = 0.0;
    let mut hi = l.h.max(r.h).max(1e-3);
    let mut grow = 0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > MAX_ITER {
            return Err(FloodError::Oracle("cannot bracket star depth".into()));
        }
    }
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= TOL * hi.max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(FloodError::Oracle(format!(
        "star depth did not converge in {MAX_ITER} bisection steps"
    )))
}

/// Exact solution at `xi = x / t`.
pub fn exact_riemann_sample(l: RiemannState, r: RiemannState, g: f64, xi: f64) -> Result<RiemannState> {
    let dry = RiemannState::new(0.0, 0.0, 0.0);
    let cl = (g * l.h).sqrt();
    let cr = (g * r.h).sqrt();
    if l.h <= 0.0 && r.h <= 0.0 {
        return Ok(dry);
    }
    if r.h <= 0.0 {
        return Ok(dry_side_right(l, g, xi));
    }
    if l.h <= 0.0 {
        let m = dry_side_right(RiemannState::new(r.h, -r.u, r.v), g, -xi);
        return Ok(RiemannState::new(m.h, -m.u, m.v));
    }
    if 2.0 * (cl + cr) <= r.u - l.u {
        // the two rarefactions leave a dry gap
        let head_l = l.u + 2.0 * cl;
        let head_r = r.u - 2.0 * cr;
        return Ok(if xi <= head_l {
            dry_side_right(l, g, xi)
        } else if xi >= head_r {
            let m = dry_side_right(RiemannState::new(r.h, -r.u, r.v), g, -xi);
            RiemannState::new(m.h, -m.u, m.v)
        } else {
            dry
        });
    }

    let hs = star_depth(l, r, g)?;
    let us = 0.5 * (l.u + r.u) + 0.5 * (wave(hs, r.h, g) - wave(hs, l.h, g));
    let cs = (g * hs).sqrt();
    if xi <= us {
        // left of the contact: tangential velocity from the left
        if hs > l.h {
            let s = l.u - cl * (0.5 * hs * (hs + l.h)).sqrt() / l.h;
            Ok(if xi <= s { l } else { RiemannState::new(hs, us, l.v) })
        } else if xi <= l.u - cl {
            Ok(l)
        } else if xi >= us - cs {
            Ok(RiemannState::new(hs, us, l.v))
        } else {
            let u = (l.u + 2.0 * cl + 2.0 * xi) / 3.0;
            let c = (l.u + 2.0 * cl - xi) / 3.0;
            Ok(RiemannState::new(c * c / g, u, l.v))
        }
    } else if hs > r.h {
        let s = r.u + cr * (0.5 * hs * (hs + r.h)).sqrt() / r.h;
        Ok(if xi >= s { r } else { RiemannState::new(hs, us, r.v) })
    } else if xi >= r.u + cr {
        Ok(r)
    } else if xi <= us + cs {
        Ok(RiemannState::new(hs, us, r.v))
    } else {
        let u = (r.u - 2.0 * cr + 2.0 * xi) / 3.0;
        let c = (-r.u + 2.0 * cr + xi) / 3.0;
        Ok(RiemannState::new(c * c / g, u, r.v))
    }
}

/// Wet state `l` next to a dry bed on its right.
fn dry_side_right(l: RiemannState, g: f64, xi: f64) -> RiemannState {
    let cl = (g * l.h).sqrt();
    if xi <= l.u - cl {
        l
    } else if xi < l.u + 2.0 * cl {
        let u = (l.u + 2.0 * cl + 2.0 * xi) / 3.0;
        let c = (l.u + 2.0 * cl - xi) / 3.0;
        RiemannState::new(c * c / g, u, l.v)
    } else {
        RiemannState::new(0.0, 0.0, 0.0)
    }
}

/// Flux `(hu, hu^2 + g h^2/2, huv)` of the exact solution at the face.
pub fn exact_riemann_flux(l: RiemannState, r: RiemannState, g: f64) -> Result<[f64; 3]> {
    if !(l.h >= 0.0 && r.h >= 0.0) {
        return Err(FloodError::Oracle("negative depth in Riemann problem".into()));
    }
    Ok(exact_riemann_sample(l, r, g, 0.0)?.flux(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const G: f64 = 9.81;

    #[test]
    fn ritter_examples() {
        let c = G.sqrt();
        let (h, u) = ritter_solution(1.0, G, 0.0, 1.0);
        assert_relative_eq!(h, 4.0 / 9.0, max_relative = 1e-14);
        assert_relative_eq!(u, 2.0 / 3.0 * c, max_relative = 1e-14);
        assert_eq!(ritter_solution(1.0, G, -2.0 * c, 1.0), (1.0, 0.0));
        assert_eq!(ritter_solution(1.0, G, 2.0 * c, 1.0).0, 0.0);
    }

    #[test]
    fn riemann_examples() {
        let s = RiemannState::new(1.5, 0.0, 0.0);
        let f = exact_riemann_flux(s, s, G).unwrap();
        assert_eq!(f[0], 0.0);
        let dry = RiemannState::new(0.0, 0.0, 0.0);
        assert_eq!(exact_riemann_flux(dry, dry, G).unwrap(), [0.0; 3]);
    }

    #[test]
    fn dry_right_matches_ritter() {
        let m = exact_riemann_sample(RiemannState::new(1.0, 0.0, 0.0), RiemannState::new(0.0, 0.0, 0.0), G, 0.0)
            .unwrap();
        let (h, u) = ritter_solution(1.0, G, 0.0, 1.0);
        assert!((m.h - h).abs() < 1e-10);
        assert!((m.u - u).abs() < 1e-10);
    }

    #[test]
    fn nearly_dry_right_approaches_ritter() {
        let m = exact_riemann_sample(RiemannState::new(1.0, 0.0, 0.0), RiemannState::new(1e-9, 0.0, 0.0), G, 0.0)
            .unwrap();
        assert!((m.h - 4.0 / 9.0).abs() < 1e-3);
    }

    #[test]
    fn stoker_shock_speed() {
        // shock into still water: Rankine-Hugoniot mass balance
        let l = RiemannState::new(2.0, 0.0, 0.0);
        let r = RiemannState::new(1.0, 0.0, 0.0);
        let hs = star_depth(l, r, G).unwrap();
        let us = wave(hs, r.h, G);
        let s = hs * us / (hs - r.h);
        let behind = exact_riemann_sample(l, r, G, s - 1e-9).unwrap();
        let ahead = exact_riemann_sample(l, r, G, s + 1e-9).unwrap();
        assert_relative_eq!(behind.h, hs, max_relative = 1e-9);
        assert_eq!(ahead.h, 1.0);
    }

    #[test]
    fn symmetric_collision_has_zero_velocity() {
        let l = RiemannState::new(1.0, 2.0, 0.0);
        let r = RiemannState::new(1.0, -2.0, 0.0);
        let m = exact_riemann_sample(l, r, G, 0.0).unwrap();
        assert!(m.u.abs() < 1e-10);
        assert!(m.h > 1.0);
    }

    #[test]
    fn vacuum_between_receding_states() {
        let l = RiemannState::new(1.0, -10.0, 0.0);
        let r = RiemannState::new(1.0, 10.0, 0.0);
        assert_eq!(exact_riemann_sample(l, r, G, 0.0).unwrap().h, 0.0);
    }

    proptest! {
        #[test]
        fn star_state_solves_wave_equation(hl in 0.01f64..10.0, hr in 0.01f64..10.0,
                                           ul in -3.0f64..3.0, ur in -3.0f64..3.0) {
            let l = RiemannState::new(hl, ul, 0.0);
            let r = RiemannState::new(hr, ur, 0.0);
            prop_assume!(2.0 * ((G * hl).sqrt() + (G * hr).sqrt()) > ur - ul);
            let hs = star_depth(l, r, G).unwrap();
            let res = wave(hs, hl, G) + wave(hs, hr, G) + ur - ul;
            prop_assert!(res.abs() < 1e-9);
        }
    }
}
