//! Face states and the approximate Riemann solver used by the flux stage.
//!
//! Faces are solved in a local frame: `un` is the velocity normal to the
//! face (positive from left to right), `ut` the tangential one.

/// Reconstructed state on one side of a face.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceState {
    pub h: f64,
    pub b: f64,
    pub un: f64,
    pub ut: f64,
}

impl FaceState {
    pub fn eta(&self) -> f64 {
        self.h + self.b
    }
}

/// Fluxes through one face.
///
/// The hydrostatic reconstruction makes the normal momentum flux differ on
/// the two sides of a bed step: `mom_l` is what leaves the left cell and
/// `mom_r` what enters the right one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceFlux {
    pub mass: f64,
    pub mom_l: f64,
    pub mom_r: f64,
    pub mom_t: f64,
}

impl FaceFlux {
    pub const ZERO: FaceFlux = FaceFlux {
        mass: 0.0,
        mom_l: 0.0,
        mom_r: 0.0,
        mom_t: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.mass.is_finite() && self.mom_l.is_finite() && self.mom_r.is_finite() && self.mom_t.is_finite()
    }
}

#[inline]
pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Physical flux `(hu, hu^2 + g h^2 / 2, hu ut)`.
#[inline]
fn physical(h: f64, un: f64, ut: f64, g: f64) -> [f64; 3] {
    let q = h * un;
    [q, q * un + 0.5 * g * h * h, q * ut]
}

/// HLL flux between two wet states with Davis wave-speed bounds.
#[inline]
pub fn hll(hl: f64, ul: f64, vl: f64, hr: f64, ur: f64, vr: f64, g: f64) -> [f64; 3] {
    let cl = (g * hl).sqrt();
    let cr = (g * hr).sqrt();
    let sl = (ul - cl).min(ur - cr);
    let sr = (ul + cl).max(ur + cr);
    let fl = physical(hl, ul, vl, g);
    let fr = physical(hr, ur, vr, g);
    if sl >= 0.0 {
        fl
    } else if sr <= 0.0 {
        fr
    } else {
        let inv = 1.0 / (sr - sl);
        let ql = [hl, hl * ul, hl * vl];
        let qr = [hr, hr * ur, hr * vr];
        let mut f = [0.0; 3];
        for m in 0..3 {
            f[m] = (sr * fl[m] - sl * fr[m] + sl * sr * (qr[m] - ql[m])) * inv;
        }
        f
    }
}

/// Exact flux at `x/t = 0` when the right side is dry.
#[inline]
pub fn dry_right(h: f64, u: f64, v: f64, g: f64) -> [f64; 3] {
    let c = (g * h).sqrt();
    if u - c >= 0.0 {
        physical(h, u, v, g)
    } else if u + 2.0 * c > 0.0 {
        // inside the rarefaction fan
        let cs = (u + 2.0 * c) / 3.0;
        physical(cs * cs / g, cs, v, g)
    } else {
        [0.0; 3]
    }
}

/// Exact flux at `x/t = 0` when the left side is dry.
#[inline]
pub fn dry_left(h: f64, u: f64, v: f64, g: f64) -> [f64; 3] {
    let c = (g * h).sqrt();
    if u + c <= 0.0 {
        physical(h, u, v, g)
    } else if u - 2.0 * c < 0.0 {
        let cs = (2.0 * c - u) / 3.0;
        physical(cs * cs / g, -cs, v, g)
    } else {
        [0.0; 3]
    }
}

/// Solve one face with hydrostatic reconstruction.
///
/// Depths are re-levelled against `max(b_l, b_r)`; the flux comes from HLL
/// when both re-levelled depths exceed `eps`, from the exact dry-bed fan
/// when one side is dry, and is zero when both are. The pressure
/// corrections `g/2 (h^2 - h*^2)` go to the respective sides.
#[inline]
pub fn face_flux(l: &FaceState, r: &FaceState, g: f64, eps: f64) -> FaceFlux {
    let bs = l.b.max(r.b);
    let hl = (l.eta() - bs).max(0.0);
    let hr = (r.eta() - bs).max(0.0);
    let wet_l = hl > eps;
    let wet_r = hr > eps;
    let f = match (wet_l, wet_r) {
        (true, true) => hll(hl, l.un, l.ut, hr, r.un, r.ut, g),
        (true, false) => dry_right(hl, l.un, l.ut, g),
        (false, true) => dry_left(hr, r.un, r.ut, g),
        (false, false) => [0.0; 3],
    };
    FaceFlux {
        mass: f[0],
        mom_l: f[1] + 0.5 * g * (l.h * l.h - hl * hl),
        mom_r: f[1] + 0.5 * g * (r.h * r.h - hr * hr),
        mom_t: f[2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const G: f64 = 9.81;

    fn st(h: f64, b: f64, un: f64, ut: f64) -> FaceState {
        FaceState { h, b, un, ut }
    }

    #[test]
    fn identical_states_at_rest() {
        let s = st(2.0, 0.0, 0.0, 0.0);
        let f = face_flux(&s, &s, G, 1e-6);
        assert_eq!(f.mass, 0.0);
        assert_relative_eq!(f.mom_l, 0.5 * G * 4.0, max_relative = 1e-14);
        assert_eq!(f.mom_l, f.mom_r);
    }

    #[test]
    fn both_dry_is_zero() {
        let s = st(0.0, 1.0, 0.0, 0.0);
        assert_eq!(face_flux(&s, &s, G, 1e-6), FaceFlux::ZERO);
    }

    #[test]
    fn dam_break_face_is_sampled_fan() {
        let f = face_flux(&st(1.0, 0.0, 0.0, 0.0), &st(0.0, 0.0, 0.0, 0.0), G, 1e-6);
        let c = G.sqrt();
        let h = 4.0 / 9.0;
        let u = 2.0 / 3.0 * c;
        assert_relative_eq!(f.mass, h * u, max_relative = 1e-14);
        assert_relative_eq!(f.mom_l, h * u * u + 0.5 * G * h * h, max_relative = 1e-14);
    }

    #[test]
    fn dry_left_mirrors_dry_right() {
        let a = dry_right(1.3, 0.4, 0.2, G);
        let b = dry_left(1.3, -0.4, 0.2, G);
        assert_relative_eq!(a[0], -b[0], max_relative = 1e-14);
        assert_relative_eq!(a[1], b[1], max_relative = 1e-14);
    }

    #[test]
    fn lake_at_rest_over_step_balances() {
        // left cell bed 0, right cell bed 1, level 3
        let l = st(3.0, 0.0, 0.0, 0.0);
        let r = st(2.0, 1.0, 0.0, 0.0);
        let f = face_flux(&l, &r, G, 1e-6);
        assert_eq!(f.mass, 0.0);
        // each side sees its own hydrostatic pressure
        assert_relative_eq!(f.mom_l, 0.5 * G * 9.0, max_relative = 1e-14);
        assert_relative_eq!(f.mom_r, 0.5 * G * 4.0, max_relative = 1e-14);
    }

    #[test]
    fn dry_bank_above_level_blocks_flow() {
        let l = st(1.0, 0.0, 0.0, 0.0);
        let r = st(0.0, 2.0, 0.0, 0.0);
        let f = face_flux(&l, &r, G, 1e-6);
        assert_eq!(f.mass, 0.0);
        assert_relative_eq!(f.mom_l, 0.5 * G, max_relative = 1e-14);
    }

    #[test]
    fn minmod_cases() {
        assert_eq!(minmod(1.0, 2.0), 1.0);
        assert_eq!(minmod(-3.0, -2.0), -2.0);
        assert_eq!(minmod(1.0, -1.0), 0.0);
        assert_eq!(minmod(0.0, 5.0), 0.0);
    }

    proptest! {
        #[test]
        fn flux_is_consistent(h in 0.01f64..20.0, u in -5.0f64..5.0, v in -5.0f64..5.0) {
            let s = st(h, 0.3, u, v);
            let f = face_flux(&s, &s, G, 1e-6);
            let p = physical(h, u, v, G);
            prop_assert!((f.mass - p[0]).abs() <= 1e-12 * (1.0 + p[0].abs()));
            prop_assert!((f.mom_l - p[1]).abs() <= 1e-12 * (1.0 + p[1].abs()));
        }

        #[test]
        fn mirrored_faces_give_mirrored_flux(hl in 0.0f64..5.0, hr in 0.0f64..5.0,
                                             ul in -3.0f64..3.0, ur in -3.0f64..3.0,
                                             bl in -1.0f64..1.0, br in -1.0f64..1.0) {
            let a = face_flux(&st(hl, bl, ul, 0.0), &st(hr, br, ur, 0.0), G, 1e-6);
            let b = face_flux(&st(hr, br, -ur, 0.0), &st(hl, bl, -ul, 0.0), G, 1e-6);
            prop_assert!((a.mass + b.mass).abs() <= 1e-12 * (1.0 + a.mass.abs()));
            prop_assert!((a.mom_l - b.mom_r).abs() <= 1e-12 * (1.0 + a.mom_l.abs()));
        }
    }
}
