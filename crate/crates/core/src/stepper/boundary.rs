use serde::{Deserialize, Serialize};

use super::riemann::{FaceFlux, FaceState};

/// Condition applied on one edge of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Reflective wall: no mass crosses the edge.
    #[default]
    Wall,
    /// Zero-gradient outflow.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Boundaries {
    pub west: BoundaryKind,
    pub east: BoundaryKind,
    pub south: BoundaryKind,
    pub north: BoundaryKind,
}

impl Boundaries {
    pub fn walls() -> Self {
        Boundaries::uniform(BoundaryKind::Wall)
    }

    pub fn open() -> Self {
        Boundaries::uniform(BoundaryKind::Open)
    }

    pub fn uniform(kind: BoundaryKind) -> Self {
        Boundaries {
            west: kind,
            east: kind,
            south: kind,
            north: kind,
        }
    }
}

/// Ghost state seen across a boundary face from the inside state `s`.
#[inline]
pub fn ghost(kind: BoundaryKind, s: &FaceState) -> FaceState {
    match kind {
        BoundaryKind::Wall => FaceState { un: -s.un, ..*s },
        BoundaryKind::Open => *s,
    }
}

/// Remove any mass transport a wall face picked up from rounding.
#[inline]
pub fn enforce(kind: BoundaryKind, f: FaceFlux) -> FaceFlux {
    match kind {
        BoundaryKind::Wall => FaceFlux {
            mass: 0.0,
            mom_t: 0.0,
            ..f
        },
        BoundaryKind::Open => f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::riemann::face_flux;

    #[test]
    fn wall_ghost_reflects_normal_velocity() {
        let s = FaceState {
            h: 1.5,
            b: 0.2,
            un: 0.7,
            ut: -0.3,
        };
        let g = ghost(BoundaryKind::Wall, &s);
        assert_eq!((g.h, g.b, g.un, g.ut), (1.5, 0.2, -0.7, -0.3));
        let f = enforce(BoundaryKind::Wall, face_flux(&s, &g, 9.81, 1e-6));
        assert_eq!(f.mass, 0.0);
        assert!(f.mom_l > 0.0);
    }

    #[test]
    fn open_ghost_copies() {
        let s = FaceState {
            h: 1.0,
            b: 0.0,
            un: 1.0,
            ut: 0.0,
        };
        let f = enforce(BoundaryKind::Open, face_flux(&s, &ghost(BoundaryKind::Open, &s), 9.81, 1e-6));
        assert!((f.mass - 1.0).abs() < 1e-14);
    }
}
