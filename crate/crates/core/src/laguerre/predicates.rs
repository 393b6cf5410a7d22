//! Exact orientation and power tests on lifted points.
//!
//! The lifted height of site `i` is `z_i = ‖x_i‖² − ψ_i`. Ties in the power
//! test are broken by perturbing every height by `ε_i`, with
//! `ε_0 ≫ ε_1 ≫ …`, so the site with the smallest index decides first.

use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::geom::Point;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lifted {
    pub p: Point,
    pub z: f64,
}

#[inline]
fn c2(p: Point) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

#[inline]
fn c3(l: &Lifted) -> Coord3D<f64> {
    Coord3D {
        x: l.p.x,
        y: l.p.y,
        z: l.z,
    }
}

/// Positive when `a, b, c` turn counter-clockwise.
#[inline]
pub(crate) fn orient(a: Point, b: Point, c: Point) -> f64 {
    orient2d(c2(a), c2(b), c2(c))
}

/// True when `d` lies strictly below the plane of the counter-clockwise
/// lifted triangle `a, b, c`, i.e. `d` conflicts with the triangle.
pub(crate) fn in_power_circle(
    a: (usize, &Lifted),
    b: (usize, &Lifted),
    c: (usize, &Lifted),
    d: (usize, &Lifted),
) -> bool {
    let det = orient3d(c3(a.1), c3(b.1), c3(c.1), c3(d.1));
    if det != 0.0 {
        return det > 0.0;
    }
    // ∂det/∂z for each of the four points, ordered by perturbation priority
    let (pa, pb, pc, pd) = (a.1.p, b.1.p, c.1.p, d.1.p);
    let mut terms = [
        (a.0, 0u8),
        (b.0, 1u8),
        (c.0, 2u8),
        (d.0, 3u8),
    ];
    terms.sort_unstable_by_key(|t| t.0);
    for (_, slot) in terms {
        let cof = match slot {
            0 => orient(pd, pb, pc),
            1 => orient(pa, pd, pc),
            2 => orient(pa, pb, pd),
            _ => -orient(pa, pb, pc),
        };
        if cof != 0.0 {
            return cof > 0.0;
        }
    }
    false
}
