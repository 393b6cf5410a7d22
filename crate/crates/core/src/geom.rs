//! Planar points and convex polygons.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }

    pub fn clamp_unit(self) -> Point {
        Point::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point {
    #[inline]
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

/// Tolerance for vertex containment in the unit square.
pub const UNIT_SQUARE_TOL: f64 = 1e-9;

/// A convex polygon with counter-clockwise vertices (y axis pointing up in
/// the usual mathematical orientation, i.e. positive signed area).
///
/// An empty vertex list is the empty polygon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self { vertices: Vec::new() }
    }

    /// Wraps `vertices` without checking convexity.
    pub fn from_vertices_unchecked(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    /// Validates orientation, convexity and containment in `[0,1]²`.
    /// Vertices within `UNIT_SQUARE_TOL` of the square are clamped into it.
    pub fn new(vertices: Vec<Point>) -> crate::Result<Self> {
        let mut vertices = vertices;
        for v in vertices.iter_mut() {
            if !v.is_finite()
                || v.x < -UNIT_SQUARE_TOL
                || v.y < -UNIT_SQUARE_TOL
                || v.x > 1.0 + UNIT_SQUARE_TOL
                || v.y > 1.0 + UNIT_SQUARE_TOL
            {
                return Err(crate::Error::InvalidInput(format!(
                    "polygon vertex ({}, {}) outside the unit square",
                    v.x, v.y
                )));
            }
            *v = v.clamp_unit();
        }
        let poly = Self { vertices };
        if !poly.is_convex_ccw(1e-12) {
            return Err(crate::Error::InvalidInput(
                "polygon is not convex and counter-clockwise".into(),
            ));
        }
        Ok(poly)
    }

    pub fn unit_square() -> Self {
        Self {
            vertices: vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ],
        }
    }

    /// Axis-aligned rectangle `[x0,x1]×[y0,y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Iterator over directed edges `(v[k], v[k+1])`, closing the loop.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Convexity check: every turn is left within `tol`.
    pub fn is_convex_ccw(&self, tol: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return true;
        }
        if self.signed_area() < 0.0 {
            return false;
        }
        (0..n).all(|k| {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            let c = self.vertices[(k + 2) % n];
            (b - a).cross(c - b) >= -tol
        })
    }

    /// Inclusive containment test with tolerance on the edge half-planes.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        self.edges().all(|(a, b)| {
            let e = b - a;
            let len = e.norm();
            len == 0.0 || e.cross(p - a) >= -tol * len
        })
    }

    /// Clips by the half-plane `{p : n·p <= c}` (Sutherland–Hodgman step).
    pub fn clip_halfplane(&self, n: Point, c: f64) -> ConvexPolygon {
        let (poly, _) = clip_labeled(&self.vertices, &vec![0; self.vertices.len()], n, c, 0);
        ConvexPolygon { vertices: poly }
    }
}

/// Sutherland–Hodgman clip of a labeled polygon by `{p : n·p <= c}`.
///
/// `labels[k]` tags the edge `(v[k], v[k+1])`; the edge created along the
/// clipping line gets `new_label`.
pub(crate) fn clip_labeled<L: Copy>(
    verts: &[Point],
    labels: &[L],
    n: Point,
    c: f64,
    new_label: L,
) -> (Vec<Point>, Vec<L>) {
    let m = verts.len();
    let mut out = Vec::with_capacity(m + 1);
    let mut out_labels = Vec::with_capacity(m + 1);
    if m == 0 {
        return (out, out_labels);
    }
    let side: Vec<f64> = verts.iter().map(|v| n.dot(*v) - c).collect();
    if side.iter().all(|&s| s <= 0.0) {
        return (verts.to_vec(), labels.to_vec());
    }
    for k in 0..m {
        let k1 = (k + 1) % m;
        let (a, b) = (verts[k], verts[k1]);
        let (sa, sb) = (side[k], side[k1]);
        if sa <= 0.0 {
            out.push(a);
            if sb > 0.0 {
                if sa < 0.0 {
                    out_labels.push(labels[k]);
                    out.push(a.lerp(b, sa / (sa - sb)));
                }
                // the boundary along the clipping line starts here
                out_labels.push(new_label);
            } else {
                out_labels.push(labels[k]);
            }
        } else if sb < 0.0 {
            out.push(a.lerp(b, sa / (sa - sb)));
            out_labels.push(labels[k]);
        }
    }
    (out, out_labels)
}
