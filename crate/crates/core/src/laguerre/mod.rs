//! Laguerre (power) diagrams of weighted sites clipped to a rectangular
//! window, by default the unit square.
//!
//! The combinatorics come from a regular triangulation (exact predicates);
//! each cell is then the window clipped by the half-planes of its
//! triangulation neighbours, which labels every cell edge with the site or
//! window side on the other side.

mod predicates;
mod triangulation;

use rayon::prelude::*;

use crate::geom::{clip_labeled, ConvexPolygon, Point};
use crate::grid_density::GridDensity;
use crate::{Error, Result};

pub(crate) use triangulation::hilbert_key;
use triangulation::RegularTriangulation;

/// Minimum distance between two sites.
pub const MIN_SITE_SEPARATION: f64 = 1e-12;

/// Site positions with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    positions: Vec<Point>,
    weights: Vec<f64>,
}

impl SiteSet {
    /// Validates positions (inside `[0,1]²`, finite) and weights
    /// (nonnegative, summing to one within `1e-12`).
    pub fn new(positions: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} positions but {} weights",
                positions.len(),
                weights.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::InvalidInput("empty site set".into()));
        }
        for p in &positions {
            if !p.is_finite() || p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "site ({}, {}) outside the unit square",
                    p.x, p.y
                )));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {s}, not 1")));
        }
        Ok(Self { positions, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(positions: Vec<Point>) -> Result<Self> {
        let n = positions.len().max(1);
        Self::new(positions, vec![1.0 / n as f64; n])
    }

    /// Renormalizes arbitrary nonnegative weights onto the simplex.
    pub fn with_unnormalized_weights(positions: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidInput("weights have zero sum".into()));
        }
        Self::new(positions, weights.into_iter().map(|w| w / s).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the positions, keeping the weights. Positions are clamped
    /// into the unit square.
    pub fn with_positions(&self, positions: Vec<Point>) -> Result<Self> {
        let positions = positions.into_iter().map(Point::clamp_unit).collect();
        Self::new(positions, self.weights.clone())
    }

    /// Replaces the weights, keeping the positions.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::with_unnormalized_weights(self.positions.clone(), weights)
    }

    /// First pair of sites closer than [`MIN_SITE_SEPARATION`], if any.
    pub fn find_duplicate(&self) -> Option<(usize, usize)> {
        find_duplicate(&self.positions)
    }
}

/// Laguerre weights, kept at zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential(Vec<f64>);

impl DualPotential {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Wraps `psi` and shifts it to zero mean.
    pub fn new(psi: Vec<f64>) -> Self {
        let mut p = Self(psi);
        p.regauge();
        p
    }

    pub fn regauge(&mut self) {
        if self.0.is_empty() {
            return;
        }
        let mean = self.0.iter().sum::<f64>() / self.0.len() as f64;
        self.0.iter_mut().for_each(|v| *v -= mean);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for DualPotential {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Axis-aligned rectangle the diagram is clipped to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: Point,
    pub max: Point,
}

impl Window {
    pub const UNIT: Window = Window {
        min: Point::new(0.0, 0.0),
        max: Point::new(1.0, 1.0),
    };

    fn polygon(&self) -> Vec<Point> {
        vec![
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ]
    }
}

/// Side of the window an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

const SIDES: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeLabel {
    Site(u32),
    Window(Side),
}

/// Boundary shared by the cells of sites `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedEdge {
    pub i: usize,
    pub j: usize,
    pub a: Point,
    pub b: Point,
}

/// Part of the window boundary owned by `site`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub site: usize,
    pub side: Side,
    pub a: Point,
    pub b: Point,
}

#[derive(Debug, Clone)]
pub struct LaguerreDiagram {
    pub cells: Vec<ConvexPolygon>,
    pub edges: Vec<SharedEdge>,
    pub boundary: Vec<BoundaryEdge>,
    pub window: Window,
}

impl LaguerreDiagram {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(ConvexPolygon::area).sum()
    }

    /// Sites whose cell is empty.
    pub fn hidden_sites(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_empty()).collect()
    }

    /// `μ(L_i)` for each cell.
    pub fn cell_masses(&self, d: &GridDensity) -> Vec<f64> {
        self.cells.par_iter().map(|c| d.polygon_mass(c)).collect()
    }

    /// Writes an SVG debug view: cells outlined, sites as dots.
    pub fn write_svg(&self, sites: &[Point], size: f64, mut w: impl std::io::Write) -> Result<()> {
        let win = self.window;
        let sx = size / (win.max.x - win.min.x);
        let sy = size / (win.max.y - win.min.y);
        let tx = |p: Point| ((p.x - win.min.x) * sx, (p.y - win.min.y) * sy);
        writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        )?;
        writeln!(w, r#"<rect width="{size}" height="{size}" fill="white"/>"#)?;
        for c in self.cells.iter().filter(|c| !c.is_empty()) {
            let pts: Vec<String> = c
                .vertices()
                .iter()
                .map(|&p| {
                    let (x, y) = tx(p);
                    format!("{x:.4},{y:.4}")
                })
                .collect();
            writeln!(
                w,
                r#"<polygon points="{}" fill="none" stroke="black" stroke-width="0.5"/>"#,
                pts.join(" ")
            )?;
        }
        for &p in sites {
            let (x, y) = tx(p);
            writeln!(w, r#"<circle cx="{x:.4}" cy="{y:.4}" r="1.5" fill="red"/>"#)?;
        }
        writeln!(w, "</svg>")?;
        Ok(())
    }
}

/// Power diagram of `sites` with weights `psi`, clipped to `[0,1]²`.
pub fn compute_diagram(sites: &SiteSet, psi: &DualPotential) -> Result<LaguerreDiagram> {
    compute_diagram_in(sites.positions(), psi.as_slice(), Window::UNIT)
}

/// Power diagram of arbitrary points clipped to `window`.
pub fn compute_diagram_in(positions: &[Point], psi: &[f64], window: Window) -> Result<LaguerreDiagram> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::InvalidInput("no sites".into()));
    }
    if psi.len() != n {
        return Err(Error::InvalidInput(format!("{n} sites but {} weights", psi.len())));
    }
    if psi.iter().any(|v| !v.is_finite()) || positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite site or weight".into()));
    }
    if let Some((i, j)) = find_duplicate(positions) {
        return Err(Error::DuplicateSites(i, j));
    }
    let center = window.min.lerp(window.max, 0.5);
    let radius = 0.5 * window.min.dist(window.max);
    let tri = RegularTriangulation::build(positions, psi, center, radius);
    let (adj, present) = tri.adjacency();

    let square = window.polygon();
    let square_labels: Vec<EdgeLabel> = SIDES.iter().map(|&s| EdgeLabel::Window(s)).collect();

    let clipped: Vec<(Vec<Point>, Vec<EdgeLabel>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !present[i] {
                return (Vec::new(), Vec::new());
            }
            let xi = positions[i];
            let (mut verts, mut labels) = (square.clone(), square_labels.clone());
            for &j in &adj[i] {
                let xj = positions[j as usize];
                let normal = (xj - xi) * 2.0;
                let c = xj.norm2() - xi.norm2() + psi[i] - psi[j as usize];
                let (v, l) = clip_labeled(&verts, &labels, normal, c, EdgeLabel::Site(j));
                verts = v;
                labels = l;
                if verts.is_empty() {
                    break;
                }
            }
            let poly = ConvexPolygon::from_vertices_unchecked(verts.clone());
            if verts.len() < 3 || !(poly.signed_area() > 0.0) {
                return (Vec::new(), Vec::new());
            }
            (verts, labels)
        })
        .collect();

    let mut edges = Vec::new();
    let mut boundary = Vec::new();
    for (i, (verts, labels)) in clipped.iter().enumerate() {
        let m = verts.len();
        for k in 0..m {
            let (a, b) = (verts[k], verts[(k + 1) % m]);
            match labels[k] {
                EdgeLabel::Site(j) => {
                    let j = j as usize;
                    // report from the lower index unless that cell lost the
                    // edge to rounding
                    let report = i < j || !clipped[j].1.contains(&EdgeLabel::Site(i as u32));
                    if report && a != b {
                        edges.push(SharedEdge {
                            i: i.min(j),
                            j: i.max(j),
                            a,
                            b,
                        });
                    }
                }
                EdgeLabel::Window(side) => {
                    if a != b {
                        boundary.push(BoundaryEdge { site: i, side, a, b });
                    }
                }
            }
        }
    }
    let cells = clipped
        .into_iter()
        .map(|(v, _)| ConvexPolygon::from_vertices_unchecked(v))
        .collect();
    Ok(LaguerreDiagram {
        cells,
        edges,
        boundary,
        window,
    })
}

/// `μ(L_i)` for each cell of `diag`.
pub fn cell_masses(d: &GridDensity, diag: &LaguerreDiagram) -> Vec<f64> {
    diag.cell_masses(d)
}

fn find_duplicate(positions: &[Point]) -> Option<(usize, usize)> {
    let n = positions.len();
    if n < 2 {
        return None;
    }
    let (mut lo, mut hi) = (positions[0], positions[0]);
    for p in positions {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-300);
    let g = ((n as f64).sqrt().ceil() as usize).max(1);
    let cell = |p: Point| -> (usize, usize) {
        let cx = (((p.x - lo.x) / span) * g as f64).floor() as usize;
        let cy = (((p.y - lo.y) / span) * g as f64).floor() as usize;
        (cx.min(g - 1), cy.min(g - 1))
    };
    let mut buckets: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::with_capacity(n);
    for (i, &p) in positions.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    for (i, &p) in positions.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                if let Some(b) = buckets.get(&(x as usize, y as usize)) {
                    for &j in b {
                        if j > i && p.dist(positions[j]) <= MIN_SITE_SEPARATION {
                            return Some((i, j));
                        }
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_sites() -> SiteSet {
        SiteSet::uniform(vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)]).unwrap()
    }

    fn xs(c: &ConvexPolygon) -> (f64, f64) {
        let lo = c.vertices().iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi = c.vertices().iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    #[test]
    fn single_site_owns_the_square() {
        let s = SiteSet::uniform(vec![Point::new(0.3, 0.8)]).unwrap();
        for psi in [0.0, 5.0, -3.0] {
            let d = compute_diagram(&s, &DualPotential(vec![psi])).unwrap();
            assert!((d.cells[0].area() - 1.0).abs() < 1e-15);
            assert!(d.edges.is_empty());
            assert_eq!(d.boundary.len(), 4);
        }
    }

    #[test]
    fn symmetric_pair_splits_at_half() {
        let d = compute_diagram(&two_sites(), &DualPotential::zeros(2)).unwrap();
        assert_eq!(xs(&d.cells[0]), (0.0, 0.5));
        assert_eq!(xs(&d.cells[1]), (0.5, 1.0));
        assert_eq!(d.edges.len(), 1);
        let e = d.edges[0];
        assert_eq!((e.i, e.j), (0, 1));
        assert!((e.a.x - 0.5).abs() < 1e-15 && (e.b.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_pair_moves_the_split() {
        // x = 0.5 + (ψ1 − ψ2) / (2 (b_x − a_x)) = 0.6
        let d = compute_diagram(&two_sites(), &DualPotential(vec![0.05, -0.05])).unwrap();
        let (_, hi) = xs(&d.cells[0]);
        assert!((hi - 0.6).abs() < 1e-14);
        assert!((d.cells[0].area() - 0.6).abs() < 1e-14);
    }

    #[test]
    fn duplicate_sites_are_rejected() {
        let s = SiteSet::uniform(vec![Point::new(0.2, 0.2), Point::new(0.7, 0.1), Point::new(0.2, 0.2)])
            .unwrap();
        assert!(matches!(
            compute_diagram(&s, &DualPotential::zeros(3)),
            Err(Error::DuplicateSites(0, 2))
        ));
    }

    #[test]
    fn masses_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dens = GridDensity::from_fn(16, 16, |x, y| 1.0 + x * y).unwrap().normalize().unwrap();
        let n = 40;
        let s = SiteSet::uniform((0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()).unwrap();
        let psi = DualPotential::new((0..n).map(|_| rng.gen_range(-0.02..0.02)).collect());
        let d = compute_diagram(&s, &psi).unwrap();
        let m = cell_masses(&dens, &d);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let two = compute_diagram(&two_sites(), &DualPotential::zeros(2)).unwrap();
        let m2 = cell_masses(&GridDensity::uniform(), &two);
        assert!((m2[0] - 0.5).abs() < 1e-15 && (m2[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hidden_site_has_empty_cell() {
        let s = SiteSet::uniform(vec![Point::new(0.5, 0.5), Point::new(0.52, 0.5), Point::new(0.1, 0.1)])
            .unwrap();
        let d = compute_diagram(&s, &DualPotential::new(vec![0.05, 0.0, 0.0])).unwrap();
        assert_eq!(d.hidden_sites(), vec![1]);
        assert!((d.total_area() - 1.0).abs() < 1e-12);
        assert!(d.edges.iter().all(|e| e.i != 1 && e.j != 1));
    }

    #[test]
    fn shared_edges_match_both_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100;
        let s = SiteSet::uniform((0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()).unwrap();
        let psi = DualPotential::new((0..n).map(|_| rng.gen_range(-0.01..0.01)).collect());
        let d = compute_diagram(&s, &psi).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in &d.edges {
            assert!(seen.insert((e.i, e.j)), "pair reported twice");
            let mid = e.a.lerp(e.b, 0.5);
            let pi = (mid - s.positions()[e.i]).norm2() - psi[e.i];
            let pj = (mid - s.positions()[e.j]).norm2() - psi[e.j];
            assert!((pi - pj).abs() < 1e-12);
        }
    }
}
