//! Target densities on a regular grid and exact polygon quadrature.
//!
//! The density is bilinear on each grid cell. Area integrals over a convex
//! polygon are turned into line integrals along its boundary with Green's
//! formula, using the x-antiderivative
//!
//! ```text
//! P_f(x, y) = ∫_0^x ρ(t, y) f(t, y) dt
//! ```
//!
//! so that `∫_poly ρ f dA = ∮ P_f dy`. Along every node row the 1-D
//! antiderivative is piecewise polynomial and its value at each vertical grid
//! line is tabulated once; inside a cell `P_f` is the linear blend of the two
//! bounding node rows. Boundary edges are split at grid lines and each piece
//! is integrated by 3-point Gauss–Legendre, which is exact for the degree ≤ 5
//! polynomials that appear.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::geom::{ConvexPolygon, Point};
use crate::{Error, Result};

/// 3-point Gauss–Legendre rule on `[0, 1]`.
const GL3_NODES: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Bilinear density on `width × height` cells covering `[0,1]²`.
///
/// Node `(i, j)` sits at `(i / width, j / height)` and is stored at
/// `j * (width + 1) + i`.
#[derive(Debug, Clone)]
pub struct GridDensity {
    width: usize,
    height: usize,
    samples: Vec<f64>,
    total_mass: f64,
    /// `∫_0^{x_i} ρ_j(t) t^p dt` for node row `j`, column line `i`, `p = 0, 1, 2`.
    prefix: Vec<[f64; 3]>,
}

/// Zeroth, first and second moments of `ρ` over a region.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    /// `∫ ρ`
    pub mass: f64,
    /// `∫ ρ x`
    pub mx: f64,
    /// `∫ ρ y`
    pub my: f64,
    /// `∫ ρ (x² + y²)`
    pub m2: f64,
}

impl Moments {
    /// `∫ ρ ‖x − site‖²`.
    pub fn cost(&self, site: Point) -> f64 {
        let c = self.m2 - 2.0 * (site.x * self.mx + site.y * self.my) + site.norm2() * self.mass;
        c.max(0.0)
    }

    pub fn barycenter(&self) -> Option<Point> {
        (self.mass > 0.0).then(|| Point::new(self.mx / self.mass, self.my / self.mass))
    }
}

impl GridDensity {
    /// Builds a density from node samples (`(width+1) * (height+1)` values,
    /// row-major). Negative samples are clamped to zero.
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid needs at least one cell".into()));
        }
        if samples.len() != (width + 1) * (height + 1) {
            return Err(Error::InvalidInput(format!(
                "expected {} samples for a {}x{} grid, got {}",
                (width + 1) * (height + 1),
                width,
                height,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite density sample".into()));
        }
        let samples: Vec<f64> = samples.into_iter().map(|v| v.max(0.0)).collect();
        let mut d = Self {
            width,
            height,
            samples,
            total_mass: 0.0,
            prefix: Vec::new(),
        };
        d.rebuild();
        Ok(d)
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity((width + 1) * (height + 1));
        for j in 0..=height {
            for i in 0..=width {
                samples.push(f(i as f64 / width as f64, j as f64 / height as f64));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn uniform() -> Self {
        Self::from_fn(1, 1, |_, _| 1.0).expect("valid grid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize, j: usize) -> f64 {
        self.samples[j * (self.width + 1) + i]
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn max_value(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    fn rebuild(&mut self) {
        let (w, h) = (self.width, self.height);
        let hx = 1.0 / w as f64;
        // trapezoidal weights are exact for bilinear patches
        let mut mass = 0.0;
        for j in 0..=h {
            let wy = if j == 0 || j == h { 0.5 } else { 1.0 };
            for i in 0..=w {
                let wx = if i == 0 || i == w { 0.5 } else { 1.0 };
                mass += wx * wy * self.samples[j * (w + 1) + i];
            }
        }
        self.total_mass = mass / (w * h) as f64;

        let mut prefix = vec![[0.0; 3]; (w + 1) * (h + 1)];
        for j in 0..=h {
            let row = j * (w + 1);
            for i in 0..w {
                let a = self.samples[row + i];
                let b = self.samples[row + i + 1] - a;
                let local = row_antiderivative(a, b, i as f64 * hx, hx, 1.0);
                let prev = prefix[row + i];
                prefix[row + i + 1] = [prev[0] + local[0], prev[1] + local[1], prev[2] + local[2]];
            }
        }
        self.prefix = prefix;
    }

    /// Rescales the samples so that the total mass is one.
    pub fn normalize(&self) -> Result<GridDensity> {
        if !(self.total_mass > 0.0) {
            return Err(Error::ZeroMassDensity);
        }
        let s = 1.0 / self.total_mass;
        let mut d = self.clone();
        d.samples.iter_mut().for_each(|v| *v *= s);
        d.rebuild();
        Ok(d)
    }

    #[inline]
    fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let j = ((p.y * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (i, j)
    }

    /// Bilinear interpolation at `p` (clamped to the unit square).
    pub fn value(&self, p: Point) -> f64 {
        let p = p.clamp_unit();
        let (i, j) = self.cell_of(p);
        self.value_in_cell(p, i, j)
    }

    #[inline]
    fn value_in_cell(&self, p: Point, i: usize, j: usize) -> f64 {
        let u = p.x * self.width as f64 - i as f64;
        let v = p.y * self.height as f64 - j as f64;
        let r0 = j * (self.width + 1) + i;
        let r1 = r0 + self.width + 1;
        let bottom = self.samples[r0] + u * (self.samples[r0 + 1] - self.samples[r0]);
        let top = self.samples[r1] + u * (self.samples[r1 + 1] - self.samples[r1]);
        bottom + v * (top - bottom)
    }

    /// `[P_1, P_x, P_xx]` at `p`, where cell `(i, j)` contains `p`.
    #[inline]
    fn antiderivatives(&self, p: Point, i: usize, j: usize) -> [f64; 3] {
        let hx = 1.0 / self.width as f64;
        let x0 = i as f64 * hx;
        let u = (p.x - x0) / hx;
        let v = p.y * self.height as f64 - j as f64;
        let row_value = |r: usize| {
            let k = r * (self.width + 1) + i;
            let a = self.samples[k];
            let b = self.samples[k + 1] - a;
            let loc = row_antiderivative(a, b, x0, hx, u);
            let pre = self.prefix[k];
            [pre[0] + loc[0], pre[1] + loc[1], pre[2] + loc[2]]
        };
        let lo = row_value(j);
        let hi = row_value(j + 1);
        [
            lo[0] + v * (hi[0] - lo[0]),
            lo[1] + v * (hi[1] - lo[1]),
            lo[2] + v * (hi[2] - lo[2]),
        ]
    }

    /// Splits segment `a → b` at grid lines and calls `f(p0, p1, i, j)` for
    /// every piece with the cell that contains it.
    fn for_each_piece(&self, a: Point, b: Point, mut f: impl FnMut(Point, Point, usize, usize)) {
        let mut ts: Vec<f64> = Vec::with_capacity(16);
        ts.push(0.0);
        push_crossings(&mut ts, a.x, b.x, self.width);
        push_crossings(&mut ts, a.y, b.y, self.height);
        ts.push(1.0);
        ts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let mid = a.lerp(b, 0.5 * (t0 + t1));
            let (i, j) = self.cell_of(mid);
            f(a.lerp(b, t0), a.lerp(b, t1), i, j);
        }
    }

    /// Moments of `ρ` over a convex polygon (counter-clockwise).
    pub fn polygon_moments(&self, poly: &ConvexPolygon) -> Moments {
        if poly.is_empty() {
            return Moments::default();
        }
        let mut acc = [0.0f64; 5];
        for (a, b) in poly.edges() {
            if a.y == b.y {
                continue;
            }
            self.for_each_piece(a, b, |p0, p1, i, j| {
                let dy = p1.y - p0.y;
                for q in 0..3 {
                    let p = p0.lerp(p1, GL3_NODES[q]);
                    let [f0, f1, f2] = self.antiderivatives(p, i, j);
                    let w = GL3_WEIGHTS[q] * dy;
                    acc[0] += w * f0;
                    acc[1] += w * f1;
                    acc[2] += w * p.y * f0;
                    acc[3] += w * f2;
                    acc[4] += w * p.y * p.y * f0;
                }
            });
        }
        Moments {
            mass: acc[0],
            mx: acc[1],
            my: acc[2],
            m2: acc[3] + acc[4],
        }
    }

    /// `∫_poly ρ dx`.
    pub fn polygon_mass(&self, poly: &ConvexPolygon) -> f64 {
        self.polygon_moments(poly).mass
    }

    /// `ρ`-weighted barycenter of `poly`.
    pub fn polygon_barycenter(&self, poly: &ConvexPolygon) -> Result<Point> {
        let m = self.polygon_moments(poly);
        if m.mass <= f64::EPSILON * self.total_mass.max(1.0) {
            return Err(Error::EmptyCell(m.mass));
        }
        Ok(Point::new(m.mx / m.mass, m.my / m.mass))
    }

    /// `∫_poly ‖x − site‖² ρ dx`.
    pub fn polygon_cost(&self, poly: &ConvexPolygon, site: Point) -> f64 {
        self.polygon_moments(poly).cost(site)
    }

    /// Line integral `∫ ρ ds` along the segment `a → b`.
    pub fn edge_density_integral(&self, a: Point, b: Point) -> f64 {
        let len = a.dist(b);
        if len == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        self.for_each_piece(a, b, |p0, p1, i, j| {
            let l = p0.dist(p1);
            for q in 0..3 {
                acc += GL3_WEIGHTS[q] * l * self.value_in_cell(p0.lerp(p1, GL3_NODES[q]), i, j);
            }
        });
        acc
    }

    /// Reads the text fixture format: a `width height` header (cell counts)
    /// followed by `(width+1)*(height+1)` node values in row-major order.
    pub fn read_grid(reader: impl BufRead) -> Result<GridDensity> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        let mut next_usize = |what: &str| -> Result<usize> {
            it.next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let width = next_usize("width")?;
        let height = next_usize("height")?;
        let samples = it
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("sample {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        GridDensity::new(width, height, samples)
    }

    pub fn write_grid(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.width, self.height)?;
        for row in self.samples.chunks(self.width + 1) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GridDensity> {
        let f = std::fs::File::open(path)?;
        Self::read_grid(std::io::BufReader::new(f))
    }
}

/// Parameters `t ∈ (0,1)` where the coordinate `c0 + t (c1 - c0)` crosses a
/// multiple of `1 / cells`.
fn push_crossings(ts: &mut Vec<f64>, c0: f64, c1: f64, cells: usize) {
    if c0 == c1 {
        return;
    }
    let n = cells as f64;
    let (lo, hi) = if c0 < c1 { (c0, c1) } else { (c1, c0) };
    let k0 = (lo * n).floor() as i64 + 1;
    let k1 = (hi * n).ceil() as i64 - 1;
    let inv = 1.0 / (c1 - c0);
    for k in k0.max(1)..=k1.min(cells as i64 - 1) {
        let t = (k as f64 / n - c0) * inv;
        if t > 0.0 && t < 1.0 {
            ts.push(t);
        }
    }
}

/// `∫_{x0}^{x0 + u h} (a + b s) t^p dt` for `p = 0, 1, 2`, where
/// `s = (t - x0) / h` is the local coordinate of a linear row segment.
#[inline]
fn row_antiderivative(a: f64, b: f64, x0: f64, h: f64, u: f64) -> [f64; 3] {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let p0 = a * u + b * u2 / 2.0;
    let p1 = a * x0 * u + (a * h + b * x0) * u2 / 2.0 + b * h * u3 / 3.0;
    let p2 = a * x0 * x0 * u
        + (2.0 * a * x0 * h + b * x0 * x0) * u2 / 2.0
        + (a * h * h + 2.0 * b * x0 * h) * u3 / 3.0
        + b * h * h * u4 / 4.0;
    [h * p0, h * p1, h * p2]
}
