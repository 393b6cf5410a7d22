//! Euclidean projection of point sequences onto constrained curve sets by
//! ADMM.
//!
//! A set is `{x : Aᵢx ∈ Yᵢ, Bx = b}` where `Aᵢ` are difference operators
//! applied to each coordinate and `Yᵢ` bounds every row of `Aᵢx`.
//! Point sequences are flattened as `[x₀, y₀, x₁, y₁, …]` when a single
//! vector is needed.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::linalg::{self, pcg, BandCholesky};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `x[i+1] − x[i]`, `n − 1` rows.
    FirstOpen,
    /// `x[i+1] − x[i]` with wrap-around, `n` rows.
    FirstCircular,
    /// `A₁ᵀA₁` for the open first difference.
    SecondOpen,
    /// `A₁ᵀA₁` for the circular first difference.
    SecondCircular,
    /// `x[2k+1] − x[2k]`: independent two-point segments.
    Pairs,
    Identity,
}

impl OperatorKind {
    fn is_first_difference(self) -> bool {
        matches!(self, Self::FirstOpen | Self::FirstCircular | Self::Pairs)
    }
}

/// Sparse linear operator acting identically on both coordinates.
#[derive(Debug, Clone)]
pub struct DiffOperator {
    kind: OperatorKind,
    n: usize,
    rows: Vec<Vec<(u32, f64)>>,
    norm: f64,
}

impl DiffOperator {
    pub fn new(kind: OperatorKind, n: usize) -> Result<Self> {
        let min = match kind {
            OperatorKind::Identity => 1,
            OperatorKind::FirstCircular | OperatorKind::SecondCircular => 3,
            _ => 2,
        };
        if n < min {
            return Err(Error::InvalidInput(format!("{kind:?} needs at least {min} points")));
        }
        let u = |i: usize| i as u32;
        let rows: Vec<Vec<(u32, f64)>> = match kind {
            OperatorKind::FirstOpen => (0..n - 1).map(|i| vec![(u(i), -1.0), (u(i + 1), 1.0)]).collect(),
            OperatorKind::FirstCircular => (0..n).map(|i| vec![(u(i), -1.0), (u((i + 1) % n), 1.0)]).collect(),
            OperatorKind::SecondOpen => (0..n)
                .map(|i| {
                    if i == 0 {
                        vec![(0, 1.0), (1, -1.0)]
                    } else if i == n - 1 {
                        vec![(u(n - 2), -1.0), (u(n - 1), 1.0)]
                    } else {
                        vec![(u(i - 1), -1.0), (u(i), 2.0), (u(i + 1), -1.0)]
                    }
                })
                .collect(),
            OperatorKind::SecondCircular => (0..n)
                .map(|i| vec![(u((i + n - 1) % n), -1.0), (u(i), 2.0), (u((i + 1) % n), -1.0)])
                .collect(),
            OperatorKind::Pairs => (0..n / 2).map(|k| vec![(u(2 * k), -1.0), (u(2 * k + 1), 1.0)]).collect(),
            OperatorKind::Identity => (0..n).map(|i| vec![(u(i), 1.0)]).collect(),
        };
        let pi = std::f64::consts::PI;
        let first_open = 2.0 * (pi / (2.0 * n as f64)).cos();
        let first_circ = 2.0 * (pi * (n / 2) as f64 / n as f64).sin().abs();
        let norm = match kind {
            OperatorKind::FirstOpen => first_open,
            OperatorKind::FirstCircular => first_circ,
            OperatorKind::SecondOpen => first_open * first_open,
            OperatorKind::SecondCircular => first_circ * first_circ,
            OperatorKind::Pairs => std::f64::consts::SQRT_2,
            OperatorKind::Identity => 1.0,
        };
        Ok(Self { kind, n, rows, norm })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Number of points acted on.
    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    /// Spectral norm `‖A‖₂` (closed form).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn apply(&self, x: &[Point]) -> Vec<Point> {
        self.rows
            .iter()
            .map(|r| r.iter().fold(Point::new(0.0, 0.0), |acc, &(c, v)| acc + x[c as usize] * v))
            .collect()
    }

    /// `out += s · Aᵀ y`
    pub fn apply_t_add(&self, y: &[Point], s: f64, out: &mut [Point]) {
        for (r, yr) in self.rows.iter().zip(y) {
            for &(c, v) in r {
                out[c as usize] += *yr * (s * v);
            }
        }
    }

    pub fn apply_t(&self, y: &[Point]) -> Vec<Point> {
        let mut out = vec![Point::new(0.0, 0.0); self.n];
        self.apply_t_add(y, 1.0, &mut out);
        out
    }

    /// Squared column norms, i.e. the diagonal of `AᵀA`.
    pub fn col_sq_norms(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in &self.rows {
            for &(c, v) in r {
                d[c as usize] += v * v;
            }
        }
        d
    }

    /// `‖A‖₂` estimated by power iteration on `AᵀA`.
    pub fn power_norm(&self, iters: usize) -> f64 {
        let mut v: Vec<Point> = (0..self.n)
            .map(|i| Point::new(((i * 37 + 11) % 97) as f64 - 48.0, ((i * 53 + 5) % 89) as f64 - 44.0))
            .collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let nv = v.iter().map(|p| p.norm2()).sum::<f64>().sqrt();
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|p| *p = *p * (1.0 / nv));
            let w = self.apply_t(&self.apply(&v));
            lambda = v.iter().zip(&w).map(|(a, b)| a.dot(*b)).sum::<f64>();
            v = w;
        }
        lambda.max(0.0).sqrt()
    }

    /// Dense matrix of the scalar operator (rows × points).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                m[(i, c as usize)] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case")]
pub enum AdmissibleSet {
    /// `‖row‖ ≤ alpha`
    Ball { alpha: f64 },
    /// `‖row‖ = alpha`
    Sphere { alpha: f64 },
    /// `lo ≤ row ≤ hi` coordinate-wise.
    Box { lo: f64, hi: f64 },
}

impl AdmissibleSet {
    fn scaled(self, g: f64) -> Self {
        match self {
            Self::Ball { alpha } => Self::Ball { alpha: alpha * g },
            Self::Sphere { alpha } => Self::Sphere { alpha: alpha * g },
            Self::Box { lo, hi } => Self::Box { lo: lo * g, hi: hi * g },
        }
    }

    /// Distance of a row from the set.
    pub fn violation(self, p: Point) -> f64 {
        match self {
            Self::Ball { alpha } => (p.norm() - alpha).max(0.0),
            Self::Sphere { alpha } => (p.norm() - alpha).abs(),
            Self::Box { lo, hi } => {
                let dx = (lo - p.x).max(p.x - hi).max(0.0);
                let dy = (lo - p.y).max(p.y - hi).max(0.0);
                dx.hypot(dy)
            }
        }
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, Self::Sphere { .. })
    }
}

/// Projects every row of `block` onto `set`. A zero row projected on a
/// sphere goes to `(alpha, 0)`.
pub fn project_admissible(block: &mut [Point], set: AdmissibleSet) {
    match set {
        AdmissibleSet::Ball { alpha } => {
            for p in block.iter_mut() {
                let r = p.norm();
                if r > alpha {
                    *p = *p * (alpha / r);
                }
            }
        }
        AdmissibleSet::Sphere { alpha } => {
            for p in block.iter_mut() {
                let r = p.norm();
                *p = if r > 0.0 { *p * (alpha / r) } else { Point::new(alpha, 0.0) };
            }
        }
        AdmissibleSet::Box { lo, hi } => {
            for p in block.iter_mut() {
                *p = Point::new(p.x.clamp(lo, hi), p.y.clamp(lo, hi));
            }
        }
    }
}

/// Linear equality constraints `B x = b` on the flattened coordinates.
#[derive(Debug, Clone, Default)]
pub struct LinearConstraints {
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl LinearConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds one scalar row over flattened coordinates.
    pub fn push_row(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    /// `x[i] = p`
    pub fn anchor(mut self, i: usize, p: Point) -> Self {
        self.push_row(vec![(2 * i, 1.0)], p.x);
        self.push_row(vec![(2 * i + 1, 1.0)], p.y);
        self
    }

    /// `x[i] = x[j]`
    pub fn coincide(mut self, i: usize, j: usize) -> Self {
        for c in 0..2 {
            self.push_row(vec![(2 * i + c, 1.0), (2 * j + c, -1.0)], 0.0);
        }
        self
    }

    /// `mean(x) = p` over `n` points.
    pub fn mean(mut self, n: usize, p: Point) -> Self {
        let w = 1.0 / n as f64;
        self.push_row((0..n).map(|i| (2 * i, w)).collect(), p.x);
        self.push_row((0..n).map(|i| (2 * i + 1, w)).collect(), p.y);
        self
    }

    pub fn residual(&self, x: &[Point]) -> Vec<f64> {
        let flat = flatten(x);
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(r, b)| r.iter().map(|&(c, v)| v * flat[c]).sum::<f64>() - b)
            .collect()
    }

    fn dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), dim);
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                m[(i, c)] += v;
            }
        }
        m
    }
}

/// Constraint blocks plus linear equalities for curves of `n` points.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    n: usize,
    blocks: Vec<(DiffOperator, AdmissibleSet)>,
    eq: LinearConstraints,
}

impl ConstraintSystem {
    pub fn new(n: usize, blocks: Vec<(DiffOperator, AdmissibleSet)>, eq: LinearConstraints) -> Result<Self> {
        for (op, set) in &blocks {
            if op.cols() != n {
                return Err(Error::InvalidInput(format!("operator acts on {} points, curve has {n}", op.cols())));
            }
            if matches!(set, AdmissibleSet::Sphere { .. }) && !op.kind().is_first_difference() {
                return Err(Error::InvalidInput("sphere sets need a first-difference operator".into()));
            }
            let bad = match *set {
                AdmissibleSet::Ball { alpha } | AdmissibleSet::Sphere { alpha } => !(alpha >= 0.0 && alpha.is_finite()),
                AdmissibleSet::Box { lo, hi } => !(lo <= hi),
            };
            if bad {
                return Err(Error::InvalidInput(format!("bad admissible set {set:?}")));
            }
        }
        // with fixed segment lengths α₁, the end rows of A₁ᵀA₁ on an open
        // curve equal the first and last segments, so they have norm α₁
        let sphere_open = blocks.iter().find_map(|(op, set)| match (op.kind(), set) {
            (OperatorKind::FirstOpen, AdmissibleSet::Sphere { alpha }) => Some(*alpha),
            _ => None,
        });
        if let Some(a1) = sphere_open {
            for (op, set) in &blocks {
                if let (OperatorKind::SecondOpen, AdmissibleSet::Ball { alpha }) = (op.kind(), set) {
                    if *alpha < a1 {
                        return Err(Error::InfeasibleConstraints(format!(
                            "open curve with segment length {a1} cannot have end rows of A₂ below {alpha}"
                        )));
                    }
                }
            }
        }
        let dim = 2 * n;
        if eq.rows.iter().flatten().any(|&(c, _)| c >= dim) {
            return Err(Error::InvalidInput("equality row refers to a missing coordinate".into()));
        }
        if !eq.is_empty() {
            let b = eq.dense(dim);
            let sv = b.singular_values();
            let max = sv.max();
            if eq.len() > dim || sv.iter().any(|&s| s <= 1e-10 * max.max(1.0)) {
                return Err(Error::SingularKkt);
            }
        }
        Ok(Self { n, blocks, eq })
    }

    /// Speed `‖A₁x‖ ≤ a1` and acceleration `‖A₂x‖ ≤ a2`.
    pub fn kinematic(n: usize, circular: bool, a1: f64, a2: f64) -> Result<Self> {
        let (k1, k2) = Self::kinds(circular);
        Self::new(
            n,
            vec![
                (DiffOperator::new(k1, n)?, AdmissibleSet::Ball { alpha: a1 }),
                (DiffOperator::new(k2, n)?, AdmissibleSet::Ball { alpha: a2 }),
            ],
            LinearConstraints::new(),
        )
    }

    /// Segment length `= a1` and `‖A₂x‖ ≤ a2`.
    pub fn geometric(n: usize, circular: bool, a1: f64, a2: f64) -> Result<Self> {
        let (k1, k2) = Self::kinds(circular);
        Self::new(
            n,
            vec![
                (DiffOperator::new(k1, n)?, AdmissibleSet::Sphere { alpha: a1 }),
                (DiffOperator::new(k2, n)?, AdmissibleSet::Ball { alpha: a2 }),
            ],
            LinearConstraints::new(),
        )
    }

    /// `n/2` segments of length `len`.
    pub fn dashes(n: usize, len: f64) -> Result<Self> {
        Self::new(
            n,
            vec![(DiffOperator::new(OperatorKind::Pairs, n)?, AdmissibleSet::Sphere { alpha: len })],
            LinearConstraints::new(),
        )
    }

    fn kinds(circular: bool) -> (OperatorKind, OperatorKind) {
        if circular {
            (OperatorKind::FirstCircular, OperatorKind::SecondCircular)
        } else {
            (OperatorKind::FirstOpen, OperatorKind::SecondOpen)
        }
    }

    /// Adds the constraint that points stay in `[lo, hi]²`.
    pub fn with_box(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.blocks
            .push((DiffOperator::new(OperatorKind::Identity, self.n)?, AdmissibleSet::Box { lo, hi }));
        Self::new(self.n, self.blocks, self.eq)
    }

    pub fn with_equalities(self, eq: LinearConstraints) -> Result<Self> {
        Self::new(self.n, self.blocks, eq)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn blocks(&self) -> &[(DiffOperator, AdmissibleSet)] {
        &self.blocks
    }

    pub fn equalities(&self) -> &LinearConstraints {
        &self.eq
    }

    pub fn is_convex(&self) -> bool {
        self.blocks.iter().all(|(_, s)| s.is_convex())
    }

    /// Largest distance of any row from its admissible set, and the largest
    /// equality residual.
    pub fn violation(&self, x: &[Point]) -> (f64, f64) {
        let mut v: f64 = 0.0;
        for (op, set) in &self.blocks {
            for r in op.apply(x) {
                v = v.max(set.violation(r));
            }
        }
        let e = linalg::norm_inf(&self.eq.residual(x));
        (v, e)
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOptions {
    pub beta: f64,
    /// Absolute tolerance on both primal and dual residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Rebalance `β` when one residual dominates the other.
    pub adaptive_beta: bool,
    /// Per-point weights of the projection metric, `None` for Euclidean.
    pub metric: Option<Vec<f64>>,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tol: 1e-6,
            max_iter: 20_000,
            adaptive_beta: false,
            metric: None,
        }
    }
}

/// Iterates kept between calls for warm starts.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Vec<Point>,
    pub y: Vec<Vec<Point>>,
    pub lambda: Vec<Vec<Point>>,
    pub beta: f64,
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub x: Vec<Point>,
    pub state: AdmmState,
    pub iterations: usize,
    pub converged: bool,
}

/// Projects `z` onto the set described by `cs`.
pub fn admm_project(z: &[Point], cs: &ConstraintSystem, beta: f64, tol: f64) -> Result<AdmmOutcome> {
    admm_project_with(
        z,
        cs,
        &AdmmOptions {
            beta,
            tol,
            ..Default::default()
        },
        None,
    )
}

pub fn admm_project_with(
    z: &[Point],
    cs: &ConstraintSystem,
    opts: &AdmmOptions,
    warm: Option<&AdmmState>,
) -> Result<AdmmOutcome> {
    let n = cs.n;
    if z.len() != n {
        return Err(Error::InvalidInput(format!("curve has {} points, constraints expect {n}", z.len())));
    }
    if !(opts.beta > 0.0) {
        return Err(Error::InvalidInput("beta must be positive".into()));
    }
    let metric = match &opts.metric {
        Some(m) if m.len() == n && m.iter().all(|&v| v > 0.0) => {
            let mean = m.iter().sum::<f64>() / n as f64;
            m.iter().map(|v| v / mean).collect()
        }
        Some(_) => return Err(Error::InvalidInput("metric must have one positive weight per point".into())),
        None => vec![1.0; n],
    };
    let gammas: Vec<f64> = cs.blocks.iter().map(|(op, _)| op.norm()).collect();
    let sets: Vec<AdmissibleSet> = cs.blocks.iter().zip(&gammas).map(|((_, s), &g)| s.scaled(g)).collect();
    let apply_a = |x: &[Point]| -> Vec<Vec<Point>> {
        cs.blocks
            .iter()
            .zip(&gammas)
            .map(|((op, _), &g)| op.apply(x).into_iter().map(|p| p * g).collect())
            .collect()
    };
    let apply_at = |y: &[Vec<Point>]| -> Vec<Point> {
        let mut out = vec![Point::new(0.0, 0.0); n];
        for (((op, _), &g), yb) in cs.blocks.iter().zip(&gammas).zip(y) {
            op.apply_t_add(yb, g, &mut out);
        }
        out
    };

    let mut beta = opts.beta;
    let mut solver = KktSolver::new(cs, &gammas, &metric, beta)?;
    let wz: Vec<Point> = z.iter().zip(&metric).map(|(p, m)| *p * *m).collect();

    let (mut x, mut y, mut lambda): (Vec<Point>, Vec<Vec<Point>>, Vec<Vec<Point>>) = match warm {
        Some(w) if w.x.len() == n && w.y.len() == cs.blocks.len() => {
            let scale = w.beta / beta;
            let lambda = w.lambda.iter().map(|b| b.iter().map(|p| *p * scale).collect()).collect();
            (w.x.clone(), w.y.clone(), lambda)
        }
        _ => {
            let ax = apply_a(z);
            let zeros = ax.iter().map(|b| vec![Point::new(0.0, 0.0); b.len()]).collect();
            (z.to_vec(), ax, zeros)
        }
    };
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        iterations = it;
        let ax = apply_a(&x);
        let y_prev = std::mem::take(&mut y);
        y = ax
            .iter()
            .zip(&lambda)
            .zip(&sets)
            .map(|((a, l), &set)| {
                let mut b: Vec<Point> = a.iter().zip(l).map(|(p, q)| *p + *q).collect();
                project_admissible(&mut b, set);
                b
            })
            .collect();
        let y_minus_l: Vec<Vec<Point>> = y
            .iter()
            .zip(&lambda)
            .map(|(a, l)| a.iter().zip(l).map(|(p, q)| *p - *q).collect())
            .collect();
        let mut rhs = apply_at(&y_minus_l);
        for (r, w) in rhs.iter_mut().zip(&wz) {
            *r = *r * beta + *w;
        }
        x = solver.solve(&rhs, &x)?;
        let ax = apply_a(&x);
        let mut r2 = 0.0f64;
        for ((lb, ab), yb) in lambda.iter_mut().zip(&ax).zip(&y) {
            for ((l, a), yy) in lb.iter_mut().zip(ab).zip(yb) {
                let r = *a - *yy;
                *l += r;
                r2 += r.norm2();
            }
        }
        primal = r2.sqrt();
        let dy: Vec<Vec<Point>> = y
            .iter()
            .zip(&y_prev)
            .map(|(a, b)| if a.len() == b.len() { a.iter().zip(b).map(|(p, q)| *p - *q).collect() } else { a.clone() })
            .collect();
        dual = beta * apply_at(&dy).iter().map(|p| p.norm2()).sum::<f64>().sqrt();
        if primal <= opts.tol && dual <= opts.tol {
            converged = true;
            break;
        }
        if opts.adaptive_beta && it % 10 == 0 {
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                beta *= factor;
                for lb in lambda.iter_mut() {
                    lb.iter_mut().for_each(|l| *l = *l * (1.0 / factor));
                }
                solver = KktSolver::new(cs, &gammas, &metric, beta)?;
            }
        }
    }
    let state = AdmmState {
        x: x.clone(),
        y,
        lambda,
        beta,
        primal,
        dual,
    };
    Ok(AdmmOutcome {
        x,
        state,
        iterations,
        converged,
    })
}

/// Solves `(D + β AᵀA) x + Bᵀμ = r`, `B x = b`.
struct KktSolver<'a> {
    cs: &'a ConstraintSystem,
    gammas: &'a [f64],
    metric: &'a [f64],
    beta: f64,
    inv_diag: Vec<f64>,
    band: Option<BandFactor>,
    eq: EqSolve,
}

/// `M` factored in a point ordering that makes it banded.
struct BandFactor {
    order: Vec<usize>,
    chol: BandCholesky,
}

const MAX_BANDWIDTH: usize = 32;

impl BandFactor {
    /// Tries the natural order, then the interleaved order
    /// `0, n−1, 1, n−2, …` that turns periodic bands into plain ones.
    fn new(cs: &ConstraintSystem, gammas: &[f64], metric: &[f64], beta: f64) -> Option<Self> {
        let n = cs.n;
        let mut m: HashMap<(usize, usize), f64> = HashMap::new();
        for ((op, _), g) in cs.blocks.iter().zip(gammas) {
            let s = beta * g * g;
            for row in &op.rows {
                for &(a, va) in row {
                    for &(b, vb) in row {
                        if a >= b {
                            *m.entry((a as usize, b as usize)).or_default() += s * va * vb;
                        }
                    }
                }
            }
        }
        let interleaved: Vec<usize> = (0..n).map(|k| if k % 2 == 0 { k / 2 } else { n - 1 - k / 2 }).collect();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for order in [(0..n).collect::<Vec<_>>(), interleaved] {
            let mut pos = vec![0; n];
            for (k, &i) in order.iter().enumerate() {
                pos[i] = k;
            }
            let bw = m.keys().map(|&(a, b)| pos[a].abs_diff(pos[b])).max().unwrap_or(0);
            if best.as_ref().map_or(true, |(b, _)| bw < *b) {
                best = Some((bw, order));
            }
        }
        let (bw, order) = best?;
        if bw > MAX_BANDWIDTH {
            return None;
        }
        let chol = BandCholesky::factor(n, bw, |i, j| {
            let (a, b) = (order[i], order[j]);
            let key = if a >= b { (a, b) } else { (b, a) };
            m.get(&key).copied().unwrap_or(0.0) + if i == j { metric[a] } else { 0.0 }
        })?;
        Some(Self { order, chol })
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        let mut b = vec![0.0; self.order.len()];
        for c in 0..2 {
            for (bk, &i) in b.iter_mut().zip(&self.order) {
                *bk = r[2 * i + c];
            }
            self.chol.solve(&mut b);
            for (bk, &i) in b.iter().zip(&self.order) {
                out[2 * i + c] = *bk;
            }
        }
        out
    }
}

enum EqSolve {
    None,
    /// `W = M⁻¹Bᵀ` (columns) and the Cholesky factor of `B W`.
    Schur {
        w: Vec<Vec<f64>>,
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    /// Particular solution of `Bx = b` and the factor of `BBᵀ`.
    Projected {
        x0: Vec<f64>,
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
}

const SCHUR_MAX_ROWS: usize = 8;

impl<'a> KktSolver<'a> {
    fn new(cs: &'a ConstraintSystem, gammas: &'a [f64], metric: &'a [f64], beta: f64) -> Result<Self> {
        let n = cs.n;
        let mut diag: Vec<f64> = metric.to_vec();
        for ((op, _), g) in cs.blocks.iter().zip(gammas) {
            for (d, c) in diag.iter_mut().zip(op.col_sq_norms()) {
                *d += beta * g * g * c;
            }
        }
        let inv_diag: Vec<f64> = diag.iter().flat_map(|d| [1.0 / d, 1.0 / d]).collect();
        let mut s = Self {
            cs,
            gammas,
            metric,
            beta,
            inv_diag,
            band: BandFactor::new(cs, gammas, metric, beta),
            eq: EqSolve::None,
        };
        let p = cs.eq.len();
        if p == 0 {
            return Ok(s);
        }
        let dim = 2 * n;
        if p <= SCHUR_MAX_ROWS {
            let mut w = Vec::with_capacity(p);
            for row in &cs.eq.rows {
                let mut col = vec![0.0; dim];
                for &(c, v) in row {
                    col[c] += v;
                }
                w.push(s.solve_m(&col, None));
            }
            let mut sm = DMatrix::zeros(p, p);
            for (i, row) in cs.eq.rows.iter().enumerate() {
                for (j, wj) in w.iter().enumerate() {
                    sm[(i, j)] = row.iter().map(|&(c, v)| v * wj[c]).sum::<f64>();
                }
            }
            let sm = 0.5 * (&sm + sm.transpose());
            let chol = sm.cholesky().ok_or(Error::SingularKkt)?;
            s.eq = EqSolve::Schur { w, chol };
        } else {
            let b = cs.eq.dense(dim);
            let bbt = &b * b.transpose();
            let chol = bbt.cholesky().ok_or(Error::SingularKkt)?;
            let rhs = DVector::from_vec(cs.eq.rhs.clone());
            let x0 = b.transpose() * chol.solve(&rhs);
            s.eq = EqSolve::Projected {
                x0: x0.iter().copied().collect(),
                chol,
            };
        }
        Ok(s)
    }

    fn apply_m(&self, v: &[f64], out: &mut [f64]) {
        let n = self.cs.n;
        let pts: Vec<Point> = (0..n).map(|i| Point::new(v[2 * i], v[2 * i + 1])).collect();
        let mut acc: Vec<Point> = pts.iter().zip(self.metric).map(|(p, m)| *p * *m).collect();
        for ((op, _), g) in self.cs.blocks.iter().zip(self.gammas) {
            let a = op.apply(&pts);
            op.apply_t_add(&a, self.beta * g * g, &mut acc);
        }
        for (i, p) in acc.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
    }

    /// `M⁻¹ r`, starting from `guess`.
    fn solve_m(&self, r: &[f64], guess: Option<&[f64]>) -> Vec<f64> {
        if let Some(band) = &self.band {
            return band.solve(r);
        }
        let dim = r.len();
        let mut res = r.to_vec();
        let mut base = vec![0.0; dim];
        if let Some(g) = guess {
            let mut mg = vec![0.0; dim];
            self.apply_m(g, &mut mg);
            for k in 0..dim {
                res[k] -= mg[k];
            }
            base.copy_from_slice(g);
        }
        let tol = 1e-13 * linalg::norm2(r).max(1e-300);
        let out = pcg(|v, o| self.apply_m(v, o), &res, &self.inv_diag, tol, 10 * dim + 100, false);
        linalg::axpy(1.0, &out.x, &mut base);
        base
    }

    fn solve(&self, rhs: &[Point], guess: &[Point]) -> Result<Vec<Point>> {
        let r = flatten(rhs);
        let g = flatten(guess);
        let x = match &self.eq {
            EqSolve::None => self.solve_m(&r, Some(&g)),
            EqSolve::Schur { w, chol } => {
                let u = self.solve_m(&r, Some(&g));
                let bu = DVector::from_iterator(
                    w.len(),
                    self.cs
                        .eq
                        .rows
                        .iter()
                        .zip(&self.cs.eq.rhs)
                        .map(|(row, b)| row.iter().map(|&(c, v)| v * u[c]).sum::<f64>() - b),
                );
                let mu = chol.solve(&bu);
                let mut x = u;
                for (k, wk) in w.iter().enumerate() {
                    linalg::axpy(-mu[k], wk, &mut x);
                }
                x
            }
            EqSolve::Projected { x0, chol } => self.solve_projected(&r, x0, chol),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularKkt);
        }
        Ok(unflatten(&x))
    }

    fn solve_projected(&self, r: &[f64], x0: &[f64], chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> Vec<f64> {
        let dim = r.len();
        let rows = &self.cs.eq.rows;
        let project = |v: &mut [f64]| {
            let bv = DVector::from_iterator(rows.len(), rows.iter().map(|row| row.iter().map(|&(c, w)| w * v[c]).sum::<f64>()));
            let t = chol.solve(&bv);
            for (k, row) in rows.iter().enumerate() {
                for &(c, w) in row {
                    v[c] -= w * t[k];
                }
            }
        };
        let mut m0 = vec![0.0; dim];
        self.apply_m(x0, &mut m0);
        let mut res: Vec<f64> = r.iter().zip(&m0).map(|(a, b)| a - b).collect();
        project(&mut res);
        let tol = 1e-13 * linalg::norm2(r).max(1e-300);
        let mut e = vec![0.0; dim];
        let mut p = res.clone();
        let mut rr = linalg::dot(&res, &res);
        let mut ap = vec![0.0; dim];
        for _ in 0..10 * dim + 100 {
            if rr.sqrt() <= tol {
                break;
            }
            self.apply_m(&p, &mut ap);
            project(&mut ap);
            let pap = linalg::dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let a = rr / pap;
            linalg::axpy(a, &p, &mut e);
            linalg::axpy(-a, &ap, &mut res);
            let rr_new = linalg::dot(&res, &res);
            let b = rr_new / rr;
            rr = rr_new;
            for (pi, ri) in p.iter_mut().zip(&res) {
                *pi = ri + b * *pi;
            }
        }
        project(&mut e);
        e.iter().zip(x0).map(|(a, b)| a + b).collect()
    }
}

fn flatten(x: &[Point]) -> Vec<f64> {
    x.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Point> {
    v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

/// Turning angle at every interior vertex (every vertex for circular
/// curves), in `[0, π]`.
pub fn turning_angles(x: &[Point], circular: bool) -> Vec<f64> {
    let n = x.len();
    let idx: Vec<usize> = if circular { (0..n).collect() } else { (1..n.saturating_sub(1)).collect() };
    idx.into_iter()
        .map(|i| {
            let a = x[i] - x[(i + n - 1) % n];
            let b = x[(i + 1) % n] - x[i];
            let c = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
            c.acos()
        })
        .collect()
}

/// Inserts a midpoint after every point (except the last of an open curve).
/// Each original point keeps half its weight and each midpoint gets half
/// the mean of its neighbours; weights are then renormalized to sum to one.
pub fn upsample_dyadic(curve: &[Point], weights: &[f64], circular: bool) -> Result<(Vec<Point>, Vec<f64>)> {
    let n = curve.len();
    if n < 2 || weights.len() != n {
        return Err(Error::InvalidInput("need at least two points with one weight each".into()));
    }
    let m = if circular { 2 * n } else { 2 * n - 1 };
    let mut pts = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for i in 0..n {
        pts.push(curve[i]);
        w.push(weights[i] / 2.0);
        if i + 1 < n || circular {
            let j = (i + 1) % n;
            pts.push(curve[i].lerp(curve[j], 0.5));
            w.push((weights[i] + weights[j]) / 4.0);
        }
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v /= s);
    }
    Ok((pts, w))
}

/// Reads `x,y` rows; a non-numeric first line is taken as a header.
pub fn read_curve(r: impl BufRead) -> Result<Vec<Point>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() < 2 {
            return Err(Error::Parse(format!("row {} has fewer than two fields", k + 1)));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => out.push(Point::new(x, y)),
            _ if k == 0 => continue,
            _ => return Err(Error::Parse(format!("row {}: not a number", k + 1))),
        }
    }
    Ok(out)
}

pub fn write_curve(x: &[Point], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y"]).map_err(|e| Error::Parse(e.to_string()))?;
    for p in x {
        wr.write_record([format!("{:.17e}", p.x), format!("{:.17e}", p.y)])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

/// One constraint block of a configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockConfig {
    pub op: ConfigOp,
    #[serde(flatten)]
    pub set: AdmissibleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigOp {
    First,
    Second,
    Pairs,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Constraint description read from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    #[serde(default)]
    pub circular: bool,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub anchors: Vec<AnchorConfig>,
    /// Join the first and last point of an open curve.
    #[serde(default)]
    pub closed: bool,
    pub mean: Option<[f64; 2]>,
    pub beta: Option<f64>,
    pub tol: Option<f64>,
}

impl ConstraintConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses by file extension (`.json`, otherwise TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn build(&self, n: usize) -> Result<ConstraintSystem> {
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let kind = match (b.op, self.circular) {
                (ConfigOp::First, false) => OperatorKind::FirstOpen,
                (ConfigOp::First, true) => OperatorKind::FirstCircular,
                (ConfigOp::Second, false) => OperatorKind::SecondOpen,
                (ConfigOp::Second, true) => OperatorKind::SecondCircular,
                (ConfigOp::Pairs, _) => OperatorKind::Pairs,
                (ConfigOp::Identity, _) => OperatorKind::Identity,
            };
            blocks.push((DiffOperator::new(kind, n)?, b.set));
        }
        let mut eq = LinearConstraints::new();
        for a in &self.anchors {
            if a.index >= n {
                return Err(Error::InvalidInput(format!("anchor index {} out of range", a.index)));
            }
            eq = eq.anchor(a.index, Point::new(a.x, a.y));
        }
        if self.closed {
            eq = eq.coincide(0, n - 1);
        }
        if let Some([mx, my]) = self.mean {
            eq = eq.mean(n, Point::new(mx, my));
        }
        ConstraintSystem::new(n, blocks, eq)
    }

    pub fn admm_options(&self) -> AdmmOptions {
        let d = AdmmOptions::default();
        AdmmOptions {
            beta: self.beta.unwrap_or(d.beta),
            tol: self.tol.unwrap_or(d.tol),
            ..d
        }
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn admm_lands_in_convex_sets(
            z in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 6..30),
            a1 in 0.02..0.2f64,
            ratio in 0.3..1.5f64,
            circular in any::<bool>(),
        ) {
            let z: Vec<Point> = z.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let cs = ConstraintSystem::kinematic(z.len(), circular, a1, ratio * a1).unwrap().with_box(0.0, 1.0).unwrap();
            let out = admm_project(&z, &cs, 1.0, 1e-9).unwrap();
            prop_assert!(out.converged);
            let (ineq, eq) = cs.violation(&out.x);
            prop_assert!(ineq <= 1e-6 && eq <= 1e-6, "{ineq} {eq}");
            // a feasible point is its own projection
            let again = admm_project(&out.x, &cs, 1.0, 1e-9).unwrap();
            let moved = out.x.iter().zip(&again.x).map(|(p, q)| p.dist(*q)).fold(0.0, f64::max);
            prop_assert!(moved <= 1e-5, "{moved}");
        }
    }
}
