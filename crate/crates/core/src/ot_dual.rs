//! Concave dual of semi-discrete transport and its Newton solver.
//!
//! `g(ψ) = Σᵢ ∫_{Lᵢ(ψ)} (‖x − xᵢ‖² − ψᵢ) dμ(x) + Σᵢ ψᵢ wᵢ`
//!
//! with `∂g/∂ψᵢ = wᵢ − μ(Lᵢ)` and, for adjacent cells,
//! `∂²g/∂ψᵢ∂ψⱼ = ∫_{Lᵢ∩Lⱼ} ρ ds / (2‖xᵢ − xⱼ‖)`.
//! The Hessian is the negative of a weighted graph Laplacian.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::geom::Point;
use crate::grid_density::{GridDensity, Moments};
use crate::laguerre::{compute_diagram, hilbert_key, DualPotential, LaguerreDiagram, SiteSet};
use crate::linalg::{self, pcg};
use crate::{Error, Result};

/// Nonempty cells with a smaller area make the Hessian unreliable.
pub const DEGENERATE_CELL_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DualState {
    pub psi: DualPotential,
    pub value: f64,
    pub grad: Vec<f64>,
    pub masses: Vec<f64>,
    pub moments: Vec<Moments>,
    pub diagram: LaguerreDiagram,
}

impl DualState {
    pub fn grad_norm_inf(&self) -> f64 {
        linalg::norm_inf(&self.grad)
    }

    pub fn grad_norm2(&self) -> f64 {
        linalg::norm2(&self.grad)
    }

    /// Barycenter of each cell, `None` for cells without mass.
    pub fn barycenters(&self) -> Vec<Option<Point>> {
        self.moments.iter().map(Moments::barycenter).collect()
    }

    fn has_degenerate_cell(&self) -> bool {
        self.diagram
            .cells
            .iter()
            .any(|c| !c.is_empty() && c.area() < DEGENERATE_CELL_AREA)
    }
}

/// Hessian of `g`: nonnegative off-diagonal entries, each row summing to
/// zero. Stored as compressed rows of the off-diagonal part plus the diagonal.
#[derive(Debug, Clone)]
pub struct DualHessian {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl DualHessian {
    /// Builds from off-diagonal pairs `(i, j, v)` with `i ≠ j`, each pair
    /// listed once.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; n + 1];
        for &(i, j, _) in pairs {
            count[i + 1] += 1;
            count[j + 1] += 1;
        }
        for k in 0..n {
            count[k + 1] += count[k];
        }
        let row_ptr = count.clone();
        let mut fill = count;
        let mut cols = vec![0u32; row_ptr[n]];
        let mut vals = vec![0.0; row_ptr[n]];
        for &(i, j, v) in pairs {
            cols[fill[i]] = j as u32;
            vals[fill[i]] = v;
            fill[i] += 1;
            cols[fill[j]] = i as u32;
            vals[fill[j]] = v;
            fill[j] += 1;
        }
        let diag = (0..n)
            .map(|i| -vals[row_ptr[i]..row_ptr[i + 1]].iter().sum::<f64>())
            .collect();
        Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.row(i).map(|(_, v)| v).sum::<f64>()
    }

    /// `y = H x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let mut s = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *yi = s;
        });
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            m[i][i] = self.diag[i];
            for (j, v) in self.row(i) {
                m[i][j] += v;
            }
        }
        m
    }

    /// Largest eigenvalue of `−H` by power iteration on the zero-mean
    /// subspace.
    pub fn laplacian_spectral_radius(&self, iters: usize) -> f64 {
        let n = self.n;
        if n < 2 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        linalg::remove_mean(&mut v);
        let mut w = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..iters {
            let nv = linalg::norm2(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            self.apply(&v, &mut w);
            w.iter_mut().for_each(|x| *x = -*x);
            linalg::remove_mean(&mut w);
            lambda = linalg::dot(&v, &w);
            std::mem::swap(&mut v, &mut w);
        }
        lambda
    }
}

/// Evaluates `g`, its gradient and the cell moments at `psi`.
pub fn eval_dual(d: &GridDensity, sites: &SiteSet, psi: &DualPotential) -> Result<DualState> {
    let diagram = compute_diagram(sites, psi)?;
    Ok(state_from_diagram(d, sites, psi.clone(), diagram))
}

/// Like [`eval_dual`] but without re-gauging `psi`.
pub fn eval_dual_value(d: &GridDensity, sites: &SiteSet, psi: &[f64]) -> Result<(f64, Vec<f64>)> {
    let diagram = crate::laguerre::compute_diagram_in(sites.positions(), psi, crate::laguerre::Window::UNIT)?;
    let moments: Vec<Moments> = diagram.cells.par_iter().map(|c| d.polygon_moments(c)).collect();
    Ok(value_and_grad(sites, psi, &moments))
}

fn value_and_grad(sites: &SiteSet, psi: &[f64], moments: &[Moments]) -> (f64, Vec<f64>) {
    let w = sites.weights();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(w.len());
    for (i, m) in moments.iter().enumerate() {
        value += m.cost(sites.positions()[i]) + psi[i] * (w[i] - m.mass);
        grad.push(w[i] - m.mass);
    }
    (value, grad)
}

fn state_from_diagram(d: &GridDensity, sites: &SiteSet, psi: DualPotential, diagram: LaguerreDiagram) -> DualState {
    let moments: Vec<Moments> = diagram.cells.par_iter().map(|c| d.polygon_moments(c)).collect();
    let (value, grad) = value_and_grad(sites, psi.as_slice(), &moments);
    let masses = moments.iter().map(|m| m.mass).collect();
    DualState {
        psi,
        value,
        grad,
        masses,
        moments,
        diagram,
    }
}

/// Hessian of `g` at `psi`.
pub fn eval_hessian(d: &GridDensity, sites: &SiteSet, psi: &DualPotential) -> Result<DualHessian> {
    let diagram = compute_diagram(sites, psi)?;
    Ok(hessian_of(d, sites, &diagram))
}

/// Hessian of `g` for an already computed diagram.
pub fn hessian_of(d: &GridDensity, sites: &SiteSet, diagram: &LaguerreDiagram) -> DualHessian {
    let x = sites.positions();
    let pairs: Vec<(usize, usize, f64)> = diagram
        .edges
        .par_iter()
        .map(|e| {
            let v = d.edge_density_integral(e.a, e.b) / (2.0 * x[e.i].dist(x[e.j]));
            (e.i, e.j, v)
        })
        .collect();
    DualHessian::from_pairs(sites.len(), &pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NewtonMode {
    /// Newton with `‖∇g‖₂ I` added to `−H`, plus Armijo backtracking.
    #[default]
    Regularized,
    /// Newton with `c I` added, `c` adapted from step acceptance.
    LevenbergMarquardt,
    /// Undamped Newton without regularization or line search.
    Pure,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Target for `‖∇g‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: NewtonMode,
    /// Initial Levenberg–Marquardt parameter.
    pub lm_c0: f64,
    pub armijo_c1: f64,
    pub min_step: f64,
    pub cg_max_iter: usize,
    /// Coarse-to-fine initialization by grouping sites four at a time.
    pub multiscale: bool,
    /// Record a per-iteration trace.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 1000,
            mode: NewtonMode::Regularized,
            lm_c0: 1.0,
            armijo_c1: 1e-4,
            min_step: 1e-12,
            cg_max_iter: 2000,
            multiscale: false,
            trace: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The Newton system could not be solved (singular or non-finite).
    Breakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub grad_norm: f64,
    pub step: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub state: DualState,
    pub status: SolveStatus,
    pub iterations: usize,
    /// The last two steps were full Newton steps.
    pub quadratic_phase: bool,
    pub trace: Vec<TraceRow>,
}

impl DualSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Maximizes `g` from `psi0` until `‖∇g‖_∞ ≤ tol`.
pub fn solve_dual(d: &GridDensity, sites: &SiteSet, psi0: &DualPotential, tol: f64) -> Result<DualSolution> {
    solve_dual_with(d, sites, psi0, &SolverOptions::with_tol(tol))
}

pub fn solve_dual_with(
    d: &GridDensity,
    sites: &SiteSet,
    psi0: &DualPotential,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    if psi0.len() != sites.len() {
        return Err(Error::InvalidInput(format!(
            "{} sites but {} potentials",
            sites.len(),
            psi0.len()
        )));
    }
    let (mass, wsum) = (d.total_mass(), sites.weights().iter().sum::<f64>());
    if (mass - wsum).abs() > 1e-9 * mass.max(wsum) {
        return Err(Error::InvalidInput(format!(
            "density mass {mass} differs from total weight {wsum}"
        )));
    }
    if sites.weights().iter().any(|&w| w <= 0.0) {
        // zero weights are only acceptable when no iteration is needed
        let sol = newton(d, sites, psi0.clone(), &SolverOptions { max_iter: 0, ..opts.clone() })?;
        if sol.converged() {
            return Ok(sol);
        }
        return Err(Error::InvalidInput("weights must be positive".into()));
    }
    let psi0 = if opts.multiscale && sites.len() >= 4 * MULTISCALE_MIN_SITES {
        multiscale_init(d, sites, opts)?
    } else {
        psi0.clone()
    };
    newton(d, sites, psi0, opts)
}

fn newton(d: &GridDensity, sites: &SiteSet, psi0: DualPotential, opts: &SolverOptions) -> Result<DualSolution> {
    let n = sites.len();
    let mut state = eval_dual(d, sites, &psi0)?;
    let mut trace = Vec::new();
    let mut lm_c = opts.lm_c0;
    let mut full_steps = 0usize;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    if opts.trace {
        trace.push(TraceRow {
            iteration: 0,
            grad_norm: state.grad_norm_inf(),
            step: 0.0,
            regularization: 0.0,
        });
    }
    for it in 1..=opts.max_iter + 1 {
        let gnorm_inf = state.grad_norm_inf();
        if gnorm_inf <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if it > opts.max_iter || !gnorm_inf.is_finite() {
            status = if gnorm_inf.is_finite() {
                SolveStatus::MaxIterations
            } else {
                SolveStatus::Breakdown
            };
            break;
        }
        iterations = it;
        let gnorm = state.grad_norm2();
        let reg = match opts.mode {
            NewtonMode::Regularized => gnorm,
            NewtonMode::LevenbergMarquardt => lm_c,
            NewtonMode::Pure => 0.0,
        };

        // Newton direction: (−H + reg I) δ = ∇g
        let fallback = opts.mode != NewtonMode::Pure && state.has_degenerate_cell();
        let delta = if fallback {
            state.grad.iter().map(|g| g / reg).collect::<Vec<_>>()
        } else {
            let h = hessian_of(d, sites, &state.diagram);
            let inv_diag: Vec<f64> = h
                .diagonal()
                .iter()
                .map(|&di| {
                    let a = -di + reg;
                    if a > 0.0 {
                        1.0 / a
                    } else {
                        1.0
                    }
                })
                .collect();
            let apply = |x: &[f64], y: &mut [f64]| {
                h.apply(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = reg * xi - *yi;
                }
            };
            let cg_tol = gnorm.min(1e-2) * gnorm;
            let out = pcg(apply, &state.grad, &inv_diag, cg_tol, opts.cg_max_iter.max(n), true);
            if !out.converged || out.x.iter().any(|v| !v.is_finite()) {
                if opts.mode == NewtonMode::Pure {
                    status = SolveStatus::Breakdown;
                    break;
                }
                log::debug!("inner solve stalled at residual {:.3e}", out.residual);
            }
            out.x
        };

        let slope = linalg::dot(&state.grad, &delta);
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = state.psi.as_slice().iter().zip(&delta).map(|(p, dl)| p + t * dl).collect();
            let trial = DualPotential::new(trial);
            let cand = eval_dual(d, sites, &trial)?;
            if opts.mode == NewtonMode::Pure {
                break Some(cand);
            }
            let gain = cand.value - state.value;
            let need = opts.armijo_c1 * t * slope;
            let noise = 64.0 * f64::EPSILON * state.value.abs().max(1e-300);
            let ok = if need > noise {
                gain >= need
            } else {
                gain >= -noise && cand.grad_norm2() < gnorm
            };
            if ok {
                break Some(cand);
            }
            if opts.mode == NewtonMode::LevenbergMarquardt {
                lm_c *= 2.0;
                break None;
            }
            t *= 0.5;
            if t < opts.min_step {
                status = SolveStatus::LineSearchFailed;
                break None;
            }
        };
        let step = if accepted.is_some() { t } else { 0.0 };
        match accepted {
            Some(cand) => {
                if opts.mode == NewtonMode::LevenbergMarquardt {
                    lm_c *= 0.5;
                }
                full_steps = if t == 1.0 && !fallback { full_steps + 1 } else { 0 };
                state = cand;
            }
            None if status == SolveStatus::LineSearchFailed => break,
            None => full_steps = 0,
        }
        if opts.trace {
            trace.push(TraceRow {
                iteration: it,
                grad_norm: state.grad_norm_inf(),
                step,
                regularization: reg,
            });
        }
    }
    if status == SolveStatus::LineSearchFailed && state.grad_norm_inf() <= opts.tol {
        status = SolveStatus::Converged;
    }
    Ok(DualSolution {
        state,
        status,
        iterations,
        quadratic_phase: full_steps >= 2,
        trace,
    })
}

/// Smallest coarse level used by the multiscale initialization.
const MULTISCALE_MIN_SITES: usize = 64;

fn multiscale_init(d: &GridDensity, sites: &SiteSet, opts: &SolverOptions) -> Result<DualPotential> {
    let n = sites.len();
    let x = sites.positions();
    let w = sites.weights();
    let center = Point::new(0.5, 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| hilbert_key(x[i], center, 0.5f64.sqrt()));
    let groups: Vec<&[usize]> = order.chunks(4).collect();
    let mut cx = Vec::with_capacity(groups.len());
    let mut cw = Vec::with_capacity(groups.len());
    for g in &groups {
        let m: f64 = g.iter().map(|&i| w[i]).sum();
        let p = g.iter().fold(Point::new(0.0, 0.0), |acc, &i| acc + x[i] * (w[i] / m));
        cx.push(p);
        cw.push(m);
    }
    let coarse = SiteSet::with_unnormalized_weights(cx, cw)?;
    if coarse.find_duplicate().is_some() {
        return Ok(DualPotential::zeros(n));
    }
    let coarse_opts = SolverOptions {
        tol: opts.tol.max(1e-6),
        trace: false,
        ..opts.clone()
    };
    let sol = solve_dual_with(d, &coarse, &DualPotential::zeros(coarse.len()), &coarse_opts)?;
    let mut psi = vec![0.0; n];
    for (k, g) in groups.iter().enumerate() {
        for &i in g.iter() {
            psi[i] = sol.state.psi[k];
        }
    }
    Ok(DualPotential::new(psi))
}

/// Writes a convergence trace as CSV.
pub fn write_trace(rows: &[TraceRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sites(n: usize, seed: u64) -> SiteSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SiteSet::uniform((0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()).unwrap()
    }

    fn bumpy() -> GridDensity {
        GridDensity::from_fn(32, 32, |x, y| 1.0 + 0.8 * (6.0 * x).sin() * (5.0 * y).cos())
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn single_site_value_is_second_moment() {
        let s = SiteSet::uniform(vec![Point::new(0.5, 0.5)]).unwrap();
        let st = eval_dual(&GridDensity::uniform(), &s, &DualPotential::zeros(1)).unwrap();
        assert!((st.value - 1.0 / 6.0).abs() < 1e-15);
        assert!(st.grad[0].abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_is_optimal_at_zero() {
        let s = SiteSet::uniform(vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)]).unwrap();
        let st = eval_dual(&GridDensity::uniform(), &s, &DualPotential::zeros(2)).unwrap();
        assert!(st.grad.iter().all(|g| g.abs() < 1e-15));
        let sol = solve_dual(&GridDensity::uniform(), &s, &DualPotential::zeros(2), 1e-12).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn unequal_pair_closed_form() {
        let s = SiteSet::new(vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)], vec![0.6, 0.4]).unwrap();
        let sol = solve_dual(&GridDensity::uniform(), &s, &DualPotential::zeros(2), 1e-12).unwrap();
        assert!(sol.converged());
        assert!((sol.state.psi[0] - 0.05).abs() < 1e-10);
        assert!((sol.state.psi[1] + 0.05).abs() < 1e-10);
    }

    #[test]
    fn gradient_sums_to_zero_and_matches_masses() {
        let d = bumpy();
        let s = random_sites(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = DualPotential::new((0..50).map(|_| rng.gen_range(-0.01..0.01)).collect());
        let st = eval_dual(&d, &s, &psi).unwrap();
        assert!(st.grad.iter().sum::<f64>().abs() < 1e-12);
        let m = st.diagram.cell_masses(&d);
        for i in 0..50 {
            assert!((st.grad[i] - (s.weights()[i] - m[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn hessian_rows_sum_to_zero() {
        let d = bumpy();
        let s = random_sites(80, 3);
        let h = eval_hessian(&d, &s, &DualPotential::zeros(80)).unwrap();
        for i in 0..80 {
            assert!(h.row_sum(i).abs() < 1e-10);
            assert!(h.row(i).all(|(_, v)| v >= 0.0));
        }
    }

    #[test]
    fn gauge_invariance() {
        let d = bumpy();
        let s = random_sites(20, 4);
        let psi: Vec<f64> = (0..20).map(|i| 0.001 * i as f64).collect();
        let shifted: Vec<f64> = psi.iter().map(|p| p + 0.37).collect();
        let (g0, _) = eval_dual_value(&d, &s, &psi).unwrap();
        let (g1, _) = eval_dual_value(&d, &s, &shifted).unwrap();
        assert!((g0 - g1).abs() < 1e-10);
    }

    #[test]
    fn regularized_newton_converges_on_random_instance() {
        let d = bumpy();
        let s = random_sites(256, 5);
        let sol = solve_dual_with(
            &d,
            &s,
            &DualPotential::zeros(256),
            &SolverOptions {
                tol: 1e-9,
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sol.converged());
        let m = sol.state.diagram.cell_masses(&d);
        for i in 0..256 {
            assert!((m[i] - s.weights()[i]).abs() <= 1e-9);
        }
        assert!(sol.quadratic_phase);
        let mut buf = Vec::new();
        write_trace(&sol.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,grad_norm,step,regularization"));
    }

    #[test]
    fn levenberg_marquardt_and_multiscale_converge() {
        let d = bumpy();
        let s = random_sites(300, 6);
        for opts in [
            SolverOptions {
                mode: NewtonMode::LevenbergMarquardt,
                ..SolverOptions::with_tol(1e-9)
            },
            SolverOptions {
                multiscale: true,
                ..SolverOptions::with_tol(1e-9)
            },
        ] {
            let sol = solve_dual_with(&d, &s, &DualPotential::zeros(300), &opts).unwrap();
            assert!(sol.converged(), "{:?}", opts.mode);
        }
    }

    #[test]
    fn spectral_radius_of_path() {
        // unit-weight path on 4 nodes: 2 + 2cos(π/4)
        let h = DualHessian::from_pairs(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let l = h.laplacian_spectral_radius(2000);
        assert!((l - (2.0 + 2.0 * (std::f64::consts::PI / 4.0).cos())).abs() < 1e-9);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (SiteSet, Vec<f64>, Vec<f64>)> {
        prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.2..1.0f64, -0.02..0.02f64, -0.02..0.02f64), 2..24).prop_filter_map(
            "duplicate sites",
            |v| {
                let pos = v.iter().map(|t| Point::new(t.0, t.1)).collect();
                let w = v.iter().map(|t| t.2).collect();
                let sites = SiteSet::with_unnormalized_weights(pos, w).ok()?;
                let a = v.iter().map(|t| t.3).collect();
                let b = v.iter().map(|t| t.4).collect();
                Some((sites, a, b))
            },
        )
    }

    fn density() -> GridDensity {
        GridDensity::from_fn(10, 10, |x, y| 0.3 + x + (5.0 * y).sin().abs()).unwrap().normalize().unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dual_is_concave_and_gauge_invariant((sites, a, b) in instance(), c in -1.0..1.0f64) {
            let d = density();
            let Ok((ga, grad)) = eval_dual_value(&d, &sites, &a) else { return Ok(()) };
            let (gb, _) = eval_dual_value(&d, &sites, &b).unwrap();
            let lin: f64 = grad.iter().zip(a.iter().zip(&b)).map(|(g, (x, y))| g * (y - x)).sum();
            prop_assert!(gb <= ga + lin + 1e-12);
            prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
            let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
            let (gs, grads) = eval_dual_value(&d, &sites, &shifted).unwrap();
            prop_assert!((gs - ga).abs() <= 1e-12);
            for (u, v) in grad.iter().zip(&grads) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }
}
