//! Alternating minimization of `F(x, w) = ½ W₂²(Σ wᵢ δ_{xᵢ}, μ)`.
//!
//! Each outer iteration runs the weight update, the dual solve, a move of
//! the sites towards their Laguerre-cell barycenters, and an optional
//! projection onto a constrained curve set.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::curve_proj::{admm_project_with, AdmmOptions, AdmmState, ConstraintSystem};
use crate::geom::Point;
use crate::grid_density::GridDensity;
use crate::laguerre::{compute_diagram, DualPotential, SiteSet};
use crate::ot_dual::{solve_dual_with, DualState, SolveStatus, SolverOptions};
use crate::pipeline::SnrMeter;
use crate::{Error, Result};

/// Cells lighter than this cannot provide a barycenter.
pub const MIN_CELL_MASS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Keep the weights of the initial site set.
    #[default]
    Fixed,
    /// Use the Voronoi-cell masses, the optimal weights for given positions.
    Simplex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once the SNR in dB reaches the threshold.
    Snr(f64),
    /// Stop once `‖∇ₓF‖_∞` drops below the threshold.
    Grad(f64),
    /// Run exactly `max_iter` iterations.
    Iterations,
}

/// Constrained-curve projection applied after each position update.
#[derive(Debug, Clone)]
pub struct Projection {
    pub system: ConstraintSystem,
    pub admm: AdmmOptions,
    /// Project in the metric weighted by cell masses.
    pub use_metric: bool,
}

#[derive(Debug, Clone)]
pub struct DescentConfig {
    pub weight_mode: WeightMode,
    /// Step `s` of `x ← (1 − s) x + s b`.
    pub step: f64,
    /// Use a Euclidean gradient step `1/L` instead, with `L` estimated
    /// once by power iteration on finite differences of `∇ₓF`.
    pub conservative: bool,
    pub max_iter: usize,
    pub stop: StopRule,
    pub projection: Option<Projection>,
    pub dual: SolverOptions,
    /// Carry `ψ` over from the previous iteration.
    pub warm_start: bool,
    /// Wall-clock budget, checked between iterations.
    pub time_limit: Option<std::time::Duration>,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::Fixed,
            step: 1.0,
            conservative: false,
            max_iter: 100,
            stop: StopRule::Snr(31.0),
            projection: None,
            dual: SolverOptions::default(),
            warm_start: true,
            time_limit: None,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::InvalidInput("step must be positive".into()));
        }
        if let StopRule::Snr(t) = self.stop {
            if !(t > 0.0) {
                return Err(Error::InvalidInput("SNR threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescentTraceRow {
    pub k: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub grad_x_inf: f64,
    pub dual_iterations: usize,
    pub snr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    Snr,
    Grad,
    MaxIterations,
    TimeLimit,
    /// The dual solve did not converge.
    DualFailure(SolveStatus),
}

#[derive(Debug, Clone)]
pub struct MeasureState {
    pub sites: SiteSet,
    pub psi: DualPotential,
    /// `½ W₂²` at the last dual solve.
    pub f: f64,
    pub iterations: usize,
    pub dual_iterations: usize,
    pub snr: Option<f64>,
    pub stop: StopReason,
    pub trace: Vec<DescentTraceRow>,
    pub admm: Option<AdmmState>,
}

impl MeasureState {
    pub fn converged(&self) -> bool {
        match self.stop {
            StopReason::Snr | StopReason::Grad => true,
            StopReason::MaxIterations | StopReason::TimeLimit => false,
            StopReason::DualFailure(_) => false,
        }
    }
}

/// Weight update: unchanged for [`WeightMode::Fixed`], Voronoi-cell masses
/// for [`WeightMode::Simplex`].
pub fn w_step(d: &GridDensity, sites: &SiteSet, mode: WeightMode) -> Result<SiteSet> {
    match mode {
        WeightMode::Fixed => Ok(sites.clone()),
        WeightMode::Simplex => {
            let diagram = compute_diagram(sites, &DualPotential::zeros(sites.len()))?;
            sites.with_weights(diagram.cell_masses(d))
        }
    }
}

/// `∂F/∂xᵢ = wᵢ (xᵢ − bᵢ)` at a solved dual state.
pub fn grad_x(sites: &SiteSet, state: &DualState) -> Result<Vec<Point>> {
    let b = barycenters(state)?;
    Ok(sites
        .positions()
        .iter()
        .zip(sites.weights())
        .zip(b)
        .map(|((x, w), b)| (*x - b) * *w)
        .collect())
}

fn barycenters(state: &DualState) -> Result<Vec<Point>> {
    state
        .moments
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.mass < MIN_CELL_MASS {
                Err(Error::EmptyCellEncountered(i, m.mass))
            } else {
                Ok(Point::new(m.mx / m.mass, m.my / m.mass))
            }
        })
        .collect()
}

/// Position update `x ← (1 − s) x + s b`, clamped to the unit square.
pub fn x_step(sites: &SiteSet, state: &DualState, s: f64) -> Result<SiteSet> {
    let b = barycenters(state)?;
    let x = sites
        .positions()
        .iter()
        .zip(b)
        .map(|(x, b)| (*x * (1.0 - s) + b * s).clamp_unit())
        .collect();
    sites.with_positions(x)
}

fn grad_inf(g: &[Point]) -> f64 {
    g.iter().fold(0.0, |m, p| m.max(p.x.abs()).max(p.y.abs()))
}

/// Runs the alternating minimization from `init`.
pub fn run(d: &GridDensity, init: &SiteSet, cfg: &DescentConfig) -> Result<MeasureState> {
    run_with_meter(d, init, cfg, None)
}

/// Like [`run`], with an explicit SNR meter (otherwise one is built on the
/// density grid when the stop rule needs it).
pub fn run_with_meter(
    d: &GridDensity,
    init: &SiteSet,
    cfg: &DescentConfig,
    meter: Option<&SnrMeter>,
) -> Result<MeasureState> {
    cfg.validate()?;
    if let Some((i, j)) = init.find_duplicate() {
        return Err(Error::DuplicateSites(i, j));
    }
    let own_meter;
    let meter = match (meter, cfg.stop) {
        (Some(m), _) => Some(m),
        (None, StopRule::Snr(_)) => {
            own_meter = SnrMeter::new(d, init.len());
            Some(&own_meter)
        }
        _ => None,
    };
    let mut sites = init.clone();
    let mut psi = DualPotential::zeros(sites.len());
    let mut st = MeasureState {
        sites: sites.clone(),
        psi: psi.clone(),
        f: f64::NAN,
        iterations: 0,
        dual_iterations: 0,
        snr: None,
        stop: StopReason::MaxIterations,
        trace: Vec::new(),
        admm: None,
    };
    let mut lipschitz: Option<f64> = None;
    let start = std::time::Instant::now();
    for k in 1..=cfg.max_iter {
        if cfg.time_limit.is_some_and(|t| start.elapsed() > t) {
            st.stop = StopReason::TimeLimit;
            break;
        }
        sites = w_step(d, &sites, cfg.weight_mode)?;
        if cfg.weight_mode == WeightMode::Simplex || !cfg.warm_start {
            psi = DualPotential::zeros(sites.len());
        }
        let sol = solve_dual_with(d, &sites, &psi, &cfg.dual)?;
        st.dual_iterations += sol.iterations;
        st.iterations = k;
        if !sol.converged() {
            st.stop = StopReason::DualFailure(sol.status);
            st.sites = sites;
            st.psi = sol.state.psi;
            st.f = 0.5 * sol.state.value;
            return Ok(st);
        }
        let state = sol.state;
        psi = state.psi.clone();
        st.f = 0.5 * state.value;
        let g = grad_x(&sites, &state)?;
        let gi = grad_inf(&g);
        if let StopRule::Grad(t) = cfg.stop {
            if gi <= t {
                st.stop = StopReason::Grad;
                st.trace.push(DescentTraceRow {
                    k,
                    f: st.f,
                    grad_x_inf: gi,
                    dual_iterations: sol.iterations,
                    snr: f64::NAN,
                });
                break;
            }
        }

        let mut next = if cfg.conservative {
            let l = match lipschitz {
                Some(l) => l,
                None => {
                    let l = estimate_lipschitz(d, &sites, &psi, &cfg.dual)?;
                    lipschitz = Some(l);
                    l
                }
            };
            let x = sites
                .positions()
                .iter()
                .zip(&g)
                .map(|(x, g)| (*x - *g * (1.0 / l)).clamp_unit())
                .collect();
            sites.with_positions(x)?
        } else {
            x_step(&sites, &state, cfg.step)?
        };

        if let Some(proj) = &cfg.projection {
            let opts = AdmmOptions {
                metric: proj.use_metric.then(|| state.masses.iter().map(|m| m.max(MIN_CELL_MASS)).collect()),
                ..proj.admm.clone()
            };
            let out = admm_project_with(next.positions(), &proj.system, &opts, st.admm.as_ref())?;
            log::debug!("projection: {} ADMM iterations", out.iterations);
            if !out.converged {
                log::debug!(
                    "projection stopped at residuals {:.2e}/{:.2e}",
                    out.state.primal,
                    out.state.dual
                );
            }
            next = next.with_positions(separate_duplicates(out.x))?;
            st.admm = Some(out.state);
        }
        sites = next;

        let snr = meter.map(|m| m.snr(sites.positions(), sites.weights()));
        st.snr = snr;
        st.trace.push(DescentTraceRow {
            k,
            f: st.f,
            grad_x_inf: gi,
            dual_iterations: sol.iterations,
            snr: snr.unwrap_or(f64::NAN),
        });
        log::info!("iteration {k}: F = {:.6e}, |grad| = {gi:.3e}, snr = {:?}", st.f, snr);
        if let (StopRule::Snr(t), Some(s)) = (cfg.stop, snr) {
            if s >= t {
                st.stop = StopReason::Snr;
                break;
            }
        }
    }
    st.sites = sites;
    st.psi = psi;
    Ok(st)
}

/// Nudges coincident points apart by a negligible amount so that the
/// diagram stays defined.
fn separate_duplicates(mut x: Vec<Point>) -> Vec<Point> {
    for _ in 0..8 {
        let s = match SiteSet::uniform(x.clone()) {
            Ok(s) => s,
            Err(_) => return x,
        };
        match s.find_duplicate() {
            Some((_, j)) => {
                let off = 1e-9 * (1.0 + j as f64 % 7.0);
                let p = x[j];
                x[j] = Point::new(p.x + if p.x < 0.5 { off } else { -off }, p.y);
            }
            None => break,
        }
    }
    x
}

/// Largest eigenvalue of the Jacobian of `∇ₓF`, by power iteration on
/// central differences.
pub fn estimate_lipschitz(d: &GridDensity, sites: &SiteSet, psi: &DualPotential, dual: &SolverOptions) -> Result<f64> {
    let n = sites.len();
    let tight = SolverOptions {
        tol: dual.tol.min(1e-11),
        ..dual.clone()
    };
    let grad_at = |x: Vec<Point>| -> Result<Vec<Point>> {
        let s = sites.with_positions(x)?;
        let sol = solve_dual_with(d, &s, psi, &tight)?;
        grad_x(&s, &sol.state)
    };
    let h = 1e-6;
    let mut v: Vec<Point> = (0..n)
        .map(|i| Point::new(((i * 31 + 7) % 13) as f64 - 6.0, ((i * 17 + 3) % 11) as f64 - 5.0))
        .collect();
    let mut lambda: f64 = 0.0;
    for _ in 0..10 {
        let nv = v.iter().map(|p| p.norm2()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|p| *p = *p * (1.0 / nv));
        let plus = grad_at(sites.positions().iter().zip(&v).map(|(x, d)| *x + *d * h).collect())?;
        let minus = grad_at(sites.positions().iter().zip(&v).map(|(x, d)| *x - *d * h).collect())?;
        let w: Vec<Point> = plus.iter().zip(&minus).map(|(a, b)| (*a - *b) * (0.5 / h)).collect();
        lambda = w.iter().map(|p| p.norm2()).sum::<f64>().sqrt();
        v = w;
    }
    Ok(lambda.max(1e-12))
}

/// `n` distinct points drawn from `d` by rejection sampling.
pub fn poisson_init(d: &GridDensity, n: usize, rng: &mut impl Rng) -> Result<Vec<Point>> {
    let max = d.max_value();
    if !(max > 0.0) {
        return Err(Error::ZeroMassDensity);
    }
    let mut out = Vec::with_capacity(n);
    let mut attempts: u64 = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n as u64 + 1_000_000 {
            return Err(Error::InvalidInput("rejection sampling did not finish".into()));
        }
        let p = Point::new(rng.gen::<f64>(), rng.gen::<f64>());
        if rng.gen::<f64>() * max < d.value(p) {
            out.push(p);
        }
    }
    let x = separate_duplicates(out);
    Ok(x)
}

pub fn write_trace(rows: &[DescentTraceRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
