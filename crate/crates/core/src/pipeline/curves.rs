use rand::Rng;

use crate::curve_proj::{AdmmOptions, ConstraintSystem};
use crate::descent::{poisson_init, run_with_meter, DescentConfig, MeasureState, Projection, StopRule};
use crate::geom::Point;
use crate::grid_density::GridDensity;
use crate::laguerre::{hilbert_key, SiteSet};
use crate::{Error, Result};

use super::SnrMeter;

/// Orders points along a Hilbert curve of the unit square.
pub fn hilbert_sort(points: &mut [Point]) {
    let c = Point::new(0.5, 0.5);
    points.sort_by_cached_key(|p| hilbert_key(*p, c, 0.5));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveKind {
    /// `‖A₁x‖ ≤ speed`, `‖A₂x‖ ≤ accel`.
    Kinematic,
    /// `‖A₁x‖ = speed`, `‖A₂x‖ ≤ accel`.
    Geometric,
}

/// Multi-resolution curve fitting.
#[derive(Debug, Clone)]
pub struct CurveJob {
    pub n: usize,
    pub circular: bool,
    pub kind: CurveKind,
    /// Bounds at the finest resolution.
    pub speed: f64,
    pub accel: f64,
    /// Number of coarser resolutions solved first.
    pub levels: usize,
    /// Outer iterations spent at each coarse resolution.
    pub coarse_iter: usize,
    /// Settings of the finest level; coarse levels reuse them with a fixed
    /// iteration count.
    pub descent: DescentConfig,
    pub admm: AdmmOptions,
    pub use_metric: bool,
}

impl CurveJob {
    pub fn new(n: usize) -> Self {
        let speed = 1.0 / (n.max(1) as f64).sqrt();
        Self {
            n,
            circular: false,
            kind: CurveKind::Kinematic,
            speed,
            accel: speed,
            levels: 3,
            coarse_iter: 10,
            descent: DescentConfig::default(),
            admm: AdmmOptions::default(),
            use_metric: false,
        }
    }

    fn segments(&self, m: usize) -> usize {
        if self.circular {
            m
        } else {
            m - 1
        }
    }

    /// Point counts from coarsest to finest.
    fn resolutions(&self) -> Vec<usize> {
        let mut sizes = vec![self.n];
        for _ in 0..self.levels {
            let m = *sizes.last().unwrap();
            let coarse = match (self.circular, m % 2) {
                (true, 0) => m / 2,
                (false, 1) => (m + 1) / 2,
                _ => break,
            };
            if coarse < 8 {
                break;
            }
            sizes.push(coarse);
        }
        sizes.reverse();
        sizes
    }

    /// Constraint set for `m` points, bounds scaled with the segment length.
    pub fn system(&self, m: usize) -> Result<ConstraintSystem> {
        let r = self.segments(self.n) as f64 / self.segments(m) as f64;
        let (a1, a2) = (self.speed * r, self.accel * r * r);
        let cs = match self.kind {
            CurveKind::Kinematic => ConstraintSystem::kinematic(m, self.circular, a1, a2)?,
            CurveKind::Geometric => ConstraintSystem::geometric(m, self.circular, a1, a2)?,
        };
        cs.with_box(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct CurveRun {
    pub state: MeasureState,
    pub system: ConstraintSystem,
    /// Outer iterations per resolution, coarsest first.
    pub iterations: Vec<(usize, usize)>,
}

/// Fits a constrained curve to `d`, starting from density samples in
/// Hilbert order or from `init`.
pub fn curvle(d: &GridDensity, job: &CurveJob, init: Option<Vec<Point>>, rng: &mut impl Rng) -> Result<CurveRun> {
    if job.n < 3 {
        return Err(Error::InvalidInput("a curve needs at least 3 points".into()));
    }
    if !(job.speed > 0.0 && job.accel > 0.0) {
        return Err(Error::InvalidInput("speed and acceleration bounds must be positive".into()));
    }
    let sizes = match &init {
        Some(x) if x.len() != job.n => {
            return Err(Error::InvalidInput(format!("initial curve has {} points, expected {}", x.len(), job.n)))
        }
        Some(_) => vec![job.n],
        None => job.resolutions(),
    };
    let mut x = match init {
        Some(x) => x,
        None => {
            let mut x = poisson_init(d, sizes[0], rng)?;
            hilbert_sort(&mut x);
            x
        }
    };
    let mut w = vec![1.0 / x.len() as f64; x.len()];
    let mut iterations = Vec::new();
    let last = sizes.len() - 1;
    for (level, &m) in sizes.iter().enumerate() {
        if level > 0 {
            (x, w) = crate::curve_proj::upsample_dyadic(&x, &w, job.circular)?;
        }
        debug_assert_eq!(x.len(), m);
        let system = job.system(m)?;
        let mut cfg = job.descent.clone();
        cfg.projection = Some(Projection {
            system: system.clone(),
            admm: job.admm.clone(),
            use_metric: job.use_metric,
        });
        if level < last {
            cfg.stop = StopRule::Iterations;
            cfg.max_iter = job.coarse_iter;
        }
        let meter = SnrMeter::new(d, m);
        let sites = SiteSet::with_unnormalized_weights(x.clone(), w.clone())?;
        let st = run_with_meter(d, &sites, &cfg, Some(&meter))?;
        iterations.push((m, st.iterations));
        log::info!("resolution {m}: {} iterations, stop {:?}", st.iterations, st.stop);
        if level == last {
            return Ok(CurveRun { state: st, system, iterations });
        }
        x = st.sites.positions().to_vec();
        w = st.sites.weights().to_vec();
    }
    unreachable!("at least one resolution")
}

/// Fits `n/2` segments of length `len` to `d`.
pub fn dash(
    d: &GridDensity,
    n: usize,
    len: f64,
    cfg: &DescentConfig,
    admm: &AdmmOptions,
    init: Option<Vec<Point>>,
    rng: &mut impl Rng,
) -> Result<(MeasureState, ConstraintSystem)> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidInput("dashing needs an even number of points".into()));
    }
    if !(len > 0.0) {
        return Err(Error::InvalidInput("dash length must be positive".into()));
    }
    let x = match init {
        Some(x) if x.len() != n => {
            return Err(Error::InvalidInput(format!("initial set has {} points, expected {n}", x.len())))
        }
        Some(x) => x,
        None => {
            let mut x = poisson_init(d, n, rng)?;
            hilbert_sort(&mut x);
            x
        }
    };
    let system = ConstraintSystem::dashes(n, len)?.with_box(0.0, 1.0)?;
    let mut cfg = cfg.clone();
    cfg.projection = Some(Projection {
        system: system.clone(),
        admm: admm.clone(),
        use_metric: false,
    });
    let st = run_with_meter(d, &SiteSet::uniform(x)?, &cfg, None)?;
    Ok((st, system))
}
