use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SnrMeter;
use crate::descent::{run_with_meter, DescentConfig, StopReason, StopRule, WeightMode};
use crate::geom::Point;
use crate::grid_density::GridDensity;
use crate::laguerre::SiteSet;
use crate::ot_dual::{NewtonMode, SolverOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchDensity {
    Uniform,
    /// `ρ = 2·1{x < 0.5}`
    HalfSplit,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub density: BenchDensity,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub snr_stop: f64,
    pub max_iter: usize,
    pub time_limit: Option<Duration>,
    pub mode: NewtonMode,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            density: BenchDensity::Uniform,
            sizes: vec![1 << 10, 1 << 12, 1 << 14],
            seed: 0,
            snr_stop: 31.0,
            max_iter: 100,
            time_limit: None,
            mode: NewtonMode::Regularized,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub density: BenchDensity,
    pub n: usize,
    pub seed: u64,
    /// Outer iterations, or `TL` / `NC` when the run did not finish.
    pub iterations: String,
    pub seconds: f64,
    pub snr: f64,
    pub dual_iterations: usize,
}

impl BenchRow {
    pub fn converged(&self) -> bool {
        self.iterations.parse::<usize>().is_ok()
    }
}

/// Background resolution in pixels per side.
pub const BENCH_PIXELS: usize = 1024;

pub fn bench_density(kind: BenchDensity) -> Result<GridDensity> {
    let g = BENCH_PIXELS;
    let d = match kind {
        BenchDensity::Uniform => GridDensity::from_fn(g, g, |_, _| 1.0)?,
        BenchDensity::HalfSplit => GridDensity::from_fn(g, g, |x, _| {
            if x < 0.5 {
                2.0
            } else if x == 0.5 {
                1.0
            } else {
                0.0
            }
        })?,
    };
    d.normalize()
}

/// Uniform random start, independent of the target density.
pub fn uniform_init(n: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()
}

/// Runs fixed-weight descent until the SNR stop for every size.
pub fn run_bench(cfg: &BenchConfig, mut csv_out: Option<&mut dyn Write>) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let mut wr = csv_out.as_mut().map(|w| csv::Writer::from_writer(w));
    for &n in &cfg.sizes {
        let d = bench_density(cfg.density)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9));
        let init = SiteSet::uniform(uniform_init(n, &mut rng))?;
        let meter = SnrMeter::new(&d, n);
        let dc = DescentConfig {
            weight_mode: WeightMode::Fixed,
            stop: StopRule::Snr(cfg.snr_stop),
            max_iter: cfg.max_iter,
            time_limit: cfg.time_limit,
            dual: SolverOptions {
                mode: cfg.mode,
                ..SolverOptions::default()
            },
            ..Default::default()
        };
        let t = Instant::now();
        let st = run_with_meter(&d, &init, &dc, Some(&meter))?;
        let secs = t.elapsed().as_secs_f64();
        let iterations = match st.stop {
            StopReason::Snr => st.iterations.to_string(),
            StopReason::TimeLimit => "TL".into(),
            _ => "NC".into(),
        };
        let row = BenchRow {
            density: cfg.density,
            n,
            seed: cfg.seed,
            iterations,
            seconds: secs,
            snr: st.snr.unwrap_or(f64::NAN),
            dual_iterations: st.dual_iterations,
        };
        log::info!("{row:?}");
        if let Some(w) = wr.as_mut() {
            w.serialize(&row).map_err(|e| Error::Parse(e.to_string()))?;
            w.flush()?;
        }
        rows.push(row);
    }
    Ok(rows)
}
