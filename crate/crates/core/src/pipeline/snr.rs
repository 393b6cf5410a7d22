//! Gaussian-blurred signal-to-noise ratio between the target density and a
//! discrete measure, both sampled on the density's node grid.

use crate::geom::Point;
use crate::grid_density::GridDensity;

/// Compares `μ` and a weighted point set after blurring with a Gaussian of
/// standard deviation `1/√n` (unit-square units).
#[derive(Debug, Clone)]
pub struct SnrMeter {
    nx: usize,
    ny: usize,
    /// Node masses of the target, trapezoid weights, summing to one.
    target: Vec<f64>,
    n: usize,
    sigma: f64,
    blurred_target: Vec<f64>,
    signal: f64,
}

impl SnrMeter {
    pub fn new(d: &GridDensity, n: usize) -> Self {
        let (w, h) = (d.width(), d.height());
        let (nx, ny) = (w + 1, h + 1);
        let mut target = vec![0.0; nx * ny];
        for j in 0..ny {
            let wy = if j == 0 || j == h { 0.5 } else { 1.0 };
            for i in 0..nx {
                let wx = if i == 0 || i == w { 0.5 } else { 1.0 };
                target[j * nx + i] = d.sample(i, j) * wx * wy;
            }
        }
        let total: f64 = target.iter().sum();
        if total > 0.0 {
            target.iter_mut().for_each(|v| *v /= total);
        }
        let mut m = Self {
            nx,
            ny,
            target,
            n: 0,
            sigma: 0.0,
            blurred_target: Vec::new(),
            signal: 0.0,
        };
        m.set_n(n);
        m
    }

    /// Updates `σ = 1/√n` and the blurred target.
    pub fn set_n(&mut self, n: usize) {
        if n == self.n && !self.blurred_target.is_empty() {
            return;
        }
        self.n = n;
        self.sigma = 1.0 / (n.max(1) as f64).sqrt();
        self.blurred_target = self.blur(&self.target);
        self.signal = self.blurred_target.iter().map(|v| v * v).sum();
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// SNR in dB of the measure `Σ wᵢ δ_{xᵢ}`; `−∞` for an empty set.
    pub fn snr(&self, sites: &[Point], weights: &[f64]) -> f64 {
        if sites.is_empty() {
            return f64::NEG_INFINITY;
        }
        let nu = self.splat(sites, weights);
        self.snr_of_image(&nu)
    }

    /// SNR of a measure already given as node masses.
    pub fn snr_of_image(&self, nu: &[f64]) -> f64 {
        let diff: Vec<f64> = self.target.iter().zip(nu).map(|(a, b)| a - b).collect();
        let noise: f64 = self.blur(&diff).iter().map(|v| v * v).sum();
        10.0 * (self.signal / noise).log10()
    }

    /// Node masses of the target.
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Bilinear, mass-preserving deposit of the weights onto the nodes.
    pub fn splat(&self, sites: &[Point], weights: &[f64]) -> Vec<f64> {
        let (w, h) = (self.nx - 1, self.ny - 1);
        let mut img = vec![0.0; self.nx * self.ny];
        for (p, &m) in sites.iter().zip(weights) {
            let u = (p.x.clamp(0.0, 1.0) * w as f64).min(w as f64);
            let v = (p.y.clamp(0.0, 1.0) * h as f64).min(h as f64);
            let i = (u.floor() as usize).min(w.saturating_sub(1));
            let j = (v.floor() as usize).min(h.saturating_sub(1));
            let (fu, fv) = (u - i as f64, v - j as f64);
            let i1 = (i + 1).min(w);
            let j1 = (j + 1).min(h);
            img[j * self.nx + i] += m * (1.0 - fu) * (1.0 - fv);
            img[j * self.nx + i1] += m * fu * (1.0 - fv);
            img[j1 * self.nx + i] += m * (1.0 - fu) * fv;
            img[j1 * self.nx + i1] += m * fu * fv;
        }
        img
    }

    fn blur(&self, img: &[f64]) -> Vec<f64> {
        let kx = kernel(self.sigma * (self.nx - 1).max(1) as f64);
        let ky = kernel(self.sigma * (self.ny - 1).max(1) as f64);
        let (nx, ny) = (self.nx, self.ny);
        let mut tmp = vec![0.0; nx * ny];
        let rx = kx.len() / 2;
        for j in 0..ny {
            let row = &img[j * nx..(j + 1) * nx];
            for i in 0..nx {
                let lo = i.saturating_sub(rx);
                let hi = (i + rx).min(nx - 1);
                let mut s = 0.0;
                for (k, v) in row.iter().enumerate().take(hi + 1).skip(lo) {
                    s += v * kx[k + rx - i];
                }
                tmp[j * nx + i] = s;
            }
        }
        let mut out = vec![0.0; nx * ny];
        let ry = ky.len() / 2;
        for j in 0..ny {
            let lo = j.saturating_sub(ry);
            let hi = (j + ry).min(ny - 1);
            for k in lo..=hi {
                let c = ky[k + ry - j];
                let src = &tmp[k * nx..(k + 1) * nx];
                for (o, s) in out[j * nx..(j + 1) * nx].iter_mut().zip(src) {
                    *o += c * s;
                }
            }
        }
        out
    }
}

/// Normalized Gaussian truncated at `4σ` (σ in node spacings).
fn kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let t = i as f64 - r as f64;
            (-0.5 * t * t / (sigma * sigma).max(1e-12)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// SNR of `Σ wᵢ δ_{xᵢ}` against `d` with `σ = 1/√n`.
pub fn snr(d: &GridDensity, sites: &[Point], weights: &[f64]) -> f64 {
    SnrMeter::new(d, sites.len()).snr(sites, weights)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn cloud() -> impl Strategy<Value = (Vec<Point>, Vec<f64>)> {
        prop::collection::vec((-0.1..1.1f64, -0.1..1.1f64, 0.0..1.0f64), 1..60)
            .prop_map(|v| (v.iter().map(|t| Point::new(t.0, t.1)).collect(), v.iter().map(|t| t.2).collect()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn splat_preserves_mass((pts, w) in cloud(), nx in 2usize..20, ny in 2usize..20) {
            let d = GridDensity::from_fn(nx, ny, |x, y| 1.0 + x - y * y).unwrap();
            let meter = SnrMeter::new(&d, pts.len());
            let img = meter.splat(&pts, &w);
            prop_assert!(img.iter().all(|&v| v >= 0.0));
            prop_assert!((img.iter().sum::<f64>() - w.iter().sum::<f64>()).abs() <= 1e-9);
        }

        #[test]
        fn snr_grows_toward_the_target((pts, w) in cloud(), t in 0.0..0.9f64) {
            let d = GridDensity::from_fn(16, 16, |x, y| 0.2 + (3.0 * x * y).sin().abs()).unwrap().normalize().unwrap();
            let meter = SnrMeter::new(&d, 64);
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-3);
            let nu = meter.splat(&pts, &w.iter().map(|v| v / s).collect::<Vec<_>>());
            let mix = |a: f64| -> Vec<f64> { nu.iter().zip(meter.target()).map(|(v, m)| (1.0 - a) * v + a * m).collect() };
            let (lo, hi) = (meter.snr_of_image(&mix(t)), meter.snr_of_image(&mix(t + 0.1)));
            prop_assert!(hi >= lo - 1e-9, "{lo} > {hi}");
        }
    }
}
