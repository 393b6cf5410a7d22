//! Image ingestion, colors, SNR measurement, rendering and benchmarks.

mod bench;
mod curves;
mod render;
mod snr;

pub use bench::{bench_density, run_bench, uniform_init, BenchConfig, BenchDensity, BenchRow, BENCH_PIXELS};
pub use curves::{curvle, dash, hilbert_sort, CurveJob, CurveKind, CurveRun};
pub use render::{default_radius, default_stroke, parse_svg_circles, render_png, write_svg, RenderMode, RenderSpec};
pub use snr::{snr, SnrMeter};

use std::path::Path;

use crate::geom::Point;
use crate::grid_density::GridDensity;
use crate::{Error, Result};

/// RGB image with channels in `[0, 1]`, pixels row-major from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self { width, height, pixels }
    }

    pub fn gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self::from_fn(width, height, |i, j| {
            let v = f(i, j);
            [v, v, v]
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::UnsupportedFormat(other.to_string()),
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let pixels = rgb
            .pixels()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        Self {
            width: w as usize,
            height: h as usize,
            pixels,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (k, px) in out.pixels_mut().enumerate() {
            let c = self.pixels[k];
            *px = image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        out.save(path).map_err(|e| Error::UnsupportedFormat(e.to_string()))
    }

    /// Bilinear sample with pixel centres on the nodes of the unit square.
    pub fn sample(&self, p: Point) -> [f64; 3] {
        let (w, h) = (self.width, self.height);
        let u = (p.x.clamp(0.0, 1.0) * (w - 1) as f64).min((w - 1) as f64);
        let v = (p.y.clamp(0.0, 1.0) * (h - 1) as f64).min((h - 1) as f64);
        let i = (u.floor() as usize).min(w.saturating_sub(2));
        let j = (v.floor() as usize).min(h.saturating_sub(2));
        let (fu, fv) = (u - i as f64, v - j as f64);
        let i1 = (i + 1).min(w - 1);
        let j1 = (j + 1).min(h - 1);
        let px = |i: usize, j: usize| self.pixels[j * w + i];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (1.0 - fu) * (1.0 - fv) * px(i, j)[c]
                + fu * (1.0 - fv) * px(i1, j)[c]
                + (1.0 - fu) * fv * px(i, j1)[c]
                + fu * fv * px(i1, j1)[c];
        }
        out
    }
}

/// Which tone of the image carries mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tone {
    /// `ρ = 1 − gray`, for dark marks on a light background.
    #[default]
    DarkIsDense,
    /// `ρ = gray`, for light marks on a dark background.
    LightIsDense,
}

/// Normalized density from the channel mean of `img`. Pixels become grid
/// nodes, so a `w × h` image gives `(w − 1) × (h − 1)` cells.
pub fn build_density(img: &Image, tone: Tone) -> Result<GridDensity> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::UnsupportedFormat("image must be at least 2×2 pixels".into()));
    }
    let samples = img
        .pixels
        .iter()
        .map(|c| {
            let g = (c[0] + c[1] + c[2]) / 3.0;
            match tone {
                Tone::DarkIsDense => 1.0 - g,
                Tone::LightIsDense => g,
            }
        })
        .collect();
    GridDensity::new(img.width - 1, img.height - 1, samples)?.normalize()
}

/// Per-site color `ρ/ρ̄` channel-wise (clamped to `[0, 1]`), or the raw
/// pixel color where the luminance vanishes.
pub fn assign_colors(img: &Image, sites: &[Point]) -> Vec<[f64; 3]> {
    sites
        .iter()
        .map(|&p| {
            let c = img.sample(p);
            let mean = (c[0] + c[1] + c[2]) / 3.0;
            if mean > 1e-12 {
                c.map(|v| (v / mean).clamp(0.0, 1.0))
            } else {
                c
            }
        })
        .collect()
}
