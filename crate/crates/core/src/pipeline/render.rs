use std::io::Write;

use crate::geom::Point;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// One disc per point.
    Stipple,
    /// One polyline through all points.
    Curve { closed: bool },
    /// A segment per consecutive pair of points.
    Dash,
}

#[derive(Debug, Clone)]
pub struct RenderSpec {
    pub mode: RenderMode,
    /// Dot radius in pixels (stipples).
    pub radius: f64,
    /// Stroke width in pixels (curves, dashes).
    pub stroke: f64,
    /// Canvas width in pixels; the height follows the aspect ratio.
    pub canvas: u32,
    /// Height over width of the drawing.
    pub aspect: f64,
    /// Per-point colors; `None` draws black on white.
    pub colors: Option<Vec<[f64; 3]>>,
}

/// Radius giving roughly half coverage for `n` dots on a square canvas.
pub fn default_radius(canvas: u32, n: usize) -> f64 {
    0.4 * canvas as f64 / (n.max(1) as f64).sqrt()
}

pub fn default_stroke(canvas: u32, n: usize) -> f64 {
    0.3 * canvas as f64 / (n.max(1) as f64).sqrt()
}

impl RenderSpec {
    pub fn new(mode: RenderMode, canvas: u32, n: usize) -> Self {
        Self {
            mode,
            radius: default_radius(canvas, n),
            stroke: default_stroke(canvas, n),
            canvas,
            aspect: 1.0,
            colors: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.stroke > 0.0) {
            return Err(Error::InvalidInput("dot radius and stroke width must be positive".into()));
        }
        if self.canvas < 16 {
            return Err(Error::InvalidInput("canvas must be at least 16 px".into()));
        }
        if !(self.aspect > 0.0) {
            return Err(Error::InvalidInput("aspect ratio must be positive".into()));
        }
        Ok(())
    }

    fn height(&self) -> u32 {
        ((self.canvas as f64 * self.aspect).round() as u32).max(1)
    }

    fn to_px(&self, p: Point) -> (f64, f64) {
        (p.x * self.canvas as f64, p.y * self.height() as f64)
    }

    fn background(&self) -> &'static str {
        if self.colors.is_some() {
            "black"
        } else {
            "white"
        }
    }
}

fn hex(c: [f64; 3]) -> String {
    let b = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}

/// Writes `points` as SVG: circles for stipples, polylines with round joins
/// for curves, lines for dashes.
pub fn write_svg(points: &[Point], spec: &RenderSpec, mut w: impl Write) -> Result<()> {
    spec.validate()?;
    let (cw, ch) = (spec.canvas, spec.height());
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{cw}" height="{ch}" viewBox="0 0 {cw} {ch}">"#
    )?;
    writeln!(w, r#"<rect width="{cw}" height="{ch}" fill="{}"/>"#, spec.background())?;
    let color = |i: usize| spec.colors.as_ref().and_then(|c| c.get(i)).map(|c| hex(*c)).unwrap_or_else(|| "black".into());
    match spec.mode {
        RenderMode::Stipple => {
            for (i, &p) in points.iter().enumerate() {
                let (x, y) = spec.to_px(p);
                writeln!(
                    w,
                    r#"<circle cx="{x:.6}" cy="{y:.6}" r="{:.4}" fill="{}"/>"#,
                    spec.radius,
                    color(i)
                )?;
            }
        }
        RenderMode::Curve { closed } => {
            let pts: Vec<String> = points
                .iter()
                .map(|&p| {
                    let (x, y) = spec.to_px(p);
                    format!("{x:.6},{y:.6}")
                })
                .collect();
            let tag = if closed { "polygon" } else { "polyline" };
            writeln!(
                w,
                r#"<{tag} points="{}" fill="none" stroke="{}" stroke-width="{:.4}" stroke-linejoin="round" stroke-linecap="round"/>"#,
                pts.join(" "),
                color(0),
                spec.stroke
            )?;
        }
        RenderMode::Dash => {
            for (k, pair) in points.chunks_exact(2).enumerate() {
                let (x1, y1) = spec.to_px(pair[0]);
                let (x2, y2) = spec.to_px(pair[1]);
                writeln!(
                    w,
                    r#"<line x1="{x1:.6}" y1="{y1:.6}" x2="{x2:.6}" y2="{y2:.6}" stroke="{}" stroke-width="{:.4}" stroke-linecap="round"/>"#,
                    color(2 * k),
                    spec.stroke
                )?;
            }
        }
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

/// Centres of the `<circle>` elements of an SVG document, in pixels.
pub fn parse_svg_circles(svg: &str) -> Vec<(f64, f64)> {
    let attr = |tag: &str, name: &str| -> Option<f64> {
        let key = format!(" {name}=\"");
        let start = tag.find(&key)? + key.len();
        let end = tag[start..].find('"')? + start;
        tag[start..end].parse().ok()
    };
    svg.split("<circle")
        .skip(1)
        .filter_map(|rest| {
            let tag = &rest[..rest.find('>')?];
            Some((attr(tag, "cx")?, attr(tag, "cy")?))
        })
        .collect()
}

/// Rasterizes the drawing with 4×4 supersampling per pixel.
pub fn render_png(points: &[Point], spec: &RenderSpec) -> Result<image::RgbImage> {
    spec.validate()?;
    let (cw, ch) = (spec.canvas, spec.height());
    let bg = if spec.colors.is_some() { [0.0; 3] } else { [1.0; 3] };
    let mut acc = vec![[0.0f64; 3]; (cw * ch) as usize];
    let mut cover = vec![0.0f64; (cw * ch) as usize];
    let ss = 4usize;
    let mut disc = |cx: f64, cy: f64, r: f64, col: [f64; 3]| {
        let x0 = ((cx - r).floor().max(0.0)) as u32;
        let x1 = ((cx + r).ceil().min(cw as f64 - 1.0)).max(0.0) as u32;
        let y0 = ((cy - r).floor().max(0.0)) as u32;
        let y1 = ((cy + r).ceil().min(ch as f64 - 1.0)).max(0.0) as u32;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let mut hit = 0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let x = px as f64 + (sx as f64 + 0.5) / ss as f64 - cx;
                        let y = py as f64 + (sy as f64 + 0.5) / ss as f64 - cy;
                        if x * x + y * y <= r * r {
                            hit += 1;
                        }
                    }
                }
                if hit > 0 {
                    let k = (py * cw + px) as usize;
                    let a = hit as f64 / (ss * ss) as f64;
                    if a > cover[k] {
                        cover[k] = a;
                        acc[k] = col;
                    }
                }
            }
        }
    };
    let fg = |i: usize| spec.colors.as_ref().and_then(|c| c.get(i)).copied().unwrap_or([0.0; 3]);
    match spec.mode {
        RenderMode::Stipple => {
            for (i, &p) in points.iter().enumerate() {
                let (x, y) = spec.to_px(p);
                disc(x, y, spec.radius, fg(i));
            }
        }
        RenderMode::Curve { .. } | RenderMode::Dash => {
            let segs: Vec<(Point, Point, usize)> = match spec.mode {
                RenderMode::Dash => points.chunks_exact(2).enumerate().map(|(k, c)| (c[0], c[1], 2 * k)).collect(),
                RenderMode::Curve { closed } => {
                    let n = points.len();
                    let m = if closed { n } else { n.saturating_sub(1) };
                    (0..m).map(|i| (points[i], points[(i + 1) % n], 0)).collect()
                }
                RenderMode::Stipple => unreachable!(),
            };
            let r = 0.5 * spec.stroke;
            for (a, b, i) in segs {
                let (ax, ay) = spec.to_px(a);
                let (bx, by) = spec.to_px(b);
                let len = (bx - ax).hypot(by - ay);
                let steps = (len / (0.5 * r).max(0.25)).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    disc(ax + t * (bx - ax), ay + t * (by - ay), r, fg(i));
                }
            }
        }
    }
    let mut img = image::RgbImage::new(cw, ch);
    for (k, px) in img.pixels_mut().enumerate() {
        let a = cover[k];
        let c: [f64; 3] = std::array::from_fn(|c| a * acc[k][c] + (1.0 - a) * bg[c]);
        *px = image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(img)
}
