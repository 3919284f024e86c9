//! Minimal SVG charts: grouped bars, lines, heatmaps and histograms.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{ensure, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One named series of y values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
}

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(values: impl Iterator<Item = f64>, include_zero: bool) -> Self {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if include_zero {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: if include_zero && lo == 0.0 { 0.0 } else { lo - pad },
            hi: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, y_label: &str) {
        let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
        let _ = writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>"#);
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
                l - 4.0,
                l - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
    }
}

fn legend(out: &mut String, names: impl Iterator<Item = String>) {
    for (i, name) in names.enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 110.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{}" y="{:.2}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(&name)
        );
    }
}

/// Grouped bar chart: one group per category, one bar per series.
pub fn bar_chart(title: &str, categories: &[String], series: &[Series], y_label: &str) -> Result<String> {
    ensure(!categories.is_empty() && !series.is_empty(), || Error::Empty("bar chart data".into()))?;
    ensure(series.iter().all(|s| s.values.len() == categories.len()), || {
        Error::DimensionMismatch("every series needs one value per category".into())
    })?;
    let frame = Frame::new(series.iter().flat_map(|s| s.values.iter().copied()), true);
    let mut out = String::new();
    header(&mut out, title, WIDTH, HEIGHT);
    frame.axes(&mut out, y_label);
    let group = (WIDTH - 2.0 * MARGIN) / categories.len() as f64;
    let bar = 0.8 * group / series.len() as f64;
    for (c, cat) in categories.iter().enumerate() {
        let x0 = MARGIN + group * c as f64 + 0.1 * group;
        for (k, s) in series.iter().enumerate() {
            let v = s.values[c];
            if !v.is_finite() {
                continue;
            }
            let (ya, yb) = (frame.y(v), frame.y(0.0_f64.max(frame.lo)));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                x0 + bar * k as f64,
                ya.min(yb),
                bar,
                (ya - yb).abs(),
                PALETTE[k % PALETTE.len()],
                escape(&s.name)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + 0.4 * group,
            HEIGHT - MARGIN + 16.0,
            escape(cat)
        );
    }
    legend(&mut out, series.iter().map(|s| s.name.clone()));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line chart over shared x values.
pub fn line_chart(title: &str, x: &[f64], series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    ensure(x.len() >= 2 && !series.is_empty(), || Error::Empty("line chart needs two x values".into()))?;
    ensure(series.iter().all(|s| s.values.len() == x.len()), || {
        Error::DimensionMismatch("every series needs one value per x".into())
    })?;
    let frame = Frame::new(series.iter().flat_map(|s| s.values.iter().copied()), false);
    let xf = Frame::new(x.iter().copied(), false);
    let px = |v: f64| MARGIN + (v - xf.lo) / (xf.hi - xf.lo) * (WIDTH - 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, title, WIDTH, HEIGHT);
    frame.axes(&mut out, y_label);
    for &v in x {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v}</text>"#,
            px(v),
            HEIGHT - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = x
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), frame.y(b)))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (a, b) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{a}" cy="{b}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, series.iter().map(|s| s.name.clone()));
    out.push_str("</svg>\n");
    Ok(out)
}

fn diverging(v: f64, limit: f64) -> String {
    let t = (v / limit).clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{0:02x}{0:02x}", fade(t))
    } else {
        format!("#{0:02x}{0:02x}ff", fade(t))
    }
}

/// Heatmap with a symmetric blue-white-red scale centred at zero.
pub fn heatmap(title: &str, m: &Array2<f64>) -> Result<String> {
    ensure(!m.is_empty(), || Error::Empty("heatmap".into()))?;
    let limit = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
    let (rows, cols) = m.dim();
    let cell = (480.0 / rows.max(cols) as f64).clamp(2.0, 40.0);
    let (w, h) = (cols as f64 * cell + 2.0 * MARGIN, rows as f64 * cell + 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, title, w, h);
    for ((i, j), &v) in m.indexed_iter() {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
            MARGIN + j as f64 * cell,
            MARGIN + i as f64 * cell,
            diverging(v, limit)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">scale: -{limit:.3} (blue) to {limit:.3} (red)</text>"#,
        w / 2.0,
        h - 16.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Overlaid histograms of several samples on shared bins over `[lo, hi]`.
pub fn histogram(title: &str, samples: &[Series], bins: usize, lo: f64, hi: f64, x_label: &str) -> Result<String> {
    ensure(bins >= 1 && hi > lo, || Error::InvalidConfig("histogram needs bins >= 1 and hi > lo".into()))?;
    ensure(!samples.is_empty(), || Error::Empty("histogram data".into()))?;
    let densities: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut c = vec![0.0; bins];
            for &v in &s.values {
                if v.is_finite() {
                    let b = (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
                    c[b] += 1.0;
                }
            }
            let total = s.values.len().max(1) as f64;
            c.iter().map(|x| x / total).collect()
        })
        .collect();
    let frame = Frame::new(densities.iter().flatten().copied(), true);
    let mut out = String::new();
    header(&mut out, title, WIDTH, HEIGHT);
    frame.axes(&mut out, "fraction");
    let bw = (WIDTH - 2.0 * MARGIN) / bins as f64;
    for (k, d) in densities.iter().enumerate() {
        for (b, &v) in d.iter().enumerate() {
            let y = frame.y(v);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{bw:.2}" height="{:.2}" fill="{}" fill-opacity="0.5"/>"#,
                MARGIN + bw * b as f64,
                frame.y(0.0) - y,
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    for (i, v) in [lo, (lo + hi) / 2.0, hi].iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.2}</text>"#,
            MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / 2.0,
            HEIGHT - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    legend(&mut out, samples.iter().map(|s| format!("{} (n={})", s.name, s.values.len())));
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}
