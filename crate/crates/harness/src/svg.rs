//! A small SVG writer for line charts, scatter plots and heatmaps. The CSV
//! tables are the authoritative output; these are conveniences.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy, Debug)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(vals: impl Iterator<Item = f64>) -> Range {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in vals.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = lo.abs().max(1.0) * 0.5;
            return Range { lo: lo - pad, hi: hi + pad };
        }
        let pad = 0.05 * (hi - lo);
        Range { lo: lo - pad, hi: hi + pad }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A fitted line `y = slope·x + intercept` drawn over the x range.
pub struct Line {
    pub label: String,
    pub slope: f64,
    pub intercept: f64,
}

struct Frame {
    x: Range,
    y: Range,
    svg: String,
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: Range, y: Range) -> Frame {
        let mut svg = String::new();
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = write!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = write!(
            svg,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        let _ = write!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        let mut f = Frame { x, y, svg };
        f.ticks();
        f
    }

    fn px(&self, v: f64) -> f64 {
        self.x.map(v, MARGIN, W - MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        self.y.map(v, H - MARGIN, MARGIN)
    }

    fn ticks(&mut self) {
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.lo + f * (self.x.hi - self.x.lo);
            let yv = self.y.lo + f * (self.y.hi - self.y.lo);
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = write!(
                self.svg,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#,
                H - MARGIN + 14.0
            );
            let _ = write!(
                self.svg,
                r#"<text x="{}" y="{y:.1}" text-anchor="end" dominant-baseline="middle">{yv:.3}</text>"#,
                MARGIN - 4.0
            );
        }
    }

    fn legend(&mut self, i: usize, label: &str) {
        let y = MARGIN + 8.0 + 14.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        let _ = write!(
            self.svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
            W - MARGIN - 150.0,
            y - 8.0,
            W - MARGIN - 136.0,
            y + 1.0,
            escape(label)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn save(path: &Path, svg: String) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}

pub fn line_chart(path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<()> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let mut f = Frame::new(
        title,
        xlabel,
        ylabel,
        Range::of(pts().map(|p| p.0)),
        Range::of(pts().map(|p| p.1)),
    );
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, &(x, y)) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if k == 0 { 'M' } else { 'L' }, f.px(x), f.py(y));
        }
        let _ = write!(f.svg, r#"<path d="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, d.trim_end());
        f.legend(i, &s.label);
    }
    save(path, f.finish())
}

pub fn scatter(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    lines: &[Line],
) -> Result<()> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let mut f = Frame::new(
        title,
        xlabel,
        ylabel,
        Range::of(pts().map(|p| p.0)),
        Range::of(pts().map(|p| p.1)),
    );
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = write!(
                f.svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}" fill-opacity="0.7"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        f.legend(i, &s.label);
    }
    for (i, l) in lines.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let (x0, x1) = (f.x.lo, f.x.hi);
        let _ = write!(
            f.svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-dasharray="4 3"><title>{}</title></line>"#,
            f.px(x0),
            f.py(l.slope * x0 + l.intercept),
            f.px(x1),
            f.py(l.slope * x1 + l.intercept),
            escape(&l.label)
        );
    }
    save(path, f.finish())
}

/// `cells[r][c]` drawn with row `r` at `rows[r]` and column `c` at
/// `cols[c]`; missing cells are grey.
pub fn heatmap(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    cols: &[f64],
    rows: &[f64],
    cells: &[Vec<Option<f64>>],
) -> Result<()> {
    let vals = || cells.iter().flatten().filter_map(|v| *v);
    let lim = vals().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut f = Frame::new(
        title,
        xlabel,
        ylabel,
        Range { lo: 0.0, hi: cols.len().max(1) as f64 },
        Range { lo: 0.0, hi: rows.len().max(1) as f64 },
    );
    let cw = (W - 2.0 * MARGIN) / cols.len().max(1) as f64;
    let ch = (H - 2.0 * MARGIN) / rows.len().max(1) as f64;
    for (r, row) in cells.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let fill = match v {
                None => "#cccccc".to_string(),
                Some(v) => {
                    let t = (v / lim).clamp(-1.0, 1.0);
                    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                    if t >= 0.0 {
                        format!("rgb(255,{fade},{fade})")
                    } else {
                        format!("rgb({fade},{fade},255)")
                    }
                }
            };
            let _ = write!(
                f.svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"><title>{} @ {}: {}</title></rect>"#,
                MARGIN + c as f64 * cw,
                H - MARGIN - (r + 1) as f64 * ch,
                cw,
                ch,
                cols.get(c).copied().unwrap_or(f64::NAN),
                rows.get(r).copied().unwrap_or(f64::NAN),
                v.map_or("NA".to_string(), |v| format!("{v:e}"))
            );
        }
    }
    save(path, f.finish())
}
