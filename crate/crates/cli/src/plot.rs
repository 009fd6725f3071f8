use std::fmt::Write;

use ndarray::ArrayView2;
use slisemap::cluster::{BinnedGrid, ClusterSummary};

use crate::args::PlotOptions;

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

const VIRIDIS: [(f64, f64, f64); 9] = [
    (68.0, 1.0, 84.0),
    (71.0, 44.0, 122.0),
    (59.0, 81.0, 139.0),
    (44.0, 113.0, 142.0),
    (33.0, 144.0, 141.0),
    (39.0, 173.0, 129.0),
    (92.0, 200.0, 99.0),
    (170.0, 220.0, 50.0),
    (253.0, 231.0, 37.0),
];

const LEFT: f64 = 64.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const LEGEND: f64 = 120.0;

pub fn category_colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Sequential colour for `t` in `[0, 1]` (clamped).
pub fn sequential_colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Round tick positions covering `[lo, hi]`, steps of 1, 2 or 5 times a power of ten.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || target == 0 {
        return Vec::new();
    }
    if hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|s| s * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn format_tick(v: f64) -> String {
    let v = if v.abs() < 1e-12 { 0.0 } else { v };
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from data to pixels.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, from, to }
    }

    fn padded(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Self::new(lo - pad, hi + pad, from, to)
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: u32, height: u32) -> Self {
        Self { width: width as f64, height: height as f64, body: String::new() }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" fill-opacity="0.8"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            escape(content)
        );
    }

    fn vertical_text(&mut self, x: f64, y: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            escape(content)
        );
    }

    fn title(&mut self, content: &str) {
        self.text(self.width / 2.0, 22.0, "middle", 15, content);
    }

    /// Frame with ticks on the bottom and left edges.
    fn axes(&mut self, xs: Scale, ys: Scale, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (xs.from, xs.to, ys.to, ys.from);
        let _ = writeln!(
            self.body,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y1 - y0
        );
        for t in nice_ticks(xs.lo, xs.hi, 6) {
            let px = xs.map(t);
            self.line(px, y1, px, y1 + 5.0, "#333");
            self.text(px, y1 + 18.0, "middle", 11, &format_tick(t));
        }
        for t in nice_ticks(ys.lo, ys.hi, 6) {
            let py = ys.map(t);
            self.line(x0 - 5.0, py, x0, py, "#333");
            self.text(x0 - 8.0, py + 4.0, "end", 11, &format_tick(t));
        }
        self.text((x0 + x1) / 2.0, y1 + 38.0, "middle", 12, x_label);
        self.vertical_text(16.0, (y0 + y1) / 2.0, y_label);
    }

    fn finish(self, metadata: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<metadata>{}</metadata>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            escape(metadata),
            self.body,
            w = self.width,
            h = self.height,
        )
    }
}

fn column(z: ArrayView2<f64>, c: usize) -> Vec<f64> {
    if c < z.ncols() {
        z.column(c).to_vec()
    } else {
        vec![0.0; z.nrows()]
    }
}

fn extent(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Embedding scatter plot, coloured by cluster when labels are given.
pub fn scatter(z: ArrayView2<f64>, labels: Option<&[usize]>, options: &PlotOptions, metadata: &str) -> String {
    let mut svg = Svg::new(options.width, options.height);
    let (xv, yv) = (column(z, 0), column(z, 1));
    let ((xlo, xhi), (ylo, yhi)) = (extent(&xv), extent(&yv));
    let xs = Scale::padded(xlo, xhi, LEFT, svg.width - LEGEND);
    let ys = Scale::padded(ylo, yhi, svg.height - BOTTOM, TOP);
    svg.title("Embedding");
    svg.axes(xs, ys, "Z1", "Z2");
    for i in 0..xv.len() {
        let colour = labels.map_or(category_colour(0), |l| category_colour(l[i]));
        svg.circle(xs.map(xv[i]), ys.map(yv[i]), 3.0, colour);
    }
    if let Some(labels) = labels {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let x = svg.width - LEGEND + 16.0;
        svg.text(x, TOP + 4.0, "start", 12, "Cluster");
        for c in 0..k {
            let y = TOP + 22.0 + 18.0 * c as f64;
            svg.circle(x + 5.0, y - 4.0, 5.0, category_colour(c));
            svg.text(x + 16.0, y, "start", 11, &format!("{}", c + 1));
        }
    }
    svg.finish(metadata)
}

/// Grouped horizontal bars: mean coefficient per cluster and variable.
pub fn coefficients(summary: &ClusterSummary, options: &PlotOptions, metadata: &str) -> String {
    let mut svg = Svg::new(options.width, options.height);
    let names = &summary.coefficient_names;
    let k = summary.per_cluster.len();
    let values: Vec<f64> = summary.per_cluster.iter().flat_map(|c| c.mean_coefficients.iter().copied()).collect();
    let (lo, hi) = extent(&values);
    let left = LEFT + 40.0;
    let xs = Scale::padded(lo.min(0.0), hi.max(0.0), left, svg.width - LEGEND);
    let (top, bottom) = (TOP, svg.height - BOTTOM);
    let band = (bottom - top) / names.len().max(1) as f64;
    let bar = 0.8 * band / k.max(1) as f64;
    svg.title("Local model coefficients by cluster");
    let _ = writeln!(
        svg.body,
        r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
        xs.to - left,
        bottom - top
    );
    for t in nice_ticks(xs.lo, xs.hi, 6) {
        let px = xs.map(t);
        svg.line(px, bottom, px, bottom + 5.0, "#333");
        svg.text(px, bottom + 18.0, "middle", 11, &format_tick(t));
    }
    svg.text((left + xs.to) / 2.0, bottom + 38.0, "middle", 12, "Coefficient (normalised units)");
    let zero = xs.map(0.0);
    svg.line(zero, top, zero, bottom, "#999");
    for (v, name) in names.iter().enumerate() {
        let band_top = top + band * v as f64 + 0.1 * band;
        svg.text(left - 8.0, band_top + 0.4 * band + 4.0, "end", 11, name);
        for (c, stats) in summary.per_cluster.iter().enumerate() {
            let value = stats.mean_coefficients[v];
            let (a, b) = (zero.min(xs.map(value)), zero.max(xs.map(value)));
            svg.rect(a, band_top + bar * c as f64, (b - a).max(0.5), bar, category_colour(c));
        }
    }
    let x = svg.width - LEGEND + 16.0;
    svg.text(x, TOP + 4.0, "start", 12, "Cluster");
    for (c, stats) in summary.per_cluster.iter().enumerate() {
        let y = TOP + 22.0 + 18.0 * c as f64;
        svg.rect(x, y - 9.0, 10.0, 10.0, category_colour(c));
        svg.text(x + 16.0, y, "start", 11, &format!("{} (n={})", c + 1, stats.size));
    }
    svg.finish(metadata)
}

/// Binned medians over the embedding plane with a colour bar spanning `bounds`.
pub fn heatmap(grid: &BinnedGrid, bounds: (f64, f64), label: &str, options: &PlotOptions, metadata: &str) -> String {
    let mut svg = Svg::new(options.width, options.height);
    let xs = Scale::new(grid.x_range.0, grid.x_range.1, LEFT, svg.width - LEGEND);
    let ys = Scale::new(grid.y_range.0, grid.y_range.1, svg.height - BOTTOM, TOP);
    svg.title(&format!("Median {label} over the embedding"));
    let g = grid.grid_size;
    let (cw, ch) = ((xs.to - xs.from) / g as f64, (ys.from - ys.to) / g as f64);
    let (lo, hi) = bounds;
    let span = if hi > lo { hi - lo } else { 1.0 };
    for row in 0..g {
        for col in 0..g {
            if let Some(v) = grid.cell(col, row) {
                let y = ys.from - ch * (row + 1) as f64;
                svg.rect(xs.from + cw * col as f64, y, cw + 0.3, ch + 0.3, &sequential_colour((v - lo) / span));
            }
        }
    }
    svg.axes(xs, ys, "Z1", "Z2");

    let (bx, bw) = (svg.width - LEGEND + 24.0, 16.0);
    let (btop, bbottom) = (TOP + 10.0, svg.height - BOTTOM);
    let steps = 64;
    let step_h = (bbottom - btop) / steps as f64;
    for s in 0..steps {
        let t = (s as f64 + 0.5) / steps as f64;
        svg.rect(bx, bbottom - step_h * (s + 1) as f64, bw, step_h + 0.3, &sequential_colour(t));
    }
    let bar = Scale::new(lo, hi, bbottom, btop);
    let margin = 0.08 * (bar.hi - bar.lo);
    let inner = nice_ticks(bar.lo, bar.hi, 5).into_iter().filter(|t| *t > bar.lo + margin && *t < bar.hi - margin);
    for t in std::iter::once(bar.lo).chain(inner).chain(std::iter::once(bar.hi)) {
        let py = bar.map(t);
        svg.line(bx + bw, py, bx + bw + 4.0, py, "#333");
        svg.text(bx + bw + 7.0, py + 4.0, "start", 11, &format_tick(t));
    }
    svg.text(bx + bw / 2.0, btop - 6.0, "middle", 11, label);
    svg.finish(metadata)
}
