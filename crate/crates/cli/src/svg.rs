//! Minimal SVG chart emission: polylines, filled quantile bands, axes with
//! ticks, and a legend. Output is deterministic for identical inputs.

use std::fmt::Write;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct BandArea {
    pub label: String,
    pub color: String,
    /// x positions shared by both edges.
    pub xs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<BandArea>,
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Round tick spacing to 1/2/5 times a power of ten.
fn nice_step(span: f64, target_ticks: usize) -> f64 {
    let raw = span / target_ticks as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    step * mag
}

impl Chart {
    pub fn render(&self) -> String {
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut visit = |x: f64, y: f64| {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        };
        for s in &self.series {
            for &(x, y) in &s.points {
                visit(x, y);
            }
        }
        for b in &self.bands {
            for (i, &x) in b.xs.iter().enumerate() {
                visit(x, b.lower[i]);
                visit(x, b.upper[i]);
            }
        }
        if !x_min.is_finite() {
            x_min = 0.0;
            x_max = 1.0;
        }
        if !y_min.is_finite() {
            y_min = 0.0;
            y_max = 1.0;
        }
        if (x_max - x_min).abs() < 1e-12 {
            x_max = x_min + 1.0;
        }
        if (y_max - y_min).abs() < 1e-12 {
            y_max = y_min + 1.0;
        }
        let y_pad = (y_max - y_min) * 0.06;
        y_min -= y_pad;
        y_max += y_pad;

        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = move |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let sy = move |y: f64| MARGIN_TOP + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"17\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            self.title
        );

        // Grid and ticks.
        let x_step = nice_step(x_max - x_min, 8);
        let y_step = nice_step(y_max - y_min, 6);
        let mut tick = (x_min / x_step).ceil() * x_step;
        while tick <= x_max + 1e-9 {
            let px = sx(tick);
            let _ = writeln!(
                svg,
                "<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
                MARGIN_TOP,
                MARGIN_TOP + plot_h
            );
            let _ = writeln!(
                svg,
                "<text x=\"{px:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
                MARGIN_TOP + plot_h + 20.0,
                fmt(tick)
            );
            tick += x_step;
        }
        let mut tick = (y_min / y_step).ceil() * y_step;
        while tick <= y_max + 1e-9 {
            let py = sy(tick);
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
                MARGIN_LEFT,
                MARGIN_LEFT + plot_w
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{}</text>",
                MARGIN_LEFT - 8.0,
                py + 4.0,
                fmt(tick)
            );
            tick += y_step;
        }

        // Bands under the lines.
        for b in &self.bands {
            let mut d = String::new();
            for (i, &x) in b.xs.iter().enumerate() {
                let cmd = if i == 0 { 'M' } else { 'L' };
                let _ = write!(d, "{cmd}{:.2},{:.2} ", sx(x), sy(b.upper[i]));
            }
            for (i, &x) in b.xs.iter().enumerate().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(x), sy(b.lower[i]));
            }
            d.push('Z');
            let _ = writeln!(
                svg,
                "<path d=\"{d}\" fill=\"{}\" fill-opacity=\"0.25\" stroke=\"none\"/>",
                b.color
            );
        }

        for s in &self.series {
            let mut pts = String::new();
            for &(x, y) in &s.points {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{dash}/>",
                pts.trim_end(),
                s.color
            );
        }

        // Axes on top of the grid.
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1.5\"/>",
            MARGIN_LEFT,
            MARGIN_TOP + plot_h,
            MARGIN_LEFT + plot_w,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1.5\"/>",
            MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 14.0,
            self.x_label
        );
        let _ = writeln!(
            svg,
            "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            self.y_label
        );

        // Legend.
        let lx = MARGIN_LEFT + plot_w + 16.0;
        let mut ly = MARGIN_TOP + 10.0;
        for b in &self.bands {
            let _ = writeln!(
                svg,
                "<rect x=\"{lx}\" y=\"{:.2}\" width=\"18\" height=\"10\" fill=\"{}\" fill-opacity=\"0.25\"/>",
                ly - 8.0,
                b.color
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{ly:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                lx + 24.0,
                b.label
            );
            ly += 18.0;
        }
        for s in &self.series {
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let _ = writeln!(
                svg,
                "<line x1=\"{lx}\" y1=\"{:.2}\" x2=\"{}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"{dash}/>",
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                s.color
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{ly:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                lx + 24.0,
                s.label
            );
            ly += 18.0;
        }

        svg.push_str("</svg>\n");
        svg
    }
}
