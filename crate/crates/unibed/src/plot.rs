//! Curve rendering: one known CSV schema in, one standalone SVG out.
//! Identical input must yield identical bytes, so every coordinate is
//! formatted with a fixed precision and nothing depends on the locale
//! or the clock.

use std::fmt;

#[derive(Debug)]
pub enum PlotError {
    Schema(String),
}

impl fmt::Display for PlotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlotError::Schema(e) => write!(f, "curve schema mismatch: {}", e),
        }
    }
}

impl std::error::Error for PlotError {}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 55.0;

struct Series {
    x_label: &'static str,
    y_label: &'static str,
    points: Vec<(f64, f64)>,
}

fn parse_series(csv: &str) -> Result<Series, PlotError> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| PlotError::Schema("empty file".into()))?;
    let (x_label, y_label, xi, yi, ncols) = match header {
        "bias_c,energy_kwh,extra_kwh,duty_cycle" => ("bias (°C)", "extra energy (kWh)", 0, 2, 4),
        other => {
            return Err(PlotError::Schema(format!(
                "unknown header {:?}; expected a thermostat bias sweep",
                other
            )))
        }
    };
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != ncols {
            return Err(PlotError::Schema(format!("row {}: {} columns, want {}", i + 1, cols.len(), ncols)));
        }
        let x: f64 = cols[xi]
            .parse()
            .map_err(|_| PlotError::Schema(format!("row {}: bad number {:?}", i + 1, cols[xi])))?;
        let y: f64 = cols[yi]
            .parse()
            .map_err(|_| PlotError::Schema(format!("row {}: bad number {:?}", i + 1, cols[yi])))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(PlotError::Schema(format!("row {}: non-finite value", i + 1)));
        }
        points.push((x, y));
    }
    if points.is_empty() {
        return Err(PlotError::Schema("no data rows".into()));
    }
    Ok(Series { x_label, y_label, points })
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        // Degenerate span: pad so the single value sits mid-axis.
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Renders the CSV into a self-contained SVG document.
pub fn render_curve_csv(csv: &str) -> Result<String, PlotError> {
    let series = parse_series(csv)?;
    let (x_lo, x_hi) = span(series.points.iter().map(|p| p.0));
    let (y_lo, y_hi) = span(series.points.iter().map(|p| p.1));

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::with_capacity(4096);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = WIDTH,
        h = HEIGHT
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        WIDTH, HEIGHT
    ));

    // Axes.
    out.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        MARGIN_L,
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    out.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        MARGIN_L,
        MARGIN_T,
        MARGIN_L,
        MARGIN_T + plot_h
    ));

    // Five ticks per axis, evenly spaced over the data span.
    for i in 0..5 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let xp = sx(xv);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            xp,
            MARGIN_T + plot_h,
            xp,
            MARGIN_T + plot_h + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\" text-anchor=\"middle\">{}</text>\n",
            xp,
            MARGIN_T + plot_h + 18.0,
            fmt_tick(xv)
        ));
        let yv = y_lo + f * (y_hi - y_lo);
        let yp = sy(yv);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            MARGIN_L - 5.0,
            yp,
            MARGIN_L,
            yp
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            yp + 4.0,
            fmt_tick(yv)
        ));
    }

    // Axis labels.
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#333333\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        series.x_label
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#333333\" text-anchor=\"middle\" transform=\"rotate(-90 {x} {y})\">{label}</text>\n",
        16.0,
        MARGIN_T + plot_h / 2.0,
        x = 16.0,
        y = MARGIN_T + plot_h / 2.0,
        label = series.y_label
    ));

    // Data: a polyline when there are at least two points, and a marker
    // on every point either way.
    if series.points.len() >= 2 {
        let mut pts = String::new();
        for (x, y) in &series.points {
            pts.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
        }
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fb4\" stroke-width=\"2\"/>\n",
            pts.trim_end()
        ));
    }
    for (x, y) in &series.points {
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#1f6fb4\"/>\n",
            sx(*x),
            sy(*y)
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}
