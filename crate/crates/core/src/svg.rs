//! Dependency-free SVG emission for curve plots and histograms. Output is
//! plain text, byte-deterministic for a fixed input, and diffable in tests.

const WIDTH: f64 = 680.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 510.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 376.0;

/// Matplotlib's tab10 palette, cycled per series.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str) -> Canvas {
        let mut body = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
        );
        body.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        body.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            px((LEFT + RIGHT) / 2.0),
            esc(title)
        ));
        Canvas { body }
    }

    fn axes(&mut self, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64)) {
        let b = &mut self.body;
        b.push_str(&format!(
            "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{bm}\" stroke=\"black\"/>\n\
             <line x1=\"{l}\" y1=\"{bm}\" x2=\"{r}\" y2=\"{bm}\" stroke=\"black\"/>\n",
            l = px(LEFT),
            r = px(RIGHT),
            t = px(TOP),
            bm = px(BOTTOM)
        ));
        for (frac, vx) in [(0.0, xr.0), (0.5, (xr.0 + xr.1) / 2.0), (1.0, xr.1)] {
            let x = LEFT + frac * (RIGHT - LEFT);
            b.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n\
                 <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\">{v}</text>\n",
                x = px(x),
                y0 = px(BOTTOM),
                y1 = px(BOTTOM + 5.0),
                ty = px(BOTTOM + 18.0),
                v = tick(vx)
            ));
        }
        for (frac, vy) in [(0.0, yr.0), (0.5, (yr.0 + yr.1) / 2.0), (1.0, yr.1)] {
            let y = BOTTOM - frac * (BOTTOM - TOP);
            b.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>\n\
                 <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\">{v}</text>\n",
                x0 = px(LEFT - 5.0),
                x1 = px(LEFT),
                y = px(y),
                tx = px(LEFT - 8.0),
                ty = px(y + 4.0),
                v = tick(vy)
            ));
        }
        b.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{l}</text>\n",
            x = px((LEFT + RIGHT) / 2.0),
            y = px(BOTTOM + 36.0),
            l = esc(x_label)
        ));
        b.push_str(&format!(
            "<text x=\"16\" y=\"{y}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {yr})\">{l}</text>\n",
            y = px((TOP + BOTTOM) / 2.0),
            yr = px((TOP + BOTTOM) / 2.0),
            l = esc(y_label)
        ));
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Multi-series line plot with axes, 3-tick labels, and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let xr = pad_range(
        pts.clone().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.clone().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let yr = pad_range(
        pts.clone().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let sx = |v: f64| LEFT + (v - xr.0) / (xr.1 - xr.0) * (RIGHT - LEFT);
    let sy = |v: f64| BOTTOM - (v - yr.0) / (yr.1 - yr.0) * (BOTTOM - TOP);
    let mut c = Canvas::new(title);
    c.axes(x_label, y_label, xr, yr);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
            .collect();
        c.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = TOP + 14.0 * i as f64;
        c.body.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\">{l}</text>\n",
            x0 = px(RIGHT + 10.0),
            x1 = px(RIGHT + 30.0),
            y = px(ly),
            tx = px(RIGHT + 36.0),
            ty = px(ly + 4.0),
            l = esc(&s.label)
        ));
    }
    c.finish()
}

/// Histogram of `values` over `bins` equal-width bins. `range` defaults to
/// the data's min..max (padded when degenerate); values outside the range
/// clamp into the edge bins.
pub fn histogram(
    title: &str,
    x_label: &str,
    values: &[f64],
    bins: usize,
    range: Option<(f64, f64)>,
) -> String {
    let bins = bins.max(1);
    let (lo, hi) = range.unwrap_or_else(|| {
        pad_range(
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let (lo, hi) = pad_range(lo, hi);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let f = ((v - lo) / (hi - lo) * bins as f64).floor();
        let idx = (f.max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut c = Canvas::new(title);
    c.axes(x_label, "count", (lo, hi), (0.0, peak as f64));
    let bar_w = (RIGHT - LEFT) / bins as f64;
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let h = n as f64 / peak as f64 * (BOTTOM - TOP);
        c.body.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{col}\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            x = px(LEFT + i as f64 * bar_w),
            y = px(BOTTOM - h),
            w = px(bar_w),
            h = px(h),
            col = PALETTE[0]
        ));
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(label: &str, ys: &[f64]) -> Series {
        Series {
            label: label.into(),
            points: ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
        }
    }

    #[test]
    fn line_plot_is_deterministic_and_well_formed() {
        let s = [curve("a", &[1.0, 0.5, 0.2]), curve("b", &[0.9, 0.8, 0.1])];
        let a = line_plot("t", "x", "y", &s);
        let b = line_plot("t", "x", "y", &s);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains(">a</text>") && a.contains(">b</text>"));
    }

    #[test]
    fn labels_are_escaped() {
        let s = [curve("a<b&c", &[0.0, 1.0])];
        let svg = line_plot("x<y", "f&g", "p>q", &s);
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(svg.contains("x&lt;y"));
        assert!(!svg.contains("a<b"));
    }

    #[test]
    fn flat_series_does_not_divide_by_zero() {
        let s = [curve("flat", &[0.5, 0.5, 0.5])];
        let svg = line_plot("t", "x", "y", &s);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn identical_values_make_a_single_bar() {
        let svg = histogram("h", "p", &[0.7; 100], 20, Some((0.0, 1.0)));
        assert_eq!(svg.matches("<rect x=").count(), 1);
    }

    #[test]
    fn histogram_splits_distinct_values() {
        let vals: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let svg = histogram("h", "p", &vals, 10, Some((0.0, 1.0)));
        assert_eq!(svg.matches("<rect x=").count(), 10);
        // out-of-range values clamp instead of panicking
        let svg = histogram("h", "p", &[-1.0, 2.0], 4, Some((0.0, 1.0)));
        assert_eq!(svg.matches("<rect x=").count(), 2);
    }
}
