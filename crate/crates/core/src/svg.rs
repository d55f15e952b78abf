//! Minimal SVG line plots.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Renders the series on shared axes. Non-finite points break the line.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for (v, pos) in [(x0, l), (x1, r)] {
        let _ = writeln!(out, r#"<text x="{pos}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, tick(v));
    }
    for (v, pos) in [(y0, b), (y1, t)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, pos + 4.0, tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    if y0 < 0.0 && y1 > 0.0 {
        let z = py(0.0);
        let _ = writeln!(out, r##"<path d="M{l} {z:.2} L{r} {z:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##);
    }

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (&x, &y) in s.x.iter().zip(s.y) {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, px(x), py(y));
            pen_down = true;
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.trim_end());
        let ly = t + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            r - 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_paths() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, f64::NAN, 3.0];
        let svg = line_plot("a<b", "x", "y", &[Series { name: "s", x: &x, y: &y }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        // the NaN breaks the line into two moves
        let path = svg.lines().find(|l| l.contains(COLORS[0]) && l.starts_with("<path")).unwrap();
        assert_eq!(path.matches('M').count(), 2);
        assert!(!path.contains('L'));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
