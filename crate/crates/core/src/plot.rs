//! Minimal SVG line charts with optional min/max bands.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One curve. `band` holds per-point `(low, high)` bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub band: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Mean curve over runs with a min..max band, using the x positions
/// present in every run. A single run yields no band.
pub fn aggregate(label: &str, runs: &[Vec<(f64, f64)>]) -> Series {
    let mut x: Vec<f64> = runs.first().map(|r| r.iter().map(|p| p.0).collect()).unwrap_or_default();
    x.retain(|xv| runs.iter().all(|r| r.iter().any(|p| p.0 == *xv)));
    let mut y = Vec::with_capacity(x.len());
    let mut band = Vec::with_capacity(x.len());
    for xv in &x {
        let vals: Vec<f64> = runs
            .iter()
            .map(|r| r.iter().find(|p| p.0 == *xv).expect("present").1)
            .collect();
        y.push(vals.iter().sum::<f64>() / vals.len() as f64);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        band.push((lo, hi));
    }
    Series {
        label: label.to_string(),
        x,
        y,
        band: (runs.len() > 1).then_some(band),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.0 {
        2.0
    } else if r < 7.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e5 || v.abs() < 1e-3 {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn render_svg(chart: &Chart) -> String {
    let (x0, x1) = range(chart.series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = range(chart.series.iter().flat_map(|s| {
        let band = s.band.iter().flatten().flat_map(|(a, b)| [*a, *b]);
        s.y.iter().copied().chain(band).collect::<Vec<_>>()
    }));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(o, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );

    for (lo, hi, vertical) in [(x0, x1, true), (y0, y1, false)] {
        let step = nice_step(hi - lo);
        let mut t = (lo / step).ceil() * step;
        while t <= hi + step * 1e-9 {
            if vertical {
                let x = sx(t);
                let _ = writeln!(
                    o,
                    r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                    TOP + ph,
                    TOP + ph + 18.0,
                    fmt_tick(t)
                );
            } else {
                let y = sy(t);
                let _ = writeln!(
                    o,
                    r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                    LEFT + pw,
                    LEFT - 6.0,
                    y + 4.0,
                    fmt_tick(t)
                );
            }
            t += step;
        }
    }
    let _ = writeln!(
        o,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        o,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );

    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut pts: Vec<String> = s.x.iter().zip(band).map(|(x, b)| format!("{:.2},{:.2}", sx(*x), sy(b.1))).collect();
            pts.extend(s.x.iter().zip(band).rev().map(|(x, b)| format!("{:.2},{:.2}", sx(*x), sy(b.0))));
            let _ = writeln!(
                o,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        if pts.len() == 1 {
            let _ = writeln!(o, r#"<circle cx="{}" r="3" fill="{color}"/>"#, pts[0].replace(',', "\" cy=\""));
        } else {
            let _ = writeln!(
                o,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            o,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    o.push_str("</svg>\n");
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_band_spans_min_max() {
        let runs = vec![vec![(0.0, 1.0), (1.0, 5.0)], vec![(0.0, 3.0), (1.0, 2.0)]];
        let s = aggregate("x", &runs);
        assert_eq!(s.y, vec![2.0, 3.5]);
        assert_eq!(s.band.unwrap(), vec![(1.0, 3.0), (2.0, 5.0)]);
        assert!(aggregate("one", &runs[..1]).band.is_none());
    }

    #[test]
    fn svg_is_well_formed() {
        let chart = Chart {
            title: "a < b & c".into(),
            x_label: "env_step".into(),
            y_label: "eval return".into(),
            series: vec![aggregate("s", &[vec![(0.0, -1000.0), (2000.0, -500.0)], vec![(0.0, -900.0), (2000.0, -300.0)]])],
        };
        let svg = render_svg(&chart);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(svg.contains("<polygon"));
    }

    #[test]
    fn single_point_renders() {
        let chart = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![aggregate("s", &[vec![(0.5, 1.0)]])],
        };
        roxmltree::Document::parse(&render_svg(&chart)).unwrap();
    }
}
