//! Static SVG rendering of curve summaries. No scripting, no external
//! assets; the output is a self-contained picture of medians with shaded
//! 95% bands.

use std::fmt::Write as _;

use pimix::posterior::CifCurve;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn tick_label(v: f64) -> String {
    let text = format!("{v:.3}");
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

/// Renders labelled curves into one SVG document. The vertical axis is
/// the probability scale [0, 1].
pub fn curve_svg(curves: &[(String, CifCurve)]) -> String {
    assert!(!curves.is_empty(), "no curves to draw");
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_max = curves
        .iter()
        .flat_map(|(_, c)| c.grid.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |t: f64| LEFT + t / x_max * plot_w;
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();

    let x0 = LEFT;
    let x1 = WIDTH - RIGHT;
    let y0 = HEIGHT - BOTTOM;
    let y1 = TOP;
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    for k in 0..=4 {
        let t = x_max * k as f64 / 4.0;
        let px = x(t);
        writeln!(s, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0)
            .unwrap();
        writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 22.0,
            tick_label(t)
        )
        .unwrap();
        let v = k as f64 / 4.0;
        let py = y(v);
        writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0)
            .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 9.0,
            py + 4.0,
            tick_label(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">cumulative incidence</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();

    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut band = String::new();
        for (t, v) in curve.grid.iter().zip(&curve.upper) {
            write!(band, "{:.2},{:.2} ", x(*t), y(*v)).unwrap();
        }
        for (t, v) in curve.grid.iter().zip(&curve.lower).rev() {
            write!(band, "{:.2},{:.2} ", x(*t), y(*v)).unwrap();
        }
        writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            band.trim_end()
        )
        .unwrap();
        let mut line = String::new();
        for (t, v) in curve.grid.iter().zip(&curve.median) {
            write!(line, "{:.2},{:.2} ", x(*t), y(*v)).unwrap();
        }
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.trim_end()
        )
        .unwrap();
        let ly = TOP + 16.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            LEFT + 12.0,
            LEFT + 40.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{label}</text>"#,
            LEFT + 46.0,
            ly + 4.0
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}
