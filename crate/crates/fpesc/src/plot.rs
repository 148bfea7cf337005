//! Minimal SVG line charts: training objective, score error and density
//! error side by side.

use std::fmt::Write;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub points: Vec<(f64, f64)>,
    pub log_y: bool,
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.floor() as i32, hi.ceil() as i32);
        let step = ((b - a) / 5).max(1);
        (a..=b).step_by(step as usize).map(f64::from).collect()
    } else {
        (0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
    }
}

fn panel(out: &mut String, s: &Series, x0: f64) {
    let _ = write!(
        out,
        r#"<g transform="translate({x0},0)"><text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        PANEL_W / 2.0,
        s.title
    );
    let pts: Vec<(f64, f64)> = s
        .points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!s.log_y || *y > 0.0))
        .map(|&(x, y)| (x, if s.log_y { y.log10() } else { y }))
        .collect();
    let (left, right, top, bottom) = (MARGIN, PANEL_W - 10.0, 30.0, PANEL_H - 30.0);
    let _ = write!(
        out,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        (left + right) / 2.0,
        PANEL_H - 6.0,
        s.x_label
    );
    if pts.is_empty() {
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">no data</text></g>"#,
            (left + right) / 2.0,
            (top + bottom) / 2.0
        );
        return;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| pts.iter().map(pick).fold(init, f);
    let (mut xlo, mut xhi) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (mut ylo, mut yhi) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    if xhi <= xlo {
        xlo -= 0.5;
        xhi += 0.5;
    }
    if yhi <= ylo {
        ylo -= 0.5;
        yhi += 0.5;
    }
    if s.log_y {
        ylo = ylo.floor();
        yhi = yhi.ceil();
    }
    let sx = |x: f64| left + (x - xlo) / (xhi - xlo) * (right - left);
    let sy = |y: f64| bottom - (y - ylo) / (yhi - ylo) * (bottom - top);
    for t in ticks(ylo, yhi, s.log_y) {
        let label = if s.log_y { format!("1e{t}") } else { format!("{t:.3}") };
        let _ = write!(
            out,
            r##"<line x1="{left}" x2="{right}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end" font-size="10">{label}</text>"##,
            left - 4.0,
            sy(t) + 3.0,
            y = sy(t)
        );
    }
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = write!(
        out,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/></g>"##,
        path.join(" ")
    );
}

/// Panels laid out left to right.
pub fn render(panels: &[Series]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    for (i, s) in panels.iter().enumerate() {
        panel(&mut out, s, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}
