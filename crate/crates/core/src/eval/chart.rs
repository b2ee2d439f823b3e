//! SVG line charts of mean AUC against μ, one chart per head family.
//! Solid lines are modifier arms; dashed lines of the same colour are the
//! baseline for that head.

use std::fmt::Write as _;

use super::sweep::{Arm, HeadFamily, SweepReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// `(head, (μ, mean AUC) points, baseline mean)`.
type Series = (usize, Vec<(f64, f64)>, Option<f64>);

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn render_family_svg(report: &SweepReport, family: HeadFamily) -> String {
    let summary = report.summary();
    let heads: Vec<usize> = (0..report.head_names.len()).filter(|&h| family.includes(h)).collect();
    let mut series: Vec<Series> = Vec::new();
    for &h in &heads {
        let mut pts: Vec<(f64, f64)> = summary
            .iter()
            .filter(|s| s.head_id == h)
            .filter_map(|s| s.arm.mu().map(|mu| (mu, s.mean)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let base = summary
            .iter()
            .find(|s| s.head_id == h && s.arm == Arm::Baseline)
            .map(|s| s.mean);
        series.push((h, pts, base));
    }

    let xs: Vec<f64> = series.iter().flat_map(|(_, p, _)| p.iter().map(|q| q.0)).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, p, b)| p.iter().map(|q| q.1).chain(*b))
        .collect();
    let (mut x0, mut x1) = bounds(&xs, (0.0, 1.0));
    if x1 - x0 < 1e-9 {
        x0 -= 0.1;
        x1 += 0.1;
    }
    let (y0, y1) = bounds(&ys, (0.5, 1.0));
    let (y0, y1) = (((y0 - 0.02) * 50.0).floor() / 50.0, ((y1 + 0.02) * 50.0).ceil() / 50.0);
    let (y0, y1) = (y0.max(0.0), y1.min(1.0));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0).max(1e-9)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">AUC of {} heads against weight modifier mean</text>"#,
        LEFT + pw / 2.0,
        family.name()
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let y = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4:.2}</text>"##,
            py(y),
            LEFT + pw,
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let mut ticks = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            px(x),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">μ</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">mean AUC</text>"#,
        TOP + ph / 2.0
    );
    for (i, (h, pts, base)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        if let Some(b) = base {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{colour}" stroke-dasharray="6 4"/>"#,
                py(*b),
                LEFT + pw
            );
        }
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                path.join(" ")
            );
            for &(x, y) in pts {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                    px(x),
                    py(y)
                );
            }
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{colour}" stroke-width="2"/><text x="{2:.1}" y="{3:.1}">{4}</text>"#,
            ly,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&report.head_names[*h])
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" fill="#555">dashed: baseline</text>"##,
        LEFT + pw + 12.0,
        TOP + 12.0 + 18.0 * series.len() as f64 + 6.0
    );
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64], fallback: (f64, f64)) -> (f64, f64) {
    if v.is_empty() {
        return fallback;
    }
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
