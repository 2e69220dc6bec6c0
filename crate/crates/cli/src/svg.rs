//! Deterministic SVG emitters: fixed viewbox, fixed palette, elements in
//! sorted order, numbers printed with fixed precision.

use std::fmt::Write;

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 600.0;
const PALETTE: [&str; 8] = [
    "#1b6ca8", "#c0392b", "#2e8b57", "#8e44ad", "#d4880c", "#16a2b8", "#5d4037", "#455a64",
];

fn header(out: &mut String) {
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
}

/// Overlay of a ladder of piecewise-linear graphs (and optional hulls),
/// rescaled into the fixed viewbox.
pub fn shape_overlay(curves: &[(String, Vec<(f64, f64)>, bool)]) -> String {
    let mut xmax = f64::MIN;
    let mut ymin = f64::MAX;
    let mut ymax = f64::MIN;
    for (_, pts, _) in curves {
        for &(x, y) in pts {
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    let pad = 0.05 * (ymax - ymin).max(1e-12);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let sx = (WIDTH - 40.0) / xmax.max(1e-300);
    let sy = (HEIGHT - 40.0) / (ymax - ymin);
    let mut out = String::new();
    header(&mut out);
    for (i, (label, pts, dashed)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let mut d = String::new();
        for &(x, y) in pts {
            let px = 20.0 + x * sx;
            let py = HEIGHT - 20.0 - (y - ymin) * sy;
            write!(d, "{px:.3},{py:.3} ").unwrap();
        }
        writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"{dash} points=\"{}\"><title>{label}</title></polyline>",
            d.trim_end()
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// The blown-up interval with the verified images of the wandering interval
/// shaded; the time-zero fiber is highlighted.
pub fn wander_strip(total: f64, fibers: &[(isize, f64, f64)], horizon: usize) -> String {
    let sx = (WIDTH - 40.0) / total;
    let mut out = String::new();
    header(&mut out);
    writeln!(
        out,
        "<rect x=\"20\" y=\"280\" width=\"{:.3}\" height=\"40\" fill=\"#eeeeee\" stroke=\"#333333\"/>",
        total * sx
    )
    .unwrap();
    let mut sorted: Vec<_> = fibers.to_vec();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    for (n, start, len) in sorted {
        if n.unsigned_abs() > horizon {
            continue;
        }
        let color = if n == 0 { "#c0392b" } else { "#1b6ca8" };
        let w = (len * sx).max(0.4);
        writeln!(
            out,
            "<rect x=\"{:.3}\" y=\"280\" width=\"{w:.3}\" height=\"40\" fill=\"{color}\"><title>n={n}</title></rect>",
            20.0 + start * sx
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
