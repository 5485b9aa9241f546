//! Number formatting and small SVG plots for harness outputs.

use std::fmt::Write as _;

/// Decimal rendering with six significant digits.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).clamp(0, 40) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.999999 -> 10.00000).
    let parsed: f64 = s.parse().unwrap_or(x);
    if decimals > 0 && parsed.abs() >= 10f64.powi(exp + 1) {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    if s.starts_with("-") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        return s[1..].to_string();
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 48.0;

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// ROC curves, one polyline per `(label, [(fpr, tpr)])`.
pub fn roc_svg(curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    header(&mut out, "ROC");
    let side = W - 2.0 * PAD;
    let px = |f: f64| PAD + f * side;
    let py = |t: f64| H - PAD - t * side;
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">FPR</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">TPR</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        for (f, t) in pts {
            let _ = write!(path, "{:.2},{:.2} ", px(*f), py(*t));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.trim_end()
        );
        let ly = PAD + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            px(0.45),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Pointy-top hexagons of circumradius `size`, shaded by count.
pub fn hex_svg(resolution: usize, size: f64, cells: &[((f64, f64), usize)], title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let side = W - 2.0 * PAD;
    let scale = side / resolution as f64;
    let _ = writeln!(
        out,
        r#"<circle cx="{}" cy="{}" r="{}" fill="none" stroke="black"/>"#,
        PAD + side / 2.0,
        PAD + side / 2.0,
        side / 2.0
    );
    let max = cells.iter().map(|c| c.1).max().unwrap_or(1).max(1) as f64;
    for &((cx, cy), count) in cells {
        let mut pts = String::new();
        for k in 0..6 {
            let a = std::f64::consts::PI / 180.0 * (60.0 * k as f64 - 30.0);
            let x = PAD + (cx + size * a.cos()) * scale;
            let y = PAD + (cy + size * a.sin()) * scale;
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        let heat = count as f64 / max;
        let r = (255.0 * heat) as u8;
        let b = (255.0 * (1.0 - heat)) as u8;
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="rgb({r},64,{b})" fill-opacity="0.85" stroke="white" stroke-width="0.5"><title>{count}</title></polygon>"#,
            pts.trim_end()
        );
    }
    out.push_str("</svg>\n");
    out
}
