//! Dependency-free SVG figures: Hausdorff-vs-Dice scatter and NMI heatmap.

use std::fmt::Write;

use crate::metrics::{CaseMetrics, NmiMatrix};

const W: f64 = 560.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

/// One point per case with a defined Hausdorff distance, one colour per
/// method. Dice runs along x in `[0, 1]`, Hausdorff (mm) along y.
pub fn hd_dice_scatter(methods: &[(String, Vec<CaseMetrics>)]) -> String {
    let hd_max = nice_max(
        methods
            .iter()
            .flat_map(|(_, r)| r.iter().filter_map(|m| m.hausdorff_mm))
            .fold(0.0, f64::max),
    );
    let pw = W - 2.0 * MARGIN;
    let ph = H - 2.0 * MARGIN;
    let px = |d: f64| MARGIN + d.clamp(0.0, 1.0) * pw;
    let py = |h: f64| H - MARGIN - (h / hd_max).clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (x, y) = (px(f), py(f * hd_max));
        writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            MARGIN,
            H - MARGIN
        )
        .unwrap();
        writeln!(
            s,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            MARGIN,
            W - MARGIN
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{f:.1}</text>"#,
            H - MARGIN + 16.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            MARGIN - 6.0,
            y + 4.0,
            f * hd_max
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Dice</text>"#,
        W / 2.0,
        H - 18.0
    )
    .unwrap();
    writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">Hausdorff distance (mm)</text>"#, H / 2.0, H / 2.0).unwrap();
    for (k, (name, rows)) in methods.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        for r in rows {
            if let Some(h) = r.hausdorff_mm {
                writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{c}" fill-opacity="0.75"><title>{}</title></circle>"#, px(r.dice), py(h), escape(&r.case_id)).unwrap();
            }
        }
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{c}"/>"#,
            W - MARGIN - 110.0,
            ly - 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#,
            W - MARGIN - 100.0,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn heat_colour(v: f64) -> String {
    // white to dark blue
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 8.0),
        lerp(255.0, 48.0),
        lerp(255.0, 107.0)
    )
}

/// Features as rows, standard maps as columns, each cell annotated.
pub fn nmi_heatmap(m: &NmiMatrix) -> String {
    let cell = 48.0;
    let left = 110.0;
    let top = 40.0;
    let w = left + cell * m.columns.len() as f64 + 20.0;
    let h = top + cell * m.rows.len() as f64 + 20.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    for (j, c) in m.columns.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + cell * (j as f64 + 0.5),
            top - 10.0,
            escape(c)
        )
        .unwrap();
    }
    for (i, r) in m.rows.iter().enumerate() {
        let y = top + cell * i as f64;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + cell / 2.0 + 4.0,
            escape(r)
        )
        .unwrap();
        for j in 0..m.columns.len() {
            let v = m.get(i, j);
            let x = left + cell * j as f64;
            let ink = if v > 0.5 { "white" } else { "black" };
            writeln!(s, r##"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}" stroke="#888"/>"##, heat_colour(v)).unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
