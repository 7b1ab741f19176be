//! Minimal static SVG renderings of the CSV reports.

use std::fmt::Write;

use rekp_core::predict::ErrorReport;
use rekp_core::spectrum::{canonical_names, SpectrumRow};

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Positions down, the 15 combinations across, darker for larger K.
pub fn spectrum_heatmap(rows: &[SpectrumRow]) -> String {
    let names = canonical_names();
    let (cell, left, top) = (36.0, 60.0, 40.0);
    let width = left + cell * names.len() as f64 + 10.0;
    let height = top + cell * rows.len() as f64 + 10.0;
    let mut s = header(width, height);
    for (j, name) in names.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle">{name}</text>"#, top - 8.0);
    }
    for (i, row) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        let state = if row.los { "LOS" } else { "NLOS" };
        let _ = writeln!(s, r#"<text x="4" y="{}" font-size="10">{} {state}</text>"#, y + cell * 0.6, row.position_id);
        for j in 0..names.len() {
            let x = left + cell * j as f64;
            let fill = match &row.spectrum {
                Some(sp) => {
                    let shade = (255.0 * (1.0 - sp.values[j])).round() as u8;
                    format!("rgb({shade},{shade},255)")
                }
                None => "#cccccc".to_string(),
            };
            let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Empirical error CDF per method.
pub fn error_cdf(report: &ErrorReport) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let x_max = report.methods.iter().flat_map(|r| r.errors.last().copied()).fold(1.0, f64::max);
    let px = |e: f64| m + (w - 2.0 * m) * e / x_max;
    let py = |c: f64| h - m - (h - 2.0 * m) * c;
    let mut s = header(w, h);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">|error| dB (max {x_max:.2})</text>"#, w / 2.0, h - 8.0);
    for (k, r) in report.methods.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = format!("M{} {}", px(0.0), py(0.0));
        for (e, c) in r.cdf() {
            let _ = write!(d, " H{:.2} V{:.2}", px(e), py(c));
        }
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            w - m - 90.0,
            m + 14.0 * (k as f64 + 1.0),
            r.method
        );
    }
    s.push_str("</svg>\n");
    s
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}
