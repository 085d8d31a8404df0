//! Minimal SVG line chart of per-epoch SSC-mIoU curves.

use std::fmt::Write;

use ssc_core::training::{CurvePoint, Split};

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

pub fn curves_svg(points: &[CurvePoint]) -> String {
    let max_epoch = points.iter().map(|p| p.epoch).max().unwrap_or(1).max(2) as f64;
    let x = |e: usize| PAD + (e as f64 - 1.0) / (max_epoch - 1.0) * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="8" y="{}" transform="rotate(-90 8 {})">SSC-mIoU</text>"#, H / 2.0, H / 2.0);
    for (split, color) in [(Split::Train, "#1f77b4"), (Split::Val, "#d62728"), (Split::Test, "#2ca02c")] {
        let pts: Vec<String> = points
            .iter()
            .filter(|p| p.split == split)
            .map(|p| format!("{:.1},{:.1}", x(p.epoch), y(p.ssc_miou)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" "));
        let label = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        let ly = PAD + 14.0 * split as u8 as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{label}</text>"#, W - PAD - 30.0);
    }
    s.push_str("</svg>\n");
    s
}
