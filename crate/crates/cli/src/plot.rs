//! Displacement curves as SVG and CSV.

use std::fmt::Write as _;
use std::path::Path;

use fourbar::kinematics::{input_range, normalize_angle, solve_output, InputRange, KinematicsError};
use fourbar::moe::SynthesisResult;
use fourbar::points::PrecisionPointSequence;

const SAMPLES_PER_LEG: usize = 360;

/// One continuous input/output curve in degrees plus the prescribed points.
pub struct Curve {
    pub xy: Vec<(f64, f64)>,
    pub markers: Vec<(f64, f64)>,
}

/// Adds multiples of 360 so that consecutive values never jump by more than 180.
pub fn unwrap_deg(values: &mut [f64]) {
    for i in 1..values.len() {
        let prev = values[i - 1];
        values[i] = prev + normalize_angle((values[i] - prev).to_radians()).to_degrees();
    }
}

/// Shifts `value` by multiples of 360 to lie closest to `target`.
fn nearest_turn(value: f64, target: f64) -> f64 {
    target + normalize_angle((value - target).to_radians()).to_degrees()
}

pub fn displacement_curve(result: &SynthesisResult, points: &PrecisionPointSequence) -> Result<Curve, KinematicsError> {
    let r = &result.r_pred;
    let inversion = result.cfg.inversion;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    match input_range(r, result.cfg)? {
        InputRange::CrankFull => {
            let start = points.points.first().map_or(-std::f64::consts::PI, |p| p.theta_in);
            for k in 0..=SAMPLES_PER_LEG {
                let theta = start + std::f64::consts::TAU * k as f64 / SAMPLES_PER_LEG as f64;
                inputs.push(theta);
                outputs.push(solve_output(r, theta, inversion)?);
            }
        }
        InputRange::RockerRange { theta_min, theta_max } => {
            let at = |k: usize| theta_min + (theta_max - theta_min) * k as f64 / SAMPLES_PER_LEG as f64;
            for k in 0..=SAMPLES_PER_LEG {
                inputs.push(at(k));
                outputs.push(solve_output(r, at(k), inversion)?);
            }
            for k in (0..=SAMPLES_PER_LEG).rev() {
                inputs.push(at(k));
                outputs.push(solve_output(r, at(k), inversion.opposite())?);
            }
        }
    }
    let mut x: Vec<f64> = inputs.iter().map(|t| t.to_degrees()).collect();
    let mut y: Vec<f64> = outputs.iter().map(|t| t.to_degrees()).collect();
    unwrap_deg(&mut x);
    unwrap_deg(&mut y);
    let xy: Vec<(f64, f64)> = x.into_iter().zip(y).collect();

    let markers = points
        .points
        .iter()
        .zip(&result.eval.per_point_pred)
        .map(|(p, pred)| {
            let px = p.theta_in.to_degrees();
            let (cx, cy) = xy
                .iter()
                .copied()
                .min_by(|a, b| {
                    let da = normalize_angle((a.0 - px).to_radians()).abs();
                    let db = normalize_angle((b.0 - px).to_radians()).abs();
                    da.total_cmp(&db)
                })
                .unwrap_or((px, pred.to_degrees()));
            let mx = nearest_turn(px, cx);
            let my = nearest_turn(p.theta_out.to_degrees(), if pred.is_finite() { nearest_turn(pred.to_degrees(), cy) } else { cy });
            (mx, my)
        })
        .collect();
    Ok(Curve { xy, markers })
}

pub fn write_csv(curve: &Curve, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("theta_in_deg,theta_out_deg\n");
    for (x, y) in &curve.xy {
        let _ = writeln!(out, "{x:.6},{y:.6}");
    }
    std::fs::write(path, out)
}

pub fn write_svg(curve: &Curve, title: &str, path: &Path) -> std::io::Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 56.0;
    let all = curve.xy.iter().chain(&curve.markers);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{fx:.1}</text>"#,
            sx(fx),
            H - PAD + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{fy:.1}</text>"#,
            PAD - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">input angle (deg)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">output angle (deg)</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let pts: Vec<String> = curve.xy.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
    for &(x, y) in &curve.markers {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="crimson" stroke-width="1.5"/>"#, sx(x), sy(y));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
