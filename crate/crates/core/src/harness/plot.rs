use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::runlog::{read_table, rolling_stats};
use super::HarnessError;

pub const ROLLING_HEADER: &str = "# polgrad-rolling v1";

/// Reward samples `(total_steps, mean_reward)` from every row that has one.
pub fn reward_samples(path: &Path) -> Result<Vec<(f64, f64)>, HarnessError> {
    let table = read_table(path)?;
    let rewards = table
        .column("mean_reward")
        .ok_or_else(|| HarnessError::Config(format!("{}: no mean_reward column", path.display())))?;
    Ok(table.rows.iter().zip(rewards).filter_map(|(r, m)| Some((r.total_steps? as f64, m?))).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub steps: Vec<f64>,
    pub rewards: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn curve_from_samples(label: &str, samples: &[(f64, f64)], window: usize) -> Curve {
    let rewards: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let stats = rolling_stats(&rewards, window);
    Curve {
        label: label.to_string(),
        steps: samples.iter().map(|s| s.0).collect(),
        rewards,
        mean: stats.iter().map(|s| s.0).collect(),
        std: stats.iter().map(|s| s.1).collect(),
    }
}

pub fn rolling_csv(curve: &Curve) -> String {
    let mut s = format!("{ROLLING_HEADER}\ntotal_steps,reward,rolling_mean,rolling_std\n");
    for i in 0..curve.steps.len() {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", curve.steps[i], curve.rewards[i], curve.mean[i], curve.std[i]);
    }
    s
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(t);
        t += step;
    }
    out
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Mean lines with ±std bands, one per curve, on shared axes.
pub fn render_svg(title: &str, curves: &[Curve]) -> String {
    let (w, h) = (800.0, 480.0);
    let (ml, mr, mt, mb) = (80.0, 20.0, 40.0, 60.0);
    let xs = curves.iter().flat_map(|c| c.steps.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ys = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std).flat_map(|(m, s)| [m - s, m + s]));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if y1 - y0 < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for t in nice_ticks(x0, x1, 6) {
        let x = px(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, mt, h - mb);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#, h - mb + 16.0);
    }
    for t in nice_ticks(y0, y1, 6) {
        let y = py(t);
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, w - mr);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, ml - 6.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - ml - mr, h - mt - mb);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">environment steps</text>"#, w / 2.0, h - 16.0);
    let _ = writeln!(s, r#"<text x="18" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">reward</text>"#, h / 2.0, h / 2.0);
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper: Vec<String> = (0..c.steps.len()).map(|i| format!("{:.2},{:.2}", px(c.steps[i]), py(c.mean[i] + c.std[i]))).collect();
        let lower: Vec<String> = (0..c.steps.len()).rev().map(|i| format!("{:.2},{:.2}", px(c.steps[i]), py(c.mean[i] - c.std[i]))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = (0..c.steps.len()).map(|i| format!("{:.2},{:.2}", px(c.steps[i]), py(c.mean[i]))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - mr - 150.0, w - mr - 130.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, w - mr - 124.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    if t.abs() >= 1e4 || (t != 0.0 && t.abs() < 1e-2) {
        format!("{t:.1e}")
    } else {
        format!("{}", (t * 1e6).round() / 1e6)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// For each run log writes `<stem>.svg` and `<stem>.rolling.csv` beside it.
/// A log without reward samples is an error and produces no files.
pub fn export_curves(paths: &[PathBuf], window: usize) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for path in paths {
        let samples = reward_samples(path)?;
        if samples.is_empty() {
            return Err(HarnessError::Config(format!("{}: no reward samples to plot", path.display())));
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        let label = path.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or(stem.clone());
        let curve = curve_from_samples(&label, &samples, window);
        let svg = path.with_file_name(format!("{stem}.svg"));
        let csv = path.with_file_name(format!("{stem}.rolling.csv"));
        fs::write(&svg, render_svg(&label, std::slice::from_ref(&curve)))?;
        fs::write(&csv, rolling_csv(&curve))?;
        written.push(svg);
        written.push(csv);
    }
    Ok(written)
}
