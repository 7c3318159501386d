//! Violin and strip plot data (CSV) and rendering (SVG).

use std::fmt::Write as _;

use kanmix_core::stats::{gaussian_kde, median, silverman_bandwidth};

use crate::error::{Error, Result};
use crate::results::FoldFile;

#[derive(Clone, Debug, PartialEq)]
pub struct ViolinPoint {
    pub model: String,
    pub fold: usize,
    pub epoch: usize,
    pub val_accuracy: f64,
}

/// Every recorded per-epoch validation accuracy, in the order given.
pub fn violin_points(runs: &[(String, Vec<FoldFile>)]) -> Result<Vec<ViolinPoint>> {
    let mut points = Vec::new();
    for (model, folds) in runs {
        for f in folds {
            for e in &f.result.epochs {
                if let Some(acc) = e.val_acc {
                    points.push(ViolinPoint { model: model.clone(), fold: f.fold, epoch: e.epoch, val_accuracy: acc });
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Usage("no per-epoch validation accuracies to plot".into()));
    }
    Ok(points)
}

pub fn violin_csv(points: &[ViolinPoint]) -> String {
    let mut out = String::from("model,fold,epoch,val_accuracy\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.model, p.fold, p.epoch, p.val_accuracy);
    }
    out
}

fn models_in_order(points: &[ViolinPoint]) -> Vec<String> {
    let mut models: Vec<String> = Vec::new();
    for p in points {
        if !models.contains(&p.model) {
            models.push(p.model.clone());
        }
    }
    models
}

const BAND: f64 = 160.0;
const HALF_WIDTH: f64 = 60.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const HEIGHT: f64 = 360.0;

/// One violin (Gaussian KDE) per model with strip points and a median line.
pub fn violin_svg(points: &[ViolinPoint], title: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    let models = models_in_order(points);
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
        (l.min(p.val_accuracy), h.max(p.val_accuracy))
    });
    let pad = if hi > lo { (hi - lo) * 0.08 } else { 0.01 };
    let (y_min, y_max) = (lo - pad, hi + pad);
    let y = |v: f64| TOP + HEIGHT * (1.0 - (v - y_min) / (y_max - y_min));
    let width = LEFT + BAND * models.len() as f64 + 20.0;
    let total_h = TOP + HEIGHT + 50.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{total_h:.0}" viewBox="0 0 {width:.0} {total_h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        TOP + HEIGHT
    );
    for i in 0..=5 {
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, LEFT - 8.0, yy + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">validation accuracy</text>"#,
        TOP + HEIGHT / 2.0,
        TOP + HEIGHT / 2.0
    );

    for (m, model) in models.iter().enumerate() {
        let values: Vec<f64> = points.iter().filter(|p| &p.model == model).map(|p| p.val_accuracy).collect();
        let cx = LEFT + BAND * (m as f64 + 0.5);
        let _ = writeln!(s, r#"<g class="violin" data-model="{}">"#, escape(model));
        let (vmin, vmax) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let h = silverman_bandwidth(&values);
        let grid: Vec<f64> = if h > 0.0 {
            let (a, b) = ((vmin - 2.0 * h).max(y_min), (vmax + 2.0 * h).min(y_max));
            (0..=100).map(|i| a + (b - a) * i as f64 / 100.0).collect()
        } else {
            Vec::new()
        };
        match gaussian_kde(&values, &grid) {
            Some(density) => {
                let peak = density.iter().cloned().fold(0.0, f64::max);
                let mut path = String::new();
                for (i, (&g, &d)) in grid.iter().zip(&density).enumerate() {
                    let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, cx + HALF_WIDTH * d / peak, y(g));
                }
                for (&g, &d) in grid.iter().zip(&density).rev() {
                    let _ = write!(path, "L{:.2},{:.2} ", cx - HALF_WIDTH * d / peak, y(g));
                }
                path.push('Z');
                let _ = writeln!(s, r##"<path d="{path}" fill="#9ecae1" stroke="#3182bd"/>"##);
            }
            None => {
                let yy = y(vmin);
                let _ = writeln!(
                    s,
                    r##"<line class="degenerate" x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#3182bd" stroke-width="2"/>"##,
                    cx - HALF_WIDTH,
                    cx + HALF_WIDTH
                );
            }
        }
        for (i, &v) in values.iter().enumerate() {
            let jitter = ((i * 7919) % 101) as f64 / 100.0 - 0.5;
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#08519c" fill-opacity="0.6"/>"##,
                cx + jitter * 24.0,
                y(v)
            );
        }
        let med = median(&values)?;
        let _ = writeln!(
            s,
            r##"<line class="median" data-median="{med}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
            cx - HALF_WIDTH * 0.6,
            y(med),
            cx + HALF_WIDTH * 0.6,
            y(med)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + HEIGHT + 20.0,
            escape(model)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
