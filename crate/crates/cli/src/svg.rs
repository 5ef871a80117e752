//! Minimal SVG writer: demonstration polylines, reproduction polylines, and
//! energy level sets sampled on a grid with marching squares.

use nalgebra::DVector;
use stableds::clf::ClfParams;
use stableds::{Error, Result};

const GRID: usize = 72;
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 24.0;

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for (x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        let pad_x = 0.1 * (max_x - min_x).max(1e-9);
        let pad_y = 0.1 * (max_y - min_y).max(1e-9);
        min_x -= pad_x;
        max_x += pad_x;
        min_y -= pad_y;
        max_y += pad_y;
        let scale = ((WIDTH - 2.0 * MARGIN) / (max_x - min_x))
            .min((HEIGHT - 2.0 * MARGIN) / (max_y - min_y));
        Frame { min_x, min_y, scale }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x - self.min_x) * self.scale,
            // Flip the vertical axis so larger y is up.
            HEIGHT - MARGIN - (y - self.min_y) * self.scale,
        )
    }

    fn span_x(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / self.scale
    }

    fn span_y(&self) -> f64 {
        (HEIGHT - 2.0 * MARGIN) / self.scale
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[DVector<f64>], style: &str) {
    out.push_str("  <polyline fill=\"none\" ");
    out.push_str(style);
    out.push_str(" points=\"");
    for p in pts {
        let (x, y) = frame.map(p[0], p[1]);
        out.push_str(&format!("{x:.2},{y:.2} "));
    }
    out.push_str("\"/>\n");
}

/// Marching squares segments for one level of a scalar grid.
fn contour_segments(
    values: &[Vec<f64>],
    xs: &[f64],
    ys: &[f64],
    level: f64,
) -> Vec<((f64, f64), (f64, f64))> {
    let mut segments = Vec::new();
    let interp = |a: f64, b: f64, va: f64, vb: f64| -> f64 {
        if (vb - va).abs() < 1e-300 {
            0.5 * (a + b)
        } else {
            a + (level - va) / (vb - va) * (b - a)
        }
    };
    for i in 0..values.len() - 1 {
        for j in 0..values[0].len() - 1 {
            let v = [
                values[i][j],
                values[i + 1][j],
                values[i + 1][j + 1],
                values[i][j + 1],
            ];
            let corners = [
                (xs[i], ys[j]),
                (xs[i + 1], ys[j]),
                (xs[i + 1], ys[j + 1]),
                (xs[i], ys[j + 1]),
            ];
            let mut case = 0usize;
            for (bit, val) in v.iter().enumerate() {
                if *val > level {
                    case |= 1 << bit;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            // Edge midpoints by linear interpolation; edge k joins corner k
            // and corner (k + 1) % 4.
            let edge = |k: usize| -> (f64, f64) {
                let (a, b) = (k, (k + 1) % 4);
                (
                    interp(corners[a].0, corners[b].0, v[a], v[b]),
                    interp(corners[a].1, corners[b].1, v[a], v[b]),
                )
            };
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 => &[(3, 0), (1, 2)],
                10 => &[(0, 1), (2, 3)],
                _ => &[],
            };
            for (a, b) in pairs {
                segments.push((edge(*a), edge(*b)));
            }
        }
    }
    segments
}

/// Writes an overlay of demonstrations, reproductions, and energy contours.
///
/// Only two-dimensional data can be drawn.
pub fn write_overlay(
    path: &std::path::Path,
    demos: &[Vec<DVector<f64>>],
    repros: &[Vec<DVector<f64>>],
    clf: &ClfParams,
) -> Result<()> {
    if clf.dims() != 2 {
        return Err(Error::Argument(format!(
            "svg overlay requires d = 2, model has d = {}",
            clf.dims()
        )));
    }
    let frame = Frame::fit(
        demos
            .iter()
            .chain(repros.iter())
            .flatten()
            .map(|p| (p[0], p[1])),
    );

    let xs: Vec<f64> = (0..GRID)
        .map(|i| frame.min_x + frame.span_x() * i as f64 / (GRID - 1) as f64)
        .collect();
    let ys: Vec<f64> = (0..GRID)
        .map(|j| frame.min_y + frame.span_y() * j as f64 / (GRID - 1) as f64)
        .collect();
    let values: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            ys.iter()
                .map(|&y| clf.lyapunov(&DVector::from_row_slice(&[x, y])))
                .collect()
        })
        .collect();

    // Levels at the energy of evenly spaced demonstration points.
    let mut demo_values: Vec<f64> = demos
        .iter()
        .flatten()
        .map(|p| clf.lyapunov(p))
        .filter(|v| *v > 0.0)
        .collect();
    demo_values.sort_by(f64::total_cmp);
    let levels: Vec<f64> = [0.1, 0.25, 0.45, 0.65, 0.85]
        .iter()
        .filter_map(|q| {
            if demo_values.is_empty() {
                None
            } else {
                Some(demo_values[((demo_values.len() - 1) as f64 * q) as usize])
            }
        })
        .collect();

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for level in levels {
        for ((x1, y1), (x2, y2)) in contour_segments(&values, &xs, &ys, level) {
            let (a, b) = frame.map(x1, y1);
            let (c, d) = frame.map(x2, y2);
            out.push_str(&format!(
                "  <line x1=\"{a:.2}\" y1=\"{b:.2}\" x2=\"{c:.2}\" y2=\"{d:.2}\" stroke=\"#9ecae1\" stroke-width=\"1\"/>\n"
            ));
        }
    }
    for demo in demos {
        polyline(
            &mut out,
            &frame,
            demo,
            "stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"",
        );
    }
    for repro in repros {
        polyline(&mut out, &frame, repro, "stroke=\"#d62728\" stroke-width=\"1.5\"");
    }
    // Target marker.
    let (tx, ty) = frame.map(0.0, 0.0);
    out.push_str(&format!(
        "  <circle cx=\"{tx:.2}\" cy=\"{ty:.2}\" r=\"4\" fill=\"#1f77b4\"/>\n"
    ));
    out.push_str("</svg>\n");
    std::fs::write(path, out)?;
    Ok(())
}
