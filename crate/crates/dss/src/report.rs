//! Plot-ready outputs for eigenvalue trajectories: a standalone SVG with
//! Re/Im-vs-index polylines (one per layer and snapshot) and the per-layer
//! slope summary CSV.
//!
//! The SVG is emitted directly with no external references so it can be
//! diffed and viewed without tooling.

use std::fmt::Write as _;

use crate::error::Result;
use crate::trajectory::{EigenTrajectory, TrajectorySummary};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// CSV rows `layer,slope_im,mean_re` for the latest snapshot of each layer.
pub fn write_slope_csv<W: std::io::Write>(
    out: &mut W,
    summaries: &[TrajectorySummary],
) -> Result<()> {
    writeln!(out, "layer,slope_im,mean_re")?;
    for s in summaries {
        writeln!(out, "{},{:.16e},{:.16e}", s.layer, s.slope_im, s.mean_re)?;
    }
    Ok(())
}

struct Panel {
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
}

impl Panel {
    fn map(&self, x: f64, xmin: f64, xmax: f64, y: f64, ymin: f64, ymax: f64) -> (f64, f64) {
        let xspan = (xmax - xmin).max(1e-12);
        let yspan = (ymax - ymin).max(1e-12);
        let px = self.x0 + (x - xmin) / xspan * self.width;
        let py = self.y0 + self.height - (y - ymin) / yspan * self.height;
        (px, py)
    }
}

/// Renders one panel per component (re, im) with a polyline per layer and
/// snapshot; newer snapshots are drawn more opaque.
pub fn render_trajectory_svg(traj: &EigenTrajectory) -> String {
    let width = 960.0;
    let height = 440.0;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = write!(
        svg,
        r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
    );

    let panels = [
        (
            Panel {
                x0: 60.0,
                y0: 50.0,
                width: 380.0,
                height: 320.0,
            },
            "Re(lambda_n) vs n",
            false,
        ),
        (
            Panel {
                x0: 540.0,
                y0: 50.0,
                width: 380.0,
                height: 320.0,
            },
            "Im(lambda_n) vs n",
            true,
        ),
    ];

    for (panel, title, imaginary) in panels {
        // data bounds
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        let mut xmax = 1.0f64;
        for snaps in &traj.layers {
            for snap in snaps {
                let values = if imaginary { &snap.im } else { &snap.re };
                for &v in values {
                    ymin = ymin.min(v);
                    ymax = ymax.max(v);
                }
                xmax = xmax.max(values.len().saturating_sub(1) as f64);
            }
        }
        if !ymin.is_finite() {
            ymin = 0.0;
            ymax = 1.0;
        }
        if ymax - ymin < 1e-12 {
            ymax = ymin + 1.0;
        }
        let pad = 0.05 * (ymax - ymin);
        let (ymin, ymax) = (ymin - pad, ymax + pad);

        // frame and labels
        let _ = write!(
            svg,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444444" stroke-width="1"/>"##,
            panel.x0, panel.y0, panel.width, panel.height
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-family="monospace" font-size="14" fill="#000000">{title}</text>"##,
            panel.x0,
            panel.y0 - 14.0
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="#333333">{:.3}</text>"##,
            panel.x0 - 52.0,
            panel.y0 + 12.0,
            ymax
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="#333333">{:.3}</text>"##,
            panel.x0 - 52.0,
            panel.y0 + panel.height,
            ymin
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="#333333">n</text>"##,
            panel.x0 + panel.width / 2.0,
            panel.y0 + panel.height + 24.0
        );

        for (layer, snaps) in traj.layers.iter().enumerate() {
            let color = PALETTE[layer % PALETTE.len()];
            let count = snaps.len().max(1);
            for (si, snap) in snaps.iter().enumerate() {
                let opacity = 0.25 + 0.75 * (si + 1) as f64 / count as f64;
                let values = if imaginary { &snap.im } else { &snap.re };
                let mut points = String::new();
                for (n, &v) in values.iter().enumerate() {
                    let (px, py) = panel.map(n as f64, 0.0, xmax, v, ymin, ymax);
                    let _ = write!(points, "{px:.2},{py:.2} ");
                }
                let _ = write!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-opacity="{opacity:.3}" stroke-width="1.5" points="{}"/>"#,
                    points.trim_end()
                );
            }
        }
    }

    // legend: one entry per layer
    for layer in 0..traj.layers.len() {
        let color = PALETTE[layer % PALETTE.len()];
        let y = 400.0 + 14.0 * (layer / 6) as f64;
        let x = 60.0 + 140.0 * (layer % 6) as f64;
        let _ = write!(
            svg,
            r##"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="monospace" font-size="11" fill="#000000">layer {layer}</text>"##,
            y - 9.0,
            x + 14.0,
            y
        );
    }

    svg.push_str("</svg>");
    svg
}

/// Number of polyline points in the SVG text, per panel (total / 2).
pub fn svg_points_per_panel(svg: &str) -> usize {
    let mut total = 0;
    for chunk in svg.split("points=\"").skip(1) {
        if let Some(end) = chunk.find('"') {
            total += chunk[..end].split_whitespace().count();
        }
    }
    total / 2
}
