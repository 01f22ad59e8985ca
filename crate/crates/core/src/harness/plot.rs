//! SVG figures for runs: the loss trace, ASR against confidence threshold,
//! and ASR by viewing angle.

use std::path::Path;

use plotters::prelude::*;

use super::pipeline::AngleRow;
use crate::attack::RoundLoss;
use crate::error::{Error, Result};
use crate::metrics::SweepRow;

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Loss components per round.
pub fn loss_trace_svg(trace: &[RoundLoss], path: &Path) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::domain("empty loss trace"));
    }
    let series: [(&str, fn(&RoundLoss) -> f64); 4] = [
        ("total", |r| r.total),
        ("L_det2d", |r| r.det2d),
        ("L_det3d", |r| r.det3d),
        ("L_tv", |r| r.tv),
    ];
    let x_max = trace.last().map(|r| r.round).unwrap_or(0).max(1) as f64;
    let y_max = trace
        .iter()
        .flat_map(|r| series.iter().map(move |(_, f)| f(r)))
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.05;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("round")
        .y_desc("loss")
        .draw()
        .map_err(plot_err)?;
    for (k, (name, f)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(trace.iter().map(|r| (r.round as f64, f(r))), color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// One ASR curve over confidence thresholds per IoU threshold.
pub fn asr_curves_svg(reports: &[SweepRow], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::domain("no sweep reports"));
    }
    let mut ious: Vec<f64> = reports.iter().map(|r| r.iou_thres).collect();
    ious.sort_by(f64::total_cmp);
    ious.dedup();
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("ASR vs confidence threshold", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("confidence threshold")
        .y_desc("ASR")
        .draw()
        .map_err(plot_err)?;
    for (k, iou) in ious.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = reports
            .iter()
            .filter(|r| r.iou_thres == *iou)
            .map(|r| (r.conf_thres, r.asr))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(LineSeries::new(pts.clone(), color))
            .map_err(plot_err)?
            .label(format!("IoU={iou}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Polar plot of ASR against model yaw; radius is ASR.
pub fn angles_svg(rows: &[AngleRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::domain("no angle rows"));
    }
    let root = SVGBackend::new(path, (520, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("ASR by viewing angle", ("sans-serif", 20))
        .margin(16)
        .build_cartesian_2d(-1.1..1.1, -1.1..1.1)
        .map_err(plot_err)?;
    let polar = |deg: f64, r: f64| {
        let t = deg.to_radians();
        (r * t.sin(), r * t.cos())
    };
    for ring in [0.25, 0.5, 0.75, 1.0] {
        chart
            .draw_series(LineSeries::new((0..=72).map(|i| polar(i as f64 * 5.0, ring)), BLACK.mix(0.2)))
            .map_err(plot_err)?;
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
    let mut pts: Vec<(f64, f64)> = sorted.iter().map(|r| polar(r.angle_deg, r.asr)).collect();
    if let Some(&first) = pts.first() {
        pts.push(first);
    }
    chart
        .draw_series(LineSeries::new(pts.clone(), PALETTE[0].stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, PALETTE[0].filled())))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
