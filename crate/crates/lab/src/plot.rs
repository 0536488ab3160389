//! SVG plots rendered from the persisted CSV files only.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{LabError, Result};
use crate::experiments::{flow_rate::DIFFERENCES_CSV, lln::CLT_CSV, lln::LADDER_CSV};
use crate::plan::ExperimentKind;
use crate::stats::quantile;
use crate::store::{column, read_csv, TRIALS};

const SIZE: (u32, u32) = (720, 480);
/// Frequencies of zero are drawn at this floor on log axes.
const FLOOR: f64 = 1e-6;

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    color: RGBColor,
    line: bool,
}

fn plot_err<E: std::fmt::Display>(e: E) -> LabError {
    LabError::Format(format!("plot: {e}"))
}

fn log_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) =
        values.filter(|v| v.is_finite() && *v > 0.0).fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.1..1.0;
    }
    (lo / 1.5)..(hi * 1.5)
}

fn loglog(path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<()> {
    let xs = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xs.log_scale(), ys.log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(xlabel).y_desc(ylabel).draw().map_err(plot_err)?;
    for s in series {
        let color = s.color;
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
        if s.line {
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        let anno = chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        if !s.line {
            anno.label(s.label.clone()).legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
        }
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn converge_plots(dir: &Path) -> Result<()> {
    let (h, rows) = read_csv(&dir.join(TRIALS))?;
    let k = h.iter().position(|c| c == "distance").ok_or_else(|| LabError::Format("no distance column".into()))?;
    let mut by_n: Vec<(f64, Vec<f64>)> = Vec::new();
    for row in &rows {
        let Ok(dist) = row[k].parse::<f64>() else { continue };
        let n: f64 = row[0].parse().map_err(plot_err)?;
        match by_n.iter_mut().find(|(m, _)| *m == n) {
            Some((_, v)) => v.push(dist),
            None => by_n.push((n, vec![dist])),
        }
    }
    let band = |q: f64| by_n.iter().map(|(n, v)| (*n, quantile(v, q).unwrap())).collect::<Vec<_>>();
    let series = [
        Series { label: "median".into(), points: band(0.5), color: BLUE, line: true },
        Series { label: "10% quantile".into(), points: band(0.1), color: RGBColor(120, 120, 220), line: false },
        Series { label: "90% quantile".into(), points: band(0.9), color: RGBColor(120, 120, 220), line: false },
    ];
    loglog(&dir.join("plots/converge_distance.svg"), "terminal sup distance", "N", "distance", &series)
}

fn lln_plots(dir: &Path) -> Result<()> {
    let (h, rows) = read_csv(&dir.join(LADDER_CSV))?;
    let n = column(&h, &rows, "N")?;
    let fail = column(&h, &rows, "failureA")?;
    let bern = column(&h, &rows, "bernsteinA")?;
    let pts = |y: &[f64]| n.iter().zip(y).map(|(&a, &b)| (a, b.clamp(FLOOR, 1.0))).collect::<Vec<_>>();
    let series = [
        Series { label: "empirical failure frequency".into(), points: pts(&fail), color: RED, line: true },
        Series { label: "Bernstein bound (capped at 1)".into(), points: pts(&bern), color: BLACK, line: true },
    ];
    loglog(&dir.join("plots/lln_tail.svg"), "tail frequency against the envelope", "N", "probability", &series)?;
    let (h, rows) = read_csv(&dir.join(CLT_CSV))?;
    let n = column(&h, &rows, "N")?;
    let sd = column(&h, &rows, "medianSd")?;
    let scale = column(&h, &rows, "expectedScale")?;
    let c = sd.first().zip(scale.first()).map_or(1.0, |(a, b)| a / b);
    let series = [
        Series {
            label: "median pointwise sd".into(),
            points: n.iter().copied().zip(sd).collect(),
            color: BLUE,
            line: true,
        },
        Series {
            label: "N^(-1/2)".into(),
            points: n.iter().copied().zip(scale.iter().map(|s| s * c)).collect(),
            color: BLACK,
            line: true,
        },
    ];
    loglog(&dir.join("plots/lln_clt.svg"), "pointwise standard deviation", "N", "sd", &series)
}

fn flow_plots(dir: &Path) -> Result<()> {
    let (h, rows) = read_csv(&dir.join(DIFFERENCES_CSV))?;
    let r = column(&h, &rows, "rFine")?;
    let sup = column(&h, &rows, "sup")?;
    let c = sup.first().zip(r.first()).map_or(1.0, |(a, b)| a / b);
    let series = [
        Series {
            label: "sup |flow(r) - flow(r/2)|".into(),
            points: r.iter().copied().zip(sup).collect(),
            color: BLUE,
            line: true,
        },
        Series {
            label: "first order".into(),
            points: r.iter().map(|&x| (x, c * x)).collect(),
            color: BLACK,
            line: true,
        },
    ];
    loglog(&dir.join("plots/flow_rate.svg"), "flow differences down the r ladder", "r", "difference", &series)
}

/// Renders the plots of a finished run from its CSV files.
pub fn render(kind: ExperimentKind, dir: &Path) -> Result<()> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(LabError::io(&plots))?;
    match kind {
        ExperimentKind::Converge => converge_plots(dir),
        ExperimentKind::Lln => lln_plots(dir),
        ExperimentKind::FlowRate => flow_plots(dir),
        ExperimentKind::PbValidate | ExperimentKind::Simulate => Ok(()),
    }
}
