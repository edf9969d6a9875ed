//! SVG line charts of search reward trends and training curves.

use std::path::Path;

use litese_core::training::LogEntry;
use litese_nas::TrendRow;
use plotters::coord::Shift;
use plotters::prelude::*;

use crate::exit::{Failure, Outcome};

const SIZE: (u32, u32) = (800, 480);

pub enum Series {
    Trend(Vec<TrendRow>),
    Training(Vec<LogEntry>),
}

/// Reads a reward-trend table or a JSON-lines training log.
pub fn read(path: &Path) -> Outcome<Series> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::from(e).context(path.display()))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    if first.starts_with('{') {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| {
                    Failure::input(format!("{} line {}: {}", path.display(), i + 1, e))
                })
            })
            .collect::<Outcome<Vec<LogEntry>>>()?;
        Ok(Series::Training(rows))
    } else if first.starts_with("episode") {
        Ok(Series::Trend(TrendRow::parse_table(&text)?))
    } else {
        Err(Failure::input(format!(
            "{}: neither a trend table nor a training log",
            path.display()
        )))
    }
}

pub fn render(series: &Series, out: &Path) -> Outcome {
    match series {
        Series::Trend(rows) => trend(rows, out),
        Series::Training(rows) => training(rows, out),
    }
    .map_err(|e| Failure::runtime(format!("{}: {}", out.display(), e)))
}

type Res = Result<(), Box<dyn std::error::Error>>;

/// Legend label, colour and points of one line.
type Curve<'a> = (&'a str, RGBColor, Vec<(f64, f64)>);

fn bounds(ys: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        (lo.min(y), hi.max(y))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn line<DB: DrawingBackend>(
    area: &DrawingArea<DB, Shift>,
    caption: &str,
    x_desc: &str,
    y_desc: &str,
    curves: &[Curve],
) -> Res
where
    DB::ErrorType: 'static,
{
    let xs = bounds(curves.iter().flat_map(|c| c.2.iter().map(|p| p.0)));
    let ys = bounds(curves.iter().flat_map(|c| c.2.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()?;
    for (name, color, pts) in curves {
        if pts.is_empty() {
            continue;
        }
        let c = *color;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    Ok(())
}

fn trend(rows: &[TrendRow], out: &Path) -> Res {
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let pick = |f: fn(&TrendRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| f(r).map(|y| (r.sampled as f64, y)))
            .collect()
    };
    line(
        &root,
        "Rewards of top models during search",
        "sampled models",
        "reward",
        &[
            ("top-1", RED, pick(|r| r.top1)),
            ("top-5", BLUE, pick(|r| r.top5)),
            ("top-25", GREEN, pick(|r| r.top25)),
            (
                "episode mean",
                RGBColor(128, 128, 128),
                pick(|r| Some(r.mean_reward)),
            ),
        ],
    )?;
    root.present()?;
    Ok(())
}

fn training(rows: &[LogEntry], out: &Path) -> Res {
    let root = SVGBackend::new(out, (SIZE.0, SIZE.1 * 2)).into_drawing_area();
    root.fill(&WHITE)?;
    let (top, bottom) = root.split_vertically(SIZE.1);
    let loss: Vec<_> = rows.iter().map(|r| (r.step as f64, r.loss)).collect();
    line(
        &top,
        "Training loss",
        "step",
        "loss",
        &[("loss", RED, loss)],
    )?;
    let valid: Vec<_> = rows
        .iter()
        .filter_map(|r| r.valid.map(|v| (r.step as f64, v.improvement_db)))
        .collect();
    line(
        &bottom,
        "Held-out SISNR improvement",
        "step",
        "dB",
        &[("SISNR gain", BLUE, valid)],
    )?;
    root.present()?;
    Ok(())
}
