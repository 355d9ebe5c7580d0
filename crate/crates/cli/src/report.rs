use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use plfm::evaluation::{parse_rows, summarize, summary_to_tsv, EvalRow};
use plfm::metrics::MetricId;
use plotters::prelude::*;

use crate::error::{io_error, CliError};

const HIST_BINS: usize = 20;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.tsv written by `evaluate`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training logs to plot (repeatable).
    #[arg(long)]
    pub log: Vec<PathBuf>,
}

fn plot_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Histogram of the finite values of one metric.
fn histogram(path: &Path, metric: MetricId, rows: &[EvalRow]) -> Result<bool, CliError> {
    let values: Vec<f64> = rows
        .iter()
        .map(|r| r.get(metric))
        .filter(|v| v.is_finite())
        .collect();
    if values.is_empty() {
        return Ok(false);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = [0usize; HIST_BINS];
    for v in &values {
        counts[(((v - lo) / width) as usize).min(HIST_BINS - 1)] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1);
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_error(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{}, n = {}", metric.name(), values.len()),
            ("sans-serif", 20),
        )
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(lo..hi, 0usize..top + 1)
        .map_err(|e| plot_error(path, e))?;
    chart
        .configure_mesh()
        .x_desc(metric.name())
        .y_desc("images")
        .draw()
        .map_err(|e| plot_error(path, e))?;
    chart
        .draw_series(counts.iter().enumerate().map(|(i, &c)| {
            let x0 = lo + i as f64 * width;
            Rectangle::new([(x0, 0), (x0 + width, c)], BLUE.mix(0.6).filled())
        }))
        .map_err(|e| plot_error(path, e))?;
    root.present().map_err(|e| plot_error(path, e))?;
    Ok(true)
}

/// Numeric columns of a TSV log: header names and, per column, the values.
fn read_log(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split('\t').map(str::to_string).collect(),
        None => return Ok((Vec::new(), Vec::new())),
    };
    let mut cols = vec![Vec::new(); header.len()];
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CliError::Data(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                n + 2,
                fields.len(),
                header.len()
            )));
        }
        for (col, f) in cols.iter_mut().zip(fields) {
            col.push(
                f.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}: bad number {f:?}", path.display())))?,
            );
        }
    }
    Ok((header, cols))
}

/// Every loss column against the first (epoch or step) column. The
/// learning-rate column is left out.
fn loss_curves(log: &Path, out: &Path) -> Result<bool, CliError> {
    let (header, cols) = read_log(log)?;
    if header.len() < 2 || cols[0].is_empty() {
        return Ok(false);
    }
    let series: Vec<(&String, &Vec<f64>)> = header
        .iter()
        .zip(&cols)
        .skip(1)
        .filter(|(h, _)| *h != "lr")
        .collect();
    let finite = || {
        series
            .iter()
            .flat_map(|(_, c)| c.iter().copied())
            .filter(|v| v.is_finite())
    };
    let y_lo = finite().fold(f64::INFINITY, f64::min).min(0.0);
    let y_hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !y_hi.is_finite() {
        return Ok(false);
    }
    let y_hi = if y_hi - y_lo < 1e-12 {
        y_lo + 1.0
    } else {
        y_hi
    };
    let x_lo = cols[0][0];
    let x_hi = cols[0][cols[0].len() - 1].max(x_lo + 1.0);
    let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    let path = out.join(format!("{stem}.svg"));
    let root = SVGBackend::new(&path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_error(&path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(stem, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(|e| plot_error(&path, e))?;
    chart
        .configure_mesh()
        .x_desc(header[0].as_str())
        .draw()
        .map_err(|e| plot_error(&path, e))?;
    for (i, (name, values)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points = cols[0]
            .iter()
            .copied()
            .zip(values.iter().copied())
            .filter(|(_, y)| y.is_finite());
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(|e| plot_error(&path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_error(&path, e))?;
    root.present().map_err(|e| plot_error(&path, e))?;
    Ok(true)
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.metrics).map_err(io_error(&args.metrics))?;
    let rows = parse_rows(&text)?;
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    let table = summary_to_tsv(&summarize(&rows));
    let table_path = args.out.join("buckets.tsv");
    fs::write(&table_path, &table).map_err(io_error(&table_path))?;
    let mut plots = 0;
    for (metric, file) in [
        (MetricId::Psnr, "psnr_hist.svg"),
        (MetricId::Ssim, "ssim_hist.svg"),
    ] {
        plots += histogram(&args.out.join(file), metric, &rows)? as usize;
    }
    for log in &args.log {
        plots += loss_curves(log, &args.out)? as usize;
    }
    print!("{table}");
    println!("plots\t{plots}");
    Ok(())
}
