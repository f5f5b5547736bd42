//! On-disk outputs. Every CSV has a header row; numbers are written with
//! sixteen significant decimals in scientific notation.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use csv::Writer;
use serde::Serialize;

use super::{CurveRow, FoldMetrics, SweepRow};
use crate::error::Result;
use crate::sampler::{NestedRunResult, PosteriorSummary};

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

fn writer(path: &Path) -> Result<Writer<File>> {
    Ok(Writer::from_path(path)?)
}

pub fn write_report_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, report)?;
    Ok(())
}

/// One row per sample: parameters, log-likelihood and normalized importance
/// weight.
pub fn write_samples_csv(path: &Path, result: &NestedRunResult) -> Result<()> {
    let mut w = writer(path)?;
    let dim = result.samples.first().map_or(0, |s| s.theta.len());
    let mut header: Vec<String> = (0..dim).map(|d| format!("theta_{}", d + 1)).collect();
    header.extend(["log_like".into(), "weight".into()]);
    w.write_record(&header)?;
    for (s, weight) in result.samples.iter().zip(result.importance_weights()) {
        let mut row: Vec<String> = s
            .theta
            .as_slice()
            .iter()
            .map(|&x| format_number(x))
            .collect();
        row.push(format_number(s.log_like));
        row.push(format_number(weight));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, folds: &[FoldMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "fold",
        "train_rmse",
        "train_pearson",
        "test_rmse",
        "test_pearson",
    ])?;
    for f in folds {
        w.write_record([
            f.fold.to_string(),
            format_number(f.train.rmse),
            format_number(f.train.pearson),
            format_number(f.test.rmse),
            format_number(f.test.pearson),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "scheme",
        "eta",
        "mean_test_rmse",
        "mean_test_pearson",
        "estimation_rmse",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            r.scheme.name().to_string(),
            r.eta.to_string(),
            optional(r.mean_test_rmse),
            optional(r.mean_test_pearson),
            optional(r.estimation_rmse),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "size",
        "train_rmse",
        "train_rmse_2sd",
        "test_rmse",
        "test_rmse_2sd",
        "train_pearson",
        "train_pearson_2sd",
        "test_pearson",
        "test_pearson_2sd",
    ])?;
    for r in rows {
        let mut row = vec![r.size.to_string()];
        row.extend(
            [
                r.train_rmse,
                r.train_rmse_2sd,
                r.test_rmse,
                r.test_rmse_2sd,
                r.train_pearson,
                r.train_pearson_2sd,
                r.test_pearson,
                r.test_pearson_2sd,
            ]
            .map(format_number),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format marginal and pairwise histograms. Marginal rows leave the
/// second dimension empty.
pub fn write_triangle_csv(path: &Path, summary: &PosteriorSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "dim_x", "dim_y", "bin_x", "bin_y", "x_center", "y_center", "weight",
    ])?;
    for h in &summary.marginals {
        let width = (h.hi - h.lo) / h.weights.len() as f64;
        for (b, &weight) in h.weights.iter().enumerate() {
            w.write_record([
                h.dim.to_string(),
                String::new(),
                b.to_string(),
                String::new(),
                format_number(h.lo + (b as f64 + 0.5) * width),
                String::new(),
                format_number(weight),
            ])?;
        }
    }
    for p in &summary.pairs {
        let nx = p.weights.len();
        let wx = (p.range_x.1 - p.range_x.0) / nx as f64;
        for (bx, col) in p.weights.iter().enumerate() {
            let wy = (p.range_y.1 - p.range_y.0) / col.len() as f64;
            for (by, &weight) in col.iter().enumerate() {
                w.write_record([
                    p.dims.0.to_string(),
                    p.dims.1.to_string(),
                    bx.to_string(),
                    by.to_string(),
                    format_number(p.range_x.0 + (bx as f64 + 0.5) * wx),
                    format_number(p.range_y.0 + (by as f64 + 0.5) * wy),
                    format_number(weight),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
