//! Report files: JSON, or a delimited table picked by the file extension.

use std::path::Path;

use satfusion_core::metrics::{MetricReport, MetricRow};
use satfusion_core::train::{AblationRow, EvalReport, SweepRow, TrainHistory};
use serde::Serialize;

use crate::error::{IoError, Result};
use crate::scene_io::write_json;

const METRIC_COLUMNS: [&str; 6] = ["psnr", "ssim", "sam_deg", "ergas", "mae", "mse"];

fn metric_cells(r: &MetricRow) -> Vec<String> {
    [r.psnr, r.ssim, r.sam, r.ergas, r.mae, r.mse].iter().map(|v| v.to_string()).collect()
}

/// Flattening into a header and rows of cells.
pub trait Tabular {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

fn header_with(prefix: &[&str]) -> Vec<String> {
    prefix.iter().chain(METRIC_COLUMNS.iter()).map(|s| s.to_string()).collect()
}

fn report_rows(prefix: &[String], report: &MetricReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .chain(std::iter::once(&report.aggregate))
        .map(|r| prefix.iter().cloned().chain(std::iter::once(r.id.clone())).chain(metric_cells(r)).collect())
        .collect()
}

impl Tabular for MetricReport {
    fn header(&self) -> Vec<String> {
        header_with(&["id"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        report_rows(&[], self)
    }
}

impl Tabular for MetricRow {
    fn header(&self) -> Vec<String> {
        header_with(&["id"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![std::iter::once(self.id.clone()).chain(metric_cells(self)).collect()]
    }
}

impl Tabular for EvalReport {
    fn header(&self) -> Vec<String> {
        header_with(&["method", "id"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out = report_rows(&["model".into()], &self.model);
        out.extend(report_rows(&["baseline".into()], &self.baseline));
        out
    }
}

impl Tabular for Vec<SweepRow> {
    fn header(&self) -> Vec<String> {
        header_with(&["setting", "value", "method", "id"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for row in self {
            let pre = |m: &str| vec![row.label.clone(), row.value.to_string(), m.to_string()];
            out.extend(report_rows(&pre("model"), &row.report.model));
            out.extend(report_rows(&pre("baseline"), &row.report.baseline));
        }
        out
    }
}

impl Tabular for Vec<AblationRow> {
    fn header(&self) -> Vec<String> {
        header_with(&["variant", "lambda_mae", "lambda_mse", "lambda_ssim", "lambda_sam", "compose_adjust", "parameters", "method", "id"])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for row in self {
            let pre = |m: &str| {
                let mut v = vec![row.variant.clone()];
                v.extend(row.loss_weights.iter().map(|w| w.to_string()));
                v.extend([row.compose_adjust.to_string(), row.parameter_count.to_string(), m.to_string()]);
                v
            };
            out.extend(report_rows(&pre("model"), &row.report.model));
            out.extend(report_rows(&pre("baseline"), &row.report.baseline));
        }
        out
    }
}

impl Tabular for TrainHistory {
    fn header(&self) -> Vec<String> {
        ["step", "epoch", "loss"].iter().map(|s| s.to_string()).collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.steps.iter().map(|s| vec![s.step.to_string(), s.epoch.to_string(), s.loss.to_string()]).collect()
    }
}

/// Report serialization chosen by extension: `.json`, `.csv` or `.tsv`.
pub fn write_report<R: Serialize + Tabular>(path: &Path, report: &R) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let delimiter = match ext.as_str() {
        "json" => return write_json(path, report),
        "csv" => b',',
        "tsv" => b'\t',
        _ => return Err(IoError::Usage(format!("{}: report extension must be .json, .csv or .tsv", path.display()))),
    };
    let csv_err = |e: csv::Error| IoError::format(path, e.to_string());
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path).map_err(csv_err)?;
    w.write_record(report.header()).map_err(csv_err)?;
    for row in report.rows() {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}
