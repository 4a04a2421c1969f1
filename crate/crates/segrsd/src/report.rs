//! Plain-text and CSV result tables.

use std::fmt::Write as _;

use segrsd_core::metrics::mean_std;
use segrsd_core::rsd::{AuxTask, Pipeline, RsdLoss};

use crate::error::{DataError, Result};

pub fn pipeline_name(p: Pipeline) -> &'static str {
    match p {
        Pipeline::FeatureExtraction => "feature",
        Pipeline::Pretraining => "pretrain",
        Pipeline::Regularization => "regularize",
        Pipeline::SingleTask => "single",
    }
}

pub fn aux_name(a: AuxTask) -> &'static str {
    match a {
        AuxTask::None => "none",
        AuxTask::LearnedSeg => "seg",
        AuxTask::Uniform => "uniform",
        AuxTask::Progress => "progress",
        AuxTask::Phase => "phase",
    }
}

pub fn loss_name(l: RsdLoss) -> &'static str {
    match l {
        RsdLoss::SmoothL1 => "smoothl1",
        RsdLoss::CorrSmoothL1 => "corr",
    }
}

/// `"9.0 (±0.1)"` for several values, the plain mean for one.
pub fn format_mean_sd(values: &[f64], decimals: usize) -> String {
    let (mean, sd) = mean_std(values);
    if values.len() < 2 {
        format!("{mean:.decimals$}")
    } else {
        format!("{mean:.decimals$} (±{sd:.decimals$})")
    }
}

/// A grid of samples, rows and columns in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<Vec<f64>>>)>,
    pub decimals: usize,
}

impl ResultTable {
    pub fn new(title: impl Into<String>, row_header: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
            decimals: 2,
        }
    }

    /// Appends `value` to the cell, creating the row if needed.
    pub fn push(&mut self, row: &str, column: &str, value: f64) -> Result<()> {
        let c = self
            .columns
            .iter()
            .position(|x| x == column)
            .ok_or_else(|| DataError::Usage(format!("unknown table column {column}")))?;
        let n = self.columns.len();
        let r = match self.rows.iter().position(|(name, _)| name == row) {
            Some(r) => r,
            None => {
                self.rows.push((row.to_string(), vec![None; n]));
                self.rows.len() - 1
            }
        };
        self.rows[r].1[c].get_or_insert_with(Vec::new).push(value);
        Ok(())
    }

    fn cell(&self, values: &Option<Vec<f64>>) -> String {
        match values {
            Some(v) if !v.is_empty() => format_mean_sd(v, self.decimals),
            _ => "-".to_string(),
        }
    }

    pub fn render_text(&self) -> String {
        let mut grid = vec![std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()];
        for (name, cells) in &self.rows {
            grid.push(
                std::iter::once(name.clone())
                    .chain(cells.iter().map(|c| self.cell(c)))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        for (i, row) in grid.iter().enumerate() {
            let mut line = String::new();
            for (j, cell) in row.iter().enumerate() {
                let pad = widths[j] - cell.chars().count();
                if j == 0 {
                    line.push_str(cell);
                    line.push_str(&" ".repeat(pad));
                } else {
                    line.push_str("  ");
                    line.push_str(&" ".repeat(pad));
                    line.push_str(cell);
                }
            }
            let _ = writeln!(out, "{}", line.trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * self.columns.len();
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }

    /// One line per filled cell: `row,column,mean,sd,n`.
    pub fn render_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| DataError::Usage(format!("writing CSV: {e}"));
        w.write_record([self.row_header.as_str(), "column", "mean", "sd", "n"])
            .map_err(fail)?;
        for (name, cells) in &self.rows {
            for (col, values) in self.columns.iter().zip(cells) {
                let Some(values) = values else { continue };
                let (mean, sd) = mean_std(values);
                w.write_record([
                    name.clone(),
                    col.clone(),
                    format!("{mean:.6}"),
                    format!("{sd:.6}"),
                    values.len().to_string(),
                ])
                .map_err(fail)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| DataError::Usage(format!("writing CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_style() {
        assert_eq!(format_mean_sd(&[8.9, 9.0, 9.1, 9.0], 1), "9.0 (±0.1)");
        assert_eq!(format_mean_sd(&[2.5], 2), "2.50");
    }

    #[test]
    fn table_layout() {
        let mut t = ResultTable::new("MAE", "aux", vec!["feature".into(), "single".into()]);
        t.decimals = 1;
        t.push("none", "single", 9.7).unwrap();
        t.push("seg", "feature", 9.0).unwrap();
        t.push("seg", "feature", 9.2).unwrap();
        assert!(t.push("seg", "nope", 1.0).is_err());
        let text = t.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "MAE");
        assert_eq!(lines[1], "aux      feature  single");
        assert_eq!(lines[3], "none           -     9.7");
        assert_eq!(lines[4], "seg   9.1 (±0.1)       -");
        let csv = t.render_csv().unwrap();
        assert_eq!(csv.lines().next(), Some("aux,column,mean,sd,n"));
        assert!(csv.contains("seg,feature,9.100000,0.141421,2"));
    }
}
