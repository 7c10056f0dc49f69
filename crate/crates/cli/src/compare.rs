//! Side-by-side table of several run summaries.
//!
//! Rows are grouped by scenario and ordered by algorithm; each dataset present
//! contributes a Global and a C-Per column holding window medians in percent.
//! Summaries sharing scenario, label and dataset (for example several seeds)
//! are averaged into one cell.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Result};

use crate::runner::{read_summary, Summary};

const LABEL_ORDER: [&str; 6] = ["no_transfer", "fedavg", "kd", "cdkt-rep", "cdkt-full", "cdkt-repfull"];

const COLUMNS: [(&str, &str); 2] = [("global", "Global"), ("c_per", "C-Per")];

fn label_rank(label: &str) -> usize {
    LABEL_ORDER.iter().position(|l| *l == label).unwrap_or(LABEL_ORDER.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

pub fn build_table(summaries: &[Summary]) -> Result<Table> {
    if summaries.len() < 2 {
        bail!("compare needs at least two summaries, got {}", summaries.len());
    }
    let datasets: BTreeSet<&str> = summaries.iter().map(|s| s.dataset.as_str()).collect();
    // (scenario, rank, label) -> dataset -> metric -> values
    type Cells<'a> = BTreeMap<&'a str, BTreeMap<&'static str, Vec<f64>>>;
    let mut rows: BTreeMap<(&str, usize, &str), Cells> = BTreeMap::new();
    for s in summaries {
        let cells = rows
            .entry((s.scenario.as_str(), label_rank(&s.label), s.label.as_str()))
            .or_default()
            .entry(s.dataset.as_str())
            .or_default();
        for (key, _) in COLUMNS {
            if let Some(m) = s.metrics.get(key) {
                cells.entry(key).or_default().push(m.median);
            }
        }
    }

    let mut header = vec!["scenario".to_string(), "algorithm".to_string()];
    for d in &datasets {
        for (_, title) in COLUMNS {
            header.push(format!("{d} {title}"));
        }
    }
    let rows = rows
        .into_iter()
        .map(|((scenario, _, label), cells)| {
            let mut row = vec![scenario.to_string(), label.to_string()];
            for d in &datasets {
                for (key, _) in COLUMNS {
                    let cell = match cells.get(d).and_then(|c| c.get(key)) {
                        Some(v) => format!("{:.2}", 100.0 * v.iter().sum::<f64>() / v.len() as f64),
                        None => "-".to_string(),
                    };
                    row.push(cell);
                }
            }
            row
        })
        .collect();
    Ok(Table { header, rows })
}

pub fn compare_files<P: AsRef<Path>>(paths: &[P]) -> Result<Table> {
    let summaries = paths
        .iter()
        .map(|p| read_summary(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    build_table(&summaries)
}
