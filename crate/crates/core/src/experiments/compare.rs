use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::dataset::ResolutionTier;
use crate::metrics::lift_percent;

/// The figures of one run that appear in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub real_train: usize,
    pub synthetic_train: usize,
    pub resolution_tier: Option<ResolutionTier>,
    /// mAP in percent.
    pub map_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub real_train: usize,
    pub synthetic_train: usize,
    pub tier: String,
    pub map_percent: f64,
    /// `None` on the baseline row.
    pub lift_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Rows in input order; lift is measured against the row named `baseline`.
pub fn compare_to_baseline(runs: &[RunSummary], baseline: &str) -> Result<Comparison> {
    let base = runs
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| ExperimentError::UnknownBaseline(baseline.to_string()))?;
    let rows = runs
        .iter()
        .map(|r| {
            let lift = if r.name == baseline {
                None
            } else {
                Some(lift_percent(base.map_percent, r.map_percent)?)
            };
            Ok(ComparisonRow {
                name: r.name.clone(),
                real_train: r.real_train,
                synthetic_train: r.synthetic_train,
                tier: r.resolution_tier.map_or_else(|| "any".to_string(), |t| t.to_string()),
                map_percent: r.map_percent,
                lift_percent: lift,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
    })
}

impl ComparisonRow {
    fn cells(&self) -> [String; 6] {
        [
            self.name.clone(),
            self.real_train.to_string(),
            self.synthetic_train.to_string(),
            self.tier.clone(),
            format!("{:.2}", self.map_percent),
            self.lift_percent.map_or_else(|| "N/A".to_string(), |l| format!("{l:.2}%")),
        ]
    }
}

const HEADER: [&str; 6] = ["experiment", "real", "synthetic", "tier", "mAP", "increase"];

impl Comparison {
    /// Aligned columns; text left-aligned, numbers right-aligned.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 6]> = self.rows.iter().map(ComparisonRow::cells).collect();
        let mut widths = HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: [&str; 6]| {
            row.iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 || i == 3 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(HEADER) + "\n";
        for row in &cells {
            out += &(line(row.each_ref().map(String::as_str)) + "\n");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,real,synthetic,tier,map_percent,lift_percent\n");
        for r in &self.rows {
            let [name, real, synth, tier, map, _] = r.cells();
            let lift = r.lift_percent.map_or_else(|| "N/A".to_string(), |l| format!("{l:.2}"));
            out += &format!("{name},{real},{synth},{tier},{map},{lift}\n");
        }
        out
    }
}
