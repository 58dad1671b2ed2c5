//! Chronological splits, RMSE, station categories and the per-run report.

use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecast;
use crate::panel::StationPanel;

pub const DEFAULT_RECENT_CUTOFF_HOURS: usize = 168;
pub const REPORT_HEADER: [&str; 5] = ["label", "horizon", "category", "rmse", "count"];

/// Number of leading items that go to training: `floor(ratio * n)`,
/// clamped so both sides are non-empty.
pub fn split_point(n: usize, ratio: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 windows to split, have {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio {ratio} is outside (0, 1)"
        )));
    }
    Ok(((ratio * n as f64).floor() as usize).clamp(1, n - 1))
}

/// Split items already ordered by time into (train, validation).
pub fn chrono_split<T>(items: &[T], ratio: f64) -> Result<(&[T], &[T])> {
    Ok(items.split_at(split_point(items.len(), ratio)?))
}

/// Root mean squared error over the selected pairs.
pub fn rmse(pred: &[f64], target: &[f64], selected: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || selected.len() != target.len() {
        return Err(Error::shape(
            "prediction, target and selector lengths differ",
        ));
    }
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(selected)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(sum, n), ((p, t), _)| {
            (sum + (p - t) * (p - t), n + 1)
        });
    if n == 0 {
        return Err(Error::EmptySelection("rmse over zero pairs"));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationCategory {
    RecentData,
    NoRecentData,
}

impl StationCategory {
    pub const ALL: [StationCategory; 2] =
        [StationCategory::RecentData, StationCategory::NoRecentData];

    pub fn name(self) -> &'static str {
        match self {
            StationCategory::RecentData => "recent",
            StationCategory::NoRecentData => "no_recent",
        }
    }
}

impl fmt::Display for StationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StationCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StationCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown station category {s:?}")))
    }
}

/// A station is RECENT_DATA when it has at least one present pollutant cell
/// in `[eval_start - cutoff_hours, eval_start)`. Indexed like the panel's
/// stations.
pub fn categorize_stations(
    panel: &StationPanel,
    eval_start: usize,
    cutoff_hours: usize,
) -> Vec<StationCategory> {
    let end = eval_start.min(panel.n_hours());
    let start = eval_start.saturating_sub(cutoff_hours).min(end);
    let pollutants = panel.pollutant_channels();
    (0..panel.n_stations())
        .map(|s| {
            let recent =
                (start..end).any(|t| pollutants.iter().any(|&(c, _)| panel.is_present(s, c, t)));
            if recent {
                StationCategory::RecentData
            } else {
                StationCategory::NoRecentData
            }
        })
        .collect()
}

/// `+Nd` for whole days, `+Nh` otherwise.
pub fn horizon_label(hours: usize) -> String {
    if hours % 24 == 0 {
        format!("+{}d", hours / 24)
    } else {
        format!("+{hours}h")
    }
}

pub fn parse_horizon_label(label: &str) -> Result<usize> {
    let bad = || Error::invalid(format!("bad horizon label {label:?}"));
    let body = label.strip_prefix('+').ok_or_else(bad)?;
    if let Some(d) = body.strip_suffix('d') {
        d.parse::<usize>().map(|d| d * 24).map_err(|_| bad())
    } else if let Some(h) = body.strip_suffix('h') {
        h.parse().map_err(|_| bad())
    } else {
        Err(bad())
    }
}

/// One evaluated window: forecast, ground truth and the category of every
/// station at the window's end.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub forecast: Forecast,
    /// `(station x horizon)`.
    pub targets: Vec<f64>,
    pub target_mask: Vec<bool>,
    pub categories: Vec<StationCategory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPredictions {
    pub label: String,
    pub cases: Vec<EvalCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub horizon_hours: usize,
    pub category: StationCategory,
    /// `None` when no prediction fell in the cell.
    pub rmse: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    /// Horizon-major, categories in [`StationCategory::ALL`] order.
    pub cells: Vec<ReportCell>,
}

impl ReportRow {
    pub fn cell(&self, horizon_hours: usize, category: StationCategory) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.horizon_hours == horizon_hours && c.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons_hours: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

/// RMSE per (run, horizon, category) over the cases where both the target
/// and the prediction exist.
pub fn build_report(runs: &[RunPredictions], horizons_hours: &[usize]) -> Result<EvalReport> {
    let n_h = horizons_hours.len();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let mut sums = vec![(0.0f64, 0usize); n_h * 2];
        for case in &run.cases {
            let f = &case.forecast;
            if f.n_horizons != n_h
                || case.targets.len() != f.values.len()
                || case.target_mask.len() != f.values.len()
                || case.categories.len() != f.n_stations
            {
                return Err(Error::shape(format!(
                    "inconsistent case in run {}",
                    run.label
                )));
            }
            for s in 0..f.n_stations {
                let cat = case.categories[s] as usize;
                for h in 0..n_h {
                    let i = s * n_h + h;
                    if case.target_mask[i] && f.mask[i] {
                        let e = f.values[i] - case.targets[i];
                        let slot = &mut sums[h * 2 + cat];
                        slot.0 += e * e;
                        slot.1 += 1;
                    }
                }
            }
        }
        let cells = horizons_hours
            .iter()
            .enumerate()
            .flat_map(|(h, &hours)| {
                let sums = &sums;
                StationCategory::ALL.into_iter().map(move |category| {
                    let (sse, count) = sums[h * 2 + category as usize];
                    ReportCell {
                        horizon_hours: hours,
                        category,
                        rmse: (count > 0).then(|| (sse / count as f64).sqrt()),
                        count,
                    }
                })
            })
            .collect();
        rows.push(ReportRow {
            label: run.label.clone(),
            cells,
        });
    }
    Ok(EvalReport {
        horizons_hours: horizons_hours.to_vec(),
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// One line per cell. RMSE uses the shortest round-tripping decimal
    /// form, or `decimals` places when given; empty cells have an empty
    /// RMSE field.
    pub fn write_csv<W: Write>(&self, out: W, decimals: Option<usize>) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(REPORT_HEADER)?;
        for row in &self.rows {
            for cell in &row.cells {
                let rmse = match (cell.rmse, decimals) {
                    (None, _) => String::new(),
                    (Some(v), None) => v.to_string(),
                    (Some(v), Some(d)) => format!("{v:.d$}"),
                };
                wtr.write_record([
                    row.label.as_str(),
                    &horizon_label(cell.horizon_hours),
                    cell.category.name(),
                    &rmse,
                    &cell.count.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self, decimals: Option<usize>) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, decimals)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        if rdr.headers()?.iter().ne(REPORT_HEADER) {
            return Err(Error::Format(format!(
                "report header must be {}",
                REPORT_HEADER.join(",")
            )));
        }
        let mut horizons: Vec<usize> = Vec::new();
        let mut rows: Vec<ReportRow> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let horizon = parse_horizon_label(&record[1])?;
            if !horizons.contains(&horizon) {
                horizons.push(horizon);
            }
            let rmse = match &record[3] {
                "" => None,
                v => Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad rmse {v:?}")))?,
                ),
            };
            let cell = ReportCell {
                horizon_hours: horizon,
                category: record[2].parse()?,
                rmse,
                count: record[4]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad count {:?}", &record[4])))?,
            };
            match rows.last_mut() {
                Some(row) if row.label == record[0] => row.cells.push(cell),
                _ => rows.push(ReportRow {
                    label: record[0].to_string(),
                    cells: vec![cell],
                }),
            }
        }
        Ok(Self {
            horizons_hours: horizons,
            rows,
        })
    }

    /// Aligned text table: one row per run, RMSE per horizon for each
    /// station category.
    pub fn render_text(&self, decimals: usize) -> String {
        let mut header = vec!["model".to_string()];
        for cat in StationCategory::ALL {
            for &h in &self.horizons_hours {
                header.push(format!("{} {}", cat.name(), horizon_label(h)));
            }
        }
        let mut table = vec![header];
        for row in &self.rows {
            let mut line = vec![row.label.clone()];
            for cat in StationCategory::ALL {
                for &h in &self.horizons_hours {
                    line.push(match row.cell(h, cat).and_then(|c| c.rmse) {
                        Some(v) => format!("{v:.decimals$}"),
                        None => "-".into(),
                    });
                }
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &table {
            for (i, field) in line.iter().enumerate() {
                if i == 0 {
                    let _ = write!(out, "{field:<w$}", w = widths[i]);
                } else {
                    let _ = write!(out, "  {field:>w$}", w = widths[i]);
                }
            }
            out.push('\n');
        }
        out
    }
}
