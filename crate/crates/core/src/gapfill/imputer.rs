//! Spatial imputation: one boosted model per `(station, pollutant)`,
//! trained on the concurrent readings of every other station.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gbdt::{fit_gbdt, predict_gbdt, GbdtModel, GbdtParams, Matrix};
use crate::error::{Error, Result};
use crate::panel::{Channel, Pollutant, StationPanel};

pub const GRID_FORMAT: &str = "gapcast-imputer-grid";
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputerParams {
    pub gbdt: GbdtParams,
    /// Pairs with fewer present target hours are left out of the grid.
    pub min_rows: usize,
}

impl Default for ImputerParams {
    fn default() -> Self {
        Self {
            gbdt: GbdtParams::default(),
            min_rows: 100,
        }
    }
}

impl ImputerParams {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A `(station, channel)` input of an imputer, by panel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub station: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerEntry {
    pub station: usize,
    pub pollutant: Pollutant,
    pub features: Vec<FeatureRef>,
    pub model: GbdtModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerGrid {
    pub station_ids: Vec<String>,
    /// Channel layout the feature indices refer to.
    pub channels: Vec<Channel>,
    /// Sorted by `(station, pollutant)`.
    pub entries: Vec<ImputerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    format: String,
    version: u32,
    grid: ImputerGrid,
}

impl ImputerGrid {
    pub fn get(&self, station: usize, pollutant: Pollutant) -> Option<&ImputerEntry> {
        self.entries
            .binary_search_by(|e| (e.station, e.pollutant).cmp(&(station, pollutant)))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GridFile {
            format: GRID_FORMAT.into(),
            version: GRID_VERSION,
            grid: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GridFile = serde_json::from_str(text)?;
        if file.format != GRID_FORMAT || file.version != GRID_VERSION {
            return Err(Error::Format(format!(
                "expected {GRID_FORMAT} v{GRID_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Channels that feed the imputers: pollutants and environmental readings.
fn is_sensor_channel(c: &Channel) -> bool {
    matches!(c, Channel::Pollutant(_) | Channel::Env(_))
}

/// Every sensor channel of every station except `target`.
fn feature_layout(panel: &StationPanel, target: usize) -> Vec<FeatureRef> {
    let sensor: Vec<usize> = (0..panel.n_channels())
        .filter(|&c| is_sensor_channel(&panel.channels()[c]))
        .collect();
    (0..panel.n_stations())
        .filter(|&s| s != target)
        .flat_map(|s| {
            sensor.iter().map(move |&c| FeatureRef {
                station: s,
                channel: c,
            })
        })
        .collect()
}

fn feature_row(panel: &StationPanel, features: &[FeatureRef], t: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        features
            .iter()
            .map(|f| panel.get(f.station, f.channel, t).unwrap_or(f64::NAN)),
    );
}

/// Train the `(station, pollutant)` grid. Training rows are the hours where
/// the target is present; features are the other stations at that hour.
pub fn train_imputers(panel: &StationPanel, params: &ImputerParams) -> Result<ImputerGrid> {
    if panel.n_stations() < 2 {
        return Err(Error::invalid(
            "spatial imputation needs at least two stations",
        ));
    }
    let mut entries = Vec::new();
    let mut row = Vec::new();
    for s in 0..panel.n_stations() {
        let features = feature_layout(panel, s);
        for (c, pollutant) in panel.pollutant_channels() {
            let (values, mask) = panel.series(s, c);
            let hours: Vec<usize> = (0..panel.n_hours()).filter(|&t| mask[t]).collect();
            if hours.len() < params.min_rows.max(1) {
                log::warn!(
                    "skipping imputer for station {} / {pollutant}: {} rows < min_rows {}",
                    panel.station_ids()[s],
                    hours.len(),
                    params.min_rows
                );
                continue;
            }
            let mut data = Vec::with_capacity(hours.len() * features.len());
            for &t in &hours {
                feature_row(panel, &features, t, &mut row);
                data.extend_from_slice(&row);
            }
            let x = Matrix::new(hours.len(), features.len(), data)?;
            let y: Vec<f64> = hours.iter().map(|&t| values[t]).collect();
            let model = fit_gbdt(&x, &y, &params.gbdt)?;
            log::debug!(
                "trained imputer {} / {pollutant} on {} rows",
                panel.station_ids()[s],
                hours.len()
            );
            entries.push(ImputerEntry {
                station: s,
                pollutant,
                features: features.clone(),
                model,
            });
        }
    }
    entries.sort_by_key(|e| (e.station, e.pollutant));
    Ok(ImputerGrid {
        station_ids: panel.station_ids().to_vec(),
        channels: panel.channels().to_vec(),
        entries,
    })
}

/// Fill absent pollutant cells that have a model. Features are always read
/// from the input panel, never from cells filled in this pass. Returns the
/// filled panel and a mask (panel layout) of the cells that were filled.
pub fn impute(panel: &StationPanel, grid: &ImputerGrid) -> Result<(StationPanel, Vec<bool>)> {
    if grid.station_ids != panel.station_ids() {
        return Err(Error::shape(
            "imputer grid was trained on different stations",
        ));
    }
    // Map grid channel indices to this panel's indices.
    let remap: Vec<Option<usize>> = grid
        .channels
        .iter()
        .map(|c| panel.channel_index(c))
        .collect();

    let mut out = panel.clone();
    let mut imputed = vec![false; panel.values().len()];
    let mut row = Vec::new();
    for entry in &grid.entries {
        let Some(target_c) = panel.channel_index(&Channel::Pollutant(entry.pollutant)) else {
            continue;
        };
        let features = entry
            .features
            .iter()
            .map(|f| {
                remap
                    .get(f.channel)
                    .copied()
                    .flatten()
                    .map(|channel| FeatureRef {
                        station: f.station,
                        channel,
                    })
                    .ok_or_else(|| Error::shape("panel lacks a channel the imputer grid uses"))
            })
            .collect::<Result<Vec<_>>>()?;
        for t in 0..panel.n_hours() {
            if panel.is_present(entry.station, target_c, t) {
                continue;
            }
            feature_row(panel, &features, t, &mut row);
            let value = predict_gbdt(&entry.model, &row)?;
            out.set_with_provenance(entry.station, target_c, t, value, true)?;
            imputed[panel.index(entry.station, target_c, t)] = true;
        }
    }
    Ok((out, imputed))
}
