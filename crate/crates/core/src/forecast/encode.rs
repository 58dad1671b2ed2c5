//! Model input/target encoding.
//!
//! Each hour of a window becomes `2 * stations * channels` values: the
//! normalized cell (0.0 when absent) followed by the matching 0/1 presence
//! indicators. Targets are per-station normalized AQI.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::aqi::AqiSeries;
use crate::error::{Error, Result};
use crate::panel::{fit_norm, NormParams, StationPanel};
use crate::windowing::{WindowSample, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub inputs: NormParams,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    pub window_hours: usize,
    pub n_horizons: usize,
}

/// A sample in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    /// Hour-major, `window_hours * step_len`.
    pub x: Vec<f64>,
    /// `(station x horizon)` normalized targets.
    pub y: Vec<f64>,
    pub mask: Vec<bool>,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    (sd > 1e-9).then_some((mu, sd))
}

impl Encoder {
    /// Fit input statistics on `range` of the feature panel and per-station
    /// target statistics on the same hours. A station without enough
    /// target history uses the pooled statistics of all stations.
    pub fn fit(
        features: &StationPanel,
        targets: &AqiSeries,
        range: Range<usize>,
        window_hours: usize,
        n_horizons: usize,
    ) -> Result<Self> {
        let inputs = fit_norm(features, range.clone())?;
        let per_station: Vec<Vec<f64>> = (0..targets.n_stations)
            .map(|s| range.clone().filter_map(|t| targets.get(s, t)).collect())
            .collect();
        let pooled: Vec<f64> = per_station.iter().flatten().copied().collect();
        let (pm, ps) = mean_std(&pooled).unwrap_or((pooled.first().copied().unwrap_or(0.0), 1.0));
        let (target_mean, target_std) = per_station
            .iter()
            .map(|v| mean_std(v).unwrap_or((pm, ps)))
            .unzip();
        Ok(Self {
            inputs,
            target_mean,
            target_std,
            window_hours,
            n_horizons,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.inputs.station_ids.len()
    }

    pub fn n_channels(&self) -> usize {
        self.inputs.channels.len()
    }

    /// Values per hour.
    pub fn step_len(&self) -> usize {
        2 * self.n_stations() * self.n_channels()
    }

    pub fn input_len(&self) -> usize {
        self.window_hours * self.step_len()
    }

    pub fn output_len(&self) -> usize {
        self.n_stations() * self.n_horizons
    }

    pub fn check_windows(&self, windows: &WindowSet) -> Result<()> {
        if windows.station_ids != self.inputs.station_ids
            || windows.channels != self.inputs.channels
            || windows.window_hours != self.window_hours
            || windows.n_horizons() != self.n_horizons
        {
            return Err(Error::shape("windows do not match the encoder layout"));
        }
        Ok(())
    }

    pub fn encode_inputs(&self, sample: &WindowSample) -> Result<Vec<f64>> {
        let (n_s, n_c, w) = (self.n_stations(), self.n_channels(), self.window_hours);
        if sample.inputs.len() != n_s * n_c * w {
            return Err(Error::shape(
                "window sample does not match the encoder layout",
            ));
        }
        let half = n_s * n_c;
        let mut x = vec![0.0; w * 2 * half];
        for s in 0..n_s {
            for c in 0..n_c {
                let k = s * n_c + c;
                let base = k * w;
                for t in 0..w {
                    if sample.input_mask[base + t] {
                        let row = t * 2 * half;
                        x[row + k] = self.inputs.apply(s, c, sample.inputs[base + t]);
                        x[row + half + k] = 1.0;
                    }
                }
            }
        }
        Ok(x)
    }

    pub fn encode_targets(&self, sample: &WindowSample) -> Result<(Vec<f64>, Vec<bool>)> {
        if sample.targets.len() != self.output_len() {
            return Err(Error::shape(
                "window targets do not match the encoder layout",
            ));
        }
        let y = sample
            .targets
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = i / self.n_horizons;
                (v - self.target_mean[s]) / self.target_std[s]
            })
            .collect();
        Ok((y, sample.target_mask.clone()))
    }

    pub fn encode(&self, sample: &WindowSample) -> Result<EncodedSample> {
        let (y, mask) = self.encode_targets(sample)?;
        Ok(EncodedSample {
            x: self.encode_inputs(sample)?,
            y,
            mask,
        })
    }

    /// Normalized `(station x horizon)` outputs back to AQI.
    pub fn decode(&self, out: &[f64]) -> Vec<f64> {
        out.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = i / self.n_horizons;
                v * self.target_std[s] + self.target_mean[s]
            })
            .collect()
    }
}
