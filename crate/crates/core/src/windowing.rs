//! Rolling-window sample construction with gap filtering and
//! multi-horizon targets.
//!
//! A window ending at `t_end` covers input hours `[t_end - window_hours,
//! t_end)`; the target for horizon `h` is the station AQI at hour
//! `t_end + h`. Candidates advance by `stride_hours`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aqi::AqiSeries;
use crate::error::{Error, Result};
use crate::panel::{Channel, StationPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Raw rolling windows.
    Fs1,
    /// Windows over the spatially imputed panel.
    Fs2,
    /// Imputed panel plus per-camera vehicle counts.
    Fs3,
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Fs1 => "fs1",
            FeatureSet::Fs2 => "fs2",
            FeatureSet::Fs3 => "fs3",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fs1" => Ok(FeatureSet::Fs1),
            "fs2" => Ok(FeatureSet::Fs2),
            "fs3" => Ok(FeatureSet::Fs3),
            other => Err(Error::invalid(format!("unknown feature set {other:?}"))),
        }
    }
}

/// How the gap threshold and station count combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapRule {
    /// Keep if the gap is small OR enough stations report.
    #[default]
    Or,
    /// Keep only if both hold.
    And,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub window_hours: usize,
    pub stride_hours: usize,
    pub max_gap_fraction: f64,
    /// A window passes the station test with strictly more reporting stations.
    pub min_stations_with_data: usize,
    pub horizons_hours: Vec<usize>,
    pub gap_rule: GapRule,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_hours: 48,
            stride_hours: 1,
            max_gap_fraction: 0.30,
            min_stations_with_data: 4,
            horizons_hours: vec![24, 120, 168],
            gap_rule: GapRule::Or,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_hours == 0 || self.stride_hours == 0 {
            return Err(Error::invalid(
                "window_hours and stride_hours must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.max_gap_fraction) {
            return Err(Error::invalid("max_gap_fraction must be in [0, 1]"));
        }
        if self.horizons_hours.is_empty()
            || self.horizons_hours[0] == 0
            || self.horizons_hours.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "horizons must be non-empty, positive and strictly ascending",
            ));
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        *self.horizons_hours.last().unwrap_or(&0)
    }

    pub fn passes(&self, gap_fraction: f64, station_count: usize) -> bool {
        let small_gap = gap_fraction <= self.max_gap_fraction;
        let enough = station_count > self.min_stations_with_data;
        match self.gap_rule {
            GapRule::Or => small_gap || enough,
            GapRule::And => small_gap && enough,
        }
    }
}

/// Filter inputs for one candidate window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub t_end: usize,
    pub gap_fraction: f64,
    /// Stations with at least one present pollutant cell in the window.
    pub station_count: usize,
}

/// Every candidate `t_end` in `[window_hours, n_hours - max_horizon)` on the
/// stride grid, with its gap fraction and reporting-station count.
pub fn enumerate_candidates(panel: &StationPanel, cfg: &WindowConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let (w, n_t) = (cfg.window_hours, panel.n_hours());
    let pollutants = panel.pollutant_channels();
    let n_s = panel.n_stations();

    // Present pollutant cells per (station, hour), then prefix sums.
    let mut prefix = vec![vec![0usize; n_t + 1]; n_s];
    for (s, row) in prefix.iter_mut().enumerate() {
        for t in 0..n_t {
            let present = pollutants
                .iter()
                .filter(|&&(c, _)| panel.is_present(s, c, t))
                .count();
            row[t + 1] = row[t] + present;
        }
    }
    let cells = n_s * pollutants.len() * w;

    let mut out = Vec::new();
    let mut t_end = w;
    while t_end + cfg.max_horizon() < n_t {
        let mut present = 0;
        let mut station_count = 0;
        for row in &prefix {
            let k = row[t_end] - row[t_end - w];
            present += k;
            station_count += usize::from(k > 0);
        }
        let gap_fraction = if cells == 0 {
            1.0
        } else {
            (cells - present) as f64 / cells as f64
        };
        out.push(Candidate {
            t_end,
            gap_fraction,
            station_count,
        });
        t_end += cfg.stride_hours;
    }
    Ok(out)
}

/// One model input: a window of every panel channel plus horizon targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub t_end: usize,
    /// `(station x channel x window_hours)` after in-window gap filling.
    pub inputs: Vec<f64>,
    pub input_mask: Vec<bool>,
    /// Cells that were measured, as opposed to imputed or interpolated.
    pub observed: Vec<bool>,
    /// `(station x horizon)` AQI targets.
    pub targets: Vec<f64>,
    pub target_mask: Vec<bool>,
    /// Share of input cells that were not observed but filled, spatially
    /// or by in-window interpolation.
    pub imputed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub feature_set: FeatureSet,
    pub station_ids: Vec<String>,
    pub channels: Vec<Channel>,
    pub window_hours: usize,
    pub horizons_hours: Vec<usize>,
    pub samples: Vec<WindowSample>,
}

impl WindowSet {
    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_horizons(&self) -> usize {
        self.horizons_hours.len()
    }

    pub fn aqi_channel(&self) -> Option<usize> {
        self.channels.iter().position(|c| *c == Channel::Aqi)
    }

    /// Shallow view with a subset of samples.
    pub fn with_samples(&self, samples: Vec<WindowSample>) -> WindowSet {
        WindowSet {
            feature_set: self.feature_set,
            station_ids: self.station_ids.clone(),
            channels: self.channels.clone(),
            window_hours: self.window_hours,
            horizons_hours: self.horizons_hours.clone(),
            samples,
        }
    }
}

/// Build kept windows. `panel` is the feature panel for `feature_set`
/// (already imputed / augmented); `targets` supplies the AQI to forecast.
///
/// A candidate is kept when it passes the gap rule and at least one of its
/// targets is present. Remaining gaps in a kept window are filled per
/// `(station, channel)` by linear interpolation in time, holding the
/// nearest value at the window edges; a series with no present cell in the
/// window stays absent.
pub fn build_windows(
    panel: &StationPanel,
    targets: &AqiSeries,
    cfg: &WindowConfig,
    feature_set: FeatureSet,
) -> Result<WindowSet> {
    cfg.validate()?;
    let need = cfg.window_hours + cfg.max_horizon();
    if panel.n_hours() < need {
        return Err(Error::PanelTooShort {
            have: panel.n_hours(),
            need,
        });
    }
    if targets.n_stations != panel.n_stations() || targets.n_hours != panel.n_hours() {
        return Err(Error::shape("target series does not match the panel"));
    }
    let has_vehicles = panel
        .channels()
        .iter()
        .any(|c| matches!(c, Channel::Vehicle { .. }));
    if feature_set == FeatureSet::Fs3 && !has_vehicles {
        return Err(Error::invalid("fs3 windows need vehicle channels"));
    }

    let mut samples = Vec::new();
    for cand in enumerate_candidates(panel, cfg)? {
        if !cfg.passes(cand.gap_fraction, cand.station_count) {
            continue;
        }
        let (tv, tm) = window_targets(targets, cand.t_end, &cfg.horizons_hours);
        if !tm.iter().any(|&m| m) {
            continue;
        }
        samples.push(materialize(panel, cand.t_end, cfg.window_hours, tv, tm));
    }

    Ok(WindowSet {
        feature_set,
        station_ids: panel.station_ids().to_vec(),
        channels: panel.channels().to_vec(),
        window_hours: cfg.window_hours,
        horizons_hours: cfg.horizons_hours.clone(),
        samples,
    })
}

/// Inputs for a forecast issued at `t_end` (exclusive), with no targets.
pub fn input_window(
    panel: &StationPanel,
    t_end: usize,
    window_hours: usize,
) -> Result<WindowSample> {
    if window_hours == 0 || t_end < window_hours || t_end > panel.n_hours() {
        return Err(Error::invalid(format!(
            "no {window_hours}-hour window ends at hour {t_end} of a {}-hour panel",
            panel.n_hours()
        )));
    }
    Ok(materialize(
        panel,
        t_end,
        window_hours,
        Vec::new(),
        Vec::new(),
    ))
}

fn window_targets(targets: &AqiSeries, t_end: usize, horizons: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let mut values = Vec::with_capacity(targets.n_stations * horizons.len());
    let mut mask = Vec::with_capacity(values.capacity());
    for s in 0..targets.n_stations {
        for &h in horizons {
            match targets.get(s, t_end + h) {
                Some(v) => {
                    values.push(v);
                    mask.push(true);
                }
                None => {
                    values.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    (values, mask)
}

fn materialize(
    panel: &StationPanel,
    t_end: usize,
    w: usize,
    targets: Vec<f64>,
    target_mask: Vec<bool>,
) -> WindowSample {
    let start = t_end - w;
    let n = panel.n_stations() * panel.n_channels() * w;
    let mut inputs = Vec::with_capacity(n);
    let mut input_mask = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    let mut filled = 0usize;
    for s in 0..panel.n_stations() {
        for c in 0..panel.n_channels() {
            let (values, mask) = panel.series(s, c);
            let imputed = panel.imputed_series(s, c);
            let mut series: Vec<f64> = values[start..t_end].to_vec();
            let mut present: Vec<bool> = mask[start..t_end].to_vec();
            observed.extend((start..t_end).map(|t| mask[t] && !imputed[t]));
            filled += imputed[start..t_end].iter().filter(|&&i| i).count();
            filled += fill_linear(&mut series, &mut present);
            inputs.extend(series);
            input_mask.extend(present);
        }
    }
    WindowSample {
        t_end,
        inputs,
        input_mask,
        observed,
        targets,
        target_mask,
        imputed_fraction: filled as f64 / n.max(1) as f64,
    }
}

/// Fill absent cells between present ones linearly and hold the nearest
/// value at the edges. Returns the number of cells filled. Present cells are
/// untouched; an all-absent series is left as is.
pub fn fill_linear(values: &mut [f64], mask: &mut [bool]) -> usize {
    let present: Vec<usize> = (0..values.len()).filter(|&t| mask[t]).collect();
    let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
        return 0;
    };
    let mut filled = 0;
    for t in 0..first {
        values[t] = values[first];
        mask[t] = true;
        filled += 1;
    }
    for t in last + 1..values.len() {
        values[t] = values[last];
        mask[t] = true;
        filled += 1;
    }
    for pair in present.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (values[a], values[b]);
        for t in a + 1..b {
            let frac = (t - a) as f64 / (b - a) as f64;
            values[t] = va + (vb - va) * frac;
            mask[t] = true;
            filled += 1;
        }
    }
    filled
}

/// Audit CSV: one row per candidate with the filter inputs and the verdict.
pub fn write_window_dump<W: Write>(
    out: W,
    panel: &StationPanel,
    targets: &AqiSeries,
    cfg: &WindowConfig,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t_end", "kept", "gap_fraction", "station_count"])?;
    for cand in enumerate_candidates(panel, cfg)? {
        let (_, tm) = window_targets(targets, cand.t_end, &cfg.horizons_hours);
        let kept = cfg.passes(cand.gap_fraction, cand.station_count) && tm.iter().any(|&m| m);
        wtr.write_record([
            panel
                .hour_time(cand.t_end)
                .format("%Y-%m-%dT%H:%M:%SZ")
                .to_string(),
            if kept { "kept" } else { "dropped" }.to_string(),
            cand.gap_fraction.to_string(),
            cand.station_count.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<window dump>", e))?;
    Ok(())
}
