//! Hourly station panel: the `(station x channel x hour)` value tensor with
//! a presence mask, plus hourly aggregation, normalization and gap
//! statistics.
//!
//! Gaps are never encoded as sentinel values. A cell is either present
//! (`mask == true`, finite value) or absent. The hour axis itself is
//! contiguous; a missing hour is just a column of absent cells.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    No2,
    Co,
    So2,
    O3,
    Pm1_0,
    Pm2_5,
    Pm10,
}

impl Pollutant {
    pub const ALL: [Pollutant; 7] = [
        Pollutant::No2,
        Pollutant::Co,
        Pollutant::So2,
        Pollutant::O3,
        Pollutant::Pm1_0,
        Pollutant::Pm2_5,
        Pollutant::Pm10,
    ];

    /// Column name used in the station and breakpoint CSV files.
    pub fn name(self) -> &'static str {
        match self {
            Pollutant::No2 => "no2",
            Pollutant::Co => "co",
            Pollutant::So2 => "so2",
            Pollutant::O3 => "o3",
            Pollutant::Pm1_0 => "pm1_0",
            Pollutant::Pm2_5 => "pm2_5",
            Pollutant::Pm10 => "pm10",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnvChannel {
    Temperature,
    Humidity,
    Uv,
    Rainfall,
}

impl EnvChannel {
    pub const ALL: [EnvChannel; 4] = [
        EnvChannel::Temperature,
        EnvChannel::Humidity,
        EnvChannel::Uv,
        EnvChannel::Rainfall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvChannel::Temperature => "temperature",
            EnvChannel::Humidity => "humidity",
            EnvChannel::Uv => "uv",
            EnvChannel::Rainfall => "rainfall",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// Vehicle classes counted per CCTV image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Cars,
    Motorcycles,
    Buses,
    Trucks,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::Cars,
        VehicleClass::Motorcycles,
        VehicleClass::Buses,
        VehicleClass::Trucks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Cars => "cars",
            VehicleClass::Motorcycles => "motorcycles",
            VehicleClass::Buses => "buses",
            VehicleClass::Trucks => "trucks",
        }
    }
}

/// One panel column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Pollutant(Pollutant),
    Env(EnvChannel),
    Aqi,
    Vehicle { camera: String, class: VehicleClass },
}

impl Channel {
    /// The 11 channels of the station CSV, in file order.
    pub fn station_channels() -> Vec<Channel> {
        Pollutant::ALL
            .into_iter()
            .map(Channel::Pollutant)
            .chain(EnvChannel::ALL.into_iter().map(Channel::Env))
            .collect()
    }

    pub fn pollutant(&self) -> Option<Pollutant> {
        match self {
            Channel::Pollutant(p) => Some(*p),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Pollutant(p) => f.write_str(p.name()),
            Channel::Env(e) => f.write_str(e.name()),
            Channel::Aqi => f.write_str("aqi"),
            Channel::Vehicle { camera, class } => write!(f, "{camera}:{}", class.name()),
        }
    }
}

/// A single raw sensor reading before hourly aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub timestamp: DateTime<Utc>,
    pub station: String,
    pub channel: Channel,
    pub value: f64,
}

/// Hourly `(station x channel x hour)` tensor with a presence mask.
///
/// Storage is row-major with the hour axis innermost, so one
/// `(station, channel)` series is a contiguous slice. `imputed` marks
/// present cells whose value was inferred rather than observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StationPanel {
    station_ids: Vec<String>,
    channels: Vec<Channel>,
    t0: DateTime<Utc>,
    n_hours: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    imputed: Vec<bool>,
}

impl StationPanel {
    /// An all-absent panel.
    pub fn empty(
        station_ids: Vec<String>,
        channels: Vec<Channel>,
        t0: DateTime<Utc>,
        n_hours: usize,
    ) -> Result<Self> {
        let unique: HashSet<&String> = station_ids.iter().collect();
        if unique.len() != station_ids.len() {
            return Err(Error::invalid("station ids must be unique"));
        }
        let unique: HashSet<&Channel> = channels.iter().collect();
        if unique.len() != channels.len() {
            return Err(Error::invalid("channels must be unique"));
        }
        if t0 != floor_to_hour(t0) {
            return Err(Error::invalid(format!("t0 {t0} is not hour-aligned")));
        }
        let len = station_ids.len() * channels.len() * n_hours;
        Ok(Self {
            station_ids,
            channels,
            t0,
            n_hours,
            values: vec![0.0; len],
            mask: vec![false; len],
            imputed: vec![false; len],
        })
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_hours(&self) -> usize {
        self.n_hours
    }

    pub fn t0(&self) -> DateTime<Utc> {
        self.t0
    }

    pub fn hour_time(&self, t: usize) -> DateTime<Utc> {
        self.t0 + Duration::hours(t as i64)
    }

    /// Hour index containing `ts`, if it falls within the panel.
    pub fn hour_index(&self, ts: DateTime<Utc>) -> Option<usize> {
        let offset = (floor_to_hour(ts) - self.t0).num_hours();
        (offset >= 0 && (offset as usize) < self.n_hours).then_some(offset as usize)
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.station_ids.iter().position(|s| s == id)
    }

    pub fn channel_index(&self, channel: &Channel) -> Option<usize> {
        self.channels.iter().position(|c| c == channel)
    }

    /// `(channel index, pollutant)` for every pollutant column.
    pub fn pollutant_channels(&self) -> Vec<(usize, Pollutant)> {
        self.channels
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.pollutant().map(|p| (i, p)))
            .collect()
    }

    #[inline]
    pub fn index(&self, s: usize, c: usize, t: usize) -> usize {
        debug_assert!(s < self.n_stations() && c < self.n_channels() && t < self.n_hours);
        (s * self.channels.len() + c) * self.n_hours + t
    }

    #[inline]
    pub fn get(&self, s: usize, c: usize, t: usize) -> Option<f64> {
        let i = self.index(s, c, t);
        self.mask[i].then_some(self.values[i])
    }

    #[inline]
    pub fn is_present(&self, s: usize, c: usize, t: usize) -> bool {
        self.mask[self.index(s, c, t)]
    }

    #[inline]
    pub fn is_imputed(&self, s: usize, c: usize, t: usize) -> bool {
        self.imputed[self.index(s, c, t)]
    }

    /// Store an observed value. Non-finite values are rejected.
    pub fn set(&mut self, s: usize, c: usize, t: usize, value: f64) -> Result<()> {
        self.set_with_provenance(s, c, t, value, false)
    }

    pub(crate) fn set_with_provenance(
        &mut self,
        s: usize,
        c: usize,
        t: usize,
        value: f64,
        imputed: bool,
    ) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite value at ({s}, {c}, {t})"
            )));
        }
        let i = self.index(s, c, t);
        self.values[i] = value;
        self.mask[i] = true;
        self.imputed[i] = imputed;
        Ok(())
    }

    pub fn clear(&mut self, s: usize, c: usize, t: usize) {
        let i = self.index(s, c, t);
        self.mask[i] = false;
        self.imputed[i] = false;
        self.values[i] = 0.0;
    }

    /// Values and mask of one `(station, channel)` series.
    pub fn series(&self, s: usize, c: usize) -> (&[f64], &[bool]) {
        let start = self.index(s, c, 0);
        let end = start + self.n_hours;
        (&self.values[start..end], &self.mask[start..end])
    }

    pub fn imputed_series(&self, s: usize, c: usize) -> &[bool] {
        let start = self.index(s, c, 0);
        &self.imputed[start..start + self.n_hours]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn imputed(&self) -> &[bool] {
        &self.imputed
    }

    pub fn present_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Return a copy with one more channel appended to every station.
    /// `values`, `mask` and `imputed` are laid out `(station x hour)`.
    pub fn with_channel(
        &self,
        channel: Channel,
        values: &[f64],
        mask: &[bool],
        imputed: &[bool],
    ) -> Result<Self> {
        let t_len = self.n_hours;
        let expected = self.n_stations() * t_len;
        if values.len() != expected || mask.len() != expected || imputed.len() != expected {
            return Err(Error::shape(format!(
                "new channel needs {expected} cells, got {}",
                values.len()
            )));
        }
        let mut channels = self.channels.clone();
        channels.push(channel);
        let mut out = StationPanel::empty(self.station_ids.clone(), channels, self.t0, t_len)?;
        let old_c = self.n_channels();
        for s in 0..self.n_stations() {
            for c in 0..old_c {
                let src = self.index(s, c, 0);
                let dst = out.index(s, c, 0);
                out.values[dst..dst + t_len].copy_from_slice(&self.values[src..src + t_len]);
                out.mask[dst..dst + t_len].copy_from_slice(&self.mask[src..src + t_len]);
                out.imputed[dst..dst + t_len].copy_from_slice(&self.imputed[src..src + t_len]);
            }
            let dst = out.index(s, old_c, 0);
            for t in 0..t_len {
                let k = s * t_len + t;
                if mask[k] {
                    if !values[k].is_finite() {
                        return Err(Error::invalid("non-finite value in appended channel"));
                    }
                    out.values[dst + t] = values[k];
                    out.mask[dst + t] = true;
                    out.imputed[dst + t] = imputed[k];
                }
            }
        }
        Ok(out)
    }

    /// Keep only the channels selected by `keep`, in their current order.
    pub fn select_channels(&self, keep: impl Fn(&Channel) -> bool) -> Self {
        let kept: Vec<usize> = (0..self.n_channels())
            .filter(|&c| keep(&self.channels[c]))
            .collect();
        let channels = kept.iter().map(|&c| self.channels[c].clone()).collect();
        let mut out =
            StationPanel::empty(self.station_ids.clone(), channels, self.t0, self.n_hours)
                .expect("subset of a valid panel");
        let t_len = self.n_hours;
        for s in 0..self.n_stations() {
            for (new_c, &old_c) in kept.iter().enumerate() {
                let src = self.index(s, old_c, 0);
                let dst = out.index(s, new_c, 0);
                out.values[dst..dst + t_len].copy_from_slice(&self.values[src..src + t_len]);
                out.mask[dst..dst + t_len].copy_from_slice(&self.mask[src..src + t_len]);
                out.imputed[dst..dst + t_len].copy_from_slice(&self.imputed[src..src + t_len]);
            }
        }
        out
    }

    /// Check the structural invariants. Used by tests and after deserialization.
    pub fn validate(&self) -> Result<()> {
        let len = self.n_stations() * self.n_channels() * self.n_hours;
        if self.values.len() != len || self.mask.len() != len || self.imputed.len() != len {
            return Err(Error::shape("panel buffers do not match dimensions"));
        }
        for i in 0..len {
            if self.mask[i] && !self.values[i].is_finite() {
                return Err(Error::invalid("non-finite value in a present cell"));
            }
            if self.imputed[i] && !self.mask[i] {
                return Err(Error::invalid("imputed flag on an absent cell"));
            }
        }
        Ok(())
    }
}

pub fn floor_to_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zeroing sub-hour fields is always valid")
}

/// Average raw readings into hourly cells.
///
/// Stations are ordered by id. The channel set is the 11 station channels
/// plus any other channel seen in the input. Each cell is the arithmetic
/// mean of the readings in `[hour, hour + 1)`; values within a cell are
/// summed in sorted order, so the result does not depend on input order.
pub fn hourly_aggregate(readings: &[Reading]) -> Result<StationPanel> {
    if readings.is_empty() {
        return Err(Error::NoReadings);
    }
    if let Some(r) = readings.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite reading for {} at {}",
            r.station, r.timestamp
        )));
    }

    let mut stations: Vec<String> = readings.iter().map(|r| r.station.clone()).collect();
    stations.sort();
    stations.dedup();

    let mut channels = Channel::station_channels();
    for r in readings {
        if !channels.contains(&r.channel) {
            channels.push(r.channel.clone());
        }
    }
    channels.sort();

    let t0 = readings
        .iter()
        .map(|r| floor_to_hour(r.timestamp))
        .min()
        .unwrap();
    let t_last = readings
        .iter()
        .map(|r| floor_to_hour(r.timestamp))
        .max()
        .unwrap();
    let n_hours = (t_last - t0).num_hours() as usize + 1;

    let mut panel = StationPanel::empty(stations, channels, t0, n_hours)?;

    let mut keyed: Vec<(usize, f64)> = readings
        .iter()
        .map(|r| {
            let s = panel.station_index(&r.station).unwrap();
            let c = panel.channel_index(&r.channel).unwrap();
            let t = (floor_to_hour(r.timestamp) - t0).num_hours() as usize;
            (panel.index(s, c, t), r.value)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    for group in keyed.chunk_by(|a, b| a.0 == b.0) {
        let sum: f64 = group.iter().map(|(_, v)| v).sum();
        let idx = group[0].0;
        panel.values[idx] = sum / group.len() as f64;
        panel.mask[idx] = true;
    }
    Ok(panel)
}

/// Per-`(station, channel)` normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub station_ids: Vec<String>,
    pub channels: Vec<Channel>,
    /// Indexed `station * n_channels + channel`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormParams {
    fn slot(&self, s: usize, c: usize) -> usize {
        s * self.channels.len() + c
    }

    /// True when the channel had fewer than two distinct present values.
    pub fn is_constant(&self, s: usize, c: usize) -> bool {
        self.std[self.slot(s, c)] == 0.0
    }

    pub fn mean(&self, s: usize, c: usize) -> f64 {
        self.mean[self.slot(s, c)]
    }

    pub fn std(&self, s: usize, c: usize) -> f64 {
        self.std[self.slot(s, c)]
    }

    pub fn apply(&self, s: usize, c: usize, value: f64) -> f64 {
        let k = self.slot(s, c);
        if self.std[k] == 0.0 {
            0.0
        } else {
            (value - self.mean[k]) / self.std[k]
        }
    }

    pub fn invert(&self, s: usize, c: usize, value: f64) -> f64 {
        let k = self.slot(s, c);
        value * self.std[k] + self.mean[k]
    }

    fn check_covers(&self, panel: &StationPanel) -> Result<()> {
        if self.station_ids != panel.station_ids || self.channels != panel.channels {
            return Err(Error::shape(
                "normalization parameters do not cover the panel's stations/channels",
            ));
        }
        Ok(())
    }
}

/// Fit mean and population standard deviation over the present cells in
/// `range`. A series with no present cells gets mean 0, std 0 (constant).
pub fn fit_norm(panel: &StationPanel, range: Range<usize>) -> Result<NormParams> {
    if range.is_empty() || range.end > panel.n_hours {
        return Err(Error::invalid(format!(
            "normalization range {range:?} is empty or outside 0..{}",
            panel.n_hours
        )));
    }
    let n_slots = panel.n_stations() * panel.n_channels();
    let mut mean = Vec::with_capacity(n_slots);
    let mut std = Vec::with_capacity(n_slots);
    for s in 0..panel.n_stations() {
        for c in 0..panel.n_channels() {
            let (values, mask) = panel.series(s, c);
            let present: Vec<f64> = values[range.clone()]
                .iter()
                .zip(&mask[range.clone()])
                .filter_map(|(&v, &m)| m.then_some(v))
                .collect();
            if present.is_empty() {
                mean.push(0.0);
                std.push(0.0);
                continue;
            }
            let n = present.len() as f64;
            let mu = present.iter().sum::<f64>() / n;
            let var = present.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            mean.push(mu);
            // Rounding can leave a tiny positive variance on a constant series.
            let sigma = var.sqrt();
            std.push(if sigma <= 1e-12 * mu.abs().max(1.0) {
                0.0
            } else {
                sigma
            });
        }
    }
    Ok(NormParams {
        station_ids: panel.station_ids.clone(),
        channels: panel.channels.clone(),
        mean,
        std,
    })
}

/// `(v - mean) / std` on present cells; constant series map to 0.0.
pub fn apply_norm(panel: &StationPanel, params: &NormParams) -> Result<StationPanel> {
    params.check_covers(panel)?;
    let mut out = panel.clone();
    transform(&mut out, |s, c, v| params.apply(s, c, v));
    Ok(out)
}

pub fn invert_norm(panel: &StationPanel, params: &NormParams) -> Result<StationPanel> {
    params.check_covers(panel)?;
    let mut out = panel.clone();
    transform(&mut out, |s, c, v| params.invert(s, c, v));
    Ok(out)
}

fn transform(panel: &mut StationPanel, f: impl Fn(usize, usize, f64) -> f64) {
    for s in 0..panel.n_stations() {
        for c in 0..panel.n_channels() {
            let start = panel.index(s, c, 0);
            for i in start..start + panel.n_hours {
                if panel.mask[i] {
                    panel.values[i] = f(s, c, panel.values[i]);
                }
            }
        }
    }
}

/// Hourly image counts for one camera, aligned with a panel's hour axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraHourlyCounts {
    pub camera_id: String,
    pub images_per_hour: Vec<u32>,
}

pub const STATION_CELLS_PER_DAY: u32 = 24;
pub const CAMERA_IMAGES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceKind {
    Station,
    Camera,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub kind: SourceKind,
    pub id: String,
}

/// Per-source, per-calendar-day coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityMatrix {
    pub sources: Vec<Source>,
    pub days: Vec<NaiveDate>,
    /// Present counts, `source * n_days + day`.
    pub present: Vec<u32>,
    pub expected: Vec<u32>,
}

impl AvailabilityMatrix {
    pub fn cell(&self, source: usize, day: usize) -> f64 {
        let k = source * self.days.len() + day;
        coverage(self.present[k] as u64, self.expected[k] as u64)
    }

    /// Coverage of one source over the whole period.
    pub fn overall(&self, source: usize) -> f64 {
        let row = source * self.days.len()..(source + 1) * self.days.len();
        let present: u64 = self.present[row.clone()].iter().map(|&v| v as u64).sum();
        let expected: u64 = self.expected[row].iter().map(|&v| v as u64).sum();
        coverage(present, expected)
    }

    /// Coverage over all sources of one kind.
    pub fn overall_kind(&self, kind: SourceKind) -> f64 {
        let n_days = self.days.len();
        let (mut present, mut expected) = (0u64, 0u64);
        for (r, src) in self.sources.iter().enumerate() {
            if src.kind == kind {
                present += self.present[r * n_days..(r + 1) * n_days]
                    .iter()
                    .map(|&v| v as u64)
                    .sum::<u64>();
                expected += self.expected[r * n_days..(r + 1) * n_days]
                    .iter()
                    .map(|&v| v as u64)
                    .sum::<u64>();
            }
        }
        coverage(present, expected)
    }
}

/// Fraction present, 0.0 when nothing was expected.
pub fn coverage(present: u64, expected: u64) -> f64 {
    if expected == 0 {
        0.0
    } else {
        (present.min(expected)) as f64 / expected as f64
    }
}

/// Daily availability of every station and optional camera.
///
/// A station-hour counts as present when any pollutant channel is present;
/// a station expects 24 such hours per day. A camera expects one image per
/// minute (1440 per day). Days run from the date of the first panel hour to
/// the date of the last, in UTC.
pub fn availability(
    panel: &StationPanel,
    cameras: Option<&[CameraHourlyCounts]>,
) -> AvailabilityMatrix {
    let first_day = panel.t0.date_naive();
    let last_day = panel
        .hour_time(panel.n_hours.saturating_sub(1))
        .date_naive();
    let n_days = (last_day - first_day).num_days() as usize + 1;
    let days: Vec<NaiveDate> = (0..n_days)
        .map(|d| first_day + Duration::days(d as i64))
        .collect();
    let day_of = |t: usize| (panel.hour_time(t).date_naive() - first_day).num_days() as usize;

    let mut sources = Vec::new();
    let mut present = Vec::new();
    let mut expected = Vec::new();
    let pollutants = panel.pollutant_channels();

    for s in 0..panel.n_stations() {
        sources.push(Source {
            kind: SourceKind::Station,
            id: panel.station_ids[s].clone(),
        });
        let mut row = vec![0u32; n_days];
        for t in 0..panel.n_hours {
            if pollutants.iter().any(|&(c, _)| panel.is_present(s, c, t)) {
                row[day_of(t)] += 1;
            }
        }
        present.extend(row);
        expected.extend(std::iter::repeat_n(STATION_CELLS_PER_DAY, n_days));
    }

    for cam in cameras.unwrap_or(&[]) {
        sources.push(Source {
            kind: SourceKind::Camera,
            id: cam.camera_id.clone(),
        });
        let mut row = vec![0u32; n_days];
        for (t, &n) in cam.images_per_hour.iter().enumerate().take(panel.n_hours) {
            row[day_of(t)] += n;
        }
        present.extend(row.into_iter().map(|n| n.min(CAMERA_IMAGES_PER_DAY)));
        expected.extend(std::iter::repeat_n(CAMERA_IMAGES_PER_DAY, n_days));
    }

    AvailabilityMatrix {
        sources,
        days,
        present,
        expected,
    }
}

/// Fraction of absent pollutant cells among `stations` over `hours`.
pub fn gap_fraction(panel: &StationPanel, stations: &[usize], hours: Range<usize>) -> Result<f64> {
    if hours.end > panel.n_hours || stations.iter().any(|&s| s >= panel.n_stations()) {
        return Err(Error::invalid("gap_fraction slice outside the panel"));
    }
    let pollutants = panel.pollutant_channels();
    let total = stations.len() * pollutants.len() * hours.len();
    if total == 0 {
        return Err(Error::EmptySelection("gap_fraction slice"));
    }
    let mut absent = 0usize;
    for &s in stations {
        for &(c, _) in &pollutants {
            let (_, mask) = panel.series(s, c);
            absent += mask[hours.clone()].iter().filter(|&&m| !m).count();
        }
    }
    Ok(absent as f64 / total as f64)
}
