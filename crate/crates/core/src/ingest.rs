//! CSV ingestion and feature-set assembly.
//!
//! Station file (wide, one row per reading time and station; empty = missing):
//!
//! ```text
//! timestamp,station_id,no2,co,so2,o3,pm1_0,pm2_5,pm10,temperature,humidity,uv,rainfall
//! ```
//!
//! Vehicle file (one row per processed image):
//!
//! ```text
//! timestamp,camera_id,cars,motorcycles,buses,trucks
//! ```
//!
//! Timestamps are ISO-8601. Offsets are converted to UTC; timestamps
//! without an offset are taken as UTC. Numbers use `.` as the decimal
//! separator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::aqi::{with_aqi_channel, BreakpointTable};
use crate::error::{Error, Result};
use crate::gapfill::{impute, ImputerGrid};
use crate::panel::{CameraHourlyCounts, Channel, Reading, StationPanel, VehicleClass};
use crate::windowing::FeatureSet;

pub const STATION_HEADER: [&str; 13] = [
    "timestamp",
    "station_id",
    "no2",
    "co",
    "so2",
    "o3",
    "pm1_0",
    "pm2_5",
    "pm10",
    "temperature",
    "humidity",
    "uv",
    "rainfall",
];

pub const VEHICLE_HEADER: [&str; 6] = [
    "timestamp",
    "camera_id",
    "cars",
    "motorcycles",
    "buses",
    "trucks",
];

/// Detections in one CCTV image, in [`VehicleClass::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleCountRecord {
    pub timestamp: DateTime<Utc>,
    pub camera_id: String,
    pub counts: [u32; 4],
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub errors: Vec<RowError>,
}

pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Some(ts.with_timezone(&Utc));
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
    .map(|naive| naive.and_utc())
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn check_header(found: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_station_csv(path: impl AsRef<Path>) -> Result<Loaded<Reading>> {
    let path = path.as_ref();
    parse_station_csv(open(path)?, path)
}

/// Parse the wide station format. A bad header is fatal; bad rows are
/// skipped and reported with their line numbers.
pub fn parse_station_csv<R: Read>(reader: R, label: &Path) -> Result<Loaded<Reading>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: label.to_path_buf(),
        message: e.to_string(),
    })?;
    check_header(header, &STATION_HEADER, label)?;
    let channels = Channel::station_channels();

    let mut items = Vec::new();
    let mut errors = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match parse_station_row(&record, &channels) {
            Ok(rows) => items.extend(rows),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    if items.is_empty() && errors.is_empty() {
        log::warn!("{}: no data rows", label.display());
    }
    for e in &errors {
        log::warn!("{}:{}: skipped row: {}", label.display(), e.line, e.message);
    }
    Ok(Loaded { items, errors })
}

fn parse_station_row(
    record: &csv::StringRecord,
    channels: &[Channel],
) -> std::result::Result<Vec<Reading>, String> {
    if record.len() != STATION_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            STATION_HEADER.len(),
            record.len()
        ));
    }
    let timestamp =
        parse_timestamp(&record[0]).ok_or_else(|| format!("bad timestamp {:?}", &record[0]))?;
    let station = record[1].trim();
    if station.is_empty() {
        return Err("empty station_id".into());
    }
    let mut out = Vec::new();
    for (i, channel) in channels.iter().enumerate() {
        let field = record[i + 2].trim();
        if field.is_empty() {
            continue;
        }
        let value: f64 = field
            .parse()
            .map_err(|_| format!("bad number {field:?} in column {}", STATION_HEADER[i + 2]))?;
        if !value.is_finite() {
            return Err(format!(
                "non-finite value in column {}",
                STATION_HEADER[i + 2]
            ));
        }
        out.push(Reading {
            timestamp,
            station: station.to_string(),
            channel: channel.clone(),
            value,
        });
    }
    Ok(out)
}

/// Write the station channels of a panel as hourly rows. Hours where a
/// station has no present station channel are omitted.
pub fn write_station_csv<W: Write>(panel: &StationPanel, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(STATION_HEADER)?;
    let cols: Vec<Option<usize>> = Channel::station_channels()
        .iter()
        .map(|c| panel.channel_index(c))
        .collect();
    for t in 0..panel.n_hours() {
        for s in 0..panel.n_stations() {
            let fields: Vec<String> = cols
                .iter()
                .map(|c| {
                    c.and_then(|c| panel.get(s, c, t))
                        .map(|v| v.to_string())
                        .unwrap_or_default()
                })
                .collect();
            if fields.iter().all(String::is_empty) {
                continue;
            }
            let mut row = vec![
                format_timestamp(panel.hour_time(t)),
                panel.station_ids()[s].clone(),
            ];
            row.extend(fields);
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<station csv>", e))?;
    Ok(())
}

pub fn save_station_csv(panel: &StationPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_station_csv(panel, std::io::BufWriter::new(file))
}

pub fn load_vehicle_csv(path: impl AsRef<Path>) -> Result<Loaded<VehicleCountRecord>> {
    let path = path.as_ref();
    parse_vehicle_csv(open(path)?, path)
}

pub fn parse_vehicle_csv<R: Read>(reader: R, label: &Path) -> Result<Loaded<VehicleCountRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: label.to_path_buf(),
        message: e.to_string(),
    })?;
    check_header(header, &VEHICLE_HEADER, label)?;
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let parsed = (|| {
            if record.len() != VEHICLE_HEADER.len() {
                return Err(format!("expected 6 fields, found {}", record.len()));
            }
            let timestamp = parse_timestamp(&record[0])
                .ok_or_else(|| format!("bad timestamp {:?}", &record[0]))?;
            let mut counts = [0u32; 4];
            for (i, n) in counts.iter_mut().enumerate() {
                *n = record[i + 2]
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad count {:?}", &record[i + 2]))?;
            }
            Ok(VehicleCountRecord {
                timestamp,
                camera_id: record[1].trim().to_string(),
                counts,
            })
        })();
        match parsed {
            Ok(r) => items.push(r),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    for e in &errors {
        log::warn!("{}:{}: skipped row: {}", label.display(), e.line, e.message);
    }
    Ok(Loaded { items, errors })
}

pub fn write_vehicle_csv<W: Write>(records: &[VehicleCountRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(VEHICLE_HEADER)?;
    for r in records {
        let mut row = vec![format_timestamp(r.timestamp), r.camera_id.clone()];
        row.extend(r.counts.iter().map(u32::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<vehicle csv>", e))?;
    Ok(())
}

/// Hourly mean detections per camera and class on a panel's time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleFeatures {
    pub camera_ids: Vec<String>,
    pub n_hours: usize,
    /// `(camera x class x hour)` mean counts per image.
    pub means: Vec<f64>,
    /// `(camera x hour)` number of images.
    pub images: Vec<u32>,
}

impl VehicleFeatures {
    pub fn mean(&self, camera: usize, class: usize, t: usize) -> Option<f64> {
        (self.images[camera * self.n_hours + t] > 0)
            .then(|| self.means[(camera * 4 + class) * self.n_hours + t])
    }

    pub fn camera_counts(&self) -> Vec<CameraHourlyCounts> {
        self.camera_ids
            .iter()
            .enumerate()
            .map(|(k, id)| CameraHourlyCounts {
                camera_id: id.clone(),
                images_per_hour: self.images[k * self.n_hours..(k + 1) * self.n_hours].to_vec(),
            })
            .collect()
    }
}

/// Average per-image counts into hourly cells aligned with `panel`.
/// Records outside the panel's hours are ignored; hours without images are
/// absent.
pub fn aggregate_vehicle_features(
    records: &[VehicleCountRecord],
    panel: &StationPanel,
) -> VehicleFeatures {
    let mut camera_ids: Vec<String> = records.iter().map(|r| r.camera_id.clone()).collect();
    camera_ids.sort();
    camera_ids.dedup();
    let n_t = panel.n_hours();
    let mut sums = vec![0u64; camera_ids.len() * 4 * n_t];
    let mut images = vec![0u32; camera_ids.len() * n_t];
    for r in records {
        let Some(t) = panel.hour_index(r.timestamp) else {
            continue;
        };
        let k = camera_ids.binary_search(&r.camera_id).unwrap();
        images[k * n_t + t] += 1;
        for (class, &n) in r.counts.iter().enumerate() {
            sums[(k * 4 + class) * n_t + t] += n as u64;
        }
    }
    let means = sums
        .iter()
        .enumerate()
        .map(|(i, &sum)| {
            let (k, t) = (i / (4 * n_t), i % n_t);
            let n = images[k * n_t + t];
            if n == 0 {
                0.0
            } else {
                sum as f64 / n as f64
            }
        })
        .collect();
    VehicleFeatures {
        camera_ids,
        n_hours: n_t,
        means,
        images,
    }
}

/// Explicit station -> cameras association for vehicle channels.
pub type CameraMap = BTreeMap<String, Vec<String>>;

/// Read `station_id,camera_id` rows.
pub fn load_camera_map(path: impl AsRef<Path>) -> Result<CameraMap> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_reader(open(path)?);
    check_header(rdr.headers()?, &["station_id", "camera_id"], path)?;
    let mut map = CameraMap::new();
    for record in rdr.records() {
        let record = record?;
        map.entry(record[0].trim().to_string())
            .or_default()
            .push(record[1].trim().to_string());
    }
    Ok(map)
}

/// Build the model panel for a feature set.
///
/// FS1 is the raw panel, FS2 the imputed panel and FS3 the imputed panel
/// with four vehicle channels per camera. The AQI channel is appended in
/// every case. Without a camera map every station sees every camera;
/// with one, unmapped cameras are absent for that station.
pub fn assemble_features(
    panel: &StationPanel,
    grid: Option<&ImputerGrid>,
    vehicles: Option<&VehicleFeatures>,
    camera_map: Option<&CameraMap>,
    feature_set: FeatureSet,
    table: &BreakpointTable,
) -> Result<StationPanel> {
    let base = panel.select_channels(|c| matches!(c, Channel::Pollutant(_) | Channel::Env(_)));
    let mut out = match feature_set {
        FeatureSet::Fs1 => base,
        FeatureSet::Fs2 | FeatureSet::Fs3 => {
            let grid = grid.ok_or_else(|| {
                Error::invalid(format!("{feature_set} needs a trained imputer grid"))
            })?;
            impute(&base, grid)?.0
        }
    };
    out = with_aqi_channel(&out, table)?;

    if feature_set == FeatureSet::Fs3 {
        let vehicles = vehicles.ok_or_else(|| Error::invalid("fs3 needs vehicle count data"))?;
        if vehicles.n_hours != out.n_hours() {
            return Err(Error::shape(
                "vehicle features are not on the panel's time axis",
            ));
        }
        let n_s = out.n_stations();
        let n_t = out.n_hours();
        for (k, camera) in vehicles.camera_ids.iter().enumerate() {
            let visible: Vec<bool> = out
                .station_ids()
                .iter()
                .map(|sid| {
                    camera_map.is_none_or(|m| m.get(sid).is_some_and(|cams| cams.contains(camera)))
                })
                .collect();
            for (class_idx, class) in VehicleClass::ALL.into_iter().enumerate() {
                let mut values = vec![0.0; n_s * n_t];
                let mut mask = vec![false; n_s * n_t];
                for s in (0..n_s).filter(|&s| visible[s]) {
                    for t in 0..n_t {
                        if let Some(v) = vehicles.mean(k, class_idx, t) {
                            values[s * n_t + t] = v;
                            mask[s * n_t + t] = true;
                        }
                    }
                }
                out = out.with_channel(
                    Channel::Vehicle {
                        camera: camera.clone(),
                        class,
                    },
                    &values,
                    &mask,
                    &vec![false; n_s * n_t],
                )?;
            }
        }
    }
    Ok(out)
}
