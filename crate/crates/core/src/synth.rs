//! Seeded synthetic station panels with diurnal cycles, a shared regional
//! signal and block outages.
//!
//! For station `s`, pollutant `p` and hour `t`:
//!
//! ```text
//! x[s,p,t] = max(0, base_p + amp_p * sin(2 pi t / 24 + phase_s)
//!                   + rho * amp_p * z_p(t) + noise_std * amp_p * e[s,p,t])
//! ```
//!
//! `z_p` is a stationary AR(1) process with unit variance,
//! `z_p(0) = n0`, `z_p(t) = phi * z_p(t-1) + sqrt(1 - phi^2) * n_t`, shared by
//! all stations. All randomness comes from [`SplitMix64`] streams derived
//! from the seed with fixed stream labels (see the `STREAM_*` constants),
//! consumed in `station`, `channel`, `hour` order.

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::VehicleCountRecord;
use crate::panel::{Channel, EnvChannel, Pollutant, StationPanel, VehicleClass};
use crate::rng::SplitMix64;

const STREAM_PHASE: u64 = 1;
const STREAM_SHARED: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_ENV: u64 = 4;
const STREAM_OUTAGE: u64 = 5;
const STREAM_CAMERA: u64 = 6;

/// Mean detections per image used for synthetic vehicle counts.
pub const DEFAULT_VEHICLE_MEANS: [f64; 4] = [2.58, 3.90, 0.16, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollutantProfile {
    pub pollutant: Pollutant,
    pub base: f64,
    pub amplitude: f64,
}

/// An explicit outage: every channel of `station` is missing for
/// `duration_hours` hours from `start_hour`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageBlock {
    pub station: usize,
    pub start_hour: usize,
    pub duration_hours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutageSpec {
    pub blocks: Vec<OutageBlock>,
    /// Long-run fraction of hours each eligible station is offline.
    pub rate: f64,
    /// Mean length of a random outage block.
    pub mean_hours: f64,
    /// Stations subject to random outages; `None` means all.
    pub stations: Option<Vec<usize>>,
}

impl Default for OutageSpec {
    fn default() -> Self {
        Self {
            blocks: Vec::new(),
            rate: 0.0,
            mean_hours: 48.0,
            stations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub n_hours: usize,
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub pollutants: Vec<PollutantProfile>,
    /// Weight of the shared regional signal, in [0, 1].
    pub rho: f64,
    /// Hourly AR(1) coefficient of the shared signal.
    pub ar_coeff: f64,
    /// Noise standard deviation relative to each pollutant's amplitude.
    pub noise_std: f64,
    /// Station phases are drawn uniformly from `[-phase_spread, phase_spread]` radians.
    pub phase_spread: f64,
    pub outages: OutageSpec,
    pub n_cameras: usize,
    pub images_per_hour: f64,
    pub camera_outage_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stations: 10,
            n_hours: 2000,
            seed: 42,
            start: Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap(),
            pollutants: default_profiles(),
            rho: 0.9,
            ar_coeff: 0.97,
            noise_std: 0.2,
            phase_spread: 0.5,
            outages: OutageSpec::default(),
            n_cameras: 0,
            images_per_hour: 4.0,
            camera_outage_rate: 0.0,
        }
    }
}

/// Levels in the default breakpoint table's units; PM2.5 alone crosses
/// the 12.0 and 35.4 band edges.
pub fn default_profiles() -> Vec<PollutantProfile> {
    use Pollutant::*;
    [
        (No2, 40.0, 20.0),
        (Co, 2.0, 1.0),
        (So2, 15.0, 8.0),
        (O3, 0.045, 0.02),
        (Pm1_0, 18.0, 8.0),
        (Pm2_5, 30.0, 14.0),
        (Pm10, 50.0, 25.0),
    ]
    .into_iter()
    .map(|(pollutant, base, amplitude)| PollutantProfile {
        pollutant,
        base,
        amplitude,
    })
    .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations == 0 || self.n_hours == 0 {
            return Err(Error::invalid("synthetic panel needs stations and hours"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid("rho must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return Err(Error::invalid("ar_coeff must be in [0, 1)"));
        }
        if self.noise_std < 0.0 || self.phase_spread < 0.0 {
            return Err(Error::invalid(
                "noise_std and phase_spread must be non-negative",
            ));
        }
        if self.start != crate::panel::floor_to_hour(self.start) {
            return Err(Error::invalid("start must be hour-aligned"));
        }
        validate_outages(&self.outages, self.n_stations, self.n_hours)
    }

    pub fn station_ids(&self) -> Vec<String> {
        let width = self.n_stations.to_string().len().max(2);
        (0..self.n_stations)
            .map(|s| format!("st{:0width$}", s + 1))
            .collect()
    }

    pub fn camera_ids(&self) -> Vec<String> {
        let width = self.n_cameras.to_string().len().max(2);
        (0..self.n_cameras)
            .map(|c| format!("cam{:0width$}", c + 1))
            .collect()
    }
}

fn validate_outages(spec: &OutageSpec, n_stations: usize, n_hours: usize) -> Result<()> {
    for b in &spec.blocks {
        if b.duration_hours == 0 {
            return Err(Error::invalid("outage duration must be at least one hour"));
        }
        if b.station >= n_stations || b.start_hour + b.duration_hours > n_hours {
            return Err(Error::invalid(format!(
                "outage block {b:?} outside {n_stations} stations x {n_hours} hours"
            )));
        }
    }
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::invalid("outage rate must be in [0, 1]"));
    }
    if spec.rate > 0.0 && !(spec.mean_hours >= 1.0) {
        return Err(Error::invalid("outage mean_hours must be at least 1"));
    }
    if let Some(stations) = &spec.stations {
        if stations.iter().any(|&s| s >= n_stations) {
            return Err(Error::invalid("outage station index out of range"));
        }
    }
    Ok(())
}

/// Ground truth and observed panels (with outages masked).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub truth: StationPanel,
    pub observed: StationPanel,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let (n_s, n_t) = (cfg.n_stations, cfg.n_hours);
    let mut truth = StationPanel::empty(
        cfg.station_ids(),
        Channel::station_channels(),
        cfg.start,
        n_t,
    )?;
    let omega = 2.0 * std::f64::consts::PI / 24.0;

    let mut rng = SplitMix64::derive(cfg.seed, STREAM_PHASE);
    let phases: Vec<f64> = (0..n_s)
        .map(|_| rng.uniform(-cfg.phase_spread, cfg.phase_spread))
        .collect();

    let mut rng = SplitMix64::derive(cfg.seed, STREAM_SHARED);
    let innovation = (1.0 - cfg.ar_coeff * cfg.ar_coeff).sqrt();
    let shared: Vec<Vec<f64>> = cfg
        .pollutants
        .iter()
        .map(|_| {
            let mut z = rng.normal();
            (0..n_t)
                .map(|t| {
                    if t > 0 {
                        z = cfg.ar_coeff * z + innovation * rng.normal();
                    }
                    z
                })
                .collect()
        })
        .collect();

    let mut noise = SplitMix64::derive(cfg.seed, STREAM_NOISE);
    for s in 0..n_s {
        for (k, prof) in cfg.pollutants.iter().enumerate() {
            let c = truth
                .channel_index(&Channel::Pollutant(prof.pollutant))
                .expect("station channels include every pollutant");
            for t in 0..n_t {
                let diurnal = prof.amplitude * (omega * t as f64 + phases[s]).sin();
                let regional = cfg.rho * prof.amplitude * shared[k][t];
                let eps = cfg.noise_std * prof.amplitude * noise.normal();
                truth.set(s, c, t, (prof.base + diurnal + regional + eps).max(0.0))?;
            }
        }
    }

    let mut env = SplitMix64::derive(cfg.seed, STREAM_ENV);
    for s in 0..n_s {
        for e in EnvChannel::ALL {
            let c = truth.channel_index(&Channel::Env(e)).unwrap();
            for t in 0..n_t {
                let day = (omega * t as f64 + phases[s]).sin();
                let value = match e {
                    EnvChannel::Temperature => 18.0 + 5.0 * day + 0.5 * env.normal(),
                    EnvChannel::Humidity => {
                        (75.0 - 12.0 * day + 2.0 * env.normal()).clamp(0.0, 100.0)
                    }
                    EnvChannel::Uv => (8.0 * day).max(0.0) + 0.1 * env.next_f64(),
                    EnvChannel::Rainfall => {
                        let u = env.next_f64();
                        if u < 0.08 {
                            -2.0 * (1.0 - env.next_f64()).ln()
                        } else {
                            0.0
                        }
                    }
                };
                truth.set(s, c, t, value)?;
            }
        }
    }

    let observed = inject_outages(&truth, &cfg.outages, cfg.seed)?;
    Ok(SynthOutput { truth, observed })
}

/// Mask listed blocks plus random outages. Random outages follow a two-state
/// chain per station whose stationary offline share is `rate` and whose mean
/// offline run is `mean_hours`. Cells are only ever masked, never revealed.
pub fn inject_outages(panel: &StationPanel, spec: &OutageSpec, seed: u64) -> Result<StationPanel> {
    validate_outages(spec, panel.n_stations(), panel.n_hours())?;
    let mut out = panel.clone();
    let offline = |out: &mut StationPanel, s: usize, t: usize| {
        for c in 0..out.n_channels() {
            out.clear(s, c, t);
        }
    };
    for b in &spec.blocks {
        for t in b.start_hour..b.start_hour + b.duration_hours {
            offline(&mut out, b.station, t);
        }
    }
    if spec.rate > 0.0 {
        let stations: Vec<usize> = spec
            .stations
            .clone()
            .unwrap_or_else(|| (0..panel.n_stations()).collect());
        let recover = 1.0 / spec.mean_hours;
        let fail = if spec.rate >= 1.0 {
            1.0
        } else {
            (spec.rate * recover / (1.0 - spec.rate)).min(1.0)
        };
        for s in stations {
            let mut rng =
                SplitMix64::derive(seed, STREAM_OUTAGE.wrapping_mul(1_000_003) + s as u64);
            let mut down = rng.bernoulli(spec.rate);
            for t in 0..panel.n_hours() {
                if t > 0 {
                    down = if down {
                        spec.rate >= 1.0 || !rng.bernoulli(recover)
                    } else {
                        rng.bernoulli(fail)
                    };
                }
                if down {
                    offline(&mut out, s, t);
                }
            }
        }
    }
    Ok(out)
}

/// Per-image vehicle detections for `cfg.n_cameras` cameras, independent of
/// the pollution signal. Image times are spread evenly inside each hour.
pub fn generate_vehicles(cfg: &SynthConfig) -> Result<Vec<VehicleCountRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for (k, camera) in cfg.camera_ids().into_iter().enumerate() {
        let mut rng =
            SplitMix64::derive(cfg.seed, STREAM_CAMERA.wrapping_mul(1_000_003) + k as u64);
        for t in 0..cfg.n_hours {
            if rng.bernoulli(cfg.camera_outage_rate) {
                continue;
            }
            let n = rng.poisson(cfg.images_per_hour);
            for i in 0..n {
                let offset = Duration::seconds((3600 * i as i64) / n as i64);
                let mut counts = [0u32; 4];
                for (j, mean) in DEFAULT_VEHICLE_MEANS.iter().enumerate() {
                    counts[j] = rng.poisson(*mean);
                }
                records.push(VehicleCountRecord {
                    timestamp: cfg.start + Duration::hours(t as i64) + offset,
                    camera_id: camera.clone(),
                    counts,
                });
            }
        }
    }
    debug_assert_eq!(VehicleClass::ALL.len(), DEFAULT_VEHICLE_MEANS.len());
    Ok(records)
}
