//! End-to-end runs: features, windows, training and the evaluation report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aqi::{station_aqi, AqiSeries, BreakpointTable};
use crate::error::{Error, Result};
use crate::eval::{
    build_report, categorize_stations, chrono_split, EvalCase, EvalReport, RunPredictions,
    StationCategory, DEFAULT_RECENT_CUTOFF_HOURS,
};
use crate::forecast::{
    persistence, predict, train, Checkpoint, EncodedSample, Encoder, History, ModelConfig,
    ModelKind, Network, TrainConfig,
};
use crate::gapfill::{train_imputers, ImputerGrid, ImputerParams};
use crate::ingest::{
    aggregate_vehicle_features, assemble_features, load_camera_map, load_station_csv,
    load_vehicle_csv, CameraMap, VehicleFeatures,
};
use crate::panel::{hourly_aggregate, Channel, StationPanel};
use crate::windowing::{build_windows, FeatureSet, WindowConfig, WindowSample, WindowSet};

/// One (feature set, model) combination, labelled `fs2/lstm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub feature_set: FeatureSet,
    pub model: ModelKind,
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.feature_set, self.model)
    }
}

impl FromStr for RunSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (fs, model) = s
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("run {s:?} is not `feature_set/model`")))?;
        Ok(Self {
            feature_set: fs.parse()?,
            model: model.parse()?,
        })
    }
}

/// Everything a pipeline run depends on. Relative paths are resolved
/// against the directory of the config file. `train.seed` is replaced by
/// `seed` so one number controls initialization and shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub stations: Option<PathBuf>,
    pub vehicles: Option<PathBuf>,
    pub camera_map: Option<PathBuf>,
    /// Station file with complete values, used only as evaluation targets.
    pub truth: Option<PathBuf>,
    pub breakpoints: Option<PathBuf>,
    pub seed: u64,
    pub window: WindowConfig,
    pub imputer: ImputerParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub runs: Vec<RunSpec>,
    pub split_ratio: f64,
    pub recent_cutoff_hours: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let run = |feature_set, model| RunSpec { feature_set, model };
        Self {
            stations: None,
            vehicles: None,
            camera_map: None,
            truth: None,
            breakpoints: None,
            seed: 0,
            window: WindowConfig::default(),
            imputer: ImputerParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            runs: vec![
                run(FeatureSet::Fs1, ModelKind::Persistence),
                run(FeatureSet::Fs1, ModelKind::Lstm),
                run(FeatureSet::Fs2, ModelKind::Lstm),
            ],
            split_ratio: 0.8,
            recent_cutoff_hours: DEFAULT_RECENT_CUTOFF_HOURS,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Load a config and make its relative paths absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.stations,
            &mut cfg.vehicles,
            &mut cfg.camera_map,
            &mut cfg.truth,
            &mut cfg.breakpoints,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.train.validate()?;
        if self.runs.is_empty() {
            return Err(Error::invalid("no runs configured"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid("split_ratio must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// SHA-256 of the config's canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub observed: StationPanel,
    /// Complete values on the observed panel's axis, if known.
    pub truth: Option<StationPanel>,
    pub vehicles: Option<VehicleFeatures>,
    pub camera_map: Option<CameraMap>,
    pub table: BreakpointTable,
}

/// Copy `src` onto the stations, channels and hours of `like`; cells
/// outside `src` are absent.
pub fn reindex(src: &StationPanel, like: &StationPanel) -> Result<StationPanel> {
    let mut out = StationPanel::empty(
        like.station_ids().to_vec(),
        like.channels().to_vec(),
        like.t0(),
        like.n_hours(),
    )?;
    for (s, id) in like.station_ids().iter().enumerate() {
        let Some(ss) = src.station_index(id) else {
            continue;
        };
        for (c, ch) in like.channels().iter().enumerate() {
            let Some(sc) = src.channel_index(ch) else {
                continue;
            };
            for t in 0..like.n_hours() {
                let Some(st) = src.hour_index(like.hour_time(t)) else {
                    continue;
                };
                if let Some(v) = src.get(ss, sc, st) {
                    out.set_with_provenance(s, c, t, v, src.is_imputed(ss, sc, st))?;
                }
            }
        }
    }
    Ok(out)
}

pub fn load_panel(path: &Path) -> Result<StationPanel> {
    let loaded = load_station_csv(path)?;
    hourly_aggregate(&loaded.items).map_err(|e| match e {
        Error::NoReadings => Error::Parse {
            path: path.to_path_buf(),
            message: "no readings".into(),
        },
        e => e,
    })
}

impl PipelineData {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let stations = cfg
            .stations
            .as_deref()
            .ok_or_else(|| Error::invalid("no stations file configured"))?;
        let observed = load_panel(stations)?;
        let truth = match &cfg.truth {
            Some(p) => Some(reindex(&load_panel(p)?, &observed)?),
            None => None,
        };
        let vehicles = match &cfg.vehicles {
            Some(p) => Some(aggregate_vehicle_features(
                &load_vehicle_csv(p)?.items,
                &observed,
            )),
            None => None,
        };
        let camera_map = cfg.camera_map.as_deref().map(load_camera_map).transpose()?;
        let table = match &cfg.breakpoints {
            Some(p) => BreakpointTable::load(p)?,
            None => BreakpointTable::default_epa(),
        };
        Ok(Self {
            observed,
            truth,
            vehicles,
            camera_map,
            table,
        })
    }

    /// Model panel for `feature_set`.
    pub fn features(
        &self,
        feature_set: FeatureSet,
        grid: Option<&ImputerGrid>,
    ) -> Result<StationPanel> {
        assemble_features(
            &self.observed,
            grid,
            self.vehicles.as_ref(),
            self.camera_map.as_ref(),
            feature_set,
            &self.table,
        )
    }

    /// Imputer grid trained on the observed sensor channels.
    pub fn train_grid(&self, params: &ImputerParams) -> Result<ImputerGrid> {
        let sensors = self
            .observed
            .select_channels(|c| matches!(c, Channel::Pollutant(_) | Channel::Env(_)));
        train_imputers(&sensors, params)
    }
}

/// Windows for one feature set, split chronologically.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: StationPanel,
    pub targets: AqiSeries,
    pub train: WindowSet,
    pub validation: WindowSet,
}

pub fn prepare(
    data: &PipelineData,
    cfg: &PipelineConfig,
    feature_set: FeatureSet,
    grid: Option<&ImputerGrid>,
) -> Result<Prepared> {
    let features = data.features(feature_set, grid)?;
    let targets = station_aqi(&data.observed, &data.table)?;
    let windows = build_windows(&features, &targets, &cfg.window, feature_set)?;
    let (train_w, val_w) = chrono_split(&windows.samples, cfg.split_ratio)?;
    let (train_w, val_w) = (train_w.to_vec(), val_w.to_vec());
    Ok(Prepared {
        train: windows.with_samples(train_w),
        validation: windows.with_samples(val_w),
        features,
        targets,
    })
}

/// A fitted forecaster for one run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub network: Option<Network>,
    pub history: Option<History>,
}

pub fn fit_model(prepared: &Prepared, cfg: &PipelineConfig, spec: RunSpec) -> Result<Trained> {
    let train_cfg = cfg.train_config();
    let mut checkpoint = Checkpoint {
        kind: spec.model,
        feature_set: spec.feature_set,
        model: cfg.model.clone(),
        window: cfg.window.clone(),
        train: train_cfg.clone(),
        seed: cfg.seed,
        encoder: None,
        params: Vec::new(),
    };
    if spec.model == ModelKind::Persistence {
        return Ok(Trained {
            checkpoint,
            network: None,
            history: None,
        });
    }
    let fit_end = prepared
        .train
        .samples
        .last()
        .map(|s| s.t_end)
        .ok_or(Error::EmptySelection("no training windows"))?;
    let encoder = Encoder::fit(
        &prepared.features,
        &prepared.targets,
        0..fit_end,
        cfg.window.window_hours,
        cfg.window.horizons_hours.len(),
    )?;
    let encode = |set: &WindowSet| -> Result<Vec<EncodedSample>> {
        set.samples.iter().map(|s| encoder.encode(s)).collect()
    };
    let train_set = encode(&prepared.train)?;
    let val_set = encode(&prepared.validation)?;
    let net = Network::for_encoder(spec.model, &cfg.model, &encoder, cfg.seed)?;
    let (net, history) = train(net, &train_set, &val_set, &train_cfg)?;
    log::info!(
        "{spec}: {} epochs, best epoch {} (val rmse {:.4})",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_rmse
    );
    checkpoint.params = net.params().to_vec();
    checkpoint.encoder = Some(encoder);
    Ok(Trained {
        checkpoint,
        network: Some(net),
        history: Some(history),
    })
}

/// Forecasts for the validation windows, scored against `eval_targets`.
pub fn evaluate(
    prepared: &Prepared,
    trained: &Trained,
    data: &PipelineData,
    eval_targets: &AqiSeries,
    cfg: &PipelineConfig,
    label: String,
) -> Result<RunPredictions> {
    let val = &prepared.validation;
    let mut cases = Vec::with_capacity(val.samples.len());
    for sample in &val.samples {
        let categories = categorize_stations(&data.observed, sample.t_end, cfg.recent_cutoff_hours);
        let sample = mask_stale_stations(sample, &categories, val.n_channels() * val.window_hours);
        let forecast = match (&trained.network, &trained.checkpoint.encoder) {
            (Some(net), Some(enc)) => predict(net, enc, &sample)?,
            _ => persistence(val, &sample)?,
        };
        let mut targets = Vec::with_capacity(forecast.values.len());
        let mut target_mask = Vec::with_capacity(forecast.values.len());
        for s in 0..val.n_stations() {
            for &h in &val.horizons_hours {
                let v = eval_targets.get(s, sample.t_end + h);
                targets.push(v.unwrap_or(0.0));
                target_mask.push(v.is_some());
            }
        }
        cases.push(EvalCase {
            forecast,
            targets,
            target_mask,
            categories,
        });
    }
    Ok(RunPredictions { label, cases })
}

/// Hide every input cell of the stations without recent data, so their
/// forecasts come from the other stations only.
fn mask_stale_stations(
    sample: &WindowSample,
    categories: &[StationCategory],
    per_station: usize,
) -> WindowSample {
    let mut out = sample.clone();
    for (s, cat) in categories.iter().enumerate() {
        if *cat == StationCategory::NoRecentData {
            let cells = s * per_station..(s + 1) * per_station;
            out.inputs[cells.clone()].fill(0.0);
            out.input_mask[cells.clone()].fill(false);
            out.observed[cells].fill(false);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub n_train: usize,
    pub n_validation: usize,
    pub trained: Trained,
    pub predictions: RunPredictions,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub runs: Vec<RunOutcome>,
}

/// Train and evaluate every configured run. The imputer grid is trained
/// once, on the whole observed panel, when a run needs it.
pub fn run_pipeline(data: &PipelineData, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let grid = if cfg.runs.iter().any(|r| r.feature_set != FeatureSet::Fs1) {
        Some(data.train_grid(&cfg.imputer)?)
    } else {
        None
    };
    let eval_targets = match &data.truth {
        Some(truth) => station_aqi(truth, &data.table)?,
        None => station_aqi(&data.observed, &data.table)?,
    };
    let mut prepared: BTreeMap<FeatureSet, Prepared> = BTreeMap::new();
    let mut runs = Vec::with_capacity(cfg.runs.len());
    for &spec in &cfg.runs {
        if !prepared.contains_key(&spec.feature_set) {
            let p = prepare(data, cfg, spec.feature_set, grid.as_ref())?;
            log::info!(
                "{}: {} training / {} validation windows",
                spec.feature_set,
                p.train.samples.len(),
                p.validation.samples.len()
            );
            prepared.insert(spec.feature_set, p);
        }
        let p = &prepared[&spec.feature_set];
        let trained = fit_model(p, cfg, spec)?;
        let predictions = evaluate(p, &trained, data, &eval_targets, cfg, spec.to_string())?;
        runs.push(RunOutcome {
            spec,
            n_train: p.train.samples.len(),
            n_validation: p.validation.samples.len(),
            trained,
            predictions,
        });
    }
    let all: Vec<RunPredictions> = runs.iter().map(|r| r.predictions.clone()).collect();
    let report = build_report(&all, &cfg.window.horizons_hours)?;
    Ok(PipelineOutput { report, runs })
}

/// Reproducibility record written by every CLI command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            config_sha256: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_spec_round_trip() {
        let spec: RunSpec = "fs2/lstm".parse().unwrap();
        assert_eq!(spec.to_string(), "fs2/lstm");
        assert!("fs2".parse::<RunSpec>().is_err());
        assert!("fs4/lstm".parse::<RunSpec>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(PipelineConfig::from_json(r#"{"seed": 3}"#).is_ok());
        assert!(PipelineConfig::from_json(r#"{"sede": 3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"window": {"window_hour": 3}}"#).is_err());
    }

    #[test]
    fn config_digest_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            seed: 1,
            ..PipelineConfig::default()
        };
        assert_eq!(a.digest().unwrap(), a.clone().digest().unwrap());
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn default_config_serializes_and_parses_back() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn stale_stations_lose_all_inputs() {
        // 2 stations x 2 channels x 3 hours.
        let sample = WindowSample {
            t_end: 3,
            inputs: (1..=12).map(f64::from).collect(),
            input_mask: vec![true; 12],
            observed: vec![true; 12],
            targets: vec![],
            target_mask: vec![],
            imputed_fraction: 0.0,
        };
        let cats = [StationCategory::NoRecentData, StationCategory::RecentData];
        let out = mask_stale_stations(&sample, &cats, 6);
        assert!(out.input_mask[..6].iter().all(|&m| !m));
        assert!(out.observed[..6].iter().all(|&m| !m));
        assert_eq!(&out.inputs[..6], &[0.0; 6]);
        assert_eq!(out.inputs[6..], sample.inputs[6..]);
        assert!(out.input_mask[6..].iter().all(|&m| m));
    }
}
