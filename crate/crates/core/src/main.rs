use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gapcast::aqi::{display_round, station_aqi};
use gapcast::eval::horizon_label;
use gapcast::forecast::{persistence, predict, ModelKind};
use gapcast::gapfill::{impute, ImputerGrid};
use gapcast::ingest::{format_timestamp, save_station_csv, write_vehicle_csv};
use gapcast::panel::{availability, gap_fraction, Channel, SourceKind};
use gapcast::pipeline::{
    fit_model, prepare, run_pipeline, Manifest, PipelineConfig, PipelineData, RunSpec,
};
use gapcast::synth::{generate, generate_vehicles, SynthConfig};
use gapcast::windowing::{
    build_windows, enumerate_candidates, input_window, write_window_dump, FeatureSet, GapRule,
};
use gapcast::Error;

#[derive(Parser)]
#[command(
    name = "gapcast",
    version,
    about = "Gap-filled multi-horizon AQI forecasting"
)]
struct Cli {
    /// Where to write the run manifest [default: next to the main output,
    /// or ./gapcast-manifest.json].
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Inputs {
    /// Pipeline config (JSON); flags below override its paths.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Station readings CSV.
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Vehicle counts CSV (needed for fs3).
    #[arg(long)]
    vehicles: Option<PathBuf>,
    /// `station_id,camera_id` CSV restricting which cameras feed which station.
    #[arg(long)]
    camera_map: Option<PathBuf>,
    /// Breakpoint table CSV [default: built-in EPA table].
    #[arg(long)]
    breakpoints: Option<PathBuf>,
    /// Window gap rule: `or` keeps a window when either condition holds.
    #[arg(long, value_parser = parse_gap_rule)]
    gap_rule: Option<GapRule>,
    /// Seed for model initialization and shuffling; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Availability and gap statistics.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        /// Write per-day coverage as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill station gaps with the spatial imputers.
    Impute {
        #[command(flatten)]
        inputs: Inputs,
        /// Use a saved imputer grid instead of training one.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Save the trained grid.
        #[arg(long)]
        grid_out: Option<PathBuf>,
        /// Imputed station CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build model windows and report how many pass the filter.
    Windows {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_feature_set, default_value = "fs1")]
        feature_set: FeatureSet,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Audit CSV with one row per candidate window.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Train one forecaster and save a checkpoint.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
        #[arg(long, value_parser = parse_feature_set, default_value = "fs1")]
        feature_set: FeatureSet,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast from the latest window of a station file.
    Predict {
        #[command(flatten)]
        inputs: Inputs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Days ahead; repeatable [default: every trained horizon].
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        horizon: Vec<u32>,
        /// Round AQI to whole numbers.
        #[arg(long)]
        round: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every configured run; prints the report table.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Decimals in the printed table.
        #[arg(long, default_value_t = 2)]
        decimals: usize,
    },
    /// Write a synthetic dataset.
    Synth {
        /// Generator settings (JSON) [default: built-in settings].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the generator config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for stations.csv, truth.csv and vehicles.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_gap_rule(s: &str) -> Result<GapRule, String> {
    match s {
        "or" => Ok(GapRule::Or),
        "and" => Ok(GapRule::And),
        _ => Err("expected `or` or `and`".into()),
    }
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failures split by exit code.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(Error::io(path, e))
}

struct Session {
    manifest: Manifest,
    manifest_path: Option<PathBuf>,
}

impl Session {
    fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
        if self.manifest_path.is_none() {
            let mut name = path.as_os_str().to_owned();
            name.push(".manifest.json");
            self.manifest_path = Some(PathBuf::from(name));
        }
    }
}

impl Inputs {
    /// Effective config: file (if any), then flag overrides.
    fn resolve(&self, session: &mut Session) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                session.manifest.add_input(p)?;
                PipelineConfig::load(p)?
            }
            None => PipelineConfig::default(),
        };
        for (flag, slot) in [
            (&self.stations, &mut cfg.stations),
            (&self.vehicles, &mut cfg.vehicles),
            (&self.camera_map, &mut cfg.camera_map),
            (&self.breakpoints, &mut cfg.breakpoints),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(rule) = self.gap_rule {
            cfg.window.gap_rule = rule;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if cfg.stations.is_none() {
            return Err(usage("a stations file is required (--stations or config)"));
        }
        for p in [
            &cfg.stations,
            &cfg.vehicles,
            &cfg.camera_map,
            &cfg.truth,
            &cfg.breakpoints,
        ]
        .into_iter()
        .flatten()
        {
            session.manifest.add_input(p)?;
        }
        session.manifest.seed = Some(cfg.seed);
        session.manifest.config_sha256 = Some(cfg.digest()?);
        Ok(cfg)
    }
}

fn load_grid(path: &Option<PathBuf>, session: &mut Session) -> CliResult<Option<ImputerGrid>> {
    match path {
        Some(p) => {
            session.manifest.add_input(p)?;
            Ok(Some(ImputerGrid::load(p)?))
        }
        None => Ok(None),
    }
}

fn grid_for(
    feature_set: FeatureSet,
    given: Option<ImputerGrid>,
    data: &PipelineData,
    cfg: &PipelineConfig,
) -> CliResult<Option<ImputerGrid>> {
    if feature_set == FeatureSet::Fs1 || given.is_some() {
        return Ok(given);
    }
    log::info!("training imputer grid");
    Ok(Some(data.train_grid(&cfg.imputer)?))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn run(cli: Cli) -> CliResult {
    let mut session = Session {
        manifest: Manifest::new(command_name(&cli.command)),
        manifest_path: cli.manifest.clone(),
    };
    match cli.command {
        Command::Analyze { inputs, out } => {
            let cfg = inputs.resolve(&mut session)?;
            let data = PipelineData::load(&cfg)?;
            let cams = data.vehicles.as_ref().map(|v| v.camera_counts());
            let matrix = availability(&data.observed, cams.as_deref());
            let p = &data.observed;
            println!(
                "{} stations, {} hours from {}",
                p.n_stations(),
                p.n_hours(),
                format_timestamp(p.t0())
            );
            for (i, src) in matrix.sources.iter().enumerate() {
                println!(
                    "{:<8} {:<12} {:6.1}%",
                    kind_name(&src.kind),
                    src.id,
                    100.0 * matrix.overall(i)
                );
            }
            println!(
                "station coverage {:.1}%",
                100.0 * matrix.overall_kind(SourceKind::Station)
            );
            if cams.is_some() {
                println!(
                    "camera coverage  {:.1}%",
                    100.0 * matrix.overall_kind(SourceKind::Camera)
                );
            }
            let all: Vec<usize> = (0..p.n_stations()).collect();
            println!(
                "pollutant gap fraction {:.4}",
                gap_fraction(p, &all, 0..p.n_hours())?
            );
            if let Some(out) = out {
                let mut w = csv::Writer::from_writer(create(&out)?);
                w.write_record([
                    "source_kind",
                    "source_id",
                    "day",
                    "present",
                    "expected",
                    "coverage",
                ])
                .map_err(Error::from)?;
                for (i, src) in matrix.sources.iter().enumerate() {
                    for (d, day) in matrix.days.iter().enumerate() {
                        let k = i * matrix.days.len() + d;
                        w.write_record([
                            kind_name(&src.kind).to_string(),
                            src.id.clone(),
                            day.to_string(),
                            matrix.present[k].to_string(),
                            matrix.expected[k].to_string(),
                            matrix.cell(i, d).to_string(),
                        ])
                        .map_err(Error::from)?;
                    }
                }
                w.flush().map_err(io_err(&out))?;
                session.output(&out);
            }
        }
        Command::Impute {
            inputs,
            grid,
            grid_out,
            out,
        } => {
            let cfg = inputs.resolve(&mut session)?;
            let data = PipelineData::load(&cfg)?;
            let grid = match load_grid(&grid, &mut session)? {
                Some(g) => g,
                None => data.train_grid(&cfg.imputer)?,
            };
            let sensors = data
                .observed
                .select_channels(|c| matches!(c, Channel::Pollutant(_) | Channel::Env(_)));
            let (filled, mask) = impute(&sensors, &grid)?;
            println!(
                "{} imputers, {} cells filled",
                grid.len(),
                mask.iter().filter(|&&m| m).count()
            );
            save_station_csv(&filled, &out)?;
            session.output(&out);
            if let Some(path) = grid_out {
                grid.save(&path)?;
                session.manifest.outputs.push(path.display().to_string());
            }
        }
        Command::Windows {
            inputs,
            feature_set,
            grid,
            dump,
        } => {
            let cfg = inputs.resolve(&mut session)?;
            let data = PipelineData::load(&cfg)?;
            let grid = grid_for(feature_set, load_grid(&grid, &mut session)?, &data, &cfg)?;
            let features = data.features(feature_set, grid.as_ref())?;
            let targets = station_aqi(&data.observed, &data.table)?;
            let candidates = enumerate_candidates(&features, &cfg.window)?;
            let windows = build_windows(&features, &targets, &cfg.window, feature_set)?;
            println!(
                "{feature_set}: {} candidates, {} kept, {} channels",
                candidates.len(),
                windows.samples.len(),
                windows.n_channels()
            );
            if let Some(path) = dump {
                write_window_dump(create(&path)?, &features, &targets, &cfg.window)?;
                session.output(&path);
            }
        }
        Command::Train {
            inputs,
            model,
            feature_set,
            grid,
            out,
        } => {
            let cfg = inputs.resolve(&mut session)?;
            let data = PipelineData::load(&cfg)?;
            let grid = grid_for(feature_set, load_grid(&grid, &mut session)?, &data, &cfg)?;
            let prepared = prepare(&data, &cfg, feature_set, grid.as_ref())?;
            let spec = RunSpec { feature_set, model };
            let trained = fit_model(&prepared, &cfg, spec)?;
            println!(
                "{spec}: {} training / {} validation windows",
                prepared.train.samples.len(),
                prepared.validation.samples.len()
            );
            if let Some(h) = &trained.history {
                for e in &h.epochs {
                    println!(
                        "epoch {:>3}  train {:.5}  val {:.5}",
                        e.epoch, e.train_rmse, e.val_rmse
                    );
                }
                println!(
                    "best epoch {} (val rmse {:.5})",
                    h.best_epoch, h.best_val_rmse
                );
            }
            trained.checkpoint.save(&out)?;
            session.output(&out);
        }
        Command::Predict {
            inputs,
            model,
            grid,
            horizon,
            round,
            out,
        } => {
            let cfg = inputs.resolve(&mut session)?;
            session.manifest.add_input(&model)?;
            let ckpt = gapcast::forecast::Checkpoint::load(&model)?;
            let data = PipelineData::load(&cfg)?;
            let grid = grid_for(
                ckpt.feature_set,
                load_grid(&grid, &mut session)?,
                &data,
                &cfg,
            )?;
            let features = data.features(ckpt.feature_set, grid.as_ref())?;
            let horizons = &ckpt.window.horizons_hours;
            let wanted: Vec<usize> = if horizon.is_empty() {
                (0..horizons.len()).collect()
            } else {
                horizon
                    .iter()
                    .map(|&d| {
                        horizons
                            .iter()
                            .position(|&h| h == d as usize * 24)
                            .ok_or_else(|| usage(format!("model has no +{d}d horizon")))
                    })
                    .collect::<CliResult<_>>()?
            };
            let t_end = features.n_hours();
            let sample = input_window(&features, t_end, ckpt.window.window_hours)?;
            let forecast = match ckpt.network()? {
                Some(net) => {
                    let enc = ckpt
                        .encoder
                        .as_ref()
                        .expect("network checkpoints carry an encoder");
                    if enc.inputs.channels != features.channels()
                        || enc.inputs.station_ids != features.station_ids()
                    {
                        return Err(Error::ShapeMismatch(
                            "station file does not match the model's stations/channels".into(),
                        )
                        .into());
                    }
                    predict(&net, enc, &sample)?
                }
                None => {
                    let set = gapcast::windowing::WindowSet {
                        feature_set: ckpt.feature_set,
                        station_ids: features.station_ids().to_vec(),
                        channels: features.channels().to_vec(),
                        window_hours: ckpt.window.window_hours,
                        horizons_hours: horizons.clone(),
                        samples: vec![],
                    };
                    persistence(&set, &sample)?
                }
            };
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(create(p)?),
                None => Box::new(std::io::stdout().lock()),
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["station_id", "horizon", "target_time", "aqi"])
                .map_err(Error::from)?;
            for (s, id) in features.station_ids().iter().enumerate() {
                for &h in &wanted {
                    let hours = horizons[h];
                    let target_time =
                        features.hour_time(t_end - 1) + chrono::Duration::hours(hours as i64 + 1);
                    let aqi = match forecast.get(s, h) {
                        Some(v) if round => display_round(v).to_string(),
                        Some(v) => v.to_string(),
                        None => String::new(),
                    };
                    w.write_record([
                        id.as_str(),
                        &horizon_label(hours),
                        &format_timestamp(target_time),
                        &aqi,
                    ])
                    .map_err(Error::from)?;
                }
            }
            w.flush()
                .map_err(|e| Failure::Data(Error::io("<predictions>", e)))?;
            if let Some(p) = &out {
                session.output(p);
            }
        }
        Command::Eval {
            inputs,
            out,
            decimals,
        } => {
            let cfg = inputs.resolve(&mut session)?;
            let data = PipelineData::load(&cfg)?;
            let output = run_pipeline(&data, &cfg)?;
            print!("{}", output.report.render_text(decimals));
            if let Some(path) = out {
                output.report.write_csv(create(&path)?, None)?;
                session.output(&path);
            }
        }
        Command::Synth {
            config,
            seed,
            out_dir,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    session.manifest.add_input(p)?;
                    let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                    serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        message: e.to_string(),
                    })?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            session.manifest.seed = Some(cfg.seed);
            let generated = generate(&cfg)?;
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            let stations = out_dir.join("stations.csv");
            save_station_csv(&generated.observed, &stations)?;
            session.output(&stations);
            let truth = out_dir.join("truth.csv");
            save_station_csv(&generated.truth, &truth)?;
            session.manifest.outputs.push(truth.display().to_string());
            if cfg.n_cameras > 0 {
                let path = out_dir.join("vehicles.csv");
                write_vehicle_csv(&generate_vehicles(&cfg)?, create(&path)?)?;
                session.manifest.outputs.push(path.display().to_string());
            }
            println!(
                "wrote {} stations x {} hours to {}",
                cfg.n_stations,
                cfg.n_hours,
                out_dir.display()
            );
        }
    }
    let path = session
        .manifest_path
        .unwrap_or_else(|| PathBuf::from("gapcast-manifest.json"));
    session.manifest.save(&path)?;
    Ok(())
}

fn kind_name(kind: &SourceKind) -> &'static str {
    match kind {
        SourceKind::Station => "station",
        SourceKind::Camera => "camera",
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Analyze { .. } => "analyze",
        Command::Impute { .. } => "impute",
        Command::Windows { .. } => "windows",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Eval { .. } => "eval",
        Command::Synth { .. } => "synth",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
