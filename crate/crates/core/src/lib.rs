//! Air-quality gap filling and multi-horizon AQI forecasting.
//!
//! The crate is organised around [`panel::StationPanel`], an hourly
//! `(station x channel x hour)` tensor with an explicit presence mask.
//! Everything downstream reads panels and produces new ones:
//!
//! - [`aqi`] converts pollutant concentrations into AQI sub-indices.
//! - [`gapfill`] trains sparsity-aware gradient-boosted trees that infer a
//!   station's pollutants from concurrent readings at the other stations.
//! - [`windowing`] cuts 48-hour rolling windows with multi-horizon targets.
//! - [`forecast`] holds the persistence, MLP and LSTM forecasters.
//! - [`eval`] splits chronologically and renders the RMSE grid.
//! - [`synth`] generates seeded synthetic panels with injected outages.
//! - [`ingest`] and [`pipeline`] read CSV inputs and drive the whole run.

pub mod aqi;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod gapfill;
pub mod ingest;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
