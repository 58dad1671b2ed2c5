//! Multi-horizon AQI forecasters: a persistence baseline, an MLP and an
//! LSTM, all predicting every station at every horizon at once.

mod checkpoint;
mod encode;
mod lstm;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::windowing::{WindowSample, WindowSet};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encode::{EncodedSample, Encoder};
pub use lstm::Lstm;
pub use mlp::Mlp;
pub use train::{
    evaluate_rmse, gradient_check, masked_mse, train, EpochStats, GradCheckConfig, GradCheckReport,
    History, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Persistence,
    Mlp,
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Persistence => "persistence",
            ModelKind::Mlp => "mlp",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "persistence" => Ok(ModelKind::Persistence),
            "mlp" => Ok(ModelKind::Mlp),
            "lstm" => Ok(ModelKind::Lstm),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// Architecture sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mlp_hidden: Vec<usize>,
    pub lstm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mlp_hidden: vec![256, 128],
            lstm_hidden: 128,
        }
    }
}

/// A trainable network over encoded samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Mlp(Mlp),
    Lstm(Lstm),
}

impl Network {
    /// Randomly initialized network for `encoder`'s layout.
    pub fn for_encoder(
        kind: ModelKind,
        cfg: &ModelConfig,
        encoder: &Encoder,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        match kind {
            ModelKind::Mlp => {
                let mut sizes = vec![encoder.input_len()];
                sizes.extend(&cfg.mlp_hidden);
                sizes.push(encoder.output_len());
                Ok(Network::Mlp(Mlp::new(sizes, &mut rng)?))
            }
            ModelKind::Lstm => Ok(Network::Lstm(Lstm::new(
                encoder.step_len(),
                cfg.lstm_hidden,
                encoder.output_len(),
                &mut rng,
            )?)),
            ModelKind::Persistence => Err(Error::invalid("persistence has no network")),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Network::Mlp(_) => ModelKind::Mlp,
            Network::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Network::Mlp(m) => m.params(),
            Network::Lstm(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Network::Mlp(m) => m.params_mut(),
            Network::Lstm(m) => m.params_mut(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Network::Mlp(m) => m.output_len(),
            Network::Lstm(m) => m.output_len(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Network::Mlp(m) => m.forward(x),
            Network::Lstm(m) => m.forward(x),
        }
    }

    /// Squared error over present targets; adds `scale * d(sse)/d(params)`
    /// to `grad`.
    pub fn sse_gradient(
        &self,
        sample: &EncodedSample,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if sample.y.len() != self.output_len() || sample.mask.len() != sample.y.len() {
            return Err(Error::shape(
                "target length does not match the network output",
            ));
        }
        let mut sse = 0.0;
        let d_out = |out: &[f64]| -> Vec<f64> {
            out.iter()
                .zip(&sample.y)
                .zip(&sample.mask)
                .map(|((&o, &y), &m)| {
                    if m {
                        sse += (o - y) * (o - y);
                        2.0 * (o - y) * scale
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        match self {
            Network::Mlp(m) => m.backward(&sample.x, d_out, grad)?,
            Network::Lstm(m) => m.backward(&sample.x, d_out, grad)?,
        };
        Ok(sse)
    }
}

/// Per `(station, horizon)` AQI predictions with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub n_stations: usize,
    pub n_horizons: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Forecast {
    pub fn get(&self, s: usize, h: usize) -> Option<f64> {
        let i = s * self.n_horizons + h;
        self.mask[i].then_some(self.values[i])
    }
}

/// Last measured AQI in the window, repeated at every horizon. A station
/// whose AQI was never measured in the window gets a masked prediction.
pub fn persistence(windows: &WindowSet, sample: &WindowSample) -> Result<Forecast> {
    let aqi = windows
        .aqi_channel()
        .ok_or_else(|| Error::invalid("windows have no AQI channel"))?;
    let (n_s, n_c, w, n_h) = (
        windows.n_stations(),
        windows.n_channels(),
        windows.window_hours,
        windows.n_horizons(),
    );
    if sample.inputs.len() != n_s * n_c * w || sample.observed.len() != sample.inputs.len() {
        return Err(Error::shape("sample does not match its window set"));
    }
    let mut values = vec![0.0; n_s * n_h];
    let mut mask = vec![false; n_s * n_h];
    for s in 0..n_s {
        let base = (s * n_c + aqi) * w;
        if let Some(t) = (0..w).rev().find(|&t| sample.observed[base + t]) {
            for h in 0..n_h {
                values[s * n_h + h] = sample.inputs[base + t];
                mask[s * n_h + h] = true;
            }
        }
    }
    Ok(Forecast {
        n_stations: n_s,
        n_horizons: n_h,
        values,
        mask,
    })
}

/// Denormalized network forecast for one window.
pub fn predict(net: &Network, encoder: &Encoder, sample: &WindowSample) -> Result<Forecast> {
    let out = net.forward(&encoder.encode_inputs(sample)?)?;
    let values = encoder.decode(&out);
    Ok(Forecast {
        n_stations: encoder.n_stations(),
        n_horizons: encoder.n_horizons,
        mask: vec![true; values.len()],
        values,
    })
}
