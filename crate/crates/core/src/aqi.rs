//! Piecewise-linear AQI conversion.
//!
//! A sub-index is linear inside a band:
//! `I = (aqi_hi - aqi_lo) / (conc_hi - conc_lo) * (C - conc_lo) + aqi_lo`.
//! Published tables leave a one-step hole between bands (PM2.5 `12.0` then
//! `12.1`); a concentration inside the hole is interpolated between the two
//! neighbouring band edges, which keeps the mapping continuous and monotone.
//! Above the top band the sub-index saturates at the top `aqi_hi`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Channel, Pollutant, StationPanel};

/// Shipped default table (EPA-style bands).
pub const DEFAULT_BREAKPOINTS_CSV: &str = include_str!("../data/breakpoints_epa.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub conc_lo: f64,
    pub conc_hi: f64,
    pub aqi_lo: f64,
    pub aqi_hi: f64,
}

impl Band {
    pub fn new(conc_lo: f64, conc_hi: f64, aqi_lo: f64, aqi_hi: f64) -> Self {
        Self {
            conc_lo,
            conc_hi,
            aqi_lo,
            aqi_hi,
        }
    }

    fn interpolate(&self, c: f64) -> f64 {
        (self.aqi_hi - self.aqi_lo) / (self.conc_hi - self.conc_lo) * (c - self.conc_lo)
            + self.aqi_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PollutantBands {
    bands: Vec<Band>,
    /// Reporting precision in decimal places; bands may be this far apart.
    decimals: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakpointTable {
    tables: BTreeMap<Pollutant, PollutantBands>,
}

impl BreakpointTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped EPA-style fixture.
    pub fn default_epa() -> Self {
        Self::from_csv_str(DEFAULT_BREAKPOINTS_CSV).expect("shipped breakpoint table is valid")
    }

    /// Add or replace the bands of one pollutant. `decimals` is the
    /// reporting precision of the concentration columns.
    pub fn insert(&mut self, pollutant: Pollutant, bands: Vec<Band>, decimals: u32) -> Result<()> {
        validate_bands(pollutant, &bands, decimals)?;
        self.tables
            .insert(pollutant, PollutantBands { bands, decimals });
        Ok(())
    }

    pub fn bands(&self, pollutant: Pollutant) -> Option<&[Band]> {
        self.tables.get(&pollutant).map(|t| t.bands.as_slice())
    }

    pub fn pollutants(&self) -> impl Iterator<Item = Pollutant> + '_ {
        self.tables.keys().copied()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parse `pollutant,conc_lo,conc_hi,aqi_lo,aqi_hi` with `#` comment lines.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let expected = ["pollutant", "conc_lo", "conc_hi", "aqi_lo", "aqi_hi"];
        if header.iter().ne(expected.iter().copied()) {
            return Err(parse_err(format!(
                "expected header {}, found {}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }

        let mut grouped: BTreeMap<Pollutant, (Vec<Band>, u32)> = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let pollutant = Pollutant::from_name(&record[0]).ok_or_else(|| {
                parse_err(format!("line {line}: unknown pollutant {:?}", &record[0]))
            })?;
            let mut nums = [0.0; 4];
            for (i, n) in nums.iter_mut().enumerate() {
                *n = record[i + 1].parse().map_err(|_| {
                    parse_err(format!("line {line}: bad number {:?}", &record[i + 1]))
                })?;
            }
            let decimals = decimals_of(&record[1]).max(decimals_of(&record[2]));
            let entry = grouped.entry(pollutant).or_default();
            entry.0.push(Band::new(nums[0], nums[1], nums[2], nums[3]));
            entry.1 = entry.1.max(decimals);
        }

        let mut table = Self::new();
        for (pollutant, (bands, decimals)) in grouped {
            table.insert(pollutant, bands, decimals)?;
        }
        Ok(table)
    }

    pub fn subindex(&self, pollutant: Pollutant, concentration: f64) -> Result<f64> {
        subindex(pollutant, concentration, self)
    }
}

fn parse_err(message: String) -> Error {
    Error::Parse {
        path: "<breakpoints>".into(),
        message,
    }
}

fn decimals_of(text: &str) -> u32 {
    text.split_once('.')
        .map_or(0, |(_, frac)| frac.len() as u32)
}

fn validate_bands(pollutant: Pollutant, bands: &[Band], decimals: u32) -> Result<()> {
    let fail = |msg: String| Err(Error::InvalidTable(format!("{pollutant}: {msg}")));
    if bands.is_empty() {
        return fail("no bands".into());
    }
    for (i, b) in bands.iter().enumerate() {
        if ![b.conc_lo, b.conc_hi, b.aqi_lo, b.aqi_hi]
            .iter()
            .all(|v| v.is_finite())
        {
            return fail(format!("band {i} has a non-finite edge"));
        }
        if !(b.conc_lo < b.conc_hi) || !(b.aqi_lo < b.aqi_hi) {
            return fail(format!("band {i} is empty or inverted"));
        }
    }
    if bands[0].conc_lo < 0.0 {
        return fail("first band starts below zero".into());
    }
    let step = 10f64.powi(-(decimals as i32));
    for (i, pair) in bands.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let gap = b.conc_lo - a.conc_hi;
        // Edges come from decimal text, so allow rounding slack on the step.
        if gap < -1e-12 || gap > step * (1.0 + 1e-9) {
            return fail(format!(
                "bands {i} and {} are not adjacent (gap {gap}, step {step})",
                i + 1
            ));
        }
        if b.aqi_lo < a.aqi_hi {
            return fail(format!("aqi decreases between bands {i} and {}", i + 1));
        }
    }
    Ok(())
}

/// AQI sub-index of one pollutant concentration.
pub fn subindex(pollutant: Pollutant, concentration: f64, table: &BreakpointTable) -> Result<f64> {
    if !(concentration >= 0.0) {
        return Err(Error::NegativeConcentration {
            pollutant: pollutant.to_string(),
            value: concentration,
        });
    }
    let bands = table
        .bands(pollutant)
        .ok_or_else(|| Error::UnknownPollutant(pollutant.to_string()))?;

    // Last band whose lower edge is at or below C.
    let k = bands.partition_point(|b| b.conc_lo <= concentration);
    if k == 0 {
        return Ok(bands[0].aqi_lo);
    }
    let band = &bands[k - 1];
    if concentration <= band.conc_hi {
        return Ok(band.interpolate(concentration));
    }
    match bands.get(k) {
        Some(next) => {
            let bridge = Band::new(band.conc_hi, next.conc_lo, band.aqi_hi, next.aqi_lo);
            Ok(bridge.interpolate(concentration))
        }
        None => Ok(band.aqi_hi),
    }
}

/// Report-only rounding to the nearest integer AQI.
pub fn display_round(aqi: f64) -> f64 {
    aqi.round()
}

/// Station-level AQI, laid out `(station x hour)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AqiSeries {
    pub n_stations: usize,
    pub n_hours: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// True when any contributing pollutant value was imputed.
    pub imputed: Vec<bool>,
}

impl AqiSeries {
    pub fn get(&self, s: usize, t: usize) -> Option<f64> {
        let k = s * self.n_hours + t;
        self.mask[k].then_some(self.values[k])
    }
}

/// Overall AQI per station-hour: the maximum sub-index over the pollutants
/// present at that cell. Negative concentrations (possible after noise or
/// imputation) are treated as zero.
pub fn station_aqi(panel: &StationPanel, table: &BreakpointTable) -> Result<AqiSeries> {
    let pollutants = panel.pollutant_channels();
    if pollutants.is_empty() {
        return Err(Error::invalid("panel has no pollutant channels"));
    }
    if let Some((_, p)) = pollutants.iter().find(|(_, p)| table.bands(*p).is_none()) {
        return Err(Error::UnknownPollutant(p.to_string()));
    }
    let (n_s, n_t) = (panel.n_stations(), panel.n_hours());
    let mut out = AqiSeries {
        n_stations: n_s,
        n_hours: n_t,
        values: vec![0.0; n_s * n_t],
        mask: vec![false; n_s * n_t],
        imputed: vec![false; n_s * n_t],
    };
    for s in 0..n_s {
        for &(c, p) in &pollutants {
            let (values, mask) = panel.series(s, c);
            let imputed = panel.imputed_series(s, c);
            for t in 0..n_t {
                if !mask[t] {
                    continue;
                }
                let sub = subindex(p, values[t].max(0.0), table)?;
                let k = s * n_t + t;
                if !out.mask[k] || sub > out.values[k] {
                    out.values[k] = sub;
                }
                out.mask[k] = true;
                out.imputed[k] |= imputed[t];
            }
        }
    }
    Ok(out)
}

/// Copy of `panel` with the station AQI appended as [`Channel::Aqi`].
/// An existing AQI channel is recomputed.
pub fn with_aqi_channel(panel: &StationPanel, table: &BreakpointTable) -> Result<StationPanel> {
    let base = panel.select_channels(|c| *c != Channel::Aqi);
    let aqi = station_aqi(&base, table)?;
    base.with_channel(Channel::Aqi, &aqi.values, &aqi.mask, &aqi.imputed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn epa() -> BreakpointTable {
        BreakpointTable::default_epa()
    }

    #[test]
    fn pm25_examples() {
        let t = epa();
        assert_eq!(t.subindex(Pollutant::Pm2_5, 0.0).unwrap(), 0.0);
        assert!((t.subindex(Pollutant::Pm2_5, 35.4).unwrap() - 100.0).abs() < 1e-9);
        let v = t.subindex(Pollutant::Pm2_5, 8.0).unwrap();
        assert!((v - 50.0 / 12.0 * 8.0).abs() < 1e-9);
        assert!((v - 33.33).abs() < 0.01);
    }

    #[test]
    fn hole_between_bands_is_bridged() {
        let t = epa();
        // 12.05 sits halfway between 12.0 (AQI 50) and 12.1 (AQI 51).
        assert!((t.subindex(Pollutant::Pm2_5, 12.05).unwrap() - 50.5).abs() < 1e-9);
    }

    #[test]
    fn above_top_band_clamps() {
        let t = epa();
        assert_eq!(t.subindex(Pollutant::Pm2_5, 10_000.0).unwrap(), 500.0);
        assert_eq!(t.subindex(Pollutant::O3, 0.5).unwrap(), 300.0);
    }

    #[test]
    fn negative_and_unknown_are_errors() {
        let t = epa();
        assert!(matches!(
            t.subindex(Pollutant::Co, -0.1),
            Err(Error::NegativeConcentration { .. })
        ));
        assert!(t.subindex(Pollutant::Co, f64::NAN).is_err());
        let mut partial = BreakpointTable::new();
        partial
            .insert(Pollutant::Co, vec![Band::new(0.0, 4.4, 0.0, 50.0)], 1)
            .unwrap();
        assert!(matches!(
            partial.subindex(Pollutant::No2, 1.0),
            Err(Error::UnknownPollutant(_))
        ));
    }

    #[test]
    fn band_lower_edges_map_exactly() {
        let t = epa();
        for p in t.pollutants().collect::<Vec<_>>() {
            for b in t.bands(p).unwrap() {
                assert_eq!(t.subindex(p, b.conc_lo).unwrap(), b.aqi_lo, "{p} {b:?}");
            }
        }
    }

    #[test]
    fn rejects_malformed_tables() {
        let mut t = BreakpointTable::new();
        assert!(t.insert(Pollutant::Co, vec![], 1).is_err());
        assert!(t
            .insert(Pollutant::Co, vec![Band::new(1.0, 1.0, 0.0, 50.0)], 1)
            .is_err());
        // Overlap.
        assert!(t
            .insert(
                Pollutant::Co,
                vec![
                    Band::new(0.0, 4.4, 0.0, 50.0),
                    Band::new(4.0, 9.4, 51.0, 100.0)
                ],
                1
            )
            .is_err());
        // Hole wider than one step.
        assert!(t
            .insert(
                Pollutant::Co,
                vec![
                    Band::new(0.0, 4.4, 0.0, 50.0),
                    Band::new(4.7, 9.4, 51.0, 100.0)
                ],
                1
            )
            .is_err());
        assert!(BreakpointTable::from_csv_str("a,b,c\n1,2,3\n").is_err());
        assert!(BreakpointTable::from_csv_str(
            "pollutant,conc_lo,conc_hi,aqi_lo,aqi_hi\nxx,0,1,0,1\n"
        )
        .is_err());
    }

    fn panel_with(values: &[(Pollutant, Option<f64>)]) -> StationPanel {
        let channels: Vec<Channel> = values.iter().map(|(p, _)| Channel::Pollutant(*p)).collect();
        let mut panel = StationPanel::empty(
            vec!["s".into()],
            channels,
            Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            1,
        )
        .unwrap();
        for (c, (_, v)) in values.iter().enumerate() {
            if let Some(v) = v {
                panel.set(0, c, 0, *v).unwrap();
            }
        }
        panel
    }

    #[test]
    fn station_aqi_takes_the_max() {
        let t = epa();
        // Sub-indices 40 (pm10 ~43.2), 90 (pm2.5), 55 (no2).
        let pm10 = 54.0 * 40.0 / 50.0;
        let pm25 = 12.1 + (90.0 - 51.0) * (35.4 - 12.1) / 49.0;
        let no2 = 54.0 + (55.0 - 51.0) * 46.0 / 49.0;
        let panel = panel_with(&[
            (Pollutant::Pm10, Some(pm10)),
            (Pollutant::Pm2_5, Some(pm25)),
            (Pollutant::No2, Some(no2)),
        ]);
        let aqi = station_aqi(&panel, &t).unwrap();
        assert!((aqi.get(0, 0).unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn station_aqi_absent_and_single() {
        let t = epa();
        let panel = panel_with(&[(Pollutant::Pm10, None), (Pollutant::Co, None)]);
        assert_eq!(station_aqi(&panel, &t).unwrap().get(0, 0), None);

        let panel = panel_with(&[(Pollutant::Pm10, None), (Pollutant::Co, Some(6.0))]);
        let got = station_aqi(&panel, &t).unwrap().get(0, 0).unwrap();
        assert_eq!(got, t.subindex(Pollutant::Co, 6.0).unwrap());
    }

    #[test]
    fn imputed_provenance_propagates() {
        let t = epa();
        let mut panel = panel_with(&[(Pollutant::Pm10, Some(10.0)), (Pollutant::Co, None)]);
        panel.set_with_provenance(0, 1, 0, 1.0, true).unwrap();
        let aqi = station_aqi(&panel, &t).unwrap();
        assert!(aqi.imputed[0]);
        let with = with_aqi_channel(&panel, &t).unwrap();
        assert_eq!(with.channels().last(), Some(&Channel::Aqi));
        assert!(with.is_imputed(0, 2, 0));
    }

    proptest! {
        #[test]
        fn station_aqi_ignores_channel_order(
            vals in prop::collection::vec(prop::option::of(0.0f64..300.0), 7),
            seed in any::<u64>(),
        ) {
            let mut pairs: Vec<(Pollutant, Option<f64>)> =
                Pollutant::ALL.iter().copied().zip(vals.iter().copied()).collect();
            let a = station_aqi(&panel_with(&pairs), &epa()).unwrap();
            crate::rng::SplitMix64::new(seed).shuffle(&mut pairs);
            let b = station_aqi(&panel_with(&pairs), &epa()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn subindex_is_monotone(a in 0.0f64..700.0, b in 0.0f64..700.0) {
            let t = epa();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for p in Pollutant::ALL {
                let scale = t.bands(p).unwrap().last().unwrap().conc_hi / 500.0;
                prop_assert!(t.subindex(p, lo * scale).unwrap() <= t.subindex(p, hi * scale).unwrap());
            }
        }
    }
}
