//! Acceptance checks. Runs as a plain binary (no libtest harness) so the
//! verdict line of every criterion is printed by `cargo test`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gapcast::aqi::{station_aqi, subindex, with_aqi_channel, BreakpointTable};
use gapcast::eval::{rmse, StationCategory};
use gapcast::forecast::{
    gradient_check, EncodedSample, Encoder, GradCheckConfig, ModelConfig, ModelKind, Network,
};
use gapcast::gapfill::gbdt::{fit_tree, GbdtParams, Matrix, TreeNode};
use gapcast::gapfill::imputer::{impute, train_imputers, ImputerParams};
use gapcast::panel::{apply_norm, Pollutant, StationPanel};
use gapcast::pipeline::{
    fit_model, prepare, run_pipeline, PipelineConfig, PipelineData, PipelineOutput, RunSpec,
};
use gapcast::rng::SplitMix64;
use gapcast::synth::{generate, OutageBlock, SynthConfig};
use gapcast::windowing::{build_windows, FeatureSet, GapRule, WindowConfig};

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- AQI

/// The shipped table, typed in from the EPA band definitions.
const EPA_BANDS: &[(Pollutant, [f64; 4])] = &[
    (Pollutant::No2, [0.0, 53.0, 0.0, 50.0]),
    (Pollutant::No2, [54.0, 100.0, 51.0, 100.0]),
    (Pollutant::No2, [101.0, 360.0, 101.0, 150.0]),
    (Pollutant::No2, [361.0, 649.0, 151.0, 200.0]),
    (Pollutant::No2, [650.0, 1249.0, 201.0, 300.0]),
    (Pollutant::No2, [1250.0, 1649.0, 301.0, 400.0]),
    (Pollutant::No2, [1650.0, 2049.0, 401.0, 500.0]),
    (Pollutant::Co, [0.0, 4.4, 0.0, 50.0]),
    (Pollutant::Co, [4.5, 9.4, 51.0, 100.0]),
    (Pollutant::Co, [9.5, 12.4, 101.0, 150.0]),
    (Pollutant::Co, [12.5, 15.4, 151.0, 200.0]),
    (Pollutant::Co, [15.5, 30.4, 201.0, 300.0]),
    (Pollutant::Co, [30.5, 40.4, 301.0, 400.0]),
    (Pollutant::Co, [40.5, 50.4, 401.0, 500.0]),
    (Pollutant::So2, [0.0, 35.0, 0.0, 50.0]),
    (Pollutant::So2, [36.0, 75.0, 51.0, 100.0]),
    (Pollutant::So2, [76.0, 185.0, 101.0, 150.0]),
    (Pollutant::So2, [186.0, 304.0, 151.0, 200.0]),
    (Pollutant::So2, [305.0, 604.0, 201.0, 300.0]),
    (Pollutant::So2, [605.0, 804.0, 301.0, 400.0]),
    (Pollutant::So2, [805.0, 1004.0, 401.0, 500.0]),
    (Pollutant::O3, [0.000, 0.054, 0.0, 50.0]),
    (Pollutant::O3, [0.055, 0.070, 51.0, 100.0]),
    (Pollutant::O3, [0.071, 0.085, 101.0, 150.0]),
    (Pollutant::O3, [0.086, 0.105, 151.0, 200.0]),
    (Pollutant::O3, [0.106, 0.200, 201.0, 300.0]),
    (Pollutant::Pm1_0, [0.0, 12.0, 0.0, 50.0]),
    (Pollutant::Pm1_0, [12.1, 35.4, 51.0, 100.0]),
    (Pollutant::Pm1_0, [35.5, 55.4, 101.0, 150.0]),
    (Pollutant::Pm1_0, [55.5, 150.4, 151.0, 200.0]),
    (Pollutant::Pm1_0, [150.5, 250.4, 201.0, 300.0]),
    (Pollutant::Pm1_0, [250.5, 350.4, 301.0, 400.0]),
    (Pollutant::Pm1_0, [350.5, 500.4, 401.0, 500.0]),
    (Pollutant::Pm2_5, [0.0, 12.0, 0.0, 50.0]),
    (Pollutant::Pm2_5, [12.1, 35.4, 51.0, 100.0]),
    (Pollutant::Pm2_5, [35.5, 55.4, 101.0, 150.0]),
    (Pollutant::Pm2_5, [55.5, 150.4, 151.0, 200.0]),
    (Pollutant::Pm2_5, [150.5, 250.4, 201.0, 300.0]),
    (Pollutant::Pm2_5, [250.5, 350.4, 301.0, 400.0]),
    (Pollutant::Pm2_5, [350.5, 500.4, 401.0, 500.0]),
    (Pollutant::Pm10, [0.0, 54.0, 0.0, 50.0]),
    (Pollutant::Pm10, [55.0, 154.0, 51.0, 100.0]),
    (Pollutant::Pm10, [155.0, 254.0, 101.0, 150.0]),
    (Pollutant::Pm10, [255.0, 354.0, 151.0, 200.0]),
    (Pollutant::Pm10, [355.0, 424.0, 201.0, 300.0]),
    (Pollutant::Pm10, [425.0, 504.0, 301.0, 400.0]),
    (Pollutant::Pm10, [505.0, 604.0, 401.0, 500.0]),
];

/// Worked by hand with exact fractions: band interiors, the one-step
/// bridges between bands, and saturation above the top band.
const WORKED: &[(Pollutant, f64, f64)] = &[
    (Pollutant::Pm2_5, 6.0, 25.0),
    (Pollutant::Pm2_5, 20.0, 67.6137339055794),
    (Pollutant::Pm2_5, 12.05, 50.5),
    (Pollutant::Pm2_5, 35.45, 100.5),
    (Pollutant::Pm2_5, 100.0, 173.9768177028451),
    (Pollutant::Pm2_5, 400.0, 433.69179452968643),
    (Pollutant::Pm1_0, 20.0, 67.6137339055794),
    (Pollutant::Pm1_0, 200.0, 250.05405405405406),
    (Pollutant::No2, 26.5, 25.0),
    (Pollutant::No2, 53.5, 50.5),
    (Pollutant::No2, 200.0, 119.72972972972973),
    (Pollutant::No2, 1000.0, 258.8464106844741),
    (Pollutant::Co, 2.2, 25.0),
    (Pollutant::Co, 4.45, 50.5),
    (Pollutant::Co, 11.0, 126.34482758620689),
    (Pollutant::Co, 45.0, 446.0),
    (Pollutant::So2, 17.5, 25.0),
    (Pollutant::So2, 35.5, 50.5),
    (Pollutant::So2, 500.0, 265.5652173913044),
    (Pollutant::O3, 0.027, 25.0),
    (Pollutant::O3, 0.0545, 50.5),
    (Pollutant::O3, 0.15, 247.3404255319149),
    (Pollutant::Pm10, 27.0, 25.0),
    (Pollutant::Pm10, 54.5, 50.5),
    (Pollutant::Pm10, 100.0, 73.27272727272727),
    (Pollutant::Pm10, 450.0, 332.32911392405066),
    (Pollutant::Pm10, 700.0, 500.0),
    (Pollutant::O3, 0.3, 300.0),
];

fn aqi_oracle() -> Verdict {
    let table = BreakpointTable::default_epa();
    let mut n = 0;
    for &(p, conc, want) in WORKED {
        let got = subindex(p, conc, &table).map_err(|e| e.to_string())?;
        check((got - want).abs() <= 1e-9, || {
            format!("{p} at {conc}: got {got}, want {want}")
        })?;
        n += 1;
    }

    for p in Pollutant::ALL {
        let expected: Vec<[f64; 4]> = EPA_BANDS.iter().filter(|b| b.0 == p).map(|b| b.1).collect();
        let shipped = table
            .bands(p)
            .ok_or_else(|| format!("{p} missing from table"))?;
        check(shipped.len() == expected.len(), || {
            format!("{p}: band count differs")
        })?;
        for (band, &[c_lo, c_hi, a_lo, a_hi]) in shipped.iter().zip(&expected) {
            check(
                [band.conc_lo, band.conc_hi, band.aqi_lo, band.aqi_hi] == [c_lo, c_hi, a_lo, a_hi],
                || format!("{p}: shipped band {band:?} differs from {c_lo}..{c_hi}"),
            )?;
            for (conc, want) in [(c_lo, a_lo), (c_hi, a_hi)] {
                let got = subindex(p, conc, &table).map_err(|e| e.to_string())?;
                check((got - want).abs() <= 1e-9, || {
                    format!("{p} at edge {conc}: got {got}, want {want}")
                })?;
                n += 1;
            }
        }
    }

    let mut sweeps = 0;
    for p in Pollutant::ALL {
        let top = table.bands(p).unwrap().last().unwrap().conc_hi * 1.1;
        let mut last = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let conc = top * i as f64 / 9_999.0;
            let v = subindex(p, conc, &table).map_err(|e| e.to_string())?;
            check(v >= last, || {
                format!("{p}: AQI falls from {last} to {v} at {conc}")
            })?;
            last = v;
        }
        sweeps += 1;
    }
    Ok(format!(
        "{n} hand-computed values within 1e-9, {sweeps} monotone 10000-point sweeps"
    ))
}

// ---------------------------------------------------------------- GBDT

#[derive(Debug)]
enum OracleNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
}

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
}

/// Every (feature, threshold, default direction) is tried by literally
/// partitioning the rows and scoring the SSE reduction.
fn oracle_tree(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    depth: usize,
    params: &GbdtParams,
) -> OracleNode {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    if depth >= params.max_depth {
        return OracleNode::Leaf(mean);
    }
    let parent = sse(y, rows);
    let mut best: Option<(f64, usize, f64, bool, Vec<usize>, Vec<usize>)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows
            .iter()
            .map(|&r| x[r][f])
            .filter(|v| !v.is_nan())
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            let threshold = if mid > pair[0] { mid } else { pair[1] };
            for default_left in [true, false] {
                let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
                    let v = x[r][f];
                    if v.is_nan() {
                        default_left
                    } else {
                        v < threshold
                    }
                });
                if left.len() < params.min_samples_leaf || right.len() < params.min_samples_leaf {
                    continue;
                }
                let gain = parent - sse(y, &left) - sse(y, &right);
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.0 + 1e-10 * b.0.abs(),
                };
                if better {
                    best = Some((gain, f, threshold, default_left, left, right));
                }
            }
        }
    }
    match best {
        Some((gain, feature, threshold, default_left, left, right))
            if gain > 1e-12 * parent.max(f64::MIN_POSITIVE) =>
        {
            OracleNode::Split {
                feature,
                threshold,
                default_left,
                left: Box::new(oracle_tree(x, y, &left, depth + 1, params)),
                right: Box::new(oracle_tree(x, y, &right, depth + 1, params)),
            }
        }
        _ => OracleNode::Leaf(mean),
    }
}

fn same_tree(nodes: &[TreeNode], i: usize, oracle: &OracleNode) -> Result<usize, String> {
    match (&nodes[i], oracle) {
        (TreeNode::Leaf { value }, OracleNode::Leaf(want)) => {
            check((value - want).abs() <= 1e-9 * want.abs().max(1.0), || {
                format!("leaf {value} vs {want}")
            })?;
            Ok(0)
        }
        (
            TreeNode::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
            },
            OracleNode::Split {
                feature: of,
                threshold: ot,
                default_left: od,
                left: ol,
                right: or,
            },
        ) => {
            check(
                (*feature, *threshold, *default_left) == (*of, *ot, *od),
                || {
                    format!(
                    "split (f{feature}, {threshold}, left={default_left}) vs oracle (f{of}, {ot}, left={od})"
                )
                },
            )?;
            Ok(1 + same_tree(nodes, *left, ol)? + same_tree(nodes, *right, or)?)
        }
        (got, want) => Err(format!("node shape differs: {got:?} vs {want:?}")),
    }
}

fn gbdt_oracle() -> Verdict {
    let mut rng = SplitMix64::new(2024);
    let mut splits = 0;
    let mut missing_defaults = 0;
    for case in 0..200 {
        let n_rows = 2 + rng.below(49);
        let n_feat = 1 + rng.below(5);
        let missing = rng.uniform(0.0, 0.3);
        // Coarse grids produce repeated feature values.
        let levels = [3.0, 10.0, 1e6][rng.below(3)];
        let x: Vec<Vec<f64>> = (0..n_rows)
            .map(|_| {
                (0..n_feat)
                    .map(|_| {
                        if rng.bernoulli(missing) {
                            f64::NAN
                        } else {
                            (rng.next_f64() * levels).floor() / levels
                        }
                    })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n_rows).map(|_| rng.normal()).collect();
        let params = GbdtParams {
            n_trees: 1,
            max_depth: 1 + rng.below(4),
            learning_rate: 1.0,
            min_samples_leaf: 1 + rng.below(3),
            min_gain: 0.0,
        };
        let data: Vec<f64> = x.iter().flatten().copied().collect();
        let matrix = Matrix::new(n_rows, n_feat, data).map_err(|e| e.to_string())?;
        let tree = fit_tree(&matrix, &y, &params).map_err(|e| e.to_string())?;
        let rows: Vec<usize> = (0..n_rows).collect();
        let oracle = oracle_tree(&x, &y, &rows, 0, &params);
        splits +=
            same_tree(tree.nodes(), 0, &oracle).map_err(|e| format!("dataset {case}: {e}"))?;
        missing_defaults += tree
            .nodes()
            .iter()
            .filter(|n| {
                matches!(
                    n,
                    TreeNode::Split {
                        default_left: false,
                        ..
                    }
                )
            })
            .count();
    }
    Ok(format!(
        "200 datasets, {splits} splits identical to the oracle ({missing_defaults} default-right)"
    ))
}

// ------------------------------------------------------ gradient checks

fn small_windows() -> (Vec<EncodedSample>, Encoder) {
    let mut cfg = SynthConfig {
        n_stations: 3,
        n_hours: 400,
        seed: 9,
        ..SynthConfig::default()
    };
    cfg.outages.blocks.push(OutageBlock {
        station: 2,
        start_hour: 50,
        duration_hours: 30,
    });
    let out = generate(&cfg).unwrap();
    let table = BreakpointTable::default_epa();
    let features = with_aqi_channel(&out.observed, &table).unwrap();
    let targets = station_aqi(&out.observed, &table).unwrap();
    let wcfg = WindowConfig {
        stride_hours: 24,
        ..WindowConfig::default()
    };
    let windows = build_windows(&features, &targets, &wcfg, FeatureSet::Fs1).unwrap();
    let encoder = Encoder::fit(&features, &targets, 0..300, wcfg.window_hours, 3).unwrap();
    let encoded = windows
        .samples
        .iter()
        .take(4)
        .map(|s| encoder.encode(s).unwrap())
        .collect();
    (encoded, encoder)
}

fn gradient_checks() -> Verdict {
    let (samples, encoder) = small_windows();
    let gc = GradCheckConfig {
        n_params: 64,
        seed: 3,
        ..GradCheckConfig::default()
    };
    let model = ModelConfig {
        mlp_hidden: vec![16, 8],
        lstm_hidden: 8,
    };

    let mlp =
        Network::for_encoder(ModelKind::Mlp, &model, &encoder, 11).map_err(|e| e.to_string())?;
    let mlp_report = gradient_check(&mlp, &samples, &gc).map_err(|e| e.to_string())?;
    let lstm =
        Network::for_encoder(ModelKind::Lstm, &model, &encoder, 12).map_err(|e| e.to_string())?;
    let lstm_report = gradient_check(&lstm, &samples, &gc).map_err(|e| e.to_string())?;

    check(encoder.window_hours == 48, || {
        "LSTM unrolls fewer than 48 steps".into()
    })?;
    check(
        mlp_report.checked.len() >= 50 && lstm_report.checked.len() >= 50,
        || "fewer than 50 parameters checked".into(),
    )?;
    let nonzero = lstm_report.checked.iter().filter(|c| c.1 != 0.0).count();
    check(nonzero >= 25, || {
        format!("only {nonzero} LSTM gradients are nonzero")
    })?;
    check(mlp_report.max_rel_error < 1e-4, || {
        format!("MLP max relative error {:e}", mlp_report.max_rel_error)
    })?;
    check(lstm_report.max_rel_error < 1e-3, || {
        format!("LSTM max relative error {:e}", lstm_report.max_rel_error)
    })?;
    Ok(format!(
        "MLP {:.2e} over {} params, 48-step LSTM {:.2e} over {} params",
        mlp_report.max_rel_error,
        mlp_report.checked.len(),
        lstm_report.max_rel_error,
        lstm_report.checked.len()
    ))
}

// ---------------------------------------------------------- imputation

fn imputation_beats_mean() -> Verdict {
    let mut cfg = SynthConfig {
        n_stations: 10,
        n_hours: 2000,
        seed: 17,
        rho: 0.9,
        ..SynthConfig::default()
    };
    // 600 of 2000 hours offline on station 0.
    for k in 0..6 {
        cfg.outages.blocks.push(OutageBlock {
            station: 0,
            start_hour: 150 + k * 300,
            duration_hours: 100,
        });
    }
    let out = generate(&cfg).map_err(|e| e.to_string())?;
    let mut params = ImputerParams::default();
    params.gbdt.n_trees = 40;
    params.gbdt.max_depth = 4;
    let grid = train_imputers(&out.observed, &params).map_err(|e| e.to_string())?;
    let (filled, imputed) = impute(&out.observed, &grid).map_err(|e| e.to_string())?;

    let mut lines = Vec::new();
    let (mut sse_gbdt, mut sse_mean, mut cells) = (0.0, 0.0, 0usize);
    for (c, p) in out.observed.pollutant_channels() {
        let (values, mask) = out.observed.series(0, c);
        let present: Vec<f64> = values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        let col_mean = present.iter().sum::<f64>() / present.len() as f64;
        let (mut pred, mut mean_fill, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..out.observed.n_hours() {
            if mask[t] {
                continue;
            }
            check(imputed[out.observed.index(0, c, t)], || {
                format!("{p} hour {t} not imputed")
            })?;
            pred.push(filled.get(0, c, t).unwrap());
            mean_fill.push(col_mean);
            truth.push(out.truth.get(0, c, t).unwrap());
        }
        let sel = vec![true; truth.len()];
        let r_gbdt = rmse(&pred, &truth, &sel).map_err(|e| e.to_string())?;
        let r_mean = rmse(&mean_fill, &truth, &sel).map_err(|e| e.to_string())?;
        check(r_gbdt < 0.7 * r_mean, || {
            format!("{p}: imputation RMSE {r_gbdt:.4} vs column mean {r_mean:.4}")
        })?;
        sse_gbdt += r_gbdt * r_gbdt * truth.len() as f64;
        sse_mean += r_mean * r_mean * truth.len() as f64;
        cells += truth.len();
        lines.push(format!("{p} {:.2}", r_gbdt / r_mean));
    }
    check(cells == 600 * 7, || {
        format!("{cells} gap cells, expected 4200")
    })?;
    Ok(format!(
        "ratio to mean-fill RMSE: pooled {:.3}; {}",
        (sse_gbdt / sse_mean).sqrt(),
        lines.join(", ")
    ))
}

// ------------------------------------------------------------- windows

/// Window ends kept by the filter, recomputed cell by cell.
fn oracle_window_ends(panel: &StationPanel, cfg: &WindowConfig) -> Vec<usize> {
    let pollutants = panel.pollutant_channels();
    let table = BreakpointTable::default_epa();
    let targets = station_aqi(panel, &table).unwrap();
    let w = cfg.window_hours;
    let max_h = *cfg.horizons_hours.iter().max().unwrap();
    let mut kept = Vec::new();
    for t_end in w..panel.n_hours() {
        if t_end + max_h >= panel.n_hours() || (t_end - w) % cfg.stride_hours != 0 {
            continue;
        }
        let (mut cells, mut missing, mut stations) = (0usize, 0usize, 0usize);
        for s in 0..panel.n_stations() {
            let mut any = false;
            for &(c, _) in &pollutants {
                for t in t_end - w..t_end {
                    cells += 1;
                    if panel.is_present(s, c, t) {
                        any = true;
                    } else {
                        missing += 1;
                    }
                }
            }
            stations += usize::from(any);
        }
        let small_gap = (missing as f64) <= cfg.max_gap_fraction * cells as f64;
        let enough = stations > cfg.min_stations_with_data;
        let pass = match cfg.gap_rule {
            GapRule::Or => small_gap || enough,
            GapRule::And => small_gap && enough,
        };
        let has_target = (0..panel.n_stations()).any(|s| {
            cfg.horizons_hours
                .iter()
                .any(|&h| targets.get(s, t_end + h).is_some())
        });
        if pass && has_target {
            kept.push(t_end);
        }
    }
    kept
}

fn window_filter_oracle() -> Verdict {
    let table = BreakpointTable::default_epa();
    let mut rng = SplitMix64::new(77);
    let (mut total, mut dropped) = (0usize, 0usize);
    for case in 0..50 {
        let n_hours = 48 + 168 + 1 + rng.below(500 - 216);
        let mut cfg = SynthConfig {
            n_stations: 2 + rng.below(8),
            n_hours,
            seed: 1000 + case as u64,
            ..SynthConfig::default()
        };
        cfg.outages.rate = rng.uniform(0.0, 0.8);
        cfg.outages.mean_hours = rng.uniform(5.0, 80.0);
        let mut panel = generate(&cfg).map_err(|e| e.to_string())?.observed;
        // Scattered single-cell dropouts on top of station outages.
        let drop = rng.uniform(0.0, 0.5);
        for s in 0..panel.n_stations() {
            for c in 0..panel.n_channels() {
                for t in 0..n_hours {
                    if rng.bernoulli(drop) {
                        panel.clear(s, c, t);
                    }
                }
            }
        }
        let wcfg = WindowConfig {
            stride_hours: 1 + rng.below(3),
            gap_rule: if case % 5 == 4 {
                GapRule::And
            } else {
                GapRule::Or
            },
            ..WindowConfig::default()
        };
        check(
            (
                wcfg.max_gap_fraction,
                wcfg.min_stations_with_data,
                wcfg.window_hours,
            ) == (0.30, 4, 48)
                && wcfg.horizons_hours == [24, 120, 168],
            || "default window settings changed".into(),
        )?;
        let targets = station_aqi(&panel, &table).map_err(|e| e.to_string())?;
        let windows =
            build_windows(&panel, &targets, &wcfg, FeatureSet::Fs1).map_err(|e| e.to_string())?;
        let got: Vec<usize> = windows.samples.iter().map(|s| s.t_end).collect();
        let want = oracle_window_ends(&panel, &wcfg);
        check(got == want, || {
            format!(
                "panel {case}: {} windows kept, oracle keeps {}",
                got.len(),
                want.len()
            )
        })?;
        let candidates = (n_hours - 168 - 48 + wcfg.stride_hours - 1) / wcfg.stride_hours;
        total += want.len();
        dropped += candidates - want.len();
    }
    Ok(format!(
        "50 panels, {total} windows kept and {dropped} dropped, identical sets"
    ))
}

// ---------------------------------------------------- end to end runs

struct SeedRun {
    seed: u64,
    output: PipelineOutput,
}

fn e2e_config(seed: u64) -> (SynthConfig, PipelineConfig) {
    let mut synth = SynthConfig {
        n_stations: 10,
        n_hours: 4000,
        seed,
        ar_coeff: 0.99,
        ..SynthConfig::default()
    };
    synth.outages.rate = 0.3;
    synth.outages.mean_hours = 72.0;
    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    cfg.window.stride_hours = 4;
    cfg.model.lstm_hidden = 24;
    cfg.train.learning_rate = 0.2;
    cfg.train.max_epochs = 40;
    cfg.train.patience = 5;
    cfg.imputer.gbdt.n_trees = 30;
    cfg.imputer.gbdt.max_depth = 4;
    (synth, cfg)
}

fn e2e_runs() -> &'static Result<Vec<SeedRun>, String> {
    static RUNS: OnceLock<Result<Vec<SeedRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [1u64, 2, 3]
            .into_iter()
            .map(|seed| {
                let (synth, cfg) = e2e_config(seed);
                let out = generate(&synth).map_err(|e| e.to_string())?;
                let data = PipelineData {
                    observed: out.observed,
                    truth: Some(out.truth),
                    vehicles: None,
                    camera_map: None,
                    table: BreakpointTable::default_epa(),
                };
                let output = run_pipeline(&data, &cfg).map_err(|e| e.to_string())?;
                Ok(SeedRun { seed, output })
            })
            .collect()
    })
}

/// Validation RMSE of one run at horizon index `h`, over every station.
fn pooled_rmse(output: &PipelineOutput, label: &str, h: usize) -> Result<f64, String> {
    let run = output
        .runs
        .iter()
        .find(|r| r.spec.to_string() == label)
        .ok_or_else(|| format!("no run {label}"))?;
    let (mut pred, mut truth, mut sel) = (Vec::new(), Vec::new(), Vec::new());
    for case in &run.predictions.cases {
        let f = &case.forecast;
        for s in 0..f.n_stations {
            let i = s * f.n_horizons + h;
            pred.push(f.values[i]);
            truth.push(case.targets[i]);
            sel.push(case.target_mask[i] && f.mask[i]);
        }
    }
    rmse(&pred, &truth, &sel).map_err(|e| e.to_string())
}

fn horizon_ordering() -> Verdict {
    let runs = e2e_runs().as_ref().map_err(Clone::clone)?;
    let mut held = 0;
    let mut notes = Vec::new();
    for r in runs {
        let f1 = (
            pooled_rmse(&r.output, "fs1/lstm", 0)?,
            pooled_rmse(&r.output, "fs1/lstm", 2)?,
        );
        let f2 = (
            pooled_rmse(&r.output, "fs2/lstm", 0)?,
            pooled_rmse(&r.output, "fs2/lstm", 2)?,
        );
        let ok = f1.0 < f1.1 && f2.0 < f2.1 && f2.0 <= f1.0;
        held += usize::from(ok);
        notes.push(format!(
            "seed {} {}: fs1 {:.2}/{:.2} fs2 {:.2}/{:.2}",
            r.seed,
            if ok { "holds" } else { "fails" },
            f1.0,
            f1.1,
            f2.0,
            f2.1
        ));
    }
    let summary = format!("{held}/3 seeds (+1d/+7d RMSE; {})", notes.join("; "));
    if held >= 2 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn beats_persistence() -> Verdict {
    let runs = e2e_runs().as_ref().map_err(Clone::clone)?;
    let mut notes = Vec::new();
    for r in runs {
        let row = r
            .output
            .report
            .row("fs1/persistence")
            .ok_or("persistence missing from the report")?;
        check(row.cells.len() == 6, || {
            format!("persistence row has {} cells", row.cells.len())
        })?;
        let reported: Vec<f64> = StationCategory::ALL
            .iter()
            .filter_map(|&c| row.cell(24, c).and_then(|cell| cell.rmse))
            .collect();
        check(
            !reported.is_empty() && reported.iter().all(|v| v.is_finite()),
            || format!("seed {}: persistence +1d cells are not finite", r.seed),
        )?;
        let persist = pooled_rmse(&r.output, "fs1/persistence", 0)?;
        let lstm = pooled_rmse(&r.output, "fs1/lstm", 0)?;
        check(persist.is_finite(), || {
            format!("seed {}: persistence RMSE {persist}", r.seed)
        })?;
        check(lstm < persist, || {
            format!(
                "seed {}: LSTM {lstm:.3} does not beat persistence {persist:.3}",
                r.seed
            )
        })?;
        notes.push(format!("seed {} {lstm:.2} < {persist:.2}", r.seed));
    }
    Ok(format!("+1d LSTM vs persistence: {}", notes.join(", ")))
}

// ---------------------------------------------------------- determinism

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gapcast"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "gapcast {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("synth.json"),
        r#"{"n_stations": 5, "n_hours": 700, "outages": {"rate": 0.2, "mean_hours": 24}}"#,
    )
    .map_err(|e| e.to_string())?;
    run_cli(
        &[
            "synth",
            "--config",
            "synth.json",
            "--seed",
            "5",
            "--out-dir",
            "data",
        ],
        d,
    )?;
    std::fs::write(
        d.join("pipeline.json"),
        r#"{
  "stations": "data/stations.csv",
  "truth": "data/truth.csv",
  "seed": 5,
  "window": {"stride_hours": 6},
  "imputer": {"gbdt": {"n_trees": 5, "max_depth": 3}},
  "model": {"mlp_hidden": [8], "lstm_hidden": 6},
  "train": {"max_epochs": 3, "learning_rate": 0.05},
  "runs": [
    {"feature_set": "fs1", "model": "persistence"},
    {"feature_set": "fs1", "model": "mlp"},
    {"feature_set": "fs2", "model": "lstm"}
  ]
}"#,
    )
    .map_err(|e| e.to_string())?;
    run_cli(&["eval", "--config", "pipeline.json", "--out", "a.csv"], d)?;
    run_cli(&["eval", "--config", "pipeline.json", "--out", "b.csv"], d)?;
    let a = std::fs::read(d.join("a.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(d.join("b.csv")).map_err(|e| e.to_string())?;
    check(a.len() > 100, || "report is nearly empty".into())?;
    check(a == b, || "report CSVs differ".into())?;
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    Ok(format!(
        "two CLI runs, {rows} report rows, {} identical bytes",
        a.len()
    ))
}

// -------------------------------------------------------- normalization

fn normalization_contract() -> Verdict {
    let mut synth = SynthConfig {
        n_stations: 6,
        n_hours: 900,
        seed: 31,
        ..SynthConfig::default()
    };
    synth.outages.rate = 0.2;
    synth.outages.mean_hours = 30.0;
    let out = generate(&synth).map_err(|e| e.to_string())?;
    let data = PipelineData {
        observed: out.observed,
        truth: None,
        vehicles: None,
        camera_map: None,
        table: BreakpointTable::default_epa(),
    };
    let mut cfg = PipelineConfig::default();
    cfg.window.stride_hours = 12;
    cfg.model.lstm_hidden = 4;
    cfg.train.max_epochs = 1;
    cfg.imputer.gbdt.n_trees = 5;

    let mut checked = 0;
    for fs in [FeatureSet::Fs1, FeatureSet::Fs2] {
        let grid = match fs {
            FeatureSet::Fs1 => None,
            _ => Some(data.train_grid(&cfg.imputer).map_err(|e| e.to_string())?),
        };
        let prepared = prepare(&data, &cfg, fs, grid.as_ref()).map_err(|e| e.to_string())?;
        let spec = RunSpec {
            feature_set: fs,
            model: ModelKind::Lstm,
        };
        let trained = fit_model(&prepared, &cfg, spec).map_err(|e| e.to_string())?;
        let encoder = trained
            .checkpoint
            .encoder
            .ok_or("checkpoint has no encoder")?;
        let fit_end = prepared.train.samples.last().unwrap().t_end;
        let normed = apply_norm(&prepared.features, &encoder.inputs).map_err(|e| e.to_string())?;

        let mut moments = |cells: Vec<f64>, what: String| -> Result<(), String> {
            let n = cells.len() as f64;
            let mean = cells.iter().sum::<f64>() / n;
            let std = (cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            check(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, || {
                format!("{fs} {what}: mean {mean:e}, std {std}")
            })?;
            checked += 1;
            Ok(())
        };
        for s in 0..normed.n_stations() {
            for c in 0..normed.n_channels() {
                if encoder.inputs.is_constant(s, c) {
                    continue;
                }
                let cells: Vec<f64> = (0..fit_end).filter_map(|t| normed.get(s, c, t)).collect();
                moments(
                    cells,
                    format!("station {s} channel {}", normed.channels()[c]),
                )?;
            }
            let aqi: Vec<f64> = (0..fit_end)
                .filter_map(|t| prepared.targets.get(s, t))
                .collect();
            if aqi.len() >= 2 {
                let z = aqi
                    .iter()
                    .map(|v| (v - encoder.target_mean[s]) / encoder.target_std[s])
                    .collect();
                moments(z, format!("station {s} target"))?;
            }
        }
    }
    Ok(format!(
        "{checked} train-range series at mean 0 / std 1 within 1e-9 (fs1 and fs2)"
    ))
}

// ----------------------------------------------------------------- main

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Verdict); 9] = [
        ("AQI oracle", Duration::from_secs(1), aqi_oracle),
        ("GBDT split oracle", Duration::from_secs(30), gbdt_oracle),
        ("gradient checks", Duration::from_secs(60), gradient_checks),
        (
            "imputation beats mean fill",
            Duration::from_secs(120),
            imputation_beats_mean,
        ),
        (
            "window filter oracle",
            Duration::from_secs(60),
            window_filter_oracle,
        ),
        (
            "horizon ordering end to end",
            Duration::from_secs(600),
            horizon_ordering,
        ),
        (
            "LSTM beats persistence",
            Duration::from_secs(600),
            beats_persistence,
        ),
        ("determinism", Duration::from_secs(300), determinism),
        (
            "normalization contract",
            Duration::from_secs(60),
            normalization_contract,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();

    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| id.ends_with(f.as_str()) || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .and_then(|detail| {
                let took = start.elapsed();
                if took > limit {
                    Err(format!("took {took:.1?}, limit {limit:?}; {detail}"))
                } else {
                    Ok(detail)
                }
            });
        let took = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {id} [{name}] ({took:.1}s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {id} [{name}] ({took:.1}s): {reason}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
