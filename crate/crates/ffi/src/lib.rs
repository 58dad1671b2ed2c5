//! C interface to `gapcast`.
//!
//! Objects are opaque handles created by the `*_default`, `*_load` and
//! `*_train` functions and released with the matching `*_free`. Every fallible call
//! returns a [`GapcastStatus`]; on failure, [`gapcast_last_error`] describes
//! the most recent error on the calling thread. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`gapcast_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gapcast::aqi::{station_aqi, BreakpointTable};
use gapcast::gapfill::{impute, train_imputers, ImputerGrid, ImputerParams};
use gapcast::panel::{Pollutant, StationPanel};
use gapcast::pipeline::{load_panel, run_pipeline, PipelineConfig, PipelineData};
use gapcast::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapcastStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Panic = 6,
}

/// Breakpoint table used for AQI conversion.
pub struct GapcastBreakpoints(BreakpointTable);

/// Hourly station panel.
pub struct GapcastPanel(StationPanel);

/// Trained per-(station, pollutant) imputers.
pub struct GapcastImputer(ImputerGrid);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(GapcastStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => GapcastStatus::Io,
            Error::Parse { .. } | Error::Format(_) | Error::Csv(_) | Error::Json(_) => {
                GapcastStatus::Parse
            }
            Error::InvalidArgument(_) | Error::UnknownPollutant(_) => {
                GapcastStatus::InvalidArgument
            }
            _ => GapcastStatus::Data,
        };
        Fail(status, e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(GapcastStatus::NullArgument, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(GapcastStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GapcastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            GapcastStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {msg}"));
            GapcastStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(GapcastStatus::Data, "string contains a NUL byte".into()))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn gapcast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gapcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in EPA-style breakpoint table.
#[no_mangle]
pub unsafe extern "C" fn gapcast_breakpoints_default(
    out: *mut *mut GapcastBreakpoints,
) -> GapcastStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(GapcastBreakpoints(BreakpointTable::default_epa()));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_breakpoints_load(
    path: *const c_char,
    out: *mut *mut GapcastBreakpoints,
) -> GapcastStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(GapcastBreakpoints(BreakpointTable::load(path)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_breakpoints_free(table: *mut GapcastBreakpoints) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// AQI sub-index of one concentration. `pollutant` uses the CSV column
/// names (`no2`, `co`, `so2`, `o3`, `pm1_0`, `pm2_5`, `pm10`).
#[no_mangle]
pub unsafe extern "C" fn gapcast_subindex(
    table: *const GapcastBreakpoints,
    pollutant: *const c_char,
    concentration: f64,
    out: *mut f64,
) -> GapcastStatus {
    guard(|| {
        let table = ref_arg(table, "table")?;
        let name = str_arg(pollutant, "pollutant")?;
        let out = out_arg(out, "out")?;
        let p = Pollutant::from_name(name)
            .ok_or_else(|| invalid(format!("unknown pollutant {name:?}")))?;
        *out = table.0.subindex(p, concentration)?;
        Ok(())
    })
}

/// Read a station CSV and aggregate it to hourly means.
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_load_csv(
    path: *const c_char,
    out: *mut *mut GapcastPanel,
) -> GapcastStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = boxed(GapcastPanel(load_panel(&path)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_free(panel: *mut GapcastPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Writes stations, channels and hours of `panel`.
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_shape(
    panel: *const GapcastPanel,
    n_stations: *mut usize,
    n_channels: *mut usize,
    n_hours: *mut usize,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        *out_arg(n_stations, "n_stations")? = p.n_stations();
        *out_arg(n_channels, "n_channels")? = p.n_channels();
        *out_arg(n_hours, "n_hours")? = p.n_hours();
        Ok(())
    })
}

/// Station id at `index`, as a caller-owned string.
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_station_id(
    panel: *const GapcastPanel,
    index: usize,
    out: *mut *mut c_char,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let out = out_arg(out, "out")?;
        let id = p
            .station_ids()
            .get(index)
            .ok_or_else(|| invalid(format!("station index {index} out of range")))?;
        *out = c_string(id.clone())?;
        Ok(())
    })
}

/// Channel name at `index` (`pm2_5`, `temperature`, `aqi`, ...), as a
/// caller-owned string.
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_channel_name(
    panel: *const GapcastPanel,
    index: usize,
    out: *mut *mut c_char,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let out = out_arg(out, "out")?;
        let ch = p
            .channels()
            .get(index)
            .ok_or_else(|| invalid(format!("channel index {index} out of range")))?;
        *out = c_string(ch.to_string())?;
        Ok(())
    })
}

/// One cell. `present` is set to false (and `value` to 0) for a gap.
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_get(
    panel: *const GapcastPanel,
    station: usize,
    channel: usize,
    hour: usize,
    value: *mut f64,
    present: *mut bool,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let value = out_arg(value, "value")?;
        let present = out_arg(present, "present")?;
        if station >= p.n_stations() || channel >= p.n_channels() || hour >= p.n_hours() {
            return Err(invalid("cell index out of range"));
        }
        match p.get(station, channel, hour) {
            Some(v) => {
                *value = v;
                *present = true;
            }
            None => {
                *value = 0.0;
                *present = false;
            }
        }
        Ok(())
    })
}

/// Station AQI for every hour, written station-major into `values` and
/// `present` (each of length `len` = stations x hours).
#[no_mangle]
pub unsafe extern "C" fn gapcast_panel_station_aqi(
    panel: *const GapcastPanel,
    table: *const GapcastBreakpoints,
    values: *mut f64,
    present: *mut bool,
    len: usize,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let table = &ref_arg(table, "table")?.0;
        if values.is_null() {
            return Err(null("values"));
        }
        if present.is_null() {
            return Err(null("present"));
        }
        let need = p.n_stations() * p.n_hours();
        if len != need {
            return Err(invalid(format!(
                "buffers hold {len} cells, panel has {need}"
            )));
        }
        let aqi = station_aqi(p, table)?;
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&aqi.values);
        std::slice::from_raw_parts_mut(present, len).copy_from_slice(&aqi.mask);
        Ok(())
    })
}

/// Train imputers on `panel`. `params_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn gapcast_imputer_train(
    panel: *const GapcastPanel,
    params_json: *const c_char,
    out: *mut *mut GapcastImputer,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let out = out_arg(out, "out")?;
        let params: ImputerParams = if params_json.is_null() {
            ImputerParams::default()
        } else {
            ImputerParams::from_json(str_arg(params_json, "params_json")?)?
        };
        *out = boxed(GapcastImputer(train_imputers(p, &params)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_imputer_load(
    path: *const c_char,
    out: *mut *mut GapcastImputer,
) -> GapcastStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(GapcastImputer(ImputerGrid::load(path)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_imputer_save(
    imputer: *const GapcastImputer,
    path: *const c_char,
) -> GapcastStatus {
    guard(|| {
        let grid = &ref_arg(imputer, "imputer")?.0;
        grid.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of trained (station, pollutant) models.
#[no_mangle]
pub unsafe extern "C" fn gapcast_imputer_len(
    imputer: *const GapcastImputer,
    out: *mut usize,
) -> GapcastStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(imputer, "imputer")?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gapcast_imputer_free(imputer: *mut GapcastImputer) {
    if !imputer.is_null() {
        drop(Box::from_raw(imputer));
    }
}

/// Fill gaps in `panel`, returning a new panel handle.
#[no_mangle]
pub unsafe extern "C" fn gapcast_impute(
    panel: *const GapcastPanel,
    imputer: *const GapcastImputer,
    out: *mut *mut GapcastPanel,
) -> GapcastStatus {
    guard(|| {
        let p = &ref_arg(panel, "panel")?.0;
        let grid = &ref_arg(imputer, "imputer")?.0;
        let out = out_arg(out, "out")?;
        *out = boxed(GapcastPanel(impute(p, grid)?.0));
        Ok(())
    })
}

/// Run every configured pipeline run from a JSON config file and return
/// the report CSV as a caller-owned string.
#[no_mangle]
pub unsafe extern "C" fn gapcast_eval(
    config_path: *const c_char,
    report_csv: *mut *mut c_char,
) -> GapcastStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let out = out_arg(report_csv, "report_csv")?;
        *out = ptr::null_mut();
        let cfg = PipelineConfig::load(path)?;
        let data = PipelineData::load(&cfg)?;
        let report = run_pipeline(&data, &cfg)?.report;
        *out = c_string(report.to_csv_string(None)?)?;
        Ok(())
    })
}
