//! C interface to the qpkam experiment runner.
//!
//! Every function returns a [`QpkamStatus`]; on failure a message is kept per
//! thread and can be read with [`qpkam_last_error`]. Handles are opaque and
//! released with the matching `_free` function.

use qpkam::cli::commands::{kam_family, measure_inputs, nm_setup, toy_hamiltonian};
use qpkam::cli::{run, CliError, Command, ExperimentConfig};
use qpkam::measure::estimate_excluded_measure;
use qpkam::nash_moser::nm_iterate;
use qpkam::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result codes; the first four match the exit codes of the command line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpkamStatus {
    Ok = 0,
    Config = 2,
    Compute = 3,
    VerifyFailed = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Io = 12,
    OutOfRange = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpkamCommand {
    Reduce = 0,
    Kam = 1,
    Nashmoser = 2,
    Measure = 3,
    Verify = 4,
}

/// A validated experiment configuration.
pub struct QpkamConfig {
    inner: ExperimentConfig,
}

/// A sequence of doubles produced by a run.
pub struct QpkamSeries {
    values: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: QpkamStatus, msg: impl AsRef<str>) -> QpkamStatus {
    set_error(msg.as_ref());
    status
}

fn from_cli(e: CliError) -> QpkamStatus {
    let status = match &e {
        CliError::Io(_) => QpkamStatus::Io,
        _ if e.exit_code() == qpkam::cli::EXIT_CONFIG => QpkamStatus::Config,
        _ => QpkamStatus::Compute,
    };
    fail(status, e.to_string())
}

fn from_lib(module: &str, e: Error) -> QpkamStatus {
    let status = if matches!(e, Error::Config(_)) { QpkamStatus::Config } else { QpkamStatus::Compute };
    fail(status, format!("{module}: {e}"))
}

fn guard(f: impl FnOnce() -> QpkamStatus) -> QpkamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == QpkamStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(QpkamStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, QpkamStatus> {
    if p.is_null() {
        return Err(fail(QpkamStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(QpkamStatus::InvalidUtf8, "string is not UTF-8"))
}

unsafe fn config<'a>(p: *const QpkamConfig) -> Result<&'a ExperimentConfig, QpkamStatus> {
    p.as_ref().map(|c| &c.inner).ok_or_else(|| fail(QpkamStatus::NullPointer, "null config"))
}

unsafe fn emit<T>(out: *mut *mut T, v: T) -> QpkamStatus {
    if out.is_null() {
        return fail(QpkamStatus::NullPointer, "null output pointer");
    }
    *out = Box::into_raw(Box::new(v));
    QpkamStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qpkam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the length needed including the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qpkam_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Parses and validates a TOML experiment description.
///
/// # Safety
/// `src` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_config_from_toml(src: *const c_char, out: *mut *mut QpkamConfig) -> QpkamStatus {
    guard(|| {
        let s = tri!(text(src));
        match ExperimentConfig::from_toml(s) {
            Ok(inner) => emit(out, QpkamConfig { inner }),
            Err(e) => from_lib("config", e),
        }
    })
}

/// Reads a TOML experiment description from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_config_from_file(path: *const c_char, out: *mut *mut QpkamConfig) -> QpkamStatus {
    guard(|| {
        let p = tri!(text(path));
        match std::fs::read_to_string(p) {
            Ok(s) => match ExperimentConfig::from_toml(&s) {
                Ok(inner) => emit(out, QpkamConfig { inner }),
                Err(e) => from_lib("config", e),
            },
            Err(e) => fail(QpkamStatus::Config, format!("config: {p}: {e}")),
        }
    })
}

/// Overrides the seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpkam_config_set_seed(cfg: *mut QpkamConfig, seed: u64) -> QpkamStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            QpkamStatus::Ok
        }
        None => fail(QpkamStatus::NullPointer, "null config"),
    })
}

/// Number of frequency samples of the configured grid.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpkam_config_samples(cfg: *const QpkamConfig) -> usize {
    config(cfg).map(|c| c.omegas().len()).unwrap_or(0)
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qpkam_config_free(cfg: *mut QpkamConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a subcommand and writes its artifacts into `out_dir`. A failing
/// `verify` returns `QPKAM_STATUS_VERIFY_FAILED`.
///
/// # Safety
/// `cfg` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qpkam_run(cfg: *const QpkamConfig, cmd: QpkamCommand, out_dir: *const c_char, threads: u32) -> QpkamStatus {
    guard(|| {
        let c = tri!(config(cfg));
        let dir = tri!(text(out_dir));
        let cmd = match cmd {
            QpkamCommand::Reduce => Command::Reduce,
            QpkamCommand::Kam => Command::Kam,
            QpkamCommand::Nashmoser => Command::Nashmoser,
            QpkamCommand::Measure => Command::Measure,
            QpkamCommand::Verify => Command::Verify,
        };
        match run(cmd, c, Path::new(dir), threads as usize) {
            Ok(o) if o.passed == Some(false) => fail(QpkamStatus::VerifyFailed, "verify: invariant checks failed"),
            Ok(_) => QpkamStatus::Ok,
            Err(e) => from_cli(e),
        }
    })
}

fn sample_index(c: &ExperimentConfig, sample: usize) -> Result<Vec<f64>, QpkamStatus> {
    c.omegas().get(sample).cloned().ok_or_else(|| fail(QpkamStatus::OutOfRange, format!("sample {sample} out of range")))
}

/// KAM series `|R_nu|` of one frequency sample: the initial norm followed by
/// the norm after each step.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_kam_norms(cfg: *const QpkamConfig, sample: usize, out: *mut *mut QpkamSeries) -> QpkamStatus {
    guard(|| {
        let c = tri!(config(cfg));
        tri!(sample_index(c, sample));
        let fam = match kam_family(c) {
            Ok(f) => f,
            Err(e) => return from_cli(e),
        };
        let s = &fam.states[sample];
        let values = s.history.first().map(|r| r.norm_before).into_iter().chain(s.history.iter().map(|r| r.norm_after)).collect();
        emit(out, QpkamSeries { values })
    })
}

/// Newton residuals `|F(U_n)|` of one frequency sample.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_nm_residuals(cfg: *const QpkamConfig, sample: usize, out: *mut *mut QpkamSeries) -> QpkamStatus {
    guard(|| {
        let c = tri!(config(cfg));
        let omega = tri!(sample_index(c, sample));
        let h = match toy_hamiltonian(c, &omega) {
            Ok(h) => h,
            Err(e) => return from_lib("nash-moser-solver", e),
        };
        let (sched, nm) = match nm_setup(c) {
            Ok(v) => v,
            Err(e) => return from_lib("nash-moser-solver", e),
        };
        match nm_iterate(&h, &sched, &nm) {
            Ok(r) => emit(out, QpkamSeries { values: r.residuals() }),
            Err(e) => from_lib("nash-moser-solver", e),
        }
    })
}

/// Excluded fractions of the measure sweep, one per configured `gamma`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_measure_fractions(cfg: *const QpkamConfig, threads: u32, out: *mut *mut QpkamSeries) -> QpkamStatus {
    guard(|| {
        let c = tri!(config(cfg));
        let (src, bx, sampler) = match measure_inputs(c, threads as usize) {
            Ok(v) => v,
            Err(e) => return from_lib("measure-lab", e),
        };
        let m = &c.measure;
        match estimate_excluded_measure(&src, &bx, &m.gammas, m.tau, &c.scan_config(), &sampler) {
            Ok(r) => emit(out, QpkamSeries { values: r.estimates.iter().map(|e| e.fraction).collect() }),
            Err(e) => from_lib("measure-lab", e),
        }
    })
}

/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpkam_series_len(s: *const QpkamSeries) -> usize {
    s.as_ref().map_or(0, |s| s.values.len())
}

/// Reads entry `i`.
///
/// # Safety
/// `s` must be a live handle; `value` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qpkam_series_get(s: *const QpkamSeries, i: usize, value: *mut f64) -> QpkamStatus {
    guard(|| {
        let Some(s) = s.as_ref() else { return fail(QpkamStatus::NullPointer, "null series") };
        if value.is_null() {
            return fail(QpkamStatus::NullPointer, "null output pointer");
        }
        match s.values.get(i) {
            Some(v) => {
                *value = *v;
                QpkamStatus::Ok
            }
            None => fail(QpkamStatus::OutOfRange, format!("index {i} >= {}", s.values.len())),
        }
    })
}

/// Copies up to `len` entries into `buf` and returns the number copied.
///
/// # Safety
/// `s` must be a live handle; `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qpkam_series_copy(s: *const QpkamSeries, buf: *mut f64, len: usize) -> usize {
    match (s.as_ref(), buf.is_null()) {
        (Some(s), false) => {
            let n = s.values.len().min(len);
            std::ptr::copy_nonoverlapping(s.values.as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qpkam_series_free(s: *mut QpkamSeries) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
