//! C interface to the plc-mimo generator, channel files, metrics and
//! capacity.
//!
//! Every object crosses the boundary as an opaque handle released with its
//! `_free` function. Fallible calls return a [`PlcStatus`]; the message of
//! the last failure on the calling thread is available from
//! [`plc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use plc_mimo::capacity::{capacity_ccdf, NoiseModel, PsdMask};
use plc_mimo::characterization::{characterize, CharacterizeOptions};
use plc_mimo::covariance::CacheKey;
use plc_mimo::generator::SyntheticGenerator;
use plc_mimo::io::{read_channel_file, write_channel_file, ParameterFile};
use plc_mimo::metrics::{compute_metrics, summarize};
use plc_mimo::{ChannelSet, Error, MimoGrid, ModelParameters, Scheme};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlcStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    Parameter = 4,
    Numerical = 5,
    InsufficientData = 6,
    DegenerateChannel = 7,
    Parse = 8,
    Io = 9,
    CacheMismatch = 10,
    /// A Rust panic was caught at the boundary.
    Internal = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlcScheme {
    Siso = 0,
    Mimo2x2 = 1,
    Mimo2x3 = 2,
}

impl From<PlcScheme> for Scheme {
    fn from(s: PlcScheme) -> Self {
        match s {
            PlcScheme::Siso => Scheme::Siso,
            PlcScheme::Mimo2x2 => Scheme::Mimo2x2,
            PlcScheme::Mimo2x3 => Scheme::Mimo2x3,
        }
    }
}

/// Pooled metric statistics of a channel set. `kappa_*` is NaN for SISO.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlcSummary {
    pub n_realizations: usize,
    pub n_modes: usize,
    pub acg_db_mean: f64,
    pub acg_db_std: f64,
    pub rms_ds_us_mean: f64,
    pub rms_ds_us_std: f64,
    pub cb_khz_mean: f64,
    pub cb_khz_std: f64,
    pub kappa_db_mean: f64,
    pub kappa_db_std: f64,
}

/// Model parameters.
pub struct PlcParams(ModelParameters);

/// A factored model on a fixed grid.
pub struct PlcGenerator(SyntheticGenerator);

/// Channel realizations on a common grid.
pub struct PlcChannelSet(ChannelSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PlcStatus {
    match e {
        Error::InvalidInput(_) => PlcStatus::InvalidInput,
        Error::DimensionMismatch { .. } => PlcStatus::DimensionMismatch,
        Error::DegenerateChannel { .. } => PlcStatus::DegenerateChannel,
        Error::Parameter(_) => PlcStatus::Parameter,
        Error::Numerical(_) | Error::SingularFit(_) => PlcStatus::Numerical,
        Error::InsufficientData(_) | Error::UndefinedCorrelation { .. } => PlcStatus::InsufficientData,
        Error::Parse { .. } => PlcStatus::Parse,
        Error::CacheMismatch(_) => PlcStatus::CacheMismatch,
        Error::Io(_) => PlcStatus::Io,
    }
}

enum Failure {
    Argument(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, recording any failure or panic for [`plc_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PlcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PlcStatus::Ok
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(msg);
            PlcStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            PlcStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Argument("path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Argument("path is not valid UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Argument("handle is null"))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Argument("output pointer is null"))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn plc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn plc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The reference in-home parameter set.
#[no_mangle]
pub extern "C" fn plc_params_default() -> *mut PlcParams {
    boxed(PlcParams(ModelParameters::default()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_params_read(path: *const c_char, out: *mut *mut PlcParams) -> PlcStatus {
    guard(|| {
        let out = out_arg(out)?;
        let file = ParameterFile::read(&path_arg(path)?)?;
        *out = boxed(PlcParams(file.params));
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn plc_params_write(params: *const PlcParams, path: *const c_char) -> PlcStatus {
    guard(|| {
        let p = handle(params)?;
        ParameterFile::new(p.0).write(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn plc_params_free(params: *mut PlcParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Factors the model covariance for `scheme` on the default grid, keeping
/// every `decimate`-th bin. With a non-null `cache_dir` the square root is
/// reused from, or stored in, that directory.
///
/// # Safety
/// `params` must come from this library, `cache_dir` must be null or
/// NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_generator_new(
    params: *const PlcParams,
    scheme: PlcScheme,
    decimate: usize,
    cache_dir: *const c_char,
    out: *mut *mut PlcGenerator,
) -> PlcStatus {
    guard(|| {
        let p = &handle(params)?.0;
        let out = out_arg(out)?;
        let grid = MimoGrid::for_scheme(scheme.into()).decimate(decimate)?;
        let gen = if cache_dir.is_null() {
            SyntheticGenerator::new(p, &grid, false)?.0
        } else {
            let dir = path_arg(cache_dir)?;
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            let path = dir.join(CacheKey::new(p, &grid, false).file_name());
            SyntheticGenerator::with_cache(p, &grid, false, &path)?.0
        };
        *out = boxed(PlcGenerator(gen));
        Ok(())
    })
}

/// # Safety
/// `generator` must come from this library and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn plc_generator_free(generator: *mut PlcGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Realizations `0..n` of the stream family rooted at `seed`.
///
/// # Safety
/// `generator` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_generate(
    generator: *const PlcGenerator,
    n: usize,
    seed: u64,
    out: *mut *mut PlcChannelSet,
) -> PlcStatus {
    guard(|| {
        let g = handle(generator)?;
        let out = out_arg(out)?;
        *out = boxed(PlcChannelSet(g.0.generate(n, seed)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_read(path: *const c_char, out: *mut *mut PlcChannelSet) -> PlcStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = boxed(PlcChannelSet(read_channel_file(&path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_write(set: *const PlcChannelSet, path: *const c_char) -> PlcStatus {
    guard(|| {
        write_channel_file(&path_arg(path)?, &handle(set)?.0)?;
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_free(set: *mut PlcChannelSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of realizations and the `(n_rx, n_tx, n_freq)` shape of each.
/// Any output pointer may be null.
///
/// # Safety
/// `set` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_dims(
    set: *const PlcChannelSet,
    n_realizations: *mut usize,
    n_rx: *mut usize,
    n_tx: *mut usize,
    n_freq: *mut usize,
) -> PlcStatus {
    guard(|| {
        let s = &handle(set)?.0;
        let g = s.grid();
        for (p, v) in [(n_realizations, s.len()), (n_rx, g.n_rx()), (n_tx, g.n_tx()), (n_freq, g.n_freq())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the bin frequencies (Hz) into `out`, which holds `len` values.
///
/// # Safety
/// `set` must come from this library and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_frequencies(set: *const PlcChannelSet, out: *mut f64, len: usize) -> PlcStatus {
    guard(|| {
        let freqs = handle(set)?.0.grid().frequencies();
        if out.is_null() || len != freqs.len() {
            return Err(Failure::Argument("frequency buffer must hold n_freq values"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&freqs);
        Ok(())
    })
}

/// Copies realization `r` into `out` as interleaved `(re, im)` pairs in
/// `[rx][tx][bin]` order; `len` counts doubles and must be
/// `2·n_rx·n_tx·n_freq`.
///
/// # Safety
/// `set` must come from this library and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn plc_channels_copy(set: *const PlcChannelSet, r: usize, out: *mut f64, len: usize) -> PlcStatus {
    guard(|| {
        let s = &handle(set)?.0;
        let h = s.realizations().get(r).ok_or(Failure::Argument("realization index out of range"))?;
        if out.is_null() || len != 2 * h.len() {
            return Err(Failure::Argument("buffer must hold 2·n_rx·n_tx·n_freq values"));
        }
        let buf = std::slice::from_raw_parts_mut(out, len);
        for (k, v) in h.iter().enumerate() {
            buf[2 * k] = v.re;
            buf[2 * k + 1] = v.im;
        }
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_metrics_summary(set: *const PlcChannelSet, out: *mut PlcSummary) -> PlcStatus {
    guard(|| {
        let s = &handle(set)?.0;
        let out = out_arg(out)?;
        let m = summarize(&compute_metrics(s)?, None)?;
        let kappa = m.kappa_db.map_or((f64::NAN, f64::NAN), |k| (k.mean, k.std));
        *out = PlcSummary {
            n_realizations: m.n_realizations,
            n_modes: m.n_modes,
            acg_db_mean: m.acg_db.mean,
            acg_db_std: m.acg_db.std,
            rms_ds_us_mean: m.rms_ds_us.mean,
            rms_ds_us_std: m.rms_ds_us.std,
            cb_khz_mean: m.cb_khz.mean,
            cb_khz_std: m.cb_khz.std,
            kappa_db_mean: kappa.0,
            kappa_db_std: kappa.1,
        };
        Ok(())
    })
}

/// Water-filling capacity (bit/s) of every realization under the default
/// noise model and PSD mask; `out` holds `len` = number of realizations.
///
/// # Safety
/// `set` must come from this library and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn plc_capacity(set: *const PlcChannelSet, out: *mut f64, len: usize) -> PlcStatus {
    guard(|| {
        let s = &handle(set)?.0;
        if out.is_null() || len != s.len() {
            return Err(Failure::Argument("capacity buffer must hold one value per realization"));
        }
        let c = capacity_ccdf(s, &NoiseModel::default(), &PsdMask::default())?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&c.per_realization);
        Ok(())
    })
}

/// Estimates model parameters from a channel set.
///
/// # Safety
/// `set` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plc_characterize(set: *const PlcChannelSet, out: *mut *mut PlcParams) -> PlcStatus {
    guard(|| {
        let s = &handle(set)?.0;
        let out = out_arg(out)?;
        let c = characterize(s, &CharacterizeOptions::default())?;
        *out = boxed(PlcParams(c.params));
        Ok(())
    })
}

/// Copies the 15 model coefficients into `out` in parameter-file order:
/// mu slope and intercept, non-CM and CM sigma slope and intercept, non-CM
/// and CM power-law `a, b, c`, GEV shape, location and scale.
///
/// # Safety
/// `params` must come from this library and `out` point to 15 writable values.
#[no_mangle]
pub unsafe extern "C" fn plc_params_coefficients(params: *const PlcParams, out: *mut f64) -> PlcStatus {
    guard(|| {
        let p = &handle(params)?.0;
        if out.is_null() {
            return Err(Failure::Argument("output pointer is null"));
        }
        let v = [
            p.mu_fit.slope_db_per_ghz,
            p.mu_fit.intercept_db,
            p.sigma_fit_nocm.slope_db_per_ghz,
            p.sigma_fit_nocm.intercept_db,
            p.sigma_fit_cm.slope_db_per_ghz,
            p.sigma_fit_cm.intercept_db,
            p.antidiag_nocm.a,
            p.antidiag_nocm.b,
            p.antidiag_nocm.c,
            p.antidiag_cm_power.a,
            p.antidiag_cm_power.b,
            p.antidiag_cm_power.c,
            p.gev.shape,
            p.gev.location,
            p.gev.scale,
        ];
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_arguments_are_rejected() {
        let mut out = ptr::null_mut();
        let s = unsafe { plc_params_read(ptr::null(), &mut out) };
        assert_eq!(s, PlcStatus::InvalidArgument);
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(plc_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "path is null");
    }

    #[test]
    fn library_errors_map_to_status() {
        assert_eq!(status_of(&Error::Parameter("x".into())), PlcStatus::Parameter);
        assert_eq!(status_of(&Error::Parse { line: 3, message: "x".into() }), PlcStatus::Parse);
        assert_eq!(
            status_of(&Error::UndefinedCorrelation { coordinate: 0, label: "x".into() }),
            PlcStatus::InsufficientData
        );
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, PlcStatus::Internal);
    }

    #[test]
    fn success_clears_the_message() {
        set_last_error("old");
        assert_eq!(guard(|| Ok(())), PlcStatus::Ok);
        let msg = unsafe { CStr::from_ptr(plc_last_error_message()) };
        assert!(msg.to_bytes().is_empty());
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(plc_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
