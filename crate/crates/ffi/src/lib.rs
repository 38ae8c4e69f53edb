//! C ABI over `pgcs`.
//!
//! Every fallible function returns a [`PgcsStatus`]; on failure a message
//! is available from [`pgcs_last_error_message`] on the same thread.
//! Objects are opaque handles created by `*_load`/`*_new`-style functions
//! and released with the matching `*_free`. Output pointers are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use num_complex::Complex64;
use pgcs::bps::{bps_hard, BpsConfig};
use pgcs::channel::{linewidth_to_sigma_phi, snr_db_to_sigma_n, ChannelParams};
use pgcs::constellation::Constellation;
use pgcs::evalsuite::{run_point, PointSpec, System};
use pgcs::rng::RngStreams;
use pgcs::shaping::ShapingModel;
use pgcs::trainer::load_checkpoint;
use pgcs::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Numerical = 5,
    Checkpoint = 6,
    Io = 7,
    Panic = 8,
}

/// Trained mapper/demapper loaded from a checkpoint.
pub struct PgcsModel {
    model: ShapingModel,
    symbol_rate: f64,
    bps: BpsConfig,
}

/// Labeled constellation.
pub struct PgcsConstellation {
    inner: Constellation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(e: &Error) -> PgcsStatus {
    match e {
        Error::InvalidArgument(_) | Error::Shape(_) | Error::GraphConsumed => PgcsStatus::InvalidArgument,
        Error::Parse { .. } | Error::Config(_) => PgcsStatus::Parse,
        Error::Validation(_) | Error::DegenerateConstellation => PgcsStatus::Validation,
        Error::NonFinite { .. } | Error::DegenerateBatch => PgcsStatus::Numerical,
        Error::VersionMismatch { .. } | Error::Checkpoint(_) => PgcsStatus::Checkpoint,
        Error::Io(_) => PgcsStatus::Io,
    }
}

enum Failure {
    Status(PgcsStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(PgcsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PgcsStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PgcsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(PgcsStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn pgcs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn pgcs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Noise standard deviation for an SNR in dB at unit symbol energy.
#[no_mangle]
pub extern "C" fn pgcs_snr_db_to_sigma_n(snr_db: f64) -> f64 {
    snr_db_to_sigma_n(snr_db)
}

/// Per-symbol Wiener phase increment standard deviation.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_linewidth_to_sigma_phi(linewidth_hz: f64, symbol_rate: f64, out: *mut f64) -> PgcsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = linewidth_to_sigma_phi(linewidth_hz, symbol_rate)?;
        Ok(())
    })
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string, `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_model_load(path: *const c_char, out: *mut *mut PgcsModel) -> PgcsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ck = load_checkpoint(&path_arg(path)?)?;
        let bps = BpsConfig {
            num_test_angles: ck.config.bps.num_test_angles,
            window_size: ck.config.bps.window_size,
            angle_min: ck.config.bps.angle_min,
            angle_max: ck.config.bps.angle_max,
            ..BpsConfig::default()
        };
        *out = Box::into_raw(Box::new(PgcsModel {
            model: ck.model,
            symbol_rate: ck.config.symbol_rate,
            bps,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`pgcs_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgcs_model_free(model: *mut PgcsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Bits per symbol, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pgcs_model_bits(model: *const PgcsModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.bits() as u32)
}

/// Transmit constellation for the given channel condition.
///
/// # Safety
/// `model` must be a live handle, `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_model_constellation(
    model: *const PgcsModel,
    snr_db: f64,
    linewidth_hz: f64,
    out: *mut *mut PgcsConstellation,
) -> PgcsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = ChannelParams::from_physical(snr_db, linewidth_hz, m.symbol_rate)?;
        *out = Box::into_raw(Box::new(PgcsConstellation {
            inner: m.model.constellation(p)?,
        }));
        Ok(())
    })
}

/// BMI in bits per symbol at one channel point with the hard BPS. Both ends
/// are conditioned on `snr_db + offset_db`.
///
/// # Safety
/// `model` must be a live handle, `out_bmi` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_model_run_point(
    model: *const PgcsModel,
    snr_db: f64,
    linewidth_hz: f64,
    offset_db: f64,
    symbols: usize,
    seed: u64,
    out_bmi: *mut f64,
) -> PgcsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = out_bmi.as_mut().ok_or_else(|| null("out_bmi"))?;
        let truth = ChannelParams::from_physical(snr_db, linewidth_hz, m.symbol_rate)?;
        let assumed = ChannelParams::from_physical(snr_db + offset_db, linewidth_hz, m.symbol_rate)?;
        let spec = PointSpec::new(symbols, m.bps);
        *out = run_point(System::Model(&m.model), truth, assumed, &spec, &mut RngStreams::new(seed))?.bmi;
        Ok(())
    })
}

/// Unit-power Gray square QAM with `bits` bits per symbol.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_square_qam(bits: u32, out: *mut *mut PgcsConstellation) -> PgcsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Box::into_raw(Box::new(PgcsConstellation {
            inner: Constellation::square_qam(bits as usize)?,
        }));
        Ok(())
    })
}

/// Builds a constellation from `order` points and labels.
///
/// # Safety
/// `re`, `im` and `labels` must each point to `order` readable elements,
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_new(
    bits: u32,
    re: *const f64,
    im: *const f64,
    labels: *const u32,
    order: usize,
    out: *mut *mut PgcsConstellation,
) -> PgcsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if re.is_null() || im.is_null() || labels.is_null() {
            return Err(null("point or label array"));
        }
        let re = std::slice::from_raw_parts(re, order);
        let im = std::slice::from_raw_parts(im, order);
        let labels = std::slice::from_raw_parts(labels, order).to_vec();
        let points = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        *out = Box::into_raw(Box::new(PgcsConstellation {
            inner: Constellation::new(bits as usize, points, labels)?,
        }));
        Ok(())
    })
}

/// Reads a constellation text file.
///
/// # Safety
/// `path` must be a nul-terminated string, `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_read(path: *const c_char, out: *mut *mut PgcsConstellation) -> PgcsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let file = std::fs::File::open(path_arg(path)?).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(PgcsConstellation {
            inner: Constellation::read(std::io::BufReader::new(file))?,
        }));
        Ok(())
    })
}

/// Writes a constellation text file.
///
/// # Safety
/// `c` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_write(c: *const PgcsConstellation, path: *const c_char) -> PgcsStatus {
    guard(|| {
        let c = deref(c, "constellation")?;
        std::fs::write(path_arg(path)?, c.inner.to_text()).map_err(Error::from)?;
        Ok(())
    })
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_order(c: *const PgcsConstellation) -> usize {
    c.as_ref().map_or(0, |c| c.inner.order())
}

/// Bits per symbol, 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_bits(c: *const PgcsConstellation) -> u32 {
    c.as_ref().map_or(0, |c| c.inner.bits_per_symbol() as u32)
}

/// Copies points and labels into caller buffers of length `len`, which
/// must equal the constellation order. Any of the three may be null.
///
/// # Safety
/// `c` must be a live handle; non-null buffers must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_copy(
    c: *const PgcsConstellation,
    re: *mut f64,
    im: *mut f64,
    labels: *mut u32,
    len: usize,
) -> PgcsStatus {
    guard(|| {
        let c = deref(c, "constellation")?;
        if len != c.inner.order() {
            return Err(Failure::Status(
                PgcsStatus::InvalidArgument,
                format!("buffer length {len} does not match order {}", c.inner.order()),
            ));
        }
        for (i, p) in c.inner.points().iter().enumerate() {
            if !re.is_null() {
                *re.add(i) = p.re;
            }
            if !im.is_null() {
                *im.add(i) = p.im;
            }
            if !labels.is_null() {
                *labels.add(i) = c.inner.labels()[i];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgcs_constellation_free(c: *mut PgcsConstellation) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Hard blind phase search of `len` received symbols. Writes the decided
/// angle per symbol to `theta_out` and, if non-null, the de-rotated symbols
/// to `re_out`/`im_out`.
///
/// # Safety
/// `c` must be a live handle; `z_re`, `z_im` and `theta_out` must hold
/// `len` elements, as must `re_out`/`im_out` when non-null.
#[no_mangle]
pub unsafe extern "C" fn pgcs_bps_hard(
    c: *const PgcsConstellation,
    z_re: *const f64,
    z_im: *const f64,
    len: usize,
    num_test_angles: usize,
    window_size: usize,
    angle_min: f64,
    angle_max: f64,
    theta_out: *mut f64,
    re_out: *mut f64,
    im_out: *mut f64,
) -> PgcsStatus {
    guard(|| {
        let c = deref(c, "constellation")?;
        if z_re.is_null() || z_im.is_null() || theta_out.is_null() {
            return Err(null("input or output array"));
        }
        let z: Vec<Complex64> = std::slice::from_raw_parts(z_re, len)
            .iter()
            .zip(std::slice::from_raw_parts(z_im, len))
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let cfg = BpsConfig {
            num_test_angles,
            window_size,
            angle_min,
            angle_max,
            ..BpsConfig::default()
        };
        let out = bps_hard(&z, &c.inner, &cfg)?;
        std::slice::from_raw_parts_mut(theta_out, len).copy_from_slice(&out.theta_hat);
        for (i, x) in out.x_hat.iter().enumerate() {
            if !re_out.is_null() {
                *re_out.add(i) = x.re;
            }
            if !im_out.is_null() {
                *im_out.add(i) = x.im;
            }
        }
        Ok(())
    })
}
