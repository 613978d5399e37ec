//! C ABI over `knockoff-esd`.
//!
//! Objects are opaque handles created by `ke_*_new`-style constructors and
//! released with the matching `ke_*_free`. Every fallible call returns a
//! [`KeStatus`]; on failure [`ke_last_error_message`] describes the error.
//! Output parameters are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use knockoff_esd::esd;
use knockoff_esd::filter::{knockoff_threshold, ThresholdOffset};
use knockoff_esd::gaussian::{build_cov, CovMatrix, CovModel};
use knockoff_esd::knockoff::{ci_exists, KnockoffSpec, Mechanism};
use knockoff_esd::sim::{parse_config_str, run_experiment, write_csv};
use knockoff_esd::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotSymmetric = 3,
    NotPsd = 4,
    Singular = 5,
    Infeasible = 6,
    DimensionMismatch = 7,
    SupportTooLarge = 8,
    NotForest = 9,
    Config = 10,
    Io = 11,
    Numerical = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeMechanism {
    Equi = 0,
    Asdp = 1,
    Ci = 2,
}

impl From<KeMechanism> for Mechanism {
    fn from(m: KeMechanism) -> Self {
        match m {
            KeMechanism::Equi => Mechanism::Equi,
            KeMechanism::Asdp => Mechanism::Asdp,
            KeMechanism::Ci => Mechanism::Ci,
        }
    }
}

/// Covariance matrix with its Cholesky factor and precision.
pub struct KeCov(CovMatrix);

/// Knockoff construction for one covariance and mechanism.
pub struct KeKnockoff(KnockoffSpec);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> KeStatus {
    match e {
        Error::InvalidArgument(_) => KeStatus::InvalidArgument,
        Error::NotSymmetric { .. } => KeStatus::NotSymmetric,
        Error::NotPsd { .. } => KeStatus::NotPsd,
        Error::Singular { .. } => KeStatus::Singular,
        Error::Infeasible { .. } => KeStatus::Infeasible,
        Error::DimensionMismatch(_) => KeStatus::DimensionMismatch,
        Error::SupportTooLarge { .. } => KeStatus::SupportTooLarge,
        Error::NotForest(_) => KeStatus::NotForest,
        Error::Config(_) => KeStatus::Config,
        Error::Io(_) => KeStatus::Io,
        Error::Trial { source, .. } => status_of(source),
        _ => KeStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KeStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            KeStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            KeStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn string(p: *const c_char, name: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|e| Failure::Lib(Error::InvalidArgument(format!("`{name}` is not UTF-8: {e}"))))
}

/// Message for the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ke_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn new_cov(model: CovModel, out: *mut *mut KeCov) -> Result<(), Failure> {
    let cov = build_cov(&model)?;
    unsafe { write(out, Box::into_raw(Box::new(KeCov(cov))), "out") }
}

/// Heap-ordered binary tree with correlation `rho` on every edge.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ke_cov_binary_tree(p: usize, rho: f64, out: *mut *mut KeCov) -> KeStatus {
    guard(|| new_cov(CovModel::BinaryTree { p, rho }, out))
}

/// Markov chain with `p - 1` adjacent correlations.
///
/// # Safety
/// `rho_seq` must point to `p - 1` doubles (may be NULL when `p <= 1`);
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ke_cov_markov_chain(p: usize, rho_seq: *const f64, out: *mut *mut KeCov) -> KeStatus {
    guard(|| {
        let seq = slice(rho_seq, p.saturating_sub(1), "rho_seq")?.to_vec();
        new_cov(CovModel::MarkovChain { p, rho_seq: seq }, out)
    })
}

/// Explicit `p x p` covariance in row-major order.
///
/// # Safety
/// `data` must point to `p * p` doubles; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ke_cov_explicit(data: *const f64, p: usize, out: *mut *mut KeCov) -> KeStatus {
    guard(|| {
        if p == 0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()).into());
        }
        let values = slice(data, p * p, "data")?;
        new_cov(
            CovModel::Explicit {
                matrix: DMatrix::from_row_slice(p, p, values),
            },
            out,
        )
    })
}

/// Dimension of `cov`, or 0 for NULL.
///
/// # Safety
/// `cov` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ke_cov_dim(cov: *const KeCov) -> usize {
    cov.as_ref().map_or(0, |c| c.0.dim())
}

/// # Safety
/// `cov` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ke_cov_free(cov: *mut KeCov) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Builds the knockoff construction for `mechanism`.
///
/// # Safety
/// `cov` must be a live handle; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ke_knockoff_new(
    cov: *const KeCov,
    mechanism: KeMechanism,
    out: *mut *mut KeKnockoff,
) -> KeStatus {
    guard(|| {
        let cov = deref(cov, "cov")?;
        let spec = KnockoffSpec::for_mechanism(&cov.0, mechanism.into())?;
        write(out, Box::into_raw(Box::new(KeKnockoff(spec))), "out")
    })
}

/// Dimension `p` of the construction, or 0 for NULL.
///
/// # Safety
/// `ko` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ke_knockoff_dim(ko: *const KeKnockoff) -> usize {
    ko.as_ref().map_or(0, |k| k.0.dim())
}

/// Copies the `s` vector into `out`, which must hold exactly `len = p` values.
///
/// # Safety
/// `ko` must be a live handle; `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ke_knockoff_s(ko: *const KeKnockoff, out: *mut f64, len: usize) -> KeStatus {
    guard(|| {
        let s = deref(ko, "ko")?.0.s();
        if len != s.len() {
            return Err(Error::DimensionMismatch(format!("buffer holds {len} values, s has {}", s.len())).into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(s.as_slice());
        Ok(())
    })
}

/// # Safety
/// `ko` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ke_knockoff_free(ko: *mut KeKnockoff) {
    if !ko.is_null() {
        drop(Box::from_raw(ko));
    }
}

/// Whether conditional-independence knockoffs exist for `cov`.
///
/// # Safety
/// `cov` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_ci_exists(cov: *const KeCov, out: *mut bool) -> KeStatus {
    guard(|| {
        let e = ci_exists(&deref(cov, "cov")?.0)?;
        write(out, e.exists, "out")
    })
}

/// Lévy-Prokhorov distance of the empirical law of `values` from a point mass at zero.
///
/// # Safety
/// `values` must point to `len` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_lp_distance_zero(values: *const f64, len: usize, out: *mut f64) -> KeStatus {
    guard(|| {
        let lp = esd::lp_distance_zero(slice(values, len, "values")?)?;
        write(out, lp, "out")
    })
}

/// # Safety
/// `cov` must be a live handle; `out_lp` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_esd_lasso(cov: *const KeCov, scale: f64, out_lp: *mut f64) -> KeStatus {
    guard(|| {
        let r = esd::esd_lasso(&deref(cov, "cov")?.0, scale)?;
        write(out_lp, r.lp, "out_lp")
    })
}

/// # Safety
/// `ko` must be a live handle; `out_lp` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_esd_knockoff(ko: *const KeKnockoff, scale: f64, out_lp: *mut f64) -> KeStatus {
    guard(|| {
        let r = esd::esd_knockoff_generic(&deref(ko, "ko")?.0, scale)?;
        write(out_lp, r.lp, "out_lp")
    })
}

/// # Safety
/// `cov` must be a live handle; `out_lp` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_esd_ci_tree(cov: *const KeCov, scale: f64, out_lp: *mut f64) -> KeStatus {
    guard(|| {
        let r = esd::esd_ci_tree(&deref(cov, "cov")?.0, scale)?;
        write(out_lp, r.lp, "out_lp")
    })
}

/// Writes the unclamped `1 / lambda_min(Sigma)` to `out_raw` and its
/// clamped value to `out_lp`.
///
/// # Safety
/// `cov` must be a live handle; both outputs must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_esd_equi(cov: *const KeCov, out_raw: *mut f64, out_lp: *mut f64) -> KeStatus {
    guard(|| {
        let r = esd::esd_equi(&deref(cov, "cov")?.0)?;
        if out_raw.is_null() {
            return Err(Failure::Null("out_raw"));
        }
        write(out_lp, r.lp, "out_lp")?;
        write(out_raw, r.raw.unwrap_or(f64::NAN), "out_raw")
    })
}

/// Knockoff threshold `T` for statistics `delta`; `offset` is 0 (knockoff)
/// or 1 (knockoff+). `T` is `+inf` when nothing can be selected.
///
/// # Safety
/// `delta` must point to `len` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ke_knockoff_threshold(
    delta: *const f64,
    len: usize,
    q: f64,
    offset: u8,
    out: *mut f64,
) -> KeStatus {
    guard(|| {
        let delta = DVector::from_column_slice(slice(delta, len, "delta")?);
        let offset = ThresholdOffset::try_from(offset).map_err(Error::InvalidArgument)?;
        write(out, knockoff_threshold(&delta, q, offset)?, "out")
    })
}

/// Runs the experiment described by the JSON `config` and writes the trial
/// CSV to `out_path`. Relative paths in the config resolve against
/// `base_dir` (NULL means the current directory). `workers = 0` uses every
/// CPU.
///
/// # Safety
/// `config` and `out_path` must be nul-terminated strings; `base_dir` must be
/// NULL or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ke_simulate(
    config: *const c_char,
    base_dir: *const c_char,
    workers: usize,
    out_path: *const c_char,
) -> KeStatus {
    guard(|| {
        let text = string(config, "config")?;
        let out_path = string(out_path, "out_path")?;
        let base = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            PathBuf::from(string(base_dir, "base_dir")?)
        };
        let cfg = parse_config_str(&text, base)?;
        let workers = if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        };
        let output = run_experiment(&cfg, workers)?;
        write_csv(&output.records, out_path)?;
        Ok(())
    })
}
