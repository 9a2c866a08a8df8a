//! C ABI over `nsedit`.
//!
//! Every fallible function returns an [`NseStatus`]; on failure a message is
//! available from [`nse_last_error_message`] on the same thread. Matrices
//! cross the boundary as column-major `double` arrays. Handles are opaque and
//! must be released with the matching `*_free` function. Panics never unwind
//! into C; they surface as `NSE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nsedit::cli::{render_summary, render_trajectory, Format};
use nsedit::config::parse_config;
use nsedit::editors::{solve_alphaedit, solve_memit, SolverConfig};
use nsedit::harness::{run_experiment, Trajectory};
use nsedit::knowledge::{AssociativeMemory, EditHistory, KnowledgeSet};
use nsedit::numerics::DenseMatrix;
use nsedit::projector::{build_projector_with, NullSpaceProjector, ThresholdMode};
use nsedit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NseStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Singular = 3,
    NonFinite = 4,
    Config = 5,
    InvalidArgument = 6,
    Runtime = 7,
    Panic = 8,
}

pub const NSE_THRESHOLD_ABSOLUTE: u32 = 0;
pub const NSE_THRESHOLD_RELATIVE: u32 = 1;

pub const NSE_FORMAT_CSV: u32 = 0;
pub const NSE_FORMAT_JSON: u32 = 1;

/// Dense `f64` matrix.
pub struct NseMatrix {
    inner: DenseMatrix,
}

/// Null-space projector built from preserved keys.
pub struct NseProjector {
    inner: NullSpaceProjector,
}

/// Result of a sequential-editing experiment.
pub struct NseTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(NseStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => NseStatus::Dimension,
            Error::Singular { .. } => NseStatus::Singular,
            Error::NonFinite { .. } => NseStatus::NonFinite,
            Error::Config { .. } => NseStatus::Config,
            Error::Asymmetry { .. } | Error::Precondition(_) => NseStatus::InvalidArgument,
            _ => NseStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NseStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            NseStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            NseStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn nse_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a `rows x cols` matrix from `rows * cols` column-major values, or
/// zeros when `data` is NULL.
///
/// # Safety
/// `data`, when non-null, must point to `rows * cols` readable doubles and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut NseMatrix,
) -> NseStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| {
            Failure(
                NseStatus::InvalidArgument,
                format!("{rows}x{cols} overflows"),
            )
        })?;
        let inner = if data.is_null() {
            DenseMatrix::zeros(rows, cols)
        } else {
            let values = std::slice::from_raw_parts(data, len).to_vec();
            DenseMatrix::from_col_major(rows, cols, values)?
        };
        put(out, NseMatrix { inner })
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nse_matrix_free(m: *mut NseMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_matrix_rows(m: *const NseMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// Column count, 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_matrix_cols(m: *const NseMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the column-major entries into `out`, which holds `len` doubles;
/// `len` must equal `rows * cols`.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nse_matrix_copy_data(
    m: *const NseMatrix,
    out: *mut f64,
    len: usize,
) -> NseStatus {
    guard(|| {
        let m = borrow(m, "matrix")?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let data = m.inner.as_col_major();
        if len != data.len() {
            return Err(Failure(
                NseStatus::Dimension,
                format!("buffer holds {len} values, matrix has {}", data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(data);
        Ok(())
    })
}

/// Builds `P` from preserved keys (`d_in x n`). `mode` is
/// `NSE_THRESHOLD_ABSOLUTE` or `NSE_THRESHOLD_RELATIVE`.
///
/// # Safety
/// `keys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_projector_build(
    keys: *const NseMatrix,
    threshold: f64,
    mode: u32,
    out: *mut *mut NseProjector,
) -> NseStatus {
    guard(|| {
        let keys = borrow(keys, "keys")?;
        let mode = match mode {
            NSE_THRESHOLD_ABSOLUTE => ThresholdMode::Absolute,
            NSE_THRESHOLD_RELATIVE => ThresholdMode::Relative,
            other => {
                return Err(Failure(
                    NseStatus::InvalidArgument,
                    format!("unknown threshold mode {other}"),
                ))
            }
        };
        let inner = build_projector_with(&keys.inner, threshold, mode)?;
        put(out, NseProjector { inner })
    })
}

/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_projector_free(p: *mut NseProjector) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of retained directions, 0 for NULL.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_projector_retained_dim(p: *const NseProjector) -> usize {
    p.as_ref().map_or(0, |p| p.inner.retained_dim())
}

/// Copies the dense `d_in x d_in` projector into a new matrix handle.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_projector_matrix(
    p: *const NseProjector,
    out: *mut *mut NseMatrix,
) -> NseStatus {
    guard(|| {
        let p = borrow(p, "projector")?;
        put(
            out,
            NseMatrix {
                inner: p.inner.matrix().clone(),
            },
        )
    })
}

unsafe fn edit_inputs(
    weights: *const NseMatrix,
    keys: *const NseMatrix,
    values: *const NseMatrix,
    prior_keys: *const NseMatrix,
) -> Result<(AssociativeMemory, KnowledgeSet, EditHistory), Failure> {
    let memory = AssociativeMemory::new(borrow(weights, "weights")?.inner.clone());
    let batch = KnowledgeSet::new(
        borrow(keys, "keys")?.inner.clone(),
        borrow(values, "values")?.inner.clone(),
    )?;
    let mut history = EditHistory::empty(memory.d_in(), memory.d_out());
    if let Some(kp) = prior_keys.as_ref() {
        // Only the prior keys enter the solve; their values are what the
        // memory currently recalls.
        let vp = memory.recall(&kp.inner)?;
        history = history.extend(&KnowledgeSet::new(kp.inner.clone(), vp)?)?;
    }
    Ok((memory, batch, history))
}

/// Null-space constrained edit `Δ` (`d_out x d_in`) for keys `K₁` and target
/// values `V₁`. `prior_keys` may be NULL for an empty history.
///
/// # Safety
/// Non-null handle arguments must be live; `out_delta` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nse_solve_alphaedit(
    weights: *const NseMatrix,
    keys: *const NseMatrix,
    values: *const NseMatrix,
    projector: *const NseProjector,
    prior_keys: *const NseMatrix,
    ridge_scale: f64,
    out_delta: *mut *mut NseMatrix,
) -> NseStatus {
    guard(|| {
        let (memory, batch, history) = edit_inputs(weights, keys, values, prior_keys)?;
        let proj = borrow(projector, "projector")?;
        let config = SolverConfig::default().with_ridge_scale(ridge_scale);
        let sol = solve_alphaedit(&memory, &batch, &proj.inner, &history, &config)?;
        put(out_delta, NseMatrix { inner: sol.delta })
    })
}

/// Preserved-knowledge-regularized edit with weight `preserved_weight` on
/// `K₀K₀ᵀ`. A singular system yields the minimum-norm solution.
///
/// # Safety
/// Non-null handle arguments must be live; `out_delta` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nse_solve_memit(
    weights: *const NseMatrix,
    keys: *const NseMatrix,
    values: *const NseMatrix,
    preserved_keys: *const NseMatrix,
    prior_keys: *const NseMatrix,
    preserved_weight: f64,
    out_delta: *mut *mut NseMatrix,
) -> NseStatus {
    guard(|| {
        let (memory, batch, history) = edit_inputs(weights, keys, values, prior_keys)?;
        let gram = borrow(preserved_keys, "preserved keys")?.inner.gram();
        let config = SolverConfig::default().with_preserved_weight(preserved_weight);
        let sol = solve_memit(&memory, &batch, &gram, &history, &config)?;
        put(out_delta, NseMatrix { inner: sol.delta })
    })
}

/// Runs an experiment described by TOML text (same keys as the CLI config;
/// absent keys take defaults).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_experiment_run(
    config_toml: *const c_char,
    out: *mut *mut NseTrajectory,
) -> NseStatus {
    guard(|| {
        if config_toml.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config_toml).to_str().map_err(|e| {
            Failure(
                NseStatus::InvalidArgument,
                format!("config is not UTF-8: {e}"),
            )
        })?;
        let config = parse_config(text)?;
        let inner = run_experiment(&config)?;
        put(out, NseTrajectory { inner })
    })
}

/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_trajectory_free(t: *mut NseTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of step records over all methods, 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nse_trajectory_record_count(t: *const NseTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.inner.records().count())
}

unsafe fn render(
    t: *const NseTrajectory,
    format: u32,
    out: *mut *mut c_char,
    f: fn(&Trajectory, Format) -> String,
) -> NseStatus {
    guard(|| {
        let t = borrow(t, "trajectory")?;
        let format = match format {
            NSE_FORMAT_CSV => Format::Csv,
            NSE_FORMAT_JSON => Format::Json,
            other => {
                return Err(Failure(
                    NseStatus::InvalidArgument,
                    format!("unknown format {other}"),
                ))
            }
        };
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let s = CString::new(f(&t.inner, format)).expect("rendered text has no NUL");
        *out = s.into_raw();
        Ok(())
    })
}

/// Step records as CSV (`NSE_FORMAT_CSV`) or JSON lines (`NSE_FORMAT_JSON`).
/// Release the string with [`nse_string_free`].
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_trajectory_to_string(
    t: *const NseTrajectory,
    format: u32,
    out: *mut *mut c_char,
) -> NseStatus {
    render(t, format, out, render_trajectory)
}

/// Per-method summaries and pairwise ratios, formatted like
/// [`nse_trajectory_to_string`].
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nse_trajectory_summary_to_string(
    t: *const NseTrajectory,
    format: u32,
    out: *mut *mut c_char,
) -> NseStatus {
    render(t, format, out, render_summary)
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
