//! C ABI over `lol-core`.
//!
//! Every fallible call returns a [`LolStatus`]; on failure a message is kept
//! per thread and can be read with [`lol_last_error`]. Objects are handed out
//! as opaque pointers and must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lol_core::diagnostics::MetricsRecord;
use lol_core::distribution::{self, Dataset, DistributionParams, ParamOverrides};
use lol_core::network::{self, Network};
use lol_core::rng::{stream, Stream};
use lol_core::runner;
use lol_core::trainer::{Algorithm, RunOutcome, RunStatus};
use lol_core::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParam = 2,
    Shape = 3,
    EmptySubset = 4,
    Invariant = 5,
    Json = 6,
    Io = 7,
    Config = 8,
    Utf8 = 9,
    Panic = 10,
}

/// Algorithm selector for [`lol_run_job`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LolAlgorithm {
    LargeThenAnneal = 0,
    SmallConstant = 1,
    MitigationNoise = 2,
}

/// Final state of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LolRunStatus {
    Converged = 0,
    MaxIters = 1,
    NonFinite = 2,
}

/// One trace row. Missing values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LolRecord {
    pub t: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub reg_loss: f64,
    pub loss_m1_r: f64,
    pub loss_m1bar_g: f64,
    pub loss_m2bar: f64,
    pub rho: f64,
    pub almost_lin: f64,
    pub u_bar_fro: f64,
    pub w_bar_fro: f64,
    pub v_bar_fro: f64,
    pub hamming_frac: f64,
    pub test_err: f64,
    pub test_loss: f64,
    pub test_err_p_only: f64,
    pub test_err_q_only: f64,
    pub test_err_both: f64,
    pub span_residual: f64,
    pub alpha_norm: f64,
}

/// Distribution constants.
pub struct LolParams(DistributionParams);
/// Sampled dataset.
pub struct LolDataset(Dataset);
/// Two-layer network.
pub struct LolNetwork(Network);
/// Finished run: trace and final state.
pub struct LolRun(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LolStatus {
    match e {
        Error::InvalidParam { .. } => LolStatus::InvalidParam,
        Error::Shape(_) => LolStatus::Shape,
        Error::EmptySubset(_) => LolStatus::EmptySubset,
        Error::Invariant { .. } => LolStatus::Invariant,
        Error::RngState(_) | Error::Json(_) => LolStatus::Json,
        Error::Io(_) => LolStatus::Io,
    }
}

fn fail(status: LolStatus, msg: impl Into<String>) -> LolStatus {
    set_error(msg.into());
    status
}

fn core_err(e: Error) -> LolStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

/// Runs `f`, converting panics into [`LolStatus::Panic`].
fn guard(f: impl FnOnce() -> LolStatus) -> LolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LolStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, LolStatus> {
    if s.is_null() {
        return Err(fail(LolStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(LolStatus::Utf8, "string is not valid UTF-8"))
}

fn give<T>(out: *mut *mut T, value: T) -> LolStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    LolStatus::Ok
}

fn into_c_string(s: String, out: *mut *mut c_char) -> LolStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` for null first.
            unsafe { *out = c.into_raw() };
            LolStatus::Ok
        }
        Err(_) => fail(LolStatus::Utf8, "string contains NUL"),
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(LolStatus::NullPointer, concat!("null argument `", stringify!($p), "`"));
        })+
    };
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lol_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lol_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds distribution constants with the default overrides.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn lol_params_new(d: usize, kappa: f64, q0: f64, seed: u64, out: *mut *mut LolParams) -> LolStatus {
    non_null!(out);
    guard(|| match distribution::make_params(d, kappa, q0, &ParamOverrides::default(), seed) {
        Ok(p) => give(out, LolParams(p)),
        Err(e) => core_err(e),
    })
}

/// Sample count implied by `d / kappa^2`.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_params_implied_n(params: *const LolParams) -> usize {
    if params.is_null() {
        return 0;
    }
    (*params).0.implied_n()
}

/// # Safety
/// `params` must be NULL or a live handle from [`lol_params_new`].
#[no_mangle]
pub unsafe extern "C" fn lol_params_free(params: *mut LolParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Draws `n` examples from the training stream of `seed`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_dataset_generate(
    params: *const LolParams,
    n: usize,
    seed: u64,
    out: *mut *mut LolDataset,
) -> LolStatus {
    non_null!(params, out);
    guard(|| {
        let mut rng = stream(seed, Stream::TrainData);
        match distribution::generate_dataset(&(*params).0, n, &mut rng) {
            Ok(d) => give(out, LolDataset(d)),
            Err(e) => core_err(e),
        }
    })
}

/// # Safety
/// `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_dataset_len(data: *const LolDataset) -> usize {
    if data.is_null() {
        return 0;
    }
    (*data).0.len()
}

/// Empirical fractions `p` (no Q block) and `q` (no P block).
///
/// # Safety
/// `data` must be a live handle; `p` and `q` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lol_dataset_fractions(data: *const LolDataset, p: *mut f64, q: *mut f64) -> LolStatus {
    non_null!(data, p, q);
    *p = (*data).0.p_emp;
    *q = (*data).0.q_emp;
    LolStatus::Ok
}

/// Serializes constants and examples to JSON.
///
/// # Safety
/// All pointers must be valid; free the result with [`lol_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lol_dataset_to_json(
    params: *const LolParams,
    data: *const LolDataset,
    out: *mut *mut c_char,
) -> LolStatus {
    non_null!(params, data, out);
    guard(|| match distribution::dataset_to_json(&(*params).0, &(*data).0) {
        Ok(s) => into_c_string(s, out),
        Err(e) => core_err(e),
    })
}

/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_dataset_free(data: *mut LolDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Dense network with `m` hidden units on inputs of size `2d`, drawn from the
/// init stream of `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_network_init(m: usize, d: usize, tau0: f64, seed: u64, out: *mut *mut LolNetwork) -> LolStatus {
    non_null!(out);
    guard(|| {
        let mut rng = stream(seed, Stream::Init);
        match network::init_network(m, d, tau0, &mut rng) {
            Ok(n) => give(out, LolNetwork(n)),
            Err(e) => core_err(e),
        }
    })
}

/// Parses a network checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_network_from_json(json: *const c_char, out: *mut *mut LolNetwork) -> LolStatus {
    non_null!(out);
    let s = match read_str(json) {
        Ok(s) => s,
        Err(st) => return st,
    };
    guard(|| match Network::from_json(s) {
        Ok(n) => give(out, LolNetwork(n)),
        Err(e) => core_err(e),
    })
}

/// # Safety
/// `net` must be a live handle; free the result with [`lol_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lol_network_to_json(net: *const LolNetwork, out: *mut *mut c_char) -> LolStatus {
    non_null!(net, out);
    guard(|| into_c_string((*net).0.to_json(), out))
}

/// Output on the concatenated input `x` of length `2d`.
///
/// # Safety
/// `x` must point to `len` doubles; `net` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lol_network_forward(net: *const LolNetwork, x: *const f64, len: usize, out: *mut f64) -> LolStatus {
    non_null!(net, x, out);
    guard(|| {
        let xs = std::slice::from_raw_parts(x, len);
        match (*net).0.forward(xs) {
            Ok(v) => {
                *out = v;
                LolStatus::Ok
            }
            Err(e) => core_err(e),
        }
    })
}

/// Mean logistic loss over the dataset.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lol_network_loss(net: *const LolNetwork, data: *const LolDataset, out: *mut f64) -> LolStatus {
    non_null!(net, data, out);
    guard(|| match network::batch_loss(&(*net).0, &(*data).0, None) {
        Ok(v) => {
            *out = v;
            LolStatus::Ok
        }
        Err(e) => core_err(e),
    })
}

/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_network_free(net: *mut LolNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Runs one algorithm for one seed of an experiment config (JSON text, merged
/// over its profile like the CLI does). Nothing is written to disk.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_run_job(
    config_json: *const c_char,
    algorithm: LolAlgorithm,
    seed: u64,
    out: *mut *mut LolRun,
) -> LolStatus {
    non_null!(out);
    let text = match read_str(config_json) {
        Ok(s) => s,
        Err(st) => return st,
    };
    guard(|| {
        let cfg = match runner::load_str(text, &[]) {
            Ok(c) => c,
            Err(e) => return fail(LolStatus::Config, e.to_string()),
        };
        let algo = match algorithm {
            LolAlgorithm::LargeThenAnneal => Algorithm::LargeThenAnneal,
            LolAlgorithm::SmallConstant => Algorithm::SmallConstant,
            LolAlgorithm::MitigationNoise => Algorithm::MitigationNoise,
        };
        match runner::run_job(&cfg, algo, seed) {
            Ok(o) => give(out, LolRun(o)),
            Err(e) => core_err(e),
        }
    })
}

/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_run_status(run: *const LolRun) -> LolRunStatus {
    match &(*run).0.status {
        RunStatus::Converged => LolRunStatus::Converged,
        RunStatus::MaxIters => LolRunStatus::MaxIters,
        RunStatus::NonFinite { .. } => LolRunStatus::NonFinite,
    }
}

/// Annealing iteration, or -1 when the run never annealed.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_run_t0(run: *const LolRun) -> i64 {
    (*run).0.state.t0.map_or(-1, |t| t as i64)
}

/// Number of trace rows.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_run_trace_len(run: *const LolRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).0.trace.len()
}

fn to_c(r: &MetricsRecord) -> LolRecord {
    let o = |v: Option<f64>| v.unwrap_or(f64::NAN);
    LolRecord {
        t: r.t,
        lr: r.lr,
        train_loss: r.train_loss,
        reg_loss: r.reg_loss,
        loss_m1_r: o(r.loss_m1_r),
        loss_m1bar_g: o(r.loss_m1bar_g),
        loss_m2bar: o(r.loss_m2bar),
        rho: r.rho,
        almost_lin: r.almost_lin,
        u_bar_fro: r.u_bar_fro,
        w_bar_fro: r.w_bar_fro,
        v_bar_fro: r.v_bar_fro,
        hamming_frac: r.hamming_frac,
        test_err: r.test_err,
        test_loss: r.test_loss,
        test_err_p_only: o(r.test_err_p_only),
        test_err_q_only: o(r.test_err_q_only),
        test_err_both: o(r.test_err_both),
        span_residual: o(r.span_residual),
        alpha_norm: o(r.alpha_norm),
    }
}

/// Copies trace row `i` into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_run_record(run: *const LolRun, i: usize, out: *mut LolRecord) -> LolStatus {
    non_null!(run, out);
    let run = &*run;
    match run.0.trace.get(i) {
        Some(r) => {
            *out = to_c(r);
            LolStatus::Ok
        }
        None => fail(LolStatus::Shape, format!("trace row {i} out of range")),
    }
}

/// Copy of the final network. Free it with [`lol_network_free`].
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lol_run_network(run: *const LolRun, out: *mut *mut LolNetwork) -> LolStatus {
    non_null!(run, out);
    give(out, LolNetwork((*run).0.state.net.clone()))
}

/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lol_run_free(run: *mut LolRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
