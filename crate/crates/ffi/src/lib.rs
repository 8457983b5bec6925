//! C ABI over `peakgate`.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns a [`PgStatus`] and, on
//! failure, stores a message readable with [`pg_last_error_message`] on the
//! same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use peakgate::config::ConfigError;
use peakgate::problem::{Problem, SolveError};
use peakgate::report::{CertificateSummary, SolveReport};
use peakgate::running_example::{map_h, ratio_closed_form};
use peakgate::sequence::{solve_peak, BoundedSequence, BridgeFunction, CertificatePair, SeqError};
use peakgate::SolveConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed or inconsistent problem, or a failed hypothesis check.
    Config = 3,
    /// No term exceeded `h(0)` within the guard.
    GuardExceeded = 4,
    /// The certificate pair does not dominate the sequence.
    DominationViolation = 5,
    NonFinite = 6,
    /// A caller-supplied callback reported failure.
    Callback = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Parsed and validated problem.
pub struct PgProblem {
    problem: Problem,
}

/// Result of a solve.
pub struct PgSolution {
    report: SolveReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgTraceRow {
    pub k: usize,
    pub value: f64,
    pub in_residual: bool,
    /// Stopping formula at `k`; `INFINITY` outside the residual set.
    pub formula: f64,
    pub has_stopping: bool,
    /// Stopping integer after rank `k`; meaningful when `has_stopping`.
    pub stopping_after: u64,
    pub updated: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgBridgeKind {
    /// `h(s) = scale * s + offset`.
    Affine = 0,
    /// `h(s) = sqrt(scale * s)`.
    SqrtScaled = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgBridge {
    pub kind: PgBridgeKind,
    pub scale: f64,
    pub offset: f64,
}

/// Writes term `k` to `*out` and returns 0, or returns nonzero on failure.
pub type PgTermFn = Option<unsafe extern "C" fn(user: *mut c_void, k: usize, out: *mut f64) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn seq_status(e: &SeqError) -> PgStatus {
    match e {
        SeqError::GuardExceeded { .. } => PgStatus::GuardExceeded,
        SeqError::DominationViolation { .. } | SeqError::InverseOutOfRange { .. } => {
            PgStatus::DominationViolation
        }
        SeqError::NonFinite { .. } => PgStatus::NonFinite,
        SeqError::Evaluation { .. } => PgStatus::Callback,
        SeqError::OutOfRange { .. } | SeqError::ValueOutOfRange { .. } => PgStatus::OutOfRange,
        SeqError::InvalidBeta(_) | SeqError::InvalidBridge(_) => PgStatus::Config,
    }
}

fn solve_status(e: &SolveError) -> PgStatus {
    match e {
        SolveError::Config(_) => PgStatus::Config,
        SolveError::Sequence(s) => seq_status(s),
    }
}

/// Runs `body`, recording its error message and converting panics.
fn guarded(body: impl FnOnce() -> Result<(), (PgStatus, String)>) -> PgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PgStatus::Panic
        }
    }
}

fn null(what: &str) -> (PgStatus, String) {
    (PgStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a JSON problem description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_problem_from_json(json: *const c_char, out: *mut *mut PgProblem) -> PgStatus {
    guarded(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (PgStatus::InvalidUtf8, e.to_string()))?;
        let problem = SolveConfig::from_json(text)
            .and_then(|cfg| Problem::from_config(&cfg))
            .map_err(|e: ConfigError| (PgStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(PgProblem { problem }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`pg_problem_from_json`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn pg_problem_free(problem: *mut PgProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_problem_solve(problem: *const PgProblem, out: *mut *mut PgSolution) -> PgStatus {
    guarded(|| {
        let problem = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = problem
            .problem
            .solve()
            .map_err(|e| (solve_status(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(PgSolution { report }));
        Ok(())
    })
}

struct CallbackSource {
    term: unsafe extern "C" fn(*mut c_void, usize, *mut f64) -> c_int,
    user: *mut c_void,
}

// The sequence is evaluated on the calling thread only.
unsafe impl Send for CallbackSource {}
unsafe impl Sync for CallbackSource {}

impl peakgate::sequence::TermSource for CallbackSource {
    fn term(&self, k: usize) -> Result<f64, SeqError> {
        let mut value = f64::NAN;
        let code = unsafe { (self.term)(self.user, k, &mut value) };
        if code != 0 {
            return Err(SeqError::Evaluation {
                k,
                reason: format!("callback returned {code}"),
            });
        }
        Ok(value)
    }
}

/// Solves the peak problem for a sequence supplied term by term, with the
/// certificate pair `(bridge, beta)`.
///
/// # Safety
/// `term` must be safe to call with `user` from this thread; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pg_solve_sequence(
    term: PgTermFn,
    user: *mut c_void,
    bridge: PgBridge,
    beta: f64,
    guard: usize,
    out: *mut *mut PgSolution,
) -> PgStatus {
    guarded(|| {
        let term = term.ok_or_else(|| null("term"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = |e: SeqError| (PgStatus::Config, e.to_string());
        let h = match bridge.kind {
            PgBridgeKind::Affine => BridgeFunction::affine(bridge.scale, bridge.offset),
            PgBridgeKind::SqrtScaled => BridgeFunction::sqrt_scaled(bridge.scale),
        }
        .map_err(config)?;
        let pair = CertificatePair::new(h, beta).map_err(config)?;
        let u = BoundedSequence::new(CallbackSource { term, user });
        let solution = solve_peak(&u, &pair, guard).map_err(|e| (seq_status(&e), e.to_string()))?;
        let summary = CertificateSummary::from_pair("explicit", &pair, None);
        let report = SolveReport::new(&solution, summary, 0.0, Vec::new());
        *out = Box::into_raw(Box::new(PgSolution { report }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from a solve call and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_free(solution: *mut PgSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Peak value, `NAN` for a null handle.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_optimum(solution: *const PgSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.report.optimum)
}

/// Smallest rank attaining the peak; 0 for a null handle.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_argmax_rank(solution: *const PgSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.report.argmax_rank)
}

/// Final stopping integer; 0 for a null handle.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_stopping_integer(solution: *const PgSolution) -> u64 {
    solution.as_ref().map_or(0, |s| s.report.stopping_integer)
}

/// Number of visited ranks; 0 for a null handle.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_trace_len(solution: *const PgSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.report.trace.len())
}

/// # Safety
/// `solution` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_trace_row(
    solution: *const PgSolution,
    index: usize,
    out: *mut PgTraceRow,
) -> PgStatus {
    guarded(|| {
        let solution = solution.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let trace = &solution.report.trace;
        let r = trace.get(index).ok_or_else(|| {
            (
                PgStatus::OutOfRange,
                format!("trace row {index} requested, trace has {} rows", trace.len()),
            )
        })?;
        *out = PgTraceRow {
            k: r.k,
            value: r.value,
            in_residual: r.in_residual,
            formula: r.formula.unwrap_or(f64::INFINITY),
            has_stopping: r.stopping_after.is_some(),
            stopping_after: r.stopping_after.unwrap_or(0),
            updated: r.updated,
        };
        Ok(())
    })
}

/// Full JSON report; release with [`pg_string_free`]. NULL on failure.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pg_solution_report_json(solution: *const PgSolution) -> *mut c_char {
    let Some(solution) = solution.as_ref() else {
        set_error("solution is null");
        return ptr::null_mut();
    };
    match CString::new(solution.report.to_json()) {
        Ok(s) => s.into_raw(),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must come from this library and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn pg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Applies the builtin benchmark map to `x[0..2]`, writing `out[0..2]`.
///
/// # Safety
/// `x` and `out` must point to two doubles each.
#[no_mangle]
pub unsafe extern "C" fn pg_running_example_map(x: *const f64, out: *mut f64) -> PgStatus {
    guarded(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let y = map_h([*x, *x.add(1)]);
        *out = y[0];
        *out.add(1) = y[1];
        Ok(())
    })
}

/// Closed-form ratio operator of the benchmark map on the ball of squared
/// radius `radius_sq`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_running_example_ratio(radius_sq: f64, out: *mut f64) -> PgStatus {
    guarded(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ratio_closed_form(radius_sq).map_err(|e| (PgStatus::OutOfRange, e.to_string()))?;
        Ok(())
    })
}
