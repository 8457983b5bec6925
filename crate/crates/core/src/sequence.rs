//! Supremum and maximizer rank of a real sequence dominated by a geometric
//! envelope `h(β^k)`.
//!
//! A [`CertificatePair`] `(h, β)` with `u_k <= h(β^k)` for every `k` turns the
//! search for `max_k u_k` into a finite one: as soon as some term `u_k` lies
//! strictly above `h(0)`, the quantity
//!
//! ```text
//! F(k) = ln(h⁻¹(u_k)) / ln(β)
//! ```
//!
//! bounds the rank of every term that could still beat `u_k`. [`solve_peak`]
//! scans the sequence, tightening the stopping integer `K = ⌊F(k)⌋` each time
//! the running maximum strictly improves, and stops once `k > K`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for membership in `S(u,h)` and domination checks.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Iteration budget while no term has entered `S(u,h)`.
pub const DEFAULT_GUARD: usize = 10_000;

/// Slack on `h⁻¹(u_k) <= 1` absorbed by clamping before it counts as an error.
const INVERSE_SLACK: f64 = 1e-9;

/// Round-trip tolerance for `h⁻¹(h(s)) = s` when a bridge is validated.
const ROUNDTRIP_TOL: f64 = 1e-9;

const VALIDATION_GRID: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("term u_{k} is not finite ({value}); every term of a bounded sequence must be a finite real")]
    NonFinite { k: usize, value: f64 },

    #[error("term u_{k} is outside the tabulated sequence (length {len})")]
    OutOfRange { k: usize, len: usize },

    #[error("term u_{k} could not be evaluated: {reason}")]
    Evaluation { k: usize, reason: String },

    #[error("domination violated at k = {k}: u_k = {value} exceeds the envelope h(beta^k) = {bound}")]
    DominationViolation { k: usize, value: f64, bound: f64 },

    #[error("inverse bridge value h^-1({value}) = {inverse} at k = {k} leaves (0, 1]")]
    InverseOutOfRange { k: usize, value: f64, inverse: f64 },

    #[error(
        "no term exceeded h(0) = {h_at_zero} within the first {guard} terms \
         (largest term seen {max_seen}); the certificate pair is not useful for this sequence"
    )]
    GuardExceeded { guard: usize, max_seen: f64, h_at_zero: f64 },

    #[error("beta must lie in the open interval (0, 1), got {0}")]
    InvalidBeta(f64),

    #[error("invalid bridge function: {0}")]
    InvalidBridge(String),

    #[error("value {value} is outside (h(0), h(1)] = ({h_at_zero}, {h_at_one}]")]
    ValueOutOfRange { value: f64, h_at_zero: f64, h_at_one: f64 },
}

/// Something that can produce the `k`-th term of a sequence.
pub trait TermSource: Send + Sync {
    fn term(&self, k: usize) -> Result<f64, SeqError>;
}

struct FnSource<F>(F);

impl<F> TermSource for FnSource<F>
where
    F: Fn(usize) -> Result<f64, SeqError> + Send + Sync,
{
    fn term(&self, k: usize) -> Result<f64, SeqError> {
        (self.0)(k)
    }
}

struct TableSource(Vec<f64>);

impl TermSource for TableSource {
    fn term(&self, k: usize) -> Result<f64, SeqError> {
        self.0
            .get(k)
            .copied()
            .ok_or(SeqError::OutOfRange { k, len: self.0.len() })
    }
}

/// Lazily evaluated real sequence with memoized terms.
pub struct BoundedSequence {
    source: Box<dyn TermSource>,
    cache: RwLock<HashMap<usize, f64>>,
}

impl BoundedSequence {
    pub fn new(source: impl TermSource + 'static) -> Self {
        Self {
            source: Box::new(source),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        Self::new(FnSource(move |k| Ok(f(k))))
    }

    pub fn try_from_fn<F>(f: F) -> Self
    where
        F: Fn(usize) -> Result<f64, SeqError> + Send + Sync + 'static,
    {
        Self::new(FnSource(f))
    }

    /// A finite table of terms; asking past its end is an [`SeqError::OutOfRange`].
    pub fn from_values(values: Vec<f64>) -> Self {
        Self::new(TableSource(values))
    }

    /// Returns `u_k`, evaluating and caching it on first access.
    pub fn term(&self, k: usize) -> Result<f64, SeqError> {
        if let Some(v) = self.cache.read().expect("sequence cache poisoned").get(&k) {
            return Ok(*v);
        }
        let value = self.source.term(k)?;
        if !value.is_finite() {
            return Err(SeqError::NonFinite { k, value });
        }
        self.cache
            .write()
            .expect("sequence cache poisoned")
            .insert(k, value);
        Ok(value)
    }

    pub fn cached_terms(&self) -> usize {
        self.cache.read().expect("sequence cache poisoned").len()
    }
}

impl fmt::Debug for BoundedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundedSequence")
            .field("cached_terms", &self.cached_terms())
            .finish()
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Strictly increasing continuous function on `[0, 1]` together with its inverse.
#[derive(Clone)]
pub struct BridgeFunction {
    forward: ScalarFn,
    inverse: ScalarFn,
    value_at_zero: f64,
    value_at_one: f64,
    description: String,
}

impl BridgeFunction {
    /// Builds a bridge and checks monotonicity and the inverse round trip on a
    /// uniform grid of `[0, 1]`.
    pub fn new(
        forward: ScalarFn,
        inverse: ScalarFn,
        description: impl Into<String>,
    ) -> Result<Self, SeqError> {
        let value_at_zero = forward(0.0);
        let value_at_one = forward(1.0);
        let bridge = Self {
            forward,
            inverse,
            value_at_zero,
            value_at_one,
            description: description.into(),
        };
        bridge.validate()?;
        Ok(bridge)
    }

    fn validate(&self) -> Result<(), SeqError> {
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=VALIDATION_GRID {
            let s = i as f64 / VALIDATION_GRID as f64;
            let v = self.eval(s);
            if !v.is_finite() {
                return Err(SeqError::InvalidBridge(format!(
                    "{}: h({s}) = {v} is not finite",
                    self.description
                )));
            }
            if let Some((ps, pv)) = prev {
                if v <= pv {
                    return Err(SeqError::InvalidBridge(format!(
                        "{}: not strictly increasing, h({ps}) = {pv} >= h({s}) = {v}",
                        self.description
                    )));
                }
            }
            let back = self.inverse(v);
            if !((back - s).abs() <= ROUNDTRIP_TOL) {
                return Err(SeqError::InvalidBridge(format!(
                    "{}: inverse round trip h^-1(h({s})) = {back}",
                    self.description
                )));
            }
            prev = Some((s, v));
        }
        Ok(())
    }

    /// `h(s) = scale * s + offset`.
    pub fn affine(scale: f64, offset: f64) -> Result<Self, SeqError> {
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(SeqError::InvalidBridge(format!(
                "affine bridge needs a positive finite scale, got {scale}"
            )));
        }
        Self::new(
            Arc::new(move |s| scale * s + offset),
            Arc::new(move |v| (v - offset) / scale),
            format!("h(s) = {scale} * s + {offset}"),
        )
    }

    /// `h(s) = sqrt(c * s)`, inverse `s² / c`.
    pub fn sqrt_scaled(c: f64) -> Result<Self, SeqError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(SeqError::InvalidBridge(format!(
                "sqrt bridge needs a positive finite scale, got {c}"
            )));
        }
        Self::new(
            Arc::new(move |s| (c * s).sqrt()),
            Arc::new(move |v| v * v / c),
            format!("h(s) = sqrt({c} * s)"),
        )
    }

    /// Pointwise minimum of two bridges; its inverse is the pointwise maximum
    /// of the inverses.
    pub fn pointwise_min(&self, other: &BridgeFunction) -> Result<Self, SeqError> {
        let (f1, f2) = (self.forward.clone(), other.forward.clone());
        let (i1, i2) = (self.inverse.clone(), other.inverse.clone());
        Self::new(
            Arc::new(move |s| f1(s).min(f2(s))),
            Arc::new(move |v| i1(v).max(i2(v))),
            format!("min({}, {})", self.description, other.description),
        )
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.forward)(s)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (self.inverse)(v)
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    pub fn value_at_one(&self) -> f64 {
        self.value_at_one
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

impl fmt::Debug for BridgeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeFunction")
            .field("description", &self.description)
            .field("value_at_zero", &self.value_at_zero)
            .field("value_at_one", &self.value_at_one)
            .finish()
    }
}

/// A bridge `h` and a geometric rate `β ∈ (0, 1)` claimed to satisfy
/// `u_k <= h(β^k)` for all `k`.
#[derive(Debug, Clone)]
pub struct CertificatePair {
    h: BridgeFunction,
    beta: f64,
    tol: f64,
}

impl CertificatePair {
    pub fn new(h: BridgeFunction, beta: f64) -> Result<Self, SeqError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(SeqError::InvalidBeta(beta));
        }
        Ok(Self {
            h,
            beta,
            tol: DEFAULT_TOL,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol.abs();
        self
    }

    pub fn h(&self) -> &BridgeFunction {
        &self.h
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `h(β^k)`.
    pub fn envelope(&self, k: usize) -> f64 {
        let power = match i32::try_from(k) {
            Ok(k) => self.beta.powi(k),
            Err(_) => 0.0,
        };
        self.h.eval(power)
    }

    /// Membership of a term value in `S(u,h)`: strictly above `h(0)` by more
    /// than the tolerance.
    pub fn in_residual(&self, value: f64) -> bool {
        value > self.h.value_at_zero() + self.tol
    }
}

/// `ln(h⁻¹(u_k)) / ln(β)` for `k ∈ S(u,h)`, `+∞` otherwise.
pub fn stopping_index_formula(
    u: &BoundedSequence,
    k: usize,
    pair: &CertificatePair,
) -> Result<f64, SeqError> {
    let value = u.term(k)?;
    formula_for_value(value, k, pair)
}

fn formula_for_value(value: f64, k: usize, pair: &CertificatePair) -> Result<f64, SeqError> {
    if !pair.in_residual(value) {
        return Ok(f64::INFINITY);
    }
    let h_one = pair.h.value_at_one();
    if value > h_one + pair.tol {
        return Err(SeqError::DominationViolation {
            k,
            value,
            bound: h_one,
        });
    }
    let mut inverse = if value >= h_one {
        1.0
    } else {
        pair.h.inverse(value)
    };
    if inverse > 1.0 && inverse <= 1.0 + INVERSE_SLACK {
        inverse = 1.0;
    }
    if !(inverse > 0.0 && inverse <= 1.0) {
        return Err(SeqError::InverseOutOfRange {
            k,
            value,
            inverse,
        });
    }
    let f = inverse.ln() / pair.beta.ln();
    // ln(1) / ln(β) is -0.0
    Ok(if f == 0.0 { 0.0 } else { f })
}

/// Stopping integer derived from a formula value; values within `tol` below
/// an integer round up to it.
fn floor_with_tol(f: f64, tol: f64) -> u64 {
    (f + tol).floor() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub value: f64,
    pub in_residual: bool,
    /// `None` stands for `+∞`.
    pub formula: Option<f64>,
    /// Stopping integer after processing this rank, `None` while still `+∞`.
    pub stopping_after: Option<u64>,
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSolution {
    pub optimum: f64,
    pub argmax_rank: usize,
    pub stopping_integer: u64,
    pub trace: Vec<TraceRecord>,
}

impl PeakSolution {
    /// Successive values taken by the stopping integer.
    pub fn stopping_history(&self) -> Vec<u64> {
        self.trace
            .iter()
            .filter(|r| r.updated)
            .filter_map(|r| r.stopping_after)
            .collect()
    }

    /// Rows where the running maximum strictly improved.
    pub fn updates(&self) -> impl Iterator<Item = &TraceRecord> {
        self.trace.iter().filter(|r| r.updated)
    }

    /// Formula value recorded at rank `k`, if `k` was visited and lies in `S(u,h)`.
    pub fn formula_at(&self, k: usize) -> Option<f64> {
        self.trace.get(k).and_then(|r| r.formula)
    }
}

/// Scans `u` until the current rank passes the stopping integer.
///
/// Every visited term is also checked against the envelope `h(β^k)`, so a
/// pair that is not a certificate for `u` surfaces as
/// [`SeqError::DominationViolation`] instead of a wrong answer. When no term
/// has entered `S(u,h)` after `guard` ranks the search gives up with
/// [`SeqError::GuardExceeded`].
pub fn solve_peak(
    u: &BoundedSequence,
    pair: &CertificatePair,
    guard: usize,
) -> Result<PeakSolution, SeqError> {
    let mut k = 0usize;
    let mut stop: Option<u64> = None;
    let mut best = f64::NEG_INFINITY;
    let mut best_rank = 0usize;
    let mut trace = Vec::new();

    while stop.is_none_or(|s| (k as u64) <= s) {
        if stop.is_none() && k >= guard {
            return Err(SeqError::GuardExceeded {
                guard,
                max_seen: best_seen(&trace),
                h_at_zero: pair.h.value_at_zero(),
            });
        }
        let value = u.term(k)?;
        let bound = pair.envelope(k);
        if value > bound + pair.tol {
            return Err(SeqError::DominationViolation { k, value, bound });
        }
        let in_residual = pair.in_residual(value);
        let formula = if in_residual {
            Some(formula_for_value(value, k, pair)?)
        } else {
            None
        };
        let updated = in_residual && value > best;
        if updated {
            let f = formula.expect("formula is finite on S(u,h)");
            stop = Some(floor_with_tol(f, pair.tol));
            best = value;
            best_rank = k;
        }
        trace.push(TraceRecord {
            k,
            value,
            in_residual,
            formula,
            stopping_after: stop,
            updated,
        });
        k += 1;
    }

    Ok(PeakSolution {
        optimum: best,
        argmax_rank: best_rank,
        stopping_integer: stop.expect("loop exits only once a stopping integer is set"),
        trace,
    })
}

fn best_seen(trace: &[TraceRecord]) -> f64 {
    trace
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DominationCheck {
    pub holds: bool,
    pub first_violation: Option<usize>,
}

/// Checks `u_k <= h(β^k) + tol` for `k = 0..=horizon`.
pub fn verify_domination(
    u: &BoundedSequence,
    pair: &CertificatePair,
    horizon: usize,
) -> Result<DominationCheck, SeqError> {
    for k in 0..=horizon {
        if u.term(k)? > pair.envelope(k) + pair.tol {
            return Ok(DominationCheck {
                holds: false,
                first_violation: Some(k),
            });
        }
    }
    Ok(DominationCheck {
        holds: true,
        first_violation: None,
    })
}

/// `min { j : h(β^j) < value }` by direct scan.
pub fn first_escape_rank(pair: &CertificatePair, value: f64) -> Result<u64, SeqError> {
    let (h0, h1) = (pair.h.value_at_zero(), pair.h.value_at_one());
    if !(value > h0 && value <= h1) {
        return Err(SeqError::ValueOutOfRange {
            value,
            h_at_zero: h0,
            h_at_one: h1,
        });
    }
    let mut j = 0u64;
    let mut power = 1.0f64;
    while pair.h.eval(power) >= value {
        j += 1;
        power *= pair.beta;
    }
    Ok(j)
}

/// `(max_{k <= horizon} u_k, smallest maximizing k)`.
pub fn brute_force_sup(u: &BoundedSequence, horizon: usize) -> Result<(f64, usize), SeqError> {
    let mut best = (u.term(0)?, 0);
    for k in 1..=horizon {
        let v = u.term(k)?;
        if v > best.0 {
            best = (v, k);
        }
    }
    Ok(best)
}
