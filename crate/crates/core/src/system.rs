//! Autonomous discrete-time systems `x_{k+1} = T(x_k)`, finite initial sets,
//! objectives, and the optimal-value sequence `ν_k = max_{x ∈ X_in} φ(T^k(x))`.

use std::fmt;
use std::io;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::running_example;
use crate::sequence::{BoundedSequence, SeqError, TermSource};

pub type State = Vec<f64>;

pub type VectorFn = Arc<dyn Fn(&[f64]) -> State + Send + Sync>;
pub type ScalarFieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Below this many initial points, per-point orbits are extended sequentially.
const PARALLEL_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("orbit left the finite reals at step {step}: {state:?}")]
    NonFinite { step: usize, state: State },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("initial set is empty")]
    EmptyInitialSet,

    #[error("{0}")]
    Invalid(String),

    #[error("orbit table i/o: {0}")]
    Table(String),
}

impl From<csv::Error> for SystemError {
    fn from(e: csv::Error) -> Self {
        SystemError::Table(e.to_string())
    }
}

impl From<io::Error> for SystemError {
    fn from(e: io::Error) -> Self {
        SystemError::Table(e.to_string())
    }
}

/// One term `coeff * Π x_i^{e_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|m| {
                m.exponents
                    .iter()
                    .zip(x)
                    .fold(m.coeff, |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    fn check_dimension(&self, dim: usize) -> Result<(), SystemError> {
        for m in &self.terms {
            if m.exponents.len() != dim {
                return Err(SystemError::Dimension {
                    expected: dim,
                    got: m.exponents.len(),
                    context: "monomial exponent list".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub enum MapKind {
    RunningExample,
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    Polynomial(Vec<Polynomial>),
    Custom { label: String, map: VectorFn },
}

impl fmt::Debug for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::RunningExample => write!(f, "RunningExample"),
            MapKind::Affine { matrix, offset } => f
                .debug_struct("Affine")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            MapKind::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
            MapKind::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// A self-map `T` of `R^d`.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    dimension: usize,
    kind: MapKind,
}

impl DiscreteSystem {
    pub fn running_example() -> Self {
        Self {
            dimension: 2,
            kind: MapKind::RunningExample,
        }
    }

    /// `T(x) = A x + b`.
    pub fn affine(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self, SystemError> {
        let d = matrix.len();
        if d == 0 {
            return Err(SystemError::Invalid("affine map needs a nonempty matrix".into()));
        }
        for row in &matrix {
            if row.len() != d {
                return Err(SystemError::Dimension {
                    expected: d,
                    got: row.len(),
                    context: "affine matrix must be square".into(),
                });
            }
        }
        if offset.len() != d {
            return Err(SystemError::Dimension {
                expected: d,
                got: offset.len(),
                context: "affine offset".into(),
            });
        }
        Ok(Self {
            dimension: d,
            kind: MapKind::Affine { matrix, offset },
        })
    }

    /// Linear map `T(x) = A x`.
    pub fn linear(matrix: Vec<Vec<f64>>) -> Result<Self, SystemError> {
        let d = matrix.len();
        Self::affine(matrix, vec![0.0; d])
    }

    /// One polynomial per output coordinate.
    pub fn polynomial(components: Vec<Polynomial>) -> Result<Self, SystemError> {
        let d = components.len();
        if d == 0 {
            return Err(SystemError::Invalid("polynomial map needs at least one component".into()));
        }
        for p in &components {
            p.check_dimension(d)?;
        }
        Ok(Self {
            dimension: d,
            kind: MapKind::Polynomial(components),
        })
    }

    pub fn from_fn<F>(dimension: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> State + Send + Sync + 'static,
    {
        Self {
            dimension,
            kind: MapKind::Custom {
                label: label.into(),
                map: Arc::new(f),
            },
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &str {
        match &self.kind {
            MapKind::RunningExample => "running-example",
            MapKind::Affine { .. } => "affine",
            MapKind::Polynomial(_) => "polynomial",
            MapKind::Custom { label, .. } => label,
        }
    }

    /// One application of `T`.
    pub fn apply(&self, x: &[f64]) -> State {
        match &self.kind {
            MapKind::RunningExample => running_example::map_h([x[0], x[1]]).to_vec(),
            MapKind::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| row.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>() + b)
                .collect(),
            MapKind::Polynomial(components) => components.iter().map(|p| p.eval(x)).collect(),
            MapKind::Custom { map, .. } => map(x),
        }
    }

    /// `T^k(x)`.
    pub fn iterate(&self, x: &[f64], k: usize) -> Result<State, SystemError> {
        self.check_state(x)?;
        let mut state = x.to_vec();
        for step in 1..=k {
            state = self.apply(&state);
            if state.iter().any(|v| !v.is_finite()) {
                return Err(SystemError::NonFinite { step, state });
            }
        }
        Ok(state)
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<(), SystemError> {
        if x.len() != self.dimension {
            return Err(SystemError::Dimension {
                expected: self.dimension,
                got: x.len(),
                context: "state vector".into(),
            });
        }
        Ok(())
    }

    /// `T^k` as a system of its own.
    pub fn power(&self, k: usize) -> DiscreteSystem {
        let base = self.clone();
        DiscreteSystem::from_fn(self.dimension, format!("{}^{k}", self.kind_name()), move |x| {
            let mut s = x.to_vec();
            for _ in 0..k {
                s = base.apply(&s);
            }
            s
        })
    }
}

/// Finite, nonempty set of initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSet {
    points: Vec<State>,
}

impl InitialSet {
    pub fn new(points: Vec<State>) -> Result<Self, SystemError> {
        let first = points.first().ok_or(SystemError::EmptyInitialSet)?;
        let d = first.len();
        if d == 0 {
            return Err(SystemError::Invalid("initial points must have positive dimension".into()));
        }
        for p in &points {
            if p.len() != d {
                return Err(SystemError::Dimension {
                    expected: d,
                    got: p.len(),
                    context: "initial point".into(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(SystemError::Invalid(format!("initial point {p:?} is not finite")));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[State] {
        &self.points
    }

    pub fn dimension(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.points.iter().map(|p| norm_sq(p)).fold(0.0, f64::max)
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[derive(Clone)]
pub enum ObjectiveKind {
    /// Zero-based coordinate projection.
    Coordinate(usize),
    Linear { coeffs: Vec<f64>, constant: f64 },
    /// `xᵀ Q x + bᵀ x + constant`.
    Quadratic {
        q: Vec<Vec<f64>>,
        b: Vec<f64>,
        constant: f64,
    },
    Norm,
    Custom { label: String, f: ScalarFieldFn },
}

impl fmt::Debug for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Coordinate(i) => write!(f, "Coordinate({i})"),
            ObjectiveKind::Linear { coeffs, constant } => {
                write!(f, "Linear({coeffs:?}, {constant})")
            }
            ObjectiveKind::Quadratic { q, b, constant } => {
                write!(f, "Quadratic({q:?}, {b:?}, {constant})")
            }
            ObjectiveKind::Norm => write!(f, "Norm"),
            ObjectiveKind::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl ObjectiveKind {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ObjectiveKind::Coordinate(i) => x[*i],
            ObjectiveKind::Linear { coeffs, constant } => {
                coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + constant
            }
            ObjectiveKind::Quadratic { q, b, constant } => {
                let quad: f64 = q
                    .iter()
                    .zip(x)
                    .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, xj)| a * xj).sum::<f64>())
                    .sum();
                quad + b.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + constant
            }
            ObjectiveKind::Norm => norm_sq(x).sqrt(),
            ObjectiveKind::Custom { f, .. } => f(x),
        }
    }

    /// Dimension implied by the objective's data, if any.
    fn dimension(&self) -> Option<usize> {
        match self {
            ObjectiveKind::Linear { coeffs, .. } => Some(coeffs.len()),
            ObjectiveKind::Quadratic { b, .. } => Some(b.len()),
            _ => None,
        }
    }
}

/// Objective `φ`, optionally shifted so that `φ(0) = 0`.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    shift: f64,
    offset_removed: bool,
}

impl Objective {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            shift: 0.0,
            offset_removed: false,
        }
    }

    pub fn coordinate(index: usize) -> Self {
        Self::new(ObjectiveKind::Coordinate(index))
    }

    pub fn custom<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(ObjectiveKind::Custom {
            label: label.into(),
            f: Arc::new(f),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.kind.eval(x) - self.shift
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn offset_removed(&self) -> bool {
        self.offset_removed
    }

    pub fn check_dimension(&self, dim: usize) -> Result<(), SystemError> {
        if let ObjectiveKind::Coordinate(i) = self.kind {
            if i >= dim {
                return Err(SystemError::Invalid(format!(
                    "objective selects coordinate {} of a {dim}-dimensional state",
                    i + 1
                )));
            }
        }
        if let ObjectiveKind::Quadratic { q, .. } = &self.kind {
            if q.len() != dim || q.iter().any(|r| r.len() != dim) {
                return Err(SystemError::Dimension {
                    expected: dim,
                    got: q.len(),
                    context: "quadratic objective matrix".into(),
                });
            }
        }
        match self.kind.dimension() {
            Some(d) if d != dim => Err(SystemError::Dimension {
                expected: dim,
                got: d,
                context: "objective coefficients".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// Shifts `φ` to `x ↦ φ(x) − φ(0)` and returns the removed offset `φ(0)`.
pub fn normalize_objective(obj: &Objective, dimension: usize) -> (Objective, f64) {
    let zero = vec![0.0; dimension];
    let offset = obj.eval(&zero);
    let normalized = Objective {
        kind: obj.kind.clone(),
        shift: obj.shift + offset,
        offset_removed: true,
    };
    (normalized, offset)
}

#[derive(Debug, Default)]
struct OrbitMemo {
    states: Vec<State>,
    failure: Option<(usize, State)>,
}

impl OrbitMemo {
    /// Extends the orbit so that `states[k]` exists.
    fn extend_to(&mut self, sys: &DiscreteSystem, k: usize) -> Result<&State, SystemError> {
        if let Some((step, state)) = &self.failure {
            if k >= *step {
                return Err(SystemError::NonFinite {
                    step: *step,
                    state: state.clone(),
                });
            }
        }
        while self.states.len() <= k {
            let next = sys.apply(self.states.last().expect("orbit starts at its initial point"));
            if next.iter().any(|v| !v.is_finite()) {
                let step = self.states.len();
                self.failure = Some((step, next.clone()));
                return Err(SystemError::NonFinite { step, state: next });
            }
            self.states.push(next);
        }
        Ok(&self.states[k])
    }
}

struct NuSource {
    system: DiscreteSystem,
    objective: Objective,
    orbits: Vec<Mutex<OrbitMemo>>,
}

impl NuSource {
    fn value_at(&self, index: usize, k: usize) -> Result<f64, SeqError> {
        let mut memo = self.orbits[index].lock().expect("orbit memo poisoned");
        match memo.extend_to(&self.system, k) {
            Ok(state) => Ok(self.objective.eval(state)),
            Err(e) => Err(SeqError::Evaluation {
                k,
                reason: format!("initial point #{index}: {e}"),
            }),
        }
    }
}

impl TermSource for NuSource {
    fn term(&self, k: usize) -> Result<f64, SeqError> {
        let n = self.orbits.len();
        let values: Result<Vec<f64>, SeqError> = if n >= PARALLEL_POINTS {
            (0..n).into_par_iter().map(|i| self.value_at(i, k)).collect()
        } else {
            (0..n).map(|i| self.value_at(i, k)).collect()
        };
        Ok(values?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// `ν_k = max_{x ∈ init} obj(T^k(x))`, with per-point orbits memoized so
/// that evaluating `ν_{k+1}` applies `T` once per point.
pub fn nu_sequence(
    sys: &DiscreteSystem,
    init: &InitialSet,
    obj: &Objective,
) -> Result<BoundedSequence, SystemError> {
    if init.dimension() != sys.dimension() {
        return Err(SystemError::Dimension {
            expected: sys.dimension(),
            got: init.dimension(),
            context: "initial set vs system".into(),
        });
    }
    obj.check_dimension(sys.dimension())?;
    let orbits = init
        .points()
        .iter()
        .map(|p| {
            Mutex::new(OrbitMemo {
                states: vec![p.clone()],
                failure: None,
            })
        })
        .collect();
    Ok(BoundedSequence::new(NuSource {
        system: sys.clone(),
        objective: obj.clone(),
        orbits,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitRow {
    pub point: usize,
    pub k: usize,
    pub state: State,
    pub norm_sq: f64,
    pub finite: bool,
}

/// Point-major table of orbit states, `k = 0..=horizon` per initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTable {
    pub dimension: usize,
    pub rows: Vec<OrbitRow>,
}

pub fn orbit_table(
    sys: &DiscreteSystem,
    init: &InitialSet,
    horizon: usize,
) -> Result<OrbitTable, SystemError> {
    if init.dimension() != sys.dimension() {
        return Err(SystemError::Dimension {
            expected: sys.dimension(),
            got: init.dimension(),
            context: "initial set vs system".into(),
        });
    }
    let mut rows = Vec::with_capacity(init.len() * (horizon + 1));
    for (point, x) in init.points().iter().enumerate() {
        let mut state = x.clone();
        for k in 0..=horizon {
            if k > 0 {
                state = sys.apply(&state);
            }
            let finite = state.iter().all(|v| v.is_finite());
            rows.push(OrbitRow {
                point,
                k,
                norm_sq: norm_sq(&state),
                state: state.clone(),
                finite,
            });
            if !finite {
                break;
            }
        }
    }
    Ok(OrbitTable {
        dimension: sys.dimension(),
        rows,
    })
}

impl OrbitTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["point".to_string(), "k".to_string()];
        h.extend((1..=self.dimension).map(|i| format!("x{i}")));
        h.push("norm_sq".into());
        h.push("status".into());
        h
    }

    /// CSV with a header row and shortest round-trip decimals.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), SystemError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.point.to_string(), row.k.to_string()];
            rec.extend(row.state.iter().map(|v| v.to_string()));
            rec.push(row.norm_sq.to_string());
            rec.push(if row.finite { "ok" } else { "nonfinite" }.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, SystemError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 5 || &header[0] != "point" || &header[1] != "k" {
            return Err(SystemError::Table(format!("unexpected orbit table header {header:?}")));
        }
        let dimension = header.len() - 4;
        let parse = |s: &str| -> Result<f64, SystemError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| SystemError::Table(format!("bad number {s:?}: {e}")))
        };
        let parse_index = |s: &str| -> Result<usize, SystemError> {
            s.trim()
                .parse::<usize>()
                .map_err(|e| SystemError::Table(format!("bad index {s:?}: {e}")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let state = (0..dimension)
                .map(|i| parse(&rec[2 + i]))
                .collect::<Result<State, _>>()?;
            rows.push(OrbitRow {
                point: parse_index(&rec[0])?,
                k: parse_index(&rec[1])?,
                state,
                norm_sq: parse(&rec[2 + dimension])?,
                finite: &rec[3 + dimension] == "ok",
            });
        }
        Ok(Self { dimension, rows })
    }

    pub fn horizon(&self) -> usize {
        self.rows.iter().map(|r| r.k).max().unwrap_or(0)
    }

    /// `ν_k` for `k = 0..=horizon` rebuilt from the stored states.
    pub fn nu_values(&self, obj: &Objective) -> Result<Vec<f64>, SystemError> {
        obj.check_dimension(self.dimension)?;
        let horizon = self.horizon();
        let mut values = vec![f64::NEG_INFINITY; horizon + 1];
        for row in &self.rows {
            if !row.finite {
                return Err(SystemError::NonFinite {
                    step: row.k,
                    state: row.state.clone(),
                });
            }
            values[row.k] = values[row.k].max(obj.eval(&row.state));
        }
        Ok(values)
    }
}
