//! The planar benchmark map
//!
//! ```text
//! H(x) = (1/8) [ ‖x‖²−1   −1    ] x
//!              [   1    ‖x‖²−1 ]
//! ```
//!
//! together with its squared-norm dynamics `f`, the per-step ratio `g`, the
//! Lyapunov function `V(x) = max(‖x‖², e‖H(x)‖²)`, the closed form of the
//! ratio operator of `H` at `V` on balls, and four named initial sets.
//!
//! Orbits started with `‖x‖² < ρ̄ = √63 + 1` stay in their ball and shrink;
//! below `ρ̲ = √(64/e − 1) + 1` the squared norm contracts by more than `e⁻¹`
//! per step.

use std::f64::consts::E;

use thiserror::Error;

use crate::system::{norm_sq, InitialSet, State, SystemError};

/// Tolerance used when deciding on which side of a branch knot `r` falls.
pub const KNOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExampleError {
    #[error("squared radius {0} is outside (0, rho_bar = {rho_bar})", rho_bar = rho_bar())]
    RadiusOutOfRange(f64),

    #[error("unknown scenario {0:?}; expected one of a, b, c, d")]
    UnknownScenario(String),

    #[error("coordinate must be 1 or 2, got {0}")]
    BadCoordinate(usize),

    #[error(transparent)]
    System(#[from] SystemError),
}

/// `√63 + 1`: squared-norm threshold below which `‖H(x)‖ < ‖x‖`.
pub fn rho_bar() -> f64 {
    63f64.sqrt() + 1.0
}

/// `√(64/e − 1) + 1`: squared-norm threshold below which `‖H(x)‖² < e⁻¹‖x‖²`.
pub fn rho_under() -> f64 {
    (64.0 / E - 1.0).sqrt() + 1.0
}

/// `H(x)`, with `‖x‖²` computed once.
pub fn map_h(x: [f64; 2]) -> [f64; 2] {
    let m = x[0] * x[0] + x[1] * x[1] - 1.0;
    [(m * x[0] - x[1]) / 8.0, (x[0] + m * x[1]) / 8.0]
}

/// `f(s) = s(1 + (s−1)²)/64`, so that `‖H(x)‖² = f(‖x‖²)`.
pub fn f_of(s: f64) -> f64 {
    s * (1.0 + (s - 1.0) * (s - 1.0)) / 64.0
}

/// `g(s) = f(s)/s`, extended by continuity with `g(0) = 1/32`.
pub fn g_of(s: f64) -> f64 {
    if s > 0.0 {
        (1.0 + (s - 1.0) * (s - 1.0)) / 64.0
    } else {
        1.0 / 32.0
    }
}

/// `V(x) = max(‖x‖², e‖H(x)‖²)`.
pub fn lyapunov_v(x: &[f64]) -> f64 {
    let s = x[0] * x[0] + x[1] * x[1];
    s.max(E * f_of(s))
}

/// Supremum of `V(H(x))/V(x)` over the nonzero points of the closed ball
/// `{‖x‖² <= r}`, for `0 < r < ρ̄`.
pub fn ratio_closed_form(r: f64) -> Result<f64, ExampleError> {
    if !(r > 0.0 && r < rho_bar()) {
        return Err(ExampleError::RadiusOutOfRange(r));
    }
    let under = rho_under();
    Ok(if r <= 2.0 + KNOT_TOL {
        1.0 / 32.0
    } else if r <= under + KNOT_TOL {
        g_of(r)
    } else if f_of(r) <= under + KNOT_TOL {
        (-1.0f64).exp()
    } else {
        g_of(f_of(r))
    })
}

/// Smallest `k <= cap` with the given coordinate (1 or 2) of `H^k(x)`
/// strictly positive.
pub fn first_positive_rank(
    x: [f64; 2],
    coordinate: usize,
    cap: usize,
) -> Result<Option<usize>, ExampleError> {
    if !(coordinate == 1 || coordinate == 2) {
        return Err(ExampleError::BadCoordinate(coordinate));
    }
    let mut state = x;
    for k in 0..=cap {
        if k > 0 {
            state = map_h(state);
            if !(state[0].is_finite() && state[1].is_finite()) {
                return Err(SystemError::NonFinite {
                    step: k,
                    state: state.to_vec(),
                }
                .into());
            }
        }
        if state[coordinate - 1] > 0.0 {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// A named initial set for the benchmark map.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: char,
    pub points: InitialSet,
    /// Smallest `r` with every point in the ball `{‖x‖² <= r}`.
    pub radius_sq: f64,
    pub sup_norm_sq: f64,
    pub sup_v: f64,
}

impl Scenario {
    pub fn named(name: &str) -> Result<Self, ExampleError> {
        let points: Vec<State> = match name.trim().to_ascii_lowercase().as_str() {
            "a" => vec![vec![-1.3, -0.3], vec![-1.1, -0.8]],
            "b" => vec![vec![-2.3, 0.013], vec![0.7, -2.29]],
            "c" => vec![vec![2.2, -2.0]],
            "d" => vec![vec![-2.3, -1.9], vec![-2.5, -1.5]],
            _ => return Err(ExampleError::UnknownScenario(name.to_string())),
        };
        let sup_norm_sq = points.iter().map(|p| norm_sq(p)).fold(0.0, f64::max);
        let sup_v = points.iter().map(|p| lyapunov_v(p)).fold(0.0, f64::max);
        Ok(Self {
            name: name.trim().chars().next().expect("matched a one-letter name").to_ascii_lowercase(),
            points: InitialSet::new(points)?,
            radius_sq: sup_norm_sq,
            sup_norm_sq,
            sup_v,
        })
    }

    pub fn all() -> Vec<Scenario> {
        ["a", "b", "c", "d"]
            .iter()
            .map(|n| Scenario::named(n).expect("builtin scenario"))
            .collect()
    }
}
