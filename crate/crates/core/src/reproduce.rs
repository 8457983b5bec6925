//! Golden comparison for the builtin scenarios: every published quantity of
//! a (scenario, certificate, coordinate) cell against the computed one.

use serde::Serialize;
use thiserror::Error;

use crate::config::{CertificateKind, ConfigError, SolveConfig};
use crate::problem::{Problem, SolveError};
use crate::report::SolveReport;
use crate::running_example::{rho_under, Scenario};

/// Relative tolerance for printed decimals.
pub const REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCell {
    pub scenario: &'static str,
    pub certificate: CertificateKind,
    pub coordinate: usize,
    /// `β` for Lyapunov cells.
    pub ratio: Option<f64>,
    /// `(k, 𝔉(k))` pairs that were published.
    pub formulas: &'static [(usize, f64)],
    /// Full stopping-integer history, when published.
    pub stopping: Option<&'static [u64]>,
    pub argmax: usize,
    pub optimum: f64,
}

#[allow(clippy::too_many_arguments)]
const fn cell(
    scenario: &'static str,
    certificate: CertificateKind,
    coordinate: usize,
    ratio: Option<f64>,
    formulas: &'static [(usize, f64)],
    stopping: Option<&'static [u64]>,
    argmax: usize,
    optimum: f64,
) -> GoldenCell {
    GoldenCell {
        scenario,
        certificate,
        coordinate,
        ratio,
        formulas,
        stopping,
        argmax,
        optimum,
    }
}

use CertificateKind::{Kl, Lyapunov};

pub const GOLDEN: &[GoldenCell] = &[
    cell("a", Kl, 1, None, &[(2, 7.3415)], Some(&[7]), 2, 0.03463),
    cell("a", Kl, 2, None, &[(2, 8.0482)], Some(&[8]), 2, 0.02432),
    cell("b", Kl, 1, None, &[(0, 2.4598), (1, 2.4584)], Some(&[2, 2]), 1, 0.70048),
    cell("b", Kl, 2, None, &[(0, 10.432), (3, 8.0945)], Some(&[10, 8]), 3, 0.04183),
    cell("a", Lyapunov, 1, Some(0.03125), &[(2, 2.1183)], None, 2, 0.03463),
    cell("a", Lyapunov, 2, Some(0.03125), &[(2, 2.3222)], None, 2, 0.02432),
    cell("b", Lyapunov, 1, Some(0.36581), &[(1, 2.44459)], None, 1, 0.70048),
    cell("b", Lyapunov, 2, Some(0.36581), &[(3, 8.04905)], None, 3, 0.04183),
    cell(
        "c",
        Lyapunov,
        1,
        Some(0.9248),
        &[(0, 20.187), (1, 17.897), (2, 16.867)],
        Some(&[20, 17, 16]),
        2,
        2.50476,
    ),
    cell("c", Lyapunov, 2, Some(0.9248), &[(5, 88.6294)], Some(&[88]), 5, 0.15155),
    cell("d", Lyapunov, 1, Some(0.9706), &[(4, 268.47), (6, 233.34)], Some(&[268, 233]), 6, 0.1512),
    cell("d", Lyapunov, 2, Some(0.9706), &[(5, 339.85), (7, 316.78)], Some(&[339, 316]), 7, 0.0435835),
];

#[derive(Debug, Error)]
pub enum ReproduceError {
    #[error("no published values for scenario {scenario} with the {certificate:?} certificate and coordinate {coordinate}")]
    UnknownCell {
        scenario: String,
        certificate: CertificateKind,
        coordinate: usize,
    },

    #[error(
        "the KL certificate needs the initial set inside the ball of squared radius rho_under = {rho:.4}; \
         scenario {scenario} reaches {radius_sq}"
    )]
    KlOutsideStrongContraction {
        scenario: String,
        radius_sq: f64,
        rho: f64,
    },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Solve(#[from] SolveError),

    #[error("mismatch in {quantity}: published {expected}, computed {computed}")]
    Mismatch {
        quantity: String,
        expected: String,
        computed: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub published: f64,
    pub computed: f64,
    pub abs_diff: f64,
    /// `true` for integers, compared exactly.
    pub exact: bool,
    pub ok: bool,
}

impl ComparisonRow {
    fn real(quantity: String, published: f64, computed: f64) -> Self {
        let abs_diff = (computed - published).abs();
        Self {
            quantity,
            published,
            computed,
            abs_diff,
            exact: false,
            ok: abs_diff <= REL_TOL * published.abs(),
        }
    }

    fn integer(quantity: String, published: u64, computed: u64) -> Self {
        Self {
            quantity,
            published: published as f64,
            computed: computed as f64,
            abs_diff: (computed as f64 - published as f64).abs(),
            exact: true,
            ok: published == computed,
        }
    }

    fn missing(quantity: String, published: f64) -> Self {
        Self {
            quantity,
            published,
            computed: f64::NAN,
            abs_diff: f64::NAN,
            exact: false,
            ok: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: GoldenCell,
    pub report: SolveReport,
    pub rows: Vec<ComparisonRow>,
}

impl CellOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }

    pub fn first_mismatch(&self) -> Option<ReproduceError> {
        self.rows.iter().find(|r| !r.ok).map(|r| ReproduceError::Mismatch {
            quantity: r.quantity.clone(),
            expected: r.published.to_string(),
            computed: r.computed.to_string(),
        })
    }
}

pub fn find_cell(
    scenario: &str,
    certificate: CertificateKind,
    coordinate: usize,
) -> Result<&'static GoldenCell, ReproduceError> {
    let scenario = scenario.trim().to_ascii_lowercase();
    if certificate == Kl {
        let s = Scenario::named(&scenario).map_err(ConfigError::from)?;
        if s.radius_sq >= rho_under() {
            return Err(ReproduceError::KlOutsideStrongContraction {
                scenario,
                radius_sq: s.radius_sq,
                rho: rho_under(),
            });
        }
    }
    GOLDEN
        .iter()
        .find(|c| c.scenario == scenario && c.certificate == certificate && c.coordinate == coordinate)
        .ok_or(ReproduceError::UnknownCell {
            scenario,
            certificate,
            coordinate,
        })
}

/// Solves the cell with `tweak` applied to its config and compares.
pub fn run_cell_with(
    cell: &GoldenCell,
    tweak: impl FnOnce(&mut SolveConfig),
) -> Result<CellOutcome, ReproduceError> {
    let mut cfg = SolveConfig::scenario(cell.scenario, cell.coordinate, cell.certificate);
    tweak(&mut cfg);
    let problem = Problem::from_config(&cfg)?;
    let report = problem.solve()?;
    let mut rows = Vec::new();
    if let Some(r) = cell.ratio {
        rows.push(ComparisonRow::real("beta".into(), r, report.certificate.beta));
    }
    for &(k, f) in cell.formulas {
        let name = format!("F({k})");
        rows.push(match report.trace.get(k).and_then(|r| r.formula) {
            Some(v) => ComparisonRow::real(name, f, v),
            None => ComparisonRow::missing(name, f),
        });
    }
    if let Some(stops) = cell.stopping {
        for (i, &s) in stops.iter().enumerate() {
            let name = format!("stopping integer #{}", i + 1);
            rows.push(match report.stopping_integer_history.get(i) {
                Some(&c) => ComparisonRow::integer(name, s, c),
                None => ComparisonRow::missing(name, s as f64),
            });
        }
        if report.stopping_integer_history.len() > stops.len() {
            rows.push(ComparisonRow::integer(
                "number of stopping-integer updates".into(),
                stops.len() as u64,
                report.stopping_integer_history.len() as u64,
            ));
        }
    }
    rows.push(ComparisonRow::integer(
        "argmax rank".into(),
        cell.argmax as u64,
        report.argmax_rank as u64,
    ));
    rows.push(ComparisonRow::real("optimum".into(), cell.optimum, report.optimum));
    Ok(CellOutcome {
        cell: cell.clone(),
        report,
        rows,
    })
}

pub fn run_cell(cell: &GoldenCell) -> Result<CellOutcome, ReproduceError> {
    run_cell_with(cell, |_| {})
}
