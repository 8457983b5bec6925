//! Versioned JSON result of a solve. The schema lives in
//! `docs/report-schema.json`.

use serde::{Deserialize, Serialize};

use crate::sequence::{CertificatePair, PeakSolution, TraceRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    /// `kl`, `lyapunov-direct`, `lyapunov-continuous` or `explicit`.
    pub kind: String,
    pub description: String,
    pub beta: f64,
    pub h_at_zero: f64,
    pub h_at_one: f64,
    /// How `β` was obtained for Lyapunov certificates.
    pub ratio_source: Option<String>,
}

impl CertificateSummary {
    pub fn from_pair(kind: &str, pair: &CertificatePair, ratio_source: Option<String>) -> Self {
        Self {
            kind: kind.to_string(),
            description: pair.h().description().to_string(),
            beta: pair.beta(),
            h_at_zero: pair.h().value_at_zero(),
            h_at_one: pair.h().value_at_one(),
            ratio_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    /// Peak of the objective as given, constant offset included.
    pub optimum: f64,
    /// Peak of the objective shifted to vanish at the origin.
    pub normalized_optimum: f64,
    pub objective_offset: f64,
    pub argmax_rank: usize,
    pub stopping_integer: u64,
    pub stopping_integer_history: Vec<u64>,
    pub certificate: CertificateSummary,
    /// Some term exceeded `h(0)`, so the stopping integer is finite.
    pub usefulness: bool,
    pub trace: Vec<TraceRecord>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn new(
        solution: &PeakSolution,
        certificate: CertificateSummary,
        objective_offset: f64,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            optimum: solution.optimum + objective_offset,
            normalized_optimum: solution.optimum,
            objective_offset,
            argmax_rank: solution.argmax_rank,
            stopping_integer: solution.stopping_integer,
            stopping_integer_history: solution.stopping_history(),
            certificate,
            usefulness: solution.trace.iter().any(|r| r.in_residual),
            trace: solution.trace.clone(),
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Formula values at the ranks where the running maximum improved.
    pub fn formula_updates(&self) -> Vec<(usize, f64)> {
        self.trace
            .iter()
            .filter(|r| r.updated)
            .filter_map(|r| r.formula.map(|f| (r.k, f)))
            .collect()
    }
}
