//! `peakgate` command line.
//!
//! Exit codes: 0 success, 1 invalid input or failed hypothesis, 2 guard
//! exceeded, 3 certificate does not dominate the sequence, 4 reproduction
//! mismatch.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::certificate::{ratio_operator_estimate, BallSampler, Refinement};
use crate::config::{CertificateKind, ConfigError, LyapunovSpec, RadiusNamed, RadiusSpec, SolveConfig};
use crate::problem::{Problem, SolveError};
use crate::report::SolveReport;
use crate::reproduce::{find_cell, run_cell_with, CellOutcome, ReproduceError, GOLDEN};
use crate::running_example::{lyapunov_v, map_h, ratio_closed_form, ExampleError, Scenario};
use crate::sequence::BoundedSequence;
use crate::system::{orbit_table, OrbitTable, State, SystemError};

pub const LOG_ENV: &str = "PEAKGATE_LOG";

#[derive(Debug, Parser)]
#[command(name = "peakgate", version, about = "Exact peaks of discrete-time trajectories")]
pub struct Cli {
    /// Output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    /// Seed for every sampler (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Tolerance for residual membership and rounding (overrides the config).
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Largest rank searched while no stopping integer is known (overrides the config).
    #[arg(long, global = true)]
    pub guard: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CertArg {
    Kl,
    Lyapunov,
}

impl From<CertArg> for CertificateKind {
    fn from(c: CertArg) -> Self {
        match c {
            CertArg::Kl => CertificateKind::Kl,
            CertArg::Lyapunov => CertificateKind::Lyapunov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RatioMode {
    Closed,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapArg {
    RunningExample,
    Identity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the peak for a JSON problem description.
    Solve {
        config: PathBuf,
        /// Include the per-rank trace (table and csv formats).
        #[arg(long)]
        trace: bool,
        /// Solve from a stored orbit table instead of iterating the system.
        #[arg(long)]
        orbit_csv: Option<PathBuf>,
    },
    /// Compare builtin scenarios with their published values.
    Reproduce {
        /// Scenario a, b, c or d; all when omitted.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum)]
        certificate: Option<CertArg>,
        /// Objective coordinate 1 or 2; both when omitted.
        #[arg(long)]
        objective: Option<usize>,
    },
    /// Write the orbit table of a problem's initial set.
    Orbit {
        /// Problem description; alternatively use --scenario.
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        #[arg(long)]
        horizon: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ratio operator of a map at a Lyapunov function on a ball.
    Ratio {
        /// Use the Lyapunov function and radius of a problem description.
        config: Option<PathBuf>,
        /// Use the builtin V of the benchmark map.
        #[arg(long, conflicts_with = "config")]
        builtin_v: bool,
        #[arg(long)]
        radius_sq: Option<f64>,
        #[arg(long, value_enum, default_value_t = RatioMode::Closed)]
        mode: RatioMode,
        #[arg(long, value_enum, default_value_t = MapArg::RunningExample)]
        map: MapArg,
        /// Ball samples for estimate mode.
        #[arg(long, default_value_t = BallSampler::DEFAULT_COUNT)]
        samples: usize,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SolveError>() {
            return s.exit_code();
        }
        if let Some(r) = cause.downcast_ref::<ReproduceError>() {
            return match r {
                ReproduceError::Solve(s) => s.exit_code(),
                ReproduceError::Mismatch { .. } => 4,
                _ => 1,
            };
        }
    }
    1
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Solve {
            config,
            trace,
            orbit_csv,
        } => cmd_solve(cli, config, *trace, orbit_csv.as_ref(), out, err),
        Command::Reproduce {
            scenario,
            certificate,
            objective,
        } => cmd_reproduce(cli, scenario.as_deref(), *certificate, *objective, out, err),
        Command::Orbit {
            config,
            scenario,
            horizon,
            out: dest,
        } => cmd_orbit(cli, config.as_ref(), scenario.as_deref(), *horizon, dest.as_ref(), out),
        Command::Ratio {
            config,
            builtin_v,
            radius_sq,
            mode,
            map,
            samples,
        } => cmd_ratio(cli, config.as_ref(), *builtin_v, *radius_sq, *mode, *map, *samples, out),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<SolveConfig> {
    let mut cfg = SolveConfig::from_path(path).map_err(SolveError::from)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.tol {
        cfg.tolerance = t;
    }
    if let Some(g) = cli.guard {
        cfg.guard = g;
    }
    Ok(cfg)
}

fn cmd_solve(
    cli: &Cli,
    path: &Path,
    trace: bool,
    orbit_csv: Option<&PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cfg = load_config(cli, path)?;
    let problem = Problem::from_config(&cfg).map_err(SolveError::from)?;
    let report = match orbit_csv {
        None => problem.solve()?,
        Some(table_path) => {
            let file = File::open(table_path)
                .with_context(|| format!("cannot open orbit table {}", table_path.display()))?;
            let table = OrbitTable::read_csv(BufReader::new(file))
                .map_err(|e| SolveError::Config(ConfigError::System(e)))?;
            let values = table
                .nu_values(problem.objective())
                .map_err(|e| SolveError::Config(ConfigError::System(e)))?;
            log::info!("re-solving from {} stored ranks", values.len());
            problem.solve_sequence(&BoundedSequence::from_values(values))?
        }
    };
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    write_report(&report, cli.format, trace, out)?;
    Ok(0)
}

/// Six significant digits for human-readable tables.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..=9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt_str<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |v| v.to_string())
}

fn write_report(report: &SolveReport, format: Format, trace: bool, out: &mut dyn Write) -> Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", report.to_json())?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            if trace {
                w.write_record(["k", "value", "in_residual", "formula", "stopping_after", "updated"])?;
                for r in &report.trace {
                    w.write_record([
                        r.k.to_string(),
                        r.value.to_string(),
                        r.in_residual.to_string(),
                        opt_str(r.formula, "inf"),
                        opt_str(r.stopping_after, "inf"),
                        r.updated.to_string(),
                    ])?;
                }
            } else {
                w.write_record([
                    "optimum",
                    "argmax_rank",
                    "stopping_integer",
                    "stopping_integer_history",
                    "beta",
                    "h_at_zero",
                    "h_at_one",
                ])?;
                let history: Vec<String> =
                    report.stopping_integer_history.iter().map(|s| s.to_string()).collect();
                w.write_record([
                    report.optimum.to_string(),
                    report.argmax_rank.to_string(),
                    report.stopping_integer.to_string(),
                    history.join(" "),
                    report.certificate.beta.to_string(),
                    report.certificate.h_at_zero.to_string(),
                    report.certificate.h_at_one.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Table => {
            let c = &report.certificate;
            writeln!(out, "optimum            {}", sig6(report.optimum))?;
            writeln!(out, "argmax rank        {}", report.argmax_rank)?;
            writeln!(out, "stopping integer   {}", report.stopping_integer)?;
            let history: Vec<String> =
                report.stopping_integer_history.iter().map(|s| s.to_string()).collect();
            writeln!(out, "history            {}", history.join(" -> "))?;
            writeln!(out, "certificate        {} ({})", c.kind, c.description)?;
            writeln!(
                out,
                "beta               {}   h(0) = {}   h(1) = {}",
                sig6(c.beta),
                sig6(c.h_at_zero),
                sig6(c.h_at_one)
            )?;
            for (k, f) in report.formula_updates() {
                writeln!(out, "F({k})               {}", sig6(f))?;
            }
            if trace {
                writeln!(out)?;
                writeln!(out, "{:>6}  {:>14}  {:>12}  {:>8}  updated", "k", "value", "F", "K")?;
                for r in &report.trace {
                    writeln!(
                        out,
                        "{:>6}  {:>14}  {:>12}  {:>8}  {}",
                        r.k,
                        sig6(r.value),
                        r.formula.map_or("inf".into(), sig6),
                        opt_str(r.stopping_after, "inf"),
                        if r.updated { "*" } else { "" }
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_reproduce(
    cli: &Cli,
    scenario: Option<&str>,
    certificate: Option<CertArg>,
    objective: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cells: Vec<_> = match (scenario, certificate, objective) {
        (Some(s), Some(c), Some(o)) => vec![find_cell(s, c.into(), o)?],
        _ => {
            if let (Some(s), Some(CertArg::Kl)) = (scenario, certificate) {
                // surfaces the KL radius diagnostic for c and d
                find_cell(s, CertificateKind::Kl, objective.unwrap_or(1))?;
            }
            let picked: Vec<_> = GOLDEN
                .iter()
                .filter(|c| scenario.is_none_or(|s| c.scenario.eq_ignore_ascii_case(s.trim())))
                .filter(|c| certificate.is_none_or(|k| c.certificate == k.into()))
                .filter(|c| objective.is_none_or(|o| c.coordinate == o))
                .collect();
            if picked.is_empty() {
                bail!(ReproduceError::UnknownCell {
                    scenario: scenario.unwrap_or("*").to_string(),
                    certificate: certificate.map_or(CertificateKind::Lyapunov, Into::into),
                    coordinate: objective.unwrap_or(0),
                });
            }
            picked
        }
    };
    let mut outcomes = Vec::new();
    for cell in cells {
        outcomes.push(run_cell_with(cell, |cfg| {
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = cli.tol {
                cfg.tolerance = t;
            }
            if let Some(g) = cli.guard {
                cfg.guard = g;
            }
        })?);
    }
    write_comparison(&outcomes, cli.format, out)?;
    if let Some(e) = outcomes.iter().find_map(|o| o.first_mismatch()) {
        writeln!(err, "error: {e}")?;
        return Ok(4);
    }
    Ok(0)
}

#[derive(Serialize)]
struct ComparisonLine<'a> {
    scenario: &'a str,
    certificate: CertificateKind,
    objective: usize,
    #[serde(flatten)]
    row: &'a crate::reproduce::ComparisonRow,
}

fn write_comparison(outcomes: &[CellOutcome], format: Format, out: &mut dyn Write) -> Result<()> {
    let lines: Vec<ComparisonLine> = outcomes
        .iter()
        .flat_map(|o| {
            o.rows.iter().map(move |row| ComparisonLine {
                scenario: o.cell.scenario,
                certificate: o.cell.certificate,
                objective: o.cell.coordinate,
                row,
            })
        })
        .collect();
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&lines)?)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record([
                "scenario",
                "certificate",
                "objective",
                "quantity",
                "published",
                "computed",
                "abs_diff",
                "status",
            ])?;
            for l in &lines {
                w.write_record([
                    l.scenario.to_string(),
                    cert_name(l.certificate).to_string(),
                    l.objective.to_string(),
                    l.row.quantity.clone(),
                    l.row.published.to_string(),
                    l.row.computed.to_string(),
                    l.row.abs_diff.to_string(),
                    status(l.row.ok).to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Table => {
            writeln!(
                out,
                "{:<4} {:<9} {:>3}  {:<32} {:>12} {:>12} {:>12}  status",
                "scen", "cert", "obj", "quantity", "published", "computed", "|diff|"
            )?;
            for l in &lines {
                let fmt = |x: f64| {
                    if l.row.exact && x.is_finite() {
                        format!("{x}")
                    } else {
                        sig6(x)
                    }
                };
                writeln!(
                    out,
                    "{:<4} {:<9} {:>3}  {:<32} {:>12} {:>12} {:>12}  {}",
                    l.scenario,
                    cert_name(l.certificate),
                    l.objective,
                    l.row.quantity,
                    fmt(l.row.published),
                    fmt(l.row.computed),
                    sig6(l.row.abs_diff),
                    status(l.row.ok)
                )?;
            }
        }
    }
    Ok(())
}

fn cert_name(c: CertificateKind) -> &'static str {
    match c {
        CertificateKind::Kl => "kl",
        CertificateKind::Lyapunov => "lyapunov",
    }
}

fn status(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISMATCH"
    }
}

fn cmd_orbit(
    cli: &Cli,
    config: Option<&PathBuf>,
    scenario: Option<&str>,
    horizon: usize,
    dest: Option<&PathBuf>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (system, init) = match (config, scenario) {
        (Some(path), _) => {
            let cfg = load_config(cli, path)?;
            let problem = Problem::from_config(&cfg).map_err(SolveError::from)?;
            (problem.system().clone(), problem.initial_set().clone())
        }
        (None, Some(name)) => (
            crate::system::DiscreteSystem::running_example(),
            Scenario::named(name).map_err(|e| SolveError::Config(e.into()))?.points,
        ),
        (None, None) => bail!(SolveError::Config(ConfigError::Invalid(
            "orbit needs a config path or --scenario".into()
        ))),
    };
    let table = orbit_table(&system, &init, horizon).map_err(|e| SolveError::Config(e.into()))?;
    if let Some(path) = dest {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        table.write_csv(io::BufWriter::new(file)).map_err(system_error)?;
        writeln!(out, "wrote {} rows to {}", table.rows.len(), path.display())?;
        return Ok(0);
    }
    match cli.format {
        Format::Csv => table.write_csv(&mut *out).map_err(system_error)?,
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                point: usize,
                k: usize,
                state: &'a State,
                norm_sq: f64,
                finite: bool,
            }
            let rows: Vec<Row> = table
                .rows
                .iter()
                .map(|r| Row {
                    point: r.point,
                    k: r.k,
                    state: &r.state,
                    norm_sq: r.norm_sq,
                    finite: r.finite,
                })
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
        }
        Format::Table => {
            for r in &table.rows {
                let state: Vec<String> = r.state.iter().map(|v| sig6(*v)).collect();
                writeln!(
                    out,
                    "{:>4} {:>6}  [{}]  |x|^2 = {}{}",
                    r.point,
                    r.k,
                    state.join(", "),
                    sig6(r.norm_sq),
                    if r.finite { "" } else { "  (non-finite)" }
                )?;
            }
        }
    }
    Ok(0)
}

fn system_error(e: SystemError) -> SolveError {
    SolveError::Config(ConfigError::System(e))
}

#[derive(Serialize)]
struct RatioOutput {
    mode: &'static str,
    radius_sq: f64,
    ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trail: Option<Vec<f64>>,
    is_certificate: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_ratio(
    cli: &Cli,
    config: Option<&PathBuf>,
    builtin_v: bool,
    radius_sq: Option<f64>,
    mode: RatioMode,
    map: MapArg,
    samples: usize,
    out: &mut dyn Write,
) -> Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    let output = if let Some(path) = config {
        let cfg = load_config(cli, path)?;
        let crate::config::CertificateSpec::Lyapunov(spec) = &cfg.certificate else {
            bail!(SolveError::Config(ConfigError::Invalid(
                "ratio needs a config with a lyapunov certificate".into()
            )));
        };
        let spec = LyapunovSpec {
            radius_sq: radius_sq.map_or(spec.radius_sq, RadiusSpec::Value),
            ratio: match mode {
                RatioMode::Closed => crate::config::RatioSpec::ClosedForm,
                RatioMode::Estimate => crate::config::RatioSpec::Estimate,
            },
            ..spec.clone()
        };
        let cfg = SolveConfig {
            certificate: crate::config::CertificateSpec::Lyapunov(spec.clone()),
            ratio_samples: samples,
            seed,
            ..cfg
        };
        let problem = Problem::from_config(&cfg).map_err(SolveError::from)?;
        let r = match spec.radius_sq {
            RadiusSpec::Value(r) => r,
            RadiusSpec::Named(RadiusNamed::Auto) => problem.initial_set().max_norm_sq(),
        };
        RatioOutput {
            mode: mode_name(mode),
            radius_sq: r,
            ratio: problem.pair().beta(),
            samples: None,
            trail: None,
            is_certificate: mode == RatioMode::Closed,
        }
    } else {
        if !builtin_v {
            bail!(SolveError::Config(ConfigError::Invalid(
                "ratio needs --builtin-v or a config path".into()
            )));
        }
        let Some(r) = radius_sq else {
            bail!(SolveError::Config(ConfigError::Invalid("--radius-sq is required with --builtin-v".into())));
        };
        match mode {
            RatioMode::Closed => {
                if map != MapArg::RunningExample {
                    bail!(SolveError::Config(ConfigError::Invalid(
                        "the closed form exists only for the running-example map".into()
                    )));
                }
                RatioOutput {
                    mode: "closed",
                    radius_sq: r,
                    ratio: ratio_closed_form(r).map_err(example_error)?,
                    samples: None,
                    trail: None,
                    is_certificate: true,
                }
            }
            RatioMode::Estimate => {
                if !(r > 0.0 && r.is_finite()) {
                    bail!(example_error(ExampleError::RadiusOutOfRange(r)));
                }
                if map == MapArg::RunningExample && r >= crate::running_example::rho_bar() {
                    bail!(example_error(ExampleError::RadiusOutOfRange(r)));
                }
                let sampler = BallSampler::new(2, r).with_count(samples).with_seed(seed);
                let f = move |x: &[f64]| -> State {
                    match map {
                        MapArg::RunningExample => map_h([x[0], x[1]]).to_vec(),
                        MapArg::Identity => x.to_vec(),
                    }
                };
                let est = ratio_operator_estimate(&lyapunov_v, &f, &sampler, Refinement::default())
                    .map_err(|e| SolveError::Config(e.into()))?;
                RatioOutput {
                    mode: "estimate",
                    radius_sq: r,
                    ratio: est.value,
                    samples: Some(est.samples),
                    trail: Some(est.trail),
                    is_certificate: false,
                }
            }
        }
    };
    match cli.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&output)?)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(["mode", "radius_sq", "ratio", "samples", "trail"])?;
            let trail: Vec<String> = output
                .trail
                .iter()
                .flatten()
                .map(|v| v.to_string())
                .collect();
            w.write_record([
                output.mode.to_string(),
                output.radius_sq.to_string(),
                output.ratio.to_string(),
                opt_str(output.samples, ""),
                trail.join(" "),
            ])?;
            w.flush()?;
        }
        Format::Table => {
            writeln!(out, "mode      {}", output.mode)?;
            writeln!(out, "radius^2  {}", output.radius_sq)?;
            writeln!(out, "ratio     {}", sig6(output.ratio))?;
            if let Some(n) = output.samples {
                writeln!(out, "samples   {n}")?;
            }
            if let Some(trail) = &output.trail {
                let t: Vec<String> = trail.iter().map(|v| sig6(*v)).collect();
                writeln!(out, "trail     {}", t.join(" -> "))?;
                writeln!(out, "note      sampled lower estimate, not a certificate")?;
            }
        }
    }
    Ok(0)
}

fn mode_name(m: RatioMode) -> &'static str {
    match m {
        RatioMode::Closed => "closed",
        RatioMode::Estimate => "estimate",
    }
}

fn example_error(e: ExampleError) -> SolveError {
    SolveError::Config(ConfigError::Example(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(7.341494), "7.34149");
        assert_eq!(sig6(0.0418344), "0.0418344");
        assert_eq!(sig6(268.4652), "268.465");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }

    #[test]
    fn cli_parses_globals_after_subcommand() {
        let cli = Cli::try_parse_from(["peakgate", "reproduce", "--scenario", "a", "--format", "json", "--seed", "4"])
            .unwrap();
        assert_eq!(cli.format, Format::Json);
        assert_eq!(cli.seed, Some(4));
    }
}
