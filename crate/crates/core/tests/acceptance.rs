//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Published values are restated here on
//! purpose instead of being read from the library's golden table.

// negated comparisons make NaN count as a failure
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::E;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peakgate::certificate::{ratio_operator_estimate, ratio_over_points, BallSampler, Refinement};
use peakgate::config::{CertificateKind, SolveConfig};
use peakgate::problem::Problem;
use peakgate::report::SolveReport;
use peakgate::running_example::{
    f_of, first_positive_rank, lyapunov_v, map_h, ratio_closed_form, rho_bar, rho_under, Scenario,
};
use peakgate::sequence::{
    brute_force_sup, first_escape_rank, solve_peak, BoundedSequence, BridgeFunction, CertificatePair,
};
use peakgate::system::{norm_sq, State};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

const REL: f64 = 1e-3;

fn close(what: &str, computed: f64, published: f64) -> Check {
    if (computed - published).abs() <= REL * published.abs() {
        Ok(())
    } else {
        Err(format!("{what}: computed {computed}, published {published}"))
    }
}

fn exact<T: PartialEq + std::fmt::Debug>(what: &str, computed: T, published: T) -> Check {
    if computed == published {
        Ok(())
    } else {
        Err(format!("{what}: computed {computed:?}, published {published:?}"))
    }
}

fn solve(scenario: &str, coordinate: usize, kind: CertificateKind) -> Result<(Problem, SolveReport), String> {
    let cfg = SolveConfig::scenario(scenario, coordinate, kind);
    let problem = Problem::from_config(&cfg).map_err(|e| format!("{scenario}/{coordinate}: {e}"))?;
    let report = problem.solve().map_err(|e| format!("{scenario}/{coordinate}: {e}"))?;
    Ok((problem, report))
}

fn formula(report: &SolveReport, k: usize) -> Result<f64, String> {
    report
        .trace
        .get(k)
        .and_then(|r| r.formula)
        .ok_or_else(|| format!("no finite formula value at rank {k}"))
}

/// `(coordinate, k, F(k), stopping history, argmax, optimum)`
type Expect = (usize, usize, f64, Option<&'static [u64]>, usize, f64);

fn check_cell(scenario: &str, kind: CertificateKind, e: Expect) -> Result<SolveReport, String> {
    let (coordinate, k, f, stops, argmax, optimum) = e;
    let (_, report) = solve(scenario, coordinate, kind)?;
    let tag = format!("{scenario}/pi{coordinate}");
    close(&format!("{tag} F({k})"), formula(&report, k)?, f)?;
    if let Some(stops) = stops {
        exact(&format!("{tag} stopping integers"), report.stopping_integer_history.as_slice(), stops)?;
    }
    exact(&format!("{tag} argmax rank"), report.argmax_rank, argmax)?;
    close(&format!("{tag} optimum"), report.optimum, optimum)?;
    Ok(report)
}

fn criterion_1() -> Check {
    let r1 = check_cell("a", CertificateKind::Kl, (1, 2, 7.3415, Some(&[7]), 2, 0.03463))?;
    let r2 = check_cell("a", CertificateKind::Kl, (2, 2, 8.0482, Some(&[8]), 2, 0.02432))?;
    exact("a/pi1 stopping integer", r1.stopping_integer, 7)?;
    exact("a/pi2 stopping integer", r2.stopping_integer, 8)
}

fn criterion_2() -> Check {
    let r1 = check_cell("b", CertificateKind::Kl, (1, 1, 2.4584, None, 1, 0.70048))?;
    close("b/pi1 F(0)", formula(&r1, 0)?, 2.4598)?;
    let r2 = check_cell("b", CertificateKind::Kl, (2, 3, 8.0945, None, 3, 0.04183))?;
    close("b/pi2 F(0)", formula(&r2, 0)?, 10.432)
}

fn criterion_3() -> Check {
    for (coordinate, lyap) in [(1, 2.1183), (2, 2.3222)] {
        let r = check_cell(
            "a",
            CertificateKind::Lyapunov,
            (coordinate, 2, lyap, None, 2, [0.03463, 0.02432][coordinate - 1]),
        )?;
        close("a beta", r.certificate.beta, 1.0 / 32.0)?;
        let (_, kl_report) = solve("a", coordinate, CertificateKind::Kl)?;
        let (fl, fk) = (formula(&r, 2)?, formula(&kl_report, 2)?);
        if !(fl < fk) {
            return Err(format!("a/pi{coordinate}: Lyapunov F(2) = {fl} is not below KL F(2) = {fk}"));
        }
    }
    Ok(())
}

fn criterion_4() -> Check {
    let r1 = check_cell("b", CertificateKind::Lyapunov, (1, 1, 2.44459, None, 1, 0.70048))?;
    close("b beta", r1.certificate.beta, 0.36581)?;
    check_cell("b", CertificateKind::Lyapunov, (2, 3, 8.04905, None, 3, 0.04183))?;
    Ok(())
}

fn criterion_5() -> Check {
    let c = Scenario::named("c").map_err(|e| e.to_string())?;
    close("c radius", c.radius_sq, 8.84)?;
    let g = ratio_closed_form(8.84).map_err(|e| e.to_string())?;
    close("ratio at 8.84", g, 0.9248)?;
    close("f(8.84)", f_of(8.84), 8.6281)?;
    let r1 = check_cell("c", CertificateKind::Lyapunov, (1, 2, 16.867, Some(&[20, 17, 16]), 2, 2.50476))?;
    close("c beta", r1.certificate.beta, 0.9248)?;
    close("c/pi1 F(0)", formula(&r1, 0)?, 20.187)?;
    close("c/pi1 F(1)", formula(&r1, 1)?, 17.897)?;
    check_cell("c", CertificateKind::Lyapunov, (2, 5, 88.6294, Some(&[88]), 5, 0.15155))?;
    Ok(())
}

fn criterion_6() -> Check {
    close("ratio at 8.9", ratio_closed_form(8.9).map_err(|e| e.to_string())?, 0.9706)?;
    let r1 = check_cell("d", CertificateKind::Lyapunov, (1, 6, 233.34, Some(&[268, 233]), 6, 0.1512))?;
    close("d/pi1 first F", r1.formula_updates()[0].1, 268.47)?;
    let r2 = check_cell("d", CertificateKind::Lyapunov, (2, 7, 316.78, Some(&[339, 316]), 7, 0.0435835))?;
    close("d/pi2 first F", r2.formula_updates()[0].1, 339.85)?;
    for (z, ranks) in [([-2.3, -1.9], (6, 7)), ([-2.5, -1.5], (4, 5))] {
        let p1 = first_positive_rank(z, 1, 100).map_err(|e| e.to_string())?;
        let p2 = first_positive_rank(z, 2, 100).map_err(|e| e.to_string())?;
        exact(&format!("first positive ranks of {z:?}"), (p1, p2), (Some(ranks.0), Some(ranks.1)))?;
    }
    Ok(())
}

fn criterion_7() -> Check {
    let cases = [
        ([-1.3, -0.3], [-357.0 / 4000.0, -767.0 / 4000.0]),
        ([-1.1, -0.8], [-27.0 / 1600.0, -89.0 / 400.0]),
    ];
    for (x, want) in cases {
        let y = map_h(x);
        for i in 0..2 {
            if (y[i] - want[i]).abs() > 1e-12 {
                return Err(format!("H({x:?})[{i}] = {}, expected {}", y[i], want[i]));
            }
        }
    }
    Ok(())
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let beta = rng.gen_range(0.3..0.95);
        let c = rng.gen_range(0.5..5.0);
        let sqrt_bridge = case % 2 == 1;
        let (h, offset) = if sqrt_bridge {
            (BridgeFunction::sqrt_scaled(c), 0.0)
        } else {
            let d = rng.gen_range(-1.0..1.0);
            (BridgeFunction::affine(c, d), d)
        };
        let pair = CertificatePair::new(h.map_err(|e| e.to_string())?, beta).map_err(|e| e.to_string())?;
        let mut values: Vec<f64> = (0..4000)
            .map(|k| {
                let w: f64 = rng.gen_range(-0.5..1.0);
                offset + w * (pair.envelope(k) - offset)
            })
            .collect();
        let lift = rng.gen_range(0..10);
        values[lift] = offset + rng.gen_range(0.05..1.0) * (pair.envelope(lift) - offset);
        let u = BoundedSequence::from_values(values);
        let sol = solve_peak(&u, &pair, 10_000).map_err(|e| format!("case {case}: {e}"))?;
        let horizon = 4 * sol.stopping_integer as usize;
        let (best, rank) = brute_force_sup(&u, horizon).map_err(|e| e.to_string())?;
        if sol.optimum != best || sol.argmax_rank != rank {
            return Err(format!(
                "case {case}: solver ({}, {}) vs brute force ({best}, {rank}) over {horizon}",
                sol.optimum, sol.argmax_rank
            ));
        }
    }
    Ok(())
}

const GOLDEN_RUNS: [(&str, CertificateKind, usize); 12] = [
    ("a", CertificateKind::Kl, 1),
    ("a", CertificateKind::Kl, 2),
    ("b", CertificateKind::Kl, 1),
    ("b", CertificateKind::Kl, 2),
    ("a", CertificateKind::Lyapunov, 1),
    ("a", CertificateKind::Lyapunov, 2),
    ("b", CertificateKind::Lyapunov, 1),
    ("b", CertificateKind::Lyapunov, 2),
    ("c", CertificateKind::Lyapunov, 1),
    ("c", CertificateKind::Lyapunov, 2),
    ("d", CertificateKind::Lyapunov, 1),
    ("d", CertificateKind::Lyapunov, 2),
];

fn criterion_9() -> Check {
    for (scenario, kind, coordinate) in GOLDEN_RUNS {
        let tag = format!("{scenario}/{kind:?}/pi{coordinate}");
        let (problem, report) = solve(scenario, coordinate, kind)?;
        let pair = problem.pair();
        let u = problem.sequence().map_err(|e| e.to_string())?;
        let horizon = 4 * report.stopping_integer as usize + 8;
        let residual: Vec<(usize, f64, f64)> = report
            .trace
            .iter()
            .filter_map(|r| r.formula.map(|f| (r.k, r.value, f)))
            .collect();
        if residual.is_empty() {
            return Err(format!("{tag}: no finite formula value in the trace"));
        }
        for &(k, uk, f) in &residual {
            if f < k as f64 - 1e-9 {
                return Err(format!("{tag}: F({k}) = {f} < {k}"));
            }
            for j in (f.floor() as usize + 1)..=horizon {
                let uj = u.term(j).map_err(|e| e.to_string())?;
                if !(uj < uk) {
                    return Err(format!("{tag}: u_{j} = {uj} not below u_{k} = {uk} although {j} > F({k}) = {f}"));
                }
            }
            let escape = first_escape_rank(pair, uk).map_err(|e| e.to_string())?;
            exact(&format!("{tag} floor identity at {k}"), f.floor() as u64 + 1, escape)?;
        }
        for &(j, uj, fj) in &residual {
            for &(k, uk, fk) in &residual {
                if uj <= uk && fk > fj + 1e-9 {
                    return Err(format!("{tag}: u_{j} <= u_{k} but F({k}) = {fk} > F({j}) = {fj}"));
                }
            }
        }
    }
    Ok(())
}

fn h_state(x: &[f64]) -> State {
    map_h([x[0], x[1]]).to_vec()
}

fn criterion_10() -> Check {
    let identity = |x: &[f64]| x.to_vec();
    let ratio_err = |e: peakgate::certificate::CertificateError| e.to_string();
    for r in [1.85, 5.7341, 8.84, 8.9] {
        let samples = BallSampler::new(2, r).with_count(2000).with_seed(10).samples();
        let (n_id, _) = ratio_over_points(&lyapunov_v, &identity, &samples)
            .map_err(ratio_err)?
            .ok_or("empty sample")?;
        exact(&format!("identity ratio at r = {r}"), n_id, 1.0)?;

        // F(S), ..., F^{k-1}(S) are added so that every step of a k-fold
        // orbit starting in S is a point where the one-step ratio is taken.
        let mut closure = samples.clone();
        let mut frontier = samples.clone();
        for k in 1..=4usize {
            let n_one = ratio_over_points(&lyapunov_v, &h_state, &closure)
                .map_err(ratio_err)?
                .ok_or("empty sample")?
                .0;
            let power = |x: &[f64]| {
                let mut y = x.to_vec();
                for _ in 0..k {
                    y = h_state(&y);
                }
                y
            };
            let n_k = ratio_over_points(&lyapunov_v, &power, &samples)
                .map_err(ratio_err)?
                .ok_or("empty sample")?
                .0;
            if n_k > n_one.powi(k as i32) + 1e-9 {
                return Err(format!("r = {r}, k = {k}: N(F^k) = {n_k} > N(F)^k = {}", n_one.powi(k as i32)));
            }
            frontier = frontier.iter().map(|x| h_state(x)).collect();
            closure.extend(frontier.iter().filter(|x| norm_sq(x) > 0.0).cloned());
        }

        let closed = ratio_closed_form(r).map_err(|e| e.to_string())?;
        let est = ratio_operator_estimate(&lyapunov_v, &h_state, &BallSampler::new(2, r), Refinement::default())
            .map_err(ratio_err)?;
        if est.value > closed + 1e-9 || (est.value - closed).abs() > 1e-3 {
            return Err(format!("r = {r}: sampled ratio {} vs closed form {closed}", est.value));
        }
    }
    Ok(())
}

/// Point of squared norm `s` in a uniformly random direction.
fn at_norm_sq(rng: &mut ChaCha8Rng, s: f64) -> [f64; 2] {
    let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = s.sqrt();
    [n * t.cos(), n * t.sin()]
}

fn criterion_11() -> Check {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (bar, under) = (rho_bar(), rho_under());
    for _ in 0..N {
        let s = rng.gen_range(0.0..12.0);
        let x = at_norm_sq(&mut rng, s);
        let (nx, nh) = (norm_sq(&x), norm_sq(&map_h(x)));
        if (nh - f_of(nx)).abs() > 1e-12 * (1.0 + nh) {
            return Err(format!("norm identity fails at {x:?}: {nh} vs {}", f_of(nx)));
        }
        if nx > 0.0 && (nx - bar).abs() > 1e-9 && ((nh < nx) != (nx < bar)) {
            return Err(format!("contraction characterization fails at {x:?}"));
        }
        if nx > 0.0 && (nx - under).abs() > 1e-9 && ((nh < nx / E) != (nx < under)) {
            return Err(format!("strong contraction characterization fails at {x:?}"));
        }
    }
    for _ in 0..N {
        let s = rng.gen_range(0.0..bar);
        let x = at_norm_sq(&mut rng, s);
        let (nx, v) = (norm_sq(&x), lyapunov_v(&x));
        if v < nx || v > E * nx * (1.0 + 1e-12) {
            return Err(format!("sandwich fails at {x:?}: |x|^2 = {nx}, V = {v}"));
        }
    }
    for _ in 0..N {
        let r = rng.gen_range(1e-6..bar);
        let s = rng.gen_range(0.0..=r);
        let x = at_norm_sq(&mut rng, s);
        let nh = norm_sq(&map_h(x));
        if nh > r * (1.0 + 1e-12) {
            return Err(format!("ball of squared radius {r} not invariant at {x:?}: {nh}"));
        }
    }
    Ok(())
}

fn criterion_12() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 1000 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = norm_sq(&x);
        if n == 0.0 || n >= 1.0 {
            continue;
        }
        for coordinate in [1, 2] {
            if first_positive_rank(x, coordinate, 10).map_err(|e| e.to_string())?.is_none() {
                return Err(format!("{x:?}: coordinate {coordinate} stays nonpositive for 10 steps"));
            }
        }
        checked += 1;
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("scenario a, KL pair: formula values, stopping integers 7 and 8, peaks at rank 2", criterion_1),
        ("scenario b, KL pair: formula updates and peaks at ranks 1 and 3", criterion_2),
        ("scenario a, Lyapunov pair with beta 1/32: smaller formula values than KL", criterion_3),
        ("scenario b, Lyapunov pair with beta 0.36581: formula values", criterion_4),
        ("scenario c: ratio 0.9248, formula history 20/17/16 and 88, both peaks", criterion_5),
        ("scenario d: ratio 0.9706, formula histories, peaks and first positive ranks", criterion_6),
        ("exact images of the scenario a points", criterion_7),
        ("solver vs brute force on 100 random dominated sequences", criterion_8),
        ("stopping-formula properties on every golden trace", criterion_9),
        ("ratio operator: identity, sub-multiplicativity, sampled vs closed form", criterion_10),
        ("running-example identities on 10^4 random points each", criterion_11),
        ("orbits from the open unit ball turn positive within 10 steps", criterion_12),
    ];
    let mut failed = 0;
    for (i, (label, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(()) => println!("criterion {:>2} PASS  {label}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {label}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
