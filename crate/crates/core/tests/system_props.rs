use peakgate::config::SolveConfig;
use peakgate::problem::Problem;
use peakgate::running_example::Scenario;
use peakgate::sequence::{solve_peak, BridgeFunction, CertificatePair};
use peakgate::system::{
    norm_sq, nu_sequence, orbit_table, DiscreteSystem, InitialSet, Objective, OrbitTable,
};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 2)
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 2)
}

/// Frobenius norm, an upper bound on the operator norm.
fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn memoized_terms_match_fresh_iteration(points in prop::collection::vec(point(), 1..5), ks in prop::collection::vec(0usize..30, 1..10)) {
        let sys = DiscreteSystem::running_example();
        let init = InitialSet::new(points.clone()).unwrap();
        let obj = Objective::coordinate(0);
        let u = nu_sequence(&sys, &init, &obj).unwrap();
        for &k in &ks {
            let fresh = points
                .iter()
                .map(|p| sys.iterate(p, k).unwrap()[0])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(u.term(k).unwrap().to_bits(), fresh.to_bits());
        }
    }

    #[test]
    fn singleton_sequence_is_the_orbit(p in point(), k in 0usize..40) {
        let sys = DiscreteSystem::running_example();
        let u = nu_sequence(&sys, &InitialSet::new(vec![p.clone()]).unwrap(), &Objective::coordinate(1)).unwrap();
        prop_assert_eq!(u.term(k).unwrap(), sys.iterate(&p, k).unwrap()[1]);
    }

    #[test]
    fn iterate_zero_is_identity(p in point()) {
        prop_assert_eq!(DiscreteSystem::running_example().iterate(&p, 0).unwrap(), p);
    }

    #[test]
    fn contracting_linear_maps_settle_below_the_peak(a in matrix(), points in prop::collection::vec(point(), 1..4)) {
        let sigma = frobenius(&a);
        prop_assume!(sigma > 0.05 && sigma < 0.95);
        let sys = DiscreteSystem::linear(a).unwrap();
        let init = InitialSet::new(points.clone()).unwrap();
        let radius = init.max_norm_sq().sqrt();
        prop_assume!(radius > 1e-3);
        let u = nu_sequence(&sys, &init, &Objective::coordinate(0)).unwrap();
        let pair = CertificatePair::new(BridgeFunction::affine(radius, 0.0).unwrap(), sigma).unwrap();
        prop_assume!((0..50).any(|k| u.term(k).unwrap() > 1e-9));
        let sol = solve_peak(&u, &pair, 10_000).unwrap();
        let k = sol.stopping_integer as usize;
        for j in 0..=(4 * k + 4) {
            let v = u.term(j).unwrap();
            prop_assert!(v <= pair.envelope(j) + 1e-12);
            if j > k {
                prop_assert!(v < sol.optimum);
            }
        }
    }

    #[test]
    fn orbit_csv_round_trip_is_exact(points in prop::collection::vec(point(), 1..4), horizon in 0usize..12) {
        let sys = DiscreteSystem::running_example();
        let table = orbit_table(&sys, &InitialSet::new(points).unwrap(), horizon).unwrap();
        let back = OrbitTable::read_csv(table.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back, table);
    }
}

#[test]
fn orbit_rows_are_point_major() {
    let s = Scenario::named("b").unwrap();
    let table = orbit_table(&DiscreteSystem::running_example(), &s.points, 3).unwrap();
    let order: Vec<(usize, usize)> = table.rows.iter().map(|r| (r.point, r.k)).collect();
    let expected: Vec<(usize, usize)> = (0..2).flat_map(|p| (0..=3).map(move |k| (p, k))).collect();
    assert_eq!(order, expected);
    let row = table.rows.iter().find(|r| r.point == 1 && r.k == 3).unwrap();
    assert!((row.state[0] + 0.01873).abs() < 1e-5 && (row.state[1] - 0.04183).abs() < 1e-5);
    assert_eq!(row.norm_sq, norm_sq(&row.state));
}

#[test]
fn blow_up_truncates_the_table_and_poisons_the_sequence() {
    let sys = DiscreteSystem::running_example();
    let init = InitialSet::new(vec![vec![4.0, 4.0], vec![0.5, 0.0]]).unwrap();
    let table = orbit_table(&sys, &init, 30).unwrap();
    let first: Vec<_> = table.rows.iter().filter(|r| r.point == 0).collect();
    assert!(!first.last().unwrap().finite);
    assert!(first.len() < 31);
    assert_eq!(table.rows.iter().filter(|r| r.point == 1).count(), 31);
    let u = nu_sequence(&sys, &init, &Objective::coordinate(0)).unwrap();
    let bad = first.last().unwrap().k;
    assert!(u.term(bad).is_err());
    assert!(u.term(bad + 3).is_err());
}

fn affine_config(constant: f64) -> SolveConfig {
    let text = format!(
        r#"{{
          "version": 1,
          "system": {{"affine": {{"matrix": [[0.5, 0.1], [-0.1, 0.5]]}}}},
          "initial_points": [[1.0, -2.0], [0.5, 1.5]],
          "objective": {{"linear": {{"coeffs": [1.0, 0.0], "constant": {constant}}}}},
          "certificate": {{"kl": {{"theta1": "identity", "theta2": "identity", "psi_sup": "max-norm", "decay": 0.6}}}}
        }}"#
    );
    SolveConfig::from_json(&text).unwrap()
}

#[test]
fn objective_offset_shifts_only_the_optimum() {
    let plain = Problem::from_config(&affine_config(0.0)).unwrap().solve().unwrap();
    let shifted = Problem::from_config(&affine_config(5.0)).unwrap().solve().unwrap();
    assert_eq!(plain.argmax_rank, shifted.argmax_rank);
    assert_eq!(plain.stopping_integer_history, shifted.stopping_integer_history);
    assert_eq!(shifted.optimum - plain.optimum, 5.0);
    assert_eq!(shifted.normalized_optimum, plain.normalized_optimum);
}
