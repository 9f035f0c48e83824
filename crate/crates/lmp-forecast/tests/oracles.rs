//! The enumeration oracle must agree with hand-worked dispatches before
//! it is allowed to referee the library.

mod common;

use common::{data_file, oracle_cost, oracle_lmp, random_small_case, DenseOpf};
use lmp_forecast::network::load_case;
use lmp_forecast::opf::build_mpp;
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn oracle_reproduces_hand_worked_three_bus_dispatches() {
    let snap = load_case(data_file("case3.json")).unwrap().snapshot_at(0).unwrap();
    let zero = DVector::zeros(3);

    // Cheap unit alone: cost 10/MW.
    let (g, v) = DenseOpf::assemble(&snap, &DVector::from_row_slice(&[100.0]), &zero)
        .solve()
        .unwrap();
    assert!((g[0] - 100.0).abs() < 1e-8 && g[1].abs() < 1e-8);
    assert!((v - 1000.0).abs() < 1e-7);

    // Cheap unit at capacity, marginal unit sets 15/MW.
    let (g, v) = DenseOpf::assemble(&snap, &DVector::from_row_slice(&[150.0]), &zero)
        .solve()
        .unwrap();
    assert!((g[0] - 130.0).abs() < 1e-8 && (g[1] - 20.0).abs() < 1e-8);
    assert!((v - 1600.0).abs() < 1e-7);

    // Congested: the cheap unit backs off the binding line.
    let (g, v) = DenseOpf::assemble(&snap, &DVector::from_row_slice(&[180.0]), &zero)
        .solve()
        .unwrap();
    assert!((g[0] - 120.0).abs() < 1e-7 && (g[1] - 60.0).abs() < 1e-7);
    assert!((v - 2100.0).abs() < 1e-6);

    // Past the deliverable limit there is no feasible dispatch.
    assert!(oracle_cost(&snap, &DVector::from_row_slice(&[220.0]), &zero).is_none());
}

#[test]
fn finite_difference_prices_match_the_calibrated_lmps() {
    let snap = load_case(data_file("case3.json")).unwrap().snapshot_at(0).unwrap();
    let cases = [
        (100.0, [10.0, 10.0, 10.0]),
        (150.0, [15.0, 15.0, 15.0]),
        (180.0, [10.0, 20.0, 15.0]),
    ];
    for (demand, expected) in cases {
        let lmp = oracle_lmp(&snap, &DVector::from_row_slice(&[demand]), 1e-2).unwrap();
        for b in 0..3 {
            assert!(
                (lmp[b] - expected[b]).abs() < 1e-6,
                "demand {demand}, bus {b}: {} vs {}",
                lmp[b],
                expected[b]
            );
        }
    }
}

#[test]
fn quadratic_oracle_reproduces_the_two_bus_solution() {
    let snap = load_case(data_file("case2q.json")).unwrap().snapshot_at(0).unwrap();
    let zero = DVector::zeros(2);

    // Equal marginal costs split the load until the line saturates.
    let (g, v) = DenseOpf::assemble(&snap, &DVector::from_row_slice(&[30.0]), &zero)
        .solve()
        .unwrap();
    assert!((g[0] - 15.0).abs() < 1e-8 && (g[1] - 15.0).abs() < 1e-8);
    assert!((v - 0.5 * (225.0 + 225.0)).abs() < 1e-7);

    // Congested: the remote unit is pinned at the line limit.
    let (g, _) = DenseOpf::assemble(&snap, &DVector::from_row_slice(&[100.0]), &zero)
        .solve()
        .unwrap();
    assert!((g[0] - 20.0).abs() < 1e-8 && (g[1] - 80.0).abs() < 1e-8);

    let lmp = oracle_lmp(&snap, &DVector::from_row_slice(&[100.0]), 1e-3).unwrap();
    assert!((lmp[0] - 20.0).abs() < 1e-5, "bus 1 priced {}", lmp[0]);
    assert!((lmp[1] - 80.0).abs() < 1e-5, "bus 2 priced {}", lmp[1]);
}

#[test]
fn oracle_and_solver_agree_on_random_cases() {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut checked = 0;
    let mut case_seed = 0;
    while checked < 6 {
        case_seed += 1;
        let mut case_rng = StdRng::seed_from_u64(case_seed);
        let case = random_small_case(&mut case_rng);
        if case.validate().is_err() {
            continue;
        }
        let snap = case.snapshot_at(0).unwrap();
        let problem = build_mpp(&snap).unwrap();
        let zero = DVector::zeros(snap.n_bus);

        let mut agreements = 0;
        for _ in 0..40 {
            let theta = DVector::from_fn(problem.param_dim(), |i, _| {
                rng.random_range(problem.box_lower[i]..=problem.box_upper[i])
            });
            let oracle = DenseOpf::assemble(&snap, &theta, &zero).solve();
            match (problem.solve_at(&theta), oracle) {
                (Ok(sol), Some((_, v))) => {
                    assert!(
                        (sol.objective - v).abs() <= 1e-6 * (1.0 + v.abs()),
                        "case {case_seed}: objective {} vs oracle {v} at {theta}",
                        sol.objective
                    );
                    // Prices also agree at non-boundary points.
                    if !sol.degenerate {
                        if let Some(lmp) = oracle_lmp(&snap, &theta, 1e-3) {
                            for b in 0..snap.n_bus {
                                assert!(
                                    (sol.lmp[b] - lmp[b]).abs() <= 1e-4 * (1.0 + lmp[b].abs()),
                                    "case {case_seed}: lmp[{b}] {} vs oracle {}",
                                    sol.lmp[b],
                                    lmp[b]
                                );
                            }
                        }
                    }
                    agreements += 1;
                }
                (Err(lmp_forecast::Error::Infeasible(_)), None) => agreements += 1,
                (lib, oracle) => panic!(
                    "case {case_seed}: solver {:?} vs oracle feasibility {}",
                    lib.map(|s| s.objective),
                    oracle.is_some()
                ),
            }
        }
        assert_eq!(agreements, 40);
        checked += 1;
    }
}
