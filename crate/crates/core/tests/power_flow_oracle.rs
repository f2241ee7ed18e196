mod common;

use drsf_core::grid::{distflow_residuals, solve_power_flow, Network, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[test]
fn base_case_voltages_match_phasor_sweep() {
    let net = Network::ieee33().scaled(1.0, 0.0);
    let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert!(distflow_residuals(&net, &op).max() <= 1e-8);
    let oracle = common::phasor_voltages(&net);
    let ours = op.voltages();
    let worst = ours
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 2e-3, "largest difference {worst}");

    let (bus, v_min) = op.min_voltage();
    let oracle_min = oracle.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((v_min - oracle_min).abs() <= 2e-3);
    // Published figure for the feeder end.
    assert!((v_min - 0.913).abs() <= 2e-3, "{v_min}");
    assert_eq!(bus, 17);
}

#[test]
fn two_bus_matches_phasor_sweep() {
    let net = common::two_bus(0.2, 0.1, 0.05, 0.05);
    let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let oracle = common::phasor_voltages(&net);
    assert!((op.v_sq[1] - oracle[1].powi(2)).abs() < 1e-9);
}
