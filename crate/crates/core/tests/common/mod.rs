#![allow(dead_code)]

use drsf_core::grid::{Base, Bus, Line, Network};
use num_complex::Complex64;

/// One line from the substation to a single load.
pub fn two_bus(p: f64, q: f64, r: f64, x: f64) -> Network {
    let bus = |id, p_load, q_load| Bus {
        id,
        p_load,
        q_load,
        pv: None,
    };
    Network::new(
        vec![bus(0, 0.0, 0.0), bus(1, p, q)],
        vec![Line::new(0, 1, r, x)],
        vec![],
        Base::new(1.0, 1.0).unwrap(),
    )
    .unwrap()
}

/// Voltage magnitudes from a backward/forward sweep on complex phasors:
/// branch currents are summed from `conj(S / V)` at every downstream bus,
/// then voltages drop by `z I` walking away from the substation. Shares no
/// code with the DistFlow solver.
pub fn phasor_voltages(net: &Network) -> Vec<f64> {
    let n = net.n_buses();
    let lines = net.lines();
    // Parent line of each bus, and a root-first ordering.
    let mut parent = vec![usize::MAX; n];
    for (k, l) in lines.iter().enumerate() {
        parent[l.to] = k;
    }
    let mut order = vec![0usize];
    let mut i = 0;
    while i < order.len() {
        let b = order[i];
        order.extend(lines.iter().filter(|l| l.from == b).map(|l| l.to));
        i += 1;
    }
    assert_eq!(order.len(), n, "network is not connected");

    let load: Vec<Complex64> = (0..n)
        .map(|b| Complex64::new(-net.p_injection(b), -net.q_injection(b)))
        .collect();
    let mut v = vec![Complex64::new(net.v0().sqrt(), 0.0); n];
    for _ in 0..1000 {
        let mut current: Vec<Complex64> = (0..n).map(|b| (load[b] / v[b]).conj()).collect();
        for &b in order.iter().skip(1).rev() {
            let up = lines[parent[b]].from;
            let c = current[b];
            current[up] += c;
        }
        let mut next = v.clone();
        for &b in order.iter().skip(1) {
            let l = &lines[parent[b]];
            next[b] = next[l.from] - Complex64::new(l.r, l.x) * current[b];
        }
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        v = next;
        if change < 1e-13 {
            break;
        }
    }
    v.iter().map(|c| c.norm()).collect()
}
