use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Network;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("voltage collapse at bus {bus} in iteration {iteration} (v_sq = {v_sq:.3e})")]
    VoltageCollapse {
        bus: usize,
        iteration: usize,
        v_sq: f64,
    },
    #[error("invalid power flow settings: {0}")]
    Settings(String),
}

/// A DistFlow solution. Per-line vectors are indexed like [`Network::lines`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v_sq: Vec<f64>,
    pub l_sq: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Substation real / reactive supply.
    pub p0: f64,
    pub q0: f64,
    /// Total real loss `sum r * l`.
    pub loss: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl OperatingPoint {
    pub fn voltages(&self) -> Vec<f64> {
        self.v_sq.iter().map(|v| v.sqrt()).collect()
    }

    /// Lowest voltage magnitude and the bus where it occurs.
    pub fn min_voltage(&self) -> (usize, f64) {
        let (k, v) = self
            .v_sq
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("network has buses");
        (k, v.sqrt())
    }

    pub fn max_voltage(&self) -> (usize, f64) {
        let (k, v) = self
            .v_sq
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("network has buses");
        (k, v.sqrt())
    }

    /// Squared substation apparent power `P0^2 + Q0^2`.
    pub fn s0_sq(&self) -> f64 {
        self.p0 * self.p0 + self.q0 * self.q0
    }
}

/// Largest absolute residual of each DistFlow equation group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistFlowResiduals {
    pub p_balance: f64,
    pub q_balance: f64,
    pub voltage: f64,
    pub branch: f64,
}

impl DistFlowResiduals {
    pub fn max(&self) -> f64 {
        self.p_balance
            .max(self.q_balance)
            .max(self.voltage)
            .max(self.branch)
    }
}

/// Evaluates the branch-flow equations at `op` on `net`.
///
/// At the substation the balance is checked against the reported `p0`/`q0`
/// and the voltage against `v0`.
pub fn distflow_residuals(net: &Network, op: &OperatingPoint) -> DistFlowResiduals {
    let topo = net.topology();
    let lines = net.lines();
    let mut res = DistFlowResiduals::default();
    for bus in 1..net.n_buses() {
        let li = topo.parent_line[bus].expect("non-root bus has a parent line");
        let line = &lines[li];
        let mut out_p = 0.0;
        let mut out_q = 0.0;
        for &c in &topo.children[bus] {
            out_p += op.p_flow[c];
            out_q += op.q_flow[c];
        }
        let rp = op.p_flow[li] - line.r * op.l_sq[li] + net.p_injection(bus) - out_p;
        let rq = op.q_flow[li] - line.x * op.l_sq[li] + net.q_injection(bus) - out_q;
        res.p_balance = res.p_balance.max(rp.abs());
        res.q_balance = res.q_balance.max(rq.abs());
    }
    for (li, line) in lines.iter().enumerate() {
        let (i, j) = (line.from, line.to);
        let rv = op.v_sq[j] - op.v_sq[i] + 2.0 * (line.r * op.p_flow[li] + line.x * op.q_flow[li])
            - line.z_sq() * op.l_sq[li];
        let rb = op.v_sq[i] * op.l_sq[li] - op.p_flow[li].powi(2) - op.q_flow[li].powi(2);
        res.voltage = res.voltage.max(rv.abs());
        res.branch = res.branch.max(rb.abs());
    }
    let root_p: f64 =
        topo.children[0].iter().map(|&c| op.p_flow[c]).sum::<f64>() - net.p_injection(0);
    let root_q: f64 =
        topo.children[0].iter().map(|&c| op.q_flow[c]).sum::<f64>() - net.q_injection(0);
    res.p_balance = res.p_balance.max((root_p - op.p0).abs());
    res.q_balance = res.q_balance.max((root_q - op.q0).abs());
    res.voltage = res.voltage.max((op.v_sq[0] - net.v0()).abs());
    res
}

/// Forward/backward sweep on the DistFlow equations.
///
/// Each iteration pushes flows and squared currents up from the leaves
/// using the latest voltages, then walks voltages down from the
/// substation. Stops once every equation residual is within `tol`.
pub fn solve_power_flow(
    net: &Network,
    tol: f64,
    max_iter: usize,
) -> Result<OperatingPoint, PowerFlowError> {
    if !(tol > 0.0) {
        return Err(PowerFlowError::Settings(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let topo = net.topology();
    let lines = net.lines();
    let n = net.n_buses();
    let m = net.n_lines();
    let p_inj: Vec<f64> = (0..n).map(|b| net.p_injection(b)).collect();
    let q_inj: Vec<f64> = (0..n).map(|b| net.q_injection(b)).collect();

    let mut v = vec![net.v0(); n];
    let mut l = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut q = vec![0.0; m];
    let mut residual = f64::INFINITY;

    for iteration in 1..=max_iter {
        for &bus in topo.order.iter().rev() {
            let Some(li) = topo.parent_line[bus] else {
                continue;
            };
            let line = &lines[li];
            let mut ps = line.r * l[li] - p_inj[bus];
            let mut qs = line.x * l[li] - q_inj[bus];
            for &c in &topo.children[bus] {
                ps += p[c];
                qs += q[c];
            }
            p[li] = ps;
            q[li] = qs;
        }
        for (li, line) in lines.iter().enumerate() {
            l[li] = (p[li] * p[li] + q[li] * q[li]) / v[line.from];
        }
        for &bus in topo.order.iter() {
            let Some(li) = topo.parent_line[bus] else {
                continue;
            };
            let line = &lines[li];
            let vj = v[line.from] - 2.0 * (line.r * p[li] + line.x * q[li]) + line.z_sq() * l[li];
            if !(vj > 0.0) {
                return Err(PowerFlowError::VoltageCollapse {
                    bus,
                    iteration,
                    v_sq: vj,
                });
            }
            v[bus] = vj;
        }

        let op = assemble(net, &v, &l, &p, &q, iteration);
        residual = distflow_residuals(net, &op).max();
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(OperatingPoint { residual, ..op });
        }
    }
    Err(PowerFlowError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

fn assemble(
    net: &Network,
    v: &[f64],
    l: &[f64],
    p: &[f64],
    q: &[f64],
    iterations: usize,
) -> OperatingPoint {
    let topo = net.topology();
    let p0 = topo.children[0].iter().map(|&c| p[c]).sum::<f64>() - net.p_injection(0);
    let q0 = topo.children[0].iter().map(|&c| q[c]).sum::<f64>() - net.q_injection(0);
    let loss = net
        .lines()
        .iter()
        .zip(l)
        .map(|(line, li)| line.r * li)
        .sum();
    OperatingPoint {
        v_sq: v.to_vec(),
        l_sq: l.to_vec(),
        p_flow: p.to_vec(),
        q_flow: q.to_vec(),
        p0,
        q0,
        loss,
        iterations,
        residual: f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Base, Bus, Line, PvUnit};

    fn two_bus(p: f64, q: f64, r: f64, x: f64) -> Network {
        Network::new(
            vec![
                Bus {
                    id: 0,
                    p_load: 0.0,
                    q_load: 0.0,
                    pv: None,
                },
                Bus {
                    id: 1,
                    p_load: p,
                    q_load: q,
                    pv: None,
                },
            ],
            vec![Line::new(0, 1, r, x)],
            vec![],
            Base::new(1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    /// Scalar fixed point on l = ((p + r l)^2 + (q + x l)^2) / v0, iterated
    /// independently of the sweep.
    fn two_bus_oracle(p: f64, q: f64, r: f64, x: f64) -> (f64, f64) {
        let mut l: f64 = 0.0;
        for _ in 0..10_000 {
            let next = ((p + r * l).powi(2) + (q + x * l).powi(2)) / 1.0;
            if (next - l).abs() < 1e-12 {
                l = next;
                break;
            }
            l = next;
        }
        let pf = p + r * l;
        let qf = q + x * l;
        let v1 = 1.0 - 2.0 * (r * pf + x * qf) + (r * r + x * x) * l;
        (l, v1)
    }

    #[test]
    fn flat_profile_without_load() {
        let net = two_bus(0.0, 0.0, 0.1, 0.1);
        let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(op.v_sq, vec![1.0, 1.0]);
        assert_eq!(op.l_sq, vec![0.0]);
        assert_eq!(op.loss, 0.0);
    }

    #[test]
    fn two_bus_matches_scalar_oracle() {
        let (l_ref, v_ref) = two_bus_oracle(0.2, 0.1, 0.05, 0.05);
        // Frozen oracle values.
        assert!((l_ref - 0.051_56).abs() < 1e-4, "{l_ref}");
        assert!((v_ref - 0.969_74).abs() < 1e-4, "{v_ref}");
        let net = two_bus(0.2, 0.1, 0.05, 0.05);
        let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((op.l_sq[0] - l_ref).abs() < 1e-9);
        assert!((op.v_sq[1] - v_ref).abs() < 1e-9);
        assert!(distflow_residuals(&net, &op).max() <= 1e-8);
    }

    #[test]
    fn loss_identity_holds() {
        let net = Network::ieee33();
        let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let p_pv: f64 = net.pv_units().iter().map(|u| u.p_gen).sum();
        let p_load: f64 = net.buses().iter().map(|b| b.p_load).sum();
        assert!((op.loss - (op.p0 + p_pv - p_load)).abs() < 1e-8);
    }

    #[test]
    fn collapse_is_reported() {
        let net = two_bus(5.0, 5.0, 0.5, 0.5);
        let err = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap_err();
        assert!(matches!(
            err,
            PowerFlowError::VoltageCollapse { .. } | PowerFlowError::NoConvergence { .. }
        ));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let net = two_bus(0.2, 0.1, 0.05, 0.05);
        match solve_power_flow(&net, 1e-14, 2) {
            Err(PowerFlowError::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14 && residual.is_finite());
            }
            other => panic!("{other:?}"),
        }
        assert!(solve_power_flow(&net, 0.0, 10).is_err());
    }

    #[test]
    fn pv_injection_raises_voltage() {
        let base = Base::new(1.0, 1.0).unwrap();
        let mk = |q: f64| {
            let net = Network::new(
                vec![
                    Bus {
                        id: 0,
                        p_load: 0.0,
                        q_load: 0.0,
                        pv: None,
                    },
                    Bus {
                        id: 1,
                        p_load: 0.2,
                        q_load: 0.1,
                        pv: None,
                    },
                ],
                vec![Line::new(0, 1, 0.05, 0.05)],
                vec![PvUnit::new(1, 0.1, 0.3)],
                base,
            )
            .unwrap()
            .apply_action(&[q])
            .unwrap();
            solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .unwrap()
                .v_sq[1]
        };
        assert!(mk(0.2) > mk(0.0));
        assert!(mk(0.0) > mk(-0.2));
    }
}
