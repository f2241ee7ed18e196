//! Distributionally robust safety filter.
//!
//! Projects a proposed vector of PV reactive setpoints onto the set of
//! setpoints whose predicted operating point, shifted by the robust error
//! bounds, stays within operational limits. The power flow enters through
//! the second-order cone relaxation of the branch-flow equations:
//!
//! ```text
//! min  ||q_learn - q|| + omega * sum l
//! s.t. P_ij = sum P_jk + r l_ij - p_j,   Q_ij = sum Q_jk + x l_ij - q_j
//!      v_j = v_i - 2 (r P_ij + x Q_ij) + |z|^2 l_ij
//!      ||(P_ij, Q_ij, (v_i - l_ij) / 2)|| <= (v_i + l_ij) / 2
//!      p_k^2 + q_k^2 <= s_k^2                      (inverter ratings)
//!      Vmin^2 <= v_i + dv_lo_i,  v_i + dv_hi_i <= Vmax^2
//!      l_ij + dl_hi_ij <= Imax^2
//!      P_0^2 + Q_0^2 + ds_hi <= S0max^2
//! ```
//!
//! With the exactness guard on (the default), the upper voltage limit is
//! also imposed on the lossless voltage estimate, which bounds the true
//! voltage from above. Without it the relaxation can meet an upper voltage
//! limit by inventing line losses instead of moving `q`.

mod program;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicError, SolveStatus};
use crate::dro::{RobustBounds, SampleKind};
use crate::grid::{GridError, Network, OperatingPoint, OperationalLimits, PowerFlowError};

pub use program::{build_drsf, filter_action, filter_or_fallback};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("expected {expected} setpoints, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("robust bounds are missing from the filter configuration")]
    BoundsMissing,
    #[error("robust bounds do not match the network: {0}")]
    BoundsMismatch(String),
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("robust constraint set is empty; binding classes: {classes:?}")]
    InfeasibleFilter { classes: Vec<ConstraintClass> },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("power flow at the filtered action failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    VoltageLower,
    VoltageUpper,
    Current,
    Substation,
}

/// One robust box per constraint class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBounds {
    pub voltage: RobustBounds,
    pub current: RobustBounds,
    pub substation: RobustBounds,
}

impl FilterBounds {
    /// All-zero bounds: the robust constraints reduce to the nominal limits.
    pub fn zero(net: &Network) -> Self {
        Self {
            voltage: RobustBounds::zero(SampleKind::Voltage, net.n_buses()),
            current: RobustBounds::zero(SampleKind::Current, net.n_lines()),
            substation: RobustBounds::zero(SampleKind::Substation, 1),
        }
    }

    pub fn check(&self, net: &Network) -> Result<(), FilterError> {
        let parts = [
            (&self.voltage, SampleKind::Voltage, net.n_buses()),
            (&self.current, SampleKind::Current, net.n_lines()),
            (&self.substation, SampleKind::Substation, 1),
        ];
        for (b, kind, dim) in parts {
            if b.kind != kind {
                return Err(FilterError::BoundsMismatch(format!(
                    "expected {kind:?} bounds, found {:?}",
                    b.kind
                )));
            }
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(FilterError::BoundsMismatch(format!(
                    "{kind:?} bounds have dimension {}/{}, network needs {dim}",
                    b.lower.len(),
                    b.upper.len()
                )));
            }
            if b.lower.iter().chain(&b.upper).any(|v| !v.is_finite()) {
                return Err(FilterError::BoundsMismatch(format!(
                    "{kind:?} bounds are not finite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrsfConfig {
    /// Weight of total squared current in the objective.
    pub omega: f64,
    /// Cone gap above which a solution is flagged inexact (p.u.^2).
    pub relaxation_tol: f64,
    pub bounds: Option<FilterBounds>,
    /// Overrides the network's limits when set.
    pub limits: Option<OperationalLimits>,
    /// Impose the upper voltage limit on the lossless voltage estimate too.
    pub exactness_guard: bool,
    /// Extra tightening of every limit (p.u.^2) so that solver round-off
    /// cannot land the exact power flow a hair outside a limit.
    pub margin: f64,
    /// The cone duals of the current definitions are of order `omega`, so
    /// the slack left in those cones scales like `solver_tol / omega`; the
    /// default is tight enough to keep it below `relaxation_tol`.
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for DrsfConfig {
    fn default() -> Self {
        Self {
            omega: 1e-5,
            relaxation_tol: 1e-5,
            bounds: None,
            limits: None,
            exactness_guard: true,
            margin: 1e-7,
            solver_tol: 1e-11,
            max_iter: crate::conic::DEFAULT_MAX_ITER,
        }
    }
}

impl DrsfConfig {
    pub fn with_bounds(bounds: FilterBounds) -> Self {
        Self {
            bounds: Some(bounds),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub q_safe: Vec<f64>,
    /// Euclidean distance between proposed and filtered setpoints (p.u.).
    pub deviation: f64,
    /// Exact power flow of the nominal model at `q_safe`.
    pub predicted: OperatingPoint,
    /// Largest `v_i l_ij - P_ij^2 - Q_ij^2` at the relaxed optimum.
    pub exactness_gap: f64,
    pub inexact: bool,
    pub status: SolveStatus,
    /// Wall-clock seconds spent building and solving, every fallback
    /// phase included. Zero on targets without a clock.
    pub solve_time: f64,
    /// True when the robust set was empty and the slack-penalized program
    /// produced the action instead.
    pub fallback: bool,
    /// Classes whose limits had to be violated (fallback only).
    pub violated: Vec<ConstraintClass>,
}

/// Largest `v_i l_ij - (P_ij^2 + Q_ij^2)` over lines, where `i` is the
/// sending bus. Zero at an exact branch-flow solution; positive where the
/// relaxation is loose.
pub fn relaxation_gap(net: &Network, op: &OperatingPoint) -> f64 {
    net.lines()
        .iter()
        .enumerate()
        .map(|(k, line)| {
            op.v_sq[line.from] * op.l_sq[k] - op.p_flow[k].powi(2) - op.q_flow[k].powi(2)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};

    #[test]
    fn physical_point_has_no_gap() {
        let net = Network::ieee33();
        let op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(relaxation_gap(&net, &op).abs() <= 1e-8);
    }

    #[test]
    fn inflated_current_opens_gap_linearly() {
        let net = Network::ieee33();
        let mut op = solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        op.l_sq[5] += 0.01;
        let vi = op.v_sq[net.lines()[5].from];
        assert!((relaxation_gap(&net, &op) - 0.01 * vi).abs() < 1e-8);
    }

    #[test]
    fn bounds_must_match_network() {
        let net = Network::ieee33();
        let mut b = FilterBounds::zero(&net);
        assert!(b.check(&net).is_ok());
        b.current.upper.pop();
        assert!(matches!(b.check(&net), Err(FilterError::BoundsMismatch(_))));
    }
}
