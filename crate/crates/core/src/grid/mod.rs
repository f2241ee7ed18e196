//! Radial distribution feeder model.
//!
//! All quantities are per-unit on the base declared by the network file.
//! Bus 0 is the substation. Lines are stored oriented away from the
//! substation after validation, so `from` is always the parent bus.

mod io;
mod perturb;
mod power_flow;
mod topology;

pub use io::{load_network, load_network_from_str, BUS_HEADER, LINE_HEADER};
pub use perturb::perturb_parameters;
pub(crate) use perturb::perturb_with;
pub use power_flow::{
    distflow_residuals, solve_power_flow, DistFlowResiduals, OperatingPoint, PowerFlowError,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
pub use topology::{validate_radial, Topology};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed when checking `p^2 + q^2 <= s^2`, so that a
/// setpoint exactly on the rating circle is accepted.
const RATING_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unit error: {0}")]
    Unit(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("PV unit {unit} at bus {bus} exceeds its rating by {excess:.3e} p.u.")]
    Rating {
        unit: usize,
        bus: usize,
        excess: f64,
    },
    #[error("expected {expected} reactive setpoints, got {got}")]
    ActionLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub s_mva: f64,
    pub v_kv: f64,
}

impl Base {
    pub fn new(s_mva: f64, v_kv: f64) -> Result<Self, GridError> {
        if !(s_mva.is_finite() && s_mva > 0.0 && v_kv.is_finite() && v_kv > 0.0) {
            return Err(GridError::Unit(format!(
                "base must be positive, got S_base={s_mva} MVA, V_base={v_kv} kV"
            )));
        }
        Ok(Self { s_mva, v_kv })
    }

    /// Impedance base in ohms.
    pub fn z_ohm(&self) -> f64 {
        self.v_kv * self.v_kv / self.s_mva
    }

    /// Power base in kW (also kvar / kVA).
    pub fn s_kw(&self) -> f64 {
        self.s_mva * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperationalLimits {
    /// Voltage magnitude bounds (p.u.).
    pub v_min: f64,
    pub v_max: f64,
    /// Line current bound (p.u.).
    pub i_max: f64,
    /// Substation apparent power bound (p.u.).
    pub s0_max: f64,
}

impl Default for OperationalLimits {
    fn default() -> Self {
        Self {
            v_min: 0.95,
            v_max: 1.05,
            i_max: 3.46,
            s0_max: 3.46,
        }
    }
}

impl OperationalLimits {
    pub fn validate(&self) -> Result<(), GridError> {
        let ok = self.v_min > 0.0
            && self.v_min < self.v_max
            && self.i_max > 0.0
            && self.s0_max > 0.0
            && [self.v_min, self.v_max, self.i_max, self.s0_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(GridError::Invalid(format!(
                "inconsistent operational limits {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub p_load: f64,
    pub q_load: f64,
    /// Index into [`Network::pv_units`].
    pub pv: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Self { from, to, r, x }
    }

    pub fn z_sq(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub bus: usize,
    pub p_gen: f64,
    pub s_rating: f64,
    pub q_set: f64,
}

impl PvUnit {
    pub fn new(bus: usize, p_gen: f64, s_rating: f64) -> Self {
        Self {
            bus,
            p_gen,
            s_rating,
            q_set: 0.0,
        }
    }

    /// Largest |Q| the inverter can deliver at its current real output.
    pub fn q_max(&self) -> f64 {
        (self.s_rating * self.s_rating - self.p_gen * self.p_gen)
            .max(0.0)
            .sqrt()
    }

    fn rating_excess(&self, q: f64) -> f64 {
        let s2 = self.s_rating * self.s_rating;
        let used = self.p_gen * self.p_gen + q * q;
        if used <= s2 * (1.0 + RATING_RTOL) + f64::MIN_POSITIVE {
            0.0
        } else {
            used.sqrt() - self.s_rating
        }
    }
}

/// A validated radial feeder.
///
/// Construct with [`Network::new`]; the constructor orients every line away
/// from bus 0 and rejects meshed or disconnected graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    pv_units: Vec<PvUnit>,
    v0: f64,
    limits: OperationalLimits,
    base: Base,
    topology: Topology,
}

impl Network {
    /// Builds and validates a network. Loads and PV data are in p.u.
    ///
    /// Buses must be numbered `0..n` in order; `pv_units[k].bus` must exist
    /// and each PV bus may carry at most one unit.
    pub fn new(
        mut buses: Vec<Bus>,
        mut lines: Vec<Line>,
        pv_units: Vec<PvUnit>,
        base: Base,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::Topology("network has no buses".into()));
        }
        for (k, b) in buses.iter().enumerate() {
            if b.id != k {
                return Err(GridError::Invalid(format!(
                    "bus ids must be 0..{} in order, found id {} at position {k}",
                    buses.len(),
                    b.id
                )));
            }
            if !(b.p_load.is_finite() && b.q_load.is_finite()) {
                return Err(GridError::Invalid(format!("bus {k} has non-finite load")));
            }
            if b.p_load < 0.0 {
                return Err(GridError::Invalid(format!(
                    "bus {k} has negative real load {}",
                    b.p_load
                )));
            }
        }
        for (k, l) in lines.iter().enumerate() {
            let bad = !(l.r.is_finite() && l.x.is_finite())
                || l.r < 0.0
                || l.x < 0.0
                || (l.r == 0.0 && l.x == 0.0);
            if bad {
                return Err(GridError::Invalid(format!(
                    "line {k} ({}-{}) has invalid impedance r={}, x={}",
                    l.from, l.to, l.r, l.x
                )));
            }
        }

        let mut topology = validate_radial(buses.len(), &lines)?;
        for (k, line) in lines.iter_mut().enumerate() {
            if topology.flipped[k] {
                std::mem::swap(&mut line.from, &mut line.to);
                topology.flipped[k] = false;
            }
        }

        for b in buses.iter_mut() {
            b.pv = None;
        }
        for (k, pv) in pv_units.iter().enumerate() {
            let bus = buses.get_mut(pv.bus).ok_or_else(|| {
                GridError::Invalid(format!("PV unit {k} references missing bus {}", pv.bus))
            })?;
            if bus.pv.is_some() {
                return Err(GridError::Invalid(format!(
                    "bus {} carries more than one PV unit",
                    pv.bus
                )));
            }
            if !(pv.p_gen >= 0.0 && pv.p_gen <= pv.s_rating && pv.s_rating.is_finite()) {
                return Err(GridError::Invalid(format!(
                    "PV unit {k} needs 0 <= p_gen <= s_rating, got p={} s={}",
                    pv.p_gen, pv.s_rating
                )));
            }
            let excess = pv.rating_excess(pv.q_set);
            if excess > 0.0 {
                return Err(GridError::Rating {
                    unit: k,
                    bus: pv.bus,
                    excess,
                });
            }
            bus.pv = Some(k);
        }

        Ok(Self {
            buses,
            lines,
            pv_units,
            v0: 1.0,
            limits: OperationalLimits::default(),
            base,
            topology,
        })
    }

    pub fn with_limits(mut self, limits: OperationalLimits) -> Result<Self, GridError> {
        limits.validate()?;
        self.limits = limits;
        Ok(self)
    }

    /// Sets the substation squared voltage (p.u.^2).
    pub fn with_v0(mut self, v0: f64) -> Result<Self, GridError> {
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(GridError::Invalid(format!("v0 must be positive, got {v0}")));
        }
        self.v0 = v0;
        Ok(self)
    }

    /// The bundled IEEE 33-bus feeder with six PV inverters.
    pub fn ieee33() -> Self {
        load_network_from_str(
            include_str!("../../data/ieee33_buses.csv"),
            include_str!("../../data/ieee33_lines.csv"),
        )
        .expect("bundled 33-bus data is valid")
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn pv_units(&self) -> &[PvUnit] {
        &self.pv_units
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_pv(&self) -> usize {
        self.pv_units.len()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn limits(&self) -> &OperationalLimits {
        &self.limits
    }

    pub fn base(&self) -> Base {
        self.base
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Net real injection `P^pv - P^load` at a bus.
    pub fn p_injection(&self, bus: usize) -> f64 {
        let b = &self.buses[bus];
        b.pv.map_or(0.0, |k| self.pv_units[k].p_gen) - b.p_load
    }

    /// Net reactive injection `Q^pv - Q^load` at a bus.
    pub fn q_injection(&self, bus: usize) -> f64 {
        let b = &self.buses[bus];
        b.pv.map_or(0.0, |k| self.pv_units[k].q_set) - b.q_load
    }

    /// Current reactive setpoints of all PV units.
    pub fn q_setpoints(&self) -> Vec<f64> {
        self.pv_units.iter().map(|u| u.q_set).collect()
    }

    /// Returns a copy with every PV reactive setpoint replaced.
    pub fn apply_action(&self, q_pv: &[f64]) -> Result<Network, GridError> {
        if q_pv.len() != self.pv_units.len() {
            return Err(GridError::ActionLength {
                expected: self.pv_units.len(),
                got: q_pv.len(),
            });
        }
        for (k, (unit, &q)) in self.pv_units.iter().zip(q_pv).enumerate() {
            if !q.is_finite() {
                return Err(GridError::Invalid(format!("setpoint {k} is not finite")));
            }
            let excess = unit.rating_excess(q);
            if excess > 0.0 {
                return Err(GridError::Rating {
                    unit: k,
                    bus: unit.bus,
                    excess,
                });
            }
        }
        let mut out = self.clone();
        for (unit, &q) in out.pv_units.iter_mut().zip(q_pv) {
            unit.q_set = q;
        }
        Ok(out)
    }

    /// Scales every load by `load_scale` and every PV real output by
    /// `pv_scale`, keeping reactive setpoints within the new headroom.
    pub fn scaled(&self, load_scale: f64, pv_scale: f64) -> Network {
        let mut out = self.clone();
        for b in out.buses.iter_mut() {
            b.p_load *= load_scale;
            b.q_load *= load_scale;
        }
        for u in out.pv_units.iter_mut() {
            u.p_gen = (u.p_gen * pv_scale).clamp(0.0, u.s_rating);
            let qm = u.q_max();
            u.q_set = u.q_set.clamp(-qm, qm);
        }
        out
    }

    /// Replaces the impedance of every line, keeping orientation.
    pub(crate) fn with_impedances(&self, rx: &[(f64, f64)]) -> Network {
        let mut out = self.clone();
        for (line, &(r, x)) in out.lines.iter_mut().zip(rx) {
            line.r = r;
            line.x = x;
        }
        out
    }

    /// Lossless (linearised) squared voltages for the given injections.
    ///
    /// At any physical DistFlow solution this is an upper bound on the
    /// true squared voltage.
    pub fn linearized_voltages(&self) -> Vec<f64> {
        let n = self.n_buses();
        let topo = &self.topology;
        let mut p = vec![0.0; self.n_lines()];
        let mut q = vec![0.0; self.n_lines()];
        for &bus in topo.order.iter().rev() {
            if let Some(li) = topo.parent_line[bus] {
                let mut ps = -self.p_injection(bus);
                let mut qs = -self.q_injection(bus);
                for &c in &topo.children[bus] {
                    ps += p[c];
                    qs += q[c];
                }
                p[li] = ps;
                q[li] = qs;
            }
        }
        let mut v = vec![self.v0; n];
        for &bus in topo.order.iter() {
            if let Some(li) = topo.parent_line[bus] {
                let line = &self.lines[li];
                v[bus] = v[line.from] - 2.0 * (line.r * p[li] + line.x * q[li]);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(p_gen: f64, s: f64) -> Network {
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
                    p_load: 0.2,
                    q_load: 0.1,
                    pv: None,
                },
            ],
            vec![Line::new(0, 1, 0.05, 0.05)],
            vec![PvUnit::new(1, p_gen, s)],
            Base::new(1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_action_keeps_injections() {
        let net = two_bus(0.3, 0.5);
        let applied = net.apply_action(&[0.0]).unwrap();
        assert_eq!(applied.q_injection(1), net.q_injection(1));
        assert_eq!(applied.p_injection(1), net.p_injection(1));
    }

    #[test]
    fn boundary_setpoint_is_accepted() {
        let net = two_bus(0.3, 0.5);
        let applied = net.apply_action(&[0.4]).unwrap();
        assert_eq!(applied.pv_units()[0].q_set, 0.4);
        assert!(net.apply_action(&[-0.4]).is_ok());
    }

    #[test]
    fn setpoint_at_full_rating_with_real_output_is_rejected() {
        let net = two_bus(0.3, 0.5);
        match net.apply_action(&[0.5]) {
            Err(GridError::Rating { unit, bus, excess }) => {
                assert_eq!((unit, bus), (0, 1));
                let expected = (0.3f64 * 0.3 + 0.25).sqrt() - 0.5;
                assert!((excess - expected).abs() < 1e-12);
            }
            other => panic!("expected rating error, got {other:?}"),
        }
    }

    #[test]
    fn action_length_is_checked() {
        let net = two_bus(0.3, 0.5);
        assert!(matches!(
            net.apply_action(&[0.0, 0.0]),
            Err(GridError::ActionLength {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn rejects_bad_impedance_and_negative_load() {
        let base = Base::new(1.0, 1.0).unwrap();
        let buses = vec![
            Bus {
                id: 0,
                p_load: 0.0,
                q_load: 0.0,
                pv: None,
            },
            Bus {
                id: 1,
                p_load: 0.1,
                q_load: 0.0,
                pv: None,
            },
        ];
        let err = Network::new(buses.clone(), vec![Line::new(0, 1, 0.0, 0.0)], vec![], base);
        assert!(matches!(err, Err(GridError::Invalid(_))));
        let mut neg = buses;
        neg[1].p_load = -0.1;
        let err = Network::new(neg, vec![Line::new(0, 1, 0.1, 0.1)], vec![], base);
        assert!(matches!(err, Err(GridError::Invalid(_))));
    }

    #[test]
    fn lines_are_oriented_downstream() {
        let base = Base::new(1.0, 1.0).unwrap();
        let buses = (0..3)
            .map(|id| Bus {
                id,
                p_load: 0.0,
                q_load: 0.0,
                pv: None,
            })
            .collect();
        let net = Network::new(
            buses,
            vec![Line::new(2, 1, 0.1, 0.1), Line::new(1, 0, 0.1, 0.1)],
            vec![],
            base,
        )
        .unwrap();
        assert_eq!((net.lines()[0].from, net.lines()[0].to), (1, 2));
        assert_eq!((net.lines()[1].from, net.lines()[1].to), (0, 1));
    }

    #[test]
    fn limits_validation() {
        assert!(OperationalLimits::default().validate().is_ok());
        let bad = OperationalLimits {
            v_min: 1.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
