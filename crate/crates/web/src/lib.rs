//! Browser bindings for the 33-bus demo page in `www/`.
//!
//! Every export takes and returns JSON strings so the page needs no
//! generated type definitions.

use drsf_core::dro::{solve_bounds, ErrorSampleSet, RobustBounds, SampleKind, WassersteinBall};
use drsf_core::filter::{filter_or_fallback, DrsfConfig, FilterBounds};
use drsf_core::grid::{solve_power_flow, Network, OperatingPoint, DEFAULT_MAX_ITER, DEFAULT_TOL};
use drsf_core::sim::count_violations;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct FlowView {
    v: Vec<f64>,
    loss: f64,
    v_min: f64,
    v_max: f64,
    violations: usize,
}

impl FlowView {
    fn new(net: &Network, op: &OperatingPoint) -> Self {
        let lim = net.limits();
        Self {
            v: op.voltages(),
            loss: op.loss,
            v_min: lim.v_min,
            v_max: lim.v_max,
            violations: count_violations(op, lim).total(),
        }
    }
}

#[derive(Serialize)]
struct FilterView {
    q_learn: Vec<f64>,
    q_safe: Vec<f64>,
    q_max: Vec<f64>,
    deviation: f64,
    fallback: bool,
    exactness_gap: f64,
    before: FlowView,
    after: FlowView,
}

fn feeder(load: f64, pv: f64) -> Result<Network, String> {
    if !(load.is_finite() && load >= 0.0 && (0.0..=1.0).contains(&pv)) {
        return Err(format!("load must be >= 0 and pv in [0, 1], got {load} and {pv}"));
    }
    Ok(Network::ieee33().scaled(load, pv))
}

fn parse_action(net: &Network, q_json: &str) -> Result<Vec<f64>, String> {
    let q: Vec<f64> = serde_json::from_str(q_json).map_err(|e| format!("action: {e}"))?;
    if q.len() != net.n_pv() {
        return Err(format!("expected {} setpoints, got {}", net.n_pv(), q.len()));
    }
    Ok(q)
}

/// Power flow at `q`, with the proposal clipped to the inverter ratings.
fn flow_at(net: &Network, q: &[f64]) -> Result<(Vec<f64>, FlowView), String> {
    let clipped: Vec<f64> = q
        .iter()
        .zip(net.pv_units())
        .map(|(q, u)| q.clamp(-u.q_max(), u.q_max()))
        .collect();
    let applied = net.apply_action(&clipped).map_err(|e| e.to_string())?;
    let op = solve_power_flow(&applied, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    Ok((clipped, FlowView::new(net, &op)))
}

pub fn power_flow_json(load: f64, pv: f64, q_json: &str) -> Result<String, String> {
    let net = feeder(load, pv)?;
    let q = parse_action(&net, q_json)?;
    let (_, view) = flow_at(&net, &q)?;
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Filters `q` with a uniform robust margin on every squared voltage.
pub fn filter_json(load: f64, pv: f64, q_json: &str, margin: f64) -> Result<String, String> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(format!("margin must be finite and >= 0, got {margin}"));
    }
    let net = feeder(load, pv)?;
    let q = parse_action(&net, q_json)?;
    let (q_learn, before) = flow_at(&net, &q)?;
    let mut bounds = FilterBounds::zero(&net);
    bounds.voltage = RobustBounds {
        lower: vec![-margin; net.n_buses()],
        upper: vec![margin; net.n_buses()],
        ..bounds.voltage
    };
    let res = filter_or_fallback(&net, &q_learn, &DrsfConfig::with_bounds(bounds))
        .map_err(|e| e.to_string())?;
    let (_, after) = flow_at(&net, &res.q_safe)?;
    let view = FilterView {
        q_max: net.pv_units().iter().map(|u| u.q_max()).collect(),
        q_learn,
        q_safe: res.q_safe,
        deviation: res.deviation,
        fallback: res.fallback,
        exactness_gap: res.exactness_gap,
        before,
        after,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Certified interval for scalar samples separated by commas, spaces or
/// newlines.
pub fn interval_json(samples: &str, epsilon: f64, alpha: f64) -> Result<String, String> {
    let values = samples
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect::<Result<Vec<f64>, String>>()?;
    let set = ErrorSampleSet::scalar(SampleKind::Substation, &values).map_err(|e| e.to_string())?;
    let ball = WassersteinBall::new(epsilon, alpha).map_err(|e| e.to_string())?;
    let b = solve_bounds(&set, &ball).map_err(|e| e.to_string())?;
    serde_json::to_string(&b).map_err(|e| e.to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = powerFlow)]
pub fn power_flow(load: f64, pv: f64, q_json: &str) -> Result<String, JsError> {
    js(power_flow_json(load, pv, q_json))
}

#[wasm_bindgen(js_name = filterAction)]
pub fn filter_action(load: f64, pv: f64, q_json: &str, margin: f64) -> Result<String, JsError> {
    js(filter_json(load, pv, q_json, margin))
}

#[wasm_bindgen(js_name = robustInterval)]
pub fn robust_interval(samples: &str, epsilon: f64, alpha: f64) -> Result<String, JsError> {
    js(interval_json(samples, epsilon, alpha))
}

/// Reactive headroom of each inverter at this operating state (p.u.).
#[wasm_bindgen]
pub fn headroom(load: f64, pv: f64) -> Result<String, JsError> {
    let net = js(feeder(load, pv))?;
    let q_max: Vec<f64> = net.pv_units().iter().map(|u| u.q_max()).collect();
    Ok(serde_json::to_string(&q_max)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn overvoltage_proposal_is_pulled_back() {
        // Light load, full sun, inverters pushing reactive power.
        let q = serde_json::to_string(&[1.0; 6]).unwrap();
        let v: Value = serde_json::from_str(&filter_json(0.2, 1.0, &q, 0.0).unwrap()).unwrap();
        assert!(v["before"]["violations"].as_u64().unwrap() > 0);
        assert_eq!(v["after"]["violations"], 0);
        assert_eq!(v["fallback"], false);
        assert!(v["deviation"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(power_flow_json(1.0, 0.5, "[0, 0]").is_err());
        assert!(power_flow_json(-1.0, 0.5, "[0,0,0,0,0,0]").is_err());
        assert!(interval_json("0.1, x", 0.0, 0.1).is_err());
    }

    #[test]
    fn four_point_interval() {
        let v: Value =
            serde_json::from_str(&interval_json("-0.2 -0.1\n0.1, 0.3", 0.0, 0.25).unwrap()).unwrap();
        let (lo, hi) = (v["lower"][0].as_f64().unwrap(), v["upper"][0].as_f64().unwrap());
        // Any three of the four points cover 0.75; the narrowest such box.
        assert!((lo + 0.2).abs() < 1e-6 && (hi - 0.1).abs() < 1e-6, "{lo} {hi}");
    }
}
