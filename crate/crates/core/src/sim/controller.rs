use std::io::Read;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// What a controller sees before acting: the nominal model's power flow at
/// the current loads and the previously applied setpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    /// Voltage magnitude per bus (p.u.).
    pub v: Vec<f64>,
    /// Total active loss (p.u.).
    pub loss: f64,
    /// Bus of each PV unit.
    pub pv_bus: Vec<usize>,
    /// Reactive headroom of each unit at this step.
    pub q_max: Vec<f64>,
    /// Setpoints applied at the previous step.
    pub q_prev: Vec<f64>,
}

/// A reactive-power policy. Proposals outside the inverter ratings are
/// clipped by the harness.
pub trait Controller {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>, SimError>;
}

/// Uniform setpoints within each unit's headroom.
#[derive(Debug, Clone)]
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Controller for RandomController {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>, SimError> {
        Ok(obs
            .q_max
            .iter()
            .map(|&m| if m > 0.0 { self.rng.gen_range(-m..=m) } else { 0.0 })
            .collect())
    }
}

/// Proportional droop on the local voltage: `q = gain * (v_ref - v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyVoltController {
    pub gain: f64,
    pub v_ref: f64,
}

impl Default for GreedyVoltController {
    fn default() -> Self {
        Self {
            gain: 1.5,
            v_ref: 1.0,
        }
    }
}

impl Controller for GreedyVoltController {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>, SimError> {
        Ok(obs
            .pv_bus
            .iter()
            .map(|&b| self.gain * (self.v_ref - obs.v[b]))
            .collect())
    }
}

/// Replays recorded setpoints, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayController {
    actions: Vec<Vec<f64>>,
    next: usize,
}

impl ReplayController {
    pub fn new(actions: Vec<Vec<f64>>) -> Self {
        Self { actions, next: 0 }
    }

    /// Headerless or headed CSV; every row holds one value per PV unit.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(input);
        let mut actions = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Replay(format!("row {}: {e}", i + 1)))?;
            let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(row) => actions.push(row),
                // A non-numeric first row is a header.
                Err(_) if i == 0 => continue,
                Err(e) => return Err(SimError::Replay(format!("row {}: {e}", i + 1))),
            }
        }
        Ok(Self::new(actions))
    }
}

impl Controller for ReplayController {
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>, SimError> {
        let row = self.actions.get(self.next).ok_or_else(|| {
            SimError::Replay(format!(
                "recording has {} rows, step {} requested",
                self.actions.len(),
                obs.step
            ))
        })?;
        if row.len() != obs.q_max.len() {
            return Err(SimError::Replay(format!(
                "row {} has {} values for {} units",
                self.next + 1,
                row.len(),
                obs.q_max.len()
            )));
        }
        self.next += 1;
        Ok(row.clone())
    }
}

/// Serializable choice of built-in controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    Random,
    GreedyVolt(GreedyVoltController),
    Replay { path: PathBuf },
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec::Random
    }
}

impl ControllerSpec {
    pub fn build(&self, rng: ChaCha8Rng) -> Result<Box<dyn Controller>, SimError> {
        Ok(match self {
            ControllerSpec::Random => Box::new(RandomController::from_rng(rng)),
            ControllerSpec::GreedyVolt(c) => Box::new(*c),
            ControllerSpec::Replay { path } => {
                let file = std::fs::File::open(path)
                    .map_err(|e| SimError::Replay(format!("{}: {e}", path.display())))?;
                Box::new(ReplayController::from_csv(file)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: Vec<f64>) -> Observation {
        Observation {
            step: 0,
            v,
            loss: 0.0,
            pv_bus: vec![1, 2],
            q_max: vec![0.05, 0.0],
            q_prev: vec![0.0, 0.0],
        }
    }

    #[test]
    fn random_stays_within_headroom() {
        let mut c = RandomController::new(3);
        for _ in 0..100 {
            let q = c.act(&obs(vec![1.0; 3])).unwrap();
            assert!(q[0].abs() <= 0.05);
            assert_eq!(q[1], 0.0);
        }
    }

    #[test]
    fn droop_pushes_towards_reference() {
        let mut c = GreedyVoltController { gain: 2.0, v_ref: 1.0 };
        let q = c.act(&obs(vec![1.0, 0.97, 1.02])).unwrap();
        assert!((q[0] - 0.06).abs() < 1e-12);
        assert!((q[1] + 0.04).abs() < 1e-12);
    }

    #[test]
    fn replay_reads_rows_in_order_then_stops() {
        let mut c = ReplayController::from_csv("q0,q1\n0.01,-0.02\n0.03,0\n".as_bytes()).unwrap();
        assert_eq!(c.act(&obs(vec![1.0; 3])).unwrap(), vec![0.01, -0.02]);
        assert_eq!(c.act(&obs(vec![1.0; 3])).unwrap(), vec![0.03, 0.0]);
        assert!(matches!(c.act(&obs(vec![1.0; 3])), Err(SimError::Replay(_))));
        let mut short = ReplayController::new(vec![vec![0.0]]);
        assert!(short.act(&obs(vec![1.0; 3])).is_err());
    }

    #[test]
    fn spec_parses_from_json() {
        let s: ControllerSpec =
            serde_json::from_str(r#"{"kind": "greedy_volt", "gain": 1.0, "v_ref": 1.01}"#).unwrap();
        assert_eq!(
            s,
            ControllerSpec::GreedyVolt(GreedyVoltController {
                gain: 1.0,
                v_ref: 1.01
            })
        );
    }
}
