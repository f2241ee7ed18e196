use serde::{Deserialize, Serialize};

use crate::dro::WassersteinBall;
use crate::grid::Network;

use super::{
    bounds_from_samples, experiment_samples, run_scenarios, EpisodeConfig, SimError, Summary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    /// Mean width of the voltage bound box over buses (p.u.^2).
    pub mean_voltage_width: f64,
    pub summary: Summary,
}

/// Filters the same scenarios (same true systems, profiles and controller
/// streams) with bounds derived from one shared sample set at each
/// `epsilon`.
pub fn epsilon_sweep(
    cfg: &EpisodeConfig,
    nominal: &Network,
    epsilons: &[f64],
    jobs: usize,
) -> Result<Vec<SweepPoint>, SimError> {
    cfg.validate()?;
    let cfg = EpisodeConfig {
        filter_on: true,
        ..cfg.clone()
    };
    let samples = experiment_samples(&cfg, nominal)?;
    epsilons
        .iter()
        .map(|&epsilon| {
            let ball = WassersteinBall::new(epsilon, cfg.bounds.alpha)?;
            let bounds = bounds_from_samples(&samples, &ball)?;
            let reports = run_scenarios(&cfg, nominal, Some(&bounds), jobs)?;
            let v = &bounds.voltage;
            let width = v.upper.iter().zip(&v.lower).map(|(u, l)| u - l).sum::<f64>()
                / v.upper.len() as f64;
            log::info!("epsilon {epsilon}: {} voltage-violation steps", Summary::of(&reports).voltage_violation_steps);
            Ok(SweepPoint {
                epsilon,
                mean_voltage_width: width,
                summary: Summary::of(&reports),
            })
        })
        .collect()
}
