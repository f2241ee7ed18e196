//! Closed-loop experiments: a controller proposes setpoints from the
//! nominal model, the filter (optionally) corrects them, and the result is
//! applied to a feeder whose line parameters differ from the model.
//!
//! Violations are counted per bus-step (voltage), per line-step (current)
//! and per step (substation) on the true system.

mod controller;
mod profile;
mod samples;
mod sweep;

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dro::{DroError, WassersteinBall};
use crate::filter::{filter_action, filter_or_fallback, DrsfConfig, FilterBounds, FilterError};
use crate::grid::{
    perturb_with, solve_power_flow, GridError, Network, OperatingPoint, OperationalLimits,
    PowerFlowError, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

pub use controller::{
    Controller, ControllerSpec, GreedyVoltController, Observation, RandomController,
    ReplayController,
};
pub use profile::{Profile, ProfileConfig};
pub use samples::{
    bounds_from_samples, generate_error_samples, generate_profile_samples, ErrorSamples,
};
pub use sweep::{epsilon_sweep, SweepPoint};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("error sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: PowerFlowError,
    },
    #[error("scenario {scenario}, step {step}: {source}")]
    Step {
        scenario: usize,
        step: usize,
        #[source]
        source: StepError,
    },
    #[error("bounds: {0}")]
    Bounds(#[from] DroError),
    #[error("profile: {0}")]
    Profile(String),
    #[error("replay: {0}")]
    Replay(String),
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("power flow: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("network: {0}")]
    Grid(#[from] GridError),
    #[error("controller: {0}")]
    Controller(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub voltage: usize,
    pub current: usize,
    pub substation: usize,
}

impl ViolationCounts {
    pub fn total(&self) -> usize {
        self.voltage + self.current + self.substation
    }

    fn add(&mut self, other: &ViolationCounts) {
        self.voltage += other.voltage;
        self.current += other.current;
        self.substation += other.substation;
    }
}

/// Buses with `v` outside `[V_min^2, V_max^2]`, lines with `l > I_max^2`,
/// and whether `P0^2 + Q0^2 > S0_max^2`.
pub fn count_violations(op: &OperatingPoint, limits: &OperationalLimits) -> ViolationCounts {
    let (vlo, vhi) = (limits.v_min.powi(2), limits.v_max.powi(2));
    ViolationCounts {
        voltage: op.v_sq.iter().filter(|&&v| v < vlo || v > vhi).count(),
        current: op
            .l_sq
            .iter()
            .filter(|&&l| l > limits.i_max.powi(2))
            .count(),
        substation: usize::from(op.s0_sq() > limits.s0_max.powi(2)),
    }
}

/// `-w1 * deviation - w2 * loss`.
pub fn compute_reward(deviation: f64, loss: f64, weights: (f64, f64)) -> f64 {
    -weights.0 * deviation - weights.1 * loss
}

/// Sample size and ambiguity level used to derive the filter's bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSettings {
    pub n_samples: usize,
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            n_samples: 50,
            epsilon: 0.01,
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Standard deviation of the relative line-parameter error.
    pub sigma: f64,
    pub seed: u64,
    pub filter_on: bool,
    /// Use the labelled fallback when the robust set is empty; otherwise
    /// an empty set aborts the episode.
    pub fallback: bool,
    pub n_scenarios: usize,
    pub drsf: DrsfConfig,
    /// Weights of deviation and loss in the reward.
    pub reward_weights: (f64, f64),
    /// Draw a new true system every step instead of once per scenario.
    pub redraw_each_step: bool,
    pub bounds: BoundSettings,
    pub controller: ControllerSpec,
    pub profile: ProfileConfig,
    /// Recorded `load,pv` multipliers; replaces the synthetic profile.
    pub profile_file: Option<PathBuf>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 48,
            sigma: 0.3,
            seed: 0,
            filter_on: true,
            fallback: true,
            n_scenarios: 1,
            drsf: DrsfConfig::default(),
            reward_weights: (2000.0, 1000.0),
            redraw_each_step: false,
            bounds: BoundSettings::default(),
            controller: ControllerSpec::Random,
            profile: ProfileConfig::default(),
            profile_file: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let (w1, w2) = self.reward_weights;
        if !(w1.is_finite() && w2.is_finite() && w1 >= 0.0 && w2 >= 0.0) {
            return Err(SimError::Config(format!(
                "reward weights must be finite and >= 0, got ({w1}, {w2})"
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SimError::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.n_scenarios == 0 {
            return Err(SimError::Config("n_scenarios must be at least 1".into()));
        }
        WassersteinBall::new(self.bounds.epsilon, self.bounds.alpha)?;
        self.profile.validate()
    }

    fn load_profile(&self) -> Result<Option<Profile>, SimError> {
        let Some(path) = &self.profile_file else {
            return Ok(None);
        };
        let file = std::fs::File::open(path)
            .map_err(|e| SimError::Profile(format!("{}: {e}", path.display())))?;
        let p = Profile::from_csv(file)?;
        if p.len() < self.horizon {
            return Err(SimError::Profile(format!(
                "{} has {} rows, horizon is {}",
                path.display(),
                p.len(),
                self.horizon
            )));
        }
        Ok(Some(p))
    }
}

/// Independent random streams derived from the seed.
#[derive(Clone, Copy)]
enum Stream {
    Truth = 0,
    Profile = 1,
    Controller = 2,
}

fn stream(seed: u64, scenario: usize, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 3 * scenario as u64 + which as u64);
    rng
}

/// Seed of the error-sample draw, kept apart from every scenario stream.
fn sample_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub violations_v: usize,
    pub violations_i: usize,
    pub violations_s: usize,
    /// Active loss of the true system (p.u.).
    pub loss: f64,
    pub reward: f64,
    pub deviation: f64,
    pub filter_ms: f64,
    pub fallback: bool,
    /// Cone gap of the filter's relaxed optimum; `None` without the filter.
    pub exactness_gap: Option<f64>,
    /// Extreme true voltages (p.u.).
    pub v_min: f64,
    pub v_max: f64,
    pub q_applied: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: usize,
    pub filter_on: bool,
    pub violations: ViolationCounts,
    /// Steps with at least one voltage violation.
    pub voltage_violation_steps: usize,
    pub fallback_steps: usize,
    /// Sum of per-step losses (p.u. x steps).
    pub total_loss: f64,
    pub steps: Vec<StepRecord>,
}

pub const CSV_HEADER: &str = "step,violations_v,violations_i,violations_s,loss,reward,deviation,filter_ms";

impl EpisodeReport {
    fn new(scenario: usize, filter_on: bool) -> Self {
        Self {
            scenario,
            filter_on,
            violations: ViolationCounts::default(),
            voltage_violation_steps: 0,
            fallback_steps: 0,
            total_loss: 0.0,
            steps: Vec::new(),
        }
    }

    fn push(&mut self, rec: StepRecord) {
        self.violations.add(&ViolationCounts {
            voltage: rec.violations_v,
            current: rec.violations_i,
            substation: rec.violations_s,
        });
        self.voltage_violation_steps += usize::from(rec.violations_v > 0);
        self.fallback_steps += usize::from(rec.fallback);
        self.total_loss += rec.loss;
        self.steps.push(rec);
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn deviations(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.deviation).collect()
    }

    pub fn filter_times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.filter_ms).collect()
    }

    /// The report with wall-clock timings zeroed; everything else is a
    /// deterministic function of configuration and seed.
    pub fn without_timing(mut self) -> Self {
        for s in &mut self.steps {
            s.filter_ms = 0.0;
        }
        self
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.steps {
            write_row(&mut out, s)?;
        }
        Ok(())
    }
}

fn write_row<W: Write>(out: &mut W, s: &StepRecord) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{:e},{:e},{:e},{:.4}",
        s.step,
        s.violations_v,
        s.violations_i,
        s.violations_s,
        s.loss,
        s.reward,
        s.deviation,
        s.filter_ms
    )
}

/// Runs scenario 0 of `cfg`. When the filter is on, `bounds` must be
/// given and match `nominal`.
pub fn run_episode(
    cfg: &EpisodeConfig,
    controller: &mut dyn Controller,
    nominal: &Network,
    bounds: Option<&FilterBounds>,
) -> Result<EpisodeReport, SimError> {
    run_scenario(cfg, 0, controller, nominal, bounds)
}

/// Runs one scenario: a true system drawn from the scenario's stream, a
/// load/PV profile, and `cfg.horizon` closed-loop steps.
pub fn run_scenario(
    cfg: &EpisodeConfig,
    scenario: usize,
    controller: &mut dyn Controller,
    nominal: &Network,
    bounds: Option<&FilterBounds>,
) -> Result<EpisodeReport, SimError> {
    cfg.validate()?;
    let drsf = if cfg.filter_on {
        let b = bounds.ok_or_else(|| {
            SimError::Config("the filter is on but no bounds were supplied".into())
        })?;
        b.check(nominal).map_err(|e| SimError::Config(e.to_string()))?;
        DrsfConfig {
            bounds: Some(b.clone()),
            ..cfg.drsf.clone()
        }
    } else {
        cfg.drsf.clone()
    };
    let limits = drsf.limits.unwrap_or(*nominal.limits());
    let profile = match cfg.load_profile()? {
        Some(p) => p,
        None => cfg
            .profile
            .generate(cfg.horizon, &mut stream(cfg.seed, scenario, Stream::Profile)),
    };
    let mut truth_rng = stream(cfg.seed, scenario, Stream::Truth);
    let mut truth = perturb_with(nominal, cfg.sigma, &mut truth_rng);
    let pv_bus: Vec<usize> = nominal.pv_units().iter().map(|u| u.bus).collect();
    let mut q_prev = vec![0.0f64; nominal.n_pv()];
    let mut report = EpisodeReport::new(scenario, cfg.filter_on);

    for step in 0..cfg.horizon {
        let fail = |source: StepError| SimError::Step {
            scenario,
            step,
            source,
        };
        if cfg.redraw_each_step && step > 0 {
            truth = perturb_with(nominal, cfg.sigma, &mut truth_rng);
        }
        let (load, pv) = (profile.load[step], profile.pv[step]);
        let model = nominal.scaled(load, pv);
        let q_max: Vec<f64> = model.pv_units().iter().map(|u| u.q_max()).collect();
        for (q, m) in q_prev.iter_mut().zip(&q_max) {
            *q = q.clamp(-m, *m);
        }
        let observed = model
            .apply_action(&q_prev)
            .map_err(|e| fail(e.into()))
            .and_then(|n| {
                solve_power_flow(&n, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| fail(e.into()))
            })?;
        let obs = Observation {
            step,
            v: observed.voltages(),
            loss: observed.loss,
            pv_bus: pv_bus.clone(),
            q_max: q_max.clone(),
            q_prev: q_prev.clone(),
        };
        let raw = controller
            .act(&obs)
            .map_err(|e| fail(StepError::Controller(e.to_string())))?;
        if raw.len() != q_max.len() || raw.iter().any(|q| !q.is_finite()) {
            return Err(fail(StepError::Controller(format!(
                "expected {} finite setpoints, got {:?}",
                q_max.len(),
                raw
            ))));
        }
        let q_learn: Vec<f64> = raw
            .iter()
            .zip(&q_max)
            .map(|(q, m)| q.clamp(-m, *m))
            .collect();
        if q_learn != raw {
            log::debug!("step {step}: clipped proposal {raw:?} to {q_learn:?}");
        }

        let (q_applied, deviation, filter_ms, fallback, gap) = if cfg.filter_on {
            let res = if cfg.fallback {
                filter_or_fallback(&model, &q_learn, &drsf)
            } else {
                filter_action(&model, &q_learn, &drsf)
            }
            .map_err(|e| fail(e.into()))?;
            (
                res.q_safe,
                res.deviation,
                res.solve_time * 1e3,
                res.fallback,
                Some(res.exactness_gap),
            )
        } else {
            (q_learn, 0.0, 0.0, false, None)
        };

        let actual = truth
            .scaled(load, pv)
            .apply_action(&q_applied)
            .map_err(|e| fail(e.into()))?;
        let op = solve_power_flow(&actual, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .map_err(|e| fail(e.into()))?;
        let counts = count_violations(&op, &limits);
        report.push(StepRecord {
            step,
            violations_v: counts.voltage,
            violations_i: counts.current,
            violations_s: counts.substation,
            loss: op.loss,
            reward: compute_reward(deviation, op.loss, cfg.reward_weights),
            deviation,
            filter_ms,
            fallback,
            exactness_gap: gap,
            v_min: op.min_voltage().1,
            v_max: op.max_voltage().1,
            q_applied: q_applied.clone(),
        });
        q_prev = q_applied;
    }
    Ok(report)
}

/// Runs `cfg.n_scenarios` scenarios on up to `jobs` threads. Each
/// scenario builds its own controller from `cfg.controller`; reports come
/// back in scenario order.
pub fn run_scenarios(
    cfg: &EpisodeConfig,
    nominal: &Network,
    bounds: Option<&FilterBounds>,
    jobs: usize,
) -> Result<Vec<EpisodeReport>, SimError> {
    cfg.validate()?;
    let one = |scenario: usize| {
        let mut c = cfg
            .controller
            .build(stream(cfg.seed, scenario, Stream::Controller))?;
        run_scenario(cfg, scenario, c.as_mut(), nominal, bounds)
    };
    par_map(cfg.n_scenarios, jobs, one)
}

#[cfg(feature = "parallel")]
fn par_map<T: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T, SimError> + Sync,
) -> Result<Vec<T>, SimError> {
    use rayon::prelude::*;
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn par_map<T>(
    n: usize,
    _jobs: usize,
    f: impl Fn(usize) -> Result<T, SimError>,
) -> Result<Vec<T>, SimError> {
    (0..n).map(f).collect()
}

/// Aggregate over scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenarios: usize,
    pub steps: usize,
    pub violations: ViolationCounts,
    pub voltage_violation_steps: usize,
    /// Fraction of steps with at least one voltage violation.
    pub voltage_violation_probability: f64,
    pub fallback_steps: usize,
    pub total_loss: f64,
    pub mean_reward: f64,
    pub mean_deviation: f64,
    pub mean_filter_ms: f64,
    pub max_filter_ms: f64,
    /// Largest cone gap over filtered steps (0 without the filter).
    pub max_exactness_gap: f64,
}

impl Summary {
    pub fn of(reports: &[EpisodeReport]) -> Self {
        let mut violations = ViolationCounts::default();
        let steps: Vec<&StepRecord> = reports.iter().flat_map(|r| &r.steps).collect();
        for r in reports {
            violations.add(&r.violations);
        }
        let n = steps.len();
        let mean = |f: &dyn Fn(&StepRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                steps.iter().map(|s| f(s)).sum::<f64>() / n as f64
            }
        };
        let vsteps: usize = reports.iter().map(|r| r.voltage_violation_steps).sum();
        Self {
            scenarios: reports.len(),
            steps: n,
            violations,
            voltage_violation_steps: vsteps,
            voltage_violation_probability: if n == 0 { 0.0 } else { vsteps as f64 / n as f64 },
            fallback_steps: reports.iter().map(|r| r.fallback_steps).sum(),
            total_loss: reports.iter().map(|r| r.total_loss).sum(),
            mean_reward: mean(&|s| s.reward),
            mean_deviation: mean(&|s| s.deviation),
            mean_filter_ms: mean(&|s| s.filter_ms),
            max_filter_ms: steps.iter().map(|s| s.filter_ms).fold(0.0, f64::max),
            max_exactness_gap: steps
                .iter()
                .filter_map(|s| s.exactness_gap)
                .fold(0.0, f64::max),
        }
    }
}

/// A full run: samples, bounds, and every scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub config: EpisodeConfig,
    pub bounds: Option<FilterBounds>,
    pub summary: Summary,
    pub reports: Vec<EpisodeReport>,
}

impl Experiment {
    /// All scenarios in one table, with a leading `scenario` column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "scenario,{CSV_HEADER}")?;
        for r in &self.reports {
            for s in &r.steps {
                write!(out, "{},", r.scenario)?;
                write_row(&mut out, s)?;
            }
        }
        Ok(())
    }
}

/// Error samples for `cfg`, drawn at operating states of its profile.
pub fn experiment_samples(cfg: &EpisodeConfig, nominal: &Network) -> Result<ErrorSamples, SimError> {
    let seed = sample_seed(cfg.seed);
    let n = cfg.bounds.n_samples;
    match cfg.load_profile()? {
        Some(p) => samples::sample_states(nominal, cfg.sigma, n, seed, |rng| {
            use rand::Rng;
            let k = rng.gen_range(0..p.len());
            (p.load[k], p.pv[k])
        }),
        None => generate_profile_samples(nominal, &cfg.profile, cfg.sigma, n, seed),
    }
}

/// Draws error samples, derives bounds at `cfg.bounds`, and runs every
/// scenario. Without the filter, no samples are drawn.
pub fn run_experiment(
    cfg: &EpisodeConfig,
    nominal: &Network,
    jobs: usize,
) -> Result<Experiment, SimError> {
    cfg.validate()?;
    let bounds = if cfg.filter_on {
        let samples = experiment_samples(cfg, nominal)?;
        let ball = WassersteinBall::new(cfg.bounds.epsilon, cfg.bounds.alpha)?;
        Some(bounds_from_samples(&samples, &ball)?)
    } else {
        None
    };
    let reports = run_scenarios(cfg, nominal, bounds.as_ref(), jobs)?;
    Ok(Experiment {
        config: cfg.clone(),
        bounds,
        summary: Summary::of(&reports),
        reports,
    })
}
