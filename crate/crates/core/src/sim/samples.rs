use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dro::{solve_bounds, ErrorSampleSet, SampleKind, WassersteinBall};
use crate::filter::FilterBounds;
use crate::grid::{perturb_with, solve_power_flow, Network, DEFAULT_MAX_ITER, DEFAULT_TOL};

use super::{ProfileConfig, SimError};

/// Model-error samples for the three constraint classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSamples {
    pub voltage: ErrorSampleSet,
    pub current: ErrorSampleSet,
    pub substation: ErrorSampleSet,
}

impl ErrorSamples {
    pub fn get(&self, kind: SampleKind) -> &ErrorSampleSet {
        match kind {
            SampleKind::Voltage => &self.voltage,
            SampleKind::Current => &self.current,
            SampleKind::Substation => &self.substation,
        }
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

/// Draws `n` samples of "true minus model" power-flow quantities: each
/// sample perturbs the line parameters of `nominal`, picks uniform
/// setpoints within the ratings, and solves both networks.
pub fn generate_error_samples(
    nominal: &Network,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<ErrorSamples, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(n, sigma, &mut rng, |_| nominal.clone())
}

/// Like [`generate_error_samples`], but each sample is taken at the loads
/// and PV output of a random time of day drawn from `profile`.
pub fn generate_profile_samples(
    nominal: &Network,
    profile: &ProfileConfig,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<ErrorSamples, SimError> {
    profile.validate()?;
    sample_states(nominal, sigma, n, seed, |rng| profile.sample_state(rng))
}

/// Samples at load/PV multipliers drawn by `states`.
pub(super) fn sample_states(
    nominal: &Network,
    sigma: f64,
    n: usize,
    seed: u64,
    mut states: impl FnMut(&mut ChaCha8Rng) -> (f64, f64),
) -> Result<ErrorSamples, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(n, sigma, &mut rng, |rng| {
        let (load, pv) = states(rng);
        nominal.scaled(load, pv)
    })
}

fn sample_with(
    n: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    mut state: impl FnMut(&mut ChaCha8Rng) -> Network,
) -> Result<ErrorSamples, SimError> {
    if n == 0 {
        return Err(SimError::Config("at least one sample is required".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SimError::Config(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut dv = Vec::with_capacity(n);
    let mut dl = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    for index in 0..n {
        let model = state(rng);
        let truth = perturb_with(&model, sigma, rng);
        let q: Vec<f64> = model
            .pv_units()
            .iter()
            .map(|u| {
                let m = u.q_max();
                if m > 0.0 {
                    rng.gen_range(-m..=m)
                } else {
                    0.0
                }
            })
            .collect();
        let solve = |net: &Network| {
            let net = net.apply_action(&q).expect("setpoints drawn within ratings");
            solve_power_flow(&net, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .map_err(|source| SimError::Sample { index, source })
        };
        let (m, t) = (solve(&model)?, solve(&truth)?);
        dv.push(t.v_sq.iter().zip(&m.v_sq).map(|(a, b)| a - b).collect());
        dl.push(t.l_sq.iter().zip(&m.l_sq).map(|(a, b)| a - b).collect());
        ds.push(vec![t.s0_sq() - m.s0_sq()]);
    }
    Ok(ErrorSamples {
        voltage: ErrorSampleSet::new(SampleKind::Voltage, dv)?,
        current: ErrorSampleSet::new(SampleKind::Current, dl)?,
        substation: ErrorSampleSet::new(SampleKind::Substation, ds)?,
    })
}

/// Robust bounds for every class at one ambiguity level.
pub fn bounds_from_samples(
    samples: &ErrorSamples,
    ball: &WassersteinBall,
) -> Result<FilterBounds, SimError> {
    Ok(FilterBounds {
        voltage: solve_bounds(&samples.voltage, ball)?,
        current: solve_bounds(&samples.current, ball)?,
        substation: solve_bounds(&samples.substation, ball)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_model_error_gives_zero_samples() {
        let net = Network::ieee33();
        let s = generate_error_samples(&net, 0.0, 5, 1).unwrap();
        for kind in SampleKind::all() {
            assert!(s.get(kind).samples().iter().flatten().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn seeded_and_shaped() {
        let net = Network::ieee33();
        let a = generate_error_samples(&net, 0.3, 8, 42).unwrap();
        let b = generate_error_samples(&net, 0.3, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.voltage.dim(), 33);
        assert_eq!(a.current.dim(), 32);
        assert_eq!(a.substation.dim(), 1);
        // The substation voltage is fixed in both models.
        assert!(a.voltage.coordinate(0).iter().all(|x| *x == 0.0));
        assert_ne!(a, generate_error_samples(&net, 0.3, 8, 43).unwrap());
    }

    #[test]
    fn voltage_errors_are_roughly_centred() {
        let net = Network::ieee33();
        let s = generate_error_samples(&net, 0.3, 50, 7).unwrap();
        let all: Vec<f64> = s.voltage.samples().iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(sd > 0.0);
        assert!(mean.abs() <= 3.0 * sd, "mean {mean}, sd {sd}");
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            generate_error_samples(&Network::ieee33(), 0.1, 0, 1),
            Err(SimError::Config(_))
        ));
    }
}
