use std::f64::consts::PI;
use std::io::Read;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;

/// Per-step multipliers applied to every load and to every PV unit's
/// real output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
}

/// Synthetic daily shape: a sinusoidal load peaking in the evening and a
/// half-sine PV curve between 06:00 and 18:00, both with Gaussian noise.
/// PV output on a given day is further scaled by a random clearness
/// factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub steps_per_day: usize,
    pub start_hour: f64,
    pub load_min: f64,
    pub load_max: f64,
    /// Hour of the daily load maximum.
    pub load_peak_hour: f64,
    pub pv_peak: f64,
    /// Lower end of the daily clearness factor (upper end is 1).
    pub clearness_min: f64,
    /// Standard deviation of the additive noise on both series.
    pub noise: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            steps_per_day: 48,
            start_hour: 0.0,
            load_min: 0.35,
            load_max: 0.9,
            load_peak_hour: 19.0,
            pv_peak: 1.0,
            clearness_min: 0.8,
            noise: 0.02,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.steps_per_day > 0
            && self.start_hour.is_finite()
            && self.load_min.is_finite()
            && self.load_min >= 0.0
            && self.load_max >= self.load_min
            && self.load_max.is_finite()
            && self.load_peak_hour.is_finite()
            && (0.0..=1.0).contains(&self.pv_peak)
            && (0.0..=1.0).contains(&self.clearness_min)
            && self.noise.is_finite()
            && self.noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid profile settings: {self:?}")))
        }
    }

    fn hour(&self, step: usize) -> f64 {
        (self.start_hour + 24.0 * step as f64 / self.steps_per_day as f64).rem_euclid(24.0)
    }

    /// Noise-free load and PV multipliers at `hour`, before the clearness
    /// factor.
    pub fn shape(&self, hour: f64) -> (f64, f64) {
        let mid = 0.5 * (self.load_min + self.load_max);
        let amp = 0.5 * (self.load_max - self.load_min);
        let load = mid + amp * (2.0 * PI * (hour - self.load_peak_hour) / 24.0).cos();
        let pv = if (6.0..18.0).contains(&hour) {
            self.pv_peak * (PI * (hour - 6.0) / 12.0).sin()
        } else {
            0.0
        };
        (load, pv)
    }

    fn noisy<R: Rng>(&self, hour: f64, clearness: f64, rng: &mut R) -> (f64, f64) {
        let normal = Normal::new(0.0, self.noise).expect("noise validated");
        let (l, p) = self.shape(hour);
        let load = (l + normal.sample(rng)).max(0.0);
        let pv = if p > 0.0 {
            (clearness * p + normal.sample(rng)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (load, pv)
    }

    /// A profile of `horizon` steps. Noisy values are clamped so that loads
    /// stay non-negative and PV stays within [0, 1].
    pub fn generate<R: Rng>(&self, horizon: usize, rng: &mut R) -> Profile {
        let mut clearness = 1.0;
        let mut load = Vec::with_capacity(horizon);
        let mut pv = Vec::with_capacity(horizon);
        for step in 0..horizon {
            if step % self.steps_per_day == 0 {
                clearness = rng.gen_range(self.clearness_min..=1.0);
            }
            let (l, p) = self.noisy(self.hour(step), clearness, rng);
            load.push(l);
            pv.push(p);
        }
        Profile { load, pv }
    }

    /// Load and PV multipliers at a uniformly random step of the day.
    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let step = rng.gen_range(0..self.steps_per_day);
        let clearness = rng.gen_range(self.clearness_min..=1.0);
        self.noisy(self.hour(step), clearness, rng)
    }
}

impl Profile {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    /// Reads a CSV with a `load,pv` header.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, SimError> {
        #[derive(Deserialize)]
        struct Row {
            load: f64,
            pv: f64,
        }
        let mut reader = csv::Reader::from_reader(input);
        let mut out = Profile {
            load: Vec::new(),
            pv: Vec::new(),
        };
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| SimError::Profile(format!("row {}: {e}", i + 1)))?;
            if !(row.load.is_finite() && row.load >= 0.0) {
                return Err(SimError::Profile(format!(
                    "row {}: load multiplier must be finite and >= 0",
                    i + 1
                )));
            }
            if !(0.0..=1.0).contains(&row.pv) {
                return Err(SimError::Profile(format!(
                    "row {}: pv multiplier must lie in [0, 1]",
                    i + 1
                )));
            }
            out.load.push(row.load);
            out.pv.push(row.pv);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_free_shape() {
        let cfg = ProfileConfig::default();
        let (l, p) = cfg.shape(19.0);
        assert!((l - 0.9).abs() < 1e-12);
        assert_eq!(p, 0.0);
        let (l, p) = cfg.shape(7.0);
        assert!((l - 0.35).abs() < 1e-12);
        assert!((cfg.shape(12.0).1 - 1.0).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.3);
    }

    #[test]
    fn generated_profile_is_seeded_and_bounded() {
        let cfg = ProfileConfig::default();
        let a = cfg.generate(100, &mut ChaCha8Rng::seed_from_u64(1));
        let b = cfg.generate(100, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.pv.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(a.load.iter().all(|l| *l >= 0.0));
        // Night steps carry no PV.
        assert_eq!(a.pv[0], 0.0);
    }

    #[test]
    fn csv_profiles() {
        let p = Profile::from_csv("load,pv\n0.5,0.2\n1.0,0\n".as_bytes()).unwrap();
        assert_eq!(p.load, vec![0.5, 1.0]);
        assert!(Profile::from_csv("load,pv\n0.5,1.5\n".as_bytes()).is_err());
        assert!(Profile::from_csv("load\n0.5\n".as_bytes()).is_err());
    }
}
