//! Distributionally robust error bounds over a 1-Wasserstein ball with
//! the l-infinity ground metric.
//!
//! Given `N` error samples, a box `[lower, upper]` is certified at risk
//! level `alpha` when every distribution within transport distance
//! `epsilon` of the empirical one puts mass at least `1 - alpha` inside it.

mod bounds;
mod io;
mod mip;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::ConicError;

pub use bounds::solve_bounds;
pub use io::{read_samples_csv, write_samples_csv};
pub use mip::{solve_bounds_mip, solve_bounds_mip_with, DEFAULT_SIZE_GUARD};

/// Slack allowed when checking `coverage >= 1 - alpha`.
pub const COVERAGE_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DroError {
    #[error("invalid samples: {0}")]
    Samples(String),
    #[error("invalid ambiguity set: {0}")]
    Ball(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("box is inverted in coordinate {coord}: lower {lower} > upper {upper}")]
    Box {
        coord: usize,
        lower: f64,
        upper: f64,
    },
    #[error("no box reaches coverage {target}: {reason}")]
    InfeasibleBounds { target: f64, reason: String },
    #[error("{n} samples exceed the branch-and-bound guard of {guard}")]
    SizeGuard { n: usize, guard: usize },
    #[error("LP relaxation failed: {0}")]
    Solver(#[from] ConicError),
    #[error("sample file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Squared-voltage errors, one entry per bus.
    Voltage,
    /// Squared-current errors, one entry per line.
    Current,
    /// Substation apparent-power errors, a single entry.
    Substation,
}

impl SampleKind {
    pub fn column_prefix(self) -> &'static str {
        match self {
            SampleKind::Voltage => "dv",
            SampleKind::Current => "dl",
            SampleKind::Substation => "ds",
        }
    }

    pub fn all() -> [SampleKind; 3] {
        [
            SampleKind::Voltage,
            SampleKind::Current,
            SampleKind::Substation,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSampleSet {
    kind: SampleKind,
    samples: Vec<Vec<f64>>,
}

impl ErrorSampleSet {
    pub fn new(kind: SampleKind, samples: Vec<Vec<f64>>) -> Result<Self, DroError> {
        let Some(first) = samples.first() else {
            return Err(DroError::Samples("at least one sample is required".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(DroError::Samples("samples have dimension 0".into()));
        }
        if kind == SampleKind::Substation && dim != 1 {
            return Err(DroError::Samples(format!(
                "substation samples are scalar, got dimension {dim}"
            )));
        }
        for (s, v) in samples.iter().enumerate() {
            if v.len() != dim {
                return Err(DroError::Samples(format!(
                    "sample {s} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(DroError::Samples(format!(
                    "sample {s}, entry {k} is not finite"
                )));
            }
        }
        Ok(Self { kind, samples })
    }

    /// Scalar samples.
    pub fn scalar(kind: SampleKind, values: &[f64]) -> Result<Self, DroError> {
        Self::new(kind, values.iter().map(|v| vec![*v]).collect())
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Values of coordinate `k` across samples.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }

    /// Every sample shifted by `delta`.
    pub fn translated(&self, delta: &[f64]) -> Result<Self, DroError> {
        if delta.len() != self.dim() {
            return Err(DroError::Dimension {
                expected: self.dim(),
                got: delta.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .map(|s| s.iter().zip(delta).map(|(a, b)| a + b).collect())
            .collect();
        Self::new(self.kind, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WassersteinBall {
    pub epsilon: f64,
    pub alpha: f64,
}

impl WassersteinBall {
    /// `alpha = 0` is accepted: it asks for full coverage, which is only
    /// attainable when `epsilon = 0`.
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self, DroError> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(DroError::Ball(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(DroError::Ball(format!(
                "alpha must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(Self { epsilon, alpha })
    }

    pub fn target(&self) -> f64 {
        1.0 - self.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustBounds {
    pub kind: SampleKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub certified_prob: f64,
}

impl RobustBounds {
    /// Sum of coordinate widths.
    pub fn width(&self) -> f64 {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum()
    }

    /// Zero-width bounds that certify nothing; used when a constraint class
    /// is deliberately left without an error margin.
    pub fn zero(kind: SampleKind, dim: usize) -> Self {
        Self {
            kind,
            lower: vec![0.0; dim],
            upper: vec![0.0; dim],
            epsilon: 0.0,
            alpha: 0.0,
            certified_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub coverage: f64,
    pub pass: bool,
}

fn check_box(dim: usize, lower: &[f64], upper: &[f64]) -> Result<(), DroError> {
    for v in [lower, upper] {
        if v.len() != dim {
            return Err(DroError::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
    }
    for (k, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l.is_nan() || u.is_nan() || l > u {
            return Err(DroError::Box {
                coord: k,
                lower: *l,
                upper: *u,
            });
        }
    }
    Ok(())
}

/// Exact infimum of `P[xi in [lower, upper]]` over the ball.
///
/// With `epsilon = 0` this is the empirical fraction of samples in the
/// closed box. Otherwise each inside sample can be pushed out at a cost
/// equal to its l-infinity distance to the box boundary, so the adversary
/// spends the budget `N * epsilon` on the cheapest samples first; samples
/// on the boundary cost nothing.
pub fn worst_case_box_probability(
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
    lower: &[f64],
    upper: &[f64],
) -> Result<f64, DroError> {
    check_box(samples.dim(), lower, upper)?;
    let n = samples.len() as f64;
    if ball.epsilon == 0.0 {
        let inside = samples
            .samples()
            .iter()
            .filter(|s| {
                s.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(x, (l, u))| l <= x && x <= u)
            })
            .count();
        return Ok(inside as f64 / n);
    }
    let mut dist: Vec<f64> = samples
        .samples()
        .iter()
        .map(|s| {
            let mut d = f64::INFINITY;
            for (x, (l, u)) in s.iter().zip(lower.iter().zip(upper)) {
                d = d.min(u - x).min(x - l);
            }
            d.max(0.0)
        })
        .collect();
    dist.sort_by(f64::total_cmp);
    Ok(1.0 - moved_mass(&dist, n * ball.epsilon) / n)
}

/// Sample mass (in units of samples) the adversary removes with `budget`,
/// given ascending distances.
fn moved_mass(sorted_dist: &[f64], mut budget: f64) -> f64 {
    let mut moved = 0.0;
    for &d in sorted_dist {
        if d <= 0.0 {
            moved += 1.0;
        } else if budget >= d {
            budget -= d;
            moved += 1.0;
        } else {
            moved += budget / d;
            break;
        }
    }
    moved
}

pub fn validate_bounds(
    bounds: &RobustBounds,
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
) -> Result<Certificate, DroError> {
    let coverage = worst_case_box_probability(samples, ball, &bounds.lower, &bounds.upper)?;
    Ok(Certificate {
        coverage,
        pass: coverage >= ball.target() - COVERAGE_SLACK,
    })
}

/// Widens a nearly-certified box by the smallest power-of-two multiple of
/// `1e-12` that makes it pass. Used to absorb rounding in solver output.
pub(crate) fn certify(
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
    mut lower: Vec<f64>,
    mut upper: Vec<f64>,
) -> Result<RobustBounds, DroError> {
    let target = ball.target() - COVERAGE_SLACK;
    let mut pad = 0.0;
    for _ in 0..16 {
        let lo: Vec<f64> = lower.iter().map(|l| (l - pad).min(0.0)).collect();
        let hi: Vec<f64> = upper.iter().map(|u| (u + pad).max(0.0)).collect();
        let p = worst_case_box_probability(samples, ball, &lo, &hi)?;
        if p >= target {
            lower = lo;
            upper = hi;
            return Ok(RobustBounds {
                kind: samples.kind(),
                lower,
                upper,
                epsilon: ball.epsilon,
                alpha: ball.alpha,
                certified_prob: p,
            });
        }
        pad = if pad == 0.0 { 1e-12 } else { pad * 2.0 };
    }
    Err(DroError::InfeasibleBounds {
        target: ball.target(),
        reason: "solver output could not be certified".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: &[f64]) -> ErrorSampleSet {
        ErrorSampleSet::scalar(SampleKind::Substation, v).unwrap()
    }

    #[test]
    fn empirical_fraction_at_zero_radius() {
        let s = scalar(&[0.1, 0.2, 0.4, -0.5]);
        let ball = WassersteinBall::new(0.0, 0.1).unwrap();
        assert_eq!(
            worst_case_box_probability(&s, &ball, &[0.0], &[0.3]).unwrap(),
            0.5
        );
    }

    #[test]
    fn greedy_transport_example() {
        // Distances to the box boundary: 0.5, 0.9, 0.8, 0.6. Budget 4 * 0.2:
        // the 0.5 sample leaves fully, then half of the 0.6 sample.
        let s = scalar(&[-0.5, 0.1, 0.2, 0.4]);
        let ball = WassersteinBall::new(0.2, 0.1).unwrap();
        let p = worst_case_box_probability(&s, &ball, &[-1.0], &[1.0]).unwrap();
        assert!((p - 0.625).abs() < 1e-15, "{p}");
    }

    #[test]
    fn unbounded_box_keeps_everything() {
        let s = scalar(&[-3.0, 1.0, 7.0]);
        for eps in [0.0, 0.5, 100.0] {
            let ball = WassersteinBall::new(eps, 0.1).unwrap();
            let p = worst_case_box_probability(&s, &ball, &[f64::NEG_INFINITY], &[f64::INFINITY])
                .unwrap();
            assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn inverted_box_is_rejected() {
        let s = scalar(&[0.0]);
        let ball = WassersteinBall::new(0.0, 0.1).unwrap();
        assert!(matches!(
            worst_case_box_probability(&s, &ball, &[1.0], &[0.0]),
            Err(DroError::Box { coord: 0, .. })
        ));
    }

    #[test]
    fn vector_distance_uses_nearest_face() {
        let s = ErrorSampleSet::new(SampleKind::Voltage, vec![vec![0.0, 0.9]]).unwrap();
        let ball = WassersteinBall::new(0.05, 0.5).unwrap();
        // Nearest face is at distance 0.1, so budget 0.05 moves half the mass.
        let p = worst_case_box_probability(&s, &ball, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sample_validation() {
        assert!(ErrorSampleSet::new(SampleKind::Voltage, vec![]).is_err());
        assert!(ErrorSampleSet::new(SampleKind::Voltage, vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(ErrorSampleSet::new(SampleKind::Voltage, vec![vec![f64::NAN]]).is_err());
        assert!(ErrorSampleSet::new(SampleKind::Substation, vec![vec![1.0, 2.0]]).is_err());
        assert!(WassersteinBall::new(-0.1, 0.1).is_err());
        assert!(WassersteinBall::new(0.1, 1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let b = RobustBounds {
            kind: SampleKind::Voltage,
            lower: vec![-0.1],
            upper: vec![0.2],
            epsilon: 0.01,
            alpha: 0.1,
            certified_prob: 0.95,
        };
        let v: serde_json::Value = serde_json::to_value(&b).unwrap();
        assert_eq!(v["kind"], "voltage");
        assert_eq!(v["upper"][0], 0.2);
        let back: RobustBounds = serde_json::from_value(v).unwrap();
        assert_eq!(back, b);
    }
}
