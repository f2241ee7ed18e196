use super::{
    certify, worst_case_box_probability, DroError, ErrorSampleSet, RobustBounds, WassersteinBall,
};

const COUNT_TOL: f64 = 1e-12;

/// Narrowest box containing 0 whose worst-case coverage is at least
/// `1 - alpha`, minimizing the sum of coordinate widths.
///
/// Scalar sample sets are solved exactly. For vectors the search excludes
/// up to `alpha * N` samples greedily, widens the remaining hull uniformly
/// until it certifies, then shrinks each face in turn while coverage holds.
pub fn solve_bounds(
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
) -> Result<RobustBounds, DroError> {
    if ball.epsilon > 0.0 && ball.alpha == 0.0 {
        return Err(DroError::InfeasibleBounds {
            target: 1.0,
            reason: "with epsilon > 0 every finite box loses some mass to the adversary".into(),
        });
    }
    let (lower, upper) = if samples.dim() == 1 {
        let (lo, hi) = scalar_exact(&samples.coordinate(0), ball)?;
        (vec![lo], vec![hi])
    } else {
        vector_search(samples, ball)?
    };
    certify(samples, ball, lower, upper)
}

/// Largest number of samples that may sit outside (or on the boundary of)
/// the box.
fn max_excluded(n: usize, ball: &WassersteinBall) -> usize {
    let an = ball.alpha * n as f64;
    let j = if ball.epsilon == 0.0 {
        (an + COUNT_TOL).floor()
    } else {
        (an - COUNT_TOL).ceil() - 1.0
    };
    (j.max(0.0) as usize).min(n.saturating_sub(1))
}

/// Fractional sum of the first `count` entries.
fn prefix_sum(v: &[f64], count: f64) -> f64 {
    let whole = count.floor() as usize;
    let mut s: f64 = v[..whole.min(v.len())].iter().sum();
    let frac = count - whole as f64;
    if frac > 0.0 && whole < v.len() {
        s += frac * v[whole];
    }
    s
}

pub(crate) fn scalar_exact(values: &[f64], ball: &WassersteinBall) -> Result<(f64, f64), DroError> {
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let an = ball.alpha * n as f64;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |lo: f64, hi: f64| {
        let w = hi - lo;
        if best.map_or(true, |(bw, _, _)| w < bw) {
            best = Some((w, lo, hi));
        }
    };
    for p in 0..n {
        for q in p..n {
            let o = (p + n - 1 - q) as f64;
            if ball.epsilon == 0.0 {
                if o <= an + COUNT_TOL {
                    consider(x[p].min(0.0), x[q].max(0.0));
                }
                continue;
            }
            let k = an - o;
            if k <= COUNT_TOL {
                continue;
            }
            let inside = &x[p..=q];
            let (a, b) = range_lp(inside, k, n as f64 * ball.epsilon);
            consider(-a, b);
        }
    }
    let (_, lo, hi) = best.ok_or_else(|| DroError::InfeasibleBounds {
        target: ball.target(),
        reason: "no sample subset satisfies the coverage count".into(),
    })?;
    Ok((lo, hi))
}

/// For sorted inside samples, the smallest `A + b` (box `[-A, b]`, both
/// non-negative) such that the `k` cheapest samples cost at least `budget`
/// to push out.
///
/// The `k` cheapest samples are a prefix measured from the left face plus a
/// suffix measured from the right face; requiring every split `lambda` to
/// cost at least `budget` gives the lines
/// `lambda * A + (k - lambda) * b >= budget - PL(lambda) + PR(k - lambda)`,
/// which only need checking where the prefix sums change slope.
fn range_lp(inside: &[f64], k: f64, budget: f64) -> (f64, f64) {
    let rev: Vec<f64> = inside.iter().rev().copied().collect();
    let rhs = |lambda: f64| budget - prefix_sum(inside, lambda) + prefix_sum(&rev, k - lambda);
    let mut lambdas = vec![0.0];
    let mut i = 1.0;
    while i < k {
        lambdas.push(i);
        lambdas.push(k - i);
        i += 1.0;
    }
    let a0 = (-inside[0]).max(0.0);
    let b0 = inside[inside.len() - 1].max(0.0);
    let a_lo = a0.max(rhs(k) / k);
    // Lines b >= c - m A.
    let mut lines: Vec<(f64, f64)> = vec![(b0, 0.0)];
    for &l in &lambdas {
        if l < k {
            let span = k - l;
            lines.push((rhs(l) / span, l / span));
        }
    }
    let (steep, flat): (Vec<(f64, f64)>, Vec<(f64, f64)>) = lines.iter().partition(|l| l.1 > 1.0);
    // A + max_j (c_j - m_j A) decreases while a steep line is active.
    let mut a_cross = f64::NEG_INFINITY;
    for &(ci, mi) in &steep {
        let mut first = f64::INFINITY;
        for &(cj, mj) in &flat {
            first = first.min((ci - cj) / (mi - mj));
        }
        a_cross = a_cross.max(first);
    }
    let a = a_lo.max(a_cross);
    let b = lines
        .iter()
        .map(|(c, m)| c - m * a)
        .fold(f64::NEG_INFINITY, f64::max);
    (a, b.max(0.0))
}

fn hull(samples: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0f64; dim];
    let mut hi = vec![0.0f64; dim];
    for s in samples {
        for k in 0..dim {
            lo[k] = lo[k].min(s[k]);
            hi[k] = hi[k].max(s[k]);
        }
    }
    (lo, hi)
}

fn vector_search(
    set: &ErrorSampleSet,
    ball: &WassersteinBall,
) -> Result<(Vec<f64>, Vec<f64>), DroError> {
    let dim = set.dim();
    let n = set.len();
    let max_j = max_excluded(n, ball);
    let mut keep: Vec<bool> = vec![true; n];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for j in 0..=max_j {
        if j > 0 {
            let Some(drop) = greedy_drop(set, &keep) else {
                break;
            };
            keep[drop] = false;
        }
        let kept: Vec<&Vec<f64>> = set
            .samples()
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(s, _)| s)
            .collect();
        let (mut lo, mut hi) = hull(&kept, dim);
        if ball.epsilon > 0.0 {
            widen_uniformly(set, ball, &mut lo, &mut hi)?;
            polish(set, ball, &mut lo, &mut hi)?;
        }
        let w: f64 = hi.iter().zip(&lo).map(|(h, l)| h - l).sum();
        if best.as_ref().map_or(true, |(bw, _, _)| w < *bw) {
            best = Some((w, lo, hi));
        }
    }
    let (_, lo, hi) = best.expect("j = 0 always yields a candidate");
    Ok((lo, hi))
}

/// Index of the kept sample whose removal shrinks the hull width most.
fn greedy_drop(set: &ErrorSampleSet, keep: &[bool]) -> Option<usize> {
    let dim = set.dim();
    let kept: Vec<usize> = (0..set.len()).filter(|&i| keep[i]).collect();
    if kept.len() <= 1 {
        return None;
    }
    // Two smallest and two largest per coordinate, with 0 always present.
    let mut best_gain = f64::NEG_INFINITY;
    let mut best_idx = None;
    let mut lo1 = vec![(0.0f64, usize::MAX); dim];
    let mut lo2 = vec![0.0f64; dim];
    let mut hi1 = vec![(0.0f64, usize::MAX); dim];
    let mut hi2 = vec![0.0f64; dim];
    for &i in &kept {
        let s = &set.samples()[i];
        for k in 0..dim {
            if s[k] < lo1[k].0 {
                lo2[k] = lo1[k].0;
                lo1[k] = (s[k], i);
            } else if s[k] < lo2[k] {
                lo2[k] = s[k];
            }
            if s[k] > hi1[k].0 {
                hi2[k] = hi1[k].0;
                hi1[k] = (s[k], i);
            } else if s[k] > hi2[k] {
                hi2[k] = s[k];
            }
        }
    }
    for &i in &kept {
        let mut gain = 0.0;
        for k in 0..dim {
            if lo1[k].1 == i {
                gain += lo2[k] - lo1[k].0;
            }
            if hi1[k].1 == i {
                gain += hi1[k].0 - hi2[k];
            }
        }
        if gain > best_gain {
            best_gain = gain;
            best_idx = Some(i);
        }
    }
    best_idx
}

fn passes(
    set: &ErrorSampleSet,
    ball: &WassersteinBall,
    lo: &[f64],
    hi: &[f64],
) -> Result<bool, DroError> {
    Ok(worst_case_box_probability(set, ball, lo, hi)? >= ball.target())
}

fn widen_uniformly(
    set: &ErrorSampleSet,
    ball: &WassersteinBall,
    lo: &mut [f64],
    hi: &mut [f64],
) -> Result<(), DroError> {
    let shifted = |t: f64| -> (Vec<f64>, Vec<f64>) {
        (
            lo.iter().map(|l| l - t).collect(),
            hi.iter().map(|h| h + t).collect(),
        )
    };
    let mut upper_t = ball.epsilon / ball.alpha.max(1e-12);
    let mut tries = 0;
    loop {
        let (l, h) = shifted(upper_t);
        if passes(set, ball, &l, &h)? {
            break;
        }
        upper_t *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(DroError::InfeasibleBounds {
                target: ball.target(),
                reason: "uniform widening did not reach the target".into(),
            });
        }
    }
    let mut lower_t = 0.0;
    for _ in 0..200 {
        if upper_t - lower_t <= 1e-14 * (1.0 + upper_t) {
            break;
        }
        let mid = 0.5 * (lower_t + upper_t);
        let (l, h) = shifted(mid);
        if passes(set, ball, &l, &h)? {
            upper_t = mid;
        } else {
            lower_t = mid;
        }
    }
    let (l, h) = shifted(upper_t);
    lo.copy_from_slice(&l);
    hi.copy_from_slice(&h);
    Ok(())
}

/// Coordinate descent: move each face inwards as far as certification
/// allows. Coverage is monotone in every single face, so each move is a
/// one-dimensional bisection.
fn polish(
    set: &ErrorSampleSet,
    ball: &WassersteinBall,
    lo: &mut [f64],
    hi: &mut [f64],
) -> Result<(), DroError> {
    let dim = lo.len();
    for _sweep in 0..20 {
        let before: f64 = hi.iter().zip(lo.iter()).map(|(h, l)| h - l).sum();
        for k in 0..dim {
            for upper_side in [true, false] {
                let current = if upper_side { hi[k] } else { lo[k] };
                let (mut feasible, mut infeasible) = (current, 0.0);
                let probe = |v: f64, lo: &mut [f64], hi: &mut [f64]| -> Result<bool, DroError> {
                    if upper_side {
                        hi[k] = v;
                    } else {
                        lo[k] = v;
                    }
                    passes(set, ball, lo, hi)
                };
                if probe(0.0, lo, hi)? {
                    feasible = 0.0;
                } else {
                    for _ in 0..100 {
                        if (feasible - infeasible).abs() <= 1e-14 * (1.0 + feasible.abs()) {
                            break;
                        }
                        let mid = 0.5 * (feasible + infeasible);
                        if probe(mid, lo, hi)? {
                            feasible = mid;
                        } else {
                            infeasible = mid;
                        }
                    }
                }
                if upper_side {
                    hi[k] = feasible;
                } else {
                    lo[k] = feasible;
                }
            }
        }
        let after: f64 = hi.iter().zip(lo.iter()).map(|(h, l)| h - l).sum();
        if before - after <= 1e-12 * (1.0 + after) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::{validate_bounds, SampleKind};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn scalar(v: &[f64]) -> ErrorSampleSet {
        ErrorSampleSet::scalar(SampleKind::Substation, v).unwrap()
    }

    #[test]
    fn full_coverage_spans_all_samples() {
        let s = scalar(&[-0.2, 0.1, 0.3, 0.6]);
        let b = solve_bounds(&s, &WassersteinBall::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (-0.2, 0.6));
    }

    #[test]
    fn one_sample_may_be_dropped() {
        let s = scalar(&[-0.2, 0.1, 0.3, 0.6]);
        let ball = WassersteinBall::new(0.0, 0.25).unwrap();
        let b = solve_bounds(&s, &ball).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (-0.2, 0.3));
        assert!((b.width() - 0.5).abs() < 1e-15);
        assert!(validate_bounds(&b, &s, &ball).unwrap().pass);

        let shrunk = RobustBounds {
            lower: vec![-0.1],
            upper: vec![0.15],
            ..b
        };
        let cert = validate_bounds(&shrunk, &s, &ball).unwrap();
        assert!(!cert.pass && cert.coverage < 0.75);
    }

    #[test]
    fn positive_radius_costs_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..50).map(|_| normal.sample(&mut rng)).collect();
        let s = scalar(&v);
        let w0 = solve_bounds(&s, &WassersteinBall::new(0.0, 0.1).unwrap())
            .unwrap()
            .width();
        let w1 = solve_bounds(&s, &WassersteinBall::new(0.01, 0.1).unwrap())
            .unwrap()
            .width();
        assert!(w1 > w0, "{w1} <= {w0}");
    }

    #[test]
    fn full_coverage_with_radius_is_infeasible() {
        let s = scalar(&[0.0, 1.0]);
        let err = solve_bounds(&s, &WassersteinBall::new(0.1, 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, DroError::InfeasibleBounds { .. }));
    }

    /// Brute force over a fine grid of boxes for a tiny scalar instance.
    #[test]
    fn scalar_exact_matches_grid_search() {
        let s = scalar(&[-0.3, -0.1, 0.05, 0.2, 0.45]);
        let ball = WassersteinBall::new(0.02, 0.3).unwrap();
        let b = solve_bounds(&s, &ball).unwrap();
        let steps = 400;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            let lo = -1.0 * i as f64 / steps as f64;
            // Smallest passing upper face for this lower face by bisection.
            let (mut a, mut z) = (0.0, 2.0);
            if worst_case_box_probability(&s, &ball, &[lo], &[z]).unwrap() < ball.target() {
                continue;
            }
            for _ in 0..80 {
                let m = 0.5 * (a + z);
                if worst_case_box_probability(&s, &ball, &[lo], &[m]).unwrap() >= ball.target() {
                    z = m;
                } else {
                    a = m;
                }
            }
            best = best.min(z - lo);
        }
        assert!(b.width() <= best + 1e-12, "{} vs grid {best}", b.width());
        assert!(b.width() >= best - 1.0 / steps as f64 - 1e-9);
    }

    #[test]
    fn vector_bounds_certify() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let samples: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let set = ErrorSampleSet::new(SampleKind::Voltage, samples).unwrap();
        for (eps, alpha) in [(0.0, 0.1), (0.001, 0.1), (0.0005, 0.2)] {
            let ball = WassersteinBall::new(eps, alpha).unwrap();
            let b = solve_bounds(&set, &ball).unwrap();
            assert!(validate_bounds(&b, &set, &ball).unwrap().pass);
            assert!(b.lower.iter().all(|l| *l <= 0.0) && b.upper.iter().all(|u| *u >= 0.0));
        }
    }
}
