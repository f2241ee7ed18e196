//! Big-M mixed-integer formulation of the bound problem, solved by
//! best-bound branch-and-bound over the sample-inclusion binaries.
//!
//! ```text
//! min  sum_k (ub_k - lb_k)
//! s.t. lb_k <= 0 <= ub_k
//!      alpha*gamma - eps*v >= (1/N) sum_s z_s
//!      gamma - z_s <= r_s
//!      r_s <= ub_k - xi_ks + M_s (1 - y_s)      for every k
//!      r_s <= xi_ks - lb_k + M_s (1 - y_s)      for every k
//!      r_s <= M_s y_s
//!      v >= 1, gamma, r_s, z_s >= 0, y_s in {0, 1}
//! ```
//!
//! At `eps = 0` the constraint on `gamma` is met by `gamma = 0` whatever the
//! box, so that case uses the sample-counting form instead:
//! `sum_s y_s >= (1 - alpha) N` with `y_s = 1` forcing sample `s` inside.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{certify, DroError, ErrorSampleSet, RobustBounds, WassersteinBall};
use crate::conic::{self, ConicProgram, SolveStatus, SolverSettings};

pub const DEFAULT_SIZE_GUARD: usize = 20;

const INT_TOL: f64 = 1e-7;

pub fn solve_bounds_mip(
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
) -> Result<RobustBounds, DroError> {
    solve_bounds_mip_with(samples, ball, DEFAULT_SIZE_GUARD)
}

pub fn solve_bounds_mip_with(
    samples: &ErrorSampleSet,
    ball: &WassersteinBall,
    size_guard: usize,
) -> Result<RobustBounds, DroError> {
    let n = samples.len();
    if n > size_guard {
        return Err(DroError::SizeGuard {
            n,
            guard: size_guard,
        });
    }
    if ball.epsilon > 0.0 && ball.alpha == 0.0 {
        return Err(DroError::InfeasibleBounds {
            target: 1.0,
            reason: "with epsilon > 0 every finite box loses some mass to the adversary".into(),
        });
    }
    let model = Model::new(samples, ball);
    let mut heap = BinaryHeap::new();
    let root = vec![None; n];
    let mut incumbent: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    if let Some(node) = model.relax(root, Vec::new())? {
        heap.push(node);
    }
    let mut explored = 0usize;
    while let Some(node) = heap.pop() {
        explored += 1;
        if let Some((best, _, _)) = &incumbent {
            if node.bound >= *best - 1e-12 {
                continue;
            }
        }
        match node.branch_var {
            None => {
                let better = incumbent.as_ref().map_or(true, |(b, _, _)| node.bound < *b);
                if better {
                    incumbent = Some((node.bound, node.lower.clone(), node.upper.clone()));
                }
            }
            Some(s) => {
                for value in [false, true] {
                    let mut fixed = node.fixed.clone();
                    fixed[s] = Some(value);
                    let mut path = node.path.clone();
                    path.push(value as u8);
                    if let Some(child) = model.relax(fixed, path)? {
                        heap.push(child);
                    }
                }
            }
        }
    }
    log::debug!("branch-and-bound explored {explored} nodes");
    let (_, lower, upper) = incumbent.ok_or_else(|| DroError::InfeasibleBounds {
        target: ball.target(),
        reason: "every branch is infeasible".into(),
    })?;
    certify(samples, ball, lower, upper)
}

struct Node {
    bound: f64,
    /// Branch decisions from the root; orders ties lexicographically.
    path: Vec<u8>,
    fixed: Vec<Option<bool>>,
    branch_var: Option<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: the smallest bound, then the smallest path, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.path.cmp(&self.path))
    }
}

struct Model {
    base: ConicProgram,
    y: Vec<usize>,
    lb: Vec<usize>,
    ub: Vec<usize>,
    settings: SolverSettings,
}

impl Model {
    fn new(set: &ErrorSampleSet, ball: &WassersteinBall) -> Self {
        let n = set.len();
        let dim = set.dim();
        let n_f = n as f64;
        let max_abs = set
            .samples()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let mut range = 0.0f64;
        for k in 0..dim {
            let c = set.coordinate(k);
            let lo = c.iter().copied().fold(0.0, f64::min);
            let hi = c.iter().copied().fold(0.0, f64::max);
            range = range.max(hi - lo);
        }
        let spread = if ball.alpha > 0.0 {
            2.0 * ball.epsilon / ball.alpha
        } else {
            0.0
        };
        let big_m = (2.0 * max_abs + 1.0).max(range + spread + 1.0);

        let mut p = ConicProgram::new(0);
        // Non-negative a_k = -lb_k and b_k = ub_k.
        let a = p.add_vars(dim);
        let b = p.add_vars(dim);
        let y = p.add_vars(n);
        let mut nonneg: Vec<usize> = Vec::new();
        nonneg.extend(&a);
        nonneg.extend(&b);
        nonneg.extend(&y);
        for k in 0..dim {
            p.set_cost(a[k], 1.0);
            p.set_cost(b[k], 1.0);
        }
        let slack = |p: &mut ConicProgram, nonneg: &mut Vec<usize>| {
            let w = p.add_var();
            nonneg.push(w);
            w
        };
        for &ys in &y {
            let w = slack(&mut p, &mut nonneg);
            p.add_equality(&[(ys, 1.0), (w, 1.0)], 1.0);
        }
        if ball.epsilon == 0.0 {
            // sum y >= (1 - alpha) N.
            let need = ((1.0 - ball.alpha) * n_f - 1e-12).ceil();
            let w = slack(&mut p, &mut nonneg);
            let mut row: Vec<(usize, f64)> = y.iter().map(|&v| (v, 1.0)).collect();
            row.push((w, -1.0));
            p.add_equality(&row, need);
            for (s, xs) in set.samples().iter().enumerate() {
                for k in 0..dim {
                    // b_k >= x - M (1 - y)  ->  b_k - M y - w = x - M.
                    let w = slack(&mut p, &mut nonneg);
                    p.add_equality(&[(b[k], 1.0), (y[s], -big_m), (w, -1.0)], xs[k] - big_m);
                    // a_k >= -x - M (1 - y).
                    let w = slack(&mut p, &mut nonneg);
                    p.add_equality(&[(a[k], 1.0), (y[s], -big_m), (w, -1.0)], -xs[k] - big_m);
                }
            }
        } else {
            let gamma = p.add_var();
            let v = p.add_var();
            let r = p.add_vars(n);
            let z = p.add_vars(n);
            nonneg.push(gamma);
            nonneg.extend(&r);
            nonneg.extend(&z);
            // v >= 1.
            let w = slack(&mut p, &mut nonneg);
            p.add_equality(&[(v, 1.0), (w, -1.0)], 1.0);
            // alpha gamma - eps v - (1/N) sum z >= 0.
            let w = slack(&mut p, &mut nonneg);
            let mut row = vec![(gamma, ball.alpha), (v, -ball.epsilon), (w, -1.0)];
            row.extend(z.iter().map(|&zs| (zs, -1.0 / n_f)));
            p.add_equality(&row, 0.0);
            for (s, xs) in set.samples().iter().enumerate() {
                // gamma - z_s - r_s <= 0.
                let w = slack(&mut p, &mut nonneg);
                p.add_equality(&[(gamma, 1.0), (z[s], -1.0), (r[s], -1.0), (w, 1.0)], 0.0);
                for k in 0..dim {
                    // r_s - b_k + M y_s <= M - x.
                    let w = slack(&mut p, &mut nonneg);
                    p.add_equality(
                        &[(r[s], 1.0), (b[k], -1.0), (y[s], big_m), (w, 1.0)],
                        big_m - xs[k],
                    );
                    // r_s - a_k + M y_s <= M + x.
                    let w = slack(&mut p, &mut nonneg);
                    p.add_equality(
                        &[(r[s], 1.0), (a[k], -1.0), (y[s], big_m), (w, 1.0)],
                        big_m + xs[k],
                    );
                }
                // r_s <= M y_s.
                let w = slack(&mut p, &mut nonneg);
                p.add_equality(&[(r[s], 1.0), (y[s], -big_m), (w, 1.0)], 0.0);
            }
        }
        p.add_nonneg(nonneg);
        Self {
            base: p,
            y,
            lb: a,
            ub: b,
            settings: SolverSettings {
                tol: 1e-11,
                max_iter: 200,
                ..Default::default()
            },
        }
    }

    /// Solves the relaxation with `fixed` binaries; `None` if infeasible.
    fn relax(&self, fixed: Vec<Option<bool>>, path: Vec<u8>) -> Result<Option<Node>, DroError> {
        let mut p = self.base.clone();
        for (s, f) in fixed.iter().enumerate() {
            if let Some(v) = f {
                p.fix(self.y[s], if *v { 1.0 } else { 0.0 });
            }
        }
        let sol = conic::solve_with(&p, &self.settings)?;
        match sol.status {
            SolveStatus::Optimal | SolveStatus::AlmostOptimal => {}
            SolveStatus::Infeasible => return Ok(None),
            other => {
                return Err(DroError::InfeasibleBounds {
                    target: f64::NAN,
                    reason: format!("LP relaxation ended with status {other:?}"),
                })
            }
        }
        let mut branch_var = None;
        let mut most = INT_TOL;
        for (s, &yv) in self.y.iter().enumerate() {
            let frac = (sol.z[yv] - sol.z[yv].round()).abs();
            if fixed[s].is_none() && frac > most {
                most = frac;
                branch_var = Some(s);
            }
        }
        Ok(Some(Node {
            bound: sol.objective,
            path,
            fixed,
            branch_var,
            lower: self.lb.iter().map(|&i| -sol.z[i].max(0.0)).collect(),
            upper: self.ub.iter().map(|&i| sol.z[i].max(0.0)).collect(),
        }))
    }
}
