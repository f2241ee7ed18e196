//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector.
//!
//! Internally the program is held as
//!
//! ```text
//! minimize c'x   s.t.  A x = b,  G x + s = 0,  s in K,   G = -E
//! ```
//!
//! where `E` selects the cone variables, so the slack `s` is a copy of
//! `x` on cone indices and the cone dual `z` is the vector reported as `s`
//! by [`super::ConicSolution`].

use super::cones::{self, Block, Kind, Scaling};
use super::ldl::{sym_matvec, Factor, Symbolic};
use super::presolve::{presolve, Presolved};
use super::{
    kkt_residuals, Cone, ConicError, ConicProgram, ConicSolution, KktResiduals, SolveStatus,
};

/// Iterations without a new best residual before the run is abandoned.
const NO_PROGRESS_LIMIT: usize = 10;
/// Relative residual above which a refined KKT solve counts as failed.
const KKT_SOLVE_TOL: f64 = 1e-10;
const MAX_STATIC_REG: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Absolute tolerance on primal residual, dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Tolerance on normalized infeasibility certificates.
    pub infeas_tol: f64,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
    pub static_reg: f64,
    /// Pivots smaller than this (or of the wrong sign) are replaced by
    /// `dynamic_delta` with the expected sign.
    pub dynamic_eps: f64,
    pub dynamic_delta: f64,
    pub refine_steps: usize,
    /// Residual level at which a stalled run still reports its best point
    /// as [`SolveStatus::AlmostOptimal`].
    pub reduced_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: super::DEFAULT_TOL,
            max_iter: super::DEFAULT_MAX_ITER,
            infeas_tol: 1e-8,
            step_fraction: 0.99,
            static_reg: 1e-8,
            dynamic_eps: 1e-13,
            dynamic_delta: 1e-7,
            refine_steps: 20,
            reduced_tol: 1e-8,
        }
    }
}

/// Solves `prog` to absolute KKT tolerance `tol`.
pub fn solve(prog: &ConicProgram, tol: f64, max_iter: usize) -> Result<ConicSolution, ConicError> {
    solve_with(
        prog,
        &SolverSettings {
            tol,
            max_iter,
            ..Default::default()
        },
    )
}

pub fn solve_with(
    prog: &ConicProgram,
    settings: &SolverSettings,
) -> Result<ConicSolution, ConicError> {
    prog.validate()?;
    let reduced = match presolve(prog) {
        Presolved::Infeasible(msg) => {
            log::debug!("presolve: {msg}");
            let mut sol = ConicSolution {
                status: SolveStatus::Infeasible,
                z: vec![0.0; prog.n_vars()],
                y: vec![0.0; prog.n_equalities()],
                s: vec![0.0; prog.n_vars()],
                kkt: KktResiduals::default(),
                objective: f64::INFINITY,
                iterations: 0,
            };
            sol.kkt = kkt_residuals(prog, &sol)?;
            return Ok(sol);
        }
        Presolved::Reduced(r) => r,
    };
    if reduced.dropped_rows > 0 {
        log::debug!(
            "presolve dropped {} redundant equality rows",
            reduced.dropped_rows
        );
    }
    let raw = Hsde::new(&reduced.prog, settings).run()?;
    let (z, y, s) = reduced.postsolve(prog, &raw.x, &raw.y, &raw.s_var);
    let mut sol = ConicSolution {
        status: raw.status,
        objective: match raw.status {
            SolveStatus::Infeasible => f64::INFINITY,
            SolveStatus::Unbounded => f64::NEG_INFINITY,
            _ => prog.objective_value(&z),
        },
        z,
        y,
        s,
        kkt: KktResiduals::default(),
        iterations: raw.iterations,
    };
    sol.kkt = kkt_residuals(prog, &sol)?;
    // Postsolve round-off can push a point that met `tol` on the reduced
    // program just past it on the original.
    if sol.status == SolveStatus::Optimal
        && sol.kkt.max() > settings.tol
        && sol.kkt.max() <= settings.reduced_tol
    {
        sol.status = SolveStatus::AlmostOptimal;
    }
    let limit = match sol.status {
        SolveStatus::Optimal => settings.tol,
        SolveStatus::AlmostOptimal => settings.tol.max(settings.reduced_tol),
        _ => f64::INFINITY,
    };
    if sol.kkt.max() > limit {
        return Err(ConicError::NumericalFailure {
            iteration: raw.iterations,
            reason: format!(
                "returned point fails the KKT re-check ({:.2e} > {limit:.2e})",
                sol.kkt.max(),
            ),
            pres: sol.kkt.primal.max(sol.kkt.cone),
            dres: sol.kkt.dual,
            gap: sol.kkt.gap,
        });
    }
    Ok(sol)
}

struct RawSolution {
    status: SolveStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    s_var: Vec<f64>,
    iterations: usize,
}

struct Hsde<'a> {
    st: &'a SolverSettings,
    n: usize,
    p: usize,
    m: usize,
    rows: &'a [Vec<(usize, f64)>],
    b: &'a [f64],
    c: &'a [f64],
    blocks: Vec<Block>,
    /// Slack position -> variable.
    cone_var: Vec<usize>,
    degree: f64,
    sym: Symbolic,
    /// Off-diagonal KKT positions of the SOC blocks of `-W'W`.
    soc_pairs: Vec<(usize, usize)>,
}

struct Kkt {
    vals: Vec<(usize, usize, f64)>,
    factor: Factor,
    scal: Vec<Scaling>,
}

impl<'a> Hsde<'a> {
    fn new(prog: &'a ConicProgram, st: &'a SolverSettings) -> Self {
        let n = prog.n_vars();
        let p = prog.n_equalities();
        let mut blocks = Vec::new();
        let mut cone_var = Vec::new();
        let mut soc_pairs = Vec::new();
        for c in prog.cones() {
            let ix = c.indices();
            let offset = cone_var.len();
            let kind = match c {
                Cone::Nonneg(_) => Kind::Nonneg,
                Cone::Soc(_) => {
                    let base = n + p + offset;
                    for a in 0..ix.len() {
                        for b in a + 1..ix.len() {
                            soc_pairs.push((base + a, base + b));
                        }
                    }
                    Kind::Soc
                }
            };
            blocks.push(Block {
                kind,
                offset,
                dim: ix.len(),
            });
            cone_var.extend_from_slice(ix);
        }
        let m = cone_var.len();
        let degree = blocks.iter().map(Block::degree).sum::<usize>() as f64;

        let mut pattern: Vec<(usize, usize)> = (0..n + p + m).map(|i| (i, i)).collect();
        pattern.extend(soc_pairs.iter().copied());
        for (i, row) in prog.rows().iter().enumerate() {
            pattern.extend(row.iter().map(|&(j, _)| (n + i, j)));
        }
        pattern.extend(cone_var.iter().enumerate().map(|(k, &j)| (n + p + k, j)));
        let sym = Symbolic::analyse(n + p + m, &pattern);
        Self {
            st,
            n,
            p,
            m,
            rows: prog.rows(),
            b: prog.rhs(),
            c: prog.objective(),
            blocks,
            cone_var,
            degree,
            sym,
            soc_pairs,
        }
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, yi) in self.rows.iter().zip(y) {
            for &(j, a) in row {
                out[j] += a * yi;
            }
        }
        out
    }

    fn e_mul(&self, x: &[f64]) -> Vec<f64> {
        self.cone_var.iter().map(|&j| x[j]).collect()
    }

    fn et_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &j) in self.cone_var.iter().enumerate() {
            out[j] += z[k];
        }
        out
    }

    /// Assembles and factors the augmented system
    /// `[[0, A', G'], [A, 0, 0], [G, 0, -W'W]]` with `G = -E`.
    fn assemble(&self, scal: Vec<Scaling>, reg: f64) -> Option<Kkt> {
        let (n, p, m) = (self.n, self.p, self.m);
        let dim = n + p + m;
        let zo = n + p;
        let mut vals = Vec::with_capacity(dim + self.soc_pairs.len() + 2 * m);
        for j in 0..n + p {
            vals.push((j, j, 0.0));
        }
        let mut pairs = self.soc_pairs.iter();
        for (blk, sc) in self.blocks.iter().zip(&scal) {
            let base = zo + blk.offset;
            match sc {
                Scaling::Nonneg(d) => {
                    for (k, di) in d.iter().enumerate() {
                        vals.push((base + k, base + k, -di * di));
                    }
                }
                Scaling::Soc { eta, w } => {
                    let dim = w.len();
                    let mat = cones::soc_w_sq(*eta, w, false);
                    for a in 0..dim {
                        vals.push((base + a, base + a, -mat[a * dim + a]));
                        for b in a + 1..dim {
                            let &(i, j) =
                                pairs.next().expect("SOC pattern matches the cone blocks");
                            vals.push((i, j, -0.5 * (mat[a * dim + b] + mat[b * dim + a])));
                        }
                    }
                }
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                vals.push((n + i, j, a));
            }
        }
        for (k, &j) in self.cone_var.iter().enumerate() {
            vals.push((zo + k, j, -1.0));
        }
        if vals.iter().any(|v| !v.2.is_finite()) {
            return None;
        }
        let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let mut reg_vals = vals.clone();
        reg_vals.extend(signs.iter().enumerate().map(|(i, s)| (i, i, s * reg)));
        let factor = self.sym.factor(&reg_vals, &signs, self.st.dynamic_eps, self.st.dynamic_delta);
        if factor.bumped > 0 {
            log::trace!("{} KKT pivots regularized", factor.bumped);
        }
        Some(Kkt { vals, factor, scal })
    }

    /// Returns the solution and its residual relative to `1 + |rhs|`.
    fn refine_solve(&self, kkt: &Kkt, rhs: &[f64]) -> (Vec<f64>, f64) {
        let dim = self.n + self.p + self.m;
        let mut x = rhs.to_vec();
        self.sym.solve(&kkt.factor, &mut x);
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        let target = 1e-15 * (1.0 + norm(rhs));
        let residual = |x: &[f64]| {
            let kx = sym_matvec(dim, &kkt.vals, x);
            rhs.iter()
                .zip(&kx)
                .map(|(r, k)| r - k)
                .collect::<Vec<f64>>()
        };
        let mut r = residual(&x);
        let mut rn = norm(&r);
        for _ in 0..self.st.refine_steps {
            if rn <= target {
                break;
            }
            let mut d = r.clone();
            self.sym.solve(&kkt.factor, &mut d);
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let rc = residual(&cand);
            let rcn = norm(&rc);
            if !(rcn < rn) {
                break;
            }
            x = cand;
            r = rc;
            rn = rcn;
        }
        (x, rn / (1.0 + norm(rhs)))
    }

    /// Solves `[0 A' G'; A 0 0; G 0 -W'W] (dx, dy, dz) = (rx, ry, rz)`.
    fn solve_kkt(
        &self,
        kkt: &Kkt,
        rx: &[f64],
        ry: &[f64],
        rz: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        self.solve_kkt_checked(kkt, rx, ry, rz).0
    }

    fn solve_kkt_checked(
        &self,
        kkt: &Kkt,
        rx: &[f64],
        ry: &[f64],
        rz: &[f64],
    ) -> ((Vec<f64>, Vec<f64>, Vec<f64>), f64) {
        let mut rhs = Vec::with_capacity(self.n + self.p + self.m);
        rhs.extend_from_slice(rx);
        rhs.extend_from_slice(ry);
        rhs.extend_from_slice(rz);
        let (mut sol, residual) = self.refine_solve(kkt, &rhs);
        let dz = sol.split_off(self.n + self.p);
        let dy = sol.split_off(self.n);
        ((sol, dy, dz), residual)
    }

    fn identity_scaling(&self) -> Vec<Scaling> {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                Kind::Nonneg => Scaling::Nonneg(vec![1.0; b.dim]),
                Kind::Soc => {
                    let mut w = vec![0.0; b.dim];
                    w[0] = 1.0;
                    Scaling::Soc { eta: 1.0, w }
                }
            })
            .collect()
    }

    fn failure(&self, iteration: usize, reason: &str, res: (f64, f64, f64)) -> ConicError {
        ConicError::NumericalFailure {
            iteration,
            reason: reason.into(),
            pres: res.0,
            dres: res.1,
            gap: res.2,
        }
    }

    /// Runs the iteration; if it breaks down or hits the iteration limit,
    /// falls back to the best iterate when that one is within `reduced_tol`.
    fn run(&self) -> Result<RawSolution, ConicError> {
        let mut best = None;
        let out = self.iterate(&mut best);
        let stalled = match &out {
            Err(ConicError::NumericalFailure { .. }) => true,
            Ok(raw) => raw.status == SolveStatus::MaxIter,
            Err(_) => false,
        };
        match best {
            Some((res, raw)) if stalled && res <= self.st.tol.max(self.st.reduced_tol) => {
                log::debug!("stalled; returning best iterate (residual {res:.2e})");
                Ok(raw)
            }
            _ => out,
        }
    }

    fn iterate(&self, best: &mut Option<(f64, RawSolution)>) -> Result<RawSolution, ConicError> {
        let (n, p, m) = (self.n, self.p, self.m);
        let e = cones::identity_element(&self.blocks, m);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let inf = |a: &[f64]| a.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));

        let kkt = self.assemble(self.identity_scaling(), self.st.static_reg).ok_or_else(|| {
            self.failure(0, "non-finite data in the initial system", (0.0, 0.0, 0.0))
        })?;
        let zeros_m = vec![0.0; m];
        let zeros_p = vec![0.0; p];
        let (mut x, _, zp) = self.solve_kkt(&kkt, &vec![0.0; n], self.b, &zeros_m);
        let mut s: Vec<f64> = zp.iter().map(|v| -v).collect();
        let a_p = cones::min_shift(&self.blocks, &s);
        if m > 0 && a_p >= 0.0 {
            s.iter_mut()
                .zip(&e)
                .for_each(|(si, ei)| *si += (1.0 + a_p) * ei);
        }
        let neg_c: Vec<f64> = self.c.iter().map(|v| -v).collect();
        let (_, mut y, mut z) = self.solve_kkt(&kkt, &neg_c, &zeros_p, &zeros_m);
        let a_d = cones::min_shift(&self.blocks, &z);
        if m > 0 && a_d >= 0.0 {
            z.iter_mut()
                .zip(&e)
                .for_each(|(zi, ei)| *zi += (1.0 + a_d) * ei);
        }
        let mut tau = 1.0;
        let mut kappa = 1.0;
        let mut stalls = 0;
        let mut best_iter = 0;
        let mut best_cert = f64::INFINITY;

        for iter in 0..=self.st.max_iter {
            let aty = self.at_mul(&y);
            let etz = self.et_mul(&z);
            let rx: Vec<f64> = (0..n).map(|j| aty[j] - etz[j] + self.c[j] * tau).collect();
            let ax = self.a_mul(&x);
            let ry: Vec<f64> = (0..p).map(|i| -ax[i] + self.b[i] * tau).collect();
            let ex = self.e_mul(&x);
            let rz: Vec<f64> = (0..m).map(|k| ex[k] - s[k]).collect();
            let cx = dot(self.c, &x);
            let by = dot(self.b, &y);
            let rt = -cx - by - kappa;
            let mu = (dot(&s, &z) + tau * kappa) / (self.degree + 1.0);

            let pres = inf(&ry).max(inf(&rz)) / tau;
            let dres = inf(&rx) / tau;
            let gap = (cx + by).abs() / tau;
            log::trace!("iter {iter}: pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e} kappa {kappa:.2e}");
            if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
                return Err(self.failure(iter, "non-finite iterate", (pres, dres, gap)));
            }
            if pres <= self.st.tol && dres <= self.st.tol && gap <= self.st.tol {
                let scale = |v: &[f64]| v.iter().map(|t| t / tau).collect::<Vec<f64>>();
                return Ok(RawSolution {
                    status: SolveStatus::Optimal,
                    x: scale(&x),
                    y: scale(&y),
                    s_var: scale(&etz),
                    iterations: iter,
                });
            }
            let res = pres.max(dres).max(gap);
            if best.as_ref().map_or(true, |b| res < b.0) {
                best_iter = iter;
                let scale = |v: &[f64]| v.iter().map(|t| t / tau).collect::<Vec<f64>>();
                *best = Some((
                    res,
                    RawSolution {
                        status: SolveStatus::AlmostOptimal,
                        x: scale(&x),
                        y: scale(&y),
                        s_var: scale(&etz),
                        iterations: iter,
                    },
                ));
            }
            // An emerging infeasibility certificate is progress too.
            let mut cert_res = f64::INFINITY;
            if by < 0.0 {
                let cert: Vec<f64> = (0..n).map(|j| aty[j] - etz[j]).collect();
                cert_res = inf(&cert) / -by;
                if cert_res <= self.st.infeas_tol {
                    let sc = |v: &[f64]| v.iter().map(|t| t / -by).collect::<Vec<f64>>();
                    return Ok(RawSolution {
                        status: SolveStatus::Infeasible,
                        x: vec![0.0; n],
                        y: sc(&y),
                        s_var: sc(&etz),
                        iterations: iter,
                    });
                }
            }
            if cx < 0.0 {
                let res = inf(&ax).max((0..m).map(|k| (ex[k] - s[k]).abs()).fold(0.0, f64::max));
                cert_res = cert_res.min(res / -cx);
                if res / -cx <= self.st.infeas_tol {
                    return Ok(RawSolution {
                        status: SolveStatus::Unbounded,
                        x: x.iter().map(|t| t / -cx).collect(),
                        y: vec![0.0; p],
                        s_var: vec![0.0; n],
                        iterations: iter,
                    });
                }
            }
            if cert_res < best_cert {
                best_cert = cert_res;
                best_iter = best_iter.max(iter);
            }
            if iter >= best_iter + NO_PROGRESS_LIMIT {
                return Err(self.failure(iter, "no progress", (pres, dres, gap)));
            }
            if iter == self.st.max_iter {
                let scale = |v: &[f64]| v.iter().map(|t| t / tau).collect::<Vec<f64>>();
                return Ok(RawSolution {
                    status: SolveStatus::MaxIter,
                    x: scale(&x),
                    y: scale(&y),
                    s_var: scale(&etz),
                    iterations: iter,
                });
            }

            let scal = cones::nt_scaling(&self.blocks, &s, &z).ok_or_else(|| {
                self.failure(iter, "iterate left the cone interior", (pres, dres, gap))
            })?;
            let lambda = cones::apply_w(&self.blocks, &scal, &z, false);
            // Near the boundary, cancellation can leave pivots that the
            // dynamic regularization replaces wholesale; refinement then
            // cannot recover the solution, and a stronger static
            // regularization gives a better-conditioned factor to refine
            // against.
            let mut reg = self.st.static_reg;
            let mut chosen: Option<(f64, Kkt, (Vec<f64>, Vec<f64>, Vec<f64>))> = None;
            loop {
                let kkt = self
                    .assemble(scal.clone(), reg)
                    .ok_or_else(|| self.failure(iter, "non-finite scaling", (pres, dres, gap)))?;
                let (sol, residual) = self.solve_kkt_checked(&kkt, &neg_c, self.b, &zeros_m);
                if chosen.as_ref().map_or(true, |c| residual < c.0) {
                    chosen = Some((residual, kkt, sol));
                }
                if residual <= KKT_SOLVE_TOL || reg >= MAX_STATIC_REG {
                    break;
                }
                log::trace!("KKT solve residual {residual:.1e}; raising regularization above {reg:.0e}");
                reg *= 100.0;
            }
            let (_, kkt, (x1, y1, z1)) = chosen.expect("at least one factorization");
            let denom_base = -dot(self.c, &x1) - dot(self.b, &y1);

            let direction = |eta: f64, xi_s: &[f64], xi_t: f64| {
                let lx = cones::jordan_div(&self.blocks, &lambda, xi_s);
                let wlx = cones::apply_w(&self.blocks, &kkt.scal, &lx, false);
                let rhs_x: Vec<f64> = rx.iter().map(|v| -eta * v).collect();
                let rhs_y: Vec<f64> = ry.iter().map(|v| eta * v).collect();
                let rhs_z: Vec<f64> = (0..m).map(|k| eta * rz[k] - wlx[k]).collect();
                let (x2, y2, z2) = self.solve_kkt(&kkt, &rhs_x, &rhs_y, &rhs_z);
                let dtau = (-eta * rt + dot(self.c, &x2) + dot(self.b, &y2) + xi_t / tau)
                    / (kappa / tau + denom_base);
                let dx: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a + dtau * b).collect();
                let dy: Vec<f64> = y2.iter().zip(&y1).map(|(a, b)| a + dtau * b).collect();
                let dz: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a + dtau * b).collect();
                // From the linearized slack equation; the scaled complementarity
                // form loses accuracy once s and z approach the boundary.
                let edx = self.e_mul(&dx);
                let ds: Vec<f64> = (0..m).map(|k| edx[k] + eta * rz[k]).collect();
                let dkappa = (xi_t - kappa * dtau) / tau;
                (dx, dy, dz, ds, dtau, dkappa)
            };

            let step = |dz: &[f64], ds: &[f64], dtau: f64, dkappa: f64| {
                let mut a = cones::max_step(&self.blocks, &s, ds, f64::INFINITY);
                a = a.min(cones::max_step(&self.blocks, &z, dz, f64::INFINITY));
                if dtau < 0.0 {
                    a = a.min(-tau / dtau);
                }
                if dkappa < 0.0 {
                    a = a.min(-kappa / dkappa);
                }
                a
            };

            let ll = cones::jordan_product(&self.blocks, &lambda, &lambda);
            let xi_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(1.0, &xi_aff, -tau * kappa);
            let alpha_aff = step(&dz_a, &ds_a, dtau_a, dkappa_a).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3);

            let winv_ds = cones::apply_w(&self.blocks, &kkt.scal, &ds_a, true);
            let w_dz = cones::apply_w(&self.blocks, &kkt.scal, &dz_a, false);
            let corr = cones::jordan_product(&self.blocks, &winv_ds, &w_dz);
            let xi: Vec<f64> = (0..m)
                .map(|k| -ll[k] + sigma * mu * e[k] - corr[k])
                .collect();
            let xi_t = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
            let (dx, dy, dz, ds, dtau, dkappa) = direction(1.0 - sigma, &xi, xi_t);
            let alpha_max = step(&dz, &ds, dtau, dkappa);
            let mut alpha = (self.st.step_fraction * alpha_max).min(1.0);
            // The boundary distance is computed in floating point; back off
            // until the new point is strictly interior.
            let moved = |v: &[f64], d: &[f64], a: f64| {
                v.iter()
                    .zip(d)
                    .map(|(x, t)| x + a * t)
                    .collect::<Vec<f64>>()
            };
            for _ in 0..30 {
                if cones::nt_scaling(&self.blocks, &moved(&s, &ds, alpha), &moved(&z, &dz, alpha))
                    .is_some()
                {
                    break;
                }
                alpha *= 0.5;
            }
            if !alpha.is_finite() || alpha < 1e-12 {
                stalls += 1;
                if stalls >= 3 || !alpha.is_finite() {
                    return Err(self.failure(iter, "step length collapsed", (pres, dres, gap)));
                }
                continue;
            }
            stalls = 0;
            x.iter_mut().zip(&dx).for_each(|(v, d)| *v += alpha * d);
            y.iter_mut().zip(&dy).for_each(|(v, d)| *v += alpha * d);
            z.iter_mut().zip(&dz).for_each(|(v, d)| *v += alpha * d);
            s.iter_mut().zip(&ds).for_each(|(v, d)| *v += alpha * d);
            tau += alpha * dtau;
            kappa += alpha * dkappa;
        }
        unreachable!("loop returns at max_iter")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn assert_kkt(sol: &ConicSolution, tol: f64) {
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.kkt.max() <= tol, "{:?}", sol.kkt);
    }

    #[test]
    fn x_at_least_one() {
        let mut p = ConicProgram::new(2);
        p.set_cost(0, 1.0);
        p.add_equality(&[(0, 1.0), (1, -1.0)], 1.0);
        p.add_nonneg(vec![1]);
        let sol = solve(&p, 1e-8, 100).unwrap();
        assert_kkt(&sol, 1e-8);
        assert!((sol.z[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn three_four_five() {
        let mut p = ConicProgram::new(2);
        p.fix(0, 3.0);
        p.fix(1, 4.0);
        let t = p.add_epigraph_norm(&[0, 1]);
        p.set_cost(t, 1.0);
        let sol = solve(&p, 1e-8, 100).unwrap();
        assert_kkt(&sol, 1e-8);
        assert!((sol.z[t] - 5.0).abs() < 1e-7, "{}", sol.z[t]);
    }

    #[test]
    fn unreachable_tolerance_reports_best_point() {
        let mut p = ConicProgram::new(2);
        p.fix(0, 3.0);
        p.fix(1, 4.0);
        let t = p.add_epigraph_norm(&[0, 1]);
        p.set_cost(t, 1.0);
        let settings = SolverSettings {
            tol: 1e-30,
            max_iter: 60,
            ..Default::default()
        };
        let sol = solve_with(&p, &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::AlmostOptimal);
        assert!(sol.kkt.max() <= 1e-8, "{:?}", sol.kkt);
        assert!((sol.z[t] - 5.0).abs() < 1e-7);
        let strict = SolverSettings {
            reduced_tol: 0.0,
            ..settings
        };
        assert!(!matches!(
            solve_with(&p, &strict),
            Ok(ConicSolution {
                status: SolveStatus::Optimal | SolveStatus::AlmostOptimal,
                ..
            })
        ));
    }

    #[test]
    fn empty_epigraph_is_zero() {
        let mut p = ConicProgram::new(0);
        let t = p.add_epigraph_norm(&[]);
        p.set_cost(t, 1.0);
        let sol = solve(&p, 1e-8, 100).unwrap();
        assert_kkt(&sol, 1e-8);
        assert!(sol.z[t].abs() < 1e-7);
    }

    #[test]
    fn infeasible_and_unbounded_are_certified() {
        // x >= 0, x = -1.
        let mut p = ConicProgram::new(2);
        p.add_equality(&[(0, 1.0), (1, 1.0)], -1.0);
        p.add_nonneg(vec![0, 1]);
        assert_eq!(
            solve(&p, 1e-8, 100).unwrap().status,
            SolveStatus::Infeasible
        );

        // min -x, x >= 0.
        let mut p = ConicProgram::new(2);
        p.set_cost(0, -1.0);
        p.add_equality(&[(0, 1.0), (1, -1.0)], 0.0);
        p.add_nonneg(vec![0, 1]);
        assert_eq!(solve(&p, 1e-8, 100).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn lp_with_known_vertex() {
        // max x + y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0 -> (1.6, 1.2).
        let mut p = ConicProgram::new(4);
        p.set_cost(0, -1.0);
        p.set_cost(1, -1.0);
        p.add_equality(&[(0, 1.0), (1, 2.0), (2, 1.0)], 4.0);
        p.add_equality(&[(0, 3.0), (1, 1.0), (3, 1.0)], 6.0);
        p.add_nonneg(vec![0, 1, 2, 3]);
        let sol = solve(&p, 1e-9, 100).unwrap();
        assert_kkt(&sol, 1e-9);
        assert!((sol.z[0] - 1.6).abs() < 1e-7 && (sol.z[1] - 1.2).abs() < 1e-7);
        assert!(
            sol.objective >= -sol.y.iter().zip(p.rhs()).map(|(y, b)| y * b).sum::<f64>() - 1e-9
        );
    }

    /// Box-and-ball linear minimization: min c'x s.t. lo <= x <= hi,
    /// ||x - x0|| <= rho. Oracle: x(mu) = clip(x0 - c / (2 mu)) with mu found
    /// by bisection on the ball constraint.
    fn box_ball_oracle(c: &[f64], lo: &[f64], hi: &[f64], x0: &[f64], rho: f64) -> f64 {
        let point = |mu: f64| -> Vec<f64> {
            (0..c.len())
                .map(|i| (x0[i] - c[i] / (2.0 * mu)).clamp(lo[i], hi[i]))
                .collect()
        };
        let dist = |x: &[f64]| {
            x.iter()
                .zip(x0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (mut a, mut b) = (1e-12, 1e12);
        if dist(&point(a)) <= rho {
            return point(a).iter().zip(c).map(|(x, ci)| x * ci).sum();
        }
        for _ in 0..400 {
            let mid = (a * b).sqrt();
            if dist(&point(mid)) > rho {
                a = mid;
            } else {
                b = mid;
            }
        }
        point(b).iter().zip(c).map(|(x, ci)| x * ci).sum()
    }

    #[test]
    fn random_box_ball_instances_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 20;
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lo: Vec<f64> = x0.iter().map(|v| v - rng.gen_range(0.05..0.5)).collect();
            let hi: Vec<f64> = x0.iter().map(|v| v + rng.gen_range(0.05..0.5)).collect();
            let rho = rng.gen_range(0.3..1.0);

            // x (n), lower slacks (n), upper slacks (n), ball (t, u (n)).
            let mut p = ConicProgram::new(0);
            let x = p.add_vars(n);
            let sl = p.add_vars(n);
            let su = p.add_vars(n);
            let t = p.add_var();
            let u = p.add_vars(n);
            for i in 0..n {
                p.set_cost(x[i], c[i]);
                p.add_equality(&[(x[i], 1.0), (sl[i], -1.0)], lo[i]);
                p.add_equality(&[(x[i], 1.0), (su[i], 1.0)], hi[i]);
                p.add_equality(&[(u[i], 1.0), (x[i], -1.0)], -x0[i]);
            }
            p.fix(t, rho);
            p.add_nonneg(sl.clone());
            p.add_nonneg(su.clone());
            let mut ball = vec![t];
            ball.extend(&u);
            p.add_soc(ball);

            let sol = solve(&p, 1e-8, 100).unwrap();
            assert_kkt(&sol, 1e-8);
            let want = box_ball_oracle(&c, &lo, &hi, &x0, rho);
            assert!(
                (sol.objective - want).abs() < 1e-5,
                "{} vs {want}",
                sol.objective
            );
        }
    }

    #[test]
    fn objective_scaling_keeps_optimizer() {
        let mut p = ConicProgram::new(3);
        p.set_cost(0, 1.0);
        p.set_cost(1, 2.0);
        p.add_equality(&[(0, 1.0), (1, 1.0)], 1.0);
        p.fix(2, 1.0);
        p.add_soc(vec![2, 0, 1]);
        let base = solve(&p, 1e-8, 100).unwrap();
        for lam in [1e-3, 0.5, 7.0, 1e3] {
            let sol = solve(&p.scaled_objective(lam), 1e-8, 100).unwrap();
            assert_kkt(&sol, 1e-8);
            for (a, b) in sol.z.iter().zip(&base.z) {
                assert!(
                    (a - b).abs() < 1e-6,
                    "lambda {lam}: {:?} vs {:?}",
                    sol.z,
                    base.z
                );
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_output() {
        let mut p = ConicProgram::new(2);
        p.fix(0, 3.0);
        p.fix(1, 4.0);
        let t = p.add_epigraph_norm(&[0, 1]);
        p.set_cost(t, 1.0);
        assert_eq!(solve(&p, 1e-8, 100).unwrap(), solve(&p, 1e-8, 100).unwrap());
    }
}
