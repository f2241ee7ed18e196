//! Cone algebra used by the interior-point iteration.
//!
//! All vectors here are in "slack order": block `k` occupies
//! `offset..offset + dim` of the stacked `s`/`z` vectors.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Nonneg,
    Soc,
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub kind: Kind,
    pub offset: usize,
    pub dim: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }

    /// Contribution to the barrier degree.
    pub fn degree(&self) -> usize {
        match self.kind {
            Kind::Nonneg => self.dim,
            Kind::Soc => 1,
        }
    }
}

/// Nesterov-Todd scaling of one block.
#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    /// `W = diag(d)`.
    Nonneg(Vec<f64>),
    /// `W = eta * [[w0, w1'], [w1, I + w1 w1' / (1 + w0)]]`.
    Soc { eta: f64, w: Vec<f64> },
}

pub(crate) fn identity_element(blocks: &[Block], m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    for b in blocks {
        match b.kind {
            Kind::Nonneg => e[b.range()].iter_mut().for_each(|v| *v = 1.0),
            Kind::Soc => e[b.offset] = 1.0,
        }
    }
    e
}

fn soc_residual(v: &[f64]) -> f64 {
    let tail: f64 = v[1..].iter().map(|x| x * x).sum();
    (v[0] - tail.sqrt()) * (v[0] + tail.sqrt())
}

/// Smallest `a` with `v + a e` in the cone (negative if `v` is interior).
pub(crate) fn min_shift(blocks: &[Block], v: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for b in blocks {
        let x = &v[b.range()];
        let a = match b.kind {
            Kind::Nonneg => x.iter().map(|t| -t).fold(f64::NEG_INFINITY, f64::max),
            Kind::Soc => x[1..].iter().map(|t| t * t).sum::<f64>().sqrt() - x[0],
        };
        worst = worst.max(a);
    }
    worst
}

/// Largest `a` (capped at `cap`) with `x + a dx` in the cone, for interior `x`.
pub(crate) fn max_step(blocks: &[Block], x: &[f64], dx: &[f64], cap: f64) -> f64 {
    let mut alpha = cap;
    for b in blocks {
        let xs = &x[b.range()];
        let ds = &dx[b.range()];
        match b.kind {
            Kind::Nonneg => {
                for (xi, di) in xs.iter().zip(ds) {
                    if *di < 0.0 {
                        alpha = alpha.min(-xi / di);
                    }
                }
            }
            Kind::Soc => alpha = alpha.min(soc_max_step(xs, ds)),
        }
    }
    alpha.max(0.0)
}

fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    // q(a) = a2 a^2 + 2 a1 a + a0 with q = (x0 + a d0)^2 - ||x1 + a d1||^2.
    let a2 = d[0] * d[0] - d[1..].iter().map(|t| t * t).sum::<f64>();
    let a1 = x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>();
    let a0 = soc_residual(x).max(0.0);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -x[0] / d[0];
    }
    let root = if a2.abs() <= 1e-14 * (a1.abs() + a0.abs()).max(1e-300) {
        if a1 < 0.0 {
            -a0 / (2.0 * a1)
        } else {
            f64::INFINITY
        }
    } else {
        let disc = a1 * a1 - a2 * a0;
        if disc < 0.0 {
            // q keeps the sign of a0 > 0 everywhere.
            f64::INFINITY
        } else {
            let sq = disc.sqrt();
            // Stable roots of a2 a^2 + 2 a1 a + a0.
            let qv = -(a1 + a1.signum() * sq);
            let (r1, r2) = if qv != 0.0 {
                (qv / a2, a0 / qv)
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            [r1, r2]
                .into_iter()
                .filter(|r| *r > 0.0)
                .fold(f64::INFINITY, f64::min)
        }
    };
    alpha.min(root)
}

/// NT scaling for interior `s`, `z`. Returns `None` if either leaves the
/// interior numerically.
pub(crate) fn nt_scaling(blocks: &[Block], s: &[f64], z: &[f64]) -> Option<Vec<Scaling>> {
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let sb = &s[b.range()];
        let zb = &z[b.range()];
        match b.kind {
            Kind::Nonneg => {
                let mut d = Vec::with_capacity(b.dim);
                for (si, zi) in sb.iter().zip(zb) {
                    if !(*si > 0.0 && *zi > 0.0) {
                        return None;
                    }
                    d.push((si / zi).sqrt());
                }
                out.push(Scaling::Nonneg(d));
            }
            Kind::Soc => {
                let sr = soc_residual(sb);
                let zr = soc_residual(zb);
                if !(sr > 0.0 && zr > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                    return None;
                }
                let sn = sr.sqrt();
                let zn = zr.sqrt();
                let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
                let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
                let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                let mut w = Vec::with_capacity(b.dim);
                w.push((sbar[0] + zbar[0]) / (2.0 * gamma));
                for i in 1..b.dim {
                    w.push((sbar[i] - zbar[i]) / (2.0 * gamma));
                }
                // Renormalize so that w0^2 - ||w1||^2 = 1 holds to rounding.
                let tail: f64 = w[1..].iter().map(|t| t * t).sum();
                w[0] = (1.0 + tail).sqrt();
                out.push(Scaling::Soc {
                    eta: (sn / zn).sqrt(),
                    w,
                });
            }
        }
    }
    Some(out)
}

fn soc_wbar(w: &[f64], v: &[f64], sign: f64, out: &mut [f64]) {
    let w0 = w[0];
    let w1v1: f64 = w[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
    out[0] = w0 * v[0] + sign * w1v1;
    let c = sign * v[0] + w1v1 / (1.0 + w0);
    for i in 1..w.len() {
        out[i] = v[i] + c * w[i];
    }
}

/// `out = W v` (`inverse = false`) or `out = W^{-1} v`.
pub(crate) fn apply_w(blocks: &[Block], scal: &[Scaling], v: &[f64], inverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (b, sc) in blocks.iter().zip(scal) {
        let r = b.range();
        match sc {
            Scaling::Nonneg(d) => {
                for ((o, vi), di) in out[r.clone()].iter_mut().zip(&v[r.clone()]).zip(d) {
                    *o = if inverse { vi / di } else { vi * di };
                }
            }
            Scaling::Soc { eta, w } => {
                let sign = if inverse { -1.0 } else { 1.0 };
                soc_wbar(w, &v[r.clone()], sign, &mut out[r.clone()]);
                let f = if inverse { 1.0 / eta } else { *eta };
                out[r].iter_mut().for_each(|o| *o *= f);
            }
        }
    }
    out
}

/// Dense `W^2` (or `W^{-2}` with `inverse`) for one SOC block, row-major.
pub(crate) fn soc_w_sq(eta: f64, w: &[f64], inverse: bool) -> Vec<f64> {
    let (sign, f) = if inverse {
        (-1.0, 1.0 / (eta * eta))
    } else {
        (1.0, eta * eta)
    };
    let n = w.len();
    let mut m = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut tmp2 = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        soc_wbar(w, &col, sign, &mut tmp);
        soc_wbar(w, &tmp, sign, &mut tmp2);
        for i in 0..n {
            m[i * n + j] = tmp2[i] * f;
        }
    }
    m
}

/// Jordan product `u o v`.
pub(crate) fn jordan_product(blocks: &[Block], u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for b in blocks {
        let r = b.range();
        match b.kind {
            Kind::Nonneg => {
                for i in r {
                    out[i] = u[i] * v[i];
                }
            }
            Kind::Soc => {
                let o = b.offset;
                out[o] = u[r.clone()]
                    .iter()
                    .zip(&v[r.clone()])
                    .map(|(a, c)| a * c)
                    .sum();
                for i in o + 1..o + b.dim {
                    out[i] = u[o] * v[i] + v[o] * u[i];
                }
            }
        }
    }
    out
}

/// Solves `lambda o u = v` for `u`.
pub(crate) fn jordan_div(blocks: &[Block], lambda: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for b in blocks {
        let r = b.range();
        match b.kind {
            Kind::Nonneg => {
                for i in r {
                    out[i] = v[i] / lambda[i];
                }
            }
            Kind::Soc => {
                let o = b.offset;
                let l0 = lambda[o];
                let l1 = &lambda[o + 1..o + b.dim];
                let v1 = &v[o + 1..o + b.dim];
                let det = l0 * l0 - l1.iter().map(|t| t * t).sum::<f64>();
                let l1v1: f64 = l1.iter().zip(v1).map(|(a, c)| a * c).sum();
                let u0 = (l0 * v[o] - l1v1) / det;
                out[o] = u0;
                for i in 1..b.dim {
                    out[o + i] = (v[o + i] - u0 * lambda[o + i]) / l0;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soc(dim: usize) -> Vec<Block> {
        vec![Block {
            kind: Kind::Soc,
            offset: 0,
            dim,
        }]
    }

    #[test]
    fn nt_scaling_maps_z_to_inverse_of_s() {
        let blocks = vec![
            Block {
                kind: Kind::Nonneg,
                offset: 0,
                dim: 2,
            },
            Block {
                kind: Kind::Soc,
                offset: 2,
                dim: 3,
            },
        ];
        let s = [0.5, 2.0, 3.0, 1.0, -2.0];
        let z = [4.0, 0.1, 2.0, -0.5, 0.3];
        let sc = nt_scaling(&blocks, &s, &z).unwrap();
        let wz = apply_w(&blocks, &sc, &z, false);
        let winv_s = apply_w(&blocks, &sc, &s, true);
        for (a, b) in wz.iter().zip(&winv_s) {
            assert!((a - b).abs() < 1e-12, "{wz:?} vs {winv_s:?}");
        }
        let back = apply_w(&blocks, &sc, &wz, true);
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_square_matches_operator() {
        let blocks = soc(3);
        let s = [3.0, 1.0, -2.0];
        let z = [2.0, -0.5, 0.3];
        let sc = nt_scaling(&blocks, &s, &z).unwrap();
        let Scaling::Soc { eta, w } = &sc[0] else {
            unreachable!()
        };
        let v = [0.3, -1.0, 2.0];
        for inverse in [false, true] {
            let m = soc_w_sq(*eta, w, inverse);
            let once = apply_w(&blocks, &sc, &v, inverse);
            let twice = apply_w(&blocks, &sc, &once, inverse);
            for i in 0..3 {
                let mv: f64 = (0..3).map(|j| m[i * 3 + j] * v[j]).sum();
                assert!((mv - twice[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jordan_div_inverts_product() {
        let blocks = soc(4);
        let l = [2.0, 0.3, -0.4, 0.5];
        let u = [1.0, -2.0, 0.7, 0.1];
        let p = jordan_product(&blocks, &l, &u);
        let back = jordan_div(&blocks, &l, &p);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let blocks = soc(2);
        // (1, 0) + a (0, 1) leaves the cone at a = 1.
        let a = max_step(&blocks, &[1.0, 0.0], &[0.0, 1.0], 10.0);
        assert!((a - 1.0).abs() < 1e-12);
        // Moving along the axis never leaves.
        assert_eq!(max_step(&blocks, &[1.0, 0.0], &[1.0, 0.0], 10.0), 10.0);
        // Heading to the apex stops there.
        let a = max_step(&blocks, &[2.0, 1.0], &[-1.0, -0.5], 10.0);
        assert!((a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn min_shift_measures_distance_to_interior() {
        let blocks = vec![
            Block {
                kind: Kind::Nonneg,
                offset: 0,
                dim: 2,
            },
            Block {
                kind: Kind::Soc,
                offset: 2,
                dim: 2,
            },
        ];
        assert_eq!(min_shift(&blocks, &[1.0, -3.0, 1.0, 0.0]), 3.0);
        assert_eq!(min_shift(&blocks, &[1.0, 3.0, 0.0, 4.0]), 4.0);
    }
}
