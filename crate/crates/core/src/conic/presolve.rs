//! Removes free variables pinned by singleton rows and drops linearly
//! dependent equality rows.

use super::{Cone, ConicProgram};

const DEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct Reduced {
    pub prog: ConicProgram,
    /// Original variable -> reduced variable.
    var_map: Vec<Option<usize>>,
    /// Reduced row -> original row.
    row_map: Vec<usize>,
    /// `(variable, value, row, coefficient)` for every pinned variable.
    fixed: Vec<(usize, f64, usize, f64)>,
    pub dropped_rows: usize,
}

pub(crate) enum Presolved {
    Reduced(Reduced),
    Infeasible(String),
}

pub(crate) fn presolve(prog: &ConicProgram) -> Presolved {
    let n = prog.n_vars();
    let mut in_cone = vec![false; n];
    for c in prog.cones() {
        c.indices().iter().for_each(|&i| in_cone[i] = true);
    }

    let mut value: Vec<Option<f64>> = vec![None; n];
    let mut fixed = Vec::new();
    let mut consumed = vec![false; prog.n_equalities()];
    for (r, (row, &b)) in prog.rows().iter().zip(prog.rhs()).enumerate() {
        if let [(j, a)] = row.as_slice() {
            if !in_cone[*j] && value[*j].is_none() {
                value[*j] = Some(b / a);
                fixed.push((*j, b / a, r, *a));
                consumed[r] = true;
            }
        }
    }

    let mut var_map = vec![None; n];
    let mut next = 0;
    for j in 0..n {
        if value[j].is_none() {
            var_map[j] = Some(next);
            next += 1;
        }
    }

    // Substitute pinned values and collect surviving rows.
    let mut cand_rows: Vec<(usize, Vec<(usize, f64)>, f64)> = Vec::new();
    for (r, (row, &b)) in prog.rows().iter().zip(prog.rhs()).enumerate() {
        if consumed[r] {
            continue;
        }
        let mut rhs = b;
        let mut terms = Vec::with_capacity(row.len());
        for &(j, a) in row {
            match value[j] {
                Some(v) => rhs -= a * v,
                None => terms.push((var_map[j].unwrap(), a)),
            }
        }
        cand_rows.push((r, terms, rhs));
    }

    // Dependent rows via incremental elimination on dense copies.
    let mut basis: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    let mut keep = Vec::new();
    let mut dropped = 0;
    for (r, terms, rhs) in cand_rows {
        let scale = terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            if rhs.abs() > DEP_TOL * (1.0 + prog.rhs()[r].abs()) {
                return Presolved::Infeasible(format!("equality row {r} reads 0 = {rhs:e}"));
            }
            dropped += 1;
            continue;
        }
        let mut dense = vec![0.0; next];
        for &(j, a) in &terms {
            dense[j] += a / scale;
        }
        let mut b_red = rhs / scale;
        for (brow, bb, piv) in &basis {
            let f = dense[*piv];
            if f != 0.0 {
                for (d, v) in dense.iter_mut().zip(brow) {
                    *d -= f * v;
                }
                b_red -= f * bb;
            }
        }
        let (piv, big) = dense
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if big <= DEP_TOL {
            if b_red.abs() > 1e-7 {
                return Presolved::Infeasible(format!(
                    "equality row {r} is a combination of earlier rows with a different right-hand side"
                ));
            }
            log::warn!("dropping linearly dependent equality row {r}");
            dropped += 1;
            continue;
        }
        let p = dense[piv];
        dense.iter_mut().for_each(|d| *d /= p);
        basis.push((dense, b_red / p, piv));
        keep.push((r, terms, rhs));
    }

    let mut red = ConicProgram::new(next);
    for j in 0..n {
        if let Some(k) = var_map[j] {
            red.set_cost(k, prog.objective()[j]);
        }
    }
    let mut row_map = Vec::with_capacity(keep.len());
    for (r, terms, rhs) in keep {
        red.add_equality(&terms, rhs);
        row_map.push(r);
    }
    for c in prog.cones() {
        let ix: Vec<usize> = c.indices().iter().map(|&i| var_map[i].unwrap()).collect();
        match c {
            Cone::Nonneg(_) => red.add_nonneg(ix),
            Cone::Soc(_) => red.add_soc(ix),
        }
    }
    Presolved::Reduced(Reduced {
        prog: red,
        var_map,
        row_map,
        fixed,
        dropped_rows: dropped,
    })
}

impl Reduced {
    /// Maps a reduced primal/dual triple back to the original program.
    pub fn postsolve(
        &self,
        orig: &ConicProgram,
        z: &[f64],
        y: &[f64],
        s: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = orig.n_vars();
        let mut zf = vec![0.0; n];
        let mut sf = vec![0.0; n];
        for j in 0..n {
            if let Some(k) = self.var_map[j] {
                zf[j] = z[k];
                sf[j] = s[k];
            }
        }
        let mut yf = vec![0.0; orig.n_equalities()];
        for (k, &r) in self.row_map.iter().enumerate() {
            yf[r] = y[k];
        }
        for &(j, v, _, _) in &self.fixed {
            zf[j] = v;
        }
        if !self.fixed.is_empty() {
            // Reduced cost of each pinned column absorbed by its row dual.
            let mut col_dot = vec![0.0; n];
            for (row, yr) in orig.rows().iter().zip(&yf) {
                if *yr != 0.0 {
                    for &(j, a) in row {
                        col_dot[j] += a * yr;
                    }
                }
            }
            for &(j, _, r, a) in &self.fixed {
                yf[r] = -(orig.objective()[j] + col_dot[j]) / a;
            }
        }
        (zf, yf, sf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_variable_and_duplicate_row_are_removed() {
        let mut p = ConicProgram::new(3);
        p.fix(0, 2.0);
        p.add_equality(&[(0, 1.0), (1, 1.0), (2, 1.0)], 5.0);
        p.add_equality(&[(1, 2.0), (2, 2.0)], 6.0);
        p.add_nonneg(vec![1, 2]);
        let Presolved::Reduced(r) = presolve(&p) else {
            panic!("infeasible")
        };
        assert_eq!(r.prog.n_vars(), 2);
        assert_eq!(r.prog.n_equalities(), 1);
        assert_eq!(r.dropped_rows, 1);
        assert_eq!(r.prog.rhs()[0], 3.0);
    }

    #[test]
    fn conflicting_rows_are_infeasible() {
        let mut p = ConicProgram::new(2);
        p.add_equality(&[(0, 1.0), (1, 1.0)], 1.0);
        p.add_equality(&[(0, 2.0), (1, 2.0)], 3.0);
        assert!(matches!(presolve(&p), Presolved::Infeasible(_)));
    }

    #[test]
    fn cone_variables_are_never_pinned() {
        let mut p = ConicProgram::new(1);
        p.fix(0, 1.0);
        p.add_nonneg(vec![0]);
        let Presolved::Reduced(r) = presolve(&p) else {
            panic!()
        };
        assert_eq!(r.prog.n_vars(), 1);
    }
}
