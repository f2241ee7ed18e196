//! Linear objective over equality, nonnegative-cone and second-order-cone
//! constraints.
//!
//! A [`ConicProgram`] is
//!
//! ```text
//! minimize    c' z
//! subject to  A z = b
//!             z[I_k] in K_k      for every cone block k
//! ```
//!
//! where each `K_k` is either the nonnegative orthant or a second-order
//! cone `{(t, u) : t >= ||u||_2}` whose first index is the scalar `t`.
//! Variables not named in any block are free. Blocks must be disjoint.
//!
//! The dual is `maximize -b' y` subject to `c + A' y - s = 0`, `s in K`,
//! so weak duality reads `c' z >= -b' y`.

mod cones;
mod ipm;
mod ldl;
mod presolve;

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipm::{solve, solve_with, SolverSettings};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("variable index {index} out of range for {n_vars} variables")]
    IndexOutOfRange { index: usize, n_vars: usize },
    #[error("variable {0} appears in more than one cone block")]
    OverlappingCones(usize),
    #[error("second-order cone block needs at least one index")]
    EmptyCone,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
    #[error("numerical failure at iteration {iteration}: {reason} (pres {pres:.2e}, dres {dres:.2e}, gap {gap:.2e})")]
    NumericalFailure {
        iteration: usize,
        reason: String,
        pres: f64,
        dres: f64,
        gap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Nonneg(Vec<usize>),
    /// `indices[0] >= ||indices[1..]||_2`.
    Soc(Vec<usize>),
}

impl Cone {
    pub fn indices(&self) -> &[usize] {
        match self {
            Cone::Nonneg(ix) | Cone::Soc(ix) => ix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    n_vars: usize,
    objective: Vec<f64>,
    /// Equality rows as sparse `(column, coefficient)` lists.
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: vec![0.0; n_vars],
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_equalities(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// Appends a free variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.objective.push(0.0);
        self.n_vars - 1
    }

    pub fn add_vars(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.add_var()).collect()
    }

    pub fn set_cost(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add_cost(&mut self, var: usize, coeff: f64) {
        self.objective[var] += coeff;
    }

    /// Adds `sum coeff * z[col] = rhs`. Repeated columns are summed.
    pub fn add_equality(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(c, v) in terms {
            match row.iter_mut().find(|(rc, _)| *rc == c) {
                Some(slot) => slot.1 += v,
                None => row.push((c, v)),
            }
        }
        row.retain(|&(_, v)| v != 0.0);
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    /// Fixes a variable to a value.
    pub fn fix(&mut self, var: usize, value: f64) {
        self.add_equality(&[(var, 1.0)], value);
    }

    pub fn add_nonneg(&mut self, indices: Vec<usize>) {
        if !indices.is_empty() {
            self.cones.push(Cone::Nonneg(indices));
        }
    }

    pub fn add_soc(&mut self, indices: Vec<usize>) {
        self.cones.push(Cone::Soc(indices));
    }

    /// Appends `t` with `t >= ||z[vector]||_2` and returns `t`.
    ///
    /// An empty vector leaves `t >= 0`.
    pub fn add_epigraph_norm(&mut self, vector: &[usize]) -> usize {
        let t = self.add_var();
        let mut ix = Vec::with_capacity(vector.len() + 1);
        ix.push(t);
        ix.extend_from_slice(vector);
        self.add_soc(ix);
        t
    }

    /// Checks index ranges, cone disjointness and finiteness.
    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.n_vars;
        if self.objective.len() != n || self.rows.len() != self.rhs.len() {
            return Err(ConicError::Dimension("objective or rhs length".into()));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("objective"));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("equality right-hand side"));
        }
        for row in &self.rows {
            for &(c, v) in row {
                if c >= n {
                    return Err(ConicError::IndexOutOfRange {
                        index: c,
                        n_vars: n,
                    });
                }
                if !v.is_finite() {
                    return Err(ConicError::NonFinite("equality matrix"));
                }
            }
        }
        let mut owner = vec![false; n];
        for cone in &self.cones {
            if let Cone::Soc(ix) = cone {
                if ix.is_empty() {
                    return Err(ConicError::EmptyCone);
                }
            }
            for &i in cone.indices() {
                if i >= n {
                    return Err(ConicError::IndexOutOfRange {
                        index: i,
                        n_vars: n,
                    });
                }
                if owner[i] {
                    return Err(ConicError::OverlappingCones(i));
                }
                owner[i] = true;
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// Returns a copy with the objective multiplied by `factor`.
    pub fn scaled_objective(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.objective.iter_mut().for_each(|c| *c *= factor);
        out
    }

    /// Writes the program as plain text:
    ///
    /// ```text
    /// conic <n_vars> <n_rows> <n_cones>
    /// c <j> <value>            one line per nonzero objective entry
    /// a <i> <j> <value>        one line per nonzero of A
    /// b <i> <value>            one line per row
    /// nonneg <k> <j1> <j2> ...
    /// soc <k> <j1> <j2> ...    first index is the cone's scalar bound
    /// ```
    ///
    /// Indices are 0-based; values use Rust's round-trip float formatting.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "conic {} {} {}",
            self.n_vars,
            self.rows.len(),
            self.cones.len()
        )?;
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                writeln!(out, "c {j} {c:?}")?;
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                writeln!(out, "a {i} {j} {v:?}")?;
            }
        }
        for (i, b) in self.rhs.iter().enumerate() {
            writeln!(out, "b {i} {b:?}")?;
        }
        for (k, cone) in self.cones.iter().enumerate() {
            let tag = match cone {
                Cone::Nonneg(_) => "nonneg",
                Cone::Soc(_) => "soc",
            };
            let ix: Vec<String> = cone.indices().iter().map(|i| i.to_string()).collect();
            writeln!(out, "{tag} {k} {}", ix.join(" "))?;
        }
        Ok(())
    }
}

impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n_soc = self
            .cones
            .iter()
            .filter(|c| matches!(c, Cone::Soc(_)))
            .count();
        write!(
            f,
            "ConicProgram({} vars, {} equalities, {} nonneg blocks, {} SOC blocks)",
            self.n_vars,
            self.rows.len(),
            self.cones.len() - n_soc,
            n_soc
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// The iterates stopped improving short of `tol`; the best point seen
    /// meets `reduced_tol` instead.
    AlmostOptimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||A z - b||_inf`.
    pub primal: f64,
    /// `||c + A' y - s||_inf`.
    pub dual: f64,
    /// `|c' z + b' y|`.
    pub gap: f64,
    /// Largest distance of `z` outside its cones and of `s` outside the
    /// dual cones.
    pub cone: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap).max(self.cone)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal variables.
    pub z: Vec<f64>,
    /// Equality duals.
    pub y: Vec<f64>,
    /// Cone duals, indexed like `z` (zero on free variables).
    pub s: Vec<f64>,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
}

/// KKT residuals of a primal/dual pair.
pub fn kkt_residuals(prog: &ConicProgram, sol: &ConicSolution) -> Result<KktResiduals, ConicError> {
    let n = prog.n_vars;
    if sol.z.len() != n || sol.s.len() != n || sol.y.len() != prog.rows.len() {
        return Err(ConicError::Dimension(format!(
            "solution has z:{}, s:{}, y:{}; program has {} vars and {} rows",
            sol.z.len(),
            sol.s.len(),
            sol.y.len(),
            n,
            prog.rows.len()
        )));
    }
    let mut primal: f64 = 0.0;
    let mut dual_vec = prog.objective.clone();
    for ((row, b), y) in prog.rows.iter().zip(&prog.rhs).zip(&sol.y) {
        let mut ax = 0.0;
        for &(j, v) in row {
            ax += v * sol.z[j];
            dual_vec[j] += v * y;
        }
        primal = primal.max((ax - b).abs());
    }
    let dual = dual_vec
        .iter()
        .zip(&sol.s)
        .map(|(d, s)| (d - s).abs())
        .fold(0.0, f64::max);
    let by: f64 = prog.rhs.iter().zip(&sol.y).map(|(b, y)| b * y).sum();
    let gap = (prog.objective_value(&sol.z) + by).abs();

    let mut cone: f64 = 0.0;
    let mut in_cone = vec![false; n];
    for c in &prog.cones {
        let ix = c.indices();
        ix.iter().for_each(|&i| in_cone[i] = true);
        let zs: Vec<f64> = ix.iter().map(|&i| sol.z[i]).collect();
        let ss: Vec<f64> = ix.iter().map(|&i| sol.s[i]).collect();
        let viol = |v: &[f64]| match c {
            Cone::Nonneg(_) => v.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max),
            Cone::Soc(_) => {
                let tail = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                (tail - v[0]).max(0.0)
            }
        };
        cone = cone.max(viol(&zs)).max(viol(&ss));
    }
    for (i, free) in in_cone.iter().enumerate() {
        if !free {
            cone = cone.max(sol.s[i].abs());
        }
    }
    Ok(KktResiduals {
        primal,
        dual,
        gap,
        cone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x  s.t.  x - w = 1, w >= 0.
    fn x_at_least_one() -> ConicProgram {
        let mut p = ConicProgram::new(2);
        p.set_cost(0, 1.0);
        p.add_equality(&[(0, 1.0), (1, -1.0)], 1.0);
        p.add_nonneg(vec![1]);
        p
    }

    #[test]
    fn hand_built_optimal_pair_has_zero_residuals() {
        let p = x_at_least_one();
        // Dual: c + A'y - s = 0 with y = -1, s = (0, 1).
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            z: vec![1.0, 0.0],
            y: vec![-1.0],
            s: vec![0.0, 1.0],
            kkt: KktResiduals::default(),
            objective: 1.0,
            iterations: 0,
        };
        let r = kkt_residuals(&p, &sol).unwrap();
        assert_eq!((r.primal, r.dual, r.gap, r.cone), (0.0, 0.0, 0.0, 0.0));

        let mut moved = sol.clone();
        moved.z[0] += 1e-3;
        let r = kkt_residuals(&p, &moved).unwrap();
        assert!((r.primal - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn residuals_reject_wrong_dimensions() {
        let p = x_at_least_one();
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            z: vec![1.0],
            y: vec![],
            s: vec![],
            kkt: KktResiduals::default(),
            objective: 0.0,
            iterations: 0,
        };
        assert!(matches!(
            kkt_residuals(&p, &sol),
            Err(ConicError::Dimension(_))
        ));
    }

    #[test]
    fn validation_catches_overlap_and_range() {
        let mut p = ConicProgram::new(3);
        p.add_nonneg(vec![0, 1]);
        p.add_soc(vec![1, 2]);
        assert_eq!(p.validate(), Err(ConicError::OverlappingCones(1)));
        let mut p = ConicProgram::new(2);
        p.add_equality(&[(5, 1.0)], 0.0);
        assert!(matches!(
            p.validate(),
            Err(ConicError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn duplicate_columns_are_merged() {
        let mut p = ConicProgram::new(2);
        p.add_equality(&[(0, 1.0), (1, 2.0), (0, 3.0)], 1.0);
        assert_eq!(p.rows()[0], vec![(0, 4.0), (1, 2.0)]);
    }

    #[test]
    fn text_dump_lists_every_block() {
        let p = x_at_least_one();
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "conic 2 1 1\nc 0 1.0\na 0 0 1.0\na 0 1 -1.0\nb 0 1.0\nnonneg 0 1\n"
        );
    }
}
