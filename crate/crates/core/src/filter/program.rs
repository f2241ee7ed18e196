use crate::conic::{
    solve_with, ConicError, ConicProgram, ConicSolution, SolveStatus, SolverSettings, DEFAULT_TOL,
};
use crate::grid::{solve_power_flow, Network, OperatingPoint, OperationalLimits};

use super::{relaxation_gap, ConstraintClass, DrsfConfig, FilterBounds, FilterError, FilterResult};

/// Cost of the violation norm in the slack-penalized program, relative to
/// the deviation and loss terms.
const VIOLATION_PENALTY: f64 = 1e4;
/// Slack above which a class counts as violated.
const VIOLATION_TOL: f64 = 1e-6;
/// Extra room given to violated constraints in the second fallback phase,
/// so that the relaxed set keeps an interior.
const RELAX_PAD: f64 = 1e-6;

#[derive(Clone, Copy)]
enum Mode<'a> {
    /// The robust program as stated.
    Strict,
    /// Every robust constraint gets a violation variable; their Euclidean
    /// norm is penalized.
    Slack,
    /// Robust constraint `k` (in build order, substation last) is loosened
    /// by `shift[k]`.
    Relaxed(&'a [f64]),
}

/// Variable indices of a built program.
struct Layout {
    q: Vec<usize>,
    p_flow: Vec<usize>,
    q_flow: Vec<usize>,
    l: Vec<usize>,
    v: Vec<usize>,
    p0: usize,
    q0: usize,
    /// Violation variables, in build order; only in [`Mode::Slack`].
    violations: Vec<(ConstraintClass, usize)>,
}

/// Builds the filter program for the proposed setpoints `q_learn`.
pub fn build_drsf(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
) -> Result<ConicProgram, FilterError> {
    let (bounds, limits) = check_inputs(net, q_learn, cfg)?;
    Ok(build(net, q_learn, cfg, bounds, &limits, Mode::Strict).0)
}

fn check_inputs<'a>(
    net: &Network,
    q_learn: &[f64],
    cfg: &'a DrsfConfig,
) -> Result<(&'a FilterBounds, OperationalLimits), FilterError> {
    if q_learn.len() != net.n_pv() {
        return Err(FilterError::Dimension {
            expected: net.n_pv(),
            got: q_learn.len(),
        });
    }
    if q_learn.iter().any(|q| !q.is_finite()) {
        return Err(FilterError::Config(
            "proposed setpoints must be finite".into(),
        ));
    }
    let positive = |v: f64| v.is_finite() && v >= 0.0;
    if !(positive(cfg.omega) && positive(cfg.margin) && positive(cfg.relaxation_tol)) {
        return Err(FilterError::Config(format!(
            "omega, margin and relaxation_tol must be finite and >= 0 (got {}, {}, {})",
            cfg.omega, cfg.margin, cfg.relaxation_tol
        )));
    }
    if !(cfg.solver_tol > 0.0 && cfg.max_iter > 0) {
        return Err(FilterError::Config(
            "solver tolerance and iteration limit must be positive".into(),
        ));
    }
    let bounds = cfg.bounds.as_ref().ok_or(FilterError::BoundsMissing)?;
    bounds.check(net)?;
    // Limits are not required to be ordered here: crossed voltage limits
    // are a legitimate way to ask for an empty robust set.
    let limits = cfg.limits.unwrap_or(*net.limits());
    let lim = [limits.v_min, limits.v_max, limits.i_max, limits.s0_max];
    if lim.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FilterError::Config(format!(
            "limits must be positive and finite: {limits:?}"
        )));
    }
    Ok((bounds, limits))
}

/// Sensitivity of lossless squared voltage at bus `k` to reactive
/// injection at bus `b`: twice the reactance shared by their root paths.
fn voltage_sensitivity(net: &Network, bus: usize, pv_bus: usize) -> f64 {
    let topo = net.topology();
    let lines = net.lines();
    let a = topo.path_to(bus, lines);
    let b = topo.path_to(pv_bus, lines);
    a.iter()
        .zip(&b)
        .take_while(|(x, y)| x == y)
        .map(|(j, _)| 2.0 * lines[*j].x)
        .sum()
}

fn build(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
    bounds: &FilterBounds,
    limits: &OperationalLimits,
    mode: Mode,
) -> (ConicProgram, Layout) {
    let with_slack = matches!(mode, Mode::Slack);
    let mut next = 0;
    let mut shift = move || {
        let k = next;
        next += 1;
        match mode {
            Mode::Relaxed(r) => r[k],
            _ => 0.0,
        }
    };
    let n_bus = net.n_buses();
    let n_line = net.n_lines();
    let lines = net.lines();
    let topo = net.topology();
    let mut prog = ConicProgram::new(0);

    let v = prog.add_vars(n_bus);
    let p_flow = prog.add_vars(n_line);
    let q_flow = prog.add_vars(n_line);
    let l = prog.add_vars(n_line);
    let p0 = prog.add_var();
    let q0 = prog.add_var();
    let mut violations = Vec::new();

    // Inverter ratings and deviation epigraph.
    let mut q = Vec::with_capacity(net.n_pv());
    let mut d = Vec::with_capacity(net.n_pv());
    for (k, unit) in net.pv_units().iter().enumerate() {
        let [qk, dk] = [prog.add_var(), prog.add_var()];
        if unit.q_max() > 1e-9 * unit.s_rating {
            let [s, p] = [prog.add_var(), prog.add_var()];
            prog.fix(s, unit.s_rating);
            prog.fix(p, unit.p_gen);
            prog.add_soc(vec![s, p, qk]);
        } else {
            // No reactive headroom: the rating cone has no interior.
            prog.fix(qk, 0.0);
        }
        prog.add_equality(&[(dk, 1.0), (qk, 1.0)], q_learn[k]);
        q.push(qk);
        d.push(dk);
    }
    // The slack program divides every cost by the penalty so that the
    // solver's absolute tolerances stay meaningful.
    let weight = if with_slack {
        1.0 / VIOLATION_PENALTY
    } else {
        1.0
    };
    let t = prog.add_epigraph_norm(&d);
    prog.set_cost(t, weight);

    prog.fix(v[0], net.v0());
    let pv_at = |bus: usize| net.buses()[bus].pv.map(|k| q[k]);

    // Power balance at every bus; the substation balance defines P0, Q0.
    for bus in 0..n_bus {
        let (mut pt, mut qt) = match topo.parent_line[bus] {
            Some(j) => (
                vec![(p_flow[j], 1.0), (l[j], -lines[j].r)],
                vec![(q_flow[j], 1.0), (l[j], -lines[j].x)],
            ),
            None => (vec![(p0, 1.0)], vec![(q0, 1.0)]),
        };
        for &c in &topo.children[bus] {
            pt.push((p_flow[c], -1.0));
            qt.push((q_flow[c], -1.0));
        }
        if let Some(qk) = pv_at(bus) {
            qt.push((qk, 1.0));
        }
        let b = &net.buses()[bus];
        prog.add_equality(&pt, -net.p_injection(bus));
        prog.add_equality(&qt, b.q_load);
    }

    // Voltage drop and the relaxed current definition per line.
    for (j, line) in lines.iter().enumerate() {
        let (i, k) = (line.from, line.to);
        prog.add_equality(
            &[
                (v[k], 1.0),
                (v[i], -1.0),
                (p_flow[j], 2.0 * line.r),
                (q_flow[j], 2.0 * line.x),
                (l[j], -line.z_sq()),
            ],
            0.0,
        );
        let [sum, diff] = [prog.add_var(), prog.add_var()];
        prog.add_equality(&[(sum, 1.0), (v[i], -0.5), (l[j], -0.5)], 0.0);
        prog.add_equality(&[(diff, 1.0), (v[i], -0.5), (l[j], 0.5)], 0.0);
        prog.add_soc(vec![sum, p_flow[j], q_flow[j], diff]);
        prog.add_cost(l[j], weight * cfg.omega);
    }

    let m = cfg.margin;
    let mut slacks = Vec::new();
    // terms + sign * w (- sign * violation) = rhs, with w >= 0.
    let mut robust =
        |prog: &mut ConicProgram, class, mut terms: Vec<(usize, f64)>, sign: f64, rhs: f64| {
            let rhs = rhs + sign * shift();
            let w = prog.add_var();
            slacks.push(w);
            terms.push((w, sign));
            if with_slack {
                // Free sign: a negative value would only raise the norm.
                let e = prog.add_var();
                terms.push((e, -sign));
                violations.push((class, e));
            }
            prog.add_equality(&terms, rhs);
        };

    let (vlo, vhi) = (limits.v_min * limits.v_min, limits.v_max * limits.v_max);
    let vb = &bounds.voltage;
    let v_hat0 = net
        .apply_action(&vec![0.0; net.n_pv()])
        .expect("zero reactive output is within every rating")
        .linearized_voltages();
    for bus in 1..n_bus {
        robust(
            &mut prog,
            ConstraintClass::VoltageLower,
            vec![(v[bus], 1.0)],
            -1.0,
            vlo - vb.lower[bus] + m,
        );
        // With the guard the plain upper row is implied: relaxed v never
        // exceeds its lossless counterpart. Keeping it would let loosened
        // fallback rows be met with phantom losses.
        if !cfg.exactness_guard {
            robust(
                &mut prog,
                ConstraintClass::VoltageUpper,
                vec![(v[bus], 1.0)],
                1.0,
                vhi - vb.upper[bus] - m,
            );
        } else {
            let terms: Vec<(usize, f64)> = net
                .pv_units()
                .iter()
                .zip(&q)
                .map(|(u, &qk)| (qk, voltage_sensitivity(net, bus, u.bus)))
                .filter(|(_, s)| *s != 0.0)
                .collect();
            let rhs = vhi - vb.upper[bus] - m - v_hat0[bus];
            robust(&mut prog, ConstraintClass::VoltageUpper, terms, 1.0, rhs);
        }
    }
    let imax_sq = limits.i_max * limits.i_max;
    for j in 0..n_line {
        robust(
            &mut prog,
            ConstraintClass::Current,
            vec![(l[j], 1.0)],
            1.0,
            imax_sq - bounds.current.upper[j] - m,
        );
    }

    let radicand = limits.s0_max * limits.s0_max - bounds.substation.upper[0] - m;
    let cap = radicand.signum() * radicand.abs().sqrt() + shift();
    let t0 = prog.add_var();
    if with_slack {
        let e = prog.add_var();
        prog.add_equality(&[(t0, 1.0), (e, -1.0)], cap);
        violations.push((ConstraintClass::Substation, e));
        // The norm rather than the sum: where a lower and an upper limit
        // cross, the sum is flat between them and the norm picks the middle.
        let all: Vec<usize> = violations.iter().map(|&(_, e)| e).collect();
        let te = prog.add_epigraph_norm(&all);
        prog.set_cost(te, 1.0);
    } else {
        prog.fix(t0, cap);
    }
    prog.add_soc(vec![t0, p0, q0]);
    prog.add_nonneg(slacks);

    let layout = Layout {
        q,
        p_flow,
        q_flow,
        l,
        v,
        p0,
        q0,
        violations,
    };
    (prog, layout)
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

// No monotonic clock on bare wasm32.
#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

struct Solved {
    sol: ConicSolution,
    layout: Layout,
    time: f64,
}

fn run(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
    bounds: &FilterBounds,
    limits: &OperationalLimits,
    mode: Mode,
) -> Result<Solved, ConicError> {
    let ((prog, layout), build_time) = timed(|| build(net, q_learn, cfg, bounds, limits, mode));
    let mut settings = SolverSettings {
        tol: cfg.solver_tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let (mut sol, mut time) = timed(|| solve_with(&prog, &settings));
    let broke_down = |s: &Result<ConicSolution, ConicError>| match s {
        Err(ConicError::NumericalFailure { .. }) => true,
        Ok(s) => s.status == SolveStatus::MaxIter,
        Err(_) => false,
    };
    if broke_down(&sol) && settings.tol < DEFAULT_TOL {
        log::warn!(
            "filter solve failed at tolerance {:.0e}; retrying at {DEFAULT_TOL:.0e}",
            settings.tol
        );
        settings.tol = DEFAULT_TOL;
        let (retry, t) = timed(|| solve_with(&prog, &settings));
        sol = retry;
        time += t;
    }
    Ok(Solved {
        sol: sol?,
        layout,
        time: build_time + time,
    })
}

fn solved_ok(solved: &Solved) -> bool {
    matches!(
        solved.sol.status,
        SolveStatus::Optimal | SolveStatus::AlmostOptimal
    )
}

fn violated_classes(solved: &Solved) -> Vec<ConstraintClass> {
    let mut out: Vec<ConstraintClass> = Vec::new();
    for &(class, e) in &solved.layout.violations {
        if solved.sol.z[e] > VIOLATION_TOL && !out.contains(&class) {
            out.push(class);
        }
    }
    out
}

fn into_result(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
    solved: Solved,
    violated: Vec<ConstraintClass>,
) -> Result<FilterResult, FilterError> {
    let z = &solved.sol.z;
    let lay = &solved.layout;
    // Round-off may put q a hair outside the rating circle.
    let q_safe: Vec<f64> = net
        .pv_units()
        .iter()
        .zip(&lay.q)
        .map(|(u, &k)| z[k].clamp(-u.q_max(), u.q_max()))
        .collect();
    let deviation = q_safe
        .iter()
        .zip(q_learn)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let pick = |idx: &[usize]| idx.iter().map(|&k| z[k]).collect::<Vec<f64>>();
    let relaxed = OperatingPoint {
        v_sq: pick(&lay.v),
        l_sq: pick(&lay.l),
        p_flow: pick(&lay.p_flow),
        q_flow: pick(&lay.q_flow),
        p0: z[lay.p0],
        q0: z[lay.q0],
        loss: net
            .lines()
            .iter()
            .zip(&lay.l)
            .map(|(line, &k)| line.r * z[k])
            .sum(),
        iterations: solved.sol.iterations,
        residual: solved.sol.kkt.max(),
    };
    let exactness_gap = relaxation_gap(net, &relaxed);
    let predicted = solve_power_flow(
        &net.apply_action(&q_safe)?,
        crate::grid::DEFAULT_TOL,
        crate::grid::DEFAULT_MAX_ITER,
    )?;
    Ok(FilterResult {
        q_safe,
        deviation,
        predicted,
        exactness_gap,
        inexact: exactness_gap > cfg.relaxation_tol,
        status: solved.sol.status,
        solve_time: solved.time,
        fallback: !violated.is_empty(),
        violated,
    })
}

enum Outcome {
    Filtered(FilterResult),
    /// No robust-feasible action; carries the penalized solve when it
    /// succeeded.
    Empty {
        slack: Option<Solved>,
        classes: Vec<ConstraintClass>,
        failure: Option<FilterError>,
    },
}

fn strict_then_slack(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
    bounds: &FilterBounds,
    limits: &OperationalLimits,
) -> Result<Outcome, FilterError> {
    let failure = match run(net, q_learn, cfg, bounds, limits, Mode::Strict) {
        Ok(solved) => match solved.sol.status {
            SolveStatus::Optimal | SolveStatus::AlmostOptimal => {
                let res = into_result(net, q_learn, cfg, solved, Vec::new())?;
                if res.inexact {
                    log::warn!("relaxation gap {:.3e} exceeds tolerance", res.exactness_gap);
                }
                return Ok(Outcome::Filtered(res));
            }
            SolveStatus::Infeasible => None,
            other => Some(FilterError::SolverFailure(format!(
                "solver stopped with status {other:?}"
            ))),
        },
        Err(e @ ConicError::NumericalFailure { .. }) => Some(FilterError::Conic(e)),
        Err(e) => return Err(e.into()),
    };
    // Either certified infeasible or the solver broke down: the penalized
    // program tells which limits are in the way.
    let relaxed = run(net, q_learn, cfg, bounds, limits, Mode::Slack)?;
    let (slack, classes) = if solved_ok(&relaxed) {
        let classes = violated_classes(&relaxed);
        (Some(relaxed), classes)
    } else {
        (None, Vec::new())
    };
    Ok(Outcome::Empty {
        slack,
        classes,
        failure,
    })
}

/// Projects `q_learn` onto the robust safe set.
///
/// Returns [`FilterError::InfeasibleFilter`] naming the constraint classes
/// that cannot be met when the set is empty.
pub fn filter_action(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
) -> Result<FilterResult, FilterError> {
    let (bounds, limits) = check_inputs(net, q_learn, cfg)?;
    match strict_then_slack(net, q_learn, cfg, bounds, &limits)? {
        Outcome::Filtered(res) => Ok(res),
        Outcome::Empty {
            classes, failure, ..
        } => match failure {
            Some(err) if classes.is_empty() => Err(err),
            _ => Err(FilterError::InfeasibleFilter { classes }),
        },
    }
}

/// Like [`filter_action`], but when the robust set is empty falls back to
/// the action closest to `q_learn` among those with the smallest limit
/// violation (Euclidean norm over all robust constraints), and marks the
/// result with `fallback`.
///
/// The fallback runs in two phases: the slack-penalized program finds the
/// smallest violation of each robust constraint, then the ordinary program
/// is re-solved with exactly those constraints loosened. The second phase
/// keeps the objective weights, and with them the exactness of the
/// relaxation.
pub fn filter_or_fallback(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
) -> Result<FilterResult, FilterError> {
    // Report the time of every solve, the failed strict one included.
    let (res, time) = timed(|| fallback_inner(net, q_learn, cfg));
    res.map(|r| FilterResult {
        solve_time: time,
        ..r
    })
}

fn fallback_inner(
    net: &Network,
    q_learn: &[f64],
    cfg: &DrsfConfig,
) -> Result<FilterResult, FilterError> {
    let (bounds, limits) = check_inputs(net, q_learn, cfg)?;
    let (phase1, classes) = match strict_then_slack(net, q_learn, cfg, bounds, &limits)? {
        Outcome::Filtered(res) => return Ok(res),
        Outcome::Empty {
            slack: Some(s),
            classes,
            ..
        } if !classes.is_empty() => (s, classes),
        Outcome::Empty {
            classes, failure, ..
        } => {
            return Err(match failure {
                Some(err) if classes.is_empty() => err,
                _ => FilterError::InfeasibleFilter { classes },
            })
        }
    };
    let shift: Vec<f64> = phase1
        .layout
        .violations
        .iter()
        .map(|&(_, e)| {
            let amount = phase1.sol.z[e];
            if amount > VIOLATION_TOL {
                amount + RELAX_PAD
            } else {
                0.0
            }
        })
        .collect();
    match run(net, q_learn, cfg, bounds, &limits, Mode::Relaxed(&shift)) {
        Ok(phase2) if solved_ok(&phase2) => {
            into_result(net, q_learn, cfg, phase2, classes)
        }
        other => {
            log::warn!(
                "loosened program failed ({:?}); using the penalized solution",
                other.map(|s| s.sol.status)
            );
            into_result(net, q_learn, cfg, phase1, classes)
        }
    }
}
