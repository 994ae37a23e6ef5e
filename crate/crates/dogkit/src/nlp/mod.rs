//! Built-in primal-dual interior-point solver for the transcribed sparse NLP.
//!
//! The backend contract: a problem supplies bounds, objective/gradient,
//! constraints/Jacobian with a fixed sparsity pattern, and an optional KKT
//! elimination order; the solver returns an [`NlpSolution`]. An external
//! solver adapter can be substituted behind the same surface.
//!
//! Algorithm: slacks for all inequality ranges, logarithmic barrier with
//! monotone mu reduction (factor 0.2), Newton steps on the perturbed KKT
//! system via sparse LDL^T with a fixed elimination order, damped
//! limited-memory BFGS Lagrangian Hessian handled through a low-rank
//! correction, fraction-to-the-boundary rule (tau = 0.995), and a monotone
//! l1 merit line search. Wrong inertia is repaired by adding delta I to the
//! Hessian block, delta doubling from 1e-8 and capped at 1e6.

pub mod lbfgs;
pub mod ldl;

use crate::error::{Error, Result};
use lbfgs::CompactBfgs;
use ldl::{LdlFactor, LdlSymbolic};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use std::time::Instant;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// One entry of the preferred KKT elimination order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktUnit {
    Var(usize),
    Con(usize),
}

/// A sparse NLP: minimize objective(z) subject to
/// c_lower <= constraints(z) <= c_upper and z_lower <= z <= z_upper.
/// Equalities are encoded as equal constraint bounds.
#[derive(Clone)]
pub struct NlpProblem {
    pub nz: usize,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub m: usize,
    pub c_lower: Vec<f64>,
    pub c_upper: Vec<f64>,
    pub objective: ScalarFn,
    /// Writes the dense gradient (length nz).
    pub gradient: VectorFn,
    /// Writes all constraint values (length m).
    pub constraints: VectorFn,
    /// Fixed constraint-Jacobian sparsity, sorted by (row, col), no
    /// duplicates. A superset of the numerically nonzero entries.
    pub jacobian_pattern: Vec<(usize, usize)>,
    /// Writes Jacobian values aligned with `jacobian_pattern`.
    pub jacobian: VectorFn,
    /// Upper-triangular (row <= col) variable pairs of a sparse positive
    /// semi-definite Lagrangian-Hessian base, sorted, no duplicates.
    pub hessian_base_pattern: Vec<(usize, usize)>,
    /// Writes base values aligned with `hessian_base_pattern` given the
    /// point and the constraint multipliers. Values must form a PSD matrix;
    /// the quasi-Newton model corrects the remainder.
    pub hessian_base: Option<Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>>,
    pub initial_guess: Vec<f64>,
    /// Interleaved variable/constraint elimination order for the KKT
    /// factorization; natural order (variables then constraints) if absent.
    pub kkt_order: Option<Vec<KktUnit>>,
}

/// Warm-start payload: primal point plus optional multipliers.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub primal: Vec<f64>,
    pub con_multipliers: Option<Vec<f64>>,
    pub bound_lower: Option<Vec<f64>>,
    pub bound_upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub warm_start: Option<WarmStart>,
    /// L-BFGS memory (pair count).
    pub memory: usize,
    /// Barrier parameter override; defaults to 0.1 cold and the payload
    /// complementarity (floor 1e-9) warm.
    pub mu_init: Option<f64>,
    /// Print an iteration line every N iterations (0 = silent).
    pub print_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-7,
            max_iterations: 2000,
            warm_start: None,
            memory: 10,
            mu_init: None,
            print_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleDetected,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub primal: Vec<f64>,
    pub con_multipliers: Vec<f64>,
    pub bound_lower: Vec<f64>,
    pub bound_upper: Vec<f64>,
    pub status: SolveStatus,
    pub kkt_error: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// Merit value at the start of each iteration (deterministic fingerprint
    /// of the iterate sequence).
    pub merit_trace: Vec<f64>,
}

const TAU_BOUNDARY: f64 = 0.995;
const DELTA_DUAL: f64 = 1e-8;
const DELTA_MIN: f64 = 1e-8;
const DELTA_MAX: f64 = 1e6;
const KAPPA_SIGMA: f64 = 1e10;
const INF: f64 = f64::INFINITY;

#[inline]
fn finite(v: f64) -> bool {
    v.is_finite()
}

/// Push a value strictly inside its bounds by a relative margin.
fn push_inside(v: f64, lo: f64, up: f64, kappa: f64) -> f64 {
    let mut x = v;
    if lo.is_finite() && up.is_finite() {
        let margin = (kappa * (up - lo)).min(0.5 * (up - lo));
        x = x.clamp(lo + margin, up - margin);
    } else if lo.is_finite() {
        let margin = kappa * (1.0 + lo.abs());
        x = x.max(lo + margin);
    } else if up.is_finite() {
        let margin = kappa * (1.0 + up.abs());
        x = x.min(up - margin);
    }
    x
}

struct Kkt {
    sym: LdlSymbolic,
    factor: LdlFactor,
    /// nzval slot per free variable diagonal.
    var_diag_slot: Vec<usize>,
    /// nzval slot per constraint diagonal.
    con_diag_slot: Vec<usize>,
    /// nzval slot per Jacobian pattern entry (None when the column is fixed).
    jac_slot: Vec<Option<usize>>,
    /// nzval slot per Hessian-base pattern entry (None when a side is fixed).
    base_slot: Vec<Option<usize>>,
    /// KKT position of each free variable (by free index).
    pos_free: Vec<usize>,
    /// KKT position of each constraint row.
    pos_con: Vec<usize>,
    ax: Vec<f64>,
    nk: usize,
}

fn build_kkt(
    problem: &NlpProblem,
    free: &[usize],
    free_index_of_var: &[Option<usize>],
) -> Result<Kkt> {
    let nf = free.len();
    let m = problem.m;
    let nk = nf + m;

    // Positions from the preferred elimination order, defaulting to
    // variables-then-constraints.
    let mut pos_free = vec![usize::MAX; nf];
    let mut pos_con = vec![usize::MAX; m];
    let mut next = 0usize;
    match &problem.kkt_order {
        Some(order) => {
            for unit in order {
                match *unit {
                    KktUnit::Var(v) => {
                        if v >= problem.nz {
                            return Err(Error::invalid("kkt_order variable out of range"));
                        }
                        if let Some(f) = free_index_of_var[v] {
                            if pos_free[f] != usize::MAX {
                                return Err(Error::invalid("kkt_order repeats a variable"));
                            }
                            pos_free[f] = next;
                            next += 1;
                        }
                    }
                    KktUnit::Con(r) => {
                        if r >= m || pos_con[r] != usize::MAX {
                            return Err(Error::invalid("kkt_order constraint invalid"));
                        }
                        pos_con[r] = next;
                        next += 1;
                    }
                }
            }
            if next != nk || pos_free.iter().any(|&p| p == usize::MAX) {
                return Err(Error::invalid("kkt_order does not cover the problem"));
            }
        }
        None => {
            for f in 0..nf {
                pos_free[f] = f;
            }
            for r in 0..m {
                pos_con[r] = nf + r;
            }
        }
    }

    // Triplets tagged by source, upper triangle (row <= col).
    #[derive(Clone, Copy)]
    enum Source {
        VarDiag(usize),
        ConDiag(usize),
        Jac(usize),
        Base(usize),
    }
    let mut trips: Vec<(usize, usize, Source)> = Vec::with_capacity(nk + problem.jacobian_pattern.len());
    for f in 0..nf {
        trips.push((pos_free[f], pos_free[f], Source::VarDiag(f)));
    }
    for r in 0..m {
        trips.push((pos_con[r], pos_con[r], Source::ConDiag(r)));
    }
    for (e, &(r, c)) in problem.jacobian_pattern.iter().enumerate() {
        if r >= m || c >= problem.nz {
            return Err(Error::invalid("jacobian pattern entry out of range"));
        }
        if let Some(f) = free_index_of_var[c] {
            let (pr, pc) = (pos_con[r], pos_free[f]);
            let (row, col) = if pr <= pc { (pr, pc) } else { (pc, pr) };
            trips.push((row, col, Source::Jac(e)));
        }
    }
    for (e, &(i, j)) in problem.hessian_base_pattern.iter().enumerate() {
        if i > j || j >= problem.nz {
            return Err(Error::invalid("hessian base pattern entry invalid"));
        }
        if let (Some(fi), Some(fj)) = (free_index_of_var[i], free_index_of_var[j]) {
            let (pi, pj) = (pos_free[fi], pos_free[fj]);
            let (row, col) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            trips.push((row, col, Source::Base(e)));
        }
    }
    trips.sort_by_key(|&(r, c, _)| (c, r));

    let mut ap = vec![0usize; nk + 1];
    let mut ai: Vec<usize> = Vec::with_capacity(trips.len());
    let mut var_diag_slot = vec![usize::MAX; nf];
    let mut con_diag_slot = vec![usize::MAX; m];
    let mut jac_slot = vec![None; problem.jacobian_pattern.len()];
    let mut base_slot = vec![None; problem.hessian_base_pattern.len()];
    let mut col_cursor = 0usize;
    let mut i = 0usize;
    while i < trips.len() {
        let (row, col, _) = trips[i];
        while col_cursor < col {
            col_cursor += 1;
            ap[col_cursor] = ai.len();
        }
        let slot = ai.len();
        ai.push(row);
        // merge duplicates sharing (row, col)
        let mut j = i;
        while j < trips.len() && trips[j].0 == row && trips[j].1 == col {
            match trips[j].2 {
                Source::VarDiag(f) => var_diag_slot[f] = slot,
                Source::ConDiag(r) => con_diag_slot[r] = slot,
                Source::Jac(e) => jac_slot[e] = Some(slot),
                Source::Base(e) => base_slot[e] = Some(slot),
            }
            j += 1;
        }
        i = j;
    }
    while col_cursor < nk {
        col_cursor += 1;
        ap[col_cursor] = ai.len();
    }
    let nnz = ai.len();
    let sym = LdlSymbolic::new(nk, ap, ai)?;
    let factor = LdlFactor::new(&sym);
    Ok(Kkt {
        sym,
        factor,
        var_diag_slot,
        con_diag_slot,
        jac_slot,
        base_slot,
        pos_free,
        pos_con,
        ax: vec![0.0; nnz],
        nk,
    })
}

/// y += H0 x restricted to free variables, from the base pattern/values.
fn apply_base_free(
    pattern: &[(usize, usize)],
    values: &[f64],
    free_index_of_var: &[Option<usize>],
    x_free: &[f64],
    y_free: &mut [f64],
) {
    for (e, &(i, j)) in pattern.iter().enumerate() {
        if let (Some(fi), Some(fj)) = (free_index_of_var[i], free_index_of_var[j]) {
            let v = values[e];
            y_free[fi] += v * x_free[fj];
            if fi != fj {
                y_free[fj] += v * x_free[fi];
            }
        }
    }
}

impl Kkt {
    /// Solve K0 x = b with one round of iterative refinement.
    fn solve_k0(&self, b: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(b);
        self.factor.solve_in_place(&self.sym, out);
        // refinement: r = b - K0 x
        let mut r = b.to_vec();
        self.spmv_sub(out, &mut r);
        let norm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm > 1e-12 {
            self.factor.solve_in_place(&self.sym, &mut r);
            for (o, d) in out.iter_mut().zip(&r) {
                *o += d;
            }
        }
    }

    /// r -= K0 x (symmetric multiply from the stored upper triangle).
    fn spmv_sub(&self, x: &[f64], r: &mut [f64]) {
        for col in 0..self.nk {
            for t in self.sym.ap[col]..self.sym.ap[col + 1] {
                let row = self.sym.ai[t];
                let v = self.ax[t];
                r[row] -= v * x[col];
                if row != col {
                    r[col] -= v * x[row];
                }
            }
        }
    }
}

/// Solve the NLP. Hard failures (non-finite initial point, inertia
/// correction exceeding its cap) return an error; soft non-convergence is
/// reported through [`NlpSolution::status`].
pub fn solve(problem: &NlpProblem, options: &SolveOptions) -> Result<NlpSolution> {
    let start = Instant::now();
    if options.tolerance <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if options.max_iterations < 1 {
        return Err(Error::invalid("max_iterations must be at least 1"));
    }
    let nz = problem.nz;
    let m = problem.m;
    if problem.z_lower.len() != nz || problem.z_upper.len() != nz {
        return Err(Error::invalid("variable bound lengths differ from nz"));
    }
    if problem.c_lower.len() != m || problem.c_upper.len() != m {
        return Err(Error::invalid("constraint bound lengths differ from m"));
    }
    for i in 0..nz {
        if problem.z_lower[i] > problem.z_upper[i] {
            return Err(Error::invalid(format!("variable {i} has crossed bounds")));
        }
    }

    // Fixed-variable elimination.
    let mut free: Vec<usize> = Vec::with_capacity(nz);
    let mut free_index_of_var: Vec<Option<usize>> = vec![None; nz];
    for v in 0..nz {
        if problem.z_lower[v] < problem.z_upper[v] {
            free_index_of_var[v] = Some(free.len());
            free.push(v);
        }
    }
    let nf = free.len();

    // Constraint classification; slacks for every inequality row.
    let mut is_eq = vec![false; m];
    let mut slack_of_row = vec![usize::MAX; m];
    let mut slack_rows: Vec<usize> = Vec::new();
    for r in 0..m {
        if problem.c_lower[r] > problem.c_upper[r] {
            return Err(Error::invalid(format!("constraint {r} has crossed bounds")));
        }
        if problem.c_lower[r] == problem.c_upper[r] {
            is_eq[r] = true;
        } else {
            slack_of_row[r] = slack_rows.len();
            slack_rows.push(r);
        }
    }
    let ns = slack_rows.len();

    // Initial primal point.
    let warm = options.warm_start.as_ref();
    let push = if warm.is_some() { 1e-8 } else { 1e-3 };
    let mut z: Vec<f64> = match warm {
        Some(w) if w.primal.len() == nz => w.primal.clone(),
        Some(_) => return Err(Error::invalid("warm-start primal length differs from nz")),
        None => problem.initial_guess.clone(),
    };
    if z.len() != nz {
        return Err(Error::invalid("initial guess length differs from nz"));
    }
    for v in 0..nz {
        if free_index_of_var[v].is_none() {
            z[v] = problem.z_lower[v];
        } else {
            z[v] = push_inside(z[v], problem.z_lower[v], problem.z_upper[v], push);
        }
    }

    let eval_obj = |z: &[f64]| (problem.objective)(z);
    let eval_con = |z: &[f64], out: &mut Vec<f64>| {
        out.resize(m, 0.0);
        (problem.constraints)(z, out);
    };

    let mut cvals = Vec::new();
    let f0 = eval_obj(&z);
    eval_con(&z, &mut cvals);
    if !finite(f0) || cvals.iter().any(|v| !finite(*v)) {
        return Err(Error::numerical(
            "non-finite objective or constraints at the initial point",
        ));
    }

    // Slack initialization inside bounds.
    let mut s = vec![0.0f64; ns];
    for (si, &r) in slack_rows.iter().enumerate() {
        s[si] = push_inside(cvals[r], problem.c_lower[r], problem.c_upper[r], 1e-3);
    }

    let mut lambda = match warm.and_then(|w| w.con_multipliers.as_ref()) {
        Some(l) if l.len() == m => l.clone(),
        _ => vec![0.0; m],
    };

    // Barrier parameter.
    let mut mu = options.mu_init.unwrap_or_else(|| {
        match warm {
            Some(w) => {
                if let (Some(bl), Some(bu)) = (&w.bound_lower, &w.bound_upper) {
                    // average payload complementarity over finite bounds
                    let mut acc = 0.0;
                    let mut cnt = 0usize;
                    for v in 0..nz.min(bl.len()).min(bu.len()) {
                        if problem.z_lower[v].is_finite() && bl[v] > 0.0 {
                            acc += bl[v] * (z[v] - problem.z_lower[v]);
                            cnt += 1;
                        }
                        if problem.z_upper[v].is_finite() && bu[v] > 0.0 {
                            acc += bu[v] * (problem.z_upper[v] - z[v]);
                            cnt += 1;
                        }
                    }
                    if cnt > 0 {
                        (acc / cnt as f64).max(1e-9)
                    } else {
                        1e-4
                    }
                } else {
                    1e-4
                }
            }
            None => 0.1,
        }
    });
    let mu_min = (options.tolerance / 100.0).min(1e-9);

    // Bound duals over w = (free z, s) packed as two parallel arrays.
    let nw = nf + ns;
    let w_lo = |i: usize| -> f64 {
        if i < nf {
            problem.z_lower[free[i]]
        } else {
            problem.c_lower[slack_rows[i - nf]]
        }
    };
    let w_up = |i: usize| -> f64 {
        if i < nf {
            problem.z_upper[free[i]]
        } else {
            problem.c_upper[slack_rows[i - nf]]
        }
    };
    let w_val = |z: &[f64], s: &[f64], i: usize| -> f64 {
        if i < nf {
            z[free[i]]
        } else {
            s[i - nf]
        }
    };

    let mut zl = vec![0.0f64; nw];
    let mut zu = vec![0.0f64; nw];
    for i in 0..nw {
        if w_lo(i).is_finite() {
            zl[i] = (mu / (w_val(&z, &s, i) - w_lo(i))).clamp(1e-10, 1e10);
        }
        if w_up(i).is_finite() {
            zu[i] = (mu / (w_up(i) - w_val(&z, &s, i))).clamp(1e-10, 1e10);
        }
    }
    if let Some(w) = warm {
        if let (Some(bl), Some(bu)) = (&w.bound_lower, &w.bound_upper) {
            if bl.len() == nz && bu.len() == nz {
                for (fi, &v) in free.iter().enumerate() {
                    if w_lo(fi).is_finite() && bl[v] > 0.0 {
                        zl[fi] = bl[v].clamp(1e-10, 1e10);
                    }
                    if w_up(fi).is_finite() && bu[v] > 0.0 {
                        zu[fi] = bu[v].clamp(1e-10, 1e10);
                    }
                }
            }
        }
    }

    let mut kkt = build_kkt(problem, &free, &free_index_of_var)?;
    let mut bfgs = CompactBfgs::new(nf, options.memory);
    let mut base_vals = vec![0.0f64; problem.hessian_base_pattern.len()];
    if let Some(hb) = &problem.hessian_base {
        bfgs.set_residual_mode();
        hb(&z, &lambda, &mut base_vals);
    }

    // Current evaluations.
    let mut fval = f0;
    let mut grad = vec![0.0f64; nz];
    (problem.gradient)(&z, &mut grad);
    let mut jvals = vec![0.0f64; problem.jacobian_pattern.len()];
    (problem.jacobian)(&z, &mut jvals);

    let jac_t_lambda = |jvals: &[f64], lambda: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.resize(nz, 0.0);
        for (e, &(r, c)) in problem.jacobian_pattern.iter().enumerate() {
            out[c] += jvals[e] * lambda[r];
        }
    };

    let mut jt_lambda = Vec::new();
    jac_t_lambda(&jvals, &lambda, &mut jt_lambda);

    let mut nu = 0.01f64; // l1 penalty weight
    let mut delta_last = 0.0f64;
    let mut merit_trace = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut kkt_error_out = f64::INFINITY;
    let mut iterations_done = 0usize;
    let mut consecutive_ls_failures = 0usize;
    let mut small_step_streak = 0usize;
    let mut wedged_count = 0usize;
    let mut feas_history: Vec<f64> = Vec::new();

    'outer: for iter in 0..options.max_iterations {
        iterations_done = iter + 1;

        // Residuals g (eq: c - bound; ineq: c - s).
        let mut g = vec![0.0f64; m];
        for r in 0..m {
            g[r] = if is_eq[r] {
                cvals[r] - problem.c_lower[r]
            } else {
                cvals[r] - s[slack_of_row[r]]
            };
        }
        let feas_raw = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        feas_history.push(feas_raw);

        // Stationarity and complementarity (both mu = 0 and current mu).
        let mut stat = 0.0f64;
        for (fi, &v) in free.iter().enumerate() {
            let r = grad[v] + jt_lambda[v] - zl[fi] + zu[fi];
            stat = stat.max(r.abs());
        }
        for (si, &r) in slack_rows.iter().enumerate() {
            let i = nf + si;
            let res = -lambda[r] - zl[i] + zu[i];
            stat = stat.max(res.abs());
        }
        let mut compl0 = 0.0f64;
        let mut compl_mu = 0.0f64;
        for i in 0..nw {
            if w_lo(i).is_finite() {
                let c = (w_val(&z, &s, i) - w_lo(i)) * zl[i];
                compl0 = compl0.max(c.abs());
                compl_mu = compl_mu.max((c - mu).abs());
            }
            if w_up(i).is_finite() {
                let c = (w_up(i) - w_val(&z, &s, i)) * zu[i];
                compl0 = compl0.max(c.abs());
                compl_mu = compl_mu.max((c - mu).abs());
            }
        }
        let mult_norm = lambda
            .iter()
            .chain(zl.iter())
            .chain(zu.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let denom = 1.0 + mult_norm;
        let err0 = (stat / denom).max(feas_raw / denom).max(compl0 / denom);
        kkt_error_out = err0;

        if err0 <= options.tolerance && feas_raw <= options.tolerance {
            status = SolveStatus::Optimal;
            break;
        }

        // Monotone barrier reduction: one step down per converged barrier
        // subproblem.
        let err_mu = (stat / denom).max(feas_raw / denom).max(compl_mu / denom);
        if err_mu <= 10.0 * mu && mu > mu_min {
            mu = (0.2 * mu).min(mu.powf(1.5)).max(mu_min);
        }

        // Infeasibility heuristic: no feasibility progress over a long
        // window at the barrier floor.
        if iter >= 60 && mu <= mu_min * 1.01 {
            let old = feas_history[iter - 50];
            if feas_raw > (1e4 * options.tolerance).max(1e-6) && feas_raw > 0.9 * old {
                status = SolveStatus::InfeasibleDetected;
                break;
            }
        }

        // Sigma terms.
        let mut sigma_w = vec![0.0f64; nw];
        for i in 0..nw {
            let wv = w_val(&z, &s, i);
            if w_lo(i).is_finite() {
                sigma_w[i] += zl[i] / (wv - w_lo(i));
            }
            if w_up(i).is_finite() {
                sigma_w[i] += zu[i] / (w_up(i) - wv);
            }
        }

        // RHS pieces.
        let mut r_z = vec![0.0f64; nf];
        for (fi, &v) in free.iter().enumerate() {
            let mut r = -(grad[v] + jt_lambda[v]);
            let wv = z[v];
            if problem.z_lower[v].is_finite() {
                r += mu / (wv - problem.z_lower[v]);
            }
            if problem.z_upper[v].is_finite() {
                r -= mu / (problem.z_upper[v] - wv);
            }
            r_z[fi] = r;
        }
        let mut r_s = vec![0.0f64; ns];
        for (si, &r) in slack_rows.iter().enumerate() {
            let i = nf + si;
            let mut v = lambda[r];
            if w_lo(i).is_finite() {
                v += mu / (s[si] - w_lo(i));
            }
            if w_up(i).is_finite() {
                v -= mu / (w_up(i) - s[si]);
            }
            r_s[si] = v;
        }

        // Factor with inertia correction.
        let mut delta = if delta_last > 0.0 { delta_last } else { 0.0 };
        let mut factored = false;
        loop {
            // zero everything, then accumulate each source (entries can be
            // shared between the diagonal, the base, and the Jacobian)
            kkt.ax.iter_mut().for_each(|v| *v = 0.0);
            for (fi, &slot) in kkt.var_diag_slot.iter().enumerate() {
                kkt.ax[slot] += bfgs.b0(fi) + sigma_w[fi] + delta;
            }
            for r in 0..m {
                let dr = if is_eq[r] {
                    DELTA_DUAL
                } else {
                    let si = slack_of_row[r];
                    DELTA_DUAL + 1.0 / (sigma_w[nf + si] + delta.max(0.0) + 1e-16)
                };
                kkt.ax[kkt.con_diag_slot[r]] += -dr;
            }
            for e in 0..problem.hessian_base_pattern.len() {
                if let Some(slot) = kkt.base_slot[e] {
                    kkt.ax[slot] += base_vals[e];
                }
            }
            for e in 0..problem.jacobian_pattern.len() {
                if let Some(slot) = kkt.jac_slot[e] {
                    kkt.ax[slot] += jvals[e];
                }
            }
            match kkt.factor.factor(&kkt.sym, &kkt.ax) {
                Ok(()) if kkt.factor.positive == nf && kkt.factor.negative == m => {
                    factored = true;
                    break;
                }
                _ => {
                    delta = if delta == 0.0 { DELTA_MIN } else { delta * 2.0 };
                    if delta > DELTA_MAX {
                        break;
                    }
                }
            }
        }
        if !factored {
            return Err(Error::numerical(
                "inertia correction exceeded its cap; KKT system is irreparably singular",
            ));
        }
        delta_last = if delta > 0.0 { (delta / 4.0).max(0.0) } else { 0.0 };

        // Low-rank BFGS correction via Woodbury.
        let rank = bfgs.rank();
        let mut w_cols_kkt: Vec<Vec<f64>> = Vec::with_capacity(rank);
        let mut k0_w: Vec<Vec<f64>> = Vec::with_capacity(rank);
        let mut e_lu = None;
        if rank > 0 {
            for col in bfgs.w_columns() {
                let mut dense = vec![0.0f64; kkt.nk];
                for (fi, &val) in col.iter().enumerate() {
                    dense[kkt.pos_free[fi]] = val;
                }
                let mut sol = Vec::new();
                kkt.solve_k0(&dense, &mut sol);
                w_cols_kkt.push(dense);
                k0_w.push(sol);
            }
            let mut e = DMatrix::zeros(rank, rank);
            for i in 0..rank {
                for j in 0..rank {
                    let dot: f64 = w_cols_kkt[i]
                        .iter()
                        .zip(&k0_w[j])
                        .map(|(a, b)| a * b)
                        .sum();
                    e[(i, j)] = bfgs.middle_matrix()[(i, j)] - dot;
                }
            }
            let lu = e.lu();
            if lu.is_invertible() {
                e_lu = Some(lu);
            }
        }
        let kkt_solve = |kkt: &Kkt, b: &[f64]| -> Vec<f64> {
            let mut x0 = Vec::new();
            kkt.solve_k0(b, &mut x0);
            if let Some(lu) = &e_lu {
                let wtx: Vec<f64> = w_cols_kkt
                    .iter()
                    .map(|c| c.iter().zip(&x0).map(|(a, b)| a * b).sum())
                    .collect();
                if let Some(y) = lu.solve(&DVector::from_vec(wtx)) {
                    for (j, kw) in k0_w.iter().enumerate() {
                        let yj = y[j];
                        for (xi, kwi) in x0.iter_mut().zip(kw) {
                            *xi += yj * kwi;
                        }
                    }
                }
            }
            x0
        };

        // Assemble RHS in KKT ordering and solve.
        let mut rhs = vec![0.0f64; kkt.nk];
        for fi in 0..nf {
            rhs[kkt.pos_free[fi]] = r_z[fi];
        }
        for r in 0..m {
            let mut v = -g[r];
            if !is_eq[r] {
                let si = slack_of_row[r];
                let inv = 1.0 / (sigma_w[nf + si] + delta.max(0.0) + 1e-16);
                v += inv * r_s[si];
            }
            rhs[kkt.pos_con[r]] = v;
        }
        let sol = kkt_solve(&kkt, &rhs);
        let mut dz = vec![0.0f64; nf];
        for fi in 0..nf {
            dz[fi] = sol[kkt.pos_free[fi]];
        }
        let mut dlambda = vec![0.0f64; m];
        for r in 0..m {
            dlambda[r] = sol[kkt.pos_con[r]];
        }
        let mut ds = vec![0.0f64; ns];
        for (si, &r) in slack_rows.iter().enumerate() {
            let inv = 1.0 / (sigma_w[nf + si] + delta.max(0.0) + 1e-16);
            ds[si] = inv * (dlambda[r] + r_s[si]);
        }

        // Bound dual steps.
        let dw = |i: usize| -> f64 { if i < nf { dz[i] } else { ds[i - nf] } };
        let mut dzl = vec![0.0f64; nw];
        let mut dzu = vec![0.0f64; nw];
        for i in 0..nw {
            let wv = w_val(&z, &s, i);
            if w_lo(i).is_finite() {
                let gap = wv - w_lo(i);
                dzl[i] = mu / gap - zl[i] - (zl[i] / gap) * dw(i);
            }
            if w_up(i).is_finite() {
                let gap = w_up(i) - wv;
                dzu[i] = mu / gap - zu[i] + (zu[i] / gap) * dw(i);
            }
        }

        // Fraction-to-the-boundary step limits.
        let mut alpha_p: f64 = 1.0;
        for i in 0..nw {
            let wv = w_val(&z, &s, i);
            let d = dw(i);
            if d < 0.0 && w_lo(i).is_finite() {
                alpha_p = alpha_p.min(-TAU_BOUNDARY * (wv - w_lo(i)) / d);
            }
            if d > 0.0 && w_up(i).is_finite() {
                alpha_p = alpha_p.min(TAU_BOUNDARY * (w_up(i) - wv) / d);
            }
        }
        let mut alpha_d: f64 = 1.0;
        for i in 0..nw {
            if dzl[i] < 0.0 && zl[i] > 0.0 {
                alpha_d = alpha_d.min(-TAU_BOUNDARY * zl[i] / dzl[i]);
            }
            if dzu[i] < 0.0 && zu[i] > 0.0 {
                alpha_d = alpha_d.min(-TAU_BOUNDARY * zu[i] / dzu[i]);
            }
        }

        // Merit function and directional derivative.
        let barrier = |z: &[f64], s: &[f64]| -> f64 {
            let mut b = 0.0;
            for i in 0..nw {
                let wv = w_val(z, s, i);
                if w_lo(i).is_finite() {
                    b -= (wv - w_lo(i)).ln();
                }
                if w_up(i).is_finite() {
                    b -= (w_up(i) - wv).ln();
                }
            }
            b
        };
        let g_l1 = |cv: &[f64], s: &[f64]| -> f64 {
            let mut acc = 0.0;
            for r in 0..m {
                acc += if is_eq[r] {
                    (cv[r] - problem.c_lower[r]).abs()
                } else {
                    (cv[r] - s[slack_of_row[r]]).abs()
                };
            }
            acc
        };
        // directional derivative of f + mu * barrier along (dz, ds)
        let mut dir_f = 0.0f64;
        for (fi, &v) in free.iter().enumerate() {
            let mut gb = grad[v];
            if problem.z_lower[v].is_finite() {
                gb -= mu / (z[v] - problem.z_lower[v]);
            }
            if problem.z_upper[v].is_finite() {
                gb += mu / (problem.z_upper[v] - z[v]);
            }
            dir_f += gb * dz[fi];
        }
        for si in 0..ns {
            let i = nf + si;
            let mut gb = 0.0;
            if w_lo(i).is_finite() {
                gb -= mu / (s[si] - w_lo(i));
            }
            if w_up(i).is_finite() {
                gb += mu / (w_up(i) - s[si]);
            }
            dir_f += gb * ds[si];
        }

        let g1 = g_l1(&cvals, &s);
        let lambda_new_norm = lambda
            .iter()
            .zip(&dlambda)
            .fold(0.0f64, |a, (l, d)| a.max((l + d).abs()));
        // track the current multiplier estimate rather than its historical
        // max; a stale large nu strangles the line search
        nu = 1.1 * lambda_new_norm + 0.01;
        if g1 > 1e-14 && dir_f - nu * g1 >= 0.0 {
            nu = dir_f / (0.5 * g1) + 0.1;
        }
        let mut dir = dir_f - nu * g1;
        let phi0 = fval + mu * barrier(&z, &s) + nu * g1;
        if dir >= 0.0 {
            dir = -1e-16 * (1.0 + phi0.abs());
        }
        merit_trace.push(phi0);

        // Armijo backtracking with one second-order correction: a full step
        // often fails only through quadratic constraint infeasibility, which
        // a correction solve against the same factorization removes.
        let mut alpha = alpha_p;
        let mut accepted = false;
        let mut z_try = z.clone();
        let mut s_try = s.clone();
        let mut c_try = Vec::new();
        let mut f_try = 0.0;
        let mut soc_tried = false;
        for attempt in 0..60 {
            for (fi, &v) in free.iter().enumerate() {
                z_try[v] = z[v] + alpha * dz[fi];
            }
            for si in 0..ns {
                s_try[si] = s[si] + alpha * ds[si];
            }
            f_try = eval_obj(&z_try);
            eval_con(&z_try, &mut c_try);
            let trial_ok = finite(f_try) && c_try.iter().all(|v| finite(*v));
            if trial_ok {
                let phi_try = f_try + mu * barrier(&z_try, &s_try) + nu * g_l1(&c_try, &s_try);
                if finite(phi_try) && phi_try <= phi0 + 1e-4 * alpha * dir {
                    accepted = true;
                    break;
                }
            }
            if trial_ok && attempt == 0 && !soc_tried {
                soc_tried = true;
                let mut rhs2 = vec![0.0f64; kkt.nk];
                for r in 0..m {
                    let e_r = if is_eq[r] {
                        c_try[r] - problem.c_lower[r]
                    } else {
                        c_try[r] - s_try[slack_of_row[r]]
                    };
                    rhs2[kkt.pos_con[r]] = -e_r;
                }
                let sol2 = kkt_solve(&kkt, &rhs2);
                let mut dz_soc = vec![0.0f64; nf];
                for fi in 0..nf {
                    dz_soc[fi] = sol2[kkt.pos_free[fi]];
                }
                let mut ds_soc = vec![0.0f64; ns];
                for (si, &r) in slack_rows.iter().enumerate() {
                    let inv = 1.0 / (sigma_w[nf + si] + delta.max(0.0) + 1e-16);
                    ds_soc[si] = inv * sol2[kkt.pos_con[r]];
                }
                // fraction-to-boundary for the correction from the trial point
                let mut a_soc: f64 = 1.0;
                for i in 0..nw {
                    let wv = if i < nf { z_try[free[i]] } else { s_try[i - nf] };
                    let d = if i < nf { dz_soc[i] } else { ds_soc[i - nf] };
                    if d < 0.0 && w_lo(i).is_finite() {
                        a_soc = a_soc.min(-TAU_BOUNDARY * (wv - w_lo(i)) / d);
                    }
                    if d > 0.0 && w_up(i).is_finite() {
                        a_soc = a_soc.min(TAU_BOUNDARY * (w_up(i) - wv) / d);
                    }
                }
                let mut z_soc = z_try.clone();
                let mut s_soc = s_try.clone();
                for (fi, &v) in free.iter().enumerate() {
                    z_soc[v] = z_try[v] + a_soc * dz_soc[fi];
                }
                for si in 0..ns {
                    s_soc[si] = s_try[si] + a_soc * ds_soc[si];
                }
                let f_soc = eval_obj(&z_soc);
                let mut c_soc = Vec::new();
                eval_con(&z_soc, &mut c_soc);
                if finite(f_soc) && c_soc.iter().all(|v| finite(*v)) {
                    let phi_soc =
                        f_soc + mu * barrier(&z_soc, &s_soc) + nu * g_l1(&c_soc, &s_soc);
                    if finite(phi_soc) && phi_soc <= phi0 + 1e-4 * alpha * dir {
                        z_try = z_soc;
                        s_try = s_soc;
                        f_try = f_soc;
                        c_try = c_soc;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break;
            }
        }
        if options.print_every > 0 && iter % options.print_every == 0 {
            let dz_norm = dz.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            eprintln!(
                "iter {iter:4}  f={fval:+.6e}  feas={feas_raw:.3e}  stat={stat:.3e}  compl={compl0:.3e}  mu={mu:.1e}  alpha={alpha:.2e}/{alpha_p:.2e}  ad={alpha_d:.2e}  |dz|={dz_norm:.2e}  delta={delta:.1e}  nu={nu:.1e}{}",
                if accepted { "" } else { "  LS-FAIL" }
            );
        }

        // A vanishing primal step means the barrier subproblem is wedged at
        // this mu: refresh the multipliers along a damped dual direction and
        // force the monotone mu reduction onward.
        let step_scale = dz
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(ds.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        if accepted && alpha * step_scale <= 1e-12 {
            let mut jtdl = Vec::new();
            jac_t_lambda(&jvals, &dlambda, &mut jtdl);
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for (fi, &v) in free.iter().enumerate() {
                let r0 = grad[v] + jt_lambda[v] - zl[fi] + zu[fi];
                num += r0 * jtdl[v];
                den += jtdl[v] * jtdl[v];
            }
            for (si, &r) in slack_rows.iter().enumerate() {
                let i = nf + si;
                let r0 = -lambda[r] - zl[i] + zu[i];
                num += r0 * -dlambda[r];
                den += dlambda[r] * dlambda[r];
            }
            let t = if den > 0.0 { (-num / den).clamp(0.0, 1.0) } else { 0.0 };
            if t > 1e-10 {
                for r in 0..m {
                    lambda[r] += t * dlambda[r];
                }
                jac_t_lambda(&jvals, &lambda, &mut jt_lambda);
            }
            // shorten the next step rather than forcing the barrier down
            delta_last = (delta_last.max(DELTA_MIN) * 10.0).min(1.0);
            wedged_count += 1;
            if wedged_count >= 60 {
                status = SolveStatus::MaxIterations;
                break 'outer;
            }
            continue;
        }
        wedged_count = 0;
        if !accepted {
            consecutive_ls_failures += 1;
            bfgs.reset();
            delta_last = (delta_last.max(DELTA_MIN) * 8.0).min(DELTA_MAX);
            if consecutive_ls_failures >= 3 {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            }
            continue;
        }
        consecutive_ls_failures = 0;
        // Chronic backtracking signals a stale quasi-Newton model.
        if alpha < 1e-2 * alpha_p {
            small_step_streak += 1;
            if small_step_streak >= 8 {
                bfgs.reset();
                small_step_streak = 0;
            }
        } else {
            small_step_streak = 0;
        }

        // Accept the step (including any second-order correction).
        let step_free: Vec<f64> = free.iter().map(|&v| z_try[v] - z[v]).collect();
        z = z_try;
        s = s_try;
        for r in 0..m {
            lambda[r] += alpha * dlambda[r];
        }
        for i in 0..nw {
            zl[i] += alpha_d * dzl[i];
            zu[i] += alpha_d * dzu[i];
        }
        // dual safeguard box around mu/(gap)
        for i in 0..nw {
            let wv = w_val(&z, &s, i);
            if w_lo(i).is_finite() {
                let gap = (wv - w_lo(i)).max(1e-300);
                zl[i] = zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
            if w_up(i).is_finite() {
                let gap = (w_up(i) - wv).max(1e-300);
                zu[i] = zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
        }

        // Refresh evaluations and update the quasi-Newton model on the
        // curvature the sparse base does not explain.
        fval = f_try;
        cvals = c_try.clone();
        let mut grad_new = vec![0.0f64; nz];
        (problem.gradient)(&z, &mut grad_new);
        let mut jvals_new = vec![0.0f64; problem.jacobian_pattern.len()];
        (problem.jacobian)(&z, &mut jvals_new);
        let mut jtl_new = Vec::new();
        jac_t_lambda(&jvals_new, &lambda, &mut jtl_new);
        let mut jtl_old_at_new_lambda = Vec::new();
        jac_t_lambda(&jvals, &lambda, &mut jtl_old_at_new_lambda);
        if let Some(hb) = &problem.hessian_base {
            hb(&z, &lambda, &mut base_vals);
        }
        let mut y_vec = vec![0.0f64; nf];
        for (fi, &v) in free.iter().enumerate() {
            y_vec[fi] =
                (grad_new[v] + jtl_new[v]) - (grad[v] + jtl_old_at_new_lambda[v]);
        }
        if problem.hessian_base.is_some() {
            let mut h0s = vec![0.0f64; nf];
            apply_base_free(
                &problem.hessian_base_pattern,
                &base_vals,
                &free_index_of_var,
                &step_free,
                &mut h0s,
            );
            for (yv, h) in y_vec.iter_mut().zip(&h0s) {
                *yv -= h;
            }
        }
        bfgs.update(&step_free, &y_vec);
        grad = grad_new;
        jvals = jvals_new;
        jt_lambda = jtl_new;
    }

    // Map bound duals back to full variable space.
    let mut bl_full = vec![0.0f64; nz];
    let mut bu_full = vec![0.0f64; nz];
    for (fi, &v) in free.iter().enumerate() {
        bl_full[v] = zl[fi];
        bu_full[v] = zu[fi];
    }
    Ok(NlpSolution {
        primal: z,
        con_multipliers: lambda,
        bound_lower: bl_full,
        bound_upper: bu_full,
        status,
        kkt_error: kkt_error_out,
        iterations: iterations_done,
        wall_time: start.elapsed().as_secs_f64(),
        merit_trace,
    })
}
