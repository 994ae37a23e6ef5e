//! Legendre-Gauss-Radau collocation primitives for a single interval.
//!
//! The N LGR points on [-1, +1) are the roots of P_{N-1} + P_N where P is
//! the Legendre polynomial; the left endpoint -1 is always included and +1
//! never is. State interpolation uses the N collocation points plus the
//! noncollocated endpoint +1 as support, so the differentiation matrix is
//! N x (N+1).

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Maximum per-interval collocation count. Keeps conditioning bounded.
pub const MAX_COLLOCATION: usize = 64;

/// Nodes, quadrature weights, and differentiation matrix for one interval.
#[derive(Debug, Clone)]
pub struct RadauRule {
    /// Collocation count N.
    pub n: usize,
    /// N nodes in [-1, +1), ascending, first exactly -1.
    pub nodes: Vec<f64>,
    /// N positive quadrature weights summing to 2.
    pub weights: Vec<f64>,
    /// Nodes plus the noncollocated endpoint +1 (length N+1).
    pub support_points: Vec<f64>,
    /// Barycentric weights of the support points (length N+1).
    pub barycentric: Vec<f64>,
    /// Barycentric weights of the nodes alone (length N), for control
    /// interpolation.
    pub node_barycentric: Vec<f64>,
    /// N x (N+1) differentiation matrix: row i holds the derivative of each
    /// Lagrange basis (over the support points) at node i.
    pub diff_matrix: Vec<Vec<f64>>,
}

/// Legendre polynomial P_n(x) and its derivative by the three-term recurrence.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    // P'_n(x) = n (x P_n - P_{n-1}) / (x^2 - 1), regularized at the endpoints.
    let dp = if (x * x - 1.0).abs() < 1e-14 {
        let nf = n as f64;
        // P'_n(+/-1) = (+/-1)^(n-1) n(n+1)/2
        let sign = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 - 1) };
        sign * nf * (nf + 1.0) / 2.0
    } else {
        n as f64 * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// q(x) = P_{n-1}(x) + P_n(x) and its derivative.
fn radau_poly(n: usize, x: f64) -> (f64, f64) {
    let (p0, dp0) = legendre_and_derivative(n - 1, x);
    let (p1, dp1) = legendre_and_derivative(n, x);
    (p0 + p1, dp0 + dp1)
}

/// Interior LGR nodes: the n-1 roots of (P_{n-1}+P_n)/(1+x), isolated on a
/// cosine grid and polished by safeguarded Newton iteration.
fn interior_nodes(n: usize) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(Vec::new());
    }
    // Sample densely enough that consecutive roots are separated by at least
    // one grid point; the roots interlace the Gauss nodes of degree n.
    let grid = 16 * n;
    let mut xs = Vec::with_capacity(grid + 1);
    for j in 0..=grid {
        // cosine spacing clusters samples near +/-1 where roots accumulate
        let x = -(std::f64::consts::PI * j as f64 / grid as f64).cos();
        xs.push(x);
    }
    let eval = |x: f64| radau_poly(n, x).0 / (1.0 + x);
    let mut roots = Vec::with_capacity(n - 1);
    let mut prev_x = -1.0 + 1e-9;
    let mut prev_f = eval(prev_x);
    for &x in xs.iter().skip(1) {
        let x = x.min(1.0 - 1e-12);
        if x <= prev_x {
            continue;
        }
        let f = eval(x);
        if prev_f == 0.0 {
            roots.push(prev_x);
        } else if prev_f * f < 0.0 {
            // bracketed: bisect a few times, then Newton on q itself
            let (mut a, mut b) = (prev_x, x);
            let (mut fa, _) = (prev_f, f);
            for _ in 0..20 {
                let mid = 0.5 * (a + b);
                let fm = eval(mid);
                if fa * fm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            let mut root = 0.5 * (a + b);
            for _ in 0..50 {
                let (q, dq) = radau_poly(n, root);
                let step = q / dq;
                root -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            roots.push(root.clamp(a - 1e-12, b + 1e-12));
        }
        prev_x = x;
        prev_f = f;
    }
    if roots.len() != n - 1 {
        return Err(Error::numerical(format!(
            "isolated {} of {} interior Radau roots for n={}",
            roots.len(),
            n - 1,
            n
        )));
    }
    for &r in &roots {
        let (q, _) = radau_poly(n, r);
        if q.abs() > 1e-12 {
            return Err(Error::numerical(format!(
                "Radau root residual {:.3e} exceeds 1e-12 at x={} (n={})",
                q.abs(),
                r,
                n
            )));
        }
    }
    Ok(roots)
}

/// Barycentric weights for a set of distinct points, normalized so the
/// largest magnitude is 1 (the formula is scale invariant).
pub fn barycentric_weights(points: &[f64]) -> Result<Vec<f64>> {
    let n = points.len();
    let mut w = vec![1.0f64; n];
    for j in 0..n {
        for l in 0..n {
            if l != j {
                let d = points[j] - points[l];
                if d == 0.0 {
                    return Err(Error::invalid(format!(
                        "duplicate support points at index {j} and {l}"
                    )));
                }
                w[j] /= d;
            }
        }
    }
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut w {
        *v /= scale;
    }
    Ok(w)
}

/// Compute the LGR rule for `n` collocation points.
///
/// Results are memoized process-wide; rules are immutable and cheap to share.
pub fn compute_radau_rule(n: usize) -> Result<Arc<RadauRule>> {
    if n < 1 || n > MAX_COLLOCATION {
        return Err(Error::invalid(format!(
            "collocation count {n} outside [1, {MAX_COLLOCATION}]"
        )));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<RadauRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return Ok(rule.clone());
    }

    let mut nodes = Vec::with_capacity(n);
    nodes.push(-1.0);
    nodes.extend(interior_nodes(n)?);

    // Classical left-Radau weights: w_1 = 2/n^2 at the endpoint and
    // w_i = (1 - x_i) / (n^2 P_{n-1}(x_i)^2) in the interior.
    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    weights.push(2.0 / (nf * nf));
    for &x in nodes.iter().skip(1) {
        let (p, _) = legendre_and_derivative(n - 1, x);
        weights.push((1.0 - x) / (nf * nf * p * p));
    }

    let mut support_points = nodes.clone();
    support_points.push(1.0);
    let bary = barycentric_weights(&support_points)?;
    let node_bary = barycentric_weights(&nodes)?;

    // D_ij = l_j'(tau_i) from the barycentric weights: for i != j,
    // D_ij = (w_j / w_i) / (tau_i - tau_j); rows sum to zero.
    let mut diff_matrix = vec![vec![0.0f64; n + 1]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..=n {
            if j != i {
                let d = bary[j] / bary[i] / (support_points[i] - support_points[j]);
                diff_matrix[i][j] = d;
                diag -= d;
            }
        }
        diff_matrix[i][i] = diag;
    }

    let rule = Arc::new(RadauRule {
        n,
        nodes,
        weights,
        support_points,
        barycentric: bary,
        node_barycentric: node_bary,
        diff_matrix,
    });
    cache.lock().unwrap().insert(n, rule.clone());
    Ok(rule)
}

/// Value of the interpolating polynomial through (support_points, values) at
/// `tau`, by the second barycentric formula. Extrapolation outside the
/// support hull is permitted.
pub fn interpolate(support_points: &[f64], values: &[f64], tau: f64) -> Result<f64> {
    if support_points.len() != values.len() {
        return Err(Error::invalid(format!(
            "support ({}) and value ({}) lengths differ",
            support_points.len(),
            values.len()
        )));
    }
    if support_points.is_empty() {
        return Err(Error::invalid("empty support"));
    }
    let w = barycentric_weights(support_points)?;
    Ok(barycentric_eval(support_points, &w, values, tau))
}

/// Barycentric evaluation with precomputed weights.
pub fn barycentric_eval(points: &[f64], bary: &[f64], values: &[f64], tau: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&x, &w), &f) in points.iter().zip(bary).zip(values) {
        let d = tau - x;
        if d == 0.0 {
            return f;
        }
        let c = w / d;
        num += c * f;
        den += c;
    }
    num / den
}

/// Derivative of the interpolant at `tau` (Schneider-Werner form at nodes,
/// the quotient-rule form elsewhere).
pub fn barycentric_derivative(points: &[f64], bary: &[f64], values: &[f64], tau: f64) -> f64 {
    for (i, &x) in points.iter().enumerate() {
        if tau == x {
            let mut acc = 0.0;
            for (j, (&xj, &wj)) in points.iter().zip(bary).enumerate() {
                if j != i {
                    acc += wj / bary[i] * (values[i] - values[j]) / (x - xj);
                }
            }
            return -acc;
        }
    }
    let p = barycentric_eval(points, bary, values, tau);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&x, &w), &f) in points.iter().zip(bary).zip(values) {
        let d = tau - x;
        let c = w / d;
        num += c * (p - f) / d;
        den += c;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n1_rule_is_linear_basis_on_two_points() {
        let r = compute_radau_rule(1).unwrap();
        assert_eq!(r.nodes, vec![-1.0]);
        assert_eq!(r.weights, vec![2.0]);
        assert_eq!(r.support_points, vec![-1.0, 1.0]);
        assert!((r.diff_matrix[0][0] + 0.5).abs() < 1e-15);
        assert!((r.diff_matrix[0][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn n2_nodes_and_weights() {
        // roots of P1+P2 = (3 tau^2 + 2 tau - 1)/2: tau = -1 and 1/3;
        // verified below by quadrature exactness on tau^0, tau^1, tau^2.
        let r = compute_radau_rule(2).unwrap();
        assert!((r.nodes[0] + 1.0).abs() == 0.0);
        assert!((r.nodes[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!((r.weights[0] - 0.5).abs() < 1e-14);
        assert!((r.weights[1] - 1.5).abs() < 1e-14);
        for d in 0..=2 {
            let q: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(d))
                .sum();
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-14, "degree {d}");
        }
    }

    #[test]
    fn n3_endpoint_weight() {
        let r = compute_radau_rule(3).unwrap();
        assert!((r.weights[0] - 2.0 / 9.0).abs() < 1e-14);
        let sum: f64 = r.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-13);
        for d in 0..=4 {
            let q: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(d))
                .sum();
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-13, "degree {d}");
        }
    }

    #[test]
    fn rule_invariants_up_to_40() {
        for n in 1..=40 {
            let r = compute_radau_rule(n).unwrap();
            assert_eq!(r.nodes.len(), n);
            assert_eq!(r.nodes[0], -1.0);
            for w in &r.weights {
                assert!(*w > 0.0);
            }
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-12, "n={n} weight sum {sum}");
            for i in 1..n {
                assert!(r.nodes[i] > r.nodes[i - 1]);
                assert!(r.nodes[i] < 1.0);
            }
            for row in &r.diff_matrix {
                let s: f64 = row.iter().sum();
                assert!(s.abs() < 1e-10, "n={n} row sum {s}");
            }
        }
    }

    #[test]
    fn quadrature_exactness_to_2n_minus_2() {
        for n in 1..=40usize {
            let r = compute_radau_rule(n).unwrap();
            for d in 0..=(2 * n - 2) {
                let q: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(d as i32))
                    .sum();
                let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
                assert!((q - exact).abs() < 1e-12, "n={n} degree {d}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn differentiation_exactness_to_degree_n() {
        for n in 1..=40usize {
            let r = compute_radau_rule(n).unwrap();
            // p(tau) = tau^n sampled at support points; p' = n tau^(n-1)
            let samples: Vec<f64> = r.support_points.iter().map(|x| x.powi(n as i32)).collect();
            for i in 0..n {
                let d: f64 = r.diff_matrix[i]
                    .iter()
                    .zip(&samples)
                    .map(|(dij, s)| dij * s)
                    .sum();
                let exact = n as f64 * r.nodes[i].powi(n as i32 - 1);
                assert!((d - exact).abs() < 1e-10, "n={n} node {i}: {d} vs {exact}");
            }
        }
    }

    #[test]
    fn out_of_range_counts_rejected() {
        assert!(compute_radau_rule(0).is_err());
        assert!(compute_radau_rule(65).is_err());
    }

    #[test]
    fn interpolate_reproduces_constants_identity_and_quadratics() {
        let s = [-1.0, 0.0, 1.0];
        assert_eq!(interpolate(&s, &[1.0, 1.0, 1.0], 0.37).unwrap(), 1.0);
        let id = interpolate(&s, &s, 0.37).unwrap();
        assert!((id - 0.37).abs() < 1e-15);
        let q = interpolate(&s, &[1.0, 0.0, 1.0], 0.5).unwrap();
        assert!((q - 0.25).abs() < 1e-15);
    }

    #[test]
    fn interpolate_rejects_bad_inputs() {
        assert!(interpolate(&[0.0, 1.0], &[1.0], 0.5).is_err());
        assert!(interpolate(&[0.0, 0.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn barycentric_reproduces_random_polynomials() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for n in 1..=20usize {
            let r = compute_radau_rule(n).unwrap();
            let coeffs: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let poly = |x: f64| {
                coeffs
                    .iter()
                    .rev()
                    .fold(0.0, |acc, c| acc * x + c)
            };
            let values: Vec<f64> = r.support_points.iter().map(|&x| poly(x)).collect();
            for _ in 0..100 {
                let x = rng.gen_range(-1.0..1.0);
                let p = barycentric_eval(&r.support_points, &r.barycentric, &values, x);
                assert!((p - poly(x)).abs() < 1e-11, "n={n}");
            }
        }
    }

    #[test]
    fn derivative_formula_matches_diff_matrix() {
        let r = compute_radau_rule(6).unwrap();
        let values: Vec<f64> = r.support_points.iter().map(|x| (2.0 * x).sin()).collect();
        for i in 0..r.n {
            let via_matrix: f64 = r.diff_matrix[i]
                .iter()
                .zip(&values)
                .map(|(d, v)| d * v)
                .sum();
            let via_bary =
                barycentric_derivative(&r.support_points, &r.barycentric, &values, r.nodes[i]);
            assert!((via_matrix - via_bary).abs() < 1e-10);
        }
    }
}
