//! Damped limited-memory BFGS approximation of the Lagrangian Hessian in
//! compact form: B = theta I - W M^{-1} W^T with W = [theta S, Y]. Powell
//! damping keeps B positive definite, which in turn keeps the condensed KKT
//! system quasi-definite.

use nalgebra::DMatrix;
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct CompactBfgs {
    n: usize,
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub theta: f64,
    /// Known diagonal curvature (from the objective); the effective base is
    /// max(base_i, theta) per component.
    base: Vec<f64>,
    residual_mode: bool,
    /// Middle matrix M = [[S^T B0 S, L], [L^T, -D]] (2m x 2m).
    middle: DMatrix<f64>,
    /// W columns: [B0 s_1 .. B0 s_m, y_1 .. y_m].
    w_cols: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CompactBfgs {
    pub fn new(n: usize, memory: usize) -> Self {
        CompactBfgs {
            n,
            memory: memory.max(1),
            pairs: VecDeque::new(),
            theta: 1.0,
            base: vec![0.0; n],
            residual_mode: false,
            middle: DMatrix::zeros(0, 0),
            w_cols: Vec::new(),
        }
    }

    /// Install a nonnegative diagonal curvature estimate for B0. The scalar
    /// theta then only carries curvature the base misses, so it starts small.
    pub fn set_base(&mut self, base: Vec<f64>) {
        debug_assert_eq!(base.len(), self.n);
        self.base = base
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1e8) } else { 0.0 })
            .collect();
        if self.base.iter().any(|&v| v > 0.0) {
            self.theta = self.theta.min(1e-5);
        }
        self.rebuild();
    }

    /// Effective B0 diagonal entry.
    #[inline]
    pub fn b0(&self, i: usize) -> f64 {
        self.base[i] + self.theta
    }

    /// Mark that an external sparse Hessian base carries the bulk curvature:
    /// theta then only regularizes the residual model.
    pub fn set_residual_mode(&mut self) {
        self.residual_mode = true;
        self.theta = self.theta.min(1e-5);
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
        self.theta = if self.residual_mode || self.base.iter().any(|&v| v > 0.0) {
            1e-5
        } else {
            1.0
        };
        self.rebuild();
    }

    pub fn rank(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn w_columns(&self) -> &[Vec<f64>] {
        &self.w_cols
    }

    pub fn middle_matrix(&self) -> &DMatrix<f64> {
        &self.middle
    }

    /// B v = B0 v - W (M^{-1} (W^T v)).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, (o, x)) in out.iter_mut().zip(v).enumerate() {
            *o = self.b0(i) * x;
        }
        let m2 = self.rank();
        if m2 == 0 {
            return;
        }
        let wtv: Vec<f64> = self.w_cols.iter().map(|c| dot(c, v)).collect();
        let rhs = nalgebra::DVector::from_vec(wtv);
        let lu = self.middle.clone().lu();
        if let Some(sol) = lu.solve(&rhs) {
            for (c, s) in self.w_cols.iter().zip(sol.iter()) {
                for (o, x) in out.iter_mut().zip(c) {
                    *o -= s * x;
                }
            }
        }
    }

    /// Powell-damped update. Skips the pair when curvature is irreparably
    /// small. Returns true when the pair was stored.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        debug_assert_eq!(s.len(), self.n);
        let s_norm = dot(s, s).sqrt();
        let y_norm = dot(y, y).sqrt();
        if s_norm < 1e-14 || y_norm < 1e-14 {
            return false;
        }
        let mut bs = vec![0.0; self.n];
        self.apply(s, &mut bs);
        let s_bs = dot(s, &bs).max(1e-300);
        let s_y = dot(s, y);
        let mut y_used: Vec<f64> = y.to_vec();
        let mut s_y_used = s_y;
        if s_y < 0.2 * s_bs {
            let phi = 0.8 * s_bs / (s_bs - s_y);
            for (yy, b) in y_used.iter_mut().zip(&bs) {
                *yy = phi * *yy + (1.0 - phi) * b;
            }
            s_y_used = dot(s, &y_used);
        }
        if s_y_used <= 1e-12 * s_norm * dot(&y_used, &y_used).sqrt() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        // residual curvature along s not explained by the diagonal base
        let s_base_s: f64 = s.iter().enumerate().map(|(i, v)| self.base[i] * v * v).sum();
        self.pairs.push_back((s.to_vec(), y_used.clone()));
        self.theta = ((s_y_used - s_base_s) / dot(s, s)).clamp(1e-6, 1e12);
        self.rebuild();
        true
    }

    fn rebuild(&mut self) {
        let m = self.pairs.len();
        self.w_cols.clear();
        for (s, _) in &self.pairs {
            self.w_cols
                .push(s.iter().enumerate().map(|(i, v)| self.b0(i) * v).collect());
        }
        for (_, y) in &self.pairs {
            self.w_cols.push(y.clone());
        }
        let mut mid = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                // S^T B0 S
                let ss: f64 = self.pairs[i]
                    .0
                    .iter()
                    .zip(&self.pairs[j].0)
                    .enumerate()
                    .map(|(k, (a, b))| self.b0(k) * a * b)
                    .sum();
                mid[(i, j)] = ss;
                // L_ij = s_i^T y_j for i > j
                if i > j {
                    let l = dot(&self.pairs[i].0, &self.pairs[j].1);
                    mid[(i, m + j)] = l;
                    mid[(m + j, i)] = l;
                }
            }
            let d = dot(&self.pairs[i].0, &self.pairs[i].1);
            mid[(m + i, m + i)] = -d;
        }
        self.middle = mid;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense reference BFGS update for cross-checking the compact form.
    fn dense_bfgs(theta: f64, pairs: &[(Vec<f64>, Vec<f64>)], n: usize) -> Vec<Vec<f64>> {
        let mut b = vec![vec![0.0; n]; n];
        for (i, row) in b.iter_mut().enumerate() {
            row[i] = theta;
        }
        for (s, y) in pairs {
            let mut bs = vec![0.0; n];
            for i in 0..n {
                bs[i] = (0..n).map(|j| b[i][j] * s[j]).sum();
            }
            let sbs: f64 = (0..n).map(|i| s[i] * bs[i]).sum();
            let sy: f64 = dot(s, y);
            for i in 0..n {
                for j in 0..n {
                    b[i][j] += -bs[i] * bs[j] / sbs + y[i] * y[j] / sy;
                }
            }
        }
        b
    }

    #[test]
    fn compact_matches_dense_for_curved_pairs() {
        let n = 4;
        let mut c = CompactBfgs::new(n, 5);
        let pairs = vec![
            (vec![1.0, 0.0, 0.5, -0.2], vec![2.0, 0.1, 0.4, -0.1]),
            (vec![0.1, 1.0, 0.0, 0.3], vec![0.2, 3.0, 0.1, 0.6]),
        ];
        for (s, y) in &pairs {
            assert!(c.update(s, y));
        }
        // dense reference with the same final theta (compact form rescales
        // B0 retroactively, so apply pairs to theta I)
        let b = dense_bfgs(c.theta, &pairs, n);
        let v = vec![0.3, -1.0, 0.2, 0.7];
        let mut got = vec![0.0; n];
        c.apply(&v, &mut got);
        let want: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i][j] * v[j]).sum()).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn damping_keeps_positive_curvature() {
        let n = 2;
        let mut c = CompactBfgs::new(n, 5);
        // negative curvature pair would break plain BFGS
        let s = vec![1.0, 0.0];
        let y = vec![-1.0, 0.0];
        assert!(c.update(&s, &y));
        // B must stay positive definite: check v^T B v > 0 on a few vectors
        for v in [[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]] {
            let mut bv = vec![0.0; n];
            c.apply(&v, &mut bv);
            let q = v[0] * bv[0] + v[1] * bv[1];
            assert!(q > 0.0, "v^T B v = {q}");
        }
    }

    #[test]
    fn memory_is_bounded() {
        let n = 3;
        let mut c = CompactBfgs::new(n, 2);
        for k in 0..5 {
            let s = vec![1.0 + k as f64 * 0.1, 0.2, -0.1];
            let y = vec![2.0, 0.3 + k as f64 * 0.05, -0.2];
            c.update(&s, &y);
        }
        assert_eq!(c.rank(), 4);
    }
}
