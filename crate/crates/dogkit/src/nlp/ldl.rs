//! Sparse LDL^T factorization of symmetric quasi-definite matrices stored in
//! upper-triangular CSC form, with no pivoting (up-looking, elimination-tree
//! based). The interior-point loop keeps the KKT matrix quasi-definite
//! through regularization, so a fixed elimination order is sufficient and
//! deterministic; the sign pattern of D doubles as the inertia check.

use crate::error::{Error, Result};

/// Symbolic analysis of a fixed upper-triangular CSC pattern.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    pub n: usize,
    /// Column pointers of the input pattern.
    pub ap: Vec<usize>,
    /// Row indices (sorted ascending per column, diagonal last).
    pub ai: Vec<usize>,
    etree: Vec<isize>,
    lnz: Vec<usize>,
    /// Column pointers of L (strictly lower triangular).
    pub lp: Vec<usize>,
}

impl LdlSymbolic {
    /// Analyze an upper-triangular CSC pattern. Every column must contain its
    /// diagonal entry and be sorted ascending by row.
    pub fn new(n: usize, ap: Vec<usize>, ai: Vec<usize>) -> Result<Self> {
        if ap.len() != n + 1 {
            return Err(Error::invalid("column pointer length mismatch"));
        }
        for j in 0..n {
            let (start, end) = (ap[j], ap[j + 1]);
            if start >= end || ai[end - 1] != j {
                return Err(Error::invalid(format!(
                    "column {j} missing diagonal entry"
                )));
            }
            for idx in start..end {
                if ai[idx] > j || (idx > start && ai[idx] <= ai[idx - 1]) {
                    return Err(Error::invalid(format!("column {j} not sorted upper")));
                }
            }
        }

        let mut etree = vec![-1isize; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![usize::MAX; n];
        for j in 0..n {
            work[j] = j;
            for idx in ap[j]..ap[j + 1] {
                let mut i = ai[idx];
                if i == j {
                    continue;
                }
                while work[i] != j {
                    if etree[i] == -1 {
                        etree[i] = j as isize;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i] as usize;
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Ok(LdlSymbolic { n, ap, ai, etree, lnz, lp })
    }

    pub fn l_nonzeros(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric factor L D L^T reusing a fixed symbolic pattern.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    pub positive: usize,
    pub negative: usize,
}

impl LdlFactor {
    pub fn new(sym: &LdlSymbolic) -> Self {
        LdlFactor {
            li: vec![0; sym.l_nonzeros()],
            lx: vec![0.0; sym.l_nonzeros()],
            d: vec![0.0; sym.n],
            dinv: vec![0.0; sym.n],
            positive: 0,
            negative: 0,
        }
    }

    /// Factor the matrix whose values `ax` align with the symbolic pattern.
    /// Fails on a zero pivot (the quasi-definite setup makes this a signal to
    /// increase regularization, not a programming error).
    pub fn factor(&mut self, sym: &LdlSymbolic, ax: &[f64]) -> Result<()> {
        let n = sym.n;
        let mut y_vals = vec![0.0f64; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_in_col: Vec<usize> = sym.lp[..n].to_vec();
        self.positive = 0;
        self.negative = 0;

        for k in 0..n {
            let mut nnz_y = 0usize;
            for idx in sym.ap[k]..sym.ap[k + 1] {
                let i = sym.ai[idx];
                if i == k {
                    self.d[k] = ax[idx];
                    continue;
                }
                y_vals[i] = ax[idx];
                if y_marked[i] {
                    continue;
                }
                y_marked[i] = true;
                elim[0] = i;
                let mut nnz_e = 1usize;
                let mut next = sym.etree[i];
                while next != -1 && (next as usize) < k {
                    let nu = next as usize;
                    if y_marked[nu] {
                        break;
                    }
                    y_marked[nu] = true;
                    elim[nnz_e] = nu;
                    nnz_e += 1;
                    next = sym.etree[nu];
                }
                while nnz_e > 0 {
                    nnz_e -= 1;
                    y_idx[nnz_y] = elim[nnz_e];
                    nnz_y += 1;
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let yc = y_vals[c];
                let (start, stop) = (sym.lp[c], next_in_col[c]);
                for t in start..stop {
                    y_vals[self.li[t]] -= self.lx[t] * yc;
                }
                let slot = next_in_col[c];
                self.li[slot] = k;
                let l_kc = yc * self.dinv[c];
                self.lx[slot] = l_kc;
                self.d[k] -= yc * l_kc;
                next_in_col[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(Error::numerical(format!("zero or non-finite pivot at {k}")));
            }
            if self.d[k] > 0.0 {
                self.positive += 1;
            } else {
                self.negative += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// In-place solve of (L D L^T) x = b.
    pub fn solve_in_place(&self, sym: &LdlSymbolic, x: &mut [f64]) {
        let n = sym.n;
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for t in sym.lp[j]..sym.lp[j + 1] {
                    x[self.li[t]] -= self.lx[t] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] *= self.dinv[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for t in sym.lp[j]..sym.lp[j + 1] {
                acc -= self.lx[t] * x[self.li[t]];
            }
            x[j] = acc;
        }
    }
}
