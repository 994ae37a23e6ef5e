//! Mesh partition of [-1, +1], the affine time map, a simplified refinement
//! loop, and the guidance-cycle truncation/remap transformation.

use crate::error::{Error, Result};
use crate::lgr::MAX_COLLOCATION;
use serde::{Deserialize, Serialize};

/// Collocation count given to intervals created by a refinement split.
pub const DEFAULT_SPLIT_COUNT: usize = 4;

/// Per-interval count ceiling before refinement switches to splitting.
pub const MAX_REFINE_COUNT: usize = 12;

/// Ordered mesh fractions on [-1, +1] plus per-interval collocation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    /// T_0 .. T_K with T_0 = -1, T_K = +1, strictly increasing.
    pub fractions: Vec<f64>,
    /// N_1 .. N_K, each in [1, 64].
    pub counts: Vec<usize>,
}

impl Mesh {
    pub fn new(fractions: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let m = Mesh { fractions, counts };
        m.validate()?;
        Ok(m)
    }

    /// K equal-width intervals with `count` collocation points each.
    pub fn uniform(intervals: usize, count: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::invalid("mesh needs at least one interval"));
        }
        let mut fractions = Vec::with_capacity(intervals + 1);
        for k in 0..=intervals {
            fractions.push(-1.0 + 2.0 * k as f64 / intervals as f64);
        }
        fractions[0] = -1.0;
        *fractions.last_mut().unwrap() = 1.0;
        Mesh::new(fractions, vec![count; intervals])
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.len() < 2 {
            return Err(Error::invalid("mesh needs at least two fractions"));
        }
        if self.fractions.len() != self.counts.len() + 1 {
            return Err(Error::invalid(format!(
                "{} fractions with {} counts",
                self.fractions.len(),
                self.counts.len()
            )));
        }
        if self.fractions[0] != -1.0 || *self.fractions.last().unwrap() != 1.0 {
            return Err(Error::invalid("mesh endpoints must be exactly -1 and +1"));
        }
        for w in self.fractions.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("mesh fractions must be strictly increasing"));
            }
        }
        for &c in &self.counts {
            if c < 1 || c > MAX_COLLOCATION {
                return Err(Error::invalid(format!(
                    "collocation count {c} outside [1, {MAX_COLLOCATION}]"
                )));
            }
        }
        Ok(())
    }

    /// Number of mesh intervals K.
    pub fn interval_count(&self) -> usize {
        self.counts.len()
    }

    /// Total collocation points N = sum of counts.
    pub fn total_collocation(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Global support index of each interval's first support point; entry K
    /// equals N (the index of the final, noncollocated support point).
    pub fn support_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.counts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &c in &self.counts {
            acc += c;
            offsets.push(acc);
        }
        offsets
    }

    /// 0-based interval containing `tau`, right-closed at interior mesh
    /// points (interval k owns (T_k, T_{k+1}], the first also owns -1).
    pub fn interval_of(&self, tau: f64) -> usize {
        let k = self.fractions[1..self.fractions.len() - 1]
            .iter()
            .filter(|&&t| t < tau)
            .count();
        k.min(self.counts.len() - 1)
    }
}

/// Affine map between mesh time tau in [-1, +1] and clock time [t0, tf].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub t0: f64,
    pub tf: f64,
}

impl TimeMap {
    pub fn new(t0: f64, tf: f64) -> Result<Self> {
        if !(tf > t0) {
            return Err(Error::invalid(format!("tf={tf} must exceed t0={t0}")));
        }
        Ok(TimeMap { t0, tf })
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    /// tau in [-1, +1] -> clock time.
    pub fn tau_to_time(&self, tau: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau={tau} outside [-1, +1]")));
        }
        Ok(0.5 * (self.tf - self.t0) * tau + 0.5 * (self.tf + self.t0))
    }

    /// Clock time -> tau (unclamped; callers guard the domain).
    pub fn time_to_tau(&self, t: f64) -> f64 {
        (2.0 * t - (self.tf + self.t0)) / (self.tf - self.t0)
    }
}

/// Apply the guidance remap to a single fraction: tau_e -> -1, +1 -> +1.
#[inline]
pub fn remap_fraction(t_old: f64, tau_e: f64) -> f64 {
    (2.0 * (t_old - tau_e) - (1.0 - tau_e)) / (1.0 - tau_e)
}

/// Delete the expired mesh prefix ending at `tau_e` and affinely rescale the
/// remainder to [-1, +1]. Counts carry over as a suffix of the old counts;
/// the shortened first interval inherits the count of the interval that
/// contained `tau_e`.
pub fn truncate_and_remap(mesh: &Mesh, tau_e: f64) -> Result<Mesh> {
    if !(-1.0 < tau_e && tau_e < 1.0) {
        return Err(Error::invalid(format!("tau_e={tau_e} outside (-1, +1)")));
    }
    let k_total = mesh.interval_count();
    if tau_e > mesh.fractions[k_total - 1] {
        // only a shrunk piece of the final interval would remain
        return Err(Error::DegenerateHorizon(format!(
            "tau_e={tau_e} lies strictly inside the last interval"
        )));
    }
    // 1-based index of the interval [T_{e-1}, T_e) containing tau_e.
    let e = match mesh.fractions.iter().rposition(|&t| t <= tau_e) {
        Some(i) => i + 1,
        None => 1,
    };
    let mut fractions = Vec::with_capacity(k_total - e + 2);
    fractions.push(-1.0);
    for &t in &mesh.fractions[e..] {
        fractions.push(remap_fraction(t, tau_e));
    }
    *fractions.last_mut().unwrap() = 1.0;
    let counts = mesh.counts[e - 1..].to_vec();
    Mesh::new(fractions, counts)
}

/// One pass of the simplified refinement rule.
///
/// Intervals whose error estimate exceeds `tol` get their count raised by
/// ceil(log10(est/tol)); past a count of 12 they are split into two equal
/// subintervals with the default count instead.
pub fn refine(mesh: &Mesh, error_estimates: &[f64], tol: f64) -> Result<(Mesh, bool)> {
    if tol <= 0.0 {
        return Err(Error::invalid(format!("mesh tolerance {tol} must be positive")));
    }
    if error_estimates.len() != mesh.interval_count() {
        return Err(Error::invalid(format!(
            "{} error estimates for {} intervals",
            error_estimates.len(),
            mesh.interval_count()
        )));
    }
    let mut fractions = vec![mesh.fractions[0]];
    let mut counts = Vec::with_capacity(mesh.counts.len());
    let mut converged = true;
    for (k, (&est, &count)) in error_estimates.iter().zip(&mesh.counts).enumerate() {
        let (left, right) = (mesh.fractions[k], mesh.fractions[k + 1]);
        if est <= tol {
            fractions.push(right);
            counts.push(count);
            continue;
        }
        converged = false;
        let inc = (est / tol).log10().ceil().max(1.0) as usize;
        if count + inc <= MAX_REFINE_COUNT {
            fractions.push(right);
            counts.push(count + inc);
        } else {
            fractions.push(0.5 * (left + right));
            fractions.push(right);
            counts.push(DEFAULT_SPLIT_COUNT);
            counts.push(DEFAULT_SPLIT_COUNT);
        }
    }
    Ok((Mesh::new(fractions, counts)?, converged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_to_time_endpoints_and_midpoint() {
        let m = TimeMap::new(0.0, 1.0).unwrap();
        assert_eq!(m.tau_to_time(-1.0).unwrap(), 0.0);
        assert_eq!(m.tau_to_time(1.0).unwrap(), 1.0);
        let m = TimeMap::new(0.0, 1000.0).unwrap();
        assert_eq!(m.tau_to_time(0.0).unwrap(), 500.0);
        assert!(m.tau_to_time(1.5).is_err());
    }

    #[test]
    fn remap_interior_point() {
        let mesh = Mesh::new(vec![-1.0, 0.0, 0.5, 1.0], vec![3, 4, 5]).unwrap();
        let out = truncate_and_remap(&mesh, 0.25).unwrap();
        assert_eq!(out.fractions[0], -1.0);
        assert!((out.fractions[1] + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(*out.fractions.last().unwrap(), 1.0);
        assert_eq!(out.counts, vec![4, 5]);
    }

    #[test]
    fn remap_at_mesh_point_leaves_single_interval() {
        let mesh = Mesh::new(vec![-1.0, 0.0, 0.5, 1.0], vec![3, 4, 5]).unwrap();
        let out = truncate_and_remap(&mesh, 0.5).unwrap();
        assert_eq!(out.fractions, vec![-1.0, 1.0]);
        assert_eq!(out.counts, vec![5]);
    }

    #[test]
    fn remap_rejects_degenerate_and_out_of_range() {
        let mesh = Mesh::new(vec![-1.0, 0.0, 0.5, 1.0], vec![3, 4, 5]).unwrap();
        assert!(matches!(
            truncate_and_remap(&mesh, 0.75),
            Err(Error::DegenerateHorizon(_))
        ));
        assert!(truncate_and_remap(&mesh, -1.0).is_err());
        assert!(truncate_and_remap(&mesh, 1.0).is_err());
    }

    #[test]
    fn remap_endpoints_exact_and_counts_suffix() {
        let mesh = Mesh::new(vec![-1.0, -0.3, 0.1, 0.4, 1.0], vec![2, 3, 4, 5]).unwrap();
        for tau_e in [-0.9, -0.3, -0.1, 0.1, 0.39, 0.4] {
            let out = truncate_and_remap(&mesh, tau_e).unwrap();
            assert_eq!(out.fractions[0], -1.0);
            assert_eq!(*out.fractions.last().unwrap(), 1.0);
            let k = out.counts.len();
            assert_eq!(out.counts[..], mesh.counts[mesh.counts.len() - k..]);
        }
    }

    #[test]
    fn composition_of_truncations() {
        let mesh = Mesh::new(vec![-1.0, -0.5, 0.0, 0.5, 1.0], vec![4, 4, 4, 4]).unwrap();
        let a = -0.7;
        let once = truncate_and_remap(&mesh, a).unwrap();
        let b = -0.4; // in the remapped coordinates
        let twice = truncate_and_remap(&once, b).unwrap();
        // compose: b in new coords corresponds to a + (1+b)(1-a)/2 in old
        let composed_tau = a + 0.5 * (1.0 + b) * (1.0 - a);
        let direct = truncate_and_remap(&mesh, composed_tau).unwrap();
        assert_eq!(twice.counts, direct.counts);
        for (x, y) in twice.fractions.iter().zip(&direct.fractions) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    #[test]
    fn refine_no_op_when_within_tolerance() {
        let mesh = Mesh::uniform(3, 4).unwrap();
        let (out, converged) = refine(&mesh, &[1e-9, 1e-8, 1e-7], 1e-5).unwrap();
        assert!(converged);
        assert_eq!(out, mesh);
    }

    #[test]
    fn refine_increments_by_decade_count() {
        let mesh = Mesh::uniform(1, 4).unwrap();
        let (out, converged) = refine(&mesh, &[1e-3], 1e-5).unwrap();
        assert!(!converged);
        assert_eq!(out.counts, vec![6]);
    }

    #[test]
    fn refine_splits_saturated_interval() {
        let mesh = Mesh::new(vec![-1.0, 1.0], vec![12]).unwrap();
        let (out, converged) = refine(&mesh, &[1e-3], 1e-5).unwrap();
        assert!(!converged);
        assert_eq!(out.counts, vec![4, 4]);
        assert_eq!(out.fractions, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn refine_rejects_bad_tolerance() {
        let mesh = Mesh::uniform(1, 4).unwrap();
        assert!(refine(&mesh, &[0.0], 0.0).is_err());
    }

    #[test]
    fn mesh_json_round_trip() {
        let mesh = Mesh::new(vec![-1.0, 0.25, 1.0], vec![4, 6]).unwrap();
        let s = serde_json::to_string(&mesh).unwrap();
        assert!(s.contains("\"fractions\""));
        assert!(s.contains("\"counts\""));
        let back: Mesh = serde_json::from_str(&s).unwrap();
        assert_eq!(back, mesh);
    }
}
