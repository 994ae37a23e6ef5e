//! Jacobians of dynamics callbacks: analytic when the definition provides
//! them, central finite differences otherwise. Feeds both the NLP derivative
//! assembly and the sensitivity matrices A(t), B(t).

use crate::error::{Error, Result};
use crate::ocp::OcpDefinition;

/// Finite-difference step policy. Steps are h_j = max(rel |v_j|, floor).
#[derive(Debug, Clone, Copy)]
pub struct DerivativeProvider {
    pub fd_relative_step: f64,
    pub fd_absolute_floor: f64,
}

impl Default for DerivativeProvider {
    fn default() -> Self {
        DerivativeProvider { fd_relative_step: 1e-6, fd_absolute_floor: 1e-8 }
    }
}

impl DerivativeProvider {
    pub fn new(fd_relative_step: f64, fd_absolute_floor: f64) -> Result<Self> {
        if fd_relative_step <= 0.0 || fd_absolute_floor <= 0.0 {
            return Err(Error::invalid("finite-difference steps must be positive"));
        }
        Ok(DerivativeProvider { fd_relative_step, fd_absolute_floor })
    }

    #[inline]
    pub fn step(&self, v: f64) -> f64 {
        (self.fd_relative_step * v.abs()).max(self.fd_absolute_floor)
    }

    /// A = df/dx at (x, u, p, t), row-major nx x nx.
    pub fn jacobian_state(
        &self,
        ocp: &OcpDefinition,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        if let Some(jac) = &ocp.jac_state {
            let mut out = vec![0.0; ocp.nx * ocp.nx];
            jac(&mut out, x, u, p, t);
            return Ok(out);
        }
        central_difference(ocp.nx, x, self, |xp, col| {
            (ocp.dynamics)(col, xp, u, p, t);
        })
    }

    /// B = df/dp at (x, u, p, t), row-major nx x np.
    pub fn jacobian_params(
        &self,
        ocp: &OcpDefinition,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        if let Some(jac) = &ocp.jac_params {
            let mut out = vec![0.0; ocp.nx * ocp.np];
            jac(&mut out, x, u, p, t);
            return Ok(out);
        }
        central_difference(ocp.nx, p, self, |pp, col| {
            (ocp.dynamics)(col, x, u, pp, t);
        })
    }

    /// df/du at (x, u, p, t), row-major nx x nu.
    pub fn jacobian_control(
        &self,
        ocp: &OcpDefinition,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        if let Some(jac) = &ocp.jac_control {
            let mut out = vec![0.0; ocp.nx * ocp.nu];
            jac(&mut out, x, u, p, t);
            return Ok(out);
        }
        central_difference(ocp.nx, u, self, |up, col| {
            (ocp.dynamics)(col, x, up, p, t);
        })
    }

    /// df/dt at (x, u, p, t), length nx; zero for time-invariant dynamics.
    pub fn derivative_time(
        &self,
        ocp: &OcpDefinition,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        if ocp.time_invariant {
            return Ok(vec![0.0; ocp.nx]);
        }
        let h = self.step(t);
        let mut plus = vec![0.0; ocp.nx];
        let mut minus = vec![0.0; ocp.nx];
        (ocp.dynamics)(&mut plus, x, u, p, t + h);
        (ocp.dynamics)(&mut minus, x, u, p, t - h);
        let mut out = vec![0.0; ocp.nx];
        for i in 0..ocp.nx {
            let d = (plus[i] - minus[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite time derivative at t={t}"
                )));
            }
            out[i] = d;
        }
        Ok(out)
    }
}

/// Central-difference Jacobian of an m-valued function over the `base`
/// variables; `eval` writes the function value for a perturbed copy.
fn central_difference<F>(
    m: usize,
    base: &[f64],
    provider: &DerivativeProvider,
    eval: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = base.len();
    let mut jac = vec![0.0; m * n];
    let mut work = base.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..n {
        let h = provider.step(base[j]);
        work[j] = base[j] + h;
        eval(&work, &mut plus);
        work[j] = base[j] - h;
        eval(&work, &mut minus);
        work[j] = base[j];
        for i in 0..m {
            let d = (plus[i] - minus[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite derivative in column {j} at probe {:?}",
                    &work[..n.min(8)]
                )));
            }
            jac[i * n + j] = d;
        }
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(base: &[f64], provider: &DerivativeProvider, eval: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let n = base.len();
    let mut grad = vec![0.0; n];
    let mut work = base.to_vec();
    for j in 0..n {
        let h = provider.step(base[j]);
        work[j] = base[j] + h;
        let fp = eval(&work);
        work[j] = base[j] - h;
        let fm = eval(&work);
        work[j] = base[j];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite gradient component {j}"
            )));
        }
        grad[j] = d;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn linear_ocp() -> OcpDefinition {
        // f = M x with constant M = [[1, 2], [3, 4]]
        OcpDefinition::new(
            "linear",
            2,
            1,
            1,
            Arc::new(|out, x, _u, _p, _t| {
                out[0] = x[0] + 2.0 * x[1];
                out[1] = 3.0 * x[0] + 4.0 * x[1];
            }),
        )
    }

    #[test]
    fn linear_dynamics_recover_matrix() {
        let ocp = linear_ocp();
        let d = DerivativeProvider::default();
        let a = d
            .jacobian_state(&ocp, &[0.4, -0.2], &[0.0], &[0.0], 0.0)
            .unwrap();
        let expect = [1.0, 2.0, 3.0, 4.0];
        for (got, want) in a.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn scalar_sine_derivative() {
        let ocp = OcpDefinition::new(
            "sine",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, _t| out[0] = x[0].sin()),
        );
        let d = DerivativeProvider::default();
        let a = d.jacobian_state(&ocp, &[0.3], &[], &[], 0.0).unwrap();
        assert!((a[0] - 0.3f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn param_independent_dynamics_give_zero_b() {
        let ocp = linear_ocp();
        let d = DerivativeProvider::default();
        let b = d
            .jacobian_params(&ocp, &[0.4, -0.2], &[0.0], &[7.0], 0.0)
            .unwrap();
        for v in b {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn zermelo_hand_jacobians() {
        // x1' = cos(u) + c x2, x2' = sin(u): A = [[0, c], [0, 0]], B = [[x2], [0]]
        let ocp = OcpDefinition::new(
            "zermelo-fd",
            2,
            1,
            1,
            Arc::new(|out, x, u, p, _t| {
                out[0] = u[0].cos() + p[0] * x[1];
                out[1] = u[0].sin();
            }),
        );
        let d = DerivativeProvider::default();
        let x = [1.3, 0.5];
        let u = [0.2];
        let p = [10.0];
        let a = d.jacobian_state(&ocp, &x, &u, &p, 0.0).unwrap();
        assert!((a[0]).abs() < 1e-8);
        assert!((a[1] - 10.0).abs() < 1e-7);
        assert!(a[2].abs() < 1e-8 && a[3].abs() < 1e-8);
        let b = d.jacobian_params(&ocp, &x, &u, &p, 0.0).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-8);
        assert!(b[1].abs() < 1e-8);
    }

    #[test]
    fn central_difference_is_second_order() {
        let f = |x: &[f64]| x[0].exp() * x[0].sin();
        let exact = |x: f64| x.exp() * (x.sin() + x.cos());
        let x0 = [0.7];
        let mut last_err = f64::INFINITY;
        for rel in [1e-3, 5e-4, 2.5e-4] {
            let p = DerivativeProvider::new(rel, 1e-14).unwrap();
            let g = gradient(&x0, &p, f).unwrap();
            let err = (g[0] - exact(0.7)).abs();
            // halving h should shrink the error roughly 4x until roundoff
            assert!(err < last_err * 0.6 + 1e-12, "err={err} last={last_err}");
            last_err = err;
        }
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let ocp = OcpDefinition::new(
            "sqrt",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, _t| out[0] = x[0].sqrt()),
        );
        let d = DerivativeProvider::default();
        // differencing at zero probes a negative argument
        assert!(d.jacobian_state(&ocp, &[0.0], &[], &[], 0.0).is_err());
    }
}
