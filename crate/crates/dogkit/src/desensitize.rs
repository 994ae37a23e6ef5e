//! Sensitivity-state augmentation and the normalized desensitization cost.
//!
//! Each entry of the sensitivity matrix S = dx/dp becomes an appended state
//! with dynamics dS/dt = A S + B and initial condition S(t0) = 0. The
//! objective becomes the weighted combination of normalized performance and
//! sensitivity penalties
//!     w1 J/|J_ref| + w2 Jf/|Jf_ref| + w3 Jr/|Jr_ref|
//! with Jf the terminal trace penalty and Jr its running integral.
//!
//! Normalization uses |J_ref| rather than J_ref: both built-in problems
//! recast maximization as minimization, so J_ref is negative and dividing by
//! it would flip the optimization direction.

use crate::derivatives::DerivativeProvider;
use crate::error::{Error, Result};
use crate::lgr::compute_radau_rule;
use crate::ocp::{OcpDefinition, Trajectory};
use crate::propagation::propagate_sensitivities;
use nalgebra::DMatrix;
use std::sync::Arc;

/// User-selected output vector y = g(x) with its Jacobian G = dg/dx.
#[derive(Clone)]
pub struct OutputMap {
    pub ny: usize,
    pub nx: usize,
    /// Writes y (length ny).
    pub g: Arc<dyn Fn(&mut [f64], &[f64]) + Send + Sync>,
    /// Writes G (row-major ny x nx).
    pub jacobian: Arc<dyn Fn(&mut [f64], &[f64]) + Send + Sync>,
}

impl OutputMap {
    /// A constant linear output map y = G x.
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let (ny, nx) = (matrix.nrows(), matrix.ncols());
        let m1 = matrix.clone();
        let m2 = matrix;
        OutputMap {
            ny,
            nx,
            g: Arc::new(move |out, x| {
                for i in 0..ny {
                    out[i] = (0..nx).map(|j| m1[(i, j)] * x[j]).sum();
                }
            }),
            jacobian: Arc::new(move |out, _x| {
                for i in 0..ny {
                    for j in 0..nx {
                        out[i * nx + j] = m2[(i, j)];
                    }
                }
            }),
        }
    }

    pub fn eval_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ny * self.nx];
        (self.jacobian)(&mut out, x);
        out
    }
}

/// Reference cost components evaluated on the nominal solution without
/// desensitization.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CostReferences {
    pub j_ref: f64,
    pub jf_ref: f64,
    pub jr_ref: f64,
}

#[derive(Clone)]
pub struct DesensitizationConfig {
    /// Terminal sensitivity penalty weight, in [0, 1].
    pub beta: f64,
    /// Fraction of beta assigned to the running penalty, >= 0.
    pub xi: f64,
    /// Parameter covariance (np x np, positive semi-definite).
    pub covariance: DMatrix<f64>,
    pub references: Option<CostReferences>,
}

impl DesensitizationConfig {
    pub fn new(beta: f64, xi: f64, covariance: DMatrix<f64>) -> Result<Self> {
        let cfg = DesensitizationConfig { beta, xi, covariance, references: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        weights(self.beta, self.xi)?;
        let p = &self.covariance;
        if p.nrows() != p.ncols() {
            return Err(Error::invalid("covariance must be square"));
        }
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                if (p[(i, j)] - p[(j, i)]).abs() > 1e-12 * (1.0 + p[(i, i)].abs()) {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Convex cost weights (w1, w2, w3) = (1 - beta - xi*beta, beta, xi*beta).
pub fn weights(beta: f64, xi: f64) -> Result<(f64, f64, f64)> {
    if beta < 0.0 || xi < 0.0 {
        return Err(Error::invalid("beta and xi must be nonnegative"));
    }
    if beta * (1.0 + xi) > 1.0 + 1e-15 {
        return Err(Error::invalid(format!(
            "beta (1 + xi) = {} exceeds 1",
            beta * (1.0 + xi)
        )));
    }
    let w2 = beta;
    let w3 = xi * beta;
    Ok((1.0 - w2 - w3, w2, w3))
}

/// tr[G S P S^T G^T]: the first-order variance proxy E(||dy||^2).
pub fn sensitivity_error_term(
    g: &DMatrix<f64>,
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    if g.ncols() != s.nrows() || s.ncols() != p.nrows() || p.nrows() != p.ncols() {
        return Err(Error::invalid(format!(
            "nonconformable dimensions: G {}x{}, S {}x{}, P {}x{}",
            g.nrows(),
            g.ncols(),
            s.nrows(),
            s.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    let gs = g * s;
    Ok((&gs * p * gs.transpose()).trace())
}

/// Flat-buffer trace term used inside cost callbacks: S row-major nx x np,
/// G row-major ny x nx applied to the leading nx entries of the state.
fn trace_term_flat(g: &[f64], ny: usize, nx: usize, s: &[f64], np: usize, p: &DMatrix<f64>) -> f64 {
    // M = G S (ny x np)
    let mut m = vec![0.0; ny * np];
    for r in 0..ny {
        for j in 0..np {
            let mut acc = 0.0;
            for c in 0..nx {
                acc += g[r * nx + c] * s[c * np + j];
            }
            m[r * np + j] = acc;
        }
    }
    // tr(M P M^T)
    let mut tr = 0.0;
    for r in 0..ny {
        for j in 0..np {
            let mut mp = 0.0;
            for k in 0..np {
                mp += m[r * np + k] * p[(k, j)];
            }
            tr += mp * m[r * np + j];
        }
    }
    tr
}

/// Evaluate (J_ref, Jf_ref, Jr_ref) on a converged nominal solution: the
/// Bolza cost, the terminal trace penalty, and the LGR quadrature of the
/// running trace penalty, with S(t) from the sensitivity initial value
/// problem along the nominal trajectory.
pub fn evaluate_references(
    ocp: &OcpDefinition,
    nominal: &Trajectory,
    out: &OutputMap,
    p_cov: &DMatrix<f64>,
) -> Result<CostReferences> {
    let t0 = nominal.time_map.t0;
    let tf = nominal.time_map.tf;
    let h = 0.5 * (tf - t0);

    // Bolza cost of the nominal trajectory.
    let x0 = nominal.states.first().unwrap().clone();
    let xf = nominal.states.last().unwrap().clone();
    let mut j_ref = ocp.eval_mayer(&x0, t0, &xf, tf);
    let colloc_times = nominal.collocation_times();
    if ocp.lagrange.is_some() {
        let mut q = 0usize;
        for (k, &count) in nominal.mesh.counts.iter().enumerate() {
            let rule = compute_radau_rule(count)?;
            let gamma = 0.5 * (nominal.mesh.fractions[k + 1] - nominal.mesh.fractions[k]);
            for i in 0..count {
                let t = colloc_times[q];
                j_ref += h
                    * gamma
                    * rule.weights[i]
                    * ocp.eval_lagrange(&nominal.states[q], &nominal.controls[q], t);
                q += 1;
            }
        }
    }

    // Sensitivity history landed exactly on the quadrature times.
    let mut report = colloc_times.clone();
    report.push(tf);
    let hist = propagate_sensitivities(ocp, nominal, (t0, tf), &report)?;

    let g_f = out.eval_jacobian(&xf);
    let jf_ref = trace_term_flat(&g_f, out.ny, ocp.nx, hist.terminal(), ocp.np, p_cov);

    let mut jr_ref = 0.0;
    let mut q = 0usize;
    for (k, &count) in nominal.mesh.counts.iter().enumerate() {
        let rule = compute_radau_rule(count)?;
        let gamma = 0.5 * (nominal.mesh.fractions[k + 1] - nominal.mesh.fractions[k]);
        for i in 0..count {
            let t = colloc_times[q];
            let s = hist.at_time(t).ok_or_else(|| {
                Error::numerical(format!("sensitivity history missing sample at t={t}"))
            })?;
            let g = out.eval_jacobian(&nominal.states[q]);
            jr_ref +=
                h * gamma * rule.weights[i] * trace_term_flat(&g, out.ny, ocp.nx, s, ocp.np, p_cov);
            q += 1;
        }
    }
    Ok(CostReferences { j_ref, jf_ref, jr_ref })
}

/// Transform a definition into its sensitivity-augmented, normalization-
/// weighted counterpart. Appended states hold S row-major; appended boundary
/// rows pin S(t0) = 0; the objective becomes the normalized weighted cost.
pub fn augment(
    ocp: &OcpDefinition,
    out: &OutputMap,
    cfg: &DesensitizationConfig,
) -> Result<OcpDefinition> {
    cfg.validate()?;
    if out.nx != ocp.nx {
        return Err(Error::invalid("output map dimension differs from nx"));
    }
    let (w1, w2, w3) = weights(cfg.beta, cfg.xi)?;
    let refs = cfg
        .references
        .ok_or_else(|| Error::invalid("references must be populated before augmenting"))?;
    if w1 > 0.0 && refs.j_ref.abs() < 1e-12 {
        return Err(Error::NormalizationDegenerate(
            "performance reference |J_ref| below 1e-12".into(),
        ));
    }
    if w2 > 0.0 && refs.jf_ref.abs() < 1e-12 {
        return Err(Error::NormalizationDegenerate(
            "terminal penalty reference |Jf_ref| below 1e-12".into(),
        ));
    }
    if w3 > 0.0 && refs.jr_ref.abs() < 1e-12 {
        return Err(Error::NormalizationDegenerate(
            "running penalty reference |Jr_ref| below 1e-12".into(),
        ));
    }

    let nx = ocp.nx;
    let np = ocp.np;
    let nu = ocp.nu;
    let ns = nx * np;
    let nx_aug = nx + ns;
    let provider = DerivativeProvider::default();

    let mut aug = ocp.clone();
    aug.name = format!("{}-desensitized", ocp.name);
    aug.nx = nx_aug;
    let param_names: Vec<String> = (0..np).map(|j| format!("p{j}")).collect();
    for i in 0..nx {
        for j in 0..np {
            aug.state_names
                .push(format!("S_{}_{}", ocp.state_names[i], param_names[j]));
        }
    }

    // Appended dynamics dS = A S + B at the passed parameter vector (the
    // nominal during solves).
    let base = ocp.clone();
    let prov = provider;
    aug.dynamics = Arc::new(move |out_buf, x_aug, u, p, t| {
        let x = &x_aug[..nx];
        {
            let (head, _) = out_buf.split_at_mut(nx);
            (base.dynamics)(head, x, u, p, t);
        }
        let (a, b) = match (
            prov.jacobian_state(&base, x, u, p, t),
            prov.jacobian_params(&base, x, u, p, t),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                out_buf[nx..].iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        for i in 0..nx {
            for j in 0..np {
                let mut acc = b[i * np + j];
                for m in 0..nx {
                    acc += a[i * nx + m] * x_aug[nx + m * np + j];
                }
                out_buf[nx + i * np + j] = acc;
            }
        }
    });

    // Analytic-structure Jacobian of the augmented dynamics: exact blocks
    // where available, finite differences for d(AS + B)/dx and /du.
    let base = ocp.clone();
    aug.jac_state = Some(Arc::new(move |out_buf, x_aug, u, p, t| {
        out_buf.iter_mut().for_each(|v| *v = 0.0);
        let x = &x_aug[..nx];
        let a = match prov.jacobian_state(&base, x, u, p, t) {
            Ok(a) => a,
            Err(_) => {
                out_buf.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        for i in 0..nx {
            for m in 0..nx {
                out_buf[i * nx_aug + m] = a[i * nx + m];
            }
        }
        // dS-rows vs S-columns: dS_ij / dS_mj = A_im (same parameter column)
        for i in 0..nx {
            for j in 0..np {
                let row = nx + i * np + j;
                for m in 0..nx {
                    out_buf[row * nx_aug + (nx + m * np + j)] = a[i * nx + m];
                }
            }
        }
        // dS-rows vs x-columns by central differences of (A S + B)
        let s_rate = |xv: &[f64], out_rate: &mut [f64]| -> bool {
            match (
                prov.jacobian_state(&base, xv, u, p, t),
                prov.jacobian_params(&base, xv, u, p, t),
            ) {
                (Ok(a), Ok(b)) => {
                    for i in 0..nx {
                        for j in 0..np {
                            let mut acc = b[i * np + j];
                            for m in 0..nx {
                                acc += a[i * nx + m] * x_aug[nx + m * np + j];
                            }
                            out_rate[i * np + j] = acc;
                        }
                    }
                    true
                }
                _ => false,
            }
        };
        let mut xp = x.to_vec();
        let mut rp = vec![0.0; ns];
        let mut rm = vec![0.0; ns];
        for c in 0..nx {
            let h = prov.step(x[c]);
            xp[c] = x[c] + h;
            let ok1 = s_rate(&xp, &mut rp);
            xp[c] = x[c] - h;
            let ok2 = s_rate(&xp, &mut rm);
            xp[c] = x[c];
            if !(ok1 && ok2) {
                out_buf.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
            for e in 0..ns {
                out_buf[(nx + e) * nx_aug + c] = (rp[e] - rm[e]) / (2.0 * h);
            }
        }
    }));

    let base = ocp.clone();
    aug.jac_control = Some(Arc::new(move |out_buf, x_aug, u, p, t| {
        out_buf.iter_mut().for_each(|v| *v = 0.0);
        let x = &x_aug[..nx];
        let dfdu = match prov.jacobian_control(&base, x, u, p, t) {
            Ok(j) => j,
            Err(_) => {
                out_buf.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        for i in 0..nx {
            for c in 0..nu {
                out_buf[i * nu + c] = dfdu[i * nu + c];
            }
        }
        let s_rate = |uv: &[f64], out_rate: &mut [f64]| -> bool {
            match (
                prov.jacobian_state(&base, x, uv, p, t),
                prov.jacobian_params(&base, x, uv, p, t),
            ) {
                (Ok(a), Ok(b)) => {
                    for i in 0..nx {
                        for j in 0..np {
                            let mut acc = b[i * np + j];
                            for m in 0..nx {
                                acc += a[i * nx + m] * x_aug[nx + m * np + j];
                            }
                            out_rate[i * np + j] = acc;
                        }
                    }
                    true
                }
                _ => false,
            }
        };
        let mut up = u.to_vec();
        let mut rp = vec![0.0; ns];
        let mut rm = vec![0.0; ns];
        for c in 0..nu {
            let h = prov.step(u[c]);
            up[c] = u[c] + h;
            let ok1 = s_rate(&up, &mut rp);
            up[c] = u[c] - h;
            let ok2 = s_rate(&up, &mut rm);
            up[c] = u[c];
            if !(ok1 && ok2) {
                out_buf.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
            for e in 0..ns {
                out_buf[(nx + e) * nu + c] = (rp[e] - rm[e]) / (2.0 * h);
            }
        }
    }));
    aug.jac_params = None;

    // Boundary: original rows plus S(t0) = 0.
    let orig_boundary = ocp.boundary.clone();
    let nb = ocp.nb;
    aug.nb = nb + ns;
    aug.boundary = Some(Arc::new(move |out_buf, x0, t0, xf, tf| {
        if let Some(b) = &orig_boundary {
            b(&mut out_buf[..nb], &x0[..nx], t0, &xf[..nx], tf);
        }
        for e in 0..ns {
            out_buf[nb + e] = x0[nx + e];
        }
    }));
    aug.b_lower.extend(std::iter::repeat(0.0).take(ns));
    aug.b_upper.extend(std::iter::repeat(0.0).take(ns));

    // Path constraints see only the original states.
    if let Some(orig_path) = ocp.path.clone() {
        aug.path = Some(Arc::new(move |out_buf, x_aug, u, t| {
            orig_path(out_buf, &x_aug[..nx], u, t);
        }));
    }

    // Sensitivity-state scales and wide bounds (+-1e6 after scaling).
    let mut s_scale = Vec::with_capacity(ns);
    for i in 0..nx {
        for j in 0..np {
            let ps = ocp.param_scale[j].abs().max(1e-12);
            s_scale.push(ocp.x_scale[i] / ps);
        }
    }
    for &sc in &s_scale {
        aug.x_lower.push(-1e6 * sc);
        aug.x_upper.push(1e6 * sc);
        aug.x_scale.push(sc);
    }

    // Normalized weighted objective.
    let j_norm = w1 / refs.j_ref.abs();
    let jf_norm = if w2 > 0.0 { w2 / refs.jf_ref.abs() } else { 0.0 };
    let jr_norm = if w3 > 0.0 { w3 / refs.jr_ref.abs() } else { 0.0 };
    let orig_mayer = ocp.mayer.clone();
    let out_map = out.clone();
    let p_cov = cfg.covariance.clone();
    let ny = out.ny;
    aug.mayer = Some(Arc::new(move |x0, t0, xf, tf| {
        let mut total = 0.0;
        if let Some(m) = &orig_mayer {
            total += j_norm * m(&x0[..nx], t0, &xf[..nx], tf);
        }
        if jf_norm > 0.0 {
            let g = out_map.eval_jacobian(&xf[..nx]);
            total += jf_norm * trace_term_flat(&g, ny, nx, &xf[nx..], np, &p_cov);
        }
        total
    }));
    let orig_lagrange = ocp.lagrange.clone();
    let out_map = out.clone();
    let p_cov = cfg.covariance.clone();
    if orig_lagrange.is_some() || w3 > 0.0 {
        aug.lagrange = Some(Arc::new(move |x_aug, u, t| {
            let mut total = 0.0;
            if let Some(l) = &orig_lagrange {
                total += j_norm * l(&x_aug[..nx], u, t);
            }
            if jr_norm > 0.0 {
                let g = out_map.eval_jacobian(&x_aug[..nx]);
                total += jr_norm * trace_term_flat(&g, ny, nx, &x_aug[nx..], np, &p_cov);
            }
            total
        }));
    } else {
        aug.lagrange = None;
    }
    aug.obj_scale = 1.0;

    // Guess: original states plus zero sensitivities.
    let orig_guess = ocp.guess.clone();
    aug.guess = Arc::new(move |frac| {
        let (mut x, u) = orig_guess(frac);
        x.extend(std::iter::repeat(0.0).take(ns));
        (x, u)
    });

    Ok(aug)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn weight_examples() {
        assert_eq!(weights(0.0, 0.0).unwrap(), (1.0, 0.0, 0.0));
        let (w1, w2, w3) = weights(0.4, 0.0).unwrap();
        assert!((w1 - 0.6).abs() < 1e-15 && w2 == 0.4 && w3 == 0.0);
        let (w1, w2, w3) = weights(0.02, 0.5).unwrap();
        assert!((w1 - 0.97).abs() < 1e-15);
        assert!((w2 - 0.02).abs() < 1e-15);
        assert!((w3 - 0.01).abs() < 1e-15);
        assert!(weights(0.5, 1.5).is_err());
        assert!(weights(-0.1, 0.0).is_err());
    }

    #[test]
    fn weights_sum_to_one_over_grid() {
        for beta in [0.0, 0.1, 0.25, 0.5, 0.9] {
            for xi in [0.0, 0.1, 0.5] {
                if beta * (1.0 + xi) <= 1.0 {
                    let (w1, w2, w3) = weights(beta, xi).unwrap();
                    assert!((w1 + w2 + w3 - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn trace_term_examples() {
        let g = dmatrix![1.0, 0.0];
        let s = dmatrix![2.0; 3.0];
        let p = dmatrix![0.25];
        assert!((sensitivity_error_term(&g, &s, &p).unwrap() - 1.0).abs() < 1e-15);

        let z = DMatrix::zeros(2, 1);
        assert_eq!(sensitivity_error_term(&g, &z, &p).unwrap(), 0.0);

        let g = DMatrix::identity(2, 2);
        let s = DMatrix::identity(2, 2);
        let p = DMatrix::from_diagonal(&nalgebra::dvector![3.0, 4.0]);
        assert!((sensitivity_error_term(&g, &s, &p).unwrap() - 7.0).abs() < 1e-15);

        let bad = DMatrix::identity(3, 3);
        assert!(sensitivity_error_term(&g, &bad, &p).is_err());
    }

    #[test]
    fn trace_term_nonnegative_on_random_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let ny = rng.gen_range(1..4);
            let nx = rng.gen_range(1..5);
            let np = rng.gen_range(1..4);
            let g = DMatrix::from_fn(ny, nx, |_, _| rng.gen_range(-1.0..1.0));
            let s = DMatrix::from_fn(nx, np, |_, _| rng.gen_range(-1.0..1.0));
            let a = DMatrix::from_fn(np, np, |_, _| rng.gen_range(-1.0..1.0));
            let p = &a * a.transpose();
            let v = sensitivity_error_term(&g, &s, &p).unwrap();
            assert!(v >= -1e-12, "{v}");
        }
    }

    fn zermelo_like() -> (OcpDefinition, OutputMap) {
        let mut ocp = OcpDefinition::new(
            "zermelo-test",
            2,
            1,
            1,
            Arc::new(|out, x, u, p, _t| {
                out[0] = u[0].cos() + p[0] * x[1];
                out[1] = u[0].sin();
            }),
        );
        ocp.nominal_params = vec![10.0];
        ocp.param_scale = vec![10.0];
        ocp.mayer = Some(Arc::new(|_x0, _t0, xf, _tf| -xf[0]));
        ocp.time_invariant = true;
        let out = OutputMap::linear(dmatrix![1.0, 0.0]);
        (ocp, out)
    }

    #[test]
    fn augment_appends_sensitivity_dynamics() {
        let (ocp, out) = zermelo_like();
        let cfg = DesensitizationConfig {
            beta: 0.3,
            xi: 0.0,
            covariance: dmatrix![1.0],
            references: Some(CostReferences { j_ref: -2.78, jf_ref: 0.05, jr_ref: 0.01 }),
        };
        let aug = augment(&ocp, &out, &cfg).unwrap();
        assert_eq!(aug.nx, 4);
        assert_eq!(aug.nb, 2); // no original boundary; S(t0) rows only
        // dS1 = c S2 + x2; dS2 = 0
        let x_aug = [1.2, 0.5, 0.7, 0.3]; // x1, x2, S1, S2
        let rates = aug.eval_dynamics(&x_aug, &[0.4], &[10.0], 0.0);
        assert!((rates[2] - (10.0 * 0.3 + 0.5)).abs() < 1e-9, "{}", rates[2]);
        assert!(rates[3].abs() < 1e-12);
        // boundary rows pin S(t0)
        let mut b = vec![0.0; aug.nb];
        (aug.boundary.as_ref().unwrap())(&mut b, &x_aug, 0.0, &x_aug, 1.0);
        assert_eq!(b, vec![0.7, 0.3]);
    }

    #[test]
    fn augmented_jacobian_matches_finite_differences() {
        let (ocp, out) = zermelo_like();
        let cfg = DesensitizationConfig {
            beta: 0.2,
            xi: 0.5,
            covariance: dmatrix![1.0],
            references: Some(CostReferences { j_ref: -2.78, jf_ref: 0.05, jr_ref: 0.01 }),
        };
        let aug = augment(&ocp, &out, &cfg).unwrap();
        let prov = DerivativeProvider::default();
        let x_aug = [0.9, -0.4, 0.2, 0.1];
        let u = [0.3];
        let analytic = {
            let mut buf = vec![0.0; aug.nx * aug.nx];
            (aug.jac_state.as_ref().unwrap())(&mut buf, &x_aug, &u, &[10.0], 0.0);
            buf
        };
        let mut plain = aug.clone();
        plain.jac_state = None;
        let fd = prov
            .jacobian_state(&plain, &x_aug, &u, &[10.0], 0.0)
            .unwrap();
        for (a, b) in analytic.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn beta_zero_objective_reduces_to_normalized_j() {
        let (ocp, out) = zermelo_like();
        let cfg = DesensitizationConfig {
            beta: 0.0,
            xi: 0.0,
            covariance: dmatrix![1.0],
            references: Some(CostReferences { j_ref: -2.0, jf_ref: 0.0, jr_ref: 0.0 }),
        };
        let aug = augment(&ocp, &out, &cfg).unwrap();
        let xf = [1.4, 0.0, 0.3, 0.2];
        let j = aug.eval_mayer(&xf, 0.0, &xf, 1.0);
        // w1 = 1, |J_ref| = 2: J_aug = -x1(tf)/2
        assert!((j - (-1.4 / 2.0)).abs() < 1e-15);
        assert!(aug.lagrange.is_none());
    }

    #[test]
    fn degenerate_references_rejected() {
        let (ocp, out) = zermelo_like();
        let cfg = DesensitizationConfig {
            beta: 0.3,
            xi: 0.5,
            covariance: dmatrix![1.0],
            references: Some(CostReferences { j_ref: -2.0, jf_ref: 0.05, jr_ref: 0.0 }),
        };
        assert!(matches!(
            augment(&ocp, &out, &cfg),
            Err(Error::NormalizationDegenerate(_))
        ));
    }

    #[test]
    fn references_zero_for_parameter_independent_dynamics() {
        let mut ocp = OcpDefinition::new(
            "indep",
            1,
            0,
            1,
            Arc::new(|out, x, _u, _p, _t| out[0] = -x[0]),
        );
        ocp.mayer = Some(Arc::new(|_x0, _t0, xf, _tf| xf[0]));
        let out = OutputMap::linear(dmatrix![1.0]);
        let mesh = crate::mesh::Mesh::uniform(2, 4).unwrap();
        let n = mesh.total_collocation();
        let traj = Trajectory::new(
            mesh,
            crate::mesh::TimeMap::new(0.0, 1.0).unwrap(),
            vec![vec![1.0]; n + 1],
            vec![vec![]; n],
        )
        .unwrap();
        let refs = evaluate_references(&ocp, &traj, &out, &dmatrix![4.0]).unwrap();
        assert_eq!(refs.jf_ref, 0.0);
        assert_eq!(refs.jr_ref, 0.0);

        // doubling P doubles the trace references (here trivially zero; use
        // a parameter-dependent variant)
        let mut dep = ocp.clone();
        dep.dynamics = Arc::new(|out, x, _u, p, _t| out[0] = -x[0] + p[0]);
        let r1 = evaluate_references(&dep, &traj, &out, &dmatrix![1.0]).unwrap();
        let r2 = evaluate_references(&dep, &traj, &out, &dmatrix![2.0]).unwrap();
        assert!((r2.jf_ref - 2.0 * r1.jf_ref).abs() < 1e-12);
        assert!((r2.jr_ref - 2.0 * r1.jr_ref).abs() < 1e-12);
    }
}
