//! Zermelo's navigation problem: a boat crossing a river whose current
//! grows linearly with distance from the centerline. Maximize the downstream
//! distance in one second; the current gain c is the uncertain parameter.

use super::{ProblemBundle, ProblemDefaults, ReportQuantity};
use crate::desensitize::OutputMap;
use crate::mesh::Mesh;
use crate::ocp::OcpDefinition;
use nalgebra::dmatrix;
use std::f64::consts::PI;
use std::sync::Arc;

/// Nominal current gain.
pub const NOMINAL_C: f64 = 10.0;

pub fn zermelo_ocp() -> ProblemBundle {
    let mut ocp = OcpDefinition::new(
        "zermelo",
        2,
        1,
        1,
        Arc::new(|out, x, u, p, _t| {
            out[0] = u[0].cos() + p[0] * x[1];
            out[1] = u[0].sin();
        }),
    );
    ocp.state_names = vec!["x1".into(), "x2".into()];
    ocp.control_names = vec!["u".into()];
    ocp.mayer = Some(Arc::new(|_x0, _t0, xf, _tf| -xf[0]));
    ocp.nb = 3;
    ocp.boundary = Some(Arc::new(|out, x0, _t0, xf, _tf| {
        out[0] = x0[0];
        out[1] = x0[1];
        out[2] = xf[1];
    }));
    ocp.b_lower = vec![0.0; 3];
    ocp.b_upper = vec![0.0; 3];
    ocp.x_lower = vec![-10.0, -10.0];
    ocp.x_upper = vec![10.0, 10.0];
    ocp.u_lower = vec![-2.0 * PI];
    ocp.u_upper = vec![2.0 * PI];
    ocp.t0_bounds = (0.0, 0.0);
    ocp.tf_bounds = (1.0, 1.0);
    ocp.t0_guess = 0.0;
    ocp.tf_guess = 1.0;
    ocp.nominal_params = vec![NOMINAL_C];
    ocp.param_scale = vec![NOMINAL_C];
    ocp.time_invariant = true;

    // A = [[0, c], [0, 0]], B = [[x2], [0]], df/du = [[-sin u], [cos u]]
    ocp.jac_state = Some(Arc::new(|out, _x, _u, p, _t| {
        out[0] = 0.0;
        out[1] = p[0];
        out[2] = 0.0;
        out[3] = 0.0;
    }));
    ocp.jac_params = Some(Arc::new(|out, x, _u, _p, _t| {
        out[0] = x[1];
        out[1] = 0.0;
    }));
    ocp.jac_control = Some(Arc::new(|out, _x, u, _p, _t| {
        out[0] = -u[0].sin();
        out[1] = u[0].cos();
    }));

    ocp.guess = Arc::new(|frac| {
        let x1 = 2.5 * frac;
        let x2 = 0.4 * (PI * frac).sin();
        let u = 1.2 - 2.4 * frac;
        (vec![x1, x2], vec![u])
    });

    let output = OutputMap::linear(dmatrix![1.0, 0.0]);
    let sigma = 0.1 * NOMINAL_C;
    let defaults = ProblemDefaults {
        mesh: Mesh::uniform(10, 4).expect("static mesh"),
        beta: 0.0,
        xi: 0.0,
        covariance: dmatrix![sigma * sigma],
        guidance_dt: 0.2,
        mesh_tolerance: 1e-5,
        max_refinements: 10,
        report: vec![ReportQuantity {
            name: "x1f".into(),
            state_index: 0,
            display_scale: 1.0,
        }],
    };
    ProblemBundle { ocp, output, defaults }
}

/// Closed-form optimum of the nominal problem (heading tan u = c/2 - c t):
/// terminal downstream distance sqrt(1 + (c/2)^2)/... evaluated for c = 10:
/// x1*(1) = sqrt(26)/2 + asinh(5)/10.
pub fn analytic_nominal_objective() -> f64 {
    let half_c = NOMINAL_C / 2.0;
    let root = (1.0 + half_c * half_c).sqrt();
    root / 2.0 + (half_c + root).ln() / NOMINAL_C
}

/// Closed-form terminal sensitivity of x1 with respect to c on the nominal
/// optimal path: the integral of x2 over the crossing,
/// sqrt(1 + c^2/4)/(2c) - asinh(c/2)/c^2.
pub fn analytic_nominal_sensitivity() -> f64 {
    let half_c = NOMINAL_C / 2.0;
    let root = (1.0 + half_c * half_c).sqrt();
    root / (2.0 * NOMINAL_C) - (half_c + root).ln() / (NOMINAL_C * NOMINAL_C)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::DerivativeProvider;
    use crate::ocp::validate;

    #[test]
    fn dynamics_substitution_example() {
        let b = zermelo_ocp();
        let rates = b.ocp.eval_dynamics(&[0.0, 0.5], &[0.0], &[10.0], 0.0);
        assert_eq!(rates, vec![6.0, 0.0]);
    }

    #[test]
    fn boundary_residuals_vanish_at_stated_values() {
        let b = zermelo_ocp();
        let mut out = vec![9.0; 3];
        (b.ocp.boundary.as_ref().unwrap())(&mut out, &[0.0, 0.0], 0.0, &[2.78, 0.0], 1.0);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn definition_validates_cleanly() {
        let b = zermelo_ocp();
        assert!(validate(&b.ocp).is_empty());
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let b = zermelo_ocp();
        let mut plain = b.ocp.clone();
        plain.jac_state = None;
        plain.jac_params = None;
        plain.jac_control = None;
        let prov = DerivativeProvider::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)];
            let u = [rng.gen_range(-1.5..1.5)];
            let p = [rng.gen_range(5.0..15.0)];
            let a_exact = prov.jacobian_state(&b.ocp, &x, &u, &p, 0.0).unwrap();
            let a_fd = prov.jacobian_state(&plain, &x, &u, &p, 0.0).unwrap();
            for (e, f) in a_exact.iter().zip(&a_fd) {
                assert!((e - f).abs() < 1e-6, "{e} vs {f}");
            }
            let b_exact = prov.jacobian_params(&b.ocp, &x, &u, &p, 0.0).unwrap();
            let b_fd = prov.jacobian_params(&plain, &x, &u, &p, 0.0).unwrap();
            for (e, f) in b_exact.iter().zip(&b_fd) {
                assert!((e - f).abs() < 1e-6);
            }
            let u_exact = prov.jacobian_control(&b.ocp, &x, &u, &p, 0.0).unwrap();
            let u_fd = prov.jacobian_control(&plain, &x, &u, &p, 0.0).unwrap();
            for (e, f) in u_exact.iter().zip(&u_fd) {
                assert!((e - f).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn analytic_objective_value() {
        // x1*(1) = sqrt(26)/2 + asinh(5)/10 for c = 10
        let x1 = analytic_nominal_objective();
        assert!((x1 - 2.7807536).abs() < 1e-6, "{x1}");
        let s = analytic_nominal_sensitivity();
        assert!((s - 0.2318266).abs() < 1e-6, "{s}");
    }
}
