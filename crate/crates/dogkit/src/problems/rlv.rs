//! Reusable-launch-vehicle atmospheric entry over a spherical non-rotating
//! Earth: point mass with angle of attack and bank angle as states driven by
//! rate controls. Crossrange (terminal latitude) is maximized with downrange
//! (terminal longitude) fixed; the density scale-height and zero-lift drag
//! coefficient are the uncertain parameters.
//!
//! The definition is written in canonical units: length 1e6 m, time 100 s,
//! velocity 1e4 m/s, angles in radians. Parameters stay in SI (H in meters,
//! CD0 dimensionless) so sampled covariances match the tabulated values.

use super::{ProblemBundle, ProblemDefaults, ReportQuantity};
use crate::desensitize::OutputMap;
use crate::mesh::Mesh;
use crate::ocp::OcpDefinition;
use nalgebra::DMatrix;
use std::sync::Arc;

// SI constants.
pub const REFERENCE_AREA_M2: f64 = 249.9092;
pub const MASS_KG: f64 = 92079.2526;
pub const EARTH_RADIUS_M: f64 = 6.378145e6;
pub const SEA_LEVEL_DENSITY: f64 = 1.225;
pub const GRAVITATIONAL_PARAMETER: f64 = 3.986e14;
pub const SCALE_HEIGHT_M: f64 = 7254.24;
pub const CD0: f64 = 0.0785;
pub const CD1: f64 = -0.3529;
/// Quadratic drag coefficient per squared radian. The per-degree shuttle
/// model converted to radians; the companion linear coefficients match the
/// tabulated values under the same conversion.
pub const CD2: f64 = 2.0399;
pub const CL0: f64 = -0.2070;
pub const CL1: f64 = 1.6756;

// Canonical units.
pub const LENGTH_UNIT_M: f64 = 1.0e6;
pub const TIME_UNIT_S: f64 = 100.0;
pub const VELOCITY_UNIT_MS: f64 = LENGTH_UNIT_M / TIME_UNIT_S;

const RE: f64 = EARTH_RADIUS_M / LENGTH_UNIT_M;
const MU: f64 = GRAVITATIONAL_PARAMETER * TIME_UNIT_S * TIME_UNIT_S
    / (LENGTH_UNIT_M * LENGTH_UNIT_M * LENGTH_UNIT_M);
/// rho0 S / (2 m) in 1/length-unit: aerodynamic acceleration per CD per v^2.
const KAERO: f64 = SEA_LEVEL_DENSITY * REFERENCE_AREA_M2 / (2.0 * MASS_KG) * LENGTH_UNIT_M;

/// Sea-level-referenced density ratio at canonical altitude h for SI scale
/// height.
#[inline]
fn density_ratio(h: f64, h_si: f64) -> f64 {
    (-h * LENGTH_UNIT_M / h_si).exp()
}

/// Gravitational acceleration (SI) at SI radius; exposed for unit checks.
pub fn gravity_si(r_m: f64) -> f64 {
    GRAVITATIONAL_PARAMETER / (r_m * r_m)
}

/// Atmospheric density (SI) at SI altitude.
pub fn density_si(h_m: f64) -> f64 {
    SEA_LEVEL_DENSITY * (-h_m / SCALE_HEIGHT_M).exp()
}

/// Lift coefficient at angle of attack (rad).
pub fn lift_coefficient(alpha: f64) -> f64 {
    CL0 + CL1 * alpha
}

/// Drag coefficient at angle of attack (rad) for zero-lift coefficient cd0.
pub fn drag_coefficient(alpha: f64, cd0: f64) -> f64 {
    cd0 + CD1 * alpha + CD2 * alpha * alpha
}

const IDX_R: usize = 0;
const IDX_THETA: usize = 1;
const IDX_PHI: usize = 2;
const IDX_V: usize = 3;
const IDX_GAMMA: usize = 4;
const IDX_PSI: usize = 5;
const IDX_ALPHA: usize = 6;
const IDX_SIGMA: usize = 7;

pub fn rlv_ocp() -> ProblemBundle {
    let mut ocp = OcpDefinition::new(
        "rlv-entry",
        8,
        2,
        2,
        Arc::new(|out, x, u, p, _t| {
            let (r, v, gamma, psi, phi) = (x[IDX_R], x[IDX_V], x[IDX_GAMMA], x[IDX_PSI], x[IDX_PHI]);
            let (alpha, sigma) = (x[IDX_ALPHA], x[IDX_SIGMA]);
            let rho = density_ratio(r - RE, p[0]);
            let qsm = KAERO * rho * v * v;
            let lift = qsm * lift_coefficient(alpha);
            let drag = qsm * drag_coefficient(alpha, p[1]);
            let g = MU / (r * r);
            let (sg, cg) = gamma.sin_cos();
            let (sp, cp) = psi.sin_cos();
            out[IDX_R] = v * sg;
            out[IDX_THETA] = v * cg * sp / (r * phi.cos());
            out[IDX_PHI] = v * cg * cp / r;
            out[IDX_V] = -drag - g * sg;
            out[IDX_GAMMA] = lift * sigma.cos() / v - (g / v - v / r) * cg;
            out[IDX_PSI] = lift * sigma.sin() / (v * cg) - (v / r) * cg * sp * phi.tan();
            out[IDX_ALPHA] = u[0];
            out[IDX_SIGMA] = u[1];
        }),
    );
    ocp.state_names = vec![
        "r".into(),
        "theta".into(),
        "phi".into(),
        "v".into(),
        "gamma".into(),
        "psi".into(),
        "alpha".into(),
        "sigma".into(),
    ];
    ocp.control_names = vec!["alpha_rate".into(), "sigma_rate".into()];
    ocp.mayer = Some(Arc::new(|_x0, _t0, xf, _tf| -xf[IDX_PHI]));
    // Tiny rate regularization: the attitude rates are otherwise flat
    // directions near the end of the flight and wander to their bounds.
    // The perturbation to the crossrange objective is O(1e-5) radians.
    const RATE_REG: f64 = 1e-4;
    ocp.lagrange = Some(Arc::new(|_x, u, _t| {
        RATE_REG * (u[0] * u[0] + u[1] * u[1])
    }));
    ocp.grad_lagrange = Some(Arc::new(|gx, gu, _x, u, _t| {
        gx.iter_mut().for_each(|v| *v = 0.0);
        gu[0] = 2.0 * RATE_REG * u[0];
        gu[1] = 2.0 * RATE_REG * u[1];
    }));
    ocp.grad_mayer = Some(Arc::new(|out, _x0, _t0, _xf, _tf| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[8 + 1 + IDX_PHI] = -1.0;
    }));
    ocp.time_invariant = true;

    // Fixed boundary values: full state at entry except alpha/sigma, then
    // (r, theta, v, gamma) at the terminal interface.
    let r0 = RE + 79.248e3 / LENGTH_UNIT_M;
    let rf = RE + 24.384e3 / LENGTH_UNIT_M;
    let theta_f = 75.0f64.to_radians();
    let v0 = 7803.0 / VELOCITY_UNIT_MS;
    let vf = 762.0 / VELOCITY_UNIT_MS;
    let gamma0 = (-1.0f64).to_radians();
    let gamma_f = (-5.0f64).to_radians();
    let psi0 = 90.0f64.to_radians();
    ocp.nb = 10;
    ocp.boundary = Some(Arc::new(|out, x0, _t0, xf, _tf| {
        out[0] = x0[IDX_R];
        out[1] = x0[IDX_THETA];
        out[2] = x0[IDX_PHI];
        out[3] = x0[IDX_V];
        out[4] = x0[IDX_GAMMA];
        out[5] = x0[IDX_PSI];
        out[6] = xf[IDX_R];
        out[7] = xf[IDX_THETA];
        out[8] = xf[IDX_V];
        out[9] = xf[IDX_GAMMA];
    }));
    let b_values = vec![r0, 0.0, 0.0, v0, gamma0, psi0, rf, theta_f, vf, gamma_f];
    ocp.b_lower = b_values.clone();
    ocp.b_upper = b_values;

    ocp.x_lower = vec![
        RE,
        -0.5,
        -1.4,
        100.0 / VELOCITY_UNIT_MS,
        (-80.0f64).to_radians(),
        -std::f64::consts::PI,
        (-90.0f64).to_radians(),
        (-90.0f64).to_radians(),
    ];
    ocp.x_upper = vec![
        RE + 120.0e3 / LENGTH_UNIT_M,
        2.5,
        1.4,
        10_000.0 / VELOCITY_UNIT_MS,
        80.0f64.to_radians(),
        2.0 * std::f64::consts::PI,
        90.0f64.to_radians(),
        1.0f64.to_radians(),
    ];
    let rate_bound = 10.0f64.to_radians() * TIME_UNIT_S;
    ocp.u_lower = vec![-rate_bound; 2];
    ocp.u_upper = vec![rate_bound; 2];
    ocp.t0_bounds = (0.0, 0.0);
    ocp.tf_bounds = (500.0 / TIME_UNIT_S, 3000.0 / TIME_UNIT_S);
    ocp.t0_guess = 0.0;
    ocp.tf_guess = 2000.0 / TIME_UNIT_S;
    ocp.nominal_params = vec![SCALE_HEIGHT_M, CD0];
    ocp.param_scale = vec![SCALE_HEIGHT_M, CD0];

    ocp.jac_state = Some(Arc::new(|out, x, _u, p, _t| {
        out.iter_mut().for_each(|v| *v = 0.0);
        let nx = 8;
        let (r, v, gamma, psi, phi) = (x[IDX_R], x[IDX_V], x[IDX_GAMMA], x[IDX_PSI], x[IDX_PHI]);
        let (alpha, sigma) = (x[IDX_ALPHA], x[IDX_SIGMA]);
        let rho = density_ratio(r - RE, p[0]);
        let qsm = KAERO * rho * v * v;
        let cl = lift_coefficient(alpha);
        let cd = drag_coefficient(alpha, p[1]);
        let lift = qsm * cl;
        let drag = qsm * cd;
        let g = MU / (r * r);
        let (sg, cg) = gamma.sin_cos();
        let (sp, cp) = psi.sin_cos();
        let (ss, cs) = sigma.sin_cos();
        let (tphi, cphi) = (phi.tan(), phi.cos());
        // density falls as exp(-h LU / H): d(log rho)/dr = -ir_h
        let ir_h = LENGTH_UNIT_M / p[0];
        let mut set = |row: usize, col: usize, val: f64| out[row * nx + col] = val;

        // r-dot = v sin(gamma)
        set(IDX_R, IDX_V, sg);
        set(IDX_R, IDX_GAMMA, v * cg);
        // theta-dot = v cos g sin psi / (r cos phi)
        let thd = v * cg * sp / (r * cphi);
        set(IDX_THETA, IDX_R, -thd / r);
        set(IDX_THETA, IDX_PHI, thd * tphi);
        set(IDX_THETA, IDX_V, thd / v);
        set(IDX_THETA, IDX_GAMMA, -v * sg * sp / (r * cphi));
        set(IDX_THETA, IDX_PSI, v * cg * cp / (r * cphi));
        // phi-dot = v cos g cos psi / r
        let phd = v * cg * cp / r;
        set(IDX_PHI, IDX_R, -phd / r);
        set(IDX_PHI, IDX_V, phd / v);
        set(IDX_PHI, IDX_GAMMA, -v * sg * cp / r);
        set(IDX_PHI, IDX_PSI, -v * cg * sp / r);
        // v-dot = -D - g sin(gamma)
        set(IDX_V, IDX_R, drag * ir_h + 2.0 * g * sg / r);
        set(IDX_V, IDX_V, -2.0 * drag / v);
        set(IDX_V, IDX_GAMMA, -g * cg);
        set(IDX_V, IDX_ALPHA, -qsm * (CD1 + 2.0 * CD2 * alpha));
        // gamma-dot = L cos(sigma)/v - (g/v - v/r) cos(gamma)
        set(
            IDX_GAMMA,
            IDX_R,
            -lift * ir_h * cs / v - (-2.0 * g / (r * v) + v / (r * r)) * cg,
        );
        set(IDX_GAMMA, IDX_V, lift * cs / (v * v) + (g / (v * v) + 1.0 / r) * cg);
        set(IDX_GAMMA, IDX_GAMMA, (g / v - v / r) * sg);
        set(IDX_GAMMA, IDX_ALPHA, qsm * CL1 * cs / v);
        set(IDX_GAMMA, IDX_SIGMA, -lift * ss / v);
        // psi-dot = L sin(sigma)/(v cos gamma) - (v/r) cos g sin psi tan phi
        set(
            IDX_PSI,
            IDX_R,
            -lift * ir_h * ss / (v * cg) + (v / (r * r)) * cg * sp * tphi,
        );
        set(IDX_PSI, IDX_PHI, -(v / r) * cg * sp / (cphi * cphi));
        set(IDX_PSI, IDX_V, lift * ss / (v * v * cg) - cg * sp * tphi / r);
        set(
            IDX_PSI,
            IDX_GAMMA,
            lift * ss * sg / (v * cg * cg) + (v / r) * sg * sp * tphi,
        );
        set(IDX_PSI, IDX_PSI, -(v / r) * cg * cp * tphi);
        set(IDX_PSI, IDX_ALPHA, qsm * CL1 * ss / (v * cg));
        set(IDX_PSI, IDX_SIGMA, lift * cs / (v * cg));
        // alpha-dot, sigma-dot rows are zero
    }));

    ocp.jac_params = Some(Arc::new(|out, x, _u, p, _t| {
        out.iter_mut().for_each(|v| *v = 0.0);
        let np = 2;
        let (r, v, gamma, sigma, alpha) =
            (x[IDX_R], x[IDX_V], x[IDX_GAMMA], x[IDX_SIGMA], x[IDX_ALPHA]);
        let h = r - RE;
        let rho = density_ratio(h, p[0]);
        let qsm = KAERO * rho * v * v;
        let lift = qsm * lift_coefficient(alpha);
        let drag = qsm * drag_coefficient(alpha, p[1]);
        // d rho / dH = rho * h LU / H^2
        let hfac = h * LENGTH_UNIT_M / (p[0] * p[0]);
        let (ss, cs) = sigma.sin_cos();
        let cg = gamma.cos();
        out[IDX_V * np] = -drag * hfac;
        out[IDX_GAMMA * np] = lift * cs / v * hfac;
        out[IDX_PSI * np] = lift * ss / (v * cg) * hfac;
        out[IDX_V * np + 1] = -qsm;
    }));

    ocp.jac_control = Some(Arc::new(|out, _x, _u, _p, _t| {
        out.iter_mut().for_each(|v| *v = 0.0);
        let nu = 2;
        out[IDX_ALPHA * nu] = 1.0;
        out[IDX_SIGMA * nu + 1] = 1.0;
    }));

    let tf_guess = ocp.tf_guess;
    ocp.guess = Arc::new(move |frac| {
        let lerp = |a: f64, b: f64| a + (b - a) * frac;
        let x = vec![
            lerp(RE + 0.079248, RE + 0.024384),
            lerp(0.0, 75.0f64.to_radians()),
            lerp(0.0, 30.0f64.to_radians()),
            lerp(0.7803, 0.0762),
            lerp((-1.0f64).to_radians(), (-5.0f64).to_radians()),
            lerp(90.0f64.to_radians(), 45.0f64.to_radians()),
            17.0f64.to_radians(),
            (-50.0f64).to_radians(),
        ];
        (x, vec![0.0, 0.0])
    });
    let _ = tf_guess;

    // Output: (theta, phi, v, gamma) selector with zero columns for the
    // angle states.
    let mut g = DMatrix::zeros(4, 8);
    g[(0, IDX_THETA)] = 1.0;
    g[(1, IDX_PHI)] = 1.0;
    g[(2, IDX_V)] = 1.0;
    g[(3, IDX_GAMMA)] = 1.0;
    let output = OutputMap::linear(g);

    let sig_h = 0.01 * SCALE_HEIGHT_M;
    let sig_cd0 = 0.01 * CD0;
    let covariance = DMatrix::from_diagonal(&nalgebra::dvector![
        sig_h * sig_h,
        sig_cd0 * sig_cd0
    ]);
    let defaults = ProblemDefaults {
        mesh: Mesh::uniform(10, 4).expect("static mesh"),
        beta: 0.0,
        xi: 0.5,
        covariance,
        guidance_dt: 20.0 / TIME_UNIT_S,
        mesh_tolerance: 1e-5,
        max_refinements: 10,
        report: vec![
            ReportQuantity {
                name: "lat_deg".into(),
                state_index: IDX_PHI,
                display_scale: 180.0 / std::f64::consts::PI,
            },
            ReportQuantity {
                name: "lon_deg".into(),
                state_index: IDX_THETA,
                display_scale: 180.0 / std::f64::consts::PI,
            },
        ],
    };
    ProblemBundle { ocp, output, defaults }
}
