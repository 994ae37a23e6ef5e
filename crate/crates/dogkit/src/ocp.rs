//! The transformed continuous-time Bolza optimal control problem and the
//! per-interval polynomial trajectory representation.

use crate::error::{Error, Result};
use crate::lgr::{barycentric_eval, compute_radau_rule};
use crate::mesh::{Mesh, TimeMap};
use serde::{Deserialize, Serialize};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

/// Dynamics callback: writes f(x, u, p, t) into `out` (length nx).
pub type DynamicsFn = Arc<dyn Fn(&mut [f64], &[f64], &[f64], &[f64], f64) + Send + Sync>;
/// Mayer cost M(x0, t0, xf, tf).
pub type MayerFn = Arc<dyn Fn(&[f64], f64, &[f64], f64) -> f64 + Send + Sync>;
/// Lagrange integrand L(x, u, t).
pub type LagrangeFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;
/// Boundary function: writes b(x0, t0, xf, tf) into `out` (length nb).
pub type BoundaryFn = Arc<dyn Fn(&mut [f64], &[f64], f64, &[f64], f64) + Send + Sync>;
/// Path function: writes c(x, u, t) into `out` (length nc).
pub type PathFn = Arc<dyn Fn(&mut [f64], &[f64], &[f64], f64) + Send + Sync>;
/// Analytic Jacobian callback: writes a row-major matrix into `out`.
pub type JacobianFn = Arc<dyn Fn(&mut [f64], &[f64], &[f64], &[f64], f64) + Send + Sync>;
/// Analytic Lagrange gradient: writes dL/dx and dL/du.
pub type LagrangeGradFn = Arc<dyn Fn(&mut [f64], &mut [f64], &[f64], &[f64], f64) + Send + Sync>;
/// Analytic Mayer gradient over the packed endpoint vector
/// (x0..., t0, xf..., tf), length 2 nx + 2.
pub type MayerGradFn = Arc<dyn Fn(&mut [f64], &[f64], f64, &[f64], f64) + Send + Sync>;
/// Initial guess: normalized time fraction in [0, 1] -> (x, u).
pub type GuessFn = Arc<dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// A Bolza optimal control problem. Callbacks must be pure; definitions are
/// immutable once built and cheap to clone (shared closures).
#[derive(Clone)]
pub struct OcpDefinition {
    pub name: String,
    pub nx: usize,
    pub nu: usize,
    pub np: usize,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub dynamics: DynamicsFn,
    pub mayer: Option<MayerFn>,
    pub lagrange: Option<LagrangeFn>,
    pub nb: usize,
    pub boundary: Option<BoundaryFn>,
    pub b_lower: Vec<f64>,
    pub b_upper: Vec<f64>,
    pub nc: usize,
    pub path: Option<PathFn>,
    pub c_lower: Vec<f64>,
    pub c_upper: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Equal lower/upper encodes fixed time; t0 and tf are always decision
    /// variables.
    pub t0_bounds: (f64, f64),
    pub tf_bounds: (f64, f64),
    pub nominal_params: Vec<f64>,
    /// Analytic A = df/dx (nx x nx, row-major), finite differences otherwise.
    pub jac_state: Option<JacobianFn>,
    /// Analytic B = df/dp (nx x np, row-major).
    pub jac_params: Option<JacobianFn>,
    /// Analytic df/du (nx x nu, row-major).
    pub jac_control: Option<JacobianFn>,
    /// Analytic Lagrange-integrand gradient (finite differences otherwise).
    pub grad_lagrange: Option<LagrangeGradFn>,
    /// Analytic Mayer gradient (finite differences otherwise).
    pub grad_mayer: Option<MayerGradFn>,
    /// Dynamics carry no explicit t dependence (skips time differencing).
    pub time_invariant: bool,
    /// Characteristic magnitudes for problem scaling.
    pub x_scale: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub t_scale: f64,
    pub obj_scale: f64,
    pub param_scale: Vec<f64>,
    pub guess: GuessFn,
    pub t0_guess: f64,
    pub tf_guess: f64,
}

impl OcpDefinition {
    /// A bare definition with unit scales, wide bounds, zero guess.
    pub fn new(name: &str, nx: usize, nu: usize, np: usize, dynamics: DynamicsFn) -> Self {
        OcpDefinition {
            name: name.to_string(),
            nx,
            nu,
            np,
            state_names: (0..nx).map(|i| format!("x{i}")).collect(),
            control_names: (0..nu).map(|i| format!("u{i}")).collect(),
            dynamics,
            mayer: None,
            lagrange: None,
            nb: 0,
            boundary: None,
            b_lower: vec![],
            b_upper: vec![],
            nc: 0,
            path: None,
            c_lower: vec![],
            c_upper: vec![],
            x_lower: vec![f64::NEG_INFINITY; nx],
            x_upper: vec![f64::INFINITY; nx],
            u_lower: vec![f64::NEG_INFINITY; nu],
            u_upper: vec![f64::INFINITY; nu],
            t0_bounds: (0.0, 0.0),
            tf_bounds: (1.0, 1.0),
            nominal_params: vec![0.0; np],
            jac_state: None,
            jac_params: None,
            jac_control: None,
            grad_lagrange: None,
            grad_mayer: None,
            time_invariant: false,
            x_scale: vec![1.0; nx],
            u_scale: vec![1.0; nu],
            t_scale: 1.0,
            obj_scale: 1.0,
            param_scale: vec![1.0; np],
            guess: Arc::new(move |_| (vec![0.0; nx], vec![0.0; nu])),
            t0_guess: 0.0,
            tf_guess: 1.0,
        }
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64], p: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nx];
        (self.dynamics)(&mut out, x, u, p, t);
        out
    }

    pub fn eval_mayer(&self, x0: &[f64], t0: f64, xf: &[f64], tf: f64) -> f64 {
        self.mayer.as_ref().map_or(0.0, |m| m(x0, t0, xf, tf))
    }

    pub fn eval_lagrange(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        self.lagrange.as_ref().map_or(0.0, |l| l(x, u, t))
    }
}

/// Structural diagnostics from probing a definition at its initial guess.
pub fn validate(ocp: &OcpDefinition) -> Vec<String> {
    let mut diags = Vec::new();
    let mut check_bounds = |lo: &[f64], hi: &[f64], n: usize, what: &str| {
        if lo.len() != n || hi.len() != n {
            diags.push(format!(
                "{what} bounds have lengths {}/{} but dimension is {n}",
                lo.len(),
                hi.len()
            ));
            return;
        }
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            if l > h {
                diags.push(format!("{what} bound order violated at component {i}: {l} > {h}"));
            }
        }
    };
    check_bounds(&ocp.x_lower, &ocp.x_upper, ocp.nx, "state");
    check_bounds(&ocp.u_lower, &ocp.u_upper, ocp.nu, "control");
    check_bounds(&ocp.b_lower, &ocp.b_upper, ocp.nb, "boundary");
    check_bounds(&ocp.c_lower, &ocp.c_upper, ocp.nc, "path");
    if ocp.t0_bounds.0 > ocp.t0_bounds.1 {
        diags.push("t0 bound order violated".into());
    }
    if ocp.tf_bounds.0 > ocp.tf_bounds.1 {
        diags.push("tf bound order violated".into());
    }
    if ocp.nominal_params.len() != ocp.np {
        diags.push(format!(
            "nominal parameter vector has length {} but np = {}",
            ocp.nominal_params.len(),
            ocp.np
        ));
    }
    if ocp.state_names.len() != ocp.nx {
        diags.push("state_names length differs from nx".into());
    }
    if ocp.control_names.len() != ocp.nu {
        diags.push("control_names length differs from nu".into());
    }

    // Probe the callbacks at the guess midpoint; a panicking callback is a
    // diagnostic, not a crash.
    let probe = catch_unwind(AssertUnwindSafe(|| (ocp.guess)(0.5)));
    let (x, u) = match probe {
        Ok((x, u)) => (x, u),
        Err(_) => {
            diags.push("initial-guess callback panicked at fraction 0.5".into());
            return diags;
        }
    };
    if x.len() != ocp.nx || u.len() != ocp.nu {
        diags.push(format!(
            "guess returned ({}, {}) values; expected ({}, {})",
            x.len(),
            u.len(),
            ocp.nx,
            ocp.nu
        ));
        return diags;
    }
    let t_probe = 0.5 * (ocp.t0_guess + ocp.tf_guess);
    // Oversized probe buffer so a callback writing past its declared
    // dimension is caught rather than fenced.
    let dyn_probe = catch_unwind(AssertUnwindSafe(|| {
        let mut out = vec![f64::NAN; ocp.nx];
        (ocp.dynamics)(&mut out, &x, &u, &ocp.nominal_params, t_probe);
        out
    }));
    match dyn_probe {
        Ok(out) => {
            if out.iter().any(|v| v.is_nan()) {
                diags.push("dynamics left NaN components at the probe point".into());
            }
        }
        Err(_) => diags.push("dynamics callback panicked at the probe point".into()),
    }
    if let Some(b) = &ocp.boundary {
        let r = catch_unwind(AssertUnwindSafe(|| {
            let mut out = vec![f64::NAN; ocp.nb];
            b(&mut out, &x, ocp.t0_guess, &x, ocp.tf_guess);
            out
        }));
        match r {
            Ok(out) => {
                if out.iter().any(|v| v.is_nan()) {
                    diags.push("boundary function left NaN components".into());
                }
            }
            Err(_) => diags.push("boundary callback panicked at the probe point".into()),
        }
    }
    if let Some(c) = &ocp.path {
        let r = catch_unwind(AssertUnwindSafe(|| {
            let mut out = vec![f64::NAN; ocp.nc];
            c(&mut out, &x, &u, t_probe);
            out
        }));
        match r {
            Ok(out) => {
                if out.iter().any(|v| v.is_nan()) {
                    diags.push("path function left NaN components".into());
                }
            }
            Err(_) => diags.push("path callback panicked at the probe point".into()),
        }
    }
    diags
}

/// Discrete solution: state values at all support points, control values at
/// all collocation points, with polynomial evaluation anywhere in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub mesh: Mesh,
    pub time_map: TimeMap,
    /// (N+1) rows of nx state components; boundary rows are shared.
    pub states: Vec<Vec<f64>>,
    /// N rows of nu control components.
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        mesh: Mesh,
        time_map: TimeMap,
        states: Vec<Vec<f64>>,
        controls: Vec<Vec<f64>>,
    ) -> Result<Self> {
        mesh.validate()?;
        let n = mesh.total_collocation();
        if states.len() != n + 1 {
            return Err(Error::invalid(format!(
                "{} state rows for {} support points",
                states.len(),
                n + 1
            )));
        }
        if controls.len() != n {
            return Err(Error::invalid(format!(
                "{} control rows for {} collocation points",
                controls.len(),
                n
            )));
        }
        Ok(Trajectory { mesh, time_map, states, controls })
    }

    pub fn nx(&self) -> usize {
        self.states.first().map_or(0, |r| r.len())
    }

    pub fn nu(&self) -> usize {
        self.controls.first().map_or(0, |r| r.len())
    }

    /// Clock times of all collocation points.
    pub fn collocation_times(&self) -> Vec<f64> {
        let offsets = self.mesh.support_offsets();
        let mut times = Vec::with_capacity(self.mesh.total_collocation());
        for (k, &count) in self.mesh.counts.iter().enumerate() {
            let rule = compute_radau_rule(count).expect("count validated");
            let (a, b) = (self.mesh.fractions[k], self.mesh.fractions[k + 1]);
            for &xi in &rule.nodes {
                let tau = a + 0.5 * (xi + 1.0) * (b - a);
                times.push(self.time_map.tau_to_time(tau.clamp(-1.0, 1.0)).unwrap());
            }
        }
        debug_assert_eq!(times.len(), offsets[offsets.len() - 1]);
        times
    }

    /// Clock times of all support points (collocation plus interval ends).
    pub fn support_times(&self) -> Vec<f64> {
        let mut times = self.collocation_times();
        times.push(self.time_map.tf);
        // interval right endpoints other than tf are the next interval's
        // first collocation point, which is already present
        times
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let span = self.time_map.duration();
        let slack = 1e-12 * span.abs().max(1.0);
        if t < self.time_map.t0 - slack || t > self.time_map.tf + slack {
            return Err(Error::OutOfDomain(format!(
                "t={t} outside [{}, {}]",
                self.time_map.t0, self.time_map.tf
            )));
        }
        let tau = self.time_map.time_to_tau(t.clamp(self.time_map.t0, self.time_map.tf));
        let k = self.mesh.interval_of(tau);
        let (a, b) = (self.mesh.fractions[k], self.mesh.fractions[k + 1]);
        let xi = (2.0 * (tau - a) / (b - a) - 1.0).clamp(-1.0, 1.0);
        Ok((k, xi))
    }

    /// State at clock time `t` via per-interval Lagrange interpolation.
    pub fn eval_state(&self, t: f64) -> Result<Vec<f64>> {
        let (k, xi) = self.locate(t)?;
        let rule = compute_radau_rule(self.mesh.counts[k])?;
        let offset = self.mesh.support_offsets()[k];
        let nx = self.nx();
        let mut out = vec![0.0; nx];
        let mut vals = vec![0.0; rule.n + 1];
        for (c, slot) in out.iter_mut().enumerate() {
            for j in 0..=rule.n {
                vals[j] = self.states[offset + j][c];
            }
            *slot = barycentric_eval(&rule.support_points, &rule.barycentric, &vals, xi);
        }
        Ok(out)
    }

    /// Control at clock time `t`; each interval's control polynomial extends
    /// to the noncollocated right endpoint.
    pub fn eval_control(&self, t: f64) -> Result<Vec<f64>> {
        let (k, xi) = self.locate(t)?;
        let rule = compute_radau_rule(self.mesh.counts[k])?;
        let offset = self.mesh.support_offsets()[k];
        let nu = self.nu();
        let mut out = vec![0.0; nu];
        let mut vals = vec![0.0; rule.n];
        for (c, slot) in out.iter_mut().enumerate() {
            for i in 0..rule.n {
                vals[i] = self.controls[offset + i][c];
            }
            *slot = barycentric_eval(&rule.nodes, &rule.node_barycentric, &vals, xi);
        }
        Ok(out)
    }

    /// State and control at clock time `t`.
    pub fn evaluate(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.eval_state(t)?, self.eval_control(t)?))
    }

    /// CSV rows (one per collocation point): t, states..., controls...
    pub fn to_csv(&self, state_names: &[String], control_names: &[String]) -> String {
        let mut out = String::from("t");
        for n in state_names {
            out.push(',');
            out.push_str(n);
        }
        for n in control_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let times = self.collocation_times();
        for (i, t) in times.iter().enumerate() {
            out.push_str(&format!("{:.16e}", t));
            for v in &self.states[i] {
                out.push_str(&format!(",{:.16e}", v));
            }
            for v in &self.controls[i] {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_control_trajectory() -> Trajectory {
        let mesh = Mesh::new(vec![-1.0, 0.0, 1.0], vec![3, 4]).unwrap();
        let time_map = TimeMap::new(0.0, 2.0).unwrap();
        let n = mesh.total_collocation();
        // x(t) = (t, t^2), u = 0.7
        let mut traj = Trajectory {
            mesh: mesh.clone(),
            time_map,
            states: vec![vec![0.0; 2]; n + 1],
            controls: vec![vec![0.7]; n],
        };
        let times = traj.support_times();
        for (i, t) in times.iter().enumerate() {
            traj.states[i] = vec![*t, t * t];
        }
        traj
    }

    #[test]
    fn exact_at_support_points_and_boundaries() {
        let traj = constant_control_trajectory();
        let x = traj.eval_state(0.0).unwrap();
        assert_eq!(x[0], traj.states[0][0]);
        // interior mesh point t = 1 (tau = 0): shared boundary value
        let x = traj.eval_state(1.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_continuous_across_mesh_points() {
        let traj = constant_control_trajectory();
        let left = traj.eval_state(1.0 - 1e-13).unwrap();
        let right = traj.eval_state(1.0 + 1e-13).unwrap();
        for (a, b) in left.iter().zip(&right) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn constant_control_reproduced_everywhere() {
        let traj = constant_control_trajectory();
        for t in [0.0, 0.31, 0.999, 1.0, 1.5, 2.0] {
            let u = traj.eval_control(t).unwrap();
            assert!((u[0] - 0.7).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn quadratic_state_reproduced_between_nodes() {
        let traj = constant_control_trajectory();
        for t in [0.123, 0.77, 1.456, 1.99] {
            let x = traj.eval_state(t).unwrap();
            assert!((x[0] - t).abs() < 1e-11);
            assert!((x[1] - t * t).abs() < 1e-11);
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let traj = constant_control_trajectory();
        assert!(matches!(traj.eval_state(-0.1), Err(Error::OutOfDomain(_))));
        assert!(matches!(traj.eval_state(2.1), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn validate_flags_dimension_and_bound_problems() {
        let good = OcpDefinition::new(
            "probe",
            2,
            1,
            0,
            Arc::new(|out, _x, _u, _p, _t| {
                out[0] = 1.0;
                out[1] = 0.0;
            }),
        );
        assert!(validate(&good).is_empty());

        let mut bad = good.clone();
        bad.x_lower = vec![1.0, 0.0];
        bad.x_upper = vec![0.0, 1.0];
        let diags = validate(&bad);
        assert!(diags.iter().any(|d| d.contains("bound order")));

        // dynamics writing fewer components than nx leaves NaN probes
        let lazy = OcpDefinition::new(
            "lazy",
            2,
            1,
            0,
            Arc::new(|out, _x, _u, _p, _t| {
                out[0] = 1.0;
            }),
        );
        let diags = validate(&lazy);
        assert!(diags.iter().any(|d| d.contains("NaN")));
    }

    #[test]
    fn csv_has_header_and_n_rows() {
        let traj = constant_control_trajectory();
        let csv = traj.to_csv(
            &["a".to_string(), "b".to_string()],
            &["u".to_string()],
        );
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,a,b,u");
        assert_eq!(lines.len(), 1 + traj.mesh.total_collocation());
    }
}
