//! Adaptive Runge-Kutta integration of the truth dynamics under a stored
//! control policy, and of the sensitivity matrix ODE along a reference
//! trajectory.

use crate::derivatives::DerivativeProvider;
use crate::error::{Error, Result};
use crate::ocp::{OcpDefinition, Trajectory};

/// Informational events noted while integrating.
#[derive(Debug, Clone, PartialEq)]
pub enum EventFlag {
    NonFiniteState { time: f64 },
    StateBoundExit { time: f64, component: usize },
    PathBoundExit { time: f64, component: usize },
}

/// Dense record of an integration: strictly increasing times spanning the
/// requested window, terminal sample exactly at the window end.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub events: Vec<EventFlag>,
}

impl PropagationResult {
    pub fn terminal_state(&self) -> &[f64] {
        self.states.last().expect("non-empty result")
    }

    pub fn to_csv(&self, state_names: &[String]) -> String {
        let mut out = String::from("t");
        for n in state_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{:.16e}", t));
            for v in x {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Optional step ceiling (used by the order tests; None in production).
    pub max_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 2_000_000, max_step: None }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate dy/dt = f(t, y) over [ta, tb] with an embedded 5(4) pair,
/// recording every accepted step and optionally landing exactly on a sorted
/// list of report times.
pub fn dopri5<F>(
    mut f: F,
    y0: &[f64],
    window: (f64, f64),
    opts: &OdeOptions,
    report_times: &[f64],
) -> Result<PropagationResult>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let (ta, tb) = window;
    if !(tb > ta) {
        return Err(Error::invalid(format!("window [{ta}, {tb}] is empty")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite initial state"));
    }
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = ta;
    let mut times = vec![ta];
    let mut states = vec![y.clone()];
    let mut report_iter = report_times.iter().copied().filter(|&r| r > ta && r < tb);
    let mut next_report = report_iter.next();

    let mut k = vec![vec![0.0f64; dim]; 7];
    f(t, &y, &mut k[0])?;
    let span = tb - ta;
    let mut h = (span / 100.0).min(opts.max_step.unwrap_or(f64::INFINITY));
    let h_min = span * 1e-14;
    let mut ytmp = vec![0.0f64; dim];
    let mut y5 = vec![0.0f64; dim];
    let mut steps = 0usize;

    while t < tb {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::numerical(format!(
                "step budget exhausted at t={t}"
            )));
        }
        let mut target = tb;
        if let Some(r) = next_report {
            if r > t {
                target = target.min(r);
            }
        }
        if t + h >= target {
            h = target - t;
        }
        if h < h_min {
            return Err(Error::numerical(format!("step size underflow at t={t}")));
        }

        // stages 2..7 (k[0] carried over, FSAL)
        let mut failed = false;
        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            let ts = t + C[stage] * h;
            let (head, tail) = k.split_at_mut(stage + 1);
            let _ = head;
            f(ts, &ytmp, &mut tail[0])?;
            if tail[0].iter().any(|v| !v.is_finite()) {
                failed = true;
                break;
            }
        }
        if failed {
            h *= 0.25;
            if h < h_min {
                return Err(Error::numerical(format!(
                    "non-finite derivative stalls the step at t={t}"
                )));
            }
            continue;
        }
        // 5th order solution is stage row 6 of A (FSAL construction)
        for i in 0..dim {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(6) {
                acc += A[5][j] * kj[i];
            }
            y5[i] = y[i] + h * acc;
        }
        // embedded 4th order error estimate
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut acc4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc4 += B4[j] * kj[i];
            }
            let y4 = y[i] + h * acc4;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4) / sc;
            err += e * e;
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
            times.push(t);
            states.push(y.clone());
            k.swap(0, 6); // FSAL: last stage derivative becomes k1
            if let Some(r) = next_report {
                if (t - r).abs() <= 1e-12 * span {
                    next_report = report_iter.next();
                }
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(opts.max_step.unwrap_or(f64::INFINITY));
    }
    Ok(PropagationResult { times, states, events: Vec::new() })
}

/// Integrate the (possibly perturbed) dynamics under the stored control
/// trajectory over `window`. The control is evaluated as the continuous
/// polynomial interpolant, never zero-order held.
pub fn propagate_truth(
    ocp: &OcpDefinition,
    p_perturbed: &[f64],
    x0: &[f64],
    control: &Trajectory,
    window: (f64, f64),
) -> Result<PropagationResult> {
    propagate_truth_with(ocp, p_perturbed, x0, control, window, &OdeOptions::default())
}

pub fn propagate_truth_with(
    ocp: &OcpDefinition,
    p_perturbed: &[f64],
    x0: &[f64],
    control: &Trajectory,
    window: (f64, f64),
    opts: &OdeOptions,
) -> Result<PropagationResult> {
    if x0.len() != ocp.nx {
        return Err(Error::invalid("initial state length differs from nx"));
    }
    let (ta, tb) = window;
    let dom = (control.time_map.t0, control.time_map.tf);
    let slack = 1e-9 * (dom.1 - dom.0).abs().max(1.0);
    if ta < dom.0 - slack || tb > dom.1 + slack {
        return Err(Error::invalid(format!(
            "window [{ta}, {tb}] outside the control domain [{}, {}]",
            dom.0, dom.1
        )));
    }
    let f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let tc = t.clamp(dom.0, dom.1);
        let u = control.eval_control(tc)?;
        (ocp.dynamics)(dy, y, &u, p_perturbed, t);
        Ok(())
    };
    let mut result = dopri5(f, x0, window, opts, &[])?;
    annotate_events(ocp, control, &mut result);
    Ok(result)
}

/// Informational flags: non-finite states, state-box exits, path-bound exits.
fn annotate_events(ocp: &OcpDefinition, control: &Trajectory, result: &mut PropagationResult) {
    let mut flagged_nonfinite = false;
    let mut flagged_state = vec![false; ocp.nx];
    let mut flagged_path = vec![false; ocp.nc];
    let mut cbuf = vec![0.0; ocp.nc];
    for (t, x) in result.times.iter().zip(&result.states) {
        if !flagged_nonfinite && x.iter().any(|v| !v.is_finite()) {
            result.events.push(EventFlag::NonFiniteState { time: *t });
            flagged_nonfinite = true;
        }
        for c in 0..ocp.nx {
            if !flagged_state[c] && (x[c] < ocp.x_lower[c] || x[c] > ocp.x_upper[c]) {
                result
                    .events
                    .push(EventFlag::StateBoundExit { time: *t, component: c });
                flagged_state[c] = true;
            }
        }
        if ocp.nc > 0 {
            if let Ok(u) = control.eval_control(t.clamp(control.time_map.t0, control.time_map.tf))
            {
                (ocp.path.as_ref().unwrap())(&mut cbuf, x, &u, *t);
                for j in 0..ocp.nc {
                    if !flagged_path[j] && (cbuf[j] < ocp.c_lower[j] || cbuf[j] > ocp.c_upper[j]) {
                        result
                            .events
                            .push(EventFlag::PathBoundExit { time: *t, component: j });
                        flagged_path[j] = true;
                    }
                }
            }
        }
    }
}

/// Sensitivity samples S(t) stored row-major (nx x np flattened per row).
#[derive(Debug, Clone)]
pub struct SensitivityHistory {
    pub times: Vec<f64>,
    /// Row-major S = dx/dp samples, each of length nx * np.
    pub values: Vec<Vec<f64>>,
    pub nx: usize,
    pub np: usize,
}

impl SensitivityHistory {
    /// Sample at an exact recorded time (report times are landed on).
    pub fn at_time(&self, t: f64) -> Option<&[f64]> {
        let span = (self.times.last()? - self.times.first()?).abs().max(1.0);
        self.times
            .iter()
            .position(|&ti| (ti - t).abs() <= 1e-9 * span)
            .map(|i| self.values[i].as_slice())
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("non-empty history")
    }
}

/// Integrate dS/dt = A(t) S + B(t), S(t_a) = 0 along the nominal trajectory
/// (A, B evaluated at the nominal parameters), landing exactly on
/// `report_times`.
pub fn propagate_sensitivities(
    ocp: &OcpDefinition,
    nominal: &Trajectory,
    window: (f64, f64),
    report_times: &[f64],
) -> Result<SensitivityHistory> {
    let (nx, np) = (ocp.nx, ocp.np);
    let provider = DerivativeProvider::default();
    let dim = nx * np;
    let f = |t: f64, s: &[f64], ds: &mut [f64]| -> Result<()> {
        let tc = t.clamp(nominal.time_map.t0, nominal.time_map.tf);
        let x = nominal.eval_state(tc)?;
        let u = nominal.eval_control(tc)?;
        let a = provider.jacobian_state(ocp, &x, &u, &ocp.nominal_params, t)?;
        let b = provider.jacobian_params(ocp, &x, &u, &ocp.nominal_params, t)?;
        // dS_{ij} = sum_m A_im S_mj + B_ij
        for i in 0..nx {
            for j in 0..np {
                let mut acc = b[i * np + j];
                for m in 0..nx {
                    acc += a[i * nx + m] * s[m * np + j];
                }
                ds[i * np + j] = acc;
            }
        }
        Ok(())
    };
    let s0 = vec![0.0; dim];
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let res = dopri5(f, &s0, window, &opts, report_times)?;
    Ok(SensitivityHistory { times: res.times, values: res.states, nx, np })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Mesh, TimeMap};
    use std::sync::Arc;

    fn unit_control_traj(t0: f64, tf: f64, nu: usize) -> Trajectory {
        let mesh = Mesh::uniform(2, 4).unwrap();
        let n = mesh.total_collocation();
        Trajectory::new(
            mesh,
            TimeMap::new(t0, tf).unwrap(),
            vec![vec![0.0]; n + 1],
            vec![vec![0.0; nu]; n],
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_hold_state_constant() {
        let ocp = OcpDefinition::new(
            "static",
            1,
            0,
            0,
            Arc::new(|out, _x, _u, _p, _t| out[0] = 0.0),
        );
        let control = unit_control_traj(0.0, 2.0, 0);
        let res = propagate_truth(&ocp, &[], &[0.7], &control, (0.0, 2.0)).unwrap();
        assert_eq!(*res.times.last().unwrap(), 2.0);
        for x in &res.states {
            assert_eq!(x[0], 0.7);
        }
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let ocp = OcpDefinition::new(
            "decay",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, _t| out[0] = -x[0]),
        );
        let control = unit_control_traj(0.0, 1.0, 0);
        let res = propagate_truth(&ocp, &[], &[1.0], &control, (0.0, 1.0)).unwrap();
        let xf = res.terminal_state()[0];
        assert!((xf - (-1.0f64).exp()).abs() < 1e-9, "{xf}");
    }

    #[test]
    fn fifth_order_convergence_under_step_halving() {
        // y' = cos(t) y, y(0)=1 -> y(t) = exp(sin t)
        let ocp = OcpDefinition::new(
            "cosy",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, t| out[0] = t.cos() * x[0]),
        );
        let control = unit_control_traj(0.0, 1.0, 0);
        let run = |hmax: f64| -> f64 {
            let opts = OdeOptions { rtol: 1e30, atol: 1e30, max_step: Some(hmax), ..Default::default() };
            let res =
                propagate_truth_with(&ocp, &[], &[1.0], &control, (0.0, 1.0), &opts).unwrap();
            (res.terminal_state()[0] - 1.0f64.sin().exp()).abs()
        };
        let e1 = run(0.1);
        let e2 = run(0.05);
        let ratio = e1 / e2;
        assert!(
            (14.0..80.0).contains(&ratio),
            "order ratio {ratio} (e1={e1:.2e}, e2={e2:.2e})"
        );
    }

    #[test]
    fn report_times_are_landed_exactly() {
        let ocp = OcpDefinition::new(
            "decay",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, _t| out[0] = -x[0]),
        );
        let control = unit_control_traj(0.0, 1.0, 0);
        let f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            let _ = t;
            dy[0] = -y[0];
            Ok(())
        };
        let res = dopri5(f, &[1.0], (0.0, 1.0), &OdeOptions::default(), &[0.25, 0.5, 0.75])
            .unwrap();
        for r in [0.25, 0.5, 0.75] {
            assert!(res.times.iter().any(|&t| (t - r).abs() < 1e-12), "missing {r}");
        }
        let _ = ocp;
    }

    #[test]
    fn window_outside_control_domain_rejected() {
        let ocp = OcpDefinition::new(
            "static",
            1,
            0,
            0,
            Arc::new(|out, _x, _u, _p, _t| out[0] = 0.0),
        );
        let control = unit_control_traj(0.0, 1.0, 0);
        assert!(propagate_truth(&ocp, &[], &[0.0], &control, (0.0, 1.5)).is_err());
    }

    #[test]
    fn zero_b_gives_zero_sensitivities() {
        // dynamics depend on p only through... nothing: B = 0 identically
        let ocp = OcpDefinition::new(
            "nop",
            2,
            0,
            1,
            Arc::new(|out, x, _u, _p, _t| {
                out[0] = x[1];
                out[1] = -x[0];
            }),
        );
        let mesh = Mesh::uniform(2, 4).unwrap();
        let n = mesh.total_collocation();
        let mut traj = Trajectory::new(
            mesh,
            TimeMap::new(0.0, 1.0).unwrap(),
            vec![vec![1.0, 0.0]; n + 1],
            vec![vec![]; n],
        )
        .unwrap();
        // harmless constant trajectory; A is constant anyway
        traj.states.iter_mut().for_each(|r| *r = vec![1.0, 0.0]);
        let hist = propagate_sensitivities(&ocp, &traj, (0.0, 1.0), &[]).unwrap();
        for row in &hist.values {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn sensitivity_linear_in_b() {
        // dx/dt = -x + c p with constant c: S' = -S + c, S(0)=0 -> S = c(1 - e^-t)
        let make = |c: f64| {
            OcpDefinition::new(
                "linp",
                1,
                0,
                1,
                Arc::new(move |out: &mut [f64], x: &[f64], _u: &[f64], p: &[f64], _t: f64| {
                    out[0] = -x[0] + c * p[0];
                }),
            )
        };
        let mesh = Mesh::uniform(1, 4).unwrap();
        let n = mesh.total_collocation();
        let traj = Trajectory::new(
            mesh,
            TimeMap::new(0.0, 1.0).unwrap(),
            vec![vec![0.0]; n + 1],
            vec![vec![]; n],
        )
        .unwrap();
        let h1 = propagate_sensitivities(&make(1.0), &traj, (0.0, 1.0), &[]).unwrap();
        let h2 = propagate_sensitivities(&make(2.0), &traj, (0.0, 1.0), &[]).unwrap();
        let s1 = h1.terminal()[0];
        let s2 = h2.terminal()[0];
        assert!((s1 - (1.0 - (-1.0f64).exp())).abs() < 1e-8, "{s1}");
        assert!((s2 - 2.0 * s1).abs() < 1e-8);
    }

    #[test]
    fn state_bound_exit_is_flagged_not_fatal() {
        let mut ocp = OcpDefinition::new(
            "grow",
            1,
            0,
            0,
            Arc::new(|out, x, _u, _p, _t| out[0] = x[0]),
        );
        ocp.x_upper = vec![1.5];
        ocp.x_lower = vec![-1.5];
        let control = unit_control_traj(0.0, 1.0, 0);
        let res = propagate_truth(&ocp, &[], &[1.0], &control, (0.0, 1.0)).unwrap();
        assert!(res
            .events
            .iter()
            .any(|e| matches!(e, EventFlag::StateBoundExit { component: 0, .. })));
    }
}
