//! Conversion of (OcpDefinition, Mesh) into a sparse NLP and back.
//!
//! Variable layout: per-interval state blocks sharing boundary columns
//! (nx values per support point), then control blocks (nu per collocation
//! point), then t0 and tf. Continuity at interior mesh points is enforced
//! structurally by the shared columns, not by explicit constraints.
//! Constraint order: defect rows (interval, node, component), then path
//! rows, then boundary rows.
//!
//! The NLP is assembled in scaled space: variables divided by their
//! characteristic magnitudes, constraint rows divided by row scales, the
//! objective by `obj_scale`.

use crate::derivatives::{gradient, DerivativeProvider};
use crate::error::{Error, Result};
use crate::lgr::{barycentric_derivative, barycentric_eval, compute_radau_rule, RadauRule};
use crate::mesh::Mesh;
use crate::mesh::TimeMap;
use crate::nlp::{KktUnit, NlpProblem};
use crate::ocp::{OcpDefinition, Trajectory};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Index arithmetic and scaling for the NLP variable vector.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub nx: usize,
    pub nu: usize,
    pub mesh: Mesh,
    pub n_total: usize,
    pub support_offsets: Vec<usize>,
    pub nz: usize,
    pub m: usize,
    pub nc: usize,
    pub nb: usize,
    pub z_scale: Vec<f64>,
    pub row_scale: Vec<f64>,
    pub obj_scale: f64,
}

impl VariableLayout {
    #[inline]
    pub fn x_index(&self, support: usize, comp: usize) -> usize {
        support * self.nx + comp
    }

    #[inline]
    pub fn u_index(&self, colloc: usize, comp: usize) -> usize {
        self.nx * (self.n_total + 1) + colloc * self.nu + comp
    }

    #[inline]
    pub fn t0_index(&self) -> usize {
        self.nz - 2
    }

    #[inline]
    pub fn tf_index(&self) -> usize {
        self.nz - 1
    }

    #[inline]
    pub fn defect_row(&self, colloc: usize, comp: usize) -> usize {
        colloc * self.nx + comp
    }

    #[inline]
    pub fn path_row(&self, colloc: usize, j: usize) -> usize {
        self.nx * self.n_total + colloc * self.nc + j
    }

    #[inline]
    pub fn boundary_row(&self, j: usize) -> usize {
        (self.nx + self.nc) * self.n_total + j
    }

    /// Unscale an NLP point into raw variable values.
    pub fn unscale(&self, z_scaled: &[f64]) -> Vec<f64> {
        z_scaled
            .iter()
            .zip(&self.z_scale)
            .map(|(v, s)| v * s)
            .collect()
    }

    /// Pack a trajectory into a scaled NLP point (the layout inverse of
    /// [`extract_solution`]).
    pub fn pack(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        if traj.states.len() != self.n_total + 1 || traj.controls.len() != self.n_total {
            return Err(Error::invalid("trajectory shape mismatch with layout"));
        }
        let mut z = vec![0.0; self.nz];
        for g in 0..=self.n_total {
            for c in 0..self.nx {
                z[self.x_index(g, c)] = traj.states[g][c];
            }
        }
        for q in 0..self.n_total {
            for c in 0..self.nu {
                z[self.u_index(q, c)] = traj.controls[q][c];
            }
        }
        z[self.t0_index()] = traj.time_map.t0;
        z[self.tf_index()] = traj.time_map.tf;
        for (v, s) in z.iter_mut().zip(&self.z_scale) {
            *v /= s;
        }
        Ok(z)
    }
}

/// Convert a scaled NLP point into a trajectory.
pub fn extract_solution(point: &[f64], layout: &VariableLayout) -> Result<Trajectory> {
    if point.len() != layout.nz {
        return Err(Error::invalid(format!(
            "point length {} differs from nz {}",
            point.len(),
            layout.nz
        )));
    }
    let raw = layout.unscale(point);
    let mut states = Vec::with_capacity(layout.n_total + 1);
    for g in 0..=layout.n_total {
        states.push((0..layout.nx).map(|c| raw[layout.x_index(g, c)]).collect());
    }
    let mut controls = Vec::with_capacity(layout.n_total);
    for q in 0..layout.n_total {
        controls.push((0..layout.nu).map(|c| raw[layout.u_index(q, c)]).collect());
    }
    let t0 = raw[layout.t0_index()];
    let tf = raw[layout.tf_index()];
    Trajectory::new(layout.mesh.clone(), TimeMap::new(t0, tf)?, states, controls)
}

/// Per-collocation-point geometry shared by the evaluation closures.
#[derive(Debug, Clone)]
struct NodeInfo {
    interval: usize,
    local: usize,
    /// Global tau of the node.
    tau: f64,
    /// Half-width (T_k - T_{k-1}) / 2 of the owning interval.
    gamma: f64,
    /// LGR quadrature weight at the node.
    weight: f64,
}

struct Context {
    ocp: OcpDefinition,
    layout: VariableLayout,
    rules: Vec<Arc<RadauRule>>,
    nodes: Vec<NodeInfo>,
    provider: DerivativeProvider,
}

impl Context {
    #[inline]
    fn time_of(&self, tau: f64, t0: f64, tf: f64) -> f64 {
        0.5 * (tf - t0) * tau + 0.5 * (tf + t0)
    }

    fn state_at(&self, raw: &[f64], support: usize) -> Vec<f64> {
        (0..self.layout.nx)
            .map(|c| raw[self.layout.x_index(support, c)])
            .collect()
    }

    fn control_at(&self, raw: &[f64], colloc: usize) -> Vec<f64> {
        (0..self.layout.nu)
            .map(|c| raw[self.layout.u_index(colloc, c)])
            .collect()
    }

    /// (dL/dx, dL/du): analytic callback or central differences.
    fn lagrange_gradient(&self, x: &[f64], u: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        if let Some(gl) = &self.ocp.grad_lagrange {
            let mut gx = vec![0.0; self.ocp.nx];
            let mut gu = vec![0.0; self.ocp.nu];
            gl(&mut gx, &mut gu, x, u, t);
            return (gx, gu);
        }
        let gx = gradient(x, &self.provider, |xp| self.ocp.eval_lagrange(xp, u, t))
            .unwrap_or_else(|_| vec![f64::NAN; self.ocp.nx]);
        let gu = gradient(u, &self.provider, |up| self.ocp.eval_lagrange(x, up, t))
            .unwrap_or_else(|_| vec![f64::NAN; self.ocp.nu]);
        (gx, gu)
    }

    /// Mayer gradient over the packed endpoint vector (x0, t0, xf, tf).
    fn mayer_gradient(&self, packed: &[f64]) -> Vec<f64> {
        let nx = self.ocp.nx;
        if let Some(gm) = &self.ocp.grad_mayer {
            let mut out = vec![0.0; 2 * nx + 2];
            gm(
                &mut out,
                &packed[..nx],
                packed[nx],
                &packed[nx + 1..2 * nx + 1],
                packed[2 * nx + 1],
            );
            return out;
        }
        gradient(packed, &self.provider, |v| {
            self.ocp
                .eval_mayer(&v[..nx], v[nx], &v[nx + 1..2 * nx + 1], v[2 * nx + 1])
        })
        .unwrap_or_else(|_| vec![f64::NAN; 2 * nx + 2])
    }
}

/// The transcribed problem: the solver-facing NLP plus the layout needed to
/// pack and extract points.
pub struct TranscribedProblem {
    pub nlp: NlpProblem,
    pub layout: VariableLayout,
}

/// Transcribe an OCP on a mesh into a sparse NLP.
pub fn transcribe(ocp: &OcpDefinition, mesh: &Mesh) -> Result<TranscribedProblem> {
    mesh.validate()?;
    let diags = crate::ocp::validate(ocp);
    if !diags.is_empty() {
        return Err(Error::invalid(format!(
            "definition failed validation: {}",
            diags.join("; ")
        )));
    }
    let nx = ocp.nx;
    let nu = ocp.nu;
    let (nc, nb) = (ocp.nc, ocp.nb);
    let n_total = mesh.total_collocation();
    let support_offsets = mesh.support_offsets();
    let nz = nx * (n_total + 1) + nu * n_total + 2;
    let m = (nx + nc) * n_total + nb;

    // Scales.
    let mut z_scale = vec![1.0; nz];
    let mut row_scale = vec![1.0; m];
    {
        let mut layout_probe = VariableLayout {
            nx,
            nu,
            mesh: mesh.clone(),
            n_total,
            support_offsets: support_offsets.clone(),
            nz,
            m,
            nc,
            nb,
            z_scale: vec![1.0; nz],
            row_scale: vec![1.0; m],
            obj_scale: ocp.obj_scale,
        };
        for g in 0..=n_total {
            for c in 0..nx {
                z_scale[layout_probe.x_index(g, c)] = ocp.x_scale[c];
            }
        }
        for q in 0..n_total {
            for c in 0..nu {
                z_scale[layout_probe.u_index(q, c)] = ocp.u_scale[c];
            }
        }
        z_scale[layout_probe.t0_index()] = ocp.t_scale;
        z_scale[layout_probe.tf_index()] = ocp.t_scale;
        let bound_mag = |lo: f64, hi: f64| -> f64 {
            let mut s: f64 = 1.0;
            if lo.is_finite() {
                s = s.max(lo.abs());
            }
            if hi.is_finite() {
                s = s.max(hi.abs());
            }
            s
        };
        for q in 0..n_total {
            for c in 0..nx {
                row_scale[layout_probe.defect_row(q, c)] = ocp.x_scale[c];
            }
            for j in 0..nc {
                row_scale[layout_probe.path_row(q, j)] = bound_mag(ocp.c_lower[j], ocp.c_upper[j]);
            }
        }
        for j in 0..nb {
            row_scale[layout_probe.boundary_row(j)] = bound_mag(ocp.b_lower[j], ocp.b_upper[j]);
        }
        layout_probe.z_scale = z_scale.clone();
        layout_probe.row_scale = row_scale.clone();
    }

    let layout = VariableLayout {
        nx,
        nu,
        mesh: mesh.clone(),
        n_total,
        support_offsets: support_offsets.clone(),
        nz,
        m,
        nc,
        nb,
        z_scale,
        row_scale,
        obj_scale: ocp.obj_scale,
    };

    let mut rules = Vec::with_capacity(mesh.interval_count());
    for &count in &mesh.counts {
        rules.push(compute_radau_rule(count)?);
    }
    let mut nodes = Vec::with_capacity(n_total);
    for (k, rule) in rules.iter().enumerate() {
        let (a, b) = (mesh.fractions[k], mesh.fractions[k + 1]);
        let gamma = 0.5 * (b - a);
        for (i, (&xi, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            nodes.push(NodeInfo {
                interval: k,
                local: i,
                tau: a + (xi + 1.0) * gamma,
                gamma,
                weight: w,
            });
        }
    }

    let ctx = Arc::new(Context {
        ocp: ocp.clone(),
        layout: layout.clone(),
        rules,
        nodes,
        provider: DerivativeProvider::default(),
    });

    // Bounds.
    let mut z_lower = vec![0.0; nz];
    let mut z_upper = vec![0.0; nz];
    for g in 0..=n_total {
        for c in 0..nx {
            z_lower[layout.x_index(g, c)] = ocp.x_lower[c] / layout.z_scale[layout.x_index(g, c)];
            z_upper[layout.x_index(g, c)] = ocp.x_upper[c] / layout.z_scale[layout.x_index(g, c)];
        }
    }
    for q in 0..n_total {
        for c in 0..nu {
            z_lower[layout.u_index(q, c)] = ocp.u_lower[c] / layout.z_scale[layout.u_index(q, c)];
            z_upper[layout.u_index(q, c)] = ocp.u_upper[c] / layout.z_scale[layout.u_index(q, c)];
        }
    }
    z_lower[layout.t0_index()] = ocp.t0_bounds.0 / ocp.t_scale;
    z_upper[layout.t0_index()] = ocp.t0_bounds.1 / ocp.t_scale;
    z_lower[layout.tf_index()] = ocp.tf_bounds.0 / ocp.t_scale;
    z_upper[layout.tf_index()] = ocp.tf_bounds.1 / ocp.t_scale;

    let mut c_lower = vec![0.0; m];
    let mut c_upper = vec![0.0; m];
    for q in 0..n_total {
        for j in 0..nc {
            let r = layout.path_row(q, j);
            c_lower[r] = ocp.c_lower[j] / layout.row_scale[r];
            c_upper[r] = ocp.c_upper[j] / layout.row_scale[r];
        }
    }
    for j in 0..nb {
        let r = layout.boundary_row(j);
        c_lower[r] = ocp.b_lower[j] / layout.row_scale[r];
        c_upper[r] = ocp.b_upper[j] / layout.row_scale[r];
    }

    // Sparsity pattern.
    let mut entries: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (q, node) in ctx.nodes.iter().enumerate() {
        let k = node.interval;
        let sk = support_offsets[k];
        let count = mesh.counts[k];
        for c in 0..nx {
            let row = layout.defect_row(q, c);
            for j in 0..=count {
                entries.insert((row, layout.x_index(sk + j, c)));
            }
            for c2 in 0..nx {
                entries.insert((row, layout.x_index(sk + node.local, c2)));
            }
            for c2 in 0..nu {
                entries.insert((row, layout.u_index(q, c2)));
            }
            entries.insert((row, layout.t0_index()));
            entries.insert((row, layout.tf_index()));
        }
        for j in 0..nc {
            let row = layout.path_row(q, j);
            for c2 in 0..nx {
                entries.insert((row, layout.x_index(sk + node.local, c2)));
            }
            for c2 in 0..nu {
                entries.insert((row, layout.u_index(q, c2)));
            }
            entries.insert((row, layout.t0_index()));
            entries.insert((row, layout.tf_index()));
        }
    }
    for j in 0..nb {
        let row = layout.boundary_row(j);
        for c in 0..nx {
            entries.insert((row, layout.x_index(0, c)));
            entries.insert((row, layout.x_index(n_total, c)));
        }
        entries.insert((row, layout.t0_index()));
        entries.insert((row, layout.tf_index()));
    }
    let pattern: Vec<(usize, usize)> = entries.iter().copied().collect();
    let slot_of = {
        let map: std::collections::HashMap<(usize, usize), usize> = pattern
            .iter()
            .enumerate()
            .map(|(i, &rc)| (rc, i))
            .collect();
        move |row: usize, col: usize| -> usize { map[&(row, col)] }
    };

    // KKT elimination order: interleave each collocation point's variables
    // with its rows; trailing final state, times, boundary rows.
    let mut kkt_order = Vec::with_capacity(nz + m);
    for (q, node) in ctx.nodes.iter().enumerate() {
        for c in 0..nx {
            kkt_order.push(KktUnit::Var(layout.x_index(q, c)));
        }
        for c in 0..nu {
            kkt_order.push(KktUnit::Var(layout.u_index(q, c)));
        }
        for c in 0..nx {
            kkt_order.push(KktUnit::Con(layout.defect_row(q, c)));
        }
        for j in 0..nc {
            kkt_order.push(KktUnit::Con(layout.path_row(q, j)));
        }
        let _ = node;
    }
    for c in 0..nx {
        kkt_order.push(KktUnit::Var(layout.x_index(n_total, c)));
    }
    kkt_order.push(KktUnit::Var(layout.t0_index()));
    kkt_order.push(KktUnit::Var(layout.tf_index()));
    for j in 0..nb {
        kkt_order.push(KktUnit::Con(layout.boundary_row(j)));
    }

    // Objective.
    let cx = ctx.clone();
    let objective = Arc::new(move |z: &[f64]| -> f64 {
        let raw = cx.layout.unscale(z);
        let t0 = raw[cx.layout.t0_index()];
        let tf = raw[cx.layout.tf_index()];
        let x0 = cx.state_at(&raw, 0);
        let xf = cx.state_at(&raw, cx.layout.n_total);
        let mut total = cx.ocp.eval_mayer(&x0, t0, &xf, tf);
        if cx.ocp.lagrange.is_some() {
            let h = 0.5 * (tf - t0);
            let mut acc = 0.0;
            for (q, node) in cx.nodes.iter().enumerate() {
                let sk = cx.layout.support_offsets[node.interval];
                let x = cx.state_at(&raw, sk + node.local);
                let u = cx.control_at(&raw, q);
                let t = cx.time_of(node.tau, t0, tf);
                acc += node.gamma * node.weight * cx.ocp.eval_lagrange(&x, &u, t);
            }
            total += h * acc;
        }
        total / cx.layout.obj_scale
    });

    // Gradient.
    let cx = ctx.clone();
    let grad_fn = Arc::new(move |z: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        let raw = cx.layout.unscale(z);
        let lay = &cx.layout;
        let t0 = raw[lay.t0_index()];
        let tf = raw[lay.tf_index()];
        let h = 0.5 * (tf - t0);
        if cx.ocp.lagrange.is_some() {
            for (q, node) in cx.nodes.iter().enumerate() {
                let sk = lay.support_offsets[node.interval];
                let x = cx.state_at(&raw, sk + node.local);
                let u = cx.control_at(&raw, q);
                let t = cx.time_of(node.tau, t0, tf);
                let lval = cx.ocp.eval_lagrange(&x, &u, t);
                let wgt = node.gamma * node.weight;
                let (gx, gu) = cx.lagrange_gradient(&x, &u, t);
                for c in 0..lay.nx {
                    out[lay.x_index(sk + node.local, c)] += h * wgt * gx[c];
                }
                for c in 0..lay.nu {
                    out[lay.u_index(q, c)] += h * wgt * gu[c];
                }
                let lt = if cx.ocp.time_invariant {
                    0.0
                } else {
                    let hs = cx.provider.step(t);
                    (cx.ocp.eval_lagrange(&x, &u, t + hs) - cx.ocp.eval_lagrange(&x, &u, t - hs))
                        / (2.0 * hs)
                };
                out[lay.t0_index()] +=
                    wgt * (-0.5 * lval) + h * wgt * lt * 0.5 * (1.0 - node.tau);
                out[lay.tf_index()] += wgt * (0.5 * lval) + h * wgt * lt * 0.5 * (1.0 + node.tau);
            }
        }
        if cx.ocp.mayer.is_some() {
            let x0 = cx.state_at(&raw, 0);
            let xf = cx.state_at(&raw, lay.n_total);
            let mut pt = Vec::with_capacity(2 * lay.nx + 2);
            pt.extend_from_slice(&x0);
            pt.push(t0);
            pt.extend_from_slice(&xf);
            pt.push(tf);
            let gm = cx.mayer_gradient(&pt);
            for c in 0..lay.nx {
                out[lay.x_index(0, c)] += gm[c];
                out[lay.x_index(lay.n_total, c)] += gm[lay.nx + 1 + c];
            }
            out[lay.t0_index()] += gm[lay.nx];
            out[lay.tf_index()] += gm[2 * lay.nx + 1];
        }
        // chain rule into scaled space
        for (i, v) in out.iter_mut().enumerate() {
            *v *= lay.z_scale[i] / lay.obj_scale;
        }
    });

    // Constraints.
    let cx = ctx.clone();
    let con_fn = Arc::new(move |z: &[f64], out: &mut [f64]| {
        let raw = cx.layout.unscale(z);
        let lay = &cx.layout;
        let t0 = raw[lay.t0_index()];
        let tf = raw[lay.tf_index()];
        let h = 0.5 * (tf - t0);
        let mut fbuf = vec![0.0; lay.nx];
        let mut cbuf = vec![0.0; lay.nc];
        for (q, node) in cx.nodes.iter().enumerate() {
            let k = node.interval;
            let sk = lay.support_offsets[k];
            let rule = &cx.rules[k];
            let x = cx.state_at(&raw, sk + node.local);
            let u = cx.control_at(&raw, q);
            let t = cx.time_of(node.tau, t0, tf);
            (cx.ocp.dynamics)(&mut fbuf, &x, &u, &cx.ocp.nominal_params, t);
            for c in 0..lay.nx {
                let mut acc = 0.0;
                for j in 0..=rule.n {
                    acc += rule.diff_matrix[node.local][j] * raw[lay.x_index(sk + j, c)];
                }
                acc -= h * node.gamma * fbuf[c];
                let row = lay.defect_row(q, c);
                out[row] = acc / lay.row_scale[row];
            }
            if lay.nc > 0 {
                (cx.ocp.path.as_ref().unwrap())(&mut cbuf, &x, &u, t);
                for j in 0..lay.nc {
                    let row = lay.path_row(q, j);
                    out[row] = cbuf[j] / lay.row_scale[row];
                }
            }
        }
        if lay.nb > 0 {
            let x0 = cx.state_at(&raw, 0);
            let xf = cx.state_at(&raw, lay.n_total);
            let mut bbuf = vec![0.0; lay.nb];
            (cx.ocp.boundary.as_ref().unwrap())(&mut bbuf, &x0, t0, &xf, tf);
            for j in 0..lay.nb {
                let row = lay.boundary_row(j);
                out[row] = bbuf[j] / lay.row_scale[row];
            }
        }
    });

    // Jacobian values aligned with the pattern.
    let cx = ctx.clone();
    let pattern_for_jac = pattern.clone();
    let slot = slot_of;
    let jac_fn = Arc::new(move |z: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        let raw = cx.layout.unscale(z);
        let lay = &cx.layout;
        let t0 = raw[lay.t0_index()];
        let tf = raw[lay.tf_index()];
        let h = 0.5 * (tf - t0);
        let scale = |row: usize, col: usize, v: f64| -> f64 {
            v * lay.z_scale[col] / lay.row_scale[row]
        };
        let mut fbuf = vec![0.0; lay.nx];
        for (q, node) in cx.nodes.iter().enumerate() {
            let k = node.interval;
            let sk = lay.support_offsets[k];
            let rule = &cx.rules[k];
            let x = cx.state_at(&raw, sk + node.local);
            let u = cx.control_at(&raw, q);
            let t = cx.time_of(node.tau, t0, tf);
            (cx.ocp.dynamics)(&mut fbuf, &x, &u, &cx.ocp.nominal_params, t);
            let a = cx
                .provider
                .jacobian_state(&cx.ocp, &x, &u, &cx.ocp.nominal_params, t)
                .unwrap_or_else(|_| vec![f64::NAN; lay.nx * lay.nx]);
            let dfdu = if lay.nu > 0 {
                cx.provider
                    .jacobian_control(&cx.ocp, &x, &u, &cx.ocp.nominal_params, t)
                    .unwrap_or_else(|_| vec![f64::NAN; lay.nx * lay.nu])
            } else {
                vec![]
            };
            let ft = cx
                .provider
                .derivative_time(&cx.ocp, &x, &u, &cx.ocp.nominal_params, t)
                .unwrap_or_else(|_| vec![f64::NAN; lay.nx]);
            let dt_dt0 = 0.5 * (1.0 - node.tau);
            let dt_dtf = 0.5 * (1.0 + node.tau);
            for c in 0..lay.nx {
                let row = lay.defect_row(q, c);
                for j in 0..=rule.n {
                    let col = lay.x_index(sk + j, c);
                    out[slot(row, col)] += scale(row, col, rule.diff_matrix[node.local][j]);
                }
                for c2 in 0..lay.nx {
                    let col = lay.x_index(sk + node.local, c2);
                    out[slot(row, col)] +=
                        scale(row, col, -h * node.gamma * a[c * lay.nx + c2]);
                }
                for c2 in 0..lay.nu {
                    let col = lay.u_index(q, c2);
                    out[slot(row, col)] +=
                        scale(row, col, -h * node.gamma * dfdu[c * lay.nu + c2]);
                }
                let v_t0 = -node.gamma * (-0.5 * fbuf[c] + h * ft[c] * dt_dt0);
                let v_tf = -node.gamma * (0.5 * fbuf[c] + h * ft[c] * dt_dtf);
                out[slot(row, lay.t0_index())] += scale(row, lay.t0_index(), v_t0);
                out[slot(row, lay.tf_index())] += scale(row, lay.tf_index(), v_tf);
            }
            if lay.nc > 0 {
                let path = cx.ocp.path.as_ref().unwrap();
                let eval_c = |x: &[f64], u: &[f64], t: f64| -> Vec<f64> {
                    let mut b = vec![0.0; lay.nc];
                    path(&mut b, x, u, t);
                    b
                };
                // finite differences in x, u, t
                for c2 in 0..lay.nx {
                    let hstep = cx.provider.step(x[c2]);
                    let mut xp = x.clone();
                    xp[c2] += hstep;
                    let cp = eval_c(&xp, &u, t);
                    xp[c2] = x[c2] - hstep;
                    let cm = eval_c(&xp, &u, t);
                    for j in 0..lay.nc {
                        let row = lay.path_row(q, j);
                        let col = lay.x_index(sk + node.local, c2);
                        out[slot(row, col)] +=
                            scale(row, col, (cp[j] - cm[j]) / (2.0 * hstep));
                    }
                }
                for c2 in 0..lay.nu {
                    let hstep = cx.provider.step(u[c2]);
                    let mut up = u.clone();
                    up[c2] += hstep;
                    let cp = eval_c(&x, &up, t);
                    up[c2] = u[c2] - hstep;
                    let cm = eval_c(&x, &up, t);
                    for j in 0..lay.nc {
                        let row = lay.path_row(q, j);
                        let col = lay.u_index(q, c2);
                        out[slot(row, col)] +=
                            scale(row, col, (cp[j] - cm[j]) / (2.0 * hstep));
                    }
                }
                let ct = if cx.ocp.time_invariant {
                    vec![0.0; lay.nc]
                } else {
                    let hstep = cx.provider.step(t);
                    let cp = eval_c(&x, &u, t + hstep);
                    let cm = eval_c(&x, &u, t - hstep);
                    cp.iter()
                        .zip(&cm)
                        .map(|(p, m)| (p - m) / (2.0 * hstep))
                        .collect()
                };
                for j in 0..lay.nc {
                    let row = lay.path_row(q, j);
                    out[slot(row, lay.t0_index())] +=
                        scale(row, lay.t0_index(), ct[j] * dt_dt0);
                    out[slot(row, lay.tf_index())] +=
                        scale(row, lay.tf_index(), ct[j] * dt_dtf);
                }
            }
        }
        if lay.nb > 0 {
            let boundary = cx.ocp.boundary.as_ref().unwrap();
            let x0 = cx.state_at(&raw, 0);
            let xf = cx.state_at(&raw, lay.n_total);
            let mut pt = Vec::with_capacity(2 * lay.nx + 2);
            pt.extend_from_slice(&x0);
            pt.push(t0);
            pt.extend_from_slice(&xf);
            pt.push(tf);
            let eval_b = |v: &[f64]| -> Vec<f64> {
                let mut b = vec![0.0; lay.nb];
                boundary(
                    &mut b,
                    &v[..lay.nx],
                    v[lay.nx],
                    &v[lay.nx + 1..2 * lay.nx + 1],
                    v[2 * lay.nx + 1],
                );
                b
            };
            for (vi, col) in (0..pt.len()).map(|vi| {
                let col = if vi < lay.nx {
                    lay.x_index(0, vi)
                } else if vi == lay.nx {
                    lay.t0_index()
                } else if vi < 2 * lay.nx + 1 {
                    lay.x_index(lay.n_total, vi - lay.nx - 1)
                } else {
                    lay.tf_index()
                };
                (vi, col)
            }) {
                let hstep = cx.provider.step(pt[vi]);
                let mut pp = pt.clone();
                pp[vi] += hstep;
                let bp = eval_b(&pp);
                pp[vi] = pt[vi] - hstep;
                let bm = eval_b(&pp);
                for j in 0..lay.nb {
                    let row = lay.boundary_row(j);
                    out[slot(row, col)] += scale(row, col, (bp[j] - bm[j]) / (2.0 * hstep));
                }
            }
        }
        let _ = &pattern_for_jac;
    });

    // Sparse positive semi-definite Lagrangian-Hessian base: exact per-node
    // blocks over (x_i, u_i) from finite differences of the analytic node
    // gradient, eigenvalue-clamped; plus the Mayer endpoint blocks.
    let mut base_entries: BTreeSet<(usize, usize)> = BTreeSet::new();
    {
        let mut block = |cols: &[usize]| {
            for (a, &i) in cols.iter().enumerate() {
                for &j in &cols[a..] {
                    base_entries.insert((i.min(j), i.max(j)));
                }
            }
        };
        for (q, _node) in ctx.nodes.iter().enumerate() {
            let mut cols: Vec<usize> = (0..nx).map(|c| layout.x_index(q, c)).collect();
            cols.extend((0..nu).map(|c| layout.u_index(q, c)));
            block(&cols);
        }
        if ocp.mayer.is_some() {
            let first: Vec<usize> = (0..nx).map(|c| layout.x_index(0, c)).collect();
            block(&first);
            let last: Vec<usize> = (0..nx).map(|c| layout.x_index(n_total, c)).collect();
            block(&last);
        }
    }
    let base_pattern: Vec<(usize, usize)> = base_entries.iter().copied().collect();
    let base_slot_of = {
        let map: std::collections::HashMap<(usize, usize), usize> = base_pattern
            .iter()
            .enumerate()
            .map(|(i, &rc)| (rc, i))
            .collect();
        move |a: usize, b: usize| -> usize { map[&(a.min(b), a.max(b))] }
    };

    let cx = ctx.clone();
    let hessian_base_fn: Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync> =
        Arc::new(move |z: &[f64], lam: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|v| *v = 0.0);
            let raw = cx.layout.unscale(z);
            let lay = &cx.layout;
            let t0 = raw[lay.t0_index()];
            let tf = raw[lay.tf_index()];
            let h = 0.5 * (tf - t0);
            // Positive definite projection: negative eigenvalues are
            // reflected rather than zeroed, so descent steps stay bounded
            // along negative-curvature directions.
            let clamp_psd = |m: &mut nalgebra::DMatrix<f64>| {
                if m.iter().any(|v| !v.is_finite()) {
                    m.fill(0.0);
                    return;
                }
                let eig = nalgebra::SymmetricEigen::new(m.clone());
                let vals = eig.eigenvalues.map(|e| e.abs());
                *m = &eig.eigenvectors
                    * nalgebra::DMatrix::from_diagonal(&vals)
                    * eig.eigenvectors.transpose();
            };
            for (q, node) in cx.nodes.iter().enumerate() {
                let sk = lay.support_offsets[node.interval];
                let x = cx.state_at(&raw, sk + node.local);
                let u = cx.control_at(&raw, q);
                let t = cx.time_of(node.tau, t0, tf);
                let dims = lay.nx + lay.nu;
                // multipliers folded with the defect scaling: the node term
                // of the scaled Lagrangian is (h gamma w / sigma_f) L
                // - sum_c lam_c (h gamma / sigma_row) f_c (+ path terms)
                let mut lam_eff = vec![0.0; lay.nx];
                for c in 0..lay.nx {
                    let row = lay.defect_row(q, c);
                    lam_eff[c] = -h * node.gamma * lam[row] / lay.row_scale[row];
                }
                let cost_w = h * node.gamma * node.weight / lay.obj_scale;
                let grad_node = |xv: &[f64], uv: &[f64], g: &mut [f64]| {
                    let a = cx
                        .provider
                        .jacobian_state(&cx.ocp, xv, uv, &cx.ocp.nominal_params, t)
                        .unwrap_or_else(|_| vec![f64::NAN; lay.nx * lay.nx]);
                    let dfdu = if lay.nu > 0 {
                        cx.provider
                            .jacobian_control(&cx.ocp, xv, uv, &cx.ocp.nominal_params, t)
                            .unwrap_or_else(|_| vec![f64::NAN; lay.nx * lay.nu])
                    } else {
                        vec![]
                    };
                    for c2 in 0..lay.nx {
                        let mut acc = 0.0;
                        for c in 0..lay.nx {
                            acc += a[c * lay.nx + c2] * lam_eff[c];
                        }
                        g[c2] = acc;
                    }
                    for c2 in 0..lay.nu {
                        let mut acc = 0.0;
                        for c in 0..lay.nx {
                            acc += dfdu[c * lay.nu + c2] * lam_eff[c];
                        }
                        g[lay.nx + c2] = acc;
                    }
                    if cx.ocp.lagrange.is_some() {
                        let (gx, gu) = cx.lagrange_gradient(xv, uv, t);
                        for c2 in 0..lay.nx {
                            g[c2] += cost_w * gx[c2];
                        }
                        for c2 in 0..lay.nu {
                            g[lay.nx + c2] += cost_w * gu[c2];
                        }
                    }
                };
                let mut hess = nalgebra::DMatrix::zeros(dims, dims);
                let mut gp = vec![0.0; dims];
                let mut gm = vec![0.0; dims];
                let mut xp = x.clone();
                let mut up = u.clone();
                for d in 0..dims {
                    let vref = if d < lay.nx { x[d] } else { u[d - lay.nx] };
                    let step = cx.provider.step(vref);
                    if d < lay.nx {
                        xp[d] = vref + step;
                    } else {
                        up[d - lay.nx] = vref + step;
                    }
                    grad_node(&xp, &up, &mut gp);
                    if d < lay.nx {
                        xp[d] = vref - step;
                    } else {
                        up[d - lay.nx] = vref - step;
                    }
                    grad_node(&xp, &up, &mut gm);
                    if d < lay.nx {
                        xp[d] = vref;
                    } else {
                        up[d - lay.nx] = vref;
                    }
                    for r in 0..dims {
                        hess[(r, d)] = (gp[r] - gm[r]) / (2.0 * step);
                    }
                }
                // symmetrize and scale into NLP coordinates
                let col_of = |d: usize| -> usize {
                    if d < lay.nx {
                        lay.x_index(q, d)
                    } else {
                        lay.u_index(q, d - lay.nx)
                    }
                };
                for r in 0..dims {
                    for c2 in (r + 1)..dims {
                        let s = 0.5 * (hess[(r, c2)] + hess[(c2, r)]);
                        hess[(r, c2)] = s;
                        hess[(c2, r)] = s;
                    }
                }
                for r in 0..dims {
                    for c2 in 0..dims {
                        hess[(r, c2)] *= lay.z_scale[col_of(r)] * lay.z_scale[col_of(c2)];
                    }
                }
                clamp_psd(&mut hess);
                for r in 0..dims {
                    for c2 in r..dims {
                        out[base_slot_of(col_of(r), col_of(c2))] += hess[(r, c2)];
                    }
                }
            }
            if cx.ocp.mayer.is_some() {
                let x0 = cx.state_at(&raw, 0);
                let xf = cx.state_at(&raw, lay.n_total);
                let mut pt = Vec::with_capacity(2 * lay.nx + 2);
                pt.extend_from_slice(&x0);
                pt.push(t0);
                pt.extend_from_slice(&xf);
                pt.push(tf);
                // endpoint blocks only (cross terms are left to the secant
                // correction)
                for (offset, x_of) in [
                    (0usize, 0usize),
                    (lay.nx + 1, lay.n_total),
                ] {
                    let mut hess = nalgebra::DMatrix::zeros(lay.nx, lay.nx);
                    for d in 0..lay.nx {
                        let vref = pt[offset + d];
                        let step = cx.provider.step(vref);
                        pt[offset + d] = vref + step;
                        let gp = cx.mayer_gradient(&pt);
                        pt[offset + d] = vref - step;
                        let gm = cx.mayer_gradient(&pt);
                        pt[offset + d] = vref;
                        for r in 0..lay.nx {
                            hess[(r, d)] =
                                (gp[offset + r] - gm[offset + r]) / (2.0 * step);
                        }
                    }
                    for r in 0..lay.nx {
                        for c2 in (r + 1)..lay.nx {
                            let s = 0.5 * (hess[(r, c2)] + hess[(c2, r)]);
                            hess[(r, c2)] = s;
                            hess[(c2, r)] = s;
                        }
                    }
                    for r in 0..lay.nx {
                        for c2 in 0..lay.nx {
                            hess[(r, c2)] *= lay.z_scale[lay.x_index(x_of, r)]
                                * lay.z_scale[lay.x_index(x_of, c2)]
                                / lay.obj_scale;
                        }
                    }
                    clamp_psd(&mut hess);
                    for r in 0..lay.nx {
                        for c2 in r..lay.nx {
                            out[base_slot_of(lay.x_index(x_of, r), lay.x_index(x_of, c2))] +=
                                hess[(r, c2)];
                        }
                    }
                }
            }
        });

    // Initial guess from the definition's generator.
    let mut z0 = vec![0.0; nz];
    {
        let t0g = ocp.t0_guess;
        let tfg = ocp.tf_guess.max(ocp.t0_guess + 1e-6);
        for (k, rule) in ctx.rules.iter().enumerate() {
            let (a, b) = (mesh.fractions[k], mesh.fractions[k + 1]);
            let sk = support_offsets[k];
            for (i, &xi) in rule.nodes.iter().enumerate() {
                let tau = a + (xi + 1.0) * 0.5 * (b - a);
                let frac = 0.5 * (tau + 1.0);
                let (xg, ug) = (ocp.guess)(frac);
                for c in 0..nx {
                    z0[layout.x_index(sk + i, c)] = xg[c];
                }
                for c in 0..nu {
                    z0[layout.u_index(sk + i, c)] = ug[c];
                }
            }
        }
        let (xg, _) = (ocp.guess)(1.0);
        for c in 0..nx {
            z0[layout.x_index(n_total, c)] = xg[c];
        }
        z0[layout.t0_index()] = t0g;
        z0[layout.tf_index()] = tfg;
        for (v, s) in z0.iter_mut().zip(&layout.z_scale) {
            *v /= s;
        }
    }

    let nlp = NlpProblem {
        nz,
        z_lower,
        z_upper,
        m,
        c_lower,
        c_upper,
        objective,
        gradient: grad_fn,
        constraints: con_fn,
        jacobian_pattern: pattern,
        jacobian: jac_fn,
        hessian_base_pattern: base_pattern,
        hessian_base: Some(hessian_base_fn),
        initial_guess: z0,
        kkt_order: Some(kkt_order),
    };
    Ok(TranscribedProblem { nlp, layout })
}

/// Per-interval error estimates: maximum scaled defect of the interpolated
/// solution sampled between collocation points.
pub fn estimate_errors(ocp: &OcpDefinition, traj: &Trajectory) -> Result<Vec<f64>> {
    let mesh = &traj.mesh;
    let offsets = mesh.support_offsets();
    let h = 0.5 * traj.time_map.duration();
    let mut estimates = Vec::with_capacity(mesh.interval_count());
    let mut fbuf = vec![0.0; ocp.nx];
    for (k, &count) in mesh.counts.iter().enumerate() {
        let rule = compute_radau_rule(count)?;
        let (a, b) = (mesh.fractions[k], mesh.fractions[k + 1]);
        let gamma = 0.5 * (b - a);
        let sk = offsets[k];
        let mut xmax: f64 = 0.0;
        for j in 0..=count {
            for c in 0..ocp.nx {
                xmax = xmax.max(traj.states[sk + j][c].abs());
            }
        }
        let mut worst: f64 = 0.0;
        // N_k + 1 equispaced interior samples between the collocation points
        for mth in 0..=count {
            let xi = -1.0 + 2.0 * (mth as f64 + 1.0) / (count as f64 + 2.0);
            let tau = a + (xi + 1.0) * gamma;
            let t = traj.time_map.tau_to_time(tau.clamp(-1.0, 1.0))?;
            let mut xs = vec![0.0; ocp.nx];
            let mut dxs = vec![0.0; ocp.nx];
            let mut vals = vec![0.0; count + 1];
            for c in 0..ocp.nx {
                for j in 0..=count {
                    vals[j] = traj.states[sk + j][c];
                }
                xs[c] = barycentric_eval(&rule.support_points, &rule.barycentric, &vals, xi);
                dxs[c] =
                    barycentric_derivative(&rule.support_points, &rule.barycentric, &vals, xi);
            }
            let mut uvals = vec![0.0; count];
            let mut us = vec![0.0; ocp.nu];
            for c in 0..ocp.nu {
                for i in 0..count {
                    uvals[i] = traj.controls[sk + i][c];
                }
                us[c] = barycentric_eval(&rule.nodes, &rule.node_barycentric, &uvals, xi);
            }
            (ocp.dynamics)(&mut fbuf, &xs, &us, &ocp.nominal_params, t);
            for c in 0..ocp.nx {
                let defect = dxs[c] - h * gamma * fbuf[c];
                worst = worst.max(defect.abs() / (1.0 + xmax));
            }
        }
        estimates.push(worst);
    }
    Ok(estimates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{solve, SolveOptions};

    fn double_integrator() -> OcpDefinition {
        let mut ocp = OcpDefinition::new(
            "double-integrator",
            2,
            1,
            0,
            Arc::new(|out, x, u, _p, _t| {
                out[0] = x[1];
                out[1] = u[0];
            }),
        );
        ocp.lagrange = Some(Arc::new(|_x, u, _t| u[0] * u[0]));
        ocp.nb = 4;
        ocp.boundary = Some(Arc::new(|out, x0, _t0, xf, _tf| {
            out[0] = x0[0];
            out[1] = x0[1];
            out[2] = xf[0];
            out[3] = xf[1];
        }));
        ocp.b_lower = vec![0.0, 0.0, 1.0, 0.0];
        ocp.b_upper = vec![0.0, 0.0, 1.0, 0.0];
        ocp.x_lower = vec![-10.0, -10.0];
        ocp.x_upper = vec![10.0, 10.0];
        ocp.u_lower = vec![-100.0];
        ocp.u_upper = vec![100.0];
        ocp.t0_bounds = (0.0, 0.0);
        ocp.tf_bounds = (1.0, 1.0);
        ocp.tf_guess = 1.0;
        ocp.time_invariant = true;
        ocp
    }

    #[test]
    fn variable_and_constraint_counts() {
        let mut ocp = double_integrator();
        ocp.tf_bounds = (0.5, 2.0); // free tf
        let mesh = Mesh::uniform(1, 10).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        assert_eq!(tp.nlp.nz, 2 * 11 + 10 + 2);
        assert_eq!(tp.layout.defect_row(9, 1) + 1, 20);
        assert_eq!(tp.nlp.m, 20 + 4);
    }

    #[test]
    fn zero_dynamics_constant_state_is_feasible() {
        let mut ocp = OcpDefinition::new(
            "static",
            1,
            0,
            0,
            Arc::new(|out, _x, _u, _p, _t| out[0] = 0.0),
        );
        ocp.nb = 2;
        ocp.boundary = Some(Arc::new(|out, x0, _t0, xf, _tf| {
            out[0] = x0[0];
            out[1] = xf[0];
        }));
        ocp.b_lower = vec![0.7, 0.7];
        ocp.b_upper = vec![0.7, 0.7];
        ocp.time_invariant = true;
        let mesh = Mesh::uniform(3, 4).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        // constant-state point
        let mut z = vec![0.0; tp.nlp.nz];
        for g in 0..=tp.layout.n_total {
            z[tp.layout.x_index(g, 0)] = 0.7;
        }
        z[tp.layout.t0_index()] = 0.0;
        z[tp.layout.tf_index()] = 1.0;
        let mut c = vec![0.0; tp.nlp.m];
        (tp.nlp.constraints)(&z, &mut c);
        for (r, v) in c.iter().enumerate().take(tp.layout.n_total) {
            assert!(v.abs() < 1e-13, "defect row {r}: {v}");
        }
    }

    #[test]
    fn pack_extract_round_trip() {
        let ocp = double_integrator();
        let mesh = Mesh::new(vec![-1.0, -0.2, 1.0], vec![3, 5]).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut z: Vec<f64> = (0..tp.nlp.nz).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // keep the time map ordered
        z[tp.layout.t0_index()] = 0.0;
        z[tp.layout.tf_index()] = 1.0;
        let traj = extract_solution(&z, &tp.layout).unwrap();
        let z2 = tp.layout.pack(&traj).unwrap();
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(traj.time_map.t0, 0.0);
        assert_eq!(traj.time_map.tf, 1.0);
        assert!(extract_solution(&z[1..], &tp.layout).is_err());
    }

    #[test]
    fn gradient_and_jacobian_match_finite_differences() {
        let ocp = double_integrator();
        let mesh = Mesh::new(vec![-1.0, 0.3, 1.0], vec![3, 4]).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut z: Vec<f64> = (0..tp.nlp.nz).map(|_| rng.gen_range(-0.5..0.5)).collect();
        z[tp.layout.t0_index()] = 0.0;
        z[tp.layout.tf_index()] = 1.0;

        let mut g = vec![0.0; tp.nlp.nz];
        (tp.nlp.gradient)(&z, &mut g);
        let h = 1e-6;
        for i in 0..tp.nlp.nz {
            let mut zp = z.clone();
            zp[i] += h;
            let fp = (tp.nlp.objective)(&zp);
            zp[i] = z[i] - h;
            let fm = (tp.nlp.objective)(&zp);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "grad[{i}]: {} vs fd {}",
                g[i],
                fd
            );
        }

        let mut jv = vec![0.0; tp.nlp.jacobian_pattern.len()];
        (tp.nlp.jacobian)(&z, &mut jv);
        let mut dense = vec![vec![0.0; tp.nlp.nz]; tp.nlp.m];
        for (e, &(r, c)) in tp.nlp.jacobian_pattern.iter().enumerate() {
            dense[r][c] += jv[e];
        }
        let mut cp = vec![0.0; tp.nlp.m];
        let mut cm = vec![0.0; tp.nlp.m];
        for i in 0..tp.nlp.nz {
            let mut zp = z.clone();
            zp[i] += h;
            (tp.nlp.constraints)(&zp, &mut cp);
            zp[i] = z[i] - h;
            (tp.nlp.constraints)(&zp, &mut cm);
            for r in 0..tp.nlp.m {
                let fd = (cp[r] - cm[r]) / (2.0 * h);
                assert!(
                    (dense[r][c_at(i)] - fd).abs() < 2e-5 * (1.0 + fd.abs()),
                    "jac[{r}][{i}]: {} vs {}",
                    dense[r][c_at(i)],
                    fd
                );
            }
        }
        fn c_at(i: usize) -> usize {
            i
        }
    }

    #[test]
    fn double_integrator_minimum_energy_oracle() {
        // Analytic solution (Pontryagin): u(t) = 6 - 12 t, J = 12.
        let ocp = double_integrator();
        let mesh = Mesh::uniform(1, 5).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        let sol = solve(&tp.nlp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, crate::nlp::SolveStatus::Optimal);
        let j = (tp.nlp.objective)(&sol.primal);
        assert!((j - 12.0).abs() < 1e-6, "J = {j}");
        let traj = extract_solution(&sol.primal, &tp.layout).unwrap();
        for (t, u) in traj.collocation_times().iter().zip(&traj.controls) {
            let exact = 6.0 - 12.0 * t;
            assert!((u[0] - exact).abs() < 1e-6, "u({t}) = {} vs {exact}", u[0]);
        }
    }

    #[test]
    fn extracted_trajectory_reproduces_constraint_values() {
        let ocp = double_integrator();
        let mesh = Mesh::uniform(2, 4).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        let sol = solve(&tp.nlp, &SolveOptions::default()).unwrap();
        let traj = extract_solution(&sol.primal, &tp.layout).unwrap();
        let repacked = tp.layout.pack(&traj).unwrap();
        let mut c1 = vec![0.0; tp.nlp.m];
        let mut c2 = vec![0.0; tp.nlp.m];
        (tp.nlp.constraints)(&sol.primal, &mut c1);
        (tp.nlp.constraints)(&repacked, &mut c2);
        for (a, b) in c1.iter().zip(&c2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn error_estimates_vanish_for_exact_polynomial_solution() {
        let ocp = double_integrator();
        let mesh = Mesh::uniform(1, 5).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        let sol = solve(&tp.nlp, &SolveOptions::default()).unwrap();
        let traj = extract_solution(&sol.primal, &tp.layout).unwrap();
        let est = estimate_errors(&ocp, &traj).unwrap();
        // the optimal trajectory is a cubic: representable exactly at N = 5
        assert!(est[0] < 1e-7, "estimate {}", est[0]);
    }

    #[test]
    fn zero_dynamics_gives_zero_estimates() {
        let ocp = OcpDefinition::new(
            "static",
            1,
            0,
            0,
            Arc::new(|out, _x, _u, _p, _t| out[0] = 0.0),
        );
        let mesh = Mesh::uniform(2, 3).unwrap();
        let n = mesh.total_collocation();
        let traj = Trajectory::new(
            mesh,
            TimeMap::new(0.0, 1.0).unwrap(),
            vec![vec![0.4]; n + 1],
            vec![vec![]; n],
        )
        .unwrap();
        let est = estimate_errors(&ocp, &traj).unwrap();
        for e in est {
            assert!(e < 1e-14);
        }
    }

    #[test]
    fn warm_start_halves_iterations_on_perturbed_problem() {
        let ocp = double_integrator();
        let mesh = Mesh::uniform(1, 5).unwrap();
        let tp = transcribe(&ocp, &mesh).unwrap();
        let cold = solve(&tp.nlp, &SolveOptions::default()).unwrap();

        // perturb a boundary value by 1%
        let mut ocp2 = double_integrator();
        ocp2.b_lower[2] = 1.01;
        ocp2.b_upper[2] = 1.01;
        let tp2 = transcribe(&ocp2, &mesh).unwrap();
        let cold2 = solve(&tp2.nlp, &SolveOptions::default()).unwrap();
        let warm = solve(
            &tp2.nlp,
            &SolveOptions {
                warm_start: Some(crate::nlp::WarmStart {
                    primal: cold.primal.clone(),
                    con_multipliers: Some(cold.con_multipliers.clone()),
                    bound_lower: Some(cold.bound_lower.clone()),
                    bound_upper: Some(cold.bound_upper.clone()),
                }),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(warm.status, crate::nlp::SolveStatus::Optimal);
        assert!(
            warm.iterations * 2 <= cold2.iterations,
            "warm {} vs cold {}",
            warm.iterations,
            cold2.iterations
        );
    }
}
