//! Reference-solve pipeline: mesh-refined solves of a definition, and the
//! two-stage desensitized reference (nominal solve, reference evaluation,
//! augmentation, augmented solve).

use crate::desensitize::{
    augment, evaluate_references, CostReferences, DesensitizationConfig, OutputMap,
};
use crate::error::{Error, Result};
use crate::mesh::{refine, Mesh};
use crate::nlp::{solve, NlpSolution, SolveOptions, SolveStatus, WarmStart};
use crate::ocp::{OcpDefinition, Trajectory};
use crate::propagation::propagate_sensitivities;
use crate::transcription::{estimate_errors, extract_solution, transcribe};

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { tolerance: 1e-5, max_iterations: 10 }
    }
}

/// A converged reference solve.
pub struct ReferenceSolution {
    pub trajectory: Trajectory,
    pub nlp: NlpSolution,
    pub mesh: Mesh,
    pub refine_iterations: usize,
    pub mesh_converged: bool,
    pub objective: f64,
}

/// Interpolate a trajectory onto a new mesh/time window (states at support
/// points, controls at collocation points).
pub fn resample_trajectory(
    traj: &Trajectory,
    mesh: &Mesh,
    time_map: crate::mesh::TimeMap,
) -> Result<Trajectory> {
    let template = Trajectory::new(
        mesh.clone(),
        time_map,
        vec![vec![0.0; traj.nx()]; mesh.total_collocation() + 1],
        vec![vec![0.0; traj.nu()]; mesh.total_collocation()],
    )?;
    let dom = (traj.time_map.t0, traj.time_map.tf);
    let mut states = Vec::with_capacity(mesh.total_collocation() + 1);
    for t in template.support_times() {
        states.push(traj.eval_state(t.clamp(dom.0, dom.1))?);
    }
    let mut controls = Vec::with_capacity(mesh.total_collocation());
    for t in template.collocation_times() {
        controls.push(traj.eval_control(t.clamp(dom.0, dom.1))?);
    }
    Trajectory::new(mesh.clone(), time_map, states, controls)
}

/// Solve a definition on a mesh, refining until the defect estimates meet
/// the tolerance or the iteration cap is reached. Later passes warm-start
/// from the previous solution resampled onto the refined mesh.
pub fn solve_reference(
    ocp: &OcpDefinition,
    mesh: &Mesh,
    solve_opts: &SolveOptions,
    refine_opts: &RefineOptions,
    initial: Option<&Trajectory>,
) -> Result<ReferenceSolution> {
    let mut current_mesh = mesh.clone();
    let mut warm: Option<Trajectory> = initial.cloned();
    let mut last: Option<ReferenceSolution> = None;
    for pass in 0..refine_opts.max_iterations.max(1) {
        let tp = transcribe(ocp, &current_mesh)?;
        let mut opts = solve_opts.clone();
        if let Some(prev) = &warm {
            let resampled = resample_trajectory(
                prev,
                &current_mesh,
                crate::mesh::TimeMap::new(prev.time_map.t0, prev.time_map.tf)?,
            )?;
            opts.warm_start = Some(WarmStart {
                primal: tp.layout.pack(&resampled)?,
                con_multipliers: None,
                bound_lower: None,
                bound_upper: None,
            });
        }
        let sol = solve(&tp.nlp, &opts)?;
        if sol.status != SolveStatus::Optimal {
            // keep the best attempt; a refined mesh will not rescue a solve
            // that failed outright
            let traj = extract_solution(&sol.primal, &tp.layout)?;
            let objective = (tp.nlp.objective)(&sol.primal) * tp.layout.obj_scale;
            return Ok(ReferenceSolution {
                trajectory: traj,
                nlp: sol,
                mesh: current_mesh,
                refine_iterations: pass,
                mesh_converged: false,
                objective,
            });
        }
        let traj = extract_solution(&sol.primal, &tp.layout)?;
        let estimates = estimate_errors(ocp, &traj)?;
        let (next_mesh, converged) = refine(&current_mesh, &estimates, refine_opts.tolerance)?;
        let objective = (tp.nlp.objective)(&sol.primal) * tp.layout.obj_scale;
        let done = converged || pass + 1 == refine_opts.max_iterations.max(1);
        last = Some(ReferenceSolution {
            trajectory: traj.clone(),
            nlp: sol,
            mesh: current_mesh.clone(),
            refine_iterations: pass + 1,
            mesh_converged: converged,
            objective,
        });
        if done {
            break;
        }
        warm = Some(traj);
        current_mesh = next_mesh;
    }
    last.ok_or_else(|| Error::numerical("refinement loop produced no solution"))
}

/// The desensitized reference: nominal solve, reference cost components,
/// augmentation, and the augmented solve warm-started from the nominal
/// trajectory with propagated sensitivities.
pub struct DesensitizedReference {
    pub augmented_ocp: OcpDefinition,
    pub references: CostReferences,
    pub nominal: ReferenceSolution,
    pub reference: ReferenceSolution,
    pub config: DesensitizationConfig,
}

pub fn desensitized_reference(
    ocp: &OcpDefinition,
    output: &OutputMap,
    beta: f64,
    xi: f64,
    covariance: nalgebra::DMatrix<f64>,
    mesh: &Mesh,
    solve_opts: &SolveOptions,
    refine_opts: &RefineOptions,
) -> Result<DesensitizedReference> {
    let nominal = solve_reference(ocp, mesh, solve_opts, refine_opts, None)?;
    if nominal.nlp.status != SolveStatus::Optimal {
        return Err(Error::numerical(format!(
            "nominal reference solve ended with status {:?}",
            nominal.nlp.status
        )));
    }
    let references = evaluate_references(ocp, &nominal.trajectory, output, &covariance)?;
    let mut config = DesensitizationConfig::new(beta, xi, covariance)?;
    config.references = Some(references);
    let augmented_ocp = augment(ocp, output, &config)?;

    // Warm start: nominal states and controls with propagated sensitivities.
    let warm_traj = augmented_guess(&augmented_ocp, ocp, &nominal.trajectory)?;
    let reference = solve_reference(
        &augmented_ocp,
        &nominal.mesh,
        solve_opts,
        // the nominal pass already refined the mesh; allow a shorter loop
        &RefineOptions {
            tolerance: refine_opts.tolerance,
            max_iterations: refine_opts.max_iterations.min(3).max(1),
        },
        Some(&warm_traj),
    )?;
    if reference.nlp.status != SolveStatus::Optimal {
        return Err(Error::numerical(format!(
            "desensitized reference solve ended with status {:?}",
            reference.nlp.status
        )));
    }
    Ok(DesensitizedReference { augmented_ocp, references, nominal, reference, config })
}

/// Build an augmented-state trajectory from a nominal one by appending the
/// propagated sensitivity history.
pub fn augmented_guess(
    augmented: &OcpDefinition,
    original: &OcpDefinition,
    nominal: &Trajectory,
) -> Result<Trajectory> {
    let times = nominal.support_times();
    let hist = propagate_sensitivities(
        original,
        nominal,
        (nominal.time_map.t0, nominal.time_map.tf),
        &times,
    )?;
    let ns = original.nx * original.np;
    let mut states = Vec::with_capacity(nominal.states.len());
    for (g, t) in times.iter().enumerate() {
        let mut row = nominal.states[g].clone();
        match hist.at_time(*t) {
            Some(s) => row.extend_from_slice(s),
            None => row.extend(std::iter::repeat(0.0).take(ns)),
        }
        states.push(row);
    }
    debug_assert_eq!(states[0].len(), augmented.nx);
    Trajectory::new(
        nominal.mesh.clone(),
        nominal.time_map,
        states,
        nominal.controls.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::zermelo::{
        analytic_nominal_objective, analytic_nominal_sensitivity, zermelo_ocp,
    };

    #[test]
    fn zermelo_nominal_matches_analytic_optimum() {
        let bundle = zermelo_ocp();
        let sol = solve_reference(
            &bundle.ocp,
            &bundle.defaults.mesh,
            &SolveOptions::default(),
            &RefineOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(sol.nlp.status, SolveStatus::Optimal);
        let x1f = sol.trajectory.states.last().unwrap()[0];
        let exact = analytic_nominal_objective();
        assert!(
            (x1f - exact).abs() < 1e-5,
            "x1(tf) = {x1f} vs analytic {exact}"
        );
        assert!((sol.objective + exact).abs() < 1e-5);
    }

    #[test]
    fn zermelo_references_match_closed_form() {
        let bundle = zermelo_ocp();
        let refs_pipeline = desensitized_reference(
            &bundle.ocp,
            &bundle.output,
            0.0,
            0.0,
            bundle.defaults.covariance.clone(),
            &bundle.defaults.mesh,
            &SolveOptions::default(),
            &RefineOptions::default(),
        )
        .unwrap();
        let refs = refs_pipeline.references;
        let exact_j = -analytic_nominal_objective();
        assert!((refs.j_ref - exact_j).abs() < 1e-4, "{}", refs.j_ref);
        // Jf_ref = P S1(tf)^2 with P = 1
        let exact_jf = analytic_nominal_sensitivity().powi(2);
        assert!(
            (refs.jf_ref - exact_jf).abs() < 1e-4,
            "{} vs {exact_jf}",
            refs.jf_ref
        );
    }

    #[test]
    fn beta_zero_augmented_solution_matches_unaugmented() {
        let bundle = zermelo_ocp();
        let d = desensitized_reference(
            &bundle.ocp,
            &bundle.output,
            0.0,
            0.0,
            bundle.defaults.covariance.clone(),
            &bundle.defaults.mesh,
            &SolveOptions::default(),
            &RefineOptions::default(),
        )
        .unwrap();
        let x1f_nominal = d.nominal.trajectory.states.last().unwrap()[0];
        let x1f_aug = d.reference.trajectory.states.last().unwrap()[0];
        assert!(
            (x1f_nominal - x1f_aug).abs() < 1e-5,
            "{x1f_nominal} vs {x1f_aug}"
        );
    }
}
