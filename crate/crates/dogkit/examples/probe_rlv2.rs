use dogkit::driver::{solve_reference, RefineOptions};
use dogkit::nlp::SolveOptions;
use dogkit::problems::by_name;
use dogkit::transcription::estimate_errors;
use std::time::Instant;

fn main() {
    let bundle = by_name("rlv-entry").unwrap();
    let t = Instant::now();
    let sol = solve_reference(
        &bundle.ocp,
        &bundle.defaults.mesh,
        &SolveOptions::default(),
        &RefineOptions { tolerance: 1e-5, max_iterations: 10 },
        None,
    )
    .unwrap();
    let xf = sol.trajectory.states.last().unwrap();
    let est = estimate_errors(&bundle.ocp, &sol.trajectory).unwrap();
    println!(
        "status={:?} refines={} mesh_converged={} K={} N={} kkt={:.1e} [{:.1}s]",
        sol.nlp.status,
        sol.refine_iterations,
        sol.mesh_converged,
        sol.mesh.interval_count(),
        sol.mesh.total_collocation(),
        sol.nlp.kkt_error,
        t.elapsed().as_secs_f64()
    );
    println!(
        "tf={:.1}s lat={:.4}deg lon={:.4}deg  max_defect={:.2e}",
        sol.trajectory.time_map.tf * 100.0,
        xf[2].to_degrees(),
        xf[1].to_degrees(),
        est.iter().fold(0.0f64, |a, v| a.max(*v))
    );
    println!("counts={:?}", sol.mesh.counts);
}
