use dogkit::nlp::{solve, SolveOptions};
use dogkit::problems::by_name;
use dogkit::transcription::transcribe;
use std::time::Instant;

fn main() {
    let bundle = by_name("rlv-entry").unwrap();
    let mesh = bundle.defaults.mesh.clone();
    let tp = transcribe(&bundle.ocp, &mesh).unwrap();
    println!("nz={} m={}", tp.nlp.nz, tp.nlp.m);
    let t = Instant::now();
    let mem: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let opts = SolveOptions { print_every: 1, max_iterations: 1500, memory: mem, ..Default::default() };
    let sol = solve(&tp.nlp, &opts).unwrap();
    println!(
        "status={:?} iters={} kkt={:.2e} [{:.2}s]",
        sol.status, sol.iterations, sol.kkt_error, t.elapsed().as_secs_f64()
    );
    let traj = dogkit::transcription::extract_solution(&sol.primal, &tp.layout).unwrap();
    let xf = traj.states.last().unwrap();
    println!(
        "tf={:.1}s lat={:.3}deg lon={:.3}deg v={:.4} h={:.2}km alpha={:.2}deg sigma={:.2}deg",
        traj.time_map.tf * 100.0,
        xf[2].to_degrees(),
        xf[1].to_degrees(),
        xf[3],
        (xf[0] - 6.378145) * 1000.0,
        xf[6].to_degrees(),
        xf[7].to_degrees()
    );
}
