use dogkit::driver::{desensitized_reference, RefineOptions};
use dogkit::nlp::SolveOptions;
use dogkit::problems::by_name;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "zermelo".into());
    let bundle = by_name(&which).unwrap();
    let betas: Vec<f64> = if which == "zermelo" {
        vec![0.0, 0.1, 0.2, 0.3, 0.4]
    } else {
        vec![0.0, 0.02]
    };
    for beta in betas {
        let t = Instant::now();
        let xi = if beta > 0.0 { bundle.defaults.xi } else { 0.0 };
        match desensitized_reference(
            &bundle.ocp,
            &bundle.output,
            beta,
            xi,
            bundle.defaults.covariance.clone(),
            &bundle.defaults.mesh,
            &SolveOptions::default(),
            &RefineOptions::default(),
        ) {
            Ok(d) => {
                let xf = d.reference.trajectory.states.last().unwrap();
                let n = d.reference.mesh.total_collocation();
                println!(
                    "beta={beta:.2} ok: obj={:+.5} xf0..3={:?} tf={:.4} iters(nom/aug)={}/{} mesh N={} kkt={:.1e} refs=({:.4},{:.3e},{:.3e}) [{:.2}s]",
                    d.reference.objective,
                    &xf[..4.min(xf.len())].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
                    d.reference.trajectory.time_map.tf,
                    d.nominal.nlp.iterations,
                    d.reference.nlp.iterations,
                    n,
                    d.reference.nlp.kkt_error,
                    d.references.j_ref, d.references.jf_ref, d.references.jr_ref,
                    t.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("beta={beta:.2} FAILED after {:.2}s: {e}", t.elapsed().as_secs_f64()),
        }
    }
}
