use std::sync::Arc;
use std::time::Instant;
use planelike::energy::StripSystem;
use planelike::lattice::*;
use planelike::model::*;
use planelike::solver::*;

fn main() {
    let md = ModelSpec::default();
    let opts = SolverOptions::default();
    let phases = pure_phase_minimize(&md, 2, 16, &opts).unwrap();
    let dir = Direction::new(&[2, 1]).unwrap();
    let lat = Arc::new(build_quotient(dir, &[1], 16, 0.0, 20.0, 3.0).unwrap());
    let sys = StripSystem::new(lat.clone(), md.clone(), phases.u_plus.clone(), phases.u_minus.clone()).unwrap();
    let class = AdmissibleClass::new(lat.clone(), md.delta0());
    let inits: Vec<(&str, Field)> = vec![
        ("linear", linear_profile(&sys)),
        ("step", step_profile(&sys)),
        ("random", random_admissible(&sys, &class, 42)),
    ];
    for (name, u0) in &inits {
        let t0 = Instant::now();
        let r = constrained_minimize(&sys, &class, u0, &opts).unwrap();
        eprintln!("{name}: iters {} conv {} f {:.10e} in {:.1?}", r.iterations, r.converged, r.f_omega, t0.elapsed());
    }
}
