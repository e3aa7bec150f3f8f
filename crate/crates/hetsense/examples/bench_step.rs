// quick probe of full-scale per-step cost
use hetsense::optim::{run_hetero_sgd, OptimizerConfig};
use hetsense::sensing::{EnvironmentDistribution, GroundTruthModel};
use std::time::Instant;

fn main() {
    let model = GroundTruthModel::random(100, 1, 1, 1).unwrap();
    let dist = EnvironmentDistribution::uniform_diagonal(1, 10.0).unwrap();
    let mut cfg = OptimizerConfig::new(0.1, 1e-3, 8000);
    cfg.steps = Some(20);
    let t0 = Instant::now();
    let traj = run_hetero_sgd(&model, &dist, &cfg, 1).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("20 steps took {:.2}s -> {:.3}s/step; final err {:.4}", dt, dt/20.0, traj.final_record().recovery_error);
    println!("projected 691 steps: {:.1} min; x5 seeds {:.1} min", dt/20.0*691.0/60.0, dt/20.0*691.0*5.0/60.0);
}
