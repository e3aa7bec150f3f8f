// Probe the stationary error floor of the online runner under different
// step sizes and measurement symmetrization, to understand what sets it.
use hetsense::optim::{sgd_step, IterateState, OptimizerConfig};
use hetsense::seed::{subseed, Domain};
use hetsense::sensing::{generate_gaussian_batch, EnvironmentDistribution, GroundTruthModel};
use hetsense::dynamics::metric_record;
use nalgebra::DMatrix;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let symmetrize: bool = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(false);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);

    let (d, m) = (100, 8000);
    let model = GroundTruthModel::random(d, 1, 1, seed).unwrap();
    let dist = EnvironmentDistribution::uniform_diagonal(1, 10.0).unwrap();
    let cfg = OptimizerConfig::new(eta, 1e-3, m);
    let mut st = IterateState { u: DMatrix::identity(d, d) * cfg.alpha, step: 0, rng_cursor: 0 };
    for t in 0..steps as u64 {
        let env = dist.sample(subseed(seed, Domain::Env, &[t]));
        let mut batch =
            generate_gaussian_batch(&model, &env, m, subseed(seed, Domain::Batch, &[t])).unwrap();
        if symmetrize {
            batch = batch.symmetrized();
        }
        st = sgd_step(&st, &batch, eta, 1e9).unwrap();
        if (t + 1) % 25 == 0 {
            let rec = metric_record(&st.u, &model, (t + 1) as usize, 0, 0.0);
            println!(
                "t={:4} sigma1={:.4} q={:.4} e_fro2={:.4} rec={:.4}",
                t + 1,
                rec.sigma1_r,
                rec.q_fro,
                rec.e_fro2,
                rec.recovery_error
            );
        }
    }
}
