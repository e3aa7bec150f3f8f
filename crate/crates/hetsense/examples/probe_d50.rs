use hetsense::optim::{run_hetero_sgd, OptimizerConfig};
use hetsense::sensing::{EnvironmentDistribution, GroundTruthModel};

fn main() {
    for seed in [11u64, 12, 13] {
        let model = GroundTruthModel::random(50, 1, 1, seed).unwrap();
        let dist = EnvironmentDistribution::uniform_diagonal(1, 10.0).unwrap();
        let mut cfg = OptimizerConfig::new(0.1, 1e-3, 2000);
        cfg.steps = Some(300);
        let t = run_hetero_sgd(&model, &dist, &cfg, seed).unwrap();
        let r = t.final_record();
        println!(
            "rust  d=50 m=2000 eta=0.1 T=300 seed={seed}: rec={:.4} q={:.4} e_fro2={:.4}",
            r.recovery_error, r.q_fro, r.e_fro2
        );
    }
}
