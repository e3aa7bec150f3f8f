//! Central finite-difference checks of the gradient paths.
//!
//! The implemented update direction is `G(U) = (1/m) sum_i r_i A_i U`. For
//! symmetric measurements this is exactly half the gradient of the loss
//! `L(U) = (1/2m) sum_i r_i^2` (the derivative of `<A, U U^T>` is
//! `(A + A^T) U`), so the oracle asserts `FD(L) = 2 G` entrywise. Rank-one
//! batches are symmetric by construction; the dense path is checked on a
//! pre-symmetrized batch, which leaves responses untouched.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use hetsense::optim::{
    least_squares_loss, loss_gradient, loss_gradient_truncated, truncated_least_squares_loss,
};
use hetsense::sensing::{
    generate_gaussian_batch, generate_rank_one_batch, EnvironmentDistribution, GroundTruthModel,
    MeasurementBatch,
};

const H: f64 = 1e-5;

fn random_iterate(d: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = hetsense::seed::stream(seed, hetsense::seed::Domain::Trial, &[]);
    let mut u = DMatrix::zeros(d, k);
    for v in u.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * 0.5;
    }
    u
}

/// Central finite differences of `f` at `u`, entry by entry.
fn fd_gradient(
    f: &dyn Fn(&DMatrix<f64>) -> f64,
    u: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(u.nrows(), u.ncols());
    for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            let mut up = u.clone();
            up[(i, j)] += H;
            let mut dn = u.clone();
            dn[(i, j)] -= H;
            g[(i, j)] = (f(&up) - f(&dn)) / (2.0 * H);
        }
    }
    g
}

fn max_rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = fd.abs().max().max(1e-12);
    (analytic - fd).abs().max() / scale
}

#[test]
fn dense_gradient_matches_finite_differences() {
    let model = GroundTruthModel::random(8, 1, 1, 100).unwrap();
    let dist = EnvironmentDistribution::uniform_diagonal(1, 3.0).unwrap();
    let env = dist.sample(1);
    let batch = generate_gaussian_batch(&model, &env, 200, 2).unwrap().symmetrized();
    for point in 0..10 {
        let u = random_iterate(8, 8, 200 + point);
        let analytic = loss_gradient(&batch, &u).unwrap() * 2.0;
        let fd = fd_gradient(&|v| least_squares_loss(&batch, v).unwrap(), &u);
        let err = max_rel_err(&analytic, &fd);
        assert!(err <= 1e-5, "dense point {point}: rel err {err:.3e}");
    }
}

#[test]
fn rank_one_gradient_matches_finite_differences() {
    let model = GroundTruthModel::random(8, 1, 1, 101).unwrap();
    let dist = EnvironmentDistribution::uniform_diagonal(1, 3.0).unwrap();
    let env = dist.sample(3);
    let batch = generate_rank_one_batch(&model, &env, 200, 4).unwrap();
    for point in 0..10 {
        let u = random_iterate(8, 8, 300 + point);
        let analytic = loss_gradient(&batch, &u).unwrap() * 2.0;
        let fd = fd_gradient(&|v| least_squares_loss(&batch, v).unwrap(), &u);
        let err = max_rel_err(&analytic, &fd);
        assert!(err <= 1e-5, "rank-one point {point}: rel err {err:.3e}");
    }
}

/// Radius placed in the widest gap of the predicted-response values, so no
/// indicator flips inside the finite-difference stencil.
fn safe_radius(batch: &MeasurementBatch, u: &DMatrix<f64>) -> f64 {
    let d = u.nrows();
    let mut preds: Vec<f64> = (0..batch.len())
        .map(|i| {
            let x = nalgebra::DVectorView::from_slice(batch.rank_one_sample(i), d);
            (u.transpose() * x).norm_squared()
        })
        .collect();
    preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = batch.len() / 4;
    let hi = 3 * batch.len() / 4;
    let (mut best_gap, mut best_mid) = (0.0, preds[lo]);
    for w in preds[lo..hi].windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            best_mid = 0.5 * (w[0] + w[1]);
        }
    }
    assert!(best_gap > 1e-3, "need a stencil-safe gap, widest is {best_gap:.3e}");
    best_mid
}

#[test]
fn truncated_gradient_matches_finite_differences() {
    let model = GroundTruthModel::random(8, 1, 1, 102).unwrap();
    let dist = EnvironmentDistribution::uniform_diagonal(1, 3.0).unwrap();
    let env = dist.sample(5);
    let batch = generate_rank_one_batch(&model, &env, 150, 6).unwrap();
    for point in 0..10 {
        let u = random_iterate(8, 8, 400 + point);
        let radius = safe_radius(&batch, &u);
        let analytic = loss_gradient_truncated(&batch, &u, radius).unwrap() * 2.0;
        // The indicator genuinely bites: the direction differs from the
        // untruncated one.
        let plain = loss_gradient(&batch, &u).unwrap() * 2.0;
        assert!((&analytic - &plain).abs().max() > 1e-9, "truncation inactive at point {point}");
        let fd = fd_gradient(&|v| truncated_least_squares_loss(&batch, v, radius).unwrap(), &u);
        let err = max_rel_err(&analytic, &fd);
        assert!(err <= 1e-5, "truncated point {point}: rel err {err:.3e}");
    }
}
