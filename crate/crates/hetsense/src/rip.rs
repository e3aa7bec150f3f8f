//! Restricted-isometry diagnostics.
//!
//! A measurement ensemble satisfies RIP with parameter `(r, delta)` when
//! `(1-delta) |M|_F^2 <= (1/m) sum_i <A_i, M>^2 <= (1+delta) |M|_F^2` for
//! every `d x d` matrix of rank at most `r`. The true `delta` over all
//! rank-r matrices is not computable; [`estimate_rip_delta`] reports a
//! certified lower bound: the max over random unit-Frobenius rank-r test
//! matrices, sharpened by a short power-iteration ascent from the worst
//! sample. The associated error operator
//! `E(M) = (1/m) sum_i <A_i, M> A_i - M` and the four operator bounds built
//! on it are checked empirically by [`check_rip_lemma_bounds`].

use nalgebra::DMatrix;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seed::{self, Domain};
use crate::sensing::{MeasurementBatch, MeasurementKind, OrthonormalBasis};

/// Randomized lower bound for the RIP constant of a batch.
#[derive(Debug, Clone)]
pub struct RipEstimate {
    /// Max of `|(1/m) sum <A_i, M>^2 - 1|` over the tested unit-norm
    /// matrices; a lower bound on the true delta at this rank.
    pub delta_hat: f64,
    pub rank_tested: usize,
    pub trials: usize,
    /// SHA-256 of the maximizing test matrix's entries.
    pub worst_case_matrix_digest: String,
}

/// `(1/m) sum_i <A_i, M>^2`.
pub fn rip_quadratic_form(batch: &MeasurementBatch, m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != batch.d() || m.ncols() != batch.d() {
        return Err(Error::dim(format!(
            "test matrix is {}x{}, batch dimension is {}",
            m.nrows(),
            m.ncols(),
            batch.d()
        )));
    }
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let v = batch.inner(i, m);
        acc += v * v;
    }
    Ok(acc / batch.len() as f64)
}

/// RIP error operator `E(M) = (1/m) sum_i <A_i, M> A_i - M`, with `A_i`
/// exactly as stored. Rank-one batches use the vector form
/// `(1/m) sum_i (x_i^T M x_i) x_i x_i^T - M` without materializing the
/// stored measurements as matrices.
pub fn rip_error_operator(batch: &MeasurementBatch, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = batch.d();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::dim(format!(
            "test matrix is {}x{}, batch dimension is {}",
            m.nrows(),
            m.ncols(),
            d
        )));
    }
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let acc_slice = acc.as_mut_slice();
    match batch.kind() {
        MeasurementKind::Gaussian => {
            for i in 0..batch.len() {
                let a = batch.dense_sample(i);
                let c = linalg::dot_slices(a, m.as_slice());
                linalg::axpy_slices(acc_slice, c, a);
            }
        }
        MeasurementKind::RankOne => {
            for i in 0..batch.len() {
                let x = batch.rank_one_sample(i);
                let xv = nalgebra::DVectorView::from_slice(x, d);
                let c = (xv.transpose() * m * xv)[(0, 0)];
                // acc += c * x x^T, column by column
                for j in 0..d {
                    linalg::axpy_slices(&mut acc_slice[j * d..(j + 1) * d], c * x[j], x);
                }
            }
        }
    }
    Ok(acc / batch.len() as f64 - m)
}

/// Unit-Frobenius symmetric test matrix of rank at most `r`, indefinite in
/// general: `G G^T - H H^T` with widths `ceil(r/2)` and `floor(r/2)`
/// (a signed rank-one spike when `r = 1`).
pub(crate) fn random_unit_low_rank_symmetric<R: Rng>(
    rng: &mut R,
    d: usize,
    r: usize,
) -> DMatrix<f64> {
    let x = if r <= 1 {
        let g = linalg::standard_normal_matrix(rng, d, 1);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        &g * g.transpose() * sign
    } else {
        let wp = r.div_ceil(2);
        let wm = r - wp;
        let g = linalg::standard_normal_matrix(rng, d, wp);
        let mut x = &g * g.transpose();
        if wm > 0 {
            let h = linalg::standard_normal_matrix(rng, d, wm);
            x -= &h * h.transpose();
        }
        x
    };
    let n = x.norm();
    if n == 0.0 {
        x
    } else {
        x / n
    }
}

fn digest_matrix(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    for v in m.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Symmetrized quadratic-form operator `B(M) = sym(E(M) + M)`; for
/// symmetric `M`, `<B(M), M> = (1/m) sum <A_i, M>^2`.
fn qf_operator(batch: &MeasurementBatch, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = rip_error_operator(batch, m)? + m;
    Ok((&b + b.transpose()) * 0.5)
}

/// Randomized lower bound + local ascent refinement for the RIP constant at
/// rank `r`. Deterministic given the seed.
pub fn estimate_rip_delta(
    batch: &MeasurementBatch,
    r: usize,
    trials: usize,
    seed: u64,
) -> Result<RipEstimate> {
    if trials < 1 {
        return Err(Error::config("need at least one trial".to_string()));
    }
    if r < 1 || r > batch.d() {
        return Err(Error::dim(format!("rank must satisfy 1 <= r <= d, got {r}")));
    }
    let d = batch.d();

    let mut best_val = -1.0;
    let mut best_m = DMatrix::zeros(d, d);
    let mut largest_qf: f64 = 1.0;
    for trial in 0..trials {
        let mut rng = seed::stream(seed, Domain::RipTrial, &[trial as u64]);
        let m = random_unit_low_rank_symmetric(&mut rng, d, r);
        let qf = rip_quadratic_form(batch, &m)?;
        largest_qf = largest_qf.max(qf);
        let val = (qf - 1.0).abs();
        if val > best_val {
            best_val = val;
            best_m = m;
        }
    }

    // Sharpen both extremes of the quadratic form from the worst sample:
    // plain power iteration climbs toward the largest eigenvalue of the
    // form; iterating the shifted operator `lambda I - B` descends toward
    // the smallest. Rank truncation and renormalization keep the iterate a
    // feasible witness, so every evaluation stays a valid lower bound.
    let shift = largest_qf + 1.0;
    for descend in [false, true] {
        let mut m = best_m.clone();
        for _ in 0..20 {
            let bm = qf_operator(batch, &m)?;
            let next = if descend { &m * shift - bm } else { bm };
            let next = linalg::symmetric_rank_truncate(&next, r);
            let norm = next.norm();
            if norm < 1e-300 {
                break;
            }
            m = next / norm;
        }
        let qf = rip_quadratic_form(batch, &m)?;
        let val = (qf - 1.0).abs();
        if val > best_val {
            best_val = val;
            best_m = m;
        }
    }

    Ok(RipEstimate {
        delta_hat: best_val,
        rank_tested: r,
        trials,
        worst_case_matrix_digest: digest_matrix(&best_m),
    })
}

/// Outcome of one empirical operator-bound check.
#[derive(Debug, Clone)]
pub struct LemmaCheck {
    pub id: &'static str,
    /// Largest observed LHS / RHS; above 1 is a violation.
    pub max_ratio: f64,
    pub violations: usize,
}

/// Empirical check of the four RIP error-operator bounds.
#[derive(Debug, Clone)]
pub struct RipLemmaReport {
    pub delta_used: f64,
    pub rank: usize,
    pub trials: usize,
    pub lemmas: Vec<LemmaCheck>,
}

impl RipLemmaReport {
    pub fn all_pass(&self) -> bool {
        self.lemmas.iter().all(|l| l.violations == 0)
    }
}

/// Check, over random draws, that the error operator obeys
///
/// * `|<E(X), Y>|  <= delta |X|_F |Y|_F` for `X, Y` of rank <= r,
/// * `|E(X) Z|     <= delta |X|_F |Z|`   for `X` of rank <= r, any `Z`,
/// * `|<E(W), Y>|  <= delta |W|_* |Y|_F` for any symmetric `W`,
/// * `|E(W) Z|     <= delta |W|_* |Z|`   for any symmetric `W`, any `Z`.
///
/// Violations are reported, never thrown.
pub fn check_rip_lemma_bounds(
    batch: &MeasurementBatch,
    r: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<RipLemmaReport> {
    let d = batch.d();
    let mut checks = [
        LemmaCheck { id: "low-rank-frobenius", max_ratio: 0.0, violations: 0 },
        LemmaCheck { id: "low-rank-operator", max_ratio: 0.0, violations: 0 },
        LemmaCheck { id: "nuclear-frobenius", max_ratio: 0.0, violations: 0 },
        LemmaCheck { id: "nuclear-operator", max_ratio: 0.0, violations: 0 },
    ];

    for trial in 0..trials {
        let mut rng = seed::stream(seed, Domain::RipTrial, &[0xabcd, trial as u64]);
        let x = random_unit_low_rank_symmetric(&mut rng, d, r);
        let y = random_unit_low_rank_symmetric(&mut rng, d, r);
        let z = linalg::standard_normal_matrix(&mut rng, d, d);
        let w_raw = linalg::standard_normal_matrix(&mut rng, d, d);
        let w = (&w_raw + w_raw.transpose()) * 0.5;

        let ex = rip_error_operator(batch, &x)?;
        let ew = rip_error_operator(batch, &w)?;
        let z_op = linalg::operator_norm(&z);
        let w_nuc = linalg::nuclear_norm(&w);

        let ratios = [
            linalg::frob_inner(&ex, &y).abs() / (delta * x.norm() * y.norm()),
            linalg::operator_norm(&(&ex * &z)) / (delta * x.norm() * z_op),
            linalg::frob_inner(&ew, &y).abs() / (delta * w_nuc * y.norm()),
            linalg::operator_norm(&(&ew * &z)) / (delta * w_nuc * z_op),
        ];
        for (check, ratio) in checks.iter_mut().zip(ratios) {
            check.max_ratio = check.max_ratio.max(ratio);
            if ratio > 1.0 {
                check.violations += 1;
            }
        }
    }

    Ok(RipLemmaReport { delta_used: delta, rank: r, trials, lemmas: checks.to_vec() })
}

/// Largest principal-angle cosine between two subspaces: `|B1^T B2|`.
pub fn subspace_angle(b1: &OrthonormalBasis, b2: &OrthonormalBasis) -> Result<f64> {
    if b1.d() != b2.d() {
        return Err(Error::dim(format!("ambient dimensions differ: {} vs {}", b1.d(), b2.d())));
    }
    Ok(linalg::operator_norm(&(b1.columns().transpose() * b2.columns())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{
        generate_gaussian_batch, generate_rank_one_batch,
        EnvironmentDistribution, GroundTruthModel,
    };

    fn test_batch(d: usize, m: usize, seed: u64) -> MeasurementBatch {
        let model = GroundTruthModel::random(d, 1, 1, 1000 + seed).unwrap();
        let env = EnvironmentDistribution::uniform_diagonal(1, 2.0).unwrap().sample(seed);
        generate_gaussian_batch(&model, &env, m, seed).unwrap()
    }

    #[test]
    fn quadratic_form_of_zero_is_zero() {
        let batch = test_batch(6, 64, 1);
        let z = DMatrix::zeros(6, 6);
        assert_eq!(rip_quadratic_form(&batch, &z).unwrap(), 0.0);
    }

    #[test]
    fn single_identity_measurement() {
        let d = 5;
        let eye = DMatrix::identity(d, d);
        let batch = MeasurementBatch::from_dense_parts(vec![eye.clone()], vec![0.0], 0).unwrap();
        // <I, I> = d, so the quadratic form is d^2.
        let qf = rip_quadratic_form(&batch, &eye).unwrap();
        assert!((qf - (d * d) as f64).abs() < 1e-12);
        // E(I) = d I - I.
        let e = rip_error_operator(&batch, &eye).unwrap();
        assert!((&e - DMatrix::identity(d, d) * (d as f64 - 1.0)).abs().max() < 1e-12);
    }

    #[test]
    fn quadratic_form_concentrates_on_rank_one() {
        let batch = test_batch(10, 4000, 3);
        let mut rng = seed::stream(4, Domain::Trial, &[]);
        for _ in 0..10 {
            let m = random_unit_low_rank_symmetric(&mut rng, 10, 1);
            let qf = rip_quadratic_form(&batch, &m).unwrap();
            assert!((0.85..1.15).contains(&qf), "qf {qf}");
        }
    }

    #[test]
    fn error_operator_is_linear_and_ties_to_quadratic_form() {
        let batch = test_batch(8, 500, 5);
        let mut rng = seed::stream(6, Domain::Trial, &[]);
        let m1 = random_unit_low_rank_symmetric(&mut rng, 8, 2);
        let m2 = random_unit_low_rank_symmetric(&mut rng, 8, 2);
        let (a, b) = (1.7, -0.4);
        let lhs = rip_error_operator(&batch, &(&m1 * a + &m2 * b)).unwrap();
        let rhs = rip_error_operator(&batch, &m1).unwrap() * a
            + rip_error_operator(&batch, &m2).unwrap() * b;
        assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-9);

        // <E(M), M> + |M|_F^2 reproduces the quadratic form.
        let qf = rip_quadratic_form(&batch, &m1).unwrap();
        let alt = linalg::frob_inner(&rip_error_operator(&batch, &m1).unwrap(), &m1)
            + m1.norm_squared();
        assert!((qf - alt).abs() / qf.abs() < 1e-9);
    }

    #[test]
    fn error_operator_concentrates_at_large_m() {
        let batch = test_batch(10, 100_000, 7);
        let mut rng = seed::stream(8, Domain::Trial, &[]);
        let m = random_unit_low_rank_symmetric(&mut rng, 10, 2);
        let e = rip_error_operator(&batch, &m).unwrap();
        let ratio = linalg::operator_norm(&e) / m.norm();
        assert!(ratio < 0.1, "ratio {ratio}");
    }

    #[test]
    fn symmetrized_batch_gives_symmetric_error_operator() {
        let batch = test_batch(7, 300, 9).symmetrized();
        let mut rng = seed::stream(10, Domain::Trial, &[]);
        let m = random_unit_low_rank_symmetric(&mut rng, 7, 2);
        let e = rip_error_operator(&batch, &m).unwrap();
        assert!((&e - e.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn rank_one_error_operator_matches_dense_oracle() {
        let model = GroundTruthModel::random(12, 1, 1, 44).unwrap();
        let env = EnvironmentDistribution::uniform_diagonal(1, 3.0).unwrap().sample(4);
        let batch = generate_rank_one_batch(&model, &env, 300, 11).unwrap();
        let dense: Vec<DMatrix<f64>> = (0..batch.len())
            .map(|i| {
                let x = nalgebra::DVector::from_column_slice(batch.rank_one_sample(i));
                &x * x.transpose()
            })
            .collect();
        let dense_batch =
            MeasurementBatch::from_dense_parts(dense, batch.responses().to_vec(), 0).unwrap();
        let mut rng = seed::stream(12, Domain::Trial, &[]);
        let m = random_unit_low_rank_symmetric(&mut rng, 12, 2);
        let fast = rip_error_operator(&batch, &m).unwrap();
        let slow = rip_error_operator(&dense_batch, &m).unwrap();
        assert!((&fast - &slow).norm() / slow.norm() < 1e-9);
    }

    #[test]
    fn exact_isometry_family_has_near_zero_delta() {
        // sqrt(m)-scaled orthonormal basis of 3x3 symmetric matrices: the
        // quadratic form is exactly |M|_F^2 on every symmetric M.
        let d = 3;
        let mut mats = Vec::new();
        for i in 0..d {
            let mut m = DMatrix::zeros(d, d);
            m[(i, i)] = 1.0;
            mats.push(m);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let mut m = DMatrix::zeros(d, d);
                m[(i, j)] = 1.0 / 2.0f64.sqrt();
                m[(j, i)] = 1.0 / 2.0f64.sqrt();
                mats.push(m);
            }
        }
        let m_count = mats.len();
        let scale = (m_count as f64).sqrt();
        let mats: Vec<DMatrix<f64>> = mats.into_iter().map(|m| m * scale).collect();
        let batch =
            MeasurementBatch::from_dense_parts(mats, vec![0.0; m_count], 0).unwrap();
        let est = estimate_rip_delta(&batch, 3, 50, 5).unwrap();
        assert!(est.delta_hat < 1e-10, "delta {}", est.delta_hat);
    }

    #[test]
    fn delta_estimate_scales_like_sqrt_dr_over_m() {
        let batch = test_batch(50, 4000, 21);
        let est = estimate_rip_delta(&batch, 2, 60, 7).unwrap();
        let scale = (50.0 * 2.0 / 4000.0f64).sqrt();
        assert!(
            est.delta_hat > 0.5 * scale && est.delta_hat < 4.0 * scale,
            "delta {} vs scale {scale}",
            est.delta_hat
        );
    }

    #[test]
    fn delta_estimate_is_deterministic() {
        let batch = test_batch(12, 600, 23);
        let a = estimate_rip_delta(&batch, 2, 20, 9).unwrap();
        let b = estimate_rip_delta(&batch, 2, 20, 9).unwrap();
        assert_eq!(a.delta_hat, b.delta_hat);
        assert_eq!(a.worst_case_matrix_digest, b.worst_case_matrix_digest);
    }

    #[test]
    fn refinement_never_underestimates_plain_sampling() {
        // The refined estimate evaluates real witnesses, so it can only grow.
        let batch = test_batch(16, 800, 29);
        let est = estimate_rip_delta(&batch, 2, 40, 11).unwrap();
        let mut sampled_max: f64 = 0.0;
        for trial in 0..40u64 {
            let mut rng = seed::stream(11, Domain::RipTrial, &[trial]);
            let m = random_unit_low_rank_symmetric(&mut rng, 16, 2);
            let qf = rip_quadratic_form(&batch, &m).unwrap();
            sampled_max = sampled_max.max((qf - 1.0).abs());
        }
        assert!(est.delta_hat >= sampled_max - 1e-15);
    }

    #[test]
    fn lemma_bounds_hold_with_margin_and_fail_at_zero_delta() {
        let batch = test_batch(20, 4000, 31);
        let est = estimate_rip_delta(&batch, 4, 40, 13).unwrap();
        let report =
            check_rip_lemma_bounds(&batch, 2, est.delta_hat + 0.05, 50, 15).unwrap();
        assert!(report.all_pass(), "{report:?}");

        // With delta forced to ~0 every generic draw violates the bounds.
        let broken = check_rip_lemma_bounds(&batch, 2, 1e-12, 10, 15).unwrap();
        assert!(!broken.all_pass());
    }

    #[test]
    fn zero_test_matrix_trivially_satisfies_bounds() {
        let batch = test_batch(6, 100, 33);
        let z = DMatrix::zeros(6, 6);
        let e = rip_error_operator(&batch, &z).unwrap();
        assert_eq!(e.abs().max(), 0.0);
    }

    #[test]
    fn subspace_angle_endpoints() {
        let b = OrthonormalBasis::random(10, 2, 77).unwrap();
        assert!((subspace_angle(&b, &b).unwrap() - 1.0).abs() < 1e-10);

        let mut e1 = DMatrix::zeros(4, 1);
        e1[(0, 0)] = 1.0;
        let mut e2 = DMatrix::zeros(4, 1);
        e2[(1, 0)] = 1.0;
        let b1 = OrthonormalBasis::from_columns(e1).unwrap();
        let b2 = OrthonormalBasis::from_columns(e2).unwrap();
        assert_eq!(subspace_angle(&b1, &b2).unwrap(), 0.0);
    }

    #[test]
    fn random_one_dim_angles_respect_the_gaussian_bound() {
        // 99th percentile of |u^T v| over random unit vectors in R^100 stays
        // below 3 sqrt(2/100).
        let bound = 3.0 * (2.0f64 / 100.0).sqrt();
        let mut exceed = 0;
        let trials = 2000;
        for t in 0..trials {
            let b1 = OrthonormalBasis::random(100, 1, 90_000 + t).unwrap();
            let b2 = OrthonormalBasis::random(100, 1, 190_000 + t).unwrap();
            if subspace_angle(&b1, &b2).unwrap() > bound {
                exceed += 1;
            }
        }
        assert!(exceed < trials / 100, "{exceed} exceedances in {trials}");
    }
}
