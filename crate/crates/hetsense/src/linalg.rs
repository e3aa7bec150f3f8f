//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Fill a column-major `rows x cols` buffer with i.i.d. standard normals.
pub fn fill_standard_normal<R: Rng>(rng: &mut R, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// `rows x cols` matrix with i.i.d. N(0,1) entries.
pub fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    fill_standard_normal(rng, m.as_mut_slice());
    m
}

/// Frobenius inner product `<a, b> = trace(b^T a)`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    dot_slices(a.as_slice(), b.as_slice())
}

/// Dot product with eight independent accumulator lanes. The lane layout is
/// part of the numeric contract: every path that must agree bit-for-bit
/// (stored batches, streamed generation) reduces through this one function.
#[inline]
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for l in 0..8 {
            lanes[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// Two dot products against the same left factor in one pass, lane-for-lane
/// identical to two separate [`dot_slices`] calls.
#[inline]
pub fn dot2_slices(a: &[f64], b: &[f64], c: &[f64]) -> (f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), c.len());
    let mut lb = [0.0f64; 8];
    let mut lc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for l in 0..8 {
            lb[l] += a[base + l] * b[base + l];
            lc[l] += a[base + l] * c[base + l];
        }
    }
    let mut tb = 0.0;
    let mut tc = 0.0;
    for i in chunks * 8..a.len() {
        tb += a[i] * b[i];
        tc += a[i] * c[i];
    }
    (
        (((lb[0] + lb[1]) + (lb[2] + lb[3])) + ((lb[4] + lb[5]) + (lb[6] + lb[7]))) + tb,
        (((lc[0] + lc[1]) + (lc[2] + lc[3])) + ((lc[4] + lc[5]) + (lc[6] + lc[7]))) + tc,
    )
}

/// `acc += c * a`, elementwise.
#[inline]
pub fn axpy_slices(acc: &mut [f64], c: f64, a: &[f64]) {
    debug_assert_eq!(acc.len(), a.len());
    for (s, x) in acc.iter_mut().zip(a.iter()) {
        *s += c * x;
    }
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().sum()
}

/// Largest and smallest singular values, as `(sigma_max, sigma_min)`.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.singular_values();
    (sv.max(), sv.min())
}

/// Cheap upper-ish estimate of the operator norm of `u` by power iteration
/// on `u^T u`, used only for the divergence guard where a rough magnitude
/// suffices. Deterministic (fixed start vector, fixed iteration count).
pub fn operator_norm_estimate(u: &DMatrix<f64>) -> f64 {
    let k = u.ncols();
    if k == 0 || u.nrows() == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..16 {
        let w = u.transpose() * (u * &v);
        lambda = w.norm();
        if lambda == 0.0 {
            return 0.0;
        }
        v = w / lambda;
    }
    lambda.sqrt()
}

/// Best rank-`r` approximation of a symmetric matrix, by eigenvalue
/// magnitude. Keeps the sign of the retained eigenvalues.
pub fn symmetric_rank_truncate(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .abs()
            .partial_cmp(&eig.eigenvalues[i].abs())
            .unwrap()
    });
    let mut out = DMatrix::zeros(n, n);
    for &ix in order.iter().take(r.min(n)) {
        let v = eig.eigenvectors.column(ix);
        out += eig.eigenvalues[ix] * &v * v.transpose();
    }
    out
}
