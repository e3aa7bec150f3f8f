//! Ground-truth models, environment laws, and measurement batches.
//!
//! The generating process: a shared invariant signal `X* = U* U*^T` of rank
//! r1 and a per-environment spurious signal `X^(e) = V* Sigma^(e) V*^T` of
//! rank at most r2, observed through linear measurements
//! `y_i = <A_i, X* + X^(e)>` with no additive noise. Measurement entries are
//! i.i.d. N(0,1); the `1/m` factor lives in the quadratic form (see
//! [`crate::rip`]), so one normalization convention holds everywhere.
//!
//! Generation is pure given `(inputs, seed)`: batches for different steps or
//! environments may be produced concurrently, and all types are immutable
//! after construction.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::seed::{self, Domain};

/// Samples per RNG chunk when filling a measurement batch. Chunk `c` of a
/// batch draws from its own derived stream, so a batch generated in one
/// piece, generated chunk-parallel, or streamed sample-by-sample through the
/// optimizer yields bit-identical draws.
pub const BATCH_CHUNK: usize = 256;

/// RNG stream for chunk `chunk` of the batch identified by `batch_seed`.
pub fn batch_chunk_rng(batch_seed: u64, chunk: u64) -> seed::StreamRng {
    seed::stream(batch_seed, Domain::Batch, &[chunk])
}

// ---------------------------------------------------------------------------
// Orthonormal bases and the ground-truth model
// ---------------------------------------------------------------------------

/// A `d x r` matrix with orthonormal columns.
///
/// `r = 0` occurs only as the degenerate spurious-free control configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// QR-orthonormalization of a `d x r` matrix with i.i.d. standard normal
    /// entries. Deterministic given the seed.
    pub fn random(d: usize, r: usize, seed: u64) -> Result<Self> {
        if r < 1 || r > d {
            return Err(Error::dim(format!("basis requires 1 <= r <= d, got r={r}, d={d}")));
        }
        let mut rng = seed::stream(seed, Domain::Basis, &[0]);
        let g = linalg::standard_normal_matrix(&mut rng, d, r);
        let q = g.qr().q();
        Ok(Self { columns: q })
    }

    /// Wrap explicitly given orthonormal columns (test constructor for forced
    /// bases such as coordinate axes).
    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        let b = Self { columns };
        b.check_orthonormal(1e-10)?;
        Ok(b)
    }

    /// The `d x 0` empty basis.
    pub fn empty(d: usize) -> Self {
        Self { columns: DMatrix::zeros(d, 0) }
    }

    pub fn d(&self) -> usize {
        self.columns.nrows()
    }

    pub fn r(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Max-entry deviation of `B^T B` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.columns.transpose() * &self.columns;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    fn check_orthonormal(&self, tol: f64) -> Result<()> {
        let defect = self.orthonormality_defect();
        if defect > tol {
            return Err(Error::dim(format!(
                "columns are not orthonormal: max defect {defect:.3e} > {tol:.1e}"
            )));
        }
        Ok(())
    }
}

/// Invariant basis `U*`, spurious basis `V*`, and the derived quantities
/// everything downstream needs: `X* = U* U*^T` and the subspace overlap
/// `epsilon1 = |U*^T V*|`.
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    u_star: OrthonormalBasis,
    v_star: OrthonormalBasis,
    epsilon1: f64,
}

impl GroundTruthModel {
    /// Two independent random orthonormal bases.
    pub fn random(d: usize, r1: usize, r2: usize, seed: u64) -> Result<Self> {
        if r1 + r2 > d {
            return Err(Error::dim(format!("r1 + r2 = {} exceeds d = {d}", r1 + r2)));
        }
        if r1 < 1 {
            return Err(Error::dim("invariant rank r1 must be at least 1".to_string()));
        }
        let u_star = OrthonormalBasis::random(d, r1, seed::subseed(seed, Domain::Basis, &[0]))?;
        let v_star = if r2 == 0 {
            OrthonormalBasis::empty(d)
        } else {
            OrthonormalBasis::random(d, r2, seed::subseed(seed, Domain::Basis, &[1]))?
        };
        Self::from_bases(u_star, v_star)
    }

    /// Random invariant basis with the spurious basis forced exactly
    /// orthogonal to it (epsilon1 at rounding level). The hard-case pooled
    /// baseline is stated for this geometry.
    pub fn random_orthogonal(d: usize, r1: usize, r2: usize, seed: u64) -> Result<Self> {
        if r1 + r2 > d {
            return Err(Error::dim(format!("r1 + r2 = {} exceeds d = {d}", r1 + r2)));
        }
        let u_star = OrthonormalBasis::random(d, r1, seed::subseed(seed, Domain::Basis, &[0]))?;
        let v_star = if r2 == 0 {
            OrthonormalBasis::empty(d)
        } else {
            let mut rng = seed::stream(seed::subseed(seed, Domain::Basis, &[1]), Domain::Basis, &[0]);
            let raw = linalg::standard_normal_matrix(&mut rng, d, r2);
            let proj = &raw - u_star.columns() * (u_star.columns().transpose() * &raw);
            OrthonormalBasis { columns: proj.qr().q() }
        };
        Self::from_bases(u_star, v_star)
    }

    /// Build from explicit bases (test constructor).
    pub fn from_bases(u_star: OrthonormalBasis, v_star: OrthonormalBasis) -> Result<Self> {
        if u_star.d() != v_star.d() {
            return Err(Error::dim(format!(
                "basis ambient dimensions differ: {} vs {}",
                u_star.d(),
                v_star.d()
            )));
        }
        let overlap = u_star.columns().transpose() * v_star.columns();
        let epsilon1 = linalg::operator_norm(&overlap);
        Ok(Self { u_star, v_star, epsilon1 })
    }

    pub fn d(&self) -> usize {
        self.u_star.d()
    }

    pub fn r1(&self) -> usize {
        self.u_star.r()
    }

    pub fn r2(&self) -> usize {
        self.v_star.r()
    }

    /// Subspace overlap `|U*^T V*|` (zero when the bases are orthogonal).
    pub fn epsilon1(&self) -> f64 {
        self.epsilon1
    }

    pub fn u_star(&self) -> &DMatrix<f64> {
        self.u_star.columns()
    }

    pub fn v_star(&self) -> &DMatrix<f64> {
        self.v_star.columns()
    }

    /// Dense invariant signal `X* = U* U*^T`.
    pub fn x_star_dense(&self) -> DMatrix<f64> {
        self.u_star.columns() * self.u_star.columns().transpose()
    }

    /// Dense total signal `X* + V* Sigma V*^T` for one environment.
    pub fn x_total_dense(&self, env: &EnvironmentCoefficients) -> Result<DMatrix<f64>> {
        Ok(self.x_star_dense() + self.spurious_matrix(env)?)
    }

    /// Dense spurious signal `X^(e) = V* Sigma^(e) V*^T`.
    pub fn spurious_matrix(&self, env: &EnvironmentCoefficients) -> Result<DMatrix<f64>> {
        if env.r2() != self.r2() {
            return Err(Error::dim(format!(
                "environment rank {} does not match model r2 = {}",
                env.r2(),
                self.r2()
            )));
        }
        if self.r2() == 0 {
            return Ok(DMatrix::zeros(self.d(), self.d()));
        }
        Ok(self.v_star.columns() * &env.sigma * self.v_star.columns().transpose())
    }

    /// Response `<x x^T, X* + X^(e)>` evaluated through the factors:
    /// `|U*^T x|^2 + (V*^T x)^T Sigma (V*^T x)`. Never forms a `d x d` matrix.
    pub fn rank_one_response(&self, env: &EnvironmentCoefficients, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d());
        let xv = nalgebra::DVectorView::from_slice(x, self.d());
        let ux = self.u_star.columns().transpose() * xv;
        let mut y = ux.norm_squared();
        if self.r2() > 0 {
            let vx = self.v_star.columns().transpose() * xv;
            y += (vx.transpose() * &env.sigma * &vx)[(0, 0)];
        }
        y
    }
}

// ---------------------------------------------------------------------------
// Environment coefficients and their law
// ---------------------------------------------------------------------------

/// One draw of the symmetric `r2 x r2` coefficient matrix `Sigma^(e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentCoefficients {
    sigma: DMatrix<f64>,
    env_id: u64,
}

impl EnvironmentCoefficients {
    pub fn new(sigma: DMatrix<f64>, env_id: u64) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::dim("Sigma must be square".to_string()));
        }
        let defect = (&sigma - sigma.transpose()).abs().max();
        if sigma.nrows() > 0 && defect > 0.0 {
            return Err(Error::dim(format!("Sigma must be stored symmetric, defect {defect:.3e}")));
        }
        Ok(Self { sigma, env_id })
    }

    pub fn zero(r2: usize, env_id: u64) -> Self {
        Self { sigma: DMatrix::zeros(r2, r2), env_id }
    }

    pub fn r2(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn env_id(&self) -> u64 {
        self.env_id
    }
}

/// The law of `Sigma^(e)`.
///
/// Only diagonal and explicit-table laws are exposed; the analysis constrains
/// off-diagonal mass but never fixes a dense law, so the library does not
/// guess one.
#[derive(Debug, Clone)]
pub enum EnvironmentDistribution {
    /// `Sigma = diag(s_1, ..., s_r2)` with `s_i` i.i.d. Unif[1-M, 1+M].
    /// `M = 0` degenerates to `Sigma = I` exactly.
    UniformDiagonal { r2: usize, m: f64 },
    /// `Sigma = +a I` or `-a I` with probability 1/2 each.
    TwoPoint { r2: usize, a: f64 },
    /// Explicit finite law: `(probability, symmetric matrix)` entries.
    CustomTable { entries: Vec<(f64, DMatrix<f64>)> },
}

impl EnvironmentDistribution {
    pub fn uniform_diagonal(r2: usize, m: f64) -> Result<Self> {
        if m < 0.0 {
            return Err(Error::config(format!("heterogeneity half-width must be >= 0, got {m}")));
        }
        Ok(Self::UniformDiagonal { r2, m })
    }

    pub fn two_point(r2: usize, a: f64) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::config(format!("two-point magnitude must be > 0, got {a}")));
        }
        Ok(Self::TwoPoint { r2, a })
    }

    pub fn custom_table(entries: Vec<(f64, DMatrix<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("custom table must be nonempty".to_string()));
        }
        let r2 = entries[0].1.nrows();
        let mut total = 0.0;
        for (p, sigma) in &entries {
            if *p < 0.0 {
                return Err(Error::config("custom table probabilities must be >= 0".to_string()));
            }
            if sigma.nrows() != r2 || sigma.ncols() != r2 {
                return Err(Error::dim("custom table matrices must share one square shape".to_string()));
            }
            if (sigma - sigma.transpose()).abs().max() > 0.0 {
                return Err(Error::dim("custom table matrices must be symmetric".to_string()));
            }
            total += *p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("custom table probabilities sum to {total}, not 1")));
        }
        Ok(Self::CustomTable { entries })
    }

    pub fn r2(&self) -> usize {
        match self {
            Self::UniformDiagonal { r2, .. } | Self::TwoPoint { r2, .. } => *r2,
            Self::CustomTable { entries } => entries[0].1.nrows(),
        }
    }

    /// Closed-form `sup_e max_i |Sigma_ii|` of the law (the M1 bound).
    pub fn sup_abs_diag(&self) -> f64 {
        match self {
            Self::UniformDiagonal { m, .. } => (1.0 - m).abs().max((1.0 + m).abs()),
            Self::TwoPoint { a, .. } => *a,
            Self::CustomTable { entries } => entries
                .iter()
                .map(|(_, s)| s.diagonal().abs().max())
                .fold(0.0, f64::max),
        }
    }

    /// Draw one `Sigma^(e)`; deterministic given the seed, which doubles as
    /// the opaque environment label.
    pub fn sample(&self, seed: u64) -> EnvironmentCoefficients {
        let mut rng = seed::stream(seed, Domain::Env, &[]);
        let sigma = self.sample_with(&mut rng);
        EnvironmentCoefficients { sigma, env_id: seed }
    }

    /// Draw using an already-positioned stream (for tight Monte-Carlo loops).
    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> DMatrix<f64> {
        match self {
            Self::UniformDiagonal { r2, m } => {
                let mut sigma = DMatrix::zeros(*r2, *r2);
                for i in 0..*r2 {
                    // gen_range misbehaves on an empty interval; M = 0 must
                    // yield exactly 1.
                    sigma[(i, i)] = if *m == 0.0 { 1.0 } else { rng.gen_range(1.0 - m..=1.0 + m) };
                }
                sigma
            }
            Self::TwoPoint { r2, a } => {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                DMatrix::identity(*r2, *r2) * (sign * a)
            }
            Self::CustomTable { entries } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (p, sigma) in entries {
                    acc += p;
                    if u < acc {
                        return sigma.clone();
                    }
                }
                entries.last().unwrap().1.clone()
            }
        }
    }
}

/// Convenience: one draw of `Sigma^(e)` from `dist`, labeled by the seed.
pub fn sample_environment(dist: &EnvironmentDistribution, seed: u64) -> EnvironmentCoefficients {
    dist.sample(seed)
}

// ---------------------------------------------------------------------------
// Measurement batches
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// Dense `d x d` matrices with i.i.d. N(0,1) entries (not symmetrized).
    Gaussian,
    /// `A_i = x_i x_i^T` for `x_i ~ N(0, I_d)`, stored as the vector `x_i`.
    RankOne,
}

#[derive(Debug, Clone)]
enum BatchData {
    /// `m * d * d` entries, sample-major, column-major within a sample.
    Dense(Vec<f64>),
    /// `m * d` entries, sample-major.
    RankOne(Vec<f64>),
}

/// `m` sensing operators with their exact responses for one environment.
#[derive(Debug, Clone)]
pub struct MeasurementBatch {
    d: usize,
    m: usize,
    env_id: u64,
    responses: Vec<f64>,
    data: BatchData,
}

impl MeasurementBatch {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn env_id(&self) -> u64 {
        self.env_id
    }

    pub fn kind(&self) -> MeasurementKind {
        match self.data {
            BatchData::Dense(_) => MeasurementKind::Gaussian,
            BatchData::RankOne(_) => MeasurementKind::RankOne,
        }
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Column-major entries of dense sample `i`.
    pub fn dense_sample(&self, i: usize) -> &[f64] {
        match &self.data {
            BatchData::Dense(entries) => {
                let sz = self.d * self.d;
                &entries[i * sz..(i + 1) * sz]
            }
            BatchData::RankOne(_) => panic!("dense_sample on a rank-one batch"),
        }
    }

    /// Measurement vector of rank-one sample `i`.
    pub fn rank_one_sample(&self, i: usize) -> &[f64] {
        match &self.data {
            BatchData::RankOne(vectors) => &vectors[i * self.d..(i + 1) * self.d],
            BatchData::Dense(_) => panic!("rank_one_sample on a dense batch"),
        }
    }

    /// Dense sample `i` as a matrix (dense batches only).
    pub fn dense_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.d, self.dense_sample(i))
    }

    /// `<A_i, M>` for symmetric or general `M` given as a dense matrix.
    pub fn inner(&self, i: usize, m: &DMatrix<f64>) -> f64 {
        match &self.data {
            BatchData::Dense(_) => linalg::dot_slices(self.dense_sample(i), m.as_slice()),
            BatchData::RankOne(_) => {
                let x = self.rank_one_sample(i);
                let xv = nalgebra::DVectorView::from_slice(x, self.d);
                (xv.transpose() * m * xv)[(0, 0)]
            }
        }
    }

    /// Test constructor from explicit dense matrices.
    pub fn from_dense_parts(
        matrices: Vec<DMatrix<f64>>,
        responses: Vec<f64>,
        env_id: u64,
    ) -> Result<Self> {
        if matrices.is_empty() || matrices.len() != responses.len() {
            return Err(Error::dim("need equally many matrices and responses, at least one".to_string()));
        }
        let d = matrices[0].nrows();
        let mut entries = Vec::with_capacity(matrices.len() * d * d);
        for a in &matrices {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::dim("all measurement matrices must be d x d".to_string()));
            }
            entries.extend_from_slice(a.as_slice());
        }
        Ok(Self { d, m: matrices.len(), env_id, responses, data: BatchData::Dense(entries) })
    }

    /// Construct from preassembled dense storage (sample-major, column-major
    /// within a sample) without copying.
    pub(crate) fn from_raw_dense(
        d: usize,
        entries: Vec<f64>,
        responses: Vec<f64>,
        env_id: u64,
    ) -> Result<Self> {
        if responses.is_empty() || entries.len() != responses.len() * d * d {
            return Err(Error::dim("dense storage must hold d*d entries per response".to_string()));
        }
        let m = responses.len();
        Ok(Self { d, m, env_id, responses, data: BatchData::Dense(entries) })
    }

    /// Test constructor from explicit measurement vectors.
    pub fn from_rank_one_parts(
        d: usize,
        vectors: Vec<f64>,
        responses: Vec<f64>,
        env_id: u64,
    ) -> Result<Self> {
        if d == 0 || vectors.len() != d * responses.len() || responses.is_empty() {
            return Err(Error::dim("vector storage must hold d entries per response".to_string()));
        }
        let m = responses.len();
        Ok(Self { d, m, env_id, responses, data: BatchData::RankOne(vectors) })
    }

    /// Replace each dense `A_i` by `(A_i + A_i^T)/2`, keeping responses
    /// (responses only see the symmetric part, so they stay exact).
    /// Test-only mode used by gradient and symmetry checks; rank-one batches
    /// are already symmetric and are returned unchanged.
    pub fn symmetrized(&self) -> Self {
        match &self.data {
            BatchData::RankOne(_) => self.clone(),
            BatchData::Dense(entries) => {
                let d = self.d;
                let mut out = entries.clone();
                for s in 0..self.m {
                    let base = s * d * d;
                    for i in 0..d {
                        for j in (i + 1)..d {
                            let a = entries[base + j * d + i];
                            let b = entries[base + i * d + j];
                            let avg = 0.5 * (a + b);
                            out[base + j * d + i] = avg;
                            out[base + i * d + j] = avg;
                        }
                    }
                }
                Self {
                    d,
                    m: self.m,
                    env_id: self.env_id,
                    responses: self.responses.clone(),
                    data: BatchData::Dense(out),
                }
            }
        }
    }
}

/// `m` dense Gaussian measurements of `X* + X^(e)`, responses exact.
pub fn generate_gaussian_batch(
    model: &GroundTruthModel,
    env: &EnvironmentCoefficients,
    m: usize,
    seed: u64,
) -> Result<MeasurementBatch> {
    if m == 0 {
        return Err(Error::config("batch size must be at least 1".to_string()));
    }
    let d = model.d();
    let x_total = model.x_total_dense(env)?;
    let sz = d * d;
    let mut entries = vec![0.0f64; m * sz];
    let mut responses = vec![0.0f64; m];

    let n_chunks = m.div_ceil(BATCH_CHUNK);
    for chunk in 0..n_chunks {
        let lo = chunk * BATCH_CHUNK;
        let hi = (lo + BATCH_CHUNK).min(m);
        let mut rng = batch_chunk_rng(seed, chunk as u64);
        for i in lo..hi {
            let slot = &mut entries[i * sz..(i + 1) * sz];
            linalg::fill_standard_normal(&mut rng, slot);
            responses[i] = linalg::dot_slices(slot, x_total.as_slice());
        }
    }

    Ok(MeasurementBatch {
        d,
        m,
        env_id: env.env_id(),
        responses,
        data: BatchData::Dense(entries),
    })
}

/// `m` rank-one measurements `x_i x_i^T`, stored as vectors; responses
/// computed through the low-rank factors of `X* + X^(e)`.
pub fn generate_rank_one_batch(
    model: &GroundTruthModel,
    env: &EnvironmentCoefficients,
    m: usize,
    seed: u64,
) -> Result<MeasurementBatch> {
    if m == 0 {
        return Err(Error::config("batch size must be at least 1".to_string()));
    }
    if env.r2() != model.r2() {
        return Err(Error::dim("environment rank does not match the model".to_string()));
    }
    let d = model.d();
    let mut vectors = vec![0.0f64; m * d];
    let mut responses = vec![0.0f64; m];

    let n_chunks = m.div_ceil(BATCH_CHUNK);
    for chunk in 0..n_chunks {
        let lo = chunk * BATCH_CHUNK;
        let hi = (lo + BATCH_CHUNK).min(m);
        let mut rng = batch_chunk_rng(seed, chunk as u64);
        for i in lo..hi {
            let slot = &mut vectors[i * d..(i + 1) * d];
            linalg::fill_standard_normal(&mut rng, slot);
            responses[i] = model.rank_one_response(env, slot);
        }
    }

    Ok(MeasurementBatch {
        d,
        m,
        env_id: env.env_id(),
        responses,
        data: BatchData::RankOne(vectors),
    })
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

/// Monte-Carlo estimates of the regularity constants of a model/law pair and
/// the step-size window they imply.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Exact subspace overlap `|U*^T V*|` from the model.
    pub epsilon1: f64,
    /// Max over sampled environments of `r2^1.5 * sum_{j != i} |Sigma_ij|`.
    pub epsilon2: f64,
    /// Sup of `|Sigma_ii|` over samples and indices.
    pub m1_hat: f64,
    /// Min over indices of `Var[Sigma_ii] / (1 + |E[Sigma_ii]|)`.
    pub m2_hat: f64,
    /// `(24 / m2_hat, 1 / (64 m1_hat))` — the admissible step-size interval.
    pub eta_window: (f64, f64),
    pub window_nonempty: bool,
    pub n_samples: usize,
}

/// Estimate the regularity constants over `n_samples` environment draws.
///
/// The report always carries the estimates; nothing is thrown when the
/// conditions fail to hold.
pub fn check_assumptions(
    model: &GroundTruthModel,
    dist: &EnvironmentDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if n_samples < 100 {
        return Err(Error::config(format!("need at least 100 samples, got {n_samples}")));
    }
    if dist.r2() != model.r2() {
        return Err(Error::dim("distribution rank does not match the model".to_string()));
    }
    let r2 = dist.r2();
    let mut rng = seed::stream(seed, Domain::Trial, &[]);

    let mut m1_hat: f64 = 0.0;
    let mut eps2: f64 = 0.0;
    let mut sums = vec![0.0f64; r2];
    let mut sq_sums = vec![0.0f64; r2];
    let r2_pow = (r2 as f64).powf(1.5);

    // For an explicit table, the per-entry diagonal and weighted off-diagonal
    // sums are fixed; precompute them so the sampling loop stays allocation
    // free even at hundreds of millions of draws.
    let table: Option<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = match dist {
        EnvironmentDistribution::CustomTable { entries } => {
            let mut cum = Vec::with_capacity(entries.len());
            let mut acc = 0.0;
            let mut diags = Vec::with_capacity(entries.len());
            let mut offs = Vec::with_capacity(entries.len());
            for (p, sigma) in entries {
                acc += p;
                cum.push(acc);
                diags.push(sigma.diagonal().iter().cloned().collect::<Vec<f64>>());
                let mut worst: f64 = 0.0;
                for i in 0..r2 {
                    let off: f64 =
                        (0..r2).filter(|&j| j != i).map(|j| sigma[(i, j)].abs()).sum();
                    worst = worst.max(r2_pow * off);
                }
                offs.push(worst);
            }
            Some((cum, diags, offs))
        }
        _ => None,
    };

    let mut diag = vec![0.0f64; r2];
    for _ in 0..n_samples {
        match dist {
            EnvironmentDistribution::UniformDiagonal { m, .. } => {
                for v in diag.iter_mut() {
                    *v = if *m == 0.0 { 1.0 } else { rng.gen_range(1.0 - m..=1.0 + m) };
                }
            }
            EnvironmentDistribution::TwoPoint { a, .. } => {
                let s = if rng.gen::<bool>() { *a } else { -*a };
                for v in diag.iter_mut() {
                    *v = s;
                }
            }
            EnvironmentDistribution::CustomTable { .. } => {
                let (cum, diags, offs) = table.as_ref().unwrap();
                let u: f64 = rng.gen();
                let ix = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
                diag.copy_from_slice(&diags[ix]);
                eps2 = eps2.max(offs[ix]);
            }
        }
        for i in 0..r2 {
            let s = diag[i];
            m1_hat = m1_hat.max(s.abs());
            sums[i] += s;
            sq_sums[i] += s * s;
        }
    }

    let n = n_samples as f64;
    let mut m2_hat = f64::INFINITY;
    for i in 0..r2 {
        let mean = sums[i] / n;
        let var = (sq_sums[i] - n * mean * mean) / (n - 1.0);
        m2_hat = m2_hat.min(var.max(0.0) / (1.0 + mean.abs()));
    }
    if r2 == 0 {
        m2_hat = 0.0;
    }

    let lower = 24.0 / m2_hat; // +inf when m2_hat = 0
    let upper = if m1_hat > 0.0 { 1.0 / (64.0 * m1_hat) } else { f64::INFINITY };
    Ok(AssumptionReport {
        epsilon1: model.epsilon1(),
        epsilon2: eps2,
        m1_hat,
        m2_hat,
        eta_window: (lower, upper),
        window_nonempty: lower < upper,
        n_samples,
    })
}
