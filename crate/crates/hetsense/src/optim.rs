//! The three training procedures.
//!
//! * Heterogeneous-batch SGD: at each step a fresh environment is drawn, a
//!   fresh batch of `m` measurements is generated from it, and one update
//!   `U <- U - (eta/m) sum_i (<A_i, U U^T> - y_i) A_i U` is applied. Batches
//!   are never reused across steps.
//! * Pooled full-batch GD: one dataset with environments drawn uniformly per
//!   sample, the same batch reused every step.
//! * The quadratic-activation variant: rank-one measurements, a truncation
//!   indicator `1{|U^T x|^2 <= R}` inside the gradient, and a shrinkage
//!   rescaling `U <- U_tilde / (1 - eta (|U|_F^2 - tau))` after each step.
//!
//! The update direction is the residual-weighted measurement contraction
//! written above; for symmetric measurements it is proportional to the
//! gradient of the half-mean-square loss (the constant is absorbed into
//! `eta`), and the gradient tests pin that proportionality exactly.
//!
//! A single trajectory is sequential; batch work inside a step is chunked
//! with per-chunk RNG streams and reduced in chunk order, so thread count
//! never changes results (serial and parallel runs are bit-identical).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::{self, MetricRecord};
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed::{self, Domain};
use crate::sensing::{
    batch_chunk_rng, generate_gaussian_batch, EnvironmentCoefficients, EnvironmentDistribution,
    GroundTruthModel, MeasurementBatch, MeasurementKind, BATCH_CHUNK,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// `U` is `d x d`, initialized as `alpha I`.
    OverparamFull,
    /// `U` is `d x (r1+r2)`, initialized with i.i.d. `N(0, alpha^2/sqrt(d))`.
    Exact,
}

/// How the truncation radius of the rank-one gradient is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusMode {
    /// `R = ln(1/delta_hat)` with `delta_hat` estimated on a Gaussian probe
    /// batch of the same `(d, m)` at rank `2 (r1+r2)`.
    LogInvDelta,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConfig {
    pub radius: RadiusMode,
}

/// How the shrinkage target `tau` is chosen per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    /// Exact operator norm `|X* + X^(e_t)|` from the ground truth.
    Oracle,
    /// `sqrt(sum_i y_i^2 / (3m))` — a moment heuristic, not exact.
    MomentEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShrinkageConfig {
    pub tau: TauMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub alpha: f64,
    /// `None`: `ceil(10 ln(1/alpha) / eta)` steps.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub parameterization: Parameterization,
    pub measurement: MeasurementKind,
    pub truncation: Option<TruncationConfig>,
    pub shrinkage: Option<ShrinkageConfig>,
    /// `None`: `10 sqrt(r1 (1 + M1))` with `M1` the sup of `|Sigma_ii|`.
    pub divergence_threshold: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(eta: f64, alpha: f64, batch_size: usize) -> Self {
        Self {
            eta,
            alpha,
            steps: None,
            batch_size,
            parameterization: Parameterization::OverparamFull,
            measurement: MeasurementKind::Gaussian,
            truncation: None,
            shrinkage: None,
            divergence_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("step size must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("initialization scale must be > 0, got {}", self.alpha)));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be at least 1".to_string()));
        }
        if self.steps == Some(0) && self.eta == 0.0 {
            // zero-step, zero-eta trajectories are fine; nothing to check
        }
        if self.measurement != MeasurementKind::RankOne
            && (self.truncation.is_some() || self.shrinkage.is_some())
        {
            return Err(Error::config(
                "truncation and shrinkage are defined only for rank-one measurements".to_string(),
            ));
        }
        Ok(())
    }

    pub fn resolved_steps(&self) -> usize {
        match self.steps {
            Some(t) => t,
            None => ((10.0 * (1.0 / self.alpha).ln()) / self.eta).ceil() as usize,
        }
    }

    pub fn resolved_divergence_threshold(&self, r1: usize, m1_sup: f64) -> f64 {
        self.divergence_threshold
            .unwrap_or_else(|| 10.0 * ((r1 as f64) * (1.0 + m1_sup)).sqrt())
    }

    fn canonical_string(&self) -> String {
        format!(
            "eta={:e};alpha={:e};steps={:?};m={};param={:?};meas={:?};trunc={:?};shrink={:?};divthresh={:?}",
            self.eta,
            self.alpha,
            self.steps,
            self.batch_size,
            self.parameterization,
            self.measurement,
            self.truncation,
            self.shrinkage,
            self.divergence_threshold,
        )
    }
}

// ---------------------------------------------------------------------------
// Iterate state and trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub u: DMatrix<f64>,
    pub step: usize,
    /// Number of batch sub-streams consumed so far (the stream position of
    /// the counter-based splitter).
    pub rng_cursor: u64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// One record per step, plus the final iterate (length `steps + 1`).
    pub records: Vec<MetricRecord>,
    pub final_state: IterateState,
    pub config_digest: String,
}

impl Trajectory {
    pub fn final_record(&self) -> &MetricRecord {
        self.records.last().expect("trajectory always has a step-0 record")
    }
}

fn digest(model: &GroundTruthModel, config: &OptimizerConfig, law: &str, master_seed: u64) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(format!(
        "d={};r1={};r2={};eps1={:e};{};law={law};seed={master_seed}",
        model.d(),
        model.r1(),
        model.r2(),
        model.epsilon1(),
        config.canonical_string(),
    ));
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Initial iterate: `alpha I_d` for the full over-parameterization,
/// `d x (r1+r2)` i.i.d. `N(0, alpha^2 / sqrt(d))` for exact parameterization.
pub fn init_iterate(
    config: &OptimizerConfig,
    model: &GroundTruthModel,
    master_seed: u64,
) -> Result<IterateState> {
    config.validate()?;
    let d = model.d();
    let u = match config.parameterization {
        Parameterization::OverparamFull => DMatrix::identity(d, d) * config.alpha,
        Parameterization::Exact => {
            let k = model.r1() + model.r2();
            let std = config.alpha / (d as f64).powf(0.25);
            let mut rng = seed::stream(master_seed, Domain::Init, &[]);
            linalg::standard_normal_matrix(&mut rng, d, k) * std
        }
    };
    Ok(IterateState { u, step: 0, rng_cursor: 0 })
}

// ---------------------------------------------------------------------------
// Loss and update direction
// ---------------------------------------------------------------------------

/// Per-step pass output: the unscaled update direction `sum_i r_i A_i U`
/// (with the truncation indicator applied for rank-one batches), the plain
/// residual sum `sum_i r_i^2`, and `sum_i y_i^2`.
struct PassResult {
    direction: DMatrix<f64>,
    residual_sq_sum: f64,
    response_sq_sum: f64,
}

/// Source of measurement data for one pass: either a stored batch or a
/// chunk-seeded stream that generates each sample on the fly. Both walk the
/// identical per-sample arithmetic in the identical order, so they produce
/// bit-identical passes.
enum PassSource<'a> {
    Stored(&'a MeasurementBatch),
    StreamedDense { x_total: &'a DMatrix<f64>, m: usize, batch_seed: u64 },
    StreamedRankOne {
        model: &'a GroundTruthModel,
        env: &'a EnvironmentCoefficients,
        m: usize,
        batch_seed: u64,
    },
}

impl<'a> PassSource<'a> {
    fn len(&self) -> usize {
        match self {
            PassSource::Stored(b) => b.len(),
            PassSource::StreamedDense { m, .. } | PassSource::StreamedRankOne { m, .. } => *m,
        }
    }

    fn is_rank_one(&self) -> bool {
        match self {
            PassSource::Stored(b) => b.kind() == MeasurementKind::RankOne,
            PassSource::StreamedDense { .. } => false,
            PassSource::StreamedRankOne { .. } => true,
        }
    }
}

/// One dense chunk: returns `(sum_i r_i A_i, sum r^2, sum y^2)` over the
/// chunk's samples.
fn dense_chunk(
    source: &PassSource<'_>,
    p: &DMatrix<f64>,
    d: usize,
    lo: usize,
    hi: usize,
    chunk: u64,
) -> (DMatrix<f64>, f64, f64) {
    let sz = d * d;
    let mut s = DMatrix::zeros(d, d);
    let s_slice = s.as_mut_slice();
    let mut r2_sum = 0.0;
    let mut y2_sum = 0.0;
    match source {
        PassSource::Stored(batch) => {
            for i in lo..hi {
                let a = batch.dense_sample(i);
                let y = batch.responses()[i];
                let r = linalg::dot_slices(a, p.as_slice()) - y;
                linalg::axpy_slices(s_slice, r, a);
                r2_sum += r * r;
                y2_sum += y * y;
            }
        }
        PassSource::StreamedDense { x_total, batch_seed, .. } => {
            let mut rng = batch_chunk_rng(*batch_seed, chunk);
            let mut scratch = vec![0.0f64; sz];
            for _ in lo..hi {
                linalg::fill_standard_normal(&mut rng, &mut scratch);
                // lane-identical to the stored path's dot against the
                // recorded response
                let (p_dot, y) = linalg::dot2_slices(&scratch, p.as_slice(), x_total.as_slice());
                let r = p_dot - y;
                linalg::axpy_slices(s_slice, r, &scratch);
                r2_sum += r * r;
                y2_sum += y * y;
            }
        }
        PassSource::StreamedRankOne { .. } => unreachable!("rank-one goes through rank_one_chunk"),
    }
    (s, r2_sum, y2_sum)
}

/// One rank-one chunk: returns `(sum_i 1_i r_i x_i w_i^T, sum r^2, sum y^2)`
/// with `w_i = U^T x_i` and the indicator `1_i = 1{|w_i|^2 <= radius}`.
fn rank_one_chunk(
    source: &PassSource<'_>,
    u: &DMatrix<f64>,
    radius: f64,
    d: usize,
    lo: usize,
    hi: usize,
    chunk: u64,
) -> (DMatrix<f64>, f64, f64) {
    let k = u.ncols();
    let u_slice = u.as_slice();
    let mut g = DMatrix::zeros(d, k);
    let g_slice = g.as_mut_slice();
    let mut w = vec![0.0f64; k];
    let mut r2_sum = 0.0;
    let mut y2_sum = 0.0;

    let mut body = |x: &[f64], y: f64| {
        let mut yhat = 0.0;
        for (j, wj) in w.iter_mut().enumerate() {
            let v = linalg::dot_slices(&u_slice[j * d..(j + 1) * d], x);
            *wj = v;
            yhat += v * v;
        }
        let r = yhat - y;
        r2_sum += r * r;
        y2_sum += y * y;
        if yhat <= radius {
            for j in 0..k {
                linalg::axpy_slices(&mut g_slice[j * d..(j + 1) * d], r * w[j], x);
            }
        }
    };

    match source {
        PassSource::Stored(batch) => {
            for i in lo..hi {
                body(batch.rank_one_sample(i), batch.responses()[i]);
            }
        }
        PassSource::StreamedRankOne { model, env, batch_seed, .. } => {
            let mut rng = batch_chunk_rng(*batch_seed, chunk);
            let mut x = vec![0.0f64; d];
            for _ in lo..hi {
                linalg::fill_standard_normal(&mut rng, &mut x);
                let y = model.rank_one_response(env, &x);
                body(&x, y);
            }
        }
        PassSource::StreamedDense { .. } => unreachable!("dense goes through dense_chunk"),
    }
    (g, r2_sum, y2_sum)
}

/// Run one pass over the source at iterate `u`. Chunks may execute in
/// parallel; the reduction is in fixed chunk order either way.
fn run_pass(source: &PassSource<'_>, u: &DMatrix<f64>, radius: f64) -> PassResult {
    let m = source.len();
    let d = u.nrows();
    let n_chunks = m.div_ceil(BATCH_CHUNK);
    let rank_one = source.is_rank_one();

    // The dense path contracts against P = U U^T once per pass.
    let p = if rank_one { DMatrix::zeros(0, 0) } else { u * u.transpose() };

    let partials: Vec<(DMatrix<f64>, f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * BATCH_CHUNK;
            let hi = (lo + BATCH_CHUNK).min(m);
            if rank_one {
                rank_one_chunk(source, u, radius, d, lo, hi, c as u64)
            } else {
                dense_chunk(source, &p, d, lo, hi, c as u64)
            }
        })
        .collect();

    let k = u.ncols();
    let mut acc = if rank_one { DMatrix::zeros(d, k) } else { DMatrix::zeros(d, d) };
    let mut r2_sum = 0.0;
    let mut y2_sum = 0.0;
    for (part, r2, y2) in partials {
        acc += part;
        r2_sum += r2;
        y2_sum += y2;
    }

    let direction = if rank_one { acc } else { acc * u };
    PassResult { direction, residual_sq_sum: r2_sum, response_sq_sum: y2_sum }
}

fn check_dims(batch: &MeasurementBatch, u: &DMatrix<f64>) -> Result<()> {
    if batch.d() != u.nrows() {
        return Err(Error::dim(format!(
            "batch dimension {} does not match iterate rows {}",
            batch.d(),
            u.nrows()
        )));
    }
    Ok(())
}

/// Least-squares loss `(1/2m) sum_i (y_i - <A_i, U U^T>)^2`.
pub fn least_squares_loss(batch: &MeasurementBatch, u: &DMatrix<f64>) -> Result<f64> {
    check_dims(batch, u)?;
    let pass = run_pass(&PassSource::Stored(batch), u, f64::INFINITY);
    Ok(pass.residual_sq_sum / (2.0 * batch.len() as f64))
}

/// Truncated least-squares loss: residuals of samples with
/// `|U^T x_i|^2 > radius` are dropped. Rank-one batches only.
pub fn truncated_least_squares_loss(
    batch: &MeasurementBatch,
    u: &DMatrix<f64>,
    radius: f64,
) -> Result<f64> {
    check_dims(batch, u)?;
    if batch.kind() != MeasurementKind::RankOne {
        return Err(Error::config("truncation is defined only for rank-one batches".to_string()));
    }
    let m = batch.len() as f64;
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let x = batch.rank_one_sample(i);
        let w = u.transpose() * nalgebra::DVectorView::from_slice(x, u.nrows());
        let yhat = w.norm_squared();
        if yhat <= radius {
            let r = yhat - batch.responses()[i];
            sum += r * r;
        }
    }
    Ok(sum / (2.0 * m))
}

/// Update direction `(1/m) sum_i (<A_i, U U^T> - y_i) A_i U`, with `A_i`
/// exactly as stored (not symmetrized). Rank-one batches never materialize
/// the `d x d` matrices: the contraction runs through
/// `(1/m) sum_i (|U^T x_i|^2 - y_i) x_i (x_i^T U)`.
pub fn loss_gradient(batch: &MeasurementBatch, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(batch, u)?;
    let pass = run_pass(&PassSource::Stored(batch), u, f64::INFINITY);
    Ok(pass.direction / batch.len() as f64)
}

/// Rank-one update direction with the truncation indicator
/// `1{|U^T x_i|^2 <= radius}` applied per sample.
pub fn loss_gradient_truncated(
    batch: &MeasurementBatch,
    u: &DMatrix<f64>,
    radius: f64,
) -> Result<DMatrix<f64>> {
    check_dims(batch, u)?;
    if batch.kind() != MeasurementKind::RankOne {
        return Err(Error::config("truncation is defined only for rank-one batches".to_string()));
    }
    let pass = run_pass(&PassSource::Stored(batch), u, radius);
    Ok(pass.direction / batch.len() as f64)
}

/// One SGD update on a stored batch. Raises a divergence error (without a
/// partial trajectory) when the new iterate's operator norm crosses the
/// threshold or stops being finite.
///
/// Scaling order is `direction * (eta/m)`, identical to the online runners,
/// so stepping through stored batches reproduces a streamed run bit for bit.
pub fn sgd_step(
    state: &IterateState,
    batch: &MeasurementBatch,
    eta: f64,
    divergence_threshold: f64,
) -> Result<IterateState> {
    check_dims(batch, &state.u)?;
    let pass = run_pass(&PassSource::Stored(batch), &state.u, f64::INFINITY);
    let u = &state.u - &pass.direction * (eta / batch.len() as f64);
    let norm = linalg::operator_norm_estimate(&u);
    if !norm.is_finite() || norm > divergence_threshold {
        return Err(Error::Divergence {
            step: state.step,
            norm,
            threshold: divergence_threshold,
            partial: None,
        });
    }
    Ok(IterateState { u, step: state.step + 1, rng_cursor: state.rng_cursor + 1 })
}

// ---------------------------------------------------------------------------
// Online runners
// ---------------------------------------------------------------------------

/// Resolve the truncation radius once per run.
fn resolve_radius(
    config: &OptimizerConfig,
    model: &GroundTruthModel,
    master_seed: u64,
) -> Result<f64> {
    let Some(trunc) = &config.truncation else {
        return Ok(f64::INFINITY);
    };
    match trunc.radius {
        RadiusMode::Fixed(r) => {
            if !(r > 0.0) {
                return Err(Error::config(format!("truncation radius must be > 0, got {r}")));
            }
            Ok(r)
        }
        RadiusMode::LogInvDelta => {
            // delta of the rank-one ensemble is measured through a Gaussian
            // probe batch of the same (d, m) at rank 2(r1+r2).
            let env = EnvironmentCoefficients::zero(model.r2(), 0);
            let probe_seed = seed::subseed(master_seed, Domain::RipTrial, &[u64::MAX]);
            let probe = generate_gaussian_batch(model, &env, config.batch_size, probe_seed)?;
            let est = crate::rip::estimate_rip_delta(
                &probe,
                2 * (model.r1() + model.r2()),
                32,
                seed::subseed(master_seed, Domain::RipTrial, &[u64::MAX - 1]),
            )?;
            if est.delta_hat >= 1.0 {
                return Err(Error::config(format!(
                    "estimated delta {:.3} >= 1; log(1/delta) radius is undefined (fix the radius instead)",
                    est.delta_hat
                )));
            }
            Ok((1.0 / est.delta_hat).ln())
        }
    }
}

fn shrinkage_tau(
    mode: TauMode,
    model: &GroundTruthModel,
    env: &EnvironmentCoefficients,
    pass: &PassResult,
    m: usize,
) -> Result<f64> {
    match mode {
        TauMode::Oracle => {
            let x_total = model.x_total_dense(env)?;
            let eig = nalgebra::SymmetricEigen::new(x_total);
            Ok(eig.eigenvalues.abs().max())
        }
        TauMode::MomentEstimate => Ok((pass.response_sq_sum / (3.0 * m as f64)).sqrt()),
    }
}

struct OnlineRunner<'a> {
    model: &'a GroundTruthModel,
    dist: &'a EnvironmentDistribution,
    config: &'a OptimizerConfig,
    master_seed: u64,
    radius: f64,
    threshold: f64,
}

impl<'a> OnlineRunner<'a> {
    fn run(&self) -> Result<Trajectory> {
        let t_max = self.config.resolved_steps();
        let eta = self.config.eta;
        let m = self.config.batch_size;
        let config_digest = digest(
            self.model,
            self.config,
            &format!("{:?}", self.dist),
            self.master_seed,
        );

        let mut state = init_iterate(self.config, self.model, self.master_seed)?;
        let mut records = Vec::with_capacity(t_max + 1);

        for t in 0..t_max {
            let env = self.dist.sample(seed::subseed(self.master_seed, Domain::Env, &[t as u64]));
            let batch_seed = seed::subseed(self.master_seed, Domain::Batch, &[t as u64]);
            let pass = match self.config.measurement {
                MeasurementKind::Gaussian => {
                    let x_total = self.model.x_total_dense(&env)?;
                    run_pass(
                        &PassSource::StreamedDense { x_total: &x_total, m, batch_seed },
                        &state.u,
                        self.radius,
                    )
                }
                MeasurementKind::RankOne => run_pass(
                    &PassSource::StreamedRankOne { model: self.model, env: &env, m, batch_seed },
                    &state.u,
                    self.radius,
                ),
            };

            let loss = pass.residual_sq_sum / (2.0 * m as f64);
            records.push(dynamics::metric_record(&state.u, self.model, t, env.env_id(), loss));

            let mut u_next = &state.u - &pass.direction * (eta / m as f64);
            if let Some(shrink) = &self.config.shrinkage {
                let tau = shrinkage_tau(shrink.tau, self.model, &env, &pass, m)?;
                let denom = 1.0 - eta * (state.u.norm_squared() - tau);
                if !denom.is_finite() || denom.abs() < 1e-9 {
                    return Err(Error::Divergence {
                        step: t,
                        norm: f64::INFINITY,
                        threshold: self.threshold,
                        partial: Some(Box::new(Trajectory {
                            records,
                            final_state: state,
                            config_digest,
                        })),
                    });
                }
                u_next /= denom;
            }

            let norm = linalg::operator_norm_estimate(&u_next);
            if !norm.is_finite() || norm > self.threshold {
                let final_state =
                    IterateState { u: u_next, step: t + 1, rng_cursor: state.rng_cursor + 1 };
                return Err(Error::Divergence {
                    step: t,
                    norm,
                    threshold: self.threshold,
                    partial: Some(Box::new(Trajectory {
                        records,
                        final_state,
                        config_digest,
                    })),
                });
            }
            state = IterateState { u: u_next, step: t + 1, rng_cursor: state.rng_cursor + 1 };
        }

        records.push(dynamics::metric_record(&state.u, self.model, t_max, 0, f64::NAN));
        Ok(Trajectory { records, final_state: state, config_digest })
    }
}

/// Heterogeneous-batch SGD: fresh environment and fresh batch every step.
pub fn run_hetero_sgd(
    model: &GroundTruthModel,
    dist: &EnvironmentDistribution,
    config: &OptimizerConfig,
    master_seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    if dist.r2() != model.r2() {
        return Err(Error::dim("distribution rank does not match the model".to_string()));
    }
    let radius = resolve_radius(config, model, master_seed)?;
    let threshold = config.resolved_divergence_threshold(model.r1(), dist.sup_abs_diag());
    OnlineRunner { model, dist, config, master_seed, radius, threshold }.run()
}

/// The quadratic-activation variant: rank-one measurements with truncation
/// and shrinkage both enabled.
pub fn run_quadratic_sgd(
    model: &GroundTruthModel,
    dist: &EnvironmentDistribution,
    config: &OptimizerConfig,
    master_seed: u64,
) -> Result<Trajectory> {
    if config.measurement != MeasurementKind::RankOne {
        return Err(Error::config("the quadratic variant requires rank-one measurements".to_string()));
    }
    if config.truncation.is_none() {
        return Err(Error::config("the quadratic variant requires truncation".to_string()));
    }
    if config.shrinkage.is_none() {
        return Err(Error::config("the quadratic variant requires shrinkage".to_string()));
    }
    run_hetero_sgd(model, dist, config, master_seed)
}

// ---------------------------------------------------------------------------
// Pooled gradient descent
// ---------------------------------------------------------------------------

/// Full-batch GD on one pooled dataset with environments drawn uniformly per
/// sample. The batch is built once and reused every step.
pub fn run_pooled_gd(
    model: &GroundTruthModel,
    envs: &[EnvironmentCoefficients],
    config: &OptimizerConfig,
    master_seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    if envs.is_empty() {
        return Err(Error::config("pooled GD needs at least one environment".to_string()));
    }
    if config.measurement != MeasurementKind::Gaussian {
        return Err(Error::config("pooled GD is defined for Gaussian measurements".to_string()));
    }
    for e in envs {
        if e.r2() != model.r2() {
            return Err(Error::dim("environment rank does not match the model".to_string()));
        }
    }

    let m1_sup = envs
        .iter()
        .map(|e| e.sigma().diagonal().abs().max())
        .fold(0.0, f64::max);
    let threshold = config.resolved_divergence_threshold(model.r1(), m1_sup);
    let law = format!("pooled({} envs)", envs.len());
    let config_digest = digest(model, config, &law, master_seed);

    let batch = build_pooled_batch(model, envs, config.batch_size, master_seed)?;
    let t_max = config.resolved_steps();
    let eta = config.eta;
    let m = batch.len() as f64;

    let mut state = init_iterate(config, model, master_seed)?;
    let mut records = Vec::with_capacity(t_max + 1);

    for t in 0..t_max {
        let pass = run_pass(&PassSource::Stored(&batch), &state.u, f64::INFINITY);
        let loss = pass.residual_sq_sum / (2.0 * m);
        records.push(dynamics::metric_record(&state.u, model, t, 0, loss));

        let u_next = &state.u - &pass.direction * (eta / m);
        let norm = linalg::operator_norm_estimate(&u_next);
        if !norm.is_finite() || norm > threshold {
            let final_state =
                IterateState { u: u_next, step: t + 1, rng_cursor: state.rng_cursor };
            return Err(Error::Divergence {
                step: t,
                norm,
                threshold,
                partial: Some(Box::new(Trajectory { records, final_state, config_digest })),
            });
        }
        state = IterateState { u: u_next, step: t + 1, rng_cursor: state.rng_cursor };
    }

    let final_loss = least_squares_loss(&batch, &state.u)?;
    records.push(dynamics::metric_record(&state.u, model, t_max, 0, final_loss));
    Ok(Trajectory { records, final_state: state, config_digest })
}

/// Pooled dataset: `n` Gaussian measurements, each responding to
/// `X* + X^(e_i)` with `e_i` uniform over the given environment list.
pub fn build_pooled_batch(
    model: &GroundTruthModel,
    envs: &[EnvironmentCoefficients],
    n: usize,
    master_seed: u64,
) -> Result<MeasurementBatch> {
    use rand::Rng;
    if n == 0 {
        return Err(Error::config("pooled batch size must be at least 1".to_string()));
    }
    let d = model.d();
    let totals: Vec<DMatrix<f64>> =
        envs.iter().map(|e| model.x_total_dense(e)).collect::<Result<_>>()?;

    let mut env_ix = vec![0usize; n];
    let mut rng = seed::stream(master_seed, Domain::PooledEnv, &[]);
    for ix in env_ix.iter_mut() {
        *ix = rng.gen_range(0..envs.len());
    }

    let batch_seed = seed::subseed(master_seed, Domain::Batch, &[0]);
    let sz = d * d;
    let mut entries = vec![0.0f64; n * sz];
    let mut responses = vec![0.0f64; n];
    let n_chunks = n.div_ceil(BATCH_CHUNK);
    for chunk in 0..n_chunks {
        let lo = chunk * BATCH_CHUNK;
        let hi = (lo + BATCH_CHUNK).min(n);
        let mut crng = batch_chunk_rng(batch_seed, chunk as u64);
        for i in lo..hi {
            let slot = &mut entries[i * sz..(i + 1) * sz];
            linalg::fill_standard_normal(&mut crng, slot);
            responses[i] = linalg::dot_slices(slot, totals[env_ix[i]].as_slice());
        }
    }
    MeasurementBatch::from_raw_dense(d, entries, responses, 0)
}
