//! Symmetric eigensolvers and the spectral pipeline built on them:
//! eigenvalue-gap dimension detection, latent-space embedding, sign
//! clustering, and the two-community hypothesis test.

use crate::calibrate::{
    calibrate_tau, default_tolerance, mixture_edge_probability, DEFAULT_CALIBRATION_SAMPLES,
};
use crate::error::{Error, Result};
use crate::gegenbauer::lambda1_closed_form;
use crate::model::{calibration_stream, connect_graph, sample_latents, GraphSample, ModelParams};
use crate::rng::Stream;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest n routed to the dense eigendecomposition, which doubles as the
/// oracle for the iterative path.
pub const DENSE_EIGEN_LIMIT: usize = 512;

/// Residual certificate level, relative to the Frobenius norm.
pub const RESIDUAL_CERT_REL: f64 = 1e-8;

/// Default gap-rule sensitivity.
pub const DEFAULT_GAP_GAMMA: f64 = 8.0;

const ITERATIVE_START_KEY: u64 = 0x7C3A_11CE_0001_D0D0;

/// Symmetric linear operator exposed through matrix-vector products.
///
/// `apply` must be deterministic at any thread count; implementations
/// parallelize over rows or fixed blocks with a fixed reduction order.
pub trait SymmetricOp: Sync {
    fn dim(&self) -> usize;
    /// y = A x.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Exact Frobenius norm, used to scale residual tolerances.
    fn frobenius_norm(&self) -> f64;
}

impl SymmetricOp for GraphSample {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }

    fn frobenius_norm(&self) -> f64 {
        GraphSample::frobenius_norm(self)
    }
}

/// Explicit symmetric matrix. Construction rejects any asymmetry.
#[derive(Debug, Clone)]
pub struct DenseSym {
    n: usize,
    data: Vec<f64>,
}

impl DenseSym {
    /// Row-major n x n input; any mismatch between (i, j) and (j, i) is an
    /// error carrying the largest deviation.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} x {n} values, got {}",
                data.len()
            )));
        }
        let mut max_dev = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dev = (data[i * n + j] - data[j * n + i]).abs();
                if dev > max_dev {
                    max_dev = dev;
                }
            }
        }
        if max_dev > 0.0 {
            return Err(Error::NotSymmetric(max_dev));
        }
        Ok(DenseSym { n, data })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

impl SymmetricOp for DenseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *out = acc;
        });
    }

    fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// scale * R Rᵀ for a row-major n x d factor R, applied without forming
/// the n x n product.
pub struct GramOp<'a> {
    pub rows: &'a [f64],
    pub n: usize,
    pub d: usize,
    pub scale: f64,
}

impl GramOp<'_> {
    /// t = Rᵀ x, accumulated over fixed row blocks so the result is
    /// independent of thread count.
    fn factor_t_apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        let partials: Vec<Vec<f64>> = self
            .rows
            .par_chunks(1024 * d)
            .zip(x.par_chunks(1024))
            .map(|(rows, xs)| {
                let mut acc = vec![0.0; d];
                for (row, &xi) in rows.chunks(d).zip(xs) {
                    for (slot, r) in acc.iter_mut().zip(row) {
                        *slot += xi * r;
                    }
                }
                acc
            })
            .collect();
        let mut t = vec![0.0; d];
        for part in partials {
            for (slot, v) in t.iter_mut().zip(part) {
                *slot += v;
            }
        }
        t
    }
}

impl SymmetricOp for GramOp<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.d;
        let t = self.factor_t_apply(x);
        let scale = self.scale;
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let row = &self.rows[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for (r, tv) in row.iter().zip(&t) {
                acc += r * tv;
            }
            *out = scale * acc;
        });
    }

    fn frobenius_norm(&self) -> f64 {
        // ||scale R Rᵀ||_F = |scale| ||Rᵀ R||_F, a d x d computation.
        let d = self.d;
        let mut gram = vec![0.0; d * d];
        for row in self.rows.chunks(d) {
            for a in 0..d {
                for b in 0..d {
                    gram[a * d + b] += row[a] * row[b];
                }
            }
        }
        self.scale.abs() * gram.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Top eigenpairs of a symmetric operator, eigenvalues non-increasing.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Row-major m x n unit eigenvectors, row i paired with eigenvalues[i].
    pub vectors: Vec<f64>,
    /// Certified residuals ||A w_i - eta_i w_i||.
    pub residuals: Vec<f64>,
    pub requested: usize,
    pub n: usize,
}

impl SpectralDecomposition {
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (slot, v) in y.iter_mut().zip(x) {
        *slot += alpha * v;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Make the largest-magnitude coordinate positive (ties break to the
/// lowest index), so eigenvector orientation is reproducible.
fn canonical_sign(w: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &v) in w.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if w[best] < 0.0 {
        for v in w.iter_mut() {
            *v = -*v;
        }
    }
}

fn residual_norm(op: &dyn SymmetricOp, w: &[f64], eta: f64, scratch: &mut [f64]) -> f64 {
    op.apply(w, scratch);
    scratch
        .iter()
        .zip(w)
        .map(|(aw, wi)| {
            let r = aw - eta * wi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Materialize the operator row by row; for a symmetric operator the image
/// of e_j is row j, so this also cross-checks the implicit implementation.
pub(crate) fn materialize(op: &dyn SymmetricOp) -> Vec<f64> {
    let n = op.dim();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let mut y = vec![0.0; n];
        op.apply(&e, &mut y);
        row.copy_from_slice(&y);
    });
    out
}

/// Top-m eigenpairs by algebraic value. Dispatches to the dense path for
/// n <= DENSE_EIGEN_LIMIT and to the iterative path above it.
pub fn eigentop(op: &dyn SymmetricOp, m: usize) -> Result<SpectralDecomposition> {
    if op.dim() <= DENSE_EIGEN_LIMIT {
        eigentop_dense(op, m)
    } else {
        eigentop_iterative(op, m)
    }
}

fn validate_request(op: &dyn SymmetricOp, m: usize) -> Result<()> {
    let n = op.dim();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "requested {m} eigenpairs from an operator of dimension {n}"
        )));
    }
    Ok(())
}

fn trivial_decomposition(n: usize, m: usize) -> SpectralDecomposition {
    let mut vectors = vec![0.0; m * n];
    for i in 0..m {
        vectors[i * n + i] = 1.0;
    }
    SpectralDecomposition {
        eigenvalues: vec![0.0; m],
        vectors,
        residuals: vec![0.0; m],
        requested: m,
        n,
    }
}

/// Dense full decomposition, truncated to the top m pairs. Serves as the
/// oracle for the iterative path in tests.
pub fn eigentop_dense(op: &dyn SymmetricOp, m: usize) -> Result<SpectralDecomposition> {
    validate_request(op, m)?;
    let n = op.dim();
    let data = materialize(op);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &data));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut eigenvalues = Vec::with_capacity(m);
    let mut vectors = vec![0.0; m * n];
    let mut residuals = Vec::with_capacity(m);
    let mut scratch = vec![0.0; n];
    for (slot, &idx) in order.iter().take(m).enumerate() {
        let eta = eig.eigenvalues[idx];
        let row = &mut vectors[slot * n..(slot + 1) * n];
        for (j, v) in row.iter_mut().enumerate() {
            *v = eig.eigenvectors[(j, idx)];
        }
        canonical_sign(row);
        eigenvalues.push(eta);
        residuals.push(residual_norm(op, row, eta, &mut scratch));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        vectors,
        residuals,
        requested: m,
        n,
    })
}

struct RitzSet {
    values: Vec<f64>,
    /// Coordinates in the Krylov basis, one row of length K per pair.
    coords: Vec<Vec<f64>>,
    /// Magnitude of each pair's last Krylov coordinate.
    tails: Vec<f64>,
}

fn solve_tridiagonal(alpha: &[f64], beta: &[f64], m: usize) -> RitzSet {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if j + 1 == i {
            beta[j]
        } else if i + 1 == j {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let take = m.min(k);
    let mut values = Vec::with_capacity(take);
    let mut coords = Vec::with_capacity(take);
    let mut tails = Vec::with_capacity(take);
    for &idx in order.iter().take(take) {
        values.push(eig.eigenvalues[idx]);
        let col: Vec<f64> = (0..k).map(|j| eig.eigenvectors[(j, idx)]).collect();
        tails.push(col[k - 1].abs());
        coords.push(col);
    }
    RitzSet {
        values,
        coords,
        tails,
    }
}

/// Lanczos with full reorthogonalization (two classical Gram-Schmidt
/// passes per step) and deterministic restarts on breakdown.
pub fn eigentop_iterative(op: &dyn SymmetricOp, m: usize) -> Result<SpectralDecomposition> {
    validate_request(op, m)?;
    let n = op.dim();
    let fro = op.frobenius_norm();
    if fro == 0.0 {
        return Ok(trivial_decomposition(n, m));
    }
    let k_max = n.min(8 * m + 200);
    let cert = RESIDUAL_CERT_REL * fro;
    // Drive well past the certificate so eigenvector subspaces are accurate,
    // not just eigenvalues.
    let target = 1e-12 * fro;
    let breakdown = 1e-13 * fro;

    let start_stream = Stream::root(ITERATIVE_START_KEY).substream(n as u64);
    let mut cursor = start_stream.cursor();
    let mut v0 = vec![0.0; n];
    cursor.fill_normal(&mut v0);
    let s = norm(&v0);
    for v in v0.iter_mut() {
        *v /= s;
    }

    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut restarts = 0usize;
    let mut check_at = (m + 2).min(k_max);
    let mut best_worst = f64::INFINITY;
    let mut stalls = 0usize;

    let mut k = 0usize;
    let rz = loop {
        let mut w = vec![0.0; n];
        op.apply(&basis[k], &mut w);
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        axpy(&mut w, -a, &basis[k]);
        if k > 0 {
            axpy(&mut w, -betas[k - 1], &basis[k - 1]);
        }
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                if c != 0.0 {
                    axpy(&mut w, -c, v);
                }
            }
        }
        let b = norm(&w);
        let kk = k + 1;
        let exhausted = kk == k_max;
        let last_b = if b > breakdown { b } else { 0.0 };

        if !exhausted {
            if b > breakdown {
                for v in w.iter_mut() {
                    *v /= b;
                }
                basis.push(w);
                betas.push(b);
            } else {
                // Invariant subspace found; continue in a fresh direction.
                restarts += 1;
                let mut fresh = vec![0.0; n];
                let mut found = false;
                for attempt in 0..16u64 {
                    let mut c = start_stream
                        .substream(restarts as u64)
                        .substream(attempt)
                        .cursor();
                    c.fill_normal(&mut fresh);
                    for _ in 0..2 {
                        for v in &basis {
                            let cc = dot(&fresh, v);
                            axpy(&mut fresh, -cc, v);
                        }
                    }
                    let fb = norm(&fresh);
                    if fb > 1e-6 {
                        for v in fresh.iter_mut() {
                            *v /= fb;
                        }
                        found = true;
                        break;
                    }
                }
                if !found {
                    return Err(Error::NoConvergence(format!(
                        "restart failed after {kk} steps and {restarts} restarts (n = {n})"
                    )));
                }
                basis.push(fresh);
                betas.push(0.0);
            }
        }

        if kk >= check_at || exhausted {
            let rz = solve_tridiagonal(&alpha, &betas[..kk - 1], m);
            if rz.values.len() == m {
                let worst = rz
                    .tails
                    .iter()
                    .map(|t| t * last_b)
                    .fold(0.0f64, f64::max);
                let improved = worst < 0.9 * best_worst;
                if worst < best_worst {
                    best_worst = worst;
                }
                stalls = if improved { 0 } else { stalls + 1 };
                let good_enough = worst <= target || (stalls >= 3 && worst <= 0.5 * cert);
                if good_enough || exhausted {
                    break rz;
                }
            } else if exhausted {
                break rz;
            }
            check_at = (kk + (kk / 4).max(8)).min(k_max);
        }
        k += 1;
    };

    let got = rz.values.len();
    if got < m {
        return Err(Error::NoConvergence(format!(
            "only {got} of {m} pairs available after {} steps (n = {n})",
            alpha.len()
        )));
    }
    let mut eigenvalues = Vec::with_capacity(m);
    let mut vectors = vec![0.0; m * n];
    let mut residuals = Vec::with_capacity(m);
    let mut scratch = vec![0.0; n];
    let mut worst_true = 0.0f64;
    for i in 0..m {
        let row = &mut vectors[i * n..(i + 1) * n];
        for (j, coeff) in rz.coords[i].iter().enumerate() {
            if *coeff != 0.0 {
                axpy(row, *coeff, &basis[j]);
            }
        }
        let s = norm(row);
        for v in row.iter_mut() {
            *v /= s;
        }
        canonical_sign(row);
        let eta = rz.values[i];
        let r = residual_norm(op, row, eta, &mut scratch);
        worst_true = worst_true.max(r);
        eigenvalues.push(eta);
        residuals.push(r);
    }
    if worst_true > cert {
        return Err(Error::NoConvergence(format!(
            "residual {worst_true:.3e} above certificate {cert:.3e} after {} steps, {restarts} restarts (n = {n}, m = {m})",
            alpha.len()
        )));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        vectors,
        residuals,
        requested: m,
        n,
    })
}

/// Default search range for the gap rule.
pub fn default_gap_range(d_guess: usize, n: usize) -> usize {
    (2 * d_guess).min(n / 4).max(1)
}

/// Number of leading eigenvalues separated from the rest by a gap.
///
/// Eigenvalues are ordered non-increasing with the largest at index 0; the
/// gap at position i is eigenvalues[i] - eigenvalues[i + 1]. Returns the
/// smallest i in [1, i_max] whose gap is at least gamma times the median
/// gap over that range, falling back to the argmax gap when none qualify.
pub fn detect_dimension(eigenvalues: &[f64], i_max: usize, gamma: f64) -> Result<usize> {
    if eigenvalues.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "gap detection needs at least 3 eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    let hi = i_max.min(eigenvalues.len() - 2);
    if hi == 0 {
        return Err(Error::InvalidParameter("empty gap search range".into()));
    }
    let gaps: Vec<f64> = (1..=hi)
        .map(|i| eigenvalues[i] - eigenvalues[i + 1])
        .collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    for (offset, gap) in gaps.iter().enumerate() {
        if *gap >= gamma * median {
            return Ok(offset + 1);
        }
    }
    let mut best = 0usize;
    for (offset, gap) in gaps.iter().enumerate() {
        if *gap > gaps[best] {
            best = offset;
        }
    }
    Ok(best + 1)
}

/// Vertex embedding built from eigenpairs 1..=d, scaled by
/// sqrt(max(eta_i, 0) / ((d - 1) * lambda1)).
#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub n: usize,
    pub d: usize,
    /// Row-major n x d embedded vectors.
    pub u_hat: Vec<f64>,
    /// Normalization (d - 1) * lambda1.
    pub scale: f64,
    /// Optional cached n x n Gram matrix of the embedding.
    pub gram: Option<Vec<f64>>,
}

impl EmbeddingResult {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.u_hat[i * self.d..(i + 1) * self.d]
    }

    /// Fill the cached Gram matrix U_hat U_hatᵀ.
    pub fn compute_gram(&mut self) {
        let n = self.n;
        let d = self.d;
        let mut g = vec![0.0; n * n];
        g.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let ui = &self.u_hat[i * d..(i + 1) * d];
            for (j, slot) in row.iter_mut().enumerate() {
                let uj = &self.u_hat[j * d..(j + 1) * d];
                *slot = dot(ui, uj);
            }
        });
        self.gram = Some(g);
    }
}

/// Build the spectral embedding from a decomposition, skipping the top
/// pair: column i - 1 of the result uses eigenpair i for i = 1..=d.
pub fn build_embedding(
    dec: &SpectralDecomposition,
    d: usize,
    lambda1: f64,
) -> Result<EmbeddingResult> {
    if !(lambda1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "embedding scale needs lambda1 > 0, got {lambda1}"
        )));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension must be at least 2, got {d}"
        )));
    }
    if dec.count() < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "embedding in dimension {d} needs {} eigenpairs, decomposition has {}",
            d + 1,
            dec.count()
        )));
    }
    let n = dec.n;
    let scale = (d as f64 - 1.0) * lambda1;
    let mut u_hat = vec![0.0; n * d];
    for i in 1..=d {
        let factor = (dec.eigenvalues[i].max(0.0) / scale).sqrt();
        let w = dec.vector(i);
        for j in 0..n {
            u_hat[j * d + (i - 1)] = factor * w[j];
        }
    }
    Ok(EmbeddingResult {
        n,
        d,
        u_hat,
        scale,
        gram: None,
    })
}

fn sign_labels(w: &[f64]) -> Vec<i8> {
    w.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect()
}

/// Entrywise sign of the top eigenvector; zero entries break to +1.
pub fn cluster_by_top_eigvec(op: &dyn SymmetricOp) -> Result<Vec<i8>> {
    let dec = eigentop(op, 1)?;
    Ok(sign_labels(dec.vector(0)))
}

/// Two-community labels from the second eigenvector of the adjacency
/// matrix; d_est controls how many pairs are resolved alongside it.
pub fn cluster_graph(graph: &GraphSample, d_est: usize) -> Result<Vec<i8>> {
    let m = (d_est + 1).max(2);
    let dec = eigentop(graph, m)?;
    Ok(sign_labels(dec.vector(1)))
}

/// Threshold policy for the two-community test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TestPolicy {
    /// Analytic threshold n * lambda1' * (1 + (1/2) * max(sqrt(log(1/p)/d),
    /// sqrt(d/(n p log(1/p)))) * (log n)^beta), with lambda1' computed at
    /// the zero-separation calibration. Asymptotically valid; extremely
    /// conservative at small n.
    Formula { beta: f64 },
    /// (1 - alpha) quantile of the statistic over simulated
    /// zero-separation graphs with the same (n, d, p).
    EmpiricalNull { alpha: f64, trials: usize },
}

/// Outcome of the two-community test on a decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestDecision {
    /// Second-largest adjacency eigenvalue.
    pub statistic: f64,
    pub threshold: f64,
    pub policy: String,
    /// "reject-H0" or "accept-H0".
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_level: Option<f64>,
}

impl TestDecision {
    pub fn from_threshold(
        statistic: f64,
        threshold: f64,
        policy: &str,
        null_meta: Option<(usize, f64)>,
    ) -> TestDecision {
        TestDecision {
            statistic,
            threshold,
            policy: policy.to_string(),
            decision: if statistic > threshold {
                "reject-H0".to_string()
            } else {
                "accept-H0".to_string()
            },
            null_trials: null_meta.map(|m| m.0),
            null_level: null_meta.map(|m| m.1),
        }
    }

    pub fn rejected(&self) -> bool {
        self.decision == "reject-H0"
    }
}

/// Second-largest adjacency eigenvalue of simulated zero-separation graphs
/// with the given threshold, one per trial, deterministic per index.
pub fn null_statistics(
    n: usize,
    d: usize,
    tau_null: f64,
    trials: usize,
    stream: Stream,
) -> Result<Vec<f64>> {
    let params = ModelParams {
        n,
        d,
        mu: 0.0,
        p: None,
        tau: Some(tau_null),
        seed: 0,
    };
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let latents = sample_latents(&params, stream.substream(t as u64))?;
            let graph = connect_graph(&latents, tau_null)?;
            let dec = eigentop(&graph, 2)?;
            Ok(dec.eigenvalues[1])
        })
        .collect()
}

/// Conservative order-statistic quantile: the k-th smallest value with
/// k = ceil((1 - alpha) * (T + 1)), clamped to the sample.
pub fn empirical_quantile(stats: &[f64], alpha: f64) -> f64 {
    let mut sorted = stats.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t = sorted.len();
    let k = (((1.0 - alpha) * (t as f64 + 1.0)).ceil() as usize).clamp(1, t);
    sorted[k - 1]
}

/// Calibrate the zero-separation threshold for (d, p) and return the
/// empirical null quantile of the statistic along with the raw statistics.
pub fn empirical_null_threshold(
    n: usize,
    d: usize,
    p: f64,
    alpha: f64,
    trials: usize,
    samples: usize,
    stream: Stream,
) -> Result<(f64, Vec<f64>)> {
    if trials < 20 {
        return Err(Error::InvalidParameter(format!(
            "null calibration needs at least 20 trials, got {trials}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level must lie in (0, 1), got {alpha}"
        )));
    }
    let cal = calibrate_tau(
        d,
        0.0,
        p,
        samples,
        default_tolerance(p, samples),
        calibration_stream(stream, d, 0.0, p),
    )?;
    let stats = null_statistics(n, d, cal.tau, trials, stream.named("null-sim"))?;
    Ok((empirical_quantile(&stats, alpha), stats))
}

/// Decide between one and two communities from the second-largest
/// adjacency eigenvalue.
pub fn test_two_community(
    dec: &SpectralDecomposition,
    params: &ModelParams,
    policy: &TestPolicy,
    stream: Stream,
) -> Result<TestDecision> {
    if dec.count() < 2 {
        return Err(Error::InvalidParameter(
            "test statistic needs at least 2 eigenvalues".into(),
        ));
    }
    let statistic = dec.eigenvalues[1];
    params.validate()?;
    let p = match params.p {
        Some(p) => p,
        None => {
            let tau = params.tau()?;
            mixture_edge_probability(
                params.d,
                params.mu,
                tau,
                DEFAULT_CALIBRATION_SAMPLES,
                calibration_stream(stream, params.d, params.mu, tau),
            )?
            .0
        }
    };
    match *policy {
        TestPolicy::Formula { beta } => {
            let samples = DEFAULT_CALIBRATION_SAMPLES;
            let cal = calibrate_tau(
                params.d,
                0.0,
                p,
                samples,
                default_tolerance(p, samples),
                calibration_stream(stream, params.d, 0.0, p),
            )?;
            let lambda1 = lambda1_closed_form(params.d - 1, cal.tau)?;
            let n = params.n as f64;
            let d = params.d as f64;
            let logp = (1.0 / p).ln();
            let slack = (logp / d).sqrt().max((d / (n * p * logp)).sqrt());
            let threshold = n * lambda1 * (1.0 + 0.5 * slack * n.ln().powf(beta));
            Ok(TestDecision::from_threshold(
                statistic, threshold, "formula", None,
            ))
        }
        TestPolicy::EmpiricalNull { alpha, trials } => {
            let (threshold, _) = empirical_null_threshold(
                params.n,
                params.d,
                p,
                alpha,
                trials,
                DEFAULT_CALIBRATION_SAMPLES,
                stream,
            )?;
            Ok(TestDecision::from_threshold(
                statistic,
                threshold,
                "empirical-null",
                Some((trials, alpha)),
            ))
        }
    }
}

/// Embedding normalization for a graph: closed-form lambda1 at the
/// recorded threshold when available, otherwise at a threshold calibrated
/// from the recorded target p, otherwise from the observed edge density.
pub fn lambda1_for_graph(graph: &GraphSample, samples: usize, stream: Stream) -> Result<f64> {
    let meta = &graph.meta;
    if meta.d < 4 {
        return Err(Error::InvalidParameter(format!(
            "embedding scale needs d >= 4, got {}",
            meta.d
        )));
    }
    let tau = match (meta.tau, meta.p) {
        (Some(tau), _) => tau,
        (None, Some(p)) => {
            calibrate_tau(
                meta.d,
                meta.mu,
                p,
                samples,
                default_tolerance(p, samples),
                calibration_stream(stream, meta.d, meta.mu, p),
            )?
            .tau
        }
        (None, None) => {
            let p_hat = graph.density();
            if !(p_hat > 0.0 && p_hat < 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "observed density {p_hat} is outside the calibratable range"
                )));
            }
            calibrate_tau(
                meta.d,
                meta.mu,
                p_hat,
                samples,
                default_tolerance(p_hat, samples),
                calibration_stream(stream, meta.d, meta.mu, p_hat),
            )?
            .tau
        }
    };
    lambda1_closed_form(meta.d - 1, tau)
}
