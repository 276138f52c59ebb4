//! Evaluation functionals: pairwise and operator-norm embedding errors,
//! label overlap, the linear-approximation residual of the adjacency
//! matrix, and crossing-edge counts.

use crate::error::{Error, Result};
use crate::gegenbauer::ExpansionCoefficients;
use crate::model::{GraphSample, LatentEmbedding};
use crate::rng::Stream;
use crate::spectral::{materialize, SymmetricOp};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest n handled by the dense operator-norm path; above it a power
/// iteration on the squared operator takes over.
pub const DENSE_NORM_LIMIT: usize = 300;

/// Relative accuracy of the iterative operator-norm estimate.
pub const NORM_REL_TOL: f64 = 1e-6;

const NORM_START_KEY: u64 = 0x7C3A_11CE_0002_D0D0;

/// One trial's worth of evaluation results. Every field is optional so a
/// report can carry exactly the quantities a run computed.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ErrorReport {
    /// Mean |<u_hat_i, u_hat_j> - <u_i, u_j>| over ordered pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_error_abs: Option<f64>,
    /// Mean |<u_i, u_j>| over ordered pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_pair_error: Option<f64>,
    /// Spectral norm of U_hat U_hatT - U UT.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op_error: Option<f64>,
    /// Frobenius norm of the same difference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fro_error: Option<f64>,
    /// |<x, y>| / n over label vectors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    /// (1 + overlap) / 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossing_edges: Option<u64>,
    /// Operator norm of A - p0 1t 1tT - dt lambda1 U UT.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_residual: Option<f64>,
}

/// |<x, y>| / n; the absolute value makes the score blind to a global
/// sign flip of either labeling.
pub fn label_overlap(x: &[i8], y: &[i8]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "label vectors of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let total: i64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| i64::from(a) * i64::from(b))
        .sum();
    Ok(total.unsigned_abs() as f64 / x.len() as f64)
}

/// Clustering accuracy up to a global sign flip.
pub fn label_accuracy(x: &[i8], y: &[i8]) -> Result<f64> {
    Ok(0.5 * (1.0 + label_overlap(x, y)?))
}

fn check_rows(name: &str, rows: &[f64], n: usize, d: usize) -> Result<()> {
    if rows.len() != n * d {
        return Err(Error::ShapeMismatch(format!(
            "{name}: expected {n} x {d} values, got {}",
            rows.len()
        )));
    }
    Ok(())
}

/// Mean absolute Gram-entry error over all ordered pairs including i = j,
/// together with the mean |<u_i, u_j>| and their ratio.
pub fn pair_error(u_hat: &[f64], u: &[f64], n: usize, d: usize) -> Result<(f64, f64, f64)> {
    check_rows("u_hat", u_hat, n, d)?;
    check_rows("u", u, n, d)?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("empty embedding".into()));
    }
    // Row blocks in parallel, entries within a row in index order, block
    // sums combined in index order: identical at any thread count.
    let row_sums: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let hi = &u_hat[i * d..(i + 1) * d];
            let ui = &u[i * d..(i + 1) * d];
            let mut abs = 0.0;
            let mut norm = 0.0;
            for j in 0..n {
                let hj = &u_hat[j * d..(j + 1) * d];
                let uj = &u[j * d..(j + 1) * d];
                let mut gh = 0.0;
                let mut gu = 0.0;
                for k in 0..d {
                    gh += hi[k] * hj[k];
                    gu += ui[k] * uj[k];
                }
                abs += (gh - gu).abs();
                norm += gu.abs();
            }
            (abs, norm)
        })
        .collect();
    let pairs = (n * n) as f64;
    let mut abs = 0.0;
    let mut norm = 0.0;
    for (a, b) in row_sums {
        abs += a;
        norm += b;
    }
    abs /= pairs;
    norm /= pairs;
    let relative = if norm > 0.0 {
        abs / norm
    } else if abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((abs, norm, relative))
}

fn gram_dxd(rows_a: &[f64], rows_b: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for i in 0..n {
        let a = &rows_a[i * d..(i + 1) * d];
        let b = &rows_b[i * d..(i + 1) * d];
        for (r, &av) in a.iter().enumerate() {
            for (slot, &bv) in g[r * d..(r + 1) * d].iter_mut().zip(b) {
                *slot += av * bv;
            }
        }
    }
    g
}

fn sq_sum(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Difference of two Gram operators, U_hat U_hatT - U UT, applied through
/// the n x d factors.
struct DiffGramOp<'a> {
    u_hat: &'a [f64],
    u: &'a [f64],
    n: usize,
    d: usize,
    fro: f64,
}

impl DiffGramOp<'_> {
    fn factor_t(rows: &[f64], x: &[f64], d: usize) -> Vec<f64> {
        let partials: Vec<Vec<f64>> = rows
            .par_chunks(1024 * d)
            .zip(x.par_chunks(1024))
            .map(|(block, xs)| {
                let mut acc = vec![0.0; d];
                for (row, &xi) in block.chunks(d).zip(xs) {
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

impl SymmetricOp for DiffGramOp<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.d;
        let th = Self::factor_t(self.u_hat, x, d);
        let tu = Self::factor_t(self.u, x, d);
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let h = &self.u_hat[i * d..(i + 1) * d];
            let u = &self.u[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                acc += h[k] * th[k] - u[k] * tu[k];
            }
            *out = acc;
        });
    }

    fn frobenius_norm(&self) -> f64 {
        self.fro
    }
}

/// Operator norm of a symmetric operator: exact dense spectrum for
/// n <= DENSE_NORM_LIMIT, power iteration on the squared operator above.
pub fn operator_norm(op: &dyn SymmetricOp, rel_tol: f64) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::InvalidParameter("empty operator".into()));
    }
    if n <= DENSE_NORM_LIMIT {
        let data = materialize(op);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &data));
        return Ok(eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
    }
    if op.frobenius_norm() == 0.0 {
        return Ok(0.0);
    }
    let mut x = vec![0.0; n];
    Stream::root(NORM_START_KEY)
        .substream(n as u64)
        .cursor()
        .fill_normal(&mut x);
    let s = sq_sum(&x).sqrt();
    for v in x.iter_mut() {
        *v /= s;
    }
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut prev = f64::INFINITY;
    for _ in 0..200_000 {
        op.apply(&x, &mut y);
        // Rayleigh quotient of the squared operator at unit x.
        let est = sq_sum(&y);
        if est == 0.0 {
            return Ok(0.0);
        }
        op.apply(&y, &mut z);
        let zn = sq_sum(&z).sqrt();
        if zn == 0.0 {
            return Ok(est.sqrt());
        }
        for (slot, v) in x.iter_mut().zip(&z) {
            *slot = v / zn;
        }
        if (est - prev).abs() <= rel_tol * est {
            return Ok(est.sqrt());
        }
        prev = est;
    }
    Err(Error::NoConvergence(format!(
        "operator-norm power iteration stalled at relative tolerance {rel_tol} (n = {n})"
    )))
}

/// Spectral and Frobenius norms of U_hat U_hatT - U UT. The Frobenius norm
/// is exact through d x d Gram products; the spectral norm goes through
/// `operator_norm`.
pub fn operator_error(u_hat: &[f64], u: &[f64], n: usize, d: usize) -> Result<(f64, f64)> {
    check_rows("u_hat", u_hat, n, d)?;
    check_rows("u", u, n, d)?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("empty embedding".into()));
    }
    let g_hh = gram_dxd(u_hat, u_hat, n, d);
    let g_hu = gram_dxd(u_hat, u, n, d);
    let g_uu = gram_dxd(u, u, n, d);
    let fro = (sq_sum(&g_hh) - 2.0 * sq_sum(&g_hu) + sq_sum(&g_uu)).max(0.0).sqrt();
    let op = DiffGramOp {
        u_hat,
        u,
        n,
        d,
        fro,
    };
    let op_norm = operator_norm(&op, NORM_REL_TOL)?;
    Ok((op_norm, fro))
}

/// A - p0 1t 1tT - c U UT as an implicit operator, c = dt lambda1.
struct ResidualOp<'a> {
    graph: &'a GraphSample,
    u: &'a [f64],
    ones_t: Vec<f64>,
    d: usize,
    p0: f64,
    c: f64,
    fro: f64,
}

impl SymmetricOp for ResidualOp<'_> {
    fn dim(&self) -> usize {
        self.graph.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.d;
        self.graph.matvec(x, y);
        let ones_dot: f64 = self.ones_t.iter().zip(x).map(|(a, b)| a * b).sum();
        let tu = DiffGramOp::factor_t(self.u, x, d);
        let p0 = self.p0;
        let c = self.c;
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let ui = &self.u[i * d..(i + 1) * d];
            let mut gram = 0.0;
            for (a, b) in ui.iter().zip(&tu) {
                gram += a * b;
            }
            *out -= p0 * ones_dot * self.ones_t[i] + c * gram;
        });
    }

    fn frobenius_norm(&self) -> f64 {
        self.fro
    }
}

/// Operator norm of A - p0 1t 1tT - dt lambda1 U UT, with
/// (1t)_k = 1 + L_k lambda1 dt tau / p0 built from the centered tail
/// norms. The coefficients must come from the graph's own threshold with
/// dim = d - 1.
pub fn linear_residual(
    graph: &GraphSample,
    latents: &LatentEmbedding,
    coeffs: &ExpansionCoefficients,
) -> Result<f64> {
    residual_norm_impl(graph, latents, coeffs, true)
}

/// Operator norm of A - p0 1t 1tT alone: the baseline the degree-one
/// Gram term is measured against.
pub fn rank_one_residual(
    graph: &GraphSample,
    latents: &LatentEmbedding,
    coeffs: &ExpansionCoefficients,
) -> Result<f64> {
    residual_norm_impl(graph, latents, coeffs, false)
}

fn residual_norm_impl(
    graph: &GraphSample,
    latents: &LatentEmbedding,
    coeffs: &ExpansionCoefficients,
    include_linear: bool,
) -> Result<f64> {
    if graph.n != latents.n {
        return Err(Error::ShapeMismatch(format!(
            "graph on {} vertices, latents on {}",
            graph.n, latents.n
        )));
    }
    if coeffs.dim + 1 != latents.d {
        return Err(Error::InvalidCoefficients(format!(
            "coefficients live on dimension {}, latents need {}",
            coeffs.dim,
            latents.d - 1
        )));
    }
    if coeffs.lambda.len() < 2 {
        return Err(Error::InvalidCoefficients(
            "need the order-0 and order-1 coefficients".into(),
        ));
    }
    let p0 = coeffs.p0();
    if p0 == 0.0 {
        return Err(Error::InvalidCoefficients(
            "zero edge-probability mass p0".into(),
        ));
    }
    let lambda1 = coeffs.lambda[1];
    let tau = coeffs.tau_eff;
    let n = latents.n;
    let d = latents.d;
    let dt = (d - 1) as f64;
    let c = if include_linear { dt * lambda1 } else { 0.0 };
    let slope = lambda1 * dt * tau / p0;
    let ones_t: Vec<f64> = latents.l_centered.iter().map(|l| 1.0 + l * slope).collect();

    // Exact Frobenius norm of A - B - C from pairwise inner products:
    // B = p0 1t 1tT, C = c U UT.
    let u = &latents.u;
    let fro2_a = 2.0 * graph.edge_count as f64;
    let ones_sq = sq_sum(&ones_t);
    let fro2_b = p0 * p0 * ones_sq * ones_sq;
    let g_uu = gram_dxd(u, u, n, d);
    let fro2_c = c * c * sq_sum(&g_uu);
    let mut a_dot_b = 0.0;
    let mut a_dot_c = 0.0;
    for (i, j) in graph.edges() {
        let (i, j) = (i as usize, j as usize);
        a_dot_b += ones_t[i] * ones_t[j];
        let ui = &u[i * d..(i + 1) * d];
        let uj = &u[j * d..(j + 1) * d];
        let mut g = 0.0;
        for (a, b) in ui.iter().zip(uj) {
            g += a * b;
        }
        a_dot_c += g;
    }
    a_dot_b *= 2.0 * p0;
    a_dot_c *= 2.0 * c;
    let ut_ones = DiffGramOp::factor_t(u, &ones_t, d);
    let b_dot_c = p0 * c * sq_sum(&ut_ones);
    let fro = (fro2_a + fro2_b + fro2_c - a_dot_b - a_dot_c + 2.0 * b_dot_c)
        .max(0.0)
        .sqrt();

    let op = ResidualOp {
        graph,
        u,
        ones_t,
        d,
        p0,
        c,
        fro,
    };
    operator_norm(&op, NORM_REL_TOL)
}

/// Number of edges whose endpoints carry different labels.
pub fn crossing_edge_count(graph: &GraphSample, labels: &[i8]) -> Result<u64> {
    if labels.len() != graph.n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a graph on {} vertices",
            labels.len(),
            graph.n
        )));
    }
    let mut count = 0u64;
    for (i, j) in graph.edges() {
        if labels[i as usize] != labels[j as usize] {
            count += 1;
        }
    }
    Ok(count)
}
