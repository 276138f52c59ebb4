//! Two-community latent mixture model: vector sampling, threshold graph
//! construction, and the first-coordinate/tail decomposition used by the
//! downstream approximation machinery.

use crate::calibrate::{calibrate_tau, default_tolerance, mixture_edge_probability};
use crate::error::{Error, Result};
use crate::rng::Stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard cap for the dense bit-packed adjacency store (desk-scale tool).
pub const MAX_VERTICES: usize = 16_384;

/// Generating parameters of one graph model cell.
///
/// Exactly one of `p` and `tau` is authoritative at construction; the other
/// is derived by calibration and both are stored afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// Vertex count, at least 2.
    pub n: usize,
    /// Latent dimension, at least 2.
    pub d: usize,
    /// Half separation of the two mixture components along the first axis.
    pub mu: f64,
    /// Target edge probability in (0, 1/2).
    pub p: Option<f64>,
    /// Connection threshold.
    pub tau: Option<f64>,
    /// Seed of the stream that samples this cell.
    pub seed: u64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 vertices, got {}",
                self.n
            )));
        }
        if self.d < 2 {
            return Err(Error::InvalidParameter(format!(
                "latent dimension must be at least 2, got {}",
                self.d
            )));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "separation mu must be non-negative, got {}",
                self.mu
            )));
        }
        if self.p.is_none() && self.tau.is_none() {
            return Err(Error::InvalidParameter(
                "one of p or tau must be given".into(),
            ));
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p < 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "edge probability must lie in (0, 1/2), got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Fill in whichever of {p, tau} is missing.
    ///
    /// A missing tau is calibrated by Monte-Carlo bisection against p; a
    /// missing p is estimated at the given tau. The calibration stream is
    /// derived from parameters only, so two cells with the same (d, mu, p)
    /// share a threshold no matter where they sit in a sweep.
    pub fn calibrated(mut self, samples: usize, stream: Stream) -> Result<ModelParams> {
        self.validate()?;
        match (self.p, self.tau) {
            (Some(p), None) => {
                let cal = calibrate_tau(
                    self.d,
                    self.mu,
                    p,
                    samples,
                    default_tolerance(p, samples),
                    calibration_stream(stream, self.d, self.mu, p),
                )?;
                self.tau = Some(cal.tau);
            }
            (None, Some(tau)) => {
                let (p_hat, _) = mixture_edge_probability(
                    self.d,
                    self.mu,
                    tau,
                    samples,
                    calibration_stream(stream, self.d, self.mu, tau),
                )?;
                self.p = Some(p_hat);
            }
            _ => {}
        }
        Ok(self)
    }

    /// Resolved threshold; error when not yet calibrated.
    pub fn tau(&self) -> Result<f64> {
        self.tau
            .ok_or_else(|| Error::InvalidParameter("tau is not calibrated yet".into()))
    }
}

/// Stream for a calibration keyed by the parameters themselves.
pub fn calibration_stream(base: Stream, d: usize, mu: f64, target: f64) -> Stream {
    base.named("calibration")
        .substream(d as u64)
        .substream(mu.to_bits())
        .substream(target.to_bits())
}

/// Sampled latent vectors with their split into first coordinate and
/// scaled tail direction: u_i = (a_i, ell_i * v_i) with v_i a unit vector
/// in R^(d-1).
#[derive(Debug, Clone)]
pub struct LatentEmbedding {
    pub n: usize,
    pub d: usize,
    /// Row-major n x d latent vectors.
    pub u: Vec<f64>,
    /// Component labels, +1 or -1.
    pub labels: Vec<i8>,
    /// First coordinates a_i.
    pub a: Vec<f64>,
    /// Tail norms ell_i = ||u_i[1..]||.
    pub ell: Vec<f64>,
    /// Centered tail norms L_i = ell_i - 1.
    pub l_centered: Vec<f64>,
    /// Row-major n x (d-1) unit tail directions; zero row when ell_i = 0.
    pub v: Vec<f64>,
}

impl LatentEmbedding {
    /// Decompose given latent rows. `u` is row-major n x d.
    pub fn from_rows(n: usize, d: usize, u: Vec<f64>, labels: Vec<i8>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameter(format!(
                "decomposition needs d >= 2, got {d}"
            )));
        }
        if u.len() != n * d || labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} x {d} rows and {n} labels, got {} values and {} labels",
                u.len(),
                labels.len()
            )));
        }
        let mut a = vec![0.0; n];
        let mut ell = vec![0.0; n];
        let mut l_centered = vec![0.0; n];
        let mut v = vec![0.0; n * (d - 1)];
        for i in 0..n {
            let row = &u[i * d..(i + 1) * d];
            a[i] = row[0];
            let norm = row[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
            ell[i] = norm;
            l_centered[i] = norm - 1.0;
            if norm > 0.0 {
                for (slot, x) in v[i * (d - 1)..(i + 1) * (d - 1)].iter_mut().zip(&row[1..]) {
                    *slot = x / norm;
                }
            }
        }
        Ok(LatentEmbedding {
            n,
            d,
            u,
            labels,
            a,
            ell,
            l_centered,
            v,
        })
    }

    /// Dimension of the tail directions.
    pub fn dtilde(&self) -> usize {
        self.d - 1
    }

    pub fn row_u(&self, i: usize) -> &[f64] {
        &self.u[i * self.d..(i + 1) * self.d]
    }

    pub fn row_v(&self, i: usize) -> &[f64] {
        &self.v[i * (self.d - 1)..(i + 1) * (self.d - 1)]
    }
}

/// Draw n labeled latent vectors: x_i uniform on {-1, +1} and
/// u_i = x_i mu e_1 + z_i with independent N(0, 1/d) coordinates.
///
/// Vertex i draws from its own substream, so the embedding is identical at
/// any thread count and stable under extending n.
pub fn sample_latents(params: &ModelParams, stream: Stream) -> Result<LatentEmbedding> {
    params.validate()?;
    let n = params.n;
    let d = params.d;
    let mu = params.mu;
    let scale = 1.0 / (d as f64).sqrt();
    let vertex_root = stream.named("latents");
    let mut u = vec![0.0; n * d];
    let mut labels = vec![0i8; n];
    u.par_chunks_mut(d)
        .zip(labels.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, label))| {
            let mut c = vertex_root.substream(i as u64).cursor();
            let x = c.next_sign();
            *label = x;
            for slot in row.iter_mut() {
                *slot = c.next_normal() * scale;
            }
            row[0] += f64::from(x) * mu;
        });
    LatentEmbedding::from_rows(n, d, u, labels)
}

/// Metadata carried with a graph through files and records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraphMeta {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub p: Option<f64>,
    pub tau: Option<f64>,
    pub seed: u64,
    pub tool_version: String,
}

impl GraphMeta {
    pub fn from_params(params: &ModelParams) -> Self {
        GraphMeta {
            n: params.n,
            d: params.d,
            mu: params.mu,
            p: params.p,
            tau: params.tau,
            seed: params.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_params(&self) -> ModelParams {
        ModelParams {
            n: self.n,
            d: self.d,
            mu: self.mu,
            p: self.p,
            tau: self.tau,
            seed: self.seed,
        }
    }
}

/// Undirected simple graph over the latent vectors, stored both bit-packed
/// dense and as sorted neighbor lists (CSR).
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    pub edge_count: u64,
    pub meta: GraphMeta,
}

impl GraphSample {
    /// Build a graph from explicit edges (used by file loading and tests).
    /// Edges are undirected pairs; self loops are rejected.
    pub fn from_edges(n: usize, edges: &[(u32, u32)], meta: GraphMeta) -> Result<Self> {
        if n > MAX_VERTICES {
            return Err(Error::CapacityExceeded {
                n,
                max: MAX_VERTICES,
            });
        }
        let words_per_row = n.div_ceil(64);
        let mut bits = vec![0u64; n * words_per_row];
        for &(i, j) in edges {
            let (i, j) = (i as usize, j as usize);
            if i == j {
                return Err(Error::InvalidParameter(format!("self loop at vertex {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) outside vertex range 0..{n}"
                )));
            }
            bits[i * words_per_row + j / 64] |= 1u64 << (j % 64);
            bits[j * words_per_row + i / 64] |= 1u64 << (i % 64);
        }
        Ok(Self::from_bits(n, words_per_row, bits, meta))
    }

    fn from_bits(n: usize, words_per_row: usize, bits: Vec<u64>, meta: GraphMeta) -> Self {
        let degrees: Vec<usize> = bits
            .par_chunks(words_per_row)
            .map(|row| row.iter().map(|w| w.count_ones() as usize).sum())
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for deg in &degrees {
            acc += deg;
            offsets.push(acc);
        }
        let mut targets = vec![0u32; acc];
        // Rows write disjoint target ranges, so this parallelizes without
        // any reduction-order concern.
        {
            let offsets_ref = &offsets;
            let bits_ref = &bits;
            let chunks: Vec<(usize, &mut [u32])> = {
                let mut rest: &mut [u32] = &mut targets;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let len = offsets_ref[i + 1] - offsets_ref[i];
                    let (head, tail) = rest.split_at_mut(len);
                    out.push((i, head));
                    rest = tail;
                }
                out
            };
            chunks.into_par_iter().for_each(|(i, slot)| {
                let row = &bits_ref[i * words_per_row..(i + 1) * words_per_row];
                let mut w = 0usize;
                for (word_idx, word) in row.iter().enumerate() {
                    let mut bitsleft = *word;
                    while bitsleft != 0 {
                        let b = bitsleft.trailing_zeros() as usize;
                        slot[w] = (word_idx * 64 + b) as u32;
                        w += 1;
                        bitsleft &= bitsleft - 1;
                    }
                }
            });
        }
        let edge_count = (acc / 2) as u64;
        GraphSample {
            n,
            words_per_row,
            bits,
            offsets,
            targets,
            edge_count,
            meta,
        }
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words_per_row + j / 64] >> (j % 64) & 1 == 1
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Empirical edge density over unordered pairs.
    pub fn density(&self) -> f64 {
        let pairs = self.n as f64 * (self.n as f64 - 1.0) / 2.0;
        self.edge_count as f64 / pairs
    }

    /// Edges as (i, j) with i < j in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n as u32).flat_map(move |i| {
            self.neighbors(i as usize)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// y = A x with fixed per-row summation order; rows are independent so
    /// the result does not depend on thread count.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        y.par_iter_mut().enumerate().for_each(|(i, out)| {
            let mut acc = 0.0;
            for &j in self.neighbors(i) {
                acc += x[j as usize];
            }
            *out = acc;
        });
    }

    /// Dense 0/1 adjacency, row-major.
    pub fn to_dense_rows(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for &j in self.neighbors(i) {
                row[j as usize] = 1.0;
            }
        });
        out
    }

    /// Frobenius norm of the adjacency matrix, sqrt(2 * edges).
    pub fn frobenius_norm(&self) -> f64 {
        (2.0 * self.edge_count as f64).sqrt()
    }
}

/// Connect every pair with inner product at or above tau (ties connect).
///
/// Each adjacency row is computed independently from the latent rows, so the
/// construction parallelizes deterministically; both orientations of a pair
/// evaluate the same dot product expression in the same order.
pub fn connect_graph(latents: &LatentEmbedding, tau: f64) -> Result<GraphSample> {
    let n = latents.n;
    if n > MAX_VERTICES {
        return Err(Error::CapacityExceeded {
            n,
            max: MAX_VERTICES,
        });
    }
    let d = latents.d;
    let words_per_row = n.div_ceil(64);
    let mut bits = vec![0u64; n * words_per_row];
    bits.par_chunks_mut(words_per_row)
        .enumerate()
        .for_each(|(i, row)| {
            let ui = &latents.u[i * d..(i + 1) * d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let uj = &latents.u[j * d..(j + 1) * d];
                let mut dot = 0.0;
                for k in 0..d {
                    dot += ui[k] * uj[k];
                }
                if dot >= tau {
                    row[j / 64] |= 1u64 << (j % 64);
                }
            }
        });
    let meta = GraphMeta {
        n,
        d,
        mu: 0.0,
        p: None,
        tau: Some(tau),
        seed: 0,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(GraphSample::from_bits(n, words_per_row, bits, meta))
}

/// Pair-specific effective thresholds (tau - a_i a_j) / (ell_i ell_j),
/// row-major with an unset (zero) diagonal.
///
/// Dense n x n output; intended for diagnostics at small n.
pub fn local_thresholds(latents: &LatentEmbedding, tau: f64) -> Result<Vec<f64>> {
    let n = latents.n;
    if let Some(i) = latents.ell.iter().position(|&l| l == 0.0) {
        return Err(Error::DegenerateLatent(i));
    }
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = (tau - latents.a[i] * latents.a[j]) / (latents.ell[i] * latents.ell[j]);
            }
        }
    });
    Ok(out)
}
