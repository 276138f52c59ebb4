//! Acceptance gate: one test per criterion, each printing a single
//! pass line with the measured values. Tolerances and seeds are pinned
//! here so reruns are bit-reproducible.

use gmbm::calibrate::{calibrate_tau, default_tolerance, DEFAULT_CALIBRATION_SAMPLES};
use gmbm::gegenbauer::{
    harmonic_dimension_f64, lambda1_closed_form, ExpansionCoefficients, GegenbauerBasis,
};
use gmbm::harness::{detection_auc, estimate_test_errors, parse_sweep_config, sweep, Record};
use gmbm::metrics::{
    crossing_edge_count, label_overlap, linear_residual, operator_error, pair_error,
    rank_one_residual,
};
use gmbm::model::{
    calibration_stream, connect_graph, sample_latents, GraphMeta, GraphSample, LatentEmbedding,
    ModelParams,
};
use gmbm::rng::Stream;
use gmbm::special::{integrate_adaptive, ln_gamma};
use gmbm::spectral::{
    cluster_by_top_eigvec, eigentop_dense, eigentop_iterative, DenseSym, GramOp, SymmetricOp,
};
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::erf::erfc;
use std::time::Instant;

// Monte-Carlo orthonormality (criterion 1).
const C1_DIM: usize = 40;
const C1_MAX_DEG: usize = 5;
const C1_PAIRS: usize = 2_000_000;
const C1_TOL: f64 = 0.05;
const C1_BUDGET_SECS: f64 = 60.0;
const C1_SEED: u64 = 101;

// Endpoint identity (criterion 2).
const C2_DIMS: [usize; 3] = [10, 50, 200];
const C2_MAX_DEG: usize = 15;
const C2_REL_TOL: f64 = 1e-8;

// Sup bound (criterion 3).
const C3_DIMS: [usize; 2] = [100, 400];
const C3_BOUNDS: [f64; 2] = [3.0, 5.0];
const C3_MAX_DEG: usize = 20;
const C3_GRID: usize = 10_000;

// Degree-one coefficient closed form vs quadrature (criterion 4).
const C4_DIMS: [usize; 3] = [30, 100, 500];
const C4_TAUS: [f64; 4] = [0.0, 0.05, 0.1, 0.3];
const C4_REL_TOL: f64 = 1e-6;
const C4_ANCHOR_TOL: f64 = 1e-10;

// Calibration round-trip (criterion 5).
const C5_PS: [f64; 4] = [0.01, 0.05, 0.1, 0.3];
const C5_DS: [usize; 3] = [30, 100, 300];
const C5_N: usize = 2000;
const C5_SEED: u64 = 501;
const C5_SIGMAS: f64 = 4.0;
const C5_VAR_SAMPLES: usize = 200_000;
const C5_RATIO_LO: f64 = 0.2;
const C5_RATIO_HI: f64 = 3.0;

// Eigensolver oracle equivalence (criterion 6).
const C6_N: usize = 200;
const C6_TOP: usize = 10;
const C6_MATRICES: u64 = 20;
const C6_SEED: u64 = 601;
const C6_EVAL_TOL: f64 = 1e-8;
const C6_ANGLE_TOL: f64 = 1e-6;

// Clustering regime sweep (criterion 7).
const C7_ACC_TARGET: f64 = 0.85;
const C7_NULL_BAND: (f64, f64) = (0.45, 0.55);

// Gram-oracle clustering (criterion 8).
const C8_N: usize = 2000;
const C8_D: usize = 64;
const C8_MU_SQRT_D: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const C8_TRIALS: u64 = 5;
const C8_SEED: u64 = 801;

// Two-community test errors (criterion 9).
const C9_SEED: u64 = 901;
const C9_TRIALS: usize = 200;
const C9_TYPE1_BAND: (f64, f64) = (0.02, 0.08);
const C9_POWER_MIN: f64 = 0.9;

// Linear-approximation residual (criterion 10).
const C10_SEED: u64 = 1001;
const C10_REDUCTION: f64 = 0.9;

// Crossing edges (criterion 11).
const C11_SEED: u64 = 1101;
const C11_TRIALS: usize = 20;
const C11_MIN_ZERO: usize = 19;

// Detectability AUC (criterion 12).
const C12_SEED_LOW: u64 = 1201;
const C12_SEED_HIGH: u64 = 1202;
const C12_TRIALS: usize = 200;
const C12_LOW_BAND: (f64, f64) = (0.45, 0.58);
const C12_HIGH_MIN: f64 = 0.9;

// Metric identities (criterion 13).
const C13_ROTATIONS: u64 = 10;
const C13_TOL: f64 = 1e-8;
const C13_SEED: u64 = 1301;

fn unit_vector(cursor: &mut gmbm::rng::Cursor, buf: &mut [f64]) {
    loop {
        cursor.fill_normal(buf);
        let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in buf.iter_mut() {
                *v /= norm;
            }
            return;
        }
    }
}

#[test]
fn criterion_01_basis_orthonormality_monte_carlo() {
    let start = Instant::now();
    let basis = GegenbauerBasis::new(C1_DIM, C1_MAX_DEG).unwrap();
    let mut cursor = Stream::root(C1_SEED).cursor();
    let m = C1_MAX_DEG + 1;
    let mut sums = vec![0.0f64; m * m];
    let mut a = vec![0.0; C1_DIM];
    let mut b = vec![0.0; C1_DIM];
    let mut q = vec![0.0; m];
    for _ in 0..C1_PAIRS {
        unit_vector(&mut cursor, &mut a);
        unit_vector(&mut cursor, &mut b);
        let xi = (C1_DIM as f64).sqrt() * a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        for (k, slot) in q.iter_mut().enumerate() {
            *slot = basis.eval(k, xi).unwrap();
        }
        for k in 0..m {
            for l in k..m {
                sums[k * m + l] += q[k] * q[l];
            }
        }
    }
    let mut worst = 0.0f64;
    for k in 0..m {
        for l in k..m {
            let target = if k == l { 1.0 } else { 0.0 };
            let dev = (sums[k * m + l] / C1_PAIRS as f64 - target).abs();
            worst = worst.max(dev);
            assert!(
                dev <= C1_TOL,
                "pair ({k}, {l}) deviates by {dev} from {target}"
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < C1_BUDGET_SECS, "took {secs:.1}s");
    println!(
        "criterion 01: PASS (dim {C1_DIM}, degrees 0..={C1_MAX_DEG}, {C1_PAIRS} pairs, \
         worst deviation {worst:.4} <= {C1_TOL}, {secs:.1}s)"
    );
}

#[test]
fn criterion_02_basis_endpoint_identity() {
    let mut worst = 0.0f64;
    for &dim in &C2_DIMS {
        let basis = GegenbauerBasis::new(dim, C2_MAX_DEG).unwrap();
        let endpoint = (dim as f64).sqrt();
        for k in 0..=C2_MAX_DEG {
            let want = harmonic_dimension_f64(dim, k).unwrap().sqrt();
            let got = basis.eval(k, endpoint).unwrap();
            let rel = (got - want).abs() / want;
            worst = worst.max(rel);
            assert!(rel <= C2_REL_TOL, "dim {dim} k {k}: rel error {rel}");
        }
    }
    println!(
        "criterion 02: PASS (dims {C2_DIMS:?}, k <= {C2_MAX_DEG}, \
         worst relative error {worst:.2e} <= {C2_REL_TOL:.0e})"
    );
}

#[test]
fn criterion_03_basis_sup_bound_on_grid() {
    let mut worst_ratio = 0.0f64;
    for &dim in &C3_DIMS {
        let basis = GegenbauerBasis::new(dim, C3_MAX_DEG).unwrap();
        for &bound in &C3_BOUNDS {
            for k in 0..=C3_MAX_DEG {
                let cap = bound.powi(k as i32);
                for t in 0..C3_GRID {
                    let x = -bound + 2.0 * bound * t as f64 / (C3_GRID - 1) as f64;
                    let v = basis.eval(k, x).unwrap().abs();
                    worst_ratio = worst_ratio.max(v / cap);
                    assert!(
                        v <= cap,
                        "dim {dim} k {k} x {x}: |q_k| = {v} exceeds {cap}"
                    );
                }
            }
        }
    }
    println!(
        "criterion 03: PASS (dims {C3_DIMS:?}, B in {C3_BOUNDS:?}, k <= {C3_MAX_DEG}, \
         {C3_GRID}-point grids, worst |q_k|/B^k = {worst_ratio:.4})"
    );
}

/// Defining integral of the degree-one coefficient, integrated
/// numerically in the x = xi/sqrt(dim) variable:
/// lambda_1 = Gamma(dim/2) / (sqrt(pi) Gamma((dim-1)/2))
///           * Integral_tau^1 x (1-x^2)^((dim-3)/2) dx.
fn lambda1_quadrature(dim: usize, tau: f64) -> f64 {
    let e = (dim as f64 - 3.0) / 2.0;
    let c = (ln_gamma(dim as f64 / 2.0) - ln_gamma((dim as f64 - 1.0) / 2.0)).exp()
        / std::f64::consts::PI.sqrt();
    let f = move |x: f64| x * (1.0 - x * x).max(0.0).powf(e);
    c * integrate_adaptive(&f, tau, 1.0, 1e-12, 1 << 16)
}

#[test]
fn criterion_04_degree_one_coefficient_closed_form_vs_quadrature() {
    let mut worst = 0.0f64;
    for &dim in &C4_DIMS {
        for &tau in &C4_TAUS {
            let closed = lambda1_closed_form(dim, tau).unwrap();
            let quad = lambda1_quadrature(dim, tau);
            let rel = (closed - quad).abs() / quad.abs();
            worst = worst.max(rel);
            assert!(
                rel <= C4_REL_TOL,
                "dim {dim} tau {tau}: closed {closed:.12e} vs quadrature {quad:.12e} (rel {rel:.2e})"
            );
        }
    }
    let anchor = lambda1_closed_form(3, 0.0).unwrap();
    assert!(
        (anchor - 0.25).abs() <= C4_ANCHOR_TOL,
        "anchor value {anchor} is not 1/4"
    );
    println!(
        "criterion 04: PASS (dims {C4_DIMS:?} x taus {C4_TAUS:?}, worst rel {worst:.2e} <= \
         {C4_REL_TOL:.0e}; dim-3 tau-0 anchor = {anchor})"
    );
}

/// Conditional edge probability given one endpoint's latent vector, for
/// mu = 0: the other endpoint contributes a N(0, ||u||^2/d) inner
/// product, so q(u) = Phi_bar(tau sqrt(d) / ||u||).
fn normal_upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[test]
fn criterion_05_calibration_round_trip_density() {
    let cells = C5_PS.len() * C5_DS.len();
    let mut passing = 0usize;
    let mut ratio_ok = true;
    let mut lines = Vec::new();
    let base = Stream::root(C5_SEED);
    for (ci, (&p, &d)) in C5_PS
        .iter()
        .flat_map(|p| C5_DS.iter().map(move |d| (p, d)))
        .enumerate()
    {
        let samples = DEFAULT_CALIBRATION_SAMPLES;
        let tol = default_tolerance(p, samples);
        let cal = calibrate_tau(d, 0.0, p, samples, tol, calibration_stream(base, d, 0.0, p))
            .unwrap();

        // Latent-coupling variance of the pair indicator: edges sharing a
        // vertex are correlated through q(u), so the density variance is
        // (p(1-p) + 2(n-2) Var q) / (n(n-1)/2), plus the calibration
        // tolerance for the systematic |p_true(tau) - p| offset.
        let mut cursor = base.named("variance").substream(ci as u64).cursor();
        let mut z = vec![0.0; d];
        let scale = 1.0 / (d as f64).sqrt();
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for t in 0..C5_VAR_SAMPLES {
            cursor.fill_normal(&mut z);
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt() * scale;
            let q = normal_upper_tail(cal.tau * (d as f64).sqrt() / norm);
            let delta = q - mean;
            mean += delta / (t + 1) as f64;
            m2 += delta * (q - mean);
        }
        let var_q = m2 / (C5_VAR_SAMPLES - 1) as f64;
        let n = C5_N;
        let pairs = (n * (n - 1) / 2) as f64;
        let sigma = ((p * (1.0 - p) + 2.0 * (n - 2) as f64 * var_q) / pairs).sqrt();

        let params = ModelParams {
            n,
            d,
            mu: 0.0,
            p: Some(p),
            tau: Some(cal.tau),
            seed: C5_SEED,
        };
        let latents = sample_latents(&params, base.substream(ci as u64)).unwrap();
        let graph = connect_graph(&latents, cal.tau).unwrap();
        let density = graph.density();
        let gate = C5_SIGMAS * sigma + tol;
        let ok = (density - p).abs() <= gate;
        if ok {
            passing += 1;
        }

        let ratio = cal.tau * (d as f64 / (1.0 / p).ln()).sqrt();
        if !(C5_RATIO_LO..=C5_RATIO_HI).contains(&ratio) {
            ratio_ok = false;
        }
        lines.push(format!(
            "p={p} d={d}: density {density:.5} vs target (gate {gate:.5}) {}, ratio {ratio:.3}",
            if ok { "ok" } else { "MISS" }
        ));
    }
    let needed = (0.9 * cells as f64).ceil() as usize;
    assert!(
        passing >= needed,
        "only {passing}/{cells} cells within {C5_SIGMAS} sigma:\n{}",
        lines.join("\n")
    );
    assert!(ratio_ok, "threshold ratio left [{C5_RATIO_LO}, {C5_RATIO_HI}]:\n{}", lines.join("\n"));
    println!(
        "criterion 05: PASS ({passing}/{cells} cells within {C5_SIGMAS} sigma at n={C5_N}, \
         all ratios in [{C5_RATIO_LO}, {C5_RATIO_HI}])"
    );
}

#[test]
fn criterion_06_eigensolver_oracle_equivalence() {
    let m = C6_TOP;
    let mut worst_eval = 0.0f64;
    let mut worst_angle = 0.0f64;
    for s in 0..C6_MATRICES {
        let mut cursor = Stream::root(C6_SEED).substream(s).cursor();
        let n = C6_N;
        let mut rows = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let g = cursor.next_normal();
                rows[i * n + j] = g;
                rows[j * n + i] = g;
            }
        }
        let op = DenseSym::from_rows(n, rows).unwrap();
        let dense = eigentop_dense(&op, m).unwrap();
        let iter = eigentop_iterative(&op, m).unwrap();

        for i in 0..m {
            let dev = (dense.eigenvalues[i] - iter.eigenvalues[i]).abs();
            worst_eval = worst_eval.max(dev);
            assert!(dev <= C6_EVAL_TOL, "matrix {s} eigenvalue {i}: dev {dev:.2e}");
        }

        // Principal angles between the two m-dimensional eigenspaces via
        // the cross-Gram singular values.
        let mut cross = DMatrix::zeros(m, m);
        for i in 0..m {
            let vd = dense.vector(i);
            for j in 0..m {
                let vi = iter.vector(j);
                cross[(i, j)] = vd.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let smin = cross
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v));
        let angle = smin.clamp(-1.0, 1.0).acos();
        worst_angle = worst_angle.max(angle);
        assert!(angle <= C6_ANGLE_TOL, "matrix {s}: principal angle {angle:.2e}");

        let fro = op.frobenius_norm();
        for r in dense.residuals.iter().chain(&iter.residuals) {
            assert!(*r <= 1e-8 * fro, "matrix {s}: residual {r:.2e} above certificate");
        }
    }
    println!(
        "criterion 06: PASS ({C6_MATRICES} random {C6_N}x{C6_N} matrices, top {m}: worst \
         eigenvalue dev {worst_eval:.2e} <= {C6_EVAL_TOL:.0e}, worst principal angle \
         {worst_angle:.2e} <= {C6_ANGLE_TOL:.0e}, residual certificates hold)"
    );
}

fn aggregate_accuracy(records: &[Record], mu: f64) -> f64 {
    records
        .iter()
        .find(|r| r.row == "aggregate" && (r.mu - mu).abs() < 1e-12)
        .and_then(|r| r.accuracy)
        .unwrap_or_else(|| panic!("no aggregate accuracy for mu {mu}"))
}

#[test]
fn criterion_07_clustering_accuracy_regime_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
n = 4000
d = 64
p = 0.2
mu = 0, d^-0.5, 2*d^-0.5, 3*d^-0.5, 4*d^-0.5
trials = 10
seed = 7
tasks = cluster
";
    let mut config = parse_sweep_config(text).unwrap();
    config.out = Some(dir.path().join("c7.csv"));
    let records = sweep(&config).unwrap();

    let inv_sqrt_d = 1.0 / 8.0;
    let chain: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
        .iter()
        .map(|c| aggregate_accuracy(&records, c * inv_sqrt_d))
        .collect();
    for w in chain.windows(2) {
        assert!(
            w[1] >= w[0],
            "accuracy not monotone across the mu chain: {chain:?}"
        );
    }
    let at_null = chain[0];
    assert!(
        (C7_NULL_BAND.0..=C7_NULL_BAND.1).contains(&at_null),
        "null accuracy {at_null} outside {C7_NULL_BAND:?}"
    );
    let at_target = aggregate_accuracy(&records, 3.0 * inv_sqrt_d);
    assert!(
        at_target >= C7_ACC_TARGET,
        "accuracy {at_target} below {C7_ACC_TARGET} at mu = events 3/sqrt(d)"
    );
    println!(
        "criterion 07: PASS (n=4000 d=64 p=0.2, 10 trials: accuracy {chain:?} monotone, \
         {at_target:.3} >= {C7_ACC_TARGET} at 3/sqrt(d), null {at_null:.3} in {C7_NULL_BAND:?})"
    );
}

#[test]
fn criterion_08_gram_oracle_clustering_trend() {
    let sqrt_d = (C8_D as f64).sqrt();
    let mut means = Vec::new();
    for (mi, &mu_sqrt_d) in C8_MU_SQRT_D.iter().enumerate() {
        let mu = mu_sqrt_d / sqrt_d;
        let mut total = 0.0;
        for t in 0..C8_TRIALS {
            let params = ModelParams {
                n: C8_N,
                d: C8_D,
                mu,
                p: None,
                tau: Some(0.0),
                seed: C8_SEED,
            };
            let stream = Stream::root(C8_SEED).substream(mi as u64).substream(t);
            let latents = sample_latents(&params, stream).unwrap();
            let op = GramOp {
                rows: &latents.u,
                n: C8_N,
                d: C8_D,
                scale: 1.0,
            };
            let est = cluster_by_top_eigvec(&op).unwrap();
            let overlap = label_overlap(&est, &latents.labels).unwrap();
            total += (1.0 - overlap) / 2.0;
        }
        means.push(total / C8_TRIALS as f64);
    }
    for w in means.windows(2) {
        assert!(
            w[1] <= w[0],
            "misclassification not non-increasing: {means:?}"
        );
    }
    assert!(
        means[means.len() - 1] < means[0],
        "no overall decrease: {means:?}"
    );
    println!(
        "criterion 08: PASS (latent-Gram clustering, n={C8_N} d={C8_D}, mu*sqrt(d) in \
         {C8_MU_SQRT_D:?}: mean misclassification {means:?} decreasing)"
    );
}

#[test]
fn criterion_09_test_type1_band_and_power() {
    let d = 64usize;
    let (n, p) = (4000usize, 0.2f64);
    let mu_star = (d as f64).powf(-0.75).max((n as f64 * p * d as f64).powf(-0.25));
    let params = ModelParams {
        n,
        d,
        mu: 4.0 * mu_star,
        p: Some(p),
        tau: None,
        seed: C9_SEED,
    };
    let (type1, type2, threshold) = estimate_test_errors(
        &params,
        0.05,
        C9_TRIALS,
        C9_TRIALS,
        DEFAULT_CALIBRATION_SAMPLES,
        Stream::root(C9_SEED),
    )
    .unwrap();
    assert!(
        (C9_TYPE1_BAND.0..=C9_TYPE1_BAND.1).contains(&type1),
        "type-I {type1} outside {C9_TYPE1_BAND:?} (threshold {threshold})"
    );
    let power = 1.0 - type2;
    assert!(power >= C9_POWER_MIN, "power {power} below {C9_POWER_MIN}");
    println!(
        "criterion 09: PASS (alpha 0.05, {C9_TRIALS}+{C9_TRIALS} null trials: type-I {type1:.3} \
         in {C9_TYPE1_BAND:?}; power {power:.3} >= {C9_POWER_MIN} at mu = 4 mu* = {:.4})",
        4.0 * mu_star
    );
}

fn residual_instance(n: usize, d: usize, p: f64, tau: f64) -> (GraphSample, LatentEmbedding) {
    let params = ModelParams {
        n,
        d,
        mu: 0.0,
        p: Some(p),
        tau: Some(tau),
        seed: C10_SEED,
    };
    let latents = sample_latents(&params, Stream::root(C10_SEED).substream(n as u64)).unwrap();
    let graph = connect_graph(&latents, tau).unwrap();
    (graph, latents)
}

#[test]
fn criterion_10_linear_term_improves_rank_one_residual() {
    let (d, p) = (64usize, 0.2f64);
    let samples = DEFAULT_CALIBRATION_SAMPLES;
    let base = Stream::root(C10_SEED);
    let cal = calibrate_tau(
        d,
        0.0,
        p,
        samples,
        default_tolerance(p, samples),
        calibration_stream(base, d, 0.0, p),
    )
    .unwrap();
    let coeffs = ExpansionCoefficients::compute(d - 1, cal.tau, 2).unwrap();

    let (graph, latents) = residual_instance(4000, d, p, cal.tau);
    let baseline = rank_one_residual(&graph, &latents, &coeffs).unwrap();
    let full = linear_residual(&graph, &latents, &coeffs).unwrap();
    assert!(
        full <= C10_REDUCTION * baseline,
        "residual {full} vs rank-one baseline {baseline}: reduction below 10%"
    );

    let (small_graph, small_latents) = residual_instance(1000, d, p, cal.tau);
    let small = linear_residual(&small_graph, &small_latents, &coeffs).unwrap();
    let scaled_small = small / (1000.0 * p);
    let scaled_large = full / (4000.0 * p);
    assert!(
        scaled_large < scaled_small,
        "residual/(np) did not decrease: {scaled_small} -> {scaled_large}"
    );
    println!(
        "criterion 10: PASS (mu=0 n=4000 d=64 p=0.2: residual {full:.2} <= 0.9 x {baseline:.2}; \
         residual/(np) {scaled_small:.4} -> {scaled_large:.4} decreasing)"
    );
}

#[test]
fn criterion_11_no_crossing_edges_in_separated_regime() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
n = 2000
d = 64
p = 0.2
mu = 1.5*(logn/d)^0.25
trials = 20
seed = 1101
tasks = crossing
";
    let mut config = parse_sweep_config(text).unwrap();
    config.out = Some(dir.path().join("c11.csv"));
    config.seed = C11_SEED;
    config.trials = C11_TRIALS;
    let records = sweep(&config).unwrap();
    let zero = records
        .iter()
        .filter(|r| r.row == "trial" && r.status == "ok" && r.crossing_edges == Some(0))
        .count();
    assert!(
        zero >= C11_MIN_ZERO,
        "only {zero}/{C11_TRIALS} trials had zero crossing edges"
    );
    println!(
        "criterion 11: PASS (mu = 1.5 (log n / d)^(1/4), n=2000 d=64: {zero}/{C11_TRIALS} \
         trials with zero crossing edges >= {C11_MIN_ZERO})"
    );
}

#[test]
fn criterion_12_detection_auc_bands() {
    let (n, d, p) = (4000usize, 64usize, 0.2f64);
    let nd = (n * d) as f64;
    let mu_low = 0.5 * nd.powf(-0.25);
    let mu_high = 8.0 * nd.powf(-0.25);
    let mu_star = (d as f64).powf(-0.75).max((n as f64 * p * d as f64).powf(-0.25));
    assert!(mu_high > mu_star, "high separation {mu_high} does not exceed mu* {mu_star}");

    let params_low = ModelParams {
        n,
        d,
        mu: mu_low,
        p: Some(p),
        tau: None,
        seed: C12_SEED_LOW,
    };
    let (auc_low, se_low) = detection_auc(
        &params_low,
        C12_TRIALS,
        DEFAULT_CALIBRATION_SAMPLES,
        Stream::root(C12_SEED_LOW),
    )
    .unwrap();
    assert!(
        (C12_LOW_BAND.0..=C12_LOW_BAND.1).contains(&auc_low),
        "AUC {auc_low} (se {se_low}) outside {C12_LOW_BAND:?} at mu = 0.5 (nd)^(-1/4)"
    );

    let params_high = ModelParams {
        n,
        d,
        mu: mu_high,
        p: Some(p),
        tau: None,
        seed: C12_SEED_HIGH,
    };
    let (auc_high, _) = detection_auc(
        &params_high,
        C12_TRIALS,
        DEFAULT_CALIBRATION_SAMPLES,
        Stream::root(C12_SEED_HIGH),
    )
    .unwrap();
    assert!(auc_high >= C12_HIGH_MIN, "AUC {auc_high} below {C12_HIGH_MIN}");
    println!(
        "criterion 12: PASS ({C12_TRIALS} trials: AUC {auc_low:.3} in {C12_LOW_BAND:?} at \
         mu = {mu_low:.4}; AUC {auc_high:.3} >= {C12_HIGH_MIN} at mu = {mu_high:.4})"
    );
}

fn random_rows(cursor: &mut gmbm::rng::Cursor, n: usize, d: usize, scale: f64) -> Vec<f64> {
    let mut rows = vec![0.0; n * d];
    cursor.fill_normal(&mut rows);
    for v in rows.iter_mut() {
        *v *= scale;
    }
    rows
}

fn orthogonal(cursor: &mut gmbm::rng::Cursor, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| cursor.next_normal());
    g.qr().q()
}

#[test]
fn criterion_13_metric_identities() {
    let mut cursor = Stream::root(C13_SEED).cursor();

    // Rotation invariance of the pair and operator errors.
    let (n, d) = (60usize, 6usize);
    let u = random_rows(&mut cursor, n, d, 1.0 / (d as f64).sqrt());
    let mut u_hat = u.clone();
    let noise = random_rows(&mut cursor, n, d, 0.1 / (d as f64).sqrt());
    for (h, z) in u_hat.iter_mut().zip(&noise) {
        *h += z;
    }
    let base_pair = pair_error(&u_hat, &u, n, d).unwrap();
    let base_op = operator_error(&u_hat, &u, n, d).unwrap();
    let mut worst_rot = 0.0f64;
    for _ in 0..C13_ROTATIONS {
        let q = orthogonal(&mut cursor, d);
        let mut rotated = vec![0.0; n * d];
        for i in 0..n {
            for b in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += u_hat[i * d + a] * q[(a, b)];
                }
                rotated[i * d + b] = acc;
            }
        }
        let rot_pair = pair_error(&rotated, &u, n, d).unwrap();
        let rot_op = operator_error(&rotated, &u, n, d).unwrap();
        for (x, y) in [
            (rot_pair.0, base_pair.0),
            (rot_pair.1, base_pair.1),
            (rot_pair.2, base_pair.2),
            (rot_op.0, base_op.0),
            (rot_op.1, base_op.1),
        ] {
            let dev = (x - y).abs();
            worst_rot = worst_rot.max(dev);
            assert!(dev <= C13_TOL, "rotation changed a metric by {dev}");
        }
    }

    // Sign-flip invariance and hand values for the label overlap.
    let labels: Vec<i8> = (0..101).map(|_| cursor.next_sign()).collect();
    let other: Vec<i8> = (0..101).map(|_| cursor.next_sign()).collect();
    let flipped_x: Vec<i8> = labels.iter().map(|v| -v).collect();
    let flipped_y: Vec<i8> = other.iter().map(|v| -v).collect();
    let base = label_overlap(&labels, &other).unwrap();
    assert_eq!(base, label_overlap(&flipped_x, &other).unwrap());
    assert_eq!(base, label_overlap(&labels, &flipped_y).unwrap());
    assert_eq!(label_overlap(&labels, &labels).unwrap(), 1.0);
    assert_eq!(label_overlap(&labels, &flipped_x).unwrap(), 1.0);
    let x: Vec<i8> = vec![1; 100];
    let mut y = x.clone();
    for v in y.iter_mut().take(25) {
        *v = -1;
    }
    assert_eq!(label_overlap(&x, &y).unwrap(), 0.5);

    // Brute-force pair-error oracle on a random 50 x 5 instance.
    let (n2, d2) = (50usize, 5usize);
    let u2 = random_rows(&mut cursor, n2, d2, 1.0);
    let h2 = random_rows(&mut cursor, n2, d2, 1.0);
    let (abs, norm, rel) = pair_error(&h2, &u2, n2, d2).unwrap();
    let (mut oabs, mut onorm) = (0.0f64, 0.0f64);
    for i in 0..n2 {
        for j in 0..n2 {
            let mut gh = 0.0;
            let mut gu = 0.0;
            for k in 0..d2 {
                gh += h2[i * d2 + k] * h2[j * d2 + k];
                gu += u2[i * d2 + k] * u2[j * d2 + k];
            }
            oabs += (gh - gu).abs();
            onorm += gu.abs();
        }
    }
    oabs /= (n2 * n2) as f64;
    onorm /= (n2 * n2) as f64;
    assert!((abs - oabs).abs() <= C13_TOL);
    assert!((norm - onorm).abs() <= C13_TOL);
    assert!((rel - oabs / onorm).abs() <= C13_TOL);

    // Dense operator-error oracle on a random 100 x 8 instance.
    let (n3, d3) = (100usize, 8usize);
    let u3 = random_rows(&mut cursor, n3, d3, 1.0);
    let h3 = random_rows(&mut cursor, n3, d3, 1.0);
    let (op_err, fro_err) = operator_error(&h3, &u3, n3, d3).unwrap();
    let mut diff = DMatrix::zeros(n3, n3);
    for i in 0..n3 {
        for j in 0..n3 {
            let mut gh = 0.0;
            let mut gu = 0.0;
            for k in 0..d3 {
                gh += h3[i * d3 + k] * h3[j * d3 + k];
                gu += u3[i * d3 + k] * u3[j * d3 + k];
            }
            diff[(i, j)] = gh - gu;
        }
    }
    let want_fro = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eig = SymmetricEigen::new(diff);
    let want_op = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    assert!((op_err - want_op).abs() <= C13_TOL, "{op_err} vs {want_op}");
    assert!((fro_err - want_fro).abs() <= C13_TOL, "{fro_err} vs {want_fro}");

    // Dense oracle for the structural residual on a small sampled graph.
    let (d4, p4) = (16usize, 0.2f64);
    let samples = DEFAULT_CALIBRATION_SAMPLES;
    let cal = calibrate_tau(
        d4,
        0.0,
        p4,
        samples,
        default_tolerance(p4, samples),
        calibration_stream(Stream::root(C13_SEED), d4, 0.0, p4),
    )
    .unwrap();
    let params = ModelParams {
        n: 120,
        d: d4,
        mu: 0.0,
        p: Some(p4),
        tau: Some(cal.tau),
        seed: C13_SEED,
    };
    let latents = sample_latents(&params, Stream::root(C13_SEED).named("residual")).unwrap();
    let graph = connect_graph(&latents, cal.tau).unwrap();
    let coeffs = ExpansionCoefficients::compute(d4 - 1, cal.tau, 2).unwrap();
    let got = linear_residual(&graph, &latents, &coeffs).unwrap();
    let n4 = graph.n;
    let p0 = coeffs.p0();
    let c = (d4 - 1) as f64 * coeffs.lambda[1];
    let slope = coeffs.lambda[1] * (d4 - 1) as f64 * coeffs.tau_eff / p0;
    let ones_t: Vec<f64> = latents.l_centered.iter().map(|l| 1.0 + l * slope).collect();
    let a = graph.to_dense_rows();
    let mut r = DMatrix::zeros(n4, n4);
    for i in 0..n4 {
        for j in 0..n4 {
            let mut gram = 0.0;
            for k in 0..d4 {
                gram += latents.u[i * d4 + k] * latents.u[j * d4 + k];
            }
            r[(i, j)] = a[i * n4 + j] - p0 * ones_t[i] * ones_t[j] - c * gram;
        }
    }
    let want = SymmetricEigen::new(r)
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    assert!((got - want).abs() <= C13_TOL, "{got} vs {want}");

    // Crossing-edge hand cases: two aligned cliques, then a complete
    // bipartite graph across the labels.
    let k = 10u32;
    let mut edges = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            edges.push((i, j));
            edges.push((i + k, j + k));
        }
    }
    let cliques = GraphSample::from_edges(2 * k as usize, &edges, GraphMeta::default()).unwrap();
    let mut aligned = vec![1i8; k as usize];
    aligned.extend(vec![-1i8; k as usize]);
    assert_eq!(crossing_edge_count(&cliques, &aligned).unwrap(), 0);
    let mut cross_edges = Vec::new();
    for i in 0..k {
        for j in 0..k {
            cross_edges.push((i, j + k));
        }
    }
    let bipartite =
        GraphSample::from_edges(2 * k as usize, &cross_edges, GraphMeta::default()).unwrap();
    assert_eq!(
        crossing_edge_count(&bipartite, &aligned).unwrap(),
        bipartite.edge_count
    );

    println!(
        "criterion 13: PASS ({C13_ROTATIONS} rotations change metrics by <= {worst_rot:.2e}; \
         sign-flip and hand label values exact; pair, operator, residual, and crossing oracles \
         within {C13_TOL:.0e})"
    );
}
