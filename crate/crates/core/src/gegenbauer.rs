//! Orthonormal Gegenbauer-type polynomial basis for the sphere inner-product
//! law, spherical-harmonic space dimensions, and the expansion coefficients
//! of the edge-threshold indicator function.
//!
//! The basis {q_k} is orthonormal for the law of xi = sqrt(dim) * <v, w>
//! with v, w independent uniform unit vectors in R^dim. The indicator
//! 1(xi >= sqrt(dim) * tau) expands as sum_k c_k q_k; the normalized
//! coefficients lambda_k = c_k / sqrt(N_k) drive both the threshold
//! calibration identities and the linear approximation of the adjacency
//! matrix.

use crate::calibrate::{sphere_tail, TailQuery};
use crate::error::{Error, Result};
use crate::special::{integrate_adaptive, ln_gamma};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

/// Exact binomial coefficient C(n, k).
fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        // Exact at every step: the running product is C(n, i+1) * (i+1)! / ...
        // i.e. numerator grows before the division, which is always exact.
        acc = acc * BigUint::from(n - k + i + 1) / BigUint::from(i + 1);
    }
    acc
}

/// Dimension of the degree-k spherical-harmonic space on the unit sphere in
/// R^dim, exact. By convention N_0 = 1 (the constant function); the general
/// formula is degenerate at k = 0.
pub fn harmonic_dimension(dim: usize, k: usize) -> Result<BigUint> {
    if dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "harmonic dimensions need dim >= 3, got {dim}"
        )));
    }
    let d = dim as u64;
    let k = k as u64;
    Ok(match k {
        0 => BigUint::from(1u32),
        1 => BigUint::from(d),
        // C(dim+k-1, k) - C(dim+k-3, k-2): dimension of harmonic polys as
        // homogeneous minus divisible-by-r^2 part. Integer by construction,
        // equal to the quotient form ((2k+dim-2)/k) * C(k+dim-3, k-1).
        _ => binomial(d + k - 1, k) - binomial(d + k - 3, k - 2),
    })
}

/// Natural log of N_k, evaluated in log space so it never overflows.
pub fn harmonic_dimension_log(dim: usize, k: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "harmonic dimensions need dim >= 3, got {dim}"
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let d = dim as f64;
    let kf = k as f64;
    // ln[(2k+d-2)/k] + ln C(k+d-3, k-1)
    Ok((2.0 * kf + d - 2.0).ln() - kf.ln() + ln_gamma(kf + d - 2.0)
        - ln_gamma(kf)
        - ln_gamma(d - 1.0))
}

/// N_k as f64, falling back to exp(ln N_k) when the exact value exceeds
/// the f64 range.
pub fn harmonic_dimension_f64(dim: usize, k: usize) -> Result<f64> {
    let exact = harmonic_dimension(dim, k)?;
    Ok(exact
        .to_f64()
        .unwrap_or(harmonic_dimension_log(dim, k)?.exp()))
}

/// Orthonormal polynomial basis with cached recurrence coefficients.
///
/// Seeds q_0 = 1, q_1 = x; for k >= 1 the forward step is
/// q_{k+1} = (x q_k - a_{k-1} q_{k-1}) / a_k with
/// a_k = sqrt((k+1)(dim+k-2) dim / ((dim+2k)(dim+2k-2))).
/// Forward recurrence grows for |x| > 1 but evaluations stay on
/// [-sqrt(dim), sqrt(dim)] and degrees stay small at desk scale.
#[derive(Debug, Clone)]
pub struct GegenbauerBasis {
    dim: usize,
    max_degree: usize,
    a: Vec<f64>,
}

impl GegenbauerBasis {
    pub fn new(dim: usize, max_degree: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidParameter(format!(
                "polynomial basis needs dim >= 3, got {dim}"
            )));
        }
        let d = dim as f64;
        let a = (0..=max_degree)
            .map(|k| {
                let kf = k as f64;
                ((kf + 1.0) * (d + kf - 2.0) * d / ((d + 2.0 * kf) * (d + 2.0 * kf - 2.0)))
                    .sqrt()
            })
            .collect();
        Ok(GegenbauerBasis { dim, max_degree, a })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Recurrence coefficient a_k.
    pub fn coeff(&self, k: usize) -> Option<f64> {
        self.a.get(k).copied()
    }

    /// Evaluate q_k(x) by the forward three-term recurrence.
    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        if k > self.max_degree {
            return Err(Error::InvalidParameter(format!(
                "degree {k} exceeds basis max_degree {}",
                self.max_degree
            )));
        }
        if k == 0 {
            return Ok(1.0);
        }
        let mut prev = 1.0;
        let mut cur = x;
        for j in 1..k {
            let next = (x * cur - self.a[j - 1] * prev) / self.a[j];
            prev = cur;
            cur = next;
        }
        Ok(cur)
    }
}

/// Computation route for one expansion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientMethod {
    ClosedForm,
    Quadrature,
}

impl std::fmt::Display for CoefficientMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoefficientMethod::ClosedForm => write!(f, "closed-form"),
            CoefficientMethod::Quadrature => write!(f, "quadrature"),
        }
    }
}

/// Expansion of the threshold indicator in the orthonormal basis.
#[derive(Debug, Clone)]
pub struct ExpansionCoefficients {
    pub dim: usize,
    pub tau_eff: f64,
    /// lambda_k = c_k / sqrt(N_k), k = 0..=kmax. lambda_0 is the edge
    /// probability mass p_0.
    pub lambda: Vec<f64>,
    /// Raw basis coefficients c_k = E[q_k(xi) 1(xi >= sqrt(dim) tau)].
    pub c: Vec<f64>,
    pub method: Vec<CoefficientMethod>,
}

/// Normalized first coefficient in closed form:
/// lambda_1 = Gamma(dim/2) / ((dim-1) sqrt(pi) Gamma((dim-1)/2))
///            * (1 - tau^2)^((dim-1)/2).
///
/// The power is evaluated as exp(((dim-1)/2) ln1p(-tau^2)) so it stays
/// accurate at large dim.
pub fn lambda1_closed_form(dim: usize, tau: f64) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "lambda_1 needs dim >= 3, got {dim}"
        )));
    }
    if tau.abs() >= 1.0 {
        return Ok(0.0);
    }
    let d = dim as f64;
    let log_val = ln_gamma(0.5 * d) - ln_gamma(0.5 * (d - 1.0)) - (d - 1.0).ln()
        - 0.5 * std::f64::consts::PI.ln()
        + 0.5 * (d - 1.0) * (-tau * tau).ln_1p();
    Ok(log_val.exp())
}

/// One expansion coefficient of the indicator 1(xi >= sqrt(dim) * tau_eff).
///
/// k = 0 is the tail mass; k = 1 and k = 2 have closed forms (the second is
/// tau times the first, from evaluating the antiderivative of the degree-2
/// integrand at the endpoints); higher degrees integrate q_k against the
/// density by adaptive quadrature at relative tolerance 1e-8 with the node
/// budget capped at 2^15.
pub fn expansion_coefficient(
    dim: usize,
    tau_eff: f64,
    k: usize,
) -> Result<(f64, f64, CoefficientMethod)> {
    if dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "expansion coefficients need dim >= 3, got {dim}"
        )));
    }
    // Out-of-range thresholds degenerate to the all-or-nothing indicator,
    // which is a multiple of q_0 alone.
    if tau_eff > 1.0 {
        return Ok((0.0, 0.0, CoefficientMethod::ClosedForm));
    }
    if tau_eff < -1.0 {
        let v = if k == 0 { 1.0 } else { 0.0 };
        return Ok((v, v, CoefficientMethod::ClosedForm));
    }
    match k {
        0 => {
            let p0 = sphere_tail(TailQuery {
                dim,
                t: tau_eff,
            })?;
            Ok((p0, p0, CoefficientMethod::Quadrature))
        }
        1 => {
            let l1 = lambda1_closed_form(dim, tau_eff)?;
            let c1 = l1 * (dim as f64).sqrt();
            Ok((l1, c1, CoefficientMethod::ClosedForm))
        }
        2 => {
            let l2 = tau_eff * lambda1_closed_form(dim, tau_eff)?;
            let c2 = l2 * harmonic_dimension_f64(dim, 2)?.sqrt();
            Ok((l2, c2, CoefficientMethod::ClosedForm))
        }
        _ => {
            let basis = GegenbauerBasis::new(dim, k)?;
            let c_k = indicator_projection(&basis, tau_eff, k)?;
            let l_k = c_k / harmonic_dimension_f64(dim, k)?.sqrt();
            Ok((l_k, c_k, CoefficientMethod::Quadrature))
        }
    }
}

/// c_k = E[q_k(xi) 1(xi >= sqrt(dim) tau)] by adaptive quadrature after the
/// xi = sqrt(dim) sin(theta) substitution that removes the endpoint
/// singularity of the density.
fn indicator_projection(basis: &GegenbauerBasis, tau: f64, k: usize) -> Result<f64> {
    let dim = basis.dim() as f64;
    let log_const =
        ln_gamma(0.5 * dim) - ln_gamma(0.5 * (dim - 1.0)) - 0.5 * std::f64::consts::PI.ln();
    let c = log_const.exp();
    let expo = dim - 2.0;
    let f = |theta: f64| -> f64 {
        let ct = theta.cos().max(0.0);
        let weight = if ct == 0.0 { 0.0 } else { (expo * ct.ln()).exp() };
        let xi = dim.sqrt() * theta.sin();
        weight * basis.eval(k, xi).expect("degree within basis bound")
    };
    let lo = tau.asin();
    let hi = 0.5 * std::f64::consts::PI;
    Ok(c * integrate_adaptive(&f, lo, hi, 1e-8, 1 << 15))
}

impl ExpansionCoefficients {
    /// Expand the indicator at `tau_eff` through degree `kmax`.
    pub fn compute(dim: usize, tau_eff: f64, kmax: usize) -> Result<Self> {
        let mut lambda = Vec::with_capacity(kmax + 1);
        let mut c = Vec::with_capacity(kmax + 1);
        let mut method = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let (l, ck, m) = expansion_coefficient(dim, tau_eff, k)?;
            lambda.push(l);
            c.push(ck);
            method.push(m);
        }
        Ok(ExpansionCoefficients {
            dim,
            tau_eff,
            lambda,
            c,
            method,
        })
    }

    /// Tail mass p_0 = lambda_0.
    pub fn p0(&self) -> f64 {
        self.lambda[0]
    }
}
