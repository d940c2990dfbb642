//! Sharpness diagnostics: the dominant Hessian eigenvalue by power iteration
//! and an empirical local Lipschitz constant of the loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{check_len, Objective};
use crate::rng::RngStream;
use crate::vecops::{dot, norm};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    /// Rayleigh-quotient estimate of the largest-magnitude Hessian
    /// eigenvalue (sign preserved).
    pub lambda_max: f64,
    pub iterations_used: usize,
    /// `|λ_k − λ_{k−1}| / |λ_k|` at termination (0 after a single iterate).
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// `max |L(w+δ) − L(w)| / ‖δ‖₂` over the sampled perturbations.
    pub k_hat: f64,
    pub radius: f64,
    pub n_samples: usize,
}

/// Power iteration `v ← Hv/‖Hv‖` from a random unit start drawn from `rng`.
///
/// Stops when the relative change of the Rayleigh quotient drops below
/// `tol` or after `max_iter` Hessian-vector products. A zero product on the
/// first iterate yields `lambda_max = 0`, reported as converged.
pub fn max_hessian_eigenvalue(
    obj: &impl Objective,
    params: &[f64],
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<SharpnessReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    check_len("parameter vector", params.len(), obj.dim())?;

    let mut v = rng.unit_vector(params.len());
    let mut lambda = 0.0;
    let mut residual = 0.0;
    for k in 1..=max_iter {
        let hv = obj.hvp(params, &v)?;
        let hv_norm = norm(&hv);
        if hv_norm == 0.0 {
            // v lies in the Hessian's null space. For symmetric H this can
            // only happen on the first iterate.
            return Ok(SharpnessReport {
                lambda_max: 0.0,
                iterations_used: k,
                residual: 0.0,
                converged: true,
            });
        }
        let next = dot(&v, &hv);
        if k > 1 {
            let scale = next.abs();
            residual = if scale > 0.0 {
                (next - lambda).abs() / scale
            } else {
                (next - lambda).abs()
            };
        }
        lambda = next;
        if k > 1 && residual < tol {
            return Ok(SharpnessReport {
                lambda_max: lambda,
                iterations_used: k,
                residual,
                converged: true,
            });
        }
        v = hv.into_iter().map(|x| x / hv_norm).collect();
    }
    Ok(SharpnessReport {
        lambda_max: lambda,
        iterations_used: max_iter,
        residual,
        converged: false,
    })
}

/// Largest loss change per unit step over `n_samples` perturbations drawn
/// uniformly from the sphere of the given radius around `params`.
pub fn local_lipschitz_estimate(
    obj: &impl Objective,
    params: &[f64],
    radius: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<LipschitzEstimate> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    check_len("parameter vector", params.len(), obj.dim())?;
    let base = obj.loss(params)?;
    let mut k_hat: f64 = 0.0;
    let mut shifted = params.to_vec();
    for _ in 0..n_samples {
        let dir = rng.unit_vector(params.len());
        for ((s, p), d) in shifted.iter_mut().zip(params).zip(&dir) {
            *s = p + radius * d;
        }
        let step: f64 = shifted
            .iter()
            .zip(params)
            .map(|(s, p)| (s - p) * (s - p))
            .sum::<f64>()
            .sqrt();
        if step == 0.0 {
            continue;
        }
        let change = (obj.loss(&shifted)? - base).abs();
        k_hat = k_hat.max(change / step);
    }
    Ok(LipschitzEstimate {
        k_hat,
        radius,
        n_samples,
    })
}
