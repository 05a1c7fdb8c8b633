use crate::linalg::{generalized_max_eig, sym_eig_extremes};
use crate::mhe::IossCertificate;
use crate::{Error, Result};

/// `λ_max(P2, P1)`, the largest eigenvalue of the pencil.
pub fn pencil_max(cert: &IossCertificate) -> Result<f64> {
    generalized_max_eig(&cert.p2, &cert.p1)
}

/// `4 λ_max(P2,P1)² η^M`; the horizon `M` is admissible when this is below 1.
pub fn horizon_condition(cert: &IossCertificate, horizon: u64) -> Result<f64> {
    let lam = pencil_max(cert)?;
    Ok(condition_value(lam, cert.eta, horizon))
}

/// Values within this distance below 1 count as on the boundary, so that a
/// pencil eigenvalue rounded down cannot certify a horizon that only meets
/// the condition with equality.
const BOUNDARY_TOL: f64 = 1e-12;

fn admissible(value: f64) -> bool {
    value < 1.0 - BOUNDARY_TOL
}

fn condition_value(lam: f64, eta: f64, horizon: u64) -> f64 {
    4.0 * lam * lam * eta_pow(eta, horizon)
}

fn eta_pow(eta: f64, k: u64) -> f64 {
    if k == 0 {
        1.0
    } else if k <= i32::MAX as u64 {
        eta.powi(k as i32)
    } else {
        eta.powf(k as f64)
    }
}

/// Smallest `M ≥ max(1, d_max)` with `4 λ_max(P2,P1)² η^M < 1`.
pub fn min_horizon(cert: &IossCertificate, d_max: u64) -> Result<u64> {
    let lam = pencil_max(cert)?;
    let lower = d_max.max(1);
    let holds = |m: u64| admissible(condition_value(lam, cert.eta, m));
    if holds(lower) {
        return Ok(lower);
    }
    if cert.eta <= 0.0 || cert.eta >= 1.0 || !lam.is_finite() {
        return Err(Error::Unsatisfiable(format!(
            "no horizon satisfies 4*lambda^2*eta^M < 1 (lambda = {lam}, eta = {})",
            cert.eta
        )));
    }
    // estimate from logarithms, then settle on the exact boundary
    let estimate = ((4.0 * lam * lam).ln() / -cert.eta.ln()).floor();
    if !estimate.is_finite() || estimate > 1e15 {
        return Err(Error::Unsatisfiable(format!("required horizon is too large ({estimate})")));
    }
    let mut m = (estimate as u64).max(lower);
    while !holds(m) {
        m += 1;
    }
    while m > lower && holds(m - 1) {
        m -= 1;
    }
    Ok(m)
}

/// Contraction factor `ρ = (4 λ_max(P2,P1)² η^M)^{1/M}`.
pub fn contraction_rate(cert: &IossCertificate, horizon: u64) -> Result<f64> {
    let value = horizon_condition(cert, horizon)?;
    if horizon == 0 || !admissible(value) {
        return Err(Error::Unsatisfiable(format!(
            "horizon {horizon} violates 4*lambda^2*eta^M < 1 (value {value})"
        )));
    }
    Ok(value.powf(1.0 / horizon as f64))
}

/// Estimation-error envelope for a certified horizon:
///
/// `2√(λ_max(P2,P1) λ_max(P2)/λ_min(P1)) √ρ^t ‖e_0‖
///  + 2√(λ_max(P2,P1) λ_max(Q)/λ_min(P1)) Σ_{j<t} √ρ^{t−j−1} ‖w_j‖`.
pub fn error_bound(cert: &IossCertificate, horizon: u64, e0_norm: f64, w_norms: &[f64], t: u64) -> Result<f64> {
    let rho = contraction_rate(cert, horizon)?;
    if (w_norms.len() as u64) < t {
        return Err(Error::dimension("disturbance norms", t, w_norms.len()));
    }
    let lam = pencil_max(cert)?;
    let (p2_max, _) = sym_eig_extremes(&cert.p2);
    let (_, p1_min) = sym_eig_extremes(&cert.p1);
    let (q_max, _) = sym_eig_extremes(&cert.q);
    let sqrt_rho = rho.sqrt();
    let c_x = 2.0 * (lam * p2_max / p1_min).sqrt();
    let c_w = 2.0 * (lam * q_max.max(0.0) / p1_min).sqrt();
    let mut sum = 0.0;
    for (j, w) in w_norms.iter().take(t as usize).enumerate() {
        sum += eta_pow(sqrt_rho, t - j as u64 - 1) * w;
    }
    Ok(c_x * eta_pow(sqrt_rho, t) * e0_norm + c_w * sum)
}
