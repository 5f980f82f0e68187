//! Conversions between regression coefficients and the association
//! parameter θ.
//!
//! For a linear regression `Y = β₀ + x̃ᵀβ + ε` with `Var ε = σ²`,
//! `σ² = σ_Y² − ‖β‖²` in the `Cov(x̃)` norm and `θ = β/σ²`. The reverse map
//! goes through `f(u) = u/(σ_Y² − u²)`, which is strictly increasing on
//! `[0, σ_Y)` and satisfies `f(‖β‖) = ‖θ‖`; its inverse is the positive root
//! of `v·u² + u − v·σ_Y² = 0`,
//!
//! ```text
//! f⁻¹(v) = (−1 + √(1 + 4v²σ_Y²)) / (2v),   f⁻¹(0) = 0,
//! ```
//!
//! and `β = (σ_Y² − f⁻¹(‖θ‖)²)·θ`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matkit::spd_inverse;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearBridgeInput {
    #[serde(with = "crate::serde_matrix::vector")]
    pub beta: DVector<f64>,
    pub sigma_y2: f64,
    #[serde(with = "crate::serde_matrix")]
    pub cov_x: DMatrix<f64>,
}

fn check_cov(cov: &DMatrix<f64>, len: usize, name: &str) -> Result<()> {
    if cov.shape() != (len, len) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {len}x{len}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.clone().cholesky().is_none() {
        return Err(Error::Domain(format!("{name} is not positive definite")));
    }
    Ok(())
}

/// `‖v‖_A = √(vᵀAv)`.
pub fn cov_norm(v: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    v.dot(&(a * v)).max(0.0).sqrt()
}

/// `f(u) = u / (σ_Y² − u²)`.
pub fn norm_map(u: f64, sigma_y2: f64) -> f64 {
    u / (sigma_y2 - u * u)
}

/// Inverse of [`norm_map`] on `[0, σ_Y)`.
pub fn norm_map_inverse(v: f64, sigma_y2: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    // (√(1+x) − 1)/(2v) in cancellation-free form
    let x = 4.0 * v * v * sigma_y2;
    x / (2.0 * v * ((1.0 + x).sqrt() + 1.0))
}

/// Conditional variance `σ_Y² − βᵀCov(x̃)β`.
pub fn residual_variance(input: &LinearBridgeInput) -> Result<f64> {
    check_cov(&input.cov_x, input.beta.len(), "Cov(x̃)")?;
    if !(input.sigma_y2 > 0.0) {
        return Err(Error::Domain(format!("σ_Y² must be positive, got {}", input.sigma_y2)));
    }
    let s2 = input.sigma_y2 - input.beta.dot(&(&input.cov_x * &input.beta));
    if !(s2 > 0.0) {
        return Err(Error::Domain(format!("σ_Y² − βᵀCov(x̃)β = {s2} is not positive")));
    }
    Ok(s2)
}

pub fn theta_from_beta_linear(input: &LinearBridgeInput) -> Result<DVector<f64>> {
    Ok(&input.beta / residual_variance(input)?)
}

pub fn beta_from_theta_linear(theta: &DVector<f64>, sigma_y2: f64, cov_x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_cov(cov_x, theta.len(), "Cov(x̃)")?;
    if !(sigma_y2 > 0.0 && sigma_y2.is_finite()) {
        return Err(Error::Domain(format!("σ_Y² must be positive, got {sigma_y2}")));
    }
    let u = norm_map_inverse(cov_norm(theta, cov_x), sigma_y2);
    Ok(theta * (sigma_y2 - u * u))
}

/// `θ = β[Cov(Y) − βᵀCov(x̃)β]⁻¹` for an `L_X×L_Y` coefficient matrix.
pub fn theta_from_beta_mvlinear(
    beta: &DMatrix<f64>,
    cov_y: &DMatrix<f64>,
    cov_x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_cov(cov_x, beta.nrows(), "Cov(x̃)")?;
    check_cov(cov_y, beta.ncols(), "Cov(Y)")?;
    let sigma = cov_y - beta.tr_mul(&(cov_x * beta));
    let inv = spd_inverse(&sigma, "Cov(Y) − βᵀCov(x̃)β")
        .map_err(|_| Error::Domain("Cov(Y) − βᵀCov(x̃)β is not positive definite".into()))?;
    Ok(beta * inv)
}

/// Log-linear regression on `x̃`: the coefficients are θ itself.
pub fn beta_from_theta_loglinear(theta: &DVector<f64>) -> DVector<f64> {
    theta.clone()
}

/// GLM with canonical link and dispersion `phi`: `θ = β/φ`.
pub fn theta_from_glm(beta: &DVector<f64>, phi: f64) -> Result<DVector<f64>> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("dispersion must be positive, got {phi}")));
    }
    Ok(beta / phi)
}
