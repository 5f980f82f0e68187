//! Asymptotic covariance of the odds-ratio parameter estimator.
//!
//! `Σ_θ̂` is computed by five independent routes which must agree:
//!
//! * **projection**: `Z°⁻ Cᵀ P_H D⁻¹ C Z°⁻ᵀ` with the D-orthogonal projection
//!   onto the model space;
//! * **explicit**: `(Z°ᵀ (CᵀD⁻¹C)⁻¹ Z°)⁻¹` with `CᵀD⁻¹C` filled in entry by
//!   entry from reciprocal cell expectations;
//! * **mr**: `[ZᵀWZ − ZᵀWE(EᵀWE)⁻¹EᵀWZ]⁻¹` where `W` is the row-multinomial
//!   covariance assembled block by block;
//! * **kron**: the explicit form with `Z° = Ỹ°⊗X̃°` and `CᵀD⁻¹C` assembled
//!   from Kronecker products of diagonal and all-ones blocks;
//! * **score**: the θθ block of the inverse of the score covariance
//!   `Cov(U(λ))`, with `W` built as `D(I − P_R)`.
//!
//! Only `D = diag{μ}` and the structural matrices are shared between routes.
//! The sampling scheme enters only `Σ_η̂`, `Σ_μ̂` and `Σ_λ̂`; `Σ_θ̂` never
//! depends on it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::{cell_index, ContingencyTable, DesignSpec, ModelMatrices, SchemeKind, SchemeSpec};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::matkit::{d_projection, kron, spd_inverse, spd_solve, WeightVector};
use crate::serde_matrix;

/// Default tolerance on the relative pairwise deviation between routes.
pub const REPRESENTATION_TOL: f64 = 1e-8;

fn weights(mu: &ContingencyTable) -> Result<WeightVector> {
    mu.require_positive()?;
    WeightVector::new(mu.to_vec())
}

fn check_shape(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<()> {
    if mu.rows() != mm.rows() || mu.cols() != mm.cols() {
        return Err(Error::Dimension(format!(
            "table is {}x{} but the model expects {}x{}",
            mu.rows(),
            mu.cols(),
            mm.rows(),
            mm.cols()
        )));
    }
    Ok(())
}

/// Basis of the space `N` whose projection is fixed by the sampling design.
pub fn fixed_space_basis(kind: SchemeKind, mm: &ModelMatrices) -> DMatrix<f64> {
    let n = mm.cell_count();
    match kind {
        SchemeKind::M => DMatrix::from_element(n, 1, 1.0),
        SchemeKind::P => DMatrix::zeros(n, 0),
        SchemeKind::MR => mm.f.clone(),
        SchemeKind::MC => mm.g.clone(),
    }
}

/// `(Σ_μ̂, Σ_η̂) = (D[P_H − P_N], [P_H − P_N]D⁻¹)`.
pub fn sigma_eta_mu(
    mu: &ContingencyTable,
    mm: &ModelMatrices,
    scheme: &SchemeSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shape(mu, mm)?;
    scheme.validate(mu.rows(), mu.cols())?;
    let w = weights(mu)?;
    let ph = d_projection(&mm.hbasis, &w)?;
    let pn = d_projection(&fixed_space_basis(scheme.kind(), mm), &w)?;
    let diff = ph.matrix() - pn.matrix();
    let sigma_mu = w.diag() * &diff;
    let sigma_eta = diff * w.inv_diag();
    Ok((sigma_mu, sigma_eta))
}

/// `(Bᵀ ; Z°⁻Cᵀ)`, mapping `η` to `λ = (γ°, vec θ)`.
fn lambda_map(mm: &ModelMatrices) -> DMatrix<f64> {
    let k = mm.k;
    let l = mm.l();
    let mut a = DMatrix::zeros(k + l, mm.cell_count());
    a.rows_mut(0, k).copy_from(&mm.b.transpose());
    a.rows_mut(k, l).copy_from(&(&mm.zcirc_left_inverse * mm.c.transpose()));
    a
}

/// `Σ_λ̂` for `λ = (γ°, vec θ)` under the given scheme.
pub fn sigma_lambda(mu: &ContingencyTable, mm: &ModelMatrices, scheme: &SchemeSpec) -> Result<DMatrix<f64>> {
    let (_, sigma_eta) = sigma_eta_mu(mu, mm, scheme)?;
    let a = lambda_map(mm);
    Ok(&a * sigma_eta * a.transpose())
}

pub fn sigma_theta_projection(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    check_shape(mu, mm)?;
    let w = weights(mu)?;
    let ph = d_projection(&mm.hbasis, &w)?;
    let left = &mm.zcirc_left_inverse * mm.c.transpose();
    Ok(&left * ph.matrix() * w.inv_diag() * left.transpose())
}

/// `CᵀD⁻¹C` from reciprocal expectations; rows and columns indexed by
/// `(j, k)`, `j, k > 0`, `j` fastest.
pub fn ctdc_matrix(mu: &ContingencyTable) -> Result<DMatrix<f64>> {
    mu.require_positive()?;
    let (jn, kn) = (mu.rows() - 1, mu.cols() - 1);
    let inv = |j: usize, k: usize| 1.0 / mu.get(j, k);
    let size = jn * kn;
    let mut out = DMatrix::zeros(size, size);
    for k in 1..=kn {
        for j in 1..=jn {
            let a = (j - 1) + jn * (k - 1);
            for m in 1..=kn {
                for l in 1..=jn {
                    let b = (l - 1) + jn * (m - 1);
                    let mut v = inv(0, 0);
                    if j == l {
                        v += inv(j, 0);
                    }
                    if k == m {
                        v += inv(0, k);
                    }
                    if j == l && k == m {
                        v += inv(j, k);
                    }
                    out[(a, b)] = v;
                }
            }
        }
    }
    Ok(out)
}

pub fn sigma_theta_explicit(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    check_shape(mu, mm)?;
    let ctdc = ctdc_matrix(mu)?;
    let solved = spd_solve(&ctdc, &mm.zcirc, "CᵀD⁻¹C")?;
    spd_inverse(&mm.zcirc.tr_mul(&solved), "Z°ᵀ(CᵀD⁻¹C)⁻¹Z°")
}

/// Row-multinomial covariance `blockdiag(diag{μ_j·} − μ_j+⁻¹ μ_j· μ_j·ᵀ)`
/// in cell order.
pub fn cov_mr_blockwise(mu: &ContingencyTable) -> Result<DMatrix<f64>> {
    mu.require_positive()?;
    let rows = mu.rows();
    let cols = mu.cols();
    let n = rows * cols;
    let totals = mu.row_totals();
    let mut w = DMatrix::zeros(n, n);
    for j in 0..rows {
        for k in 0..cols {
            let a = cell_index(j, k, rows);
            for m in 0..cols {
                let b = cell_index(j, m, rows);
                let mut v = -mu.get(j, k) * mu.get(j, m) / totals[j];
                if k == m {
                    v += mu.get(j, k);
                }
                w[(a, b)] = v;
            }
        }
    }
    Ok(w)
}

pub fn sigma_theta_mr(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    check_shape(mu, mm)?;
    let w = cov_mr_blockwise(mu)?;
    let wz = &w * &mm.z;
    let we = &w * &mm.e;
    let ete = mm.e.tr_mul(&we);
    let etz = mm.e.tr_mul(&wz);
    let ztz = mm.z.tr_mul(&wz);
    let correction = etz.tr_mul(&spd_solve(&ete, &etz, "EᵀWE")?);
    spd_inverse(&(ztz - correction), "ZᵀWZ − ZᵀWE(EᵀWE)⁻¹EᵀWZ")
}

/// Kronecker route: `((Ỹ°ᵀ⊗X̃°ᵀ)(CᵀD⁻¹C)⁻¹(Ỹ°⊗X̃°))⁻¹`, built from the
/// scores alone.
pub fn sigma_theta_kron(mu: &ContingencyTable, spec: &DesignSpec) -> Result<DMatrix<f64>> {
    spec.check_table_shape(mu)?;
    mu.require_positive()?;
    let (jn, kn) = (spec.j(), spec.k());
    let inv_inner = DVector::from_fn(jn * kn, |i, _| {
        let (j, k) = (i % jn + 1, i / jn + 1);
        1.0 / mu.get(j, k)
    });
    let row_ref = DMatrix::from_diagonal(&DVector::from_fn(jn, |j, _| 1.0 / mu.get(j + 1, 0)));
    let col_ref = DMatrix::from_diagonal(&DVector::from_fn(kn, |k, _| 1.0 / mu.get(0, k + 1)));
    let ones_j = DMatrix::from_element(jn, jn, 1.0);
    let ones_k = DMatrix::from_element(kn, kn, 1.0);
    let ctdc = DMatrix::from_diagonal(&inv_inner)
        + DMatrix::from_element(jn * kn, jn * kn, 1.0 / mu.get(0, 0))
        + kron(&ones_k, &row_ref)
        + kron(&col_ref, &ones_j);
    let zc = kron(spec.ytilde(), spec.xtilde());
    let solved = spd_solve(&ctdc, &zc, "CᵀD⁻¹C")?;
    spd_inverse(&zc.tr_mul(&solved), "(Ỹ°ᵀ⊗X̃°ᵀ)(CᵀD⁻¹C)⁻¹(Ỹ°⊗X̃°)")
}

/// `Cov(U(λ))` for row-conditional sampling with row sizes `μ_j+`:
/// blocks `EᵀWE, EᵀWZ; ZᵀWE, ZᵀWZ` with `W = D(I − P_R)`.
pub fn score_information(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    check_shape(mu, mm)?;
    let w = weights(mu)?;
    let pr = d_projection(&mm.f, &w)?;
    let cov = w.diag() * pr.complement();
    let k = mm.k;
    let l = mm.l();
    let mut ez = DMatrix::zeros(mm.cell_count(), k + l);
    ez.columns_mut(0, k).copy_from(&mm.e);
    ez.columns_mut(k, l).copy_from(&mm.z);
    let info = ez.tr_mul(&(cov * &ez));
    Ok((&info + info.transpose()) * 0.5)
}

/// θθ block of `Cov(U(λ))⁻¹`, inverting the full score covariance.
pub fn sigma_theta_score(mu: &ContingencyTable, mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    let info = score_information(mu, mm)?;
    let full = spd_inverse(&info, "Cov(U(λ))")?;
    let (k, l) = (mm.k, mm.l());
    Ok(full.view((k, k), (l, l)).into_owned())
}

/// Largest `|a − b| / max(1, |reference|)` over all pairs of matrices,
/// with `reference` the first matrix.
pub fn max_pairwise_deviation(mats: &[&DMatrix<f64>]) -> f64 {
    let Some(reference) = mats.first() else {
        return 0.0;
    };
    let mut worst: f64 = 0.0;
    for (i, a) in mats.iter().enumerate() {
        for b in &mats[i + 1..] {
            if a.shape() != b.shape() {
                return f64::INFINITY;
            }
            for ((x, y), r) in a.iter().zip(b.iter()).zip(reference.iter()) {
                worst = worst.max((x - y).abs() / r.abs().max(1.0));
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceBundle {
    #[serde(with = "serde_matrix")]
    pub sigma_theta_projection: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_theta_explicit: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_theta_mr: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_theta_kron: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_theta_score: DMatrix<f64>,
    /// Blocks `(Σ_γ°, Σ_γ°θ; Σ_θγ°, Σ_θ)` under `scheme_used_for_eta`.
    #[serde(with = "serde_matrix")]
    pub sigma_lambda: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub score_information: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_eta: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_mu: DMatrix<f64>,
    pub scheme_used_for_eta: SchemeSpec,
    pub max_pairwise_deviation: f64,
}

impl CovarianceBundle {
    /// The five `Σ_θ̂` routes in a fixed order.
    pub fn routes(&self) -> [(&'static str, &DMatrix<f64>); 5] {
        [
            ("projection", &self.sigma_theta_projection),
            ("explicit", &self.sigma_theta_explicit),
            ("mr", &self.sigma_theta_mr),
            ("kron", &self.sigma_theta_kron),
            ("score", &self.sigma_theta_score),
        ]
    }
}

/// All covariance representations at the fitted table.
pub fn covariance_bundle(
    fit: &FitResult,
    mm: &ModelMatrices,
    spec: &DesignSpec,
    scheme: &SchemeSpec,
) -> Result<CovarianceBundle> {
    if !fit.converged {
        return Err(Error::Domain("fit did not converge".into()));
    }
    covariance_bundle_at(&fit.mu_hat, mm, spec, scheme, REPRESENTATION_TOL)
}

/// All covariance representations at a given expected table `mu`.
pub fn covariance_bundle_at(
    mu: &ContingencyTable,
    mm: &ModelMatrices,
    spec: &DesignSpec,
    scheme: &SchemeSpec,
    tolerance: f64,
) -> Result<CovarianceBundle> {
    if mm.factor_dims != Some((spec.lx(), spec.ly())) || mm.j != spec.j() || mm.k != spec.k() {
        return Err(Error::Dimension(
            "model matrices were not built from this design".into(),
        ));
    }
    let projection = sigma_theta_projection(mu, mm).map_err(Error::route("projection"))?;
    let explicit = sigma_theta_explicit(mu, mm).map_err(Error::route("explicit"))?;
    let mr = sigma_theta_mr(mu, mm).map_err(Error::route("mr"))?;
    let kron_form = sigma_theta_kron(mu, spec).map_err(Error::route("kron"))?;
    let score = sigma_theta_score(mu, mm).map_err(Error::route("score"))?;
    let lambda = sigma_lambda(mu, mm, scheme).map_err(Error::route("lambda"))?;
    let info = score_information(mu, mm).map_err(Error::route("score"))?;
    let (sigma_mu, sigma_eta) = sigma_eta_mu(mu, mm, scheme).map_err(Error::route("eta"))?;

    let routes = [
        ("projection", &projection),
        ("explicit", &explicit),
        ("mr", &mr),
        ("kron", &kron_form),
        ("score", &score),
    ];
    for (name, m) in routes {
        spd_inverse(m, name).map_err(Error::route(name))?;
    }
    let deviation = max_pairwise_deviation(&routes.map(|(_, m)| m));
    if !(deviation <= tolerance) {
        return Err(Error::RepresentationMismatch { deviation, tolerance });
    }
    Ok(CovarianceBundle {
        sigma_theta_projection: projection,
        sigma_theta_explicit: explicit,
        sigma_theta_mr: mr,
        sigma_theta_kron: kron_form,
        sigma_theta_score: score,
        sigma_lambda: lambda,
        score_information: info,
        sigma_eta,
        sigma_mu,
        scheme_used_for_eta: scheme.clone(),
        max_pairwise_deviation: deviation,
    })
}
