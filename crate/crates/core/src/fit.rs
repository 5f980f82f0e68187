//! Maximum-likelihood fitting of the log-linear association model, the
//! θ-constrained iterative proportional fitting used to build alternatives,
//! and expected tables under the four sampling schemes.
//!
//! The MLE solves the normal equation `P_H μ̂ = P_H r`, which is the same in
//! all four sampling schemes; it is computed by Newton iterations on the
//! Poisson log-likelihood in the coefficients of the model-space basis.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::{cell_index, ContingencyTable, ModelMatrices, SchemeSpec, TableKind};
use crate::error::{Error, Result};
use crate::matkit::{spd_solve, unvec};
use crate::serde_matrix;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Gradient threshold, scaled by `1 + n`.
    pub gradient_tol: f64,
    /// Threshold on `max|Δη| / (1 + max|η|)`.
    pub eta_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            max_halvings: 10,
            gradient_tol: 1e-10,
            eta_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub mu_hat: ContingencyTable,
    #[serde(with = "serde_matrix::vector")]
    pub eta_hat: DVector<f64>,
    /// `η̂_00 = log μ̂_00`, the intercept on the expectation scale.
    pub alpha_hat: f64,
    #[serde(with = "serde_matrix::vector")]
    pub rho_hat: DVector<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub gamma_hat: DVector<f64>,
    /// `L_X×L_Y`; a single column of length `L` for raw-`Z` models.
    #[serde(with = "serde_matrix")]
    pub theta_hat: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub theta_vec: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_gradient: f64,
}

fn poisson_loglik(r: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    r.iter().zip(eta.iter()).map(|(&ri, &ei)| ri * ei - ei.exp()).sum()
}

/// Fits the model with default options.
pub fn fit_loglinear(table: &ContingencyTable, mm: &ModelMatrices) -> Result<FitResult> {
    fit_loglinear_with(table, mm, &FitOptions::default())
}

pub fn fit_loglinear_with(table: &ContingencyTable, mm: &ModelMatrices, opts: &FitOptions) -> Result<FitResult> {
    if table.rows() != mm.rows() || table.cols() != mm.cols() {
        return Err(Error::Dimension(format!(
            "table is {}x{} but the model expects {}x{}",
            table.rows(),
            table.cols(),
            mm.rows(),
            mm.cols()
        )));
    }
    for (what, totals) in [("row", table.row_totals()), ("column", table.col_totals())] {
        if let Some(i) = totals.iter().position(|&t| t <= 0.0) {
            return Err(Error::Domain(format!("{what} {i} has zero total")));
        }
    }

    let h = &mm.hbasis;
    let r = table.to_vec();
    let n = table.total();
    let n_cells = r.len() as f64;

    // start: log of the flattened table rescaled to total n, projected onto span(H)
    let adjust = n / (n + 0.5 * n_cells);
    let eta0 = r.map(|x| ((x + 0.5) * adjust).ln());
    let rhs = DMatrix::from_column_slice(h.ncols(), 1, (h.transpose() * &eta0).as_slice());
    let mut beta = spd_solve(&h.tr_mul(h), &rhs, "HᵀH")?.column(0).into_owned();
    let mut eta = h * &beta;
    let mut ll = poisson_loglik(&r, &eta);

    let grad_tol = opts.gradient_tol * (1.0 + n);
    let mut iterations = 0;
    let mut max_gradient = f64::INFINITY;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mu = eta.map(f64::exp);
        let gradient = h.transpose() * (&r - &mu);
        // weighted Gram HᵀDH
        let mut dh = h.clone();
        for (i, mut row) in dh.row_iter_mut().enumerate() {
            row *= mu[i];
        }
        let info = h.tr_mul(&dh);
        let step = spd_solve(
            &info,
            &DMatrix::from_column_slice(gradient.len(), 1, gradient.as_slice()),
            "HᵀDH",
        )?
        .column(0)
        .into_owned();

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_eta = h * &candidate;
        let mut cand_ll = poisson_loglik(&r, &cand_eta);
        let mut halvings = 0;
        while !(cand_ll >= ll) && halvings < opts.max_halvings {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_eta = h * &candidate;
            cand_ll = poisson_loglik(&r, &cand_eta);
            halvings += 1;
        }
        iterations += 1;
        let change = (&cand_eta - &eta).amax() / (1.0 + cand_eta.amax());
        beta = candidate;
        eta = cand_eta;
        ll = cand_ll;

        let mu = eta.map(f64::exp);
        max_gradient = (h.transpose() * (&r - &mu)).amax();
        if max_gradient <= grad_tol && change <= opts.eta_tol {
            converged = true;
            break;
        }
    }

    let mu = eta.map(f64::exp);
    let mu_table = ContingencyTable::from_vec(&mu, mm.rows(), mm.cols(), TableKind::Expected)?;
    if !converged || mu.iter().any(|x| !x.is_finite()) {
        let (min_fitted, min_row, min_col) = mu_table.min_cell();
        return Err(Error::NonConvergence {
            iterations,
            max_gradient,
            min_fitted,
            min_row,
            min_col,
        });
    }

    let (gamma_hat, theta_vec) = extract_lambda(&eta, mm)?;
    let rows = mm.rows();
    let eta00 = eta[cell_index(0, 0, rows)];
    let rho_hat = DVector::from_fn(mm.j, |j, _| eta[cell_index(j + 1, 0, rows)] - eta00);
    let theta_hat = match mm.factor_dims {
        Some((lx, ly)) => unvec(&theta_vec, lx, ly)?,
        None => DMatrix::from_column_slice(theta_vec.len(), 1, theta_vec.as_slice()),
    };
    Ok(FitResult {
        mu_hat: mu_table,
        eta_hat: eta,
        alpha_hat: eta00,
        rho_hat,
        gamma_hat,
        theta_hat,
        theta_vec,
        converged,
        iterations,
        max_gradient,
    })
}

/// `(γ°, vec θ) = (Bᵀη, Z°⁻Cᵀη)`.
pub fn extract_lambda(eta: &DVector<f64>, mm: &ModelMatrices) -> Result<(DVector<f64>, DVector<f64>)> {
    if eta.len() != mm.cell_count() {
        return Err(Error::Dimension(format!(
            "η has length {}, expected {}",
            eta.len(),
            mm.cell_count()
        )));
    }
    let gamma = mm.b.transpose() * eta;
    let theta = &mm.zcirc_left_inverse * (mm.c.transpose() * eta);
    Ok((gamma, theta))
}

#[derive(Debug, Clone, Copy)]
pub struct IpfOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        IpfOptions {
            tolerance: 1e-12,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IpfResult {
    /// Joint density with the requested marginals, summing to 1.
    pub density: ContingencyTable,
    pub sweeps: usize,
    /// Final max absolute marginal discrepancy.
    pub discrepancy: f64,
    /// Largest deviation of any log odds ratio from `z_jkᵀ vec θ′`,
    /// checked after every sweep.
    pub max_log_odds_drift: f64,
    /// Whether the marginal discrepancy never increased between sweeps.
    pub monotone: bool,
}

fn max_log_odds_drift(p: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let mut drift: f64 = 0.0;
    for k in 1..p.ncols() {
        for j in 1..p.nrows() {
            let lor = (p[(j, k)] * p[(0, 0)] / (p[(j, 0)] * p[(0, k)])).ln();
            drift = drift.max((lor - target[(j, k)]).abs());
        }
    }
    drift
}

fn marginal_discrepancy(p: &DMatrix<f64>, rows: &[f64], cols: &[f64]) -> f64 {
    let r = p.row_iter().zip(rows).map(|(row, t)| (row.sum() - t).abs());
    let c = p.column_iter().zip(cols).map(|(col, t)| (col.sum() - t).abs());
    r.chain(c).fold(0.0, f64::max)
}

fn check_marginal(name: &str, m: &[f64], len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::Dimension(format!(
            "{name} has {} entries, expected {len}",
            m.len()
        )));
    }
    if m.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::Domain(format!("{name} must be strictly positive")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// The joint density with log odds ratios `z_jkᵀ vec θ′` and the given
/// marginals, by alternating row and column scaling.
pub fn ipf_constrained(
    theta_prime: &DMatrix<f64>,
    row_marg: &[f64],
    col_marg: &[f64],
    mm: &ModelMatrices,
) -> Result<IpfResult> {
    ipf_constrained_with(theta_prime, row_marg, col_marg, mm, &IpfOptions::default())
}

pub fn ipf_constrained_with(
    theta_prime: &DMatrix<f64>,
    row_marg: &[f64],
    col_marg: &[f64],
    mm: &ModelMatrices,
    opts: &IpfOptions,
) -> Result<IpfResult> {
    if theta_prime.len() != mm.l() {
        return Err(Error::Dimension(format!(
            "θ′ has {} entries, the model has L = {}",
            theta_prime.len(),
            mm.l()
        )));
    }
    if let Some((lx, ly)) = mm.factor_dims {
        if theta_prime.shape() != (lx, ly) && theta_prime.shape() != (lx * ly, 1) {
            return Err(Error::Dimension(format!(
                "θ′ is {:?}, expected {lx}x{ly}",
                theta_prime.shape()
            )));
        }
    }
    check_marginal("row marginal", row_marg, mm.rows())?;
    check_marginal("column marginal", col_marg, mm.cols())?;

    let theta_vec = DVector::from_column_slice(theta_prime.as_slice());
    let psi_vec = &mm.z * &theta_vec;
    let psi = DMatrix::from_column_slice(mm.rows(), mm.cols(), psi_vec.as_slice());
    // odds-ratio kernel, rescaled to avoid overflow
    let shift = psi.max();
    let mut p = psi.map(|x| (x - shift).exp());

    let mut sweeps = 0;
    let mut discrepancy = marginal_discrepancy(&p, row_marg, col_marg);
    let mut drift: f64 = max_log_odds_drift(&p, &psi);
    let mut monotone = true;
    while discrepancy > opts.tolerance {
        if sweeps == opts.max_sweeps {
            return Err(Error::IpfNonConvergence { sweeps, discrepancy });
        }
        for (j, mut row) in p.row_iter_mut().enumerate() {
            let s = row.sum();
            row *= row_marg[j] / s;
        }
        for (k, mut col) in p.column_iter_mut().enumerate() {
            let s = col.sum();
            col *= col_marg[k] / s;
        }
        sweeps += 1;
        drift = drift.max(max_log_odds_drift(&p, &psi));
        let next = marginal_discrepancy(&p, row_marg, col_marg);
        if sweeps > 1 && next > discrepancy {
            monotone = false;
            log::warn!("IPF marginal discrepancy increased at sweep {sweeps}: {discrepancy:.3e} -> {next:.3e}");
        }
        discrepancy = next;
    }
    Ok(IpfResult {
        density: ContingencyTable::new(p, TableKind::Expected)?,
        sweeps,
        discrepancy,
        max_log_odds_drift: drift,
        monotone,
    })
}

/// Expected table `μ` of a joint density `p` under a sampling scheme.
pub fn expected_table(p: &ContingencyTable, scheme: &SchemeSpec) -> Result<ContingencyTable> {
    p.require_positive()?;
    let total = p.total();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("density sums to {total}, expected 1")));
    }
    scheme.validate(p.rows(), p.cols())?;
    let cells = p.cells();
    let mu = match scheme {
        SchemeSpec::Multinomial { n } => cells * *n,
        SchemeSpec::Poisson { nu } => cells * *nu,
        SchemeSpec::RowMultinomial { row_sizes } => {
            let totals = p.row_totals();
            DMatrix::from_fn(p.rows(), p.cols(), |j, k| row_sizes[j] * cells[(j, k)] / totals[j])
        }
        SchemeSpec::ColumnMultinomial { col_sizes } => {
            let totals = p.col_totals();
            DMatrix::from_fn(p.rows(), p.cols(), |j, k| col_sizes[k] * cells[(j, k)] / totals[k])
        }
    };
    ContingencyTable::new(mu, TableKind::Expected)
}
