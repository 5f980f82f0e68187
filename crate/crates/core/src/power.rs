//! Wald tests of `Qθ = 0`, their asymptotic power under an alternative θ′,
//! and sample-size search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::asycov::sigma_theta_kron;
use crate::design::{ContingencyTable, DesignSpec, ModelMatrices, TableKind};
use crate::error::{Error, Result};
use crate::fit::{ipf_constrained, IpfResult};
use crate::matkit::{numerical_rank, spd_solve, vec};
use crate::serde_matrix;

/// Tail mass below which the Poisson mixture is truncated.
const SERIES_TAIL: f64 = 1e-14;
const QUANTILE_TOL: f64 = 1e-10;

fn central_cdf(x: f64, df: f64) -> f64 {
    gamma_lr(df / 2.0, x / 2.0)
}

/// CDF of the noncentral χ² with `df` degrees of freedom and noncentrality
/// `noncentrality`, as a Poisson mixture of central χ² CDFs summed outward
/// from the Poisson mode.
pub fn noncentral_chisq_cdf(x: f64, df: usize, noncentrality: f64) -> f64 {
    assert!(df >= 1, "df must be at least 1");
    assert!(noncentrality >= 0.0, "noncentrality must be nonnegative");
    if !(x > 0.0) {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let df = df as f64;
    if noncentrality == 0.0 {
        return central_cdf(x, df);
    }
    let lambda = noncentrality / 2.0;
    let mode = lambda.floor();
    let w_mode = (mode * lambda.ln() - lambda - ln_gamma(mode + 1.0)).exp();
    let term = |i: f64| central_cdf(x, df + 2.0 * i);

    let mut total = w_mode * term(mode);
    // upward: weights fall geometrically once i > λ
    let mut w = w_mode;
    let mut i = mode;
    loop {
        w *= lambda / (i + 1.0);
        i += 1.0;
        total += w * term(i);
        let ratio = lambda / (i + 1.0);
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL {
            break;
        }
    }
    // downward: weights fall once i < λ
    let mut w = w_mode;
    let mut i = mode;
    while i > 0.0 {
        w *= i / lambda;
        i -= 1.0;
        total += w * term(i);
        let ratio = i / lambda;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Upper `1 − p` point of the central χ², by bisection on the CDF.
pub fn chisq_quantile(p: f64, df: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1)");
    let mut hi = (df as f64).max(1.0);
    while noncentral_chisq_cdf(hi, df, 0.0) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if noncentral_chisq_cdf(mid, df, 0.0) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `H₀: Qθ = 0` at level `alpha`, with `Q` of full row rank acting on
/// `vec θ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSpec {
    #[serde(with = "serde_matrix")]
    q: DMatrix<f64>,
    alpha: f64,
}

#[derive(Deserialize)]
struct HypothesisFile {
    #[serde(default = "one")]
    version: u32,
    q: Vec<Vec<f64>>,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

/// Level used when a hypothesis file does not give one.
pub const DEFAULT_ALPHA: f64 = 0.05;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn one() -> u32 {
    1
}

impl HypothesisSpec {
    pub fn new(q: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if q.nrows() == 0 || q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("Q must have at least one finite row".into()));
        }
        let rank = numerical_rank(&q);
        if rank != q.nrows() {
            return Err(Error::Domain(format!("Q has rank {rank} but {} rows", q.nrows())));
        }
        Ok(HypothesisSpec { q, alpha })
    }

    /// All of `vec θ` equal to zero.
    pub fn all_zero(l: usize, alpha: f64) -> Result<Self> {
        HypothesisSpec::new(DMatrix::identity(l, l), alpha)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: HypothesisFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::Parse(format!("unsupported hypothesis version {}", file.version)));
        }
        HypothesisSpec::new(serde_matrix::from_rows(&file.q)?, file.alpha)
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        HypothesisSpec::new(self.q, alpha)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn df(&self) -> usize {
        self.q.nrows()
    }

    fn check_l(&self, l: usize) -> Result<()> {
        if self.q.ncols() != l {
            return Err(Error::Dimension(format!(
                "Q has {} columns but θ has {l} entries",
                self.q.ncols()
            )));
        }
        Ok(())
    }

    /// `(Qθ)ᵀ(QΣQᵀ)⁻¹(Qθ)`.
    fn quadratic_form(&self, theta: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
        self.check_l(theta.len())?;
        let qt = &self.q * theta;
        let qsq = &self.q * sigma * self.q.transpose();
        let rhs = DMatrix::from_column_slice(qt.len(), 1, qt.as_slice());
        let solved = spd_solve(&qsq, &rhs, "QΣQᵀ")?;
        Ok(qt.dot(&solved.column(0)).max(0.0))
    }
}

/// Sampling design for the power calculation, with the planned
/// proportions `n̄_j = n_j/n` or `m̄_k = m_k/n` for the conditional schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme")]
pub enum PowerScheme {
    #[serde(rename = "M")]
    Multinomial,
    #[serde(rename = "MR")]
    RowMultinomial { proportions: Vec<f64> },
    #[serde(rename = "MC")]
    ColumnMultinomial { proportions: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRequest {
    #[serde(with = "serde_matrix")]
    pub theta_prime: DMatrix<f64>,
    pub row_marg: Vec<f64>,
    pub col_marg: Vec<f64>,
    pub scheme: PowerScheme,
}

fn check_distribution(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{name} has {} entries, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("{name} must be positive")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

impl PowerRequest {
    pub fn validate(&self, spec: &DesignSpec) -> Result<()> {
        if self.theta_prime.shape() != (spec.lx(), spec.ly()) {
            return Err(Error::Dimension(format!(
                "θ′ is {}x{}, the design has L_X = {}, L_Y = {}",
                self.theta_prime.nrows(),
                self.theta_prime.ncols(),
                spec.lx(),
                spec.ly()
            )));
        }
        check_distribution("row marginal", &self.row_marg, spec.j() + 1)?;
        check_distribution("column marginal", &self.col_marg, spec.k() + 1)?;
        match &self.scheme {
            PowerScheme::Multinomial => Ok(()),
            PowerScheme::RowMultinomial { proportions } => {
                check_distribution("row proportions", proportions, spec.j() + 1)
            }
            PowerScheme::ColumnMultinomial { proportions } => {
                check_distribution("column proportions", proportions, spec.k() + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Alternative {
    /// Joint density with log odds ratios from θ′ and the requested marginals.
    pub p_prime: ContingencyTable,
    /// `p′` reweighted to the planned row or column proportions; equal to
    /// `p′` under M.
    pub design_density: ContingencyTable,
    #[serde(with = "serde_matrix")]
    pub sigma_prime: DMatrix<f64>,
    #[serde(skip)]
    pub ipf: IpfResult,
}

/// `p′`, its scheme-specific reweighting and `Σ′_θ̂` at total sample size `n`.
pub fn build_alternative(req: &PowerRequest, n: f64, mm: &ModelMatrices, spec: &DesignSpec) -> Result<Alternative> {
    req.validate(spec)?;
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Domain(format!("sample size must be positive, got {n}")));
    }
    let ipf = ipf_constrained(&req.theta_prime, &req.row_marg, &req.col_marg, mm)?;
    let p = ipf.density.cells();
    let density = match &req.scheme {
        PowerScheme::Multinomial => p.clone(),
        PowerScheme::RowMultinomial { proportions } => {
            let totals = ipf.density.row_totals();
            DMatrix::from_fn(p.nrows(), p.ncols(), |j, k| proportions[j] * p[(j, k)] / totals[j])
        }
        PowerScheme::ColumnMultinomial { proportions } => {
            let totals = ipf.density.col_totals();
            DMatrix::from_fn(p.nrows(), p.ncols(), |j, k| proportions[k] * p[(j, k)] / totals[k])
        }
    };
    let design_density = ContingencyTable::new(density, TableKind::Expected)?;
    let sigma_prime = sigma_theta_kron(&design_density.scaled(n)?, spec)?;
    Ok(Alternative {
        p_prime: ipf.density.clone(),
        design_density,
        sigma_prime,
        ipf,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerResult {
    pub n: f64,
    pub alpha: f64,
    pub df: usize,
    pub delta: f64,
    pub critical_value: f64,
    pub power: f64,
    pub p_prime: ContingencyTable,
    #[serde(with = "serde_matrix")]
    pub sigma_prime: DMatrix<f64>,
}

fn power_from_delta(delta: f64, critical_value: f64, hyp: &HypothesisSpec) -> f64 {
    if delta == 0.0 {
        hyp.alpha
    } else {
        1.0 - noncentral_chisq_cdf(critical_value, hyp.df(), delta)
    }
}

/// Asymptotic power of the level-α Wald test of `Qθ = 0` at total sample
/// size `n` when θ = θ′.
pub fn power_at(
    req: &PowerRequest,
    n: f64,
    hyp: &HypothesisSpec,
    mm: &ModelMatrices,
    spec: &DesignSpec,
) -> Result<PowerResult> {
    hyp.check_l(spec.l())?;
    let alt = build_alternative(req, n, mm, spec)?;
    let delta = hyp.quadratic_form(&vec(&req.theta_prime), &alt.sigma_prime)?;
    let critical_value = chisq_quantile(1.0 - hyp.alpha, hyp.df());
    Ok(PowerResult {
        n,
        alpha: hyp.alpha,
        df: hyp.df(),
        delta,
        critical_value,
        power: power_from_delta(delta, critical_value, hyp),
        p_prime: alt.p_prime,
        sigma_prime: alt.sigma_prime,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSizeResult {
    pub n: u64,
    pub target_power: f64,
    pub power: f64,
    /// Power at `n − 1`; absent when `n = 1`.
    pub power_below: Option<f64>,
    /// Noncentrality per unit of sample size.
    pub delta_per_unit: f64,
    pub critical_value: f64,
}

/// Smallest integer `n` with `power_at(n) ≥ target_power`.
pub fn required_sample_size(
    req: &PowerRequest,
    target_power: f64,
    hyp: &HypothesisSpec,
    mm: &ModelMatrices,
    spec: &DesignSpec,
) -> Result<SampleSizeResult> {
    if !(target_power > hyp.alpha && target_power < 1.0) {
        return Err(Error::UnreachablePower {
            target: target_power,
            reason: format!("target must lie in ({}, 1)", hyp.alpha),
        });
    }
    let unit = power_at(req, 1.0, hyp, mm, spec)?;
    if unit.delta == 0.0 {
        return Err(Error::UnreachablePower {
            target: target_power,
            reason: "Qθ′ = 0, so the noncentrality is zero for every n".into(),
        });
    }
    let crit = unit.critical_value;
    let power_of = |delta: f64| power_from_delta(delta, crit, hyp);

    let mut hi = 1.0;
    while power_of(hi) < target_power {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if power_of(mid) < target_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut n = ((hi / unit.delta).ceil() as u64).max(1);

    let at = |n: u64| power_at(req, n as f64, hyp, mm, spec).map(|r| r.power);
    let mut power = at(n)?;
    while power < target_power {
        n += 1;
        power = at(n)?;
    }
    let mut power_below = if n > 1 { Some(at(n - 1)?) } else { None };
    while let Some(pb) = power_below.filter(|&pb| pb >= target_power) {
        n -= 1;
        power = pb;
        power_below = if n > 1 { Some(at(n - 1)?) } else { None };
    }
    Ok(SampleSizeResult {
        n,
        target_power,
        power,
        power_below,
        delta_per_unit: unit.delta,
        critical_value: crit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Wald test of `Qθ = 0` from an estimate and its covariance.
pub fn wald_test(theta_hat: &DVector<f64>, sigma_theta: &DMatrix<f64>, hyp: &HypothesisSpec) -> Result<WaldTest> {
    let statistic = hyp.quadratic_form(theta_hat, sigma_theta)?;
    Ok(WaldTest {
        statistic,
        p_value: 1.0 - noncentral_chisq_cdf(statistic, hyp.df(), 0.0),
        df: hyp.df(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProportionSearch {
    pub proportions: Vec<f64>,
    pub power: f64,
    pub evaluated: usize,
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Grid search over the planned proportions of an MR or MC request on the
/// simplex with step `1/resolution`, every proportion at least one step.
pub fn optimize_proportions(
    req: &PowerRequest,
    n: f64,
    hyp: &HypothesisSpec,
    mm: &ModelMatrices,
    spec: &DesignSpec,
    resolution: usize,
) -> Result<ProportionSearch> {
    let parts = match &req.scheme {
        PowerScheme::Multinomial => {
            return Err(Error::Domain("proportions are fixed by the M scheme".into()));
        }
        PowerScheme::RowMultinomial { .. } => spec.j() + 1,
        PowerScheme::ColumnMultinomial { .. } => spec.k() + 1,
    };
    if resolution < parts {
        return Err(Error::Domain(format!(
            "resolution {resolution} leaves no interior grid point for {parts} proportions"
        )));
    }
    let grid = compositions(resolution, parts);
    let evaluated: Vec<(Vec<f64>, f64)> = grid
        .par_iter()
        .map(|c| {
            let proportions: Vec<f64> = c.iter().map(|&x| x as f64 / resolution as f64).collect();
            let mut r = req.clone();
            r.scheme = match &req.scheme {
                PowerScheme::RowMultinomial { .. } => PowerScheme::RowMultinomial {
                    proportions: proportions.clone(),
                },
                _ => PowerScheme::ColumnMultinomial {
                    proportions: proportions.clone(),
                },
            };
            power_at(&r, n, hyp, mm, spec).map(|p| (proportions, p.power))
        })
        .collect::<Result<_>>()?;
    // grid is in lexicographic order, so the first maximum wins ties
    let (proportions, power) = evaluated
        .iter()
        .fold(None::<&(Vec<f64>, f64)>, |best, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        })
        .cloned()
        .expect("grid is nonempty");
    Ok(ProportionSearch {
        proportions,
        power,
        evaluated: evaluated.len(),
    })
}
