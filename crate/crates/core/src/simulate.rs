//! Random tables under the four sampling schemes and Monte Carlo checks of
//! the asymptotic covariance.
//!
//! Replicate `i` draws from a ChaCha8 generator seeded with the run seed and
//! switched to stream `i`, so every table is reproducible on its own and the
//! report does not depend on how replicates are scheduled.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asycov::{sigma_theta_explicit, sigma_theta_projection};
use crate::design::{ContingencyTable, DesignSpec, ModelMatrices, SchemeSpec, TableKind};
use crate::error::{Error, Result};
use crate::fit::{expected_table, fit_loglinear};
use crate::power::{chisq_quantile, wald_test, HypothesisSpec};
use crate::serde_matrix;

pub const DEFAULT_MIN_EXPECTED_CELL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    p: ContingencyTable,
    scheme: SchemeSpec,
    replications: usize,
    seed: u64,
    min_expected_cell: f64,
}

#[derive(Deserialize)]
struct SimulationFile {
    #[serde(default = "one")]
    version: u32,
    p: Vec<Vec<f64>>,
    scheme: SchemeSpec,
    replications: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_guard")]
    min_expected_cell: f64,
}

fn one() -> u32 {
    1
}

fn default_guard() -> f64 {
    DEFAULT_MIN_EXPECTED_CELL
}

fn whole(name: &str, x: f64) -> Result<u64> {
    if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53) {
        Ok(x as u64)
    } else {
        Err(Error::Domain(format!(
            "{name} must be a nonnegative whole number, got {x}"
        )))
    }
}

impl SimulationConfig {
    pub fn new(p: ContingencyTable, scheme: SchemeSpec, replications: usize, seed: u64) -> Result<Self> {
        if replications == 0 {
            return Err(Error::Domain("replications must be at least 1".into()));
        }
        p.require_positive()?;
        let total = p.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("density sums to {total}, expected 1")));
        }
        match &scheme {
            SchemeSpec::Multinomial { n } => {
                whole("n", *n)?;
            }
            SchemeSpec::Poisson { nu } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return Err(Error::Domain(format!("nu must be positive, got {nu}")));
                }
            }
            SchemeSpec::RowMultinomial { row_sizes } => {
                if row_sizes.len() != p.rows() {
                    return Err(Error::Dimension(format!(
                        "{} row sizes for {} rows",
                        row_sizes.len(),
                        p.rows()
                    )));
                }
                for &x in row_sizes {
                    whole("row size", x)?;
                }
            }
            SchemeSpec::ColumnMultinomial { col_sizes } => {
                if col_sizes.len() != p.cols() {
                    return Err(Error::Dimension(format!(
                        "{} column sizes for {} columns",
                        col_sizes.len(),
                        p.cols()
                    )));
                }
                for &x in col_sizes {
                    whole("column size", x)?;
                }
            }
        }
        Ok(SimulationConfig {
            p,
            scheme,
            replications,
            seed,
            min_expected_cell: DEFAULT_MIN_EXPECTED_CELL,
        })
    }

    pub fn with_min_expected_cell(mut self, guard: f64) -> Self {
        self.min_expected_cell = guard;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SimulationFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported simulation config version {}",
                file.version
            )));
        }
        let p = ContingencyTable::new(serde_matrix::from_rows(&file.p)?, TableKind::Expected)?;
        Ok(SimulationConfig::new(p, file.scheme, file.replications, file.seed)?
            .with_min_expected_cell(file.min_expected_cell))
    }

    pub fn p(&self) -> &ContingencyTable {
        &self.p
    }

    pub fn scheme(&self) -> &SchemeSpec {
        &self.scheme
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn min_expected_cell(&self) -> f64 {
        self.min_expected_cell
    }
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Multinomial draw by sequential binomial conditioning.
fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = remaining as f64;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let x = Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng);
        out[i] = x as f64;
        remaining -= x;
        mass -= p;
    }
    out
}

/// One table drawn under the configured scheme.
pub fn sample_table(config: &SimulationConfig, replicate_index: usize) -> ContingencyTable {
    let mut rng = rng_for(config.seed, replicate_index);
    let p = config.p.cells();
    let (rows, cols) = p.shape();
    let cells = match &config.scheme {
        SchemeSpec::Multinomial { n } => DMatrix::from_vec(rows, cols, multinomial(&mut rng, *n as u64, p.as_slice())),
        SchemeSpec::Poisson { nu } => {
            let n = Poisson::new(*nu).expect("positive mean").sample(&mut rng) as u64;
            DMatrix::from_vec(rows, cols, multinomial(&mut rng, n, p.as_slice()))
        }
        SchemeSpec::RowMultinomial { row_sizes } => {
            let mut m = DMatrix::zeros(rows, cols);
            for j in 0..rows {
                let probs: Vec<f64> = p.row(j).iter().copied().collect();
                let draw = multinomial(&mut rng, row_sizes[j] as u64, &probs);
                for (k, x) in draw.into_iter().enumerate() {
                    m[(j, k)] = x;
                }
            }
            m
        }
        SchemeSpec::ColumnMultinomial { col_sizes } => {
            let mut m = DMatrix::zeros(rows, cols);
            for k in 0..cols {
                let draw = multinomial(&mut rng, col_sizes[k] as u64, p.column(k).as_slice());
                m.set_column(k, &DVector::from_vec(draw));
            }
            m
        }
    };
    ContingencyTable::new(cells, TableKind::ObservedCounts).expect("draws are finite and nonnegative")
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub seed: u64,
    pub n_success: usize,
    pub n_failed_fits: usize,
    #[serde(with = "serde_matrix::vector")]
    pub theta_mean: DVector<f64>,
    /// Unbiased sample covariance of `vec θ̂`; absent with fewer than two
    /// successful replicates.
    #[serde(with = "serde_matrix::option")]
    pub empirical_cov: Option<DMatrix<f64>>,
    pub empirical_cov_undefined: bool,
    /// `Σ_θ̂` at the expected table of the configured scheme.
    #[serde(with = "serde_matrix")]
    pub asymptotic_cov: DMatrix<f64>,
    /// `‖empirical − asymptotic‖_max / ‖asymptotic‖_max`.
    pub max_relative_error: Option<f64>,
    /// Fraction of successful replicates where the Wald test rejects.
    pub rejection_rate: Option<f64>,
    pub warnings: Vec<String>,
    /// `vec θ̂` per replicate, `None` where the replicate was excluded.
    #[serde(skip)]
    pub replicate_thetas: Vec<Option<DVector<f64>>>,
}

struct Replicate {
    theta: DVector<f64>,
    rejected: Option<bool>,
}

fn run_replicate(
    config: &SimulationConfig,
    index: usize,
    mm: &ModelMatrices,
    test: Option<(&HypothesisSpec, f64)>,
) -> Option<Replicate> {
    let table = sample_table(config, index);
    if table
        .row_totals()
        .iter()
        .chain(table.col_totals().iter())
        .any(|&t| t == 0.0)
    {
        return None;
    }
    let fit = fit_loglinear(&table, mm).ok()?;
    let rejected = match test {
        Some((hyp, crit)) => {
            let sigma = sigma_theta_explicit(&fit.mu_hat, mm).ok()?;
            let w = wald_test(&fit.theta_vec, &sigma, hyp).ok()?;
            Some(w.statistic > crit)
        }
        None => None,
    };
    Some(Replicate {
        theta: fit.theta_vec,
        rejected,
    })
}

/// Fits every replicate and compares the sample covariance of `θ̂` with
/// the asymptotic one. With a hypothesis, also records how often its Wald
/// test rejects.
pub fn monte_carlo_cov(
    config: &SimulationConfig,
    mm: &ModelMatrices,
    spec: &DesignSpec,
    hypothesis: Option<&HypothesisSpec>,
) -> Result<MonteCarloReport> {
    spec.check_table_shape(&config.p)?;
    if mm.rows() != config.p.rows() || mm.cols() != config.p.cols() {
        return Err(Error::Dimension("model matrices do not match the density".into()));
    }
    let l = mm.l();
    if let Some(h) = hypothesis {
        if h.q().ncols() != l {
            return Err(Error::Dimension(format!("Q has {} columns, L = {l}", h.q().ncols())));
        }
    }
    let mut warnings = Vec::new();
    let mu = expected_table(&config.p, &config.scheme)?;
    let (min_cell, j, k) = mu.min_cell();
    if min_cell < config.min_expected_cell {
        let msg = format!(
            "expected cell ({j},{k}) is {min_cell:.4}, below the guard {}",
            config.min_expected_cell
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let asymptotic_cov = sigma_theta_projection(&mu, mm)?;

    let test = hypothesis.map(|h| (h, chisq_quantile(1.0 - h.alpha(), h.df())));
    let results: Vec<Option<Replicate>> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_replicate(config, i, mm, test))
        .collect();

    let n_success = results.iter().filter(|r| r.is_some()).count();
    let n_failed_fits = config.replications - n_success;
    if n_success == 0 {
        return Err(Error::AllReplicatesFailed {
            replications: config.replications,
        });
    }
    if n_failed_fits > 0 {
        warnings.push(format!("{n_failed_fits} replicates excluded"));
    }

    let mut sum = DVector::zeros(l);
    for r in results.iter().flatten() {
        sum += &r.theta;
    }
    let theta_mean = sum / n_success as f64;
    let empirical_cov = (n_success >= 2).then(|| {
        let mut acc = DMatrix::zeros(l, l);
        for r in results.iter().flatten() {
            let d = &r.theta - &theta_mean;
            acc += &d * d.transpose();
        }
        acc / (n_success - 1) as f64
    });
    let max_relative_error = empirical_cov
        .as_ref()
        .map(|e| (e - &asymptotic_cov).amax() / asymptotic_cov.amax());
    let rejection_rate = test.map(|_| {
        let rejected = results.iter().flatten().filter(|r| r.rejected == Some(true)).count();
        rejected as f64 / n_success as f64
    });

    Ok(MonteCarloReport {
        replications: config.replications,
        seed: config.seed,
        n_success,
        n_failed_fits,
        theta_mean,
        empirical_cov_undefined: empirical_cov.is_none(),
        empirical_cov,
        asymptotic_cov,
        max_relative_error,
        rejection_rate,
        warnings,
        replicate_thetas: results.into_iter().map(|r| r.map(|r| r.theta)).collect(),
    })
}

/// Density with the given θ and marginals, for use as `p` in a config.
pub fn density_from_theta(
    theta: &DMatrix<f64>,
    row_marg: &[f64],
    col_marg: &[f64],
    mm: &ModelMatrices,
) -> Result<ContingencyTable> {
    let d = crate::fit::ipf_constrained(theta, row_marg, col_marg, mm)?.density;
    // renormalize away rounding in the last sweep
    d.scaled(1.0 / d.total())
}
