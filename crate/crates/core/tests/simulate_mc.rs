use nalgebra::DMatrix;
use orcov::design::{build_model_matrices, ContingencyTable, DesignSpec, SchemeSpec, TableKind};
use orcov::power::HypothesisSpec;
use orcov::simulate::{density_from_theta, monte_carlo_cov, sample_table, SimulationConfig};

fn log2_density() -> ContingencyTable {
    let mm = build_model_matrices(&DesignSpec::saturated(1, 1).unwrap()).unwrap();
    density_from_theta(&DMatrix::from_element(1, 1, 2f64.ln()), &[0.5, 0.5], &[0.5, 0.5], &mm).unwrap()
}

#[test]
fn density_has_requested_odds_ratio() {
    let p = log2_density();
    let c = p.cells();
    assert!((c[(0, 0)] * c[(1, 1)] / (c[(0, 1)] * c[(1, 0)]) - 2.0).abs() < 1e-12);
    assert!((p.total() - 1.0).abs() < 1e-14);
}

#[test]
fn draws_respect_fixed_sizes() {
    let p = log2_density();
    let schemes = [
        SchemeSpec::Multinomial { n: 300.0 },
        SchemeSpec::RowMultinomial {
            row_sizes: vec![120.0, 180.0],
        },
        SchemeSpec::ColumnMultinomial {
            col_sizes: vec![90.0, 210.0],
        },
    ];
    for scheme in schemes {
        let cfg = SimulationConfig::new(p.clone(), scheme.clone(), 20, 5).unwrap();
        for i in 0..20 {
            let t = sample_table(&cfg, i);
            match &scheme {
                SchemeSpec::Multinomial { n } => assert_eq!(t.total(), *n),
                SchemeSpec::RowMultinomial { row_sizes } => assert_eq!(&t.row_totals(), row_sizes),
                SchemeSpec::ColumnMultinomial { col_sizes } => assert_eq!(&t.col_totals(), col_sizes),
                SchemeSpec::Poisson { .. } => unreachable!(),
            }
        }
    }
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let p = log2_density();
    let spec = DesignSpec::saturated(1, 1).unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let cfg = SimulationConfig::new(p, SchemeSpec::Multinomial { n: 400.0 }, 200, 99).unwrap();
    let a = monte_carlo_cov(&cfg, &mm, &spec, None).unwrap();
    let b = monte_carlo_cov(&cfg, &mm, &spec, None).unwrap();
    assert_eq!(a.theta_mean, b.theta_mean);
    assert_eq!(a.empirical_cov, b.empirical_cov);
    let c = monte_carlo_cov(&cfg.clone().with_seed(100), &mm, &spec, None).unwrap();
    assert_ne!(a.theta_mean, c.theta_mean);
    for i in [0, 17, 199] {
        assert_eq!(sample_table(&cfg, i), sample_table(&cfg, i));
    }
}

#[test]
fn poisson_totals_vary() {
    let cfg = SimulationConfig::new(log2_density(), SchemeSpec::Poisson { nu: 500.0 }, 10, 3).unwrap();
    let totals: Vec<f64> = (0..10).map(|i| sample_table(&cfg, i).total()).collect();
    assert!(totals.iter().any(|&t| t != totals[0]));
}

#[test]
fn row_and_column_schemes_agree_with_asymptotics() {
    let p = log2_density();
    let spec = DesignSpec::saturated(1, 1).unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let hyp = HypothesisSpec::all_zero(1, 0.05).unwrap();
    for scheme in [
        SchemeSpec::RowMultinomial {
            row_sizes: vec![1000.0, 1000.0],
        },
        SchemeSpec::ColumnMultinomial {
            col_sizes: vec![1000.0, 1000.0],
        },
    ] {
        let cfg = SimulationConfig::new(p.clone(), scheme, 1500, 11).unwrap();
        let rep = monte_carlo_cov(&cfg, &mm, &spec, Some(&hyp)).unwrap();
        assert_eq!(rep.n_success, 1500);
        assert!(rep.max_relative_error.unwrap() < 0.1, "{:?}", rep.max_relative_error);
        assert!(rep.rejection_rate.unwrap() > 0.9);
    }
}

#[test]
fn sparse_designs_warn() {
    let p = ContingencyTable::from_rows(&[vec![0.49, 0.01], vec![0.01, 0.49]], TableKind::Expected).unwrap();
    let spec = DesignSpec::saturated(1, 1).unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let cfg = SimulationConfig::new(p, SchemeSpec::Multinomial { n: 100.0 }, 50, 1).unwrap();
    let rep = monte_carlo_cov(&cfg, &mm, &spec, None).unwrap();
    assert!(!rep.warnings.is_empty());
    assert_eq!(rep.n_success + rep.n_failed_fits, 50);
}
