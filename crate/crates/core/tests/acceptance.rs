//! Acceptance suite: one line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{max_rel_diff, random_instance, rng, uniform_matrix, weights};
use nalgebra::{DMatrix, DVector};
use orcov::asycov::{
    cov_mr_blockwise, covariance_bundle, covariance_bundle_at, score_information, sigma_eta_mu, sigma_lambda,
    sigma_theta_projection,
};
use orcov::bridge::{
    beta_from_theta_linear, cov_norm, norm_map, norm_map_inverse, theta_from_beta_linear, theta_from_beta_mvlinear,
    LinearBridgeInput,
};
use orcov::design::{
    build_model_matrices, ContingencyTable, DesignSpec, ModelMatrices, SchemeKind, SchemeSpec, TableKind,
};
use orcov::fit::{expected_table, fit_loglinear, ipf_constrained};
use orcov::matkit::{d_projection, kron, max_abs_diff, partitioned_inverse, spd_inverse, vec, WeightVector};
use orcov::power::{power_at, required_sample_size, HypothesisSpec, PowerRequest, PowerScheme};
use orcov::simulate::{density_from_theta, monte_carlo_cov, SimulationConfig};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

const INSTANCES: u64 = 200;

fn c1_saturated_two_by_two() -> Outcome {
    let start = Instant::now();
    let table = ContingencyTable::from_rows(&[vec![10.0, 20.0], vec![30.0, 40.0]], TableKind::ObservedCounts)
        .map_err(|e| e.to_string())?;
    let spec = DesignSpec::saturated(1, 1).unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let fit = fit_loglinear(&table, &mm).map_err(|e| e.to_string())?;
    let bundle =
        covariance_bundle(&fit, &mm, &spec, &SchemeSpec::Multinomial { n: 100.0 }).map_err(|e| e.to_string())?;
    let expected = 1.0 / 10.0 + 1.0 / 20.0 + 1.0 / 30.0 + 1.0 / 40.0;
    let mut worst: f64 = 0.0;
    for (name, m) in bundle.routes() {
        let err = (m[(0, 0)] - expected).abs();
        ensure(err < 1e-12, || format!("{name} route off by {err:e}"))?;
        worst = worst.max(err);
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max |Σ − 0.208333| = {worst:.1e}"))
}

fn c2_five_way_equality() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = random_instance(seed);
        let scheme = SchemeSpec::matching(SchemeKind::M, &inst.fit.mu_hat);
        let b = covariance_bundle_at(&inst.fit.mu_hat, &inst.mm, &inst.spec, &scheme, f64::INFINITY)
            .map_err(|e| format!("instance {seed}: {e}"))?;
        worst = worst.max(b.max_pairwise_deviation);
        ensure(b.max_pairwise_deviation < 1e-8, || {
            format!("instance {seed}: deviation {:e}", b.max_pairwise_deviation)
        })?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{INSTANCES} instances, max deviation {worst:.1e}"))
}

fn c3_scheme_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = random_instance(seed);
        let mu = &inst.fit.mu_hat;
        let schemes = [SchemeKind::M, SchemeKind::P, SchemeKind::MR, SchemeKind::MC];
        let bundles: Vec<_> = schemes
            .iter()
            .map(|&s| covariance_bundle(&inst.fit, &inst.mm, &inst.spec, &SchemeSpec::matching(s, mu)))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("instance {seed}: {e}"))?;
        for b in &bundles[1..] {
            for ((name, x), (_, y)) in b.routes().iter().zip(bundles[0].routes().iter()) {
                ensure(x == y, || format!("instance {seed}: {name} differs across schemes"))?;
            }
        }
        let eta = |s: SchemeKind| sigma_eta_mu(mu, &inst.mm, &SchemeSpec::matching(s, mu)).map(|r| r.1);
        let base = eta(SchemeKind::P).map_err(|e| e.to_string())?;
        let n = mu.cell_count();
        let inv_diag =
            |t: Vec<f64>| DMatrix::from_diagonal(&DVector::from_iterator(t.len(), t.iter().map(|x| 1.0 / x)));
        let terms = [
            (SchemeKind::M, DMatrix::from_element(n, n, 1.0 / mu.total())),
            (
                SchemeKind::MR,
                &inst.mm.f * inv_diag(mu.row_totals()) * inst.mm.f.transpose(),
            ),
            (
                SchemeKind::MC,
                &inst.mm.g * inv_diag(mu.col_totals()) * inst.mm.g.transpose(),
            ),
        ];
        for (s, term) in terms {
            let diff = max_abs_diff(&(&base - eta(s).map_err(|e| e.to_string())?), &term);
            worst = worst.max(diff);
            ensure(diff < 1e-10, || {
                format!("instance {seed}: Σ_η under {s} off by {diff:e}")
            })?;
        }
    }
    Ok(format!(
        "Σ_θ bit-identical over M/P/MR/MC; Σ_η terms within {worst:.1e}"
    ))
}

fn c4_score_inverse() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = random_instance(seed);
        let mu = &inst.fit.mu_hat;
        let info = score_information(mu, &inst.mm).map_err(|e| e.to_string())?;
        let lambda =
            sigma_lambda(mu, &inst.mm, &SchemeSpec::matching(SchemeKind::MR, mu)).map_err(|e| e.to_string())?;
        let inv = spd_inverse(&info, "Cov(U)").map_err(|e| e.to_string())?;
        let d1 = max_rel_diff(&inv, &lambda);
        let (k, l) = (inst.mm.k, inst.mm.l());
        let blocks = partitioned_inverse(
            &info.view((0, 0), (k, k)).into_owned(),
            &info.view((0, k), (k, l)).into_owned(),
            &info.view((k, 0), (l, k)).into_owned(),
            &info.view((k, k), (l, l)).into_owned(),
        )
        .map_err(|e| e.to_string())?;
        let proj = sigma_theta_projection(mu, &inst.mm).map_err(|e| e.to_string())?;
        let d2 = max_rel_diff(&blocks.bottom_right, &proj);
        worst = worst.max(d1).max(d2);
        ensure(d1 < 1e-8 && d2 < 1e-8, || format!("instance {seed}: {d1:e}, {d2:e}"))?;
    }
    Ok(format!("{INSTANCES} instances, max relative deviation {worst:.1e}"))
}

fn c5_monte_carlo() -> Outcome {
    let start = Instant::now();
    let spec = DesignSpec::saturated(1, 1).unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let theta = DMatrix::from_element(1, 1, 2f64.ln());
    let p = density_from_theta(&theta, &[0.5, 0.5], &[0.5, 0.5], &mm).map_err(|e| e.to_string())?;
    let hyp = HypothesisSpec::all_zero(1, 0.05).unwrap();
    let n = 2000.0;
    let cases = [
        (SchemeSpec::Multinomial { n }, PowerScheme::Multinomial),
        (
            SchemeSpec::RowMultinomial {
                row_sizes: vec![1000.0, 1000.0],
            },
            PowerScheme::RowMultinomial {
                proportions: vec![0.5, 0.5],
            },
        ),
        (
            SchemeSpec::ColumnMultinomial {
                col_sizes: vec![1000.0, 1000.0],
            },
            PowerScheme::ColumnMultinomial {
                proportions: vec![0.5, 0.5],
            },
        ),
    ];
    let mut lines = Vec::new();
    for (i, (scheme, pscheme)) in cases.into_iter().enumerate() {
        let kind = scheme.kind();
        let cfg = SimulationConfig::new(p.clone(), scheme.clone(), 10_000, 20_240_601 + i as u64)
            .map_err(|e| e.to_string())?;
        let rep = monte_carlo_cov(&cfg, &mm, &spec, Some(&hyp)).map_err(|e| e.to_string())?;
        // asymptotic covariance at the theoretical expected table
        let mu = expected_table(&p, &scheme).map_err(|e| e.to_string())?;
        let asym = sigma_theta_projection(&mu, &mm).map_err(|e| e.to_string())?;
        let emp = rep.empirical_cov.ok_or("empirical covariance undefined")?;
        let rel = (&emp - &asym).amax() / asym.amax();
        ensure(rel < 0.10, || format!("{kind}: relative covariance error {rel:.4}"))?;
        let req = PowerRequest {
            theta_prime: theta.clone(),
            row_marg: vec![0.5, 0.5],
            col_marg: vec![0.5, 0.5],
            scheme: pscheme,
        };
        let power = power_at(&req, n, &hyp, &mm, &spec).map_err(|e| e.to_string())?.power;
        let rate = rep.rejection_rate.ok_or("no rejection rate")?;
        ensure((rate - power).abs() <= 0.03, || {
            format!("{kind}: rejection {rate:.4} vs power {power:.4}")
        })?;
        lines.push(format!("{kind}: cov err {rel:.3}, reject {rate:.4} vs {power:.4}"));
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(lines.join("; "))
}

fn c6_ipf() -> Outcome {
    let mm = build_model_matrices(&DesignSpec::saturated(1, 1).unwrap()).unwrap();
    let res = ipf_constrained(&DMatrix::from_element(1, 1, 4f64.ln()), &[0.5, 0.5], &[0.5, 0.5], &mm)
        .map_err(|e| e.to_string())?;
    let expected = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0]);
    let err = max_abs_diff(res.density.cells(), &expected);
    ensure(err < 1e-10, || format!("p′ off by {err:e}"))?;
    ensure(res.discrepancy < 1e-12, || {
        format!("marginal discrepancy {:e}", res.discrepancy)
    })?;
    ensure(res.max_log_odds_drift < 1e-12, || {
        format!("odds drift {:e}", res.max_log_odds_drift)
    })?;
    Ok(format!(
        "p′ err {err:.1e}, discrepancy {:.1e}, odds drift {:.1e}",
        res.discrepancy, res.max_log_odds_drift
    ))
}

fn three_by_three(scheme: PowerScheme) -> (DesignSpec, ModelMatrices, PowerRequest) {
    let spec = DesignSpec::new(
        DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
        DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
    )
    .unwrap();
    let mm = build_model_matrices(&spec).unwrap();
    let req = PowerRequest {
        theta_prime: DMatrix::from_element(1, 1, 0.3),
        row_marg: vec![0.3, 0.4, 0.3],
        col_marg: vec![0.25, 0.4, 0.35],
        scheme,
    };
    (spec, mm, req)
}

fn c7_power_pipeline() -> Outcome {
    let hyp = HypothesisSpec::all_zero(1, 0.05).unwrap();
    let props = vec![0.3, 0.4, 0.3];
    let (spec, mm, req) = three_by_three(PowerScheme::RowMultinomial {
        proportions: props.clone(),
    });
    let run = |r: &PowerRequest, n: f64| power_at(r, n, &hyp, &mm, &spec).map_err(|e| e.to_string());

    let mut null = req.clone();
    null.theta_prime[(0, 0)] = 0.0;
    let p0 = run(&null, 250.0)?.power;
    ensure(p0 == hyp.alpha(), || format!("power at θ′ = 0 is {p0}"))?;

    let mut last = 0.0;
    for n in 1..=600 {
        let p = run(&req, n as f64)?.power;
        ensure(p > last, || format!("power not increasing at n = {n}"))?;
        last = p;
    }

    let ss = required_sample_size(&req, 0.8, &hyp, &mm, &spec).map_err(|e| e.to_string())?;
    let mut scan = 1;
    while run(&req, scan as f64)?.power < 0.8 {
        scan += 1;
    }
    ensure(ss.n == scan, || format!("required n {} but scan gives {scan}", ss.n))?;
    let below = run(&req, (ss.n - 1) as f64)?.power;
    let at = run(&req, ss.n as f64)?.power;
    ensure(at >= 0.8 && below < 0.8, || {
        format!("power({}) = {at}, power(n−1) = {below}", ss.n)
    })?;

    let tspec = spec.transposed();
    let tmm = build_model_matrices(&tspec).unwrap();
    let treq = PowerRequest {
        theta_prime: req.theta_prime.transpose(),
        row_marg: req.col_marg.clone(),
        col_marg: req.row_marg.clone(),
        scheme: PowerScheme::ColumnMultinomial { proportions: props },
    };
    let mut dual: f64 = 0.0;
    for n in [50.0, 353.0, 1000.0] {
        let a = run(&req, n)?;
        let b = power_at(&treq, n, &hyp, &tmm, &tspec).map_err(|e| e.to_string())?;
        dual = dual
            .max((a.power - b.power).abs())
            .max((a.delta - b.delta).abs() / a.delta.max(1.0));
    }
    ensure(dual < 1e-10, || format!("MR↔MC duality off by {dual:e}"))?;
    Ok(format!("n* = {} matches scan; duality {dual:.1e}", ss.n))
}

fn c8_matrix_identities() -> Outcome {
    let start = Instant::now();
    let mut r = rng(8);
    let tol = 1e-9;
    for case in 0..100u64 {
        let fail = |what: &str| format!("case {case}: {what}");
        // projections, nested spaces
        let n = r.random_range(3..9);
        let m = r.random_range(1..n - 1);
        let w = weights(&mut r, n);
        let small = uniform_matrix(&mut r, n, m, -3.0, 3.0);
        let big = hcat(&small, &uniform_matrix(&mut r, n, 1, -3.0, 3.0));
        let p = d_projection(&small, &w).map_err(|e| e.to_string())?;
        let q = d_projection(&big, &w).map_err(|e| e.to_string())?;
        let (pm, qm, d) = (p.matrix(), q.matrix(), w.diag());
        ensure(max_abs_diff(&(pm * pm), pm) < tol, || fail("P² = P"))?;
        ensure(max_abs_diff(&pm.transpose(), &(&d * pm * w.inv_diag())) < tol, || {
            fail("Pᵀ = DPD⁻¹")
        })?;
        ensure(
            max_abs_diff(&(pm + p.complement()), &DMatrix::identity(n, n)) < tol,
            || fail("P + P⊥ = I"),
        )?;
        ensure(
            max_abs_diff(&(pm * qm), pm) < tol && max_abs_diff(&(qm * pm), pm) < tol,
            || fail("nesting"),
        )?;
        ensure(max_abs_diff(&(pm.transpose() * &d * pm), &(&d * pm)) < tol, || {
            fail("PᵀDP = DP")
        })?;

        // Kronecker identities
        let a = uniform_matrix(&mut r, 2, 3, -2.0, 2.0);
        let a2 = uniform_matrix(&mut r, 2, 3, -2.0, 2.0);
        let b = uniform_matrix(&mut r, 3, 2, -2.0, 2.0);
        let b2 = uniform_matrix(&mut r, 3, 2, -2.0, 2.0);
        let c = uniform_matrix(&mut r, 3, 4, -2.0, 2.0);
        let dd = uniform_matrix(&mut r, 2, 2, -2.0, 2.0);
        let (s, t): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let ai = uniform_matrix(&mut r, 2, 2, -1.0, 1.0) + DMatrix::identity(2, 2) * 4.0;
        let bi = uniform_matrix(&mut r, 3, 3, -1.0, 1.0) + DMatrix::identity(3, 3) * 5.0;
        let y = uniform_matrix(&mut r, 3, 3, -2.0, 2.0);
        let checks = [
            (
                "scalar",
                max_abs_diff(&kron(&(&a * s), &(&b * t)), &(kron(&a, &b) * (s * t))),
            ),
            (
                "left distributive",
                max_abs_diff(&kron(&(&a + &a2), &b), &(kron(&a, &b) + kron(&a2, &b))),
            ),
            (
                "right distributive",
                max_abs_diff(&kron(&a, &(&b + &b2)), &(kron(&a, &b) + kron(&a, &b2))),
            ),
            (
                "transpose",
                max_abs_diff(&kron(&a, &b).transpose(), &kron(&a.transpose(), &b.transpose())),
            ),
            (
                "mixed product",
                max_abs_diff(&(kron(&a, &b) * kron(&c, &dd)), &kron(&(&a * &c), &(&b * &dd))),
            ),
            (
                "inverse",
                max_abs_diff(
                    &kron(&ai, &bi).try_inverse().unwrap(),
                    &kron(&ai.clone().try_inverse().unwrap(), &bi.clone().try_inverse().unwrap()),
                ),
            ),
            (
                "vec",
                (vec(&(&a * &y * &c)) - kron(&c.transpose(), &a) * vec(&y)).amax(),
            ),
        ];
        for (name, err) in checks {
            ensure(err < tol, || fail(&format!("Kronecker {name}: {err:e}")))?;
        }

        // partitioned inverse
        let g = uniform_matrix(&mut r, 5, 5, -1.0, 1.0);
        let spd = g.transpose() * &g + DMatrix::identity(5, 5);
        let blocks = partitioned_inverse(
            &spd.view((0, 0), (2, 2)).into_owned(),
            &spd.view((0, 2), (2, 3)).into_owned(),
            &spd.view((2, 0), (3, 2)).into_owned(),
            &spd.view((2, 2), (3, 3)).into_owned(),
        )
        .map_err(|e| e.to_string())?;
        ensure(
            max_abs_diff(&(blocks.assemble() * &spd), &DMatrix::identity(5, 5)) < tol,
            || fail("reassembly"),
        )?;

        // model-matrix identities
        let inst = random_instance(10_000 + case);
        let mm = &inst.mm;
        let wmu = WeightVector::new(inst.fit.mu_hat.to_vec()).map_err(|e| e.to_string())?;
        let v = d_projection(&hcat(&mm.f, &mm.e), &wmu)
            .map_err(|e| e.to_string())?
            .complement()
            * &mm.z;
        let cov = cov_mr_blockwise(&inst.fit.mu_hat).map_err(|e| e.to_string())?;
        let ik = DMatrix::identity(mm.k, mm.k);
        ensure(max_abs_diff(&(mm.c.transpose() * &v), &mm.zcirc) < tol, || {
            fail("CᵀV = Z°")
        })?;
        ensure(max_abs_diff(&(mm.b.transpose() * &mm.e), &ik) < tol, || fail("BᵀE = I"))?;
        ensure((mm.z.transpose() * &mm.b).amax() < tol, || fail("ZᵀB = 0"))?;
        let q7 = mm.b.transpose() * wmu.inv_diag() * cov * &mm.e;
        ensure(max_abs_diff(&q7, &ik) < tol, || fail("BᵀD⁻¹WE = I"))?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("100 cases in {:.2?}", start.elapsed()))
}

fn c9_bridge() -> Outcome {
    let mut r = rng(9);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = r.random_range(1..5);
        let g = uniform_matrix(&mut r, n, n, -1.0, 1.0);
        let cov_x = g.transpose() * &g + DMatrix::identity(n, n) * 0.5;
        let sigma_y2: f64 = r.random_range(0.1..10.0);
        let raw = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let share: f64 = r.random_range(0.0..0.95);
        let beta = &raw * ((share * sigma_y2).sqrt() / cov_norm(&raw, &cov_x));
        let input = LinearBridgeInput { beta, sigma_y2, cov_x };
        let theta = theta_from_beta_linear(&input).map_err(|e| format!("case {case}: {e}"))?;
        let back = beta_from_theta_linear(&theta, sigma_y2, &input.cov_x).map_err(|e| e.to_string())?;
        let err = (back - &input.beta).amax();
        worst = worst.max(err);
        ensure(err < 1e-10, || format!("case {case}: round trip off by {err:e}"))?;

        let (lx, ly) = (r.random_range(1..4), r.random_range(1..4));
        let cx = {
            let h = uniform_matrix(&mut r, lx, lx, -1.0, 1.0);
            h.transpose() * &h + DMatrix::identity(lx, lx)
        };
        let cy = {
            let h = uniform_matrix(&mut r, ly, ly, -1.0, 1.0);
            (h.transpose() * &h + DMatrix::identity(ly, ly)) * 4.0
        };
        let b = uniform_matrix(&mut r, lx, ly, -0.3, 0.3);
        let th = theta_from_beta_mvlinear(&b, &cy, &cx).map_err(|e| format!("case {case}: {e}"))?;
        let sigma = &cy - b.tr_mul(&(&cx * &b));
        let err = (th * sigma - &b).amax();
        ensure(err < 1e-10, || format!("case {case}: θΣ ≠ β by {err:e}"))?;
    }
    for v in [0.1, 1.0, 10.0] {
        let err = (norm_map(norm_map_inverse(v, 1.0), 1.0) - v).abs();
        ensure(err < 1e-12, || format!("f(f⁻¹({v})) off by {err:e}"))?;
    }
    let worked = theta_from_beta_linear(&LinearBridgeInput {
        beta: DVector::from_element(1, 0.5),
        sigma_y2: 1.0,
        cov_x: DMatrix::identity(1, 1),
    })
    .map_err(|e| e.to_string())?;
    ensure((worked[0] - 2.0 / 3.0).abs() < 1e-15, || {
        format!("worked value {}", worked[0])
    })?;
    Ok(format!(
        "100 round trips, max error {worst:.1e}; θ(0.5) = {:.6}",
        worked[0]
    ))
}

fn c10_golden() -> Outcome {
    let failures = common::check_goldens();
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("{} golden files byte-exact", common::GOLDEN_CASES.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("2x2 saturated variance", c1_saturated_two_by_two),
        ("five-way representation equality", c2_five_way_equality),
        ("scheme invariance", c3_scheme_invariance),
        ("score covariance inverse", c4_score_inverse),
        ("Monte Carlo validation", c5_monte_carlo),
        ("IPF correctness", c6_ipf),
        ("power pipeline", c7_power_pipeline),
        ("matrix identity suite", c8_matrix_identities),
        ("bridge round trips", c9_bridge),
        ("CLI golden files", c10_golden),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name} ({elapsed:.2?}): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
