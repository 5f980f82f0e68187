#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use orcov::design::{build_model_matrices, ContingencyTable, DesignSpec, ModelMatrices, TableKind};
use orcov::fit::{fit_loglinear, FitResult};
use orcov::matkit::WeightVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub spec: DesignSpec,
    pub mm: ModelMatrices,
    pub table: ContingencyTable,
    pub fit: FitResult,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn positive_table(rng: &mut impl Rng, rows: usize, cols: usize, kind: TableKind) -> ContingencyTable {
    let cells = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(3..60) as f64);
    ContingencyTable::new(cells, kind).unwrap()
}

pub fn weights(rng: &mut impl Rng, n: usize) -> WeightVector {
    WeightVector::new(DVector::from_fn(n, |_, _| rng.random_range(0.2..5.0))).unwrap()
}

/// Random design with `J, K ∈ 1..=4`, `L_X ≤ min(3, J)`, `L_Y ≤ min(3, K)`,
/// a random positive table and its fit.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng(seed);
    loop {
        let j = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let lx = rng.random_range(1..=j.min(3));
        let ly = rng.random_range(1..=k.min(3));
        let spec = DesignSpec::new(
            uniform_matrix(&mut rng, j, lx, -2.0, 2.0),
            uniform_matrix(&mut rng, k, ly, -2.0, 2.0),
        )
        .unwrap();
        let Ok(mm) = build_model_matrices(&spec) else {
            continue;
        };
        let table = positive_table(&mut rng, j + 1, k + 1, TableKind::ObservedCounts);
        if let Ok(fit) = fit_loglinear(&table, &mm) {
            return Instance { spec, mm, table, fit };
        }
    }
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn samples_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Golden file name and CLI arguments, with `{s}` standing for the samples
/// directory.
pub const GOLDEN_CASES: &[(&str, &str)] = &[
    (
        "fit_2x2.json",
        "fit --table {s}/2x2/table.csv --design {s}/2x2/design.json",
    ),
    (
        "cov_2x2.json",
        "cov --table {s}/2x2/table.csv --design {s}/2x2/design.json --scheme M",
    ),
    (
        "power_2x2.json",
        "power --design {s}/2x2/design.json --theta-prime {s}/2x2/theta_prime.json \
         --marginals {s}/2x2/marginals.json --q {s}/2x2/q.json --n 25,50,100,200",
    ),
    (
        "fit_3x3.json",
        "fit --table {s}/3x3/table.csv --design {s}/3x3/design.json",
    ),
    (
        "fit_3x3.csv",
        "--format csv fit --table {s}/3x3/table.csv --design {s}/3x3/design.json",
    ),
    (
        "cov_3x3.json",
        "cov --table {s}/3x3/table.csv --design {s}/3x3/design_rows.json --scheme MR",
    ),
    (
        "power_3x3.json",
        "power --design {s}/3x3/design.json --theta-prime {s}/3x3/theta_prime.json \
         --marginals {s}/3x3/marginals.json --scheme MR --proportions 0.3,0.4,0.3 --n 100,200,400",
    ),
    (
        "power_3x3.csv",
        "--format csv power --design {s}/3x3/design.json --theta-prime {s}/3x3/theta_prime.json \
         --marginals {s}/3x3/marginals.json --n 100,200,400",
    ),
];

/// Runs the CLI in process; returns exit code, stdout and stderr.
pub fn run_cli(args: &str) -> (i32, String, String) {
    let samples = samples_dir();
    let argv: Vec<String> = std::iter::once("orcov".to_string())
        .chain(
            args.split_whitespace()
                .map(|a| a.replace("{s}", samples.to_str().unwrap())),
        )
        .collect();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = orcov::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Compares every golden case; with `UPDATE_GOLDEN=1` rewrites them first.
/// Returns the names of mismatching files.
pub fn check_goldens() -> Vec<String> {
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let dir = golden_dir();
    let mut failures = Vec::new();
    for (name, args) in GOLDEN_CASES {
        let (code, out, err) = run_cli(args);
        if code != 0 {
            failures.push(format!("{name}: exit {code}: {err}"));
            continue;
        }
        let path = dir.join(name);
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &out).unwrap();
        }
        match std::fs::read_to_string(&path) {
            Ok(expected) if expected == out => {}
            Ok(_) => failures.push(format!("{name}: output differs")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    failures
}
