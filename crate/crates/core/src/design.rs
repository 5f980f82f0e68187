//! Contingency tables, score designs and the structural matrices derived
//! from them.
//!
//! Every vector indexed by table cells uses column-major order over
//! `(j, k)` with `j` fastest, i.e. cell `(j, k)` of a `(J+1)×(K+1)` table
//! sits at position `j + (J+1)·k`. This is the order produced by
//! [`matkit::vec`](crate::matkit::vec), so `Z = Ỹ ⊗ X̃` needs no permutation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{kron, left_inverse, numerical_rank};
use crate::serde_matrix;

/// Current version of the design JSON schema.
pub const DESIGN_SCHEMA_VERSION: u32 = 1;

/// Position of cell `(j, k)` in the stacked cell vector of a table with `rows` rows.
#[inline]
pub fn cell_index(j: usize, k: usize, rows: usize) -> usize {
    j + rows * k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    ObservedCounts,
    Expected,
}

/// A `(J+1)×(K+1)` table of nonnegative counts or expectations. Cell `(0,0)`
/// is the reference cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    #[serde(with = "serde_matrix")]
    cells: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_labels: Option<Vec<String>>,
    kind: TableKind,
}

impl ContingencyTable {
    pub fn new(cells: DMatrix<f64>, kind: TableKind) -> Result<Self> {
        let (rows, cols) = cells.shape();
        if rows < 2 || cols < 2 {
            return Err(Error::Dimension(format!(
                "a table needs at least 2 rows and 2 columns, got {rows}x{cols}"
            )));
        }
        for k in 0..cols {
            for j in 0..rows {
                let x = cells[(j, k)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::Domain(format!(
                        "cell ({j},{k}) is {x}; entries must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(ContingencyTable {
            cells,
            row_labels: None,
            col_labels: None,
            kind,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], kind: TableKind) -> Result<Self> {
        Self::new(serde_matrix::from_rows(rows)?, kind)
    }

    /// Rebuilds a table from its stacked cell vector.
    pub fn from_vec(v: &DVector<f64>, rows: usize, cols: usize, kind: TableKind) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "vector of length {} does not fit a {rows}x{cols} table",
                v.len()
            )));
        }
        Self::new(DMatrix::from_column_slice(rows, cols, v.as_slice()), kind)
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Result<Self> {
        if rows.len() != self.rows() || cols.len() != self.cols() {
            return Err(Error::Dimension(format!(
                "{} row labels and {} column labels for a {}x{} table",
                rows.len(),
                cols.len(),
                self.rows(),
                self.cols()
            )));
        }
        self.row_labels = Some(rows);
        self.col_labels = Some(cols);
        Ok(self)
    }

    pub fn cells(&self) -> &DMatrix<f64> {
        &self.cells
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn col_labels(&self) -> Option<&[String]> {
        self.col_labels.as_deref()
    }

    /// Number of rows, `J+1`.
    pub fn rows(&self) -> usize {
        self.cells.nrows()
    }

    /// Number of columns, `K+1`.
    pub fn cols(&self) -> usize {
        self.cells.ncols()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.cells[(j, k)]
    }

    /// Stacked cell vector (column-major, `j` fastest).
    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.cells.as_slice())
    }

    pub fn total(&self) -> f64 {
        self.cells.sum()
    }

    pub fn row_totals(&self) -> Vec<f64> {
        self.cells.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<f64> {
        self.cells.column_iter().map(|c| c.sum()).collect()
    }

    /// Smallest cell and its position.
    pub fn min_cell(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for k in 0..self.cols() {
            for j in 0..self.rows() {
                if self.cells[(j, k)] < best.0 {
                    best = (self.cells[(j, k)], j, k);
                }
            }
        }
        best
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.cells.iter().all(|&x| x > 0.0)
    }

    /// Errors unless every cell is strictly positive.
    pub fn require_positive(&self) -> Result<()> {
        let (x, j, k) = self.min_cell();
        if x > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "cell ({j},{k}) is {x}; covariance computations need strictly positive cells"
            )))
        }
    }

    pub fn transpose(&self) -> Self {
        ContingencyTable {
            cells: self.cells.transpose(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            kind: self.kind,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut t = Self::new(&self.cells * factor, self.kind)?;
        t.row_labels = self.row_labels.clone();
        t.col_labels = self.col_labels.clone();
        Ok(t)
    }

    /// Moves row `row` and column `col` to position 0, keeping the relative
    /// order of the others.
    pub fn with_reference(&self, row: usize, col: usize) -> Result<Self> {
        if row >= self.rows() || col >= self.cols() {
            return Err(Error::Dimension(format!(
                "reference ({row},{col}) outside a {}x{} table",
                self.rows(),
                self.cols()
            )));
        }
        let order = |n: usize, first: usize| -> Vec<usize> {
            std::iter::once(first).chain((0..n).filter(|&i| i != first)).collect()
        };
        let ro = order(self.rows(), row);
        let co = order(self.cols(), col);
        let cells = DMatrix::from_fn(self.rows(), self.cols(), |j, k| self.cells[(ro[j], co[k])]);
        let permute = |labels: &Option<Vec<String>>, o: &[usize]| {
            labels.as_ref().map(|l| o.iter().map(|&i| l[i].clone()).collect())
        };
        Ok(ContingencyTable {
            cells,
            row_labels: permute(&self.row_labels, &ro),
            col_labels: permute(&self.col_labels, &co),
            kind: self.kind,
        })
    }

    /// Parses the table CSV: header row of column labels, then one row per
    /// table row led by its label.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Parse(format!("table header: {e}")))?
            .clone();
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut row_labels = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("table row {i}: {e}")))?;
            if rec.len() != col_labels.len() + 1 {
                return Err(Error::Parse(format!(
                    "table row {i} has {} fields, expected {}",
                    rec.len(),
                    col_labels.len() + 1
                )));
            }
            row_labels.push(rec[0].to_owned());
            let vals = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(k, s)| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("cell ({i},{k}): `{s}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(vals);
        }
        Self::from_rows(&rows, TableKind::ObservedCounts)?.with_labels(row_labels, col_labels)
    }

    pub fn to_csv_string(&self, format_value: impl Fn(f64) -> String) -> String {
        let col_labels: Vec<String> = self
            .col_labels
            .clone()
            .unwrap_or_else(|| (0..self.cols()).map(|k| k.to_string()).collect());
        let row_labels: Vec<String> = self
            .row_labels
            .clone()
            .unwrap_or_else(|| (0..self.rows()).map(|j| j.to_string()).collect());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(col_labels);
        w.write_record(&header).expect("in-memory write");
        for (j, label) in row_labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend((0..self.cols()).map(|k| format_value(self.cells[(j, k)])));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Row scores `X̃` (J×L_X, row `j-1` holds `x̃_j`) and column scores `Ỹ`
/// (K×L_Y). The reference scores `x̃_0 = ỹ_0 = 0` are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    xtilde: DMatrix<f64>,
    ytilde: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    version: u32,
    xtilde: Vec<Vec<f64>>,
    ytilde: Vec<Vec<f64>>,
}

impl DesignSpec {
    pub fn new(xtilde: DMatrix<f64>, ytilde: DMatrix<f64>) -> Result<Self> {
        if xtilde.nrows() == 0 || ytilde.nrows() == 0 {
            return Err(Error::Dimension(
                "both score matrices need at least one row (J, K >= 1)".into(),
            ));
        }
        if xtilde.iter().chain(ytilde.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("scores must be finite".into()));
        }
        Ok(DesignSpec { xtilde, ytilde })
    }

    /// Saturated design: identity scores, `Z° = I_{JK}`.
    pub fn saturated(j: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::identity(j, j), DMatrix::identity(k, k))
    }

    /// Independence design with no association parameter (`L = 0`).
    pub fn independence(j: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(j, 0), DMatrix::zeros(k, 0))
    }

    /// Scalar linear-by-linear scores `x̃_j = j`, `ỹ_k = k`.
    pub fn linear_by_linear(j: usize, k: usize) -> Result<Self> {
        Self::new(
            DMatrix::from_fn(j, 1, |r, _| (r + 1) as f64),
            DMatrix::from_fn(k, 1, |r, _| (r + 1) as f64),
        )
    }

    pub fn xtilde(&self) -> &DMatrix<f64> {
        &self.xtilde
    }

    pub fn ytilde(&self) -> &DMatrix<f64> {
        &self.ytilde
    }

    pub fn j(&self) -> usize {
        self.xtilde.nrows()
    }

    pub fn k(&self) -> usize {
        self.ytilde.nrows()
    }

    pub fn lx(&self) -> usize {
        self.xtilde.ncols()
    }

    pub fn ly(&self) -> usize {
        self.ytilde.ncols()
    }

    /// `L = L_X · L_Y`.
    pub fn l(&self) -> usize {
        self.lx() * self.ly()
    }

    /// Swaps the roles of rows and columns.
    pub fn transposed(&self) -> Self {
        DesignSpec {
            xtilde: self.ytilde.clone(),
            ytilde: self.xtilde.clone(),
        }
    }

    /// `X̃` with the zero reference row prepended, `(J+1)×L_X`.
    pub fn xtilde_full(&self) -> DMatrix<f64> {
        self.xtilde.clone().insert_row(0, 0.0)
    }

    pub fn ytilde_full(&self) -> DMatrix<f64> {
        self.ytilde.clone().insert_row(0, 0.0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let f: DesignFile = serde_json::from_str(text)?;
        if f.version != DESIGN_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported design schema version {} (expected {DESIGN_SCHEMA_VERSION})",
                f.version
            )));
        }
        Self::new(serde_matrix::from_rows(&f.xtilde)?, serde_matrix::from_rows(&f.ytilde)?)
    }

    pub fn to_json_string(&self) -> String {
        let f = DesignFile {
            version: DESIGN_SCHEMA_VERSION,
            xtilde: serde_matrix::to_rows(&self.xtilde),
            ytilde: serde_matrix::to_rows(&self.ytilde),
        };
        serde_json::to_string_pretty(&f).expect("serializable")
    }

    /// Errors unless `table` is `(J+1)×(K+1)` for this design.
    pub fn check_table_shape(&self, table: &ContingencyTable) -> Result<()> {
        if table.rows() != self.j() + 1 || table.cols() != self.k() + 1 {
            return Err(Error::Dimension(format!(
                "table is {}x{} but the design expects {}x{}",
                table.rows(),
                table.cols(),
                self.j() + 1,
                self.k() + 1
            )));
        }
        Ok(())
    }
}

/// Structural matrices of the log-linear model for a `(J+1)×(K+1)` table,
/// `I = (J+1)(K+1)` cells.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub j: usize,
    pub k: usize,
    /// `(L_X, L_Y)` when built from a bilinear design; `None` for a raw `Z`.
    pub factor_dims: Option<(usize, usize)>,
    /// I×L interaction covariates, row `(j,k)` is `z_jk`.
    pub z: DMatrix<f64>,
    /// JK×L rows of `Z` with `j, k > 0`.
    pub zcirc: DMatrix<f64>,
    /// `(Z°ᵀZ°)⁻¹Z°ᵀ`.
    pub zcirc_left_inverse: DMatrix<f64>,
    /// I×JK, columns `e_jk + e_00 − e_j0 − e_0k`.
    pub c: DMatrix<f64>,
    /// I×K, columns `e_0k − e_00`.
    pub b: DMatrix<f64>,
    /// I×K, column indicators `e_{+k}` for `k = 1..K`.
    pub e: DMatrix<f64>,
    /// I×(J+1), row indicators `e_{j+}`.
    pub f: DMatrix<f64>,
    /// I×(K+1), column indicators `e_{+k}` for `k = 0..K`.
    pub g: DMatrix<f64>,
    /// I×(1+J+K+L) basis of the model space: intercept, row indicators
    /// `j ≥ 1`, column indicators `k ≥ 1`, then the columns of `Z`.
    pub hbasis: DMatrix<f64>,
}

impl ModelMatrices {
    pub fn rows(&self) -> usize {
        self.j + 1
    }

    pub fn cols(&self) -> usize {
        self.k + 1
    }

    pub fn cell_count(&self) -> usize {
        (self.j + 1) * (self.k + 1)
    }

    pub fn l(&self) -> usize {
        self.z.ncols()
    }

    /// Index of the first `Z` column in `hbasis`.
    pub fn theta_offset(&self) -> usize {
        1 + self.j + self.k
    }

    /// General log-linear escape hatch: arbitrary `z_jk` (rows of `z` in
    /// cell order), required to vanish on the reference row and column.
    pub fn from_raw_z(j: usize, k: usize, z: DMatrix<f64>) -> Result<Self> {
        Self::assemble(j, k, z, None)
    }

    fn assemble(j: usize, k: usize, z: DMatrix<f64>, factor_dims: Option<(usize, usize)>) -> Result<Self> {
        if j == 0 || k == 0 {
            return Err(Error::Dimension("J and K must be at least 1".into()));
        }
        let rows = j + 1;
        let n_cells = rows * (k + 1);
        if z.nrows() != n_cells {
            return Err(Error::Dimension(format!(
                "Z has {} rows, expected {n_cells}",
                z.nrows()
            )));
        }
        let l = z.ncols();
        for kk in 0..=k {
            for jj in 0..=j {
                if (jj == 0 || kk == 0) && z.row(cell_index(jj, kk, rows)).iter().any(|&x| x != 0.0) {
                    return Err(Error::Domain(format!(
                        "z_({jj},{kk}) must vanish on the reference row and column"
                    )));
                }
            }
        }

        let jk = j * k;
        let mut zcirc = DMatrix::zeros(jk, l);
        let mut c = DMatrix::zeros(n_cells, jk);
        for kk in 1..=k {
            for jj in 1..=j {
                let col = (jj - 1) + j * (kk - 1);
                zcirc.row_mut(col).copy_from(&z.row(cell_index(jj, kk, rows)));
                c[(cell_index(jj, kk, rows), col)] += 1.0;
                c[(cell_index(0, 0, rows), col)] += 1.0;
                c[(cell_index(jj, 0, rows), col)] -= 1.0;
                c[(cell_index(0, kk, rows), col)] -= 1.0;
            }
        }
        let zrank = numerical_rank(&zcirc);
        if zrank < l {
            return Err(Error::Identifiability {
                factor: "Z°".into(),
                rank: zrank,
                expected: l,
            });
        }
        let zcirc_left_inverse = if l == 0 {
            DMatrix::zeros(0, jk)
        } else {
            left_inverse(&zcirc)?
        };

        let mut b = DMatrix::zeros(n_cells, k);
        let mut e = DMatrix::zeros(n_cells, k);
        let mut g = DMatrix::zeros(n_cells, k + 1);
        let mut f = DMatrix::zeros(n_cells, rows);
        for kk in 0..=k {
            for jj in 0..=j {
                let idx = cell_index(jj, kk, rows);
                f[(idx, jj)] = 1.0;
                g[(idx, kk)] = 1.0;
                if kk >= 1 {
                    e[(idx, kk - 1)] = 1.0;
                }
            }
        }
        for kk in 1..=k {
            b[(cell_index(0, kk, rows), kk - 1)] = 1.0;
            b[(cell_index(0, 0, rows), kk - 1)] = -1.0;
        }

        let hbasis = model_space_basis(&f, &e, &z);
        let hrank = numerical_rank(&hbasis);
        if hrank < hbasis.ncols() {
            return Err(Error::Identifiability {
                factor: "model space basis".into(),
                rank: hrank,
                expected: hbasis.ncols(),
            });
        }

        Ok(ModelMatrices {
            j,
            k,
            factor_dims,
            z,
            zcirc,
            zcirc_left_inverse,
            c,
            b,
            e,
            f,
            g,
            hbasis,
        })
    }
}

fn model_space_basis(f: &DMatrix<f64>, e: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let n_cells = f.nrows();
    let j = f.ncols() - 1;
    let k = e.ncols();
    let l = z.ncols();
    let mut h = DMatrix::zeros(n_cells, 1 + j + k + l);
    h.column_mut(0).fill(1.0);
    h.view_mut((0, 1), (n_cells, j)).copy_from(&f.columns(1, j));
    h.view_mut((0, 1 + j), (n_cells, k)).copy_from(e);
    h.view_mut((0, 1 + j + k), (n_cells, l)).copy_from(z);
    h
}

/// `Z = Ỹ_full ⊗ X̃_full`, with zero reference rows.
pub fn interaction_covariates(spec: &DesignSpec) -> DMatrix<f64> {
    kron(&spec.ytilde_full(), &spec.xtilde_full())
}

/// Builds all structural matrices of the log-bilinear model.
pub fn build_model_matrices(spec: &DesignSpec) -> Result<ModelMatrices> {
    for (factor, m) in [("X̃", spec.xtilde()), ("Ỹ", spec.ytilde())] {
        let rank = numerical_rank(m);
        if rank < m.ncols() {
            return Err(Error::Identifiability {
                factor: factor.into(),
                rank,
                expected: m.ncols(),
            });
        }
    }
    ModelMatrices::assemble(
        spec.j(),
        spec.k(),
        interaction_covariates(spec),
        Some((spec.lx(), spec.ly())),
    )
}

/// Numerical ranks behind the identifiability conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentifiabilityReport {
    pub rank_xtilde: usize,
    pub expected_xtilde: usize,
    pub rank_ytilde: usize,
    pub expected_ytilde: usize,
    pub rank_z: usize,
    pub expected_z: usize,
    pub rank_h: usize,
    pub expected_h: usize,
    pub table_shape_ok: bool,
    pub passed: bool,
    pub failures: Vec<String>,
}

impl IdentifiabilityReport {
    /// `(rank X̃, rank Ỹ, rank Z, rank H)`.
    pub fn ranks(&self) -> (usize, usize, usize, usize) {
        (self.rank_xtilde, self.rank_ytilde, self.rank_z, self.rank_h)
    }
}

pub fn check_identifiability(spec: &DesignSpec, table: &ContingencyTable) -> IdentifiabilityReport {
    let z = interaction_covariates(spec);
    let f = DMatrix::from_fn(z.nrows(), spec.j() + 1, |i, jj| {
        if i % (spec.j() + 1) == jj {
            1.0
        } else {
            0.0
        }
    });
    let e = DMatrix::from_fn(z.nrows(), spec.k(), |i, kk| {
        if i / (spec.j() + 1) == kk + 1 {
            1.0
        } else {
            0.0
        }
    });
    let h = model_space_basis(&f, &e, &z);
    let mut report = IdentifiabilityReport {
        rank_xtilde: numerical_rank(spec.xtilde()),
        expected_xtilde: spec.lx(),
        rank_ytilde: numerical_rank(spec.ytilde()),
        expected_ytilde: spec.ly(),
        rank_z: numerical_rank(&z),
        expected_z: spec.l(),
        rank_h: numerical_rank(&h),
        expected_h: h.ncols(),
        table_shape_ok: spec.check_table_shape(table).is_ok(),
        passed: false,
        failures: Vec::new(),
    };
    let checks = [
        ("X̃", report.rank_xtilde, report.expected_xtilde),
        ("Ỹ", report.rank_ytilde, report.expected_ytilde),
        ("Z", report.rank_z, report.expected_z),
        ("model space basis", report.rank_h, report.expected_h),
    ];
    for (name, rank, expected) in checks {
        if rank != expected {
            report
                .failures
                .push(format!("{name} has rank {rank}, expected {expected}"));
        }
    }
    if !report.table_shape_ok {
        report.failures.push(format!(
            "table is {}x{} but the design expects {}x{}",
            table.rows(),
            table.cols(),
            spec.j() + 1,
            spec.k() + 1
        ));
    }
    report.passed = report.failures.is_empty();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    M,
    P,
    MR,
    MC,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemeKind::M => "M",
            SchemeKind::P => "P",
            SchemeKind::MR => "MR",
            SchemeKind::MC => "MC",
        };
        f.write_str(s)
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M" => Ok(SchemeKind::M),
            "P" => Ok(SchemeKind::P),
            "MR" => Ok(SchemeKind::MR),
            "MC" => Ok(SchemeKind::MC),
            _ => Err(Error::Parse(format!("unknown sampling scheme `{s}`"))),
        }
    }
}

/// Sampling scheme of a table together with its fixed sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme")]
pub enum SchemeSpec {
    /// Multinomial with fixed grand total.
    #[serde(rename = "M")]
    Multinomial { n: f64 },
    /// Independent Poisson cells with total expectation `nu`.
    #[serde(rename = "P")]
    Poisson { nu: f64 },
    /// Independent multinomial rows with sizes `n_j`, `j = 0..J`.
    #[serde(rename = "MR")]
    RowMultinomial { row_sizes: Vec<f64> },
    /// Independent multinomial columns with sizes `m_k`, `k = 0..K`.
    #[serde(rename = "MC")]
    ColumnMultinomial { col_sizes: Vec<f64> },
}

impl SchemeSpec {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeSpec::Multinomial { .. } => SchemeKind::M,
            SchemeSpec::Poisson { .. } => SchemeKind::P,
            SchemeSpec::RowMultinomial { .. } => SchemeKind::MR,
            SchemeSpec::ColumnMultinomial { .. } => SchemeKind::MC,
        }
    }

    /// The scheme of `kind` whose fixed sizes match the totals of `table`.
    pub fn matching(kind: SchemeKind, table: &ContingencyTable) -> Self {
        match kind {
            SchemeKind::M => SchemeSpec::Multinomial { n: table.total() },
            SchemeKind::P => SchemeSpec::Poisson { nu: table.total() },
            SchemeKind::MR => SchemeSpec::RowMultinomial {
                row_sizes: table.row_totals(),
            },
            SchemeKind::MC => SchemeSpec::ColumnMultinomial {
                col_sizes: table.col_totals(),
            },
        }
    }

    /// Checks positivity of the active sizes and their count against a
    /// `rows×cols` table.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive, got {x}")))
            }
        };
        match self {
            SchemeSpec::Multinomial { n } => positive("n", *n),
            SchemeSpec::Poisson { nu } => positive("nu", *nu),
            SchemeSpec::RowMultinomial { row_sizes } => {
                if row_sizes.len() != rows {
                    return Err(Error::Dimension(format!(
                        "{} row sizes for {rows} rows",
                        row_sizes.len()
                    )));
                }
                row_sizes.iter().try_for_each(|&x| positive("row size", x))
            }
            SchemeSpec::ColumnMultinomial { col_sizes } => {
                if col_sizes.len() != cols {
                    return Err(Error::Dimension(format!(
                        "{} column sizes for {cols} columns",
                        col_sizes.len()
                    )));
                }
                col_sizes.iter().try_for_each(|&x| positive("column size", x))
            }
        }
    }
}
