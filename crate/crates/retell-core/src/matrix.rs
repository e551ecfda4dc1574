//! Rank-correlation similarity matrices.
//!
//! Every story-segment embedding is correlated against every recall-segment
//! embedding with Spearman's rank correlation (average ranks on ties), and
//! each coefficient is Fisher-Z transformed. Perfect correlations are
//! clamped to `1 - 1e-7` before `atanh` so self-similarity stays finite and
//! order-preserving. Rating-mode matrices reuse the same container but hold
//! proportions in `[0, 1]` and may carry absent cells (diagonal-only runs).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;

/// Correlations are clamped to `±(1 - FISHER_CLAMP)` before `atanh`.
pub const FISHER_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("input vectors must have equal length >= 3 (got {x} and {y})")]
    BadInput { x: usize, y: usize },
    #[error("non-finite value in input vector")]
    NonFinite,
    #[error("constant vector has no rank variance{}", cell_context(.row, .col))]
    ConstantVector {
        row: Option<usize>,
        col: Option<usize>,
    },
    #[error("matrix needs at least 2 rows and 2 columns (got {rows}x{cols})")]
    TooSmall { rows: usize, cols: usize },
    #[error("embedding dimensions differ across inputs ({expected} vs {got})")]
    DimMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("cell ({row},{col}) is absent")]
    AbsentCell { row: usize, col: usize },
    #[error("matrix dump is malformed: {0}")]
    BadDump(String),
}

fn cell_context(row: &Option<usize>, col: &Option<usize>) -> String {
    match (row, col) {
        (Some(r), Some(c)) => format!(" at cell ({r},{c})"),
        _ => String::new(),
    }
}

/// Average ranks, 1-based; ties receive the mean of the positions they span.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite values"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks on ties.
///
/// A constant input is an error rather than `r = 0`: a constant embedding
/// signals an upstream provider failure and must surface loudly.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MatrixError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(MatrixError::BadInput {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MatrixError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(MatrixError::ConstantVector {
        row: None,
        col: None,
    })
}

/// `atanh` of the correlation, clamped away from `±1`.
///
/// Computed on the magnitude and sign-copied so `fisher_z(-r)` is exactly
/// `-fisher_z(r)` (libm's `atanh` is not perfectly odd near the clamp).
pub fn fisher_z(r: f64) -> f64 {
    let limit = 1.0 - FISHER_CLAMP;
    r.abs().min(limit).atanh().copysign(r)
}

/// Scoring backend a matrix was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixMode {
    /// Fisher-Z Spearman correlations of segment embeddings.
    Embedding,
    /// Mean rating replicates scaled to `[0, 1]`.
    Rating,
}

/// Rows are story segments (or the target recall for intersubject
/// matrices); columns are recall segments. Cells may be absent in
/// diagonal-only rating mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    mode: MatrixMode,
    row_label: String,
    col_label: String,
    n_rows: usize,
    n_cols: usize,
    cells: Vec<Option<f64>>,
}

impl SimilarityMatrix {
    /// Build a fully populated matrix from row-major values.
    pub fn full(
        mode: MatrixMode,
        n_rows: usize,
        n_cols: usize,
        values: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        if n_rows < 2 || n_cols < 2 || values.len() != n_rows * n_cols {
            return Err(MatrixError::TooSmall {
                rows: n_rows,
                cols: n_cols,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite);
        }
        Ok(Self {
            mode,
            row_label: String::new(),
            col_label: String::new(),
            n_rows,
            n_cols,
            cells: values.into_iter().map(Some).collect(),
        })
    }

    /// Build a matrix that may contain absent cells.
    pub fn sparse(
        mode: MatrixMode,
        n_rows: usize,
        n_cols: usize,
        cells: Vec<Option<f64>>,
    ) -> Result<Self, MatrixError> {
        if n_rows < 2 || n_cols < 2 || cells.len() != n_rows * n_cols {
            return Err(MatrixError::TooSmall {
                rows: n_rows,
                cols: n_cols,
            });
        }
        if cells.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite);
        }
        Ok(Self {
            mode,
            row_label: String::new(),
            col_label: String::new(),
            n_rows,
            n_cols,
            cells,
        })
    }

    pub fn with_labels(mut self, row_label: impl Into<String>, col_label: impl Into<String>) -> Self {
        self.row_label = row_label.into();
        self.col_label = col_label.into();
        self
    }

    pub fn mode(&self) -> MatrixMode {
        self.mode
    }

    pub fn row_label(&self) -> &str {
        &self.row_label
    }

    pub fn col_label(&self) -> &str {
        &self.col_label
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.n_cols + col]
    }

    /// Dense row, erroring on any absent cell.
    pub fn dense_row(&self, row: usize) -> Result<Vec<f64>, MatrixError> {
        (0..self.n_cols)
            .map(|col| {
                self.get(row, col)
                    .ok_or(MatrixError::AbsentCell { row, col })
            })
            .collect()
    }

    fn require_square(&self) -> Result<usize, MatrixError> {
        if !self.is_square() {
            return Err(MatrixError::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        Ok(self.n_rows)
    }

    /// Main diagonal, top-left to bottom-right.
    pub fn diagonal(&self) -> Result<Vec<f64>, MatrixError> {
        let n = self.require_square()?;
        (0..n)
            .map(|i| self.get(i, i).ok_or(MatrixError::AbsentCell { row: i, col: i }))
            .collect()
    }

    /// Anti-diagonal, top-right to bottom-left (row `i` pairs with column
    /// `n-1-i`). For odd `n` the centre cell belongs to both diagonals.
    pub fn anti_diagonal(&self) -> Result<Vec<f64>, MatrixError> {
        let n = self.require_square()?;
        (0..n)
            .map(|i| {
                self.get(i, n - 1 - i).ok_or(MatrixError::AbsentCell {
                    row: i,
                    col: n - 1 - i,
                })
            })
            .collect()
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let mut cells = Vec::with_capacity(self.cells.len());
        for col in 0..self.n_cols {
            for row in 0..self.n_rows {
                cells.push(self.get(row, col));
            }
        }
        SimilarityMatrix {
            mode: self.mode,
            row_label: self.col_label.clone(),
            col_label: self.row_label.clone(),
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            cells,
        }
    }

    /// Plot-ready dump: `{"mode","row_label","col_label","n","values"}`.
    pub fn to_dump(&self) -> Result<MatrixDump, MatrixError> {
        let n = self.require_square()?;
        let values = (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j)).collect())
            .collect();
        Ok(MatrixDump {
            mode: self.mode,
            row_label: self.row_label.clone(),
            col_label: self.col_label.clone(),
            n,
            values,
        })
    }

    pub fn from_dump(dump: MatrixDump) -> Result<Self, MatrixError> {
        let n = dump.n;
        if dump.values.len() != n || dump.values.iter().any(|r| r.len() != n) {
            return Err(MatrixError::BadDump(format!(
                "values grid does not match n={n}"
            )));
        }
        let cells = dump.values.into_iter().flatten().collect();
        Ok(Self::sparse(dump.mode, n, n, cells)?
            .with_labels(dump.row_label, dump.col_label))
    }
}

/// Serialized form of a square [`SimilarityMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub mode: MatrixMode,
    pub row_label: String,
    pub col_label: String,
    pub n: usize,
    pub values: Vec<Vec<Option<f64>>>,
}

fn check_inputs(
    rows: &[EmbeddingVector],
    cols: &[EmbeddingVector],
) -> Result<(), MatrixError> {
    if rows.len() < 2 || cols.len() < 2 {
        return Err(MatrixError::TooSmall {
            rows: rows.len(),
            cols: cols.len(),
        });
    }
    let dim = rows[0].dim();
    for v in rows.iter().chain(cols) {
        if v.dim() != dim {
            return Err(MatrixError::DimMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }
    Ok(())
}

fn matrix_row(
    row: usize,
    r: &EmbeddingVector,
    cols: &[EmbeddingVector],
) -> Result<Vec<f64>, MatrixError> {
    cols.iter()
        .enumerate()
        .map(|(col, c)| {
            spearman(r.values(), c.values())
                .map(fisher_z)
                .map_err(|e| match e {
                    MatrixError::ConstantVector { .. } => MatrixError::ConstantVector {
                        row: Some(row),
                        col: Some(col),
                    },
                    other => other,
                })
        })
        .collect()
}

fn assemble(
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
) -> Result<SimilarityMatrix, MatrixError> {
    SimilarityMatrix::full(
        MatrixMode::Embedding,
        rows,
        cols,
        data.into_iter().flatten().collect(),
    )
}

/// Fisher-Z Spearman matrix of `rows` against `cols` (sequential path).
pub fn build_matrix_seq(
    rows: &[EmbeddingVector],
    cols: &[EmbeddingVector],
) -> Result<SimilarityMatrix, MatrixError> {
    check_inputs(rows, cols)?;
    let data = rows
        .iter()
        .enumerate()
        .map(|(i, r)| matrix_row(i, r, cols))
        .collect::<Result<Vec<_>, _>>()?;
    assemble(rows.len(), cols.len(), data)
}

/// Fisher-Z Spearman matrix of `rows` against `cols`, rows computed on the
/// rayon pool. Output is identical to [`build_matrix_seq`].
#[cfg(feature = "parallel")]
pub fn build_matrix_par(
    rows: &[EmbeddingVector],
    cols: &[EmbeddingVector],
) -> Result<SimilarityMatrix, MatrixError> {
    use rayon::prelude::*;
    check_inputs(rows, cols)?;
    let data = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| matrix_row(i, r, cols))
        .collect::<Result<Vec<_>, _>>()?;
    assemble(rows.len(), cols.len(), data)
}

/// Fisher-Z Spearman matrix of `rows` against `cols`.
///
/// Entry `(i, j)` is `fisher_z(spearman(rows[i], cols[j]))`. Dispatches to
/// the parallel implementation when the `parallel` feature is enabled.
pub fn build_matrix(
    rows: &[EmbeddingVector],
    cols: &[EmbeddingVector],
) -> Result<SimilarityMatrix, MatrixError> {
    #[cfg(feature = "parallel")]
    {
        build_matrix_par(rows, cols)
    }
    #[cfg(not(feature = "parallel"))]
    {
        build_matrix_seq(rows, cols)
    }
}
