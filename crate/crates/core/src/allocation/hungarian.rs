use super::{AllocationError, PairId, UserId};
use serde::{Deserialize, Serialize};

/// Utility of assigning pair `row` to user `col`, `rows × cols`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    pub row_ids: Vec<PairId>,
    pub col_ids: Vec<UserId>,
}

impl CostMatrix {
    pub fn new(
        values: Vec<f64>,
        row_ids: Vec<PairId>,
        col_ids: Vec<UserId>,
    ) -> Result<Self, AllocationError> {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        if values.len() != rows * cols {
            return Err(AllocationError::DimensionMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            rows,
            cols,
            row_ids,
            col_ids,
        })
    }

    /// Builds a matrix with positional ids `PairId(r)`, `UserId(c)`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AllocationError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AllocationError::RaggedMatrix);
        }
        Self::new(
            rows.concat(),
            (0..rows.len() as u32).map(PairId).collect(),
            (0..cols as u64).map(UserId).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Maximum-weight assignment of `min(rows, cols)` disjoint `(row, col)` pairs.
///
/// Rectangular inputs are padded to square with zero-valued dummy rows or columns;
/// matches involving a dummy are dropped. Shortest augmenting path with row/column
/// potentials, `O(n^3)` for `n = max(rows, cols)`.
pub fn hungarian_max(matrix: &CostMatrix) -> Result<Assignment, AllocationError> {
    if matrix.rows == 0 || matrix.cols == 0 {
        return Err(AllocationError::EmptyMatrix);
    }
    if let Some(i) = matrix.values.iter().position(|v| !v.is_finite()) {
        return Err(AllocationError::NonFinite {
            row: i / matrix.cols,
            col: i % matrix.cols,
        });
    }
    let n = matrix.rows.max(matrix.cols);
    let top = matrix.values.iter().copied().fold(0.0_f64, f64::max);
    // minimisation cost, 1-indexed; dummies have value 0
    let cost = |i: usize, j: usize| -> f64 {
        if i <= matrix.rows && j <= matrix.cols {
            top - matrix.get(i - 1, j - 1)
        } else {
            top
        }
    };

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0, j) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let i = row_of_col[j];
            (i <= matrix.rows && j <= matrix.cols).then(|| (i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| matrix.get(r, c)).sum();
    Ok(Assignment { pairs, total })
}
