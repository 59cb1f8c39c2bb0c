//! Five-point Laplace system over the transition cells.
//!
//! Each transition cell contributes one row `4 h_i - sum(transition neighbors) = rhs_i`,
//! where fixed neighbors are substituted: obstacle cells hold `-a`, safe cells
//! and anything beyond the map edge hold `b`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fmt_g, Cell};
use crate::ogm::{Region, RegionLabels};

/// Default cap on the dense Gaussian-elimination oracle.
pub const DEFAULT_ORACLE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValues {
    /// Obstacle temperature magnitude; obstacles are held at `-a`.
    pub a: f64,
    /// Safe-region and map-border temperature.
    pub b_val: f64,
}

impl BoundaryValues {
    pub fn new(a: f64, b_val: f64) -> Result<Self> {
        let bv = Self { a, b_val };
        bv.validate()?;
        Ok(bv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b_val > 0.0 && self.b_val.is_finite()) {
            return Err(Error::Contract(format!(
                "boundary values must be positive, got a = {}, b = {}",
                self.a, self.b_val
            )));
        }
        Ok(())
    }
}

impl Default for BoundaryValues {
    fn default() -> Self {
        Self { a: 1.0, b_val: 1.0 }
    }
}

/// Row-major bijection between transition cells and unknown indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownIndex {
    width: usize,
    cell_of: Vec<Cell>,
    index_of: Vec<Option<u32>>,
}

impl UnknownIndex {
    pub fn count(&self) -> usize {
        self.cell_of.len()
    }

    pub fn cell_of(&self, unknown: usize) -> Cell {
        self.cell_of[unknown]
    }

    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        self.index_of[row * self.width + col].map(|k| k as usize)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cell_of
    }
}

/// CSR matrix `A` with right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries `(col, value)` of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v)
    }

    /// Dense row-major copy; test and oracle use only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[i * self.n + j] += v;
            }
        }
        a
    }

    /// Checks CSR well-formedness.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if self.row_ptr.len() != self.n + 1 || self.row_ptr[0] != 0 {
            return bad("row_ptr must have N+1 entries starting at 0".into());
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len() || self.col_idx.len() != self.values.len() {
            return bad("row_ptr end does not match nnz".into());
        }
        if self.rhs.len() != self.n {
            return bad(format!("rhs has {} entries for N = {}", self.rhs.len(), self.n));
        }
        for i in 0..self.n {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return bad(format!("row_ptr decreases at row {i}"));
            }
            let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            if cols.iter().any(|&c| c >= self.n) {
                return bad(format!("column index out of range in row {i}"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns not strictly increasing in row {i}"));
            }
        }
        Ok(())
    }

    /// Matrix Market coordinate file storing the lower triangle (1-based).
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j <= i).map(move |(j, v)| (i, j, v)))
            .collect();
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(out, "{} {} {}", self.n, self.n, lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(out, "{} {} {}", i + 1, j + 1, fmt_g(v, 17));
        }
        out
    }

    /// One rhs value per line.
    pub fn rhs_to_text(&self) -> String {
        let mut out = String::new();
        for &v in &self.rhs {
            let _ = writeln!(out, "{}", fmt_g(v, 17));
        }
        out
    }
}

pub fn index_unknowns(labels: &RegionLabels) -> UnknownIndex {
    let (h, w) = (labels.height(), labels.width());
    let mut cell_of = Vec::new();
    let mut index_of = vec![None; h * w];
    for i in 0..h {
        for j in 0..w {
            if labels.get(i, j) == Region::Transition {
                index_of[i * w + j] = Some(cell_of.len() as u32);
                cell_of.push((i, j));
            }
        }
    }
    UnknownIndex {
        width: w,
        cell_of,
        index_of,
    }
}

/// Assembles the stencil rows in unknown order. Neighbors are visited
/// up, left, (self), right, down, which keeps column indices sorted under
/// row-major numbering.
pub fn assemble(labels: &RegionLabels, index: &UnknownIndex, bv: BoundaryValues) -> Result<LinearSystem> {
    bv.validate()?;
    if index.width != labels.width() || index.index_of.len() != labels.height() * labels.width() {
        return Err(Error::Contract("unknown index does not match labels".into()));
    }
    let n = index.count();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(5 * n);
    let mut values = Vec::with_capacity(5 * n);
    let mut rhs = Vec::with_capacity(n);
    row_ptr.push(0);

    let (h, w) = (labels.height(), labels.width());
    for (k, &(i, j)) in index.cell_of.iter().enumerate() {
        let mut b = 0.0;
        let mut visit = |nbr: Option<Cell>, col_idx: &mut Vec<usize>, values: &mut Vec<f64>| match nbr {
            None => b += bv.b_val,
            Some((r, c)) => match labels.get(r, c) {
                Region::Obstacle => b -= bv.a,
                Region::Safe => b += bv.b_val,
                Region::Transition => {
                    col_idx.push(index.index_of(r, c).expect("transition cell is indexed"));
                    values.push(-1.0);
                }
            },
        };
        visit(i.checked_sub(1).map(|r| (r, j)), &mut col_idx, &mut values);
        visit(j.checked_sub(1).map(|c| (i, c)), &mut col_idx, &mut values);
        col_idx.push(k);
        values.push(4.0);
        visit((j + 1 < w).then_some((i, j + 1)), &mut col_idx, &mut values);
        visit((i + 1 < h).then_some((i + 1, j)), &mut col_idx, &mut values);
        rhs.push(b);
        row_ptr.push(col_idx.len());
    }

    Ok(LinearSystem {
        n,
        row_ptr,
        col_idx,
        values,
        rhs,
    })
}

/// Gaussian elimination with partial pivoting.
pub fn dense_oracle_solve(sys: &LinearSystem, cap: usize) -> Result<Vec<f64>> {
    let n = sys.n;
    if n > cap {
        return Err(Error::OracleCap { n, cap });
    }
    let mut a = sys.to_dense();
    let mut x = sys.rhs.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
            .expect("non-empty pivot range");
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(Error::SingularPivot(col));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            x.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}
