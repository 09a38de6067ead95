//! Structured-sparse sequence matching.
//!
//! Given a template matrix `X` (m x n) whose columns are grouped into `k`
//! contiguous template sequences of length `l`, and a query `Y` (m x l), the
//! weight matrix `W` (n x l) minimizes
//!
//! ```text
//! ||(XW - Y)^T||_{2,1} + lambda1 ||W||_{2,1} + lambda2 ||W||_{S1}
//! ```
//!
//! where `||W||_{S1}` sums the l2 norms of every (column, group) slice of
//! `W`. The problem is solved by iteratively reweighted least squares: each
//! non-smooth norm is replaced by a quadratic whose weights come from the
//! previous iterate, which makes every column an independent SPD solve.
//!
//! All reweighting denominators are floored at `epsilon`. With that floor the
//! iteration monotonically decreases the Huber-smoothed objective (see
//! [`smoothed_objective`]), which differs from the exact one by at most
//! `epsilon / 2` per norm term.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Template database `X`: columns grouped into equal-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatrix {
    data: DMatrix<f64>,
    seq_len: usize,
}

impl TemplateMatrix {
    pub fn new(data: DMatrix<f64>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::invalid("sequence length must be at least 1"));
        }
        if data.ncols() % seq_len != 0 {
            return Err(Error::invalid(format!(
                "{} template columns do not split into sequences of {seq_len}",
                data.ncols()
            )));
        }
        Ok(Self { data, seq_len })
    }

    /// An empty database for features of length `m`.
    pub fn empty(m: usize, seq_len: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(m, 0), seq_len)
    }

    /// Appends one template sequence (m x l).
    pub fn push_sequence(&mut self, seq: &DMatrix<f64>) -> Result<()> {
        if seq.nrows() != self.data.nrows() || seq.ncols() != self.seq_len {
            return Err(Error::invalid(format!(
                "sequence is {}x{}, database expects {}x{}",
                seq.nrows(),
                seq.ncols(),
                self.data.nrows(),
                self.seq_len
            )));
        }
        let n = self.data.ncols();
        let data = std::mem::replace(&mut self.data, DMatrix::zeros(0, 0));
        let mut grown = data.resize_horizontally(n + self.seq_len, 0.0);
        grown.columns_mut(n, self.seq_len).copy_from(seq);
        self.data = grown;
        Ok(())
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn feature_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_columns(&self) -> usize {
        self.data.ncols()
    }

    pub fn num_seqs(&self) -> usize {
        self.data.ncols() / self.seq_len
    }

    pub fn seq_of_column(&self, column: usize) -> usize {
        column / self.seq_len
    }

    pub fn group_range(&self, seq: usize) -> Range<usize> {
        seq * self.seq_len..(seq + 1) * self.seq_len
    }

    /// Columns of template sequence `seq`.
    pub fn sequence(&self, seq: usize) -> DMatrix<f64> {
        self.data.columns(seq * self.seq_len, self.seq_len).into_owned()
    }
}

/// Query `Y`: `l` feature vectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySequence {
    pub data: DMatrix<f64>,
}

impl QuerySequence {
    pub fn new(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    /// Stacks feature vectors as columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let m = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != m) {
            return Err(Error::invalid("query columns have different lengths"));
        }
        Ok(Self::new(DMatrix::from_fn(m, columns.len(), |r, c| columns[c][r])))
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

/// Solver output `W` (n x l); rows are grouped like the template columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub data: DMatrix<f64>,
    group_size: usize,
}

impl WeightMatrix {
    pub fn new(data: DMatrix<f64>, group_size: usize) -> Result<Self> {
        if group_size == 0 || data.nrows() % group_size != 0 {
            return Err(Error::invalid(format!(
                "{} weight rows do not split into groups of {group_size}",
                data.nrows()
            )));
        }
        Ok(Self { data, group_size })
    }

    pub fn zeros(n: usize, l: usize, group_size: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, l), group_size)
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn num_groups(&self) -> usize {
        self.data.nrows() / self.group_size
    }

    pub fn group_range(&self, group: usize) -> Range<usize> {
        group * self.group_size..(group + 1) * self.group_size
    }

    /// l2 norm of the group-`group` slice of column `col`.
    pub fn group_norm(&self, col: usize, group: usize) -> f64 {
        self.data.view((group * self.group_size, col), (self.group_size, 1)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Floor on every reweighting denominator.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    pub rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { lambda1: 0.45, lambda2: 0.45, epsilon: 1e-8, max_iter: 100, rel_tol: 1e-6 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::invalid("lambda1 and lambda2 must be nonnegative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        Ok(())
    }
}

/// Reweighting scalars of the last iteration plus the objective history.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// `p_ii = 1 / (2 ||y_i - X w_i||)`, one per query column.
    pub p: Vec<f64>,
    /// `q_rr = 1 / (2 ||w^r||)`, one per template (row of `W`).
    pub q: Vec<f64>,
    /// `r[i][j] = 1 / (2 ||w_i^j||)`, per query column and template group.
    pub r: Vec<Vec<f64>>,
    /// Smoothed objective at the initial point and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Sum of the l2 norms of the rows of `m`.
pub fn l21_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).sum()
}

/// Sum over columns and row groups of the l2 norm of each slice.
pub fn s1_norm(w: &WeightMatrix) -> f64 {
    (0..w.data.ncols())
        .map(|i| (0..w.num_groups()).map(|j| w.group_norm(i, j)).sum::<f64>())
        .sum()
}

fn check_shapes(x: &TemplateMatrix, y: &QuerySequence, w: &WeightMatrix) -> Result<()> {
    if x.feature_len() != y.data.nrows() {
        return Err(Error::invalid(format!(
            "templates have {} features, query has {}",
            x.feature_len(),
            y.data.nrows()
        )));
    }
    if w.data.nrows() != x.num_columns() || w.data.ncols() != y.len() {
        return Err(Error::invalid(format!(
            "weights are {}x{}, expected {}x{}",
            w.data.nrows(),
            w.data.ncols(),
            x.num_columns(),
            y.len()
        )));
    }
    if w.group_size != x.seq_len() {
        return Err(Error::invalid("weight groups do not mirror template sequences"));
    }
    Ok(())
}

/// `||(XW - Y)^T||_{2,1} + lambda1 ||W||_{2,1} + lambda2 ||W||_{S1}`.
pub fn objective(
    x: &TemplateMatrix,
    y: &QuerySequence,
    w: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_shapes(x, y, w)?;
    let residual = x.data() * &w.data - &y.data;
    Ok(l21_norm(&residual.transpose()) + cfg.lambda1 * l21_norm(&w.data) + cfg.lambda2 * s1_norm(w))
}

/// Huber smoothing of a norm value: `t` above `eps`, `(t^2/eps + eps)/2` below.
#[inline]
fn huber(t: f64, eps: f64) -> f64 {
    if t >= eps {
        t
    } else {
        0.5 * (t * t / eps + eps)
    }
}

/// The objective with every norm term passed through [`huber`] at
/// `cfg.epsilon`. This is the quantity the reweighted iteration decreases.
pub fn smoothed_objective(
    x: &TemplateMatrix,
    y: &QuerySequence,
    w: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_shapes(x, y, w)?;
    Ok(smoothed_unchecked(x, y, w, cfg))
}

fn smoothed_unchecked(x: &TemplateMatrix, y: &QuerySequence, w: &WeightMatrix, cfg: &SolverConfig) -> f64 {
    let eps = cfg.epsilon;
    let residual = x.data() * &w.data - &y.data;
    let loss: f64 = residual.column_iter().map(|c| huber(c.norm(), eps)).sum();
    let rows: f64 = w.data.row_iter().map(|r| huber(r.norm(), eps)).sum();
    let groups: f64 = (0..w.data.ncols())
        .map(|i| (0..w.num_groups()).map(|j| huber(w.group_norm(i, j), eps)).sum::<f64>())
        .sum();
    loss + cfg.lambda1 * rows + cfg.lambda2 * groups
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Minimizes the matching objective for query `y` against templates `x`.
pub fn solve(
    x: &TemplateMatrix,
    y: &QuerySequence,
    cfg: &SolverConfig,
) -> Result<(WeightMatrix, SolverState)> {
    cfg.validate()?;
    let n = x.num_columns();
    let l = y.len();
    if n == 0 {
        return Err(Error::Precondition("template database is empty".into()));
    }
    if x.feature_len() != y.data.nrows() {
        return Err(Error::invalid(format!(
            "templates have {} features, query has {}",
            x.feature_len(),
            y.data.nrows()
        )));
    }
    if l != x.seq_len() {
        return Err(Error::invalid(format!(
            "query has {l} observations, templates use sequences of {}",
            x.seq_len()
        )));
    }
    if !all_finite(x.data()) || !all_finite(&y.data) {
        return Err(Error::invalid("non-finite value in templates or query"));
    }
    if cfg.lambda1 + cfg.lambda2 <= 0.0 {
        return Err(Error::invalid("at least one of lambda1, lambda2 must be positive"));
    }

    let eps = cfg.epsilon;
    let k = x.num_seqs();
    let group = x.seq_len();
    let gram = x.data().transpose() * x.data();
    let xty = x.data().transpose() * &y.data;

    // Ridge start: (X^T X + (lambda1 + lambda2) I)^-1 X^T y_i.
    let mut ridge = gram.clone();
    for d in 0..n {
        ridge[(d, d)] += cfg.lambda1 + cfg.lambda2;
    }
    let chol = ridge.cholesky().ok_or_else(|| Error::Numeric {
        iteration: 0,
        reason: "ridge system is not positive definite".into(),
    })?;
    let mut w = WeightMatrix::new(chol.solve(&xty), group)?;

    let mut state = SolverState {
        p: vec![0.0; l],
        q: vec![0.0; n],
        r: vec![vec![0.0; k]; l],
        objective_trace: vec![smoothed_unchecked(x, y, &w, cfg)],
        iterations: 0,
        converged: false,
    };

    for iteration in 1..=cfg.max_iter {
        let residual = x.data() * &w.data - &y.data;
        for i in 0..l {
            state.p[i] = 0.5 / residual.column(i).norm().max(eps);
        }
        for (r, q) in state.q.iter_mut().enumerate() {
            *q = 0.5 / w.data.row(r).norm().max(eps);
        }
        for i in 0..l {
            for j in 0..k {
                state.r[i][j] = 0.5 / w.group_norm(i, j).max(eps);
            }
        }

        let mut next = DMatrix::zeros(n, l);
        for i in 0..l {
            let p = state.p[i];
            let mut system = &gram * p;
            for d in 0..n {
                system[(d, d)] += cfg.lambda1 * state.q[d] + cfg.lambda2 * state.r[i][d / group];
            }
            let chol = system.cholesky().ok_or_else(|| Error::Numeric {
                iteration,
                reason: format!("reweighted system for column {i} is not positive definite"),
            })?;
            let rhs: DVector<f64> = xty.column(i) * p;
            let col = chol.solve(&rhs);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    iteration,
                    reason: format!("non-finite weights in column {i}"),
                });
            }
            next.set_column(i, &col);
        }
        w.data = next;

        let f = smoothed_unchecked(x, y, &w, cfg);
        let prev = *state.objective_trace.last().expect("trace starts non-empty");
        state.objective_trace.push(f);
        state.iterations = iteration;
        if (f - prev).abs() / prev.max(1e-12) < cfg.rel_tol {
            state.converged = true;
            break;
        }
    }
    Ok((w, state))
}
