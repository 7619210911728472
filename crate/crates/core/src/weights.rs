//! Weight matrices with graph zero-structure, and the shifted descent matrix.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::rng::seeded;

/// Non-negative `n×n` matrix whose off-diagonal support is exactly the edge set of its graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixWire", into = "MatrixWire")]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    graph: DirectedGraph,
}

/// JSON layout: `{"n": int, "rows": [[...], ...]}`.
#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixWire {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixWire {
    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixWire { n: m.nrows(), rows: m.row_iter().map(|r| r.iter().copied().collect()).collect() }
    }

    pub(crate) fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.rows.len() != self.n || self.rows.iter().any(|r| r.len() != self.n) {
            return Err(Error::Dimension(format!("expected {0}x{0} rows", self.n)));
        }
        Ok(DMatrix::from_fn(self.n, self.n, |i, j| self.rows[i][j]))
    }
}

impl TryFrom<MatrixWire> for WeightMatrix {
    type Error = Error;

    fn try_from(w: MatrixWire) -> Result<Self> {
        WeightMatrix::from_entries(w.into_matrix()?)
    }
}

impl From<WeightMatrix> for MatrixWire {
    fn from(w: WeightMatrix) -> Self {
        MatrixWire::from_matrix(&w.entries)
    }
}

impl WeightMatrix {
    /// Validates `entries` against `graph`.
    pub fn new(graph: DirectedGraph, entries: DMatrix<f64>) -> Result<Self> {
        let n = graph.n();
        if entries.shape() != (n, n) {
            return Err(Error::Dimension(format!("weights are {:?}, graph has {n} nodes", entries.shape())));
        }
        for i in 0..n {
            for j in 0..n {
                let a = entries[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidWeights(format!("entry ({}, {}) = {a}", i + 1, j + 1)));
                }
                if i != j && (a > 0.0) != graph.has_edge(i, j) {
                    return Err(Error::InvalidWeights(format!(
                        "entry ({}, {}) = {a} does not match the graph structure",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { entries, graph })
    }

    /// Infers the graph from the off-diagonal support.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension("weight matrix must be square".into()));
        }
        let n = entries.nrows();
        let edges = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && entries[(i, j)] > 0.0);
        let graph = DirectedGraph::new(n, edges.collect::<Vec<_>>())?;
        Self::new(graph, entries)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows must form a square matrix".into()));
        }
        Self::from_entries(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries == self.entries.transpose()
    }

    /// Sum of the off-diagonal entries of row `i`.
    pub fn off_diagonal_sum(&self, i: usize) -> f64 {
        self.entries.row(i).sum() - self.entries[(i, i)]
    }

    pub fn max_row_sum(&self) -> f64 {
        (0..self.n()).map(|i| self.entries.row(i).sum()).fold(0.0, f64::max)
    }

    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        (0..self.n()).all(|i| self.entries[(i, i)] > self.off_diagonal_sum(i))
    }

    /// `a_ii > √2 · Σ_{j≠i} a_ij` for every row.
    pub fn satisfies_sqrt2_condition(&self) -> bool {
        (0..self.n()).all(|i| self.entries[(i, i)] > std::f64::consts::SQRT_2 * self.off_diagonal_sum(i))
    }

    /// Random strictly diagonally dominant weights on `graph`.
    ///
    /// Edge weights are uniform on (0, 1]; with `symmetric` the two draws of a pair
    /// are averaged. The diagonal is `(1 + margin)` times the off-diagonal row sum
    /// (or 1 for an isolated node).
    pub fn sample_sdd(graph: &DirectedGraph, margin: f64, symmetric: bool, seed: u64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidWeights(format!("margin must be positive, got {margin}")));
        }
        if symmetric && !graph.is_symmetric() {
            return Err(Error::AsymmetricGraph);
        }
        let n = graph.n();
        let mut rng = seeded(seed);
        let mut draws = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                // (0, 1]
                draws[(i, j)] = 1.0 - rng.random::<f64>();
            }
        }
        let mut entries = DMatrix::zeros(n, n);
        for (i, j) in graph.edges() {
            entries[(i, j)] = if symmetric { 0.5 * (draws[(i, j)] + draws[(j, i)]) } else { draws[(i, j)] };
        }
        for i in 0..n {
            let off: f64 = entries.row(i).sum();
            entries[(i, i)] = if off > 0.0 { (1.0 + margin) * off } else { 1.0 };
        }
        Self::new(graph.clone(), entries)
    }

    /// `α I − A` with `α = (1 + slack) · max_i Σ_j a_ij`.
    pub fn descent_matrix(&self, slack: f64) -> Result<DescentMatrix> {
        if !(slack > 0.0 && slack.is_finite()) {
            return Err(Error::InvalidWeights(format!("slack must be positive, got {slack}")));
        }
        let alpha = (1.0 + slack) * self.max_row_sum();
        let n = self.n();
        let entries = DMatrix::identity(n, n) * alpha - &self.entries;
        Ok(DescentMatrix { entries, alpha, source: self.clone() })
    }

    /// Divides each row by its diagonal entry.
    pub fn left_scale_normalize(&self) -> Result<Self> {
        let mut entries = self.entries.clone();
        for i in 0..self.n() {
            let d = entries[(i, i)];
            if d <= 0.0 {
                return Err(Error::InvalidWeights(format!("diagonal entry {} is zero", i + 1)));
            }
            entries.row_mut(i).unscale_mut(d);
        }
        Self::new(self.graph.clone(), entries)
    }

    /// Rescales rows by positive factors, which leaves the iteration unchanged.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.n() || factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::InvalidWeights("row factors must be positive, one per row".into()));
        }
        let mut entries = self.entries.clone();
        for (i, &f) in factors.iter().enumerate() {
            entries.row_mut(i).scale_mut(f);
        }
        Self::new(self.graph.clone(), entries)
    }

    pub fn content_hash(&self) -> String {
        crate::rng::short_hash(serde_json::to_string(self).expect("matrix serializes").as_bytes())
    }

    /// Row-major CSV with a `c1,...,cn` header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.entries, out)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=m.ncols()).map(|j| format!("c{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `α I − A`: the iteration with this matrix descends the potential of `A`.
///
/// Its off-diagonal entries are non-positive, so it is not a weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentMatrix {
    entries: DMatrix<f64>,
    alpha: f64,
    source: WeightMatrix,
}

impl DescentMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn source(&self) -> &WeightMatrix {
        &self.source
    }
}
