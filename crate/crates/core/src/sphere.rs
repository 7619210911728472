//! Agent configurations on the product of unit spheres `(S^{d-1})^n`.
//!
//! A configuration is stored as the `n×d` matrix `X` whose rows are the agent
//! states. The vectorized view is agent-major, `x = [x_1; x_2; ...; x_n]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::seeded;

/// Rows below this norm cannot be projected onto the sphere.
pub const MIN_ROW_NORM: f64 = 1e-14;
/// Default relative singular-value cut for [`Configuration::numerical_rank`].
pub const RANK_TOL: f64 = 1e-8;
/// Default pairwise-dot tolerance for consensus classification.
pub const CONSENSUS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigurationWire", into = "ConfigurationWire")]
pub struct Configuration {
    rows: DMatrix<f64>,
}

/// JSON layout: `{"n": int, "d": int, "rows": [[...], ...]}`.
#[derive(Serialize, Deserialize)]
struct ConfigurationWire {
    n: usize,
    d: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ConfigurationWire> for Configuration {
    type Error = Error;

    fn try_from(w: ConfigurationWire) -> Result<Self> {
        if w.rows.len() != w.n || w.rows.iter().any(|r| r.len() != w.d) {
            return Err(Error::Dimension(format!("expected {}x{} rows", w.n, w.d)));
        }
        Configuration::normalize_rows(DMatrix::from_fn(w.n, w.d, |i, j| w.rows[i][j]))
    }
}

impl From<Configuration> for ConfigurationWire {
    fn from(c: Configuration) -> Self {
        ConfigurationWire {
            n: c.n(),
            d: c.d(),
            rows: c.rows.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

/// Limit-set classification of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "rank")]
pub enum ConfigurationClass {
    /// All agents share one state.
    Consensus,
    /// Rank one but some pair of agents is antipodal.
    AntipodalRankOne,
    HigherRank(usize),
}

impl ConfigurationClass {
    pub fn rank(self) -> usize {
        match self {
            Self::Consensus | Self::AntipodalRankOne => 1,
            Self::HigherRank(m) => m,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Consensus => "consensus",
            Self::AntipodalRankOne => "antipodal",
            Self::HigherRank(_) => "higher_rank",
        }
    }
}

/// Orthonormal tangent bases `R_{x_i}` (each `d×(d-1)`) of every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentBasis {
    blocks: Vec<DMatrix<f64>>,
}

impl TangentBasis {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    /// Block-diagonal aggregate `R_x` of size `nd × n(d-1)`.
    pub fn aggregate(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.blocks)
    }
}

impl Configuration {
    /// Divides every row by its norm.
    pub fn normalize_rows(mut raw: DMatrix<f64>) -> Result<Self> {
        if raw.ncols() < 2 || raw.nrows() == 0 {
            return Err(Error::Dimension(format!("need n >= 1 and d >= 2, got {:?}", raw.shape())));
        }
        for i in 0..raw.nrows() {
            let norm = raw.row(i).norm();
            if !(norm > MIN_ROW_NORM) || !norm.is_finite() {
                return Err(Error::DegenerateRow { row: i, norm });
            }
            raw.row_mut(i).scale_mut(1.0 / norm);
        }
        Ok(Self { rows: raw })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::normalize_rows(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    /// Rows i.i.d. uniform on the sphere (normalized standard Gaussians).
    pub fn random(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        loop {
            let raw = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            match Self::normalize_rows(raw) {
                Err(Error::DegenerateRow { .. }) => continue,
                other => return other,
            }
        }
    }

    /// Moves every agent by a random tangent vector of length `scale`, then
    /// projects back onto the sphere.
    pub fn perturb_tangent(&self, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut out = self.rows.clone();
        for i in 0..self.n() {
            let xi = self.row(i);
            let raw = DVector::from_fn(self.d(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let tangent = &raw - &xi * xi.dot(&raw);
            let norm = tangent.norm();
            if norm > MIN_ROW_NORM {
                let moved = xi + tangent * (scale / norm);
                out.row_mut(i).copy_from(&moved.transpose());
            }
        }
        Self::normalize_rows(out)
    }

    /// Every agent at `xbar`; `xbar` must be unit length within 1e-9.
    pub fn consensus(n: usize, xbar: &[f64]) -> Result<Self> {
        let norm = xbar.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotUnit(norm));
        }
        Self::normalize_rows(DMatrix::from_fn(n, xbar.len(), |_, j| xbar[j]))
    }

    /// Planar polygon: agent `i` at angle `2π i / n`.
    pub fn regular_polygon(n: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / n as f64;
        let rows = DMatrix::from_fn(n, 2, |i, j| {
            let t = step * i as f64;
            if j == 0 { t.cos() } else { t.sin() }
        });
        Self { rows }
    }

    /// Wraps a matrix whose rows are already unit norm (renormalizes anyway).
    pub fn from_matrix(rows: DMatrix<f64>) -> Result<Self> {
        Self::normalize_rows(rows)
    }

    /// Inverse of [`Configuration::vec`].
    pub fn from_vec(x: &DVector<f64>, d: usize) -> Result<Self> {
        if d == 0 || x.len() % d != 0 {
            return Err(Error::Dimension(format!("length {} not divisible by d = {d}", x.len())));
        }
        let n = x.len() / d;
        Self::normalize_rows(DMatrix::from_fn(n, d, |i, j| x[i * d + j]))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    /// `vec(Xᵀ)`, agent-major.
    pub fn vec(&self) -> DVector<f64> {
        let (n, d) = self.rows.shape();
        DVector::from_fn(n * d, |k, _| self.rows[(k / d, k % d)])
    }

    /// Right-multiplies every state by `q` (`d×d`), e.g. a global rotation.
    pub fn transform(&self, q: &DMatrix<f64>) -> Result<Self> {
        Self::normalize_rows(&self.rows * q)
    }

    /// Largest deviation of a row norm from one.
    pub fn max_norm_error(&self) -> f64 {
        self.rows.row_iter().map(|r| (r.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Singular values of `X` above `tol` times the largest one.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        linalg::numerical_rank(&self.rows, tol).max(1)
    }

    pub fn is_consensus(&self, tol: f64) -> bool {
        let g = &self.rows * self.rows.transpose();
        g.iter().all(|&v| v >= 1.0 - tol)
    }

    pub fn classify(&self, tol: f64) -> ConfigurationClass {
        self.classify_with(tol, RANK_TOL)
    }

    pub fn classify_with(&self, consensus_tol: f64, rank_tol: f64) -> ConfigurationClass {
        if self.is_consensus(consensus_tol) {
            return ConfigurationClass::Consensus;
        }
        match self.numerical_rank(rank_tol) {
            1 => ConfigurationClass::AntipodalRankOne,
            m => ConfigurationClass::HigherRank(m),
        }
    }

    /// Orthonormal bases of the tangent spaces at every agent.
    pub fn tangent_basis(&self) -> TangentBasis {
        TangentBasis { blocks: (0..self.n()).map(|i| tangent_block(&self.row(i))).collect() }
    }

    /// Block-diagonal tangent projector `P_x` with blocks `I - x_i x_iᵀ`.
    pub fn projection_matrix(&self) -> DMatrix<f64> {
        let blocks: Vec<_> = (0..self.n()).map(|i| projector(&self.row(i))).collect();
        linalg::block_diag(&blocks)
    }

    /// Euclidean distance between the vectorized configurations.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.rows - &other.rows).norm()
    }

    /// Writes one CSV row per agent: `agent,c1,...,cd` (1-based agents).
    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .row_iter()
            .enumerate()
            .map(|(i, r)| std::iter::once((i + 1).to_string()).chain(r.iter().map(|v| v.to_string())).collect())
            .collect()
    }
}

/// `I - x xᵀ`.
pub fn projector(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::identity(x.len(), x.len()) - x * x.transpose()
}

/// Orthonormal basis of the tangent space at the unit vector `x`.
///
/// For `d = 2` this is the rotation `[[0, 1], [-1, 0]] x`. For `d >= 3` it is
/// columns `2..d` of the Householder reflection sending `e_1` to `-sign(x_1) x`;
/// the sign choice keeps the reflection vector away from zero.
pub fn tangent_block(x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    if d == 2 {
        return DMatrix::from_column_slice(2, 1, &[x[1], -x[0]]);
    }
    // v = e1 + s x with s = sign(x_1); H = I - 2 v vᵀ / vᵀv maps e1 to -s x.
    let s = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = x * s;
    v[0] += 1.0;
    let vv = v.norm_squared();
    DMatrix::from_fn(d, d - 1, |r, c| {
        let col = c + 1;
        let delta = if r == col { 1.0 } else { 0.0 };
        delta - 2.0 * v[r] * v[col] / vv
    })
}
