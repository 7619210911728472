//! Fixed points as zeros of a residual map, and rank analysis of its Jacobian.
//!
//! A configuration `X` is fixed for `A` exactly when
//! `g(A, D, x) = (A ⊗ I) x − (D ⊗ I) x = 0` with `D = diag(‖[AX]_i‖)`.
//! Note that `D` here stores row norms, the reciprocal of the normalization
//! diagonal used by the iteration.
//!
//! The Jacobian of `g` with respect to the weights, the diagonal and the
//! (pinned) states is assembled as `J_g = [J_{g,A} | J_{g,D} | J_{g,x}]`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::linalg;
use crate::sphere::{Configuration, MIN_ROW_NORM, RANK_TOL};
use crate::weights::WeightMatrix;

/// Residual tolerance for treating a system as being at a fixed point.
pub const SYSTEM_FP_TOL: f64 = 1e-10;
/// Relative singular-value cut for numerical ranks of `J_g`.
pub const JG_RANK_TOL: f64 = 1e-8;

/// `vec(((A − diag(dvec)) X)ᵀ)`, i.e. the agent-major stacking of the residual rows.
pub fn residual_g(a: &DMatrix<f64>, dvec: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    if a.shape() != (n, n) || dvec.len() != n {
        return Err(Error::Dimension(format!(
            "A is {}x{}, D has {} entries, X has {} rows",
            a.nrows(),
            a.ncols(),
            dvec.len(),
            n
        )));
    }
    let mut r = a * x;
    for i in 0..n {
        let xi = x.row(i) * dvec[i];
        let mut row = r.row_mut(i);
        row -= xi;
    }
    Ok(DVector::from_iterator(r.len(), r.transpose().iter().copied()))
}

/// Row norms `‖[AX]_i‖`.
pub fn compute_d(a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.ncols() != x.nrows() {
        return Err(Error::Dimension("A and X do not conform".into()));
    }
    let z = a * x;
    (0..z.nrows())
        .map(|i| {
            let norm = z.row(i).norm();
            if norm > MIN_ROW_NORM { Ok(norm) } else { Err(Error::ZeroRowImage { agent: i, norm }) }
        })
        .collect()
}

/// 0/1 diagonal masks `K_A = diag(vec(Bᵀ))` and `K_D = diag(vec(I_n))`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMasks {
    pub k_a: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
}

pub fn structure_masks(g: &DirectedGraph) -> StructureMasks {
    let b = g.structure_matrix();
    let k_a = DMatrix::from_diagonal(&vec_of(&b.transpose()));
    let k_d = DMatrix::from_diagonal(&vec_of(&linalg::eye(g.n())));
    StructureMasks { k_a, k_d }
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>> {
    if rows == 0 || v.len() % rows != 0 {
        return Err(Error::Dimension(format!("cannot reshape {} entries into {rows} rows", v.len())));
    }
    Ok(DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice()))
}

/// Lower triangle including the diagonal, stacked column by column.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            out.push(m[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// `D_n` with `D_n vech(C) = vec(C)` for every symmetric `C`.
pub fn duplication_matrix(n: usize) -> DMatrix<f64> {
    let mut dup = DMatrix::zeros(n * n, n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            dup[(j * n + i, k)] = 1.0;
            dup[(i * n + j, k)] = 1.0;
            k += 1;
        }
    }
    dup
}

/// Weights, diagonal and a rank-`m` state matrix whose first row is `e₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointSystem {
    pub a: WeightMatrix,
    pub dvec: Vec<f64>,
    /// `n × m` pinned states.
    pub x: DMatrix<f64>,
    pub m: usize,
    /// Ambient dimension of the configuration the system was built from.
    pub d: usize,
}

impl FixedPointSystem {
    /// Reduces `c` to its `m`-dimensional span and rotates it so that agent 1 sits at `e₁`.
    ///
    /// Right multiplication by an orthogonal matrix maps fixed points to fixed
    /// points, so the residual is unchanged.
    pub fn pinned(a: &WeightMatrix, c: &Configuration) -> Result<Self> {
        if a.n() != c.n() {
            return Err(Error::Dimension(format!("A has {} agents, configuration {}", a.n(), c.n())));
        }
        let m = c.numerical_rank(RANK_TOL);
        let svd = c.matrix().clone().svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Precondition("SVD failed".into()))?;
        let mut x = c.matrix() * v_t.rows(0, m).transpose();
        for i in 0..x.nrows() {
            let norm = x.row(i).norm();
            x.row_mut(i).scale_mut(1.0 / norm);
        }
        let first = x.row(0).transpose();
        let mut e1 = DVector::zeros(m);
        e1[0] = 1.0;
        let v = &first - &e1;
        if v.norm() > 1e-14 {
            let u = v.normalize();
            let h = linalg::eye(m) - &u * u.transpose() * 2.0;
            x = x * h;
        }
        x.row_mut(0).copy_from(&e1.transpose());
        let dvec = compute_d(a.entries(), &x)?;
        Ok(Self { a: a.clone(), dvec, x, m, d: c.d() })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn residual(&self) -> Result<f64> {
        Ok(residual_g(self.a.entries(), &self.dvec, &self.x)?.amax())
    }

    pub fn at_fixed_point(&self) -> Result<bool> {
        Ok(self.residual()? <= SYSTEM_FP_TOL)
    }
}

/// `J_g` with its column blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct JgAssembly {
    pub matrix: DMatrix<f64>,
    pub a_cols: Range<usize>,
    pub d_cols: Range<usize>,
    pub x_cols: Range<usize>,
}

impl JgAssembly {
    pub fn block(&self, cols: &Range<usize>) -> DMatrix<f64> {
        self.matrix.columns(cols.start, cols.len()).into_owned()
    }
}

/// Assembles `[J_{g,A} | J_{g,D} | J_{g,x}]`.
///
/// The weight columns follow `vec(Aᵀ)` masked by `K_A`, or `vech(A)` through
/// `D_n` for the symmetric parametrization. The first agent's state columns
/// are dropped since that agent is pinned.
pub fn assemble_jg(sys: &FixedPointSystem, symmetric: bool) -> Result<JgAssembly> {
    let (n, m) = (sys.n(), sys.m);
    if sys.dvec.len() != n || sys.a.n() != n {
        return Err(Error::Dimension("system sizes disagree".into()));
    }
    let masks = structure_masks(sys.a.graph());
    let ix = linalg::kron(&linalg::eye(n), &sys.x.transpose());
    let jga = if symmetric { &ix * &masks.k_a * duplication_matrix(n) } else { &ix * &masks.k_a };
    let jgd = -(&ix * &masks.k_d);
    let diff = sys.a.entries() - DMatrix::from_diagonal(&DVector::from_column_slice(&sys.dvec));
    let px = linalg::block_diag(
        &(0..n)
            .map(|i| {
                let xi = sys.x.row(i).transpose();
                linalg::eye(m) - &xi * xi.transpose()
            })
            .collect::<Vec<_>>(),
    );
    let full_x = linalg::kron(&diff, &linalg::eye(m)) * px;
    let jgx = full_x.columns(m, (n - 1) * m).into_owned();

    let widths = [jga.ncols(), jgd.ncols(), jgx.ncols()];
    let mut matrix = DMatrix::zeros(n * m, widths.iter().sum());
    let mut at = 0;
    for (block, w) in [&jga, &jgd, &jgx].into_iter().zip(widths) {
        matrix.columns_mut(at, w).copy_from(block);
        at += w;
    }
    Ok(JgAssembly {
        matrix,
        a_cols: 0..widths[0],
        d_cols: widths[0]..widths[0] + widths[1],
        x_cols: widths[0] + widths[1]..at,
    })
}

/// Vectors `vec(R₀ Xᵀ)` for the basis of skew `R₀` (`m(m−1)/2` of them).
pub fn skew_null_vectors(sys: &FixedPointSystem) -> Vec<DVector<f64>> {
    let m = sys.m;
    let mut out = Vec::new();
    for p in 0..m {
        for q in p + 1..m {
            let mut r0 = DMatrix::zeros(m, m);
            r0[(p, q)] = 1.0;
            r0[(q, p)] = -1.0;
            out.push(vec_of(&(r0 * sys.x.transpose())));
        }
    }
    out
}

/// `‖wᵀ J‖∞ / ‖w‖₂`.
pub fn left_null_residual(j: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (j.transpose() * w).amax() / w.norm()
}

/// Rank-analysis report; for the non-symmetric parametrization the bound is
/// the full row rank `nm`, for the symmetric one `nm − m(m−1)/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub symmetric: bool,
    pub rank: usize,
    pub bound: usize,
    pub satisfied: bool,
    /// Smallest singular values of `J_g`, ascending.
    pub min_singular_values: Vec<f64>,
    /// Largest `‖wᵀ J_g‖∞ / ‖w‖` over the skew null vectors (symmetric case only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skew_null_residual: Option<f64>,
}

fn require_fixed(sys: &FixedPointSystem) -> Result<()> {
    let res = sys.residual()?;
    if res > SYSTEM_FP_TOL {
        return Err(Error::Precondition(format!("system is not at a fixed point (residual {res:e})")));
    }
    Ok(())
}

fn report(sys: &FixedPointSystem, symmetric: bool) -> Result<RankReport> {
    let jg = assemble_jg(sys, symmetric)?;
    let sv = linalg::singular_values(&jg.matrix);
    let rank = linalg::numerical_rank(&jg.matrix, JG_RANK_TOL);
    let (n, m) = (sys.n(), sys.m);
    let full = n * m;
    let (bound, satisfied, skew) = if symmetric {
        let bound = full - m * (m - 1) / 2;
        let skew = skew_null_vectors(sys)
            .iter()
            .map(|w| left_null_residual(&jg.matrix, w))
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
        (bound, rank <= bound, skew)
    } else {
        (full, rank == full, None)
    };
    let mut min_singular_values: Vec<f64> = sv.iter().rev().take(full.min(4)).copied().collect();
    min_singular_values.truncate(4);
    Ok(RankReport {
        n,
        d: sys.d,
        m,
        symmetric,
        rank,
        bound,
        satisfied,
        min_singular_values,
        skew_null_residual: skew,
    })
}

/// Row rank of the non-symmetric `J_g`, expected to be full (`nm`).
pub fn full_rank_check(sys: &FixedPointSystem) -> Result<RankReport> {
    require_fixed(sys)?;
    report(sys, false)
}

/// Rank of the symmetric-parametrization `J_g` against `nm − m(m−1)/2`.
pub fn symmetric_rank_deficiency_check(sys: &FixedPointSystem) -> Result<RankReport> {
    if !sys.a.graph().is_complete() {
        return Err(Error::Precondition("rank bound is stated for complete graphs".into()));
    }
    if !sys.a.is_symmetric() {
        return Err(Error::AsymmetricGraph);
    }
    require_fixed(sys)?;
    report(sys, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{find_nonconsensus_fixed_point, FP_TOL, MAX_ITER, SLACK};

    fn pentagon() -> WeightMatrix {
        let g = DirectedGraph::ring(5).unwrap();
        let mut e = DMatrix::identity(5, 5) * 3.0;
        for (i, j) in g.edges() {
            e[(i, j)] = 1.0;
        }
        WeightMatrix::new(g, e).unwrap()
    }

    #[test]
    fn consensus_residual_vanishes_with_row_sums() {
        let g = DirectedGraph::random_strongly_connected(5, 0.4, 3).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.1, false, 4).unwrap();
        let c = Configuration::consensus(5, &[0.0, 0.6, 0.8]).unwrap();
        let sums: Vec<f64> = (0..5).map(|i| a.entries().row(i).sum()).collect();
        assert!(residual_g(a.entries(), &sums, c.matrix()).unwrap().amax() < 1e-15);
        let d = compute_d(a.entries(), c.matrix()).unwrap();
        for (x, y) in d.iter().zip(&sums) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn pentagon_residual() {
        let c = Configuration::regular_polygon(5);
        let d = compute_d(pentagon().entries(), c.matrix()).unwrap();
        assert!(residual_g(pentagon().entries(), &d, c.matrix()).unwrap().amax() < 1e-12);
    }

    #[test]
    fn residual_matches_kronecker_form() {
        let c = Configuration::random(4, 3, 5).unwrap();
        let a = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.1 + 0.3);
        let dvec = [1.0, 2.0, 0.5, 3.0];
        let dm = DMatrix::from_diagonal(&DVector::from_column_slice(&dvec));
        let expected = linalg::kron(&(&a - dm), &linalg::eye(3)) * c.vec();
        assert!((residual_g(&a, &dvec, c.matrix()).unwrap() - expected).amax() < 1e-14);
    }

    #[test]
    fn compute_d_examples() {
        let c = Configuration::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(compute_d(&linalg::eye(2), c.matrix()).unwrap(), vec![1.0, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]);
        let d = compute_d(&a, c.matrix()).unwrap();
        assert!(d.iter().all(|v| (v - 10f64.sqrt()).abs() < 1e-15));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let same = Configuration::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert!(matches!(compute_d(&bad, same.matrix()), Err(Error::ZeroRowImage { agent: 0, .. })));
    }

    #[test]
    fn masks() {
        let masks = structure_masks(&DirectedGraph::complete(4).unwrap());
        assert_eq!(masks.k_a, linalg::eye(16));
        assert_eq!(masks.k_d.trace(), 4.0);
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let masks = structure_masks(&g);
        assert_eq!(masks.k_a.diagonal().as_slice(), &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(masks.k_a.component_mul(&masks.k_d), masks.k_d);
    }

    #[test]
    fn duplication_small() {
        assert_eq!(duplication_matrix(1), DMatrix::from_element(1, 1, 1.0));
        let expected = DMatrix::from_row_slice(4, 3, &[1., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(duplication_matrix(2), expected);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(vech(&c).as_slice(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn pinning_preserves_fixed_points() {
        let c = Configuration::regular_polygon(5);
        let sys = FixedPointSystem::pinned(&pentagon(), &c).unwrap();
        assert_eq!(sys.m, 2);
        assert_eq!(sys.x.row(0).transpose(), DVector::from_column_slice(&[1.0, 0.0]));
        assert!(sys.at_fixed_point().unwrap());
        let gram_before = c.matrix() * c.matrix().transpose();
        let gram_after = &sys.x * sys.x.transpose();
        assert!((gram_before - gram_after).amax() < 1e-12);
    }

    #[test]
    fn symmetric_fixed_point_rank() {
        let g = DirectedGraph::complete(4).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.2, true, 11).unwrap();
        let c0 = Configuration::random(4, 3, 12).unwrap();
        let out = find_nonconsensus_fixed_point(&a, &c0, SLACK, FP_TOL, MAX_ITER).unwrap();
        let sys = FixedPointSystem::pinned(&a, &out.trajectory.final_config).unwrap();
        assert!(sys.m >= 2);
        let r = symmetric_rank_deficiency_check(&sys).unwrap();
        assert!(r.satisfied, "{r:?}");
        assert!(r.skew_null_residual.unwrap() < 1e-8);
        assert!(r.rank < 4 * sys.m);
        let full = full_rank_check(&sys).unwrap();
        assert!(full.satisfied);
    }

    #[test]
    fn deficiency_check_rejects_sparse_graphs() {
        let c = Configuration::regular_polygon(5);
        let sys = FixedPointSystem::pinned(&pentagon(), &c).unwrap();
        assert!(symmetric_rank_deficiency_check(&sys).is_err());
    }

    #[test]
    fn consensus_system_is_degenerate_but_satisfied() {
        let g = DirectedGraph::complete(3).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.2, true, 2).unwrap();
        let c = Configuration::consensus(3, &[0.0, 0.0, 1.0]).unwrap();
        let sys = FixedPointSystem::pinned(&a, &c).unwrap();
        assert_eq!(sys.m, 1);
        let jg = assemble_jg(&sys, true).unwrap();
        // for m = 1 every projector vanishes
        assert_eq!(jg.block(&jg.x_cols).amax(), 0.0);
        let r = symmetric_rank_deficiency_check(&sys).unwrap();
        assert_eq!(r.bound, 3);
        assert!(r.satisfied);
    }
}
