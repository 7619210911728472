//! The projected consensus iteration, its potential, and trajectory runners.
//!
//! One step maps every agent to the normalized conical combination of its
//! neighbours: `x_i ← Σ_j m_ij x_j / ‖Σ_j m_ij x_j‖`. In matrix form
//! `X ← D(MX) M X` where `D(Z)` holds the reciprocal row norms of `Z`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{Configuration, ConfigurationClass, CONSENSUS_TOL, MIN_ROW_NORM, RANK_TOL};
use crate::weights::{DescentMatrix, WeightMatrix};

/// Default fixed-point tolerance on `‖f(x) − x‖₂`.
pub const FP_TOL: f64 = 1e-12;
pub const MAX_ITER: usize = 1_000_000;
/// Default shift slack for the descent matrix.
pub const SLACK: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    Weight,
    Descent,
}

/// Matrix driving the iteration.
///
/// Also carries the weight matrix whose potential `V_A` is tracked: the matrix
/// itself for [`MatrixKind::Weight`], the source `A` for [`MatrixKind::Descent`].
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMatrix {
    entries: DMatrix<f64>,
    kind: MatrixKind,
    potential: DMatrix<f64>,
}

impl IterationMatrix {
    /// Requires strict diagonal dominance so that no row image can vanish.
    pub fn weight(a: &WeightMatrix) -> Result<Self> {
        if !a.is_strictly_diagonally_dominant() {
            return Err(Error::Precondition("weight matrix is not strictly diagonally dominant".into()));
        }
        Ok(Self { entries: a.entries().clone(), kind: MatrixKind::Weight, potential: a.entries().clone() })
    }

    pub fn descent(m: &DescentMatrix) -> Self {
        Self { entries: m.entries().clone(), kind: MatrixKind::Descent, potential: m.source().entries().clone() }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    fn check_dims(&self, c: &Configuration) -> Result<()> {
        if c.n() != self.n() {
            return Err(Error::Dimension(format!("matrix has {} rows, configuration {} agents", self.n(), c.n())));
        }
        Ok(())
    }
}

impl TryFrom<&WeightMatrix> for IterationMatrix {
    type Error = Error;

    fn try_from(a: &WeightMatrix) -> Result<Self> {
        Self::weight(a)
    }
}

impl From<&DescentMatrix> for IterationMatrix {
    fn from(m: &DescentMatrix) -> Self {
        Self::descent(m)
    }
}

/// Row images `M X` and their norms, rejecting vanishing rows.
fn images(m: &IterationMatrix, c: &Configuration) -> Result<(DMatrix<f64>, Vec<f64>)> {
    m.check_dims(c)?;
    let z = &m.entries * c.matrix();
    let norms = row_norms_checked(&z)?;
    Ok((z, norms))
}

fn row_norms_checked(z: &DMatrix<f64>) -> Result<Vec<f64>> {
    z.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let norm = r.norm();
            if norm > MIN_ROW_NORM && norm.is_finite() {
                Ok(norm)
            } else {
                Err(Error::ZeroRowImage { agent: i, norm })
            }
        })
        .collect()
}

/// One step of the iteration.
pub fn iterate(m: &IterationMatrix, c: &Configuration) -> Result<Configuration> {
    let (mut z, norms) = images(m, c)?;
    for (i, norm) in norms.iter().enumerate() {
        z.row_mut(i).scale_mut(1.0 / norm);
    }
    Configuration::from_matrix(z)
}

/// Diagonal of `D(MX)`: the reciprocal row norms `1 / ‖[MX]_i‖`.
pub fn normalization_diagonal(m: &IterationMatrix, c: &Configuration) -> Result<Vec<f64>> {
    let (_, norms) = images(m, c)?;
    Ok(norms.into_iter().map(|v| 1.0 / v).collect())
}

/// `‖f(x) − x‖₂`.
pub fn residual(m: &IterationMatrix, c: &Configuration) -> Result<f64> {
    Ok(iterate(m, c)?.distance(c))
}

/// Per-agent cosines `x_iᵀ y_i` between a configuration and its image.
pub fn alignment_cosines(m: &IterationMatrix, c: &Configuration) -> Result<Vec<f64>> {
    let y = iterate(m, c)?;
    Ok((0..c.n()).map(|i| c.row(i).dot(&y.row(i))).collect())
}

/// `V(X) = tr(Xᵀ A X) = Σ_ij a_ij x_iᵀ x_j`.
pub fn potential(a: &DMatrix<f64>, c: &Configuration) -> f64 {
    let x = c.matrix();
    let gram = x * x.transpose();
    a.component_mul(&gram).sum()
}

/// Iterations between checks for a rigidly rotating orbit.
const ROTATION_CHECK_PERIOD: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub fp_tol: f64,
    pub max_iter: usize,
    pub record_potential: bool,
    /// Stop once the orbit is a relative equilibrium `f(X) = XQ` with `Q`
    /// orthogonal: the Gram matrix no longer moves while the states still do,
    /// by a step length that has stopped shrinking. By equivariance of `f`
    /// such an orbit rotates forever.
    pub detect_rotation: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { fp_tol: FP_TOL, max_iter: MAX_ITER, record_potential: false, detect_rotation: true }
    }
}

impl RunOptions {
    pub fn with_potential(mut self) -> Self {
        self.record_potential = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// The iterates settled on a rigidly rotating orbit that is not a fixed point.
    Rotating,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    #[serde(rename = "final")]
    pub final_config: Configuration,
    pub iterations: usize,
    /// `‖f(x) − x‖₂` at `final_config`.
    pub residual: f64,
    pub converged: bool,
    pub termination: Termination,
    /// `V_A` at every visited iterate, `final_config` included.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_history: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Iterates until `‖f(x) − x‖₂ ≤ fp_tol` or `max_iter` steps.
///
/// The returned configuration is the last iterate whose residual was measured,
/// so `converged` implies `residual <= fp_tol` for exactly that point.
pub fn run(m: &IterationMatrix, c0: &Configuration, opts: RunOptions) -> Result<TrajectoryResult> {
    m.check_dims(c0)?;
    let (n, d) = (c0.n(), c0.d());
    let mut x = c0.matrix().clone();
    let mut y = DMatrix::zeros(n, d);
    let mut history = opts.record_potential.then(Vec::new);
    let mut gram = DMatrix::zeros(n, n);
    let mut record = |x: &DMatrix<f64>, history: &mut Option<Vec<f64>>| {
        if let Some(h) = history.as_mut() {
            x.mul_to(&x.transpose(), &mut gram);
            h.push(m.potential.component_mul(&gram).sum());
        }
    };
    record(&x, &mut history);

    let mut iterations = 0;
    let mut last_check = f64::INFINITY;
    loop {
        m.entries.mul_to(&x, &mut y);
        for i in 0..n {
            let norm = y.row(i).norm();
            if !(norm > MIN_ROW_NORM && norm.is_finite()) {
                return Err(Error::ZeroRowImage { agent: i, norm });
            }
            y.row_mut(i).scale_mut(1.0 / norm);
        }
        let res = (&y - &x).norm();
        let termination = if res <= opts.fp_tol {
            Some(Termination::Converged)
        } else if opts.detect_rotation && iterations % ROTATION_CHECK_PERIOD == 0 && {
            let stalled = (res - last_check).abs() <= 1e-9 * res;
            last_check = res;
            stalled && res > 1e3 * opts.fp_tol && gram_shift(&x, &y) <= opts.fp_tol
        } {
            Some(Termination::Rotating)
        } else if iterations >= opts.max_iter {
            Some(Termination::IterationLimit)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(TrajectoryResult {
                final_config: Configuration::from_matrix(x)?,
                iterations,
                residual: res,
                converged: termination == Termination::Converged,
                termination,
                potential_history: history,
                seed: None,
            });
        }
        std::mem::swap(&mut x, &mut y);
        iterations += 1;
        record(&x, &mut history);
    }
}

/// `max |XXᵀ − YYᵀ|`.
fn gram_shift(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x * x.transpose() - y * y.transpose()).amax()
}

/// Result of running the descent iteration from one start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub trajectory: TrajectoryResult,
    /// Residual of the limit under the descent matrix `α I − A`.
    pub residual_descent: f64,
    /// Residual of the limit under `A` itself.
    pub residual_weight: f64,
    pub class: ConfigurationClass,
    pub alpha: f64,
}

/// Runs the iteration with `α I − A` to land on a non-consensus fixed point.
pub fn find_nonconsensus_fixed_point(
    a: &WeightMatrix,
    c0: &Configuration,
    slack: f64,
    fp_tol: f64,
    max_iter: usize,
) -> Result<DescentOutcome> {
    let weight = IterationMatrix::weight(a)?;
    let descent_matrix = a.descent_matrix(slack)?;
    let descent = IterationMatrix::descent(&descent_matrix);
    let trajectory = run(&descent, c0, RunOptions { fp_tol, max_iter, ..RunOptions::default() })?;
    let limit = &trajectory.final_config;
    Ok(DescentOutcome {
        residual_descent: trajectory.residual,
        residual_weight: residual(&weight, limit)?,
        class: limit.classify_with(CONSENSUS_TOL, RANK_TOL),
        alpha: descent_matrix.alpha(),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedGraph;

    fn a2() -> WeightMatrix {
        WeightMatrix::from_rows(&[&[3.0, 1.0], &[1.0, 3.0]]).unwrap()
    }

    fn pentagon() -> WeightMatrix {
        let g = DirectedGraph::ring(5).unwrap();
        let mut e = DMatrix::identity(5, 5) * 3.0;
        for (i, j) in g.edges() {
            e[(i, j)] = 1.0;
        }
        WeightMatrix::new(g, e).unwrap()
    }

    #[test]
    fn two_agent_step() {
        let m = IterationMatrix::weight(&a2()).unwrap();
        let c = Configuration::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let y = iterate(&m, &c).unwrap();
        let s = 10f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0 / s, 1.0 / s, 1.0 / s, 3.0 / s]);
        assert!((y.matrix() - expected).amax() < 1e-15);
        let diag = normalization_diagonal(&m, &c).unwrap();
        assert!(diag.iter().all(|v| (v - 1.0 / s).abs() < 1e-15));
    }

    #[test]
    fn consensus_is_fixed() {
        let g = DirectedGraph::random_strongly_connected(5, 0.4, 1).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.2, false, 2).unwrap();
        let m = IterationMatrix::weight(&a).unwrap();
        let c = Configuration::consensus(5, &[0.0, 0.6, 0.8]).unwrap();
        assert!(residual(&m, &c).unwrap() < 1e-15);
        let diag = normalization_diagonal(&m, &c).unwrap();
        for (i, v) in diag.iter().enumerate() {
            assert!((v - 1.0 / a.entries().row(i).sum()).abs() < 1e-15);
        }
    }

    #[test]
    fn pentagon_is_fixed() {
        let m = IterationMatrix::weight(&pentagon()).unwrap();
        let c = Configuration::regular_polygon(5);
        assert!(residual(&m, &c).unwrap() < 1e-12);
    }

    #[test]
    fn identity_normalization_is_one() {
        let id = WeightMatrix::from_entries(DMatrix::identity(3, 3)).unwrap();
        let m = IterationMatrix::weight(&id).unwrap();
        let c = Configuration::random(3, 4, 5).unwrap();
        assert!(normalization_diagonal(&m, &c).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_row_image_reports_agent() {
        let a = WeightMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        let m = IterationMatrix { entries: a.entries().clone(), kind: MatrixKind::Weight, potential: a.entries().clone() };
        let c = Configuration::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap();
        assert!(matches!(iterate(&m, &c), Err(Error::ZeroRowImage { agent: 0, .. })));
        assert!(IterationMatrix::weight(&a).is_err());
    }

    #[test]
    fn potential_values() {
        let c = Configuration::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(potential(a2().entries(), &c), 6.0);
        let cons = Configuration::consensus(2, &[1.0, 0.0]).unwrap();
        assert_eq!(potential(a2().entries(), &cons), 8.0);
    }

    #[test]
    fn run_from_consensus_stops_immediately() {
        let m = IterationMatrix::weight(&a2()).unwrap();
        let c = Configuration::consensus(2, &[0.0, 1.0]).unwrap();
        let r = run(&m, &c, RunOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn ascent_and_descent_monotonicity() {
        let g = DirectedGraph::random_connected_symmetric(6, 0.5, 3).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.1, true, 4).unwrap();
        let c = Configuration::random(6, 3, 5).unwrap();
        let up = run(&IterationMatrix::weight(&a).unwrap(), &c, RunOptions::default().with_potential()).unwrap();
        let h = up.potential_history.unwrap();
        assert!(h.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        assert!(up.converged);
        let dm = a.descent_matrix(SLACK).unwrap();
        let down = run(&IterationMatrix::descent(&dm), &c, RunOptions::default().with_potential()).unwrap();
        let h = down.potential_history.unwrap();
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn descent_potential_is_shifted() {
        let a = a2();
        let dm = a.descent_matrix(0.25).unwrap();
        for seed in 0..5 {
            let c = Configuration::random(2, 3, seed).unwrap();
            let lhs = potential(dm.entries(), &c);
            let rhs = dm.alpha() * 2.0 - potential(a.entries(), &c);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_points_of_weights_are_fixed_for_descent() {
        let a = pentagon();
        let dm = a.descent_matrix(SLACK).unwrap();
        let c = Configuration::regular_polygon(5);
        assert!(residual(&IterationMatrix::descent(&dm), &c).unwrap() < 1e-12);
    }

    #[test]
    fn descent_finds_fixed_point() {
        let g = DirectedGraph::complete(4).unwrap();
        let a = WeightMatrix::sample_sdd(&g, 0.1, true, 8).unwrap();
        let c = Configuration::random(4, 3, 9).unwrap();
        let out = find_nonconsensus_fixed_point(&a, &c, SLACK, FP_TOL, MAX_ITER).unwrap();
        assert!(out.trajectory.converged);
        assert!(out.residual_descent <= FP_TOL);
        assert!(out.residual_weight < 1e-9);
        assert_ne!(out.class, ConfigurationClass::Consensus);
    }

    #[test]
    fn asymmetric_descent_can_rotate() {
        let g = DirectedGraph::complete(4).unwrap();
        let mut rotating = 0;
        for seed in 0..40 {
            let a = WeightMatrix::sample_sdd(&g, 0.1, false, seed).unwrap();
            let c = Configuration::random(4, 3, seed + 100).unwrap();
            let out = find_nonconsensus_fixed_point(&a, &c, SLACK, FP_TOL, 200_000).unwrap();
            let t = &out.trajectory;
            if t.termination == Termination::Rotating {
                rotating += 1;
                let m = IterationMatrix::descent(&a.descent_matrix(SLACK).unwrap());
                let x = &t.final_config;
                let y = iterate(&m, x).unwrap();
                assert!(gram_shift(x.matrix(), y.matrix()) < 1e-11);
                assert!(t.residual > 1e-6);
            } else if t.converged {
                assert_eq!(out.class.rank(), 1);
            }
        }
        assert!(rotating > 10);
    }
}
