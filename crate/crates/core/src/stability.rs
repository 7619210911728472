//! Differential of the iteration map and stability of its fixed points.
//!
//! With `y = f(x)` the projected Jacobian is `J = P_y (D(AX) A ⊗ I_d) P_x`.
//! Choosing orthonormal tangent bases `R_x`, `R_y` gives the reduced matrix
//! `M = R_yᵀ (D(AX) A ⊗ I_d) R_x` of size `n(d-1)`, and `J = R_y M R_xᵀ`.
//! At a fixed point the spectrum of `M` decides stability: a fixed point is
//! unstable when some eigenvalue has magnitude strictly above one.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{iterate, normalization_diagonal, IterationMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::sphere::{projector, Configuration, ConfigurationClass, TangentBasis, CONSENSUS_TOL};
use crate::weights::{MatrixWire, WeightMatrix};

/// Margin above one required before a spectral radius counts as unstable.
pub const CLASS_TOL: f64 = 1e-7;
/// Distance from one within which a spectral radius counts as neutral.
pub const NEUTRAL_TOL: f64 = 1e-9;

/// `P_y (D(MX) M ⊗ I_d) P_x` with `y = f(x)`.
pub fn projected_jacobian(m: &IterationMatrix, c: &Configuration) -> Result<DMatrix<f64>> {
    let y = iterate(m, c)?;
    let scale = normalization_diagonal(m, c)?;
    let (n, d) = (c.n(), c.d());
    let px: Vec<_> = (0..n).map(|j| projector(&c.row(j))).collect();
    let py: Vec<_> = (0..n).map(|i| projector(&y.row(i))).collect();
    let mut jac = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let w = m.entries()[(i, j)] * scale[i];
            if w != 0.0 {
                jac.view_mut((i * d, j * d), (d, d)).copy_from(&(&py[i] * &px[j] * w));
            }
        }
    }
    Ok(jac)
}

/// Block `(i, j)` is `m_ij / ‖[MX]_i‖ · R_{y_i}ᵀ R_{x_j}`.
pub fn reduced_matrix(
    m: &IterationMatrix,
    c: &Configuration,
    basis_x: &TangentBasis,
    basis_y: &TangentBasis,
) -> Result<DMatrix<f64>> {
    let scale = normalization_diagonal(m, c)?;
    let (n, k) = (c.n(), c.d() - 1);
    if basis_x.blocks().len() != n || basis_y.blocks().len() != n {
        return Err(Error::Dimension("one tangent block per agent expected".into()));
    }
    let mut out = DMatrix::zeros(n * k, n * k);
    for i in 0..n {
        for j in 0..n {
            let w = m.entries()[(i, j)] * scale[i];
            if w != 0.0 {
                let block = basis_y.block(i).transpose() * basis_x.block(j) * w;
                out.view_mut((i * k, j * k), (k, k)).copy_from(&block);
            }
        }
    }
    Ok(out)
}

/// Matrix representation of the differential at one configuration.
#[derive(Clone, Debug)]
pub struct DifferentialReport {
    pub jacobian: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
    pub basis_x: TangentBasis,
    pub basis_y: TangentBasis,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub det: f64,
    /// `θ_i = arccos(x_iᵀ y_i)`, clamped to the arccos domain.
    pub angles: Vec<f64>,
}

impl DifferentialReport {
    pub fn compute(m: &IterationMatrix, c: &Configuration) -> Result<Self> {
        let y = iterate(m, c)?;
        let basis_x = c.tangent_basis();
        let basis_y = y.tangent_basis();
        let reduced = reduced_matrix(m, c, &basis_x, &basis_y)?;
        let jacobian = projected_jacobian(m, c)?;
        let mut eigenvalues = linalg::eigenvalues(&reduced)?;
        linalg::sort_spectrum(&mut eigenvalues);
        let spectral_radius = linalg::spectral_radius(&eigenvalues);
        let det = if reduced.is_empty() { 1.0 } else { reduced.determinant() };
        let angles = (0..c.n()).map(|i| c.row(i).dot(&y.row(i)).clamp(-1.0, 1.0).acos()).collect();
        Ok(Self { jacobian, reduced, basis_x, basis_y, eigenvalues, spectral_radius, det, angles })
    }

    /// Product of the Euclidean row norms of `M` (Hadamard bound on `|det M|`).
    pub fn det_scale(&self) -> f64 {
        self.reduced.row_iter().map(|r| r.norm()).product()
    }

    /// Spectrum of `M R_xᵀ R_y`, which carries the nonzero eigenvalues of `J` at
    /// every configuration. It equals the spectrum of `M` when `y = x`.
    pub fn transported_eigenvalues(&self) -> Result<Vec<Complex<f64>>> {
        let t = &self.reduced * self.basis_x.aggregate().transpose() * self.basis_y.aggregate();
        linalg::eigenvalues(&t)
    }

    /// `max |J − R_y M R_xᵀ|`.
    pub fn factorization_error(&self) -> f64 {
        let rx = self.basis_x.aggregate();
        let ry = self.basis_y.aggregate();
        (&self.jacobian - ry * &self.reduced * rx.transpose()).amax()
    }

    pub fn to_json(&self) -> ReportWire {
        ReportWire {
            n: self.basis_x.blocks().len(),
            d: self.jacobian.nrows() / self.basis_x.blocks().len().max(1),
            spectral_radius: self.spectral_radius,
            det: self.det,
            angles: self.angles.clone(),
            eigenvalues: self.eigenvalues.iter().map(|z| (z.re, z.im)).collect(),
            reduced: MatrixWire::from_matrix(&self.reduced).rows,
        }
    }

    /// CSV spectrum dump: `index,re,im,abs`.
    pub fn write_spectrum_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "re", "im", "abs"])?;
        for (k, z) in self.eigenvalues.iter().enumerate() {
            w.write_record([k.to_string(), z.re.to_string(), z.im.to_string(), z.norm().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON export of a [`DifferentialReport`]; eigenvalues are `(re, im)` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportWire {
    pub n: usize,
    pub d: usize,
    pub spectral_radius: f64,
    pub det: f64,
    pub angles: Vec<f64>,
    pub eigenvalues: Vec<(f64, f64)>,
    pub reduced: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterminantCheck {
    pub det: f64,
    pub scale: f64,
    /// Whether the weights satisfy `a_ii > √2 Σ_{j≠i} a_ij`.
    pub bound_satisfied: bool,
    /// `|det M| > 1e-12 · scale`.
    pub nonzero: bool,
}

impl DeterminantCheck {
    pub fn relative(&self) -> f64 {
        self.det.abs() / self.scale
    }
}

pub fn determinant_nonzero_check(a: &WeightMatrix, c: &Configuration) -> Result<DeterminantCheck> {
    let m = IterationMatrix::weight(a)?;
    let report = DifferentialReport::compute(&m, c)?;
    let scale = report.det_scale();
    Ok(DeterminantCheck {
        det: report.det,
        scale,
        bound_satisfied: a.satisfies_sqrt2_condition(),
        nonzero: report.det.abs() > 1e-12 * scale,
    })
}

/// Lower bounds `√(1 − a_i²)` on `x_iᵀ y_i`, with `a_i` the off-diagonal row
/// sums after scaling every diagonal entry to one.
pub fn alignment_lower_bounds(a: &WeightMatrix) -> Result<Vec<f64>> {
    let unit = a.left_scale_normalize()?;
    Ok((0..unit.n())
        .map(|i| {
            let s = unit.off_diagonal_sum(i);
            (1.0 - s * s).max(0.0).sqrt()
        })
        .collect())
}

/// Smallest slack `x_iᵀ y_i − √(1 − a_i²)` over all agents.
pub fn alignment_bound_slack(a: &WeightMatrix, c: &Configuration) -> Result<f64> {
    let bounds = alignment_lower_bounds(a)?;
    let cos = crate::dynamics::alignment_cosines(&IterationMatrix::weight(a)?, c)?;
    Ok(cos.iter().zip(&bounds).map(|(c, b)| c - b).fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    ConsensusNeutral,
    UnstableCertified,
    NeutralNonConsensus,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityClassification {
    pub class: StabilityClass,
    pub spectral_radius: f64,
    /// Largest eigenvalue of `H(x)` when the symmetric certificate was evaluated.
    pub h_max_eigenvalue: Option<f64>,
    pub configuration: ConfigurationClass,
}

/// `H(x) = P_x ((A − D(AX)⁻¹) ⊗ I_d) P_x`, where `D(AX)⁻¹ = diag(‖[AX]_i‖)`.
pub fn certificate_matrix(a: &WeightMatrix, c: &Configuration) -> Result<DMatrix<f64>> {
    let m = IterationMatrix::weight(a)?;
    let inv = normalization_diagonal(&m, c)?;
    let (n, d) = (c.n(), c.d());
    let px: Vec<_> = (0..n).map(|i| projector(&c.row(i))).collect();
    let mut h = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let mut w = a.entries()[(i, j)];
            if i == j {
                w -= 1.0 / inv[i];
            }
            if w != 0.0 {
                h.view_mut((i * d, j * d), (d, d)).copy_from(&(&px[i] * &px[j] * w));
            }
        }
    }
    Ok(h)
}

fn spectral_class(rho: f64, config: ConfigurationClass) -> StabilityClass {
    if rho > 1.0 + CLASS_TOL {
        StabilityClass::UnstableCertified
    } else if (rho - 1.0).abs() <= NEUTRAL_TOL {
        match config {
            ConfigurationClass::Consensus => StabilityClass::ConsensusNeutral,
            _ => StabilityClass::NeutralNonConsensus,
        }
    } else {
        StabilityClass::Inconclusive
    }
}

fn check_fixed_point(m: &IterationMatrix, c: &Configuration, fp_tol: f64) -> Result<()> {
    let res = crate::dynamics::residual(m, c)?;
    if res > fp_tol {
        return Err(Error::Precondition(format!("configuration is not a fixed point (residual {res:e})")));
    }
    Ok(())
}

/// Spectral-radius classification of a fixed point; works for any weight matrix.
pub fn classify_fixed_point(a: &WeightMatrix, c: &Configuration, fp_tol: f64) -> Result<StabilityClassification> {
    let m = IterationMatrix::weight(a)?;
    check_fixed_point(&m, c, fp_tol)?;
    let report = DifferentialReport::compute(&m, c)?;
    let configuration = c.classify(CONSENSUS_TOL);
    Ok(StabilityClassification {
        class: spectral_class(report.spectral_radius, configuration),
        spectral_radius: report.spectral_radius,
        h_max_eigenvalue: None,
        configuration,
    })
}

/// Instability certificate for symmetric weights.
///
/// A positive eigenvalue of `H(x)` forces an eigenvalue of the differential
/// above one; both facts are verified numerically. Without a positive
/// eigenvalue the fixed point is classified by its spectral radius.
pub fn instability_certificate(a: &WeightMatrix, c: &Configuration, fp_tol: f64) -> Result<StabilityClassification> {
    if !a.is_symmetric() {
        return Err(Error::Precondition("the H certificate needs symmetric weights".into()));
    }
    let mut out = classify_fixed_point(a, c, fp_tol)?;
    let lambda = linalg::max_symmetric_eigenvalue(&certificate_matrix(a, c)?);
    out.h_max_eigenvalue = Some(lambda);
    if lambda > CLASS_TOL {
        out.class = if out.spectral_radius > 1.0 + CLASS_TOL {
            StabilityClass::UnstableCertified
        } else {
            StabilityClass::Inconclusive
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub matches: bool,
}

/// Compares `tr((1ᵀ⊗I) H (1⊗I))` against the closed form
/// `Σ_i Σ_{j≠i} a_ij (d − 2 + cos²θ_ij − (d − 1) cos θ_ij)`.
///
/// The closed form uses `‖[AX]_i‖ = x_iᵀ [AX]_i`, which holds at fixed points.
pub fn trace_formula_check(a: &WeightMatrix, c: &Configuration) -> Result<TraceCheck> {
    if !a.is_symmetric() {
        return Err(Error::Precondition("trace formula needs symmetric weights".into()));
    }
    let h = certificate_matrix(a, c)?;
    let (n, d) = (c.n(), c.d());
    let mut lhs = 0.0;
    for i in 0..n {
        for j in 0..n {
            lhs += h.view((i * d, j * d), (d, d)).trace();
        }
    }
    let gram = c.matrix() * c.matrix().transpose();
    let df = d as f64;
    let mut rhs = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let cos = gram[(i, j)];
                rhs += a.entries()[(i, j)] * (df - 2.0 + cos * cos - (df - 1.0) * cos);
            }
        }
    }
    Ok(TraceCheck { lhs, rhs, matches: (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NeutralityCheck {
    NotApplicable(String),
    Checked {
        spectral_radius: f64,
        /// Largest deviation of a row sum of `M` from one.
        row_sum_error: f64,
        neutral: bool,
    },
}

/// Planar fixed points whose linked agents have positive dot products are not unstable.
pub fn positive_dot_neutrality_check(a: &WeightMatrix, c: &Configuration, fp_tol: f64) -> Result<NeutralityCheck> {
    if c.d() != 2 {
        return Ok(NeutralityCheck::NotApplicable(format!("needs d = 2, got {}", c.d())));
    }
    let m = IterationMatrix::weight(a)?;
    if check_fixed_point(&m, c, fp_tol).is_err() {
        return Ok(NeutralityCheck::NotApplicable("not a fixed point".into()));
    }
    let gram = c.matrix() * c.matrix().transpose();
    let n = c.n();
    for i in 0..n {
        for j in 0..n {
            if a.entries()[(i, j)] > 0.0 && gram[(i, j)] <= 0.0 {
                return Ok(NeutralityCheck::NotApplicable(format!(
                    "agents {} and {} are linked with non-positive dot product",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let report = DifferentialReport::compute(&m, c)?;
    let ones = DVector::from_element(n, 1.0);
    let row_sum_error = (&report.reduced * ones).add_scalar(-1.0).amax();
    Ok(NeutralityCheck::Checked {
        spectral_radius: report.spectral_radius,
        row_sum_error,
        neutral: (report.spectral_radius - 1.0).abs() <= NEUTRAL_TOL,
    })
}
