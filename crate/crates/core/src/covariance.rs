//! Noise covariance estimation and regularization.
//!
//! Residuals R = S − Ã M from a trained operator give the classical
//! estimators Σ̃ = R Rᵀ/N (maximum likelihood, biased by (N−M)/N) and
//! R Rᵀ/(N−1). When N is small relative to the number of channels the dense
//! estimators are singular; `diagonalize` and `band` are the supported
//! repairs, trading off covariance structure against invertibility.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::training::{OperatorEstimate, TrainingSet};

/// How a covariance estimate was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CovarianceMode {
    Mle,
    Sample,
    Diag,
    Banded { k: usize },
}

impl CovarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceMode::Mle => "mle",
            CovarianceMode::Sample => "sample",
            CovarianceMode::Diag => "diag",
            CovarianceMode::Banded { .. } => "banded",
        }
    }
}

/// Symmetric covariance matrix plus the estimation mode that produced it.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub matrix: Array2<f64>,
    pub mode: CovarianceMode,
    pub n_samples: usize,
}

impl CovarianceEstimate {
    /// Wraps an externally supplied matrix, checking squareness and symmetry.
    pub fn from_matrix(
        matrix: Array2<f64>,
        mode: CovarianceMode,
        n_samples: usize,
    ) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::Shape(format!("covariance must be square, got {r}×{c}")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance matrix".into()));
        }
        let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for i in 0..r {
            for j in (i + 1)..r {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-9 * scale {
                    return Err(Error::Shape(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut matrix = matrix;
        symmetrize(&mut matrix);
        Ok(Self {
            matrix,
            mode,
            n_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

fn residuals(ts: &TrainingSet, op: &OperatorEstimate) -> Result<Array2<f64>> {
    if op.matrix.nrows() != ts.n_channels() || op.matrix.ncols() != ts.n_endmembers() {
        return Err(Error::Shape(format!(
            "operator is {:?} but training set is {} channels × {} endmembers",
            op.matrix.dim(),
            ts.n_channels(),
            ts.n_endmembers()
        )));
    }
    Ok(ts.observations().to_owned() - op.matrix.dot(&ts.compositions()))
}

/// Maximum-likelihood estimate Σ̃ = R Rᵀ / N.
///
/// Biased: E[Σ̃] = ((N−M)/N) Σ because M degrees of freedom per channel are
/// absorbed by the operator fit.
pub fn mle_covariance(ts: &TrainingSet, op: &OperatorEstimate) -> Result<CovarianceEstimate> {
    let r = residuals(ts, op)?;
    let n = ts.n_samples() as f64;
    let mut matrix = r.dot(&r.t());
    matrix /= n;
    symmetrize(&mut matrix);
    Ok(CovarianceEstimate {
        matrix,
        mode: CovarianceMode::Mle,
        n_samples: ts.n_samples(),
    })
}

/// Sample covariance R Rᵀ / (N−1); needs at least two samples.
pub fn sample_covariance(ts: &TrainingSet, op: &OperatorEstimate) -> Result<CovarianceEstimate> {
    if ts.n_samples() < 2 {
        return Err(Error::VarianceUndefined(
            "sample covariance needs at least 2 training samples".into(),
        ));
    }
    let r = residuals(ts, op)?;
    let n = ts.n_samples() as f64;
    let mut matrix = r.dot(&r.t());
    matrix /= n - 1.0;
    symmetrize(&mut matrix);
    Ok(CovarianceEstimate {
        matrix,
        mode: CovarianceMode::Sample,
        n_samples: ts.n_samples(),
    })
}

/// Keeps the diagonal, zeroes everything else.
pub fn diagonalize(cov: &CovarianceEstimate) -> CovarianceEstimate {
    let mut matrix = Array2::zeros(cov.matrix.dim());
    matrix.diag_mut().assign(&cov.matrix.diag());
    CovarianceEstimate {
        matrix,
        mode: CovarianceMode::Diag,
        n_samples: cov.n_samples,
    }
}

/// Zeroes entries more than `k` bands off the diagonal.
///
/// `band(·, 0)` equals `diagonalize`; `k ≥ T−1` returns the input unchanged
/// (including its mode). Banding is an exact projection: applying it twice
/// with the same `k` changes nothing.
pub fn band(cov: &CovarianceEstimate, k: usize) -> CovarianceEstimate {
    let t = cov.dim();
    if t > 0 && k >= t - 1 {
        return cov.clone();
    }
    let matrix = Array2::from_shape_fn((t, t), |(i, j)| {
        if i.abs_diff(j) <= k {
            cov.matrix[[i, j]]
        } else {
            0.0
        }
    });
    CovarianceEstimate {
        matrix,
        mode: CovarianceMode::Banded { k },
        n_samples: cov.n_samples,
    }
}

/// Estimates the covariance in the requested mode.
///
/// `Diag` and `Banded` post-process the maximum-likelihood estimate; this is
/// the one switch shared by the CLI and the experiment harnesses.
pub fn estimate_covariance(
    ts: &TrainingSet,
    op: &OperatorEstimate,
    mode: CovarianceMode,
) -> Result<CovarianceEstimate> {
    match mode {
        CovarianceMode::Mle => mle_covariance(ts, op),
        CovarianceMode::Sample => sample_covariance(ts, op),
        CovarianceMode::Diag => Ok(diagonalize(&mle_covariance(ts, op)?)),
        CovarianceMode::Banded { k } => Ok(band(&mle_covariance(ts, op)?, k)),
    }
}

/// Bandwidth rule of thumb K = ⌈(N / ln T)^(1/4)⌉ for T > 1.
pub fn default_band_width(n_samples: usize, t: usize) -> usize {
    if t <= 1 {
        return 0;
    }
    let v = (n_samples as f64 / (t as f64).ln()).powf(0.25);
    v.ceil().max(0.0) as usize
}

/// Correlation ρ_ij = Σ_ij / sqrt(Σ_ii Σ_jj).
pub fn correlation_coefficient(cov: &CovarianceEstimate, i: usize, j: usize) -> Result<f64> {
    let t = cov.dim();
    if i >= t || j >= t {
        return Err(Error::Param(format!(
            "indices ({i}, {j}) out of range for a {t}-channel covariance"
        )));
    }
    let (vi, vj) = (cov.matrix[[i, i]], cov.matrix[[j, j]]);
    if vi <= 0.0 || vj <= 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "nonpositive variance at index {}",
            if vi <= 0.0 { i } else { j }
        )));
    }
    Ok(cov.matrix[[i, j]] / (vi * vj).sqrt())
}

/// Precision (inverse covariance), kept diagonal when possible.
#[derive(Clone, Debug)]
pub enum Precision {
    Diagonal(Array1<f64>),
    Dense(Array2<f64>),
}

impl Precision {
    pub fn dim(&self) -> usize {
        match self {
            Precision::Diagonal(d) => d.len(),
            Precision::Dense(p) => p.nrows(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Precision::Diagonal(_))
    }

    /// Quadratic form dᵀ P d.
    pub fn quad_form(&self, d: ArrayView1<'_, f64>) -> f64 {
        match self {
            Precision::Diagonal(w) => d.iter().zip(w.iter()).map(|(x, w)| w * x * x).sum(),
            Precision::Dense(p) => d.dot(&p.dot(&d)),
        }
    }

    /// Matrix-vector product P x.
    pub fn dot(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Precision::Diagonal(w) => Array1::from_iter(
                x.iter().zip(w.iter()).map(|(x, w)| w * x),
            ),
            Precision::Dense(p) => p.dot(&x),
        }
    }

    /// Normal matrix Aᵀ P A for a T×M design.
    pub fn normal_matrix(&self, a: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Precision::Diagonal(w) => {
                let mut wa = a.to_owned();
                for (mut row, &wi) in wa.rows_mut().into_iter().zip(w.iter()) {
                    row *= wi;
                }
                a.t().dot(&wa)
            }
            Precision::Dense(p) => a.t().dot(&p.dot(&a)),
        }
    }
}

/// Inverts a covariance estimate, routing diagonal modes to a cheap inverse.
///
/// Dense modes with fewer samples than channels are flagged as singular up
/// front (the residual rank cannot reach T); banding or diagonalizing is the
/// standard fix.
pub fn invert_covariance(cov: &CovarianceEstimate) -> Result<Precision> {
    match cov.mode {
        CovarianceMode::Diag => {
            let d = cov.matrix.diag();
            if let Some(i) = d.iter().position(|&v| v <= 0.0) {
                return Err(Error::SingularCovariance(format!(
                    "nonpositive variance at index {i}"
                )));
            }
            Ok(Precision::Diagonal(d.mapv(|v| 1.0 / v)))
        }
        CovarianceMode::Mle | CovarianceMode::Sample => {
            if cov.n_samples < cov.dim() {
                return Err(Error::SingularCovariance(format!(
                    "{} residual samples cannot span {} channels",
                    cov.n_samples,
                    cov.dim()
                )));
            }
            dense_inverse(cov)
        }
        CovarianceMode::Banded { .. } => dense_inverse(cov),
    }
}

fn dense_inverse(cov: &CovarianceEstimate) -> Result<Precision> {
    let chol = Cholesky::new(cov.matrix.view()).ok_or_else(|| {
        Error::SingularCovariance("covariance is not positive definite".into())
    })?;
    Ok(Precision::Dense(chol.inverse()))
}

/// Weighted distance sqrt((x−y)ᵀ P (x−y)).
pub fn weighted_l2_distance(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    precision: &Precision,
) -> Result<f64> {
    if x.len() != y.len() || x.len() != precision.dim() {
        return Err(Error::Shape(format!(
            "weighted distance needs matching lengths, got {}, {}, {}",
            x.len(),
            y.len(),
            precision.dim()
        )));
    }
    let d = &x - &y;
    Ok(precision.quad_form(d.view()).max(0.0).sqrt())
}
