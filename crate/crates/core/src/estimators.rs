//! Gaussian models of per-token score vectors.
//!
//! All covariance estimates use the biased `1/n` normalization. Scalar and
//! diagonal variances are floored at [`VARIANCE_FLOOR`]; full matrices go
//! through a jitter loop until they factorize (see [`factorize_with_jitter`]).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const VARIANCE_FLOOR: f64 = 1e-10;
const JITTER_START: f64 = 1e-10;
const JITTER_CAP: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum CovRepr {
    /// `var · I` in `dim` dimensions.
    Scalar { var: f64, dim: usize },
    Diagonal(Vec<f64>),
    Full(Arc<DMatrix<f64>>),
}

impl CovRepr {
    pub fn dim(&self) -> usize {
        match self {
            CovRepr::Scalar { dim, .. } => *dim,
            CovRepr::Diagonal(v) => v.len(),
            CovRepr::Full(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            CovRepr::Scalar { var, dim } => DMatrix::from_diagonal_element(*dim, *dim, *var),
            CovRepr::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            CovRepr::Full(m) => (**m).clone(),
        }
    }
}

/// Mean plus covariance, with the factorization needed for density
/// evaluation cached at construction.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: Vec<f64>,
    cov: CovRepr,
    chol: Option<Arc<DMatrix<f64>>>,
    log_det: f64,
}

impl GaussianSpec {
    /// Floors scalar/diagonal variances; factorizes full matrices with jitter.
    pub fn new(mean: Vec<f64>, cov: CovRepr) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        let (cov, chol, log_det) = match cov {
            CovRepr::Scalar { var, dim } => {
                let var = var.max(VARIANCE_FLOOR);
                (CovRepr::Scalar { var, dim }, None, dim as f64 * var.ln())
            }
            CovRepr::Diagonal(v) => {
                let v: Vec<f64> = v.into_iter().map(|x| x.max(VARIANCE_FLOOR)).collect();
                let log_det = v.iter().map(|x| x.ln()).sum();
                (CovRepr::Diagonal(v), None, log_det)
            }
            CovRepr::Full(m) => {
                let (m, l) = factorize_with_jitter(&m)?;
                let log_det = linalg::log_det_from_cholesky(&l);
                (CovRepr::Full(Arc::new(m)), Some(Arc::new(l)), log_det)
            }
        };
        Ok(Self {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    /// Same covariance and factorization, different mean.
    pub fn with_mean(&self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: mean.len(),
            });
        }
        Ok(Self {
            mean,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &CovRepr {
        &self.cov
    }

    pub fn chol(&self) -> Option<&DMatrix<f64>> {
        self.chol.as_deref()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(match &self.cov {
            CovRepr::Scalar { var, .. } => r.iter().map(|v| v * v).sum::<f64>() / var,
            CovRepr::Diagonal(vars) => r.iter().zip(vars).map(|(v, s)| v * v / s).sum(),
            CovRepr::Full(_) => {
                let l = self
                    .chol
                    .as_ref()
                    .ok_or_else(|| Error::DegenerateFit("missing factorization".into()))?;
                linalg::forward_solve_in_place(l, &mut r);
                r.iter().map(|v| v * v).sum()
            }
        })
    }
}

/// Attempts a Cholesky factorization of `s`; on failure adds `λI` starting
/// at `1e-10 · tr(S)/d` and doubling, giving up once `λ` exceeds
/// `1e-2 · tr(S)/d`. A zero trace uses a scale of 1. Returns the matrix
/// actually factorized.
pub fn factorize_with_jitter(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = s.nrows();
    if d == 0 || s.ncols() != d {
        return Err(Error::DegenerateFit(format!(
            "covariance must be square and non-empty, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite covariance entry".into()));
    }
    if let Some(l) = linalg::cholesky_lower(s) {
        return Ok((s.clone(), l));
    }
    let scale = match linalg::trace(s) / d as f64 {
        t if t > 0.0 => t,
        _ => 1.0,
    };
    let cap = JITTER_CAP * scale;
    let mut lambda = JITTER_START * scale;
    while lambda <= cap {
        let mut jittered = s.clone();
        for i in 0..d {
            jittered[(i, i)] += lambda;
        }
        if let Some(l) = linalg::cholesky_lower(&jittered) {
            return Ok((jittered, l));
        }
        lambda *= 2.0;
    }
    Err(Error::DegenerateFit(format!(
        "covariance not positive definite even with jitter {cap:e}"
    )))
}

pub fn log_density(x: &[f64], spec: &GaussianSpec) -> Result<f64> {
    let q = spec.mahalanobis_sq(x)?;
    Ok(-0.5 * (spec.dim() as f64 * (2.0 * PI).ln() + spec.log_det() + q))
}

/// Which covariance structure to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `σ² I`; with `d = 1` this is the classic single-score model.
    Univariate,
    /// Per-coordinate variances, no correlations.
    Independent,
    /// Oracle-approximating shrinkage toward `tr(S)/d · I`.
    Oas,
    /// Unconstrained maximum-likelihood covariance.
    Full,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Univariate,
        Estimator::Independent,
        Estimator::Oas,
        Estimator::Full,
    ];
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "univariate" | "scalar" => Ok(Estimator::Univariate),
            "independent" | "diagonal" => Ok(Estimator::Independent),
            "oas" => Ok(Estimator::Oas),
            "full" | "full_mle" | "mle" => Ok(Estimator::Full),
            other => Err(Error::Validation(format!("unknown estimator {other:?}"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Univariate => "univariate",
            Estimator::Independent => "independent",
            Estimator::Oas => "oas",
            Estimator::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassWise,
    Shared,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classwise" | "class_wise" | "class-wise" => Ok(Pooling::ClassWise),
            "shared" => Ok(Pooling::Shared),
            other => Err(Error::Validation(format!("unknown pooling {other:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::ClassWise => "classwise",
            Pooling::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    pub gaussian: GaussianSpec,
    /// Shrinkage intensity in `[0, 1]`.
    pub alpha: f64,
}

/// OAS shrinkage intensity for an MLE covariance `s` estimated from `n`
/// samples:
///
/// `ρ = [(1 − 2/d)·tr(S²) + tr²(S)] / [(n + 1 − 2/d)·(tr(S²) − tr²(S)/d)]`,
/// clamped to `[0, 1]`. A vanishing denominator (S already proportional to
/// the identity) yields 1; for `d = 1` the target equals `S` and 0 is returned.
pub fn oas_shrinkage(s: &DMatrix<f64>, n: usize) -> f64 {
    let d = s.nrows() as f64;
    if s.nrows() <= 1 {
        return 0.0;
    }
    let tr = linalg::trace(s);
    // tr(S²) = Σ_ij S_ij² for symmetric S.
    let tr_s2: f64 = s.iter().map(|v| v * v).sum();
    let num = (1.0 - 2.0 / d) * tr_s2 + tr * tr;
    let den = (n as f64 + 1.0 - 2.0 / d) * (tr_s2 - tr * tr / d);
    if den <= 0.0 {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// `(1 − α) S + α · tr(S)/d · I`.
pub fn shrink(s: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let d = s.nrows();
    let mu = linalg::trace(s) / d as f64;
    let mut out = s * (1.0 - alpha);
    for i in 0..d {
        out[(i, i)] += alpha * mu;
    }
    out
}

fn ensure_rows(x: &DMatrix<f64>, min: usize) -> Result<()> {
    if x.nrows() < min {
        return Err(Error::DegenerateFit(format!(
            "need at least {min} samples, got {}",
            x.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::DegenerateFit("zero-dimensional samples".into()));
    }
    Ok(())
}

/// Covariance of already-centered residuals under `estimator`. Returns the
/// OAS intensity alongside (0 for other estimators).
pub fn estimate_cov(residuals: &DMatrix<f64>, estimator: Estimator) -> Result<(CovRepr, f64)> {
    let d = residuals.ncols();
    Ok(match estimator {
        Estimator::Univariate => {
            let var = linalg::column_variances(residuals).iter().sum::<f64>() / d as f64;
            (CovRepr::Scalar { var, dim: d }, 0.0)
        }
        Estimator::Independent => (CovRepr::Diagonal(linalg::column_variances(residuals)), 0.0),
        Estimator::Full => (CovRepr::Full(Arc::new(linalg::scatter(residuals))), 0.0),
        Estimator::Oas => {
            let s = linalg::scatter(residuals);
            let alpha = oas_shrinkage(&s, residuals.nrows());
            (CovRepr::Full(Arc::new(shrink(&s, alpha))), alpha)
        }
    })
}

/// Mean and biased variance of scalar samples.
pub fn fit_mean_var(samples: &[f64]) -> Result<GaussianSpec> {
    if samples.is_empty() {
        return Err(Error::DegenerateFit("no samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    GaussianSpec::new(vec![mean], CovRepr::Scalar { var, dim: 1 })
}

fn fit_with(samples: &DMatrix<f64>, estimator: Estimator) -> Result<(GaussianSpec, f64)> {
    let mean = linalg::column_means(samples);
    let residuals = linalg::center(samples, &mean);
    let (cov, alpha) = estimate_cov(&residuals, estimator)?;
    Ok((GaussianSpec::new(mean, cov)?, alpha))
}

/// Column means and `(1/n)` scatter, jittered until positive definite.
pub fn fit_mle_full(samples: &DMatrix<f64>) -> Result<GaussianSpec> {
    ensure_rows(samples, 2)?;
    fit_with(samples, Estimator::Full).map(|(g, _)| g)
}

pub fn fit_diagonal(samples: &DMatrix<f64>) -> Result<GaussianSpec> {
    ensure_rows(samples, 2)?;
    fit_with(samples, Estimator::Independent).map(|(g, _)| g)
}

pub fn fit_oas(samples: &DMatrix<f64>) -> Result<ShrinkageResult> {
    ensure_rows(samples, 2)?;
    let (gaussian, alpha) = fit_with(samples, Estimator::Oas)?;
    Ok(ShrinkageResult { gaussian, alpha })
}

/// OAS with a caller-chosen intensity, for checking the shrinkage endpoints.
pub fn fit_shrunk_with_alpha(samples: &DMatrix<f64>, alpha: f64) -> Result<ShrinkageResult> {
    ensure_rows(samples, 2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let mean = linalg::column_means(samples);
    let s = linalg::scatter(&linalg::center(samples, &mean));
    let gaussian = GaussianSpec::new(mean, CovRepr::Full(Arc::new(shrink(&s, alpha))))?;
    Ok(ShrinkageResult { gaussian, alpha })
}

/// Sample count, mean and unnormalized centered scatter `Σ (x − μ)(x − μ)ᵀ`
/// of one class.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub scatter: DMatrix<f64>,
}

impl ClassStats {
    pub fn from_samples(samples: &DMatrix<f64>) -> Self {
        let d = samples.ncols();
        if samples.nrows() == 0 {
            return Self {
                n: 0,
                mean: vec![0.0; d],
                scatter: DMatrix::zeros(d, d),
            };
        }
        let mean = linalg::column_means(samples);
        let r = linalg::center(samples, &mean);
        let mut scatter = r.tr_mul(&r);
        linalg::symmetrize_from_lower(&mut scatter);
        Self {
            n: samples.nrows(),
            mean,
            scatter,
        }
    }

    /// Statistics with sample `x` removed.
    pub fn without(&self, x: &[f64]) -> Self {
        let d = self.mean.len();
        if self.n <= 1 {
            return Self {
                n: 0,
                mean: vec![0.0; d],
                scatter: DMatrix::zeros(d, d),
            };
        }
        let n = self.n as f64;
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mean = self.mean.iter().zip(&r).map(|(m, v)| m - v / (n - 1.0)).collect();
        let w = n / (n - 1.0);
        let mut scatter = self.scatter.clone();
        for j in 0..d {
            let rj = w * r[j];
            for i in j..d {
                scatter[(i, j)] -= r[i] * rj;
            }
        }
        linalg::symmetrize_from_lower(&mut scatter);
        Self {
            n: self.n - 1,
            mean,
            scatter,
        }
    }
}

/// Covariance under `estimator` from an unnormalized scatter of `n`
/// centered residuals.
pub fn estimate_cov_from_scatter(
    scatter: &DMatrix<f64>,
    n: usize,
    estimator: Estimator,
) -> Result<(CovRepr, f64)> {
    let d = scatter.nrows();
    if n == 0 || d == 0 {
        return Err(Error::DegenerateFit("no residuals".into()));
    }
    let s = scatter / n as f64;
    Ok(match estimator {
        Estimator::Univariate => (
            CovRepr::Scalar {
                var: linalg::trace(&s) / d as f64,
                dim: d,
            },
            0.0,
        ),
        Estimator::Independent => (CovRepr::Diagonal(s.diagonal().iter().copied().collect()), 0.0),
        Estimator::Full => (CovRepr::Full(Arc::new(s)), 0.0),
        Estimator::Oas => {
            let alpha = oas_shrinkage(&s, n);
            (CovRepr::Full(Arc::new(shrink(&s, alpha))), alpha)
        }
    })
}

/// Fits the IN and OUT Gaussians of one canary.
///
/// `ClassWise` fits each class on its own rows. `Shared` centers each class
/// on its own mean, stacks the residuals and fits a single covariance that
/// both returned specs carry.
pub fn fit_class_models(
    in_samples: &DMatrix<f64>,
    out_samples: &DMatrix<f64>,
    estimator: Estimator,
    pooling: Pooling,
) -> Result<(GaussianSpec, GaussianSpec)> {
    let d = in_samples.ncols();
    if out_samples.ncols() != d {
        return Err(Error::DimMismatch {
            expected: d,
            found: out_samples.ncols(),
        });
    }
    fit_class_models_from_stats(
        &ClassStats::from_samples(in_samples),
        &ClassStats::from_samples(out_samples),
        estimator,
        pooling,
    )
}

/// [`fit_class_models`] on precomputed class statistics.
pub fn fit_class_models_from_stats(
    stats_in: &ClassStats,
    stats_out: &ClassStats,
    estimator: Estimator,
    pooling: Pooling,
) -> Result<(GaussianSpec, GaussianSpec)> {
    let d = stats_in.mean.len();
    if stats_out.mean.len() != d {
        return Err(Error::DimMismatch {
            expected: d,
            found: stats_out.mean.len(),
        });
    }
    if d == 0 {
        return Err(Error::DegenerateFit("zero-dimensional samples".into()));
    }
    let (n_in, n_out) = (stats_in.n, stats_out.n);
    match pooling {
        Pooling::ClassWise => {
            if n_in < 2 || n_out < 2 {
                return Err(Error::DegenerateFit(format!(
                    "class-wise fit needs 2 IN and 2 OUT samples, got {n_in} and {n_out}"
                )));
            }
            let (cov_in, _) = estimate_cov_from_scatter(&stats_in.scatter, n_in, estimator)?;
            let (cov_out, _) = estimate_cov_from_scatter(&stats_out.scatter, n_out, estimator)?;
            Ok((
                GaussianSpec::new(stats_in.mean.clone(), cov_in)?,
                GaussianSpec::new(stats_out.mean.clone(), cov_out)?,
            ))
        }
        Pooling::Shared => {
            if n_in < 1 || n_out < 1 || n_in + n_out < 2 {
                return Err(Error::DegenerateFit(format!(
                    "shared fit needs a sample in each class, got {n_in} and {n_out}"
                )));
            }
            let pooled = &stats_in.scatter + &stats_out.scatter;
            let (cov, _) = estimate_cov_from_scatter(&pooled, n_in + n_out, estimator)?;
            let g_in = GaussianSpec::new(stats_in.mean.clone(), cov)?;
            let g_out = g_in.with_mean(stats_out.mean.clone())?;
            Ok((g_in, g_out))
        }
    }
}

pub fn frobenius_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
