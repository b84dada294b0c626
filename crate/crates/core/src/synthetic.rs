//! Synthetic score tensors with known IN/OUT Gaussians, and the exact
//! log-likelihood-ratio scores under those Gaussians.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::lira_score;
use crate::data::{Dataset, DatasetManifest, Dtype, MembershipMask, ScoreKind, ScoreTensor};
use crate::error::{Error, Result};
use crate::estimators::{CovRepr, GaussianSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovModel {
    /// `σ² I`.
    Isotropic { sigma2: f64 },
    /// Independent tokens, variances log-uniform in `[low, high]`, drawn per canary.
    DiagonalRandom { low: f64, high: f64 },
    /// `D Q Λ Qᵀ D` drawn per canary: Haar-random `Q`, log-uniform spectrum
    /// with `λ_max / λ_min = condition`, and per-token scales
    /// `D = diag(exp(U(−scale_spread, scale_spread)))`.
    Dense { condition: f64, scale_spread: f64 },
    /// `Σ_ij = σ² ρ^|i−j|`.
    Ar1 { sigma2: f64, rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPattern {
    /// `μ_in − μ_out = (δ, δ, …)`.
    Constant,
    /// `μ_in − μ_out = (δ/2, −δ/2, δ/2, …)`.
    Alternating,
    /// Independent `N(0, δ²)` per token, drawn per canary.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub models: usize,
    pub canaries: usize,
    pub tokens: usize,
    pub cov_model: CovModel,
    pub shift: f64,
    pub pattern: ShiftPattern,
    /// When set, `Σ_in = in_scale · Σ_out`.
    pub in_scale: Option<f64>,
    pub seed: u64,
    pub dtype: Dtype,
}

impl SyntheticSpec {
    pub fn new(models: usize, canaries: usize, tokens: usize, cov_model: CovModel) -> Self {
        Self {
            models,
            canaries,
            tokens,
            cov_model,
            shift: 0.0,
            pattern: ShiftPattern::Alternating,
            in_scale: None,
            seed: 0,
            dtype: Dtype::Float64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.models < 2 || self.canaries < 1 || self.tokens < 1 {
            return bad(format!(
                "dims ({}, {}, {}) need M >= 2, N >= 1, T >= 1",
                self.models, self.canaries, self.tokens
            ));
        }
        if !self.shift.is_finite() {
            return bad("shift must be finite".into());
        }
        if let Some(s) = self.in_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("IN covariance scale {s} must be positive"));
            }
        }
        match self.cov_model {
            CovModel::Isotropic { sigma2 } if !(sigma2 > 0.0) => {
                bad(format!("sigma2 {sigma2} must be positive"))
            }
            CovModel::DiagonalRandom { low, high } if !(low > 0.0 && high >= low) => {
                bad(format!("variance range [{low}, {high}] invalid"))
            }
            CovModel::Dense {
                condition,
                scale_spread,
            } if !(condition >= 1.0 && scale_spread >= 0.0) => bad(format!(
                "condition {condition} must be >= 1 and spread {scale_spread} >= 0"
            )),
            CovModel::Ar1 { sigma2, rho } if !(sigma2 > 0.0 && rho.abs() < 1.0) => {
                bad(format!("AR(1) needs sigma2 > 0 and |rho| < 1, got {sigma2}, {rho}"))
            }
            _ => Ok(()),
        }
    }
}

/// True IN and OUT Gaussians of one canary.
#[derive(Debug, Clone)]
pub struct TruthPair {
    pub member: GaussianSpec,
    pub nonmember: GaussianSpec,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub canaries: Vec<TruthPair>,
}

pub fn ar1_covariance(tokens: usize, sigma2: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(tokens, tokens, |i, j| {
        sigma2 * rho.powi((i as i32 - j as i32).abs())
    })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q Λ Qᵀ` with eigenvalues spanning exactly `[1, condition]`, interior
/// eigenvalues log-uniform.
pub fn dense_spd(d: usize, condition: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let log_c = condition.ln();
    let eig: Vec<f64> = (0..d)
        .map(|i| match i {
            0 => 1.0,
            _ if i == d - 1 => condition,
            _ => (rng.random::<f64>() * log_c).exp(),
        })
        .collect();
    let q = random_orthogonal(d, rng);
    let mut m = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    crate::linalg::symmetrize_from_lower(&mut m);
    m
}

fn canary_rng(seed: u64, canary: usize) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, canary)
    let mut z = seed ^ (canary as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn draw_cov(model: CovModel, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match model {
        CovModel::Isotropic { sigma2 } => DMatrix::from_diagonal_element(t, t, sigma2),
        CovModel::Ar1 { sigma2, rho } => ar1_covariance(t, sigma2, rho),
        CovModel::DiagonalRandom { low, high } => {
            let (a, b) = (low.ln(), high.ln());
            DMatrix::from_diagonal(&DVector::from_fn(t, |_, _| {
                (a + rng.random::<f64>() * (b - a)).exp()
            }))
        }
        CovModel::Dense {
            condition,
            scale_spread,
        } => {
            let mut c = dense_spd(t, condition, rng);
            if scale_spread > 0.0 {
                let s: Vec<f64> = (0..t)
                    .map(|_| (scale_spread * (2.0 * rng.random::<f64>() - 1.0)).exp())
                    .collect();
                for j in 0..t {
                    for i in 0..t {
                        c[(i, j)] *= s[i] * s[j];
                    }
                }
            }
            c
        }
    }
}

fn shift_vector(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (t, delta) = (spec.tokens, spec.shift);
    match spec.pattern {
        ShiftPattern::Constant => vec![delta; t],
        ShiftPattern::Alternating => (0..t)
            .map(|i| if i % 2 == 0 { delta / 2.0 } else { -delta / 2.0 })
            .collect(),
        ShiftPattern::Random => (0..t)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                delta * z
            })
            .collect(),
    }
}

fn truth_pair(
    cov: DMatrix<f64>,
    shift: Vec<f64>,
    in_scale: Option<f64>,
) -> Result<TruthPair> {
    let t = cov.nrows();
    let nonmember = GaussianSpec::new(vec![0.0; t], CovRepr::Full(Arc::new(cov.clone())))?;
    let member = match in_scale {
        None => nonmember.with_mean(shift)?,
        Some(s) => GaussianSpec::new(shift, CovRepr::Full(Arc::new(cov * s)))?,
    };
    Ok(TruthPair { member, nonmember })
}

struct CanaryDraw {
    member_of: Vec<bool>,
    rows: Vec<f64>,
    truth: TruthPair,
}

fn draw_canary(spec: &SyntheticSpec, canary: usize, fixed: Option<&TruthPair>) -> Result<CanaryDraw> {
    let (m, t) = (spec.models, spec.tokens);
    let mut rng = canary_rng(spec.seed, canary);
    let truth = match fixed {
        Some(pair) if spec.pattern != ShiftPattern::Random => pair.clone(),
        Some(pair) => {
            let shift = shift_vector(spec, &mut rng);
            TruthPair {
                member: pair.member.with_mean(shift)?,
                nonmember: pair.nonmember.clone(),
            }
        }
        None => {
            let cov = draw_cov(spec.cov_model, t, &mut rng);
            let shift = shift_vector(spec, &mut rng);
            truth_pair(cov, shift, spec.in_scale)?
        }
    };

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut member_of = vec![false; m];
    for &r in &order[..m / 2] {
        member_of[r] = true;
    }

    let mut rows = vec![0.0; m * t];
    let mut z = vec![0.0; t];
    for (r, row) in rows.chunks_exact_mut(t).enumerate() {
        let g = if member_of[r] {
            &truth.member
        } else {
            &truth.nonmember
        };
        let l = g.chol().expect("truth covariances are full");
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // row = μ + L z
        row.copy_from_slice(g.mean());
        for (j, &zj) in z.iter().enumerate() {
            let col = &l.as_slice()[j * t..(j + 1) * t];
            for (dst, &lij) in row[j..].iter_mut().zip(&col[j..]) {
                *dst += lij * zj;
            }
        }
    }
    Ok(CanaryDraw {
        member_of,
        rows,
        truth,
    })
}

/// Draws a dataset from `spec`. Each canary uses its own seeded stream, so
/// the output does not depend on how canaries are scheduled across threads.
/// Exactly `⌊M/2⌋` models are IN for every canary.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (m, n, t) = (spec.models, spec.canaries, spec.tokens);
    let fixed = match spec.cov_model {
        CovModel::Isotropic { .. } | CovModel::Ar1 { .. } => {
            let mut rng = canary_rng(spec.seed, usize::MAX);
            let cov = draw_cov(spec.cov_model, t, &mut rng);
            let shift = shift_vector(spec, &mut rng);
            Some(truth_pair(cov, shift, spec.in_scale)?)
        }
        _ => None,
    };

    let draws: Vec<CanaryDraw> = (0..n)
        .into_par_iter()
        .map(|c| draw_canary(spec, c, fixed.as_ref()))
        .collect::<Result<_>>()?;

    let mut data = vec![0.0; m * n * t];
    let mut bits = vec![false; m * n];
    for (c, draw) in draws.iter().enumerate() {
        for r in 0..m {
            let dst = (r * n + c) * t;
            data[dst..dst + t].copy_from_slice(&draw.rows[r * t..(r + 1) * t]);
            bits[r * n + c] = draw.member_of[r];
        }
    }
    let truth = GroundTruth {
        canaries: draws.into_iter().map(|d| d.truth).collect(),
    };

    let mut manifest = DatasetManifest::new((m, n, t), spec.dtype, ScoreKind::Raw);
    manifest.seed = Some(spec.seed);
    manifest.notes = serde_json::to_string(spec).unwrap_or_default();
    let dataset = Dataset::new(
        ScoreTensor::new(data, m, n, t)?,
        MembershipMask::new(bits, m, n)?,
        manifest,
    )?;
    Ok((dataset, truth))
}

/// Exact log-likelihood ratios `[M, N]` under the true parameters.
pub fn analytic_lira_scores(tensor: &ScoreTensor, truth: &GroundTruth) -> Result<Vec<f64>> {
    let (m, n, _) = tensor.dims();
    if truth.canaries.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            found: truth.canaries.len(),
        });
    }
    (0..m * n)
        .into_par_iter()
        .map(|i| {
            let pair = &truth.canaries[i % n];
            lira_score(tensor.row(i / n, i % n), &pair.member, &pair.nonmember)
        })
        .collect()
}
