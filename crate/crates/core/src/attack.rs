//! Leave-one-out likelihood-ratio attack.
//!
//! Every model takes a turn as the target. For each canary the remaining
//! (optionally subsampled) shadow models are split by membership into IN
//! and OUT sets, a Gaussian is fitted to each, and the target's score
//! vector is scored by the log density ratio. Scores stay in log space.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MembershipMask, ScoreTensor};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_class_models_from_stats, log_density, ClassStats, Estimator, GaussianSpec, Pooling,
};
use crate::report::{fmt_f64, CsvTable};
use crate::transform::{ReductionSpec, TransformSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub estimator: Estimator,
    pub pooling: Pooling,
    pub reduction: ReductionSpec,
    pub transform: TransformSpec,
    /// Subsample this many shadow models per target (shadow-count sweeps).
    pub max_shadow_models: Option<usize>,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(estimator: Estimator, pooling: Pooling) -> Self {
        Self {
            estimator,
            pooling,
            reduction: ReductionSpec::None,
            transform: TransformSpec::Identity,
            max_shadow_models: None,
            seed: 0,
        }
    }

    /// The reduction actually applied. The univariate estimator works on the
    /// whole-sequence mean, so `None` becomes a single full-length group;
    /// any other reduction that leaves more than one feature is a conflict.
    pub fn effective_reduction(&self, tokens: usize) -> Result<ReductionSpec> {
        self.reduction.validate(tokens)?;
        if self.estimator != Estimator::Univariate {
            return Ok(self.reduction);
        }
        match self.reduction {
            ReductionSpec::None => Ok(ReductionSpec::Group(tokens)),
            ReductionSpec::Group(c) if self.reduction.output_dim(tokens) == 1 => {
                Ok(ReductionSpec::Group(c))
            }
            other => Err(Error::ConfigConflict(format!(
                "univariate estimator needs a scalar score per canary, but reduction {other} \
                 yields {} features",
                other.output_dim(tokens)
            ))),
        }
    }

    pub fn validate(&self, models: usize, tokens: usize) -> Result<()> {
        self.effective_reduction(tokens)?;
        if models < 3 {
            return Err(Error::Validation(format!(
                "attack needs at least 3 models, got {models}"
            )));
        }
        match self.max_shadow_models {
            Some(0) => Err(Error::Validation("--max-shadow must be positive".into())),
            Some(s) if s > models - 1 => Err(Error::Validation(format!(
                "--max-shadow {s} exceeds the {} available shadow models",
                models - 1
            ))),
            _ => Ok(()),
        }
    }

    /// Short identifier such as `oas-shared` or `independent-classwise-group4`.
    pub fn label(&self) -> String {
        let mut label = format!("{}-{}", self.estimator, self.pooling);
        if self.reduction != ReductionSpec::None {
            label.push('-');
            label.push_str(&self.reduction.to_string());
        }
        if !self.transform.is_identity() {
            label.push('-');
            label.push_str(&self.transform.to_string());
        }
        label
    }
}

/// Per-cell fallback marker, written to the `fallback_flag` CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum FallbackFlag {
    #[default]
    None = 0,
    /// Class-wise fit was degenerate; refitted with shared pooling.
    Pooled = 1,
    /// No usable fit; scored 0.
    Uninformative = 2,
}

impl FallbackFlag {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FallbackFlag::None),
            1 => Ok(FallbackFlag::Pooled),
            2 => Ok(FallbackFlag::Uninformative),
            other => Err(Error::Csv(format!("unknown fallback flag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fallback {
    pub target: usize,
    pub canary: usize,
    pub flag: FallbackFlag,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub models: usize,
    pub canaries: usize,
    /// `[M, N]` log-likelihood ratios, model-major.
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub flags: Vec<FallbackFlag>,
    pub fallbacks: Vec<Fallback>,
    pub config: AttackConfig,
}

impl AttackResult {
    pub fn score(&self, target: usize, canary: usize) -> f64 {
        self.scores[target * self.canaries + canary]
    }

    /// Scores and labels of one target model.
    pub fn target_slice(&self, target: usize) -> (&[f64], &[bool]) {
        let range = target * self.canaries..(target + 1) * self.canaries;
        (&self.scores[range.clone()], &self.labels[range])
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&[
            "target_index",
            "canary_index",
            "score",
            "label",
            "fallback_flag",
        ]);
        for m in 0..self.models {
            for n in 0..self.canaries {
                let i = m * self.canaries + n;
                table.row([
                    m.to_string(),
                    n.to_string(),
                    fmt_f64(self.scores[i]),
                    (self.labels[i] as u8).to_string(),
                    self.flags[i].code().to_string(),
                ]);
            }
        }
        table
    }
}

/// One row of a scores CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub target: usize,
    pub canary: usize,
    pub score: f64,
    pub label: bool,
    pub flag: FallbackFlag,
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("{}: missing column {name}", path.display())))
    };
    let (ti, ci, si, li, fi) = (
        col("target_index")?,
        col("canary_index")?,
        col("score")?,
        col("label")?,
        col("fallback_flag").ok(),
    );
    let bad = |line: usize, what: &str| Error::Csv(format!("{}:{line}: bad {what}", path.display()));
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let line = i + 2;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let label = match field(li) {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad(line, "label")),
        };
        let flag = match fi {
            Some(fi) => FallbackFlag::from_code(field(fi).parse().map_err(|_| bad(line, "flag"))?)?,
            None => FallbackFlag::None,
        };
        records.push(ScoreRecord {
            target: field(ti).parse().map_err(|_| bad(line, "target_index"))?,
            canary: field(ci).parse().map_err(|_| bad(line, "canary_index"))?,
            score: field(si).parse().map_err(|_| bad(line, "score"))?,
            label,
            flag,
        });
    }
    Ok(records)
}

/// Log-likelihood ratio `log N(x | in) − log N(x | out)`.
pub fn lira_score(target: &[f64], spec_in: &GaussianSpec, spec_out: &GaussianSpec) -> Result<f64> {
    Ok(log_density(target, spec_in)? - log_density(target, spec_out)?)
}

/// Seeded permutation of model indices, shared by every canary and target.
pub fn shadow_permutation(seed: u64, models: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..models).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Shadow models used against `target`: the first `limit` non-target
/// entries of `perm` (all of them when `limit` is `None`), ascending.
pub fn shadow_rows(perm: &[usize], target: usize, limit: Option<usize>) -> Vec<usize> {
    let take = limit.unwrap_or(perm.len());
    let mut rows: Vec<usize> = perm.iter().copied().filter(|&r| r != target).take(take).collect();
    rows.sort_unstable();
    rows
}

/// Transformed and reduced feature vectors `[M, N, d]`.
struct Features<'a> {
    data: std::borrow::Cow<'a, [f64]>,
    canaries: usize,
    dim: usize,
}

impl Features<'_> {
    fn row(&self, model: usize, canary: usize) -> &[f64] {
        let start = (model * self.canaries + canary) * self.dim;
        &self.data[start..start + self.dim]
    }
}

fn build_features<'a>(
    tensor: &'a ScoreTensor,
    transform: TransformSpec,
    reduction: ReductionSpec,
) -> Result<Features<'a>> {
    let (m, n, t) = tensor.dims();
    let dim = reduction.output_dim(t);
    if transform.is_identity() && reduction == ReductionSpec::None {
        return Ok(Features {
            data: std::borrow::Cow::Borrowed(tensor.as_slice()),
            canaries: n,
            dim,
        });
    }
    let rows: Vec<Vec<f64>> = (0..m * n)
        .into_par_iter()
        .map(|i| {
            let raw = tensor.row(i / n, i % n);
            let transformed: Vec<f64> = raw
                .iter()
                .map(|&s| transform.apply_one(s))
                .collect::<Result<_>>()?;
            reduction.apply(&transformed)
        })
        .collect::<Result<_>>()?;
    Ok(Features {
        data: std::borrow::Cow::Owned(rows.concat()),
        canaries: n,
        dim,
    })
}

fn gather(features: &Features<'_>, rows: &[usize], canary: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rows.len(), features.dim);
    for (i, &r) in rows.iter().enumerate() {
        for (j, &v) in features.row(r, canary).iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

struct CellOutcome {
    score: f64,
    flag: FallbackFlag,
    reason: Option<String>,
}

fn score_from_stats(
    stats_in: &ClassStats,
    stats_out: &ClassStats,
    x: &[f64],
    config: &AttackConfig,
) -> CellOutcome {
    let attempt = |pooling: Pooling| -> Result<f64> {
        let (g_in, g_out) =
            fit_class_models_from_stats(stats_in, stats_out, config.estimator, pooling)?;
        let score = lira_score(x, &g_in, &g_out)?;
        if score.is_finite() {
            Ok(score)
        } else {
            Err(Error::DegenerateFit(format!("non-finite score {score}")))
        }
    };

    match attempt(config.pooling) {
        Ok(score) => CellOutcome {
            score,
            flag: FallbackFlag::None,
            reason: None,
        },
        Err(first) => {
            if config.pooling == Pooling::ClassWise {
                if let Ok(score) = attempt(Pooling::Shared) {
                    return CellOutcome {
                        score,
                        flag: FallbackFlag::Pooled,
                        reason: Some(first.to_string()),
                    };
                }
            }
            CellOutcome {
                score: 0.0,
                flag: FallbackFlag::Uninformative,
                reason: Some(first.to_string()),
            }
        }
    }
}

fn class_stats(
    features: &Features<'_>,
    mask: &MembershipMask,
    rows: &[usize],
    canary: usize,
) -> (ClassStats, ClassStats) {
    let (ins, outs): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| mask.is_member(r, canary));
    (
        ClassStats::from_samples(&gather(features, &ins, canary)),
        ClassStats::from_samples(&gather(features, &outs, canary)),
    )
}

fn score_cell(
    features: &Features<'_>,
    mask: &MembershipMask,
    shadows: &[usize],
    target: usize,
    canary: usize,
    config: &AttackConfig,
) -> CellOutcome {
    let (stats_in, stats_out) = class_stats(features, mask, shadows, canary);
    score_from_stats(&stats_in, &stats_out, features.row(target, canary), config)
}

/// All targets of one canary when every other model is a shadow: class
/// statistics are computed once and the target row is removed by a rank-one
/// downdate.
fn score_canary_loo(
    features: &Features<'_>,
    mask: &MembershipMask,
    models: usize,
    canary: usize,
    config: &AttackConfig,
) -> Vec<CellOutcome> {
    let all: Vec<usize> = (0..models).collect();
    let (stats_in, stats_out) = class_stats(features, mask, &all, canary);
    (0..models)
        .map(|target| {
            let x = features.row(target, canary);
            if mask.is_member(target, canary) {
                score_from_stats(&stats_in.without(x), &stats_out, x, config)
            } else {
                score_from_stats(&stats_in, &stats_out.without(x), x, config)
            }
        })
        .collect()
}

/// Runs the leave-one-out attack over every (target model, canary) pair.
///
/// Cells are computed independently and collected in index order, so the
/// result does not depend on the size of the rayon pool.
pub fn run_attack(
    tensor: &ScoreTensor,
    mask: &MembershipMask,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let (m, n, t) = tensor.dims();
    if mask.dims() != (m, n) {
        return Err(Error::Validation(format!(
            "mask dims {:?} do not match tensor ({m}, {n})",
            mask.dims()
        )));
    }
    config.validate(m, t)?;
    let reduction = config.effective_reduction(t)?;
    let features = build_features(tensor, config.transform, reduction)?;

    let perm = shadow_permutation(config.seed, m);
    let limit = config.max_shadow_models.filter(|&s| s < m - 1);
    let outcomes: Vec<CellOutcome> = match limit {
        None => {
            let per_canary: Vec<Vec<CellOutcome>> = (0..n)
                .into_par_iter()
                .map(|canary| score_canary_loo(&features, mask, m, canary, config))
                .collect();
            let mut columns: Vec<_> = per_canary.into_iter().map(Vec::into_iter).collect();
            (0..m)
                .flat_map(|_| columns.iter_mut().map(|c| c.next().unwrap()).collect::<Vec<_>>())
                .collect()
        }
        Some(_) => {
            let shadows: Vec<Vec<usize>> =
                (0..m).map(|target| shadow_rows(&perm, target, limit)).collect();
            (0..m * n)
                .into_par_iter()
                .map(|i| {
                    let (target, canary) = (i / n, i % n);
                    score_cell(&features, mask, &shadows[target], target, canary, config)
                })
                .collect()
        }
    };

    let mut scores = Vec::with_capacity(m * n);
    let mut flags = Vec::with_capacity(m * n);
    let mut fallbacks = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        scores.push(outcome.score);
        flags.push(outcome.flag);
        if let Some(reason) = outcome.reason {
            fallbacks.push(Fallback {
                target: i / n,
                canary: i % n,
                flag: outcome.flag,
                reason,
            });
        }
    }
    if !fallbacks.is_empty() {
        log::warn!(
            "{}: {} of {} cells fell back ({} uninformative)",
            config.label(),
            fallbacks.len(),
            m * n,
            fallbacks
                .iter()
                .filter(|f| f.flag == FallbackFlag::Uninformative)
                .count()
        );
    }
    Ok(AttackResult {
        models: m,
        canaries: n,
        scores,
        labels: mask.as_slice().to_vec(),
        flags,
        fallbacks,
        config: config.clone(),
    })
}

impl fmt::Display for AttackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::CovRepr;

    fn unit(mean: f64) -> GaussianSpec {
        GaussianSpec::new(vec![mean], CovRepr::Scalar { var: 1.0, dim: 1 }).unwrap()
    }

    #[test]
    fn identical_models_score_zero() {
        let g = unit(0.3);
        for x in [-3.0, 0.0, 0.3, 10.0] {
            assert_eq!(lira_score(&[x], &g, &g).unwrap(), 0.0);
        }
    }

    #[test]
    fn univariate_hand_values() {
        let (g_in, g_out) = (unit(1.0), unit(0.0));
        assert!(lira_score(&[0.5], &g_in, &g_out).unwrap().abs() < 1e-15);
        assert!((lira_score(&[1.0], &g_in, &g_out).unwrap() - 0.5).abs() < 1e-15);
        assert!(lira_score(&[1.0, 2.0], &g_in, &g_out).is_err());
    }

    #[test]
    fn univariate_reduction_rules() {
        let mut cfg = AttackConfig::new(Estimator::Univariate, Pooling::ClassWise);
        assert_eq!(cfg.effective_reduction(8).unwrap(), ReductionSpec::Group(8));
        cfg.reduction = ReductionSpec::MinK(1);
        assert!(matches!(
            cfg.effective_reduction(8),
            Err(Error::ConfigConflict(_))
        ));
        cfg.reduction = ReductionSpec::Group(4);
        assert!(matches!(
            cfg.effective_reduction(8),
            Err(Error::ConfigConflict(_))
        ));
        cfg.estimator = Estimator::Oas;
        assert_eq!(cfg.effective_reduction(8).unwrap(), ReductionSpec::Group(4));
    }

    #[test]
    fn shadow_subset_is_shared_and_sorted() {
        let perm = shadow_permutation(7, 10);
        let a = shadow_rows(&perm, 0, Some(4));
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(!a.contains(&0));
        let all = shadow_rows(&perm, 3, None);
        assert_eq!(all, vec![0, 1, 2, 4, 5, 6, 7, 8, 9]);
        assert_eq!(shadow_rows(&perm, 3, Some(9)), all);
    }

    #[test]
    fn degenerate_canary_falls_back() {
        // Canary 0 is IN only for model 0, so with model 0 as the target the
        // class-wise fit has no IN rows, and neither does the pooled refit.
        let m = 6;
        let data: Vec<f64> = (0..m * 2 * 2).map(|i| ((i * 7) % 5) as f64).collect();
        let tensor = ScoreTensor::new(data, m, 2, 2).unwrap();
        let mut bits = vec![false; m * 2];
        bits[0] = true;
        for model in 0..m {
            bits[model * 2 + 1] = model % 2 == 0;
        }
        let mask = MembershipMask::new(bits, m, 2).unwrap();
        let cfg = AttackConfig::new(Estimator::Independent, Pooling::ClassWise);
        let result = run_attack(&tensor, &mask, &cfg).unwrap();
        assert_eq!(result.flags[0], FallbackFlag::Uninformative);
        assert_eq!(result.score(0, 0), 0.0);
        // Other targets see one IN shadow: class-wise fails, shared works.
        assert_eq!(result.flags[2], FallbackFlag::Pooled);
        assert!(result.score(1, 0).is_finite());
        assert!(result
            .fallbacks
            .iter()
            .any(|f| f.target == 0 && f.canary == 0));
        for (i, flag) in result.flags.iter().enumerate() {
            if *flag == FallbackFlag::None {
                assert!(result.scores[i].is_finite());
            }
        }
    }

    #[test]
    fn downdate_matches_direct_fit() {
        use rand::Rng;
        let (m, n, t) = (16, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..m * n * t).map(|_| rng.random::<f64>() + 2.0).collect();
        let tensor = ScoreTensor::new(data, m, n, t).unwrap();
        let mask = MembershipMask::new((0..m * n).map(|i| (i * 5) % 3 != 0).collect(), m, n).unwrap();
        for est in Estimator::ALL {
            for pooling in [Pooling::ClassWise, Pooling::Shared] {
                let cfg = AttackConfig::new(est, pooling);
                let reduction = cfg.effective_reduction(t).unwrap();
                let features = build_features(&tensor, cfg.transform, reduction).unwrap();
                let fast = run_attack(&tensor, &mask, &cfg).unwrap();
                for target in 0..m {
                    let shadows: Vec<usize> = (0..m).filter(|&r| r != target).collect();
                    for canary in 0..n {
                        let direct = score_cell(&features, &mask, &shadows, target, canary, &cfg);
                        let got = fast.score(target, canary);
                        assert!(
                            (got - direct.score).abs() <= 1e-9 * (1.0 + got.abs()),
                            "{cfg}: {got} vs {}",
                            direct.score
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn config_rejects_too_many_shadows() {
        let mut cfg = AttackConfig::new(Estimator::Oas, Pooling::Shared);
        cfg.max_shadow_models = Some(5);
        assert!(cfg.validate(5, 4).is_err());
        assert!(cfg.validate(6, 4).is_ok());
        cfg.max_shadow_models = Some(0);
        assert!(cfg.validate(6, 4).is_err());
    }
}
