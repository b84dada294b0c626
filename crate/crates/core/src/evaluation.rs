//! ROC analysis at low FPR, covariance-approximation studies and
//! shadow-count sweeps.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, shadow_permutation, AttackConfig};
use crate::data::{MembershipMask, ScoreTensor};
use crate::error::{Error, Result};
use crate::estimators::{estimate_cov, frobenius_error, Estimator};
use crate::linalg;
use crate::report::{fmt_f64, CsvTable};

/// Empirical ROC. Point `i` classifies `score > thresholds[i]` as member;
/// the first point is `(0, 0)` at the maximum score and the last is `(1, 1)`
/// at `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocCurve {
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["threshold", "fpr", "tpr"]);
        for i in 0..self.fpr.len() {
            table.row([
                fmt_f64(self.thresholds[i]),
                fmt_f64(self.fpr[i]),
                fmt_f64(self.tpr[i]),
            ]);
        }
        table
    }
}

pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Validation(format!("score {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation(format!(
            "ROC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![scores[order[0]]];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(if i < order.len() {
            scores[order[i]]
        } else {
            f64::NEG_INFINITY
        });
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        n_pos,
        n_neg,
    })
}

/// TPR of the curve point with the largest FPR not exceeding `fpr_target`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> Result<f64> {
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(Error::Validation(format!(
            "FPR target {fpr_target} outside (0, 1)"
        )));
    }
    // fpr is nondecreasing and starts at 0.
    let idx = curve.fpr.partition_point(|&f| f <= fpr_target);
    Ok(curve.tpr[idx - 1])
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) * 0.5)
        .sum()
}

/// One line of an `eval` report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// `pooled` or `target:<index>`.
    pub scope: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: f64,
    pub fpr_target: f64,
    pub tpr: f64,
}

/// Pooled ROC over every (target, canary) score, plus per-target curves
/// for diagnostics. `groups` assigns each score to a target index.
pub fn evaluate_scores(
    scores: &[f64],
    labels: &[bool],
    groups: &[usize],
    fpr_targets: &[f64],
    per_target: bool,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    let mut push = |scope: String, curve: &RocCurve| -> Result<()> {
        let area = auc(curve);
        for &f in fpr_targets {
            rows.push(EvalRow {
                scope: scope.clone(),
                n_pos: curve.n_pos,
                n_neg: curve.n_neg,
                auc: area,
                fpr_target: f,
                tpr: tpr_at_fpr(curve, f)?,
            });
        }
        Ok(())
    };
    push("pooled".into(), &roc(scores, labels)?)?;
    if per_target {
        let mut targets: Vec<usize> = groups.to_vec();
        targets.sort_unstable();
        targets.dedup();
        for t in targets {
            let (s, l): (Vec<f64>, Vec<bool>) = groups
                .iter()
                .zip(scores.iter().zip(labels))
                .filter(|(g, _)| **g == t)
                .map(|(_, (s, l))| (*s, *l))
                .unzip();
            match roc(&s, &l) {
                Ok(curve) => push(format!("target:{t}"), &curve)?,
                Err(e) => log::debug!("target {t} skipped: {e}"),
            }
        }
    }
    Ok(rows)
}

pub fn eval_rows_to_csv(rows: &[EvalRow]) -> CsvTable {
    let mut table = CsvTable::new(&["scope", "n_pos", "n_neg", "auc", "fpr_target", "tpr"]);
    for r in rows {
        table.row([
            r.scope.clone(),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            fmt_f64(r.auc),
            fmt_f64(r.fpr_target),
            fmt_f64(r.tpr),
        ]);
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    In,
    Out,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::In => "in",
            Class::Out => "out",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeErrorMode {
    /// Ratio per canary, then averaged.
    #[default]
    MeanOfRatios,
    /// Errors averaged first, then one ratio.
    RatioOfMeans,
}

#[derive(Debug, Clone)]
pub struct CovStudyOptions {
    pub grid: Vec<usize>,
    pub gold_count: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub relative_mode: RelativeErrorMode,
}

impl CovStudyOptions {
    pub fn new(grid: Vec<usize>, gold_count: usize, seed: u64) -> Self {
        Self {
            grid,
            gold_count,
            seed,
            estimators: Estimator::ALL.to_vec(),
            relative_mode: RelativeErrorMode::MeanOfRatios,
        }
    }
}

/// Mean Frobenius error to the gold covariance for one (class, estimator,
/// pooling, shadow count). `None` when no canary had enough rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovErrorEntry {
    pub class: Class,
    pub estimator: Estimator,
    pub shared: bool,
    pub shadow_count: usize,
    pub mean_error: Option<f64>,
    pub canaries: usize,
}

/// `(class-wise − shared) / shared` for one (class, estimator, count).
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrorEntry {
    pub class: Class,
    pub estimator: Estimator,
    pub shadow_count: usize,
    pub relative_error: Option<f64>,
    pub canaries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovStudyReport {
    pub grid: Vec<usize>,
    pub errors: Vec<CovErrorEntry>,
    pub relative: Vec<RelativeErrorEntry>,
}

impl CovStudyReport {
    pub fn error(
        &self,
        class: Class,
        estimator: Estimator,
        shared: bool,
        count: usize,
    ) -> Option<f64> {
        self.errors
            .iter()
            .find(|e| {
                e.class == class
                    && e.estimator == estimator
                    && e.shared == shared
                    && e.shadow_count == count
            })
            .and_then(|e| e.mean_error)
    }

    pub fn relative_error(&self, class: Class, estimator: Estimator, count: usize) -> Option<f64> {
        self.relative
            .iter()
            .find(|e| e.class == class && e.estimator == estimator && e.shadow_count == count)
            .and_then(|e| e.relative_error)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&[
            "metric",
            "class",
            "estimator",
            "pooling",
            "shadow_count",
            "value",
            "canaries",
        ]);
        let value = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "NA".into());
        for e in &self.errors {
            table.row([
                "frobenius_error".to_string(),
                e.class.to_string(),
                e.estimator.to_string(),
                if e.shared { "shared" } else { "classwise" }.to_string(),
                e.shadow_count.to_string(),
                value(e.mean_error),
                e.canaries.to_string(),
            ]);
        }
        for e in &self.relative {
            table.row([
                "relative_error".to_string(),
                e.class.to_string(),
                e.estimator.to_string(),
                "classwise_vs_shared".to_string(),
                e.shadow_count.to_string(),
                value(e.relative_error),
                e.canaries.to_string(),
            ]);
        }
        table
    }
}

/// Shared residuals below this error make the relative error undefined.
const RELATIVE_GUARD: f64 = 1e-15;

fn gather_rows(tensor: &ScoreTensor, rows: &[usize], canary: usize) -> DMatrix<f64> {
    let t = tensor.tokens();
    DMatrix::from_fn(rows.len(), t, |i, j| tensor.row(rows[i], canary)[j])
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::center(x, &linalg::column_means(x))
}

/// Per-canary errors, indexed `[class][estimator][grid][shared as usize]`.
type CanaryErrors = Vec<Vec<Vec<[Option<f64>; 2]>>>;

fn study_canary(
    tensor: &ScoreTensor,
    mask: &MembershipMask,
    perm: &[usize],
    canary: usize,
    opts: &CovStudyOptions,
) -> Result<CanaryErrors> {
    let mut out = Vec::with_capacity(2);
    for class in [Class::In, Class::Out] {
        let (own, other): (Vec<usize>, Vec<usize>) = perm
            .iter()
            .copied()
            .partition(|&r| mask.is_member(r, canary) == (class == Class::In));
        let mut per_est = vec![vec![[None, None]; opts.grid.len()]; opts.estimators.len()];
        if own.len() < opts.gold_count {
            out.push(per_est);
            continue;
        }
        let gold = linalg::scatter(&centered(&gather_rows(
            tensor,
            &own[..opts.gold_count],
            canary,
        )));

        for (gi, &s) in opts.grid.iter().enumerate() {
            if s < 2 || s > own.len() {
                continue;
            }
            let own_res = centered(&gather_rows(tensor, &own[..s], canary));
            let pooled = (s <= other.len()).then(|| {
                let other_res = centered(&gather_rows(tensor, &other[..s], canary));
                let mut r = DMatrix::zeros(2 * s, own_res.ncols());
                r.rows_mut(0, s).copy_from(&own_res);
                r.rows_mut(s, s).copy_from(&other_res);
                r
            });
            for (ei, &est) in opts.estimators.iter().enumerate() {
                let (cov, _) = estimate_cov(&own_res, est)?;
                per_est[ei][gi][0] = Some(frobenius_error(&cov.to_dense(), &gold)?);
                if let Some(res) = &pooled {
                    let (cov, _) = estimate_cov(res, est)?;
                    per_est[ei][gi][1] = Some(frobenius_error(&cov.to_dense(), &gold)?);
                }
            }
        }
        out.push(per_est);
    }
    Ok(out)
}

/// Covariance approximation error of each estimator against a full-MLE
/// gold standard fitted on `gold_count` rows of a class, for class-wise and
/// shared fits on the first `s` rows of that class in a seeded permutation.
/// Shared fits add the first `s` rows of the other class. Counts above the
/// available class rows are reported as unavailable.
pub fn covariance_study(
    tensor: &ScoreTensor,
    mask: &MembershipMask,
    canary_subset: &[usize],
    opts: &CovStudyOptions,
) -> Result<CovStudyReport> {
    let (m, n, _) = tensor.dims();
    if opts.gold_count > m || opts.gold_count < 2 {
        return Err(Error::Validation(format!(
            "gold count {} outside [2, {m}]",
            opts.gold_count
        )));
    }
    if let Some(&bad) = canary_subset.iter().find(|&&c| c >= n) {
        return Err(Error::Validation(format!("canary {bad} out of range")));
    }
    let mut canaries = canary_subset.to_vec();
    canaries.sort_unstable();
    canaries.dedup();

    let perm = shadow_permutation(opts.seed, m);
    let per_canary: Vec<CanaryErrors> = canaries
        .par_iter()
        .map(|&c| study_canary(tensor, mask, &perm, c, opts))
        .collect::<Result<_>>()?;

    let mut errors = Vec::new();
    let mut relative = Vec::new();
    for (ci, class) in [Class::In, Class::Out].into_iter().enumerate() {
        for (ei, &estimator) in opts.estimators.iter().enumerate() {
            for (gi, &count) in opts.grid.iter().enumerate() {
                for shared in [false, true] {
                    let vals: Vec<f64> = per_canary
                        .iter()
                        .filter_map(|c| c[ci][ei][gi][shared as usize])
                        .collect();
                    errors.push(CovErrorEntry {
                        class,
                        estimator,
                        shared,
                        shadow_count: count,
                        mean_error: mean(&vals),
                        canaries: vals.len(),
                    });
                }
                let pairs: Vec<(f64, f64)> = per_canary
                    .iter()
                    .filter_map(|c| match c[ci][ei][gi] {
                        [Some(cw), Some(sh)] => Some((cw, sh)),
                        _ => None,
                    })
                    .collect();
                let value = match opts.relative_mode {
                    RelativeErrorMode::MeanOfRatios => {
                        let ratios: Vec<f64> = pairs
                            .iter()
                            .filter(|(_, sh)| *sh >= RELATIVE_GUARD)
                            .map(|(cw, sh)| (cw - sh) / sh)
                            .collect();
                        mean(&ratios)
                    }
                    RelativeErrorMode::RatioOfMeans => {
                        let cw = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
                        let sh = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
                        match (cw, sh) {
                            (Some(cw), Some(sh)) if sh >= RELATIVE_GUARD => Some((cw - sh) / sh),
                            _ => None,
                        }
                    }
                };
                relative.push(RelativeErrorEntry {
                    class,
                    estimator,
                    shadow_count: count,
                    relative_error: value,
                    canaries: pairs.len(),
                });
            }
        }
    }
    Ok(CovStudyReport {
        grid: opts.grid.clone(),
        errors,
        relative,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: String,
    pub shadow_count: usize,
    pub fpr_target: f64,
    pub tpr: f64,
    pub auc: f64,
    pub fallbacks: usize,
}

/// Reruns each attack with `max_shadow_models = s` for every grid value and
/// reports pooled TPR at each FPR target.
pub fn sweep_shadow_models(
    tensor: &ScoreTensor,
    mask: &MembershipMask,
    configs: &[AttackConfig],
    grid: &[usize],
    fpr_targets: &[f64],
) -> Result<Vec<SweepRow>> {
    let m = tensor.models();
    if let Some(&bad) = grid.iter().find(|&&s| s == 0 || s > m - 1) {
        return Err(Error::Validation(format!(
            "shadow count {bad} outside [1, {}]",
            m - 1
        )));
    }
    let mut rows = Vec::new();
    for config in configs {
        for &s in grid {
            let cfg = AttackConfig {
                max_shadow_models: Some(s),
                ..config.clone()
            };
            let result = run_attack(tensor, mask, &cfg)?;
            let curve = roc(&result.scores, &result.labels)?;
            let area = auc(&curve);
            for &f in fpr_targets {
                rows.push(SweepRow {
                    config: config.label(),
                    shadow_count: s,
                    fpr_target: f,
                    tpr: tpr_at_fpr(&curve, f)?,
                    auc: area,
                    fallbacks: result.fallbacks.len(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "config",
        "shadow_count",
        "fpr_target",
        "tpr",
        "auc",
        "fallbacks",
    ]);
    for r in rows {
        table.row([
            r.config.clone(),
            r.shadow_count.to_string(),
            fmt_f64(r.fpr_target),
            fmt_f64(r.tpr),
            fmt_f64(r.auc),
            r.fallbacks.to_string(),
        ]);
    }
    table
}
