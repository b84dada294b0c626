//! Per-token score transforms and length reductions applied before fitting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the logit.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformSpec {
    #[default]
    Identity,
    Negate,
    /// Per-token NLL `l` to `log(p) - log(1 - p)` with `p = exp(-l)`.
    LogitFromNll,
}

impl TransformSpec {
    pub fn is_identity(self) -> bool {
        self == TransformSpec::Identity
    }

    pub fn apply_one(self, score: f64) -> Result<f64> {
        match self {
            TransformSpec::Identity => Ok(score),
            TransformSpec::Negate => Ok(-score),
            TransformSpec::LogitFromNll => {
                if !(score > 0.0) {
                    return Err(Error::Domain(format!(
                        "logit transform needs a positive NLL, got {score}"
                    )));
                }
                let p = (-score).exp().clamp(P_CLAMP, 1.0 - P_CLAMP);
                Ok(p.ln() - (-p).ln_1p())
            }
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TransformSpec::Identity),
            "negate" => Ok(TransformSpec::Negate),
            "logit" | "logit_from_nll" => Ok(TransformSpec::LogitFromNll),
            other => Err(Error::Validation(format!("unknown transform {other:?}"))),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformSpec::Identity => "identity",
            TransformSpec::Negate => "negate",
            TransformSpec::LogitFromNll => "logit",
        })
    }
}

pub fn apply_transform(scores: &[f64], spec: TransformSpec) -> Result<Vec<f64>> {
    scores.iter().map(|&s| spec.apply_one(s)).collect()
}

/// Mean of each `chunk`-sized block; the last block may be short.
pub fn reduce_group(scores: &[f64], chunk: usize) -> Result<Vec<f64>> {
    if chunk < 1 || chunk > scores.len() {
        return Err(Error::Validation(format!(
            "group size {chunk} outside [1, {}]",
            scores.len()
        )));
    }
    Ok(scores
        .chunks(chunk)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    MinK,
    MaxK,
}

/// The `k` smallest scores ascending, or the `k` largest descending.
pub fn reduce_order_stats(scores: &[f64], k: usize, kind: OrderKind) -> Result<Vec<f64>> {
    if k < 1 || k > scores.len() {
        return Err(Error::Validation(format!(
            "k = {k} outside [1, {}]",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    match kind {
        OrderKind::MinK => sorted.sort_by(f64::total_cmp),
        OrderKind::MaxK => sorted.sort_by(|a, b| b.total_cmp(a)),
    }
    sorted.truncate(k);
    Ok(sorted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum ReductionSpec {
    #[default]
    None,
    Group(usize),
    MinK(usize),
    MaxK(usize),
}

impl ReductionSpec {
    /// Parses the CLI pair `--reduce {none,group,min,max} --reduce-param K`.
    pub fn from_parts(kind: &str, param: Option<usize>) -> Result<Self> {
        let need = |p: Option<usize>| {
            p.ok_or_else(|| Error::Validation(format!("--reduce {kind} needs --reduce-param")))
        };
        match kind {
            "none" => Ok(ReductionSpec::None),
            "group" => Ok(ReductionSpec::Group(need(param)?)),
            "min" | "min_k" => Ok(ReductionSpec::MinK(need(param)?)),
            "max" | "max_k" => Ok(ReductionSpec::MaxK(need(param)?)),
            other => Err(Error::Validation(format!("unknown reduction {other:?}"))),
        }
    }

    pub fn validate(self, tokens: usize) -> Result<()> {
        match self {
            ReductionSpec::None => Ok(()),
            ReductionSpec::Group(0) | ReductionSpec::MinK(0) | ReductionSpec::MaxK(0) => Err(
                Error::Validation("reduction parameter must be at least 1".into()),
            ),
            ReductionSpec::Group(c) if c > tokens => Err(Error::Validation(format!(
                "group size {c} exceeds sequence length {tokens}"
            ))),
            ReductionSpec::MinK(k) | ReductionSpec::MaxK(k) if k > tokens => {
                Err(Error::Validation(format!(
                    "k = {k} exceeds sequence length {tokens}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Feature dimension produced from a length-`tokens` sequence.
    pub fn output_dim(self, tokens: usize) -> usize {
        match self {
            ReductionSpec::None => tokens,
            ReductionSpec::Group(c) => tokens.div_ceil(c.max(1)),
            ReductionSpec::MinK(k) | ReductionSpec::MaxK(k) => k,
        }
    }

    pub fn apply(self, scores: &[f64]) -> Result<Vec<f64>> {
        match self {
            ReductionSpec::None => Ok(scores.to_vec()),
            ReductionSpec::Group(c) => reduce_group(scores, c),
            ReductionSpec::MinK(k) => reduce_order_stats(scores, k, OrderKind::MinK),
            ReductionSpec::MaxK(k) => reduce_order_stats(scores, k, OrderKind::MaxK),
        }
    }
}

impl fmt::Display for ReductionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionSpec::None => f.write_str("none"),
            ReductionSpec::Group(c) => write!(f, "group{c}"),
            ReductionSpec::MinK(k) => write!(f, "min{k}"),
            ReductionSpec::MaxK(k) => write!(f, "max{k}"),
        }
    }
}
