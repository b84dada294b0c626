//! Score tensors, membership masks, the `.sqmi` container and leave-one-out
//! splitting.
//!
//! Container layout (little-endian):
//!
//! | bytes            | content                                         |
//! |------------------|-------------------------------------------------|
//! | 4                | magic `SQMI`                                    |
//! | 4                | `u32` version (= 1)                             |
//! | 12               | `u32` M, N, T                                   |
//! | 1                | dtype code (0 = float32, 1 = float64)           |
//! | 1                | score kind code                                 |
//! | 2                | zero padding                                    |
//! | M·N·T·width      | scores, model-major, then canary, then token    |
//! | M·N              | mask bytes (0/1), model-major                   |
//! | 4                | `u32` manifest length                           |
//! | len              | UTF-8 JSON manifest                             |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::write_atomic;

pub const MAGIC: &[u8; 4] = b"SQMI";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Per-token scores with dims `[models, canaries, tokens]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    data: Vec<f64>,
    models: usize,
    canaries: usize,
    tokens: usize,
}

impl ScoreTensor {
    pub fn new(data: Vec<f64>, models: usize, canaries: usize, tokens: usize) -> Result<Self> {
        if models < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 models, got {models}"
            )));
        }
        if canaries < 1 {
            return Err(Error::Validation("canary set is empty (N = 0)".into()));
        }
        if tokens < 1 {
            return Err(Error::Validation("sequence length is zero (T = 0)".into()));
        }
        let expected = models * canaries * tokens;
        if data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (model, rest) = (pos / (canaries * tokens), pos % (canaries * tokens));
            return Err(Error::NonFinite {
                model,
                canary: rest / tokens,
                token: rest % tokens,
                value: data[pos],
            });
        }
        Ok(Self {
            data,
            models,
            canaries,
            tokens,
        })
    }

    /// `(M, N, T)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.models, self.canaries, self.tokens)
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn canaries(&self) -> usize {
        self.canaries
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Token scores of canary `canary` under model `model`.
    pub fn row(&self, model: usize, canary: usize) -> &[f64] {
        let start = (model * self.canaries + canary) * self.tokens;
        &self.data[start..start + self.tokens]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Applies `f` to every score, revalidating finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.data.iter().map(|&v| f(v)).collect(),
            self.models,
            self.canaries,
            self.tokens,
        )
    }
}

/// `mask[m][n]` is true when canary `n` was in model `m`'s training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipMask {
    bits: Vec<bool>,
    models: usize,
    canaries: usize,
}

impl MembershipMask {
    pub fn new(bits: Vec<bool>, models: usize, canaries: usize) -> Result<Self> {
        if bits.len() != models * canaries {
            return Err(Error::DimMismatch {
                expected: models * canaries,
                found: bits.len(),
            });
        }
        Ok(Self {
            bits,
            models,
            canaries,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.models, self.canaries)
    }

    pub fn is_member(&self, model: usize, canary: usize) -> bool {
        self.bits[model * self.canaries + canary]
    }

    /// Membership of every canary in model `model`.
    pub fn row(&self, model: usize) -> &[bool] {
        &self.bits[model * self.canaries..(model + 1) * self.canaries]
    }

    /// Number of models that trained on `canary`.
    pub fn member_count(&self, canary: usize) -> usize {
        (0..self.models)
            .filter(|&m| self.is_member(m, canary))
            .count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Warnings for columns that deviate from the balanced half-in design.
    pub fn balance_warnings(&self) -> Vec<String> {
        let (lo, hi) = (self.models / 2, self.models.div_ceil(2));
        let mut warnings = Vec::new();
        let mut imbalanced = 0usize;
        let mut first_imbalanced = None;
        let mut all_in = 0usize;
        let mut all_out = 0usize;
        for n in 0..self.canaries {
            let count = self.member_count(n);
            if count == self.models {
                all_in += 1;
            } else if count == 0 {
                all_out += 1;
            }
            if count < lo || count > hi {
                imbalanced += 1;
                first_imbalanced.get_or_insert((n, count));
            }
        }
        if all_in > 0 {
            warnings.push(format!(
                "no nonmember observations for {all_in} canaries (every model trained on them)"
            ));
        }
        if all_out > 0 {
            warnings.push(format!(
                "no member observations for {all_out} canaries (no model trained on them)"
            ));
        }
        if let Some((n, count)) = first_imbalanced {
            warnings.push(format!(
                "{imbalanced} canaries have imbalanced membership (first: canary {n} is in {count} of {} models)",
                self.models
            ));
        }
        warnings
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::Float32 => 0,
            Dtype::Float64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Float32),
            1 => Ok(Dtype::Float64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    NegLogLikelihood,
    Logit,
    Raw,
}

impl ScoreKind {
    pub fn code(self) -> u8 {
        match self {
            ScoreKind::NegLogLikelihood => 0,
            ScoreKind::Logit => 1,
            ScoreKind::Raw => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ScoreKind::NegLogLikelihood),
            1 => Ok(ScoreKind::Logit),
            2 => Ok(ScoreKind::Raw),
            other => Err(Error::Format(format!("unknown score kind code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanaryKind {
    AverageCase,
    WorstCase,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// `[M, N, T]`.
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub score_kind: ScoreKind,
    pub canary_kind: CanaryKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: String,
}

impl DatasetManifest {
    pub fn new(dims: (usize, usize, usize), dtype: Dtype, score_kind: ScoreKind) -> Self {
        Self {
            version: FORMAT_VERSION,
            dims: [dims.0, dims.1, dims.2],
            dtype,
            score_kind,
            canary_kind: CanaryKind::Synthetic,
            seed: None,
            notes: String::new(),
        }
    }
}

/// A validated (tensor, mask, manifest) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tensor: ScoreTensor,
    pub mask: MembershipMask,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Checks that the three parts agree. A `float32` manifest rounds the
    /// scores to single precision so that saving is lossless.
    pub fn new(
        tensor: ScoreTensor,
        mask: MembershipMask,
        manifest: DatasetManifest,
    ) -> Result<Self> {
        let (m, n, t) = tensor.dims();
        if mask.dims() != (m, n) {
            return Err(Error::Validation(format!(
                "mask dims {:?} do not match tensor dims ({m}, {n})",
                mask.dims()
            )));
        }
        if manifest.dims != [m, n, t] {
            return Err(Error::Validation(format!(
                "manifest dims {:?} do not match tensor dims [{m}, {n}, {t}]",
                manifest.dims
            )));
        }
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let tensor = match manifest.dtype {
            Dtype::Float64 => tensor,
            Dtype::Float32 => tensor.map(|v| v as f32 as f64)?,
        };
        Ok(Self {
            tensor,
            mask,
            manifest,
        })
    }

    pub fn warnings(&self) -> Vec<String> {
        self.mask.balance_warnings()
    }
}

/// Serializes a dataset into the `.sqmi` byte layout.
pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let (m, n, t) = dataset.tensor.dims();
    let dims_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Validation(format!("dimension {v} exceeds u32")))
    };
    let manifest = serde_json::to_vec(&dataset.manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    let width = dataset.manifest.dtype.width();
    let mut out = Vec::with_capacity(HEADER_LEN + m * n * t * width + m * n + 4 + manifest.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dims_u32(m)?.to_le_bytes());
    out.extend_from_slice(&dims_u32(n)?.to_le_bytes());
    out.extend_from_slice(&dims_u32(t)?.to_le_bytes());
    out.push(dataset.manifest.dtype.code());
    out.push(dataset.manifest.score_kind.code());
    out.extend_from_slice(&[0, 0]);
    match dataset.manifest.dtype {
        Dtype::Float32 => {
            for &v in dataset.tensor.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::Float64 => {
            for &v in dataset.tensor.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.extend(dataset.mask.as_slice().iter().map(|&b| b as u8));
    out.extend_from_slice(&dims_u32(manifest.len())?.to_le_bytes());
    out.extend_from_slice(&manifest);
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

/// Parses and validates a `.sqmi` byte buffer.
pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"SQMI\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (m, n, t) = (
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
    );
    let dtype = Dtype::from_code(bytes[20])?;
    let score_kind = ScoreKind::from_code(bytes[21])?;
    if bytes[22] != 0 || bytes[23] != 0 {
        return Err(Error::Format("nonzero header padding".into()));
    }

    let cells = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(t))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let score_bytes = cells * dtype.width();
    let payload_end = HEADER_LEN + score_bytes + m * n + 4;
    if bytes.len() < payload_end {
        return Err(Error::Truncated {
            expected: payload_end,
            found: bytes.len(),
        });
    }
    let manifest_len = read_u32(bytes, payload_end - 4) as usize;
    if bytes.len() != payload_end + manifest_len {
        return Err(Error::Truncated {
            expected: payload_end + manifest_len,
            found: bytes.len(),
        });
    }

    let scores = &bytes[HEADER_LEN..HEADER_LEN + score_bytes];
    let data: Vec<f64> = match dtype {
        Dtype::Float32 => scores
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::Float64 => scores
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let mask_bytes = &bytes[HEADER_LEN + score_bytes..HEADER_LEN + score_bytes + m * n];
    let bits = mask_bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!(
                "mask byte {other} at index {i} is not 0 or 1"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest: DatasetManifest = serde_json::from_slice(&bytes[payload_end..])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.dtype != dtype || manifest.score_kind != score_kind {
        return Err(Error::Format(
            "manifest dtype/score_kind disagree with header codes".into(),
        ));
    }

    let tensor = ScoreTensor::new(data, m, n, t)?;
    let mask = MembershipMask::new(bits, m, n)?;
    Dataset::new(tensor, mask, manifest)
}

/// Loads a `.sqmi` container, or a directory of CSV files (see
/// [`load_csv_dir`]). Membership-balance problems are logged, not rejected.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let dataset = if path.is_dir() {
        load_csv_dir(path)?
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes)?
    };
    for warning in dataset.warnings() {
        log::warn!("{}: {warning}", path.display());
    }
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    // Revalidate: the fields are public and may have been edited after construction.
    let checked = Dataset::new(
        dataset.tensor.clone(),
        dataset.mask.clone(),
        dataset.manifest.clone(),
    )?;
    write_atomic(path.as_ref(), &encode(&checked)?)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Loads a hand-made fixture: one CSV per model (rows = canaries, columns =
/// tokens), files ordered by name, plus `mask.csv` with one row per model.
/// An optional `manifest.json` supplies the remaining metadata.
pub fn load_csv_dir(dir: &Path) -> Result<Dataset> {
    let mut model_files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        if is_csv && path.file_name().is_some_and(|f| f != "mask.csv") {
            model_files.push(path);
        }
    }
    model_files.sort();
    if model_files.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no model CSV files",
            dir.display()
        )));
    }

    let parse = |s: &str, path: &Path| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Csv(format!("{}: cannot parse {s:?}", path.display())))
    };
    let mut data = Vec::new();
    let (mut n, mut t) = (None, None);
    for path in &model_files {
        let rows = read_csv_rows(path)?;
        if *n.get_or_insert(rows.len()) != rows.len() {
            return Err(Error::Validation(format!(
                "{}: has {} canaries, expected {}",
                path.display(),
                rows.len(),
                n.unwrap_or(0)
            )));
        }
        for row in rows {
            if *t.get_or_insert(row.len()) != row.len() {
                return Err(Error::Validation(format!(
                    "{}: ragged row of length {}",
                    path.display(),
                    row.len()
                )));
            }
            for cell in &row {
                data.push(parse(cell, path)?);
            }
        }
    }
    let (m, n, t) = (model_files.len(), n.unwrap_or(0), t.unwrap_or(0));
    let tensor = ScoreTensor::new(data, m, n, t)?;

    let mask_path = dir.join("mask.csv");
    let mask_rows = read_csv_rows(&mask_path)?;
    if mask_rows.len() != m || mask_rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation(format!(
            "{}: expected {m} rows of {n} entries",
            mask_path.display()
        )));
    }
    let bits = mask_rows
        .iter()
        .flatten()
        .map(|c| match c.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Csv(format!(
                "{}: mask entry {other:?} is not 0 or 1",
                mask_path.display()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = MembershipMask::new(bits, m, n)?;

    let manifest_path = dir.join("manifest.json");
    let manifest = if manifest_path.exists() {
        let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?
    } else {
        DatasetManifest::new((m, n, t), Dtype::Float64, ScoreKind::Raw)
    };
    Dataset::new(tensor, mask, manifest)
}

/// One leave-one-out fold: model `target_index` is attacked, every other
/// model acts as a shadow model. Holds views into the full dataset.
#[derive(Debug, Clone)]
pub struct LooSplit<'a> {
    pub target_index: usize,
    tensor: &'a ScoreTensor,
    mask: &'a MembershipMask,
    shadow_rows: Vec<usize>,
}

impl<'a> LooSplit<'a> {
    /// Model indices serving as shadows, ascending.
    pub fn shadow_rows(&self) -> &[usize] {
        &self.shadow_rows
    }

    pub fn target_scores(&self, canary: usize) -> &'a [f64] {
        self.tensor.row(self.target_index, canary)
    }

    /// Scores of canary `canary` under the `i`-th shadow model.
    pub fn shadow_scores(&self, i: usize, canary: usize) -> &'a [f64] {
        self.tensor.row(self.shadow_rows[i], canary)
    }

    pub fn shadow_member(&self, i: usize, canary: usize) -> bool {
        self.mask.is_member(self.shadow_rows[i], canary)
    }

    pub fn target_labels(&self) -> &'a [bool] {
        self.mask.row(self.target_index)
    }

    /// `(IN, OUT)` shadow counts for `canary`.
    pub fn class_counts(&self, canary: usize) -> (usize, usize) {
        let ins = (0..self.shadow_rows.len())
            .filter(|&i| self.shadow_member(i, canary))
            .count();
        (ins, self.shadow_rows.len() - ins)
    }

    /// Canaries with fewer than two IN or two OUT shadow observations.
    pub fn degenerate_canaries(&self) -> Vec<usize> {
        (0..self.tensor.canaries())
            .filter(|&n| {
                let (ins, outs) = self.class_counts(n);
                ins < 2 || outs < 2
            })
            .collect()
    }
}

pub fn split_leave_one_out<'a>(
    tensor: &'a ScoreTensor,
    mask: &'a MembershipMask,
    target_index: usize,
) -> Result<LooSplit<'a>> {
    let m = tensor.models();
    if mask.dims() != (m, tensor.canaries()) {
        return Err(Error::Validation("mask does not match tensor".into()));
    }
    if m < 3 {
        return Err(Error::Validation(format!(
            "leave-one-out needs at least 3 models, got {m}"
        )));
    }
    if target_index >= m {
        return Err(Error::Validation(format!(
            "target index {target_index} out of range for {m} models"
        )));
    }
    Ok(LooSplit {
        target_index,
        tensor,
        mask,
        shadow_rows: (0..m).filter(|&r| r != target_index).collect(),
    })
}
