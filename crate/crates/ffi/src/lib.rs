//! C ABI over the `seqmia` toolkit.
//!
//! Datasets and attack results cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns an [`SqmiStatus`]; on failure the message is available from
//! [`sqmi_last_error`] on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use seqmia::attack::{run_attack, AttackConfig, AttackResult};
use seqmia::data::{load_dataset, save_dataset, Dataset, DatasetManifest, Dtype, MembershipMask, ScoreKind, ScoreTensor};
use seqmia::estimators::{Estimator, Pooling};
use seqmia::evaluation::{auc, roc, tpr_at_fpr};
use seqmia::synthetic::{generate, CovModel, ShiftPattern, SyntheticSpec};
use seqmia::transform::{ReductionSpec, TransformSpec};
use seqmia::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad input data, flags or file contents.
    Invalid = 2,
    Io = 3,
    /// Numerical failure during a fit.
    Degenerate = 4,
    /// Output buffer shorter than required.
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiEstimator {
    Univariate = 0,
    Independent = 1,
    Oas = 2,
    Full = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiPooling {
    ClassWise = 0,
    Shared = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiReduction {
    None = 0,
    Group = 1,
    MinK = 2,
    MaxK = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiTransform {
    Identity = 0,
    Negate = 1,
    Logit = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiCovModel {
    Isotropic = 0,
    DiagonalRandom = 1,
    Dense = 2,
    Ar1 = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqmiShiftPattern {
    Constant = 0,
    Alternating = 1,
    Random = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SqmiAttackConfig {
    pub estimator: SqmiEstimator,
    pub pooling: SqmiPooling,
    pub reduction: SqmiReduction,
    /// Group size or k; ignored for `None`.
    pub reduction_param: usize,
    pub transform: SqmiTransform,
    /// 0 uses every available shadow model.
    pub max_shadow_models: usize,
    pub seed: u64,
}

/// Parameters of the synthetic generator. `param_a` and `param_b` depend on
/// the covariance model: (sigma2, unused) for isotropic, (low, high) for
/// diagonal, (condition, scale spread) for dense, (sigma2, rho) for AR(1).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SqmiSynthParams {
    pub models: usize,
    pub canaries: usize,
    pub tokens: usize,
    pub cov_model: SqmiCovModel,
    pub param_a: f64,
    pub param_b: f64,
    pub shift: f64,
    pub pattern: SqmiShiftPattern,
    /// Values <= 0 give IN and OUT the same covariance.
    pub in_scale: f64,
    pub seed: u64,
}

pub struct SqmiDataset(Dataset);

pub struct SqmiAttackResult(AttackResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SqmiStatus, msg: impl Into<String>) -> SqmiStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> SqmiStatus {
    let status = match &e {
        Error::Io { .. } => SqmiStatus::Io,
        Error::DegenerateFit(_) => SqmiStatus::Degenerate,
        _ => SqmiStatus::Invalid,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SqmiStatus) -> SqmiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SqmiStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, SqmiStatus> {
    if p.is_null() {
        return Err(fail(SqmiStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(SqmiStatus::Invalid, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SqmiStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SqmiStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize) -> SqmiStatus {
    if dst.is_null() {
        return fail(SqmiStatus::NullPointer, "output buffer is null");
    }
    if capacity < src.len() {
        return fail(
            SqmiStatus::BufferTooSmall,
            format!("buffer holds {capacity}, need {}", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    SqmiStatus::Ok
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            return fail(SqmiStatus::NullPointer, concat!(stringify!($p), " is null"));
        }
    };
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sqmi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sqmi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.sqmi` container or a CSV fixture directory.
#[no_mangle]
pub unsafe extern "C" fn sqmi_dataset_load(path: *const c_char, out: *mut *mut SqmiDataset) -> SqmiStatus {
    guard(|| {
        out_ptr!(out);
        let path = try_ffi!(path_arg(path));
        match load_dataset(path) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SqmiDataset(ds)));
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds a dataset from a row-major `[models, canaries, tokens]` score
/// array and a `[models, canaries]` 0/1 mask. Both arrays are copied.
#[no_mangle]
pub unsafe extern "C" fn sqmi_dataset_from_arrays(
    scores: *const f64,
    mask: *const u8,
    models: usize,
    canaries: usize,
    tokens: usize,
    out: *mut *mut SqmiDataset,
) -> SqmiStatus {
    guard(|| {
        out_ptr!(out);
        let Some(len) = models.checked_mul(canaries).and_then(|x| x.checked_mul(tokens)) else {
            return fail(SqmiStatus::Invalid, "dimensions overflow");
        };
        let scores = try_ffi!(slice_arg(scores, len, "scores"));
        let mask = try_ffi!(slice_arg(mask, models * canaries, "mask"));
        if let Some(b) = mask.iter().find(|&&b| b > 1) {
            return fail(SqmiStatus::Invalid, format!("mask byte {b} is not 0 or 1"));
        }
        let built = ScoreTensor::new(scores.to_vec(), models, canaries, tokens).and_then(|t| {
            let m = MembershipMask::new(mask.iter().map(|&b| b == 1).collect(), models, canaries)?;
            let manifest = DatasetManifest::new((models, canaries, tokens), Dtype::Float64, ScoreKind::Raw);
            Dataset::new(t, m, manifest)
        });
        match built {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SqmiDataset(ds)));
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Generates a synthetic fixture.
#[no_mangle]
pub unsafe extern "C" fn sqmi_synth(params: *const SqmiSynthParams, out: *mut *mut SqmiDataset) -> SqmiStatus {
    guard(|| {
        out_ptr!(params);
        out_ptr!(out);
        let p = *params;
        let cov_model = match p.cov_model {
            SqmiCovModel::Isotropic => CovModel::Isotropic { sigma2: p.param_a },
            SqmiCovModel::DiagonalRandom => CovModel::DiagonalRandom {
                low: p.param_a,
                high: p.param_b,
            },
            SqmiCovModel::Dense => CovModel::Dense {
                condition: p.param_a,
                scale_spread: p.param_b,
            },
            SqmiCovModel::Ar1 => CovModel::Ar1 {
                sigma2: p.param_a,
                rho: p.param_b,
            },
        };
        let mut spec = SyntheticSpec::new(p.models, p.canaries, p.tokens, cov_model);
        spec.shift = p.shift;
        spec.pattern = match p.pattern {
            SqmiShiftPattern::Constant => ShiftPattern::Constant,
            SqmiShiftPattern::Alternating => ShiftPattern::Alternating,
            SqmiShiftPattern::Random => ShiftPattern::Random,
        };
        spec.in_scale = (p.in_scale > 0.0).then_some(p.in_scale);
        spec.seed = p.seed;
        match generate(&spec) {
            Ok((ds, _)) => {
                *out = Box::into_raw(Box::new(SqmiDataset(ds)));
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the dataset as a `.sqmi` container.
#[no_mangle]
pub unsafe extern "C" fn sqmi_dataset_save(ds: *const SqmiDataset, path: *const c_char) -> SqmiStatus {
    guard(|| {
        out_ptr!(ds);
        let path = try_ffi!(path_arg(path));
        match save_dataset(&(*ds).0, path) {
            Ok(()) => SqmiStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn sqmi_dataset_dims(
    ds: *const SqmiDataset,
    models: *mut usize,
    canaries: *mut usize,
    tokens: *mut usize,
) -> SqmiStatus {
    guard(|| {
        out_ptr!(ds);
        out_ptr!(models);
        out_ptr!(canaries);
        out_ptr!(tokens);
        let (m, n, t) = (*ds).0.tensor.dims();
        (*models, *canaries, *tokens) = (m, n, t);
        SqmiStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn sqmi_dataset_free(ds: *mut SqmiDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// OAS estimator, shared pooling, no reduction, identity transform, all
/// shadow models, seed 0.
#[no_mangle]
pub extern "C" fn sqmi_attack_config_default() -> SqmiAttackConfig {
    SqmiAttackConfig {
        estimator: SqmiEstimator::Oas,
        pooling: SqmiPooling::Shared,
        reduction: SqmiReduction::None,
        reduction_param: 0,
        transform: SqmiTransform::Identity,
        max_shadow_models: 0,
        seed: 0,
    }
}

fn to_config(c: &SqmiAttackConfig) -> AttackConfig {
    let estimator = match c.estimator {
        SqmiEstimator::Univariate => Estimator::Univariate,
        SqmiEstimator::Independent => Estimator::Independent,
        SqmiEstimator::Oas => Estimator::Oas,
        SqmiEstimator::Full => Estimator::Full,
    };
    let pooling = match c.pooling {
        SqmiPooling::ClassWise => Pooling::ClassWise,
        SqmiPooling::Shared => Pooling::Shared,
    };
    let mut cfg = AttackConfig::new(estimator, pooling);
    cfg.reduction = match c.reduction {
        SqmiReduction::None => ReductionSpec::None,
        SqmiReduction::Group => ReductionSpec::Group(c.reduction_param),
        SqmiReduction::MinK => ReductionSpec::MinK(c.reduction_param),
        SqmiReduction::MaxK => ReductionSpec::MaxK(c.reduction_param),
    };
    cfg.transform = match c.transform {
        SqmiTransform::Identity => TransformSpec::Identity,
        SqmiTransform::Negate => TransformSpec::Negate,
        SqmiTransform::Logit => TransformSpec::LogitFromNll,
    };
    cfg.max_shadow_models = (c.max_shadow_models > 0).then_some(c.max_shadow_models);
    cfg.seed = c.seed;
    cfg
}

/// Runs the leave-one-out attack. The result holds `models * canaries`
/// cells in (target, canary) row-major order.
#[no_mangle]
pub unsafe extern "C" fn sqmi_run_attack(
    ds: *const SqmiDataset,
    config: *const SqmiAttackConfig,
    out: *mut *mut SqmiAttackResult,
) -> SqmiStatus {
    guard(|| {
        out_ptr!(ds);
        out_ptr!(config);
        out_ptr!(out);
        let ds = &(*ds).0;
        match run_attack(&ds.tensor, &ds.mask, &to_config(&*config)) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(SqmiAttackResult(r)));
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of cells in the result, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sqmi_result_len(r: *const SqmiAttackResult) -> usize {
    if r.is_null() {
        0
    } else {
        (*r).0.scores.len()
    }
}

#[no_mangle]
pub unsafe extern "C" fn sqmi_result_copy_scores(r: *const SqmiAttackResult, buf: *mut f64, capacity: usize) -> SqmiStatus {
    guard(|| {
        out_ptr!(r);
        copy_out(&(*r).0.scores, buf, capacity)
    })
}

/// Membership labels as 0/1 bytes.
#[no_mangle]
pub unsafe extern "C" fn sqmi_result_copy_labels(r: *const SqmiAttackResult, buf: *mut u8, capacity: usize) -> SqmiStatus {
    guard(|| {
        out_ptr!(r);
        let labels: Vec<u8> = (*r).0.labels.iter().map(|&l| l as u8).collect();
        copy_out(&labels, buf, capacity)
    })
}

/// Fallback codes: 0 none, 1 pooled refit, 2 uninformative score.
#[no_mangle]
pub unsafe extern "C" fn sqmi_result_copy_flags(r: *const SqmiAttackResult, buf: *mut u8, capacity: usize) -> SqmiStatus {
    guard(|| {
        out_ptr!(r);
        let flags: Vec<u8> = (*r).0.flags.iter().map(|f| f.code()).collect();
        copy_out(&flags, buf, capacity)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sqmi_result_free(r: *mut SqmiAttackResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

unsafe fn labelled<'a>(scores: *const f64, labels: *const u8, len: usize) -> Result<(&'a [f64], Vec<bool>), SqmiStatus> {
    let s = slice_arg(scores, len, "scores")?;
    let l = slice_arg(labels, len, "labels")?;
    Ok((s, l.iter().map(|&b| b != 0).collect()))
}

/// Area under the ROC curve of `len` scores with 0/1 labels.
#[no_mangle]
pub unsafe extern "C" fn sqmi_auc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> SqmiStatus {
    guard(|| {
        out_ptr!(out);
        let (s, l) = try_ffi!(labelled(scores, labels, len));
        match roc(s, &l) {
            Ok(curve) => {
                *out = auc(&curve);
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Largest TPR whose FPR does not exceed `fpr_target`.
#[no_mangle]
pub unsafe extern "C" fn sqmi_tpr_at_fpr(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    fpr_target: f64,
    out: *mut f64,
) -> SqmiStatus {
    guard(|| {
        out_ptr!(out);
        let (s, l) = try_ffi!(labelled(scores, labels, len));
        match roc(s, &l).and_then(|c| tpr_at_fpr(&c, fpr_target)) {
            Ok(v) => {
                *out = v;
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of points on the ROC curve, for sizing the buffers passed to
/// `sqmi_roc`.
#[no_mangle]
pub unsafe extern "C" fn sqmi_roc_len(scores: *const f64, labels: *const u8, len: usize, out: *mut usize) -> SqmiStatus {
    guard(|| {
        out_ptr!(out);
        let (s, l) = try_ffi!(labelled(scores, labels, len));
        match roc(s, &l) {
            Ok(c) => {
                *out = c.fpr.len();
                SqmiStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the ROC curve into three buffers of `capacity` elements each.
/// The last threshold is negative infinity.
#[no_mangle]
pub unsafe extern "C" fn sqmi_roc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    thresholds: *mut f64,
    fpr: *mut f64,
    tpr: *mut f64,
    capacity: usize,
) -> SqmiStatus {
    guard(|| {
        let (s, l) = try_ffi!(labelled(scores, labels, len));
        let curve = match roc(s, &l) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        for (src, dst) in [(&curve.thresholds, thresholds), (&curve.fpr, fpr), (&curve.tpr, tpr)] {
            let status = copy_out(src, dst, capacity);
            if status != SqmiStatus::Ok {
                return status;
            }
        }
        SqmiStatus::Ok
    })
}
