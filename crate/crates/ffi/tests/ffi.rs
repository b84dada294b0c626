use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use seqmia_ffi::*;

fn synth_params() -> SqmiSynthParams {
    SqmiSynthParams {
        models: 12,
        canaries: 20,
        tokens: 4,
        cov_model: SqmiCovModel::Ar1,
        param_a: 1.0,
        param_b: 0.8,
        shift: 1.0,
        pattern: SqmiShiftPattern::Alternating,
        in_scale: 0.0,
        seed: 3,
    }
}

fn last_error() -> String {
    let p = sqmi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn synth_attack_and_copy_out() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sqmi_synth(&synth_params(), &mut ds), SqmiStatus::Ok);
        let (mut m, mut n, mut t) = (0, 0, 0);
        assert_eq!(sqmi_dataset_dims(ds, &mut m, &mut n, &mut t), SqmiStatus::Ok);
        assert_eq!((m, n, t), (12, 20, 4));

        let cfg = sqmi_attack_config_default();
        let mut res = ptr::null_mut();
        assert_eq!(sqmi_run_attack(ds, &cfg, &mut res), SqmiStatus::Ok);
        let len = sqmi_result_len(res);
        assert_eq!(len, 240);

        let mut scores = vec![0.0; len];
        let mut labels = vec![0u8; len];
        let mut flags = vec![9u8; len];
        assert_eq!(sqmi_result_copy_scores(res, scores.as_mut_ptr(), len), SqmiStatus::Ok);
        assert_eq!(sqmi_result_copy_labels(res, labels.as_mut_ptr(), len), SqmiStatus::Ok);
        assert_eq!(sqmi_result_copy_flags(res, flags.as_mut_ptr(), len), SqmiStatus::Ok);
        assert!(scores.iter().all(|s| s.is_finite()));
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 120);
        assert!(flags.iter().all(|&f| f <= 2));

        let mut short = vec![0.0; len - 1];
        assert_eq!(
            sqmi_result_copy_scores(res, short.as_mut_ptr(), len - 1),
            SqmiStatus::BufferTooSmall
        );
        assert!(last_error().contains("need 240"));

        let mut area = 0.0;
        assert_eq!(sqmi_auc(scores.as_ptr(), labels.as_ptr(), len, &mut area), SqmiStatus::Ok);
        assert!(area > 0.6, "auc {area}");

        let mut k = 0;
        assert_eq!(sqmi_roc_len(scores.as_ptr(), labels.as_ptr(), len, &mut k), SqmiStatus::Ok);
        let (mut th, mut fpr, mut tpr) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        assert_eq!(
            sqmi_roc(
                scores.as_ptr(),
                labels.as_ptr(),
                len,
                th.as_mut_ptr(),
                fpr.as_mut_ptr(),
                tpr.as_mut_ptr(),
                k
            ),
            SqmiStatus::Ok
        );
        assert_eq!((fpr[0], tpr[0]), (0.0, 0.0));
        assert_eq!((fpr[k - 1], tpr[k - 1]), (1.0, 1.0));
        assert_eq!(th[k - 1], f64::NEG_INFINITY);

        sqmi_result_free(res);
        sqmi_dataset_free(ds);
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.sqmi").to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sqmi_synth(&synth_params(), &mut ds), SqmiStatus::Ok);
        assert_eq!(sqmi_dataset_save(ds, path.as_ptr()), SqmiStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(sqmi_dataset_load(path.as_ptr(), &mut back), SqmiStatus::Ok);

        let cfg = sqmi_attack_config_default();
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(sqmi_run_attack(ds, &cfg, &mut a), SqmiStatus::Ok);
        assert_eq!(sqmi_run_attack(back, &cfg, &mut b), SqmiStatus::Ok);
        let len = sqmi_result_len(a);
        let (mut sa, mut sb) = (vec![0.0; len], vec![0.0; len]);
        sqmi_result_copy_scores(a, sa.as_mut_ptr(), len);
        sqmi_result_copy_scores(b, sb.as_mut_ptr(), len);
        assert_eq!(sa, sb);
        sqmi_result_free(a);
        sqmi_result_free(b);
        sqmi_dataset_free(ds);
        sqmi_dataset_free(back);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sqmi_dataset_load(ptr::null(), &mut ds), SqmiStatus::NullPointer);
        let missing = CString::new("/nonexistent/dir/x.sqmi").unwrap();
        assert_eq!(sqmi_dataset_load(missing.as_ptr(), &mut ds), SqmiStatus::Io);
        assert!(ds.is_null());

        let mut bad = synth_params();
        bad.param_b = 1.5;
        assert_eq!(sqmi_synth(&bad, &mut ds), SqmiStatus::Invalid);
        assert!(last_error().contains("rho"));

        let scores = [1.0, f64::NAN, 0.0, 0.0];
        let mask = [1u8, 0, 0, 1];
        assert_eq!(
            sqmi_dataset_from_arrays(scores.as_ptr(), mask.as_ptr(), 2, 2, 1, &mut ds),
            SqmiStatus::Invalid
        );
        assert!(last_error().contains("non-finite"));
        let mask = [2u8, 0, 0, 1];
        let scores = [1.0, 2.0, 0.0, 0.0];
        assert_eq!(
            sqmi_dataset_from_arrays(scores.as_ptr(), mask.as_ptr(), 2, 2, 1, &mut ds),
            SqmiStatus::Invalid
        );

        let mut out = 0.0;
        let labels = [1u8, 1];
        assert_eq!(sqmi_auc(scores.as_ptr(), labels.as_ptr(), 2, &mut out), SqmiStatus::Invalid);
        let labels = [0u8, 1];
        assert_eq!(
            sqmi_tpr_at_fpr(scores.as_ptr(), labels.as_ptr(), 2, 1.5, &mut out),
            SqmiStatus::Invalid
        );
        assert_eq!(sqmi_tpr_at_fpr(scores.as_ptr(), labels.as_ptr(), 2, 0.5, &mut out), SqmiStatus::Ok);
        assert_eq!(out, 1.0);

        assert_eq!(sqmi_result_len(ptr::null()), 0);
        sqmi_dataset_free(ptr::null_mut());
        sqmi_result_free(ptr::null_mut());
    }
}

#[test]
fn univariate_conflict_is_invalid() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sqmi_synth(&synth_params(), &mut ds), SqmiStatus::Ok);
        let mut cfg = sqmi_attack_config_default();
        cfg.estimator = SqmiEstimator::Univariate;
        cfg.reduction = SqmiReduction::MinK;
        cfg.reduction_param = 2;
        let mut res = ptr::null_mut();
        assert_eq!(sqmi_run_attack(ds, &cfg, &mut res), SqmiStatus::Invalid);
        assert!(res.is_null());
        sqmi_dataset_free(ds);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sqmi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/seqmia.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ SqmiAttackConfig c = sqmi_attack_config_default(); return (int)c.estimator; }}\n"
        ),
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).status() {
        Ok(status) => assert!(status.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler found; skipping header check"),
    }
}
