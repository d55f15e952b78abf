use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use amp_lab_ffi::*;

fn last_error() -> String {
    let p = amp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sparse_model() -> *mut AmpModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { amp_model_new_sparse(60, 40, 8, 0.5, 3, 0, &mut m) }, AmpStatus::Ok);
    assert!(amp_last_error_message().is_null());
    m
}

#[test]
fn model_roundtrip() {
    let m = sparse_model();
    let (mut n, mut p, mut k) = (0, 0, 0);
    unsafe {
        assert_eq!(amp_model_dims(m, &mut n, &mut p, &mut k), AmpStatus::Ok);
        assert_eq!((n, p, k), (60, 40, 8));
        let mut sig = vec![0.0; 40];
        assert_eq!(amp_model_copy_signal(m, sig.as_mut_ptr(), 40), AmpStatus::Ok);
        assert_eq!(sig.iter().filter(|v| **v != 0.0).count(), 8);
        assert_eq!(amp_model_copy_signal(m, sig.as_mut_ptr(), 39), AmpStatus::DimensionMismatch);
        assert!(last_error().contains("39"));
        amp_model_free(m);
        amp_model_free(ptr::null_mut());
    }
}

#[test]
fn run_and_state_evolution() {
    let m = sparse_model();
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(amp_run(m, AmpMode::Sparse, 0.0, 6, &mut run), AmpStatus::Ok);
        let mut t_max = 0;
        assert_eq!(amp_run_t_max(run, &mut t_max), AmpStatus::Ok);
        assert_eq!(t_max, 6);
        let (mut risk, mut g) = (0.0, 0.0);
        assert_eq!(amp_run_norms(run, 1, &mut risk, &mut g, ptr::null_mut()), AmpStatus::Ok);
        let (mut v, mut def) = (0.0, -1);
        assert_eq!(amp_run_param(run, 1, &mut v, &mut def), AmpStatus::Ok);
        assert_eq!(def, 0);
        assert_eq!(amp_run_param(run, 2, &mut v, &mut def), AmpStatus::Ok);
        assert!(def == 1 && v > 0.0);
        assert_eq!(amp_run_norms(run, 7, &mut risk, ptr::null_mut(), ptr::null_mut()), AmpStatus::OutOfRange);

        let mut worst = f64::NAN;
        let mut steps = 0;
        assert_eq!(amp_run_decomp_check(run, 1, &mut worst, &mut steps), AmpStatus::Ok);
        assert_eq!(steps, 6);
        assert!(worst < 1e-10, "{worst}");

        let mut se = ptr::null_mut();
        assert_eq!(amp_se_run(m, AmpMode::Sparse, 0.0, 6, &mut se), AmpStatus::Ok);
        let (mut gs, mut al) = (0.0, 0.0);
        assert_eq!(amp_se_values(se, 1, &mut gs, &mut al), AmpStatus::Ok);
        assert!((gs - g).abs() < 1e-12);
        assert_eq!(amp_se_values(se, 7, &mut gs, &mut al), AmpStatus::Ok);
        assert!(al.is_nan());
        assert_eq!(amp_se_values(se, 0, &mut gs, &mut al), AmpStatus::OutOfRange);
        amp_se_free(se);
        amp_run_free(run);
        amp_model_free(m);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(amp_model_new_sparse(60, 40, 0, 0.5, 0, 0, &mut m), AmpStatus::InvalidSparsity);
        assert!(m.is_null());
        assert_eq!(amp_model_new_robust(60, 40, 1.5, 0, 0, &mut m), AmpStatus::InvalidFraction);
        assert_eq!(amp_model_new_sparse(60, 40, 4, 0.5, 0, 0, ptr::null_mut()), AmpStatus::NullPointer);
        assert!(last_error().contains("out_model"));
        assert_eq!(amp_run(ptr::null(), AmpMode::Sparse, 0.0, 3, &mut ptr::null_mut()), AmpStatus::NullPointer);
        let bad = CString::new("mode = \"robust\"\nn = 10\np = 20\n").unwrap();
        assert_eq!(amp_model_from_config(bad.as_ptr(), 0, &mut m), AmpStatus::Config);
        let good = CString::new("mode = \"robust\"\nn = 50\np = 20\n").unwrap();
        assert_eq!(amp_model_from_config(good.as_ptr(), 0, &mut m), AmpStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(amp_run(m, AmpMode::Robust, -1.0, 0, &mut run), AmpStatus::InvalidParameter);
        amp_model_free(m);
        let mut h = 0.0;
        assert_eq!(amp_h_value(AmpHFamily::RobustH2, 1.0, &mut h), AmpStatus::Ok);
        assert!(h > 0.02 && h < 1.0);
        assert_eq!(amp_h_value(AmpHFamily::LassoH1, -1.0, &mut h), AmpStatus::InvalidParameter);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(amp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_lists_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/amp_lab.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    for t in ["typedef struct AmpModel AmpModel;", "AMP_STATUS_PANIC = 15"] {
        assert!(header.contains(t), "{t}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "amp_lab.h"

int main(void) {
    AmpModel *m = NULL;
    AmpRun *run = NULL;
    double risk = 0.0;
    if (amp_model_new_robust(80, 40, 0.05, 1, 0, &m) != AMP_STATUS_OK) return 2;
    if (amp_run(m, AMP_MODE_ROBUST, 0.0, 4, &run) != AMP_STATUS_OK) return 3;
    if (amp_run_norms(run, 4, &risk, NULL, NULL) != AMP_STATUS_OK) return 4;
    if (amp_model_new_sparse(10, 5, 0, 0.5, 0, 0, &m) != AMP_STATUS_INVALID_SPARSITY) return 5;
    printf("risk %.6f\n%s\n", risk, amp_last_error_message());
    amp_run_free(run);
    return 0;
}
"#;

/// Builds and runs a C program against the static library and header.
#[test]
fn c_program_links() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("cc not found; C link check not run");
        return;
    }
    // target/<profile>/deps/<test exe> → target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libamp_lab_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = dir.join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("risk "), "{text}");
    assert!(text.contains("sparsity"), "{text}");
}
