use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use manifold_diffusion_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = mfd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_lifecycle_and_theory_calls() {
    let mut model = ptr::null_mut();
    let st = unsafe {
        mfd_model_new(
            64,
            32,
            0.5,
            1.0,
            1.0,
            c("linear").as_ptr(),
            c("isometry").as_ptr(),
            1,
            &mut model,
        )
    };
    assert_eq!(st, MfdStatus::Ok);
    let (mut d, mut p) = (0, 0);
    assert_eq!(
        unsafe { mfd_model_dims(model, &mut d, &mut p) },
        MfdStatus::Ok
    );
    assert_eq!((d, p), (64, 32));

    let (mut fin, mut asy) = (0.0, 0.0);
    assert_eq!(
        unsafe { mfd_speciation_time(model, &mut fin, &mut asy) },
        MfdStatus::Ok
    );
    assert!((fin - asy).abs() < 1e-10);

    let mut tc = 0.0;
    let mut method = MfdCollapseMethod::GlmGeneral;
    assert_eq!(
        unsafe { mfd_collapse_time(model, 0.5, &mut tc, &mut method) },
        MfdStatus::Ok
    );
    assert_eq!(method, MfdCollapseMethod::LinearIsometryClosedForm);
    let mut direct = 0.0;
    assert_eq!(
        unsafe { mfd_collapse_time_linear_isometry(0.5, 0.5, &mut direct) },
        MfdStatus::Ok
    );
    assert_eq!(tc, direct);
    unsafe { mfd_model_free(model) };
    unsafe { mfd_model_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    let st = unsafe {
        mfd_model_new(
            4,
            8,
            0.5,
            1.0,
            1.0,
            c("tanh").as_ptr(),
            c("gaussian").as_ptr(),
            0,
            &mut model,
        )
    };
    assert_eq!(st, MfdStatus::InvalidParameter);
    assert!(model.is_null());
    assert!(last_error().contains("beta"));

    let st = unsafe {
        mfd_model_new(
            4,
            2,
            0.5,
            1.0,
            1.0,
            c("softplus").as_ptr(),
            c("gaussian").as_ptr(),
            0,
            &mut model,
        )
    };
    assert_eq!(st, MfdStatus::InvalidParameter);
    assert!(last_error().contains("softplus"));

    let st = unsafe {
        mfd_model_new(
            4,
            2,
            0.5,
            1.0,
            1.0,
            ptr::null(),
            c("gaussian").as_ptr(),
            0,
            &mut model,
        )
    };
    assert_eq!(st, MfdStatus::InvalidArgument);

    let mut tc = 0.0;
    assert_eq!(
        unsafe { mfd_collapse_time_linear_isometry(1.0, 1.5, &mut tc) },
        MfdStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { mfd_collapse_time_linear_rmt(1.0, 0.5, ptr::null_mut()) },
        MfdStatus::InvalidArgument
    );

    unsafe {
        mfd_model_new(
            4,
            2,
            0.5,
            1.0,
            1.0,
            c("relu").as_ptr(),
            c("gaussian").as_ptr(),
            0,
            &mut model,
        )
    };
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(
        unsafe { mfd_speciation_time(model, &mut a, &mut b) },
        MfdStatus::InvalidParameter
    );
    unsafe { mfd_model_free(model) };
}

#[test]
fn dataset_and_score() {
    let mut model = ptr::null_mut();
    unsafe {
        mfd_model_new(
            6,
            3,
            0.5,
            1.0,
            1.0,
            c("tanh").as_ptr(),
            c("gaussian_iid").as_ptr(),
            2,
            &mut model,
        )
    };
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { mfd_dataset_sample(model, 20, 3, &mut ds) },
        MfdStatus::Ok
    );
    let mut n = 0;
    unsafe { mfd_dataset_len(ds, &mut n) };
    assert_eq!(n, 20);
    let mut x = vec![0.0; 6];
    assert_eq!(
        unsafe { mfd_dataset_point(ds, 0, x.as_mut_ptr(), 6) },
        MfdStatus::Ok
    );
    assert_eq!(
        unsafe { mfd_dataset_point(ds, 20, x.as_mut_ptr(), 6) },
        MfdStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { mfd_dataset_point(ds, 0, x.as_mut_ptr(), 5) },
        MfdStatus::InvalidArgument
    );

    let mut g = vec![0.0; 6];
    let mut log_norm = 0.0;
    assert_eq!(
        unsafe { mfd_empirical_score(ds, x.as_ptr(), 0.3, g.as_mut_ptr(), 6, &mut log_norm) },
        MfdStatus::Ok
    );
    assert!(log_norm.is_finite() && g.iter().all(|v| v.is_finite()));
    assert_eq!(
        unsafe { mfd_empirical_score(ds, x.as_ptr(), 0.0, g.as_mut_ptr(), 6, &mut log_norm) },
        MfdStatus::InvalidParameter
    );
    unsafe { mfd_dataset_free(ds) };
    unsafe { mfd_model_free(model) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(mfd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compiles and runs a C program against the generated header and the static
/// library, when a C compiler is available.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("manifold_diffusion.h").exists());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmanifold_diffusion_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "manifold_diffusion.h"
int main(void) {
    double tc = 0.0;
    if (mfd_collapse_time_linear_isometry(1.0, 1.0, &tc) != MFD_STATUS_OK) return 1;
    if (fabs(tc - 0.5 * log(1.0 + 1.0 / (exp(2.0) - 1.0))) > 1e-14) return 2;
    MfdModel *m = NULL;
    if (mfd_model_new(10, 20, 0.5, 1.0, 1.0, "linear", "gaussian", 0, &m) != MFD_STATUS_INVALID_PARAMETER) return 3;
    if (m != NULL || mfd_last_error() == NULL) return 4;
    printf("%.12f\n", tc);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status.code()
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        "0.072706728934"
    );
}
