use std::ffi::{CStr, CString};
use std::ptr;

use nsedit_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut NseMatrix {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { nse_matrix_new(rows, cols, data.as_ptr(), &mut out) },
        NseStatus::Ok
    );
    out
}

fn data(m: *const NseMatrix) -> Vec<f64> {
    let len = unsafe { nse_matrix_rows(m) * nse_matrix_cols(m) };
    let mut buf = vec![0.0; len];
    assert_eq!(
        unsafe { nse_matrix_copy_data(m, buf.as_mut_ptr(), len) },
        NseStatus::Ok
    );
    buf
}

fn last_error() -> String {
    let p = nse_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(nse_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn matrix_round_trip_and_errors() {
    let m = matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(unsafe { (nse_matrix_rows(m), nse_matrix_cols(m)) }, (2, 3));
    assert_eq!(data(m), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let mut small = [0.0; 2];
    assert_eq!(
        unsafe { nse_matrix_copy_data(m, small.as_mut_ptr(), 2) },
        NseStatus::Dimension
    );
    assert!(last_error().contains("buffer"));
    unsafe { nse_matrix_free(m) };

    let mut out = ptr::null_mut();
    let bad = [f64::NAN];
    assert_eq!(
        unsafe { nse_matrix_new(1, 1, bad.as_ptr(), &mut out) },
        NseStatus::NonFinite
    );
    assert!(out.is_null());
    assert_eq!(
        unsafe { nse_matrix_new(1, 1, ptr::null(), ptr::null_mut()) },
        NseStatus::NullPointer
    );
    assert_eq!(unsafe { nse_matrix_rows(ptr::null()) }, 0);
    unsafe { nse_matrix_free(ptr::null_mut()) };

    // Success clears the message.
    let z = matrix(1, 1, &[0.0]);
    assert!(nse_last_error_message().is_null());
    unsafe { nse_matrix_free(z) };
}

#[test]
fn projector_and_alphaedit_preserve_keys() {
    // Preserved keys span e1, e2 in R^3; the null space is e3.
    let k0 = matrix(3, 2, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    let mut proj = ptr::null_mut();
    assert_eq!(
        unsafe { nse_projector_build(k0, 1e-2, NSE_THRESHOLD_ABSOLUTE, &mut proj) },
        NseStatus::Ok
    );
    assert_eq!(unsafe { nse_projector_retained_dim(proj) }, 1);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { nse_projector_matrix(proj, &mut p) }, NseStatus::Ok);
    let pd = data(p);
    for (i, v) in pd.iter().enumerate() {
        let expected = if i == 8 { 1.0 } else { 0.0 };
        assert!((v - expected).abs() < 1e-12, "{pd:?}");
    }

    let w = matrix(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
    let k1 = matrix(3, 1, &[0.0, 1.0, 1.0]);
    let v1 = matrix(2, 1, &[3.0, -1.0]);
    let mut delta = ptr::null_mut();
    assert_eq!(
        unsafe { nse_solve_alphaedit(w, k1, v1, proj, ptr::null(), 1.0, &mut delta) },
        NseStatus::Ok
    );
    let d = data(delta);
    // Columns 0 and 1 (the preserved directions) stay untouched.
    for v in &d[..4] {
        assert!(v.abs() < 1e-12, "{d:?}");
    }
    // Δ = R k1ᵀ P (k1 k1ᵀ P + I)⁻¹ restricted to e3: R / 2.
    // R = V1 - W k1 = (3 - 0.5, -1 - 1.5).
    assert!(
        (d[4] - 1.25).abs() < 1e-12 && (d[5] + 1.25).abs() < 1e-12,
        "{d:?}"
    );

    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { nse_solve_alphaedit(w, k0, v1, proj, ptr::null(), 1.0, &mut bad) },
        NseStatus::Dimension
    );
    let mut unused = ptr::null_mut();
    assert_eq!(
        unsafe { nse_projector_build(k0, 1e-2, 7, &mut unused) },
        NseStatus::InvalidArgument
    );
    assert!(unused.is_null());

    for m in [k0, p, w, k1, v1, delta] {
        unsafe { nse_matrix_free(m) };
    }
    unsafe { nse_projector_free(proj) };
}

#[test]
fn memit_exact_fit_with_full_rank_keys() {
    let w = matrix(1, 2, &[0.0, 0.0]);
    let k1 = matrix(2, 1, &[1.0, 0.0]);
    let v1 = matrix(1, 1, &[2.0]);
    let k0 = matrix(2, 1, &[0.0, 1.0]);
    let mut delta = ptr::null_mut();
    assert_eq!(
        unsafe { nse_solve_memit(w, k1, v1, k0, ptr::null(), 5.0, &mut delta) },
        NseStatus::Ok
    );
    // Orthogonal keys: the edit fits exactly and leaves k0 alone.
    let d = data(delta);
    assert!((d[0] - 2.0).abs() < 1e-12 && d[1].abs() < 1e-12, "{d:?}");
    for m in [w, k1, v1, k0, delta] {
        unsafe { nse_matrix_free(m) };
    }
}

#[test]
fn experiment_round_trip() {
    let cfg = CString::new(
        "d_in = 12\nd_out = 6\npreserved_count = 30\neffective_rank = 7\nbatches = 3\nbatch_size = 2\nmethods = [\"memit\", \"alphaedit\"]\n",
    )
    .unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { nse_experiment_run(cfg.as_ptr(), &mut t) },
        NseStatus::Ok
    );
    assert_eq!(unsafe { nse_trajectory_record_count(t) }, 6);

    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { nse_trajectory_to_string(t, NSE_FORMAT_CSV, &mut s) },
        NseStatus::Ok
    );
    let csv = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { nse_string_free(s) };
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("method,step,update_error,"));

    assert_eq!(
        unsafe { nse_trajectory_summary_to_string(t, NSE_FORMAT_JSON, &mut s) },
        NseStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { nse_string_free(s) };
    assert_eq!(json.lines().count(), 2 + 2);
    assert_eq!(
        unsafe { nse_trajectory_to_string(t, 9, &mut s) },
        NseStatus::InvalidArgument
    );
    unsafe { nse_trajectory_free(t) };

    let bad = CString::new("batches = 0").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { nse_experiment_run(bad.as_ptr(), &mut t) },
        NseStatus::Config
    );
    assert!(last_error().contains("batches"));
    assert_eq!(
        unsafe { nse_experiment_run(ptr::null(), &mut t) },
        NseStatus::NullPointer
    );
}
