use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use transfit_ffi::*;

fn last_error() -> String {
    let p = tf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn breast() -> *mut TfDataset {
    let path = CString::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/breast_cosmesis.csv")).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { tf_dataset_read(path.as_ptr(), &mut ds) }, TfStatus::Ok);
    ds
}

#[test]
fn fit_breast_cosmesis_through_the_c_abi() {
    let ds = breast();
    unsafe {
        assert_eq!(tf_dataset_len(ds), 94);
        assert_eq!(tf_dataset_dim(ds), 1);
        let mut fit = ptr::null_mut();
        assert_eq!(tf_fit(ds, 0.0, 0, &mut fit), TfStatus::Ok);
        assert!(tf_fit_converged(fit));
        assert_eq!(tf_fit_dim(fit), 1);
        let mut beta = [0.0];
        let mut se = [0.0];
        assert_eq!(tf_fit_beta(fit, beta.as_mut_ptr(), 1), TfStatus::Ok);
        assert_eq!(tf_fit_std_errors(fit, se.as_mut_ptr(), 1), TfStatus::Ok);
        assert!((0.82..=1.02).contains(&beta[0]), "{}", beta[0]);
        assert!(se[0] > 0.0);
        assert!(tf_fit_lambda(fit) > 0.0);
        assert!(tf_fit_penloglik(fit).is_finite());

        let t = [5.0, 10.0, 20.0, 40.0];
        let mut phi = [0.0; 4];
        assert_eq!(tf_fit_phi(fit, t.as_ptr(), 4, phi.as_mut_ptr()), TfStatus::Ok);
        assert!(phi.windows(2).all(|w| w[0] <= w[1] + 1e-12));

        let json = tf_fit_to_json(fit);
        assert!(!json.is_null());
        let parsed: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert!((parsed["theta"]["beta"][0].as_f64().unwrap() - beta[0]).abs() < 1e-12);
        tf_string_free(json);

        tf_fit_free(fit);
        tf_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        let bad = CString::new("status,left,right,z\nX,1,2,0\n").unwrap();
        let status = tf_dataset_parse_csv(bad.as_ptr(), &mut ds);
        assert!(matches!(status, TfStatus::Parse | TfStatus::InvalidData), "{status:?}");
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(tf_dataset_parse_csv(ptr::null(), &mut ds), TfStatus::NullPointer);
        assert_eq!(tf_dataset_simulate(4, 0.0, 10, 1, &mut ds), TfStatus::InvalidArgument);
        assert!(last_error().contains("config"));

        let good = breast();
        let mut fit = ptr::null_mut();
        assert_eq!(tf_fit(good, -1.0, 0, &mut fit), TfStatus::InvalidArgument);
        assert!(fit.is_null());
        assert_eq!(tf_fit(ptr::null(), 0.0, 0, &mut fit), TfStatus::NullPointer);

        assert_eq!(tf_fit(good, 0.0, 0, &mut fit), TfStatus::Ok);
        assert!(tf_last_error().is_null());
        let mut small = [0.0; 0];
        assert_eq!(tf_fit_beta(fit, small.as_mut_ptr(), 0), TfStatus::BufferTooSmall);
        let nan = [f64::NAN];
        let mut out = [0.0];
        assert_eq!(tf_fit_phi(fit, nan.as_ptr(), 1, out.as_mut_ptr()), TfStatus::InvalidArgument);
        tf_fit_free(fit);
        tf_dataset_free(good);

        // null handles are tolerated by the accessors and destructors
        assert_eq!(tf_dataset_len(ptr::null()), 0);
        assert!(tf_fit_lambda(ptr::null()).is_nan());
        assert!(!tf_fit_converged(ptr::null()));
        tf_fit_free(ptr::null_mut());
        tf_dataset_free(ptr::null_mut());
        tf_string_free(ptr::null_mut());
    }
}

#[test]
fn simulation_is_deterministic_across_the_boundary() {
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(tf_dataset_simulate(1, 0.0, 100, 7, &mut a), TfStatus::Ok);
        assert_eq!(tf_dataset_simulate(1, 0.0, 100, 7, &mut b), TfStatus::Ok);
        assert_eq!(tf_dataset_len(a), 100);
        assert_eq!(tf_dataset_dim(a), 2);
        let (mut fa, mut fb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(tf_fit(a, 0.0, 5, &mut fa), TfStatus::Ok);
        assert_eq!(tf_fit(b, 0.0, 5, &mut fb), TfStatus::Ok);
        let (mut x, mut y) = ([0.0; 2], [0.0; 2]);
        tf_fit_beta(fa, x.as_mut_ptr(), 2);
        tf_fit_beta(fb, y.as_mut_ptr(), 2);
        assert_eq!(x, y);
        tf_fit_free(fa);
        tf_fit_free(fb);
        tf_dataset_free(a);
        tf_dataset_free(b);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(tf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/transfit.h");
    let text = std::fs::read_to_string(&header).expect("header is generated by the build script");
    for name in ["tf_fit", "tf_dataset_read", "tf_last_error", "TfDataset", "TF_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"transfit.h\"\nint main(void) { TfDataset *d = 0; (void)d; return TF_STATUS_OK; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found; skipping the compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
