use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use userdp_ffi::*;

fn last_error() -> String {
    let p = udp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(udp_version()) }.to_str().unwrap();
    assert_eq!(v, userdp::VERSION);
}

#[test]
fn point_estimate_is_seed_deterministic() {
    let (n, d) = (400usize, 4usize);
    let points: Vec<f64> = (0..n * d).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.5).collect();
    let run = |seed| {
        let rng = udp_rng_new(seed);
        let mut out = vec![f64::NAN; d];
        let mut outcome = UdpOutcome::Garbage2;
        let st = unsafe {
            udp_estimate_points(points.as_ptr(), n, d, 1.0, 0.1, 1.0 / 3.0, 1e-3, UdpEngine::Single, rng, out.as_mut_ptr(), &mut outcome)
        };
        unsafe { udp_rng_free(rng) };
        assert_eq!(st, UdpStatus::Ok);
        (outcome, out)
    };
    let (o1, a) = run(5);
    let (o2, b) = run(5);
    assert_eq!(o1, UdpOutcome::Accepted);
    assert_eq!(o1, o2);
    assert_eq!(a, b);
    assert!(a.iter().all(|x| x.abs() <= 2.5));
}

#[test]
fn invalid_parameters_set_status_and_message() {
    let rng = udp_rng_new(1);
    let points = [0.0; 4];
    let mut out = [0.0; 2];
    let mut outcome = UdpOutcome::Accepted;
    let st = unsafe { udp_estimate_points(points.as_ptr(), 2, 2, 1.0, 0.1, 0.0, 1e-3, UdpEngine::Single, rng, out.as_mut_ptr(), &mut outcome) };
    assert_eq!(st, UdpStatus::InvalidParameter);
    assert!(!last_error().is_empty());
    let st = unsafe { udp_estimate_points(ptr::null(), 2, 2, 1.0, 0.1, 0.3, 1e-3, UdpEngine::Single, rng, out.as_mut_ptr(), &mut outcome) };
    assert_eq!(st, UdpStatus::NullPointer);
    let st = unsafe { udp_estimate_points(points.as_ptr(), 2, 2, 1.0, 0.1, 0.3, 1e-3, UdpEngine::Single, ptr::null_mut(), out.as_mut_ptr(), &mut outcome) };
    assert_eq!(st, UdpStatus::NullPointer);
    unsafe { udp_rng_free(rng) };
}

#[test]
fn user_estimate_through_dataset_handle() {
    let (n, m, d) = (300usize, 4usize, 2usize);
    let data: Vec<f64> = (0..n * m * d).map(|i| ((i * 13 % 17) as f64 / 17.0 - 0.5) * 0.2).collect();
    let ds = unsafe { udp_dataset_new(n, m, d, data.as_ptr()) };
    assert!(!ds.is_null());
    let (mut a, mut b, mut c) = (0, 0, 0);
    assert_eq!(unsafe { udp_dataset_shape(ds, &mut a, &mut b, &mut c) }, UdpStatus::Ok);
    assert_eq!((a, b, c), (n, m, d));
    let rng = udp_rng_new(3);
    let mut out = vec![0.0; d];
    let mut outcome = UdpOutcome::Garbage2;
    let st = unsafe { udp_estimate_user(ds, 1.0, 0.1, 0.5, 1e-3, rng, out.as_mut_ptr(), &mut outcome) };
    assert_eq!(st, UdpStatus::Ok, "{}", last_error());
    assert_ne!(outcome, UdpOutcome::Garbage2);
    unsafe {
        udp_rng_free(rng);
        udp_dataset_free(ds);
    }
    assert!(unsafe { udp_dataset_new(0, 1, 1, data.as_ptr()) }.is_null());
}

#[test]
fn rotation_round_trip() {
    let rot = udp_rotation_new(5, 9);
    assert_eq!(unsafe { udp_rotation_padded_dim(rot) }, 8);
    let v = [1.0, -2.0, 0.5, 3.0, 0.25];
    let mut w = [0.0; 8];
    let mut back = [0.0; 5];
    unsafe {
        assert_eq!(udp_rotation_apply(rot, v.as_ptr(), w.as_mut_ptr()), UdpStatus::Ok);
        assert_eq!(udp_rotation_invert(rot, w.as_ptr(), back.as_mut_ptr()), UdpStatus::Ok);
        udp_rotation_free(rot);
    }
    let nv: f64 = v.iter().map(|x| x * x).sum();
    let nw: f64 = w.iter().map(|x| x * x).sum();
    assert!((nv - nw).abs() < 1e-12);
    v.iter().zip(&back).for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
    assert!(udp_rotation_new(0, 1).is_null());
}

#[test]
fn strong_compose_values() {
    let (mut e, mut d) = (0.0, 0.0);
    assert_eq!(unsafe { udp_strong_compose(0.1, 0.001, 4, 0.001, &mut e, &mut d) }, UdpStatus::Ok);
    let expect = (8.0 * 1000f64.ln()).sqrt() * 0.1 + 0.4 * (0.1f64.exp() - 1.0);
    assert!((e - expect).abs() < 1e-12);
    assert!((d - 0.005).abs() < 1e-15);
    assert_eq!(unsafe { udp_strong_compose(0.1, 0.001, 4, 0.001, ptr::null_mut(), &mut d) }, UdpStatus::NullPointer);
}

/// The generated header must compile as strict C99.
#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"userdp.h\"\n\
         int main(void) {\n\
           UdpRng *r = udp_rng_new(1); double e, d;\n\
           UdpStatus s = udp_strong_compose(0.1, 0.001, 4, 0.001, &e, &d);\n\
           udp_rng_free(r); return s == UDP_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new(cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include]).arg(&src).status().unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    Command::new("cc").arg("--version").output().map(|_| "cc").map_err(|_| ())
}
