use std::ffi::{c_char, CString};
use std::path::Path;
use std::ptr::{null, null_mut};

use humanfield_ffi::*;

fn last_error() -> String {
    let n = unsafe { hf_last_error_message(null_mut(), 0) };
    let mut buf = vec![0u8; n + 1];
    unsafe { hf_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n);
    String::from_utf8(buf).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn toy_body(parts: usize) -> *mut HfBody {
    let mut body = null_mut();
    assert_eq!(unsafe { hf_body_make_toy(parts, 32, 0, &mut body) }, HfStatus::Ok);
    assert!(!body.is_null());
    body
}

#[test]
fn body_counts_pose_and_round_trip() {
    let body = toy_body(16);
    let (mut v, mut j, mut p, mut s) = (0, 0, 0, 0);
    assert_eq!(unsafe { hf_body_counts(body, &mut v, &mut j, &mut p, &mut s) }, HfStatus::Ok);
    assert_eq!((j, p), (24, 16));
    assert!(v > 0);

    let mut rest = vec![0.0; v * 3];
    assert_eq!(unsafe { hf_body_pose_vertices(body, null(), null(), 0, rest.as_mut_ptr()) }, HfStatus::Ok);
    let mut theta = vec![0.0; j * 3];
    theta[1] = 1.0;
    let mut turned = vec![0.0; v * 3];
    assert_eq!(unsafe { hf_body_pose_vertices(body, theta.as_ptr(), null(), 0, turned.as_mut_ptr()) }, HfStatus::Ok);
    assert_eq!(last_error(), "");
    assert_ne!(rest, turned);
    // a rotation of pi is outside the accepted range
    theta[1] = std::f64::consts::PI;
    assert_eq!(unsafe { hf_body_pose_vertices(body, theta.as_ptr(), null(), 0, turned.as_mut_ptr()) }, HfStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(unsafe { hf_body_save(body, cpath(&a).as_ptr()) }, HfStatus::Ok);
    let mut loaded = null_mut();
    assert_eq!(unsafe { hf_body_load(cpath(&a).as_ptr(), &mut loaded) }, HfStatus::Ok);
    assert_eq!(unsafe { hf_body_save(loaded, cpath(&b).as_ptr()) }, HfStatus::Ok);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    unsafe {
        hf_body_free(loaded);
        hf_body_free(body);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut body = null_mut();
    assert_eq!(unsafe { hf_body_make_toy(40, 32, 0, &mut body) }, HfStatus::InvalidArgument);
    assert!(body.is_null());
    assert!(last_error().contains("part_count"), "{}", last_error());

    assert_eq!(unsafe { hf_body_make_toy(2, 32, 0, null_mut()) }, HfStatus::NullPointer);
    assert_eq!(unsafe { hf_body_counts(null(), null_mut(), null_mut(), null_mut(), null_mut()) }, HfStatus::NullPointer);

    let missing = CString::new("/nonexistent/body.json").unwrap();
    assert_eq!(unsafe { hf_body_load(missing.as_ptr(), &mut body) }, HfStatus::DataError);
    assert!(!last_error().is_empty());

    let mut d = 0.0;
    assert_eq!(unsafe { hf_sdf_to_density(0.0, 0.0, &mut d) }, HfStatus::InvalidArgument);
    assert_eq!(unsafe { hf_sdf_to_density(0.0, 0.1, &mut d) }, HfStatus::Ok);
    assert_eq!(d, 5.0);
    assert_eq!(last_error(), "");

    // errors are kept per thread
    assert_eq!(unsafe { hf_sdf_to_density(0.0, -1.0, &mut d) }, HfStatus::InvalidArgument);
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}

#[test]
fn truncated_error_message_is_terminated() {
    let mut d = 0.0;
    assert_eq!(unsafe { hf_sdf_to_density(0.0, f64::NAN, &mut d) }, HfStatus::InvalidArgument);
    let full = last_error();
    let mut buf = [0x7fu8; 5];
    let n = unsafe { hf_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    assert_eq!(n, full.len());
    assert_eq!(&buf[..4], &full.as_bytes()[..4]);
    assert_eq!(buf[4], 0);
}

#[test]
fn schedule_matches_library() {
    assert_eq!(hf_r1_schedule(0), 300.0);
    assert_eq!(hf_r1_schedule(50_000), 150.0);
    assert_eq!(hf_r1_schedule(10_000_000), 18.5);
}

#[test]
fn render_generator_round_trip() {
    let body = toy_body(2);
    let mut gen = null_mut();
    assert_eq!(unsafe { hf_generator_new(2, true, 0.0, 3, &mut gen) }, HfStatus::Ok);
    let (mut dim, mut alpha) = (0, 0.0);
    assert_eq!(unsafe { hf_generator_latent_dim(gen, &mut dim) }, HfStatus::Ok);
    assert_eq!(unsafe { hf_generator_alpha(gen, &mut alpha) }, HfStatus::Ok);
    assert!((alpha - 0.1).abs() < 1e-6);

    let (w, h) = (8, 16);
    let z: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut rgb = vec![0.0; w * h * 3];
    let mut opacity = vec![0.0; w * h];
    let status =
        unsafe { hf_render(gen, body, null(), null(), 0, z.as_ptr(), z.len(), w, h, 1, rgb.as_mut_ptr(), opacity.as_mut_ptr()) };
    assert_eq!(status, HfStatus::Ok, "{}", last_error());
    assert!(opacity.iter().any(|&o| o > 0.5));
    assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.hfck");
    assert_eq!(unsafe { hf_generator_save(gen, cpath(&path).as_ptr()) }, HfStatus::Ok);
    let mut again = null_mut();
    assert_eq!(unsafe { hf_generator_load(cpath(&path).as_ptr(), &mut again) }, HfStatus::Ok);
    let mut rgb2 = vec![0.0; w * h * 3];
    let status =
        unsafe { hf_render(again, body, null(), null(), 0, z.as_ptr(), z.len(), w, h, 1, rgb2.as_mut_ptr(), null_mut()) };
    assert_eq!(status, HfStatus::Ok);
    assert_eq!(rgb, rgb2);

    // wrong latent length is an argument error, not a crash
    let status = unsafe { hf_render(gen, body, null(), null(), 0, z.as_ptr(), 3, w, h, 1, rgb.as_mut_ptr(), null_mut()) };
    assert_eq!(status, HfStatus::InvalidArgument);
    // a body with a different part count is rejected
    let big = toy_body(16);
    let status = unsafe { hf_render(gen, big, null(), null(), 0, null(), 0, w, h, 1, rgb.as_mut_ptr(), null_mut()) };
    assert_eq!(status, HfStatus::InvalidArgument, "{}", last_error());
    unsafe {
        hf_generator_free(again);
        hf_generator_free(gen);
        hf_body_free(big);
        hf_body_free(body);
        hf_generator_free(null_mut());
        hf_body_free(null_mut());
    }
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/humanfield.h")).unwrap();
    let source = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else { return };
    if !cc.status.success() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("use.c");
    std::fs::write(
        &c,
        "#include \"humanfield.h\"\nint main(void) { HfBody *b = 0; return hf_body_make_toy(2, 32, 0, &b) == HF_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&c)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
