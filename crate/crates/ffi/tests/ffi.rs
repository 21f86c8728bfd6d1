//! Exercises the C ABI from Rust and from a C program built against the
//! generated header.

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use trimem_ffi::*;

const CONFIG: &str = "\
[network]
layer_sizes = 3,6,2

[hebbian]
weight_cap = 1.0

[lifecycle]
day_length = 12
";

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(trimem_last_error()) }.to_string_lossy().into_owned()
}

fn new_system(config: &str, seed: u64) -> *mut TrimemSystem {
    let mut sys = ptr::null_mut();
    let status = unsafe { trimem_system_new(cstr(config).as_ptr(), seed, &mut sys) };
    assert_eq!(status, TrimemStatus::Ok, "{}", last_error());
    assert!(!sys.is_null());
    sys
}

fn tick(sys: *mut TrimemSystem, ctx: &str, x: &[f64], target: u32) -> (TrimemStatus, TrimemTickResult) {
    let mut r = TrimemTickResult::default();
    let c = cstr(ctx);
    let s = unsafe { trimem_tick(sys, c.as_ptr(), x.as_ptr(), x.len(), target, f64::NAN, &mut r) };
    (s, r)
}

fn sample(i: usize) -> ([f64; 3], u32) {
    let t = (i % 2) as u32;
    let x = if t == 0 { [1.0, 0.1, 0.0] } else { [0.0, 0.2, 1.0] };
    (x, t)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(trimem_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn automatic_and_manual_day_closing() {
    let sys = new_system(CONFIG, 1);
    unsafe {
        assert_eq!(trimem_input_dim(sys), 3);
        assert_eq!(trimem_output_dim(sys), 2);
        assert_eq!(trimem_expert_count(sys), 0);
    }
    let mut day = TrimemDayReport::default();
    assert_eq!(unsafe { trimem_last_day(sys, &mut day) }, TrimemStatus::Phase);

    let mut nights = 0;
    for i in 0..12 {
        let (x, t) = sample(i);
        let (s, r) = tick(sys, "a", &x, t);
        assert_eq!(s, TrimemStatus::Ok);
        nights += r.night_ran as u32;
    }
    assert_eq!(nights, 1);
    assert_eq!(unsafe { trimem_last_day(sys, &mut day) }, TrimemStatus::Ok);
    assert_eq!(day.day_index, 0);
    assert_eq!(day.inferences, 12);
    assert!((0.0..=1.0).contains(&day.accuracy));
    assert_eq!(day.stm + day.ltm + day.pm, day.active_count);
    assert_eq!(unsafe { trimem_day_index(sys) }, 1);

    for i in 0..5 {
        let (x, t) = sample(i);
        tick(sys, "b", &x, t);
    }
    assert_eq!(unsafe { trimem_end_day(sys, &mut day) }, TrimemStatus::Ok);
    assert_eq!(day.day_index, 1);
    assert_eq!(day.inferences, 5);
    unsafe {
        assert_eq!(trimem_day_index(sys), 2);
        assert_eq!(trimem_expert_count(sys), 2);
        assert!(trimem_active_count(sys) > 0);
        trimem_system_free(sys);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut sys = ptr::null_mut();
    let s = unsafe { trimem_system_new(cstr("[network]\nwidth = 3\n").as_ptr(), 0, &mut sys) };
    assert_eq!(s, TrimemStatus::Config);
    assert!(sys.is_null());
    assert!(last_error().contains("width"), "{}", last_error());

    let s = unsafe { trimem_system_new(ptr::null(), 0, &mut sys) };
    assert_eq!(s, TrimemStatus::NullPointer);

    let sys = new_system(CONFIG, 2);
    let (s, _) = tick(sys, "a", &[1.0, 2.0], 0);
    assert_eq!(s, TrimemStatus::Shape);
    let (s, _) = tick(sys, "a", &[1.0, 2.0, 3.0], 7);
    assert_eq!(s, TrimemStatus::InvalidArgument);
    let (s, _) = tick(ptr::null_mut(), "a", &[1.0, 2.0, 3.0], 0);
    assert_eq!(s, TrimemStatus::NullPointer);

    let mut small = [0.0; 1];
    let x = [0.5, 0.5, 0.5];
    let s = unsafe { trimem_predict(sys, cstr("a").as_ptr(), x.as_ptr(), 3, small.as_mut_ptr(), 1) };
    assert_eq!(s, TrimemStatus::BufferTooSmall);

    tick(sys, "a", &x, 0);
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(tmp.path().join("mid.ckpt").to_str().unwrap());
    assert_eq!(unsafe { trimem_system_save(sys, path.as_ptr()) }, TrimemStatus::Phase);

    let (s, _) = tick(sys, "a", &x, 0);
    assert_eq!(s, TrimemStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { trimem_system_free(sys) };
    unsafe { trimem_system_free(ptr::null_mut()) };
}

#[test]
fn save_load_and_predict_agree() {
    let sys = new_system(CONFIG, 3);
    for i in 0..30 {
        let (x, t) = sample(i);
        tick(sys, "a", &x, t);
    }
    unsafe { trimem_end_day(sys, ptr::null_mut()) };
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(tmp.path().join("s.ckpt").to_str().unwrap());
    assert_eq!(unsafe { trimem_system_save(sys, path.as_ptr()) }, TrimemStatus::Ok);

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { trimem_system_load(path.as_ptr(), &mut back) }, TrimemStatus::Ok);
    assert_eq!(unsafe { trimem_checksum(sys) }, unsafe { trimem_checksum(back) });

    let x = [1.0, 0.1, 0.0];
    let mut a = [0.0; 2];
    let mut b = [0.0; 2];
    let ctx = cstr("a");
    unsafe {
        assert_eq!(trimem_predict(sys, ctx.as_ptr(), x.as_ptr(), 3, a.as_mut_ptr(), 2), TrimemStatus::Ok);
        assert_eq!(trimem_predict(back, ctx.as_ptr(), x.as_ptr(), 3, b.as_mut_ptr(), 2), TrimemStatus::Ok);
    }
    assert_eq!(a, b);

    for i in 0..7 {
        let (x, t) = sample(i);
        assert_eq!(tick(sys, "a", &x, t), tick(back, "a", &x, t));
    }
    assert_eq!(unsafe { trimem_checksum(sys) }, unsafe { trimem_checksum(back) });

    let bad = cstr(tmp.path().join("missing.ckpt").to_str().unwrap());
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { trimem_system_load(bad.as_ptr(), &mut none) }, TrimemStatus::Io);
    std::fs::write(tmp.path().join("junk.ckpt"), b"junk").unwrap();
    let junk = cstr(tmp.path().join("junk.ckpt").to_str().unwrap());
    assert_eq!(unsafe { trimem_system_load(junk.as_ptr(), &mut none) }, TrimemStatus::Format);
    assert!(none.is_null());
    unsafe {
        trimem_system_free(sys);
        trimem_system_free(back);
    }
}

#[test]
fn forgetting_helper() {
    let a = [0.9, 0.0, 0.5, 0.8];
    let mut per = [0.0; 1];
    let mut mean = f64::NAN;
    let s = unsafe { trimem_forgetting(a.as_ptr(), 2, per.as_mut_ptr(), &mut mean) };
    assert_eq!(s, TrimemStatus::Ok);
    assert!((per[0] - 0.4).abs() < 1e-12);
    assert!((mean - 0.4).abs() < 1e-12);

    let bad = [1.5];
    let s = unsafe { trimem_forgetting(bad.as_ptr(), 1, ptr::null_mut(), &mut mean) };
    assert_eq!(s, TrimemStatus::InvalidArgument);
}

/// Directory holding the test binary, where cargo also places the freshly
/// built static library.
fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_is_current_and_links_from_c() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(manifest.join("include/trimem.h")).unwrap();
    for name in [
        "trimem_system_new",
        "trimem_tick",
        "trimem_end_day",
        "trimem_forgetting",
        "TRIMEM_STATUS_PANIC",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }

    let archive = deps_dir().join("libtrimem_ffi.a");
    assert!(archive.exists(), "static library missing: {}", archive.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let cc = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));

    let run = Command::new(&exe).arg(tmp.path().join("c.ckpt")).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    let expected = format!(
        "version={} inferences=40 day=1 same=1 bad={} null=1",
        env!("CARGO_PKG_VERSION"),
        TrimemStatus::Config as i32
    );
    assert_eq!(stdout.trim(), expected);
}
