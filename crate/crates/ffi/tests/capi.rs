use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pgcs::bps::BpsConfig;
use pgcs::trainer::{save_checkpoint, TrainConfig, Trainer};
use pgcs_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pgcs_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn tiny_checkpoint(dir: &std::path::Path) -> PathBuf {
    let cfg = TrainConfig {
        m: 2,
        epochs: 2,
        batches_per_epoch: 2,
        batch_start: 64,
        batch_end: 64,
        bps: BpsConfig {
            num_test_angles: 16,
            window_size: 16,
            ..BpsConfig::default()
        },
        ..TrainConfig::paper()
    };
    let mut t = Trainer::new(cfg).unwrap();
    t.train_epoch().unwrap();
    let path = dir.join("model.bin");
    save_checkpoint(&t.checkpoint(), &path).unwrap();
    path
}

#[test]
fn square_qam_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("q.txt").to_str().unwrap()).unwrap();
    unsafe {
        let mut q = ptr::null_mut();
        assert_eq!(pgcs_constellation_square_qam(6, &mut q), PgcsStatus::Ok);
        assert_eq!(pgcs_constellation_order(q), 64);
        assert_eq!(pgcs_constellation_bits(q), 6);
        assert_eq!(pgcs_constellation_write(q, path.as_ptr()), PgcsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pgcs_constellation_read(path.as_ptr(), &mut back), PgcsStatus::Ok);
        let (mut a, mut b) = (vec![0.0; 64], vec![0.0; 64]);
        let (mut la, mut lb) = (vec![0u32; 64], vec![0u32; 64]);
        assert_eq!(pgcs_constellation_copy(q, a.as_mut_ptr(), ptr::null_mut(), la.as_mut_ptr(), 64), PgcsStatus::Ok);
        assert_eq!(pgcs_constellation_copy(back, b.as_mut_ptr(), ptr::null_mut(), lb.as_mut_ptr(), 64), PgcsStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        pgcs_constellation_free(q);
        pgcs_constellation_free(back);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    unsafe {
        let mut out = ptr::null_mut();
        let missing = CString::new("/nonexistent/pgcs/model.bin").unwrap();
        assert_eq!(pgcs_model_load(missing.as_ptr(), &mut out), PgcsStatus::Io);
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        let mut c = ptr::null_mut();
        let (re, im, labels) = ([1.0, 1.0], [0.0, 0.0], [0u32, 0]);
        assert_eq!(
            pgcs_constellation_new(1, re.as_ptr(), im.as_ptr(), labels.as_ptr(), 2, &mut c),
            PgcsStatus::Validation
        );
        assert_eq!(pgcs_model_load(ptr::null(), &mut out), PgcsStatus::NullPointer);

        let mut s = 0.0;
        assert_eq!(pgcs_linewidth_to_sigma_phi(-1.0, 32e9, &mut s), PgcsStatus::InvalidArgument);
        assert_eq!(pgcs_linewidth_to_sigma_phi(100e3, 32e9, &mut s), PgcsStatus::Ok);
        assert!(last_error().is_empty());
        assert!((s - (2.0 * std::f64::consts::PI * 100e3 / 32e9).sqrt()).abs() < 1e-15);
        assert_eq!(pgcs_snr_db_to_sigma_n(20.0), 0.1);
    }
}

#[test]
fn model_handle_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let ck = pgcs::trainer::load_checkpoint(&path).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(pgcs_model_load(cpath.as_ptr(), &mut m), PgcsStatus::Ok);
        assert_eq!(pgcs_model_bits(m), 2);
        let mut c = ptr::null_mut();
        assert_eq!(pgcs_model_constellation(m, 18.0, 1e5, &mut c), PgcsStatus::Ok);
        let p = pgcs::channel::ChannelParams::from_physical(18.0, 1e5, 32e9).unwrap();
        let expect = ck.model.constellation(p).unwrap();
        let (mut re, mut im) = (vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(pgcs_constellation_copy(c, re.as_mut_ptr(), im.as_mut_ptr(), ptr::null_mut(), 4), PgcsStatus::Ok);
        for (i, pt) in expect.points().iter().enumerate() {
            assert_eq!((re[i], im[i]), (pt.re, pt.im));
        }
        let mut bmi = -1.0;
        assert_eq!(pgcs_model_run_point(m, 18.0, 1e5, 0.0, 2048, 3, &mut bmi), PgcsStatus::Ok);
        assert!((0.0..=2.0).contains(&bmi));
        let mut bad = 0.0;
        assert_eq!(pgcs_model_run_point(m, 18.0, 1e5, 0.0, 0, 3, &mut bad), PgcsStatus::InvalidArgument);
        pgcs_constellation_free(c);
        pgcs_model_free(m);
        pgcs_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pgcs.h")).unwrap();
    for f in [
        "pgcs_last_error_message",
        "pgcs_version",
        "pgcs_model_load",
        "pgcs_model_free",
        "pgcs_model_constellation",
        "pgcs_model_run_point",
        "pgcs_constellation_square_qam",
        "pgcs_constellation_new",
        "pgcs_constellation_read",
        "pgcs_constellation_write",
        "pgcs_constellation_copy",
        "pgcs_constellation_free",
        "pgcs_bps_hard",
        "typedef struct PgcsModel PgcsModel",
        "PGCS_STATUS_OK = 0",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // test binaries live in <target>/<profile>/deps
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libpgcs_ffi.so").exists(), "shared library not built in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lpgcs_ffi", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let ck = tiny_checkpoint(dir.path());
    let out = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 0.1.0"));
}
