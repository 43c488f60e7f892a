use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use qpulse_ffi::*;

const CONFIG: &str = "field.kind = fock\nfield.n = 3\ndt = 0.01\noutput_stride = 100\nmaster_seed = 5\n";

fn config() -> *mut QpConfig {
    let text = CString::new(CONFIG).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qp_config_parse(text.as_ptr(), &mut cfg) }, QpStatus::Ok);
    cfg
}

fn last_error() -> String {
    let p = qp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { qp_string_free(p) };
    s
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(qp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bad_config_sets_error() {
    let text = CString::new("gamma = -1\nbogus = 3").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { qp_config_parse(text.as_ptr(), &mut cfg) }, QpStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("bogus"));

    let text = CString::new("gamma = -1").unwrap();
    assert_eq!(unsafe { qp_config_parse(text.as_ptr(), &mut cfg) }, QpStatus::Ok);
    assert_eq!(unsafe { qp_config_validate(cfg) }, QpStatus::Config);
    unsafe { qp_config_free(cfg) };

    assert_eq!(unsafe { qp_config_parse(ptr::null(), &mut cfg) }, QpStatus::NullPointer);
    let missing = CString::new("/nonexistent/x.cfg").unwrap();
    assert_eq!(unsafe { qp_config_load(missing.as_ptr(), &mut cfg) }, QpStatus::Io);
}

#[test]
fn config_render_and_hash() {
    let cfg = config();
    let render = take_string(unsafe { qp_config_render(cfg) });
    assert!(render.contains("field.n = 3\n"));
    assert_eq!(take_string(unsafe { qp_config_hash(cfg) }).len(), 16);
    unsafe { qp_config_free(cfg) };
}

#[test]
fn master_equation_table() {
    let cfg = config();
    let mut table = ptr::null_mut();
    assert_eq!(unsafe { qp_master_equation(cfg, &mut table) }, QpStatus::Ok);
    let rows = unsafe { qp_table_rows(table) };
    assert_eq!(rows, 11);
    assert_eq!(unsafe { qp_table_columns(table) }, 6);
    let name = unsafe { CStr::from_ptr(qp_table_column_name(table, 4)) };
    assert_eq!(name.to_str().unwrap(), "integrated_flux");
    let mut n = 0.0;
    assert_eq!(unsafe { qp_table_get(table, rows - 1, 4, &mut n) }, QpStatus::Ok);
    assert!((n - 3.0).abs() < 1e-2, "{n}");
    let mut x = 0.0;
    assert_eq!(unsafe { qp_table_get(table, rows, 0, &mut x) }, QpStatus::OutOfRange);
    assert!(unsafe { qp_table_column_name(table, 6) }.is_null());
    let data = unsafe { std::slice::from_raw_parts(qp_table_data(table), rows * 6) };
    assert_eq!(data[(rows - 1) * 6 + 4], n);
    unsafe {
        qp_table_free(table);
        qp_config_free(cfg);
    }
}

#[test]
fn trajectory_record_replay_roundtrip() {
    let cfg = config();
    let mut record = ptr::null_mut();
    let mut posteriors = ptr::null_mut();
    let mut truth = usize::MAX;
    assert_eq!(
        unsafe { qp_trajectory(cfg, 3, &mut record, &mut posteriors, &mut truth) },
        QpStatus::Ok
    );
    assert!(truth < 2);
    assert_eq!(unsafe { qp_record_steps(record) }, 1000);
    if truth == 1 {
        assert_eq!(unsafe { qp_record_click_count(record) }, 3);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("r.record").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { qp_record_save(record, path.as_ptr()) }, QpStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { qp_record_load(path.as_ptr(), &mut loaded) }, QpStatus::Ok);

    let mut replayed = ptr::null_mut();
    assert_eq!(unsafe { qp_replay(cfg, loaded, &mut replayed) }, QpStatus::Ok);
    let a = take_string(unsafe { qp_table_csv(posteriors) });
    let b = take_string(unsafe { qp_table_csv(replayed) });
    assert_eq!(a, b);
    assert!(a.contains("t,p_0,p_1,Q_e\n"));

    // step the bank by hand through the same record
    let mut bank = ptr::null_mut();
    assert_eq!(unsafe { qp_filter_bank_new(cfg, &mut bank) }, QpStatus::Ok);
    assert_eq!(unsafe { qp_filter_bank_len(bank) }, 2);
    let text = std::fs::read_to_string(dir.path().join("r.record")).unwrap();
    let rec = qpulse::MeasurementRecord::parse(&text).unwrap();
    for clicked in rec.click_flags().unwrap() {
        assert_eq!(unsafe { qp_filter_bank_step_counting(bank, clicked) }, QpStatus::Ok);
    }
    let mut p = [0.0; 2];
    assert_eq!(unsafe { qp_filter_bank_posteriors(bank, p.as_mut_ptr(), 2) }, QpStatus::Ok);
    let rows = unsafe { qp_table_rows(replayed) };
    let mut p1 = 0.0;
    assert_eq!(unsafe { qp_table_get(replayed, rows - 1, 2, &mut p1) }, QpStatus::Ok);
    assert_eq!(p[1], p1);
    assert_eq!(unsafe { qp_filter_bank_step_counting(bank, false) }, QpStatus::Record);
    assert_eq!(unsafe { qp_filter_bank_posteriors(bank, p.as_mut_ptr(), 3) }, QpStatus::OutOfRange);

    unsafe {
        qp_filter_bank_free(bank);
        qp_table_free(replayed);
        qp_table_free(posteriors);
        qp_record_free(loaded);
        qp_record_free(record);
        qp_config_free(cfg);
    }
}

#[test]
fn ensemble_is_thread_count_independent() {
    let cfg = config();
    assert_eq!(unsafe { qp_config_set_trajectories(cfg, 6) }, QpStatus::Ok);
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { qp_ensemble(cfg, 1, &mut a) }, QpStatus::Ok);
    assert_eq!(unsafe { qp_ensemble(cfg, 2, &mut b) }, QpStatus::Ok);
    assert_eq!(take_string(unsafe { qp_table_csv(a) }), take_string(unsafe { qp_table_csv(b) }));
    let mut q0 = 0.0;
    assert_eq!(unsafe { qp_table_get(a, 0, 1, &mut q0) }, QpStatus::Ok);
    assert_eq!(q0, 0.5);
    unsafe {
        qp_table_free(a);
        qp_table_free(b);
        qp_config_free(cfg);
    }
}

#[test]
fn null_handles_are_reported() {
    let mut table = ptr::null_mut();
    assert_eq!(unsafe { qp_master_equation(ptr::null(), &mut table) }, QpStatus::NullPointer);
    assert!(last_error().contains("cfg"));
    assert_eq!(unsafe { qp_table_rows(ptr::null()) }, 0);
    assert!(unsafe { qp_config_render(ptr::null()) }.is_null());
    unsafe {
        qp_config_free(ptr::null_mut());
        qp_string_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qpulse.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "qp_config_load",
        "qp_master_equation",
        "qp_trajectory",
        "qp_replay",
        "qp_ensemble",
        "qp_filter_bank_step_homodyne",
        "qp_last_error",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing");
    }
    assert!(h.contains("typedef struct QpConfig QpConfig;"));
    assert!(h.contains("QP_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; header only checked textually");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"qpulse.h\"\n\
         int main(void) {\n\
           QpConfig *cfg = 0;\n\
           QpStatus s = qp_config_parse(\"dt = 0.01\", &cfg);\n\
           qp_config_free(cfg);\n\
           return s == QP_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
