//! C interface to `qpulse`.
//!
//! Objects are opaque handles created by `qp_*_new`/`qp_*_load`-style calls
//! and released with the matching `qp_*_free`. Every fallible call returns a
//! [`QpStatus`]; on failure `qp_last_error()` describes what went wrong on
//! the calling thread. Strings returned as `char *` are owned by the caller
//! and released with `qp_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qpulse::ensemble::Ensemble;
use qpulse::{
    solve_master_equation, Error, FilterBank, MasterEquationOptions, MeasurementRecord, Model,
    PosteriorSeries, RunConfig,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Record = 4,
    Numerical = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A parsed run configuration.
pub struct QpConfig {
    inner: RunConfig,
}

/// A column table of doubles with named columns.
pub struct QpTable {
    names: Vec<CString>,
    /// Row-major values.
    data: Vec<f64>,
    rows: usize,
    csv: String,
}

pub struct QpRecord {
    inner: MeasurementRecord,
}

pub struct QpFilterBank {
    inner: FilterBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QpStatus {
    match e {
        Error::Record(_) | Error::RecordMismatch(_) => QpStatus::Record,
        Error::Io(_) => QpStatus::Io,
        Error::Trajectory { source, .. } => status_of(source),
        e if e.is_config() => QpStatus::Config,
        _ => QpStatus::Numerical,
    }
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (QpStatus, String)>) -> QpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (QpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QpStatus, String) {
    (QpStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (QpStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (QpStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (QpStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (QpStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

impl QpTable {
    fn new(names: &[&str], columns: Vec<&[f64]>, csv: String) -> Self {
        let rows = columns.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(rows * columns.len());
        for i in 0..rows {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Self {
            names: names.iter().map(|n| CString::new(*n).expect("plain name")).collect(),
            data,
            rows,
            csv,
        }
    }

    fn from_posteriors(series: &PosteriorSeries, csv: String) -> Self {
        let mut names = vec!["t".to_string()];
        names.extend(series.labels.iter().map(|l| format!("p_{l}")));
        names.push("Q_e".into());
        let cols = names.len();
        let mut data = Vec::with_capacity(series.len() * cols);
        for (k, p) in series.posteriors.iter().enumerate() {
            data.push(series.t[k]);
            data.extend_from_slice(p);
            data.push(series.error_probability[k]);
        }
        Self {
            names: names.into_iter().map(|n| CString::new(n).expect("labels have no nul")).collect(),
            data,
            rows: series.len(),
            csv,
        }
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn qp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next `qp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn qp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from a `qpulse` call returning `char *`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_config_load(path: *const c_char, out: *mut *mut QpConfig) -> QpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = RunConfig::load(Path::new(path)).map_err(|e| match e {
            Error::Io(io) => (QpStatus::Io, format!("{path}: {io}")),
            e => lib_err(e),
        })?;
        put(out, QpConfig { inner })
    })
}

/// Parses configuration text; relative pulse files resolve against the
/// working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_config_parse(text: *const c_char, out: *mut *mut QpConfig) -> QpStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let inner = RunConfig::parse(text, None).map_err(lib_err)?;
        put(out, QpConfig { inner })
    })
}

/// # Safety
/// `cfg` must come from `qp_config_load`/`qp_config_parse`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_config_free(cfg: *mut QpConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_config_validate(cfg: *const QpConfig) -> QpStatus {
    guard(|| handle(cfg, "cfg")?.inner.validate().map_err(lib_err))
}

/// Resolved configuration text; free with `qp_string_free`.
///
/// # Safety
/// `cfg` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_config_render(cfg: *const QpConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => owned_string(c.inner.render()),
        None => ptr::null_mut(),
    }
}

/// 16-hex-digit configuration hash; free with `qp_string_free`.
///
/// # Safety
/// `cfg` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_config_hash(cfg: *const QpConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => owned_string(c.inner.hash()),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_config_set_seed(cfg: *mut QpConfig, seed: u64) -> QpStatus {
    guard(|| {
        handle_mut(cfg, "cfg")?.inner.master_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_config_set_trajectories(cfg: *mut QpConfig, n: usize) -> QpStatus {
    guard(|| {
        handle_mut(cfg, "cfg")?.inner.n_trajectories = n;
        Ok(())
    })
}

/// Observables of the unconditional evolution: columns t, photons, excited,
/// flux, integrated_flux, side_loss.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_master_equation(cfg: *const QpConfig, out: *mut *mut QpTable) -> QpStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.inner;
        let model = Model::with_representation(c.model.clone(), c.representation).map_err(lib_err)?;
        let opts = MasterEquationOptions {
            stride: c.output_stride,
            checkpoints: Vec::new(),
            validate_every: c.validate_every,
        };
        let s = solve_master_equation(&model, &opts).map_err(lib_err)?.series;
        let csv = s.to_csv(&[format!("config_hash {}", c.hash())]);
        let table = QpTable::new(
            &["t", "photons", "excited", "flux", "integrated_flux", "side_loss"],
            vec![&s.t, &s.photons, &s.excited, &s.flux, &s.integrated_flux, &s.side_loss],
            csv,
        );
        put(out, table)
    })
}

/// Simulates trajectory `index` of the configured ensemble and filters it.
/// Writes the record, the posterior table (t, p_<label>..., Q_e) and the
/// index of the true hypothesis. `posteriors` and `truth` may be NULL.
///
/// # Safety
/// `cfg` must be a live handle; `record` a valid pointer; `posteriors` and
/// `truth` valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_trajectory(
    cfg: *const QpConfig,
    index: usize,
    record: *mut *mut QpRecord,
    posteriors: *mut *mut QpTable,
    truth: *mut usize,
) -> QpStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.inner;
        let ensemble = Ensemble::new(c.ensemble_spec()).map_err(lib_err)?;
        let o = ensemble.trajectory(index).map_err(lib_err)?;
        if !posteriors.is_null() {
            let csv = o.posteriors.to_csv(&qpulse::cli::posterior_header(&c.hash(), &o.record));
            put(posteriors, QpTable::from_posteriors(&o.posteriors, csv))?;
        }
        if !truth.is_null() {
            *truth = o.truth;
        }
        put(record, QpRecord { inner: o.record })
    })
}

/// Filters a record with the configured hypotheses.
///
/// # Safety
/// `cfg` and `record` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_replay(
    cfg: *const QpConfig,
    record: *const QpRecord,
    out: *mut *mut QpTable,
) -> QpStatus {
    guard(|| {
        let r = &handle(record, "record")?.inner;
        let mut c = handle(cfg, "cfg")?.inner.clone();
        if let Some(seed) = r.seed {
            c.master_seed = seed;
        }
        let ensemble = Ensemble::new(c.ensemble_spec()).map_err(lib_err)?;
        let (series, _) = ensemble.filter_record(r).map_err(lib_err)?;
        let csv = series.to_csv(&qpulse::cli::posterior_header(&c.hash(), r));
        put(out, QpTable::from_posteriors(&series, csv))
    })
}

/// Mean error probability over the configured ensemble: columns t, mean_qe,
/// sem_qe. `threads` = 0 uses every core.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_ensemble(cfg: *const QpConfig, threads: usize, out: *mut *mut QpTable) -> QpStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.inner;
        let ensemble = Ensemble::new(c.ensemble_spec()).map_err(lib_err)?;
        let r = ensemble
            .run((threads > 0).then_some(threads))
            .map_err(lib_err)?;
        let table = QpTable::new(&["t", "mean_qe", "sem_qe"], vec![&r.t, &r.mean_qe, &r.sem_qe], r.to_csv());
        put(out, table)
    })
}

/// # Safety
/// `table` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_rows(table: *const QpTable) -> usize {
    table.as_ref().map_or(0, |t| t.rows)
}

/// # Safety
/// `table` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_columns(table: *const QpTable) -> usize {
    table.as_ref().map_or(0, |t| t.names.len())
}

/// Column name, owned by the table; NULL if out of range.
///
/// # Safety
/// `table` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_column_name(table: *const QpTable, column: usize) -> *const c_char {
    table
        .as_ref()
        .and_then(|t| t.names.get(column))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// # Safety
/// `table` must be a live handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_table_get(
    table: *const QpTable,
    row: usize,
    column: usize,
    value: *mut f64,
) -> QpStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let cols = t.names.len();
        if row >= t.rows || column >= cols {
            return Err((
                QpStatus::OutOfRange,
                format!("({row}, {column}) outside {}x{cols}", t.rows),
            ));
        }
        if value.is_null() {
            return Err(null("value"));
        }
        *value = t.data[row * cols + column];
        Ok(())
    })
}

/// Row-major values (rows × columns), owned by the table.
///
/// # Safety
/// `table` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_data(table: *const QpTable) -> *const f64 {
    table.as_ref().map_or(ptr::null(), |t| t.data.as_ptr())
}

/// The table as CSV, as the command line writes it; free with
/// `qp_string_free`.
///
/// # Safety
/// `table` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_csv(table: *const QpTable) -> *mut c_char {
    table.as_ref().map_or(ptr::null_mut(), |t| owned_string(t.csv.clone()))
}

/// # Safety
/// `table` must come from a `qpulse` call, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_table_free(table: *mut QpTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_record_load(path: *const c_char, out: *mut *mut QpRecord) -> QpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = MeasurementRecord::load(Path::new(path)).map_err(lib_err)?;
        put(out, QpRecord { inner })
    })
}

/// # Safety
/// `record` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qp_record_save(record: *const QpRecord, path: *const c_char) -> QpStatus {
    guard(|| {
        let r = handle(record, "record")?;
        let path = str_arg(path, "path")?;
        r.inner.save(Path::new(path)).map_err(lib_err)
    })
}

/// # Safety
/// `record` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_record_steps(record: *const QpRecord) -> usize {
    record.as_ref().map_or(0, |r| r.inner.steps)
}

/// Number of clicks (0 for homodyne records).
///
/// # Safety
/// `record` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_record_click_count(record: *const QpRecord) -> usize {
    record.as_ref().map_or(0, |r| r.inner.click_count())
}

/// # Safety
/// `record` must come from a `qpulse` call, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_record_free(record: *mut QpRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// A filter bank over the configured hypotheses, at t = 0.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_new(cfg: *const QpConfig, out: *mut *mut QpFilterBank) -> QpStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.inner;
        let models = qpulse::inference::prepare_models(&c.model, &c.hypotheses, c.representation)
            .map_err(lib_err)?;
        let mut inner = FilterBank::from_models(c.hypotheses.clone(), models).map_err(lib_err)?;
        inner.set_validate_every(c.validate_every);
        put(out, QpFilterBank { inner })
    })
}

/// # Safety
/// `bank` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_len(bank: *const QpFilterBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.len())
}

/// Advances one counting step (`clicked` nonzero for a detection).
///
/// # Safety
/// `bank` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_step_counting(bank: *mut QpFilterBank, clicked: bool) -> QpStatus {
    guard(|| handle_mut(bank, "bank")?.inner.step_counting(clicked).map_err(lib_err))
}

/// Advances one homodyne step with signal increment `dy`.
///
/// # Safety
/// `bank` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_step_homodyne(bank: *mut QpFilterBank, dy: f64) -> QpStatus {
    guard(|| handle_mut(bank, "bank")?.inner.step_homodyne(dy).map_err(lib_err))
}

/// Writes the current posteriors into `out[0..len]`; `len` must equal the
/// number of hypotheses.
///
/// # Safety
/// `bank` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_posteriors(bank: *const QpFilterBank, out: *mut f64, len: usize) -> QpStatus {
    guard(|| {
        let b = &handle(bank, "bank")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != b.len() {
            return Err((
                QpStatus::OutOfRange,
                format!("buffer of {len} for {} hypotheses", b.len()),
            ));
        }
        let p = b.posteriors().map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `bank` must come from `qp_filter_bank_new`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qp_filter_bank_free(bank: *mut QpFilterBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}
