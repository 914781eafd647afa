//! C interface to the supcbm inference engine.
//!
//! A model is loaded once into an opaque [`SupcbmModel`] handle and then
//! queried with caller-owned buffers. Every fallible function returns a
//! [`SupcbmStatus`]; on failure a message is available from
//! [`supcbm_last_error_message`] on the same thread. Handles are immutable
//! after loading and may be shared across threads.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use supcbm::checkpoint::{self, Model};
use supcbm::eval::{self, Edit};
use supcbm::model::PredictionRecord;
use supcbm::vocab::VocabBundle;
use supcbm::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupcbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    ChecksumMismatch = 6,
    Panic = 7,
}

/// Values accepted in the `edit_values` array of [`supcbm_model_intervene`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupcbmEdit {
    Off = 0,
    On = 1,
    Clear = 2,
}

/// Opaque handle to a loaded model.
pub struct SupcbmModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SupcbmStatus {
    match e {
        Error::Io { .. } => SupcbmStatus::Io,
        Error::Malformed { .. }
        | Error::Validation(_)
        | Error::SizeMismatch(_)
        | Error::NonFinite { .. }
        | Error::Version { .. } => SupcbmStatus::Format,
        Error::ShapeMismatch { .. } | Error::MissingEmbedding(_) => SupcbmStatus::ShapeMismatch,
        Error::ChecksumMismatch(_) => SupcbmStatus::ChecksumMismatch,
        Error::ZeroNorm
        | Error::UnknownConcept { .. }
        | Error::Config(_)
        | Error::EmptyDataset
        | Error::Divergence { .. } => SupcbmStatus::InvalidArgument,
    }
}

struct Failure(SupcbmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SupcbmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(SupcbmStatus::InvalidArgument, msg)
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SupcbmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SupcbmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SupcbmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(m: *const SupcbmModel) -> Result<&'a SupcbmModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Copies a record into the optional caller buffers.
unsafe fn write_record(
    r: &PredictionRecord,
    c_out: *mut f64,
    c_len: usize,
    l_out: *mut f64,
    l_len: usize,
    predicted_out: *mut usize,
) -> Result<(), Failure> {
    for (src, dst, len, what) in [(&r.c, c_out, c_len, "c"), (&r.l, l_out, l_len, "l")] {
        if dst.is_null() {
            continue;
        }
        if len != src.len() {
            return Err(Failure(
                SupcbmStatus::ShapeMismatch,
                format!("{what} buffer holds {len} values, need {}", src.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    }
    if !predicted_out.is_null() {
        *predicted_out = r.predicted;
    }
    Ok(())
}

/// Loads a checkpoint manifest. `vocab_path` may be null for baseline
/// checkpoints; bottleneck checkpoints need the vocabulary they were trained
/// with. On success `*out` owns a handle to release with
/// [`supcbm_model_free`].
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supcbm_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut SupcbmModel,
) -> SupcbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let ckpt = path_arg(checkpoint_path, "checkpoint_path")?;
        let bundle = if vocab_path.is_null() {
            None
        } else {
            Some(VocabBundle::load(&path_arg(vocab_path, "vocab_path")?)?)
        };
        let model = checkpoint::load(&ckpt, bundle.as_ref())?;
        *out = Box::into_raw(Box::new(SupcbmModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`supcbm_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn supcbm_model_free(model: *mut SupcbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension `d`, number of bottleneck units `m`, number of classes `l`.
/// Any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn supcbm_model_dims(
    model: *const SupcbmModel,
    d: *mut usize,
    m: *mut usize,
    l: *mut usize,
) -> SupcbmStatus {
    guard(|| {
        let inner = model_arg(model)?.model.as_dyn();
        for (dst, v) in [
            (d, inner.input_dim()),
            (m, inner.num_units()),
            (l, inner.num_classes()),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Scores one embedding. `c_out` (length `m`) and `l_out` (length `l`) are
/// optional; when given, their lengths must match exactly.
///
/// # Safety
/// `x` must point to `x_len` doubles; outputs must be null or writable for
/// their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn supcbm_model_predict(
    model: *const SupcbmModel,
    x: *const f64,
    x_len: usize,
    c_out: *mut f64,
    c_len: usize,
    l_out: *mut f64,
    l_len: usize,
    predicted_out: *mut usize,
) -> SupcbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = slice_arg(x, x_len, "x")?;
        let record = eval::predict(m.model.as_dyn(), x)?;
        write_record(&record, c_out, c_len, l_out, l_len, predicted_out)
    })
}

/// Applies `n_edits` concept overrides (`edit_ids[k]` set to
/// `edit_values[k]`, a [`SupcbmEdit`] value) and writes the edited record.
/// A later edit of the same id replaces an earlier one.
///
/// # Safety
/// As [`supcbm_model_predict`]; `edit_ids` and `edit_values` must each point
/// to `n_edits` elements.
#[no_mangle]
pub unsafe extern "C" fn supcbm_model_intervene(
    model: *const SupcbmModel,
    x: *const f64,
    x_len: usize,
    edit_ids: *const usize,
    edit_values: *const u32,
    n_edits: usize,
    c_out: *mut f64,
    c_len: usize,
    l_out: *mut f64,
    l_len: usize,
    predicted_out: *mut usize,
) -> SupcbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = slice_arg(x, x_len, "x")?;
        let ids = slice_arg(edit_ids, n_edits, "edit_ids")?;
        let values = slice_arg(edit_values, n_edits, "edit_values")?;
        let mut edits = BTreeMap::new();
        for (&id, &v) in ids.iter().zip(values) {
            let edit = match v {
                0 => Edit::Off,
                1 => Edit::On,
                2 => Edit::Clear,
                other => return Err(invalid(format!("unknown edit value {other}"))),
            };
            edits.insert(id, edit);
        }
        let r = eval::intervene(m.model.as_dyn(), x, &edits)?;
        write_record(&r.after, c_out, c_len, l_out, l_len, predicted_out)
    })
}

/// Cosine similarity of two vectors of length `len`, in `[-1, 1]`.
///
/// # Safety
/// `u` and `v` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn supcbm_cosine(
    u: *const f64,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> SupcbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let u = slice_arg(u, len, "u")?;
        let v = slice_arg(v, len, "v")?;
        *out = supcbm::store::cosine(u, v)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn supcbm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn supcbm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
