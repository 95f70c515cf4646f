//! C ABI for the wranksim library.
//!
//! Every fallible function returns a [`WrsStatus`]; on failure a message is
//! available from [`wrs_last_error`] on the same thread. Arrays are passed as
//! pointer plus length, matrices row-major. Optional output pointers may be
//! null. Models are opaque handles released with [`wrs_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use wranksim::losses::{cross_entropy, lmcl, LmclConfig};
use wranksim::model::Mlp;
use wranksim::numeric::{cosine_similarity, RealMatrix};
use wranksim::ranking::{blackbox_rank_grad, rank, TiePolicy};
use wranksim::regularizer::{w_ranksim_loss, OrdinalClassSet};
use wranksim::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Shape = 4,
    Size = 5,
    Validation = 6,
    Parse = 7,
    Numerical = 8,
    Io = 9,
    Serde = 10,
    Panic = 11,
}

/// Competition ranking: tied values share a rank.
pub const WRS_TIE_COMPETITION: i32 = 0;
/// Permutation ranking: ties broken by ascending index.
pub const WRS_TIE_PERMUTATION: i32 = 1;

/// Trained classifier loaded from a checkpoint.
pub struct WrsModel {
    inner: Mlp,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(WrsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => WrsStatus::Domain,
            Error::Shape { .. } => WrsStatus::Shape,
            Error::Size(_) => WrsStatus::Size,
            Error::Validation { .. } => WrsStatus::Validation,
            Error::Parse { .. } => WrsStatus::Parse,
            Error::Numerical { .. } => WrsStatus::Numerical,
            Error::Io { .. } => WrsStatus::Io,
            Error::Serde(_) => WrsStatus::Serde,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(WrsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WrsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WrsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            WrsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(WrsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure(WrsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| Failure(WrsStatus::NullPointer, format!("{name} is null")))
}

fn policy(p: i32) -> Result<TiePolicy, Failure> {
    match p {
        WRS_TIE_COMPETITION => Ok(TiePolicy::Competition),
        WRS_TIE_PERMUTATION => Ok(TiePolicy::Permutation),
        other => Err(invalid(format!(
            "tie policy {other} is not WRS_TIE_COMPETITION (0) or WRS_TIE_PERMUTATION (1)"
        ))),
    }
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<RealMatrix, Failure> {
    Ok(RealMatrix::from_vec(rows, cols, data.to_vec())?)
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wrs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wrs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Ranks `a` in descending order (largest value gets rank 1).
///
/// # Safety
/// `a` and `out_ranks` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn wrs_rank(
    a: *const f64,
    n: usize,
    tie_policy: i32,
    out_ranks: *mut u32,
) -> WrsStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let out = slice_mut(out_ranks, n, "out_ranks")?;
        let r = rank(a, policy(tie_policy)?)?;
        out.copy_from_slice(&r.ranks);
        Ok(())
    })
}

/// Surrogate gradient of a loss through the rank function.
///
/// # Safety
/// `a`, `upstream` and `out_grad` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn wrs_blackbox_rank_grad(
    a: *const f64,
    upstream: *const f64,
    n: usize,
    lambda: f64,
    tie_policy: i32,
    out_grad: *mut f64,
) -> WrsStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let up = slice(upstream, n, "upstream")?;
        let out = slice_mut(out_grad, n, "out_grad")?;
        let g = blackbox_rank_grad(a, up, lambda, policy(tie_policy)?)?;
        out.copy_from_slice(&g);
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `n`.
///
/// # Safety
/// `u` and `v` must point to `n` elements; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn wrs_cosine_similarity(
    u: *const f64,
    v: *const f64,
    n: usize,
    out: *mut f64,
) -> WrsStatus {
    guard(|| {
        let c = cosine_similarity(slice(u, n, "u")?, slice(v, n, "v")?)?;
        *out_ref(out, "out")? = c;
        Ok(())
    })
}

/// W-RankSim loss of a `rows × cols` class weight matrix.
///
/// `class_codes` lists the ordinal label of each row in increasing order;
/// null means `1..=rows`. `out_grad` (optional) receives `rows × cols`.
///
/// # Safety
/// Pointers must reference the stated number of elements or be null where
/// optional.
#[no_mangle]
pub unsafe extern "C" fn wrs_w_ranksim_loss(
    w: *const f64,
    rows: usize,
    cols: usize,
    class_codes: *const i64,
    lambda: f64,
    tie_policy: i32,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> WrsStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("rows * cols overflows"))?;
        let w = matrix(slice(w, n, "w")?, rows, cols)?;
        let classes = if class_codes.is_null() {
            OrdinalClassSet::contiguous(rows)?
        } else {
            OrdinalClassSet::new(slice(class_codes, rows, "class_codes")?.to_vec())?
        };
        let (loss, grad) = w_ranksim_loss(&w, &classes, lambda, policy(tie_policy)?)?;
        *out_ref(out_loss, "out_loss")? = loss;
        if !out_grad.is_null() {
            slice_mut(out_grad, n, "out_grad")?.copy_from_slice(grad.as_slice());
        }
        Ok(())
    })
}

/// Softmax cross-entropy of `logits` against class index `target`.
///
/// # Safety
/// `logits` must point to `n` elements, `out_grad` to `n` or be null.
#[no_mangle]
pub unsafe extern "C" fn wrs_cross_entropy(
    logits: *const f64,
    n: usize,
    target: usize,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> WrsStatus {
    guard(|| {
        let (loss, grad) = cross_entropy(slice(logits, n, "logits")?, target)?;
        *out_ref(out_loss, "out_loss")? = loss;
        if !out_grad.is_null() {
            slice_mut(out_grad, n, "out_grad")?.copy_from_slice(&grad);
        }
        Ok(())
    })
}

/// Large margin cosine loss of `features` (length `dim`) against the
/// `classes × dim` weight matrix `w`.
///
/// # Safety
/// Pointers must reference the stated number of elements or be null where
/// optional.
#[no_mangle]
pub unsafe extern "C" fn wrs_lmcl(
    features: *const f64,
    dim: usize,
    w: *const f64,
    classes: usize,
    target: usize,
    s: f64,
    m: f64,
    out_loss: *mut f64,
    out_grad_features: *mut f64,
    out_grad_w: *mut f64,
) -> WrsStatus {
    guard(|| {
        let n = classes
            .checked_mul(dim)
            .ok_or_else(|| invalid("classes * dim overflows"))?;
        let cfg = LmclConfig { s, m };
        cfg.validate()?;
        let w = matrix(slice(w, n, "w")?, classes, dim)?;
        let out = lmcl(slice(features, dim, "features")?, &w, target, &cfg)?;
        *out_ref(out_loss, "out_loss")? = out.loss;
        if !out_grad_features.is_null() {
            slice_mut(out_grad_features, dim, "out_grad_features")?
                .copy_from_slice(&out.grad_features);
        }
        if !out_grad_w.is_null() {
            slice_mut(out_grad_w, n, "out_grad_w")?.copy_from_slice(out.grad_w.as_slice());
        }
        Ok(())
    })
}

fn store_model(model: Mlp, out: *mut *mut WrsModel) -> Result<(), Failure> {
    let slot = unsafe { out_ref(out, "out_model")? };
    *slot = Box::into_raw(Box::new(WrsModel { inner: model }));
    Ok(())
}

/// Loads a checkpoint file. On success `*out_model` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out_model` non-null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_load(
    path: *const c_char,
    out_model: *mut *mut WrsModel,
) -> WrsStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure(WrsStatus::NullPointer, "path is null".into()));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        store_model(Mlp::load(Path::new(p))?, out_model)
    })
}

/// Parses a checkpoint from a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string; `out_model` non-null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_from_json(
    json: *const c_char,
    out_model: *mut *mut WrsModel,
) -> WrsStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure(WrsStatus::NullPointer, "json is null".into()));
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| invalid("json is not valid UTF-8"))?;
        store_model(Mlp::from_checkpoint_str(s)?, out_model)
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_free(model: *mut WrsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input feature dimension; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_input_dim(model: *const WrsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.input_dim)
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_num_classes(model: *const WrsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Width of the final hidden representation; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_embedding_dim(model: *const WrsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.head_width())
}

unsafe fn model_ref<'a>(model: *const WrsModel) -> Result<&'a Mlp, Failure> {
    model
        .as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| Failure(WrsStatus::NullPointer, "model is null".into()))
}

fn check_len(name: &str, expected: usize, got: usize) -> Result<(), Failure> {
    if expected == got {
        Ok(())
    } else {
        Err(Failure(
            WrsStatus::Shape,
            format!("{name}: expected length {expected}, got {got}"),
        ))
    }
}

/// Class scores of one sample under the model's scoring rule.
///
/// # Safety
/// `x` must point to `x_len` elements and `out_scores` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_scores(
    model: *const WrsModel,
    x: *const f64,
    x_len: usize,
    out_scores: *mut f64,
    out_len: usize,
) -> WrsStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len("out_scores", m.num_classes(), out_len)?;
        let s = m.scores(slice(x, x_len, "x")?)?;
        slice_mut(out_scores, out_len, "out_scores")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Final hidden representation `z` of one sample.
///
/// # Safety
/// `x` must point to `x_len` elements and `out_z` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_embed(
    model: *const WrsModel,
    x: *const f64,
    x_len: usize,
    out_z: *mut f64,
    out_len: usize,
) -> WrsStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len("out_z", m.config.head_width(), out_len)?;
        let f = m.forward(slice(x, x_len, "x")?)?;
        slice_mut(out_z, out_len, "out_z")?.copy_from_slice(&f.z);
        Ok(())
    })
}

/// Predicted class index of one sample; ties go to the lower index.
///
/// # Safety
/// `x` must point to `x_len` elements; `out_class` non-null.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_predict(
    model: *const WrsModel,
    x: *const f64,
    x_len: usize,
    out_class: *mut usize,
) -> WrsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = m.predict(slice(x, x_len, "x")?)?;
        *out_ref(out_class, "out_class")? = c;
        Ok(())
    })
}

/// Predicted class indices of `n` samples stored row-major in `x`.
///
/// # Safety
/// `x` must point to `n × input_dim` elements and `out_classes` to `n`.
#[no_mangle]
pub unsafe extern "C" fn wrs_model_predict_batch(
    model: *const WrsModel,
    x: *const f64,
    n: usize,
    out_classes: *mut usize,
) -> WrsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = m.config.input_dim;
        let total = n
            .checked_mul(d)
            .ok_or_else(|| invalid("n * input_dim overflows"))?;
        let x = slice(x, total, "x")?;
        let out = slice_mut(out_classes, n, "out_classes")?;
        for (row, slot) in x.chunks_exact(d.max(1)).zip(out.iter_mut()) {
            *slot = m.predict(row)?;
        }
        Ok(())
    })
}
