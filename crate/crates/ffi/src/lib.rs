//! C ABI over `tle-core`.
//!
//! Every fallible call returns a [`TleStatus`]; on failure the message is
//! kept per thread and read back with [`tle_last_error_message`]. Datasets
//! and models are opaque handles owned by the caller and released with the
//! matching `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tle_core::dataset::{Split, StreamTag, SynthConfig};
use tle_core::train::{evaluate, predict_video};
use tle_core::{FeatureDataset, FeatureMap, Shape, TensorSketchEncoder, TleError, TrainConfig};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque dataset handle.
pub struct TleDataset {
    inner: FeatureDataset,
}

/// Opaque model handle.
pub struct TleModel {
    inner: tle_core::TleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &TleError) -> TleStatus {
    match e {
        TleError::ShapeMismatch { .. } | TleError::LengthMismatch { .. } | TleError::DimensionMismatch(_) => {
            TleStatus::DimensionMismatch
        }
        TleError::NonFinite { .. } | TleError::NonFiniteEvaluation { .. } => TleStatus::NonFinite,
        TleError::MagicMismatch { .. }
        | TleError::UnsupportedVersion { .. }
        | TleError::Truncated { .. }
        | TleError::ShapeOverflow { .. }
        | TleError::Malformed { .. } => TleStatus::Format,
        TleError::Io(_) => TleStatus::Io,
        _ => TleStatus::InvalidArgument,
    }
}

struct Failure(TleStatus, String);

impl From<TleError> for Failure {
    fn from(e: TleError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TleStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TleStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TleStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TleStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Borrows `len` finite inputs.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, len);
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Failure(TleStatus::NonFinite, format!("{what}[{i}] is not finite")));
    }
    Ok(s)
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            TleStatus::BufferTooSmall,
            format!("output buffer holds {len} values, {} needed", src.len()),
        ));
    }
    let dst = unsafe { slice_mut(dst, len, "output buffer")? };
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tle_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the calling thread's last error message, including
/// the terminating NUL; 0 if the last call succeeded.
#[no_mangle]
pub extern "C" fn tle_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf` (truncated, always
/// NUL-terminated when `len > 0`). Returns the full length including NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn tle_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Reads a TLEF dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_read(path: *const c_char, out: *mut *mut TleDataset) -> TleStatus {
    guard(|| {
        let inner = tle_core::read_dataset(text(path, "path")?)?;
        store(out, TleDataset { inner })
    })
}

/// Writes a dataset in TLEF format.
///
/// # Safety
/// `dataset` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_write(dataset: *const TleDataset, path: *const c_char) -> TleStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        tle_core::write_dataset(&ds.inner, text(path, "path")?)?;
        Ok(())
    })
}

/// Generates a synthetic dataset. `test_split` selects the held-out noise
/// stream; `temporal` tags videos as the temporal stream.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tle_dataset_synth(
    classes: usize,
    videos_per_class: usize,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    difficulty: f64,
    seed: u64,
    test_split: bool,
    temporal: bool,
    out: *mut *mut TleDataset,
) -> TleStatus {
    guard(|| {
        let cfg = SynthConfig {
            classes,
            videos_per_class,
            frames,
            shape: Shape::new(height, width, channels)?,
            difficulty,
            seed,
            stream: if temporal { StreamTag::Temporal } else { StreamTag::Spatial },
        };
        let split = if test_split { Split::Test } else { Split::Train };
        store(out, TleDataset { inner: tle_core::synth_dataset(&cfg, split)? })
    })
}

/// Number of videos; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_len(dataset: *const TleDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_classes(dataset: *const TleDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.classes())
}

/// Label of video `index`, or `SIZE_MAX` if out of range.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_label(dataset: *const TleDataset, index: usize) -> usize {
    dataset
        .as_ref()
        .and_then(|d| d.inner.videos().get(index))
        .map_or(usize::MAX, |v| v.label)
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tle_dataset_free(dataset: *mut TleDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a model. `config` holds `key = value` lines (may be null or
/// empty for defaults).
///
/// # Safety
/// `dataset` must be a live handle, `config` null or NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tle_model_train(
    dataset: *const TleDataset,
    config: *const c_char,
    out: *mut *mut TleModel,
) -> TleStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let cfg = if config.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::parse(text(config, "config")?)?
        };
        let (inner, _) = tle_core::train(&ds.inner, &cfg)?;
        store(out, TleModel { inner })
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tle_model_load(path: *const c_char, out: *mut *mut TleModel) -> TleStatus {
    guard(|| {
        let inner = tle_core::load_model(text(path, "path")?)?;
        store(out, TleModel { inner })
    })
}

/// Saves a model file.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tle_model_save(model: *const TleModel, path: *const c_char) -> TleStatus {
    guard(|| {
        let m = handle(model, "model")?;
        tle_core::save_model(&m.inner, text(path, "path")?)?;
        Ok(())
    })
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tle_model_classes(model: *const TleModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.classes())
}

/// Predicts video `index` of `dataset`, averaging `groups` segment groups.
/// Writes the class to `class_out` and the averaged logits to `scores`
/// (`scores_len` ≥ class count; `scores` may be null when `scores_len`
/// is 0).
///
/// # Safety
/// Handles must be live; `class_out` writable; `scores` valid for
/// `scores_len` values.
#[no_mangle]
pub unsafe extern "C" fn tle_model_predict(
    model: *const TleModel,
    dataset: *const TleDataset,
    index: usize,
    groups: usize,
    class_out: *mut usize,
    scores: *mut f64,
    scores_len: usize,
) -> TleStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let video = ds.inner.videos().get(index).ok_or_else(|| {
            Failure(
                TleStatus::InvalidArgument,
                format!("video {index} out of range ({} videos)", ds.inner.len()),
            )
        })?;
        if video.shape() != m.inner.input_shape() {
            return Err(Failure(
                TleStatus::DimensionMismatch,
                format!("model expects {} maps, video has {}", m.inner.input_shape(), video.shape()),
            ));
        }
        let (class, averaged) = predict_video(&m.inner, video, groups)?;
        if class_out.is_null() {
            return Err(null("class_out"));
        }
        if scores_len > 0 {
            copy_out(&averaged, scores, scores_len)?;
        }
        *class_out = class;
        Ok(())
    })
}

/// Video-level accuracy of `model` on `dataset`.
///
/// # Safety
/// Handles must be live; `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn tle_model_evaluate(
    model: *const TleModel,
    dataset: *const TleDataset,
    groups: usize,
    accuracy: *mut f64,
) -> TleStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let report = evaluate(&m.inner, &ds.inner, groups)?;
        if accuracy.is_null() {
            return Err(null("accuracy"));
        }
        *accuracy = report.accuracy;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tle_model_free(model: *mut TleModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Full bilinear pooling of an `h × w × c` map (row-major, channels
/// fastest) into `out` (`c²` values).
///
/// # Safety
/// `x` must hold `h·w·c` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn tle_bilinear_forward(
    x: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
    out_len: usize,
) -> TleStatus {
    guard(|| {
        let shape = Shape::new(height, width, channels)?;
        let map = FeatureMap::new(shape, slice(x, shape.len(), "x")?.to_vec())?;
        copy_out(tle_core::bilinear_forward(&map).values(), out, out_len)
    })
}

/// Tensor sketch of an `h × w × c` map into `d` values, with tables
/// derived from `seed`.
///
/// # Safety
/// `x` must hold `h·w·c` values and `out` `out_len` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tle_tensor_sketch_forward(
    x: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    d: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> TleStatus {
    guard(|| {
        let shape = Shape::new(height, width, channels)?;
        let map = FeatureMap::new(shape, slice(x, shape.len(), "x")?.to_vec())?;
        let enc = TensorSketchEncoder::new(channels, d, seed)?;
        copy_out(enc.forward(&map)?.values(), out, out_len)
    })
}

/// Late fusion: element-wise mean of two score vectors of length `n`.
///
/// # Safety
/// `spatial`, `temporal` and `out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn tle_fuse_streams(spatial: *const f64, temporal: *const f64, n: usize, out: *mut f64) -> TleStatus {
    guard(|| {
        let fused = tle_core::fuse_streams(slice(spatial, n, "spatial")?, slice(temporal, n, "temporal")?)?;
        copy_out(&fused, out, n)
    })
}
