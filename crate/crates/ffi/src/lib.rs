//! C ABI for the vanlka library.
//!
//! Models are exposed as an opaque [`VanlkaModel`] handle created by
//! [`vanlka_model_new`] or [`vanlka_model_load`] and released with
//! [`vanlka_model_free`]. Fallible calls return a [`VanlkaStatus`]; the
//! message of the most recent failure on the calling thread is available
//! through [`vanlka_last_error`].
//!
//! Variants are named by a preset (`"b0"`..`"b6"`, `"micro"`) or by a path to
//! a JSON variant config, passed as NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vanlka::cost;
use vanlka::io::{load_checkpoint, resolve_variant, save_checkpoint};
use vanlka::van::{build_van, model_forward, ModelWeights, VanVariant, IMAGE_CHANNELS};
use vanlka::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VanlkaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Geometry = 4,
    Parameter = 5,
    Config = 6,
    Format = 7,
    Version = 8,
    Integrity = 9,
    Corruption = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// A VAN model with 32-bit weights.
pub struct VanlkaModel {
    variant: VanVariant,
    weights: ModelWeights<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: VanlkaStatus, msg: impl Into<String>) -> VanlkaStatus {
    set_last_error(msg.into());
    status
}

fn status_of(e: &Error) -> VanlkaStatus {
    match e {
        Error::Shape(_) => VanlkaStatus::Shape,
        Error::Geometry(_) => VanlkaStatus::Geometry,
        Error::Parameter(_) => VanlkaStatus::Parameter,
        Error::Config(_) => VanlkaStatus::Config,
        Error::Format(_) => VanlkaStatus::Format,
        Error::Version { .. } => VanlkaStatus::Version,
        Error::Integrity { .. } => VanlkaStatus::Integrity,
        Error::Corruption(_) => VanlkaStatus::Corruption,
        Error::Io { .. } => VanlkaStatus::Io,
    }
}

/// Runs `f`, recording its error message and turning panics into
/// [`VanlkaStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), VanlkaStatus>) -> VanlkaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VanlkaStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(VanlkaStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: vanlka::Result<T>) -> Result<T, VanlkaStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, VanlkaStatus> {
    if s.is_null() {
        return Err(fail(VanlkaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        fail(
            VanlkaStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn null(what: &str) -> VanlkaStatus {
    fail(VanlkaStatus::NullArgument, format!("{what} is null"))
}

/// Builds a randomly initialised model.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a writable pointer.
/// On success `*out` owns a model to be released with [`vanlka_model_free`].
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_new(
    variant: *const c_char,
    seed: u64,
    out: *mut *mut VanlkaModel,
) -> VanlkaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let variant = lib(resolve_variant(str_arg(variant, "variant")?))?;
        let weights = lib(build_van::<f32>(&variant, seed))?;
        *out = Box::into_raw(Box::new(VanlkaModel { variant, weights }));
        Ok(())
    })
}

/// Loads a checkpoint, validating every tensor against the variant.
///
/// # Safety
/// `variant` and `path` must be NUL-terminated strings and `out` a writable
/// pointer. On success `*out` owns a model to be released with
/// [`vanlka_model_free`].
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_load(
    variant: *const c_char,
    path: *const c_char,
    out: *mut *mut VanlkaModel,
) -> VanlkaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let variant = lib(resolve_variant(str_arg(variant, "variant")?))?;
        let path = str_arg(path, "path")?;
        let weights = lib(load_checkpoint::<f32>(path, &variant))?;
        *out = Box::into_raw(Box::new(VanlkaModel { variant, weights }));
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_save(
    model: *const VanlkaModel,
    path: *const c_char,
) -> VanlkaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = str_arg(path, "path")?;
        lib(save_checkpoint(&model.weights, path))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_free(model: *mut VanlkaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_num_classes(model: *const VanlkaModel) -> usize {
    model.as_ref().map_or(0, |m| m.variant.num_classes)
}

/// Number of trainable scalars, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_parameter_count(model: *const VanlkaModel) -> u64 {
    model.as_ref().map_or(0, |m| m.weights.parameter_count())
}

/// Classifies a batch of normalised NCHW images with 3 channels.
///
/// `images` holds `batch * 3 * height * width` floats; `logits` receives
/// `batch * num_classes` floats, row-major. Height and width must be
/// multiples of 32.
///
/// # Safety
/// `images` must be readable and `logits` writable for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_forward(
    model: *const VanlkaModel,
    images: *const f32,
    batch: usize,
    height: usize,
    width: usize,
    logits: *mut f32,
    logits_len: usize,
) -> VanlkaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if images.is_null() {
            return Err(null("images"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let needed = batch * model.variant.num_classes;
        if logits_len < needed {
            return Err(fail(
                VanlkaStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len} values, {needed} needed"),
            ));
        }
        let len = batch * IMAGE_CHANNELS * height * width;
        let data = std::slice::from_raw_parts(images, len).to_vec();
        let x = lib(Tensor::from_vec(
            &[batch, IMAGE_CHANNELS, height, width],
            data,
        ))?;
        let out = lib(model_forward(&x, &model.weights))?;
        std::slice::from_raw_parts_mut(logits, needed).copy_from_slice(out.logits.data());
        Ok(())
    })
}

/// Whole-model parameter and MAC counts at an `height x width` input.
///
/// # Safety
/// `variant` must be a NUL-terminated string; `params` and `macs` writable.
#[no_mangle]
pub unsafe extern "C" fn vanlka_model_cost(
    variant: *const c_char,
    height: usize,
    width: usize,
    bias: bool,
    params: *mut u64,
    macs: *mut u64,
) -> VanlkaStatus {
    guard(|| {
        if params.is_null() || macs.is_null() {
            return Err(null("params/macs"));
        }
        let variant = lib(resolve_variant(str_arg(variant, "variant")?))?;
        let report = lib(cost::model_cost(&variant, height, width, bias))?;
        *params = report.total_params;
        *macs = report.total_macs;
        Ok(())
    })
}

/// Evaluates a count, mapping a zero dilation or arithmetic overflow to 0.
fn count(f: impl FnOnce() -> u64 + std::panic::UnwindSafe) -> u64 {
    catch_unwind(f).unwrap_or(0)
}

/// Parameters of a dense KxK conv with C input and output channels.
#[no_mangle]
pub extern "C" fn vanlka_standard_conv_params(kernel: u64, channels: u64) -> u64 {
    count(|| cost::standard_conv_params(kernel, channels))
}

/// Parameters of a KxK depthwise conv followed by a pointwise conv.
#[no_mangle]
pub extern "C" fn vanlka_mobilenet_decomp_params(kernel: u64, channels: u64) -> u64 {
    count(|| cost::mobilenet_decomp_params(kernel, channels))
}

/// Parameters of the dw, dilated dw and pointwise decomposition of a KxK conv.
/// Returns 0 for a zero dilation.
#[no_mangle]
pub extern "C" fn vanlka_lka_decomp_params(kernel: u64, dilation: u64, channels: u64) -> u64 {
    if dilation == 0 {
        return 0;
    }
    count(|| cost::lka_decomp_params(kernel, dilation, channels))
}

/// MACs of the decomposition over an `height x width` map. Returns 0 for a
/// zero dilation.
#[no_mangle]
pub extern "C" fn vanlka_lka_decomp_macs(
    kernel: u64,
    dilation: u64,
    channels: u64,
    height: u64,
    width: u64,
) -> u64 {
    if dilation == 0 {
        return 0;
    }
    count(|| cost::lka_decomp_macs(kernel, dilation, channels, height, width))
}

/// Cheapest dilation in `1..=min(d_max, kernel)`, or 0 when either is 0.
#[no_mangle]
pub extern "C" fn vanlka_optimal_dilation(kernel: u64, d_max: u64) -> u64 {
    if kernel == 0 || d_max == 0 {
        return 0;
    }
    cost::optimal_dilation(kernel, d_max)
}

/// Copies the last error message of this thread into `buf`, NUL-terminated
/// and truncated to `len`. Returns the full message length excluding the
/// NUL, or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn vanlka_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vanlka_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
