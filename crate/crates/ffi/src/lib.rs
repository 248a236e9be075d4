//! C ABI over `apsnet`.
//!
//! Tensors and networks are opaque handles created by `aps_*_new`,
//! `aps_*_load` or an operation, and released with the matching
//! `aps_*_free`. Every fallible call returns an [`ApsStatus`]; on failure,
//! [`aps_last_error`] describes what went wrong on the calling thread.
//! All arithmetic is 64-bit; networks built from a spec asking for 32-bit
//! precision still run in 64-bit here.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use apsnet::network::{Network, NetworkSpec};
use apsnet::polyphase::{aps_downsample, conventional_downsample, SelectionCriterion};
use apsnet::tensor::{circular_shift, Shape, Tensor};
use apsnet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Spec = 4,
    Io = 5,
    Format = 6,
    Config = 7,
    Panic = 8,
    Other = 9,
}

/// Opaque 64-bit rank-4 tensor.
pub struct ApsTensor(Tensor<f64>);

/// Opaque 64-bit network.
pub struct ApsNetwork(Network<f64>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> ApsStatus {
    match e {
        Error::ShapeMismatch(_) => ApsStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::UnknownTap(_) | Error::LabelOutOfRange { .. } => ApsStatus::InvalidArgument,
        Error::Spec { .. } => ApsStatus::Spec,
        Error::Io(_) => ApsStatus::Io,
        Error::Format(_) => ApsStatus::Format,
        Error::Config(_) => ApsStatus::Config,
        _ => ApsStatus::Other,
    }
}

/// Runs `f`, recording its error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (ApsStatus, String)>) -> ApsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ApsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ApsStatus::Panic
        }
    }
}

fn lib<T>(r: apsnet::Result<T>) -> Result<T, (ApsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (ApsStatus, String) {
    (ApsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn tensor_ref<'a>(t: *const ApsTensor, what: &str) -> Result<&'a Tensor<f64>, (ApsStatus, String)> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (ApsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn string_arg(s: *const c_char, what: &str) -> Result<String, (ApsStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (ApsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next `aps_*` call on the same thread.
#[no_mangle]
pub extern "C" fn aps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New `(n, c, h, w)` tensor. Copies `n*c*h*w` values from `data`, or
/// zero-fills when `data` is null.
///
/// # Safety
/// `data` is null or points to `n*c*h*w` readable doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_new(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: *const f64,
    out: *mut *mut ApsTensor,
) -> ApsStatus {
    guard(|| {
        let shape = Shape::new(n, c, h, w);
        let t = if data.is_null() {
            Tensor::zeros(shape)
        } else {
            lib(Tensor::from_vec(shape, std::slice::from_raw_parts(data, shape.len()).to_vec()))?
        };
        put(out, ApsTensor(t))
    })
}

/// # Safety
/// `t` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_free(t: *mut ApsTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Writes `n, c, h, w` into `dims[0..4]`.
///
/// # Safety
/// `t` is a live handle; `dims` points to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_shape(t: *const ApsTensor, dims: *mut usize) -> ApsStatus {
    guard(|| {
        let s = tensor_ref(t, "tensor")?.shape();
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&[s.n, s.c, s.h, s.w]);
        Ok(())
    })
}

/// Borrowed pointer to the row-major values, valid while `t` lives.
/// Null if `t` is null.
///
/// # Safety
/// `t` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_data(t: *const ApsTensor) -> *const f64 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// Number of elements, 0 if `t` is null.
///
/// # Safety
/// `t` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_len(t: *const ApsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.data().len())
}

/// Reads a tensor file. 32-bit files are widened.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_load(path: *const c_char, out: *mut *mut ApsTensor) -> ApsStatus {
    guard(|| {
        let path = PathBuf::from(string_arg(path, "path")?);
        put(out, ApsTensor(lib(Tensor::<f64>::load(path))?))
    })
}

/// # Safety
/// `t` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn aps_tensor_save(t: *const ApsTensor, path: *const c_char) -> ApsStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        lib(t.save(PathBuf::from(string_arg(path, "path")?)))
    })
}

/// `out(r, c) = t(r - dy, c - dx)` with wrap-around.
///
/// # Safety
/// `t` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_circular_shift(t: *const ApsTensor, dy: isize, dx: isize, out: *mut *mut ApsTensor) -> ApsStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        put(out, ApsTensor(circular_shift(t, dy, dx)))
    })
}

/// Adaptive polyphase downsampling by `stride` with the max-l2 rule.
/// When `indices` is not null it receives `(i, j)` per batch item, so it
/// must hold `2 * n` entries.
///
/// # Safety
/// `t` is a live handle; `out` is writable; `indices` is null or holds `2*n` `size_t`.
#[no_mangle]
pub unsafe extern "C" fn aps_downsample_adaptive(
    t: *const ApsTensor,
    stride: usize,
    out: *mut *mut ApsTensor,
    indices: *mut usize,
) -> ApsStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        let r = lib(aps_downsample(t, stride, &SelectionCriterion::default()))?;
        if !indices.is_null() {
            let dst = std::slice::from_raw_parts_mut(indices, 2 * r.indices.len());
            for (k, idx) in r.indices.iter().enumerate() {
                dst[2 * k] = idx.i;
                dst[2 * k + 1] = idx.j;
            }
        }
        put(out, ApsTensor(r.tensor))
    })
}

/// Keeps the `(0, 0)` grid.
///
/// # Safety
/// `t` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_downsample_fixed(t: *const ApsTensor, stride: usize, out: *mut *mut ApsTensor) -> ApsStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        put(out, ApsTensor(lib(conventional_downsample(t, stride))?))
    })
}

/// Builds a randomly initialised network from a TOML spec.
///
/// # Safety
/// `spec_toml` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_network_from_toml(spec_toml: *const c_char, out: *mut *mut ApsNetwork) -> ApsStatus {
    guard(|| {
        let spec = lib(NetworkSpec::from_toml(&string_arg(spec_toml, "spec")?))?;
        put(out, ApsNetwork(lib(Network::build(&spec))?))
    })
}

/// Loads a network saved by `apsnet train` (its `params` directory).
///
/// # Safety
/// `dir` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_network_load(dir: *const c_char, out: *mut *mut ApsNetwork) -> ApsStatus {
    guard(|| {
        let dir = PathBuf::from(string_arg(dir, "dir")?);
        put(out, ApsNetwork(lib(Network::load(dir))?))
    })
}

/// # Safety
/// `net` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aps_network_free(net: *mut ApsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of output classes, 0 if `net` is null.
///
/// # Safety
/// `net` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aps_network_classes(net: *const ApsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.classes())
}

/// Logits `(N, K, 1, 1)` for a batch `x`.
///
/// # Safety
/// `net` and `x` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aps_network_forward(
    net: *const ApsNetwork,
    x: *const ApsTensor,
    out: *mut *mut ApsTensor,
) -> ApsStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        let x = tensor_ref(x, "input")?;
        put(out, ApsTensor(lib(net.0.forward(x))?))
    })
}
