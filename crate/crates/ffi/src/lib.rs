//! C ABI over the `ipgan` crate.
//!
//! Every fallible function returns an [`IpganStatus`]; on failure the
//! message is kept per thread and read with [`ipgan_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ipgan::datasets::{load_manifest, parse_reid_filename, DatasetManifest};
use ipgan::evaluation::{compute_cmc_map, EvalResult, FeatureMatrix};
use ipgan::gan::{translate_image, DomainLabel};
use ipgan::nn::ModelParams;
use ipgan::training::{lr_at_epoch, TrainConfig};
use ipgan::{Error, ImageTensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    OutOfRange = 6,
    Runtime = 7,
    Panic = 8,
}

/// Parsed manifest.
pub struct IpganManifest {
    inner: DatasetManifest,
}

/// Parameters of any of the networks.
pub struct IpganModel {
    inner: ModelParams,
}

/// Retrieval scores from [`ipgan_evaluate`].
pub struct IpganEvalResult {
    inner: EvalResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> IpganStatus {
    match e {
        Error::Io { .. } => IpganStatus::Io,
        Error::Filename(_) | Error::ManifestFormat { .. } | Error::ManifestVersion { .. } | Error::Checkpoint(_) | Error::Image(_) => {
            IpganStatus::Format
        }
        Error::Shape { .. } => IpganStatus::Shape,
        Error::CameraOutOfRange { .. } | Error::DomainOutOfRange { .. } | Error::LabelOutOfRange { .. } | Error::UnknownCamera(_) => {
            IpganStatus::OutOfRange
        }
        Error::Config { .. } | Error::InvalidSpec(_) | Error::Precondition(_) | Error::InvalidRecord(_) => IpganStatus::InvalidArgument,
        _ => IpganStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), IpganStatus>) -> IpganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IpganStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            IpganStatus::Panic
        }
    }
}

fn fail(e: Error) -> IpganStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), IpganStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(IpganStatus::NullPointer)
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, IpganStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        IpganStatus::InvalidArgument
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ipgan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ipgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Splits a Market-style file name into identity (-1 for junk) and camera.
///
/// # Safety
/// `name` must be a NUL-terminated string; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_parse_reid_filename(name: *const c_char, identity: *mut i64, camera: *mut u32) -> IpganStatus {
    guard(|| {
        let name = read_str(name, "name")?;
        non_null(identity, "identity")?;
        non_null(camera, "camera")?;
        let (id, cam) = parse_reid_filename(name).map_err(fail)?;
        *identity = id;
        *camera = cam;
        Ok(())
    })
}

/// Learning rate at `epoch` for a run of `total_epochs` (even) epochs.
///
/// # Safety
/// `rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_lr_at_epoch(total_epochs: usize, base_lr: f64, epoch: usize, rate: *mut f64) -> IpganStatus {
    guard(|| {
        non_null(rate, "rate")?;
        let cfg = TrainConfig { total_epochs, base_lr, ..TrainConfig::gan_default() };
        cfg.validate().map_err(fail)?;
        *rate = lr_at_epoch(&cfg, epoch).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_manifest_load(path: *const c_char, out: *mut *mut IpganManifest) -> IpganStatus {
    guard(|| {
        let path = PathBuf::from(read_str(path, "path")?);
        non_null(out, "out")?;
        let inner = load_manifest(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(IpganManifest { inner }));
        Ok(())
    })
}

/// # Safety
/// `manifest` must come from [`ipgan_manifest_load`]; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ipgan_manifest_free(manifest: *mut IpganManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Record count, camera count `L` and identity count `N`.
///
/// # Safety
/// `manifest` must be a live handle; each output may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn ipgan_manifest_info(
    manifest: *const IpganManifest,
    records: *mut usize,
    cameras: *mut usize,
    identities: *mut usize,
) -> IpganStatus {
    guard(|| {
        non_null(manifest, "manifest")?;
        let m = &(*manifest).inner;
        for (p, v) in [(records, m.len()), (cameras, m.num_cameras), (identities, m.num_identities)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Labels of record `index`.
///
/// # Safety
/// `manifest` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_manifest_record(
    manifest: *const IpganManifest,
    index: usize,
    identity: *mut i64,
    camera: *mut u32,
) -> IpganStatus {
    guard(|| {
        non_null(manifest, "manifest")?;
        non_null(identity, "identity")?;
        non_null(camera, "camera")?;
        let r = (&(*manifest).inner).records.get(index).ok_or_else(|| {
            set_error(format!("record {index} out of range"));
            IpganStatus::OutOfRange
        })?;
        *identity = r.identity;
        *camera = r.camera;
        Ok(())
    })
}

/// Loads any saved parameter set (generator, discriminator or classifier).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_model_load(path: *const c_char, out: *mut *mut IpganModel) -> IpganStatus {
    guard(|| {
        let path = PathBuf::from(read_str(path, "path")?);
        non_null(out, "out")?;
        let inner = ModelParams::load(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(IpganModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ipgan_model_load`]; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ipgan_model_free(model: *mut IpganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total number of trainable scalars.
///
/// # Safety
/// `model` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_model_num_parameters(model: *const IpganModel, count: *mut usize) -> IpganStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(count, "count")?;
        *count = (*model).inner.num_parameters();
        Ok(())
    })
}

/// Translates one `height x width x channels` image (row-major, values in
/// [-1, 1]) into `domain` (0 = source, k = target camera k).
///
/// # Safety
/// `pixels` and `output` must each hold `height * width * channels` floats.
#[no_mangle]
pub unsafe extern "C" fn ipgan_generator_translate(
    model: *const IpganModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    domain: usize,
    output: *mut f32,
) -> IpganStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(pixels, "pixels")?;
        non_null(output, "output")?;
        let g = &(*model).inner;
        let n = height * width * channels;
        let img = ImageTensor::new(height, width, channels, std::slice::from_raw_parts(pixels, n).to_vec()).map_err(fail)?;
        let cfg = ipgan::gan::generator_config(g).map_err(fail)?;
        let label = DomainLabel::new(domain, cfg.num_domains).map_err(fail)?;
        let out = translate_image(g, &img, label).map_err(fail)?;
        std::slice::from_raw_parts_mut(output, n).copy_from_slice(out.data());
        Ok(())
    })
}

unsafe fn features(data: *const f64, ids: *const i64, cams: *const u32, rows: usize, dim: usize) -> Result<FeatureMatrix, IpganStatus> {
    if rows > 0 {
        non_null(data, "features")?;
        non_null(ids, "identities")?;
        non_null(cams, "cameras")?;
    }
    let flat = if rows == 0 { &[][..] } else { std::slice::from_raw_parts(data, rows * dim) };
    let matrix = flat.chunks(dim.max(1)).take(rows).map(<[f64]>::to_vec).collect();
    let (ids, cams) = if rows == 0 {
        (Vec::new(), Vec::new())
    } else {
        (std::slice::from_raw_parts(ids, rows).to_vec(), std::slice::from_raw_parts(cams, rows).to_vec())
    };
    FeatureMatrix::new(matrix, ids, cams).map_err(fail)
}

/// Single-query CMC (depth `k`) and mAP over row-major feature matrices.
///
/// # Safety
/// Feature arrays hold `rows * dim` doubles; label arrays hold `rows`
/// entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_evaluate(
    query: *const f64,
    query_ids: *const i64,
    query_cams: *const u32,
    num_queries: usize,
    gallery: *const f64,
    gallery_ids: *const i64,
    gallery_cams: *const u32,
    num_gallery: usize,
    dim: usize,
    k: usize,
    out: *mut *mut IpganEvalResult,
) -> IpganStatus {
    guard(|| {
        non_null(out, "out")?;
        let q = features(query, query_ids, query_cams, num_queries, dim)?;
        let g = features(gallery, gallery_ids, gallery_cams, num_gallery, dim)?;
        let inner = compute_cmc_map(&q, &g, k).map_err(fail)?;
        *out = Box::into_raw(Box::new(IpganEvalResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`ipgan_evaluate`]; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ipgan_eval_result_free(result: *mut IpganEvalResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// mAP and the number of skipped queries.
///
/// # Safety
/// `result` must be a live handle; outputs may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn ipgan_eval_result_summary(result: *const IpganEvalResult, map: *mut f64, skipped: *mut usize) -> IpganStatus {
    guard(|| {
        non_null(result, "result")?;
        let r = &(*result).inner;
        if !map.is_null() {
            *map = r.map;
        }
        if !skipped.is_null() {
            *skipped = r.skipped_queries;
        }
        Ok(())
    })
}

/// Rank-`rank` accuracy (1-based).
///
/// # Safety
/// `result` must be a live handle and `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn ipgan_eval_result_cmc(result: *const IpganEvalResult, rank: usize, accuracy: *mut f64) -> IpganStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(accuracy, "accuracy")?;
        let cmc = &(&(*result).inner).cmc;
        if rank == 0 || rank > cmc.len() {
            set_error(format!("rank {rank} outside 1..={}", cmc.len()));
            return Err(IpganStatus::OutOfRange);
        }
        *accuracy = cmc[rank - 1];
        Ok(())
    })
}
