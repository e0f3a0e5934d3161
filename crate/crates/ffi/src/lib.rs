//! C ABI over the asymcycle core crate.
//!
//! Every fallible call returns an [`AcStatus`]; on failure a description is
//! kept per thread and can be read with [`ac_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller releases with the
//! matching `*_free` function. Images are row-major `float` arrays in
//! `[0, 1]`, masks are row-major bytes (non-zero = set).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use asymcycle::eval::{dsc, optimal_two_threshold, wilcoxon_signed_rank};
use asymcycle::nets::ModelBundle;
use asymcycle::objectives::{cycle_asymmetric, cycle_symmetric};
use asymcycle::phantom::{generate_cohort, Cohort, CohortConfig, Domain, Image, Mask, Severity};
use asymcycle::tensor::Tensor;
use asymcycle::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Corrupt = 5,
    Empty = 6,
    Panic = 7,
    Other = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcCycleMode {
    Symmetric = 0,
    Asymmetric = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AcThresholds {
    pub t_low: f64,
    pub t_high: f64,
    pub dsc: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AcWilcoxon {
    pub n: usize,
    pub w_plus: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
    pub p_less: f64,
    pub exact: bool,
    pub degenerate: bool,
}

/// Slice metadata. `severity`: 0 healthy, 1 moderate, 2 severe.
/// `pathological` is true for X-domain slices.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AcSliceInfo {
    pub height: usize,
    pub width: usize,
    pub slice_index: usize,
    pub severity: i32,
    pub pathological: bool,
    pub has_twin: bool,
}

/// Trained translator bundle.
pub struct AcModel(ModelBundle);

/// Synthetic phantom cohort.
pub struct AcCohort(Cohort);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AcStatus {
    match e {
        Error::Config(_) | Error::Geometry(_) | Error::TooFewPatients(_) => AcStatus::InvalidArgument,
        Error::Shape(_) => AcStatus::Shape,
        Error::Empty(_) => AcStatus::Empty,
        Error::Io { .. } => AcStatus::Io,
        Error::Corrupt { .. } | Error::Json(_) => AcStatus::Corrupt,
        _ => AcStatus::Other,
    }
}

struct Fail(AcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AcStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn mask_in(p: *const u8, h: usize, w: usize, what: &str) -> Result<Mask, Fail> {
    let bytes = slice_in(p, h * w, what)?;
    Ok(Mask::from_vec(h, w, bytes.iter().map(|&b| b != 0).collect())?)
}

unsafe fn image_in(p: *const f32, h: usize, w: usize, what: &str) -> Result<Image, Fail> {
    Ok(Image::from_vec(h, w, slice_in(p, h * w, what)?.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model bundle written by the training pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_model_load(path: *const c_char, out: *mut *mut AcModel) -> AcStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(AcStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let bundle = ModelBundle::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(AcModel(bundle)));
        Ok(())
    })
}

/// Loads a model bundle from an in-memory archive.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut AcModel) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let bundle = ModelBundle::from_bytes(slice_in(bytes, len, "bytes")?)?;
        *out = Box::into_raw(Box::new(AcModel(bundle)));
        Ok(())
    })
}

/// Side length of the square images the model accepts, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_model_image_size(model: *const AcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.f.spec.image_size)
}

/// Translates a pathological image into its pseudo-healthy counterpart.
///
/// # Safety
/// `pixels` and `out` must each hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn ac_model_to_healthy(
    model: *const AcModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    out: *mut f32,
) -> AcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let img = image_in(pixels, height, width, "pixels")?;
        if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Fail(AcStatus::InvalidArgument, "pixels must lie in [0, 1]".into()));
        }
        let healed = model.0.to_healthy(&img)?;
        slice_out(out, height * width, "out")?.copy_from_slice(&healed.data);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_model_free(model: *mut AcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generates the default phantom cohort at the given size and seed.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_cohort_generate(seed: u64, image_size: usize, out: *mut *mut AcCohort) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let config = CohortConfig {
            image_size,
            seed,
            ..CohortConfig::default()
        };
        *out = Box::into_raw(Box::new(AcCohort(generate_cohort(&config)?)));
        Ok(())
    })
}

/// Number of slices (X and Y domains, without twins).
///
/// # Safety
/// `cohort` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_cohort_len(cohort: *const AcCohort) -> usize {
    cohort.as_ref().map_or(0, |c| c.0.slices.len())
}

/// # Safety
/// `cohort` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_cohort_slice_info(
    cohort: *const AcCohort,
    index: usize,
    out: *mut AcSliceInfo,
) -> AcStatus {
    guard(|| {
        let cohort = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = cohort
            .0
            .slices
            .get(index)
            .ok_or_else(|| Fail(AcStatus::InvalidArgument, format!("slice {index} out of range")))?;
        *out = AcSliceInfo {
            height: s.pixels.height,
            width: s.pixels.width,
            slice_index: s.slice_index,
            severity: match s.severity {
                Severity::Healthy => 0,
                Severity::Moderate => 1,
                Severity::Severe => 2,
            },
            pathological: s.domain == Domain::PathologicalX,
            has_twin: s.healthy_twin_id.is_some(),
        };
        Ok(())
    })
}

/// Copies a slice's pixels and masks. Any output pointer may be null to
/// skip it; non-null ones must hold `height * width` elements.
///
/// # Safety
/// See above.
#[no_mangle]
pub unsafe extern "C" fn ac_cohort_slice_data(
    cohort: *const AcCohort,
    index: usize,
    pixels: *mut f32,
    muscle_mask: *mut u8,
    infiltration_mask: *mut u8,
) -> AcStatus {
    guard(|| {
        let cohort = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        let s = cohort
            .0
            .slices
            .get(index)
            .ok_or_else(|| Fail(AcStatus::InvalidArgument, format!("slice {index} out of range")))?;
        let n = s.pixels.len();
        if !pixels.is_null() {
            slice_out(pixels, n, "pixels")?.copy_from_slice(&s.pixels.data);
        }
        for (p, m) in [(muscle_mask, &s.gt_mask), (infiltration_mask, &s.infiltration_mask)] {
            if !p.is_null() {
                for (o, &b) in slice_out(p, n, "mask")?.iter_mut().zip(&m.data) {
                    *o = b as u8;
                }
            }
        }
        Ok(())
    })
}

/// # Safety
/// `cohort` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_cohort_free(cohort: *mut AcCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// Dice overlap of two masks of `n` bytes; 1 when both are empty.
///
/// # Safety
/// `a` and `b` must hold `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_dsc(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = dsc(&mask_in(a, 1, n, "a")?, &mask_in(b, 1, n, "b")?)?;
        Ok(())
    })
}

/// Intensity band `[t_low, t_high]` maximizing overlap with the mask after
/// quantizing to `levels` gray levels.
///
/// # Safety
/// `pixels` and `mask` must hold `height * width` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_optimal_two_threshold(
    pixels: *const f32,
    mask: *const u8,
    height: usize,
    width: usize,
    levels: usize,
    out: *mut AcThresholds,
) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = optimal_two_threshold(
            &image_in(pixels, height, width, "pixels")?,
            &mask_in(mask, height, width, "mask")?,
            levels,
        )?;
        *out = AcThresholds {
            t_low: t.t_low,
            t_high: t.t_high,
            dsc: t.dsc,
        };
        Ok(())
    })
}

/// Paired signed-rank test on `a - b`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_wilcoxon(a: *const f64, b: *const f64, n: usize, out: *mut AcWilcoxon) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = wilcoxon_signed_rank(slice_in(a, n, "a")?, slice_in(b, n, "b")?)?;
        *out = AcWilcoxon {
            n: r.n,
            w_plus: r.w_plus,
            p_two_sided: r.p_two_sided,
            p_greater: r.p_greater,
            p_less: r.p_less,
            exact: r.exact,
            degenerate: r.degenerate,
        };
        Ok(())
    })
}

/// Cycle-consistency value for one sample of `n` values per image. The
/// X-side arrays are ignored (and may be null) in asymmetric mode.
///
/// # Safety
/// Non-null arrays must hold `n` floats; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_cycle_loss(
    mode: AcCycleMode,
    w_c: f64,
    recon_y: *const f32,
    y: *const f32,
    recon_x: *const f32,
    x: *const f32,
    n: usize,
    out: *mut f64,
) -> AcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = |p: *const f32, what: &str| -> Result<Vec<Tensor<f32>>, Fail> {
            Ok(vec![Tensor::from_vec(1, 1, n, slice_in(p, n, what)?.to_vec())?])
        };
        *out = match mode {
            AcCycleMode::Asymmetric => cycle_asymmetric(&t(recon_y, "recon_y")?, &t(y, "y")?, w_c)?.value,
            AcCycleMode::Symmetric => {
                cycle_symmetric(
                    &t(recon_y, "recon_y")?,
                    &t(y, "y")?,
                    &t(recon_x, "recon_x")?,
                    &t(x, "x")?,
                    w_c,
                )?
                .value
            }
        };
        Ok(())
    })
}
