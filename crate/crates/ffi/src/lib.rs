//! C interface to the depth evaluation toolkit.
//!
//! Every fallible function returns a [`DkStatus`]. On failure a message is
//! kept per thread and can be read with [`dk_last_error`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Panics never cross the boundary; they surface as
//! `DK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use depthkit::combine::image_oracle;
use depthkit::io::{load_manifest, read_depth_png16, read_pfm, read_reports, write_pfm, write_report, ReportFormat};
use depthkit::metrics::{
    average_rank_with, compute_metrics, evaluate_dataset, DepthMap, Metric, MetricReport, PredictionDir, ScoreGrid, Space, TieRule,
};
use depthkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Malformed = 5,
    Unsupported = 6,
    MissingSidecar = 7,
    Schema = 8,
    MissingPredictions = 9,
    DegenerateGroundTruth = 10,
    IncompleteGrid = 11,
    NonFinite = 12,
    Internal = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkSpace {
    Depth = 0,
    Disparity = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkMetric {
    Delta1 = 0,
    AbsRel = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkTieRule {
    Competition = 0,
    Fractional = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkReportFormat {
    Csv = 0,
    Json = 1,
}

/// Metrics of one image. `delta1` is a fraction in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DkMetrics {
    pub delta1: f64,
    pub absrel: f64,
    pub valid_pixels: usize,
    pub degenerate: bool,
}

/// A depth or disparity raster with its validity mask.
pub struct DkDepthMap(DepthMap);

/// Per-image and aggregate metrics of one method on one dataset.
pub struct DkReport(MetricReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DkStatus {
    match e {
        Error::Shape { .. } => DkStatus::Shape,
        Error::InvalidArgument(_) => DkStatus::InvalidArgument,
        Error::NonFinite(_) | Error::Diverged { .. } => DkStatus::NonFinite,
        Error::DegenerateGroundTruth(_) => DkStatus::DegenerateGroundTruth,
        Error::Unsupported { .. } => DkStatus::Unsupported,
        Error::MissingSidecar(_) => DkStatus::MissingSidecar,
        Error::Malformed { .. } | Error::Csv(_) | Error::Image(_) => DkStatus::Malformed,
        Error::Schema { .. } | Error::Json(_) => DkStatus::Schema,
        Error::MissingPredictions { .. } => DkStatus::MissingPredictions,
        Error::IncompleteGrid(_) => DkStatus::IncompleteGrid,
        Error::Io { .. } => DkStatus::Io,
        _ => DkStatus::Internal,
    }
}

struct Fail(DkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DkStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DkStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be NULL or a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(DkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_space(s: DkSpace) -> Space {
    match s {
        DkSpace::Depth => Space::Depth,
        DkSpace::Disparity => Space::Disparity,
    }
}

fn to_metric(m: DkMetric) -> Metric {
    match m {
        DkMetric::Delta1 => Metric::Delta1,
        DkMetric::AbsRel => Metric::AbsRel,
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a map from `height * width` row-major values. Non-finite values,
/// and non-positive ones in depth space, are invalid.
///
/// # Safety
/// `values` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_new(height: usize, width: usize, values: *const f64, space: DkSpace, out: *mut *mut DkDepthMap) -> DkStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(DkStatus::InvalidArgument, "size overflows".into()))?;
        let data = std::slice::from_raw_parts(values, n).to_vec();
        let map = DepthMap::new(height, width, data, to_space(space))?;
        write_out(out, boxed(DkDepthMap(map)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_read_pfm(path: *const c_char, space: DkSpace, out: *mut *mut DkDepthMap) -> DkStatus {
    guard(|| {
        let map = read_pfm(text(path, "path")?, to_space(space))?;
        write_out(out, boxed(DkDepthMap(map)), "out")
    })
}

/// Reads a 16-bit PNG. `sidecar` may be NULL to use the `.json` file next
/// to the image.
///
/// # Safety
/// `path` and a non-NULL `sidecar` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_read_png16(
    path: *const c_char,
    sidecar: *const c_char,
    space: DkSpace,
    out: *mut *mut DkDepthMap,
) -> DkStatus {
    guard(|| {
        let side = if sidecar.is_null() { None } else { Some(PathBuf::from(text(sidecar, "sidecar")?)) };
        let map = read_depth_png16(text(path, "path")?, side.as_deref(), to_space(space))?;
        write_out(out, boxed(DkDepthMap(map)), "out")
    })
}

/// # Safety
/// `map` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_write_pfm(map: *const DkDepthMap, path: *const c_char) -> DkStatus {
    guard(|| Ok(write_pfm(&reference(map, "map")?.0, text(path, "path")?)?))
}

/// # Safety
/// `map` must come from this library; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_size(map: *const DkDepthMap, height: *mut usize, width: *mut usize) -> DkStatus {
    guard(|| {
        let m = &reference(map, "map")?.0;
        write_out(height, m.height, "height")?;
        write_out(width, m.width, "width")
    })
}

/// Copies the row-major values and, when `valid` is not NULL, the mask
/// (1 valid, 0 invalid). Both buffers must hold `len` = height·width entries.
///
/// # Safety
/// `values` must have room for `len` doubles and a non-NULL `valid` for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_copy(map: *const DkDepthMap, values: *mut f64, valid: *mut u8, len: usize) -> DkStatus {
    guard(|| {
        let m = &reference(map, "map")?.0;
        if len != m.values.len() {
            return Err(Fail(DkStatus::Shape, format!("buffer holds {len} entries, map has {}", m.values.len())));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&m.values);
        if !valid.is_null() {
            for (dst, &v) in std::slice::from_raw_parts_mut(valid, len).iter_mut().zip(&m.valid) {
                *dst = u8::from(v);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `map` must be NULL or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_map_free(map: *mut DkDepthMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Affine-aligned δ1 and AbsRel of `pred` against `gt`. `pred` is resized
/// to the ground-truth resolution when they differ.
///
/// # Safety
/// `gt` and `pred` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_compute_metrics(gt: *const DkDepthMap, pred: *const DkDepthMap, out: *mut DkMetrics) -> DkStatus {
    guard(|| {
        let gt = &reference(gt, "gt")?.0;
        let pred = reference(pred, "pred")?.0.resize(gt.height, gt.width)?;
        let m = compute_metrics(gt, &pred)?;
        write_out(out, DkMetrics { delta1: m.delta1, absrel: m.absrel, valid_pixels: m.valid_pixels, degenerate: m.degenerate }, "out")
    })
}

/// Scores `<pred_dir>/<image id>.pfm` against every manifest entry.
/// `method` may be NULL to use the directory name.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_evaluate(
    manifest: *const c_char,
    pred_dir: *const c_char,
    method: *const c_char,
    jobs: usize,
    out: *mut *mut DkReport,
) -> DkStatus {
    guard(|| {
        let manifest = load_manifest(text(manifest, "manifest")?)?;
        let dir = PathBuf::from(text(pred_dir, "pred_dir")?);
        let name = if method.is_null() {
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "prediction".into())
        } else {
            text(method, "method")?.to_string()
        };
        let report = evaluate_dataset(&manifest, &PredictionDir::new(dir), &name, jobs.max(1))?;
        write_out(out, boxed(DkReport(report)), "out")
    })
}

/// Reads the `index`-th report of a CSV or JSON report file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_report_read(path: *const c_char, index: usize, out: *mut *mut DkReport) -> DkStatus {
    guard(|| {
        let mut reports = read_reports(text(path, "path")?)?;
        if index >= reports.len() {
            return Err(Fail(DkStatus::InvalidArgument, format!("file holds {} report(s), asked for #{index}", reports.len())));
        }
        write_out(out, boxed(DkReport(reports.swap_remove(index))), "out")
    })
}

/// # Safety
/// `report` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dk_report_write(report: *const DkReport, path: *const c_char, format: DkReportFormat) -> DkStatus {
    guard(|| {
        let format = match format {
            DkReportFormat::Csv => ReportFormat::Csv,
            DkReportFormat::Json => ReportFormat::Json,
        };
        Ok(write_report(&reference(report, "report")?.0, text(path, "path")?, format, None)?)
    })
}

/// Aggregate δ1 and AbsRel plus the number of per-image rows. Any output
/// pointer may be NULL.
///
/// # Safety
/// `report` must come from this library; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_report_summary(report: *const DkReport, delta1: *mut f64, absrel: *mut f64, images: *mut usize) -> DkStatus {
    guard(|| {
        let r = &reference(report, "report")?.0;
        if !delta1.is_null() {
            delta1.write(r.aggregate_delta1);
        }
        if !absrel.is_null() {
            absrel.write(r.aggregate_absrel);
        }
        if !images.is_null() {
            images.write(r.per_image.len());
        }
        Ok(())
    })
}

/// Metrics of the `index`-th image. When `id` is not NULL the image id is
/// copied into it, NUL-terminated and truncated to `id_len` bytes.
///
/// # Safety
/// `report` must come from this library; `out` must be writable; a non-NULL
/// `id` must have room for `id_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dk_report_image(report: *const DkReport, index: usize, out: *mut DkMetrics, id: *mut c_char, id_len: usize) -> DkStatus {
    guard(|| {
        let r = &reference(report, "report")?.0;
        let m = r
            .per_image
            .get(index)
            .ok_or_else(|| Fail(DkStatus::InvalidArgument, format!("image #{index} of {}", r.per_image.len())))?;
        if !id.is_null() && id_len > 0 {
            let n = m.id.len().min(id_len - 1);
            ptr::copy_nonoverlapping(m.id.as_ptr().cast::<c_char>(), id, n);
            id.add(n).write(0);
        }
        write_out(out, DkMetrics { delta1: m.delta1, absrel: m.absrel, valid_pixels: m.valid_pixels, degenerate: m.degenerate }, "out")
    })
}

/// # Safety
/// `report` must be NULL or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dk_report_free(report: *mut DkReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Per-image selection of the better of two reports on `criterion`.
/// `fraction_a` (may be NULL) receives the percentage of images taken
/// from `a`.
///
/// # Safety
/// Reports must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_image_oracle(
    a: *const DkReport,
    b: *const DkReport,
    criterion: DkMetric,
    out: *mut *mut DkReport,
    fraction_a: *mut f64,
) -> DkStatus {
    guard(|| {
        let o = image_oracle(&reference(a, "a")?.0, &reference(b, "b")?.0, to_metric(criterion))?;
        if !fraction_a.is_null() {
            fraction_a.write(o.fraction_a);
        }
        write_out(out, boxed(DkReport(o.report)), "out")
    })
}

/// Average rank of `methods` rows over `columns` score columns.
/// `scores` is row-major `methods × columns`; `column_metrics` gives the
/// direction of each column. `average` and `rounded` (one decimal,
/// half-up; may be NULL) receive one value per method.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dk_average_rank(
    scores: *const f64,
    methods: usize,
    columns: usize,
    column_metrics: *const DkMetric,
    ties: DkTieRule,
    average: *mut f64,
    rounded: *mut f64,
) -> DkStatus {
    guard(|| {
        if scores.is_null() || column_metrics.is_null() || average.is_null() {
            return Err(null("scores, column_metrics or average"));
        }
        let n = methods.checked_mul(columns).ok_or_else(|| Fail(DkStatus::InvalidArgument, "size overflows".into()))?;
        let flat = std::slice::from_raw_parts(scores, n);
        let metrics = std::slice::from_raw_parts(column_metrics, columns);
        let grid = ScoreGrid {
            methods: (0..methods).map(|i| format!("method{i}")).collect(),
            columns: metrics.iter().enumerate().map(|(i, &m)| (format!("column{i}"), to_metric(m))).collect(),
            scores: if columns == 0 { vec![Vec::new(); methods] } else { flat.chunks(columns).map(<[f64]>::to_vec).collect() },
        };
        let rule = match ties {
            DkTieRule::Competition => TieRule::Competition,
            DkTieRule::Fractional => TieRule::Fractional,
        };
        let ranking = average_rank_with(&grid, rule)?;
        std::slice::from_raw_parts_mut(average, methods).copy_from_slice(&ranking.average_rank);
        if !rounded.is_null() {
            std::slice::from_raw_parts_mut(rounded, methods).copy_from_slice(&ranking.rounded);
        }
        Ok(())
    })
}
