//! C ABI for the gdmp solver.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `*_from_json` functions and released by the matching `*_free`. Every
//! fallible call returns a [`GdmpStatus`]; on failure the message is kept per
//! thread and read with [`gdmp_last_error_message`]. Panics never unwind into
//! C: they are caught and reported as `GDMP_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use gdmp::bodies::{StarBody, SupportPolytope};
use gdmp::dual_measures::{dual_curvature_measure, dual_mixed_volume, DiscreteMeasure};
use gdmp::io::{self, ConfigDoc, MeasureDoc, StarBodyDoc};
use gdmp::solver::{minimize_on_grid, SolveConfig, SolveReport, SolveStatus};
use gdmp::sphere_quad::{build_grid, GridKind, SphereGrid, UnitVector};
use gdmp::GdmpError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdmpGridKind {
    Product = 0,
    MonteCarlo = 1,
    Cubed = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdmpSolveStatus {
    Converged = 0,
    MaxIter = 1,
    RefusedPreconditions = 2,
}

pub struct GdmpGrid(SphereGrid);
pub struct GdmpStarBody(StarBody);
pub struct GdmpPolytope(SupportPolytope);
pub struct GdmpMeasure(DiscreteMeasure);
pub struct GdmpSolveReport(SolveReport);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(GdmpStatus, String);

impl From<GdmpError> for Failure {
    fn from(e: GdmpError) -> Self {
        let status = match &e {
            GdmpError::Parse { .. } => GdmpStatus::Parse,
            GdmpError::NonFinite { .. } | GdmpError::Unbounded(_) => GdmpStatus::Numerical,
            _ => GdmpStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GdmpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> GdmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            GdmpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GdmpStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn floats<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(GdmpStatus::InvalidInput, format!("{what} is not UTF-8: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies `src` into `buf` when it fits; `*needed` always receives its length.
unsafe fn copy_out(src: &[f64], buf: *mut f64, cap: usize, needed: *mut usize) -> Result<(), Failure> {
    if !needed.is_null() {
        *needed = src.len();
    }
    if cap < src.len() {
        return Err(Failure(
            GdmpStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

unsafe fn unit_rows(dim: usize, count: usize, flat: *const f64, what: &str) -> Result<Vec<UnitVector>, Failure> {
    let coords = floats(flat, dim * count, what)?;
    coords
        .chunks(dim.max(1))
        .map(|c| UnitVector::new(c.to_vec()).map_err(Failure::from))
        .collect()
}

/// Copies the last error message of this thread (NUL-terminated, truncated
/// to `cap`) and returns its full length in bytes, excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn gdmp_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_grid_new(
    dim: usize,
    resolution: usize,
    kind: GdmpGridKind,
    seed: u64,
    out: *mut *mut GdmpGrid,
) -> GdmpStatus {
    guard(|| {
        let (kind, seed) = match kind {
            GdmpGridKind::Product => (GridKind::Product, None),
            GdmpGridKind::MonteCarlo => (GridKind::MonteCarlo, Some(seed)),
            GdmpGridKind::Cubed => (GridKind::Cubed, None),
        };
        put(out, GdmpGrid(build_grid(dim, resolution, kind, seed)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_grid_len(grid: *const GdmpGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_grid_free(grid: *mut GdmpGrid) {
    release(grid)
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_star_ball_new(dim: usize, radius: f64, out: *mut *mut GdmpStarBody) -> GdmpStatus {
    guard(|| put(out, GdmpStarBody(StarBody::ball(dim, radius)?)))
}

/// Axis-aligned ellipsoid; `semi_axes` holds `dim` values in ascending order.
#[no_mangle]
pub unsafe extern "C" fn gdmp_star_ellipsoid_new(
    dim: usize,
    semi_axes: *const f64,
    out: *mut *mut GdmpStarBody,
) -> GdmpStatus {
    guard(|| {
        let axes = floats(semi_axes, dim, "semi_axes")?.to_vec();
        put(out, GdmpStarBody(StarBody::ellipsoid(axes, None)?))
    })
}

/// Parses a `gdmp.star_body/1` document.
#[no_mangle]
pub unsafe extern "C" fn gdmp_star_from_json(json: *const c_char, out: *mut *mut GdmpStarBody) -> GdmpStatus {
    guard(|| {
        let doc: StarBodyDoc = io::parse_document(text(json, "json")?, "star body")?;
        put(out, GdmpStarBody(doc.into_body()?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_star_free(body: *mut GdmpStarBody) {
    release(body)
}

/// Polytope from `count` unit normals (row-major, `count * dim` values) and
/// `count` support numbers.
#[no_mangle]
pub unsafe extern "C" fn gdmp_polytope_new(
    dim: usize,
    count: usize,
    normals: *const f64,
    support: *const f64,
    out: *mut *mut GdmpPolytope,
) -> GdmpStatus {
    guard(|| {
        let normals = unit_rows(dim, count, normals, "normals")?;
        let support = floats(support, count, "support")?.to_vec();
        put(out, GdmpPolytope(SupportPolytope::new(normals, support)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_polytope_free(polytope: *mut GdmpPolytope) {
    release(polytope)
}

/// Measure from `count` unit atoms (row-major) and nonnegative weights.
#[no_mangle]
pub unsafe extern "C" fn gdmp_measure_new(
    dim: usize,
    count: usize,
    atoms: *const f64,
    weights: *const f64,
    out: *mut *mut GdmpMeasure,
) -> GdmpStatus {
    guard(|| {
        let atoms = unit_rows(dim, count, atoms, "atoms")?;
        let weights = floats(weights, count, "weights")?.to_vec();
        put(out, GdmpMeasure(DiscreteMeasure::with_zero_weights(atoms, weights)?))
    })
}

/// Parses a `gdmp.measure/1` document.
#[no_mangle]
pub unsafe extern "C" fn gdmp_measure_from_json(json: *const c_char, out: *mut *mut GdmpMeasure) -> GdmpStatus {
    guard(|| {
        let doc: MeasureDoc = io::parse_document(text(json, "json")?, "measure")?;
        put(out, GdmpMeasure(doc.into_measure()?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_measure_len(measure: *const GdmpMeasure) -> usize {
    measure.as_ref().map_or(0, |m| m.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_measure_weights(
    measure: *const GdmpMeasure,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> GdmpStatus {
    guard(|| copy_out(handle(measure, "measure")?.0.weights(), buf, cap, needed))
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_measure_free(measure: *mut GdmpMeasure) {
    release(measure)
}

/// Discrete dual mixed volume of `polytope` against `star` on `grid`.
#[no_mangle]
pub unsafe extern "C" fn gdmp_dual_volume(
    polytope: *const GdmpPolytope,
    star: *const GdmpStarBody,
    q: f64,
    grid: *const GdmpGrid,
    out: *mut f64,
) -> GdmpStatus {
    guard(|| {
        let v = dual_mixed_volume(&handle(polytope, "polytope")?.0, &handle(star, "star")?.0, q, &handle(grid, "grid")?.0)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = v.value;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_curvature_measure(
    polytope: *const GdmpPolytope,
    star: *const GdmpStarBody,
    q: f64,
    grid: *const GdmpGrid,
    out: *mut *mut GdmpMeasure,
) -> GdmpStatus {
    guard(|| {
        let mu = dual_curvature_measure(&handle(polytope, "polytope")?.0, &handle(star, "star")?.0, q, &handle(grid, "grid")?.0)?;
        put(out, GdmpMeasure(mu))
    })
}

/// Solves on `grid`. `config_json` is a `gdmp.solve_config/1` document or
/// NULL for the defaults with the given `q`; when a document is given its
/// own `q` is used and the argument is ignored.
#[no_mangle]
pub unsafe extern "C" fn gdmp_solve(
    measure: *const GdmpMeasure,
    star: *const GdmpStarBody,
    q: f64,
    config_json: *const c_char,
    grid: *const GdmpGrid,
    out: *mut *mut GdmpSolveReport,
) -> GdmpStatus {
    guard(|| {
        let mu = &handle(measure, "measure")?.0;
        let cfg = if config_json.is_null() {
            SolveConfig {
                q,
                ..SolveConfig::default()
            }
        } else {
            let doc: ConfigDoc = io::parse_document(text(config_json, "config_json")?, "solve config")?;
            let (dim, cfg) = doc.into_config()?;
            if dim != mu.dim() {
                return Err(Failure(
                    GdmpStatus::InvalidInput,
                    format!("config dim {dim} does not match the measure's {}", mu.dim()),
                ));
            }
            cfg
        };
        let report = minimize_on_grid(mu, &handle(star, "star")?.0, &cfg, &handle(grid, "grid")?.0)?;
        put(out, GdmpSolveReport(report))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_report_status(report: *const GdmpSolveReport, out: *mut GdmpSolveStatus) -> GdmpStatus {
    guard(|| {
        let status = match handle(report, "report")?.0.status {
            SolveStatus::Converged => GdmpSolveStatus::Converged,
            SolveStatus::MaxIter => GdmpSolveStatus::MaxIter,
            SolveStatus::RefusedPreconditions => GdmpSolveStatus::RefusedPreconditions,
        };
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = status;
        Ok(())
    })
}

/// Support numbers of the solution; fails with `GDMP_STATUS_INVALID_INPUT`
/// when the solve was refused.
#[no_mangle]
pub unsafe extern "C" fn gdmp_report_support(
    report: *const GdmpSolveReport,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> GdmpStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let h = r
            .solution
            .as_ref()
            .ok_or_else(|| Failure(GdmpStatus::InvalidInput, "the solve produced no solution".into()))?;
        copy_out(h, buf, cap, needed)
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_report_residual(report: *const GdmpSolveReport, out: *mut f64) -> GdmpStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let res = r
            .residual
            .as_ref()
            .ok_or_else(|| Failure(GdmpStatus::InvalidInput, "the solve produced no residual".into()))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = res.residual;
        Ok(())
    })
}

/// Canonical JSON of the report. Writes at most `cap` bytes including the
/// terminating NUL; `*needed` receives the length without the NUL.
#[no_mangle]
pub unsafe extern "C" fn gdmp_report_json(
    report: *const GdmpSolveReport,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> GdmpStatus {
    guard(|| {
        let bytes = io::canonical_bytes(&handle(report, "report")?.0)?;
        if !needed.is_null() {
            *needed = bytes.len();
        }
        if cap < bytes.len() + 1 {
            return Err(Failure(
                GdmpStatus::BufferTooSmall,
                format!("buffer holds {cap} bytes, {} needed", bytes.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gdmp_report_free(report: *mut GdmpSolveReport) {
    release(report)
}
