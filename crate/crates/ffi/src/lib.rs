//! C ABI over the metric, curvature and holonomy core.
//!
//! Metrics live behind the opaque [`FlMetric`] handle. Every fallible call
//! returns an [`FlStatus`]; on failure the message is available from
//! [`fl_last_error_message`] on the same thread. Output arrays are
//! caller-allocated and row-major, with their capacity passed alongside.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use framelab::dsl::{parse_metric, BuiltinFamily, MetricSpec};
use framelab::holonomy::{Curve, Transporter};
use framelab::lie::group_distance;
use framelab::riemann::Geometry;
use framelab::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    NullPointer = 1,
    /// Metric source or builtin id rejected.
    Parse = 2,
    /// Point outside the chart or metric degenerate there.
    Domain = 3,
    /// Wrong lengths, unclosed loops and similar caller errors.
    InvalidArgument = 4,
    /// Output buffer too small.
    BufferTooSmall = 5,
    /// Integrator or logarithm failure.
    Numerical = 6,
    Panic = 7,
}

/// Opaque metric handle.
pub struct FlMetric {
    spec: MetricSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(FlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dsl(_) => FlStatus::Parse,
            Error::OutsideDomain(_) | Error::NotSpd { .. } | Error::DomainExit { .. } => FlStatus::Domain,
            Error::StepLimit(_) | Error::LogBranch(_) => FlStatus::Numerical,
            _ => FlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<framelab::dsl::DslError> for Failure {
    fn from(e: framelab::dsl::DslError) -> Self {
        Failure(FlStatus::Parse, e.to_string())
    }
}

fn fail<T>(status: FlStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FlStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return fail(FlStatus::NullPointer, "string argument is null");
    }
    CStr::from_ptr(s).to_str().or_else(|_| fail(FlStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn metric<'a>(m: *const FlMetric) -> Result<&'a MetricSpec, Failure> {
    if m.is_null() {
        return fail(FlStatus::NullPointer, "metric handle is null");
    }
    Ok(&(*m).spec)
}

unsafe fn input<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return fail(FlStatus::NullPointer, format!("{what} is null"));
    }
    if len != want {
        return fail(FlStatus::InvalidArgument, format!("{what} has length {len}, expected {want}"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, cap: usize, want: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(FlStatus::NullPointer, "output buffer is null");
    }
    if cap < want {
        return fail(FlStatus::BufferTooSmall, format!("output needs {want} values, capacity is {cap}"));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

unsafe fn put_handle(out: *mut *mut FlMetric, spec: MetricSpec) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(FlMetric { spec }));
    Ok(())
}

fn write_rows(out: &mut [f64], m: &DMatrix<f64>) {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..c {
            out[i * c + j] = m[(i, j)];
        }
    }
}

/// Parses `.gmet` source into a new handle stored in `*out`.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_metric_parse(source: *const c_char, out: *mut *mut FlMetric) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return fail(FlStatus::NullPointer, "out is null");
        }
        let spec = parse_metric(text(source)?)?;
        put_handle(out, spec)
    })
}

/// Instantiates a builtin family such as `smoothed-cone:a=0.5,eps=0.1`.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_metric_builtin(id: *const c_char, out: *mut *mut FlMetric) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return fail(FlStatus::NullPointer, "out is null");
        }
        let spec = BuiltinFamily::from_id(text(id)?)?.instantiate()?;
        put_handle(out, spec)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fl_metric_free(m: *mut FlMetric) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Chart dimension, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_metric_dim(m: *const FlMetric) -> usize {
    if m.is_null() {
        0
    } else {
        (*m).spec.dim()
    }
}

/// `g_{ij}` at `point` into `out` (`n²` values).
///
/// # Safety
/// `point` must hold `point_len` values and `out` at least `out_cap`.
#[no_mangle]
pub unsafe extern "C" fn fl_metric_eval(
    m: *const FlMetric,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> FlStatus {
    guard(|| {
        let spec = metric(m)?;
        let n = spec.dim();
        let p = input(point, point_len, n, "point")?;
        let o = output(out, out_cap, n * n)?;
        spec.check_domain(p)?;
        write_rows(o, &spec.eval_metric(p));
        Ok(())
    })
}

unsafe fn with_geometry(
    m: *const FlMetric,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_cap: usize,
    rank: u32,
    fill: impl FnOnce(&Geometry, &[f64], &mut [f64]),
) -> FlStatus {
    guard(|| {
        let spec = metric(m)?;
        let n = spec.dim();
        let p = input(point, point_len, n, "point")?;
        let o = output(out, out_cap, n.pow(rank))?;
        let geo = Geometry::at(spec, p, 2)?;
        fill(&geo, p, o);
        Ok(())
    })
}

/// `Γ^k_{ij}` at `point`, indexed `[k][i][j]` (`n³` values).
///
/// # Safety
/// As for [`fl_metric_eval`].
#[no_mangle]
pub unsafe extern "C" fn fl_christoffel(
    m: *const FlMetric,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> FlStatus {
    with_geometry(m, point, point_len, out, out_cap, 3, |geo, p, o| {
        o.copy_from_slice(&geo.connection(p).gamma.data);
    })
}

/// `R_{ijkl} = ⟨R(∂_i, ∂_j)∂_k, ∂_l⟩`, indexed `[i][j][k][l]` (`n⁴` values).
///
/// # Safety
/// As for [`fl_metric_eval`].
#[no_mangle]
pub unsafe extern "C" fn fl_riemann(
    m: *const FlMetric,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> FlStatus {
    with_geometry(m, point, point_len, out, out_cap, 4, |geo, p, o| {
        o.copy_from_slice(&geo.curvature(p).lower.data);
    })
}

/// `Ric_{ij}` at `point` (`n²` values).
///
/// # Safety
/// As for [`fl_metric_eval`].
#[no_mangle]
pub unsafe extern "C" fn fl_ricci(
    m: *const FlMetric,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> FlStatus {
    with_geometry(m, point, point_len, out, out_cap, 2, |geo, _, o| write_rows(o, &geo.ricci()))
}

/// Holonomy of the closed polyline through `count` vertices (`count·n`
/// values, row per vertex) in the Gram–Schmidt gauge at its first vertex.
/// Writes the `n×n` orthogonal element to `out` and the loop length to
/// `*length` when it is not null.
///
/// # Safety
/// `vertices` must hold `count·n` values, `out` at least `out_cap`, and
/// `length` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn fl_holonomy_polyline(
    m: *const FlMetric,
    vertices: *const f64,
    count: usize,
    out: *mut f64,
    out_cap: usize,
    length: *mut f64,
) -> FlStatus {
    guard(|| {
        let spec = metric(m)?;
        let n = spec.dim();
        if count < 2 {
            return fail(FlStatus::InvalidArgument, "a loop needs at least two vertices");
        }
        let flat = input(vertices, count * n, count * n, "vertices")?;
        let o = output(out, out_cap, n * n)?;
        let pts: Vec<Vec<f64>> = flat.chunks(n).map(<[f64]>::to_vec).collect();
        let sample = Transporter::new(spec).holonomy(&Curve::polyline(&pts, "ffi")?)?;
        write_rows(o, &sample.element);
        if !length.is_null() {
            *length = sample.length;
        }
        Ok(())
    })
}

/// Bi-invariant distance between two `n×n` orthogonal matrices (row-major).
///
/// # Safety
/// `a` and `b` must each hold `n²` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_group_distance(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return fail(FlStatus::NullPointer, "out is null");
        }
        if n == 0 {
            return fail(FlStatus::InvalidArgument, "n must be positive");
        }
        let ma = DMatrix::from_row_slice(n, n, input(a, n * n, n * n, "a")?);
        let mb = DMatrix::from_row_slice(n, n, input(b, n * n, n * n, "b")?);
        for (name, x) in [("a", &ma), ("b", &mb)] {
            if (x.transpose() * x - DMatrix::identity(n, n)).amax() > 1e-8 {
                return fail(FlStatus::InvalidArgument, format!("{name} is not orthogonal"));
            }
        }
        *out = group_distance(&ma, &mb);
        Ok(())
    })
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
