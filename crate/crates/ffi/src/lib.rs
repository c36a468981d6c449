//! C ABI over `otthom`. Every entry point returns an [`OtthomStatus`];
//! results come back through out-pointers. On failure the message is kept
//! per thread and can be read with [`otthom_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use otthom::cell::CellOptions;
use otthom::density::{cell_value, DensityModel};
use otthom::energy::{degree_normalized_energy, energy, FlowField, MassDistribution};
use otthom::experiments::{run_experiment, ExperimentConfig};
use otthom::geodesic::{solve_geodesic, GeodesicProblem};
use otthom::geometry::Orthotope;
use otthom::graph::EmbeddedGraph;
use otthom::random_graphs::GeneratorSpec;
use otthom::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtthomStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidGraph = 4,
    SolverFailed = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Opaque graph handle.
pub struct OtthomGraph {
    inner: EmbeddedGraph,
}

/// Opaque density model handle.
pub struct OtthomDensityModel {
    inner: DensityModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OtthomStatus {
    match e {
        Error::InvalidGraph(_)
        | Error::EmptyGraphInBox
        | Error::DegenerateEdge
        | Error::GraphMismatch { .. }
        | Error::DegenerateTriangulation
        | Error::IsolatedVertexInSupport(_) => OtthomStatus::InvalidGraph,
        Error::Io(_) => OtthomStatus::Io,
        Error::Infeasible(_)
        | Error::MaxIterations { .. }
        | Error::DisconnectedSupports
        | Error::CEResidualTooLarge(_)
        | Error::NegativeDepot(_)
        | Error::SeamMismatch(_)
        | Error::GapInfeasible(_)
        | Error::NoTubePath(..)
        | Error::NoVertexInBall { .. }
        | Error::PathTooLong { .. }
        | Error::ContinuityViolation { .. } => OtthomStatus::SolverFailed,
        _ => OtthomStatus::InvalidArgument,
    }
}

enum Fail {
    Status(OtthomStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> OtthomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OtthomStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            OtthomStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(OtthomStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Fail {
    Fail::Status(OtthomStatus::InvalidArgument, msg)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(OtthomStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn graph_arg<'a>(g: *const OtthomGraph) -> Result<&'a EmbeddedGraph, Fail> {
    g.as_ref().map(|h| &h.inner).ok_or_else(|| null("graph"))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otthom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message
/// length excluding the terminator. Returns 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn otthom_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub extern "C" fn otthom_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otthom_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a graph from a JSON generator spec.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_generate(spec_json: *const c_char, out: *mut *mut OtthomGraph) -> OtthomStatus {
    guard(|| {
        let spec: GeneratorSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(|e| invalid(e.to_string()))?;
        spec.validate()?;
        let g = spec.generate()?;
        write_out(out, Box::into_raw(Box::new(OtthomGraph { inner: g })), "out")
    })
}

/// Parses a graph from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_from_json(json: *const c_char, out: *mut *mut OtthomGraph) -> OtthomStatus {
    guard(|| {
        let g = EmbeddedGraph::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(OtthomGraph { inner: g })), "out")
    })
}

/// Serialises a graph; free the result with [`otthom_string_free`].
///
/// # Safety
/// `graph` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_to_json(graph: *const OtthomGraph, out: *mut *mut c_char) -> OtthomStatus {
    guard(|| {
        let s = CString::new(graph_arg(graph)?.to_json()).map_err(|e| invalid(e.to_string()))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `graph` must be a live handle; the out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_size(
    graph: *const OtthomGraph,
    num_vertices: *mut usize,
    num_edges: *mut usize,
) -> OtthomStatus {
    guard(|| {
        let g = graph_arg(graph)?;
        write_out(num_vertices, g.num_vertices(), "num_vertices")?;
        write_out(num_edges, g.num_edges(), "num_edges")
    })
}

/// Copies vertex positions, row-major `num_vertices × dim`, into `buf`.
///
/// # Safety
/// `graph` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_positions(graph: *const OtthomGraph, buf: *mut f64, len: usize) -> OtthomStatus {
    guard(|| {
        let g = graph_arg(graph)?;
        let need = g.num_vertices() * g.dim();
        if len < need {
            return Err(invalid(format!("buffer holds {len} values, need {need}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        for i in 0..g.num_vertices() {
            ptr::copy_nonoverlapping(g.pos(i).as_ptr(), buf.add(i * g.dim()), g.dim());
        }
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otthom_graph_free(graph: *mut OtthomGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// `F(m, J)`, or `G(m, J)` when `degree_normalized` is nonzero. `m` has one
/// entry per vertex, `j` one per edge in the graph's orientation.
///
/// # Safety
/// `graph` must be a live handle; the arrays must have the given lengths.
#[no_mangle]
pub unsafe extern "C" fn otthom_energy(
    graph: *const OtthomGraph,
    m: *const f64,
    m_len: usize,
    j: *const f64,
    j_len: usize,
    degree_normalized: i32,
    out: *mut f64,
) -> OtthomStatus {
    guard(|| {
        let g = graph_arg(graph)?;
        let m = MassDistribution::new(slice_arg(m, m_len, "m")?.to_vec())?;
        let j = FlowField::new(slice_arg(j, j_len, "j")?.to_vec())?;
        let e = if degree_normalized != 0 { degree_normalized_energy(g, &m, &j)? } else { energy(g, &m, &j)? };
        write_out(out, e, "out")
    })
}

/// Cell value `f_ε(v)` on the unit cube for the family in `family_json`.
///
/// # Safety
/// `family_json` must be a NUL-terminated string; `v` must hold `dim`
/// doubles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_cell_value(
    family_json: *const c_char,
    v: *const f64,
    dim: usize,
    eps: f64,
    tol: f64,
    out: *mut f64,
) -> OtthomStatus {
    guard(|| {
        let fam: GeneratorSpec = serde_json::from_str(str_arg(family_json, "family_json")?).map_err(|e| invalid(e.to_string()))?;
        fam.validate()?;
        let v = slice_arg(v, dim, "v")?;
        let q = Orthotope::cube(dim, 0.0, 1.0)?;
        let s = cell_value(&fam, &q, v, eps, fam.seed, CellOptions { tol, ..CellOptions::default() })?;
        write_out(out, s.value, "out")
    })
}

/// Minimal discrete action between `m0` and `m1` with `steps` steps on
/// `[0, total_time]`.
///
/// # Safety
/// `graph` must be a live handle; `m0` and `m1` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn otthom_geodesic_action(
    graph: *const OtthomGraph,
    m0: *const f64,
    m1: *const f64,
    len: usize,
    steps: usize,
    total_time: f64,
    tol: f64,
    out: *mut f64,
) -> OtthomStatus {
    guard(|| {
        let g = graph_arg(graph)?;
        let a = MassDistribution::new(slice_arg(m0, len, "m0")?.to_vec())?;
        let b = MassDistribution::new(slice_arg(m1, len, "m1")?.to_vec())?;
        let p = GeodesicProblem::new(a, b, steps)?.with_total_time(total_time).with_tol(tol);
        let s = solve_geodesic(g, &p)?;
        write_out(out, s.report.action, "out")
    })
}

/// Parses a density model from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_density_model_from_json(
    json: *const c_char,
    out: *mut *mut OtthomDensityModel,
) -> OtthomStatus {
    guard(|| {
        let m = DensityModel::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(OtthomDensityModel { inner: m })), "out")
    })
}

/// Isotropic model `f(v) = |v|²` sampled on `m` direction pairs.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otthom_density_model_isotropic(dim: usize, m: usize, out: *mut *mut OtthomDensityModel) -> OtthomStatus {
    guard(|| {
        if dim == 0 || m < dim {
            return Err(invalid(format!("need dim >= 1 and m >= dim, got dim = {dim}, m = {m}")));
        }
        write_out(out, Box::into_raw(Box::new(OtthomDensityModel { inner: DensityModel::isotropic(dim, m) })), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `v` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn otthom_density_model_eval(
    model: *const OtthomDensityModel,
    v: *const f64,
    dim: usize,
    out: *mut f64,
) -> OtthomStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let v = slice_arg(v, dim, "v")?;
        if dim != m.dim {
            return Err(invalid(format!("vector has dimension {dim}, model {}", m.dim)));
        }
        write_out(out, m.eval(v), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn otthom_density_model_free(model: *mut OtthomDensityModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs an experiment from its JSON config. `passed` receives 1 when all
/// assertions hold; `csv_out`, if not null, receives the CSV text (free it
/// with [`otthom_string_free`]).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `passed` a valid pointer;
/// `csv_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn otthom_experiment_run(
    config_json: *const c_char,
    passed: *mut i32,
    csv_out: *mut *mut c_char,
) -> OtthomStatus {
    guard(|| {
        let c = ExperimentConfig::from_json(str_arg(config_json, "config_json")?)?;
        let res = run_experiment(&c)?;
        if !csv_out.is_null() {
            let mut buf = Vec::new();
            res.write_csv(&mut buf)?;
            let s = CString::new(buf).map_err(|e| invalid(e.to_string()))?;
            csv_out.write(s.into_raw());
        }
        write_out(passed, i32::from(res.passed()), "passed")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe {
            let n = otthom_last_error(ptr::null_mut(), 0);
            let mut buf = vec![0 as c_char; n + 1];
            otthom_last_error(buf.as_mut_ptr(), buf.len());
            CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
        }
    }

    #[test]
    fn generate_query_free() {
        let spec = CString::new(r#"{"kind":"latticeNN","n":2,"lower":[0,0],"upper":[4,4]}"#).unwrap();
        let mut g = ptr::null_mut();
        unsafe {
            assert_eq!(otthom_graph_generate(spec.as_ptr(), &mut g), OtthomStatus::Ok);
            let (mut nv, mut ne) = (0, 0);
            assert_eq!(otthom_graph_size(g, &mut nv, &mut ne), OtthomStatus::Ok);
            assert_eq!((nv, ne), (25, 40));
            let mut pos = vec![0.0; 2 * nv];
            assert_eq!(otthom_graph_positions(g, pos.as_mut_ptr(), pos.len()), OtthomStatus::Ok);
            assert_eq!(otthom_graph_positions(g, pos.as_mut_ptr(), 3), OtthomStatus::InvalidArgument);
            let mut s = ptr::null_mut();
            assert_eq!(otthom_graph_to_json(g, &mut s), OtthomStatus::Ok);
            let mut h = ptr::null_mut();
            assert_eq!(otthom_graph_from_json(s, &mut h), OtthomStatus::Ok);
            assert_eq!((*h).inner, (*g).inner);
            otthom_string_free(s);
            otthom_graph_free(h);
            otthom_graph_free(g);
        }
    }

    #[test]
    fn errors_are_reported() {
        let mut g = ptr::null_mut();
        unsafe {
            assert_eq!(otthom_graph_generate(ptr::null(), &mut g), OtthomStatus::NullPointer);
            assert!(last_error().contains("spec_json"));
            let bad = CString::new(r#"{"kind":"perturbedVoronoi","lower":[0,0],"upper":[4,4],"shiftBound":0.6}"#).unwrap();
            assert_eq!(otthom_graph_generate(bad.as_ptr(), &mut g), OtthomStatus::InvalidArgument);
            assert!(g.is_null());
            otthom_clear_error();
            assert_eq!(otthom_last_error(ptr::null_mut(), 0), 0);
        }
    }

    #[test]
    fn energy_and_model() {
        let spec = CString::new(r#"{"kind":"latticeNN","n":1,"lower":[0],"upper":[1]}"#).unwrap();
        let mut g = ptr::null_mut();
        let mut model = ptr::null_mut();
        unsafe {
            assert_eq!(otthom_graph_generate(spec.as_ptr(), &mut g), OtthomStatus::Ok);
            let (m, j) = ([0.5, 0.5], [1.0]);
            let mut e = 0.0;
            assert_eq!(otthom_energy(g, m.as_ptr(), 2, j.as_ptr(), 1, 0, &mut e), OtthomStatus::Ok);
            assert_eq!(e, 2.0);
            assert_eq!(otthom_energy(g, m.as_ptr(), 1, j.as_ptr(), 1, 0, &mut e), OtthomStatus::InvalidGraph);
            otthom_graph_free(g);
            assert_eq!(otthom_density_model_isotropic(2, 8, &mut model), OtthomStatus::Ok);
            let v = [3.0, 4.0];
            assert_eq!(otthom_density_model_eval(model, v.as_ptr(), 2, &mut e), OtthomStatus::Ok);
            assert!((e - 25.0).abs() < 1e-12);
            assert_eq!(otthom_density_model_eval(model, v.as_ptr(), 1, &mut e), OtthomStatus::InvalidArgument);
            otthom_density_model_free(model);
        }
    }

    #[test]
    fn cell_and_experiment() {
        let fam = CString::new(r#"{"kind":"latticeNN","n":2,"lower":[0,0],"upper":[1,1]}"#).unwrap();
        let v = [1.0, 0.0];
        let mut f = 0.0;
        let cfg = CString::new(r#"{"name":"scaling-law"}"#).unwrap();
        let mut passed = 0;
        let mut csv = ptr::null_mut();
        unsafe {
            assert_eq!(otthom_cell_value(fam.as_ptr(), v.as_ptr(), 2, 0.25, 1e-9, &mut f), OtthomStatus::Ok);
            assert!((f - 1.0).abs() < 1e-6);
            assert_eq!(otthom_experiment_run(cfg.as_ptr(), &mut passed, &mut csv), OtthomStatus::Ok);
            assert_eq!(passed, 1);
            assert!(CStr::from_ptr(csv).to_str().unwrap().contains("clique_size"));
            otthom_string_free(csv);
        }
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(otthom_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
