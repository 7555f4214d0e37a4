//! Python bindings: fields, the (L2, BV) solver, K-functional, star norm,
//! multiscale decomposition, sequence shrinkage and the closed-form examples.

use decomp_core::field::{discrete_tv, Grid, GridField, TvMode};
use decomp_core::multiscale::{self, ScaleSchedule, Start};
use decomp_core::oracles::{self, AnalyticSolution, Regime};
use decomp_core::rof::{self, DualScheme, SolverConfig};
use decomp_core::{shrinkage, sobolev, DecompError};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: DecompError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tv_mode(s: &str) -> PyResult<TvMode> {
    match s {
        "iso" | "isotropic" => Ok(TvMode::Isotropic),
        "aniso" | "anisotropic" => Ok(TvMode::Anisotropic),
        _ => Err(PyValueError::new_err(format!("tv must be 'iso' or 'aniso', got {s:?}"))),
    }
}

fn tv_name(m: TvMode) -> &'static str {
    match m {
        TvMode::Isotropic => "iso",
        TvMode::Anisotropic => "aniso",
    }
}

/// A scalar field on a 1D or 2D cell-centered grid over `[0, 1]^d`, or over
/// the box given by `origin` and `extent`, optionally restricted by a mask.
#[pyclass(name = "Field", module = "decomp", skip_from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: GridField,
}

#[derive(FromPyObject)]
enum FieldArg<'py> {
    Field(PyRef<'py, PyField>),
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl FieldArg<'_> {
    fn field(&self) -> PyResult<GridField> {
        match self {
            FieldArg::Field(f) => Ok(f.inner.clone()),
            FieldArg::Nested(rows) => nested_field(rows, None, None, None),
            FieldArg::Flat(v) => GridField::from_1d(v.clone()).map_err(err),
        }
    }
}

fn nested_field(
    rows: &[Vec<f64>],
    mask: Option<Vec<Vec<bool>>>,
    origin: Option<Vec<f64>>,
    extent: Option<Vec<f64>>,
) -> PyResult<GridField> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let mut grid = Grid::new_2d(rows.len(), cols).map_err(err)?;
    if let (Some(o), Some(e)) = (&origin, &extent) {
        grid = grid.with_extent(o, e).map_err(err)?;
    } else if origin.is_some() || extent.is_some() {
        return Err(PyValueError::new_err("origin and extent go together"));
    }
    if let Some(m) = mask {
        if m.len() != rows.len() || m.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("mask shape differs from the values"));
        }
        grid = grid.with_mask(m.concat()).map_err(err)?;
    }
    GridField::new(grid, rows.concat()).map_err(err)
}

fn to_nested(u: &GridField) -> Vec<Vec<f64>> {
    match u.grid().dims() {
        1 => vec![u.values().to_vec()],
        _ => u.values().chunks(u.grid().shape()[1]).map(<[f64]>::to_vec).collect(),
    }
}

#[pymethods]
impl PyField {
    /// `values` is a flat list (1D) or a list of equal-length rows (2D).
    #[new]
    #[pyo3(signature = (values, mask=None, origin=None, extent=None))]
    fn new(
        values: &Bound<'_, PyAny>,
        mask: Option<Vec<Vec<bool>>>,
        origin: Option<Vec<f64>>,
        extent: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let inner = if let Ok(rows) = values.extract::<Vec<Vec<f64>>>() {
            nested_field(&rows, mask, origin, extent)?
        } else {
            let v: Vec<f64> = values.extract()?;
            if mask.is_some() {
                return Err(PyValueError::new_err("masks are supported on 2D fields only"));
            }
            let mut grid = Grid::new_1d(v.len()).map_err(err)?;
            if let (Some(o), Some(e)) = (&origin, &extent) {
                grid = grid.with_extent(o, e).map_err(err)?;
            }
            GridField::new(grid, v).map_err(err)?
        };
        Ok(PyField { inner })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.grid().shape().to_vec()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.inner.grid().spacing().to_vec()
    }

    /// Flat row-major values; masked cells hold 0.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// A list for 1D fields, a list of rows for 2D fields.
    fn tolist<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        if self.inner.grid().dims() == 1 {
            Ok(self.inner.values().to_vec().into_pyobject(py)?.into_any())
        } else {
            Ok(to_nested(&self.inner).into_pyobject(py)?.into_any())
        }
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    #[pyo3(signature = (tv="iso"))]
    fn tv(&self, tv: &str) -> PyResult<f64> {
        Ok(discrete_tv(&self.inner, tv_mode(tv)?))
    }

    fn __len__(&self) -> usize {
        self.inner.grid().len()
    }

    fn __repr__(&self) -> String {
        format!("Field(shape={:?}, mean={:.6e})", self.inner.grid().shape(), self.inner.mean())
    }
}

fn wrap(u: GridField) -> PyField {
    PyField { inner: u }
}

fn solver_config(
    tv: &str,
    tol: Option<f64>,
    gap_rtol: Option<f64>,
    max_iters: Option<usize>,
    scheme: &str,
) -> PyResult<SolverConfig> {
    let scheme = match scheme {
        "accelerated" => DualScheme::Accelerated,
        "fixed-point" | "fixed_point" => DualScheme::FixedPoint,
        _ => return Err(PyValueError::new_err(format!("unknown scheme {scheme:?}"))),
    };
    let mut cfg = SolverConfig::default().with_tv(tv_mode(tv)?).with_scheme(scheme);
    if let Some(t) = tol {
        cfg = cfg.with_tol(t);
    }
    if let Some(g) = gap_rtol {
        cfg = cfg.with_gap_rtol(g);
    }
    if let Some(m) = max_iters {
        cfg = cfg.with_max_iters(m);
    }
    Ok(cfg)
}

/// The minimizing pair `f = u + v` at scale `t` with its certificate.
#[pyclass(name = "RofSolution", module = "decomp", get_all)]
struct PyRofSolution {
    u: PyField,
    v: PyField,
    t: f64,
    iterations: usize,
    converged: bool,
    certified: bool,
    tv_u: f64,
    energy: f64,
    k_direct: f64,
    k_projection: f64,
    sup_norm_z: f64,
    pairing_residual: f64,
    mean_residual: f64,
    tv: &'static str,
}

#[pymethods]
impl PyRofSolution {
    fn __repr__(&self) -> String {
        format!(
            "RofSolution(t={}, iterations={}, certified={}, energy={:.6e})",
            self.t, self.iterations, self.certified, self.energy
        )
    }
}

#[pyfunction]
#[pyo3(signature = (f, t, tv="iso", tol=None, gap_rtol=None, max_iters=None, scheme="accelerated"))]
fn solve_rof(
    f: FieldArg<'_>,
    t: f64,
    tv: &str,
    tol: Option<f64>,
    gap_rtol: Option<f64>,
    max_iters: Option<usize>,
    scheme: &str,
) -> PyResult<PyRofSolution> {
    let f = f.field()?;
    let cfg = solver_config(tv, tol, gap_rtol, max_iters, scheme)?;
    let s = rof::solve_rof(&f, t, &cfg).map_err(err)?;
    let k_projection = s.k_projection(&f);
    Ok(PyRofSolution {
        k_direct: s.k_direct(),
        k_projection,
        t: s.t,
        iterations: s.iterations,
        converged: s.converged,
        certified: s.certified,
        tv_u: s.tv_u,
        energy: s.energy,
        sup_norm_z: s.certificate.sup_norm_z,
        pairing_residual: s.certificate.pairing_residual,
        mean_residual: s.certificate.mean_residual,
        tv: tv_name(s.tv_mode),
        u: wrap(s.u),
        v: wrap(s.v),
    })
}

/// `K(f, t)` evaluated both directly and by projection.
#[pyfunction]
#[pyo3(signature = (f, t, tv="iso", tol=None, gap_rtol=None, max_iters=None))]
fn k_functional<'py>(
    py: Python<'py>,
    f: FieldArg<'_>,
    t: f64,
    tv: &str,
    tol: Option<f64>,
    gap_rtol: Option<f64>,
    max_iters: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = solver_config(tv, tol, gap_rtol, max_iters, "accelerated")?;
    let k = rof::k_functional(&f.field()?, t, &cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("t", k.t)?;
    d.set_item("k_direct", k.k_direct)?;
    d.set_item("k_projection", k.k_projection)?;
    d.set_item("gap", k.gap())?;
    d.set_item("certified", k.certified)?;
    Ok(d)
}

/// Smallest `t` at which `u_t` collapses to the mean of `f`.
#[pyfunction]
#[pyo3(signature = (f, tol=1e-3, tv="iso", gap_rtol=1e-4, constancy=rof::CONSTANCY_THRESHOLD))]
fn star_norm<'py>(
    py: Python<'py>,
    f: FieldArg<'_>,
    tol: f64,
    tv: &str,
    gap_rtol: f64,
    constancy: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SolverConfig::default().with_tv(tv_mode(tv)?).with_gap_rtol(gap_rtol);
    let e = rof::estimate_star_norm_with(&f.field()?, tol, constancy, &cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", e.value)?;
    d.set_item("t_lo", e.t_lo)?;
    d.set_item("t_hi", e.t_hi)?;
    d.set_item("solves", e.solves)?;
    Ok(d)
}

/// Exact star norm of a 1D signal: the sup of its running mean-free integral.
#[pyfunction]
fn star_norm_1d(f: FieldArg<'_>) -> PyResult<f64> {
    rof::star_norm_1d(&f.field()?).map_err(err)
}

#[pyclass(name = "Multiscale", module = "decomp")]
struct PyMultiscale {
    inner: multiscale::MultiscaleDecomposition,
}

#[pymethods]
impl PyMultiscale {
    #[getter]
    fn scales(&self) -> Vec<f64> {
        self.inner.schedule.scales()
    }

    #[getter]
    fn u0(&self) -> PyField {
        wrap(self.inner.u0.clone())
    }

    /// `w_1 .. w_N`.
    #[getter]
    fn details(&self) -> Vec<PyField> {
        self.inner.details.iter().cloned().map(wrap).collect()
    }

    /// `v_0 .. v_N`.
    #[getter]
    fn residuals(&self) -> Vec<PyField> {
        self.inner.residuals.iter().cloned().map(wrap).collect()
    }

    #[getter]
    fn all_certified(&self) -> bool {
        self.inner.all_certified()
    }

    /// `u_0 + w_1 + ... + w_k`.
    fn reconstruct(&self, k: usize) -> PyResult<PyField> {
        multiscale::reconstruct(&self.inner, k).map(wrap).map_err(err)
    }

    fn ledger<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .ledger
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("level", r.level)?;
                d.set_item("t", r.t)?;
                d.set_item("tv_w", r.tv_w)?;
                d.set_item("w_norm_sq", r.w_norm_sq)?;
                d.set_item("v_norm_sq", r.v_norm_sq)?;
                d.set_item("iterations", r.iterations)?;
                d.set_item("certified", r.certified)?;
                d.set_item("pure_mean", r.pure_mean)?;
                Ok(d)
            })
            .collect()
    }

    /// Both sides of the energy identity, level by level.
    fn ledger_check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = multiscale::energy_ledger_check(&self.inner);
        let d = PyDict::new(py);
        d.set_item("lhs_partial_sums", c.lhs_partial_sums)?;
        d.set_item("rhs", c.rhs)?;
        d.set_item("max_relative_gap", c.max_relative_gap)?;
        d.set_item("certificate_bound", c.certificate_bound)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (f, t0, levels, ratio=0.5, start="zero", tv="iso", tol=None, gap_rtol=None))]
#[allow(clippy::too_many_arguments)]
fn decompose(
    f: FieldArg<'_>,
    t0: f64,
    levels: usize,
    ratio: f64,
    start: &str,
    tv: &str,
    tol: Option<f64>,
    gap_rtol: Option<f64>,
) -> PyResult<PyMultiscale> {
    let start = match start {
        "zero" => Start::Zero,
        "mean" => Start::Mean,
        _ => return Err(PyValueError::new_err(format!("start must be 'zero' or 'mean', got {start:?}"))),
    };
    let schedule = ScaleSchedule::new(t0, ratio, levels).map_err(err)?;
    let cfg = solver_config(tv, tol, gap_rtol, None, "accelerated")?;
    let inner = multiscale::decompose_from(&f.field()?, &schedule, &cfg, start).map_err(err)?;
    Ok(PyMultiscale { inner })
}

/// `(x, y)` with `b = x + y` minimizing `1/2 ||y||_2^2 + t ||x||_p`.
#[pyfunction]
fn solve_l2_lp(b: Vec<f64>, t: f64, p: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = shrinkage::solve_l2_lp(&b, t, p).map_err(err)?;
    Ok((s.x, s.y))
}

#[pyfunction]
fn soft_threshold(b: Vec<f64>, t: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = shrinkage::soft_threshold(&b, t).map_err(err)?;
    Ok((s.x, s.y))
}

/// Euclidean projection of `b` onto the `l^q` ball of the given radius.
#[pyfunction]
fn project_lq_ball(b: Vec<f64>, radius: f64, q: f64) -> PyResult<Vec<f64>> {
    shrinkage::project_lq_ball(&b, radius, q).map_err(err)
}

#[pyfunction]
fn duality_map(u: Vec<f64>, p: f64) -> PyResult<Vec<f64>> {
    sobolev::duality_map(&u, p).map_err(err)
}

/// A closed-form minimizing pair for the ramp or radial example.
#[pyclass(name = "Example", module = "decomp")]
struct PyExample {
    inner: AnalyticSolution,
}

#[pymethods]
impl PyExample {
    /// `f(x) = x` on `[0, 1]`.
    #[staticmethod]
    fn ramp(t: f64) -> PyResult<Self> {
        Ok(PyExample { inner: oracles::ramp_example(t).map_err(err)? })
    }

    /// Indicator of the disc of radius `r` inside the disc of radius `big_r`.
    #[staticmethod]
    #[pyo3(signature = (t, r=0.5, big_r=1.0))]
    fn radial(t: f64, r: f64, big_r: f64) -> PyResult<Self> {
        Ok(PyExample { inner: oracles::radial_example(2, r, big_r, t).map_err(err)? })
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn collapsed(&self) -> bool {
        self.inner.regime == Regime::Constant
    }

    #[getter]
    fn k_value(&self) -> f64 {
        self.inner.k_value()
    }

    /// Cell averages of `f` on an `n`-cell (per axis) grid, `sub^d` samples per cell.
    #[pyo3(signature = (n, sub=4))]
    fn f_field(&self, n: usize, sub: usize) -> PyResult<PyField> {
        let g = self.inner.grid(n).map_err(err)?;
        self.inner.cell_averages(&g, sub, |e, x| e.f(x)).map(wrap).map_err(err)
    }

    #[pyo3(signature = (n, sub=4))]
    fn u_field(&self, n: usize, sub: usize) -> PyResult<PyField> {
        let g = self.inner.grid(n).map_err(err)?;
        self.inner.cell_averages(&g, sub, |e, x| e.u(x)).map(wrap).map_err(err)
    }
}

#[pymodule]
fn decomp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyRofSolution>()?;
    m.add_class::<PyMultiscale>()?;
    m.add_class::<PyExample>()?;
    m.add_function(wrap_pyfunction!(solve_rof, m)?)?;
    m.add_function(wrap_pyfunction!(k_functional, m)?)?;
    m.add_function(wrap_pyfunction!(star_norm, m)?)?;
    m.add_function(wrap_pyfunction!(star_norm_1d, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(solve_l2_lp, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(project_lq_ball, m)?)?;
    m.add_function(wrap_pyfunction!(duality_map, m)?)?;
    Ok(())
}
