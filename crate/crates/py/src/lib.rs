//! Python bindings for the PDAE plant: exact cascade, kernel evaluation,
//! radius selection, inversion and closed-loop simulation.

use backstep_core::charkernels::controller_series;
use backstep_core::gapcascade::{
    self, kernel_nodes, pdae_plant_family, plant_series_from_family, GapCoefficientFamily,
};
use backstep_core::inversion::{self, InversionConfig};
use backstep_core::simplex::QuadratureRule;
use backstep_core::simulator::{self, Controller, InitialCondition, SimConfig};
use backstep_core::volterra::{GainFunctions, GridFunction, GridOperator, VolterraKernelSeries};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: backstep_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pdae_cascade(n_max: usize) -> PyResult<GapCoefficientFamily> {
    gapcascade::cascade(&pdae_plant_family(), n_max).map_err(py_err)
}

fn pdae_series(n_max: usize) -> PyResult<(VolterraKernelSeries, VolterraKernelSeries)> {
    let plant = plant_series_from_family(&pdae_plant_family()).map_err(py_err)?;
    let a = pdae_cascade(n_max)?;
    let k = controller_series(&kernel_nodes(&a, n_max).map_err(py_err)?).map_err(py_err)?;
    Ok((plant, k))
}

fn pdae_gains(n_max: usize) -> PyResult<(VolterraKernelSeries, GainFunctions)> {
    let (_, k) = pdae_series(n_max)?;
    let gains =
        GainFunctions::from_series(&k, &QuadratureRule::TensorGaussLegendreOnGaps { points: 8 })
            .map_err(py_err)?;
    Ok((k, gains))
}

/// Nonzero cascade coefficients `a_P(x)` as `(n, P, [coeff, ...])`, each
/// coefficient an exact `"num/den"` string in ascending powers of `x`.
#[pyfunction]
#[pyo3(signature = (n_max = 3))]
fn cascade(n_max: usize) -> PyResult<Vec<(usize, Vec<u32>, Vec<String>)>> {
    let a = pdae_cascade(n_max)?;
    Ok(a.iter()
        .map(|(n, p, poly)| {
            (
                n,
                p.clone(),
                poly.coeffs().iter().map(|c| c.to_string()).collect(),
            )
        })
        .collect())
}

/// `k_n(x, xi)` assembled from the gap cascade.
#[pyfunction]
fn kernel(n: usize, x: f64, xi: Vec<f64>) -> PyResult<f64> {
    if xi.len() != n {
        return Err(PyValueError::new_err(format!(
            "k_{n} takes {n} arguments, got {}",
            xi.len()
        )));
    }
    gapcascade::assemble_kernel(&pdae_cascade(n.max(2))?, n, x, &xi).map_err(py_err)
}

/// Squared radius `s`, `rho_L` and `ell(s)` for the controller of order `n_max`.
#[pyfunction]
#[pyo3(signature = (n_max = 3))]
fn choose_radius(py: Python<'_>, n_max: usize) -> PyResult<Bound<'_, PyDict>> {
    let (_, gains) = pdae_gains(n_max)?;
    let cfg = inversion::choose_radius(&gains).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("s", cfg.s)?;
    d.set_item("rho_l", cfg.rho_l)?;
    d.set_item("ell_s", cfg.ell_s)?;
    d.set_item("k_s", gains.gain_k(cfg.s).map_err(py_err)?)?;
    Ok(d)
}

/// Solves `u - K[u] = w` on the uniform grid carrying `w`.
#[pyfunction]
#[pyo3(signature = (w, n_max = 3))]
fn invert(py: Python<'_>, w: Vec<f64>, n_max: usize) -> PyResult<Bound<'_, PyDict>> {
    let (k, gains) = pdae_gains(n_max)?;
    let cfg: InversionConfig = inversion::choose_radius(&gains).map_err(py_err)?;
    let w = GridFunction::new(w).map_err(py_err)?;
    let op = GridOperator::new(&k, w.len()).map_err(py_err)?;
    let out = inversion::invert(&w, &op, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("ratios", out.ratios())?;
    d.set_item("u", out.u.into_values())?;
    d.set_item("iterations", out.iterations)?;
    d.set_item("residual", out.residual)?;
    Ok(d)
}

/// Closed-loop run from the bump `scale * 140 x^3 (1 - x)`.
#[pyfunction]
#[pyo3(signature = (controller = "order-3", m = 201, t_end = 2.0, scale = 1.0, cfl = 0.5))]
fn simulate<'py>(
    py: Python<'py>,
    controller: &str,
    m: usize,
    t_end: f64,
    scale: f64,
    cfl: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let controller = Controller::parse(controller).map_err(py_err)?;
    let order = match controller {
        Controller::Order(n) => n.max(2),
        _ => 3,
    };
    let (plant, k) = pdae_series(order)?;
    let cfg = SimConfig {
        m,
        cfl,
        t_end,
        controller,
        initial: InitialCondition::Bump { scale },
        ..SimConfig::default()
    };
    let rec = simulator::simulate(&cfg, &plant, &k).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("times", rec.times)?;
    d.set_item("l2", rec.l2)?;
    d.set_item("control", rec.control)?;
    d.set_item("sup", rec.sup)?;
    d.set_item("blow_up", rec.blow_up)?;
    d.set_item("final_time", rec.final_time)?;
    d.set_item("final_l2", rec.final_l2)?;
    d.set_item("max_sup", rec.max_sup)?;
    Ok(d)
}

/// Target-system transport `w(x, t) = w0(x + t)`, zero past the boundary.
#[pyfunction]
fn target_semigroup(w0: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let w0 = GridFunction::new(w0).map_err(py_err)?;
    Ok(simulator::target_semigroup(&w0, t)
        .map_err(py_err)?
        .into_values())
}

/// `(C1, C2)` of the closed-loop estimate for decay rate `lam`.
#[pyfunction]
fn stability_constants(s: f64, ell_s: f64, rho_l: f64, lam: f64) -> PyResult<(f64, f64)> {
    simulator::stability_constants(s, ell_s, rho_l, lam).map_err(py_err)
}

#[pymodule]
fn backstep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(cascade, m)?)?;
    m.add_function(wrap_pyfunction!(kernel, m)?)?;
    m.add_function(wrap_pyfunction!(choose_radius, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(target_semigroup, m)?)?;
    m.add_function(wrap_pyfunction!(stability_constants, m)?)?;
    Ok(())
}
