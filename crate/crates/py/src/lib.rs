//! Python bindings for `lsm_core`.

use lsm_core::eval::{evaluate as eval_report, roc_auc as eval_roc, EvalInput};
use lsm_core::grid::{self, GridHeader};
use lsm_core::map;
use lsm_core::reduce::{self, PcaModel};
use lsm_core::sampling::FeatureMatrix;
use lsm_core::synth::{self, SceneConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != p) {
        return Err(err("rows must all have the same length"));
    }
    Ok(FeatureMatrix::from_rows(&rows))
}

/// A single-band raster in ESRI ASCII grid layout (row 0 is the north edge).
#[pyclass(name = "Grid", module = "lsm_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    inner: grid::Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (ncols, nrows, xll, yll, cellsize, values, nodata = grid::DEFAULT_NODATA))]
    fn new(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        values: Vec<f64>,
        nodata: f64,
    ) -> PyResult<Self> {
        let mut h = GridHeader::new(ncols, nrows, xll, yll, cellsize);
        h.nodata = nodata;
        Ok(Self {
            inner: grid::Grid::new(h, values).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_ascii(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: grid::parse_ascii_grid(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: grid::read_ascii_grid(path).map_err(err)?,
        })
    }

    fn to_ascii(&self) -> String {
        grid::format_ascii_grid(&self.inner)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        grid::write_ascii_grid(&self.inner, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.header.nrows, self.inner.header.ncols)
    }

    #[getter]
    fn cellsize(&self) -> f64 {
        self.inner.header.cellsize
    }

    #[getter]
    fn nodata(&self) -> f64 {
        self.inner.header.nodata
    }

    #[getter]
    fn origin(&self) -> (f64, f64) {
        (self.inner.header.xll, self.inner.header.yll)
    }

    /// Row-major cell values, nodata included.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        let h = self.inner.header;
        if row >= h.nrows || col >= h.ncols {
            return Err(err(format!("cell ({row}, {col}) outside {} x {}", h.nrows, h.ncols)));
        }
        Ok(self.inner.get(row, col))
    }

    fn valid_values(&self) -> Vec<f64> {
        self.inner.valid_values()
    }

    /// The seven terrain derivatives of a DEM, keyed by band name.
    fn terrain<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = grid::derive_terrain(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        for (name, band) in t.band_names.into_iter().zip(t.bands) {
            d.set_item(name, PyGrid { inner: band })?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let h = self.inner.header;
        format!("Grid({} x {}, cellsize {})", h.nrows, h.ncols, h.cellsize)
    }
}

/// Principal components of standardized rows.
#[pyclass(name = "PCA", module = "lsm_py")]
pub struct PyPca {
    inner: PcaModel,
}

#[pymethods]
impl PyPca {
    #[staticmethod]
    fn fit(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let x = matrix(rows)?;
        let st = reduce::fit_standardizer(&x).map_err(err)?;
        Ok(Self {
            inner: reduce::pca_fit(&x, &st).map_err(err)?,
        })
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn eigenvectors(&self) -> Vec<Vec<f64>> {
        self.inner.eigenvectors.clone()
    }

    #[getter]
    fn cumulative_explained(&self) -> Vec<f64> {
        self.inner.cum_explained.clone()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    /// Smallest k whose cumulative explained variance reaches `threshold`.
    fn select_k(&self, threshold: f64) -> usize {
        reduce::select_k(&self.inner, threshold)
    }

    /// Projects rows onto the leading `k` components (default: the fitted k).
    #[pyo3(signature = (rows, k = None))]
    fn transform(&self, rows: Vec<Vec<f64>>, k: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
        let model = match k {
            Some(k) => self.inner.clone().with_k(k).map_err(err)?,
            None => self.inner.clone(),
        };
        let z = reduce::pca_transform(&matrix(rows)?, &model).map_err(err)?;
        Ok((0..z.n).map(|i| z.row(i).to_vec()).collect())
    }
}

/// Tolerance and VIF of every column regressed on the others.
#[pyfunction]
#[pyo3(signature = (rows, names = None))]
fn collinearity<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f64>>,
    names: Option<Vec<String>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut report = reduce::collinearity(&matrix(rows)?).map_err(err)?;
    if let Some(n) = names {
        report = report.with_names(&n);
    }
    report
        .features
        .into_iter()
        .map(|f| {
            let d = PyDict::new(py);
            d.set_item("feature", f.feature)?;
            d.set_item("r2", f.r2)?;
            d.set_item("tolerance", f.tolerance)?;
            d.set_item("vif", f.vif)?;
            d.set_item("infinite_vif", f.infinite_vif)?;
            Ok(d)
        })
        .collect()
}

/// AUC with the ROC curve as (fpr, tpr) lists.
#[pyfunction]
fn roc_auc(y: Vec<u8>, scores: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let roc = eval_roc(&EvalInput::new(y, scores).map_err(err)?).map_err(err)?;
    let fpr = roc.points.iter().map(|p| p.fpr).collect();
    let tpr = roc.points.iter().map(|p| p.tpr).collect();
    Ok((roc.auc, fpr, tpr))
}

/// Confusion counts, class metrics, AUC and error statistics.
#[pyfunction]
#[pyo3(signature = (y, scores, threshold = 0.5))]
fn metrics<'py>(py: Python<'py>, y: Vec<u8>, scores: Vec<f64>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = eval_report(&EvalInput::new(y, scores).map_err(err)?, threshold).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("tp", r.counts.tp)?;
    d.set_item("fp", r.counts.fp)?;
    d.set_item("fn", r.counts.fn_)?;
    d.set_item("tn", r.counts.tn)?;
    d.set_item("accuracy", r.metrics.accuracy)?;
    d.set_item("precision", r.metrics.precision)?;
    d.set_item("recall", r.metrics.recall)?;
    d.set_item("specificity", r.metrics.specificity)?;
    d.set_item("f1", r.metrics.f1)?;
    d.set_item("auc", r.auc)?;
    d.set_item("mae", r.mae)?;
    d.set_item("rmse", r.rmse)?;
    Ok(d)
}

/// Natural breaks: upper bounds of the lowest `n_classes - 1` classes.
#[pyfunction]
#[pyo3(signature = (values, n_classes = 5, cap = 10_000, seed = 0))]
fn jenks_breaks(values: Vec<f64>, n_classes: usize, cap: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(map::jenks_breaks(&values, n_classes, cap, seed).map_err(err)?.breaks)
}

/// Class raster (1 = lowest) from scores and ascending breaks.
#[pyfunction]
fn classify(scores: &PyGrid, breaks: Vec<f64>) -> PyResult<PyGrid> {
    Ok(PyGrid {
        inner: map::classify(&scores.inner, &breaks).map_err(err)?,
    })
}

/// A synthetic scene: DEM, latent susceptibility, both stacks and the inventory.
#[pyfunction]
#[pyo3(signature = (seed = 42, nrows = 128, ncols = 128, n_landslides = 80))]
fn gen_scene<'py>(
    py: Python<'py>,
    seed: u64,
    nrows: usize,
    ncols: usize,
    n_landslides: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SceneConfig {
        seed,
        nrows,
        ncols,
        n_landslides,
        ..Default::default()
    };
    let sc = synth::gen_scene(&cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("seed", sc.config.seed)?;
    d.set_item("dem", PyGrid { inner: sc.dem })?;
    d.set_item("latent", PyGrid { inner: sc.latent })?;
    for (key, s) in [("lcf", sc.lcf_stack), ("embed", sc.embed_stack)] {
        let bands = PyDict::new(py);
        for (name, band) in s.band_names.into_iter().zip(s.bands) {
            bands.set_item(name, PyGrid { inner: band })?;
        }
        d.set_item(key, bands)?;
    }
    let inv: Vec<(f64, f64)> = sc.inventory.iter().map(|p| (p.x, p.y)).collect();
    d.set_item("inventory", inv)?;
    d.set_item("plantedness_auc", sc.summary.plantedness_auc)?;
    Ok(d)
}

#[pymodule]
fn lsm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyPca>()?;
    m.add_function(wrap_pyfunction!(collinearity, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(jenks_breaks, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scene, m)?)?;
    Ok(())
}
