//! Python bindings: lights, normal maps, images, relighting, the attacks,
//! the physical simulation and ROC scoring.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use advrelight::ap::{self, AdvLNetParams, Variant, DEFAULT_HIDDEN};
use advrelight::aq::{self, AttackConfig, GradientMode};
use advrelight::embedder::{BuiltinEmbedder, Embedder};
use advrelight::harness::{roc_auc, GroundTruth, SimilarityMatrix};
use advrelight::phy::{self, PLSPose, RecurrenceConfig, SceneModel};
use advrelight::{io, relight, sh, synth};
use advrelight::{FaceImage, NormalMap, SHLight};

create_exception!(pyadvrelight, AdvRelightError, PyException);

fn err(e: advrelight::Error) -> PyErr {
    AdvRelightError::new_err(e.to_string())
}

/// Nine spherical-harmonics light coefficients.
#[pyclass(name = "SHLight", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLight(SHLight);

#[pymethods]
impl PyLight {
    #[new]
    fn new(coeffs: Vec<f64>) -> PyResult<Self> {
        let arr: [f64; 9] = coeffs
            .try_into()
            .map_err(|v: Vec<f64>| AdvRelightError::new_err(format!("expected 9 coefficients, got {}", v.len())))?;
        Ok(PyLight(SHLight::new(arr).map_err(err)?))
    }

    #[staticmethod]
    fn ambient(value: f64) -> Self {
        PyLight(SHLight::ambient(value))
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyLight(io::read_light(&path).map_err(err)?))
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::write_light(&path, &self.0).map_err(err)
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.0 .0.to_vec()
    }

    fn linf_distance(&self, other: &PyLight) -> f64 {
        self.0.linf_distance(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("SHLight({:?})", self.0 .0)
    }
}

#[pyclass(name = "NormalMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNormals(NormalMap);

#[pymethods]
impl PyNormals {
    /// Front hemisphere of a unit sphere seen orthographically.
    #[staticmethod]
    fn sphere(resolution: usize) -> PyResult<Self> {
        Ok(PyNormals(sh::sphere_normals(resolution).map_err(err)?))
    }

    /// Procedural head shape.
    #[staticmethod]
    #[pyo3(signature = (width, height, ax=0.8, ay=0.95, az=0.7))]
    fn ellipsoid(width: usize, height: usize, ax: f64, ay: f64, az: f64) -> Self {
        PyNormals(synth::ellipsoid_normals(width, height, ax, ay, az))
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyNormals(io::read_normals(&path).map_err(err)?))
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::write_normals(&path, &self.0).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn masked_count(&self) -> usize {
        self.0.masked_count()
    }

    fn mask(&self) -> Vec<bool> {
        self.0.mask().to_vec()
    }
}

#[pyclass(name = "FaceImage", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage(FaceImage);

#[pymethods]
impl PyImage {
    #[staticmethod]
    fn from_luminance(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(PyImage(FaceImage::from_luminance(width, height, &values).map_err(err)?))
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyImage(io::read_image(&path).map_err(err)?))
    }

    /// Procedural face: textured albedo on `normals` under `light`.
    #[staticmethod]
    #[pyo3(signature = (normals, light, albedo_seed=0))]
    fn render(normals: &PyNormals, light: &PyLight, albedo_seed: u64) -> Self {
        let n = &normals.0;
        let albedo = synth::textured_albedo(n.width(), n.height(), albedo_seed);
        PyImage(synth::render(n, &albedo, &light.0, [1.0, 1.0, 1.0]))
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::write_image(&path, &self.0).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn luminance(&self) -> Vec<f64> {
        self.0.luminance().to_vec()
    }

    fn mean_abs_change(&self, other: &PyImage) -> f64 {
        advrelight::image::mean_abs_change(&self.0, &other.0)
    }
}

/// Seeded stand-in face embedder. Differentiable, so attacks use the
/// analytic gradient.
#[pyclass(name = "BuiltinEmbedder", frozen, skip_from_py_object)]
struct PyEmbedder(BuiltinEmbedder);

#[pymethods]
impl PyEmbedder {
    #[new]
    #[pyo3(signature = (seed=None))]
    fn new(seed: Option<u64>) -> Self {
        PyEmbedder(seed.map(BuiltinEmbedder::new).unwrap_or_default())
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.descriptor().dimension
    }

    fn embed(&self, image: &PyImage) -> PyResult<Vec<f64>> {
        Ok(self.0.embed(&image.0).map_err(err)?.values().to_vec())
    }

    fn similarity(&self, a: &PyImage, b: &PyImage) -> PyResult<f64> {
        let ea = self.0.embed(&a.0).map_err(err)?;
        let eb = self.0.embed(&b.0).map_err(err)?;
        advrelight::similarity(&ea, &eb).map_err(err)
    }
}

fn embedder_or_default(e: Option<&PyEmbedder>) -> BuiltinEmbedder {
    e.map(|e| e.0.clone()).unwrap_or_default()
}

#[pyfunction]
fn sh_basis(n: [f64; 3]) -> PyResult<[f64; 9]> {
    sh::sh_basis(n).map_err(err)
}

/// Unclamped shading, row-major, zero outside the mask.
#[pyfunction]
fn shade(normals: &PyNormals, light: &PyLight) -> Vec<f64> {
    sh::shade(&normals.0, &light.0).values
}

#[pyfunction]
#[pyo3(signature = (light, resolution=128))]
fn lighting_map(light: &PyLight, resolution: usize) -> PyResult<Vec<f64>> {
    Ok(sh::lighting_map(&light.0, resolution).map_err(err)?.values)
}

#[pyfunction]
fn estimate_light(image: &PyImage, normals: &PyNormals) -> PyResult<PyLight> {
    Ok(PyLight(relight::estimate_light(&image.0, &normals.0).map_err(err)?))
}

#[pyfunction]
fn quotient_relight(image: &PyImage, normals: &PyNormals, light: &PyLight, new_light: &PyLight) -> PyResult<PyImage> {
    let r = relight::quotient_relight(&image.0, &normals.0, &light.0, &new_light.0).map_err(err)?;
    Ok(PyImage(r.image))
}

/// Iterative adversarial light search. Returns `(image, adversarial light,
/// similarity per iteration)`.
#[pyfunction]
#[pyo3(signature = (image, normals, epsilon, iters=10, embedder=None, finite_differences=false))]
fn attack_aq(
    image: &PyImage,
    normals: &PyNormals,
    epsilon: f64,
    iters: usize,
    embedder: Option<&PyEmbedder>,
    finite_differences: bool,
) -> PyResult<(PyImage, PyLight, Vec<f64>)> {
    let mode = if finite_differences {
        GradientMode::FiniteDifference
    } else {
        GradientMode::AnalyticChain
    };
    let cfg = AttackConfig::new(epsilon, iters).map_err(err)?.with_mode(mode);
    let e = embedder_or_default(embedder);
    let t = aq::attack(&image.0, &normals.0, None, &e, &cfg).map_err(err)?;
    let sims = t.steps.iter().map(|s| s.similarity).collect();
    Ok((PyImage(t.image), PyLight(t.adversarial_light), sims))
}

/// Parameters of the one-step adversarial light network.
#[pyclass(name = "AdvLNet", frozen, skip_from_py_object)]
struct PyAdvLNet(AdvLNetParams);

#[pymethods]
impl PyAdvLNet {
    #[new]
    #[pyo3(signature = (variant="static", hidden=DEFAULT_HIDDEN, embed_dim=128, seed=0))]
    fn new(variant: &str, hidden: usize, embed_dim: usize, seed: u64) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(err)?;
        Ok(PyAdvLNet(AdvLNetParams::init(v, hidden, embed_dim, seed).map_err(err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyAdvLNet(AdvLNetParams::from_json(text).map_err(err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    #[pyo3(signature = (image, normals, embedder=None))]
    fn predict(&self, image: &PyImage, normals: &PyNormals, embedder: Option<&PyEmbedder>) -> PyResult<(PyImage, PyLight)> {
        let e = embedder_or_default(embedder);
        let (img, l) = ap::predict(&image.0, &normals.0, &self.0, &e).map_err(err)?;
        Ok((PyImage(img), PyLight(l)))
    }
}

#[pyfunction]
#[pyo3(signature = (azimuth, polar, distance, intensity=1.0))]
fn pls_to_sh(azimuth: f64, polar: f64, distance: f64, intensity: f64) -> PyResult<PyLight> {
    let pose = PLSPose::new(azimuth, polar, distance, intensity).map_err(err)?;
    Ok(PyLight(phy::pls_to_sh(&pose)))
}

/// Closed-loop point-source reproduction of `target` on a procedural head.
/// Returns the visited poses as `(azimuth, polar, distance)` tuples; the
/// last one is the converged pose.
#[pyfunction]
#[pyo3(signature = (target, start, side=48, ambient=0.05, max_iter=100))]
fn recurrence_loop(
    target: &PyLight,
    start: (f64, f64, f64),
    side: usize,
    ambient: f64,
    max_iter: usize,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let normals = synth::ellipsoid_normals(side, side, 0.8, 0.95, 0.7);
    let albedo = synth::textured_albedo(side, side, 3);
    let scene = SceneModel::new(normals, albedo, ambient).map_err(err)?;
    let pose = PLSPose::new(start.0, start.1, start.2, 1.0).map_err(err)?;
    let cfg = RecurrenceConfig {
        max_iter,
        ..RecurrenceConfig::default()
    };
    let r = phy::recurrence_loop(&target.0, pose, &scene, &cfg).map_err(err)?;
    Ok(r.poses.iter().map(|p| (p.azimuth, p.polar, p.distance)).collect())
}

/// AUC and ROC points `(fpr, tpr, threshold)` of a reference × target score
/// matrix given identity labels of both sides.
#[pyfunction]
fn roc(scores: Vec<Vec<f64>>, reference_labels: Vec<i64>, target_labels: Vec<i64>) -> PyResult<(f64, Vec<(f64, f64, f64)>)> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != cols) {
        return Err(AdvRelightError::new_err("ragged score matrix"));
    }
    let s = SimilarityMatrix::new(rows, cols, scores.concat()).map_err(err)?;
    let g = GroundTruth::from_labels(&reference_labels, &target_labels);
    let r = roc_auc(&s, &g).map_err(err)?;
    Ok((r.auc, r.points.iter().map(|p| (p.fpr, p.tpr, p.threshold)).collect()))
}

#[pymodule]
fn pyadvrelight(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AdvRelightError", m.py().get_type::<AdvRelightError>())?;
    m.add_class::<PyLight>()?;
    m.add_class::<PyNormals>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyEmbedder>()?;
    m.add_class::<PyAdvLNet>()?;
    m.add_function(wrap_pyfunction!(sh_basis, m)?)?;
    m.add_function(wrap_pyfunction!(shade, m)?)?;
    m.add_function(wrap_pyfunction!(lighting_map, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_light, m)?)?;
    m.add_function(wrap_pyfunction!(quotient_relight, m)?)?;
    m.add_function(wrap_pyfunction!(attack_aq, m)?)?;
    m.add_function(wrap_pyfunction!(pls_to_sh, m)?)?;
    m.add_function(wrap_pyfunction!(recurrence_loop, m)?)?;
    m.add_function(wrap_pyfunction!(roc, m)?)?;
    Ok(())
}
