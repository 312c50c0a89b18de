//! Python bindings: tensors, point clouds, the four extraction modes, the
//! BEV loss helpers and the fusion forward demo.

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use radar4d::cfar::alpha_for_pfa as core_alpha_for_pfa;
use radar4d::nn::demo::{bev_grid_with_shape, FusionDemo};
use radar4d::{
    BEVFeatureMap, BevGrid, BoxLabel, CartesianGridSpec, CfarConfig, Error, Percentile,
    PolarGridSpec, RadarPoint, SceneFile, TlpConfig,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Range(m) => PyIndexError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn percentile(r: f64) -> PyResult<Percentile> {
    Percentile::new(r).map_err(err)
}

/// Polar grid layout (azimuth, range, elevation, Doppler).
#[pyclass(name = "PolarGrid", module = "radar4d", from_py_object)]
#[derive(Clone)]
struct PyPolarGrid(PolarGridSpec);

#[pymethods]
impl PyPolarGrid {
    #[new]
    #[pyo3(signature = (n_azimuth=None, n_range=None, n_elevation=None, n_doppler=None, range_step=None))]
    fn new(
        n_azimuth: Option<usize>,
        n_range: Option<usize>,
        n_elevation: Option<usize>,
        n_doppler: Option<usize>,
        range_step: Option<f64>,
    ) -> PyResult<Self> {
        let d = PolarGridSpec::default();
        let g = PolarGridSpec {
            n_azimuth: n_azimuth.unwrap_or(d.n_azimuth),
            n_range: n_range.unwrap_or(d.n_range),
            n_elevation: n_elevation.unwrap_or(d.n_elevation),
            n_doppler: n_doppler.unwrap_or(d.n_doppler),
            range_step: range_step.unwrap_or(d.range_step),
            ..d
        };
        g.validate().map_err(err)?;
        Ok(Self(g))
    }

    /// `(n_azimuth, n_range, n_elevation, n_doppler)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let g = &self.0;
        (g.n_azimuth, g.n_range, g.n_elevation, g.n_doppler)
    }

    #[getter]
    fn range_step(&self) -> f64 {
        self.0.range_step
    }

    fn __repr__(&self) -> String {
        let (a, r, e, d) = self.shape();
        format!("PolarGrid({a}x{r}x{e}x{d}, range_step={})", self.0.range_step)
    }
}

/// Raw 4D radar tensor in row-major (azimuth, range, elevation, Doppler) order.
#[pyclass(name = "RadarTensor", module = "radar4d")]
struct PyRadarTensor(radar4d::RadarTensor4D);

#[pymethods]
impl PyRadarTensor {
    #[new]
    fn new(grid: PyPolarGrid, values: Vec<f32>) -> PyResult<Self> {
        radar4d::RadarTensor4D::new(grid.0, values).map(Self).map_err(err)
    }

    /// Render a scene. `scene` is TOML text with `[grid]` and `[scene]`
    /// tables; the built-in grid is used when `[grid]` is absent.
    #[staticmethod]
    #[pyo3(signature = (scene, seed=None))]
    fn from_scene(py: Python<'_>, scene: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut file = SceneFile::parse(scene).map_err(err)?;
        if let Some(s) = seed {
            file.scene.seed = s;
        }
        py.detach(|| radar4d::generate_4drt(&file.scene, &file.grid))
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        radar4d::RadarTensor4D::load(path).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        radar4d::RadarTensor4D::read_from(data).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[getter]
    fn grid(&self) -> PyPolarGrid {
        PyPolarGrid(*self.0.grid())
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        self.grid().shape()
    }

    fn values(&self) -> Vec<f32> {
        self.0.values().to_vec()
    }

    fn get(&self, a: usize, r: usize, e: usize, d: usize) -> PyResult<f32> {
        let g = self.0.grid();
        if a >= g.n_azimuth || r >= g.n_range || e >= g.n_elevation || d >= g.n_doppler {
            return Err(PyIndexError::new_err(format!("index ({a}, {r}, {e}, {d})")));
        }
        Ok(self.0.get(a, r, e, d))
    }

    /// Doppler-averaged power volume.
    fn power_map(&self) -> PyPowerVolume {
        PyPowerVolume(radar4d::power_map(&self.0))
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// Doppler-averaged power over (azimuth, range, elevation).
#[pyclass(name = "PowerVolume", module = "radar4d")]
struct PyPowerVolume(radar4d::PowerVolume3D);

#[pymethods]
impl PyPowerVolume {
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let g = self.0.grid();
        (g.n_azimuth, g.n_range, g.n_elevation)
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn get(&self, a: usize, r: usize, e: usize) -> PyResult<f64> {
        let (na, nr, ne) = self.shape();
        if a >= na || r >= nr || e >= ne {
            return Err(PyIndexError::new_err(format!("index ({a}, {r}, {e})")));
        }
        Ok(self.0.get(a, r, e))
    }

    fn percentile_threshold(&self, r: f64) -> PyResult<f64> {
        radar4d::percentile_threshold(&self.0, percentile(r)?).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Cartesian point cloud; each point is `(x, y, z, power)`.
#[pyclass(name = "PointCloud", module = "radar4d", from_py_object)]
#[derive(Clone)]
struct PyPointCloud(radar4d::PointCloud);

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, frame_id=String::new()))]
    fn new(points: Vec<(f64, f64, f64, f64)>, frame_id: String) -> Self {
        let pts = points
            .into_iter()
            .map(|(x, y, z, p)| RadarPoint::new(x, y, z, p))
            .collect();
        Self(radar4d::PointCloud::new(pts, frame_id))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        radar4d::read_cloud(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        radar4d::write_cloud(path, &self.0).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &radar4d::cloud_io::cloud_to_bytes(&self.0))
    }

    #[getter]
    fn frame_id(&self) -> &str {
        &self.0.frame_id
    }

    fn points(&self) -> Vec<(f32, f32, f32, f32)> {
        self.0.points.iter().map(|p| (p.x, p.y, p.z, p.power)).collect()
    }

    /// `(points, bytes, megabytes, density)`; density is points per
    /// cubic meter of the default region of interest.
    fn stats(&self) -> (usize, u64, f64, f64) {
        let s = radar4d::size_stats(&self.0, &CartesianGridSpec::default());
        (s.num_points, s.bytes_on_disk, s.megabytes(), s.density)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points, frame_id={:?})", self.0.len(), self.0.frame_id)
    }
}

/// CA-CFAR window. `training`/`guard` are per-side cell counts along
/// (azimuth, range, elevation); set either `alpha` or `pfa`.
#[pyclass(name = "CfarConfig", module = "radar4d", from_py_object)]
#[derive(Clone)]
struct PyCfarConfig(CfarConfig);

#[pymethods]
impl PyCfarConfig {
    #[new]
    #[pyo3(signature = (training=(8, 8, 0), guard=(2, 2, 0), axes=(true, true, false), alpha=None, pfa=None))]
    fn new(
        training: (usize, usize, usize),
        guard: (usize, usize, usize),
        axes: (bool, bool, bool),
        alpha: Option<f64>,
        pfa: Option<f64>,
    ) -> PyResult<Self> {
        let mut cfg = CfarConfig {
            training_cells: [training.0, training.1, training.2],
            guard_cells: [guard.0, guard.1, guard.2],
            scale_alpha: 1.0,
            axes: [axes.0, axes.1, axes.2],
        };
        cfg.scale_alpha = match (alpha, pfa) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give alpha or pfa, not both")),
            (Some(a), None) => a,
            (None, p) => {
                let p = p.unwrap_or(1e-3);
                if !(p > 0.0 && p < 1.0) {
                    return Err(PyValueError::new_err(format!("pfa {p} outside (0, 1)")));
                }
                core_alpha_for_pfa(p, cfg.num_training())
            }
        };
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.scale_alpha
    }

    #[getter]
    fn num_training(&self) -> usize {
        self.0.num_training()
    }
}

#[pyfunction]
fn alpha_for_pfa(pfa: f64, n: usize) -> PyResult<f64> {
    if !(pfa > 0.0 && pfa < 1.0) || n == 0 {
        return Err(PyValueError::new_err("need 0 < pfa < 1 and n >= 1"));
    }
    Ok(core_alpha_for_pfa(pfa, n))
}

/// Cells at or above the `r`-th percentile of the power map.
#[pyfunction]
#[pyo3(signature = (tensor, r=99.9))]
fn polar_percentile(py: Python<'_>, tensor: &PyRadarTensor, r: f64) -> PyResult<PyPointCloud> {
    let r = percentile(r)?;
    py.detach(|| radar4d::filter_polar_percentile(&tensor.0, r))
        .map(PyPointCloud)
        .map_err(err)
}

/// Trilinear resampling to a Cartesian grid followed by a percentile filter.
#[pyfunction]
#[pyo3(signature = (tensor, r=90.0, voxel=0.4))]
fn cartesian_percentile(
    py: Python<'_>,
    tensor: &PyRadarTensor,
    r: f64,
    voxel: f64,
) -> PyResult<PyPointCloud> {
    let r = percentile(r)?;
    py.detach(|| {
        let grid = CartesianGridSpec::with_voxel(voxel);
        let vox = radar4d::resample_to_cartesian(&radar4d::power_map(&tensor.0), &grid)?;
        radar4d::filter_cartesian_percentile(&vox, r)
    })
    .map(PyPointCloud)
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (tensor, config=None))]
fn ca_cfar(
    py: Python<'_>,
    tensor: &PyRadarTensor,
    config: Option<PyCfarConfig>,
) -> PyResult<PyPointCloud> {
    let cfg = config.map(|c| c.0).unwrap_or_default();
    py.detach(|| radar4d::ca_cfar(&radar4d::power_map(&tensor.0), &cfg))
        .map(PyPointCloud)
        .map_err(err)
}

/// Permissive CFAR followed by a per-range-ring percentile.
#[pyfunction]
#[pyo3(signature = (tensor, coarse=None, r=50.0))]
fn two_level(
    py: Python<'_>,
    tensor: &PyRadarTensor,
    coarse: Option<PyCfarConfig>,
    r: f64,
) -> PyResult<PyPointCloud> {
    percentile(r)?;
    let mut cfg = TlpConfig::default();
    if let Some(c) = coarse {
        cfg.coarse = c.0;
    }
    cfg.second_stage_r = r;
    py.detach(|| radar4d::two_level_preproc(&tensor.0, &cfg))
        .map(PyPointCloud)
        .map_err(err)
}

fn labels_from(boxes: Vec<(f64, f64, f64, f64, f64)>) -> Vec<BoxLabel> {
    boxes
        .into_iter()
        .map(|(center_x, center_y, length, width, yaw)| BoxLabel {
            center_x,
            center_y,
            length,
            width,
            yaw,
        })
        .collect()
}

fn roi_bev(cell: f64) -> BevGrid {
    let roi = CartesianGridSpec::default();
    BevGrid {
        cell_size: [cell, cell],
        ..BevGrid::from(&roi)
    }
}

/// Gaussian BEV heatmap for `(center_x, center_y, length, width, yaw)`
/// boxes over the default region of interest. Returns rows of values.
#[pyfunction]
#[pyo3(signature = (boxes, cell=0.4))]
fn heatmap(boxes: Vec<(f64, f64, f64, f64, f64)>, cell: f64) -> PyResult<Vec<Vec<f32>>> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(PyValueError::new_err(format!("cell {cell} must be > 0")));
    }
    let h = radar4d::splat_gaussian_heatmap(&labels_from(boxes), &roi_bev(cell)).map_err(err)?;
    Ok(h.values.chunks(h.width).map(<[f32]>::to_vec).collect())
}

/// Masked MSE between two BEV feature maps given as flat `(C, H, W)` lists,
/// with an `H x W` mask.
#[pyfunction]
fn masked_mse(
    teacher: Vec<f32>,
    student: Vec<f32>,
    mask: Vec<f32>,
    shape: (usize, usize, usize),
) -> PyResult<f64> {
    let (c, h, w) = shape;
    let t = BEVFeatureMap::new(c, h, w, teacher).map_err(err)?;
    let s = BEVFeatureMap::new(c, h, w, student).map_err(err)?;
    if mask.len() != h * w {
        return Err(PyValueError::new_err(format!(
            "mask has {} values, expected {}",
            mask.len(),
            h * w
        )));
    }
    let mut m = radar4d::Heatmap::zeros(h, w);
    m.values = mask;
    radar4d::masked_mse(&t, &s, &m).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (l_detect, l_distill, alpha=1.0, beta=1.0))]
fn total_loss(l_detect: f64, l_distill: f64, alpha: f64, beta: f64) -> f64 {
    radar4d::total_loss(l_detect, l_distill, radar4d::LossWeights { alpha, beta })
}

/// Distillation loss between two clouds on the default BEV grid, masked by
/// the heatmap of `boxes`.
#[pyfunction]
#[pyo3(signature = (teacher, student, boxes, cell=0.4))]
fn distill_loss(
    teacher: &PyPointCloud,
    student: &PyPointCloud,
    boxes: Vec<(f64, f64, f64, f64, f64)>,
    cell: f64,
) -> PyResult<f64> {
    let grid = roi_bev(cell);
    let mask = radar4d::splat_gaussian_heatmap(&labels_from(boxes), &grid).map_err(err)?;
    let t = radar4d::voxelize_bev(&teacher.0, &grid);
    let s = radar4d::voxelize_bev(&student.0, &grid);
    radar4d::masked_mse(&t, &s, &mask).map_err(err)
}

/// Aggregate three teacher clouds and densify the student on a
/// `size x size` BEV grid with seeded weights. Returns a dict with the
/// output shapes, the masked loss and the stage times in seconds.
#[pyfunction]
#[pyo3(signature = (teachers, student, boxes=Vec::new(), size=32, fused_width=128, seed=0))]
fn fusion_demo<'py>(
    py: Python<'py>,
    teachers: Vec<PyPointCloud>,
    student: &PyPointCloud,
    boxes: Vec<(f64, f64, f64, f64, f64)>,
    size: usize,
    fused_width: usize,
    seed: u64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    use pyo3::types::PyDictMethods;
    let roi = CartesianGridSpec::default();
    let grid = bev_grid_with_shape(roi.x_bounds, roi.y_bounds, size, size);
    let labels = labels_from(boxes);
    let teachers: Vec<_> = teachers.into_iter().map(|c| c.0).collect();
    let report = py
        .detach(|| FusionDemo::seeded(fused_width, seed)?.run(&teachers, &student.0, &labels, &grid))
        .map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("teacher_shape", report.teacher_shape.to_vec())?;
    d.set_item("student_shape", report.student_shape.to_vec())?;
    d.set_item("loss", report.loss)?;
    d.set_item("aggregate_seconds", report.aggregate_time.as_secs_f64())?;
    d.set_item("densify_seconds", report.densify_time.as_secs_f64())?;
    Ok(d)
}

#[pymodule(name = "radar4d")]
fn radar4d_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolarGrid>()?;
    m.add_class::<PyRadarTensor>()?;
    m.add_class::<PyPowerVolume>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyCfarConfig>()?;
    m.add_function(wrap_pyfunction!(alpha_for_pfa, m)?)?;
    m.add_function(wrap_pyfunction!(polar_percentile, m)?)?;
    m.add_function(wrap_pyfunction!(cartesian_percentile, m)?)?;
    m.add_function(wrap_pyfunction!(ca_cfar, m)?)?;
    m.add_function(wrap_pyfunction!(two_level, m)?)?;
    m.add_function(wrap_pyfunction!(heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(masked_mse, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_demo, m)?)?;
    Ok(())
}
