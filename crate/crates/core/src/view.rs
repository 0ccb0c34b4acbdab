//! Synthetic partial observations: orthographic z-buffer projection of a
//! cloud at a given view, keeping the nearest point per depth-grid cell.

use serde::{Deserialize, Serialize};

use crate::cloud::{resample_points, Point3, PointCloud, SeededRng};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_RESOLUTION: usize = 64;
pub const AZIMUTH_RANGE_DEG: (f64, f64) = (0.0, 360.0);
pub const ELEVATION_RANGE_DEG: (f64, f64) = (-20.0, 40.0);

/// Grid half-width is the half-extent of the projected cloud times this factor.
const GRID_MARGIN: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewParams {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub grid_resolution: usize,
}

impl ViewParams {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, grid_resolution: usize) -> Result<Self> {
        let v = ViewParams {
            azimuth_deg,
            elevation_deg,
            grid_resolution,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = AZIMUTH_RANGE_DEG;
        let (elo, ehi) = ELEVATION_RANGE_DEG;
        if !(alo..ahi).contains(&self.azimuth_deg) {
            return Err(Error::InvalidArgument(format!(
                "azimuth {} outside [{alo}, {ahi})",
                self.azimuth_deg
            )));
        }
        if !(elo..=ehi).contains(&self.elevation_deg) {
            return Err(Error::InvalidArgument(format!(
                "elevation {} outside [{elo}, {ehi}]",
                self.elevation_deg
            )));
        }
        if self.grid_resolution < 2 {
            return Err(Error::InvalidArgument(
                "grid resolution must be >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Unit vector from the object toward the camera, in world coordinates.
    ///
    /// The up axis is +y; azimuth 0 / elevation 0 looks down the -z axis from +z.
    pub fn camera_direction(&self) -> Point3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        Point3::new(sa * ce, se, ca * ce)
    }

    /// World to camera frame: rotate by -azimuth about +y, then by the
    /// elevation about the lateral x axis so the camera direction maps to +z.
    pub fn to_camera(&self, p: Point3) -> Point3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        let x1 = p.x * ca - p.z * sa;
        let z1 = p.x * sa + p.z * ca;
        let y2 = p.y * ce - z1 * se;
        let z2 = p.y * se + z1 * ce;
        Point3::new(x1, y2, z2)
    }
}

impl Default for ViewParams {
    fn default() -> Self {
        ViewParams {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }
}

/// Azimuth uniform on [0, 360), elevation uniform on [-20, 40].
pub fn sample_view(rng: &mut SeededRng) -> ViewParams {
    sample_view_with_resolution(rng, DEFAULT_GRID_RESOLUTION)
}

pub fn sample_view_with_resolution(rng: &mut SeededRng, grid_resolution: usize) -> ViewParams {
    let azimuth_deg = rng.uniform(AZIMUTH_RANGE_DEG.0, AZIMUTH_RANGE_DEG.1);
    let elevation_deg = rng.uniform_inclusive(ELEVATION_RANGE_DEG.0, ELEVATION_RANGE_DEG.1);
    ViewParams {
        azimuth_deg,
        elevation_deg,
        grid_resolution,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthCell {
    pub point_index: usize,
    pub depth: f64,
}

/// Square orthographic depth buffer. Depth grows away from the camera.
#[derive(Clone, Debug)]
pub struct DepthGrid {
    resolution: usize,
    origin: (f64, f64),
    cell_size: f64,
    cells: Vec<Option<DepthCell>>,
}

impl DepthGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Side length of one cell in camera-frame units.
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size * std::f64::consts::SQRT_2
    }

    /// Lower-left corner of the grid in camera (x, y).
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// Cell at column `ix`, row `iy`.
    pub fn cell(&self, ix: usize, iy: usize) -> Option<DepthCell> {
        self.cells[iy * self.resolution + ix]
    }

    pub fn occupied(&self) -> impl Iterator<Item = DepthCell> + '_ {
        self.cells.iter().flatten().copied()
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Indices of the visible points in row-major cell order.
    pub fn visible_indices(&self) -> Vec<usize> {
        self.occupied().map(|c| c.point_index).collect()
    }
}

/// Z-buffers `cloud` into a `grid_resolution`² grid spanning the square that
/// bounds the rotated cloud's (x, y) extent plus a 1% margin.
pub fn project_to_depth_grid(cloud: &PointCloud, view: &ViewParams) -> DepthGrid {
    project_points(cloud.points(), view)
}

pub(crate) fn project_points(points: &[Point3], view: &ViewParams) -> DepthGrid {
    let res = view.grid_resolution.max(2);
    let cam: Vec<Point3> = points.iter().map(|&p| view.to_camera(p)).collect();

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &cam {
        xmin = xmin.min(c.x);
        xmax = xmax.max(c.x);
        ymin = ymin.min(c.y);
        ymax = ymax.max(c.y);
    }
    let cx = 0.5 * (xmin + xmax);
    let cy = 0.5 * (ymin + ymax);
    let mut half = 0.5 * (xmax - xmin).max(ymax - ymin) * GRID_MARGIN;
    if !(half > 0.0) {
        half = 0.5;
    }
    let origin = (cx - half, cy - half);
    let width = 2.0 * half;

    let mut cells: Vec<Option<DepthCell>> = vec![None; res * res];
    let max_cell = (res - 1) as f64;
    for (i, c) in cam.iter().enumerate() {
        // Scaling by the resolution last keeps cell boundaries nested when it doubles.
        let ix = (((c.x - origin.0) / width) * res as f64)
            .floor()
            .clamp(0.0, max_cell) as usize;
        let iy = (((c.y - origin.1) / width) * res as f64)
            .floor()
            .clamp(0.0, max_cell) as usize;
        let depth = -c.z;
        let slot = &mut cells[iy * res + ix];
        match slot {
            Some(cell) if cell.depth <= depth => {}
            _ => {
                *slot = Some(DepthCell {
                    point_index: i,
                    depth,
                })
            }
        }
    }
    DepthGrid {
        resolution: res,
        origin,
        cell_size: width / res as f64,
        cells,
    }
}

/// Visible subset of `cloud` from `view`, in original world coordinates.
pub fn visible_points(cloud: &PointCloud, view: &ViewParams) -> Vec<Point3> {
    visible_from(cloud.points(), view)
}

pub(crate) fn visible_from(points: &[Point3], view: &ViewParams) -> Vec<Point3> {
    project_points(points, view)
        .occupied()
        .map(|c| points[c.point_index])
        .collect()
}

/// Projects, keeps the visible original points, and resamples them to `n_out`.
pub fn synthesize_partial(
    cloud: &PointCloud,
    view: &ViewParams,
    n_out: usize,
    rng: &mut SeededRng,
) -> Result<PointCloud> {
    resample_points(&visible_points(cloud, view), n_out, rng)
}

pub(crate) fn synthesize_from(
    points: &[Point3],
    view: &ViewParams,
    n_out: usize,
    rng: &mut SeededRng,
) -> Result<PointCloud> {
    resample_points(&visible_from(points, view), n_out, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn sampled_views_stay_in_range_and_repeat_per_seed() {
        let mut rng = SeededRng::new(8);
        for _ in 0..1000 {
            let v = sample_view(&mut rng);
            assert!(v.validate().is_ok());
        }
        let a = sample_view(&mut SeededRng::new(42));
        let b = sample_view(&mut SeededRng::new(42));
        assert_eq!(a, b);
    }

    #[test]
    fn elevation_mean_is_near_midpoint() {
        let mut rng = SeededRng::new(99);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample_view(&mut rng).elevation_deg)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 10.0).abs() < 0.6, "mean {mean}");
    }

    #[test]
    fn view_params_validation() {
        assert!(ViewParams::new(360.0, 0.0, 64).is_err());
        assert!(ViewParams::new(10.0, 41.0, 64).is_err());
        assert!(ViewParams::new(10.0, -20.0, 64).is_ok());
        assert!(ViewParams::new(10.0, 0.0, 1).is_err());
    }

    #[test]
    fn camera_direction_maps_to_plus_z() {
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            let v = sample_view(&mut rng);
            let d = v.to_camera(v.camera_direction());
            assert!(d.x.abs() < 1e-12 && d.y.abs() < 1e-12 && (d.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_fills_one_cell() {
        let cloud = PointCloud::new(vec![p(0.2, -0.1, 0.4)]).unwrap();
        let grid = project_to_depth_grid(&cloud, &ViewParams::default());
        assert_eq!(grid.occupied_count(), 1);
        assert_eq!(grid.visible_indices(), vec![0]);
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        // Front view looks from +z: depth = -z, so z = -1 has depth 1 and z = -2 depth 2.
        let far = p(0.0, 0.0, -2.0);
        let near = p(0.0, 0.0, -1.0);
        for pts in [vec![far, near], vec![near, far]] {
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let grid = project_to_depth_grid(&cloud, &ViewParams::default());
            assert_eq!(grid.occupied_count(), 1);
            let cell = grid.occupied().next().unwrap();
            assert_eq!(pts[cell.point_index], near);
            assert_eq!(cell.depth, 1.0);
            let out =
                synthesize_partial(&cloud, &ViewParams::default(), 10, &mut SeededRng::new(1))
                    .unwrap();
            assert!(out.iter().all(|&q| q == near));
        }
    }

    #[test]
    fn equal_depth_ties_keep_lowest_index() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 1.0), p(0.0, 0.0, 1.0)]).unwrap();
        let grid = project_to_depth_grid(&cloud, &ViewParams::default());
        assert_eq!(grid.visible_indices(), vec![0]);
    }

    #[test]
    fn lattice_cube_front_view_sees_front_face() {
        // Regular face lattice denser than the grid: every cell sees the +z face.
        let n = 101;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = -0.5 + i as f64 / (n - 1) as f64;
                let b = -0.5 + j as f64 / (n - 1) as f64;
                for s in [-0.5, 0.5] {
                    pts.push(p(a, b, s));
                    pts.push(p(a, s, b));
                    pts.push(p(s, a, b));
                }
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let vis = visible_points(&cloud, &ViewParams::default());
        assert!(!vis.is_empty());
        assert!(
            vis.iter().all(|q| q.z == 0.5),
            "all visible points on z = 0.5"
        );
    }

    #[test]
    fn single_point_synthesis_repeats() {
        let a = p(0.3, 0.3, 0.3);
        let cloud = PointCloud::new(vec![a]).unwrap();
        let out = synthesize_partial(
            &cloud,
            &ViewParams::new(123.0, 17.0, 64).unwrap(),
            4,
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert_eq!(out.points(), &[a; 4]);
    }
}
