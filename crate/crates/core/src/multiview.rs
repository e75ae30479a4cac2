//! Multiview auto-labeling: extrinsic calibration chain, circular viewpoints
//! around an object, per-view projection labels and the robust gaze box.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gbvs::{self, GbvsParams};
use crate::geom::{compose, invert, BBox2D, BBox3D, PinholeCamera, PointCloud, Raster, RigidTransform};
use crate::ingest::{save_omd_view, IngestError, ViewRecord};
use crate::roi::{self, RoiOptions};

pub const DEFAULT_MIN_DIST: f64 = 0.5;
pub const DEFAULT_MIN_PROJECTED: usize = 10;
pub const GAZE_BOX_FLOOR: f64 = 0.01;

#[derive(Debug, Error)]
pub enum MultiviewError {
    #[error("degenerate box")]
    DegenerateBox,
    #[error("need at least one waypoint")]
    NoWaypoints,
    #[error("{got} points projected into the frame, need {need}")]
    TooFewProjected { got: usize, need: usize },
    #[error("{0} gaze points, need at least 4")]
    TooFewGazePoints(usize),
    #[error("saliency: {0}")]
    Saliency(#[from] gbvs::GbvsError),
    #[error("roi: {0}")]
    Roi(#[from] roi::RoiError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Invalid(String),
}

/// `bTc = (mbTb)^-1 (hTmb)^-1 hTmc mcTc`: robot base to camera from the
/// tracked marker poses.
pub fn calibrate_extrinsics(
    h_t_mb: &RigidTransform,
    h_t_mc: &RigidTransform,
    mb_t_b: &RigidTransform,
    mc_t_c: &RigidTransform,
) -> RigidTransform {
    compose(&invert(mb_t_b), &compose(&invert(h_t_mb), &compose(h_t_mc, mc_t_c)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub world_from_camera: RigidTransform,
    pub target: [f64; 3],
}

impl Viewpoint {
    pub fn camera_from_world(&self) -> RigidTransform {
        self.world_from_camera.inverse()
    }

    pub fn position(&self) -> [f64; 3] {
        self.world_from_camera.translation()
    }
}

/// Camera pose at `eye` with its optical axis (+z) through `target`, image
/// x along `axis x up` and image y completing the right-handed frame. When
/// the axis is parallel to world +z, world +x serves as up.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> Result<RigidTransform, MultiviewError> {
    let f = Vector3::from(target) - Vector3::from(eye);
    if !(f.norm() > 0.0) {
        return Err(MultiviewError::Invalid("eye coincides with target".into()));
    }
    let f = f.normalize();
    let mut x = f.cross(&Vector3::z());
    if x.norm() < 1e-9 {
        x = f.cross(&Vector3::x());
    }
    let x = x.normalize();
    let y = f.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, f]));
    Ok(RigidTransform::from_rotation_translation(UnitQuaternion::from_rotation_matrix(&rot), eye))
}

/// `n` equiangular cameras at 45 degrees elevation around the box center, at
/// distance `max(2 |size|, min_dist)`, the first at azimuth 0.
pub fn circular_path(bbox: &BBox3D, n: usize, min_dist: f64) -> Result<Vec<Viewpoint>, MultiviewError> {
    if n == 0 {
        return Err(MultiviewError::NoWaypoints);
    }
    let diag = bbox.diagonal();
    if !(diag > 0.0 && diag.is_finite()) {
        return Err(MultiviewError::DegenerateBox);
    }
    let r = (2.0 * diag).max(min_dist);
    let c = bbox.center;
    (0..n)
        .map(|k| {
            let az = TAU * k as f64 / n as f64;
            let eye = [
                c[0] + r * FRAC_PI_4.cos() * az.cos(),
                c[1] + r * FRAC_PI_4.cos() * az.sin(),
                c[2] + r * FRAC_PI_4.sin(),
            ];
            Ok(Viewpoint {
                world_from_camera: look_at(eye, c)?,
                target: c,
            })
        })
        .collect()
}

/// Accepts the waypoints the predicate can reach, in order.
pub fn reachable(path: Vec<Viewpoint>, accept: impl Fn(&Viewpoint) -> bool) -> Vec<Viewpoint> {
    path.into_iter().filter(|v| accept(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledView {
    pub index: usize,
    pub roi: BBox2D,
    /// Projected points that landed inside the image.
    pub in_frame: usize,
}

/// Projects every point in front of the camera and boxes the ones that land
/// inside the image.
pub fn label_view(
    points: &PointCloud,
    view: &Viewpoint,
    cam: &PinholeCamera,
    min_projected: usize,
) -> Result<BBox2D, MultiviewError> {
    let cfw = view.camera_from_world();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut count = 0;
    for p in &points.points {
        let Ok(uv) = cam.project(cfw.apply(*p)) else { continue };
        if !cam.in_frame(uv) {
            continue;
        }
        count += 1;
        for a in 0..2 {
            lo[a] = lo[a].min(uv[a]);
            hi[a] = hi[a].max(uv[a]);
        }
    }
    if count < min_projected.max(1) {
        return Err(MultiviewError::TooFewProjected {
            got: count,
            need: min_projected.max(1),
        });
    }
    BBox2D::new(lo[0], lo[1], hi[0], hi[1]).map_err(|e| MultiviewError::Invalid(e.to_string()))
}

fn count_in_frame(points: &[[f64; 3]], view: &Viewpoint, cam: &PinholeCamera) -> usize {
    let cfw = view.camera_from_world();
    points
        .iter()
        .filter_map(|p| cam.project(cfw.apply(*p)).ok())
        .filter(|uv| cam.in_frame(*uv))
        .count()
}

/// Linear-interpolation quantile of sorted values at rank `q (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median center and `max(3 IQR, 0.01)` size per axis.
pub fn gaze_box_3d(points: &[[f64; 3]], frame_id: &str) -> Result<BBox3D, MultiviewError> {
    if points.len() < 4 {
        return Err(MultiviewError::TooFewGazePoints(points.len()));
    }
    let mut center = [0.0; 3];
    let mut size = [0.0; 3];
    for a in 0..3 {
        let mut v: Vec<f64> = points.iter().map(|p| p[a]).collect();
        v.sort_by(f64::total_cmp);
        center[a] = quantile_sorted(&v, 0.5);
        let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
        size[a] = (3.0 * iqr).max(GAZE_BOX_FLOOR);
    }
    BBox3D::new(center, size, frame_id).map_err(|e| MultiviewError::Invalid(e.to_string()))
}

/// Labels every waypoint from the projected object cloud. Failed views are
/// reported in place; the run continues.
pub fn label_run_cloud(
    object: &PointCloud,
    path: &[Viewpoint],
    cam: &PinholeCamera,
    min_projected: usize,
) -> Vec<Result<LabeledView, MultiviewError>> {
    path.par_iter()
        .enumerate()
        .map(|(index, view)| {
            let roi = label_view(object, view, cam, min_projected)?;
            Ok(LabeledView {
                index,
                roi,
                in_frame: count_in_frame(&object.points, view, cam),
            })
        })
        .collect()
}

/// Labels every waypoint from gaze: projects the gaze points into the view,
/// runs gaze-assisted saliency on the view image and boxes the result.
pub fn label_run_gaze(
    gaze: &[[f64; 3]],
    path: &[Viewpoint],
    images: &[Raster],
    cam: &PinholeCamera,
    params: &GbvsParams,
    roi_opts: RoiOptions,
) -> Vec<Result<LabeledView, MultiviewError>> {
    if images.len() != path.len() {
        let msg = format!("{} images for {} views", images.len(), path.len());
        return path.iter().map(|_| Err(MultiviewError::Invalid(msg.clone()))).collect();
    }
    path.par_iter()
        .zip(images)
        .enumerate()
        .map(|(index, (view, image))| {
            let cfw = view.camera_from_world();
            let uv: Vec<[f64; 2]> = gaze
                .iter()
                .filter_map(|p| cam.project(cfw.apply(*p)).ok())
                .filter(|uv| cam.in_frame(*uv))
                .collect();
            if uv.is_empty() {
                return Err(MultiviewError::TooFewProjected { got: 0, need: 1 });
            }
            let field = gbvs::saliency(image, &uv, params)?;
            let r = roi::extract_roi(&field, roi_opts)?;
            Ok(LabeledView {
                index,
                roi: r.bbox,
                in_frame: uv.len(),
            })
        })
        .collect()
}

/// Writes successful views in the OMD layout with the object frame as world
/// frame. Rasters are optional; placeholders are written when absent.
pub fn write_omd(
    dir: &Path,
    class: &str,
    cam: &PinholeCamera,
    path: &[Viewpoint],
    views: &[LabeledView],
    rasters: Option<&[(Raster, Raster)]>,
) -> Result<Vec<ViewRecord>, MultiviewError> {
    views
        .iter()
        .map(|v| {
            let record = ViewRecord {
                index: v.index as u32,
                rgb_path: Default::default(),
                depth_path: Default::default(),
                camera: *cam,
                camera_from_object: path[v.index].camera_from_world(),
                roi: Some(v.roi),
                class: class.to_string(),
            };
            let pair = rasters.map(|r| &r[v.index]);
            Ok(save_omd_view(dir, &record, pair.map(|p| &p.0), pair.map(|p| &p.1))?)
        })
        .collect()
}
