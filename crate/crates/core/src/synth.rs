//! Seeded synthetic data: flat 2D stimuli with gaze, tabletop point clouds
//! and ray-cast views of an axis-aligned box.

use std::ops::Range;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{BBox2D, PinholeCamera, PointCloud, Raster, RigidTransform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Filled rectangle with inclusive pixel corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub bbox: BBox2D,
    pub color: [f64; 3],
}

/// Background with uniform noise of the given amplitude, rectangles painted
/// in order on top.
pub fn render_rects(width: usize, height: usize, background: [f64; 3], noise: f64, rects: &[Rect], seed: u64) -> Raster {
    let mut r = rng(seed);
    let mut img = Raster::filled(width, height, 3, 0.0);
    for y in 0..height {
        for x in 0..width {
            let n = if noise > 0.0 { r.random_range(-noise..noise) } else { 0.0 };
            let mut c = background.map(|b| b + n);
            for rect in rects {
                if rect.bbox.contains(x as f64, y as f64) {
                    c = rect.color;
                }
            }
            for (k, v) in c.iter().enumerate() {
                img.set(x, y, k, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// `n` isotropic Gaussian samples around `center`.
pub fn jitter_gaze(center: [f64; 2], sigma: f64, n: usize, r: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let d = Normal::new(0.0, sigma).expect("valid sigma");
    (0..n).map(|_| [center[0] + d.sample(r), center[1] + d.sample(r)]).collect()
}

/// One frame of the gaze-saliency benchmark: a high-contrast target with
/// gaze around it and optionally an equally salient decoy.
#[derive(Debug, Clone)]
pub struct GazeFrame {
    pub image: Raster,
    pub target: BBox2D,
    pub decoy: Option<BBox2D>,
    pub gaze: Vec<[f64; 2]>,
}

pub const FRAME_WIDTH: usize = 160;
pub const FRAME_HEIGHT: usize = 120;

fn place(r: &mut ChaCha8Rng, w: f64, h: f64, avoid: Option<&BBox2D>) -> BBox2D {
    loop {
        let x = r.random_range(4.0..FRAME_WIDTH as f64 - w - 4.0).round();
        let y = r.random_range(4.0..FRAME_HEIGHT as f64 - h - 4.0).round();
        let b = BBox2D::new(x, y, x + w - 1.0, y + h - 1.0).expect("ordered corners");
        let clear = avoid.is_none_or(|a| {
            b.x1 > a.x2 + 12.0 || a.x1 > b.x2 + 12.0 || b.y1 > a.y2 + 12.0 || a.y1 > b.y2 + 12.0
        });
        if clear {
            return b;
        }
    }
}

pub fn gaze_frame(seed: u64, with_decoy: bool, gaze_sigma: f64, gaze_count: usize) -> GazeFrame {
    let mut r = rng(seed);
    let w = r.random_range(28.0f64..48.0).round();
    let h = r.random_range(28.0f64..48.0).round();
    let target = place(&mut r, w, h, None);
    let decoy = with_decoy.then(|| {
        let dw = r.random_range(28.0f64..48.0).round();
        let dh = r.random_range(28.0f64..48.0).round();
        place(&mut r, dw, dh, Some(&target))
    });
    let bright = [0.95, 0.95, 0.95];
    let mut rects = vec![Rect { bbox: target, color: bright }];
    if let Some(d) = decoy {
        rects.push(Rect { bbox: d, color: bright });
    }
    let image = render_rects(FRAME_WIDTH, FRAME_HEIGHT, [0.12; 3], 0.03, &rects, r.random());
    let center = [0.5 * (target.x1 + target.x2 + 1.0), 0.5 * (target.y1 + target.y2 + 1.0)];
    let gaze = jitter_gaze(center, gaze_sigma, gaze_count, &mut r);
    GazeFrame { image, target, decoy, gaze }
}

/// Tabletop cloud: a noisy plane, separated blobs above it and uniform
/// outliers. Blob `i` occupies `blobs[i]`; outliers come last.
#[derive(Debug, Clone)]
pub struct TabletopScene {
    pub cloud: PointCloud,
    pub plane_normal: [f64; 3],
    pub plane: Range<usize>,
    pub blobs: Vec<Range<usize>>,
    pub blob_centers: Vec<[f64; 3]>,
    pub outliers: Range<usize>,
    pub gazed: usize,
    pub gaze: [f64; 3],
}

pub const TABLE_Z: f64 = 1.0;

/// Table at `z = 1` in a camera frame looking along `+z`; objects sit on the
/// camera side of the table.
pub fn tabletop_scene(seed: u64) -> TabletopScene {
    let mut r = rng(seed);
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let plane_n = 5000;
    for _ in 0..plane_n {
        pts.push([r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), TABLE_Z + r.random_range(-0.002..0.002)]);
    }
    let count = r.random_range(2..=4);
    let mut centers: Vec<[f64; 3]> = Vec::new();
    let mut radii = Vec::new();
    while centers.len() < count {
        let rad = r.random_range(0.035..0.06);
        let c = [r.random_range(-0.35..0.35), r.random_range(-0.35..0.35), TABLE_Z - 0.04 - rad];
        let clear = centers
            .iter()
            .zip(&radii)
            .all(|(o, ro): (&[f64; 3], &f64)| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() > rad + ro + 0.15);
        if clear {
            centers.push(c);
            radii.push(rad);
        }
    }
    let mut blobs = Vec::new();
    for (c, &rad) in centers.iter().zip(&radii) {
        let start = pts.len();
        let n = r.random_range(600..900);
        for _ in 0..n {
            // Uniform on the sphere surface.
            let v = loop {
                let v = Vector3::<f64>::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let len = v.norm();
                if len > 1e-3 && len <= 1.0 {
                    break v / len;
                }
            };
            pts.push([c[0] + rad * v.x, c[1] + rad * v.y, c[2] + rad * v.z]);
        }
        blobs.push(start..pts.len());
    }
    let inliers = pts.len();
    let n_out = (inliers as f64 * 0.3 / 0.7).round() as usize;
    let out0 = pts.len();
    for _ in 0..n_out {
        pts.push([r.random_range(-0.6..0.6), r.random_range(-0.6..0.6), r.random_range(0.5..1.2)]);
    }
    let gazed = r.random_range(0..count);
    // Gaze lands near the visible (camera-facing) side of the blob.
    let c = centers[gazed];
    let gaze = [
        c[0] + r.random_range(-0.005..0.005),
        c[1] + r.random_range(-0.005..0.005),
        c[2] - radii[gazed] + r.random_range(-0.005..0.005),
    ];
    TabletopScene {
        cloud: PointCloud::new(pts, "camera").expect("finite points"),
        plane_normal: [0.0, 0.0, 1.0],
        plane: 0..plane_n,
        blobs,
        blob_centers: centers,
        outliers: out0..out0 + n_out,
        gazed,
        gaze,
    }
}

/// Points spread evenly over the faces of an axis-aligned cube.
pub fn cube_cloud(center: [f64; 3], edge: f64, per_edge: usize, frame_id: &str) -> PointCloud {
    let mut pts = Vec::new();
    let h = edge / 2.0;
    let steps: Vec<f64> = (0..per_edge).map(|i| -h + edge * i as f64 / (per_edge - 1).max(1) as f64).collect();
    for axis in 0..3 {
        for side in [-h, h] {
            for &a in &steps {
                for &b in &steps {
                    let mut p = [0.0; 3];
                    p[axis] = side;
                    p[(axis + 1) % 3] = a;
                    p[(axis + 2) % 3] = b;
                    pts.push([center[0] + p[0], center[1] + p[1], center[2] + p[2]]);
                }
            }
        }
    }
    PointCloud::new(pts, frame_id).expect("finite points")
}

/// Ray-casts one axis-aligned box into a camera at `world_from_camera`.
/// Returns RGB (object color over background) and depth in metres
/// (0 where the ray misses).
pub fn render_box(
    cam: &PinholeCamera,
    world_from_camera: &RigidTransform,
    lo: [f64; 3],
    hi: [f64; 3],
    color: [f64; 3],
    background: [f64; 3],
) -> (Raster, Raster) {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut rgb = Raster::filled(w, h, 3, 0.0);
    let mut depth = Raster::filled(w, h, 1, 0.0);
    let origin = world_from_camera.translation();
    for y in 0..h {
        for x in 0..w {
            let d_cam = [(x as f64 + 0.5 - cam.cx) / cam.fx, (y as f64 + 0.5 - cam.cy) / cam.fy, 1.0];
            let d = world_from_camera.apply_vector(d_cam);
            let hit = ray_aabb(origin, d, lo, hi);
            let c = if hit.is_some() { color } else { background };
            for k in 0..3 {
                rgb.set(x, y, k, c[k]);
            }
            // The camera-frame ray has unit z, so the ray parameter is depth.
            depth.set(x, y, 0, hit.unwrap_or(0.0));
        }
    }
    (rgb, depth)
}

/// Entry parameter of a ray against a box, if it hits in front of the origin.
pub fn ray_aabb(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1 && t1 > 0.0).then_some(t0.max(0.0))
}
