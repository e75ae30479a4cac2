//! Gaze-seeded point cloud segmentation: pass-through and voxel filters,
//! normal-constrained RANSAC plane removal, Euclidean clustering and
//! selection of the cluster(s) the gaze points at.

use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{BBox3D, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("no plane candidate satisfies the normal constraint")]
    NoPlaneFound,
    #[error("no cluster selected by the gaze point")]
    NothingSegmented,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMode {
    /// The cluster holding the clustered point nearest to the gaze.
    Nearest,
    /// All clusters with a point within `gaze_radius` of the gaze.
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub expected_normal: [f64; 3],
    pub max_deviation_deg: f64,
    pub inlier_distance: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            expected_normal: [0.0, 0.0, 1.0],
            max_deviation_deg: 30.0,
            inlier_distance: 0.01,
            iterations: 1000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub z_min: f64,
    pub z_max: f64,
    pub leaf: f64,
    pub ransac: RansacParams,
    pub cluster_tolerance: f64,
    pub min_cluster_size: usize,
    pub mode: SelectMode,
    pub gaze_radius: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            z_min: 0.0,
            z_max: 3.0,
            leaf: 0.03,
            ransac: RansacParams::default(),
            cluster_tolerance: 0.005,
            min_cluster_size: 500,
            mode: SelectMode::Nearest,
            gaze_radius: 0.02,
        }
    }
}

impl SegParams {
    /// Radius selection within 2 cm, clusters of at least five points.
    pub fn radius_variant() -> Self {
        Self {
            mode: SelectMode::Radius,
            gaze_radius: 0.02,
            min_cluster_size: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        let positive = [
            ("leaf", self.leaf),
            ("inlier_distance", self.ransac.inlier_distance),
            ("cluster_tolerance", self.cluster_tolerance),
            ("gaze_radius", self.gaze_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CloudError::Invalid(format!("{name} = {v}")));
            }
        }
        let dev = self.ransac.max_deviation_deg;
        if !(0.0..=90.0).contains(&dev) {
            return Err(CloudError::Invalid(format!("max_deviation_deg = {dev}")));
        }
        if !(self.z_min <= self.z_max) {
            return Err(CloudError::Invalid("z_min > z_max".into()));
        }
        if self.min_cluster_size == 0 || self.ransac.iterations == 0 {
            return Err(CloudError::Invalid("zero cluster size or iteration budget".into()));
        }
        if Vector3::from(self.ransac.expected_normal).norm() == 0.0 {
            return Err(CloudError::Invalid("zero expected normal".into()));
        }
        Ok(())
    }
}

/// Indices of points with `z_min <= z <= z_max`, in input order.
pub fn pass_through(points: &[[f64; 3]], z_min: f64, z_max: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| (z_min..=z_max).contains(&points[i][2]))
        .collect()
}

pub fn pass_through_cloud(cloud: &PointCloud, z_min: f64, z_max: f64) -> PointCloud {
    let idx = pass_through(&cloud.points, z_min, z_max);
    PointCloud {
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
        frame_id: cloud.frame_id.clone(),
    }
}

/// One centroid per occupied voxel, in order of first occupation, with the
/// input indices falling into each voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized {
    pub points: Vec<[f64; 3]>,
    pub members: Vec<Vec<usize>>,
}

pub fn voxel_key(p: &[f64; 3], leaf: f64) -> [i64; 3] {
    p.map(|c| (c / leaf).floor() as i64)
}

pub fn voxel_downsample(points: &[[f64; 3]], leaf: f64) -> Voxelized {
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let s = *slot.entry(voxel_key(p, leaf)).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[s].push(i);
    }
    let points = members
        .iter()
        .map(|m| {
            let mut c = [0.0; 3];
            for &i in m {
                for a in 0..3 {
                    c[a] += points[i][a];
                }
            }
            c.map(|v| v / m.len() as f64)
        })
        .collect();
    Voxelized { points, members }
}

/// Plane `normal . p + offset = 0` with a unit normal oriented along the
/// expected normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &[f64; 3]) -> f64 {
        (Vector3::from(self.normal).dot(&Vector3::from(*p)) + self.offset).abs()
    }
}

fn inliers_of(points: &[[f64; 3]], plane: &Plane, dist: f64) -> Vec<usize> {
    (0..points.len()).filter(|&i| plane.distance(&points[i]) <= dist).collect()
}

fn oriented(n: Vector3<f64>, through: Vector3<f64>, expected: &Vector3<f64>) -> Plane {
    let n = if n.dot(expected) < 0.0 { -n } else { n };
    Plane {
        normal: [n.x, n.y, n.z],
        offset: -n.dot(&through),
    }
}

/// Least-squares plane through the given points.
fn fit_plane(points: &[[f64; 3]], idx: &[usize], expected: &Vector3<f64>) -> Option<Plane> {
    if idx.len() < 3 {
        return None;
    }
    let mut c = Vector3::zeros();
    for &i in idx {
        c += Vector3::from(points[i]);
    }
    c /= idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = Vector3::from(points[i]) - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (k, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |best, (k, &v)| {
        if v < best.1 { (k, v) } else { best }
    });
    let n = eig.eigenvectors.column(k).into_owned();
    (n.norm() > 0.0).then(|| oriented(n.normalize(), c, expected))
}

/// Best-supported plane among seeded random triples whose normal lies within
/// the deviation cone around `expected_normal`, refined by a least-squares fit
/// over its inliers when that keeps the constraint and the support.
pub fn ransac_plane(points: &[[f64; 3]], params: &RansacParams) -> Result<(Plane, Vec<usize>), CloudError> {
    let expected = Vector3::from(params.expected_normal);
    if points.len() < 3 || expected.norm() == 0.0 {
        return Err(CloudError::NoPlaneFound);
    }
    let expected = expected.normalize();
    let min_cos = params.max_deviation_deg.to_radians().cos();
    let within = |p: &Plane| Vector3::from(p.normal).dot(&expected).abs() >= min_cos - 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..params.iterations {
        let s = index::sample(&mut rng, points.len(), 3);
        let [a, b, c] = [s.index(0), s.index(1), s.index(2)].map(|i| Vector3::from(points[i]));
        let cross = (b - a).cross(&(c - a));
        if 0.5 * cross.norm() < 1e-9 {
            continue;
        }
        let plane = oriented(cross.normalize(), a, &expected);
        if !within(&plane) {
            continue;
        }
        let count = points.iter().filter(|p| plane.distance(p) <= params.inlier_distance).count();
        if best.is_none_or(|(_, n)| count > n) {
            best = Some((plane, count));
        }
    }
    let (plane, _) = best.ok_or(CloudError::NoPlaneFound)?;
    let inliers = inliers_of(points, &plane, params.inlier_distance);
    if let Some(refined) = fit_plane(points, &inliers, &expected).filter(within) {
        let r = inliers_of(points, &refined, params.inlier_distance);
        if r.len() >= inliers.len() {
            return Ok((refined, r));
        }
    }
    Ok((plane, inliers))
}

/// Connected components of the graph joining points at distance
/// `<= tolerance`. Components smaller than `min_size` are dropped; the rest
/// are sorted by size, largest first, then by their lowest index.
pub fn euclidean_clusters(points: &[[f64; 3]], tolerance: f64, min_size: usize) -> Vec<Vec<usize>> {
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(voxel_key(p, tolerance)).or_default().push(i);
    }
    let tol2 = tolerance * tolerance;
    let mut seen = vec![false; points.len()];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..points.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut cluster = Vec::new();
        while let Some(i) = queue.pop_front() {
            cluster.push(i);
            let k = voxel_key(&points[i], tolerance);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else { continue };
                        for &j in cell {
                            if !seen[j] && dist2(&points[i], &points[j]) <= tol2 {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        if cluster.len() >= min_size {
            cluster.sort_unstable();
            clusters.push(cluster);
        }
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Indices into the input cloud.
    pub object_indices: Vec<usize>,
    pub plane: Option<Plane>,
    pub plane_inliers: Vec<usize>,
    pub clusters: usize,
    pub bbox: BBox3D,
}

/// Runs the full chain and selects the gazed object. Indices refer to the
/// input cloud: every input point inside a selected voxel is part of the
/// object. A missing support plane is not an error.
pub fn segment_by_gaze(cloud: &PointCloud, gaze: [f64; 3], params: &SegParams) -> Result<Segmentation, CloudError> {
    params.validate()?;
    let kept = pass_through(&cloud.points, params.z_min, params.z_max);
    let kept_points: Vec<[f64; 3]> = kept.iter().map(|&i| cloud.points[i]).collect();
    let vox = voxel_downsample(&kept_points, params.leaf);
    let original = |v: usize| vox.members[v].iter().map(|&m| kept[m]);

    let (plane, on_plane) = match ransac_plane(&vox.points, &params.ransac) {
        Ok((p, inl)) => (Some(p), inl),
        Err(_) => (None, Vec::new()),
    };
    let mut is_plane = vec![false; vox.points.len()];
    for &i in &on_plane {
        is_plane[i] = true;
    }
    let rest: Vec<usize> = (0..vox.points.len()).filter(|&i| !is_plane[i]).collect();
    let rest_points: Vec<[f64; 3]> = rest.iter().map(|&i| vox.points[i]).collect();
    let clusters = euclidean_clusters(&rest_points, params.cluster_tolerance, params.min_cluster_size);

    let selected: Vec<usize> = match params.mode {
        SelectMode::Nearest => {
            let nearest = clusters
                .iter()
                .enumerate()
                .flat_map(|(c, members)| members.iter().map(move |&m| (c, m)))
                .map(|(c, m)| (dist2(&rest_points[m], &gaze), m, c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match nearest {
                Some((_, _, c)) => vec![c],
                None => Vec::new(),
            }
        }
        SelectMode::Radius => {
            let r2 = params.gaze_radius * params.gaze_radius;
            (0..clusters.len())
                .filter(|&c| clusters[c].iter().any(|&m| dist2(&rest_points[m], &gaze) <= r2))
                .collect()
        }
    };
    if selected.is_empty() {
        return Err(CloudError::NothingSegmented);
    }
    let mut object: Vec<usize> = selected
        .iter()
        .flat_map(|&c| clusters[c].iter().flat_map(|&m| original(rest[m])))
        .collect();
    object.sort_unstable();
    let mut plane_inliers: Vec<usize> = on_plane.iter().flat_map(|&v| original(v)).collect();
    plane_inliers.sort_unstable();
    let bbox = BBox3D::from_points(object.iter().map(|&i| &cloud.points[i]), 1e-6, cloud.frame_id.clone())
        .ok_or(CloudError::NothingSegmented)?;
    Ok(Segmentation {
        object_indices: object,
        plane,
        plane_inliers,
        clusters: clusters.len(),
        bbox,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn pass_through_examples() {
        let pts = vec![[0.0, 0.0, 1.0], [0.0, 0.0, 4.0], [0.0, 0.0, -0.5], [1.0, 1.0, 3.0]];
        assert_eq!(pass_through(&pts, 0.0, 3.0), vec![0, 3]);
        assert_eq!(pass_through(&pts, -1.0, 5.0), vec![0, 1, 2, 3]);
        assert!(pass_through(&pts, 10.0, 11.0).is_empty());
        let c = PointCloud::new(pts, "cam").unwrap();
        let once = pass_through_cloud(&c, 0.0, 3.0);
        assert_eq!(pass_through_cloud(&once, 0.0, 3.0), once);
    }

    #[test]
    fn voxel_examples() {
        let one = voxel_downsample(&[[0.1, 0.2, 0.3]], 0.03);
        assert_eq!(one.points, vec![[0.1, 0.2, 0.3]]);
        let two = voxel_downsample(&[[0.001, 0.001, 0.001], [0.021, 0.011, 0.005]], 0.03);
        assert_eq!(two.points.len(), 1);
        for (a, e) in two.points[0].iter().zip([0.011, 0.006, 0.003]) {
            assert!((a - e).abs() < 1e-15);
        }
        let mut r = rng(1);
        let pts: Vec<[f64; 3]> = (0..5000).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(0.0..1.0)]).collect();
        let distinct: HashSet<[i64; 3]> = pts.iter().map(|p| p.map(|c| (c / 0.1).floor() as i64)).collect();
        let v = voxel_downsample(&pts, 0.1);
        assert_eq!(v.points.len(), distinct.len());
        assert_eq!(v.members.iter().map(Vec::len).sum::<usize>(), 5000);
    }

    fn plane_scene(seed: u64) -> (Vec<[f64; 3]>, usize) {
        let mut r = rng(seed);
        let n_plane = 1400;
        let mut pts: Vec<[f64; 3]> = (0..n_plane)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.002..0.002)])
            .collect();
        for _ in 0..600 {
            pts.push([r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(0.05..1.0)]);
        }
        (pts, n_plane)
    }

    #[test]
    fn ransac_recovers_plane() {
        let (pts, n_plane) = plane_scene(3);
        let (plane, inl) = ransac_plane(&pts, &RansacParams::default()).unwrap();
        let dev = Vector3::from(plane.normal).dot(&Vector3::z()).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(dev <= 2.0, "{dev}");
        let true_hits = inl.iter().filter(|&&i| i < n_plane).count();
        assert!(true_hits as f64 >= 0.95 * n_plane as f64);
        assert_eq!(ransac_plane(&pts, &RansacParams::default()).unwrap(), (plane, inl));
    }

    #[test]
    fn vertical_wall_is_rejected() {
        let mut r = rng(4);
        let wall: Vec<[f64; 3]> = (0..300).map(|_| [0.0, r.random_range(-1.0..1.0), r.random_range(0.0..1.0)]).collect();
        assert_eq!(ransac_plane(&wall, &RansacParams::default()).unwrap_err(), CloudError::NoPlaneFound);
    }

    fn union_find_oracle(pts: &[[f64; 3]], tol: f64, min: usize) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..pts.len()).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            p[i] = r;
            r
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if dist2(&pts[i], &pts[j]) <= tol * tol {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..pts.len() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= min).collect();
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    #[test]
    fn cluster_examples() {
        let mut pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.001, 0.0, 0.0]).collect();
        pts.extend((0..5).map(|i| [0.1 + i as f64 * 0.001, 0.0, 0.0]));
        let c = euclidean_clusters(&pts, 0.005, 1);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].len(), 10);
        assert_eq!(euclidean_clusters(&pts, 0.005, 6).len(), 1);
        let chain: Vec<[f64; 3]> = (0..100).map(|i| [i as f64 * 0.004, 0.0, 0.0]).collect();
        assert_eq!(euclidean_clusters(&chain, 0.005, 1).len(), 1);
    }

    #[test]
    fn clusters_match_union_find() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let pts: Vec<[f64; 3]> = (0..300).map(|_| [r.random(), r.random(), r.random::<f64>() * 0.2]).collect();
            let tol = r.random_range(0.02..0.08);
            assert_eq!(euclidean_clusters(&pts, tol, 2), union_find_oracle(&pts, tol, 2));
        }
    }

    fn blob(r: &mut ChaCha8Rng, c: [f64; 3], n: usize, rad: f64) -> Vec<[f64; 3]> {
        (0..n).map(|_| [0, 1, 2].map(|a| c[a] + r.random_range(-rad..rad))).collect()
    }

    fn two_object_scene() -> (PointCloud, std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut r = rng(9);
        let mut pts: Vec<[f64; 3]> = (0..4000)
            .map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 1.0 + r.random_range(-0.001..0.001)])
            .collect();
        let a0 = pts.len();
        pts.extend(blob(&mut r, [-0.2, 0.0, 1.1], 800, 0.04));
        let b0 = pts.len();
        pts.extend(blob(&mut r, [0.2, 0.1, 1.1], 800, 0.04));
        let end = pts.len();
        (PointCloud::new(pts, "cam").unwrap(), a0..b0, b0..end)
    }

    fn scene_params() -> SegParams {
        SegParams { leaf: 0.01, cluster_tolerance: 0.025, min_cluster_size: 20, ..SegParams::default() }
    }

    #[test]
    fn segments_gazed_object() {
        let (cloud, a, b) = two_object_scene();
        for mode in [SelectMode::Nearest, SelectMode::Radius] {
            let p = SegParams { mode, gaze_radius: 0.05, ..scene_params() };
            let s = segment_by_gaze(&cloud, [-0.2, 0.0, 1.12], &p).unwrap();
            assert!(s.object_indices.iter().all(|i| a.contains(i)), "{mode:?}");
            assert!(s.object_indices.len() as f64 >= 0.95 * a.len() as f64);
            assert!(!s.object_indices.iter().any(|i| b.contains(i)));
            let plane: HashSet<usize> = s.plane_inliers.iter().copied().collect();
            assert!(s.object_indices.iter().all(|i| !plane.contains(i)));
            assert_eq!(s, segment_by_gaze(&cloud, [-0.2, 0.0, 1.12], &p).unwrap());
        }
    }

    #[test]
    fn gaze_on_a_cluster_point_selects_it() {
        let (cloud, a, _) = two_object_scene();
        let vox = voxel_downsample(&cloud.points, 0.01);
        let on = vox.members.iter().position(|m| m.iter().all(|i| a.contains(i)) && m.len() >= 1).unwrap();
        for mode in [SelectMode::Nearest, SelectMode::Radius] {
            let p = SegParams { mode, ..scene_params() };
            let s = segment_by_gaze(&cloud, vox.points[on], &p).unwrap();
            assert!(s.object_indices.iter().all(|i| a.contains(i)));
        }
        let far = SegParams { mode: SelectMode::Radius, ..scene_params() };
        assert_eq!(segment_by_gaze(&cloud, [5.0, 5.0, 2.0], &far).unwrap_err(), CloudError::NothingSegmented);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pass_through_idempotent_and_ordered(seed in 0u64..10_000) {
            let mut r = rng(seed);
            let pts: Vec<[f64; 3]> = (0..200).map(|_| [r.random(), r.random(), r.random_range(-1.0..4.0)]).collect();
            let idx = pass_through(&pts, 0.0, 3.0);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            let oracle: Vec<usize> = (0..200).filter(|&i| pts[i][2] >= 0.0 && pts[i][2] <= 3.0).collect();
            prop_assert_eq!(&idx, &oracle);
            let sub: Vec<[f64; 3]> = idx.iter().map(|&i| pts[i]).collect();
            prop_assert_eq!(pass_through(&sub, 0.0, 3.0).len(), sub.len());
        }
    }
}
