//! Loaders and writers for gaze logs, annotations, proposal lists, point
//! clouds and multiview (OMD-layout) recordings.
//!
//! Gaze logs are CSV with header `t_ms,x,y,z,frame` (`z` and `frame` may be
//! absent for 2D logs). The stimulus resolution is declared by a leading
//! comment line `# resolution: <R_x> <R_y> [<R_z>]`; `R_z` defaults to 5 m.
//!
//! An OMD class directory holds one file group per view index `NNNN`:
//! `NNNN_rgb.png`, `NNNN_depth.png`, `NNNN_camera.json` and `NNNN_roi.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{BBox2D, GazePos, GazeSample, PinholeCamera, PointCloud, Raster, RigidTransform};
use crate::imageio::{self, ImageError};

pub const DEFAULT_MAX_DEPTH_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: column `{column}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: String,
        message: String,
    },
    #[error("{0}: gaze log contains no samples")]
    EmptyLog(String),
    #[error("{0}: no resolution header and none supplied")]
    MissingResolution(String),
    #[error("missing component {0}")]
    MissingComponent(PathBuf),
    #[error("view {index}: {what} is {got:?}, camera declares {expected:?}")]
    InconsistentResolution {
        index: String,
        what: String,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), IngestError> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IngestError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| IngestError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IngestError::Json {
        path: path.display().to_string(),
        source,
    })?;
    s.push('\n');
    write_text(path, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeLog {
    pub samples: Vec<GazeSample>,
    /// `[R_x, R_y, R_z]`: stimulus resolution (px) and maximum depth (m).
    pub resolution: [f64; 3],
}

impl GazeLog {
    pub fn new(mut samples: Vec<GazeSample>, resolution: [f64; 3]) -> Result<Self, IngestError> {
        if resolution.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(IngestError::Invalid(format!("resolution {resolution:?}")));
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self {
            samples,
            resolution,
        })
    }

    pub fn is_3d(&self) -> bool {
        self.samples.iter().any(|s| s.pos.is_3d())
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }
}

/// Maps the importer's fields to column names in a foreign CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazeColumns {
    pub t: String,
    pub x: String,
    pub y: String,
    pub z: String,
    pub frame: String,
}

impl Default for GazeColumns {
    fn default() -> Self {
        Self {
            t: "t_ms".into(),
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
            frame: "frame".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GazeLogOptions {
    pub columns: GazeColumns,
    /// Overrides the file's resolution header.
    pub resolution: Option<[f64; 2]>,
    /// Overrides the file's max depth (else [`DEFAULT_MAX_DEPTH_M`]).
    pub max_depth: Option<f64>,
    pub default_frame: String,
}

pub fn load_gaze_log(path: &Path) -> Result<GazeLog, IngestError> {
    load_gaze_log_with(path, &GazeLogOptions::default())
}

pub fn load_gaze_log_with(path: &Path, opts: &GazeLogOptions) -> Result<GazeLog, IngestError> {
    parse_gaze_log(&read_text(path)?, &path.display().to_string(), opts)
}

fn parse_resolution(line: &str) -> Option<Vec<f64>> {
    let rest = line.trim_start_matches('#').trim();
    let rest = rest.strip_prefix("resolution")?;
    let rest = rest.trim_start_matches(':');
    rest.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().ok())
        .collect()
}

pub fn parse_gaze_log(text: &str, origin: &str, opts: &GazeLogOptions) -> Result<GazeLog, IngestError> {
    let parse_err = |line: usize, column: &str, message: String| IngestError::Parse {
        path: origin.to_string(),
        line,
        column: column.to_string(),
        message,
    };

    let mut header_res: Option<Vec<f64>> = None;
    let mut body_start = 0usize;
    let mut first_line = 1usize;
    for line in text.split_inclusive('\n') {
        if !line.trim_start().starts_with('#') {
            break;
        }
        if let Some(r) = parse_resolution(line) {
            if !(2..=3).contains(&r.len()) {
                return Err(parse_err(first_line, "resolution", "expected 2 or 3 values".into()));
            }
            header_res = Some(r);
        }
        body_start += line.len();
        first_line += 1;
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(&text.as_bytes()[body_start..]);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(first_line, "header", e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let cols = &opts.columns;
    let it = find(&cols.t).ok_or_else(|| parse_err(first_line, &cols.t, "missing column".into()))?;
    let ix = find(&cols.x).ok_or_else(|| parse_err(first_line, &cols.x, "missing column".into()))?;
    let iy = find(&cols.y).ok_or_else(|| parse_err(first_line, &cols.y, "missing column".into()))?;
    let iz = find(&cols.z);
    let iframe = find(&cols.frame);

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = first_line + 1 + row;
        let record = record.map_err(|e| parse_err(line, "row", e.to_string()))?;
        let num = |idx: usize, name: &str| -> Result<f64, IngestError> {
            let field = record.get(idx).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, name, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, name, format!("non-finite value `{field}`")));
            }
            Ok(v)
        };
        let t = num(it, &cols.t)?;
        if t < 0.0 {
            return Err(parse_err(line, &cols.t, "negative timestamp".into()));
        }
        let x = num(ix, &cols.x)?;
        let y = num(iy, &cols.y)?;
        let pos = match iz {
            Some(iz) if !record.get(iz).unwrap_or("").is_empty() => {
                GazePos::World([x, y, num(iz, &cols.z)?])
            }
            _ => GazePos::Pixel([x, y]),
        };
        let frame_id = iframe
            .and_then(|i| record.get(i))
            .filter(|f| !f.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| opts.default_frame.clone());
        samples.push(GazeSample { t, pos, frame_id });
    }
    if samples.is_empty() {
        return Err(IngestError::EmptyLog(origin.to_string()));
    }

    let [rx, ry] = match (opts.resolution, &header_res) {
        (Some(r), _) => r,
        (None, Some(r)) => [r[0], r[1]],
        (None, None) => return Err(IngestError::MissingResolution(origin.to_string())),
    };
    let rz = opts
        .max_depth
        .or_else(|| header_res.as_ref().and_then(|r| r.get(2).copied()))
        .unwrap_or(DEFAULT_MAX_DEPTH_M);
    GazeLog::new(samples, [rx, ry, rz])
}

/// Canonical text form: `load(save(log))` reproduces `log`, and canonical
/// files survive `save(load(file))` byte for byte.
pub fn format_gaze_log(log: &GazeLog) -> String {
    let [rx, ry, rz] = log.resolution;
    let three_d = log.is_3d();
    let mut out = format!("# resolution: {rx} {ry} {rz}\n");
    out.push_str(if three_d { "t_ms,x,y,z,frame\n" } else { "t_ms,x,y,frame\n" });
    for s in &log.samples {
        match (s.pos, three_d) {
            (GazePos::World([x, y, z]), _) => writeln!(out, "{},{x},{y},{z},{}", s.t, s.frame_id),
            (GazePos::Pixel([x, y]), true) => writeln!(out, "{},{x},{y},,{}", s.t, s.frame_id),
            (GazePos::Pixel([x, y]), false) => writeln!(out, "{},{x},{y},{}", s.t, s.frame_id),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn save_gaze_log(path: &Path, log: &GazeLog) -> Result<(), IngestError> {
    write_text(path, &format_gaze_log(log))
}

/// A class name with its box; serialized flat as `{x1,y1,x2,y2,class}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class: String,
}

impl LabeledBox {
    pub fn new(bbox: BBox2D, class: impl Into<String>) -> Self {
        Self {
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
            class: class.into(),
        }
    }

    pub fn bbox(&self) -> Result<BBox2D, IngestError> {
        BBox2D::new(self.x1, self.y1, self.x2, self.y2).map_err(|e| IngestError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_ms: f64,
    #[serde(rename = "box")]
    pub label: Option<LabeledBox>,
}

/// Per-frame labels, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    entries: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(mut entries: Vec<Annotation>) -> Result<Self, IngestError> {
        for a in &entries {
            if !(a.t_ms.is_finite() && a.t_ms >= 0.0) {
                return Err(IngestError::Invalid(format!("annotation timestamp {}", a.t_ms)));
            }
            if let Some(l) = &a.label {
                l.bbox()?;
            }
        }
        entries.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    /// Entries with `start <= t < end`.
    pub fn in_range(&self, start: f64, end: f64) -> &[Annotation] {
        let lo = self.entries.partition_point(|a| a.t_ms < start);
        let hi = self.entries.partition_point(|a| a.t_ms < end);
        &self.entries[lo..hi.max(lo)]
    }

    /// Checks that every timestamp lies in the log's time range.
    pub fn validate_against(&self, log: &GazeLog) -> Result<(), IngestError> {
        let Some((lo, hi)) = log.time_range() else {
            return Err(IngestError::EmptyLog("gaze log".into()));
        };
        match self.entries.iter().find(|a| a.t_ms < lo || a.t_ms > hi) {
            Some(a) => Err(IngestError::Invalid(format!(
                "annotation at {} ms outside log range [{lo}, {hi}]",
                a.t_ms
            ))),
            None => Ok(()),
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet, IngestError> {
    AnnotationSet::new(read_json(path)?)
}

pub fn save_annotations(path: &Path, set: &AnnotationSet) -> Result<(), IngestError> {
    write_json(path, &set.entries)
}

/// Proposals in the order produced by the proposal method; the position in
/// `boxes` is the position index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalList {
    pub boxes: Vec<BBox2D>,
}

impl ProposalList {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// One box per line: `x1 y1 x2 y2`, separated by whitespace or commas.
/// Blank lines and `#` comments are skipped.
pub fn parse_proposals(text: &str, origin: &str) -> Result<ProposalList, IngestError> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |column: &str, message: String| IngestError::Parse {
            path: origin.to_string(),
            line: i + 1,
            column: column.to_string(),
            message,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(err("box", format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (k, (f, name)) in fields.iter().zip(["x1", "y1", "x2", "y2"]).enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(name, format!("not a number: `{f}`")))?;
        }
        boxes.push(BBox2D::new(v[0], v[1], v[2], v[3]).map_err(|e| err("box", e.to_string()))?);
    }
    Ok(ProposalList { boxes })
}

pub fn load_proposals(path: &Path) -> Result<ProposalList, IngestError> {
    parse_proposals(&read_text(path)?, &path.display().to_string())
}

pub fn format_proposals(list: &ProposalList) -> String {
    let mut out = String::new();
    for b in &list.boxes {
        writeln!(out, "{} {} {} {}", b.x1, b.y1, b.x2, b.y2).expect("String write");
    }
    out
}

pub fn save_proposals(path: &Path, list: &ProposalList) -> Result<(), IngestError> {
    write_text(path, &format_proposals(list))
}

/// ASCII XYZ: one `x y z` triple per line.
pub fn parse_xyz(text: &str, origin: &str, frame_id: &str) -> Result<PointCloud, IngestError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| IngestError::Parse {
            path: origin.to_string(),
            line: i + 1,
            column: "xyz".into(),
            message,
        };
        if vals.len() < 3 {
            return Err(err(format!("expected 3 coordinates, found {}", vals.len())));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = vals[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("not a number: `{}`", vals[k])))?;
        }
        points.push(p);
    }
    PointCloud::new(points, frame_id).map_err(|e| IngestError::Invalid(e.to_string()))
}

pub fn load_xyz(path: &Path, frame_id: &str) -> Result<PointCloud, IngestError> {
    parse_xyz(&read_text(path)?, &path.display().to_string(), frame_id)
}

pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IngestError> {
    let mut out = String::with_capacity(cloud.len() * 24);
    for [x, y, z] in &cloud.points {
        writeln!(out, "{x} {y} {z}").expect("String write");
    }
    write_text(path, &out)
}

/// On-disk camera description: intrinsics plus the camera←object pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub t: [f64; 3],
    /// `[w, x, y, z]`.
    pub q: [f64; 4],
}

impl CameraFile {
    pub fn new(cam: &PinholeCamera, camera_from_object: &RigidTransform) -> Self {
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            t: camera_from_object.translation(),
            q: camera_from_object.quaternion(),
        }
    }

    pub fn camera(&self) -> Result<PinholeCamera, IngestError> {
        PinholeCamera::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| IngestError::Invalid(e.to_string()))
    }

    pub fn transform(&self) -> Result<RigidTransform, IngestError> {
        RigidTransform::from_parts(self.t, self.q).map_err(|e| IngestError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoiFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y2: Option<f64>,
    class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub index: u32,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub camera: PinholeCamera,
    /// Maps object coordinates into the camera frame.
    pub camera_from_object: RigidTransform,
    pub roi: Option<BBox2D>,
    pub class: String,
}

pub fn view_paths(dir: &Path, index: u32) -> [PathBuf; 4] {
    ["rgb.png", "depth.png", "camera.json", "roi.json"].map(|s| dir.join(format!("{index:04}_{s}")))
}

/// Writes one view group. Missing rasters are replaced by blank placeholders
/// at the camera resolution.
pub fn save_omd_view(
    dir: &Path,
    record: &ViewRecord,
    rgb: Option<&Raster>,
    depth: Option<&Raster>,
) -> Result<ViewRecord, IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let [rgb_path, depth_path, cam_path, roi_path] = view_paths(dir, record.index);
    let (w, h) = (record.camera.width as usize, record.camera.height as usize);
    match rgb {
        Some(r) => imageio::write_rgb(&rgb_path, r)?,
        None => imageio::write_rgb(&rgb_path, &Raster::filled(w, h, 3, 0.0))?,
    }
    match depth {
        Some(d) => imageio::write_depth_mm(&depth_path, d)?,
        None => imageio::write_depth_mm(&depth_path, &Raster::filled(w, h, 1, 0.0))?,
    }
    write_json(&cam_path, &CameraFile::new(&record.camera, &record.camera_from_object))?;
    let roi = RoiFile {
        x1: record.roi.map(|b| b.x1),
        y1: record.roi.map(|b| b.y1),
        x2: record.roi.map(|b| b.x2),
        y2: record.roi.map(|b| b.y2),
        class: record.class.clone(),
    };
    write_json(&roi_path, &roi)?;
    Ok(ViewRecord {
        rgb_path,
        depth_path,
        ..record.clone()
    })
}

fn group_index(name: &str) -> Option<u32> {
    let (idx, rest) = name.split_once('_')?;
    if idx.len() != 4 || !idx.bytes().all(|b| b.is_ascii_digit()) || rest.is_empty() {
        return None;
    }
    idx.parse().ok()
}

/// Loads every view group in `dir`, ordered by view index.
pub fn load_omd_view_dir(dir: &Path) -> Result<Vec<ViewRecord>, IngestError> {
    let mut groups = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(idx) = entry.file_name().to_str().and_then(group_index) {
            groups.insert(idx, ());
        }
    }
    let dir_class = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let mut out = Vec::with_capacity(groups.len());
    for &index in groups.keys() {
        let paths = view_paths(dir, index);
        if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
            return Err(IngestError::MissingComponent(missing.clone()));
        }
        let [rgb_path, depth_path, cam_path, roi_path] = paths;
        let cam_file: CameraFile = read_json(&cam_path)?;
        let camera = cam_file.camera()?;
        let camera_from_object = cam_file.transform()?;
        let expected = (camera.width, camera.height);
        for (what, p) in [("rgb", &rgb_path), ("depth", &depth_path)] {
            let got = imageio::png_dimensions(p)?;
            if got != expected {
                return Err(IngestError::InconsistentResolution {
                    index: format!("{index:04}"),
                    what: what.into(),
                    got,
                    expected,
                });
            }
        }
        let roi_file: RoiFile = read_json(&roi_path)?;
        let roi = match (roi_file.x1, roi_file.y1, roi_file.x2, roi_file.y2) {
            (Some(x1), Some(y1), Some(x2), Some(y2)) => {
                Some(BBox2D::new(x1, y1, x2, y2).map_err(|e| IngestError::Invalid(e.to_string()))?)
            }
            (None, None, None, None) => None,
            _ => return Err(IngestError::Invalid(format!("{}: partial roi", roi_path.display()))),
        };
        let class = if roi_file.class.is_empty() {
            dir_class.clone()
        } else {
            roi_file.class
        };
        out.push(ViewRecord {
            index,
            rgb_path,
            depth_path,
            camera,
            camera_from_object,
            roi,
            class,
        });
    }
    Ok(out)
}
