//! Gaze heatmap features: temporal windowing of a gaze log, occupancy-grid
//! encoding of each window, window labeling and feature serialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::GazeSample;
use crate::ingest::{AnnotationSet, GazeLog};

/// Grid sizes per axis explored for the heatmap features.
pub const GRID_SIZES: [usize; 3] = [15, 30, 50];
pub const DEFAULT_GRID: usize = 30;
pub const DEFAULT_WINDOW_MS: f64 = 250.0;
pub const MIN_WINDOW_MS: f64 = 100.0;
pub const MAX_WINDOW_MS: f64 = 1000.0;

/// Relative slack on the `[0, R]` domain check.
const RANGE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatmapError {
    #[error("gaze log is empty")]
    EmptyLog,
    #[error("window contains no samples")]
    EmptyWindow,
    #[error("sample {index}: axis {axis} value {value} outside [0, {limit}]")]
    OutOfRange {
        index: usize,
        axis: usize,
        value: f64,
        limit: f64,
    },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_ms: f64,
    pub stride_ms: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_ms: DEFAULT_WINDOW_MS,
            stride_ms: DEFAULT_WINDOW_MS,
        }
    }
}

impl WindowSpec {
    pub fn new(length_ms: f64, stride_ms: f64) -> Result<Self, HeatmapError> {
        if !(length_ms.is_finite() && length_ms > 0.0 && stride_ms.is_finite() && stride_ms > 0.0) {
            return Err(HeatmapError::Invalid(format!(
                "window length {length_ms} / stride {stride_ms}"
            )));
        }
        Ok(Self {
            length_ms,
            stride_ms,
        })
    }
}

/// Samples with `start <= t < start + length`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub start: f64,
    pub length: f64,
    pub samples: &'a [GazeSample],
}

impl Window<'_> {
    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.length
    }
}

/// Cuts the log into windows starting at `t_min + i * stride`. Windows are
/// emitted until one reaches past the last sample; windows over gaps in the
/// log may be empty.
pub fn windows<'a>(log: &'a GazeLog, spec: &WindowSpec) -> Result<Vec<Window<'a>>, HeatmapError> {
    let spec = WindowSpec::new(spec.length_ms, spec.stride_ms)?;
    let (t_min, t_max) = log.time_range().ok_or(HeatmapError::EmptyLog)?;
    let samples = log.samples.as_slice();
    let mut out = Vec::new();
    for i in 0u64.. {
        let start = t_min + i as f64 * spec.stride_ms;
        let end = start + spec.length_ms;
        let lo = samples.partition_point(|s| s.t < start);
        let hi = samples.partition_point(|s| s.t < end);
        out.push(Window {
            start,
            length: spec.length_ms,
            samples: &samples[lo..hi.max(lo)],
        });
        if end > t_max {
            break;
        }
    }
    Ok(out)
}

/// Normalized occupancy grid, `x` fastest, then `y`, then `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    dims: [usize; 3],
    values: Vec<f64>,
    samples: usize,
}

impl HeatmapGrid {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.samples
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }
}

/// Grid cell of one coordinate: `round(p / R * G)`, half away from zero,
/// clamped to `[0, G - 1]`.
pub fn cell_index(p: f64, r: f64, g: usize) -> usize {
    let i = (p / r * g as f64).round();
    i.clamp(0.0, (g - 1) as f64) as usize
}

/// Encodes gaze samples as a normalized heatmap. Pixel samples always fall
/// into the first depth layer; depth is only range-checked when `G_z > 1`.
pub fn encode(samples: &[GazeSample], resolution: [f64; 3], grid: [usize; 3]) -> Result<HeatmapGrid, HeatmapError> {
    if grid.contains(&0) {
        return Err(HeatmapError::Invalid(format!("grid {grid:?}")));
    }
    if resolution.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(HeatmapError::Invalid(format!("resolution {resolution:?}")));
    }
    if samples.is_empty() {
        return Err(HeatmapError::EmptyWindow);
    }
    let mut counts = vec![0u32; grid.iter().product()];
    for (index, s) in samples.iter().enumerate() {
        let p = s.pos.xyz();
        let axes = if grid[2] > 1 && s.pos.is_3d() { 3 } else { 2 };
        for axis in 0..axes {
            let r = resolution[axis];
            if !(p[axis] >= -RANGE_EPS * r && p[axis] <= r * (1.0 + RANGE_EPS)) {
                return Err(HeatmapError::OutOfRange {
                    index,
                    axis,
                    value: p[axis],
                    limit: r,
                });
            }
        }
        let ix = cell_index(p[0], resolution[0], grid[0]);
        let iy = cell_index(p[1], resolution[1], grid[1]);
        let iz = if s.pos.is_3d() {
            cell_index(p[2], resolution[2], grid[2])
        } else {
            0
        };
        counts[ix + grid[0] * (iy + grid[1] * iz)] += 1;
    }
    let n = samples.len() as f64;
    Ok(HeatmapGrid {
        dims: grid,
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
        samples: samples.len(),
    })
}

/// Row-major feature vector of length `G_x * G_y * G_z`.
pub fn flatten(grid: &HeatmapGrid) -> Vec<f64> {
    grid.values.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Presence {
    NoObject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub class: Presence,
    /// `(x, y, w, h)` of the box as fractions of the stimulus resolution.
    pub target: Option<[f64; 4]>,
}

/// Labels a window from the annotations whose frame time falls inside it.
/// The regression target comes from the labeled frame nearest the window
/// center; on a tie the earlier frame wins.
pub fn label_window(window: &Window<'_>, annotations: &AnnotationSet, resolution: [f64; 2]) -> WindowLabel {
    let center = window.center();
    let mut best: Option<(f64, [f64; 4])> = None;
    for a in annotations.in_range(window.start, window.end()) {
        let Some(label) = &a.label else { continue };
        let dist = (a.t_ms - center).abs();
        if best.is_some_and(|(d, _)| dist >= d) {
            continue;
        }
        let [rx, ry] = resolution;
        let frac = |v: f64, r: f64| (v / r).clamp(0.0, 1.0);
        let target = [
            frac(label.x1, rx),
            frac(label.y1, ry),
            frac(label.x2 - label.x1, rx),
            frac(label.y2 - label.y1, ry),
        ];
        best = Some((dist, target));
    }
    match best {
        Some((_, target)) => WindowLabel {
            class: Presence::Object,
            target: Some(target),
        },
        None => WindowLabel {
            class: Presence::NoObject,
            target: None,
        },
    }
}

/// Sidecar describing a flat binary feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub grid: [usize; 3],
    pub resolution: [f64; 3],
    pub window: WindowSpec,
    pub rows: usize,
    pub dim: usize,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes rows as little-endian `f64` plus a JSON sidecar next to `bin`.
pub fn save_features(bin: &Path, meta: &FeatureMeta, rows: &[Vec<f64>]) -> Result<(), HeatmapError> {
    if rows.len() != meta.rows || rows.iter().any(|r| r.len() != meta.dim) {
        return Err(HeatmapError::Invalid("feature matrix does not match its metadata".into()));
    }
    let mut bytes = Vec::with_capacity(meta.rows * meta.dim * 8);
    for v in rows.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin, bytes).map_err(|e| HeatmapError::Io(format!("{}: {e}", bin.display())))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| HeatmapError::Io(e.to_string()))? + "\n";
    let side = sidecar_path(bin);
    fs::write(&side, json).map_err(|e| HeatmapError::Io(format!("{}: {e}", side.display())))
}

pub fn load_features(bin: &Path) -> Result<(FeatureMeta, Vec<Vec<f64>>), HeatmapError> {
    let side = sidecar_path(bin);
    let text = fs::read_to_string(&side).map_err(|e| HeatmapError::Io(format!("{}: {e}", side.display())))?;
    let meta: FeatureMeta = serde_json::from_str(&text).map_err(|e| HeatmapError::Io(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(bin).map_err(|e| HeatmapError::Io(format!("{}: {e}", bin.display())))?;
    if bytes.len() != meta.rows * meta.dim * 8 {
        return Err(HeatmapError::Io(format!(
            "{}: {} bytes, sidecar declares {}x{} f64",
            bin.display(),
            bytes.len(),
            meta.rows,
            meta.dim
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let rows = if meta.dim == 0 {
        vec![Vec::new(); meta.rows]
    } else {
        values.chunks(meta.dim).map(<[f64]>::to_vec).collect()
    };
    Ok((meta, rows))
}
