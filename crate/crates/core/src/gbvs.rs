//! Graph-based visual saliency with gaze injection.
//!
//! Pipeline per image: low-resolution feature maps, a Markov chain per map
//! whose edges combine feature dissimilarity with spatial proximity, an
//! activation vector propagated through the chain (started from gaze for the
//! GA / DGA variants), a second normalization pass, and a combined,
//! min-max scaled field that can be upsampled to the input resolution.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Raster;
use crate::imageio::{self, ImageError};

pub const FEATURE_EPS: f64 = 1e-4;
pub const DEFAULT_CAP: usize = 32;
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.15;
pub const DEFAULT_SPARSITY: f64 = 1e-6;
pub const CONVERGE_TOL: f64 = 1e-8;
/// Rows whose raw weight falls below this become uniform.
pub const MIN_ROW_MASS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GbvsError {
    #[error("image is empty")]
    EmptyImage,
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("feature value {0} is not positive")]
    NonPositiveFeature(f64),
    #[error("no gaze point inside the {width}x{height} map")]
    NoGazeInDomain { width: usize, height: usize },
    #[error("power iteration did not converge (residual {residual:e} after {steps} steps)")]
    NotConverged {
        last: Vec<f64>,
        residual: f64,
        steps: usize,
    },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Intensity,
    RgOpponent,
    ByOpponent,
}

/// Positive `height x width` feature raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channel: Channel,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channel: Channel, width: usize, height: usize, values: Vec<f64>) -> Result<Self, GbvsError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(GbvsError::Invalid(format!(
                "{} values for a {width}x{height} feature map",
                values.len()
            )));
        }
        if let Some(&v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(GbvsError::NonPositiveFeature(v));
        }
        Ok(Self {
            channel,
            width,
            height,
            values,
        })
    }
}

/// Non-negative map summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ActivationMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn normalize_sum(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v {
            *x /= s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    Ga,
    Dga,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Steps {
    Fixed(usize),
    Converge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbvsParams {
    pub variant: Variant,
    /// Spatial scale in map cells; `None` uses 0.15 * mean(m, n).
    pub sigma: Option<f64>,
    /// Activation steps; `None` converges for plain and takes one step otherwise.
    pub steps: Option<Steps>,
    pub norm_steps: usize,
    /// Pairs with distance weight below this are dropped; 0 builds dense.
    pub sparsity: f64,
    /// Temporal blend toward the previous activation.
    pub q: f64,
    pub cap: usize,
    /// Uses `exp(-D^2 / (2 sigma))` instead of `exp(-D^2 / (2 sigma^2))`.
    pub legacy_sigma: bool,
}

impl Default for GbvsParams {
    fn default() -> Self {
        Self {
            variant: Variant::Ga,
            sigma: None,
            steps: None,
            norm_steps: 1,
            sparsity: DEFAULT_SPARSITY,
            q: 0.0,
            cap: DEFAULT_CAP,
            legacy_sigma: false,
        }
    }
}

impl GbvsParams {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GbvsError> {
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GbvsError::Invalid(format!("sigma {s}")));
            }
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(GbvsError::Invalid(format!("sparsity {}", self.sparsity)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(GbvsError::Invalid(format!("q {}", self.q)));
        }
        if self.cap == 0 {
            return Err(GbvsError::Invalid("cap 0".into()));
        }
        Ok(())
    }

    pub fn sigma_for(&self, width: usize, height: usize) -> f64 {
        self.sigma
            .unwrap_or(DEFAULT_SIGMA_FRACTION * (width + height) as f64 / 2.0)
    }

    pub fn kernel(&self, width: usize, height: usize) -> Kernel {
        Kernel {
            sigma: self.sigma_for(width, height),
            legacy: self.legacy_sigma,
        }
    }

    pub fn effective_steps(&self) -> Steps {
        self.steps.unwrap_or(match self.variant {
            Variant::Plain => Steps::Converge,
            Variant::Ga | Variant::Dga => Steps::Fixed(1),
        })
    }
}

/// `|ln(a / b)|`.
pub fn dissimilarity(a: f64, b: f64) -> Result<f64, GbvsError> {
    for v in [a, b] {
        if !(v > 0.0) {
            return Err(GbvsError::NonPositiveFeature(v));
        }
    }
    Ok((a.ln() - b.ln()).abs())
}

/// Gaussian proximity weight of two cells at distance `d`.
pub fn distance_weight(d: f64, sigma: f64, legacy: bool) -> f64 {
    Kernel { sigma, legacy }.weight_d2(d * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub sigma: f64,
    pub legacy: bool,
}

impl Kernel {
    fn denom(&self) -> f64 {
        if self.legacy {
            2.0 * self.sigma
        } else {
            2.0 * self.sigma * self.sigma
        }
    }

    pub fn weight_d2(&self, d2: f64) -> f64 {
        (-d2 / self.denom()).exp()
    }

    /// Largest squared distance whose weight is still `>= l`.
    pub fn cutoff_d2(&self, l: f64) -> f64 {
        if l <= 0.0 {
            f64::INFINITY
        } else {
            -self.denom() * l.ln()
        }
    }
}

/// Aspect-preserving size with the longer edge at `cap`; the shorter edge
/// rounds half up. Images already within the cap keep their size.
pub fn internal_size(width: usize, height: usize, cap: usize) -> (usize, usize) {
    if width.max(height) <= cap {
        return (width, height);
    }
    let scale = |short: usize, long: usize| ((2 * short * cap + long) / (2 * long)).max(1);
    if width >= height {
        (cap, scale(height, width))
    } else {
        (scale(width, height), cap)
    }
}

/// Per output index, the overlapped source indices and their area weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let lo = a.floor() as usize;
            let hi = (b.ceil() as usize).min(src);
            (lo..hi)
                .filter_map(|s| {
                    let w = (b.min((s + 1) as f64) - a.max(s as f64)) / scale;
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling of a single-channel row-major plane.
pub fn resample_area(plane: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if (out_w, out_h) == (width, height) {
        return plane.to_vec();
    }
    let wx = area_weights(width, out_w);
    let wy = area_weights(height, out_h);
    let mut rows = vec![0.0; out_w * height];
    for y in 0..height {
        let src = &plane[y * width..(y + 1) * width];
        for (ox, ws) in wx.iter().enumerate() {
            rows[y * out_w + ox] = ws.iter().map(|&(s, w)| src[s] * w).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = ws.iter().map(|&(s, w)| rows[s * out_w + ox] * w).sum();
        }
    }
    out
}

fn to_unit_positive(mut v: Vec<f64>) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    // Resampling leaves rounding noise on flat planes.
    let flat = span <= 1e-12 * hi.abs().max(1.0);
    for x in &mut v {
        *x = if !flat {
            FEATURE_EPS + (1.0 - FEATURE_EPS) * (*x - lo) / span
        } else {
            1.0
        };
    }
    v
}

/// Intensity, red-green and blue-yellow opponency maps at internal resolution.
pub fn extract_features(image: &Raster, cap: usize) -> Result<Vec<FeatureMap>, GbvsError> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(GbvsError::EmptyImage);
    }
    let c = image.channels();
    if c != 1 && c < 3 {
        return Err(GbvsError::Channels(c));
    }
    let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for (i, px) in image.data().chunks_exact(c).enumerate() {
        let (r, g, b) = if c == 1 { (px[0], px[0], px[0]) } else { (px[0], px[1], px[2]) };
        planes[0][i] = (r + g + b) / 3.0;
        planes[1][i] = (r - g).abs();
        planes[2][i] = (b - (r + g) / 2.0).abs();
    }
    let (n, m) = internal_size(w, h, cap);
    let channels = [Channel::Intensity, Channel::RgOpponent, Channel::ByOpponent];
    channels
        .into_iter()
        .zip(planes)
        .map(|(ch, p)| FeatureMap::new(ch, n, m, to_unit_positive(resample_area(&p, w, h, n, m))))
        .collect()
}

/// Row-stochastic transition matrix in compressed-row form. Rows without
/// usable weight are stored as implicit uniform rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    uniform: Vec<bool>,
    row_mass: Vec<f64>,
    touched: usize,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Stored non-zero entries (uniform rows excluded).
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Cell pairs evaluated while building.
    pub fn touched(&self) -> usize {
        self.touched
    }

    pub fn is_uniform_row(&self, i: usize) -> bool {
        self.uniform[i]
    }

    /// Raw weight of row `i` before normalization.
    pub fn row_mass(&self, i: usize) -> f64 {
        self.row_mass[i]
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        if self.uniform[i] {
            return vec![1.0 / self.size as f64; self.size];
        }
        let mut row = vec![0.0; self.size];
        for (j, v) in self.row_entries(i) {
            row[j] = v;
        }
        row
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        if self.uniform[i] {
            self.dense_row(i).iter().sum()
        } else {
            self.row_entries(i).map(|(_, v)| v).sum()
        }
    }

    /// `v * T`.
    pub fn left_multiply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        let mut spread = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if self.uniform[i] {
                spread += vi;
                continue;
            }
            if vi == 0.0 {
                continue;
            }
            for (j, t) in self.row_entries(i) {
                out[j] += vi * t;
            }
        }
        if spread != 0.0 {
            let add = spread / self.size as f64;
            for o in &mut out {
                *o += add;
            }
        }
        out
    }
}

/// Builds a row-normalized chain over a `width x height` grid with raw
/// weight `weight(i, j, F(i, j))`. Only pairs with `F >= sparsity` are kept.
pub fn build_weighted<W>(width: usize, height: usize, kernel: Kernel, sparsity: f64, weight: W) -> TransitionMatrix
where
    W: Fn(usize, usize, f64) -> f64 + Sync,
{
    let size = width * height;
    let mut table = vec![0.0; size];
    for dy in 0..height {
        for dx in 0..width {
            table[dy * width + dx] = kernel.weight_d2((dx * dx + dy * dy) as f64);
        }
    }
    let dense = sparsity <= 0.0;
    let reach = if dense {
        width.max(height)
    } else {
        kernel.cutoff_d2(sparsity).sqrt().floor() as usize
    };
    let rows: Vec<(Vec<(u32, f64)>, f64, usize)> = (0..size)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let (x0, x1) = (x.saturating_sub(reach), (x + reach).min(width - 1));
            let (y0, y1) = (y.saturating_sub(reach), (y + reach).min(height - 1));
            let mut entries = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
            let mut total = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let f = table[yy.abs_diff(y) * width + xx.abs_diff(x)];
                    if !dense && f < sparsity {
                        continue;
                    }
                    let j = yy * width + xx;
                    let w = weight(i, j, f);
                    if w > 0.0 {
                        entries.push((j as u32, w));
                        total += w;
                    }
                }
            }
            (entries, total, (x1 - x0 + 1) * (y1 - y0 + 1))
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(size + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut uniform = vec![false; size];
    let mut row_mass = vec![0.0; size];
    let mut touched = 0;
    for (i, (entries, total, visited)) in rows.into_iter().enumerate() {
        touched += visited;
        row_mass[i] = total;
        if total < MIN_ROW_MASS {
            uniform[i] = true;
        } else {
            for (j, w) in entries {
                cols.push(j);
                vals.push(w / total);
            }
        }
        row_ptr.push(cols.len());
    }
    TransitionMatrix {
        size,
        row_ptr,
        cols,
        vals,
        uniform,
        row_mass,
        touched,
    }
}

/// Activation chain of a feature map: `w(i, j) = d(i, j) * F(i, j)`.
pub fn build_transition(map: &FeatureMap, kernel: Kernel, sparsity: f64) -> TransitionMatrix {
    let logs: Vec<f64> = map.values.iter().map(|v| v.ln()).collect();
    build_weighted(map.width, map.height, kernel, sparsity, |i, j, f| (logs[i] - logs[j]).abs() * f)
}

/// Normalization chain: `w'(i, j) = A(j) * F(i, j)`.
pub fn build_normalization(a: &ActivationMap, kernel: Kernel, sparsity: f64) -> TransitionMatrix {
    let v = &a.values;
    build_weighted(a.width, a.height, kernel, sparsity, |_, j, f| v[j] * f)
}

/// Maps an image pixel coordinate to map coordinates with cell centers at
/// integer positions.
pub fn image_to_map(p: [f64; 2], image: (usize, usize), map: (usize, usize)) -> [f64; 2] {
    [
        p[0] * map.0 as f64 / image.0 as f64 - 0.5,
        p[1] * map.1 as f64 / image.1 as f64 - 0.5,
    ]
}

/// Gaze-initialized activation: each in-domain point contributes its
/// L1-normalized proximity kernel, weighted by `weights` (uniform if absent).
pub fn gaze_init(
    points: &[[f64; 2]],
    weights: Option<&[f64]>,
    width: usize,
    height: usize,
    kernel: Kernel,
) -> Result<ActivationMap, GbvsError> {
    if let Some(w) = weights {
        if w.len() != points.len() || w.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(GbvsError::Invalid("gaze weights".into()));
        }
    }
    let inside = |p: &[f64; 2]| {
        (-0.5..=width as f64 - 0.5).contains(&p[0]) && (-0.5..=height as f64 - 0.5).contains(&p[1])
    };
    let mut nu = vec![0.0; width * height];
    let mut used = 0;
    let mut single = vec![0.0; width * height];
    for (t, p) in points.iter().enumerate() {
        if !inside(p) {
            continue;
        }
        let b = weights.map_or(1.0, |w| w[t]);
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - p[0]).powi(2) + (y as f64 - p[1]).powi(2);
                single[y * width + x] = kernel.weight_d2(d2);
            }
        }
        let l1: f64 = single.iter().sum();
        if l1 > 0.0 {
            for (n, s) in nu.iter_mut().zip(&single) {
                *n += b * s / l1;
            }
            used += 1;
        }
    }
    if used == 0 || nu.iter().sum::<f64>() <= 0.0 {
        return Err(GbvsError::NoGazeInDomain { width, height });
    }
    normalize_sum(&mut nu);
    Ok(ActivationMap {
        width,
        height,
        values: nu,
    })
}

/// `q * previous + (1 - q) * current`.
pub fn blend_temporal(previous: &ActivationMap, current: &ActivationMap, q: f64) -> Result<ActivationMap, GbvsError> {
    if previous.values.len() != current.values.len() || !(0.0..=1.0).contains(&q) {
        return Err(GbvsError::Invalid("temporal blend".into()));
    }
    if q == 1.0 {
        return Ok(previous.clone());
    }
    let mut values: Vec<f64> = previous
        .values
        .iter()
        .zip(&current.values)
        .map(|(p, c)| q * p + (1.0 - q) * c)
        .collect();
    normalize_sum(&mut values);
    Ok(ActivationMap {
        values,
        ..current.clone()
    })
}

/// `nu * T^k`, renormalized after every step; `k = 0` returns `nu` as is.
pub fn iterate(t: &TransitionMatrix, nu: &[f64], k: usize) -> Vec<f64> {
    let mut v = nu.to_vec();
    for _ in 0..k {
        v = t.left_multiply(&v);
        normalize_sum(&mut v);
    }
    v
}

fn residual(t: &TransitionMatrix, v: &[f64]) -> (Vec<f64>, f64) {
    let mut next = t.left_multiply(v);
    normalize_sum(&mut next);
    let r = next.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
    (next, r)
}

/// Iterates until `|nu T - nu|_1 < 1e-8`, for at most `10 * size` steps.
/// Returns the accepted vector, whose residual is below the tolerance.
pub fn converge(t: &TransitionMatrix, nu: &[f64]) -> Result<Vec<f64>, GbvsError> {
    let max_steps = 10 * t.size();
    let mut v = nu.to_vec();
    normalize_sum(&mut v);
    let mut steps = 0;
    loop {
        let (next, r) = residual(t, &v);
        if r < CONVERGE_TOL {
            return Ok(v);
        }
        if steps == max_steps {
            return Err(GbvsError::NotConverged {
                last: next,
                residual: r,
                steps,
            });
        }
        v = next;
        steps += 1;
    }
}

/// Stationary distribution by power iteration, warm-started from the raw
/// row weights (exact for a symmetric weight matrix).
pub fn stationary(t: &TransitionMatrix) -> Result<Vec<f64>, GbvsError> {
    let live: Vec<f64> = (0..t.size()).filter(|&i| !t.is_uniform_row(i)).map(|i| t.row_mass(i)).collect();
    let fill = if live.is_empty() { 1.0 } else { live.iter().sum::<f64>() / live.len() as f64 };
    let start: Vec<f64> = (0..t.size())
        .map(|i| if t.is_uniform_row(i) { fill } else { t.row_mass(i) })
        .collect();
    converge(t, &start)
}

fn is_constant(v: &[f64]) -> bool {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 1e-15 * hi.abs().max(1.0)
}

/// Second Markov pass accentuating peaks of `a`. Starts from `init` (the
/// gaze activation for DGA) or from the uniform vector. A constant `a`
/// yields the uniform map.
pub fn normalize_activation(
    a: &ActivationMap,
    kernel: Kernel,
    sparsity: f64,
    steps: usize,
    init: Option<&ActivationMap>,
) -> ActivationMap {
    if is_constant(&a.values) {
        return ActivationMap::uniform(a.width, a.height);
    }
    let t = build_normalization(a, kernel, sparsity);
    let start = match init {
        Some(g) => g.values.clone(),
        None => ActivationMap::uniform(a.width, a.height).values,
    };
    ActivationMap {
        width: a.width,
        height: a.height,
        values: iterate(&t, &start, steps),
    }
}

/// Min-max scaled saliency at internal resolution, tied to an image size.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyField {
    pub map_width: usize,
    pub map_height: usize,
    /// Values in `[0, 1]`, row-major.
    pub map: Vec<f64>,
    pub image_width: usize,
    pub image_height: usize,
}

/// Scales to `[0, 1]`; a constant input maps to all ones.
pub fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; v.len()]
    }
}

impl SaliencyField {
    /// Bilinear upsampling to the image resolution.
    pub fn upsample(&self) -> Vec<f64> {
        let (mw, mh) = (self.map_width, self.map_height);
        let (w, h) = (self.image_width, self.image_height);
        let axis = |out: usize, map: usize, i: usize| {
            let c = ((i as f64 + 0.5) * map as f64 / out as f64 - 0.5).clamp(0.0, (map - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(map - 1);
            (i0, i1, c - i0 as f64)
        };
        let xs: Vec<_> = (0..w).map(|x| axis(w, mw, x)).collect();
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let (y0, y1, fy) = axis(h, mh, y);
            for &(x0, x1, fx) in &xs {
                let at = |xx: usize, yy: usize| self.map[yy * mw + xx];
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<(), GbvsError> {
        Ok(imageio::write_gray(path, self.image_width, self.image_height, &self.upsample())?)
    }

    /// Little-endian `f64` samples of the upsampled field, row-major.
    pub fn write_bin(&self, path: &Path) -> Result<(), GbvsError> {
        let bytes: Vec<u8> = self.upsample().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| GbvsError::Io(format!("{}: {e}", path.display())))
    }

    /// Saliency blended in red over the image, opacity proportional to saliency.
    pub fn write_overlay(&self, path: &Path, image: &Raster) -> Result<(), GbvsError> {
        if (image.width(), image.height()) != (self.image_width, self.image_height) {
            return Err(GbvsError::Invalid("overlay image size differs from field".into()));
        }
        let s = self.upsample();
        let c = image.channels();
        let mut data = Vec::with_capacity(s.len() * 3);
        for (i, px) in image.data().chunks_exact(c).enumerate() {
            let rgb = if c >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
            let a = 0.6 * s[i];
            data.extend([rgb[0] * (1.0 - a) + a, rgb[1] * (1.0 - a), rgb[2] * (1.0 - a)]);
        }
        let raster = Raster::new(self.image_width, self.image_height, 3, data).map_err(|e| GbvsError::Invalid(e.to_string()))?;
        Ok(imageio::write_rgb(path, &raster)?)
    }
}

fn channel_activation(
    map: &FeatureMap,
    params: &GbvsParams,
    kernel: Kernel,
    nu: Option<&ActivationMap>,
) -> Result<ActivationMap, GbvsError> {
    let t = build_transition(map, kernel, params.sparsity);
    let start = match (params.variant, nu) {
        (Variant::Plain, _) | (_, None) => ActivationMap::uniform(map.width, map.height).values,
        (_, Some(g)) => g.values.clone(),
    };
    let values = match params.effective_steps() {
        Steps::Fixed(k) => iterate(&t, &start, k),
        Steps::Converge if params.variant == Variant::Plain => stationary(&t)?,
        Steps::Converge => converge(&t, &start)?,
    };
    let a = ActivationMap {
        width: map.width,
        height: map.height,
        values,
    };
    let init = match params.variant {
        Variant::Dga => nu,
        _ => None,
    };
    Ok(normalize_activation(&a, kernel, params.sparsity, params.norm_steps, init))
}

/// Full pipeline on one image. Gaze points are image pixel coordinates and
/// are ignored by the plain variant.
pub fn saliency(image: &Raster, gaze: &[[f64; 2]], params: &GbvsParams) -> Result<SaliencyField, GbvsError> {
    saliency_weighted(image, gaze, None, params)
}

pub fn saliency_weighted(
    image: &Raster,
    gaze: &[[f64; 2]],
    weights: Option<&[f64]>,
    params: &GbvsParams,
) -> Result<SaliencyField, GbvsError> {
    Ok(run_pipeline(image, gaze, weights, None, params)?.0)
}

/// Saliency over consecutive frames. Each frame's gaze activation is
/// blended toward the previous frame's combined activation by `params.q`.
/// A frame whose gaze misses the image reuses the previous activation.
pub fn saliency_sequence(frames: &[(Raster, Vec<[f64; 2]>)], params: &GbvsParams) -> Result<Vec<SaliencyField>, GbvsError> {
    let mut previous: Option<ActivationMap> = None;
    let mut out = Vec::with_capacity(frames.len());
    for (image, gaze) in frames {
        let (field, combined) = run_pipeline(image, gaze, None, previous.as_ref(), params)?;
        out.push(field);
        previous = Some(combined);
    }
    Ok(out)
}

fn run_pipeline(
    image: &Raster,
    gaze: &[[f64; 2]],
    weights: Option<&[f64]>,
    previous: Option<&ActivationMap>,
    params: &GbvsParams,
) -> Result<(SaliencyField, ActivationMap), GbvsError> {
    params.validate()?;
    let maps = extract_features(image, params.cap)?;
    let (n, m) = (maps[0].width, maps[0].height);
    let kernel = params.kernel(n, m);
    let nu = match params.variant {
        Variant::Plain => None,
        Variant::Ga | Variant::Dga => {
            let pts: Vec<[f64; 2]> = gaze
                .iter()
                .map(|&p| image_to_map(p, (image.width(), image.height()), (n, m)))
                .collect();
            let current = gaze_init(&pts, weights, n, m, kernel);
            match (previous.filter(|p| p.values.len() == n * m), current) {
                (Some(p), Ok(c)) => Some(blend_temporal(p, &c, params.q)?),
                (Some(p), Err(GbvsError::NoGazeInDomain { .. })) => Some(p.clone()),
                (_, c) => Some(c?),
            }
        }
    };
    let field = |map: Vec<f64>| SaliencyField {
        map_width: n,
        map_height: m,
        map,
        image_width: image.width(),
        image_height: image.height(),
    };
    if params.variant == Variant::Ga && params.effective_steps() == Steps::Fixed(0) {
        let nu = nu.expect("gaze activation");
        return Ok((field(min_max(&nu.values)), nu));
    }
    let acts = maps
        .par_iter()
        .map(|map| channel_activation(map, params, kernel, nu.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sum = vec![0.0; n * m];
    for a in &acts {
        for (s, v) in sum.iter_mut().zip(&a.values) {
            *s += v;
        }
    }
    let mut combined = sum.clone();
    normalize_sum(&mut combined);
    Ok((
        field(min_max(&sum)),
        ActivationMap {
            width: n,
            height: m,
            values: combined,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FeatureMap {
        FeatureMap::new(Channel::Intensity, w, h, (0..w * h).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
    }

    // Straight dense construction from the definitions, independent of the
    // offset table and CSR storage.
    fn dense_oracle(map: &FeatureMap, sigma: f64) -> Vec<Vec<f64>> {
        let n = map.width * map.height;
        let pos = |i: usize| ((i % map.width) as f64, (i / map.width) as f64);
        (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| {
                        let (xi, yi) = pos(i);
                        let (xj, yj) = pos(j);
                        let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
                        (map.values[i] / map.values[j]).ln().abs() * (-d2 / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                let s: f64 = row.iter().sum();
                if s < MIN_ROW_MASS {
                    row = vec![1.0 / n as f64; n];
                } else {
                    row.iter_mut().for_each(|v| *v /= s);
                }
                row
            })
            .collect()
    }

    #[test]
    fn dissimilarity_examples() {
        assert_eq!(dissimilarity(0.3, 0.3).unwrap(), 0.0);
        assert!((dissimilarity(std::f64::consts::E, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((dissimilarity(4.0, 1.0).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-15);
        assert_eq!(dissimilarity(1.0, 4.0).unwrap(), dissimilarity(4.0, 1.0).unwrap());
        assert!(matches!(dissimilarity(0.0, 1.0), Err(GbvsError::NonPositiveFeature(_))));
    }

    #[test]
    fn distance_weight_examples() {
        assert_eq!(distance_weight(0.0, 2.0, false), 1.0);
        assert!((distance_weight(2.0, 2.0, false) - 0.606_530_659_712_633_4).abs() < 1e-15);
        // Legacy form uses sigma in place of sigma squared.
        assert!((distance_weight(2.0, 4.0, true) - 0.606_530_659_712_633_4).abs() < 1e-15);
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for a in 0..64 {
            for b in 0..64 {
                let d = (((a % 8) as f64 - (b % 8) as f64).powi(2) + ((a / 8) as f64 - (b / 8) as f64).powi(2)).sqrt();
                pairs.push((d, distance_weight(d, 1.5, false)));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in pairs.windows(2) {
            if p[1].0 > p[0].0 {
                assert!(p[1].1 < p[0].1);
            }
        }
    }

    #[test]
    fn resize_arithmetic() {
        // 1080 * 32 / 1088 = 31.76 rounds to 32.
        assert_eq!(internal_size(1088, 1080, 32), (32, 32));
        assert_eq!(internal_size(1920, 1080, 32), (32, 18));
        assert_eq!(internal_size(1080, 1920, 32), (18, 32));
        assert_eq!(internal_size(640, 10, 32), (32, 1));
        assert_eq!(internal_size(20, 10, 32), (20, 10));
        // 100 * 32 / 64 = 50 exactly; 3 * 32 / 64 = 1.5 rounds up to 2.
        assert_eq!(internal_size(64, 3, 32), (32, 2));
    }

    #[test]
    fn area_resample_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (37, 23);
        let p: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let out = resample_area(&p, w, h, 10, 6);
        let mean_in = p.iter().sum::<f64>() / p.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-12);
        // Exact 2x2 block averaging.
        let q = vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0];
        assert_eq!(resample_area(&q, 4, 2, 2, 1), vec![2.0, 6.0]);
    }

    #[test]
    fn feature_channels() {
        let gray = Raster::filled(50, 40, 3, 0.4);
        let maps = extract_features(&gray, 32).unwrap();
        assert_eq!(maps.len(), 3);
        for m in &maps {
            assert_eq!((m.width, m.height), (32, 26));
            assert!(m.values.iter().all(|&v| v == 1.0));
        }
        let mut rg = Raster::filled(64, 32, 3, 0.0);
        for y in 0..32 {
            for x in 0..64 {
                rg.set(x, y, if x < 32 { 0 } else { 1 }, 1.0);
            }
        }
        let maps = extract_features(&rg, 32).unwrap();
        // |R - G| = 1 on both halves.
        assert!(maps[1].values.iter().all(|&v| v == 1.0));
        assert!(extract_features(&Raster::filled(0, 0, 3, 0.0), 32).is_err());
        assert!(matches!(extract_features(&Raster::filled(2, 2, 2, 0.0), 32), Err(GbvsError::Channels(2))));
    }

    #[test]
    fn two_cell_chain() {
        let m = FeatureMap::new(Channel::Intensity, 2, 1, vec![0.5, 1.0]).unwrap();
        let t = build_transition(&m, Kernel { sigma: 1.0, legacy: false }, 0.0);
        assert_eq!(t.dense_row(0), vec![0.0, 1.0]);
        assert_eq!(t.dense_row(1), vec![1.0, 0.0]);
    }

    #[test]
    fn constant_map_falls_back_to_uniform() {
        let m = FeatureMap::new(Channel::Intensity, 4, 3, vec![0.7; 12]).unwrap();
        let t = build_transition(&m, Kernel { sigma: 1.0, legacy: false }, 0.0);
        for i in 0..12 {
            assert!(t.is_uniform_row(i));
            assert!((t.row_sum(i) - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.left_multiply(&[1.0 / 12.0; 12]).len(), 12);
    }

    #[test]
    fn transition_matches_dense_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_map(&mut rng, 7, 5);
        let t = build_transition(&m, Kernel { sigma: 1.3, legacy: false }, 0.0);
        let oracle = dense_oracle(&m, 1.3);
        for i in 0..35 {
            for (a, b) in t.dense_row(i).iter().zip(&oracle[i]) {
                assert!((a - b).abs() < 1e-14);
            }
            assert_eq!(t.dense_row(i)[i], 0.0);
        }
        assert_eq!(t.touched(), 35 * 35);
    }

    #[test]
    fn sparse_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_map(&mut rng, 16, 16);
        let k = Kernel { sigma: 2.0, legacy: false };
        let dense = build_transition(&m, k, 0.0);
        let sparse = build_transition(&m, k, 1e-6);
        assert!(sparse.touched() < dense.touched());
        let a = stationary(&dense).unwrap();
        let b = stationary(&sparse).unwrap();
        let linf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(linf <= 1e-6, "{linf}");
        // Cut-off pattern: kept pairs lie within sqrt(-2 sigma^2 ln l).
        let r2 = k.cutoff_d2(1e-6);
        for i in 0..256 {
            for (j, _) in sparse.row_entries(i) {
                let d2 = ((i % 16) as f64 - (j % 16) as f64).powi(2) + ((i / 16) as f64 - (j / 16) as f64).powi(2);
                assert!(d2 <= r2);
            }
        }
    }

    #[test]
    fn stationary_of_symmetric_chain_is_degree_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_map(&mut rng, 9, 6);
        let t = build_transition(&m, Kernel { sigma: 1.5, legacy: false }, 0.0);
        let oracle = dense_oracle(&m, 1.5);
        // Closed form: pi_i proportional to sum_j w(i, j).
        let mut deg: Vec<f64> = (0..54).map(|i| t.row_mass(i)).collect();
        normalize_sum(&mut deg);
        // Converge from uniform, not from the warm start.
        let pi = converge(&t, &[1.0 / 54.0; 54]).unwrap();
        for (a, b) in pi.iter().zip(&deg) {
            assert!((a - b).abs() < 1e-8);
        }
        let next: Vec<f64> = (0..54).map(|j| (0..54).map(|i| pi[i] * oracle[i][j]).sum()).collect();
        assert!(next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>() <= CONVERGE_TOL);
    }

    #[test]
    fn iterate_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_map(&mut rng, 5, 5);
        let t = build_transition(&m, Kernel { sigma: 1.0, legacy: false }, 0.0);
        let nu: Vec<f64> = {
            let mut v: Vec<f64> = (0..25).map(|_| rng.random()).collect();
            normalize_sum(&mut v);
            v
        };
        assert_eq!(iterate(&t, &nu, 0), nu);
        // Doubly stochastic chain (uniform rows): uniform stays uniform.
        let c = FeatureMap::new(Channel::Intensity, 5, 5, vec![1.0; 25]).unwrap();
        let u = build_transition(&c, Kernel { sigma: 1.0, legacy: false }, 0.0);
        for k in 0..5 {
            for v in iterate(&u, &[0.04; 25], k) {
                assert!((v - 0.04).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn periodic_chain_reports_not_converged() {
        // Two values on a checkerboard with a nearest-neighbor kernel make a
        // bipartite chain; a point mass oscillates.
        let vals: Vec<f64> = (0..16).map(|i| if (i % 4 + i / 4) % 2 == 0 { 1.0 } else { 0.5 }).collect();
        let m = FeatureMap::new(Channel::Intensity, 4, 4, vals).unwrap();
        let t = build_transition(&m, Kernel { sigma: 0.3, legacy: false }, 0.0);
        let mut start = vec![0.0; 16];
        start[0] = 1.0;
        match converge(&t, &start) {
            Err(GbvsError::NotConverged { last, steps, .. }) => {
                assert_eq!(steps, 160);
                assert!((last.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gaze_init_examples() {
        let k = Kernel { sigma: 1.0, legacy: false };
        let a = gaze_init(&[[2.2, 3.9]], None, 8, 6, k).unwrap();
        assert_eq!(a.argmax(), 4 * 8 + 2);
        assert!((a.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let s = gaze_init(&[[1.0, 2.0], [6.0, 2.0]], None, 8, 5, k).unwrap();
        for y in 0..5 {
            for x in 0..8 {
                assert!((s.values[y * 8 + x] - s.values[y * 8 + (7 - x)]).abs() < 1e-15);
            }
        }
        assert!(matches!(gaze_init(&[[-3.0, 0.0], [0.0, 9.0]], None, 8, 5, k), Err(GbvsError::NoGazeInDomain { .. })));
        // Out-of-domain points are ignored.
        assert_eq!(gaze_init(&[[2.2, 3.9], [100.0, 0.0]], None, 8, 6, k).unwrap(), a);

        let prev = gaze_init(&[[0.0, 0.0]], None, 8, 6, k).unwrap();
        assert_eq!(blend_temporal(&prev, &a, 1.0).unwrap(), prev);
        assert_eq!(blend_temporal(&prev, &a, 0.0).unwrap(), a);
    }

    #[test]
    fn normalization_pass() {
        let k = Kernel { sigma: 1.0, legacy: false };
        let flat = ActivationMap::uniform(4, 4);
        assert_eq!(normalize_activation(&flat, k, 0.0, 1, None), ActivationMap::uniform(4, 4));

        let mut peak = vec![0.02; 16];
        peak[5] = 0.7;
        normalize_sum(&mut peak);
        let a = ActivationMap { width: 4, height: 4, values: peak };
        let out = normalize_activation(&a, k, 0.0, 1, None);
        assert_eq!(out.argmax(), 5);
        assert!((out.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dga_shifts_mass_toward_gaze() {
        let k = Kernel { sigma: 1.5, legacy: false };
        let (w, h) = (12, 12);
        let mut v = vec![0.01; w * h];
        v[2 * w + 2] = 1.0;
        v[2 * w + 3] = 0.8;
        normalize_sum(&mut v);
        let a = ActivationMap { width: w, height: h, values: v };
        let g = gaze_init(&[[9.0, 9.0]], None, w, h, k).unwrap();
        let ga = normalize_activation(&a, k, 0.0, 1, None);
        let dga = normalize_activation(&a, k, 0.0, 1, Some(&g));
        let near = |m: &ActivationMap| -> f64 {
            (0..w * h)
                .filter(|i| (((i % w) as f64 - 9.0).powi(2) + ((i / w) as f64 - 9.0).powi(2)).sqrt() <= 3.0)
                .map(|i| m.values[i])
                .sum()
        };
        assert!(near(&dga) > near(&ga));
    }

    fn disk_image(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Raster {
        let mut img = Raster::filled(w, h, 3, 0.05);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r {
                    for c in 0..3 {
                        img.set(x, y, c, 0.95);
                    }
                }
            }
        }
        img
    }

    #[test]
    fn pipeline_variants() {
        let img = disk_image(128, 96, 40.0, 50.0, 14.0);
        let gaze = [[41.0, 48.0], [38.0, 52.0]];

        let plain = saliency(&img, &gaze, &GbvsParams::with_variant(Variant::Plain)).unwrap();
        assert_eq!(plain, saliency(&img, &[], &GbvsParams::with_variant(Variant::Plain)).unwrap());

        for variant in [Variant::Ga, Variant::Dga] {
            let f = saliency(&img, &gaze, &GbvsParams::with_variant(variant)).unwrap();
            assert_eq!((f.map_width, f.map_height), (32, 24));
            let up = f.upsample();
            assert_eq!(up.len(), 128 * 96);
            let best = argmax(&up);
            let (x, y) = ((best % 128) as f64 + 0.5, (best / 128) as f64 + 0.5);
            assert!((x - 40.0).powi(2) + (y - 50.0).powi(2) <= 14.0 * 14.0, "{variant:?} peak at {x},{y}");
            assert!(f.map.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(f, saliency(&img, &gaze, &GbvsParams::with_variant(variant)).unwrap());
        }
    }

    #[test]
    fn ga_with_zero_steps_is_the_gaze_heatmap() {
        let img = disk_image(64, 64, 20.0, 20.0, 6.0);
        let gaze = [[30.0, 12.0], [33.0, 15.0]];
        let params = GbvsParams {
            steps: Some(Steps::Fixed(0)),
            ..GbvsParams::with_variant(Variant::Ga)
        };
        let f = saliency(&img, &gaze, &params).unwrap();
        let kernel = params.kernel(32, 32);
        let pts: Vec<[f64; 2]> = gaze.iter().map(|&p| image_to_map(p, (64, 64), (32, 32))).collect();
        let nu = gaze_init(&pts, None, 32, 32, kernel).unwrap();
        assert_eq!(f.map, min_max(&nu.values));
    }

    #[test]
    fn exports() {
        let dir = tempfile::tempdir().unwrap();
        let img = disk_image(40, 30, 20.0, 15.0, 5.0);
        let f = saliency(&img, &[[20.0, 15.0]], &GbvsParams::default()).unwrap();
        f.write_png(&dir.path().join("s.png")).unwrap();
        f.write_overlay(&dir.path().join("o.png"), &img).unwrap();
        f.write_bin(&dir.path().join("s.bin")).unwrap();
        assert_eq!(fs::read(dir.path().join("s.bin")).unwrap().len(), 40 * 30 * 8);
        assert_eq!(imageio::png_dimensions(&dir.path().join("o.png")).unwrap(), (40, 30));
    }

    #[test]
    fn sequence_blend() {
        let a = disk_image(48, 36, 12.0, 12.0, 6.0);
        let b = disk_image(48, 36, 34.0, 22.0, 6.0);
        let frames = vec![(a.clone(), vec![[12.0, 12.0]]), (b.clone(), vec![[34.0, 22.0]])];
        let params = GbvsParams::default();
        let seq = saliency_sequence(&frames, &params).unwrap();
        let solo = saliency(&b, &[[34.0, 22.0]], &params).unwrap();
        let diff = seq[1].map.iter().zip(&solo.map).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");

        // q = 1 keeps the first frame's activation; the new gaze is ignored.
        let sticky = GbvsParams { q: 1.0, ..GbvsParams::default() };
        let moved = vec![(a.clone(), vec![[12.0, 12.0]]), (b.clone(), vec![[2.0, 30.0]])];
        let s1 = saliency_sequence(&frames, &sticky).unwrap();
        let s2 = saliency_sequence(&moved, &sticky).unwrap();
        assert_eq!(s1[1], s2[1]);

        // Gaze off the image falls back to the previous activation.
        let off = vec![(a.clone(), vec![[12.0, 12.0]]), (b, vec![[-500.0, -500.0]])];
        assert!(saliency_sequence(&off, &params).is_ok());
        assert!(saliency_sequence(&[(a, vec![[-500.0, -500.0]])], &params).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn rows_stochastic_and_activations_normalized(seed in 0u64..10_000, w in 1usize..10, h in 1usize..10, sparse in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_map(&mut rng, w, h);
            let k = Kernel { sigma: rng.random_range(0.5..3.0), legacy: false };
            let t = build_transition(&m, k, if sparse { 1e-6 } else { 0.0 });
            for i in 0..w * h {
                prop_assert!((t.row_sum(i) - 1.0).abs() <= 1e-9);
            }
            let g = gaze_init(&[[rng.random_range(0.0..w as f64) - 0.5, rng.random_range(0.0..h as f64) - 0.5]], None, w, h, k).unwrap();
            let a = iterate(&t, &g.values, 3);
            prop_assert!(a.iter().all(|v| *v >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let act = ActivationMap { width: w, height: h, values: a };
            let n = normalize_activation(&act, k, 0.0, 1, Some(&g));
            prop_assert!(n.values.iter().all(|v| *v >= 0.0));
            prop_assert!((n.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
