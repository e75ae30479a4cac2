use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gazelab::cloud::{segment_by_gaze, RansacParams, SegParams, SelectMode};
use gazelab::distill::{distill_multi, report as distill_report};
use gazelab::eval::{self, CocoAnnotation, CocoCategory, CocoDataset, CocoImage, Detection, ReportOptions};
use gazelab::gbvs::{saliency, GbvsParams, SaliencyField, Steps, Variant};
use gazelab::heatmap::{encode, flatten, label_window, save_features, load_features, windows, FeatureMeta, Presence, WindowLabel, WindowSpec};
use gazelab::ingest::{self, GazeLog, GazeLogOptions, ProposalList};
use gazelab::knn::{cross_validate_classifier, cross_validate_regressor, fit};
use gazelab::multiview::{circular_path, label_run_cloud, write_omd, LabeledView};
use gazelab::roi::{extract_roi, RoiOptions};
use gazelab::{imageio, synth, BBox2D, BBox3D, GazePos, GazeSample, PinholeCamera, PointCloud};

use crate::params::{parse_fixed, Params};
use crate::{Ctx, UsageError};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode windowed gaze heatmaps as feature rows.
    Heatmap(HeatmapArgs),
    /// Cross-validate k-nearest-neighbour detection on heatmap features.
    Knn(KnnArgs),
    /// Gaze-assisted saliency map of one image.
    Saliency(SaliencyArgs),
    /// Object box from gaze-assisted saliency.
    Roi(SaliencyArgs),
    /// Keep the region proposals that contain the gaze.
    Distill(DistillArgs),
    /// Segment the gazed object from a point cloud.
    Segment(SegmentArgs),
    /// Label views on a circular path around an object cloud.
    Label(LabelArgs),
    /// COCO-style detection metrics.
    Eval(EvalArgs),
    /// Full pipeline on seeded synthetic data.
    DemoSynthetic,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    /// Gaze log (CSV).
    #[arg(long)]
    gaze: PathBuf,
    /// Frame annotations (JSON); adds labels to the window table.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KnnArgs {
    /// Feature matrix written by `heatmap`.
    #[arg(long)]
    features: PathBuf,
    /// Window table (`windows.json`) written by `heatmap --annotations`.
    #[arg(long)]
    labels: PathBuf,
    /// Feature matrix to predict with a model fit on all labeled rows.
    #[arg(long)]
    query: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    image: PathBuf,
    /// Gaze log with pixel samples; not needed for `--variant plain`.
    #[arg(long)]
    gaze: Option<PathBuf>,
    /// plain, ga or dga.
    #[arg(long)]
    variant: Option<String>,
    /// Activation steps, `converge` or `auto`.
    #[arg(long)]
    k: Option<String>,
    /// Kernel scale in map cells or `auto`.
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Proposal list, one `x1 y1 x2 y2` per line.
    #[arg(long)]
    proposals: PathBuf,
    /// Gaze point `x,y`; repeat for several.
    #[arg(long, required = true)]
    gaze: Vec<String>,
    /// Ground-truth box `x1,y1,x2,y2` for sufficiency statistics.
    #[arg(long)]
    gt: Option<String>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Point cloud (ASCII XYZ).
    #[arg(long)]
    cloud: PathBuf,
    /// Gaze point `x,y,z` in the cloud frame.
    #[arg(long)]
    gaze: String,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    /// Object point cloud (ASCII XYZ) in the world frame.
    #[arg(long)]
    cloud: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// COCO ground-truth file.
    #[arg(long)]
    gt: PathBuf,
    /// COCO detection list.
    #[arg(long)]
    pred: PathBuf,
}

const SALIENCY: &[(&str, &str)] = &[
    ("variant", "ga"),
    ("sigma", "auto"),
    ("k", "auto"),
    ("norm_steps", "1"),
    ("sparsity", "1e-6"),
    ("q", "0"),
    ("cap", "32"),
    ("legacy_sigma", "false"),
    ("t_start", "auto"),
    ("t_end", "auto"),
];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Heatmap(_) => "heatmap",
            Command::Knn(_) => "knn",
            Command::Saliency(_) => "saliency",
            Command::Roi(_) => "roi",
            Command::Distill(_) => "distill",
            Command::Segment(_) => "segment",
            Command::Label(_) => "label",
            Command::Eval(_) => "eval",
            Command::DemoSynthetic => "demo-synthetic",
        }
    }

    pub fn defaults(&self) -> Params {
        match self {
            Command::Heatmap(_) => Params::new(&[
                ("grid", "30"),
                ("grid_z", "1"),
                ("window_ms", "250"),
                ("stride_ms", "250"),
                ("resolution", "auto"),
            ]),
            Command::Knn(_) => Params::new(&[("k", "1"), ("folds", "5"), ("task", "classify")]),
            Command::Saliency(_) => Params::new(SALIENCY),
            Command::Roi(_) => {
                let mut d = SALIENCY.to_vec();
                d.push(("largest_component", "false"));
                Params::new(&d)
            }
            Command::Distill(_) => Params::new(&[("taus", "0.5,0.7")]),
            Command::Segment(_) => Params::new(&[
                ("z_min", "0"),
                ("z_max", "3"),
                ("leaf", "0.03"),
                ("normal", "0,0,1"),
                ("max_deviation_deg", "30"),
                ("inlier_distance", "0.01"),
                ("iterations", "1000"),
                ("cluster_tolerance", "0.005"),
                ("min_cluster_size", "500"),
                ("mode", "nearest"),
                ("gaze_radius", "0.02"),
            ]),
            Command::Label(_) => Params::new(&[
                ("waypoints", "8"),
                ("min_dist", "0.5"),
                ("fx", "525"),
                ("fy", "525"),
                ("cx", "319.5"),
                ("cy", "239.5"),
                ("width", "640"),
                ("height", "480"),
                ("min_projected", "10"),
                ("class", "object"),
            ]),
            Command::Eval(_) => Params::new(&[("include_empty", "false")]),
            Command::DemoSynthetic => Params::new(&[
                ("frames", "20"),
                ("decoy", "false"),
                ("gaze_sigma", "5"),
                ("gaze_count", "20"),
                ("variant", "ga"),
                ("sigma", "1"),
                ("k", "auto"),
                ("norm_steps", "1"),
                ("sparsity", "1e-6"),
                ("q", "0"),
                ("cap", "64"),
                ("legacy_sigma", "false"),
                ("waypoints", "8"),
            ]),
        }
    }

    /// Dedicated flags win over config and `--set`.
    pub fn apply_flags(&self, params: &mut Params) -> Result<(), UsageError> {
        if let Command::Saliency(a) | Command::Roi(a) = self {
            for (key, value) in [("variant", &a.variant), ("k", &a.k), ("sigma", &a.sigma)] {
                if let Some(v) = value {
                    params.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn run(&self, ctx: &mut Ctx) -> Result<()> {
        match self {
            Command::Heatmap(a) => heatmap(ctx, a),
            Command::Knn(a) => knn(ctx, a),
            Command::Saliency(a) => saliency_cmd(ctx, a, false),
            Command::Roi(a) => saliency_cmd(ctx, a, true),
            Command::Distill(a) => distill_cmd(ctx, a),
            Command::Segment(a) => segment(ctx, a),
            Command::Label(a) => label(ctx, a),
            Command::Eval(a) => eval_cmd(ctx, a),
            Command::DemoSynthetic => demo(ctx),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WindowRecord {
    start: f64,
    end: f64,
    samples: usize,
    /// Row in the feature matrix; empty windows have none.
    row: Option<usize>,
    label: Option<WindowLabel>,
}

fn heatmap(ctx: &mut Ctx, a: &HeatmapArgs) -> Result<()> {
    let p = ctx.params.clone();
    let opts = GazeLogOptions {
        resolution: match p.raw("resolution") {
            "auto" => None,
            s => Some(parse_fixed::<2>(s)?),
        },
        ..GazeLogOptions::default()
    };
    let log = ingest::load_gaze_log_with(&ctx.input("gaze", &a.gaze), &opts)?;
    let annotations = match &a.annotations {
        Some(path) => {
            let set = ingest::load_annotations(&ctx.input("annotations", path))?;
            set.validate_against(&log)?;
            Some(set)
        }
        None => None,
    };
    let spec = WindowSpec::new(p.get("window_ms")?, p.get("stride_ms")?).map_err(|e| usage(e.to_string()))?;
    let g: usize = p.get("grid")?;
    let grid = [g, g, p.get("grid_z")?];
    let wins = windows(&log, &spec)?;
    let encoded: Vec<Option<Vec<f64>>> = wins
        .par_iter()
        .map(|w| {
            if w.samples.is_empty() {
                Ok(None)
            } else {
                encode(w.samples, log.resolution, grid).map(|h| Some(flatten(&h)))
            }
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (w, row) in wins.iter().zip(encoded) {
        let index = row.map(|r| {
            rows.push(r);
            rows.len() - 1
        });
        records.push(WindowRecord {
            start: w.start,
            end: w.end(),
            samples: w.samples.len(),
            row: index,
            label: annotations
                .as_ref()
                .map(|set| label_window(w, set, [log.resolution[0], log.resolution[1]])),
        });
    }
    let meta = FeatureMeta {
        grid,
        resolution: log.resolution,
        window: spec,
        rows: rows.len(),
        dim: grid.iter().product(),
    };
    save_features(&ctx.path("features.bin"), &meta, &rows)?;
    write_json(&ctx.path("windows.json"), &records)?;
    println!("{} windows, {} encoded", records.len(), rows.len());
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    row: usize,
    class: Option<Presence>,
    fraction: Option<f64>,
    target: Option<[f64; 4]>,
}

fn knn(ctx: &mut Ctx, a: &KnnArgs) -> Result<()> {
    let p = ctx.params.clone();
    let (_, rows) = load_features(&ctx.input("features", &a.features))?;
    let labels_path = ctx.input("labels", &a.labels);
    let records: Vec<WindowRecord> = serde_json::from_slice(&fs::read(&labels_path)?)
        .with_context(|| format!("reading {}", labels_path.display()))?;
    let mut labeled: Vec<(Vec<f64>, WindowLabel)> = Vec::new();
    for r in &records {
        if let (Some(i), Some(l)) = (r.row, &r.label) {
            let row = rows.get(i).ok_or_else(|| anyhow!("window row {i} outside the feature matrix"))?;
            labeled.push((row.clone(), l.clone()));
        }
    }
    if labeled.is_empty() {
        bail!("{}: no labeled windows", labels_path.display());
    }
    let k: usize = p.get("k")?;
    let folds: usize = p.get("folds")?;
    let query = match &a.query {
        Some(q) => Some(load_features(&ctx.input("query", q))?.1),
        None => None,
    };
    let mut predictions = Vec::new();
    let cv = match p.raw("task") {
        "classify" => {
            let x: Vec<Vec<f64>> = labeled.iter().map(|l| l.0.clone()).collect();
            let y: Vec<Presence> = labeled.iter().map(|l| l.1.class).collect();
            let cv = cross_validate_classifier(&x, &y, folds, k, ctx.seed)?;
            if let Some(q) = &query {
                let model = fit(&x, y, k)?;
                for (row, v) in q.iter().enumerate() {
                    let vote = model.classify(v)?;
                    predictions.push(Prediction { row, class: Some(vote.class), fraction: Some(vote.fraction), target: None });
                }
            }
            cv
        }
        "regress" => {
            let with_target: Vec<(Vec<f64>, [f64; 4])> =
                labeled.iter().filter_map(|(x, l)| l.target.map(|t| (x.clone(), t))).collect();
            let x: Vec<Vec<f64>> = with_target.iter().map(|w| w.0.clone()).collect();
            let y: Vec<[f64; 4]> = with_target.iter().map(|w| w.1).collect();
            let cv = cross_validate_regressor(&x, &y, folds, k, ctx.seed)?;
            if let Some(q) = &query {
                let model = fit(&x, y, k)?;
                for (row, v) in q.iter().enumerate() {
                    predictions.push(Prediction { row, class: None, fraction: None, target: Some(model.regress(v)?) });
                }
            }
            cv
        }
        other => return Err(usage(format!("task must be classify or regress, got `{other}`"))),
    };
    write_json(&ctx.path("cv.json"), &cv)?;
    if query.is_some() {
        write_json(&ctx.path("predictions.json"), &predictions)?;
    }
    println!("{:?} mean {:.4} (std {:.4}) over {} folds", cv.metric, cv.mean, cv.std, cv.folds);
    Ok(())
}

fn gbvs_params(p: &Params) -> Result<GbvsParams> {
    let variant = match p.raw("variant") {
        "plain" => Variant::Plain,
        "ga" => Variant::Ga,
        "dga" => Variant::Dga,
        other => return Err(usage(format!("variant must be plain, ga or dga, got `{other}`"))),
    };
    let steps = match p.raw("k") {
        "auto" => None,
        "converge" => Some(Steps::Converge),
        _ => Some(Steps::Fixed(p.get("k")?)),
    };
    let params = GbvsParams {
        variant,
        sigma: p.get_opt("sigma")?,
        steps,
        norm_steps: p.get("norm_steps")?,
        sparsity: p.get("sparsity")?,
        q: p.get("q")?,
        cap: p.get("cap")?,
        legacy_sigma: p.get("legacy_sigma")?,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    Ok(params)
}

fn pixel_gaze(log: &GazeLog, p: &Params) -> Result<Vec<[f64; 2]>> {
    let t0: f64 = p.get_opt("t_start")?.unwrap_or(f64::NEG_INFINITY);
    let t1: f64 = p.get_opt("t_end")?.unwrap_or(f64::INFINITY);
    let pts: Vec<[f64; 2]> = log
        .samples
        .iter()
        .filter(|s| s.t >= t0 && s.t <= t1)
        .filter_map(|s| match s.pos {
            GazePos::Pixel(xy) => Some(xy),
            GazePos::World(_) => None,
        })
        .collect();
    if pts.is_empty() {
        bail!("no pixel gaze samples in the selected time range");
    }
    Ok(pts)
}

fn saliency_cmd(ctx: &mut Ctx, a: &SaliencyArgs, with_roi: bool) -> Result<()> {
    let p = ctx.params.clone();
    let params = gbvs_params(&p)?;
    let image = imageio::read_rgb(&ctx.input("image", &a.image))?;
    let gaze = match (&a.gaze, params.variant) {
        (Some(path), _) => pixel_gaze(&ingest::load_gaze_log(&ctx.input("gaze", path))?, &p)?,
        (None, Variant::Plain) => Vec::new(),
        (None, _) => return Err(usage("--gaze is required for the ga and dga variants")),
    };
    let field = saliency(&image, &gaze, &params)?;
    field.write_png(&ctx.path("saliency.png"))?;
    if !with_roi {
        field.write_bin(&ctx.path("saliency.bin"))?;
        field.write_overlay(&ctx.path("overlay.png"), &image)?;
        write_json(
            &ctx.path("saliency.json"),
            &serde_json::json!({
                "map_width": field.map_width,
                "map_height": field.map_height,
                "image_width": field.image_width,
                "image_height": field.image_height,
                "argmax": argmax_pixel(&field),
            }),
        )?;
        return Ok(());
    }
    let roi = extract_roi(&field, RoiOptions { largest_component: p.get("largest_component")? })?;
    roi.mask.write_png(&ctx.path("mask.png"))?;
    write_json(
        &ctx.path("roi.json"),
        &serde_json::json!({ "bbox": roi.bbox, "threshold": roi.mask.threshold, "mask_pixels": roi.mask.count() }),
    )?;
    println!("roi {} {} {} {}", roi.bbox.x1, roi.bbox.y1, roi.bbox.x2, roi.bbox.y2);
    Ok(())
}

fn argmax_pixel(field: &SaliencyField) -> [usize; 2] {
    let up = field.upsample();
    let mut best = 0;
    for (i, v) in up.iter().enumerate() {
        if *v > up[best] {
            best = i;
        }
    }
    [best % field.image_width, best / field.image_width]
}

fn parse_box(s: &str) -> Result<BBox2D> {
    let [x1, y1, x2, y2] = parse_fixed::<4>(s)?;
    BBox2D::new(x1, y1, x2, y2).map_err(|e| usage(e.to_string()))
}

fn distill_cmd(ctx: &mut Ctx, a: &DistillArgs) -> Result<()> {
    let p = ctx.params.clone();
    let proposals = ingest::load_proposals(&ctx.input("proposals", &a.proposals))?;
    let gaze: Vec<[f64; 2]> = a.gaze.iter().map(|g| parse_fixed::<2>(g)).collect::<Result<_, _>>()?;
    ctx.note_input("gaze", a.gaze.join(";"));
    let d = distill_multi(&proposals.boxes, &gaze);
    ingest::save_proposals(&ctx.path("distilled.txt"), &ProposalList { boxes: d.boxes.clone() })?;
    match &a.gt {
        Some(gt) => {
            ctx.note_input("gt", gt);
            let r = distill_report(&proposals.boxes, &gaze, &parse_box(gt)?, &p.get_list("taus")?);
            write_json(&ctx.path("distill.json"), &r)?;
        }
        None => write_json(&ctx.path("distill.json"), &d)?,
    }
    println!("{} of {} proposals kept", d.indices.len(), proposals.len());
    Ok(())
}

fn seg_params(p: &Params, seed: u64) -> Result<SegParams> {
    let mode = match p.raw("mode") {
        "nearest" => SelectMode::Nearest,
        "radius" => SelectMode::Radius,
        other => return Err(usage(format!("mode must be nearest or radius, got `{other}`"))),
    };
    let params = SegParams {
        z_min: p.get("z_min")?,
        z_max: p.get("z_max")?,
        leaf: p.get("leaf")?,
        ransac: RansacParams {
            expected_normal: parse_fixed::<3>(p.raw("normal"))?,
            max_deviation_deg: p.get("max_deviation_deg")?,
            inlier_distance: p.get("inlier_distance")?,
            iterations: p.get("iterations")?,
            seed,
        },
        cluster_tolerance: p.get("cluster_tolerance")?,
        min_cluster_size: p.get("min_cluster_size")?,
        mode,
        gaze_radius: p.get("gaze_radius")?,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    Ok(params)
}

fn segment(ctx: &mut Ctx, a: &SegmentArgs) -> Result<()> {
    let params = seg_params(&ctx.params, ctx.seed)?;
    let cloud = ingest::load_xyz(&ctx.input("cloud", &a.cloud), "world")?;
    let gaze = parse_fixed::<3>(&a.gaze)?;
    ctx.note_input("gaze", &a.gaze);
    let seg = segment_by_gaze(&cloud, gaze, &params)?;
    let object = PointCloud::new(seg.object_indices.iter().map(|&i| cloud.points[i]).collect(), "world")?;
    ingest::save_xyz(&ctx.path("object.xyz"), &object)?;
    write_json(&ctx.path("segmentation.json"), &seg)?;
    println!("{} object points from {} clusters", seg.object_indices.len(), seg.clusters);
    Ok(())
}

#[derive(Serialize)]
struct ViewOutcome {
    index: usize,
    roi: Option<BBox2D>,
    in_frame: usize,
    error: Option<String>,
}

fn camera(p: &Params) -> Result<PinholeCamera> {
    PinholeCamera::new(p.get("fx")?, p.get("fy")?, p.get("cx")?, p.get("cy")?, p.get("width")?, p.get("height")?)
        .map_err(|e| usage(e.to_string()))
}

/// Labels views around `object` and writes the OMD tree plus `views.json`
/// under `dir`.
fn label_object(dir: &Path, object: &PointCloud, cam: &PinholeCamera, class: &str, waypoints: usize, min_dist: f64, min_projected: usize) -> Result<usize> {
    let bbox = BBox3D::from_points(&object.points, 1e-3, "world").ok_or_else(|| anyhow!("object cloud is empty"))?;
    let path = circular_path(&bbox, waypoints, min_dist)?;
    let results = label_run_cloud(object, &path, cam, min_projected);
    let mut ok: Vec<LabeledView> = Vec::new();
    let mut outcomes = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => {
                outcomes.push(ViewOutcome { index, roi: Some(v.roi), in_frame: v.in_frame, error: None });
                ok.push(v);
            }
            Err(e) => outcomes.push(ViewOutcome { index, roi: None, in_frame: 0, error: Some(e.to_string()) }),
        }
    }
    write_omd(&dir.join("omd").join(class), class, cam, &path, &ok, None)?;
    write_json(&dir.join("views.json"), &outcomes)?;
    Ok(ok.len())
}

fn label(ctx: &mut Ctx, a: &LabelArgs) -> Result<()> {
    let p = ctx.params.clone();
    let object = ingest::load_xyz(&ctx.input("cloud", &a.cloud), "world")?;
    let cam = camera(&p)?;
    let n = label_object(&ctx.out, &object, &cam, p.raw("class"), p.get("waypoints")?, p.get("min_dist")?, p.get("min_projected")?)?;
    println!("{n} views labeled");
    Ok(())
}

fn eval_cmd(ctx: &mut Ctx, a: &EvalArgs) -> Result<()> {
    let options = ReportOptions { include_empty_classes: ctx.params.get("include_empty")? };
    let ds = CocoDataset::load(&ctx.input("gt", &a.gt))?;
    let dets = eval::load_detections(&ctx.input("pred", &a.pred))?;
    let r = eval::report_coco(&ds, &dets, options)?;
    r.write(&ctx.out)?;
    println!("mAP50 {:.4}  mAP75 {:.4}  mAP {:.4}  mAR100 {:.4}", r.map50, r.map75, r.map, r.mar100);
    Ok(())
}

/// Mean saliency inside a box of the upsampled field.
fn box_confidence(field: &SaliencyField, b: &BBox2D) -> f64 {
    let up = field.upsample();
    let (x1, y1) = (b.x1.max(0.0) as usize, b.y1.max(0.0) as usize);
    let x2 = (b.x2 as usize).min(field.image_width - 1);
    let y2 = (b.y2 as usize).min(field.image_height - 1);
    let mut sum = 0.0;
    for y in y1..=y2 {
        for x in x1..=x2 {
            sum += up[y * field.image_width + x];
        }
    }
    (sum / ((x2 - x1 + 1) * (y2 - y1 + 1)) as f64).clamp(0.0, 1.0)
}

fn demo(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let seed = ctx.seed;
    let params = gbvs_params(&p)?;
    let frames: u64 = p.get("frames")?;
    let decoy: bool = p.get("decoy")?;
    let gaze_sigma: f64 = p.get("gaze_sigma")?;
    let gaze_count: usize = p.get("gaze_count")?;

    // Saliency labeling of rendered frames, scored as detections.
    let results: Vec<_> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let f = synth::gaze_frame(seed.wrapping_add(i), decoy, gaze_sigma, gaze_count);
            let field = saliency(&f.image, &f.gaze, &params)?;
            let roi = extract_roi(&field, RoiOptions::default()).ok();
            anyhow::Ok((f, field, roi))
        })
        .collect::<Result<_>>()?;
    let mut ds = CocoDataset {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: vec![CocoCategory { id: 1, name: "object".into() }],
    };
    let mut dets = Vec::new();
    for (i, (f, field, roi)) in results.iter().enumerate() {
        let id = i as u64 + 1;
        let stem = format!("frames/{i:04}");
        fs::create_dir_all(ctx.path("frames"))?;
        imageio::write_rgb(&ctx.path(&format!("{stem}.png")), &f.image)?;
        field.write_png(&ctx.path(&format!("{stem}_saliency.png")))?;
        let samples = f
            .gaze
            .iter()
            .enumerate()
            .map(|(j, g)| GazeSample::new(4.0 * j as f64, GazePos::Pixel(*g), "frame"))
            .collect::<Result<Vec<_>, _>>()?;
        let log = GazeLog::new(samples, [f.image.width() as f64, f.image.height() as f64, ingest::DEFAULT_MAX_DEPTH_M])?;
        ingest::save_gaze_log(&ctx.path(&format!("{stem}_gaze.csv")), &log)?;
        ds.images.push(CocoImage {
            id,
            file_name: Some(format!("{stem}.png")),
            width: Some(f.image.width() as u32),
            height: Some(f.image.height() as u32),
        });
        ds.annotations.push(CocoAnnotation { id, image_id: id, category_id: 1, bbox: eval::to_xywh(&f.target), iscrowd: 0 });
        if let Some(r) = roi {
            dets.push(Detection::new(id, 1, r.bbox, box_confidence(field, &r.bbox))?);
        }
    }
    write_json(&ctx.path("eval/gt.json"), &ds)?;
    eval::save_detections(&ctx.path("eval/detections.json"), &dets)?;
    let metrics = eval::report_coco(&ds, &dets, ReportOptions::default())?;
    metrics.write(&ctx.path("eval"))?;

    // Gaze-selected segmentation of a tabletop scene.
    let scene = synth::tabletop_scene(seed);
    let seg_p = SegParams {
        leaf: 0.01,
        cluster_tolerance: 0.025,
        min_cluster_size: 20,
        ransac: RansacParams { seed, ..RansacParams::default() },
        ..SegParams::default()
    };
    let seg = segment_by_gaze(&scene.cloud, scene.gaze, &seg_p)?;
    let object = PointCloud::new(seg.object_indices.iter().map(|&i| scene.cloud.points[i]).collect(), "world")?;
    fs::create_dir_all(ctx.path("segment"))?;
    ingest::save_xyz(&ctx.path("segment/object.xyz"), &object)?;
    write_json(&ctx.path("segment/segmentation.json"), &seg)?;
    let gazed = scene.blobs[scene.gazed].clone();
    let recovered = seg.object_indices.iter().filter(|i| gazed.contains(i)).count();

    // Views around the segmented object.
    let cam = PinholeCamera::new(120.0, 120.0, 80.0, 60.0, 160, 120)?;
    let views = label_object(&ctx.path("label"), &object, &cam, "object", p.get("waypoints")?, 0.5, 10)?;

    let summary = serde_json::json!({
        "frames": frames,
        "detections": dets.len(),
        "map50": metrics.map50,
        "map75": metrics.map75,
        "map": metrics.map,
        "mar100": metrics.mar100,
        "gazed_blob_points": gazed.len(),
        "gazed_blob_recovered": recovered,
        "object_points": seg.object_indices.len(),
        "labeled_views": views,
    });
    write_json(&ctx.path("summary.json"), &summary)?;
    println!("mAP50 {:.4}  mAP {:.4}  segmented {recovered}/{}  views {views}", metrics.map50, metrics.map, gazed.len());
    Ok(())
}
