//! `panopose` command-line front end.
//!
//! Each subcommand is one pipeline stage: head-weight transfer, box
//! derivation, seam shift augmentation, NMS, heatmap decoding and evaluation.
//! Exit codes: 0 success, 1 validation or I/O failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panopose::dataio::{self, Dataset, FrameAnnotations, Person};
use panopose::decode::{decode_batch, HeatmapStack};
use panopose::geometry::{
    bbox_from_pose, crop_transform, nms_indices, shift_frame, AffineTransform, PanoramaSpec,
    DEFAULT_MARGIN, DEFAULT_NMS_IOU, DEFAULT_PADDING, INPUT_HEIGHT, INPUT_WIDTH,
};
use panopose::metrics::{evaluate, EvalConfig, EvalReport, OksParams, OspaConfig};
use panopose::schema::{
    builtin_schema, builtin_schemas, default_mapping, verbatim_table_mapping, MappingFile,
    COCO17_ID, JRDB17_ID,
};
use panopose::weights::{load_tensor_map, remap_head_weights, save_tensor_map};
use panopose::{Execution, KeypointSchema};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "panopose", version, about = "Pose pipeline utilities for stitched panoramas")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-map the final convolution of a pose head to a new keypoint schema.
    RemapWeights(RemapArgs),
    /// Replace every person's box with one grown around its keypoints.
    BoxesFromPoses(BoxesArgs),
    /// Cyclically shift a dataset horizontally, dropping persons on the seam.
    Shift(ShiftArgs),
    /// Greedy non-maximum suppression per frame.
    Nms(NmsArgs),
    /// Decode heatmaps into panorama keypoints.
    Decode(DecodeArgs),
    /// Score predictions against ground truth (OSPA over IoU, OKS AP).
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArg {
    /// Keypoint schema of the frame files.
    #[arg(long, default_value = JRDB17_ID, value_parser = [COCO17_ID, JRDB17_ID])]
    pub schema: String,
}

#[derive(Debug, Args)]
pub struct RemapArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mapping file (names per target keypoint). Defaults to the built-in
    /// coco17 -> jrdb17 mapping.
    #[arg(long, conflicts_with = "verbatim_table1")]
    pub mapping: Option<PathBuf>,
    /// Use the uncorrected table, where "left hand" appears twice.
    #[arg(long = "verbatim-table1")]
    pub verbatim_table1: bool,
    #[arg(long)]
    pub weight_name: String,
    #[arg(long)]
    pub bias_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct BoxesArgs {
    #[arg(long, visible_alias = "gt")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of the keypoint extent added on each side.
    #[arg(long, default_value_t = DEFAULT_MARGIN, value_parser = non_negative)]
    pub margin: f64,
    #[arg(long, requires = "pano_height", value_parser = positive_u32)]
    pub pano_width: Option<u32>,
    #[arg(long, requires = "pano_width", value_parser = positive_u32)]
    pub pano_height: Option<u32>,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Shift in pixels (reduced modulo the panorama width).
    #[arg(long, required_unless_present = "seed", conflicts_with = "seed")]
    pub shift: Option<u32>,
    /// Draw the shift uniformly from [0, width) with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU, value_parser = unit_open_closed)]
    pub nms_iou: f64,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Tensor container with one [K, h, w] F32 tensor per detection, named
    /// "<frame_id>/<person_id>" (person index when the id is absent).
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Prediction file with the detection boxes.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PADDING, value_parser = positive)]
    pub padding: f64,
    /// Input pixels per heatmap cell; inferred from the heatmap size if omitted.
    #[arg(long, value_parser = positive)]
    pub stride: Option<f64>,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV table path, one row per frame.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, value_parser = unit_closed)]
    pub oks_threshold: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub ospa_cutoff: f64,
    #[arg(long, default_value_t = 1.0, value_parser = at_least_one)]
    pub ospa_order: f64,
    /// Comma-separated per-keypoint OKS sigmas, overriding the defaults.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub schema: SchemaArg,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be >= 0".into()) })
}

fn positive(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err("must be > 0".into()) })
}

fn at_least_one(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v >= 1.0 { Ok(v) } else { Err("must be >= 1".into()) })
}

fn unit_closed(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if (0.0..=1.0).contains(&v) { Ok(v) } else { Err("must be in [0, 1]".into()) })
}

fn unit_open_closed(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v > 0.0 && v <= 1.0 { Ok(v) } else { Err("must be in (0, 1]".into()) })
}

fn positive_u32(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(0) => Err("must be > 0".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Runtime failure, reported with exit code 1.
#[derive(Debug)]
pub struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::RemapWeights(a) => remap_weights(&a),
        Command::BoxesFromPoses(a) => boxes_from_poses(&a),
        Command::Shift(a) => shift(&a),
        Command::Nms(a) => nms(&a),
        Command::Decode(a) => decode(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn with_context<T, E: Display>(r: Result<T, E>, path: &Path) -> Result<T, Failure> {
    r.map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn remap_weights(a: &RemapArgs) -> Outcome {
    let mapping = match &a.mapping {
        Some(path) => with_context(MappingFile::load_builtin(path), path)?.0,
        None if a.verbatim_table1 => verbatim_table_mapping(),
        None => default_mapping(),
    };
    let map = load_tensor_map(&a.src)?;
    let out = remap_head_weights(&map, &a.weight_name, a.bias_name.as_deref(), &mapping)?;
    save_tensor_map(&out, &a.out)?;
    eprintln!(
        "remapped {} ({} -> {} keypoints)",
        a.weight_name,
        map.get(&a.weight_name).map_or(0, |t| t.shape()[0]),
        mapping.target_len()
    );
    Ok(())
}

fn schema_of(arg: &SchemaArg) -> Result<KeypointSchema, Failure> {
    Ok(builtin_schema(&arg.schema)?)
}

fn rebuild(
    schema: &KeypointSchema,
    pano: PanoramaSpec,
    frames: Vec<FrameAnnotations>,
    meta: BTreeMap<String, String>,
    require_scores: bool,
) -> Result<Dataset, Failure> {
    Ok(Dataset::new(schema, pano, frames, require_scores)?.with_meta_map(meta))
}

fn boxes_from_poses(a: &BoxesArgs) -> Outcome {
    let schema = schema_of(&a.schema)?;
    let ds = dataio::load_ground_truth(&a.input, &schema)?;
    let pano = match (a.pano_width, a.pano_height) {
        (Some(w), Some(h)) => PanoramaSpec::new(w, h)?,
        _ => ds.pano(),
    };
    let mut meta = ds.meta().clone();
    meta.insert("box_margin".into(), a.margin.to_string());
    let mut skipped = 0usize;
    let frames = ds
        .into_frames()
        .into_iter()
        .map(|mut f| {
            for p in &mut f.persons {
                let Some(pose) = &p.pose else { continue };
                match bbox_from_pose(pose, a.margin, pano) {
                    Ok(b) => p.bbox = Some(b.with_score(p.score.unwrap_or(1.0))),
                    Err(_) => skipped += 1,
                }
            }
            f
        })
        .collect();
    if skipped > 0 {
        eprintln!("kept existing box for {skipped} person(s) with degenerate keypoint extent");
    }
    dataio::save_dataset(&rebuild(&schema, pano, frames, meta, false)?, &a.out)?;
    Ok(())
}

fn shift(a: &ShiftArgs) -> Outcome {
    let schema = schema_of(&a.schema)?;
    let ds = dataio::load_ground_truth(&a.input, &schema)?;
    let pano = ds.pano();
    let s = match (a.shift, a.seed) {
        (Some(s), _) => s,
        (None, Some(seed)) => ChaCha8Rng::seed_from_u64(seed).random_range(0..pano.width),
        (None, None) => unreachable!("clap requires --shift or --seed"),
    };
    let s = s % pano.width;
    let before = ds.num_persons();
    let mut meta = ds.meta().clone();
    if s != 0 || a.seed.is_some() {
        meta.insert("shift".into(), s.to_string());
    }
    if let Some(seed) = a.seed {
        meta.insert("shift_seed".into(), seed.to_string());
    }
    let frames = ds.frames().iter().map(|f| shift_frame(f, s, pano)).collect();
    let out = rebuild(&schema, pano, frames, meta, false)?;
    eprintln!("shift {s}: {} of {before} persons kept", out.num_persons());
    dataio::save_dataset(&out, &a.out)?;
    Ok(())
}

fn nms_frame(frame: &FrameAnnotations, threshold: f64) -> FrameAnnotations {
    // persons without any box cannot overlap and always survive
    let (boxed, unboxed): (Vec<usize>, Vec<usize>) =
        (0..frame.persons.len()).partition(|&i| frame.persons[i].effective_box().is_some());
    let boxes: Vec<_> = boxed
        .iter()
        .map(|&i| {
            let p = &frame.persons[i];
            p.effective_box().unwrap().with_score(p.score.unwrap_or(0.0))
        })
        .collect();
    let mut keep: Vec<usize> = nms_indices(&boxes, threshold).into_iter().map(|k| boxed[k]).collect();
    keep.extend(unboxed);
    keep.sort_unstable();
    FrameAnnotations {
        frame_id: frame.frame_id.clone(),
        persons: keep.into_iter().map(|i| frame.persons[i].clone()).collect(),
    }
}

fn nms(a: &NmsArgs) -> Outcome {
    let schema = schema_of(&a.schema)?;
    let ds = dataio::load_predictions(&a.pred, &schema)?;
    let frames = execution(a.sequential).map(ds.frames(), |f| nms_frame(f, a.nms_iou));
    let meta = ds.meta().clone();
    let out = rebuild(&schema, ds.pano(), frames, meta, true)?;
    eprintln!("nms @ {}: {} of {} detections kept", a.nms_iou, out.num_persons(), ds.num_persons());
    match &a.out {
        Some(path) => dataio::save_dataset(&out, path)?,
        None => print!("{}", dataio::to_canonical_json(&out)),
    }
    Ok(())
}

fn tensor_name(frame: &FrameAnnotations, index: usize, p: &Person) -> String {
    match &p.id {
        Some(id) => format!("{}/{id}", frame.frame_id),
        None => format!("{}/{index}", frame.frame_id),
    }
}

fn infer_stride(stack_h: usize, stack_w: usize, name: &str) -> Result<f64, Failure> {
    let sx = f64::from(INPUT_WIDTH) / stack_w as f64;
    let sy = f64::from(INPUT_HEIGHT) / stack_h as f64;
    if sx != sy {
        return Err(Failure(format!(
            "{name}: heatmap {stack_h}x{stack_w} does not tile the {INPUT_WIDTH}x{INPUT_HEIGHT} input; pass --stride"
        )));
    }
    Ok(sx)
}

fn decode(a: &DecodeArgs) -> Outcome {
    let schema = schema_of(&a.schema)?;
    let dets = dataio::load_predictions(&a.detections, &schema)?;
    let maps = load_tensor_map(&a.heatmaps)?;

    let mut items: Vec<(HeatmapStack, AffineTransform)> = Vec::new();
    for frame in dets.frames() {
        for (i, p) in frame.persons.iter().enumerate() {
            let name = tensor_name(frame, i, p);
            let record = maps.get(&name).ok_or_else(|| Failure(format!("no heatmap tensor named {name:?}")))?;
            let bbox = p
                .effective_box()
                .ok_or_else(|| Failure(format!("{name}: detection has no box")))?;
            let stack = HeatmapStack::from_tensor(record, 1.0).map_err(|e| Failure(format!("{name}: {e}")))?;
            let stride = match a.stride {
                Some(s) => s,
                None => infer_stride(stack.height(), stack.width(), &name)?,
            };
            let stack = HeatmapStack::from_tensor(record, stride)?;
            if stack.num_keypoints() != schema.len() {
                return Err(Failure(format!(
                    "{name}: {} heatmaps, schema {} has {} keypoints",
                    stack.num_keypoints(),
                    schema.id(),
                    schema.len()
                )));
            }
            let crop = crop_transform(&bbox, INPUT_WIDTH, INPUT_HEIGHT, a.padding)
                .map_err(|e| Failure(format!("{name}: {e}")))?;
            items.push((stack, crop));
        }
    }

    let mut decoded = decode_batch(&items, execution(a.sequential)).into_iter();
    let mut frames = Vec::with_capacity(dets.frames().len());
    for frame in dets.frames() {
        let mut persons = Vec::with_capacity(frame.persons.len());
        for p in &frame.persons {
            let d = decoded.next().expect("one result per detection")?;
            let score = p.score.unwrap_or(1.0) * d.mean_confidence();
            persons.push(Person {
                id: p.id.clone(),
                bbox: p.bbox.map(|b| b.with_score(score)),
                pose: Some(d.pose),
                score: Some(score),
            });
        }
        frames.push(FrameAnnotations { frame_id: frame.frame_id.clone(), persons });
    }
    let mut meta = dets.meta().clone();
    meta.insert("crop_padding".into(), a.padding.to_string());
    if let Some(s) = a.stride {
        meta.insert("heatmap_stride".into(), s.to_string());
    }
    dataio::save_dataset(&rebuild(&schema, dets.pano(), frames, meta, true)?, &a.out)?;
    Ok(())
}

fn default_sigmas(schema: &KeypointSchema) -> Result<OksParams, Failure> {
    let (coco, _) = builtin_schemas();
    if schema.id() == coco.id() {
        Ok(OksParams::coco17())
    } else {
        Ok(OksParams::from_coco_mapping(&default_mapping())?)
    }
}

/// Builds the evaluation config the `eval` subcommand would use.
pub fn eval_config(a: &EvalArgs, schema: &KeypointSchema) -> Result<EvalConfig, Failure> {
    let oks = match &a.sigmas {
        Some(s) => OksParams::new(s.clone())?,
        None => default_sigmas(schema)?,
    };
    if oks.len() != schema.len() {
        return Err(Failure(format!(
            "{} sigmas given, schema {} has {} keypoints",
            oks.len(),
            schema.id(),
            schema.len()
        )));
    }
    let mut cfg = EvalConfig::new(oks);
    cfg.oks_threshold = a.oks_threshold;
    cfg.ospa = OspaConfig { order: a.ospa_order, cutoff: a.ospa_cutoff };
    cfg.execution = execution(a.sequential);
    cfg.extra = BTreeMap::from([
        ("gt".to_string(), a.gt.display().to_string()),
        ("pred".to_string(), a.pred.display().to_string()),
    ]);
    Ok(cfg)
}

fn write_table(report: &EvalReport, path: &Path) -> Outcome {
    let mut w = with_context(csv::Writer::from_path(path), path)?;
    for row in &report.per_frame {
        with_context(w.serialize(row), path)?;
    }
    with_context(w.flush(), path)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Outcome {
    let schema = schema_of(&a.schema)?;
    let gts = dataio::load_ground_truth(&a.gt, &schema)?;
    let preds = dataio::load_predictions(&a.pred, &schema)?;
    let cfg = eval_config(a, &schema)?;
    let report = evaluate(&preds, &gts, &cfg)?;
    println!("ospa_iou {:.3}", report.ospa_iou);
    println!("ap_05 {:.3}", report.ap_05);
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report)?;
        with_context(std::fs::write(path, text + "\n"), path)?;
    }
    if let Some(path) = &a.table {
        write_table(&report, path)?;
    }
    Ok(())
}
