//! Frame / person data model and the JSON annotation format.
//!
//! On disk a dataset looks like
//!
//! ```json
//! {
//!   "schema": "jrdb17",
//!   "pano": {"width": 3760, "height": 480},
//!   "frames": [
//!     {"frame_id": "000001", "persons": [
//!       {"id": "7", "box": [10, 20, 60, 140], "score": 0.9, "pose": [[x, y, v], ...]}
//!     ]}
//!   ]
//! }
//! ```
//!
//! `id`, `box`, `score` and `pose` are each optional, but a person needs a box
//! or a pose, and predictions need a score. An optional `meta` object of
//! string values records how a file was produced (shift, seed, margin).
//!
//! [`to_canonical_json`] sorts frames by id, writes fields in a fixed order
//! and prints floats with 17 significant digits, so equal datasets serialize
//! to equal bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{enclosing_box, BoundingBox, PanoramaSpec};
use crate::schema::KeypointSchema;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema mismatch: expected {expected}, file declares {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid panorama size {width}x{height}")]
    InvalidPanorama { width: u32, height: u32 },
    #[error("duplicate frame id {0:?}")]
    DuplicateFrame(String),
    #[error("frame {frame_id:?} person {index}: {reason}")]
    InvalidPerson {
        frame_id: String,
        index: usize,
        reason: PersonIssue,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PersonIssue {
    #[error("pose has {found} keypoints, schema expects {expected}")]
    KeypointCount { expected: usize, found: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("visibility {0} not in {{0, 1, 2}}")]
    Visibility(f64),
    #[error("invalid box: {0}")]
    Box(String),
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("person has neither box nor pose")]
    Empty,
    #[error("prediction without score")]
    MissingScore,
}

/// Keypoint label state: 0 = not labeled, 1 = labeled but not visible,
/// 2 = labeled and visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Visibility {
    NotLabeled = 0,
    Invisible = 1,
    Visible = 2,
}

impl Visibility {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::NotLabeled),
            1 => Some(Self::Invisible),
            2 => Some(Self::Visible),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visibility: Visibility) -> Self {
        Self { x, y, visibility }
    }

    pub fn is_labeled(&self) -> bool {
        self.visibility > Visibility::NotLabeled
    }
}

/// Ordered keypoints of one person in some schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose {
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(keypoints: Vec<Keypoint>) -> Self {
        Self { keypoints }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            keypoints: self
                .keypoints
                .iter()
                .map(|k| Keypoint { x: k.x + dx, y: k.y + dy, ..*k })
                .collect(),
        }
    }

    pub fn num_labeled(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_labeled()).count()
    }
}

/// One annotated or detected person. The box score mirrors `score` (1 when absent).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Person {
    pub id: Option<String>,
    pub bbox: Option<BoundingBox>,
    pub pose: Option<Pose>,
    pub score: Option<f64>,
}

impl Person {
    /// The explicit box, or the tight box over labeled keypoints.
    pub fn effective_box(&self) -> Option<BoundingBox> {
        self.bbox.or_else(|| self.pose.as_ref().and_then(enclosing_box))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotations {
    pub frame_id: String,
    pub persons: Vec<Person>,
}

/// A validated collection of frames, always held sorted by frame id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: String,
    pano: PanoramaSpec,
    meta: BTreeMap<String, String>,
    frames: Vec<FrameAnnotations>,
}

impl Dataset {
    /// Validates and canonicalizes (frames sorted by id). `require_scores`
    /// enforces the prediction-file rule that every person carries a score.
    pub fn new(
        schema: &KeypointSchema,
        pano: PanoramaSpec,
        mut frames: Vec<FrameAnnotations>,
        require_scores: bool,
    ) -> Result<Self, DataError> {
        if pano.width == 0 || pano.height == 0 {
            return Err(DataError::InvalidPanorama {
                width: pano.width,
                height: pano.height,
            });
        }
        let mut seen = HashSet::new();
        for frame in &frames {
            if !seen.insert(frame.frame_id.as_str()) {
                return Err(DataError::DuplicateFrame(frame.frame_id.clone()));
            }
            for (index, person) in frame.persons.iter().enumerate() {
                validate_person(person, schema.len(), require_scores).map_err(|reason| {
                    DataError::InvalidPerson {
                        frame_id: frame.frame_id.clone(),
                        index,
                        reason,
                    }
                })?;
            }
        }
        frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        Ok(Self {
            schema: schema.id().to_string(),
            pano,
            meta: BTreeMap::new(),
            frames,
        })
    }

    pub fn schema_id(&self) -> &str {
        &self.schema
    }

    pub fn pano(&self) -> PanoramaSpec {
        self.pano
    }

    pub fn frames(&self) -> &[FrameAnnotations] {
        &self.frames
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameAnnotations> {
        self.frames
            .binary_search_by(|f| f.frame_id.as_str().cmp(frame_id))
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn with_meta_map(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta.extend(meta);
        self
    }

    pub fn into_frames(self) -> Vec<FrameAnnotations> {
        self.frames
    }

    pub fn num_persons(&self) -> usize {
        self.frames.iter().map(|f| f.persons.len()).sum()
    }
}

fn validate_person(p: &Person, k: usize, require_score: bool) -> Result<(), PersonIssue> {
    if p.bbox.is_none() && p.pose.is_none() {
        return Err(PersonIssue::Empty);
    }
    match p.score {
        Some(s) if !(0.0..=1.0).contains(&s) => return Err(PersonIssue::Score(s)),
        None if require_score => return Err(PersonIssue::MissingScore),
        _ => {}
    }
    if let Some(b) = &p.bbox {
        b.validate().map_err(|e| PersonIssue::Box(e.to_string()))?;
    }
    if let Some(pose) = &p.pose {
        if pose.len() != k {
            return Err(PersonIssue::KeypointCount {
                expected: k,
                found: pose.len(),
            });
        }
        if pose.keypoints.iter().any(|kp| !kp.x.is_finite() || !kp.y.is_finite()) {
            return Err(PersonIssue::NonFinite);
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    schema: String,
    pano: PanoramaSpec,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    frame_id: String,
    #[serde(default)]
    persons: Vec<RawPerson>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Int(i64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerson {
    id: Option<RawId>,
    #[serde(rename = "box")]
    bbox: Option<[f64; 4]>,
    score: Option<f64>,
    pose: Option<Vec<[f64; 3]>>,
}

fn person_from_raw(raw: RawPerson) -> Result<Person, PersonIssue> {
    let pose = match raw.pose {
        None => None,
        Some(points) => {
            let keypoints = points
                .into_iter()
                .map(|[x, y, v]| {
                    let vis = if v.fract() == 0.0 && (0.0..=2.0).contains(&v) {
                        Visibility::from_code(v as u8)
                    } else {
                        None
                    };
                    vis.map(|visibility| Keypoint { x, y, visibility })
                        .ok_or(PersonIssue::Visibility(v))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(Pose { keypoints })
        }
    };
    let bbox = raw.bbox.map(|[x1, y1, x2, y2]| BoundingBox {
        x1,
        y1,
        x2,
        y2,
        score: raw.score.unwrap_or(1.0),
    });
    Ok(Person {
        id: raw.id.map(|id| match id {
            RawId::Text(s) => s,
            RawId::Int(i) => i.to_string(),
        }),
        bbox,
        pose,
        score: raw.score,
    })
}

fn parse_dataset(
    text: &str,
    schema: &KeypointSchema,
    require_scores: bool,
) -> Result<Dataset, DataError> {
    let raw: RawDataset =
        serde_json::from_str(text).map_err(|e| DataError::Parse(e.to_string()))?;
    if raw.schema != schema.id() {
        return Err(DataError::SchemaMismatch {
            expected: schema.id().to_string(),
            found: raw.schema,
        });
    }
    let mut frames = Vec::with_capacity(raw.frames.len());
    for rf in raw.frames {
        let mut persons = Vec::with_capacity(rf.persons.len());
        for (index, rp) in rf.persons.into_iter().enumerate() {
            let person = person_from_raw(rp).map_err(|reason| DataError::InvalidPerson {
                frame_id: rf.frame_id.clone(),
                index,
                reason,
            })?;
            persons.push(person);
        }
        frames.push(FrameAnnotations {
            frame_id: rf.frame_id,
            persons,
        });
    }
    Ok(Dataset::new(schema, raw.pano, frames, require_scores)?.with_meta_map(raw.meta))
}

pub fn parse_ground_truth(text: &str, schema: &KeypointSchema) -> Result<Dataset, DataError> {
    parse_dataset(text, schema, false)
}

pub fn parse_predictions(text: &str, schema: &KeypointSchema) -> Result<Dataset, DataError> {
    parse_dataset(text, schema, true)
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_ground_truth(path: impl AsRef<Path>, schema: &KeypointSchema) -> Result<Dataset, DataError> {
    parse_ground_truth(&read(path.as_ref())?, schema)
}

pub fn load_predictions(path: impl AsRef<Path>, schema: &KeypointSchema) -> Result<Dataset, DataError> {
    parse_predictions(&read(path.as_ref())?, schema)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, to_canonical_json(ds)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Formats a float like C's `%.17g`: shortest of fixed or exponential
/// notation with 17 significant digits and trailing zeros stripped. Always a
/// valid JSON number, and parses back to the identical `f64`.
pub fn format_g17(x: f64) -> String {
    assert!(x.is_finite(), "cannot format non-finite value {x}");
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');

    let mut out = String::from(sign);
    if (-5..17).contains(&exp) {
        if exp < 0 {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(digits);
        } else {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
            } else {
                out.push_str(&digits[..int_len]);
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let _ = write!(out, "e{exp}");
    }
    out
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn write_person(out: &mut String, p: &Person) {
    let mut fields = Vec::with_capacity(4);
    if let Some(id) = &p.id {
        fields.push(format!("\"id\": {}", json_str(id)));
    }
    if let Some(b) = &p.bbox {
        fields.push(format!(
            "\"box\": [{}, {}, {}, {}]",
            format_g17(b.x1),
            format_g17(b.y1),
            format_g17(b.x2),
            format_g17(b.y2)
        ));
    }
    if let Some(s) = p.score {
        fields.push(format!("\"score\": {}", format_g17(s)));
    }
    if let Some(pose) = &p.pose {
        let pts: Vec<String> = pose
            .keypoints
            .iter()
            .map(|k| format!("[{}, {}, {}]", format_g17(k.x), format_g17(k.y), k.visibility.code()))
            .collect();
        fields.push(format!("\"pose\": [{}]", pts.join(", ")));
    }
    out.push('{');
    out.push_str(&fields.join(", "));
    out.push('}');
}

/// Canonical serialization; see the module docs.
pub fn to_canonical_json(ds: &Dataset) -> String {
    let mut frames: Vec<&FrameAnnotations> = ds.frames.iter().collect();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));

    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"schema\": {},", json_str(&ds.schema));
    let _ = writeln!(
        out,
        "  \"pano\": {{\"width\": {}, \"height\": {}}},",
        ds.pano.width, ds.pano.height
    );
    if !ds.meta.is_empty() {
        let entries: Vec<String> = ds
            .meta
            .iter()
            .map(|(k, v)| format!("{}: {}", json_str(k), json_str(v)))
            .collect();
        let _ = writeln!(out, "  \"meta\": {{{}}},", entries.join(", "));
    }
    if frames.is_empty() {
        out.push_str("  \"frames\": []\n}\n");
        return out;
    }
    out.push_str("  \"frames\": [\n");
    for (fi, frame) in frames.iter().enumerate() {
        let _ = write!(out, "    {{\"frame_id\": {}, \"persons\": [", json_str(&frame.frame_id));
        for (pi, person) in frame.persons.iter().enumerate() {
            out.push_str(if pi == 0 { "\n      " } else { ",\n      " });
            write_person(&mut out, person);
        }
        if !frame.persons.is_empty() {
            out.push_str("\n    ");
        }
        out.push_str("]}");
        out.push_str(if fi + 1 < frames.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::builtin_schemas;
    use proptest::prelude::*;

    fn jrdb() -> KeypointSchema {
        builtin_schemas().1
    }

    fn pose_json(k: usize) -> String {
        let pts: Vec<String> = (0..k).map(|i| format!("[{}, {}, 2]", 10 + i, 20 + i)).collect();
        format!("[{}]", pts.join(", "))
    }

    fn one_frame(person: &str) -> String {
        format!(
            r#"{{"schema": "jrdb17", "pano": {{"width": 3760, "height": 480}},
               "frames": [{{"frame_id": "a", "persons": [{person}]}}]}}"#
        )
    }

    #[test]
    fn minimal_file_loads() {
        let text = one_frame(&format!(r#"{{"id": 3, "pose": {}}}"#, pose_json(17)));
        let ds = parse_ground_truth(&text, &jrdb()).unwrap();
        assert_eq!(ds.frames().len(), 1);
        let p = &ds.frames()[0].persons[0];
        assert_eq!(p.id.as_deref(), Some("3"));
        assert_eq!(p.pose.as_ref().unwrap().len(), 17);
    }

    #[test]
    fn short_pose_names_the_person() {
        let text = one_frame(&format!(r#"{{"box": [0, 0, 5, 5]}}, {{"pose": {}}}"#, pose_json(16)));
        let err = parse_ground_truth(&text, &jrdb()).unwrap_err();
        match err {
            DataError::InvalidPerson { frame_id, index, reason } => {
                assert_eq!(frame_id, "a");
                assert_eq!(index, 1);
                assert_eq!(reason, PersonIssue::KeypointCount { expected: 17, found: 16 });
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_frame_rejected() {
        let text = r#"{"schema": "jrdb17", "pano": {"width": 10, "height": 10},
            "frames": [{"frame_id": "a", "persons": []}, {"frame_id": "a", "persons": []}]}"#;
        assert!(matches!(
            parse_ground_truth(text, &jrdb()),
            Err(DataError::DuplicateFrame(id)) if id == "a"
        ));
    }

    #[test]
    fn prediction_requires_score() {
        let text = one_frame(r#"{"box": [0, 0, 5, 5]}"#);
        let err = parse_predictions(&text, &jrdb()).unwrap_err();
        assert!(err.to_string().contains("prediction without score"), "{err}");
        assert!(parse_ground_truth(&text, &jrdb()).is_ok());
    }

    #[test]
    fn empty_frames_is_valid() {
        let text = r#"{"schema": "jrdb17", "pano": {"width": 10, "height": 10}, "frames": []}"#;
        let ds = parse_predictions(text, &jrdb()).unwrap();
        assert!(ds.frames().is_empty());
        let canon = to_canonical_json(&ds);
        assert_eq!(parse_predictions(&canon, &jrdb()).unwrap(), ds);
    }

    #[test]
    fn other_validation_errors() {
        let cases = [
            (r#"{"box": [5, 0, 5, 5]}"#, "invalid box"),
            (r#"{"box": [0, 0, 5, 5], "score": 1.5}"#, "score"),
            (r#"{"id": "x"}"#, "neither box nor pose"),
            (r#"{"pose": [[0, 0, 3]]}"#, "visibility"),
        ];
        for (person, needle) in cases {
            let err = parse_ground_truth(&one_frame(person), &jrdb()).unwrap_err();
            assert!(err.to_string().contains(needle), "{person}: {err}");
        }
        let wrong_schema = one_frame(r#"{"box": [0, 0, 5, 5]}"#).replace("jrdb17", "coco17");
        assert!(matches!(
            parse_ground_truth(&wrong_schema, &jrdb()),
            Err(DataError::SchemaMismatch { .. })
        ));
        assert!(matches!(parse_ground_truth("{", &jrdb()), Err(DataError::Parse(_))));
    }

    #[test]
    fn canonical_form_is_permutation_invariant() {
        let schema = jrdb();
        let pano = PanoramaSpec::new(100, 50).unwrap();
        let frame = |id: &str, x: f64| FrameAnnotations {
            frame_id: id.into(),
            persons: vec![Person {
                bbox: Some(BoundingBox::new(x, 1.0, x + 2.5, 4.0, 1.0).unwrap()),
                ..Default::default()
            }],
        };
        let a = Dataset::new(&schema, pano, vec![frame("b", 0.1), frame("a", 7.0)], false).unwrap();
        let b = Dataset::new(&schema, pano, vec![frame("a", 7.0), frame("b", 0.1)], false).unwrap();
        assert_eq!(to_canonical_json(&a), to_canonical_json(&b));
        assert_eq!(a.frames()[0].frame_id, "a");
        assert!(a.frame("b").is_some());
        assert!(a.frame("c").is_none());
    }

    #[test]
    fn save_load_canonical_fixed_point() {
        let text = one_frame(&format!(
            r#"{{"pose": {}, "score": 0.30000000000000004, "box": [1e-7, 2, 3.25, 4], "id": "p"}}"#,
            pose_json(17)
        ));
        let ds = parse_predictions(&text, &jrdb()).unwrap();
        let canon = to_canonical_json(&ds);
        let again = parse_predictions(&canon, &jrdb()).unwrap();
        assert_eq!(again, ds);
        assert_eq!(to_canonical_json(&again), canon);
        assert!(canon.contains(r#"{"id": "p", "box": [9.9999999999999995e-8, 2, 3.25, 4], "score": 0.30000000000000004, "pose""#), "{canon}");
    }

    #[test]
    fn g17_examples() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(3760.0), "3760");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(1e20), "1e20");
        assert_eq!(format_g17(1.5e-7), "1.4999999999999999e-7");
        assert_eq!(format_g17(0.0001), "0.0001");
        assert_eq!(format_g17(-0.0), "-0.0");
    }

    proptest! {
        #[test]
        fn g17_round_trips_bits(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = format_g17(x);
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits(), "{}", s);
        }
    }
}
