//! Keypoint vocabularies and cross-schema counterpart tables.
//!
//! The built-in pair is COCO's 17 keypoints (source) and the 17 keypoints of
//! the JRDB-Pose annotation (target). Each target keypoint is tied to one or
//! more source keypoints; merged targets (head, neck, center hip) take the
//! mean of their counterparts.
//!
//! Indices are 0-based everywhere in the API.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Keypoint, Pose};

pub const COCO17_ID: &str = "coco17";
pub const JRDB17_ID: &str = "jrdb17";

const COCO17_NAMES: [&str; 17] = [
    "nose",
    "left eye",
    "right eye",
    "left ear",
    "right ear",
    "left shoulder",
    "right shoulder",
    "left elbow",
    "right elbow",
    "left wrist",
    "right wrist",
    "left hip",
    "right hip",
    "left knee",
    "right knee",
    "left ankle",
    "right ankle",
];

// Row 10 of the published table repeats "left hand -> left wrist"; the
// mirrored "right hand -> right wrist" is used here.
const JRDB17_TABLE: [(&str, &[&str]); 17] = [
    ("head", &["left eye", "right eye"]),
    ("right eye", &["right eye"]),
    ("left eye", &["left eye"]),
    ("right shoulder", &["right shoulder"]),
    ("neck", &["left shoulder", "right shoulder"]),
    ("left shoulder", &["left shoulder"]),
    ("right elbow", &["right elbow"]),
    ("left elbow", &["left elbow"]),
    ("center hip", &["left hip", "right hip"]),
    ("right hand", &["right wrist"]),
    ("right hip", &["right hip"]),
    ("left hip", &["left hip"]),
    ("left hand", &["left wrist"]),
    ("right knee", &["right knee"]),
    ("left knee", &["left knee"]),
    ("right foot", &["right ankle"]),
    ("left foot", &["left ankle"]),
];

/// Index of the target row that the literal table lists as a second
/// "left hand → left wrist".
pub const DUPLICATED_TABLE_ROW: usize = 9;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema must have at least one keypoint")]
    Empty,
    #[error("duplicate keypoint name {0:?}")]
    DuplicateName(String),
    #[error("unknown schema {0:?}")]
    UnknownSchema(String),
    #[error("schema {schema} has no keypoint named {name:?}")]
    UnknownKeypoint { schema: String, name: String },
    #[error("invalid mapping: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("pose has {found} keypoints, mapping expects {expected}")]
    PoseLength { expected: usize, found: usize },
    #[error("mapping file: {0}")]
    File(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointSchema {
    id: String,
    names: Vec<String>,
}

impl KeypointSchema {
    pub fn new(id: impl Into<String>, names: Vec<String>) -> Result<Self, SchemaError> {
        if names.is_empty() {
            return Err(SchemaError::Empty);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SchemaError::DuplicateName(n.clone()));
            }
        }
        Ok(Self { id: id.into(), names })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize, SchemaError> {
        self.index_of(name).ok_or_else(|| SchemaError::UnknownKeypoint {
            schema: self.id.clone(),
            name: name.to_string(),
        })
    }
}

/// Returns `(coco17, jrdb17)`.
pub fn builtin_schemas() -> (KeypointSchema, KeypointSchema) {
    let coco = KeypointSchema::new(
        COCO17_ID,
        COCO17_NAMES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("coco17 names are unique");
    let jrdb = KeypointSchema::new(
        JRDB17_ID,
        JRDB17_TABLE.iter().map(|(n, _)| n.to_string()).collect(),
    )
    .expect("jrdb17 names are unique");
    (coco, jrdb)
}

pub fn builtin_schema(id: &str) -> Result<KeypointSchema, SchemaError> {
    let (coco, jrdb) = builtin_schemas();
    match id {
        COCO17_ID => Ok(coco),
        JRDB17_ID => Ok(jrdb),
        other => Err(SchemaError::UnknownSchema(other.to_string())),
    }
}

/// For each target keypoint, the source keypoints it is built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaMapping {
    pub source_schema: String,
    pub target_schema: String,
    pub entries: Vec<Vec<usize>>,
}

impl SchemaMapping {
    /// Each target index `t` maps to source index `t`.
    pub fn identity(schema: &KeypointSchema) -> Self {
        Self {
            source_schema: schema.id().to_string(),
            target_schema: schema.id().to_string(),
            entries: (0..schema.len()).map(|i| vec![i]).collect(),
        }
    }

    pub fn target_len(&self) -> usize {
        self.entries.len()
    }

    pub fn counterparts(&self, target: usize) -> &[usize] {
        &self.entries[target]
    }

    /// Resolves a target keypoint by name.
    pub fn counterparts_of(&self, target: &KeypointSchema, name: &str) -> Option<&[usize]> {
        target.index_of(name).map(|t| self.counterparts(t))
    }
}

/// COCO → JRDB counterpart table (with the corrected right-hand row).
pub fn default_mapping() -> SchemaMapping {
    let (coco, _) = builtin_schemas();
    let entries = JRDB17_TABLE
        .iter()
        .map(|(_, srcs)| {
            srcs.iter()
                .map(|s| coco.index_of(s).expect("counterpart exists in coco17"))
                .collect()
        })
        .collect();
    SchemaMapping {
        source_schema: COCO17_ID.into(),
        target_schema: JRDB17_ID.into(),
        entries,
    }
}

/// The table exactly as printed: the right-hand row points at the left wrist.
pub fn verbatim_table_mapping() -> SchemaMapping {
    let (coco, _) = builtin_schemas();
    let mut m = default_mapping();
    m.entries[DUPLICATED_TABLE_ROW] = vec![coco.index_of("left wrist").expect("coco17 has left wrist")];
    m
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SourceSchema { expected: String, found: String },
    TargetSchema { expected: String, found: String },
    EntryCount { expected: usize, found: usize },
    EmptyCounterparts { target: usize },
    IndexOutOfRange { target: usize, index: usize, source_len: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SourceSchema { expected, found } => {
                write!(f, "source schema {found:?} does not match {expected:?}")
            }
            Self::TargetSchema { expected, found } => {
                write!(f, "target schema {found:?} does not match {expected:?}")
            }
            Self::EntryCount { expected, found } => {
                write!(f, "wrong entry count: {found} entries for {expected} target keypoints")
            }
            Self::EmptyCounterparts { target } => {
                write!(f, "empty counterpart list for target {target}")
            }
            Self::IndexOutOfRange { target, index, source_len } => write!(
                f,
                "index out of range: target {target} refers to source {index} (source has {source_len})"
            ),
        }
    }
}

/// Lists every way `mapping` disagrees with the two schemas. Empty means valid.
pub fn validate_mapping(
    mapping: &SchemaMapping,
    src: &KeypointSchema,
    dst: &KeypointSchema,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if mapping.source_schema != src.id() {
        out.push(Violation::SourceSchema {
            expected: src.id().into(),
            found: mapping.source_schema.clone(),
        });
    }
    if mapping.target_schema != dst.id() {
        out.push(Violation::TargetSchema {
            expected: dst.id().into(),
            found: mapping.target_schema.clone(),
        });
    }
    if mapping.entries.len() != dst.len() {
        out.push(Violation::EntryCount {
            expected: dst.len(),
            found: mapping.entries.len(),
        });
    }
    out.extend(index_violations(mapping, src.len()));
    out
}

/// The schema-free subset of [`validate_mapping`]: empty lists and
/// out-of-range source indices.
pub fn index_violations(mapping: &SchemaMapping, source_len: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for (target, srcs) in mapping.entries.iter().enumerate() {
        if srcs.is_empty() {
            out.push(Violation::EmptyCounterparts { target });
        }
        for &index in srcs {
            if index >= source_len {
                out.push(Violation::IndexOutOfRange { target, index, source_len });
            }
        }
    }
    out
}

/// Carries a pose from the source schema into the target schema. Merged
/// keypoints sit at the mean of their counterparts and inherit the least
/// visible counterpart's visibility.
pub fn remap_pose(pose: &Pose, mapping: &SchemaMapping, source_len: usize) -> Result<Pose, SchemaError> {
    if pose.len() != source_len {
        return Err(SchemaError::PoseLength {
            expected: source_len,
            found: pose.len(),
        });
    }
    let violations = index_violations(mapping, source_len);
    if !violations.is_empty() {
        return Err(SchemaError::Invalid(violations));
    }
    let keypoints = mapping
        .entries
        .iter()
        .map(|srcs| {
            let n = srcs.len() as f64;
            let (sx, sy) = srcs.iter().fold((0.0, 0.0), |(sx, sy), &s| {
                (sx + pose.keypoints[s].x, sy + pose.keypoints[s].y)
            });
            let visibility = srcs
                .iter()
                .map(|&s| pose.keypoints[s].visibility)
                .min()
                .expect("non-empty counterpart list");
            Keypoint { x: sx / n, y: sy / n, visibility }
        })
        .collect();
    Ok(Pose { keypoints })
}

/// On-disk mapping: names rather than indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingFile {
    pub source_schema: String,
    pub target_schema: String,
    pub entries: BTreeMap<String, Vec<String>>,
}

impl MappingFile {
    pub fn from_mapping(
        mapping: &SchemaMapping,
        src: &KeypointSchema,
        dst: &KeypointSchema,
    ) -> Result<Self, SchemaError> {
        let violations = validate_mapping(mapping, src, dst);
        if !violations.is_empty() {
            return Err(SchemaError::Invalid(violations));
        }
        let entries = mapping
            .entries
            .iter()
            .enumerate()
            .map(|(t, srcs)| {
                (
                    dst.names()[t].clone(),
                    srcs.iter().map(|&s| src.names()[s].clone()).collect(),
                )
            })
            .collect();
        Ok(Self {
            source_schema: src.id().into(),
            target_schema: dst.id().into(),
            entries,
        })
    }

    /// Resolves names against the given schemas and validates the result.
    pub fn resolve(&self, src: &KeypointSchema, dst: &KeypointSchema) -> Result<SchemaMapping, SchemaError> {
        let mut entries = vec![Vec::new(); dst.len()];
        let mut seen = vec![false; dst.len()];
        for (target, srcs) in &self.entries {
            let t = dst.require(target)?;
            seen[t] = true;
            entries[t] = srcs.iter().map(|s| src.require(s)).collect::<Result<_, _>>()?;
        }
        let mapping = SchemaMapping {
            source_schema: self.source_schema.clone(),
            target_schema: self.target_schema.clone(),
            entries,
        };
        let mut violations = validate_mapping(&mapping, src, dst);
        let present = seen.iter().filter(|s| **s).count();
        if present != dst.len() {
            violations.push(Violation::EntryCount {
                expected: dst.len(),
                found: present,
            });
        }
        if violations.is_empty() {
            Ok(mapping)
        } else {
            Err(SchemaError::Invalid(violations))
        }
    }

    /// Reads a mapping file and resolves it against built-in schemas.
    pub fn load_builtin(path: impl AsRef<Path>) -> Result<(SchemaMapping, KeypointSchema, KeypointSchema), SchemaError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| SchemaError::File(e.to_string()))?;
        let file: MappingFile = serde_json::from_str(&text).map_err(|e| SchemaError::File(e.to_string()))?;
        let src = builtin_schema(&file.source_schema)?;
        let dst = builtin_schema(&file.target_schema)?;
        let mapping = file.resolve(&src, &dst)?;
        Ok((mapping, src, dst))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }
}
