//! Sequence and manifest files, plus the synthetic motion generator.

mod synthetic;

pub use synthetic::{
    default_actions, default_benchmark, generate, reach_lift_place, toy_humanoid, wave, write_benchmark,
    SyntheticActionSpec,
    DEFAULT_BENCHMARK_SEED, TRAIN_PER_ACTION, VAL_PER_ACTION,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{Skeleton, SkeletonError, SkeletonSequence, SkeletonTopology};

#[derive(Debug, Error)]
pub enum DataError {
    /// Malformed JSON or a value of the wrong type; `context` names the file,
    /// position and field.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Skeleton(SkeletonError),
}

impl From<SkeletonError> for DataError {
    fn from(e: SkeletonError) -> Self {
        match e {
            SkeletonError::InvariantViolation(what) => DataError::InvariantViolation(what),
            other => DataError::Skeleton(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Deserializes `text`, reporting the JSON path of the first bad value.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, DataError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        DataError::Parse {
            context: format!("{origin} at line {} column {}, field `{path}`", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// On-disk form of a [`SkeletonSequence`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    action: String,
    fps: f64,
    topology: SkeletonTopology,
    frames: Vec<Skeleton>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    progress: Option<Vec<f64>>,
}

pub fn sequence_to_json(seq: &SkeletonSequence) -> String {
    let file = SequenceFile {
        action: seq.action_name.clone(),
        fps: seq.fps,
        topology: seq.topology.clone(),
        frames: seq.frames.clone(),
        phase_labels: seq.phase_labels.clone(),
        progress: seq.progress.clone(),
    };
    serde_json::to_string(&file).expect("finite sequence serializes")
}

/// Parses and validates a sequence.
pub fn sequence_from_json(text: &str, origin: &str) -> Result<SkeletonSequence, DataError> {
    let f: SequenceFile = parse_json(text, origin)?;
    let seq = SkeletonSequence {
        action_name: f.action,
        fps: f.fps,
        topology: f.topology,
        frames: f.frames,
        phase_labels: f.phase_labels,
        progress: f.progress,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence, DataError> {
    let path = path.as_ref();
    sequence_from_json(&read(path)?, &path.display().to_string())
}

pub fn save_sequence(seq: &SkeletonSequence, path: impl AsRef<Path>) -> Result<(), DataError> {
    seq.validate()?;
    write_file(path.as_ref(), &(sequence_to_json(seq) + "\n"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub action: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Name of the generator that produced the files, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.entries_in(split).next().is_some()
    }

    /// Loads every sequence of `split` in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<SkeletonSequence>, DataError> {
        self.entries_in(split)
            .map(|e| {
                let seq = load_sequence(self.resolve(e))?;
                if seq.action_name != e.action {
                    return Err(DataError::InvariantViolation(format!(
                        "action of {} is {:?}, manifest says {:?}",
                        e.path.display(),
                        seq.action_name,
                        e.action
                    )));
                }
                Ok(seq)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        write_file(path.as_ref(), &(self.to_json() + "\n"))
    }
}

/// Parses a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let path = path.as_ref();
    let mut m: DatasetManifest = parse_json(&read(path)?, &path.display().to_string())?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for e in &m.entries {
        if !m.resolve(e).is_file() {
            return Err(DataError::InvariantViolation(format!("entries: missing file {}", e.path.display())));
        }
    }
    Ok(m)
}
