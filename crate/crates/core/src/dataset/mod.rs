//! On-disk datasets, model files and the synthetic lifting corpus.
//!
//! A dataset is a directory with `good/` and `bad/` subfolders, each holding
//! one `*.jsonl` frame file per clip.

mod model_file;
mod oracle;
mod synthetic;

pub use model_file::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use oracle::{knee_flexion_deg, oracle_label, trunk_flexion_deg, OracleThresholds};
pub use synthetic::{generate_synthetic, LiftStyle, SyntheticClip, SyntheticConfig, CLIP_FRAMES};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{build_windows, FeatureConfig, Label, LabeledSequence, PoseFrame, WINDOW_LEN};

pub fn class_dir(label: Label) -> &'static str {
    label.as_str()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub class: Label,
    pub clip_id: String,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<Label>,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn count(&self, class: Label) -> usize {
        self.clips.iter().filter(|c| c.class == class).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization is infallible")
    }
}

/// Reads a frame file, one JSON frame per line. Blank lines are skipped.
pub fn read_frames(path: &Path) -> Result<Vec<PoseFrame>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = PoseFrame::from_json_line(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: n + 1,
            detail: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_frames(path: &Path, frames: &[PoseFrame]) -> Result<()> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&f.to_json_line());
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn list_clips(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every clip under `root/good` and `root/bad`, cut into
/// non-overlapping 30-frame windows. Order: class, clip id, window start.
pub fn load_dataset(root: &Path, filter_head: bool) -> Result<(Vec<LabeledSequence>, DatasetManifest)> {
    load_dataset_with(
        root,
        &FeatureConfig {
            filter_head,
            canonicalize: false,
        },
    )
}

pub fn load_dataset_with(root: &Path, features: &FeatureConfig) -> Result<(Vec<LabeledSequence>, DatasetManifest)> {
    let mut sequences = Vec::new();
    let mut clips = Vec::new();
    for label in Label::ALL {
        let dir = root.join(class_dir(label));
        if !dir.is_dir() {
            return Err(Error::Dataset(format!(
                "missing class folder {} for class {label}",
                dir.display()
            )));
        }
        let files = list_clips(&dir)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class {label} has no clips in {}",
                dir.display()
            )));
        }
        for path in files {
            let frames = read_frames(&path)?;
            if frames.len() < WINDOW_LEN {
                return Err(Error::ClipTooShort {
                    file: path,
                    frames: frames.len(),
                    required: WINDOW_LEN,
                });
            }
            let clip_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let feats = frames
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    features.features(f).map_err(|e| Error::Parse {
                        file: path.clone(),
                        line: i + 1,
                        detail: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let source = format!("{label}/{clip_id}");
            for w in build_windows(&feats, WINDOW_LEN, WINDOW_LEN, &source)? {
                sequences.push(LabeledSequence::new(w, label));
            }
            clips.push(ClipEntry {
                class: label,
                clip_id,
                frame_count: frames.len(),
            });
        }
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        classes: Label::ALL.to_vec(),
        clips,
    };
    Ok((sequences, manifest))
}
