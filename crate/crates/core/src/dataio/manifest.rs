use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_all, write_all};
use super::sequence::{load_sequence, FeatureSequence};
use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One video's files. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub visual_path: PathBuf,
    pub audio_path: PathBuf,
    pub labels_path: PathBuf,
    /// Audio rows before alignment to the video frame count.
    pub raw_audio_len: usize,
    pub split: Split,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = read_all(path)?;
        let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(DataError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("duplicate video_id {}", e.video_id),
                });
            }
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, base_dir })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut json = serde_json::to_vec_pretty(&self.entries).expect("manifest serializes");
        json.push(b'\n');
        write_all(path, &json)
    }

    pub fn load_all(&self, d_v: usize, d_a: usize) -> Result<Vec<FeatureSequence>, DataError> {
        self.entries
            .iter()
            .map(|e| load_sequence(e, &self.base_dir, d_v, d_a))
            .collect()
    }

    /// Feature dimensions declared by the first entry's files.
    pub fn probe_dims(&self) -> Result<(usize, usize), DataError> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| DataError::Validation("manifest has no entries".into()))?;
        let dim = |p: &Path| -> Result<usize, DataError> {
            let path = self.base_dir.join(p);
            let bytes = read_all(&path)?;
            let mut pos = 8;
            Ok(super::format::read_u32(&bytes, &mut pos, &path)? as usize)
        };
        Ok((dim(&first.visual_path)?, dim(&first.audio_path)?))
    }
}
