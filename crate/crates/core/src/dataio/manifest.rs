use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub query: String,
    pub t_s: f64,
    pub t_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub feature_path: String,
    /// Frame count.
    pub l: u64,
    pub fps: f64,
    pub annotations: Vec<Annotation>,
}

impl VideoEntry {
    pub fn duration(&self) -> f64 {
        self.l as f64 / self.fps
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Error::Validation {
            video_id: self.video_id.clone(),
            field: field.to_string(),
            msg,
        };
        if self.l < 1 {
            return Err(fail("l", "frame count must be at least 1".into()));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(fail("fps", format!("{} is not a positive rate", self.fps)));
        }
        let duration = self.duration();
        for (i, a) in self.annotations.iter().enumerate() {
            if !(a.t_s >= 0.0 && a.t_s < a.t_e && a.t_e <= duration) {
                return Err(fail(
                    &format!("annotations[{i}]"),
                    format!(
                        "need 0 <= t_s < t_e <= {duration}, got t_s={} t_e={}",
                        a.t_s, a.t_e
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<VideoEntry>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<VideoEntry>) -> Self {
        DatasetManifest {
            entries,
            base_dir: None,
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Validation {
                    video_id: e.video_id.clone(),
                    field: "video_id".into(),
                    msg: "duplicate video id".into(),
                });
            }
            e.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn feature_path(&self, entry: &VideoEntry) -> PathBuf {
        let p = Path::new(&entry.feature_path);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|e| e.annotations.iter().map(|a| a.query.as_str()))
    }

    pub fn annotation_count(&self) -> usize {
        self.entries.iter().map(|e| e.annotations.len()).sum()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest.with_base_dir(base))
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}
