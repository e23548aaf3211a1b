//! Dataset manifests and ground-truth files (JSON).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::load_features;
use crate::error::{Error, Result};
use crate::model::{FeatureSequence, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Flow,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturePaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
}

impl FeaturePaths {
    pub fn get(&self, modality: Modality) -> Option<&PathBuf> {
        match modality {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Flow => self.flow.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub id: String,
    /// Class names; no temporal annotation.
    pub labels: Vec<String>,
    pub segment_seconds: f64,
    /// Relative paths resolve against the manifest's directory.
    pub features: FeaturePaths,
}

/// Video list plus the ordered class list defining ids `1..=C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub videos: Vec<ManifestVideo>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Manifest("class list is empty".into()));
        }
        let mut names = HashSet::new();
        for c in &self.classes {
            if !names.insert(c.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name {c:?}")));
            }
        }
        let mut ids = HashSet::new();
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate video id {:?}", v.id)));
            }
            if let Some(bad) = v.labels.iter().find(|l| !names.contains(l.as_str())) {
                return Err(Error::Manifest(format!(
                    "video {:?} has label {bad:?} not in the class list",
                    v.id
                )));
            }
            if !(v.segment_seconds.is_finite() && v.segment_seconds > 0.0) {
                return Err(Error::Manifest(format!(
                    "video {:?} has invalid segment_seconds {}",
                    v.id, v.segment_seconds
                )));
            }
        }
        Ok(())
    }

    /// 1-based id of a class name.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name).map(|i| i + 1)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// One video in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    /// Class ids in `1..=C`.
    pub labels: Vec<usize>,
    pub segment_seconds: f64,
    pub rgb: Option<FeatureSequence>,
    pub flow: Option<FeatureSequence>,
}

impl Video {
    pub fn features(&self, modality: Modality) -> Option<&FeatureSequence> {
        match modality {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Flow => self.flow.as_ref(),
        }
    }

    pub fn require(&self, modality: Modality) -> Result<&FeatureSequence> {
        self.features(modality).ok_or_else(|| Error::MissingModality {
            video: self.id.clone(),
            modality: modality.to_string(),
        })
    }

    pub fn label_set(&self, num_classes: usize) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone(), num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Reads the requested modalities for every video in the manifest.
    pub fn load(manifest_path: impl AsRef<Path>, modalities: &[Modality]) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base, modalities)
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        base: &Path,
        modalities: &[Modality],
    ) -> Result<Self> {
        manifest.validate()?;
        let mut videos = Vec::with_capacity(manifest.videos.len());
        for v in &manifest.videos {
            let mut video = Video {
                id: v.id.clone(),
                labels: v
                    .labels
                    .iter()
                    .map(|l| manifest.class_id(l).expect("validated"))
                    .collect(),
                segment_seconds: v.segment_seconds,
                rgb: None,
                flow: None,
            };
            for &m in modalities {
                let rel = v.features.get(m).ok_or_else(|| Error::MissingModality {
                    video: v.id.clone(),
                    modality: m.to_string(),
                })?;
                let feats = load_features(base.join(rel))?;
                match m {
                    Modality::Rgb => video.rgb = Some(feats),
                    Modality::Flow => video.flow = Some(feats),
                }
            }
            if let (Some(r), Some(f)) = (&video.rgb, &video.flow) {
                if r.rows() != f.rows() {
                    return Err(Error::DimensionMismatch {
                        context: "rgb/flow segment count",
                        expected: r.rows(),
                        actual: f.rows(),
                    });
                }
            }
            videos.push(video);
        }
        Ok(Self {
            classes: manifest.classes.clone(),
            videos,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSegment {
    pub label: String,
    pub segment: [f64; 2],
}

/// `{video_id: [{label, segment: [start_sec, end_sec]}]}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth(pub BTreeMap<String, Vec<LabeledSegment>>);

impl GroundTruth {
    pub fn validate(&self, path: &Path) -> Result<()> {
        for (video, segs) in &self.0 {
            for (i, s) in segs.iter().enumerate() {
                let [start, end] = s.segment;
                if !(start.is_finite() && end.is_finite() && start < end) {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        message: format!(
                            "video {video:?} entry {i}: segment [{start}, {end}] must satisfy start < end"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gt: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        gt.validate(path)?;
        Ok(gt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
