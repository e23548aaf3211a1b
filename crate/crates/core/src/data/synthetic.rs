//! Planted-block synthetic benchmark.
//!
//! Every class (and the background) owns a cluster center: a random unit
//! direction scaled by `separation`. A video is background frames with a few
//! non-overlapping foreground blocks; each frame is its cluster center plus
//! isotropic noise, drawn independently for each modality.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::write_features;
use super::manifest::{
    DatasetManifest, Dataset, FeaturePaths, GroundTruth, LabeledSegment, ManifestVideo, Modality,
    Video,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub min_block_len: usize,
    pub max_block_len: usize,
    pub separation: f64,
    pub noise: f64,
    pub segment_seconds: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 32,
            train_videos: 40,
            test_videos: 10,
            min_segments: 48,
            max_segments: 96,
            min_blocks: 1,
            max_blocks: 3,
            min_block_len: 4,
            max_block_len: 12,
            separation: 5.0,
            noise: 1.0,
            segment_seconds: 1.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Synthetic(msg));
        if self.num_classes == 0 || self.feature_dim == 0 {
            return fail("num_classes and feature_dim must be positive".into());
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return fail(format!("separation must be > 0, got {}", self.separation));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(self.segment_seconds.is_finite() && self.segment_seconds > 0.0) {
            return fail(format!("segment_seconds must be > 0, got {}", self.segment_seconds));
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return fail(format!(
                "segment range {}..={} is invalid",
                self.min_segments, self.max_segments
            ));
        }
        if self.min_blocks == 0 || self.min_blocks > self.max_blocks {
            return fail(format!(
                "block count range {}..={} is invalid",
                self.min_blocks, self.max_blocks
            ));
        }
        if self.min_block_len == 0 || self.min_block_len > self.max_block_len {
            return fail(format!(
                "block length range {}..={} is invalid",
                self.min_block_len, self.max_block_len
            ));
        }
        // Worst case must fit in the shortest video with one-segment gaps
        // and at least 20% background.
        let worst = self.max_blocks * self.max_block_len;
        if worst + self.max_blocks - 1 > self.min_segments
            || 5 * worst > 4 * self.min_segments
        {
            return fail(format!(
                "blocks exceed video length: {} blocks of up to {} segments do not fit in {} segments with >= 20% background",
                self.max_blocks, self.max_block_len, self.min_segments
            ));
        }
        Ok(())
    }
}

/// A planted foreground block, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video: Video,
    pub blocks: Vec<PlantedBlock>,
    /// Per-segment class, 0 for background.
    pub frame_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub classes: Vec<String>,
    /// Row 0 is the background center; row `c` belongs to class `c`.
    pub centers: Matrix,
    pub train: Vec<SyntheticVideo>,
    pub test: Vec<SyntheticVideo>,
}

fn unit_direction(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    loop {
        let v = rng.normal_vec(d, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws `n` distinct items of `0..len` in random order.
fn sample_distinct(rng: &mut SeededRng, len: usize, n: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(n);
    all
}

fn plant_blocks(rng: &mut SeededRng, spec: &SyntheticSpec, frames: usize) -> Vec<PlantedBlock> {
    let n_video_classes = rng.int_inclusive(1, spec.num_classes.min(2).min(spec.max_blocks));
    let mut video_classes: Vec<usize> = sample_distinct(rng, spec.num_classes, n_video_classes)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    video_classes.sort_unstable();

    let n_blocks = rng.int_inclusive(spec.min_blocks.max(n_video_classes), spec.max_blocks);
    let mut block_classes = video_classes.clone();
    while block_classes.len() < n_blocks {
        block_classes.push(video_classes[rng.int_inclusive(0, n_video_classes - 1)]);
    }
    rng.shuffle(&mut block_classes);
    let lengths: Vec<usize> = (0..n_blocks)
        .map(|_| rng.int_inclusive(spec.min_block_len, spec.max_block_len))
        .collect();

    // Interior gaps get one mandatory background segment; the rest of the
    // background is split over all n+1 gaps by sorted cut points.
    let background = frames - lengths.iter().sum::<usize>();
    let spare = background - (n_blocks - 1);
    let mut cuts: Vec<usize> = (0..n_blocks).map(|_| rng.int_inclusive(0, spare)).collect();
    cuts.sort_unstable();

    let mut blocks = Vec::with_capacity(n_blocks);
    let mut cursor = 0;
    let mut previous_cut = 0;
    for (i, (&len, &class_id)) in lengths.iter().zip(&block_classes).enumerate() {
        cursor += cuts[i] - previous_cut + usize::from(i > 0);
        previous_cut = cuts[i];
        blocks.push(PlantedBlock {
            class_id,
            start: cursor,
            end: cursor + len,
        });
        cursor += len;
    }
    blocks
}

fn render(
    rng: &mut SeededRng,
    centers: &Matrix,
    frame_labels: &[usize],
    noise: f64,
) -> Matrix {
    let d = centers.cols();
    let mut m = Matrix::zeros(frame_labels.len(), d);
    for (t, &label) in frame_labels.iter().enumerate() {
        let center = centers.row(label);
        for (j, out) in m.row_mut(t).iter_mut().enumerate() {
            let v = center[j] + noise * rng.normal();
            // Stored as f32 on disk; keep memory and disk identical.
            *out = f64::from(v as f32);
        }
    }
    m
}

fn make_video(
    rng: &mut SeededRng,
    spec: &SyntheticSpec,
    centers: &Matrix,
    id: String,
) -> SyntheticVideo {
    let frames = rng.int_inclusive(spec.min_segments, spec.max_segments);
    let blocks = plant_blocks(rng, spec, frames);
    let mut frame_labels = vec![0; frames];
    for b in &blocks {
        frame_labels[b.start..b.end].fill(b.class_id);
    }
    let mut labels: Vec<usize> = blocks.iter().map(|b| b.class_id).collect();
    labels.sort_unstable();
    labels.dedup();
    let rgb = render(rng, centers, &frame_labels, spec.noise);
    let flow = render(rng, centers, &frame_labels, spec.noise);
    SyntheticVideo {
        video: Video {
            id,
            labels,
            segment_seconds: spec.segment_seconds,
            rgb: Some(rgb),
            flow: Some(flow),
        },
        blocks,
        frame_labels,
    }
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    (1..=num_classes).map(|c| format!("action_{c:02}")).collect()
}

/// Generates the full dataset in memory; fully determined by `spec.seed`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let d = spec.feature_dim;
    let mut centers = Matrix::zeros(spec.num_classes + 1, d);
    for c in 0..=spec.num_classes {
        let dir = unit_direction(&mut rng, d);
        for (out, v) in centers.row_mut(c).iter_mut().zip(dir) {
            *out = spec.separation * v;
        }
    }
    let train = (0..spec.train_videos)
        .map(|i| make_video(&mut rng, spec, &centers, format!("train_{i:04}")))
        .collect();
    let test = (0..spec.test_videos)
        .map(|i| make_video(&mut rng, spec, &centers, format!("test_{i:04}")))
        .collect();
    Ok(SyntheticDataset {
        spec: spec.clone(),
        classes: class_names(spec.num_classes),
        centers,
        train,
        test,
    })
}

impl SyntheticDataset {
    pub fn train_dataset(&self) -> Dataset {
        self.dataset(&self.train)
    }

    pub fn test_dataset(&self) -> Dataset {
        self.dataset(&self.test)
    }

    fn dataset(&self, videos: &[SyntheticVideo]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            videos: videos.iter().map(|v| v.video.clone()).collect(),
        }
    }

    pub fn ground_truth(&self, videos: &[SyntheticVideo]) -> GroundTruth {
        let mut map = BTreeMap::new();
        for v in videos {
            let secs = v.video.segment_seconds;
            let segs = v
                .blocks
                .iter()
                .map(|b| LabeledSegment {
                    label: self.classes[b.class_id - 1].clone(),
                    segment: [b.start as f64 * secs, b.end as f64 * secs],
                })
                .collect();
            map.insert(v.video.id.clone(), segs);
        }
        GroundTruth(map)
    }

    fn manifest(&self, videos: &[SyntheticVideo]) -> DatasetManifest {
        DatasetManifest {
            classes: self.classes.clone(),
            videos: videos
                .iter()
                .map(|v| ManifestVideo {
                    id: v.video.id.clone(),
                    labels: v
                        .video
                        .labels
                        .iter()
                        .map(|&c| self.classes[c - 1].clone())
                        .collect(),
                    segment_seconds: v.video.segment_seconds,
                    features: FeaturePaths {
                        rgb: Some(feature_rel_path(&v.video.id, Modality::Rgb).into()),
                        flow: Some(feature_rel_path(&v.video.id, Modality::Flow).into()),
                    },
                })
                .collect(),
        }
    }

    /// Writes `train.json`, `test.json`, `ground_truth.json` (test split),
    /// `train_ground_truth.json` and `features/*.wsf` under `out_dir`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
        let out = out_dir.as_ref();
        let feat_dir = out.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for v in self.train.iter().chain(&self.test) {
            for m in Modality::ALL {
                let feats = v.video.features(m).expect("synthetic videos carry both streams");
                write_features(out.join(feature_rel_path(&v.video.id, m)), feats)?;
            }
        }
        let paths = SyntheticPaths::under(out);
        self.manifest(&self.train).save(&paths.train_manifest)?;
        self.manifest(&self.test).save(&paths.test_manifest)?;
        self.ground_truth(&self.test).save(&paths.ground_truth)?;
        self.ground_truth(&self.train).save(&paths.train_ground_truth)?;
        Ok(paths)
    }
}

fn feature_rel_path(id: &str, modality: Modality) -> String {
    format!("features/{id}.{modality}.wsf")
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub train_manifest: std::path::PathBuf,
    pub test_manifest: std::path::PathBuf,
    pub ground_truth: std::path::PathBuf,
    pub train_ground_truth: std::path::PathBuf,
}

impl SyntheticPaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            train_manifest: dir.join("train.json"),
            test_manifest: dir.join("test.json"),
            ground_truth: dir.join("ground_truth.json"),
            train_ground_truth: dir.join("train_ground_truth.json"),
        }
    }
}

/// Synthesize and write in one step.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
    synthesize(spec)?.write(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_and_blocks_are_well_formed() {
        let data = synthesize(&SyntheticSpec::default()).unwrap();
        assert_eq!(data.train.len(), 40);
        assert_eq!(data.test.len(), 10);
        for v in data.train.iter().chain(&data.test) {
            let t = v.frame_labels.len();
            assert!((48..=96).contains(&t));
            assert!(!v.video.labels.is_empty() && v.video.labels.len() <= 2);
            let mut prev_end = None;
            for b in &v.blocks {
                assert!(b.start < b.end && b.end <= t);
                if let Some(e) = prev_end {
                    assert!(b.start > e, "blocks must not touch or overlap");
                }
                prev_end = Some(b.end);
            }
            let bg = v.frame_labels.iter().filter(|&&l| l == 0).count();
            assert!(5 * bg >= t, "background fraction below 20%");
            for c in &v.video.labels {
                assert!(v.blocks.iter().any(|b| b.class_id == *c));
            }
        }
    }

    #[test]
    fn zero_noise_frames_equal_centers() {
        let spec = SyntheticSpec {
            noise: 0.0,
            train_videos: 3,
            test_videos: 1,
            ..SyntheticSpec::default()
        };
        let data = synthesize(&spec).unwrap();
        for v in &data.train {
            let rgb = v.video.rgb.as_ref().unwrap();
            for (t, &label) in v.frame_labels.iter().enumerate() {
                for (a, b) in rgb.row(t).iter().zip(data.centers.row(label)) {
                    assert_eq!(*a, f64::from(*b as f32));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec {
            train_videos: 4,
            test_videos: 2,
            ..SyntheticSpec::default()
        };
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
        let other = SyntheticSpec { seed: 43, ..spec.clone() };
        assert_ne!(synthesize(&spec).unwrap(), synthesize(&other).unwrap());
    }

    #[test]
    fn oversized_blocks_are_rejected() {
        let spec = SyntheticSpec {
            max_block_len: 40,
            ..SyntheticSpec::default()
        };
        assert!(matches!(synthesize(&spec), Err(Error::Synthetic(msg)) if msg.contains("exceed")));
        let spec = SyntheticSpec {
            separation: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn ground_truth_uses_seconds() {
        let spec = SyntheticSpec {
            segment_seconds: 0.5,
            train_videos: 1,
            test_videos: 1,
            ..SyntheticSpec::default()
        };
        let data = synthesize(&spec).unwrap();
        let gt = data.ground_truth(&data.test);
        let v = &data.test[0];
        let segs = &gt.0[&v.video.id];
        assert_eq!(segs.len(), v.blocks.len());
        assert_eq!(segs[0].segment[0], v.blocks[0].start as f64 * 0.5);
    }
}
