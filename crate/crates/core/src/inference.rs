//! Two-stream detection: class selection, multi-threshold attention
//! proposals, weighted-TCAM scoring and class-wise NMS.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_json, Dataset, Modality, Video};
use crate::error::{ensure_dim, Error, Result};
use crate::model::{attention, pool, video_probs, FeatureSequence, StreamModel};
use crate::numerics::Matrix;

pub fn default_attention_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.025).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub class_prob_threshold: f64,
    pub attention_thresholds: Vec<f64>,
    pub nms_iou: f64,
    /// RGB weight in the fused score; flow gets `1 - theta`.
    pub theta: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            class_prob_threshold: 0.1,
            attention_thresholds: default_attention_thresholds(),
            nms_iou: 0.5,
            theta: 0.5,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        unit_interval("class probability threshold", self.class_prob_threshold)?;
        unit_interval("NMS IoU threshold", self.nms_iou)?;
        unit_interval("theta", self.theta)?;
        if self.attention_thresholds.is_empty() {
            return Err(Error::InvalidArgument("attention threshold list is empty".into()));
        }
        for &t in &self.attention_thresholds {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!(
                    "attention thresholds must lie in [0, 1), got {t}"
                )));
            }
        }
        if self.attention_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "attention thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Inclusive segment-index interval paired with a candidate class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentProposal {
    pub class_id: usize,
    pub t_start: usize,
    pub t_end: usize,
}

impl SegmentProposal {
    pub fn num_segments(&self) -> usize {
        self.t_end - self.t_start + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub start_sec: f64,
    pub end_sec: f64,
    pub score: f64,
}

/// Per-video quantities one stream contributes at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamActivations {
    pub lambda: Vec<f64>,
    /// Video-level class probabilities from the attention-pooled feature.
    pub p_fg: Vec<f64>,
    /// `w_c · x_t`, shape `T × (C+1)`.
    pub frame_logits: Matrix,
}

impl StreamActivations {
    pub fn compute(model: &StreamModel, features: &FeatureSequence) -> Result<Self> {
        let lambda = attention(model, features)?;
        let p_fg = video_probs(model, &pool(features, &lambda)?)?;
        let frame_logits = model.frame_logits(features)?;
        Ok(Self {
            lambda,
            p_fg,
            frame_logits,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.lambda.len()
    }
}

/// Classes whose averaged foreground probability reaches `threshold`, or the
/// single most probable foreground class when none does.
pub fn select_classes(p_fg_rgb: &[f64], p_fg_flow: &[f64], threshold: f64) -> Result<Vec<usize>> {
    ensure_dim("class probability vectors", p_fg_rgb.len(), p_fg_flow.len())?;
    if p_fg_rgb.len() < 2 {
        return Err(Error::InvalidArgument(
            "probability vector needs a background and at least one class".into(),
        ));
    }
    let avg: Vec<f64> = p_fg_rgb
        .iter()
        .zip(p_fg_flow)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let selected: Vec<usize> = (1..avg.len()).filter(|&c| avg[c] >= threshold).collect();
    if !selected.is_empty() {
        return Ok(selected);
    }
    let mut best = 1;
    for c in 2..avg.len() {
        if avg[c] > avg[best] {
            best = c;
        }
    }
    Ok(vec![best])
}

pub fn fused_attention(lambda_rgb: &[f64], lambda_flow: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("attention lengths", lambda_rgb.len(), lambda_flow.len())?;
    Ok(lambda_rgb
        .iter()
        .zip(lambda_flow)
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Maximal runs with `λ_t > tau`, as inclusive `(start, end)` pairs.
pub fn connected_segments(lambda: &[f64], tau: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &l) in lambda.iter().enumerate() {
        match (l > tau, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, lambda.len() - 1));
    }
    out
}

/// Pooled runs over all thresholds, crossed with every class; sorted by
/// class, then interval.
pub fn propose(fused: &[f64], classes: &[usize], thresholds: &[f64]) -> Vec<SegmentProposal> {
    let intervals: BTreeSet<(usize, usize)> = thresholds
        .iter()
        .flat_map(|&tau| connected_segments(fused, tau))
        .collect();
    let classes: BTreeSet<usize> = classes.iter().copied().collect();
    classes
        .into_iter()
        .flat_map(|class_id| {
            intervals.iter().map(move |&(t_start, t_end)| SegmentProposal {
                class_id,
                t_start,
                t_end,
            })
        })
        .collect()
}

/// Mean over the interval of
/// `θ λ^rgb_t (w^rgb_c · x^rgb_t) + (1-θ) λ^flow_t (w^flow_c · x^flow_t)`.
pub fn score(
    proposal: &SegmentProposal,
    rgb: &StreamActivations,
    flow: &StreamActivations,
    theta: f64,
) -> Result<f64> {
    ensure_dim("stream lengths", rgb.num_segments(), flow.num_segments())?;
    let t_len = rgb.num_segments();
    if proposal.t_start > proposal.t_end || proposal.t_end >= t_len {
        return Err(Error::InvalidArgument(format!(
            "proposal [{}, {}] outside a video of {t_len} segments",
            proposal.t_start, proposal.t_end
        )));
    }
    let c = proposal.class_id;
    if c == 0 || c >= rgb.frame_logits.cols() || c >= flow.frame_logits.cols() {
        return Err(Error::LabelOutOfRange {
            label: c,
            num_classes: rgb.frame_logits.cols().saturating_sub(1),
        });
    }
    let mut sum = 0.0;
    for t in proposal.t_start..=proposal.t_end {
        sum += theta * rgb.lambda[t] * rgb.frame_logits.get(t, c)
            + (1.0 - theta) * flow.lambda[t] * flow.frame_logits.get(t, c);
    }
    Ok(sum / proposal.num_segments() as f64)
}

/// IoU of two inclusive segment-index intervals, treated as half-open
/// `[start, end + 1)` spans.
pub fn segment_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = (a.1 + 1).min(b.1 + 1);
    let inter = hi.saturating_sub(lo) as f64;
    let union = (a.1 + 1 - a.0) as f64 + (b.1 + 1 - b.0) as f64 - inter;
    inter / union
}

fn nms_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.cmp(&b.t_start))
        .then((a.t_end - a.t_start).cmp(&(b.t_end - b.t_start)))
}

/// Greedy suppression within one class; output is in descending score order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(nms_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let ok = kept
            .iter()
            .all(|k| segment_iou((k.t_start, k.t_end), (d.t_start, d.t_end)) <= iou_threshold);
        if ok {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel {
    pub rgb: StreamModel,
    pub flow: StreamModel,
}

impl TwoStreamModel {
    pub fn new(rgb: StreamModel, flow: StreamModel) -> Result<Self> {
        if rgb.dims.num_classes != flow.dims.num_classes {
            return Err(Error::ModelDims {
                what: "class count, rgb vs flow",
                checkpoint: rgb.dims.num_classes,
                data: flow.dims.num_classes,
            });
        }
        Ok(Self { rgb, flow })
    }

    pub fn num_classes(&self) -> usize {
        self.rgb.dims.num_classes
    }

    fn check_video(&self, video: &Video) -> Result<()> {
        for (m, model) in [(Modality::Rgb, &self.rgb), (Modality::Flow, &self.flow)] {
            let d = video.require(m)?.cols();
            if d != model.dims.feature_dim {
                return Err(Error::ModelDims {
                    what: match m {
                        Modality::Rgb => "rgb feature dimension d",
                        Modality::Flow => "flow feature dimension d",
                    },
                    checkpoint: model.dims.feature_dim,
                    data: d,
                });
            }
        }
        Ok(())
    }
}

pub fn detect(models: &TwoStreamModel, video: &Video, config: &InferenceConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    if !(video.segment_seconds.is_finite() && video.segment_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "video {:?} has invalid segment duration {}",
            video.id, video.segment_seconds
        )));
    }
    models.check_video(video)?;
    let rgb_x = video.require(Modality::Rgb)?;
    let flow_x = video.require(Modality::Flow)?;
    ensure_dim("rgb/flow segment count", rgb_x.rows(), flow_x.rows())?;

    let rgb = StreamActivations::compute(&models.rgb, rgb_x)?;
    let flow = StreamActivations::compute(&models.flow, flow_x)?;
    let classes = select_classes(&rgb.p_fg, &flow.p_fg, config.class_prob_threshold)?;
    let fused = fused_attention(&rgb.lambda, &flow.lambda)?;
    let proposals = propose(&fused, &classes, &config.attention_thresholds);

    let mut by_class: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for p in &proposals {
        let s = score(p, &rgb, &flow, config.theta)?;
        by_class.entry(p.class_id).or_default().push(Detection {
            class_id: p.class_id,
            t_start: p.t_start,
            t_end: p.t_end,
            start_sec: p.t_start as f64 * video.segment_seconds,
            end_sec: (p.t_end + 1) as f64 * video.segment_seconds,
            score: s,
        });
    }
    let mut out: Vec<Detection> = by_class
        .values()
        .flat_map(|dets| nms(dets, config.nms_iou))
        .collect();
    out.sort_by(|a, b| nms_order(a, b).then(a.class_id.cmp(&b.class_id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub label: String,
    pub score: f64,
    pub segment: [f64; 2],
}

/// `{video_id: [{label, score, segment: [start_sec, end_sec]}]}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionFile(pub BTreeMap<String, Vec<DetectionRecord>>);

impl DetectionFile {
    pub fn validate(&self, path: &Path) -> Result<()> {
        for (video, dets) in &self.0 {
            for (i, d) in dets.iter().enumerate() {
                let [s, e] = d.segment;
                let message = if !d.score.is_finite() {
                    Some(format!("score {} is not finite", d.score))
                } else if !(s.is_finite() && e.is_finite() && s < e) {
                    Some(format!("segment [{s}, {e}] must satisfy start < end"))
                } else {
                    None
                };
                if let Some(message) = message {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        message: format!("video {video:?} detection {i}: {message}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.validate(path)?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

pub fn detect_dataset(
    models: &TwoStreamModel,
    dataset: &Dataset,
    config: &InferenceConfig,
) -> Result<DetectionFile> {
    if dataset.num_classes() != models.num_classes() {
        return Err(Error::ModelDims {
            what: "class count",
            checkpoint: models.num_classes(),
            data: dataset.num_classes(),
        });
    }
    let mut out = BTreeMap::new();
    for video in &dataset.videos {
        let records = detect(models, video, config)?
            .into_iter()
            .map(|d| DetectionRecord {
                label: dataset.classes[d.class_id - 1].clone(),
                score: d.score,
                segment: [d.start_sec, d.end_sec],
            })
            .collect();
        out.insert(video.id.clone(), records);
    }
    Ok(DetectionFile(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn class_selection() {
        let p = [0.9, 0.05, 0.05];
        assert_eq!(select_classes(&p, &p, 0.1).unwrap(), vec![1]);
        let p = [0.4, 0.4, 0.15, 0.05];
        assert_eq!(select_classes(&p, &p, 0.1).unwrap(), vec![1, 2]);
        assert_eq!(select_classes(&p, &p, 0.0).unwrap(), vec![1, 2, 3]);
        // Averaging, not either stream alone.
        let a = [0.7, 0.3, 0.0];
        let b = [0.7, 0.0, 0.3];
        assert_eq!(select_classes(&a, &b, 0.15).unwrap(), vec![1, 2]);
        assert_eq!(select_classes(&a, &b, 0.2).unwrap(), vec![1]);
        assert!(select_classes(&[0.5, 0.5], &[1.0], 0.1).is_err());
    }

    #[test]
    fn fused_attention_cases() {
        assert_eq!(fused_attention(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        let v = [0.2, 0.7, 0.4];
        assert_eq!(fused_attention(&v, &v).unwrap(), v.to_vec());
        assert!(fused_attention(&v, &v[..2]).is_err());
    }

    #[test]
    fn connected_segment_cases() {
        let l = [0.1, 0.6, 0.7, 0.2, 0.8];
        assert_eq!(connected_segments(&l, 0.5), vec![(1, 2), (4, 4)]);
        assert_eq!(connected_segments(&l, 1.0), vec![]);
        assert_eq!(connected_segments(&l, -0.1), vec![(0, 4)]);
        assert_eq!(connected_segments(&[0.0, 0.0], 0.0), vec![]);
    }

    #[test]
    fn proposal_cases() {
        let p = propose(&[0.1, 0.3, 0.6], &[2], &[0.2, 0.5]);
        let got: Vec<_> = p.iter().map(|p| (p.t_start, p.t_end)).collect();
        assert_eq!(got, vec![(1, 2), (2, 2)]);

        let p = propose(&[0.9; 7], &[1, 3], &default_attention_thresholds());
        assert_eq!(
            p,
            vec![
                SegmentProposal { class_id: 1, t_start: 0, t_end: 6 },
                SegmentProposal { class_id: 3, t_start: 0, t_end: 6 },
            ]
        );
        assert!(propose(&[0.0; 5], &[1], &default_attention_thresholds()).is_empty());
    }

    fn brute_force_runs(lambda: &[f64], tau: f64) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for s in 0..lambda.len() {
            for e in s..lambda.len() {
                let inside = (s..=e).all(|t| lambda[t] > tau);
                let left_closed = s == 0 || lambda[s - 1] <= tau;
                let right_closed = e + 1 == lambda.len() || lambda[e + 1] <= tau;
                if inside && left_closed && right_closed {
                    out.insert((s, e));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn propose_matches_set_oracle(
            lambda in prop::collection::vec(0.0f64..=1.0, 1..25),
            mut thresholds in prop::collection::vec(0.0f64..1.0, 1..6),
            classes in prop::collection::btree_set(1usize..5, 1..4),
        ) {
            let classes: Vec<usize> = classes.into_iter().collect();
            let got: BTreeSet<SegmentProposal> =
                propose(&lambda, &classes, &thresholds).into_iter().collect();
            let mut want = BTreeSet::new();
            for &tau in &thresholds {
                for (s, e) in brute_force_runs(&lambda, tau) {
                    for &c in &classes {
                        want.insert(SegmentProposal { class_id: c, t_start: s, t_end: e });
                    }
                }
            }
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(got.len(), propose(&lambda, &classes, &thresholds).len());

            let dup = thresholds.clone();
            thresholds.extend(dup);
            let doubled: BTreeSet<_> = propose(&lambda, &classes, &thresholds).into_iter().collect();
            prop_assert_eq!(doubled, got);
        }
    }

    fn random_activations(rng: &mut SeededRng, t: usize, c: usize) -> StreamActivations {
        let lambda = (0..t).map(|_| rng.uniform()).collect();
        let frame_logits =
            Matrix::from_vec(t, c + 1, rng.normal_vec(t * (c + 1), 2.0)).unwrap();
        StreamActivations {
            lambda,
            p_fg: vec![1.0 / (c + 1) as f64; c + 1],
            frame_logits,
        }
    }

    #[test]
    fn score_boundaries() {
        let mut rng = SeededRng::new(3);
        let rgb = random_activations(&mut rng, 6, 3);
        let flow = random_activations(&mut rng, 6, 3);
        let p = SegmentProposal { class_id: 2, t_start: 1, t_end: 4 };
        let rgb_only: f64 =
            (1..=4).map(|t| rgb.lambda[t] * rgb.frame_logits.get(t, 2)).sum::<f64>() / 4.0;
        let flow_only: f64 =
            (1..=4).map(|t| flow.lambda[t] * flow.frame_logits.get(t, 2)).sum::<f64>() / 4.0;
        assert!((score(&p, &rgb, &flow, 1.0).unwrap() - rgb_only).abs() < 1e-12);
        assert!((score(&p, &rgb, &flow, 0.0).unwrap() - flow_only).abs() < 1e-12);
        let mid = score(&p, &rgb, &flow, 0.5).unwrap();
        assert!((mid - 0.5 * (rgb_only + flow_only)).abs() < 1e-12);

        let single = SegmentProposal { class_id: 3, t_start: 5, t_end: 5 };
        let frame = 0.3 * rgb.lambda[5] * rgb.frame_logits.get(5, 3)
            + 0.7 * flow.lambda[5] * flow.frame_logits.get(5, 3);
        assert!((score(&single, &rgb, &flow, 0.3).unwrap() - frame).abs() < 1e-12);

        let outside = SegmentProposal { class_id: 1, t_start: 4, t_end: 6 };
        assert!(score(&outside, &rgb, &flow, 0.5).is_err());
        let bg = SegmentProposal { class_id: 0, t_start: 0, t_end: 1 };
        assert!(score(&bg, &rgb, &flow, 0.5).is_err());
    }

    #[test]
    fn score_matches_model_level_double_loop() {
        let mut rng = SeededRng::new(11);
        let dims = ModelDims::new(4, 5, 3);
        let m_rgb = StreamModel::init_with_std(dims, 0.7, &mut rng);
        let m_flow = StreamModel::init_with_std(dims, 0.7, &mut rng);
        let x_rgb = Matrix::from_vec(9, 4, rng.normal_vec(36, 1.0)).unwrap();
        let x_flow = Matrix::from_vec(9, 4, rng.normal_vec(36, 1.0)).unwrap();
        let rgb = StreamActivations::compute(&m_rgb, &x_rgb).unwrap();
        let flow = StreamActivations::compute(&m_flow, &x_flow).unwrap();
        let l_rgb = attention(&m_rgb, &x_rgb).unwrap();
        let l_flow = attention(&m_flow, &x_flow).unwrap();
        for (c, s, e) in [(1, 0, 8), (2, 3, 3), (3, 2, 6)] {
            let theta = 0.35;
            let mut want = 0.0;
            for t in s..=e {
                let mut a_rgb = 0.0;
                let mut a_flow = 0.0;
                for j in 0..4 {
                    a_rgb += m_rgb.classifier.get(c, j) * x_rgb.get(t, j);
                    a_flow += m_flow.classifier.get(c, j) * x_flow.get(t, j);
                }
                want += theta * l_rgb[t] * a_rgb + (1.0 - theta) * l_flow[t] * a_flow;
            }
            want /= (e - s + 1) as f64;
            let p = SegmentProposal { class_id: c, t_start: s, t_end: e };
            let got = score(&p, &rgb, &flow, theta).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    fn det(t_start: usize, t_end: usize, score: f64) -> Detection {
        Detection {
            class_id: 1,
            t_start,
            t_end,
            start_sec: t_start as f64,
            end_sec: (t_end + 1) as f64,
            score,
        }
    }

    #[test]
    fn nms_cases() {
        let kept = nms(&[det(2, 5, 0.8), det(2, 5, 0.9)], 0.5);
        assert_eq!(kept, vec![det(2, 5, 0.9)]);
        let disjoint = [det(0, 1, 0.1), det(3, 4, 0.5), det(6, 9, 0.3)];
        assert_eq!(nms(&disjoint, 0.5).len(), 3);
        // Equal scores: earlier start wins, then the shorter one.
        let tied = nms(&[det(1, 4, 0.5), det(0, 4, 0.5), det(0, 3, 0.5)], 0.5);
        assert_eq!(tied, vec![det(0, 3, 0.5)]);
    }

    #[test]
    fn segment_iou_is_half_open() {
        assert_eq!(segment_iou((0, 0), (1, 1)), 0.0);
        assert_eq!(segment_iou((0, 1), (1, 2)), 1.0 / 3.0);
        assert_eq!(segment_iou((3, 7), (3, 7)), 1.0);
    }

    /// Exhaustive greedy: repeatedly take the best remaining detection that is
    /// compatible with everything taken so far.
    fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let mut remaining: Vec<Detection> = dets.to_vec();
        let mut kept: Vec<Detection> = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (a, b) = (&remaining[i], &remaining[best]);
                let better = a.score > b.score
                    || (a.score == b.score
                        && (a.t_start < b.t_start
                            || (a.t_start == b.t_start && a.t_end < b.t_end)));
                if better {
                    best = i;
                }
            }
            let cand = remaining.remove(best);
            let overlaps = kept.iter().any(|k| {
                let inter = (k.t_end.min(cand.t_end) + 1) as f64
                    - k.t_start.max(cand.t_start) as f64;
                let inter = inter.max(0.0);
                let union = (k.t_end - k.t_start + 1 + cand.t_end - cand.t_start + 1) as f64 - inter;
                inter / union > thr
            });
            if !overlaps {
                kept.push(cand);
            }
        }
        kept
    }

    #[test]
    fn nms_matches_oracle_on_random_sets() {
        let mut rng = SeededRng::new(21);
        for _ in 0..300 {
            let n = rng.int_inclusive(1, 10) as usize;
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let s = rng.int_inclusive(0, 15) as usize;
                    let e = s + rng.int_inclusive(0, 6) as usize;
                    // Coarse scores so ties actually happen.
                    det(s, e, rng.int_inclusive(0, 4) as f64 / 4.0)
                })
                .collect();
            let thr = [0.0, 0.3, 0.5, 0.7][rng.int_inclusive(0, 3) as usize];
            let got = nms(&dets, thr);
            assert_eq!(got, nms_oracle(&dets, thr));
            for (i, a) in got.iter().enumerate() {
                for b in &got[i + 1..] {
                    assert!(segment_iou((a.t_start, a.t_end), (b.t_start, b.t_end)) <= thr);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        InferenceConfig::default().validate().unwrap();
        assert_eq!(InferenceConfig::default().attention_thresholds.len(), 21);
        let mut c = InferenceConfig::default();
        c.attention_thresholds = vec![0.1, 0.1];
        assert!(c.validate().is_err());
        c.attention_thresholds = vec![0.2, 1.0];
        assert!(c.validate().is_err());
        let c = InferenceConfig { theta: 1.5, ..InferenceConfig::default() };
        assert!(c.validate().is_err());
    }

    fn video(t: usize, d: usize, rng: &mut SeededRng) -> Video {
        Video {
            id: "v".into(),
            labels: vec![1],
            segment_seconds: 0.5,
            rgb: Some(Matrix::from_vec(t, d, rng.normal_vec(t * d, 1.0)).unwrap()),
            flow: Some(Matrix::from_vec(t, d, rng.normal_vec(t * d, 1.0)).unwrap()),
        }
    }

    #[test]
    fn zero_attention_gives_no_detections() {
        let mut rng = SeededRng::new(4);
        let dims = ModelDims::new(3, 2, 2);
        let mut rgb = StreamModel::init(dims, &mut rng);
        // σ(-1000) underflows to exactly 0 for every frame.
        rgb.b2 = -1000.0;
        let models = TwoStreamModel::new(rgb.clone(), rgb).unwrap();
        let v = video(10, 3, &mut rng);
        assert!(detect(&models, &v, &InferenceConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn pipeline_equals_manual_composition() {
        let mut rng = SeededRng::new(8);
        let dims = ModelDims::new(4, 6, 3);
        let models = TwoStreamModel::new(
            StreamModel::init_with_std(dims, 0.8, &mut rng),
            StreamModel::init_with_std(dims, 0.8, &mut rng),
        )
        .unwrap();
        let v = video(30, 4, &mut rng);
        let config = InferenceConfig { class_prob_threshold: 0.2, ..InferenceConfig::default() };
        let got = detect(&models, &v, &config).unwrap();

        let rgb = StreamActivations::compute(&models.rgb, v.rgb.as_ref().unwrap()).unwrap();
        let flow = StreamActivations::compute(&models.flow, v.flow.as_ref().unwrap()).unwrap();
        let classes = select_classes(&rgb.p_fg, &flow.p_fg, 0.2).unwrap();
        let fused = fused_attention(&rgb.lambda, &flow.lambda).unwrap();
        let mut want = Vec::new();
        for &c in &classes {
            let dets: Vec<Detection> = propose(&fused, &[c], &config.attention_thresholds)
                .iter()
                .map(|p| Detection {
                    class_id: c,
                    t_start: p.t_start,
                    t_end: p.t_end,
                    start_sec: p.t_start as f64 * 0.5,
                    end_sec: (p.t_end + 1) as f64 * 0.5,
                    score: score(p, &rgb, &flow, 0.5).unwrap(),
                })
                .collect();
            want.extend(nms(&dets, 0.5));
        }
        assert_eq!(got.len(), want.len());
        for d in &got {
            assert!(want.contains(d));
            assert!(classes.contains(&d.class_id));
            assert!(d.t_end < 30 && d.start_sec < d.end_sec);
        }
        assert!(!got.is_empty());
    }

    #[test]
    fn dimension_mismatch_names_both_values() {
        let mut rng = SeededRng::new(2);
        let dims = ModelDims::new(5, 2, 2);
        let m = StreamModel::init(dims, &mut rng);
        let models = TwoStreamModel::new(m.clone(), m).unwrap();
        let v = video(6, 3, &mut rng);
        let msg = detect(&models, &v, &InferenceConfig::default()).unwrap_err().to_string();
        assert!(msg.contains('5') && msg.contains('3'), "{msg}");

        let mut v = video(6, 5, &mut rng);
        v.flow = Some(Matrix::zeros(7, 5));
        assert!(detect(&models, &v, &InferenceConfig::default()).is_err());
    }

    #[test]
    fn detection_file_round_trip() {
        let mut f = DetectionFile::default();
        assert_eq!(serde_json::to_string(&f).unwrap(), "{}");
        f.0.insert(
            "v1".into(),
            vec![DetectionRecord { label: "run".into(), score: 0.5, segment: [1.0, 2.5] }],
        );
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"{"v1":[{"label":"run","score":0.5,"segment":[1.0,2.5]}]}"#);
        let back: DetectionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        f.0.get_mut("v1").unwrap()[0].segment = [3.0, 2.0];
        assert!(f.validate(Path::new("d.json")).is_err());
    }
}
