//! Temporal-IoU average precision and mAP.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::inference::DetectionFile;

pub fn default_iou_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Intersection over union of two `[start, end]` intervals on the real line.
pub fn tiou(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    for iv in [a, b] {
        if !(iv[0].is_finite() && iv[1].is_finite() && iv[0] < iv[1]) {
            return Err(Error::InvalidArgument(format!(
                "degenerate interval [{}, {}]",
                iv[0], iv[1]
            )));
        }
    }
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    Ok(inter / union)
}

fn iou_unchecked(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSegment {
    pub video: String,
    pub segment: [f64; 2],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtSegment {
    pub video: String,
    pub segment: [f64; 2],
}

/// Descending score, then video id, then start (end and input order settle
/// anything left).
fn ranking(dets: &[ScoredSegment]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video.cmp(&b.video))
            .then(a.segment[0].total_cmp(&b.segment[0]))
            .then(a.segment[1].total_cmp(&b.segment[1]))
            .then(i.cmp(&j))
    });
    order
}

/// Interpolated AP for one class. Each detection, in rank order, claims the
/// unmatched ground truth of its video with the highest IoU (lowest index on
/// ties) if that IoU reaches `iou_threshold`.
pub fn average_precision(dets: &[ScoredSegment], gts: &[GtSegment], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut per_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        per_video.entry(g.video.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    for (rank, &i) in ranking(dets).iter().enumerate() {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for &g in per_video.get(d.video.as_str()).into_iter().flatten() {
            if matched[g] {
                continue;
            }
            let iou = iou_unchecked(d.segment, gts[g].segment);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub iou_thresholds: Vec<f64>,
    /// Classes that have ground truth, sorted by name.
    pub classes: Vec<String>,
    /// `ap[class][threshold]`.
    pub ap: Vec<Vec<f64>>,
    pub map: Vec<f64>,
    /// Detection labels with no ground truth anywhere, with their counts.
    pub ignored_labels: BTreeMap<String, usize>,
}

impl EvalResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for t in &self.iou_thresholds {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        let rows = self
            .classes
            .iter()
            .map(String::as_str)
            .zip(&self.ap)
            .chain(std::iter::once(("mAP", &self.map)));
        for (name, values) in rows {
            out.push_str(name);
            for v in values {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Plain-text table of AP in percent, one column per IoU threshold.
    pub fn to_table(&self) -> String {
        let name_width = self
            .classes
            .iter()
            .map(String::len)
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut out = format!("{:<name_width$}", "AP@IoU");
        for t in &self.iou_thresholds {
            let _ = write!(out, " {:>6}", format!("{t}"));
        }
        out.push('\n');
        let rows = self
            .classes
            .iter()
            .map(String::as_str)
            .zip(&self.ap)
            .chain(std::iter::once(("mAP", &self.map)));
        for (name, values) in rows {
            let _ = write!(out, "{name:<name_width$}");
            for v in values {
                let _ = write!(out, " {:>6.1}", v * 100.0);
            }
            out.push('\n');
        }
        out
    }
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("IoU threshold list is empty".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "IoU thresholds must lie in (0, 1], got {t}"
        )));
    }
    Ok(())
}

/// Per-class AP at each threshold. Classes are those present in the ground
/// truth; detections of any other label are counted in `ignored_labels`.
pub fn evaluate(detections: &DetectionFile, ground_truth: &GroundTruth, iou_thresholds: &[f64]) -> Result<EvalResult> {
    validate_thresholds(iou_thresholds)?;
    let mut gts: BTreeMap<&str, Vec<GtSegment>> = BTreeMap::new();
    for (video, segs) in &ground_truth.0 {
        for s in segs {
            tiou(s.segment, s.segment)?;
            gts.entry(s.label.as_str()).or_default().push(GtSegment {
                video: video.clone(),
                segment: s.segment,
            });
        }
    }
    let mut dets: BTreeMap<&str, Vec<ScoredSegment>> = BTreeMap::new();
    let mut ignored_labels = BTreeMap::new();
    for (video, records) in &detections.0 {
        for r in records {
            tiou(r.segment, r.segment)?;
            if gts.contains_key(r.label.as_str()) {
                dets.entry(r.label.as_str()).or_default().push(ScoredSegment {
                    video: video.clone(),
                    segment: r.segment,
                    score: r.score,
                });
            } else {
                *ignored_labels.entry(r.label.clone()).or_insert(0) += 1;
            }
        }
    }

    let classes: Vec<String> = gts.keys().map(|s| s.to_string()).collect();
    let ap: Vec<Vec<f64>> = gts
        .iter()
        .map(|(label, g)| {
            let d = dets.get(label).map(Vec::as_slice).unwrap_or(&[]);
            iou_thresholds
                .iter()
                .map(|&t| average_precision(d, g, t))
                .collect()
        })
        .collect();
    let map = (0..iou_thresholds.len())
        .map(|k| {
            if ap.is_empty() {
                0.0
            } else {
                ap.iter().map(|row| row[k]).sum::<f64>() / ap.len() as f64
            }
        })
        .collect();
    Ok(EvalResult {
        iou_thresholds: iou_thresholds.to_vec(),
        classes,
        ap,
        map,
        ignored_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;
    use crate::data::LabeledSegment;
    use crate::inference::DetectionRecord;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn sd(video: &str, s: f64, e: f64, score: f64) -> ScoredSegment {
        ScoredSegment { video: video.into(), segment: [s, e], score }
    }

    fn gt(video: &str, s: f64, e: f64) -> GtSegment {
        GtSegment { video: video.into(), segment: [s, e] }
    }

    #[test]
    fn tiou_cases() {
        assert_eq!(tiou([1.0, 4.0], [1.0, 4.0]).unwrap(), 1.0);
        assert!((tiou([0.0, 10.0], [5.0, 15.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tiou([0.0, 1.0], [2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(tiou([0.0, 1.0], [1.0, 3.0]).unwrap(), 0.0);
        assert!(tiou([2.0, 2.0], [0.0, 3.0]).is_err());
        assert!(tiou([0.0, 3.0], [3.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn tiou_symmetric_and_bounded(
            a0 in -50.0f64..50.0, la in 0.01f64..20.0,
            b0 in -50.0f64..50.0, lb in 0.01f64..20.0,
        ) {
            let (a, b) = ([a0, a0 + la], [b0, b0 + lb]);
            let x = tiou(a, b).unwrap();
            prop_assert_eq!(x, tiou(b, a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
            if x == 1.0 {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn ap_simple_cases() {
        let g = [gt("v", 1.0, 3.0)];
        assert_eq!(average_precision(&[sd("v", 1.0, 3.0, 0.9)], &g, 0.5), 1.0);
        let two = [sd("v", 1.0, 3.0, 0.9), sd("v", 5.0, 6.0, 0.2)];
        assert_eq!(average_precision(&two, &g, 0.5), 1.0);
        let flipped = [sd("v", 1.0, 3.0, 0.2), sd("v", 5.0, 6.0, 0.9)];
        assert_eq!(average_precision(&flipped, &g, 0.5), 0.5);
        assert_eq!(average_precision(&[], &g, 0.5), 0.0);
        assert_eq!(average_precision(&two, &[], 0.5), 0.0);
        // Same interval in a different video never matches.
        assert_eq!(average_precision(&[sd("w", 1.0, 3.0, 0.9)], &g, 0.1), 0.0);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let g = [gt("v", 0.0, 4.0), gt("v", 10.0, 14.0)];
        let d = [
            sd("v", 0.0, 4.0, 0.9),
            sd("v", 0.0, 4.0, 0.8),
            sd("v", 10.0, 14.0, 0.7),
        ];
        // Ranks: TP, FP, TP → precisions 1, 1/2, 2/3; interpolated 1 and 2/3.
        let ap = average_precision(&d, &g, 0.5);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    /// Reference: walk the ranked list one detection at a time, scanning every
    /// ground truth for the best unmatched candidate, then average the
    /// precision envelope at each true positive.
    fn naive_ap(dets: &[ScoredSegment], gts: &[GtSegment], thr: f64) -> f64 {
        if gts.is_empty() {
            return 0.0;
        }
        let mut remaining: Vec<usize> = (0..dets.len()).collect();
        let mut used = vec![false; gts.len()];
        let mut hits = Vec::new();
        while !remaining.is_empty() {
            let mut pick = 0;
            for k in 1..remaining.len() {
                let (a, b) = (&dets[remaining[k]], &dets[remaining[pick]]);
                let key_a = (a.video.clone(), a.segment[0], a.segment[1], remaining[k]);
                let key_b = (b.video.clone(), b.segment[0], b.segment[1], remaining[pick]);
                if a.score > b.score || (a.score == b.score && key_a.partial_cmp(&key_b) == Some(Ordering::Less)) {
                    pick = k;
                }
            }
            let d = &dets[remaining.remove(pick)];
            let mut chosen: Option<usize> = None;
            let mut chosen_iou = -1.0;
            for (g, truth) in gts.iter().enumerate() {
                if used[g] || truth.video != d.video {
                    continue;
                }
                let lo = d.segment[0].max(truth.segment[0]);
                let hi = d.segment[1].min(truth.segment[1]);
                let inter = if hi > lo { hi - lo } else { 0.0 };
                let union = (d.segment[1] - d.segment[0]) + (truth.segment[1] - truth.segment[0]) - inter;
                let iou = inter / union;
                if iou >= thr && iou > chosen_iou {
                    chosen = Some(g);
                    chosen_iou = iou;
                }
            }
            if let Some(g) = chosen {
                used[g] = true;
            }
            hits.push(chosen.is_some());
        }
        let precision_at = |k: usize| {
            hits[..=k].iter().filter(|h| **h).count() as f64 / (k + 1) as f64
        };
        let mut total = 0.0;
        for k in 0..hits.len() {
            if hits[k] {
                total += (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            }
        }
        total / gts.len() as f64
    }

    fn random_instance(rng: &mut SeededRng) -> (Vec<ScoredSegment>, Vec<GtSegment>) {
        let videos = ["a", "b", "c"];
        let n_gt = rng.int_inclusive(0, 5) as usize;
        let n_det = rng.int_inclusive(0, 20) as usize;
        let interval = |rng: &mut SeededRng| {
            let s = rng.int_inclusive(0, 30) as f64 * 0.5;
            [s, s + rng.int_inclusive(1, 12) as f64 * 0.5]
        };
        let gts = (0..n_gt)
            .map(|_| GtSegment {
                video: videos[rng.int_inclusive(0, 2) as usize].into(),
                segment: interval(rng),
            })
            .collect();
        let dets = (0..n_det)
            .map(|_| ScoredSegment {
                video: videos[rng.int_inclusive(0, 2) as usize].into(),
                segment: interval(rng),
                score: rng.int_inclusive(0, 8) as f64 / 8.0,
            })
            .collect();
        (dets, gts)
    }

    #[test]
    fn ap_matches_naive_reference() {
        let mut rng = SeededRng::new(77);
        for _ in 0..200 {
            let (dets, gts) = random_instance(&mut rng);
            for thr in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let a = average_precision(&dets, &gts, thr);
                let b = naive_ap(&dets, &gts, thr);
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn ap_non_increasing_in_threshold() {
        let mut rng = SeededRng::new(78);
        for _ in 0..200 {
            let (dets, gts) = random_instance(&mut rng);
            let aps: Vec<f64> = default_iou_thresholds()
                .iter()
                .map(|&t| average_precision(&dets, &gts, t))
                .collect();
            for w in aps.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{aps:?}");
            }
        }
    }

    #[test]
    fn lowest_scored_disjoint_false_positive_never_helps() {
        let mut rng = SeededRng::new(79);
        for _ in 0..200 {
            let (mut dets, gts) = random_instance(&mut rng);
            let before = average_precision(&dets, &gts, 0.5);
            dets.push(sd("a", 1000.0, 1001.0, -1.0));
            assert!(average_precision(&dets, &gts, 0.5) <= before);
        }
    }

    fn files() -> (DetectionFile, GroundTruth) {
        let mut g = GroundTruth::default();
        g.0.insert(
            "v1".into(),
            vec![
                LabeledSegment { label: "run".into(), segment: [1.0, 4.0] },
                LabeledSegment { label: "jump".into(), segment: [6.0, 8.0] },
            ],
        );
        g.0.insert(
            "v2".into(),
            vec![LabeledSegment { label: "run".into(), segment: [0.0, 2.0] }],
        );
        let mut d = DetectionFile::default();
        for (video, segs) in &g.0 {
            d.0.insert(
                video.clone(),
                segs.iter()
                    .map(|s| DetectionRecord { label: s.label.clone(), score: 1.0, segment: s.segment })
                    .collect(),
            );
        }
        (d, g)
    }

    #[test]
    fn perfect_detections_score_one_everywhere() {
        let (d, g) = files();
        let r = evaluate(&d, &g, &default_iou_thresholds()).unwrap();
        assert_eq!(r.classes, vec!["jump", "run"]);
        assert!(r.ap.iter().flatten().all(|&v| v == 1.0));
        assert!(r.map.iter().all(|&v| v == 1.0));
        let csv = r.to_csv();
        assert_eq!(csv.lines().next(), Some("class,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"));
        assert!(csv.contains("mAP,1.000000,"));
        assert!(r.to_table().contains("100.0"));
    }

    #[test]
    fn empty_detections_score_zero() {
        let (_, g) = files();
        let r = evaluate(&DetectionFile::default(), &g, &[0.5]).unwrap();
        assert_eq!(r.map, vec![0.0]);
        let r = evaluate(&DetectionFile::default(), &GroundTruth::default(), &[0.5]).unwrap();
        assert!(r.classes.is_empty());
        assert_eq!(r.map, vec![0.0]);
    }

    #[test]
    fn unknown_labels_are_reported_not_scored() {
        let (mut d, g) = files();
        d.0.get_mut("v1").unwrap().push(DetectionRecord {
            label: "swim".into(),
            score: 2.0,
            segment: [1.0, 4.0],
        });
        let r = evaluate(&d, &g, &[0.5]).unwrap();
        assert_eq!(r.map, vec![1.0]);
        assert_eq!(r.ignored_labels.get("swim"), Some(&1));
    }

    #[test]
    fn threshold_validation() {
        let (d, g) = files();
        assert!(evaluate(&d, &g, &[]).is_err());
        assert!(evaluate(&d, &g, &[0.0]).is_err());
        assert!(evaluate(&d, &g, &[1.2]).is_err());
    }
}
