//! Per-stream training: one video per Adam step, shuffled every epoch.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::model::{backward, forward_loss, LossReport, LossWeights, ModelDims, StreamModel};
use crate::numerics::SeededRng;
use crate::optimizer::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalitySelection {
    Rgb,
    Flow,
    #[default]
    Both,
}

impl ModalitySelection {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            ModalitySelection::Rgb => vec![Modality::Rgb],
            ModalitySelection::Flow => vec![Modality::Flow],
            ModalitySelection::Both => Modality::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Gaussian width for guide targets, in segments.
    pub sigma: f64,
    pub adam: AdamConfig,
    pub hidden_dim: usize,
    pub modality: ModalitySelection,
    /// Save an intermediate checkpoint every N epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            seed: 0,
            weights: LossWeights::default(),
            sigma: 2.0,
            adam: AdamConfig::default(),
            hidden_dim: 256,
            modality: ModalitySelection::Both,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.adam.lr)));
        }
        self.weights.validate()
    }
}

/// Mean of each loss term over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainedStream {
    pub modality: Modality,
    pub model: StreamModel,
    pub adam: AdamState,
    pub trace: Vec<EpochLosses>,
}

fn stream_tag(modality: Modality) -> u64 {
    match modality {
        Modality::Rgb => 0,
        Modality::Flow => 2,
    }
}

fn check_dataset(dataset: &Dataset, modality: Modality) -> Result<usize> {
    let first = dataset
        .videos
        .first()
        .ok_or(Error::Empty("training dataset"))?;
    let dim = first.require(modality)?.cols();
    for v in &dataset.videos {
        let feats = v.require(modality)?;
        if feats.cols() != dim {
            return Err(Error::DimensionMismatch {
                context: "feature dimension across videos",
                expected: dim,
                actual: feats.cols(),
            });
        }
        v.label_set(dataset.num_classes())?;
    }
    Ok(dim)
}

pub fn train_stream(dataset: &Dataset, modality: Modality, config: &TrainConfig) -> Result<TrainedStream> {
    train_stream_with(dataset, modality, config, |_, _, _| Ok(()))
}

/// Like [`train_stream`], calling `on_epoch(epoch, model, adam)` after every
/// epoch (1-based).
pub fn train_stream_with<F>(
    dataset: &Dataset,
    modality: Modality,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainedStream>
where
    F: FnMut(usize, &StreamModel, &AdamState) -> Result<()>,
{
    config.validate()?;
    let feature_dim = check_dataset(dataset, modality)?;
    let num_classes = dataset.num_classes();
    let labels = dataset
        .videos
        .iter()
        .map(|v| v.label_set(num_classes))
        .collect::<Result<Vec<_>>>()?;

    let dims = ModelDims::new(feature_dim, config.hidden_dim, num_classes);
    let tag = stream_tag(modality);
    let mut init_rng = SeededRng::derive(config.seed, tag);
    let mut order_rng = SeededRng::derive(config.seed, tag + 1);
    let mut model = StreamModel::init(dims, &mut init_rng);
    let mut adam = AdamState::new(dims, config.adam);
    let mut order: Vec<usize> = (0..dataset.videos.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order_rng.shuffle(&mut order);
        let mut sum = LossReport::default();
        for &i in &order {
            let video = &dataset.videos[i];
            let features = video.require(modality)?;
            let (report, cache) =
                forward_loss(&model, features, &labels[i], &config.weights, config.sigma)?;
            if !report.is_finite() {
                return Err(Error::NonFiniteLoss {
                    video: video.id.clone(),
                    epoch,
                });
            }
            let grads = backward(&model, features, &labels[i], &config.weights, &cache)?;
            adam.apply(&mut model, &grads).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss {
                    video: video.id.clone(),
                    epoch,
                },
                other => other,
            })?;
            sum.fg += report.fg;
            sum.bg += report.bg;
            sum.guide += report.guide;
            sum.cluster += report.cluster;
            sum.sparse += report.sparse;
            sum.total += report.total;
        }
        let n = order.len() as f64;
        trace.push(EpochLosses {
            epoch,
            losses: LossReport {
                fg: sum.fg / n,
                bg: sum.bg / n,
                guide: sum.guide / n,
                cluster: sum.cluster / n,
                sparse: sum.sparse / n,
                total: sum.total / n,
            },
        });
        on_epoch(epoch, &model, &adam)?;
    }

    Ok(TrainedStream {
        modality,
        model,
        adam,
        trace,
    })
}

/// Trains every selected stream; with both selected the streams run on two
/// threads since they share nothing.
pub fn train_streams(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<TrainedStream>> {
    let modalities = config.modality.modalities();
    if modalities.len() == 1 {
        return Ok(vec![train_stream(dataset, modalities[0], config)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = modalities
            .iter()
            .map(|&m| scope.spawn(move || train_stream(dataset, m, config)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

pub fn trace_csv(trace: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,l_fg,l_bg,l_guide,l_cluster,l_sparse,total\n");
    for e in trace {
        let l = &e.losses;
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            e.epoch, l.fg, l.bg, l.guide, l.cluster, l.sparse, l.total
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SyntheticSpec};
    use crate::model::ParamTensors;

    fn tiny() -> Dataset {
        let spec = SyntheticSpec {
            num_classes: 3,
            feature_dim: 8,
            train_videos: 6,
            test_videos: 1,
            min_segments: 20,
            max_segments: 30,
            max_blocks: 2,
            min_block_len: 3,
            max_block_len: 6,
            seed: 5,
            ..SyntheticSpec::default()
        };
        synthesize(&spec).unwrap().train_dataset()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            hidden_dim: 8,
            seed: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let config = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        assert!(matches!(
            train_stream(&tiny(), Modality::Rgb, &config),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = tiny();
        let a = train_stream(&data, Modality::Flow, &small_config()).unwrap();
        let b = train_stream(&data, Modality::Flow, &small_config()).unwrap();
        for (x, y) in a.model.tensors().iter().zip(b.model.tensors()) {
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.adam.step_count, 18);
    }

    #[test]
    fn missing_modality_is_reported() {
        let mut data = tiny();
        data.videos[2].flow = None;
        let err = train_stream(&data, Modality::Flow, &small_config()).unwrap_err();
        assert!(matches!(err, Error::MissingModality { ref video, .. } if video == &data.videos[2].id));
    }

    #[test]
    fn nan_features_abort_with_video_name() {
        let mut data = tiny();
        let rgb = data.videos[0].rgb.as_mut().unwrap();
        rgb.set(0, 0, f64::NAN);
        let err = train_stream(&data, Modality::Rgb, &small_config()).unwrap_err();
        assert!(err.to_string().contains(&data.videos[0].id), "{err}");
    }

    #[test]
    fn training_leaves_dataset_untouched() {
        let data = tiny();
        let copy = data.clone();
        let config = TrainConfig {
            modality: ModalitySelection::Both,
            ..small_config()
        };
        let streams = train_streams(&data, &config).unwrap();
        assert_eq!(streams.len(), 2);
        assert_eq!(data, copy);
    }

    #[test]
    fn foreground_loss_decreases_early() {
        let data = synthesize(&SyntheticSpec {
            train_videos: 20,
            test_videos: 1,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .train_dataset();
        for seed in 0..3 {
            let config = TrainConfig {
                epochs: 5,
                seed,
                ..TrainConfig::default()
            };
            let trace = train_stream(&data, Modality::Rgb, &config).unwrap().trace;
            for w in trace.windows(2) {
                assert!(w[1].losses.fg <= w[0].losses.fg, "seed {seed}: {trace:?}");
            }
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let t = train_stream(&tiny(), Modality::Rgb, &small_config()).unwrap();
        let csv = trace_csv(&t.trace);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,l_fg,l_bg,l_guide,l_cluster,l_sparse,total"));
        assert_eq!(lines.count(), 3);
    }
}
