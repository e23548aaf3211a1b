//! Native side of the demo. Everything here is plain Rust so it can be tested
//! without a browser; `lib.rs` only converts to and from JS.

use serde::{Deserialize, Serialize};

use wsal_core::data::{synthesize, Modality, SyntheticDataset, SyntheticSpec};
use wsal_core::inference::{detect, fused_attention, InferenceConfig, StreamActivations, TwoStreamModel};
use wsal_core::model::attention_targets;
use wsal_core::numerics::{smooth, GaussianKernel};
use wsal_core::training::{train_stream, EpochLosses, TrainConfig};
use wsal_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOptions {
    pub seed: u64,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sparsity: f64,
    pub sigma: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 7,
            epochs: 30,
            hidden_dim: 32,
            lr: 1e-3,
            // The training default of 0.1 leaves attention saturated on this data.
            alpha: 0.5,
            beta: t.weights.beta,
            gamma: t.weights.gamma,
            sparsity: t.weights.delta_sparsity,
            sigma: t.sigma,
        }
    }
}

impl SessionOptions {
    fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig {
            epochs: self.epochs,
            seed: self.seed,
            sigma: self.sigma,
            hidden_dim: self.hidden_dim,
            ..TrainConfig::default()
        };
        c.adam.lr = self.lr;
        c.weights.alpha = self.alpha;
        c.weights.beta = self.beta;
        c.weights.gamma = self.gamma;
        c.weights.delta_sparsity = self.sparsity;
        c
    }
}

/// Small enough to train in a browser tab in about a second.
pub fn demo_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 3,
        feature_dim: 16,
        train_videos: 24,
        test_videos: 6,
        min_segments: 40,
        max_segments: 64,
        max_blocks: 2,
        min_block_len: 4,
        max_block_len: 10,
        seed,
        ..SyntheticSpec::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Block {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoView {
    pub id: String,
    pub labels: Vec<String>,
    pub blocks: Vec<Block>,
    pub lambda_rgb: Vec<f64>,
    pub lambda_flow: Vec<f64>,
    pub lambda_fused: Vec<f64>,
    /// Guide targets of the RGB stream, using the true video labels.
    pub target_fg: Vec<f64>,
    pub target_bg: Vec<f64>,
    /// Averaged video-level probabilities; index 0 is background.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionView {
    pub label: String,
    pub t_start: usize,
    pub t_end: usize,
    pub score: f64,
}

pub struct DemoSession {
    data: SyntheticDataset,
    models: TwoStreamModel,
    sigma: f64,
    rgb_trace: Vec<EpochLosses>,
    flow_trace: Vec<EpochLosses>,
}

impl DemoSession {
    pub fn train(options: &SessionOptions) -> Result<Self> {
        let data = synthesize(&demo_spec(options.seed))?;
        let train = data.train_dataset();
        let config = options.train_config();
        let rgb = train_stream(&train, Modality::Rgb, &config)?;
        let flow = train_stream(&train, Modality::Flow, &config)?;
        Ok(Self {
            models: TwoStreamModel::new(rgb.model, flow.model)?,
            rgb_trace: rgb.trace,
            flow_trace: flow.trace,
            sigma: options.sigma,
            data,
        })
    }

    pub fn num_videos(&self) -> usize {
        self.data.test.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.data.classes
    }

    /// Total loss per epoch for the RGB and flow streams.
    pub fn loss_curves(&self) -> (Vec<f64>, Vec<f64>) {
        let total = |t: &[EpochLosses]| t.iter().map(|e| e.losses.total).collect();
        (total(&self.rgb_trace), total(&self.flow_trace))
    }

    fn test_video(&self, index: usize) -> Result<&wsal_core::data::SyntheticVideo> {
        self.data.test.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("video index {index} out of range (have {})", self.data.test.len()))
        })
    }

    pub fn view(&self, index: usize) -> Result<VideoView> {
        let sv = self.test_video(index)?;
        let v = &sv.video;
        let rgb = StreamActivations::compute(&self.models.rgb, v.require(Modality::Rgb)?)?;
        let flow = StreamActivations::compute(&self.models.flow, v.require(Modality::Flow)?)?;
        let targets = attention_targets(
            &self.models.rgb,
            v.require(Modality::Rgb)?,
            &v.label_set(self.data.classes.len())?,
            self.sigma,
        )?;
        let name = |c: usize| self.data.classes[c - 1].clone();
        Ok(VideoView {
            id: v.id.clone(),
            labels: v.labels.iter().map(|&c| name(c)).collect(),
            blocks: sv
                .blocks
                .iter()
                .map(|b| Block {
                    label: name(b.class_id),
                    start: b.start,
                    end: b.end,
                })
                .collect(),
            lambda_fused: fused_attention(&rgb.lambda, &flow.lambda)?,
            probs: rgb.p_fg.iter().zip(&flow.p_fg).map(|(a, b)| (a + b) / 2.0).collect(),
            lambda_rgb: rgb.lambda,
            lambda_flow: flow.lambda,
            target_fg: targets.fg,
            target_bg: targets.bg,
        })
    }

    pub fn detect(&self, index: usize, config: &InferenceConfig) -> Result<Vec<DetectionView>> {
        let v = &self.test_video(index)?.video;
        Ok(detect(&self.models, v, config)?
            .into_iter()
            .map(|d| DetectionView {
                label: self.data.classes[d.class_id - 1].clone(),
                t_start: d.t_start,
                t_end: d.t_end,
                score: d.score,
            })
            .collect())
    }
}

pub fn smooth_preview(values: &[f64], sigma: f64) -> Result<Vec<f64>> {
    smooth(values, &GaussianKernel::new(sigma)?)
}
