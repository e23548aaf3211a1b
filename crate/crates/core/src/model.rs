//! Per-stream model: bottom-up attention MLP, shared (C+1)-way classifier and
//! foreground/background cluster vectors, with every loss term and its
//! analytic gradient.
//!
//! Class index 0 is background throughout; action classes are `1..=C`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{axpy, dot, log_softmax, relu, sigmoid, smooth, GaussianKernel, Matrix, SeededRng};

/// `T × d` matrix of segment features for one modality of one video.
pub type FeatureSequence = Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim,
            num_classes,
        }
    }

    /// Classifier rows, background included.
    pub fn num_outputs(&self) -> usize {
        self.num_classes + 1
    }

    pub fn num_params(&self) -> usize {
        let (d, h, k) = (self.feature_dim, self.hidden_dim, self.num_outputs());
        h * d + h + h + 1 + k * d + 2 * d
    }
}

/// Flat access to every parameter tensor in a fixed order:
/// `w1, b1, w2, b2, classifier, u_fg, u_bg`.
pub trait ParamTensors {
    fn tensors(&self) -> [&[f64]; 7];
    fn tensors_mut(&mut self) -> [&mut [f64]; 7];
}

pub const TENSOR_NAMES: [&str; 7] = ["w1", "b1", "w2", "b2", "classifier", "u_fg", "u_bg"];

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            pub dims: ModelDims,
            /// `h × d` attention hidden layer.
            pub w1: Matrix,
            pub b1: Vec<f64>,
            /// Attention output layer (`1 × h`).
            pub w2: Vec<f64>,
            pub b2: f64,
            /// `(C+1) × d`; row 0 is background. No bias.
            pub classifier: Matrix,
            pub u_fg: Vec<f64>,
            pub u_bg: Vec<f64>,
        }

        impl $name {
            pub fn zeros(dims: ModelDims) -> Self {
                let ModelDims { feature_dim: d, hidden_dim: h, .. } = dims;
                Self {
                    dims,
                    w1: Matrix::zeros(h, d),
                    b1: vec![0.0; h],
                    w2: vec![0.0; h],
                    b2: 0.0,
                    classifier: Matrix::zeros(dims.num_outputs(), d),
                    u_fg: vec![0.0; d],
                    u_bg: vec![0.0; d],
                }
            }
        }

        impl ParamTensors for $name {
            fn tensors(&self) -> [&[f64]; 7] {
                [
                    self.w1.data(),
                    &self.b1,
                    &self.w2,
                    std::slice::from_ref(&self.b2),
                    self.classifier.data(),
                    &self.u_fg,
                    &self.u_bg,
                ]
            }

            fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
                [
                    self.w1.data_mut(),
                    &mut self.b1,
                    &mut self.w2,
                    std::slice::from_mut(&mut self.b2),
                    self.classifier.data_mut(),
                    &mut self.u_fg,
                    &mut self.u_bg,
                ]
            }
        }
    };
}

param_struct!(
    /// Learnable parameters of one modality stream.
    StreamModel
);
param_struct!(
    /// Gradient of the total loss, shaped exactly like [`StreamModel`].
    Gradients
);

pub(crate) fn same_shapes(a: &impl ParamTensors, b: &impl ParamTensors) -> bool {
    a.tensors().iter().zip(b.tensors().iter()).all(|(x, y)| x.len() == y.len())
}

impl StreamModel {
    /// Weights `~ N(0, 0.01²)` for `w1`, `w2`, classifier and both cluster
    /// vectors; biases zero.
    pub fn init(dims: ModelDims, rng: &mut SeededRng) -> Self {
        Self::init_with_std(dims, 0.01, rng)
    }

    pub fn init_with_std(dims: ModelDims, std: f64, rng: &mut SeededRng) -> Self {
        let ModelDims { feature_dim: d, hidden_dim: h, .. } = dims;
        let k = dims.num_outputs();
        let mut m = Self::zeros(dims);
        m.w1 = Matrix::from_vec(h, d, rng.normal_vec(h * d, std)).expect("shape");
        m.w2 = rng.normal_vec(h, std);
        m.classifier = Matrix::from_vec(k, d, rng.normal_vec(k * d, std)).expect("shape");
        m.u_fg = rng.normal_vec(d, std);
        m.u_bg = rng.normal_vec(d, std);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        ensure_dim("w1 rows", d.hidden_dim, self.w1.rows())?;
        ensure_dim("w1 cols", d.feature_dim, self.w1.cols())?;
        ensure_dim("b1", d.hidden_dim, self.b1.len())?;
        ensure_dim("w2", d.hidden_dim, self.w2.len())?;
        ensure_dim("classifier rows", d.num_outputs(), self.classifier.rows())?;
        ensure_dim("classifier cols", d.feature_dim, self.classifier.cols())?;
        ensure_dim("u_fg", d.feature_dim, self.u_fg.len())?;
        ensure_dim("u_bg", d.feature_dim, self.u_bg.len())?;
        for (name, t) in TENSOR_NAMES.iter().zip(self.tensors()) {
            if let Some(index) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: name,
                    index,
                });
            }
        }
        Ok(())
    }

    fn check_features(&self, features: &FeatureSequence) -> Result<()> {
        if features.rows() == 0 {
            return Err(Error::Empty("feature sequence"));
        }
        ensure_dim("feature dimension", self.dims.feature_dim, features.cols())
    }

    /// Per-frame class logits `w_c · x_t`, shape `T × (C+1)`.
    pub fn frame_logits(&self, features: &FeatureSequence) -> Result<Matrix> {
        self.check_features(features)?;
        let k = self.dims.num_outputs();
        let mut out = Matrix::zeros(features.rows(), k);
        for (t, x) in features.iter_rows().enumerate() {
            for c in 0..k {
                out.set(t, c, dot(self.classifier.row(c), x));
            }
        }
        Ok(out)
    }
}

/// Non-empty set of present action classes (`1..=C`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new(mut classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyLabels);
        }
        classes.sort_unstable();
        classes.dedup();
        if let Some(&bad) = classes.iter().find(|&&c| c == 0 || c > num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(Self(classes))
    }

    pub fn single(class: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![class], num_classes)
    }

    pub fn classes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        match self.0.iter().find(|&&c| c == 0 || c > num_classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
            None if self.0.is_empty() => Err(Error::EmptyLabels),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub delta_sparsity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            delta_sparsity: 0.0,
        }
    }
}

impl LossWeights {
    /// Foreground classification loss only.
    pub fn foreground_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta_sparsity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("sparsity", self.delta_sparsity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub fg: f64,
    pub bg: f64,
    pub guide: f64,
    pub cluster: f64,
    pub sparse: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.fg, self.bg, self.guide, self.cluster, self.sparse, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Self-guided attention targets, held constant with respect to gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTargets {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

/// Every intermediate of a forward pass that `backward` needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub lambda: Vec<f64>,
    /// `T × h` pre-activations of the attention hidden layer.
    pub hidden_pre: Matrix,
    pub hidden_post: Matrix,
    pub x_fg: Vec<f64>,
    pub x_bg: Vec<f64>,
    pub p_fg: Vec<f64>,
    pub p_bg: Vec<f64>,
    pub frame_logits: Matrix,
    pub z_fg: f64,
    pub z_bg: f64,
    pub targets: AttentionTargets,
}

struct AttentionPass {
    hidden_pre: Matrix,
    hidden_post: Matrix,
    lambda: Vec<f64>,
}

fn attention_pass(model: &StreamModel, features: &FeatureSequence) -> Result<AttentionPass> {
    model.check_features(features)?;
    let h = model.dims.hidden_dim;
    let t_len = features.rows();
    let mut hidden_pre = Matrix::zeros(t_len, h);
    let mut hidden_post = Matrix::zeros(t_len, h);
    let mut lambda = Vec::with_capacity(t_len);
    for (t, x) in features.iter_rows().enumerate() {
        let pre = hidden_pre.row_mut(t);
        for (j, a) in pre.iter_mut().enumerate() {
            *a = dot(model.w1.row(j), x) + model.b1[j];
        }
        let post = hidden_post.row_mut(t);
        for (r, &a) in post.iter_mut().zip(hidden_pre.row(t)) {
            *r = relu(a);
        }
        lambda.push(sigmoid(dot(&model.w2, hidden_post.row(t)) + model.b2));
    }
    Ok(AttentionPass {
        hidden_pre,
        hidden_post,
        lambda,
    })
}

/// Bottom-up attention `λ_t = σ(w2 · relu(W1 x_t + b1) + b2)`.
pub fn attention(model: &StreamModel, features: &FeatureSequence) -> Result<Vec<f64>> {
    Ok(attention_pass(model, features)?.lambda)
}

/// `(1/T) Σ_t weights_t · x_t`.
pub fn pool(features: &FeatureSequence, weights: &[f64]) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Err(Error::Empty("feature sequence"));
    }
    ensure_dim("pooling weights", features.rows(), weights.len())?;
    let mut out = vec![0.0; features.cols()];
    for (x, &w) in features.iter_rows().zip(weights) {
        axpy(w, x, &mut out);
    }
    let inv_t = 1.0 / features.rows() as f64;
    out.iter_mut().for_each(|v| *v *= inv_t);
    Ok(out)
}

pub fn video_logits(model: &StreamModel, pooled: &[f64]) -> Result<Vec<f64>> {
    model.classifier.matvec(pooled)
}

/// Softmax of the shared classifier over a pooled feature.
pub fn video_probs(model: &StreamModel, pooled: &[f64]) -> Result<Vec<f64>> {
    Ok(crate::numerics::softmax(&video_logits(model, pooled)?))
}

/// Mean cross-entropy over the present labels.
pub fn loss_fg(p_fg: &[f64], labels: &LabelSet) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    labels.check(p_fg.len().saturating_sub(1))?;
    let sum: f64 = labels.classes().iter().map(|&y| -p_fg[y].ln()).sum();
    Ok(sum / labels.len() as f64)
}

pub fn loss_bg(p_bg: &[f64]) -> f64 {
    -p_bg[0].ln()
}

/// Frame-level targets from the classifier's own per-frame softmax.
///
/// Foreground: max over present labels of `q_t[y]`. Background-complement:
/// `1 - q_t[0]`. Both smoothed with `G(sigma)`.
pub fn attention_targets(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    sigma: f64,
) -> Result<AttentionTargets> {
    let logits = model.frame_logits(features)?;
    targets_from_logits(&logits, labels, &GaussianKernel::new(sigma)?)
}

fn targets_from_logits(
    logits: &Matrix,
    labels: &LabelSet,
    kernel: &GaussianKernel,
) -> Result<AttentionTargets> {
    labels.check(logits.cols() - 1)?;
    let mut raw_fg = Vec::with_capacity(logits.rows());
    let mut raw_bg = Vec::with_capacity(logits.rows());
    for row in logits.iter_rows() {
        let log_q = log_softmax(row);
        let fg = labels
            .classes()
            .iter()
            .map(|&y| log_q[y].exp())
            .fold(f64::NEG_INFINITY, f64::max);
        raw_fg.push(fg);
        // Σ_{i≥1} q_i, computed directly rather than as 1 - q_0 to keep
        // precision when q_0 → 1.
        raw_bg.push(log_q[1..].iter().map(|l| l.exp()).sum());
    }
    Ok(AttentionTargets {
        fg: smooth(&raw_fg, kernel)?,
        bg: smooth(&raw_bg, kernel)?,
    })
}

pub fn loss_guide(lambda: &[f64], target_fg: &[f64], target_bg: &[f64]) -> Result<f64> {
    ensure_dim("guide target_fg", lambda.len(), target_fg.len())?;
    ensure_dim("guide target_bg", lambda.len(), target_bg.len())?;
    if lambda.is_empty() {
        return Err(Error::Empty("attention"));
    }
    let sum: f64 = lambda
        .iter()
        .zip(target_fg.iter().zip(target_bg))
        .map(|(l, (f, b))| (l - f).abs() + (l - b).abs())
        .sum();
    Ok(sum / lambda.len() as f64)
}

/// Returns `(z_fg, z_bg, log z_fg, log z_bg)`.
fn cluster_terms(model: &StreamModel, x_fg: &[f64], x_bg: &[f64]) -> (f64, f64, f64, f64) {
    let fg_logits = [dot(&model.u_fg, x_fg), dot(&model.u_bg, x_fg)];
    let bg_logits = [dot(&model.u_fg, x_bg), dot(&model.u_bg, x_bg)];
    let log_fg = log_softmax(&fg_logits)[0];
    let log_bg = log_softmax(&bg_logits)[1];
    (log_fg.exp(), log_bg.exp(), log_fg, log_bg)
}

/// `-log z_fg - log z_bg` with two-way softmaxes over the cluster vectors.
pub fn loss_cluster(model: &StreamModel, x_fg: &[f64], x_bg: &[f64]) -> Result<f64> {
    ensure_dim("cluster x_fg", model.dims.feature_dim, x_fg.len())?;
    ensure_dim("cluster x_bg", model.dims.feature_dim, x_bg.len())?;
    let (_, _, log_fg, log_bg) = cluster_terms(model, x_fg, x_bg);
    Ok(-log_fg - log_bg)
}

/// Mean attention, the L1 sparsity penalty.
pub fn loss_sparsity(lambda: &[f64]) -> f64 {
    if lambda.is_empty() {
        return 0.0;
    }
    lambda.iter().sum::<f64>() / lambda.len() as f64
}

/// Full forward pass. Guide targets are computed from the current classifier.
pub fn forward_loss(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    weights: &LossWeights,
    sigma: f64,
) -> Result<(LossReport, ForwardCache)> {
    let frame_logits = model.frame_logits(features)?;
    let targets = targets_from_logits(&frame_logits, labels, &GaussianKernel::new(sigma)?)?;
    forward_impl(model, features, labels, weights, frame_logits, targets)
}

/// Forward pass with externally fixed guide targets.
pub fn forward_loss_with_targets(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    weights: &LossWeights,
    targets: AttentionTargets,
) -> Result<(LossReport, ForwardCache)> {
    let frame_logits = model.frame_logits(features)?;
    ensure_dim("target_fg", features.rows(), targets.fg.len())?;
    ensure_dim("target_bg", features.rows(), targets.bg.len())?;
    forward_impl(model, features, labels, weights, frame_logits, targets)
}

fn forward_impl(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    weights: &LossWeights,
    frame_logits: Matrix,
    targets: AttentionTargets,
) -> Result<(LossReport, ForwardCache)> {
    labels.check(model.dims.num_classes)?;
    let pass = attention_pass(model, features)?;
    let lambda = pass.lambda;
    let complement: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();
    let x_fg = pool(features, &lambda)?;
    let x_bg = pool(features, &complement)?;

    let log_p_fg = log_softmax(&video_logits(model, &x_fg)?);
    let log_p_bg = log_softmax(&video_logits(model, &x_bg)?);
    let fg = -labels.classes().iter().map(|&y| log_p_fg[y]).sum::<f64>() / labels.len() as f64;
    let bg = -log_p_bg[0];
    let guide = loss_guide(&lambda, &targets.fg, &targets.bg)?;
    let (z_fg, z_bg, log_z_fg, log_z_bg) = cluster_terms(model, &x_fg, &x_bg);
    let cluster = -log_z_fg - log_z_bg;
    let sparse = loss_sparsity(&lambda);
    let total = fg
        + weights.alpha * bg
        + weights.beta * guide
        + weights.gamma * cluster
        + weights.delta_sparsity * sparse;

    let report = LossReport {
        fg,
        bg,
        guide,
        cluster,
        sparse,
        total,
    };
    let cache = ForwardCache {
        lambda,
        hidden_pre: pass.hidden_pre,
        hidden_post: pass.hidden_post,
        x_fg,
        x_bg,
        p_fg: log_p_fg.iter().map(|l| l.exp()).collect(),
        p_bg: log_p_bg.iter().map(|l| l.exp()).collect(),
        frame_logits,
        z_fg,
        z_bg,
        targets,
    };
    Ok((report, cache))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact gradient of the weighted total loss for the forward pass in `cache`.
pub fn backward(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    weights: &LossWeights,
    cache: &ForwardCache,
) -> Result<Gradients> {
    let dims = model.dims;
    let t_len = features.rows();
    model.check_features(features)?;
    labels.check(dims.num_classes)?;
    ensure_dim("cache lambda", t_len, cache.lambda.len())?;
    ensure_dim("cache hidden rows", t_len, cache.hidden_pre.rows())?;
    ensure_dim("cache hidden cols", dims.hidden_dim, cache.hidden_pre.cols())?;
    ensure_dim("cache p_fg", dims.num_outputs(), cache.p_fg.len())?;
    ensure_dim("cache p_bg", dims.num_outputs(), cache.p_bg.len())?;
    ensure_dim("cache x_fg", dims.feature_dim, cache.x_fg.len())?;
    ensure_dim("cache targets", t_len, cache.targets.fg.len())?;

    let mut grads = Gradients::zeros(dims);

    // Foreground cross-entropy: d/dlogits = p - mean one-hot.
    let mut g_fg = cache.p_fg.clone();
    let share = 1.0 / labels.len() as f64;
    for &y in labels.classes() {
        g_fg[y] -= share;
    }
    // Background-aware loss.
    let mut g_bg: Vec<f64> = cache.p_bg.iter().map(|p| weights.alpha * p).collect();
    g_bg[0] -= weights.alpha;

    grads.classifier.add_outer(1.0, &g_fg, &cache.x_fg);
    grads.classifier.add_outer(1.0, &g_bg, &cache.x_bg);
    let mut dx_fg = model.classifier.transpose_matvec(&g_fg)?;
    let mut dx_bg = model.classifier.transpose_matvec(&g_bg)?;

    // Clustering loss.
    let gamma = weights.gamma;
    if gamma != 0.0 {
        let a = gamma * (cache.z_fg - 1.0);
        axpy(a, &cache.x_fg, &mut grads.u_fg);
        axpy(-a, &cache.x_fg, &mut grads.u_bg);
        axpy(a, &model.u_fg, &mut dx_fg);
        axpy(-a, &model.u_bg, &mut dx_fg);

        let b = gamma * (1.0 - cache.z_bg);
        axpy(b, &cache.x_bg, &mut grads.u_fg);
        axpy(-b, &cache.x_bg, &mut grads.u_bg);
        axpy(b, &model.u_fg, &mut dx_bg);
        axpy(-b, &model.u_bg, &mut dx_bg);
    }

    // dL/dλ_t, then through the sigmoid and the hidden layer.
    let inv_t = 1.0 / t_len as f64;
    let mut d_hidden = vec![0.0; dims.hidden_dim];
    for (t, x) in features.iter_rows().enumerate() {
        let lambda = cache.lambda[t];
        let mut d_lambda = inv_t * (dot(x, &dx_fg) - dot(x, &dx_bg));
        d_lambda += weights.beta
            * inv_t
            * (sign(lambda - cache.targets.fg[t]) + sign(lambda - cache.targets.bg[t]));
        d_lambda += weights.delta_sparsity * inv_t;

        let d_score = d_lambda * lambda * (1.0 - lambda);
        if d_score == 0.0 {
            continue;
        }
        grads.b2 += d_score;
        axpy(d_score, cache.hidden_post.row(t), &mut grads.w2);
        for (j, dh) in d_hidden.iter_mut().enumerate() {
            *dh = if cache.hidden_pre.get(t, j) > 0.0 {
                d_score * model.w2[j]
            } else {
                0.0
            };
        }
        grads.w1.add_outer(1.0, &d_hidden, x);
        axpy(1.0, &d_hidden, &mut grads.b1);
    }

    Ok(grads)
}
