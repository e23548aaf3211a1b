//! Central finite-difference check of [`backward`](crate::model::backward).
//!
//! The numeric side only ever calls the forward pass. Guide targets are taken
//! from the unperturbed model and held fixed, matching how the analytic
//! gradient treats them.

use serde::Serialize;

use crate::error::Result;
use crate::model::{
    attention_targets, backward, forward_loss_with_targets, AttentionTargets, FeatureSequence,
    Gradients, LabelSet, LossWeights, ModelDims, ParamTensors, StreamModel, TENSOR_NAMES,
};
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub trials: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates with `|analytic| + |numeric|` below this are skipped.
    pub floor: f64,
    pub weights: LossWeights,
    /// Test hook: added to every analytic gradient coordinate.
    pub fault: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 20,
            epsilon: 1e-5,
            tolerance: 1e-5,
            floor: 1e-8,
            weights: LossWeights {
                alpha: 0.1,
                beta: 0.1,
                gamma: 0.1,
                delta_sparsity: 0.05,
            },
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub frames: usize,
    pub dims: ModelDims,
    pub sigma: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: Vec<TrialReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Central differences of the total loss for every parameter coordinate.
pub fn numeric_gradient(
    model: &StreamModel,
    features: &FeatureSequence,
    labels: &LabelSet,
    weights: &LossWeights,
    targets: &AttentionTargets,
    epsilon: f64,
) -> Result<Gradients> {
    let mut out = Gradients::zeros(model.dims);
    let mut probe = model.clone();
    let loss = |m: &StreamModel| -> Result<f64> {
        Ok(forward_loss_with_targets(m, features, labels, weights, targets.clone())?.0.total)
    };
    for k in 0..TENSOR_NAMES.len() {
        let len = model.tensors()[k].len();
        for i in 0..len {
            let original = model.tensors()[k][i];
            probe.tensors_mut()[k][i] = original + epsilon;
            let plus = loss(&probe)?;
            probe.tensors_mut()[k][i] = original - epsilon;
            let minus = loss(&probe)?;
            probe.tensors_mut()[k][i] = original;
            out.tensors_mut()[k][i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|)`, or `None` when both are below `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> Option<f64> {
    if analytic.abs() + numeric.abs() < floor {
        None
    } else {
        Some((analytic - numeric).abs() / analytic.abs().max(numeric.abs()))
    }
}

/// One random instance: `T ≤ 16, d ≤ 8, C ≤ 4, h ≤ 6`.
pub struct GradCheckInstance {
    pub model: StreamModel,
    pub features: FeatureSequence,
    pub labels: LabelSet,
    pub sigma: f64,
}

pub fn random_instance(rng: &mut SeededRng) -> GradCheckInstance {
    let frames = rng.int_inclusive(2, 16);
    let d = rng.int_inclusive(1, 8);
    let c = rng.int_inclusive(1, 4);
    let h = rng.int_inclusive(1, 6);
    let dims = ModelDims::new(d, h, c);
    let mut model = StreamModel::init_with_std(dims, 0.5, rng);
    model.b1 = rng.normal_vec(h, 0.5);
    model.b2 = 0.5 * rng.normal();
    let features = Matrix::from_vec(frames, d, rng.normal_vec(frames * d, 1.0)).expect("shape");
    let n_labels = rng.int_inclusive(1, c.min(2));
    let mut classes: Vec<usize> = (1..=c).collect();
    rng.shuffle(&mut classes);
    classes.truncate(n_labels);
    let labels = LabelSet::new(classes, c).expect("labels in range");
    let sigma = [0.0, 0.5, 1.0, 2.0][rng.int_inclusive(0, 3)];
    GradCheckInstance {
        model,
        features,
        labels,
        sigma,
    }
}

pub fn check_instance(
    trial: usize,
    inst: &GradCheckInstance,
    config: &GradCheckConfig,
) -> Result<TrialReport> {
    let weights = &config.weights;
    let targets = attention_targets(&inst.model, &inst.features, &inst.labels, inst.sigma)?;
    let (_, cache) = forward_loss_with_targets(
        &inst.model,
        &inst.features,
        &inst.labels,
        weights,
        targets.clone(),
    )?;
    let mut analytic = backward(&inst.model, &inst.features, &inst.labels, weights, &cache)?;
    if let Some(fault) = config.fault {
        for t in analytic.tensors_mut() {
            t.iter_mut().for_each(|g| *g += fault);
        }
    }
    let numeric = numeric_gradient(
        &inst.model,
        &inst.features,
        &inst.labels,
        weights,
        &targets,
        config.epsilon,
    )?;

    let mut report = TrialReport {
        trial,
        frames: inst.features.rows(),
        dims: inst.model.dims,
        sigma: inst.sigma,
        checked: 0,
        max_rel_error: 0.0,
        worst_tensor: TENSOR_NAMES[0],
        worst_index: 0,
    };
    for (k, (a, n)) in analytic.tensors().iter().zip(numeric.tensors()).enumerate() {
        for (i, (&ga, &gn)) in a.iter().zip(n.iter()).enumerate() {
            if let Some(err) = relative_error(ga, gn, config.floor) {
                report.checked += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_tensor = TENSOR_NAMES[k];
                    report.worst_index = i;
                }
            }
        }
    }
    Ok(report)
}

pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(config.seed);
    let mut trials = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let inst = random_instance(&mut rng);
        trials.push(check_instance(trial, &inst, config)?);
    }
    let max_rel_error = trials.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        trials,
        max_rel_error,
        tolerance: config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-10, -1e-10, 1e-8), None);
        assert_eq!(relative_error(2.0, 1.0, 1e-8), Some(0.5));
    }

    #[test]
    fn short_run_passes() {
        let config = GradCheckConfig {
            trials: 3,
            seed: 99,
            ..GradCheckConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn fault_injection_is_detected() {
        let config = GradCheckConfig {
            trials: 1,
            seed: 7,
            fault: Some(1e-3),
            ..GradCheckConfig::default()
        };
        assert!(!run(&config).unwrap().passed());
    }
}
