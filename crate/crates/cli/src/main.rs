use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use wsal_core::checkpoint::Checkpoint;
use wsal_core::data::{generate_synthetic, Dataset, GroundTruth, Modality, SyntheticSpec};
use wsal_core::eval::{default_iou_thresholds, evaluate};
use wsal_core::gradcheck::{self, GradCheckConfig};
use wsal_core::inference::{detect_dataset, DetectionFile, InferenceConfig, TwoStreamModel};
use wsal_core::training::{trace_csv, train_stream_with, ModalitySelection, TrainConfig};
use wsal_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wsal", version, about = "Weakly-supervised temporal action localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-block synthetic dataset.
    Synth(SynthArgs),
    /// Train one model per modality from video-level labels.
    Train(TrainArgs),
    /// Run two-stream detection over a manifest.
    Detect(DetectArgs),
    /// Score detections against ground truth (AP per class and mAP).
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file overriding defaults; flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    train_videos: Option<usize>,
    #[arg(long)]
    test_videos: Option<usize>,
    #[arg(long)]
    min_segments: Option<usize>,
    #[arg(long)]
    max_segments: Option<usize>,
    #[arg(long)]
    min_blocks: Option<usize>,
    #[arg(long)]
    max_blocks: Option<usize>,
    #[arg(long)]
    min_block_len: Option<usize>,
    #[arg(long)]
    max_block_len: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    segment_seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Rgb,
    Flow,
    Both,
}

impl From<ModalityArg> for ModalitySelection {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Rgb => ModalitySelection::Rgb,
            ModalityArg::Flow => ModalitySelection::Flow,
            ModalityArg::Both => ModalitySelection::Both,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for checkpoints and loss traces.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Background-aware loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Self-guided attention loss weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Clustering loss weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Attention sparsity (mean L1) weight.
    #[arg(long)]
    sparsity: Option<f64>,
    /// Gaussian width of the guide-target smoothing, in segments.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden width of the attention network.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
    /// Also save `<modality>_epoch<N>.ckpt` every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding rgb.ckpt and flow.ckpt.
    #[arg(long, default_value = ".")]
    checkpoints: PathBuf,
    #[arg(long)]
    rgb_checkpoint: Option<PathBuf>,
    #[arg(long)]
    flow_checkpoint: Option<PathBuf>,
    /// Output detection JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum averaged video-level probability for a class to be localized.
    #[arg(long)]
    class_threshold: Option<f64>,
    /// Class-wise NMS IoU threshold.
    #[arg(long)]
    nms: Option<f64>,
    /// RGB weight in the fused score (flow gets 1 - theta).
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated, strictly increasing, in [0, 1).
    #[arg(long, value_delimiter = ',')]
    attention_thresholds: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Write the AP matrix as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Adds this offset to every analytic gradient (checks that the harness fails).
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

fn load_overrides<T: Serialize + DeserializeOwned>(defaults: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(defaults);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut merged = serde_json::to_value(defaults).expect("config serializes");
    merge(&mut merged, file);
    serde_json::from_value(merged).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_config(command: &str, value: serde_json::Value) {
    println!("effective config ({command}): {value}");
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = load_overrides(SyntheticSpec::default(), args.config.as_deref())?;
    set(&mut spec.num_classes, args.classes);
    set(&mut spec.feature_dim, args.dim);
    set(&mut spec.train_videos, args.train_videos);
    set(&mut spec.test_videos, args.test_videos);
    set(&mut spec.min_segments, args.min_segments);
    set(&mut spec.max_segments, args.max_segments);
    set(&mut spec.min_blocks, args.min_blocks);
    set(&mut spec.max_blocks, args.max_blocks);
    set(&mut spec.min_block_len, args.min_block_len);
    set(&mut spec.max_block_len, args.max_block_len);
    set(&mut spec.separation, args.separation);
    set(&mut spec.noise, args.noise);
    set(&mut spec.segment_seconds, args.segment_seconds);
    set(&mut spec.seed, args.seed);
    print_config("synth", json!({ "out": args.out, "spec": spec }));
    spec.validate()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let paths = generate_synthetic(&spec, &args.out)?;
    println!("train manifest: {}", paths.train_manifest.display());
    println!("test manifest: {}", paths.test_manifest.display());
    println!("ground truth: {}", paths.ground_truth.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_overrides(TrainConfig::default(), args.config.as_deref())?;
    set(&mut config.weights.alpha, args.alpha);
    set(&mut config.weights.beta, args.beta);
    set(&mut config.weights.gamma, args.gamma);
    set(&mut config.weights.delta_sparsity, args.sparsity);
    set(&mut config.sigma, args.sigma);
    set(&mut config.epochs, args.epochs);
    set(&mut config.hidden_dim, args.hidden);
    set(&mut config.adam.lr, args.lr);
    set(&mut config.seed, args.seed);
    set(&mut config.modality, args.modality.map(Into::into));
    set(&mut config.checkpoint_every, args.checkpoint_every);
    print_config(
        "train",
        json!({ "manifest": args.manifest, "out": args.out, "train": config }),
    );
    config.validate()?;

    let modalities = config.modality.modalities();
    let dataset = Dataset::load(&args.manifest, &modalities)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let out = args.out.as_path();
    let config = &config;
    let dataset = &dataset;
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = modalities
            .iter()
            .map(|&m| {
                scope.spawn(move || {
                    let every = config.checkpoint_every;
                    let trained = train_stream_with(dataset, m, config, |epoch, model, adam| {
                        if every > 0 && epoch % every == 0 {
                            Checkpoint {
                                model: model.clone(),
                                adam: adam.clone(),
                            }
                            .save(out.join(format!("{m}_epoch{epoch:04}.ckpt")))?;
                        }
                        Ok(())
                    })?;
                    let ckpt_path = out.join(format!("{m}.ckpt"));
                    Checkpoint {
                        model: trained.model,
                        adam: trained.adam,
                    }
                    .save(&ckpt_path)?;
                    write_text(&out.join(format!("{m}_trace.csv")), &trace_csv(&trained.trace))?;
                    if let Some(last) = trained.trace.last() {
                        let l = last.losses;
                        println!(
                            "{m}: epoch {} fg {:.4} bg {:.4} guide {:.4} cluster {:.4} sparse {:.4} total {:.4} -> {}",
                            last.epoch,
                            l.fg,
                            l.bg,
                            l.guide,
                            l.cluster,
                            l.sparse,
                            l.total,
                            ckpt_path.display()
                        );
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

fn detect(args: DetectArgs) -> Result<()> {
    let mut config = load_overrides(InferenceConfig::default(), args.config.as_deref())?;
    set(&mut config.class_prob_threshold, args.class_threshold);
    set(&mut config.nms_iou, args.nms);
    set(&mut config.theta, args.theta);
    set(&mut config.attention_thresholds, args.attention_thresholds);
    let rgb_path = args
        .rgb_checkpoint
        .unwrap_or_else(|| args.checkpoints.join("rgb.ckpt"));
    let flow_path = args
        .flow_checkpoint
        .unwrap_or_else(|| args.checkpoints.join("flow.ckpt"));
    print_config(
        "detect",
        json!({
            "manifest": args.manifest,
            "rgb_checkpoint": rgb_path,
            "flow_checkpoint": flow_path,
            "out": args.out,
            "inference": config,
        }),
    );
    config.validate()?;
    let models = TwoStreamModel::new(
        Checkpoint::load(&rgb_path)?.model,
        Checkpoint::load(&flow_path)?.model,
    )?;
    let dataset = Dataset::load(&args.manifest, &Modality::ALL)?;
    let detections = detect_dataset(&models, &dataset, &config)?;
    detections.save(&args.out)?;
    let count: usize = detections.0.values().map(Vec::len).sum();
    println!(
        "{count} detections over {} videos -> {}",
        detections.0.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let thresholds = args.thresholds.unwrap_or_else(default_iou_thresholds);
    print_config(
        "eval",
        json!({
            "detections": args.detections,
            "ground_truth": args.ground_truth,
            "iou_thresholds": thresholds,
            "csv": args.csv,
        }),
    );
    let detections = DetectionFile::load(&args.detections)?;
    let ground_truth = GroundTruth::load(&args.ground_truth)?;
    let result = evaluate(&detections, &ground_truth, &thresholds)?;
    for (label, count) in &result.ignored_labels {
        eprintln!("warning: ignored {count} detections of label {label:?} (no ground truth)");
    }
    print!("{}", result.to_table());
    if let Some(path) = &args.csv {
        write_text(path, &result.to_csv())?;
    }
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let mut config = GradCheckConfig::default();
    set(&mut config.seed, args.seed);
    set(&mut config.trials, args.trials);
    config.fault = args.inject_fault;
    print_config("gradcheck", json!(config));
    let report = gradcheck::run(&config)?;
    for t in &report.trials {
        println!(
            "trial {:>3}: T={} d={} h={} C={} sigma={} checked {} max rel error {:.3e} ({}[{}])",
            t.trial,
            t.frames,
            t.dims.feature_dim,
            t.dims.hidden_dim,
            t.dims.num_classes,
            t.sigma,
            t.checked,
            t.max_rel_error,
            t.worst_tensor,
            t.worst_index
        );
    }
    let passed = report.passed();
    println!(
        "max relative error {:.3e} (tolerance {:e}): {}",
        report.max_rel_error,
        report.tolerance,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Detect(a) => detect(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
