use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use liftguard_core::dataset::{
    class_dir, generate_synthetic, load_dataset_with, load_model, oracle_label, read_frames, save_model, write_frames,
    OracleThresholds, SyntheticConfig,
};
use liftguard_core::lstm::{model_forward, predicted_label, ArchitectureConfig, ModelParams, NUM_CLASSES};
use liftguard_core::metrics::evaluate;
use liftguard_core::pose::{build_windows, FeatureConfig, Label, PoseFrame, WINDOW_LEN};
use liftguard_core::risk::{RiskConfig, SessionConfig};
use liftguard_core::training::{fit, split_dataset, TrainingConfig};
use liftguard_server::{Service, ServiceOptions};

use crate::{EvalArgs, GenArgs, PredictArgs, ServeArgs, TrainArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn clear_clips(dir: &Path, force: bool) -> Result<()> {
    let existing: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    if existing.is_empty() {
        return Ok(());
    }
    if !force {
        bail!(
            "{} already holds {} clips; pass --force to replace them",
            dir.display(),
            existing.len()
        );
    }
    for p in existing {
        fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
    }
    Ok(())
}

pub fn gen(a: &GenArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        n_sequences: a.n,
        style_mix: a.style_mix,
        camera_yaw_range: a.yaw_range,
        subject_scale_range: (a.scale_min, a.scale_max),
        noise_std: a.noise,
        seed,
    };
    cfg.validate()?;
    for label in Label::ALL {
        let dir = a.out.join(class_dir(label));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        clear_clips(&dir, a.force)?;
    }
    if a.n == 0 {
        log::warn!("--n 0: wrote an empty dataset tree at {}", a.out.display());
    }

    let clips = generate_synthetic(&cfg)?;
    let thresholds = OracleThresholds::default();
    let mut counts = [0usize; NUM_CLASSES];
    let mut disagreements = 0;
    for (i, clip) in clips.iter().enumerate() {
        let label = oracle_label(&clip.frames, &thresholds)?;
        let expected = match clip.style {
            liftguard_core::dataset::LiftStyle::Squat => Label::Good,
            liftguard_core::dataset::LiftStyle::Stoop => Label::Bad,
        };
        if label != expected {
            disagreements += 1;
            log::info!("clip {i}: {:?} labelled {label} by the posture rule", clip.style);
        }
        counts[label.index()] += 1;
        let path = a.out.join(class_dir(label)).join(format!("clip_{i:04}.jsonl"));
        write_frames(&path, &clip.frames)?;
    }
    if disagreements > 0 {
        log::warn!("{disagreements} clips were labelled against their generating style");
    }
    let summary = serde_json::json!({
        "root": a.out,
        "clips": clips.len(),
        "good": counts[Label::Good.index()],
        "bad": counts[Label::Bad.index()],
        "seed": seed,
    });
    println!("{summary}");
    Ok(())
}

fn training_config(a: &TrainArgs, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        early_stop_threshold: a.early_stop,
        early_stop_patience: a.patience,
        test_fraction: a.test_frac,
        seed,
        grad_clip_norm: a.clip_norm,
        batch_size: a.batch_size,
        ..TrainingConfig::default()
    }
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let cfg = training_config(a, seed);
    cfg.validate()?;
    let features = FeatureConfig {
        filter_head: !a.keep_head,
        canonicalize: a.canonicalize,
    };
    let mut dense_widths = a.dense_hidden.clone();
    dense_widths.push(NUM_CLASSES);
    let arch = ArchitectureConfig {
        input_width: features.width(),
        lstm_hidden: a.lstm_hidden.clone(),
        dense_widths,
        features,
    };
    arch.validate()?;

    let (data, manifest) = load_dataset_with(&a.data, &features)?;
    log::info!(
        "loaded {} windows from {} clips ({} good, {} bad)",
        data.len(),
        manifest.clips.len(),
        manifest.count(Label::Good),
        manifest.count(Label::Bad)
    );
    let (train_set, test_set) = split_dataset(&data, &cfg)?;
    log::info!("split: {} train, {} test", train_set.len(), test_set.len());
    let (model, history) = fit(&train_set, &arch, &cfg, |r| {
        log::info!(
            "epoch {:>3}  loss {:.6}  accuracy {:.4}",
            r.epoch,
            r.mean_loss,
            r.categorical_accuracy
        );
    })?;
    log::info!(
        "stopped after {} epochs: {:?}",
        history.epochs.len(),
        history.stop_reason
    );
    let report = evaluate(&model, &test_set)?;

    save_model(&model, &a.out)?;
    let dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_file(&dir.join("history.csv"), &history.to_csv())?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    let correct = report.confusion.counts[0][0] + report.confusion.counts[1][1];
    println!(
        "test accuracy {} ({correct}/{}) after {} epochs",
        report.accuracy,
        report.confusion.total(),
        history.epochs.len()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (data, _) = load_dataset_with(&a.data, &model.descriptor.features)?;
    let report = evaluate(&model, &data)?;
    let json = report.to_json();
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

/// One output line of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub window: usize,
    pub start_frame: usize,
    pub t_start: i64,
    pub t_end: i64,
    pub label: Label,
    pub probs: [f64; 2],
    pub confidence: f64,
}

/// Classifies every complete window of `frames` taken every `stride` frames.
pub fn predict_frames(model: &ModelParams, frames: &[PoseFrame], stride: usize) -> Result<Vec<PredictionLine>> {
    let features = frames
        .iter()
        .map(|f| model.descriptor.features.features(f))
        .collect::<liftguard_core::Result<Vec<_>>>()?;
    let windows = build_windows(&features, WINDOW_LEN, stride, "input")?;
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let probs = model_forward(model, w)?;
            let start = w.start_index();
            Ok(PredictionLine {
                window: i,
                start_frame: start,
                t_start: frames[start].timestamp_ms(),
                t_end: frames[start + WINDOW_LEN - 1].timestamp_ms(),
                label: predicted_label(&probs),
                probs,
                confidence: probs[0].max(probs[1]),
            })
        })
        .collect()
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    if a.stride == 0 {
        return Err(usage("--stride must be >= 1"));
    }
    let model = load_model(&a.model)?;
    let frames = read_frames(&a.input)?;
    if frames.len() < WINDOW_LEN {
        log::warn!(
            "{} has {} frames, fewer than one {WINDOW_LEN}-frame window; nothing to predict",
            a.input.display(),
            frames.len()
        );
    }
    let lines = predict_frames(&model, &frames, a.stride)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in &lines {
        writeln!(out, "{}", serde_json::to_string(line)?)?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    if !(a.idle_timeout > 0.0 && a.idle_timeout.is_finite()) {
        return Err(usage("--idle-timeout must be a positive number of seconds"));
    }
    let opts = ServiceOptions {
        session: SessionConfig {
            stride: a.stride,
            risk: RiskConfig {
                low_below: a.risk_low,
                high_above: a.risk_high,
                log_len: a.risk_log,
            },
        },
        idle_timeout: Duration::from_secs_f64(a.idle_timeout),
        max_message_bytes: a.max_message_bytes,
    };
    opts.session.validate()?;
    let model = load_model(&a.model)?;
    let service = Arc::new(Service::new(model, opts)?.with_model_source(a.model.display().to_string()));

    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async {
        let addr = format!("{}:{}", a.bind, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on ws://{}/ws", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        liftguard_server::serve(listener, service, shutdown).await?;
        Ok(())
    })
}
