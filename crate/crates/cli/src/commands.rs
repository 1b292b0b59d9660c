use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use probe_inject::evaluation::{
    evaluate_run, parse_responses, render_table, EmbeddingPairs, EvalOptions,
};
use probe_inject::feature_store::{join, load_manifest, parse_npy, FeatureMatrix, FeatureRecord, DatasetManifest};
use probe_inject::linear_head::{
    classifier_metrics, load_head, predict_batch, save_head, train as train_head, HeadParams,
};
use probe_inject::orchestrator::{build_backend, run_inference, InferenceOptions};
use probe_inject::prompt_injection::{
    augment_dataset, parse_conversations, parse_llava_conversations, write_conversations,
};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::{CliError, EvalArgs, InferArgs, InjectArgs, Log, ScoreArgs, TrainArgs};

/// Resolves an input path from flag or config and checks that it exists.
fn input(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &'static str) -> Result<PathBuf, CliError> {
    let path = flag.or_else(|| config.clone()).ok_or(CliError::MissingArg(what))?;
    if !path.exists() {
        return Err(CliError::NotFound { what, path });
    }
    Ok(path)
}

fn output(flag: Option<PathBuf>, config: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.clone()).ok_or(CliError::MissingArg("out"))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_matrix(path: &Path) -> Result<FeatureMatrix, CliError> {
    Ok(parse_npy(&read(path)?)?)
}

struct Loaded {
    features: FeatureMatrix,
    manifest: DatasetManifest,
}

fn load_inputs(inputs: crate::Inputs, config: &PipelineConfig) -> Result<Loaded, CliError> {
    // Both paths are checked before either file is read.
    let features = input(inputs.features, &config.paths.features, "features")?;
    let manifest = input(inputs.manifest, &config.paths.manifest, "manifest")?;
    Ok(Loaded {
        features: load_matrix(&features)?,
        manifest: load_manifest(&read(&manifest)?)?,
    })
}

fn load_head_dir(flag: Option<PathBuf>, config: &PipelineConfig) -> Result<HeadParams, CliError> {
    let dir = input(flag, &config.paths.head, "head")?;
    Ok(load_head(&dir)?.0)
}

pub fn train(args: TrainArgs, mut config: PipelineConfig, log: &mut Log) -> Result<(), CliError> {
    let out = output(args.out, &config.paths.out)?;
    let loaded = load_inputs(args.inputs, &config)?;
    let t = &mut config.train;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.threshold {
        t.threshold = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    t.l2_normalize |= args.l2_normalize;

    let records = join(&loaded.features, &loaded.manifest)?;
    log.event("train_start", json!({ "records": records.len(), "dim": loaded.features.dim(), "seed": t.seed }));
    let (params, training) = train_head(&records, t)?;
    for e in &training.epochs {
        log.event("epoch", json!(e));
    }
    save_head(&out, &params, t.seed, training.best_val_accuracy)?;
    let mut log_json = serde_json::to_string_pretty(&training).expect("training log serializes");
    log_json.push('\n');
    write(&out.join("training_log.json"), log_json)?;
    log.event(
        "trained",
        json!({
            "head": out,
            "best_epoch": training.best_epoch,
            "best_val_accuracy": training.best_val_accuracy,
            "stopped_early": training.stopped_early,
        }),
    );
    Ok(())
}

pub fn score(
    args: ScoreArgs,
    config: PipelineConfig,
    stdout: &mut dyn Write,
    log: &mut Log,
) -> Result<(), CliError> {
    let head = load_head_dir(args.head, &config)?;
    let loaded = load_inputs(args.inputs, &config)?;
    let threshold = args.threshold.unwrap_or(config.train.threshold);
    let records: Vec<FeatureRecord> = join(&loaded.features, &loaded.manifest)?
        .into_iter()
        .filter(|r| r.split == args.split)
        .collect();
    let preds = predict_batch(&records, &head)?;
    let labels: Vec<_> = records.iter().map(|r| r.label).collect();
    let m = classifier_metrics(&preds, &labels, threshold)?;
    if let Some(out) = args.out {
        let mut text = String::new();
        for p in &preds {
            text.push_str(&serde_json::to_string(p).expect("prediction serializes"));
            text.push('\n');
        }
        write(&out, text)?;
    }
    let line = json!({
        "split": format!("{:?}", args.split).to_lowercase(),
        "samples": records.len(),
        "threshold": threshold,
        "accuracy": m.accuracy,
        "f1_fake": m.f1_fake,
    });
    let _ = writeln!(stdout, "{line}");
    log.event("scored", json!({ "samples": records.len() }));
    Ok(())
}

pub fn inject(args: InjectArgs, config: PipelineConfig, log: &mut Log) -> Result<(), CliError> {
    let dataset = input(args.dataset, &config.paths.dataset, "dataset")?;
    let out = output(args.out, &config.paths.out)?;
    let head = load_head_dir(args.head, &config)?;
    let loaded = load_inputs(args.inputs, &config)?;
    let placement = args.placement.unwrap_or(config.infer.placement);

    let text = read_text(&dataset)?;
    let samples = if args.llava {
        parse_llava_conversations(&text)?
    } else {
        parse_conversations(&text)?
    };
    let wanted: HashSet<&str> = samples.iter().map(|s| s.image_id.as_str()).collect();
    let records: Vec<FeatureRecord> = join(&loaded.features, &loaded.manifest)?
        .into_iter()
        .filter(|r| wanted.contains(r.image_id.as_str()))
        .collect();
    let preds = predict_batch(&records, &head)?;
    let augmented = augment_dataset(&samples, &preds, placement)?;
    write(&out, write_conversations(&augmented))?;
    log.event("injected", json!({ "samples": augmented.len(), "placement": placement, "out": out }));
    Ok(())
}

pub fn infer(args: InferArgs, mut config: PipelineConfig, log: &mut Log) -> Result<(), CliError> {
    let out = output(args.out, &config.paths.out)?;
    let head = load_head_dir(args.head, &config)?;
    let loaded = load_inputs(args.inputs, &config)?;

    let b = &mut config.backend;
    if let Some(v) = args.backend {
        b.kind = v;
    }
    if args.endpoint.is_some() {
        b.endpoint = args.endpoint;
    }
    if let Some(v) = args.model {
        b.model = v;
    }
    if let Some(v) = args.max_in_flight {
        b.max_in_flight = v;
    }
    if let Some(v) = args.timeout_secs {
        b.timeout_secs = v;
    }
    if let Some(v) = args.retries {
        b.retries = v;
    }
    let threshold = args.threshold.unwrap_or(config.train.threshold);
    let backend_config = b.to_backend_config(threshold)?;
    let backend = build_backend(&backend_config)?;

    let i = config.infer;
    let options = InferenceOptions {
        inject: if args.no_inject {
            false
        } else {
            args.inject || i.inject
        },
        placement: args.placement.unwrap_or(i.placement),
        question: args.question.unwrap_or(i.question),
        max_in_flight: backend_config.max_in_flight,
        max_tokens: i.max_tokens,
        temperature: i.temperature,
    };
    log.event(
        "infer_start",
        json!({ "backend": backend.id(), "inject": options.inject, "placement": options.placement }),
    );
    let run = run_inference(&loaded.manifest, &loaded.features, &head, backend.as_ref(), &options)?;
    write(&out, run.to_ndjson())?;
    log.event("summary", json!(run.summary));
    Ok(())
}

pub fn eval(
    args: EvalArgs,
    config: PipelineConfig,
    stdout: &mut dyn Write,
    log: &mut Log,
) -> Result<(), CliError> {
    let responses = input(args.responses, &config.paths.responses, "responses")?;
    let manifest = input(args.manifest, &config.paths.manifest, "manifest")?;
    let embeddings = match (args.candidate_embeddings, args.reference_embeddings) {
        (Some(c), Some(r)) => {
            let c = input(Some(c), &None, "candidate embeddings")?;
            let r = input(Some(r), &None, "reference embeddings")?;
            Some(EmbeddingPairs {
                candidate: load_matrix(&c)?,
                reference: load_matrix(&r)?,
            })
        }
        _ => None,
    };
    let responses = parse_responses(&read_text(&responses)?)?;
    let manifest = load_manifest(&read(&manifest)?)?;
    let options = EvalOptions {
        beta: args.beta.unwrap_or(config.eval.beta),
    };
    let report = evaluate_run(&responses, &manifest, embeddings.as_ref(), options)?;
    if let Some(out) = args.out.or(config.paths.out) {
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write(&out, text)?;
    }
    let method = args.method.unwrap_or(config.eval.method);
    let _ = write!(stdout, "{}", render_table(&report, &method));
    log.event(
        "evaluated",
        json!({
            "samples": report.samples,
            "accuracy": report.detection.overall_accuracy,
            "failed_responses": report.failed_responses,
        }),
    );
    Ok(())
}
