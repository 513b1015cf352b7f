use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use recflow::config::{apply_override, parse_config, parse_search_space, FeatureConfig, PipelineConfig};
use recflow::delta_stream::{DeltaSink, Endpoint};
use recflow::feature_select::{importance_report_json, select, train_with_gates, GateConfig};
use recflow::hpo::{run_search, SearchOptions, TrainerObjective, TrialStatus};
use recflow::sample_stream::{run_pipeline, JoinConfig};
use recflow::serving::{http_serve, score_csv, ItemCache, ServeOptions, ServingModel};
use recflow::trainer::{
    artifact_to_bytes, evaluate_params, export, load_artifact, load_dataset, train_datasets, Dataset, NoObserver,
};

use crate::{Command, ConfigArgs};

/// Artifact file written by `train` inside the model directory.
pub const MODEL_FILE: &str = "model.erm";
/// Training report written next to it.
pub const REPORT_FILE: &str = "report.json";

pub fn run(command: Command) -> Result<Option<String>> {
    let summary = match command {
        Command::Train {
            cfg,
            train,
            eval,
            model_dir,
            queue,
        } => cmd_train(&cfg, train, eval, &model_dir, queue.as_deref())?,
        Command::Eval { cfg, model, eval } => cmd_eval(&cfg, &model, eval)?,
        Command::Export { cfg, model_dir, output } => cmd_export(&cfg, &model_dir, &output)?,
        Command::Serve {
            model,
            queue,
            bind,
            cache_capacity,
            poll_interval_ms,
        } => {
            cmd_serve(&model, queue.as_deref(), bind, cache_capacity, poll_interval_ms)?;
            return Ok(None);
        }
        Command::Hpo {
            cfg,
            space,
            train,
            eval,
            max_trials,
            epochs,
            no_median_stopping,
            min_completed,
            output,
        } => {
            let config = load_config(&cfg)?;
            let opts = SearchOptions {
                max_trials,
                epochs: epochs.unwrap_or(config.train_config.num_epochs),
                seed: config.train_config.seed,
                median_stopping: !no_median_stopping,
                min_completed,
            };
            cmd_hpo(config, &space, train, eval, &opts, &output)?
        }
        Command::SelectFeatures {
            cfg,
            train,
            eval,
            keep_fraction,
            temperature,
            sparsity,
            gate_learning_rate,
            output_dir,
        } => {
            let defaults = GateConfig::default();
            let gates = GateConfig {
                temperature: temperature.unwrap_or(defaults.temperature),
                sparsity: sparsity.unwrap_or(defaults.sparsity),
                learning_rate: gate_learning_rate.unwrap_or(defaults.learning_rate),
                ..defaults
            };
            cmd_select(&cfg, train, eval, keep_fraction, &gates, &output_dir)?
        }
        Command::StreamJoin {
            cfg,
            input,
            output,
            stats,
            window_ms,
            lateness_ms,
        } => {
            let join = JoinConfig {
                label_window_ms: window_ms,
                allowed_lateness_ms: lateness_ms,
            };
            cmd_stream_join(&cfg, &input, &output, stats.as_deref(), join)?
        }
        Command::PredictFile { model, input, output } => cmd_predict_file(&model, &input, &output)?,
    };
    Ok(Some(summary.to_string()))
}

pub fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading config {}", args.config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("parsing config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg = apply_override(&cfg, "train_config.seed", &json!(seed))?;
    }
    Ok(cfg)
}

fn data_path(flag: Option<PathBuf>, configured: &str, what: &str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p),
        None if !configured.is_empty() => Ok(PathBuf::from(configured)),
        None => bail!("no {what} data: pass --{what} or set data_config.{what}_path"),
    }
}

fn load(cfg: &PipelineConfig, path: &Path) -> Result<Dataset> {
    load_dataset(path, &cfg.data_config, cfg.features()).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(
    args: &ConfigArgs,
    train: Option<PathBuf>,
    eval: Option<PathBuf>,
    model_dir: &Path,
    queue: Option<&str>,
) -> Result<Value> {
    let cfg = load_config(args)?;
    let train = load(&cfg, &data_path(train, &cfg.data_config.train_path, "train")?)?;
    let eval = load(&cfg, &data_path(eval, &cfg.data_config.eval_path, "eval")?)?;
    let mut publisher = match queue {
        Some(q) => Some(Endpoint::parse(q)?.open_publisher()?),
        None => None,
    };
    let sink = publisher.as_mut().map(|p| p as &mut dyn DeltaSink);
    let (artifact, report) = train_datasets(&cfg, &train, &eval, sink, &mut NoObserver)?;
    let model_path = model_dir.join(MODEL_FILE);
    export(&artifact, &model_path)?;
    let report_json = serde_json::to_string_pretty(&report)? + "\n";
    write_file(&model_dir.join(REPORT_FILE), report_json.as_bytes())?;
    Ok(json!({
        "command": "train",
        "model": model_path,
        "steps": report.steps,
        "model_version": report.model_version,
        "deltas_emitted": report.deltas_emitted,
        "stopped_early": report.stopped_early,
        "final_auc": report.final_auc(),
        "final_logloss": report.final_logloss(),
    }))
}

fn check_features(cfg: &PipelineConfig, artifact_cfg: &PipelineConfig) -> Result<()> {
    if cfg.feature_config != artifact_cfg.feature_config {
        bail!("the config's feature_config does not match the one the model was trained with");
    }
    Ok(())
}

fn cmd_eval(args: &ConfigArgs, model: &Path, eval: Option<PathBuf>) -> Result<Value> {
    let cfg = load_config(args)?;
    let artifact = load_artifact(model).with_context(|| format!("loading {}", model.display()))?;
    check_features(&cfg, &artifact.config)?;
    let data = load(&cfg, &data_path(eval, &cfg.data_config.eval_path, "eval")?)?;
    let (auc, logloss) = evaluate_params(&artifact.params, &data)?;
    Ok(json!({
        "command": "eval",
        "rows": data.len(),
        "model_version": artifact.version(),
        "auc": auc,
        "logloss": logloss,
    }))
}

fn cmd_export(args: &ConfigArgs, model_dir: &Path, output: &Path) -> Result<Value> {
    let cfg = load_config(args)?;
    let source = model_dir.join(MODEL_FILE);
    let artifact = load_artifact(&source).with_context(|| format!("loading {}", source.display()))?;
    check_features(&cfg, &artifact.config)?;
    let bytes = artifact_to_bytes(&artifact);
    write_file(output, &bytes)?;
    Ok(json!({
        "command": "export",
        "output": output,
        "bytes": bytes.len(),
        "model_version": artifact.version(),
    }))
}

fn cmd_serve(model: &Path, queue: Option<&str>, bind: String, cache_capacity: usize, poll_ms: u64) -> Result<()> {
    if cache_capacity == 0 {
        bail!("--cache-capacity must be positive");
    }
    let serving = Arc::new(ServingModel::load(model).with_context(|| format!("loading {}", model.display()))?);
    let consumer = match queue {
        Some(q) => Some(Endpoint::parse(q)?.open_consumer()?),
        None => None,
    };
    let opts = ServeOptions {
        bind,
        poll_interval: Duration::from_millis(poll_ms),
    };
    let version = serving.version();
    let handle = http_serve(serving, Arc::new(ItemCache::new(cache_capacity)), consumer, &opts)
        .with_context(|| format!("binding {}", opts.bind))?;
    println!(
        "{}",
        json!({ "command": "serve", "url": handle.url(), "model_version": version })
    );
    handle.join()?;
    Ok(())
}

fn cmd_hpo(
    cfg: PipelineConfig,
    space: &Path,
    train: Option<PathBuf>,
    eval: Option<PathBuf>,
    opts: &SearchOptions,
    output: &Path,
) -> Result<Value> {
    let text = fs::read_to_string(space).with_context(|| format!("reading {}", space.display()))?;
    let space = parse_search_space(&text)?;
    let train = load(&cfg, &data_path(train, &cfg.data_config.train_path, "train")?)?;
    let eval = load(&cfg, &data_path(eval, &cfg.data_config.eval_path, "eval")?)?;
    let mut objective = TrainerObjective {
        base: cfg,
        train: &train,
        eval: &eval,
    };
    let result = run_search(&mut objective, &space, opts);
    write_file(output, (serde_json::to_string_pretty(&result.trials)? + "\n").as_bytes())?;
    let pruned = result.trials.iter().filter(|t| t.status == TrialStatus::Pruned).count();
    Ok(json!({
        "command": "hpo",
        "output": output,
        "trials": result.trials.len(),
        "pruned": pruned,
        "total_epochs": result.total_epochs,
        "best_trial": result.best.as_ref().map(|t| t.trial_id),
        "best_metric": result.best.as_ref().and_then(|t| t.final_metric),
        "best_assignment": result.best.as_ref().map(|t| &t.assignment),
    }))
}

fn cmd_select(
    args: &ConfigArgs,
    train: Option<PathBuf>,
    eval: Option<PathBuf>,
    keep_fraction: f64,
    gates: &GateConfig,
    output_dir: &Path,
) -> Result<Value> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        bail!("--keep-fraction must lie in [0, 1]");
    }
    let cfg = load_config(args)?;
    let train = load(&cfg, &data_path(train, &cfg.data_config.train_path, "train")?)?;
    let valid = load(&cfg, &data_path(eval, &cfg.data_config.eval_path, "eval")?)?;
    let (importances, _) = train_with_gates(&cfg, &train, &valid, gates)?;
    let kept = select(cfg.features(), &importances, keep_fraction);
    let importance_path = output_dir.join("importance.json");
    write_file(&importance_path, (importance_report_json(&importances) + "\n").as_bytes())?;
    let fragment = json!({ "feature_config": FeatureConfig { features: kept.clone() } });
    let features_path = output_dir.join("feature_config.json");
    write_file(&features_path, (serde_json::to_string_pretty(&fragment)? + "\n").as_bytes())?;
    Ok(json!({
        "command": "select-features",
        "importance": importance_path,
        "feature_config": features_path,
        "kept": kept.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(),
        "dropped": cfg.features().len() - kept.len(),
    }))
}

fn cmd_stream_join(args: &ConfigArgs, input: &str, output: &Path, stats_path: Option<&Path>, join: JoinConfig) -> Result<Value> {
    let cfg = load_config(args)?;
    let stats = run_pipeline(input, join, &cfg.data_config, output)?;
    if let Some(p) = stats_path {
        write_file(p, (serde_json::to_string(&stats)? + "\n").as_bytes())?;
    }
    Ok(json!({
        "command": "stream-join",
        "output": output,
        "stats": stats,
    }))
}

fn cmd_predict_file(model: &Path, input: &Path, output: &Path) -> Result<Value> {
    let serving = ServingModel::load(model).with_context(|| format!("loading {}", model.display()))?;
    let reader = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let writer = fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let rows = score_csv(&serving, reader, writer)?;
    Ok(json!({
        "command": "predict-file",
        "output": output,
        "rows": rows,
        "model_version": serving.version(),
    }))
}
