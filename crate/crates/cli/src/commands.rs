use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use tcm_core::data::{
    corpus_hash, generate_corpus, read_protocol, read_split, write_corpus, Corpus, Label, Split, PROTOCOL_FILE,
};
use tcm_core::experiment::{init_seed, run, RunSettings};
use tcm_core::metrics::{evaluate, write_scores, MetricsReport};
use tcm_core::model::{param_report, AblationVariant, ParamReport, TcmToggles};
use tcm_core::train::{fit, validate, Checkpoint};
use tcm_core::{Classifier, ModelConfig};

use crate::config::RunConfig;
use crate::log::JsonLog;

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const EPOCH_DIR: &str = "epochs";
pub const SCORES_FILE: &str = "scores.txt";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const PARAMS_FILE: &str = "params.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}

fn load_corpus(dir: &Path) -> Result<(Corpus, String)> {
    let read = |split| {
        read_split(dir, split).with_context(|| format!("cannot load {} split of {}", split.name(), dir.display()))
    };
    let corpus = Corpus {
        train: read(Split::Train)?,
        dev: read(Split::Dev)?,
        eval: read(Split::Eval)?,
    };
    let hash = corpus_hash(dir).with_context(|| format!("cannot hash {}", dir.display()))?;
    Ok((corpus, hash))
}

fn check_feature_dim(model: &ModelConfig, corpus: &Corpus) -> Result<()> {
    if let Some(u) = corpus.train.first() {
        if u.feature_dim() != model.feature_dim {
            bail!(
                "key model.feature_dim: config says {}, data has {} channels",
                model.feature_dim,
                u.feature_dim()
            );
        }
    }
    Ok(())
}

fn settings(cfg: &RunConfig, model: ModelConfig) -> Result<RunSettings> {
    Ok(RunSettings {
        model,
        train: cfg.train.clone(),
        costs: cfg.costs()?,
        eval_mode: cfg.eval.mode,
        jobs: cfg.eval.jobs,
    })
}

pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    cfg.corpus.validate().context("key corpus")?;
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("cannot list {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("{} is not empty; pass --force to overwrite", out.display());
        }
        if non_empty {
            fs::remove_dir_all(out).with_context(|| format!("cannot clear {}", out.display()))?;
        }
    }
    create_dir(out)?;
    let start = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    let manifest = write_corpus(&corpus, &cfg.corpus, out)?;
    cfg.write_resolved(out)?;
    let mut log = JsonLog::create(out)?;
    for s in &manifest.splits {
        log.event(json!({"event": "split", "split": s.split, "count": s.count, "n_bonafide": s.n_bonafide, "n_spoof": s.n_spoof}))?;
    }
    log.event(json!({"event": "corpus", "sha256": manifest.sha256}))?;
    eprintln!(
        "wrote {} utterances to {} in {:.1}s (sha256 {})",
        manifest.splits.iter().map(|s| s.count).sum::<usize>(),
        out.display(),
        start.elapsed().as_secs_f64(),
        &manifest.sha256[..16]
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (corpus, hash) = load_corpus(data)?;
    check_feature_dim(&cfg.model, &corpus)?;
    let epochs = out.join(EPOCH_DIR);
    create_dir(&epochs)?;
    cfg.write_resolved(out)?;
    let mut log = JsonLog::create(out)?;
    log.event(json!({"event": "start", "corpus_sha256": hash, "params": tcm_core::model::param_count(&cfg.model)?}))?;
    let start = Instant::now();
    let model = Classifier::new(cfg.model.clone(), init_seed(cfg.train.seed))?;
    let outcome = fit(model, &corpus.train, &corpus.dev, &cfg.train, |record, ckpt| {
        ckpt.save(epochs.join(format!("epoch_{:03}.ckpt", record.epoch)))?;
        log.event(json!({"event": "epoch", "epoch": record.epoch, "train_loss": record.train_loss, "val_loss": record.val_loss}))?;
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  ({:.0}s)",
            record.epoch,
            record.train_loss,
            record.val_loss,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    outcome.final_checkpoint.save(out.join(FINAL_CHECKPOINT))?;
    log.event(json!({
        "event": "final",
        "epochs": outcome.history.len(),
        "stopped_early": outcome.stopped_early,
        "averaged_epochs": outcome.averaged_epochs,
        "class_weights": outcome.class_weights,
        "val_loss": outcome.final_checkpoint.val_loss,
    }))?;
    eprintln!(
        "averaged epochs {:?}: val loss {:.4}; saved {}",
        outcome.averaged_epochs,
        outcome.final_checkpoint.val_loss,
        out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

/// Names the top-level model fields on which two configs disagree.
fn config_diff(a: &ModelConfig, b: &ModelConfig) -> Vec<String> {
    let (Ok(Value::Object(a)), Ok(Value::Object(b))) = (serde_json::to_value(a), serde_json::to_value(b)) else {
        return vec!["<unserializable>".into()];
    };
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| format!("model.{k}"))
        .collect()
}

#[derive(Debug, Serialize)]
struct EvalReport {
    split: Split,
    checkpoint: PathBuf,
    corpus_sha256: String,
    #[serde(flatten)]
    metrics: MetricsReport,
    /// Weighted cross-entropy with the training split's class weights.
    mean_loss: f64,
    class_weights: [f64; 2],
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<()> {
    cfg.validate()?;
    let costs = cfg.costs()?;
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("cannot load {}", checkpoint.display()))?;
    let stored = ckpt.model_config()?;
    let diff = config_diff(&stored, &cfg.model);
    if !diff.is_empty() {
        bail!(
            "checkpoint {} was trained with a different model config ({})",
            checkpoint.display(),
            diff.join(", ")
        );
    }
    let model = ckpt.classifier()?;
    let utts =
        read_split(data, split).with_context(|| format!("cannot load {} split of {}", split.name(), data.display()))?;
    let train_labels: Vec<Label> = read_protocol(data.join(Split::Train.name()).join(PROTOCOL_FILE))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    let weights = cfg.train.class_weights_for(&train_labels)?;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let start = Instant::now();
    let evaluation = evaluate(&model, &utts, cfg.eval.mode, cfg.train.target_t, &costs, cfg.eval.jobs)?;
    let mean_loss = validate(&model, &utts, cfg.eval.mode, cfg.train.target_t, weights)?;
    write_scores(&evaluation.scores, out.join(SCORES_FILE))?;
    let report = EvalReport {
        split,
        checkpoint: checkpoint.to_path_buf(),
        corpus_sha256: corpus_hash(data)?,
        metrics: evaluation.report,
        mean_loss,
        class_weights: weights,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    let mut log = JsonLog::create(out)?;
    log.event(json!({"event": "eval", "report": report}))?;
    eprintln!(
        "{} split, {} mode: EER {:.2}%  min t-DCF {:.4}  loss {:.4}  ({} scores, {:.1}s)",
        split.name(),
        serde_json::to_value(cfg.eval.mode)?.as_str().unwrap_or("?"),
        100.0 * report.metrics.eer,
        report.metrics.min_tdcf,
        mean_loss,
        evaluation.scores.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: AblationVariant,
    label: &'static str,
    toggles: TcmToggles,
    eer: f64,
    min_tdcf: f64,
    epochs: usize,
    averaged_epochs: Vec<u32>,
}

pub fn ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (corpus, hash) = load_corpus(data)?;
    check_feature_dim(&cfg.model, &corpus)?;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let mut log = JsonLog::create(out)?;
    let mut rows = Vec::new();
    for variant in AblationVariant::ALL {
        let start = Instant::now();
        let s = settings(cfg, cfg.model.with_toggles(variant.toggles()))?;
        let r = run(&corpus, &s, |_, _| Ok(()))?;
        let row = AblationRow {
            variant,
            label: variant.label(),
            toggles: variant.toggles(),
            eer: r.eval.report.eer,
            min_tdcf: r.eval.report.min_tdcf,
            epochs: r.fit.history.len(),
            averaged_epochs: r.fit.averaged_epochs,
        };
        log.event(json!({"event": "row", "corpus_sha256": hash, "row": row}))?;
        eprintln!(
            "{:<40} EER {:>6.2}%  min t-DCF {:.4}  ({:.0}s)",
            row.label,
            100.0 * row.eer,
            row.min_tdcf,
            start.elapsed().as_secs_f64()
        );
        rows.push(row);
    }
    write_json(
        &out.join(ABLATION_FILE),
        &json!({"corpus_sha256": hash, "seed": cfg.train.seed, "rows": rows}),
    )
}

#[derive(Debug, Serialize)]
struct SweepRow {
    heads: usize,
    tcm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    eer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_tdcf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn sweep_heads(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.train.validate().context("key train")?;
    if cfg.sweep.heads.is_empty() {
        bail!("key sweep.heads: the head list is empty");
    }
    let costs = cfg.costs()?;
    let (corpus, hash) = load_corpus(data)?;
    check_feature_dim(&cfg.model, &corpus)?;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let mut log = JsonLog::create(out)?;
    let mut rows = Vec::new();
    for &heads in &cfg.sweep.heads {
        for tcm in [false, true] {
            let toggles = TcmToggles {
                use_tcm: tcm,
                ..cfg.model.toggles
            };
            let model = ModelConfig {
                heads,
                toggles,
                ..cfg.model.clone()
            };
            let row = match model.validate() {
                Err(e) => SweepRow {
                    heads,
                    tcm,
                    eer: None,
                    min_tdcf: None,
                    error: Some(e.to_string()),
                },
                Ok(()) => {
                    let s = RunSettings {
                        model,
                        train: cfg.train.clone(),
                        costs,
                        eval_mode: cfg.eval.mode,
                        jobs: cfg.eval.jobs,
                    };
                    let r = run(&corpus, &s, |_, _| Ok(()))?;
                    SweepRow {
                        heads,
                        tcm,
                        eer: Some(r.eval.report.eer),
                        min_tdcf: Some(r.eval.report.min_tdcf),
                        error: None,
                    }
                }
            };
            log.event(json!({"event": "row", "corpus_sha256": hash, "row": row}))?;
            match (&row.eer, &row.error) {
                (Some(eer), _) => eprintln!("H={heads:<2} TCM={tcm:<5}  EER {:>6.2}%", 100.0 * eer),
                (_, Some(e)) => eprintln!("H={heads:<2} TCM={tcm:<5}  skipped: {e}"),
                _ => {}
            }
            rows.push(row);
        }
    }
    write_json(&out.join(SWEEP_FILE), &json!({"corpus_sha256": hash, "rows": rows}))
}

pub fn params(cfg: &RunConfig, out: Option<&Path>) -> Result<ParamReport> {
    cfg.model.validate().context("key model")?;
    let report = param_report(&cfg.model)?;
    if let Some(out) = out {
        create_dir(out)?;
        cfg.write_resolved(out)?;
        write_json(&out.join(PARAMS_FILE), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!(
        "{} parameters ({} without TCM); TCM adds {} = {}",
        report.total, report.baseline_total, report.tcm_delta, report.formula
    );
    Ok(report)
}
