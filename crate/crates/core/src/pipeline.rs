//! End-to-end runs: each function reads its inputs from a [`RunConfig`],
//! writes artifacts under one output directory and returns what it wrote.

use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::datasets::{Manifest, Split, Utterance};
use crate::dsp::{mfcc, read_wav, MfccConfig, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::fusion::{fuse_max, to_probabilities, ScoreKind, ScoreTable};
use crate::gcn::{self, GcnModel, GcnRun};
use crate::hubert::{self, AudioExample, FinetuneRun, HubertModel, PretrainRun};
use crate::metrics::{evaluate, EvaluationReport};
use crate::textgraph::EmbeddingTable;
use crate::training::save_history;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SCORES_FILE: &str = "scores.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads the configured manifest; relative audio paths are resolved against
/// the manifest's directory.
pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Error::invalid("no manifest configured"))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let m = Manifest::load(path)?;
    let rows = m
        .rows()
        .iter()
        .map(|u| Utterance {
            audio_path: if u.audio_path.is_relative() {
                base.join(&u.audio_path)
            } else {
                u.audio_path.clone()
            },
            ..u.clone()
        })
        .collect();
    Manifest::new(rows)
}

/// The configured GloVe file, or a table of hash vectors when none is set.
pub fn load_embeddings(cfg: &RunConfig) -> Result<EmbeddingTable> {
    match &cfg.embeddings {
        Some(p) => EmbeddingTable::load(p),
        None => {
            log::warn!("no embeddings file; every word uses its hash vector");
            Ok(EmbeddingTable::empty(cfg.gcn.dims.input))
        }
    }
}

/// MFCC features for each utterance, resampled to the canonical rate.
pub fn extract_features<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    mfcc_cfg: &MfccConfig,
) -> Result<Vec<AudioExample>> {
    mfcc_cfg.validate()?;
    let utts: Vec<&Utterance> = utterances.into_iter().collect();
    utts.par_iter()
        .map(|u| {
            let mut w = read_wav(&u.audio_path)?;
            if w.sample_rate != CANONICAL_RATE {
                w = w.resample_linear(CANONICAL_RATE)?;
            }
            let features = mfcc(&w, mfcc_cfg)
                .map_err(|e| Error::Data(format!("{}: {e}", u.id)))?
                .into_matrix();
            Ok(AudioExample {
                id: u.id.clone(),
                label: u.label,
                features,
            })
        })
        .collect()
}

fn split_rows(m: &Manifest, split: Split) -> Vec<&Utterance> {
    m.split(split).collect()
}

fn require_rows(rows: &[&Utterance], split: Split) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "manifest has no {} rows",
            split.name()
        )));
    }
    Ok(())
}

/// Trains the text branch; writes `checkpoint/`, `scores.csv`, `history.csv`
/// and `config.txt` under `out`.
pub fn train_gcn(cfg: &RunConfig, out: &Path) -> Result<GcnRun> {
    let mut cfg = cfg.clone();
    let manifest = load_manifest(&cfg)?;
    let table = load_embeddings(&cfg)?;
    cfg.gcn.dims.input = table.dim();
    cfg.validate()?;
    let (train_rows, test_rows) = (
        split_rows(&manifest, Split::Train),
        split_rows(&manifest, Split::Test),
    );
    require_rows(&train_rows, Split::Train)?;
    require_rows(&test_rows, Split::Test)?;
    let train = gcn::build_examples(train_rows, &table)?;
    let test = gcn::build_examples(test_rows, &table)?;
    let run = gcn::train_gcn(&train, &test, &cfg.gcn)?;
    ensure_dir(out)?;
    cfg.save_beside(out)?;
    run.model
        .to_checkpoint(cfg.seed)
        .save(&out.join(CHECKPOINT_DIR))?;
    run.scores.save(&out.join(SCORES_FILE))?;
    save_history(&run.history, &out.join(HISTORY_FILE))?;
    Ok(run)
}

/// Masked-prediction pretraining on the train split; writes `checkpoint/`,
/// `pretrain_log.csv` and `config.txt`.
pub fn pretrain_hubert(cfg: &RunConfig, out: &Path) -> Result<PretrainRun> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let rows = split_rows(&manifest, Split::Train);
    require_rows(&rows, Split::Train)?;
    let examples = extract_features(rows, &cfg.mfcc)?;
    let run = hubert::pretrain(&examples, &cfg.pretrain)?;
    ensure_dir(out)?;
    cfg.save_beside(out)?;
    run.model
        .to_checkpoint("pretrained", cfg.seed)
        .save(&out.join(CHECKPOINT_DIR))?;
    hubert::save_step_log(&run.log, &out.join(PRETRAIN_LOG_FILE))?;
    Ok(run)
}

/// Fine-tunes the configured pretrained checkpoint; writes `checkpoint/`,
/// `scores.csv`, `history.csv` and `config.txt`.
pub fn finetune_hubert(cfg: &RunConfig, out: &Path) -> Result<FinetuneRun> {
    cfg.validate()?;
    let ck_path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::invalid("fine-tuning needs a pretrained checkpoint"))?;
    let model = HubertModel::load(ck_path)?;
    let manifest = load_manifest(cfg)?;
    let (train_rows, test_rows) = (
        split_rows(&manifest, Split::Train),
        split_rows(&manifest, Split::Test),
    );
    require_rows(&train_rows, Split::Train)?;
    require_rows(&test_rows, Split::Test)?;
    let train = extract_features(train_rows, &cfg.mfcc)?;
    let test = extract_features(test_rows, &cfg.mfcc)?;
    let run = hubert::finetune(&model, &train, &test, &cfg.finetune)?;
    ensure_dir(out)?;
    cfg.save_beside(out)?;
    run.model
        .to_checkpoint("finetuned", cfg.seed)
        .save(&out.join(CHECKPOINT_DIR))?;
    run.scores.save(&out.join(SCORES_FILE))?;
    save_history(&run.history, &out.join(HISTORY_FILE))?;
    Ok(run)
}

/// Raw scores of the configured checkpoint (either branch) on one split.
pub fn score(cfg: &RunConfig, split: Split, out_csv: &Path) -> Result<ScoreTable> {
    let ck_path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::invalid("scoring needs a checkpoint"))?;
    let ck = Checkpoint::load(ck_path)?;
    let manifest = load_manifest(cfg)?;
    let rows = split_rows(&manifest, split);
    require_rows(&rows, split)?;
    let table = match ck.kind.as_str() {
        gcn::CHECKPOINT_KIND => {
            let model = GcnModel::from_checkpoint(&ck)?;
            let examples = gcn::build_examples(rows, &load_embeddings(cfg)?)?;
            gcn::score(&model, &examples)?
        }
        hubert::CHECKPOINT_KIND => {
            let model = HubertModel::from_checkpoint(&ck)?;
            hubert::score(&model, &extract_features(rows, &cfg.mfcc)?)?
        }
        other => return Err(Error::invalid(format!("unknown checkpoint kind {other:?}"))),
    };
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    table.save(out_csv)?;
    Ok(table)
}

fn as_probabilities(t: ScoreTable) -> Result<ScoreTable> {
    match t.kind() {
        ScoreKind::Raw => to_probabilities(&t),
        _ => Ok(t),
    }
}

/// Max fusion of two score files; raw tables are softmaxed first.
pub fn fuse_files(a: &Path, b: &Path, out_csv: &Path) -> Result<ScoreTable> {
    let fa = as_probabilities(ScoreTable::load(a)?)?;
    let fb = as_probabilities(ScoreTable::load(b)?)?;
    let fused = fuse_max(&fa, &fb)?;
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fused.save(out_csv)?;
    Ok(fused)
}

/// Metrics for a score file; writes `report.json` and `roc.csv` under `out`.
pub fn evaluate_file(scores: &Path, out: &Path) -> Result<EvaluationReport> {
    let table = as_probabilities(ScoreTable::load(scores)?)?;
    let report = evaluate(&table)?;
    ensure_dir(out)?;
    let json_path = out.join(REPORT_FILE);
    std::fs::write(&json_path, report.to_json() + "\n").map_err(|e| Error::io(&json_path, e))?;
    let roc_path = out.join(ROC_FILE);
    let file = std::fs::File::create(&roc_path).map_err(|e| Error::io(&roc_path, e))?;
    report.write_roc_csv(std::io::BufWriter::new(file))?;
    Ok(report)
}
