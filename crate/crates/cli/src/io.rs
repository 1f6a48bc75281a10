//! File formats: JSONL datasets with vocabulary sidecars, run-record
//! JSON, CSV tables, checkpoint files. All writes are atomic (temp file
//! in the target directory, then rename), so re-running a command leaves
//! either the old or the new file, never a torn one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use pfdfl_core::analysis::{ComplexityReport, ConsistencyRecord, SweepRow};
use pfdfl_core::data::{Dataset, PairedExample, Tokenizer, FIRST_WORD_ID};
use pfdfl_core::metrics::EvalReport;
use pfdfl_core::train::RunRecord;

use crate::error::{CliError, Result};

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Sidecar vocabulary path: `data.jsonl` -> `data.vocab`.
pub fn vocab_sidecar(data_path: &Path) -> PathBuf {
    data_path.with_extension("vocab")
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    for ex in &dataset.examples {
        out.push_str(&serde_json::to_string(ex).expect("dataset serializes"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())?;

    let mut vocab = String::new();
    for (word, id) in dataset.tokenizer.entries() {
        vocab.push_str(&format!("{word}\t{id}\n"));
    }
    atomic_write(&vocab_sidecar(path), vocab.as_bytes())
}

/// Strict JSONL record: exactly the five required fields.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    pair_id: String,
    context: String,
    response: String,
    knowledge: String,
    label: u8,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Usage(format!("{}: line {}: {e}", path.display(), i + 1))
        })?;
        examples.push(PairedExample {
            pair_id: rec.pair_id,
            context: rec.context,
            response: rec.response,
            knowledge: rec.knowledge,
            label: rec.label,
        });
    }
    let tokenizer = load_vocab(&vocab_sidecar(path))?;
    Dataset::from_parts(examples, tokenizer).map_err(CliError::from)
}

pub fn load_vocab(path: &Path) -> Result<Tokenizer> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (word, id) = line.split_once('\t').ok_or_else(|| {
            CliError::Usage(format!(
                "{}: line {}: expected word<TAB>id",
                path.display(),
                i + 1
            ))
        })?;
        let id: usize = id.trim().parse().map_err(|_| {
            CliError::Usage(format!("{}: line {}: bad id '{id}'", path.display(), i + 1))
        })?;
        if id != FIRST_WORD_ID + words.len() {
            return Err(CliError::Usage(format!(
                "{}: line {}: ids must be contiguous from {FIRST_WORD_ID}, got {id}",
                path.display(),
                i + 1
            )));
        }
        words.push(word.to_string());
    }
    Ok(Tokenizer::from_words(words))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

// ── CSV emitters (UTF-8, comma-separated, header row) ──────────────────

fn metric_fields(r: &EvalReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.accuracy, r.precision, r.recall, r.f1, r.pairwise_accuracy
    )
}

pub fn metrics_csv(record: &RunRecord) -> String {
    let mut out =
        String::from("epoch,train_loss,accuracy,precision,recall,f1,pairwise_accuracy\n");
    for ep in &record.epochs {
        out.push_str(&format!(
            "{},{:.6},{}\n",
            ep.epoch,
            ep.train_loss,
            metric_fields(&ep.val)
        ));
    }
    out
}

/// Layer weights of the hallucination branch at the final recorded epoch.
pub fn weights_csv(record: &RunRecord) -> Result<String> {
    let last = record.epochs.last().ok_or_else(|| {
        CliError::Usage("run record has no epochs; cannot export layer weights".into())
    })?;
    let mut out = String::from("layer,weight\n");
    for (i, w) in last.layer_weights_hall.iter().enumerate() {
        out.push_str(&format!("{i},{w:.6}\n"));
    }
    Ok(out)
}

pub fn consistency_csv(records: &[ConsistencyRecord]) -> String {
    let mut out = String::from("layer,unique,core,ratio\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.layer_index, r.unique_features, r.core_features, r.consistency_ratio
        ));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,accuracy,precision,recall,f1,pairwise_accuracy\n");
    for row in rows {
        out.push_str(&format!("{},{}\n", row.alpha, metric_fields(&row.report)));
    }
    out
}

pub fn ablation_csv(rows: &[pfdfl_core::analysis::AblationRow]) -> String {
    let mut out = String::from("variant,params,accuracy,precision,recall,f1,pairwise_accuracy\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.variant,
            row.params,
            metric_fields(&row.report)
        ));
    }
    out
}

pub fn complexity_csv(report: &ComplexityReport) -> String {
    let mut out =
        String::from("variant,params,flops,param_overhead_pct,flop_overhead_pct\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4}\n",
            r.variant, r.params, r.flops, r.param_overhead_pct, r.flop_overhead_pct
        ));
    }
    out
}
