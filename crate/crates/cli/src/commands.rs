//! Command implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pfdfl_core::analysis::{
    ablation_cell, complexity_report, consistency_report, sweep_cell, AblationRow, SweepRow,
};
use pfdfl_core::checkpoint;
use pfdfl_core::data::{generate_synthetic, TaskTemplate};
use pfdfl_core::gradcheck::{check_engine_ops, check_full_model};
use pfdfl_core::model::{DualModel, ModelVariant};
use pfdfl_core::train::{self, evaluate, RunRecord, TrainObserver};
use pfdfl_core::Error as CoreError;

use crate::config::RunConfigFile;
use crate::error::{CliError, Result};
use crate::io;

/// Worker cap for sweep/ablate cells, from PFDFL_THREADS (default 1).
pub fn worker_count() -> usize {
    std::env::var("PFDFL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs independent seeded jobs on up to `workers` threads, preserving
/// input order in the results.
fn run_cells<J, T, F>(jobs: Vec<J>, workers: usize, cell: F) -> Result<Vec<T>>
where
    J: Send + Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(&cell).collect();
    }
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let out = cell(&jobs[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub struct GenDataArgs {
    pub out: PathBuf,
    pub pairs: usize,
    pub seed: u64,
    pub vocab: usize,
    pub knowledge_len: usize,
    pub response_len: usize,
    pub corrupt: usize,
    pub template: String,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    TaskTemplate::parse(&args.template).map_err(CliError::from)?;
    if args.corrupt == 0 {
        eprintln!(
            "warning: corrupt_count = 0 generates the null-signal control; \
             members of every pair are identical and accuracy is pinned at chance"
        );
    }
    let spec = pfdfl_core::data::SyntheticSpec {
        n_pairs: args.pairs,
        vocab_words: args.vocab,
        knowledge_len: args.knowledge_len,
        response_len: args.response_len,
        corrupt_count: args.corrupt,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&spec).map_err(CliError::from)?;
    io::write_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} examples ({} pairs, {} hallucinated) to {}",
        dataset.examples.len(),
        dataset.n_pairs(),
        dataset.examples.iter().filter(|e| e.label == 1).count(),
        args.out.display()
    );
    println!(
        "vocabulary: {} words + 4 reserved ids -> {}",
        args.vocab,
        io::vocab_sidecar(&args.out).display()
    );
    Ok(())
}

struct CheckpointWriter {
    dir: PathBuf,
    enabled: bool,
}

impl TrainObserver for CheckpointWriter {
    fn on_checkpoint(&mut self, epoch: usize, model: &DualModel) -> pfdfl_core::Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let path = self.dir.join(format!("checkpoint_epoch_{epoch:03}.pfdl"));
        let bytes = checkpoint::encode(&model.store);
        io::atomic_write(&path, &bytes).map_err(|e| CoreError::Checkpoint {
            msg: e.to_string(),
        })
    }
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub variant: Option<String>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load_or_default(args.config.as_deref())?;
    cfg.apply_overrides(args.variant.as_deref(), args.alpha, args.seed)?;
    let dataset = io::load_dataset(&args.data)?;
    let template = TaskTemplate::parse(&cfg.data.template).map_err(CliError::from)?;
    let model_cfg = cfg.model_config(dataset.tokenizer.vocab_size())?;
    let train_cfg = cfg.train_config()?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    io::write_json(&args.out.join("config.json"), &cfg)?;

    let mut model = DualModel::init(model_cfg, train_cfg.seed).map_err(CliError::from)?;
    let mut observer = CheckpointWriter {
        dir: args.out.clone(),
        enabled: cfg.train.save_checkpoints,
    };
    let record = train::train(&mut model, &dataset, template, &train_cfg, &mut observer)
        .map_err(CliError::from)?;

    io::write_json(&args.out.join("run_record.json"), &record)?;
    io::atomic_write(
        &args.out.join("metrics.csv"),
        io::metrics_csv(&record).as_bytes(),
    )?;

    match record.epochs.last() {
        Some(ep) => println!(
            "{} epochs done; final val accuracy {:.4}, pairwise {:.4} -> {}",
            record.epochs.len(),
            ep.val.accuracy,
            ep.val.pairwise_accuracy,
            args.out.display()
        ),
        None => println!("0 epochs configured; wrote initial checkpoint only"),
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let run_dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_path = run_dir.join("config.json");
    if !cfg_path.exists() {
        return Err(CliError::Usage(format!(
            "no config.json next to {}; checkpoints are interpreted against their run's config",
            args.checkpoint.display()
        )));
    }
    let cfg = RunConfigFile::load(&cfg_path)?;
    let dataset = io::load_dataset(&args.data)?;
    let template = TaskTemplate::parse(&cfg.data.template).map_err(CliError::from)?;
    let model_cfg = cfg.model_config(dataset.tokenizer.vocab_size())?;
    let train_cfg = cfg.train_config()?;

    let mut model = DualModel::init(model_cfg, train_cfg.seed).map_err(CliError::from)?;
    let bytes =
        std::fs::read(&args.checkpoint).map_err(|e| CliError::io(&args.checkpoint, e))?;
    checkpoint::decode_into(&bytes, &mut model.store).map_err(CliError::from)?;

    let all: Vec<usize> = (0..dataset.examples.len()).collect();
    let (report, _) =
        evaluate(&model, &dataset, &all, template, train_cfg.alpha).map_err(CliError::from)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

pub struct AblateArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
}

pub fn ablate_cmd(args: &AblateArgs) -> Result<()> {
    let cfg = RunConfigFile::load_or_default(args.config.as_deref())?;
    let dataset = io::load_dataset(&args.data)?;
    let template = TaskTemplate::parse(&cfg.data.template).map_err(CliError::from)?;
    let model_cfg = cfg.model_config(dataset.tokenizer.vocab_size())?;
    let train_cfg = cfg.train_config()?;

    let rows: Vec<AblationRow> = run_cells(
        ModelVariant::all().to_vec(),
        worker_count(),
        |&variant| {
            ablation_cell(&dataset, template, &model_cfg, &train_cfg, variant)
                .map_err(CliError::from)
        },
    )?;
    io::atomic_write(&args.out, io::ablation_csv(&rows).as_bytes())?;
    for row in &rows {
        println!(
            "{:>8}: accuracy {:.4} pairwise {:.4} ({} params)",
            row.variant, row.report.accuracy, row.report.pairwise_accuracy, row.params
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub ratios: Option<String>,
    pub out: PathBuf,
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let cfg = RunConfigFile::load_or_default(args.config.as_deref())?;
    let ratios: Vec<f64> = match &args.ratios {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad ratio '{s}'")))
            })
            .collect::<Result<_>>()?,
        None => cfg.analysis.ratios.clone(),
    };
    if ratios.is_empty() {
        return Err(CliError::Usage("empty ratio list".into()));
    }
    let dataset = io::load_dataset(&args.data)?;
    let template = TaskTemplate::parse(&cfg.data.template).map_err(CliError::from)?;
    let model_cfg = cfg.model_config(dataset.tokenizer.vocab_size())?;
    let train_cfg = cfg.train_config()?;

    let rows: Vec<SweepRow> = run_cells(ratios, worker_count(), |&alpha| {
        sweep_cell(&dataset, template, &model_cfg, &train_cfg, alpha).map_err(CliError::from)
    })?;
    io::atomic_write(&args.out, io::sweep_csv(&rows).as_bytes())?;
    for row in &rows {
        println!(
            "alpha {:>5}: accuracy {:.4} pairwise {:.4}",
            row.alpha, row.report.accuracy, row.report.pairwise_accuracy
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub enum AnalyzeArgs {
    Consistency { run: PathBuf, out: PathBuf },
    Weights { run: PathBuf, out: PathBuf },
    Complexity {
        config: Option<PathBuf>,
        out: PathBuf,
        seq_len: Option<usize>,
    },
}

pub fn analyze_cmd(args: &AnalyzeArgs) -> Result<()> {
    match args {
        AnalyzeArgs::Consistency { run, out } => {
            let record: RunRecord = io::read_run_record(run)?;
            let records = consistency_report(&record).map_err(CliError::from)?;
            io::atomic_write(out, io::consistency_csv(&records).as_bytes())?;
            println!("wrote {} layer rows to {}", records.len(), out.display());
        }
        AnalyzeArgs::Weights { run, out } => {
            let record: RunRecord = io::read_run_record(run)?;
            let csv = io::weights_csv(&record)?;
            io::atomic_write(out, csv.as_bytes())?;
            println!(
                "wrote {} layer weights to {}",
                csv.lines().count() - 1,
                out.display()
            );
        }
        AnalyzeArgs::Complexity {
            config,
            out,
            seq_len,
        } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?;
            // no dataset involved: vocabulary size comes from the data section
            let vocab_size = cfg.data.vocab + pfdfl_core::data::FIRST_WORD_ID;
            let model_cfg = cfg.model_config(vocab_size)?;
            let seq = seq_len
                .or(cfg.analysis.seq_len)
                .unwrap_or(cfg.encoder.max_len);
            let report = complexity_report(&model_cfg, seq);
            io::atomic_write(out, io::complexity_csv(&report).as_bytes())?;
            for row in &report.rows {
                println!(
                    "{:>8}: {} params (+{:.2}%), {} flops (+{:.2}%)",
                    row.variant,
                    row.params,
                    row.param_overhead_pct,
                    row.flops,
                    row.flop_overhead_pct
                );
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

pub fn gradcheck_cmd(trials: usize, seed: u64) -> Result<()> {
    let op_mismatches = check_engine_ops(trials, seed).map_err(CliError::from)?;
    println!(
        "engine ops: {} randomized trials per op, {} mismatches",
        trials,
        op_mismatches.len()
    );
    let model_mismatches = check_full_model(seed).map_err(CliError::from)?;
    println!(
        "full model: every parameter against central differences, {} mismatches",
        model_mismatches.len()
    );
    let total = op_mismatches.len() + model_mismatches.len();
    if total > 0 {
        for m in op_mismatches.iter().chain(&model_mismatches).take(10) {
            eprintln!(
                "  {}[{}]: autodiff {:.6e} vs numeric {:.6e} (rel {:.3e})",
                m.case, m.coordinate, m.autodiff, m.numeric, m.rel_error
            );
        }
        return Err(CliError::Numeric(format!(
            "{total} gradient comparisons exceeded tolerance"
        )));
    }
    println!("gradcheck passed");
    Ok(())
}
