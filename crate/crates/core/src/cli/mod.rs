//! Experiment runner: configuration, data wiring, training, reporting.

pub mod checkpoint;
pub mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{EvalReport, Evaluator, PopularityScorer};
use crate::ingest::{filter_min_interactions, parse_interactions, split_all_but_last, Half};
use crate::params::Hyperparams;
use crate::trainer::{grid_search, EpochRecord, GridCell, TrainData};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use config::{parse_config_text, ExperimentConfig, ExperimentMode};

/// Command-line flags. Every flag may also be set in the `--config` file;
/// flags win.
#[derive(Debug, Default, Parser)]
#[command(name = "rnr", version, about = "Train and evaluate joint ranking/rating recommenders")]
pub struct Args {
    /// key=value file with defaults for any of the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<String>,
    /// movielens-dat | delimited
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub min_interactions: Option<String>,
    /// number of users whose last interaction is held out
    #[arg(long)]
    pub holdout: Option<String>,
    /// popularity | single-rank | single-rate | vanilla | rnr
    #[arg(long)]
    pub mode: Option<String>,
    /// bpr | cdae
    #[arg(long)]
    pub ranker: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub epochs_max: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// comma-separated alpha values (multi-task modes)
    #[arg(long)]
    pub grid_alpha: Option<String>,
    /// comma-separated lambda values
    #[arg(long)]
    pub grid_lambda: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub cdae_corruption: Option<String>,
    #[arg(long)]
    pub cdae_negatives: Option<String>,
    #[arg(long)]
    pub bpr_negatives: Option<String>,
}

impl Args {
    fn flag_pairs(&self) -> Vec<(&'static str, &String)> {
        let flags = [
            ("data", &self.data),
            ("format", &self.format),
            ("delimiter", &self.delimiter),
            ("min-interactions", &self.min_interactions),
            ("holdout", &self.holdout),
            ("mode", &self.mode),
            ("ranker", &self.ranker),
            ("alpha", &self.alpha),
            ("lambda", &self.lambda),
            ("lr", &self.lr),
            ("dim", &self.dim),
            ("k", &self.k),
            ("epochs-max", &self.epochs_max),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("grid-alpha", &self.grid_alpha),
            ("grid-lambda", &self.grid_lambda),
            ("out", &self.out),
            ("cdae-corruption", &self.cdae_corruption),
            ("cdae-negatives", &self.cdae_negatives),
            ("bpr-negatives", &self.bpr_negatives),
        ];
        flags.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Merges the config file (if any) with the flags.
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let mut pairs: Vec<(String, String)> = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(self.flag_pairs().into_iter().map(|(k, v)| (k.to_owned(), v.clone())));
        ExperimentConfig::from_pairs(pairs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub dataset: String,
    pub malformed_lines: usize,
    pub min_interactions: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

/// The per-run JSON report. Holds no timing data so identical runs produce
/// identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub mode: String,
    pub ranker: Option<String>,
    pub seed: u64,
    pub test: EvalReport,
    pub validation_recall: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_trained: usize,
    pub hyperparams: Hyperparams,
    pub grid: Vec<GridCell>,
    pub data: DataSummary,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: RunReport,
    pub epoch_log: Vec<EpochRecord>,
    pub checkpoint: Option<Checkpoint>,
    pub wall_time_s: f64,
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

/// Runs the whole pipeline in memory; nothing is written to disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    let file = File::open(&cfg.data).map_err(Error::from).stage("ingest")?;
    let parsed = parse_interactions(BufReader::new(file), cfg.format, cfg.delimiter).stage("ingest")?;
    let log = filter_min_interactions(parsed.interactions, cfg.min_interactions);
    let split = split_all_but_last(&log, cfg.holdout, cfg.hp.seed).stage("split")?;
    let data = DataSummary {
        dataset: cfg.dataset_name(),
        malformed_lines: parsed.malformed,
        min_interactions: cfg.min_interactions,
        n_users: split.n_users(),
        n_items: split.n_items(),
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        n_test: split.test.len(),
    };
    let eval = Evaluator::new(&split);

    let outcome = match cfg.mode {
        ExperimentMode::Popularity => {
            let test = eval
                .evaluate(&PopularityScorer::new(&split), "Popularity", Half::Test, cfg.hp.k)
                .stage("evaluate")?;
            ExperimentOutcome {
                report: RunReport {
                    model: "Popularity".into(),
                    mode: cfg.mode.to_string(),
                    ranker: None,
                    seed: cfg.hp.seed,
                    test,
                    validation_recall: None,
                    alpha: None,
                    lambda: None,
                    best_epoch: None,
                    epochs_trained: 0,
                    hyperparams: cfg.hp.clone(),
                    grid: Vec::new(),
                    data,
                },
                epoch_log: Vec::new(),
                checkpoint: None,
                wall_time_s: 0.0,
            }
        }
        ExperimentMode::Train(mode) => {
            if split.train.is_empty() {
                return Err(Error::config("no training interactions after filtering").in_stage("split"));
            }
            let train = TrainData::new(&split);
            let alphas = if mode.is_multi_task() {
                cfg.grid_alpha.clone()
            } else {
                vec![cfg.hp.alpha]
            };
            let grid = grid_search(&cfg.hp, &alphas, &cfg.grid_lambda, mode, cfg.ranker, &train, &eval)
                .stage("train")?;
            let run = grid.best;
            let label = run.label();
            let test = {
                let scorer = run.scorer(eval.user_items());
                eval.evaluate(scorer.as_ref(), &label, Half::Test, cfg.hp.k).stage("evaluate")?
            };
            ExperimentOutcome {
                report: RunReport {
                    model: label,
                    mode: mode.to_string(),
                    ranker: (mode != crate::trainer::Mode::SingleRate).then(|| cfg.ranker.to_string()),
                    seed: cfg.hp.seed,
                    test,
                    validation_recall: Some(grid.val_recall),
                    alpha: Some(run.hp.alpha),
                    lambda: Some(run.hp.lambda),
                    best_epoch: Some(run.best_epoch),
                    epochs_trained: run.epoch_log.len(),
                    hyperparams: run.hp.clone(),
                    grid: grid.cells,
                    data,
                },
                epoch_log: run.epoch_log.clone(),
                checkpoint: Some(Checkpoint {
                    mode,
                    ranker: cfg.ranker,
                    store: run.store,
                }),
                wall_time_s: 0.0,
            }
        }
    };
    Ok(ExperimentOutcome {
        wall_time_s: started.elapsed().as_secs_f64(),
        ..outcome
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const CHECKPOINT_FILE: &str = "model.rnr";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Writes the report, epoch log, checkpoint and summary row into `out`.
pub fn write_artifacts(outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    fs::write(out.join(REPORT_FILE), json + "\n")?;

    let mut log = String::from("epoch,objective,val_recall\n");
    for r in &outcome.epoch_log {
        log.push_str(&format!("{},{},{}\n", r.epoch, r.objective, r.val_recall));
    }
    fs::write(out.join(EPOCH_LOG_FILE), log)?;

    if let Some(ckpt) = &outcome.checkpoint {
        save_checkpoint(ckpt, &out.join(CHECKPOINT_FILE))?;
    }

    let summary = out.join(SUMMARY_FILE);
    let fresh = !summary.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(summary)?;
    if fresh {
        writeln!(f, "model,dataset,alpha,lambda,seed,recall_at_k,mrr_at_k,epochs,wall_time_s")?;
    }
    let r = &outcome.report;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{:.3}",
        r.model,
        r.data.dataset,
        opt(r.alpha),
        opt(r.lambda),
        r.seed,
        r.test.recall_at_k,
        r.test.mrr_at_k,
        r.epochs_trained,
        outcome.wall_time_s
    )?;
    Ok(())
}

/// Table-style result line.
pub fn table_row(report: &RunReport) -> String {
    format!(
        "{:<18} Recall@{k} {:.4}  MRR@{k} {:.4}",
        report.model,
        report.test.recall_at_k,
        report.test.mrr_at_k,
        k = report.test.k
    )
}

/// Full pipeline: run, then write artifacts only if every stage succeeded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = execute(cfg)?;
    write_artifacts(&outcome, &cfg.out).map_err(|e| e.in_stage("write"))?;
    Ok(outcome)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args(args: Args) -> i32 {
    let result = args.into_config().and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(outcome) => {
            println!("{}", table_row(&outcome.report));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
