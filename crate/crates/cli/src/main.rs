use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use seqsplit::augment::{build_training_set, legacy_pipeline_split, SplitMethod, TargetStrategy, TrainingSet};
use seqsplit::corpus::{leave_one_out, load_dataset, synth, DatasetSplit, DatasetStats, LogFormat};
use seqsplit::diagnostics::{distribution_stats, inputs_per_target, target_distribution, write_inputs_csv, write_rank_csv};
use seqsplit::eval::{evaluate, EvalConfig, MetricReport, Phase};
use seqsplit::models::checkpoint::{Checkpoint, CheckpointMeta};
use seqsplit::models::{AnyModel, ModelKind, SequenceModel};
use seqsplit::objective::LossKind;
use seqsplit::runner::{self, GridConfig};
use seqsplit::trainer::{train_model, train_model_observed, TrainConfig};

#[derive(Parser)]
#[command(name = "seqsplit", version, about = "Sub-sequence splitting benchmark toolkit for sequential recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics after k-core filtering.
    Stats(DataArgs),
    /// Build a training set and report example counts.
    Build(BuildArgs),
    /// Train (or fit) one model and write its checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a counting model) and print one CSV row.
    Eval(EvalArgs),
    /// Target-distribution diagnostics for one training set.
    Diagnose(DiagnoseArgs),
    /// Run an experiment grid from a TOML config.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic interaction log (triplet format).
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Interaction log.
    #[arg(long)]
    data: PathBuf,
    /// `triplet` (user item timestamp) or `grouped` (user item item ...).
    #[arg(long, default_value = "triplet")]
    format: LogFormat,
    #[arg(long, default_value_t = 5)]
    k_core: usize,
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// original, prefix, suffix or sliding (also sliding:T).
    #[arg(long, default_value = "prefix")]
    split: String,
    /// Window length for sliding.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value = "single")]
    target: TargetStrategy,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
}

impl SplitArgs {
    fn method(&self) -> Result<SplitMethod> {
        let m: SplitMethod = self.split.parse()?;
        match (m, self.window) {
            (SplitMethod::Sliding(_), Some(t)) => Ok(SplitMethod::sliding(t)?),
            (_, Some(_)) => bail!("--window only applies to --split sliding"),
            (m, None) => Ok(m),
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Use the split-while-reading replica instead (prefix/single only).
    #[arg(long)]
    legacy: bool,
    /// Write one `input-csv<TAB>target` line per example.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    model: ModelKind,
    /// ce, bce or bce:N (N negatives).
    #[arg(long, default_value = "ce")]
    loss: LossKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Output directory for `model.ckpt` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Print one line per epoch to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train` (neural models).
    #[arg(long, conflicts_with = "model")]
    checkpoint: Option<PathBuf>,
    /// Refit a counting model (pop or markov) instead of loading one.
    #[arg(long)]
    model: Option<ModelKind>,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value = "test")]
    phase: Phase,
    #[arg(long)]
    filter_seen: bool,
    /// Also print the CSV header.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Directory for `target_rank.csv` and `inputs_per_target.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = synth::SynthConfig::default().num_users)]
    users: usize,
    #[arg(long, default_value_t = synth::SynthConfig::default().num_items)]
    items: usize,
    #[arg(long, default_value_t = synth::SynthConfig::default().seed)]
    seed: u64,
}

fn load_split(d: &DataArgs) -> Result<(DatasetStats, DatasetSplit)> {
    let (catalog, seqs) =
        load_dataset(&d.data, d.format, d.k_core).with_context(|| format!("reading {}", d.data.display()))?;
    let stats = DatasetStats::from_sequences(&catalog, &seqs);
    Ok((stats, leave_one_out(&seqs, catalog.num_items)?))
}

fn training_set(split: &DatasetSplit, a: &SplitArgs) -> Result<TrainingSet> {
    Ok(build_training_set(split, a.method()?, a.target, a.max_len)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

const EVAL_HEADER: &str = "model,split,target,loss,seed,H@10,N@10,H@20,N@20";

fn eval_row(model: &str, split: &str, target: &str, loss: &str, seed: &str, r: &MetricReport) -> String {
    format!("{model},{split},{target},{loss},{seed},{:.6},{:.6},{:.6},{:.6}", r.hr10, r.ndcg10, r.hr20, r.ndcg20)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Stats(d) => {
            let (stats, split) = load_split(&d)?;
            println!("{stats}");
            if split.dropped > 0 {
                println!("users dropped by leave-one-out (fewer than 3 items): {}", split.dropped);
            }
        }
        Command::Build(a) => {
            let (_, split) = load_split(&a.data)?;
            let ts = if a.legacy {
                legacy_pipeline_split(&split.original_sequences(), a.split.max_len)?
            } else {
                training_set(&split, &a.split)?
            };
            println!(
                "split={} target={} users={} subsequences={} examples={} skipped={}",
                ts.method,
                ts.strategy,
                ts.per_user_counts.len(),
                ts.subsequences.len(),
                ts.examples.len(),
                ts.skipped
            );
            if let Some(path) = a.dump {
                let mut w = create(&path)?;
                for e in &ts.examples {
                    let input: Vec<String> = e.input.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{}\t{}", input.join(","), e.target)?;
                }
                w.flush()?;
            }
        }
        Command::Train(a) => {
            let (_, split) = load_split(&a.data)?;
            let ts = training_set(&split, &a.split)?;
            let cfg = TrainConfig {
                dim: a.dim,
                max_len: a.split.max_len,
                batch_size: a.batch_size,
                lr: a.lr,
                patience: a.patience,
                max_epochs: a.max_epochs,
                seed: a.seed,
                loss: a.loss,
                num_blocks: a.blocks,
                num_heads: a.heads,
                ..TrainConfig::default()
            };
            let (model, mut report) = if a.verbose {
                train_model_observed::<f32>(a.model, &ts, &split, &cfg, &mut |l| {
                    eprintln!(
                        "epoch {:>4}  loss {:.5}  valid {:.5}{}",
                        l.epoch,
                        l.train_loss,
                        l.valid,
                        if l.improved { "  *" } else { "" }
                    )
                })?
            } else {
                train_model::<f32>(a.model, &ts, &split, &cfg)?
            };
            fs::create_dir_all(&a.out)?;
            if a.model.is_neural() {
                let path = a.out.join("model.ckpt");
                let meta = CheckpointMeta {
                    split: ts.method.to_string(),
                    target: ts.strategy.to_string(),
                    loss: a.loss.to_string(),
                    seed: a.seed,
                };
                let mut w = create(&path)?;
                Checkpoint::from_model(&model, meta)?.write(&mut w)?;
                w.flush()?;
                report.checkpoint = Some(path.display().to_string());
            }
            let mut w = create(&a.out.join("report.json"))?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            println!(
                "model={} epochs={} best_epoch={} valid_{}={:.6} seconds={:.1}",
                report.model, report.epochs, report.best_epoch, report.early_stop, report.best_valid, report.seconds
            );
        }
        Command::Eval(a) => {
            let (_, split) = load_split(&a.data)?;
            let (model, max_len, labels): (AnyModel<f32>, usize, [String; 5]) = match (&a.checkpoint, a.model) {
                (Some(path), _) => {
                    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                    let ck = Checkpoint::<f32>::read(std::io::BufReader::new(file))?;
                    let meta = ck.meta.clone();
                    let model = ck.into_model()?;
                    let (kind, max_len, items) = match &model {
                        AnyModel::Attn(m) => (m.kind(), m.max_len(), SequenceModel::num_items(m)),
                        AnyModel::Gru(m) => (m.kind(), m.max_len(), SequenceModel::num_items(m)),
                        _ => unreachable!("checkpoints hold neural models"),
                    };
                    if items != split.num_items {
                        bail!("checkpoint has {items} items but the dataset has {}", split.num_items);
                    }
                    (model, max_len, [kind.to_string(), meta.split, meta.target, meta.loss, meta.seed.to_string()])
                }
                (None, Some(kind)) if !kind.is_neural() => {
                    let ts = training_set(&split, &a.split)?;
                    let (model, _) = train_model::<f32>(kind, &ts, &split, &TrainConfig::default())?;
                    let labels = [kind.to_string(), ts.method.to_string(), ts.strategy.to_string(), "na".into(), "na".into()];
                    (model, a.split.max_len, labels)
                }
                (None, Some(kind)) => bail!("{kind} needs --checkpoint (train it first)"),
                (None, None) => bail!("give --checkpoint or --model pop|markov"),
            };
            let cfg = EvalConfig { max_len, filter_seen: a.filter_seen, keep_ranks: false };
            let report = evaluate(&model, &split, a.phase, &cfg)?;
            if a.header {
                println!("{EVAL_HEADER}");
            }
            let [m, s, t, l, seed] = &labels;
            println!("{}", eval_row(m, s, t, l, seed, &report));
        }
        Command::Diagnose(a) => {
            let (_, split) = load_split(&a.data)?;
            let ts = training_set(&split, &a.split)?;
            let dist = target_distribution(&ts, split.num_items)?;
            let ipt = inputs_per_target(&ts)?;
            fs::create_dir_all(&a.out)?;
            let mut w = create(&a.out.join("target_rank.csv"))?;
            write_rank_csv(&mut w, &dist)?;
            w.flush()?;
            let mut w = create(&a.out.join("inputs_per_target.csv"))?;
            write_inputs_csv(&mut w, &ipt)?;
            w.flush()?;
            let s = distribution_stats(&dist, split.num_items);
            println!(
                "split={} target={} examples={} coverage={:.6} entropy_bits={:.6} gini={:.6}",
                ts.method, ts.strategy, dist.total, s.coverage, s.entropy_bits, s.gini
            );
        }
        Command::Grid { config, out } => {
            let cfg = GridConfig::from_file(&config).with_context(|| format!("loading {}", config.display()))?;
            let result = runner::run_grid(&cfg)?;
            let summary = runner::write_outputs(&result, &out)?;
            println!(
                "cells={} succeeded={} failed={} out={}",
                result.cells.len(),
                result.succeeded(),
                result.cells.len() - result.succeeded(),
                out.display()
            );
            if let Some(s) = summary {
                for r in &s.best_worst {
                    let impr = r.avg_improvement.map_or("NA".into(), |x| format!("{:.1}%", x * 100.0));
                    println!("{} {}: best {} worst {} avg improvement {}", r.dataset, r.model, r.best, r.worst, impr);
                }
            }
        }
        Command::Synth(a) => {
            let cfg = synth::SynthConfig { num_users: a.users, num_items: a.items, seed: a.seed, ..Default::default() };
            let log = synth::to_triplet_log(&synth::generate(&cfg)?);
            fs::write(&a.out, log).with_context(|| format!("writing {}", a.out.display()))?;
        }
    }
    Ok(())
}
