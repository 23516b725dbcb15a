//! Grid execution over (dataset × model × split × target × loss × seed).
//!
//! Cells are independent: each derives its own seed from
//! `(axis seed, cell index)`, builds its training set, trains and evaluates
//! on the test phase. A failing or panicking cell is recorded, not fatal.
//! Outputs are written in cell-index order so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{build_training_set, SplitMethod};
use crate::corpus::{build_sequences, k_core_filter, leave_one_out, load_dataset, synth, DatasetSplit, DatasetStats};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, Phase};
use crate::seed::derive_seed;
use crate::trainer::{train_model, TrainReport};

pub mod config;
pub mod summary;

pub use config::{Axes, Cell, CellOverride, DatasetSpec, GridConfig};
pub use summary::{summarize, Summary, IMPROVEMENT_DEFINITION};

pub const RESULTS_HEADER: &str = "dataset,model,split,window,target,loss,seed,H@10,N@10,H@20,N@20,epochs,seconds";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub stats: DatasetStats,
    pub dropped_users: usize,
}

pub struct LoadedDataset {
    pub info: DatasetInfo,
    pub split: DatasetSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSuccess {
    pub test: MetricReport,
    pub report: TrainReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub dataset: String,
    pub outcome: std::result::Result<CellSuccess, String>,
    pub seconds: f64,
}

impl CellResult {
    pub fn config_label(&self) -> String {
        format!("{}/{}/{}", self.cell.split, self.cell.target, self.cell.loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub config: GridConfig,
    pub datasets: Vec<DatasetInfo>,
    pub cells: Vec<CellResult>,
}

impl GridResult {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }

    /// Cells per (dataset, model) block.
    pub fn cells_per_model(&self) -> usize {
        let a = &self.config.axes;
        a.splits.len() * a.targets.len() * a.losses.len() * a.seeds.len()
    }
}

pub fn load_spec(spec: &DatasetSpec) -> Result<LoadedDataset> {
    let (catalog, sequences) = match (&spec.path, &spec.synth) {
        (Some(path), None) => load_dataset(path, spec.format, spec.k_core)
            .map_err(|e| Error::Config(format!("dataset `{}` ({}): {e}", spec.name, path.display())))?,
        (None, Some(sc)) => build_sequences(&k_core_filter(&synth::generate(sc)?, spec.k_core)),
        _ => return Err(Error::Config(format!("dataset `{}` needs exactly one of `path` and `synth`", spec.name))),
    };
    let stats = DatasetStats::from_sequences(&catalog, &sequences);
    let split = leave_one_out(&sequences, catalog.num_items)?;
    Ok(LoadedDataset { info: DatasetInfo { name: spec.name.clone(), stats, dropped_users: split.dropped }, split })
}

fn run_cell(cfg: &GridConfig, cell: &Cell, split: &DatasetSplit) -> Result<CellSuccess> {
    let mut tc = cfg.train_config(cell)?;
    tc.seed = derive_seed(&[cell.seed, cell.index as u64]);
    let ts = build_training_set(split, cell.split, cell.target, tc.max_len)?;
    let (model, report) = train_model::<f32>(cell.model, &ts, split, &tc)?;
    let test = evaluate(&model, split, Phase::Test, &tc.eval_config())?;
    if !test.check_invariants() {
        return Err(Error::NonFinite(format!("metric invariants violated: {test:?}")));
    }
    Ok(CellSuccess { test, report })
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Validates the config and loads every dataset before any cell runs.
pub fn run_grid(cfg: &GridConfig) -> Result<GridResult> {
    cfg.validate()?;
    let loaded: Vec<LoadedDataset> = cfg.datasets.iter().map(load_spec).collect::<Result<_>>()?;
    let cells = cfg.cells()?;
    let results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|cell| {
            let start = Instant::now();
            let split = &loaded[cell.dataset].split;
            let outcome = match catch_unwind(AssertUnwindSafe(|| run_cell(cfg, &cell, split))) {
                Ok(Ok(s)) => Ok(s),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(format!("panicked: {}", panic_message(p))),
            };
            let dataset = loaded[cell.dataset].info.name.clone();
            CellResult { cell, dataset, outcome, seconds: start.elapsed().as_secs_f64() }
        })
        .collect();
    Ok(GridResult { config: cfg.clone(), datasets: loaded.into_iter().map(|l| l.info).collect(), cells: results })
}

fn split_columns(s: SplitMethod) -> (&'static str, String) {
    (s.name(), s.window().map_or_else(String::new, |t| t.to_string()))
}

/// One row per successful cell, in cell order.
pub fn write_results<W: Write>(mut w: W, result: &GridResult) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for c in &result.cells {
        let Ok(ok) = &c.outcome else { continue };
        let (split, window) = split_columns(c.cell.split);
        let seconds = if result.config.record_wall_clock { format!("{:.3}", c.seconds) } else { "NA".into() };
        let t = &ok.test;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            c.dataset,
            c.cell.model,
            split,
            window,
            c.cell.target,
            c.cell.loss,
            c.cell.seed,
            t.hr10,
            t.ndcg10,
            t.hr20,
            t.ndcg20,
            ok.report.epochs,
            seconds
        )?;
    }
    Ok(())
}

pub fn write_failures<W: Write>(mut w: W, result: &GridResult) -> Result<()> {
    writeln!(w, "cell,dataset,model,split,window,target,loss,seed,reason")?;
    for c in &result.cells {
        let Err(reason) = &c.outcome else { continue };
        let (split, window) = split_columns(c.cell.split);
        let reason = reason.replace(['\n', ','], " ");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.cell.index, c.dataset, c.cell.model, split, window, c.cell.target, c.cell.loss, c.cell.seed, reason
        )?;
    }
    Ok(())
}

pub fn write_timings<W: Write>(mut w: W, result: &GridResult) -> Result<()> {
    writeln!(w, "cell,seconds,epochs")?;
    for c in &result.cells {
        let epochs = c.outcome.as_ref().map_or_else(|_| "NA".into(), |o| o.report.epochs.to_string());
        writeln!(w, "{},{:.3},{}", c.cell.index, c.seconds, epochs)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    toolkit: &'static str,
    version: &'static str,
    config_hash: String,
    cells: usize,
    succeeded: usize,
    failed: usize,
    improvement_definition: &'static str,
    datasets: &'a [DatasetInfo],
    config: &'a GridConfig,
}

pub fn write_manifest<W: Write>(w: W, result: &GridResult) -> Result<()> {
    let m = Manifest {
        toolkit: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: result.config.hash(),
        cells: result.cells.len(),
        succeeded: result.succeeded(),
        failed: result.cells.len() - result.succeeded(),
        improvement_definition: IMPROVEMENT_DEFINITION,
        datasets: &result.datasets,
        config: &result.config,
    };
    serde_json::to_writer_pretty(w, &m).map_err(|e| Error::Io(e.into()))
}

/// Writes `results.csv`, `failures.csv`, `timings.csv`, `manifest.json`
/// and, when any cell succeeded, `summary_best_worst.csv` and
/// `summary_tallies.csv`.
pub fn write_outputs(result: &GridResult, out: &Path) -> Result<Option<Summary>> {
    std::fs::create_dir_all(out)?;
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(out.join(name))?)) };
    write_results(create("results.csv")?, result)?;
    write_failures(create("failures.csv")?, result)?;
    write_timings(create("timings.csv")?, result)?;
    let mut manifest = create("manifest.json")?;
    write_manifest(&mut manifest, result)?;
    writeln!(manifest)?;
    manifest.flush()?;
    if result.succeeded() == 0 {
        return Ok(None);
    }
    let s = summarize(result)?;
    summary::write_best_worst(create("summary_best_worst.csv")?, &s)?;
    summary::write_tallies(create("summary_tallies.csv")?, &s)?;
    Ok(Some(s))
}
