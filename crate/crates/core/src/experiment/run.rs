//! Cell execution, run directory layout and report persistence.
//!
//! ```text
//! <out>/<hash>/config.json
//! <out>/<hash>/run_report.json
//! <out>/<hash>/timings.json
//! <out>/<hash>/<seed>/report.json
//! <out>/<hash>/<seed>/<cell>/<defense>/...
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Task};
use crate::defense::Defense;
use crate::error::{Error, Result};
use crate::jsonl::{write_atomic, write_jsonl};
use crate::pipeline::{
    partition, run_classification_attack, run_generation_attack, AdversarySpec,
    ClassificationAttackReport, GenerationAttackReport, StageTiming,
};
use crate::text::{read_corpus, Document};

pub const REPORT_VERSION: &str = "report_v1";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex prefix of the SHA-256 of the canonical config bytes.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Option<String>,
    pub message: String,
}

impl Failure {
    fn from_error(e: &Error) -> Self {
        Failure {
            stage: e.stage().map(str::to_string),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellResult {
    Generation(Box<GenerationAttackReport>),
    Classification(Box<ClassificationAttackReport>),
    Failed(Failure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    /// Directory name of the adversary, `<index>-<label>`.
    pub cell: String,
    pub adversary: AdversarySpec,
    pub defense: Defense,
    pub result: CellResult,
}

impl CellReport {
    pub fn failed(&self) -> Option<&Failure> {
        match &self.result {
            CellResult::Failed(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
}

impl Environment {
    fn current() -> Self {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub seed: u64,
    pub cell: String,
    pub defense: String,
    pub failure: Failure,
}

/// Everything a run produced apart from wall-clock times, which live in
/// `timings.json` so that reports stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub engine_version: String,
    pub environment: Environment,
    pub seeds: Vec<SeedReport>,
    pub failed: Vec<FailedCell>,
}

impl RunReport {
    pub fn cells(&self) -> impl Iterator<Item = (u64, &CellReport)> {
        self.seeds.iter().flat_map(|s| s.cells.iter().map(move |c| (s.seed, c)))
    }

    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn all_failed(&self) -> bool {
        self.cells().all(|(_, c)| c.failed().is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub seed: u64,
    pub cell: String,
    pub defense: String,
    pub total_seconds: f64,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    /// Directory relative corpus paths and `output_dir` resolve against.
    pub base_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 0,
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub report: RunReport,
    pub timings: Vec<CellTiming>,
}

struct Cell<'a> {
    seed: u64,
    name: String,
    spec: &'a AdversarySpec,
    defense: Defense,
}

struct Corpora {
    main: Vec<Document>,
    aux: BTreeMap<String, Vec<Document>>,
}

impl Corpora {
    fn load(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        let main = read_corpus(&cfg.resolve(base, &cfg.corpus.path), "doc")?;
        let aux = cfg
            .corpus
            .aux
            .iter()
            .map(|(id, p)| Ok((id.clone(), read_corpus(&cfg.resolve(base, p), &format!("aux-{id}"))?)))
            .collect::<Result<_>>()?;
        Ok(Corpora { main, aux })
    }
}

/// Runs every (seed, adversary, defense) cell and persists the results.
/// Failing cells are recorded, not propagated; only setup problems such
/// as unreadable corpora return `Err`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let canonical = cfg.to_canonical_json();
    let hash = config_hash(&canonical);
    let run_dir = cfg.resolve(&opts.base_dir, &cfg.output_dir).join(&hash);
    write_atomic(&run_dir.join("config.json"), canonical.as_bytes())?;
    info!("run {hash}: {} seed(s), {} adversary spec(s)", cfg.seeds.len(), cfg.adversaries.len());

    let corpora = Corpora::load(cfg, &opts.base_dir)?;
    let defenses = cfg.defenses();
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for (index, spec) in cfg.adversaries.iter().enumerate() {
            for defense in &defenses {
                cells.push(Cell {
                    seed,
                    name: format!("{index}-{}", spec.label()),
                    spec,
                    defense: defense.clone(),
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(CellReport, CellTiming)> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let dir = run_dir.join(c.seed.to_string()).join(&c.name).join(c.defense.label());
                run_cell(cfg, &corpora, c, &dir)
            })
            .collect()
    });

    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    let mut timings = Vec::new();
    let mut it = results.into_iter();
    for &seed in &cfg.seeds {
        let mut reports = Vec::new();
        for _ in 0..cfg.adversaries.len() * defenses.len() {
            let (report, timing) = it.next().expect("one result per cell");
            if let Some(f) = report.failed() {
                failed.push(FailedCell {
                    seed,
                    cell: report.cell.clone(),
                    defense: report.defense.label(),
                    failure: f.clone(),
                });
            }
            reports.push(report);
            timings.push(timing);
        }
        let seed_report = SeedReport {
            version: REPORT_VERSION.to_string(),
            config_hash: hash.clone(),
            seed,
            task: cfg.task,
            cells: reports,
        };
        write_json(&run_dir.join(seed.to_string()).join("report.json"), &seed_report)?;
        seeds.push(seed_report);
    }
    let report = RunReport {
        version: REPORT_VERSION.to_string(),
        config_hash: hash,
        engine_version: ENGINE_VERSION.to_string(),
        environment: Environment::current(),
        seeds,
        failed,
    };
    write_json(&run_dir.join("run_report.json"), &report)?;
    write_json(&run_dir.join("timings.json"), &timings)?;
    if report.is_partial() {
        warn!("{} cell(s) failed", report.failed.len());
    }
    Ok(RunOutput {
        run_dir,
        report,
        timings,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn run_cell(cfg: &ExperimentConfig, corpora: &Corpora, c: &Cell, dir: &Path) -> (CellReport, CellTiming) {
    let start = std::time::Instant::now();
    debug!("cell seed={} {} {}", c.seed, c.name, c.defense.label());
    let (result, stages) = match execute(cfg, corpora, c, dir) {
        Ok(ok) => ok,
        Err(e) => {
            warn!("cell seed={} {} {} failed: {e}", c.seed, c.name, c.defense.label());
            let failure = Failure::from_error(&e);
            // the marker is best effort; the report records the failure either way
            let _ = write_json(&dir.join("FAILED"), &failure);
            (CellResult::Failed(failure), Vec::new())
        }
    };
    let timing = CellTiming {
        seed: c.seed,
        cell: c.name.clone(),
        defense: c.defense.label(),
        total_seconds: start.elapsed().as_secs_f64(),
        stages,
    };
    let report = CellReport {
        cell: c.name.clone(),
        adversary: c.spec.clone(),
        defense: c.defense.clone(),
        result,
    };
    (report, timing)
}

fn execute(
    cfg: &ExperimentConfig,
    corpora: &Corpora,
    c: &Cell,
    dir: &Path,
) -> Result<(CellResult, Vec<StageTiming>)> {
    // a rerun that succeeds must not leave an earlier failure marker behind
    let _ = std::fs::remove_file(dir.join("FAILED"));
    let bundle = partition(&corpora.main, &corpora.aux, c.seed).map_err(|e| e.at_stage("partition"))?;
    let persist = |e: Error| e.at_stage("persist");
    match cfg.task {
        Task::Generation => {
            let o = run_generation_attack(c.spec, &bundle, &cfg.generation, &c.defense, c.seed)?;
            write_jsonl(&dir.join("d_ori.jsonl"), &o.d_ori).map_err(persist)?;
            write_jsonl(&dir.join("d_adv.jsonl"), &o.d_adv).map_err(persist)?;
            o.victim.export(&dir.join("victim.json")).map_err(persist)?;
            o.shadow.export(&dir.join("shadow.json")).map_err(persist)?;
            Ok((CellResult::Generation(Box::new(o.report)), o.timings))
        }
        Task::Classification => {
            let o = run_classification_attack(c.spec, &bundle, &cfg.classification, &c.defense, c.seed)?;
            write_jsonl(&dir.join("attack_train.jsonl"), &o.attack_train).map_err(persist)?;
            write_jsonl(&dir.join("attack_holdout.jsonl"), &o.attack_holdout).map_err(persist)?;
            write_jsonl(&dir.join("victim_eval.jsonl"), &o.victim_eval).map_err(persist)?;
            o.mlp.export(&dir.join("mlp.json")).map_err(persist)?;
            o.rf.export(&dir.join("rf.json")).map_err(persist)?;
            o.victim.export(&dir.join("victim.json")).map_err(persist)?;
            o.shadow.export(&dir.join("shadow.json")).map_err(persist)?;
            Ok((CellResult::Classification(Box::new(o.report)), o.timings))
        }
    }
}

/// Loads a run report from a run directory, a `run_report.json`, or a
/// single seed's `report.json`.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let file = if path.is_dir() {
        path.join("run_report.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("version").and_then(|v| v.as_str());
    if version != Some(REPORT_VERSION) {
        return Err(Error::schema("version", format!("expected {REPORT_VERSION:?}, got {version:?}")));
    }
    if value.get("seeds").is_some() {
        return Ok(serde_json::from_value(value)?);
    }
    let seed: SeedReport = serde_json::from_value(value)?;
    let failed = seed
        .cells
        .iter()
        .filter_map(|c| {
            c.failed().map(|f| FailedCell {
                seed: seed.seed,
                cell: c.cell.clone(),
                defense: c.defense.label(),
                failure: f.clone(),
            })
        })
        .collect();
    Ok(RunReport {
        version: REPORT_VERSION.to_string(),
        config_hash: seed.config_hash.clone(),
        engine_version: ENGINE_VERSION.to_string(),
        environment: Environment::current(),
        seeds: vec![seed],
        failed,
    })
}
