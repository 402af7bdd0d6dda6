use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde_json::json;

use perprob::experiment::{
    emit_plot_data, load_config, load_report, run_experiment, CellResult, RunOptions, RunReport,
};
use perprob::jsonl::write_atomic;
use perprob::synth::{classification_corpus, generation_corpus, ClassCorpusShape, MarkovTopic};
use perprob::text::format_corpus;
use perprob::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "perprob", version, about = "Membership-inference audits for language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Generation,
    Classification,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, an auxiliary corpus and a starter config.
    Prep {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "generation")]
        task: TaskArg,
        /// Documents in the main corpus.
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Execute every cell of a config and persist the results.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Summarize a run directory, run_report.json or per-seed report.json.
    Report { path: PathBuf },
    /// Emit CSV plot data from a report.
    PlotData { report: PathBuf, outdir: PathBuf },
    /// Check a config and list every violation.
    ValidateConfig { path: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PERPROB_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(command: Command) -> perprob::Result<ExitCode> {
    match command {
        Command::Prep { dir, task, docs, seed } => {
            prep(&dir, task, docs, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            jobs,
            seed_override,
            output_dir,
        } => {
            let mut cfg = load_config(&config).map_err(config_error)?;
            if let Some(seeds) = seed_override {
                if seeds.is_empty() {
                    return Err(Error::Config("--seed-override needs at least one seed".into()));
                }
                cfg.seeds = seeds;
            }
            if let Some(out) = output_dir {
                cfg.output_dir = out;
            }
            let base_dir = config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf();
            let out = run_experiment(&cfg, &RunOptions { jobs, base_dir })?;
            info!("wrote {}", out.run_dir.display());
            println!("{}", out.run_dir.display());
            print_summary(&out.report);
            Ok(if out.report.all_failed() {
                ExitCode::from(EXIT_RUNTIME)
            } else if out.report.is_partial() {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Report { path } => {
            let report = load_report(&path)?;
            print_summary(&report);
            Ok(if report.is_partial() {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::PlotData { report, outdir } => {
            let report = load_report(&report)?;
            for p in emit_plot_data(&report, &outdir)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { path } => {
            load_config(&path).map_err(config_error)?;
            println!("{}: ok", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// A missing or unreadable config file is a config error, not a runtime one.
fn config_error(e: Error) -> Error {
    match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:+.4}")).unwrap_or_else(|| "undefined".into())
}

fn print_summary(report: &RunReport) {
    println!("config {}  engine {}", report.config_hash, report.engine_version);
    for (seed, c) in report.cells() {
        let what = match &c.result {
            CellResult::Generation(g) => format!(
                "dlambda {} dmedppl {} {:?}",
                fmt_opt(g.shift.delta_mean_lambda),
                fmt_opt(g.shift.delta_median_ppl),
                g.shift.eq34_verdict
            ),
            CellResult::Classification(r) => format!(
                "mlp f1 {}  rf f1 {}",
                r.mlp.f1.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into()),
                r.rf.f1.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into()),
            ),
            CellResult::Failed(f) => format!(
                "FAILED at {}: {}",
                f.stage.as_deref().unwrap_or("setup"),
                f.message
            ),
        };
        println!("seed {seed:<6} {:<22} {:<28} {what}", c.cell, c.defense.label());
    }
}

fn prep(dir: &Path, task: TaskArg, docs: Option<usize>, seed: u64) -> perprob::Result<()> {
    let (main, aux, task_name, extra) = match task {
        TaskArg::Generation => {
            let topic = MarkovTopic::new("w", 200, 4, seed);
            let other = MarkovTopic::new("a", 200, 4, seed.wrapping_add(1));
            (
                generation_corpus(&topic, docs.unwrap_or(400), "doc", seed),
                generation_corpus(&other, 200, "aux", seed.wrapping_add(1)),
                "generation",
                json!({"kd": {}, "es": {}}),
            )
        }
        TaskArg::Classification => {
            let shape = ClassCorpusShape::default();
            (
                classification_corpus(&shape, docs.unwrap_or(1500), "doc", "", seed),
                classification_corpus(&shape, 400, "aux", "a", seed.wrapping_add(1)),
                "classification",
                json!({"dp": {"mu_mode": ["max_posterior", "zero"], "epsilon": [0.5, 1.0, 2.0]}}),
            )
        }
    };
    write_atomic(&dir.join("corpus.txt"), format_corpus(&main).as_bytes())?;
    write_atomic(&dir.join("aux.txt"), format_corpus(&aux).as_bytes())?;
    let config = json!({
        "task": task_name,
        "corpus": {"path": "corpus.txt", "aux": {"aux": "aux.txt"}},
        "adversaries": [
            {"pattern": "adv1"},
            {"pattern": "adv2"},
            {"pattern": "adv3", "aux_corpus_id": "aux"},
            {"pattern": "adv4", "victim_leak_fraction": 0.1},
            {"pattern": "adv4", "victim_leak_fraction": 0.3},
            {"pattern": "adv4", "victim_leak_fraction": 0.5}
        ],
        "defense": extra,
        "seeds": [1, 2, 3],
        "output_dir": "runs"
    });
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    write_atomic(&dir.join("config.json"), text.as_bytes())?;
    println!("{}", dir.display());
    Ok(())
}
