//! CSV plot data: per-sequence scatter points and attack-F1 sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::run::{CellResult, RunReport};
use crate::attack::AttackMetrics;
use crate::defense::Defense;
use crate::error::Result;
use crate::jsonl::write_atomic;
use crate::metrics::Extended;
use crate::pipeline::{Pattern, SequencePoint};

pub const SEQUENCE_HEADER: &str = "role,lambda,ppl,is_infinite";
pub const SWEEP_HEADER: &str = "fraction_or_epsilon,attack_model,f1";

fn cell(x: Extended) -> String {
    x.finite().map(|v| v.to_string()).unwrap_or_default()
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn sequence_csv(points: &[SequencePoint]) -> String {
    let mut w = writer();
    let row = |w: &mut csv::Writer<Vec<u8>>, r: [&str; 4]| w.write_record(r).expect("in-memory csv");
    row(&mut w, ["role", "lambda", "ppl", "is_infinite"]);
    for p in points {
        let infinite = !(p.lambda.is_finite() && p.ppl.is_finite());
        row(
            &mut w,
            [p.role.as_str(), &cell(p.lambda), &cell(p.ppl), if infinite { "1" } else { "0" }],
        );
    }
    finish(w)
}

fn f1_cell(m: &AttackMetrics) -> String {
    m.f1.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one sequence CSV per generation cell and one sweep CSV per
/// series: undefended adv4 cells by leak fraction, and Laplace cells by
/// epsilon for each adversary and μ-mode. Rows of different seeds follow
/// each other in seed order. Returns the paths written.
pub fn emit_plot_data(report: &RunReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut sweeps: BTreeMap<String, csv::Writer<Vec<u8>>> = BTreeMap::new();
    for (seed, c) in report.cells() {
        match &c.result {
            CellResult::Generation(g) => {
                let path = outdir.join(format!("sequences_{seed}_{}_{}.csv", c.cell, c.defense.label()));
                write_atomic(&path, sequence_csv(&g.points).as_bytes())?;
                written.push(path);
            }
            CellResult::Classification(r) => {
                let (name, x) = match &c.defense {
                    Defense::None if r.pattern == Pattern::Adv4 => {
                        ("sweep_leak".to_string(), r.spec.victim_leak_fraction)
                    }
                    Defense::Dp(d) => (format!("sweep_eps_{}_{}", c.cell, d.mu_mode.as_str()), d.epsilon),
                    _ => continue,
                };
                let w = sweeps.entry(name).or_insert_with(|| {
                    let mut w = writer();
                    w.write_record(["fraction_or_epsilon", "attack_model", "f1"]).expect("in-memory csv");
                    w
                });
                for (model, m) in [("mlp", &r.mlp), ("rf", &r.rf)] {
                    w.write_record([x.to_string().as_str(), model, &f1_cell(m)]).expect("in-memory csv");
                }
            }
            CellResult::Failed(_) => {}
        }
    }
    for (name, w) in sweeps {
        let path = outdir.join(format!("{name}.csv"));
        write_atomic(&path, finish(w).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
