use std::path::Path;

use serde_json::{json, Value};

use perprob::attack::{compute_metrics, AttackDataset, AttackModel, PosteriorRecord};
use perprob::experiment::{
    emit_plot_data, load_config, load_report, parse_config, run_experiment, CellResult, RunOptions,
    SEQUENCE_HEADER, SWEEP_HEADER,
};
use perprob::jsonl::read_jsonl;
use perprob::synth::{classification_corpus, generation_corpus, ClassCorpusShape, MarkovTopic};
use perprob::text::format_corpus;
use perprob::Error;

fn write_generation_inputs(dir: &Path) {
    let main = generation_corpus(&MarkovTopic::new("w", 60, 3, 1), 60, "doc", 1);
    let aux = generation_corpus(&MarkovTopic::new("a", 60, 3, 2), 30, "aux", 2);
    std::fs::write(dir.join("corpus.txt"), format_corpus(&main)).unwrap();
    std::fs::write(dir.join("aux.txt"), format_corpus(&aux)).unwrap();
}

fn write_classification_inputs(dir: &Path) {
    let shape = ClassCorpusShape {
        shared_words: 500,
        class_words: 40,
        ..Default::default()
    };
    std::fs::write(dir.join("corpus.txt"), format_corpus(&classification_corpus(&shape, 160, "doc", "", 1))).unwrap();
}

fn generation_config() -> Value {
    json!({
        "task": "generation",
        "corpus": {"path": "corpus.txt", "aux": {"aux": "aux.txt"}},
        "adversaries": [
            {"pattern": "adv1", "n_generate": 20},
            {"pattern": "adv3", "aux_corpus_id": "aux", "n_generate": 20}
        ],
        "generation": {"train": {"epochs": 4}, "max_len": 10},
        "defense": {"kd": {"epochs": 2}, "es": {"threshold": 0.01}},
        "seeds": [1, 2],
        "output_dir": "runs"
    })
}

fn classification_config() -> Value {
    json!({
        "task": "classification",
        "corpus": {"path": "corpus.txt"},
        "adversaries": [
            {"pattern": "adv1"},
            {"pattern": "adv4", "victim_leak_fraction": 0.3}
        ],
        "classification": {
            "classifier": {"epochs": 60},
            "attack": {"mlp": {"epochs": 30}, "rf": {"n_estimators": 15}}
        },
        "defense": {"dp": {"mu_mode": ["max_posterior", "zero"], "epsilon": [0.5, 2]}},
        "seeds": [4],
        "output_dir": "runs"
    })
}

fn save(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn opts(dir: &Path, jobs: usize) -> RunOptions {
    RunOptions {
        jobs,
        base_dir: dir.to_path_buf(),
    }
}

#[test]
fn config_corpus_round_trips_with_defaults_materialized() {
    for cfg in [generation_config(), classification_config()] {
        let parsed = parse_config(&cfg.to_string()).unwrap();
        let canonical = parsed.to_canonical_json();
        let again = parse_config(&canonical).unwrap();
        assert_eq!(again, parsed);
        assert_eq!(again.to_canonical_json(), canonical);
        // every value the caller set survives
        let full: Value = serde_json::from_str(&canonical).unwrap();
        assert_eq!(full["seeds"], cfg["seeds"]);
        assert_eq!(full["adversaries"][1]["pattern"], cfg["adversaries"][1]["pattern"]);
        // and the defaults were written out
        assert!(full["generation"]["train"]["lr"].is_number());
        assert!(full["classification"]["attack"]["rf"]["max_depth"].is_number());
    }
}

#[test]
fn load_config_errors_carry_paths() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_config(&dir.path().join("missing.json")), Err(Error::Io { .. })));

    let mut cfg = classification_config();
    cfg["defense"]["dp"]["epsilon"] = json!(-1);
    cfg["classification"]["attack"]["holdout_fraction"] = json!(0.9);
    cfg["adversaries"][0]["patern"] = json!("adv1");
    let p = save(dir.path(), &cfg);
    match load_config(&p) {
        Err(Error::InvalidConfig(v)) => {
            let mut paths: Vec<String> = v.into_iter().map(|v| v.path).collect();
            paths.sort();
            assert_eq!(
                paths,
                [
                    "adversaries[0].patern",
                    "classification.attack.holdout_fraction",
                    "defense.dp.epsilon"
                ]
            );
        }
        other => panic!("{other:?}"),
    }
}

fn count_cells(value: &Value) -> usize {
    value["seeds"].as_array().unwrap().iter().map(|s| s["cells"].as_array().unwrap().len()).sum()
}

#[test]
fn generation_run_layout_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        write_generation_inputs(d);
        save(d, &generation_config());
    }
    let cfg = load_config(&a.path().join("config.json")).unwrap();
    let out_a = run_experiment(&cfg, &opts(a.path(), 1)).unwrap();
    let out_b = run_experiment(&cfg, &opts(b.path(), 4)).unwrap();
    assert!(!out_a.report.is_partial(), "{:?}", out_a.report.failed);

    // 2 seeds, each with 2 adversaries × (none, kd, es)
    assert_eq!(out_a.report.seeds.len(), 2);
    let run: Value = serde_json::from_str(&std::fs::read_to_string(out_a.run_dir.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(count_cells(&run), 12);

    // the directory name is the hash of the persisted config bytes
    let persisted = std::fs::read_to_string(out_a.run_dir.join("config.json")).unwrap();
    assert_eq!(perprob::experiment::config_hash(&persisted), out_a.report.config_hash);
    assert!(out_a.run_dir.ends_with(&out_a.report.config_hash));

    for rel in ["run_report.json", "1/report.json", "2/report.json", "config.json"] {
        let x = std::fs::read(out_a.run_dir.join(rel)).unwrap();
        let y = std::fs::read(out_b.run_dir.join(rel)).unwrap();
        assert!(x == y, "{rel} differs between jobs=1 and jobs=4");
    }
    let cell = out_a.run_dir.join("1/0-adv1/none");
    for f in ["d_ori.jsonl", "d_adv.jsonl", "victim.json", "shadow.json"] {
        assert!(cell.join(f).is_file(), "{f}");
    }
    let x = std::fs::read(cell.join("d_adv.jsonl")).unwrap();
    let y = std::fs::read(out_b.run_dir.join("1/0-adv1/none/d_adv.jsonl")).unwrap();
    assert_eq!(x, y);

    // a rerun in place reproduces the report byte for byte
    let before = std::fs::read(out_a.run_dir.join("run_report.json")).unwrap();
    run_experiment(&cfg, &opts(a.path(), 2)).unwrap();
    assert_eq!(std::fs::read(out_a.run_dir.join("run_report.json")).unwrap(), before);

    let timings: Value = serde_json::from_str(&std::fs::read_to_string(out_a.run_dir.join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings.as_array().unwrap().len(), 12);

    // plot data: one sequence CSV per cell, rows = points + header
    let plots = a.path().join("plots");
    let report = load_report(&out_a.run_dir).unwrap();
    let files = emit_plot_data(&report, &plots).unwrap();
    assert_eq!(files.len(), 12);
    let (seed, first) = report.cells().next().unwrap();
    let CellResult::Generation(g) = &first.result else { panic!() };
    let csv = std::fs::read_to_string(plots.join(format!("sequences_{seed}_{}_{}.csv", first.cell, first.defense.label()))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SEQUENCE_HEADER);
    assert_eq!(lines.len(), g.points.len() + 1);

    // a single seed report loads too
    let one = load_report(&out_a.run_dir.join("2/report.json")).unwrap();
    assert_eq!(one.seeds.len(), 1);
    assert_eq!(one.seeds[0], report.seeds[1]);
}

fn f1_from_files(cell: &Path, model: &str) -> perprob::attack::AttackMetrics {
    let records: Vec<PosteriorRecord> = read_jsonl(&cell.join("victim_eval.jsonl")).unwrap();
    let m = AttackModel::import(&cell.join(format!("{model}.json"))).unwrap();
    let k = match &m {
        AttackModel::Mlp(p) => p.input_dim(),
        AttackModel::Forest(p) => p.feature_dim,
    };
    let data = AttackDataset::new(records, k).unwrap();
    compute_metrics(&m.predict_labels(&data.features()).unwrap(), &data.labels()).unwrap()
}

#[test]
fn classification_report_matches_persisted_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    write_classification_inputs(dir.path());
    let cfg = parse_config(&classification_config().to_string()).unwrap();
    let out = run_experiment(&cfg, &opts(dir.path(), 0)).unwrap();
    assert!(!out.report.is_partial(), "{:?}", out.report.failed);
    // 2 adversaries × (none + 4 Laplace settings)
    assert_eq!(out.report.seeds[0].cells.len(), 10);

    for (seed, c) in out.report.cells() {
        let CellResult::Classification(r) = &c.result else { panic!() };
        let cell = out.run_dir.join(seed.to_string()).join(&c.cell).join(c.defense.label());
        assert_eq!(f1_from_files(&cell, "mlp"), r.mlp, "{}", cell.display());
        assert_eq!(f1_from_files(&cell, "rf"), r.rf, "{}", cell.display());
        assert!(r.hygiene.passed);
    }

    // sweep CSVs reproduce the report's F1 values exactly
    let plots = dir.path().join("plots");
    emit_plot_data(&out.report, &plots).unwrap();
    let mut expected = Vec::new();
    let mut got = Vec::new();
    for (_, c) in out.report.cells() {
        let CellResult::Classification(r) = &c.result else { continue };
        if let perprob::defense::Defense::Dp(d) = &c.defense {
            let name = format!("sweep_eps_{}_{}.csv", c.cell, d.mu_mode.as_str());
            expected.push((name, d.epsilon, r.mlp.f1, r.rf.f1));
        }
    }
    for (name, eps, mlp, rf) in &expected {
        let text = std::fs::read_to_string(plots.join(name)).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for row in rdr.records() {
            let row = row.unwrap();
            let x: f64 = row[0].parse().unwrap();
            if x == *eps {
                // undefined F1 is an empty cell
                let f1: Option<f64> = (!row[2].is_empty()).then(|| row[2].parse().unwrap());
                got.push(f1);
                assert!(f1 == if &row[1] == "mlp" { *mlp } else { *rf });
            }
        }
    }
    assert_eq!(got.len(), 2 * expected.len());
    let leak = std::fs::read_to_string(plots.join("sweep_leak.csv")).unwrap();
    assert_eq!(leak.lines().count(), 3);
    assert!(leak.lines().nth(1).unwrap().starts_with("0.3,mlp,"));
}

#[test]
fn failing_cell_is_isolated_and_marked() {
    let dir = tempfile::tempdir().unwrap();
    write_generation_inputs(dir.path());
    std::fs::write(dir.path().join("aux.txt"), "\n").unwrap();
    let mut cfg = generation_config();
    cfg["defense"] = json!({});
    cfg["seeds"] = json!([1]);
    let cfg = parse_config(&cfg.to_string()).unwrap();
    let out = run_experiment(&cfg, &opts(dir.path(), 1)).unwrap();
    assert!(out.report.is_partial());
    assert!(!out.report.all_failed());
    assert_eq!(out.report.failed.len(), 1);
    let f = &out.report.failed[0];
    assert_eq!(f.cell, "1-adv3-mix0.1");
    assert_eq!(f.failure.stage.as_deref(), Some("shadow-data"));
    assert!(out.run_dir.join("1/1-adv3-mix0.1/none/FAILED").is_file());
    assert!(out.run_dir.join("1/0-adv1/none/d_adv.jsonl").is_file());
    assert!(!out.run_dir.join("1/0-adv1/none/FAILED").exists());
}
