//! Experiment configuration: schema validation that reports every
//! violation with its key path, then typed parsing with defaults filled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::defense::{Defense, EsConfig, KdConfig, LaplaceConfig, MuMode};
use crate::error::{Error, Result};
use crate::pipeline::{AdversarySpec, ClassificationConfig, GenerationConfig, Pattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Generation,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// One document per line; classification corpora prefix `<label>\t`.
    pub path: PathBuf,
    /// Auxiliary corpora by id, referenced by `aux_corpus_id`.
    #[serde(default)]
    pub aux: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(deserialize_with = "one_or_many")]
    pub mu_mode: Vec<MuMode>,
    #[serde(deserialize_with = "one_or_many")]
    pub epsilon: Vec<f64>,
    #[serde(default = "one")]
    pub sensitivity: f64,
    #[serde(default = "yes")]
    pub renormalize: bool,
    #[serde(default)]
    pub perturb_training: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

impl DpSection {
    /// One mechanism per (μ-mode, ε) pair, in config order.
    pub fn mechanisms(&self) -> Vec<LaplaceConfig> {
        let mut out = Vec::new();
        for &mu_mode in &self.mu_mode {
            for &epsilon in &self.epsilon {
                out.push(LaplaceConfig {
                    mu_mode,
                    epsilon,
                    sensitivity: self.sensitivity,
                    renormalize: self.renormalize,
                    perturb_training: self.perturb_training,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<KdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<EsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub corpus: CorpusConfig,
    pub adversaries: Vec<AdversarySpec>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub classification: ClassificationConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Every defense cell for each adversary: the undefended baseline first.
    pub fn defenses(&self) -> Vec<Defense> {
        let mut out = vec![Defense::None];
        if let Some(dp) = &self.defense.dp {
            out.extend(dp.mechanisms().into_iter().map(Defense::Dp));
        }
        if let Some(kd) = &self.defense.kd {
            out.push(Defense::Kd(*kd));
        }
        if let Some(es) = &self.defense.es {
            out.push(Defense::Es(*es));
        }
        out
    }

    /// Canonical JSON with every default materialized. This is the byte
    /// string the config hash is taken over.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialize");
        s.push('\n');
        s
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Validates `text` and returns the typed config, or every violation found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
    let violations = validate_value(&value);
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations));
    }
    serde_json::from_value(value).map_err(|e| {
        Error::InvalidConfig(vec![Violation {
            path: "<config>".into(),
            message: e.to_string(),
        }])
    })
}

#[derive(Clone, Copy)]
enum Num {
    /// Integer with an inclusive lower bound.
    Int(u64),
    /// Real in a range; `open_min` excludes the lower bound.
    Real { min: f64, max: f64, open_min: bool },
}

const POSITIVE: Num = Num::Real {
    min: 0.0,
    max: f64::INFINITY,
    open_min: true,
};

enum Node {
    Object(Vec<(&'static str, bool, Node)>),
    Map(Box<Node>),
    Array { item: Box<Node>, non_empty: bool },
    OneOrMany(Box<Node>),
    Number(Num),
    Nullable(Box<Node>),
    Str,
    Bool,
    Enum(&'static [&'static str]),
}

use Node::*;

fn obj(fields: Vec<(&'static str, bool, Node)>) -> Node {
    Object(fields)
}

fn int(min: u64) -> Node {
    Number(Num::Int(min))
}

fn real(min: f64, max: f64) -> Node {
    Number(Num::Real {
        min,
        max,
        open_min: false,
    })
}

fn positive() -> Node {
    Number(POSITIVE)
}

fn shape() -> Node {
    obj(vec![("context_k", false, int(1)), ("embed_dim", false, int(1))])
}

fn schema() -> Node {
    let adversary = obj(vec![
        ("pattern", true, Enum(&["adv1", "adv2", "adv3", "adv4"])),
        (
            "shadow_mix_fraction",
            false,
            Number(Num::Real {
                min: 0.0,
                max: 1.0,
                open_min: true,
            }),
        ),
        ("victim_leak_fraction", false, real(0.1, 0.5)),
        ("aux_corpus_id", false, Nullable(Box::new(Str))),
        ("n_generate", false, int(1)),
    ]);
    let generation = obj(vec![
        ("shape", false, shape()),
        (
            "train",
            false,
            obj(vec![
                ("epochs", false, int(1)),
                ("lr", false, positive()),
                ("batch_size", false, int(1)),
            ]),
        ),
        ("shadow_epochs", false, Nullable(Box::new(int(0)))),
        ("max_len", false, int(1)),
        ("temperature", false, real(0.0, f64::INFINITY)),
        ("max_vocab", false, int(4)),
        ("min_count", false, int(1)),
    ]);
    let classification = obj(vec![
        (
            "classifier",
            false,
            obj(vec![("epochs", false, int(0)), ("lr", false, positive())]),
        ),
        (
            "attack",
            false,
            obj(vec![
                (
                    "mlp",
                    false,
                    obj(vec![
                        (
                            "hidden_layers",
                            false,
                            Array {
                                item: Box::new(int(1)),
                                non_empty: false,
                            },
                        ),
                        ("epochs", false, int(1)),
                        ("lr", false, positive()),
                        ("batch_size", false, int(1)),
                    ]),
                ),
                (
                    "rf",
                    false,
                    obj(vec![
                        ("n_estimators", false, int(1)),
                        ("max_depth", false, int(1)),
                        ("bootstrap", false, Bool),
                    ]),
                ),
                ("feature_k", false, Nullable(Box::new(int(1)))),
                ("holdout_fraction", false, real(0.0, 0.5)),
            ]),
        ),
        ("max_vocab", false, int(4)),
        ("min_count", false, int(1)),
    ]);
    let defense = obj(vec![
        (
            "dp",
            false,
            obj(vec![
                ("mu_mode", true, OneOrMany(Box::new(Enum(&["zero", "max_posterior"])))),
                ("epsilon", true, OneOrMany(Box::new(positive()))),
                ("sensitivity", false, positive()),
                ("renormalize", false, Bool),
                ("perturb_training", false, Bool),
            ]),
        ),
        (
            "kd",
            false,
            obj(vec![
                ("temperature", false, positive()),
                ("epochs", false, int(1)),
                ("lr", false, positive()),
                ("batch_size", false, int(1)),
                ("student", false, shape()),
            ]),
        ),
        (
            "es",
            false,
            obj(vec![
                (
                    "threshold",
                    false,
                    real(EsConfig::THRESHOLD_RANGE.0, EsConfig::THRESHOLD_RANGE.1),
                ),
                ("patience", false, int(1)),
            ]),
        ),
    ]);
    obj(vec![
        ("task", true, Enum(&["generation", "classification"])),
        (
            "corpus",
            true,
            obj(vec![("path", true, Str), ("aux", false, Map(Box::new(Str)))]),
        ),
        (
            "adversaries",
            true,
            Array {
                item: Box::new(adversary),
                non_empty: true,
            },
        ),
        ("generation", false, generation),
        ("classification", false, classification),
        ("defense", false, defense),
        (
            "seeds",
            true,
            Array {
                item: Box::new(int(0)),
                non_empty: true,
            },
        ),
        ("output_dir", true, Str),
    ])
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn check(node: &Node, v: &Value, path: &str, out: &mut Vec<Violation>) {
    let mut fail = |message: String| {
        out.push(Violation {
            path: if path.is_empty() { "<root>".into() } else { path.to_string() },
            message,
        })
    };
    match node {
        Object(fields) => {
            let Some(map) = v.as_object() else {
                return fail("expected an object".into());
            };
            for key in map.keys() {
                if !fields.iter().any(|(k, _, _)| k == key) {
                    out.push(Violation {
                        path: join(path, key),
                        message: "unknown key".into(),
                    });
                }
            }
            for (key, required, child) in fields {
                match map.get(*key) {
                    Some(value) => check(child, value, &join(path, key), out),
                    None if *required => out.push(Violation {
                        path: join(path, key),
                        message: "required key is missing".into(),
                    }),
                    None => {}
                }
            }
        }
        Map(child) => match v.as_object() {
            Some(map) => {
                for (key, value) in map {
                    check(child, value, &join(path, key), out);
                }
            }
            None => fail("expected an object".into()),
        },
        Array { item, non_empty } => match v.as_array() {
            Some(items) => {
                if *non_empty && items.is_empty() {
                    fail("must not be empty".into());
                }
                for (i, value) in items.iter().enumerate() {
                    check(item, value, &format!("{path}[{i}]"), out);
                }
            }
            None => fail("expected an array".into()),
        },
        OneOrMany(item) => match v.as_array() {
            Some(items) => {
                if items.is_empty() {
                    fail("must not be empty".into());
                }
                for (i, value) in items.iter().enumerate() {
                    check(item, value, &format!("{path}[{i}]"), out);
                }
            }
            None => check(item, v, path, out),
        },
        Nullable(inner) => {
            if !v.is_null() {
                check(inner, v, path, out)
            }
        }
        Str => {
            if !v.is_string() {
                fail("expected a string".into());
            }
        }
        Bool => {
            if !v.is_boolean() {
                fail("expected a boolean".into());
            }
        }
        Enum(options) => match v.as_str() {
            Some(s) if options.contains(&s) => {}
            _ => fail(format!("expected one of {}", options.join(", "))),
        },
        Number(Num::Int(min)) => match v.as_u64() {
            Some(n) if n >= *min => {}
            Some(_) => fail(format!("must be an integer >= {min}")),
            None => fail(format!("expected an integer >= {min}")),
        },
        Number(Num::Real { min, max, open_min }) => match v.as_f64() {
            Some(x) => {
                let low_ok = if *open_min { x > *min } else { x >= *min };
                if !(low_ok && x <= *max) {
                    let lo = if *open_min { "(" } else { "[" };
                    fail(format!("{x} is outside {lo}{min}, {max}]"));
                }
            }
            None => fail("expected a number".into()),
        },
    }
}

/// Structural checks plus the cross-field rules the schema cannot express.
pub fn validate_value(v: &Value) -> Vec<Violation> {
    let mut out = Vec::new();
    check(&schema(), v, "", &mut out);
    let task = v.get("task").and_then(Value::as_str);
    let defense = v.get("defense");
    let has = |k: &str| defense.and_then(|d| d.get(k)).is_some_and(|x| !x.is_null());
    if task == Some("generation") && has("dp") {
        out.push(Violation {
            path: "defense.dp".into(),
            message: "the Laplace defense applies to the classification task only".into(),
        });
    }
    if task == Some("classification") {
        for k in ["kd", "es"] {
            if has(k) {
                out.push(Violation {
                    path: format!("defense.{k}"),
                    message: "applies to the generation task only".into(),
                });
            }
        }
    }
    if let Some(seeds) = v.get("seeds").and_then(Value::as_array) {
        let mut seen = std::collections::HashSet::new();
        for (i, s) in seeds.iter().enumerate() {
            if let Some(n) = s.as_u64() {
                if !seen.insert(n) {
                    out.push(Violation {
                        path: format!("seeds[{i}]"),
                        message: format!("seed {n} is listed twice"),
                    });
                }
            }
        }
    }
    let aux_ids: Vec<&str> = v
        .pointer("/corpus/aux")
        .and_then(Value::as_object)
        .map(|m| m.keys().map(String::as_str).collect())
        .unwrap_or_default();
    if let Some(advs) = v.get("adversaries").and_then(Value::as_array) {
        for (i, a) in advs.iter().enumerate() {
            let aux = a.get("aux_corpus_id").and_then(Value::as_str);
            if a.get("pattern").and_then(Value::as_str) == Some(Pattern::Adv3.as_str()) {
                match aux {
                    None => out.push(Violation {
                        path: format!("adversaries[{i}].aux_corpus_id"),
                        message: "adv3 requires an auxiliary corpus id".into(),
                    }),
                    Some(id) if !aux_ids.contains(&id) => out.push(Violation {
                        path: format!("adversaries[{i}].aux_corpus_id"),
                        message: format!("no corpus.aux entry named {id:?}"),
                    }),
                    Some(_) => {}
                }
            }
        }
    }
    if let Some(kd) = v.pointer("/defense/kd/student/embed_dim").and_then(Value::as_u64) {
        let teacher = v
            .pointer("/generation/shape/embed_dim")
            .and_then(Value::as_u64)
            .unwrap_or(crate::lm::LmShape::default().embed_dim as u64);
        if kd > teacher {
            out.push(Violation {
                path: "defense.kd.student.embed_dim".into(),
                message: format!("student ({kd}) must not be wider than the teacher ({teacher})"),
            });
        }
    }
    out
}
