#![allow(dead_code)]

use std::collections::BTreeMap;

use perprob::pipeline::{partition, DatasetBundle, GenerationConfig};
use perprob::synth::{classification_corpus, generation_corpus, ClassCorpusShape, MarkovTopic};
use perprob::text::Document;

pub fn topic_corpus(name: &str, n: usize, seed: u64) -> Vec<Document> {
    generation_corpus(&MarkovTopic::new(name, 200, 4, seed), n, name, seed)
}

/// Unlabelled bundle with a disjoint-topic auxiliary corpus under `"aux"`.
pub fn generation_bundle(n: usize, seed: u64) -> DatasetBundle {
    let aux = BTreeMap::from([("aux".to_string(), topic_corpus("aux", n / 2, seed))]);
    partition(&topic_corpus("w", n, seed), &aux, seed).unwrap()
}

pub fn class_bundle(n: usize, seed: u64) -> DatasetBundle {
    let corpus = classification_corpus(&ClassCorpusShape::default(), n, "doc", "", seed);
    partition(&corpus, &BTreeMap::new(), seed).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn generation_config() -> GenerationConfig {
    GenerationConfig::default()
}
