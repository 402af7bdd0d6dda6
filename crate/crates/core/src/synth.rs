//! Seeded synthetic corpora for the reference pipelines.
//!
//! Generation corpora are sampled from a sparse first-order Markov chain over
//! topic-specific pseudo-words. Classification corpora mix a shared word pool
//! with class-specific pools, so classes overlap but remain learnable.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::seed::derived_rng;
use crate::text::Document;

/// Sparse Markov chain over the words `<name>0 … <name>{n-1}`.
#[derive(Debug, Clone)]
pub struct MarkovTopic {
    pub name: String,
    pub words: Vec<String>,
    starts: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl MarkovTopic {
    pub fn new(name: &str, n_words: usize, branching: usize, seed: u64) -> Self {
        assert!(n_words >= 2 && branching >= 1, "topic needs words and successors");
        let mut rng = derived_rng(seed, &format!("topic:{name}"));
        let words: Vec<String> = (0..n_words).map(|i| format!("{name}{i}")).collect();
        let starts = WeightedIndex::new(zipf_weights(n_words)).expect("positive weights");
        let successors = (0..n_words)
            .map(|_| {
                let next: Vec<usize> = (0..branching).map(|_| rng.gen_range(0..n_words)).collect();
                let weights: Vec<f64> = (0..branching).map(|_| rng.gen_range(0.2..1.0)).collect();
                (next, WeightedIndex::new(weights).expect("positive weights"))
            })
            .collect();
        MarkovTopic {
            name: name.to_string(),
            words,
            starts,
            successors,
        }
    }

    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R, min_len: usize, max_len: usize) -> String {
        let len = rng.gen_range(min_len..=max_len);
        let mut w = self.starts.sample(rng);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.words[w].as_str());
            let (next, dist) = &self.successors[w];
            w = next[dist.sample(rng)];
        }
        out.join(" ")
    }
}

fn zipf_weights(n: usize) -> Vec<f64> {
    (1..=n).map(|r| 1.0 / r as f64).collect()
}

/// Unlabelled documents drawn from one Markov topic; ids are `<prefix>-000001`, ….
pub fn generation_corpus(topic: &MarkovTopic, n_docs: usize, prefix: &str, seed: u64) -> Vec<Document> {
    let mut rng = derived_rng(seed, &format!("corpus:{prefix}:{}", topic.name));
    (0..n_docs)
        .map(|i| Document {
            id: format!("{prefix}-{:06}", i + 1),
            text: topic.sentence(&mut rng, 8, 16),
            label: None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCorpusShape {
    pub num_classes: usize,
    pub shared_words: usize,
    pub class_words: usize,
    /// Probability that a token comes from the document's class pool.
    pub class_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ClassCorpusShape {
    fn default() -> Self {
        ClassCorpusShape {
            num_classes: 4,
            shared_words: 20000,
            class_words: 300,
            class_rate: 0.06,
            min_len: 12,
            max_len: 24,
        }
    }
}

/// Labelled documents; labels are `class0 … class{C-1}` and words are
/// prefixed with `word_prefix` so distinct corpora can share no vocabulary.
pub fn classification_corpus(
    shape: &ClassCorpusShape,
    n_docs: usize,
    prefix: &str,
    word_prefix: &str,
    seed: u64,
) -> Vec<Document> {
    let mut rng = derived_rng(seed, &format!("corpus:{prefix}:{word_prefix}"));
    let shared = WeightedIndex::new(zipf_weights(shape.shared_words)).expect("positive weights");
    let class = WeightedIndex::new(zipf_weights(shape.class_words)).expect("positive weights");
    (0..n_docs)
        .map(|i| {
            let label = i % shape.num_classes;
            let len = rng.gen_range(shape.min_len..=shape.max_len);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(shape.class_rate) {
                        format!("{word_prefix}c{label}x{}", class.sample(&mut rng))
                    } else {
                        format!("{word_prefix}s{}", shared.sample(&mut rng))
                    }
                })
                .collect();
            Document {
                id: format!("{prefix}-{:06}", i + 1),
                text: words.join(" "),
                label: Some(format!("class{label}")),
            }
        })
        .collect()
}
