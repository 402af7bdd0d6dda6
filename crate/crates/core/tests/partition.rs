use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use perprob::pipeline::{partition, shadow_training_docs, AdversarySpec, DatasetBundle, Pattern};
use perprob::text::Document;

fn labelled(sizes: &[usize]) -> Vec<Document> {
    let mut docs = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            docs.push(Document {
                id: format!("c{c}-{i}"),
                text: format!("w{c} w{i}"),
                label: Some(format!("class{c}")),
            });
        }
    }
    docs
}

fn splits(b: &DatasetBundle) -> [&[Document]; 4] {
    [&b.d_victim_train, &b.d_victim_test, &b.d_shadow_train, &b.d_shadow_test]
}

fn check_stratified(sizes: &[usize], seed: u64) -> Result<(), TestCaseError> {
    let corpus = labelled(sizes);
    let b = partition(&corpus, &BTreeMap::new(), seed).unwrap();
    let total = corpus.len() as f64;
    let mut ids = HashSet::new();
    for split in splits(&b) {
        for (c, &n) in sizes.iter().enumerate() {
            let label = format!("class{c}");
            let got = split.iter().filter(|d| d.label.as_deref() == Some(label.as_str())).count();
            let want = n as f64 * split.len() as f64 / total;
            prop_assert!((got as f64 - want).abs() <= 1.0, "class {c}: {got} vs {want:.2}");
        }
        for d in split {
            prop_assert!(ids.insert(d.id.clone()), "{} reused", d.id);
        }
    }
    prop_assert_eq!(ids.len(), corpus.len());
    Ok(())
}

#[test]
fn four_class_corpus_is_stratified() {
    check_stratified(&[250, 250, 250, 250], 1).unwrap();
    check_stratified(&[7, 300, 41, 12], 2).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_split_keeps_class_proportions(
        sizes in prop::collection::vec(1usize..60, 2..6),
        seed in 0u64..1000,
    ) {
        prop_assume!(sizes.iter().sum::<usize>() >= 8);
        check_stratified(&sizes, seed)?;
    }
}

#[test]
fn shadow_data_per_pattern() {
    let corpus = labelled(&[50, 50]);
    let aux: Vec<Document> = (0..30)
        .map(|i| Document {
            id: format!("aux-{i}"),
            text: "x".into(),
            label: Some("class0".into()),
        })
        .collect();
    let b = partition(&corpus, &BTreeMap::from([("a".to_string(), aux)]), 5).unwrap();
    let ids = |docs: &[Document]| docs.iter().map(|d| d.id.clone()).collect::<HashSet<_>>();
    let shadow = ids(&b.d_shadow_train);
    let victim = ids(&b.d_victim_train);

    let adv1 = shadow_training_docs(&AdversarySpec::new(Pattern::Adv1), &b, 5).unwrap();
    assert_eq!(ids(&adv1), shadow);

    let adv3 = shadow_training_docs(&AdversarySpec::new(Pattern::Adv3).with_aux("a"), &b, 5).unwrap();
    assert_eq!(adv3.len(), 30 + 4);
    assert_eq!(adv3.iter().filter(|d| d.id.starts_with("aux-")).count(), 30);
    assert!(adv3.iter().filter(|d| !d.id.starts_with("aux-")).all(|d| shadow.contains(&d.id)));

    let adv4 = shadow_training_docs(&AdversarySpec::new(Pattern::Adv4).with_leak(0.5), &b, 5).unwrap();
    assert_eq!(adv4.len(), 40 + 20);
    assert_eq!(adv4.iter().filter(|d| victim.contains(&d.id)).count(), 20);

    let missing = AdversarySpec::new(Pattern::Adv3).with_aux("nope");
    assert!(shadow_training_docs(&missing, &b, 5).is_err());
}
