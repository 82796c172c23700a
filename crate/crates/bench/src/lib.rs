//! Synthetic inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subjcheck_core::{EmbeddingStore, EmbeddingVector, Label, LabeledSentence};

/// Alternating-label pool of `n` sentences plus a target `"q"`, all with
/// random unit-range embeddings of dimension `dim`.
pub fn pool(n: usize, dim: usize, seed: u64) -> (Vec<LabeledSentence>, EmbeddingStore, LabeledSentence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new("bench");
    let vector = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        v[0] += 2.0;
        EmbeddingVector::new(v).expect("non-zero vector")
    };
    let sentences: Vec<LabeledSentence> = (0..n)
        .map(|i| {
            let gold = if i % 2 == 0 { Label::Objective } else { Label::Subjective };
            LabeledSentence::new(format!("p{i:05}"), format!("Sentence number {i}."), "en", Some(gold))
        })
        .collect();
    for s in &sentences {
        store.insert(s.id.clone(), vector(&mut rng)).expect("fresh id");
    }
    let target = LabeledSentence::new("q", "Target sentence.", "en", None);
    store.insert("q", vector(&mut rng)).expect("fresh id");
    (sentences, store, target)
}

/// `n` (prediction, gold) pairs with a fixed error rate.
pub fn label_pairs(n: usize, seed: u64) -> Vec<(Label, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let gold = if rng.gen_bool(0.4) { Label::Subjective } else { Label::Objective };
            let pred = if rng.gen_bool(0.2) { gold.flip() } else { gold };
            (pred, gold)
        })
        .collect()
}
