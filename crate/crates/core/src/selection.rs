//! Class-balanced few-shot exemplar selection.
//!
//! Every shot set holds `k/2` objective and `k/2` subjective exemplars,
//! interleaved objective-first. Random selection is fully specified so that
//! a seed reproduces the same ids on any platform:
//!
//! * generator: ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)`);
//! * bounded draw: take `next_u64()`, reject values at or above the largest
//!   multiple of `n` not exceeding 2^64, return the remainder mod `n`;
//! * per class (objective first, then subjective, one shared stream), a
//!   partial Fisher–Yates shuffle of the class members in pool order:
//!   for `i` in `0..k/2`, swap position `i` with `i + draw(n - i)`; the
//!   first `k/2` positions are the picks.

use std::collections::HashSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSentence};
use crate::embedding::{rank_by_similarity, EmbeddingStore, SimilarityOrder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    Random { seed: u64 },
    Similar,
    Dissimilar,
}

impl SelectionStrategy {
    pub fn needs_embeddings(&self) -> bool {
        !matches!(self, SelectionStrategy::Random { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub sentence: LabeledSentence,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSet {
    shots: Vec<Shot>,
}

impl ShotSet {
    pub fn empty() -> Self {
        ShotSet::default()
    }

    pub fn k(&self) -> usize {
        self.shots.len()
    }

    pub fn shots(&self) -> &[Shot] {
        &self.shots
    }

    pub fn ids(&self) -> Vec<&str> {
        self.shots.iter().map(|s| s.sentence.id.as_str()).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.shots.iter().filter(|s| s.label == label).count()
    }
}

/// Partial Fisher–Yates over a ChaCha8 stream; see the module docs.
pub(crate) struct ShotSampler {
    rng: ChaCha8Rng,
}

impl ShotSampler {
    pub(crate) fn new(seed: u64) -> Self {
        ShotSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u128;
        let zone = (1u128 << 64) - (1u128 << 64) % n;
        loop {
            let x = u128::from(self.rng.next_u64());
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Picks `m` distinct positions of `0..n`, in draw order.
    pub(crate) fn pick(&mut self, n: usize, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(m);
        idx
    }
}

pub fn select_shots(
    strategy: &SelectionStrategy,
    pool: &[LabeledSentence],
    store: Option<&EmbeddingStore>,
    target: &LabeledSentence,
    k: usize,
) -> Result<ShotSet> {
    if !k.is_multiple_of(2) {
        return Err(Error::Contract(format!("shot count k={k} must be even")));
    }
    let per_class = k / 2;
    if per_class == 0 {
        return Ok(ShotSet::empty());
    }

    let mut seen = HashSet::new();
    let mut by_class: [Vec<&LabeledSentence>; 2] = [Vec::new(), Vec::new()];
    for s in pool {
        if s.id == target.id || !seen.insert(s.id.as_str()) {
            continue;
        }
        match s.gold {
            Some(Label::Objective) => by_class[0].push(s),
            Some(Label::Subjective) => by_class[1].push(s),
            None => {}
        }
    }
    for (members, label) in by_class.iter().zip(Label::ALL) {
        if members.len() < per_class {
            return Err(Error::Capacity {
                class: label,
                needed: per_class,
                available: members.len(),
            });
        }
    }

    let picked: Vec<Vec<&LabeledSentence>> = match strategy {
        SelectionStrategy::Random { seed } => {
            let mut sampler = ShotSampler::new(*seed);
            by_class
                .iter()
                .map(|members| {
                    sampler
                        .pick(members.len(), per_class)
                        .into_iter()
                        .map(|i| members[i])
                        .collect()
                })
                .collect()
        }
        SelectionStrategy::Similar | SelectionStrategy::Dissimilar => {
            let store = store.ok_or_else(|| {
                Error::Contract(format!("{strategy:?} selection needs an embedding store"))
            })?;
            let order = if *strategy == SelectionStrategy::Similar {
                SimilarityOrder::MostSimilar
            } else {
                SimilarityOrder::LeastSimilar
            };
            by_class
                .iter()
                .map(|members| {
                    let ids: Vec<&str> = members.iter().map(|s| s.id.as_str()).collect();
                    let ranked = rank_by_similarity(store, &target.id, &ids, order)?;
                    Ok(ranked
                        .iter()
                        .take(per_class)
                        .map(|id| {
                            *members
                                .iter()
                                .find(|s| &s.id == id)
                                .expect("ranked ids come from members")
                        })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
    };

    let mut shots = Vec::with_capacity(k);
    for i in 0..per_class {
        for (class, label) in picked.iter().zip(Label::ALL) {
            shots.push(Shot {
                sentence: class[i].clone(),
                label,
            });
        }
    }
    Ok(ShotSet { shots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;

    fn pool(n_obj: usize, n_subj: usize) -> Vec<LabeledSentence> {
        let mut out = Vec::new();
        for i in 0..n_obj {
            out.push(LabeledSentence::new(format!("o{i}"), format!("objective {i}"), "en", Some(Label::Objective)));
        }
        for i in 0..n_subj {
            out.push(LabeledSentence::new(format!("s{i}"), format!("subjective {i}"), "en", Some(Label::Subjective)));
        }
        out
    }

    fn target() -> LabeledSentence {
        LabeledSentence::new("t", "target", "en", Some(Label::Subjective))
    }

    #[test]
    fn k_zero_is_empty() {
        let set = select_shots(&SelectionStrategy::Random { seed: 1 }, &[], None, &target(), 0).unwrap();
        assert_eq!(set.k(), 0);
    }

    #[test]
    fn odd_k_rejected() {
        let err = select_shots(&SelectionStrategy::Random { seed: 1 }, &pool(5, 5), None, &target(), 3);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn capacity_error_names_class() {
        match select_shots(&SelectionStrategy::Random { seed: 1 }, &pool(5, 1), None, &target(), 4) {
            Err(Error::Capacity { class, needed, available }) => {
                assert_eq!((class, needed, available), (Label::Subjective, 2, 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn target_in_pool_is_excluded() {
        let mut p = pool(1, 1);
        p.push(target());
        let set = select_shots(&SelectionStrategy::Random { seed: 3 }, &p, None, &target(), 2).unwrap();
        assert_eq!(set.ids(), ["o0", "s0"]);
        let mut p = pool(1, 0);
        p.push(target());
        assert!(select_shots(&SelectionStrategy::Random { seed: 3 }, &p, None, &target(), 2).is_err());
    }

    #[test]
    fn similar_without_store_is_contract_error() {
        let err = select_shots(&SelectionStrategy::Similar, &pool(3, 3), None, &target(), 2);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn similar_takes_top_per_class_interleaved() {
        let p = pool(4, 4);
        let mut store = EmbeddingStore::new("t");
        store.insert("t", EmbeddingVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        // Angle grows with index, so lower index = more similar.
        for s in &p {
            let i: f64 = s.id[1..].parse().unwrap();
            let offset = if s.id.starts_with('s') { 0.05 } else { 0.0 };
            let angle = 0.1 * i + offset;
            store.insert(s.id.clone(), EmbeddingVector::new(vec![angle.cos(), angle.sin()]).unwrap()).unwrap();
        }
        let set = select_shots(&SelectionStrategy::Similar, &p, Some(&store), &target(), 6).unwrap();
        assert_eq!(set.ids(), ["o0", "s0", "o1", "s1", "o2", "s2"]);
        let set = select_shots(&SelectionStrategy::Dissimilar, &p, Some(&store), &target(), 6).unwrap();
        assert_eq!(set.ids(), ["o3", "s3", "o2", "s2", "o1", "s1"]);
        assert_eq!(set.count(Label::Objective), 3);
        assert_eq!(set.count(Label::Subjective), 3);
    }

    #[test]
    fn random_is_deterministic() {
        let p = pool(20, 20);
        let a = select_shots(&SelectionStrategy::Random { seed: 7 }, &p, None, &target(), 12).unwrap();
        let b = select_shots(&SelectionStrategy::Random { seed: 7 }, &p, None, &target(), 12).unwrap();
        assert_eq!(a, b);
        let c = select_shots(&SelectionStrategy::Random { seed: 8 }, &p, None, &target(), 12).unwrap();
        assert_ne!(a.ids(), c.ids());
    }

    #[test]
    fn sampler_draws_are_distinct_and_in_range() {
        let mut s = ShotSampler::new(99);
        for n in 1..40 {
            let picks = s.pick(n, n.min(7));
            let unique: HashSet<_> = picks.iter().collect();
            assert_eq!(unique.len(), picks.len());
            assert!(picks.iter().all(|&i| i < n));
        }
    }
}
