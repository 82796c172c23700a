//! Confusion matrices and macro-averaged scores, SUBJ as the positive class.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp_subj: u64,
    pub fp_subj: u64,
    pub fn_subj: u64,
    pub tn_subj: u64,
}

impl ConfusionMatrix {
    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = ConfusionMatrix::default();
        for (pred, gold) in pairs {
            m.record(pred, gold);
        }
        m
    }

    pub fn record(&mut self, pred: Label, gold: Label) {
        use Label::*;
        match (pred, gold) {
            (Subjective, Subjective) => self.tp_subj += 1,
            (Subjective, Objective) => self.fp_subj += 1,
            (Objective, Subjective) => self.fn_subj += 1,
            (Objective, Objective) => self.tn_subj += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp_subj + self.fp_subj + self.fn_subj + self.tn_subj
    }

    pub fn is_diagonal(&self) -> bool {
        self.fp_subj == 0 && self.fn_subj == 0
    }
}

/// Tabulates predictions against gold. The key sets must match exactly.
pub fn confusion(preds: &HashMap<String, Label>, gold: &HashMap<String, Label>) -> Result<ConfusionMatrix> {
    let missing_gold: BTreeSet<&str> = preds.keys().filter(|k| !gold.contains_key(*k)).map(String::as_str).collect();
    let missing_pred: BTreeSet<&str> = gold.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !missing_gold.is_empty() || !missing_pred.is_empty() {
        let mut msg = String::from("prediction and gold ids differ");
        if !missing_pred.is_empty() {
            let _ = write!(msg, "; no prediction for: {}", join(&missing_pred));
        }
        if !missing_gold.is_empty() {
            let _ = write!(msg, "; no gold label for: {}", join(&missing_gold));
        }
        return Err(Error::Validation(msg));
    }
    Ok(ConfusionMatrix::from_pairs(preds.iter().map(|(id, p)| (*p, gold[id]))))
}

fn join(ids: &BTreeSet<&str>) -> String {
    ids.iter().copied().collect::<Vec<_>>().join(", ")
}

/// Gold labels keyed by id; unlabeled sentences are a validation error.
pub fn gold_map(sentences: &[LabeledSentence]) -> Result<HashMap<String, Label>> {
    sentences
        .iter()
        .map(|s| match s.gold {
            Some(l) => Ok((s.id.clone(), l)),
            None => Err(Error::Validation(format!("sentence {:?} has no gold label", s.id))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of the class.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_scores(tp: u64, fp: u64, fn_: u64) -> ClassScores {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1, support: tp + fn_ }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    pub subjective: ClassScores,
    pub objective: ClassScores,
    pub n_scored: u64,
    /// Scored predictions that came from the fallback rule.
    pub n_fallback: u64,
    pub matrix: ConfusionMatrix,
}

/// Per-class and macro scores. Any 0/0 ratio counts as 0.
pub fn score(m: &ConfusionMatrix) -> Result<EvalReport> {
    if m.total() == 0 {
        return Err(Error::Contract("cannot score an empty confusion matrix".into()));
    }
    let subjective = class_scores(m.tp_subj, m.fp_subj, m.fn_subj);
    let objective = class_scores(m.tn_subj, m.fn_subj, m.fp_subj);
    Ok(EvalReport {
        macro_f1: (subjective.f1 + objective.f1) / 2.0,
        macro_precision: (subjective.precision + objective.precision) / 2.0,
        macro_recall: (subjective.recall + objective.recall) / 2.0,
        accuracy: ratio(m.tp_subj + m.tn_subj, m.total()),
        subjective,
        objective,
        n_scored: m.total(),
        n_fallback: 0,
        matrix: *m,
    })
}

impl EvalReport {
    pub fn with_fallback(mut self, n: u64) -> Self {
        self.n_fallback = n;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Aligned text table, one row per named report.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    const HEADERS: [&str; 9] = ["run", "macro-F1", "macro-P", "macro-R", "SUBJ-F1", "OBJ-F1", "acc", "n", "fallback"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.to_string(),
                format!("{:.4}", r.macro_f1),
                format!("{:.4}", r.macro_precision),
                format!("{:.4}", r.macro_recall),
                format!("{:.4}", r.subjective.f1),
                format!("{:.4}", r.objective.f1),
                format!("{:.4}", r.accuracy),
                r.n_scored.to_string(),
                r.n_fallback.to_string(),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let mut l = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(l, "{cell:<w$}");
            } else {
                let _ = write!(l, "  {cell:>w$}");
            }
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(&HEADERS);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maps(pairs: &[(Label, Label)]) -> (HashMap<String, Label>, HashMap<String, Label>) {
        let p = pairs.iter().enumerate().map(|(i, (p, _))| (format!("s{i}"), *p)).collect();
        let g = pairs.iter().enumerate().map(|(i, (_, g))| (format!("s{i}"), *g)).collect();
        (p, g)
    }

    #[test]
    fn perfect_predictions() {
        use Label::*;
        let pairs: Vec<_> = (0..10).map(|i| if i < 4 { (Subjective, Subjective) } else { (Objective, Objective) }).collect();
        let (p, g) = maps(&pairs);
        let m = confusion(&p, &g).unwrap();
        assert_eq!(m, ConfusionMatrix { tp_subj: 4, fp_subj: 0, fn_subj: 0, tn_subj: 6 });
        assert_eq!(score(&m).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn all_objective_predictions() {
        use Label::*;
        let pairs: Vec<_> = (0..10).map(|i| (Objective, if i < 3 { Subjective } else { Objective })).collect();
        let (p, g) = maps(&pairs);
        let m = confusion(&p, &g).unwrap();
        assert_eq!(m, ConfusionMatrix { tp_subj: 0, fp_subj: 0, fn_subj: 3, tn_subj: 7 });
        let r = score(&m).unwrap();
        assert_eq!(r.subjective.f1, 0.0);
        assert_eq!(r.subjective.precision, 0.0);
        let obj_f1 = 2.0 * 0.7 * 1.0 / 1.7;
        assert!((r.objective.f1 - obj_f1).abs() < 1e-12);
        assert!((r.macro_f1 - obj_f1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_keys_list_the_difference() {
        let p: HashMap<String, Label> = [("a".to_string(), Label::Objective)].into();
        let g: HashMap<String, Label> = [("b".to_string(), Label::Objective)].into();
        let err = confusion(&p, &g).unwrap_err().to_string();
        assert!(err.contains("no prediction for: b"), "{err}");
        assert!(err.contains("no gold label for: a"), "{err}");
    }

    #[test]
    fn empty_matrix_is_contract_error() {
        assert!(matches!(score(&ConfusionMatrix::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn table_is_aligned() {
        let r = score(&ConfusionMatrix { tp_subj: 3, fp_subj: 1, fn_subj: 2, tn_subj: 4 }).unwrap();
        let t = render_table(&[("zero-shot", &r), ("6-shot random", &r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[2].starts_with("zero-shot "));
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..200, 0u64..200, 0u64..200, 0u64..200)
            .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
            .prop_map(|(tp_subj, fp_subj, fn_subj, tn_subj)| ConfusionMatrix { tp_subj, fp_subj, fn_subj, tn_subj })
    }

    proptest! {
        #[test]
        fn label_swap_symmetry(m in matrix()) {
            let swapped = ConfusionMatrix { tp_subj: m.tn_subj, fp_subj: m.fn_subj, fn_subj: m.fp_subj, tn_subj: m.tp_subj };
            let a = score(&m).unwrap().macro_f1;
            let b = score(&swapped).unwrap().macro_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn macro_f1_bounds(m in matrix()) {
            let f = score(&m).unwrap().macro_f1;
            prop_assert!((0.0..=1.0).contains(&f));
            // A diagonal matrix with only one class present still scores 0
            // on the absent class, so "1 iff diagonal" needs both classes.
            let both = m.tp_subj + m.fn_subj > 0 && m.tn_subj + m.fp_subj > 0;
            if both {
                prop_assert_eq!(f == 1.0, m.is_diagonal());
            }
        }

        #[test]
        fn scale_invariance(m in matrix(), c in 1u64..20) {
            let scaled = ConfusionMatrix { tp_subj: m.tp_subj * c, fp_subj: m.fp_subj * c, fn_subj: m.fn_subj * c, tn_subj: m.tn_subj * c };
            let a = score(&m).unwrap();
            let b = score(&scaled).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        }
    }
}
