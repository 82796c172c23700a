//! Label-quality audit: gold/prediction disagreements ranked by how
//! strongly the classifier members agree with each other.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSentence};
use crate::error::{Error, Result};
use crate::strategies::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sentence_id: String,
    pub text: String,
    pub gold: Label,
    pub predicted: Label,
    /// Fraction of members voting for `predicted`.
    pub agreement: f64,
    pub votes: usize,
    /// Where the full exchange for this sentence can be found.
    pub transcript_ref: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

/// Disagreements only, sorted by descending agreement, then by id.
/// `transcript_ref` maps a sentence id to its transcript reference.
pub fn build_audit(
    sentences: &[LabeledSentence],
    predictions: &[Prediction],
    transcript_ref: impl Fn(&str) -> String,
) -> Result<AuditReport> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.sentence_id.as_str(), p)).collect();
    let mut entries = Vec::new();
    for s in sentences {
        let gold = s
            .gold
            .ok_or_else(|| Error::Validation(format!("sentence {:?} has no gold label", s.id)))?;
        let Some(p) = by_id.get(s.id.as_str()) else { continue };
        if p.label == gold {
            continue;
        }
        entries.push(AuditEntry {
            sentence_id: s.id.clone(),
            text: s.text.clone(),
            gold,
            predicted: p.label,
            agreement: p.agreement(),
            votes: p.votes.as_ref().map_or(1, |v| v.len()),
            transcript_ref: transcript_ref(&s.id),
        });
    }
    entries.sort_by(|a, b| {
        b.agreement
            .partial_cmp(&a.agreement)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    Ok(AuditReport { entries })
}

impl AuditReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated, one entry per line, rank first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tsentence_id\tgold\tpredicted\tagreement\ttranscript\tsentence\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.3}\t{}\t{}\n",
                i + 1,
                e.sentence_id,
                e.gold,
                e.predicted,
                e.agreement,
                e.transcript_ref,
                e.text.replace(['\t', '\n'], " ")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::classify_ensemble;
    use Label::*;

    fn votes(labels: &[Label]) -> Vec<(String, Label)> {
        labels.iter().enumerate().map(|(i, l)| (format!("m{i}"), *l)).collect()
    }

    #[test]
    fn unanimous_disagreement_ranks_first() {
        let sentences = vec![
            LabeledSentence::new("a", "A.", "en", Some(Subjective)),
            LabeledSentence::new("b", "B.", "en", Some(Subjective)),
            LabeledSentence::new("c", "C.", "en", Some(Objective)),
        ];
        let preds = vec![
            classify_ensemble("a", &votes(&[Objective, Objective, Objective, Subjective, Subjective]), Objective).unwrap(),
            classify_ensemble("b", &votes(&[Objective; 5]), Objective).unwrap(),
            classify_ensemble("c", &votes(&[Objective; 5]), Objective).unwrap(),
        ];
        let report = build_audit(&sentences, &preds, |id| format!("transcripts.jsonl#{id}")).unwrap();
        let ids: Vec<_> = report.entries.iter().map(|e| e.sentence_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(report.entries[0].agreement, 1.0);
        assert!((report.entries[1].agreement - 0.6).abs() < 1e-12);
        assert_eq!(report.entries[0].transcript_ref, "transcripts.jsonl#b");
    }

    #[test]
    fn agreement_everywhere_is_empty() {
        let sentences = vec![LabeledSentence::new("a", "A.", "en", Some(Objective))];
        let preds = vec![classify_ensemble("a", &votes(&[Objective]), Objective).unwrap()];
        assert!(build_audit(&sentences, &preds, |_| String::new()).unwrap().is_empty());
    }
}
