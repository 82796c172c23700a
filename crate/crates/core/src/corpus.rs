//! Sentence-level subjectivity corpora.
//!
//! Files are delimited UTF-8 text with a header row. The default layout is
//! the shared-task TSV (`sentence_id`, `sentence`, `label`); other layouts are
//! described with a [`ColumnMapping`]. Columns not named in the mapping are
//! ignored.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "OBJ")]
    Objective,
    #[serde(rename = "SUBJ")]
    Subjective,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Objective, Label::Subjective];

    pub fn token(self) -> &'static str {
        match self {
            Label::Objective => "OBJ",
            Label::Subjective => "SUBJ",
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Objective => Label::Subjective,
            Label::Subjective => Label::Objective,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("OBJ") {
            Ok(Label::Objective)
        } else if s.eq_ignore_ascii_case("SUBJ") {
            Ok(Label::Subjective)
        } else {
            Err(Error::Validation(format!("unknown label token {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub language: String,
    pub gold: Option<Label>,
}

impl LabeledSentence {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: impl Into<String>,
        gold: Option<Label>,
    ) -> Self {
        LabeledSentence {
            id: id.into(),
            text: text.into(),
            language: language.into(),
            gold,
        }
    }
}

/// Names the columns of a delimited corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub id_column: String,
    pub text_column: String,
    /// When the column is missing from the header, rows are read as unlabeled.
    /// An empty label field also reads as unlabeled.
    pub label_column: Option<String>,
    pub language_column: Option<String>,
    /// Language assigned to every row when there is no language column.
    pub language: String,
    pub delimiter: char,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id_column: "sentence_id".into(),
            text_column: "sentence".into(),
            label_column: Some("label".into()),
            language_column: None,
            language: "en".into(),
            delimiter: '\t',
        }
    }
}

impl ColumnMapping {
    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("delimiter {:?} must be ASCII", self.delimiter)))
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads every data row of `source` into a sentence, in file order.
pub fn parse_dataset<R: Read>(source: R, mapping: &ColumnMapping) -> Result<Vec<LabeledSentence>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter_byte()?)
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let missing = |name: &str| Error::Parse {
        line: 1,
        message: format!("header has no column named {name:?}"),
    };
    let id_idx = column_index(&headers, &mapping.id_column).ok_or_else(|| missing(&mapping.id_column))?;
    let text_idx =
        column_index(&headers, &mapping.text_column).ok_or_else(|| missing(&mapping.text_column))?;
    let label_idx = mapping
        .label_column
        .as_deref()
        .and_then(|name| column_index(&headers, name));
    let lang_idx = match &mapping.language_column {
        Some(name) => Some(column_index(&headers, name).ok_or_else(|| missing(name))?),
        None => None,
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, 0)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let id = record[id_idx].trim().to_string();
        let text = record[text_idx].to_string();
        if id.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty sentence id")));
        }
        if text.trim().is_empty() {
            return Err(Error::Validation(format!("line {line}: empty sentence text for id {id:?}")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("line {line}: duplicate sentence id {id:?}")));
        }
        let gold = match label_idx {
            Some(i) if record[i].trim().is_empty() => None,
            Some(i) => {
                let token = record[i].trim();
                Some(token.parse::<Label>().map_err(|_| {
                    Error::Validation(format!("line {line}: unknown label token {token:?}"))
                })?)
            }
            None => None,
        };
        let language = match lang_idx {
            Some(i) => record[i].trim().to_string(),
            None => mapping.language.clone(),
        };
        out.push(LabeledSentence {
            id,
            text,
            language,
            gold,
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<dataset>", io),
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            message: format!("invalid UTF-8: {err}"),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes sentences in the layout `parse_dataset` reads with the same mapping.
///
/// The label column is written only when the mapping names one. Fields
/// cannot contain the delimiter or line breaks because the format has no
/// quoting.
pub fn serialize_dataset<W: Write>(
    sentences: &[LabeledSentence],
    mapping: &ColumnMapping,
    mut sink: W,
) -> Result<()> {
    let delim = mapping.delimiter;
    let check = |field: &str, id: &str| -> Result<()> {
        if field.contains(delim) || field.contains('\n') || field.contains('\r') {
            return Err(Error::Validation(format!(
                "sentence {id:?} contains the delimiter or a line break"
            )));
        }
        Ok(())
    };
    let mut header = vec![mapping.id_column.clone(), mapping.text_column.clone()];
    if let Some(label) = &mapping.label_column {
        header.push(label.clone());
    }
    if let Some(lang) = &mapping.language_column {
        header.push(lang.clone());
    }
    let sep = delim.to_string();
    let mut buf = header.join(&sep);
    buf.push('\n');
    for s in sentences {
        check(&s.id, &s.id)?;
        check(&s.text, &s.id)?;
        let mut row = vec![s.id.as_str(), s.text.as_str()];
        if mapping.label_column.is_some() {
            row.push(s.gold.map(Label::token).unwrap_or(""));
        }
        if mapping.language_column.is_some() {
            row.push(&s.language);
        }
        buf.push_str(&row.join(&sep));
        buf.push('\n');
    }
    sink.write_all(buf.as_bytes())
        .map_err(|e| Error::io("<dataset>", e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub total: usize,
    pub obj: usize,
    pub subj: usize,
}

impl SplitStats {
    pub const fn new(total: usize, obj: usize, subj: usize) -> Self {
        SplitStats { total, obj, subj }
    }

    /// True when every row is accounted for by a class count.
    pub fn is_consistent(&self) -> bool {
        self.obj + self.subj == self.total
    }
}

impl Add for SplitStats {
    type Output = SplitStats;

    fn add(self, rhs: SplitStats) -> SplitStats {
        SplitStats {
            total: self.total + rhs.total,
            obj: self.obj + rhs.obj,
            subj: self.subj + rhs.subj,
        }
    }
}

pub fn split_stats(sentences: &[LabeledSentence]) -> SplitStats {
    sentences.iter().fold(SplitStats::default(), |mut acc, s| {
        acc.total += 1;
        match s.gold {
            Some(Label::Objective) => acc.obj += 1,
            Some(Label::Subjective) => acc.subj += 1,
            None => {}
        }
        acc
    })
}

/// Published per-split counts of the shared-task release, keyed by
/// (language, split). Two Dev rows do not sum; they are kept as published.
pub const REFERENCE_STATS: &[(&str, &str, SplitStats)] = &[
    ("en", "train", SplitStats::new(830, 532, 298)),
    ("en", "dev", SplitStats::new(462, 222, 240)),
    ("en", "dev-test", SplitStats::new(484, 362, 122)),
    ("it", "train", SplitStats::new(1613, 1231, 382)),
    ("it", "dev", SplitStats::new(667, 490, 177)),
    ("it", "dev-test", SplitStats::new(513, 377, 136)),
    ("de", "train", SplitStats::new(800, 492, 308)),
    ("de", "dev", SplitStats::new(491, 317, 174)),
    ("de", "dev-test", SplitStats::new(337, 226, 111)),
    ("bg", "train", SplitStats::new(729, 406, 323)),
    ("bg", "dev", SplitStats::new(467, 175, 139)),
    ("bg", "dev-test", SplitStats::new(250, 143, 107)),
    ("ar", "train", SplitStats::new(2446, 1391, 1055)),
    ("ar", "dev", SplitStats::new(742, 266, 201)),
    ("ar", "dev-test", SplitStats::new(748, 425, 323)),
];

pub fn reference_stats(language: &str, split: &str) -> Option<SplitStats> {
    REFERENCE_STATS
        .iter()
        .find(|(l, s, _)| l.eq_ignore_ascii_case(language) && s.eq_ignore_ascii_case(split))
        .map(|(_, _, stats)| *stats)
}

/// Compares observed counts with the published row, returning one warning
/// per discrepancy. Observed counts are never adjusted.
pub fn reference_warnings(language: &str, split: &str, observed: &SplitStats) -> Vec<String> {
    let mut warnings = Vec::new();
    if !observed.is_consistent() {
        warnings.push(format!(
            "{language}/{split}: {} of {} rows carry no gold label",
            observed.total - observed.obj - observed.subj,
            observed.total
        ));
    }
    if let Some(reference) = reference_stats(language, split) {
        if !reference.is_consistent() {
            warnings.push(format!(
                "{language}/{split}: published row does not sum ({} != {} + {}); reporting counts as found",
                reference.total, reference.obj, reference.subj
            ));
        }
        if reference != *observed {
            warnings.push(format!(
                "{language}/{split}: observed {}/{}/{} differs from published {}/{}/{}",
                observed.total, observed.obj, observed.subj, reference.total, reference.obj, reference.subj
            ));
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Vec<LabeledSentence>> {
        parse_dataset(s.as_bytes(), &ColumnMapping::default())
    }

    #[test]
    fn well_formed_rows_in_order() {
        let rows = parse("sentence_id\tsentence\tlabel\na\tOne.\tOBJ\nb\tTwo!\tsubj\nc\tThree\tObj\n").unwrap();
        let ids: Vec<_> = rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(rows[1].gold, Some(Label::Subjective));
        assert_eq!(rows[2].gold, Some(Label::Objective));
        assert_eq!(rows[0].language, "en");
    }

    #[test]
    fn unknown_label_names_token_and_line() {
        let err = parse("sentence_id\tsentence\tlabel\na\tOne.\tOBJ\nb\tTwo\tMAYBE\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("MAYBE") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let err = parse("sentence_id\tsentence\tlabel\na\tOne.\tOBJ\nb\tTwo\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_column_means_unlabeled() {
        let rows = parse("sentence_id\tsentence\na\tOne.\n").unwrap();
        assert_eq!(rows[0].gold, None);
        assert_eq!(split_stats(&rows), SplitStats::new(1, 0, 0));
    }

    #[test]
    fn extra_columns_ignored_and_text_verbatim() {
        let rows =
            parse("solved_conflict\tsentence_id\tsentence\tlabel\nTrue\tx1\t  \"Quoted\" text \tSUBJ\n").unwrap();
        assert_eq!(rows[0].id, "x1");
        assert_eq!(rows[0].text, "  \"Quoted\" text ");
    }

    #[test]
    fn duplicate_ids_and_blank_text_rejected() {
        assert!(matches!(
            parse("sentence_id\tsentence\tlabel\na\tx\tOBJ\na\ty\tOBJ\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse("sentence_id\tsentence\tlabel\na\t   \tOBJ\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn header_only_file_is_empty() {
        assert!(parse("sentence_id\tsentence\tlabel\n").unwrap().is_empty());
        assert!(parse("").unwrap().is_empty());
        assert_eq!(split_stats(&[]), SplitStats::new(0, 0, 0));
    }

    #[test]
    fn csv_mapping_with_language_column() {
        let mapping = ColumnMapping {
            id_column: "id".into(),
            text_column: "text".into(),
            label_column: Some("gold".into()),
            language_column: Some("lang".into()),
            language: "xx".into(),
            delimiter: ',',
        };
        let rows = parse_dataset("lang,id,text,gold\nar,1,hello,SUBJ\n".as_bytes(), &mapping).unwrap();
        assert_eq!(rows[0].language, "ar");
        let mut out = Vec::new();
        serialize_dataset(&rows, &mapping, &mut out).unwrap();
        assert_eq!(parse_dataset(out.as_slice(), &mapping).unwrap(), rows);
    }

    #[test]
    fn reference_rows() {
        assert_eq!(reference_stats("ar", "train"), Some(SplitStats::new(2446, 1391, 1055)));
        assert_eq!(reference_stats("en", "dev-test"), Some(SplitStats::new(484, 362, 122)));
        let bad: Vec<_> = REFERENCE_STATS
            .iter()
            .filter(|(_, _, s)| !s.is_consistent())
            .map(|(l, s, _)| (*l, *s))
            .collect();
        assert_eq!(bad, [("bg", "dev"), ("ar", "dev")]);
        let observed = SplitStats::new(467, 266, 201);
        let warnings = reference_warnings("ar", "dev", &observed);
        assert!(warnings.iter().any(|w| w.contains("does not sum")));
        assert!(reference_warnings("en", "train", &SplitStats::new(830, 532, 298)).is_empty());
    }

    fn sentence_strategy() -> impl Strategy<Value = LabeledSentence> {
        (
            "[a-z0-9]{1,8}",
            "[^\t\r\n]{0,20}[A-Za-z][^\t\r\n]{0,20}",
            prop::option::of(prop::bool::ANY),
        )
            .prop_map(|(id, text, gold)| {
                LabeledSentence::new(
                    id,
                    text,
                    "en",
                    gold.map(|s| if s { Label::Subjective } else { Label::Objective }),
                )
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(rows in prop::collection::vec(sentence_strategy(), 0..20)) {
            let mut seen = HashSet::new();
            let rows: Vec<_> = rows.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let mapping = ColumnMapping::default();
            let mut out = Vec::new();
            serialize_dataset(&rows, &mapping, &mut out).unwrap();
            prop_assert_eq!(parse_dataset(out.as_slice(), &mapping).unwrap(), rows);
        }

        #[test]
        fn stats_are_additive(a in prop::collection::vec(sentence_strategy(), 0..30),
                              b in prop::collection::vec(sentence_strategy(), 0..30)) {
            let joined: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
            prop_assert_eq!(split_stats(&joined), split_stats(&a) + split_stats(&b));
        }
    }
}
