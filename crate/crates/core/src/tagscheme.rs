//! Chunk tagging schemes (IOB, IOE, IOBES), span extraction and chunk F1.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Iob,
    Ioe,
    Iobes,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Iob, Scheme::Ioe, Scheme::Iobes];

    fn allows(self, prefix: char) -> bool {
        match self {
            Scheme::Iob => matches!(prefix, 'B' | 'I'),
            Scheme::Ioe => matches!(prefix, 'I' | 'E'),
            Scheme::Iobes => matches!(prefix, 'B' | 'I' | 'E' | 'S'),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iob" | "bio" => Ok(Scheme::Iob),
            "ioe" => Ok(Scheme::Ioe),
            "iobes" | "bioes" => Ok(Scheme::Iobes),
            _ => Err(Error::InvalidConfig(format!("unknown tagging scheme {s:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Iob => "iob",
            Scheme::Ioe => "ioe",
            Scheme::Iobes => "iobes",
        })
    }
}

/// A labeled segment, `start..=end` in word positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl ChunkSpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }
}

/// Splits `B-NP` into `('B', "NP")`; `O` gives `None`.
fn split_tag(tag: &str, scheme: Scheme) -> Result<Option<(char, &str)>> {
    if tag == "O" {
        return Ok(None);
    }
    let invalid = |reason: &str| Error::InvalidTag {
        tag: tag.to_string(),
        reason: reason.to_string(),
    };
    let (prefix, label) = tag.split_once('-').ok_or_else(|| invalid("expected PREFIX-LABEL or O"))?;
    let mut chars = prefix.chars();
    let (Some(p), None) = (chars.next(), chars.next()) else {
        return Err(invalid("prefix must be one letter"));
    };
    if label.is_empty() {
        return Err(invalid("empty label"));
    }
    if !scheme.allows(p) {
        return Err(invalid(&format!("prefix {p} not allowed in {scheme}")));
    }
    Ok(Some((p, label)))
}

/// Extracts chunks. Malformed continuations (an `I-X` after `O` or after a
/// different label, an `E-X` opening nothing) start a new chunk.
pub fn spans_from_tags<S: AsRef<str>>(tags: &[S], scheme: Scheme) -> Result<Vec<ChunkSpan>> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (t, tag) in tags.iter().enumerate() {
        match split_tag(tag.as_ref(), scheme)? {
            None => {
                if let Some((label, start)) = open.take() {
                    spans.push(ChunkSpan::new(label, start, t - 1));
                }
            }
            Some((prefix, label)) => {
                let starts = match prefix {
                    'B' | 'S' => true,
                    _ => open.is_none_or(|(l, _)| l != label),
                };
                if starts {
                    if let Some((l, start)) = open.take() {
                        spans.push(ChunkSpan::new(l, start, t - 1));
                    }
                    open = Some((label, t));
                }
                if matches!(prefix, 'E' | 'S') {
                    let (l, start) = open.take().expect("chunk is open");
                    spans.push(ChunkSpan::new(l, start, t));
                }
            }
        }
    }
    if let Some((label, start)) = open {
        spans.push(ChunkSpan::new(label, start, tags.len() - 1));
    }
    Ok(spans)
}

pub fn tags_from_spans(spans: &[ChunkSpan], len: usize, scheme: Scheme) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    let mut next_free = 0;
    for span in spans {
        if span.start < next_free || span.end < span.start || span.end >= len {
            return Err(Error::SpanOverlap(format!(
                "{}:{}..={} (length {len})",
                span.label, span.start, span.end
            )));
        }
        next_free = span.end + 1;
        for (t, slot) in tags.iter_mut().enumerate().take(span.end + 1).skip(span.start) {
            let prefix = match scheme {
                Scheme::Iob if t == span.start => 'B',
                Scheme::Iob => 'I',
                Scheme::Ioe if t == span.end => 'E',
                Scheme::Ioe => 'I',
                Scheme::Iobes if span.start == span.end => 'S',
                Scheme::Iobes if t == span.start => 'B',
                Scheme::Iobes if t == span.end => 'E',
                Scheme::Iobes => 'I',
            };
            *slot = format!("{prefix}-{}", span.label);
        }
    }
    Ok(tags)
}

/// S→B and E→I; everything else is kept.
pub fn iobes_to_iob<S: AsRef<str>>(tags: &[S]) -> Result<Vec<String>> {
    tags.iter()
        .map(|tag| {
            Ok(match split_tag(tag.as_ref(), Scheme::Iobes)? {
                None => "O".to_string(),
                Some(('S', l)) => format!("B-{l}"),
                Some(('E', l)) => format!("I-{l}"),
                Some((p, l)) => format!("{p}-{l}"),
            })
        })
        .collect()
}

/// Re-encodes a tag row through its chunk spans.
pub fn convert<S: AsRef<str>>(tags: &[S], from: Scheme, to: Scheme) -> Result<Vec<String>> {
    tags_from_spans(&spans_from_tags(tags, from)?, tags.len(), to)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_word_accuracy: f64,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub correct_chunks: usize,
    pub tokens: usize,
}

impl EvalReport {
    /// `precision: P%; recall: R%; FB1: F`, two decimals.
    pub fn summary(&self) -> String {
        format!(
            "precision: {:.2}%; recall: {:.2}%; FB1: {:.2}",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        )
    }

    pub fn accuracy_line(&self) -> String {
        format!("accuracy: {:.2}%", 100.0 * self.per_word_accuracy)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

/// Exact-match chunk precision/recall/F1 plus per-word tag accuracy.
pub fn evaluate<S: AsRef<str>, P: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<P>], scheme: Scheme) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            what: "evaluated sentences",
            expected: gold.len(),
            actual: predicted.len(),
        });
    }
    let (mut n_gold, mut n_pred, mut n_correct, mut tokens, mut same) = (0, 0, 0, 0, 0);
    for (g, p) in gold.iter().zip(predicted) {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch {
                what: "evaluated tags",
                expected: g.len(),
                actual: p.len(),
            });
        }
        tokens += g.len();
        same += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
        let mut gs = spans_from_tags(g, scheme)?;
        let ps = spans_from_tags(p, scheme)?;
        gs.sort();
        n_gold += gs.len();
        n_pred += ps.len();
        n_correct += ps.iter().filter(|s| gs.binary_search(s).is_ok()).count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(n_correct, n_pred);
    let recall = ratio(n_correct, n_gold);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        per_word_accuracy: ratio(same, tokens),
        gold_chunks: n_gold,
        predicted_chunks: n_pred,
        correct_chunks: n_correct,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn iobes_spans() {
        let spans = spans_from_tags(&["B-NP", "E-NP", "O", "S-VP"], Scheme::Iobes).unwrap();
        assert_eq!(spans, vec![ChunkSpan::new("NP", 0, 1), ChunkSpan::new("VP", 3, 3)]);
    }

    #[test]
    fn iob_b_starts_new_chunk() {
        let spans = spans_from_tags(&["B-NP", "I-NP", "B-NP"], Scheme::Iob).unwrap();
        assert_eq!(spans, vec![ChunkSpan::new("NP", 0, 1), ChunkSpan::new("NP", 2, 2)]);
        assert!(spans_from_tags(&["O", "O"], Scheme::Iob).unwrap().is_empty());
    }

    #[test]
    fn lenient_decoding() {
        let spans = spans_from_tags(&["O", "I-NP", "E-VP"], Scheme::Iobes).unwrap();
        assert_eq!(spans, vec![ChunkSpan::new("NP", 1, 1), ChunkSpan::new("VP", 2, 2)]);
        let spans = spans_from_tags(&["I-NP", "I-NP", "E-NP", "I-NP"], Scheme::Ioe).unwrap();
        assert_eq!(spans, vec![ChunkSpan::new("NP", 0, 2), ChunkSpan::new("NP", 3, 3)]);
    }

    #[test]
    fn rejects_unknown_prefixes() {
        assert!(spans_from_tags(&["X-NP"], Scheme::Iobes).is_err());
        assert!(spans_from_tags(&["S-NP"], Scheme::Iob).is_err());
        assert!(spans_from_tags(&["NP"], Scheme::Iob).is_err());
        assert!(iobes_to_iob(&["Q-NP"]).is_err());
    }

    #[test]
    fn spans_to_tags() {
        let t = tags_from_spans(&[ChunkSpan::new("NP", 0, 0)], 1, Scheme::Iobes).unwrap();
        assert_eq!(t, v(&["S-NP"]));
        let t = tags_from_spans(&[ChunkSpan::new("NP", 0, 2)], 3, Scheme::Iobes).unwrap();
        assert_eq!(t, v(&["B-NP", "I-NP", "E-NP"]));
        let t = tags_from_spans(&[ChunkSpan::new("NP", 0, 2)], 3, Scheme::Ioe).unwrap();
        assert_eq!(t, v(&["I-NP", "I-NP", "E-NP"]));
        let overlap = [ChunkSpan::new("A", 0, 1), ChunkSpan::new("B", 1, 2)];
        assert!(tags_from_spans(&overlap, 3, Scheme::Iob).is_err());
        assert!(tags_from_spans(&[ChunkSpan::new("A", 2, 3)], 3, Scheme::Iob).is_err());
    }

    #[test]
    fn iobes_to_iob_table() {
        assert_eq!(iobes_to_iob(&["S-VP"]).unwrap(), v(&["B-VP"]));
        assert_eq!(iobes_to_iob(&["B-NP", "I-NP", "E-NP"]).unwrap(), v(&["B-NP", "I-NP", "I-NP"]));
        assert_eq!(iobes_to_iob(&["O"]).unwrap(), v(&["O"]));
    }

    #[test]
    fn evaluation_counts() {
        let gold = vec![v(&["B-NP", "E-NP", "O", "S-VP"])];
        let report = evaluate(&gold, &gold, Scheme::Iobes).unwrap();
        assert_eq!((report.precision, report.recall, report.f1), (1.0, 1.0, 1.0));

        let pred = vec![v(&["B-NP", "E-NP", "B-VP", "E-VP"])];
        let r = evaluate(&gold, &pred, Scheme::Iobes).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.correct_chunks, 1);
        assert_eq!(r.per_word_accuracy, 0.5);
        assert_eq!(r.summary(), "precision: 50.00%; recall: 50.00%; FB1: 50.00");

        let none = vec![v(&["O", "O", "O", "O"])];
        let r = evaluate(&gold, &none, Scheme::Iobes).unwrap();
        assert_eq!(r.f1, 0.0);
        assert!(evaluate(&gold, &[v(&["O"])], Scheme::Iobes).is_err());
    }

    fn arb_spans() -> impl Strategy<Value = (Vec<ChunkSpan>, usize)> {
        proptest::collection::vec((0usize..3, 1usize..4, 0usize..3), 0..6).prop_map(|parts| {
            let mut spans = Vec::new();
            let mut pos = 0;
            for (gap, len, label) in parts {
                let start = pos + gap;
                spans.push(ChunkSpan::new(["NP", "VP", "PP"][label], start, start + len - 1));
                pos = start + len;
            }
            let trailing = pos % 2;
            (spans, (pos + trailing).max(1))
        })
    }

    proptest! {
        #[test]
        fn spans_round_trip((spans, len) in arb_spans()) {
            for scheme in Scheme::ALL {
                let tags = tags_from_spans(&spans, len, scheme).unwrap();
                prop_assert_eq!(&spans_from_tags(&tags, scheme).unwrap(), &spans);
                let again = tags_from_spans(&spans_from_tags(&tags, scheme).unwrap(), len, scheme).unwrap();
                prop_assert_eq!(again, tags);
            }
        }

        #[test]
        fn iob_conversion_preserves_spans((spans, len) in arb_spans()) {
            let iobes = tags_from_spans(&spans, len, Scheme::Iobes).unwrap();
            let iob = iobes_to_iob(&iobes).unwrap();
            prop_assert_eq!(spans_from_tags(&iob, Scheme::Iob).unwrap(), spans);
        }

        #[test]
        fn f1_one_iff_identical((a, la) in arb_spans(), (b, lb) in arb_spans()) {
            let len = la.max(lb);
            let ga = vec![tags_from_spans(&a, len, Scheme::Iobes).unwrap()];
            let gb = vec![tags_from_spans(&b, len, Scheme::Iobes).unwrap()];
            let r = evaluate(&ga, &gb, Scheme::Iobes).unwrap();
            prop_assert!(r.f1 >= 0.0 && r.f1 <= 1.0);
            prop_assert_eq!(r.f1 == 1.0, a == b && !a.is_empty());
            let swapped = evaluate(&gb, &ga, Scheme::Iobes).unwrap();
            prop_assert!((r.f1 - swapped.f1).abs() < 1e-12);
        }
    }
}
