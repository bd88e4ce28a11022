//! Corpus ingestion: word normalization, frequency-ranked dictionaries,
//! CoNLL column files and plain-text language-model corpora.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Reserved word used to pad sentence borders.
pub const PADDING: &str = "PADDING";
/// Reserved word standing in for every out-of-dictionary token.
pub const RARE: &str = "RARE";
pub const PADDING_INDEX: usize = 0;
pub const RARE_INDEX: usize = 1;

/// Replacement for every maximal run of ASCII digits.
pub const NUMBER: &str = "NUMBER";

/// Lowercases a token and replaces each maximal run of ASCII digits by
/// `NUMBER`, so `PS1` and `PS2` both become `psNUMBER`.
///
/// An existing `NUMBER` substring is kept verbatim; this makes the function
/// idempotent.
pub fn normalize_word(raw: &str) -> Result<String> {
    if raw.is_empty() {
        return Err(Error::InvalidToken("empty token".into()));
    }
    let mut out = String::with_capacity(raw.len() + 8);
    let mut rest = raw;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with(NUMBER) {
            out.push_str(NUMBER);
            rest = &rest[NUMBER.len()..];
        } else if c.is_ascii_digit() {
            let run = rest.bytes().take_while(u8::is_ascii_digit).count();
            out.push_str(NUMBER);
            rest = &rest[run..];
        } else {
            out.extend(c.to_lowercase());
            rest = &rest[c.len_utf8()..];
        }
    }
    Ok(out)
}

/// Dense word → index map. Index 0 is always [`PADDING`], index 1 is
/// always [`RARE`]; remaining entries are in descending corpus frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Dictionary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Dictionary {
    pub fn reserved_only() -> Self {
        Self::from_entries(vec![PADDING.to_string(), RARE.to_string()])
            .expect("reserved entries are valid")
    }

    /// Builds a dictionary from entries already in index order.
    pub fn from_entries(entries: Vec<String>) -> Result<Self> {
        if entries.len() < 2 || entries[PADDING_INDEX] != PADDING || entries[RARE_INDEX] != RARE {
            return Err(Error::InvalidConfig(format!(
                "dictionary must start with {PADDING} and {RARE}"
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() || e.chars().any(char::is_whitespace) {
                return Err(Error::InvalidToken(format!("dictionary entry {i}: {e:?}")));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate dictionary entry {e:?}")));
            }
        }
        Ok(Self { entries, index })
    }

    /// Keeps the `max_size - 2` most frequent normalized words of the stream.
    /// Ties are broken by first occurrence.
    pub fn build<I, S>(tokens: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let normalized = tokens
            .into_iter()
            .filter_map(|t| normalize_word(t.as_ref()).ok());
        Self::build_exact(normalized, max_size)
    }

    /// Like [`Dictionary::build`] but counts the tokens verbatim. Used for
    /// tag, suffix and cascade dictionaries.
    pub fn build_exact<I, S>(tokens: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size < 3 {
            return Err(Error::InvalidConfig(format!(
                "dictionary size must be at least 3, got {max_size}"
            )));
        }
        let mut dict = Self::reserved_only();
        let ranked = rank_by_frequency(tokens, &dict.index);
        if ranked.is_empty() {
            log::warn!("building a dictionary from an empty token stream");
        }
        for word in ranked.into_iter().take(max_size - 2) {
            dict.push(word);
        }
        Ok(dict)
    }

    /// Returns a copy extended by the `extra` most frequent normalized words
    /// of `tokens` that are not already present. Existing indices are kept.
    pub fn extend<I, S>(&self, tokens: I, extra: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let normalized = tokens
            .into_iter()
            .filter_map(|t| normalize_word(t.as_ref()).ok());
        let mut dict = self.clone();
        for word in rank_by_frequency(normalized, &self.index).into_iter().take(extra) {
            dict.push(word);
        }
        dict
    }

    fn push(&mut self, word: String) {
        self.index.insert(word.clone(), self.entries.len());
        self.entries.push(word);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(String::as_str)
    }

    /// Index of the normalized token, [`RARE_INDEX`] when absent.
    /// The literal reserved words map to their reserved indices.
    pub fn map_word(&self, raw: &str) -> usize {
        match raw {
            PADDING => PADDING_INDEX,
            RARE => RARE_INDEX,
            _ => normalize_word(raw)
                .ok()
                .and_then(|w| self.get(&w))
                .unwrap_or(RARE_INDEX),
        }
    }

    /// Index of `key` without normalization, [`RARE_INDEX`] when absent.
    pub fn map_exact(&self, key: &str) -> usize {
        self.get(key).unwrap_or(RARE_INDEX)
    }

    /// Reads one entry per line; the line number is the index.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            entries.push(line.trim_end_matches('\r').to_string());
        }
        Self::from_entries(entries)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        for e in &self.entries {
            writeln!(writer, "{e}")?;
        }
        Ok(())
    }
}

/// Distinct tokens not in `skip`, by descending count then first occurrence.
fn rank_by_frequency<I, S>(tokens: I, skip: &HashMap<String, usize>) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.into_iter().enumerate() {
        let tok = tok.as_ref();
        if tok.is_empty() || skip.contains_key(tok) {
            continue;
        }
        match counts.get_mut(tok) {
            Some((count, _)) => *count += 1,
            None => {
                counts.insert(tok.to_string(), (1, pos));
            }
        }
    }
    let mut ranked: Vec<(String, usize, usize)> =
        counts.into_iter().map(|(w, (c, first))| (w, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.into_iter().map(|(w, _, _)| w).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub token_count: usize,
    pub type_count: usize,
    /// Fraction of tokens mapped to a non-RARE index.
    pub coverage: f64,
}

impl CorpusStats {
    pub fn compute<I, S>(dict: &Dictionary, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut token_count = 0;
        let mut covered = 0;
        let mut types = std::collections::HashSet::new();
        for tok in tokens {
            let tok = tok.as_ref();
            token_count += 1;
            if let Ok(n) = normalize_word(tok) {
                types.insert(n);
            }
            if dict.map_word(tok) != RARE_INDEX {
                covered += 1;
            }
        }
        let coverage = if token_count == 0 {
            0.0
        } else {
            covered as f64 / token_count as f64
        };
        Self {
            token_count,
            type_count: types.len(),
            coverage,
        }
    }
}

/// A sentence ready for the network: one index row per discrete feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub raw_words: Vec<String>,
    pub feature_rows: Vec<Vec<usize>>,
    pub gold_tags: Option<Vec<usize>>,
    /// Predicate position, for role labeling.
    pub verb_position: Option<usize>,
}

impl Sentence {
    pub fn new(
        raw_words: Vec<String>,
        feature_rows: Vec<Vec<usize>>,
        gold_tags: Option<Vec<usize>>,
        verb_position: Option<usize>,
    ) -> Result<Self> {
        let len = raw_words.len();
        if len == 0 {
            return Err(Error::Empty("sentence"));
        }
        for row in &feature_rows {
            if row.len() != len {
                return Err(Error::LengthMismatch {
                    what: "feature row",
                    expected: len,
                    actual: row.len(),
                });
            }
        }
        if let Some(tags) = &gold_tags {
            if tags.len() != len {
                return Err(Error::LengthMismatch {
                    what: "gold tags",
                    expected: len,
                    actual: tags.len(),
                });
            }
        }
        if let Some(v) = verb_position {
            if v >= len {
                return Err(Error::IndexOutOfRange {
                    what: "verb position".into(),
                    index: v,
                    size: len,
                });
            }
        }
        Ok(Self {
            raw_words,
            feature_rows,
            gold_tags,
            verb_position,
        })
    }

    pub fn len(&self) -> usize {
        self.raw_words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_words.is_empty()
    }

    /// Checks every feature index against its dictionary size.
    pub fn check_bounds(&self, feature_sizes: &[usize]) -> Result<()> {
        if feature_sizes.len() != self.feature_rows.len() {
            return Err(Error::LengthMismatch {
                what: "feature count",
                expected: feature_sizes.len(),
                actual: self.feature_rows.len(),
            });
        }
        for (k, (row, &size)) in self.feature_rows.iter().zip(feature_sizes).enumerate() {
            if let Some(&bad) = row.iter().find(|&&i| i >= size) {
                return Err(Error::IndexOutOfRange {
                    what: format!("feature {k}"),
                    index: bad,
                    size,
                });
            }
        }
        Ok(())
    }
}

/// Which CoNLL columns play which role. Column indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub word: usize,
    pub tag: Option<usize>,
    pub features: Vec<usize>,
}

impl ColumnSpec {
    pub fn words_only(word: usize) -> Self {
        Self {
            word,
            tag: None,
            features: Vec::new(),
        }
    }

    fn max_column(&self) -> usize {
        self.features
            .iter()
            .copied()
            .chain(self.tag)
            .fold(self.word, usize::max)
    }
}

/// One sentence of a column file, rows kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllSentence {
    pub rows: Vec<Vec<String>>,
    /// 1-based line number of the first row.
    pub first_line: usize,
}

impl ConllSentence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, col: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[col].clone()).collect()
    }

    pub fn num_columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Streams sentences out of a column file. A ragged sentence yields an
/// error and reading resumes at the next sentence.
pub struct ConllReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    columns: Option<usize>,
    min_columns: usize,
}

impl<R: BufRead> ConllReader<R> {
    pub fn new(reader: R, spec: &ColumnSpec) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            columns: None,
            min_columns: spec.max_column() + 1,
        }
    }
}

impl<R: BufRead> Iterator for ConllReader<R> {
    type Item = Result<ConllSentence>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut rows = Vec::new();
        let mut first_line = 0;
        let mut failure: Option<Error> = None;
        loop {
            let line = match self.lines.next() {
                None => break,
                Some(Err(e)) => return Some(Err(e.into())),
                Some(Ok(l)) => l,
            };
            self.line_no += 1;
            let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if cols.is_empty() {
                if rows.is_empty() && failure.is_none() {
                    continue;
                }
                break;
            }
            if rows.is_empty() && failure.is_none() {
                first_line = self.line_no;
            }
            if failure.is_some() {
                continue;
            }
            let expected = *self.columns.get_or_insert(cols.len());
            if cols.len() != expected {
                failure = Some(Error::Parse {
                    line: self.line_no,
                    message: format!("expected {expected} columns, found {}", cols.len()),
                });
            } else if cols.len() < self.min_columns {
                failure = Some(Error::Parse {
                    line: self.line_no,
                    message: format!(
                        "need at least {} columns, found {}",
                        self.min_columns,
                        cols.len()
                    ),
                });
            } else {
                rows.push(cols);
            }
        }
        if let Some(e) = failure {
            return Some(Err(e));
        }
        if rows.is_empty() {
            None
        } else {
            Some(Ok(ConllSentence { rows, first_line }))
        }
    }
}

/// Reads a whole column file; the first malformed row aborts.
pub fn read_conll<R: BufRead>(reader: R, spec: &ColumnSpec) -> Result<Vec<ConllSentence>> {
    ConllReader::new(reader, spec).collect()
}

/// Writes sentences with the predicted tag appended as the last column,
/// one blank line after each sentence.
pub fn write_conll<W: Write>(
    mut writer: W,
    sentences: &[ConllSentence],
    predicted: &[Vec<String>],
) -> Result<()> {
    if sentences.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            what: "predicted sentences",
            expected: sentences.len(),
            actual: predicted.len(),
        });
    }
    for (sentence, tags) in sentences.iter().zip(predicted) {
        if sentence.len() != tags.len() {
            return Err(Error::LengthMismatch {
                what: "predicted tags",
                expected: sentence.len(),
                actual: tags.len(),
            });
        }
        for (row, tag) in sentence.rows.iter().zip(tags) {
            for col in row {
                write!(writer, "{col} ")?;
            }
            writeln!(writer, "{tag}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Plain-text corpus: one whitespace-tokenized sentence per line; blank
/// lines are skipped.
pub fn read_text_corpus<R: BufRead>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let tokens: Vec<String> = line?.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            out.push(tokens);
        }
    }
    Ok(out)
}

/// Splits off the trailing `fraction` of the items as a held-out set.
pub fn split_holdout<T>(items: &[T], fraction: f64) -> (&[T], &[T]) {
    let fraction = fraction.clamp(0.0, 1.0);
    let held = ((items.len() as f64) * fraction).round() as usize;
    items.split_at(items.len() - held.min(items.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_digit_runs_and_case() {
        assert_eq!(normalize_word("PS1").unwrap(), "psNUMBER");
        assert_eq!(normalize_word("PS2").unwrap(), "psNUMBER");
        assert_eq!(normalize_word("The").unwrap(), "the");
        assert_eq!(normalize_word("2,000").unwrap(), "NUMBER,NUMBER");
        assert_eq!(normalize_word("1987").unwrap(), "NUMBER");
        assert!(matches!(normalize_word(""), Err(Error::InvalidToken(_))));
    }

    #[test]
    fn dictionary_orders_by_frequency() {
        let toks = "a a a a a b b b c".split(' ');
        let d = Dictionary::build(toks, 4).unwrap();
        assert_eq!(d.entries(), &["PADDING", "RARE", "a", "b"]);
    }

    #[test]
    fn dictionary_ties_follow_first_occurrence() {
        let d = Dictionary::build("b a a b".split(' '), 4).unwrap();
        assert_eq!(d.entries(), &["PADDING", "RARE", "b", "a"]);
        let d = Dictionary::build("a b b a".split(' '), 4).unwrap();
        assert_eq!(d.entries(), &["PADDING", "RARE", "a", "b"]);
    }

    #[test]
    fn dictionary_counts_after_normalization() {
        let d = Dictionary::build("The the THE cat PS1 PS2".split(' '), 10).unwrap();
        assert_eq!(d.entries(), &["PADDING", "RARE", "the", "psNUMBER", "cat"]);
    }

    #[test]
    fn empty_stream_gives_reserved_only() {
        let d = Dictionary::build(Vec::<String>::new(), 10).unwrap();
        assert_eq!(d.len(), 2);
        assert!(Dictionary::build(["a"], 2).is_err());
    }

    #[test]
    fn extension_keeps_existing_indices() {
        let base = Dictionary::build("a a b".split(' '), 4).unwrap();
        let grown = base.extend("c c c a d".split(' '), 1);
        assert_eq!(grown.entries(), &["PADDING", "RARE", "a", "b", "c"]);
    }

    #[test]
    fn map_word_falls_back_to_rare() {
        let d = Dictionary::build("the cat".split(' '), 10).unwrap();
        assert_eq!(d.map_word("The"), d.get("the").unwrap());
        assert_eq!(d.map_word("dog"), RARE_INDEX);
        assert_eq!(d.map_word("PADDING"), PADDING_INDEX);
        assert_eq!(d.map_word(""), RARE_INDEX);
    }

    #[test]
    fn dictionary_file_round_trip() {
        let d = Dictionary::build("x y y z".split(' '), 10).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "PADDING\nRARE\ny\nx\nz\n");
        assert_eq!(Dictionary::read_from(&buf[..]).unwrap(), d);
        assert!(Dictionary::read_from("RARE\nPADDING\n".as_bytes()).is_err());
    }

    #[test]
    fn corpus_stats_coverage() {
        let d = Dictionary::build("a b".split(' '), 10).unwrap();
        let s = CorpusStats::compute(&d, "a b c c".split(' '));
        assert_eq!(s.token_count, 4);
        assert_eq!(s.type_count, 3);
        assert!((s.coverage - 0.5).abs() < 1e-12);
    }

    fn spec3() -> ColumnSpec {
        ColumnSpec {
            word: 0,
            tag: Some(2),
            features: vec![1],
        }
    }

    #[test]
    fn reads_sentences_at_blank_lines() {
        let text = "He PRP B-NP\nruns VBZ B-VP\n\n";
        let s = read_conll(text.as_bytes(), &spec3()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[0].column(2), vec!["B-NP", "B-VP"]);
    }

    #[test]
    fn last_sentence_without_trailing_blank() {
        let text = "a X O\n\nb Y O\nc Z O";
        let s = read_conll(text.as_bytes(), &spec3()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].column(0), vec!["b", "c"]);
        assert_eq!(s[1].first_line, 3);
        assert!(read_conll("".as_bytes(), &spec3()).unwrap().is_empty());
    }

    #[test]
    fn ragged_rows_report_line() {
        let text = "a X O\nb Y\n";
        match read_conll(text.as_bytes(), &spec3()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lenient_reader_skips_bad_sentence() {
        let text = "a X O\nb Y\n\nc Z O\n";
        let items: Vec<_> = ConllReader::new(text.as_bytes(), &spec3()).collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_err());
        assert_eq!(items[1].as_ref().unwrap().column(0), vec!["c"]);
    }

    #[test]
    fn write_appends_prediction_and_round_trips() {
        let text = "He PRP B-NP\nruns VBZ B-VP\n\nOk UH O\n";
        let sents = read_conll(text.as_bytes(), &spec3()).unwrap();
        let preds = vec![
            vec!["B-NP".to_string(), "I-NP".to_string()],
            vec!["O".to_string()],
        ];
        let mut out = Vec::new();
        write_conll(&mut out, &sents, &preds).unwrap();
        let written = String::from_utf8(out).unwrap();
        assert_eq!(written, "He PRP B-NP B-NP\nruns VBZ B-VP I-NP\n\nOk UH O O\n\n");
        let again = read_conll(written.as_bytes(), &spec3()).unwrap();
        assert_eq!(again.len(), 2);
        for (a, b) in sents.iter().zip(&again) {
            assert_eq!(a.column(0), b.column(0));
            assert_eq!(a.column(2), b.column(2));
        }
        assert_eq!(again[0].column(3), preds[0]);
        assert!(write_conll(Vec::new(), &sents, &preds[..1]).is_err());
        let mut empty = Vec::new();
        write_conll(&mut empty, &[], &[]).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sentence_validation() {
        assert!(Sentence::new(vec!["a".into()], vec![vec![0, 1]], None, None).is_err());
        assert!(Sentence::new(vec![], vec![], None, None).is_err());
        let s = Sentence::new(vec!["a".into()], vec![vec![3]], Some(vec![0]), None).unwrap();
        assert!(s.check_bounds(&[4]).is_ok());
        assert!(s.check_bounds(&[3]).is_err());
    }

    #[test]
    fn holdout_takes_tail() {
        let v: Vec<u32> = (0..10).collect();
        let (a, b) = split_holdout(&v, 0.2);
        assert_eq!(a.len(), 8);
        assert_eq!(b, &[8, 9]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(w in "\\PC{1,12}") {
            let once = normalize_word(&w).unwrap();
            prop_assert_eq!(normalize_word(&once).unwrap(), once);
        }

        #[test]
        fn map_word_in_range(words in proptest::collection::vec("[a-zA-Z0-9]{1,5}", 0..40), probe in "\\PC{0,8}") {
            let d = Dictionary::build(words.iter(), 8).unwrap();
            prop_assert!(d.map_word(&probe) < d.len());
            prop_assert!(d.len() <= 8);
        }
    }
}
