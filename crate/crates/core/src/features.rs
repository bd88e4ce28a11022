//! Discrete per-word features: capitalization, suffixes, gazetteer
//! membership, cascaded tags, relative positions and parse-tree levels.

use std::collections::HashSet;
use std::io::BufRead;

use crate::corpus::{Dictionary, Sentence, PADDING, PADDING_INDEX};
use crate::error::{Error, Result};

/// Default clipping distance for relative-position features.
pub const DEFAULT_POSITION_CLIP: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Caps {
    Lower = 0,
    AllCaps = 1,
    InitCap = 2,
    HasCap = 3,
    /// Padding and tokens without letters.
    None = 4,
}

impl Caps {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn caps_feature(raw: &str) -> Caps {
    if raw == PADDING {
        return Caps::None;
    }
    let letters: Vec<char> = raw.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        Caps::None
    } else if letters.iter().all(|c| c.is_lowercase()) {
        Caps::Lower
    } else if letters.iter().all(|c| c.is_uppercase()) {
        Caps::AllCaps
    } else if raw.chars().next().is_some_and(char::is_uppercase) {
        Caps::InitCap
    } else {
        Caps::HasCap
    }
}

/// Lowercased last `n` characters; the whole word when shorter.
pub fn suffix_of(raw: &str, n: usize) -> String {
    let count = raw.chars().count();
    raw.chars()
        .skip(count.saturating_sub(n))
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn build_suffix_dictionary<I, S>(words: I, n: usize) -> Dictionary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let suffixes = words.into_iter().map(|w| suffix_of(w.as_ref(), n));
    Dictionary::build_exact(suffixes, usize::MAX).expect("unbounded size is valid")
}

pub fn suffix_feature(dict: &Dictionary, raw: &str, n: usize) -> usize {
    if raw == PADDING {
        return PADDING_INDEX;
    }
    dict.map_exact(&suffix_of(raw, n))
}

/// Maps an external tag row (POS, chunk, cluster path…) through its own
/// dictionary, unseen tags going to RARE.
pub fn cascade_feature<S: AsRef<str>>(tags: &[S], dict: &Dictionary) -> Vec<usize> {
    tags.iter().map(|t| dict.map_exact(t.as_ref())).collect()
}

/// Encodes `clamp(i - anchor, -clip, clip)` as an index in `0..=2*clip`.
pub fn relative_position_feature(i: isize, anchor: isize, clip: usize) -> usize {
    let clip = clip as isize;
    ((i - anchor).clamp(-clip, clip) + clip) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureKind {
    /// Normalized word looked up in a word dictionary.
    Word,
    Caps,
    Suffix { len: usize },
    /// Tag taken verbatim from a CoNLL column (cascading).
    Column { column: usize },
}

/// One lookup-table input: how to compute its index row and its embedding
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Present for every kind except [`FeatureKind::Caps`].
    pub dictionary: Option<Dictionary>,
    pub dim: usize,
}

impl FeatureSpec {
    pub fn word(dictionary: Dictionary, dim: usize) -> Self {
        Self {
            name: "word".into(),
            kind: FeatureKind::Word,
            dictionary: Some(dictionary),
            dim,
        }
    }

    pub fn caps(dim: usize) -> Self {
        Self {
            name: "caps".into(),
            kind: FeatureKind::Caps,
            dictionary: None,
            dim,
        }
    }

    pub fn suffix(dictionary: Dictionary, len: usize, dim: usize) -> Self {
        Self {
            name: "suffix".into(),
            kind: FeatureKind::Suffix { len },
            dictionary: Some(dictionary),
            dim,
        }
    }

    pub fn column(name: impl Into<String>, column: usize, dictionary: Dictionary, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Column { column },
            dictionary: Some(dictionary),
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec(format!("feature {} has dimension 0", self.name)));
        }
        match (&self.kind, &self.dictionary) {
            (FeatureKind::Caps, _) => Ok(()),
            (FeatureKind::Suffix { len: 0 }, _) => {
                Err(Error::InvalidSpec("suffix length must be at least 1".into()))
            }
            (_, None) => Err(Error::InvalidSpec(format!(
                "feature {} needs a dictionary",
                self.name
            ))),
            (_, Some(_)) => Ok(()),
        }
    }

    /// Number of lookup-table rows.
    pub fn size(&self) -> usize {
        match self.kind {
            FeatureKind::Caps => Caps::COUNT,
            _ => self.dictionary.as_ref().map_or(0, Dictionary::len),
        }
    }

    /// Index used for sentence-border padding.
    pub fn padding_index(&self) -> usize {
        match self.kind {
            FeatureKind::Caps => Caps::None.index(),
            _ => PADDING_INDEX,
        }
    }

    /// Computes the index row for one sentence. `rows` holds the raw CoNLL
    /// columns and is only needed by [`FeatureKind::Column`].
    pub fn encode<S: AsRef<str>>(&self, words: &[S], rows: Option<&[Vec<String>]>) -> Result<Vec<usize>> {
        let dict = || {
            self.dictionary
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec(format!("feature {} needs a dictionary", self.name)))
        };
        Ok(match &self.kind {
            FeatureKind::Word => {
                let d = dict()?;
                words.iter().map(|w| d.map_word(w.as_ref())).collect()
            }
            FeatureKind::Caps => words.iter().map(|w| caps_feature(w.as_ref()).index()).collect(),
            FeatureKind::Suffix { len } => {
                let d = dict()?;
                words.iter().map(|w| suffix_feature(d, w.as_ref(), *len)).collect()
            }
            FeatureKind::Column { column } => {
                let d = dict()?;
                let rows = rows.ok_or_else(|| {
                    Error::InvalidConfig(format!("feature {} needs column input", self.name))
                })?;
                if rows.len() != words.len() {
                    return Err(Error::LengthMismatch {
                        what: "column rows",
                        expected: words.len(),
                        actual: rows.len(),
                    });
                }
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    let tag = row.get(*column).ok_or_else(|| Error::IndexOutOfRange {
                        what: format!("column for feature {}", self.name),
                        index: *column,
                        size: row.len(),
                    })?;
                    out.push(d.map_exact(tag));
                }
                out
            }
        })
    }
}

/// Encodes a sentence through every feature of a model.
pub fn encode_sentence(
    features: &[FeatureSpec],
    words: Vec<String>,
    rows: Option<&[Vec<String>]>,
    gold_tags: Option<Vec<usize>>,
    verb_position: Option<usize>,
) -> Result<Sentence> {
    let feature_rows = features
        .iter()
        .map(|f| f.encode(&words, rows))
        .collect::<Result<Vec<_>>>()?;
    Sentence::new(words, feature_rows, gold_tags, verb_position)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GazetteerCategory {
    Loc,
    Per,
    Org,
    Misc,
}

impl GazetteerCategory {
    pub const ALL: [GazetteerCategory; 4] = [Self::Loc, Self::Per, Self::Org, Self::Misc];

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LOC" => Some(Self::Loc),
            "PER" => Some(Self::Per),
            "ORG" => Some(Self::Org),
            "MISC" => Some(Self::Misc),
            _ => None,
        }
    }
}

/// Lowercased entity phrases, one set per category.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    /// Phrases stored as space-joined lowercased words.
    phrases: [HashSet<String>; 4],
    max_len: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<S: AsRef<str>>(&mut self, category: GazetteerCategory, phrase: &[S]) -> Result<()> {
        if phrase.is_empty() {
            return Err(Error::Empty("gazetteer phrase"));
        }
        let words: Vec<String> = phrase.iter().map(|w| w.as_ref().to_lowercase()).collect();
        self.max_len = self.max_len.max(words.len());
        self.phrases[category as usize].insert(words.join(" "));
        Ok(())
    }

    /// Reads `CATEGORY<TAB>phrase words` lines.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut g = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (cat, phrase) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected CATEGORY<TAB>phrase".into(),
            })?;
            let category = GazetteerCategory::parse(cat.trim()).ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("unknown gazetteer category {cat:?}"),
            })?;
            let words: Vec<&str> = phrase.split_whitespace().collect();
            g.insert(category, &words).map_err(|_| Error::Parse {
                line: n + 1,
                message: "empty phrase".into(),
            })?;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.phrases.iter().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// For each category (in [`GazetteerCategory::ALL`] order), marks every
    /// word covered by some n-gram of the sentence matching a phrase.
    pub fn features<S: AsRef<str>>(&self, words: &[S]) -> [Vec<bool>; 4] {
        let lower: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
        let t = lower.len();
        let mut rows: [Vec<bool>; 4] = std::array::from_fn(|_| vec![false; t]);
        for start in 0..t {
            for end in start + 1..=t.min(start + self.max_len) {
                let gram = lower[start..end].join(" ");
                for (c, set) in self.phrases.iter().enumerate() {
                    if set.contains(&gram) {
                        rows[c][start..end].iter_mut().for_each(|x| *x = true);
                    }
                }
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseNode {
    Word(String),
    Phrase { label: String, children: Vec<ParseNode> },
}

/// Bracketed constituency tree over the words of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub root: ParseNode,
}

impl ParseTree {
    /// Parses `(S (NP They) (VP are ...))`. A label-less wrapper around a
    /// single tree, as in `( (S ...) )`, is removed.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = tokenize_tree(text);
        let mut pos = 0;
        let root = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse {
                line: 1,
                message: "trailing input after tree".into(),
            });
        }
        let root = match root {
            ParseNode::Phrase { label, mut children } if label.is_empty() && children.len() == 1 => {
                children.pop().expect("one child")
            }
            other => other,
        };
        if !matches!(root, ParseNode::Phrase { .. }) {
            return Err(Error::Parse {
                line: 1,
                message: "tree root must be a phrase".into(),
            });
        }
        Ok(Self { root })
    }

    pub fn leaves(&self) -> Vec<&str> {
        fn walk<'a>(n: &'a ParseNode, out: &mut Vec<&'a str>) {
            match n {
                ParseNode::Word(w) => out.push(w),
                ParseNode::Phrase { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Number of phrase levels above the words.
    pub fn height(&self) -> usize {
        fn h(n: &ParseNode) -> usize {
            match n {
                ParseNode::Word(_) => 0,
                ParseNode::Phrase { children, .. } => 1 + children.iter().map(h).max().unwrap_or(0),
            }
        }
        h(&self.root)
    }
}

fn tokenize_tree(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_node(tokens: &[String], pos: &mut usize) -> Result<ParseNode> {
    let err = |m: &str| Error::Parse {
        line: 1,
        message: m.to_string(),
    };
    match tokens.get(*pos).map(String::as_str) {
        Some("(") => {
            *pos += 1;
            let label = match tokens.get(*pos).map(String::as_str) {
                Some("(") => String::new(),
                Some(")") | None => return Err(err("empty node")),
                Some(l) => {
                    *pos += 1;
                    l.to_string()
                }
            };
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        break;
                    }
                    None => return Err(err("unbalanced parentheses")),
                    _ => children.push(parse_node(tokens, pos)?),
                }
            }
            if children.is_empty() {
                return Err(err("phrase without children"));
            }
            Ok(ParseNode::Phrase { label, children })
        }
        Some(")") => Err(err("unexpected ')'")),
        Some(w) => {
            *pos += 1;
            Ok(ParseNode::Word(w.to_string()))
        }
        None => Err(err("empty tree")),
    }
}

/// Working tree for level extraction: trimmed phrases become word spans.
enum Span {
    Leaf { start: usize, end: usize },
    Node { label: String, children: Vec<Span> },
}

fn to_spans(node: &ParseNode, next: &mut usize) -> Span {
    match node {
        ParseNode::Word(_) => {
            let s = *next;
            *next += 1;
            Span::Leaf { start: s, end: s }
        }
        ParseNode::Phrase { label, children } => Span::Node {
            label: label.clone(),
            children: children.iter().map(|c| to_spans(c, next)).collect(),
        },
    }
}

fn trim(span: Span) -> Span {
    match span {
        Span::Node { children, .. } if children.iter().all(|c| matches!(c, Span::Leaf { .. })) => {
            let start = match children.first() {
                Some(Span::Leaf { start, .. }) => *start,
                _ => unreachable!("phrases have children"),
            };
            let end = match children.last() {
                Some(Span::Leaf { end, .. }) => *end,
                _ => unreachable!("phrases have children"),
            };
            Span::Leaf { start, end }
        }
        Span::Node { label, children } => Span::Node {
            label,
            children: children.into_iter().map(trim).collect(),
        },
        leaf => leaf,
    }
}

fn tag_segments(span: &Span, is_root: bool, tags: &mut [String]) {
    let Span::Node { label, children } = span else {
        return;
    };
    let mut run: Option<(usize, usize)> = None;
    let flush = |run: &mut Option<(usize, usize)>, tags: &mut [String]| {
        if let Some((s, e)) = run.take() {
            if is_root {
                return;
            }
            for (t, tag) in tags.iter_mut().enumerate().take(e + 1).skip(s) {
                let prefix = if s == e {
                    'S'
                } else if t == s {
                    'B'
                } else if t == e {
                    'E'
                } else {
                    'I'
                };
                *tag = format!("{prefix}-{label}");
            }
        }
    };
    for child in children {
        match child {
            Span::Leaf { start, end } => {
                run = Some(match run {
                    Some((s, _)) => (s, *end),
                    None => (*start, *end),
                });
            }
            node => {
                flush(&mut run, tags);
                tag_segments(node, false, tags);
            }
        }
    }
    flush(&mut run, tags);
}

/// IOBES tag rows for levels `0..=depth`. Level 0 labels each word with the
/// segment formed by the word leaves of its phrase; each further level first
/// collapses every phrase whose children are all leaves. Words directly
/// under the root, or every word once the root is collapsed, get `O`.
pub fn parse_levels(tree: &ParseTree, sentence_len: usize, depth: usize) -> Result<Vec<Vec<String>>> {
    let mut next = 0;
    let mut span = to_spans(&tree.root, &mut next);
    if next != sentence_len {
        return Err(Error::LengthMismatch {
            what: "parse tree leaves",
            expected: sentence_len,
            actual: next,
        });
    }
    let mut levels = Vec::with_capacity(depth + 1);
    for level in 0..=depth {
        if level > 0 {
            span = trim(span);
        }
        let mut tags = vec!["O".to_string(); sentence_len];
        tag_segments(&span, true, &mut tags);
        levels.push(tags);
    }
    Ok(levels)
}

/// IOBES tag inventory over phrase labels: `O` plus B/I/E/S per label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTagSet {
    labels: Vec<String>,
}

impl ParseTagSet {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }

    pub fn size(&self) -> usize {
        4 * self.labels.len() + 1
    }

    pub fn index(&self, tag: &str) -> Result<usize> {
        if tag == "O" {
            return Ok(0);
        }
        let bad = || Error::InvalidTag {
            tag: tag.to_string(),
            reason: "not an IOBES phrase tag".into(),
        };
        let (prefix, label) = tag.split_once('-').ok_or_else(bad)?;
        let offset = match prefix {
            "B" => 0,
            "I" => 1,
            "E" => 2,
            "S" => 3,
            _ => return Err(bad()),
        };
        let l = self.labels.iter().position(|x| x == label).ok_or_else(bad)?;
        Ok(1 + 4 * l + offset)
    }
}
