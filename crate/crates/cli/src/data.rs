//! File helpers shared by the subcommands.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use scratch_tagger::corpus::{read_conll, ColumnSpec, ConllSentence, Dictionary};
use scratch_tagger::model::Model;
use scratch_tagger::net::Architecture;
use scratch_tagger::tagscheme::{convert, Scheme};

use crate::error::{CliError, CliResult};

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    if !path.exists() {
        return Err(CliError::usage(format!("{}: no such file", path.display())));
    }
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// `path`, or stdout when absent.
pub fn create(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    if !path.exists() {
        return Err(CliError::usage(format!("{}: no such file", path.display())));
    }
    Model::load_file(path).map_err(|e| CliError::at(path, e))
}

pub fn save_model(model: &Model, path: &Path) -> CliResult<()> {
    model.save_file(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_dictionary(path: &Path) -> CliResult<Dictionary> {
    Dictionary::read_from(open(path)?).map_err(|e| CliError::at(path, e))
}

pub fn read_columns(path: &Path, spec: &ColumnSpec) -> CliResult<Vec<ConllSentence>> {
    read_conll(open(path)?, spec).map_err(|e| CliError::at(path, e))
}

/// Same path with `.suffix` appended to the file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

/// Chunk scheme flag; `none` means tags are plain labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagScheme(pub Option<Scheme>);

impl std::str::FromStr for TagScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            Ok(TagScheme(None))
        } else {
            s.parse().map(|x| TagScheme(Some(x))).map_err(|e: scratch_tagger::Error| e.to_string())
        }
    }
}

pub fn parse_architecture(s: &str) -> Result<Architecture, String> {
    match s.to_ascii_lowercase().as_str() {
        "window" => Ok(Architecture::Window),
        "sentence" | "conv" => Ok(Architecture::Sentence),
        _ => Err(format!("unknown architecture {s:?} (expected window or sentence)")),
    }
}

/// Converts one sentence's tags from `scheme` to IOBES.
pub fn to_iobes(tags: Vec<String>, scheme: Option<Scheme>) -> scratch_tagger::Result<Vec<String>> {
    match scheme {
        None | Some(Scheme::Iobes) => Ok(tags),
        Some(s) => convert(&tags, s, Scheme::Iobes),
    }
}

/// Row of the predicate: the only row whose `column` is not `-`.
pub fn predicate_row(sentence: &ConllSentence, column: usize) -> Result<usize, String> {
    let marked: Vec<usize> = (0..sentence.len()).filter(|&i| sentence.rows[i][column] != "-").collect();
    match marked.as_slice() {
        [v] => Ok(*v),
        [] => Err(format!("sentence at line {} has no predicate", sentence.first_line)),
        _ => Err(format!("sentence at line {} has {} predicates", sentence.first_line, marked.len())),
    }
}

/// Reads every line of a reader into sentences of whitespace tokens,
/// wrapped as single-column rows.
pub fn text_sentences<R: BufRead>(reader: R) -> io::Result<Vec<ConllSentence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let rows: Vec<Vec<String>> = line.split_whitespace().map(|w| vec![w.to_string()]).collect();
        if !rows.is_empty() {
            out.push(ConllSentence { rows, first_line: i + 1 });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_is_appended() {
        assert_eq!(with_suffix(Path::new("out/m.bin"), "epoch3"), PathBuf::from("out/m.bin.epoch3"));
    }

    #[test]
    fn predicate_must_be_unique() {
        let s = ConllSentence {
            rows: vec![vec!["a".into(), "-".into()], vec!["b".into(), "eat".into()]],
            first_line: 1,
        };
        assert_eq!(predicate_row(&s, 1), Ok(1));
        assert!(predicate_row(&s, 0).is_err());
    }

    #[test]
    fn iob_becomes_iobes() {
        let tags = vec!["B-NP".to_string(), "I-NP".into(), "O".into(), "B-VP".into()];
        assert_eq!(to_iobes(tags.clone(), None).unwrap(), tags);
        assert_eq!(to_iobes(tags, Some(Scheme::Iob)).unwrap(), ["B-NP", "E-NP", "O", "S-VP"]);
    }

    #[test]
    fn text_lines_become_sentences() {
        let s = text_sentences("a b\n\nc\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].rows, vec![vec!["c".to_string()]]);
        assert_eq!(s[1].first_line, 3);
    }
}
