//! A trained tagger: network, transition scores, feature extractors and tag
//! names, with a versioned binary file format.

use std::io::{self, BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::corpus::{Dictionary, Sentence};
use crate::crf::{greedy_decode, viterbi, Transitions};
use crate::error::{Error, Result};
use crate::features::{encode_sentence, FeatureKind, FeatureSpec};
use crate::net::{Architecture, LookupSpec, Network, NetworkSpec, PositionSpec};

pub const MAGIC: &[u8; 4] = b"SCRT";
pub const FORMAT_VERSION: u32 = 1;

// Guards against absurd allocations when reading corrupt files.
const MAX_STRING: u32 = 1 << 20;
const MAX_PARAMETERS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Per-word softmax; decoded greedily.
    Wll,
    /// Whole-path likelihood with transitions; decoded with Viterbi.
    Sll,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wll" => Ok(Loss::Wll),
            "sll" => Ok(Loss::Sll),
            other => Err(Error::InvalidConfig(format!("unknown loss {other:?}"))),
        }
    }
}

/// Layer sizes of a network, everything the features do not determine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub architecture: Architecture,
    pub window: usize,
    pub hidden: Vec<usize>,
    pub position: Option<PositionSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub transitions: Transitions,
    pub features: Vec<FeatureSpec>,
    pub tags: Vec<String>,
    pub loss: Loss,
}

impl Model {
    pub fn new(features: Vec<FeatureSpec>, tags: Vec<String>, shape: &Shape, loss: Loss, seed: u64) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Empty("tag set"));
        }
        for f in &features {
            f.validate()?;
        }
        let spec = NetworkSpec {
            architecture: shape.architecture,
            lookups: features
                .iter()
                .map(|f| LookupSpec {
                    size: f.size(),
                    dim: f.dim,
                    padding: f.padding_index(),
                })
                .collect(),
            position: shape.position,
            window: shape.window,
            hidden: shape.hidden.clone(),
            outputs: tags.len(),
        };
        let network = Network::new(spec, seed)?;
        Ok(Self {
            transitions: Transitions::zeros(tags.len()),
            network,
            features,
            tags,
            loss,
        })
    }

    pub fn tag_index(&self, tag: &str) -> Result<usize> {
        self.tags.iter().position(|t| t == tag).ok_or_else(|| Error::InvalidTag {
            tag: tag.to_string(),
            reason: "not in the model's tag set".into(),
        })
    }

    /// Index of the word feature, if any.
    pub fn word_feature(&self) -> Option<usize> {
        self.features.iter().position(|f| f.kind == FeatureKind::Word)
    }

    /// Builds a network input from raw words, optional CoNLL columns and
    /// optional gold tag names.
    pub fn encode<S: AsRef<str>>(
        &self,
        words: Vec<String>,
        rows: Option<&[Vec<String>]>,
        gold: Option<&[S]>,
        verb_position: Option<usize>,
    ) -> Result<Sentence> {
        let gold = gold
            .map(|g| g.iter().map(|t| self.tag_index(t.as_ref())).collect::<Result<Vec<_>>>())
            .transpose()?;
        encode_sentence(&self.features, words, rows, gold, verb_position)
    }

    /// Network scores `(T, tags)`.
    pub fn scores(&self, sentence: &Sentence) -> Result<Array2<f64>> {
        self.network.scores(sentence)
    }

    /// Tag indices for each word.
    pub fn predict(&self, sentence: &Sentence) -> Result<Vec<usize>> {
        let scores = self.scores(sentence)?;
        Ok(match self.loss {
            Loss::Wll => greedy_decode(scores.view()),
            Loss::Sll => viterbi(scores.view(), &self.transitions)?.0,
        })
    }

    pub fn predict_names(&self, sentence: &Sentence) -> Result<Vec<String>> {
        Ok(self
            .predict(sentence)?
            .into_iter()
            .map(|i| self.tags[i].clone())
            .collect())
    }

    /// Bytes held by parameters and dictionaries.
    pub fn memory_bytes(&self) -> usize {
        let params = self.network.parameter_count() + self.transitions.matrix.len() + self.transitions.initial.len();
        let dicts: usize = self
            .features
            .iter()
            .filter_map(|f| f.dictionary.as_ref())
            .map(|d| d.entries().iter().map(|w| 2 * w.len() + 64).sum::<usize>())
            .sum();
        params * std::mem::size_of::<f64>() + dicts
    }

    /// Writes one line per dictionary entry: the word then its vector.
    pub fn export_embeddings<W: Write>(&self, feature: usize, mut writer: W) -> Result<()> {
        let spec = self.features.get(feature).ok_or_else(|| Error::IndexOutOfRange {
            what: "feature".into(),
            index: feature,
            size: self.features.len(),
        })?;
        let dict = spec
            .dictionary
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("feature {} has no dictionary", spec.name)))?;
        let table = &self.network.tables[feature].weight;
        for (word, row) in dict.entries().iter().zip(table.rows()) {
            write!(writer, "{word}")?;
            for v in row {
                write!(writer, " {v:?}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = io::BufWriter::new(writer);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u8(match self.loss {
            Loss::Wll => 0,
            Loss::Sll => 1,
        })?;
        write_strings(&mut w, &self.tags)?;

        w.write_u32::<LittleEndian>(self.features.len() as u32)?;
        for f in &self.features {
            write_string(&mut w, &f.name)?;
            let (kind, arg) = match f.kind {
                FeatureKind::Word => (0, 0),
                FeatureKind::Caps => (1, 0),
                FeatureKind::Suffix { len } => (2, len),
                FeatureKind::Column { column } => (3, column),
            };
            w.write_u8(kind)?;
            w.write_u32::<LittleEndian>(arg as u32)?;
            w.write_u32::<LittleEndian>(f.dim as u32)?;
            match &f.dictionary {
                Some(d) => {
                    w.write_u8(1)?;
                    write_strings(&mut w, d.entries())?;
                }
                None => w.write_u8(0)?,
            }
        }

        let spec = &self.network.spec;
        w.write_u8(match spec.architecture {
            Architecture::Window => 0,
            Architecture::Sentence => 1,
        })?;
        w.write_u32::<LittleEndian>(spec.window as u32)?;
        w.write_u32::<LittleEndian>(spec.hidden.len() as u32)?;
        for &h in &spec.hidden {
            w.write_u32::<LittleEndian>(h as u32)?;
        }
        match spec.position {
            Some(p) => {
                w.write_u8(1)?;
                w.write_u32::<LittleEndian>(p.clip as u32)?;
                w.write_u32::<LittleEndian>(p.dim as u32)?;
                w.write_u8(u8::from(p.verb))?;
            }
            None => w.write_u8(0)?,
        }

        let mut net = self.network.clone();
        for (_, tensor) in net.parameters_mut() {
            write_f64s(&mut w, tensor.iter())?;
        }
        write_f64s(&mut w, self.transitions.initial.iter())?;
        write_f64s(&mut w, self.transitions.matrix.iter())?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let mut r = io::BufReader::new(reader);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let loss = match r.read_u8().map_err(eof)? {
            0 => Loss::Wll,
            1 => Loss::Sll,
            x => return Err(Error::Malformed(format!("unknown loss code {x}"))),
        };
        let tags = read_strings(&mut r)?;

        let n_features = read_len(&mut r)?;
        let mut features = Vec::with_capacity(n_features.min(64));
        for _ in 0..n_features {
            let name = read_string(&mut r)?;
            let kind = r.read_u8().map_err(eof)?;
            let arg = read_len(&mut r)?;
            let dim = read_len(&mut r)?;
            let kind = match kind {
                0 => FeatureKind::Word,
                1 => FeatureKind::Caps,
                2 => FeatureKind::Suffix { len: arg },
                3 => FeatureKind::Column { column: arg },
                x => return Err(Error::Malformed(format!("unknown feature kind {x}"))),
            };
            let dictionary = match r.read_u8().map_err(eof)? {
                0 => None,
                1 => Some(Dictionary::from_entries(read_strings(&mut r)?).map_err(|e| Error::Malformed(e.to_string()))?),
                x => return Err(Error::Malformed(format!("bad dictionary flag {x}"))),
            };
            features.push(FeatureSpec {
                name,
                kind,
                dictionary,
                dim,
            });
        }

        let architecture = match r.read_u8().map_err(eof)? {
            0 => Architecture::Window,
            1 => Architecture::Sentence,
            x => return Err(Error::Malformed(format!("unknown architecture {x}"))),
        };
        let window = read_len(&mut r)?;
        let n_hidden = read_len(&mut r)?;
        if n_hidden > 64 {
            return Err(Error::Malformed(format!("{n_hidden} hidden layers")));
        }
        let hidden = (0..n_hidden).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
        let position = match r.read_u8().map_err(eof)? {
            0 => None,
            1 => Some(PositionSpec {
                clip: read_len(&mut r)?,
                dim: read_len(&mut r)?,
                verb: r.read_u8().map_err(eof)? != 0,
            }),
            x => return Err(Error::Malformed(format!("bad position flag {x}"))),
        };

        let shape = Shape {
            architecture,
            window,
            hidden,
            position,
        };
        let mut model = Self::skeleton(features, tags, &shape, loss).map_err(|e| Error::Malformed(e.to_string()))?;
        if model.network.parameter_count() > MAX_PARAMETERS {
            return Err(Error::Malformed("parameter count too large".into()));
        }
        for (_, tensor) in model.network.parameters_mut() {
            read_f64s(&mut r, tensor)?;
        }
        read_f64s(&mut r, model.transitions.initial.as_slice_mut().expect("contiguous"))?;
        read_f64s(&mut r, model.transitions.matrix.as_slice_mut().expect("contiguous"))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Malformed("trailing bytes after model".into()));
        }
        Ok(model)
    }

    /// Model with the right shapes; parameters are overwritten on load.
    fn skeleton(features: Vec<FeatureSpec>, tags: Vec<String>, shape: &Shape, loss: Loss) -> Result<Self> {
        let sizes: usize = features.iter().map(|f| f.size().saturating_mul(f.dim)).sum();
        if sizes > MAX_PARAMETERS {
            return Err(Error::Malformed("lookup tables too large".into()));
        }
        Self::new(features, tags, shape, loss, 0)
    }

    pub fn shape(&self) -> Shape {
        let s = &self.network.spec;
        Shape {
            architecture: s.architecture,
            window: s.window,
            hidden: s.hidden.clone(),
            position: s.position,
        }
    }

    pub fn save_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.save(std::fs::File::create(path)?)
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::load(std::fs::File::open(path)?)
    }
}

/// Parses an embedding file of `word v1 ... vd` lines. Blank lines are
/// skipped; every vector must have the same length.
pub fn read_embeddings<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 1,
                    message: format!("{p:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((_, first)) = out.first() {
            if first.len() != values.len() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {} values, found {}", first.len(), values.len()),
                });
            }
        }
        out.push((word.to_string(), values));
    }
    Ok(out)
}

fn eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Truncated
    } else {
        Error::Io(e)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(eof)
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>().map_err(eof)? as usize)
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(eof)?;
    if len > MAX_STRING {
        return Err(Error::Malformed(format!("string of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Malformed(e.to_string()))
}

fn write_strings<W: Write>(w: &mut W, items: &[String]) -> Result<()> {
    w.write_u32::<LittleEndian>(items.len() as u32)?;
    items.iter().try_for_each(|s| write_string(w, s))
}

fn read_strings<R: Read>(r: &mut R) -> Result<Vec<String>> {
    let n = read_len(r)?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        out.push(read_string(r)?);
    }
    Ok(out)
}

fn write_f64s<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    r.read_f64_into::<LittleEndian>(out).map_err(eof)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(loss: Loss, architecture: Architecture) -> Model {
        let dict = Dictionary::build("the cat sat on the mat".split(' '), 10).unwrap();
        let features = vec![FeatureSpec::word(dict, 4), FeatureSpec::caps(2)];
        let shape = Shape {
            architecture,
            window: 3,
            hidden: vec![5],
            position: (architecture == Architecture::Sentence).then_some(PositionSpec {
                clip: 4,
                dim: 2,
                verb: false,
            }),
        };
        let mut m = Model::new(features, vec!["B-NP".into(), "E-NP".into(), "O".into()], &shape, loss, 7).unwrap();
        m.transitions.matrix[[0, 1]] = 0.25;
        m.transitions.initial[2] = -0.5;
        m
    }

    fn bytes(m: &Model) -> Vec<u8> {
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        for (loss, arch) in [(Loss::Wll, Architecture::Window), (Loss::Sll, Architecture::Sentence)] {
            let m = tiny(loss, arch);
            let buf = bytes(&m);
            assert_eq!(&buf[..4], b"SCRT");
            let back = Model::load(&buf[..]).unwrap();
            assert_eq!(back, m);
            assert_eq!(bytes(&back), buf);
            let s = m.encode(vec!["The".into(), "cat".into(), "Sat".into()], None, None::<&[&str]>, None).unwrap();
            assert_eq!(back.predict(&s).unwrap(), m.predict(&s).unwrap());
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        let buf = bytes(&tiny(Loss::Sll, Architecture::Window));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Model::load(&bad[..]), Err(Error::BadMagic)));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(Model::load(&bad[..]), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(Model::load(&buf[..buf.len() - 3]), Err(Error::Truncated)));
        assert!(matches!(Model::load(&buf[..2]), Err(Error::Truncated)));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Model::load(&long[..]), Err(Error::Malformed(_))));
    }

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(bytes(&tiny(Loss::Wll, Architecture::Window)), bytes(&tiny(Loss::Wll, Architecture::Window)));
    }

    #[test]
    fn embeddings_round_trip_through_text() {
        let m = tiny(Loss::Wll, Architecture::Window);
        let mut buf = Vec::new();
        m.export_embeddings(0, &mut buf).unwrap();
        let rows = read_embeddings(&buf[..]).unwrap();
        assert_eq!(rows.len(), m.network.tables[0].size());
        assert_eq!(rows[0].0, "PADDING");
        for (i, (_, v)) in rows.iter().enumerate() {
            assert_eq!(v.as_slice(), m.network.tables[0].weight.row(i).to_vec().as_slice());
        }
        assert!(m.export_embeddings(1, Vec::new()).is_err());
    }

    #[test]
    fn ragged_embedding_file_is_rejected() {
        assert!(read_embeddings("a 1 2\nb 3\n".as_bytes()).is_err());
        assert!(read_embeddings("a 1 x\n".as_bytes()).is_err());
        assert_eq!(read_embeddings("\n".as_bytes()).unwrap().len(), 0);
    }

    #[test]
    fn unknown_gold_tag_is_an_error() {
        let m = tiny(Loss::Wll, Architecture::Window);
        assert!(m.encode(vec!["a".into()], None, Some(&["X"]), None).is_err());
    }
}
