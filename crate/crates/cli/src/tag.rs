use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use scratch_tagger::corpus::{write_conll, ColumnSpec, ConllReader, ConllSentence};
use scratch_tagger::features::FeatureKind;
use scratch_tagger::model::Model;
use scratch_tagger::tagscheme::{convert, Scheme};
use scratch_tagger::train::ensemble_vote;

use crate::data::{create, load_model, open, predicate_row, read_columns, text_sentences, TagScheme};
use crate::error::{CliError, CliResult};

/// Caps the number of tagging workers.
pub const THREADS_VAR: &str = "SCRATCH_TAGGER_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One tokenized sentence per line.
    Text,
    /// One word per line, columns separated by whitespace.
    Conll,
}

#[derive(Args)]
pub struct TagArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Conll)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub word_column: usize,
    #[arg(long)]
    pub verb_column: Option<usize>,
    /// Write chunk tags in this scheme; `none` keeps the model's tags.
    #[arg(long, default_value = "none")]
    pub scheme: TagScheme,
}

fn workers() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn tag_one(model: &Model, s: &ConllSentence, args: &TagArgs) -> Result<Vec<String>, String> {
    let verb = args.verb_column.map(|c| predicate_row(s, c)).transpose()?;
    let encoded = model
        .encode(s.column(args.word_column), Some(&s.rows), None::<&[&str]>, verb)
        .map_err(|e| format!("line {}: {e}", s.first_line))?;
    let tags = model.predict_names(&encoded).map_err(|e| format!("line {}: {e}", s.first_line))?;
    match args.scheme.0 {
        None | Some(Scheme::Iobes) => Ok(tags),
        Some(to) => convert(&tags, Scheme::Iobes, to).map_err(|e| format!("line {}: {e}", s.first_line)),
    }
}

pub fn tag(args: &TagArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let columns: Vec<usize> = model
        .features
        .iter()
        .filter_map(|f| match f.kind {
            FeatureKind::Column { column } => Some(column),
            _ => None,
        })
        .collect();
    let needs_verb = model.network.spec.position.is_some_and(|p| p.verb);
    if needs_verb && args.verb_column.is_none() {
        return Err(CliError::usage("this model needs --verb-column"));
    }
    if args.format == Format::Text && (!columns.is_empty() || needs_verb || args.word_column != 0) {
        return Err(CliError::usage("this model reads extra columns; use --format conll"));
    }
    let reader = open(&args.input)?;
    let input: Vec<scratch_tagger::Result<ConllSentence>> = match args.format {
        Format::Text => text_sentences(reader)?.into_iter().map(Ok).collect(),
        Format::Conll => {
            let spec = ColumnSpec {
                word: args.word_column,
                tag: None,
                features: columns.into_iter().chain(args.verb_column).collect(),
            };
            ConllReader::new(reader, &spec).collect()
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers()?)
        .build()
        .map_err(|e| CliError::data(e.to_string()))?;
    let tagged: Vec<Result<Vec<String>, String>> = pool.install(|| {
        input
            .par_iter()
            .map(|s| match s {
                Ok(s) => tag_one(&model, s, args),
                Err(e) => Err(e.to_string()),
            })
            .collect()
    });

    let mut out = create(args.output.as_deref())?;
    let mut skipped = 0;
    for (s, tags) in input.iter().zip(tagged) {
        match (s, tags) {
            (Ok(s), Ok(tags)) => write_conll(&mut out, std::slice::from_ref(s), &[tags])?,
            (Err(scratch_tagger::Error::Io(e)), _) => {
                return Err(CliError::data(format!("{}: {e}", args.input.display())))
            }
            (_, Err(msg)) => {
                log::warn!("{}: skipping sentence: {msg}", args.input.display());
                skipped += 1;
            }
            (Err(_), Ok(_)) => unreachable!("malformed sentences are never tagged"),
        }
    }
    out.flush()?;
    if skipped > 0 {
        log::warn!("skipped {skipped} of {} sentences", input.len());
    }
    Ok(())
}

#[derive(Args)]
pub struct EnsembleArgs {
    /// Tagged column files with identical sentences; the last column of
    /// each holds that model's tags.
    #[arg(required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn ensemble(args: &EnsembleArgs) -> CliResult<()> {
    let files = args
        .inputs
        .iter()
        .map(|p| read_columns(p, &ColumnSpec::words_only(0)))
        .collect::<CliResult<Vec<_>>>()?;
    let base = &files[0];
    for (p, f) in args.inputs.iter().zip(&files).skip(1) {
        let same_shape = f.len() == base.len() && f.iter().zip(base).all(|(a, b)| a.len() == b.len());
        if !same_shape {
            return Err(CliError::data(format!(
                "{} and {} do not hold the same sentences",
                args.inputs[0].display(),
                p.display()
            )));
        }
    }
    let mut stripped = Vec::with_capacity(base.len());
    let mut voted = Vec::with_capacity(base.len());
    for (i, s) in base.iter().enumerate() {
        let rows: Vec<Vec<String>> = files.iter().map(|f| f[i].column(f[i].num_columns() - 1)).collect();
        voted.push(ensemble_vote(&rows)?);
        let mut s = s.clone();
        for r in &mut s.rows {
            r.pop();
        }
        stripped.push(s);
    }
    let mut out = create(args.output.as_deref())?;
    write_conll(&mut out, &stripped, &voted)?;
    out.flush()?;
    Ok(())
}
