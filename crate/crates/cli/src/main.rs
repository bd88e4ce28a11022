//! `scratch-tagger`: build dictionaries, train and run taggers, evaluate
//! tag files and inspect embeddings.

mod data;
mod error;
mod tag;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scratch_tagger::corpus::{read_text_corpus, ColumnSpec, ConllReader, Dictionary, PADDING, RARE};
use scratch_tagger::features::FeatureSpec;
use scratch_tagger::model::{read_embeddings, Loss, Model, Shape};
use scratch_tagger::net::Architecture;
use scratch_tagger::tagscheme::evaluate;
use scratch_tagger::train::{embed_neighbors, pretrain_init};

use crate::data::{create, load_model, open, TagScheme};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "scratch-tagger", version, about = "Neural sequence tagger trained from scratch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a word dictionary from a corpus.
    BuildDict(BuildDictArgs),
    /// Train a tagger on a column file.
    Train(train::TrainArgs),
    /// Train word embeddings with the ranking language model.
    LmTrain(train::LmTrainArgs),
    /// Tag a plain-text or column file with a trained model.
    Tag(tag::TagArgs),
    /// Score gold and predicted tag columns.
    Eval(EvalArgs),
    /// Print the nearest neighbors of a word in embedding space.
    Nn(NnArgs),
    /// Merge several tagged files by majority vote on their last column.
    EnsembleVote(tag::EnsembleArgs),
}

#[derive(Args)]
struct BuildDictArgs {
    /// Plain-text corpus, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Number of entries, PADDING and RARE included.
    #[arg(long, default_value_t = 100_000)]
    size: usize,
    /// Read words from this column of a column file instead.
    #[arg(long)]
    column: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Column file holding gold and predicted tags.
    #[arg(long)]
    input: PathBuf,
    /// Gold column; second to last by default.
    #[arg(long)]
    gold_column: Option<usize>,
    /// Predicted column; last by default.
    #[arg(long)]
    pred_column: Option<usize>,
    /// Chunk scheme of both columns, or `none` for accuracy only.
    #[arg(long, default_value = "iobes")]
    scheme: TagScheme,
}

#[derive(Args)]
struct NnArgs {
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    model: Option<PathBuf>,
    /// Text embeddings, one `word v1 .. vd` line per word.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

fn build_dict(args: &BuildDictArgs) -> CliResult<()> {
    let reader = open(&args.input)?;
    let tokens: Vec<String> = match args.column {
        None => read_text_corpus(reader)
            .map_err(|e| CliError::at(&args.input, e))?
            .into_iter()
            .flatten()
            .collect(),
        Some(c) => {
            let mut words = Vec::new();
            for s in ConllReader::new(reader, &ColumnSpec::words_only(c)) {
                words.extend(s.map_err(|e| CliError::at(&args.input, e))?.column(c));
            }
            words
        }
    };
    let dict = Dictionary::build(&tokens, args.size)?;
    if dict.len() < args.size {
        log::warn!("corpus has only {} distinct words; dictionary holds {} entries", dict.len() - 2, dict.len());
    }
    let mut out = create(args.out.as_deref())?;
    dict.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let reader = open(&args.input)?;
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for s in ConllReader::new(reader, &ColumnSpec::words_only(0)) {
        let s = s.map_err(|e| CliError::at(&args.input, e))?;
        let n = s.num_columns();
        let g = args.gold_column.unwrap_or(n.saturating_sub(2));
        let p = args.pred_column.unwrap_or(n - 1);
        if g >= n || p >= n || g == p {
            return Err(CliError::data(format!(
                "{}: line {}: cannot take gold column {g} and predicted column {p} from {n} columns",
                args.input.display(),
                s.first_line
            )));
        }
        gold.push(s.column(g));
        pred.push(s.column(p));
    }
    match args.scheme.0 {
        Some(scheme) => {
            let report = evaluate(&gold, &pred, scheme).map_err(|e| CliError::at(&args.input, e))?;
            println!(
                "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
                report.tokens, report.gold_chunks, report.predicted_chunks, report.correct_chunks
            );
            println!("{}", report.accuracy_line());
            println!("{}", report.summary());
        }
        None => {
            let tokens: usize = gold.iter().map(Vec::len).sum();
            let right = gold
                .iter()
                .flatten()
                .zip(pred.iter().flatten())
                .filter(|(a, b)| a == b)
                .count();
            let acc = if tokens == 0 { 0.0 } else { right as f64 / tokens as f64 };
            println!("processed {tokens} tokens.");
            println!("accuracy: {:.2}%", 100.0 * acc);
        }
    }
    Ok(())
}

/// Wraps a bare embedding file in a one-table model so the library's
/// neighbor search can run on it.
fn model_from_embeddings(path: &std::path::Path) -> CliResult<Model> {
    let vectors = read_embeddings(open(path)?).map_err(|e| CliError::at(path, e))?;
    let dim = vectors
        .first()
        .map(|(_, v)| v.len())
        .ok_or_else(|| CliError::data(format!("{}: no embeddings", path.display())))?;
    let mut entries = vec![PADDING.to_string(), RARE.to_string()];
    entries.extend(vectors.iter().map(|(w, _)| w.clone()).filter(|w| w != PADDING && w != RARE));
    let dict = Dictionary::from_entries(entries).map_err(|e| CliError::at(path, e))?;
    let shape = Shape {
        architecture: Architecture::Window,
        window: 1,
        hidden: Vec::new(),
        position: None,
    };
    let mut model = Model::new(vec![FeatureSpec::word(dict, dim)], vec!["score".into()], &shape, Loss::Wll, 0)?;
    pretrain_init(&mut model, &vectors).map_err(|e| CliError::at(path, e))?;
    Ok(model)
}

fn nn(args: &NnArgs) -> CliResult<()> {
    let model = match (&args.model, &args.embeddings) {
        (Some(m), _) => load_model(m)?,
        (None, Some(e)) => model_from_embeddings(e)?,
        (None, None) => return Err(CliError::usage("give --model or --embeddings")),
    };
    let neighbors = embed_neighbors(&model, &args.word, args.k).map_err(|e| match e {
        scratch_tagger::Error::UnknownWord(w) => CliError::usage(format!("word {w:?} is not in the dictionary")),
        other => other.into(),
    })?;
    let mut out = create(None)?;
    for (word, dist) in neighbors {
        writeln!(out, "{word} {dist:.6}")?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildDict(a) => build_dict(&a),
        Command::Train(a) => train::train(&a),
        Command::LmTrain(a) => train::lm_train(&a),
        Command::Tag(a) => tag::tag(&a),
        Command::Eval(a) => eval(&a),
        Command::Nn(a) => nn(&a),
        Command::EnsembleVote(a) => tag::ensemble(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
