use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use scratch_tagger::corpus::{read_text_corpus, ColumnSpec, ConllSentence, Dictionary, Sentence};
use scratch_tagger::features::{build_suffix_dictionary, FeatureSpec, DEFAULT_POSITION_CLIP};
use scratch_tagger::model::{read_embeddings, Loss, Model, Shape};
use scratch_tagger::net::{Architecture, PositionSpec};
use scratch_tagger::train::{pretrain_init, train_lm, train_supervised, LmConfig, Metric, Task, TrainConfig};

use crate::data::{
    create, load_dictionary, open, parse_architecture, predicate_row, read_columns, save_model, to_iobes,
    with_suffix, TagScheme,
};
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct TrainArgs {
    /// Training column file: one word per line, blank line between sentences.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation column file; otherwise the tail of the training set is
    /// held out when --validation-fraction is positive.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub word_column: usize,
    /// Gold tag column; last by default.
    #[arg(long)]
    pub tag_column: Option<usize>,
    /// Scheme of the gold tags; chunk tags are converted to IOBES.
    #[arg(long, default_value = "iob")]
    pub scheme: TagScheme,
    /// Word dictionary file; otherwise built from the training words.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub dict_size: usize,
    #[arg(long, default_value = "window", value_parser = parse_architecture)]
    pub arch: Architecture,
    #[arg(long, default_value = "sll")]
    pub loss: Loss,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub word_dim: usize,
    /// Capitalization feature dimension; 0 drops the feature.
    #[arg(long, default_value_t = 5)]
    pub caps_dim: usize,
    /// Add a suffix feature of this many characters.
    #[arg(long)]
    pub suffix_len: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub suffix_dim: usize,
    /// Cascaded tag column as `name:column:dim`; repeatable.
    #[arg(long = "feature-column", value_name = "NAME:COL:DIM")]
    pub feature_columns: Vec<String>,
    /// Column marking the predicate; every other row holds `-`.
    #[arg(long)]
    pub verb_column: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub position_dim: usize,
    #[arg(long, default_value_t = DEFAULT_POSITION_CLIP)]
    pub position_clip: usize,
    #[arg(long, default_value_t = 300)]
    pub hidden: usize,
    /// Second hidden layer (500 for semantic role labeling).
    #[arg(long)]
    pub hidden2: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Use the learning rate as is instead of dividing it by each layer's fan-in.
    #[arg(long)]
    pub no_fan_in: bool,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pretrained word vectors, one `word v1 .. vd` line per word.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Keep the word lookup table fixed.
    #[arg(long)]
    pub freeze_words: bool,
    /// Do not write `<out>.epochN` after every epoch.
    #[arg(long)]
    pub no_checkpoints: bool,
}

struct CascadeColumn {
    name: String,
    column: usize,
    dim: usize,
}

fn parse_cascade(s: &str) -> CliResult<CascadeColumn> {
    let bad = || CliError::usage(format!("--feature-column {s:?}: expected NAME:COLUMN:DIM"));
    let mut parts = s.split(':');
    let (Some(name), Some(col), Some(dim), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if name.is_empty() {
        return Err(bad());
    }
    Ok(CascadeColumn {
        name: name.to_string(),
        column: col.parse().map_err(|_| bad())?,
        dim: dim.parse().map_err(|_| bad())?,
    })
}

fn gold_tags(s: &ConllSentence, column: usize, scheme: TagScheme, file: &std::path::Path) -> CliResult<Vec<String>> {
    to_iobes(s.column(column), scheme.0)
        .map_err(|e| CliError::data(format!("{}: line {}: {e}", file.display(), s.first_line)))
}

fn encode_all(
    model: &Model,
    raw: &[ConllSentence],
    tags: &[Vec<String>],
    args: &TrainArgs,
    file: &std::path::Path,
) -> CliResult<Vec<Sentence>> {
    raw.iter()
        .zip(tags)
        .map(|(s, g)| {
            let verb = args
                .verb_column
                .map(|c| predicate_row(s, c))
                .transpose()
                .map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
            model
                .encode(s.column(args.word_column), Some(&s.rows), Some(g), verb)
                .map_err(|e| CliError::data(format!("{}: line {}: {e}", file.display(), s.first_line)))
        })
        .collect()
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let cascades = args
        .feature_columns
        .iter()
        .map(|s| parse_cascade(s))
        .collect::<CliResult<Vec<_>>>()?;
    if args.arch == Architecture::Window && args.verb_column.is_some() {
        return Err(CliError::usage("--verb-column needs --arch sentence"));
    }
    let mut spec = ColumnSpec {
        word: args.word_column,
        tag: args.tag_column,
        features: cascades.iter().map(|c| c.column).chain(args.verb_column).collect(),
    };
    let train_raw = read_columns(&args.train, &spec)?;
    if train_raw.is_empty() {
        return Err(CliError::data(format!("{}: no sentences", args.train.display())));
    }
    let tag_column = args.tag_column.unwrap_or(train_raw[0].num_columns() - 1);
    if tag_column == args.word_column {
        return Err(CliError::usage("tag column and word column coincide"));
    }
    spec.tag = Some(tag_column);
    let valid_raw = match &args.valid {
        Some(p) => read_columns(p, &spec)?,
        None => Vec::new(),
    };

    let train_tags = train_raw
        .iter()
        .map(|s| gold_tags(s, tag_column, args.scheme, &args.train))
        .collect::<CliResult<Vec<_>>>()?;
    let valid_tags = match &args.valid {
        Some(p) => valid_raw
            .iter()
            .map(|s| gold_tags(s, tag_column, args.scheme, p))
            .collect::<CliResult<Vec<_>>>()?,
        None => Vec::new(),
    };
    let tag_set: BTreeSet<&String> = train_tags.iter().chain(&valid_tags).flatten().collect();

    let words = || train_raw.iter().flat_map(|s| s.rows.iter().map(|r| r[args.word_column].as_str()));
    let dict = match &args.dict {
        Some(p) => load_dictionary(p)?,
        None => Dictionary::build(words(), args.dict_size)?,
    };
    let mut features = vec![FeatureSpec::word(dict, args.word_dim)];
    if args.caps_dim > 0 {
        features.push(FeatureSpec::caps(args.caps_dim));
    }
    if let Some(n) = args.suffix_len {
        features.push(FeatureSpec::suffix(build_suffix_dictionary(words(), n), n, args.suffix_dim));
    }
    for c in &cascades {
        let values = train_raw.iter().flat_map(|s| s.rows.iter().map(|r| r[c.column].as_str()));
        let dict = Dictionary::build_exact(values, usize::MAX)?;
        features.push(FeatureSpec::column(c.name.clone(), c.column, dict, c.dim));
    }
    let shape = Shape {
        architecture: args.arch,
        window: args.window,
        hidden: std::iter::once(args.hidden).chain(args.hidden2).collect(),
        position: (args.arch == Architecture::Sentence).then_some(PositionSpec {
            clip: args.position_clip,
            dim: args.position_dim,
            verb: args.verb_column.is_some(),
        }),
    };
    let mut model = Model::new(features, tag_set.into_iter().cloned().collect(), &shape, args.loss, args.seed)?;
    if let Some(p) = &args.embeddings {
        let vectors = read_embeddings(open(p)?).map_err(|e| CliError::at(p, e))?;
        let n = pretrain_init(&mut model, &vectors).map_err(|e| CliError::at(p, e))?;
        log::info!("initialized {n} of {} word vectors from {}", model.features[0].size(), p.display());
    }

    let train_set = encode_all(&model, &train_raw, &train_tags, args, &args.train)?;
    let valid_set = match &args.valid {
        Some(p) => encode_all(&model, &valid_raw, &valid_tags, args, p)?,
        None => Vec::new(),
    };
    let task = Task {
        name: "train".into(),
        model,
        train: train_set,
        valid: valid_set,
        metric: if args.scheme.0.is_some() { Metric::ChunkF1 } else { Metric::Accuracy },
    };
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        fan_in_scaling: !args.no_fan_in,
        patience: args.patience,
        frozen_tables: if args.freeze_words { vec![0] } else { Vec::new() },
        validation_fraction: args.validation_fraction,
    };

    let mut checkpoint_error = None;
    let outcome = train_supervised(task, &config, &mut |report, models| {
        println!("{}", report.line());
        if !args.no_checkpoints && checkpoint_error.is_none() {
            let path = with_suffix(&args.out, &format!("epoch{}", report.epoch));
            checkpoint_error = save_model(&models[0], &path).err();
        }
    })?;
    if let Some(e) = checkpoint_error {
        return Err(e);
    }
    save_model(&outcome.models[0], &args.out)?;
    println!("best epoch {}", outcome.best_epoch);
    Ok(())
}

#[derive(Args)]
pub struct LmTrainArgs {
    /// Plain-text corpus, one tokenized sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Model file holding the trained scorer.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the word vectors as text.
    #[arg(long)]
    pub embeddings_out: Option<PathBuf>,
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub dict_size: usize,
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long)]
    pub no_fan_in: bool,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1000)]
    pub validation_windows: usize,
    #[arg(long, default_value_t = 0.05)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn lm_train(args: &LmTrainArgs) -> CliResult<()> {
    let corpus = read_text_corpus(open(&args.input)?).map_err(|e| CliError::at(&args.input, e))?;
    let dict = match &args.dict {
        Some(p) => load_dictionary(p)?,
        None => Dictionary::build(corpus.iter().flatten(), args.dict_size)?,
    };
    let config = LmConfig {
        window: args.window,
        word_dim: args.word_dim,
        hidden: args.hidden,
        learning_rate: args.lr,
        fan_in_scaling: !args.no_fan_in,
        iterations: args.iterations,
        eval_every: args.eval_every,
        validation_windows: args.validation_windows,
        validation_fraction: args.validation_fraction,
        seed: args.seed,
    };
    let result = train_lm(&corpus, dict, &config)?;
    for (it, loss) in &result.trace {
        println!("iteration {it} held-out loss {loss:.6}");
    }
    save_model(&result.model, &args.out)?;
    if let Some(p) = &args.embeddings_out {
        let mut out = create(Some(p))?;
        result.model.export_embeddings(0, &mut out)?;
        out.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_flag_parses() {
        let c = parse_cascade("pos:1:5").unwrap();
        assert_eq!((c.name.as_str(), c.column, c.dim), ("pos", 1, 5));
        for bad in ["pos:1", "pos:x:5", ":1:5", "a:1:2:3"] {
            assert!(matches!(parse_cascade(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
