use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{normalize_word, Dictionary, PADDING_INDEX, RARE_INDEX};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::net::layers::uniform_matrix;

fn word_table(model: &Model) -> Result<usize> {
    model
        .word_feature()
        .ok_or_else(|| Error::InvalidConfig("model has no word feature".into()))
}

/// Overwrites word-table rows with vectors from an embedding file. Words
/// are matched verbatim, then after normalization; unmatched words are
/// ignored. Returns how many rows were written.
pub fn pretrain_init(model: &mut Model, embeddings: &[(String, Vec<f64>)]) -> Result<usize> {
    let k = word_table(model)?;
    let dim = model.features[k].dim;
    let dict = model.features[k].dictionary.clone().expect("word feature has a dictionary");
    let mut written = 0;
    for (word, vector) in embeddings {
        if vector.len() != dim {
            return Err(Error::LengthMismatch {
                what: "embedding dimension",
                expected: dim,
                actual: vector.len(),
            });
        }
        let row = dict
            .get(word)
            .or_else(|| normalize_word(word).ok().and_then(|w| dict.get(&w)));
        if let Some(r) = row {
            model.network.tables[k]
                .weight
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(vector.as_slice()));
            written += 1;
        }
    }
    Ok(written)
}

/// Swaps in a larger word dictionary whose leading entries are the old
/// dictionary. Old rows are copied; new rows are drawn like a fresh lookup
/// table.
pub fn grow_dictionary(model: &Model, larger: Dictionary, seed: u64) -> Result<Model> {
    let k = word_table(model)?;
    let old = model.features[k].dictionary.as_ref().expect("word feature has a dictionary");
    if larger.len() < old.len() || larger.entries()[..old.len()] != *old.entries() {
        return Err(Error::InvalidConfig(
            "new dictionary must start with the old dictionary's entries".into(),
        ));
    }
    let mut out = model.clone();
    let table = &model.network.tables[k].weight;
    let dim = table.ncols();
    let mut weight = Array2::zeros((larger.len(), dim));
    weight.slice_mut(s![..old.len(), ..]).assign(table);
    let extra = larger.len() - old.len();
    if extra > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        weight
            .slice_mut(s![old.len().., ..])
            .assign(&uniform_matrix(extra, dim, 1, &mut rng));
    }
    out.network.tables[k].weight = weight;
    out.network.spec.lookups[k].size = larger.len();
    out.features[k].dictionary = Some(larger);
    Ok(out)
}

/// Per-position majority vote. Ties go to the tag of the earliest model
/// among the tied ones.
pub fn ensemble_vote<T: Clone + PartialEq>(rows: &[Vec<T>]) -> Result<Vec<T>> {
    let first = rows.first().ok_or(Error::Empty("ensemble"))?;
    for r in rows {
        if r.len() != first.len() {
            return Err(Error::LengthMismatch {
                what: "ensemble tag row",
                expected: first.len(),
                actual: r.len(),
            });
        }
    }
    Ok((0..first.len())
        .map(|t| {
            let mut best: Option<(&T, usize)> = None;
            for r in rows {
                let count = rows.iter().filter(|o| o[t] == r[t]).count();
                if best.is_none_or(|(_, c)| count > c) {
                    best = Some((&r[t], count));
                }
            }
            best.expect("at least one row").0.clone()
        })
        .collect())
}

/// The `k` dictionary words closest to `word` in Euclidean distance,
/// excluding the word itself and the PADDING and RARE entries. Ties keep
/// dictionary order.
pub fn embed_neighbors(model: &Model, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let f = word_table(model)?;
    let dict = model.features[f].dictionary.as_ref().expect("word feature has a dictionary");
    let query = dict
        .get(word)
        .or_else(|| normalize_word(word).ok().and_then(|w| dict.get(&w)))
        .filter(|&i| i != RARE_INDEX && i != PADDING_INDEX)
        .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    let table = &model.network.tables[f].weight;
    let q = table.row(query);
    let mut dists: Vec<(usize, f64)> = (0..table.nrows())
        .filter(|&i| i != query && i != PADDING_INDEX && i != RARE_INDEX)
        .map(|i| {
            let d = table.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (i, d)
        })
        .collect();
    dists.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(dists
        .into_iter()
        .take(k)
        .map(|(i, d)| (dict.word(i).expect("row in dictionary").to_string(), d))
        .collect())
}
