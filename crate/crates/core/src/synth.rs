//! Synthetic corpora with known structure, for tests and demos.
//!
//! Words fall into five classes (determiner, noun, verb, preposition,
//! other) of ten words each. Sentences are chains of noun, verb and
//! prepositional chunks plus single "other" words, drawn from a first-order
//! Markov process over chunk types. Every sentence carries IOBES chunk tags
//! and per-word class tags, so the generator doubles as the oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tagscheme::{tags_from_spans, ChunkSpan, Scheme};

pub const CLASS_NAMES: [&str; 5] = ["D", "N", "V", "P", "O"];
pub const CHUNK_LABELS: [&str; 3] = ["NP", "VP", "PP"];
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub words_per_class: usize,
    /// Probability that a word is replaced by a uniformly random word.
    pub noise: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            words_per_class: 10,
            noise: 0.02,
            min_len: 5,
            max_len: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSentence {
    pub words: Vec<String>,
    /// Class of the generating slot (noise does not change it).
    pub classes: Vec<usize>,
    pub chunks: Vec<String>,
}

impl SynthSentence {
    pub fn class_tags(&self) -> Vec<String> {
        self.classes.iter().map(|&c| CLASS_NAMES[c].to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chunk {
    Np,
    Vp,
    Pp,
    Other,
}

// Successor distributions over [Np, Vp, Pp, Other]; no chunk type follows
// itself, so adjacent chunks never share a label.
const START: [f64; 4] = [0.7, 0.0, 0.1, 0.2];

fn successors(c: Chunk) -> [f64; 4] {
    match c {
        Chunk::Np => [0.0, 0.5, 0.3, 0.2],
        Chunk::Vp => [0.6, 0.0, 0.3, 0.1],
        Chunk::Pp => [1.0, 0.0, 0.0, 0.0],
        Chunk::Other => [0.5, 0.3, 0.2, 0.0],
    }
}

fn pick<R: Rng>(rng: &mut R, probs: &[f64; 4]) -> Chunk {
    let mut u: f64 = rng.random();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return [Chunk::Np, Chunk::Vp, Chunk::Pp, Chunk::Other][i];
        }
        u -= p;
    }
    Chunk::Np
}

pub struct Generator {
    config: SynthConfig,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        assert!(config.words_per_class >= 1 && config.words_per_class <= LETTERS.len() * LETTERS.len());
        assert!(config.min_len >= 1 && config.min_len <= config.max_len);
        Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Word `i` of class `c`: the class letter then a two-letter code.
    pub fn word(&self, class: usize, i: usize) -> String {
        word_name(class, i)
    }

    pub fn vocabulary(&self) -> Vec<String> {
        (0..CLASS_NAMES.len())
            .flat_map(|c| (0..self.config.words_per_class).map(move |i| word_name(c, i)))
            .collect()
    }

    fn emit(&mut self, class: usize) -> String {
        let n = self.config.words_per_class;
        if self.rng.random::<f64>() < self.config.noise {
            let c = self.rng.random_range(0..CLASS_NAMES.len());
            word_name(c, self.rng.random_range(0..n))
        } else {
            word_name(class, self.rng.random_range(0..n))
        }
    }

    pub fn sentence(&mut self) -> SynthSentence {
        let target = self.rng.random_range(self.config.min_len..=self.config.max_len);
        let mut classes = Vec::new();
        let mut spans = Vec::new();
        let mut chunk = pick(&mut self.rng, &START);
        loop {
            let start = classes.len();
            match chunk {
                Chunk::Np => {
                    if self.rng.random::<f64>() < 0.5 {
                        classes.push(0);
                    }
                    let nouns = self.rng.random_range(1..=3);
                    classes.extend(std::iter::repeat_n(1, nouns));
                }
                Chunk::Vp => {
                    let verbs = self.rng.random_range(1..=2);
                    classes.extend(std::iter::repeat_n(2, verbs));
                }
                Chunk::Pp => classes.push(3),
                Chunk::Other => classes.push(4),
            }
            let label = match chunk {
                Chunk::Np => Some("NP"),
                Chunk::Vp => Some("VP"),
                Chunk::Pp => Some("PP"),
                Chunk::Other => None,
            };
            if let Some(label) = label {
                spans.push(ChunkSpan::new(label, start, classes.len() - 1));
            }
            if classes.len() >= target && chunk != Chunk::Pp {
                break;
            }
            chunk = pick(&mut self.rng, &successors(chunk));
        }
        let words = classes.iter().map(|&c| self.emit(c)).collect();
        let chunks = tags_from_spans(&spans, classes.len(), Scheme::Iobes).expect("generated spans are disjoint");
        SynthSentence { words, classes, chunks }
    }

    pub fn sentences(&mut self, n: usize) -> Vec<SynthSentence> {
        (0..n).map(|_| self.sentence()).collect()
    }

    /// Unlabeled sentences totalling at least `tokens` words.
    pub fn text(&mut self, tokens: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut total = 0;
        while total < tokens {
            let s = self.sentence();
            total += s.words.len();
            out.push(s.words);
        }
        out
    }
}

fn word_name(class: usize, i: usize) -> String {
    let first = ["d", "n", "v", "p", "o"][class];
    let a = LETTERS[i / LETTERS.len()] as char;
    let b = LETTERS[i % LETTERS.len()] as char;
    format!("{first}{a}{b}")
}

/// Class of a generated word, or `None` for anything else.
pub fn word_class(word: &str) -> Option<usize> {
    let mut chars = word.chars();
    let class = match chars.next()? {
        'd' => 0,
        'n' => 1,
        'v' => 2,
        'p' => 3,
        'o' => 4,
        _ => return None,
    };
    let rest: Vec<char> = chars.collect();
    (rest.len() == 2 && rest.iter().all(char::is_ascii_lowercase)).then_some(class)
}

/// The 13 IOBES chunk tags, `O` first.
pub fn chunk_tags() -> Vec<String> {
    let mut tags = vec!["O".to_string()];
    for label in CHUNK_LABELS {
        for p in ["B", "I", "E", "S"] {
            tags.push(format!("{p}-{label}"));
        }
    }
    tags
}

pub fn class_tags() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}
