//! Curated lyric-line corpus: normalization, word vocabulary, encoding and
//! the train/validation split.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<sos>", "<eos>", "<unk>"];

pub const DEFAULT_MAX_LEN: usize = 15;
pub const DEFAULT_MIN_COUNT: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line has no tokens")]
    EmptyLine,
    #[error("line has {len} tokens, maximum is {max}")]
    TooLong { len: usize, max: usize },
    #[error("corpus file not found: {0}")]
    FileNotFound(String),
    #[error("malformed record on line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("corpus i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

/// Lowercases, drops punctuation (apostrophes survive between two
/// alphanumerics) and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut cleaned = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cleaned.push(c);
        } else if c == '\'' || c == '\u{2019}' {
            let inner = i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            cleaned.push(if inner { '\'' } else { ' ' });
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Word ↔ id map. Ids 0-3 are always `<pad> <sos> <eos> <unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabDump", into = "VocabDump")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabDump {
    words: Vec<String>,
}

impl TryFrom<VocabDump> for Vocabulary {
    type Error = CorpusError;
    fn try_from(dump: VocabDump) -> Result<Self, Self::Error> {
        Vocabulary::from_words(dump.words)
    }
}

impl From<Vocabulary> for VocabDump {
    fn from(v: Vocabulary) -> Self {
        VocabDump { words: v.words }
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered word list.
    pub fn from_words(words: Vec<String>) -> Result<Self, CorpusError> {
        if words.len() < NUM_SPECIALS || words[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(CorpusError::InvalidVocabulary(
                "ids 0-3 must be <pad> <sos> <eos> <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(CorpusError::InvalidVocabulary(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn specials_only() -> Self {
        Self::from_words(SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect()).expect("specials are valid")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Id for `word`, falling back to UNK.
    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Space-joined words for `ids`; out-of-range ids render as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `{"words": [...]}` ordered by id.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serialises")
    }

    /// Hex SHA-256 of [`Vocabulary::to_json`]; checkpoints carry it.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Specials plus every word seen at least `min_count` times, ordered by
/// descending frequency with lexicographic tie-break. Lines are expected to
/// be normalized already.
pub fn build_vocabulary<S: AsRef<str>>(corpus_lines: &[S], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus_lines {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count && !SPECIAL_TOKENS.contains(&w))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut words: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    Vocabulary::from_words(words).expect("built vocabulary is valid")
}

/// Encoded corpus line. `ids` never contains PAD, SOS or EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedLine {
    pub ids: Vec<usize>,
    pub text: String,
}

impl TokenizedLine {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

/// Encodes already-normalized text. Long lines are rejected, never truncated.
pub fn encode_line(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedLine, CorpusError> {
    let ids: Vec<usize> = text.split_whitespace().map(|w| vocab.id_or_unk(w)).collect();
    if ids.is_empty() {
        return Err(CorpusError::EmptyLine);
    }
    if ids.len() > max_len {
        return Err(CorpusError::TooLong {
            len: ids.len(),
            max: max_len,
        });
    }
    Ok(TokenizedLine {
        ids,
        text: text.to_string(),
    })
}

/// One JSONL corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub min_count: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            val_fraction: 0.1,
            seed: 7,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Encoded lines, optional theme tags and a disjoint train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub lines: Vec<TokenizedLine>,
    pub tags: Vec<Option<String>>,
    pub tag_inventory: Vec<String>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Records dropped because they failed to encode.
    pub skipped: usize,
}

impl Corpus {
    /// Normalizes `records`, builds the vocabulary over them, encodes and
    /// splits deterministically by `options.seed`.
    pub fn build(records: &[CorpusRecord], options: &CorpusOptions) -> (Corpus, Vocabulary) {
        let normalized: Vec<String> = records.iter().map(|r| normalize(&r.text)).collect();
        let vocab = build_vocabulary(&normalized, options.min_count);
        let mut lines = Vec::new();
        let mut tags = Vec::new();
        let mut skipped = 0;
        for (text, rec) in normalized.iter().zip(records) {
            match encode_line(text, &vocab, options.max_len) {
                Ok(line) => {
                    lines.push(line);
                    tags.push(rec.tag.clone().filter(|t| !t.is_empty()));
                }
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} corpus lines that failed to encode");
        }
        let tag_inventory: Vec<String> = tags
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let (train, validation) = split_indices(lines.len(), options.val_fraction, options.seed);
        (
            Corpus {
                lines,
                tags,
                tag_inventory,
                train,
                validation,
                skipped,
            },
            vocab,
        )
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn train_lines(&self) -> impl Iterator<Item = &TokenizedLine> {
        self.train.iter().map(|&i| &self.lines[i])
    }

    pub fn validation_lines(&self) -> impl Iterator<Item = &TokenizedLine> {
        self.validation.iter().map(|&i| &self.lines[i])
    }

    /// Position of line `index`'s tag in the tag inventory.
    pub fn tag_id(&self, index: usize) -> Option<usize> {
        let tag = self.tags[index].as_ref()?;
        self.tag_inventory.iter().position(|t| t == tag)
    }
}

/// Shuffles `0..n` with `seed`; the first `round(n·val_fraction)` become
/// validation. Both halves are returned sorted.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut validation = order[..n_val.min(n)].to_vec();
    let mut train = order[n_val.min(n)..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    (train, validation)
}

/// Parses JSONL corpus text. Blank lines are ignored.
pub fn parse_records(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, options: &CorpusOptions) -> Result<(Corpus, Vocabulary), CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(path.display().to_string()),
        _ => CorpusError::Io(e),
    })?;
    let records = parse_records(&text)?;
    Ok(Corpus::build(&records, options))
}

/// The 200-line demo corpus shipped with the crate.
pub const DEMO_CORPUS: &str = include_str!("../data/demo_corpus.jsonl");

pub fn demo_records() -> Vec<CorpusRecord> {
    parse_records(DEMO_CORPUS).expect("bundled corpus parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("And the stars they go."), "and the stars they go");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("  I'm   Frightened! "), "i'm frightened");
        assert_eq!(normalize("'quoted' words"), "quoted words");
        assert_eq!(normalize("You\u{2019}ll be"), "you'll be");
    }

    #[test]
    fn vocabulary_sizes() {
        let empty: [&str; 0] = [];
        assert_eq!(build_vocabulary(&empty, 1).len(), 4);
        assert_eq!(build_vocabulary(&["and the stars they go"], 1).len(), 9);
        let v = build_vocabulary(&["a a b"], 2);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id_or_unk("b"), UNK);
    }

    #[test]
    fn vocabulary_order_is_frequency_then_lexicographic() {
        let v = build_vocabulary(&["b a c c", "b a"], 1);
        assert_eq!(&v.words()[4..], &["a", "b", "c"]);
        let v = build_vocabulary(&["z y y", "z x"], 1);
        assert_eq!(&v.words()[4..], &["y", "z", "x"]);
    }

    #[test]
    fn encode_known_unknown_and_too_long() {
        let vocab = build_vocabulary(&["rooted in the light"], 1);
        let line = encode_line("rooted in the light", &vocab, 15).unwrap();
        assert!(line.ids.iter().all(|&i| i >= NUM_SPECIALS));
        assert_eq!(vocab.decode(&line.ids), "rooted in the light");

        let unk = encode_line("zzzqx in the light", &vocab, 15).unwrap();
        assert_eq!(
            unk.ids,
            vec![UNK, vocab.id("in").unwrap(), vocab.id("the").unwrap(), vocab.id("light").unwrap()]
        );

        let long = vec!["the"; 16].join(" ");
        assert!(matches!(
            encode_line(&long, &vocab, 15),
            Err(CorpusError::TooLong { len: 16, max: 15 })
        ));
        assert!(matches!(encode_line("", &vocab, 15), Err(CorpusError::EmptyLine)));
    }

    #[test]
    fn vocabulary_dump_round_trip_and_validation() {
        let v = build_vocabulary(&["with a shadow beside"], 1);
        let json = v.to_json();
        assert!(json.starts_with("{\"words\":[\"<pad>\",\"<sos>\",\"<eos>\",\"<unk>\""));
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocabulary>("{\"words\":[\"a\"]}").is_err());
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let (train, val) = split_indices(100, 0.1, 7);
        assert_eq!((train.len(), val.len()), (90, 10));
        assert!(train.iter().all(|i| !val.contains(i)));
        assert_eq!(split_indices(100, 0.1, 7), (train, val));
    }

    #[test]
    fn malformed_record_names_its_line() {
        let text = "{\"text\": \"a b\"}\n{\"text\": oops}\n";
        match parse_records(text) {
            Err(CorpusError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn demo_corpus_contains_fixture_words() {
        let (corpus, vocab) = Corpus::build(&demo_records(), &CorpusOptions::default());
        assert_eq!(corpus.len(), 200);
        for w in ["rooted", "in", "the", "light", "stars", "endless", "ship", "fire"] {
            assert!(vocab.id(w).is_some(), "{w}");
        }
        assert!(!corpus.tag_inventory.is_empty());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..15)) {
            let line = words.join(" ");
            let vocab = build_vocabulary(std::slice::from_ref(&line), 1);
            let enc = encode_line(&normalize(&line), &vocab, DEFAULT_MAX_LEN).unwrap();
            prop_assert!(enc.ids.iter().all(|&i| i > EOS));
            prop_assert_eq!(vocab.decode(&enc.ids), line);
        }

        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
        }
    }
}
