//! Corpus handling: load diacritized documents, extract labeled sentences,
//! pack them into fixed-length training rows, and split at document
//! granularity.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hebrew::{self, AnalysisMode, LetterLabel, Violation, MASK};
use crate::model::CharVocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid utf-8 in {path}")]
    Encoding { path: String },
    #[error("sentence of length {len} exceeds max_length {max_length}")]
    SentenceTooLong { len: usize, max_length: usize },
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    BadRatios((f64, f64, f64)),
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Hebrew(#[from] hebrew::HebrewError),
}

/// One undiacritized sentence with aligned gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub plain: Vec<char>,
    pub labels: Vec<LetterLabel>,
    /// (document id, ordinal within the document)
    pub source: (String, usize),
}

impl LabeledSentence {
    pub fn len(&self) -> usize {
        self.plain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plain.is_empty()
    }
}

/// A loaded document: id, genre tag, and its sentences.
#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub genre: String,
    pub sentences: Vec<LabeledSentence>,
    /// Stray-mark reports from lenient analysis, with source line numbers.
    pub violations: Vec<(usize, Violation)>,
}

/// A segment of a packed row: which sentence it came from and where it
/// landed. Used to stitch per-position predictions back together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackSegment {
    /// Index into the sentence list passed to `pack`.
    pub sentence: usize,
    /// Start offset within the packed row.
    pub start: usize,
    pub len: usize,
}

/// One fixed-length training/prediction row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    /// Token ids over the character vocabulary, length = max_length.
    pub token_ids: Vec<usize>,
    /// The packed characters; PAD positions hold '\0'.
    pub chars: Vec<char>,
    pub labels: Vec<LetterLabel>,
    /// 1 for real positions, 0 for PAD.
    pub attention_mask: Vec<u8>,
    pub segments: Vec<PackSegment>,
}

impl PackedSequence {
    pub fn max_length(&self) -> usize {
        self.token_ids.len()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

/// Document-granularity dataset partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

const SENTENCE_FINAL: [char; 4] = ['.', '!', '?', ':'];

/// Splits analyzed text into sentences: boundaries at sentence-final
/// punctuation followed by whitespace; sentences longer than `max_length`
/// are hard-split at the last whitespace before the limit (or at the limit
/// when there is none).
fn split_sentences(
    plain: &[char],
    labels: &[LetterLabel],
    max_length: usize,
) -> Vec<(Vec<char>, Vec<LetterLabel>)> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < plain.len() {
        let boundary = SENTENCE_FINAL.contains(&plain[i])
            && plain.get(i + 1).is_none_or(|c| c.is_whitespace());
        if boundary {
            push_sentence(&mut out, &plain[start..=i], &labels[start..=i], max_length);
            i += 1;
            // skip the whitespace run after the boundary
            while i < plain.len() && plain[i].is_whitespace() {
                i += 1;
            }
            start = i;
        } else {
            i += 1;
        }
    }
    if start < plain.len() {
        push_sentence(&mut out, &plain[start..], &labels[start..], max_length);
    }
    out
}

fn push_sentence(
    out: &mut Vec<(Vec<char>, Vec<LetterLabel>)>,
    plain: &[char],
    labels: &[LetterLabel],
    max_length: usize,
) {
    let trimmed = trim_ws(plain, labels);
    let (plain, labels) = match trimmed {
        Some(t) => t,
        None => return,
    };
    if plain.len() <= max_length {
        out.push((plain.to_vec(), labels.to_vec()));
        return;
    }
    // hard split at the last whitespace before the limit
    let window = &plain[..max_length];
    let cut = window
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(max_length);
    out.push((plain[..cut].to_vec(), labels[..cut].to_vec()));
    push_sentence(out, &plain[cut..], &labels[cut..], max_length);
}

fn trim_ws<'a>(
    plain: &'a [char],
    labels: &'a [LetterLabel],
) -> Option<(&'a [char], &'a [LetterLabel])> {
    let first = plain.iter().position(|c| !c.is_whitespace())?;
    let last = plain.iter().rposition(|c| !c.is_whitespace())?;
    Some((&plain[first..=last], &labels[first..=last]))
}

/// Loads one UTF-8 diacritized file: normalize + analyze each line, then
/// sentence-split. The document id is derived from the path.
pub fn load_document(
    path: &Path,
    genre: &str,
    max_length: usize,
    mode: AnalysisMode,
) -> Result<Document, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::Encoding {
        path: path.display().to_string(),
    })?;
    let id = doc_id(path, genre);
    let mut sentences = Vec::new();
    let mut violations = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let analysis = hebrew::analyze(line, mode)?;
        for v in analysis.violations {
            violations.push((line_no + 1, v));
        }
        for (plain, labels) in split_sentences(&analysis.text.plain, &analysis.text.labels, max_length)
        {
            let ordinal = sentences.len();
            sentences.push(LabeledSentence {
                plain,
                labels,
                source: (id.clone(), ordinal),
            });
        }
    }
    Ok(Document {
        id,
        genre: genre.to_string(),
        sentences,
        violations,
    })
}

fn doc_id(path: &Path, genre: &str) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    format!("{genre}/{stem}")
}

/// Loads every `<root>/<genre>/<file>.txt` under a corpus root. Files are
/// visited in sorted order for determinism.
pub fn load_corpus(
    root: &Path,
    max_length: usize,
    mode: AnalysisMode,
) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut genres: Vec<_> = fs::read_dir(root)
        .map_err(|source| CorpusError::Io {
            path: root.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    genres.sort();
    for genre_dir in genres {
        let genre = genre_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<_> = fs::read_dir(&genre_dir)
            .map_err(|source| CorpusError::Io {
                path: genre_dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        for file in files {
            docs.push(load_document(&file, &genre, max_length, mode)?);
        }
    }
    Ok(docs)
}

/// Greedy first-fit packing in corpus order. Sentences within a row are
/// joined by a single space whose label is fully masked; the remainder is
/// PAD (token id 0, masked labels, attention 0).
pub fn pack(
    sentences: &[LabeledSentence],
    max_length: usize,
    vocab: &CharVocab,
) -> Result<Vec<PackedSequence>, CorpusError> {
    let mut packs: Vec<PackedSequence> = Vec::new();
    let mut current: Option<PackedBuilder> = None;

    for (idx, sentence) in sentences.iter().enumerate() {
        if sentence.len() > max_length {
            return Err(CorpusError::SentenceTooLong {
                len: sentence.len(),
                max_length,
            });
        }
        if sentence.is_empty() {
            continue;
        }
        let fits = current
            .as_ref()
            .is_some_and(|b| b.len + 1 + sentence.len() <= max_length);
        if !fits {
            if let Some(b) = current.take() {
                packs.push(b.finish(max_length, vocab));
            }
            current = Some(PackedBuilder::new());
        }
        current.as_mut().unwrap().push(idx, sentence);
    }
    if let Some(b) = current.take() {
        packs.push(b.finish(max_length, vocab));
    }
    Ok(packs)
}

struct PackedBuilder {
    chars: Vec<char>,
    labels: Vec<LetterLabel>,
    segments: Vec<PackSegment>,
    len: usize,
}

impl PackedBuilder {
    fn new() -> Self {
        PackedBuilder {
            chars: Vec::new(),
            labels: Vec::new(),
            segments: Vec::new(),
            len: 0,
        }
    }

    fn push(&mut self, idx: usize, sentence: &LabeledSentence) {
        if self.len > 0 {
            self.chars.push(' ');
            self.labels.push(LetterLabel::MASKED);
            self.len += 1;
        }
        self.segments.push(PackSegment {
            sentence: idx,
            start: self.len,
            len: sentence.len(),
        });
        self.chars.extend_from_slice(&sentence.plain);
        self.labels.extend_from_slice(&sentence.labels);
        self.len += sentence.len();
    }

    fn finish(self, max_length: usize, vocab: &CharVocab) -> PackedSequence {
        let real = self.len;
        let mut token_ids: Vec<usize> = self.chars.iter().map(|&c| vocab.id(c)).collect();
        let mut chars = self.chars;
        let mut labels = self.labels;
        let mut attention_mask = vec![1u8; real];
        token_ids.resize(max_length, CharVocab::PAD);
        chars.resize(max_length, '\0');
        labels.resize(max_length, LetterLabel::MASKED);
        attention_mask.resize(max_length, 0);
        PackedSequence {
            token_ids,
            chars,
            labels,
            attention_mask,
            segments: self.segments,
        }
    }
}

/// One row per sentence, no packing. Used for the packing-efficiency
/// comparison.
pub fn pack_unpacked(
    sentences: &[LabeledSentence],
    max_length: usize,
    vocab: &CharVocab,
) -> Result<Vec<PackedSequence>, CorpusError> {
    let mut packs = Vec::with_capacity(sentences.len());
    for (idx, sentence) in sentences.iter().enumerate() {
        if sentence.len() > max_length {
            return Err(CorpusError::SentenceTooLong {
                len: sentence.len(),
                max_length,
            });
        }
        if sentence.is_empty() {
            continue;
        }
        let mut b = PackedBuilder::new();
        b.push(idx, sentence);
        packs.push(b.finish(max_length, vocab));
    }
    Ok(packs)
}

/// Padding statistics: (pad_fraction, packs_per_sentence).
pub fn pack_stats(packs: &[PackedSequence]) -> (f64, f64) {
    assert!(!packs.is_empty(), "pack_stats on empty input");
    let total: usize = packs.iter().map(|p| p.max_length()).sum();
    let real: usize = packs.iter().map(|p| p.real_len()).sum();
    let sentences: usize = packs.iter().map(|p| p.segments.len()).sum();
    let pad_fraction = (total - real) as f64 / total as f64;
    let packs_per_sentence = packs.len() as f64 / sentences as f64;
    (pad_fraction, packs_per_sentence)
}

/// Deterministic document-granularity split. Ratios must be non-negative
/// and sum to 1; validation/test sizes are rounded, train takes the rest.
pub fn split_dataset(
    docs: Vec<Document>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(CorpusError::BadRatios(ratios));
    }
    if docs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut docs = docs;
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);

    let n = docs.len();
    let n_val = (n as f64 * r_val).round() as usize;
    let n_test = (n as f64 * r_test).round() as usize;
    let n_val = n_val.min(n);
    let n_test = n_test.min(n - n_val);

    let test: Vec<Document> = docs.split_off(n - n_test);
    let validation: Vec<Document> = docs.split_off(docs.len() - n_val);
    let train = docs;

    let mut warnings = Vec::new();
    if train.is_empty() {
        warnings.push("train split is empty".to_string());
    }
    if validation.is_empty() && r_val > 0.0 {
        warnings.push("validation split is empty after rounding".to_string());
    }
    if test.is_empty() && r_test > 0.0 {
        warnings.push("test split is empty after rounding".to_string());
    }
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        warnings,
    })
}

/// Serializes a split as `<split>\t<doc-id>` lines.
pub fn manifest_string(split: &DatasetSplit) -> String {
    let mut out = String::new();
    for (name, docs) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        for doc in docs.iter() {
            out.push_str(name);
            out.push('\t');
            out.push_str(&doc.id);
            out.push('\n');
        }
    }
    out
}

/// Parses a manifest back into (split name, doc id) pairs.
pub fn parse_manifest(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let (split, id) = l.split_once('\t')?;
            Some((split.to_string(), id.to_string()))
        })
        .collect()
}

/// All sentences of a document list, in document order.
pub fn sentences_of(docs: &[Document]) -> Vec<LabeledSentence> {
    docs.iter()
        .flat_map(|d| d.sentences.iter().cloned())
        .collect()
}

/// Packs each document separately and concatenates the rows, so no pack
/// straddles a document boundary.
pub fn pack_documents(
    docs: &[Document],
    max_length: usize,
    vocab: &CharVocab,
) -> Result<Vec<PackedSequence>, CorpusError> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(pack(&doc.sentences, max_length, vocab)?);
    }
    Ok(out)
}

/// Dummy label used where only characters matter (prediction-time packing).
pub fn unlabeled_sentence(plain: Vec<char>, ordinal: usize) -> LabeledSentence {
    let labels = vec![LetterLabel { nikud: MASK, dagesh: MASK, sin: MASK }; plain.len()];
    LabeledSentence {
        plain,
        labels,
        source: (String::new(), ordinal),
    }
}
