//! Text handling and dataset plumbing: tokenization, the vocabulary, caption
//! and feature files, scrambling, and the synthetic corpus generator.
//!
//! File formats, all deterministic byte for byte:
//! - captions: JSON Lines, one `{"id": ..., "caption": ...}` object per line;
//! - image features: binary, magic "IMGF", u32 count, u32 dimension, then per
//!   record a length-prefixed id and the features as little-endian f32
//!   (widened to f64 on load);
//! - similarity benchmarks: tab-separated `word1 word2 score`, `#` comments;
//! - image labels: tab-separated `image_id word`;
//! - vocabulary sidecar: one word per line, line number = token id.

mod synth;

pub use synth::{gen_synthetic, SynthConfig, SynthData};

use crate::binio;
use crate::error::{Error, Result};
use crate::numcore::{Rng, Vector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Spelling of the unknown-word entry. Not producible by [`tokenize`], which
/// never emits angle brackets attached to a word start.
pub const UNK_WORD: &str = "<unk>";
/// Spelling of the end sentinel appended to every encoded sentence.
pub const END_WORD: &str = "<end>";
/// Magic bytes opening an image-features file.
pub const FEATURES_MAGIC: &[u8; 4] = b"IMGF";

/// Lowercases, splits on whitespace, and peels trailing periods off each
/// piece as their own tokens, so "A cute Baby." becomes `a cute baby .`.
/// Re-tokenizing the space-joined output is a fixed point.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split_whitespace() {
        let lower = piece.to_lowercase();
        let stem = lower.trim_end_matches('.');
        let periods = lower.len() - stem.len();
        if !stem.is_empty() {
            tokens.push(stem.to_string());
        }
        for _ in 0..periods {
            tokens.push(".".to_string());
        }
    }
    tokens
}

/// Word-to-id map with reserved unknown and end entries. Indices are dense
/// from zero: unknown is 0, the end sentinel is 1, and content words follow
/// ordered by descending corpus frequency with alphabetical ties, so the same
/// corpus always yields the same table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from tokenized sentences, keeping words that occur at least
    /// `min_count` times.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Vocabulary> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for word in sentence {
                *counts.entry(word.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && *w != UNK_WORD && *w != END_WORD)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut words = Vec::with_capacity(kept.len() + 2);
        words.push(UNK_WORD.to_string());
        words.push(END_WORD.to_string());
        words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
        Ok(Vocabulary::from_words(words))
    }

    fn from_words(words: Vec<String>) -> Vocabulary {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn unk(&self) -> usize {
        0
    }

    pub fn end(&self) -> usize {
        1
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, token: usize) -> Result<&str> {
        self.words
            .get(token)
            .map(|s| s.as_str())
            .ok_or(Error::Vocab { token, vocab_size: self.size() })
    }

    /// Maps words to ids (unknowns to the unknown entry) and appends the end
    /// sentinel. Every encoded sentence is therefore nonempty and
    /// end-terminated.
    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        let mut out: Vec<usize> = words
            .iter()
            .map(|w| self.get(w).unwrap_or(self.unk()))
            .collect();
        out.push(self.end());
        out
    }

    pub fn decode(&self, tokens: &[usize]) -> Result<Vec<String>> {
        tokens
            .iter()
            .map(|&t| self.word(t).map(|s| s.to_string()))
            .collect()
    }

    /// Plain-text sidecar: one word per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for word in &self.words {
            writeln!(w, "{word}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut words = Vec::new();
        for line in r.lines() {
            words.push(line?);
        }
        if words.first().map(String::as_str) != Some(UNK_WORD)
            || words.get(1).map(String::as_str) != Some(END_WORD)
        {
            return Err(Error::Format(format!(
                "vocabulary file must start with {UNK_WORD} and {END_WORD}"
            )));
        }
        let vocab = Vocabulary::from_words(words);
        if vocab.index.len() != vocab.words.len() {
            return Err(Error::Format("vocabulary file contains duplicate words".into()));
        }
        Ok(vocab)
    }
}

/// Uniformly permutes every token except the last, which is the end sentinel
/// and stays terminal. The period is an ordinary token and moves with the
/// rest; `hold_terminal_period` pins a period sitting directly before the
/// sentinel in place as well.
pub fn scramble(
    sentence: &[usize],
    rng: &mut Rng,
    hold_terminal_period: Option<usize>,
) -> Vec<usize> {
    let mut out = sentence.to_vec();
    if out.len() < 2 {
        return out;
    }
    let mut upper = out.len() - 1;
    if let Some(period) = hold_terminal_period {
        if upper >= 1 && out[upper - 1] == period {
            upper -= 1;
        }
    }
    rng.shuffle(&mut out[..upper]);
    out
}

/// One caption joined with its image: encoded end-terminated tokens and the
/// target feature vector.
#[derive(Debug, Clone)]
pub struct CaptionRecord {
    pub image_id: String,
    pub tokens: Vec<usize>,
    pub target: Vector,
}

#[derive(Serialize, Deserialize)]
struct CaptionLine {
    id: String,
    caption: String,
}

/// Reads a JSON Lines caption file into (image id, caption text) pairs.
pub fn load_caption_lines(path: &Path) -> Result<Vec<(String, String)>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad caption record: {e}"),
        })?;
        out.push((parsed.id, parsed.caption));
    }
    Ok(out)
}

pub fn save_caption_lines(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (id, caption) in lines {
        let record = CaptionLine { id: id.clone(), caption: caption.clone() };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("cannot serialize caption: {e}")))?;
        writeln!(w, "{json}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the binary feature file. Values are narrowed to f32, which is the
/// format's precision.
pub fn save_features(path: &Path, feature_dim: usize, items: &[(String, Vector)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    binio::write_u32(&mut w, items.len() as u32)?;
    binio::write_u32(&mut w, feature_dim as u32)?;
    for (id, vec) in items {
        if vec.dim() != feature_dim {
            return Err(Error::Format(format!(
                "feature vector for {id} has dimension {}, file header says {feature_dim}",
                vec.dim()
            )));
        }
        binio::write_string(&mut w, id)?;
        let narrowed: Vec<f32> = vec.as_slice().iter().map(|&v| v as f32).collect();
        binio::write_f32_slice(&mut w, &narrowed)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature file, widening values to f64. Duplicate ids are rejected;
/// the order of records is preserved.
pub fn load_features(path: &Path) -> Result<(usize, Vec<(String, Vector)>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("feature file too short for magic bytes".into()))?;
    if &magic != FEATURES_MAGIC {
        return Err(Error::Format(format!(
            "bad feature file magic {magic:?}, expected {FEATURES_MAGIC:?}"
        )));
    }
    let count = binio::read_u32(&mut r)? as usize;
    let dim = binio::read_u32(&mut r)? as usize;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = binio::read_string(&mut r)?;
        if seen.insert(id.clone(), i).is_some() {
            return Err(Error::Format(format!("duplicate feature id {id:?}")));
        }
        let values = binio::read_f32_vec(&mut r, dim)?;
        let widened: Vec<f64> = values.into_iter().map(f64::from).collect();
        if widened.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature value for id {id:?}")));
        }
        out.push((id, Vector::from_vec(widened)));
    }
    binio::expect_eof(&mut r, "feature file")?;
    Ok((dim, out))
}

/// Tokenizes, encodes and joins captions with their image features. Captions
/// whose id has no feature vector are dropped; the count of dropped captions
/// is returned for reporting.
pub fn join_captions_features(
    captions: &[(String, String)],
    features: &[(String, Vector)],
    vocab: &Vocabulary,
) -> (Vec<CaptionRecord>, usize) {
    let by_id: HashMap<&str, &Vector> =
        features.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut records = Vec::with_capacity(captions.len());
    let mut dropped = 0;
    for (id, text) in captions {
        match by_id.get(id.as_str()) {
            Some(target) => records.push(CaptionRecord {
                image_id: id.clone(),
                tokens: vocab.encode(&tokenize(text)),
                target: (*target).clone(),
            }),
            None => dropped += 1,
        }
    }
    (records, dropped)
}

/// Reads a tab-separated similarity benchmark: `word1 TAB word2 TAB score`,
/// with `#` lines and blank lines ignored.
pub fn load_benchmark(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (w1, w2, score) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(s)) => (a, b, s),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected word1<TAB>word2<TAB>score".into(),
                })
            }
        };
        let score: f64 = score.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("bad similarity score {score:?}"),
        })?;
        out.push((w1.to_string(), w2.to_string(), score));
    }
    Ok(out)
}

pub fn save_benchmark(path: &Path, items: &[(String, String, f64)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# word1\tword2\tscore")?;
    for (a, b, s) in items {
        writeln!(w, "{a}\t{b}\t{s}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads image labels: `image_id TAB word` per line, `#` comments ignored.
pub fn load_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        match (parts.next(), parts.next()) {
            (Some(id), Some(word)) => out.push((id.to_string(), word.to_string())),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected image_id<TAB>word".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn save_labels(path: &Path, items: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# image_id\tword")?;
    for (id, word) in items {
        writeln!(w, "{id}\t{word}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numcore::Rng;
    use tempfile::tempdir;

    #[test]
    fn tokenize_lowercases_and_splits_the_terminal_period() {
        assert_eq!(tokenize("A cute Baby."), vec!["a", "cute", "baby", "."]);
        assert_eq!(tokenize("two horses"), vec!["two", "horses"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("  Dogs   RUN.  "), vec!["dogs", "run", "."]);
        // Interior periods stay; multiple trailing periods each get a token.
        assert_eq!(tokenize("u.s flag.."), vec!["u.s", "flag", ".", "."]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
    }

    #[test]
    fn vocabulary_orders_by_frequency_then_alphabet() {
        let corpus = vec![
            tokenize("b b b a a c"),
            tokenize("a z"),
        ];
        let vocab = Vocabulary::build(&corpus, 2).unwrap();
        assert_eq!(vocab.word(0).unwrap(), UNK_WORD);
        assert_eq!(vocab.word(1).unwrap(), END_WORD);
        // a and b both occur 3 times; alphabetical break puts a first.
        assert_eq!(vocab.word(2).unwrap(), "a");
        assert_eq!(vocab.word(3).unwrap(), "b");
        assert_eq!(vocab.size(), 4); // c and z fall under min_count
        assert_eq!(vocab.get("c"), None);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocabulary::build(&[], 1), Err(Error::Data(_))));
    }

    #[test]
    fn encode_appends_the_sentinel_and_maps_unknowns() {
        let corpus = vec![tokenize("dog runs dog runs")];
        let vocab = Vocabulary::build(&corpus, 2).unwrap();
        let ids = vocab.encode(&tokenize("dog jumps"));
        assert_eq!(ids, vec![vocab.get("dog").unwrap(), vocab.unk(), vocab.end()]);
        let words = vocab.decode(&ids).unwrap();
        assert_eq!(words, vec!["dog", UNK_WORD, END_WORD]);
        // Empty input still encodes to a valid one-token sentence.
        assert_eq!(vocab.encode(&[]), vec![vocab.end()]);
    }

    #[test]
    fn vocabulary_sidecar_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("words.vocab");
        let corpus = vec![tokenize("red dog near a cat . red dog near a cat .")];
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(vocab, loaded);
    }

    #[test]
    fn scramble_permutes_everything_but_the_sentinel() {
        let mut rng = Rng::new(5);
        let sentence = vec![2, 3, 4, 5, 6, 1];
        let shuffled = scramble(&sentence, &mut rng, None);
        assert_eq!(*shuffled.last().unwrap(), 1, "the sentinel must stay terminal");
        let mut body: Vec<usize> = shuffled[..5].to_vec();
        body.sort_unstable();
        assert_eq!(body, vec![2, 3, 4, 5, 6], "the body must be a permutation");
        // Same seed, same permutation.
        let again = scramble(&sentence, &mut Rng::new(5), None);
        assert_eq!(again, scramble(&sentence, &mut Rng::new(5), None));
    }

    #[test]
    fn scramble_can_hold_a_terminal_period() {
        let period = 9;
        let sentence = vec![2, 3, 4, 5, period, 1];
        let mut moved = false;
        for seed in 0..20 {
            let out = scramble(&sentence, &mut Rng::new(seed), Some(period));
            assert_eq!(out[4], period);
            assert_eq!(out[5], 1);
            if out[..4] != sentence[..4] {
                moved = true;
            }
        }
        assert!(moved, "the body should still be shuffled");
    }

    #[test]
    fn short_sentences_are_scramble_fixed_points() {
        let mut rng = Rng::new(6);
        assert_eq!(scramble(&[1], &mut rng, None), vec![1]);
        assert_eq!(scramble(&[7, 1], &mut rng, None), vec![7, 1]);
    }

    #[test]
    fn caption_lines_roundtrip_with_escapes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("captions.jsonl");
        let lines = vec![
            ("img_1".to_string(), "a \"quoted\" dog".to_string()),
            ("img_2".to_string(), "tab\there".to_string()),
        ];
        save_caption_lines(&path, &lines).unwrap();
        let loaded = load_caption_lines(&path).unwrap();
        assert_eq!(lines, loaded);
    }

    #[test]
    fn malformed_caption_line_reports_its_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("captions.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"caption\":\"ok\"}\nnot json\n").unwrap();
        match load_caption_lines(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error with a line number, got {other:?}"),
        }
    }

    #[test]
    fn features_roundtrip_bit_exact_at_file_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.imgf");
        // Values chosen exactly representable in f32.
        let items = vec![
            ("img_1".to_string(), Vector::from_vec(vec![0.5, 1.25, 3.0])),
            ("img_2".to_string(), Vector::from_vec(vec![0.0, 2.5, 4.75])),
        ];
        save_features(&path, 3, &items).unwrap();
        let (dim, loaded) = load_features(&path).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(items, loaded);
        // Re-saving reproduces the file byte for byte.
        let path2 = dir.path().join("feats2.imgf");
        save_features(&path2, 3, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        // Header layout: magic, count, dim as little-endian u32.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"IMGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn duplicate_feature_ids_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("feats.imgf");
        let items = vec![
            ("same".to_string(), Vector::from_vec(vec![1.0])),
            ("same".to_string(), Vector::from_vec(vec![2.0])),
        ];
        save_features(&path, 1, &items).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Format(_))));
    }

    #[test]
    fn join_drops_captions_without_features() {
        let corpus = vec![tokenize("a dog . a dog .")];
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let captions = vec![
            ("img_1".to_string(), "a dog .".to_string()),
            ("img_missing".to_string(), "a dog .".to_string()),
        ];
        let features = vec![("img_1".to_string(), Vector::from_vec(vec![1.0, 2.0]))];
        let (records, dropped) = join_captions_features(&captions, &features, &vocab);
        assert_eq!(records.len(), 1);
        assert_eq!(dropped, 1);
        assert_eq!(records[0].image_id, "img_1");
        assert_eq!(*records[0].tokens.last().unwrap(), vocab.end());
    }

    #[test]
    fn benchmark_file_roundtrips_and_skips_comments() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bench.tsv");
        let items = vec![
            ("dog".to_string(), "cat".to_string(), 0.8),
            ("dog".to_string(), "car".to_string(), 0.1),
        ];
        save_benchmark(&path, &items).unwrap();
        assert_eq!(load_benchmark(&path).unwrap(), items);
        std::fs::write(&path, "# comment\ndog\tcat\tnot_a_number\n").unwrap();
        assert!(matches!(load_benchmark(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn labels_file_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        let items = vec![
            ("scene_1".to_string(), "dog".to_string()),
            ("scene_2".to_string(), "cat".to_string()),
        ];
        save_labels(&path, &items).unwrap();
        assert_eq!(load_labels(&path).unwrap(), items);
    }

    proptest! {
        // Tokenization is a fixed point on its own output.
        #[test]
        fn tokenize_is_idempotent(s in "[a-zA-Z. ]{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        // Scrambling preserves the token multiset and the final sentinel.
        #[test]
        fn scramble_preserves_the_multiset(
            body in proptest::collection::vec(0usize..50, 0..12),
            seed in any::<u64>(),
        ) {
            let mut sentence = body.clone();
            sentence.push(1); // sentinel
            let out = scramble(&sentence, &mut Rng::new(seed), None);
            prop_assert_eq!(*out.last().unwrap(), 1);
            let mut a = out[..out.len() - 1].to_vec();
            let mut b = body;
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
