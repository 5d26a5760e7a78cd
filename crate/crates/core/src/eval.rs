//! Evaluation protocols: word similarity, image retrieval, single-word
//! retrieval, and paraphrase retrieval.
//!
//! Every protocol takes the model as a closure, so recurrent encoders and
//! the linear baseline run through identical code paths. All iteration is in
//! input order with seeded scrambling, so a protocol's output for a given
//! dataset, model and seed never varies between runs.

use crate::data::{scramble, CaptionRecord};
use crate::error::{Error, Result};
use crate::numcore::{cosine, Rng, Vector};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

/// Whether queries keep their word order or are shuffled first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Original,
    Scrambled,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Original => "original",
            Condition::Scrambled => "scrambled",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Condition> {
        match s {
            "original" => Ok(Condition::Original),
            "scrambled" => Ok(Condition::Scrambled),
            other => Err(Error::Config(format!(
                "unknown condition {other:?}; expected original or scrambled"
            ))),
        }
    }
}

/// 1-based fractional ranks: tied values share the mean of the positions
/// they occupy.
fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold one tie run; mean 1-based rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x) * (x - mean_x);
        var_y += (y - mean_y) * (y - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::Correlation(
            "one of the series is constant; its rank correlation is undefined".into(),
        ));
    }
    Ok((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Input(format!(
            "need at least 3 paired observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("correlation inputs must be finite".into()));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// Candidate indices ordered by descending cosine to the query, ties broken
/// by ascending index. Zero-norm candidates are excluded and counted.
#[derive(Debug, Clone)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub excluded: usize,
}

pub fn rank_candidates(query: &Vector, candidates: &[Vector]) -> Result<Ranking> {
    if query.norm() == 0.0 {
        return Err(Error::ZeroNorm { what: "ranking query" });
    }
    let mut scored = Vec::with_capacity(candidates.len());
    let mut excluded = 0;
    for (i, c) in candidates.iter().enumerate() {
        match cosine(query, c) {
            Ok(s) => scored.push((i, s)),
            Err(Error::ZeroNorm { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Ranking { order: scored.into_iter().map(|(i, _)| i).collect(), excluded })
}

/// Result of the word similarity protocol.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityOutcome {
    pub rho: f64,
    /// Benchmark pairs where both words had a usable vector.
    pub covered: usize,
    pub total: usize,
}

/// Ranks model word similarities against gold scores. `vector_for` returns
/// the model's vector for a word, or None when the word is out of reach.
pub fn word_similarity(
    benchmark: &[(String, String, f64)],
    mut vector_for: impl FnMut(&str) -> Result<Option<Vector>>,
) -> Result<SimilarityOutcome> {
    let mut model_scores = Vec::new();
    let mut gold_scores = Vec::new();
    for (a, b, gold) in benchmark {
        let (va, vb) = match (vector_for(a)?, vector_for(b)?) {
            (Some(va), Some(vb)) => (va, vb),
            _ => continue,
        };
        match cosine(&va, &vb) {
            Ok(s) => {
                model_scores.push(s);
                gold_scores.push(*gold);
            }
            Err(Error::ZeroNorm { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if model_scores.len() < 3 {
        return Err(Error::Correlation(format!(
            "only {} of {} benchmark pairs are covered; need at least 3",
            model_scores.len(),
            benchmark.len()
        )));
    }
    Ok(SimilarityOutcome {
        rho: spearman_rho(&model_scores, &gold_scores)?,
        covered: model_scores.len(),
        total: benchmark.len(),
    })
}

/// Result of a retrieval protocol.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalOutcome {
    pub accuracy: f64,
    pub n_queries: usize,
    pub n_candidates: usize,
    /// Queries or candidates the protocol had to leave out (zero-norm
    /// vectors, words without a vector).
    pub excluded: usize,
}

fn check_pool(k: usize, pool_len: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    if k > pool_len {
        return Err(Error::Config(format!(
            "top_k {k} exceeds the candidate pool of {pool_len} images"
        )));
    }
    Ok(())
}

/// Fraction of captions whose own image lands in the top k of the pool,
/// ranked by cosine between the predicted and stored feature vectors. Under
/// the scrambled condition each query's word order is shuffled (end sentinel
/// pinned) before prediction.
#[allow(clippy::too_many_arguments)]
pub fn image_retrieval(
    queries: &[CaptionRecord],
    pool: &[(String, Vector)],
    mut predict: impl FnMut(&[usize]) -> Result<Vector>,
    k: usize,
    condition: Condition,
    seed: u64,
    hold_period: Option<usize>,
) -> Result<RetrievalOutcome> {
    check_pool(k, pool.len())?;
    if queries.is_empty() {
        return Err(Error::Config("image retrieval needs at least one query".into()));
    }
    let vectors: Vec<Vector> = pool.iter().map(|(_, v)| v.clone()).collect();
    let mut rng = Rng::new(seed);
    let mut hits = 0usize;
    let mut excluded = 0usize;
    for record in queries {
        let tokens = match condition {
            Condition::Original => record.tokens.clone(),
            Condition::Scrambled => scramble(&record.tokens, &mut rng, hold_period),
        };
        let ranking = rank_candidates(&predict(&tokens)?, &vectors)?;
        excluded += ranking.excluded;
        if ranking.order.iter().take(k).any(|&i| pool[i].0 == record.image_id) {
            hits += 1;
        }
    }
    Ok(RetrievalOutcome {
        accuracy: hits as f64 / queries.len() as f64,
        n_queries: queries.len(),
        n_candidates: pool.len(),
        excluded,
    })
}

/// Fraction of distinct label words whose predicted features put at least
/// one image bearing that label in the top k. Words without a vector are
/// skipped and counted as excluded.
pub fn single_word_retrieval(
    labels: &[(String, String)],
    pool: &[(String, Vector)],
    mut project: impl FnMut(&str) -> Result<Option<Vector>>,
    k: usize,
) -> Result<RetrievalOutcome> {
    check_pool(k, pool.len())?;
    let label_of: HashMap<&str, &str> =
        labels.iter().map(|(id, w)| (id.as_str(), w.as_str())).collect();
    // BTreeMap for a deterministic word order.
    let mut words: BTreeMap<&str, ()> = BTreeMap::new();
    for (_, w) in labels {
        words.insert(w.as_str(), ());
    }
    let vectors: Vec<Vector> = pool.iter().map(|(_, v)| v.clone()).collect();
    let mut hits = 0usize;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for &word in words.keys() {
        let Some(query) = project(word)? else {
            excluded += 1;
            continue;
        };
        if query.norm() == 0.0 {
            excluded += 1;
            continue;
        }
        let ranking = rank_candidates(&query, &vectors)?;
        evaluated += 1;
        if ranking
            .order
            .iter()
            .take(k)
            .any(|&i| label_of.get(pool[i].0.as_str()) == Some(&word))
        {
            hits += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::Config(
            "no label word could be projected; nothing to evaluate".into(),
        ));
    }
    Ok(RetrievalOutcome {
        accuracy: hits as f64 / evaluated as f64,
        n_queries: evaluated,
        n_candidates: pool.len(),
        excluded,
    })
}

/// Result of the paraphrase protocol.
#[derive(Debug, Clone, Copy)]
pub struct ParaphraseOutcome {
    /// Mean fraction of each query's sister captions found in the top k.
    pub recall: f64,
    pub n_queries: usize,
    pub n_candidates: usize,
    /// Caption groups skipped for not having exactly the expected size.
    pub dropped_groups: usize,
}

/// Paraphrase retrieval over captions grouped by image. Each caption in a
/// full group queries the encodings of all other kept captions (always in
/// their original word order); recall is the fraction of its sisters, the
/// other captions of the same image, appearing in the top `recall_k`. Under
/// the scrambled condition only the query side is shuffled.
#[allow(clippy::too_many_arguments)]
pub fn paraphrase_retrieval(
    captions: &[CaptionRecord],
    mut encode: impl FnMut(&[usize]) -> Result<Vector>,
    recall_k: usize,
    group_size: usize,
    condition: Condition,
    seed: u64,
    hold_period: Option<usize>,
) -> Result<ParaphraseOutcome> {
    if group_size < 2 {
        return Err(Error::Config("group_size must be at least 2".into()));
    }
    if recall_k == 0 {
        return Err(Error::Config("recall_k must be positive".into()));
    }
    // Group caption indices by image in first-appearance order.
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, record) in captions.iter().enumerate() {
        let slot = *group_of.entry(record.image_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }
    let total_groups = groups.len();
    groups.retain(|g| g.len() == group_size);
    let dropped_groups = total_groups - groups.len();
    if groups.is_empty() {
        return Err(Error::Data(format!(
            "no caption group has exactly {group_size} captions; cannot run paraphrase retrieval"
        )));
    }
    let kept: Vec<usize> = groups.iter().flatten().copied().collect();
    if recall_k > kept.len() - 1 {
        return Err(Error::Config(format!(
            "recall_k {recall_k} exceeds the {} available candidates",
            kept.len() - 1
        )));
    }

    // Candidate encodings always come from the original captions.
    let mut originals = Vec::with_capacity(kept.len());
    for &i in &kept {
        originals.push(encode(&captions[i].tokens)?);
    }
    let mut rng = Rng::new(seed);
    let mut recall_sum = 0.0;
    for group in &groups {
        for &qi in group {
            let pos = kept.iter().position(|&i| i == qi).expect("query is kept");
            let query = match condition {
                Condition::Original => originals[pos].clone(),
                Condition::Scrambled => {
                    encode(&scramble(&captions[qi].tokens, &mut rng, hold_period))?
                }
            };
            let mut ranking = rank_candidates(&query, &originals)?;
            ranking.order.retain(|&i| i != pos);
            let found = ranking
                .order
                .iter()
                .take(recall_k)
                .filter(|&&i| group.contains(&kept[i]) && kept[i] != qi)
                .count();
            recall_sum += found as f64 / (group_size - 1) as f64;
        }
    }
    let n_queries = kept.len();
    Ok(ParaphraseOutcome {
        recall: recall_sum / n_queries as f64,
        n_queries,
        n_candidates: kept.len() - 1,
        dropped_groups,
    })
}

/// One row of an evaluation report file.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub condition: &'static str,
    pub value: f64,
    pub n_queries: usize,
    pub n_candidates: usize,
    pub seed: u64,
}

/// Appends a row to a tab-separated report, writing the header first when
/// the file is new or empty.
pub fn append_report(path: &Path, report: &EvalReport) -> Result<()> {
    let needs_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if needs_header {
        writeln!(file, "metric\tcondition\tvalue\tn_queries\tn_candidates\tseed")?;
    }
    writeln!(
        file,
        "{}\t{}\t{}\t{}\t{}\t{}",
        report.metric,
        report.condition,
        report.value,
        report.n_queries,
        report.n_candidates,
        report.seed
    )?;
    Ok(())
}
