//! Structured-pool retrieval protocol and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, sub_rng};

/// Identity of a corpus item as the pool protocol sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub piece_id: usize,
    pub composer_id: usize,
    pub segment_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub size: usize,
    pub n_queries: usize,
    pub n_hard: usize,
    pub n_semihard: usize,
    pub seed: u64,
}

impl PoolConfig {
    pub const CANONICAL_SEED: u64 = 42;

    pub fn full() -> Self {
        Self { size: 256, n_queries: 500, n_hard: 64, n_semihard: 32, seed: Self::CANONICAL_SEED }
    }

    pub fn toy() -> Self {
        Self { size: 32, n_queries: 64, n_hard: 8, n_semihard: 4, seed: Self::CANONICAL_SEED }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::Config("pool needs at least one query".into()));
        }
        if 1 + self.n_hard + self.n_semihard > self.size {
            return Err(Error::Config(format!(
                "pool size {} cannot hold the match plus {} hard and {} semi-hard negatives",
                self.size, self.n_hard, self.n_semihard
            )));
        }
        Ok(())
    }
}

/// One query: the item it comes from and its candidate list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolQuery {
    pub item: usize,
    /// Candidate items in ascending index order (the tie-break order).
    pub candidates: Vec<usize>,
    pub hard: Vec<usize>,
    pub semihard: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPool {
    pub config: PoolConfig,
    pub queries: Vec<PoolQuery>,
}

fn pick(rng: &mut crate::rng::XRng, from: &[usize], n: usize) -> Vec<usize> {
    permutation(rng, from.len()).into_iter().take(n).map(|i| from[i]).collect()
}

impl EvalPool {
    /// Draw queries and per-query candidates. Queries cycle through a seeded
    /// permutation of the items; each query draws its own negatives.
    pub fn build(items: &[ItemMeta], config: PoolConfig) -> Result<Self> {
        config.validate()?;
        if items.len() < config.size {
            return Err(Error::Config(format!(
                "pool: {} items cannot fill a pool of {}",
                items.len(),
                config.size
            )));
        }
        let mut rng = sub_rng(config.seed, "pool");
        let order = permutation(&mut rng, items.len());
        let mut queries = Vec::with_capacity(config.n_queries);
        for qi in 0..config.n_queries {
            let q = order[qi % items.len()];
            let me = items[q];
            let same_piece: Vec<usize> = (0..items.len())
                .filter(|&i| items[i].piece_id == me.piece_id && items[i].segment_index != me.segment_index)
                .collect();
            let same_composer: Vec<usize> = (0..items.len())
                .filter(|&i| items[i].composer_id == me.composer_id && items[i].piece_id != me.piece_id)
                .collect();
            if same_piece.len() < config.n_hard {
                return Err(Error::Config(format!(
                    "pool: hard negatives deficient for item {q} ({} available, {} required)",
                    same_piece.len(),
                    config.n_hard
                )));
            }
            if same_composer.len() < config.n_semihard {
                return Err(Error::Config(format!(
                    "pool: semi-hard negatives deficient for item {q} ({} available, {} required)",
                    same_composer.len(),
                    config.n_semihard
                )));
            }
            let hard = pick(&mut rng, &same_piece, config.n_hard);
            let semihard = pick(&mut rng, &same_composer, config.n_semihard);
            let mut taken = vec![false; items.len()];
            taken[q] = true;
            hard.iter().chain(&semihard).for_each(|&i| taken[i] = true);
            let rest: Vec<usize> = (0..items.len()).filter(|&i| !taken[i]).collect();
            let n_random = config.size - 1 - hard.len() - semihard.len();
            let random = pick(&mut rng, &rest, n_random);
            let mut candidates: Vec<usize> = std::iter::once(q).chain(hard.iter().copied()).chain(semihard.iter().copied()).chain(random).collect();
            candidates.sort_unstable();
            queries.push(PoolQuery { item: q, candidates, hard, semihard });
        }
        Ok(Self { config, queries })
    }
}

/// Unit-length copy of each row; zero rows stay zero.
pub fn l2_normalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                r.iter().map(|x| x / n).collect()
            } else {
                r.clone()
            }
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = dot(a, a).sqrt() * dot(b, b).sqrt();
    if n > 0.0 {
        dot(a, b) / n
    } else {
        0.0
    }
}

/// 1-based rank of `true_index` by descending similarity; earlier indices win ties.
pub fn rank_of(similarities: &[f64], true_index: usize) -> usize {
    let s = similarities[true_index];
    1 + similarities
        .iter()
        .enumerate()
        .filter(|&(i, &x)| i != true_index && (x > s || (x == s && i < true_index)))
        .count()
}

pub fn recall_at_k(similarities: &[f64], true_index: usize, k: usize) -> Result<u8> {
    if k == 0 || k > similarities.len() {
        return Err(Error::Invalid(format!("k = {k} outside 1..={}", similarities.len())));
    }
    Ok(u8::from(rank_of(similarities, true_index) <= k))
}

pub fn mrr(similarities: &[f64], true_index: usize) -> f64 {
    1.0 / rank_of(similarities, true_index) as f64
}

/// `S = min(R@10 a->m, R@10 m->a)`.
pub fn s_metric(r10_am: f64, r10_ma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r10_am) || !(0.0..=1.0).contains(&r10_ma) {
        return Err(Error::Invalid(format!("recalls must lie in [0, 1]: {r10_am}, {r10_ma}")));
    }
    Ok(r10_am.min(r10_ma))
}

/// Per-direction aggregates over all queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub r1: f64,
    pub r10: f64,
    pub mrr: f64,
    pub hardneg: f64,
}

/// Similarities of one query against its candidates, query side `q`, candidate side `c`.
fn query_sims(q: &[Vec<f64>], c: &[Vec<f64>], pq: &PoolQuery) -> (Vec<f64>, usize) {
    let sims: Vec<f64> = pq.candidates.iter().map(|&i| dot(&q[pq.item], &c[i])).collect();
    let t = pq.candidates.iter().position(|&i| i == pq.item).expect("query is among its candidates");
    (sims, t)
}

/// True match strictly above every hard negative.
fn beats_hard(q: &[Vec<f64>], c: &[Vec<f64>], pq: &PoolQuery) -> bool {
    let s = dot(&q[pq.item], &c[pq.item]);
    pq.hard.iter().all(|&h| s > dot(&q[pq.item], &c[h]))
}

fn direction(pool: &EvalPool, q: &[Vec<f64>], c: &[Vec<f64>]) -> Result<DirectionMetrics> {
    let mut m = DirectionMetrics::default();
    let k10 = 10.min(pool.config.size);
    for pq in &pool.queries {
        let (sims, t) = query_sims(q, c, pq);
        m.r1 += recall_at_k(&sims, t, 1)? as f64;
        m.r10 += recall_at_k(&sims, t, k10)? as f64;
        m.mrr += mrr(&sims, t);
        m.hardneg += f64::from(u8::from(beats_hard(q, c, pq)));
    }
    let n = pool.queries.len() as f64;
    m.r1 /= n;
    m.r10 /= n;
    m.mrr /= n;
    m.hardneg /= n;
    Ok(m)
}

/// Fraction of queries whose match beats all of its hard negatives, both
/// directions averaged.
pub fn hard_negative_accuracy(pool: &EvalPool, audio: &[Vec<f64>], midi: &[Vec<f64>]) -> Result<f64> {
    if pool.queries.iter().any(|q| q.hard.is_empty()) {
        return Err(Error::Invalid("pool has no hard negatives".into()));
    }
    let (a, m) = (l2_normalize(audio), l2_normalize(midi));
    let am = direction(pool, &a, &m)?.hardneg;
    let ma = direction(pool, &m, &a)?.hardneg;
    Ok(0.5 * (am + ma))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub s: f64,
    pub r1_am: f64,
    pub r10_am: f64,
    pub mrr_am: f64,
    pub r1_ma: f64,
    pub r10_ma: f64,
    pub mrr_ma: f64,
    pub hardneg: f64,
}

/// Pool parameters as recorded in a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSummary {
    pub size: usize,
    pub n_queries: usize,
    pub n_hard: usize,
    pub n_semihard: usize,
    pub seed: u64,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalReport {
    pub schema_version: u32,
    pub arm: String,
    pub seed: u64,
    pub config_hash: String,
    pub pool: PoolSummary,
    pub metrics: Metrics,
}

/// All retrieval metrics of embeddings on a pool; rows are cosine-normalized.
pub fn evaluate(pool: &EvalPool, audio: &[Vec<f64>], midi: &[Vec<f64>]) -> Result<Metrics> {
    if audio.len() != midi.len() {
        return Err(Error::Shape(format!("{} audio vs {} MIDI embeddings", audio.len(), midi.len())));
    }
    if let Some(bad) = pool.queries.iter().flat_map(|q| &q.candidates).find(|&&i| i >= audio.len()) {
        return Err(Error::Shape(format!("pool references item {bad} of {}", audio.len())));
    }
    let (a, m) = (l2_normalize(audio), l2_normalize(midi));
    let am = direction(pool, &a, &m)?;
    let ma = direction(pool, &m, &a)?;
    Ok(Metrics {
        s: s_metric(am.r10, ma.r10)?,
        r1_am: am.r1,
        r10_am: am.r10,
        mrr_am: am.mrr,
        r1_ma: ma.r1,
        r10_ma: ma.r10,
        mrr_ma: ma.mrr,
        hardneg: 0.5 * (am.hardneg + ma.hardneg),
    })
}

/// Report for one checkpoint's embeddings.
pub fn scoreboard(
    arm: &str,
    config_hash: &str,
    seed: u64,
    pool: &EvalPool,
    audio: &[Vec<f64>],
    midi: &[Vec<f64>],
) -> Result<RetrievalReport> {
    let c = pool.config;
    Ok(RetrievalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        arm: arm.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        pool: PoolSummary { size: c.size, n_queries: c.n_queries, n_hard: c.n_hard, n_semihard: c.n_semihard, seed: c.seed },
        metrics: evaluate(pool, audio, midi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(pieces: usize, segs: usize, composers: usize) -> Vec<ItemMeta> {
        (0..pieces)
            .flat_map(|p| (0..segs).map(move |s| ItemMeta { piece_id: p, composer_id: p % composers, segment_index: s }))
            .collect()
    }

    #[test]
    fn s_metric_examples() {
        assert_eq!(s_metric(0.748, 0.734).unwrap(), 0.734);
        assert_eq!(s_metric(0.844, 0.838).unwrap(), 0.838);
        assert_eq!(s_metric(0.5, 0.5).unwrap(), 0.5);
        assert!(s_metric(1.2, 0.5).is_err());
    }

    #[test]
    fn rank_examples() {
        let sims = [0.1, 0.9, 0.3, 0.2];
        assert_eq!(recall_at_k(&sims, 1, 1).unwrap(), 1);
        assert_eq!(mrr(&sims, 1), 1.0);
        assert_eq!(mrr(&sims, 0), 0.25);
        let mut v = vec![0.0; 256];
        for (i, x) in v.iter_mut().enumerate() {
            *x = -(i as f64);
        }
        assert_eq!(rank_of(&v, 10), 11);
        assert_eq!(recall_at_k(&v, 10, 10).unwrap(), 0);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 1), 2);
    }

    #[test]
    fn pools_follow_the_quotas() {
        let items = meta(12, 10, 3);
        let pool = EvalPool::build(&items, PoolConfig::toy()).unwrap();
        assert_eq!(pool.queries.len(), 64);
        for q in &pool.queries {
            assert_eq!(q.candidates.len(), 32);
            assert!(q.candidates.windows(2).all(|w| w[0] < w[1]));
            assert!(q.candidates.contains(&q.item));
            let me = items[q.item];
            assert_eq!(q.hard.len(), 8);
            assert_eq!(q.semihard.len(), 4);
            for &h in &q.hard {
                assert!(items[h].piece_id == me.piece_id && items[h].segment_index != me.segment_index);
            }
            for &s in &q.semihard {
                assert!(items[s].composer_id == me.composer_id && items[s].piece_id != me.piece_id);
            }
        }
        assert_eq!(pool, EvalPool::build(&items, PoolConfig::toy()).unwrap());
        assert_ne!(pool, EvalPool::build(&items, PoolConfig::toy().with_seed(7)).unwrap());
    }

    #[test]
    fn deficient_quotas_name_the_category() {
        let items = meta(12, 5, 3);
        let err = EvalPool::build(&items, PoolConfig::toy()).unwrap_err().to_string();
        assert!(err.contains("hard negatives deficient"), "{err}");
        let items = meta(12, 10, 12);
        let err = EvalPool::build(&items, PoolConfig::toy()).unwrap_err().to_string();
        assert!(err.contains("semi-hard"), "{err}");
        let items = meta(3, 10, 3);
        let err = EvalPool::build(&items, PoolConfig::full()).unwrap_err().to_string();
        assert!(err.contains("cannot fill"), "{err}");
        PoolConfig::full().validate().unwrap();
    }
}
