//! Exhaustive retrieval metrics: full sorts and pairwise comparisons over
//! every candidate, no shared ranking code.

use xmodal_core::retrieval::{EvalPool, Metrics, PoolConfig, PoolQuery};
use xmodal_core::rng::{below, normal, permutation, rng_from_seed, XRng};

fn unit(r: &[f64]) -> Vec<f64> {
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        r.iter().map(|x| x / n).collect()
    } else {
        r.to_vec()
    }
}

fn sim(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 1-based position of the match after sorting candidates by descending
/// similarity, candidate order breaking ties.
fn sorted_rank(q: &[Vec<f64>], c: &[Vec<f64>], pq: &PoolQuery) -> usize {
    let mut order: Vec<(f64, usize)> = pq.candidates.iter().map(|&i| (sim(&q[pq.item], &c[i]), i)).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite similarities").then(x.1.cmp(&y.1)));
    1 + order.iter().position(|&(_, i)| i == pq.item).unwrap()
}

struct Dir {
    r1: f64,
    r10: f64,
    mrr: f64,
    hard: f64,
}

fn direction(pool: &EvalPool, q: &[Vec<f64>], c: &[Vec<f64>]) -> Dir {
    let k = 10.min(pool.config.size);
    let mut d = Dir { r1: 0.0, r10: 0.0, mrr: 0.0, hard: 0.0 };
    for pq in &pool.queries {
        let rank = sorted_rank(q, c, pq);
        d.r1 += if rank <= 1 { 1.0 } else { 0.0 };
        d.r10 += if rank <= k { 1.0 } else { 0.0 };
        d.mrr += 1.0 / rank as f64;
        let s = sim(&q[pq.item], &c[pq.item]);
        let wins = pq.hard.iter().filter(|&&h| s > sim(&q[pq.item], &c[h])).count();
        d.hard += if wins == pq.hard.len() { 1.0 } else { 0.0 };
    }
    let n = pool.queries.len() as f64;
    Dir { r1: d.r1 / n, r10: d.r10 / n, mrr: d.mrr / n, hard: d.hard / n }
}

pub fn oracle_metrics(pool: &EvalPool, audio: &[Vec<f64>], midi: &[Vec<f64>]) -> Metrics {
    let a: Vec<Vec<f64>> = audio.iter().map(|r| unit(r)).collect();
    let m: Vec<Vec<f64>> = midi.iter().map(|r| unit(r)).collect();
    let am = direction(pool, &a, &m);
    let ma = direction(pool, &m, &a);
    Metrics {
        s: if am.r10 < ma.r10 { am.r10 } else { ma.r10 },
        r1_am: am.r1,
        r10_am: am.r10,
        mrr_am: am.mrr,
        r1_ma: ma.r1,
        r10_ma: ma.r10,
        mrr_ma: ma.mrr,
        hardneg: 0.5 * (am.hard + ma.hard),
    }
}

/// Random pool of `size <= n_items` candidates per query plus embeddings;
/// coarse quantization makes similarity ties common.
pub fn random_case(seed: u64, n_items: usize, size: usize, dim: usize) -> (EvalPool, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rng = &mut rng_from_seed(seed);
    let quant = below(rng, 2) == 0;
    let emb = |rng: &mut XRng| -> Vec<Vec<f64>> {
        (0..n_items)
            .map(|_| (0..dim).map(|_| if quant { (2.0 * normal(rng)).round() } else { normal(rng) }).collect())
            .collect()
    };
    let audio = emb(rng);
    let midi = emb(rng);
    let n_hard = 1 + below(rng, 3);
    let n_queries = 1 + below(rng, 12);
    let queries = (0..n_queries)
        .map(|_| {
            let item = below(rng, n_items);
            let others: Vec<usize> = permutation(rng, n_items).into_iter().filter(|&i| i != item).take(size - 1).collect();
            let hard = others[..n_hard].to_vec();
            let mut candidates: Vec<usize> = std::iter::once(item).chain(others).collect();
            candidates.sort_unstable();
            PoolQuery { item, candidates, hard, semihard: Vec::new() }
        })
        .collect();
    let config = PoolConfig { size, n_queries, n_hard, n_semihard: 0, seed };
    (EvalPool { config, queries }, audio, midi)
}
