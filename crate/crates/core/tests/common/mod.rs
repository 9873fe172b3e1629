#![allow(dead_code)]

use logr::sql::{build_log, BuiltLog, Feature, RawLogFile};
use logr::{Log, Pattern};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOY_SQL: &str = "\
SELECT id FROM Messages WHERE status = ?
SELECT id FROM Messages
SELECT sms_type FROM Messages
";

pub fn toy_built() -> BuiltLog {
    build_log(&RawLogFile::parse(TOY_SQL).unwrap()).unwrap()
}

/// Column id of a `CATEGORY:text` feature in a built log.
pub fn fid(built: &BuiltLog, spec: &str) -> usize {
    let f: Feature = spec.parse().unwrap();
    built.vocabulary.id(&f).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bag of up to `max_rows` queries over `n` features.
pub fn random_log(rng: &mut ChaCha8Rng, n: usize, max_rows: usize) -> Log {
    let rows = rng.gen_range(1..=max_rows);
    let density = rng.gen_range(0.2..0.8);
    let queries: Vec<(Pattern, u64)> = (0..rows)
        .map(|_| {
            let ids: Vec<usize> = (0..n).filter(|_| rng.gen_bool(density)).collect();
            (Pattern::from_ids(n, ids), rng.gen_range(1..=3))
        })
        .collect();
    Log::from_rows(n, queries).unwrap()
}

/// Queries drawn from a few random templates with per-feature noise, so
/// features are correlated.
pub fn templated_log(rng: &mut ChaCha8Rng, n: usize, templates: usize, queries: usize) -> Log {
    let shapes: Vec<Vec<bool>> = (0..templates)
        .map(|_| (0..n).map(|_| rng.gen_bool(0.5)).collect())
        .collect();
    let rows: Vec<(Pattern, u64)> = (0..queries)
        .map(|_| {
            let t = &shapes[rng.gen_range(0..templates)];
            let ids: Vec<usize> = (0..n).filter(|&i| t[i] ^ rng.gen_bool(0.15)).collect();
            (Pattern::from_ids(n, ids), 1)
        })
        .collect();
    Log::from_rows(n, rows).unwrap()
}

pub fn random_pattern(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Pattern {
    Pattern::from_ids(n, (0..n).filter(|_| rng.gen_bool(density)).collect::<Vec<_>>())
}

/// Two disjoint 8-feature blocks of 500 queries each. Every block mixes two
/// templates, and each template carries one optional feature present on a
/// random half of its queries.
pub fn mixed_workload(seed: u64) -> Log {
    let mut rng = rng(seed);
    let templates: [(&[usize], usize); 4] = [
        (&[0, 1, 2], 3),
        (&[0, 4, 5, 6], 7),
        (&[8, 9, 10], 11),
        (&[8, 12, 13, 14], 15),
    ];
    let mut rows = Vec::new();
    for (fixed, optional) in templates {
        for _ in 0..250 {
            let mut ids = fixed.to_vec();
            if rng.gen_bool(0.5) {
                ids.push(optional);
            }
            rows.push((Pattern::from_ids(16, ids), 1));
        }
    }
    Log::from_rows(16, rows).unwrap()
}

/// All 2^n queries over `n` features.
pub fn all_queries(n: usize) -> impl Iterator<Item = Pattern> {
    (0..1u64 << n).map(move |m| Pattern::from_mask(n, m))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
