//! Lossless pattern encodings and exact point-probability reconstruction.
//!
//! For every distinct logged query `q` the encoding stores the marginal of
//! every superset of `q`. That is enough to recover `p(Q = q)` by repeated
//! differencing over the features absent from `q`:
//!
//! ```text
//! p(Q = q) = Σ_{s ⊆ ¬q} (-1)^{|s|} p(Q ⊇ q ∪ s)
//! ```

use std::collections::HashSet;

use crate::encoding::Encoding;
use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::pattern::Pattern;

pub const DEFAULT_LOSSLESS_CAP: usize = 16;

/// Supersets of every logged query, each mapped to its empirical marginal.
pub fn lossless_encoding(log: &Log, cap: usize) -> Result<Encoding> {
    let n = log.width();
    if n > cap || n > 63 {
        return Err(LogrError::TooManyFeatures { n, cap: cap.min(63) });
    }
    let rows: Vec<(u64, u64)> = log
        .rows()
        .iter()
        .map(|(q, m)| (q.to_mask().expect("n <= 63"), *m))
        .collect();
    let total = log.total() as f64;
    let full = (1u64 << n) - 1;

    let mut seen: HashSet<u64> = HashSet::new();
    let mut enc = Encoding::new(n);
    for &(q, _) in &rows {
        for extra in subsets(full & !q) {
            let b = q | extra;
            if !seen.insert(b) {
                continue;
            }
            let support: u64 = rows
                .iter()
                .filter(|(r, _)| r & b == b)
                .map(|(_, m)| m)
                .sum();
            enc.insert(Pattern::from_mask(n, b), support as f64 / total)?;
        }
    }
    Ok(enc)
}

/// Exact `p(Q = q)` from a lossless encoding.
///
/// The domain of a lossless encoding is closed under supersets and contains
/// every logged vector, so a query outside the domain was never logged and
/// has probability 0.
pub fn reconstruct_probability(enc: &Encoding, q: &Pattern) -> Result<f64> {
    let n = enc.width();
    if q.width() != n {
        return Err(LogrError::WidthMismatch {
            expected: n,
            actual: q.width(),
        });
    }
    if n > 63 {
        return Err(LogrError::TooManyFeatures { n, cap: 63 });
    }
    if !enc.contains_pattern(q) {
        return Ok(0.0);
    }
    let qm = q.to_mask().expect("n <= 63");
    let free: Vec<u64> = (0..n as u64)
        .map(|i| 1u64 << i)
        .filter(|bit| qm & bit == 0)
        .collect();

    // values[s] = marginal of q ∪ (free bits selected by s)
    let mut values = Vec::with_capacity(1 << free.len());
    for s in 0..(1u64 << free.len()) {
        let mut b = qm;
        for (j, bit) in free.iter().enumerate() {
            if s & (1 << j) != 0 {
                b |= bit;
            }
        }
        let pattern = Pattern::from_mask(n, b);
        let m = enc
            .get(&pattern)
            .ok_or_else(|| LogrError::MissingPattern(pattern.ids()))?;
        values.push(m);
    }
    // p_{k-1}(.., b_k omitted) = p_k(.., 0) - p_k(.., 1), one free feature at a time
    for j in 0..free.len() {
        let bit = 1usize << j;
        for s in 0..values.len() {
            if s & bit == 0 {
                values[s] -= values[s | bit];
            }
        }
    }
    Ok(values[0])
}

fn subsets(mask: u64) -> impl Iterator<Item = u64> {
    // enumerates every submask of `mask`, including 0 and `mask`
    let mut next = Some(mask);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 { None } else { Some((cur - 1) & mask) };
        Some(cur)
    })
}
