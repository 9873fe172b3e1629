//! A query log as a bag of feature vectors.

use std::collections::HashMap;

use num_rational::Ratio;

use crate::error::{LogrError, Result};
use crate::pattern::Pattern;

/// Distinct query vectors with multiplicities. Defines the empirical
/// distribution `p(q) = multiplicity(q) / total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Log {
    n: usize,
    rows: Vec<(Pattern, u64)>,
    total: u64,
}

impl Log {
    /// Merges duplicate vectors (summing multiplicities) and keeps rows in
    /// first-seen order.
    pub fn from_rows<I>(n: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Pattern, u64)>,
    {
        let mut index: HashMap<Pattern, usize> = HashMap::new();
        let mut merged: Vec<(Pattern, u64)> = Vec::new();
        for (q, m) in rows {
            if q.width() != n {
                return Err(LogrError::WidthMismatch {
                    expected: n,
                    actual: q.width(),
                });
            }
            if m == 0 {
                return Err(LogrError::InvalidArgument("multiplicity must be positive".into()));
            }
            match index.get(&q) {
                Some(&i) => merged[i].1 += m,
                None => {
                    index.insert(q.clone(), merged.len());
                    merged.push((q, m));
                }
            }
        }
        let total: u64 = merged.iter().map(|(_, m)| m).sum();
        if total == 0 {
            return Err(LogrError::EmptyLog);
        }
        Ok(Log {
            n,
            rows: merged,
            total,
        })
    }

    /// Convenience constructor from `(feature ids, multiplicity)` pairs.
    pub fn from_id_rows<I, J>(n: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (J, u64)>,
        J: IntoIterator<Item = usize>,
    {
        let mut patterns = Vec::new();
        for (ids, m) in rows {
            patterns.push((Pattern::try_from_ids(n, ids)?, m));
        }
        Self::from_rows(n, patterns)
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[(Pattern, u64)] {
        &self.rows
    }

    pub fn distinct(&self) -> usize {
        self.rows.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn multiplicity(&self, q: &Pattern) -> u64 {
        self.rows
            .iter()
            .find(|(row, _)| row == q)
            .map_or(0, |(_, m)| *m)
    }

    pub fn probability(&self, q: &Pattern) -> f64 {
        self.multiplicity(q) as f64 / self.total as f64
    }

    /// Number of logged queries containing `b` (Γ_b).
    pub fn support(&self, b: &Pattern) -> Result<u64> {
        self.check(b)?;
        Ok(self
            .rows
            .iter()
            .filter(|(q, _)| q.contains_unchecked(b))
            .map(|(_, m)| m)
            .sum())
    }

    /// Containment marginal `p(Q ⊇ b)`.
    pub fn marginal(&self, b: &Pattern) -> Result<f64> {
        Ok(self.support(b)? as f64 / self.total as f64)
    }

    /// Containment marginal as an exact fraction.
    pub fn marginal_exact(&self, b: &Pattern) -> Result<Ratio<u64>> {
        Ok(Ratio::new(self.support(b)?, self.total))
    }

    /// Per-feature support counts.
    pub fn feature_supports(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n];
        for (q, m) in &self.rows {
            for i in q.ones() {
                counts[i] += m;
            }
        }
        counts
    }

    /// Sub-log made of the given row indices (same width).
    pub fn subset(&self, rows: &[usize]) -> Result<Log> {
        Log::from_rows(self.n, rows.iter().map(|&i| self.rows[i].clone()))
    }

    /// Entropy of the empirical distribution, in nats.
    pub fn entropy(&self) -> f64 {
        let total = self.total as f64;
        self.rows
            .iter()
            .map(|(_, m)| {
                let p = *m as f64 / total;
                -p * p.ln()
            })
            .sum()
    }

    fn check(&self, b: &Pattern) -> Result<()> {
        if b.width() != self.n {
            return Err(LogrError::WidthMismatch {
                expected: self.n,
                actual: b.width(),
            });
        }
        Ok(())
    }
}
