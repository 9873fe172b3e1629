//! Pattern encodings and the closed-form results for naive encodings.

use std::collections::BTreeMap;

use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::pattern::Pattern;

/// Partial map from patterns to containment marginals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Encoding {
    n: usize,
    entries: BTreeMap<Pattern, f64>,
}

impl Encoding {
    pub fn new(n: usize) -> Self {
        Encoding {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.n
    }

    /// Adds or replaces the marginal for `pattern`.
    pub fn insert(&mut self, pattern: Pattern, marginal: f64) -> Result<()> {
        if pattern.width() != self.n {
            return Err(LogrError::WidthMismatch {
                expected: self.n,
                actual: pattern.width(),
            });
        }
        if !(0.0..=1.0).contains(&marginal) {
            return Err(LogrError::InvalidArgument(format!(
                "marginal {marginal} outside [0, 1]"
            )));
        }
        self.entries.insert(pattern, marginal);
        Ok(())
    }

    pub fn get(&self, pattern: &Pattern) -> Option<f64> {
        self.entries.get(pattern).copied()
    }

    pub fn contains_pattern(&self, pattern: &Pattern) -> bool {
        self.entries.contains_key(pattern)
    }

    /// Number of mapped patterns, |E|.
    pub fn verbosity(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in canonical pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (&Pattern, f64)> {
        self.entries.iter().map(|(p, m)| (p, *m))
    }

    pub fn patterns(&self) -> impl Iterator<Item = &Pattern> {
        self.entries.keys()
    }

    /// Naive when every pattern has exactly one feature.
    pub fn is_naive(&self) -> bool {
        self.entries.keys().all(|p| p.count() == 1)
    }

    /// Per-feature marginals of a naive encoding; absent features are 0.
    pub fn feature_marginals(&self) -> Result<Vec<f64>> {
        let mut m = vec![0.0; self.n];
        for (p, v) in &self.entries {
            let mut ones = p.ones();
            match (ones.next(), ones.next()) {
                (Some(i), None) => m[i] = *v,
                _ => return Err(LogrError::NotNaive(p.count())),
            }
        }
        Ok(m)
    }

    /// Copy of `self` with `pattern` set to its marginal in `log`.
    pub fn extended(&self, log: &Log, pattern: &Pattern) -> Result<Encoding> {
        let mut out = self.clone();
        out.insert(pattern.clone(), log.marginal(pattern)?)?;
        Ok(out)
    }

    /// Copy with a zero unit pattern for every feature that has no unit
    /// pattern. A naive encoding leaves zero-marginal features implicit;
    /// the general solver reads a missing pattern as unconstrained, so this
    /// makes the two readings agree.
    pub fn with_explicit_zeros(&self) -> Encoding {
        let mut out = self.clone();
        for i in 0..self.n {
            out.entries.entry(Pattern::from_ids(self.n, [i])).or_insert(0.0);
        }
        out
    }
}

/// One single-feature pattern per feature with non-zero marginal.
pub fn naive_encoding(log: &Log) -> Encoding {
    let n = log.width();
    let total = log.total() as f64;
    let mut enc = Encoding::new(n);
    for (i, count) in log.feature_supports().into_iter().enumerate() {
        if count > 0 {
            enc.entries
                .insert(Pattern::from_ids(n, [i]), count as f64 / total);
        }
    }
    enc
}

/// Point probability of `q` under the independence model of a naive encoding.
pub fn naive_maxent_prob(enc: &Encoding, q: &Pattern) -> Result<f64> {
    if q.width() != enc.width() {
        return Err(LogrError::WidthMismatch {
            expected: enc.width(),
            actual: q.width(),
        });
    }
    let marginals = enc.feature_marginals()?;
    Ok(marginals
        .iter()
        .enumerate()
        .map(|(i, &m)| if q.get(i) { m } else { 1.0 - m })
        .product())
}

/// Binary entropy in nats with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Entropy of the independence model: Σ_i h(m_i).
pub fn naive_maxent_entropy(enc: &Encoding) -> Result<f64> {
    Ok(enc.feature_marginals()?.into_iter().map(binary_entropy).sum())
}

pub fn empirical_entropy(log: &Log) -> f64 {
    log.entropy()
}

/// Reproduction error of the naive encoding of `log`, in nats.
pub fn reproduction_error_naive(log: &Log) -> f64 {
    let enc = naive_encoding(log);
    let h = naive_maxent_entropy(&enc).expect("naive encoding is naive");
    // clamp tiny negative rounding
    (h - log.entropy()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Toy log in the column order id, sms_type, Messages, status.
    pub(crate) fn toy_log() -> Log {
        Log::from_id_rows(4, [(vec![0, 2, 3], 1), (vec![0, 2], 1), (vec![1, 2], 1)]).unwrap()
    }

    fn one(i: usize) -> Pattern {
        Pattern::from_ids(4, [i])
    }

    #[test]
    fn marginals_of_toy_log() {
        let log = toy_log();
        assert_eq!(log.marginal(&one(0)).unwrap(), 2.0 / 3.0);
        assert_eq!(log.marginal(&Pattern::empty(4)).unwrap(), 1.0);
    }

    #[test]
    fn naive_encoding_of_toy_log() {
        let enc = naive_encoding(&toy_log());
        assert_eq!(enc.verbosity(), 4);
        assert_eq!(enc.feature_marginals().unwrap(), vec![2.0 / 3.0, 1.0 / 3.0, 1.0, 1.0 / 3.0]);
    }

    #[test]
    fn naive_encoding_omits_zero_features() {
        let part1 = Log::from_id_rows(4, [(vec![0, 2, 3], 1), (vec![0, 2], 1)]).unwrap();
        let enc = naive_encoding(&part1);
        assert_eq!(enc.verbosity(), 3);
        assert_eq!(enc.get(&one(1)), None);
        assert_eq!(enc.get(&one(3)), Some(0.5));
    }

    #[test]
    fn closed_form_point_probabilities() {
        let enc = naive_encoding(&toy_log());
        let q1 = Pattern::from_ids(4, [0, 2, 3]);
        let spurious = Pattern::from_ids(4, [1, 2, 3]);
        assert!((naive_maxent_prob(&enc, &q1).unwrap() - 4.0 / 27.0).abs() < 1e-12);
        assert!((naive_maxent_prob(&enc, &spurious).unwrap() - 1.0 / 27.0).abs() < 1e-12);

        let det = naive_encoding(&Log::from_id_rows(3, [(vec![0, 2], 4)]).unwrap());
        assert_eq!(naive_maxent_prob(&det, &Pattern::from_ids(3, [0, 2])).unwrap(), 1.0);
    }

    #[test]
    fn not_naive_is_rejected() {
        let mut enc = Encoding::new(2);
        enc.insert(Pattern::from_ids(2, [0, 1]), 0.5).unwrap();
        assert_eq!(naive_maxent_prob(&enc, &Pattern::empty(2)), Err(LogrError::NotNaive(2)));
        assert_eq!(naive_maxent_entropy(&enc), Err(LogrError::NotNaive(2)));
    }

    #[test]
    fn entropies() {
        let ln3 = 3f64.ln();
        assert!((empirical_entropy(&toy_log()) - ln3).abs() < 1e-12);
        let h13 = ln3 - (2.0 / 3.0) * 2f64.ln();
        let enc = naive_encoding(&toy_log());
        assert!((naive_maxent_entropy(&enc).unwrap() - 3.0 * h13).abs() < 1e-12);
        assert!((naive_maxent_entropy(&enc).unwrap() - 1.9095).abs() < 1e-4);
        assert!((binary_entropy(0.5) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);

        // probabilities 1/2, 1/4, 1/4
        let ex2 = Log::from_id_rows(6, [(vec![0, 3, 5], 2), (vec![1, 3, 4, 5], 1), (vec![1, 2, 4, 5], 1)])
            .unwrap();
        assert!((empirical_entropy(&ex2) - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(ex2.marginal(&Pattern::from_ids(6, [3])).unwrap(), 0.75);
    }

    #[test]
    fn naive_reproduction_error() {
        let e = reproduction_error_naive(&toy_log());
        assert!((e - 0.8109).abs() < 1e-4, "{e}");
        let part2 = Log::from_id_rows(4, [(vec![1, 2], 1)]).unwrap();
        assert_eq!(reproduction_error_naive(&part2), 0.0);
        let part1 = Log::from_id_rows(4, [(vec![0, 2, 3], 1), (vec![0, 2], 1)]).unwrap();
        assert!(reproduction_error_naive(&part1).abs() < 1e-12);
    }

    #[test]
    fn independence_model_sums_to_one() {
        let enc = naive_encoding(&toy_log());
        let total: f64 = (0..16u64)
            .map(|m| naive_maxent_prob(&enc, &Pattern::from_mask(4, m)).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
