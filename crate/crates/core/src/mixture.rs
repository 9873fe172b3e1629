//! Naive mixture encodings: one naive encoding per cluster of the log.

use crate::cluster::Partition;
use crate::encoding::{naive_encoding, reproduction_error_naive, Encoding};
use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::pattern::Pattern;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// `size / total`.
    pub weight: f64,
    /// Number of logged queries (with multiplicity) in the cluster.
    pub size: u64,
    pub encoding: Encoding,
    /// Reproduction error of `encoding` on the cluster's sub-log, nats.
    pub error: f64,
    /// Distinct-row indices of the source log, ascending.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEncoding {
    pub total: u64,
    /// Labels of the vocabulary the patterns index into; may be empty when
    /// the mixture was built from a bare [`Log`].
    pub features: Vec<String>,
    /// Descending weight, ties by first row.
    pub clusters: Vec<Cluster>,
}

impl MixtureEncoding {
    pub fn width(&self) -> usize {
        self.clusters.first().map_or(self.features.len(), |c| c.encoding.width())
    }

    pub fn with_features(mut self, features: Vec<String>) -> Self {
        self.features = features;
        self
    }

    /// Sub-log of cluster `i` drawn from `log`.
    pub fn cluster_log(&self, log: &Log, i: usize) -> Result<Log> {
        let rows = &self.clusters[i].rows;
        if rows.iter().any(|&r| r >= log.distinct()) {
            return Err(LogrError::VocabularyMismatch(format!(
                "cluster {i} refers to rows beyond the log's {} distinct rows",
                log.distinct()
            )));
        }
        log.subset(rows)
    }
}

/// Per-cluster naive encodings and closed-form errors.
pub fn build_mixture(log: &Log, part: &Partition) -> Result<MixtureEncoding> {
    if part.assignments().len() != log.distinct() {
        return Err(LogrError::InvalidArgument(format!(
            "partition covers {} rows, log has {}",
            part.assignments().len(),
            log.distinct()
        )));
    }
    let total = log.total();
    let mut clusters = Vec::with_capacity(part.k());
    for rows in part.members() {
        let sub = log.subset(&rows)?;
        let encoding = naive_encoding(&sub);
        clusters.push(Cluster {
            weight: sub.total() as f64 / total as f64,
            size: sub.total(),
            error: reproduction_error_naive(&sub),
            encoding,
            rows,
        });
    }
    clusters.sort_by(|a, b| b.size.cmp(&a.size).then(a.rows[0].cmp(&b.rows[0])));
    Ok(MixtureEncoding {
        total,
        features: Vec::new(),
        clusters,
    })
}

/// `Σ_i w_i e(S_i)`.
pub fn generalized_error(m: &MixtureEncoding) -> f64 {
    m.clusters.iter().map(|c| c.weight * c.error).sum()
}

/// `Σ_i |S_i|`.
pub fn total_verbosity(m: &MixtureEncoding) -> usize {
    m.clusters.iter().map(|c| c.encoding.verbosity()).sum()
}

/// Expected number of logged queries containing `b`, per cluster.
pub fn estimate_count_by_cluster(m: &MixtureEncoding, b: &Pattern) -> Result<Vec<f64>> {
    m.clusters
        .iter()
        .map(|c| {
            if b.width() != c.encoding.width() {
                return Err(LogrError::WidthMismatch {
                    expected: c.encoding.width(),
                    actual: b.width(),
                });
            }
            let mut est = c.size as f64;
            for f in b.ones() {
                est *= c
                    .encoding
                    .get(&Pattern::from_ids(b.width(), [f]))
                    .unwrap_or(0.0);
            }
            Ok(est)
        })
        .collect()
}

/// `Σ_i |L_i| Π_{f ∈ b} E_i[f]`.
pub fn estimate_count(m: &MixtureEncoding, b: &Pattern) -> Result<f64> {
    Ok(estimate_count_by_cluster(m, b)?.into_iter().sum())
}
