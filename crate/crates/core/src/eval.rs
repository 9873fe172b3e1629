//! Scores for refining naive encodings and for judging how well a mixture
//! reproduces statistics of the log it summarizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deviation::DeviationEstimate;
use crate::encoding::{binary_entropy, Encoding};
use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::mixture::{generalized_error, total_verbosity, MixtureEncoding};
use crate::pattern::Pattern;

/// Features outside this marginal range are not used to build candidates.
pub const CANDIDATE_MARGINAL_RANGE: (f64, f64) = (0.01, 0.99);
/// Candidates whose |corr_rank| falls below this are treated as independent.
pub const SCORE_THRESHOLD: f64 = 1e-9;
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternScore {
    pub pattern: Pattern,
    pub true_marginal: f64,
    pub est_marginal: f64,
    pub wc: f64,
    pub corr_rank: f64,
}

/// Independence estimate of `p(Q ⊇ b)` under a naive encoding.
pub fn naive_marginal_estimate(enc: &Encoding, b: &Pattern) -> Result<f64> {
    if b.width() != enc.width() {
        return Err(LogrError::WidthMismatch {
            expected: enc.width(),
            actual: b.width(),
        });
    }
    let m = enc.feature_marginals()?;
    Ok(b.ones().map(|i| m[i]).product())
}

fn score(log: &Log, enc: &Encoding, b: &Pattern) -> Result<PatternScore> {
    let true_marginal = log.marginal(b)?;
    let est_marginal = naive_marginal_estimate(enc, b)?;
    if true_marginal <= 0.0 || est_marginal <= 0.0 {
        return Err(LogrError::UndefinedScore {
            true_marginal,
            estimate: est_marginal,
        });
    }
    let wc = true_marginal.ln() - est_marginal.ln();
    Ok(PatternScore {
        pattern: b.clone(),
        true_marginal,
        est_marginal,
        wc,
        corr_rank: true_marginal * wc,
    })
}

/// Log-gap between the true marginal of `b` and its independence estimate.
pub fn wc_score(log: &Log, enc: &Encoding, b: &Pattern) -> Result<f64> {
    score(log, enc, b).map(|s| s.wc)
}

/// `p(Q ⊇ b) · WC(b)`.
pub fn corr_rank(log: &Log, enc: &Encoding, b: &Pattern) -> Result<f64> {
    score(log, enc, b).map(|s| s.corr_rank)
}

/// Multi-feature patterns ranked by descending corr_rank.
///
/// Only features whose marginal lies in [`CANDIDATE_MARGINAL_RANGE`] take
/// part, only patterns that occur in the log are scored, and scores within
/// [`SCORE_THRESHOLD`] of zero are dropped.
pub fn rank_candidates(
    log: &Log,
    enc: &Encoding,
    max_size: usize,
    top: usize,
) -> Result<Vec<PatternScore>> {
    if top == 0 || max_size < 2 {
        return Ok(Vec::new());
    }
    let marginals = enc.feature_marginals()?;
    let (lo, hi) = CANDIDATE_MARGINAL_RANGE;
    let eligible: Vec<usize> = (0..enc.width())
        .filter(|&i| marginals[i] >= lo && marginals[i] <= hi)
        .collect();

    let mut scored = Vec::new();
    let mut stack: Vec<(Pattern, usize)> = eligible
        .iter()
        .enumerate()
        .map(|(pos, &f)| (Pattern::from_ids(enc.width(), [f]), pos + 1))
        .collect();
    // depth-first over growing patterns; support is antitone so an absent
    // pattern has no present extension
    while let Some((pattern, next)) = stack.pop() {
        for (pos, &f) in eligible.iter().enumerate().skip(next) {
            let mut grown = pattern.clone();
            grown.set(f);
            if log.support(&grown)? == 0 {
                continue;
            }
            let s = score(log, enc, &grown)?;
            if s.corr_rank.abs() > SCORE_THRESHOLD {
                scored.push(s);
            }
            if grown.count() < max_size {
                stack.push((grown, pos + 1));
            }
        }
    }
    scored.sort_by(|a, b| {
        b.corr_rank
            .total_cmp(&a.corr_rank)
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    scored.truncate(top);
    Ok(scored)
}

/// Mixes a base seed with a stream id so each cluster samples independently.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-feature coin flips with the encoded marginals.
pub fn synthesize_patterns(enc: &Encoding, count: usize, seed: u64) -> Result<Vec<Pattern>> {
    let marginals = enc.feature_marginals()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut p = Pattern::empty(enc.width());
            for (i, &m) in marginals.iter().enumerate() {
                if m > 0.0 && rng.gen::<f64>() < m {
                    p.set(i);
                }
            }
            p
        })
        .collect())
}

/// Fraction of synthesized patterns that never occur in the cluster.
fn cluster_synthesis_error(sub: &Log, enc: &Encoding, count: usize, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(LogrError::InvalidArgument("sample count must be at least 1".into()));
    }
    let samples = synthesize_patterns(enc, count, seed)?;
    let mut present = 0usize;
    for s in &samples {
        if sub.support(s)? > 0 {
            present += 1;
        }
    }
    Ok(1.0 - present as f64 / count as f64)
}

/// Summed relative deviation of the independence estimate over the
/// distinct queries of a cluster.
fn cluster_marginal_deviation(sub: &Log, enc: &Encoding) -> Result<f64> {
    let mut total = 0.0;
    for (q, _) in sub.rows() {
        let truth = sub.marginal(q)?;
        let est = naive_marginal_estimate(enc, q)?;
        total += (est - truth).abs() / truth;
    }
    Ok(total)
}

/// Weighted synthesis error over clusters.
pub fn synthesis_error(log: &Log, m: &MixtureEncoding, count: usize, seed: u64) -> Result<f64> {
    let mut acc = 0.0;
    for (i, c) in m.clusters.iter().enumerate() {
        let sub = m.cluster_log(log, i)?;
        acc += c.weight * cluster_synthesis_error(&sub, &c.encoding, count, derive_seed(seed, i as u64))?;
    }
    Ok(acc)
}

/// Weighted sum of per-cluster marginal deviations.
pub fn marginal_deviation(log: &Log, m: &MixtureEncoding) -> Result<f64> {
    let mut acc = 0.0;
    for (i, c) in m.clusters.iter().enumerate() {
        let sub = m.cluster_log(log, i)?;
        acc += c.weight * cluster_marginal_deviation(&sub, &c.encoding)?;
    }
    Ok(acc)
}

/// Binary cross-entropy of predicting a class feature by its base rate:
/// `-|D| (u ln u + (1-u) ln(1-u))`.
pub fn laserlight_error_naive(size: u64, positive_fraction: f64) -> Result<f64> {
    if size == 0 || !(0.0..=1.0).contains(&positive_fraction) {
        return Err(LogrError::InvalidArgument(format!(
            "need size >= 1 and u in [0, 1], got size {size}, u {positive_fraction}"
        )));
    }
    Ok(size as f64 * binary_entropy(positive_fraction))
}

/// `-|D| Σ_f h(m_f) + ½ |E| ln |D|`.
pub fn mtv_error_naive(size: u64, enc: &Encoding) -> Result<f64> {
    if size == 0 {
        return Err(LogrError::InvalidArgument("size must be at least 1".into()));
    }
    let h: f64 = enc.feature_marginals()?.into_iter().map(binary_entropy).sum();
    let d = size as f64;
    Ok(-d * h + 0.5 * enc.verbosity() as f64 * d.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltErrors {
    pub laserlight: f64,
    pub mtv: f64,
}

/// Cluster marginal of a designated binary feature (0 when absent).
pub fn binary_feature_fractions(m: &MixtureEncoding, feature: usize) -> Result<Vec<f64>> {
    let n = m.width();
    if feature >= n {
        return Err(LogrError::InvalidArgument(format!(
            "binary feature {feature} out of range for width {n}"
        )));
    }
    let p = Pattern::from_ids(n, [feature]);
    Ok(m.clusters
        .iter()
        .map(|c| c.encoding.get(&p).unwrap_or(0.0))
        .collect())
}

/// Weight-averaged Laserlight and MTV scores of a naive mixture.
pub fn mixture_alt_errors(m: &MixtureEncoding, positive_fractions: &[f64]) -> Result<AltErrors> {
    if positive_fractions.len() != m.clusters.len() {
        return Err(LogrError::InvalidArgument(format!(
            "{} positive fractions for {} clusters",
            positive_fractions.len(),
            m.clusters.len()
        )));
    }
    let mut out = AltErrors {
        laserlight: 0.0,
        mtv: 0.0,
    };
    for (c, &u) in m.clusters.iter().zip(positive_fractions) {
        out.laserlight += c.weight * laserlight_error_naive(c.size, u)?;
        out.mtv += c.weight * mtv_error_naive(c.size, &c.encoding)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub weight: f64,
    pub size: u64,
    pub error: f64,
    pub verbosity: usize,
    pub synthesis_error: f64,
    pub marginal_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub generalized_error: f64,
    pub total_verbosity: usize,
    pub synthesis_error: f64,
    pub marginal_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub laserlight_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtv_error: Option<f64>,
    pub clusters: Vec<ClusterReport>,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "generalized_error,total_verbosity,synthesis_error,marginal_deviation,deviation,deviation_se,laserlight_error,mtv_error"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.generalized_error,
            self.total_verbosity,
            self.synthesis_error,
            self.marginal_deviation,
            opt(self.deviation.as_ref().map(|d| d.mean)),
            opt(self.deviation.as_ref().map(|d| d.std_error)),
            opt(self.laserlight_error),
            opt(self.mtv_error),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub seed: u64,
    /// Feature used as the Laserlight class label; `None` skips the
    /// alternative measures.
    pub binary_feature: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            binary_feature: None,
        }
    }
}

/// All mixture-level metrics except sampled Deviation.
pub fn evaluate(log: &Log, m: &MixtureEncoding, opts: &EvalOptions) -> Result<EvalReport> {
    if log.width() != m.width() {
        return Err(LogrError::VocabularyMismatch(format!(
            "log has {} features, encoding has {}",
            log.width(),
            m.width()
        )));
    }
    let covered: usize = m.clusters.iter().map(|c| c.rows.len()).sum();
    let mass: u64 = m.clusters.iter().map(|c| c.size).sum();
    if covered != log.distinct() || mass != log.total() {
        return Err(LogrError::VocabularyMismatch(format!(
            "encoding covers {covered} distinct rows / {mass} queries, log has {} / {}",
            log.distinct(),
            log.total()
        )));
    }
    let mut clusters = Vec::with_capacity(m.clusters.len());
    for (i, c) in m.clusters.iter().enumerate() {
        let sub = m.cluster_log(log, i)?;
        if sub.total() != c.size {
            return Err(LogrError::VocabularyMismatch(format!(
                "cluster {i} has {} queries in the log, {} in the encoding",
                sub.total(),
                c.size
            )));
        }
        clusters.push(ClusterReport {
            weight: c.weight,
            size: c.size,
            error: c.error,
            verbosity: c.encoding.verbosity(),
            synthesis_error: cluster_synthesis_error(
                &sub,
                &c.encoding,
                opts.samples,
                derive_seed(opts.seed, i as u64),
            )?,
            marginal_deviation: cluster_marginal_deviation(&sub, &c.encoding)?,
        });
    }
    let (laserlight_error, mtv_error) = match opts.binary_feature {
        Some(f) => {
            let alt = mixture_alt_errors(m, &binary_feature_fractions(m, f)?)?;
            (Some(alt.laserlight), Some(alt.mtv))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        generalized_error: generalized_error(m),
        total_verbosity: total_verbosity(m),
        synthesis_error: clusters.iter().map(|c| c.weight * c.synthesis_error).sum(),
        marginal_deviation: clusters.iter().map(|c| c.weight * c.marginal_deviation).sum(),
        deviation: None,
        laserlight_error,
        mtv_error,
        clusters,
    })
}
