//! Monte Carlo estimate of Deviation: the expected KL divergence from the
//! log's distribution to a random distribution consistent with an encoding.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::Encoding;
use crate::error::{LogrError, Result};
use crate::eval::derive_seed;
use crate::log::Log;
use crate::maxent::{
    constraint_targets, enumerate_classes, feasible_support, EquivalenceClasses,
    DEFAULT_FEATURE_CAP,
};

pub const MAX_PROJECTION_ROUNDS: usize = 50;
pub const PROJECTION_TOL: f64 = 1e-8;
pub const SMOOTHING_EPSILON: f64 = 1e-12;
const NEWTON_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledDistribution {
    /// Total mass of each class; uniform within a class.
    pub class_probs: Vec<f64>,
    /// Largest violation of any marginal or of normalization.
    pub residual: f64,
    pub rounds: usize,
}

/// Random class masses: independent uniforms, normalized to sum to one.
pub fn two_step_sample(classes: &EquivalenceClasses, seed: u64) -> Result<Vec<f64>> {
    if classes.is_empty() {
        return Err(LogrError::InvalidArgument("no classes to sample over".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<f64> = (0..classes.len()).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        raw.fill(1.0 / classes.len() as f64);
    } else {
        raw.iter_mut().for_each(|p| *p /= total);
    }
    Ok(raw)
}

/// Constraint rows over classes: one per pattern, then normalization.
fn constraint_system(classes: &EquivalenceClasses, targets: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let m = targets.len() + 1;
    let k = classes.len();
    let a = DMatrix::from_fn(m, k, |j, c| {
        if j == targets.len() || classes.in_constraint(c, j) {
            1.0
        } else {
            0.0
        }
    });
    let mut t = targets.to_vec();
    t.push(1.0);
    (a, DVector::from_vec(t))
}

fn residual(a: &DMatrix<f64>, t: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - t).amax()
}

/// Euclidean projection of `raw` onto the distributions meeting `enc`.
///
/// Classes outside the feasible support are fixed at zero. The rest solve
/// `min ||x - raw||` subject to the marginal and normalization equalities
/// and `x >= 0` through the dual: `x = max(0, raw + Aᵀy)`. Each round takes
/// a Newton step on `y` from the normal equations `A_F A_Fᵀ` of the current
/// positive set `F`, with an exact line search along it.
pub fn project_to_constraints(
    raw: &[f64],
    enc: &Encoding,
    classes: &EquivalenceClasses,
) -> Result<SampledDistribution> {
    let targets = constraint_targets(enc, classes)?;
    let support = feasible_support(classes, &targets)?;
    project_with(raw, classes, &targets, &support)
}

fn project_with(
    raw: &[f64],
    classes: &EquivalenceClasses,
    targets: &[f64],
    support: &[bool],
) -> Result<SampledDistribution> {
    let k = classes.len();
    if raw.len() != k {
        return Err(LogrError::InvalidArgument(format!(
            "{} class masses for {k} classes",
            raw.len()
        )));
    }
    let (a, t) = constraint_system(classes, targets);
    let live: Vec<usize> = (0..k).filter(|&c| support[c]).collect();
    let a_live = a.select_columns(&live);
    let r = DVector::from_iterator(live.len(), live.iter().map(|&c| raw[c]));

    let primal = |y: &DVector<f64>| (&r + a_live.transpose() * y).map(|v| v.max(0.0));

    let mut y = DVector::zeros(t.len());
    let mut x = primal(&y);
    let mut gap = &t - &a_live * &x;
    let mut rounds = 0;
    while gap.amax() > PROJECTION_TOL * 1e-2 {
        rounds += 1;
        let fail = |residual| LogrError::ProjectionFailed { rounds, residual };
        if rounds > MAX_PROJECTION_ROUNDS {
            return Err(fail(gap.amax()));
        }
        let free: Vec<usize> = (0..live.len()).filter(|&i| x[i] > 0.0).collect();
        let a_f = a_live.select_columns(&free);
        // the ridge keeps the step an ascent direction when the positive set
        // cannot reach the targets; the line search fixes its length
        let hess = &a_f * a_f.transpose() + DMatrix::identity(t.len(), t.len()) * NEWTON_RIDGE;
        let step = hess.cholesky().ok_or_else(|| fail(gap.amax()))?.solve(&gap);
        let z = &r + a_live.transpose() * &y;
        let w = a_live.transpose() * &step;
        let alpha = exact_step(&z, &w, t.dot(&step)).ok_or_else(|| fail(gap.amax()))?;
        y += step * alpha;
        x = primal(&y);
        gap = &t - &a_live * &x;
    }

    let mut class_probs = vec![0.0; k];
    for (i, &c) in live.iter().enumerate() {
        class_probs[c] = x[i];
    }
    let residual = residual(&a, &t, &DVector::from_column_slice(&class_probs));
    if residual > PROJECTION_TOL {
        return Err(LogrError::ProjectionFailed { rounds, residual });
    }
    Ok(SampledDistribution {
        class_probs,
        residual,
        rounds,
    })
}

/// Maximizer over `α >= 0` of the dual along a step. Its slope
/// `c - Σ w_i max(0, z_i + α w_i)` is piecewise linear and decreasing.
fn exact_step(z: &DVector<f64>, w: &DVector<f64>, c: f64) -> Option<f64> {
    let slope = |a: f64| c - z.iter().zip(w.iter()).map(|(zi, wi)| wi * (zi + a * wi).max(0.0)).sum::<f64>();
    let mut breaks: Vec<f64> = z
        .iter()
        .zip(w.iter())
        .filter(|(_, wi)| **wi != 0.0)
        .map(|(zi, wi)| -zi / wi)
        .filter(|&a| a > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    let (mut lo, mut s_lo) = (0.0, slope(0.0));
    if s_lo <= 0.0 {
        return None;
    }
    for b in breaks {
        let s_b = slope(b);
        if s_b <= 0.0 {
            return Some(lo + s_lo * (b - lo) / (s_lo - s_b));
        }
        lo = b;
        s_lo = s_b;
    }
    let curvature: f64 = z
        .iter()
        .zip(w.iter())
        .filter(|(zi, wi)| **zi + (lo + 1.0) * **wi > 0.0)
        .map(|(_, wi)| wi * wi)
        .sum();
    (curvature > 0.0).then(|| lo + s_lo / curvature)
}

/// What to do with a sample that gives zero mass to a logged query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroMass {
    /// Mix in a tiny uniform mass over classes and renormalize.
    #[default]
    Smooth,
    /// Drop the sample and count it as skipped.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationOptions {
    pub samples: usize,
    pub seed: u64,
    pub zero_mass: ZeroMass,
    pub feature_cap: usize,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        DeviationOptions {
            samples: 1000,
            seed: 0,
            zero_mass: ZeroMass::Smooth,
            feature_cap: DEFAULT_FEATURE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    /// Mean KL divergence in nats.
    pub mean: f64,
    pub std_error: f64,
    /// Samples that contributed to the mean.
    pub samples: usize,
    /// Samples dropped by projection failure or the skip policy.
    pub skipped: usize,
}

/// `D_KL(ρ* ‖ ρ)` where `ρ*` is the log's distribution and `ρ` spreads each
/// class mass uniformly over its members.
pub fn kl_from_log(
    log: &Log,
    classes: &EquivalenceClasses,
    class_probs: &[f64],
    zero_mass: ZeroMass,
) -> Result<Option<f64>> {
    let mut logged = Vec::with_capacity(log.distinct());
    let mut starved = false;
    for (q, _) in log.rows() {
        let c = classes.class_of(q)?;
        starved |= class_probs[c] <= 0.0;
        logged.push((log.probability(q), c));
    }
    let smoothed;
    let probs = if starved {
        match zero_mass {
            ZeroMass::Skip => return Ok(None),
            ZeroMass::Smooth => {
                let z = 1.0 + SMOOTHING_EPSILON * class_probs.len() as f64;
                smoothed = class_probs
                    .iter()
                    .map(|&p| (p.max(0.0) + SMOOTHING_EPSILON) / z)
                    .collect::<Vec<f64>>();
                &smoothed[..]
            }
        }
    } else {
        class_probs
    };
    let sizes = classes.sizes();
    let kl: f64 = logged
        .iter()
        .map(|&(p, c)| p * (p * sizes[c] as f64 / probs[c]).ln())
        .sum();
    Ok(Some(kl.max(0.0)))
}

/// Deviation with default options apart from the sample count and seed.
pub fn estimate_deviation(enc: &Encoding, log: &Log, samples: usize, seed: u64) -> Result<DeviationEstimate> {
    estimate_deviation_with(
        enc,
        log,
        &DeviationOptions {
            samples,
            seed,
            ..DeviationOptions::default()
        },
    )
}

pub fn estimate_deviation_with(enc: &Encoding, log: &Log, opts: &DeviationOptions) -> Result<DeviationEstimate> {
    if opts.samples == 0 {
        return Err(LogrError::InvalidArgument("sample count must be at least 1".into()));
    }
    if enc.width() != log.width() {
        return Err(LogrError::WidthMismatch {
            expected: log.width(),
            actual: enc.width(),
        });
    }
    let classes = enumerate_classes(enc, opts.feature_cap)?;
    let targets = constraint_targets(enc, &classes)?;
    let support = feasible_support(&classes, &targets)?;

    let outcomes: Vec<Result<Option<f64>>> = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let raw = two_step_sample(&classes, derive_seed(opts.seed, i as u64))?;
            match project_with(&raw, &classes, &targets, &support) {
                Ok(s) => kl_from_log(log, &classes, &s.class_probs, opts.zero_mass),
                Err(LogrError::ProjectionFailed { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut values = Vec::with_capacity(opts.samples);
    for o in outcomes {
        if let Some(v) = o? {
            values.push(v);
        }
    }
    let skipped = opts.samples - values.len();
    if values.is_empty() {
        return Err(LogrError::ProjectionFailed {
            rounds: MAX_PROJECTION_ROUNDS,
            residual: f64::NAN,
        });
    }
    let count = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / count;
    let var = if values.len() > 1 {
        kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (count - 1.0)
    } else {
        0.0
    };
    Ok(DeviationEstimate {
        mean,
        std_error: (var / count).sqrt(),
        samples: values.len(),
        skipped,
    })
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
