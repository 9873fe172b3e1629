//! Maximum-entropy distributions for arbitrary pattern encodings.
//!
//! Queries that agree on containment of every encoded pattern are
//! interchangeable for every constraint, so the maximum-entropy distribution
//! is uniform inside each such class. The solver therefore works on one
//! probability per class and runs iterative proportional scaling over the
//! pattern constraints.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::encoding::Encoding;
use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::pattern::Pattern;

pub const DEFAULT_FEATURE_CAP: usize = 24;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

const STALL_SWEEPS: usize = 100;
const STALL_GAIN: f64 = 1e-12;
const PARALLEL_MIN_FEATURES: usize = 16;

/// Containment signature of a query against the encoding's patterns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(Vec<u64>);

impl Signature {
    fn of(q: u64, patterns: &[u64]) -> Self {
        let mut words = vec![0u64; patterns.len().div_ceil(64).max(1)];
        for (j, &b) in patterns.iter().enumerate() {
            if q & b == b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Signature(words)
    }

    pub fn get(&self, j: usize) -> bool {
        self.0.get(j / 64).is_some_and(|w| w & (1 << (j % 64)) != 0)
    }
}

/// Non-empty encoding-equivalence classes of `{0,1}^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceClasses {
    n: usize,
    patterns: Vec<Pattern>,
    masks: Vec<u64>,
    signatures: Vec<Signature>,
    sizes: Vec<u64>,
    /// smallest member query of each class
    representatives: Vec<u64>,
    index: HashMap<Signature, usize>,
}

impl EquivalenceClasses {
    pub fn width(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Encoded patterns in the column order of the signatures.
    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn signatures(&self) -> &[Signature] {
        &self.signatures
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn representative(&self, class: usize) -> Pattern {
        Pattern::from_mask(self.n, self.representatives[class])
    }

    pub fn membership(&self, q: &Pattern) -> Result<Signature> {
        let mask = self.mask_of(q)?;
        Ok(Signature::of(mask, &self.masks))
    }

    /// Index of the class containing `q`.
    pub fn class_of(&self, q: &Pattern) -> Result<usize> {
        let sig = self.membership(q)?;
        Ok(*self
            .index
            .get(&sig)
            .expect("every query belongs to a non-empty class"))
    }

    /// Whether class `class` lies inside the constraint of pattern `j`.
    pub fn in_constraint(&self, class: usize, j: usize) -> bool {
        self.signatures[class].get(j)
    }

    fn mask_of(&self, q: &Pattern) -> Result<u64> {
        if q.width() != self.n {
            return Err(LogrError::WidthMismatch {
                expected: self.n,
                actual: q.width(),
            });
        }
        Ok(q.to_mask().expect("class enumeration is capped below 64"))
    }
}

/// Enumerates `{0,1}^n` and groups queries by containment signature.
pub fn enumerate_classes(enc: &Encoding, cap: usize) -> Result<EquivalenceClasses> {
    let n = enc.width();
    let cap = cap.min(32);
    if n > cap {
        return Err(LogrError::TooManyFeatures { n, cap });
    }
    let patterns: Vec<Pattern> = enc.patterns().cloned().collect();
    let masks: Vec<u64> = patterns
        .iter()
        .map(|p| p.to_mask().expect("n <= 32"))
        .collect();
    let space = 1u64 << n;

    let collect = |range: std::ops::Range<u64>| {
        let mut local: HashMap<Signature, (u64, u64)> = HashMap::new();
        for q in range {
            let entry = local.entry(Signature::of(q, &masks)).or_insert((0, q));
            entry.0 += 1;
        }
        local
    };
    let merged: HashMap<Signature, (u64, u64)> = if n >= PARALLEL_MIN_FEATURES {
        let stripes = 64u64;
        let step = space / stripes;
        (0..stripes)
            .into_par_iter()
            .map(|s| collect(s * step..(s + 1) * step))
            .reduce(HashMap::new, |mut acc, part| {
                for (sig, (size, rep)) in part {
                    let e = acc.entry(sig).or_insert((0, rep));
                    e.0 += size;
                    e.1 = e.1.min(rep);
                }
                acc
            })
    } else {
        collect(0..space)
    };

    let mut classes: Vec<(Signature, u64, u64)> = merged
        .into_iter()
        .map(|(sig, (size, rep))| (sig, size, rep))
        .collect();
    classes.sort_by_key(|c| c.2);
    let mut out = EquivalenceClasses {
        n,
        patterns,
        masks,
        signatures: Vec::with_capacity(classes.len()),
        sizes: Vec::with_capacity(classes.len()),
        representatives: Vec::with_capacity(classes.len()),
        index: HashMap::with_capacity(classes.len()),
    };
    for (i, (sig, size, rep)) in classes.into_iter().enumerate() {
        out.index.insert(sig.clone(), i);
        out.signatures.push(sig);
        out.sizes.push(size);
        out.representatives.push(rep);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum allowed constraint violation.
    pub tol: f64,
    pub max_iters: usize,
    /// Largest feature count for exact class enumeration.
    pub feature_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            feature_cap: DEFAULT_FEATURE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxEntSolution {
    pub classes: EquivalenceClasses,
    pub class_probs: Vec<f64>,
    /// Entropy in nats.
    pub entropy: f64,
    pub residual: f64,
    /// Completed scaling sweeps.
    pub iterations: usize,
    pub converged: bool,
}

impl MaxEntSolution {
    /// Probability of a single query (uniform within its class).
    pub fn query_probability(&self, q: &Pattern) -> Result<f64> {
        let c = self.classes.class_of(q)?;
        Ok(self.class_probs[c] / self.classes.sizes[c] as f64)
    }
}

/// Maximum-entropy distribution consistent with every marginal in `enc`.
pub fn solve_maxent(enc: &Encoding, opts: &SolverOptions) -> Result<MaxEntSolution> {
    let classes = enumerate_classes(enc, opts.feature_cap)?;
    solve_on_classes(enc, classes, opts)
}

pub fn solve_on_classes(
    enc: &Encoding,
    classes: EquivalenceClasses,
    opts: &SolverOptions,
) -> Result<MaxEntSolution> {
    let targets: Vec<f64> = classes
        .patterns
        .iter()
        .map(|p| enc.get(p).expect("classes built from this encoding"))
        .collect();
    let k = classes.len();
    let Support { alive, active, members } = support(&classes, &targets)?;
    let alive_mass: f64 = (0..k)
        .filter(|&c| alive[c])
        .map(|c| classes.sizes[c] as f64)
        .sum();
    if alive_mass == 0.0 {
        return Err(LogrError::Infeasible { residual: 1.0 });
    }
    let mut probs: Vec<f64> = (0..k)
        .map(|c| {
            if alive[c] {
                classes.sizes[c] as f64 / alive_mass
            } else {
                0.0
            }
        })
        .collect();
    let active_members: Vec<Vec<usize>> = active
        .iter()
        .map(|&j| members[j].iter().copied().filter(|&c| alive[c]).collect())
        .collect();

    let residual_of = |probs: &[f64]| -> f64 {
        let mut worst = (probs.iter().sum::<f64>() - 1.0).abs();
        for (j, &t) in targets.iter().enumerate() {
            let s: f64 = members[j].iter().map(|&c| probs[c]).sum();
            worst = worst.max((s - t).abs());
        }
        worst
    };

    let mut residual = residual_of(&probs);
    let mut best = residual;
    let mut since_gain = 0;
    let mut iterations = 0;
    while residual > opts.tol && iterations < opts.max_iters {
        for (a, &j) in active.iter().enumerate() {
            let t = targets[j];
            let inside: f64 = active_members[a].iter().map(|&c| probs[c]).sum();
            let total: f64 = probs.iter().sum();
            let outside = total - inside;
            if inside <= 0.0 || outside <= 0.0 {
                return Err(LogrError::Infeasible { residual });
            }
            let out_scale = (1.0 - t) / outside;
            let in_scale = t / inside;
            for p in probs.iter_mut() {
                *p *= out_scale;
            }
            for &c in &active_members[a] {
                probs[c] *= in_scale / out_scale;
            }
        }
        iterations += 1;
        residual = residual_of(&probs);
        if residual < best - STALL_GAIN {
            best = residual;
            since_gain = 0;
        } else {
            since_gain += 1;
            if since_gain >= STALL_SWEEPS {
                return Err(LogrError::Infeasible { residual });
            }
        }
    }

    let entropy = probs
        .iter()
        .zip(&classes.sizes)
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &size)| -p * (p / size as f64).ln())
        .sum();
    Ok(MaxEntSolution {
        converged: residual <= opts.tol,
        classes,
        class_probs: probs,
        entropy,
        residual,
        iterations,
    })
}

struct Support {
    alive: Vec<bool>,
    /// constraints with a marginal strictly inside (0, 1)
    active: Vec<usize>,
    /// member classes of every constraint
    members: Vec<Vec<usize>>,
}

fn support(classes: &EquivalenceClasses, targets: &[f64]) -> Result<Support> {
    let k = classes.len();
    let members: Vec<Vec<usize>> = (0..targets.len())
        .map(|j| (0..k).filter(|&c| classes.in_constraint(c, j)).collect())
        .collect();

    // Marginals of exactly 0 or 1 fix whole classes at zero.
    let mut alive = vec![true; k];
    let mut active = Vec::new();
    for (j, &t) in targets.iter().enumerate() {
        if t <= 0.0 {
            for &c in &members[j] {
                alive[c] = false;
            }
        } else if t >= 1.0 {
            for c in 0..k {
                if !classes.in_constraint(c, j) {
                    alive[c] = false;
                }
            }
        } else {
            active.push(j);
        }
    }
    // Classes that no feasible distribution can reach would otherwise only
    // decay geometrically under scaling; remove them up front.
    let reachable = reachable_classes(&alive, &active, &members, targets)?;
    for c in 0..k {
        alive[c] = alive[c] && reachable[c];
    }
    Ok(Support {
        alive,
        active,
        members,
    })
}

/// Target marginal of every pattern, in the column order of `classes`.
pub fn constraint_targets(enc: &Encoding, classes: &EquivalenceClasses) -> Result<Vec<f64>> {
    classes
        .patterns
        .iter()
        .map(|p| {
            enc.get(p).ok_or_else(|| {
                LogrError::InvalidArgument(format!("pattern {p:?} is not in the encoding"))
            })
        })
        .collect()
}

/// Classes that some distribution meeting `targets` gives positive mass.
pub fn feasible_support(classes: &EquivalenceClasses, targets: &[f64]) -> Result<Vec<bool>> {
    Ok(support(classes, targets)?.alive)
}

/// Largest support of any distribution satisfying the active constraints.
///
/// Solves `max Σ y_c` over `0 <= y_c <= min(1, z_c)`, `z >= 0`,
/// `Σ_{c ∈ b_j} z_c = t_j τ`, `Σ z_c = τ`. Scaling a feasible point lets every
/// class of the maximal support reach `y_c = 1`, so the optimum marks exactly
/// those classes.
fn reachable_classes(
    alive: &[bool],
    active: &[usize],
    members: &[Vec<usize>],
    targets: &[f64],
) -> Result<Vec<bool>> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};

    let k = alive.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let tau = lp.add_var(0.0, (0.0, f64::INFINITY));
    let z: Vec<Option<microlp::Variable>> = (0..k)
        .map(|c| alive[c].then(|| lp.add_var(0.0, (0.0, f64::INFINITY))))
        .collect();
    let y: Vec<Option<microlp::Variable>> = (0..k)
        .map(|c| alive[c].then(|| lp.add_var(1.0, (0.0, 1.0))))
        .collect();
    for c in 0..k {
        if let (Some(zc), Some(yc)) = (z[c], y[c]) {
            lp.add_constraint([(yc, 1.0), (zc, -1.0)], ComparisonOp::Le, 0.0);
        }
    }
    let mut norm: Vec<(microlp::Variable, f64)> = z.iter().flatten().map(|&v| (v, 1.0)).collect();
    norm.push((tau, -1.0));
    lp.add_constraint(norm, ComparisonOp::Eq, 0.0);
    for &j in active {
        let mut row: Vec<(microlp::Variable, f64)> =
            members[j].iter().filter_map(|&c| z[c]).map(|v| (v, 1.0)).collect();
        row.push((tau, -targets[j]));
        lp.add_constraint(row, ComparisonOp::Eq, 0.0);
    }
    let solution = lp
        .solve()
        .map_err(|_| LogrError::Infeasible { residual: f64::NAN })?
        .into_solution()
        .map_err(|_| LogrError::Infeasible { residual: f64::NAN })?;
    Ok((0..k)
        .map(|c| y[c].is_some_and(|v| solution[v] > 0.5))
        .collect())
}

/// `H(maxent(enc)) - H(log)` in nats.
pub fn reproduction_error(enc: &Encoding, log: &Log, opts: &SolverOptions) -> Result<f64> {
    if enc.width() != log.width() {
        return Err(LogrError::WidthMismatch {
            expected: log.width(),
            actual: enc.width(),
        });
    }
    let sol = solve_maxent(enc, opts)?;
    Ok(sol.entropy - log.entropy())
}

/// Sufficient check that every distribution allowed by `e1` is allowed by
/// `e2`: `e1` maps every pattern of `e2` to the same marginal.
pub fn constrains_subset(e1: &Encoding, e2: &Encoding) -> Result<bool> {
    if e1.width() != e2.width() {
        return Err(LogrError::WidthMismatch {
            expected: e1.width(),
            actual: e2.width(),
        });
    }
    Ok(e2.iter().all(|(p, m)| match e1.get(p) {
        Some(v) => (v - m).abs() <= 1e-12,
        None => false,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{naive_encoding, naive_maxent_prob};
    use crate::lossless::{lossless_encoding, DEFAULT_LOSSLESS_CAP};

    fn toy_log() -> Log {
        Log::from_id_rows(4, [(vec![0, 2, 3], 1), (vec![0, 2], 1), (vec![1, 2], 1)]).unwrap()
    }

    fn pair_encoding() -> Encoding {
        let mut enc = Encoding::new(2);
        enc.insert(Pattern::from_ids(2, [0, 1]), 0.5).unwrap();
        enc
    }

    #[test]
    fn classes_of_single_pair_pattern() {
        let classes = enumerate_classes(&pair_encoding(), DEFAULT_FEATURE_CAP).unwrap();
        assert_eq!(classes.len(), 2);
        let inside = classes.class_of(&Pattern::from_ids(2, [0, 1])).unwrap();
        let outside = classes.class_of(&Pattern::empty(2)).unwrap();
        assert_eq!(classes.sizes()[inside], 1);
        assert_eq!(classes.sizes()[outside], 3);
        assert!(classes.membership(&Pattern::from_ids(2, [0, 1])).unwrap().get(0));
    }

    #[test]
    fn empty_encoding_has_one_class() {
        let classes = enumerate_classes(&Encoding::new(5), DEFAULT_FEATURE_CAP).unwrap();
        assert_eq!(classes.sizes(), &[32]);
    }

    #[test]
    fn full_naive_encoding_separates_every_query() {
        let log = Log::from_id_rows(3, [(vec![0], 1), (vec![1], 1), (vec![2], 1)]).unwrap();
        let classes = enumerate_classes(&naive_encoding(&log), DEFAULT_FEATURE_CAP).unwrap();
        assert_eq!(classes.len(), 8);
        assert!(classes.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn feature_cap() {
        let enc = Encoding::new(25);
        assert_eq!(
            solve_maxent(&enc, &SolverOptions::default()).unwrap_err(),
            LogrError::TooManyFeatures { n: 25, cap: 24 }
        );
    }

    #[test]
    fn symmetric_solution() {
        let sol = solve_maxent(&pair_encoding(), &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        let p11 = sol.query_probability(&Pattern::from_ids(2, [0, 1])).unwrap();
        let p00 = sol.query_probability(&Pattern::empty(2)).unwrap();
        assert!((p11 - 0.5).abs() < 1e-9);
        assert!((p00 - 1.0 / 6.0).abs() < 1e-9);
        let expected = -0.5 * 0.5f64.ln() - 3.0 * (1.0 / 6.0) * (1.0f64 / 6.0).ln();
        assert!((sol.entropy - expected).abs() < 1e-9);
        assert!((sol.entropy - 1.2425).abs() < 1e-4);
    }

    #[test]
    fn naive_solution_matches_closed_form() {
        let enc = naive_encoding(&toy_log());
        let sol = solve_maxent(&enc, &SolverOptions::default()).unwrap();
        for mask in 0..16 {
            let q = Pattern::from_mask(4, mask);
            let a = sol.query_probability(&q).unwrap();
            let b = naive_maxent_prob(&enc, &q).unwrap();
            assert!((a - b).abs() < 1e-6, "{q:?}");
        }
        let q1 = Pattern::from_ids(4, [0, 2, 3]);
        assert!((sol.query_probability(&q1).unwrap() - 4.0 / 27.0).abs() < 1e-6);
    }

    #[test]
    fn reproduction_errors() {
        let log = toy_log();
        let opts = SolverOptions::default();
        let naive = naive_encoding(&log);
        let e_naive = reproduction_error(&naive, &log, &opts).unwrap();
        assert!((e_naive - 0.8109).abs() < 1e-4);

        let extended = naive.extended(&log, &Pattern::from_ids(4, [0, 3])).unwrap();
        assert_eq!(extended.get(&Pattern::from_ids(4, [0, 3])), Some(1.0 / 3.0));
        let e_ext = reproduction_error(&extended, &log, &opts).unwrap();
        assert!(e_ext < e_naive - 1e-6, "{e_ext} vs {e_naive}");

        let lossless = lossless_encoding(&log, DEFAULT_LOSSLESS_CAP).unwrap();
        let e0 = reproduction_error(&lossless, &log, &opts).unwrap();
        assert!(e0.abs() < 1e-6, "{e0}");
    }

    #[test]
    fn infeasible_constraints_are_detected() {
        // a pattern cannot be more frequent than its sub-pattern
        let mut enc = Encoding::new(2);
        enc.insert(Pattern::from_ids(2, [0]), 0.2).unwrap();
        enc.insert(Pattern::from_ids(2, [0, 1]), 0.6).unwrap();
        assert!(matches!(
            solve_maxent(&enc, &SolverOptions::default()),
            Err(LogrError::Infeasible { .. })
        ));
    }

    #[test]
    fn containment_comparator() {
        let log = toy_log();
        let naive = naive_encoding(&log);
        let extended = naive.extended(&log, &Pattern::from_ids(4, [0, 3])).unwrap();
        assert!(constrains_subset(&extended, &naive).unwrap());
        assert!(!constrains_subset(&naive, &extended).unwrap());
        assert!(constrains_subset(&naive, &naive).unwrap());

        let mut other = naive.clone();
        other.insert(Pattern::from_ids(4, [0]), 0.5).unwrap();
        assert!(!constrains_subset(&other, &naive).unwrap());
        assert!(constrains_subset(&naive, &Encoding::new(3)).is_err());
    }
}
