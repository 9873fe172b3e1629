//! Acceptance criteria, one PASS/FAIL line each with the measured values.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the run; any other failure does.

mod common;

use std::process::Command;
use std::time::Instant;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use logr::cluster::{cluster, Method, Partition};
use logr::deviation::estimate_deviation;
use logr::encoding::{binary_entropy, naive_encoding, naive_maxent_prob};
use logr::eval::{corr_rank, laserlight_error_naive, marginal_deviation, mtv_error_naive, synthesis_error};
use logr::io::parse_mixture;
use logr::lossless::{lossless_encoding, reconstruct_probability};
use logr::maxent::{constrains_subset, reproduction_error, solve_maxent, SolverOptions};
use logr::mixture::{build_mixture, estimate_count, generalized_error};
use logr::{Encoding, Log, Pattern};

const SEEDS: u64 = 10;

/// Criteria that fail under their stated definition; the measured values
/// are still printed on every run.
const KNOWN_FAILURES: &[&str] = &["c06", "c09"];

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("c01", "toy log exactness", c01_toy_log_exactness),
        ("c02", "naive maxent probabilities", c02_naive_maxent_probabilities),
        ("c03", "lossless reconstruction", c03_lossless_reconstruction),
        ("c04", "solver cross-check", c04_solver_cross_check),
        ("c05", "containment monotonicity", c05_containment_monotonicity),
        ("c06", "deviation follows containment", c06_deviation_follows_containment),
        ("c07", "singleton count estimates", c07_singleton_count_estimates),
        ("c08", "error falls with clusters", c08_error_falls_with_clusters),
        ("c09", "corr_rank tracks error reduction", c09_corr_rank_tracks_error_reduction),
        ("c10", "synthesis and marginal metrics", c10_synthesis_and_marginal_metrics),
        ("c11", "alternative measure formulas", c11_alternative_measure_formulas),
        ("c12", "cli round trip is byte stable", c12_cli_round_trip_is_byte_stable),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let v = std::panic::catch_unwind(run).unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()).unwrap_or("?")
            ),
        });
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {id} {name}: {}", v.detail);
        if !v.pass && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}

fn c01_toy_log_exactness() -> Verdict {
    let mut ok = true;
    let built = toy_built();
    let log = &built.log;
    let id = fid(&built, "SELECT:id");
    let sms = fid(&built, "SELECT:sms_type");
    let msg = fid(&built, "FROM:Messages");
    let status = fid(&built, "WHERE:status = ?");
    let unit = |i| Pattern::from_ids(4, [i]);

    let expected = [(id, Ratio::new(2, 3)), (sms, Ratio::new(1, 3)), (msg, Ratio::new(1, 1)), (status, Ratio::new(1, 3))];
    for (f, r) in expected {
        ok &= log.marginal_exact(&unit(f)).unwrap() == r;
    }
    let enc = naive_encoding(log);
    ok &= enc.verbosity() == 4;

    // queries 1 and 2 against query 3
    let labels: Vec<usize> = log
        .rows()
        .iter()
        .map(|(q, _)| usize::from(q.get(sms)))
        .collect();
    let m = build_mixture(log, &Partition::from_labels(&labels)).unwrap();
    let c1 = &m.clusters[0].encoding;
    ok &= c1.verbosity() == 3;
    ok &= c1.get(&unit(id)) == Some(1.0);
    ok &= c1.get(&unit(msg)) == Some(1.0);
    ok &= c1.get(&unit(status)) == Some(0.5);
    ok &= c1.get(&unit(sms)).is_none();
    let c2 = &m.clusters[1].encoding;
    ok &= c2.verbosity() == 2;
    ok &= c2.get(&unit(sms)) == Some(1.0);
    ok &= c2.get(&unit(msg)) == Some(1.0);
    let err = generalized_error(&m);
    let detail = format!("generalized error {err:e}");
    ok &= err.abs() <= 1e-12;
    Verdict { pass: ok, detail }
}

fn c02_naive_maxent_probabilities() -> Verdict {
    let mut ok = true;
    let built = toy_built();
    let enc = naive_encoding(&built.log);
    let q = |specs: &[&str]| Pattern::from_ids(4, specs.iter().map(|s| fid(&built, s)).collect::<Vec<_>>());
    let q1 = naive_maxent_prob(&enc, &q(&["SELECT:id", "FROM:Messages", "WHERE:status = ?"])).unwrap();
    let spurious = naive_maxent_prob(&enc, &q(&["SELECT:sms_type", "FROM:Messages", "WHERE:status = ?"])).unwrap();
    let detail = format!("q1 {q1} spurious {spurious}");
    ok &= (q1 - 4.0 / 27.0).abs() <= 1e-12;
    ok &= (spurious - 1.0 / 27.0).abs() <= 1e-12;
    Verdict { pass: ok, detail }
}

fn c03_lossless_reconstruction() -> Verdict {
    let mut ok = true;
    let started = Instant::now();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.gen_range(1..=8);
        let log = random_log(&mut r, n, 20);
        let enc = lossless_encoding(&log, 16).unwrap();
        for q in all_queries(n) {
            let got = reconstruct_probability(&enc, &q).unwrap();
            worst = worst.max((got - log.probability(&q)).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("max abs error {worst:e} in {secs:.2}s");
    ok &= worst <= 1e-9;
    ok &= secs < 10.0;
    Verdict { pass: ok, detail }
}

fn c04_solver_cross_check() -> Verdict {
    let mut ok = true;
    let mut r = rng(4);
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(1..=10);
        let mut enc = Encoding::new(n);
        for i in 0..n {
            if r.gen_bool(0.8) {
                enc.insert(Pattern::from_ids(n, [i]), r.gen_range(0.05..0.95)).unwrap();
            }
        }
        let sol = solve_maxent(&enc.with_explicit_zeros(), &opts).unwrap();
        for q in all_queries(n) {
            let closed = naive_maxent_prob(&enc, &q).unwrap();
            worst = worst.max((sol.query_probability(&q).unwrap() - closed).abs());
        }
    }
    let mut worst_lossless = 0.0f64;
    for _ in 0..50 {
        let log = random_log(&mut r, 3, 12);
        let enc = lossless_encoding(&log, 16).unwrap();
        worst_lossless = worst_lossless.max(reproduction_error(&enc, &log, &opts).unwrap().abs());
    }
    let detail = format!("naive pointwise {worst:e}, lossless error {worst_lossless:e}");
    ok &= worst <= 1e-6;
    ok &= worst_lossless <= 1e-6;
    Verdict { pass: ok, detail }
}

/// An encoding of `log` holding `base` plus extra patterns that occur in it.
fn extend_with(log: &Log, base: &Encoding, extra: usize, r: &mut rand_chacha::ChaCha8Rng) -> Encoding {
    let mut enc = base.clone();
    let mut rows: Vec<&Pattern> = log.rows().iter().map(|(q, _)| q).collect();
    rows.shuffle(r);
    for q in rows.into_iter().take(extra) {
        // a random sub-pattern of a logged query
        let ids: Vec<usize> = q.ones().filter(|_| r.gen_bool(0.7)).collect();
        if ids.len() < 2 {
            continue;
        }
        let b = Pattern::from_ids(log.width(), ids);
        if !enc.contains_pattern(&b) {
            enc.insert(b.clone(), log.marginal(&b).unwrap()).unwrap();
        }
    }
    enc
}

fn c05_containment_monotonicity() -> Verdict {
    let mut ok = true;
    let mut r = rng(5);
    let opts = SolverOptions::default();
    let mut violations = 0;
    let mut pairs = 0;
    while pairs < 200 {
        let n = r.gen_range(2..=6);
        let log = random_log(&mut r, n, 12);
        let e2 = extend_with(&log, &naive_encoding(&log), r.gen_range(0..=2), &mut r);
        let e1 = extend_with(&log, &e2, r.gen_range(1..=3), &mut r);
        ok &= constrains_subset(&e1, &e2).unwrap();
        let (a, b) = (
            reproduction_error(&e1, &log, &opts).unwrap(),
            reproduction_error(&e2, &log, &opts).unwrap(),
        );
        if a > b + 2e-6 {
            violations += 1;
        }
        pairs += 1;
    }
    let detail = format!("{violations} violations in {pairs} pairs");
    ok &= violations == 0;
    Verdict { pass: ok, detail }
}

fn c06_deviation_follows_containment() -> Verdict {
    let mut ok = true;
    let started = Instant::now();
    let mut r = rng(6);
    let mut agree = 0;
    let trials = 100;
    for t in 0..trials {
        let log = templated_log(&mut r, 6, 3, 30);
        let e2 = naive_encoding(&log).with_explicit_zeros();
        let mut e1 = extend_with(&log, &e2, 3, &mut r);
        while e1.verbosity() == e2.verbosity() {
            e1 = extend_with(&log, &e2, 3, &mut r);
        }
        ok &= constrains_subset(&e1, &e2).unwrap();
        let d1 = estimate_deviation(&e1, &log, 1000, 2 * t).unwrap();
        let d2 = estimate_deviation(&e2, &log, 1000, 2 * t + 1).unwrap();
        if d1.mean <= d2.mean {
            agree += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("agreement {agree}/{trials} in {secs:.1}s");
    ok &= agree * 100 >= 90 * trials;
    ok &= secs < 60.0;
    Verdict { pass: ok, detail }
}

fn c07_singleton_count_estimates() -> Verdict {
    let mut ok = true;
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let n = r.gen_range(1..=12);
        let log = random_log(&mut r, n, 64);
        let m = build_mixture(&log, &Partition::singletons(log.distinct())).unwrap();
        for _ in 0..50 {
            let b = random_pattern(&mut r, n, 0.3);
            let est = estimate_count(&m, &b).unwrap();
            worst = worst.max((est - log.support(&b).unwrap() as f64).abs());
            checked += 1;
        }
    }
    let detail = format!("max abs error {worst:e} over {checked} patterns");
    ok &= worst <= 1e-9;
    Verdict { pass: ok, detail }
}

fn mean_error(method: Method, k: usize) -> f64 {
    (0..SEEDS)
        .map(|s| {
            let log = mixed_workload(s);
            generalized_error(&build_mixture(&log, &cluster(&log, k, method, s).unwrap()).unwrap())
        })
        .sum::<f64>()
        / SEEDS as f64
}

fn c08_error_falls_with_clusters() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for method in [Method::Kmeans, Method::Hamming] {
        let e: Vec<f64> = (1..=4).map(|k| mean_error(method, k)).collect();
        parts.push(format!("{method} k=1..4 {e:.4?}"));
        ok &= e[0] - e[1] >= 0.5;
        ok &= e[3] <= 0.05;
    }
    Verdict { pass: ok, detail: parts.join("; ") }
}

fn c09_corr_rank_tracks_error_reduction() -> Verdict {
    let mut ok = true;
    let mut r = rng(9);
    let opts = SolverOptions::default();
    let (mut scores, mut gains) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let n = r.gen_range(3..=8);
        let log = templated_log(&mut r, n, 3, 40);
        let naive = naive_encoding(&log).with_explicit_zeros();
        let base = reproduction_error(&naive, &log, &opts).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                let b = Pattern::from_ids(n, [i, j]);
                let p = log.marginal(&b).unwrap();
                if p <= 0.0 {
                    continue;
                }
                let mut refined = naive.clone();
                refined.insert(b.clone(), p).unwrap();
                scores.push(corr_rank(&log, &naive, &b).unwrap());
                gains.push(base - reproduction_error(&refined, &log, &opts).unwrap());
            }
        }
    }
    let rho = spearman(&scores, &gains);
    // anti-correlated pairs also reduce error, which the signed score ranks last
    let magnitude: Vec<f64> = scores.iter().map(|s| s.abs()).collect();
    let detail = format!(
        "spearman {rho:.3} over {} candidates (|corr_rank| {:.3})",
        scores.len(),
        spearman(&magnitude, &gains)
    );
    ok &= rho >= 0.6;
    Verdict { pass: ok, detail }
}

fn c10_synthesis_and_marginal_metrics() -> Verdict {
    let mut ok = true;
    let mut synth = [0.0; 4];
    let mut dev = [0.0; 4];
    for s in 0..SEEDS {
        let log = mixed_workload(s);
        for k in 1..=4 {
            let m = build_mixture(&log, &cluster(&log, k, Method::Hamming, s).unwrap()).unwrap();
            let se = synthesis_error(&log, &m, 10_000, s).unwrap();
            let md = marginal_deviation(&log, &m).unwrap();
            if generalized_error(&m).abs() <= 1e-12 {
                ok &= se == 0.0;
                ok &= md.abs() <= 1e-12;
            }
            synth[k - 1] += se / SEEDS as f64;
            dev[k - 1] += md / SEEDS as f64;
        }
    }
    let detail = format!("synthesis {synth:?} marginal deviation {dev:?}");
    for k in 1..4 {
        ok &= synth[k] <= synth[k - 1];
        ok &= dev[k] <= dev[k - 1];
    }
    ok &= synth[3] < synth[0] && dev[3] < dev[0];
    ok &= synth[3] == 0.0;
    ok &= dev[3].abs() <= 1e-12;
    Verdict { pass: ok, detail }
}

fn c11_alternative_measure_formulas() -> Verdict {
    let mut ok = true;
    let ll = laserlight_error_naive(4, 0.5).unwrap();
    ok &= (ll - 4.0 * 2f64.ln()).abs() <= 1e-12;
    let built = toy_built();
    let enc = naive_encoding(&built.log);
    let h: f64 = [2.0 / 3.0, 1.0 / 3.0, 1.0, 1.0 / 3.0].into_iter().map(binary_entropy).sum();
    let mtv = mtv_error_naive(3, &enc).unwrap();
    let detail = format!("laserlight {ll} mtv {mtv}");
    ok &= (mtv - (-3.0 * h + 2.0 * 3f64.ln())).abs() <= 1e-9;
    Verdict { pass: ok, detail }
}

fn logr(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_logr")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn c12_cli_round_trip_is_byte_stable() -> Verdict {
    let mut ok = true;
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("log.sql");
    std::fs::write(
        &input,
        "SELECT id FROM Messages WHERE status = 1\n\
         3\tSELECT id FROM Messages\n\
         SELECT sms_type FROM Messages\n\
         2\tSELECT a, b FROM t WHERE x > 4 AND y = 'z'\n\
         SELECT a FROM t WHERE x > 9\n",
    )
    .unwrap();
    let input = input.to_str().unwrap();
    let run = |tag: &str| {
        let enc = dir.path().join(format!("enc-{tag}.json"));
        let enc = enc.to_str().unwrap().to_owned();
        logr(&["compress", "--input", input, "--clusters", "2", "--seed", "11", "--out", &enc]);
        let json = std::fs::read(&enc).unwrap();
        let eval = logr(&["evaluate", "--encoding", &enc, "--input", input, "--seed", "11", "--deviation", "50"]).stdout;
        (json, eval)
    };
    let (json_a, eval_a) = run("a");
    let (json_b, eval_b) = run("b");
    // the echoed config names the encoding path, which differs per run
    let strip = |v: &[u8]| {
        String::from_utf8(v.to_vec())
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"encoding\":"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    ok &= json_a == json_b;
    ok &= strip(&eval_a) == strip(&eval_b);

    let built = logr::sql::build_log(&logr::sql::RawLogFile::parse(&std::fs::read_to_string(input).unwrap()).unwrap()).unwrap();
    let part = cluster(&built.log, 2, Method::Kmeans, 11).unwrap();
    let expected = build_mixture(&built.log, &part).unwrap().with_features(built.vocabulary.labels());
    let (loaded, config) = parse_mixture(std::str::from_utf8(&json_a).unwrap()).unwrap();
    ok &= loaded == expected;
    ok &= config.unwrap()["seed"] == 11;
    let detail = format!("{} bytes of encoding, {} bytes of report", json_a.len(), eval_a.len());
    Verdict { pass: ok, detail }
}

