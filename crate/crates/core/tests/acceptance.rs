//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canoncache::calibration::{self, confidences_at, ece, nll, ScoredExample};
use canoncache::cascade::{simulate, Cascade, CascadeConfig, OracleResolver, PredictionLogClassifier, RetrainingPool};
use canoncache::cost::{monthly_cost, CostConfig};
use canoncache::fingerprint::{fnv1a64, Fingerprinter};
use canoncache::harness::corpus::{mini_corpus, mini_plans, template_group};
use canoncache::harness::io;
use canoncache::harness::synthetic::{gen_synthetic, ConfidenceModel, SyntheticSpec};
use canoncache::metrics;
use canoncache::risk::{
    correction, default_grid, risk_coverage_sweep, validate_guarantee, BoundSpec, BoundVariant, CalibrationGenerator,
    CalibrationSet, GuaranteeConfig,
};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("[acceptance {n:>2}] {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Collects named checks and reports them as one criterion.
struct Criterion {
    n: u32,
    name: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
    start: Instant,
}

impl Criterion {
    fn new(n: u32, name: &'static str) -> Self {
        Self { n, name, failures: Vec::new(), notes: Vec::new(), start: Instant::now() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn finish(mut self, budget: Option<Duration>) {
        let elapsed = self.start.elapsed();
        if let Some(b) = budget {
            self.check(elapsed < b, format!("runtime {:.3}s < {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()));
        }
        let pass = self.failures.is_empty();
        let detail = if pass { self.notes.join("; ") } else { format!("failed: {}", self.failures.join("; ")) };
        report(self.n, self.name, pass, &detail);
        assert!(pass, "criterion {} failed: {:?}", self.n, self.failures);
    }
}

#[test]
fn criterion_01_cost_reproduction() {
    let mut c = Criterion::new(1, "cost reproduction");
    let cfg = CostConfig::default();
    let cost =
        |name: &str, rpd: u64| monthly_cost(&cfg.strategy(name).unwrap(), rpd, cfg.days).unwrap().monthly_cost_usd;
    for (name, target) in [("no_cache", 31.72), ("apc", 29.82), ("gptcache", 19.70), ("w5h2", 0.80)] {
        let v = cost(name, 50);
        c.check(within(v, target, 0.01), format!("{name} ${v:.4} vs ${target}"));
    }
    let s = cfg.sensitivity(&[0.70], 50).unwrap()[0].monthly_cost_usd;
    c.check(within(s, 3.88, 0.05), format!("70% local ${s:.4} vs $3.88"));
    let rows = [
        (50, 31.72, 19.70, 0.80),
        (200, 126.90, 78.80, 3.19),
        (1_000, 634.50, 394.02, 15.95),
        (10_000, 6_345.0, 3_940.0, 159.0),
        (100_000, 63_450.0, 39_402.0, 1_595.0),
    ];
    let mut worst: f64 = 0.0;
    for (rpd, none, gpt, w5) in rows {
        for (name, target) in [("no_cache", none), ("gptcache", gpt), ("w5h2", w5)] {
            let v = cost(name, rpd);
            worst = worst.max((v - target).abs());
            c.check(within(v, target, 1.0), format!("{rpd}/day {name} ${v:.2} vs ${target}"));
        }
    }
    c.notes.truncate(5);
    c.notes.push(format!("scaling rows max |err| ${worst:.3}"));
    c.finish(Some(Duration::from_secs(1)));
}

/// MASSIVE-shaped marginals: 1,102 test items over 8 scenario-level intents.
fn massive_truth() -> Vec<String> {
    let counts = [336, 151, 132, 129, 111, 100, 88, 55];
    counts.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(format!("intent_{i}"), n)).collect()
}

#[test]
fn criterion_02_metric_conventions() {
    let mut c = Criterion::new(2, "metric conventions");
    let truth = massive_truth();
    let single: Vec<&str> = vec!["only:key"; truth.len()];
    let r = metrics::report(&truth, &single, 1.0).unwrap();
    c.check(r.h == 0.0 && r.c == 1.0 && r.v == 0.0, format!("majority h={:.3} c={:.3} V={:.3}", r.h, r.c, r.v));
    let per_item: Vec<String> = (0..truth.len()).map(|i| format!("k{i}")).collect();
    let r = metrics::report(&truth, &per_item, 1.0).unwrap();
    c.check(within(r.h, 1.0, 1e-12), format!("per-item h={:.3}", r.h));
    c.check(r.ami.abs() < 1e-9, format!("AMI={:.1e}", r.ami));
    c.check(within(r.c, 0.277, 0.005), format!("c={:.4}", r.c));
    c.check(within(r.v, 0.433, 0.005), format!("V={:.4}", r.v));
    c.finish(Some(Duration::from_secs(1)));
}

fn binom(n: u64, k: u64) -> BigUint {
    let mut r = BigUint::one();
    for i in 0..k {
        r = r * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    r
}

fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    // scale down to keep both in f64 range
    let shift = den.bits().saturating_sub(1000);
    (num >> shift).to_f64().unwrap() / (den >> shift).to_f64().unwrap()
}

/// Expected MI under the hypergeometric model with exact integer probabilities.
fn oracle_emi(rows: &[u64], cols: &[u64]) -> f64 {
    let n: u64 = rows.iter().sum();
    let mut emi = 0.0;
    for &a in rows {
        for &b in cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let denom = binom(n, b);
            for nij in lo..=hi {
                let p = ratio(&(binom(a, nij) * binom(n - a, b - nij)), &denom);
                let term = nij as f64 / n as f64 * ((n * nij) as f64 / (a * b) as f64).log2();
                emi += p * term;
            }
        }
    }
    emi
}

fn oracle_entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    -counts
        .iter()
        .filter(|&&x| x > 0)
        .map(|&x| {
            let p = x as f64 / n as f64;
            p * p.log2()
        })
        .sum::<f64>()
}

struct OracleMetrics {
    h: f64,
    c: f64,
    v: f64,
    mi: f64,
    ami: f64,
    fmi: f64,
}

fn oracle(table: &[Vec<u64>]) -> OracleMetrics {
    let n: u64 = table.iter().flatten().sum();
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let hi = oracle_entropy(&rows);
    let hk = oracle_entropy(&cols);
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &x) in r.iter().enumerate() {
            if x > 0 {
                mi += x as f64 / n as f64 * ((n * x) as f64 / (rows[i] * cols[j]) as f64).log2();
            }
        }
    }
    let h_i_given_k = hi - mi;
    let h_k_given_i = hk - mi;
    let h = if hi == 0.0 { 1.0 } else { 1.0 - h_i_given_k / hi };
    let c = if hk == 0.0 { 1.0 } else { 1.0 - h_k_given_i / hk };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    let emi = oracle_emi(&rows, &cols);
    let den = 0.5 * (hi + hk) - emi;
    let ami = if den.abs() < 1e-12 { 0.0 } else { (mi - emi) / den };
    // pairwise FMI by enumerating item pairs
    let items: Vec<(usize, usize)> = table
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().flat_map(move |(j, &x)| std::iter::repeat_n((i, j), x as usize)))
        .collect();
    let (mut tp, mut same_k, mut same_i) = (0u64, 0u64, 0u64);
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            let si = items[a].0 == items[b].0;
            let sk = items[a].1 == items[b].1;
            tp += u64::from(si && sk);
            same_i += u64::from(si);
            same_k += u64::from(sk);
        }
    }
    let fmi = if tp == 0 || same_i == 0 || same_k == 0 { 0.0 } else { tp as f64 / ((same_i * same_k) as f64).sqrt() };
    OracleMetrics { h, c, v, mi, ami, fmi }
}

fn random_table(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    loop {
        let r = rng.random_range(1..=6);
        let k = rng.random_range(1..=6);
        let max = *[0u64, 1, 3, 8].get(rng.random_range(0..4)).unwrap();
        let t: Vec<Vec<u64>> = (0..r).map(|_| (0..k).map(|_| rng.random_range(0..=max)).collect()).collect();
        let row_ok = t.iter().all(|row| row.iter().sum::<u64>() > 0);
        let col_ok = (0..k).all(|j| t.iter().map(|row| row[j]).sum::<u64>() > 0);
        if row_ok && col_ok {
            return t;
        }
    }
}

fn labels_of(table: &[Vec<u64>]) -> (Vec<String>, Vec<String>) {
    let mut truth = Vec::new();
    let mut keys = Vec::new();
    for (i, r) in table.iter().enumerate() {
        for (j, &x) in r.iter().enumerate() {
            for _ in 0..x {
                truth.push(format!("i{i}"));
                keys.push(format!("k{j}"));
            }
        }
    }
    (truth, keys)
}

#[test]
fn criterion_03_metric_oracle_equivalence() {
    let mut c = Criterion::new(3, "metric oracle equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let table = random_table(&mut rng);
        let (truth, keys) = labels_of(&table);
        let r = metrics::report(&truth, &keys, 1.0).unwrap();
        let o = oracle(&table);
        let diffs = [r.h - o.h, r.c - o.c, r.v - o.v, r.mi - o.mi, r.ami - o.ami, r.fmi - o.fmi];
        let d = diffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(d);
        if d > 1e-9 {
            failures += 1;
        }
    }
    c.check(failures == 0, format!("1000 tables up to 6x6, {failures} mismatches, max |diff| {worst:.2e}"));
    c.finish(None);
}

#[test]
fn criterion_04_rate_distortion() {
    let mut c = Criterion::new(4, "rate-distortion");
    for (n, target, tol) in [(8usize, 3.00, 1e-12), (77, 6.27, 0.005), (150, 7.23, 0.005)] {
        let truth: Vec<String> = (0..n * 2).map(|i| format!("t{}", i % 5)).collect();
        let keys: Vec<String> = (0..n * 2).map(|i| format!("k{}", i % n)).collect();
        let r = metrics::report(&truth, &keys, 1.0).unwrap();
        c.check(within(r.rate_bits, target, tol), format!("{n} keys -> {:.4} bits", r.rate_bits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut all = true;
    for _ in 0..500 {
        let (t, k) = labels_of(&random_table(&mut rng));
        let r = metrics::report(&t, &k, 1.0).unwrap();
        all &= r.distortion == 1.0 - r.h;
    }
    c.check(all, "distortion == 1 - h on 500 random tables");
    c.finish(None);
}

#[test]
fn criterion_05_rcps_corrections() {
    let mut c = Criterion::new(5, "RCPS corrections");
    let h = correction(BoundVariant::HoeffdingUnion, 134, 100, 0.10, 0.0).unwrap();
    c.check(within(h, 0.161, 0.001), format!("C_H={h:.4}"));
    let l = correction(BoundVariant::LttHoeffding, 134, 100, 0.10, 0.0).unwrap();
    c.check(within(l, 0.0927, 0.0005), format!("C_LTT={l:.4}"));
    let eb = correction(BoundVariant::LttEb, 100, 100, 0.10, 0.0).unwrap();
    c.check(within(eb, 0.1020, 0.0005), format!("EB(V=0,n=100)={eb:.4}"));
    c.finish(None);
}

#[test]
fn criterion_06_rcps_guarantee() {
    let mut c = Criterion::new(6, "RCPS guarantee");
    let generator = CalibrationGenerator::default();
    let cfg = GuaranteeConfig { n_cal: 500, trials: 1000, seed: 6 };
    let (alpha, delta) = (0.10, 0.10);
    let sigma = (delta * (1.0 - delta) / cfg.trials as f64).sqrt();
    let limit = delta + 3.0 * sigma;
    let mut taus = BTreeMap::new();
    for v in BoundVariant::ALL {
        let r = validate_guarantee(&generator, &BoundSpec::new(v, alpha, delta), &cfg).unwrap();
        c.check(
            r.violation_rate <= limit,
            format!("{v} violations {:.3} (infeasible {})", r.violation_rate, r.infeasible),
        );
        taus.insert(v, r.tau_stars);
    }
    let h = &taus[&BoundVariant::HoeffdingUnion];
    let l = &taus[&BoundVariant::LttHoeffding];
    let dominated = h.iter().zip(l).all(|(h, l)| match (h, l) {
        (Some(h), Some(l)) => l <= h,
        (Some(_), None) => false,
        (None, _) => true,
    });
    c.check(dominated, "LTT tau* <= Hoeffding tau* on every trial");
    c.notes.insert(0, format!("limit {limit:.4}"));
    c.finish(Some(Duration::from_secs(120)));
}

#[test]
fn criterion_07_risk_coverage_shape() {
    let mut c = Criterion::new(7, "risk-coverage shape");
    let grid = default_grid();
    let calibrated = gen_synthetic(&SyntheticSpec { n_per_class: 1250, seed: 7, ..Default::default() }).unwrap();
    let overconfident = gen_synthetic(&SyntheticSpec {
        n_per_class: 250,
        seed: 8,
        confidence_model: ConfidenceModel::Overconfident { scale: 5.0 },
        ..Default::default()
    })
    .unwrap();
    let mut logs: Vec<(&str, Vec<(f64, bool)>)> = vec![
        ("calibrated", io::labeled_outcomes(&calibrated.dataset, &calibrated.predictions).unwrap()),
        ("overconfident", io::labeled_outcomes(&overconfident.dataset, &overconfident.predictions).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    logs.push(("uniform generator", CalibrationGenerator::default().sample(&mut rng, 2000)));
    for (name, log) in &logs {
        let curve = risk_coverage_sweep(&CalibrationSet::new(log).unwrap(), &grid);
        let mono = curve.windows(2).all(|w| w[1].coverage <= w[0].coverage && w[1].risk <= w[0].risk);
        c.check(mono, format!("{name} monotone"));
    }
    let cal = &logs[0].1;
    c.check(cal.len() == 10_000, format!("calibrated n={}", cal.len()));
    let curve = risk_coverage_sweep(&CalibrationSet::new(cal).unwrap(), &grid);
    let worst = curve.iter().filter_map(|p| Some(p.safety? - p.tau)).fold(f64::INFINITY, f64::min);
    c.check(worst >= -0.02, format!("min safety(tau)-tau = {worst:.4}"));
    c.finish(None);
}

#[test]
fn criterion_08_fingerprint_behavior() {
    let mut c = Criterion::new(8, "fingerprint behavior");
    let f = Fingerprinter::default();
    let vectors = [("", 0xcbf29ce484222325u64), ("a", 0xaf63dc4c8601ec8c), ("foobar", 0x85944171f73967e8)];
    c.check(vectors.iter().all(|(s, h)| fnv1a64(s.as_bytes()) == *h), "FNV-1a 64 vectors");

    let corpus = mini_corpus();
    let mut by_group: BTreeMap<(String, String), BTreeSet<u64>> = BTreeMap::new();
    for q in &corpus {
        let (class, group) = template_group(&q.id).unwrap();
        let (fp, _) = f.fingerprint(q).unwrap();
        by_group.entry((class.into(), group.into())).or_default().insert(fp.hash);
    }
    let shared = by_group.values().all(|s| s.len() == 1);
    c.check(shared, format!("{} templates: parameter variants share a hash", by_group.len()));
    let distinct: BTreeSet<u64> = by_group.values().flatten().copied().collect();
    c.check(distinct.len() == by_group.len(), format!("{} distinct hashes across templates", distinct.len()));

    // no classifier tiers: first sight of a template goes to tier 3, repeats hit tier 0
    let mut cfg = CascadeConfig::default();
    cfg.set_enabled(2, false);
    let cascade = Cascade::new(cfg, f).unwrap().with_cheap_resolver(Box::new(OracleResolver::new(mini_plans())));
    let out = simulate(&cascade, &corpus).unwrap();
    let truth: BTreeMap<&str, _> = corpus.iter().map(|q| (q.id.as_str(), q.true_intent.clone().unwrap())).collect();
    let tier0: Vec<_> = out.resolutions.iter().filter(|r| r.resolved_tier == 0).collect();
    let correct = tier0.iter().filter(|r| truth[r.query_id.as_str()].matches(r.key.as_ref().unwrap())).count();
    c.check(!tier0.is_empty() && correct == tier0.len(), format!("tier-0 precision {correct}/{} hits", tier0.len()));
    c.finish(None);
}

#[test]
fn criterion_09_cascade_accounting() {
    let mut c = Criterion::new(9, "cascade accounting");
    let data =
        gen_synthetic(&SyntheticSpec { n_per_class: 1000, classifier_accuracy: 0.90, seed: 9, ..Default::default() })
            .unwrap();
    // tier 0 off so that local safety measures the classifier alone
    let mut cfg = CascadeConfig::default();
    cfg.set_enabled(0, false);
    cfg.set_threshold(2, 0.0);
    let cascade = Cascade::new(cfg, Fingerprinter::default())
        .unwrap()
        .with_tier2(Box::new(PredictionLogClassifier::new(data.predictions.clone())))
        .with_cheap_resolver(Box::new(OracleResolver::new(data.plans.clone())));
    let out = simulate(&cascade, &data.dataset).unwrap();
    let s = &out.stats;
    c.check(
        s.per_tier.iter().sum::<u64>() == data.dataset.len() as u64,
        format!("tiers {:?} sum to {}", s.per_tier, data.dataset.len()),
    );
    let safety = s.safety.unwrap();
    c.check(within(safety, 0.90, 0.02), format!("tau2=0 safety {safety:.4}"));
    c.check(s.unsafe_rate.unwrap() == 1.0 - safety, "unsafe_rate = 1 - safety");

    let dir = tempfile::tempdir().unwrap();
    let pool_path = dir.path().join("pool.jsonl");
    let small = gen_synthetic(&SyntheticSpec { n_per_class: 40, seed: 10, ..Default::default() }).unwrap();
    let cascade = Cascade::new(CascadeConfig::default(), Fingerprinter::default())
        .unwrap()
        .with_tier2(Box::new(PredictionLogClassifier::new(small.predictions.clone())))
        .with_cheap_resolver(Box::new(OracleResolver::new(small.plans.clone())))
        .with_pool(RetrainingPool::with_file(&pool_path).unwrap());
    let out = simulate(&cascade, &small.dataset).unwrap();
    let pool: Vec<canoncache::cascade::PoolRecord> = io::read_jsonl(&pool_path).unwrap();
    let tier3: Vec<_> = out.resolutions.iter().filter(|r| r.resolved_tier == 3).collect();
    let cache = cascade.cache_snapshot();
    let in_cache = tier3.iter().all(|r| cache.contains(r.key.as_ref().unwrap()));
    let texts: BTreeMap<&str, &str> = small.dataset.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let pool_matches = pool.len() == tier3.len()
        && tier3.iter().zip(&pool).all(|(r, p)| texts[r.query_id.as_str()] == p.text && r.key.as_ref() == Some(&p.key));
    c.check(in_cache && pool_matches, format!("{} tier-3 resolutions in cache and pool", tier3.len()));
    c.finish(None);
}

fn split(scored: Vec<ScoredExample>) -> (Vec<ScoredExample>, Vec<ScoredExample>) {
    let (a, b): (Vec<_>, Vec<_>) = scored.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    (a.into_iter().map(|x| x.1).collect(), b.into_iter().map(|x| x.1).collect())
}

#[test]
fn criterion_10_calibration() {
    let mut c = Criterion::new(10, "calibration");
    let mut never_worse = true;
    let mut fits = 0;
    for seed in 0..20 {
        for model in [ConfidenceModel::Calibrated, ConfidenceModel::Overconfident { scale: 1.0 + seed as f64 / 4.0 }] {
            let d = gen_synthetic(&SyntheticSpec {
                n_per_class: 30,
                seed,
                classifier_accuracy: 0.6 + 0.02 * seed as f64,
                confidence_model: model,
                ..Default::default()
            })
            .unwrap();
            let scored = io::scored_examples(&d.dataset, &d.predictions).unwrap();
            let t = calibration::fit_temperature(&scored).unwrap();
            never_worse &= nll(&scored, t) <= nll(&scored, 1.0);
            fits += 1;
        }
    }
    c.check(never_worse, format!("NLL(T*) <= NLL(1) on {fits} fits"));

    let d = gen_synthetic(&SyntheticSpec {
        n_per_class: 500,
        seed: 10,
        classifier_accuracy: 0.8,
        confidence_model: ConfidenceModel::Overconfident { scale: 5.0 },
        ..Default::default()
    })
    .unwrap();
    let (fit, eval) = split(io::scored_examples(&d.dataset, &d.predictions).unwrap());
    let t = calibration::fit_temperature(&fit).unwrap();
    let before = ece(&confidences_at(&eval, 1.0), 15).unwrap().ece;
    let after = ece(&confidences_at(&eval, t), 15).unwrap().ece;
    c.check(after <= before / 5.0, format!("held-out ECE {before:.4} -> {after:.4} at T={t:.3}"));
    c.finish(None);
}
