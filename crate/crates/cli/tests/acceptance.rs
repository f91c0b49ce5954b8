//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Reference implementations below are deliberately naive and share no code
//! with the library beyond the record types they read.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use icas_audit::attacks::{
    adaptive_weight, icas_token_score, score_dataset, AttackConfig, IcasConfig, MinKConfig, MinKppConfig, RenyiConfig,
    ScaleFilter,
};
use icas_audit::fit::linear_fit;
use icas_audit::metrics::{asr, auroc, orient, roc_points, tpr_at_fpr, trapezoid_area, LabeledScore};
use icas_audit::records::{Label, SampleRecord, ScaleLayout, TokenObservation};
use icas_audit::stats::{renyi_entropy, vocab_mean_std, RenyiOrder};
use icas_audit::toymodel::{draw_dataset, emit_records, sample_world, train, ToyWorldConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / want.abs().max(scale).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- fixtures

fn random_layout(rng: &mut ChaCha8Rng) -> ScaleLayout {
    let k = rng.random_range(1..=4);
    ScaleLayout::new((0..k).map(|_| (rng.random_range(1..=3), rng.random_range(1..=3))).collect()).unwrap()
}

/// Values on a coarse grid part of the time so ties are common.
fn value(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let x = rng.random_range(lo..hi);
    if rng.random_bool(0.3) {
        (x * 2.0).round() / 2.0
    } else {
        x
    }
}

fn random_record(rng: &mut ChaCha8Rng, id: usize) -> SampleRecord {
    let layout = random_layout(rng);
    let mut tokens = Vec::new();
    for (k, &(h, w)) in layout.sides().iter().enumerate() {
        for pos in 0..h * w {
            let clp = value(rng, -15.0, 0.0).min(0.0);
            let max_cond_lp = clp * rng.random_range(0.0..=1.0);
            let uncond_lp = if rng.random_bool(0.02) { -700.0 } else { value(rng, -15.0, 0.0).min(0.0) };
            let vocab_std = if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..3.0) };
            let mut renyi = BTreeMap::new();
            renyi.insert("2".to_string(), value(rng, 0.0, 6.0).max(0.0));
            renyi.insert("inf".to_string(), -max_cond_lp);
            tokens.push(TokenObservation {
                scale: k as u32 + 1,
                position: pos,
                cond_lp: clp,
                uncond_lp,
                vocab_mean: rng.random_range(-10.0..0.0),
                vocab_std,
                renyi,
                max_cond_lp,
            });
        }
    }
    let label = if id.is_multiple_of(2) { Label::Member } else { Label::Nonmember };
    let rec = SampleRecord { sample_id: format!("r{id}"), label, condition: "c".into(), layout, tokens };
    rec.validate().expect("generator emits valid records");
    rec
}

fn acceptance_world(seed: u64) -> ToyWorldConfig {
    ToyWorldConfig {
        n_conditions: 4,
        layout: ScaleLayout::new(vec![(1, 1), (2, 2), (3, 3), (4, 4)]).unwrap(),
        vocab_size: 64,
        dirichlet_concentration: 0.1,
        seed,
    }
}

fn orders() -> Vec<RenyiOrder> {
    vec![RenyiOrder::Finite(0.5), RenyiOrder::Finite(1.0), RenyiOrder::Finite(2.0), RenyiOrder::Infinite]
}

fn standard_attacks() -> Vec<AttackConfig> {
    vec![
        AttackConfig::Icas(IcasConfig::default()),
        AttackConfig::Icas(IcasConfig { adaptive: false, ..Default::default() }),
        AttackConfig::Loss,
        AttackConfig::MinK(MinKConfig::default()),
        AttackConfig::MinKpp(MinKppConfig::default()),
        AttackConfig::Renyi(RenyiConfig::default()),
    ]
}

fn dataset_auroc(records: &[SampleRecord], attack: &AttackConfig) -> f64 {
    let scores = score_dataset(records, attack, &ScaleFilter::All).unwrap();
    auroc(&orient(&scores).unwrap()).unwrap()
}

// ------------------------------------------------------ reference formulas

fn ref_weight(s: f64, a: f64, b: f64) -> f64 {
    1.0 / (a + (b * s).min(700.0).exp())
}

fn ref_count(k: u32, n: usize) -> usize {
    ((k as usize * n).div_ceil(100)).max(1)
}

fn ref_sum_lowest(mut v: Vec<f64>, m: usize) -> (f64, f64) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &v[..m];
    (kept.iter().sum(), kept.iter().map(|x| x.abs()).sum())
}

fn ref_sum_highest(v: Vec<f64>, m: usize) -> (f64, f64) {
    let (s, mag) = ref_sum_lowest(v.into_iter().map(|x| -x).collect(), m);
    (-s, mag)
}

fn formula_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut note = |name: &str, got: f64, want: f64, scale: f64| -> Result<(), String> {
        let e = rel_err(got, want, scale);
        worst = worst.max(e);
        check(e <= 1e-9, || format!("{name}: library {got} vs reference {want}"))
    };
    for i in 0..10_000 {
        let r = random_record(&mut rng, i);
        let n = r.tokens.len();
        let (a, b) = (rng.random_range(0.5..3.0), rng.random_range(0.1..5.0));
        let k = rng.random_range(1..=100u32);
        let floor = if rng.random_bool(0.5) { 1e-6 } else { rng.random_range(0.01..1.0) };

        let t = &r.tokens[rng.random_range(0..n)];
        note("icas_token_score", icas_token_score(t), t.cond_lp - t.uncond_lp, 1e-300)?;
        let s = t.cond_lp - t.uncond_lp;
        note("adaptive_weight", adaptive_weight(s, a, b), ref_weight(s, a, b), 1e-300)?;

        let diffs: Vec<f64> = r.tokens.iter().map(|t| t.cond_lp - t.uncond_lp).collect();
        let terms: Vec<f64> = diffs.iter().map(|&s| s * ref_weight(s, a, b)).collect();
        let icas = AttackConfig::Icas(IcasConfig { a, b, adaptive: true });
        note(
            "score_icas",
            icas.score(&r, &ScaleFilter::All).unwrap().score,
            terms.iter().sum(),
            terms.iter().map(|x| x.abs()).sum(),
        )?;
        let plain = AttackConfig::Icas(IcasConfig { a, b, adaptive: false });
        note(
            "score_icas(sum)",
            plain.score(&r, &ScaleFilter::All).unwrap().score,
            diffs.iter().sum(),
            diffs.iter().map(|x| x.abs()).sum(),
        )?;

        let clps: Vec<f64> = r.tokens.iter().map(|t| t.cond_lp).collect();
        let loss_mag = clps.iter().map(|x| x.abs()).sum();
        note(
            "score_loss",
            AttackConfig::Loss.score(&r, &ScaleFilter::All).unwrap().score,
            clps.iter().sum(),
            loss_mag,
        )?;

        let m = ref_count(k, n);
        let (want, mag) = ref_sum_lowest(clps.clone(), m);
        let mink = AttackConfig::MinK(MinKConfig { k_percent: k as f64 });
        note("score_mink", mink.score(&r, &ScaleFilter::All).unwrap().score, want, mag)?;

        let z: Vec<f64> = r.tokens.iter().map(|t| (t.cond_lp - t.vocab_mean) / t.vocab_std.max(floor)).collect();
        let (want, mag) = ref_sum_lowest(z, m);
        let minkpp = AttackConfig::MinKpp(MinKppConfig { k_percent: k as f64, sigma_floor: floor });
        note("score_minkpp", minkpp.score(&r, &ScaleFilter::All).unwrap().score, want, mag)?;

        let (alpha, key) =
            if rng.random_bool(0.5) { (RenyiOrder::Finite(2.0), "2") } else { (RenyiOrder::Infinite, "inf") };
        let h: Vec<f64> = r.tokens.iter().map(|t| t.renyi[key]).collect();
        let (want, mag) = ref_sum_highest(h, m);
        let renyi = AttackConfig::Renyi(RenyiConfig { alpha, k_percent: k as f64, ..Default::default() });
        note("score_renyi", renyi.score(&r, &ScaleFilter::All).unwrap().score, want, mag)?;
    }
    Ok(format!("10000 records x 8 formulas, worst relative error {worst:.1e}"))
}

// --------------------------------------------------------- stats oracles

fn random_logprobs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = rng.random_range(2..=256);
    let spread = [0.0, 0.1, 1.0, 5.0, 20.0][rng.random_range(0..5)];
    let logits: Vec<f64> = (0..v).map(|_| spread * rng.random_range(-1.0..1.0)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    logits.iter().map(|x| x - max - z.ln()).collect()
}

fn stats_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let grid = [0.25, 0.5, 0.9, 0.999, 1.0, 1.001, 1.5, 2.0, 3.0, 10.0];
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let lp = random_logprobs(&mut rng);
        let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        let mean: f64 = p.iter().zip(&lp).map(|(p, l)| p * l).sum();
        let var: f64 = p.iter().zip(&lp).map(|(p, l)| p * (l - mean) * (l - mean)).sum();
        let (mu, sigma) = vocab_mean_std(&lp).unwrap();
        for (name, got, want) in [("mean", mu, mean), ("std", sigma, var.sqrt())] {
            let e = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(e);
            check(e <= 1e-9, || format!("vocab {name}: {got} vs {want} (V={})", lp.len()))?;
        }
        let mut prev = f64::INFINITY;
        for &alpha in &grid {
            let want = if alpha == 1.0 {
                -p.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
            } else {
                p.iter().map(|p| p.powf(alpha)).sum::<f64>().ln() / (1.0 - alpha)
            };
            let got = renyi_entropy(&lp, RenyiOrder::Finite(alpha)).unwrap();
            if alpha != 0.999 && alpha != 1.001 {
                let e = (got - want.max(0.0)).abs() / want.abs().max(1.0);
                worst = worst.max(e);
                check(e <= 1e-9, || format!("H_{alpha}: {got} vs {want}"))?;
            }
            check(got <= prev + 1e-12, || format!("H not monotone at α={alpha}: {got} > {prev}"))?;
            prev = got;
        }
        let h_inf = renyi_entropy(&lp, RenyiOrder::Infinite).unwrap();
        let want_inf = -p.iter().cloned().fold(0.0, f64::max).ln();
        check((h_inf - want_inf).abs() <= 1e-9 * want_inf.abs().max(1.0), || format!("H_inf: {h_inf} vs {want_inf}"))?;
        check(h_inf <= prev + 1e-12, || "H_inf exceeds H_10".into())?;
        let h1 = renyi_entropy(&lp, RenyiOrder::Finite(1.0)).unwrap();
        for alpha in [1.0 - 1e-4, 1.0 + 1e-4] {
            let h = renyi_entropy(&lp, RenyiOrder::Finite(alpha)).unwrap();
            check((h - h1).abs() <= 1e-3, || format!("continuity at α=1: H_{alpha} = {h}, H_1 = {h1}"))?;
        }
    }
    Ok(format!("2000 vectors (V ≤ 256), worst relative error {worst:.1e}"))
}

// -------------------------------------------------------- metric oracles

fn random_labeled(rng: &mut ChaCha8Rng) -> Vec<LabeledScore> {
    let n = rng.random_range(4..=500);
    let range = [2, 5, 20, 1000][rng.random_range(0..4)];
    let mut d: Vec<LabeledScore> =
        (0..n).map(|_| LabeledScore::new(rng.random_range(0..range) as f64, rng.random_bool(0.5))).collect();
    d[0].is_member = true;
    d[1].is_member = false;
    d[2].is_member = true;
    d[3].is_member = false;
    d
}

fn counts(d: &[LabeledScore]) -> (usize, usize) {
    let p = d.iter().filter(|x| x.is_member).count();
    (p, d.len() - p)
}

fn ref_auroc(d: &[LabeledScore]) -> f64 {
    let mut twice = 0u64;
    for m in d.iter().filter(|x| x.is_member) {
        for n in d.iter().filter(|x| !x.is_member) {
            twice += if m.score > n.score {
                2
            } else if m.score == n.score {
                1
            } else {
                0
            };
        }
    }
    let (p, q) = counts(d);
    twice as f64 / (2 * p * q) as f64
}

fn ref_accuracy(d: &[LabeledScore], t: f64) -> f64 {
    d.iter().filter(|x| (x.score >= t) == x.is_member).count() as f64 / d.len() as f64
}

fn ref_tpr(d: &[LabeledScore], budget: f64) -> f64 {
    let (p, q) = counts(d);
    let mut thresholds: Vec<f64> = d.iter().map(|x| x.score).collect();
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .filter_map(|t| {
            let fp = d.iter().filter(|x| !x.is_member && x.score >= t).count();
            let tp = d.iter().filter(|x| x.is_member && x.score >= t).count();
            (fp as f64 / q as f64 <= budget).then_some(tp as f64 / p as f64)
        })
        .fold(0.0, f64::max)
}

fn ref_asr(calib: &[LabeledScore], eval: &[LabeledScore]) -> f64 {
    let mut s: Vec<f64> = calib.iter().map(|x| x.score).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut candidates = vec![s[0] - 1.0, s[s.len() - 1] + 1.0];
    candidates.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in candidates {
        let acc = ref_accuracy(calib, t);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    ref_accuracy(eval, best.1)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for i in 0..200 {
        let d = random_labeled(&mut rng);
        let a = auroc(&d).unwrap();
        let want = ref_auroc(&d);
        check(a == want, || format!("dataset {i}: auroc {a} != pair count {want}"))?;
        let trap = trapezoid_area(&roc_points(&d).unwrap());
        check((trap - a).abs() <= 1e-12, || format!("dataset {i}: trapezoid {trap} vs {a}"))?;
        for budget in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let got = tpr_at_fpr(&d, budget).unwrap();
            let want = ref_tpr(&d, budget);
            check(got == want, || format!("dataset {i}: tpr@{budget} {got} vs {want}"))?;
        }
        let cut = d.len() / 5;
        let (calib, eval) = d.split_at(cut.max(4));
        if counts(calib).0 > 0 && counts(calib).1 > 0 && !eval.is_empty() {
            let (got, _) = asr(calib, eval).unwrap();
            let want = ref_asr(calib, eval);
            check(got == want, || format!("dataset {i}: asr {got} vs {want}"))?;
        }
    }
    Ok("200 datasets (n ≤ 500, tied scores): AUROC exact, trapezoid, TPR@FPR, ASR".into())
}

// -------------------------------------------------------- edge consistency

fn edge_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..100 {
        let r = random_record(&mut rng, i);
        let mink = AttackConfig::MinK(MinKConfig { k_percent: 100.0 }).score(&r, &ScaleFilter::All).unwrap().score;
        let loss = AttackConfig::Loss.score(&r, &ScaleFilter::All).unwrap().score;
        check(mink.to_bits() == loss.to_bits(), || format!("record {i}: min-k 100% {mink} != loss {loss}"))?;
    }
    let mut tied: Vec<SampleRecord> = (0..100).map(|i| random_record(&mut rng, i)).collect();
    for r in &mut tied {
        for t in &mut r.tokens {
            t.uncond_lp = t.cond_lp;
        }
    }
    for cfg in [IcasConfig::default(), IcasConfig { adaptive: false, ..Default::default() }] {
        let attack = AttackConfig::Icas(cfg);
        let scores = score_dataset(&tied, &attack, &ScaleFilter::All).unwrap();
        check(scores.iter().all(|s| s.score == 0.0), || format!("{attack}: nonzero score with cond = uncond"))?;
        let a = auroc(&orient(&scores).unwrap()).unwrap();
        check(a == 0.5, || format!("{attack}: all-ties AUROC {a}"))?;
    }
    Ok("min-k% at 100% == loss bitwise on 100 records; cond = uncond gives ICAS 0 and AUROC 0.5".into())
}

// -------------------------------------------------------- null calibration

fn null_calibration() -> Outcome {
    let world = sample_world(&acceptance_world(42)).unwrap();
    let data = draw_dataset(&world, 250, 250, 43).unwrap();
    let cfg = TrainConfig { epochs: 0, init_noise: 1e-3, seed: 44, ..Default::default() };
    let (params, _) = train(&cfg.init_params(&world), &data.members, &cfg).unwrap();
    let layout = &world.config.layout;
    let mut records = emit_records(&params, layout, &data.members, Label::Member, &orders()).unwrap();
    records.extend(emit_records(&params, layout, &data.nonmembers, Label::Nonmember, &orders()).unwrap());
    let mut parts = Vec::new();
    for attack in standard_attacks() {
        let a = dataset_auroc(&records, &attack);
        check((0.45..=0.55).contains(&a), || format!("{}: AUROC {a} outside [0.45, 0.55]", attack.slug()))?;
        parts.push(format!("{}={a:.3}", attack.slug()));
    }
    Ok(format!("1000 + 1000 samples: {}", parts.join(" ")))
}

// ------------------------------------------------------ overfitting separation

fn overfitting_separation() -> Outcome {
    let world = sample_world(&acceptance_world(42)).unwrap();
    let data = draw_dataset(&world, 25, 25, 42).unwrap();
    let cfg = TrainConfig { epochs: 200, learning_rate: 0.5, condition_dropout: 0.1, seed: 42, ..Default::default() };
    let (params, _) = train(&cfg.init_params(&world), &data.members, &cfg).unwrap();
    let layout = &world.config.layout;
    let mut records = emit_records(&params, layout, &data.members, Label::Member, &orders()).unwrap();
    records.extend(emit_records(&params, layout, &data.nonmembers, Label::Nonmember, &orders()).unwrap());
    let icas = dataset_auroc(&records, &AttackConfig::Icas(IcasConfig::default()));
    let plain = dataset_auroc(&records, &AttackConfig::Icas(IcasConfig { adaptive: false, ..Default::default() }));
    let loss = dataset_auroc(&records, &AttackConfig::Loss);
    let summary = format!("ICAS {icas:.4}, ICAS w/o AS {plain:.4}, Loss {loss:.4}");
    check(icas >= 0.70, || format!("ICAS AUROC below 0.70: {summary}"))?;
    check(icas > loss, || format!("ICAS does not beat Loss: {summary}"))?;
    check(icas >= plain - 0.01, || format!("adaptive aggregation loses to the plain sum: {summary}"))?;
    Ok(summary)
}

// ------------------------------------------------------------ fit correctness

fn fit_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..100 {
        let (alpha, beta) = (rng.random_range(1e-3..2.0), rng.random_range(-1.0..1.0));
        let n = rng.random_range(2..30);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = i as f64 + rng.random_range(0.0..0.5);
                (x, alpha * x + beta)
            })
            .collect();
        let f = linear_fit(&pts).unwrap();
        check((f.slope - alpha).abs() <= 1e-6 && (f.intercept - beta).abs() <= 1e-6, || {
            format!("line α={alpha} β={beta}: got {f:?}")
        })?;
        check((f.pearson_r - 1.0).abs() <= 1e-9, || format!("exact line r = {}", f.pearson_r))?;
    }
    let f = linear_fit(&[(1.0, 1.0), (2.0, 2.0), (3.0, 2.0)]).unwrap();
    check(
        (f.slope - 0.5).abs() <= 1e-9
            && (f.intercept - 2.0 / 3.0).abs() <= 1e-9
            && (f.pearson_r - 3f64.sqrt() / 2.0).abs() <= 1e-9,
        || format!("3-point case: {f:?}"),
    )?;
    for i in 0..1000 {
        let n = rng.random_range(3..50);
        let pts: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(-100.0..100.0), rng.random_range(0.0..1.0))).collect();
        let f = linear_fit(&pts).unwrap();
        let resid: Vec<f64> = pts.iter().map(|&(x, y)| y - (f.slope * x + f.intercept)).collect();
        let sum_r: f64 = resid.iter().sum();
        let sum_xr: f64 = pts.iter().zip(&resid).map(|(p, r)| p.0 * r).sum();
        let scale_x: f64 = pts.iter().map(|p| p.0.abs()).sum();
        check(sum_r.abs() <= 1e-9 * n as f64, || format!("dataset {i}: Σr = {sum_r}"))?;
        check(sum_xr.abs() <= 1e-9 * scale_x.max(1.0), || format!("dataset {i}: Σxr = {sum_xr}"))?;
    }
    Ok("100 exact lines, 3-point case, normal equations on 1000 datasets".into())
}

// ---------------------------------------------------------------- determinism

const PIPELINE_CONFIG: &str = r#"
seed = 7

[world]
n_conditions = 3
layout = [[1, 1], [2, 2], [3, 3]]
vocab_size = 16
dirichlet_concentration = 0.2
members_per_condition = 20
nonmembers_per_condition = 20

[train]
epochs = 40
learning_rate = 0.5

[eval]
fpr = [0.01, 0.05]
"#;

fn run_pipeline(config: &Path, out: &Path, threads: &str) -> Result<(), String> {
    for cmd in ["simulate", "score", "eval"] {
        let status = Command::new(env!("CARGO_BIN_EXE_icas-audit"))
            .args([cmd, "--quiet", "--config"])
            .arg(config)
            .arg("--out-dir")
            .arg(out)
            .env("ICAS_AUDIT_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || format!("`{cmd}` failed: {}", String::from_utf8_lossy(&status.stderr)))?;
    }
    Ok(())
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    fs::write(&config, PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (dir, threads) in runs {
        run_pipeline(&config, &tmp.path().join(dir), threads)?;
    }
    let reference = dir_contents(&tmp.path().join("a"));
    check(reference.len() >= 10, || format!("only {} output files", reference.len()))?;
    for (dir, threads) in &runs[1..] {
        let other = dir_contents(&tmp.path().join(dir));
        check(other == reference, || format!("run with {threads} worker(s) differs from the first run"))?;
    }
    Ok(format!("simulate→score→eval x3 (1, 1, 4 workers): {} files byte-identical", reference.len()))
}

// ------------------------------------------------------- scale-filter accounting

fn scale_filter_accounting() -> Outcome {
    let world = sample_world(&acceptance_world(9)).unwrap();
    let data = draw_dataset(&world, 3, 3, 9).unwrap();
    let cfg = TrainConfig { epochs: 10, ..Default::default() };
    let (params, _) = train(&cfg.init_params(&world), &data.members, &cfg).unwrap();
    let mut records = emit_records(&params, &world.config.layout, &data.members, Label::Member, &orders()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    records.extend((0..50).map(|i| random_record(&mut rng, i)));
    let attacks: Vec<AttackConfig> = standard_attacks()
        .into_iter()
        .map(|a| match a {
            AttackConfig::Renyi(c) => AttackConfig::Renyi(RenyiConfig { alpha: RenyiOrder::Infinite, ..c }),
            other => other,
        })
        .collect();
    let mut checked = 0;
    for r in &records {
        let sides = r.layout.sides();
        for j in 1..=sides.len() {
            let expect: usize = sides[..j].iter().map(|&(h, w)| (h * w) as usize).sum();
            let filter = ScaleFilter::first(j as u32);
            for attack in &attacks {
                let s = attack.score(r, &filter).unwrap();
                check(s.n_tokens == expect, || {
                    format!("{}: first {j} scales scored {} tokens, expected {expect}", r.sample_id, s.n_tokens)
                })?;
                checked += 1;
            }
        }
        let every = ScaleFilter::first(sides.len() as u32);
        for attack in &attacks {
            let filtered = attack.score(r, &every).unwrap();
            let unfiltered = attack.score(r, &ScaleFilter::All).unwrap();
            check(filtered == unfiltered, || {
                format!("{}: all-scales filter differs from no filter for {}", r.sample_id, attack.slug())
            })?;
        }
    }
    Ok(format!("{checked} (record, prefix, attack) counts; all-scales == unfiltered on {} records", records.len()))
}

// ---------------------------------------------------------------------- main

fn main() {
    let criteria = [
        Criterion { name: "formula oracles", limit: Some(Duration::from_secs(5)), run: formula_oracles },
        Criterion { name: "stats oracles", limit: Some(Duration::from_secs(5)), run: stats_oracles },
        Criterion { name: "metric oracles", limit: Some(Duration::from_secs(30)), run: metric_oracles },
        Criterion { name: "edge consistency", limit: None, run: edge_consistency },
        Criterion { name: "null calibration", limit: Some(Duration::from_secs(60)), run: null_calibration },
        Criterion {
            name: "overfitting separation",
            limit: Some(Duration::from_secs(120)),
            run: overfitting_separation,
        },
        Criterion { name: "fit correctness", limit: None, run: fit_correctness },
        Criterion { name: "determinism", limit: None, run: determinism },
        Criterion { name: "scale-filter accounting", limit: None, run: scale_filter_accounting },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("took {elapsed:.2?}, limit {limit:.0?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {:<24} {detail} [{elapsed:.2?}]", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<24} {why} [{elapsed:.2?}]", c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
