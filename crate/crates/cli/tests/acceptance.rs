//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use icprobe::biasmetrics::{
    bias_score, compute_discount_table, discount_all, read_bias_csv, verb_results, VerbBiasResult,
};
use icprobe::congruency::{evaluate, CongruencyReport};
use icprobe::lexicon::{write_verbs, ExplanationPair, Gender, Polarity, VerbEntry};
use icprobe::repprobe::{
    embed_all, pca_components, pca_fit, run_probe, ProbeConfig, VerbEmbedding,
};
use icprobe::rng::SplitMix64;
use icprobe::scorer::oracle::DEFAULT_NOISE_AMPLITUDE;
use icprobe::scorer::{
    choose_method, score_all, Backend, OracleBackend, OraclePolicy, PronounShift, Pronouns,
    ResponseRecord, ScoringOptions,
};
use icprobe::stats::{micro_f1, spearman_rho, StatsError};
use icprobe::stimgen::{generate, Congruency, Mode, Referent, StimulusVariant};
use icprobe_testkit::{
    bundled_explanations, bundled_nonce, bundled_pool, bundled_verbs, synthetic_verbs, MockCaps,
    MockServer,
};
use nalgebra::DMatrix;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn icprobe(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_icprobe"))
        .args(args)
        .env_remove("ICPROBE_CACHE_DIR")
        .output()
        .map_err(|e| format!("cannot run icprobe: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "icprobe {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    serde_json::from_slice(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn pronouns() -> Pronouns {
    Pronouns::for_language("en").expect("english")
}

/// Score every stimulus with `backend`, failing on any backend error.
fn score(
    backend: &dyn Backend,
    stimuli: &[StimulusVariant],
) -> Result<Vec<ResponseRecord>, String> {
    let caps = backend.capabilities().map_err(|e| e.to_string())?;
    let kind = choose_method(caps, stimuli[0].mode).map_err(|e| e.to_string())?;
    score_all(
        backend,
        stimuli,
        kind,
        &pronouns(),
        ScoringOptions::default(),
        4,
    )
    .into_iter()
    .zip(stimuli)
    .map(|(r, s)| {
        r.map(|scores| ResponseRecord::new(backend.id(), kind, s.clone(), scores))
            .map_err(|e| e.to_string())
    })
    .collect()
}

fn cloze_stimuli(verbs: &[VerbEntry], seed: u64) -> Vec<StimulusVariant> {
    let (pool, nonce) = (bundled_pool(), bundled_nonce());
    verbs
        .iter()
        .flat_map(|v| generate(v, Mode::ClozeNonce, &pool, &nonce, &[], seed).expect("generate"))
        .collect()
}

fn oracle_round_trip() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = SplitMix64::new(2024);
    let mut verbs = synthetic_verbs(20, 11);
    for v in &mut verbs {
        v.human_bias = loop {
            let b = rng.next_below(201) as i64 - 100;
            if b != 0 {
                break b as f64;
            }
        };
    }
    let lexicon = tmp.path().join("verbs.csv");
    let file = std::fs::File::create(&lexicon).map_err(|e| e.to_string())?;
    write_verbs(&verbs, file).map_err(|e| e.to_string())?;
    let out = tmp.path().join("run");
    icprobe(&[
        "gen",
        "--out",
        p(&out),
        "--lexicon",
        p(&lexicon),
        "--seed",
        "7",
    ])?;
    icprobe(&[
        "probe",
        "--out",
        p(&out),
        "--scorer",
        "oracle",
        "--oracle-policy",
        "human",
    ])?;
    icprobe(&["bias", "--out", p(&out)])?;

    let csv = read(&out.join("bias_results.csv"))?;
    let results = read_bias_csv(csv.as_slice()).map_err(|e| e.to_string())?;
    ensure!(results.len() == 20, "{} result rows", results.len());
    let targets: HashMap<&str, f64> = verbs
        .iter()
        .map(|v| (v.id.as_str(), v.human_bias))
        .collect();
    for r in &results {
        let target = targets[r.verb_id.as_str()];
        ensure!(
            r.bias == Some(target),
            "{}: recovered {:?}, target {target}",
            r.verb_id,
            r.bias
        );
    }
    let report = read_json(&out.join("correlation_report.json"))?;
    ensure!(report["rho"] == 1.0, "rho = {}", report["rho"]);
    ensure!(report["f1"] == 1.0, "F1 = {}", report["f1"]);
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!(
        "20 verbs recovered exactly, rho 1.0, F1 1.0 in {secs:.2} s"
    ))
}

fn bias_unit_suite() -> Check {
    let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-9);
    ensure!(
        bias_score(200, 0) == Some(100.0),
        "(200,0) -> {:?}",
        bias_score(200, 0)
    );
    ensure!(
        bias_score(0, 200) == Some(-100.0),
        "(0,200) -> {:?}",
        bias_score(0, 200)
    );
    ensure!(
        bias_score(150, 50) == Some(50.0),
        "(150,50) -> {:?}",
        bias_score(150, 50)
    );
    ensure!(
        close(bias_score(100, 80), 100.0 / 9.0),
        "(100,80) -> {:?}",
        bias_score(100, 80)
    );
    let mut rng = SplitMix64::new(99);
    for _ in 0..1000 {
        let s = rng.next_below(201) as usize;
        let o = rng.next_below(201) as usize;
        let (a, b) = (bias_score(s, o), bias_score(o, s));
        match (a, b) {
            (Some(a), Some(b)) => ensure!(a == -b, "bias({s},{o}) = {a}, bias({o},{s}) = {b}"),
            (None, None) => ensure!(s + o == 0, "undefined bias for ({s},{o})"),
            _ => return Err(format!("definedness differs for ({s},{o})")),
        }
    }
    Ok("4 fixed cases and 1000 antisymmetric pairs".into())
}

fn check_variants(verb: &VerbEntry, mode: Mode, vs: &[StimulusVariant]) -> Result<(), String> {
    let pool = bundled_pool();
    let at = format!("{} {mode}", verb.id);
    ensure!(vs.len() == 200, "{at}: {} variants", vs.len());
    let mut words = HashSet::new();
    for (i, v) in vs.iter().enumerate() {
        let want = if i < 100 {
            Gender::Male
        } else {
            Gender::Female
        };
        ensure!(
            v.variant_index == i,
            "{at}: variant {i} has index {}",
            v.variant_index
        );
        ensure!(
            v.subject_gender == want,
            "{at}: variant {i} subject is {:?}",
            v.subject_gender
        );
        ensure!(
            pool.names(want).contains(&v.subject_name),
            "{at}: subject {} not {want:?}",
            v.subject_name
        );
        ensure!(
            pool.names(want.other()).contains(&v.object_name),
            "{at}: object {} not {:?}",
            v.object_name,
            want.other()
        );
        match (&v.nonce_word, mode.uses_nonce()) {
            (Some(w), true) => ensure!(words.insert(w.clone()), "{at}: nonce `{w}` repeats"),
            (None, false) => {}
            (w, _) => return Err(format!("{at}: unexpected nonce {w:?}")),
        }
    }
    Ok(())
}

fn stimulus_enumeration() -> Check {
    let (verbs, pool, nonce, expl) = (
        bundled_verbs(),
        bundled_pool(),
        bundled_nonce(),
        bundled_explanations(),
    );
    let mut sets = 0;
    for v in &verbs {
        let mut modes = vec![Mode::ClozeNonce, Mode::OpenEnded, Mode::SwappedCloze];
        if expl.iter().any(|e| e.verb_id == v.id) {
            modes.extend(
                [Referent::Subject, Referent::Object].map(|target| Mode::Explanation { target }),
            );
        }
        for mode in modes {
            let a = generate(v, mode, &pool, &nonce, &expl, 7).map_err(|e| e.to_string())?;
            check_variants(v, mode, &a)?;
            let b = generate(v, mode, &pool, &nonce, &expl, 7).map_err(|e| e.to_string())?;
            ensure!(a == b, "{} {mode}: regeneration differs", v.id);
            sets += 1;
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n_pairs = verbs
        .iter()
        .filter(|v| expl.iter().any(|e| e.verb_id == v.id))
        .count();
    for (mode, expected) in [
        ("cloze", 200 * verbs.len()),
        ("open", 200 * verbs.len()),
        ("swapped", 200 * verbs.len()),
        ("explanation", 400 * n_pairs),
    ] {
        let (a, b) = (
            tmp.path().join(format!("{mode}-a")),
            tmp.path().join(format!("{mode}-b")),
        );
        icprobe(&["gen", "--out", p(&a), "--seed", "7", "--mode", mode])?;
        icprobe(&["gen", "--out", p(&b), "--seed", "7", "--mode", mode])?;
        let (x, y) = (
            read(&a.join("stimuli.jsonl"))?,
            read(&b.join("stimuli.jsonl"))?,
        );
        ensure!(x == y, "{mode}: regenerated stimuli.jsonl differs");
        let lines = x.iter().filter(|&&c| c == b'\n').count();
        ensure!(
            lines == expected + 1,
            "{mode}: {lines} lines, expected {} stimuli + header",
            expected
        );
    }
    Ok(format!(
        "{sets} verb/mode sets of 200 checked; CLI output byte-identical in 4 modes"
    ))
}

fn max_abs_group_mean(responses: &[ResponseRecord]) -> Result<f64, String> {
    let table = compute_discount_table(responses, &pronouns()).map_err(|e| e.to_string())?;
    Ok(table
        .groups()
        .map(|(_, g)| g.mean.abs())
        .fold(0.0, f64::max))
}

fn tallies(results: &[VerbBiasResult]) -> Vec<(String, usize, usize, usize)> {
    results
        .iter()
        .map(|r| (r.verb_id.clone(), r.s_wins, r.o_wins, r.ties))
        .collect()
}

fn discounting() -> Check {
    let pr = pronouns();
    let verbs = synthetic_verbs(305, 305);
    let stimuli = cloze_stimuli(&verbs, 1);
    let base = OracleBackend::from_human_bias(&verbs).with_levels(0.45, 0.35);
    let shifted = base.clone().with_shift(PronounShift {
        male: 0.3,
        female: 0.0,
    });
    let plain = score(&base, &stimuli)?;
    let moved = score(&shifted, &stimuli)?;

    let table = compute_discount_table(&moved, &pr).map_err(|e| e.to_string())?;
    let adjusted = discount_all(&moved, &table).map_err(|e| e.to_string())?;
    let worst = max_abs_group_mean(&adjusted)?;
    ensure!(worst <= 1e-9, "adjusted group mean {worst:e}");
    let bundled = bundled_verbs();
    let bundled_run = score(
        &OracleBackend::from_human_bias(&bundled),
        &cloze_stimuli(&bundled, 3),
    )?;
    let bundled_table = compute_discount_table(&bundled_run, &pr).map_err(|e| e.to_string())?;
    let bundled_worst = max_abs_group_mean(
        &discount_all(&bundled_run, &bundled_table).map_err(|e| e.to_string())?,
    )?;
    ensure!(
        bundled_worst <= 1e-9,
        "bundled adjusted group mean {bundled_worst:e}"
    );

    let truth = tallies(&verb_results(&verbs, &plain).map_err(|e| e.to_string())?);
    let raw_shifted = tallies(&verb_results(&verbs, &moved).map_err(|e| e.to_string())?);
    let recovered = tallies(&verb_results(&verbs, &adjusted).map_err(|e| e.to_string())?);
    let distorted = truth
        .iter()
        .zip(&raw_shifted)
        .filter(|(a, b)| a != b)
        .count();
    ensure!(distorted > 0, "the shift did not change any raw tally");
    if let Some((a, b)) = truth.iter().zip(&recovered).find(|(a, b)| a != b) {
        return Err(format!(
            "discounted tally {b:?} differs from unshifted {a:?}"
        ));
    }

    let sizes: Vec<usize> = table
        .groups()
        .filter(|(k, _)| k.pronoun == pr.male && k.subject_gender == Gender::Male)
        .map(|(_, g)| g.count)
        .collect();
    let mean_size = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    ensure!(
        (mean_size - 152.5).abs() <= 2.0,
        "(he, Male, nonce) groups average {mean_size}"
    );
    Ok(format!(
        "max |group mean| {worst:.1e}; shift distorted {distorted}/305 raw tallies, all restored; \
         {} (he, Male, nonce) groups of mean size {mean_size}",
        sizes.len()
    ))
}

/// Rank = number of smaller values plus the mean position among equals.
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let cov = sxy - sx * sy / n;
    let (vx, vy) = (sxx - sx * sx / n, syy - sy * sy / n);
    (vx > 1e-12 && vy > 1e-12).then(|| cov / (vx * vy).sqrt())
}

fn oracle_f1(pred: &[Polarity], gold: &[Polarity]) -> f64 {
    let classes = [Polarity::S, Polarity::O, Polarity::Zero];
    let idx = |p: Polarity| classes.iter().position(|&c| c == p).unwrap();
    let mut m = [[0usize; 3]; 3];
    for (&pr, &g) in pred.iter().zip(gold) {
        m[idx(pr)][idx(g)] += 1;
    }
    // Zero is never a correct answer, so its diagonal is not a true positive.
    let tp = m[0][0] + m[1][1];
    let fp: usize = (0..3).map(|c| m[c].iter().sum::<usize>()).sum::<usize>() - tp;
    let fn_: usize = (0..3)
        .map(|c| (0..3).map(|r| m[r][c]).sum::<usize>())
        .sum::<usize>()
        - tp;
    if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn statistics() -> Check {
    let mut rng = SplitMix64::new(5);
    let mut undefined = 0;
    for case in 0..1000 {
        let n = 3 + rng.next_below(10) as usize;
        let levels = 2 + rng.next_below(6);
        let x: Vec<f64> = (0..n).map(|_| rng.next_below(levels) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| rng.next_below(levels) as f64 * 0.5 - 1.0)
            .collect();
        let expected = oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y));
        match (spearman_rho(&x, &y), expected) {
            (Ok(r), Some(e)) => {
                ensure!((r - e).abs() <= 1e-12, "case {case}: rho {r} vs oracle {e}")
            }
            (Err(StatsError::ZeroVariance), None) => undefined += 1,
            (got, e) => {
                return Err(format!(
                    "case {case}: {got:?} vs oracle {e:?} for {x:?} {y:?}"
                ))
            }
        }
    }
    let labels = [Polarity::S, Polarity::O, Polarity::Zero];
    for case in 0..1000 {
        let n = 1 + rng.next_below(30) as usize;
        let mut draw = || labels[rng.next_below(3) as usize];
        let pred: Vec<Polarity> = (0..n).map(|_| draw()).collect();
        let gold: Vec<Polarity> = (0..n).map(|_| draw()).collect();
        let got = micro_f1(&pred, &gold).map_err(|e| e.to_string())?;
        let want = oracle_f1(&pred, &gold);
        ensure!(
            (got - want).abs() <= 1e-12,
            "case {case}: F1 {got} vs oracle {want}"
        );
    }
    let r =
        spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    ensure!((r - 0.8).abs() <= 1e-12, "worked example gives {r}");
    Ok(format!(
        "1000 rank vectors ({undefined} undefined on both sides), 1000 label sets, example 0.8"
    ))
}

fn explanation_stimuli(verbs: &[VerbEntry], expl: &[ExplanationPair]) -> Vec<StimulusVariant> {
    let (pool, nonce) = (bundled_pool(), bundled_nonce());
    verbs
        .iter()
        .filter(|v| expl.iter().any(|e| e.verb_id == v.id))
        .flat_map(|v| {
            [Referent::Subject, Referent::Object]
                .into_iter()
                .flat_map(|target| {
                    generate(v, Mode::Explanation { target }, &pool, &nonce, expl, 1)
                        .expect("generate")
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn accuracy(r: &CongruencyReport, c: Congruency) -> Result<f64, String> {
    r.condition(c)
        .and_then(|s| s.accuracy)
        .ok_or_else(|| format!("{c:?} condition is empty"))
}

fn congruency() -> Check {
    let (verbs, expl) = (bundled_verbs(), bundled_explanations());
    let stimuli = explanation_stimuli(&verbs, &expl);
    let ic = evaluate(
        &stimuli,
        &score(&OracleBackend::ic_following(&verbs), &stimuli)?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        accuracy(&ic, Congruency::Congruent)? == 1.0,
        "IC oracle congruent {:?}",
        ic.congruent
    );
    ensure!(
        accuracy(&ic, Congruency::Incongruent)? == 0.0,
        "IC oracle incongruent {:?}",
        ic.incongruent
    );
    let sem = evaluate(
        &stimuli,
        &score(
            &OracleBackend::new(OraclePolicy::FollowExplanation),
            &stimuli,
        )?,
    )
    .map_err(|e| e.to_string())?;
    for c in [
        Congruency::Congruent,
        Congruency::Incongruent,
        Congruency::Neutral,
    ] {
        ensure!(
            accuracy(&sem, c)? == 1.0,
            "semantic oracle {c:?} {:?}",
            sem.condition(c)
        );
    }

    let synth = synthetic_verbs(60, 17);
    let pairs: Vec<ExplanationPair> = synth
        .iter()
        .map(|v| ExplanationPair {
            verb_id: v.id.clone(),
            subj_expl: "was in a hurry".into(),
            obj_expl: "was in the way".into(),
        })
        .collect();
    let many = explanation_stimuli(&synth, &pairs);
    ensure!(
        many.len() >= 10_000,
        "only {} coin-flip stimuli",
        many.len()
    );
    let coin = evaluate(
        &many,
        &score(
            &OracleBackend::new(OraclePolicy::CoinFlip { seed: 42 }),
            &many,
        )?,
    )
    .map_err(|e| e.to_string())?;
    let mut shown = Vec::new();
    for c in [
        Congruency::Congruent,
        Congruency::Incongruent,
        Congruency::Neutral,
    ] {
        let a = accuracy(&coin, c)?;
        ensure!((a - 0.5).abs() <= 0.02, "coin flip {c:?} accuracy {a}");
        shown.push(format!("{a:.3}"));
    }
    Ok(format!(
        "IC 1.0/0.0, semantic 1.0 on {} stimuli; coin {} on {} stimuli",
        stimuli.len(),
        shown.join("/"),
        many.len()
    ))
}

fn probes() -> Check {
    ensure!(
        pca_components(768, 0.05) == 38,
        "k = {}",
        pca_components(768, 0.05)
    );

    let mut rng = SplitMix64::new(31);
    let (n, d, k) = (50, 40, 4);
    let a = DMatrix::from_fn(n, k, |_, _| rng.next_gaussian());
    let b = DMatrix::from_fn(k, d, |_, _| rng.next_gaussian());
    let mut x = a * b;
    for mut row in x.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += j as f64 * 0.25 - 3.0;
        }
    }
    let pca = pca_fit(&x, k as f64 / d as f64).map_err(|e| e.to_string())?;
    ensure!(pca.k() == k, "PCA kept {} components", pca.k());
    let err = (pca.inverse_transform(&pca.transform(&x)) - &x).amax();
    ensure!(err <= 1e-9, "rank-{k} reconstruction error {err:e}");

    let start = Instant::now();
    let verbs = synthetic_verbs(305, 768);
    let human: Vec<f64> = verbs.iter().map(|v| v.human_bias).collect();
    let oracle =
        OracleBackend::from_human_bias(&verbs).with_embedding(768, DEFAULT_NOISE_AMPLITUDE);
    let planted = embed_all(&oracle, &verbs, &bundled_pool(), 4).map_err(|e| e.to_string())?;
    let config = ProbeConfig::default();
    let report = run_probe(&planted, &human, &config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(report.k == 38, "probe used k = {}", report.k);
    ensure!(
        report.lr_mean_rho > 0.95,
        "planted LR mean rho {}",
        report.lr_mean_rho
    );
    ensure!(
        report.lda_mean_rho.abs() > 0.9,
        "planted LDA mean rho {}",
        report.lda_mean_rho
    );
    ensure!(secs < 60.0, "n=305, d=768 took {secs:.1} s");

    let again = run_probe(&planted, &human, &config).map_err(|e| e.to_string())?;
    ensure!(again == report, "run_probe differs under the same seed");

    let mut noise_rng = SplitMix64::new(77);
    let noise: Vec<VerbEmbedding> = verbs
        .iter()
        .map(|v| VerbEmbedding {
            verb_id: v.id.clone(),
            dim: 768,
            vector: (0..768).map(|_| noise_rng.next_gaussian()).collect(),
        })
        .collect();
    let null = run_probe(&noise, &human, &config).map_err(|e| e.to_string())?;
    for (name, rho) in [("LR", null.lr_mean_rho), ("LDA", null.lda_mean_rho)] {
        ensure!((-0.15..=0.15).contains(&rho), "noise {name} mean rho {rho}");
    }
    Ok(format!(
        "planted LR {:.4} LDA {:.4} in {secs:.1} s; noise LR {:.4} LDA {:.4}; rank-{k} error {err:.1e}; k=38; reproducible",
        report.lr_mean_rho, report.lda_mean_rho, null.lr_mean_rho, null.lda_mean_rho
    ))
}

fn cache_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (out, cache) = (tmp.path().join("run"), tmp.path().join("cache"));
    let server = MockServer::start(MockCaps::MASKED);
    let endpoint = server.url();
    let run = || -> Result<(), String> {
        icprobe(&["gen", "--out", p(&out), "--seed", "9"])?;
        icprobe(&[
            "probe",
            "--out",
            p(&out),
            "--scorer",
            "http",
            "--endpoint",
            &endpoint,
            "--backend-id",
            "mock",
            "--cache-dir",
            p(&cache),
        ])?;
        icprobe(&["bias", "--out", p(&out), "--permutations", "1000"])?;
        icprobe(&[
            "bias",
            "--out",
            p(&out),
            "--permutations",
            "1000",
            "--discount",
        ])?;
        icprobe(&["report", "--out", p(&out), "--svg"])
    };
    let files = [
        "manifest.json",
        "stimuli.jsonl",
        "responses.jsonl",
        "bias_results.csv",
        "correlation_report.json",
        "bias_results.discounted.csv",
        "correlation_report.discounted.json",
        "summary.txt",
        "summary.svg",
    ];
    run()?;
    let recorded = server.requests();
    ensure!(recorded > 0, "the recording run sent no requests");
    let first: BTreeMap<&str, Vec<u8>> = files
        .iter()
        .map(|f| Ok((*f, read(&out.join(f))?)))
        .collect::<Result<_, String>>()?;
    for f in files {
        std::fs::remove_file(out.join(f)).map_err(|e| e.to_string())?;
    }
    run()?;
    let replay = server.requests() - recorded;
    ensure!(replay == 0, "replay sent {replay} requests");
    for f in files {
        ensure!(read(&out.join(f))? == first[f], "{f} differs on replay");
    }
    Ok(format!(
        "{recorded} requests recorded, 0 on replay, {} artifacts byte-identical",
        files.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("oracle round trip", oracle_round_trip),
        ("bias score unit suite", bias_unit_suite),
        ("stimulus enumeration", stimulus_enumeration),
        ("discounting", discounting),
        ("statistics oracle equivalence", statistics),
        ("congruency logic", congruency),
        ("representation probes", probes),
        ("cache determinism", cache_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
