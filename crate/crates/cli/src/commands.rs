use std::path::{Path, PathBuf};

use icprobe::biasmetrics::{
    compute_discount_table, discount_all, top_rank_rate, verb_results, write_bias_csv, BiasError,
};
use icprobe::congruency::evaluate;
use icprobe::lexicon::{bundled, Polarity, VerbEntry};
use icprobe::repprobe::{embed_all, run_probe, ProbeConfig};
use icprobe::scorer::http::default_backend_id;
use icprobe::scorer::oracle::DEFAULT_NOISE_AMPLITUDE;
use icprobe::scorer::{
    choose_method, score_all, Backend, HttpBackend, MethodKind, OracleBackend, OraclePolicy,
    Pronouns, ResponseRecord, ScoringOptions,
};
use icprobe::stats::{correlate, micro_f1};
use icprobe::stimgen::{generate, Mode, Referent, StimulusVariant};

use crate::args::{
    AggregationArg, BackendArgs, BiasArgs, CliMode, GenArgs, OraclePolicyArg, OutArgs, ProbeArgs,
    RepprobeArgs, ScorerKind,
};
use crate::error::{CliError, Result};
use crate::manifest::{BackendInfo, InputFile, Inputs, Lexicon, RunManifest};
use crate::report::{CongruencyOutput, CorrelationReport, ProbeOutput};
use crate::runio::{
    bias_files, read_jsonl, write_atomic, write_json, write_jsonl, CONGRUENCY_FILE,
    EMBEDDINGS_FILE, PROBE_FILE, RESPONSES_FILE, STIMULI_FILE,
};

pub const CACHE_ENV: &str = "ICPROBE_CACHE_DIR";

const NEED_GEN: &str = "run `icprobe gen` first";
const NEED_PROBE: &str = "run `icprobe probe` first";

fn create_dir(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    std::fs::canonicalize(out).map_err(|source| CliError::Read {
        path: out.to_path_buf(),
        source,
    })
}

fn pronouns(verbs: &[VerbEntry]) -> Result<Pronouns> {
    let language = verbs.first().map_or("en", |v| v.language.as_str());
    if let Some(v) = verbs.iter().find(|v| v.language != language) {
        return Err(CliError::Validation(format!(
            "lexicon mixes languages `{language}` and `{}` (verb {})",
            v.language, v.id
        )));
    }
    Pronouns::for_language(language)
        .map_err(|_| CliError::Validation(format!("no pronouns known for language `{language}`")))
}

fn modes(mode: CliMode) -> Vec<Mode> {
    match mode {
        CliMode::Cloze => vec![Mode::ClozeNonce],
        CliMode::Open => vec![Mode::OpenEnded],
        CliMode::Swapped => vec![Mode::SwappedCloze],
        CliMode::Explanation => [Referent::Subject, Referent::Object]
            .map(|target| Mode::Explanation { target })
            .to_vec(),
    }
}

/// All stimuli of a run, verb by verb in lexicon order.
pub fn generate_all(m: &RunManifest, lex: &Lexicon) -> Result<Vec<StimulusVariant>> {
    let mut out = Vec::new();
    for verb in &lex.verbs {
        if m.mode == CliMode::Explanation && !lex.explanations.iter().any(|e| e.verb_id == verb.id)
        {
            log::warn!("verb {} has no explanation pair; skipped", verb.id);
            continue;
        }
        for mode in modes(m.mode) {
            out.extend(generate(
                verb,
                mode,
                &lex.pool,
                &lex.nonce,
                &lex.explanations,
                m.seed,
            )?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("no stimuli generated".into()));
    }
    Ok(out)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let out = create_dir(&a.out.out)?;
    let input = |given: &Option<PathBuf>, default: PathBuf| {
        InputFile::hash(given.as_ref().unwrap_or(&default))
    };
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: a.seed,
        mode: a.mode,
        inputs: Inputs {
            verbs: input(&a.lexicon, bundled::verbs())?,
            names: input(&a.names, bundled::names())?,
            nonce: input(&a.nonce, bundled::nonce())?,
            explanations: input(&a.explanations, bundled::explanations())?,
        },
        out_dir: out.clone(),
        backend: None,
    };
    let lex = m.lexicon()?;
    let stimuli = generate_all(&m, &lex)?;
    write_jsonl(&out.join(STIMULI_FILE), &m.base_hash(), &stimuli)?;
    m.save(&out)?;
    println!(
        "{} stimuli for {} verbs -> {}",
        stimuli.len(),
        lex.verbs.len(),
        out.join(STIMULI_FILE).display()
    );
    Ok(())
}

fn backend_info(a: &BackendArgs) -> BackendInfo {
    let aggregation = match a.aggregation {
        AggregationArg::MeanProb => "mean_prob",
        AggregationArg::MeanLogprob => "mean_logprob",
    };
    match a.scorer {
        ScorerKind::Oracle => {
            let policy = match a.oracle_policy {
                OraclePolicyArg::Human => "human",
                OraclePolicyArg::Ic => "ic",
                OraclePolicyArg::Semantic => "semantic",
                OraclePolicyArg::Coin => "coin",
            };
            BackendInfo {
                kind: "oracle".into(),
                id: a
                    .backend_id
                    .clone()
                    .unwrap_or_else(|| format!("oracle-{policy}")),
                endpoint: None,
                policy: Some(policy.into()),
                aggregation: aggregation.into(),
                embed_dim: Some(a.embed_dim),
            }
        }
        ScorerKind::Http => {
            let endpoint = a.endpoint.clone().unwrap_or_default();
            BackendInfo {
                kind: "http".into(),
                id: a
                    .backend_id
                    .clone()
                    .unwrap_or_else(|| default_backend_id(&endpoint)),
                endpoint: Some(endpoint.trim_end_matches('/').to_string()),
                policy: None,
                aggregation: aggregation.into(),
                embed_dim: None,
            }
        }
    }
}

fn cache_dir(a: &BackendArgs, out: &Path) -> PathBuf {
    a.cache_dir
        .clone()
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| out.join("cache"))
}

fn build_backend(
    a: &BackendArgs,
    info: &BackendInfo,
    m: &RunManifest,
    lex: &Lexicon,
    out: &Path,
) -> Result<Box<dyn Backend>> {
    if a.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    match a.scorer {
        ScorerKind::Oracle => {
            if a.embed_dim == 0 {
                return Err(CliError::Validation(
                    "--embed-dim must be at least 1".into(),
                ));
            }
            let oracle = match a.oracle_policy {
                OraclePolicyArg::Human => OracleBackend::from_human_bias(&lex.verbs),
                OraclePolicyArg::Ic => OracleBackend::ic_following(&lex.verbs),
                OraclePolicyArg::Semantic => OracleBackend::new(OraclePolicy::FollowExplanation),
                OraclePolicyArg::Coin => {
                    OracleBackend::new(OraclePolicy::CoinFlip { seed: m.seed })
                }
            };
            Ok(Box::new(
                oracle
                    .with_id(info.id.clone())
                    .with_embedding(a.embed_dim, DEFAULT_NOISE_AMPLITUDE),
            ))
        }
        ScorerKind::Http => {
            let endpoint = info.endpoint.as_deref().unwrap_or_default();
            let dir = cache_dir(a, out);
            log::info!("response cache: {}", dir.display());
            Ok(Box::new(HttpBackend::new(endpoint, &dir, Some(&info.id))?))
        }
    }
}

fn load_stimuli(out: &Path, m: &RunManifest) -> Result<Vec<StimulusVariant>> {
    read_jsonl(&out.join(STIMULI_FILE), &m.base_hash(), NEED_GEN)
}

fn load_responses(out: &Path, m: &RunManifest) -> Result<Vec<ResponseRecord>> {
    read_jsonl(&out.join(RESPONSES_FILE), &m.hash(), NEED_PROBE)
}

pub fn probe(a: &ProbeArgs) -> Result<()> {
    let out = a.out.out.as_path();
    let mut m = RunManifest::load(out)?;
    let lex = m.lexicon()?;
    let stimuli = load_stimuli(out, &m)?;
    let info = backend_info(&a.backend);
    m.bind(info.clone())?;
    let backend = build_backend(&a.backend, &info, &m, &lex, out)?;
    let pronouns = pronouns(&lex.verbs)?;
    let caps = backend.capabilities()?;

    let mut kind: Option<MethodKind> = None;
    for mode in modes(m.mode) {
        let k = choose_method(caps, mode)?;
        if kind.is_some_and(|prev| prev != k) {
            return Err(CliError::Internal(format!(
                "modes of one run need different methods ({k:?})"
            )));
        }
        kind = Some(k);
    }
    let kind = kind.ok_or_else(|| CliError::Internal("run has no modes".into()))?;
    let options = ScoringOptions {
        aggregation: a.backend.aggregation.into(),
    };
    log::info!(
        "scoring {} stimuli with {} ({kind:?})",
        stimuli.len(),
        backend.id()
    );
    let results = score_all(
        backend.as_ref(),
        &stimuli,
        kind,
        &pronouns,
        options,
        a.backend.jobs,
    );

    let total = results.len();
    let mut records = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (s, r) in stimuli.into_iter().zip(results) {
        match r {
            Ok(scores) => records.push(ResponseRecord::new(backend.id(), kind, s, scores)),
            Err(e) => failures.push(e),
        }
    }
    if let Some(first) = failures.into_iter().next() {
        let failed = total - records.len();
        return Err(CliError::Scoring {
            failed,
            total,
            first,
        });
    }
    write_jsonl(&out.join(RESPONSES_FILE), &m.hash(), &records)?;
    m.save(out)?;
    println!(
        "{} responses from {} -> {}",
        records.len(),
        backend.id(),
        out.join(RESPONSES_FILE).display()
    );
    Ok(())
}

pub fn bias(a: &BiasArgs) -> Result<()> {
    let out = a.out.out.as_path();
    let m = RunManifest::load(out)?;
    if m.mode == CliMode::Explanation {
        return Err(CliError::Validation(
            "bias scores need a cloze, open or swapped run; use `icprobe congruency` for explanations".into(),
        ));
    }
    let responses = load_responses(out, &m)?;
    let info = m.require_backend()?.clone();
    let lex = m.lexicon()?;
    let pronouns = pronouns(&lex.verbs)?;
    let scored = if a.discount {
        let table = compute_discount_table(&responses, &pronouns)?;
        log::info!("discounting with {} groups", table.len());
        discount_all(&responses, &table)?
    } else {
        responses.clone()
    };
    let results = verb_results(&lex.verbs, &scored)?;
    let hash = m.hash();

    let (csv_name, report_name) = bias_files(a.discount);
    let mut csv = Vec::new();
    write_bias_csv(&results, Some(&hash), &mut csv)?;
    write_atomic(&out.join(csv_name), |w| w.write_all(&csv))?;

    let defined: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| r.bias.map(|b| (b, r.human_bias)))
        .collect();
    let (model, human): (Vec<f64>, Vec<f64>) = defined.iter().copied().unzip();
    let (correlation, note) = match correlate(&model, &human, a.permutations, m.seed) {
        Ok(c) => (Some(c), None),
        Err(e) => {
            log::warn!("no correlation: {e}");
            (None, Some(format!("correlation undefined: {e}")))
        }
    };
    let gold: Vec<(Polarity, Polarity)> = results
        .iter()
        .filter(|r| Polarity::of(r.human_bias) != Polarity::Zero)
        .map(|r| (r.polarity, Polarity::of(r.human_bias)))
        .collect();
    let (pred, gold): (Vec<Polarity>, Vec<Polarity>) = gold.into_iter().unzip();
    let f1 = micro_f1(&pred, &gold).ok();
    let top_rank = match top_rank_rate(&responses, &pronouns) {
        Ok(r) => Some(r),
        Err(BiasError::NoTopTokens) => None,
        Err(e) => return Err(e.into()),
    };
    let report = CorrelationReport {
        manifest: hash,
        backend_id: info.id,
        method: responses.first().map(|r| r.method),
        mode: m.mode,
        discounted: a.discount,
        n_verbs: results.len(),
        n_defined: defined.len(),
        rho: correlation.as_ref().map(|c| c.rho),
        p_value: correlation.as_ref().map(|c| c.p_value),
        significant: correlation.as_ref().map(|c| c.significant),
        permutations: a.permutations,
        f1,
        n_f1: pred.len(),
        top_rank_rate: top_rank,
        note,
    };
    write_json(&out.join(report_name), &report)?;
    println!(
        "rho {} p {} F1 {} over {} verbs -> {}",
        fmt_opt(report.rho),
        fmt_opt(report.p_value),
        fmt_opt(report.f1),
        report.n_verbs,
        out.join(report_name).display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn congruency(a: &OutArgs) -> Result<()> {
    let out = a.out.as_path();
    let m = RunManifest::load(out)?;
    if m.mode != CliMode::Explanation {
        return Err(CliError::Validation(
            "congruency needs a run generated with --mode explanation".into(),
        ));
    }
    let stimuli = load_stimuli(out, &m)?;
    let responses = load_responses(out, &m)?;
    let info = m.require_backend()?.clone();
    let report = evaluate(&stimuli, &responses)?;
    let output = CongruencyOutput {
        manifest: m.hash(),
        backend_id: info.id,
        report,
    };
    write_json(&out.join(CONGRUENCY_FILE), &output)?;
    let acc = |c: &icprobe::congruency::ConditionStats| fmt_opt(c.accuracy);
    println!(
        "congruent {} incongruent {} neutral {} -> {}",
        acc(&output.report.congruent),
        acc(&output.report.incongruent),
        acc(&output.report.neutral),
        out.join(CONGRUENCY_FILE).display()
    );
    Ok(())
}

pub fn repprobe(a: &RepprobeArgs) -> Result<()> {
    let out = a.out.out.as_path();
    let mut m = RunManifest::load(out)?;
    let lex = m.lexicon()?;
    let config = ProbeConfig {
        pca_fraction: a.pca_fraction,
        n_repeats: a.repeats,
        split_fraction: a.split_fraction,
        lda_ridge: a.lda_ridge,
        seed: m.seed,
    };
    config.validate()?;
    let info = backend_info(&a.backend);
    m.bind(info.clone())?;
    let backend = build_backend(&a.backend, &info, &m, &lex, out)?;
    let embeddings = embed_all(backend.as_ref(), &lex.verbs, &lex.pool, a.backend.jobs)?;
    let human: Vec<f64> = lex.verbs.iter().map(|v| v.human_bias).collect();
    let report = run_probe(&embeddings, &human, &config)?;
    let hash = m.hash();
    write_jsonl(&out.join(EMBEDDINGS_FILE), &hash, &embeddings)?;
    let output = ProbeOutput {
        manifest: hash,
        backend_id: info.id,
        report,
    };
    write_json(&out.join(PROBE_FILE), &output)?;
    m.save(out)?;
    println!(
        "LR mean rho {:.4} LDA mean rho {:.4} (k={}) -> {}",
        output.report.lr_mean_rho,
        output.report.lda_mean_rho,
        output.report.k,
        out.join(PROBE_FILE).display()
    );
    Ok(())
}
