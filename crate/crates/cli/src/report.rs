//! Stage reports and the human-readable run summary.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use icprobe::biasmetrics::{read_bias_csv, VerbBiasResult};
use icprobe::congruency::{ConditionStats, CongruencyReport};
use icprobe::lexicon::Polarity;
use icprobe::repprobe::ProbeReport;
use icprobe::scorer::MethodKind;
use serde::{Deserialize, Serialize};

use crate::args::{CliMode, ReportArgs};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::runio::{
    bias_files, read_json, write_atomic, CONGRUENCY_FILE, PROBE_FILE, SUMMARY_FILE, SVG_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub manifest: String,
    pub backend_id: String,
    pub method: Option<MethodKind>,
    pub mode: CliMode,
    pub discounted: bool,
    pub n_verbs: usize,
    /// Verbs whose model bias is defined (not all ties).
    pub n_defined: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
    pub permutations: usize,
    pub f1: Option<f64>,
    /// Verbs with a nonzero human bias, scored by F1.
    pub n_f1: usize,
    pub top_rank_rate: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongruencyOutput {
    pub manifest: String,
    pub backend_id: String,
    pub report: CongruencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub manifest: String,
    pub backend_id: String,
    pub report: ProbeReport,
}

/// Counts of S-bias, O-bias and undefined verbs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolarityCounts {
    pub s: usize,
    pub o: usize,
    pub zero: usize,
}

impl PolarityCounts {
    pub fn of(labels: impl IntoIterator<Item = Polarity>) -> Self {
        let mut c = Self::default();
        for p in labels {
            match p {
                Polarity::S => c.s += 1,
                Polarity::O => c.o += 1,
                Polarity::Zero => c.zero += 1,
            }
        }
        c
    }

    /// Share of S-bias verbs among verbs with a polarity.
    pub fn s_ratio(&self) -> Option<f64> {
        let n = self.s + self.o;
        (n > 0).then(|| self.s as f64 / n as f64)
    }
}

struct BiasStage {
    label: &'static str,
    report: CorrelationReport,
    results: Vec<VerbBiasResult>,
}

fn optional<T>(path: &Path, load: impl FnOnce() -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load().map(Some)
    } else {
        Ok(None)
    }
}

fn check_manifest(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(CliError::Validation(format!(
            "{} belongs to manifest {found}, not the current {expected}; rerun that stage",
            path.display()
        )));
    }
    Ok(())
}

fn load_bias(out: &Path, hash: &str, discounted: bool) -> Result<Option<BiasStage>> {
    let (csv_name, report_name) = bias_files(discounted);
    let report_path = out.join(report_name);
    let Some(report) = optional(&report_path, || {
        read_json::<CorrelationReport>(&report_path, "")
    })?
    else {
        return Ok(None);
    };
    check_manifest(&report_path, &report.manifest, hash)?;
    let csv_path = out.join(csv_name);
    let file = File::open(&csv_path).map_err(|source| CliError::Read {
        path: csv_path.clone(),
        source,
    })?;
    let results = read_bias_csv(file)?;
    Ok(Some(BiasStage {
        label: if discounted { "discounted" } else { "raw" },
        report,
        results,
    }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn condition_line(s: &mut String, name: &str, c: &ConditionStats) {
    let _ = writeln!(
        s,
        "  {name:<12} {:>8} {:>8} {:>8}",
        fmt_opt(c.accuracy),
        c.correct,
        c.n
    );
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let out = a.out.out.as_path();
    let m = RunManifest::load(out)?;
    let hash = m.hash();
    let bias: Vec<BiasStage> = [false, true]
        .into_iter()
        .filter_map(|d| load_bias(out, &hash, d).transpose())
        .collect::<Result<_>>()?;
    let congruency_path = out.join(CONGRUENCY_FILE);
    let congruency = optional(&congruency_path, || {
        read_json::<CongruencyOutput>(&congruency_path, "")
    })?;
    if let Some(c) = &congruency {
        check_manifest(&congruency_path, &c.manifest, &hash)?;
    }
    let probe_path = out.join(PROBE_FILE);
    let probe = optional(&probe_path, || read_json::<ProbeOutput>(&probe_path, ""))?;
    if let Some(p) = &probe {
        check_manifest(&probe_path, &p.manifest, &hash)?;
    }
    if bias.is_empty() && congruency.is_none() && probe.is_none() {
        return Err(CliError::MissingInput {
            path: out.to_path_buf(),
            hint: "run `icprobe bias`, `icprobe congruency` or `icprobe repprobe` first",
        });
    }

    let mut s = String::new();
    let _ = writeln!(s, "icprobe run summary");
    let _ = writeln!(s, "manifest  {hash}");
    let _ = writeln!(
        s,
        "mode      {}",
        serde_json::to_value(m.mode)
            .unwrap_or_default()
            .as_str()
            .unwrap_or("?")
    );
    let _ = writeln!(s, "seed      {}", m.seed);
    if let Some(b) = &m.backend {
        let _ = writeln!(s, "backend   {} ({})", b.id, b.kind);
    }

    let mut bars: Vec<(String, PolarityCounts)> = Vec::new();
    if let Some(first) = bias.first() {
        let human = PolarityCounts::of(first.results.iter().map(|r| Polarity::of(r.human_bias)));
        bars.push(("human".into(), human));
        let _ = writeln!(s, "\nBias vs human norms");
        let _ = writeln!(
            s,
            "  {:<12} {:>6} {:>8} {:>8} {:>8} {:>9}",
            "scores", "n", "rho", "p", "F1", "top-rank"
        );
        for b in &bias {
            let r = &b.report;
            let _ = writeln!(
                s,
                "  {:<12} {:>6} {:>8} {:>8} {:>8} {:>9}",
                b.label,
                r.n_defined,
                fmt_opt(r.rho),
                fmt_opt(r.p_value),
                fmt_opt(r.f1),
                fmt_opt(r.top_rank_rate)
            );
            if let Some(note) = &r.note {
                let _ = writeln!(s, "  note: {note}");
            }
            bars.push((
                format!("model ({})", b.label),
                PolarityCounts::of(b.results.iter().map(|r| r.polarity)),
            ));
        }
        let _ = writeln!(s, "\nVerb polarity");
        let _ = writeln!(
            s,
            "  {:<18} {:>6} {:>6} {:>9} {:>8}",
            "", "S-bias", "O-bias", "undefined", "S ratio"
        );
        for (label, c) in &bars {
            let _ = writeln!(
                s,
                "  {label:<18} {:>6} {:>6} {:>9} {:>8}",
                c.s,
                c.o,
                c.zero,
                fmt_opt(c.s_ratio())
            );
        }
    }
    if let Some(c) = &congruency {
        let r = &c.report;
        let _ = writeln!(s, "\nCongruency");
        let _ = writeln!(
            s,
            "  {:<12} {:>8} {:>8} {:>8}",
            "condition", "accuracy", "correct", "n"
        );
        condition_line(&mut s, "congruent", &r.congruent);
        condition_line(&mut s, "incongruent", &r.incongruent);
        condition_line(&mut s, "neutral", &r.neutral);
        condition_line(&mut s, "overall", &r.overall);
    }
    if let Some(p) = &probe {
        let r = &p.report;
        let _ = writeln!(
            s,
            "\nRepresentation probes (n={}, d={}, k={}, {} repeats)",
            r.n,
            r.d,
            r.k,
            r.per_repeat.len()
        );
        let _ = writeln!(s, "  LR mean rho   {:.4}", r.lr_mean_rho);
        let _ = writeln!(s, "  LDA mean rho  {:.4}", r.lda_mean_rho);
    }
    write_atomic(&out.join(SUMMARY_FILE), |w| w.write_all(s.as_bytes()))?;
    print!("{s}");

    if a.svg {
        if bars.is_empty() {
            return Err(CliError::Validation(
                "--svg needs bias results; run `icprobe bias` first".into(),
            ));
        }
        let svg = ratio_svg(&bars, &hash);
        write_atomic(&out.join(SVG_FILE), |w| w.write_all(svg.as_bytes()))?;
        println!("chart -> {}", out.join(SVG_FILE).display());
    }
    Ok(())
}

/// Stacked bars of the S-bias and O-bias share of verbs per source.
pub fn ratio_svg(bars: &[(String, PolarityCounts)], manifest: &str) -> String {
    const WIDTH: f64 = 640.0;
    const LEFT: f64 = 130.0;
    const BAR_W: f64 = 440.0;
    const BAR_H: f64 = 28.0;
    const GAP: f64 = 14.0;
    const TOP: f64 = 44.0;
    let height = TOP + bars.len() as f64 * (BAR_H + GAP) + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, "<!-- manifest {manifest} -->");
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22" font-size="15">Ratio of S-bias and O-bias verbs</text>"#
    );
    for (i, (label, c)) in bars.iter().enumerate() {
        let y = TOP + i as f64 * (BAR_H + GAP);
        let ty = y + BAR_H / 2.0 + 4.5;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ty}" text-anchor="end">{label}</text>"#,
            LEFT - 8.0
        );
        let Some(ratio) = c.s_ratio() else {
            let _ = writeln!(
                s,
                r#"<text x="{LEFT}" y="{ty}">no verbs with a polarity</text>"#
            );
            continue;
        };
        let sw = BAR_W * ratio;
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{y}" width="{sw:.2}" height="{BAR_H}" fill="#4c72b0"/>"##
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{y}" width="{:.2}" height="{BAR_H}" fill="#dd8452"/>"##,
            LEFT + sw,
            BAR_W - sw
        );
        if ratio > 0.0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ty}" fill="white">S {:.0}%</text>"#,
                LEFT + 6.0,
                ratio * 100.0
            );
        }
        if ratio < 1.0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ty}" fill="white" text-anchor="end">O {:.0}%</text>"#,
                LEFT + BAR_W - 6.0,
                (1.0 - ratio) * 100.0
            );
        }
    }
    let _ = writeln!(s, "</svg>");
    s
}
