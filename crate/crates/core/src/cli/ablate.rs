//! Ablation sweeps. Each (row, x, seed) cell trains one model and stores its test metrics in
//! `cells/<hash>.json`, where the hash covers everything that determines the result. Cells
//! whose file already exists are skipped, so an interrupted sweep resumes where it stopped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{CnnSpec, ModelConfig, Precision};
use crate::document::{Document, LabelSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::paint::{builtin_scheme, PaintMode};
use crate::synthgen::{subsample, CorpusSplit};
use crate::vancl::{train, DivergenceKind, Mode, TrainConfig};

use super::{read_json, write_atomic, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "UPPERCASE")]
#[value(rename_all = "UPPER")]
pub enum Suite {
    Consistency,
    Divergence,
    Colors,
    Lowres,
    Sharing,
    Encoders,
    Modes,
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Consistency => "CONSISTENCY",
            Suite::Divergence => "DIVERGENCE",
            Suite::Colors => "COLORS",
            Suite::Lowres => "LOWRES",
            Suite::Sharing => "SHARING",
            Suite::Encoders => "ENCODERS",
            Suite::Modes => "MODES",
        }
    }
}

/// Training-set percentages of the low-resource curve.
pub const LOWRES_PERCENTS: [f64; 5] = [5.0, 12.5, 25.0, 50.0, 100.0];

#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    /// Return [`Error::Interrupted`] once this many new cells have finished.
    pub fail_after: Option<usize>,
    pub jobs: usize,
}

/// One configuration of a suite, before seeds are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub row: String,
    /// Training-set percentage, for the low-resource curve.
    pub x: Option<f64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

/// The rows of `suite` derived from `base`.
pub fn variants(suite: Suite, base: &RunConfig) -> Vec<Variant> {
    let v = |row: &str, train: TrainConfig, model: ModelConfig| Variant {
        row: row.to_string(),
        x: None,
        train,
        model,
    };
    let vancl = TrainConfig {
        mode: Mode::Vancl,
        baseline: false,
        ..base.train.clone()
    };
    let baseline = vancl.as_baseline();
    let m = base.model.clone();
    match suite {
        Suite::Consistency => vec![
            v("VANCL", vancl.clone(), m.clone()),
            v("NONE", TrainConfig { mode: Mode::None, ..vancl }, m),
        ],
        Suite::Divergence => [DivergenceKind::Kl, DivergenceKind::Js]
            .into_iter()
            .map(|d| v(d.as_str(), TrainConfig { divergence: d, ..vancl.clone() }, m.clone()))
            .collect(),
        Suite::Colors => (1..=8)
            .map(|r| v(&r.to_string(), TrainConfig { scheme: r.to_string(), ..vancl.clone() }, m.clone()))
            .collect(),
        Suite::Lowres => [("baseline", &baseline), ("VANCL", &vancl)]
            .into_iter()
            .flat_map(|(name, t)| {
                LOWRES_PERCENTS.iter().map(|&p| Variant {
                    row: name.to_string(),
                    x: Some(p),
                    train: t.clone(),
                    model: m.clone(),
                })
            })
            .collect(),
        Suite::Sharing => [(true, true), (true, false), (false, true), (false, false)]
            .into_iter()
            .map(|(share, paint)| {
                let row = format!(
                    "{} / {}",
                    if share { "shared" } else { "separate" },
                    if paint { "painted" } else { "original" }
                );
                let t = TrainConfig {
                    share_weights: share,
                    use_paint: paint,
                    ..vancl.clone()
                };
                v(&row, t, m.clone())
            })
            .collect(),
        Suite::Encoders => {
            let mut rows = vec![v("baseline", baseline, m.clone())];
            for (name, outer) in [("cnn2", Some(CnnSpec::cnn(2))), ("cnn4", Some(CnnSpec::cnn(4))), ("none", None)] {
                let model = ModelConfig {
                    outer_encoder: outer,
                    ..m.clone()
                };
                rows.push(v(name, vancl.clone(), model));
            }
            rows
        }
        Suite::Modes => vec![
            v("baseline", baseline, m.clone()),
            v("RDROP", TrainConfig { mode: Mode::Rdrop, ..vancl.clone() }, m.clone()),
            v("MUTUAL", TrainConfig { mode: Mode::Mutual, ..vancl.clone() }, m.clone()),
            v("VANCL", vancl, m),
        ],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub suite: Suite,
    pub row: String,
    pub x: Option<f64>,
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub metrics: MetricsReport,
}

#[derive(Serialize)]
struct CellKey<'a> {
    suite: &'a str,
    row: &'a str,
    x: Option<f64>,
    train: &'a TrainConfig,
    model: &'a ModelConfig,
    corpus: &'a str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Aggregate of one row (and x) over seeds. Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub row: String,
    pub x: Option<f64>,
    pub f1_runs: Vec<f64>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub per_type_f1: BTreeMap<String, MeanStd>,
}

/// Colors of one built-in scheme row, listed in the COLORS report header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeHeader {
    pub row: usize,
    pub name: String,
    pub mode: PaintMode,
    /// Label to `#RRGGBB`, in label-set order with OTHER last.
    pub colors: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub corpus_digest: String,
    pub labels: Vec<String>,
    pub schemes: Vec<SchemeHeader>,
    pub rows: Vec<ReportRow>,
}

fn cell_key(suite: Suite, v: &Variant, train: &TrainConfig, corpus: &str) -> String {
    crate::digest_json(&CellKey {
        suite: suite.as_str(),
        row: &v.row,
        x: v.x,
        train,
        model: &v.model,
        corpus,
    })
}

fn run_cell(suite: Suite, v: &Variant, train_cfg: &TrainConfig, corpus: &CorpusSplit, labels: &LabelSet) -> Result<CellResult> {
    let docs: Vec<Document> = match v.x {
        Some(p) if p < 100.0 => subsample(&corpus.train, p / 100.0, train_cfg.seed)?,
        _ => corpus.train.clone(),
    };
    let metrics = match v.model.precision {
        Precision::F32 => evaluate(&train::<f32>(&docs, &[], labels, train_cfg, &v.model)?.model, &corpus.test)?,
        Precision::F64 => evaluate(&train::<f64>(&docs, &[], labels, train_cfg, &v.model)?.model, &corpus.test)?,
    };
    Ok(CellResult {
        suite,
        row: v.row.clone(),
        x: v.x,
        seed: train_cfg.seed,
        train: train_cfg.clone(),
        model: v.model.clone(),
        metrics,
    })
}

/// Runs every missing cell of `suite` on the corpus in `data`, then writes
/// `<suite>.json` and `<suite>.md` into `out`.
pub fn run_ablation(suite: Suite, base: &RunConfig, data: &Path, out: &Path, opts: &AblationOptions) -> Result<AblationReport> {
    if opts.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    base.train.validate()?;
    let (corpus, labels) = CorpusSplit::load(data)?;
    let corpus_digest = super::corpus_digest(&corpus);
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;

    let variants = variants(suite, base);
    let mut plan = Vec::new();
    for v in &variants {
        for &seed in &opts.seeds {
            let t = TrainConfig { seed, ..v.train.clone() };
            let path = cells_dir.join(format!("{}.json", cell_key(suite, v, &t, &corpus_digest)));
            plan.push((v, t, path));
        }
    }

    let finished = AtomicUsize::new(0);
    let limit = opts.fail_after.unwrap_or(usize::MAX);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        plan.par_iter().with_max_len(1).try_for_each(|(v, t, path)| -> Result<()> {
            if path.exists() || finished.load(Ordering::SeqCst) >= limit {
                return Ok(());
            }
            let result = run_cell(suite, v, t, &corpus, &labels)?;
            write_atomic(path, &serde_json::to_vec_pretty(&result)?)?;
            finished.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
    })?;
    let done = finished.load(Ordering::SeqCst);
    if done >= limit {
        return Err(Error::Interrupted { completed: done });
    }

    let mut results: Vec<CellResult> = Vec::with_capacity(plan.len());
    for (_, _, path) in &plan {
        results.push(read_json(path)?);
    }
    let report = aggregate(suite, base, opts, &corpus_digest, &labels, &variants, &results)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    let stem = suite.as_str().to_lowercase();
    write_atomic(&out.join(format!("{stem}.json")), &json)?;
    write_atomic(&out.join(format!("{stem}.md")), render_markdown(&report).as_bytes())?;
    Ok(report)
}

fn aggregate(
    suite: Suite,
    base: &RunConfig,
    opts: &AblationOptions,
    corpus_digest: &str,
    labels: &LabelSet,
    variants: &[Variant],
    results: &[CellResult],
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let runs: Vec<&CellResult> = results.iter().filter(|r| r.row == v.row && r.x == v.x).collect();
        let pct = |f: &dyn Fn(&CellResult) -> f64| MeanStd::of(&runs.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>());
        let per_type_f1 = labels
            .names()
            .iter()
            .map(|l| (l.clone(), pct(&|r| r.metrics.per_type.get(l).map_or(0.0, |t| t.f1))))
            .collect();
        rows.push(ReportRow {
            row: v.row.clone(),
            x: v.x,
            f1_runs: runs.iter().map(|r| 100.0 * r.metrics.micro.f1).collect(),
            precision: pct(&|r| r.metrics.micro.p),
            recall: pct(&|r| r.metrics.micro.r),
            f1: pct(&|r| r.metrics.micro.f1),
            per_type_f1,
        });
    }
    let schemes = if suite == Suite::Colors {
        (1..=8)
            .map(|row| -> Result<SchemeHeader> {
                let s = builtin_scheme(row)?;
                let mut colors = Vec::new();
                let mut mode = PaintMode::Fill;
                for l in labels.with_other() {
                    let st = s.style(&l)?;
                    mode = st.mode;
                    colors.push((l, format!("#{:02X}{:02X}{:02X}", st.rgb[0], st.rgb[1], st.rgb[2])));
                }
                Ok(SchemeHeader {
                    row,
                    name: s.name,
                    mode,
                    colors,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(AblationReport {
        suite,
        config: base.clone(),
        seeds: opts.seeds.clone(),
        corpus_digest: corpus_digest.to_string(),
        labels: labels.names().to_vec(),
        schemes,
        rows,
    })
}

fn fmt_percent(p: f64) -> String {
    format!("{p}%")
}

/// Markdown tables: a row × percentage grid for LOWRES, per-type colors and F1 for COLORS,
/// and precision / recall / F1 per setting otherwise. Scores are mean ± std over seeds.
pub fn render_markdown(r: &AblationReport) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "# {} ablation\n", r.suite.as_str());
    let _ = writeln!(s, "Seeds: {}. Corpus: `{}`. Scores: entity F1 (%), mean ± std over seeds.\n", seeds.join(", "), r.corpus_digest);
    match r.suite {
        Suite::Lowres => {
            let _ = writeln!(
                s,
                "| Model | {} |",
                LOWRES_PERCENTS.iter().map(|&p| fmt_percent(p)).collect::<Vec<_>>().join(" | ")
            );
            let _ = writeln!(s, "|---|{}", "---|".repeat(LOWRES_PERCENTS.len()));
            let mut names: Vec<&str> = Vec::new();
            for row in &r.rows {
                if !names.contains(&row.row.as_str()) {
                    names.push(&row.row);
                }
            }
            for name in names {
                let cells: Vec<String> = LOWRES_PERCENTS
                    .iter()
                    .map(|&p| {
                        r.rows
                            .iter()
                            .find(|x| x.row == name && x.x == Some(p))
                            .map_or("-".into(), |x| x.f1.to_string())
                    })
                    .collect();
                let _ = writeln!(s, "| {name} | {} |", cells.join(" | "));
            }
        }
        Suite::Colors => {
            let _ = writeln!(s, "Scheme colors:\n");
            for h in &r.schemes {
                let list: Vec<String> = h.colors.iter().map(|(l, c)| format!("{l} {c}")).collect();
                let _ = writeln!(s, "- {} ({}, {:?}): {}", h.row, h.name, h.mode, list.join(", "));
            }
            let _ = writeln!(s);
            let mut head = String::from("| Scheme |");
            let mut rule = String::from("|---|");
            for l in r.schemes.first().map(|h| h.colors.iter().map(|c| c.0.clone()).collect()).unwrap_or_else(Vec::new) {
                let _ = write!(head, " {l} color | {l} F1 |");
                rule.push_str("---|---|");
            }
            let _ = writeln!(s, "{head} micro-avg |\n{rule}---|");
            for (row, h) in r.rows.iter().zip(&r.schemes) {
                let mut line = format!("| {} |", h.row);
                for (l, c) in &h.colors {
                    let f1 = row.per_type_f1.get(l).map_or("-".into(), |m| m.to_string());
                    let _ = write!(line, " {c} | {f1} |");
                }
                let _ = writeln!(s, "{line} {} |", row.f1);
            }
        }
        _ => {
            let mut head = String::from("| Setting | P | R | F1 |");
            let mut rule = String::from("|---|---|---|---|");
            for l in &r.labels {
                let _ = write!(head, " {l} F1 |");
                rule.push_str("---|");
            }
            let _ = writeln!(s, "{head}\n{rule}");
            for row in &r.rows {
                let mut line = format!("| {} | {} | {} | {} |", row.row, row.precision, row.recall, row.f1);
                for l in &r.labels {
                    let _ = write!(line, " {} |", row.per_type_f1[l]);
                }
                let _ = writeln!(s, "{line}");
            }
        }
    }
    let _ = writeln!(s, "\nResolved config:\n\n```json\n{}\n```", serde_json::to_string_pretty(&r.config).unwrap_or_default());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_grid_has_two_rows() {
        let v = variants(Suite::Consistency, &RunConfig::default());
        assert_eq!(v.iter().map(|v| v.row.as_str()).collect::<Vec<_>>(), ["VANCL", "NONE"]);
        assert_eq!(v[1].train.mode, Mode::None);
        assert!(!v[1].train.baseline);
    }

    #[test]
    fn lowres_axis() {
        let v = variants(Suite::Lowres, &RunConfig::default());
        assert_eq!(v.len(), 10);
        let xs: Vec<f64> = v.iter().filter(|v| v.row == "VANCL").filter_map(|v| v.x).collect();
        assert_eq!(xs, [5.0, 12.5, 25.0, 50.0, 100.0]);
    }

    #[test]
    fn every_variant_validates() {
        for suite in Suite::value_variants() {
            for v in variants(*suite, &RunConfig::default()) {
                v.train.validate().unwrap();
            }
        }
    }

    #[test]
    fn sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn keys_differ_by_seed() {
        let base = RunConfig::default();
        let v = &variants(Suite::Consistency, &base)[0];
        let a = cell_key(Suite::Consistency, v, &TrainConfig { seed: 0, ..v.train.clone() }, "c");
        let b = cell_key(Suite::Consistency, v, &TrainConfig { seed: 1, ..v.train.clone() }, "c");
        assert_ne!(a, b);
    }
}
