//! Command-line surface: `gen`, `paint`, `train`, `eval`, `predict`, `ablate` and
//! `export-embeddings`. Every command reads JSON configs and writes under `--out`.

pub mod ablate;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backbone::{
    forward_hidden, AnyModel, Flow, Model, ModelConfig, Precision, PreparedDoc, Scalar, TokenBatch,
};
use crate::decode::predict;
use crate::document::{Document, LabelSet};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::paint::{paint_document, ColorScheme};
use crate::synthgen::{generate_corpus, CorpusSplit, GenSpec};
use crate::vancl::{train, EpochLog, TrainConfig};
use crate::with_model;

pub use ablate::{run_ablation, AblationOptions, Suite};

/// Default for `--out` when the flag is absent.
pub const OUT_ENV: &str = "VANCL_OUT";

#[derive(Debug, Parser)]
#[command(name = "vancl", version, about = "Visually-asymmetric consistency learning for form entity recognition")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory [default: $VANCL_OUT, else ./out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and data preparation.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

impl Common {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    Sl,
    Ve,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen {
        /// GenSpec JSON; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Write painted copies of corpus pages.
    Paint {
        #[arg(long)]
        data: PathBuf,
        /// Built-in scheme row (1-8) or a JSON scheme file.
        #[arg(long, default_value = "1")]
        scheme: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Train a model on the train split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Single-flow training without the painted flow.
        #[arg(long)]
        baseline: bool,
    },
    /// Score a checkpoint on a split and write metrics.json.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Decode entities for every document of a split.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Run an ablation grid and write Markdown and JSON reports.
    Ablate {
        #[arg(long, value_enum, ignore_case = true)]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Stop with an error after this many newly finished cells.
        #[arg(long, hide = true)]
        fail_after: Option<usize>,
    },
    /// Write per-token final hidden states as TSV.
    ExportEmbeddings {
        /// Checkpoint; the painted flow needs one saved with the outer encoder.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = FlowArg::Sl)]
        flow: FlowArg,
        /// Scheme for the painted flow; `none` feeds it the original pages.
        #[arg(long, default_value = "1")]
        scheme: String,
    },
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => read_json(p),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Writes via a temporary sibling and a rename, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn select(split: &CorpusSplit, which: SplitArg) -> Vec<Document> {
    match which {
        SplitArg::Train => split.train.clone(),
        SplitArg::Test => split.test.clone(),
        SplitArg::All => split.train.iter().chain(&split.test).cloned().collect(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.common.out_dir();
    if cli.common.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    // A pool that already exists (library callers) is fine to reuse.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.common.jobs).build_global();
    match cli.command {
        Command::Gen { spec } => {
            let mut spec: GenSpec = match spec {
                Some(p) => read_json(&p)?,
                None => GenSpec::default(),
            };
            if let Some(s) = cli.common.seed {
                spec.seed = s;
            }
            cmd_gen(&spec, &out)
        }
        Command::Paint { data, scheme, split } => cmd_paint(&data, &scheme, split, &out),
        Command::Train { config, data, baseline } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(s) = cli.common.seed {
                cfg.train.seed = s;
            }
            if baseline {
                cfg.train = cfg.train.as_baseline();
            }
            cmd_train(&cfg, &data, &out)
        }
        Command::Eval { model, data, split } => cmd_eval(&model, &data, split, &out),
        Command::Predict { model, data, split } => cmd_predict(&model, &data, split, &out),
        Command::Ablate {
            suite,
            config,
            data,
            seeds,
            fail_after,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let opts = AblationOptions {
                seeds,
                fail_after,
                jobs: cli.common.jobs,
            };
            run_ablation(suite, &cfg, &data, &out, &opts).map(|_| ())
        }
        Command::ExportEmbeddings {
            model,
            data,
            split,
            flow,
            scheme,
        } => cmd_export_embeddings(&model, &data, split, flow, &scheme, &out),
    }
}

pub fn cmd_gen(spec: &GenSpec, out: &Path) -> Result<()> {
    let corpus = generate_corpus(spec)?;
    corpus.save(out, &spec.labels, Some(spec.digest()))?;
    write_json(&out.join("spec.json"), spec)
}

pub fn cmd_paint(data: &Path, scheme: &str, split: SplitArg, out: &Path) -> Result<()> {
    let (corpus, labels) = CorpusSplit::load(data)?;
    let scheme = ColorScheme::resolve(scheme)?;
    scheme.covers(&labels)?;
    for d in select(&corpus, split) {
        let painted = paint_document(&d, &scheme)?;
        write_atomic(&out.join(format!("{}.ppm", d.doc_id)), &painted.image.to_ppm())?;
    }
    write_atomic(&out.join("scheme.json"), &scheme.to_json_mapping()?)
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    config: &'a RunConfig,
    model_resolved: &'a ModelConfig,
    corpus_digest: String,
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (corpus, labels) = CorpusSplit::load(data)?;
    let (log, echo) = match cfg.model.precision {
        Precision::F32 => train_and_save::<f32>(cfg, &corpus, &labels, out)?,
        Precision::F64 => train_and_save::<f64>(cfg, &corpus, &labels, out)?,
    };
    let mut jsonl = String::new();
    for e in &log {
        writeln!(jsonl, "{}", serde_json::to_string(e)?).expect("string write");
        eprintln!("epoch {} L_final {:.4} ({:.1}s)", e.epoch, e.l_final, e.wall_s);
    }
    write_atomic(&out.join("train_log.jsonl"), jsonl.as_bytes())?;
    write_json(&out.join("config.json"), &echo)
}

fn corpus_digest(corpus: &CorpusSplit) -> String {
    let ids: Vec<_> = corpus.train.iter().chain(&corpus.test).map(|d| d.to_json()).collect();
    crate::digest_json(&ids)
}

fn train_and_save<T: Scalar>(
    cfg: &RunConfig,
    corpus: &CorpusSplit,
    labels: &LabelSet,
    out: &Path,
) -> Result<(Vec<EpochLog>, serde_json::Value)> {
    let result = train::<T>(&corpus.train, &corpus.test, labels, &cfg.train, &cfg.model)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("model.ckpt"), &result.model.to_bytes(false)?)?;
    write_atomic(&out.join("model_full.ckpt"), &result.model.to_bytes(true)?)?;
    let echo = serde_json::to_value(ResolvedRun {
        config: cfg,
        model_resolved: &result.model.config,
        corpus_digest: corpus_digest(corpus),
    })?;
    Ok((result.log, echo))
}

pub fn cmd_eval(model: &Path, data: &Path, split: SplitArg, out: &Path) -> Result<()> {
    let (corpus, _) = CorpusSplit::load(data)?;
    let docs = select(&corpus, split);
    let report = with_model!(AnyModel::load(model)?, m => evaluate(&m, &docs)?);
    write_json(&out.join("metrics.json"), &report)
}

pub fn cmd_predict(model: &Path, data: &Path, split: SplitArg, out: &Path) -> Result<()> {
    let (corpus, _) = CorpusSplit::load(data)?;
    let docs = select(&corpus, split);
    let refs: Vec<&Document> = docs.iter().collect();
    let preds = with_model!(AnyModel::load(model)?, m => predict(&m, &refs)?);
    for p in &preds {
        write_json(&out.join("predictions").join(format!("{}.json", p.doc_id)), p)?;
    }
    Ok(())
}

pub fn cmd_export_embeddings(
    model: &Path,
    data: &Path,
    split: SplitArg,
    flow: FlowArg,
    scheme: &str,
    out: &Path,
) -> Result<()> {
    let (corpus, _) = CorpusSplit::load(data)?;
    let docs = select(&corpus, split);
    let tsv = with_model!(AnyModel::load(model)?, m => {
        let scheme = match (flow, scheme) {
            (FlowArg::Sl, _) => None,
            (FlowArg::Ve, "none") => Some(ColorScheme::noop(&m.labels)),
            (FlowArg::Ve, s) => Some(ColorScheme::resolve(s)?),
        };
        embeddings_tsv(&m, &docs, scheme.as_ref())?
    });
    write_atomic(&out.join("embeddings.tsv"), tsv.as_bytes())
}

/// One row per real token: `doc_id`, token index, gold tag, then `d_model` values.
/// With a scheme, the painted flow runs on painted pages.
pub fn embeddings_tsv<T: Scalar>(model: &Model<T>, docs: &[Document], scheme: Option<&ColorScheme>) -> Result<String> {
    let tagset = model.tagset();
    let mut out = Vec::new();
    write!(out, "doc_id\ttoken_index\ttag").expect("vec write");
    for i in 0..model.config.d_model {
        write!(out, "\th{i}").expect("vec write");
    }
    out.push(b'\n');
    let outer = match (scheme, &model.config.outer_encoder) {
        (Some(_), Some(_)) => Some(
            model
                .outer
                .as_ref()
                .ok_or_else(|| Error::Config("the painted flow needs a checkpoint saved with the outer encoder".into()))?,
        ),
        _ => None,
    };
    for chunk in docs.chunks(16) {
        let prepared = chunk
            .iter()
            .map(|d| -> Result<PreparedDoc> {
                let sl = model.prepare(d)?;
                Ok(match scheme {
                    Some(s) => sl.with_image(d, &paint_document(d, s)?.image),
                    None => sl,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedDoc> = prepared.iter().collect();
        let batch = TokenBatch::from_prepared(&refs)?;
        let flow = if scheme.is_some() { Flow::Ve } else { Flow::Sl };
        let (_, hidden) = forward_hidden(&model.config, &model.params, outer, &batch, flow, false, 0)?;
        for (p, rows) in prepared.iter().zip(hidden) {
            for (i, row) in rows.iter().enumerate() {
                write!(out, "{}\t{i}\t{}", p.doc_id, tagset.tag(p.gold[i])).expect("vec write");
                for v in row {
                    write!(out, "\t{v}").expect("vec write");
                }
                out.push(b'\n');
            }
        }
    }
    Ok(String::from_utf8(out).expect("utf-8 output"))
}
