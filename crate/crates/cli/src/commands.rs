use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adens::config::{RunConfig, TrainingMode};
use adens::corpus::{
    encode_documents, generate_synthetic_corpora, read_jsonl, vocab_overlap_by_decade, write_jsonl, write_word_vectors,
    CorpusGenSpec, Document, Domain, Task, Vocabulary,
};
use adens::ensembling::{evaluate, AdaptiveState, DiagnosticsLog, TrainOutput, Trainer, TrainingData};
use adens::evaluation::{
    constant_distributions, decisions, extract_subcorpus, f1_scores, indicators, pca_2d, ExtractionReport, Histogram,
    LayerSelection, Metrics,
};
use adens::io::{write_atomic, write_json_pretty};
use adens::model::TrainedModel;
use adens::Error;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::manifest::{sha256_file, RunManifest};
use crate::{output_dir, CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "metrics_history.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONSTANTS_FILE: &str = "adaptive_constants.json";
pub const LATENTS_FILE: &str = "latents.csv";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";

/// Source documents whose latents are stored next to the development set.
const LATENT_SOURCE_DOCS: usize = 200;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON).
    pub config: PathBuf,
    /// Run directory (default: $ADENS_OUTPUT_DIR/<mode>-seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sweep the standard learning-rate, batch-size and minimum-count grids.
    #[arg(long)]
    pub grid: bool,
    /// Allow values outside the standard grids.
    #[arg(long = "override")]
    pub allow_off_grid: bool,
    /// Override a config field, e.g. `--set model.n_layers=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError {
        code: 1,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn read_docs(path: &Path) -> CliResult<Vec<Document>> {
    read_jsonl(path).map_err(|e| match e {
        Error::Io(io) => CliError::usage(format!("cannot read {}: {io}", path.display())),
        other => CliError::usage(format!("{}: {other}", path.display())),
    })
}

fn overlap_table(overlap: &BTreeMap<i32, f64>) -> String {
    let mut out = String::from("decade  overlap%\n");
    for (decade, pct) in overlap {
        writeln!(out, "{decade}s  {pct:>8.2}").expect("writing to a string");
    }
    out
}

#[derive(Serialize)]
struct GenerationReport<'a> {
    spec: &'a CorpusGenSpec,
    counts: BTreeMap<&'static str, usize>,
    overlap_by_decade: BTreeMap<i32, f64>,
}

/// Writes the generated corpora and returns the output directory.
pub fn cmd_gen_corpus(spec_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let text =
        std::fs::read_to_string(spec_path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: CorpusGenSpec = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid spec: {e}")))?;
    let corpora = generate_synthetic_corpora(&spec)?;
    let dir = output_dir(out, "corpus");
    mkdir(&dir)?;
    write_jsonl(dir.join("source.jsonl"), &corpora.source)?;
    write_jsonl(dir.join("target_unlabeled.jsonl"), &corpora.target_unlabeled)?;
    write_jsonl(dir.join("dev.jsonl"), &corpora.target_dev)?;
    write_jsonl(dir.join("test.jsonl"), &corpora.target_test)?;
    let gold: Vec<Document> = corpora
        .target_unlabeled
        .iter()
        .zip(&corpora.target_unlabeled_gold)
        .map(|(d, labels)| Document {
            labels: Some(labels.clone()),
            ..d.clone()
        })
        .collect();
    write_jsonl(dir.join("target_unlabeled_gold.jsonl"), &gold)?;
    if !corpora.embeddings.is_empty() {
        write_word_vectors(dir.join("embeddings.txt"), &corpora.embeddings)?;
    }

    let source_vocab = Vocabulary::build(&corpora.source, 1)?;
    let overlap = vocab_overlap_by_decade(&corpora.target_unlabeled, &source_vocab);
    print!("{}", overlap_table(&overlap));
    let report = GenerationReport {
        spec: &spec,
        counts: BTreeMap::from([
            ("source", corpora.source.len()),
            ("target_unlabeled", corpora.target_unlabeled.len()),
            ("dev", corpora.target_dev.len()),
            ("test", corpora.target_test.len()),
        ]),
        overlap_by_decade: overlap,
    };
    write_json_pretty(dir.join("generation_report.json"), &report)?;
    Ok(dir)
}

/// Adaptive constants of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsDump {
    pub n_layers: usize,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

impl ConstantsDump {
    fn from_state(state: &AdaptiveState, n_layers: usize) -> Self {
        Self {
            n_layers,
            names: state.names.clone(),
            shapes: state.constants.iter().map(|c| c.shape().to_vec()).collect(),
            values: state.constants.iter().map(|c| c.data().to_vec()).collect(),
        }
    }

    fn into_state(self) -> CliResult<AdaptiveState> {
        let constants = self
            .shapes
            .into_iter()
            .zip(self.values)
            .map(|(s, v)| adens::autodiff::Tensor::new(s, v))
            .collect::<adens::Result<Vec<_>>>()?;
        Ok(AdaptiveState {
            constants,
            names: self.names,
            epsilon: 0.0,
        })
    }
}

struct Inputs {
    source: Vec<Document>,
    target: Vec<Document>,
    dev: Vec<Document>,
    test: Option<Vec<Document>>,
}

fn load_inputs(cfg: &RunConfig) -> CliResult<(Inputs, BTreeMap<String, String>)> {
    let mut checksums = BTreeMap::new();
    for (field, path) in cfg.data.required() {
        if !path.is_file() {
            return Err(CliError::usage(format!("{field}: missing data file {}", path.display())));
        }
        checksums.insert(field.to_string(), sha256_file(path).map_err(Error::Io)?);
    }
    let inputs = Inputs {
        source: read_docs(&cfg.data.source)?,
        target: read_docs(&cfg.data.target_unlabeled)?,
        dev: read_docs(&cfg.data.dev)?,
        test: cfg.data.test.as_deref().map(read_docs).transpose()?,
    };
    Ok((inputs, checksums))
}

fn write_latents(path: &Path, model: &TrainedModel, source: &[Document], dev: &[Document]) -> CliResult<()> {
    let src = &source[..source.len().min(LATENT_SOURCE_DOCS)];
    let mut out = String::from("domain");
    let dim = model.config.latent_dim();
    for i in 0..dim {
        write!(out, ",z{i}").expect("writing to a string");
    }
    out.push('\n');
    for (docs, tag) in [(src, "SOURCE"), (dev, "TARGET")] {
        for p in model.predict(docs)? {
            out.push_str(tag);
            for v in &p.latent {
                write!(out, ",{v}").expect("writing to a string");
            }
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

fn test_metrics(model: &TrainedModel, docs: &[Document], threshold: f64) -> CliResult<Metrics> {
    let encoded = encode_documents(docs, &model.vocabulary, model.config.max_len, model.task)?;
    Ok(evaluate(
        &encoded,
        &model.params,
        &model.config,
        &model.year_normalizer,
        model.task.class_names(),
        threshold,
    )?)
}

fn run_single(cfg: &RunConfig, dir: &Path, inputs: &Inputs, checksums: BTreeMap<String, String>) -> CliResult<RunManifest> {
    mkdir(dir)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let data = TrainingData {
        source: &inputs.source,
        target: &inputs.target,
        dev: &inputs.dev,
    };
    let mut trainer = Trainer::new(cfg, data)?;
    if let Err(e) = trainer.run() {
        if let Error::Divergence { .. } = e {
            let dump = dir.join("divergence_diagnostics.csv");
            trainer.diagnostics.write_csv(&dump)?;
            write_json_pretty(dir.join(HISTORY_FILE), &trainer.history)?;
            return Err(CliError {
                code: 3,
                message: format!("{e}; diagnostics written to {}", dump.display()),
            });
        }
        return Err(e.into());
    }
    let resolved = trainer.config().clone();
    let TrainOutput {
        model,
        state,
        history,
        diagnostics,
        best_epoch,
        ..
    } = trainer.finish();

    let mut artifacts = vec![CHECKPOINT_FILE, HISTORY_FILE, DIAGNOSTICS_FILE, LATENTS_FILE];
    model.save(dir.join(CHECKPOINT_FILE))?;
    write_json_pretty(dir.join(HISTORY_FILE), &history)?;
    diagnostics.write_csv(dir.join(DIAGNOSTICS_FILE))?;
    write_latents(&dir.join(LATENTS_FILE), &model, &inputs.source, &inputs.dev)?;
    if let Some(adaptive) = &state.adaptive {
        write_json_pretty(
            dir.join(CONSTANTS_FILE),
            &ConstantsDump::from_state(adaptive, state.model.n_layers),
        )?;
        artifacts.push(CONSTANTS_FILE);
    }
    let test = match &inputs.test {
        Some(docs) => {
            let m = test_metrics(&model, docs, resolved.threshold)?;
            write_json_pretty(dir.join(TEST_METRICS_FILE), &m)?;
            artifacts.push(TEST_METRICS_FILE);
            Some(m)
        }
        None => None,
    };
    let dev = history.iter().find(|h| h.epoch == best_epoch).and_then(|h| h.dev.clone());
    artifacts.push(MANIFEST_FILE);
    let manifest = RunManifest {
        config: resolved,
        corpus_checksums: checksums,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        artifacts: artifacts.into_iter().map(String::from).collect(),
        best_epoch,
        steps: state.step,
        dev_metrics: dev,
        test_metrics: test,
    };
    write_json_pretty(dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Result of `train`: one manifest per run, with the index of the best
/// development score when a grid was swept.
pub struct TrainSummary {
    pub dir: PathBuf,
    pub runs: Vec<RunManifest>,
    pub best: usize,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| match e {
        Error::Io(io) => CliError::usage(format!("cannot read {}: {io}", args.config.display())),
        other => CliError::usage(format!("invalid config: {other}")),
    })?;
    for s in &args.sets {
        cfg.apply_override(s)?;
    }
    if args.allow_off_grid {
        cfg.allow_off_grid = true;
    }
    cfg.validate()?;
    let (inputs, checksums) = load_inputs(&cfg)?;
    let dir = output_dir(args.out.as_deref(), &format!("{}-seed{}", cfg.mode.label(), cfg.seed));

    if !args.grid {
        let m = run_single(&cfg, &dir, &inputs, checksums)?;
        report_run(&dir, &m);
        return Ok(TrainSummary {
            dir,
            runs: vec![m],
            best: 0,
        });
    }

    let mut runs = Vec::new();
    let mut table = String::from("run,lr,batch_size,min_count,dev_macro_f1\n");
    for (i, point) in cfg.grid().into_iter().enumerate() {
        let sub = dir.join(format!("grid-{i:02}"));
        let m = run_single(&point, &sub, &inputs, checksums.clone())?;
        let score = m.dev_metrics.as_ref().map_or(f64::NAN, |d| d.macro_f1);
        writeln!(table, "{i},{},{},{},{score}", point.lr, point.batch_size, point.min_count).expect("writing to a string");
        runs.push(m);
    }
    let best = runs
        .iter()
        .enumerate()
        .max_by(|a, b| {
            let sa = a.1.dev_metrics.as_ref().map_or(f64::NEG_INFINITY, |d| d.macro_f1);
            let sb = b.1.dev_metrics.as_ref().map_or(f64::NEG_INFINITY, |d| d.macro_f1);
            sa.total_cmp(&sb).then(b.0.cmp(&a.0))
        })
        .map_or(0, |(i, _)| i);
    write_atomic(dir.join("grid_summary.csv"), table.as_bytes())?;
    write_json_pretty(dir.join("grid_best.json"), &runs[best].config)?;
    print!("{table}");
    println!("best: grid-{best:02}");
    Ok(TrainSummary { dir, runs, best })
}

fn report_run(dir: &Path, m: &RunManifest) {
    println!("run directory: {}", dir.display());
    println!("steps: {}, best epoch: {}", m.steps, m.best_epoch);
    if let Some(d) = &m.dev_metrics {
        println!("dev   micro-F1 {:.4}  macro-F1 {:.4}", d.micro_f1, d.macro_f1);
    }
    if let Some(t) = &m.test_metrics {
        println!("test  micro-F1 {:.4}  macro-F1 {:.4}", t.micro_f1, t.macro_f1);
    }
}

fn load_checkpoint(path: &Path) -> CliResult<TrainedModel> {
    TrainedModel::load(path).map_err(|e| CliError::usage(format!("cannot load checkpoint {}: {e}", path.display())))
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>, threshold: f64) -> CliResult<Metrics> {
    let model = load_checkpoint(checkpoint)?;
    let docs = read_docs(data)?;
    if docs.is_empty() {
        return Err(CliError::usage("no documents to evaluate"));
    }
    let gold = docs
        .iter()
        .map(|d| {
            d.label_ids(model.task)?
                .ok_or_else(|| Error::Data(format!("document `{}`: labels required", d.id)))
        })
        .collect::<adens::Result<Vec<_>>>()
        .map_err(|e| CliError::usage(format!("labels required and must match the checkpoint task: {e}")))?;
    let preds = model.predict(&docs)?;
    let decided: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| decisions(&p.probs, model.config.head, threshold))
        .collect();
    let metrics = f1_scores(
        &decided,
        &indicators(&gold, model.config.n_classes)?,
        model.task.class_names(),
    )?;
    let json = serde_json::to_string_pretty(&metrics).map_err(Error::Json)?;
    println!("{json}");
    if let Some(path) = out {
        write_atomic(path, json.as_bytes())?;
    }
    Ok(metrics)
}

fn count_table(title: &str, counts: impl IntoIterator<Item = (String, usize)>) -> String {
    let mut out = format!("{title}\n");
    for (k, v) in counts {
        writeln!(out, "  {k:<12} {v:>8}").expect("writing to a string");
    }
    out
}

pub fn cmd_extract(checkpoint: &Path, data: &Path, out: Option<&Path>) -> CliResult<ExtractionReport> {
    let model = load_checkpoint(checkpoint)?;
    if model.task != Task::Binary {
        return Err(CliError::usage("extraction needs a binary-task checkpoint"));
    }
    let positive = model.task.positive_class().expect("binary task has a positive class");
    let docs = read_docs(data)?;
    let (kept, report) = extract_subcorpus(&model, &docs, positive)?;
    let dir = output_dir(out, "extract");
    mkdir(&dir)?;
    write_jsonl(dir.join("subcorpus.jsonl"), &kept)?;
    write_json_pretty(dir.join("extraction_report.json"), &report)?;
    print!(
        "{}",
        count_table(
            "documents per decade",
            report.per_decade.iter().map(|(d, n)| (format!("{d}s"), *n))
        )
    );
    print!(
        "{}",
        count_table("documents per source", report.per_source.iter().map(|(s, n)| (s.clone(), *n)))
    );
    println!("extracted {} of {}", report.total, report.input_total);
    Ok(report)
}

fn write_columns(path: &Path, log: &DiagnosticsLog, names: &[String]) -> CliResult<()> {
    let idx: Vec<usize> = names.iter().map(|n| log.column_index(n).expect("column exists")).collect();
    let mut sub = DiagnosticsLog::new(names.to_vec());
    for row in &log.rows {
        sub.push(idx.iter().map(|&i| row[i]).collect());
    }
    sub.write_csv(path)?;
    Ok(())
}

fn histograms_csv(hists: &[Histogram]) -> String {
    let edges = Histogram::bin_edges();
    let mut out = String::from("layer,array,bin_lo,bin_hi,count\n");
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            writeln!(out, "{},{},{},{},{c}", h.selection.label(), h.array, edges[i], edges[i + 1]).expect("writing to a string");
        }
    }
    out
}

fn pca_csv(latents: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(latents).map_err(Error::Io)?;
    let mut rows = Vec::new();
    let mut domains = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let mut fields = line.split(',');
        let domain = match fields.next() {
            Some("SOURCE") => Domain::Source,
            Some("TARGET") => Domain::Target,
            other => return Err(CliError::usage(format!("latents: unknown domain {other:?}"))),
        };
        let row = fields
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("latents: {e}")))?;
        rows.push(row);
        domains.push(domain);
    }
    let pca = pca_2d(&rows, &domains)?;
    if pca.rank_deficient {
        eprintln!("warning: latents span fewer than two directions; y is 0");
    }
    let mut out = String::from("x,y,domain\n");
    for p in &pca.points {
        let tag = match p.domain {
            Domain::Source => "SOURCE",
            Domain::Target => "TARGET",
        };
        writeln!(out, "{},{},{tag}", p.x, p.y).expect("writing to a string");
    }
    Ok(out)
}

/// Writes plot-ready CSVs derived from a run directory.
pub fn cmd_diagnose(run: &Path, out: Option<&Path>) -> CliResult<()> {
    let diag_path = run.join(DIAGNOSTICS_FILE);
    if !diag_path.is_file() {
        return Err(CliError::usage(format!("missing diagnostics: {}", diag_path.display())));
    }
    let log = DiagnosticsLog::read_csv(&diag_path)?;
    let dir = out.map_or_else(|| run.to_path_buf(), Path::to_path_buf);
    mkdir(&dir)?;

    let mut loss_cols: Vec<String> = ["step", "l_ce", "l_mse"].map(String::from).to_vec();
    if log.column_index("l_mse_after").is_some() {
        loss_cols.push("l_mse_after".into());
    }
    write_columns(&dir.join("loss_curves.csv"), &log, &loss_cols)?;

    let samples: Vec<String> = log.columns.iter().filter(|c| c.starts_with("c_sample_")).cloned().collect();
    if !samples.is_empty() {
        let mut cols = vec!["step".to_string()];
        cols.extend(samples);
        write_columns(&dir.join("c_trajectories.csv"), &log, &cols)?;
    }

    let constants = run.join(CONSTANTS_FILE);
    if constants.is_file() {
        let dump: ConstantsDump =
            serde_json::from_str(&std::fs::read_to_string(&constants).map_err(Error::Io)?).map_err(Error::Json)?;
        let n_layers = dump.n_layers;
        let state = dump.into_state()?;
        let mut hists = Vec::new();
        for sel in LayerSelection::ALL {
            hists.extend(constant_distributions(Some(&state), n_layers, sel)?);
        }
        write_atomic(dir.join("c_histograms.csv"), histograms_csv(&hists).as_bytes())?;
    }

    let latents = run.join(LATENTS_FILE);
    if latents.is_file() {
        write_atomic(dir.join("pca_points.csv"), pca_csv(&latents)?.as_bytes())?;
    }
    if let Ok(text) = std::fs::read_to_string(run.join(MANIFEST_FILE)) {
        if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
            if m.config.mode != TrainingMode::Ae {
                println!("{} run: no adaptive constants to plot", m.config.mode.label());
            }
        }
    }
    println!("plot data written to {}", dir.display());
    Ok(())
}
