//! Command-line interface.
//!
//! Exit codes:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | usage or input error                      |
//! | 2    | model, tokenizer or dataset failed to load |
//! | 3    | non-finite values during computation      |

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use logit_lens_core::{Model, ProbeConfig, SweepConfig, TokenSequence};
use serde_json::json;

use crate::checkpoint::{load_model_dir, load_tokenizer_dir, CONFIG_FILE, WEIGHTS_FILE};
use crate::dataset::{default_template, read_jsonl, read_template};
use crate::error::Error;
use crate::manifest::{OutputDir, RunManifest};
use crate::probe_curves::{
    collect_states, export_states, import_states, layer_accuracy_curves, ProbePrompting,
};
use crate::report::{self, MetricKind, ProbeTable};
use crate::sweep::{run_sweep, SweepContext};
use crate::tokenizer::{Tokenizer, GPT2_MERGES, GPT2_VOCAB};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_LOAD: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;

pub const STATES_TENSORS: &str = "states.safetensors";
pub const STATES_SIDECAR: &str = "states.json";

#[derive(Debug, Parser)]
#[command(name = "logit-lens", version, about = "Decode GPT-2 hidden states layer by layer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Heatmap of per-layer top-1 tokens and one metric for a single text.
    Lens(LensArgs),
    /// Accuracy and refinement statistics across gold-document positions.
    Sweep(SweepArgs),
    /// Per-layer linear probes compared with lens accuracy.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Directory with config.json, model.safetensors and optionally
    /// vocab.json + merges.txt.
    #[arg(long, env = "LOGIT_LENS_MODEL_DIR")]
    pub model: PathBuf,
    /// Output directory; every output path is relative to it.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all processors). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LensArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, conflicts_with = "text_file", required_unless_present = "text_file")]
    pub text: Option<String>,
    #[arg(long)]
    pub text_file: Option<PathBuf>,
    /// max_prob, cross_entropy or forward_kl.
    #[arg(long, default_value = "max_prob")]
    pub metric: MetricKind,
}

#[derive(Debug, Args)]
pub struct QaArgs {
    /// JSON-lines QA dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prompt template JSON (default: the bundled qa-v1 template).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Use only the first N instances.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub qa: QaArgs,
    /// Documents per prompt.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Gold-document positions, 0-based, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
    pub positions: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 16)]
    pub max_answer_tokens: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// QA dataset; not needed with --from-states.
    #[arg(long, required_unless_present = "from_states")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `all` or a comma-separated list of layers.
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub gold_position: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Also write the collected hidden states to the output directory.
    #[arg(long)]
    pub export_states: bool,
    /// Directory with previously exported states; skips the forward passes.
    #[arg(long, conflicts_with = "dataset")]
    pub from_states: Option<PathBuf>,
}

/// An error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CliError {}

fn load_failure(error: impl Into<Error>) -> CliError {
    CliError {
        code: EXIT_LOAD,
        error: error.into(),
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match &error {
            e if e.is_numerics() => EXIT_NUMERICS,
            Error::Safetensors(_)
            | Error::UnsupportedDtype { .. }
            | Error::Tokenizer(_)
            | Error::Dataset { .. } => EXIT_LOAD,
            _ => EXIT_USAGE,
        };
        CliError { code, error }
    }
}

impl From<logit_lens_core::Error> for CliError {
    fn from(e: logit_lens_core::Error) -> Self {
        Error::from(e).into()
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Lens(a) => cmd_lens(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Probe(a) => cmd_probe(&a),
    }
}

struct Loaded {
    model: Model,
    tokenizer: Tokenizer,
}

fn load(dir: &Path, manifest: &mut RunManifest) -> Result<Loaded, CliError> {
    let model = load_model_dir(dir).map_err(load_failure)?;
    let tokenizer = load_tokenizer_dir(dir).map_err(load_failure)?;
    if tokenizer.vocab_size() > model.config().vocab_size {
        return Err(load_failure(Error::Tokenizer(format!(
            "tokenizer has {} entries but the model only {}",
            tokenizer.vocab_size(),
            model.config().vocab_size
        ))));
    }
    for name in [CONFIG_FILE, WEIGHTS_FILE, "vocab.json", "merges.txt"] {
        let p = dir.join(name);
        if p.exists() {
            manifest.add_input(&p).map_err(load_failure)?;
        }
    }
    if !dir.join("vocab.json").exists() {
        manifest.config["bundled_tokenizer_sha256"] = json!(crate::manifest::sha256_bytes(
            format!("{GPT2_VOCAB}{GPT2_MERGES}").as_bytes()
        ));
    }
    Ok(Loaded { model, tokenizer })
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn finish(mut manifest: RunManifest, out: &OutputDir) -> Result<(), CliError> {
    manifest.outputs = out.written().to_vec();
    manifest.write(out.root())?;
    Ok(())
}

pub fn cmd_lens(args: &LensArgs) -> Result<(), CliError> {
    let text = match (&args.text, &args.text_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| load_failure(Error::io(p, e)))?,
        (None, None) => return Err(Error::InvalidInput("give --text or --text-file".into()).into()),
    };
    let mut manifest = RunManifest::new(
        "lens",
        0,
        json!({
            "model": args.common.model,
            "metric": args.metric,
            "text": text,
        }),
    );
    if let Some(p) = &args.text_file {
        manifest.add_input(p).map_err(load_failure)?;
    }
    let t = Instant::now();
    let Loaded { model, tokenizer } = load(&args.common.model, &mut manifest)?;
    manifest.timings.insert("load".into(), seconds(t));

    let t = Instant::now();
    let tokens: TokenSequence = tokenizer.encode(&text)?;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("the text encodes to no tokens".into()).into());
    }
    let trace = model.forward_with_taps(&tokens)?;
    let gold = report::next_token_gold(tokens.ids());
    let grid = report::build_heatmap(
        &model,
        &trace,
        tokens.ids(),
        args.metric,
        Some(&gold),
        |id| tokenizer.token_text(id),
    )?;
    manifest.timings.insert("compute".into(), seconds(t));

    let mut out = OutputDir::create(&args.common.out)?;
    let stem = format!("heatmap_{}", args.metric);
    out.write(&format!("{stem}.svg"), report::render_svg(&grid).as_bytes())?;
    out.write(&format!("{stem}.csv"), report::heatmap_csv(&grid)?.as_bytes())?;
    out.write(&format!("{stem}.json"), report::heatmap_json(&grid)?.as_bytes())?;
    finish(manifest, &out)
}

fn load_dataset(
    qa: &QaArgs,
    manifest: &mut RunManifest,
) -> Result<(Vec<logit_lens_core::QAInstance>, logit_lens_core::PromptTemplate), CliError> {
    let mut data = read_jsonl(&qa.dataset).map_err(load_failure)?;
    manifest.add_input(&qa.dataset).map_err(load_failure)?;
    if let Some(n) = qa.limit {
        data.truncate(n);
    }
    let template = match &qa.template {
        Some(p) => {
            manifest.add_input(p).map_err(load_failure)?;
            read_template(p).map_err(load_failure)?
        }
        None => default_template(),
    };
    Ok((data, template))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let config = SweepConfig {
        k_documents: args.k,
        gold_positions: args.positions.clone(),
        n_runs: args.runs,
        seed: args.qa.seed,
        max_answer_tokens: args.max_answer_tokens,
        confidence: args.confidence,
    };
    config.validate()?;
    let mut manifest = RunManifest::new(
        "sweep",
        args.qa.seed,
        json!({
            "model": args.common.model,
            "dataset": args.qa.dataset,
            "template": args.qa.template,
            "limit": args.qa.limit,
            "k_documents": config.k_documents,
            "gold_positions": config.gold_positions,
            "n_runs": config.n_runs,
            "seed": config.seed,
            "max_answer_tokens": config.max_answer_tokens,
            "confidence": config.confidence,
        }),
    );
    let t = Instant::now();
    let Loaded { model, tokenizer } = load(&args.common.model, &mut manifest)?;
    let (data, template) = load_dataset(&args.qa, &mut manifest)?;
    manifest.config["template_version"] = json!(template.version);
    manifest.timings.insert("load".into(), seconds(t));

    let t = Instant::now();
    let ctx = SweepContext {
        model: &model,
        tokenizer: &tokenizer,
        template: &template,
    };
    let result = run_sweep(ctx, &data, &config, args.common.workers)?;
    manifest.timings.insert("compute".into(), seconds(t));

    let mut out = OutputDir::create(&args.common.out)?;
    out.write("sweep.json", report::sweep_json(&result)?.as_bytes())?;
    out.write("sweep.csv", report::sweep_csv(&result)?.as_bytes())?;
    out.write("curves.csv", report::curves_csv(&result)?.as_bytes())?;
    finish(manifest, &out)
}

/// `all` or a comma-separated list, checked against `n_states`.
pub fn parse_layers(spec: &str, n_states: usize) -> Result<Vec<usize>, Error> {
    if spec.trim() == "all" {
        return Ok((0..n_states).collect());
    }
    spec.split(',')
        .map(|s| {
            let l: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad layer `{s}`")))?;
            if l >= n_states {
                return Err(Error::InvalidInput(format!(
                    "layer {l} out of range (the model has layers 0..={})",
                    n_states - 1
                )));
            }
            Ok(l)
        })
        .collect()
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<(), CliError> {
    let probe_config = ProbeConfig {
        learning_rate: args.lr,
        l2: args.l2,
        epochs: args.epochs,
        test_fraction: args.test_fraction,
    };
    let prompting = ProbePrompting {
        k_documents: args.k,
        gold_position: args.gold_position,
        seed: args.seed,
    };
    let mut manifest = RunManifest::new(
        "probe",
        args.seed,
        json!({
            "model": args.common.model,
            "dataset": args.dataset,
            "from_states": args.from_states,
            "template": args.template,
            "limit": args.limit,
            "layers": args.layers,
            "prompting": prompting,
            "epochs": probe_config.epochs,
            "learning_rate": probe_config.learning_rate,
            "l2": probe_config.l2,
            "test_fraction": probe_config.test_fraction,
        }),
    );
    let t = Instant::now();
    let Loaded { model, tokenizer } = load(&args.common.model, &mut manifest)?;
    let layers = parse_layers(&args.layers, model.config().n_states())?;
    manifest.timings.insert("load".into(), seconds(t));

    let t = Instant::now();
    let mut out = OutputDir::create(&args.common.out)?;
    let states = match (&args.from_states, &args.dataset) {
        (Some(dir), _) => {
            let (tensors, sidecar) = (dir.join(STATES_TENSORS), dir.join(STATES_SIDECAR));
            manifest.add_input(&tensors).map_err(load_failure)?;
            manifest.add_input(&sidecar).map_err(load_failure)?;
            import_states(&tensors, &sidecar).map_err(load_failure)?
        }
        (None, Some(dataset)) => {
            let qa = QaArgs {
                dataset: dataset.clone(),
                template: args.template.clone(),
                limit: args.limit,
                seed: args.seed,
            };
            let (data, template) = load_dataset(&qa, &mut manifest)?;
            let ctx = SweepContext {
                model: &model,
                tokenizer: &tokenizer,
                template: &template,
            };
            collect_states(ctx, &data, prompting, args.common.workers)?
        }
        (None, None) => return Err(Error::InvalidInput("give --dataset or --from-states".into()).into()),
    };
    if states.d_model != model.config().d_model || states.n_states() != model.config().n_states() {
        return Err(load_failure(Error::InvalidInput(
            "stored states do not match the model's shape".into(),
        )));
    }
    if args.export_states {
        export_states(&states, &out.path(STATES_TENSORS), &out.path(STATES_SIDECAR))?;
        out.record(STATES_TENSORS);
        out.record(STATES_SIDECAR);
    }
    let rows = layer_accuracy_curves(&model, &states, &layers, args.seed, &probe_config)?;
    manifest.timings.insert("compute".into(), seconds(t));

    let table = ProbeTable::new(states.candidates.clone(), rows);
    out.write("probe.csv", report::probe_csv(&table)?.as_bytes())?;
    out.write("probe.json", report::probe_json(&table)?.as_bytes())?;
    finish(manifest, &out)
}
