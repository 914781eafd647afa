use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use supcbm::annotate::{annotate_dataset, AnnotationSet};
use supcbm::baselines::{cbm_proj, train_dummy, train_fc_ablation};
use supcbm::checkpoint::{self, Model};
use supcbm::eval::{self, Edit, DEFAULT_FRACTIONS};
use supcbm::model;
use supcbm::optim::{sweep_learning_rate, EpochMetrics, TrainConfig, DEFAULT_ALPHA};
use supcbm::runlog::{sidecar_path, RunManifest};
use supcbm::service::{self, ServiceState};
use supcbm::store::{EmbeddingMatrix, LabeledDataset};
use supcbm::synth::{self, SyntheticConfig};
use supcbm::vocab::{
    emit_prompts, ingest_concept_dump, overlap_report, ClassLabel, ConceptDump, IngestOptions,
    PromptKind, VocabBundle,
};
use supcbm::{Error, Result};

/// Label-supervised concept bottleneck models over precomputed embeddings.
///
/// Log verbosity follows the RUST_LOG environment variable (default: info).
#[derive(Parser, Debug)]
#[command(name = "supcbm", version, about)]
struct Cli {
    /// Where to write the run manifest. Defaults to `<output>.run.json` for
    /// commands with an output file, stderr otherwise.
    #[arg(long, global = true, value_name = "PATH")]
    run_manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the two-level concept elicitation prompts.
    Prompts(PromptsArgs),
    /// Validate a concept dump and build the vocabulary and intervention matrix.
    Ingest(IngestArgs),
    /// Select the top-k concepts of each training image's own class.
    Annotate(AnnotateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report accuracy and tie statistics for a checkpoint.
    Eval(EvalArgs),
    /// Accuracy as the most important units are removed.
    Leakage(LeakageArgs),
    /// Override concept activations for one sample and re-score the labels.
    Intervene(InterveneArgs),
    /// Serve predictions and interventions over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic fixture with known generating concepts.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PromptFormat {
    Text,
    Json,
}

#[derive(Args, Debug, Serialize)]
struct PromptsArgs {
    /// Class names, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "classes_file")]
    classes: Vec<String>,
    /// File with one class name per line.
    #[arg(long)]
    classes_file: Option<PathBuf>,
    /// Parts to request per class.
    #[arg(long, default_value = "5")]
    p: NonZeroUsize,
    /// Characteristics to request per part.
    #[arg(long, default_value = "6")]
    q: NonZeroUsize,
    #[arg(long, value_enum, default_value = "text")]
    #[serde(skip)]
    format: PromptFormat,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// Concept dump JSON.
    #[arg(long)]
    dump: PathBuf,
    /// Output vocabulary bundle.
    #[arg(long)]
    out: PathBuf,
    /// Require exactly this many parts per class.
    #[arg(long)]
    parts_per_class: Option<usize>,
    /// Reject parts with more descriptions than this.
    #[arg(long)]
    max_descriptions: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct AnnotateArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Concept-text embedding manifest, rows in vocabulary id order.
    #[arg(long)]
    concepts: PathBuf,
    /// Labeled image embedding manifest.
    #[arg(long)]
    data: PathBuf,
    /// Concepts kept per perceptual group.
    #[arg(long, default_value = "2")]
    k: usize,
    /// Output annotations (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModelArg {
    Supcbm,
    Fc,
    Dummy,
    Proj,
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0, 1], got {a}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("fraction must lie in [0, 1], got {v}"))
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "supcbm")]
    model: ModelArg,
    /// Vocabulary bundle (fixes the concept and class sets).
    #[arg(long)]
    vocab: PathBuf,
    /// Training split manifest.
    #[arg(long)]
    data: PathBuf,
    /// Annotations for the training split (supcbm, fc).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Concept-text embeddings (proj).
    #[arg(long)]
    concepts: Option<PathBuf>,
    /// Dev split, used for per-epoch accuracy and learning-rate selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Weight of the concept loss against the label loss.
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = parse_alpha)]
    alpha: f64,
    #[arg(long, default_value = "0.01", value_parser = parse_positive)]
    lr: f64,
    /// Comma-separated learning rates; the best on --dev wins.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive, requires = "dev")]
    lr_grid: Vec<f64>,
    #[arg(long, default_value = "20")]
    epochs: usize,
    #[arg(long, default_value = "32", value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value = "0")]
    seed: u64,
    /// Checkpoint manifest to write; tensor blobs go alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary bundle; required for supcbm checkpoints.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct LeakageArgs {
    /// One or more checkpoints; each yields a curve.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated removal fractions, ascending from 0.
    #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
    fractions: Vec<f64>,
    /// CSV output (fraction,accuracy,model).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON summary output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct InterveneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Embedding manifest holding the sample.
    #[arg(long)]
    data: PathBuf,
    /// Row of the sample in --data.
    #[arg(long, default_value = "0")]
    row: usize,
    /// Concept edit `ID=off|on|clear`; repeatable.
    #[arg(long = "edit", value_parser = parse_edit)]
    #[serde(skip)]
    edits: Vec<(usize, Edit)>,
}

fn parse_edit(s: &str) -> std::result::Result<(usize, Edit), String> {
    let (id, e) = s
        .split_once('=')
        .ok_or_else(|| format!("expected ID=off|on|clear, got {s:?}"))?;
    let id = id.trim().parse().map_err(|e| format!("concept id: {e}"))?;
    let edit = e.parse().map_err(|e: Error| e.to_string())?;
    Ok((id, edit))
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory of static UI files served under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "7")]
    seed: u64,
    #[arg(long, default_value = "10")]
    classes: usize,
    #[arg(long, default_value = "5")]
    p: usize,
    #[arg(long, default_value = "6")]
    q: usize,
    /// Generating pairs per perceptual group.
    #[arg(long, default_value = "2")]
    k: usize,
    #[arg(long, default_value = "256")]
    dim: usize,
    #[arg(long, default_value = "200")]
    per_class: usize,
    /// Expected norm of the additive image noise.
    #[arg(long, default_value = "0.1")]
    noise: f64,
    /// Do not let adjacent classes share a generating pair.
    #[arg(long)]
    no_share: bool,
    /// Trailing class pairs with identical concept sets.
    #[arg(long, default_value = "0")]
    duplicate_pairs: usize,
}

/// Where the run manifest goes once the command succeeds.
enum ManifestSink {
    Path(PathBuf),
    Stderr,
}

struct Run {
    manifest: RunManifest,
    sink: ManifestSink,
}

impl Run {
    fn new(cli_path: &Option<PathBuf>, command: &str, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        Self {
            manifest: RunManifest::new(command, std::env::args().collect(), config),
            sink: match cli_path {
                Some(p) => ManifestSink::Path(p.clone()),
                None => ManifestSink::Stderr,
            },
        }
    }

    /// Marks `path` as the primary output; unless a manifest path was given
    /// explicitly, the manifest is written next to it.
    fn primary_output(&mut self, path: &Path) -> Result<()> {
        self.manifest.output(path)?;
        if matches!(self.sink, ManifestSink::Stderr) {
            self.sink = ManifestSink::Path(sidecar_path(path));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.sink {
            ManifestSink::Path(p) => self.manifest.write(&p),
            ManifestSink::Stderr => {
                eprintln!("{}", self.manifest.to_json());
                Ok(())
            }
        }
    }
}

fn print_json(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("output serializes")
    );
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_vocab(run: &mut Run, path: &Path) -> Result<VocabBundle> {
    run.manifest.input(path)?;
    VocabBundle::load(path)
}

fn load_dataset(run: &mut Run, path: &Path) -> Result<LabeledDataset> {
    run.manifest.input(path)?;
    LabeledDataset::load(path)
}

fn load_model(run: &mut Run, checkpoint: &Path, vocab: Option<&Path>) -> Result<Model> {
    let bundle = vocab.map(|v| load_vocab(run, v)).transpose()?;
    run.manifest.input(checkpoint)?;
    checkpoint::load(checkpoint, bundle.as_ref())
}

fn prompts(cli: &Cli, args: &PromptsArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "prompts", args);
    let mut names = args.classes.clone();
    if let Some(path) = &args.classes_file {
        run.manifest.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        names.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }
    let classes: Vec<ClassLabel> = names
        .into_iter()
        .enumerate()
        .map(|(index, name)| ClassLabel { index, name })
        .collect();
    let prompts = emit_prompts(&classes, args.p, args.q);
    match args.format {
        PromptFormat::Json => print_json(&prompts),
        PromptFormat::Text => {
            for p in &prompts {
                let kind = match p.kind {
                    PromptKind::Parts => "parts",
                    PromptKind::Characteristics => "characteristics",
                };
                println!("[{}] {kind}: {}", p.class, p.text);
            }
        }
    }
    run.finish()
}

fn ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "ingest", args);
    run.manifest.input(&args.dump)?;
    let dump = ConceptDump::from_path(&args.dump)?;
    let opts = IngestOptions {
        parts_per_class: args.parts_per_class,
        max_descriptions: args.max_descriptions,
    };
    let vocab = run
        .manifest
        .time("ingest", || ingest_concept_dump(&dump, opts))?;
    for w in vocab.warnings() {
        log::warn!("{} / {}: {}", w.class, w.part, w.message);
    }
    let bundle = VocabBundle::new(vocab);
    let overlaps = overlap_report(&bundle.matrix);
    for o in overlaps.iter().filter(|o| o.indistinguishable) {
        log::warn!(
            "classes {} and {} have identical concept sets and will always tie",
            o.class_a,
            o.class_b
        );
    }
    bundle.save(&args.out)?;
    run.primary_output(&args.out)?;
    run.manifest.result("classes", bundle.vocab.num_classes());
    run.manifest.result("concepts", bundle.vocab.num_concepts());
    run.manifest.result("warnings", bundle.vocab.warnings().len());
    run.manifest.result("fingerprint", bundle.fingerprint());
    println!(
        "{} classes, {} concepts, {} warnings",
        bundle.vocab.num_classes(),
        bundle.vocab.num_concepts(),
        bundle.vocab.warnings().len()
    );
    run.finish()
}

fn annotate(cli: &Cli, args: &AnnotateArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "annotate", args);
    let bundle = load_vocab(&mut run, &args.vocab)?;
    run.manifest.input(&args.concepts)?;
    let concepts = EmbeddingMatrix::load(&args.concepts)?;
    let data = load_dataset(&mut run, &args.data)?;
    let set = run.manifest.time("annotate", || {
        annotate_dataset(&data, &bundle.vocab, &concepts, args.k)
    })?;
    set.write_jsonl(&args.out)?;
    run.primary_output(&args.out)?;
    run.manifest.result("images", set.len());
    println!("annotated {} images", set.len());
    run.finish()
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "train", args);
    run.manifest.seed = Some(args.seed);
    let bundle = load_vocab(&mut run, &args.vocab)?;
    let data = load_dataset(&mut run, &args.data)?;
    let dev = args
        .dev
        .as_deref()
        .map(|p| load_dataset(&mut run, p))
        .transpose()?;
    let num_classes = bundle.vocab.num_classes();
    let annotations = match args.model {
        ModelArg::Supcbm | ModelArg::Fc => {
            let path = args.annotations.as_deref().ok_or_else(|| {
                Error::Config("--annotations is required for this model".into())
            })?;
            run.manifest.input(path)?;
            Some(AnnotationSet::read_jsonl(path, bundle.vocab.num_concepts())?)
        }
        _ => None,
    };
    let concepts = match args.model {
        ModelArg::Proj => {
            let path = args
                .concepts
                .as_deref()
                .ok_or_else(|| Error::Config("--concepts is required for proj".into()))?;
            run.manifest.input(path)?;
            Some(EmbeddingMatrix::load(path)?)
        }
        _ => None,
    };

    let base = TrainConfig {
        alpha: args.alpha,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size as usize,
        seed: args.seed,
        ..Default::default()
    };
    let fit = |config: &TrainConfig| -> Result<(Model, Vec<EpochMetrics>)> {
        let dev = dev.as_ref();
        Ok(match args.model {
            ModelArg::Supcbm => {
                let t = model::train(
                    &data,
                    annotations.as_ref().expect("checked"),
                    &bundle.matrix,
                    config,
                    dev,
                )?;
                (Model::Supcbm(t.model), t.history)
            }
            ModelArg::Fc => {
                let t = train_fc_ablation(
                    &data,
                    annotations.as_ref().expect("checked"),
                    num_classes,
                    config,
                    dev,
                )?;
                (Model::Fc(t.model), t.history)
            }
            ModelArg::Dummy => {
                let t = train_dummy(&data, num_classes, config, dev)?;
                (Model::Dummy(t.model), t.history)
            }
            ModelArg::Proj => {
                let t = cbm_proj(
                    &data,
                    concepts.as_ref().expect("checked"),
                    num_classes,
                    config,
                    dev,
                )?;
                (Model::Proj(t.model), t.history)
            }
        })
    };

    let (trained, history, config) = if args.lr_grid.is_empty() {
        let (m, h) = run.manifest.time("train", || fit(&base))?;
        (m, h, base)
    } else {
        let dev_set = dev.as_ref().expect("clap requires --dev with --lr-grid");
        let ((m, h, cfg), sweep) = run.manifest.time("train", || {
            sweep_learning_rate(&args.lr_grid, |lr| {
                let cfg = TrainConfig {
                    learning_rate: lr,
                    ..base.clone()
                };
                let (m, h) = fit(&cfg)?;
                let acc = eval::accuracy(m.as_dyn(), dev_set)?;
                log::info!("lr {lr}: dev accuracy {acc}");
                Ok(((m, h, cfg), acc))
            })
        })?;
        run.manifest.result("lr_sweep", &sweep);
        (m, h, cfg)
    };

    checkpoint::save(
        &args.out,
        &trained,
        &config,
        Some(bundle.fingerprint()),
        &history,
    )?;
    run.primary_output(&args.out)?;
    run.manifest.result("learning_rate", config.learning_rate);
    if let Some(last) = history.last() {
        run.manifest.result("final_train_loss", last.train_loss);
        if let Some(acc) = last.dev_accuracy {
            run.manifest.result("dev_accuracy", acc);
            println!("dev accuracy {acc:.4}");
        }
    }
    println!("wrote {}", args.out.display());
    run.finish()
}

fn evaluate(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "eval", args);
    let model = load_model(&mut run, &args.checkpoint, args.vocab.as_deref())?;
    let data = load_dataset(&mut run, &args.data)?;
    let report = run
        .manifest
        .time("evaluate", || eval::evaluate(model.as_dyn(), &data))?;
    run.manifest.result("accuracy", report.accuracy);
    run.manifest.result("ambiguous", report.ambiguous);
    print_json(&report);
    if let Some(out) = &args.out {
        write_text(
            out,
            &serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        run.primary_output(out)?;
    }
    run.finish()
}

#[derive(Serialize)]
struct LeakageSummary<'a> {
    /// Accuracy of always answering class 0.
    tie_break_floor: f64,
    curves: &'a [eval::LeakageCurve],
}

fn leakage(cli: &Cli, args: &LeakageArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "leakage", args);
    let data = load_dataset(&mut run, &args.data)?;
    let fractions = if args.fractions.is_empty() {
        DEFAULT_FRACTIONS.to_vec()
    } else {
        args.fractions.clone()
    };
    let mut curves = Vec::with_capacity(args.checkpoints.len());
    for ckpt in &args.checkpoints {
        let model = load_model(&mut run, ckpt, args.vocab.as_deref())?;
        let curve = run.manifest.time(model.kind().tag(), || {
            eval::leakage_curve(model.as_dyn(), &data, &fractions)
        })?;
        curves.push(curve);
    }
    let summary = LeakageSummary {
        tie_break_floor: eval::tie_break_floor(&data)?,
        curves: &curves,
    };
    let csv = eval::curves_to_csv(&curves);
    match &args.csv {
        Some(p) => {
            write_text(p, &csv)?;
            run.primary_output(p)?;
        }
        None => print!("{csv}"),
    }
    if let Some(p) = &args.json {
        write_text(
            p,
            &serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        run.primary_output(p)?;
    }
    run.manifest.result("tie_break_floor", summary.tie_break_floor);
    for c in &curves {
        run.manifest.result(&c.model, &c.accuracies);
    }
    run.finish()
}

fn intervene(cli: &Cli, args: &InterveneArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "intervene", args);
    let model = load_model(&mut run, &args.checkpoint, args.vocab.as_deref())?;
    run.manifest.input(&args.data)?;
    let rows = EmbeddingMatrix::load(&args.data)?;
    if args.row >= rows.len() {
        return Err(Error::Validation(format!(
            "row {} out of range for {} samples",
            args.row,
            rows.len()
        )));
    }
    let edits: BTreeMap<usize, Edit> = args.edits.iter().copied().collect();
    let result = eval::intervene(model.as_dyn(), &rows.row_f64(args.row), &edits)?;
    run.manifest.result("before", result.before.predicted);
    run.manifest.result("after", result.after.predicted);
    print_json(&result);
    run.finish()
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let mut run = Run::new(&cli.run_manifest, "serve", args);
    let bundle = load_vocab(&mut run, &args.vocab)?;
    run.manifest.input(&args.checkpoint)?;
    let state = ServiceState::load(&args.checkpoint, bundle)?.with_ui_dir(args.ui_dir.clone());
    run.manifest.result("conflict", state.is_conflict());
    run.finish()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    runtime
        .block_on(service::serve(args.bind, state))
        .map_err(|e| Error::io(args.bind.to_string(), e))
}

fn synth_cmd(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        num_classes: args.classes,
        p: args.p,
        q: args.q,
        k: args.k,
        dim: args.dim,
        images_per_class: args.per_class,
        noise: args.noise,
        seed: args.seed,
        share_adjacent: !args.no_share,
        duplicate_pairs: args.duplicate_pairs,
    };
    let mut run = Run::new(&cli.run_manifest, "synth", &config);
    run.manifest.seed = Some(args.seed);
    let fixture = run
        .manifest
        .time("generate", || synth::gen_synthetic(&config))?;
    fixture.save(&args.out)?;
    for name in [
        synth::files::DUMP,
        synth::files::VOCAB,
        synth::files::CONCEPTS,
        synth::files::TRAIN,
        synth::files::DEV,
        synth::files::TEST,
        synth::files::TRUTH,
    ] {
        run.manifest.output(&args.out.join(name))?;
    }
    if cli.run_manifest.is_none() {
        run.sink = ManifestSink::Path(args.out.join("synth.run.json"));
    }
    run.manifest
        .result("concepts", fixture.bundle.vocab.num_concepts());
    println!(
        "wrote {} ({} concepts, {}/{}/{} train/dev/test images)",
        args.out.display(),
        fixture.bundle.vocab.num_concepts(),
        fixture.train.len(),
        fixture.dev.len(),
        fixture.test.len()
    );
    run.finish()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prompts(a) => prompts(cli, a),
        Command::Ingest(a) => ingest(cli, a),
        Command::Annotate(a) => annotate(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => evaluate(cli, a),
        Command::Leakage(a) => leakage(cli, a),
        Command::Intervene(a) => intervene(cli, a),
        Command::Serve(a) => serve(cli, a),
        Command::Synth(a) => synth_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
