//! Command-line front end. Results go to files or stdout, diagnostics to
//! stderr. Exit codes: 0 success, 1 usage, 2 data, 3 transport.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::catalog::{merge_catalogs, parse_catalog, read_catalog, sources_from_kv, write_catalog, MediaRecord};
use crate::entity::{EntityClass, EntityMap};
use crate::evaluation::{
    align_entity_predictions, align_intent_predictions, diversity, entity_macro_f1, macro_f1, reference, EvalReport,
    LenientJsonOptions, PredictionLine,
};
use crate::grammar::{builtin_pack, parse_pack, SlotRegistry};
use crate::kg::{build_graph, KnowledgeGraph, StopWordExtractor};
use crate::kv::KvDocument;
use crate::promptkit::{emit_finetune_config, split_layers, FinetuneConfig, Task};
use crate::retrieval::{index_catalog, rank, CatalogIndex, HashedEmbedder, DEFAULT_DIM};
use crate::synth::{
    read_dataset, run_job, training_line, CompletionParams, GenerationJob, LabeledExample, LiveTransport,
    MockTransport, ReplayTransport, Retrying, SynthError, Transport, TransportMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cinesynth", version, about = "Grounded synthetic movie-search datasets, chat formatting and scoring")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and merge catalog sources into one JSON-lines catalog.
    Ingest(IngestArgs),
    /// Knowledge graph operations.
    Kg {
        #[command(subcommand)]
        action: KgCommand,
    },
    /// Dataset generation.
    Synth {
        #[command(subcommand)]
        action: SynthCommand,
    },
    /// Render a dataset into chat-format training lines.
    Render(RenderArgs),
    /// Validate and write an adapter fine-tune config.
    FinetuneConfig(FinetuneArgs),
    /// Score model predictions against a dataset.
    Eval {
        #[command(subcommand)]
        task: EvalCommand,
    },
    /// Lexical diversity of a dataset's prompts.
    Diversity(DiversityArgs),
    /// Rank catalog records against a query.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Sources document (`source.<id>.path`, `source.<id>.field.<name>`, ...).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum KgCommand {
    /// Build the entity graph from a catalog.
    Build {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Generate a labeled dataset.
    Run(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Job document; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    transport: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Recorded responses for `--transport replay`.
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Send each filled prompt through the transport for rewording.
    #[arg(long)]
    paraphrase: bool,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quality report destination (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Intent,
    Entity,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Intent => Task::Intent,
            TaskArg::Entity => Task::Entity,
        }
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Document with base_model, target_layers, rank, alpha, dropout, quantization.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated projection layers.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    base_model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    Intent(EvalArgs),
    Entity(EvalArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset the predictions were made on.
    #[arg(long)]
    gold: PathBuf,
    /// JSON lines with `example_id` and `raw_output` or `pred`.
    #[arg(long)]
    pred: PathBuf,
    /// JSON report destination; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable JSON repairs when reading raw model output.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct DiversityArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long, required_unless_present = "index")]
    catalog: Option<PathBuf>,
    /// Load a saved index instead of embedding the catalog.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    save_index: Option<PathBuf>,
    #[arg(long, default_value = "")]
    query: String,
    /// `class=value`, repeatable.
    #[arg(long = "entity")]
    entities: Vec<String>,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Transport(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Transport(_) => EXIT_TRANSPORT,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Transport(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::TransportFailure(_) => Failure::Transport(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Kg {
            action: KgCommand::Build { catalog, out },
        } => kg_build(&catalog, out.as_deref()),
        Command::Synth {
            action: SynthCommand::Run(a),
        } => synth_run(a),
        Command::Render(a) => render(a),
        Command::FinetuneConfig(a) => finetune_config(a),
        Command::Eval { task } => match task {
            EvalCommand::Intent(a) => eval(a, Task::Intent),
            EvalCommand::Entity(a) => eval(a, Task::Entity),
        },
        Command::Diversity(a) => diversity_cmd(a),
        Command::Retrieve(a) => retrieve(a),
    }
}

/// File (parent directories created) or stdout.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(data(parent.display()))?;
            }
            let f = File::create(p).map_err(data(p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(data(path.display()))
}

fn finish(mut w: Box<dyn Write>) -> Result<(), Failure> {
    w.flush().map_err(data("writing output"))
}

fn load_kv(path: &Path) -> Result<KvDocument, Failure> {
    KvDocument::load(path).map_err(data(path.display()))
}

fn load_catalog(path: &Path) -> Result<Vec<MediaRecord>, Failure> {
    read_catalog(open(path)?).map_err(data(path.display()))
}

fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>, Failure> {
    read_dataset(open(path)?).map_err(data(path.display()))
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let doc = load_kv(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let sources = sources_from_kv(&doc, base).map_err(data(a.config.display()))?;
    let mut catalogs = Vec::new();
    for s in &sources {
        let (records, issues) = parse_catalog(open(&s.path)?, &s.descriptor).map_err(data(s.path.display()))?;
        for i in &issues {
            let field = i.field.map(|f| format!(" [{}]", f.as_str())).unwrap_or_default();
            let kind = if i.fatal { "skipped" } else { "warning" };
            eprintln!("{}: row {}{field}: {kind}: {}", s.path.display(), i.row, i.reason);
        }
        eprintln!("{}: {} records, {} issues", s.descriptor.source_id(), records.len(), issues.len());
        catalogs.push(records);
    }
    let merged = merge_catalogs(&catalogs);
    eprintln!("merged catalog: {} records", merged.len());
    let mut w = output(a.out.as_deref())?;
    write_catalog(&mut w, &merged).map_err(data("writing catalog"))?;
    finish(w)
}

fn kg_build(catalog: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let records = load_catalog(catalog)?;
    let g = build_graph(&records, &StopWordExtractor::default());
    eprintln!("graph: {} nodes, {} edges", g.node_count(), g.edge_count());
    let mut w = output(out)?;
    g.write_tsv(&mut w).map_err(data("writing graph"))?;
    finish(w)
}

/// Job document keys, resolved against the document's directory.
struct JobSpec {
    doc: KvDocument,
    base: PathBuf,
}

impl JobSpec {
    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.doc.get(key).map(|v| self.base.join(v)))
    }

    fn parsed<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.doc.get_parsed(key).map_err(|e| Failure::Usage(e.to_string())),
        }
    }
}

fn synth_run(a: SynthArgs) -> Result<(), Failure> {
    let job_doc = match &a.config {
        Some(p) => JobSpec {
            doc: load_kv(p)?,
            base: p.parent().map(Path::to_path_buf).unwrap_or_default(),
        },
        None => JobSpec {
            doc: KvDocument::new(),
            base: PathBuf::new(),
        },
    };
    let seed: u64 = job_doc
        .parsed(a.seed, "seed")?
        .ok_or_else(|| Failure::Usage("a seed is required (--seed or `seed =` in the job config)".into()))?;
    let count: usize = job_doc.parsed(a.count, "count")?.unwrap_or(100);
    let max_in_flight: usize = job_doc.parsed(a.max_in_flight, "max_in_flight")?.unwrap_or(4);
    let paraphrase = a.paraphrase || job_doc.parsed::<bool>(None, "paraphrase")?.unwrap_or(false);
    let mode: TransportMode = job_doc
        .parsed(a.transport.clone(), "transport")?
        .unwrap_or_else(|| "mock".into())
        .parse()
        .map_err(Failure::Usage)?;

    let graph = match (job_doc.path(a.graph.clone(), "graph"), job_doc.path(a.catalog.clone(), "catalog")) {
        (Some(g), _) => KnowledgeGraph::read_tsv(open(&g)?).map_err(data(g.display()))?,
        (None, Some(c)) => build_graph(&load_catalog(&c)?, &StopWordExtractor::default()),
        (None, None) => return Err(Failure::Usage("need a graph or a catalog (--graph / --catalog)".into())),
    };
    let templates = match job_doc.path(a.templates.clone(), "templates") {
        Some(p) => {
            let src = fs::read_to_string(&p).map_err(data(p.display()))?;
            parse_pack(&src).map_err(data(p.display()))?
        }
        None => builtin_pack(),
    };
    let mut registry = SlotRegistry::builtin();
    let extra = SlotRegistry::from_kv(&job_doc.doc).map_err(|e| Failure::Usage(e.to_string()))?;
    for (name, domain) in extra.iter() {
        registry.insert(name, domain.clone());
    }

    let mut params = CompletionParams::default();
    if let Some(m) = job_doc.parsed(a.model.clone(), "model")? {
        params.model = m;
    }
    if let Some(t) = job_doc.parsed::<f64>(None, "temperature")? {
        params.temperature = t;
    }
    if let Some(t) = job_doc.parsed::<u32>(None, "max_tokens")? {
        params.max_tokens = t;
    }

    let transport: Box<dyn Transport> = match mode {
        TransportMode::Mock => Box::new(MockTransport),
        TransportMode::Replay => {
            let p = job_doc
                .path(a.cassette.clone(), "cassette")
                .ok_or_else(|| Failure::Usage("replay transport needs --cassette".into()))?;
            Box::new(ReplayTransport::from_jsonl(open(&p)?)?)
        }
        TransportMode::Live => {
            let endpoint = job_doc
                .parsed(a.endpoint.clone(), "endpoint")?
                .ok_or_else(|| Failure::Usage("live transport needs --endpoint".into()))?;
            Box::new(Retrying::new(LiveTransport::new(&endpoint)))
        }
    };

    let job = GenerationJob {
        templates: &templates,
        registry: &registry,
        graph: &graph,
        target_count: count,
        rng_seed: seed,
        paraphrase,
        transport: transport.as_ref(),
        params,
        max_in_flight,
    };
    if count == 0 || max_in_flight == 0 {
        return Err(Failure::Usage("--count and --max-in-flight must be at least 1".into()));
    }
    let out = job_doc.path(a.out.clone(), "out");
    let w = output(out.as_deref())?;
    let report = run_job(&job, w)?;
    eprintln!(
        "emitted {} of {} after {} attempts ({} grounding, {} exact, {} near-duplicate rejections)",
        report.emitted,
        report.target_count,
        report.attempts,
        report.rejected_grounding,
        report.rejected_exact_duplicate,
        report.rejected_near_duplicate
    );
    if let Some(p) = job_doc.path(a.report.clone(), "report") {
        let mut w = output(Some(&p))?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(data("writing report"))?;
        writeln!(w).map_err(data("writing report"))?;
        finish(w)?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), Failure> {
    let examples = load_dataset(&a.dataset)?;
    let mut w = output(a.out.as_deref())?;
    for ex in &examples {
        let line = training_line(ex, a.task.into()).map_err(data(&ex.example_id))?;
        serde_json::to_writer(&mut w, &line).map_err(data("writing output"))?;
        writeln!(w).map_err(data("writing output"))?;
    }
    finish(w)
}

fn finetune_config(a: FinetuneArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => FinetuneConfig::from_kv(&load_kv(p)?).map_err(data(p.display()))?,
        None => FinetuneConfig::default(),
    };
    if let Some(l) = &a.layers {
        cfg.target_layers = split_layers(l);
    }
    if let Some(m) = a.base_model {
        cfg.base_model_id = m;
    }
    let text = emit_finetune_config(&cfg).map_err(data("fine-tune config"))?;
    let mut w = output(a.out.as_deref())?;
    w.write_all(text.as_bytes()).map_err(data("writing output"))?;
    finish(w)
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>, Failure> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(data(path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(data(format!("{} line {}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn eval(a: EvalArgs, task: Task) -> Result<(), Failure> {
    let gold = load_dataset(&a.gold)?;
    let preds = read_predictions(&a.pred)?;
    let ids: Vec<String> = gold.iter().map(|e| e.example_id.clone()).collect();
    let opts = if a.strict { LenientJsonOptions::strict() } else { LenientJsonOptions::lenient() };
    let (report, references): (EvalReport, _) = match task {
        Task::Intent => {
            let gold_labels: Vec<&str> = gold.iter().map(|e| e.intent.as_str()).collect();
            let pred = align_intent_predictions(&ids, &preds, &opts);
            let pred: Vec<Option<&str>> = pred.iter().map(|p| p.map(|i| i.as_str())).collect();
            (
                macro_f1(&gold_labels, &pred).map_err(data("scoring"))?,
                json!({
                    "finetuned": reference::FINETUNED_INTENT_MACRO_F1,
                    "base": reference::BASE_INTENT_MACRO_F1,
                }),
            )
        }
        Task::Entity => {
            let gold_maps: Vec<EntityMap> = gold.iter().map(|e| e.entities.clone()).collect();
            let pred = align_entity_predictions(&ids, &preds, &opts).map_err(data(a.pred.display()))?;
            (
                entity_macro_f1(&gold_maps, &pred).map_err(data("scoring"))?,
                json!({
                    "finetuned": reference::FINETUNED_ENTITY_MACRO_F1,
                    "base": reference::BASE_ENTITY_MACRO_F1,
                    "bert_base_ner": reference::BERT_BASE_NER_MACRO_F1,
                    "roberta_movie_w_title": reference::ROBERTA_MOVIE_MACRO_F1,
                }),
            )
        }
    };
    let table = report.table(None);
    print!("{table}");
    if let Some(p) = &a.out {
        let mut doc = serde_json::to_value(&report).map_err(data("report"))?;
        doc["table"] = json!(table);
        doc["reference_macro_f1"] = references;
        let mut w = output(Some(p))?;
        serde_json::to_writer_pretty(&mut w, &doc).map_err(data("writing report"))?;
        writeln!(w).map_err(data("writing report"))?;
        finish(w)?;
    }
    Ok(())
}

fn diversity_cmd(a: DiversityArgs) -> Result<(), Failure> {
    let examples = load_dataset(&a.dataset)?;
    let prompts: Vec<&str> = examples.iter().map(|e| e.prompt.as_str()).collect();
    let ids: Vec<u32> = examples.iter().map(|e| e.provenance.template_id).collect();
    let report = diversity(&prompts, Some(&ids)).map_err(data(a.dataset.display()))?;
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(data("writing report"))?;
    writeln!(w).map_err(data("writing report"))?;
    finish(w)
}

fn parse_entity_flags(flags: &[String]) -> Result<EntityMap, Failure> {
    let mut out = EntityMap::new();
    for f in flags {
        let (class, value) = f
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--entity expects class=value, got `{f}`")))?;
        let class: EntityClass = class.trim().parse().map_err(|e: crate::entity::UnknownEntityClass| Failure::Usage(e.to_string()))?;
        out.entry(class).or_default().push(value.trim().to_owned());
    }
    Ok(out)
}

fn retrieve(a: RetrieveArgs) -> Result<(), Failure> {
    let entities = parse_entity_flags(&a.entities)?;
    let records = a.catalog.as_deref().map(load_catalog).transpose()?;
    let index = match &a.index {
        Some(p) => CatalogIndex::load(open(p)?).map_err(data(p.display()))?,
        None => {
            let records = records.as_deref().unwrap_or_default();
            index_catalog(records, &HashedEmbedder { dim: a.dim }).map_err(data("indexing"))?
        }
    };
    if let Some(p) = &a.save_index {
        let mut w = output(Some(p))?;
        index.save(&mut w).map_err(data(p.display()))?;
        finish(w)?;
    }
    let provider = HashedEmbedder { dim: index.dim() };
    let hits = rank(&index, &provider, &entities, &a.query, a.k).map_err(|e| Failure::Usage(e.to_string()))?;
    let titles: std::collections::HashMap<&str, &str> = records
        .iter()
        .flatten()
        .map(|r| (r.record_id.as_str(), r.title.as_str()))
        .collect();
    let mut w = output(None)?;
    let io_err = data("writing output");
    let mut body = String::from("rank\tscore\trecord_id\ttitle\n");
    for (i, (id, score)) in hits.iter().enumerate() {
        body.push_str(&format!("{}\t{score:.6}\t{id}\t{}\n", i + 1, titles.get(id.as_str()).copied().unwrap_or("")));
    }
    w.write_all(body.as_bytes()).map_err(io_err)?;
    finish(w)
}
