use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use docparse_client::{Client, ClientError};
use docparse_core::api::{
    self, ApiError, BenchReport, BenchRequest, EvalRequest, ParseRequest, ParseResponse, PlanRequest, PlanResponse,
    UnstableRequest,
};
use docparse_core::config::{self, BackendConfig, FileConfig, BACKEND_KINDS};
use docparse_core::io::write_atomic;
use docparse_core::metrics::{EvaluationReport, OverallWeights};
use docparse_core::model::{load_document, to_canonical_json, PageDocument};
use docparse_core::spotting::parse_jsonl;
use docparse_core::uacs::{sidecar_path, EmbeddingSet, UnstableReport, DEFAULT_ALPHA, DEFAULT_BETA};

#[derive(Parser)]
#[command(name = "docparse", version, about = "Parse, evaluate, plan and benchmark document parsing runs")]
struct Cli {
    /// Send work to a running docparse-server instead of running in-process.
    #[arg(long, global = true, env = "DOCPARSE_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the staged pipeline and write Markdown, structured JSON and run stats.
    Parse(ParseArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Cluster samples and split a training budget by cluster uncertainty.
    Plan(PlanArgs),
    /// Flag samples whose detection counts collapse between two thresholds.
    Unstable(UnstableArgs),
    /// Mock workload on virtual time, pipelined against sequential.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ParseArgs {
    /// Ground-truth file or directory of them (playback); optional for mock.
    #[arg(long)]
    input: Option<PathBuf>,
    /// mock | playback
    #[arg(long)]
    backend: Option<String>,
    /// TOML or JSON runtime configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Synthetic page count for the mock backend.
    #[arg(long)]
    pages: Option<u64>,
    /// Restrict playback to these page indices (comma separated).
    #[arg(long, value_delimiter = ',')]
    page_indices: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Text, formula and table weights, e.g. 0.5,0.25,0.25
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    report: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// JSON-lines spotting ground truth.
    #[arg(long, requires = "spotting_pred")]
    spotting_gt: Option<PathBuf>,
    #[arg(long, requires = "spotting_gt")]
    spotting_pred: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Binary f32 matrix with an 8-byte (rows, dim) header.
    #[arg(long)]
    embeddings: PathBuf,
    /// JSON id list; defaults to <embeddings stem>.ids.json
    #[arg(long)]
    ids: Option<PathBuf>,
    /// JSON object mapping sample id to its rollout strings.
    #[arg(long)]
    rollouts: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = docparse_core::uacs::DEFAULT_SAMPLES_PER_CLUSTER)]
    samples_per_cluster: usize,
    #[arg(long, default_value_t = docparse_core::uacs::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Hand out budget lost to floors and caps greedily.
    #[arg(long)]
    redistribute: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UnstableArgs {
    /// JSON object of detection counts at the low threshold.
    #[arg(long)]
    low: PathBuf,
    #[arg(long)]
    high: PathBuf,
    #[arg(long, default_value_t = docparse_core::uacs::DEFAULT_UNSTABLE_DELTA)]
    delta: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchFormat {
    Table,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pages: u64,
    /// Prepare, layout and recognition latency in ms.
    #[arg(long, default_value = "10,20,15")]
    stage_latency: String,
    #[arg(long, default_value_t = 16)]
    batch_capacity: usize,
    #[arg(long, default_value_t = 50)]
    max_wait_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,
    #[arg(long, default_value_t = 1)]
    blocks_per_page: u32,
    #[arg(long, default_value_t = docparse_core::pipeline::DEFAULT_RECOGNITION_WORKERS)]
    workers: usize,
    #[arg(long, default_value_t = docparse_core::pipeline::DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
    #[arg(long, value_enum, default_value = "table")]
    format: BenchFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

enum Engine {
    Local,
    Remote(Client),
}

impl Engine {
    fn parse(&self, req: &ParseRequest) -> Result<ParseResponse, Failure> {
        match self {
            Engine::Local => Ok(api::parse(req)?),
            Engine::Remote(c) => Ok(c.parse(req)?),
        }
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvaluationReport, Failure> {
        match self {
            Engine::Local => Ok(api::evaluate(req)?),
            Engine::Remote(c) => Ok(c.evaluate(req)?),
        }
    }

    fn plan(&self, req: &PlanRequest) -> Result<PlanResponse, Failure> {
        match self {
            Engine::Local => Ok(api::plan(req)?),
            Engine::Remote(c) => Ok(c.plan(req)?),
        }
    }

    fn unstable(&self, req: &UnstableRequest) -> Result<UnstableReport, Failure> {
        match self {
            Engine::Local => Ok(api::unstable(req)?),
            Engine::Remote(c) => Ok(c.unstable(req)?),
        }
    }

    fn bench(&self, req: &BenchRequest) -> Result<BenchReport, Failure> {
        match self {
            Engine::Local => Ok(api::bench(req)?),
            Engine::Remote(c) => Ok(c.bench(req)?),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_pages(path: &Path) -> Result<Vec<PageDocument>, Failure> {
    let loaded = load_document(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    for w in &loaded.warnings {
        tracing::warn!(file = %path.display(), "{w}");
    }
    Ok(loaded.pages)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    write_atomic(path, bytes.as_ref()).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_parse(engine: &Engine, args: ParseArgs) -> Result<u8, Failure> {
    let file_cfg = match &args.config {
        Some(p) => config::load_config(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    let backend = match (&args.backend, file_cfg.backend) {
        (Some(kind), cfg) => {
            if !BACKEND_KINDS.contains(&kind.as_str()) {
                return Err(usage(format!(
                    "unknown backend {kind:?}; valid kinds: {}",
                    BACKEND_KINDS.join(", ")
                )));
            }
            match cfg {
                Some(c) if c.kind() == kind => c,
                Some(c) => {
                    return Err(usage(format!(
                        "--backend {kind} conflicts with backend kind {:?} in the config file",
                        c.kind()
                    )))
                }
                None => BackendConfig::named(kind).map_err(|e| usage(e.to_string()))?,
            }
        }
        (None, Some(c)) => c,
        (None, None) => {
            return Err(usage(format!(
                "no backend given; pass --backend ({}) or set [backend] kind in --config",
                BACKEND_KINDS.join(" | ")
            )))
        }
    };
    let backend = match (backend, args.seed) {
        (BackendConfig::Mock(mut m), Some(seed)) => {
            m.seed = seed;
            BackendConfig::Mock(m)
        }
        (b, _) => b,
    };

    let inputs = match &args.input {
        Some(p) => config::input_files(p).map_err(|e| usage(format!("cannot read input {}: {e}", p.display())))?,
        None => Vec::new(),
    };
    if matches!(backend, BackendConfig::Playback(_)) && inputs.is_empty() {
        return Err(usage("the playback backend needs --input with ground-truth pages"));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| usage(format!("cannot create {}: {e}", args.out.display())))?;

    // one job per input file; a mock run without input is a single synthetic job
    let jobs: Vec<(String, Vec<PageDocument>)> = if inputs.is_empty() {
        vec![("mock".to_string(), Vec::new())]
    } else {
        inputs
            .iter()
            .map(|p| {
                let stem = p.file_stem().map_or_else(|| "document".into(), |s| s.to_string_lossy().into_owned());
                load_pages(p).map(|pages| (stem, pages))
            })
            .collect::<Result<_, _>>()?
    };

    let mut all_stats = BTreeMap::new();
    let mut failed = 0u64;
    for (stem, pages) in jobs {
        let is_mock = matches!(backend, BackendConfig::Mock(_));
        let req = ParseRequest {
            backend: backend.clone(),
            pipeline: file_cfg.pipeline.clone(),
            page_count: if is_mock {
                args.pages.or((!pages.is_empty()).then_some(pages.len() as u64))
            } else {
                None
            },
            ground_truth: if is_mock { Vec::new() } else { pages },
            pages: args.page_indices.clone(),
            assemble: Default::default(),
        };
        let resp = engine.parse(&req)?;
        let out = |ext: &str| args.out.join(format!("{stem}.{ext}"));
        write(&out("md"), format!("{}\n", resp.document.markdown))?;
        write(&out("json"), pretty(&resp.document))?;
        write(&out("pages.json"), to_canonical_json(&resp.parsed_pages()))?;
        write(&out("merges.jsonl"), resp.document.merges_jsonl())?;
        for p in &resp.pages {
            if let docparse_core::pipeline::PageOutcome::Failed(e) = &p.outcome {
                tracing::error!(document = %stem, page = p.page_index, "{e}");
            }
        }
        failed += resp.stats.failed;
        all_stats.insert(stem, resp.stats);
    }
    let stats_json = if all_stats.len() == 1 {
        pretty(all_stats.values().next().expect("one entry"))
    } else {
        pretty(&all_stats)
    };
    write(&args.out.join("run_stats.json"), &stats_json)?;
    print!("{stats_json}");
    if failed > 0 {
        eprintln!("{failed} page(s) failed; see log output");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_eval(engine: &Engine, args: EvalArgs) -> Result<u8, Failure> {
    let weights = args
        .weights
        .as_deref()
        .map(OverallWeights::parse_list)
        .transpose()
        .map_err(|e| usage(e.to_string()))?;
    let spotting = |p: &Option<PathBuf>| -> Result<Vec<_>, Failure> {
        match p {
            None => Ok(Vec::new()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
                parse_jsonl(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
            }
        }
    };
    let req = EvalRequest {
        gt: load_pages(&args.gt)?,
        pred: load_pages(&args.pred)?,
        weights,
        iou_threshold: args.iou_threshold,
        spotting_gt: spotting(&args.spotting_gt)?,
        spotting_pred: spotting(&args.spotting_pred)?,
    };
    let report = engine.evaluate(&req)?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    let json = pretty(&report);
    if let Some(out) = &args.out {
        write(out, &json)?;
    }
    match args.report {
        ReportFormat::Json if args.out.is_none() => print!("{json}"),
        ReportFormat::Json => {}
        ReportFormat::Table => print!("{}", report.to_table()),
    }
    Ok(0)
}

fn cmd_plan(engine: &Engine, args: PlanArgs) -> Result<u8, Failure> {
    let ids = args.ids.clone().unwrap_or_else(|| sidecar_path(&args.embeddings));
    let data = EmbeddingSet::load(&args.embeddings, &ids).map_err(|e| usage(e.to_string()))?;
    let rollouts: HashMap<String, Vec<String>> = read_json(&args.rollouts)?;
    let req = PlanRequest {
        ids: data.ids,
        vectors: data.vectors,
        rollouts,
        k: args.k,
        alpha: args.alpha,
        beta: args.beta,
        budget: args.budget,
        seed: args.seed,
        samples_per_cluster: args.samples_per_cluster,
        max_iter: args.max_iter,
        redistribute: args.redistribute,
    };
    let resp = engine.plan(&req)?;
    let json = pretty(&resp.plan);
    match &args.out {
        Some(out) => write(out, &json)?,
        None => print!("{json}"),
    }
    Ok(0)
}

fn cmd_unstable(engine: &Engine, args: UnstableArgs) -> Result<u8, Failure> {
    let req = UnstableRequest {
        low: read_json(&args.low)?,
        high: read_json(&args.high)?,
        delta: args.delta,
    };
    let report = engine.unstable(&req)?;
    let json = pretty(&report);
    match &args.out {
        Some(out) => write(out, &json)?,
        None => print!("{json}"),
    }
    Ok(0)
}

fn bench_table(r: &BenchReport) -> String {
    let mut s = format!(
        "{:<12} {:>14} {:>10} {:>12} {:>14}\n",
        "Mode", "Total Time (s)", "Pages/s", "Tokens/s", "Recog. calls"
    );
    for (name, st) in [("pipelined", &r.pipelined), ("sequential", &r.sequential)] {
        s += &format!(
            "{:<12} {:>14.3} {:>10.2} {:>12.1} {:>14}\n",
            name, st.total_time_s, st.pages_per_s, st.tokens_per_s, st.backend_calls.recognize
        );
    }
    s += &format!("speedup {:.3}x\n", r.speedup);
    s
}

fn cmd_bench(engine: &Engine, args: BenchArgs) -> Result<u8, Failure> {
    let req = BenchRequest {
        pages: args.pages,
        stage_latency_ms: api::parse_latencies(&args.stage_latency)?,
        batch_capacity: args.batch_capacity,
        max_wait_ms: args.max_wait_ms,
        seed: args.seed,
        jitter_ms: args.jitter_ms,
        blocks_per_page: args.blocks_per_page,
        recognition_workers: args.workers,
        queue_capacity: args.queue_capacity,
    };
    let report = engine.bench(&req)?;
    let json = pretty(&report);
    if let Some(out) = &args.out {
        write(out, &json)?;
    }
    match args.format {
        BenchFormat::Json => print!("{json}"),
        BenchFormat::Table => print!("{}", bench_table(&report)),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("DOCPARSE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let engine = match &cli.server {
        None => Engine::Local,
        Some(url) => match Client::new(url) {
            Ok(c) => Engine::Remote(c),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    let result = match cli.command {
        Command::Parse(a) => cmd_parse(&engine, a),
        Command::Eval(a) => cmd_eval(&engine, a),
        Command::Plan(a) => cmd_plan(&engine, a),
        Command::Unstable(a) => cmd_unstable(&engine, a),
        Command::Bench(a) => cmd_bench(&engine, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
