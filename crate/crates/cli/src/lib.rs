//! The `factcheck` command line: evaluate corpora, score results against
//! gold labels, extract templates and convert dataset formats.
//!
//! Exit codes: 0 on success, 1 when evaluation fails (unreachable backend,
//! or any example error under `--fail-fast`), 2 on configuration or parse
//! errors.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use factcheck_core::evaluator::{evaluate_corpus, CheckMode, RunOptions, RunStats};
use factcheck_core::ingestion::{
    load_ratings, parse_e2e_mr, parse_jsonl, parse_triple_blocks, write_jsonl, RatingsConfig,
};
use factcheck_core::metrics::{
    confidence_correlation, error_size_correlation, fine_counts, format_table, score, Correlation,
    ScoreReport, TableRow,
};
use factcheck_core::nli::{BackendConfig, CachedBackend, FixtureBackend, HttpBackend, NliBackend};
use factcheck_core::report::{read_results, write_results};
use factcheck_core::templates::{
    extract_templates, BackoffStyle, ExtractionOptions, TemplateRegistry,
};
use factcheck_core::types::{Example, GoldLabel, Triple};

pub const ENDPOINT_ENV: &str = "FACTCHECK_ENDPOINT";
/// `--templates` value selecting the handcrafted E2E registry.
pub const BUILTIN_E2E: &str = "builtin:e2e";

/// Error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    pub fn evaluation(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // some errors already embed their source's message
        let mut shown = self.error.to_string();
        f.write_str(&shown)?;
        for cause in self.error.chain().skip(1) {
            let text = cause.to_string();
            if !shown.contains(&text) {
                write!(f, ": {text}")?;
                shown = text;
            }
        }
        Ok(())
    }
}

trait ConfigContext<T> {
    fn config_err(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn config_err(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::config(e.into().context(what())))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "factcheck",
    version,
    about = "Semantic accuracy checks for data-to-text outputs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every example for omissions and hallucinations.
    Evaluate(EvaluateArgs),
    /// Score a results file against gold labels or human ratings.
    Score(ScoreArgs),
    /// Build a template registry from single-triple references.
    ExtractTemplates(ExtractArgs),
    /// Convert an E2E CSV (meaning representation + text) to canonical JSONL.
    ConvertE2e(ConvertE2eArgs),
    /// Convert pipe-delimited triple blocks to canonical JSONL.
    ConvertTriples(ConvertTriplesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Both,
    Omissions,
    Hallucinations,
}

impl From<ModeArg> for CheckMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Both => CheckMode::Both,
            ModeArg::Omissions => CheckMode::OmissionsOnly,
            ModeArg::Hallucinations => CheckMode::HallucinationsOnly,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Canonical JSONL input.
    #[arg(long)]
    pub input: PathBuf,
    /// Registry file, or `builtin:e2e`. Without it every fact uses the backoff template.
    #[arg(long)]
    pub templates: Option<String>,
    /// Ignore `--templates` and use only the backoff template.
    #[arg(long)]
    pub backoff_only: bool,
    /// Insert predicates verbatim into the backoff template.
    #[arg(long)]
    pub raw_backoff: bool,
    /// Inference service base URL (default: $FACTCHECK_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// JSON fixture file used instead of a live service.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Results JSONL; run statistics go to `<out>.stats.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Abort on the first example that fails to evaluate.
    #[arg(long)]
    pub fail_fast: bool,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Results JSONL written by `evaluate`.
    #[arg(long)]
    pub results: PathBuf,
    /// Canonical JSONL with `gold` labels (and optional `human_score`).
    #[arg(long, conflicts_with = "ratings", required_unless_present = "ratings")]
    pub gold: Option<PathBuf>,
    /// Human ratings CSV; labels come from thresholding the score column.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, default_value_t = 2.5)]
    pub threshold: f64,
    #[arg(long, default_value = "id")]
    pub id_column: String,
    #[arg(long, default_value = "semantics")]
    pub score_column: String,
    #[arg(long, default_value = "text")]
    pub text_column: String,
    /// Row label in the printed table.
    #[arg(long, default_value = "Default")]
    pub setup: String,
    /// Report JSON (default `<results>.score.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Canonical JSONL of single-triple examples; `text` is the reference.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep patterns whose reference does not mention the subject.
    #[arg(long)]
    pub keep_subject_free: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertE2eArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mr")]
    pub mr_column: String,
    #[arg(long, default_value = "ref")]
    pub text_column: String,
    /// Column holding example ids; rows are numbered otherwise.
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long, default_value = "e2e-")]
    pub id_prefix: String,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertTriplesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ex-")]
    pub id_prefix: String,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Evaluate(args) => {
            RunConfig::from_args(&args).and_then(|cfg| cmd_evaluate(&cfg).map(|_| ()))
        }
        Command::Score(args) => cmd_score(&args).map(|s| print!("{}", s.table)),
        Command::ExtractTemplates(args) => cmd_extract_templates(&args).map(|_| ()),
        Command::ConvertE2e(args) => cmd_convert_e2e(&args).map(|_| ()),
        Command::ConvertTriples(args) => cmd_convert_triples(&args).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSource {
    Fixture(PathBuf),
    Endpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSource {
    Backoff,
    BuiltinE2e,
    File(PathBuf),
}

/// Everything `evaluate` needs, resolved from flags and environment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub templates: TemplateSource,
    pub backoff_style: BackoffStyle,
    pub backend: BackendSource,
    pub mode: CheckMode,
    pub parallelism: usize,
    pub seed: u64,
    pub output_path: PathBuf,
    pub fail_fast: bool,
    pub batch_size: usize,
    pub retries: u32,
    pub timeout: Duration,
    pub cache_enabled: bool,
}

impl RunConfig {
    pub fn from_args(args: &EvaluateArgs) -> Result<Self, Failure> {
        Self::resolve(args, std::env::var(ENDPOINT_ENV).ok())
    }

    /// `env_endpoint` is only consulted when neither `--fixture` nor
    /// `--endpoint` is given.
    pub fn resolve(args: &EvaluateArgs, env_endpoint: Option<String>) -> Result<Self, Failure> {
        let backend = match (&args.fixture, &args.endpoint) {
            (Some(_), Some(_)) => {
                return Err(Failure::config(anyhow!(
                    "--fixture and --endpoint are mutually exclusive"
                )))
            }
            (Some(f), None) => BackendSource::Fixture(f.clone()),
            (None, Some(e)) => BackendSource::Endpoint(e.clone()),
            (None, None) => match env_endpoint.filter(|e| !e.trim().is_empty()) {
                Some(e) => BackendSource::Endpoint(e),
                None => {
                    return Err(Failure::config(anyhow!(
                        "no backend: pass --fixture or --endpoint, or set {ENDPOINT_ENV}"
                    )))
                }
            },
        };
        if args.parallelism == 0 {
            return Err(Failure::config(anyhow!("--parallelism must be at least 1")));
        }
        if args.batch_size == 0 {
            return Err(Failure::config(anyhow!("--batch-size must be at least 1")));
        }
        if !(args.timeout.is_finite() && args.timeout > 0.0) {
            return Err(Failure::config(anyhow!("--timeout must be positive")));
        }
        let templates = if args.backoff_only {
            TemplateSource::Backoff
        } else {
            match args.templates.as_deref() {
                None => TemplateSource::Backoff,
                Some(BUILTIN_E2E) => TemplateSource::BuiltinE2e,
                Some(path) => TemplateSource::File(PathBuf::from(path)),
            }
        };
        Ok(RunConfig {
            input_path: args.input.clone(),
            templates,
            backoff_style: if args.raw_backoff {
                BackoffStyle::Raw
            } else {
                BackoffStyle::Humanized
            },
            backend,
            mode: args.mode.into(),
            parallelism: args.parallelism,
            seed: args.seed,
            output_path: args.out.clone(),
            fail_fast: args.fail_fast,
            batch_size: args.batch_size,
            retries: args.retries,
            timeout: Duration::from_secs_f64(args.timeout),
            cache_enabled: !args.no_cache,
        })
    }

    pub fn stats_path(&self) -> PathBuf {
        sibling(&self.output_path, ".stats.json")
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Writes through a temporary file in the target directory, renamed into
/// place only after `write` succeeds.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temporary file in {}", dir.display()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .config_err(|| format!("cannot open {}", path.display()))
}

pub fn load_examples(path: &Path) -> Result<Vec<Example>, Failure> {
    parse_jsonl(open(path)?).config_err(|| format!("cannot parse {}", path.display()))
}

pub fn build_registry(cfg: &RunConfig) -> Result<TemplateRegistry, Failure> {
    let reg = match &cfg.templates {
        TemplateSource::Backoff => TemplateRegistry::new(cfg.seed),
        TemplateSource::BuiltinE2e => TemplateRegistry::e2e_default(cfg.seed),
        TemplateSource::File(path) => TemplateRegistry::load(open(path)?, cfg.seed)
            .config_err(|| format!("cannot load templates from {}", path.display()))?,
    };
    Ok(reg.with_backoff_style(cfg.backoff_style))
}

pub fn build_backend(cfg: &RunConfig) -> Result<Box<dyn NliBackend>, Failure> {
    let inner: Box<dyn NliBackend> = match &cfg.backend {
        BackendSource::Fixture(path) => Box::new(
            FixtureBackend::from_json(open(path)?)
                .config_err(|| format!("cannot parse fixture {}", path.display()))?,
        ),
        BackendSource::Endpoint(url) => {
            let backend = HttpBackend::new(BackendConfig {
                batch_size: cfg.batch_size,
                timeout: cfg.timeout,
                retries: cfg.retries,
                cache_enabled: cfg.cache_enabled,
                ..BackendConfig::new(url.clone())
            })
            .config_err(|| "cannot configure HTTP backend".to_string())?;
            let health = backend.health().map_err(|e| {
                Failure::evaluation(
                    anyhow!(e).context(format!("backend at {url} is not reachable")),
                )
            })?;
            info!("backend {url} serving model {}", health.model);
            Box::new(backend)
        }
    };
    Ok(if cfg.cache_enabled {
        Box::new(CachedBackend::new(inner))
    } else {
        inner
    })
}

#[derive(Debug, Serialize)]
struct StatsFile<'a> {
    mode: CheckMode,
    seed: u64,
    parallelism: usize,
    #[serde(flatten)]
    stats: &'a RunStats,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunStats, Failure> {
    let examples = load_examples(&cfg.input_path)?;
    let registry = build_registry(cfg)?;
    let backend = build_backend(cfg)?;
    let options = RunOptions {
        mode: cfg.mode,
        parallelism: cfg.parallelism,
        fail_fast: cfg.fail_fast,
    };
    let run = evaluate_corpus(&examples, &registry, &backend, options)
        .map_err(|e| Failure::evaluation(anyhow!(e)))?;

    write_atomic(&cfg.output_path, |w| {
        Ok(write_results(w, &examples, &run.outcomes)?)
    })
    .map_err(Failure::config)?;
    write_atomic(&cfg.stats_path(), |w| {
        let stats = StatsFile {
            mode: cfg.mode,
            seed: cfg.seed,
            parallelism: cfg.parallelism,
            stats: &run.stats,
        };
        serde_json::to_writer_pretty(&mut *w, &stats)?;
        writeln!(w)?;
        Ok(())
    })
    .map_err(Failure::config)?;

    for outcome in run.outcomes.iter().filter_map(|o| o.as_ref().err()) {
        eprintln!("evaluation_error: {outcome}");
    }
    let s = &run.stats;
    eprintln!(
        "evaluated {}/{} examples ({} errors); backend requests {}, pairs classified {}, cache hits {}; {} ms",
        s.evaluated,
        s.examples,
        s.evaluation_errors,
        s.backend.requests,
        s.backend.pairs_classified,
        s.backend.cache_hits,
        s.wall_time_ms
    );
    for (verdict, count) in &s.fine_counts {
        eprintln!("  {verdict}: {count}");
    }
    Ok(run.stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    #[serde(flatten)]
    pub report: ScoreReport,
    /// Confidence vs human score; `None` without human scores or when undefined.
    pub rho_confidence_human: Option<Correlation>,
    pub rho_error_size: Option<Correlation>,
    #[serde(skip)]
    pub table: String,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreSummary, Failure> {
    let results = read_results(open(&args.results)?)
        .config_err(|| format!("cannot parse {}", args.results.display()))?;
    let predictions: Vec<_> = results.iter().map(|r| r.prediction()).collect();

    let (gold, human): (HashMap<String, GoldLabel>, HashMap<String, f64>) =
        if let Some(path) = &args.ratings {
            let cfg = RatingsConfig {
                score_column: args.score_column.clone(),
                id_column: args.id_column.clone(),
                text_column: args.text_column.clone(),
                threshold: args.threshold,
            };
            let ratings = load_ratings(open(path)?, &cfg)
                .config_err(|| format!("cannot load {}", path.display()))?;
            let gold = ratings.iter().map(|(id, r)| (id.clone(), r.gold)).collect();
            let human = ratings.into_iter().map(|(id, r)| (id, r.score)).collect();
            (gold, human)
        } else {
            let path = args
                .gold
                .as_ref()
                .expect("clap requires --gold or --ratings");
            let examples = load_examples(path)?;
            let gold = examples
                .iter()
                .filter_map(|e| Some((e.id.clone(), e.gold?)))
                .collect();
            let human = examples
                .iter()
                .filter_map(|e| Some((e.id.clone(), e.human_score?)))
                .collect();
            (gold, human)
        };

    let report = score(&predictions, &gold)
        .map_err(|e| Failure::config(anyhow!(e).context("ids do not align")))?;
    let rho_confidence_human = if human.is_empty() {
        None
    } else {
        confidence_correlation(&predictions, &human).ok()
    };
    let rho_error_size = error_size_correlation(&predictions, &gold).ok();

    let mut table = format_table(&[TableRow {
        setup: &args.setup,
        report: &report,
        rho: rho_confidence_human.map(|c| c.rho),
    }]);
    let corr_line = |name: &str, c: Option<Correlation>| match c {
        Some(c) => format!(
            "{name}: rho = {:.3} (p ~ {:.2e}, n = {})\n",
            c.rho, c.p_approx, c.n
        ),
        None => format!("{name}: n/a\n"),
    };
    if !human.is_empty() {
        table.push_str(&corr_line(
            "confidence vs human score",
            rho_confidence_human,
        ));
    }
    table.push_str(&corr_line("errors vs input size", rho_error_size));
    let counts = fine_counts(&predictions);
    let counts: Vec<String> = counts.iter().map(|(v, n)| format!("{v}={n}")).collect();
    table.push_str(&format!("predicted: {}\n", counts.join(" ")));
    for w in &report.warnings {
        table.push_str(&format!("warning: {w}\n"));
    }

    let summary = ScoreSummary {
        report,
        rho_confidence_human,
        rho_error_size,
        table,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.results, ".score.json"));
    write_atomic(&out, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })
    .map_err(Failure::config)?;
    Ok(summary)
}

pub fn cmd_extract_templates(
    args: &ExtractArgs,
) -> Result<factcheck_core::templates::ExtractionStats, Failure> {
    let reader = open(&args.input)?;
    let mut corpus: Vec<(Triple, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.config_err(|| format!("cannot read {}", args.input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parsed = parse_jsonl(line.as_bytes()).map_err(|e| {
            Failure::config(anyhow!("{}: line {line_no}: {e}", args.input.display()))
        })?;
        let example = parsed.remove(0);
        if example.triples.len() != 1 {
            return Err(Failure::config(anyhow!(
                "{}: line {line_no}: example {:?} has {} triples, expected exactly 1",
                args.input.display(),
                example.id,
                example.triples.len()
            )));
        }
        let triple = example.triples.into_iter().next().expect("one triple");
        corpus.push((triple, example.text));
    }
    let options = ExtractionOptions {
        seed: args.seed,
        keep_subject_free: args.keep_subject_free,
    };
    let (registry, stats) = extract_templates(corpus.iter().map(|(t, r)| (t, r.as_str())), options);
    write_atomic(&args.out, |w| Ok(registry.save(w)?)).map_err(Failure::config)?;
    eprintln!(
        "predicates covered: {}, patterns kept: {}, discarded: {}",
        stats.predicates, stats.kept, stats.discarded
    );
    Ok(stats)
}

pub fn cmd_convert_e2e(args: &ConvertE2eArgs) -> Result<usize, Failure> {
    let mut csv = csv::ReaderBuilder::new().from_reader(open(&args.input)?);
    let headers = csv
        .headers()
        .config_err(|| format!("cannot read {}", args.input.display()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Failure::config(anyhow!("{}: missing column {name:?}", args.input.display()))
            })
    };
    let mr_col = column(&args.mr_column)?;
    let text_col = column(&args.text_column)?;
    let id_col = args.id_column.as_deref().map(column).transpose()?;

    let mut examples = Vec::new();
    for (idx, record) in csv.records().enumerate() {
        let row = idx + 2;
        let record = record.config_err(|| format!("{}: row {row}", args.input.display()))?;
        let field = |c: usize| record.get(c).unwrap_or("").trim().to_string();
        let at_row = |e: anyhow::Error| {
            Failure::config(e.context(format!("{}: row {row}", args.input.display())))
        };
        let triples = parse_e2e_mr(&field(mr_col)).map_err(|e| at_row(e.into()))?;
        let id = id_col
            .map(field)
            .unwrap_or_else(|| format!("{}{}", args.id_prefix, idx + 1));
        let example = Example::new(id, triples, field(text_col)).map_err(|e| at_row(e.into()))?;
        examples.push(example);
    }
    write_atomic(&args.out, |w| Ok(write_jsonl(w, &examples)?)).map_err(Failure::config)?;
    eprintln!("converted {} examples", examples.len());
    Ok(examples.len())
}

pub fn cmd_convert_triples(args: &ConvertTriplesArgs) -> Result<usize, Failure> {
    let text = fs::read_to_string(&args.input)
        .config_err(|| format!("cannot read {}", args.input.display()))?;
    let examples = parse_triple_blocks(&text, &args.id_prefix)
        .config_err(|| format!("cannot parse {}", args.input.display()))?;
    write_atomic(&args.out, |w| Ok(write_jsonl(w, &examples)?)).map_err(Failure::config)?;
    eprintln!("converted {} examples", examples.len());
    Ok(examples.len())
}

/// Convenience for tests and scripting: parse `argv` and run.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> EvaluateArgs {
        let cli = Cli::try_parse_from([
            "factcheck",
            "evaluate",
            "--input",
            "in.jsonl",
            "--out",
            "out.jsonl",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn environment_endpoint_is_the_fallback() {
        let cfg = RunConfig::resolve(&args(), Some("http://nli:8000".into())).unwrap();
        assert_eq!(
            cfg.backend,
            BackendSource::Endpoint("http://nli:8000".into())
        );

        let explicit = EvaluateArgs {
            endpoint: Some("http://other".into()),
            ..args()
        };
        let cfg = RunConfig::resolve(&explicit, Some("http://nli:8000".into())).unwrap();
        assert_eq!(cfg.backend, BackendSource::Endpoint("http://other".into()));

        let fixture = EvaluateArgs {
            fixture: Some("f.json".into()),
            ..args()
        };
        let cfg = RunConfig::resolve(&fixture, Some("http://nli:8000".into())).unwrap();
        assert_eq!(cfg.backend, BackendSource::Fixture("f.json".into()));

        assert_eq!(RunConfig::resolve(&args(), None).unwrap_err().code, 2);
        assert_eq!(
            RunConfig::resolve(&args(), Some("  ".into()))
                .unwrap_err()
                .code,
            2
        );
    }

    #[test]
    fn template_source_and_defaults() {
        let cfg = RunConfig::resolve(&args(), Some("http://x".into())).unwrap();
        assert_eq!(cfg.templates, TemplateSource::Backoff);
        assert_eq!(cfg.mode, CheckMode::Both);
        assert_eq!(cfg.batch_size, 16);
        assert!(cfg.cache_enabled);
        assert_eq!(cfg.stats_path(), PathBuf::from("out.jsonl.stats.json"));

        let builtin = EvaluateArgs {
            templates: Some(BUILTIN_E2E.into()),
            ..args()
        };
        let cfg = RunConfig::resolve(&builtin, Some("http://x".into())).unwrap();
        assert_eq!(cfg.templates, TemplateSource::BuiltinE2e);

        let forced = EvaluateArgs {
            backoff_only: true,
            raw_backoff: true,
            ..builtin
        };
        let cfg = RunConfig::resolve(&forced, Some("http://x".into())).unwrap();
        assert_eq!(cfg.templates, TemplateSource::Backoff);
        assert_eq!(cfg.backoff_style, BackoffStyle::Raw);
    }

    #[test]
    fn invalid_numbers_are_config_errors() {
        for bad in [
            EvaluateArgs {
                parallelism: 0,
                ..args()
            },
            EvaluateArgs {
                batch_size: 0,
                ..args()
            },
            EvaluateArgs {
                timeout: 0.0,
                ..args()
            },
        ] {
            assert_eq!(
                RunConfig::resolve(&bad, Some("http://x".into()))
                    .unwrap_err()
                    .code,
                2
            );
        }
    }

    #[test]
    fn mode_flag_values() {
        for (flag, mode) in [
            ("both", CheckMode::Both),
            ("omissions", CheckMode::OmissionsOnly),
            ("hallucinations", CheckMode::HallucinationsOnly),
        ] {
            let cli = Cli::try_parse_from([
                "factcheck",
                "evaluate",
                "--input",
                "i",
                "--out",
                "o",
                "--mode",
                flag,
            ])
            .unwrap();
            let Command::Evaluate(a) = cli.command else {
                unreachable!()
            };
            assert_eq!(CheckMode::from(a.mode), mode);
        }
        assert!(Cli::try_parse_from([
            "factcheck",
            "evaluate",
            "--input",
            "i",
            "--out",
            "o",
            "--mode",
            "x"
        ])
        .is_err());
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let err = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            anyhow::bail!("boom")
        });
        assert!(err.is_err());
        assert!(!path.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

        write_atomic(&path, |w| Ok(w.write_all(b"done")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "done");
    }

    #[test]
    fn failure_display_skips_repeated_causes() {
        let inner = std::io::Error::other("disk full");
        let f = Failure::config(anyhow::Error::new(inner).context("cannot write x"));
        assert_eq!(f.to_string(), "cannot write x: disk full");
    }
}
