//! Argument structs and command implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sfc_core::backend::{
    Backend, CachedBackend, NGramLm, ScoreCache, ServiceBackend, ServiceBackendConfig, ToyLm,
};
use sfc_core::harness::{
    aggregate_wins, calibrate_content_free, evaluate, evaluate_flipped, report, run_sfc_lab,
    sweep, wins_input_from_reports, HarnessError, RunSettings, SfcLabSpec,
};
use sfc_core::scoring::{CalibrationWeights, Strategy};
use sfc_core::task::{
    bundled_template_ids, bundled_templates, load_dataset, FewShotConfig, Template,
};

const CACHE_DIR_ENV: &str = "SFC_CACHE_DIR";
const CACHE_FILE: &str = "scores.log";

#[derive(Parser, Serialize)]
#[command(
    name = "sfc",
    version,
    about = "Zero-shot multiple-choice scoring: raw probability, length-normalized, unconditional, PMI, and calibrated strategies over toy, n-gram, and remote log-prob backends"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Serialize)]
pub enum Command {
    /// Evaluate a dataset under the selected scoring strategies.
    Eval(EvalArgs),
    /// Evaluate under several templates and report mean/std per strategy.
    Sweep(SweepArgs),
    /// Paired original/flipped ablation with a fixed continuation.
    FlipEval(EvalArgs),
    /// Synthetic surface-form-competition demonstration.
    SfcLab(SfcLabArgs),
    /// Fit calibration weights from content-free inputs.
    Calibrate(CalibrateArgs),
    /// List or export bundled templates.
    Templates(TemplatesArgs),
    /// Inspect, warm, or export the score cache.
    Cache(CacheArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Ngram,
    Service,
}

#[derive(Args, Serialize, Clone)]
pub struct BackendArgs {
    /// Log-probability backend.
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Toy model table (JSON), for --backend toy.
    #[arg(long)]
    pub toy_spec: Option<PathBuf>,
    /// Corpus file for --backend ngram.
    #[arg(long)]
    pub ngram_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub ngram_order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 1.0)]
    pub ngram_k: f64,
    /// Model name sent to the service backend (also the cache key model id).
    #[arg(long)]
    pub model: Option<String>,
    /// Service root URL, e.g. http://localhost:8000
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token for the service.
    #[arg(long, default_value = "SFC_API_KEY")]
    pub auth_env: String,
    /// Maximum concurrent service requests.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    #[arg(long, default_value_t = 5)]
    pub max_retries: u32,
    /// Token-bucket pacing in requests per second.
    #[arg(long)]
    pub requests_per_second: Option<f64>,
    /// Cache directory; also honors the SFC_CACHE_DIR environment variable.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Serve from the cache only; any miss is an error.
    #[arg(long, default_value_t = false)]
    pub offline: bool,
}

#[derive(Args, Serialize, Clone)]
pub struct RunArgs {
    /// Dataset file (JSONL, one instance per line).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Template id (bundled) or path to a template file (.json/.toml).
    #[arg(long)]
    pub template: Option<String>,
    /// Comma-separated strategies: unc,lm,avg,pmi_dc,cc,premise_lm
    #[arg(long, default_value = "unc,lm,avg,pmi_dc")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Few-shot exemplar count (0 = zero-shot).
    #[arg(long, default_value_t = 0)]
    pub k_shot: usize,
    /// Restrict exemplars to this split.
    #[arg(long, default_value = "")]
    pub fewshot_split: String,
    /// Fail the run when the errored-instance fraction exceeds this.
    #[arg(long, default_value_t = 0.01)]
    pub max_error_frac: f64,
    /// Calibration weights file for the cc strategy; fitted on the fly when
    /// omitted.
    #[arg(long)]
    pub cc_weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Serialize, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Comma-separated template ids or file paths to sweep over.
    #[arg(long)]
    pub prompt_set: String,
}

#[derive(Args, Serialize, Clone)]
pub struct SfcLabArgs {
    /// Lab spec (JSON); the bundled default when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
pub struct CalibrateArgs {
    /// Template id or file; must declare a closed label set.
    #[arg(long)]
    pub template: String,
    /// Content-free inputs; repeat the flag to override the default set
    /// {"N/A", "", "[MASK]"}.
    #[arg(long = "content-free")]
    pub content_free: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Serialize, Clone)]
pub struct TemplatesArgs {
    #[command(subcommand)]
    pub action: TemplatesAction,
}

#[derive(Subcommand, Serialize, Clone)]
pub enum TemplatesAction {
    /// Print the bundled template registry.
    List,
    /// Export a bundled template to a file (.json or .toml).
    Export {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Serialize, Clone)]
pub struct CacheArgs {
    #[command(subcommand)]
    pub action: CacheAction,
}

#[derive(Subcommand, Serialize, Clone)]
pub enum CacheAction {
    /// Print entry count and file size.
    Stats {
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Dump cache records as JSONL to stdout or a file.
    Export {
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a dataset into the cache without writing a report.
    Warm {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

fn config_error(message: impl Into<String>) -> HarnessError {
    HarnessError::Config(message.into())
}

fn parse_strategies(spec: &str) -> Result<Vec<Strategy>, HarnessError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            Strategy::parse(name).ok_or_else(|| {
                config_error(format!(
                    "unknown strategy {name:?}; expected one of unc, lm, avg, pmi_dc, cc, premise_lm"
                ))
            })
        })
        .collect()
}

fn resolve_template(spec: &str) -> Result<Template, HarnessError> {
    let path = Path::new(spec);
    if path.exists() && path.is_file() {
        return Ok(Template::from_file(path)?);
    }
    Ok(Template::bundled(spec)?)
}

fn template_for(run: &RunArgs, instances: &[sfc_core::Instance]) -> Result<Template, HarnessError> {
    match &run.template {
        Some(spec) => resolve_template(spec),
        None => {
            let dataset_id = &instances[0].dataset_id;
            Template::default_for_dataset(dataset_id).map_err(|_| {
                config_error(format!(
                    "no --template given and no bundled default for dataset {dataset_id:?}; available templates: {}",
                    bundled_template_ids().join(", ")
                ))
            })
        }
    }
}

fn cache_dir(args: &BackendArgs) -> Option<PathBuf> {
    args.cache_dir
        .clone()
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
}

/// Builds the backend stack from flags, wrapping with the persistent cache
/// when a cache directory is configured.
fn build_backend(args: &BackendArgs) -> Result<Box<dyn Backend>, HarnessError> {
    let cache = match cache_dir(args) {
        Some(dir) => Some(Arc::new(ScoreCache::open(&dir.join(CACHE_FILE)).map_err(HarnessError::Backend)?)),
        None => None,
    };
    if args.offline {
        let cache = cache.ok_or_else(|| {
            config_error("--offline needs --cache-dir (or SFC_CACHE_DIR) pointing at a warm cache")
        })?;
        let model = args
            .model
            .clone()
            .ok_or_else(|| config_error("--offline needs --model to key the cache"))?;
        return Ok(Box::new(CachedBackend::<ServiceBackend>::offline(
            cache, model,
        )));
    }
    match args.backend {
        BackendKind::Toy => {
            let spec = args
                .toy_spec
                .as_ref()
                .ok_or_else(|| config_error("--backend toy needs --toy-spec"))?;
            let toy = ToyLm::from_file(spec).map_err(HarnessError::Backend)?;
            Ok(wrap(cache, toy))
        }
        BackendKind::Ngram => {
            let corpus = args
                .ngram_corpus
                .as_ref()
                .ok_or_else(|| config_error("--backend ngram needs --ngram-corpus"))?;
            let lm = NGramLm::from_corpus_file(corpus, args.ngram_order, args.ngram_k)
                .map_err(HarnessError::Backend)?;
            Ok(wrap(cache, lm))
        }
        BackendKind::Service => {
            let base_url = args
                .base_url
                .as_ref()
                .ok_or_else(|| config_error("--backend service needs --base-url"))?;
            let model = args
                .model
                .as_ref()
                .ok_or_else(|| config_error("--backend service needs --model"))?;
            let mut config = ServiceBackendConfig::new(base_url.clone(), model.clone());
            config.auth_env = args.auth_env.clone();
            config.parallelism = args.parallelism;
            config.max_retries = args.max_retries;
            config.requests_per_second = args.requests_per_second;
            let service = ServiceBackend::new(config).map_err(HarnessError::Backend)?;
            Ok(wrap(cache, service))
        }
    }
}

fn wrap<B: Backend + 'static>(cache: Option<Arc<ScoreCache>>, backend: B) -> Box<dyn Backend> {
    match cache {
        Some(cache) => Box::new(CachedBackend::new(cache, backend)),
        None => Box::new(backend),
    }
}

fn settings_for(
    run: &RunArgs,
    backend_args: &BackendArgs,
    strategies: Vec<Strategy>,
    cc_weights: Option<CalibrationWeights>,
) -> RunSettings {
    RunSettings {
        strategies,
        seed: run.seed,
        parallelism: backend_args.parallelism.max(1),
        max_error_frac: run.max_error_frac,
        fewshot: if run.k_shot > 0 {
            let mut cfg = FewShotConfig::new(run.k_shot, run.seed);
            cfg.source_split = run.fewshot_split.clone();
            Some(cfg)
        } else {
            None
        },
        cc_weights,
    }
}

fn write_snapshot<A: Serialize>(out: &Path, args: &A) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    let snapshot = serde_json::json!({
        "argv": std::env::args().collect::<Vec<String>>(),
        "config": args,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"),
    )?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads CC weights from a file, or fits them from content-free inputs when
/// the strategy set needs them and no file was given.
fn cc_weights_for(
    run: &RunArgs,
    strategies: &[Strategy],
    template: &Template,
    backend: &dyn Backend,
) -> Result<Option<CalibrationWeights>, HarnessError> {
    if !strategies.contains(&Strategy::Cc) {
        return Ok(None);
    }
    match &run.cc_weights {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let weights: CalibrationWeights = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("bad weights file {path:?}: {e}")))?;
            weights.validate().map_err(HarnessError::Scoring)?;
            Ok(Some(weights))
        }
        None => {
            eprintln!("fitting calibration weights from content-free inputs");
            let inputs: Vec<String> = sfc_core::harness::DEFAULT_CONTENT_FREE_INPUTS
                .iter()
                .map(|s| s.to_string())
                .collect();
            let weights = calibrate_content_free(template, backend, &inputs)?;
            let path = run.out.join("cc_weights.json");
            std::fs::create_dir_all(&run.out)?;
            write_text(&path, &serde_json::to_string_pretty(&weights).unwrap())?;
            eprintln!("wrote {}", path.display());
            Ok(Some(weights))
        }
    }
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::FlipEval(args) => cmd_flip_eval(args),
        Command::SfcLab(args) => cmd_sfc_lab(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Templates(args) => cmd_templates(args),
        Command::Cache(args) => cmd_cache(args),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), HarnessError> {
    write_snapshot(&args.run.out, &args)?;
    let instances = load_dataset(&args.run.dataset, true)?;
    let template = template_for(&args.run, &instances)?;
    let strategies = parse_strategies(&args.run.strategy)?;
    let backend = build_backend(&args.backend)?;
    let cc_weights = cc_weights_for(&args.run, &strategies, &template, backend.as_ref())?;
    let settings = settings_for(&args.run, &args.backend, strategies.clone(), cc_weights);

    let report = evaluate(&instances, &template, backend.as_ref(), &settings)?;

    let out = &args.run.out;
    write_text(&out.join("report.json"), &report.to_json().unwrap())?;
    write_text(&out.join("predictions.jsonl"), &report.predictions_jsonl())?;
    let rows = vec![(report.dataset_id.clone(), report.accuracy.clone())];
    write_text(
        &out.join("report.md"),
        &report::accuracy_table_markdown(&rows, &strategies),
    )?;
    write_text(
        &out.join("report.tsv"),
        &report::accuracy_table_tsv(&rows, &strategies),
    )?;
    println!("{}", report::accuracy_table_tsv(&rows, &strategies));
    eprintln!(
        "scored {}/{} instances ({} errored); reports in {}",
        report.n_scored,
        report.n_instances,
        report.n_errored,
        out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), HarnessError> {
    write_snapshot(&args.run.out, &args)?;
    let instances = load_dataset(&args.run.dataset, true)?;
    let strategies = parse_strategies(&args.run.strategy)?;
    let templates: Result<Vec<Template>, HarnessError> = args
        .prompt_set
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(resolve_template)
        .collect();
    let templates = templates?;
    let backend = build_backend(&args.backend)?;
    if strategies.contains(&Strategy::Cc) {
        return Err(config_error(
            "sweep does not support cc; calibration is template-specific",
        ));
    }
    let settings = settings_for(&args.run, &args.backend, strategies.clone(), None);

    let report = sweep(&instances, &templates, backend.as_ref(), &settings)?;
    let out = &args.run.out;
    write_text(
        &out.join("sweep.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    write_text(
        &out.join("sweep.md"),
        &sfc_core::harness::sweep::sweep_table_markdown(&report, &strategies),
    )?;
    write_text(
        &out.join("sweep.tsv"),
        &sfc_core::harness::sweep::sweep_table_tsv(&report, &strategies),
    )?;
    println!(
        "{}",
        sfc_core::harness::sweep::sweep_table_tsv(&report, &strategies)
    );
    Ok(())
}

fn cmd_flip_eval(args: EvalArgs) -> Result<(), HarnessError> {
    write_snapshot(&args.run.out, &args)?;
    let instances = load_dataset(&args.run.dataset, true)?;
    let template = template_for(&args.run, &instances)?;
    let strategies = parse_strategies(&args.run.strategy)?;
    let backend = build_backend(&args.backend)?;
    let settings = settings_for(&args.run, &args.backend, strategies.clone(), None);

    let report = evaluate_flipped(&instances, &template, backend.as_ref(), &settings)?;
    let out = &args.run.out;
    write_text(
        &out.join("flip_report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    let rows = vec![
        ("original".to_string(), report.original.accuracy.clone()),
        ("flipped".to_string(), report.flipped.accuracy.clone()),
    ];
    let table = report::accuracy_table_markdown(&rows, &report.flipped.strategies);
    write_text(&out.join("flip_report.md"), &table)?;
    println!(
        "{}",
        report::accuracy_table_tsv(&rows, &report.flipped.strategies)
    );
    eprintln!(
        "flipped selection identity (LM/Avg/PMI_DC): {:.1}%",
        report.flipped_selection_identity * 100.0
    );
    Ok(())
}

fn cmd_sfc_lab(args: SfcLabArgs) -> Result<(), HarnessError> {
    write_snapshot(&args.out, &args)?;
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<SfcLabSpec>(&text)
                .map_err(|e| config_error(format!("bad lab spec {path:?}: {e}")))?
        }
        None => SfcLabSpec::default_spec(),
    };
    let report = run_sfc_lab(&spec)?;
    write_text(
        &args.out.join("lab_report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    let mut table = String::from("share\tlm_accuracy\tpmi_dc_accuracy\n");
    for point in &report.sweep {
        table.push_str(&format!(
            "{:.2}\t{:.4}\t{:.4}\n",
            point.paraphrase_share, point.lm_accuracy, point.pmi_dc_accuracy
        ));
    }
    write_text(&args.out.join("lab_sweep.tsv"), &table)?;
    println!(
        "default spec: LM accuracy {:.3}, PMI_DC accuracy {:.3}",
        report.lm_accuracy, report.pmi_dc_accuracy
    );
    print!("{table}");
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), HarnessError> {
    let template = resolve_template(&args.template)?;
    let backend = build_backend(&args.backend)?;
    let inputs: Vec<String> = if args.content_free.is_empty() {
        sfc_core::harness::DEFAULT_CONTENT_FREE_INPUTS
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        args.content_free.clone()
    };
    let weights = calibrate_content_free(&template, backend.as_ref(), &inputs)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_text(&args.out, &serde_json::to_string_pretty(&weights).unwrap())?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_templates(args: TemplatesArgs) -> Result<(), HarnessError> {
    match args.action {
        TemplatesAction::List => {
            println!("id\tdataset\tversion\tdomain_premise\tclosed_labels");
            for template in bundled_templates() {
                println!(
                    "{}\t{}\t{}\t{:?}\t{}",
                    template.id,
                    template.dataset_id,
                    template.version,
                    template.domain_premise,
                    template
                        .closed_label_set
                        .as_ref()
                        .map(|l| l.join("|"))
                        .unwrap_or_else(|| "-".into())
                );
            }
            Ok(())
        }
        TemplatesAction::Export { id, out } => {
            let template = Template::bundled(&id)?;
            template.to_file(&out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn cmd_cache(args: CacheArgs) -> Result<(), HarnessError> {
    match args.action {
        CacheAction::Stats { cache_dir } => {
            let path = resolve_cache_file(cache_dir)?;
            let cache = ScoreCache::open_read_only(&path).map_err(HarnessError::Backend)?;
            let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            println!("path\t{}", path.display());
            println!("entries\t{}", cache.len());
            println!("bytes\t{size}");
            Ok(())
        }
        CacheAction::Export { cache_dir, out } => {
            let path = resolve_cache_file(cache_dir)?;
            let cache = ScoreCache::open_read_only(&path).map_err(HarnessError::Backend)?;
            let mut dump = String::new();
            for record in cache.records() {
                dump.push_str(&serde_json::to_string(&record).unwrap());
                dump.push('\n');
            }
            match out {
                Some(path) => write_text(&path, &dump)?,
                None => print!("{dump}"),
            }
            Ok(())
        }
        CacheAction::Warm { run, backend } => {
            if cache_dir(&backend).is_none() {
                return Err(config_error("cache warm needs --cache-dir (or SFC_CACHE_DIR)"));
            }
            let instances = load_dataset(&run.dataset, true)?;
            let template = template_for(&run, &instances)?;
            let strategies = parse_strategies(&run.strategy)?;
            let built = build_backend(&backend)?;
            let settings = settings_for(&run, &backend, strategies, None);
            let report = evaluate(&instances, &template, built.as_ref(), &settings)?;
            eprintln!(
                "warmed cache with {} instances ({} errored)",
                report.n_scored, report.n_errored
            );
            Ok(())
        }
    }
}

fn resolve_cache_file(dir: Option<PathBuf>) -> Result<PathBuf, HarnessError> {
    let dir = dir
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| config_error("no --cache-dir given and SFC_CACHE_DIR is unset"))?;
    Ok(dir.join(CACHE_FILE))
}

/// Recomputes a wins table from per-dataset reports; exposed for tests of the
/// aggregation path through the CLI surface.
#[allow(dead_code)]
pub fn wins_from_report_files(paths: &[PathBuf]) -> Result<BTreeMap<Strategy, f64>, HarnessError> {
    let mut reports = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)?;
        let report: report::EvalReport = serde_json::from_str(&text)
            .map_err(|e| config_error(format!("bad report {path:?}: {e}")))?;
        reports.push(report);
    }
    let table = aggregate_wins(&wins_input_from_reports(&reports))?;
    Ok(table.percent)
}
