//! Command-line pipeline: prepare labels, build the reference store,
//! generate, compute metrics, and run the downstream evaluation.
//!
//! Exit codes: 0 success, 1 runtime/empty-result failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::backend::stable_hash_hex;
use crate::config::{AppConfig, RunSettings};
use crate::error::Error;
use crate::label_prep::{
    build_reference_store, ingest_corpus, load_label_vectors, prepare_label_vectors,
    save_label_vectors, AnnotationMode, CorpusFormat, DamageLevel, ReferenceStore,
};
use crate::metrics::{
    checks_passed_distribution, dataset_characteristics, emit_distribution, emit_json,
    emit_round_stats, eval_damage_prediction, eval_geolocalization, round_pass_rates,
    structural_stats, ReportFormat,
};
use crate::orchestrator::{load_audit, load_dataset, Clock, Orchestrator, RunPaths};

#[derive(Parser)]
#[command(
    name = "crisisgen",
    version,
    about = "Generate and evaluate crisis-related synthetic tweet datasets"
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replay fixture path (overrides the config's backend).
    #[arg(long, global = true)]
    replay_fixture: Option<PathBuf>,

    /// Live backend base URL (overrides the config's backend).
    #[arg(long, global = true)]
    base_url: Option<String>,

    #[arg(long, global = true)]
    generation_model: Option<String>,

    #[arg(long, global = true)]
    embedding_model: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a raw tweet corpus into target label vectors.
    PrepareLabels {
        /// Corpus file (JSONL or CSV).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: String,
        /// Copy location/damage columns from the input instead of calling
        /// the annotation backend.
        #[arg(long)]
        pre_labeled: bool,
        /// Output label-vector JSONL.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a labeled corpus into a reference store.
    BuildRefstore {
        /// Labeled corpus file (needs text and damage columns).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: String,
        /// Output reference-store JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the generation loop over a label-vector file.
    Generate {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        refstore: Option<PathBuf>,
        /// Run directory; defaults to a timestamped directory under runs/.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Feedback rounds (total attempts = rounds + 1).
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        bleu_threshold: Option<f64>,
        /// Self-BLEU reference pool size.
        #[arg(long)]
        bleu_sample: Option<usize>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        event: Option<String>,
        /// Parallel workers (sequential when omitted or 1).
        #[arg(long)]
        workers: Option<usize>,
        /// Continue a halted run from its audit checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Compute pass-rate, distribution, and dataset reports from run files.
    Metrics {
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Evaluate geolocalization and damage prediction on a dataset.
    EvaluateDownstream {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// geolocalization, damage-prediction, or both.
        #[arg(long, default_value = "both")]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    /// Exit 2: bad flags, bad config, missing input paths.
    Usage(String),
    /// Exit 1: runtime failures and empty results.
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        match err {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help/--version.
        Err(err) => err.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path).map_err(CliError::from)?,
        None => AppConfig::default(),
    };
    if let Some(fixture) = &cli.replay_fixture {
        config.backend.replay_fixture = Some(fixture.clone());
        config.backend.base_url = None;
    }
    if let Some(url) = &cli.base_url {
        config.backend.base_url = Some(url.clone());
        config.backend.replay_fixture = None;
    }
    if let Some(model) = &cli.generation_model {
        config.backend.generation_model = model.clone();
    }
    if let Some(model) = &cli.embedding_model {
        config.backend.embedding_model = model.clone();
    }
    Ok(config)
}

fn require_input(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn required_path(
    flag: Option<PathBuf>,
    fallback: Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config file)")))
}

fn parse_format(raw: &str) -> Result<CorpusFormat, CliError> {
    raw.parse::<CorpusFormat>()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult {
    let config = load_config(&cli)?;
    match cli.command {
        Command::PrepareLabels {
            input,
            format,
            pre_labeled,
            out,
        } => cmd_prepare_labels(&config, &input, &format, pre_labeled, &out),
        Command::BuildRefstore { input, format, out } => {
            cmd_build_refstore(&config, &input, &format, &out)
        }
        Command::Generate {
            labels,
            refstore,
            out,
            rounds,
            temperature,
            bleu_threshold,
            bleu_sample,
            knn_k,
            seed,
            event,
            workers,
            resume,
        } => {
            let mut run = config.run.clone();
            if let Some(v) = rounds {
                run.rounds = v;
            }
            if let Some(v) = temperature {
                run.temperature = v;
            }
            if let Some(v) = bleu_threshold {
                run.bleu_threshold = v;
            }
            if let Some(v) = bleu_sample {
                run.bleu_sample_size = v;
            }
            if let Some(v) = knn_k {
                run.knn_k = v;
            }
            if let Some(v) = seed {
                run.seed = v;
            }
            if let Some(v) = event {
                run.event_name = v;
            }
            if workers.is_some() {
                run.workers = workers;
            }
            cmd_generate(&config, run, labels, refstore, out, resume)
        }
        Command::Metrics {
            audit,
            dataset,
            out,
            format,
        } => cmd_metrics(&config, audit, dataset, out, &format),
        Command::EvaluateDownstream { dataset, task, out } => {
            cmd_evaluate_downstream(&config, dataset, &task, out)
        }
    }
}

fn cmd_prepare_labels(
    config: &AppConfig,
    input: &Path,
    format: &str,
    pre_labeled: bool,
    out: &Path,
) -> CliResult {
    require_input(input, "input corpus")?;
    let format = parse_format(format)?;
    let summary = ingest_corpus(input, format).map_err(CliError::from)?;

    let vectors = if pre_labeled {
        prepare_label_vectors(&summary.tweets, AnnotationMode::PreLabeled)
    } else {
        let backend = config.backend.build().map_err(CliError::from)?;
        prepare_label_vectors(
            &summary.tweets,
            AnnotationMode::Backend {
                backend: backend.as_ref(),
                model: &config.backend.generation_model,
            },
        )
    }
    .map_err(CliError::from)?;

    save_label_vectors(&vectors, out).map_err(CliError::from)?;
    println!(
        "wrote {} label vector(s) to {} ({} corpus row(s) skipped)",
        vectors.len(),
        out.display(),
        summary.skipped_rows
    );
    Ok(())
}

fn cmd_build_refstore(config: &AppConfig, input: &Path, format: &str, out: &Path) -> CliResult {
    require_input(input, "input corpus")?;
    let format = parse_format(format)?;
    let summary = ingest_corpus(input, format).map_err(CliError::from)?;
    let labeled: Vec<(String, DamageLevel)> = summary
        .tweets
        .iter()
        .filter_map(|t| {
            let level = t
                .damage
                .and_then(|d| u8::try_from(d).ok())
                .and_then(|d| DamageLevel::new(d).ok())?;
            Some((t.text.clone(), level))
        })
        .collect();
    if labeled.is_empty() {
        return Err(CliError::Runtime(
            "no rows with a valid damage label; reference stores need labeled texts".into(),
        ));
    }
    let backend = config.backend.build().map_err(CliError::from)?;
    let store = build_reference_store(&labeled, &config.backend.embedding_model, backend.as_ref())
        .map_err(CliError::from)?;
    store.save(out).map_err(CliError::from)?;
    println!(
        "wrote reference store with {} entries (dimension {}) to {}",
        store.len(),
        store.dimension,
        out.display()
    );
    Ok(())
}

fn cmd_generate(
    config: &AppConfig,
    run: RunSettings,
    labels: Option<PathBuf>,
    refstore: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: bool,
) -> CliResult {
    let labels_path = required_path(labels, config.paths.labels.clone(), "labels file")?;
    let refstore_path = required_path(refstore, config.paths.refstore.clone(), "reference store")?;
    require_input(&labels_path, "labels file")?;
    require_input(&refstore_path, "reference store")?;

    let targets = load_label_vectors(&labels_path).map_err(CliError::from)?;
    if targets.is_empty() {
        return Err(CliError::Runtime(format!(
            "labels file {} has no entries",
            labels_path.display()
        )));
    }
    let store = ReferenceStore::load(&refstore_path).map_err(CliError::from)?;

    let out_dir = out.unwrap_or_else(|| {
        let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
        PathBuf::from("runs").join(format!("{}-{stamp}", run.event_name))
    });
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;

    let backend = config.backend.build().map_err(CliError::from)?;
    let run_config = run.to_run_config(&config.backend.generation_model);
    run_config.validate().map_err(CliError::from)?;

    // Provenance: effective config, seed, and fixture hash.
    let mut effective = config.clone();
    effective.run = run.clone();
    effective.paths.labels = Some(labels_path.clone());
    effective.paths.refstore = Some(refstore_path.clone());
    effective
        .save(&out_dir.join("run_meta.json"))
        .map_err(CliError::from)?;
    if let Some(fixture) = &config.backend.replay_fixture {
        let bytes = std::fs::read(fixture)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", fixture.display())))?;
        let meta = serde_json::json!({ "fixture_hash": stable_hash_hex(&bytes) });
        emit_json(&meta, &out_dir.join("fixture_meta.json")).map_err(CliError::from)?;
    }

    println!(
        "run: event={} rounds={} temperature={:.1} bleu_threshold={:.1} bleu_sample={} knn_k={} seed={}",
        run_config.event_name,
        run_config.rounds,
        run_config.temperature,
        run_config.evaluator.bleu_threshold,
        run_config.evaluator.bleu_sample_size,
        run_config.evaluator.k,
        run_config.seed,
    );

    // Replay-backed runs use a fixed clock so identical re-runs produce
    // byte-identical files.
    let clock = if config.backend.is_replay() {
        Clock::fixed_epoch()
    } else {
        Clock::System
    };
    let orchestrator = Orchestrator::new(&run_config, &store, backend.as_ref()).with_clock(clock);
    let paths = RunPaths {
        dataset: out_dir.join("dataset.jsonl"),
        audit: out_dir.join("audit.jsonl"),
    };
    let output = orchestrator
        .run_dataset_to_files(&targets, &paths, resume)
        .map_err(|e| {
            CliError::Runtime(format!(
                "run halted ({e}); checkpoint retained in {}",
                out_dir.display()
            ))
        })?;

    let accepted = output.accepted();
    println!(
        "items={} accepted={} acceptance_pct={:.1}",
        targets.len(),
        accepted,
        100.0 * accepted as f64 / targets.len() as f64
    );
    println!("outputs in {}", out_dir.display());
    Ok(())
}

fn cmd_metrics(
    config: &AppConfig,
    audit: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    format: &str,
) -> CliResult {
    let audit_path = required_path(audit, config.paths.audit.clone(), "audit file")?;
    require_input(&audit_path, "audit file")?;
    let format: ReportFormat = format
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let out_dir = out
        .or(config.paths.reports.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;

    let audit_records = load_audit(&audit_path).map_err(CliError::from)?;
    let stats = round_pass_rates(&audit_records).map_err(CliError::from)?;
    let distribution = checks_passed_distribution(&audit_records).map_err(CliError::from)?;

    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let stats_path = out_dir.join(format!("round_stats.{ext}"));
    emit_round_stats(&stats, &stats_path, format).map_err(CliError::from)?;
    let dist_path = out_dir.join(format!("checks_distribution.{ext}"));
    emit_distribution(&distribution, &dist_path, format).map_err(CliError::from)?;
    println!("wrote {}", stats_path.display());
    println!("wrote {}", dist_path.display());

    let dataset_path = dataset.or(config.paths.dataset.clone());
    if let Some(dataset_path) = dataset_path {
        require_input(&dataset_path, "dataset file")?;
        let records = load_dataset(&dataset_path).map_err(CliError::from)?;
        let characteristics = dataset_characteristics(&records).map_err(CliError::from)?;
        let characteristics_path = out_dir.join("characteristics.json");
        emit_json(&characteristics, &characteristics_path).map_err(CliError::from)?;
        let texts: Vec<String> = records.iter().map(|r| r.tweet_text.clone()).collect();
        let structural = structural_stats(&texts);
        let structural_path = out_dir.join("structural.json");
        emit_json(&structural, &structural_path).map_err(CliError::from)?;
        println!("wrote {}", characteristics_path.display());
        println!("wrote {}", structural_path.display());
        println!("{}", characteristics.display_summary());
    }
    Ok(())
}

fn cmd_evaluate_downstream(
    config: &AppConfig,
    dataset: Option<PathBuf>,
    task: &str,
    out: Option<PathBuf>,
) -> CliResult {
    let dataset_path = required_path(dataset, config.paths.dataset.clone(), "dataset file")?;
    require_input(&dataset_path, "dataset file")?;
    let records = load_dataset(&dataset_path).map_err(CliError::from)?;
    if records.is_empty() {
        return Err(CliError::Runtime(format!(
            "dataset {} has no records",
            dataset_path.display()
        )));
    }
    let (run_geo, run_damage) = match task {
        "geolocalization" => (true, false),
        "damage-prediction" => (false, true),
        "both" => (true, true),
        other => {
            return Err(CliError::Usage(format!(
                "unknown task {other:?} (expected geolocalization, damage-prediction, or both)"
            )))
        }
    };
    let out_dir = out
        .or(config.paths.reports.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
    let backend = config.backend.build().map_err(CliError::from)?;

    if run_geo {
        let report = eval_geolocalization(
            &records,
            &config.backend.generation_model,
            backend.as_ref(),
        )
        .map_err(CliError::from)?;
        let path = out_dir.join("eval_geolocalization.json");
        emit_json(&report, &path).map_err(CliError::from)?;
        println!(
            "geolocalization: pct_valid={:.1} accuracy={:.1}{}",
            report.pct_valid,
            report.accuracy_relative,
            if report.accuracy_defined {
                ""
            } else {
                " (undefined: no valid outputs)"
            }
        );
    }
    if run_damage {
        let report = eval_damage_prediction(
            &records,
            &config.backend.generation_model,
            backend.as_ref(),
        )
        .map_err(CliError::from)?;
        let path = out_dir.join("eval_damage_prediction.json");
        emit_json(&report, &path).map_err(CliError::from)?;
        println!(
            "damage-prediction: pct_valid={:.1} accuracy={:.1}{}",
            report.pct_valid,
            report.accuracy_relative,
            if report.accuracy_defined {
                ""
            } else {
                " (undefined: no valid outputs)"
            }
        );
    }
    Ok(())
}
