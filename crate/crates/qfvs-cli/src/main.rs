//! `qfvs`: generate synthetic data, train the summarizer per
//! leave-one-video-out fold, summarize a video against a two-concept
//! query, evaluate summaries, and export the analysis graphs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric
//! failure during training. The `QFVS_SEED` environment variable replaces
//! the built-in default seed; explicit flags and config files win over it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qfvs_core::config::{apply_config_text, key_help, read_config_file, write_config_file};
use qfvs_core::dataset::{
    classify_scenario, generate_synthetic, load_bundle, oracle_summary, save_bundle,
    DatasetBundle, GenConfig, QuerySpec, Scenario, ScenarioPattern,
};
use qfvs_core::evalmetric::{evaluate_summary, serialize_report, TagSet};
use qfvs_core::model::QfvsModel;
use qfvs_core::report::{
    build_rows, parse_summary, render_summary, render_tally, score_curve_csv, score_curve_svg,
    timeline_csv, timeline_svg, verify_graphs, SummaryDoc,
};
use qfvs_core::scoring::{select_summary, SELECT_RATIO};
use qfvs_core::tensor::checkpoint;
use qfvs_core::tensor::rng::SplitMix64;
use qfvs_core::trainer::{
    evaluate_run, render_log, render_report_table, score_video, segment_video, train, FoldOutcome,
    TrainConfig, TrainRun,
};
use qfvs_core::Error;

#[derive(Parser)]
#[command(
    name = "qfvs",
    version,
    about = "Query-focused video summarization pipeline",
    after_help = "Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.\n\
                  QFVS_SEED overrides the default seed; flags and config files win over it."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle with known ground truth
    GenData(GenDataArgs),
    /// Train one model per leave-one-video-out fold
    Train(TrainArgs),
    /// Score one video against a two-concept query and export a summary
    Summarize(SummarizeArgs),
    /// Score checkpoints or a summary document against the ground truth
    Evaluate(EvaluateArgs),
    /// Derive the timeline and score-curve graphs from a summary
    ReportGraphs(ReportGraphsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output bundle path (JSON lines)
    #[arg(long)]
    out: PathBuf,
    /// Number of videos; leave-one-out needs at least 2
    #[arg(long, default_value_t = 4)]
    videos: usize,
    /// Shots per video
    #[arg(long, default_value_t = 200)]
    shots: usize,
    /// Feature width of each shot
    #[arg(long, default_value_t = 2048)]
    dim: usize,
    /// Standard deviation of the feature noise
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Generator seed (default 0, or QFVS_SEED when set)
    #[arg(long)]
    seed: Option<u64>,
    /// Concepts in the lexicon
    #[arg(long, default_value_t = 48)]
    concepts: usize,
    /// Queries per video and scenario: both-joint,both-disjoint,one-present,none-present
    #[arg(long, default_value = "15,15,15,1", value_name = "J,D,O,N")]
    queries: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset bundle produced by gen-data
    #[arg(long)]
    data: PathBuf,
    /// key = value config file; omitted keys keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for checkpoints, the effective config, and the log
    #[arg(long)]
    out_dir: PathBuf,
    /// Overwrite files left by a previous run
    #[arg(long)]
    force: bool,
    /// Upper bound on worker threads; the current implementation uses one
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the config learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Override the config batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Print every recognised config key and exit
    #[arg(long)]
    list_config_keys: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Dataset bundle holding the video and lexicon
    #[arg(long)]
    data: PathBuf,
    /// Fold checkpoint written by train
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config describing the checkpoint's model shape; defaults to
    /// config.txt beside the checkpoint
    #[arg(long)]
    config: Option<PathBuf>,
    /// Video id to summarize
    #[arg(long)]
    video: String,
    /// Two lexicon concepts, comma separated
    #[arg(long, value_name = "C1,C2")]
    query: String,
    /// Output summary document path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset bundle with the ground truth
    #[arg(long)]
    data: PathBuf,
    /// Training output directory (config.txt plus fold checkpoints)
    #[arg(long, required_unless_present = "summary_file", conflicts_with = "summary_file")]
    checkpoint: Option<PathBuf>,
    /// Evaluate one summary document instead of checkpoints
    #[arg(long)]
    summary_file: Option<PathBuf>,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportGraphsArgs {
    /// Summary document written by summarize
    #[arg(long)]
    summary: PathBuf,
    /// Path prefix for the two CSVs and the two SVGs
    #[arg(long)]
    out_prefix: String,
    /// Check existing graph files against the summary instead of writing
    #[arg(long)]
    verify: bool,
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Summarize(args) => run_summarize(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::ReportGraphs(args) => run_report_graphs(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Lib(e)) => {
            let code = if matches!(e, Error::Numeric(_)) { 3 } else { 2 };
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}

/// Seed override from the environment; unset is fine, junk is a usage
/// error.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("QFVS_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| usage(format!("QFVS_SEED must be an unsigned integer, got '{raw}'"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(usage("QFVS_SEED is not valid unicode")),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Lib(Error::io(path.display().to_string(), e)))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Lib(Error::io(path.display().to_string(), e)))
}

fn run_gen_data(args: GenDataArgs) -> CliResult {
    if args.videos < 2 {
        return Err(usage(format!(
            "--videos must be at least 2 for leave-one-video-out, got {}",
            args.videos
        )));
    }
    let parts: Vec<&str> = args.queries.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(usage(format!(
            "--queries wants 4 comma-separated counts (both-joint,both-disjoint,one-present,none-present), got '{}'",
            args.queries
        )));
    }
    let mut counts = [0usize; 4];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| usage(format!("--queries count '{part}' is not an unsigned integer")))?;
    }
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let cfg = GenConfig {
        n_videos: args.videos,
        shots_per_video: args.shots,
        n_concepts: args.concepts,
        feature_dim: args.dim,
        noise_sigma: args.noise,
        seed,
        pattern: ScenarioPattern {
            both_joint: counts[0],
            both_disjoint: counts[1],
            one_present: counts[2],
            none_present: counts[3],
        },
    };
    let bundle = generate_synthetic(&cfg)?;
    save_bundle(&bundle, &args.out)?;
    println!("wrote {}", args.out.display());
    println!(
        "videos={} shots-per-video={} feature-dim={} concepts={} seed={}",
        bundle.videos.len(),
        cfg.shots_per_video,
        bundle.feature_dim(),
        bundle.lexicon.len(),
        seed
    );
    let mut audit = String::from("queries:");
    for sc in Scenario::ALL {
        let n = bundle.queries.iter().filter(|q| q.scenario == sc).count();
        let _ = write!(audit, " {}={n}", sc.as_str());
    }
    let _ = write!(audit, " total={}", bundle.queries.len());
    println!("{audit}");
    Ok(())
}

/// Layers the effective config: defaults, then QFVS_SEED, then the file,
/// then explicit flags.
fn compose_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &args.config {
        let text = read_text(path)?;
        apply_config_text(&mut cfg, &text).map_err(CliError::Lib)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    Ok(cfg)
}

fn fold_checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold:02}.ckpt"))
}

fn run_train(args: TrainArgs) -> CliResult {
    if args.list_config_keys {
        print!("{}", key_help());
        return Ok(());
    }
    if args.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let cfg = compose_train_config(&args)?;
    let bundle = load_bundle(&args.data)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Lib(Error::io(args.out_dir.display().to_string(), e)))?;

    let config_path = args.out_dir.join("config.txt");
    let log_path = args.out_dir.join("train_log.txt");
    let mut targets = vec![config_path.clone(), log_path.clone()];
    for fold in 0..bundle.videos.len() {
        targets.push(fold_checkpoint_path(&args.out_dir, fold));
    }
    if !args.force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(usage(format!(
                "{} already exists; pass --force to overwrite the previous run",
                existing.display()
            )));
        }
    }

    write_config_file(&cfg, &config_path)?;
    let run = train(&bundle, &cfg)?;
    let mut log = String::new();
    for outcome in &run.folds {
        log.push_str(&render_log(&outcome.log));
    }
    write_text(&log_path, &log)?;
    for (i, outcome) in run.folds.iter().enumerate() {
        checkpoint::write_file(&fold_checkpoint_path(&args.out_dir, i), &outcome.entries)?;
    }

    println!("wrote {}", config_path.display());
    println!("wrote {}", log_path.display());
    for (i, outcome) in run.folds.iter().enumerate() {
        let final_loss = outcome
            .log
            .last()
            .map(|r| r.mean_loss.to_string())
            .unwrap_or_else(|| "n/a".into());
        println!(
            "fold={i} held-out={} final-mean-loss={final_loss} checkpoint={}",
            bundle.videos[outcome.fold.test_video].video_id,
            fold_checkpoint_path(&args.out_dir, i).display()
        );
    }
    Ok(())
}

/// Splits `--query C1,C2` into two distinct trimmed concepts.
fn parse_query_pair(raw: &str) -> Result<(String, String), CliError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!(
            "--query wants exactly two comma-separated concepts, got '{raw}'"
        )));
    }
    if parts[0] == parts[1] {
        return Err(usage(format!(
            "--query concepts must differ, got '{}' twice",
            parts[0]
        )));
    }
    Ok((parts[0].to_string(), parts[1].to_string()))
}

/// Resolves a concept against the lexicon, suggesting close names on a
/// miss.
fn check_concept(bundle: &DatasetBundle, concept: &str) -> Result<(), CliError> {
    if bundle.lexicon.embedding(concept).is_some() {
        return Ok(());
    }
    let near = bundle.lexicon.suggest(concept, 3).join(", ");
    Err(CliError::Lib(Error::Config(format!(
        "concept '{concept}' is not in this bundle's lexicon; closest entries: {near}"
    ))))
}

fn video_tags(bundle: &DatasetBundle, video_idx: usize) -> Vec<TagSet> {
    bundle.videos[video_idx]
        .shots
        .iter()
        .map(|s| s.tags.clone())
        .collect()
}

fn lookup_video(bundle: &DatasetBundle, id: &str) -> Result<usize, CliError> {
    bundle.video_index(id).ok_or_else(|| {
        let known: Vec<&str> = bundle.videos.iter().map(|v| v.video_id.as_str()).collect();
        CliError::Lib(Error::Config(format!(
            "video '{id}' is not in the bundle; it holds: {}",
            known.join(", ")
        )))
    })
}

fn run_summarize(args: SummarizeArgs) -> CliResult {
    let (c1, c2) = parse_query_pair(&args.query)?;
    let bundle = load_bundle(&args.data)?;
    let vi = lookup_video(&bundle, &args.video)?;
    check_concept(&bundle, &c1)?;
    check_concept(&bundle, &c2)?;

    let config_path = args.config.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("config.txt")
    });
    let cfg = read_config_file(&config_path)?;
    cfg.validate()?;

    let video = &bundle.videos[vi];
    let scenario = classify_scenario(video, &c1, &c2);
    let query = QuerySpec::new(&c1, &c2, scenario, &args.video, &bundle.lexicon)?;

    let mut rng = SplitMix64::new(0);
    let mut model = QfvsModel::new(cfg.model.clone(), &mut rng)?;
    model.load_checkpoint(&args.checkpoint)?;

    let segmented = segment_video(video, &cfg.kts, cfg.model.backbone.t)?;
    let scores = score_video(&mut model, &segmented, &query.h_q)?;
    let summary = select_summary(&scores, SELECT_RATIO)?;
    let gt = oracle_summary(video, &query);

    let tags = video_tags(&bundle, vi);
    let rows = build_rows(&tags, &c1, &c2, &scores.scores, &summary.selected, &gt)?;
    let starts: Vec<usize> = segmented.ranges.iter().map(|r| r.start).collect();
    let doc = SummaryDoc::new(args.video.clone(), c1, c2, SELECT_RATIO, starts, rows)?;
    write_text(&args.out, &render_summary(&doc))?;

    println!("wrote {}", args.out.display());
    println!(
        "selected {} of {} shots (ratio {})",
        summary.selected.len(),
        video.shots.len(),
        SELECT_RATIO
    );
    println!("scenario: {scenario}");
    if scenario == Scenario::NonePresent {
        println!("note: neither query concept appears in this video; the summary is the top slice of uniformly low scores");
    }
    println!("{}", render_tally(&doc));
    Ok(())
}

fn evaluate_checkpoints(data: &Path, dir: &Path, out: Option<&Path>) -> CliResult {
    let bundle = load_bundle(data)?;
    let cfg = read_config_file(&dir.join("config.txt"))?;
    cfg.validate()?;
    let mut outcomes = Vec::new();
    for (i, fold) in bundle.folds().into_iter().enumerate() {
        let entries = checkpoint::read_file(&fold_checkpoint_path(dir, i))?;
        outcomes.push(FoldOutcome {
            fold,
            entries,
            log: Vec::new(),
        });
    }
    let run = TrainRun { folds: outcomes };
    let report = evaluate_run(&bundle, &run, &cfg)?;
    let table = render_report_table(&report);
    print!("{table}");
    if let Some(out) = out {
        write_text(out, &table)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn evaluate_summary_file(data: &Path, summary: &Path, out: Option<&Path>) -> CliResult {
    let bundle = load_bundle(data)?;
    let doc = parse_summary(&read_text(summary)?)?;
    let vi = lookup_video(&bundle, &doc.video)?;
    check_concept(&bundle, &doc.concept1)?;
    check_concept(&bundle, &doc.concept2)?;
    let tags = video_tags(&bundle, vi);
    if tags.len() != doc.n_shots() {
        return Err(CliError::Lib(Error::Config(format!(
            "summary covers {} shots but video '{}' has {}",
            doc.n_shots(),
            doc.video,
            tags.len()
        ))));
    }
    let gt: Vec<usize> = (0..tags.len())
        .filter(|&i| tags[i].contains(&doc.concept1) || tags[i].contains(&doc.concept2))
        .collect();
    if gt != doc.gt_indices() {
        return Err(CliError::Lib(Error::Config(format!(
            "summary ground-truth flags disagree with the bundle for video '{}'; was it produced from different data?",
            doc.video
        ))));
    }
    let machine = doc.selected_indices();
    let report = evaluate_summary(&gt, &machine, &tags)?;
    let text = serialize_report(&report);
    print!("{text}");
    if let Some(out) = out {
        write_text(out, &text)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> CliResult {
    match (&args.checkpoint, &args.summary_file) {
        (Some(dir), None) => evaluate_checkpoints(&args.data, dir, args.out.as_deref()),
        (None, Some(file)) => evaluate_summary_file(&args.data, file, args.out.as_deref()),
        _ => Err(usage(
            "exactly one of --checkpoint and --summary-file must be given",
        )),
    }
}

fn run_report_graphs(args: ReportGraphsArgs) -> CliResult {
    let doc = parse_summary(&read_text(&args.summary)?)?;
    let timeline_csv_path = PathBuf::from(format!("{}.timeline.csv", args.out_prefix));
    let curve_csv_path = PathBuf::from(format!("{}.scores.csv", args.out_prefix));
    let timeline_svg_path = PathBuf::from(format!("{}.timeline.svg", args.out_prefix));
    let curve_svg_path = PathBuf::from(format!("{}.scores.svg", args.out_prefix));

    if args.verify {
        let timeline = read_text(&timeline_csv_path)?;
        let curve = read_text(&curve_csv_path)?;
        verify_graphs(&doc, &timeline, &curve)?;
        println!(
            "graphs match the summary: {} shots, {} selected",
            doc.n_shots(),
            doc.selected_indices().len()
        );
        return Ok(());
    }

    write_text(&timeline_csv_path, &timeline_csv(&doc))?;
    write_text(&curve_csv_path, &score_curve_csv(&doc))?;
    write_text(&timeline_svg_path, &timeline_svg(&doc))?;
    write_text(&curve_svg_path, &score_curve_svg(&doc))?;
    for p in [
        &timeline_csv_path,
        &curve_csv_path,
        &timeline_svg_path,
        &curve_svg_path,
    ] {
        println!("wrote {}", p.display());
    }
    println!("{}", render_tally(&doc));
    Ok(())
}
