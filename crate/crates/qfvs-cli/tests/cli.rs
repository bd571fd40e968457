//! End-to-end tests driving the compiled `qfvs` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfvs_core::config::render_config;
use qfvs_core::dataset::{load_bundle, oracle_summary, QuerySpec};
use qfvs_core::report::{build_rows, render_summary, SummaryDoc};
use qfvs_core::trainer::TrainConfig;

fn qfvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfvs"))
        .args(args)
        .env_remove("QFVS_SEED")
        .output()
        .expect("binary runs")
}

fn qfvs_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfvs"))
        .args(args)
        .env_remove("QFVS_SEED")
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

/// Small model matching the 3-d test bundle, mirrored into a config file.
fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.lr = 2e-3;
    cfg.epochs = 3;
    cfg.seed = 9;
    cfg.model.backbone.input_dim = 3;
    cfg.model.backbone.conv_widths = [4, 4, 4, 4, 4];
    cfg.model.backbone.conv_layers = [1, 1, 1, 1, 1];
    cfg.model.backbone.pool_strides = [2, 2, 1, 1, 1];
    cfg.model.backbone.fc_widths = [4, 4];
    cfg.model.backbone.block8_out = 4;
    cfg.model.backbone.deconv_strides = [2, 2];
    cfg.model.backbone.deconv_mid = 4;
    cfg.model.backbone.out_dim = 4;
    cfg.model.backbone.dropout_p = 0.1;
    cfg.model.backbone.t = 12;
    cfg.model.backbone.attention_dim = 4;
    cfg.model.scoring.visual_in = 4;
    cfg.model.scoring.visual_hidden = 4;
    cfg.model.scoring.shared_dim = 4;
    cfg.model.scoring.query_hidden = 4;
    cfg.model.scoring.mlp_hidden1 = 4;
    cfg.model.scoring.mlp_hidden2 = 3;
    cfg.kts.max_segment_len = 12;
    cfg
}

fn gen_tiny_bundle(out: &Path) {
    let run = qfvs(&[
        "gen-data",
        "--out",
        path_str(out),
        "--videos",
        "2",
        "--shots",
        "24",
        "--dim",
        "3",
        "--concepts",
        "8",
        "--noise",
        "0.05",
        "--seed",
        "11",
        "--queries",
        "2,1,2,1",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.conf");
    std::fs::write(&path, render_config(&tiny_config())).unwrap();
    path
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = qfvs(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for cmd in ["gen-data", "train", "summarize", "evaluate", "report-graphs"] {
        assert!(text.contains(cmd), "help is missing {cmd}");
    }

    let out = qfvs(&["--no-such-flag"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gen_data_is_deterministic_and_audits_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    gen_tiny_bundle(&a);
    gen_tiny_bundle(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.jsonl");
    let run = qfvs(&[
        "gen-data", "--out", path_str(&c), "--videos", "2", "--shots", "24", "--dim", "3",
        "--concepts", "8", "--noise", "0.05", "--seed", "12", "--queries", "2,1,2,1",
    ]);
    assert_eq!(code(&run), 0);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let audit = stdout(&run);
    assert!(audit.contains("both-joint=4"), "{audit}");
    assert!(audit.contains("none-present=2"), "{audit}");
    assert!(audit.contains("total=12"), "{audit}");
}

#[test]
fn gen_data_flag_misuse_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x.jsonl");

    let run = qfvs(&["gen-data", "--out", path_str(&out_path), "--videos", "1"]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("at least 2"), "{}", stderr(&run));
    assert!(!out_path.exists());

    let run = qfvs(&[
        "gen-data", "--out", path_str(&out_path), "--videos", "2", "--queries", "1,2,3",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("4 comma-separated"), "{}", stderr(&run));

    let run = qfvs(&["gen-data", "--videos", "2"]);
    assert_eq!(code(&run), 1, "--out is required");
}

#[test]
fn qfvs_seed_env_overrides_default_but_not_flags() {
    let dir = tempfile::tempdir().unwrap();
    let by_flag = dir.path().join("flag.jsonl");
    gen_tiny_bundle(&by_flag);

    let by_env = dir.path().join("env.jsonl");
    let args = [
        "gen-data", "--out", path_str(&by_env), "--videos", "2", "--shots", "24", "--dim", "3",
        "--concepts", "8", "--noise", "0.05", "--queries", "2,1,2,1",
    ];
    let run = qfvs_with_env(&args, "QFVS_SEED", "11");
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(std::fs::read(&by_flag).unwrap(), std::fs::read(&by_env).unwrap());

    let flag_wins = dir.path().join("flagwins.jsonl");
    let args = [
        "gen-data", "--out", path_str(&flag_wins), "--videos", "2", "--shots", "24", "--dim", "3",
        "--concepts", "8", "--noise", "0.05", "--seed", "11", "--queries", "2,1,2,1",
    ];
    let run = qfvs_with_env(&args, "QFVS_SEED", "999");
    assert_eq!(code(&run), 0);
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&flag_wins).unwrap()
    );

    let run = qfvs_with_env(&["gen-data", "--out", "/tmp/never.jsonl"], "QFVS_SEED", "zebra");
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("QFVS_SEED"), "{}", stderr(&run));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);
    let config_path = write_tiny_config(dir.path());
    let run_dir = dir.path().join("run");

    let train_args = [
        "train",
        "--data",
        path_str(&bundle_path),
        "--config",
        path_str(&config_path),
        "--out-dir",
        path_str(&run_dir),
    ];
    let run = qfvs(&train_args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for file in ["config.txt", "train_log.txt", "fold_00.ckpt", "fold_01.ckpt"] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let log = std::fs::read_to_string(run_dir.join("train_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 2 * 3, "2 folds x 3 epochs");
    assert!(log.contains("fold=0 epoch=0"), "{log}");

    let refused = qfvs(&train_args);
    assert_eq!(code(&refused), 1);
    assert!(stderr(&refused).contains("--force"), "{}", stderr(&refused));

    let mut forced: Vec<&str> = train_args.to_vec();
    forced.push("--force");
    let rerun = qfvs(&forced);
    assert_eq!(code(&rerun), 0, "{}", stderr(&rerun));
    let log_again = std::fs::read_to_string(run_dir.join("train_log.txt")).unwrap();
    assert_eq!(log, log_again, "training is not deterministic");

    let bundle = load_bundle(&bundle_path).unwrap();
    let names = bundle.lexicon.names();
    let query = format!("{},{}", names[0], names[1]);
    let summary_path = dir.path().join("summary.txt");
    let run = qfvs(&[
        "summarize",
        "--data",
        path_str(&bundle_path),
        "--checkpoint",
        path_str(&run_dir.join("fold_00.ckpt")),
        "--video",
        "video-0",
        "--query",
        &query,
        "--out",
        path_str(&summary_path),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("selected 1 of 24 shots"), "{text}");
    assert!(text.contains("scenario:"), "{text}");
    let doc = qfvs_core::report::parse_summary(&std::fs::read_to_string(&summary_path).unwrap())
        .expect("summary parses");
    assert_eq!(doc.n_shots(), 24);
    assert_eq!(doc.selected_indices().len(), 1);
    assert_eq!(doc.video, "video-0");

    let run = qfvs(&[
        "evaluate",
        "--data",
        path_str(&bundle_path),
        "--checkpoint",
        path_str(&run_dir),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = stdout(&run);
    assert!(table.contains("video-0"), "{table}");
    assert!(table.contains("video-1"), "{table}");
    assert!(table.contains("AVG"), "{table}");

    let eval_out = dir.path().join("eval.txt");
    let run = qfvs(&[
        "evaluate",
        "--data",
        path_str(&bundle_path),
        "--summary-file",
        path_str(&summary_path),
        "--out",
        path_str(&eval_out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(stdout(&run).contains("f1="), "{}", stdout(&run));
    assert!(eval_out.exists());

    let prefix = dir.path().join("graphs");
    let run = qfvs(&[
        "report-graphs",
        "--summary",
        path_str(&summary_path),
        "--out-prefix",
        path_str(&prefix),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for suffix in ["timeline.csv", "scores.csv", "timeline.svg", "scores.svg"] {
        assert!(
            dir.path().join(format!("graphs.{suffix}")).exists(),
            "missing graphs.{suffix}"
        );
    }
    let timeline = std::fs::read_to_string(dir.path().join("graphs.timeline.csv")).unwrap();
    assert_eq!(timeline.lines().count(), 24 + 1);

    let verify_args = [
        "report-graphs",
        "--summary",
        path_str(&summary_path),
        "--out-prefix",
        path_str(&prefix),
        "--verify",
    ];
    let run = qfvs(&verify_args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(stdout(&run).contains("match"), "{}", stdout(&run));

    let tampered = timeline.replacen(",0\n", ",1\n", 1);
    std::fs::write(dir.path().join("graphs.timeline.csv"), tampered).unwrap();
    let run = qfvs(&verify_args);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("does not match"), "{}", stderr(&run));
}

#[test]
fn summarize_suggests_lexicon_entries_for_unknown_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);
    let run = qfvs(&[
        "summarize",
        "--data",
        path_str(&bundle_path),
        "--checkpoint",
        path_str(&dir.path().join("whatever.ckpt")),
        "--video",
        "video-0",
        "--query",
        "CAR,BORT",
        "--out",
        path_str(&dir.path().join("s.txt")),
    ]);
    assert_eq!(code(&run), 2);
    let msg = stderr(&run);
    assert!(msg.contains("'BORT'"), "{msg}");
    assert!(msg.contains("closest entries"), "{msg}");
    assert!(msg.contains("BOAT"), "{msg}");

    let run = qfvs(&[
        "summarize",
        "--data",
        path_str(&bundle_path),
        "--checkpoint",
        "x.ckpt",
        "--video",
        "video-0",
        "--query",
        "CAR",
        "--out",
        "s.txt",
    ]);
    assert_eq!(code(&run), 1, "one concept is flag misuse");
}

#[test]
fn oracle_summary_file_scores_a_perfect_f1() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);
    let bundle = load_bundle(&bundle_path).unwrap();

    let query = bundle
        .queries
        .iter()
        .find(|q| q.video_id == "video-0" && !bundle.oracles[0].is_empty())
        .map(|q| QuerySpec::new(&q.c1, &q.c2, q.scenario, &q.video_id, &bundle.lexicon).unwrap())
        .expect("bundle has queries");
    let vi = bundle.video_index("video-0").unwrap();
    let video = &bundle.videos[vi];
    let gt = oracle_summary(video, &query);
    assert!(!gt.is_empty(), "pick a query with a nonempty oracle");

    let tags: Vec<_> = video.shots.iter().map(|s| s.tags.clone()).collect();
    let scores: Vec<f64> = (0..tags.len())
        .map(|i| if gt.contains(&i) { 1.0 } else { 0.0 })
        .collect();
    let rows = build_rows(&tags, &query.c1, &query.c2, &scores, &gt, &gt).unwrap();
    let doc = SummaryDoc::new(
        "video-0".into(),
        query.c1.clone(),
        query.c2.clone(),
        0.02,
        Vec::new(),
        rows,
    )
    .unwrap();
    let summary_path = dir.path().join("oracle.txt");
    std::fs::write(&summary_path, render_summary(&doc)).unwrap();

    let run = qfvs(&[
        "evaluate",
        "--data",
        path_str(&bundle_path),
        "--summary-file",
        path_str(&summary_path),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("f1=1"), "{text}");
    assert!(text.contains("precision=1"), "{text}");
}

#[test]
fn evaluate_rejects_summaries_from_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);
    let bundle = load_bundle(&bundle_path).unwrap();
    let names = bundle.lexicon.names();

    let vi = bundle.video_index("video-0").unwrap();
    let tags: Vec<_> = bundle.videos[vi].shots.iter().map(|s| s.tags.clone()).collect();
    let scores = vec![0.5; tags.len()];
    let mut rows = build_rows(&tags, &names[0], &names[1], &scores, &[0], &[]).unwrap();
    for row in &mut rows {
        row.in_ground_truth = false;
    }
    rows[0].in_ground_truth = tags.iter().all(|t| !t.contains(&names[0]));
    let doc = SummaryDoc::new(
        "video-0".into(),
        names[0].clone(),
        names[1].clone(),
        0.02,
        Vec::new(),
        rows,
    )
    .unwrap();
    let summary_path = dir.path().join("foreign.txt");
    std::fs::write(&summary_path, render_summary(&doc)).unwrap();

    let run = qfvs(&[
        "evaluate",
        "--data",
        path_str(&bundle_path),
        "--summary-file",
        path_str(&summary_path),
    ]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(stderr(&run).contains("disagree"), "{}", stderr(&run));
}

#[test]
fn training_numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);
    let mut cfg = tiny_config();
    cfg.clamp_eps = 0.0;
    cfg.lr = 10.0;
    cfg.epochs = 10;
    let config_path = dir.path().join("blowup.conf");
    std::fs::write(&config_path, render_config(&cfg)).unwrap();

    let run = qfvs(&[
        "train",
        "--data",
        path_str(&bundle_path),
        "--config",
        path_str(&config_path),
        "--out-dir",
        path_str(&dir.path().join("run")),
    ]);
    assert_eq!(code(&run), 3, "{}", stderr(&run));
    assert!(stderr(&run).contains("non-finite"), "{}", stderr(&run));
}

#[test]
fn train_surfaces_config_and_data_mistakes() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_path = dir.path().join("bundle.jsonl");
    gen_tiny_bundle(&bundle_path);

    let run = qfvs(&[
        "train",
        "--data",
        path_str(&dir.path().join("missing.jsonl")),
        "--out-dir",
        path_str(&dir.path().join("run")),
    ]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("missing.jsonl"), "{}", stderr(&run));

    let config_path = dir.path().join("bad.conf");
    std::fs::write(&config_path, "lr = fast\n").unwrap();
    let run = qfvs(&[
        "train",
        "--data",
        path_str(&bundle_path),
        "--config",
        path_str(&config_path),
        "--out-dir",
        path_str(&dir.path().join("run")),
    ]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("line 1"), "{}", stderr(&run));

    let run = qfvs(&[
        "train",
        "--data",
        path_str(&bundle_path),
        "--out-dir",
        path_str(&dir.path().join("run2")),
    ]);
    assert_eq!(code(&run), 2, "default 2048-d model against a 3-d bundle");
    assert!(stderr(&run).contains("3"), "{}", stderr(&run));

    let run = qfvs(&["train", "--list-config-keys", "--data", "x", "--out-dir", "y"]);
    assert_eq!(code(&run), 0);
    assert!(stdout(&run).contains("backbone.t"), "{}", stdout(&run));
}
