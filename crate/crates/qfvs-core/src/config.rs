//! Flat `key = value` configuration files for training runs.
//!
//! The grammar is line oriented: blank lines and lines whose first
//! non-space character is `#` are skipped, every other line must be
//! `key = value`. Keys are dotted paths into [`TrainConfig`]
//! (`backbone.t`, `kts.penalty_weight`, ...) and values are numbers or
//! comma-separated number lists. Keys left out keep their defaults, so a
//! file only needs the values it overrides. Unknown keys, duplicate keys,
//! and malformed values are reported with their line number.
//!
//! Parsing does not run [`TrainConfig::validate`]; callers compose the
//! final config (file plus command-line overrides) and validate once.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::edit_distance;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("lr", "initial Adam learning rate"),
    ("lr_decay", "multiplicative learning-rate decay per epoch, in (0, 1]"),
    ("epochs", "training epochs per fold"),
    ("batch_size", "(video, query) samples per optimiser step"),
    ("seed", "root RNG seed for init, dropout and shuffling"),
    ("clamp_eps", "score clamp inside the loss; 0 disables clamping"),
    ("backbone.input_dim", "channels of the incoming shot features"),
    ("backbone.conv_widths", "output channels of conv blocks 1-5 (5 values)"),
    ("backbone.conv_layers", "conv layers per block for blocks 1-5 (5 values)"),
    (
        "backbone.pool_strides",
        "max-pool stride after blocks 1-5, 1 disables (5 values)",
    ),
    ("backbone.fc_widths", "output channels of blocks 6 and 7 (2 values)"),
    ("backbone.block8_out", "output channels of block 8, feeds the attention stages"),
    (
        "backbone.deconv_strides",
        "stride (= kernel size) of the two deconv layers (2 values)",
    ),
    ("backbone.deconv_mid", "channels between the two deconv layers"),
    ("backbone.out_dim", "channels of the learned per-shot features"),
    ("backbone.dropout_p", "dropout probability in blocks 6 and 7"),
    ("backbone.t", "padded temporal length of every segment"),
    ("backbone.query_dim", "width of the query embedding"),
    ("backbone.attention_dim", "projection width shared by the attention heads"),
    ("backbone.bn_momentum", "running-stat momentum of batch norm"),
    ("backbone.bn_eps", "batch-norm variance epsilon"),
    ("scoring.visual_in", "shot feature width entering the scoring head"),
    ("scoring.visual_hidden", "hidden width of the visual projection"),
    ("scoring.shared_dim", "shared width both scoring projections end at"),
    ("scoring.query_in", "query embedding width entering the scoring head"),
    ("scoring.query_hidden", "hidden width of the query projection"),
    ("scoring.mlp_hidden1", "first hidden width of the scoring MLP"),
    ("scoring.mlp_hidden2", "second hidden width of the scoring MLP"),
    ("kts.max_segments", "maximum segments proposed by change-point detection"),
    ("kts.max_segment_len", "hard cap on shots per segment"),
    ("kts.penalty_weight", "weight of the segment-count penalty"),
];

/// Section headers used when rendering; together they cover [`KEYS`] in order.
const SECTIONS: &[(&str, &[&str])] = &[
    (
        "Optimisation",
        &["lr", "lr_decay", "epochs", "batch_size", "seed", "clamp_eps"],
    ),
    (
        "Backbone",
        &[
            "backbone.input_dim",
            "backbone.conv_widths",
            "backbone.conv_layers",
            "backbone.pool_strides",
            "backbone.fc_widths",
            "backbone.block8_out",
            "backbone.deconv_strides",
            "backbone.deconv_mid",
            "backbone.out_dim",
            "backbone.dropout_p",
            "backbone.t",
            "backbone.query_dim",
            "backbone.attention_dim",
            "backbone.bn_momentum",
            "backbone.bn_eps",
        ],
    ),
    (
        "Scoring head",
        &[
            "scoring.visual_in",
            "scoring.visual_hidden",
            "scoring.shared_dim",
            "scoring.query_in",
            "scoring.query_hidden",
            "scoring.mlp_hidden1",
            "scoring.mlp_hidden2",
        ],
    ),
    (
        "Segmentation",
        &["kts.max_segments", "kts.max_segment_len", "kts.penalty_weight"],
    ),
];

/// Parses configuration text. Missing keys keep [`TrainConfig::default`]
/// values.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_config_text(&mut cfg, text)?;
    Ok(cfg)
}

/// Applies the keys present in `text` onto an existing config, leaving
/// every other field untouched.
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 'key = value', got '{line}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&(canonical, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(Error::Parse {
                line: lineno,
                msg: unknown_key_message(key),
            });
        };
        if !seen.insert(canonical) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("duplicate key '{key}'"),
            });
        }
        set_key(cfg, canonical, value).map_err(|msg| Error::Parse {
            line: lineno,
            msg: format!("key '{key}': {msg}"),
        })?;
    }
    Ok(())
}

/// Renders a config as a self-contained file; [`parse_config`] of the
/// result reproduces the input exactly.
pub fn render_config(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    out.push_str("# Training configuration: flat 'key = value', '#' starts a comment.\n");
    out.push_str("# Omitted keys keep their defaults.\n");
    for (section, keys) in SECTIONS {
        out.push_str("\n# ");
        out.push_str(section);
        out.push('\n');
        for key in *keys {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value_of(cfg, key));
            out.push('\n');
        }
    }
    out
}

/// One line per key: the key name and what it controls.
pub fn key_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (key, desc) in KEYS {
        out.push_str(&format!("{key:width$}  {desc}\n"));
    }
    out
}

/// Reads and parses a config file.
pub fn read_config_file(path: &Path) -> Result<TrainConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

/// Writes a config rendered by [`render_config`].
pub fn write_config_file(cfg: &TrainConfig, path: &Path) -> Result<()> {
    std::fs::write(path, render_config(cfg)).map_err(|e| Error::io(path.display().to_string(), e))
}

fn unknown_key_message(key: &str) -> String {
    let mut scored: Vec<(usize, &str)> =
        KEYS.iter().map(|(k, _)| (edit_distance(k, key), *k)).collect();
    scored.sort();
    let near: Vec<&str> = scored.into_iter().take(2).map(|(_, k)| k).collect();
    format!("unknown key '{key}'; nearest known keys: {}", near.join(", "))
}

fn set_key(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(kind: &str, v: &str) -> std::result::Result<T, String> {
        v.parse::<T>().map_err(|_| format!("expected {kind}, got '{v}'"))
    }
    fn list<const N: usize>(v: &str) -> std::result::Result<[usize; N], String> {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!(
                "expected {N} comma-separated values, got {}",
                parts.len()
            ));
        }
        let mut out = [0usize; N];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = num("an unsigned integer", part)?;
        }
        Ok(out)
    }
    let int = "an unsigned integer";
    let float = "a number";
    match key {
        "lr" => cfg.lr = num(float, value)?,
        "lr_decay" => cfg.lr_decay = num(float, value)?,
        "epochs" => cfg.epochs = num(int, value)?,
        "batch_size" => cfg.batch_size = num(int, value)?,
        "seed" => cfg.seed = num(int, value)?,
        "clamp_eps" => cfg.clamp_eps = num(float, value)?,
        "backbone.input_dim" => cfg.model.backbone.input_dim = num(int, value)?,
        "backbone.conv_widths" => cfg.model.backbone.conv_widths = list::<5>(value)?,
        "backbone.conv_layers" => cfg.model.backbone.conv_layers = list::<5>(value)?,
        "backbone.pool_strides" => cfg.model.backbone.pool_strides = list::<5>(value)?,
        "backbone.fc_widths" => cfg.model.backbone.fc_widths = list::<2>(value)?,
        "backbone.block8_out" => cfg.model.backbone.block8_out = num(int, value)?,
        "backbone.deconv_strides" => cfg.model.backbone.deconv_strides = list::<2>(value)?,
        "backbone.deconv_mid" => cfg.model.backbone.deconv_mid = num(int, value)?,
        "backbone.out_dim" => cfg.model.backbone.out_dim = num(int, value)?,
        "backbone.dropout_p" => cfg.model.backbone.dropout_p = num(float, value)?,
        "backbone.t" => cfg.model.backbone.t = num(int, value)?,
        "backbone.query_dim" => cfg.model.backbone.query_dim = num(int, value)?,
        "backbone.attention_dim" => cfg.model.backbone.attention_dim = num(int, value)?,
        "backbone.bn_momentum" => cfg.model.backbone.bn_momentum = num(float, value)?,
        "backbone.bn_eps" => cfg.model.backbone.bn_eps = num(float, value)?,
        "scoring.visual_in" => cfg.model.scoring.visual_in = num(int, value)?,
        "scoring.visual_hidden" => cfg.model.scoring.visual_hidden = num(int, value)?,
        "scoring.shared_dim" => cfg.model.scoring.shared_dim = num(int, value)?,
        "scoring.query_in" => cfg.model.scoring.query_in = num(int, value)?,
        "scoring.query_hidden" => cfg.model.scoring.query_hidden = num(int, value)?,
        "scoring.mlp_hidden1" => cfg.model.scoring.mlp_hidden1 = num(int, value)?,
        "scoring.mlp_hidden2" => cfg.model.scoring.mlp_hidden2 = num(int, value)?,
        "kts.max_segments" => cfg.kts.max_segments = num(int, value)?,
        "kts.max_segment_len" => cfg.kts.max_segment_len = num(int, value)?,
        "kts.penalty_weight" => cfg.kts.penalty_weight = num(float, value)?,
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

fn value_of(cfg: &TrainConfig, key: &str) -> String {
    fn join(xs: &[usize]) -> String {
        xs.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
    match key {
        "lr" => cfg.lr.to_string(),
        "lr_decay" => cfg.lr_decay.to_string(),
        "epochs" => cfg.epochs.to_string(),
        "batch_size" => cfg.batch_size.to_string(),
        "seed" => cfg.seed.to_string(),
        "clamp_eps" => cfg.clamp_eps.to_string(),
        "backbone.input_dim" => cfg.model.backbone.input_dim.to_string(),
        "backbone.conv_widths" => join(&cfg.model.backbone.conv_widths),
        "backbone.conv_layers" => join(&cfg.model.backbone.conv_layers),
        "backbone.pool_strides" => join(&cfg.model.backbone.pool_strides),
        "backbone.fc_widths" => join(&cfg.model.backbone.fc_widths),
        "backbone.block8_out" => cfg.model.backbone.block8_out.to_string(),
        "backbone.deconv_strides" => join(&cfg.model.backbone.deconv_strides),
        "backbone.deconv_mid" => cfg.model.backbone.deconv_mid.to_string(),
        "backbone.out_dim" => cfg.model.backbone.out_dim.to_string(),
        "backbone.dropout_p" => cfg.model.backbone.dropout_p.to_string(),
        "backbone.t" => cfg.model.backbone.t.to_string(),
        "backbone.query_dim" => cfg.model.backbone.query_dim.to_string(),
        "backbone.attention_dim" => cfg.model.backbone.attention_dim.to_string(),
        "backbone.bn_momentum" => cfg.model.backbone.bn_momentum.to_string(),
        "backbone.bn_eps" => cfg.model.backbone.bn_eps.to_string(),
        "scoring.visual_in" => cfg.model.scoring.visual_in.to_string(),
        "scoring.visual_hidden" => cfg.model.scoring.visual_hidden.to_string(),
        "scoring.shared_dim" => cfg.model.scoring.shared_dim.to_string(),
        "scoring.query_in" => cfg.model.scoring.query_in.to_string(),
        "scoring.query_hidden" => cfg.model.scoring.query_hidden.to_string(),
        "scoring.mlp_hidden1" => cfg.model.scoring.mlp_hidden1.to_string(),
        "scoring.mlp_hidden2" => cfg.model.scoring.mlp_hidden2.to_string(),
        "kts.max_segments" => cfg.kts.max_segments.to_string(),
        "kts.max_segment_len" => cfg.kts.max_segment_len.to_string(),
        "kts.penalty_weight" => cfg.kts.penalty_weight.to_string(),
        _ => unreachable!("rendering covers exactly the documented keys"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_cover_exactly_the_documented_keys() {
        let flattened: Vec<&str> = SECTIONS
            .iter()
            .flat_map(|(_, keys)| keys.iter().copied())
            .collect();
        let documented: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(flattened, documented);
    }

    #[test]
    fn default_and_test_profile_round_trip_exactly() {
        for cfg in [TrainConfig::default(), TrainConfig::test_profile()] {
            let rendered = render_config(&cfg);
            assert_eq!(parse_config(&rendered).unwrap(), cfg);
        }
    }

    #[test]
    fn awkward_floats_survive_the_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.lr = 0.1 + 0.2;
        cfg.clamp_eps = 1e-7;
        cfg.model.backbone.bn_eps = 1.5e-5;
        cfg.model.backbone.conv_widths = [7, 11, 13, 17, 19];
        cfg.kts.penalty_weight = f64::MIN_POSITIVE;
        let parsed = parse_config(&render_config(&cfg)).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.lr.to_bits(), cfg.lr.to_bits());
        assert_eq!(parsed.kts.penalty_weight.to_bits(), cfg.kts.penalty_weight.to_bits());
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let cfg = parse_config("epochs = 3\nbackbone.t = 40\n").unwrap();
        let base = TrainConfig::default();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model.backbone.t, 40);
        assert_eq!(cfg.lr, base.lr);
        assert_eq!(cfg.model.scoring, base.model.scoring);
    }

    #[test]
    fn applying_text_layers_over_an_existing_base() {
        let mut cfg = TrainConfig::test_profile();
        cfg.seed = 77;
        apply_config_text(&mut cfg, "epochs = 2\n").unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.seed, 77);
        assert_eq!(cfg.model, TrainConfig::test_profile().model);
    }

    #[test]
    fn whitespace_comments_and_blank_lines_are_tolerated() {
        let text = "\n# leading comment\n   lr=0.5   \n\n  # indented comment\nseed =  42\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_key_reports_line_and_suggestions() {
        let err = parse_config("lr = 0.1\nlrr = 3\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("unknown key 'lrr'"), "{msg}");
                assert!(msg.contains("lr"), "{msg}");
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected_at_its_line() {
        let err = parse_config("lr = 0.1\n\nlr = 0.2\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate key 'lr'"), "{msg}");
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn missing_equals_and_bad_numbers_are_line_errors() {
        let err = parse_config("just words\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let err = parse_config("epochs = three\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("'epochs'"), "{msg}");
                assert!(msg.contains("unsigned integer"), "{msg}");
            }
            other => panic!("expected a parse error, got {other}"),
        }

        let err = parse_config("epochs = -1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn wrong_list_arity_is_rejected() {
        let err = parse_config("backbone.conv_widths = 1,2,3\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("expected 5"), "{msg}");
                assert!(msg.contains("got 3"), "{msg}");
            }
            other => panic!("expected a parse error, got {other}"),
        }
        let err = parse_config("backbone.fc_widths = 1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.conf");
        let mut cfg = TrainConfig::test_profile();
        cfg.seed = 123;
        write_config_file(&cfg, &path).unwrap();
        assert_eq!(read_config_file(&path).unwrap(), cfg);
    }

    #[test]
    fn missing_file_is_an_io_error_with_the_path() {
        let err = read_config_file(Path::new("/nonexistent/qfvs.conf")).unwrap_err();
        match err {
            Error::Io { path, .. } => assert!(path.contains("qfvs.conf")),
            other => panic!("expected an io error, got {other}"),
        }
    }

    #[test]
    fn key_help_mentions_every_key() {
        let help = key_help();
        for (key, _) in KEYS {
            assert!(help.contains(key), "help is missing {key}");
        }
    }
}
