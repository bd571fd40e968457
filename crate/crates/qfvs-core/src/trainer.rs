//! Leave-one-video-out training and evaluation.
//!
//! Each fold holds one video out, trains the model on every query of the
//! remaining videos with Adam, and is evaluated by summarizing the
//! held-out video's queries and matching against the oracle summaries.
//! All randomness derives from one seed, so runs are reproducible
//! bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::backbone::SegmentedVideo;
use crate::dataset::{ground_truth_labels, DatasetBundle, Fold, ShotSequence};
use crate::error::{Error, Result};
use crate::evalmetric::{evaluate_summary, EvalReport, TagSet};
use crate::layers::VisitParams;
use crate::model::{flat_labels, flat_validity, per_shot_scores, ModelConfig, QfvsModel};
use crate::scoring::{bce_loss, select_summary, ShotScores, Summary, CLAMP_EPS, SELECT_RATIO};
use crate::segmentation::{kts_segment, KtsConfig};
use crate::tensor::checkpoint::CheckpointEntry;
use crate::tensor::rng::SplitMix64;
use crate::tensor::{Mode, Tape};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const SALT_INIT: u64 = 0x1001;
const SALT_DROPOUT: u64 = 0x2001;
const SALT_SHUFFLE: u64 = 0x3001;

/// Optimisation settings plus the model and segmentation configs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Number of (video, query) samples averaged per optimiser step.
    pub batch_size: usize,
    pub seed: u64,
    /// Score clamp inside the loss; 0 disables clamping, letting a fully
    /// saturated score produce a non-finite loss.
    pub clamp_eps: f64,
    pub model: ModelConfig,
    pub kts: KtsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_decay: 0.8,
            epochs: 20,
            batch_size: 5,
            seed: 0,
            clamp_eps: CLAMP_EPS,
            model: ModelConfig::default(),
            kts: KtsConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small model and matching segment cap for fast runs.
    pub fn test_profile() -> Self {
        let model = ModelConfig::test_profile();
        let kts = KtsConfig {
            max_segment_len: model.backbone.t,
            ..KtsConfig::default()
        };
        TrainConfig {
            model,
            kts,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay {} outside (0, 1]",
                self.lr_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("zero training epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("zero batch size".into()));
        }
        if !(self.clamp_eps.is_finite() && (0.0..0.5).contains(&self.clamp_eps)) {
            return Err(Error::Config(format!(
                "score clamp {} outside [0, 0.5)",
                self.clamp_eps
            )));
        }
        self.model.validate()?;
        if self.kts.max_segment_len > self.model.backbone.t {
            return Err(Error::Config(format!(
                "segments may reach {} shots but the backbone pads to {}",
                self.kts.max_segment_len, self.model.backbone.t
            )));
        }
        Ok(())
    }
}

/// First/second moment buffers of the Adam optimiser, keyed by parameter
/// name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// One bias-corrected Adam update over every trainable parameter.
///
/// `grads` must hold a gradient of matching length for each trainable
/// parameter; a missing or misshapen gradient aborts before any parameter
/// is touched.
pub fn adam_step(
    target: &mut dyn VisitParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Contract(format!("Adam step with learning rate {lr}")));
    }
    let mut problem: Option<String> = None;
    target.visit_params(&mut |name, _shape, data, trainable| {
        if !trainable || problem.is_some() {
            return;
        }
        match grads.get(name) {
            None => problem = Some(format!("no gradient for parameter '{name}'")),
            Some(g) if g.len() != data.len() => {
                problem = Some(format!(
                    "gradient for '{name}' has {} values, the parameter has {}",
                    g.len(),
                    data.len()
                ));
            }
            Some(_) => {
                if let Some(m) = state.m.get(name) {
                    if m.len() != data.len() {
                        problem = Some(format!(
                            "Adam moment for '{name}' has {} values, the parameter has {}",
                            m.len(),
                            data.len()
                        ));
                    }
                }
            }
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Contract(msg));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let m_all = &mut state.m;
    let v_all = &mut state.v;
    target.visit_params(&mut |name, _shape, data, trainable| {
        if !trainable {
            return;
        }
        let g = &grads[name];
        let m = m_all
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; data.len()]);
        let v = v_all
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; data.len()]);
        for i in 0..data.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        }
    });
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Renders log records as stable `key=value` lines.
pub fn render_log(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(
            out,
            "fold={} epoch={} lr={} mean_loss={}",
            r.fold, r.epoch, r.lr, r.mean_loss
        )
        .expect("write to string");
    }
    out
}

/// Everything produced by training one fold.
pub struct FoldOutcome {
    pub fold: Fold,
    pub entries: Vec<CheckpointEntry>,
    pub log: Vec<EpochRecord>,
}

pub struct TrainRun {
    pub folds: Vec<FoldOutcome>,
}

/// Segments a video's shots and packs them into the padded layout the
/// backbone expects.
pub fn segment_video(video: &ShotSequence, kts: &KtsConfig, t: usize) -> Result<SegmentedVideo> {
    let rows = video.feature_rows();
    let seg = kts_segment(&rows, kts)?;
    SegmentedVideo::build(&rows, &seg, t)
}

/// Trains one leave-one-out fold and returns its checkpoint and log.
pub fn train_fold(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    fold: &Fold,
    fold_idx: usize,
) -> Result<FoldOutcome> {
    let mut segmented: BTreeMap<usize, SegmentedVideo> = BTreeMap::new();
    for &vi in &fold.train_videos {
        let video = bundle
            .videos
            .get(vi)
            .ok_or_else(|| Error::Contract(format!("fold references missing video {vi}")))?;
        segmented.insert(vi, segment_video(video, &cfg.kts, cfg.model.backbone.t)?);
    }
    let samples: Vec<usize> = fold
        .train_videos
        .iter()
        .flat_map(|&vi| bundle.queries_for_video(vi))
        .collect();
    if samples.is_empty() {
        return Err(Error::Contract(format!(
            "fold {fold_idx} has no training queries"
        )));
    }
    let root = SplitMix64::new(cfg.seed);
    let mut init_rng = root.derive(SALT_INIT + fold_idx as u64);
    let mut model = QfvsModel::new(cfg.model.clone(), &mut init_rng)?;
    let mut drop_rng = root.derive(SALT_DROPOUT + fold_idx as u64);
    let mut adam = AdamState::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut order = samples.clone();
        root.derive(SALT_SHUFFLE + fold_idx as u64 * 1_000_003 + epoch as u64)
            .shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut parts = Vec::with_capacity(batch.len());
            for &qi in batch {
                let query = &bundle.queries[qi];
                let vi = bundle.video_index(&query.video_id).ok_or_else(|| {
                    Error::Contract(format!("query {qi} references unknown video"))
                })?;
                let sv = &segmented[&vi];
                let scores =
                    model.forward_scores(&mut tape, sv, &query.h_q, Mode::Train, &mut drop_rng)?;
                let labels = flat_labels(sv, &ground_truth_labels(&bundle.videos[vi], query))?;
                let valid = flat_validity(sv);
                parts.push(bce_loss(&mut tape, scores, &labels, &valid, cfg.clamp_eps)?);
            }
            let mut total = parts[0];
            for &p in &parts[1..] {
                total = tape.add(total, p)?;
            }
            let batch_loss = tape.affine(total, 1.0 / parts.len() as f64, 0.0);
            let value = tape.value(batch_loss)[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {value} in fold {fold_idx}, epoch {epoch}"
                )));
            }
            loss_sum += value * batch.len() as f64;
            tape.backward(batch_loss)?;
            let grads: BTreeMap<String, Vec<f64>> = tape
                .param_grads()
                .into_iter()
                .filter_map(|(name, g)| g.map(|g| (name, g.to_vec())))
                .collect();
            adam_step(&mut model, &grads, &mut adam, lr)?;
        }
        log.push(EpochRecord {
            fold: fold_idx,
            epoch,
            lr,
            mean_loss: loss_sum / order.len() as f64,
        });
    }
    Ok(FoldOutcome {
        fold: fold.clone(),
        entries: model.checkpoint_entries(),
        log,
    })
}

/// Trains every leave-one-video-out fold.
pub fn train(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if bundle.videos.len() < 2 {
        return Err(Error::Contract(
            "leave-one-video-out training needs at least two videos".into(),
        ));
    }
    if bundle.feature_dim() != cfg.model.backbone.input_dim {
        return Err(Error::Config(format!(
            "bundle features are {}-dimensional but the model expects {}",
            bundle.feature_dim(),
            cfg.model.backbone.input_dim
        )));
    }
    if let Some(q) = bundle.queries.first() {
        if q.h_q.len() != cfg.model.backbone.query_dim {
            return Err(Error::Config(format!(
                "bundle query embeddings are {}-dimensional but the model expects {}",
                q.h_q.len(),
                cfg.model.backbone.query_dim
            )));
        }
    }
    let folds = bundle.folds();
    let mut outcomes = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        outcomes.push(train_fold(bundle, cfg, fold, i)?);
    }
    Ok(TrainRun { folds: outcomes })
}

/// Scores every shot of a segmented video in evaluation mode.
pub fn score_video(
    model: &mut QfvsModel,
    video: &SegmentedVideo,
    h_q: &[f64],
) -> Result<ShotScores> {
    let mut tape = Tape::new();
    let mut rng = SplitMix64::new(0);
    let scores = model.forward_scores(&mut tape, video, h_q, Mode::Eval, &mut rng)?;
    per_shot_scores(&tape, scores, video)
}

/// Selects a summary from per-shot scores and matches it against the
/// query's oracle summary.
pub fn evaluate_query(
    bundle: &DatasetBundle,
    query_idx: usize,
    shot_scores: &ShotScores,
    ratio: f64,
) -> Result<(Summary, EvalReport)> {
    let query = bundle
        .queries
        .get(query_idx)
        .ok_or_else(|| Error::Contract(format!("no query {query_idx} in the bundle")))?;
    let vi = bundle
        .video_index(&query.video_id)
        .ok_or_else(|| Error::Contract(format!("query {query_idx} references unknown video")))?;
    let video = &bundle.videos[vi];
    if shot_scores.scores.len() != video.shots.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} shots of {}",
            shot_scores.scores.len(),
            video.shots.len(),
            video.video_id
        )));
    }
    let summary = select_summary(shot_scores, ratio)?;
    let tags: Vec<TagSet> = video.shots.iter().map(|s| s.tags.clone()).collect();
    let report = evaluate_summary(&bundle.oracles[query_idx], &summary.selected, &tags)?;
    Ok((summary, report))
}

/// Evaluation of one held-out video: per-query reports plus their means.
pub struct FoldEval {
    pub fold: usize,
    pub video_id: String,
    pub queries: Vec<usize>,
    pub reports: Vec<EvalReport>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Whole-experiment evaluation: one entry per fold plus overall means.
pub struct ExperimentReport {
    pub folds: Vec<FoldEval>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluates a trained model on the fold's held-out video.
pub fn evaluate_fold(
    bundle: &DatasetBundle,
    model: &mut QfvsModel,
    fold: &Fold,
    fold_idx: usize,
    kts: &KtsConfig,
) -> Result<FoldEval> {
    let video = bundle
        .videos
        .get(fold.test_video)
        .ok_or_else(|| Error::Contract(format!("fold references missing video {}", fold.test_video)))?;
    let queries = bundle.queries_for_video(fold.test_video);
    if queries.is_empty() {
        return Err(Error::Contract(format!(
            "held-out video {} has no queries",
            video.video_id
        )));
    }
    let sv = segment_video(video, kts, model.backbone.cfg.t)?;
    let mut reports = Vec::with_capacity(queries.len());
    for &qi in &queries {
        let scores = score_video(model, &sv, &bundle.queries[qi].h_q)?;
        let (_, report) = evaluate_query(bundle, qi, &scores, SELECT_RATIO)?;
        reports.push(report);
    }
    let n = reports.len() as f64;
    let precision = reports.iter().map(|r| r.precision).sum::<f64>() / n;
    let recall = reports.iter().map(|r| r.recall).sum::<f64>() / n;
    let f1 = reports.iter().map(|r| r.f1).sum::<f64>() / n;
    Ok(FoldEval {
        fold: fold_idx,
        video_id: video.video_id.clone(),
        queries,
        reports,
        precision,
        recall,
        f1,
    })
}

/// Evaluates every fold of a training run on its held-out video.
pub fn evaluate_run(
    bundle: &DatasetBundle,
    run: &TrainRun,
    cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    let mut folds = Vec::with_capacity(run.folds.len());
    for (i, outcome) in run.folds.iter().enumerate() {
        let mut seed = SplitMix64::new(0);
        let mut model = QfvsModel::new(cfg.model.clone(), &mut seed)?;
        model.apply_entries(&outcome.entries)?;
        folds.push(evaluate_fold(bundle, &mut model, &outcome.fold, i, &cfg.kts)?);
    }
    let n = folds.len() as f64;
    let precision = folds.iter().map(|f| f.precision).sum::<f64>() / n;
    let recall = folds.iter().map(|f| f.recall).sum::<f64>() / n;
    let f1 = folds.iter().map(|f| f.f1).sum::<f64>() / n;
    Ok(ExperimentReport {
        folds,
        precision,
        recall,
        f1,
    })
}

/// Trains all folds, then evaluates each on its held-out video.
pub fn run_experiment(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
) -> Result<(TrainRun, ExperimentReport)> {
    let run = train(bundle, cfg)?;
    let report = evaluate_run(bundle, &run, cfg)?;
    Ok((run, report))
}

/// Renders the experiment report as a fixed-width table: precision,
/// recall and F1 per held-out video plus their average.
pub fn render_report_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "video", "precision", "recall", "f1")
        .expect("write to string");
    for fold in &report.folds {
        writeln!(
            out,
            "{:<12} {:>9.4} {:>9.4} {:>9.4}",
            fold.video_id, fold.precision, fold.recall, fold.f1
        )
        .expect("write to string");
    }
    writeln!(
        out,
        "{:<12} {:>9.4} {:>9.4} {:>9.4}",
        "AVG", report.precision, report.recall, report.f1
    )
    .expect("write to string");
    out
}

/// Fraction of (relevant, irrelevant) shot pairs the scores order
/// correctly; ties count half. `None` when one class is empty.
pub fn ranking_quality(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1.0)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0.0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut correct = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                correct += 1.0;
            } else if p == n {
                correct += 0.5;
            }
        }
    }
    Some(correct / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GenConfig, ScenarioPattern};
    use crate::tensor::checkpoint;

    struct ScalarParam {
        value: Vec<f64>,
    }

    impl VisitParams for ScalarParam {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
            f("x", &[1], &mut self.value, true);
        }
    }

    fn grads_of(v: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("x".to_string(), vec![v])])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ScalarParam { value: vec![1.5] };
        let mut state = AdamState::new();
        adam_step(&mut p, &grads_of(0.0), &mut state, 0.1).unwrap();
        assert_eq!(p.value[0], 1.5);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ScalarParam { value: vec![1.0] };
        let mut state = AdamState::new();
        adam_step(&mut p, &grads_of(3.0), &mut state, 0.01).unwrap();
        let expect = 1.0 - 0.01 * 3.0 / (3.0 + ADAM_EPS);
        assert!((p.value[0] - expect).abs() < 1e-15);
        let mut q = ScalarParam { value: vec![1.0] };
        let mut state = AdamState::new();
        adam_step(&mut q, &grads_of(-0.002), &mut state, 0.01).unwrap();
        assert!((q.value[0] - (1.0 + 0.01 * 0.002 / (0.002 + ADAM_EPS))).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = ScalarParam { value: vec![1.0] };
        let mut state = AdamState::new();
        for _ in 0..500 {
            let g = 2.0 * p.value[0];
            adam_step(&mut p, &grads_of(g), &mut state, 0.1).unwrap();
        }
        assert!(p.value[0].abs() < 1e-3, "ended at {}", p.value[0]);
    }

    #[test]
    fn missing_or_misshapen_gradients_are_rejected_without_update() {
        let mut p = ScalarParam { value: vec![2.0] };
        let mut state = AdamState::new();
        let err = adam_step(&mut p, &BTreeMap::new(), &mut state, 0.1).unwrap_err();
        assert!(err.to_string().contains("'x'"));
        assert_eq!(p.value[0], 2.0);
        assert_eq!(state.step, 0);
        let bad = BTreeMap::from([("x".to_string(), vec![1.0, 2.0])]);
        assert!(adam_step(&mut p, &bad, &mut state, 0.1).is_err());
        assert_eq!(p.value[0], 2.0);
        assert!(adam_step(&mut p, &grads_of(1.0), &mut state, f64::NAN).is_err());
    }

    fn tiny_bundle() -> DatasetBundle {
        let cfg = GenConfig {
            n_videos: 2,
            shots_per_video: 24,
            n_concepts: 8,
            feature_dim: 3,
            noise_sigma: 0.05,
            seed: 11,
            pattern: ScenarioPattern {
                both_joint: 2,
                both_disjoint: 1,
                one_present: 2,
                none_present: 1,
            },
        };
        generate_synthetic(&cfg).unwrap()
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            lr: 2e-3,
            lr_decay: 0.8,
            epochs: 3,
            batch_size: 5,
            seed: 9,
            clamp_eps: CLAMP_EPS,
            model: ModelConfig {
                backbone: crate::backbone::BackboneConfig {
                    input_dim: 3,
                    conv_widths: [4, 4, 4, 4, 4],
                    conv_layers: [1, 1, 1, 1, 1],
                    pool_strides: [2, 2, 1, 1, 1],
                    fc_widths: [4, 4],
                    block8_out: 4,
                    deconv_strides: [2, 2],
                    deconv_mid: 4,
                    out_dim: 4,
                    dropout_p: 0.1,
                    t: 12,
                    query_dim: 300,
                    attention_dim: 4,
                    bn_momentum: 0.1,
                    bn_eps: 1e-5,
                },
                scoring: crate::scoring::ScoringConfig {
                    visual_in: 4,
                    visual_hidden: 4,
                    shared_dim: 4,
                    query_in: 300,
                    query_hidden: 4,
                    mlp_hidden1: 4,
                    mlp_hidden2: 3,
                },
            },
            kts: KtsConfig {
                max_segments: 20,
                max_segment_len: 12,
                penalty_weight: 1.0,
            },
        }
    }

    #[test]
    fn config_validation_catches_inconsistencies() {
        tiny_train_cfg().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        TrainConfig::test_profile().validate().unwrap();
        let mut cfg = tiny_train_cfg();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_train_cfg();
        cfg.lr_decay = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_train_cfg();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_train_cfg();
        cfg.kts.max_segment_len = 40;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn training_covers_all_folds_and_loss_trends_down() {
        let bundle = tiny_bundle();
        let cfg = tiny_train_cfg();
        let run = train(&bundle, &cfg).unwrap();
        assert_eq!(run.folds.len(), 2);
        for outcome in &run.folds {
            assert_eq!(outcome.log.len(), cfg.epochs);
            let first = outcome.log.first().unwrap().mean_loss;
            let last = outcome.log.last().unwrap().mean_loss;
            assert!(last < first, "fold loss went {first} -> {last}");
            for (e, rec) in outcome.log.iter().enumerate() {
                assert_eq!(rec.lr, cfg.lr * cfg.lr_decay.powi(e as i32));
                assert!(rec.mean_loss.is_finite());
            }
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let bundle = tiny_bundle();
        let cfg = tiny_train_cfg();
        let a = train(&bundle, &cfg).unwrap();
        let b = train(&bundle, &cfg).unwrap();
        assert_eq!(render_log(&a.folds[0].log), render_log(&b.folds[0].log));
        let bytes_a = checkpoint::encode(&a.folds[1].entries).unwrap();
        let bytes_b = checkpoint::encode(&b.folds[1].entries).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let mut other = cfg.clone();
        other.seed = 10;
        let c = train(&bundle, &other).unwrap();
        assert_ne!(render_log(&a.folds[0].log), render_log(&c.folds[0].log));
    }

    #[test]
    fn held_out_video_never_trains() {
        let bundle = tiny_bundle();
        for (i, fold) in bundle.folds().iter().enumerate() {
            assert_eq!(fold.test_video, i);
            assert!(!fold.train_videos.contains(&fold.test_video));
            let samples: Vec<usize> = fold
                .train_videos
                .iter()
                .flat_map(|&vi| bundle.queries_for_video(vi))
                .collect();
            let held_id = &bundle.videos[fold.test_video].video_id;
            assert!(samples
                .iter()
                .all(|&qi| &bundle.queries[qi].video_id != held_id));
            assert!(!samples.is_empty());
        }
    }

    #[test]
    fn experiment_report_aggregates_fold_means() {
        let bundle = tiny_bundle();
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 1;
        let (_, report) = run_experiment(&bundle, &cfg).unwrap();
        assert_eq!(report.folds.len(), 2);
        for fold in &report.folds {
            let n = fold.reports.len() as f64;
            let p = fold.reports.iter().map(|r| r.precision).sum::<f64>() / n;
            assert!((p - fold.precision).abs() < 1e-12);
            assert_eq!(fold.reports.len(), fold.queries.len());
        }
        let mean_f1 = report.folds.iter().map(|f| f.f1).sum::<f64>() / 2.0;
        assert!((mean_f1 - report.f1).abs() < 1e-12);
        let table = render_report_table(&report);
        assert!(table.contains("AVG"));
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn perfect_scorer_hits_the_selection_budget_bound() {
        let bundle = tiny_bundle();
        for qi in 0..bundle.queries.len() {
            let query = &bundle.queries[qi];
            let vi = bundle.video_index(&query.video_id).unwrap();
            let video = &bundle.videos[vi];
            let labels = ground_truth_labels(video, query);
            let scores = ShotScores::dense(labels.clone()).unwrap();
            let (summary, report) = evaluate_query(&bundle, qi, &scores, SELECT_RATIO).unwrap();
            let n = video.shots.len();
            let k = ((SELECT_RATIO * n as f64).floor() as usize).max(1);
            assert_eq!(summary.selected.len(), k);
            let gt = bundle.oracles[qi].len();
            if gt == 0 {
                assert_eq!(report.f1, 0.0);
                assert!(report.empty_gt);
                continue;
            }
            let matched = k.min(gt) as f64;
            let precision = matched / k as f64;
            let recall = matched / gt as f64;
            let f1 = 2.0 * precision * recall / (precision + recall);
            assert!(
                (report.f1 - f1).abs() < 1e-12,
                "query {qi}: f1 {} vs bound {f1}",
                report.f1
            );
        }
    }

    #[test]
    fn random_scorer_report_is_reproducible() {
        let bundle = tiny_bundle();
        let score_all = |seed: u64| {
            let mut rng = SplitMix64::new(seed);
            (0..bundle.queries.len())
                .map(|qi| {
                    let vi = bundle.video_index(&bundle.queries[qi].video_id).unwrap();
                    let n = bundle.videos[vi].shots.len();
                    let scores =
                        ShotScores::dense((0..n).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
                    let (_, report) = evaluate_query(&bundle, qi, &scores, SELECT_RATIO).unwrap();
                    report.f1
                })
                .collect::<Vec<f64>>()
        };
        assert_eq!(score_all(5), score_all(5));
        assert_ne!(score_all(5), score_all(6));
    }

    #[test]
    fn ranking_quality_counts_ordered_pairs() {
        assert_eq!(ranking_quality(&[0.9, 0.1], &[1.0, 0.0]), Some(1.0));
        assert_eq!(ranking_quality(&[0.1, 0.9], &[1.0, 0.0]), Some(0.0));
        assert_eq!(ranking_quality(&[0.5, 0.5], &[1.0, 0.0]), Some(0.5));
        assert_eq!(ranking_quality(&[0.4, 0.2], &[1.0, 1.0]), None);
        assert_eq!(
            ranking_quality(&[0.8, 0.3, 0.5, 0.2], &[1.0, 0.0, 1.0, 0.0]),
            Some(1.0)
        );
        assert_eq!(
            ranking_quality(&[0.8, 0.9, 0.5, 0.2], &[1.0, 0.0, 1.0, 0.0]),
            Some(0.5)
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_numeric_error() {
        let bundle = tiny_bundle();
        let mut cfg = tiny_train_cfg();
        cfg.clamp_eps = 0.0;
        cfg.lr = 10.0;
        cfg.epochs = 10;
        match train(&bundle, &cfg) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("non-finite")),
            Err(other) => panic!("expected a numeric error, got {other}"),
            Ok(_) => panic!("expected a saturated score to surface"),
        }
    }
}
