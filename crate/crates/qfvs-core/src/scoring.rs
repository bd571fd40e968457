//! Query-relevance shot scoring: visual and query projections into a
//! shared space, a fusion unit combining them by addition, multiplication
//! and concatenation, an MLP producing one sigmoid score per shot, the
//! binary cross-entropy training loss, and top-fraction summary selection.

use crate::error::{Error, Result};
use crate::layers::{Linear, VisitParams};
use crate::tensor::rng::SplitMix64;
use crate::tensor::{Tape, TensorId};

/// Fraction of valid shots a summary keeps.
pub const SELECT_RATIO: f64 = 0.02;

/// Score clamp used inside the loss so log never sees 0 or 1.
pub const CLAMP_EPS: f64 = 1e-7;

/// Widths of the scoring head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    /// Width of incoming per-shot visual features.
    pub visual_in: usize,
    pub visual_hidden: usize,
    /// Shared width both projections end at.
    pub shared_dim: usize,
    /// Width of the query embedding.
    pub query_in: usize,
    pub query_hidden: usize,
    pub mlp_hidden1: usize,
    pub mlp_hidden2: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            visual_in: 1024,
            visual_hidden: 512,
            shared_dim: 300,
            query_in: 300,
            query_hidden: 300,
            mlp_hidden1: 256,
            mlp_hidden2: 64,
        }
    }
}

impl ScoringConfig {
    /// Small widths matching `BackboneConfig::test_profile`.
    pub fn test_profile() -> Self {
        ScoringConfig {
            visual_in: 16,
            visual_hidden: 12,
            shared_dim: 8,
            query_in: 300,
            query_hidden: 8,
            mlp_hidden1: 8,
            mlp_hidden2: 4,
        }
    }

    /// Width of the fused feature: `v+q`, `v*q` and the pair `[v, q]`.
    pub fn fused_dim(&self) -> usize {
        4 * self.shared_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.visual_in,
            self.visual_hidden,
            self.shared_dim,
            self.query_in,
            self.query_hidden,
            self.mlp_hidden1,
            self.mlp_hidden2,
        ];
        if all.contains(&0) {
            return Err(Error::Config("zero width in scoring head".into()));
        }
        Ok(())
    }
}

/// Combines projected visual rows `[N, d]` with a projected query `[1, d]`
/// into `[N, 4d]`: elementwise sum, elementwise product, then both vectors
/// side by side.
pub fn fuse(tape: &mut Tape, v: TensorId, q: TensorId) -> Result<TensorId> {
    let vs = tape.shape(v).to_vec();
    let qs = tape.shape(q).to_vec();
    if vs.len() != 2 || qs.len() != 2 || qs[0] != 1 || vs[1] != qs[1] {
        return Err(Error::Contract(format!(
            "fusion expects [N, d] visual and [1, d] query, got {vs:?} and {qs:?}"
        )));
    }
    let qn = tape.repeat(q, 0, vs[0])?;
    let add = tape.add(v, qn)?;
    let mul = tape.mul(v, qn)?;
    tape.concat(&[add, mul, v, qn], 1)
}

/// The trainable scoring head.
pub struct ScoringHead {
    pub cfg: ScoringConfig,
    visual1: Linear,
    visual2: Linear,
    query1: Linear,
    query2: Linear,
    mlp1: Linear,
    mlp2: Linear,
    mlp3: Linear,
}

impl ScoringHead {
    pub fn new(cfg: ScoringConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        Ok(ScoringHead {
            visual1: Linear::new("scoring.visual1", cfg.visual_in, cfg.visual_hidden, true, rng),
            visual2: Linear::new("scoring.visual2", cfg.visual_hidden, cfg.shared_dim, true, rng),
            query1: Linear::new("scoring.query1", cfg.query_in, cfg.query_hidden, true, rng),
            query2: Linear::new("scoring.query2", cfg.query_hidden, cfg.shared_dim, true, rng),
            mlp1: Linear::new("scoring.mlp1", cfg.fused_dim(), cfg.mlp_hidden1, true, rng),
            mlp2: Linear::new("scoring.mlp2", cfg.mlp_hidden1, cfg.mlp_hidden2, true, rng),
            mlp3: Linear::new("scoring.mlp3", cfg.mlp_hidden2, 1, true, rng),
            cfg,
        })
    }

    /// Scores feature rows `[N, visual_in]` against a raw query embedding
    /// `[1, query_in]`. Returns sigmoid scores `[N]`.
    pub fn score_rows(&self, tape: &mut Tape, rows: TensorId, query: TensorId) -> Result<TensorId> {
        let rs = tape.shape(rows).to_vec();
        if rs.len() != 2 || rs[1] != self.cfg.visual_in {
            return Err(Error::Contract(format!(
                "scoring rows {rs:?} do not match [N, {}]",
                self.cfg.visual_in
            )));
        }
        let n = rs[0];
        let h = self.visual1.forward(tape, rows)?;
        let h = tape.relu(h);
        let v = self.visual2.forward(tape, h)?;
        let h = self.query1.forward(tape, query)?;
        let h = tape.relu(h);
        let q = self.query2.forward(tape, h)?;
        let fused = fuse(tape, v, q)?;
        let h = self.mlp1.forward(tape, fused)?;
        let h = tape.relu(h);
        let h = self.mlp2.forward(tape, h)?;
        let h = tape.relu(h);
        let logits = self.mlp3.forward(tape, h)?;
        let scores = tape.sigmoid(logits);
        tape.reshape(scores, &[n])
    }
}

impl VisitParams for ScoringHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        self.visual1.visit_params(f);
        self.visual2.visit_params(f);
        self.query1.visit_params(f);
        self.query2.visit_params(f);
        self.mlp1.visit_params(f);
        self.mlp2.visit_params(f);
        self.mlp3.visit_params(f);
    }
}

/// Mean binary cross-entropy over the valid shots.
///
/// `scores` holds one value per shot (any shape with one entry per shot);
/// entries are clamped to `[eps, 1-eps]` before the logs, so with the
/// default [`CLAMP_EPS`] the loss is always finite. Invalid shots
/// contribute nothing to the mean.
pub fn bce_loss(
    tape: &mut Tape,
    scores: TensorId,
    labels: &[f64],
    valid: &[bool],
    eps: f64,
) -> Result<TensorId> {
    if !(eps.is_finite() && (0.0..0.5).contains(&eps)) {
        return Err(Error::Contract(format!(
            "score clamp {eps} outside [0, 0.5)"
        )));
    }
    let n = labels.len();
    if valid.len() != n {
        return Err(Error::Contract(format!(
            "labels ({}) and validity ({}) lengths differ",
            n,
            valid.len()
        )));
    }
    if tape.value(scores).len() != n {
        return Err(Error::Contract(format!(
            "scores hold {} entries for {} shots",
            tape.value(scores).len(),
            n
        )));
    }
    if labels
        .iter()
        .zip(valid)
        .any(|(&l, &v)| v && l != 0.0 && l != 1.0)
    {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Contract(
            "cross-entropy over an empty valid set".into(),
        ));
    }
    let flat = tape.reshape(scores, &[n])?;
    let g = tape.clamp(flat, eps, 1.0 - eps)?;
    let log_g = tape.log(g);
    let one_minus_g = tape.affine(g, -1.0, 1.0);
    let log_omg = tape.log(one_minus_g);
    let y = tape.leaf(labels.to_vec(), &[n])?;
    let omy = tape.affine(y, -1.0, 1.0);
    let pos = tape.mul(y, log_g)?;
    let neg = tape.mul(omy, log_omg)?;
    let ll = tape.add(pos, neg)?;
    let mask_vals: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let mask = tape.leaf(mask_vals, &[n])?;
    let masked = tape.mul(ll, mask)?;
    let total = tape.sum(masked, None)?;
    Ok(tape.affine(total, -1.0 / count as f64, 0.0))
}

/// Per-shot scores with validity, in original shot order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotScores {
    pub scores: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ShotScores {
    pub fn new(scores: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if scores.len() != valid.len() {
            return Err(Error::Contract(format!(
                "{} scores for {} validity flags",
                scores.len(),
                valid.len()
            )));
        }
        for (i, (&s, &v)) in scores.iter().zip(&valid).enumerate() {
            if v && !(0.0..=1.0).contains(&s) {
                return Err(Error::Contract(format!(
                    "score {s} at shot {i} outside [0, 1]"
                )));
            }
        }
        Ok(ShotScores { scores, valid })
    }

    /// Scores where every shot is valid.
    pub fn dense(scores: Vec<f64>) -> Result<Self> {
        let valid = vec![true; scores.len()];
        ShotScores::new(scores, valid)
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// A chronological summary: the selected shot indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Selected shot indices, strictly ascending.
    pub selected: Vec<usize>,
    pub ratio: f64,
    /// Scores of the selected shots, same order as `selected`.
    pub scores: Vec<f64>,
}

/// Keeps the `max(1, floor(ratio * n_valid))` highest-scoring valid shots.
/// Equal scores favour the earlier shot; the result is chronological.
pub fn select_summary(shot_scores: &ShotScores, ratio: f64) -> Result<Summary> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Contract(format!(
            "selection ratio {ratio} outside [0, 1]"
        )));
    }
    let n_valid = shot_scores.n_valid();
    if n_valid == 0 {
        return Err(Error::Contract("no valid shots to select from".into()));
    }
    let k = ((ratio * n_valid as f64).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..shot_scores.scores.len())
        .filter(|&i| shot_scores.valid[i])
        .collect();
    order.sort_by(|&a, &b| {
        shot_scores.scores[b]
            .total_cmp(&shot_scores.scores[a])
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order.into_iter().take(k).collect();
    selected.sort_unstable();
    let scores = selected.iter().map(|&i| shot_scores.scores[i]).collect();
    Ok(Summary {
        selected,
        ratio,
        scores,
    })
}
