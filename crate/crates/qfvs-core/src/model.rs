//! The full trainable model: feature-learning backbone plus scoring head,
//! with checkpoint save/load over all named parameters and buffers.

use std::path::Path;

use crate::backbone::{Backbone, BackboneConfig, SegmentedVideo};
use crate::error::{Error, Result};
use crate::layers::VisitParams;
use crate::scoring::{ScoringConfig, ScoringHead, ShotScores};
use crate::tensor::checkpoint::{self, CheckpointEntry};
use crate::tensor::rng::SplitMix64;
use crate::tensor::{Mode, Tape, TensorId};

/// Combined configuration; the two halves must agree on the widths at
/// their interface.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub scoring: ScoringConfig,
}

impl ModelConfig {
    pub fn test_profile() -> Self {
        ModelConfig {
            backbone: BackboneConfig::test_profile(),
            scoring: ScoringConfig::test_profile(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.scoring.validate()?;
        if self.scoring.visual_in != self.backbone.out_dim {
            return Err(Error::Config(format!(
                "scoring expects {}-dim shot features but the backbone emits {}",
                self.scoring.visual_in, self.backbone.out_dim
            )));
        }
        if self.scoring.query_in != self.backbone.query_dim {
            return Err(Error::Config(format!(
                "scoring and backbone disagree on the query width: {} vs {}",
                self.scoring.query_in, self.backbone.query_dim
            )));
        }
        Ok(())
    }
}

pub struct QfvsModel {
    pub backbone: Backbone,
    pub scoring: ScoringHead,
}

impl QfvsModel {
    pub fn new(cfg: ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        Ok(QfvsModel {
            backbone: Backbone::new(cfg.backbone, rng)?,
            scoring: ScoringHead::new(cfg.scoring, rng)?,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.cfg.clone(),
            scoring: self.scoring.cfg.clone(),
        }
    }

    /// Scores every padded slot of a segmented video against a query
    /// embedding. Returns `[S*T]` sigmoid scores in slot order; use the
    /// video's validity to ignore padded entries.
    pub fn forward_scores(
        &mut self,
        tape: &mut Tape,
        video: &SegmentedVideo,
        h_q: &[f64],
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<TensorId> {
        let c_l = self
            .backbone
            .feature_learning_forward(tape, video, h_q, mode, rng)?;
        let s = video.segments;
        let t = video.t;
        let rows = tape.reshape(c_l, &[s * t, self.backbone.cfg.out_dim])?;
        let q = tape.leaf(h_q.to_vec(), &[1, self.scoring.cfg.query_in])?;
        self.scoring.score_rows(tape, rows, q)
    }

    /// All parameters and buffers as checkpoint entries, in visit order.
    pub fn checkpoint_entries(&mut self) -> Vec<CheckpointEntry> {
        let mut entries = Vec::new();
        self.visit_params(&mut |name, shape, data, _trainable| {
            entries.push(CheckpointEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.clone(),
            });
        });
        entries
    }

    /// Overwrites parameters and buffers from checkpoint entries. Every
    /// model tensor must be present with a matching shape, and no entry
    /// may be left over.
    pub fn apply_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let mut used = vec![false; entries.len()];
        let mut problem: Option<String> = None;
        self.visit_params(&mut |name, shape, data, _trainable| {
            if problem.is_some() {
                return;
            }
            match entries.iter().position(|e| e.name == name) {
                None => problem = Some(format!("checkpoint is missing tensor '{name}'")),
                Some(i) => {
                    if entries[i].shape != shape {
                        problem = Some(format!(
                            "tensor '{name}' has shape {:?} in the checkpoint, expected {:?}",
                            entries[i].shape, shape
                        ));
                    } else {
                        used[i] = true;
                        data.copy_from_slice(&entries[i].data);
                    }
                }
            }
        });
        if let Some(msg) = problem {
            return Err(Error::Checkpoint(msg));
        }
        if let Some(i) = used.iter().position(|&u| !u) {
            return Err(Error::Checkpoint(format!(
                "checkpoint tensor '{}' does not belong to this model",
                entries[i].name
            )));
        }
        Ok(())
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.checkpoint_entries())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::read_file(path)?;
        self.apply_entries(&entries)
    }
}

impl VisitParams for QfvsModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        self.backbone.visit_params(f);
        self.scoring.visit_params(f);
    }
}

/// Per-shot labels spread into the padded `[S*T]` slot layout; padded
/// slots get 0 and are excluded by the validity mask.
pub fn flat_labels(video: &SegmentedVideo, per_shot: &[f64]) -> Result<Vec<f64>> {
    if per_shot.len() != video.n_shots() {
        return Err(Error::Contract(format!(
            "{} labels for {} shots",
            per_shot.len(),
            video.n_shots()
        )));
    }
    let mut out = vec![0.0; video.segments * video.t];
    for (s, range) in video.ranges.iter().enumerate() {
        for (slot, shot) in range.clone().enumerate() {
            out[s * video.t + slot] = per_shot[shot];
        }
    }
    Ok(out)
}

/// Slot validity flattened to `[S*T]`.
pub fn flat_validity(video: &SegmentedVideo) -> Vec<bool> {
    video.valid.iter().flatten().copied().collect()
}

/// Gathers slot scores back into original chronological shot order.
pub fn per_shot_scores(tape: &Tape, scores: TensorId, video: &SegmentedVideo) -> Result<ShotScores> {
    let vals = tape.value(scores);
    if vals.len() != video.segments * video.t {
        return Err(Error::Contract(format!(
            "{} slot scores for {} slots",
            vals.len(),
            video.segments * video.t
        )));
    }
    let mut out = vec![0.0; video.n_shots()];
    for (s, range) in video.ranges.iter().enumerate() {
        for (slot, shot) in range.clone().enumerate() {
            out[shot] = vals[s * video.t + slot];
        }
    }
    ShotScores::dense(out)
}
