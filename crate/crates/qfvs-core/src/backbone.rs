//! Temporal feature-learning network: a conv encoder that shrinks each
//! segment from `T` shots to `R` slots, three attention stages over the
//! reduced slots, and a deconv decoder restoring length `T`.
//!
//! Segments are processed as a batch: the input is `[S, C, T]` with short
//! segments zero-padded to `T` and a validity mask tracking real slots.
//! The first encoder op multiplies by that mask, so padded input positions
//! receive exactly zero gradient. Attention consumes the reduced mask
//! (a pooled slot is valid when any shot in its window is valid).

use std::ops::Range;

use crate::attention::{
    concat_features, global_attention, local_self_attention, query_guided_segment_attention,
    AttentionParams, ReducedMask,
};
use crate::dataset::EMBED_DIM;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, VisitParams};
use crate::segmentation::Segmentation;
use crate::tensor::rng::SplitMix64;
use crate::tensor::{Mode, Tape, TensorId};

/// Shape and width settings of the feature-learning network.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Channel width of the incoming shot features.
    pub input_dim: usize,
    /// Output channels of conv blocks 1-5.
    pub conv_widths: [usize; 5],
    /// Conv layers per block for blocks 1-5 (blocks 6-8 have one each).
    pub conv_layers: [usize; 5],
    /// Max-pool stride after each of blocks 1-5; 1 disables the pool.
    pub pool_strides: [usize; 5],
    /// Output channels of blocks 6 and 7.
    pub fc_widths: [usize; 2],
    /// Output channels of block 8, which also feeds the attention stages.
    pub block8_out: usize,
    /// Strides (= kernel sizes) of the two deconv layers.
    pub deconv_strides: [usize; 2],
    /// Channels between the two deconv layers.
    pub deconv_mid: usize,
    /// Channels of the learned per-shot output features.
    pub out_dim: usize,
    /// Dropout probability in blocks 6 and 7 (train mode only).
    pub dropout_p: f64,
    /// Padded temporal length of every segment.
    pub t: usize,
    /// Width of the query embedding entering segment attention.
    pub query_dim: usize,
    /// Projection width shared by all attention heads.
    pub attention_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_dim: 2048,
            conv_widths: [64, 128, 256, 512, 512],
            conv_layers: [2, 2, 3, 3, 3],
            pool_strides: [2, 2, 5, 1, 1],
            fc_widths: [1024, 1024],
            block8_out: 256,
            deconv_strides: [5, 4],
            deconv_mid: 512,
            out_dim: 1024,
            dropout_p: 0.3,
            t: 200,
            query_dim: EMBED_DIM,
            attention_dim: 256,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl BackboneConfig {
    /// Small configuration exercising every code path quickly: segments of
    /// 40 shots reduce to 5 slots and restore through strides 4 and 2.
    pub fn test_profile() -> Self {
        BackboneConfig {
            input_dim: 64,
            conv_widths: [8, 8, 12, 12, 12],
            conv_layers: [2, 2, 3, 3, 3],
            pool_strides: [2, 2, 2, 1, 1],
            fc_widths: [16, 16],
            block8_out: 16,
            deconv_strides: [4, 2],
            deconv_mid: 12,
            out_dim: 16,
            dropout_p: 0.3,
            t: 40,
            query_dim: EMBED_DIM,
            attention_dim: 16,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Product of the pool strides: how many shots map to one reduced slot.
    pub fn pool_factor(&self) -> usize {
        self.pool_strides.iter().product()
    }

    /// Reduced temporal length `R`.
    pub fn reduced_len(&self) -> usize {
        self.t / self.pool_factor()
    }

    /// Channel width entering the decoder: block-8 output concatenated
    /// with the two attention outputs.
    pub fn concat_dim(&self) -> usize {
        self.block8_out + 2 * self.attention_dim
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .conv_widths
            .iter()
            .chain(&self.fc_widths)
            .chain([&self.block8_out, &self.deconv_mid, &self.out_dim])
            .chain([&self.input_dim, &self.query_dim, &self.attention_dim]);
        for &w in widths {
            if w == 0 {
                return Err(Error::Config("zero channel width in backbone".into()));
            }
        }
        if self.conv_layers.iter().any(|&n| n == 0) {
            return Err(Error::Config("conv block with zero layers".into()));
        }
        if self.t == 0 {
            return Err(Error::Config("temporal length must be positive".into()));
        }
        let mut len = self.t;
        for (i, &p) in self.pool_strides.iter().enumerate() {
            if p == 0 {
                return Err(Error::Config(format!("pool stride 0 in block {}", i + 1)));
            }
            if len % p != 0 {
                return Err(Error::Config(format!(
                    "temporal length {len} before block {} is not divisible by pool stride {p}",
                    i + 1
                )));
            }
            len /= p;
        }
        let restored: usize = self.deconv_strides.iter().product::<usize>() * len;
        if restored != self.t {
            return Err(Error::Config(format!(
                "deconv strides {:?} restore {restored} shots from {len}, expected {}",
                self.deconv_strides, self.t
            )));
        }
        if self.deconv_strides.contains(&0) {
            return Err(Error::Config("deconv stride 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(format!(
                "batchnorm momentum {} outside (0, 1]",
                self.bn_momentum
            )));
        }
        if !(self.bn_eps.is_finite() && self.bn_eps > 0.0) {
            return Err(Error::Config(format!("bad batchnorm eps {}", self.bn_eps)));
        }
        Ok(())
    }
}

/// A video's features split into KTS segments, padded to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedVideo {
    /// Features in `[S, C, T]` layout, padded slots zero.
    pub data: Vec<f64>,
    pub segments: usize,
    pub feature_dim: usize,
    pub t: usize,
    /// Original shot range of each segment.
    pub ranges: Vec<Range<usize>>,
    /// `valid[s][t]` is true when slot `t` of segment `s` is a real shot.
    pub valid: Vec<Vec<bool>>,
}

impl SegmentedVideo {
    /// Packs per-shot features into padded per-segment rows.
    pub fn build(features: &[Vec<f64>], seg: &Segmentation, t: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Contract("no shot features to segment".into()));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::Contract(
                "shot features have inconsistent or zero dims".into(),
            ));
        }
        if seg.n != features.len() {
            return Err(Error::Contract(format!(
                "segmentation covers {} shots but {} features given",
                seg.n,
                features.len()
            )));
        }
        let ranges: Vec<Range<usize>> = seg.segments().collect();
        let s = ranges.len();
        let mut data = vec![0.0; s * dim * t];
        let mut valid = vec![vec![false; t]; s];
        for (si, range) in ranges.iter().enumerate() {
            if range.len() > t {
                return Err(Error::Contract(format!(
                    "segment {si} has {} shots, exceeding the padded length {t}",
                    range.len()
                )));
            }
            for (slot, shot) in range.clone().enumerate() {
                valid[si][slot] = true;
                for c in 0..dim {
                    data[(si * dim + c) * t + slot] = features[shot][c];
                }
            }
        }
        Ok(SegmentedVideo {
            data,
            segments: s,
            feature_dim: dim,
            t,
            ranges,
            valid,
        })
    }

    /// Number of real shots across all segments.
    pub fn n_shots(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// The original shot index behind `(segment, slot)`, if the slot is real.
    pub fn shot_at(&self, segment: usize, slot: usize) -> Option<usize> {
        let range = self.ranges.get(segment)?;
        if slot < range.len() {
            Some(range.start + slot)
        } else {
            None
        }
    }

    /// Validity of pooled slots: a reduced slot is valid when any of the
    /// `factor` shots it covers is valid.
    pub fn reduced_mask(&self, factor: usize) -> Result<ReducedMask> {
        if factor == 0 || self.t % factor != 0 {
            return Err(Error::Contract(format!(
                "pool factor {factor} does not divide the padded length {}",
                self.t
            )));
        }
        let r = self.t / factor;
        let slot_valid = self
            .valid
            .iter()
            .map(|row| {
                (0..r)
                    .map(|i| row[i * factor..(i + 1) * factor].iter().any(|&v| v))
                    .collect()
            })
            .collect();
        ReducedMask::from_slots(slot_valid)
    }
}

struct ConvBlock {
    layers: Vec<(Conv1d, BatchNorm1d)>,
    pool: usize,
}

/// The feature-learning network: conv encoder, attention stages, deconv
/// decoder, and their parameters.
pub struct Backbone {
    pub cfg: BackboneConfig,
    blocks: Vec<ConvBlock>,
    fc: Vec<Conv1d>,
    block8: Conv1d,
    block8_bn: BatchNorm1d,
    deconv1: ConvTranspose1d,
    deconv2: ConvTranspose1d,
    lsa: AttentionParams,
    qgsa: AttentionParams,
    ga: AttentionParams,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = cfg.input_dim;
        for b in 0..5 {
            let mut layers = Vec::with_capacity(cfg.conv_layers[b]);
            for l in 0..cfg.conv_layers[b] {
                let name = format!("backbone.block{}.conv{}", b + 1, l + 1);
                let out_ch = cfg.conv_widths[b];
                layers.push((
                    Conv1d::new(&name, in_ch, out_ch, 3, 1, 1, rng),
                    BatchNorm1d::new(
                        &format!("backbone.block{}.bn{}", b + 1, l + 1),
                        out_ch,
                        cfg.bn_momentum,
                        cfg.bn_eps,
                    ),
                ));
                in_ch = out_ch;
            }
            blocks.push(ConvBlock {
                layers,
                pool: cfg.pool_strides[b],
            });
        }
        let mut fc = Vec::with_capacity(2);
        for (i, &w) in cfg.fc_widths.iter().enumerate() {
            fc.push(Conv1d::new(
                &format!("backbone.block{}.conv1", 6 + i),
                in_ch,
                w,
                3,
                1,
                1,
                rng,
            ));
            in_ch = w;
        }
        let block8 = Conv1d::new("backbone.block8.conv1", in_ch, cfg.block8_out, 1, 1, 0, rng);
        let block8_bn = BatchNorm1d::new(
            "backbone.block8.bn1",
            cfg.block8_out,
            cfg.bn_momentum,
            cfg.bn_eps,
        );
        let deconv1 = ConvTranspose1d::new(
            "backbone.deconv1",
            cfg.concat_dim(),
            cfg.deconv_mid,
            cfg.deconv_strides[0],
            cfg.deconv_strides[0],
            rng,
        );
        let deconv2 = ConvTranspose1d::new(
            "backbone.deconv2",
            cfg.deconv_mid,
            cfg.out_dim,
            cfg.deconv_strides[1],
            cfg.deconv_strides[1],
            rng,
        );
        let lsa = AttentionParams::new(
            "attention.local",
            cfg.block8_out,
            cfg.block8_out,
            cfg.attention_dim,
            rng,
        );
        let qgsa = AttentionParams::new(
            "attention.segment",
            cfg.query_dim,
            cfg.block8_out,
            cfg.attention_dim,
            rng,
        );
        let ga = AttentionParams::new(
            "attention.global",
            cfg.block8_out,
            cfg.attention_dim,
            cfg.attention_dim,
            rng,
        );
        Ok(Backbone {
            cfg,
            blocks,
            fc,
            block8,
            block8_bn,
            deconv1,
            deconv2,
            lsa,
            qgsa,
            ga,
        })
    }

    /// Runs the eight conv blocks on `[S, C, T]` input, first zeroing
    /// padded slots via the mask. Returns `[S, block8_out, R]`.
    pub fn encode(
        &mut self,
        tape: &mut Tape,
        x: TensorId,
        valid: &[Vec<bool>],
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<TensorId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.input_dim || shape[2] != self.cfg.t {
            return Err(Error::Contract(format!(
                "encoder input {:?} does not match [S, {}, {}]",
                shape, self.cfg.input_dim, self.cfg.t
            )));
        }
        let s = shape[0];
        if valid.len() != s || valid.iter().any(|row| row.len() != self.cfg.t) {
            return Err(Error::Contract(format!(
                "validity mask does not cover {s} x {} slots",
                self.cfg.t
            )));
        }
        let mask_vals: Vec<f64> = valid
            .iter()
            .flat_map(|row| row.iter().map(|&v| if v { 1.0 } else { 0.0 }))
            .collect();
        let mask = tape.leaf(mask_vals, &[s, 1, self.cfg.t])?;
        let mask = tape.repeat(mask, 1, self.cfg.input_dim)?;
        let mut h = tape.mul(x, mask)?;
        for block in &mut self.blocks {
            for (conv, bn) in &mut block.layers {
                h = conv.forward(tape, h)?;
                h = bn.forward(tape, h, mode)?;
                h = tape.relu(h);
            }
            if block.pool > 1 {
                h = tape.maxpool1d(h, block.pool, block.pool)?;
            }
        }
        for conv in &self.fc {
            h = conv.forward(tape, h)?;
            h = tape.relu(h);
            h = tape.dropout(h, self.cfg.dropout_p, mode, rng)?;
        }
        h = self.block8.forward(tape, h)?;
        h = self.block8_bn.forward(tape, h, mode)?;
        Ok(tape.relu(h))
    }

    /// Restores temporal length: `[S, Cc, R]` through the two deconv
    /// layers to `[S, out_dim, T]`.
    pub fn decode(&self, tape: &mut Tape, c_c: TensorId) -> Result<TensorId> {
        let shape = tape.shape(c_c).to_vec();
        if shape.len() != 3
            || shape[1] != self.cfg.concat_dim()
            || shape[2] != self.cfg.reduced_len()
        {
            return Err(Error::Contract(format!(
                "decoder input {:?} does not match [S, {}, {}]",
                shape,
                self.cfg.concat_dim(),
                self.cfg.reduced_len()
            )));
        }
        let h = self.deconv1.forward(tape, c_c)?;
        let h = tape.relu(h);
        let h = self.deconv2.forward(tape, h)?;
        Ok(tape.relu(h))
    }

    /// Full feature-learning pass over one segmented video: encode,
    /// attend (local, query-guided, global), concatenate, decode.
    /// Returns learned shot features `[S, T, out_dim]`.
    pub fn feature_learning_forward(
        &mut self,
        tape: &mut Tape,
        video: &SegmentedVideo,
        h_q: &[f64],
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<TensorId> {
        if video.feature_dim != self.cfg.input_dim || video.t != self.cfg.t {
            return Err(Error::Contract(format!(
                "segmented video ({} dims, {} slots) does not match the config ({}, {})",
                video.feature_dim, video.t, self.cfg.input_dim, self.cfg.t
            )));
        }
        if h_q.len() != self.cfg.query_dim {
            return Err(Error::Contract(format!(
                "query embedding has {} dims, expected {}",
                h_q.len(),
                self.cfg.query_dim
            )));
        }
        let s = video.segments;
        let x = tape.leaf(
            video.data.clone(),
            &[s, self.cfg.input_dim, self.cfg.t],
        )?;
        let enc = self.encode(tape, x, &video.valid, mode, rng)?;
        let c_v = tape.transpose(enc)?;
        let rmask = video.reduced_mask(self.cfg.pool_factor())?;
        let local = local_self_attention(tape, &self.lsa, c_v, &rmask)?;
        let hq = tape.leaf(h_q.to_vec(), &[1, self.cfg.query_dim])?;
        let seg = query_guided_segment_attention(tape, &self.qgsa, c_v, hq, &rmask)?;
        let global = global_attention(tape, &self.ga, c_v, seg.c_sq, &rmask)?;
        let c_c = concat_features(tape, c_v, local.output, global.output)?;
        let c_c = tape.transpose(c_c)?;
        let decoded = self.decode(tape, c_c)?;
        tape.transpose(decoded)
    }
}

impl VisitParams for Backbone {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        for block in &mut self.blocks {
            for (conv, bn) in &mut block.layers {
                conv.visit_params(f);
                bn.visit_params(f);
            }
        }
        for conv in &mut self.fc {
            conv.visit_params(f);
        }
        self.block8.visit_params(f);
        self.block8_bn.visit_params(f);
        self.deconv1.visit_params(f);
        self.deconv2.visit_params(f);
        self.lsa.visit_params(f);
        self.qgsa.visit_params(f);
        self.ga.visit_params(f);
    }
}
