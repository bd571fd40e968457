//! Kernel temporal segmentation: change-point detection over per-shot
//! features by dynamic programming.
//!
//! Features are L2-normalised so the implied linear kernel is cosine
//! similarity. The within-segment scatter of `[a, b)` under a linear
//! kernel reduces to
//!
//! ```text
//! scatter(a, b) = sum_i ||x_i||^2 - ||sum_i x_i||^2 / (b - a)
//! ```
//!
//! which needs only prefix sums of the feature vectors and of their
//! squared norms. That keeps memory at O(N * C) and avoids materialising
//! the N x N Gram matrix.
//!
//! The segment count is chosen greedily: starting from one segment, add a
//! change point while it strictly improves the penalised objective
//! `cost(m) + penalty_weight * m * ln(N)`. Segments longer than the length
//! cap are then split into near-equal pieces, since downstream processing
//! has a hard per-segment capacity.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

/// Caps and penalty for [`kts_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct KtsConfig {
    /// Maximum number of change-point segments the DP may propose.
    pub max_segments: usize,
    /// Hard cap on shots per segment, enforced by post-hoc splitting.
    pub max_segment_len: usize,
    /// Weight of the `m * ln(N)` model-selection penalty.
    pub penalty_weight: f64,
}

impl Default for KtsConfig {
    fn default() -> Self {
        KtsConfig {
            max_segments: 20,
            max_segment_len: 200,
            penalty_weight: 1.0,
        }
    }
}

/// A partition of `0..n` into consecutive segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// Start index of each segment, ascending, beginning with 0.
    pub starts: Vec<usize>,
    /// Total number of shots partitioned.
    pub n: usize,
}

impl Segmentation {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    pub fn segments(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.starts.iter().enumerate().map(|(i, &s)| {
            let end = self.starts.get(i + 1).copied().unwrap_or(self.n);
            s..end
        })
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.segments().map(|r| r.len()).collect()
    }

    /// Segment index containing shot `idx`.
    pub fn segment_of(&self, idx: usize) -> usize {
        match self.starts.binary_search(&idx) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }
}

/// Prefix sums enabling O(1) scatter evaluation.
struct ScatterTable {
    /// `vec_prefix[t]` = componentwise sum of normalised features `[0, t)`.
    vec_prefix: Vec<Vec<f64>>,
    /// `norm_prefix[t]` = sum of squared norms over `[0, t)`.
    norm_prefix: Vec<f64>,
}

impl ScatterTable {
    fn new(features: &[Vec<f64>]) -> ScatterTable {
        let dim = features[0].len();
        let mut vec_prefix = Vec::with_capacity(features.len() + 1);
        let mut norm_prefix = Vec::with_capacity(features.len() + 1);
        vec_prefix.push(vec![0.0; dim]);
        norm_prefix.push(0.0);
        for f in features {
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            let prev = vec_prefix.last().unwrap();
            let mut next = Vec::with_capacity(dim);
            for (p, v) in prev.iter().zip(f) {
                next.push(p + v * scale);
            }
            vec_prefix.push(next);
            let unit = if norm > 0.0 { 1.0 } else { 0.0 };
            norm_prefix.push(norm_prefix.last().unwrap() + unit);
        }
        ScatterTable {
            vec_prefix,
            norm_prefix,
        }
    }

    /// Within-segment scatter of `[a, b)`.
    fn scatter(&self, a: usize, b: usize) -> f64 {
        let m = (b - a) as f64;
        let sq_sum: f64 = self.vec_prefix[b]
            .iter()
            .zip(&self.vec_prefix[a])
            .map(|(hi, lo)| {
                let d = hi - lo;
                d * d
            })
            .sum();
        let total = self.norm_prefix[b] - self.norm_prefix[a];
        // Clamp tiny negative values from cancellation.
        (total - sq_sum / m).max(0.0)
    }
}

/// Segments `features` (one vector per shot) into temporally coherent
/// pieces. All feature vectors must share one dimension; the input must be
/// non-empty.
pub fn kts_segment(features: &[Vec<f64>], cfg: &KtsConfig) -> Result<Segmentation> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Contract("cannot segment an empty shot list".into()));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Contract(
            "shot features must share one non-zero dimension".into(),
        ));
    }
    if cfg.max_segments == 0 || cfg.max_segment_len == 0 {
        return Err(Error::Config(
            "segment count and length caps must be positive".into(),
        ));
    }
    let table = ScatterTable::new(features);
    let kmax = cfg.max_segments.min(n);

    // dp[k][t]: minimal scatter splitting the first t shots into k+1
    // segments; choice[k][t] records the last segment's start.
    let mut dp = vec![vec![f64::INFINITY; n + 1]; kmax];
    let mut choice = vec![vec![0usize; n + 1]; kmax];
    for t in 1..=n {
        dp[0][t] = table.scatter(0, t);
    }
    for k in 1..kmax {
        for t in (k + 1)..=n {
            let mut best = f64::INFINITY;
            let mut best_s = k;
            for s in k..t {
                let c = dp[k - 1][s] + table.scatter(s, t);
                if c < best {
                    best = c;
                    best_s = s;
                }
            }
            dp[k][t] = best;
            choice[k][t] = best_s;
        }
    }

    let penalty = |m: usize| cfg.penalty_weight * m as f64 * (n as f64).ln();
    let mut m = 1;
    while m < kmax && dp[m][n] + penalty(m + 1) < dp[m - 1][n] + penalty(m) {
        m += 1;
    }

    let mut starts = vec![0usize; m];
    let mut t = n;
    for k in (1..m).rev() {
        let s = choice[k][t];
        starts[k] = s;
        t = s;
    }

    Ok(enforce_length_cap(
        Segmentation { starts, n },
        cfg.max_segment_len,
    ))
}

/// Splits any segment longer than `cap` into near-equal consecutive
/// pieces. This can push the segment count above the DP's cap when the
/// video is close to total capacity; length is the hard constraint.
fn enforce_length_cap(seg: Segmentation, cap: usize) -> Segmentation {
    let mut starts = Vec::with_capacity(seg.count());
    for range in seg.segments() {
        let len = range.len();
        if len <= cap {
            starts.push(range.start);
            continue;
        }
        let pieces = len.div_ceil(cap);
        let base = len / pieces;
        let rem = len % pieces;
        let mut cursor = range.start;
        for p in 0..pieces {
            starts.push(cursor);
            cursor += base + usize::from(p < rem);
        }
    }
    Segmentation {
        starts,
        n: seg.n,
    }
}

/// Writes boundaries as a line-oriented sidecar: a header, then one
/// segment start index per line.
pub fn write_boundaries(path: &Path, seg: &Segmentation) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# qfvs-boundaries v1");
    let _ = writeln!(out, "# n = {}", seg.n);
    for s in &seg.starts {
        let _ = writeln!(out, "{s}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses a boundaries sidecar produced by [`write_boundaries`].
pub fn parse_boundaries(text: &str) -> Result<Segmentation> {
    let mut n: Option<usize> = None;
    let mut starts = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| Error::Parse {
            line: lineno + 1,
            msg,
        };
        if lineno == 0 {
            if line != "# qfvs-boundaries v1" {
                return Err(err("missing boundaries header".into()));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# n =") {
            n = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| err(format!("invalid shot count '{}'", rest.trim())))?,
            );
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| err(format!("invalid start index '{line}'")))?;
        if starts.is_empty() && v != 0 {
            return Err(err("first segment must start at 0".into()));
        }
        if let Some(&prev) = starts.last() {
            if v <= prev {
                return Err(err(format!("start {v} not after previous {prev}")));
            }
        }
        starts.push(v);
    }
    let n = n.ok_or(Error::Parse {
        line: 1,
        msg: "missing shot count".into(),
    })?;
    if starts.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no segments listed".into(),
        });
    }
    if *starts.last().unwrap() >= n {
        return Err(Error::Parse {
            line: 1,
            msg: format!("segment start beyond shot count {n}"),
        });
    }
    Ok(Segmentation { starts, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::SplitMix64;

    /// Direct scatter from the definition, computed independently of the
    /// prefix-sum table (explicit kernel sums over the segment).
    fn scatter_direct(features: &[Vec<f64>], a: usize, b: usize) -> f64 {
        let normed: Vec<Vec<f64>> = features[a..b]
            .iter()
            .map(|f| {
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    f.iter().map(|v| v / norm).collect()
                } else {
                    vec![0.0; f.len()]
                }
            })
            .collect();
        let m = (b - a) as f64;
        let mut diag = 0.0;
        let mut all = 0.0;
        for x in &normed {
            diag += x.iter().map(|v| v * v).sum::<f64>();
            for y in &normed {
                all += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        diag - all / m
    }

    /// Exhaustive best split of all shots into exactly `m` segments.
    fn best_split_exhaustive(features: &[Vec<f64>], m: usize) -> (f64, Vec<usize>) {
        fn rec(
            features: &[Vec<f64>],
            start: usize,
            left: usize,
            acc: f64,
            cur: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            let n = features.len();
            if left == 1 {
                let cost = acc + scatter_direct(features, start, n);
                if cost < best.0 {
                    *best = (cost, cur.clone());
                }
                return;
            }
            for next in start + 1..=n - left + 1 {
                cur.push(next);
                rec(
                    features,
                    next,
                    left - 1,
                    acc + scatter_direct(features, start, next),
                    cur,
                    best,
                );
                cur.pop();
            }
        }
        let mut best = (f64::INFINITY, Vec::new());
        rec(features, 0, m, 0.0, &mut Vec::new(), &mut best);
        let mut starts = vec![0];
        starts.extend(best.1.iter());
        (best.0, starts)
    }

    fn plateau_features(
        plateau_lens: &[usize],
        dim: usize,
        sigma: f64,
        rng: &mut SplitMix64,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut features = Vec::new();
        let mut starts = Vec::new();
        let mut cursor = 0;
        for (p, &len) in plateau_lens.iter().enumerate() {
            starts.push(cursor);
            cursor += len;
            for _ in 0..len {
                let mut f = vec![0.0; dim];
                f[p % dim] = 1.0;
                for v in f.iter_mut() {
                    *v += sigma * rng.normal();
                }
                features.push(f);
            }
        }
        (features, starts)
    }

    #[test]
    fn prefix_scatter_matches_direct_computation() {
        let mut rng = SplitMix64::new(200);
        let features: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let table = ScatterTable::new(&features);
        for a in 0..15 {
            for b in a + 1..=15 {
                let fast = table.scatter(a, b);
                let slow = scatter_direct(&features, a, b);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "scatter({a},{b}): {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn dp_matches_exhaustive_search_for_small_inputs() {
        let mut rng = SplitMix64::new(201);
        for n in [6usize, 9, 12] {
            let features: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            for m in 1..=4.min(n) {
                let cfg = KtsConfig {
                    max_segments: m,
                    max_segment_len: 200,
                    penalty_weight: 0.0,
                };
                // penalty_weight 0 makes the greedy selection run to the cap,
                // so the result is the best m-way split.
                let seg = kts_segment(&features, &cfg).unwrap();
                let (best_cost, best_starts) = best_split_exhaustive(&features, m);
                assert_eq!(seg.starts, best_starts, "n={n} m={m}");
                let got_cost: f64 = seg
                    .segments()
                    .map(|r| scatter_direct(&features, r.start, r.end))
                    .sum();
                assert!((got_cost - best_cost).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recovers_noiseless_plateaus_exactly() {
        let mut rng = SplitMix64::new(202);
        for lens in [
            vec![5usize, 7, 6],
            vec![8, 5, 9, 5],
            vec![6, 6, 5, 7, 5, 8],
        ] {
            let (features, truth) = plateau_features(&lens, 8, 0.0, &mut rng);
            let seg = kts_segment(&features, &KtsConfig::default()).unwrap();
            assert_eq!(seg.starts, truth, "plateaus {lens:?}");
        }
    }

    #[test]
    fn recovers_noisy_plateaus_within_one_shot() {
        let mut rng = SplitMix64::new(203);
        let lens = vec![7usize, 9, 6, 8];
        let (features, truth) = plateau_features(&lens, 8, 0.05, &mut rng);
        let seg = kts_segment(&features, &KtsConfig::default()).unwrap();
        assert_eq!(seg.count(), truth.len());
        for (got, want) in seg.starts.iter().zip(&truth) {
            assert!(
                got.abs_diff(*want) <= 1,
                "boundary {got} too far from {want}"
            );
        }
    }

    #[test]
    fn respects_segment_count_cap() {
        let mut rng = SplitMix64::new(204);
        let (features, _) = plateau_features(&[5; 10], 16, 0.0, &mut rng);
        let cfg = KtsConfig {
            max_segments: 4,
            max_segment_len: 200,
            penalty_weight: 1.0,
        };
        let seg = kts_segment(&features, &cfg).unwrap();
        assert!(seg.count() <= 4);
    }

    #[test]
    fn splits_oversize_segments_evenly() {
        // Constant features give one DP segment; the length cap must split
        // it into near-equal pieces.
        let features = vec![vec![1.0, 0.0]; 23];
        let cfg = KtsConfig {
            max_segments: 20,
            max_segment_len: 5,
            penalty_weight: 1.0,
        };
        let seg = kts_segment(&features, &cfg).unwrap();
        let lens = seg.lengths();
        assert_eq!(lens.iter().sum::<usize>(), 23);
        assert!(lens.iter().all(|&l| l <= 5));
        let (mn, mx) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
        assert!(mx - mn <= 1, "uneven split {lens:?}");
    }

    #[test]
    fn handles_capacity_scale_input() {
        // 4500 constant shots: a single DP segment split under the length
        // cap; every piece must respect the cap even though the count
        // exceeds the DP's segment budget.
        let features = vec![vec![0.5, 0.5, 0.1]; 4500];
        let seg = kts_segment(&features, &KtsConfig::default()).unwrap();
        assert!(seg.lengths().iter().all(|&l| l <= 200));
        assert_eq!(seg.lengths().iter().sum::<usize>(), 4500);
    }

    #[test]
    fn is_deterministic() {
        let mut rng = SplitMix64::new(205);
        let features: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let a = kts_segment(&features, &KtsConfig::default()).unwrap();
        let b = kts_segment(&features, &KtsConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_ragged_inputs_error() {
        assert!(kts_segment(&[], &KtsConfig::default()).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(kts_segment(&ragged, &KtsConfig::default()).is_err());
    }

    #[test]
    fn segment_of_locates_shots() {
        let seg = Segmentation {
            starts: vec![0, 4, 9],
            n: 12,
        };
        assert_eq!(seg.segment_of(0), 0);
        assert_eq!(seg.segment_of(3), 0);
        assert_eq!(seg.segment_of(4), 1);
        assert_eq!(seg.segment_of(8), 1);
        assert_eq!(seg.segment_of(11), 2);
        assert_eq!(seg.lengths(), vec![4, 5, 3]);
    }

    #[test]
    fn boundaries_sidecar_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bounds.txt");
        let seg = Segmentation {
            starts: vec![0, 7, 30],
            n: 41,
        };
        write_boundaries(&path, &seg).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(parse_boundaries(&text).unwrap(), seg);
    }

    #[test]
    fn boundary_parser_rejects_malformed_input() {
        for bad in [
            "",
            "nonsense",
            "# qfvs-boundaries v1\n0\n5",
            "# qfvs-boundaries v1\n# n = 10\n1\n5",
            "# qfvs-boundaries v1\n# n = 10\n0\n5\n5",
            "# qfvs-boundaries v1\n# n = 10\n0\n12",
            "# qfvs-boundaries v1\n# n = ten\n0",
        ] {
            assert!(parse_boundaries(bad).is_err(), "accepted: {bad:?}");
        }
    }
}
