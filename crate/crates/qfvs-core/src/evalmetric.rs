//! Summary evaluation: tag-set IoU, maximum-weight bipartite matching, and
//! precision/recall/F1.
//!
//! Two shots are compared by the intersection-over-union of their concept
//! tag sets. A ground-truth summary and a machine summary are compared by
//! building the full IoU weight matrix between their shots, finding the
//! maximum-weight matching, and dividing the total matched weight by the
//! machine length (precision) and the ground-truth length (recall).
//!
//! Reports serialize to a line-oriented `key=value` document:
//!
//! ```text
//! # qfvs-eval v1
//! precision=0.75
//! recall=0.5
//! f1=0.6
//! gt_len=2
//! machine_len=2
//! empty_gt=false
//! empty_machine=false
//! pair=3,17,0.25
//! ```
//!
//! `pair` lines carry `gt_shot,machine_shot,weight` and may repeat; every
//! other key appears exactly once. Floats use the shortest representation
//! that round-trips, so parse(serialize(r)) == r.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Concept tags attached to one shot.
pub type TagSet = BTreeSet<String>;

/// One matched (ground-truth shot, machine shot) pair and its IoU weight.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchedPair {
    pub gt_shot: usize,
    pub machine_shot: usize,
    pub weight: f64,
}

/// Result of comparing a machine summary against a ground-truth summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of shots in the ground-truth summary.
    pub gt_len: usize,
    /// Number of shots in the machine summary.
    pub machine_len: usize,
    /// True when the ground-truth summary was empty (scores forced to 0).
    pub empty_gt: bool,
    /// True when the machine summary was empty (scores forced to 0).
    pub empty_machine: bool,
    /// Matched pairs with nonzero weight, sorted by ground-truth shot.
    pub pairs: Vec<MatchedPair>,
}

/// Intersection-over-union of two tag sets; 0 when both are empty.
pub fn iou(a: &TagSet, b: &TagSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Maximum-weight matching of a bipartite graph given as a rectangular
/// weight matrix (`weights[i][j]` joins left node `i` to right node `j`).
///
/// Entries must be nonnegative. Returns `(left, right, weight)` triples for
/// every matched edge with nonzero weight; the sum of returned weights is
/// the maximum achievable over all matchings.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Result<Vec<(usize, usize, f64)>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let mut big = 0.0f64;
    for (i, row) in weights.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Contract(format!(
                "ragged weight matrix: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        for &w in row {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Contract(format!(
                    "matching weights must be finite and nonnegative, got {w}"
                )));
            }
            big = big.max(w);
        }
    }

    // Pad to square and convert to a minimization problem; dummy rows and
    // columns cost `big`, the same as a zero-weight edge.
    let n = rows.max(cols);
    let mut cost = vec![vec![big; n]; n];
    for (i, row) in weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            cost[i][j] = big - w;
        }
    }
    let row_to_col = hungarian_min_cost(&cost);

    let mut pairs = Vec::new();
    for (i, &j) in row_to_col.iter().enumerate() {
        if i < rows && j < cols && weights[i][j] > 0.0 {
            pairs.push((i, j, weights[i][j]));
        }
    }
    Ok(pairs)
}

/// O(n^3) Hungarian algorithm on a square cost matrix. Returns the column
/// assigned to each row of a minimum-cost perfect assignment.
fn hungarian_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials and matching state use 1-based indexing; column 0 is a
    // virtual unmatched slot.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    row_to_col
}

/// Scores a machine summary against a ground-truth summary.
///
/// `gt` and `machine` list shot indices into `tags`, which holds the
/// concept annotation of every shot in the video. An empty summary on
/// either side yields an all-zero report with the corresponding flag set.
pub fn evaluate_summary(gt: &[usize], machine: &[usize], tags: &[TagSet]) -> Result<EvalReport> {
    for &s in gt.iter().chain(machine) {
        if s >= tags.len() {
            return Err(Error::Contract(format!(
                "summary references shot {s} but only {} shots are annotated",
                tags.len()
            )));
        }
    }
    let mut report = EvalReport {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        gt_len: gt.len(),
        machine_len: machine.len(),
        empty_gt: gt.is_empty(),
        empty_machine: machine.is_empty(),
        pairs: Vec::new(),
    };
    if report.empty_gt || report.empty_machine {
        return Ok(report);
    }

    let weights: Vec<Vec<f64>> = gt
        .iter()
        .map(|&g| machine.iter().map(|&m| iou(&tags[g], &tags[m])).collect())
        .collect();
    let matched = max_weight_matching(&weights)?;
    let total: f64 = matched.iter().map(|&(_, _, w)| w).sum();
    report.pairs = matched
        .into_iter()
        .map(|(i, j, w)| MatchedPair {
            gt_shot: gt[i],
            machine_shot: machine[j],
            weight: w,
        })
        .collect();
    report.pairs.sort_by_key(|p| (p.gt_shot, p.machine_shot));
    report.precision = total / machine.len() as f64;
    report.recall = total / gt.len() as f64;
    if report.precision + report.recall > 0.0 {
        report.f1 =
            2.0 * report.precision * report.recall / (report.precision + report.recall);
    }
    Ok(report)
}

/// Renders a report in the `key=value` document format.
pub fn serialize_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# qfvs-eval v1");
    let _ = writeln!(out, "precision={}", report.precision);
    let _ = writeln!(out, "recall={}", report.recall);
    let _ = writeln!(out, "f1={}", report.f1);
    let _ = writeln!(out, "gt_len={}", report.gt_len);
    let _ = writeln!(out, "machine_len={}", report.machine_len);
    let _ = writeln!(out, "empty_gt={}", report.empty_gt);
    let _ = writeln!(out, "empty_machine={}", report.empty_machine);
    for p in &report.pairs {
        let _ = writeln!(out, "pair={},{},{}", p.gt_shot, p.machine_shot, p.weight);
    }
    out
}

/// Parses a document produced by [`serialize_report`].
pub fn parse_report(text: &str) -> Result<EvalReport> {
    let mut precision = None;
    let mut recall = None;
    let mut f1 = None;
    let mut gt_len = None;
    let mut machine_len = None;
    let mut empty_gt = None;
    let mut empty_machine = None;
    let mut pairs = Vec::new();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| Error::Parse {
            line: lineno + 1,
            msg,
        };
        if lineno == 0 {
            if line != "# qfvs-eval v1" {
                return Err(err("missing eval report header".into()));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
        let parse_f64 = |v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| err(format!("invalid number '{v}' for key '{key}'")))?;
            if !x.is_finite() {
                return Err(err(format!("non-finite value '{v}' for key '{key}'")));
            }
            Ok(x)
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| err(format!("invalid count '{v}' for key '{key}'")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(err(format!("invalid flag '{v}' for key '{key}'"))),
            }
        };
        let set = |slot: &mut Option<f64>, v: &str| -> Result<()> {
            if slot.is_some() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            *slot = Some(parse_f64(v)?);
            Ok(())
        };
        match key {
            "precision" => set(&mut precision, value)?,
            "recall" => set(&mut recall, value)?,
            "f1" => set(&mut f1, value)?,
            "gt_len" => {
                if gt_len.replace(parse_usize(value)?).is_some() {
                    return Err(err(format!("duplicate key '{key}'")));
                }
            }
            "machine_len" => {
                if machine_len.replace(parse_usize(value)?).is_some() {
                    return Err(err(format!("duplicate key '{key}'")));
                }
            }
            "empty_gt" => {
                if empty_gt.replace(parse_bool(value)?).is_some() {
                    return Err(err(format!("duplicate key '{key}'")));
                }
            }
            "empty_machine" => {
                if empty_machine.replace(parse_bool(value)?).is_some() {
                    return Err(err(format!("duplicate key '{key}'")));
                }
            }
            "pair" => {
                let mut it = value.split(',');
                let mut field = || {
                    it.next()
                        .ok_or_else(|| err(format!("pair needs 3 fields, got '{value}'")))
                };
                let gt_shot = parse_usize(field()?)?;
                let machine_shot = parse_usize(field()?)?;
                let weight = parse_f64(field()?)?;
                if it.next().is_some() {
                    return Err(err(format!("pair has extra fields: '{value}'")));
                }
                if !(0.0..=1.0).contains(&weight) {
                    return Err(err(format!("pair weight {weight} outside [0,1]")));
                }
                pairs.push(MatchedPair {
                    gt_shot,
                    machine_shot,
                    weight,
                });
            }
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "empty eval report".into(),
        });
    }
    let missing = |k: &str| Error::Parse {
        line: 1,
        msg: format!("missing key '{k}'"),
    };
    Ok(EvalReport {
        precision: precision.ok_or_else(|| missing("precision"))?,
        recall: recall.ok_or_else(|| missing("recall"))?,
        f1: f1.ok_or_else(|| missing("f1"))?,
        gt_len: gt_len.ok_or_else(|| missing("gt_len"))?,
        machine_len: machine_len.ok_or_else(|| missing("machine_len"))?,
        empty_gt: empty_gt.ok_or_else(|| missing("empty_gt"))?,
        empty_machine: empty_machine.ok_or_else(|| missing("empty_machine"))?,
        pairs,
    })
}
