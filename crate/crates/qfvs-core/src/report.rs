//! Per-shot summary documents and the two analysis graphs derived from
//! them.
//!
//! A [`SummaryDoc`] records, for one (video, query) pair, every shot's
//! relevance score, its tag-derived category, whether the selector picked
//! it, and whether it belongs to the ground-truth summary. The document
//! round-trips through a line-oriented text format. Two CSV views are
//! derived from it: a ground-truth versus machine timeline and a score
//! curve, each also renderable as a small self-contained SVG. A verifier
//! recomputes the CSVs and reports the first line that disagrees.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evalmetric::TagSet;

pub const SUMMARY_HEADER: &str = "# qfvs-summary v1";
const COLUMNS: &str = "shot_index,relevance_score,category,selected,in_ground_truth";

/// Which query concept a shot's tags match; the first concept wins when
/// both are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Query1,
    Query2,
    Irrelevant,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::Query1 => "query1-relevant",
            Category::Query2 => "query2-relevant",
            Category::Irrelevant => "irrelevant",
        }
    }

    pub fn from_label(s: &str) -> Option<Category> {
        [Category::Query1, Category::Query2, Category::Irrelevant]
            .into_iter()
            .find(|c| c.label() == s)
    }
}

/// Categorizes one shot's tags against the query pair.
pub fn categorize(tags: &TagSet, c1: &str, c2: &str) -> Category {
    if tags.contains(c1) {
        Category::Query1
    } else if tags.contains(c2) {
        Category::Query2
    } else {
        Category::Irrelevant
    }
}

/// One shot of a summary document.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub shot_index: usize,
    pub relevance_score: f64,
    pub category: Category,
    pub selected: bool,
    pub in_ground_truth: bool,
}

/// A full per-shot account of one summarization run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryDoc {
    pub video: String,
    pub concept1: String,
    pub concept2: String,
    /// Fraction of valid shots the selector keeps.
    pub ratio: f64,
    /// Segment start indices; empty when segmentation is not recorded.
    pub segment_starts: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

fn check_name(field: &str, value: &str) -> Result<()> {
    let clean = !value.is_empty()
        && value.trim() == value
        && !value.contains(',')
        && value.lines().count() == 1;
    if clean {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "summary {field} '{value}' must be a single trimmed token without commas"
        )))
    }
}

impl SummaryDoc {
    pub fn new(
        video: String,
        concept1: String,
        concept2: String,
        ratio: f64,
        segment_starts: Vec<usize>,
        rows: Vec<ReportRow>,
    ) -> Result<Self> {
        check_name("video", &video)?;
        check_name("concept1", &concept1)?;
        check_name("concept2", &concept2)?;
        if !(ratio.is_finite() && ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Contract(format!(
                "summary ratio {ratio} outside (0, 1]"
            )));
        }
        if rows.is_empty() {
            return Err(Error::Contract("summary has no shots".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.shot_index != i {
                return Err(Error::Contract(format!(
                    "row {i} carries shot index {}",
                    row.shot_index
                )));
            }
            let s = row.relevance_score;
            if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                return Err(Error::Contract(format!(
                    "shot {i} score {s} outside [0, 1]"
                )));
            }
        }
        if !segment_starts.is_empty() {
            if segment_starts[0] != 0 {
                return Err(Error::Contract(format!(
                    "first segment starts at {}, not 0",
                    segment_starts[0]
                )));
            }
            for w in segment_starts.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Contract(format!(
                        "segment starts {} and {} out of order",
                        w[0], w[1]
                    )));
                }
            }
            if *segment_starts.last().unwrap() >= rows.len() {
                return Err(Error::Contract(format!(
                    "segment start {} beyond the last shot",
                    segment_starts.last().unwrap()
                )));
            }
        }
        Ok(SummaryDoc {
            video,
            concept1,
            concept2,
            ratio,
            segment_starts,
            rows,
        })
    }

    pub fn n_shots(&self) -> usize {
        self.rows.len()
    }

    /// Indices the selector picked, ascending.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.selected)
            .map(|r| r.shot_index)
            .collect()
    }

    /// Ground-truth summary indices, ascending.
    pub fn gt_indices(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.in_ground_truth)
            .map(|r| r.shot_index)
            .collect()
    }
}

/// Assembles per-shot rows from tags, scores, and the two index sets.
pub fn build_rows(
    tags: &[TagSet],
    c1: &str,
    c2: &str,
    scores: &[f64],
    selected: &[usize],
    gt: &[usize],
) -> Result<Vec<ReportRow>> {
    let n = tags.len();
    if scores.len() != n {
        return Err(Error::Contract(format!(
            "{} scores for {n} shots",
            scores.len()
        )));
    }
    let mark = |what: &str, idxs: &[usize]| -> Result<Vec<bool>> {
        let mut mask = vec![false; n];
        for &i in idxs {
            if i >= n {
                return Err(Error::Contract(format!(
                    "{what} index {i} beyond the last shot {}",
                    n.saturating_sub(1)
                )));
            }
            mask[i] = true;
        }
        Ok(mask)
    };
    let sel = mark("selected", selected)?;
    let in_gt = mark("ground-truth", gt)?;
    Ok((0..n)
        .map(|i| ReportRow {
            shot_index: i,
            relevance_score: scores[i],
            category: categorize(&tags[i], c1, c2),
            selected: sel[i],
            in_ground_truth: in_gt[i],
        })
        .collect())
}

/// Renders a document; [`parse_summary`] reproduces it exactly.
pub fn render_summary(doc: &SummaryDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SUMMARY_HEADER}");
    let _ = writeln!(out, "video={}", doc.video);
    let _ = writeln!(out, "concept1={}", doc.concept1);
    let _ = writeln!(out, "concept2={}", doc.concept2);
    let _ = writeln!(out, "ratio={}", doc.ratio);
    if !doc.segment_starts.is_empty() {
        let joined: Vec<String> = doc.segment_starts.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "segments={}", joined.join(","));
    }
    let _ = writeln!(out, "{COLUMNS}");
    for row in &doc.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.shot_index,
            row.relevance_score,
            row.category.label(),
            row.selected,
            row.in_ground_truth
        );
    }
    out
}

/// Parses a document produced by [`render_summary`]. Validates as strictly
/// as [`SummaryDoc::new`]; safe on arbitrary input.
pub fn parse_summary(text: &str) -> Result<SummaryDoc> {
    let mut video = None;
    let mut concept1 = None;
    let mut concept2 = None;
    let mut ratio = None;
    let mut segments: Option<Vec<usize>> = None;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut saw_header = false;
    let mut in_rows = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        let err = |msg: String| Error::Parse { line: lineno, msg };
        if !saw_header {
            if line != SUMMARY_HEADER {
                return Err(err("missing summary header".into()));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_rows {
            if line == COLUMNS {
                in_rows = true;
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value or the column header, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let dup = |k: &str| err(format!("duplicate key '{k}'"));
            match key {
                "video" => {
                    if video.replace(value.to_string()).is_some() {
                        return Err(dup(key));
                    }
                }
                "concept1" => {
                    if concept1.replace(value.to_string()).is_some() {
                        return Err(dup(key));
                    }
                }
                "concept2" => {
                    if concept2.replace(value.to_string()).is_some() {
                        return Err(dup(key));
                    }
                }
                "ratio" => {
                    let r: f64 = value
                        .parse()
                        .map_err(|_| err(format!("invalid ratio '{value}'")))?;
                    if ratio.replace(r).is_some() {
                        return Err(dup(key));
                    }
                }
                "segments" => {
                    let mut starts = Vec::new();
                    for part in value.split(',') {
                        starts.push(part.trim().parse::<usize>().map_err(|_| {
                            err(format!("invalid segment start '{}'", part.trim()))
                        })?);
                    }
                    if segments.replace(starts).is_some() {
                        return Err(dup(key));
                    }
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(format!(
                "row needs 5 comma-separated fields, got {}",
                fields.len()
            )));
        }
        let shot_index: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("invalid shot index '{}'", fields[0])))?;
        let relevance_score: f64 = fields[1]
            .parse()
            .map_err(|_| err(format!("invalid score '{}'", fields[1])))?;
        let category = Category::from_label(fields[2])
            .ok_or_else(|| err(format!("unknown category '{}'", fields[2])))?;
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(err(format!("invalid flag '{v}'"))),
        };
        rows.push(ReportRow {
            shot_index,
            relevance_score,
            category,
            selected: parse_bool(fields[3])?,
            in_ground_truth: parse_bool(fields[4])?,
        });
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "missing summary header".into(),
        });
    }
    if !in_rows {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            msg: "missing column header".into(),
        });
    }
    let need = |name: &str, v: Option<String>| {
        v.ok_or_else(|| Error::Parse {
            line: text.lines().count().max(1),
            msg: format!("missing key '{name}'"),
        })
    };
    let doc = SummaryDoc::new(
        need("video", video)?,
        need("concept1", concept1)?,
        need("concept2", concept2)?,
        ratio.ok_or_else(|| Error::Parse {
            line: text.lines().count().max(1),
            msg: "missing key 'ratio'".into(),
        })?,
        segments.unwrap_or_default(),
        rows,
    )?;
    Ok(doc)
}

/// Per-shot 0/1 bands: the two per-query ground-truth rows, their union,
/// and the machine selection.
pub fn timeline_csv(doc: &SummaryDoc) -> String {
    let mut out = String::from("shot_index,gt_query1,gt_query2,gt_union,machine\n");
    for row in &doc.rows {
        let b = |flag: bool| usize::from(flag);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.shot_index,
            b(row.in_ground_truth && row.category == Category::Query1),
            b(row.in_ground_truth && row.category == Category::Query2),
            b(row.in_ground_truth),
            b(row.selected)
        );
    }
    out
}

/// Per-shot relevance score with its category.
pub fn score_curve_csv(doc: &SummaryDoc) -> String {
    let mut out = String::from("shot_index,relevance_score,category\n");
    for row in &doc.rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            row.shot_index,
            row.relevance_score,
            row.category.label()
        );
    }
    out
}

/// Shot counts per category plus selection and ground-truth totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryTally {
    pub query1: usize,
    pub query2: usize,
    pub irrelevant: usize,
    pub selected: usize,
    pub in_gt: usize,
}

pub fn tally(doc: &SummaryDoc) -> CategoryTally {
    let mut t = CategoryTally {
        query1: 0,
        query2: 0,
        irrelevant: 0,
        selected: 0,
        in_gt: 0,
    };
    for row in &doc.rows {
        match row.category {
            Category::Query1 => t.query1 += 1,
            Category::Query2 => t.query2 += 1,
            Category::Irrelevant => t.irrelevant += 1,
        }
        t.selected += usize::from(row.selected);
        t.in_gt += usize::from(row.in_ground_truth);
    }
    t
}

/// One-line audit of the tally, naming the concepts.
pub fn render_tally(doc: &SummaryDoc) -> String {
    let t = tally(doc);
    format!(
        "{} shots tagged {} (query 1), {} shots tagged {} (query 2), {} others; {} selected, {} in the ground truth",
        t.query1, doc.concept1, t.query2, doc.concept2, t.irrelevant, t.selected, t.in_gt
    )
}

const BAND_SPECS: [(&str, &str, &str); 4] = [
    ("b1", "#7b2d8b", "gt query 1"),
    ("b2", "#2d5b8b", "gt query 2"),
    ("bu", "#888888", "gt union"),
    ("bm", "#2d8b4e", "machine"),
];

fn x_at(i: usize, n: usize) -> f64 {
    60.0 + 800.0 * i as f64 / n as f64
}

/// Self-contained SVG of the ground-truth versus machine timeline.
pub fn timeline_svg(doc: &SummaryDoc) -> String {
    let n = doc.rows.len();
    let w = 800.0 / n as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 880 200\" font-family=\"monospace\" font-size=\"11\">"
    );
    let _ = writeln!(
        out,
        "<title>{} vs machine summary: {} + {}</title>",
        doc.video, doc.concept1, doc.concept2
    );
    for (b, (class, color, label)) in BAND_SPECS.iter().enumerate() {
        let y = 20.0 + 44.0 * b as f64;
        let _ = writeln!(out, "<text x=\"2\" y=\"{}\">{label}</text>", y + 20.0);
        let _ = writeln!(
            out,
            "<rect x=\"60\" y=\"{y}\" width=\"800\" height=\"32\" fill=\"none\" stroke=\"#ccc\"/>"
        );
        for row in &doc.rows {
            let on = match *class {
                "b1" => row.in_ground_truth && row.category == Category::Query1,
                "b2" => row.in_ground_truth && row.category == Category::Query2,
                "bu" => row.in_ground_truth,
                _ => row.selected,
            };
            if on {
                let _ = writeln!(
                    out,
                    "<rect class=\"{class}\" x=\"{:.3}\" y=\"{y}\" width=\"{:.3}\" height=\"32\" fill=\"{color}\"/>",
                    x_at(row.shot_index, n),
                    w
                );
            }
        }
    }
    for &s in doc.segment_starts.iter().skip(1) {
        let _ = writeln!(
            out,
            "<line class=\"seg\" x1=\"{x:.3}\" y1=\"16\" x2=\"{x:.3}\" y2=\"196\" stroke=\"#bbb\" stroke-dasharray=\"3,3\"/>",
            x = x_at(s, n)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Self-contained SVG of the score curve with a category strip and
/// selection markers.
pub fn score_curve_svg(doc: &SummaryDoc) -> String {
    let n = doc.rows.len();
    let w = 800.0 / n as f64;
    let y_of = |score: f64| 220.0 - 200.0 * score;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 880 270\" font-family=\"monospace\" font-size=\"11\">"
    );
    let _ = writeln!(
        out,
        "<title>{} relevance scores: {} + {}</title>",
        doc.video, doc.concept1, doc.concept2
    );
    let _ = writeln!(out, "<text x=\"40\" y=\"24\">1</text>");
    let _ = writeln!(out, "<text x=\"40\" y=\"224\">0</text>");
    let _ = writeln!(
        out,
        "<rect x=\"60\" y=\"20\" width=\"800\" height=\"200\" fill=\"none\" stroke=\"#ccc\"/>"
    );
    let points: Vec<String> = doc
        .rows
        .iter()
        .map(|r| {
            format!(
                "{:.3},{:.3}",
                x_at(r.shot_index, n) + w / 2.0,
                y_of(r.relevance_score)
            )
        })
        .collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#333\"/>",
        points.join(" ")
    );
    for row in &doc.rows {
        let (class, color) = match row.category {
            Category::Query1 => ("c1", "#7b2d8b"),
            Category::Query2 => ("c2", "#2d5b8b"),
            Category::Irrelevant => ("ci", "#dddddd"),
        };
        let _ = writeln!(
            out,
            "<rect class=\"{class}\" x=\"{:.3}\" y=\"232\" width=\"{:.3}\" height=\"12\" fill=\"{color}\"/>",
            x_at(row.shot_index, n),
            w
        );
        if row.selected {
            let _ = writeln!(
                out,
                "<circle class=\"sel\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\" fill=\"#2d8b4e\"/>",
                x_at(row.shot_index, n) + w / 2.0,
                y_of(row.relevance_score)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn first_diff(which: &str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let mut exp = expected.lines();
    let mut got = found.lines();
    let mut lineno = 0;
    loop {
        lineno += 1;
        match (exp.next(), got.next()) {
            (Some(a), Some(b)) if a == b => continue,
            (Some(a), Some(b)) => {
                return Err(Error::Contract(format!(
                    "{which} line {lineno} does not match this summary: expected '{a}', found '{b}'"
                )))
            }
            (Some(a), None) => {
                return Err(Error::Contract(format!(
                    "{which} ends early at line {lineno}: expected '{a}'"
                )))
            }
            (None, Some(b)) => {
                return Err(Error::Contract(format!(
                    "{which} has extra line {lineno}: '{b}'"
                )))
            }
            (None, None) => {
                return Err(Error::Contract(format!(
                    "{which} differs from this summary in line endings only"
                )))
            }
        }
    }
}

/// Checks that previously written graph CSVs match what this summary
/// produces, reporting the first divergent line.
pub fn verify_graphs(doc: &SummaryDoc, timeline: &str, curve: &str) -> Result<()> {
    first_diff("timeline csv", &timeline_csv(doc), timeline)?;
    first_diff("score curve csv", &score_curve_csv(doc), curve)
}

/// Deduplicated ascending index list, for callers assembling documents
/// from possibly unsorted selections.
pub fn normalize_indices(idxs: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = idxs.iter().copied().collect();
    set.into_iter().collect()
}
