//! Synthetic annotated videos, concept queries, and the bundle file format.
//!
//! A bundle holds a concept lexicon with 300-d embeddings, a set of videos
//! (each a sequence of fixed-length shots carrying a feature vector and a
//! concept tag set), and two-concept queries paired with the video they
//! were built against. Queries cover four scenarios: both concepts appear
//! together in some shot, both appear but never together, only one
//! appears, or neither appears.
//!
//! Bundles serialize as JSON lines, one record per line, in a fixed order:
//!
//! ```text
//! {"header":{"version":1,"split":"leave-one-video-out",...}}
//! {"concept":{"name":"CAR","embedding":[...]}}
//! {"video":{"id":"video-0","shots":200,"shot_seconds":5.0}}
//! {"shot":{"video":"video-0","index":0,"tags":["CAR"],"feature":[...]}}
//! {"query":{"video":"video-0","c1":"CAR","c2":"MEN","scenario":"both-joint","oracle":[0]}}
//! ```
//!
//! The header comes first and declares all counts, concepts follow in
//! lexicon order, every video record is followed by its shots in index
//! order, and queries come last. The loader rejects anything else.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetric::TagSet;
use crate::tensor::rng::SplitMix64;

/// Dimension of every concept embedding vector.
pub const EMBED_DIM: usize = 300;

/// Nominal duration of one shot, in seconds. Informational only.
pub const SHOT_SECONDS: f64 = 5.0;

const BUNDLE_VERSION: u32 = 1;
const SPLIT_NAME: &str = "leave-one-video-out";

const SALT_LEXICON: u64 = 1;
const SALT_VIDEO_BASE: u64 = 0x100;

/// Ordered concept vocabulary with one embedding per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptLexicon {
    names: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl ConceptLexicon {
    /// Builds a lexicon from parallel name/embedding lists. Names must be
    /// unique and nonempty; every embedding must be a finite 300-d vector.
    pub fn new(names: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("lexicon needs at least one concept".into()));
        }
        if names.len() != embeddings.len() {
            return Err(Error::Config(format!(
                "{} concept names but {} embeddings",
                names.len(),
                embeddings.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Config("empty concept name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate concept '{name}'")));
            }
        }
        for (name, e) in names.iter().zip(&embeddings) {
            if e.len() != EMBED_DIM {
                return Err(Error::Config(format!(
                    "embedding for '{name}' has {} dims, expected {EMBED_DIM}",
                    e.len()
                )));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "embedding for '{name}' contains a non-finite value"
                )));
            }
        }
        Ok(ConceptLexicon { names, embeddings })
    }

    /// The 48 concept names used by the synthetic generator, in order.
    pub fn default_names() -> Vec<String> {
        const NAMES: [&str; 48] = [
            "BIKE", "BIRD", "BOAT", "BOOK", "BUILDING", "CAR", "CHAIR", "CLOUDS", "COMPUTER",
            "CUP", "DESK", "DOG", "DOOR", "DRINK", "FACE", "FLOWERS", "FOOD", "GARDEN", "GLASS",
            "GRASS", "HALL", "HANDS", "HAT", "KIDS", "LADY", "LAKE", "MEN", "MOON", "MUSIC",
            "OCEAN", "OFFICE", "PAPER", "PARK", "PHONE", "ROAD", "ROOM", "SCHOOL", "SHOES",
            "SHOP", "SIGN", "SKY", "STREET", "SUN", "TABLE", "TRAIN", "TREE", "WALL", "WINDOW",
        ];
        NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn embedding(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.embeddings[i].as_slice())
    }

    pub fn embedding_at(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    /// Lexicon names closest to `unknown` by case-insensitive edit
    /// distance, nearest first, ties alphabetical.
    pub fn suggest(&self, unknown: &str, k: usize) -> Vec<&str> {
        let target = unknown.to_uppercase();
        let mut scored: Vec<(usize, &str)> = self
            .names
            .iter()
            .map(|n| (edit_distance(&n.to_uppercase(), &target), n.as_str()))
            .collect();
        scored.sort();
        scored.into_iter().take(k).map(|(_, n)| n).collect()
    }
}

pub(crate) fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One video shot: its feature vector and the concepts visible in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub feature: Vec<f64>,
    pub tags: TagSet,
}

/// An annotated video: an ordered sequence of non-overlapping shots.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSequence {
    pub video_id: String,
    pub shots: Vec<Shot>,
    /// Nominal shot duration in seconds; carried through for reporting.
    pub shot_seconds: f64,
}

impl ShotSequence {
    pub fn new(video_id: String, shots: Vec<Shot>, shot_seconds: f64) -> Result<Self> {
        if video_id.is_empty() {
            return Err(Error::Config("empty video id".into()));
        }
        if shots.is_empty() {
            return Err(Error::Config(format!("video '{video_id}' has no shots")));
        }
        if !(shot_seconds.is_finite() && shot_seconds > 0.0) {
            return Err(Error::Config(format!(
                "video '{video_id}' has invalid shot duration {shot_seconds}"
            )));
        }
        let dim = shots[0].feature.len();
        if dim == 0 || shots.iter().any(|s| s.feature.len() != dim) {
            return Err(Error::Config(format!(
                "video '{video_id}' has inconsistent or empty feature dims"
            )));
        }
        Ok(ShotSequence {
            video_id,
            shots,
            shot_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.shots[0].feature.len()
    }

    /// Copies the per-shot features into the row layout the segmenter takes.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.shots.iter().map(|s| s.feature.clone()).collect()
    }
}

/// Relationship between a query's two concepts and its paired video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Both concepts appear together in at least one shot.
    BothJoint,
    /// Both concepts appear in the video, never in the same shot.
    BothDisjoint,
    /// Exactly one of the two concepts appears in the video.
    OnePresent,
    /// Neither concept appears anywhere in the video.
    NonePresent,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::BothJoint,
        Scenario::BothDisjoint,
        Scenario::OnePresent,
        Scenario::NonePresent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::BothJoint => "both-joint",
            Scenario::BothDisjoint => "both-disjoint",
            Scenario::OnePresent => "one-present",
            Scenario::NonePresent => "none-present",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A two-concept query, its embeddings, and the video it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub c1: String,
    pub c2: String,
    pub video_id: String,
    pub scenario: Scenario,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// Query embedding: the elementwise mean of `e1` and `e2`.
    pub h_q: Vec<f64>,
}

impl QuerySpec {
    pub fn new(
        c1: &str,
        c2: &str,
        scenario: Scenario,
        video_id: &str,
        lexicon: &ConceptLexicon,
    ) -> Result<Self> {
        if c1 == c2 {
            return Err(Error::Config(format!(
                "query concepts must differ, got '{c1}' twice"
            )));
        }
        let lookup = |c: &str| {
            lexicon
                .embedding(c)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Config(format!("concept '{c}' not in lexicon")))
        };
        let e1 = lookup(c1)?;
        let e2 = lookup(c2)?;
        let h_q = e1
            .iter()
            .zip(&e2)
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        Ok(QuerySpec {
            c1: c1.to_string(),
            c2: c2.to_string(),
            video_id: video_id.to_string(),
            scenario,
            e1,
            e2,
            h_q,
        })
    }
}

/// Determines which scenario a concept pair realizes against a video's
/// actual tags.
pub fn classify_scenario(video: &ShotSequence, c1: &str, c2: &str) -> Scenario {
    let mut saw1 = false;
    let mut saw2 = false;
    for shot in &video.shots {
        let h1 = shot.tags.contains(c1);
        let h2 = shot.tags.contains(c2);
        if h1 && h2 {
            return Scenario::BothJoint;
        }
        saw1 |= h1;
        saw2 |= h2;
    }
    match (saw1, saw2) {
        (true, true) => Scenario::BothDisjoint,
        (false, false) => Scenario::NonePresent,
        _ => Scenario::OnePresent,
    }
}

/// How many queries of each scenario to build per video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioPattern {
    pub both_joint: usize,
    pub both_disjoint: usize,
    pub one_present: usize,
    pub none_present: usize,
}

impl Default for ScenarioPattern {
    fn default() -> Self {
        ScenarioPattern {
            both_joint: 15,
            both_disjoint: 15,
            one_present: 15,
            none_present: 1,
        }
    }
}

impl ScenarioPattern {
    pub fn total(&self) -> usize {
        self.both_joint + self.both_disjoint + self.one_present + self.none_present
    }

    fn count(&self, s: Scenario) -> usize {
        match s {
            Scenario::BothJoint => self.both_joint,
            Scenario::BothDisjoint => self.both_disjoint,
            Scenario::OnePresent => self.one_present,
            Scenario::NonePresent => self.none_present,
        }
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_videos: usize,
    pub shots_per_video: usize,
    pub n_concepts: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub pattern: ScenarioPattern,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_videos: 4,
            shots_per_video: 200,
            n_concepts: 48,
            feature_dim: 2048,
            noise_sigma: 0.1,
            seed: 0,
            pattern: ScenarioPattern::default(),
        }
    }
}

/// A complete dataset: lexicon, videos, queries, and per-query oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub lexicon: ConceptLexicon,
    pub videos: Vec<ShotSequence>,
    pub queries: Vec<QuerySpec>,
    /// Oracle summary per query: all relevant shot indices, ascending.
    pub oracles: Vec<Vec<usize>>,
}

/// One train/test split: every video but one trains, the held-out tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_video: usize,
    pub train_videos: Vec<usize>,
}

impl DatasetBundle {
    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.video_id == id)
    }

    /// Query indices paired with the given video.
    pub fn queries_for_video(&self, video: usize) -> Vec<usize> {
        let id = &self.videos[video].video_id;
        (0..self.queries.len())
            .filter(|&q| &self.queries[q].video_id == id)
            .collect()
    }

    /// Leave-one-video-out folds, one per video.
    pub fn folds(&self) -> Vec<Fold> {
        (0..self.videos.len())
            .map(|test| Fold {
                test_video: test,
                train_videos: (0..self.videos.len()).filter(|&v| v != test).collect(),
            })
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, ShotSequence::feature_dim)
    }
}

/// Per-shot binary relevance: 1.0 when the shot's tags contain either
/// query concept, else 0.0.
pub fn ground_truth_labels(video: &ShotSequence, query: &QuerySpec) -> Vec<f64> {
    video
        .shots
        .iter()
        .map(|s| {
            let hit = s.tags.contains(&query.c1) || s.tags.contains(&query.c2);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Indices of all query-relevant shots, in chronological order.
pub fn oracle_summary(video: &ShotSequence, query: &QuerySpec) -> Vec<usize> {
    ground_truth_labels(video, query)
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == 1.0)
        .map(|(i, _)| i)
        .collect()
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn unit_vector(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    l2_normalized(&raw)
}

/// Number of reserved concepts needed so that `pairs` distinct pairs can
/// be formed inside the reserved group.
fn group_size_for_pairs(pairs: usize) -> usize {
    if pairs == 0 {
        return 0;
    }
    let mut g = 2;
    while g * (g - 1) / 2 < pairs {
        g += 1;
    }
    g
}

struct RolePlan {
    absent: usize,
    clique: usize,
}

/// Splits the lexicon into per-video roles: concepts kept out of the video
/// entirely (for none/one-present queries), a group whose members never
/// share a shot (for both-disjoint queries), and unconstrained concepts.
fn plan_roles(n_concepts: usize, pattern: &ScenarioPattern) -> Result<RolePlan> {
    let mut absent = group_size_for_pairs(pattern.none_present);
    if pattern.one_present > 0 {
        absent = absent.max(1);
    }
    let clique = group_size_for_pairs(pattern.both_disjoint);
    let free = n_concepts
        .checked_sub(absent + clique)
        .ok_or_else(|| infeasible(n_concepts, pattern))?;
    let joint_capacity = free * free.saturating_sub(1) / 2 + free * clique;
    let one_capacity = (free + clique) * absent;
    if joint_capacity < pattern.both_joint || one_capacity < pattern.one_present {
        return Err(infeasible(n_concepts, pattern));
    }
    Ok(RolePlan { absent, clique })
}

fn infeasible(n_concepts: usize, pattern: &ScenarioPattern) -> Error {
    Error::Generation(format!(
        "lexicon of {n_concepts} concepts cannot realize {}+{}+{}+{} queries per video; \
         add concepts or reduce the pattern",
        pattern.both_joint, pattern.both_disjoint, pattern.one_present, pattern.none_present
    ))
}

/// Generates a synthetic bundle. Deterministic for a given config.
///
/// Concepts get random unit prototype vectors in feature space and random
/// unit 300-d embeddings. Each shot samples up to three concepts; its
/// feature is the normalized sum of their prototypes plus Gaussian noise.
/// Per video, concept roles are constrained so every requested query
/// scenario is constructible, then concrete concept pairs are drawn from
/// the tags that actually occurred.
pub fn generate_synthetic(cfg: &GenConfig) -> Result<DatasetBundle> {
    if cfg.n_videos < 2 {
        return Err(Error::Generation(format!(
            "need at least 2 videos for leave-one-out, got {}",
            cfg.n_videos
        )));
    }
    if cfg.shots_per_video == 0 || cfg.feature_dim == 0 {
        return Err(Error::Generation(
            "shots per video and feature dim must be positive".into(),
        ));
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(Error::Generation(format!(
            "noise sigma must be finite and nonnegative, got {}",
            cfg.noise_sigma
        )));
    }
    let all_names = ConceptLexicon::default_names();
    if cfg.n_concepts == 0 || cfg.n_concepts > all_names.len() {
        return Err(Error::Generation(format!(
            "concept count must be in 1..={}, got {}",
            all_names.len(),
            cfg.n_concepts
        )));
    }
    let plan = plan_roles(cfg.n_concepts, &cfg.pattern)?;
    let names: Vec<String> = all_names[..cfg.n_concepts].to_vec();

    let root = SplitMix64::new(cfg.seed);
    let mut lex_rng = root.derive(SALT_LEXICON);
    let mut embeddings = Vec::with_capacity(names.len());
    let mut prototypes = Vec::with_capacity(names.len());
    for _ in 0..names.len() {
        embeddings.push(unit_vector(&mut lex_rng, EMBED_DIM));
        prototypes.push(unit_vector(&mut lex_rng, cfg.feature_dim));
    }
    let lexicon = ConceptLexicon::new(names, embeddings)?;

    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut queries = Vec::new();
    let mut oracles = Vec::new();
    for v in 0..cfg.n_videos {
        let mut rng = root.derive(SALT_VIDEO_BASE + v as u64);
        let video_id = format!("video-{v}");

        let mut perm: Vec<usize> = (0..cfg.n_concepts).collect();
        rng.shuffle(&mut perm);
        let clique: Vec<usize> = perm[plan.absent..plan.absent + plan.clique].to_vec();
        let present: Vec<usize> = perm[plan.absent..].to_vec();
        let mut in_clique = vec![false; cfg.n_concepts];
        for &c in &clique {
            in_clique[c] = true;
        }

        let mut shots = Vec::with_capacity(cfg.shots_per_video);
        let mut scratch = present.clone();
        for _ in 0..cfg.shots_per_video {
            let want = rng.index(4).min(scratch.len());
            for i in 0..want {
                let j = i + rng.index(scratch.len() - i);
                scratch.swap(i, j);
            }
            let mut tags = TagSet::new();
            let mut clique_taken = false;
            for &c in &scratch[..want] {
                if in_clique[c] {
                    if clique_taken {
                        continue;
                    }
                    clique_taken = true;
                }
                tags.insert(lexicon.name(c).to_string());
            }
            let mut base = vec![0.0; cfg.feature_dim];
            for tag in &tags {
                let c = lexicon.index_of(tag).unwrap();
                for (b, p) in base.iter_mut().zip(&prototypes[c]) {
                    *b += p;
                }
            }
            let mut feature = l2_normalized(&base);
            if cfg.noise_sigma > 0.0 {
                for f in &mut feature {
                    *f += cfg.noise_sigma * rng.normal();
                }
            }
            shots.push(Shot { feature, tags });
        }
        let video = ShotSequence::new(video_id.clone(), shots, SHOT_SECONDS)?;

        let mut occurs = vec![false; cfg.n_concepts];
        let mut joint = vec![vec![false; cfg.n_concepts]; cfg.n_concepts];
        for shot in &video.shots {
            let ids: Vec<usize> = shot
                .tags
                .iter()
                .map(|t| lexicon.index_of(t).unwrap())
                .collect();
            for &a in &ids {
                occurs[a] = true;
                for &b in &ids {
                    if a != b {
                        joint[a][b] = true;
                    }
                }
            }
        }

        let mut pools: [Vec<(usize, usize)>; 4] = Default::default();
        for i in 0..cfg.n_concepts {
            for j in (i + 1)..cfg.n_concepts {
                let pair_scenario = match (occurs[i], occurs[j]) {
                    (true, true) if joint[i][j] => Scenario::BothJoint,
                    (true, true) => Scenario::BothDisjoint,
                    (true, false) => Scenario::OnePresent,
                    (false, true) => Scenario::OnePresent,
                    (false, false) => Scenario::NonePresent,
                };
                let pair = if occurs[j] && !occurs[i] { (j, i) } else { (i, j) };
                let slot = Scenario::ALL
                    .iter()
                    .position(|&s| s == pair_scenario)
                    .unwrap();
                pools[slot].push(pair);
            }
        }
        for (slot, scenario) in Scenario::ALL.into_iter().enumerate() {
            let need = cfg.pattern.count(scenario);
            let pool = &mut pools[slot];
            rng.shuffle(pool);
            if pool.len() < need {
                return Err(Error::Generation(format!(
                    "video '{video_id}' realized only {} candidate '{scenario}' pairs, \
                     need {need}; add shots or concepts",
                    pool.len()
                )));
            }
            for &(a, b) in pool.iter().take(need) {
                let q = QuerySpec::new(
                    lexicon.name(a),
                    lexicon.name(b),
                    scenario,
                    &video_id,
                    &lexicon,
                )?;
                oracles.push(oracle_summary(&video, &q));
                queries.push(q);
            }
        }
        videos.push(video);
    }
    Ok(DatasetBundle {
        lexicon,
        videos,
        queries,
        oracles,
    })
}

/// Outcome of re-deriving every query's scenario from the raw tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioAudit {
    /// Queries per scenario, in [`Scenario::ALL`] order.
    pub counts: [usize; 4],
    /// Human-readable descriptions of inconsistent queries.
    pub violations: Vec<String>,
}

impl ScenarioAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives each query's scenario from its video's tags and compares it
/// to the declared one; also checks the stored oracle against the labels.
pub fn audit_scenarios(bundle: &DatasetBundle) -> ScenarioAudit {
    let mut audit = ScenarioAudit {
        counts: [0; 4],
        violations: Vec::new(),
    };
    for (qi, query) in bundle.queries.iter().enumerate() {
        let Some(v) = bundle.video_index(&query.video_id) else {
            audit
                .violations
                .push(format!("query {qi} references unknown video '{}'", query.video_id));
            continue;
        };
        let video = &bundle.videos[v];
        let mut c1_seen = false;
        let mut c2_seen = false;
        let mut together = false;
        for shot in &video.shots {
            let h1 = shot.tags.contains(&query.c1);
            let h2 = shot.tags.contains(&query.c2);
            c1_seen |= h1;
            c2_seen |= h2;
            together |= h1 && h2;
        }
        let actual = match (c1_seen, c2_seen) {
            (true, true) if together => Scenario::BothJoint,
            (true, true) => Scenario::BothDisjoint,
            (true, false) | (false, true) => Scenario::OnePresent,
            (false, false) => Scenario::NonePresent,
        };
        if actual != query.scenario {
            audit.violations.push(format!(
                "query {qi} ({},{}) on '{}' declared {} but tags say {actual}",
                query.c1, query.c2, query.video_id, query.scenario
            ));
        }
        let slot = Scenario::ALL.iter().position(|&s| s == actual).unwrap();
        audit.counts[slot] += 1;
        if bundle.oracles.get(qi).map(Vec::as_slice)
            != Some(oracle_summary(video, query).as_slice())
        {
            audit
                .violations
                .push(format!("query {qi} oracle does not match its labels"));
        }
    }
    audit
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRec {
    version: u32,
    split: String,
    videos: usize,
    concepts: usize,
    feature_dim: usize,
    queries: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConceptRec {
    name: String,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoRec {
    id: String,
    shots: usize,
    shot_seconds: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotRec {
    video: String,
    index: usize,
    tags: Vec<String>,
    feature: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRec {
    video: String,
    c1: String,
    c2: String,
    scenario: String,
    oracle: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    Header(HeaderRec),
    Concept(ConceptRec),
    Video(VideoRec),
    Shot(ShotRec),
    Query(QueryRec),
}

/// Renders a bundle in the line-delimited record format.
pub fn to_jsonl_string(bundle: &DatasetBundle) -> Result<String> {
    let mut out = String::new();
    let mut emit = |rec: &Record| -> Result<()> {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Generation(format!("bundle serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
        Ok(())
    };
    emit(&Record::Header(HeaderRec {
        version: BUNDLE_VERSION,
        split: SPLIT_NAME.to_string(),
        videos: bundle.videos.len(),
        concepts: bundle.lexicon.len(),
        feature_dim: bundle.feature_dim(),
        queries: bundle.queries.len(),
    }))?;
    for i in 0..bundle.lexicon.len() {
        emit(&Record::Concept(ConceptRec {
            name: bundle.lexicon.name(i).to_string(),
            embedding: bundle.lexicon.embedding_at(i).to_vec(),
        }))?;
    }
    for video in &bundle.videos {
        emit(&Record::Video(VideoRec {
            id: video.video_id.clone(),
            shots: video.len(),
            shot_seconds: video.shot_seconds,
        }))?;
        for (index, shot) in video.shots.iter().enumerate() {
            emit(&Record::Shot(ShotRec {
                video: video.video_id.clone(),
                index,
                tags: shot.tags.iter().cloned().collect(),
                feature: shot.feature.clone(),
            }))?;
        }
    }
    for (query, oracle) in bundle.queries.iter().zip(&bundle.oracles) {
        emit(&Record::Query(QueryRec {
            video: query.video_id.clone(),
            c1: query.c1.clone(),
            c2: query.c2.clone(),
            scenario: query.scenario.to_string(),
            oracle: oracle.clone(),
        }))?;
    }
    Ok(out)
}

/// Parses the line-delimited record format back into a bundle, validating
/// counts, ordering, and cross-references. Errors carry the line number.
pub fn from_jsonl_str(text: &str) -> Result<DatasetBundle> {
    let perr = |line: usize, msg: String| Error::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, raw)| {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            return Err(perr(lineno, "blank line in bundle".into()));
        }
        let rec: Record = serde_json::from_str(raw)
            .map_err(|e| perr(lineno, format!("bad record: {e}")))?;
        Ok((lineno, rec))
    });
    let mut next = |expect: &str, at: usize| -> Result<(usize, Record)> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| perr(at, format!("unexpected end of bundle, expected {expect}")))
    };

    let (mut at, rec) = next("header", 1)?;
    let Record::Header(header) = rec else {
        return Err(perr(at, "first record must be the header".into()));
    };
    if header.version != BUNDLE_VERSION {
        return Err(perr(at, format!("unsupported version {}", header.version)));
    }
    if header.split != SPLIT_NAME {
        return Err(perr(at, format!("unsupported split '{}'", header.split)));
    }

    let mut names = Vec::with_capacity(header.concepts);
    let mut embeddings = Vec::with_capacity(header.concepts);
    for _ in 0..header.concepts {
        let (lineno, rec) = next("a concept record", at)?;
        at = lineno;
        let Record::Concept(c) = rec else {
            return Err(perr(at, "expected a concept record".into()));
        };
        names.push(c.name);
        embeddings.push(c.embedding);
    }
    let lexicon = ConceptLexicon::new(names, embeddings)
        .map_err(|e| perr(at, format!("bad lexicon: {e}")))?;

    let mut videos: Vec<ShotSequence> = Vec::with_capacity(header.videos);
    for _ in 0..header.videos {
        let (lineno, rec) = next("a video record", at)?;
        at = lineno;
        let Record::Video(v) = rec else {
            return Err(perr(at, "expected a video record".into()));
        };
        if videos.iter().any(|seq| seq.video_id == v.id) {
            return Err(perr(at, format!("duplicate video id '{}'", v.id)));
        }
        if v.shots == 0 {
            return Err(perr(at, format!("video '{}' declares zero shots", v.id)));
        }
        let mut shots = Vec::with_capacity(v.shots);
        for index in 0..v.shots {
            let (lineno, rec) = next("a shot record", at)?;
            at = lineno;
            let Record::Shot(s) = rec else {
                return Err(perr(at, "expected a shot record".into()));
            };
            if s.video != v.id {
                return Err(perr(
                    at,
                    format!("shot belongs to '{}', expected '{}'", s.video, v.id),
                ));
            }
            if s.index != index {
                return Err(perr(
                    at,
                    format!("shot index {} out of order, expected {index}", s.index),
                ));
            }
            if s.feature.len() != header.feature_dim {
                return Err(perr(
                    at,
                    format!(
                        "shot feature has {} dims, header says {}",
                        s.feature.len(),
                        header.feature_dim
                    ),
                ));
            }
            if s.feature.iter().any(|x| !x.is_finite()) {
                return Err(perr(at, "shot feature contains a non-finite value".into()));
            }
            let mut tags = TagSet::new();
            for tag in s.tags {
                if lexicon.index_of(&tag).is_none() {
                    return Err(perr(at, format!("tag '{tag}' not in lexicon")));
                }
                if !tags.insert(tag.clone()) {
                    return Err(perr(at, format!("duplicate tag '{tag}'")));
                }
            }
            shots.push(Shot {
                feature: s.feature,
                tags,
            });
        }
        let seq = ShotSequence::new(v.id, shots, v.shot_seconds)
            .map_err(|e| perr(at, format!("bad video: {e}")))?;
        videos.push(seq);
    }

    let mut queries = Vec::with_capacity(header.queries);
    let mut oracles = Vec::with_capacity(header.queries);
    for _ in 0..header.queries {
        let (lineno, rec) = next("a query record", at)?;
        at = lineno;
        let Record::Query(q) = rec else {
            return Err(perr(at, "expected a query record".into()));
        };
        let Some(video) = videos.iter().find(|v| v.video_id == q.video) else {
            return Err(perr(at, format!("query references unknown video '{}'", q.video)));
        };
        let scenario =
            Scenario::parse(&q.scenario).map_err(|e| perr(at, e.to_string()))?;
        let spec = QuerySpec::new(&q.c1, &q.c2, scenario, &q.video, &lexicon)
            .map_err(|e| perr(at, format!("bad query: {e}")))?;
        for (k, &s) in q.oracle.iter().enumerate() {
            if s >= video.len() {
                return Err(perr(
                    at,
                    format!("oracle shot {s} outside video of {} shots", video.len()),
                ));
            }
            if k > 0 && q.oracle[k - 1] >= s {
                return Err(perr(at, "oracle indices must be strictly increasing".into()));
            }
        }
        queries.push(spec);
        oracles.push(q.oracle);
    }

    if let Some(extra) = lines.next() {
        let (lineno, _) = extra?;
        return Err(perr(lineno, "trailing record after declared counts".into()));
    }
    Ok(DatasetBundle {
        lexicon,
        videos,
        queries,
        oracles,
    })
}

/// Writes a bundle to disk in the line-delimited record format.
pub fn save_bundle(bundle: &DatasetBundle, path: &std::path::Path) -> Result<()> {
    let text = to_jsonl_string(bundle)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a bundle written by [`save_bundle`].
pub fn load_bundle(path: &std::path::Path) -> Result<DatasetBundle> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_jsonl_str(&text)
}

/// Parses an external embedding table: one concept per line, the name and
/// its 300 coordinates separated by tabs or spaces. Lines starting with
/// `#` and blank lines are skipped.
pub fn parse_embedding_table(text: &str) -> Result<ConceptLexicon> {
    let mut names = Vec::new();
    let mut embeddings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields.next().unwrap_or_default().to_string();
        let mut emb = Vec::with_capacity(EMBED_DIM);
        for field in fields {
            let x: f64 = field.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("invalid coordinate '{field}' for '{name}'"),
            })?;
            emb.push(x);
        }
        if emb.len() != EMBED_DIM {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!(
                    "'{name}' has {} coordinates, expected {EMBED_DIM}",
                    emb.len()
                ),
            });
        }
        names.push(name);
        embeddings.push(emb);
    }
    ConceptLexicon::new(names, embeddings)
}

/// Reads an embedding table file; see [`parse_embedding_table`].
pub fn load_embedding_table(path: &std::path::Path) -> Result<ConceptLexicon> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_embedding_table(&text)
}
