//! Iterative program-dataset improvement: propose, relax, filter, split,
//! score, combine and refit the proposer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{score_mask, ClassifierError, PlacementScorer};
use crate::dsl::{and_join, or_join, relax, Constraint, ConstraintType, Direction, DslError, PlacementProgram};
use crate::exec::{ExecConfig, ExecContext, ExecError};
use crate::extract::extract_initial_program;
use crate::geom::Orientation;
use crate::mask::{compare_masks, BitGrid, MaskMetrics, PlacementMask};
use crate::procgen::GeneratedScene;
use crate::scene::{ObjectInstance, Scene};
use crate::seeds::rng_for;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("unknown scene {0}")]
    UnknownScene(String),
    #[error("unknown object {object} in scene {scene}")]
    UnknownObject { scene: String, object: String },
    #[error("duplicate dataset entry {scene}/{object}")]
    DuplicateEntry { scene: String, object: String },
    #[error("invalid bootstrap configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
}

/// Scenes by id.
pub type SceneSet = BTreeMap<String, Scene>;

/// Oracle masks by (scene id, object id).
pub type OracleMasks = HashMap<(String, String), PlacementMask>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Initial,
    Combined(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Initial => f.write_str("initial"),
            Provenance::Combined(k) => write!(f, "combined@{k}"),
        }
    }
}

impl Provenance {
    pub fn parse(s: &str) -> Option<Provenance> {
        if s == "initial" {
            return Some(Provenance::Initial);
        }
        s.strip_prefix("combined@")?.parse().ok().map(Provenance::Combined)
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Provenance::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad provenance {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub scene: String,
    pub object: String,
    pub program: PlacementProgram,
    pub provenance: Provenance,
}

/// Mean metrics of all dataset programs against oracle masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub iteration: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub entries: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgramDataset {
    pub iteration: usize,
    pub entries: Vec<DatasetEntry>,
    pub snapshots: Vec<MetricSnapshot>,
}

impl ProgramDataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<ProgramDataset, BootstrapError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.scene.as_str(), e.object.as_str())) {
                return Err(BootstrapError::DuplicateEntry {
                    scene: e.scene.clone(),
                    object: e.object.clone(),
                });
            }
        }
        Ok(ProgramDataset {
            iteration: 0,
            entries,
            snapshots: Vec::new(),
        })
    }

    /// Keep only entries whose scene id satisfies `keep`.
    pub fn filter_scenes(&self, keep: impl Fn(&str) -> bool) -> ProgramDataset {
        ProgramDataset {
            iteration: self.iteration,
            entries: self.entries.iter().filter(|e| keep(&e.scene)).cloned().collect(),
            snapshots: self.snapshots.clone(),
        }
    }
}

/// Execution context for a dataset entry: the objects placed before it.
pub fn entry_context(scenes: &SceneSet, scene: &str, object: &str, cfg: &ExecConfig) -> Result<ExecContext, BootstrapError> {
    let s = scenes.get(scene).ok_or_else(|| BootstrapError::UnknownScene(scene.to_string()))?;
    let k = s.object_index(object).ok_or_else(|| BootstrapError::UnknownObject {
        scene: scene.to_string(),
        object: object.to_string(),
    })?;
    Ok(ExecContext::for_object(s, k, cfg))
}

// ---------------------------------------------------------------------------
// Proposers

/// Source of candidate programs for a (partial scene, query) pair.
pub trait Proposer: Send + Sync {
    fn propose(&self, ctx: &ExecContext, exclude: Option<(&str, &str)>, k: usize, rng: &mut dyn RngCore) -> Vec<PlacementProgram>;
    fn retrain(&mut self, dataset: &ProgramDataset, scenes: &SceneSet);
}

/// Proposes nothing; bootstrapping then only relaxes the existing programs.
pub struct NullProposer;

impl Proposer for NullProposer {
    fn propose(&self, _: &ExecContext, _: Option<(&str, &str)>, _: usize, _: &mut dyn RngCore) -> Vec<PlacementProgram> {
        Vec::new()
    }

    fn retrain(&mut self, _: &ProgramDataset, _: &SceneSet) {}
}

struct RetrievalItem {
    scene: String,
    object: String,
    category: String,
    features: Vec<f64>,
    program: PlacementProgram,
    context: Scene,
}

/// Nearest-neighbour retrieval over (scene features, program) pairs, with
/// references remapped into the target scene.
#[derive(Default)]
pub struct RetrievalProposer {
    vocabulary: Vec<String>,
    items: Vec<RetrievalItem>,
}

fn normalized_position(scene: &Scene, p: [f64; 2]) -> [f64; 2] {
    let b = scene.room_bbox();
    [
        (p[0] - b.min[0]) / (b.max[0] - b.min[0]).max(1e-9),
        (p[1] - b.min[1]) / (b.max[1] - b.min[1]).max(1e-9),
    ]
}

impl RetrievalProposer {
    pub fn new() -> RetrievalProposer {
        RetrievalProposer::default()
    }

    fn features(&self, ctx: &ExecContext) -> Vec<f64> {
        let b = ctx.scene.room_bbox();
        let mut f = vec![
            (b.max[0] - b.min[0]) / 6.0,
            (b.max[1] - b.min[1]) / 6.0,
            ctx.query.size[0],
            ctx.query.size[1],
        ];
        for c in &self.vocabulary {
            f.push(ctx.scene.objects.iter().filter(|o| &o.category == c).count() as f64);
        }
        f
    }

    /// Same-category object in `target` closest in normalized room position,
    /// with a penalty for facing differently.
    fn remap(source: &ObjectInstance, from: &Scene, target: &Scene) -> Option<String> {
        let sp = normalized_position(from, source.position);
        target
            .all_objects()
            .filter(|o| o.category == source.category)
            .map(|o| {
                let tp = normalized_position(target, o.position);
                let d = ((sp[0] - tp[0]).powi(2) + (sp[1] - tp[1]).powi(2)).sqrt();
                let penalty = if o.orientation == source.orientation { 0.0 } else { 0.5 };
                (d + penalty, &o.id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
            .map(|(_, id)| id.clone())
    }
}

impl Proposer for RetrievalProposer {
    fn propose(&self, ctx: &ExecContext, exclude: Option<(&str, &str)>, k: usize, _: &mut dyn RngCore) -> Vec<PlacementProgram> {
        let f = self.features(ctx);
        let mut scored: Vec<(f64, &RetrievalItem)> = self
            .items
            .iter()
            .filter(|it| it.category == ctx.query.category)
            .filter(|it| exclude != Some((it.scene.as_str(), it.object.as_str())))
            .map(|it| {
                let d: f64 = it.features.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum();
                (d, it)
            })
            .collect();
        scored.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.scene.cmp(&b.1.scene))
                .then_with(|| a.1.object.cmp(&b.1.object))
        });
        let mut out = Vec::new();
        for (_, it) in scored.into_iter().take(k) {
            let mut mapping = HashMap::new();
            let mut ok = true;
            for r in it.program.references() {
                match it.context.find(r).and_then(|src| RetrievalProposer::remap(src, &it.context, &ctx.scene)) {
                    Some(t) => {
                        mapping.insert(r.to_string(), t);
                    }
                    None => ok = false,
                }
            }
            if ok {
                out.push(it.program.map_references(|r| mapping[r].clone()));
            }
        }
        out
    }

    fn retrain(&mut self, dataset: &ProgramDataset, scenes: &SceneSet) {
        let mut vocab: Vec<String> = scenes.values().flat_map(|s| s.objects.iter().map(|o| o.category.clone())).collect();
        vocab.sort();
        vocab.dedup();
        self.vocabulary = vocab;
        let cfg = ExecConfig::default();
        let items: Vec<RetrievalItem> = dataset
            .entries
            .iter()
            .filter_map(|e| {
                let ctx = entry_context(scenes, &e.scene, &e.object, &cfg).ok()?;
                Some(RetrievalItem {
                    scene: e.scene.clone(),
                    object: e.object.clone(),
                    category: ctx.query.category.clone(),
                    features: self.features(&ctx),
                    program: e.program.clone(),
                    context: ctx.scene,
                })
            })
            .collect();
        self.items = items;
    }
}

/// Samples `and` trees whose leaf types, sides and sizes follow the dataset's
/// empirical frequencies; references are drawn uniformly from the context.
#[derive(Default)]
pub struct PriorSampler {
    leaf_kinds: Vec<((ConstraintType, Direction), usize)>,
    leaf_counts: Vec<(usize, usize)>,
}

fn weighted<'a, T, R: Rng + ?Sized>(items: &'a [(T, usize)], rng: &mut R) -> Option<&'a T> {
    let total: usize = items.iter().map(|(_, w)| *w).sum();
    if total == 0 {
        return None;
    }
    let mut x = rng.gen_range(0..total);
    for (t, w) in items {
        if x < *w {
            return Some(t);
        }
        x -= w;
    }
    None
}

impl Proposer for PriorSampler {
    fn propose(&self, ctx: &ExecContext, _: Option<(&str, &str)>, k: usize, rng: &mut dyn RngCore) -> Vec<PlacementProgram> {
        let refs: Vec<&ObjectInstance> = ctx.scene.all_objects().collect();
        let mut out = Vec::new();
        for _ in 0..k {
            let Some(&n) = weighted(&self.leaf_counts, rng) else {
                break;
            };
            let mut leaves = Vec::new();
            for _ in 0..n {
                let Some(&(ctype, dir)) = weighted(&self.leaf_kinds, rng) else {
                    break;
                };
                let eligible: Vec<&&ObjectInstance> = refs
                    .iter()
                    .filter(|r| ctype != ConstraintType::ReachableByArm || r.holds_humans)
                    .collect();
                if eligible.is_empty() {
                    continue;
                }
                let r = eligible[rng.gen_range(0..eligible.len())];
                if let Ok(c) = Constraint::new(ctype, r.id.clone(), dir) {
                    leaves.push(c);
                }
            }
            if let Ok(p) = and_join(&leaves) {
                out.push(p);
            }
        }
        out
    }

    fn retrain(&mut self, dataset: &ProgramDataset, _: &SceneSet) {
        let mut kinds: BTreeMap<(ConstraintType, Direction), usize> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &dataset.entries {
            let leaves = e.program.leaves();
            *counts.entry(leaves.len()).or_default() += 1;
            for c in leaves {
                *kinds.entry((c.ctype, c.direction)).or_default() += 1;
            }
        }
        self.leaf_kinds = kinds.into_iter().collect();
        self.leaf_counts = counts.into_iter().collect();
    }
}

// ---------------------------------------------------------------------------
// Candidate pipeline

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Original,
    Proposed,
    Relaxed,
    Subtree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub program: PlacementProgram,
    pub mask: PlacementMask,
    pub score: f64,
    pub areas: [usize; 4],
    pub source: CandidateSource,
}

impl ScoredCandidate {
    /// The single orientation this candidate places into.
    pub fn orientation(&self) -> Option<Orientation> {
        let mut it = Orientation::ALL.into_iter().filter(|o| self.areas[o.index()] > 0);
        match (it.next(), it.next()) {
            (Some(o), None) => Some(o),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub subset_fraction: f64,
    pub n_relax: usize,
    /// Largest fraction of the free cells of a slice a candidate may cover.
    pub max_coverage: f64,
    pub m_samples: usize,
    pub threshold: f64,
    pub proposals: usize,
    pub dilation_radius: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 5,
            subset_fraction: 0.25,
            n_relax: 8,
            max_coverage: 0.5,
            m_samples: 10,
            threshold: 0.6,
            proposals: 8,
            dilation_radius: 2,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.subset_fraction) || !unit(self.max_coverage) || !unit(self.threshold) {
            return Err(BootstrapError::Config(
                "subset_fraction, max_coverage and threshold must lie in [0, 1]".into(),
            ));
        }
        if self.m_samples == 0 {
            return Err(BootstrapError::Config("m_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Proposals, the original, and `n_relax` random relaxations of each, deduplicated by text.
pub fn generate_candidates(
    original: &PlacementProgram,
    proposals: Vec<PlacementProgram>,
    n_relax: usize,
    rng: &mut dyn RngCore,
) -> Vec<(PlacementProgram, CandidateSource)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |p: PlacementProgram, s: CandidateSource, out: &mut Vec<_>| {
        if seen.insert(p.to_text()) {
            out.push((p, s));
        }
    };
    let mut sources = vec![(original.clone(), CandidateSource::Original)];
    sources.extend(proposals.into_iter().map(|p| (p, CandidateSource::Proposed)));
    for (p, s) in &sources {
        push(p.clone(), *s, &mut out);
    }
    for (p, _) in &sources {
        for _ in 0..n_relax {
            push(relax(p, rng), CandidateSource::Relaxed, &mut out);
        }
    }
    out
}

/// Drop empty programs, split multi-orientation programs into their
/// single-orientation subtrees, drop candidates covering more than
/// `max_coverage` of the free cells of their slice, and deduplicate by mask.
pub fn filter_and_split(
    candidates: Vec<(PlacementProgram, CandidateSource)>,
    ctx: &ExecContext,
    max_coverage: f64,
) -> Result<Vec<ScoredCandidate>, ExecError> {
    let free = ctx.free_mask();
    let mut single = Vec::new();
    for (p, source) in candidates {
        let m = match ctx.execute(&p) {
            Ok(m) => m,
            // Proposals may reference objects the context cannot satisfy; skip them.
            Err(ExecError::ReferenceHoldsNoHumans(_)) | Err(ExecError::UnresolvedReference(_)) => continue,
            Err(e) => return Err(e),
        };
        match m.orientations().len() {
            0 => {}
            1 => single.push((p, m, source)),
            _ => {
                for sub in p.enumerate_subtrees().into_iter().skip(1) {
                    let sm = ctx.execute(&sub)?;
                    if sm.orientations().len() == 1 {
                        single.push((sub, sm, CandidateSource::Subtree));
                    }
                }
            }
        }
    }
    let mut by_mask: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut out: Vec<ScoredCandidate> = Vec::new();
    for (p, m, source) in single {
        let o = m.orientations()[0];
        let free_cells = free.slice(o).count().max(1);
        if m.slice(o).count() as f64 > max_coverage * free_cells as f64 {
            continue;
        }
        let key = mask_key(&m);
        let cand = ScoredCandidate {
            areas: m.slice_counts(),
            program: p,
            mask: m,
            score: 0.0,
            source,
        };
        match by_mask.get(&key) {
            Some(&i) => {
                let cur = &out[i];
                let better = (cand.program.leaf_count(), cand.program.to_text()) < (cur.program.leaf_count(), cur.program.to_text());
                if better {
                    out[i] = cand;
                }
            }
            None => {
                by_mask.insert(key, out.len());
                out.push(cand);
            }
        }
    }
    Ok(out)
}

fn mask_key(m: &PlacementMask) -> Vec<u8> {
    let mut key = Vec::new();
    for s in m.slices() {
        for r in s.to_rle() {
            key.extend_from_slice(&r.to_le_bytes());
        }
        key.push(0xff);
    }
    key
}

/// Per orientation, keep the above-threshold candidate with the largest mask
/// (ties: higher score, then smaller text) and `or` the winners in N, E, S, W order.
pub fn combine(scored: &[ScoredCandidate], threshold: f64) -> Option<PlacementProgram> {
    let mut winners: Vec<PlacementProgram> = Vec::new();
    for o in Orientation::ALL {
        let best = scored
            .iter()
            .filter(|c| c.score >= threshold && c.orientation() == Some(o))
            .max_by(|a, b| {
                a.areas[o.index()]
                    .cmp(&b.areas[o.index()])
                    .then(a.score.total_cmp(&b.score))
                    .then_with(|| b.program.to_text().cmp(&a.program.to_text()))
            });
        if let Some(c) = best {
            winners.push(c.program.clone());
        }
    }
    or_join(winners).ok()
}

/// Everything one iteration needs besides the dataset.
pub struct IterationInputs<'a> {
    pub scenes: &'a SceneSet,
    pub scorer: &'a dyn PlacementScorer,
    pub exec: &'a ExecConfig,
    pub cfg: &'a BootstrapConfig,
    pub oracle: Option<&'a OracleMasks>,
}

fn improve_entry(
    entry: &DatasetEntry,
    proposer: &dyn Proposer,
    inputs: &IterationInputs<'_>,
    rng: &mut dyn RngCore,
) -> Result<Option<PlacementProgram>, BootstrapError> {
    let ctx = entry_context(inputs.scenes, &entry.scene, &entry.object, inputs.exec)?;
    let proposals = proposer.propose(&ctx, Some((&entry.scene, &entry.object)), inputs.cfg.proposals, rng);
    let candidates = generate_candidates(&entry.program, proposals, inputs.cfg.n_relax, rng);
    let mut split = filter_and_split(candidates, &ctx, inputs.cfg.max_coverage)?;
    for c in split.iter_mut() {
        c.score = score_mask(&c.mask, &ctx, inputs.scorer, inputs.cfg.m_samples, rng)?;
    }
    Ok(combine(&split, inputs.cfg.threshold))
}

/// One self-training iteration. On error the input dataset is returned untouched
/// to the caller (the new dataset is only built once every entry succeeded).
pub fn run_iteration(
    dataset: &ProgramDataset,
    proposer: &mut dyn Proposer,
    inputs: &IterationInputs<'_>,
    seed: u64,
) -> Result<ProgramDataset, BootstrapError> {
    inputs.cfg.validate()?;
    let next_iter = dataset.iteration + 1;
    let n = dataset.entries.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[dataset.iteration as u64]));
    let take = ((n as f64) * inputs.cfg.subset_fraction).round() as usize;
    let mut selected: Vec<usize> = order[..take.min(n)].to_vec();
    selected.sort_unstable();

    let shared: &dyn Proposer = proposer;
    let updates: Vec<Result<(usize, Option<PlacementProgram>), BootstrapError>> = selected
        .par_iter()
        .map(|&i| {
            let mut rng = rng_for(seed, &[dataset.iteration as u64, i as u64, 1]);
            improve_entry(&dataset.entries[i], shared, inputs, &mut rng).map(|p| (i, p))
        })
        .collect();

    let mut next = dataset.clone();
    for u in updates {
        let (i, program) = u?;
        if let Some(p) = program {
            next.entries[i].program = p;
            next.entries[i].provenance = Provenance::Combined(next_iter);
        }
    }
    next.iteration = next_iter;
    if let Some(oracle) = inputs.oracle {
        next.snapshots.push(snapshot(&next, inputs.scenes, inputs.exec, oracle, inputs.cfg.dilation_radius)?);
    }
    proposer.retrain(&next, inputs.scenes);
    Ok(next)
}

/// Per-entry metrics of dataset programs against oracle masks (collapsed, dilated).
pub fn dataset_metrics(
    dataset: &ProgramDataset,
    scenes: &SceneSet,
    exec: &ExecConfig,
    oracle: &OracleMasks,
    radius: usize,
) -> Result<Vec<MaskMetrics>, BootstrapError> {
    dataset
        .entries
        .par_iter()
        .filter_map(|e| oracle.get(&(e.scene.clone(), e.object.clone())).map(|t| (e, t)))
        .map(|(e, truth)| {
            let ctx = entry_context(scenes, &e.scene, &e.object, exec)?;
            let m = ctx.execute(&e.program)?;
            Ok(compare_masks(&m.collapse(), &truth.collapse(), radius).expect("same grid"))
        })
        .collect()
}

pub fn mean_metrics(ms: &[MaskMetrics]) -> MaskMetrics {
    let n = ms.len().max(1) as f64;
    MaskMetrics {
        precision: ms.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: ms.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: ms.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

pub fn snapshot(
    dataset: &ProgramDataset,
    scenes: &SceneSet,
    exec: &ExecConfig,
    oracle: &OracleMasks,
    radius: usize,
) -> Result<MetricSnapshot, BootstrapError> {
    let ms = dataset_metrics(dataset, scenes, exec, oracle, radius)?;
    let mean = mean_metrics(&ms);
    Ok(MetricSnapshot {
        iteration: dataset.iteration,
        precision: mean.precision,
        recall: mean.recall,
        f1: mean.f1,
        entries: ms.len(),
    })
}

/// Run `cfg.iterations` iterations, recording an initial snapshot when an oracle is given.
pub fn run_bootstrap(
    initial: ProgramDataset,
    proposer: &mut dyn Proposer,
    inputs: &IterationInputs<'_>,
    seed: u64,
) -> Result<ProgramDataset, BootstrapError> {
    let mut ds = initial;
    if let Some(oracle) = inputs.oracle {
        if ds.snapshots.is_empty() {
            let s = snapshot(&ds, inputs.scenes, inputs.exec, oracle, inputs.cfg.dilation_radius)?;
            ds.snapshots.push(s);
        }
    }
    proposer.retrain(&ds, inputs.scenes);
    for _ in 0..inputs.cfg.iterations {
        ds = run_iteration(&ds, proposer, inputs, seed)?;
    }
    Ok(ds)
}

/// An object that extraction could not explain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub scene: String,
    pub object: String,
    pub reason: String,
}

/// Extract the initial, most restrictive program for every object of every scene.
/// Objects that extraction cannot explain are reported and left out.
pub fn initial_dataset(scenes: &SceneSet, exec: &ExecConfig) -> Result<(ProgramDataset, Vec<ExtractionFailure>), BootstrapError> {
    let jobs: Vec<(&String, &Scene, &ObjectInstance)> = scenes
        .iter()
        .flat_map(|(id, s)| s.objects.iter().map(move |o| (id, s, o)))
        .collect();
    let results: Vec<Result<DatasetEntry, ExtractionFailure>> = jobs
        .par_iter()
        .map(|(id, s, o)| match extract_initial_program(s, &o.id, exec) {
            Ok(x) => Ok(DatasetEntry {
                scene: (*id).clone(),
                object: o.id.clone(),
                program: x.program,
                provenance: Provenance::Initial,
            }),
            Err(e) => Err(ExtractionFailure {
                scene: (*id).clone(),
                object: o.id.clone(),
                reason: e.to_string(),
            }),
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(f) => failures.push(f),
        }
    }
    Ok((ProgramDataset::new(entries)?, failures))
}

/// Ground-truth masks of generated scenes, keyed by the given scene ids.
pub fn oracle_from_generated<'a>(scenes: impl IntoIterator<Item = (&'a str, &'a GeneratedScene)>) -> OracleMasks {
    let mut out = OracleMasks::new();
    for (id, g) in scenes {
        for t in &g.truth {
            out.insert((id.to_string(), t.object_id.clone()), t.mask.clone());
        }
    }
    out
}

/// Predict a program for a query without a prior program: proposals and their
/// relaxations go through the same filter, score and combine steps as an
/// iteration. Without an above-threshold candidate the best-scoring one is used.
pub fn predict_program(
    ctx: &ExecContext,
    proposer: &dyn Proposer,
    scorer: &dyn PlacementScorer,
    cfg: &BootstrapConfig,
    rng: &mut dyn RngCore,
) -> Result<Option<ScoredCandidate>, BootstrapError> {
    let proposals = proposer.propose(ctx, None, cfg.proposals, rng);
    let Some(first) = proposals.first().cloned() else {
        return Ok(None);
    };
    let candidates = generate_candidates(&first, proposals, cfg.n_relax, rng);
    let mut split = filter_and_split(candidates, ctx, cfg.max_coverage)?;
    for c in split.iter_mut() {
        c.score = score_mask(&c.mask, ctx, scorer, cfg.m_samples, rng)?;
    }
    if let Some(program) = combine(&split, cfg.threshold) {
        let mask = ctx.execute(&program)?;
        let score = score_mask(&mask, ctx, scorer, cfg.m_samples, rng)?;
        return Ok(Some(ScoredCandidate {
            areas: mask.slice_counts(),
            program,
            mask,
            score,
            source: CandidateSource::Proposed,
        }));
    }
    Ok(split.into_iter().max_by(|a, b| a.score.total_cmp(&b.score).then_with(|| b.program.to_text().cmp(&a.program.to_text()))))
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    scene: String,
    object: String,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    iteration: usize,
    entries: Vec<ManifestEntry>,
    snapshots: Vec<MetricSnapshot>,
}

/// Write `programs/<scene>/<object>.prog` plus `manifest.json` under `dir`,
/// replacing any previous dataset only once the new one is fully written.
pub fn save_dataset(dataset: &ProgramDataset, dir: &Path) -> Result<(), BootstrapError> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("dataset");
    let staging = parent.join(format!(".{name}.staging"));
    let retired = parent.join(format!(".{name}.retired"));
    for p in [&staging, &retired] {
        if p.exists() {
            fs::remove_dir_all(p)?;
        }
    }
    for e in &dataset.entries {
        let d = staging.join("programs").join(&e.scene);
        fs::create_dir_all(&d)?;
        fs::write(d.join(format!("{}.prog", e.object)), format!("{}\n", e.program))?;
    }
    fs::create_dir_all(&staging)?;
    let manifest = Manifest {
        iteration: dataset.iteration,
        entries: dataset
            .entries
            .iter()
            .map(|e| ManifestEntry {
                scene: e.scene.clone(),
                object: e.object.clone(),
                provenance: e.provenance,
            })
            .collect(),
        snapshots: dataset.snapshots.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| BootstrapError::Format(e.to_string()))?;
    fs::write(staging.join("manifest.json"), text + "\n")?;
    if dir.exists() {
        fs::rename(dir, &retired)?;
    }
    fs::rename(&staging, dir)?;
    if retired.exists() {
        fs::remove_dir_all(&retired)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<ProgramDataset, BootstrapError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| BootstrapError::Format(e.to_string()))?;
    let mut entries = Vec::with_capacity(m.entries.len());
    for e in m.entries {
        let path: PathBuf = dir.join("programs").join(&e.scene).join(format!("{}.prog", e.object));
        let program = PlacementProgram::parse(fs::read_to_string(&path)?.trim())?;
        entries.push(DatasetEntry {
            scene: e.scene,
            object: e.object,
            program,
            provenance: e.provenance,
        });
    }
    let mut ds = ProgramDataset::new(entries)?;
    ds.iteration = m.iteration;
    ds.snapshots = m.snapshots;
    Ok(ds)
}

/// Collapsed oracle mask lookup, for callers that only need 2-D truth.
pub fn collapsed(oracle: &OracleMasks, scene: &str, object: &str) -> Option<BitGrid> {
    oracle.get(&(scene.to_string(), object.to_string())).map(|m| m.collapse())
}
