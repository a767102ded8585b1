//! Evaluation protocols: location-distribution precision/recall/F1, category
//! KL divergence, real/fake scene classification, classifier consistency and
//! the training-data sparsity sweep.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{
    dataset_metrics, initial_dataset, mean_metrics, oracle_from_generated, predict_program, run_bootstrap, BootstrapConfig,
    BootstrapError, IterationInputs, Proposer, RetrievalProposer, SceneSet,
};
use crate::classifier::{score_mask, train_logistic, ClassifierError, PlacementScorer, TrainConfig};
use crate::exec::{ExecConfig, ExecContext, QuerySpec};
use crate::mask::{compare_masks, BitGrid, MaskError, MaskFile, MaskMetrics, PlacementMask};
use crate::procgen::{scene_id, GeneratedScene, LabeledMask};
use crate::scene::{Scene, SceneConfig, SceneDocument, SceneError};
use crate::seeds::rng_for;

pub const KL_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("class imbalance {0}:{1} exceeds 10:1")]
    Imbalance(usize, usize),
    #[error("fraction {0} selects no training scenes")]
    ZeroScenes(f64),
    #[error("malformed case file: {0}")]
    Format(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseProvenance {
    Human,
    Oracle,
}

/// A partial scene, the object to place, and the set of valid placements.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub id: String,
    pub scene: Scene,
    pub query: QuerySpec,
    pub truth: PlacementMask,
    pub provenance: CaseProvenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    id: String,
    scene: SceneDocument,
    query: QuerySpec,
    truth: MaskFile,
    provenance: CaseProvenance,
}

impl EvalCase {
    pub fn to_json(&self) -> String {
        let f = CaseFile {
            id: self.id.clone(),
            scene: self.scene.document(),
            query: self.query.clone(),
            truth: self.truth.to_file(),
            provenance: self.provenance,
        };
        serde_json::to_string(&f).expect("case serializes")
    }

    pub fn from_json(text: &str, cfg: &SceneConfig) -> Result<EvalCase, EvalError> {
        let f: CaseFile = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        let scene = Scene::from_document(f.scene, cfg)?;
        let truth = PlacementMask::from_file(&f.truth)?;
        if truth.grid != scene.grid {
            return Err(MaskError::GridMismatch("truth mask and scene grid differ".into()).into());
        }
        Ok(EvalCase {
            id: f.id,
            scene,
            query: f.query,
            truth,
            provenance: f.provenance,
        })
    }

    pub fn context(&self, exec: &ExecConfig) -> ExecContext {
        ExecContext::new(self.scene.clone(), self.query.clone(), exec.clone())
    }
}

/// `n` oracle cases: case `i` takes scene `i mod len` and a random object of it.
pub fn build_oracle_cases(scenes: &[GeneratedScene], n: usize, seed: u64) -> Vec<EvalCase> {
    let usable: Vec<&GeneratedScene> = scenes.iter().filter(|g| !g.truth.is_empty()).collect();
    if usable.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let g = usable[i % usable.len()];
            let k = rng_for(seed, &[i as u64]).gen_range(0..g.truth.len());
            EvalCase {
                id: format!("case_{i:04}"),
                scene: g.scene.prefix(k),
                query: QuerySpec::of(&g.scene.objects[k]),
                truth: g.truth[k].mask.clone(),
                provenance: CaseProvenance::Oracle,
            }
        })
        .collect()
}

/// Axis-aligned rectangle of valid centroid positions, `[x0, y0, x1, y1]` in meters.
pub type Rect = [f64; 4];

/// Human-drawn valid-placement rectangles for one case, per orientation (N, E, S, W).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    #[serde(default)]
    pub id: String,
    pub case_id: String,
    pub annotator: String,
    #[serde(default)]
    pub timestamp: String,
    pub rectangles: [Vec<Rect>; 4],
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("annotation has no rectangles")]
    Empty,
    #[error("rectangle {0:?} is degenerate or reversed")]
    Degenerate(Rect),
    #[error("rectangle {0:?} leaves the room")]
    OutsideRoom(Rect),
}

impl AnnotationRecord {
    /// Check every rectangle lies inside the room polygon.
    pub fn validate(&self, scene: &Scene) -> Result<(), AnnotationError> {
        if self.rectangles.iter().all(|r| r.is_empty()) {
            return Err(AnnotationError::Empty);
        }
        for r in self.rectangles.iter().flatten() {
            if !(r.iter().all(|v| v.is_finite()) && r[0] < r[2] && r[1] < r[3]) {
                return Err(AnnotationError::Degenerate(*r));
            }
            let b = crate::geom::Aabb { min: [r[0], r[1]], max: [r[2], r[3]] };
            let inside = crate::features::polygon_rect_intersection_area(&scene.room, &b);
            if inside < b.area() * (1.0 - 1e-9) - 1e-12 {
                return Err(AnnotationError::OutsideRoom(*r));
            }
        }
        Ok(())
    }

    /// Cells whose centers lie in a rectangle (closed), per orientation.
    pub fn to_mask(&self, grid: &crate::scene::GridSpec) -> PlacementMask {
        let mut m = PlacementMask::empty(grid);
        for o in crate::geom::Orientation::ALL {
            let slice = m.slice_mut(o);
            for r in &self.rectangles[o.index()] {
                for y in 0..grid.h {
                    let cy = grid.cell_center_y(y);
                    if cy < r[1] || cy > r[3] {
                        continue;
                    }
                    for x in 0..grid.w {
                        let cx = grid.cell_center_x(x);
                        if cx >= r[0] && cx <= r[2] {
                            slice.set(x, y, true);
                        }
                    }
                }
            }
        }
        m
    }
}

/// Cases whose truth is the union of their human annotations. Cases without annotations are left out.
pub fn human_cases(cases: &[EvalCase], records: &[AnnotationRecord]) -> Vec<EvalCase> {
    cases
        .iter()
        .filter_map(|c| {
            let mut truth: Option<PlacementMask> = None;
            for r in records.iter().filter(|r| r.case_id == c.id) {
                let m = r.to_mask(&c.scene.grid);
                truth = Some(match truth {
                    Some(t) => t.or(&m).expect("same grid"),
                    None => m,
                });
            }
            truth.map(|truth| EvalCase {
                truth,
                provenance: CaseProvenance::Human,
                ..c.clone()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MaskMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: Option<String>,
    pub dilation_radius: usize,
    /// Binarization threshold for scalar predictions.
    pub threshold: Option<f64>,
    pub cases: Vec<CaseResult>,
    pub mean: MaskMetrics,
}

impl EvalReport {
    fn new(tag: Option<String>, dilation_radius: usize, threshold: Option<f64>, cases: Vec<CaseResult>) -> EvalReport {
        let ms: Vec<MaskMetrics> = cases.iter().map(|c| c.metrics).collect();
        EvalReport {
            tag,
            dilation_radius,
            threshold,
            mean: mean_metrics(&ms),
            cases,
        }
    }
}

/// Compare each case's predicted mask (collapsed over orientations) against its truth.
pub fn eval_location_distribution<F>(cases: &[EvalCase], predict: F, dilation_radius: usize, tag: Option<String>) -> Result<EvalReport, EvalError>
where
    F: Fn(&EvalCase) -> Result<PlacementMask, EvalError> + Sync,
{
    if cases.is_empty() {
        return Err(EvalError::Empty("no evaluation cases"));
    }
    let results: Vec<Result<CaseResult, EvalError>> = cases
        .par_iter()
        .map(|c| {
            let pred = predict(c)?;
            let metrics = compare_masks(&pred.collapse(), &c.truth.collapse(), dilation_radius)?;
            Ok(CaseResult { id: c.id.clone(), metrics })
        })
        .collect();
    Ok(EvalReport::new(tag, dilation_radius, None, results.into_iter().collect::<Result<_, _>>()?))
}

/// A real-valued per-cell prediction with its truth, for threshold fitting.
pub struct ScalarCase<'a> {
    pub id: &'a str,
    pub scores: &'a [f64],
    pub truth: &'a BitGrid,
}

fn scalar_f1(cases: &[ScalarCase<'_>], threshold: f64, radius: usize) -> Result<Vec<CaseResult>, EvalError> {
    cases
        .iter()
        .map(|c| {
            let pred = BitGrid::from_fn(c.truth.width(), c.truth.height(), |x, y| c.scores[y * c.truth.width() + x] > threshold);
            Ok(CaseResult {
                id: c.id.to_string(),
                metrics: compare_masks(&pred, c.truth, radius)?,
            })
        })
        .collect()
}

/// Fit one threshold maximizing mean F1 on `fit`, then report on `eval`.
/// Candidate thresholds are up to 256 quantiles of the fit scores.
pub fn eval_scalar_location_distribution(
    fit: &[ScalarCase<'_>],
    eval: &[ScalarCase<'_>],
    dilation_radius: usize,
    tag: Option<String>,
) -> Result<EvalReport, EvalError> {
    if fit.is_empty() || eval.is_empty() {
        return Err(EvalError::Empty("scalar fit or eval split"));
    }
    for c in fit.iter().chain(eval) {
        if c.scores.len() != c.truth.width() * c.truth.height() {
            return Err(MaskError::GridMismatch(format!("case {}: score grid size", c.id)).into());
        }
    }
    let mut all: Vec<f64> = fit.iter().flat_map(|c| c.scores.iter().copied()).filter(|s| s.is_finite()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    if all.is_empty() {
        return Err(MaskError::EmptyScores.into());
    }
    let step = (all.len() / 256).max(1);
    let mut best = (f64::NEG_INFINITY, all[0]);
    for t in all.iter().step_by(step) {
        let f1 = mean_metrics(&scalar_f1(fit, *t, dilation_radius)?.iter().map(|c| c.metrics).collect::<Vec<_>>()).f1;
        if f1 > best.0 {
            best = (f1, *t);
        }
    }
    let results = scalar_f1(eval, best.1, dilation_radius)?;
    Ok(EvalReport::new(tag, dilation_radius, Some(best.1), results))
}

/// Predict a case's mask from a proposer and scorer; an empty mask if nothing is proposed.
pub fn predict_case(
    case: &EvalCase,
    proposer: &dyn Proposer,
    scorer: &dyn PlacementScorer,
    cfg: &BootstrapConfig,
    exec: &ExecConfig,
    seed: u64,
) -> Result<PlacementMask, EvalError> {
    let ctx = case.context(exec);
    let id_hash = case.id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut rng = rng_for(seed, &[id_hash]);
    Ok(predict_program(&ctx, proposer, scorer, cfg, &mut rng)?
        .map(|c| c.mask)
        .unwrap_or_else(|| PlacementMask::empty(&case.scene.grid)))
}

// ---------------------------------------------------------------------------

fn category_counts(scenes: &[Scene]) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for s in scenes {
        for o in &s.objects {
            *out.entry(o.category.as_str()).or_default() += 1;
        }
    }
    out
}

/// KL(reference ‖ generated) between category frequency distributions, with
/// `KL_EPSILON` added to every frequency before renormalizing.
pub fn category_kl(generated: &[Scene], reference: &[Scene]) -> Result<f64, EvalError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(EvalError::Empty("scene set"));
    }
    let g = category_counts(generated);
    let r = category_counts(reference);
    let mut cats: Vec<&str> = g.keys().chain(r.keys()).copied().collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.is_empty() {
        return Ok(0.0);
    }
    let dist = |counts: &BTreeMap<&str, usize>| -> Vec<f64> {
        let total: usize = counts.values().sum();
        let raw: Vec<f64> = cats
            .iter()
            .map(|c| if total == 0 { 0.0 } else { *counts.get(c).unwrap_or(&0) as f64 / total as f64 })
            .collect();
        let z: f64 = raw.iter().map(|p| p + KL_EPSILON).sum();
        raw.iter().map(|p| (p + KL_EPSILON) / z).collect()
    };
    let (p, q) = (dist(&r), dist(&g));
    Ok(p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>().max(0.0))
}

const ADJACENCY_BINS: [f64; 3] = [0.15, 0.6, 1.5];

/// Scene-level descriptor: category counts, occupancy statistics and a
/// histogram of pairwise object gaps.
pub fn scene_features(scene: &Scene, vocabulary: &[String]) -> Vec<f64> {
    let mut f: Vec<f64> = vocabulary
        .iter()
        .map(|c| scene.objects.iter().filter(|o| &o.category == c).count() as f64)
        .collect();
    let bb = scene.room_bbox();
    let (w, h) = (bb.max[0] - bb.min[0], bb.max[1] - bb.min[1]);
    let room_area = crate::geom::signed_area(&scene.room).abs().max(1e-9);
    let n = scene.objects.len();
    f.push(n as f64);
    f.push(scene.objects.iter().map(|o| o.area()).sum::<f64>() / room_area);
    f.push(w.min(h) / w.max(h).max(1e-9));
    f.push(room_area);
    let touching_wall = scene
        .objects
        .iter()
        .filter(|o| scene.walls.iter().any(|wall| wall.aabb().distance(&o.aabb()) <= ADJACENCY_BINS[0]))
        .count();
    f.push(if n == 0 { 0.0 } else { touching_wall as f64 / n as f64 });
    let mut hist = [0.0; ADJACENCY_BINS.len() + 1];
    let mut pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = scene.objects[i].aabb().distance(&scene.objects[j].aabb());
            hist[ADJACENCY_BINS.iter().position(|e| d <= *e).unwrap_or(ADJACENCY_BINS.len())] += 1.0;
            pairs += 1;
        }
    }
    f.extend(hist.iter().map(|c| if pairs == 0 { 0.0 } else { c / pairs as f64 }));
    f
}

/// Held-out accuracy (percent) of a real/fake logistic classifier over scene features.
/// Each set is split in half by a seeded permutation that depends only on its size.
pub fn scene_classifier_accuracy(generated: &[Scene], real: &[Scene], seed: u64) -> Result<f64, EvalError> {
    let (a, b) = (generated.len(), real.len());
    if a < 2 || b < 2 {
        return Err(EvalError::Empty("scene classifier needs two scenes per class"));
    }
    if a.max(b) > 10 * a.min(b) {
        return Err(EvalError::Imbalance(a, b));
    }
    let mut vocab: Vec<String> = generated.iter().chain(real).flat_map(|s| s.objects.iter().map(|o| o.category.clone())).collect();
    vocab.sort();
    vocab.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (set, label) in [(generated, false), (real, true)] {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng_for(seed, &[set.len() as u64]));
        let half = set.len() / 2;
        for (rank, &i) in order.iter().enumerate() {
            let item = (scene_features(&set[i], &vocab), label);
            if rank < half {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    let d = train[0].0.len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for (x, _) in &train {
        for j in 0..d {
            mean[j] += x[j] / train.len() as f64;
        }
    }
    for (x, _) in &train {
        for j in 0..d {
            sd[j] += (x[j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    let standardize = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mean[j]) / sd[j].sqrt().max(1e-9)).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| standardize(x)).collect();
    let ys: Vec<bool> = train.iter().map(|(_, y)| *y).collect();
    // Balance the classes in the loss.
    let n_real = ys.iter().filter(|y| **y).count() as f64;
    let n_fake = ys.len() as f64 - n_real;
    let weights: Vec<f64> = ys.iter().map(|y| if *y { 0.5 / n_real } else { 0.5 / n_fake } * ys.len() as f64).collect();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.05,
        batch_size: 32,
        l2: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_logistic(&xs, &ys, &weights, &cfg, seed)?;
    let correct = test.iter().filter(|(x, y)| (model.predict(&standardize(x)) >= 0.5) == *y).count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub positives: usize,
    pub negatives: usize,
    /// Fraction of positive masks whose majority label over repeats is positive.
    pub p_cons: f64,
    pub n_cons: f64,
    /// Per-trial rates over all (mask, repeat) pairs.
    pub accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

/// Score every labeled mask `repeats` times with `m_samples` draws each.
pub fn classifier_consistency(
    scorer: &dyn PlacementScorer,
    scenes: &[Scene],
    set: &[LabeledMask],
    repeats: usize,
    m_samples: usize,
    threshold: f64,
    exec: &ExecConfig,
    seed: u64,
) -> Result<ConsistencyReport, EvalError> {
    if set.is_empty() {
        return Err(EvalError::Empty("classifier eval set"));
    }
    let repeats = repeats.max(1);
    let votes: Vec<Result<(bool, usize), EvalError>> = set
        .par_iter()
        .enumerate()
        .map(|(i, lm)| {
            let ctx = ExecContext::for_object(&scenes[lm.scene_index], lm.object_index, exec);
            let mut yes = 0;
            for r in 0..repeats {
                let s = score_mask(&lm.mask, &ctx, scorer, m_samples, &mut rng_for(seed, &[i as u64, r as u64]))?;
                yes += (s >= threshold) as usize;
            }
            Ok((lm.positive, yes))
        })
        .collect();
    let mut rep = ConsistencyReport::default();
    let (mut pc, mut nc, mut fp, mut fneg) = (0, 0, 0, 0);
    for v in votes {
        let (positive, yes) = v?;
        let majority = 2 * yes > repeats;
        if positive {
            rep.positives += 1;
            pc += majority as usize;
            fneg += repeats - yes;
        } else {
            rep.negatives += 1;
            nc += !majority as usize;
            fp += yes;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    rep.p_cons = ratio(pc, rep.positives);
    rep.n_cons = ratio(nc, rep.negatives);
    rep.fp_rate = ratio(fp, rep.negatives * repeats);
    rep.fn_rate = ratio(fneg, rep.positives * repeats);
    rep.accuracy = 1.0 - ratio(fp + fneg, set.len() * repeats);
    Ok(rep)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsityConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            fractions: vec![1.0, 0.5, 0.25, 0.1, 0.05],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub fraction: f64,
    pub seed: u64,
    pub scenes: usize,
    pub entries: usize,
    pub dataset: MaskMetrics,
    pub heldout: MaskMetrics,
}

/// Run extraction and bootstrapping on a seeded subset of `train` for every
/// (fraction, seed), then evaluate the resulting proposer on `cases`.
pub fn sparsity_sweep(
    train: &[GeneratedScene],
    cases: &[EvalCase],
    scorer: &dyn PlacementScorer,
    sweep: &SparsityConfig,
    boot: &BootstrapConfig,
    exec: &ExecConfig,
) -> Result<Vec<SparsityRow>, EvalError> {
    let mut rows = Vec::new();
    for &fraction in &sweep.fractions {
        let n = ((train.len() as f64) * fraction).round() as usize;
        if n == 0 || !(fraction > 0.0) {
            return Err(EvalError::ZeroScenes(fraction));
        }
        for &seed in &sweep.seeds {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng_for(seed, &[0x5ba7]));
            let mut chosen = order[..n.min(train.len())].to_vec();
            chosen.sort_unstable();
            let ids: Vec<String> = chosen.iter().map(|&i| scene_id(i)).collect();
            let scenes: SceneSet = ids.iter().cloned().zip(chosen.iter().map(|&i| train[i].scene.clone())).collect();
            let oracle = oracle_from_generated(ids.iter().map(String::as_str).zip(chosen.iter().map(|&i| &train[i])));
            let (initial, _) = initial_dataset(&scenes, exec)?;
            let inputs = IterationInputs {
                scenes: &scenes,
                scorer,
                exec,
                cfg: boot,
                oracle: None,
            };
            let mut proposer = RetrievalProposer::new();
            let ds = run_bootstrap(initial, &mut proposer, &inputs, seed)?;
            let dataset = mean_metrics(&dataset_metrics(&ds, &scenes, exec, &oracle, boot.dilation_radius)?);
            let report = eval_location_distribution(
                cases,
                |c| predict_case(c, &proposer, scorer, boot, exec, seed),
                boot.dilation_radius,
                None,
            )?;
            rows.push(SparsityRow {
                fraction,
                seed,
                scenes: n,
                entries: ds.entries.len(),
                dataset,
                heldout: report.mean,
            });
        }
    }
    Ok(rows)
}

pub fn sparsity_csv(rows: &[SparsityRow]) -> String {
    let mut out = String::from(
        "fraction,seed,scenes,entries,dataset_precision,dataset_recall,dataset_f1,heldout_precision,heldout_recall,heldout_f1\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.fraction,
            r.seed,
            r.scenes,
            r.entries,
            r.dataset.precision,
            r.dataset.recall,
            r.dataset.f1,
            r.heldout.precision,
            r.heldout.recall,
            r.heldout.f1
        ));
    }
    out
}

/// Mean held-out F1 per fraction, averaged over seeds, in input order.
pub fn mean_f1_by_fraction(rows: &[SparsityRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(f, _, _)| *f == r.fraction) {
            Some(e) => {
                e.1 += r.heldout.f1;
                e.2 += 1;
            }
            None => out.push((r.fraction, r.heldout.f1, 1)),
        }
    }
    out.into_iter().map(|(f, s, n)| (f, s / n as f64)).collect()
}
