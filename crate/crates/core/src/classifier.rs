//! Real/fake placement classifier: training-data generation, a logistic model
//! over placement features, and program scoring by mask sampling.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::PlacementProgram;
use crate::exec::{ExecContext, ExecError};
use crate::features::FeatureSchema;
use crate::mask::{MaskError, PlacementMask};
use crate::scene::{ObjectInstance, Scene};
use crate::seeds::rng_for;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("empty training data")]
    Empty,
    #[error("training data holds a single class")]
    SingleClass,
    #[error("model feature schema does not match: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Anything that maps a placed query object in a partial scene to P(real).
pub trait PlacementScorer: Sync {
    fn probability(&self, context: &Scene, query: &ObjectInstance) -> f64;
}

/// A query placement in a partial scene with a real/fake label.
#[derive(Clone, Debug)]
pub struct LabeledPlacement {
    pub scene: Scene,
    pub query: ObjectInstance,
    pub real: bool,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Translation distance range (m) for negatives.
    pub translation: [f64; 2],
    pub min_weight: f64,
    pub max_weight: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            translation: [0.25, 2.0],
            min_weight: 0.5,
            max_weight: 2.0,
        }
    }
}

fn snap_to_cell(scene: &Scene, p: [f64; 2]) -> Option<[f64; 2]> {
    scene.grid.cell_of(p).map(|c| scene.grid.cell_center(c))
}

fn inside_room(scene: &Scene, obj: &ObjectInstance) -> bool {
    let b = obj.aabb();
    let rb = scene.room_bbox();
    scene.contains_point(obj.position)
        && b.min[0] >= rb.min[0]
        && b.min[1] >= rb.min[1]
        && b.max[0] <= rb.max[0]
        && b.max[1] <= rb.max[1]
}

/// Move and/or rotate `query`; returns the perturbed object and its weight.
fn perturb<R: Rng + ?Sized>(scene: &Scene, query: &ObjectInstance, cfg: &PerturbationConfig, rng: &mut R) -> Option<(ObjectInstance, f64)> {
    for _ in 0..16 {
        let mode = rng.gen_range(0..3);
        let mut obj = query.clone();
        let mut moved = 0.0;
        let mut turns = 0;
        if mode != 1 {
            let d = rng.gen_range(cfg.translation[0]..=cfg.translation[1]);
            let a = rng.gen_range(0.0..2.0 * PI);
            let Some(p) = snap_to_cell(scene, [query.position[0] + d * a.cos(), query.position[1] + d * a.sin()]) else {
                continue;
            };
            obj.position = p;
            moved = ((p[0] - query.position[0]).powi(2) + (p[1] - query.position[1]).powi(2)).sqrt();
        }
        if mode != 0 {
            obj.orientation = query.orientation.rotate_cw(rng.gen_range(1..4));
            turns = query.orientation.quarter_turns_to(obj.orientation);
        }
        if (moved == 0.0 && turns == 0) || !inside_room(scene, &obj) {
            continue;
        }
        let w = (moved + 0.5 * turns as f64).clamp(cfg.min_weight, cfg.max_weight);
        return Some((obj, w));
    }
    None
}

/// One positive and (when a valid perturbation exists) one negative per draw.
///
/// Each draw keeps every object of a random scene with probability 1/2, picks a
/// surviving object as the query and uses the rest as context.
pub fn generate_training_pairs<R: Rng + ?Sized>(
    scenes: &[Scene],
    draws: usize,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<Vec<LabeledPlacement>, ClassifierError> {
    let usable: Vec<&Scene> = scenes.iter().filter(|s| !s.objects.is_empty()).collect();
    if usable.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let mut out = Vec::with_capacity(2 * draws);
    for _ in 0..draws {
        let scene = usable[rng.gen_range(0..usable.len())];
        let kept: Vec<&ObjectInstance> = scene.objects.iter().filter(|_| rng.gen_bool(0.5)).collect();
        let kept = if kept.is_empty() {
            vec![&scene.objects[rng.gen_range(0..scene.objects.len())]]
        } else {
            kept
        };
        let qi = rng.gen_range(0..kept.len());
        let mut query = kept[qi].clone();
        let Some(snapped) = snap_to_cell(scene, query.position) else {
            continue;
        };
        query.position = snapped;
        let mut context = scene.prefix(0);
        context.objects = kept.iter().enumerate().filter(|(i, _)| *i != qi).map(|(_, o)| (*o).clone()).collect();
        if let Some((fake, weight)) = perturb(&context, &query, cfg, rng) {
            out.push(LabeledPlacement {
                scene: context.clone(),
                query: fake,
                real: false,
                weight,
            });
        }
        out.push(LabeledPlacement {
            scene: context,
            query,
            real: true,
            weight: 1.0,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub draws: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub holdout_fraction: f64,
    /// Loss weight multipliers for (negative, positive) examples.
    pub class_weights: [f64; 2],
    pub threshold: f64,
    pub perturbation: PerturbationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            draws: 20_000,
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 128,
            l2: 1e-4,
            holdout_fraction: 0.2,
            class_weights: [1.0, 1.0],
            threshold: 0.6,
            perturbation: PerturbationConfig::default(),
        }
    }
}

/// Held-out metrics of a trained model at the configured threshold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_holdout: usize,
    pub accuracy: f64,
    /// False positives over all held-out negatives.
    pub fp_rate: f64,
    /// False negatives over all held-out positives.
    pub fn_rate: f64,
}

/// Logistic weights over a feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: f64 = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        sigmoid(z)
    }
}

/// Mini-batch Adam on weighted log-loss with L2. Deterministic in `seed`.
pub fn train_logistic(xs: &[Vec<f64>], ys: &[bool], weights: &[f64], cfg: &TrainConfig, seed: u64) -> Result<LogisticModel, ClassifierError> {
    if xs.is_empty() {
        return Err(ClassifierError::Empty);
    }
    if ys.iter().all(|y| *y) || ys.iter().all(|y| !*y) {
        return Err(ClassifierError::SingleClass);
    }
    let d = xs[0].len();
    let mut model = LogisticModel { weights: vec![0.0; d], bias: 0.0 };
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let mut t = 0;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = rng_for(seed, &[0x7261_696e]);
    let mut grad = vec![0.0; d + 1];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut total_w = 0.0;
            for &i in batch {
                let cw = cfg.class_weights[ys[i] as usize];
                let w = weights[i] * cw;
                let err = (model.predict(&xs[i]) - ys[i] as u8 as f64) * w;
                for (g, x) in grad[..d].iter_mut().zip(&xs[i]) {
                    *g += err * x;
                }
                grad[d] += err;
                total_w += w;
            }
            let norm = total_w.max(1e-12);
            t += 1;
            let lr = cfg.learning_rate * (1.0 - f64::powi(b2, t)).sqrt() / (1.0 - f64::powi(b1, t));
            for j in 0..=d {
                let reg = if j < d { cfg.l2 * model.weights[j] } else { 0.0 };
                let g = grad[j] / norm + reg;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let step = lr * m[j] / (v[j].sqrt() + eps);
                if j < d {
                    model.weights[j] -= step;
                } else {
                    model.bias -= step;
                }
            }
        }
    }
    Ok(model)
}

/// Accuracy and error rates of `probs` against `ys` at `threshold`.
pub fn binary_report(probs: &[f64], ys: &[bool], threshold: f64) -> TrainReport {
    let mut c = [[0usize; 2]; 2];
    for (p, y) in probs.iter().zip(ys) {
        c[*y as usize][(*p >= threshold) as usize] += 1;
    }
    let neg = (c[0][0] + c[0][1]).max(1);
    let pos = (c[1][0] + c[1][1]).max(1);
    TrainReport {
        n_train: 0,
        n_holdout: probs.len(),
        accuracy: (c[0][0] + c[1][1]) as f64 / probs.len().max(1) as f64,
        fp_rate: c[0][1] as f64 / neg as f64,
        fn_rate: c[1][0] as f64 / pos as f64,
    }
}

/// Placement classifier: a feature schema plus logistic weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub schema: FeatureSchema,
    pub model: LogisticModel,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_hash: String,
    vocabulary: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    config: TrainConfig,
}

impl ClassifierModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile {
            schema_hash: self.schema.hash(),
            vocabulary: self.schema.vocabulary.clone(),
            weights: self.model.weights.clone(),
            bias: self.model.bias,
            config: self.config.clone(),
        })
        .expect("model files always serialize")
    }

    pub fn from_json(text: &str) -> Result<ClassifierModel, ClassifierError> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| ClassifierError::Format(e.to_string()))?;
        let schema = FeatureSchema::new(f.vocabulary);
        if schema.hash() != f.schema_hash {
            return Err(ClassifierError::SchemaMismatch {
                expected: schema.hash(),
                found: f.schema_hash,
            });
        }
        if f.weights.len() != schema.dim() {
            return Err(ClassifierError::Format(format!(
                "{} weights for a {}-dimensional schema",
                f.weights.len(),
                schema.dim()
            )));
        }
        Ok(ClassifierModel {
            schema,
            model: LogisticModel { weights: f.weights, bias: f.bias },
            config: f.config,
        })
    }
}

impl PlacementScorer for ClassifierModel {
    fn probability(&self, context: &Scene, query: &ObjectInstance) -> f64 {
        self.model.predict(&self.schema.features(context, query))
    }
}

/// Train on labeled placements with a seeded holdout split.
pub fn train_classifier(
    pairs: &[LabeledPlacement],
    vocabulary: Vec<String>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ClassifierModel, TrainReport), ClassifierError> {
    if pairs.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let schema = FeatureSchema::new(vocabulary);
    let xs: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|p| schema.features(&p.scene, &p.query)).collect()
    };
    let ys: Vec<bool> = pairs.iter().map(|p| p.real).collect();
    let ws: Vec<f64> = pairs.iter().map(|p| p.weight).collect();
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[0x686f_6c64]));
    let n_hold = ((pairs.len() as f64) * cfg.holdout_fraction).round() as usize;
    let (hold, train) = idx.split_at(n_hold.min(pairs.len().saturating_sub(1)));
    let pick = |ids: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>, Vec<f64>) {
        (
            ids.iter().map(|&i| xs[i].clone()).collect(),
            ids.iter().map(|&i| ys[i]).collect(),
            ids.iter().map(|&i| ws[i]).collect(),
        )
    };
    let (tx, ty, tw) = pick(train);
    let model = train_logistic(&tx, &ty, &tw, cfg, seed)?;
    let (hx, hy, _) = pick(hold);
    let probs: Vec<f64> = hx.iter().map(|x| model.predict(x)).collect();
    let mut report = binary_report(&probs, &hy, cfg.threshold);
    report.n_train = train.len();
    Ok((
        ClassifierModel {
            schema,
            model,
            config: cfg.clone(),
        },
        report,
    ))
}

/// Mean scorer probability over `m_samples` placements drawn from `mask`.
pub fn score_mask<R: Rng + ?Sized>(
    mask: &PlacementMask,
    ctx: &ExecContext,
    scorer: &dyn PlacementScorer,
    m_samples: usize,
    rng: &mut R,
) -> Result<f64, ClassifierError> {
    let draws = mask.sample_with(m_samples.max(1), rng)?;
    let total: f64 = draws
        .iter()
        .map(|p| {
            let q = ctx.query.instantiate("query".to_string(), *p, ctx.grid());
            scorer.probability(&ctx.scene, &q)
        })
        .sum();
    Ok(total / draws.len() as f64)
}

/// Execute `p` and score its mask. Deterministic in `seed`.
pub fn score_program(
    p: &PlacementProgram,
    ctx: &ExecContext,
    scorer: &dyn PlacementScorer,
    m_samples: usize,
    seed: u64,
) -> Result<f64, ClassifierError> {
    let mask = ctx.execute(p)?;
    score_mask(&mask, ctx, scorer, m_samples, &mut rng_for(seed, &[]))
}

/// A scorer that ignores its input; useful as a baseline and in tests.
pub struct ConstantScorer(pub f64);

impl PlacementScorer for ConstantScorer {
    fn probability(&self, _: &Scene, _: &ObjectInstance) -> f64 {
        self.0
    }
}
