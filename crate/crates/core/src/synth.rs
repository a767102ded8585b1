//! Autoregressive scene synthesis and completion.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::Proposer;
use crate::classifier::{score_mask, ClassifierError, PlacementScorer};
use crate::dsl::PlacementProgram;
use crate::exec::{ExecConfig, ExecContext, ExecError, QuerySpec};
use crate::mask::MaskError;
use crate::scene::{ObjectInstance, Scene};
use crate::seeds::rng_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no training scenes")]
    NoTrainingData,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Next-category distribution conditioned on the current category counts,
/// with a stop symbol. Unseen count states back off to the object count.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryModel {
    pub vocabulary: Vec<String>,
    by_state: HashMap<Vec<usize>, Vec<usize>>,
    by_size: HashMap<usize, Vec<usize>>,
}

impl CategoryModel {
    pub fn fit(scenes: &[Scene]) -> Result<CategoryModel, SynthError> {
        if scenes.is_empty() {
            return Err(SynthError::NoTrainingData);
        }
        let mut vocabulary: Vec<String> = scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.category.clone())).collect();
        vocabulary.sort();
        vocabulary.dedup();
        let stop = vocabulary.len();
        let mut m = CategoryModel {
            vocabulary,
            by_state: HashMap::new(),
            by_size: HashMap::new(),
        };
        for s in scenes {
            let mut counts = vec![0; stop];
            for k in 0..=s.objects.len() {
                let next = match s.objects.get(k) {
                    Some(o) => m.index(&o.category).expect("category in vocabulary"),
                    None => stop,
                };
                m.by_state.entry(counts.clone()).or_insert_with(|| vec![0; stop + 1])[next] += 1;
                m.by_size.entry(k).or_insert_with(|| vec![0; stop + 1])[next] += 1;
                if next < stop {
                    counts[next] += 1;
                }
            }
        }
        Ok(m)
    }

    fn index(&self, category: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|c| c.as_str().cmp(category)).ok()
    }

    /// Sample the next category for `scene`, or `None` for stop.
    pub fn sample<R: Rng + ?Sized>(&self, scene: &Scene, rng: &mut R) -> Option<String> {
        let mut counts = vec![0; self.vocabulary.len()];
        for o in &scene.objects {
            if let Some(i) = self.index(&o.category) {
                counts[i] += 1;
            }
        }
        let table = self.by_state.get(&counts).or_else(|| self.by_size.get(&scene.objects.len()))?;
        let total: usize = table.iter().sum();
        let mut x = rng.gen_range(0..total);
        for (i, c) in table.iter().enumerate() {
            if x < *c {
                return self.vocabulary.get(i).cloned();
            }
            x -= c;
        }
        None
    }
}

/// Uniform choice among the sizes observed per category in training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DimensionSampler {
    sizes: HashMap<String, Vec<[f64; 2]>>,
    holds_humans: HashMap<String, bool>,
}

impl DimensionSampler {
    pub fn fit(scenes: &[Scene]) -> DimensionSampler {
        let mut d = DimensionSampler::default();
        for o in scenes.iter().flat_map(|s| &s.objects) {
            d.sizes.entry(o.category.clone()).or_default().push(o.size);
            d.holds_humans.insert(o.category.clone(), o.holds_humans);
        }
        d
    }

    pub fn sample<R: Rng + ?Sized>(&self, category: &str, rng: &mut R) -> Option<QuerySpec> {
        let sizes = self.sizes.get(category)?;
        Some(QuerySpec {
            category: category.to_string(),
            size: sizes[rng.gen_range(0..sizes.len())],
            holds_humans: self.holds_humans[category],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub max_objects: usize,
    /// Categories tried per step before giving up and stopping.
    pub category_retries: usize,
    pub proposals: usize,
    pub m_samples: usize,
    /// Largest pairwise overlap, as a fraction of the smaller footprint, a placement may create.
    pub max_overlap: f64,
    /// Placements drawn from the chosen mask before the object is skipped.
    pub placement_draws: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_objects: 12,
            category_retries: 3,
            proposals: 8,
            m_samples: 10,
            max_overlap: 0.20,
            placement_draws: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub object: ObjectInstance,
    pub program: PlacementProgram,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Placed(PlacedObject),
    Stop,
}

pub struct Synthesizer<'a> {
    pub categories: CategoryModel,
    pub dimensions: DimensionSampler,
    pub proposer: &'a dyn Proposer,
    pub scorer: &'a dyn PlacementScorer,
    pub exec: ExecConfig,
    pub cfg: SynthesisConfig,
}

impl<'a> Synthesizer<'a> {
    /// Fit the samplers on training scenes.
    pub fn fit(
        train: &[Scene],
        proposer: &'a dyn Proposer,
        scorer: &'a dyn PlacementScorer,
        exec: ExecConfig,
        cfg: SynthesisConfig,
    ) -> Result<Synthesizer<'a>, SynthError> {
        Ok(Synthesizer {
            categories: CategoryModel::fit(train)?,
            dimensions: DimensionSampler::fit(train),
            proposer,
            scorer,
            exec,
            cfg,
        })
    }

    /// Best nonempty proposal for `query` by classifier score, with one sampled placement.
    fn place(&self, scene: &Scene, query: QuerySpec, rng: &mut dyn RngCore) -> Result<Option<PlacedObject>, SynthError> {
        let ctx = ExecContext::new(scene.clone(), query, self.exec.clone());
        let mut best: Option<(f64, PlacementProgram, crate::mask::PlacementMask)> = None;
        for p in self.proposer.propose(&ctx, None, self.cfg.proposals, rng) {
            let m = match ctx.execute(&p) {
                Ok(m) => m,
                Err(ExecError::ReferenceHoldsNoHumans(_)) | Err(ExecError::UnresolvedReference(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            if m.is_empty() {
                continue;
            }
            let s = score_mask(&m, &ctx, self.scorer, self.cfg.m_samples, rng)?;
            if best.as_ref().is_none_or(|(bs, bp, _)| s > *bs || (s == *bs && p.to_text() < bp.to_text())) {
                best = Some((s, p, m));
            }
        }
        let Some((score, program, mask)) = best else {
            return Ok(None);
        };
        let id = scene.next_id(&ctx.query.category);
        for draw in mask.sample_with(self.cfg.placement_draws.max(1), rng)? {
            let object = ctx.query.instantiate(id.clone(), draw, &scene.grid);
            let b = object.aabb();
            let clashes = scene.objects.iter().any(|o| {
                let a = o.aabb();
                a.intersection_area(&b) > self.cfg.max_overlap * a.area().min(b.area())
            });
            if !clashes {
                return Ok(Some(PlacedObject { object, program, score }));
            }
        }
        Ok(None)
    }

    /// Sample a category and place one object of it, or stop.
    pub fn step(&self, scene: &Scene, rng: &mut dyn RngCore) -> Result<(Scene, StepOutcome), SynthError> {
        if scene.objects.len() >= self.cfg.max_objects {
            return Ok((scene.clone(), StepOutcome::Stop));
        }
        for _ in 0..self.cfg.category_retries.max(1) {
            let Some(category) = self.categories.sample(scene, rng) else {
                return Ok((scene.clone(), StepOutcome::Stop));
            };
            let Some(query) = self.dimensions.sample(&category, rng) else {
                continue;
            };
            if let Some(placed) = self.place(scene, query, rng)? {
                let next = scene.with_object(placed.object.clone());
                return Ok((next, StepOutcome::Placed(placed)));
            }
        }
        Ok((scene.clone(), StepOutcome::Stop))
    }

    /// Extend `scene` until the category model stops or `max_objects` is reached.
    pub fn complete(&self, scene: &Scene, seed: u64) -> Result<(Scene, Vec<PlacedObject>), SynthError> {
        let mut rng = rng_for(seed, &[]);
        let mut cur = scene.clone();
        let mut placed = Vec::new();
        while cur.objects.len() < self.cfg.max_objects {
            let (next, outcome) = self.step(&cur, &mut rng)?;
            match outcome {
                StepOutcome::Placed(p) => placed.push(p),
                StepOutcome::Stop => break,
            }
            cur = next;
        }
        Ok((cur, placed))
    }

    /// Furnish an empty floor plan.
    pub fn synthesize(&self, floor_plan: &Scene, seed: u64) -> Result<(Scene, Vec<PlacedObject>), SynthError> {
        self.complete(&floor_plan.prefix(0), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::NullProposer;
    use crate::classifier::ConstantScorer;
    use crate::geom::Orientation;
    use crate::scene::SceneConfig;

    fn scene(categories: &[&str]) -> Scene {
        let mut s = Scene::empty("bedroom", vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]], &SceneConfig::default()).unwrap();
        for (i, c) in categories.iter().enumerate() {
            s.objects.push(ObjectInstance {
                id: format!("{c}_{i}"),
                category: c.to_string(),
                size: [0.5, 0.5],
                position: [0.5 + i as f64, 1.0],
                orientation: Orientation::N,
                holds_humans: false,
                is_wall: false,
            });
        }
        s
    }

    #[test]
    fn category_model_follows_training_order() {
        let m = CategoryModel::fit(&[scene(&["bed", "desk"])]).unwrap();
        let mut rng = rng_for(0, &[]);
        assert_eq!(m.sample(&scene(&[]), &mut rng).as_deref(), Some("bed"));
        assert_eq!(m.sample(&scene(&["bed"]), &mut rng).as_deref(), Some("desk"));
        assert_eq!(m.sample(&scene(&["bed", "desk"]), &mut rng), None);
        // Unseen state backs off to the object count.
        assert_eq!(m.sample(&scene(&["desk"]), &mut rng).as_deref(), Some("desk"));
    }

    #[test]
    fn zero_max_objects_returns_input() {
        let train = [scene(&["bed"])];
        let cfg = SynthesisConfig { max_objects: 0, ..SynthesisConfig::default() };
        let s = Synthesizer::fit(&train, &NullProposer, &ConstantScorer(1.0), ExecConfig::default(), cfg).unwrap();
        let input = scene(&[]);
        assert_eq!(s.synthesize(&input, 3).unwrap().0, input);
    }

    #[test]
    fn no_proposals_means_stop() {
        let train = [scene(&["bed"])];
        let s = Synthesizer::fit(&train, &NullProposer, &ConstantScorer(1.0), ExecConfig::default(), SynthesisConfig::default()).unwrap();
        let input = scene(&[]);
        let (out, outcome) = s.step(&input, &mut rng_for(1, &[])).unwrap();
        assert_eq!(outcome, StepOutcome::Stop);
        assert_eq!(out, input);
    }
}
