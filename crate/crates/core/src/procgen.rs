//! Procedural scene grammar that yields scenes with ground-truth placement
//! masks and programs for every object.
//!
//! Rule programs are templates: `$wall` stands for "any wall" and expands to an
//! `or` over all walls; `@category` refers to the first placed object of that
//! category. A rule whose `@` reference is missing is skipped.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{or_join, DslError, PlacementProgram};
use crate::exec::{ExecConfig, ExecContext, ExecError, QuerySpec};
use crate::mask::PlacementMask;
use crate::scene::{Scene, SceneConfig, SceneError};
use crate::seeds::rng_for;

pub const DEFAULT_BEDROOM_GRAMMAR: &str = include_str!("../grammars/bedroom.json");

const ANY_WALL: &str = "$wall";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcgenError {
    #[error("invalid grammar: {0}")]
    Grammar(String),
    #[error("retry budget exhausted after {0} scene attempts")]
    RetryBudgetExhausted(usize),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarRule {
    pub category: String,
    pub holds_humans: bool,
    /// Inclusive instance-count range.
    pub count: [usize; 2],
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub program: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grammar {
    pub scene_type: String,
    /// Range of each side of the rectangular room, in meters.
    pub room_side: [f64; 2],
    pub rules: Vec<GrammarRule>,
    #[serde(default = "default_object_retries")]
    pub object_retries: usize,
    #[serde(default = "default_scene_retries")]
    pub scene_retries: usize,
}

fn default_object_retries() -> usize {
    20
}

fn default_scene_retries() -> usize {
    50
}

impl Grammar {
    pub fn default_bedroom() -> Grammar {
        Grammar::from_json(DEFAULT_BEDROOM_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn from_json(text: &str) -> Result<Grammar, ProcgenError> {
        let g: Grammar = serde_json::from_str(text).map_err(|e| ProcgenError::Grammar(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ProcgenError> {
        let bad = |m: String| Err(ProcgenError::Grammar(m));
        if !(self.room_side[0] > 0.0 && self.room_side[0] <= self.room_side[1]) {
            return bad("room_side must be a positive, ordered range".into());
        }
        for (i, r) in self.rules.iter().enumerate() {
            if r.count[0] > r.count[1] {
                return bad(format!("rule {}: count range is reversed", r.category));
            }
            for range in [r.width, r.depth] {
                if !(range[0] > 0.0 && range[0] <= range[1]) {
                    return bad(format!("rule {}: size ranges must be positive and ordered", r.category));
                }
            }
            let p = PlacementProgram::parse(&r.program)?;
            for reference in p.references() {
                if let Some(cat) = reference.strip_prefix('@') {
                    if !self.rules[..i].iter().any(|e| e.category == cat) {
                        return bad(format!("rule {} refers to @{cat} before it is placed", r.category));
                    }
                } else if reference != ANY_WALL {
                    return bad(format!("rule {}: reference {reference} must be $wall or @category", r.category));
                }
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rules {
            if !out.contains(&r.category) {
                out.push(r.category.clone());
            }
        }
        out
    }

    /// Instantiate a rule template against the current scene, or `None` when an
    /// `@category` reference has no object yet.
    pub fn instantiate(&self, rule: &GrammarRule, scene: &Scene) -> Result<Option<PlacementProgram>, ProcgenError> {
        let template = PlacementProgram::parse(&rule.program)?;
        let mut missing = false;
        let bound = template.map_references(|r| match r.strip_prefix('@') {
            Some(cat) => match scene.objects.iter().find(|o| o.category == cat) {
                Some(o) => o.id.clone(),
                None => {
                    missing = true;
                    r.to_string()
                }
            },
            None => r.to_string(),
        });
        if missing {
            return Ok(None);
        }
        if !bound.references().contains(&ANY_WALL) {
            return Ok(Some(bound));
        }
        let per_wall = scene
            .walls
            .iter()
            .map(|w| bound.map_references(|r| if r == ANY_WALL { w.id.clone() } else { r.to_string() }))
            .collect();
        Ok(Some(or_join(per_wall)?))
    }
}

/// Ground truth recorded for one generated object.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub object_id: String,
    pub program: PlacementProgram,
    /// Executed mask in the context of the objects placed before this one.
    pub mask: PlacementMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub truth: Vec<GroundTruth>,
}

fn uniform_cm<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    let v = rng.gen_range(range[0]..=range[1]);
    (v * 100.0).round() / 100.0
}

/// Sample one scene. Deterministic in `seed`.
pub fn generate_scene(
    grammar: &Grammar,
    seed: u64,
    scene_cfg: &SceneConfig,
    exec_cfg: &ExecConfig,
) -> Result<GeneratedScene, ProcgenError> {
    let mut rng = rng_for(seed, &[]);
    'attempt: for _ in 0..grammar.scene_retries {
        let w = uniform_cm(&mut rng, grammar.room_side);
        let h = uniform_cm(&mut rng, grammar.room_side);
        let mut scene = Scene::empty(&grammar.scene_type, vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]], scene_cfg)?;
        let mut truth = Vec::new();
        for rule in &grammar.rules {
            let n = rng.gen_range(rule.count[0]..=rule.count[1]);
            for placed in 0..n {
                let Some(program) = grammar.instantiate(rule, &scene)? else {
                    break;
                };
                let mut done = false;
                for _ in 0..grammar.object_retries {
                    let query = QuerySpec {
                        category: rule.category.clone(),
                        size: [uniform_cm(&mut rng, rule.width), uniform_cm(&mut rng, rule.depth)],
                        holds_humans: rule.holds_humans,
                    };
                    let ctx = ExecContext::new(scene.clone(), query, exec_cfg.clone());
                    let mask = ctx.execute(&program)?;
                    let Ok(draw) = mask.sample_with(1, &mut rng) else {
                        continue;
                    };
                    let obj = ctx.query.instantiate(scene.next_id(&rule.category), draw[0], &scene.grid);
                    let ob = obj.aabb();
                    let clashes = scene.objects.iter().any(|o| {
                        let b = o.aabb();
                        ob.intersection_area(&b) > exec_cfg.collision_threshold * ob.area().min(b.area())
                    });
                    if clashes {
                        continue;
                    }
                    truth.push(GroundTruth {
                        object_id: obj.id.clone(),
                        program: program.clone(),
                        mask,
                    });
                    scene.objects.push(obj);
                    done = true;
                    break;
                }
                if !done {
                    if placed < rule.count[0] {
                        continue 'attempt;
                    }
                    break;
                }
            }
        }
        let scene = Scene::from_document(scene.document(), scene_cfg)?;
        return Ok(GeneratedScene { scene, truth });
    }
    Err(ProcgenError::RetryBudgetExhausted(grammar.scene_retries))
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:05}")
}

/// `n` scenes generated in parallel; scene `i` depends only on `(seed, i)`.
pub fn generate_dataset(
    grammar: &Grammar,
    n: usize,
    seed: u64,
    scene_cfg: &SceneConfig,
    exec_cfg: &ExecConfig,
) -> Result<Vec<GeneratedScene>, ProcgenError> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(grammar, crate::seeds::derive_seed(seed, &[i as u64]), scene_cfg, exec_cfg))
        .collect()
}

/// One mask of the classifier evaluation set.
#[derive(Clone, Debug)]
pub struct LabeledMask {
    pub scene_index: usize,
    pub object_index: usize,
    pub program: PlacementProgram,
    pub mask: PlacementMask,
    pub positive: bool,
}

/// Ground-truth masks as positives; random constraint deletions of the
/// ground-truth program whose masks strictly contain the truth as negatives.
pub fn build_classifier_eval_set(
    scenes: &[GeneratedScene],
    negatives_per_object: usize,
    seed: u64,
    exec_cfg: &ExecConfig,
) -> Result<Vec<LabeledMask>, ProcgenError> {
    let per_scene: Vec<Result<Vec<LabeledMask>, ProcgenError>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, g)| {
            let mut out = Vec::new();
            for (k, t) in g.truth.iter().enumerate() {
                out.push(LabeledMask {
                    scene_index: si,
                    object_index: k,
                    program: t.program.clone(),
                    mask: t.mask.clone(),
                    positive: true,
                });
                let leaves = t.program.leaf_count();
                if leaves < 2 {
                    continue;
                }
                let ctx = ExecContext::for_object(&g.scene, k, exec_cfg);
                let mut rng = rng_for(seed, &[si as u64, k as u64]);
                let mut seen: Vec<String> = Vec::new();
                for _ in 0..negatives_per_object * 4 {
                    if seen.len() >= negatives_per_object {
                        break;
                    }
                    let relaxed = crate::dsl::relax(&t.program, &mut rng);
                    let text = relaxed.to_text();
                    if seen.contains(&text) {
                        continue;
                    }
                    let m = ctx.execute(&relaxed)?;
                    if t.mask.is_subset_of(&m) && m != t.mask {
                        seen.push(text);
                        out.push(LabeledMask {
                            scene_index: si,
                            object_index: k,
                            program: relaxed,
                            mask: m,
                            positive: false,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}
