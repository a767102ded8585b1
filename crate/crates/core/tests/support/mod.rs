//! Shared test fixtures: random scenes on a millimetre lattice, random
//! programs, and a brute-force per-cell program evaluator written directly
//! from the constraint definitions in exact integer arithmetic.

#![allow(dead_code)]

use placeprog_core::dsl::{Constraint, ConstraintType, Direction, Node, PlacementProgram};
use placeprog_core::exec::{ExecConfig, QuerySpec};
use placeprog_core::geom::Orientation;
use placeprog_core::mask::{BitGrid, PlacementMask};
use placeprog_core::scene::{ObjectInstance, Scene, SceneConfig, SceneDocument};
use rand::seq::SliceRandom;
use rand::Rng;

pub const CATEGORIES: [&str; 5] = ["bed", "chair", "desk", "lamp", "wardrobe"];

fn mm(v: i64) -> f64 {
    v as f64 / 1000.0
}

/// A random rectilinear room (rectangle or L) on a grid of at most 32×32 cells,
/// with up to five objects centred on cells. All lengths are whole millimetres.
pub fn random_scene<R: Rng>(rng: &mut R) -> (Scene, QuerySpec) {
    let cell_mm = *[40i64, 50, 60, 70].choose(rng).unwrap();
    let gw = rng.gen_range(8..=32usize);
    let gh = rng.gen_range(8..=32usize);
    let rw = rng.gen_range(6..=gw as i64);
    let rh = rng.gen_range(6..=gh as i64);
    let origin = [2 * rng.gen_range(0..500i64), 2 * rng.gen_range(0..500i64)];
    let at = |cx: i64, cy: i64| [mm(origin[0] + cx * cell_mm), mm(origin[1] + cy * cell_mm)];
    let room = if rng.gen_bool(0.5) {
        vec![at(0, 0), at(rw, 0), at(rw, rh), at(0, rh)]
    } else {
        let cx = rng.gen_range(1..rw);
        let cy = rng.gen_range(1..rh);
        vec![at(0, 0), at(rw, 0), at(rw, cy), at(cx, cy), at(cx, rh), at(0, rh)]
    };
    let cfg = SceneConfig {
        grid_w: gw,
        grid_h: gh,
        cell: mm(cell_mm),
        max_side: 100.0,
        max_overlap: 1.0,
        ..SceneConfig::default()
    };
    let mut objects = Vec::new();
    let lattice_room: Vec<[i64; 2]> = room.iter().map(|p| [(p[0] * 1000.0).round() as i64, (p[1] * 1000.0).round() as i64]).collect();
    for k in 0..rng.gen_range(0..=5) {
        let (i, j) = loop {
            let (i, j) = (rng.gen_range(0..rw), rng.gen_range(0..rh));
            let c = [origin[0] + i * cell_mm + cell_mm / 2, origin[1] + j * cell_mm + cell_mm / 2];
            if inside(c, &lattice_room) {
                break (i, j);
            }
        };
        let category = CATEGORIES.choose(rng).unwrap().to_string();
        objects.push(ObjectInstance {
            id: format!("{category}_{k}"),
            category,
            size: [mm(2 * rng.gen_range(cell_mm / 4..3 * cell_mm)), mm(2 * rng.gen_range(cell_mm / 4..3 * cell_mm))],
            position: [
                mm(origin[0] + i * cell_mm + cell_mm / 2),
                mm(origin[1] + j * cell_mm + cell_mm / 2),
            ],
            orientation: Orientation::from_index(rng.gen_range(0..4)),
            holds_humans: rng.gen_bool(0.5),
            is_wall: false,
        });
    }
    let scene = Scene::from_document(
        SceneDocument {
            scene_type: "test".into(),
            room,
            objects,
        },
        &cfg,
    )
    .expect("lattice scene is valid");
    let query = QuerySpec {
        category: CATEGORIES.choose(rng).unwrap().to_string(),
        size: [mm(2 * rng.gen_range(cell_mm / 4..2 * cell_mm)), mm(2 * rng.gen_range(cell_mm / 4..2 * cell_mm))],
        holds_humans: rng.gen_bool(0.5),
    };
    (scene, query)
}

/// A random leaf over the scene's references; `reachable_by_arm` only targets
/// human-holding references when `valid_reach` is set.
pub fn random_leaf<R: Rng>(rng: &mut R, scene: &Scene, valid_reach: bool) -> Constraint {
    let refs: Vec<&ObjectInstance> = scene.all_objects().collect();
    let humans: Vec<&ObjectInstance> = refs.iter().copied().filter(|o| o.holds_humans).collect();
    loop {
        let ctype = *ConstraintType::ALL.choose(rng).unwrap();
        let pool = if ctype == ConstraintType::ReachableByArm && valid_reach { &humans } else { &refs };
        let Some(r) = pool.choose(rng) else { continue };
        let direction = if ctype.takes_direction() { *Direction::SIDES.choose(rng).unwrap() } else { Direction::Null };
        return Constraint::new(ctype, r.id.clone(), direction).expect("legal constraint");
    }
}

pub fn random_node<R: Rng>(rng: &mut R, depth: usize, leaf: &mut dyn FnMut(&mut R) -> Constraint) -> Node {
    if depth == 0 || rng.gen_bool(0.35) {
        return Node::Leaf(leaf(rng));
    }
    let a = random_node(rng, depth - 1, leaf);
    let b = random_node(rng, depth - 1, leaf);
    if rng.gen_bool(0.4) {
        Node::and(a, b)
    } else {
        Node::or(a, b)
    }
}

pub fn random_program_for<R: Rng>(rng: &mut R, scene: &Scene, depth: usize) -> PlacementProgram {
    PlacementProgram::new(random_node(rng, depth, &mut |r: &mut R| random_leaf(r, scene, true)))
}

/// A random program over arbitrary identifier-like references.
pub fn random_program<R: Rng>(rng: &mut R, depth: usize) -> PlacementProgram {
    PlacementProgram::new(random_node(rng, depth, &mut |r: &mut R| {
        let ctype = *ConstraintType::ALL.choose(r).unwrap();
        let reference = format!("{}_{}", ["wall", "bed", "desk", "tv_stand"].choose(r).unwrap(), r.gen_range(0..40));
        let direction = if ctype.takes_direction() { *Direction::SIDES.choose(r).unwrap() } else { Direction::Null };
        Constraint::new(ctype, reference, direction).unwrap()
    }))
}

pub fn random_bitgrid<R: Rng>(rng: &mut R, w: usize, h: usize, density: f64) -> BitGrid {
    BitGrid::from_fn(w, h, |_, _| rng.gen_bool(density))
}

// ---------------------------------------------------------------------------
// Brute-force evaluator. Every length is an integer number of millimetres.

#[derive(Clone, Copy, Debug)]
struct Box2 {
    min: [i64; 2],
    max: [i64; 2],
}

#[derive(Debug, PartialEq)]
pub enum OracleError {
    Unresolved(String),
    NotHuman(String),
}

fn to_mm(v: f64) -> i64 {
    let r = (v * 1000.0).round();
    assert!((v * 1000.0 - r).abs() < 1e-6, "{v} is not on the millimetre lattice");
    r as i64
}

fn half(size: [f64; 2], o: Orientation) -> [i64; 2] {
    let (w, d) = (to_mm(size[0]), to_mm(size[1]));
    assert!(w % 2 == 0 && d % 2 == 0, "sizes must be even millimetres");
    match o {
        Orientation::N | Orientation::S => [w / 2, d / 2],
        Orientation::E | Orientation::W => [d / 2, w / 2],
    }
}

fn boxed(center: [i64; 2], h: [i64; 2]) -> Box2 {
    Box2 {
        min: [center[0] - h[0], center[1] - h[1]],
        max: [center[0] + h[0], center[1] + h[1]],
    }
}

/// Even-odd test for a rectilinear polygon; only vertical edges cross a horizontal ray.
fn inside(p: [i64; 2], poly: &[[i64; 2]]) -> bool {
    let mut crossings = 0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        if a[0] == b[0] && (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

/// World direction of a reference-frame side.
fn side_world(facing: Orientation, d: Direction) -> Orientation {
    let turns = match d {
        Direction::Up => 0,
        Direction::Right => 1,
        Direction::Down => 2,
        Direction::Left => 3,
        Direction::Null => unreachable!(),
    };
    Orientation::from_index((facing.index() + turns) % 4)
}

/// Positive-length overlap of the two boxes across direction `d`.
fn across(q: Box2, r: Box2, d: Orientation) -> bool {
    let k = if matches!(d, Orientation::N | Orientation::S) { 0 } else { 1 };
    q.max[k].min(r.max[k]) > q.min[k].max(r.min[k])
}

/// Signed gap from the reference outward to the query along `d`.
fn gap(q: Box2, r: Box2, d: Orientation) -> i64 {
    match d {
        Orientation::N => q.min[1] - r.max[1],
        Orientation::S => r.min[1] - q.max[1],
        Orientation::E => q.min[0] - r.max[0],
        Orientation::W => r.min[0] - q.max[0],
    }
}

/// The reference extends beyond the query's front face along `d`.
fn ahead(q: Box2, r: Box2, d: Orientation) -> bool {
    match d {
        Orientation::N => r.max[1] > q.max[1],
        Orientation::S => r.min[1] < q.min[1],
        Orientation::E => r.max[0] > q.max[0],
        Orientation::W => r.min[0] < q.min[0],
    }
}

struct Ref {
    center: [i64; 2],
    half: [i64; 2],
    facing: Orientation,
    humans: bool,
}

pub struct Oracle {
    w: usize,
    h: usize,
    cell: i64,
    origin: [i64; 2],
    room: Vec<[i64; 2]>,
    refs: Vec<(String, Ref)>,
    furniture: Vec<Ref>,
    size: [f64; 2],
    attach: i64,
    reach: [i64; 2],
    /// Collision threshold as a fraction `num / den`.
    threshold: (i64, i64),
}

impl Oracle {
    pub fn new(scene: &Scene, query: &QuerySpec, cfg: &ExecConfig) -> Oracle {
        let as_ref = |o: &ObjectInstance| Ref {
            center: [to_mm(o.position[0]), to_mm(o.position[1])],
            half: half(o.size, o.orientation),
            facing: o.orientation,
            humans: o.holds_humans,
        };
        let den = 1000;
        Oracle {
            w: scene.grid.w,
            h: scene.grid.h,
            cell: to_mm(scene.grid.cell),
            origin: [to_mm(scene.grid.origin[0]), to_mm(scene.grid.origin[1])],
            room: scene.room.iter().map(|p| [to_mm(p[0]), to_mm(p[1])]).collect(),
            refs: scene.all_objects().map(|o| (o.id.clone(), as_ref(o))).collect(),
            furniture: scene.objects.iter().map(as_ref).collect(),
            size: query.size,
            attach: to_mm(cfg.attach_band),
            reach: [to_mm(cfg.reach_band[0]), to_mm(cfg.reach_band[1])],
            threshold: ((cfg.collision_threshold * den as f64).round() as i64, den),
        }
    }

    fn center(&self, i: usize, j: usize) -> [i64; 2] {
        assert!(self.cell % 2 == 0);
        [
            self.origin[0] + i as i64 * self.cell + self.cell / 2,
            self.origin[1] + j as i64 * self.cell + self.cell / 2,
        ]
    }

    /// Cells whose centers lie in `[c - h, c + h)` for a footprint centred on cell `(i, j)`.
    fn cells(&self, i: i64, j: i64, h: [i64; 2]) -> Vec<(i64, i64)> {
        let reach_x = h[0] / self.cell + 2;
        let reach_y = h[1] / self.cell + 2;
        let mut out = Vec::new();
        for b in j - reach_y..=j + reach_y {
            for a in i - reach_x..=i + reach_x {
                let (dx, dy) = ((a - i) * self.cell, (b - j) * self.cell);
                if -h[0] <= dx && dx < h[0] && -h[1] <= dy && dy < h[1] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn free(&self, i: usize, j: usize, o: Orientation) -> bool {
        let fp = self.cells(i as i64, j as i64, half(self.size, o));
        for &(a, b) in &fp {
            if a < 0 || b < 0 || a >= self.w as i64 || b >= self.h as i64 {
                return false;
            }
            if !inside(self.center(a as usize, b as usize), &self.room) {
                return false;
            }
        }
        for f in &self.furniture {
            let ci = (f.center[0] - self.origin[0]).div_euclid(self.cell);
            let cj = (f.center[1] - self.origin[1]).div_euclid(self.cell);
            let theirs = self.cells(ci, cj, f.half);
            let shared = fp.iter().filter(|c| theirs.contains(c)).count() as i64;
            if shared * self.threshold.1 > self.threshold.0 * fp.len() as i64 {
                return false;
            }
        }
        true
    }

    fn leaf(&self, c: &Constraint, i: usize, j: usize, o: Orientation) -> Result<bool, OracleError> {
        let r = self
            .refs
            .iter()
            .find(|(id, _)| *id == c.reference)
            .map(|(_, r)| r)
            .ok_or_else(|| OracleError::Unresolved(c.reference.clone()))?;
        let q = boxed(self.center(i, j), half(self.size, o));
        let rb = boxed(r.center, r.half);
        Ok(match c.ctype {
            ConstraintType::Align => o == r.facing,
            ConstraintType::Face => across(q, rb, o) && ahead(q, rb, o),
            ConstraintType::Attach => {
                let d = side_world(r.facing, c.direction);
                let g = gap(q, rb, d);
                across(q, rb, d) && -self.cell / 2 <= g && g <= self.attach
            }
            ConstraintType::ReachableByArm => {
                if !r.humans {
                    return Err(OracleError::NotHuman(c.reference.clone()));
                }
                let d = side_world(r.facing, c.direction);
                let g = gap(q, rb, d);
                across(q, rb, d) && self.reach[0] <= g && g <= self.reach[1]
            }
        })
    }

    fn node(&self, n: &Node, i: usize, j: usize, o: Orientation) -> Result<bool, OracleError> {
        Ok(match n {
            Node::Leaf(c) => self.leaf(c, i, j, o)?,
            Node::And(a, b) => {
                let (x, y) = (self.node(a, i, j, o)?, self.node(b, i, j, o)?);
                x && y
            }
            Node::Or(a, b) => {
                let (x, y) = (self.node(a, i, j, o)?, self.node(b, i, j, o)?);
                x || y
            }
        })
    }

    /// Program bits indexed `[orientation][y][x]`, collision filter included.
    pub fn execute(&self, p: &PlacementProgram) -> Result<Vec<bool>, OracleError> {
        let mut out = vec![false; 4 * self.w * self.h];
        for o in Orientation::ALL {
            for j in 0..self.h {
                for i in 0..self.w {
                    // Evaluate every cell so reference errors surface even on empty masks.
                    let hit = self.node(&p.root, i, j, o)?;
                    out[(o.index() * self.h + j) * self.w + i] = hit && self.free(i, j, o);
                }
            }
        }
        Ok(out)
    }
}

pub fn mask_bits(m: &PlacementMask) -> Vec<bool> {
    let (w, h) = (m.grid.w, m.grid.h);
    let mut out = vec![false; 4 * w * h];
    for o in Orientation::ALL {
        for j in 0..h {
            for i in 0..w {
                out[(o.index() * h + j) * w + i] = m.slice(o).get(i, j);
            }
        }
    }
    out
}
