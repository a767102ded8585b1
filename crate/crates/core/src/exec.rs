//! Constraint and program evaluation to placement masks, plus the collision filter.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Constraint, ConstraintType, Node, PlacementProgram};
use crate::geom::{half_extents, Orientation, LENGTH_EPS};
use crate::mask::{BitGrid, Placement, PlacementMask};
use crate::scene::{footprint_offsets, object_cells, CellRect, GridSpec, ObjectInstance, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("unresolved reference {0}")]
    UnresolvedReference(String),
    #[error("reachable_by_arm reference {0} does not hold humans")]
    ReferenceHoldsNoHumans(String),
    #[error("invalid executor configuration: {0}")]
    Config(String),
    #[error("query object {0} not found in scene")]
    UnknownQuery(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    /// Largest tolerated overlap with an existing object, as a fraction of the query footprint.
    pub collision_threshold: f64,
    /// Maximum gap (m) for `attach`.
    pub attach_band: f64,
    /// Gap range (m) for `reachable_by_arm`.
    pub reach_band: [f64; 2],
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            collision_threshold: 0.10,
            attach_band: 0.15,
            reach_band: [0.15, 0.60],
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(0.0..=1.0).contains(&self.collision_threshold) {
            return Err(ExecError::Config("collision_threshold outside [0, 1]".into()));
        }
        if !(self.attach_band > 0.0) {
            return Err(ExecError::Config("attach_band must be positive".into()));
        }
        if self.reach_band[0] != self.attach_band || !(self.reach_band[1] > self.reach_band[0]) {
            return Err(ExecError::Config(
                "reach_band must start at attach_band and have positive width".into(),
            ));
        }
        Ok(())
    }
}

/// The object about to be placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub category: String,
    pub size: [f64; 2],
    pub holds_humans: bool,
}

impl QuerySpec {
    pub fn of(obj: &ObjectInstance) -> QuerySpec {
        QuerySpec {
            category: obj.category.clone(),
            size: obj.size,
            holds_humans: obj.holds_humans,
        }
    }

    /// An instance of the query placed at `p`.
    pub fn instantiate(&self, id: String, p: Placement, grid: &GridSpec) -> ObjectInstance {
        ObjectInstance {
            id,
            category: self.category.clone(),
            size: self.size,
            position: grid.cell_center(p.cell),
            orientation: p.orientation,
            holds_humans: self.holds_humans,
            is_wall: false,
        }
    }
}

/// A partial scene plus the query object: everything a program is evaluated against.
#[derive(Debug)]
pub struct ExecContext {
    pub scene: Scene,
    pub query: QuerySpec,
    pub cfg: ExecConfig,
    free: OnceLock<PlacementMask>,
}

impl Clone for ExecContext {
    fn clone(&self) -> Self {
        ExecContext {
            scene: self.scene.clone(),
            query: self.query.clone(),
            cfg: self.cfg.clone(),
            free: self.free.clone(),
        }
    }
}

/// Along-axis predicate used by distance and facing constraints.
#[derive(Clone, Copy, Debug)]
enum AlongTest {
    /// `lo <= gap <= hi`, gap measured from the reference outward along the axis.
    Gap { lo: f64, hi: f64 },
    /// The reference extends past the query's front face.
    Ahead,
}

#[derive(Clone, Copy, Debug)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn around(center: f64, half: f64) -> Interval {
        Interval {
            lo: center - half,
            hi: center + half,
        }
    }

    fn overlaps(self, other: Interval) -> bool {
        self.hi.min(other.hi) - self.lo.max(other.lo) > LENGTH_EPS
    }
}

impl AlongTest {
    /// `positive` is true when the tested direction points along +x / +y.
    fn holds(self, query: Interval, reference: Interval, positive: bool) -> bool {
        match self {
            AlongTest::Gap { lo, hi } => {
                let gap = if positive { query.lo - reference.hi } else { reference.lo - query.hi };
                lo - LENGTH_EPS <= gap && gap <= hi + LENGTH_EPS
            }
            AlongTest::Ahead => {
                if positive {
                    reference.hi > query.hi + LENGTH_EPS
                } else {
                    reference.lo < query.lo - LENGTH_EPS
                }
            }
        }
    }
}

fn axis_of(d: Orientation) -> usize {
    if d.is_north_south() {
        1
    } else {
        0
    }
}

fn is_positive(d: Orientation) -> bool {
    matches!(d, Orientation::N | Orientation::E)
}

impl ExecContext {
    pub fn new(scene: Scene, query: QuerySpec, cfg: ExecConfig) -> ExecContext {
        ExecContext {
            scene,
            query,
            cfg,
            free: OnceLock::new(),
        }
    }

    /// Context for re-placing `scene.objects[k]`: walls and the objects placed before it.
    pub fn for_object(scene: &Scene, k: usize, cfg: &ExecConfig) -> ExecContext {
        ExecContext::new(scene.prefix(k), QuerySpec::of(&scene.objects[k]), cfg.clone())
    }

    pub fn for_object_id(scene: &Scene, id: &str, cfg: &ExecConfig) -> Result<ExecContext, ExecError> {
        let k = scene.object_index(id).ok_or_else(|| ExecError::UnknownQuery(id.to_string()))?;
        Ok(ExecContext::for_object(scene, k, cfg))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.scene.grid
    }

    fn resolve(&self, id: &str) -> Result<&ObjectInstance, ExecError> {
        self.scene.find(id).ok_or_else(|| ExecError::UnresolvedReference(id.to_string()))
    }

    /// Reference object, its world test direction and the along-axis test for a constraint.
    fn leaf_geometry<'a>(&'a self, c: &Constraint) -> Result<(&'a ObjectInstance, Option<(Orientation, AlongTest)>), ExecError> {
        let r = self.resolve(&c.reference)?;
        let test = match c.ctype {
            ConstraintType::Align | ConstraintType::Face => None,
            ConstraintType::Attach => Some(AlongTest::Gap {
                lo: -self.grid().cell / 2.0,
                hi: self.cfg.attach_band,
            }),
            ConstraintType::ReachableByArm => {
                if !r.holds_humans {
                    return Err(ExecError::ReferenceHoldsNoHumans(r.id.clone()));
                }
                Some(AlongTest::Gap {
                    lo: self.cfg.reach_band[0],
                    hi: self.cfg.reach_band[1],
                })
            }
        };
        Ok((
            r,
            test.map(|t| (c.direction.world(r.orientation).expect("distance constraints carry a side"), t)),
        ))
    }

    /// Mask of one constraint, before collision filtering.
    pub fn eval_constraint(&self, c: &Constraint) -> Result<PlacementMask, ExecError> {
        let (r, side) = self.leaf_geometry(c)?;
        let grid = self.grid();
        let mut out = PlacementMask::empty(grid);
        match (c.ctype, side) {
            (ConstraintType::Align, _) => {
                *out.slice_mut(r.orientation) = BitGrid::full(grid.w, grid.h);
            }
            (ConstraintType::Face, _) => {
                for o in Orientation::ALL {
                    *out.slice_mut(o) = self.separable_slice(r, o, o, AlongTest::Ahead);
                }
            }
            (_, Some((dir, test))) => {
                for o in Orientation::ALL {
                    *out.slice_mut(o) = self.separable_slice(r, o, dir, test);
                }
            }
            (_, None) => unreachable!("distance constraints always have a side"),
        }
        Ok(out)
    }

    /// Slice for query orientation `o`: perpendicular overlap with the reference
    /// times the along-axis test in direction `dir`.
    fn separable_slice(&self, r: &ObjectInstance, o: Orientation, dir: Orientation, test: AlongTest) -> BitGrid {
        let grid = self.grid();
        let half = half_extents(self.query.size, o);
        let rb = r.aabb();
        let along = axis_of(dir);
        let perp = 1 - along;
        let positive = is_positive(dir);
        let ref_along = Interval { lo: rb.min[along], hi: rb.max[along] };
        let ref_perp = Interval { lo: rb.min[perp], hi: rb.max[perp] };
        let centers = |axis: usize| -> Vec<f64> {
            let n = if axis == 0 { grid.w } else { grid.h };
            (0..n)
                .map(|k| if axis == 0 { grid.cell_center_x(k) } else { grid.cell_center_y(k) })
                .collect()
        };
        let along_ok: Vec<bool> = centers(along)
            .into_iter()
            .map(|c| test.holds(Interval::around(c, half[along]), ref_along, positive))
            .collect();
        let perp_ok: Vec<bool> = centers(perp)
            .into_iter()
            .map(|c| Interval::around(c, half[perp]).overlaps(ref_perp))
            .collect();
        if along == 1 {
            BitGrid::outer(&perp_ok, &along_ok)
        } else {
            BitGrid::outer(&along_ok, &perp_ok)
        }
    }

    /// Whether a single constraint admits placement `p` (before collision filtering).
    pub fn constraint_holds_at(&self, c: &Constraint, p: Placement) -> Result<bool, ExecError> {
        let (r, side) = self.leaf_geometry(c)?;
        let (dir, test) = match (c.ctype, side) {
            (ConstraintType::Align, _) => return Ok(p.orientation == r.orientation),
            (ConstraintType::Face, _) => (p.orientation, AlongTest::Ahead),
            (_, Some(s)) => s,
            (_, None) => unreachable!("distance constraints always have a side"),
        };
        let grid = self.grid();
        let half = half_extents(self.query.size, p.orientation);
        let center = grid.cell_center(p.cell);
        let rb = r.aabb();
        let along = axis_of(dir);
        let perp = 1 - along;
        let q_along = Interval::around(center[along], half[along]);
        let q_perp = Interval::around(center[perp], half[perp]);
        Ok(q_perp.overlaps(Interval { lo: rb.min[perp], hi: rb.max[perp] })
            && test.holds(q_along, Interval { lo: rb.min[along], hi: rb.max[along] }, is_positive(dir)))
    }

    /// Combine leaf masks through the tree without collision filtering.
    pub fn execute_raw(&self, node: &Node) -> Result<PlacementMask, ExecError> {
        match node {
            Node::Leaf(c) => self.eval_constraint(c),
            Node::And(a, b) => {
                let mut m = self.execute_raw(a)?;
                if !m.is_empty() {
                    m.and_assign(&self.execute_raw(b)?);
                } else {
                    // Still resolve references on the right so errors do not depend on evaluation order.
                    self.execute_raw(b)?;
                }
                Ok(m)
            }
            Node::Or(a, b) => {
                let mut m = self.execute_raw(a)?;
                m.or_assign(&self.execute_raw(b)?);
                Ok(m)
            }
        }
    }

    /// Program mask with the collision filter applied once at the root.
    pub fn execute(&self, p: &PlacementProgram) -> Result<PlacementMask, ExecError> {
        let mut m = self.execute_raw(&p.root)?;
        m.and_assign(self.free_mask());
        Ok(m)
    }

    pub fn collision_filter(&self, m: &PlacementMask) -> PlacementMask {
        let mut out = m.clone();
        out.and_assign(self.free_mask());
        out
    }

    /// Placements whose footprint stays in the room and does not overlap
    /// existing furniture beyond the collision threshold.
    pub fn free_mask(&self) -> &PlacementMask {
        self.free.get_or_init(|| compute_free_mask(&self.scene, self.query.size, self.cfg.collision_threshold))
    }

    pub fn footprint(&self, p: Placement) -> CellRect {
        footprint_offsets(self.query.size, p.orientation, self.grid().cell).translate(p.cell.0 as i64, p.cell.1 as i64)
    }
}

/// Cells whose centers lie inside the room polygon.
pub fn room_cells(scene: &Scene) -> BitGrid {
    let g = &scene.grid;
    BitGrid::from_fn(g.w, g.h, |x, y| scene.contains_point([g.cell_center_x(x), g.cell_center_y(y)]))
}

/// Summed-area table over a bit grid, `(w + 1) × (h + 1)`.
pub struct SummedArea {
    w: usize,
    table: Vec<u32>,
}

impl SummedArea {
    pub fn new(bits: &BitGrid) -> SummedArea {
        let (w, h) = (bits.width(), bits.height());
        let mut table = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += bits.get(x, y) as u32;
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        SummedArea { w, table }
    }

    /// Number of set cells in the inclusive rectangle, which must lie inside the grid.
    pub fn sum(&self, r: &CellRect) -> u32 {
        if r.is_empty() {
            return 0;
        }
        let s = self.w + 1;
        let (x0, x1, y0, y1) = (r.x0 as usize, r.x1 as usize + 1, r.y0 as usize, r.y1 as usize + 1);
        self.table[y1 * s + x1] + self.table[y0 * s + x0] - self.table[y0 * s + x1] - self.table[y1 * s + x0]
    }
}

fn compute_free_mask(scene: &Scene, size: [f64; 2], threshold: f64) -> PlacementMask {
    let g = &scene.grid;
    let inside = SummedArea::new(&room_cells(scene));
    let obstacles: Vec<CellRect> = scene.objects.iter().map(|o| object_cells(o, g)).collect();
    let mut out = PlacementMask::empty(g);
    for o in Orientation::ALL {
        let offsets = footprint_offsets(size, o, g.cell);
        let limit = threshold * offsets.area() as f64;
        let slice = out.slice_mut(o);
        // Separable overlap lengths per obstacle along each axis.
        let spans: Vec<(Vec<i64>, Vec<i64>)> = obstacles
            .iter()
            .map(|b| {
                let ox = (0..g.w as i64)
                    .map(|i| (b.x1.min(offsets.x1 + i) - b.x0.max(offsets.x0 + i) + 1).max(0))
                    .collect();
                let oy = (0..g.h as i64)
                    .map(|j| (b.y1.min(offsets.y1 + j) - b.y0.max(offsets.y0 + j) + 1).max(0))
                    .collect();
                (ox, oy)
            })
            .collect();
        for j in 0..g.h {
            for i in 0..g.w {
                let rect = offsets.translate(i as i64, j as i64);
                if rect.is_empty() || !rect.inside(g) || inside.sum(&rect) as i64 != rect.area() {
                    continue;
                }
                let blocked = spans.iter().any(|(ox, oy)| (ox[i] * oy[j]) as f64 > limit);
                if !blocked {
                    slice.set(i, j, true);
                }
            }
        }
    }
    out
}

/// The cell and orientation of an existing object, if its centroid lies on the grid.
pub fn placement_of(obj: &ObjectInstance, grid: &GridSpec) -> Option<Placement> {
    grid.cell_of(obj.position).map(|cell| Placement {
        cell,
        orientation: obj.orientation,
    })
}

/// Execute `p` as the placement rule for `query_id` in `scene`.
pub fn execute_program(p: &PlacementProgram, ctx: &ExecContext) -> Result<PlacementMask, ExecError> {
    ctx.execute(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Direction};
    use crate::scene::{SceneConfig, SceneDocument};

    fn room(w: f64, h: f64) -> Scene {
        Scene::empty("bedroom", vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]], &SceneConfig::default()).unwrap()
    }

    fn query(size: [f64; 2]) -> QuerySpec {
        QuerySpec { category: "box".into(), size, holds_humans: false }
    }

    fn north_wall(s: &Scene) -> String {
        s.walls.iter().find(|w| w.orientation == Orientation::S).unwrap().id.clone()
    }

    #[test]
    fn align_fills_reference_slice() {
        let s = room(4.0, 4.0);
        let wall = north_wall(&s);
        let ctx = ExecContext::new(s, query([0.4, 0.4]), ExecConfig::default());
        let m = ctx.eval_constraint(&Constraint::align(&wall)).unwrap();
        assert_eq!(m.slice_counts(), [0, 0, 128 * 128, 0]);
    }

    #[test]
    fn attach_band_distance_from_wall_face() {
        let s = room(4.0, 4.0);
        let wall = north_wall(&s);
        let ctx = ExecContext::new(s, query([0.4, 0.4]), ExecConfig::default());
        let m = ctx.eval_constraint(&Constraint::attach(&wall, Direction::Up)).unwrap();
        let g = ctx.grid().clone();
        for (x, y) in m.slice(Orientation::N).iter_ones() {
            let dist = 4.0 - g.cell_center_y(y);
            assert!(dist >= 0.2 - g.cell / 2.0 - 1e-9 && dist <= 0.35 + 1e-9, "{x},{y}: {dist}");
        }
        assert!(!m.slice(Orientation::N).is_empty());
    }

    #[test]
    fn reach_requires_human_reference() {
        let doc = SceneDocument {
            scene_type: "bedroom".into(),
            room: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]],
            objects: vec![ObjectInstance {
                id: "desk_0".into(),
                category: "desk".into(),
                size: [1.0, 0.5],
                position: [2.0, 2.0],
                orientation: Orientation::N,
                holds_humans: false,
                is_wall: false,
            }],
        };
        let s = Scene::from_document(doc, &SceneConfig::default()).unwrap();
        let ctx = ExecContext::new(s, query([0.4, 0.4]), ExecConfig::default());
        let c = Constraint::reachable_by_arm("desk_0", Direction::Up);
        assert_eq!(ctx.eval_constraint(&c), Err(ExecError::ReferenceHoldsNoHumans("desk_0".into())));
        let missing = parse_program("align(bed_9)").unwrap();
        assert_eq!(ctx.execute(&missing), Err(ExecError::UnresolvedReference("bed_9".into())));
    }

    #[test]
    fn empty_room_filter_only_clears_boundary() {
        let s = room(3.0, 3.0);
        let ctx = ExecContext::new(s, query([0.5, 0.5]), ExecConfig::default());
        let free = ctx.free_mask();
        let g = ctx.grid();
        let c = g.cell_of([1.5, 1.5]).unwrap();
        for o in Orientation::ALL {
            assert!(free.slice(o).get(c.0, c.1));
            assert!(!free.slice(o).get(0, 0));
        }
    }

    #[test]
    fn separable_slices_match_point_predicate() {
        let s = room(3.1, 2.4);
        let wall = north_wall(&s);
        let ctx = ExecContext::new(s, query([0.7, 0.3]), ExecConfig::default());
        for c in [
            Constraint::attach(&wall, Direction::Up),
            Constraint::attach("wall_0", Direction::Up),
            Constraint::face(&wall),
            Constraint::align("wall_1"),
        ] {
            let m = ctx.eval_constraint(&c).unwrap();
            for o in Orientation::ALL {
                for y in (0..128).step_by(3) {
                    for x in (0..128).step_by(5) {
                        let p = Placement { cell: (x, y), orientation: o };
                        assert_eq!(m.get(p), ctx.constraint_holds_at(&c, p).unwrap(), "{c} {p:?}");
                    }
                }
            }
        }
    }
}
