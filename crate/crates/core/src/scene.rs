//! Scene data model: rooms, placed objects, derived walls and the placement grid.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, half_extents, Aabb, Orientation};

/// Largest cell size that still keeps a 15 cm attachment band two cells wide.
pub const MAX_CELL_SIZE: f64 = 0.075;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("room polygon needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("room polygon is not rectilinear: edge {0} is not axis-aligned")]
    NotRectilinear(usize),
    #[error("degenerate zero-length edge {0}")]
    DegenerateEdge(usize),
    #[error("room polygon is not simple: edges {0} and {1} intersect")]
    NotSimple(usize, usize),
    #[error("room bounding box side {0:.3} m exceeds maximum {1:.3} m")]
    RoomTooLarge(f64, f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("object outside room: {0}")]
    ObjectOutsideRoom(String),
    #[error("invalid size for object {0}")]
    InvalidSize(String),
    #[error("unknown category `{category}` for object {id}")]
    UnknownCategory { id: String, category: String },
    #[error("duplicate object id {0}")]
    DuplicateId(String),
    #[error("major collision between {0} and {1}")]
    MajorCollision(String, String),
    #[error("unknown object {0}")]
    UnknownObject(String),
}

/// Discretization of the room into `w × h` square cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub w: usize,
    pub h: usize,
    pub cell: f64,
    /// World position of the lower-left corner of cell (0, 0).
    #[serde(default)]
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(w: usize, h: usize, cell: f64, origin: [f64; 2]) -> Result<GridSpec, SceneError> {
        if w == 0 || h == 0 {
            return Err(SceneError::InvalidGrid(format!("empty grid {w}x{h}")));
        }
        if !(cell > 0.0 && cell <= MAX_CELL_SIZE) {
            return Err(SceneError::InvalidGrid(format!(
                "cell size {cell} outside (0, {MAX_CELL_SIZE}]"
            )));
        }
        Ok(GridSpec { w, h, cell, origin })
    }

    pub fn n_cells(&self) -> usize {
        self.w * self.h
    }

    pub fn cell_center_x(&self, i: usize) -> f64 {
        self.origin[0] + (i as f64 + 0.5) * self.cell
    }

    pub fn cell_center_y(&self, j: usize) -> f64 {
        self.origin[1] + (j as f64 + 0.5) * self.cell
    }

    pub fn cell_center(&self, cell: (usize, usize)) -> [f64; 2] {
        [self.cell_center_x(cell.0), self.cell_center_y(cell.1)]
    }

    /// Unclipped index of the cell containing `p`.
    pub fn cell_index(&self, p: [f64; 2]) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.cell).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (i, j) = self.cell_index(p);
        (i >= 0 && j >= 0 && (i as usize) < self.w && (j as usize) < self.h).then_some((i as usize, j as usize))
    }

    pub fn extent(&self) -> Aabb {
        Aabb {
            min: self.origin,
            max: [
                self.origin[0] + self.w as f64 * self.cell,
                self.origin[1] + self.h as f64 * self.cell,
            ],
        }
    }
}

/// Per-load configuration of the scene model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    pub cell: f64,
    pub max_side: f64,
    pub wall_thickness: f64,
    /// Maximum pairwise footprint overlap, as a fraction of the smaller footprint.
    pub max_overlap: f64,
    pub vocabulary: Option<Vec<String>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_w: 128,
            grid_h: 128,
            cell: 6.2 / 128.0,
            max_side: 6.2,
            wall_thickness: 0.10,
            max_overlap: 0.20,
            vocabulary: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectInstance {
    pub id: String,
    pub category: String,
    /// (width, depth) in the object's canonical frame, facing north.
    pub size: [f64; 2],
    pub position: [f64; 2],
    pub orientation: Orientation,
    pub holds_humans: bool,
    #[serde(skip)]
    pub is_wall: bool,
}

impl ObjectInstance {
    pub fn half_extents(&self) -> [f64; 2] {
        half_extents(self.size, self.orientation)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::centered(self.position, self.half_extents())
    }

    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }
}

/// The on-disk scene document. Walls are never stored; they are derived on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub scene_type: String,
    pub room: Vec<[f64; 2]>,
    pub objects: Vec<ObjectInstance>,
}

/// A validated room with its derived walls and furniture in placement order.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_type: String,
    pub room: Vec<[f64; 2]>,
    pub walls: Vec<ObjectInstance>,
    pub objects: Vec<ObjectInstance>,
    pub grid: GridSpec,
}

impl Scene {
    /// An empty room (walls only).
    pub fn empty(scene_type: &str, room: Vec<[f64; 2]>, cfg: &SceneConfig) -> Result<Scene, SceneError> {
        Scene::from_document(
            SceneDocument {
                scene_type: scene_type.to_string(),
                room,
                objects: Vec::new(),
            },
            cfg,
        )
    }

    pub fn from_document(doc: SceneDocument, cfg: &SceneConfig) -> Result<Scene, SceneError> {
        let room = normalize_polygon(doc.room);
        validate_polygon(&room)?;
        let bbox = geom::bounding_box(&room);
        let side = (bbox.max[0] - bbox.min[0]).max(bbox.max[1] - bbox.min[1]);
        if side > cfg.max_side + 1e-9 {
            return Err(SceneError::RoomTooLarge(side, cfg.max_side));
        }
        let grid = GridSpec::new(cfg.grid_w, cfg.grid_h, cfg.cell, bbox.min)?;
        let ext = grid.extent();
        if ext.max[0] + 1e-9 < bbox.max[0] || ext.max[1] + 1e-9 < bbox.max[1] {
            return Err(SceneError::InvalidGrid(format!(
                "{}x{} cells of {} m do not cover the room",
                grid.w, grid.h, grid.cell
            )));
        }
        let walls = derive_walls(&room, cfg.wall_thickness)?;
        let scene = Scene {
            scene_type: doc.scene_type,
            room,
            walls,
            objects: doc.objects,
            grid,
        };
        scene.validate_objects(cfg)?;
        Ok(scene)
    }

    fn validate_objects(&self, cfg: &SceneConfig) -> Result<(), SceneError> {
        let mut ids: HashSet<&str> = self.walls.iter().map(|w| w.id.as_str()).collect();
        for o in &self.objects {
            if o.id.is_empty() || !ids.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
            if !o.size.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(SceneError::InvalidSize(o.id.clone()));
            }
            if !o.position.iter().all(|p| p.is_finite()) || !geom::point_in_polygon(o.position, &self.room) {
                return Err(SceneError::ObjectOutsideRoom(o.id.clone()));
            }
            if let Some(vocab) = &cfg.vocabulary {
                if !vocab.iter().any(|c| c == &o.category) {
                    return Err(SceneError::UnknownCategory {
                        id: o.id.clone(),
                        category: o.category.clone(),
                    });
                }
            }
        }
        for (a_idx, a) in self.objects.iter().enumerate() {
            let ab = a.aabb();
            for b in &self.objects[a_idx + 1..] {
                let bb = b.aabb();
                let overlap = ab.intersection_area(&bb);
                if overlap > cfg.max_overlap * ab.area().min(bb.area()) {
                    return Err(SceneError::MajorCollision(a.id.clone(), b.id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn document(&self) -> SceneDocument {
        SceneDocument {
            scene_type: self.scene_type.clone(),
            room: self.room.clone(),
            objects: self.objects.clone(),
        }
    }

    /// Walls followed by furniture.
    pub fn all_objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.walls.iter().chain(self.objects.iter())
    }

    pub fn find(&self, id: &str) -> Option<&ObjectInstance> {
        self.all_objects().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// The partial scene holding only the first `k` placed objects.
    pub fn prefix(&self, k: usize) -> Scene {
        Scene {
            objects: self.objects[..k.min(self.objects.len())].to_vec(),
            ..self.clone_without_objects()
        }
    }

    /// The scene with one object removed.
    pub fn without(&self, id: &str) -> Scene {
        Scene {
            objects: self.objects.iter().filter(|o| o.id != id).cloned().collect(),
            ..self.clone_without_objects()
        }
    }

    pub fn with_object(&self, obj: ObjectInstance) -> Scene {
        let mut s = self.clone();
        s.objects.push(obj);
        s
    }

    fn clone_without_objects(&self) -> Scene {
        Scene {
            scene_type: self.scene_type.clone(),
            room: self.room.clone(),
            walls: self.walls.clone(),
            objects: Vec::new(),
            grid: self.grid.clone(),
        }
    }

    pub fn room_bbox(&self) -> Aabb {
        geom::bounding_box(&self.room)
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        geom::point_in_polygon(p, &self.room)
    }

    /// Next free id of the form `{category}_{n}`.
    pub fn next_id(&self, category: &str) -> String {
        (0..)
            .map(|n| format!("{category}_{n}"))
            .find(|id| self.find(id).is_none())
            .expect("unbounded id space")
    }
}

/// Parse and validate a scene JSON document.
pub fn load_scene(bytes: &[u8], cfg: &SceneConfig) -> Result<Scene, SceneError> {
    let doc: SceneDocument = serde_json::from_slice(bytes).map_err(|e| SceneError::Schema(e.to_string()))?;
    Scene::from_document(doc, cfg)
}

pub fn serialize_scene(scene: &Scene) -> String {
    serde_json::to_string_pretty(&scene.document()).expect("scene documents always serialize")
}

fn normalize_polygon(mut room: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if room.len() > 1 && room.first() == room.last() {
        room.pop();
    }
    room
}

fn validate_polygon(room: &[[f64; 2]]) -> Result<(), SceneError> {
    let n = room.len();
    if n < 4 {
        return Err(SceneError::TooFewVertices(n));
    }
    if room.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SceneError::Schema("non-finite room vertex".into()));
    }
    let edge = |i: usize| (room[i], room[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if a == b {
            return Err(SceneError::DegenerateEdge(i));
        }
        if a[0] != b[0] && a[1] != b[1] {
            return Err(SceneError::NotRectilinear(i));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = edge(i);
            let (c, d) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Consecutive edges may only share their common vertex.
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [d[0] - c[0], d[1] - c[1]];
                let antiparallel = u[0] * v[1] - u[1] * v[0] == 0.0 && u[0] * v[0] + u[1] * v[1] < 0.0;
                if antiparallel {
                    return Err(SceneError::NotSimple(i, j));
                }
            } else if segments_touch(a, b, c, d) {
                return Err(SceneError::NotSimple(i, j));
            }
        }
    }
    Ok(())
}

fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let lo = |p: f64, q: f64| p.min(q);
    let hi = |p: f64, q: f64| p.max(q);
    lo(a[0], b[0]) <= hi(c[0], d[0])
        && lo(c[0], d[0]) <= hi(a[0], b[0])
        && lo(a[1], b[1]) <= hi(c[1], d[1])
        && lo(c[1], d[1]) <= hi(a[1], b[1])
}

/// One wall object per polygon edge, facing into the room.
///
/// The wall box lies just outside the polygon so its inner face coincides with
/// the room boundary; `position` is the box center.
pub fn derive_walls(room: &[[f64; 2]], thickness: f64) -> Result<Vec<ObjectInstance>, SceneError> {
    let n = room.len();
    let ccw = geom::signed_area(room) > 0.0;
    let mut walls = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (room[i], room[(i + 1) % n]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if len == 0.0 {
            return Err(SceneError::DegenerateEdge(i));
        }
        let dir = [d[0].signum() * (d[0] != 0.0) as i32 as f64, d[1].signum() * (d[1] != 0.0) as i32 as f64];
        let normal = if ccw { [-dir[1], dir[0]] } else { [dir[1], -dir[0]] };
        let orientation = Orientation::from_vector(normal).ok_or(SceneError::NotRectilinear(i))?;
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        walls.push(ObjectInstance {
            id: format!("wall_{i}"),
            category: "wall".to_string(),
            size: [len, thickness],
            position: [mid[0] - normal[0] * thickness / 2.0, mid[1] - normal[1] * thickness / 2.0],
            orientation,
            holds_humans: false,
            is_wall: true,
        });
    }
    Ok(walls)
}

/// Inclusive rectangle of cell indices. May extend past the grid or be empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRect {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

impl CellRect {
    pub fn is_empty(&self) -> bool {
        self.x1 < self.x0 || self.y1 < self.y0
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> CellRect {
        CellRect {
            x0: self.x0 + dx,
            x1: self.x1 + dx,
            y0: self.y0 + dy,
            y1: self.y1 + dy,
        }
    }

    pub fn intersect(&self, other: &CellRect) -> CellRect {
        CellRect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        }
    }

    pub fn overlap(&self, other: &CellRect) -> i64 {
        self.intersect(other).area()
    }

    pub fn clip(&self, grid: &GridSpec) -> CellRect {
        self.intersect(&CellRect {
            x0: 0,
            x1: grid.w as i64 - 1,
            y0: 0,
            y1: grid.h as i64 - 1,
        })
    }

    pub fn inside(&self, grid: &GridSpec) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 < grid.w as i64 && self.y1 < grid.h as i64
    }

    pub fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| (x, y)))
    }
}

/// Cell offsets covered by a footprint centred on a cell center: a cell is
/// covered when its center lies in the half-open box `[c - h, c + h)`.
pub fn footprint_offsets(size: [f64; 2], o: Orientation, cell: f64) -> CellRect {
    let h = half_extents(size, o);
    // Half extents that are a whole number of cells up to rounding count as exact.
    let cells = |v: f64| {
        let r = v / cell;
        if (r - r.round()).abs() * cell < geom::LENGTH_EPS {
            r.round()
        } else {
            r
        }
    };
    CellRect {
        x0: (-cells(h[0])).ceil() as i64,
        x1: cells(h[0]).ceil() as i64 - 1,
        y0: (-cells(h[1])).ceil() as i64,
        y1: cells(h[1]).ceil() as i64 - 1,
    }
}

/// Cells covered by an object of `size` whose centroid sits on the center of
/// `centroid_cell` with orientation `o`, clipped to the grid.
pub fn rasterize_footprint(size: [f64; 2], centroid_cell: (usize, usize), o: Orientation, grid: &GridSpec) -> CellRect {
    footprint_offsets(size, o, grid.cell)
        .translate(centroid_cell.0 as i64, centroid_cell.1 as i64)
        .clip(grid)
}

/// Unclipped footprint of a placed object, snapped to the cell holding its centroid.
pub fn object_cells(obj: &ObjectInstance, grid: &GridSpec) -> CellRect {
    let (i, j) = grid.cell_index(obj.position);
    footprint_offsets(obj.size, obj.orientation, grid.cell).translate(i, j)
}
