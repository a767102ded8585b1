//! Fixed-length feature vectors describing a query placement in a partial scene.
//!
//! A base block of geometric features is computed once and then repeated in a
//! per-category slot, so a linear model can learn category-specific rules while
//! sharing a common block across categories.

use sha2::{Digest, Sha256};

use crate::extract::corridor_hits;
use crate::geom::{self, Aabb, Orientation};
use crate::scene::{ObjectInstance, Scene};

/// Upper edges (m) of the gap bins; a further bin holds larger gaps and a last one "nothing on that side".
const GAP_BINS: [f64; 3] = [0.15, 0.60, 1.50];
const N_GAP_BINS: usize = GAP_BINS.len() + 2;
/// Objects overlapping the query by less than this still count as lying on a side.
const SIDE_TOLERANCE: f64 = 0.10;
/// Outer radii (m) of the occupancy rings around the query footprint.
const RINGS: [f64; 3] = [0.3, 0.8, 1.5];

const SIDE_NAMES: [&str; 4] = ["front", "right", "back", "left"];
const KIND_NAMES: [&str; 4] = ["wall", "human", "same", "object"];
const RELATIONS: [&str; 4] = ["same", "opposite", "perpendicular", "none"];

/// Names of the base features, in vector order.
pub fn base_feature_names() -> Vec<String> {
    let mut names = Vec::new();
    for side in SIDE_NAMES {
        for kind in KIND_NAMES {
            for bin in ["attached", "reach", "near", "far", "none"] {
                names.push(format!("gap_{side}_{kind}_{bin}"));
            }
        }
    }
    for target in ["human", "object"] {
        for rel in RELATIONS {
            names.push(format!("orient_{target}_{rel}"));
        }
    }
    for rel in &RELATIONS[..3] {
        names.push(format!("orient_wall_{rel}"));
    }
    names.extend(
        [
            "faces_object",
            "object_faces_query",
            "faces_human",
            "overlap_fraction",
            "outside_room_fraction",
            "ring_near",
            "ring_mid",
            "ring_far",
            "center_distance",
            "constant",
        ]
        .map(String::from),
    );
    names
}

pub fn base_dim() -> usize {
    base_feature_names().len()
}

/// Feature layout for a category vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    pub vocabulary: Vec<String>,
}

impl FeatureSchema {
    pub fn new(mut vocabulary: Vec<String>) -> FeatureSchema {
        vocabulary.sort();
        vocabulary.dedup();
        FeatureSchema { vocabulary }
    }

    pub fn dim(&self) -> usize {
        base_dim() * (1 + self.vocabulary.len())
    }

    /// Stable hash of feature names and vocabulary, stored with trained models.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for n in base_feature_names() {
            h.update(n.as_bytes());
            h.update([0]);
        }
        h.update([1]);
        for c in &self.vocabulary {
            h.update(c.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    /// Full feature vector: shared block followed by one block per category,
    /// of which only the query's is nonzero.
    pub fn features(&self, scene: &Scene, query: &ObjectInstance) -> Vec<f64> {
        let base = base_features(scene, query);
        let b = base.len();
        let mut out = vec![0.0; self.dim()];
        out[..b].copy_from_slice(&base);
        if let Ok(slot) = self.vocabulary.binary_search(&query.category) {
            out[b * (slot + 1)..b * (slot + 2)].copy_from_slice(&base);
        }
        out
    }
}

fn relation(a: Orientation, b: Orientation) -> usize {
    match a.quarter_turns_to(b) {
        0 => 0,
        2 => 1,
        _ => 2,
    }
}

fn gap_bin(gap: Option<f64>) -> usize {
    match gap {
        None => N_GAP_BINS - 1,
        Some(g) => GAP_BINS.iter().position(|edge| g <= *edge).unwrap_or(GAP_BINS.len()),
    }
}

/// Area of `poly ∩ rect` for a simple polygon, by clipping against the rectangle.
pub fn polygon_rect_intersection_area(poly: &[[f64; 2]], rect: &Aabb) -> f64 {
    let mut pts: Vec<[f64; 2]> = poly.to_vec();
    // Clip against x >= min, x <= max, y >= min, y <= max.
    for (axis, bound, keep_greater) in [
        (0, rect.min[0], true),
        (0, rect.max[0], false),
        (1, rect.min[1], true),
        (1, rect.max[1], false),
    ] {
        if pts.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        let mut next = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let cur = pts[i];
            let prev = pts[(i + pts.len() - 1) % pts.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut x = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                x[axis] = bound;
                next.push(x);
            }
            if ci {
                next.push(cur);
            }
        }
        pts = next;
    }
    if pts.len() < 3 {
        0.0
    } else {
        geom::signed_area(&pts).abs()
    }
}

fn grow(b: &Aabb, d: f64) -> Aabb {
    Aabb {
        min: [b.min[0] - d, b.min[1] - d],
        max: [b.max[0] + d, b.max[1] + d],
    }
}

/// Occupied area (furniture or outside the room) within `region`.
fn occupied_area(scene: &Scene, region: &Aabb) -> f64 {
    let outside = region.area() - polygon_rect_intersection_area(&scene.room, region);
    let furniture: f64 = scene.objects.iter().map(|o| o.aabb().intersection_area(region)).sum();
    (outside + furniture).min(region.area())
}

fn base_features(scene: &Scene, query: &ObjectInstance) -> Vec<f64> {
    let q = query.aabb();
    let mut f = Vec::with_capacity(101);

    // Nearest gap per query side and object kind.
    let mut nearest = [[None::<f64>; 4]; 4];
    for obj in scene.all_objects() {
        let b = obj.aabb();
        let kinds = [
            obj.is_wall,
            !obj.is_wall && obj.holds_humans,
            !obj.is_wall && obj.category == query.category,
            !obj.is_wall,
        ];
        for (s, slot) in nearest.iter_mut().enumerate() {
            let dir = query.orientation.rotate_cw(s);
            let perp = if dir.is_north_south() { 0 } else { 1 };
            if q.overlap_on(&b, perp) <= 0.0 {
                continue;
            }
            let gap = b.gap_from(&q, dir);
            if gap < -SIDE_TOLERANCE {
                continue;
            }
            let gap = gap.max(0.0);
            for (k, applies) in kinds.iter().enumerate() {
                if *applies && slot[k].is_none_or(|g| gap < g) {
                    slot[k] = Some(gap);
                }
            }
        }
    }
    for side in nearest {
        for gap in side {
            let mut onehot = [0.0; N_GAP_BINS];
            onehot[gap_bin(gap)] = 1.0;
            f.extend(onehot);
        }
    }

    // Orientation relations to the nearest human-holding object, furniture object and wall.
    let closest = |pred: &dyn Fn(&ObjectInstance) -> bool| {
        scene
            .all_objects()
            .filter(|o| pred(o))
            .min_by(|a, b| a.aabb().distance(&q).total_cmp(&b.aabb().distance(&q)))
    };
    let human = closest(&|o| !o.is_wall && o.holds_humans);
    let object = closest(&|o| !o.is_wall);
    let wall = closest(&|o| o.is_wall);
    for target in [human, object] {
        let mut onehot = [0.0; 4];
        onehot[target.map_or(3, |o| relation(query.orientation, o.orientation))] = 1.0;
        f.extend(onehot);
    }
    let mut onehot = [0.0; 3];
    if let Some(w) = wall {
        onehot[relation(query.orientation, w.orientation)] = 1.0;
    }
    f.extend(onehot);

    let hits = |o: Option<&ObjectInstance>, outward: bool| {
        o.is_some_and(|o| {
            if outward {
                corridor_hits(&q, query.orientation, &o.aabb())
            } else {
                corridor_hits(&o.aabb(), o.orientation, &q)
            }
        }) as u8 as f64
    };
    f.push(hits(object, true));
    f.push(hits(object, false));
    f.push(hits(human, true));

    let area = q.area().max(1e-9);
    let overlap = scene
        .objects
        .iter()
        .map(|o| o.aabb().intersection_area(&q))
        .fold(0.0, f64::max);
    f.push(overlap / area);
    f.push(1.0 - polygon_rect_intersection_area(&scene.room, &q) / area);

    let mut inner = q;
    let mut inner_occ = occupied_area(scene, &q);
    for r in RINGS {
        let outer = grow(&q, r);
        let outer_occ = occupied_area(scene, &outer);
        let ring_area = outer.area() - inner.area();
        f.push(((outer_occ - inner_occ) / ring_area).clamp(0.0, 1.0));
        inner = outer;
        inner_occ = outer_occ;
    }

    let bb = scene.room_bbox();
    let c = bb.center();
    let half_diag = ((bb.max[0] - bb.min[0]).powi(2) + (bb.max[1] - bb.min[1]).powi(2)).sqrt() / 2.0;
    let p = query.position;
    f.push(((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() / half_diag.max(1e-9));
    f.push(1.0);
    debug_assert_eq!(f.len(), base_dim());
    f
}
