//! Planar primitives shared by the scene model, executor and features.
//!
//! Coordinates are meters with `x` pointing east and `y` pointing north.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Cardinal facing direction of an object, clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    N,
    E,
    S,
    W,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::N, Orientation::E, Orientation::S, Orientation::W];

    pub fn index(self) -> usize {
        match self {
            Orientation::N => 0,
            Orientation::E => 1,
            Orientation::S => 2,
            Orientation::W => 3,
        }
    }

    pub fn from_index(i: usize) -> Orientation {
        Orientation::ALL[i % 4]
    }

    /// Rotate clockwise by `quarter_turns` × 90°.
    pub fn rotate_cw(self, quarter_turns: usize) -> Orientation {
        Orientation::from_index(self.index() + quarter_turns)
    }

    pub fn opposite(self) -> Orientation {
        self.rotate_cw(2)
    }

    /// Unit vector pointing in this direction.
    pub fn unit(self) -> [f64; 2] {
        match self {
            Orientation::N => [0.0, 1.0],
            Orientation::E => [1.0, 0.0],
            Orientation::S => [0.0, -1.0],
            Orientation::W => [-1.0, 0.0],
        }
    }

    /// True for N and S, whose footprints keep the canonical (width, depth) axes.
    pub fn is_north_south(self) -> bool {
        matches!(self, Orientation::N | Orientation::S)
    }

    /// Number of quarter turns separating two orientations (0, 1 or 2).
    pub fn quarter_turns_to(self, other: Orientation) -> usize {
        let d = (other.index() + 4 - self.index()) % 4;
        d.min(4 - d)
    }

    pub fn from_vector(v: [f64; 2]) -> Option<Orientation> {
        let [x, y] = v;
        if x == 0.0 && y > 0.0 {
            Some(Orientation::N)
        } else if x == 0.0 && y < 0.0 {
            Some(Orientation::S)
        } else if y == 0.0 && x > 0.0 {
            Some(Orientation::E)
        } else if y == 0.0 && x < 0.0 {
            Some(Orientation::W)
        } else {
            None
        }
    }

    pub fn parse(s: &str) -> Option<Orientation> {
        match s {
            "N" => Some(Orientation::N),
            "E" => Some(Orientation::E),
            "S" => Some(Orientation::S),
            "W" => Some(Orientation::W),
            _ => None,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Orientation::N => "N",
            Orientation::E => "E",
            Orientation::S => "S",
            Orientation::W => "W",
        };
        f.write_str(s)
    }
}

/// Length tolerance (m) for boundary comparisons, so that a gap or extent that is
/// exactly on a band edge is decided as exact arithmetic would decide it.
pub const LENGTH_EPS: f64 = 1e-9;

/// Half extents (x, y) of a footprint of canonical `size = (width, depth)` facing `o`.
pub fn half_extents(size: [f64; 2], o: Orientation) -> [f64; 2] {
    if o.is_north_south() {
        [size[0] / 2.0, size[1] / 2.0]
    } else {
        [size[1] / 2.0, size[0] / 2.0]
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn centered(center: [f64; 2], half: [f64; 2]) -> Aabb {
        Aabb {
            min: [center[0] - half[0], center[1] - half[1]],
            max: [center[0] + half[0], center[1] + half[1]],
        }
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    /// Signed length of the overlap of the two boxes' projections on `axis`.
    pub fn overlap_on(&self, other: &Aabb, axis: usize) -> f64 {
        self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])
    }

    pub fn intersection_area(&self, other: &Aabb) -> f64 {
        self.overlap_on(other, 0).max(0.0) * self.overlap_on(other, 1).max(0.0)
    }

    /// Gap from `reference` to `self` measured along world direction `dir`.
    ///
    /// Positive when `self` lies strictly beyond `reference` in that direction;
    /// negative values mean the boxes interpenetrate along the axis.
    pub fn gap_from(&self, reference: &Aabb, dir: Orientation) -> f64 {
        match dir {
            Orientation::N => self.min[1] - reference.max[1],
            Orientation::S => reference.min[1] - self.max[1],
            Orientation::E => self.min[0] - reference.max[0],
            Orientation::W => reference.min[0] - self.max[0],
        }
    }

    /// Euclidean distance between the boxes (0 when they touch or overlap).
    pub fn distance(&self, other: &Aabb) -> f64 {
        let dx = (self.min[0] - other.max[0]).max(other.min[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - other.max[1]).max(other.min[1] - self.max[1]).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Signed area of a polygon (positive for counter-clockwise winding).
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Bounding box of a polygon.
pub fn bounding_box(poly: &[[f64; 2]]) -> Aabb {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in poly {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    Aabb { min, max }
}
