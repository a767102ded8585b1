//! Placement-program AST, text format and structural transforms.
//!
//! Text grammar (whitespace insignificant):
//!
//! ```text
//! node := "and(" node "," node ")" | "or(" node "," node ")" | leaf
//! leaf := ctype "(" ref ["," dir] ")"
//! ctype := attach | reachable_by_arm | align | face
//! dir := up | down | left | right
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geom::Orientation;

pub const DEFAULT_MAX_DEPTH: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("`{name}` at byte {pos} takes {expected} argument(s), got {got}")]
    Arity {
        pos: usize,
        name: String,
        expected: &'static str,
        got: usize,
    },
    #[error("unknown constraint `{name}` at byte {pos}")]
    UnknownConstraint { pos: usize, name: String },
    #[error("{ctype} {problem}")]
    DirectionMismatch { ctype: ConstraintType, problem: &'static str },
    #[error("program depth {0} exceeds maximum {1}")]
    TooDeep(usize, usize),
    #[error("cannot delete the only constraint of a program")]
    SingleLeaf,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    LeafIndex { index: usize, leaves: usize },
    #[error("cannot join an empty list of programs")]
    EmptyJoin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintType {
    Attach,
    ReachableByArm,
    Align,
    Face,
}

impl ConstraintType {
    pub const ALL: [ConstraintType; 4] = [
        ConstraintType::Attach,
        ConstraintType::ReachableByArm,
        ConstraintType::Align,
        ConstraintType::Face,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintType::Attach => "attach",
            ConstraintType::ReachableByArm => "reachable_by_arm",
            ConstraintType::Align => "align",
            ConstraintType::Face => "face",
        }
    }

    pub fn parse(s: &str) -> Option<ConstraintType> {
        ConstraintType::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Distance constraints take a direction; orientation constraints do not.
    pub fn takes_direction(self) -> bool {
        matches!(self, ConstraintType::Attach | ConstraintType::ReachableByArm)
    }
}

impl fmt::Display for ConstraintType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Side of the reference object in its own frame. `Up` is the reference's facing direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
    Null,
}

impl Direction {
    pub const SIDES: [Direction; 4] = [Direction::Up, Direction::Right, Direction::Down, Direction::Left];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Right => "right",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Null => "null",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Direction::SIDES.into_iter().find(|d| d.name() == s)
    }

    /// World direction of this side for a reference facing `facing`.
    pub fn world(self, facing: Orientation) -> Option<Orientation> {
        let turns = match self {
            Direction::Up => 0,
            Direction::Right => 1,
            Direction::Down => 2,
            Direction::Left => 3,
            Direction::Null => return None,
        };
        Some(facing.rotate_cw(turns))
    }

    /// The side of a reference facing `facing` that points along world direction `world`.
    pub fn from_world(facing: Orientation, world: Orientation) -> Direction {
        Direction::SIDES[(world.index() + 4 - facing.index()) % 4]
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constraint {
    pub ctype: ConstraintType,
    pub reference: String,
    pub direction: Direction,
}

impl Constraint {
    pub fn new(ctype: ConstraintType, reference: impl Into<String>, direction: Direction) -> Result<Constraint, DslError> {
        let c = Constraint {
            ctype,
            reference: reference.into(),
            direction,
        };
        c.check_direction()?;
        Ok(c)
    }

    pub fn attach(reference: &str, direction: Direction) -> Constraint {
        Constraint::new(ConstraintType::Attach, reference, direction).expect("attach needs a side")
    }

    pub fn reachable_by_arm(reference: &str, direction: Direction) -> Constraint {
        Constraint::new(ConstraintType::ReachableByArm, reference, direction).expect("reach needs a side")
    }

    pub fn align(reference: &str) -> Constraint {
        Constraint::new(ConstraintType::Align, reference, Direction::Null).unwrap()
    }

    pub fn face(reference: &str) -> Constraint {
        Constraint::new(ConstraintType::Face, reference, Direction::Null).unwrap()
    }

    fn check_direction(&self) -> Result<(), DslError> {
        match (self.ctype.takes_direction(), self.direction == Direction::Null) {
            (true, true) => Err(DslError::DirectionMismatch {
                ctype: self.ctype,
                problem: "requires a direction",
            }),
            (false, false) => Err(DslError::DirectionMismatch {
                ctype: self.ctype,
                problem: "does not take a direction",
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.direction == Direction::Null {
            write!(f, "{}({})", self.ctype, self.reference)
        } else {
            write!(f, "{}({}, {})", self.ctype, self.reference, self.direction)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf(Constraint),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
}

impl Node {
    pub fn and(a: Node, b: Node) -> Node {
        Node::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Node, b: Node) -> Node {
        Node::Or(Box::new(a), Box::new(b))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::And(a, b) | Node::Or(a, b) => a.leaf_count() + b.leaf_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::And(a, b) | Node::Or(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Depth counted in nodes; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::And(a, b) | Node::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Constraint>) {
        match self {
            Node::Leaf(c) => out.push(c),
            Node::And(a, b) | Node::Or(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    fn collect_subtrees<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        if let Node::And(a, b) | Node::Or(a, b) = self {
            a.collect_subtrees(out);
            b.collect_subtrees(out);
        }
    }

    /// Remove the leaf at left-to-right position `*index`, splicing its sibling
    /// into the parent's place. Returns `None` when this whole node disappears.
    fn without_leaf(&self, index: &mut usize) -> Option<Node> {
        match self {
            Node::Leaf(_) => {
                if *index == 0 {
                    *index = usize::MAX;
                    None
                } else {
                    *index -= 1;
                    Some(self.clone())
                }
            }
            Node::And(a, b) | Node::Or(a, b) => {
                let left = a.without_leaf(index);
                let right = if *index == usize::MAX { Some((**b).clone()) } else { b.without_leaf(index) };
                match (left, right) {
                    (Some(l), Some(r)) => Some(match self {
                        Node::And(..) => Node::and(l, r),
                        _ => Node::or(l, r),
                    }),
                    (Some(only), None) | (None, Some(only)) => Some(only),
                    (None, None) => None,
                }
            }
        }
    }

    fn map_leaves(&self, f: &mut impl FnMut(&Constraint) -> Constraint) -> Node {
        match self {
            Node::Leaf(c) => Node::Leaf(f(c)),
            Node::And(a, b) => Node::and(a.map_leaves(f), b.map_leaves(f)),
            Node::Or(a, b) => Node::or(a.map_leaves(f), b.map_leaves(f)),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Leaf(c) => c.fmt(f),
            Node::And(a, b) => write!(f, "and({a}, {b})"),
            Node::Or(a, b) => write!(f, "or({a}, {b})"),
        }
    }
}

/// A CSG tree of constraints over a single implicit query object.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PlacementProgram {
    pub root: Node,
}

impl PlacementProgram {
    pub fn new(root: Node) -> PlacementProgram {
        PlacementProgram { root }
    }

    pub fn leaf(c: Constraint) -> PlacementProgram {
        PlacementProgram { root: Node::Leaf(c) }
    }

    pub fn parse(text: &str) -> Result<PlacementProgram, DslError> {
        Parser::new(text).program()
    }

    pub fn to_text(&self) -> String {
        self.root.to_string()
    }

    pub fn leaves(&self) -> Vec<&Constraint> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Distinct reference ids, in first-use order.
    pub fn references(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in self.leaves() {
            if !out.contains(&c.reference.as_str()) {
                out.push(&c.reference);
            }
        }
        out
    }

    /// Structural validation: leaf fields and depth.
    pub fn validate(&self, max_depth: usize) -> Result<(), DslError> {
        for c in self.leaves() {
            c.check_direction()?;
        }
        let d = self.depth();
        if d > max_depth {
            return Err(DslError::TooDeep(d, max_depth));
        }
        Ok(())
    }

    /// Remove leaf `leaf_index` (left-to-right); its parent is replaced by the sibling subtree.
    pub fn delete_constraint(&self, leaf_index: usize) -> Result<PlacementProgram, DslError> {
        let leaves = self.leaf_count();
        if leaves < 2 {
            return Err(DslError::SingleLeaf);
        }
        if leaf_index >= leaves {
            return Err(DslError::LeafIndex { index: leaf_index, leaves });
        }
        let mut idx = leaf_index;
        let root = self.root.without_leaf(&mut idx).expect("at least one leaf remains");
        Ok(PlacementProgram { root })
    }

    /// Every rooted subtree as a standalone program, in preorder.
    pub fn enumerate_subtrees(&self) -> Vec<PlacementProgram> {
        let mut nodes = Vec::new();
        self.root.collect_subtrees(&mut nodes);
        nodes.into_iter().map(|n| PlacementProgram { root: n.clone() }).collect()
    }

    pub fn map_references(&self, mut f: impl FnMut(&str) -> String) -> PlacementProgram {
        PlacementProgram {
            root: self.root.map_leaves(&mut |c| Constraint {
                reference: f(&c.reference),
                ..c.clone()
            }),
        }
    }
}

impl fmt::Display for PlacementProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for PlacementProgram {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlacementProgram::parse(s)
    }
}

impl Serialize for PlacementProgram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for PlacementProgram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        PlacementProgram::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub fn parse_program(text: &str) -> Result<PlacementProgram, DslError> {
    PlacementProgram::parse(text)
}

pub fn serialize_program(p: &PlacementProgram) -> String {
    p.to_text()
}

/// Delete between one and `leaves - 1` uniformly chosen leaves. Single-leaf
/// programs are returned unchanged.
pub fn relax<R: Rng + ?Sized>(p: &PlacementProgram, rng: &mut R) -> PlacementProgram {
    let leaves = p.leaf_count();
    if leaves < 2 {
        return p.clone();
    }
    let deletions = rng.gen_range(1..leaves);
    let mut out = p.clone();
    for _ in 0..deletions {
        let i = rng.gen_range(0..out.leaf_count());
        out = out.delete_constraint(i).expect("at least two leaves remain before each deletion");
    }
    out
}

/// Left-deep chain of `or` nodes over the inputs, in order.
pub fn or_join(programs: Vec<PlacementProgram>) -> Result<PlacementProgram, DslError> {
    let mut it = programs.into_iter();
    let first = it.next().ok_or(DslError::EmptyJoin)?;
    Ok(it.fold(first, |acc, p| PlacementProgram {
        root: Node::or(acc.root, p.root),
    }))
}

/// Balanced `and` tree over the constraints, keeping their order.
pub fn and_join(constraints: &[Constraint]) -> Result<PlacementProgram, DslError> {
    fn build(cs: &[Constraint]) -> Node {
        if cs.len() == 1 {
            Node::Leaf(cs[0].clone())
        } else {
            let mid = cs.len().div_ceil(2);
            Node::and(build(&cs[..mid]), build(&cs[mid..]))
        }
    }
    if constraints.is_empty() {
        return Err(DslError::EmptyJoin);
    }
    Ok(PlacementProgram { root: build(constraints) })
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn program(mut self) -> Result<PlacementProgram, DslError> {
        let root = self.node()?;
        self.skip_ws();
        if self.pos < self.src.len() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(PlacementProgram { root })
    }

    fn error(&self, msg: &str) -> DslError {
        DslError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, ch: char) -> Result<(), DslError> {
        if self.peek() == Some(ch) {
            self.pos += ch.len_utf8();
            Ok(())
        } else {
            Err(self.error(&format!("expected `{ch}`")))
        }
    }

    fn word(&mut self) -> Result<(usize, &'a str), DslError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest
            .find(|c: char| c.is_whitespace() || matches!(c, '(' | ')' | ','))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected an identifier"));
        }
        self.pos += len;
        Ok((start, &rest[..len]))
    }

    fn node(&mut self) -> Result<Node, DslError> {
        let (pos, name) = self.word()?;
        self.expect('(')?;
        match name {
            "and" | "or" => {
                let mut args = vec![self.node()?];
                while self.peek() == Some(',') {
                    self.pos += 1;
                    args.push(self.node()?);
                }
                self.expect(')')?;
                if args.len() != 2 {
                    return Err(DslError::Arity {
                        pos,
                        name: name.to_string(),
                        expected: "2",
                        got: args.len(),
                    });
                }
                let b = args.pop().unwrap();
                let a = args.pop().unwrap();
                Ok(if name == "and" { Node::and(a, b) } else { Node::or(a, b) })
            }
            _ => {
                let ctype = ConstraintType::parse(name).ok_or_else(|| DslError::UnknownConstraint {
                    pos,
                    name: name.to_string(),
                })?;
                let mut args = vec![self.word()?];
                while self.peek() == Some(',') {
                    self.pos += 1;
                    args.push(self.word()?);
                }
                self.expect(')')?;
                let direction = match args.len() {
                    1 => Direction::Null,
                    2 => {
                        let (dpos, d) = args[1];
                        Direction::parse(d).ok_or(DslError::Syntax {
                            pos: dpos,
                            msg: format!("unknown direction `{d}`"),
                        })?
                    }
                    n => {
                        return Err(DslError::Arity {
                            pos,
                            name: name.to_string(),
                            expected: "1 or 2",
                            got: n,
                        })
                    }
                };
                Ok(Node::Leaf(Constraint::new(ctype, args[0].1, direction)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &str) -> Node {
        PlacementProgram::parse(t).unwrap().root
    }

    #[test]
    fn single_leaf_program() {
        let p = parse_program("attach(wall_2, up)").unwrap();
        assert_eq!(p.root, Node::Leaf(Constraint::attach("wall_2", Direction::Up)));
    }

    #[test]
    fn five_node_tree() {
        let text = "or(and(attach(bed_1, left), align(bed_1)), attach(wall_0, up))";
        let p = parse_program(text).unwrap();
        assert_eq!(p.node_count(), 5);
        assert_eq!(p.leaf_count(), 3);
        assert!(matches!(&p.root, Node::Or(a, _) if matches!(**a, Node::And(..))));
        assert_eq!(p.to_text(), text);
    }

    #[test]
    fn whitespace_is_insignificant() {
        let p = parse_program(" and (\n face( desk_0 ) ,attach(wall_1,down) ) ").unwrap();
        assert_eq!(p.to_text(), "and(face(desk_0), attach(wall_1, down))");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_program("and(align(a))"), Err(DslError::Arity { .. })));
        assert!(matches!(parse_program("and(align(a), align(b), align(c))"), Err(DslError::Arity { .. })));
        assert!(matches!(parse_program("hover(a, up)"), Err(DslError::UnknownConstraint { pos: 0, .. })));
        assert!(matches!(parse_program("attach(a)"), Err(DslError::DirectionMismatch { .. })));
        assert!(matches!(parse_program("align(a, up)"), Err(DslError::DirectionMismatch { .. })));
        assert!(matches!(parse_program("attach(a, sideways)"), Err(DslError::Syntax { pos: 10, .. })));
        assert!(matches!(parse_program("align(a) x"), Err(DslError::Syntax { pos: 9, .. })));
        assert!(matches!(parse_program("align(a"), Err(DslError::Syntax { .. })));
        assert!(matches!(parse_program(""), Err(DslError::Syntax { pos: 0, .. })));
    }

    #[test]
    fn delete_forced_structures() {
        let p = parse_program("and(align(a), face(b))").unwrap();
        assert_eq!(p.delete_constraint(1).unwrap().root, leaf("align(a)"));
        let p = parse_program("or(and(align(a), face(b)), align(c))").unwrap();
        assert_eq!(p.delete_constraint(0).unwrap().to_text(), "or(face(b), align(c))");
        assert_eq!(parse_program("align(a)").unwrap().delete_constraint(0), Err(DslError::SingleLeaf));
        assert!(matches!(p.delete_constraint(3), Err(DslError::LeafIndex { .. })));
    }

    #[test]
    fn subtrees_in_preorder() {
        let p = parse_program("and(align(a), face(b))").unwrap();
        let subs: Vec<String> = p.enumerate_subtrees().iter().map(|s| s.to_text()).collect();
        assert_eq!(subs, vec!["and(align(a), face(b))", "align(a)", "face(b)"]);
        assert_eq!(parse_program("align(a)").unwrap().enumerate_subtrees().len(), 1);
    }

    #[test]
    fn or_join_shapes() {
        let ps: Vec<_> = ["align(a)", "align(b)", "align(c)"].iter().map(|t| parse_program(t).unwrap()).collect();
        assert_eq!(or_join(ps[..1].to_vec()).unwrap(), ps[0]);
        assert_eq!(or_join(ps[..2].to_vec()).unwrap().to_text(), "or(align(a), align(b))");
        assert_eq!(or_join(ps.clone()).unwrap().to_text(), "or(or(align(a), align(b)), align(c))");
        assert_eq!(or_join(vec![]), Err(DslError::EmptyJoin));
    }

    #[test]
    fn and_join_is_balanced() {
        let cs: Vec<_> = (0..5).map(|i| Constraint::align(&format!("o{i}"))).collect();
        let p = and_join(&cs).unwrap();
        assert_eq!(p.leaf_count(), 5);
        assert_eq!(p.depth(), 4);
        assert_eq!(p.leaves().into_iter().cloned().collect::<Vec<_>>(), cs);
    }

    #[test]
    fn local_frame_directions() {
        assert_eq!(Direction::Up.world(Orientation::E), Some(Orientation::E));
        assert_eq!(Direction::Right.world(Orientation::N), Some(Orientation::E));
        assert_eq!(Direction::Left.world(Orientation::N), Some(Orientation::W));
        assert_eq!(Direction::Down.world(Orientation::W), Some(Orientation::E));
        for f in Orientation::ALL {
            for w in Orientation::ALL {
                assert_eq!(Direction::from_world(f, w).world(f), Some(w));
            }
        }
    }

    #[test]
    fn depth_limit() {
        let mut node = leaf("align(a)");
        for _ in 0..12 {
            node = Node::and(node, leaf("face(b)"));
        }
        let p = PlacementProgram::new(node);
        assert_eq!(p.validate(DEFAULT_MAX_DEPTH), Err(DslError::TooDeep(13, 12)));
    }

    #[test]
    fn serde_as_text() {
        let p = parse_program("and(align(a), attach(b, left))").unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"and(align(a), attach(b, left))\"");
        assert_eq!(serde_json::from_str::<PlacementProgram>(&json).unwrap(), p);
    }
}
