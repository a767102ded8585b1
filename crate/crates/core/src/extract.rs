//! Initial "most restrictive" program extraction from an observed placement.

use thiserror::Error;

use crate::dsl::{and_join, Constraint, Direction, PlacementProgram};
use crate::exec::{placement_of, ExecConfig, ExecContext, ExecError};
use crate::geom::{Aabb, Orientation};
use crate::mask::{Placement, PlacementMask};
use crate::scene::{ObjectInstance, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("object {0} has its centroid off the grid")]
    OffGrid(String),
    #[error("unconstrained object {0}: no constraint applies")]
    Unconstrained(String),
    #[error("no subtree of the extracted program recovers the placement of {0}")]
    NoRecovery(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// An extracted program together with the context and placement it was derived from.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub program: PlacementProgram,
    pub mask: PlacementMask,
    pub placement: Placement,
}

/// Whether the strip swept forward from `from` (its full width, along `facing`)
/// reaches into `target`.
pub fn corridor_hits(from: &Aabb, facing: Orientation, target: &Aabb) -> bool {
    let (along, perp) = if facing.is_north_south() { (1, 0) } else { (0, 1) };
    let perp_overlap = from.max[perp].min(target.max[perp]) - from.min[perp].max(target.min[perp]) > 0.0;
    let ahead = match facing {
        Orientation::N | Orientation::E => target.max[along] > from.max[along],
        Orientation::S | Orientation::W => target.min[along] < from.min[along],
    };
    perp_overlap && ahead
}

/// Every constraint that holds at `placement` relative to the context objects.
fn applicable_constraints(ctx: &ExecContext, query: &ObjectInstance, placement: Placement) -> Result<Vec<Constraint>, ExecError> {
    let grid = ctx.grid();
    let qbox = Aabb::centered(grid.cell_center(placement.cell), query.half_extents());
    let mut out: Vec<Constraint> = Vec::new();
    let push = |c: Constraint, out: &mut Vec<Constraint>| {
        if !out.contains(&c) {
            out.push(c);
        }
    };
    let orientation_constraint = |r: &ObjectInstance| -> Option<Constraint> {
        if r.orientation == placement.orientation {
            Some(Constraint::align(&r.id))
        } else if r.orientation == placement.orientation.opposite()
            && corridor_hits(&qbox, placement.orientation, &r.aabb())
            && corridor_hits(&r.aabb(), r.orientation, &qbox)
        {
            Some(Constraint::face(&r.id))
        } else {
            None
        }
    };
    let mut passes = vec![false];
    if query.holds_humans {
        passes.push(true);
    }
    for reach in passes {
        for r in ctx.scene.all_objects() {
            if reach && !r.holds_humans {
                continue;
            }
            let mut hit = false;
            for side in Direction::SIDES {
                let c = if reach {
                    Constraint::reachable_by_arm(&r.id, side)
                } else {
                    Constraint::attach(&r.id, side)
                };
                if ctx.constraint_holds_at(&c, placement)? {
                    push(c, &mut out);
                    hit = true;
                }
            }
            if hit {
                if let Some(c) = orientation_constraint(r) {
                    push(c, &mut out);
                }
            }
        }
    }
    Ok(out)
}

/// Extract the most restrictive program that still admits the observed
/// placement of `query_id`, evaluated against the objects placed before it.
pub fn extract_initial_program(scene: &Scene, query_id: &str, cfg: &ExecConfig) -> Result<Extraction, ExtractError> {
    let k = scene
        .object_index(query_id)
        .ok_or_else(|| ExtractError::UnknownObject(query_id.to_string()))?;
    let query = &scene.objects[k];
    let ctx = ExecContext::for_object(scene, k, cfg);
    let placement = placement_of(query, ctx.grid()).ok_or_else(|| ExtractError::OffGrid(query_id.to_string()))?;
    let constraints = applicable_constraints(&ctx, query, placement)?;
    if constraints.is_empty() {
        return Err(ExtractError::Unconstrained(query_id.to_string()));
    }
    let mut program = and_join(&constraints).expect("nonempty constraint list");
    let mut mask = ctx.execute(&program)?;
    if !mask.get(placement) {
        (program, mask) = repair_null_program(&program, &ctx, placement)
            .ok_or_else(|| ExtractError::NoRecovery(query_id.to_string()))??;
    }
    let program = remove_extraneous_constraints(&program, &ctx, &mask)?;
    Ok(Extraction { program, mask, placement })
}

/// The largest subtree (by leaf count, then preorder) whose mask contains `placement`.
pub fn repair_null_program(
    p: &PlacementProgram,
    ctx: &ExecContext,
    placement: Placement,
) -> Option<Result<(PlacementProgram, PlacementMask), ExecError>> {
    let mut subtrees = p.enumerate_subtrees();
    subtrees.sort_by_key(|s| std::cmp::Reverse(s.leaf_count()));
    for s in subtrees {
        match ctx.execute(&s) {
            Ok(m) if m.get(placement) => return Some(Ok((s, m))),
            Ok(_) => {}
            Err(e) => return Some(Err(e)),
        }
    }
    None
}

/// Greedily drop leaves whose removal leaves the executed mask unchanged, to a fixpoint.
pub fn remove_extraneous_constraints(
    p: &PlacementProgram,
    ctx: &ExecContext,
    mask: &PlacementMask,
) -> Result<PlacementProgram, ExecError> {
    let mut current = p.clone();
    'outer: loop {
        for i in 0..current.leaf_count() {
            let Ok(candidate) = current.delete_constraint(i) else {
                break 'outer;
            };
            if ctx.execute(&candidate)? == *mask {
                current = candidate;
                continue 'outer;
            }
        }
        break;
    }
    Ok(current)
}
