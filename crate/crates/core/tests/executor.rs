mod support;

use placeprog_core::dsl::{or_join, Constraint, Direction, Node, PlacementProgram};
use placeprog_core::exec::{ExecConfig, ExecContext, ExecError, QuerySpec};
use placeprog_core::geom::Orientation;
use placeprog_core::mask::BitGrid;
use placeprog_core::scene::{Scene, SceneConfig};
use placeprog_core::seeds::rng_for;
use rand::Rng;
use support::{mask_bits, random_program_for, random_scene, Oracle, OracleError};

#[test]
fn random_programs_match_brute_force() {
    let mut rng = rng_for(0xb1f, &[]);
    let cfg = ExecConfig::default();
    let mut nonempty = 0;
    for n in 0..300 {
        let (scene, query) = random_scene(&mut rng);
        let depth = rng.gen_range(0..=3);
        let program = random_program_for(&mut rng, &scene, depth);
        let ctx = ExecContext::new(scene.clone(), query.clone(), cfg.clone());
        let got = ctx.execute(&program).unwrap();
        let want = Oracle::new(&scene, &query, &cfg).execute(&program).unwrap();
        assert!(mask_bits(&got) == want, "pair {n}: {program}");
        nonempty += !got.is_empty() as usize;
    }
    assert!(nonempty > 50, "only {nonempty} nonempty masks");
}

#[test]
fn reference_errors_agree_with_brute_force() {
    let mut rng = rng_for(0xe7, &[]);
    let cfg = ExecConfig::default();
    let mut seen_not_human = false;
    for _ in 0..60 {
        let (scene, query) = random_scene(&mut rng);
        let Some(r) = scene.all_objects().find(|o| !o.holds_humans) else { continue };
        let reach = Constraint::reachable_by_arm(&r.id, Direction::Up);
        let p = PlacementProgram::new(Node::and(Node::Leaf(Constraint::align("wall_0")), Node::Leaf(reach)));
        let ctx = ExecContext::new(scene.clone(), query.clone(), cfg.clone());
        assert_eq!(ctx.execute(&p), Err(ExecError::ReferenceHoldsNoHumans(r.id.clone())));
        assert_eq!(Oracle::new(&scene, &query, &cfg).execute(&p), Err(OracleError::NotHuman(r.id.clone())));
        seen_not_human = true;
        let missing = PlacementProgram::leaf(Constraint::face("ghost_9"));
        assert_eq!(ctx.execute(&missing), Err(ExecError::UnresolvedReference("ghost_9".into())));
    }
    assert!(seen_not_human);
}

fn square_room(side: f64) -> Scene {
    Scene::empty("test", vec![[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]], &SceneConfig::default()).unwrap()
}

fn query(w: f64, d: f64) -> QuerySpec {
    QuerySpec { category: "desk".into(), size: [w, d], holds_humans: false }
}

fn north_wall(scene: &Scene) -> String {
    scene.walls.iter().find(|w| w.orientation == Orientation::S).unwrap().id.clone()
}

#[test]
fn align_fills_one_slice_before_filtering() {
    let scene = square_room(4.0);
    let wall = north_wall(&scene);
    let ctx = ExecContext::new(scene.clone(), query(0.4, 0.4), ExecConfig::default());
    let raw = ctx.execute_raw(&Node::Leaf(Constraint::align(&wall))).unwrap();
    for o in Orientation::ALL {
        let expect = if o == Orientation::S { scene.grid.w * scene.grid.h } else { 0 };
        assert_eq!(raw.slice(o).count(), expect);
    }
}

#[test]
fn attach_band_sits_against_the_wall_face() {
    let scene = square_room(4.0);
    let wall = north_wall(&scene);
    let ctx = ExecContext::new(scene.clone(), query(0.4, 0.4), ExecConfig::default());
    let m = ctx.execute(&PlacementProgram::leaf(Constraint::attach(&wall, Direction::Up))).unwrap();
    let cell = scene.grid.cell;
    assert!(!m.is_empty());
    for p in m.iter_ones() {
        // The north wall faces south, so its `up` side points into the room.
        let distance = 4.0 - scene.grid.cell_center(p.cell)[1];
        assert!(distance >= 0.2 - cell / 2.0 - 1e-9 && distance <= 0.2 + 0.15 + 1e-9, "{distance}");
    }
    // Every row in the band is full across the room's free interior.
    let rows: Vec<usize> = (0..scene.grid.h).filter(|&j| m.slice(Orientation::N).get(64, j)).collect();
    assert!(rows.len() >= (0.15 / cell) as usize);
}

/// For each leaf in left-to-right order, whether its parent is an `And`.
fn parent_is_and(node: &Node, parent_and: bool, out: &mut Vec<bool>) {
    match node {
        Node::Leaf(_) => out.push(parent_and),
        Node::And(a, b) => {
            parent_is_and(a, true, out);
            parent_is_and(b, true, out);
        }
        Node::Or(a, b) => {
            parent_is_and(a, false, out);
            parent_is_and(b, false, out);
        }
    }
}

#[test]
fn deleting_an_and_operand_never_shrinks() {
    let mut rng = rng_for(0x3e1a, &[]);
    let cfg = ExecConfig::default();
    let mut checked = 0;
    for _ in 0..150 {
        let (scene, q) = random_scene(&mut rng);
        let p = random_program_for(&mut rng, &scene, 3);
        let ctx = ExecContext::new(scene, q, cfg.clone());
        let full = ctx.execute(&p).unwrap();
        let mut parents = Vec::new();
        parent_is_and(&p.root, false, &mut parents);
        for (leaf, and) in parents.into_iter().enumerate() {
            if and {
                let relaxed = p.delete_constraint(leaf).unwrap();
                assert!(relaxed.leaf_count() < p.leaf_count());
                assert!(full.is_subset_of(&ctx.execute(&relaxed).unwrap()), "{p} -> {relaxed}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "{checked}");
}

#[test]
fn or_and_match_raw_composition_and_or_join_is_identity() {
    let mut rng = rng_for(0x0c, &[]);
    let cfg = ExecConfig::default();
    for _ in 0..100 {
        let (scene, q) = random_scene(&mut rng);
        let a = random_program_for(&mut rng, &scene, 2);
        let b = random_program_for(&mut rng, &scene, 2);
        let ctx = ExecContext::new(scene, q, cfg.clone());
        let (ra, rb) = (ctx.execute_raw(&a.root).unwrap(), ctx.execute_raw(&b.root).unwrap());
        let or = PlacementProgram::new(Node::or(a.root.clone(), b.root.clone()));
        let and = PlacementProgram::new(Node::and(a.root.clone(), b.root.clone()));
        assert_eq!(ctx.execute(&or).unwrap(), ctx.collision_filter(&ra.or(&rb).unwrap()));
        assert_eq!(ctx.execute(&and).unwrap(), ctx.collision_filter(&ra.and(&rb).unwrap()));
        assert_eq!(ctx.execute(&or_join(vec![a.clone()]).unwrap()).unwrap(), ctx.execute(&a).unwrap());
    }
}

#[test]
fn collision_filter_clears_cells_over_an_object() {
    let mut scene = square_room(4.0);
    let g = scene.grid.clone();
    let bed = placeprog_core::exec::QuerySpec { category: "bed".into(), size: [1.0, 1.0], holds_humans: true }.instantiate(
        "bed_0".into(),
        placeprog_core::mask::Placement { cell: (40, 40), orientation: Orientation::N },
        &g,
    );
    scene.objects.push(bed);
    let ctx = ExecContext::new(scene, query(1.0, 1.0), ExecConfig::default());
    let free = ctx.free_mask();
    assert!(!free.slice(Orientation::N).get(40, 40));
    assert!(free.slice(Orientation::N).get(60, 60));
    // Cells whose footprint leaves the room are never free.
    assert!(!free.slice(Orientation::N).get(0, 0));
    let empty = BitGrid::new(g.w, g.h);
    assert!(free.slices().iter().all(|s| s.same_shape(&empty)));
}
