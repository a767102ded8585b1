//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero when any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use placeprog_core::bootstrap::{
    dataset_metrics, initial_dataset, mean_metrics, oracle_from_generated, run_bootstrap, IterationInputs,
    OracleMasks, ProgramDataset, Proposer, RetrievalProposer, SceneSet,
};
use placeprog_core::classifier::{generate_training_pairs, train_classifier, ClassifierModel};
use placeprog_core::config::RunConfig;
use placeprog_core::dsl::{parse_program, serialize_program};
use placeprog_core::eval::{
    build_oracle_cases, category_kl, classifier_consistency, mean_f1_by_fraction, scene_classifier_accuracy, sparsity_sweep,
    SparsityConfig,
};
use placeprog_core::exec::{placement_of, ExecContext};
use placeprog_core::mask::{compare_masks, mask_and, mask_or, BitGrid, PlacementMask};
use placeprog_core::procgen::{build_classifier_eval_set, generate_dataset, scene_id, GeneratedScene, Grammar};
use placeprog_core::scene::{Scene, SceneDocument};
use placeprog_core::seeds::{derive_seed, rng_for};
use placeprog_core::synth::Synthesizer;
use rand::Rng;

const TRAIN_SEED: u64 = 1;
const HELDOUT_SEED: u64 = 2;
const REFERENCE_SEED: u64 = 3;
const TRAIN_SCENES: usize = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Everything several criteria share, built on first use.
struct World {
    cfg: RunConfig,
    train: Vec<GeneratedScene>,
    train_set: SceneSet,
    oracle: OracleMasks,
    heldout: Vec<GeneratedScene>,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let cfg = RunConfig::default();
        let grammar = Grammar::default_bedroom();
        let train = generate_dataset(&grammar, TRAIN_SCENES, TRAIN_SEED, &cfg.scene, &cfg.exec).unwrap();
        let heldout = generate_dataset(&grammar, 200, HELDOUT_SEED, &cfg.scene, &cfg.exec).unwrap();
        let ids: Vec<String> = (0..train.len()).map(scene_id).collect();
        let train_set = ids.iter().cloned().zip(train.iter().map(|g| g.scene.clone())).collect();
        let oracle = oracle_from_generated(ids.iter().map(String::as_str).zip(&train));
        World { cfg, train, train_set, oracle, heldout }
    })
}

fn classifier() -> &'static ClassifierModel {
    static MODEL: OnceLock<ClassifierModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let w = world();
        let scenes: Vec<Scene> = w.train.iter().map(|g| g.scene.clone()).collect();
        let tc = &w.cfg.classifier;
        let pairs = generate_training_pairs(&scenes, tc.draws, &tc.perturbation, &mut rng_for(TRAIN_SEED, &[1])).unwrap();
        let mut vocabulary: Vec<String> = scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.category.clone())).collect();
        vocabulary.sort();
        vocabulary.dedup();
        train_classifier(&pairs, vocabulary, tc, TRAIN_SEED).unwrap().0
    })
}

fn bootstrapped() -> &'static ProgramDataset {
    static DATASET: OnceLock<ProgramDataset> = OnceLock::new();
    DATASET.get_or_init(|| {
        let w = world();
        let (initial, _) = initial_dataset(&w.train_set, &w.cfg.exec).unwrap();
        let inputs = IterationInputs {
            scenes: &w.train_set,
            scorer: classifier(),
            exec: &w.cfg.exec,
            cfg: &w.cfg.bootstrap,
            oracle: Some(&w.oracle),
        };
        run_bootstrap(initial, &mut RetrievalProposer::new(), &inputs, TRAIN_SEED).unwrap()
    })
}

fn executor_matches_brute_force() -> Verdict {
    let cfg = RunConfig::default().exec;
    let mut rng = rng_for(0xacce, &[1]);
    let (mut pairs, mut mismatches, mut nonempty) = (0, 0, 0);
    let mut kinds = BTreeMap::new();
    while pairs < 250 {
        let (scene, query) = support::random_scene(&mut rng);
        let depth = rng.gen_range(0..=3);
        let program = support::random_program_for(&mut rng, &scene, depth);
        let got = ExecContext::new(scene.clone(), query.clone(), cfg.clone()).execute(&program);
        let want = support::Oracle::new(&scene, &query, &cfg).execute(&program);
        match (got, want) {
            (Ok(m), Ok(bits)) => {
                mismatches += (support::mask_bits(&m) != bits) as usize;
                nonempty += !m.is_empty() as usize;
            }
            _ => mismatches += 1,
        }
        for c in program.leaves() {
            *kinds.entry(c.ctype.name()).or_insert(0) += 1;
        }
        pairs += 1;
    }
    let all_kinds = kinds.len() == 4;
    verdict(
        mismatches == 0 && all_kinds,
        format!("{pairs} pairs, {mismatches} mismatches, {nonempty} nonempty masks, leaf kinds {kinds:?}"),
    )
}

fn extraction_is_sound() -> Verdict {
    let cfg = RunConfig::default();
    let gens = generate_dataset(&Grammar::default_bedroom(), 260, 0xe7, &cfg.scene, &cfg.exec).unwrap();
    let mut ids = Vec::new();
    let mut objects = 0;
    for (i, g) in gens.iter().enumerate() {
        if objects >= 1000 {
            break;
        }
        ids.push(i);
        objects += g.scene.objects.len();
    }
    let set: SceneSet = ids.iter().map(|&i| (scene_id(i), gens[i].scene.clone())).collect();
    let names: Vec<String> = ids.iter().map(|&i| scene_id(i)).collect();
    let oracle = oracle_from_generated(names.iter().map(String::as_str).zip(ids.iter().map(|&i| &gens[i])));
    let (ds, failures) = initial_dataset(&set, &cfg.exec).unwrap();
    let mut contained = 0;
    for e in &ds.entries {
        let scene = &set[&e.scene];
        let k = scene.object_index(&e.object).unwrap();
        let ctx = ExecContext::for_object(scene, k, &cfg.exec);
        let at = placement_of(&scene.objects[k], ctx.grid()).unwrap();
        contained += ctx.execute(&e.program).unwrap().get(at) as usize;
    }
    let mean = mean_metrics(&dataset_metrics(&ds, &set, &cfg.exec, &oracle, cfg.eval.dilation_radius).unwrap());
    let pass = objects >= 1000 && failures.is_empty() && contained == ds.entries.len() && mean.precision >= 0.95 && mean.recall < 0.9;
    verdict(
        pass,
        format!(
            "{objects} objects, {} failures, {contained}/{} contain their placement, precision {:.3}, recall {:.3}",
            failures.len(),
            ds.entries.len(),
            mean.precision,
            mean.recall
        ),
    )
}

fn bootstrap_improves_recall() -> Verdict {
    let snaps = &bootstrapped().snapshots;
    let recall: Vec<f64> = snaps.iter().map(|s| s.recall).collect();
    let precision: Vec<f64> = snaps.iter().map(|s| s.precision).collect();
    let gain = recall.last().unwrap() - recall[0];
    let monotone = recall.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let min_precision = precision.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = snaps.len() == 6 && gain >= 0.15 && min_precision >= 0.80 && monotone;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    verdict(pass, format!("recall [{}] gain {gain:.3}, precision [{}]", fmt(&recall), fmt(&precision)))
}

fn classifier_gate() -> Verdict {
    let w = world();
    let eval_scenes = &w.heldout[..60];
    let set = build_classifier_eval_set(eval_scenes, w.cfg.eval.negatives_per_object, HELDOUT_SEED, &w.cfg.exec).unwrap();
    let scenes: Vec<Scene> = eval_scenes.iter().map(|g| g.scene.clone()).collect();
    let b = &w.cfg.bootstrap;
    let r = classifier_consistency(classifier(), &scenes, &set, w.cfg.eval.consistency_repeats, b.m_samples, b.threshold, &w.cfg.exec, 7).unwrap();
    verdict(
        r.fp_rate <= 0.10 && r.p_cons >= 0.90,
        format!("{} positives, {} negatives, fp_rate {:.3}, p_cons {:.3}, n_cons {:.3}", r.positives, r.negatives, r.fp_rate, r.p_cons, r.n_cons),
    )
}

fn sparsity_is_robust() -> Verdict {
    let w = world();
    let cases = build_oracle_cases(&w.heldout[100..], 100, HELDOUT_SEED);
    let sweep = SparsityConfig { fractions: vec![1.0, 0.05], seeds: vec![0, 1, 2] };
    let rows = sparsity_sweep(&w.train, &cases, classifier(), &sweep, &w.cfg.bootstrap, &w.cfg.exec).unwrap();
    let f1 = mean_f1_by_fraction(&rows);
    let (full, sparse) = (f1[0].1, f1[1].1);
    verdict(full - sparse <= 0.10, format!("held-out F1 {full:.3} at 100%, {sparse:.3} at 5% ({} cases, 3 seeds)", cases.len()))
}

fn synthesis_is_sane() -> Verdict {
    let w = world();
    let mut proposer = RetrievalProposer::new();
    proposer.retrain(bootstrapped(), &w.train_set);
    let train_scenes: Vec<Scene> = w.train.iter().map(|g| g.scene.clone()).collect();
    let synth = Synthesizer::fit(&train_scenes, &proposer, classifier(), w.cfg.exec.clone(), w.cfg.synthesis.clone()).unwrap();
    let plans: Vec<Scene> = w.heldout[..200]
        .iter()
        .map(|g| {
            let doc = g.scene.document();
            Scene::from_document(SceneDocument { objects: Vec::new(), ..doc }, &w.cfg.scene).unwrap()
        })
        .collect();
    let generated: Vec<Scene> = {
        use rayon::prelude::*;
        plans.par_iter().enumerate().map(|(i, p)| synth.synthesize(p, derive_seed(9, &[i as u64])).unwrap().0).collect()
    };
    let reference: Vec<Scene> = generate_dataset(&Grammar::default_bedroom(), 200, REFERENCE_SEED, &w.cfg.scene, &w.cfg.exec)
        .unwrap()
        .into_iter()
        .map(|g| g.scene)
        .collect();

    // Every object must sit in the collision-free mask of the scene before it, and the
    // finished scene must reload under the ingestion overlap rule.
    let mut violations = 0;
    for s in &generated {
        for k in 0..s.objects.len() {
            let ctx = ExecContext::for_object(s, k, &w.cfg.exec);
            let ok = placement_of(&s.objects[k], ctx.grid()).is_some_and(|p| ctx.free_mask().get(p));
            violations += !ok as usize;
        }
        violations += Scene::from_document(s.document(), &w.cfg.scene).is_err() as usize;
    }
    let kl = category_kl(&generated, &reference).unwrap();
    let accs: Vec<f64> = (0..5).map(|seed| scene_classifier_accuracy(&generated, &reference, seed).unwrap()).collect();
    let sca = accs.iter().sum::<f64>() / accs.len() as f64;
    let objects: usize = generated.iter().map(|s| s.objects.len()).sum();
    verdict(
        kl <= 0.05 && violations == 0 && (50.0..=75.0).contains(&sca),
        format!(
            "{} scenes, {objects} objects, category_kl {kl:.4}, {violations} collision violations, SCA {sca:.1}% (seeds {accs:?})",
            generated.len()
        ),
    )
}

fn max_filter(m: &BitGrid, r: usize) -> BitGrid {
    let r = r as i64;
    BitGrid::from_fn(m.width(), m.height(), |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                xx >= 0 && yy >= 0 && (xx as usize) < m.width() && (yy as usize) < m.height() && m.get(xx as usize, yy as usize)
            })
        })
    })
}

fn algebra_and_metrics() -> Verdict {
    let mut rng = rng_for(0xa19, &[]);
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok && !failures.iter().any(|f| f == what) {
            failures.push(what.to_string());
        }
    };
    for _ in 0..1000 {
        let depth = rng.gen_range(0..6);
        let p = support::random_program(&mut rng, depth);
        let text = serialize_program(&p);
        check(parse_program(&text).as_ref() == Ok(&p), "parse/serialize round trip");
    }
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(1..70), rng.gen_range(1..20));
        let grid = placeprog_core::scene::GridSpec::new(w, h, 0.05, [0.0, 0.0]).unwrap();
        let random_mask = |rng: &mut rand_chacha::ChaCha8Rng| {
            let density = rng.gen_range(0.0..1.0);
            let slices = std::array::from_fn(|_| support::random_bitgrid(rng, w, h, density));
            PlacementMask::from_slices(&grid, slices).unwrap()
        };
        let (a, b, c) = (random_mask(&mut rng), random_mask(&mut rng), random_mask(&mut rng));
        let and = |x: &PlacementMask, y: &PlacementMask| mask_and(x, y).unwrap();
        let or = |x: &PlacementMask, y: &PlacementMask| mask_or(x, y).unwrap();
        check(and(&a, &b) == and(&b, &a) && or(&a, &b) == or(&b, &a), "commutativity");
        check(and(&and(&a, &b), &c) == and(&a, &and(&b, &c)) && or(&or(&a, &b), &c) == or(&a, &or(&b, &c)), "associativity");
        check(and(&a, &or(&b, &c)) == or(&and(&a, &b), &and(&a, &c)), "distributivity");
        check(and(&a, &b).complement() == or(&a.complement(), &b.complement()), "De Morgan");
        check(or(&a, &PlacementMask::empty(&grid)) == a && and(&a, &PlacementMask::empty(&grid)).is_empty(), "identity");
        check(PlacementMask::from_json(&a.to_json()).as_ref() == Ok(&a), "RLE round trip");
        let (sa, sb) = (a.slices()[0].clone(), b.slices()[0].clone());
        let r = rng.gen_range(0..4);
        let da = sa.dilate(r);
        check(da == max_filter(&sa, r), "dilation equals max filter");
        check(sa.is_subset_of(&da) && sa.dilate(0) == sa, "dilation extensive");
        check(sa.or(&sb).dilate(r) == da.or(&sb.dilate(r)), "dilation distributes over union");
        check(sa.and(&sb).dilate(r).is_subset_of(&da), "dilation monotone");
    }
    let mut pred = BitGrid::new(6, 6);
    let mut truth = BitGrid::new(6, 6);
    for x in 0..4 {
        pred.set(x, 0, true);
    }
    truth.set(3, 0, true);
    truth.set(5, 5, true);
    let m = compare_masks(&pred, &truth, 0).unwrap();
    check(m.precision == 0.25 && m.recall == 0.5 && (m.f1 - 1.0 / 3.0).abs() < 1e-12, "compare_masks hand case");
    check(compare_masks(&truth, &truth, 1).unwrap().f1 == 1.0, "compare_masks identical");

    let cfg = RunConfig::default();
    let room = vec![[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [0.0, 6.0]];
    let scene = |cats: &[&str]| {
        let mut doc = Scene::empty("bedroom", room.clone(), &cfg.scene).unwrap().document();
        for (i, c) in cats.iter().enumerate() {
            doc.objects.push(placeprog_core::scene::ObjectInstance {
                id: format!("{c}_{i}"),
                category: c.to_string(),
                size: [0.4, 0.4],
                position: [0.5 + 0.6 * i as f64, 0.5],
                orientation: placeprog_core::geom::Orientation::N,
                holds_humans: false,
                is_wall: false,
            });
        }
        Scene::from_document(doc, &cfg.scene).unwrap()
    };
    let kl = category_kl(&[scene(&["bed", "bed", "bed", "desk"])], &[scene(&["bed", "desk"])]).unwrap();
    let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
    check((kl - expected).abs() < 1e-5, "category_kl hand case");

    verdict(failures.is_empty(), if failures.is_empty() { "all properties hold".into() } else { format!("failed: {}", failures.join(", ")) })
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Run every batch stage of the CLI into `root`, with `threads` worker threads.
fn run_pipeline(root: &Path, threads: usize) -> Result<(), String> {
    let config = root.join("config.json");
    fs::write(
        &config,
        r#"{
  "classifier": { "draws": 1500, "epochs": 5 },
  "bootstrap": { "iterations": 2, "subset_fraction": 0.5 },
  "synthesis": { "max_objects": 6 },
  "eval": { "sca_seeds": 2, "sparsity": { "fractions": [1.0, 0.5], "seeds": [0] } }
}"#,
    )
    .unwrap();
    let p = |rel: &str| root.join(rel).display().to_string();
    let threads = threads.to_string();
    let stages: Vec<Vec<String>> = [
        vec!["procgen", "--n", "12", "--cases", "6", "--out", &p("gen")],
        vec!["procgen", "--n", "6", "--cases", "0", "--seed", "5", "--out", &p("ref")],
        vec!["extract", "--scenes", &p("gen"), "--out", &p("initial")],
        vec!["classifier", "train", "--scenes", &p("gen"), "--out", &p("clf")],
        vec!["classifier", "eval", "--scenes", &p("ref"), "--model", &p("clf/model.json"), "--out", &p("clf_eval")],
        vec!["bootstrap", "run", "--scenes", &p("gen"), "--dataset", &p("initial"), "--classifier", &p("clf/model.json"), "--out", &p("boot")],
        vec!["eval", "locdist", "--cases", &p("gen"), "--train", &p("gen"), "--dataset", &p("boot"), "--classifier", &p("clf/model.json"), "--out", &p("locdist")],
        vec!["synth", "--plan", &p("ref"), "--train", &p("gen"), "--dataset", &p("boot"), "--classifier", &p("clf/model.json"), "--out", &p("synth")],
        vec!["complete", "--scene", &p(&format!("ref/scenes/{}.json", scene_id(0))), "--train", &p("gen"), "--dataset", &p("boot"), "--classifier", &p("clf/model.json"), "--out", &p("complete")],
        vec!["eval", "ckl", "--generated", &p("synth"), "--reference", &p("ref"), "--out", &p("ckl")],
        vec!["eval", "sca", "--generated", &p("synth"), "--reference", &p("ref"), "--out", &p("sca")],
        vec!["eval", "sparsity", "--train", &p("gen"), "--cases", &p("gen"), "--classifier", &p("clf/model.json"), "--out", &p("sparsity")],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for args in stages {
        let out = Command::new(env!("CARGO_BIN_EXE_placeprog"))
            .args(&args)
            .args(["--config", &config.display().to_string(), "--threads", &threads])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn cli_is_deterministic() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, 1), (&b, 4)] {
        fs::create_dir_all(dir).unwrap();
        if let Err(e) = run_pipeline(dir, threads) {
            return verdict(false, e);
        }
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).chain(tb.keys().filter(|k| !ta.contains_key(*k))).collect();
    let stages = ta.keys().filter(|k| k.ends_with("run.json")).count();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{stages} stages, {} files byte-identical across reruns (1 vs 4 threads)", ta.len())
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

type Criterion = (u8, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "executor equals brute force", Duration::from_secs(60), executor_matches_brute_force),
        (2, "extraction soundness", Duration::from_secs(300), extraction_is_sound),
        (3, "bootstrap improves recall", Duration::from_secs(1800), bootstrap_improves_recall),
        (4, "classifier gate", Duration::from_secs(300), classifier_gate),
        (5, "sparsity robustness", Duration::from_secs(3600), sparsity_is_robust),
        (6, "synthesis sanity", Duration::from_secs(600), synthesis_is_sane),
        (7, "algebra and metric properties", Duration::from_secs(60), algebra_and_metrics),
        (8, "CLI determinism", Duration::from_secs(3600), cli_is_deterministic),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed < limit;
        failed += !pass as usize;
        println!(
            "criterion {id} {}: {name}: {} [{:.1}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
