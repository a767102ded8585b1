//! `placeprog`: scene generation, program extraction, classifier training,
//! bootstrapping, evaluation, synthesis and the HTTP server.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use placeprog_core::bootstrap::{
    initial_dataset, load_dataset, mean_metrics, oracle_from_generated, run_bootstrap, save_dataset, IterationInputs, Proposer,
    RetrievalProposer, SceneSet,
};
use placeprog_core::classifier::{generate_training_pairs, train_classifier, ClassifierModel};
use placeprog_core::config::{ConfigError, RunConfig};
use placeprog_core::eval::{
    build_oracle_cases, category_kl, classifier_consistency, eval_location_distribution, human_cases, mean_f1_by_fraction,
    predict_case, scene_classifier_accuracy, sparsity_csv, sparsity_sweep,
};
use placeprog_core::procgen::{build_classifier_eval_set, generate_dataset, scene_id, GeneratedScene, Grammar};
use placeprog_core::scene::{load_scene, Scene};
use placeprog_core::seeds::derive_seed;
use placeprog_core::store::{self, write_atomic};
use placeprog_core::synth::{PlacedObject, Synthesizer};
use placeprog_server::{AppState, SynthEngine};

#[derive(Debug, Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Parser)]
#[command(name = "placeprog", version, about = "Placement-program pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base seed for every random choice of the stage.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON config covering all stages; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Inputs that define a trained placement model: training scenes, their
/// program dataset and a classifier.
#[derive(Args, Clone)]
struct ModelArgs {
    /// Scene set the dataset was extracted from.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes with oracle programs and masks, plus evaluation cases.
    Procgen {
        #[arg(long)]
        n: usize,
        /// Evaluation cases to write (overrides procgen.cases).
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Extract the initial program of every object in a scene set.
    Extract {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    #[command(subcommand)]
    Classifier(ClassifierCommand),
    #[command(subcommand)]
    Bootstrap(BootstrapCommand),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Furnish empty floor plans.
    Synth {
        /// A scene file (its objects are ignored) or a directory with `scenes/`.
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Add objects to a partial scene.
    Complete {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the HTTP API over a data directory.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PLACEPROG_DATA")]
        data: PathBuf,
        /// Enables `/step`; needs all three model inputs.
        #[arg(long, requires_all = ["dataset", "classifier"])]
        train: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum ClassifierCommand {
    /// Train on placements sampled from a scene set.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Consistency on oracle masks and their relaxations (needs `truth/`).
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum BootstrapCommand {
    /// Iteratively improve a program dataset; reports oracle metrics when `truth/` exists.
    Run {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Iterations (overrides bootstrap.iterations).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Location-distribution precision, recall and F1 on evaluation cases.
    Locdist {
        /// Directory with `cases/` (and `annotations/` for --human).
        #[arg(long)]
        cases: PathBuf,
        /// Use the union of human annotations as truth instead of the oracle.
        #[arg(long)]
        human: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Category KL divergence of generated scenes against a reference set.
    Ckl {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Scene classification accuracy, real vs generated.
    Sca {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bootstrap on subsets of the training scenes and evaluate each on held-out cases.
    Sparsity {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Parsed config plus the seed, after applying `--threads`.
struct Stage {
    cfg: RunConfig,
    seed: u64,
}

impl Stage {
    fn new(common: &Common) -> Result<Stage> {
        let cfg = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(n) = common.threads {
            if n == 0 {
                bail!(UsageError("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
        }
        Ok(Stage { cfg, seed: common.seed })
    }

    /// `run.json` next to the stage outputs. Paths and timings are left out so
    /// reruns produce identical bytes.
    fn manifest(&self, out: &Path, stage: &str, params: Value) -> Result<()> {
        write_json(
            &out.join("run.json"),
            &json!({
                "stage": stage,
                "version": env!("CARGO_PKG_VERSION"),
                "config_hash": self.cfg.hash(),
                "seed": self.seed,
                "params": params,
            }),
        )
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!(UsageError(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<ClassifierModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ClassifierModel::from_json(&text).with_context(|| path.display().to_string())
}

fn load_scene_file(path: &Path, cfg: &RunConfig) -> Result<Scene> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_scene(&bytes, &cfg.scene).with_context(|| path.display().to_string())
}

fn load_generated(dir: &Path, cfg: &RunConfig) -> Result<Vec<(String, GeneratedScene)>> {
    require_dir(dir, "scene set")?;
    if !dir.join("truth").is_dir() {
        bail!(UsageError(format!("{} has no truth/ directory", dir.display())));
    }
    Ok(store::load_generated(dir, &cfg.scene)?)
}

struct Trained {
    train: SceneSet,
    proposer: RetrievalProposer,
    model: ClassifierModel,
}

impl Trained {
    fn load(args: &ModelArgs, cfg: &RunConfig) -> Result<Trained> {
        require_dir(&args.train, "training set")?;
        let train = store::load_scenes(&args.train, &cfg.scene)?;
        let dataset = load_dataset(&args.dataset).with_context(|| format!("loading dataset {}", args.dataset.display()))?;
        let mut proposer = RetrievalProposer::new();
        proposer.retrain(&dataset, &train);
        Ok(Trained {
            train,
            proposer,
            model: load_model(&args.classifier)?,
        })
    }

    fn synthesizer(&self, cfg: &RunConfig) -> Result<Synthesizer<'_>> {
        let scenes: Vec<Scene> = self.train.values().cloned().collect();
        Ok(Synthesizer::fit(&scenes, &self.proposer, &self.model, cfg.exec.clone(), cfg.synthesis.clone())?)
    }
}

fn placements_json(scene: &str, placed: &[PlacedObject]) -> Vec<Value> {
    placed
        .iter()
        .map(|p| {
            json!({
                "scene": scene,
                "object": p.object.id,
                "category": p.object.category,
                "program": p.program.to_text(),
                "score": p.score,
            })
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Procgen { n, cases, out, common } => {
            let st = Stage::new(&common)?;
            let grammar = match &st.cfg.procgen.grammar {
                Some(p) => Grammar::from_json(&fs::read_to_string(p).with_context(|| format!("reading grammar {p}"))?)?,
                None => Grammar::default_bedroom(),
            };
            let gens = generate_dataset(&grammar, n, st.seed, &st.cfg.scene, &st.cfg.exec)?;
            let n_cases = cases.unwrap_or(st.cfg.procgen.cases);
            let eval_cases = build_oracle_cases(&gens, n_cases, derive_seed(st.seed, &[0xca5e]));
            let named: Vec<(String, GeneratedScene)> = gens.into_iter().enumerate().map(|(i, g)| (scene_id(i), g)).collect();
            store::save_generated(&out, &named)?;
            store::save_cases(&out, &eval_cases)?;
            let objects: usize = named.iter().map(|(_, g)| g.scene.objects.len()).sum();
            st.manifest(&out, "procgen", json!({ "scenes": n, "objects": objects, "cases": eval_cases.len() }))?;
        }
        Command::Extract { scenes, out, common } => {
            let st = Stage::new(&common)?;
            require_dir(&scenes, "scene set")?;
            let set = store::load_scenes(&scenes, &st.cfg.scene)?;
            let (dataset, failures) = initial_dataset(&set, &st.cfg.exec)?;
            save_dataset(&dataset, &out)?;
            write_json(&out.join("failures.json"), &failures)?;
            st.manifest(&out, "extract", json!({ "scenes": set.len(), "entries": dataset.entries.len(), "failures": failures.len() }))?;
        }
        Command::Classifier(ClassifierCommand::Train { scenes, out, common }) => {
            let st = Stage::new(&common)?;
            require_dir(&scenes, "scene set")?;
            let set = store::load_scenes(&scenes, &st.cfg.scene)?;
            let list: Vec<Scene> = set.values().cloned().collect();
            let tc = &st.cfg.classifier;
            let pairs = generate_training_pairs(&list, tc.draws, &tc.perturbation, &mut placeprog_core::seeds::rng_for(st.seed, &[1]))?;
            let mut vocabulary: Vec<String> = list.iter().flat_map(|s| s.objects.iter().map(|o| o.category.clone())).collect();
            vocabulary.sort();
            vocabulary.dedup();
            let (model, report) = train_classifier(&pairs, vocabulary, tc, st.seed)?;
            write_atomic(&out.join("model.json"), (model.to_json() + "\n").as_bytes())?;
            write_json(&out.join("report.json"), &report)?;
            st.manifest(&out, "classifier-train", json!({ "pairs": pairs.len() }))?;
        }
        Command::Classifier(ClassifierCommand::Eval { scenes, model, out, common }) => {
            let st = Stage::new(&common)?;
            let gens: Vec<GeneratedScene> = load_generated(&scenes, &st.cfg)?.into_iter().map(|(_, g)| g).collect();
            let model = load_model(&model)?;
            let ev = &st.cfg.eval;
            let set = build_classifier_eval_set(&gens, ev.negatives_per_object, st.seed, &st.cfg.exec)?;
            let list: Vec<Scene> = gens.into_iter().map(|g| g.scene).collect();
            let report = classifier_consistency(
                &model,
                &list,
                &set,
                ev.consistency_repeats,
                st.cfg.bootstrap.m_samples,
                st.cfg.bootstrap.threshold,
                &st.cfg.exec,
                derive_seed(st.seed, &[2]),
            )?;
            write_json(&out.join("consistency.json"), &report)?;
            st.manifest(&out, "classifier-eval", json!({ "masks": set.len() }))?;
        }
        Command::Bootstrap(BootstrapCommand::Run { scenes, dataset, classifier, iters, out, common }) => {
            let mut st = Stage::new(&common)?;
            if let Some(n) = iters {
                st.cfg.bootstrap.iterations = n;
            }
            require_dir(&scenes, "scene set")?;
            let (set, oracle) = if scenes.join("truth").is_dir() {
                let gens = store::load_generated(&scenes, &st.cfg.scene)?;
                let oracle = oracle_from_generated(gens.iter().map(|(id, g)| (id.as_str(), g)));
                (gens.into_iter().map(|(id, g)| (id, g.scene)).collect::<SceneSet>(), Some(oracle))
            } else {
                (store::load_scenes(&scenes, &st.cfg.scene)?, None)
            };
            let initial = load_dataset(&dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
            let model = load_model(&classifier)?;
            let inputs = IterationInputs {
                scenes: &set,
                scorer: &model,
                exec: &st.cfg.exec,
                cfg: &st.cfg.bootstrap,
                oracle: oracle.as_ref(),
            };
            let mut proposer = RetrievalProposer::new();
            let result = run_bootstrap(initial, &mut proposer, &inputs, st.seed)?;
            save_dataset(&result, &out)?;
            let mut csv = String::from("iteration,precision,recall,f1,entries\n");
            for s in &result.snapshots {
                csv.push_str(&format!("{},{:.6},{:.6},{:.6},{}\n", s.iteration, s.precision, s.recall, s.f1, s.entries));
            }
            write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
            st.manifest(&out, "bootstrap", json!({ "iterations": st.cfg.bootstrap.iterations, "entries": result.entries.len() }))?;
        }
        Command::Eval(EvalCommand::Locdist { cases, human, model, out, common }) => {
            let st = Stage::new(&common)?;
            require_dir(&cases, "case directory")?;
            let mut list = store::load_cases(&cases, &st.cfg.scene)?;
            if human {
                list = human_cases(&list, &store::load_annotations(&cases)?);
            }
            let trained = Trained::load(&model, &st.cfg)?;
            let tag = if human { "human" } else { "oracle" };
            let report = eval_location_distribution(
                &list,
                |c| predict_case(c, &trained.proposer, &trained.model, &st.cfg.bootstrap, &st.cfg.exec, st.seed),
                st.cfg.eval.dilation_radius,
                Some(tag.to_string()),
            )?;
            let mut csv = String::from("case,precision,recall,f1\n");
            for c in &report.cases {
                csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", c.id, c.metrics.precision, c.metrics.recall, c.metrics.f1));
            }
            write_json(&out.join("locdist.json"), &report)?;
            write_atomic(&out.join("locdist.csv"), csv.as_bytes())?;
            st.manifest(&out, "eval-locdist", json!({ "cases": report.cases.len(), "truth": tag }))?;
        }
        Command::Eval(EvalCommand::Ckl { generated, reference, out, common }) => {
            let st = Stage::new(&common)?;
            let (g, r) = load_pair(&generated, &reference, &st.cfg)?;
            let kl = category_kl(&g, &r)?;
            write_json(&out.join("ckl.json"), &json!({ "category_kl": kl, "generated": g.len(), "reference": r.len() }))?;
            st.manifest(&out, "eval-ckl", json!({}))?;
        }
        Command::Eval(EvalCommand::Sca { generated, reference, out, common }) => {
            let st = Stage::new(&common)?;
            let (g, r) = load_pair(&generated, &reference, &st.cfg)?;
            let seeds: Vec<u64> = (0..st.cfg.eval.sca_seeds.max(1) as u64).map(|i| st.seed + i).collect();
            let accs = seeds.iter().map(|&s| scene_classifier_accuracy(&g, &r, s)).collect::<Result<Vec<f64>, _>>()?;
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            write_json(&out.join("sca.json"), &json!({ "seeds": seeds, "accuracy": accs, "mean": mean }))?;
            st.manifest(&out, "eval-sca", json!({}))?;
        }
        Command::Eval(EvalCommand::Sparsity { train, cases, classifier, out, common }) => {
            let st = Stage::new(&common)?;
            let gens: Vec<GeneratedScene> = load_generated(&train, &st.cfg)?.into_iter().map(|(_, g)| g).collect();
            require_dir(&cases, "case directory")?;
            let list = store::load_cases(&cases, &st.cfg.scene)?;
            let model = load_model(&classifier)?;
            let rows = sparsity_sweep(&gens, &list, &model, &st.cfg.eval.sparsity, &st.cfg.bootstrap, &st.cfg.exec)?;
            let by_fraction: Vec<Value> = mean_f1_by_fraction(&rows).into_iter().map(|(f, f1)| json!({ "fraction": f, "heldout_f1": f1 })).collect();
            let dataset_mean = mean_metrics(&rows.iter().map(|r| r.dataset).collect::<Vec<_>>());
            write_atomic(&out.join("sparsity.csv"), sparsity_csv(&rows).as_bytes())?;
            write_json(&out.join("sparsity.json"), &json!({ "rows": rows, "mean_by_fraction": by_fraction, "dataset_mean": dataset_mean }))?;
            st.manifest(&out, "eval-sparsity", json!({ "runs": rows.len() }))?;
        }
        Command::Synth { plan, model, out, common } => {
            let st = Stage::new(&common)?;
            let plans: Vec<(String, Scene)> = if plan.is_dir() {
                store::load_scenes(&plan, &st.cfg.scene)?.into_iter().collect()
            } else {
                let id = plan.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plan".into());
                vec![(id, load_scene_file(&plan, &st.cfg)?)]
            };
            let trained = Trained::load(&model, &st.cfg)?;
            let synth = trained.synthesizer(&st.cfg)?;
            let results: Vec<Result<(Scene, Vec<PlacedObject>), _>> = {
                use rayon::prelude::*;
                plans
                    .par_iter()
                    .enumerate()
                    .map(|(i, (_, s))| synth.synthesize(s, derive_seed(st.seed, &[i as u64])))
                    .collect()
            };
            let mut placements = Vec::new();
            for ((id, _), r) in plans.iter().zip(results) {
                let (scene, placed) = r?;
                store::save_scene(&out, id, &scene)?;
                placements.extend(placements_json(id, &placed));
            }
            write_json(&out.join("placements.json"), &placements)?;
            st.manifest(&out, "synth", json!({ "scenes": plans.len() }))?;
        }
        Command::Complete { scene, model, out, common } => {
            let st = Stage::new(&common)?;
            let partial = load_scene_file(&scene, &st.cfg)?;
            let trained = Trained::load(&model, &st.cfg)?;
            let (done, placed) = trained.synthesizer(&st.cfg)?.complete(&partial, st.seed)?;
            write_atomic(&out.join("scene.json"), (placeprog_core::scene::serialize_scene(&done) + "\n").as_bytes())?;
            write_json(&out.join("placements.json"), &placements_json("scene", &placed))?;
            st.manifest(&out, "complete", json!({ "added": placed.len() }))?;
        }
        Command::Serve { port, host, data, train, dataset, classifier, common } => {
            let st = Stage::new(&common)?;
            let engine = match (train, dataset, classifier) {
                (Some(train), Some(dataset), Some(classifier)) => {
                    let set = store::load_scenes(&train, &st.cfg.scene)?;
                    let ds = load_dataset(&dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
                    Some(SynthEngine::new(&set, &ds, load_model(&classifier)?)?)
                }
                _ => None,
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| UsageError(format!("bad address {host}:{port}: {e}")))?;
            let state = AppState::load(&data, st.cfg, engine)?;
            let mut rt = tokio::runtime::Builder::new_multi_thread();
            if let Some(n) = common.threads {
                rt.worker_threads(n);
            }
            rt.enable_all().build()?.block_on(async {
                eprintln!("listening on http://{addr}");
                placeprog_server::serve(state, addr).await
            })?;
        }
    }
    Ok(())
}

fn load_pair(generated: &Path, reference: &Path, cfg: &RunConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    require_dir(generated, "generated set")?;
    require_dir(reference, "reference set")?;
    let g = store::load_scenes(generated, &cfg.scene)?.into_values().collect();
    let r = store::load_scenes(reference, &cfg.scene)?.into_values().collect();
    Ok((g, r))
}
