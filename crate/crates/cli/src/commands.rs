use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use causelab::downstream::{run_baseline_comparison, ComparisonReport, FinetuneConfig};
use causelab::envworld::{ActionSequence, EnvSpec, ObsMask};
use causelab::hierarchy::{evaluate_tree, train_tree, CausalTree, DiscoveryConfig, ExperimentNode, TreeReport};
use causelab::inference::{infer_batch, write_embeddings_csv};
use serde::{Deserialize, Serialize};

use crate::artifacts::{Manifest, RunDir};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const METRICS_SCHEMA: &str = "causelab.metrics/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: String,
    pub depth: usize,
    pub envs: usize,
    pub reward: Option<f64>,
    pub informative: Option<bool>,
    pub cluster_sizes: Option<[usize; 2]>,
    pub mean_force_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryMetrics {
    pub schema: String,
    pub setup: String,
    pub k: usize,
    pub seed: u64,
    pub mask: ObsMask,
    pub experiments: usize,
    pub leaves: usize,
    pub nodes: Vec<NodeSummary>,
    pub report: TreeReport,
}

fn summarize_node(node: &ExperimentNode) -> NodeSummary {
    let exp = node.experiment.as_ref();
    NodeSummary {
        id: node.id.clone(),
        depth: node.depth,
        envs: node.env_ids.len(),
        reward: exp.map(|e| e.reward),
        informative: exp.map(|e| e.informative),
        cluster_sizes: exp.map(|e| e.model.cluster_sizes()),
        mean_force_z: exp.map(|e| e.plan.mean_force_z()),
    }
}

fn trace_name(id: &str) -> String {
    if id.is_empty() {
        "traces/root.csv".to_string()
    } else {
        format!("traces/node_{id}.csv")
    }
}

fn echo_config(run: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    run.write("config.toml", cfg.to_toml()?.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(buf)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_tree(path: &Path) -> Result<CausalTree> {
    CausalTree::from_json(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_envs(path: &Path) -> Result<Vec<EnvSpec>> {
    let envs: Vec<EnvSpec> =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for e in &envs {
        e.validate().map_err(|err| CliError::Input(format!("{}: env {}: {err}", path.display(), e.env_id)))?;
    }
    Ok(envs)
}

pub fn discover(cfg: &RunConfig) -> Result<Manifest> {
    let setup = cfg.require_setup()?;
    let k = cfg.require_k()?;
    let envs = cfg.setup_envs()?;
    let mut run = RunDir::create(cfg.require_out()?)?;

    let dcfg = DiscoveryConfig {
        cem: cfg.cem,
        gamma: cfg.gamma,
        mask: cfg.mask.unwrap_or(ObsMask::XZ),
        seed: cfg.seed,
    };
    let tree = train_tree(&envs, k, &dcfg, Some(setup.as_str()))?;
    let report = evaluate_tree(&tree, &envs)?;
    let metrics = DiscoveryMetrics {
        schema: METRICS_SCHEMA.to_string(),
        setup: setup.to_string(),
        k,
        seed: cfg.seed,
        mask: tree.mask,
        experiments: tree.experiment_count(),
        leaves: tree.leaf_count(),
        nodes: tree.nodes().into_iter().map(summarize_node).collect(),
        report,
    };

    echo_config(&mut run, cfg)?;
    run.write_json("envs.json", &envs)?;
    run.write("tree.json", tree.to_json()?.as_bytes())?;
    run.write_json("metrics.json", &metrics)?;
    for node in tree.nodes() {
        if let Some(exp) = &node.experiment {
            let bytes = csv_bytes(|b| exp.trace.write_csv(b))?;
            run.write(&trace_name(&node.id), &bytes)?;
        }
    }
    run.finish("discover")
}

pub fn infer(cfg: &RunConfig) -> Result<Manifest> {
    let tree_path = cfg
        .infer
        .tree
        .as_deref()
        .ok_or_else(|| CliError::Config("missing required field `infer.tree` (use --tree PATH)".into()))?;
    let tree = load_tree(tree_path)?;
    let specs = match &cfg.infer.envs {
        Some(path) => load_envs(path)?,
        None => with_tree_setup(cfg, &tree)?.setup_envs()?,
    };
    let mut run = RunDir::create(cfg.require_out()?)?;
    let embeddings = infer_batch(&tree, &specs, cfg.mask.unwrap_or(tree.mask))?;
    echo_config(&mut run, cfg)?;
    let bytes = csv_bytes(|b| write_embeddings_csv(&embeddings, b))?;
    run.write("embeddings.csv", &bytes)?;
    run.finish("infer")
}

fn pretrained_plan(cfg: &RunConfig) -> Result<(ActionSequence, usize, Option<CausalTree>)> {
    let d = &cfg.downstream;
    match (&d.tree, &d.plan) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "downstream.tree and downstream.plan are mutually exclusive".into(),
        )),
        (None, None) => Err(CliError::Config(
            "missing required field `downstream.tree` or `downstream.plan` (use --tree PATH)".into(),
        )),
        (Some(path), None) => {
            let tree = load_tree(path)?;
            let exp = tree.root.active_experiment().ok_or_else(|| {
                CliError::Input(format!("{}: root node holds no informative experiment", path.display()))
            })?;
            Ok((exp.plan, tree.root_rollouts(), Some(tree)))
        }
        (None, Some(path)) => {
            let plan: ActionSequence = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok((plan, 0, None))
        }
    }
}

/// `cfg` with the setup taken from `tree` when the config names none.
fn with_tree_setup(cfg: &RunConfig, tree: &CausalTree) -> Result<RunConfig> {
    let mut resolved = cfg.clone();
    if resolved.setup.is_none() {
        if let Some(name) = tree.setup.as_deref() {
            resolved.setup = Some(name.parse()?);
        }
    }
    Ok(resolved)
}

pub fn downstream(cfg: &RunConfig) -> Result<Manifest> {
    let (plan, pretraining_rollouts, tree) = pretrained_plan(cfg)?;
    let resolved = match &tree {
        Some(t) => with_tree_setup(cfg, t)?,
        None => cfg.clone(),
    };
    let mut envs = resolved.setup_envs()?;
    if let Some(ids) = &cfg.downstream.env_ids {
        if let Some(missing) = ids.iter().find(|id| !envs.iter().any(|e| e.env_id == **id)) {
            return Err(CliError::Config(format!("downstream.env_ids: unknown env id {missing}")));
        }
        envs.retain(|e| ids.contains(&e.env_id));
    }
    let mask = match &tree {
        Some(t) => {
            if t.world != cfg.world {
                return Err(CliError::Input("tree world constants differ from the configured [world]".into()));
            }
            if let Some(m) = cfg.mask {
                if m != t.mask {
                    return Err(CliError::Input(format!(
                        "configured mask {m} does not match the tree's mask {}",
                        t.mask
                    )));
                }
            }
            t.mask
        }
        None => cfg.mask.unwrap_or(ObsMask::XZ),
    };
    let task = cfg.downstream.task_spec();
    let fcfg = FinetuneConfig {
        cem: causelab::planner::CemConfig {
            iters: cfg.downstream.iters,
            ..cfg.cem
        },
        mask,
        gamma: cfg.gamma,
    };
    let mut run = RunDir::create(cfg.require_out()?)?;
    let report = run_baseline_comparison(&envs, &task, &plan, pretraining_rollouts, &cfg.downstream.seeds, &fcfg)?;

    echo_config(&mut run, &resolved)?;
    run.write_json("comparison.json", &report)?;
    let bytes = csv_bytes(|b| report.write_curves_csv(b))?;
    run.write("curves.csv", &bytes)?;
    run.finish("downstream")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.3}"))
}

pub fn report(cfg: &RunConfig) -> Result<Manifest> {
    if cfg.report.runs.is_empty() {
        return Err(CliError::Config("missing required field `report.runs` (use --runs DIR)".into()));
    }
    let mut md = String::from("# Run summary\n");
    let mut levels_csv = String::from("run,depth,nodes,envs,factor,median_purity,threshold_purity,nmi\n");
    let mut curves_csv = String::from("run,condition,iteration,mean,min\n");

    for dir in &cfg.report.runs {
        let manifest = Manifest::load(dir)?;
        manifest.verify(dir)?;
        let label = dir.display().to_string();
        let _ = writeln!(md, "\n## {label} ({})\n", manifest.command);
        match manifest.command.as_str() {
            "discover" => {
                let m: DiscoveryMetrics = serde_json::from_str(&read_text(&dir.join("metrics.json"))?)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let _ = writeln!(
                    md,
                    "Setup {}, k = {}, seed {}, mask {}: {} experiments, {} leaves, {} full cells.\n",
                    m.setup, m.k, m.seed, m.mask, m.experiments, m.leaves, m.report.full_cells
                );
                md.push_str("| depth | nodes | envs | best factor | threshold purity | median purity | NMI |\n");
                md.push_str("|---|---|---|---|---|---|---|\n");
                for l in &m.report.levels {
                    let best = l.best();
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} | {} | {} | {} |",
                        l.depth,
                        l.nodes,
                        l.envs,
                        l.best_factor.map_or("-".to_string(), |f| f.to_string()),
                        fmt_opt(best.map(|b| b.threshold_purity)),
                        fmt_opt(best.map(|b| b.median_purity)),
                        fmt_opt(best.map(|b| b.nmi)),
                    );
                    for s in &l.scores {
                        let _ = writeln!(
                            levels_csv,
                            "{label},{},{},{},{},{},{},{}",
                            l.depth, l.nodes, l.envs, s.factor, s.median_purity, s.threshold_purity, s.nmi
                        );
                    }
                }
                md.push_str("\n| code | envs |\n|---|---|\n");
                for (code, n) in &m.report.leaf_occupancy {
                    let _ = writeln!(md, "| {} | {n} |", if code.is_empty() { "(none)" } else { code });
                }
            }
            "infer" => {
                let text = read_text(&dir.join("embeddings.csv"))?;
                let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
                for line in text.lines().skip(1) {
                    let cols: Vec<&str> = line.split(',').collect();
                    if cols.len() != 3 {
                        return Err(CliError::Input(format!("malformed embeddings row {line:?}")));
                    }
                    *counts.entry((cols[1].to_string(), cols[2].to_string())).or_insert(0) += 1;
                }
                md.push_str("| bits | valid prefix | envs |\n|---|---|---|\n");
                for ((bits, valid), n) in counts {
                    let _ = writeln!(md, "| {} | {valid} | {n} |", if bits.is_empty() { "(none)" } else { &bits });
                }
            }
            "downstream" => {
                let r: ComparisonReport = serde_json::from_str(&read_text(&dir.join("comparison.json"))?)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let _ = writeln!(
                    md,
                    "Task {} (target {}), {} seeds, baseline reward {:.1}, pretraining rollouts {}.\n",
                    r.task.kind,
                    r.task.target,
                    r.seeds.len(),
                    r.baseline_reward,
                    r.pretraining_rollouts
                );
                md.push_str("| condition | zero-shot | final | final task reward | evaluations/seed |\n");
                md.push_str("|---|---|---|---|---|\n");
                for c in &r.conditions {
                    let _ = writeln!(
                        md,
                        "| {} | {:.1} | {:.1} | {:.1} | {} |",
                        c.condition, c.mean_zero_shot, c.mean_final, c.mean_final_task_reward, c.evaluations_per_seed
                    );
                    for (i, (mean, min)) in c.mean_curve.iter().zip(&c.min_curve).enumerate() {
                        let _ = writeln!(curves_csv, "{label},{},{i},{mean},{min}", c.condition);
                    }
                }
                let _ = writeln!(
                    md,
                    "\nIterations to 90% of final: Curious {:.2}, VanillaCEM {:.2}, ratio {:.2}.",
                    r.mean_curious_iterations_to_90, r.mean_vanilla_iterations_to_90, r.sample_efficiency_ratio
                );
            }
            other => {
                let _ = writeln!(md, "No summary for `{other}` runs.");
            }
        }
    }

    let mut run = RunDir::create(cfg.require_out()?)?;
    echo_config(&mut run, cfg)?;
    run.write("summary.md", md.as_bytes())?;
    run.write("levels.csv", levels_csv.as_bytes())?;
    run.write("curves.csv", curves_csv.as_bytes())?;
    run.finish("report")
}
