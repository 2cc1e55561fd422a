//! Recursive experiment discovery.
//!
//! Each node searches for the experiment that best splits its environments in
//! two, labels every environment with the fitted model, and hands each label
//! group to a child node which repeats the search. Level `j` of the tree
//! therefore holds up to `2^j` experiments and contributes bit `j` of every
//! environment's embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curiosity::{curiosity_reward, fit_bimodal, ClusterModel};
use crate::envworld::{rollout, ActionSequence, EnvSpec, Factor, ObsMask, Trajectory, WorldConstants};
use crate::error::{Error, Result};
use crate::planner::{optimize, CemConfig, OptimizationTrace};
use crate::trajdist::{pairwise_distances, DEFAULT_GAMMA};

pub const TREE_SCHEMA: &str = "causelab.tree/v1";

/// Splits scoring below this are treated as non-informative.
pub const SEPARATION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub cem: CemConfig,
    pub gamma: f64,
    pub mask: ObsMask,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            cem: CemConfig::default(),
            gamma: DEFAULT_GAMMA,
            mask: ObsMask::XZ,
            seed: 0,
        }
    }
}

/// Result of scoring one plan on a set of environments.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trajectories: Vec<Trajectory>,
    pub model: ClusterModel,
    pub reward: f64,
}

/// Rolls `plan` out on every env, clusters the outcomes and scores the split.
pub fn evaluate_plan(plan: &ActionSequence, envs: &[EnvSpec], mask: ObsMask, gamma: f64) -> Result<Evaluation> {
    let trajectories = envs
        .iter()
        .map(|e| rollout(e, plan, mask))
        .collect::<Result<Vec<_>>>()?;
    let dm = pairwise_distances(&trajectories, gamma)?;
    let model = fit_bimodal(&dm, &trajectories, gamma)?;
    let reward = curiosity_reward(&dm, &model.assignment)?;
    Ok(Evaluation {
        trajectories,
        model,
        reward,
    })
}

/// The curiosity reward of `plan` on `envs`.
pub fn curiosity_objective(plan: &ActionSequence, envs: &[EnvSpec], mask: ObsMask, gamma: f64) -> Result<f64> {
    evaluate_plan(plan, envs, mask, gamma).map(|e| e.reward)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub plan: ActionSequence,
    pub model: ClusterModel,
    pub reward: f64,
    /// False when the best split scored below [`SEPARATION_FLOOR`].
    pub informative: bool,
    /// Label per entry of the node's `env_ids`.
    pub labels: Vec<u8>,
    #[serde(skip)]
    pub trace: OptimizationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentNode {
    /// Label path from the root, e.g. `"01"`; the root is `""`.
    pub id: String,
    pub depth: usize,
    pub env_ids: Vec<u32>,
    pub experiment: Option<Experiment>,
    /// Either empty or `[label-0 child, label-1 child]`.
    pub children: Vec<ExperimentNode>,
}

impl ExperimentNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The experiment, if this node holds one that produced a usable split.
    pub fn active_experiment(&self) -> Option<&Experiment> {
        self.experiment.as_ref().filter(|e| e.informative)
    }

    pub fn child(&self, label: u8) -> Option<&ExperimentNode> {
        self.children.get(label as usize)
    }

    /// Depth-first iterator over this node and its descendants.
    pub fn walk(&self) -> Vec<&ExperimentNode> {
        let mut out = vec![self];
        let mut i = 0;
        while i < out.len() {
            let node = out[i];
            out.extend(node.children.iter());
            i += 1;
        }
        out.sort_by(|a, b| (a.depth, &a.id).cmp(&(b.depth, &b.id)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTree {
    pub schema: String,
    /// Number of levels (causal factors) sought.
    pub k: usize,
    pub mask: ObsMask,
    pub gamma: f64,
    /// Per-node search budget.
    pub cem: CemConfig,
    pub world: WorldConstants,
    pub seed: u64,
    pub setup: Option<String>,
    pub root: ExperimentNode,
}

impl CausalTree {
    pub fn nodes(&self) -> Vec<&ExperimentNode> {
        self.root.walk()
    }

    pub fn experiment_count(&self) -> usize {
        self.nodes().iter().filter(|n| n.experiment.is_some()).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes().iter().filter(|n| n.is_leaf()).count()
    }

    /// Bits each training env received during training, keyed by env id.
    pub fn training_paths(&self) -> BTreeMap<u32, Vec<u8>> {
        let mut out = BTreeMap::new();
        for &id in &self.root.env_ids {
            let mut bits = Vec::new();
            let mut node = &self.root;
            while let Some(exp) = node.active_experiment() {
                let pos = node.env_ids.iter().position(|&e| e == id).expect("child envs are a subset");
                let label = exp.labels[pos];
                bits.push(label);
                match node.child(label) {
                    Some(child) => node = child,
                    None => break,
                }
            }
            out.insert(id, bits);
        }
        out
    }

    /// Single-env rollouts spent on the root experiment.
    pub fn root_rollouts(&self) -> usize {
        match self.root.experiment {
            Some(_) => self.cem.iters * self.cem.samples * self.root.env_ids.len(),
            None => 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Contract(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text).map_err(|e| Error::Contract(format!("invalid tree file: {e}")))?;
        if tree.schema != TREE_SCHEMA {
            return Err(Error::Contract(format!("unsupported tree schema {:?}", tree.schema)));
        }
        Ok(tree)
    }
}

fn node_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the path, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes().chain(std::iter::once(b'|')) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Discovers one experiment for `envs`. Fewer than two envs give a leaf
/// without an experiment.
pub fn train_node(envs: &[EnvSpec], depth: usize, id: &str, cfg: &DiscoveryConfig) -> Result<ExperimentNode> {
    let env_ids: Vec<u32> = envs.iter().map(|e| e.env_id).collect();
    if envs.len() < 2 {
        return Ok(ExperimentNode {
            id: id.to_string(),
            depth,
            env_ids,
            experiment: None,
            children: Vec::new(),
        });
    }
    let force_max = envs[0].world.force_max;
    let result = optimize(
        |plan| curiosity_objective(plan, envs, cfg.mask, cfg.gamma),
        &cfg.cem,
        force_max,
        node_seed(cfg.seed, id),
    )?;
    let eval = evaluate_plan(&result.best_plan, envs, cfg.mask, cfg.gamma)?;
    Ok(ExperimentNode {
        id: id.to_string(),
        depth,
        env_ids,
        experiment: Some(Experiment {
            plan: result.best_plan,
            labels: eval.model.assignment.clone(),
            model: eval.model,
            reward: eval.reward,
            informative: eval.reward >= SEPARATION_FLOOR,
            trace: result.trace,
        }),
        children: Vec::new(),
    })
}

fn check_envs(envs: &[EnvSpec]) -> Result<()> {
    let Some(first) = envs.first() else {
        return Ok(());
    };
    for e in envs {
        e.validate()?;
        if e.world != first.world {
            return Err(Error::Contract(format!(
                "env {} uses different world constants than env {}",
                e.env_id, first.env_id
            )));
        }
    }
    let mut ids: Vec<u32> = envs.iter().map(|e| e.env_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("duplicate env ids".into()));
    }
    Ok(())
}

fn train_subtree(envs: &[EnvSpec], depth: usize, id: String, k: usize, cfg: &DiscoveryConfig) -> Result<ExperimentNode> {
    if depth >= k {
        return Ok(ExperimentNode {
            env_ids: envs.iter().map(|e| e.env_id).collect(),
            id,
            depth,
            experiment: None,
            children: Vec::new(),
        });
    }
    let mut node = train_node(envs, depth, &id, cfg)?;
    let Some(exp) = node.active_experiment() else {
        return Ok(node);
    };
    let split: [Vec<EnvSpec>; 2] = [0u8, 1].map(|label| {
        envs.iter()
            .zip(&exp.labels)
            .filter(|(_, &l)| l == label)
            .map(|(e, _)| *e)
            .collect()
    });
    let (left, right) = rayon::join(
        || train_subtree(&split[0], depth + 1, format!("{id}0"), k, cfg),
        || train_subtree(&split[1], depth + 1, format!("{id}1"), k, cfg),
    );
    node.children = vec![left?, right?];
    Ok(node)
}

/// Builds a `k`-level tree of experiments over `envs`.
pub fn train_tree(envs: &[EnvSpec], k: usize, cfg: &DiscoveryConfig, setup: Option<&str>) -> Result<CausalTree> {
    if envs.is_empty() {
        return Err(Error::InsufficientData("no environments".into()));
    }
    if k >= 1 && envs.len() < 2 {
        return Err(Error::InsufficientData("a tree with k >= 1 needs at least 2 environments".into()));
    }
    check_envs(envs)?;
    cfg.cem.validate()?;
    let root = train_subtree(envs, 0, String::new(), k, cfg)?;
    Ok(CausalTree {
        schema: TREE_SCHEMA.to_string(),
        k,
        mask: cfg.mask,
        gamma: cfg.gamma,
        cem: cfg.cem,
        world: envs[0].world,
        seed: cfg.seed,
        setup: setup.map(str::to_string),
        root,
    })
}

// ---------------------------------------------------------------------------
// Evaluation against ground truth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub factor: Factor,
    /// Agreement with the factor's median split, best label matching.
    pub median_purity: f64,
    /// Agreement with the best single threshold on the factor.
    pub threshold_purity: f64,
    /// Normalized mutual information with the median split.
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub depth: usize,
    pub nodes: usize,
    pub envs: usize,
    pub best_factor: Option<Factor>,
    pub scores: Vec<FactorScore>,
}

impl LevelMetrics {
    pub fn best(&self) -> Option<&FactorScore> {
        self.best_factor.and_then(|f| self.scores.iter().find(|s| s.factor == f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub levels: Vec<LevelMetrics>,
    /// Env count per embedding, over embeddings of every length.
    pub leaf_occupancy: BTreeMap<String, usize>,
    /// Distinct full-length (`k`-bit) embeddings among training envs.
    pub full_cells: usize,
}

/// Fraction of positions where `labels` and `classes` agree, maximized over
/// the two ways of matching labels to classes.
pub fn binary_agreement(labels: &[u8], classes: &[bool]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let agree = labels.iter().zip(classes).filter(|(&l, &c)| (l == 1) == c).count();
    let acc = agree as f64 / n as f64;
    acc.max(1.0 - acc)
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information (geometric-mean normalization) between a
/// binary labelling and a binary class vector. Zero when either is constant.
pub fn binary_nmi(labels: &[u8], classes: &[bool]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint = [[0usize; 2]; 2];
    for (&l, &c) in labels.iter().zip(classes) {
        joint[l as usize][c as usize] += 1;
    }
    let lab = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let cls = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let (hl, hc) = (entropy(&lab, n), entropy(&cls, n));
    if hl <= 0.0 || hc <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (l, row) in joint.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count > 0 {
                let pj = count as f64 / n as f64;
                mi += pj * (pj / (lab[l] as f64 / n as f64 * cls[c] as f64 / n as f64)).ln();
            }
        }
    }
    (mi / (hl * hc).sqrt()).clamp(0.0, 1.0)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splits values at their median into two non-empty classes, or `None` for
/// a constant factor.
pub fn median_split(values: &[f64]) -> Option<Vec<bool>> {
    let med = median(values);
    let above: Vec<bool> = values.iter().map(|&v| v > med).collect();
    if above.iter().any(|&c| c) && above.iter().any(|&c| !c) {
        return Some(above);
    }
    let at_or_above: Vec<bool> = values.iter().map(|&v| v >= med).collect();
    (at_or_above.iter().any(|&c| c) && at_or_above.iter().any(|&c| !c)).then_some(at_or_above)
}

/// Best agreement of `labels` with any threshold split of `values`.
pub fn threshold_purity(labels: &[u8], values: &[f64]) -> Option<f64> {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    distinct
        .windows(2)
        .map(|w| {
            let t = 0.5 * (w[0] + w[1]);
            let classes: Vec<bool> = values.iter().map(|&v| v > t).collect();
            binary_agreement(labels, &classes)
        })
        .max_by(f64::total_cmp)
}

/// Scores of one split (`labels` over envs with the given factor `values`).
/// `None` when the factor does not vary across these envs.
pub fn score_split(factor: Factor, labels: &[u8], values: &[f64]) -> Option<FactorScore> {
    let classes = median_split(values)?;
    Some(FactorScore {
        factor,
        median_purity: binary_agreement(labels, &classes),
        threshold_purity: threshold_purity(labels, values)?,
        nmi: binary_nmi(labels, &classes),
    })
}

/// Compares every level's splits with the generating factors.
///
/// Level scores are env-weighted means over the level's experiment nodes,
/// each node scored against the factor values of its own envs. A factor that
/// is constant inside a node cannot explain that node's split and contributes
/// chance agreement (0.5) and zero NMI.
pub fn evaluate_tree(tree: &CausalTree, specs: &[EnvSpec]) -> Result<TreeReport> {
    let by_id: BTreeMap<u32, &EnvSpec> = specs.iter().map(|s| (s.env_id, s)).collect();
    for id in &tree.root.env_ids {
        if !by_id.contains_key(id) {
            return Err(Error::UnknownEnv(*id));
        }
    }

    let nodes = tree.nodes();
    let mut levels = Vec::new();
    for depth in 0..tree.k {
        let level_nodes: Vec<&ExperimentNode> = nodes
            .iter()
            .copied()
            .filter(|n| n.depth == depth && n.active_experiment().is_some())
            .collect();
        let envs: usize = level_nodes.iter().map(|n| n.env_ids.len()).sum();
        let mut scores = Vec::new();
        for factor in Factor::ALL {
            let mut sums = (0.0, 0.0, 0.0);
            let mut varies = false;
            for node in &level_nodes {
                let exp = node.active_experiment().expect("filtered");
                let values: Vec<f64> = node.env_ids.iter().map(|id| by_id[id].factor(factor)).collect();
                let w = node.env_ids.len() as f64;
                match score_split(factor, &exp.labels, &values) {
                    Some(s) => {
                        varies = true;
                        sums.0 += w * s.median_purity;
                        sums.1 += w * s.threshold_purity;
                        sums.2 += w * s.nmi;
                    }
                    None => {
                        sums.0 += w * 0.5;
                        sums.1 += w * 0.5;
                    }
                }
            }
            if varies && envs > 0 {
                let n = envs as f64;
                scores.push(FactorScore {
                    factor,
                    median_purity: sums.0 / n,
                    threshold_purity: sums.1 / n,
                    nmi: sums.2 / n,
                });
            }
        }
        let best_factor = scores
            .iter()
            .max_by(|a, b| {
                a.threshold_purity
                    .total_cmp(&b.threshold_purity)
                    .then(a.nmi.total_cmp(&b.nmi))
                    .then(b.factor.cmp(&a.factor))
            })
            .map(|s| s.factor);
        levels.push(LevelMetrics {
            depth,
            nodes: level_nodes.len(),
            envs,
            best_factor,
            scores,
        });
    }

    let mut leaf_occupancy = BTreeMap::new();
    let mut full = std::collections::BTreeSet::new();
    for bits in tree.training_paths().values() {
        let code: String = bits.iter().map(|b| char::from(b'0' + b)).collect();
        if bits.len() == tree.k {
            full.insert(code.clone());
        }
        *leaf_occupancy.entry(code).or_insert(0) += 1;
    }
    Ok(TreeReport {
        levels,
        leaf_occupancy,
        full_cells: full.len(),
    })
}
