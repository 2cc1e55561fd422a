//! External-reward tasks and the comparison between planners that start from
//! a discovered experiment, from scratch, or optimize task and curiosity
//! rewards jointly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envworld::{rollout_states, ActionSequence, EnvSpec, ObsMask, SimState, Trajectory, HORIZON};
use crate::error::{Error, Result};
use crate::hierarchy::curiosity_objective;
use crate::planner::{optimize, optimize_from, CemConfig, PlannerDistribution};
use crate::trajdist::DEFAULT_GAMMA;

pub const DEFAULT_REWARD_SCALE: f64 = 1000.0;

pub const MIN_COMPARISON_SEEDS: usize = 5;

/// Share of the achievable improvement a curve must reach to count as converged.
pub const CONVERGENCE_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Hold the block at a target height.
    Lifting,
    /// Move the block along +x at a target velocity.
    Travel,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Lifting => "lifting",
            TaskKind::Travel => "travel",
        }
    }

    /// Name of the state field the task scores.
    pub fn field(&self) -> &'static str {
        match self {
            TaskKind::Lifting => "pos_z",
            TaskKind::Travel => "vel_x",
        }
    }

    fn achieved(&self, s: &SimState) -> f64 {
        match self {
            TaskKind::Lifting => s.pos_z,
            TaskKind::Travel => s.vel_x,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lifting" => Ok(TaskKind::Lifting),
            "travel" => Ok(TaskKind::Travel),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected lifting or travel"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Height in m for lifting, x-velocity in m/s for travel.
    pub target: f64,
    pub scale: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, target: f64) -> Self {
        Self {
            kind,
            target,
            scale: DEFAULT_REWARD_SCALE,
        }
    }

    /// Checks that every env in `envs` can reach the target.
    pub fn validate_for(&self, envs: &[EnvSpec]) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("task scale must be > 0, got {}", self.scale)));
        }
        if !self.target.is_finite() {
            return Err(Error::Config("downstream.target must be finite".into()));
        }
        for e in envs {
            let w = &e.world;
            match self.kind {
                TaskKind::Lifting => {
                    if w.force_max <= e.weight() {
                        return Err(Error::Config(format!(
                            "env {} weighs {:.3} N, more than force_max {}; it cannot be lifted",
                            e.env_id,
                            e.weight(),
                            w.force_max
                        )));
                    }
                    if self.target < 0.0 || self.target > e.top() {
                        return Err(Error::Config(format!(
                            "downstream.target {} outside [0, {:.3}] for env {}",
                            self.target,
                            e.top(),
                            e.env_id
                        )));
                    }
                }
                TaskKind::Travel => {
                    // frictionless bound: full force for the whole horizon
                    let horizon_s = HORIZON as f64 * w.n_rep as f64 * w.dt_sub;
                    let v_max = w.force_max / e.mass * horizon_s;
                    if self.target <= 0.0 || self.target > v_max {
                        return Err(Error::Config(format!(
                            "downstream.target {} outside (0, {v_max:.3}] for env {}",
                            self.target, e.env_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense tracking reward over the post-action states `states[1..]`.
pub fn task_reward(task: &TaskSpec, states: &[SimState]) -> Result<f64> {
    if states.len() != HORIZON + 1 {
        return Err(Error::LengthMismatch(format!(
            "expected {} states, got {}",
            HORIZON + 1,
            states.len()
        )));
    }
    let gap: f64 = states[1..].iter().map(|s| (task.target - task.kind.achieved(s)).abs()).sum();
    Ok(-task.scale * gap)
}

/// [`task_reward`] on a masked observation trajectory; fails when the mask
/// does not record the field the task needs.
pub fn task_reward_observed(task: &TaskSpec, traj: &Trajectory, mask: ObsMask) -> Result<f64> {
    let field = task.kind.field();
    let col = mask
        .columns()
        .iter()
        .position(|c| *c == field)
        .ok_or_else(|| Error::MissingField(format!("{field} is not recorded under mask {mask}")))?;
    if traj.len() != HORIZON + 1 || traj.dim() != mask.dim() {
        return Err(Error::LengthMismatch(format!(
            "expected {} points of dim {}, got {} of dim {}",
            HORIZON + 1,
            mask.dim(),
            traj.len(),
            traj.dim()
        )));
    }
    let gap: f64 = (1..traj.len()).map(|t| (task.target - traj.point(t)[col]).abs()).sum();
    Ok(-task.scale * gap)
}

/// Task reward of `plan` summed over `envs`.
pub fn task_objective(plan: &ActionSequence, envs: &[EnvSpec], task: &TaskSpec) -> Result<f64> {
    envs.iter()
        .map(|e| task_reward(task, &rollout_states(e, plan)?))
        .sum()
}

/// Summed task reward plus the curiosity reward of the same rollouts, both
/// with unit weight.
pub fn additive_objective(
    plan: &ActionSequence,
    envs: &[EnvSpec],
    task: &TaskSpec,
    mask: ObsMask,
    gamma: f64,
) -> Result<f64> {
    if envs.len() < 2 {
        return Err(Error::InsufficientData("additive objective needs >= 2 envs".into()));
    }
    Ok(task_objective(plan, envs, task)? + curiosity_objective(plan, envs, mask, gamma)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Curious,
    VanillaCEM,
    Additive,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Curious, Condition::VanillaCEM, Condition::Additive];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Curious => "Curious",
            Condition::VanillaCEM => "VanillaCEM",
            Condition::Additive => "Additive",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub cem: CemConfig,
    /// Observation mask and smoothing for the curiosity term of Additive.
    pub mask: ObsMask,
    pub gamma: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            cem: CemConfig {
                iters: 20,
                ..CemConfig::default()
            },
            mask: ObsMask::Z,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub condition: Condition,
    pub seed: u64,
    /// Best objective value found up to and including each iteration.
    pub rewards: Vec<f64>,
    pub best_plan: ActionSequence,
    /// Summed task reward of `best_plan`; differs from the last entry of
    /// `rewards` only for Additive.
    pub final_task_reward: f64,
}

impl TrainingCurve {
    pub fn final_reward(&self) -> f64 {
        *self.rewards.last().expect("curves are non-empty")
    }

    pub fn zero_shot(&self) -> f64 {
        self.rewards[0]
    }

    /// Iterations needed until the curve closes [`CONVERGENCE_FRACTION`] of
    /// the gap between `baseline` and its final value.
    pub fn iterations_to_fraction(&self, baseline: f64) -> usize {
        let target = baseline + CONVERGENCE_FRACTION * (self.final_reward() - baseline);
        self.rewards.iter().position(|&r| r >= target).map_or(self.rewards.len(), |i| i + 1)
    }
}

fn curve(condition: Condition, seed: u64, result: crate::planner::CemResult, envs: &[EnvSpec], task: &TaskSpec) -> Result<TrainingCurve> {
    Ok(TrainingCurve {
        condition,
        seed,
        rewards: result.trace.records.iter().map(|r| r.best).collect(),
        final_task_reward: task_objective(&result.best_plan, envs, task)?,
        best_plan: result.best_plan,
    })
}

/// Task-reward CEM started from a gaussian around a discovered experiment.
pub fn finetune_curious(
    plan: &ActionSequence,
    envs: &[EnvSpec],
    task: &TaskSpec,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<TrainingCurve> {
    let force_max = world_force_max(envs)?;
    let init = PlannerDistribution::around(plan, force_max, cfg.cem.std_floor_frac);
    let result = optimize_from(init, |p| task_objective(p, envs, task), &cfg.cem, seed)?;
    curve(Condition::Curious, seed, result, envs, task)
}

/// Task-reward CEM from the uniform proposal.
pub fn finetune_vanilla(envs: &[EnvSpec], task: &TaskSpec, cfg: &FinetuneConfig, seed: u64) -> Result<TrainingCurve> {
    let force_max = world_force_max(envs)?;
    let result = optimize(|p| task_objective(p, envs, task), &cfg.cem, force_max, seed)?;
    curve(Condition::VanillaCEM, seed, result, envs, task)
}

/// CEM on task plus curiosity reward from the uniform proposal.
pub fn finetune_additive(envs: &[EnvSpec], task: &TaskSpec, cfg: &FinetuneConfig, seed: u64) -> Result<TrainingCurve> {
    let force_max = world_force_max(envs)?;
    let result = optimize(
        |p| additive_objective(p, envs, task, cfg.mask, cfg.gamma),
        &cfg.cem,
        force_max,
        seed,
    )?;
    curve(Condition::Additive, seed, result, envs, task)
}

fn world_force_max(envs: &[EnvSpec]) -> Result<f64> {
    envs.first()
        .map(|e| e.world.force_max)
        .ok_or_else(|| Error::InsufficientData("no environments".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub mean_curve: Vec<f64>,
    /// Worst seed at each iteration.
    pub min_curve: Vec<f64>,
    pub mean_zero_shot: f64,
    pub mean_final: f64,
    pub mean_final_task_reward: f64,
    /// Plan evaluations per seed, each one a rollout on every env.
    pub evaluations_per_seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
    pub env_ids: Vec<u32>,
    /// Summed task reward of the all-zero plan; 0 % progress for convergence.
    pub baseline_reward: f64,
    /// Single-env rollouts spent discovering the pretrained experiment.
    pub pretraining_rollouts: usize,
    pub conditions: Vec<ConditionSummary>,
    pub curious_iterations_to_90: Vec<usize>,
    pub vanilla_iterations_to_90: Vec<usize>,
    pub mean_curious_iterations_to_90: f64,
    pub mean_vanilla_iterations_to_90: f64,
    /// Vanilla over Curious mean iterations; reported, not asserted.
    pub sample_efficiency_ratio: f64,
    pub curves: Vec<TrainingCurve>,
}

impl ComparisonReport {
    pub fn summary(&self, condition: Condition) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,reward,condition,seed")?;
        for c in &self.curves {
            for (i, r) in c.rewards.iter().enumerate() {
                writeln!(out, "{i},{r},{},{}", c.condition, c.seed)?;
            }
        }
        Ok(())
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn summarize(condition: Condition, curves: &[&TrainingCurve], cfg: &FinetuneConfig) -> ConditionSummary {
    let iters = curves[0].rewards.len();
    ConditionSummary {
        condition,
        mean_curve: (0..iters).map(|i| mean(curves.iter().map(|c| c.rewards[i]))).collect(),
        min_curve: (0..iters)
            .map(|i| curves.iter().map(|c| c.rewards[i]).fold(f64::INFINITY, f64::min))
            .collect(),
        mean_zero_shot: mean(curves.iter().map(|c| c.zero_shot())),
        mean_final: mean(curves.iter().map(|c| c.final_reward())),
        mean_final_task_reward: mean(curves.iter().map(|c| c.final_task_reward)),
        evaluations_per_seed: cfg.cem.iters * cfg.cem.samples,
    }
}

/// Runs all three conditions for every seed on the same envs and task.
///
/// `pretrained` is the discovered experiment Curious starts from and
/// `pretraining_rollouts` what discovering it cost.
pub fn run_baseline_comparison(
    envs: &[EnvSpec],
    task: &TaskSpec,
    pretrained: &ActionSequence,
    pretraining_rollouts: usize,
    seeds: &[u64],
    cfg: &FinetuneConfig,
) -> Result<ComparisonReport> {
    if seeds.len() < MIN_COMPARISON_SEEDS {
        return Err(Error::Config(format!(
            "downstream.seeds needs at least {MIN_COMPARISON_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    task.validate_for(envs)?;
    cfg.cem.validate()?;

    let jobs: Vec<(Condition, u64)> = seeds
        .iter()
        .flat_map(|&s| Condition::ALL.into_iter().map(move |c| (c, s)))
        .collect();
    let curves: Vec<TrainingCurve> = jobs
        .par_iter()
        .map(|&(condition, seed)| match condition {
            Condition::Curious => finetune_curious(pretrained, envs, task, cfg, seed),
            Condition::VanillaCEM => finetune_vanilla(envs, task, cfg, seed),
            Condition::Additive => finetune_additive(envs, task, cfg, seed),
        })
        .collect::<Result<_>>()?;

    let baseline_reward = task_objective(&ActionSequence::default(), envs, task)?;
    let of = |c: Condition| curves.iter().filter(|k| k.condition == c).collect::<Vec<_>>();
    let to90 = |c: Condition| -> Vec<usize> { of(c).iter().map(|k| k.iterations_to_fraction(baseline_reward)).collect() };
    let curious_iterations_to_90 = to90(Condition::Curious);
    let vanilla_iterations_to_90 = to90(Condition::VanillaCEM);
    let mean_curious = mean(curious_iterations_to_90.iter().map(|&i| i as f64));
    let mean_vanilla = mean(vanilla_iterations_to_90.iter().map(|&i| i as f64));

    Ok(ComparisonReport {
        task: *task,
        seeds: seeds.to_vec(),
        env_ids: envs.iter().map(|e| e.env_id).collect(),
        baseline_reward,
        pretraining_rollouts,
        conditions: Condition::ALL.iter().map(|&c| summarize(c, &of(c), cfg)).collect(),
        curious_iterations_to_90,
        vanilla_iterations_to_90,
        mean_curious_iterations_to_90: mean_curious,
        mean_vanilla_iterations_to_90: mean_vanilla,
        sample_efficiency_ratio: mean_vanilla / mean_curious,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envworld::{make_setup, Action, WorldConstants};

    fn lifting(target: f64) -> TaskSpec {
        TaskSpec::new(TaskKind::Lifting, target)
    }

    fn states_at(z: f64) -> Vec<SimState> {
        let mut s = vec![
            SimState {
                pos_z: z,
                ..SimState::default()
            };
            HORIZON + 1
        ];
        s[0] = SimState::default();
        s
    }

    #[test]
    fn on_target_is_zero() {
        assert_eq!(task_reward(&lifting(0.3), &states_at(0.3)).unwrap(), 0.0);
    }

    #[test]
    fn constant_gap() {
        let r = task_reward(&lifting(0.5), &states_at(0.25)).unwrap();
        assert!((r - (-1000.0 * 6.0 * 0.25)).abs() < 1e-9);
    }

    #[test]
    fn zero_action_lifting() {
        let envs = make_setup("Mass", 0).unwrap();
        let r = task_objective(&ActionSequence::default(), &envs[..1], &lifting(0.5)).unwrap();
        assert_eq!(r, -3000.0);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(
            task_reward(&lifting(0.5), &[SimState::default()]),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn observed_reward_needs_field() {
        let spec = EnvSpec::new(0, 0.2, 0.5, 0.075, WorldConstants::default()).unwrap();
        let plan = ActionSequence::constant(Action::new(0.0, 5.0));
        let traj = crate::envworld::rollout(&spec, &plan, ObsMask::Z).unwrap();
        let direct = task_reward(&lifting(0.4), &rollout_states(&spec, &plan).unwrap()).unwrap();
        assert_eq!(task_reward_observed(&lifting(0.4), &traj, ObsMask::Z).unwrap(), direct);

        let traj_x = crate::envworld::rollout(&spec, &plan, ObsMask::X).unwrap();
        assert!(matches!(
            task_reward_observed(&lifting(0.4), &traj_x, ObsMask::X),
            Err(Error::MissingField(_))
        ));
        let travel = TaskSpec::new(TaskKind::Travel, 0.5);
        assert!(matches!(
            task_reward_observed(&travel, &traj, ObsMask::Z),
            Err(Error::MissingField(_))
        ));
    }

    #[test]
    fn additive_on_identical_envs_is_task_sum() {
        let w = WorldConstants::default();
        let envs: Vec<_> = (0..3).map(|i| EnvSpec::new(i, 0.3, 0.5, 0.075, w).unwrap()).collect();
        let plan = ActionSequence::constant(Action::new(1.0, 4.0));
        let task = lifting(0.4);
        let add = additive_objective(&plan, &envs, &task, ObsMask::Z, 1e-3).unwrap();
        let sum = task_objective(&plan, &envs, &task).unwrap();
        assert!((add - sum).abs() < 1e-2, "{add} vs {sum}");
        assert!(additive_objective(&plan, &envs[..1], &task, ObsMask::Z, 1e-3).is_err());
    }

    #[test]
    fn reachability() {
        let envs = make_setup("Mass", 0).unwrap();
        assert!(lifting(0.5).validate_for(&envs).is_ok());
        assert!(lifting(0.95).validate_for(&envs).is_err());
        assert!(lifting(-0.1).validate_for(&envs).is_err());
        assert!(TaskSpec::new(TaskKind::Travel, 1.0).validate_for(&envs).is_ok());
        assert!(TaskSpec::new(TaskKind::Travel, 50.0).validate_for(&envs).is_err());
        assert!(TaskSpec::new(TaskKind::Travel, -1.0).validate_for(&envs).is_err());
        let heavy = EnvSpec::new(0, 2.0, 0.5, 0.075, WorldConstants::default()).unwrap();
        assert!(lifting(0.5).validate_for(&[heavy]).is_err());
    }

    #[test]
    fn iterations_to_fraction() {
        let c = TrainingCurve {
            condition: Condition::VanillaCEM,
            seed: 0,
            rewards: vec![-100.0, -50.0, -15.0, -10.0],
            best_plan: ActionSequence::default(),
            final_task_reward: -10.0,
        };
        // threshold = -100 + 0.9 * 90 = -19
        assert_eq!(c.iterations_to_fraction(-100.0), 3);
        // threshold = -200 + 0.9 * 190 = -29
        assert_eq!(c.iterations_to_fraction(-200.0), 3);
        assert_eq!(c.iterations_to_fraction(-1000.0), 1);
    }

    #[test]
    fn finetune_is_deterministic() {
        let envs = make_setup("Mass", 0).unwrap();
        let cfg = FinetuneConfig {
            cem: CemConfig {
                iters: 3,
                ..CemConfig::default()
            },
            ..FinetuneConfig::default()
        };
        let a = finetune_vanilla(&envs, &lifting(0.5), &cfg, 4).unwrap();
        let b = finetune_vanilla(&envs, &lifting(0.5), &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rewards.len(), 3);
        assert!(a.rewards.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn comparison_covers_all_runs() {
        let envs = make_setup("Mass", 0).unwrap();
        let cfg = FinetuneConfig {
            cem: CemConfig {
                iters: 2,
                ..CemConfig::default()
            },
            ..FinetuneConfig::default()
        };
        let plan = ActionSequence::constant(Action::new(0.0, 3.0));
        let seeds = [0, 1, 2, 3, 4];
        let report = run_baseline_comparison(&envs, &lifting(0.5), &plan, 0, &seeds, &cfg).unwrap();
        assert_eq!(report.curves.len(), 15);
        for c in Condition::ALL {
            assert_eq!(report.curves.iter().filter(|k| k.condition == c).count(), 5);
            assert_eq!(report.summary(c).unwrap().mean_curve.len(), 2);
        }
        assert_eq!(report.baseline_reward, -15000.0);
        assert!(run_baseline_comparison(&envs, &lifting(0.5), &plan, 0, &seeds[..4], &cfg).is_err());
    }
}
