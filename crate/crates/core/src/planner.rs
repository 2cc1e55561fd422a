//! Cross-entropy-method planner over open-loop action sequences.
//!
//! Plans are sampled from a proposal over the flattened `HORIZON x 2` action
//! space, scored by a caller-supplied objective, and the proposal is refit to
//! the elite fraction. The first proposal is uniform over the force box; every
//! refit is a diagonal gaussian whose standard deviation never drops below a
//! floor.
//!
//! Sampling uses one counter-derived random stream per (iteration, plan), so
//! results do not depend on how many threads evaluate the objective.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envworld::{ActionSequence, HORIZON};
use crate::error::{Error, Result};

pub const PLAN_DIM: usize = 2 * HORIZON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub iters: usize,
    pub samples: usize,
    pub elite_frac: f64,
    /// Standard-deviation floor as a fraction of `force_max`.
    pub std_floor_frac: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iters: 10,
            samples: 30,
            elite_frac: 0.1,
            std_floor_frac: 0.05,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("cem.iters must be >= 1".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(Error::Config(format!("cem.elite_frac must be in (0, 1], got {}", self.elite_frac)));
        }
        if self.samples < min_population(self.elite_frac) {
            return Err(Error::Config(format!(
                "cem.samples must be >= {} for elite_frac {}",
                min_population(self.elite_frac),
                self.elite_frac
            )));
        }
        if !(self.std_floor_frac > 0.0 && self.std_floor_frac.is_finite()) {
            return Err(Error::Config("cem.std_floor_frac must be > 0".into()));
        }
        Ok(())
    }
}

// `0.1 * 30` is 3.0000000000000004 in binary floating point; round before ceil.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

fn min_population(elite_frac: f64) -> usize {
    ceil_count(1.0 / elite_frac)
}

pub fn elite_count(elite_frac: f64, n: usize) -> usize {
    ceil_count(elite_frac * n as f64).clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    Uniform,
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerDistribution {
    pub proposal: Proposal,
    pub force_max: f64,
    pub std_floor: f64,
}

impl PlannerDistribution {
    pub fn uniform(force_max: f64, std_floor_frac: f64) -> Self {
        Self {
            proposal: Proposal::Uniform,
            force_max,
            std_floor: std_floor_frac * force_max,
        }
    }

    /// Gaussian centred on `plan` with the floor standard deviation.
    pub fn around(plan: &ActionSequence, force_max: f64, std_floor_frac: f64) -> Self {
        let std_floor = std_floor_frac * force_max;
        Self {
            proposal: Proposal::Gaussian {
                mean: plan.to_flat().to_vec(),
                std: vec![std_floor; PLAN_DIM],
            },
            force_max,
            std_floor,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ActionSequence> {
        let fm = self.force_max;
        let mut flat = [0.0; PLAN_DIM];
        match &self.proposal {
            Proposal::Uniform => {
                for v in flat.iter_mut() {
                    *v = rng.random_range(-fm..=fm);
                }
            }
            Proposal::Gaussian { mean, std } => {
                for (d, v) in flat.iter_mut().enumerate() {
                    let normal = Normal::new(mean[d], std[d]).map_err(|e| Error::Numeric(e.to_string()))?;
                    *v = normal.sample(rng).clamp(-fm, fm);
                }
            }
        }
        ActionSequence::from_flat(&flat)
    }
}

fn plan_rng(seed: u64, iteration: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | index as u64);
    rng
}

/// Draws `n` plans for `iteration`; plan `k` only depends on `(seed, iteration, k)`.
pub fn sample_plans(dist: &PlannerDistribution, n: usize, seed: u64, iteration: usize) -> Result<Vec<ActionSequence>> {
    (0..n)
        .map(|k| dist.draw(&mut plan_rng(seed, iteration, k)))
        .collect()
}

/// Indices of the elite plans: highest reward first, ties to the lower index.
/// Plans scoring `-inf` are never elites.
pub fn elite_indices(rewards: &[f64], elite_frac: f64) -> Result<Vec<usize>> {
    if rewards.iter().any(|r| r.is_nan()) {
        return Err(Error::Numeric("objective returned NaN".into()));
    }
    let mut order: Vec<usize> = (0..rewards.len()).filter(|&i| rewards[i] > f64::NEG_INFINITY).collect();
    if order.is_empty() {
        return Err(Error::DegenerateObjective);
    }
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order.truncate(elite_count(elite_frac, rewards.len()));
    Ok(order)
}

/// Refits a diagonal gaussian to the elite plans.
pub fn update_distribution(
    dist: &PlannerDistribution,
    plans: &[ActionSequence],
    rewards: &[f64],
    elite_frac: f64,
) -> Result<PlannerDistribution> {
    if plans.len() != rewards.len() {
        return Err(Error::LengthMismatch(format!(
            "{} plans but {} rewards",
            plans.len(),
            rewards.len()
        )));
    }
    if plans.len() < min_population(elite_frac) {
        return Err(Error::InsufficientData(format!(
            "{} plans is fewer than 1/elite_frac",
            plans.len()
        )));
    }
    let elites = elite_indices(rewards, elite_frac)?;
    let flats: Vec<[f64; PLAN_DIM]> = elites.iter().map(|&i| plans[i].to_flat()).collect();
    let k = flats.len() as f64;
    let mut mean = vec![0.0; PLAN_DIM];
    let mut std = vec![0.0; PLAN_DIM];
    for d in 0..PLAN_DIM {
        let mu = flats.iter().map(|f| f[d]).sum::<f64>() / k;
        let var = flats.iter().map(|f| (f[d] - mu).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        mean[d] = mu;
        std[d] = var.sqrt().max(dist.std_floor);
    }
    Ok(PlannerDistribution {
        proposal: Proposal::Gaussian { mean, std },
        force_max: dist.force_max,
        std_floor: dist.std_floor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Best reward among this iteration's samples.
    pub iteration_best: f64,
    /// Best reward seen so far; never decreases.
    pub best: f64,
    /// Mean reward of this iteration's elites.
    pub elite_mean: f64,
    pub best_plan: ActionSequence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
}

impl OptimizationTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,best,iteration_best,elite_mean")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.iteration, r.best, r.iteration_best, r.elite_mean)?;
        }
        Ok(())
    }

    pub fn evaluations(&self, samples: usize) -> usize {
        self.records.len() * samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemResult {
    pub best_plan: ActionSequence,
    pub best_reward: f64,
    pub trace: OptimizationTrace,
    pub final_distribution: PlannerDistribution,
}

/// Runs CEM from the uniform proposal.
pub fn optimize<F>(objective: F, cfg: &CemConfig, force_max: f64, seed: u64) -> Result<CemResult>
where
    F: Fn(&ActionSequence) -> Result<f64> + Sync,
{
    optimize_from(PlannerDistribution::uniform(force_max, cfg.std_floor_frac), objective, cfg, seed)
}

/// Runs CEM from an arbitrary initial proposal.
pub fn optimize_from<F>(init: PlannerDistribution, objective: F, cfg: &CemConfig, seed: u64) -> Result<CemResult>
where
    F: Fn(&ActionSequence) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let mut dist = init;
    let mut trace = OptimizationTrace::default();
    let mut best: Option<(f64, ActionSequence)> = None;

    for iteration in 0..cfg.iters {
        let plans = sample_plans(&dist, cfg.samples, seed, iteration)?;
        let rewards: Vec<f64> = plans.par_iter().map(&objective).collect::<Result<_>>()?;
        let elites = elite_indices(&rewards, cfg.elite_frac)?;
        let top = elites[0];
        if best.as_ref().is_none_or(|(r, _)| rewards[top] > *r) {
            best = Some((rewards[top], plans[top]));
        }
        let (best_reward, best_plan) = best.expect("set above");
        trace.records.push(IterationRecord {
            iteration,
            iteration_best: rewards[top],
            best: best_reward,
            elite_mean: elites.iter().map(|&i| rewards[i]).sum::<f64>() / elites.len() as f64,
            best_plan,
        });
        dist = update_distribution(&dist, &plans, &rewards, cfg.elite_frac)?;
    }

    let (best_reward, best_plan) = best.expect("iters >= 1");
    Ok(CemResult {
        best_plan,
        best_reward,
        trace,
        final_distribution: dist,
    })
}
