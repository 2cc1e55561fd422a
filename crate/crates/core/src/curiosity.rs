//! Bimodal clustering model and the curiosity reward.
//!
//! The model partitions a set of trajectories into two clusters with a
//! deterministic two-medoid search over a precomputed distance matrix. The
//! reward scores a partition by how far apart the clusters are and how tight
//! each of them is:
//!
//! ```text
//! reward = min d(C0, C1) - max d(C0, C0) - max d(C1, C1)
//! ```

use serde::{Deserialize, Serialize};

use crate::envworld::Trajectory;
use crate::error::{Error, Result};
use crate::trajdist::{soft_dtw, DistanceMatrix};

/// Identifies how cluster labels are assigned, stored with serialized models.
pub const LABELING_RULE: &str = "label0-smaller-medoid-displacement/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Indices of the label-0 and label-1 medoids in the training set.
    pub medoid_indices: [usize; 2],
    /// Per training trajectory, 0 or 1.
    pub assignment: Vec<u8>,
    pub medoid_trajectories: [Trajectory; 2],
    pub gamma: f64,
    pub labeling_rule: String,
    /// Assign/update rounds until the medoids stopped changing.
    pub iterations: usize,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> [usize; 2] {
        let ones = self.assignment.iter().filter(|&&l| l == 1).count();
        [self.assignment.len() - ones, ones]
    }
}

fn nearer(is_medoid: [bool; 2], d0: f64, d1: f64) -> u8 {
    if is_medoid[0] {
        0
    } else if is_medoid[1] {
        1
    } else if d0 <= d1 {
        0
    } else {
        1
    }
}

/// Orders a medoid pair so that label 0 has the smaller total displacement.
fn canonical(pair: [usize; 2], trajs: &[Trajectory]) -> [usize; 2] {
    let d0 = trajs[pair[0]].total_displacement();
    let d1 = trajs[pair[1]].total_displacement();
    if d1 < d0 || (d1 == d0 && pair[1] < pair[0]) {
        [pair[1], pair[0]]
    } else {
        pair
    }
}

fn farthest_pair(dm: &DistanceMatrix) -> [usize; 2] {
    let n = dm.n();
    let mut best = [0, 1];
    let mut best_d = dm.get(0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let d = dm.get(i, j);
            if d > best_d {
                best_d = d;
                best = [i, j];
            }
        }
    }
    best
}

fn assign(dm: &DistanceMatrix, trajs: &[Trajectory], medoids: [usize; 2]) -> Vec<u8> {
    (0..dm.n())
        .map(|k| {
            if k == medoids[1] {
                return 1;
            }
            let is_medoid = [
                k == medoids[0] || trajs[k] == trajs[medoids[0]],
                trajs[k] == trajs[medoids[1]],
            ];
            nearer(is_medoid, dm.get(k, medoids[0]), dm.get(k, medoids[1]))
        })
        .collect()
}

// Cost ties (every two-member cluster has one) go to the smaller total
// displacement, then the lower index, so the choice does not depend on order alone.
fn cluster_medoid(dm: &DistanceMatrix, trajs: &[Trajectory], members: &[usize]) -> usize {
    let mut best = members[0];
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for &c in members {
        let cost: f64 = members.iter().map(|&k| dm.get(c, k)).sum();
        let key = (cost, trajs[c].total_displacement());
        if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best_key = key;
            best = c;
        }
    }
    best
}

/// Fits the two-medoid model.
///
/// Medoids start at the farthest pair under `dm`. Each round assigns every
/// trajectory to its nearer medoid (ties go to label 0) and then moves each
/// medoid to the member minimizing the summed in-cluster distance; rounds
/// repeat until the medoids stop changing.
pub fn fit_bimodal(dm: &DistanceMatrix, trajs: &[Trajectory], gamma: f64) -> Result<ClusterModel> {
    let n = dm.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("bimodal fit needs >= 2 trajectories, got {n}")));
    }
    if trajs.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} trajectories for a {n}x{n} distance matrix",
            trajs.len()
        )));
    }

    let mut medoids = canonical(farthest_pair(dm), trajs);
    let mut assignment = assign(dm, trajs, medoids);
    let mut iterations = 1;
    let mut seen = vec![medoids];
    while iterations <= n {
        let members: [Vec<usize>; 2] = [0u8, 1].map(|label| (0..n).filter(|&k| assignment[k] == label).collect());
        let candidate = canonical(
            [cluster_medoid(dm, trajs, &members[0]), cluster_medoid(dm, trajs, &members[1])],
            trajs,
        );
        if candidate == medoids || candidate[0] == candidate[1] || seen.contains(&candidate) {
            break;
        }
        medoids = candidate;
        seen.push(medoids);
        assignment = assign(dm, trajs, medoids);
        iterations += 1;
    }

    Ok(ClusterModel {
        medoid_indices: medoids,
        assignment,
        medoid_trajectories: [trajs[medoids[0]].clone(), trajs[medoids[1]].clone()],
        gamma,
        labeling_rule: LABELING_RULE.to_string(),
        iterations,
    })
}

/// Separation-minus-spread score of a binary partition. An empty cluster
/// scores `-inf`; a singleton cluster has zero spread.
pub fn curiosity_reward(dm: &DistanceMatrix, assignment: &[u8]) -> Result<f64> {
    let n = dm.n();
    if assignment.len() != n {
        return Err(Error::LengthMismatch(format!(
            "assignment of length {} for {n} trajectories",
            assignment.len()
        )));
    }
    let mut inter = f64::INFINITY;
    let mut spread = [f64::NEG_INFINITY; 2];
    let mut count = [0usize; 2];
    for i in 0..n {
        let li = assignment[i] as usize;
        if li > 1 {
            return Err(Error::Contract(format!("label {li} is not binary")));
        }
        count[li] += 1;
        for (j, &lj) in assignment.iter().enumerate().skip(i + 1) {
            let d = dm.get(i, j);
            if lj as usize == li {
                spread[li] = spread[li].max(d);
            } else {
                inter = inter.min(d);
            }
        }
    }
    if count[0] == 0 || count[1] == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let spread = spread.map(|s| if s == f64::NEG_INFINITY { 0.0 } else { s });
    Ok(inter - (spread[0] + spread[1]))
}

/// Label of the nearer medoid under soft-DTW with the model's smoothing.
pub fn assign_cluster(model: &ClusterModel, traj: &Trajectory) -> Result<u8> {
    let [m0, m1] = &model.medoid_trajectories;
    if traj.dim() != m0.dim() {
        return Err(Error::DimensionMismatch {
            expected: m0.dim(),
            got: traj.dim(),
        });
    }
    let is_medoid = [traj == m0, traj == m1];
    if is_medoid[0] || is_medoid[1] {
        return Ok(nearer(is_medoid, 0.0, 0.0));
    }
    let d0 = soft_dtw(traj, m0, model.gamma)?;
    let d1 = soft_dtw(traj, m1, model.gamma)?;
    Ok(nearer(is_medoid, d0, d1))
}
