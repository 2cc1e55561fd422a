//! Distances between trajectories: soft dynamic time warping and an
//! exhaustive exact-DTW reference.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envworld::Trajectory;
use crate::error::{Error, Result};

/// Smoothing used by the pipeline unless configured otherwise.
pub const DEFAULT_GAMMA: f64 = 0.1;

/// Longest trajectory [`dtw_exact`] will enumerate.
pub const EXACT_MAX_LEN: usize = 12;

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("trajectories must have at least one point".into()));
    }
    Ok(())
}

/// `-gamma * ln(e^{-x/gamma} + e^{-y/gamma} + e^{-z/gamma})`, shifted by the minimum.
#[inline]
fn softmin3(x: f64, y: f64, z: f64, gamma: f64) -> f64 {
    let m = x.min(y).min(z);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = (-(x - m) / gamma).exp() + (-(y - m) / gamma).exp() + (-(z - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Soft-DTW value `R(n, m)` under squared Euclidean ground cost.
pub fn soft_dtw(a: &Trajectory, b: &Trajectory, gamma: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    let m = b.len();
    // prev[j] = R(i-1, j), cur[j] = R(i, j); column 0 is the +inf border except R(0,0).
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for pa in a.points() {
        cur[0] = f64::INFINITY;
        for (j, pb) in b.points().enumerate() {
            let cost = sq_euclidean(pa, pb);
            cur[j + 1] = cost + softmin3(prev[j + 1], cur[j], prev[j], gamma);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let value = prev[m];
    if !value.is_finite() {
        return Err(Error::Numeric("soft-DTW produced a non-finite value".into()));
    }
    Ok(value)
}

/// Exact DTW by enumerating every monotone alignment path.
///
/// Exponential in the lengths; only meant as a reference for short inputs.
pub fn dtw_exact(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() > EXACT_MAX_LEN || b.len() > EXACT_MAX_LEN {
        return Err(Error::Contract(format!(
            "dtw_exact enumerates paths only up to length {EXACT_MAX_LEN}"
        )));
    }
    fn walk(a: &Trajectory, b: &Trajectory, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + sq_euclidean(a.point(i), b.point(j));
        if i + 1 == a.len() && j + 1 == b.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    Ok(best)
}

/// Symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from a full row-major table; the table must be symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::LengthMismatch(format!("row of length {} in {n}x{n} matrix", row.len())));
            }
            entries.extend_from_slice(row);
        }
        let dm = Self { n, entries };
        for i in 0..n {
            for j in 0..n {
                let v = dm.get(i, j);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("entry ({i},{j}) is not finite")));
                }
                if v != dm.get(j, i) {
                    return Err(Error::Contract(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(dm)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.n + j] = value;
        self.entries[j * self.n + i] = value;
    }

    /// The sub-matrix over `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = indices.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in indices {
            for &j in indices {
                entries.push(self.get(i, j));
            }
        }
        Self { n, entries }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Soft-DTW between every pair; each unordered pair is computed once.
pub fn pairwise_distances(trajs: &[Trajectory], gamma: f64) -> Result<DistanceMatrix> {
    let n = trajs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 trajectories, got {n}")));
    }
    let dim = trajs[0].dim();
    if let Some(t) = trajs.iter().find(|t| t.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: t.dim(),
        });
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| soft_dtw(&trajs[i], &trajs[j], gamma)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut dm = DistanceMatrix {
        n,
        entries: vec![0.0; n * n],
    };
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            dm.set(i, i + k, v);
        }
    }
    Ok(dm)
}
