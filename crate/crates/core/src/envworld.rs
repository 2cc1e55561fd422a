//! Deterministic block world.
//!
//! A single block rests on a floor below a ceiling and is pushed by a 2-D
//! force (horizontal `x`, vertical `z`). Each environment differs only in its
//! hidden factors: mass, friction coefficient and size. Which factors act on a
//! transition depends on the state: friction only acts while the block is in
//! ground contact, size only matters when the block reaches the ceiling, and
//! mass decides whether the block leaves the ground at all.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of control steps in an experiment.
pub const HORIZON: usize = 6;

/// Constants shared by every environment of a setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConstants {
    pub gravity: f64,
    pub ceiling_height: f64,
    pub dt_sub: f64,
    pub n_rep: u32,
    pub force_max: f64,
}

impl Default for WorldConstants {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            ceiling_height: 1.0,
            dt_sub: 0.01,
            n_rep: 10,
            force_max: 10.0,
        }
    }
}

impl WorldConstants {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.gravity, self.ceiling_height, self.dt_sub, self.force_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("world constants must be finite".into()));
        }
        if self.gravity <= 0.0 {
            return Err(Error::Config("world.gravity must be > 0".into()));
        }
        if self.ceiling_height <= 0.0 {
            return Err(Error::Config("world.ceiling_height must be > 0".into()));
        }
        if self.dt_sub <= 0.0 {
            return Err(Error::Config("world.dt_sub must be > 0".into()));
        }
        if self.n_rep == 0 {
            return Err(Error::Config("world.n_rep must be >= 1".into()));
        }
        if self.force_max <= 0.0 {
            return Err(Error::Config("world.force_max must be > 0".into()));
        }
        Ok(())
    }
}

/// One environment instance: hidden causal factors plus world constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub env_id: u32,
    /// kg
    pub mass: f64,
    pub friction_mu: f64,
    /// Block half-height in metres.
    pub size: f64,
    #[serde(flatten)]
    pub world: WorldConstants,
}

impl EnvSpec {
    pub fn new(env_id: u32, mass: f64, friction_mu: f64, size: f64, world: WorldConstants) -> Result<Self> {
        let spec = Self {
            env_id,
            mass,
            friction_mu,
            size,
            world,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::Config(format!("env {}: mass must be > 0", self.env_id)));
        }
        if !(self.friction_mu.is_finite() && self.friction_mu >= 0.0) {
            return Err(Error::Config(format!("env {}: friction_mu must be >= 0", self.env_id)));
        }
        if !(self.size.is_finite() && self.size > 0.0) {
            return Err(Error::Config(format!("env {}: size must be > 0", self.env_id)));
        }
        if self.size >= self.world.ceiling_height {
            return Err(Error::Config(format!(
                "env {}: size must be below ceiling_height",
                self.env_id
            )));
        }
        Ok(())
    }

    /// Highest reachable block-centre height.
    pub fn top(&self) -> f64 {
        self.world.ceiling_height - self.size
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.world.gravity
    }

    /// Value of a hidden factor.
    pub fn factor(&self, factor: Factor) -> f64 {
        match factor {
            Factor::Mass => self.mass,
            Factor::Friction => self.friction_mu,
            Factor::Size => self.size,
        }
    }
}

/// The hidden causal factors that vary across environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Mass,
    Friction,
    Size,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Mass, Factor::Friction, Factor::Size];
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Mass => "mass",
            Factor::Friction => "friction",
            Factor::Size => "size",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pos_x: f64,
    pub vel_x: f64,
    /// Height of the block centre above its resting height; 0 means on the floor.
    pub pos_z: f64,
    pub vel_z: f64,
}

impl SimState {
    fn is_finite(&self) -> bool {
        self.pos_x.is_finite() && self.vel_x.is_finite() && self.pos_z.is_finite() && self.vel_z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub force_x: f64,
    pub force_z: f64,
}

impl Action {
    pub fn new(force_x: f64, force_z: f64) -> Self {
        Self { force_x, force_z }
    }

    pub fn clamped(self, force_max: f64) -> Self {
        Self {
            force_x: self.force_x.clamp(-force_max, force_max),
            force_z: self.force_z.clamp(-force_max, force_max),
        }
    }
}

/// An open-loop experiment: exactly [`HORIZON`] actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence(pub [Action; HORIZON]);

impl ActionSequence {
    pub fn constant(action: Action) -> Self {
        Self([action; HORIZON])
    }

    /// Builds a sequence from `[fx0, fz0, fx1, fz1, ...]`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * HORIZON {
            return Err(Error::LengthMismatch(format!(
                "action vector has {} entries, expected {}",
                flat.len(),
                2 * HORIZON
            )));
        }
        let mut actions = [Action::default(); HORIZON];
        for (a, pair) in actions.iter_mut().zip(flat.chunks_exact(2)) {
            *a = Action::new(pair[0], pair[1]);
        }
        Ok(Self(actions))
    }

    pub fn to_flat(&self) -> [f64; 2 * HORIZON] {
        let mut flat = [0.0; 2 * HORIZON];
        for (i, a) in self.0.iter().enumerate() {
            flat[2 * i] = a.force_x;
            flat[2 * i + 1] = a.force_z;
        }
        flat
    }

    pub fn actions(&self) -> &[Action; HORIZON] {
        &self.0
    }

    pub fn mean_force_z(&self) -> f64 {
        self.0.iter().map(|a| a.force_z).sum::<f64>() / HORIZON as f64
    }
}

/// Which position coordinates are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObsMask {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "xz")]
    XZ,
}

impl ObsMask {
    pub fn dim(&self) -> usize {
        match self {
            ObsMask::X | ObsMask::Z => 1,
            ObsMask::XZ => 2,
        }
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            ObsMask::X => &["pos_x"],
            ObsMask::Z => &["pos_z"],
            ObsMask::XZ => &["pos_x", "pos_z"],
        }
    }

    fn project(&self, state: &SimState, out: &mut Vec<f64>) {
        match self {
            ObsMask::X => out.push(state.pos_x),
            ObsMask::Z => out.push(state.pos_z),
            ObsMask::XZ => {
                out.push(state.pos_x);
                out.push(state.pos_z);
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ObsMask::X => "x",
            ObsMask::Z => "z",
            ObsMask::XZ => "xz",
        }
    }
}

impl fmt::Display for ObsMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObsMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(ObsMask::X),
            "z" => Ok(ObsMask::Z),
            "xz" | "zx" => Ok(ObsMask::XZ),
            other => Err(Error::Config(format!("unknown observation mask {other:?}"))),
        }
    }
}

/// A sequence of observation vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("trajectory dimension must be >= 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch(format!(
                "{} values do not divide into points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("trajectory contains non-finite values".into()));
        }
        Ok(Self { dim, data })
    }

    /// Builds a trajectory from explicit points, which must share one dimension.
    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Sum over time of the Euclidean distance from the first point.
    pub fn total_displacement(&self) -> f64 {
        let Some(origin) = self.points().next() else {
            return 0.0;
        };
        self.points()
            .map(|p| p.iter().zip(origin).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .sum()
    }

    /// Writes one row per time step, with one column per observed coordinate.
    pub fn write_csv<W: Write>(&self, mask: ObsMask, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,{}", mask.columns().join(","))?;
        for (t, p) in self.points().enumerate() {
            let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Named environment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetupName {
    Mass,
    SizeMass,
    FrictionSizeMass,
}

impl SetupName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetupName::Mass => "Mass",
            SetupName::SizeMass => "SizeMass",
            SetupName::FrictionSizeMass => "FrictionSizeMass",
        }
    }

    /// Default factor grid of the setup.
    pub fn grid(&self) -> SetupGrid {
        let masses = linspace(0.1, 0.5, 5);
        let sizes = linspace(0.05, 0.1, 6);
        match self {
            SetupName::Mass => SetupGrid {
                masses,
                sizes: vec![0.075],
                frictions: vec![0.5],
            },
            SetupName::SizeMass => SetupGrid {
                masses,
                sizes,
                frictions: vec![0.5],
            },
            SetupName::FrictionSizeMass => SetupGrid {
                masses,
                sizes,
                frictions: vec![0.2, 0.8],
            },
        }
    }
}

impl fmt::Display for SetupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Mass" => Ok(SetupName::Mass),
            "SizeMass" => Ok(SetupName::SizeMass),
            "FrictionSizeMass" => Ok(SetupName::FrictionSizeMass),
            other => Err(Error::Config(format!("unknown setup {other:?}"))),
        }
    }
}

/// Cartesian grid of factor values; one environment per combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupGrid {
    pub masses: Vec<f64>,
    pub sizes: Vec<f64>,
    pub frictions: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (v * 1e9).round() / 1e9
        })
        .collect()
}

/// Builds the environments of a named setup with default world constants.
pub fn make_setup(name: &str, seed: u64) -> Result<Vec<EnvSpec>> {
    let setup: SetupName = name.parse()?;
    make_setup_from_grid(&setup.grid(), WorldConstants::default(), seed)
}

/// Builds one environment per grid cell. Ids follow the canonical
/// mass-major order; `seed` only shuffles the returned order.
pub fn make_setup_from_grid(grid: &SetupGrid, world: WorldConstants, seed: u64) -> Result<Vec<EnvSpec>> {
    if grid.masses.is_empty() || grid.sizes.is_empty() || grid.frictions.is_empty() {
        return Err(Error::Config("setup grid needs at least one value per factor".into()));
    }
    let mut envs = Vec::with_capacity(grid.masses.len() * grid.sizes.len() * grid.frictions.len());
    let mut id = 0u32;
    for &mass in &grid.masses {
        for &size in &grid.sizes {
            for &mu in &grid.frictions {
                envs.push(EnvSpec::new(id, mass, mu, size, world)?);
                id += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    envs.shuffle(&mut rng);
    Ok(envs)
}

/// Advances one control step: the clamped action is held for `n_rep`
/// semi-implicit Euler substeps.
pub fn step(spec: &EnvSpec, state: &SimState, action: Action) -> Result<SimState> {
    if !state.is_finite() || !action.force_x.is_finite() || !action.force_z.is_finite() {
        return Err(Error::Numeric("non-finite state or action".into()));
    }
    let action = action.clamped(spec.world.force_max);
    let (fx, fz) = (action.force_x, action.force_z);
    let m = spec.mass;
    let weight = spec.weight();
    let dt = spec.world.dt_sub;
    let top = spec.top();
    let mut s = *state;

    for _ in 0..spec.world.n_rep {
        let grounded = s.pos_z <= 0.0 && fz <= weight;
        if grounded {
            s.pos_z = 0.0;
            s.vel_z = 0.0;
            let friction = spec.friction_mu * weight;
            if s.vel_x == 0.0 && fx.abs() <= friction {
                continue;
            }
            let direction = if s.vel_x != 0.0 { s.vel_x.signum() } else { fx.signum() };
            let accel = (fx - direction * friction) / m;
            let mut v = s.vel_x + accel * dt;
            if s.vel_x != 0.0 && v.signum() != s.vel_x.signum() {
                v = 0.0;
            }
            s.vel_x = v;
            s.pos_x += s.vel_x * dt;
        } else {
            s.vel_z += (fz - weight) / m * dt;
            s.vel_x += fx / m * dt;
            s.pos_z += s.vel_z * dt;
            s.pos_x += s.vel_x * dt;
            if s.pos_z <= 0.0 {
                s.pos_z = 0.0;
                s.vel_z = 0.0;
            } else if s.pos_z >= top {
                s.pos_z = top;
                s.vel_z = 0.0;
            }
        }
    }
    Ok(s)
}

/// Applies `actions` from the rest state and returns all `HORIZON + 1` states.
pub fn rollout_states(spec: &EnvSpec, actions: &ActionSequence) -> Result<[SimState; HORIZON + 1]> {
    let mut states = [SimState::default(); HORIZON + 1];
    for (t, action) in actions.actions().iter().enumerate() {
        states[t + 1] = step(spec, &states[t], *action)?;
    }
    Ok(states)
}

/// Runs an experiment and returns the masked observations, initial one included.
pub fn rollout(spec: &EnvSpec, actions: &ActionSequence, mask: ObsMask) -> Result<Trajectory> {
    let states = rollout_states(spec, actions)?;
    let mut data = Vec::with_capacity((HORIZON + 1) * mask.dim());
    for s in &states {
        mask.project(s, &mut data);
    }
    Trajectory::new(mask.dim(), data)
}
