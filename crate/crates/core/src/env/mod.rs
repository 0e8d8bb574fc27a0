//! Deterministic benchmark environments with known rewards and reward gradients.
//!
//! Every environment is a pure function of `(s, a)`; an instance only holds
//! immutable parameters. Rewards follow the reward convention (larger is
//! better); costs are obtained by negation where needed.

mod lqr;
mod mountain_car;
mod pendulum;

pub use lqr::{LqrEnv, LqrParams};
pub use mountain_car::{MountainCarEnv, MountainCarParams};
pub use pendulum::{PendulumEnv, PendulumParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_finite, check_len, Result};
use crate::tensor::Matrix;

/// Shape of the terminal reward `r_T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalReward {
    None,
    Constant,
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub discount: f64,
    pub reward_gradient_available: bool,
    pub terminal_reward: TerminalReward,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &EnvSpec;

    /// Initial state distribution: mean and per-component Gaussian std.
    fn initial_mean(&self) -> &[f64];

    fn initial_noise_std(&self) -> f64;

    /// Draws an initial state; the same seed always yields the same state.
    fn reset(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = self.initial_noise_std();
        let mean = self.initial_mean();
        if std == 0.0 {
            return mean.to_vec();
        }
        let normal = Normal::new(0.0, std).expect("noise std is finite and non-negative");
        mean.iter().map(|m| m + normal.sample(&mut rng)).collect()
    }

    /// Inclusive per-dimension action box, or `None` when actions are unbounded.
    fn action_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)>;

    /// Deterministic transition `f(s, a)` for an in-bounds action.
    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64>;

    /// `∂f/∂s` (state_dim × state_dim).
    fn dynamics_state_jacobian(&self, s: &[f64], a: &[f64]) -> Matrix;

    /// `∂f/∂a` (state_dim × action_dim).
    fn dynamics_action_jacobian(&self, s: &[f64], a: &[f64]) -> Matrix;

    fn running_reward(&self, s: &[f64], a: &[f64]) -> f64;

    fn running_reward_grad_s(&self, s: &[f64], a: &[f64]) -> Vec<f64>;

    fn running_reward_grad_a(&self, s: &[f64], a: &[f64]) -> Vec<f64>;

    /// `r_T(s)`; zero when the environment has no terminal reward.
    fn terminal_reward(&self, s: &[f64]) -> f64;

    fn terminal_reward_grad(&self, s: &[f64]) -> Vec<f64>;

    /// Early-termination condition checked after each step.
    fn is_goal(&self, _s: &[f64]) -> bool {
        false
    }

    /// Applies action `a` at time index `t` (0-based). `done` is set when
    /// `t + 1` reaches the horizon or a goal state is entered.
    fn step(&self, s: &[f64], a: &[f64], t: usize) -> Result<Step> {
        let spec = self.spec();
        check_len("env_step state", spec.state_dim, s.len())?;
        check_len("env_step action", spec.action_dim, a.len())?;
        check_finite(t, "state", s)?;
        check_finite(t, "action", a)?;
        let a = clip_action(self, a);
        let next_state = self.dynamics(s, &a);
        check_finite(t, "next state", &next_state)?;
        let reward = self.running_reward(s, &a);
        let done = t + 1 >= spec.horizon || self.is_goal(&next_state);
        Ok(Step {
            next_state,
            reward,
            done,
        })
    }
}

/// Clamps `a` into the environment's action box (identity when unbounded).
pub fn clip_action<E: Environment + ?Sized>(env: &E, a: &[f64]) -> Vec<f64> {
    match env.action_bounds() {
        Some((lo, hi)) => a
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&v, (&l, &h))| v.clamp(l, h))
            .collect(),
        None => a.to_vec(),
    }
}

/// Which environment to build; used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Lqr,
    Pendulum,
    MountainCar,
}

impl EnvKind {
    /// Default dataset size for offline experiments.
    pub fn default_dataset_size(self) -> usize {
        match self {
            EnvKind::Lqr => 5_000,
            EnvKind::Pendulum => 20_000,
            EnvKind::MountainCar => 200_000,
        }
    }

    /// Default imagination horizon.
    pub fn default_rollout_horizon(self) -> usize {
        match self {
            EnvKind::Lqr | EnvKind::Pendulum => 10,
            EnvKind::MountainCar => 5,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lqr" => Ok(EnvKind::Lqr),
            "pendulum" => Ok(EnvKind::Pendulum),
            "mountain_car" | "mountaincar" => Ok(EnvKind::MountainCar),
            other => Err(crate::Error::input(format!("unknown environment `{other}`"))),
        }
    }
}
