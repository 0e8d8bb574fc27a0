//! Plumbing shared by both trainers: configuration common to every run,
//! data sources, online collection, evaluation and learning curves.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{behavior_bounds, Dataset, ReplayBuffer, Transition};
use crate::dynamics::{fit_dynamics, DynamicsModel, FitConfig};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mlp::DEFAULT_HIDDEN;
use crate::policy::{Actor, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Fit once (pre-trained model, or after the first collection) and keep it.
    Never,
    EveryRound,
}

/// Settings used identically by both trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub rounds: usize,
    /// Gradient updates per round.
    pub updates_per_round: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Discount; the environment default when absent.
    pub gamma: Option<f64>,
    /// Soft target update factor.
    pub tau: f64,
    pub eval_episodes: usize,
    /// Seed for evaluation resets, shared by every method and training seed.
    pub eval_seed: u64,
    pub online_steps_per_round: usize,
    /// Exploration noise std as a fraction of the action range.
    pub exploration_noise: f64,
    pub buffer_capacity: usize,
    /// Action range for random behavior and noise scale when the env is unbounded.
    pub unbounded_action_range: f64,
    pub refit_dynamics: RefitPolicy,
    pub dynamics: FitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Offline,
            rounds: 20,
            updates_per_round: 50,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            gamma: None,
            tau: 0.005,
            eval_episodes: 10,
            eval_seed: 1_000_003,
            online_steps_per_round: 100,
            exploration_noise: 0.1,
            buffer_capacity: 1_000_000,
            unbounded_action_range: 1.0,
            refit_dynamics: RefitPolicy::Never,
            dynamics: FitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn gamma_for(&self, env: &dyn Environment) -> f64 {
        self.gamma.unwrap_or(env.spec().discount)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || self.tau == 0.0 {
            return Err(Error::input("tau must lie in (0, 1]"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::input("gamma must lie in [0, 1]"));
            }
        }
        if self.hidden == 0 {
            return Err(Error::input("hidden width must be positive"));
        }
        Ok(())
    }
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub actor_loss: f64,
}

pub const CURVE_HEADER: &str = "round,env_steps,mean_return,std_return,actor_loss";

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.round, p.env_steps, p.mean_return, p.std_return, p.actor_loss
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Reset seeds for `episodes` evaluation episodes.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes).map(|_| rng.random()).collect()
}

/// A real-environment episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal_reward: f64,
}

impl Episode {
    /// Undiscounted `Σ r + r_T`.
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum::<f64>() + self.terminal_reward
    }
}

/// Runs `actor` without noise from `s0` until the episode ends.
pub fn run_episode(env: &dyn Environment, actor: &dyn Actor, s0: Vec<f64>) -> Result<Episode> {
    let mut states = vec![s0];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for t in 0..env.spec().horizon {
        let s = states.last().expect("non-empty");
        let a = actor.act(s, t)?;
        let step = env.step(s, &a, t)?;
        actions.push(a);
        rewards.push(step.reward);
        states.push(step.next_state);
        if step.done {
            break;
        }
    }
    let terminal_reward = env.terminal_reward(states.last().expect("non-empty"));
    Ok(Episode {
        states,
        actions,
        rewards,
        terminal_reward,
    })
}

/// Deterministic evaluation over seeded resets.
pub fn evaluate_policy(
    env: &dyn Environment,
    actor: &dyn Actor,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::input("need at least one evaluation episode"));
    }
    let returns = episode_seeds(seed, episodes)
        .into_iter()
        .map(|s| Ok(run_episode(env, actor, env.reset(s))?.total_return()))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&returns);
    Ok(EvalStats { mean, std, returns })
}

/// Steps the real environment with a noisy policy, carrying the episode
/// position across calls.
#[derive(Debug, Clone)]
pub struct OnlineCollector {
    rng: ChaCha8Rng,
    state: Option<(Vec<f64>, usize)>,
    pub env_steps: usize,
}

impl OnlineCollector {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
            env_steps: 0,
        }
    }

    /// Appends exactly `steps` transitions to `buffer`. Gaussian noise with
    /// std `noise_frac * range` is added per dimension, then clipped.
    pub fn collect(
        &mut self,
        env: &dyn Environment,
        policy: &Policy,
        steps: usize,
        noise_frac: f64,
        unbounded_range: f64,
        buffer: &mut ReplayBuffer,
    ) -> Result<()> {
        let (lo, hi) = behavior_bounds(env, unbounded_range);
        let bounded = env.action_bounds().is_some();
        let stds: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| noise_frac * (h - l)).collect();
        for _ in 0..steps {
            let (s, t) = match self.state.take() {
                Some(st) => st,
                None => (env.reset(self.rng.random()), 0),
            };
            let mut a = policy.action(&s)?;
            for (i, ai) in a.iter_mut().enumerate() {
                if stds[i] > 0.0 {
                    *ai += Normal::new(0.0, stds[i]).expect("finite std").sample(&mut self.rng);
                }
                if bounded {
                    *ai = ai.clamp(lo[i], hi[i]);
                }
            }
            let step = env.step(&s, &a, t)?;
            buffer.push(Transition {
                s,
                a,
                s_next: step.next_state.clone(),
                r: step.reward,
                done: step.done,
                t,
            })?;
            self.env_steps += 1;
            if !step.done {
                self.state = Some((step.next_state, t + 1));
            }
        }
        Ok(())
    }
}

/// Where training transitions come from.
pub enum DataSource<'a> {
    Offline(&'a Dataset),
    Online,
}

/// Buffer, optional model and collector shared by the trainers' outer loops.
pub(crate) struct DataLoop {
    pub buffer: ReplayBuffer,
    pub model: Option<DynamicsModel>,
    pub collector: Option<OnlineCollector>,
}

impl DataLoop {
    pub fn new(
        env: &dyn Environment,
        cfg: &TrainConfig,
        source: DataSource<'_>,
        model: Option<DynamicsModel>,
    ) -> Result<Self> {
        let spec = env.spec();
        if let Some(m) = &model {
            if m.state_dim != spec.state_dim || m.action_dim != spec.action_dim {
                return Err(Error::input("dynamics model does not match the environment"));
            }
        }
        let (buffer, collector) = match (cfg.mode, source) {
            (Mode::Offline, DataSource::Offline(data)) => {
                if data.state_dim() != spec.state_dim || data.action_dim() != spec.action_dim {
                    return Err(Error::input("dataset dimensions do not match the environment"));
                }
                if data.is_empty() {
                    return Err(Error::input("offline training needs a non-empty dataset"));
                }
                (ReplayBuffer::from_dataset(data), None)
            }
            (Mode::Online, DataSource::Online) => (
                ReplayBuffer::new(spec.state_dim, spec.action_dim, cfg.buffer_capacity),
                Some(OnlineCollector::new(cfg.seed ^ 0x5eed_0c01)),
            ),
            (Mode::Online, DataSource::Offline(data)) => {
                let mut buf = ReplayBuffer::new(spec.state_dim, spec.action_dim, cfg.buffer_capacity);
                for tr in data.transitions() {
                    buf.push(tr.clone())?;
                }
                (buf, Some(OnlineCollector::new(cfg.seed ^ 0x5eed_0c01)))
            }
            (Mode::Offline, DataSource::Online) => {
                return Err(Error::input("offline mode requires a dataset"))
            }
        };
        Ok(Self {
            buffer,
            model,
            collector,
        })
    }

    /// Online collection and (re)fitting at the start of a round.
    pub fn begin_round(
        &mut self,
        env: &dyn Environment,
        cfg: &TrainConfig,
        policy: &Policy,
        round: usize,
    ) -> Result<()> {
        if let Some(c) = &mut self.collector {
            c.collect(
                env,
                policy,
                cfg.online_steps_per_round,
                cfg.exploration_noise,
                cfg.unbounded_action_range,
                &mut self.buffer,
            )?;
        }
        let refit = match cfg.refit_dynamics {
            RefitPolicy::Never => self.model.is_none(),
            RefitPolicy::EveryRound => true,
        };
        if refit {
            let data: Vec<Transition> = self.buffer.iter().cloned().collect();
            let mut fit_cfg = cfg.dynamics.clone();
            fit_cfg.seed = cfg.dynamics.seed.wrapping_add(round as u64);
            let spec = env.spec();
            self.model = Some(fit_dynamics(&data, spec.state_dim, spec.action_dim, &fit_cfg)?.0);
        }
        Ok(())
    }

    pub fn env_steps(&self) -> usize {
        self.collector.as_ref().map_or(0, |c| c.env_steps)
    }

    pub fn model(&self) -> &DynamicsModel {
        self.model.as_ref().expect("model is fitted in begin_round")
    }
}
