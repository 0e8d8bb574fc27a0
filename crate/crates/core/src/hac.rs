//! The Hamiltonian actor-critic trainer: imagined rollouts through a learned
//! model, costates in place of a critic, and descent on the mean Hamiltonian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ReplayBuffer;
use crate::dynamics::{Dynamics, DynamicsModel};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pmp::{actor_hamiltonian_gradient, PmpOptions, TerminalCostateSign};
use crate::policy::Policy;
use crate::train::{evaluate_policy, CurvePoint, DataLoop, DataSource, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStates {
    /// States drawn uniformly from the replay buffer.
    Dataset,
    /// Fresh draws from the environment's reset distribution.
    Reset,
    /// One buffer draw reused by every update: full-batch descent on a fixed objective.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HacConfig {
    /// Imagination horizon `K`.
    pub k: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Imagined start states averaged per actor update.
    pub batch_rollouts: usize,
    pub start_states: StartStates,
    /// Seed `λ_K` from `r_T` even when `K` is shorter than the episode.
    pub terminal_costate_at_truncation: bool,
    pub terminal_costate_sign: TerminalCostateSign,
}

impl Default for HacConfig {
    fn default() -> Self {
        Self {
            k: 10,
            lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            batch_rollouts: 32,
            start_states: StartStates::Dataset,
            terminal_costate_at_truncation: true,
            terminal_costate_sign: TerminalCostateSign::Negative,
        }
    }
}

impl HacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::input("rollout horizon k must be at least 1"));
        }
        if self.batch_rollouts == 0 {
            return Err(Error::input("batch_rollouts must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::input("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn pmp_options(&self, gamma: f64) -> PmpOptions {
        PmpOptions {
            gamma,
            use_terminal: self.terminal_costate_at_truncation,
            terminal_sign: self.terminal_costate_sign,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub target_policy: Policy,
    /// `None` only when no round ran and no model was supplied.
    pub model: Option<DynamicsModel>,
    pub curve: Vec<CurvePoint>,
    /// Actor loss of every update, in order.
    pub update_losses: Vec<f64>,
}

pub(crate) fn sample_starts<R: Rng>(
    env: &dyn Environment,
    buffer: &ReplayBuffer,
    how: StartStates,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    match how {
        StartStates::Dataset | StartStates::Fixed => Ok(buffer
            .sample_indices(count, rng)?
            .into_iter()
            .map(|i| buffer.get(i).s.clone())
            .collect()),
        StartStates::Reset => Ok((0..count).map(|_| env.reset(rng.random())).collect()),
    }
}

/// One actor update. Returns the actor loss before the step.
pub fn hac_update<D: Dynamics>(
    policy: &mut Policy,
    opt: &mut Optimizer,
    model: &D,
    env: &dyn Environment,
    starts: &[Vec<f64>],
    k: usize,
    opts: &PmpOptions,
    step: usize,
) -> Result<f64> {
    let g = actor_hamiltonian_gradient(policy, model, env, starts, k, opts)
        .map_err(|e| match e {
            Error::Numeric { reason, .. } => Error::numeric(step, reason),
            other => other,
        })?;
    opt.step(&mut policy.net, &g.grads);
    if !policy.net.is_finite() {
        return Err(Error::numeric(step, "policy parameters diverged"));
    }
    Ok(g.loss)
}

/// Full training loop. `model` may carry a pre-trained dynamics model; it is
/// fitted from the available data otherwise.
pub fn hac_train(
    env: &dyn Environment,
    train: &TrainConfig,
    hac: &HacConfig,
    source: DataSource<'_>,
    model: Option<DynamicsModel>,
) -> Result<TrainOutcome> {
    train.validate()?;
    hac.validate()?;
    let gamma = train.gamma_for(env);
    let opts = hac.pmp_options(gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut policy = Policy::for_env(env, train.hidden, &mut rng);
    let mut target = policy.clone();
    let mut opt = Optimizer::new(hac.optimizer, hac.lr, &policy.net);
    let mut data = DataLoop::new(env, train, source, model)?;
    let mut curve = Vec::with_capacity(train.rounds);
    let mut update_losses = Vec::with_capacity(train.rounds * train.updates_per_round);
    let mut fixed: Option<Vec<Vec<f64>>> = None;
    for round in 0..train.rounds {
        data.begin_round(env, train, &policy, round)?;
        if hac.start_states == StartStates::Fixed && fixed.is_none() {
            fixed = Some(sample_starts(env, &data.buffer, hac.start_states, hac.batch_rollouts, &mut rng)?);
        }
        let model = data.model();
        let mut round_loss = 0.0;
        for _ in 0..train.updates_per_round {
            let drawn;
            let starts = match &fixed {
                Some(f) => f,
                None => {
                    drawn = sample_starts(env, &data.buffer, hac.start_states, hac.batch_rollouts, &mut rng)?;
                    &drawn
                }
            };
            let loss = hac_update(
                &mut policy,
                &mut opt,
                model,
                env,
                starts,
                hac.k,
                &opts,
                update_losses.len(),
            )?;
            target.net.soft_update(&policy.net, train.tau);
            update_losses.push(loss);
            round_loss += loss;
        }
        let stats = evaluate_policy(env, &policy, train.eval_episodes, train.eval_seed)?;
        curve.push(CurvePoint {
            round: round + 1,
            env_steps: data.env_steps(),
            mean_return: stats.mean,
            std_return: stats.std,
            actor_loss: if train.updates_per_round == 0 {
                f64::NAN
            } else {
                round_loss / train.updates_per_round as f64
            },
        });
    }
    Ok(TrainOutcome {
        policy,
        target_policy: target,
        model: data.model,
        curve,
        update_losses,
    })
}
