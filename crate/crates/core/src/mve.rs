//! DDPG with model-based value expansion targets and optional critic
//! ensembles, plus the paired critic-error report against a Riccati oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, DynamicsModel};
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::mlp::MlpParams;
use crate::optim::Adam;
use crate::pmp::{backward_costates, hamiltonian, PmpOptions, Trajectory};
use crate::policy::{Actor, Policy};
use crate::riccati::RiccatiSolution;
use crate::hac::TrainOutcome;
use crate::train::{
    evaluate_policy, episode_seeds, run_episode, CurvePoint, DataLoop, DataSource, TrainConfig,
};

/// Reward-space action value `Q(s, a)` at time index `t`.
pub trait Critic: Sync {
    fn value(&self, s: &[f64], a: &[f64], t: usize) -> Result<f64>;
}

/// MLP critic on `[s; a]`; the time index is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCritic {
    pub net: MlpParams,
}

impl MlpCritic {
    pub fn new(net: MlpParams) -> Result<Self> {
        let (_, _, out) = net.validate()?;
        check_len("critic output", 1, out)?;
        Ok(Self { net })
    }

    fn input(s: &[f64], a: &[f64]) -> Vec<f64> {
        [s, a].concat()
    }

    /// `∂Q/∂a` at `(s, a)`.
    pub fn action_gradient(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let trace = self.net.forward(&Self::input(s, a))?;
        let mut g = self.net.input_vjp(&trace, &[1.0])?;
        Ok(g.split_off(s.len()))
    }
}

impl Critic for MlpCritic {
    fn value(&self, s: &[f64], a: &[f64], _t: usize) -> Result<f64> {
        Ok(self.net.predict(&Self::input(s, a))?[0])
    }
}

/// Ensemble bootstrap: pointwise minimum, or mean when `min` is off.
pub struct EnsembleCritic<'a> {
    pub members: &'a [MlpCritic],
    pub min: bool,
}

impl Critic for EnsembleCritic<'_> {
    fn value(&self, s: &[f64], a: &[f64], t: usize) -> Result<f64> {
        if self.members.is_empty() {
            return Err(Error::input("empty critic ensemble"));
        }
        let vals = self
            .members
            .iter()
            .map(|c| c.value(s, a, t))
            .collect::<Result<Vec<f64>>>()?;
        Ok(if self.min {
            vals.into_iter().fold(f64::INFINITY, f64::min)
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        })
    }
}

/// A critic that always returns zero.
pub struct ZeroCritic;

impl Critic for ZeroCritic {
    fn value(&self, _s: &[f64], _a: &[f64], _t: usize) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MveConfig {
    /// Expansion depth `K`.
    pub k: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub ensemble_n: usize,
    pub min_over_ensemble: bool,
    /// Expand with the target policy (standard) or the current one.
    pub expand_with_target_policy: bool,
}

impl Default for MveConfig {
    fn default() -> Self {
        Self {
            k: 10,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            ensemble_n: 1,
            min_over_ensemble: true,
            expand_with_target_policy: true,
        }
    }
}

impl MveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::input("expansion depth k must be at least 1"));
        }
        if ![1, 2, 3, 5].contains(&self.ensemble_n) {
            return Err(Error::input("ensemble_n must be one of 1, 2, 3, 5"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        Ok(())
    }
}

/// `Σ_{i<K} γⁱ r(ŝ_{t+i}, â_{t+i}) + γᴷ Q'(ŝ_{t+K}, π'(ŝ_{t+K}))`, with
/// `â_t = a` and later actions from `actor`.
///
/// If the imagined episode ends first (time limit or goal) after `j` steps,
/// the tail is `γʲ r_T(ŝ_{t+j})` and no bootstrap is added.
#[allow(clippy::too_many_arguments)]
pub fn mve_critic_target<D: Dynamics>(
    env: &dyn Environment,
    model: &D,
    actor: &dyn Actor,
    critic: &dyn Critic,
    s: &[f64],
    a: &[f64],
    t: usize,
    k: usize,
    gamma: f64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::input("expansion depth must be at least 1"));
    }
    let horizon = env.spec().horizon;
    let mut s_i = s.to_vec();
    let mut a_i = a.to_vec();
    let mut total = 0.0;
    let mut disc = 1.0;
    for i in 0..k {
        total += disc * env.running_reward(&s_i, &a_i);
        let next = model.predict(&s_i, &a_i)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(i, "expansion rollout diverged"));
        }
        disc *= gamma;
        s_i = next;
        if t + i + 1 >= horizon || env.is_goal(&s_i) {
            return Ok(total + disc * env.terminal_reward(&s_i));
        }
        a_i = actor.act(&s_i, t + i + 1)?;
    }
    Ok(total + disc * critic.value(&s_i, &a_i, t + k)?)
}

struct MveState {
    policy: Policy,
    target_policy: Policy,
    critics: Vec<MlpCritic>,
    target_critics: Vec<MlpCritic>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
}

impl MveState {
    fn new(env: &dyn Environment, train: &TrainConfig, cfg: &MveConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let policy = Policy::for_env(env, train.hidden, &mut rng);
        let spec = env.spec();
        let critics: Vec<MlpCritic> = (0..cfg.ensemble_n)
            .map(|_| MlpCritic {
                net: MlpParams::random(spec.state_dim + spec.action_dim, train.hidden, 1, &mut rng),
            })
            .collect();
        Self {
            actor_opt: Adam::new(cfg.actor_lr, &policy.net),
            critic_opts: critics.iter().map(|c| Adam::new(cfg.critic_lr, &c.net)).collect(),
            target_policy: policy.clone(),
            target_critics: critics.clone(),
            policy,
            critics,
        }
    }
}

/// One critic regression step per member followed by one actor step.
/// Returns the mean critic loss over members.
#[allow(clippy::too_many_arguments)]
fn mve_update<D: Dynamics>(
    st: &mut MveState,
    env: &dyn Environment,
    model: &D,
    batch: &[&crate::dataset::Transition],
    cfg: &MveConfig,
    gamma: f64,
    tau: f64,
    step: usize,
) -> Result<f64> {
    let expander: &Policy = if cfg.expand_with_target_policy {
        &st.target_policy
    } else {
        &st.policy
    };
    let boot = EnsembleCritic {
        members: &st.target_critics,
        min: cfg.min_over_ensemble,
    };
    let targets = batch
        .iter()
        .map(|tr| mve_critic_target(env, model, expander, &boot, &tr.s, &tr.a, tr.t, cfg.k, gamma))
        .collect::<Result<Vec<f64>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut critic_loss = 0.0;
    for (critic, opt) in st.critics.iter_mut().zip(&mut st.critic_opts) {
        let mut grads = critic.net.zeros_like();
        for (tr, y) in batch.iter().zip(&targets) {
            let trace = critic.net.forward(&MlpCritic::input(&tr.s, &tr.a))?;
            let err = trace.output[0] - y;
            critic_loss += err * err * scale;
            critic.net.backward_accumulate(&trace, &[2.0 * err], scale, &mut grads)?;
        }
        opt.step(&mut critic.net, &grads);
    }
    let mut grads = st.policy.net.zeros_like();
    for tr in batch {
        let ptrace = st.policy.forward(&tr.s)?;
        let dq_da = st.critics[0].action_gradient(&tr.s, &ptrace.action)?;
        let ascent: Vec<f64> = dq_da.iter().map(|g| -g).collect();
        st.policy.backward_accumulate(&ptrace, &ascent, scale, &mut grads)?;
    }
    st.actor_opt.step(&mut st.policy.net, &grads);
    for (t, c) in st.target_critics.iter_mut().zip(&st.critics) {
        t.net.soft_update(&c.net, tau);
    }
    st.target_policy.net.soft_update(&st.policy.net, tau);
    let critic_loss = critic_loss / st.critics.len() as f64;
    if !critic_loss.is_finite() || !st.policy.net.is_finite() {
        return Err(Error::numeric(step, "MVE update diverged"));
    }
    Ok(critic_loss)
}

/// MVE training outcome: the shared outcome plus the trained critics.
#[derive(Debug, Clone)]
pub struct MveOutcome {
    pub outcome: TrainOutcome,
    pub critics: Vec<MlpCritic>,
}

pub fn mve_train(
    env: &dyn Environment,
    train: &TrainConfig,
    cfg: &MveConfig,
    source: DataSource<'_>,
    model: Option<DynamicsModel>,
) -> Result<MveOutcome> {
    train.validate()?;
    cfg.validate()?;
    let gamma = train.gamma_for(env);
    let mut st = MveState::new(env, train, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x6d76_6500);
    let mut data = DataLoop::new(env, train, source, model)?;
    let mut curve = Vec::with_capacity(train.rounds);
    let mut update_losses = Vec::new();
    for round in 0..train.rounds {
        data.begin_round(env, train, &st.policy, round)?;
        let model = data.model();
        let mut round_loss = 0.0;
        for _ in 0..train.updates_per_round {
            let idx = data.buffer.sample_indices(cfg.batch_size, &mut rng)?;
            let batch: Vec<_> = idx.iter().map(|&i| data.buffer.get(i)).collect();
            let loss = mve_update(
                &mut st,
                env,
                model,
                &batch,
                cfg,
                gamma,
                train.tau,
                update_losses.len(),
            )?;
            update_losses.push(loss);
            round_loss += loss;
        }
        let stats = evaluate_policy(env, &st.policy, train.eval_episodes, train.eval_seed)?;
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
    Ok(MveOutcome {
        outcome: TrainOutcome {
            policy: st.policy,
            target_policy: st.target_policy,
            model: data.model,
            curve,
            update_losses,
        },
        critics: st.critics,
    })
}

/// Truth and estimate series before normalization.
#[derive(Debug, Clone, Default)]
pub struct CriticSamples {
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
}

/// Zero mean, unit variance. A constant series maps to zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let (mean, std) = crate::train::mean_std(xs);
    if !(std > 0.0) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

impl CriticSamples {
    /// Each series standardized on its own.
    pub fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        (standardize(&self.truth), standardize(&self.estimate))
    }

    /// Mean `|z_truth - z_estimate|`.
    pub fn mean_abs_error(&self) -> Result<f64> {
        if self.truth.is_empty() {
            return Err(Error::input("no critic samples"));
        }
        let (zt, ze) = self.normalized();
        Ok(zt.iter().zip(&ze).map(|(a, b)| (a - b).abs()).sum::<f64>() / zt.len() as f64)
    }
}

/// `(Q*_t(s, a), -Q̂(s, a))` along real episodes of `actor`, in cost space.
pub fn mve_critic_samples(
    env: &dyn Environment,
    sol: &RiccatiSolution,
    actor: &dyn Actor,
    critic: &dyn Critic,
    episodes: usize,
    seed: u64,
) -> Result<CriticSamples> {
    if episodes == 0 {
        return Err(Error::input("need at least one test episode"));
    }
    let mut out = CriticSamples::default();
    for s in episode_seeds(seed, episodes) {
        let ep = run_episode(env, actor, env.reset(s))?;
        for (t, a) in ep.actions.iter().enumerate() {
            let st = &ep.states[t];
            out.truth.push(sol.ground_truth_q(t, st, a)?);
            out.estimate.push(-critic.value(st, a, t)?);
        }
    }
    Ok(out)
}

/// `(H*_t, Ĥ_t)` along real episodes of `actor`. `Ĥ_t` uses costates from
/// a backward sweep through `model` over the whole observed trajectory.
pub fn hac_critic_samples<D: Dynamics>(
    env: &dyn Environment,
    sol: &RiccatiSolution,
    actor: &dyn Actor,
    model: &D,
    episodes: usize,
    seed: u64,
    opts: &PmpOptions,
) -> Result<CriticSamples> {
    if episodes == 0 {
        return Err(Error::input("need at least one test episode"));
    }
    let mut out = CriticSamples::default();
    for s in episode_seeds(seed, episodes) {
        let ep = run_episode(env, actor, env.reset(s))?;
        // Model caches at the real states, so costates follow the observed path.
        let caches = ep
            .states
            .iter()
            .zip(&ep.actions)
            .map(|(st, a)| Ok(model.eval(st, a)?.1))
            .collect::<Result<Vec<_>>>()?;
        let traj = Trajectory {
            states: ep.states.clone(),
            actions: ep.actions.clone(),
            caches,
        };
        let lam = backward_costates(env, model, &traj, opts)?;
        for t in 0..traj.len() {
            let (st, a) = (&traj.states[t], &traj.actions[t]);
            out.truth.push(sol.ground_truth_hamiltonian(t, st, a)?);
            out.estimate.push(hamiltonian(env, model, st, a, &lam[t], t, opts.gamma)?);
        }
    }
    Ok(out)
}
