//! Imagined rollouts, backward costates, Hamiltonians and the actor gradient.
//!
//! Cost convention throughout: `c_t = -γᵗ r(s_t, a_t)`, `Φ(s_K) = -r_T(s_K)`,
//! `λ_K = ∇Φ(s_K)`, `λ_t = ∇_s c_t + (∂f/∂s)ᵀ λ_{t+1}` and
//! `H_t = c_t + λ_{t+1}ᵀ f(s_t, a_t)`. The policy descends `H`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, ExactDynamics};
use crate::env::{Environment, TerminalReward};
use crate::error::{check_finite, check_len, Error, Result};
use crate::mlp::MlpGrads;
use crate::policy::{Actor, Policy, PolicyTrace};
use crate::tensor::{cosine_similarity, dot};

/// Sign applied to `∇r_T` when seeding the terminal costate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCostateSign {
    /// `λ_K = -∇r_T`, the gradient of the terminal cost.
    Negative,
    /// `λ_K = +∇r_T`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmpOptions {
    pub gamma: f64,
    /// Seed `λ_K` from the terminal reward at the last imagined state.
    pub use_terminal: bool,
    pub terminal_sign: TerminalCostateSign,
}

impl PmpOptions {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            use_terminal: true,
            terminal_sign: TerminalCostateSign::Negative,
        }
    }

    fn terminal_costate(&self, env: &dyn Environment, s_k: &[f64]) -> Vec<f64> {
        let m = s_k.len();
        if !self.use_terminal || env.spec().terminal_reward == TerminalReward::None {
            return vec![0.0; m];
        }
        let sign = match self.terminal_sign {
            TerminalCostateSign::Negative => -1.0,
            TerminalCostateSign::Positive => 1.0,
        };
        env.terminal_reward_grad(s_k).into_iter().map(|g| sign * g).collect()
    }
}

/// States `s_0..=s_K`, actions `a_0..a_K` and the model caches at each step.
#[derive(Debug, Clone)]
pub struct Trajectory<C> {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub caches: Vec<C>,
}

impl<C> Trajectory<C> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Rolls `model` forward `k` steps choosing `a_t = choose(t, s_t)`.
pub fn rollout<D: Dynamics>(
    model: &D,
    s0: &[f64],
    k: usize,
    mut choose: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Trajectory<D::Cache>> {
    check_len("rollout start state", model.state_dim(), s0.len())?;
    check_finite(0, "start state", s0)?;
    let mut states = Vec::with_capacity(k + 1);
    let mut actions = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    states.push(s0.to_vec());
    for t in 0..k {
        let a = choose(t, &states[t])?;
        check_finite(t, "action", &a)?;
        let (next, cache) = model.eval(&states[t], &a)?;
        check_finite(t + 1, "imagined state", &next)?;
        actions.push(a);
        caches.push(cache);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        actions,
        caches,
    })
}

/// `ŝ_{t+1} = f̂(ŝ_t, π(ŝ_t))` for `k` steps; also returns the policy traces.
pub fn imagine_rollout<D: Dynamics>(
    policy: &Policy,
    model: &D,
    s0: &[f64],
    k: usize,
) -> Result<(Trajectory<D::Cache>, Vec<PolicyTrace>)> {
    if k == 0 {
        return Err(Error::input("rollout horizon must be at least 1"));
    }
    let mut traces = Vec::with_capacity(k);
    let traj = rollout(model, s0, k, |_, s| {
        let tr = policy.forward(s)?;
        let a = tr.action.clone();
        traces.push(tr);
        Ok(a)
    })?;
    Ok((traj, traces))
}

/// Output of the backward sweep.
#[derive(Debug, Clone)]
pub struct Adjoint {
    /// `λ_1..=λ_K`; entry `i` is `λ_{i+1}`.
    pub costates: Vec<Vec<f64>>,
    /// `∇_{a_t} H_t = ∂c_t/∂a + (∂f/∂a)ᵀ λ_{t+1}` for `t = 0..K`.
    pub action_grads: Vec<Vec<f64>>,
}

/// Backward costate recursion with stop-gradient action sensitivities.
pub fn adjoint_sweep<D: Dynamics>(
    env: &dyn Environment,
    model: &D,
    traj: &Trajectory<D::Cache>,
    opts: &PmpOptions,
) -> Result<Adjoint> {
    let k = traj.len();
    if k == 0 {
        return Err(Error::input("empty trajectory"));
    }
    let mut costates = vec![Vec::new(); k];
    let mut action_grads = vec![Vec::new(); k];
    let mut lambda = opts.terminal_costate(env, &traj.states[k]);
    for t in (0..k).rev() {
        let (s, a) = (&traj.states[t], &traj.actions[t]);
        let disc = opts.gamma.powi(t as i32);
        let (js_l, ja_l) = model.vjp(&traj.caches[t], &lambda)?;
        let mut ga = env.running_reward_grad_a(s, a);
        for (g, v) in ga.iter_mut().zip(&ja_l) {
            *g = -disc * *g + v;
        }
        check_finite(t, "action gradient", &ga)?;
        action_grads[t] = ga;
        let next = if t >= 1 {
            let mut gs = env.running_reward_grad_s(s, a);
            for (g, v) in gs.iter_mut().zip(&js_l) {
                *g = -disc * *g + v;
            }
            check_finite(t, "costate", &gs)?;
            Some(gs)
        } else {
            None
        };
        costates[t] = std::mem::take(&mut lambda);
        if let Some(gs) = next {
            lambda = gs;
        }
    }
    Ok(Adjoint {
        costates,
        action_grads,
    })
}

/// `λ̂_1..=λ̂_K` only.
pub fn backward_costates<D: Dynamics>(
    env: &dyn Environment,
    model: &D,
    traj: &Trajectory<D::Cache>,
    opts: &PmpOptions,
) -> Result<Vec<Vec<f64>>> {
    Ok(adjoint_sweep(env, model, traj, opts)?.costates)
}

/// `H = -γᵗ r(s, a) + λ_{t+1}ᵀ f̂(s, a)`.
pub fn hamiltonian<D: Dynamics>(
    env: &dyn Environment,
    model: &D,
    s: &[f64],
    a: &[f64],
    lambda_next: &[f64],
    t: usize,
    gamma: f64,
) -> Result<f64> {
    check_len("hamiltonian costate", model.state_dim(), lambda_next.len())?;
    let next = model.predict(s, a)?;
    Ok(-gamma.powi(t as i32) * env.running_reward(s, a) + dot(lambda_next, &next))
}

/// Per-step Hamiltonians of a trajectory given its costates.
pub fn trajectory_hamiltonians<C>(
    env: &dyn Environment,
    traj: &Trajectory<C>,
    costates: &[Vec<f64>],
    gamma: f64,
) -> Vec<f64> {
    (0..traj.len())
        .map(|t| {
            let c = -gamma.powi(t as i32) * env.running_reward(&traj.states[t], &traj.actions[t]);
            c + dot(&costates[t], &traj.states[t + 1])
        })
        .collect()
}

/// A fully annotated imagined rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// `λ_1..=λ_K`.
    pub costates: Vec<Vec<f64>>,
    pub hamiltonians: Vec<f64>,
    pub discount: f64,
}

impl Rollout {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Columns `t, s.., a.., lambda.., H`; row `t` carries `λ_{t+1}` and `H_t`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.states[0].len();
        let n = self.actions.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|i| format!("s{i}")));
        header.extend((0..n).map(|i| format!("a{i}")));
        header.extend((0..m).map(|i| format!("lambda{i}")));
        header.push("H".into());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.horizon() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(f64::to_string));
            row.extend(self.actions[t].iter().map(f64::to_string));
            row.extend(self.costates[t].iter().map(f64::to_string));
            row.push(self.hamiltonians[t].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Imagined rollout with costates and Hamiltonians attached.
pub fn annotated_rollout<D: Dynamics>(
    policy: &Policy,
    model: &D,
    env: &dyn Environment,
    s0: &[f64],
    k: usize,
    opts: &PmpOptions,
) -> Result<Rollout> {
    let (traj, _) = imagine_rollout(policy, model, s0, k)?;
    let costates = backward_costates(env, model, &traj, opts)?;
    let hamiltonians = trajectory_hamiltonians(env, &traj, &costates, opts.gamma);
    Ok(Rollout {
        states: traj.states,
        actions: traj.actions,
        costates,
        hamiltonians,
        discount: opts.gamma,
    })
}

/// Actor loss `mean H` and its stop-gradient parameter gradient.
#[derive(Debug, Clone)]
pub struct ActorGradient {
    pub grads: MlpGrads,
    pub loss: f64,
}

/// `(1/(B K)) Σ_b Σ_t (∂π(ŝ_t)/∂θ)ᵀ ∇_{â_t} H` over a batch of start states.
pub fn actor_hamiltonian_gradient<D: Dynamics>(
    policy: &Policy,
    model: &D,
    env: &dyn Environment,
    starts: &[Vec<f64>],
    k: usize,
    opts: &PmpOptions,
) -> Result<ActorGradient> {
    if starts.is_empty() {
        return Err(Error::input("no rollout start states"));
    }
    let mut grads = policy.net.zeros_like();
    let scale = 1.0 / (starts.len() * k) as f64;
    let mut loss = 0.0;
    for s0 in starts {
        let (traj, traces) = imagine_rollout(policy, model, s0, k)?;
        let adj = adjoint_sweep(env, model, &traj, opts)?;
        for (trace, ga) in traces.iter().zip(&adj.action_grads) {
            policy.backward_accumulate(trace, ga, scale, &mut grads)?;
        }
        loss += trajectory_hamiltonians(env, &traj, &adj.costates, opts.gamma)
            .iter()
            .sum::<f64>();
    }
    let loss = loss * scale;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::numeric(0, "non-finite actor gradient"));
    }
    Ok(ActorGradient { grads, loss })
}

/// `J = Σ -γᵗ r(s_t, a_t) - r_T(s_T)` for an open-loop action sequence.
pub fn total_cost(
    env: &dyn Environment,
    s0: &[f64],
    actions: &[Vec<f64>],
    opts: &PmpOptions,
) -> f64 {
    let mut s = s0.to_vec();
    let mut cost = 0.0;
    for (t, a) in actions.iter().enumerate() {
        cost -= opts.gamma.powi(t as i32) * env.running_reward(&s, a);
        s = env.dynamics(&s, a);
    }
    if opts.use_terminal && env.spec().terminal_reward != TerminalReward::None {
        cost -= env.terminal_reward(&s);
    }
    cost
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_abs_diff: f64,
    pub cosine: f64,
    /// `∇_{a_t} H` per step.
    pub analytic: Vec<Vec<f64>>,
    /// Central differences of `J` per step.
    pub finite_diff: Vec<Vec<f64>>,
}

/// Compares `∇_{a_t} H` from exact-dynamics costates with central differences
/// of the total cost `J` with respect to each `a_t`.
pub fn check_gradient_equivalence(
    env: &dyn Environment,
    actor: &dyn Actor,
    s0: &[f64],
    horizon: usize,
    opts: &PmpOptions,
    fd_step: f64,
) -> Result<GradientCheck> {
    let model = ExactDynamics::new(env);
    let traj = rollout(&model, s0, horizon, |t, s| actor.act(s, t))?;
    let adj = adjoint_sweep(env, &model, &traj, opts)?;
    let mut finite_diff = Vec::with_capacity(horizon);
    let mut actions = traj.actions.clone();
    for t in 0..horizon {
        let mut g = vec![0.0; actions[t].len()];
        for i in 0..g.len() {
            let orig = actions[t][i];
            actions[t][i] = orig + fd_step;
            let plus = total_cost(env, s0, &actions, opts);
            actions[t][i] = orig - fd_step;
            let minus = total_cost(env, s0, &actions, opts);
            actions[t][i] = orig;
            g[i] = (plus - minus) / (2.0 * fd_step);
        }
        finite_diff.push(g);
    }
    let flat_a: Vec<f64> = adj.action_grads.concat();
    let flat_f: Vec<f64> = finite_diff.concat();
    let max_abs_diff = flat_a
        .iter()
        .zip(&flat_f)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(GradientCheck {
        max_abs_diff,
        cosine: cosine_similarity(&flat_a, &flat_f),
        analytic: adj.action_grads,
        finite_diff,
    })
}

/// Cosines between the stop-gradient actor gradient and central differences
/// of `J` in the policy parameters.
#[derive(Debug, Clone, Copy)]
pub struct ParameterGradientCheck {
    /// Differences with the visited states held at the nominal rollout.
    pub frozen_cosine: f64,
    /// Differences of the full closed-loop cost, state feedback included.
    pub closed_loop_cosine: f64,
}

pub fn check_parameter_gradient(
    env: &dyn Environment,
    policy: &Policy,
    s0: &[f64],
    horizon: usize,
    opts: &PmpOptions,
    fd_step: f64,
) -> Result<ParameterGradientCheck> {
    let model = ExactDynamics::new(env);
    let g = actor_hamiltonian_gradient(policy, &model, env, &[s0.to_vec()], horizon, opts)?;
    let analytic = g.grads.flatten();
    let nominal = rollout(&model, s0, horizon, |_, s| policy.action(s))?.states;
    let frozen = |p: &Policy| -> Result<f64> {
        let actions = nominal[..horizon]
            .iter()
            .map(|s| p.action(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(total_cost(env, s0, &actions, opts))
    };
    let closed = |p: &Policy| -> Result<f64> {
        let traj = rollout(&model, s0, horizon, |_, s| p.action(s))?;
        Ok(total_cost(env, s0, &traj.actions, opts))
    };
    let theta = policy.net.flatten();
    let mut probe = policy.clone();
    let (mut fd_frozen, mut fd_closed) = (Vec::new(), Vec::new());
    let mut t = theta.clone();
    for i in 0..theta.len() {
        t[i] = theta[i] + fd_step;
        probe.net.set_flat(&t)?;
        let (fp, cp) = (frozen(&probe)?, closed(&probe)?);
        t[i] = theta[i] - fd_step;
        probe.net.set_flat(&t)?;
        let (fm, cm) = (frozen(&probe)?, closed(&probe)?);
        t[i] = theta[i];
        fd_frozen.push((fp - fm) / (2.0 * fd_step));
        fd_closed.push((cp - cm) / (2.0 * fd_step));
    }
    Ok(ParameterGradientCheck {
        frozen_cosine: cosine_similarity(&analytic, &fd_frozen),
        closed_loop_cosine: cosine_similarity(&analytic, &fd_closed),
    })
}

#[derive(Debug, Clone)]
pub struct ConservationReport {
    pub hamiltonians: Vec<f64>,
    /// `max_t |H_t - H_0| / (|H_0| + 1e-9)`.
    pub spread: f64,
}

pub fn hamiltonian_spread(h: &[f64]) -> f64 {
    let Some(&h0) = h.first() else {
        return 0.0;
    };
    h.iter().fold(0.0f64, |m, v| m.max((v - h0).abs())) / (h0.abs() + 1e-9)
}

/// Rolls the exact dynamics under `actor` and measures how much the
/// Hamiltonian drifts. With `dt = Some(Δ)` the rate form
/// `(c_t + λ_{t+1}ᵀ (s_{t+1} - s_t)) / Δ` is used, which approaches the
/// continuous-time Hamiltonian of a forward-Euler discretization.
pub fn check_conservation(
    env: &dyn Environment,
    actor: &dyn Actor,
    s0: &[f64],
    horizon: usize,
    opts: &PmpOptions,
    dt: Option<f64>,
) -> Result<ConservationReport> {
    let model = ExactDynamics::new(env);
    let traj = rollout(&model, s0, horizon, |t, s| actor.act(s, t))?;
    let costates = backward_costates(env, &model, &traj, opts)?;
    let mut hamiltonians = trajectory_hamiltonians(env, &traj, &costates, opts.gamma);
    if let Some(dt) = dt {
        for (t, h) in hamiltonians.iter_mut().enumerate() {
            *h = (*h - dot(&costates[t], &traj.states[t])) / dt;
        }
    }
    Ok(ConservationReport {
        spread: hamiltonian_spread(&hamiltonians),
        hamiltonians,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsModel;
    use crate::env::{LqrEnv, MountainCarEnv};
    use crate::mlp::MlpParams;
    use crate::policy::ActionScale;
    use crate::tensor::Matrix;

    fn zero_policy(m: usize, n: usize) -> Policy {
        Policy::new(MlpParams::zeros(m, 4, n), None).unwrap()
    }

    #[test]
    fn zero_networks_give_bias_chain() {
        let mut net = MlpParams::zeros(5, 4, 3);
        net.b3 = vec![0.5, -0.5, 2.0];
        let policy = Policy::new(net, None).unwrap();
        let mut mnet = MlpParams::zeros(8, 4, 5);
        mnet.b3 = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let model = DynamicsModel::from_net(mnet, 5).unwrap();
        let (traj, _) = imagine_rollout(&policy, &model, &[9.0; 5], 3).unwrap();
        for s in &traj.states[1..] {
            assert_eq!(s, &vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        }
        for a in &traj.actions {
            assert_eq!(a, &vec![0.5, -0.5, 2.0]);
        }
    }

    #[test]
    fn squashed_zero_policy_acts_at_box_midpoint() {
        let env = MountainCarEnv::benchmark();
        let policy = Policy::new(
            MlpParams::zeros(2, 4, 1),
            Some(ActionScale::from_bounds(&[-1.0], &[1.0])),
        )
        .unwrap();
        let (traj, _) = imagine_rollout(&policy, &ExactDynamics::new(&env), &[-0.5, 0.0], 2).unwrap();
        assert_eq!(traj.actions, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn single_step_shapes() {
        let env = LqrEnv::benchmark();
        let (traj, traces) =
            imagine_rollout(&zero_policy(5, 3), &ExactDynamics::new(&env), &[1.0; 5], 1).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.actions.len(), 1);
        assert_eq!(traces.len(), 1);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let env = LqrEnv::benchmark();
        let res = imagine_rollout(&zero_policy(5, 3), &ExactDynamics::new(&env), &[1.0; 5], 0);
        assert!(matches!(res, Err(Error::Input(_))));
    }

    #[test]
    fn without_terminal_reward_last_costate_is_zero() {
        let env = LqrEnv::benchmark();
        let model = ExactDynamics::new(&env);
        let mut opts = PmpOptions::new(1.0);
        opts.use_terminal = false;
        let traj = rollout(&model, &[1.0; 5], 1, |_, _| Ok(vec![0.3; 3])).unwrap();
        let lam = backward_costates(&env, &model, &traj, &opts).unwrap();
        assert_eq!(lam, vec![vec![0.0; 5]]);
    }

    #[test]
    fn costate_sign_flag_flips_terminal_costate() {
        let env = LqrEnv::benchmark();
        let model = ExactDynamics::new(&env);
        let traj = rollout(&model, &[1.0; 5], 1, |_, _| Ok(vec![0.0; 3])).unwrap();
        let mut opts = PmpOptions::new(1.0);
        let neg = backward_costates(&env, &model, &traj, &opts).unwrap();
        opts.terminal_sign = TerminalCostateSign::Positive;
        let pos = backward_costates(&env, &model, &traj, &opts).unwrap();
        assert_eq!(neg[0], vec![0.2; 5]);
        assert_eq!(pos[0], vec![-0.2; 5]);
    }

    #[test]
    fn zero_costate_hamiltonian_is_running_cost() {
        let env = LqrEnv::benchmark();
        let model = ExactDynamics::new(&env);
        let s = [0.0, 1.0, 1.0, 0.0, 0.0];
        let a = [0.5, 0.0, 0.0];
        let h = hamiltonian(&env, &model, &s, &a, &[0.0; 5], 2, 0.9).unwrap();
        assert!((h - 0.81 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn origin_hamiltonian_is_costate_times_bias() {
        let env = LqrEnv::benchmark();
        let mut net = MlpParams::zeros(8, 4, 5);
        net.b3 = vec![1.0, 0.0, -2.0, 0.5, 3.0];
        let model = DynamicsModel::from_net(net, 5).unwrap();
        let lam = [2.0, 7.0, 1.0, -4.0, 1.0];
        let h = hamiltonian(&env, &model, &[0.0; 5], &[0.0; 3], &lam, 0, 1.0).unwrap();
        assert!((h - (2.0 - 2.0 - 2.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_costates_leave_only_action_cost_gradient() {
        let env = MountainCarEnv::benchmark();
        let model = ExactDynamics::new(&env);
        let mut opts = PmpOptions::new(0.99);
        opts.use_terminal = false;
        let traj = rollout(&model, &[-0.5, 0.0], 3, |_, _| Ok(vec![0.4])).unwrap();
        let adj = adjoint_sweep(&env, &model, &traj, &opts).unwrap();
        for (t, g) in adj.action_grads.iter().enumerate() {
            let expected = 0.99f64.powi(t as i32) * 2.0 * 0.1 * 0.4;
            assert!((g[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn last_step_reduction_without_terminal_reward() {
        let env = LqrEnv::benchmark();
        let mut opts = PmpOptions::new(0.9);
        opts.use_terminal = false;
        let actor = |s: &[f64], _t: usize| Ok(vec![0.1 * s[0], -0.2, s[4]]);
        struct F<G>(G);
        impl<G: Fn(&[f64], usize) -> Result<Vec<f64>> + Sync> Actor for F<G> {
            fn act(&self, s: &[f64], t: usize) -> Result<Vec<f64>> {
                (self.0)(s, t)
            }
        }
        let check =
            check_gradient_equivalence(&env, &F(actor), &[0.0, 1.0, 1.0, 0.0, 0.0], 3, &opts, 1e-5)
                .unwrap();
        let a_last = &check.analytic[2];
        let s2 = {
            let model = ExactDynamics::new(&env);
            rollout(&model, &[0.0, 1.0, 1.0, 0.0, 0.0], 2, |t, s| F(actor).act(s, t)).unwrap()
        };
        let a2 = F(actor).act(&s2.states[2], 2).unwrap();
        for (g, a) in a_last.iter().zip(&a2) {
            assert!((g - 0.81 * 2.0 * a).abs() < 1e-12);
        }
        assert!(check.max_abs_diff < 1e-6);
    }

    #[test]
    fn zero_policy_and_zero_dynamics_give_zero_gradients() {
        let mut lqr = crate::env::LqrParams::benchmark();
        lqr.a = Matrix::zeros(5, 5);
        lqr.b = Matrix::zeros(5, 3);
        let env = LqrEnv::new(lqr, 3).unwrap();
        let policy = zero_policy(5, 3);
        let check =
            check_gradient_equivalence(&env, &policy, &[0.0; 5], 3, &PmpOptions::new(1.0), 1e-5)
                .unwrap();
        assert!(check.analytic.concat().iter().all(|&g| g == 0.0));
        assert!(check.finite_diff.concat().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn single_step_has_zero_spread() {
        assert_eq!(hamiltonian_spread(&[3.0]), 0.0);
        assert_eq!(hamiltonian_spread(&[]), 0.0);
    }

    #[test]
    fn rollout_csv_columns() {
        let env = LqrEnv::benchmark();
        let r = annotated_rollout(
            &zero_policy(5, 3),
            &ExactDynamics::new(&env),
            &env,
            &[1.0; 5],
            2,
            &PmpOptions::new(1.0),
        )
        .unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 1 + 5 + 3 + 5 + 1);
        assert!(lines[0].starts_with("t,s0,"));
        assert!(lines[0].ends_with(",lambda4,H"));
    }
}
