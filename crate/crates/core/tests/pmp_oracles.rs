//! Finite-difference and closed-form oracles for rollouts, costates and
//! Hamiltonians.

use hac_core::dynamics::ExactDynamics;
use hac_core::env::{Environment, LqrEnv, LqrParams, PendulumEnv};
use hac_core::mlp::MlpParams;
use hac_core::pmp::{
    actor_hamiltonian_gradient, adjoint_sweep, backward_costates, check_conservation,
    check_gradient_equivalence, check_parameter_gradient, hamiltonian, imagine_rollout, rollout, total_cost, PmpOptions,
};
use hac_core::policy::Policy;
use hac_core::riccati::solve_riccati;
use hac_core::tensor::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `a = K s` realized by a ReLU net kept in its positive regime by a bias shift.
fn linear_policy(gain: &Matrix, shift: f64) -> Policy {
    let (n, m) = (gain.rows(), gain.cols());
    let mut net = MlpParams::zeros(m, m, n);
    net.w1 = Matrix::identity(m);
    net.b1 = vec![shift; m];
    net.w2 = Matrix::identity(m);
    net.w3 = gain.clone();
    net.b3 = gain.matvec(&vec![-shift; m]).unwrap();
    Policy::new(net, None).unwrap()
}

fn random_gain(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Matrix {
    let data = (0..n * m).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(n, m, data).unwrap()
}

/// Remaining cost from `s_t` under fixed actions `a_t..a_{T-1}`.
fn cost_to_go(env: &dyn Environment, s_t: &[f64], t: usize, actions: &[Vec<f64>], opts: &PmpOptions) -> f64 {
    let mut s = s_t.to_vec();
    let mut cost = 0.0;
    for (k, a) in actions.iter().enumerate().skip(t) {
        cost -= opts.gamma.powi(k as i32) * env.running_reward(&s, a);
        s = env.dynamics(&s, a);
    }
    cost - env.terminal_reward(&s)
}

#[test]
fn linear_regime_rollout_is_closed_loop_recursion() {
    let env = LqrEnv::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gain = random_gain(&mut rng, 3, 5, 0.3);
    let policy = linear_policy(&gain, 50.0);
    let closed = env.params.a.add(&env.params.b.matmul(&gain).unwrap()).unwrap();
    let s0 = vec![0.0, 1.0, 1.0, 0.0, 0.0];
    let (traj, _) = imagine_rollout(&policy, &ExactDynamics::new(&env), &s0, 6).unwrap();
    let mut s = s0;
    for t in 0..=6 {
        for (x, y) in traj.states[t].iter().zip(&s) {
            assert!((x - y).abs() < 1e-9);
        }
        s = closed.matvec(&s).unwrap();
    }
}

#[test]
fn action_level_gradient_equivalence() {
    for horizon in [3, 5] {
        let env = LqrEnv::new(LqrParams::benchmark(), horizon).unwrap();
        let opts = PmpOptions::new(1.0);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let policy = Policy::new(MlpParams::random(5, 16, 3, &mut rng), None).unwrap();
            let s0: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            let report = check_gradient_equivalence(&env, &policy, &s0, horizon, &opts, 1e-5).unwrap();
            assert!(report.max_abs_diff < 1e-4, "T={horizon} seed={seed}: {}", report.max_abs_diff);
        }
    }
}

#[test]
fn parameter_gradient_follows_finite_differences() {
    let mut closed = Vec::new();
    for horizon in [3, 5] {
        let env = LqrEnv::new(LqrParams::benchmark(), horizon).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let policy = Policy::new(MlpParams::random(5, 16, 3, &mut rng), None).unwrap();
            let c = check_parameter_gradient(&env, &policy, &env.params.s0_mean, horizon, &PmpOptions::new(1.0), 1e-6)
                .unwrap();
            assert!(c.frozen_cosine > 0.99, "T={horizon} seed={seed}: {c:?}");
            closed.push(c.closed_loop_cosine);
        }
    }
    let mean = closed.iter().sum::<f64>() / closed.len() as f64;
    assert!(mean > 0.99, "{closed:?}");
}

#[test]
fn last_step_without_terminal_reward_is_running_reward_gradient() {
    let env = PendulumEnv::benchmark();
    let gamma = 0.9;
    let opts = PmpOptions { use_terminal: false, ..PmpOptions::new(gamma) };
    let policy = Policy::new(MlpParams::random(2, 8, 1, &mut ChaCha8Rng::seed_from_u64(2)), None).unwrap();
    let horizon = 4;
    let report = check_gradient_equivalence(&env, &policy, &[0.3, -0.1], horizon, &opts, 1e-5).unwrap();
    let model = ExactDynamics::new(&env);
    let traj = rollout(&model, &[0.3, -0.1], horizon, |_, s| policy.action(s)).unwrap();
    let t = horizon - 1;
    let ga = env.running_reward_grad_a(&traj.states[t], &traj.actions[t]);
    let expected = -gamma.powi(t as i32) * ga[0];
    assert!((report.analytic[t][0] - expected).abs() < 1e-12);
    assert!((report.finite_diff[t][0] - expected).abs() < 1e-6);
}

#[test]
fn hamiltonian_at_last_step_matches_riccati_closed_form() {
    let env = LqrEnv::benchmark();
    let sol = solve_riccati(&env.params, 10).unwrap();
    let model = ExactDynamics::new(&env);
    let opts = PmpOptions::new(1.0);
    let traj = rollout(&model, &env.params.s0_mean, 10, |t, s| sol.optimal_action(t, s)).unwrap();
    let lam = backward_costates(&env, &model, &traj, &opts).unwrap();
    for t in 0..10 {
        let (s, a) = (&traj.states[t], &traj.actions[t]);
        let h = hamiltonian(&env, &model, s, a, &lam[t], t, 1.0).unwrap();
        let h_star = sol.ground_truth_hamiltonian(t, s, a).unwrap();
        assert!((h - h_star).abs() < 1e-6, "t={t}");
    }
    // With no terminal cost the last-step Hamiltonian is the minimized Q.
    let mut lqr = LqrParams::benchmark();
    lqr.terminal_cost = Matrix::zeros(5, 5);
    let env = LqrEnv::new(lqr, 10).unwrap();
    let sol = solve_riccati(&env.params, 10).unwrap();
    let model = ExactDynamics::new(&env);
    let traj = rollout(&model, &env.params.s0_mean, 10, |t, s| sol.optimal_action(t, s)).unwrap();
    let lam = backward_costates(&env, &model, &traj, &opts).unwrap();
    let (s, a) = (&traj.states[9], &traj.actions[9]);
    let h = hamiltonian(&env, &model, s, a, &lam[9], 9, 1.0).unwrap();
    assert!((h - sol.ground_truth_h(9, s).unwrap()).abs() < 1e-6);
}

#[test]
fn conservation_spread_shrinks_with_step_size() {
    let b = LqrParams::benchmark().b;
    let spreads: Vec<f64> = [0.1, 0.05, 0.01]
        .iter()
        .map(|&dt| {
            let steps = (1.0_f64 / dt).round() as usize;
            let lqr = LqrParams::discretized(
                &Matrix::zeros(5, 5),
                &b,
                &Matrix::identity(5),
                &Matrix::identity(3),
                &Matrix::identity(5).scale(0.1),
                dt,
                vec![0.0, 1.0, 1.0, 0.0, 0.0],
            )
            .unwrap();
            let env = LqrEnv::new(lqr, steps).unwrap();
            let sol = solve_riccati(&env.params, steps).unwrap();
            check_conservation(&env, &sol, &env.params.s0_mean, steps, &PmpOptions::new(1.0), Some(dt))
                .unwrap()
                .spread
        })
        .collect();
    assert!(spreads[0] > spreads[1] && spreads[1] > spreads[2], "{spreads:?}");
}

#[test]
fn doubling_reward_weights_doubles_actor_gradient() {
    let mut lqr = LqrParams::benchmark();
    let env1 = LqrEnv::new(lqr.clone(), 4).unwrap();
    lqr.state_cost = lqr.state_cost.scale(2.0);
    lqr.action_cost = lqr.action_cost.scale(2.0);
    lqr.terminal_cost = lqr.terminal_cost.scale(2.0);
    let env2 = LqrEnv::new(lqr, 4).unwrap();
    let policy = Policy::new(MlpParams::random(5, 8, 3, &mut ChaCha8Rng::seed_from_u64(4)), None).unwrap();
    let starts = vec![vec![0.2, 1.0, 0.9, -0.1, 0.0]];
    let opts = PmpOptions::new(1.0);
    let g1 = actor_hamiltonian_gradient(&policy, &ExactDynamics::new(&env1), &env1, &starts, 4, &opts).unwrap();
    let g2 = actor_hamiltonian_gradient(&policy, &ExactDynamics::new(&env2), &env2, &starts, 4, &opts).unwrap();
    for (a, b) in g1.grads.flatten().iter().zip(g2.grads.flatten()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn costates_are_gradients_of_remaining_cost(seed in 0u64..1_000_000) {
        let env = LqrEnv::new(LqrParams::benchmark(), 5).unwrap();
        let opts = PmpOptions::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let actions: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let model = ExactDynamics::new(&env);
        let traj = rollout(&model, &s0, 5, |t, _| Ok(actions[t].clone())).unwrap();
        let adj = adjoint_sweep(&env, &model, &traj, &opts).unwrap();
        // costates[i] is λ_{i+1}: the gradient of the cost remaining from s_{i+1}.
        for t in 1..=5 {
            let lam = &adj.costates[t - 1];
            for i in 0..5 {
                let (mut p, mut m) = (traj.states[t].clone(), traj.states[t].clone());
                p[i] += 1e-5;
                m[i] -= 1e-5;
                let fd = (cost_to_go(&env, &p, t, &actions, &opts)
                    - cost_to_go(&env, &m, t, &actions, &opts)) / 2e-5;
                prop_assert!((lam[i] - fd).abs() < 1e-3, "t={t} i={i}: {} vs {fd}", lam[i]);
            }
        }
        // And the action gradients are those of the total cost.
        let mut acts = actions.clone();
        for t in 0..5 {
            for j in 0..3 {
                let orig = acts[t][j];
                acts[t][j] = orig + 1e-5;
                let jp = total_cost(&env, &s0, &acts, &opts);
                acts[t][j] = orig - 1e-5;
                let jm = total_cost(&env, &s0, &acts, &opts);
                acts[t][j] = orig;
                prop_assert!((adj.action_grads[t][j] - (jp - jm) / 2e-5).abs() < 1e-4);
            }
        }
    }
}
