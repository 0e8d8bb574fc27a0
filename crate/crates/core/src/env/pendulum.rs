use std::f64::consts::PI;

use crate::env::{EnvSpec, Environment, TerminalReward};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    pub w_q: f64,
    pub w_dq: f64,
    pub w_u: f64,
    pub q_target: f64,
    pub dq_target: f64,
    pub max_torque: f64,
    pub s0_mean: Vec<f64>,
    pub s0_noise_std: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
            dt: 0.05,
            w_q: 10.0,
            w_dq: 1.0,
            w_u: 0.1,
            q_target: PI,
            dq_target: 0.0,
            max_torque: 10.0,
            s0_mean: vec![0.0, 0.0],
            s0_noise_std: 0.01,
        }
    }
}

impl PendulumParams {
    /// `I = m g l² / 3`.
    pub fn inertia(&self) -> f64 {
        self.mass * self.gravity * self.length * self.length / 3.0
    }
}

/// Two-state pendulum driven by a scalar torque.
///
/// `s = [q, dq]`, `f(s, a) = s + Δ [dq, (a - m g l q - σ sin q) / I]`.
#[derive(Debug, Clone)]
pub struct PendulumEnv {
    pub params: PendulumParams,
    spec: EnvSpec,
}

impl PendulumEnv {
    pub fn new(params: PendulumParams, horizon: usize, discount: f64) -> Self {
        Self {
            params,
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                horizon,
                discount,
                reward_gradient_available: true,
                terminal_reward: TerminalReward::Quadratic,
            },
        }
    }

    pub fn benchmark() -> Self {
        Self::new(PendulumParams::default(), 10, 0.99)
    }

    fn state_penalty(&self, s: &[f64]) -> f64 {
        let p = &self.params;
        p.w_q * (s[0] - p.q_target).powi(2) + p.w_dq * (s[1] - p.dq_target).powi(2)
    }

    fn state_penalty_grad(&self, s: &[f64]) -> Vec<f64> {
        let p = &self.params;
        vec![
            2.0 * p.w_q * (s[0] - p.q_target),
            2.0 * p.w_dq * (s[1] - p.dq_target),
        ]
    }
}

impl Environment for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_mean(&self) -> &[f64] {
        &self.params.s0_mean
    }

    fn initial_noise_std(&self) -> f64 {
        self.params.s0_noise_std
    }

    fn action_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![-self.params.max_torque], vec![self.params.max_torque]))
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let (q, dq) = (s[0], s[1]);
        let accel = (a[0] - p.mass * p.gravity * p.length * q - p.damping * q.sin()) / p.inertia();
        vec![q + p.dt * dq, dq + p.dt * accel]
    }

    fn dynamics_state_jacobian(&self, s: &[f64], _a: &[f64]) -> Matrix {
        let p = &self.params;
        let d_accel_dq = (-p.mass * p.gravity * p.length - p.damping * s[0].cos()) / p.inertia();
        Matrix::from_vec(2, 2, vec![1.0, p.dt, p.dt * d_accel_dq, 1.0]).expect("2x2")
    }

    fn dynamics_action_jacobian(&self, _s: &[f64], _a: &[f64]) -> Matrix {
        Matrix::from_vec(2, 1, vec![0.0, self.params.dt / self.params.inertia()]).expect("2x1")
    }

    fn running_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -(self.state_penalty(s) + self.params.w_u * a[0] * a[0])
    }

    fn running_reward_grad_s(&self, s: &[f64], _a: &[f64]) -> Vec<f64> {
        self.state_penalty_grad(s).into_iter().map(|g| -g).collect()
    }

    fn running_reward_grad_a(&self, _s: &[f64], a: &[f64]) -> Vec<f64> {
        vec![-2.0 * self.params.w_u * a[0]]
    }

    fn terminal_reward(&self, s: &[f64]) -> f64 {
        -self.state_penalty(s)
    }

    fn terminal_reward_grad(&self, s: &[f64]) -> Vec<f64> {
        self.state_penalty_grad(s).into_iter().map(|g| -g).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::testing::{assert_dynamics_jacobians, assert_reward_gradients};

    #[test]
    fn noiseless_reset_is_origin() {
        let mut params = PendulumParams::default();
        params.s0_noise_std = 0.0;
        let env = PendulumEnv::new(params, 10, 0.99);
        assert_eq!(env.reset(5), vec![0.0, 0.0]);
    }

    #[test]
    fn origin_is_a_fixed_point_without_torque() {
        let env = PendulumEnv::benchmark();
        let step = env.step(&[0.0, 0.0], &[0.0], 0).unwrap();
        assert_eq!(step.next_state, vec![0.0, 0.0]);
    }

    #[test]
    fn inertia_uses_the_gravity_scaled_formula() {
        let p = PendulumParams::default();
        assert!((p.inertia() - 9.81 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn torque_is_clipped_in_step() {
        let env = PendulumEnv::benchmark();
        let clipped = env.step(&[0.0, 0.0], &[100.0], 0).unwrap();
        let at_limit = env.step(&[0.0, 0.0], &[10.0], 0).unwrap();
        assert_eq!(clipped.next_state, at_limit.next_state);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let env = PendulumEnv::benchmark();
        for (s, a) in [([0.3, -0.8], [1.5]), ([2.9, 0.4], [-3.0]), ([-1.0, 2.0], [0.0])] {
            assert_reward_gradients(&env, &s, &a, 1e-6);
            assert_dynamics_jacobians(&env, &s, &a, 1e-7);
        }
    }
}
