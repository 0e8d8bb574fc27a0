use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, Environment, TerminalReward};
use crate::tensor::Matrix;

const POWER: f64 = 0.0015;
const GRAVITY: f64 = 0.0025;
const MAX_SPEED: f64 = 0.07;
const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarParams {
    /// Weight of the quadratic action penalty.
    pub w_a: f64,
    /// Weight of the linear terminal reward on position.
    pub w_s: f64,
    pub goal_x: f64,
    pub horizon: usize,
    /// Initial position is uniform on this interval, velocity starts at zero.
    pub start_low: f64,
    pub start_high: f64,
}

impl Default for MountainCarParams {
    fn default() -> Self {
        Self {
            w_a: 0.1,
            w_s: 100.0,
            goal_x: 0.45,
            horizon: 200,
            start_low: -0.6,
            start_high: -0.4,
        }
    }
}

/// Continuous-action mountain car with the classic valley physics.
#[derive(Debug, Clone)]
pub struct MountainCarEnv {
    pub params: MountainCarParams,
    spec: EnvSpec,
    start_mean: Vec<f64>,
}

impl MountainCarEnv {
    pub fn new(params: MountainCarParams, discount: f64) -> Self {
        let start_mean = vec![0.5 * (params.start_low + params.start_high), 0.0];
        Self {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                horizon: params.horizon,
                discount,
                reward_gradient_available: true,
                terminal_reward: TerminalReward::Linear,
            },
            params,
            start_mean,
        }
    }

    pub fn benchmark() -> Self {
        Self::new(MountainCarParams::default(), 0.99)
    }

    /// Unclipped velocity update and whether each clip is active.
    fn raw_update(&self, s: &[f64], a: &[f64]) -> (f64, f64, bool, bool, bool) {
        let (x, v) = (s[0], s[1]);
        let force = a[0].clamp(-1.0, 1.0);
        let v_raw = v + force * POWER - GRAVITY * (3.0 * x).cos();
        let v_clipped = !(-MAX_SPEED..=MAX_SPEED).contains(&v_raw);
        let v_new = v_raw.clamp(-MAX_SPEED, MAX_SPEED);
        let x_raw = x + v_new;
        let x_clipped = !(MIN_POSITION..=MAX_POSITION).contains(&x_raw);
        let x_new = x_raw.clamp(MIN_POSITION, MAX_POSITION);
        let wall_stop = x_new == MIN_POSITION && v_new < 0.0;
        (x_new, if wall_stop { 0.0 } else { v_new }, v_clipped, x_clipped, wall_stop)
    }
}

impl Environment for MountainCarEnv {
    fn name(&self) -> &'static str {
        "mountain_car"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_mean(&self) -> &[f64] {
        &self.start_mean
    }

    fn initial_noise_std(&self) -> f64 {
        0.0
    }

    fn reset(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = self.params.start_low;
        let hi = self.params.start_high;
        let x = if hi > lo { rng.random_range(lo..hi) } else { lo };
        vec![x, 0.0]
    }

    fn action_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![-1.0], vec![1.0]))
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (x, v, ..) = self.raw_update(s, a);
        vec![x, v]
    }

    fn dynamics_state_jacobian(&self, s: &[f64], a: &[f64]) -> Matrix {
        let (_, _, v_clipped, x_clipped, wall_stop) = self.raw_update(s, a);
        // d v_new / d(x, v)
        let (dv_dx, dv_dv) = if v_clipped {
            (0.0, 0.0)
        } else {
            (3.0 * GRAVITY * (3.0 * s[0]).sin(), 1.0)
        };
        let (dx_dx, dx_dv) = if x_clipped {
            (0.0, 0.0)
        } else {
            (1.0 + dv_dx, dv_dv)
        };
        let (dv_dx, dv_dv) = if wall_stop { (0.0, 0.0) } else { (dv_dx, dv_dv) };
        Matrix::from_vec(2, 2, vec![dx_dx, dx_dv, dv_dx, dv_dv]).expect("2x2")
    }

    fn dynamics_action_jacobian(&self, s: &[f64], a: &[f64]) -> Matrix {
        let (_, _, v_clipped, x_clipped, wall_stop) = self.raw_update(s, a);
        let dv_da = if v_clipped || a[0].abs() > 1.0 { 0.0 } else { POWER };
        let dx_da = if x_clipped { 0.0 } else { dv_da };
        let dv_da = if wall_stop { 0.0 } else { dv_da };
        Matrix::from_vec(2, 1, vec![dx_da, dv_da]).expect("2x1")
    }

    fn running_reward(&self, _s: &[f64], a: &[f64]) -> f64 {
        -self.params.w_a * a[0] * a[0]
    }

    fn running_reward_grad_s(&self, _s: &[f64], _a: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn running_reward_grad_a(&self, _s: &[f64], a: &[f64]) -> Vec<f64> {
        vec![-2.0 * self.params.w_a * a[0]]
    }

    fn terminal_reward(&self, s: &[f64]) -> f64 {
        self.params.w_s * (s[0] - self.params.goal_x)
    }

    fn terminal_reward_grad(&self, _s: &[f64]) -> Vec<f64> {
        vec![self.params.w_s, 0.0]
    }

    fn is_goal(&self, s: &[f64]) -> bool {
        s[0] >= self.params.goal_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::testing::{assert_dynamics_jacobians, assert_reward_gradients};

    /// Straight-line copy of the classic update, written independently.
    fn reference_step(x: f64, v: f64, a: f64) -> (f64, f64) {
        let force = a.min(1.0).max(-1.0);
        let mut velocity = v + force * 0.0015 - 0.0025 * (3.0 * x).cos();
        if velocity > 0.07 {
            velocity = 0.07;
        }
        if velocity < -0.07 {
            velocity = -0.07;
        }
        let mut position = x + velocity;
        if position > 0.6 {
            position = 0.6;
        }
        if position < -1.2 {
            position = -1.2;
        }
        if position == -1.2 && velocity < 0.0 {
            velocity = 0.0;
        }
        (position, velocity)
    }

    #[test]
    fn zero_action_matches_reference_physics() {
        let env = MountainCarEnv::benchmark();
        let (mut x, mut v) = (-0.5, 0.0);
        let mut s = vec![x, v];
        for t in 0..150 {
            let step = env.step(&s, &[0.0], t).unwrap();
            (x, v) = reference_step(x, v, 0.0);
            assert_eq!(step.next_state, vec![x, v]);
            s = step.next_state;
        }
    }

    #[test]
    fn terminal_reward_at_goal() {
        let env = MountainCarEnv::benchmark();
        assert_eq!(env.terminal_reward(&[0.45, 0.0]), 0.0);
        assert_eq!(env.terminal_reward_grad(&[0.45, 0.0]), vec![100.0, 0.0]);
    }

    #[test]
    fn reaching_goal_ends_episode() {
        let env = MountainCarEnv::benchmark();
        let step = env.step(&[0.44, 0.05], &[1.0], 3).unwrap();
        assert!(step.done);
        assert!(!env.step(&[-0.5, 0.0], &[1.0], 3).unwrap().done);
        assert!(env.step(&[-0.5, 0.0], &[1.0], 199).unwrap().done);
    }

    #[test]
    fn reset_is_uniform_in_the_valley() {
        let env = MountainCarEnv::benchmark();
        for seed in 0..50 {
            let s = env.reset(seed);
            assert!((-0.6..-0.4).contains(&s[0]));
            assert_eq!(s[1], 0.0);
        }
        assert_eq!(env.reset(4), env.reset(4));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let env = MountainCarEnv::benchmark();
        for (s, a) in [([-0.5, 0.01], [0.3]), ([0.1, -0.02], [-0.7]), ([-0.9, 0.03], [0.9])] {
            assert_reward_gradients(&env, &s, &a, 1e-6);
            assert_dynamics_jacobians(&env, &s, &a, 1e-7);
        }
    }
}
