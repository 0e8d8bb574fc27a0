use crate::env::{EnvSpec, Environment, TerminalReward};
use crate::error::{check_len, Error, Result};
use crate::tensor::{dot, Matrix};

/// Linear dynamics with quadratic running and terminal costs.
///
/// `s' = A s + B a`, `r = -(sᵀ U s + aᵀ R a)`, `r_T = -sᵀ U_f s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrParams {
    pub a: Matrix,
    pub b: Matrix,
    /// State cost `U`.
    pub state_cost: Matrix,
    /// Action cost `R`.
    pub action_cost: Matrix,
    /// Terminal cost `U_f`.
    pub terminal_cost: Matrix,
    pub s0_mean: Vec<f64>,
    pub s0_noise_std: f64,
}

impl LqrParams {
    /// Five states, three inputs, `A = I`, unit running costs and `U_f = 0.1 I`.
    pub fn benchmark() -> Self {
        let b = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0],
        ])
        .expect("static shape");
        Self {
            a: Matrix::identity(5),
            b,
            state_cost: Matrix::identity(5),
            action_cost: Matrix::identity(3),
            terminal_cost: Matrix::identity(5).scale(0.1),
            s0_mean: vec![0.0, 1.0, 1.0, 0.0, 0.0],
            s0_noise_std: 0.01,
        }
    }

    /// Forward-Euler discretization of `ṡ = A_c s + B_c a` with running cost
    /// integrated over a step of length `dt`.
    pub fn discretized(
        a_c: &Matrix,
        b_c: &Matrix,
        state_cost: &Matrix,
        action_cost: &Matrix,
        terminal_cost: &Matrix,
        dt: f64,
        s0_mean: Vec<f64>,
    ) -> Result<Self> {
        let m = a_c.rows();
        Ok(Self {
            a: Matrix::identity(m).add(&a_c.scale(dt))?,
            b: b_c.scale(dt),
            state_cost: state_cost.scale(dt),
            action_cost: action_cost.scale(dt),
            terminal_cost: terminal_cost.clone(),
            s0_mean,
            s0_noise_std: 0.0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.state_dim();
        let n = self.action_dim();
        check_len("LQR A cols", m, self.a.cols())?;
        check_len("LQR B rows", m, self.b.rows())?;
        check_len("LQR U", m, self.state_cost.rows())?;
        check_len("LQR U", m, self.state_cost.cols())?;
        check_len("LQR R", n, self.action_cost.rows())?;
        check_len("LQR R", n, self.action_cost.cols())?;
        check_len("LQR U_f", m, self.terminal_cost.rows())?;
        check_len("LQR U_f", m, self.terminal_cost.cols())?;
        check_len("LQR s0", m, self.s0_mean.len())?;
        for (name, mat) in [
            ("U", &self.state_cost),
            ("R", &self.action_cost),
            ("U_f", &self.terminal_cost),
        ] {
            if mat.asymmetry() > 1e-12 {
                return Err(Error::input(format!("LQR cost {name} must be symmetric")));
            }
        }
        Ok(())
    }

    /// Running cost `sᵀ U s + aᵀ R a` (cost convention).
    pub fn stage_cost(&self, s: &[f64], a: &[f64]) -> f64 {
        quad(&self.state_cost, s) + quad(&self.action_cost, a)
    }

    pub fn terminal_cost_value(&self, s: &[f64]) -> f64 {
        quad(&self.terminal_cost, s)
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = self.a.matvec(s).expect("validated shape");
        for (o, v) in out.iter_mut().zip(self.b.matvec(a).expect("validated shape")) {
            *o += v;
        }
        out
    }
}

fn quad(m: &Matrix, x: &[f64]) -> f64 {
    dot(x, &m.matvec(x).expect("validated shape"))
}

/// `(M + Mᵀ) x`, the gradient of `xᵀ M x`.
fn quad_grad(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut g = m.matvec(x).expect("validated shape");
    for (gi, ti) in g.iter_mut().zip(m.tmatvec(x).expect("validated shape")) {
        *gi += ti;
    }
    g
}

#[derive(Debug, Clone)]
pub struct LqrEnv {
    pub params: LqrParams,
    spec: EnvSpec,
}

impl LqrEnv {
    pub fn new(params: LqrParams, horizon: usize) -> Result<Self> {
        params.validate()?;
        if horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        let spec = EnvSpec {
            state_dim: params.state_dim(),
            action_dim: params.action_dim(),
            horizon,
            discount: 1.0,
            reward_gradient_available: true,
            terminal_reward: TerminalReward::Quadratic,
        };
        Ok(Self { params, spec })
    }

    /// The ten-step, five-state benchmark.
    pub fn benchmark() -> Self {
        Self::new(LqrParams::benchmark(), 10).expect("benchmark parameters are valid")
    }

    pub fn with_initial_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        check_len("LQR s0", self.spec.state_dim, mean.len())?;
        self.params.s0_mean = mean;
        Ok(self)
    }

    pub fn with_noise_std(mut self, std: f64) -> Self {
        self.params.s0_noise_std = std;
        self
    }
}

impl Environment for LqrEnv {
    fn name(&self) -> &'static str {
        "lqr"
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
        None
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        self.params.next_state(s, a)
    }

    fn dynamics_state_jacobian(&self, _s: &[f64], _a: &[f64]) -> Matrix {
        self.params.a.clone()
    }

    fn dynamics_action_jacobian(&self, _s: &[f64], _a: &[f64]) -> Matrix {
        self.params.b.clone()
    }

    fn running_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -self.params.stage_cost(s, a)
    }

    fn running_reward_grad_s(&self, s: &[f64], _a: &[f64]) -> Vec<f64> {
        quad_grad(&self.params.state_cost, s).into_iter().map(|g| -g).collect()
    }

    fn running_reward_grad_a(&self, _s: &[f64], a: &[f64]) -> Vec<f64> {
        quad_grad(&self.params.action_cost, a).into_iter().map(|g| -g).collect()
    }

    fn terminal_reward(&self, s: &[f64]) -> f64 {
        -self.params.terminal_cost_value(s)
    }

    fn terminal_reward_grad(&self, s: &[f64]) -> Vec<f64> {
        quad_grad(&self.params.terminal_cost, s).into_iter().map(|g| -g).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::testing::{assert_dynamics_jacobians, assert_reward_gradients};

    #[test]
    fn noiseless_reset_is_the_nominal_state() {
        let env = LqrEnv::benchmark().with_noise_std(0.0);
        assert_eq!(env.reset(123), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let env = LqrEnv::benchmark();
        assert_eq!(env.reset(7), env.reset(7));
        assert_ne!(env.reset(7), env.reset(8));
    }

    #[test]
    fn zero_action_holds_state_with_unit_costs() {
        let env = LqrEnv::benchmark();
        let s = [0.0, 1.0, 1.0, 0.0, 0.0];
        let step = env.step(&s, &[0.0; 3], 0).unwrap();
        assert_eq!(step.next_state, s.to_vec());
        assert_eq!(step.reward, -2.0);
        assert!(!step.done);
        assert!(env.step(&s, &[0.0; 3], 9).unwrap().done);
    }

    #[test]
    fn reward_values_and_gradients_by_hand() {
        let env = LqrEnv::benchmark();
        assert_eq!(env.running_reward(&[0.0; 5], &[0.0; 3]), 0.0);
        assert_eq!(env.running_reward_grad_s(&[0.0; 5], &[0.0; 3]), vec![0.0; 5]);
        assert_eq!(
            env.running_reward_grad_s(&[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3]),
            vec![-2.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(env.terminal_reward(&[0.0; 5]), 0.0);
        let ones = [1.0; 5];
        assert!((env.terminal_reward(&ones) + 0.5).abs() < 1e-15);
        for g in env.terminal_reward_grad(&ones) {
            assert!((g + 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let env = LqrEnv::benchmark();
        let s = [0.3, -1.2, 0.7, 2.0, -0.4];
        let a = [0.5, -0.1, 1.5];
        assert_reward_gradients(&env, &s, &a, 1e-6);
        assert_dynamics_jacobians(&env, &s, &a, 1e-8);
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let env = LqrEnv::benchmark();
        let s = [f64::NAN, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(env.step(&s, &[0.0; 3], 0), Err(Error::Numeric { .. })));
    }
}
