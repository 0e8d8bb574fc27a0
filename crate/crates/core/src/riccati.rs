//! Finite-horizon discrete LQR solved by the backward Riccati recursion.
//!
//! Everything here is in cost space: `J = Σ sᵀUs + aᵀRa + s_Tᵀ U_f s_T`.
//! Negation into rewards happens only in the [`Actor`]/[`Critic`] adapters.

use std::io::Write;

use crate::env::LqrParams;
use crate::error::{check_len, Error, Result};
use crate::mve::Critic;
use crate::policy::Actor;
use crate::tensor::{Cholesky, Matrix};

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `P_0 ..= P_T`.
    pub p: Vec<Matrix>,
    /// `G_0 .. G_{T-1}`; the optimal action is `-G_t s`.
    pub gains: Vec<Matrix>,
    pub lqr: LqrParams,
}

/// States, actions and total cost of a simulated trajectory.
#[derive(Debug, Clone)]
pub struct OptimalTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub cost: f64,
}

/// One Riccati step: `(P_t, G_t)` from `P_{t+1}`.
fn riccati_step(lqr: &LqrParams, p_next: &Matrix, step: usize) -> Result<(Matrix, Matrix)> {
    let a = &lqr.a;
    let b = &lqr.b;
    let pb = p_next.matmul(b)?;
    let inner = lqr.action_cost.add(&b.transpose().matmul(&pb)?)?;
    let chol = Cholesky::new(&inner.symmetrized())
        .map_err(|_| Error::numeric(step, "R + BᵀPB is not positive definite"))?;
    let bt_pa = pb.transpose().matmul(a)?;
    let gain = chol.solve(&bt_pa)?;
    let at_p = a.transpose().matmul(p_next)?;
    let p = lqr
        .state_cost
        .add(&at_p.matmul(a)?)?
        .sub(&at_p.matmul(b)?.matmul(&gain)?)?;
    Ok((p, gain))
}

pub fn solve_riccati(lqr: &LqrParams, horizon: usize) -> Result<RiccatiSolution> {
    lqr.validate()?;
    let mut p = vec![lqr.terminal_cost.clone()];
    let mut gains = Vec::with_capacity(horizon);
    for step in (0..horizon).rev() {
        let (pt, g) = riccati_step(lqr, p.last().expect("non-empty"), step)?;
        if !pt.is_finite() || !g.is_finite() {
            return Err(Error::numeric(step, "Riccati recursion diverged"));
        }
        p.push(pt.symmetrized());
        gains.push(g);
    }
    p.reverse();
    gains.reverse();
    Ok(RiccatiSolution {
        p,
        gains,
        lqr: lqr.clone(),
    })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    fn check_t(&self, t: usize, max: usize) -> Result<()> {
        if t > max {
            Err(Error::input(format!("time index {t} beyond {max}")))
        } else {
            Ok(())
        }
    }

    pub fn optimal_action(&self, t: usize, s: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t, self.horizon().saturating_sub(1))?;
        check_len("riccati state", self.lqr.state_dim(), s.len())?;
        Ok(self.gains[t].matvec(s)?.into_iter().map(|v| -v).collect())
    }

    /// `sᵀ P_t s`, the optimal cost-to-go.
    pub fn value(&self, t: usize, s: &[f64]) -> Result<f64> {
        self.check_t(t, self.horizon())?;
        self.p[t].quad_form(s)
    }

    /// `Q*_t(s, a) = sᵀUs + aᵀRa + (As + Ba)ᵀ P_{t+1} (As + Ba)` for `t < T`.
    pub fn ground_truth_q(&self, t: usize, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_t(t, self.horizon().saturating_sub(1))?;
        if self.horizon() == 0 {
            return Err(Error::input("Q is undefined for a zero horizon"));
        }
        check_len("riccati state", self.lqr.state_dim(), s.len())?;
        check_len("riccati action", self.lqr.action_dim(), a.len())?;
        let next = self.lqr.next_state(s, a);
        Ok(self.lqr.stage_cost(s, a) + self.p[t + 1].quad_form(&next)?)
    }

    /// Minimized Hamiltonian, which equals `sᵀ P_t s`.
    pub fn ground_truth_h(&self, t: usize, s: &[f64]) -> Result<f64> {
        self.value(t, s)
    }

    /// `c(s, a) + λ*_{t+1}ᵀ (As + Ba)` with `λ*_{t+1} = 2 P_{t+1} (As + Ba)`: the
    /// Hamiltonian evaluated with the exact costate, for `t < T`.
    pub fn ground_truth_hamiltonian(&self, t: usize, s: &[f64], a: &[f64]) -> Result<f64> {
        let q = self.ground_truth_q(t, s, a)?;
        let next = self.lqr.next_state(s, a);
        Ok(q + self.p[t + 1].quad_form(&next)?)
    }

    /// `λ*_t = 2 P_t s`.
    pub fn ground_truth_costate(&self, t: usize, s: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t, self.horizon())?;
        Ok(self.p[t].matvec(s)?.into_iter().map(|v| 2.0 * v).collect())
    }

    /// Largest entry of `|P_t - (U + AᵀPA - AᵀPB G)|` over all `t`.
    pub fn recursion_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..self.horizon() {
            let (expected, _) = riccati_step(&self.lqr, &self.p[t + 1], t)?;
            worst = worst.max(self.p[t].max_abs_diff(&expected));
        }
        Ok(worst)
    }

    /// Applies `a_t` from `choose` for `t = 0..T` and sums the true cost.
    pub fn simulate_with(
        &self,
        s0: &[f64],
        mut choose: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    ) -> Result<OptimalTrajectory> {
        check_len("riccati state", self.lqr.state_dim(), s0.len())?;
        let mut states = vec![s0.to_vec()];
        let mut actions = Vec::with_capacity(self.horizon());
        let mut cost = 0.0;
        for t in 0..self.horizon() {
            let s = states.last().expect("non-empty");
            let a = choose(t, s)?;
            cost += self.lqr.stage_cost(s, &a);
            let next = self.lqr.next_state(s, &a);
            actions.push(a);
            states.push(next);
        }
        cost += self.lqr.terminal_cost_value(states.last().expect("non-empty"));
        Ok(OptimalTrajectory {
            states,
            actions,
            cost,
        })
    }

    pub fn simulate_optimal(&self, s0: &[f64]) -> Result<OptimalTrajectory> {
        self.simulate_with(s0, |t, s| self.optimal_action(t, s))
    }

    /// One CSV row per `(t, i, j)` entry of `P_t`.
    pub fn write_p_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,i,j,value")?;
        for (t, p) in self.p.iter().enumerate() {
            for i in 0..p.rows() {
                for j in 0..p.cols() {
                    writeln!(w, "{t},{i},{j},{}", p.get(i, j))?;
                }
            }
        }
        Ok(())
    }
}

/// Time-varying optimal linear feedback.
impl Actor for RiccatiSolution {
    fn act(&self, s: &[f64], t: usize) -> Result<Vec<f64>> {
        self.optimal_action(t, s)
    }
}

/// Reward-space ground truth: `-Q*_t(s, a)`, and `-r_T`-style `-sᵀU_f s` at `t = T`.
impl Critic for RiccatiSolution {
    fn value(&self, s: &[f64], a: &[f64], t: usize) -> Result<f64> {
        if t >= self.horizon() {
            return Ok(-self.lqr.terminal_cost_value(s));
        }
        Ok(-self.ground_truth_q(t, s, a)?)
    }
}
