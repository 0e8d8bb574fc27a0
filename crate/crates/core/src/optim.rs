//! First-order optimizers over [`MlpParams`]. All of them descend.

use serde::{Deserialize, Serialize};

use crate::mlp::{MlpGrads, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, like: &MlpParams) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr;
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= step * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, like: &MlpParams) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, like)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam(a) => a.lr,
            Optimizer::Sgd { lr } => *lr,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_grad(p: &MlpParams, target: f64) -> MlpGrads {
        let mut g = p.clone();
        for s in g.slices_mut() {
            for v in s.iter_mut() {
                *v = 2.0 * (*v - target);
            }
        }
        g
    }

    #[test]
    fn first_adam_step_moves_each_weight_by_lr() {
        let mut p = MlpParams::zeros(2, 3, 1);
        let mut g = p.zeros_like();
        g.w1.data_mut()[0] = 5.0;
        g.b3[0] = -0.01;
        let mut opt = Adam::new(0.1, &p);
        opt.step(&mut p, &g);
        assert!((p.w1.data()[0] + 0.1).abs() < 1e-6);
        assert!((p.b3[0] - 0.1).abs() < 1e-5);
        assert_eq!(p.w2.data()[0], 0.0);
    }

    #[test]
    fn both_optimizers_minimize_a_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut p = MlpParams::zeros(1, 2, 1);
            let mut opt = Optimizer::new(kind, 0.05, &p);
            for _ in 0..2000 {
                let g = quadratic_grad(&p, 1.5);
                opt.step(&mut p, &g);
            }
            for v in p.flatten() {
                assert!((v - 1.5).abs() < 1e-3, "{kind:?}: {v}");
            }
        }
    }

    #[test]
    fn sgd_is_plain_gradient_descent() {
        let mut p = MlpParams::zeros(1, 1, 1);
        let mut g = p.zeros_like();
        g.b1[0] = 2.0;
        Optimizer::Sgd { lr: 0.25 }.step(&mut p, &g);
        assert_eq!(p.b1[0], -0.5);
    }
}
