//! Deterministic MLP policy with tanh squashing into the action box, and the
//! [`Actor`] interface shared with analytic controllers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::mlp::{read_f64, ForwardTrace, MlpGrads, MlpParams};

/// Anything that maps `(s, t)` to an action.
pub trait Actor: Sync {
    fn act(&self, s: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// Affine image of `tanh`: `a = mid + half ⊙ tanh(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScale {
    pub mid: Vec<f64>,
    pub half: Vec<f64>,
}

impl ActionScale {
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Self {
        Self {
            mid: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: MlpParams,
    /// `None` for unbounded action spaces, where the network output is the action.
    pub scale: Option<ActionScale>,
}

/// Forward pass of a policy: network trace, action and `da/dy` per dimension.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub net: ForwardTrace,
    pub action: Vec<f64>,
    pub dsquash: Vec<f64>,
}

impl Policy {
    pub fn new(net: MlpParams, scale: Option<ActionScale>) -> Result<Self> {
        let (_, _, out) = net.validate()?;
        if let Some(sc) = &scale {
            check_len("policy action scale", out, sc.mid.len())?;
            check_len("policy action scale", out, sc.half.len())?;
        }
        Ok(Self { net, scale })
    }

    /// Randomly initialized policy shaped for `env`.
    pub fn for_env<R: Rng + ?Sized>(env: &dyn Environment, hidden: usize, rng: &mut R) -> Self {
        let spec = env.spec();
        let net = MlpParams::random(spec.state_dim, hidden, spec.action_dim, rng);
        let scale = env.action_bounds().map(|(lo, hi)| ActionScale::from_bounds(&lo, &hi));
        Self { net, scale }
    }

    pub fn state_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn forward(&self, s: &[f64]) -> Result<PolicyTrace> {
        let net = self.net.forward(s)?;
        let (action, dsquash) = match &self.scale {
            None => (net.output.clone(), vec![1.0; net.output.len()]),
            Some(sc) => {
                let mut action = Vec::with_capacity(net.output.len());
                let mut d = Vec::with_capacity(net.output.len());
                for ((y, m), h) in net.output.iter().zip(&sc.mid).zip(&sc.half) {
                    let th = y.tanh();
                    action.push(m + h * th);
                    d.push(h * (1.0 - th * th));
                }
                (action, d)
            }
        };
        Ok(PolicyTrace {
            net,
            action,
            dsquash,
        })
    }

    pub fn action(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(s)?.action)
    }

    /// Adds `scale * (∂a/∂θ)ᵀ action_grad` into `grads`; returns `(∂a/∂s)ᵀ action_grad`.
    pub fn backward_accumulate(
        &self,
        trace: &PolicyTrace,
        action_grad: &[f64],
        scale: f64,
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        check_len("policy action grad", self.action_dim(), action_grad.len())?;
        let out_grad: Vec<f64> = action_grad.iter().zip(&trace.dsquash).map(|(g, d)| g * d).collect();
        self.net.backward_accumulate(&trace.net, &out_grad, scale, grads)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.net.write_to(&mut w)?;
        match &self.scale {
            None => w.write_all(&[0u8])?,
            Some(sc) => {
                w.write_all(&[1u8])?;
                for v in sc.mid.iter().chain(&sc.half) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let net = MlpParams::read_from(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let scale = match flag[0] {
            0 => None,
            1 => {
                let n = net.out_dim();
                let mid = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
                let half = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
                Some(ActionScale { mid, half })
            }
            _ => return Err(Error::input("corrupt policy file")),
        };
        Self::new(net, scale)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

impl Actor for Policy {
    fn act(&self, s: &[f64], _t: usize) -> Result<Vec<f64>> {
        self.action(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_policy_outputs_box_midpoint() {
        let p = Policy::new(
            MlpParams::zeros(2, 4, 1),
            Some(ActionScale::from_bounds(&[-1.0], &[3.0])),
        )
        .unwrap();
        assert_eq!(p.action(&[5.0, -5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn squashed_actions_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::random(2, 8, 1, &mut rng);
        net.scale(50.0);
        let p = Policy::new(net, Some(ActionScale::from_bounds(&[-2.0], &[2.0]))).unwrap();
        for i in 0..20 {
            let a = p.action(&[i as f64, -(i as f64)]).unwrap()[0];
            assert!((-2.0..=2.0).contains(&a));
        }
    }

    #[test]
    fn squash_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(
            MlpParams::random(2, 8, 2, &mut rng),
            Some(ActionScale::from_bounds(&[-1.0, 0.0], &[1.0, 4.0])),
        )
        .unwrap();
        let s = [0.3, -0.6];
        let tr = p.forward(&s).unwrap();
        let w = [0.8, -0.5];
        let mut grads = p.net.zeros_like();
        p.backward_accumulate(&tr, &w, 1.0, &mut grads).unwrap();
        let idx = 3;
        let h = 1e-6;
        let objective = |net: &MlpParams| {
            let q = Policy::new(net.clone(), p.scale.clone()).unwrap();
            let a = q.action(&s).unwrap();
            a[0] * w[0] + a[1] * w[1]
        };
        let mut plus = p.net.clone();
        plus.w1.data_mut()[idx] += h;
        let mut minus = p.net.clone();
        minus.w1.data_mut()[idx] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        assert!((fd - grads.w1.data()[idx]).abs() < 1e-7);
    }

    #[test]
    fn policy_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [None, Some(ActionScale::from_bounds(&[-10.0], &[10.0]))] {
            let p = Policy::new(MlpParams::random(2, 4, 1, &mut rng), scale).unwrap();
            let mut bytes = Vec::new();
            p.write_to(&mut bytes).unwrap();
            assert_eq!(Policy::read_from(bytes.as_slice()).unwrap(), p);
        }
    }
}
