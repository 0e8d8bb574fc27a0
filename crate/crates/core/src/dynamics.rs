//! Learned transition model `f̂(s, a) ≈ s'` and the [`Dynamics`] abstraction
//! shared by the learned model and the exact environment dynamics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::mlp::{read_f64, read_u32, ForwardTrace, MlpParams, DEFAULT_HIDDEN};
use crate::optim::Adam;
use crate::tensor::Matrix;

/// A differentiable deterministic transition function.
pub trait Dynamics: Sync {
    /// Whatever a forward evaluation needs to keep for the backward pass.
    type Cache;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Next state plus the cache for [`Self::vjp`].
    fn eval(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Self::Cache)>;

    fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(s, a)?.0)
    }

    /// `(∂f/∂s)ᵀ v` and `(∂f/∂a)ᵀ v` at the cached point.
    fn vjp(&self, cache: &Self::Cache, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Explicit `(∂f/∂s, ∂f/∂a)`.
    fn jacobians(&self, cache: &Self::Cache) -> Result<(Matrix, Matrix)>;
}

/// The environment's own transition function viewed as a model.
pub struct ExactDynamics<'a> {
    pub env: &'a dyn Environment,
}

impl<'a> ExactDynamics<'a> {
    pub fn new(env: &'a dyn Environment) -> Self {
        Self { env }
    }
}

impl Dynamics for ExactDynamics<'_> {
    type Cache = (Vec<f64>, Vec<f64>);

    fn state_dim(&self) -> usize {
        self.env.spec().state_dim
    }

    fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    fn eval(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Self::Cache)> {
        check_len("dynamics state", self.state_dim(), s.len())?;
        check_len("dynamics action", self.action_dim(), a.len())?;
        Ok((self.env.dynamics(s, a), (s.to_vec(), a.to_vec())))
    }

    fn vjp(&self, cache: &Self::Cache, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (js, ja) = self.jacobians(cache)?;
        Ok((js.tmatvec(v)?, ja.tmatvec(v)?))
    }

    fn jacobians(&self, (s, a): &Self::Cache) -> Result<(Matrix, Matrix)> {
        Ok((
            self.env.dynamics_state_jacobian(s, a),
            self.env.dynamics_action_jacobian(s, a),
        ))
    }
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column statistics. Constant columns get std 1 so they pass through shifted.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            count += 1;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = count.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Predict `s' - s` instead of `s'`.
    pub residual: bool,
    pub shuffle: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            residual: false,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean squared error in normalized target space, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// `f̂(s, a) = denorm(net(norm([s; a])))`, optionally plus `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub net: MlpParams,
    pub state_dim: usize,
    pub action_dim: usize,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
    pub residual: bool,
}

const MODEL_MAGIC: &[u8; 4] = b"PMDM";
const MODEL_VERSION: u32 = 1;

impl DynamicsModel {
    /// Identity normalization around the given network.
    pub fn from_net(net: MlpParams, state_dim: usize) -> Result<Self> {
        let (in_dim, _, out_dim) = net.validate()?;
        check_len("dynamics net output", state_dim, out_dim)?;
        if in_dim <= state_dim {
            return Err(Error::input("dynamics net input must hold state and action"));
        }
        Ok(Self {
            state_dim,
            action_dim: in_dim - state_dim,
            input_norm: Normalizer::identity(in_dim),
            target_norm: Normalizer::identity(state_dim),
            residual: false,
            net,
        })
    }

    fn input(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_len("dynamics state", self.state_dim, s.len())?;
        check_len("dynamics action", self.action_dim, a.len())?;
        let mut z = Vec::with_capacity(self.state_dim + self.action_dim);
        z.extend_from_slice(s);
        z.extend_from_slice(a);
        Ok(self.input_norm.apply(&z))
    }

    fn output(&self, s: &[f64], trace: &ForwardTrace) -> Vec<f64> {
        let mut out = self.target_norm.invert(&trace.output);
        if self.residual {
            for (o, x) in out.iter_mut().zip(s) {
                *o += x;
            }
        }
        out
    }

    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        let trace = self.net.forward(&self.input(s, a)?)?;
        Ok((self.output(s, &trace), trace))
    }

    pub fn predict_state_jacobian(&self, s: &[f64], a: &[f64]) -> Result<Matrix> {
        let (_, trace) = self.forward(s, a)?;
        Ok(self.scaled_jacobians(&trace)?.0)
    }

    pub fn predict_action_jacobian(&self, s: &[f64], a: &[f64]) -> Result<Matrix> {
        let (_, trace) = self.forward(s, a)?;
        Ok(self.scaled_jacobians(&trace)?.1)
    }

    /// `target_std ⊙ J_net ⊘ input_std`, plus the identity in residual mode.
    fn scaled_jacobians(&self, trace: &ForwardTrace) -> Result<(Matrix, Matrix)> {
        let raw = self.net.input_jacobian_block(trace, 0, self.net.in_dim())?;
        let m = self.state_dim;
        let mut js = Matrix::zeros(m, m);
        let mut ja = Matrix::zeros(m, self.action_dim);
        for r in 0..m {
            let ts = self.target_norm.std[r];
            for c in 0..raw.cols() {
                let v = ts * raw.get(r, c) / self.input_norm.std[c];
                if c < m {
                    js.set(r, c, v);
                } else {
                    ja.set(r, c - m, v);
                }
            }
            if self.residual {
                js.set(r, r, js.get(r, r) + 1.0);
            }
        }
        Ok((js, ja))
    }

    /// Mean squared next-state error per dimension, in original units.
    pub fn mse_per_dim(&self, data: &[Transition]) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::input("empty evaluation set"));
        }
        let mut acc = vec![0.0; self.state_dim];
        for tr in data {
            let pred = self.predict(&tr.s, &tr.a)?;
            for ((e, p), y) in acc.iter_mut().zip(&pred).zip(&tr.s_next) {
                *e += (p - y) * (p - y);
            }
        }
        Ok(acc.into_iter().map(|e| e / data.len() as f64).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&[u8::from(self.residual)])?;
        self.net.write_to(&mut w)?;
        for norm in [&self.input_norm, &self.target_norm] {
            for v in norm.mean.iter().chain(&norm.std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::input("not a dynamics model file"));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::input(format!("unsupported model version {version}")));
        }
        let m = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let net = MlpParams::read_from(&mut r)?;
        check_len("model file input dim", m + n, net.in_dim())?;
        check_len("model file output dim", m, net.out_dim())?;
        let mut read_norm = |dim: usize| -> Result<Normalizer> {
            let mean = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
            let std = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
            Ok(Normalizer { mean, std })
        };
        let input_norm = read_norm(m + n)?;
        let target_norm = read_norm(m)?;
        Ok(Self {
            net,
            state_dim: m,
            action_dim: n,
            input_norm,
            target_norm,
            residual: flag[0] != 0,
        })
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

impl Dynamics for DynamicsModel {
    type Cache = ForwardTrace;

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn eval(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.forward(s, a)
    }

    fn vjp(&self, trace: &ForwardTrace, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("dynamics vjp", self.state_dim, v.len())?;
        let scaled: Vec<f64> = v.iter().zip(&self.target_norm.std).map(|(x, s)| x * s).collect();
        let mut g = self.net.input_vjp(trace, &scaled)?;
        for (gi, s) in g.iter_mut().zip(&self.input_norm.std) {
            *gi /= s;
        }
        let ga = g.split_off(self.state_dim);
        if self.residual {
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi += vi;
            }
        }
        Ok((g, ga))
    }

    fn jacobians(&self, trace: &ForwardTrace) -> Result<(Matrix, Matrix)> {
        self.scaled_jacobians(trace)
    }
}

/// Regresses `s'` (or `s' - s`) on `[s; a]` with minibatch Adam.
pub fn fit_dynamics(
    data: &[Transition],
    state_dim: usize,
    action_dim: usize,
    cfg: &FitConfig,
) -> Result<(DynamicsModel, FitReport)> {
    if data.is_empty() {
        return Err(Error::input("cannot fit dynamics to an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("batch_size must be positive"));
    }
    for tr in data {
        check_len("transition state", state_dim, tr.s.len())?;
        check_len("transition action", action_dim, tr.a.len())?;
        check_len("transition next state", state_dim, tr.s_next.len())?;
    }
    let inputs: Vec<Vec<f64>> = data.iter().map(|tr| [tr.s.as_slice(), &tr.a].concat()).collect();
    let targets: Vec<Vec<f64>> = data
        .iter()
        .map(|tr| {
            if cfg.residual {
                tr.s_next.iter().zip(&tr.s).map(|(y, x)| y - x).collect()
            } else {
                tr.s_next.clone()
            }
        })
        .collect();
    let input_norm = Normalizer::fit(state_dim + action_dim, inputs.iter().map(Vec::as_slice));
    let target_norm = Normalizer::fit(state_dim, targets.iter().map(Vec::as_slice));
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| input_norm.apply(x)).collect();
    let ys: Vec<Vec<f64>> = targets.iter().map(|y| target_norm.apply(y)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = MlpParams::random(state_dim + action_dim, cfg.hidden, state_dim, &mut rng);
    let mut opt = Adam::new(cfg.lr, &net);
    let mut grads = net.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut err = vec![0.0; state_dim];
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            let traces = net.forward_batch(&batch.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>())?;
            let scale = 2.0 / (batch.len() * state_dim) as f64;
            for (trace, &i) in traces.iter().zip(batch) {
                for ((e, p), y) in err.iter_mut().zip(&trace.output).zip(&ys[i]) {
                    *e = p - y;
                    total += *e * *e;
                }
                net.backward_accumulate(trace, &err, scale, &mut grads)?;
            }
            opt.step(&mut net, &grads);
        }
        let loss = total / (data.len() * state_dim) as f64;
        if !loss.is_finite() || !net.is_finite() {
            return Err(Error::numeric(epoch, "dynamics loss diverged"));
        }
        epoch_losses.push(loss);
    }
    let model = DynamicsModel {
        net,
        state_dim,
        action_dim,
        input_norm,
        target_norm,
        residual: cfg.residual,
    };
    Ok((model, FitReport { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(seed: u64, residual: bool) -> DynamicsModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MlpParams::random(3, 16, 2, &mut rng);
        let mut model = DynamicsModel::from_net(net, 2).unwrap();
        model.input_norm = Normalizer {
            mean: vec![0.3, -1.0, 2.0],
            std: vec![0.5, 2.0, 3.0],
        };
        model.target_norm = Normalizer {
            mean: vec![1.0, -0.5],
            std: vec![4.0, 0.25],
        };
        model.residual = residual;
        model
    }

    #[test]
    fn identity_normalization_gives_raw_network_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpParams::random(3, 8, 2, &mut rng);
        let model = DynamicsModel::from_net(net.clone(), 2).unwrap();
        let s = [0.2, -0.4];
        let a = [0.7];
        let trace = net.forward(&[0.2, -0.4, 0.7]).unwrap();
        let direct = net.state_jacobian(&trace, 2).unwrap();
        assert_eq!(model.predict_state_jacobian(&s, &a).unwrap(), direct);
    }

    #[test]
    fn zero_network_has_zero_jacobian() {
        let model = DynamicsModel::from_net(MlpParams::zeros(3, 4, 2), 2).unwrap();
        let j = model.predict_state_jacobian(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(j, Matrix::zeros(2, 2));
    }

    #[test]
    fn vjp_matches_explicit_scaled_jacobians() {
        for residual in [false, true] {
            let model = random_model(4, residual);
            let (_, trace) = model.forward(&[0.1, 0.9], &[-0.3]).unwrap();
            let (js, ja) = model.jacobians(&trace).unwrap();
            let v = [0.7, -1.3];
            let (gs, ga) = model.vjp(&trace, &v).unwrap();
            let es = js.tmatvec(&v).unwrap();
            let ea = ja.tmatvec(&v).unwrap();
            for (x, y) in gs.iter().chain(&ga).zip(es.iter().chain(&ea)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let model = random_model(5, true);
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        assert_eq!(DynamicsModel::read_from(bytes.as_slice()).unwrap(), model);
    }

    #[test]
    fn empty_dataset_is_an_input_error() {
        let err = fit_dynamics(&[], 2, 1, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn single_transition_is_interpolated() {
        let tr = Transition {
            s: vec![0.5, -0.2],
            a: vec![1.0],
            s_next: vec![0.7, 0.1],
            r: 0.0,
            done: false,
            t: 0,
        };
        let data = vec![tr.clone(); 32];
        let cfg = FitConfig {
            epochs: 200,
            batch_size: 8,
            hidden: 16,
            ..FitConfig::default()
        };
        let (model, _) = fit_dynamics(&data, 2, 1, &cfg).unwrap();
        let pred = model.predict(&tr.s, &tr.a).unwrap();
        for (p, y) in pred.iter().zip(&tr.s_next) {
            assert!((p - y).abs() < 1e-3, "{p} vs {y}");
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let data: Vec<Transition> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.1;
                Transition {
                    s: vec![x, -x],
                    a: vec![0.5 * x],
                    s_next: vec![x + 0.5 * x, -x],
                    r: 0.0,
                    done: false,
                    t: 0,
                }
            })
            .collect();
        let cfg = FitConfig {
            epochs: 5,
            batch_size: 7,
            hidden: 8,
            seed: 11,
            ..FitConfig::default()
        };
        let (m1, r1) = fit_dynamics(&data, 2, 1, &cfg).unwrap();
        let (m2, r2) = fit_dynamics(&data, 2, 1, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }
}
