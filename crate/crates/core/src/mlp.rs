//! Three-layer ReLU perceptron with hand-written forward and backward passes.
//!
//! ```text
//! h1 = W1 z + b1,  c1 = relu(h1)
//! h2 = W2 c1 + b2, c2 = relu(h2)
//! y  = W3 c2 + b3
//! ```
//!
//! The input Jacobian has the closed form `W3 D2 W2 D1 W1` with
//! `Di = diag(1[hi > 0])`, so no computation graph is ever built. The ReLU
//! derivative at exactly zero is taken as 0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tensor::{axpy, dot, Matrix};

pub const DEFAULT_HIDDEN: usize = 128;

const PARAM_MAGIC: &[u8; 4] = b"PMRL";
const PARAM_VERSION: u32 = 1;

/// Weights and biases of the perceptron. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

/// Gradient of a scalar with respect to every parameter, shaped like [`MlpParams`].
pub type MlpGrads = MlpParams;

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// Smallest `|h|` over both hidden layers; how close the input is to a ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        self.h1
            .iter()
            .chain(&self.h2)
            .fold(f64::INFINITY, |m, h| m.min(h.abs()))
    }
}

impl MlpParams {
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden_dim, in_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(hidden_dim, hidden_dim),
            b2: vec![0.0; hidden_dim],
            w3: Matrix::zeros(out_dim, hidden_dim),
            b3: vec![0.0; out_dim],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(in_dim, hidden_dim, out_dim);
        let fill = |slice: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in slice {
                *v = dist.sample(rng);
            }
        };
        fill(p.w1.data_mut(), in_dim, rng);
        fill(&mut p.b1, in_dim, rng);
        fill(p.w2.data_mut(), hidden_dim, rng);
        fill(&mut p.b2, hidden_dim, rng);
        fill(p.w3.data_mut(), hidden_dim, rng);
        fill(&mut p.b3, hidden_dim, rng);
        p
    }

    /// Checks the shape chain and returns `(in, hidden, out)`.
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let hidden = self.w1.rows();
        check_len("w2 rows", hidden, self.w2.rows())?;
        check_len("w2 cols", hidden, self.w2.cols())?;
        check_len("w3 cols", hidden, self.w3.cols())?;
        check_len("b1", hidden, self.b1.len())?;
        check_len("b2", hidden, self.b2.len())?;
        check_len("b3", self.w3.rows(), self.b3.len())?;
        Ok((self.w1.cols(), hidden, self.w3.rows()))
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    #[inline]
    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.w3.rows()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter blocks in storage order `w1, b1, w2, b2, w3, b3`.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.data(),
            &self.b1,
            self.w2.data(),
            &self.b2,
            self.w3.data(),
            &self.b3,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
            self.w3.data_mut(),
            &mut self.b3,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites all parameters from a flat vector in storage order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("MlpParams::set_flat", self.num_params(), flat.len())?;
        let mut offset = 0;
        for block in self.slices_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.hidden_dim(), self.out_dim())
    }

    /// `self += alpha * other`, blockwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &MlpParams) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for block in self.slices_mut() {
            block.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &MlpParams, tau: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(source.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        check_len("mlp_forward input", self.in_dim(), input.len())?;
        let h1 = affine(&self.w1, &self.b1, input);
        let c1 = relu(&h1);
        let h2 = affine(&self.w2, &self.b2, &c1);
        let c2 = relu(&h2);
        let output = affine(&self.w3, &self.b3, &c2);
        Ok(ForwardTrace {
            input: input.to_vec(),
            h1,
            c1,
            h2,
            c2,
            output,
        })
    }

    /// Output only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.output)
    }

    /// Evaluates a batch layer by layer. Uses the same kernels as [`Self::forward`],
    /// so each trace is bit-identical to the per-sample result.
    pub fn forward_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<ForwardTrace>> {
        for x in inputs {
            check_len("mlp_forward input", self.in_dim(), x.len())?;
        }
        let h1 = affine_batch(&self.w1, &self.b1, inputs.iter().map(Vec::as_slice));
        let c1: Vec<Vec<f64>> = h1.iter().map(|h| relu(h)).collect();
        let h2 = affine_batch(&self.w2, &self.b2, c1.iter().map(Vec::as_slice));
        let c2: Vec<Vec<f64>> = h2.iter().map(|h| relu(h)).collect();
        let out = affine_batch(&self.w3, &self.b3, c2.iter().map(Vec::as_slice));
        Ok(inputs
            .iter()
            .zip(h1)
            .zip(c1)
            .zip(h2)
            .zip(c2)
            .zip(out)
            .map(|(((((x, h1), c1), h2), c2), output)| ForwardTrace {
                input: x.clone(),
                h1,
                c1,
                h2,
                c2,
                output,
            })
            .collect())
    }

    /// Gradient of `out_grad · output` with respect to every parameter.
    pub fn backward_params(&self, trace: &ForwardTrace, out_grad: &[f64]) -> Result<MlpGrads> {
        let mut grads = self.zeros_like();
        self.backward_accumulate(trace, out_grad, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale * d(out_grad · output)/d(params)` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        out_grad: &[f64],
        scale: f64,
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        check_len("backward out_grad", self.out_dim(), out_grad.len())?;
        check_len("backward trace", self.in_dim(), trace.input.len())?;
        let d3 = out_grad;
        outer_accumulate(&mut grads.w3, d3, &trace.c2, scale);
        axpy(scale, d3, &mut grads.b3);

        let d2 = masked(self.w3.tmatvec(d3)?, &trace.h2);
        outer_accumulate(&mut grads.w2, &d2, &trace.c1, scale);
        axpy(scale, &d2, &mut grads.b2);

        let d1 = masked(self.w2.tmatvec(&d2)?, &trace.h1);
        outer_accumulate(&mut grads.w1, &d1, &trace.input, scale);
        axpy(scale, &d1, &mut grads.b1);

        self.w1.tmatvec(&d1)
    }

    /// `(W3 D2 W2 D1 W1)ᵀ v`: the input Jacobian transposed, applied to `v`.
    pub fn input_vjp(&self, trace: &ForwardTrace, v: &[f64]) -> Result<Vec<f64>> {
        check_len("input_vjp", self.out_dim(), v.len())?;
        let d2 = masked(self.w3.tmatvec(v)?, &trace.h2);
        let d1 = masked(self.w2.tmatvec(&d2)?, &trace.h1);
        self.w1.tmatvec(&d1)
    }

    /// `W3 D2 W2 D1 W1[:, cols]` for a contiguous block of input columns.
    pub fn input_jacobian_block(
        &self,
        trace: &ForwardTrace,
        start: usize,
        end: usize,
    ) -> Result<Matrix> {
        if end > self.in_dim() || start > end {
            return Err(Error::Shape {
                context: "input_jacobian_block columns",
                expected: self.in_dim(),
                actual: end,
            });
        }
        check_len("jacobian trace", self.hidden_dim(), trace.h1.len())?;
        // D1 W1s, then W2 (D1 W1s), then D2, then W3.
        let mut inner = self.w1.columns(start, end);
        mask_rows(&mut inner, &trace.h1);
        let mut mid = self.w2.matmul(&inner)?;
        mask_rows(&mut mid, &trace.h2);
        self.w3.matmul(&mid)
    }

    /// Jacobian of the output with respect to the first `state_dim` inputs.
    pub fn state_jacobian(&self, trace: &ForwardTrace, state_dim: usize) -> Result<Matrix> {
        self.input_jacobian_block(trace, 0, state_dim)
    }

    /// Jacobian of the output with respect to inputs `state_dim..in_dim`.
    pub fn action_jacobian(&self, trace: &ForwardTrace, state_dim: usize) -> Result<Matrix> {
        self.input_jacobian_block(trace, state_dim, self.in_dim())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (i, h, o) = self.validate()?;
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        for d in [i, h, o] {
            let d = u32::try_from(d).map_err(|_| Error::input("dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for block in self.slices() {
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAM_MAGIC {
            return Err(Error::input("not a parameter file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != PARAM_VERSION {
            return Err(Error::input(format!("unsupported parameter file version {version}")));
        }
        let i = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let o = read_u32(&mut r)? as usize;
        let mut p = Self::zeros(i, h, o);
        for block in p.slices_mut() {
            for v in block.iter_mut() {
                *v = read_f64(&mut r)?;
            }
        }
        Ok(p)
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

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[inline]
fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| dot(w.row(r), x) + b[r]).collect()
}

fn affine_batch<'a>(
    w: &Matrix,
    b: &[f64],
    xs: impl ExactSizeIterator<Item = &'a [f64]> + Clone,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; w.rows()]; xs.len()];
    for r in 0..w.rows() {
        let row = w.row(r);
        for (o, x) in out.iter_mut().zip(xs.clone()) {
            o[r] = dot(row, x) + b[r];
        }
    }
    out
}

#[inline]
fn relu(h: &[f64]) -> Vec<f64> {
    h.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

#[inline]
fn masked(mut g: Vec<f64>, h: &[f64]) -> Vec<f64> {
    for (gi, &hi) in g.iter_mut().zip(h) {
        if hi <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}

fn mask_rows(m: &mut Matrix, h: &[f64]) {
    let cols = m.cols();
    for (r, &hr) in h.iter().enumerate() {
        if hr <= 0.0 {
            m.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
        }
    }
}

fn outer_accumulate(g: &mut Matrix, left: &[f64], right: &[f64], scale: f64) {
    let cols = g.cols();
    for (r, &l) in left.iter().enumerate() {
        if l != 0.0 {
            axpy(scale * l, right, &mut g.data_mut()[r * cols..(r + 1) * cols]);
        }
    }
}
