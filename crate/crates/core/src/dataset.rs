//! Transitions, the PMDS dataset file format and the FIFO replay buffer.
//!
//! File layout: `"PMDS"`, version `u32`, state dim `u32`, action dim `u32`,
//! record count `u64`, then per record the little-endian `f64` values
//! `s, a, s', r, done (0/1), t`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::mlp::{read_f64, read_u32};

const DATA_MAGIC: &[u8; 4] = b"PMDS";
const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
    /// Time index of `s` within its episode.
    pub t: usize,
}

/// An ordered, dimension-checked list of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn push(&mut self, tr: Transition) -> Result<()> {
        check_transition(self.state_dim, self.action_dim, &tr)?;
        self.transitions.push(tr);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATA_MAGIC)?;
        w.write_all(&DATA_VERSION.to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for tr in &self.transitions {
            for v in tr.s.iter().chain(&tr.a).chain(&tr.s_next) {
                w.write_all(&v.to_le_bytes())?;
            }
            let done = if tr.done { 1.0f64 } else { 0.0 };
            for v in [tr.r, done, tr.t as f64] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATA_MAGIC {
            return Err(Error::input("not a PMDS dataset file"));
        }
        let version = read_u32(&mut r)?;
        if version != DATA_VERSION {
            return Err(Error::input(format!("unsupported dataset version {version}")));
        }
        let m = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut data = Dataset::new(m, n);
        let read_vec = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            (0..len).map(|_| read_f64(r)).collect()
        };
        for _ in 0..count {
            let s = read_vec(&mut r, m)?;
            let a = read_vec(&mut r, n)?;
            let s_next = read_vec(&mut r, m)?;
            let tail = read_vec(&mut r, 3)?;
            if tail[2] < 0.0 || tail[2].fract() != 0.0 {
                return Err(Error::input("dataset time index is not a non-negative integer"));
            }
            data.push(Transition {
                s,
                a,
                s_next,
                r: tail[0],
                done: tail[1] != 0.0,
                t: tail[2] as usize,
            })?;
        }
        Ok(data)
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

fn check_transition(m: usize, n: usize, tr: &Transition) -> Result<()> {
    check_len("transition state", m, tr.s.len())?;
    check_len("transition action", n, tr.a.len())?;
    check_len("transition next state", m, tr.s_next.len())
}

/// Bounded FIFO store with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            capacity,
            items: VecDeque::new(),
        }
    }

    /// A buffer holding exactly the dataset's transitions.
    pub fn from_dataset(data: &Dataset) -> Self {
        let capacity = data.len().max(1);
        let mut buf = Self::new(data.state_dim(), data.action_dim(), capacity);
        buf.items.extend(data.transitions().iter().cloned());
        buf
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends, dropping the oldest transition when full.
    pub fn push(&mut self, tr: Transition) -> Result<()> {
        check_transition(self.state_dim, self.action_dim, &tr)?;
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
        Ok(())
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::input("cannot sample from an empty buffer"));
        }
        let dist = Uniform::new(0, self.items.len()).expect("non-empty range");
        Ok((0..k).map(|_| dist.sample(rng)).collect())
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            transitions: self.items.iter().cloned().collect(),
        }
    }
}

/// Action box used for random behavior data: the environment's bounds, or
/// `[-fallback, fallback]` when the environment is unbounded.
pub fn behavior_bounds(env: &dyn Environment, fallback: f64) -> (Vec<f64>, Vec<f64>) {
    env.action_bounds().unwrap_or_else(|| {
        let n = env.spec().action_dim;
        (vec![-fallback; n], vec![fallback; n])
    })
}

/// Uniform-random-action episodes, concatenated until `size` transitions.
pub fn generate_random_dataset(
    env: &dyn Environment,
    size: usize,
    seed: u64,
    unbounded_action_range: f64,
) -> Result<Dataset> {
    let spec = env.spec();
    let mut data = Dataset::new(spec.state_dim, spec.action_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = behavior_bounds(env, unbounded_action_range);
    while data.len() < size {
        let mut s = env.reset(rng.random());
        for t in 0..spec.horizon {
            if data.len() == size {
                break;
            }
            let a: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
                .collect();
            let step = env.step(&s, &a, t)?;
            data.push(Transition {
                s,
                a,
                s_next: step.next_state.clone(),
                r: step.reward,
                done: step.done,
                t,
            })?;
            s = step.next_state;
            if step.done {
                break;
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LqrEnv, MountainCarEnv};

    fn tr(v: f64) -> Transition {
        Transition {
            s: vec![v, v],
            a: vec![v],
            s_next: vec![v + 1.0, v],
            r: -v,
            done: false,
            t: 0,
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(2, 1, 3);
        for i in 0..5 {
            buf.push(tr(i as f64)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.get(0).s[0], 2.0);
        assert_eq!(buf.get(2).s[0], 4.0);
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        let mut data = Dataset::new(3, 1);
        assert!(matches!(data.push(tr(0.0)), Err(Error::Shape { .. })));
    }

    #[test]
    fn empty_dataset_roundtrip_keeps_header() {
        let data = Dataset::new(5, 3);
        let mut bytes = Vec::new();
        data.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8);
        let back = Dataset::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn file_roundtrip_preserves_records() {
        let env = MountainCarEnv::benchmark();
        let data = generate_random_dataset(&env, 450, 3, 1.0).unwrap();
        let mut bytes = Vec::new();
        data.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 24 + 450 * (2 + 1 + 2 + 3) * 8);
        assert_eq!(Dataset::read_from(bytes.as_slice()).unwrap(), data);
    }

    #[test]
    fn random_lqr_dataset_has_episode_structure() {
        let env = LqrEnv::benchmark();
        let data = generate_random_dataset(&env, 25, 1, 1.0).unwrap();
        assert_eq!(data.len(), 25);
        let t: Vec<usize> = data.transitions().iter().map(|x| x.t).collect();
        assert_eq!(&t[..12], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
        assert!(data.transitions()[9].done);
        for pair in data.transitions().windows(2) {
            if !pair[0].done {
                assert_eq!(pair[0].s_next, pair[1].s);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let buf = ReplayBuffer::from_dataset(
            &generate_random_dataset(&LqrEnv::benchmark(), 50, 0, 1.0).unwrap(),
        );
        let a = buf.sample_indices(10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_indices(10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 50));
    }
}
