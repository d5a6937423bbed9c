//! Fixed-capacity FIFO transition store with uniform minibatch sampling.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::critic::TdBatch;
use crate::error::{check_dim, Error, Result};
use crate::neural::{read_f64, read_u64};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The episode ended in a terminal state; no bootstrapping.
    pub terminal: bool,
    /// The episode hit its length cap; bootstrapping continues.
    pub truncated: bool,
}

/// Ring storage laid out as flat per-field arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminal: Vec<bool>,
    truncated: Vec<bool>,
    len: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Domain("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminal: Vec::new(),
            truncated: Vec::new(),
            len: 0,
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim("ReplayBuffer::push state", self.state_dim, t.state.len())?;
        check_dim("ReplayBuffer::push next_state", self.state_dim, t.next_state.len())?;
        check_dim("ReplayBuffer::push action", self.action_dim, t.action.len())?;
        if !t.reward.is_finite() {
            return Err(Error::Domain("reward must be finite".into()));
        }
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.terminal.push(t.terminal);
            self.truncated.push(t.truncated);
            self.len += 1;
        } else {
            let i = self.cursor;
            let (sd, ad) = (self.state_dim, self.action_dim);
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
            self.terminal[i] = t.terminal;
            self.truncated[i] = t.truncated;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    fn slot(&self, i: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            terminal: self.terminal[i],
            truncated: self.truncated[i],
        }
    }

    /// The `i`-th stored transition, oldest first.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        Some(self.slot((start + i) % self.capacity))
    }

    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len).filter_map(move |i| self.get(i))
    }

    /// Uniform draw of `batch_size` rows with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<TdBatch> {
        if self.len == 0 {
            return Err(Error::Domain("cannot sample from an empty replay buffer".into()));
        }
        if batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut states = Array2::zeros((batch_size, sd));
        let mut actions = Array2::zeros((batch_size, ad));
        let mut rewards = Array1::zeros(batch_size);
        let mut next_states = Array2::zeros((batch_size, sd));
        let mut done = Array1::zeros(batch_size);
        for b in 0..batch_size {
            let i = rng.random_range(0..self.len);
            for k in 0..sd {
                states[[b, k]] = self.states[i * sd + k];
                next_states[[b, k]] = self.next_states[i * sd + k];
            }
            for k in 0..ad {
                actions[[b, k]] = self.actions[i * ad + k];
            }
            rewards[b] = self.rewards[i];
            done[b] = if self.terminal[i] { 1.0 } else { 0.0 };
        }
        Ok(TdBatch {
            states,
            actions,
            rewards,
            next_states,
            done,
        })
    }

    /// Dump layout: magic `GACRPL01`, then `u64` capacity, state_dim,
    /// action_dim, len and cursor, then `len` slots in storage order, each as
    /// state, action, reward, next_state (`f64` LE) and two flag bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(REPLAY_MAGIC)?;
        for v in [self.capacity, self.state_dim, self.action_dim, self.len, self.cursor] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for i in 0..self.len {
            let t = self.slot(i);
            for v in t.state.iter().chain(&t.action).chain([&t.reward]).chain(&t.next_state) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[t.terminal as u8, t.truncated as u8])?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != REPLAY_MAGIC {
            return Err(Error::Format("not a replay dump".into()));
        }
        let capacity = read_u64(r)? as usize;
        let state_dim = read_u64(r)? as usize;
        let action_dim = read_u64(r)? as usize;
        let len = read_u64(r)? as usize;
        let cursor = read_u64(r)? as usize;
        if len > capacity || cursor >= capacity.max(1) {
            return Err(Error::Format("inconsistent replay header".into()));
        }
        let mut buf = Self::new(capacity, state_dim, action_dim)?;
        let read_vec = |r: &mut R, n: usize| (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>();
        for _ in 0..len {
            let state = read_vec(r, state_dim)?;
            let action = read_vec(r, action_dim)?;
            let reward = read_f64(r)?;
            let next_state = read_vec(r, state_dim)?;
            let mut flags = [0u8; 2];
            r.read_exact(&mut flags)?;
            buf.states.extend(state);
            buf.actions.extend(action);
            buf.rewards.push(reward);
            buf.next_states.extend(next_state);
            buf.terminal.push(flags[0] != 0);
            buf.truncated.push(flags[1] != 0);
        }
        buf.len = len;
        buf.cursor = cursor;
        Ok(buf)
    }
}

const REPLAY_MAGIC: &[u8; 8] = b"GACRPL01";
