//! Experience stores: the transition buffer `D`, the safety buffer `D_s` and the
//! initial-state buffer `D_0`.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::diffcore::MatrixF64;
use crate::rng::Rng;
use crate::{Error, Result};

pub const DEFAULT_TRANSITION_CAPACITY: usize = 1_000_000;
pub const DEFAULT_SAFETY_CAPACITY: usize = 100_000;
pub const DEFAULT_INIT_CAPACITY: usize = 10_000;
/// Number of resets used to seed `D_0` before training.
pub const INIT_PREFILL: usize = 512;

/// One environment step `(s, a, r, c, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub c: bool,
    pub s_next: Vec<f64>,
    /// True when the episode ended by violation or goal; truncation is not terminal.
    pub terminal: bool,
}

/// Bounded FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::new(),
        })
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

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// `n` uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        sample_union(&[self], n, rng)
    }
}

/// `n` uniform draws with replacement over the concatenation of `buffers`.
pub fn sample_union<'a>(buffers: &[&'a ReplayBuffer], n: usize, rng: &mut Rng) -> Result<Vec<&'a Transition>> {
    let total: usize = buffers.iter().map(|b| b.len()).sum();
    if total == 0 {
        return Err(Error::EmptyBuffer("replay"));
    }
    Ok((0..n)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            for b in buffers {
                if k < b.len() {
                    return &b.items[k];
                }
                k -= b.len();
            }
            unreachable!("index drawn below the combined length")
        })
        .collect())
}

/// Bounded FIFO ring of states produced by `reset`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitStateBuffer {
    capacity: usize,
    states: VecDeque<Vec<f64>>,
}

impl InitStateBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            states: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: Vec<f64>) {
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    /// `n` uniform draws with replacement, stacked as rows.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<MatrixF64> {
        if self.states.is_empty() {
            return Err(Error::EmptyBuffer("initial-state"));
        }
        let rows: Vec<&[f64]> = (0..n)
            .map(|_| self.states[rng.random_range(0..self.states.len())].as_slice())
            .collect();
        MatrixF64::from_rows(&rows)
    }
}

/// The three stores of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffers {
    /// Non-violating transitions, `D`.
    pub transitions: ReplayBuffer,
    /// Violating transitions, `D_s`.
    pub safety: ReplayBuffer,
    /// Initial states, `D_0`.
    pub init_states: InitStateBuffer,
}

impl Buffers {
    pub fn new(transition_capacity: usize, safety_capacity: usize, init_capacity: usize) -> Result<Self> {
        Ok(Self {
            transitions: ReplayBuffer::new(transition_capacity)?,
            safety: ReplayBuffer::new(safety_capacity)?,
            init_states: InitStateBuffer::new(init_capacity)?,
        })
    }

    /// Routes a transition: violations go to `D_s` only, everything else to `D` only.
    pub fn push(&mut self, t: Transition) {
        if t.c {
            self.safety.push(t);
        } else {
            self.transitions.push(t);
        }
    }

    /// A batch from `D`.
    pub fn sample_transitions(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        Batch::collate(&self.transitions.sample(n, rng)?)
    }

    /// A batch from `D ∪ D_s`.
    pub fn sample_all(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        Batch::collate(&sample_union(&[&self.transitions, &self.safety], n, rng)?)
    }
}

impl Default for Buffers {
    fn default() -> Self {
        Self::new(DEFAULT_TRANSITION_CAPACITY, DEFAULT_SAFETY_CAPACITY, DEFAULT_INIT_CAPACITY)
            .expect("default capacities are positive")
    }
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: MatrixF64,
    pub actions: MatrixF64,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub next_states: MatrixF64,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn collate(items: &[&Transition]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyBuffer("batch"));
        }
        let pick = |f: fn(&Transition) -> &[f64]| -> Result<MatrixF64> {
            MatrixF64::from_rows(&items.iter().map(|t| f(t)).collect::<Vec<_>>())
        };
        Ok(Self {
            states: pick(|t| &t.s)?,
            actions: pick(|t| &t.a)?,
            rewards: items.iter().map(|t| t.r).collect(),
            costs: items.iter().map(|t| if t.c { 1.0 } else { 0.0 }).collect(),
            next_states: pick(|t| &t.s_next)?,
            terminals: items.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl Encode for Transition {
    fn encode(&self, enc: &mut Encoder) {
        enc.f64s(&self.s);
        enc.f64s(&self.a);
        enc.f64(self.r);
        enc.bool(self.c);
        enc.f64s(&self.s_next);
        enc.bool(self.terminal);
    }
}

impl Decode for Transition {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            s: dec.f64s()?,
            a: dec.f64s()?,
            r: dec.f64()?,
            c: dec.bool()?,
            s_next: dec.f64s()?,
            terminal: dec.bool()?,
        })
    }
}

impl Encode for ReplayBuffer {
    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.capacity);
        enc.usize(self.items.len());
        for t in &self.items {
            t.encode(enc);
        }
    }
}

impl Decode for ReplayBuffer {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let mut b = ReplayBuffer::new(dec.usize()?).map_err(|e| Error::Decode(e.to_string()))?;
        let n = dec.seq_len()?;
        for _ in 0..n {
            b.items.push_back(dec.get()?);
        }
        Ok(b)
    }
}

impl Encode for InitStateBuffer {
    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.capacity);
        enc.usize(self.states.len());
        for s in &self.states {
            enc.f64s(s);
        }
    }
}

impl Decode for InitStateBuffer {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let mut b = InitStateBuffer::new(dec.usize()?).map_err(|e| Error::Decode(e.to_string()))?;
        let n = dec.seq_len()?;
        for _ in 0..n {
            b.states.push_back(dec.f64s()?);
        }
        Ok(b)
    }
}

impl Encode for Buffers {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.transitions);
        enc.put(&self.safety);
        enc.put(&self.init_states);
    }
}

impl Decode for Buffers {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            transitions: dec.get()?,
            safety: dec.get()?,
            init_states: dec.get()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn tr(tag: f64, c: bool) -> Transition {
        Transition {
            s: vec![tag, 0.0],
            a: vec![tag],
            r: tag,
            c,
            s_next: vec![tag, 1.0],
            terminal: c,
        }
    }

    #[test]
    fn routing_is_exclusive() {
        let mut b = Buffers::new(10, 10, 10).unwrap();
        b.push(tr(1.0, true));
        assert_eq!((b.transitions.len(), b.safety.len()), (0, 1));
        b.push(tr(2.0, false));
        assert_eq!((b.transitions.len(), b.safety.len()), (1, 1));
        assert!(b.transitions.iter().all(|t| !t.c));
        assert!(b.safety.iter().all(|t| t.c));
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for k in 0..3 {
            b.push(tr(k as f64, false));
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().r, 1.0);
        assert_eq!(b.get(1).unwrap().r, 2.0);
    }

    #[test]
    fn single_item_is_repeated() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(7.0, false));
        let s = b.sample(4, &mut SeedTree::new(0).rng("s")).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|t| **t == tr(7.0, false)));
    }

    #[test]
    fn empty_buffers_are_errors() {
        let b = ReplayBuffer::new(4).unwrap();
        let mut rng = SeedTree::new(0).rng("s");
        assert!(matches!(b.sample(1, &mut rng), Err(Error::EmptyBuffer(_))));
        assert!(InitStateBuffer::new(3).unwrap().sample(1, &mut rng).is_err());
        assert!(Buffers::new(1, 1, 1).unwrap().sample_all(2, &mut rng).is_err());
    }

    #[test]
    fn union_sampling_frequencies_pass_chi_square() {
        let mut d = ReplayBuffer::new(10).unwrap();
        for k in 0..3 {
            d.push(tr(k as f64, false));
        }
        let mut ds = ReplayBuffer::new(10).unwrap();
        ds.push(tr(9.0, true));
        let n = 40_000;
        let draws = sample_union(&[&d, &ds], n, &mut SeedTree::new(3).rng("chi")).unwrap();
        let mut counts = [0usize; 4];
        for t in draws {
            let idx = if t.c { 3 } else { t.r as usize };
            counts[idx] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // Critical value of the chi-square distribution with 3 degrees of freedom at p = 0.01.
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn resampling_gives_a_fresh_batch() {
        let mut d = ReplayBuffer::new(1000).unwrap();
        for k in 0..1000 {
            d.push(tr(k as f64, false));
        }
        let mut rng = SeedTree::new(4).rng("b");
        let b1: Vec<f64> = d.sample(32, &mut rng).unwrap().iter().map(|t| t.r).collect();
        let b2: Vec<f64> = d.sample(32, &mut rng).unwrap().iter().map(|t| t.r).collect();
        assert_ne!(b1, b2);
        let mut again = SeedTree::new(4).rng("b");
        let b1_again: Vec<f64> = d.sample(32, &mut again).unwrap().iter().map(|t| t.r).collect();
        assert_eq!(b1, b1_again);
    }

    #[test]
    fn collate_stacks_rows() {
        let items = [tr(1.0, false), tr(2.0, true)];
        let refs: Vec<&Transition> = items.iter().collect();
        let b = Batch::collate(&refs).unwrap();
        assert_eq!(b.states.shape(), (2, 2));
        assert_eq!(b.actions.as_slice(), &[1.0, 2.0]);
        assert_eq!(b.costs, vec![0.0, 1.0]);
        assert_eq!(b.terminals, vec![false, true]);
        assert_eq!(b.next_states.row(1), &[2.0, 1.0]);
    }

    #[test]
    fn init_buffer_ring_and_codec() {
        let mut b = InitStateBuffer::new(2).unwrap();
        b.push(vec![1.0]);
        b.push(vec![2.0]);
        b.push(vec![3.0]);
        let m = b.sample(50, &mut SeedTree::new(5).rng("i")).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 2.0 || v == 3.0));

        let mut all = Buffers::new(5, 5, 2).unwrap();
        all.push(tr(1.0, false));
        all.push(tr(2.0, true));
        all.init_states = b;
        let mut enc = Encoder::new();
        all.encode(&mut enc);
        let bytes = enc.into_bytes();
        let back: Buffers = Decoder::new(&bytes).get().unwrap();
        assert_eq!(back, all);
    }
}
