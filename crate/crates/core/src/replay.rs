//! Bounded replay buffer with a recent and a foundational partition.
//!
//! The first `per_context_foundational` entries of each context are kept
//! forever in the foundational partition (while it has room). Everything
//! else goes through Algorithm R reservoir sampling into the recent
//! partition, so each entry of the recent stream is retained with
//! probability `capacity / seen`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryTag {
    Recent,
    Foundational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub input: Vec<f64>,
    pub target: usize,
    pub tag: EntryTag,
    pub day_seen: u64,
    pub context: String,
}

impl ReplayEntry {
    pub fn sample(&self) -> Sample {
        Sample::new(self.input.clone(), self.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub recent_capacity: usize,
    pub foundational_capacity: usize,
    pub per_context_foundational: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            recent_capacity: 256,
            foundational_capacity: 64,
            per_context_foundational: 8,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recent_capacity == 0 && self.foundational_capacity == 0 {
            return Err(Error::Config("replay buffer needs some capacity".into()));
        }
        Ok(())
    }
}

/// Where an observed entry ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Foundational,
    /// Stored in the recent partition, possibly replacing slot `evicted`.
    Recent { evicted: Option<usize> },
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub input_dim: usize,
    pub config: ReplayConfig,
    pub recent: Vec<ReplayEntry>,
    pub foundational: Vec<ReplayEntry>,
    /// Entries offered to the recent partition so far.
    pub seen_count: u64,
    pub foundational_per_context: BTreeMap<String, usize>,
}

impl ReplayBuffer {
    pub fn new(input_dim: usize, config: ReplayConfig) -> Self {
        Self {
            input_dim,
            config,
            recent: Vec::new(),
            foundational: Vec::new(),
            seen_count: 0,
            foundational_per_context: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.recent.len() + self.foundational.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.foundational.iter().chain(&self.recent)
    }

    /// Inputs of entries first seen before `day`.
    pub fn inputs_before(&self, day: u64) -> Vec<&[f64]> {
        self.entries()
            .filter(|e| e.day_seen < day)
            .map(|e| e.input.as_slice())
            .collect()
    }

    /// Dimension check performed by [`observe`](Self::observe).
    pub fn check_entry(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::shape("replay entry", self.input_dim, input.len()));
        }
        Ok(())
    }

    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        input: &[f64],
        target: usize,
        context: &str,
        day: u64,
        rng: &mut R,
    ) -> Result<Admission> {
        self.check_entry(input)?;
        let held = self.foundational_per_context.get(context).copied().unwrap_or(0);
        let make = |tag| ReplayEntry {
            input: input.to_vec(),
            target,
            tag,
            day_seen: day,
            context: context.to_string(),
        };
        if held < self.config.per_context_foundational
            && self.foundational.len() < self.config.foundational_capacity
        {
            self.foundational.push(make(EntryTag::Foundational));
            *self.foundational_per_context.entry(context.to_string()).or_insert(0) += 1;
            return Ok(Admission::Foundational);
        }
        let cap = self.config.recent_capacity;
        if cap == 0 {
            return Ok(Admission::Rejected);
        }
        self.seen_count += 1;
        if self.recent.len() < cap {
            self.recent.push(make(EntryTag::Recent));
            return Ok(Admission::Recent { evicted: None });
        }
        let slot = rng.random_range(0..self.seen_count);
        if (slot as usize) < cap {
            self.recent[slot as usize] = make(EntryTag::Recent);
            Ok(Admission::Recent {
                evicted: Some(slot as usize),
            })
        } else {
            Ok(Admission::Rejected)
        }
    }

    /// Draws `ceil(rho * n)` entries from the recent partition and the rest
    /// from the foundational one. Draws are without replacement when the
    /// partition is large enough and with replacement otherwise; an empty
    /// partition hands its share to the other.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rho: f64, rng: &mut R) -> Result<Vec<&ReplayEntry>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Argument(format!("rehearsal mix {rho} outside [0, 1]")));
        }
        let mut n_recent = ((rho * n as f64).ceil() as usize).min(n);
        if self.recent.is_empty() {
            n_recent = 0;
        } else if self.foundational.is_empty() {
            n_recent = n;
        }
        let mut out = Vec::with_capacity(n);
        draw(&self.recent, n_recent, rng, &mut out);
        draw(&self.foundational, n - n_recent, rng, &mut out);
        Ok(out)
    }
}

fn draw<'a, R: Rng + ?Sized>(pool: &'a [ReplayEntry], k: usize, rng: &mut R, out: &mut Vec<&'a ReplayEntry>) {
    if k == 0 {
        return;
    }
    if pool.len() >= k {
        out.extend(index::sample(rng, pool.len(), k).into_iter().map(|i| &pool[i]));
    } else {
        out.extend((0..k).map(|_| &pool[rng.random_range(0..pool.len())]));
    }
}
