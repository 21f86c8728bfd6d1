//! Context-keyed pool of expert networks with hard top-1 gating.
//!
//! Each context key maps to exactly one expert. Only the gated expert computes
//! on an inference; every other expert is left untouched.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::memory::MetaStore;
use crate::net::{init_network, ActivationTrace, NetworkSpec, NetworkState};

/// One expert: its weights and their Tri-Memory metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub state: NetworkState,
    pub meta: MetaStore,
}

impl Expert {
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let state = init_network(spec, seed)?;
        let meta = MetaStore::for_network(&state);
        Ok(Self { state, meta })
    }

    pub fn checksum(&self) -> u64 {
        self.state.checksum() ^ self.meta.checksum().rotate_left(17)
    }
}

/// Result of a gate lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Registered(usize),
    /// Unseen context; a new expert would get this index.
    Vacancy(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPool {
    pub spec: NetworkSpec,
    pub experts: Vec<Expert>,
    /// Context key of each expert, by index.
    pub contexts: Vec<String>,
    pub gate_table: BTreeMap<String, usize>,
    pub max_experts: usize,
}

impl ExpertPool {
    pub fn new(spec: NetworkSpec, max_experts: usize) -> Result<Self> {
        spec.validate()?;
        if max_experts == 0 {
            return Err(Error::Config("max_experts must be positive".into()));
        }
        Ok(Self {
            spec,
            experts: Vec::new(),
            contexts: Vec::new(),
            gate_table: BTreeMap::new(),
            max_experts,
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.experts.len() >= self.max_experts
    }

    pub fn gate(&self, context: &str) -> Result<Gate> {
        if let Some(&i) = self.gate_table.get(context) {
            return Ok(Gate::Registered(i));
        }
        if self.is_full() {
            return Err(Error::Capacity {
                context: context.to_string(),
                max: self.max_experts,
            });
        }
        Ok(Gate::Vacancy(self.experts.len()))
    }

    /// Appends a freshly initialised expert for `context`.
    pub fn add_expert(&mut self, context: &str, seed: u64) -> Result<usize> {
        if self.gate_table.contains_key(context) {
            return Err(Error::Argument(format!("context {context:?} already has an expert")));
        }
        if self.is_full() {
            return Err(Error::Capacity {
                context: context.to_string(),
                max: self.max_experts,
            });
        }
        let expert = Expert::new(&self.spec, seed)?;
        Ok(self.push_expert(context, expert))
    }

    /// Registers an already built expert. Callers check capacity and shape.
    pub(crate) fn push_expert(&mut self, context: &str, expert: Expert) -> usize {
        let idx = self.experts.len();
        self.experts.push(expert);
        self.contexts.push(context.to_string());
        self.gate_table.insert(context.to_string(), idx);
        idx
    }

    /// Forward pass on the gated expert only.
    pub fn pooled_infer(&self, context: &str, input: &[f64]) -> Result<(Vec<f64>, ActivationTrace, usize)> {
        let idx = match self.gate(context)? {
            Gate::Registered(i) => i,
            Gate::Vacancy(_) => return Err(Error::UnknownContext(context.to_string())),
        };
        let e = &self.experts[idx];
        let (out, trace) = e.state.forward(input, &e.meta)?;
        Ok((out, trace, idx))
    }

    pub fn checksum(&self) -> u64 {
        let mut h = crate::net::Fnv::new();
        for (e, c) in self.experts.iter().zip(&self.contexts) {
            h.write_bytes(c.as_bytes());
            h.write_u64(e.checksum());
        }
        h.finish()
    }

    pub fn active_count(&self) -> usize {
        self.experts.iter().map(|e| e.meta.active_count()).sum()
    }
}
