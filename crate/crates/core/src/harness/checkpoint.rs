//! Versioned binary snapshot of a [`System`] taken at a day boundary.
//!
//! Layout: the 7-byte magic `TRIMEM1`, a format version byte, then six
//! sections (config, experts, meta, buffers, rng, lifecycle), each a
//! little-endian `u64` byte length followed by its payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experts::{Expert, ExpertPool};
use crate::harness::config::{parse_system, render_system};
use crate::lifecycle::{LifecycleState, Phase, System};
use crate::memory::{LayerMeta, MetaStore, Tier};
use crate::net::{Matrix, NetworkState};
use crate::replay::{EntryTag, ReplayBuffer, ReplayEntry};
use crate::sleep::{DayStats, ImportanceMap};

pub const MAGIC: &[u8; 7] = b"TRIMEM1";
pub const VERSION: u8 = 1;
const SECTIONS: usize = 6;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.0.extend_from_slice(v);
    }
    fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn bools(&mut self, v: &[bool]) {
        self.len(v.len());
        v.iter().for_each(|x| self.u8(*x as u8));
    }
    fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        v.iter().for_each(|x| self.u32(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Corruption("checkpoint is truncated".into())
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let s = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A length that must be coverable by the remaining bytes at `unit` each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(unit.max(1) as u64) > remaining {
            return Err(truncated());
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Corruption("invalid utf-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bools(&mut self) -> Result<Vec<bool>> {
        let n = self.len(1)?;
        (0..n)
            .map(|_| match self.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Corruption("invalid flag byte".into())),
            })
            .collect()
    }
    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corruption("trailing bytes in section".into()));
        }
        Ok(())
    }
}

fn write_state(w: &mut Writer, s: &NetworkState) {
    w.u64(s.step_counter);
    w.len(s.weights.len());
    for (m, b) in s.weights.iter().zip(&s.biases) {
        w.len(m.rows());
        w.len(m.cols());
        w.f64s(m.as_slice());
        w.f64s(b);
    }
}

fn read_state(r: &mut Reader, spec: &crate::net::NetworkSpec) -> Result<NetworkState> {
    let step_counter = r.u64()?;
    let n = r.len(1)?;
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let data = r.f64s()?;
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Corruption("weight grid size mismatch".into()));
        }
        weights.push(Matrix::from_vec(rows, cols, data).map_err(|e| Error::Corruption(e.to_string()))?);
        biases.push(r.f64s()?);
    }
    Ok(NetworkState {
        spec: spec.clone(),
        weights,
        biases,
        step_counter,
    })
}

fn write_meta(w: &mut Writer, m: &MetaStore) {
    w.len(m.layers.len());
    for l in &m.layers {
        w.len(l.rows);
        w.len(l.cols);
        w.len(l.tier.len());
        l.tier.iter().for_each(|t| w.u8(*t as u8));
        w.bools(&l.active);
        w.bools(&l.pruned);
        w.f64s(&l.usage);
        w.u32s(&l.nights_survived);
        w.f64s(&l.sentiment_ema);
        w.u32s(&l.low_sentiment_nights);
    }
}

fn read_meta(r: &mut Reader) -> Result<MetaStore> {
    let n = r.len(1)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let nt = r.len(1)?;
        if rows.checked_mul(cols) != Some(nt) {
            return Err(Error::Corruption("meta grid size mismatch".into()));
        }
        let tier = (0..nt)
            .map(|_| Tier::from_u8(r.u8()?).ok_or_else(|| Error::Corruption("invalid tier byte".into())))
            .collect::<Result<Vec<_>>>()?;
        let mut l = LayerMeta::new(rows, cols);
        l.tier = tier;
        l.active = r.bools()?;
        l.pruned = r.bools()?;
        l.usage = r.f64s()?;
        l.nights_survived = r.u32s()?;
        l.sentiment_ema = r.f64s()?;
        l.low_sentiment_nights = r.u32s()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Corruption("meta grid size overflow".into()))?;
        if [
            l.tier.len(),
            l.active.len(),
            l.pruned.len(),
            l.usage.len(),
            l.nights_survived.len(),
            l.sentiment_ema.len(),
            l.low_sentiment_nights.len(),
        ]
        .iter()
        .any(|&x| x != len)
        {
            return Err(Error::Corruption("meta grid size mismatch".into()));
        }
        layers.push(l);
    }
    Ok(MetaStore { layers })
}

fn write_entry(w: &mut Writer, e: &ReplayEntry) {
    w.f64s(&e.input);
    w.u64(e.target as u64);
    w.u8(match e.tag {
        EntryTag::Recent => 0,
        EntryTag::Foundational => 1,
    });
    w.u64(e.day_seen);
    w.str(&e.context);
}

fn read_entry(r: &mut Reader) -> Result<ReplayEntry> {
    Ok(ReplayEntry {
        input: r.f64s()?,
        target: r.u64()? as usize,
        tag: match r.u8()? {
            0 => EntryTag::Recent,
            1 => EntryTag::Foundational,
            _ => return Err(Error::Corruption("invalid entry tag".into())),
        },
        day_seen: r.u64()?,
        context: r.str()?,
    })
}

fn write_grid(w: &mut Writer, g: &[Vec<f64>]) {
    w.len(g.len());
    g.iter().for_each(|v| w.f64s(v));
}

fn read_grid(r: &mut Reader) -> Result<Vec<Vec<f64>>> {
    let n = r.len(8)?;
    (0..n).map(|_| r.f64s()).collect()
}

/// Serialises `system`. Only allowed between days.
pub fn to_bytes(system: &System) -> Result<Vec<u8>> {
    if !system.at_day_boundary() {
        return Err(Error::Phase("checkpoints are only taken at a day boundary".into()));
    }
    let mut sections: Vec<Writer> = (0..SECTIONS).map(|_| Writer::default()).collect();

    sections[0].str(&render_system(&system.config));

    let w = &mut sections[1];
    w.len(system.pool.len());
    for (e, ctx) in system.pool.experts.iter().zip(&system.pool.contexts) {
        w.str(ctx);
        write_state(w, &e.state);
    }

    let w = &mut sections[2];
    w.len(system.pool.len());
    for e in &system.pool.experts {
        write_meta(w, &e.meta);
    }

    let w = &mut sections[3];
    w.len(system.buffers.len());
    for b in &system.buffers {
        w.u64(b.seen_count);
        w.len(b.foundational.len());
        b.foundational.iter().for_each(|e| write_entry(w, e));
        w.len(b.recent.len());
        b.recent.iter().for_each(|e| write_entry(w, e));
        w.len(b.foundational_per_context.len());
        for (k, v) in &b.foundational_per_context {
            w.str(k);
            w.len(*v);
        }
    }

    let w = &mut sections[4];
    w.0.extend_from_slice(&system.rng.get_seed());
    w.u64(system.rng.get_stream());
    w.0.extend_from_slice(&system.rng.get_word_pos().to_le_bytes());

    let w = &mut sections[5];
    w.u64(system.lifecycle.day_index);
    w.u64(system.lifecycle.step_counter);
    w.len(system.anchors.len());
    for a in &system.anchors {
        match a {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                write_grid(w, &m.importance);
                write_grid(w, &m.anchor);
            }
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for s in sections {
        out.extend_from_slice(&(s.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&s.0);
    }
    Ok(out)
}

/// Rebuilds a system from [`to_bytes`] output. Nothing is constructed
/// unless the whole file parses and is internally consistent.
pub fn from_bytes(bytes: &[u8]) -> Result<System> {
    if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = bytes[MAGIC.len()];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut outer = Reader::new(&bytes[MAGIC.len() + 1..]);
    let sections: Vec<&[u8]> = (0..SECTIONS).map(|_| outer.bytes()).collect::<Result<_>>()?;
    outer.done()?;

    let mut r = Reader::new(sections[0]);
    let config = parse_system(&r.str()?).map_err(|e| Error::Corruption(format!("embedded config: {e}")))?;
    r.done()?;
    let spec = config.network.clone();

    let mut r = Reader::new(sections[1]);
    let n = r.len(1)?;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let ctx = r.str()?;
        named.push((ctx, read_state(&mut r, &spec)?));
    }
    r.done()?;

    let mut r = Reader::new(sections[2]);
    if r.len(1)? != n {
        return Err(Error::Corruption("meta section expert count mismatch".into()));
    }
    let metas = (0..n).map(|_| read_meta(&mut r)).collect::<Result<Vec<_>>>()?;
    r.done()?;

    let mut pool = ExpertPool::new(spec.clone(), config.max_experts).map_err(|e| Error::Corruption(e.to_string()))?;
    if n > config.max_experts {
        return Err(Error::Corruption("more experts than max_experts".into()));
    }
    for ((ctx, state), meta) in named.into_iter().zip(metas) {
        if pool.gate_table.contains_key(&ctx) {
            return Err(Error::Corruption(format!("duplicate context {ctx:?}")));
        }
        pool.push_expert(&ctx, Expert { state, meta });
    }

    let mut r = Reader::new(sections[3]);
    let nb = r.len(1)?;
    let mut buffers = Vec::with_capacity(nb);
    for _ in 0..nb {
        let mut b = ReplayBuffer::new(spec.input_dim(), config.replay.clone());
        b.seen_count = r.u64()?;
        let nf = r.len(1)?;
        b.foundational = (0..nf).map(|_| read_entry(&mut r)).collect::<Result<_>>()?;
        let nr = r.len(1)?;
        b.recent = (0..nr).map(|_| read_entry(&mut r)).collect::<Result<_>>()?;
        let nc = r.len(1)?;
        let mut counts = BTreeMap::new();
        for _ in 0..nc {
            let k = r.str()?;
            counts.insert(k, r.u64()? as usize);
        }
        b.foundational_per_context = counts;
        if b.recent.len() > b.config.recent_capacity
            || b.foundational.len() > b.config.foundational_capacity
            || b.entries().any(|e| e.input.len() != spec.input_dim())
        {
            return Err(Error::Corruption("replay buffer violates its configuration".into()));
        }
        buffers.push(b);
    }
    r.done()?;

    let mut r = Reader::new(sections[4]);
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    r.done()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut r = Reader::new(sections[5]);
    let day_index = r.u64()?;
    let step_counter = r.u64()?;
    let na = r.len(1)?;
    let mut anchors = Vec::with_capacity(na);
    for _ in 0..na {
        anchors.push(match r.u8()? {
            0 => None,
            1 => Some(ImportanceMap {
                importance: read_grid(&mut r)?,
                anchor: read_grid(&mut r)?,
            }),
            _ => return Err(Error::Corruption("invalid anchor flag".into())),
        });
    }
    r.done()?;
    for (a, e) in anchors.iter().zip(&pool.experts) {
        if let Some(m) = a {
            m.check_aligned(&e.state).map_err(|e| Error::Corruption(e.to_string()))?;
        }
    }

    let lifecycle = LifecycleState {
        phase: Phase::Inference,
        step_counter,
        day_index,
        stats: DayStats::for_day(day_index),
    };
    System::from_parts(config, lifecycle, pool, buffers, anchors, rng).map_err(|e| Error::Corruption(e.to_string()))
}

pub fn save(system: &System, path: &Path) -> Result<()> {
    let bytes = to_bytes(system)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<System> {
    from_bytes(&fs::read(path)?)
}
