//! Versioned little-endian checkpoint of a search in progress.
//!
//! Layout: `ENASCKPT`, format version (u32), then the sections written by
//! [`Checkpoint::encode`] in order. Strings and vectors are length-prefixed.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use enas_core::optim::{Optimizer, Slot};
use enas_core::rng::RngState;
use enas_core::space::SpaceSpec;
use enas_core::trainer::{Search, SearchTask};
use enas_core::{ParamId, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"ENASCKPT";
pub const VERSION: u32 = 1;

/// Everything needed to resume a search at an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub space: String,
    pub epoch: u64,
    pub shared_step: u64,
    pub controller_step: u64,
    /// Metrics rows written when the checkpoint was taken.
    pub metric_rows: u64,
    pub baseline: Option<f64>,
    pub rngs: [RngState; 3],
    pub policy: Vec<(String, bool, Tensor)>,
    pub shared: Vec<(String, bool, Tensor)>,
    pub shared_slots: Vec<(u64, Slot)>,
    pub controller_slots: Vec<(u64, Slot)>,
    pub carry: Option<Tensor>,
}

fn store_entries(store: &ParamStore) -> Vec<(String, bool, Tensor)> {
    store
        .ids()
        .map(|id| (store.name(id).to_string(), store.is_trainable(id), store.get(id).clone()))
        .collect()
}

fn restore_store(store: &mut ParamStore, entries: &[(String, bool, Tensor)], what: &str) -> Result<()> {
    ensure!(
        store.len() == entries.len(),
        "{what}: checkpoint holds {} tensors, model has {}",
        entries.len(),
        store.len()
    );
    for (id, (name, trainable, t)) in store.ids().collect::<Vec<_>>().into_iter().zip(entries) {
        ensure!(
            store.name(id) == name && store.is_trainable(id) == *trainable && store.get(id).shape() == t.shape(),
            "{what}: checkpoint tensor `{name}` {:?} does not match model tensor `{}` {:?}",
            t.shape(),
            store.name(id),
            store.get(id).shape()
        );
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}

fn slots(opt: &Optimizer) -> Vec<(u64, Slot)> {
    opt.slots.iter().map(|(id, s)| (id.0 as u64, s.clone())).collect()
}

fn restore_slots(opt: &mut Optimizer, slots: &[(u64, Slot)]) {
    opt.slots = slots.iter().map(|(id, s)| (ParamId(*id as usize), s.clone())).collect::<BTreeMap<_, _>>();
}

pub fn space_label(spec: &SpaceSpec) -> String {
    format!("{} {}", spec.kind().name(), spec.nodes())
}

impl Checkpoint {
    pub fn capture<T: SearchTask>(search: &Search<T>, metric_rows: u64) -> Self {
        Checkpoint {
            space: space_label(&search.policy.spec),
            epoch: search.epoch as u64,
            shared_step: search.shared_step,
            controller_step: search.controller_step,
            metric_rows,
            baseline: search.baseline.value,
            rngs: [
                RngState::capture(&search.shared_rng),
                RngState::capture(&search.controller_rng),
                RngState::capture(&search.derive_rng),
            ],
            policy: store_entries(&search.policy.store),
            shared: store_entries(search.task.store()),
            shared_slots: slots(&search.shared_opt),
            controller_slots: slots(&search.controller_opt),
            carry: search.task.carry(),
        }
    }

    /// Overwrites the state of a freshly built search.
    pub fn restore<T: SearchTask>(&self, search: &mut Search<T>) -> Result<()> {
        let expected = space_label(&search.policy.spec);
        ensure!(
            self.space == expected,
            "checkpoint is for space `{}` but the config describes `{expected}`",
            self.space
        );
        restore_store(&mut search.policy.store, &self.policy, "controller")?;
        restore_store(search.task.store_mut(), &self.shared, "shared weights")?;
        restore_slots(&mut search.shared_opt, &self.shared_slots);
        restore_slots(&mut search.controller_opt, &self.controller_slots);
        search.baseline.value = self.baseline;
        search.shared_rng = self.rngs[0].restore();
        search.controller_rng = self.rngs[1].restore();
        search.derive_rng = self.rngs[2].restore();
        search.epoch = self.epoch as usize;
        search.shared_step = self.shared_step;
        search.controller_step = self.controller_step;
        search.task.set_carry(self.carry.clone());
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.space);
        for v in [self.epoch, self.shared_step, self.controller_step, self.metric_rows] {
            w.u64(v);
        }
        w.opt_f64(self.baseline);
        for r in &self.rngs {
            w.0.extend_from_slice(&r.seed);
            w.u64(r.stream);
            w.0.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        for entries in [&self.policy, &self.shared] {
            w.u64(entries.len() as u64);
            for (name, trainable, t) in entries {
                w.str(name);
                w.0.push(*trainable as u8);
                w.tensor(t);
            }
        }
        for slots in [&self.shared_slots, &self.controller_slots] {
            w.u64(slots.len() as u64);
            for (id, s) in slots {
                w.u64(*id);
                w.u64(s.steps);
                w.f64s(&s.first);
                w.f64s(&s.second);
            }
        }
        match &self.carry {
            Some(t) => {
                w.0.push(1);
                w.tensor(t);
            }
            None => w.0.push(0),
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(8)? == MAGIC, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(version == VERSION, "checkpoint format version {version}, this build reads {VERSION}");
        let space = r.str()?;
        let epoch = r.u64()?;
        let shared_step = r.u64()?;
        let controller_step = r.u64()?;
        let metric_rows = r.u64()?;
        let baseline = r.opt_f64()?;
        let mut rng = || -> Result<RngState> {
            let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            Ok(RngState { seed, stream, word_pos })
        };
        let rngs = [rng()?, rng()?, rng()?];
        let mut entries = || -> Result<Vec<(String, bool, Tensor)>> {
            let n = r.u64()?;
            (0..n)
                .map(|_| {
                    let name = r.str()?;
                    let trainable = r.take(1)?[0] == 1;
                    Ok((name, trainable, r.tensor()?))
                })
                .collect()
        };
        let policy = entries()?;
        let shared = entries()?;
        let mut slot_list = || -> Result<Vec<(u64, Slot)>> {
            let n = r.u64()?;
            (0..n)
                .map(|_| {
                    let id = r.u64()?;
                    let steps = r.u64()?;
                    Ok((
                        id,
                        Slot {
                            steps,
                            first: r.f64s()?,
                            second: r.f64s()?,
                        },
                    ))
                })
                .collect()
        };
        let shared_slots = slot_list()?;
        let controller_slots = slot_list()?;
        let carry = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.tensor()?),
            b => bail!("bad carry flag {b}"),
        };
        ensure!(r.pos == bytes.len(), "{} trailing bytes after checkpoint", bytes.len() - r.pos);
        Ok(Checkpoint {
            space,
            epoch,
            shared_step,
            controller_step,
            metric_rows,
            baseline,
            rngs,
            policy,
            shared,
            shared_slots,
            controller_slots,
            carry,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path).with_context(|| format!("moving checkpoint to {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::decode(&bytes).with_context(|| format!("in checkpoint {}", path.display()))
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn opt_f64(&mut self, v: Option<f64>) {
        match v {
            Some(x) => {
                self.0.push(1);
                self.0.extend_from_slice(&x.to_le_bytes());
            }
            None => self.0.push(0),
        }
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for d in t.shape() {
            self.u64(*d as u64);
        }
        self.f64s(t.values());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.bytes.len(), "checkpoint truncated at byte {}", self.pos);
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        ensure!(n <= self.bytes.len(), "implausible length {n} at byte {}", self.pos);
        Ok(n)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        Ok(String::from_utf8(self.take(n)?.to_vec()).context("non-UTF-8 name")?)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        Ok(self
            .take(n * 8)?
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.take(1)?[0] {
            0 => Ok(None),
            1 => Ok(Some(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))),
            b => bail!("bad option flag {b}"),
        }
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len()?;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let values = self.f64s()?;
        Ok(Tensor::new(shape, values)?)
    }
}
