//! Named-tensor checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      4 bytes  "STCK"
//! version    u16      1
//! count      u32      number of tensor entries
//! entries    count ×
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   precision  u8     0 = 32-bit float, 1 = 64-bit float
//!   rank       u8
//!   extents    rank × u32
//!   payload    product(extents) × (4 | 8) bytes, IEEE-754 little-endian
//! meta_len   u32
//! metadata   meta_len bytes, UTF-8, one `key=value` per line
//! ```
//!
//! Entries hold model parameters followed by batch-norm running statistics.
//! The metadata block carries the model id, epoch, RMSE history and the
//! names of frozen parameters; a pretrained-trunk import file is the same
//! container with only some entries present.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use super::ModelGraph;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{numel, Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"STCK";
pub const VERSION: u16 = 1;

/// Ordered `key=value` metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata(BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keys may not contain `=` or newlines; values may not contain newlines.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n']) || value.contains('\n') {
            return Err(Error::invalid(format!("metadata entry `{key}` cannot be encoded")));
        }
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set_list<T: ToString>(&mut self, key: &str, values: &[T]) -> Result<()> {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.set(key, joined.join(","))
    }

    pub fn get_list(&self, key: &str) -> Vec<&str> {
        match self.get(key) {
            Some("") | None => vec![],
            Some(v) => v.split(',').collect(),
        }
    }

    /// Comma-separated floats; `Display` output round-trips exactly.
    pub fn get_f64s(&self, key: &str) -> Result<Vec<f64>> {
        self.get_list(key)
            .into_iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| malformed(format!("metadata `{key}`: `{s}` is not a number")))
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn encode(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn decode(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("metadata line `{line}`")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Metadata(map))
    }
}

fn malformed(msg: String) -> Error {
    CheckpointError::Malformed(msg).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
    pub metadata: Metadata,
}

/// Outcome of a partial import.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    /// Model tensors overwritten from the file.
    pub loaded: Vec<String>,
    /// File entries with no counterpart in the model.
    pub unmatched: Vec<String>,
    /// Model tensors absent from the file, left as they were.
    pub untouched: Vec<String>,
}

impl Checkpoint {
    /// Captures every parameter and buffer of `model`, recording frozen
    /// parameter names and the model id in the metadata.
    pub fn from_model(model: &ModelGraph, mut metadata: Metadata) -> Result<Self> {
        let mut entries: Vec<(String, Tensor)> =
            model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        entries.extend(model.buffers.iter().map(|b| (b.name.clone(), b.value.clone())));
        metadata.set("model", &model.id)?;
        metadata.set("precision", model.precision.name())?;
        metadata.set_list("frozen", &model.frozen_names())?;
        Ok(Checkpoint { entries, metadata })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.entries.len())
                .map_err(|_| Error::invalid("too many entries"))?
                .to_le_bytes(),
        );
        let mut seen = HashSet::new();
        for (name, t) in &self.entries {
            if !seen.insert(name.as_str()) {
                return Err(CheckpointError::DuplicateName(name.clone()).into());
            }
            let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid(format!("rank too high: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.precision().tag());
            out.push(rank);
            for &e in t.shape() {
                let e = u32::try_from(e).map_err(|_| Error::invalid(format!("extent too large: {name}")))?;
                out.extend_from_slice(&e.to_le_bytes());
            }
            match t.precision() {
                Precision::Single => t
                    .data()
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
                Precision::Double => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let meta = self.metadata.encode();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| malformed(format!("entry {i}: name is not UTF-8")))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName(name).into());
            }
            let tag = r.take(1, "precision tag")?[0];
            let precision =
                Precision::from_tag(tag).ok_or_else(|| malformed(format!("`{name}`: unknown precision tag {tag}")))?;
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let width = precision.byte_width();
            let len = numel(&shape)
                .checked_mul(width)
                .ok_or_else(|| malformed(format!("`{name}`: payload size overflows")))?;
            let payload = r.take(len, &format!("payload of `{name}`"))?;
            let data: Vec<f64> = match precision {
                Precision::Single => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Precision::Double => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            entries.push((name, Tensor::new(shape, data, precision)?));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| malformed("metadata is not UTF-8".into()))?;
        let metadata = Metadata::decode(text)?;
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { entries, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CheckpointError::Truncated(format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl ModelGraph {
    fn slots(&self) -> HashMap<&str, Slot> {
        let mut slots: HashMap<&str, Slot> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.as_str(), Slot::Param(i)))
            .collect();
        slots.extend(
            self.buffers
                .iter()
                .enumerate()
                .map(|(i, b)| (b.name.as_str(), Slot::Buffer(i))),
        );
        slots
    }

    fn slot_value(&self, slot: &Slot) -> &Tensor {
        match *slot {
            Slot::Param(i) => &self.params[i].value,
            Slot::Buffer(i) => &self.buffers[i].value,
        }
    }

    fn write_slot(&mut self, slot: Slot, value: &Tensor) {
        let value = value.to_precision(self.precision);
        match slot {
            Slot::Param(i) => self.params[i].value = value,
            Slot::Buffer(i) => self.buffers[i].value = value,
        }
    }

    /// Strict restore: every file entry must name a model tensor of the same
    /// extents and every model tensor must be present. Trainable flags follow
    /// the `frozen` metadata list. Nothing is modified on error.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let slots = self.slots();
        let mut plan = Vec::with_capacity(ckpt.entries.len());
        for (name, t) in &ckpt.entries {
            let slot = slots
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
            let current = self.slot_value(slot);
            if current.shape() != t.shape() {
                return Err(CheckpointError::TensorMismatch {
                    name: name.clone(),
                    expected: current.shape().to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
            plan.push((*slot, t));
        }
        let present: HashSet<&str> = ckpt.entries.iter().map(|(n, _)| n.as_str()).collect();
        let names = self
            .params
            .iter()
            .map(|p| &p.name)
            .chain(self.buffers.iter().map(|b| &b.name));
        if let Some(missing) = names.into_iter().find(|n| !present.contains(n.as_str())) {
            return Err(CheckpointError::MissingParameter(missing.clone()).into());
        }
        drop(slots);
        for (slot, t) in plan {
            self.write_slot(slot, t);
        }
        if ckpt.metadata.get("frozen").is_some() {
            let frozen: HashSet<&str> = ckpt.metadata.get_list("frozen").into_iter().collect();
            for p in &mut self.params {
                p.trainable = !frozen.contains(p.name.as_str());
            }
        }
        Ok(())
    }

    /// Lenient import of matching names (e.g. a pretrained trunk). Entries
    /// with unknown names are reported, not rejected; a matching name with
    /// different extents is still an error. Trainable flags are unchanged.
    pub fn import_named(&mut self, ckpt: &Checkpoint) -> Result<ImportReport> {
        let mut report = ImportReport::default();
        let mut plan = Vec::new();
        {
            let slots = self.slots();
            for (name, t) in &ckpt.entries {
                match slots.get(name.as_str()) {
                    None => report.unmatched.push(name.clone()),
                    Some(slot) => {
                        let current = self.slot_value(slot);
                        if current.shape() != t.shape() {
                            return Err(CheckpointError::TensorMismatch {
                                name: name.clone(),
                                expected: current.shape().to_vec(),
                                found: t.shape().to_vec(),
                            }
                            .into());
                        }
                        plan.push((*slot, t));
                        report.loaded.push(name.clone());
                    }
                }
            }
        }
        for (slot, t) in plan {
            self.write_slot(slot, t);
        }
        let loaded: HashSet<&str> = report.loaded.iter().map(String::as_str).collect();
        report.untouched = self
            .params
            .iter()
            .map(|p| &p.name)
            .chain(self.buffers.iter().map(|b| &b.name))
            .filter(|n| !loaded.contains(n.as_str()))
            .cloned()
            .collect();
        Ok(report)
    }
}
