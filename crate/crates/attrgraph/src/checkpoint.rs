//! Binary checkpoint archive.
//!
//! Layout (little endian): the 8-byte magic `AGCKPT\0\0`, a `u32` version,
//! a `u32` count of metadata pairs, the pairs as length-prefixed UTF-8
//! strings, a `u32` tensor count, then per tensor its name, a `u32` rank,
//! `u64` dimensions and the raw `f64` payload in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use attrgraph_core::params::{Adam, ParamStore};
use attrgraph_core::train::TrainState;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or("truncated archive")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Archive {
    pub fn tensor(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.tensors.push(TensorEntry { name: name.into(), shape: shape.to_vec(), data });
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint archive".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            meta.insert(k, r.string()?);
        }
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or("tensor too large")?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(TensorEntry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after the last tensor".into());
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, self.encode()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::decode(&bytes).map_err(|message| Error::Checkpoint { path: path.into(), message })
    }
}

fn push_store(a: &mut Archive, prefix: &str, store: &ParamStore) {
    for e in store.entries() {
        a.push(format!("{prefix}{}", e.name), &e.shape, e.value.clone());
    }
}

fn push_adam(a: &mut Archive, group: &str, opt: &Adam, store: &ParamStore) {
    a.meta.insert(format!("adam.{group}.step"), opt.step.to_string());
    for (id, (m, v)) in &opt.moments {
        let e = store.entry(*id);
        a.push(format!("adam.{group}.m/{}", e.name), &e.shape, m.clone());
        a.push(format!("adam.{group}.v/{}", e.name), &e.shape, v.clone());
    }
}

/// Everything needed to resume: parameters, optimizer moments, step counter.
pub fn state_archive(state: &TrainState, classifier: &ParamStore, meta: &[(&str, String)]) -> Archive {
    let mut a = Archive::default();
    a.meta.insert("step".into(), state.step.to_string());
    for (k, v) in meta {
        a.meta.insert((*k).to_string(), v.clone());
    }
    push_store(&mut a, "param/", &state.store);
    push_store(&mut a, "classifier/", classifier);
    push_adam(&mut a, "gen", &state.gen_opt, &state.store);
    push_adam(&mut a, "disc", &state.disc_opt, &state.store);
    a
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.into(), message: message.into() }
}

/// Overwrite the values of `store` from entries named `prefix + name`.
pub fn restore_store(a: &Archive, prefix: &str, store: &mut ParamStore, path: &Path) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let e = store.entry_mut(id);
        let name = format!("{prefix}{}", e.name);
        let t = a.tensor(&name).ok_or_else(|| bad(path, format!("missing `{name}`")))?;
        if t.shape != e.shape {
            return Err(bad(path, format!("`{name}` has shape {:?}, expected {:?}", t.shape, e.shape)));
        }
        e.value.clone_from(&t.data);
    }
    Ok(())
}

fn restore_adam(a: &Archive, group: &str, opt: &mut Adam, store: &ParamStore, path: &Path) -> Result<()> {
    let key = format!("adam.{group}.step");
    opt.step = a
        .meta
        .get(&key)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(path, format!("missing `{key}`")))?;
    opt.moments.clear();
    for id in store.ids() {
        let name = &store.entry(id).name;
        let m = a.tensor(&format!("adam.{group}.m/{name}"));
        let v = a.tensor(&format!("adam.{group}.v/{name}"));
        if let (Some(m), Some(v)) = (m, v) {
            opt.moments.insert(id, (m.data.clone(), v.data.clone()));
        }
    }
    Ok(())
}

/// Restore a freshly set-up state from an archive.
pub fn restore_state(a: &Archive, state: &mut TrainState, path: &Path) -> Result<()> {
    restore_store(a, "param/", &mut state.store, path)?;
    restore_adam(a, "gen", &mut state.gen_opt, &state.store, path)?;
    restore_adam(a, "disc", &mut state.disc_opt, &state.store, path)?;
    state.step = a
        .meta
        .get("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(path, "missing `step`"))?;
    state.store.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let mut a = Archive::default();
        a.meta.insert("step".into(), "12".into());
        a.push("w", &[2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 1.0 / 3.0]);
        a.push("s", &[], vec![4.0]);
        let b = Archive::decode(&a.encode()).unwrap();
        assert_eq!(a.meta, b.meta);
        for (x, y) in a.tensors.iter().zip(&b.tensors) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.shape, y.shape);
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.data), bits(&y.data));
        }
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let mut a = Archive::default();
        a.push("w", &[2], vec![1.0, 2.0]);
        let bytes = a.encode();
        assert!(Archive::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Archive::decode(b"nonsense").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Archive::decode(&extra).is_err());
    }
}
