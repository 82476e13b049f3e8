//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//! magic `CPJF`, version, config length, config text (`key = value`),
//! tensor count, then per tensor: name length, name, dtype tag
//! (`0` = f32), rank, dims, row-major f32 payload.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::network::{JointFaceNet, NetConfig};
use crate::error::{ModelError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CPJF";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn save_checkpoint(net: &JointFaceNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let text = net.config().to_text();
    put_u32(&mut buf, text.len() as u32);
    buf.extend_from_slice(text.as_bytes());
    let tensors = net.named_tensors();
    put_u32(&mut buf, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut buf, t.name.len() as u32);
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(DTYPE_F32);
        put_u32(&mut buf, t.shape.len() as u32);
        for d in &t.shape {
            put_u32(&mut buf, *d as u32);
        }
        for v in t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ModelError::Io { path: parent.into(), source })?;
    }
    fs::write(path, buf).map_err(|source| ModelError::Io { path: path.into(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<JointFaceNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.into(), source })?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.to_path_buf() };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.bad("wrong magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.bad(&format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.bad("config text is not UTF-8"))?;
    let config = NetConfig::parse(text, path)?;
    let count = r.u32()? as usize;
    let mut stored = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| r.bad("tensor name is not UTF-8"))?.to_string();
        if r.take(1)?[0] != DTYPE_F32 {
            return Err(r.bad(&format!("{name}: unsupported dtype")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values: Vec<f64> = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if stored.insert(name.clone(), (shape, values)).is_some() {
            return Err(r.bad(&format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.bad("trailing bytes"));
    }
    let mut net = JointFaceNet::new(config, 0)?;
    let layout: Vec<(String, Vec<usize>)> =
        net.named_tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if layout.len() != stored.len() {
        return Err(r.bad(&format!("{} tensors, expected {}", stored.len(), layout.len())));
    }
    for ((name, shape), dst) in layout.into_iter().zip(net.tensors_mut()) {
        let (s, values) = stored.remove(&name).ok_or_else(|| r.bad(&format!("missing tensor {name}")))?;
        if s != shape {
            return Err(r.bad(&format!("{name}: shape {s:?}, expected {shape:?}")));
        }
        dst.copy_from_slice(&values);
    }
    Ok(net)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn bad(&self, message: &str) -> ModelError {
        ModelError::Checkpoint { path: self.path.clone(), message: message.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.bad("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_restores_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut net = JointFaceNet::new(NetConfig::tiny(), 3).unwrap();
        net.adapters[1].w_o.fill(0.125);
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), net.config());
        for (a, b) in net.named_tensors().iter().zip(loaded.named_tensors()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        assert_eq!(loaded.adapters[1].w_o[[2, 3]], 0.125);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_checkpoint(&JointFaceNet::new(NetConfig::tiny(), 3).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint { .. })));

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        fs::write(&path, &wrong).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint { .. })));

        let mut version = bytes;
        version[4] = 9;
        fs::write(&path, &version).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint { .. })));

        assert!(matches!(load_checkpoint(dir.path().join("absent.bin")), Err(ModelError::Io { .. })));
    }
}
