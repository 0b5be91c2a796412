//! VFCK checkpoint container: named tensors with a typed manifest.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    "VFCK" (4 bytes)
//! version  u32    (currently 1)
//! count    u32
//! entry *count:
//!   name_len u32, name utf-8
//!   kind     u8   (0 base, 1 frozen copy, 2 delta, 3 optimizer state)
//!   trainable u8  (0/1)
//!   ndim     u32, dims u32 * ndim
//! data: for each entry in manifest order, prod(dims) f32 values
//! ```
//!
//! Round-trips are bit-exact; values are stored as raw f32 regardless of the
//! in-memory compute precision (checkpoints are only used on the f32 path).

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::write_atomic;

pub const VFCK_MAGIC: &[u8; 4] = b"VFCK";
pub const VFCK_VERSION: u32 = 1;

/// Role of a checkpoint entry in the adapted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Backbone parameter.
    Base,
    /// Frozen attention copy shared by the spatial branches.
    FrozenCopy,
    /// Trainable low-rank delta.
    Delta,
    /// Optimizer moments / counters (training-state files only).
    OptState,
}

impl EntryKind {
    fn to_u8(self) -> u8 {
        match self {
            EntryKind::Base => 0,
            EntryKind::FrozenCopy => 1,
            EntryKind::Delta => 2,
            EntryKind::OptState => 3,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EntryKind::Base),
            1 => Some(EntryKind::FrozenCopy),
            2 => Some(EntryKind::Delta),
            3 => Some(EntryKind::OptState),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CkptEntry {
    pub name: String,
    pub kind: EntryKind,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl CkptEntry {
    pub fn new(
        name: impl Into<String>,
        kind: EntryKind,
        trainable: bool,
        tensor: &Tensor<f32>,
    ) -> Self {
        CkptEntry {
            name: name.into(),
            kind,
            trainable,
            shape: tensor.shape().to_vec(),
            data: tensor.data().to_vec(),
        }
    }

    pub fn tensor(&self) -> Result<Tensor<f32>> {
        Tensor::from_vec(self.shape.clone(), self.data.clone())
    }
}

pub fn write_vfck(path: &Path, entries: &[CkptEntry]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(VFCK_MAGIC);
    buf.extend_from_slice(&VFCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.kind.to_u8());
        buf.push(e.trainable as u8);
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let n: usize = e.shape.iter().product();
        if n != e.data.len() {
            return Err(Error::invalid(
                "write_vfck",
                format!("entry '{}': shape {:?} vs {} values", e.name, e.shape, e.data.len()),
            ));
        }
    }
    for e in entries {
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated: needed {} bytes at offset {}", n, self.off),
            ));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

pub fn read_vfck(path: &Path) -> Result<Vec<CkptEntry>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        off: 0,
    };

    let magic = r.take(4)?;
    if magic != VFCK_MAGIC {
        return Err(r.err(0, format!("bad magic {magic:?}, expected \"VFCK\"")));
    }
    let version = r.u32()?;
    if version != VFCK_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;

    let mut metas = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name_off = r.off;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| r.err(name_off, "entry name is not utf-8".into()))?;
        let kind_off = r.off;
        let kind_raw = r.take(1)?[0];
        let kind = EntryKind::from_u8(kind_raw)
            .ok_or_else(|| r.err(kind_off, format!("unknown entry kind {kind_raw}")))?;
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        metas.push((name, kind, trainable, shape));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, kind, trainable, shape) in metas {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let s = r.take(4)?;
            data.push(f32::from_le_bytes([s[0], s[1], s[2], s[3]]));
        }
        entries.push(CkptEntry {
            name,
            kind,
            trainable,
            shape,
            data,
        });
    }
    if r.off != bytes.len() {
        let trailing = bytes.len() - r.off;
        return Err(r.err(r.off, format!("{trailing} trailing bytes after payload")));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = Rng::seed(77);
        let entries = vec![
            CkptEntry::new(
                "blocks.0.attn.wq.weight",
                EntryKind::Base,
                false,
                &Tensor::randn(&[4, 4], 1.0, &mut rng),
            ),
            CkptEntry::new(
                "blocks.0.spa_pos.q.down",
                EntryKind::Delta,
                true,
                &Tensor::randn(&[2, 4], 0.02, &mut rng),
            ),
            CkptEntry::new(
                "blocks.0.spa_shared.q.weight",
                EntryKind::FrozenCopy,
                false,
                &Tensor::randn(&[4, 4], 1.0, &mut rng),
            ),
        ];
        let dir = std::env::temp_dir().join(format!("vidflow-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.vfck");
        write_vfck(&p, &entries).unwrap();
        let back = read_vfck(&p).unwrap();
        assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.shape, b.shape);
            assert!(a
                .data
                .iter()
                .zip(b.data.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_names_offset() {
        let dir = std::env::temp_dir().join(format!("vidflow-ckpt2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.vfck");
        let e = CkptEntry::new("w", EntryKind::Base, false, &Tensor::zeros(&[3]));
        write_vfck(&p, &[e]).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 2]).unwrap();
        assert!(matches!(read_vfck(&p), Err(Error::Format { .. })));
    }
}
