//! Named tensor collection and its RDRW binary encoding.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RDRW"  u16 version (=1)  u32 tensor_count
//! per tensor:
//!     u16 name_len, name (UTF-8)
//!     u8 dtype (0 = f32, 1 = f64), u8 rank, rank x u64 dims
//!     payload: prod(dims) elements, row-major
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element};

pub const MAGIC: &[u8; 4] = b"RDRW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_elements<T: Element>(values: &[T]) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => TensorData::F64(values.iter().map(|v| v.as_f64()).collect()),
        }
    }

    fn to_elements<T: Element>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl StoredTensor {
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * self.data.dtype().size());
        self.data.write_le(&mut out);
        out
    }

    /// CRC-32 of the little-endian payload.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload_bytes())
    }
}

/// Checks the dotted-path naming grammar: `segment ("." segment)*` where a
/// segment is one or more of `[a-z0-9_]`.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= u16::MAX as usize
        && name.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

/// Ordered map from canonical tensor name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: StoredTensor) -> Result<()> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(Error::BadTensor { name, reason: "name violates the naming grammar".into() });
        }
        if tensor.dims.len() > u8::MAX as usize {
            return Err(Error::BadTensor { name, reason: "rank exceeds 255".into() });
        }
        let expected: usize = tensor.dims.iter().product();
        if expected != tensor.data.len() {
            return Err(Error::BadTensor {
                name,
                reason: format!("dims {:?} need {expected} elements, got {}", tensor.dims, tensor.data.len()),
            });
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::BadTensor { name, reason: "duplicate name".into() });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn insert_values<T: Element>(&mut self, name: impl Into<String>, dims: &[usize], values: &[T]) -> Result<()> {
        self.insert(
            name,
            StoredTensor { dims: dims.to_vec(), data: TensorData::from_elements(values) },
        )
    }

    /// Reads a tensor, converting to `T` if stored at another precision.
    pub fn values<T: Element>(&self, name: &str) -> Result<(Vec<usize>, Vec<T>)> {
        let t = self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        Ok((t.dims.clone(), t.data.to_elements()))
    }

    /// The common dtype, or `None` for an empty or mixed store.
    pub fn dtype(&self) -> Option<DType> {
        let mut it = self.tensors.values().map(|t| t.data.dtype());
        let first = it.next()?;
        it.all(|d| d == first).then_some(first)
    }

    /// True when the store still carries batch-norm statistics.
    pub fn has_batchnorm(&self) -> bool {
        self.names().any(|n| n.contains(".bn."))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t.data.dtype() {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            t.data.write_le(&mut out);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Malformed(format!("tensor name at offset {} is not UTF-8", r.pos - name_len)))?
                .to_string();
            let dtype = match r.u8()? {
                0 => DType::F32,
                1 => DType::F64,
                other => return Err(Error::Malformed(format!("unknown dtype code {other} for `{name}`"))),
            };
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            let mut elems: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Malformed(format!("dimension of `{name}` overflows")))?;
                elems = elems
                    .checked_mul(d)
                    .ok_or_else(|| Error::Malformed(format!("element count of `{name}` overflows")))?;
                dims.push(d);
            }
            let nbytes = elems
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::Malformed(format!("payload of `{name}` overflows")))?;
            let payload = r.take(nbytes)?;
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                DType::F64 => TensorData::F64(
                    payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
            };
            store
                .insert(name.clone(), StoredTensor { dims, data })
                .map_err(|e| Error::Malformed(e.to_string()))?;
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(store)
    }

    /// Writes atomically: a temp file in the target directory is renamed
    /// into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated { offset: self.pos, needed: n }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert_values("stage1.block0.conv3.weight", &[2, 1, 3, 3], &[0.5f32; 18]).unwrap();
        s.insert_values("stage1.block0.conv3.bn.eps", &[1], &[1e-5f64]).unwrap();
        s
    }

    #[test]
    fn empty_store_round_trips() {
        let bytes = WeightStore::new().to_bytes();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4);
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), WeightStore::new());
    }

    #[test]
    fn single_unit_tensor_layout() {
        let mut s = WeightStore::new();
        s.insert_values("x", &[1, 1, 1, 1], &[1.0f32]).unwrap();
        let b = s.to_bytes();
        let mut expect = b"RDRW".to_vec();
        expect.extend_from_slice(&[1, 0, 1, 0, 0, 0]);
        expect.extend_from_slice(&[1, 0, b'x', 0, 4]);
        for _ in 0..4 {
            expect.extend_from_slice(&1u64.to_le_bytes());
        }
        expect.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        assert_eq!(&b[..b.len() - 4], &expect[..]);
        assert_eq!(&b[b.len() - 4..], &crc32fast::hash(&expect).to_le_bytes());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.names().collect::<Vec<_>>(), s.names().collect::<Vec<_>>());
    }

    #[test]
    fn distinct_errors_for_each_corruption() {
        let bytes = sample().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::UnsupportedVersion(2))));

        let mut bad = bytes.clone();
        let mid = bytes.len() - 12;
        bad[mid] ^= 0x40;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::Checksum { .. })));

        for cut in [3, 9, 20, bytes.len() - 20, bytes.len() - 1] {
            assert!(
                matches!(WeightStore::from_bytes(&bytes[..cut]), Err(Error::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn rejects_bad_names_and_duplicates() {
        let mut s = WeightStore::new();
        for name in ["", "a..b", "Stage1.x", "a.b-c", ".a"] {
            assert!(s.insert_values(name, &[1], &[0.0f32]).is_err(), "{name}");
        }
        s.insert_values("a.b", &[1], &[0.0f32]).unwrap();
        assert!(s.insert_values("a.b", &[1], &[0.0f32]).is_err());
        assert!(s.insert_values("a.c", &[2], &[0.0f32]).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.rdrw");
        let s = sample();
        s.save(&path).unwrap();
        assert_eq!(WeightStore::load(&path).unwrap(), s);
    }

    #[test]
    fn converts_precision_on_read() {
        let s = sample();
        let (dims, v) = s.values::<f64>("stage1.block0.conv3.weight").unwrap();
        assert_eq!(dims, vec![2, 1, 3, 3]);
        assert_eq!(v[0], 0.5);
        assert!(matches!(s.values::<f32>("nope"), Err(Error::MissingTensor(_))));
        assert_eq!(s.dtype(), None);
    }
}
