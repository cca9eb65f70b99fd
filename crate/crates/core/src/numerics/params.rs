//! Named parameter storage and its checkpoint blob.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! "NTSR" | version=1 | meta_len | meta (UTF-8) | count
//!   repeated count times: name_len | name | rank | dims[rank] | values (f64 LE)
//! ```

use std::fs;
use std::path::Path;

use super::{NumericsError, Tensor};

const MAGIC: &[u8; 4] = b"NTSR";
const VERSION: u32 = 1;

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self, meta: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.value_count() * 8);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in self.names.iter().zip(&self.tensors) {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(String, ParamStore), NumericsError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| r.err("metadata is not UTF-8"))?
            .to_owned();
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err("tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.push(name, Tensor::new(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok((meta, store))
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<(), NumericsError> {
        fs::write(path, self.to_bytes(meta))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(String, ParamStore), NumericsError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4-byte slice")))
    }

    fn err(&self, msg: &str) -> NumericsError {
        NumericsError::Checkpoint {
            offset: self.pos,
            message: msg.to_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 1e-300]).unwrap());
        s.push("eps", Tensor::scalar(0.25));
        s
    }

    #[test]
    fn blob_round_trip() {
        let store = sample();
        let bytes = store.to_bytes("{\"k\":2}");
        let (meta, back) = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(meta, "{\"k\":2}");
        assert_eq!(back, store);
        assert_eq!(back.by_name("eps").unwrap().data(), &[0.25]);
    }

    #[test]
    fn truncated_blob_reports_offset() {
        let bytes = sample().to_bytes("");
        let err = ParamStore::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, NumericsError::Checkpoint { .. }), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes("");
        bytes[0] = b'X';
        assert!(matches!(
            ParamStore::from_bytes(&bytes),
            Err(NumericsError::Checkpoint { offset: 4, .. })
        ));
    }
}
