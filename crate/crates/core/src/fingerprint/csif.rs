//! CSIF binary dataset format.
//!
//! ```text
//! "CSIF" | u32 version=1 | u32 K | u32 N (sequences per class) | u32 d | u32 l
//! K·N records: u32 class | u32 slot | d·l f64, row-major
//! u32 CRC32 of the record bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{FingerprintError, FingerprintSequence, LabeledDataset};

pub const CSIF_MAGIC: &[u8; 4] = b"CSIF";
pub const CSIF_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

pub fn to_bytes(ds: &LabeledDataset) -> Result<Vec<u8>, FingerprintError> {
    let counts = ds.class_counts();
    let per_class = counts.first().copied().unwrap_or(0);
    if counts.iter().any(|&c| c != per_class) {
        return Err(FingerprintError::Size(format!(
            "CSIF stores equal per-class counts, got {counts:?}"
        )));
    }
    let record_len = 8 + ds.d() * ds.l() * 8;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * record_len + 4);
    out.extend_from_slice(CSIF_MAGIC);
    for v in [CSIF_VERSION, ds.k() as u32, per_class as u32, ds.d() as u32, ds.l() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in ds.sequences() {
        out.extend_from_slice(&(s.tx_index as u32).to_le_bytes());
        out.extend_from_slice(&(s.slot_index as u32).to_le_bytes());
        for v in &s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<LabeledDataset, FingerprintError> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(4)? != CSIF_MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u32()?;
    if version != CSIF_VERSION {
        return Err(r.fail(4, &format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let per_class = r.u32()? as usize;
    let d = r.u32()? as usize;
    let l = r.u32()? as usize;

    let records_start = r.pos;
    let mut sequences = Vec::with_capacity(k * per_class);
    for _ in 0..k * per_class {
        let at = r.pos;
        let class = r.u32()? as usize;
        if class >= k {
            return Err(r.fail(at, &format!("class {class} out of range for K={k}")));
        }
        let slot = r.u32()? as usize;
        let raw = r.take(d * l * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        sequences.push(FingerprintSequence {
            d,
            l,
            data,
            tx_index: class,
            slot_index: slot,
        });
    }
    let records_end = r.pos;
    let stored = r.u32()?;
    let actual = crc32fast::hash(&bytes[records_start..records_end]);
    if stored != actual {
        return Err(r.fail(
            records_end,
            &format!("CRC mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after CRC"));
    }
    let ds = LabeledDataset::new(k, d, l, sequences)?;
    if ds.class_counts().iter().any(|&c| c != per_class) {
        return Err(r.fail(records_start, "per-class counts disagree with header"));
    }
    Ok(ds)
}

pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), FingerprintError> {
    fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset, FingerprintError> {
    from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FingerprintError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FingerprintError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn fail(&self, offset: usize, message: &str) -> FingerprintError {
        FingerprintError::Format {
            offset,
            message: message.to_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn dataset(k: usize, n: usize, d: usize, l: usize, salt: f64) -> LabeledDataset {
        let seqs = (0..k)
            .flat_map(|c| {
                (0..n).map(move |s| FingerprintSequence {
                    d,
                    l,
                    data: (0..d * l).map(|i| (i as f64 + salt) * (c as f64 - 0.5) / (s as f64 + 1.0)).collect(),
                    tx_index: c,
                    slot_index: s,
                })
            })
            .collect();
        LabeledDataset::new(k, d, l, seqs).unwrap()
    }

    #[test]
    fn header_is_twenty_bytes_after_magic() {
        let ds = dataset(6, 1, 24, 50, 0.0);
        let bytes = to_bytes(&ds).unwrap();
        assert_eq!(HEADER_LEN - 4, 20);
        assert_eq!(&bytes[..4], b"CSIF");
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        assert_eq!((field(0), field(1), field(2), field(3), field(4)), (1, 6, 1, 24, 50));
        // the first record's class field follows immediately
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 24 + 6 * (8 + 24 * 50 * 8) + 4);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = dataset(3, 4, 2, 5, 0.25);
        let bytes = to_bytes(&ds).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = to_bytes(&dataset(2, 2, 2, 3, 1.0)).unwrap();
        for cut in [0, 3, 10, 30, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(FingerprintError::Format { .. })),
                "cut at {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(
            from_bytes(&flipped),
            Err(FingerprintError::Format { message, .. }) if message.contains("CRC")
        ));
        let mut magic = bytes.clone();
        magic[1] = b'X';
        assert!(matches!(from_bytes(&magic), Err(FingerprintError::Format { offset: 0, .. })));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(from_bytes(&version), Err(FingerprintError::Format { offset: 4, .. })));
    }

    #[test]
    fn unequal_classes_cannot_be_written() {
        let ds = dataset(2, 2, 1, 1, 0.0);
        let mut seqs = ds.sequences().to_vec();
        seqs.pop();
        let uneven = LabeledDataset::new(2, 1, 1, seqs).unwrap();
        assert!(to_bytes(&uneven).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csif");
        let ds = dataset(2, 3, 4, 2, 3.0);
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn arbitrary_values_survive(values in proptest::collection::vec(-1e300f64..1e300, 12)) {
            let seqs = (0..2).map(|c| FingerprintSequence {
                d: 2,
                l: 3,
                data: values[c * 6..(c + 1) * 6].to_vec(),
                tx_index: c,
                slot_index: 7,
            }).collect();
            let ds = LabeledDataset::new(2, 2, 3, seqs).unwrap();
            prop_assert_eq!(from_bytes(&to_bytes(&ds).unwrap()).unwrap(), ds);
        }
    }
}
