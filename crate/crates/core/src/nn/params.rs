//! Named parameter collections and the LDIF checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LDIF"            4 bytes magic
//! version   u32     currently 1
//! count     u32     number of parameters
//! repeated count times, in ascending name order:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u32 × rank
//!   data     f64 × product(dims)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::RngExt;

use super::array::NumArray;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDIF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameter path → array. Iteration order is the sorted path order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, NumArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: NumArray) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&NumArray> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NumArray> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&NumArray> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Load(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(NumArray::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), NumArray::zeros(v.shape())))
                .collect(),
        }
    }

    /// `self += scale · other` for matching entries; `other` must cover the same names.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        for (name, value) in &mut self.entries {
            let o = other
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if o.shape() != value.shape() {
                return Err(Error::dims("add_scaled", value.shape(), o.shape()));
            }
            value
                .data_mut()
                .iter_mut()
                .zip(o.data())
                .for_each(|(v, g)| *v += scale * g);
        }
        Ok(())
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        for (name, value) in &self.entries {
            match other.get(name) {
                None => return Err(Error::Load(format!("checkpoint lacks parameter `{name}`"))),
                Some(o) if o.shape() != value.shape() => {
                    return Err(Error::Load(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        o.shape(),
                        value.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.names().find(|n| !self.entries.contains_key(*n)) {
            return Err(Error::Load(format!("unexpected parameter `{extra}` in checkpoint")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.num_scalars() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, value) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::NotCheckpointFile);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32("parameter count")?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos as u64;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Parse {
                    offset: at,
                    msg: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dim")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8, "data")?.try_into().unwrap()));
            }
            let at = r.pos as u64;
            let value = NumArray::new(shape, data).map_err(|e| Error::Parse {
                offset: at,
                msg: format!("parameter `{name}`: {e}"),
            })?;
            if set.entries.insert(name.clone(), value).is_some() {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("duplicate parameter `{name}`"),
                });
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                offset: r.pos as u64,
                msg: "trailing bytes after last parameter".into(),
            });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamSet> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Weight matrix `[fan_in, fan_out]` drawn from the Glorot uniform range.
pub fn glorot(rng: &mut impl rand::Rng, fan_in: usize, fan_out: usize) -> NumArray {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    NumArray::from_parts(vec![fan_in, fan_out], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("b", NumArray::vector(vec![1.5, -0.0, f64::MIN_POSITIVE]));
        p.insert("a/w", NumArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        p
    }

    #[test]
    fn checkpoint_header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"LDIF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first entry is "a/w" (sorted)
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(&bytes[16..19], b"a/w");
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            ParamSet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
        bytes[4] = 9;
        assert!(matches!(ParamSet::from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
        bytes[0] = b'X';
        assert!(matches!(ParamSet::from_bytes(&bytes), Err(Error::NotCheckpointFile)));
    }

    #[test]
    fn layout_check_names_offender() {
        let a = sample();
        let mut b = sample();
        b.insert("b", NumArray::vector(vec![0.0; 4]));
        let err = a.check_layout(&b).unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            vals in prop::collection::vec(prop::num::f64::ANY, 1..40),
            cols in 1usize..5,
        ) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let mut p = ParamSet::new();
            let m = NumArray::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap();
            p.insert("layer.0/w", m);
            p.insert("z", NumArray::vector(vals.clone()));
            let back = ParamSet::from_bytes(&p.to_bytes()).unwrap();
            for (name, v) in p.iter() {
                let w = back.get(name).unwrap();
                prop_assert_eq!(v.shape(), w.shape());
                let same = v.data().iter().zip(w.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
        }
    }
}
