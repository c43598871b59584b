use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays, in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names.iter().enumerate().filter(move |(_, n)| n.starts_with(prefix)).map(|(i, _)| ParamId(i))
    }

    /// Total scalar count, optionally restricted to a name prefix.
    pub fn count(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.tensors[id.0].len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// First parameter holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, _, t)| !t.all_finite()).map(|(_, n, _)| n)
    }

    /// FNV-1a over names and bit patterns of every parameter under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for id in self.ids_with_prefix(prefix) {
            eat(self.names[id.0].as_bytes());
            for v in self.tensors[id.0].data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Overwrite values from `other` by name; every parameter of `self` must be present.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for i in 0..self.tensors.len() {
            let src = other.find(&self.names[i]).ok_or_else(|| Error::MissingParam(self.names[i].clone()))?;
            let t = other.get(src);
            self.tensors[i].ensure_same_shape(t)?;
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Copy every parameter under `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for id in ids {
            let src = other.find(&self.names[id.0]).ok_or_else(|| Error::MissingParam(self.names[id.0].clone()))?;
            self.tensors[id.0].ensure_same_shape(other.get(src))?;
            self.tensors[id.0] = other.get(src).clone();
        }
        Ok(())
    }

    /// Flat copy of every value, in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_tracks_values_and_prefix() {
        let mut s = ParamStore::default();
        let a = s.add("encoder.w", Tensor::full(&[2], 1.0));
        s.add("prior.w", Tensor::full(&[2], 1.0));
        let before = s.checksum("encoder.");
        let prior_before = s.checksum("prior.");
        s.get_mut(a).data_mut()[0] = 1.0 + 1e-15;
        assert_ne!(before, s.checksum("encoder."));
        assert_eq!(prior_before, s.checksum("prior."));
        assert_eq!(s.count("encoder."), 2);
        assert_eq!(s.count(""), 4);
    }

    #[test]
    fn load_requires_every_name() {
        let mut a = ParamStore::default();
        a.add("x", Tensor::zeros(&[1]));
        let b = ParamStore::default();
        assert!(matches!(a.load_from(&b), Err(Error::MissingParam(_))));
    }
}
