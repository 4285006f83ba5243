//! Named trainable parameters and their gradients.

use crate::Arr;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use diffdet_core::hash::ContentHasher;
use ndarray::IxDyn;
use std::io::{self, Read, Write};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Arr,
}

/// An ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Canonical byte encoding (names, shapes, little-endian values).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.write_all(b"DDPR").unwrap();
        out.write_u32::<LittleEndian>(1).unwrap();
        out.write_u64::<LittleEndian>(self.params.len() as u64)
            .unwrap();
        for p in &self.params {
            out.write_u32::<LittleEndian>(p.name.len() as u32).unwrap();
            out.write_all(p.name.as_bytes()).unwrap();
            out.write_u32::<LittleEndian>(p.value.ndim() as u32).unwrap();
            for &d in p.value.shape() {
                out.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            for &v in p.value.iter() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> io::Result<Self> {
        let mut r = io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"DDPR" {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported version {version}"),
            ));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u64::<LittleEndian>()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.read_f64::<LittleEndian>()?);
            }
            let value = Arr::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            params.push(Param { name, value });
        }
        Ok(ParamSet { params })
    }

    /// SHA-256 over the canonical byte encoding.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update_bytes(&self.to_bytes());
        h.finish_hex()
    }
}

/// Gradients aligned with a [`ParamSet`]; absent entries mean zero.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Option<Arr>>,
}

impl GradStore {
    pub fn zeros(params: &ParamSet) -> Self {
        GradStore {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Arr> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: Arr) {
        match &mut self.grads[id.0] {
            Some(g) => *g += &grad,
            slot @ None => *slot = Some(grad),
        }
    }

    /// Adds another store elementwise (used to reduce per-sample gradients in
    /// a fixed order).
    pub fn merge(&mut self, other: GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    /// Maximum absolute gradient entry, for divergence diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn byte_round_trip_preserves_everything() {
        let mut ps = ParamSet::new();
        ps.add("w1", Arr::from_shape_fn(IxDyn(&[2, 3]), |ix| (ix[0] * 3 + ix[1]) as f64 * 0.25));
        ps.add("b1", Arr::from_elem(IxDyn(&[3]), -1.5));
        let bytes = ps.to_bytes();
        let back = ParamSet::from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.name(ParamId(0)), "w1");
        assert_eq!(back.value(ParamId(0)), ps.value(ParamId(0)));
        assert_eq!(back.content_hash(), ps.content_hash());
    }

    #[test]
    fn hash_changes_with_values() {
        let mut a = ParamSet::new();
        a.add("w", Arr::from_elem(IxDyn(&[2]), 1.0));
        let mut b = ParamSet::new();
        b.add("w", Arr::from_elem(IxDyn(&[2]), 1.0 + 1e-12));
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
