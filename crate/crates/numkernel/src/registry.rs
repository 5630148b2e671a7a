use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use crate::error::{dim_err, KernelError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stable handle to a registered parameter. Assigned in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    tensor: Tensor,
    trainable: bool,
}

/// Named parameter tensors, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    entries: IndexMap<String, Entry>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(KernelError::State(format!("parameter `{name}` registered twice")));
        }
        let (idx, _) = self.entries.insert_full(name, Entry { tensor, trainable });
        Ok(ParamId(idx))
    }

    /// Registers a `[rows, cols]` matrix drawn uniformly from `±1/sqrt(cols)`.
    pub fn init_matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], values)?, true)
    }

    /// Registers a `[rows, cols]` matrix drawn uniformly from `±bound`.
    pub fn init_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let values = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], values)?, true)
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape), true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid ParamId")
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (k, e))| (ParamId(i), k.as_str(), &e.tensor))
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.clear_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// FNV-1a over names, shapes and value bits. Used to assert non-mutation.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u64| {
            for byte in b.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, e) in &self.entries {
            for b in name.bytes() {
                eat(b as u64);
            }
            for &d in e.tensor.shape() {
                eat(d as u64);
            }
            for v in e.tensor.values() {
                eat(v.to_bits());
            }
        }
        h
    }

    /// Binary payload: `u32 count`, then per entry `u32 name_len, name bytes,
    /// u8 trainable, u32 rank, u64 extents.., f64 values..`, all little-endian.
    pub fn serialize<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
        for (name, e) in &self.entries {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u8(e.trainable as u8)?;
            w.write_u32::<LittleEndian>(e.tensor.shape().len() as u32)?;
            for &d in e.tensor.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in e.tensor.values() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn deserialize<R: Read>(r: &mut R) -> Result<Self> {
        let io = |e: std::io::Error| KernelError::Checkpoint(e.to_string());
        let count = r.read_u32::<LittleEndian>().map_err(io)?;
        let mut reg = ParamRegistry::new();
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
            let trainable = r.read_u8().map_err(io)? != 0;
            let rank = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(io)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut values).map_err(io)?;
            let tensor = Tensor::new(shape, values).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
            reg.insert(name, tensor, trainable)?;
        }
        Ok(reg)
    }

    /// Copies values from `other` into `self`; names and shapes must agree exactly.
    pub fn copy_values_from(&mut self, other: &ParamRegistry) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(dim_err("copy_values_from", self.entries.len(), other.entries.len()));
        }
        for ((name, e), (oname, oe)) in self.entries.iter_mut().zip(other.entries.iter()) {
            if name != oname || e.tensor.shape() != oe.tensor.shape() {
                return Err(KernelError::Checkpoint(format!(
                    "parameter layout differs at `{name}` ({:?}) vs `{oname}` ({:?})",
                    e.tensor.shape(),
                    oe.tensor.shape()
                )));
            }
            e.tensor.values_mut().copy_from_slice(oe.tensor.values());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut reg = ParamRegistry::new();
        reg.init_zeros("a", vec![2]).unwrap();
        assert!(matches!(reg.init_zeros("a", vec![3]), Err(KernelError::State(_))));
    }

    #[test]
    fn insertion_order_is_iteration_order() {
        let mut rng = Rng::new(0);
        let mut reg = ParamRegistry::new();
        for name in ["z", "a", "m"] {
            reg.init_matrix(name, 2, 2, &mut rng).unwrap();
        }
        let names: Vec<&str> = reg.iter().map(|(_, n, _)| n).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(reg.id("a"), Some(ParamId(1)));
    }

    #[test]
    fn serialize_round_trip_is_bit_exact() {
        let mut rng = Rng::new(5);
        let mut reg = ParamRegistry::new();
        reg.init_matrix("w", 3, 4, &mut rng).unwrap();
        let b = reg.init_zeros("b", vec![3]).unwrap();
        reg.set_trainable(b, false);
        let mut buf = Vec::new();
        reg.serialize(&mut buf).unwrap();
        let back = ParamRegistry::deserialize(&mut buf.as_slice()).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.checksum(), reg.checksum());
        assert!(!back.is_trainable(b));
    }

    #[test]
    fn truncated_payload_is_checkpoint_error() {
        let mut rng = Rng::new(5);
        let mut reg = ParamRegistry::new();
        reg.init_matrix("w", 3, 4, &mut rng).unwrap();
        let mut buf = Vec::new();
        reg.serialize(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            ParamRegistry::deserialize(&mut buf.as_slice()),
            Err(KernelError::Checkpoint(_))
        ));
    }

    #[test]
    fn init_matrix_respects_fan_in_bound() {
        let mut rng = Rng::new(9);
        let mut reg = ParamRegistry::new();
        let id = reg.init_matrix("w", 10, 16, &mut rng).unwrap();
        assert!(reg.get(id).values().iter().all(|v| v.abs() <= 0.25));
    }
}
