//! Named parameter store with matching gradient slots.
//!
//! Entries are kept in registration order so that initialization draws
//! and optimizer sweeps are reproducible run to run.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{FattnError, Result};
use crate::tensorcore::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique hierarchical name
    /// (e.g. `view0/layer1/q_proj/weight`). Duplicate names fail loudly.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(FattnError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros_like(&value);
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(())
    }

    /// Register a weight matrix with uniform(-a, a), a = sqrt(6/(fan_in+fan_out)).
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| FattnError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| FattnError::UnknownParam(name.to_string()))?;
        Ok(&mut self.entries[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.grad)
    }

    /// Add a gradient contribution to the slot for `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| FattnError::UnknownParam(name.to_string()))?;
        let slot = &mut self.entries[i].grad;
        if slot.shape() != g.shape() {
            return Err(FattnError::ShapeMismatch(format!(
                "grad for {}: {:?} vs {:?}",
                name,
                slot.shape(),
                g.shape()
            )));
        }
        slot.add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = Tensor::zeros_like(&e.value);
        }
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Serialize values to a flat binary: u64 count, then per entry
    /// (u32 name length, utf-8 name, u32 rank, u64 dims, f64 payload),
    /// all little-endian. Round-trips bit-exactly.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
            for &d in e.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.save(&mut f)
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        let count = u64::from_le_bytes(read_exact(r)?) as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| FattnError::BadFormat("non-utf8 parameter name".into()))?;
            let rank = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_exact(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(read_exact(r)?));
            }
            store.register(&name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn load_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::load(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_fails_loudly() {
        let mut s = ParamStore::new();
        s.register("a/w", Tensor::zeros(vec![2, 2])).unwrap();
        let err = s.register("a/w", Tensor::zeros(vec![2, 2]));
        assert!(matches!(err, Err(FattnError::DuplicateParam(_))));
    }

    #[test]
    fn grad_slots_match_value_shapes() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::zeros(vec![3, 4])).unwrap();
        assert_eq!(s.grad("w").unwrap().shape(), &[3, 4]);
        let bad = Tensor::zeros(vec![4, 3]);
        assert!(s.accumulate_grad("w", &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.register(
            "view0/embed/weight",
            Tensor::new(vec![2, 3], vec![1.5, -2.25, 3.0e-17, f64::MIN_POSITIVE, 0.1, -0.0])
                .unwrap(),
        )
        .unwrap();
        s.register("proj/bias", Tensor::new(vec![2], vec![0.3, -7.0]).unwrap())
            .unwrap();

        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let loaded = ParamStore::load(&mut buf.as_slice()).unwrap();

        assert_eq!(loaded.names(), s.names());
        for (a, b) in s.iter().zip(loaded.iter()) {
            assert_eq!(a.value.shape(), b.value.shape());
            // compare bit patterns, not float equality
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        // second save gives identical bytes
        let mut buf2 = Vec::new();
        loaded.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn registration_order_is_preserved() {
        let mut s = ParamStore::new();
        for name in ["z", "a", "m"] {
            s.register(name, Tensor::zeros(vec![1])).unwrap();
        }
        assert_eq!(s.names(), vec!["z", "a", "m"]);
    }
}
