//! Named parameter storage with gradients, adaptive-moment optimizer state,
//! and a versioned binary serialization format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All learnable parameters of a model, in insertion order.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let shape = value.shape().to_vec();
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push(Entry {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn n_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Adds `other`'s gradient buffers into this store's, in parameter order.
    pub fn accumulate_grads(&mut self, grads: &[Tensor]) {
        assert_eq!(grads.len(), self.entries.len());
        for (e, g) in self.entries.iter_mut().zip(grads) {
            e.grad.add_assign(g);
        }
    }

    pub fn take_grads(&mut self) -> Vec<Tensor> {
        self.entries
            .iter_mut()
            .map(|e| {
                let shape = e.grad.shape().to_vec();
                std::mem::replace(&mut e.grad, Tensor::zeros(&shape))
            })
            .collect()
    }

    pub fn clone_values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore_values(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.entries.len());
        for (e, v) in self.entries.iter_mut().zip(values) {
            e.value = v.clone();
        }
    }

    /// Standard bias-corrected adaptive-moment update over all parameters.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        for e in &self.entries {
            if !e.grad.all_finite() {
                return Err(Error::NonFiniteGradient(e.name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for e in &mut self.entries {
            let g = e.grad.data();
            let m = e.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = e.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let value = e.value.data_mut();
            for ((pi, mi), vi) in value.iter_mut().zip(e.m.data()).zip(e.v.data()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.m.fill(0.0);
            e.v.fill(0.0);
        }
    }

    /// Binary layout: magic, format version, name table with shapes, then
    /// one little-endian f64 block per parameter in insertion order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"FXPS")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.value.shape().len() as u32).to_le_bytes())?;
            for d in e.value.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
        }
        for e in &self.entries {
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// JSON manifest describing the binary: names, shapes, totals.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "format": "FXPS",
            "version": 1,
            "n_params": self.entries.len(),
            "n_values": self.n_values(),
            "params": self.entries.iter().map(|e| serde_json::json!({
                "name": e.name,
                "shape": e.value.shape(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FXPS" {
            return Err(Error::data(format!(
                "{}: not a parameter file (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::data(format!("unsupported parameter format v{version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(count);
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; name_len];
            r.read_exact(&mut buf)?;
            let name = String::from_utf8(buf)
                .map_err(|_| Error::data("parameter name is not valid UTF-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            names.push(name);
            shapes.push(shape);
        }
        let mut store = ParamStore::new();
        for (name, shape) in names.into_iter().zip(shapes) {
            let n: usize = shape.iter().product();
            let mut data = vec![0.0f64; n];
            for v in &mut data {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            store.add(name, Tensor::from_vec(&shape, data));
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_signed_lr() {
        // with constant gradient g, the bias-corrected first step is
        // -lr * g/|g| up to the eps term
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.0, -2.0]));
        store.grad_mut(id).data_mut().copy_from_slice(&[0.3, -0.7]);
        store.adam_step(0.01, 0.9, 0.999, 1e-8).unwrap();
        let w = store.value(id).data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((w[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.5, 2.5]));
        store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.value(id).data(), &[1.5, 2.5]);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // minimize 0.5*(w-3)^2 + 0.5*(u+1)^2
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![0.0, 0.0]));
        for _ in 0..200 {
            store.zero_grads();
            let w = store.value(id).data().to_vec();
            let g = store.grad_mut(id).data_mut();
            g[0] = w[0] - 3.0;
            g[1] = w[1] + 1.0;
            store.adam_step(0.05, 0.9, 0.999, 1e-8).unwrap();
        }
        let w = store.value(id).data();
        assert!((w[0] - 3.0).abs() < 1e-3, "w0 = {}", w[0]);
        assert!((w[1] + 1.0).abs() < 1e-3, "w1 = {}", w[1]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_name() {
        let mut store = ParamStore::new();
        store.add("ok", Tensor::from_vec(&[1], vec![0.0]));
        let bad = store.add("bad.weight", Tensor::from_vec(&[1], vec![0.0]));
        store.grad_mut(bad).data_mut()[0] = f64::NAN;
        let err = store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap_err();
        assert!(err.to_string().contains("bad.weight"));
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1e-17, f64::MIN_POSITIVE, 123.456]));
        store.add("b.bias", Tensor::from_vec(&[4], vec![0.0, -0.0, 2.5, -1.25]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (a, b) in store.ids().zip(loaded.ids()) {
            assert_eq!(store.name(a), loaded.name(b));
            let va: Vec<u64> = store.value(a).data().iter().map(|v| v.to_bits()).collect();
            let vb: Vec<u64> = loaded.value(b).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(va, vb);
        }
    }
}
