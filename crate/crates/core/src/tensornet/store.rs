use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Param<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Named trainable tensors plus per-parameter Adam moments.
///
/// Names are kept in a `BTreeMap`, so every iteration (updates, checkpoint
/// layout) is lexicographic and reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let n = value.len();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: None,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            },
        );
        Ok(())
    }

    /// He-normal initialisation: `N(0, gain^2 * 2 / fan_in)`.
    pub fn insert_he(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> Result<()> {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let t = Tensor::randn(shape, rng).map(|v| v * T::lit(std));
        self.insert(name, t)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).and_then(|p| p.grad.as_deref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn add_grad(&mut self, name: &str, g: &[T]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::state(format!("gradient for unknown parameter `{name}`")))?;
        if g.len() != p.value.len() {
            return Err(Error::domain(format!(
                "gradient length {} for `{name}` with {} values",
                g.len(),
                p.value.len()
            )));
        }
        match &mut p.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// Scales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let mut sq = 0.0f64;
        for p in self.params.values() {
            if let Some(g) = &p.grad {
                sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm.is_finite() {
            let s = T::lit(max_norm / norm);
            for p in self.params.values_mut() {
                if let Some(g) = &mut p.grad {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    /// One Adam update over every parameter, then clears gradients.
    ///
    /// Fails without touching anything if some parameter has no gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::state(format!("adam_step: parameter `{name}` has no gradient")));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let bc1 = T::lit(1.0 - cfg.beta1.powf(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powf(t));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            let data = p.value.data_mut();
            for i in 0..data.len() {
                p.m[i] = b1 * p.m[i] + one_b1 * g[i];
                p.v[i] = b2 * p.v[i] + one_b2 * g[i] * g[i];
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Copies every parameter under `from` prefix onto the same suffix under `to`.
    pub fn copy_prefix(&mut self, from: &str, to: &str) -> Result<()> {
        let pairs: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .filter_map(|(k, p)| k.strip_prefix(from).map(|s| (format!("{to}{s}"), p.value.clone())))
            .collect();
        for (k, v) in pairs {
            let dst = self
                .params
                .get_mut(&k)
                .ok_or_else(|| Error::state(format!("copy_prefix: missing `{k}`")))?;
            if dst.value.shape() != v.shape() {
                return Err(Error::domain(format!("copy_prefix: shape mismatch for `{k}`")));
            }
            dst.value = v;
        }
        Ok(())
    }

    /// Serialises names, shapes and values in the WMCK layout.
    ///
    /// ```text
    /// "WMCK" | u32 count | per tensor: u16 name_len, name utf8, u8 ndim, ndim x u32 dims, f32 data
    /// ```
    /// All integers and floats are little-endian; tensors appear in lexicographic name order.
    pub fn to_wmck(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(b"WMCK");
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in &self.params {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(Error::format(format!("parameter name too long: {name}")));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            let shape = p.value.shape();
            if shape.len() > u8::MAX as usize {
                return Err(Error::format(format!("too many dimensions for {name}")));
            }
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_wmck(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != b"WMCK" {
            return Err(Error::format("bad WMCK magic"));
        }
        let count = r.u32()? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::format("parameter name is not utf-8"))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            store
                .insert(&name, Tensor::from_vec(&shape, data)?)
                .map_err(|_| Error::format(format!("duplicate tensor `{name}` in checkpoint")))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after WMCK payload"));
        }
        Ok(store)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_wmck()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_wmck(&fs::read(path)?)
    }

    /// Replaces values of existing parameters from a loaded store, checking shapes.
    pub fn load_values_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        for (name, p) in &mut self.params {
            let src = other
                .value(name)
                .ok_or_else(|| Error::format(format!("checkpoint lacks `{name}`")))?;
            if src.shape() != p.value.shape() {
                return Err(Error::format(format!(
                    "checkpoint shape mismatch for `{name}`: {:?} vs {:?}",
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::format("unexpected end of data")),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::tensornet::Graph;

    fn toy_store() -> ParameterStore<f32> {
        let mut s = ParameterStore::new();
        let mut rng = rng_for(1, 0);
        s.insert_he("b.w", &[2, 3], 3, 1.0, &mut rng).unwrap();
        s.insert("a.bias", Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut s = toy_store();
        let before: Vec<f32> = s.value("b.w").unwrap().data().to_vec();
        s.add_grad("b.w", &[0.0; 6]).unwrap();
        s.add_grad("a.bias", &[0.0; 2]).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value("b.w").unwrap().data(), before.as_slice());
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut s = toy_store();
        s.add_grad("b.w", &[1.0; 6]).unwrap();
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(Error::State(_))));
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let l = g.square(w);
        g.backward(l).unwrap();
        g.accumulate_grads(&mut s).unwrap();
        s.adam_step(&AdamConfig {
            lr: 0.1,
            ..Default::default()
        })
        .unwrap();
        assert!(s.value("w").unwrap().item() < 1.0);
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_exact_and_ordered() {
        let s = toy_store();
        let bytes = s.to_wmck().unwrap();
        let back = ParameterStore::<f32>::from_wmck(&bytes).unwrap();
        assert_eq!(back.to_wmck().unwrap(), bytes);
        let names: Vec<&str> = back.names().collect();
        assert_eq!(names, vec!["a.bias", "b.w"]);
        assert_eq!(back.value("b.w").unwrap(), s.value("b.w").unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_format_error() {
        let bytes = toy_store().to_wmck().unwrap();
        for cut in [0, 3, 8, bytes.len() - 1] {
            assert!(matches!(
                ParameterStore::<f32>::from_wmck(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ParameterStore::<f32>::from_wmck(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wmck");
        let s = toy_store();
        s.save_checkpoint(&path).unwrap();
        let back = ParameterStore::<f32>::load_checkpoint(&path).unwrap();
        assert_eq!(back.to_wmck().unwrap(), s.to_wmck().unwrap());
    }
}
