//! Named parameter storage with per-parameter gradient accumulators and a
//! versioned binary checkpoint format.
//!
//! Parameters live in a sorted map so that iteration order (and therefore
//! initialization, update order, and serialization) is identical across runs.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tape, Tensor, Var};

const MAGIC: &[u8; 8] = b"SUMPARAM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Entry<F: Scalar> {
    value: Tensor<F>,
    acc: Tensor<F>,
}

/// All trainable tensors of a model, keyed by name.
#[derive(Debug, Clone)]
pub struct ParamStore<F: Scalar> {
    entries: BTreeMap<String, Entry<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    /// Register a tensor under a unique name. The gradient accumulator starts
    /// at zero; callers that train set it with [`ParamStore::fill_accumulators`].
    pub fn insert(&mut self, name: &str, value: Tensor<F>) {
        let acc = Tensor::zeros(value.shape().to_vec());
        let prev = self.entries.insert(name.to_string(), Entry { value, acc });
        assert!(prev.is_none(), "duplicate parameter name: {name}");
    }

    /// Register a tensor initialized uniformly in `[lo, hi)`.
    pub fn init_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        lo: f64,
        hi: f64,
        rng: &mut ChaCha8Rng,
    ) {
        self.insert(name, Tensor::uniform(shape, lo, hi, rng));
    }

    /// Set every accumulator entry to `value` (the optimizer's starting mass).
    pub fn fill_accumulators(&mut self, value: F) {
        for entry in self.entries.values_mut() {
            for a in entry.acc.data_mut() {
                *a = value;
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor<F> {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .value
    }

    pub fn accumulator(&self, name: &str) -> &Tensor<F> {
        &self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .acc
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Apply one adaptive-gradient update to a single parameter.
    pub(super) fn update(&mut self, name: &str, grad: &[F], lr: F) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if grad.len() != entry.value.len() {
            return Err(Error::ShapeMismatch {
                op: "adagrad_step",
                lhs: entry.value.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        let acc = entry.acc.data_mut();
        let val = entry.value.data_mut();
        for k in 0..grad.len() {
            let g = grad[k];
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    name: name.to_string(),
                });
            }
            acc[k] += g * g;
            val[k] = val[k] - lr * g / acc[k].sqrt();
        }
        Ok(())
    }

    /// Put every parameter on a tape as a differentiable leaf and return the
    /// name → handle map used to read gradients back out.
    pub fn attach(&self, tape: &mut Tape<F>) -> BTreeMap<String, Var> {
        let mut vars = BTreeMap::new();
        for (name, entry) in &self.entries {
            vars.insert(name.clone(), tape.leaf(entry.value.clone()));
        }
        vars
    }

    /// Convert all values and accumulators to another precision.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let entries = self
            .entries
            .iter()
            .map(|(name, e)| {
                (
                    name.clone(),
                    Entry {
                        value: e.value.cast::<G>(),
                        acc: e.acc.cast::<G>(),
                    },
                )
            })
            .collect();
        ParamStore { entries }
    }

    // ---- checkpoint I/O ----

    /// Write a versioned binary checkpoint: names, shapes, values, and
    /// accumulators with exact bit patterns.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&[F::dtype_tag()]).map_err(io_err)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())
            .map_err(io_err)?;

        let width = F::dtype_tag() as usize;
        for (name, entry) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(bytes).map_err(io_err)?;
            w.write_all(&(entry.value.shape().len() as u32).to_le_bytes())
                .map_err(io_err)?;
            for &d in entry.value.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
            }
            for tensor in [&entry.value, &entry.acc] {
                for &x in tensor.data() {
                    let bits = x.to_bits_u64().to_le_bytes();
                    w.write_all(&bits[..width]).map_err(io_err)?;
                }
            }
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    /// Read a checkpoint written by [`ParamStore::save`] at the same precision.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a parameter checkpoint",
                path.display()
            )));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(io_err)?;
        let version = u32::from_le_bytes(buf4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format version {version}",
                path.display()
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(io_err)?;
        if tag[0] != F::dtype_tag() {
            return Err(Error::Checkpoint(format!(
                "{}: stored precision is {}-byte floats, expected {}-byte",
                path.display(),
                tag[0],
                F::dtype_tag()
            )));
        }
        r.read_exact(&mut buf4).map_err(io_err)?;
        let count = u32::from_le_bytes(buf4) as usize;

        let width = F::dtype_tag() as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            r.read_exact(&mut buf4).map_err(io_err)?;
            let name_len = u32::from_le_bytes(buf4) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(io_err)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint(format!("{}: invalid name", path.display())))?;

            r.read_exact(&mut buf4).map_err(io_err)?;
            let ndim = u32::from_le_bytes(buf4) as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut buf8 = [0u8; 8];
            for _ in 0..ndim {
                r.read_exact(&mut buf8).map_err(io_err)?;
                shape.push(u64::from_le_bytes(buf8) as usize);
            }
            let len: usize = shape.iter().product();

            let read_tensor = |r: &mut BufReader<std::fs::File>| -> Result<Tensor<F>> {
                let mut data = Vec::with_capacity(len);
                let mut word = [0u8; 8];
                for _ in 0..len {
                    r.read_exact(&mut word[..width]).map_err(io_err)?;
                    word[width..].fill(0);
                    data.push(F::from_bits_u64(u64::from_le_bytes(word)));
                }
                Ok(Tensor::new(shape.clone(), data))
            };
            let value = read_tensor(&mut r)?;
            let acc = read_tensor(&mut r)?;
            entries.insert(name, Entry { value, acc });
        }
        Ok(ParamStore { entries })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn sample_store(seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.init_uniform("layer.w", vec![4, 3], -0.05, 0.05, &mut rng);
        store.init_uniform("layer.b", vec![3], -0.05, 0.05, &mut rng);
        store.init_uniform("embed", vec![10, 4], -0.05, 0.05, &mut rng);
        store.fill_accumulators(0.1);
        store
    }

    #[test]
    fn names_iterate_in_sorted_order() {
        let store = sample_store(1);
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["embed", "layer.b", "layer.w"]);
    }

    #[test]
    fn identical_seeds_give_identical_initialization() {
        let a = sample_store(42);
        let b = sample_store(42);
        for name in a.names() {
            assert_eq!(a.get(name).data(), b.get(name).data());
        }
        let c = sample_store(43);
        assert_ne!(a.get("layer.w").data(), c.get("layer.w").data());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let mut store = sample_store(7);
        // make accumulators non-trivial so they are exercised too
        store
            .update("layer.b", &[0.25, -0.5, 1.0], 0.15)
            .unwrap();
        store.save(&path).unwrap();

        let loaded = ParamStore::<f32>::load(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for name in store.names() {
            assert_eq!(store.get(name).shape(), loaded.get(name).shape());
            assert_eq!(store.get(name).data(), loaded.get(name).data());
            assert_eq!(
                store.accumulator(name).data(),
                loaded.accumulator(name).data()
            );
        }
    }

    #[test]
    fn f64_round_trip_preserves_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params64.ckpt");
        let mut store = ParamStore::<f64>::new();
        store.insert(
            "v",
            Tensor::vector(vec![std::f64::consts::PI, 1.0 / 3.0, -0.0, 1e-300]),
        );
        store.save(&path).unwrap();
        let loaded = ParamStore::<f64>::load(&path).unwrap();
        for (a, b) in store.get("v").data().iter().zip(loaded.get("v").data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn loading_wrong_precision_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        sample_store(3).save(&path).unwrap();
        let err = ParamStore::<f64>::load(&path).unwrap_err();
        assert!(err.to_string().contains("precision"));
    }

    #[test]
    fn loading_garbage_reports_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        let err = ParamStore::<f32>::load(&path).unwrap_err();
        assert!(err.to_string().contains("not a parameter checkpoint"));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(vec![2]));
        store.insert("w", Tensor::zeros(vec![2]));
    }

    #[test]
    fn cast_preserves_values_within_f32_precision() {
        let store = sample_store(9);
        let wide = store.cast::<f64>();
        let back = wide.cast::<f32>();
        for name in store.names() {
            assert_eq!(store.get(name).data(), back.get(name).data());
        }
    }
}
