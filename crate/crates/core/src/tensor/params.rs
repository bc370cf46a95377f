use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Initialization scheme for a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// uniform(−1/√fan_in, 1/√fan_in), fan_in = last dimension
    Uniform,
    Zeros,
    /// normal(0, 1) / √d, d = last dimension
    Embedding,
    Const(f64),
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    frozen: bool,
}

/// Named learned tensors and their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<ParamId> {
        let mut t = Tensor::new(shape.to_vec(), vec![0.0; shape.iter().product()])?;
        let last = *shape.last().unwrap_or(&1) as f64;
        match init {
            Init::Zeros => {}
            Init::Const(c) => t.data_mut().iter_mut().for_each(|x| *x = c),
            Init::Uniform => {
                let b = 1.0 / last.sqrt();
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-b..b));
            }
            Init::Embedding => {
                let s = 1.0 / last.sqrt();
                t.data_mut().iter_mut().for_each(|x| {
                    let n: f64 = rng.sample(StandardNormal);
                    *x = n * s;
                });
            }
        }
        self.insert(name, t)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::Invalid {
                op: "param",
                msg: format!("duplicate parameter name `{name}`"),
            });
        }
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: None,
            frozen: false,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.entries[id.0].frozen = true;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    /// Total scalar count over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub(crate) fn ensure_grads(&mut self) {
        for e in &mut self.entries {
            if e.grad.is_none() {
                e.grad = Some(vec![0.0; e.value.len()]);
            }
        }
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        let e = &mut self.entries[id.0];
        let buf = e.grad.get_or_insert_with(|| vec![0.0; e.value.len()]);
        for (b, &x) in buf.iter_mut().zip(g) {
            *b += x;
        }
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every gradient by `k`.
    pub fn scale_grads(&mut self, k: f64) {
        for g in self.entries.iter_mut().filter_map(|e| e.grad.as_mut()) {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Writes the checkpoint format: a magic line, the manifest length as a
    /// little-endian u64, the JSON manifest, then each parameter's values as
    /// little-endian f64 in manifest order.
    pub fn save<W: Write>(&self, mut w: W, seed: u64, extra: serde_json::Value) -> Result<()> {
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            seed,
            params: self
                .entries
                .iter()
                .map(|e| ParamMeta {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                })
                .collect(),
            extra,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for e in &self.entries {
            let mut buf = Vec::with_capacity(e.value.len() * 8);
            for x in e.value.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Checkpoint> {
        let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
        let mut magic = vec![0u8; MAGIC.len()];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {}",
                manifest.version
            )));
        }
        let mut store = ParamStore::new();
        for p in &manifest.params {
            let n: usize = p.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw).map_err(io)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(&p.name, Tensor::new(p.shape.clone(), data)?)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(TensorError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { manifest, store })
    }
}

const MAGIC: &[u8] = b"SQLGNN-CKPT\n";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub params: Vec<ParamMeta>,
    /// Model configuration and vocabulary travel here.
    pub extra: serde_json::Value,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("a.w", &[2, 2], Init::Uniform, &mut rng).unwrap();
        assert!(s.add("a.w", &[2], Init::Zeros, &mut rng).is_err());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let id = s.add("w", &[8, 16], Init::Uniform, &mut rng).unwrap();
        assert!(s.value(id).data().iter().all(|x| x.abs() < 0.25));
        let b = s.add("b", &[8], Init::Zeros, &mut rng).unwrap();
        assert!(s.value(b).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::new();
        s.add("emb", &[5, 3], Init::Embedding, &mut rng).unwrap();
        s.add("bias", &[3], Init::Const(0.5), &mut rng).unwrap();
        let mut buf = Vec::new();
        s.save(&mut buf, 9, serde_json::json!({"k": 1})).unwrap();
        let ck = ParamStore::load(buf.as_slice()).unwrap();
        assert_eq!(ck.manifest.seed, 9);
        assert_eq!(ck.manifest.params[0].shape, vec![5, 3]);
        for id in s.ids() {
            assert_eq!(s.value(id), ck.store.value(id));
            assert_eq!(s.name(id), ck.store.name(id));
        }
        assert!(ParamStore::load(&buf[..buf.len() - 1]).is_err());
    }
}
