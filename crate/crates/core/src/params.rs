//! Named parameter storage, graph binding, initialization and checkpoints.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use kanfpn_autodiff::{Element, Gradients, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const CKPT_VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    /// Dotted path, unique within a model.
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Insertion-ordered collection of a model's parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element> {
    params: IndexMap<String, Param<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.insert(
            name.clone(),
            Param {
                name,
                value,
                trainable: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<E>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Replaces a parameter value; the shape must stay the same.
    pub fn set(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "`{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero(&mut self, name: &str) -> Result<()> {
        let shape = self.get(name)?.value.shape().to_vec();
        self.set(name, Tensor::zeros(shape))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn into_vec(self) -> Vec<Param<E>> {
        self.params.into_values().collect()
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            name: p.name.clone(),
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Records every parameter on `graph`: trainable ones as differentiable
    /// leaves, frozen ones as constants.
    pub fn bind<'g>(&self, graph: &'g Graph<E>) -> Bound<'g, E> {
        let mut vars = Vec::with_capacity(self.len());
        let mut index = HashMap::with_capacity(self.len());
        for (i, p) in self.iter().enumerate() {
            let v = if p.trainable {
                graph.leaf(p.value.clone())
            } else {
                graph.constant(p.value.clone())
            };
            vars.push(v);
            index.insert(p.name.clone(), i);
        }
        Bound { graph, vars, index }
    }

    /// Addresses already-recorded variables (one per parameter, in store
    /// order) by name.
    pub fn bind_vars<'g>(&self, graph: &'g Graph<E>, vars: &[Var]) -> Result<Bound<'g, E>> {
        if vars.len() != self.len() {
            return Err(Error::InvalidSpec(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        let index = self.names().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
        Ok(Bound {
            graph,
            vars: vars.to_vec(),
            index,
        })
    }

    /// Writes a `CKPT` file: magic, u16 version, then per parameter a u32
    /// little-endian name length, the UTF-8 name and a `TNSR` blob.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        for p in self.iter() {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            p.value.write_to(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Reads `(name, tensor)` records of a `CKPT` stream.
    pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor<E>)>> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 6 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Format("not a CKPT file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported CKPT version {version}")));
        }
        let mut cursor = &bytes[6..];
        let mut out = Vec::new();
        while !cursor.is_empty() {
            if cursor.len() < 4 {
                return Err(Error::Format("truncated record header".into()));
            }
            let len = u32::from_le_bytes(cursor[..4].try_into().unwrap()) as usize;
            cursor = &cursor[4..];
            if cursor.len() < len {
                return Err(Error::Format("truncated parameter name".into()));
            }
            let name = std::str::from_utf8(&cursor[..len])
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            cursor = &cursor[len..];
            let t = Tensor::read_from(&mut cursor)?;
            out.push((name, t));
        }
        Ok(out)
    }

    /// Loads a checkpoint into this store. The name sets must match exactly
    /// and every shape must agree; nothing is modified on failure.
    pub fn load_checkpoint(&mut self, r: &mut impl Read) -> Result<()> {
        let records = Self::read_checkpoint(r)?;
        let mut seen = std::collections::HashSet::new();
        for (name, t) in &records {
            let p = self.params.get(name).ok_or_else(|| {
                Error::CheckpointMismatch(format!("checkpoint has unknown parameter `{name}`"))
            })?;
            if p.value.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{name}` has shape {:?} in the model, {:?} in the checkpoint",
                    p.value.shape(),
                    t.shape()
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::CheckpointMismatch(format!("`{name}` appears twice")));
            }
        }
        if let Some(missing) = self.names().find(|n| !seen.contains(*n)) {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint lacks parameter `{missing}`"
            )));
        }
        for (name, t) in records {
            self.params.get_mut(&name).unwrap().value = t;
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        self.load_checkpoint(&mut f)
    }
}

/// Parameters recorded on a graph, addressable by name.
pub struct Bound<'g, E: Element> {
    graph: &'g Graph<E>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl<'g, E: Element> Bound<'g, E> {
    pub fn graph(&self) -> &'g Graph<E> {
        self.graph
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order; unreachable parameters get `None`.
    pub fn gradients(&self, grads: &Gradients<E>) -> Vec<Option<Tensor<E>>> {
        self.vars.iter().map(|&v| grads.get(v).cloned()).collect()
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`. Values are drawn in `f64` so `f32`
    /// and `f64` models built from one seed agree up to rounding.
    pub fn kaiming_uniform<E: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<E> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape.to_vec(), |_| E::from_f64(rng.random_range(-bound..bound)))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::ones([2, 2])).unwrap();
        s.insert("a.b", Tensor::zeros([2])).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(matches!(s.insert("a.w", Tensor::ones([1])), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = store();
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CKPT");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 3);
        assert_eq!(&buf[10..13], b"a.w");
        assert_eq!(&buf[13..17], b"TNSR");

        let mut other = store();
        other.set("a.w", Tensor::zeros([2, 2])).unwrap();
        other.load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(other.get("a.w").unwrap().value.data(), &[1.0; 4]);
    }

    #[test]
    fn checkpoint_name_mismatch_fails_loudly() {
        let s = store();
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.insert("a.w", Tensor::ones([2, 2])).unwrap();
        other.insert("c.b", Tensor::zeros([2])).unwrap();
        assert!(matches!(
            other.load_checkpoint(&mut buf.as_slice()),
            Err(Error::CheckpointMismatch(_))
        ));
        // untouched on failure
        assert_eq!(other.get("a.w").unwrap().value.data(), &[1.0; 4]);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a: Tensor<f64> = Init::new(3).kaiming_uniform(&[4, 6], 6);
        let b: Tensor<f64> = Init::new(3).kaiming_uniform(&[4, 6], 6);
        assert!(a.bitwise_eq(&b));
        assert!(a.max_abs() <= 1.0);
    }
}
