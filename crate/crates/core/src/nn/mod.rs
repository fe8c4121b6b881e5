//! Parameter storage and the composite layers of the network.

mod block;
mod cbam;
mod layers;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::BN_MOMENTUM;
use crate::tensor::{Shape4, Tensor4};

pub use block::{BlockOutput, ResidualDscBlock, ShortcutConfig};
pub use cbam::Cbam;
pub use layers::{BatchNorm2d, Conv2dLayer, DscLayer};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    value: Arc<Tensor4<T>>,
    grad: Tensor4<T>,
    grad_ready: bool,
}

impl<T: Real> Param<T> {
    pub fn value(&self) -> &Tensor4<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor4<T> {
        &self.grad
    }

    /// Whether a backward pass has written this gradient since the last
    /// [`ParamStore::zero_grad`].
    pub fn grad_ready(&self) -> bool {
        self.grad_ready
    }
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor4<T>,
}

/// Named trainable tensors plus named buffers, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
            buffer_names: HashMap::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) || self.buffer_names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor4::zeros(value.shape());
        self.names.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value: Arc::new(value),
            grad,
            grad_ready: false,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<BufferId> {
        let name = name.into();
        if self.names.contains_key(&name) || self.buffer_names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name {name}")));
        }
        self.buffer_names.insert(name.clone(), self.buffers.len());
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor4<T> {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor4<T>> {
        self.params[id.0].value.clone()
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor4<T> {
        &self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied().map(ParamId)
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffer_names.get(name).copied().map(BufferId)
    }

    /// Names and values of every tensor, parameters first, then buffers.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor4<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &*p.value))
            .chain(self.buffers.iter().map(|b| (b.name.as_str(), &b.value)))
    }

    /// Total number of trainable scalars; buffers are not counted.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.value(id).numel()).sum()
    }

    /// Overwrites a parameter or buffer by name; the shape must match.
    pub fn set_by_name(&mut self, name: &str, value: Tensor4<T>) -> Result<()> {
        let current = if let Some(&i) = self.names.get(name) {
            self.params[i].value.shape()
        } else if let Some(&i) = self.buffer_names.get(name) {
            self.buffers[i].value.shape()
        } else {
            return Err(Error::Format(format!("unknown tensor name {name}")));
        };
        if current != value.shape() {
            return Err(Error::dim(
                "set_by_name",
                format!("{name}: stored {current}, got {}", value.shape()),
            ));
        }
        if let Some(&i) = self.names.get(name) {
            self.params[i].value = Arc::new(value);
        } else {
            self.buffers[self.buffer_names[name]].value = value;
        }
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
            p.grad_ready = false;
        }
    }

    /// Adds the gradients a graph holds for the given parameter leaves.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, leaves: &[(ParamId, Var<T>)]) {
        for (id, var) in leaves {
            if let Some(g) = graph.grad(var) {
                let p = &mut self.params[id.0];
                p.grad.add_assign(&g);
                p.grad_ready = true;
            }
        }
    }

    /// Folds train-mode batch statistics into the running statistics.
    /// The running variance uses the unbiased batch variance.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - m;
        for u in updates {
            let count = u.stats.count as f64;
            let unbias = T::from_f64_lossy(count / (count - 1.0));
            let rm = self.buffers[u.mean.0].value.data_mut();
            for (r, &b) in rm.iter_mut().zip(&u.stats.mean) {
                *r = keep * *r + m * b;
            }
            let rv = self.buffers[u.var.0].value.data_mut();
            for (r, &b) in rv.iter_mut().zip(&u.stats.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }

    /// Every parameter and buffer converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: p.grad.cast(),
                    grad_ready: p.grad_ready,
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
            names: self.names.clone(),
            buffer_names: self.buffer_names.clone(),
        }
    }
}

/// Seeded weight initialisation: Kaiming-uniform over the fan-in with
/// negative slope √5 (bound `1/√fan_in`) for weights, zeros for biases and
/// `beta`, ones for `gamma`. The ReLU gain would double the variance at
/// every unnormalised shortcut.
pub struct Init<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Init { rng }
    }

    pub fn kaiming_uniform<T: Real>(&mut self, shape: Shape4, fan_in: usize) -> Tensor4<T> {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..bound)))
            .collect();
        Tensor4::from_raw(shape, data)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats<T>,
}

/// Captures named activations during a forward pass and optionally swaps
/// one of them for a supplied tensor.
#[derive(Debug)]
pub struct Probe<T> {
    requested: BTreeSet<String>,
    replace: Option<(String, Tensor4<T>)>,
    captured: RefCell<BTreeMap<String, Var<T>>>,
}

impl<T: Real> Probe<T> {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        Probe {
            requested: names.iter().map(|s| s.as_ref().to_string()).collect(),
            replace: None,
            captured: RefCell::new(BTreeMap::new()),
        }
    }

    /// Forward passes using this probe replace the activation `name` by
    /// `value` (as a constant).
    pub fn with_replacement(mut self, name: &str, value: Tensor4<T>) -> Self {
        self.replace = Some((name.to_string(), value));
        self
    }

    pub fn requested(&self) -> impl Iterator<Item = &str> {
        self.requested
            .iter()
            .map(String::as_str)
            .chain(self.replace.iter().map(|(n, _)| n.as_str()))
    }

    pub fn into_captured(self) -> BTreeMap<String, Var<T>> {
        self.captured.into_inner()
    }
}

/// Per-forward state shared by all layers.
pub struct Ctx<'a, T: Real> {
    pub graph: &'a Graph<T>,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    leaves: RefCell<Vec<Option<Var<T>>>>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
    probe: Option<&'a Probe<T>>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            graph,
            store,
            mode,
            leaves: RefCell::new(vec![None; store.params.len()]),
            bn_updates: RefCell::new(Vec::new()),
            probe: None,
        }
    }

    pub fn with_probe(mut self, probe: &'a Probe<T>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn probe(&self) -> Option<&'a Probe<T>> {
        self.probe
    }

    /// The graph leaf for a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Var<T> {
        let mut leaves = self.leaves.borrow_mut();
        leaves[id.0]
            .get_or_insert_with(|| self.graph.leaf_arc(self.store.value_arc(id), true))
            .clone()
    }

    /// Parameter leaves used so far, for [`ParamStore::accumulate_grads`].
    pub fn param_leaves(&self) -> Vec<(ParamId, Var<T>)> {
        self.leaves
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.clone().map(|v| (ParamId(i), v)))
            .collect()
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut *self.bn_updates.borrow_mut())
    }

    pub(crate) fn push_bn_update(&self, u: BnUpdate<T>) {
        self.bn_updates.borrow_mut().push(u);
    }

    /// Marks a named activation: captured when requested, replaced when
    /// the probe says so.
    pub fn emit(&self, name: &str, v: Var<T>) -> Result<Var<T>> {
        let Some(probe) = self.probe else {
            return Ok(v);
        };
        let v = match &probe.replace {
            Some((n, t)) if n == name => {
                if t.shape() != v.shape() {
                    return Err(Error::dim(
                        "probe",
                        format!("replacement for {name} is {}, activation is {}", t.shape(), v.shape()),
                    ));
                }
                self.graph.constant(t.clone())
            }
            _ => v,
        };
        if probe.requested.contains(name) {
            probe.captured.borrow_mut().insert(name.to_string(), v.clone());
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_param("a", Tensor4::zeros([1, 1, 1, 1])).unwrap();
        assert!(s.add_param("a", Tensor4::zeros([1, 1, 1, 1])).is_err());
        assert!(s.add_buffer("a", Tensor4::zeros([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn kaiming_bound_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a: Tensor4<f32> = Init::new(&mut r1).kaiming_uniform(Shape4::new(8, 4, 3, 3), 36);
        let b: Tensor4<f32> = Init::new(&mut r2).kaiming_uniform(Shape4::new(8, 4, 3, 3), 36);
        assert_eq!(a, b);
        let bound = 1.0 / 6.0;
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        let max = a.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max > 0.9 * bound);
    }

    #[test]
    fn running_stats_momentum() {
        let mut s = ParamStore::<f64>::new();
        let mean = s.add_buffer("m", Tensor4::vector(vec![0.0]).unwrap()).unwrap();
        let var = s.add_buffer("v", Tensor4::vector(vec![1.0]).unwrap()).unwrap();
        s.apply_bn_updates(&[BnUpdate {
            mean,
            var,
            stats: BatchStats {
                mean: vec![2.0],
                var: vec![3.0],
                count: 4,
            },
        }]);
        assert!((s.buffer(mean).data()[0] - 0.2).abs() < 1e-12);
        // 0.9 * 1 + 0.1 * 3 * 4/3
        assert!((s.buffer(var).data()[0] - 1.3).abs() < 1e-12);
    }
}
