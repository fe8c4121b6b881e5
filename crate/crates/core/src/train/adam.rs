use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor4;

/// Bias-corrected Adam with one pair of moment buffers per parameter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor4<T>>,
    pub v: Vec<Tensor4<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || -> Vec<Tensor4<T>> {
            store
                .params()
                .iter()
                .map(|p| Tensor4::zeros(p.value().shape()))
                .collect()
        };
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients held in `store`. Every
    /// parameter must have received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.params().len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.params().len()
            )));
        }
        if let Some(p) = store.params().iter().find(|p| !p.grad_ready()) {
            return Err(Error::Usage(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = store.param(id).grad().clone();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.value_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                p[j] -= step_size * m[j] / ((v[j] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add_param("p", Tensor4::scalar(v)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.zero_grad();
        let graph = Graph::new();
        let id = s.find("p").unwrap();
        let leaf = graph.leaf(s.value(id).clone(), true);
        let loss = graph.scale(&leaf, g).unwrap();
        graph.backward(&loss).unwrap();
        s.accumulate_grads(&graph, &[(id, leaf)]);
    }

    #[test]
    fn first_step_is_lr_sized() {
        for g in [1e-3, 1.0, 250.0] {
            let mut s = scalar_store(0.5);
            let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
            set_grad(&mut s, g);
            adam.step(&mut s, 1e-3).unwrap();
            let d = (s.value(s.find("p").unwrap()).data()[0] - 0.5).abs();
            assert!((0.99e-3..=1e-3).contains(&d), "{d}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.25);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            set_grad(&mut s, 0.0);
            adam.step(&mut s, 1e-2).unwrap();
        }
        assert_eq!(s.value(s.find("p").unwrap()).data()[0], 0.25);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        let e = adam.step(&mut s, 1e-3).unwrap_err();
        assert!(matches!(e, Error::Usage(ref m) if m.contains('p')));
    }
}
