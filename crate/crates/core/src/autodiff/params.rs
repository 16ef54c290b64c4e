use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Named parameters of a model, in registration order.
///
/// Every store, including every clone, carries a distinct uid so a tape never
/// confuses the parameters of two stores.
#[derive(Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
    uid: u64,
}

impl<T: Clone> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            index: self.index.clone(),
            uid: next_uid(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            uid: next_uid(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            trainable: true,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * factor);
        }
    }

    /// Sets every parameter's trainable flag from a predicate on its name.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).count()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Euclidean norm of all trainable gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian bytes of every value whose name satisfies `pred`, in store order.
    pub fn value_bytes(&self, pred: impl Fn(&str) -> bool) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.params.iter().filter(|p| pred(&p.name)) {
            out.extend_from_slice(p.name.as_bytes());
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }
}

/// Anything that owns a [`ParamStore`].
pub trait HasParams<T> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

impl<T> HasParams<T> for ParamStore<T> {
    fn params(&self) -> &ParamStore<T> {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(
            store.add("a", Tensor::vector(vec![2.0])),
            Err(Error::Contract(_))
        ));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn gradient_shape_follows_value() {
        let mut store = ParamStore::<f32>::new();
        let id = store
            .add("w", Tensor::matrix(2, 3, vec![0.0; 6]).unwrap())
            .unwrap();
        assert_eq!(store.get(id).grad.shape(), &[2, 3]);
    }

    #[test]
    fn tape_keeps_two_stores_apart() {
        use crate::autodiff::Tape;
        let mut a = ParamStore::<f64>::new();
        let mut b = a.clone();
        let ia = a.add("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let ib = b.add("p", Tensor::vector(vec![5.0, 7.0])).unwrap();
        assert_eq!(ia, ib);
        assert_ne!(a.uid(), b.uid());

        let mut tape = Tape::new();
        let va = tape.param(&a, ia);
        let vb = tape.param(&b, ib);
        assert_ne!(va, vb);
        assert_eq!(tape.value(vb).data(), &[5.0, 7.0]);
        let loss = tape.sum(vb).unwrap();
        tape.backward(loss, &mut a).unwrap();
        assert_eq!(a.get(ia).grad.data(), &[0.0, 0.0]);
        tape.backward(loss, &mut b).unwrap();
        assert_eq!(b.get(ib).grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn trainable_predicate() {
        let mut store = ParamStore::<f64>::new();
        store.add("head.fc", Tensor::vector(vec![1.0])).unwrap();
        store.add("encoder.w", Tensor::vector(vec![1.0])).unwrap();
        store.set_trainable_where(|n| n.starts_with("head."));
        assert_eq!(store.trainable_count(), 1);
        assert!(store.by_name("head.fc").unwrap().trainable);
    }
}
