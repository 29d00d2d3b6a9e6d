//! Tape-based reverse-mode differentiation over [`MvTensor`] ops.

use std::collections::BTreeMap;

use super::conv::{conv_backward_impl, conv_forward, Padding};
use super::{ga_relu, masked_sq_sum, residual_add, MvTensor, Real};
use crate::algebra::Blade;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: MvTensor<T>,
}

/// Trainable tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: MvTensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &MvTensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut MvTensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar coefficients.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Value<T> {
    Tensor(MvTensor<T>),
    Scalar(T),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, padding: Padding },
    Relu(Var),
    Add(Var, Var),
    Mse { pred: Var, target: Var, mask: Vec<Blade> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Value<T>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops; backward walks it in reverse.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::usage(format!("variable {} is not on this tape", v.0)))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: MvTensor<T>) -> Var {
        self.push(Value::Tensor(value), Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, value: MvTensor<T>) -> Var {
        self.push(Value::Tensor(value), Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Value::Tensor(store.get(id).clone()), Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> Result<&MvTensor<T>> {
        match &self.node(v)?.value {
            Value::Tensor(t) => Ok(t),
            Value::Scalar(_) => Err(Error::usage("expected a tensor, found a scalar")),
        }
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        match self.node(v)?.value {
            Value::Scalar(s) => Ok(s),
            Value::Tensor(_) => Err(Error::usage("expected a scalar, found a tensor")),
        }
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let out = conv_forward(self.value(x)?, self.value(w)?, self.value(b)?, padding)?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Value::Tensor(out), Op::Conv { x, w, b, padding }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = ga_relu(self.value(x)?);
        let rg = self.needs(x);
        Ok(self.push(Value::Tensor(out), Op::Relu(x), rg))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let out = residual_add(self.value(x)?, self.value(y)?)?;
        let rg = self.needs(x) || self.needs(y);
        Ok(self.push(Value::Tensor(out), Op::Add(x, y), rg))
    }

    pub fn mse(&mut self, pred: Var, target: Var, mask: &[Blade]) -> Result<Var> {
        let (sum, denom) = masked_sq_sum(self.value(pred)?, self.value(target)?, mask)?;
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Value::Scalar(sum / denom),
            Op::Mse {
                pred,
                target,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter and
    /// every input recorded with [`Tape::input_with_grad`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.scalar(loss)?;
        let mut grads: Vec<Option<MvTensor<T>>> = vec![None; self.nodes.len()];
        let mut params: BTreeMap<ParamId, MvTensor<T>> = BTreeMap::new();

        fn accumulate<T: Real>(slot: &mut Option<MvTensor<T>>, g: MvTensor<T>) -> Result<()> {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Mse { pred, target, mask } = &node.op {
                if idx != loss.0 {
                    continue;
                }
                let p = self.value(*pred)?;
                let t = self.value(*target)?;
                let scale = T::from_f64(2.0) / T::from_f64((p.outer() * p.channels() * p.grid_len()) as f64);
                let mut gp = MvTensor::zeros(p.algebra(), p.outer(), p.channels(), p.spatial());
                for o in 0..p.outer() {
                    for c in 0..p.channels() {
                        for &b in mask {
                            let (pp, tp) = (p.plane(o, c, b), t.plane(o, c, b));
                            for ((g, &pv), &tv) in gp.plane_mut(o, c, b).iter_mut().zip(pp).zip(tp) {
                                *g = scale * (pv - tv);
                            }
                        }
                    }
                }
                if self.needs(*target) {
                    accumulate(&mut grads[target.0], gp.map(|v| -v))?;
                }
                if self.needs(*pred) {
                    accumulate(&mut grads[pred.0], gp)?;
                }
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::Param(id) => match params.get_mut(id) {
                    Some(existing) => existing.add_assign(&g)?,
                    None => {
                        params.insert(*id, g);
                    }
                },
                Op::Relu(x) => {
                    let xv = self.value(*x)?;
                    let gx = g.zip_map(xv, |gv, v| if v > T::zero() { gv } else { T::zero() })?;
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::Add(x, y) => {
                    if self.needs(*y) {
                        accumulate(&mut grads[y.0], g.clone())?;
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g)?;
                    }
                }
                Op::Conv { x, w, b, padding } => {
                    let (dx, dw, db) =
                        conv_backward_impl(self.value(*x)?, self.value(*w)?, &g, *padding, self.needs(*x))?;
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], db)?;
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads[w.0], dw)?;
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx)?;
                    }
                }
                Op::Mse { .. } => unreachable!("handled above"),
            }
        }
        Ok(Gradients { params, nodes: grads })
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, MvTensor<T>>,
    nodes: Vec<Option<MvTensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&MvTensor<T>> {
        self.params.get(&id)
    }

    /// Gradient for an input recorded with [`Tape::input_with_grad`].
    pub fn wrt(&self, v: Var) -> Option<&MvTensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// One gradient per registered parameter, zeros where the loss does not
    /// depend on it.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<MvTensor<T>> {
        store
            .ids()
            .map(|id| match self.params.get(&id) {
                Some(g) => g.clone(),
                None => store.get(id).map(|_| T::zero()),
            })
            .collect()
    }
}
