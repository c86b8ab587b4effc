//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients into leaves (parameters and
//! explicit variables).

use std::cell::RefCell;
use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradient rule of one node: receives the output gradient and a mask telling
/// which parents need a gradient, returns one optional gradient per parent.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    value: Arc<Tensor<S>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Copy)]
struct Binding {
    store: u64,
    param: usize,
    node: usize,
}

/// Operation tape.
pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    bindings: RefCell<Vec<Binding>>,
    grad_enabled: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a [`Graph`].
pub struct Var<'g, S: Scalar> {
    pub(crate) graph: &'g Graph<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: Scalar> Copy for Var<'_, S> {}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl<S: Scalar> Graph<S> {
    /// A graph that records gradient rules.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), bindings: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A graph for forward evaluation only; no gradient rules are kept.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Arc<Tensor<S>>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_leaf(Arc::new(value), false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<S>>) -> Var<'_, S> {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_leaf(Arc::new(value), self.grad_enabled)
    }

    /// Binds a parameter; repeated binds of the same parameter share one leaf.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        let uid = store.uid();
        if let Some(b) = self
            .bindings
            .borrow()
            .iter()
            .find(|b| b.store == uid && b.param == id.index())
        {
            return Var { graph: self, id: b.node };
        }
        let var = self.push_leaf(store.shared(id), self.grad_enabled);
        self.bindings.borrow_mut().push(Binding { store: uid, param: id.index(), node: var.id });
        var
    }

    pub(crate) fn push(
        &self,
        value: Tensor<S>,
        parents: &[usize],
        backward: impl Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>> + 'static,
    ) -> Var<'_, S> {
        self.push_shared(Arc::new(value), parents, backward)
    }

    pub(crate) fn push_shared(
        &self,
        value: Arc<Tensor<S>>,
        parents: &[usize],
        backward: impl Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>> + 'static,
    ) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|&p| nodes[p].requires_grad);
        let backward: Option<BackwardFn<S>> = if requires_grad { Some(Box::new(backward)) } else { None };
        nodes.push(Node { value, parents: parents.to_vec(), backward, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<S>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Gradients<S> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = rule(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&mask) {
                if !need {
                    continue;
                }
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        Gradients { grads, bindings: self.bindings.borrow().clone() }
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    bindings: Vec<Binding>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter of `store`, indexed by [`ParamId::index`];
    /// parameters that did not take part in the loss get `None`.
    pub fn for_store(&self, store: &ParamStore<S>) -> Vec<Option<Tensor<S>>> {
        let mut out: Vec<Option<Tensor<S>>> = (0..store.len()).map(|_| None).collect();
        for b in self.bindings.iter().filter(|b| b.store == store.uid()) {
            out[b.param] = self.grads[b.node].clone();
        }
        out
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<S>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.graph.nodes.borrow()[self.id].value.dims4()
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> S {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on a non-scalar var");
        v.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    fn same_graph(&self, other: &Var<'g, S>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars belong to different graphs");
    }

    /// Same value, cut from the tape.
    pub fn detach(self) -> Var<'g, S> {
        self.graph.constant_shared(self.value())
    }

    /// Takes the value of `target` but routes the incoming gradient to `self`
    /// unchanged (straight-through estimator).
    pub fn straight_through(self, target: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&target);
        assert_eq!(self.shape(), target.shape(), "straight-through needs equal shapes");
        self.graph.push_shared(target.value(), &[self.id], |g, _| vec![Some(g.clone())])
    }

    fn unary(
        self,
        forward: impl Fn(S) -> S,
        derivative: impl Fn(S, S) -> S + 'static,
    ) -> Var<'g, S> {
        let x = self.value();
        let y = Arc::new(x.map(forward));
        let y_keep = Arc::clone(&y);
        self.graph.push_shared(y, &[self.id], move |g, _| {
            let data = x
                .data()
                .iter()
                .zip(y_keep.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * derivative(xv, yv))
                .collect();
            vec![Some(Tensor::from_vec(x.shape(), data).expect("same shape"))]
        })
    }

    pub fn add(self, other: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let y = a.zip_map(&b, |p, q| p + q);
        self.graph.push(y, &[self.id, other.id], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let y = a.zip_map(&b, |p, q| p - q);
        self.graph.push(y, &[self.id, other.id], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }

    pub fn mul(self, other: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let y = a.zip_map(&b, |p, q| p * q);
        self.graph.push(y, &[self.id, other.id], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |gv, bv| gv * bv)),
                need[1].then(|| g.zip_map(&a, |gv, av| gv * av)),
            ]
        })
    }

    pub fn scale(self, s: S) -> Var<'g, S> {
        let y = self.value().scale(s);
        self.graph.push(y, &[self.id], move |g, _| vec![Some(g.scale(s))])
    }

    pub fn add_scalar(self, s: S) -> Var<'g, S> {
        let y = self.value().map(|v| v + s);
        self.graph.push(y, &[self.id], |g, _| vec![Some(g.clone())])
    }

    pub fn neg(self) -> Var<'g, S> {
        self.scale(-S::one())
    }

    /// `1 - x`, computed exactly as `1 - x` per element.
    pub fn one_minus(self) -> Var<'g, S> {
        let y = self.value().map(|v| S::one() - v);
        self.graph.push(y, &[self.id], |g, _| vec![Some(g.map(|v| -v))])
    }

    pub fn square(self) -> Var<'g, S> {
        self.unary(|v| v * v, |x, _| S::of(2.0) * x)
    }

    pub fn abs(self) -> Var<'g, S> {
        self.unary(
            |v| v.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn sigmoid(self) -> Var<'g, S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn silu(self) -> Var<'g, S> {
        self.unary(
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    pub fn relu(self) -> Var<'g, S> {
        self.unary(|v| v.max(S::zero()), |x, _| if x > S::zero() { S::one() } else { S::zero() })
    }

    pub fn leaky_relu(self, slope: S) -> Var<'g, S> {
        self.unary(
            move |v| if v > S::zero() { v } else { v * slope },
            move |x, _| if x > S::zero() { S::one() } else { slope },
        )
    }

    pub fn softplus(self) -> Var<'g, S> {
        self.unary(|v| v.max(S::zero()) + (-v.abs()).exp().ln_1p(), |x, _| sigmoid(x))
    }

    pub fn sum(self) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let y = Tensor::scalar(x.sum());
        self.graph.push(y, &[self.id], move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))])
    }

    pub fn mean(self) -> Var<'g, S> {
        let n = S::from_usize_lossy(self.value().numel());
        self.sum().scale(S::one() / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, S> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape).expect("reshape element count");
        self.graph.push(y, &[self.id], move |g, _| {
            vec![Some(g.clone().reshape(&old).expect("reshape back"))]
        })
    }

    /// Multiplies every channel of a `[N, C, H, W]` var by a `[N, 1, H, W]` map.
    pub fn mul_map(self, map: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&map);
        let (x, m) = (self.value(), map.value());
        let (n, c, h, w) = x.dims4();
        assert_eq!(m.shape(), &[n, 1, h, w], "mul_map expects a single-channel map");
        let plane = h * w;
        let mut y = Tensor::zeros(x.shape());
        {
            let (xd, md, yd) = (x.data(), m.data(), y.data_mut());
            for b in 0..n {
                let mp = &md[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in 0..plane {
                        yd[off + i] = xd[off + i] * mp[i];
                    }
                }
            }
        }
        self.graph.push(y, &[self.id, map.id], move |g, need| {
            let gd = g.data();
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(x.shape());
                let (dd, md) = (dx.data_mut(), m.data());
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in 0..plane {
                            dd[off + i] = gd[off + i] * md[b * plane + i];
                        }
                    }
                }
                dx
            });
            let dm = need[1].then(|| {
                let mut dm = Tensor::zeros(m.shape());
                let (dd, xd) = (dm.data_mut(), x.data());
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in 0..plane {
                            dd[b * plane + i] += gd[off + i] * xd[off + i];
                        }
                    }
                }
                dm
            });
            vec![dx, dm]
        })
    }

    /// Adds a per-sample, per-channel `[N, C]` vector over all spatial positions.
    pub fn add_channel_vector(self, v: Var<'g, S>) -> Var<'g, S> {
        self.same_graph(&v);
        let (x, vv) = (self.value(), v.value());
        let (n, c, h, w) = x.dims4();
        assert_eq!(vv.shape(), &[n, c], "add_channel_vector expects [N, C]");
        let plane = h * w;
        let mut y = (*x).clone();
        for (idx, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let add = vv.data()[idx];
            chunk.iter_mut().for_each(|e| *e += add);
        }
        self.graph.push(y, &[self.id, v.id], move |g, need| {
            let dv = need[1].then(|| {
                let data = g.data().chunks(plane).map(|ch| ch.iter().copied().sum()).collect();
                Tensor::from_vec(&[n, c], data).expect("shape")
            });
            vec![need[0].then(|| g.clone()), dv]
        })
    }

    /// Concatenation along the channel axis of rank-4 vars.
    pub fn cat_channels(parts: &[Var<'g, S>]) -> Var<'g, S> {
        let graph = parts.first().expect("at least one part").graph;
        let values: Vec<Arc<Tensor<S>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<S>> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::cat_channels(&refs).expect("channel concat");
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        graph.push(y, &ids, move |g, need| {
            let mut start = 0;
            widths
                .iter()
                .zip(need)
                .map(|(&wd, &nd)| {
                    let out = nd.then(|| g.slice_channels(start, wd));
                    start += wd;
                    out
                })
                .collect()
        })
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Var<'g, S> {
        let x = self.value();
        let full = x.shape().to_vec();
        let y = x.slice_channels(start, len);
        self.graph.push(y, &[self.id], move |g, _| {
            let (n, c, h, w) = (full[0], full[1], full[2], full[3]);
            let plane = h * w;
            let mut dx = Tensor::zeros(&full);
            let dd = dx.data_mut();
            for b in 0..n {
                let dst = (b * c + start) * plane;
                let src = b * len * plane;
                dd[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            vec![Some(dx)]
        })
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $impl:ident) => {
        impl<'g, S: Scalar> std::ops::$trait for Var<'g, S> {
            type Output = Var<'g, S>;
            fn $method(self, rhs: Var<'g, S>) -> Var<'g, S> {
                Var::$impl(self, rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
