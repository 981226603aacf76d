//! Define-by-run reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! creation order, so the node list is already a topological order and
//! [`Graph::backward`] simply walks it in reverse.

use std::collections::HashMap;

use super::tensor::{matmul_nt_into, matmul_tn_into};
use super::{NumericsError, ParamGrads, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softmax(NodeId),
    SliceCols { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Gather { table: NodeId, ids: Vec<usize> },
    RowBlend { new: NodeId, old: NodeId, mask: Vec<bool> },
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor<T>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf for a trainable parameter. Repeated calls return the same node
    /// so that gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims2() != vb.dims2() {
            return Err(mismatch(op, va.shape(), vb.shape()));
        }
        let (r, c) = va.dims2();
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(r, c, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `a[r×c] + bias[1×c]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let (r, c) = va.dims2();
        if vb.len() != c {
            return Err(mismatch("add_row", va.shape(), vb.shape()));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let out = Tensor::from_parts(r, c, data);
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// Affine map `x·W + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (r, c) = v.dims2();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax_row(v.row(i), T::one()));
        }
        let out = Tensor::from_parts(r, c, data);
        self.push(out, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let v = self.value(src);
        let (r, c) = v.dims2();
        if start + len > c {
            return Err(mismatch("slice_cols", v.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = Tensor::from_parts(r, len, data);
        Ok(self.push(out, Op::SliceCols { src, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let r = self.value(parts[0]).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != r) {
            return Err(mismatch("concat_cols", self.value(parts[0]).shape(), self.value(*bad).shape()));
        }
        let c: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(r, c, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let c = self.value(parts[0]).cols();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).cols() != c) {
            return Err(mismatch("concat_rows", self.value(parts[0]).shape(), self.value(*bad).shape()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let r = data.len() / c.max(1);
        let out = Tensor::from_parts(r, c, data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericsError> {
        let t = self.value(table);
        let (r, c) = t.dims2();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(NumericsError::IndexOutOfRange { index: id, bound: r });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(ids.len(), c, data);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Row select: row `i` comes from `new` where `mask[i]`, else from `old`.
    pub fn row_blend(&mut self, new: NodeId, old: NodeId, mask: &[bool]) -> Result<NodeId, NumericsError> {
        let (vn, vo) = (self.value(new), self.value(old));
        if vn.dims2() != vo.dims2() || mask.len() != vn.rows() {
            return Err(mismatch("row_blend", vn.shape(), vo.shape()));
        }
        let (r, c) = vn.dims2();
        let mut data = Vec::with_capacity(r * c);
        for (i, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { vn.row(i) } else { vo.row(i) });
        }
        let out = Tensor::from_parts(r, c, data);
        Ok(self.push(
            out,
            Op::RowBlend {
                new,
                old,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over rows where `mask` is true. Zero when nothing is unmasked.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId, NumericsError> {
        let v = self.value(logits);
        let (r, c) = v.dims2();
        if targets.len() != r || mask.len() != r {
            return Err(mismatch("cross_entropy", v.shape(), &[targets.len(), mask.len()]));
        }
        let mut probs = Vec::with_capacity(r * c);
        let mut total = T::zero();
        let mut count = 0usize;
        for i in 0..r {
            let row = v.row(i);
            probs.extend(softmax_row(row, T::one()));
            if !mask[i] {
                continue;
            }
            let t = targets[i];
            if t >= c {
                return Err(NumericsError::IndexOutOfRange { index: t, bound: c });
            }
            total += -log_softmax_at(row, t);
            count += 1;
        }
        let loss = if count == 0 { T::zero() } else { total / T::of(count as f64) };
        let out = Tensor::scalar(loss);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs: Tensor::from_parts(r, c, probs),
                count,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |id: NodeId, t: Tensor<T>| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let (gr, gc) = g.dims2();
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2();
                let n = vb.cols();
                let mut da = vec![T::zero(); m * k];
                matmul_nt_into(g.data(), vb.data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); k * n];
                matmul_tn_into(va.data(), g.data(), &mut db, m, k, n);
                acc(*a, Tensor::from_parts(m, k, da));
                acc(*b, Tensor::from_parts(k, n, db));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                let db = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                acc(*a, Tensor::from_parts(gr, gc, da));
                acc(*b, Tensor::from_parts(gr, gc, db));
            }
            Op::AddRow(a, bias) => {
                let mut db = vec![T::zero(); gc];
                for row in g.data().chunks(gc.max(1)) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*a, g.clone());
                let shape = self.value(*bias).shape().to_vec();
                acc(*bias, Tensor::new(shape, db).expect("bias shape"));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => {
                let d = zip(g, &node.value, |gv, y| gv * y * (T::one() - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let d = zip(g, &node.value, |gv, y| gv * (T::one() - y * y));
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, zip(g, &node.value, |gv, y| gv * y)),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Vec::with_capacity(gr * gc);
                for i in 0..gr {
                    let (gy, yy) = (g.row(i), y.row(i));
                    let dot: T = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                    d.extend(gy.iter().zip(yy).map(|(&a, &b)| b * (a - dot)));
                }
                acc(*a, Tensor::from_parts(gr, gc, d));
            }
            Op::SliceCols { src, start } => {
                let sv = self.value(*src);
                let (r, c) = sv.dims2();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + gc].copy_from_slice(g.row(i));
                }
                acc(*src, Tensor::new(sv.shape().to_vec(), d).expect("slice shape"));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let pc = pv.cols();
                    let mut d = Vec::with_capacity(gr * pc);
                    for i in 0..gr {
                        d.extend_from_slice(&g.row(i)[offset..offset + pc]);
                    }
                    offset += pc;
                    acc(p, Tensor::new(pv.shape().to_vec(), d).expect("concat shape"));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    let d = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    acc(p, Tensor::new(pv.shape().to_vec(), d).expect("concat shape"));
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = vec![T::zero(); tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for (x, &gv) in d[id * c..(id + 1) * c].iter_mut().zip(g.row(i)) {
                        *x += gv;
                    }
                }
                acc(*table, Tensor::new(tv.shape().to_vec(), d).expect("table shape"));
            }
            Op::RowBlend { new, old, mask } => {
                let mut dn = g.clone();
                let mut dold = g.clone();
                for (i, &m) in mask.iter().enumerate() {
                    let zeroed = if m { &mut dold } else { &mut dn };
                    zeroed.data_mut()[i * gc..(i + 1) * gc].fill(T::zero());
                }
                acc(*new, dn);
                acc(*old, dold);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, g.item()));
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let (r, c) = probs.dims2();
                let mut d = vec![T::zero(); r * c];
                if *count > 0 {
                    let w = g.item() / T::of(*count as f64);
                    for i in 0..r {
                        if !mask[i] {
                            continue;
                        }
                        let row = &mut d[i * c..(i + 1) * c];
                        for (x, &p) in row.iter_mut().zip(probs.row(i)) {
                            *x = p * w;
                        }
                        row[targets[i]] -= w;
                    }
                }
                let shape = self.value(*logits).shape().to_vec();
                acc(*logits, Tensor::new(shape, d).expect("logits shape"));
            }
        }
    }
}

fn zip<T: Scalar>(g: &Tensor<T>, y: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (r, c) = g.dims2();
    let data = g.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(r, c, data)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to any node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter of `store`, zero where unreachable.
    pub fn params(&self, store: &ParamStore<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::zeros_like(store);
        for (&pid, &node) in &self.params {
            if let Some(g) = &self.grads[node.0] {
                out.get_mut(pid).data_mut().copy_from_slice(g.data());
            }
        }
        out
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of `logits / temperature`, max-shifted for stability.
pub fn softmax_row<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `ln softmax(logits)[index]`.
pub fn log_softmax_at<T: Scalar>(logits: &[T], index: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let z: T = logits.iter().map(|&l| (l - max).exp()).sum();
    logits[index] - max - z.ln()
}
