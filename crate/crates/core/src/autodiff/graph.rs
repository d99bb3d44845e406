use indexmap::IndexMap;

use super::gru::{gru2d_backward, gru2d_forward, Direction, GruCache, GruGrads, GruShape};
use super::kernels::{
    conv2d_backward, conv2d_forward, dims4, maxpool2_backward, maxpool2_forward,
    upsample2_backward, upsample2_forward, ConvShape,
};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Leaf,
    Param(String),
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        shape: ConvShape,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    MaxPool {
        x: NodeId,
        arg: Vec<u32>,
    },
    Upsample(NodeId),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Gru {
        x: NodeId,
        w: NodeId,
        u: NodeId,
        b: NodeId,
        dir: Direction,
        shape: GruShape,
        caches: Vec<GruCache<T>>,
    },
    SoftDice {
        p: NodeId,
        g: Vec<f64>,
        eps: f64,
    },
    WeightedSum {
        x: NodeId,
        w: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// GRU parameters for one direction.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w: NodeId,
    pub u: NodeId,
    pub b: NodeId,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index is a topological order.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar output with respect to every upstream node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients in graph order; untouched parameters get zeros.
    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.params
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// A differentiable leaf that is not a named parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        let value = store.require(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string()), true))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let shape = ConvShape::new(
            self.value(x).dims(),
            self.value(w).dims(),
            self.value(b).dims(),
            stride,
            pad,
        )?;
        let out = conv2d_forward(
            &shape,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::from_vec(&shape.out_dims(), out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Conv { x, w, b, shape }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self
            .value(x)
            .map(|v| if v > T::default() { v } else { T::default() });
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, arg, dims) = maxpool2_forward(self.value(x).dims(), self.value(x).data())?;
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_vec(&dims, out)?, Op::MaxPool { x, arg }, ng))
    }

    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, dims) = upsample2_forward(self.value(x).dims(), self.value(x).data())?;
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_vec(&dims, out)?, Op::Upsample(x), ng))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        if xs.len() == 1 {
            return Ok(first);
        }
        let [b, _, h, w] = dims4(self.value(first).dims())?;
        let mut channels = 0;
        for &id in xs {
            let d = dims4(self.value(id).dims())?;
            if d[0] != b || d[2] != h || d[3] != w {
                return Err(Error::Shape(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    self.value(first).dims(),
                    d
                )));
            }
            channels += d[1];
        }
        let mut data = Vec::with_capacity(b * channels * h * w);
        for bi in 0..b {
            for &id in xs {
                let v = self.value(id);
                let per = v.dims()[1] * h * w;
                data.extend_from_slice(&v.data()[bi * per..(bi + 1) * per]);
            }
        }
        let ng = xs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            Tensor::from_vec(&[b, channels, h, w], data)?,
            Op::Concat(xs.to_vec()),
            ng,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::Shape(format!(
                "add operands differ: {:?} vs {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn gru2d(&mut self, x: NodeId, p: GruParams, dir: Direction) -> Result<NodeId> {
        let shape = GruShape::new(
            self.value(x).dims(),
            self.value(p.w).dims(),
            self.value(p.u).dims(),
            self.value(p.b).dims(),
        )?;
        let (out, caches) = gru2d_forward(
            &shape,
            dir,
            self.value(x).data(),
            self.value(p.w).data(),
            self.value(p.u).data(),
            self.value(p.b).data(),
        );
        let dims = [shape.batch, shape.hidden, shape.height, shape.width];
        let ng = [x, p.w, p.u, p.b].iter().any(|&id| self.needs(id));
        Ok(self.push(
            Tensor::from_vec(&dims, out)?,
            Op::Gru {
                x,
                w: p.w,
                u: p.u,
                b: p.b,
                dir,
                shape,
                caches,
            },
            ng,
        ))
    }

    /// Mean over the batch (axis 0) of `1 − Dice`, a scalar.
    pub fn soft_dice_loss(&mut self, p: NodeId, g: &Tensor<T>, eps: f64) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.dims() != g.dims() || pv.rank() == 0 {
            return Err(Error::Shape(format!(
                "prediction {:?} and labels {:?} differ",
                pv.dims(),
                g.dims()
            )));
        }
        let b = pv.dims()[0];
        let n = pv.len() / b;
        let pd: Vec<f64> = pv.data().iter().map(|v| v.as_f64()).collect();
        let gd: Vec<f64> = g.data().iter().map(|v| v.as_f64()).collect();
        let mut loss = 0.0;
        for bi in 0..b {
            loss += 1.0
                - super::dice::soft_dice(
                    &pd[bi * n..(bi + 1) * n],
                    &gd[bi * n..(bi + 1) * n],
                    eps,
                )?;
        }
        loss /= b as f64;
        let ng = self.needs(p);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftDice { p, g: gd, eps },
            ng,
        ))
    }

    /// `Σ wᵢ xᵢ`, a scalar.
    pub fn weighted_sum(&mut self, x: NodeId, w: Tensor<T>) -> Result<NodeId> {
        if w.dims() != self.value(x).dims() {
            return Err(Error::Shape(
                "weighted_sum weights must match the input".into(),
            ));
        }
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::scalar(T::from_f64(s)),
            Op::WeightedSum {
                x,
                w: w.into_data(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, out: NodeId) -> Result<Gradients<T>> {
        if self.value(out).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(out).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &dout, &mut grads);
            grads[i] = Some(dout);
        }
        let mut params = IndexMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| vec![T::default(); node.value.len()]);
                let t = Tensor::from_vec(node.value.dims(), g)?;
                match params.get_mut(name) {
                    Some(acc) => Tensor::add_assign(acc, &t),
                    None => {
                        params.insert(name.clone(), t);
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, delta: Vec<T>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn zeros_like(&self, id: NodeId) -> Vec<T> {
        vec![T::default(); self.value(id).len()]
    }

    fn backprop_node(&self, node: &Node<T>, dout: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Input | Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, w, b, shape } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if self.needs(*x) {
                    let mut d = self.zeros_like(*x);
                    conv2d_backward(shape, xv, wv, dout, Some(&mut d), None, None);
                    self.accumulate(grads, *x, d);
                }
                if self.needs(*w) {
                    let mut d = self.zeros_like(*w);
                    conv2d_backward(shape, xv, wv, dout, None, Some(&mut d), None);
                    self.accumulate(grads, *w, d);
                }
                if self.needs(*b) {
                    let mut d = self.zeros_like(*b);
                    conv2d_backward(shape, xv, wv, dout, None, None, Some(&mut d));
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dout)
                    .map(|(&v, &g)| if v > T::default() { g } else { T::default() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(dout)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::MaxPool { x, arg } => {
                let mut d = self.zeros_like(*x);
                maxpool2_backward(arg, dout, &mut d);
                self.accumulate(grads, *x, d);
            }
            Op::Upsample(x) => {
                let mut d = self.zeros_like(*x);
                upsample2_backward(self.value(*x).dims(), dout, &mut d);
                self.accumulate(grads, *x, d);
            }
            Op::Concat(xs) => {
                let dims = node.value.dims();
                let (b, c, hw) = (dims[0], dims[1], dims[2] * dims[3]);
                let mut offset = 0;
                for &id in xs {
                    let ci = self.value(id).dims()[1];
                    if self.needs(id) {
                        let mut d = Vec::with_capacity(b * ci * hw);
                        for bi in 0..b {
                            let start = (bi * c + offset) * hw;
                            d.extend_from_slice(&dout[start..start + ci * hw]);
                        }
                        self.accumulate(grads, id, d);
                    }
                    offset += ci;
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.needs(id) {
                        self.accumulate(grads, id, dout.to_vec());
                    }
                }
            }
            Op::Gru {
                x,
                w,
                u,
                b,
                dir,
                shape,
                caches,
            } => {
                let mut dx = self.needs(*x).then(|| self.zeros_like(*x));
                let mut dw = self.needs(*w).then(|| self.zeros_like(*w));
                let mut du = self.needs(*u).then(|| self.zeros_like(*u));
                let mut db = self.needs(*b).then(|| self.zeros_like(*b));
                gru2d_backward(
                    shape,
                    *dir,
                    self.value(*w).data(),
                    self.value(*u).data(),
                    caches,
                    dout,
                    GruGrads {
                        dx: dx.as_deref_mut(),
                        dw: dw.as_deref_mut(),
                        du: du.as_deref_mut(),
                        db: db.as_deref_mut(),
                    },
                );
                for (id, d) in [(*x, dx), (*w, dw), (*u, du), (*b, db)] {
                    if let Some(d) = d {
                        self.accumulate(grads, id, d);
                    }
                }
            }
            Op::SoftDice { p, g, eps } => {
                let pv = self.value(*p);
                let bsz = pv.dims()[0];
                let n = pv.len() / bsz;
                let pd: Vec<f64> = pv.data().iter().map(|v| v.as_f64()).collect();
                let scale = -dout[0].as_f64() / bsz as f64;
                let mut d = Vec::with_capacity(pv.len());
                for bi in 0..bsz {
                    let gr = super::dice::soft_dice_grad(
                        &pd[bi * n..(bi + 1) * n],
                        &g[bi * n..(bi + 1) * n],
                        *eps,
                    )
                    .expect("lengths checked at construction");
                    d.extend(gr.into_iter().map(|v| T::from_f64(scale * v)));
                }
                self.accumulate(grads, *p, d);
            }
            Op::WeightedSum { x, w } => {
                let d = w.iter().map(|&wi| wi * dout[0]).collect();
                self.accumulate(grads, *x, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![-2.0, 0.0, 3.0]).unwrap());
        let r = g.relu(x);
        let s = g.sigmoid(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(g.value(s).data()[1], 0.5);
        let w = Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        let o = g.weighted_sum(s, w).unwrap();
        let grads = g.backward(o).unwrap();
        assert_eq!(grads.get(x).unwrap()[1], 0.25);
    }

    #[test]
    fn concat_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        let b = g.input(Tensor::zeros(&[1, 5, 2, 2]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c).dims(), &[1, 8, 2, 2]);
        assert_eq!(g.concat(&[a]).unwrap(), a);
        let d = g.input(Tensor::zeros(&[1, 5, 3, 2]));
        assert!(g.concat(&[a, d]).is_err());
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = g.maxpool2(x).unwrap();
        let o = g.weighted_sum(p, Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(
            g.backward(o).unwrap().get(x).unwrap(),
            &[0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }
}
