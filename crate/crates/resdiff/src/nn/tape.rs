use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_tn, Tensor};

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered set of parameters owned by one model.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; no gradient flows out.
    Input,
    /// Leaf bound to a parameter; backward accumulates into its grad.
    Param(ParamId),
    /// y = x · Wᵀ + b with x [r,in], w [out,in], b [out].
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Add(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    /// Row gather from a table [rows, dim] by index list.
    GatherRows { table: NodeId, idx: Vec<usize> },
    /// Scalar: mean of squared element differences against a constant target.
    MeanSqDiff { x: NodeId, target: Tensor },
    /// Scalar: mean of squared elements.
    MeanSq(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Forward-recording tape for the fixed operator set. Backward computes
/// exact reverse-mode gradients of a scalar node.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let value = params.get(id).value.clone();
        self.push(Op::Param(id), value)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 {
            return Err(Error::InvalidArgument("linear operands must be 2D".into()));
        }
        let (rows, in_dim) = (xv.shape()[0], xv.shape()[1]);
        let (out_dim, w_in) = (wv.shape()[0], wv.shape()[1]);
        if in_dim != w_in || bv.len() != out_dim {
            return Err(Error::InvalidArgument(format!(
                "linear shape mismatch: x [{rows},{in_dim}], w {:?}, b {:?}",
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; rows * out_dim];
        let xd = xv.data();
        let wd = wv.data();
        let bd = bv.data();
        for i in 0..rows {
            let xrow = &xd[i * in_dim..(i + 1) * in_dim];
            let orow = &mut out[i * out_dim..(i + 1) * out_dim];
            orow.copy_from_slice(bd);
            for (o, wrow) in orow.iter_mut().zip(wd.chunks_exact(in_dim)) {
                let mut acc = 0.0;
                for (&xv, &wv) in xrow.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *o += acc;
            }
        }
        let value = Tensor::from_vec(&[rows, out_dim], out)?;
        Ok(self.push(Op::Linear { x, w, b }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::InvalidArgument(format!(
                "add shape mismatch {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let rows = self.value(parts[0]).shape()[0];
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::InvalidArgument("concat operands must share rows".into()));
            }
            total += s[1];
        }
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for &p in parts {
            let v = self.value(p);
            let w = v.shape()[1];
            for r in 0..rows {
                out[r * total + col..r * total + col + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let value = Tensor::from_vec(&[rows, total], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn gather_rows(&mut self, table: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let tv = self.value(table);
        let (rows, dim) = (tv.shape()[0], tv.shape()[1]);
        let mut out = vec![0.0; idx.len() * dim];
        for (i, &r) in idx.iter().enumerate() {
            if r >= rows {
                return Err(Error::InvalidArgument(format!(
                    "gather index {r} out of table range 0..{rows}"
                )));
            }
            out[i * dim..(i + 1) * dim].copy_from_slice(&tv.data()[r * dim..(r + 1) * dim]);
        }
        let value = Tensor::from_vec(&[idx.len(), dim], out)?;
        Ok(self.push(Op::GatherRows { table, idx }, value))
    }

    pub fn mean_sq_diff(&mut self, x: NodeId, target: Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(Error::InvalidArgument(format!(
                "loss shape mismatch {:?} vs {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let n = xv.len() as f64;
        let loss: f64 =
            xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Op::MeanSqDiff { x, target }, Tensor::scalar(loss)))
    }

    pub fn mean_sq(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let loss: f64 = xv.data().iter().map(|v| v * v).sum::<f64>() / n;
        self.push(Op::MeanSq(x), Tensor::scalar(loss))
    }

    /// Reverse pass from a scalar node; parameter gradients accumulate into
    /// `params` (they are not zeroed first).
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::State("backward requires a scalar loss node".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn accumulate(slot: &mut Option<Tensor>, add: Tensor) {
            match slot {
                Some(g) => {
                    for (a, b) in g.data_mut().iter_mut().zip(add.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(add),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pid) => {
                    let p = params.get_mut(*pid);
                    for (a, b) in p.grad.data_mut().iter_mut().zip(gy.data()) {
                        *a += b;
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let out_dim = wv.shape()[0];
                    // dx = gy · W ; dW = gyᵀ · x ; db = column sum of gy.
                    accumulate(&mut grads[x.0], matmul(&gy, wv));
                    accumulate(&mut grads[w.0], matmul_tn(&gy, xv));
                    let mut db = vec![0.0; out_dim];
                    for row in gy.data().chunks_exact(out_dim) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::from_vec(&[out_dim], db)?);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let data: Vec<f64> = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], gy.clone());
                    accumulate(&mut grads[b.0], gy);
                }
                Op::ConcatCols(parts) => {
                    let rows = gy.shape()[0];
                    let total = gy.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        let mut part = vec![0.0; rows * w];
                        for r in 0..rows {
                            part[r * w..(r + 1) * w].copy_from_slice(
                                &gy.data()[r * total + col..r * total + col + w],
                            );
                        }
                        accumulate(&mut grads[p.0], Tensor::from_vec(&[rows, w], part)?);
                        col += w;
                    }
                }
                Op::GatherRows { table, idx } => {
                    let tv = &self.nodes[table.0].value;
                    let dim = tv.shape()[1];
                    let mut dt = Tensor::zeros(tv.shape());
                    for (i, &r) in idx.iter().enumerate() {
                        for d in 0..dim {
                            dt.data_mut()[r * dim + d] += gy.data()[i * dim + d];
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::MeanSqDiff { x, target } => {
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len() as f64;
                    let scale = 2.0 * gy.data()[0] / n;
                    let data: Vec<f64> = xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::MeanSq(x) => {
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len() as f64;
                    let scale = 2.0 * gy.data()[0] / n;
                    let data: Vec<f64> = xv.data().iter().map(|a| scale * a).collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
            }
        }
        Ok(())
    }
}
