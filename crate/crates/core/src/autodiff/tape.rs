use super::kernels::{self, ConvGeometry};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    GatherLast { x: Var, indices: Vec<usize> },
    Reshape(Var),
    TransposeLast2(Var),
    Conv1d { x: Var, w: Var, geom: ConvGeometry },
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode gradient graph.
///
/// Every operation appends a node holding its output value and the rule to
/// differentiate it. Nodes only ever refer to earlier nodes, so the node list
/// is already in topological order and [`Tape::backward`] is one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for each parameter leaf recorded on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_ref().map(|g| (id, g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// An input that receives gradient but is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let requires_grad = p.trainable();
        self.push(p.value().clone(), Op::Param(id), requires_grad)
    }

    /// Copy of `v` with gradient flow cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape =
            kernels::broadcast_shape(sa, sb).ok_or_else(|| Error::dim(name, sa, sb))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = kernels::broadcast_index(&out_shape, sa);
            let ib = kernels::broadcast_index(&out_shape, sb);
            ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Ok((Tensor::from_parts(out_shape, data), self.rg(&[a, b])))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        self.unary(x, |v| v + offset, Op::Offset(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Matrix product of two 2-D values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Applies a `[k, n]` weight to the last axis of `x[..., k]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().expect("non-empty shape");
        let rows = shape.iter().product::<usize>() / k;
        let flat = self.reshape(x, &[rows, k])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = bias {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(y)[1];
        self.reshape(y, &out_shape)
    }

    /// Batched matrix product `[B, m, k] × [B, k, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bsz * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bsz {
            kernels::matmul_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![bsz, m, n], out),
            Op::BatchMatMul(a, b),
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if !src.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let data = kernels::softmax_rows(src.data(), src.last_dim());
        let t = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Log-softmax over the last axis, computed with log-sum-exp.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if !src.all_finite() {
            return Err(Error::Numeric(
                "log_softmax input contains non-finite values".into(),
            ));
        }
        let data = kernels::log_softmax_rows(src.data(), src.last_dim());
        let t = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    /// Normalizes the last axis to zero mean and unit population variance.
    pub fn normalize_last(&mut self, x: Var, eps: f64) -> Var {
        let src = self.value(x);
        let n = src.last_dim();
        let mut out = vec![0.0; src.numel()];
        let mut inv_std = Vec::with_capacity(src.numel() / n);
        for (row, dst) in src.data().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::from_parts(src.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        self.push(t, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Layer normalization over the last axis followed by a learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_last(x, eps);
        let scaled = self.mul(n, gain)?;
        self.add(scaled, bias)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let s = src.data().iter().sum::<f64>() / src.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Sum over `axis`, keeping it as a size-1 axis.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", &shape, &[axis]));
        }
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::SumAxis { x, axis },
            rg,
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of an empty list"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", &base, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("narrow", &shape, &[axis, start, len]));
        }
        let (outer, full, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Narrow { x, axis, start },
            rg,
        ))
    }

    /// Picks index `i` of `axis` and drops that axis.
    pub fn select(&mut self, x: Var, axis: usize, i: usize) -> Result<Var> {
        let n = self.narrow(x, axis, i, 1)?;
        let mut shape = self.shape(n).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.reshape(n, &shape)
    }

    /// Gathers rows (leading-axis slices) by index; indices may repeat.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = shape[0];
        if indices.is_empty() || indices.iter().any(|&i| i >= rows) {
            return Err(Error::contract(format!(
                "index_select indices must be non-empty and < {rows}"
            )));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// `out[r] = x[r, indices[r]]` over the rows of the last axis.
    pub fn gather_last(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        let rows = shape.iter().product::<usize>() / n;
        if indices.len() != rows {
            return Err(Error::dim("gather_last", &shape, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::contract(format!(
                "class index {bad} out of range for {n} classes"
            )));
        }
        let src = self.value(x).data();
        let out: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| src[r * n + i])
            .collect();
        let out_shape = if shape.len() > 1 {
            shape[..shape.len() - 1].to_vec()
        } else {
            vec![1]
        };
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::GatherLast {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("transpose", &shape, &[2]));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_blocks(self.value(x).data(), r, c);
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape.swap(n - 2, n - 1);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::TransposeLast2(x),
            rg,
        ))
    }

    /// Channels-last 1-D cross-correlation.
    ///
    /// `x` is `[B, T, Cin]`, `w` is `[K, Cin, Cout]`; the output is
    /// `[B, Tout, Cout]` with `Tout = (T + 2·padding − K) / stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(Error::dim("conv1d", sx, sw));
        }
        let geom = ConvGeometry {
            batch: sx[0],
            len_in: sx[1],
            c_in: sx[2],
            c_out: sw[2],
            kernel: sw[0],
            stride,
            padding,
        };
        geom.check()?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let rows = geom.batch * geom.len_out();
        let mut out = vec![0.0; rows * geom.c_out];
        kernels::matmul_acc(
            &cols,
            self.value(w).data(),
            &mut out,
            rows,
            geom.patch_len(),
            geom.c_out,
        );
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            Tensor::from_parts(vec![geom.batch, geom.len_out(), geom.c_out], out),
            Op::Conv1d { x, w, geom },
            rg,
        ))
    }

    /// Forward value `replacement`, backward identity onto `x`.
    pub fn straight_through(&mut self, x: Var, replacement: Tensor) -> Result<Var> {
        if replacement.shape() != self.shape(x) {
            return Err(Error::dim(
                "straight_through",
                self.shape(x),
                replacement.shape(),
            ));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(replacement, Op::StraightThrough(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) if n.requires_grad => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Grads { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc_broadcast(*a, out.shape(), gd.to_vec(), grads);
                self.acc_broadcast(*b, out.shape(), gd.to_vec(), grads);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(*a, out.shape(), gd.to_vec(), grads);
                self.acc_broadcast(*b, out.shape(), gd.iter().map(|v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (va, vb) = self.broadcast_operands(*a, *b, out.shape());
                let ga = gd.iter().zip(&vb).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(&va).map(|(g, x)| g * x).collect();
                self.acc_broadcast(*a, out.shape(), ga, grads);
                self.acc_broadcast(*b, out.shape(), gb, grads);
            }
            Op::Div(a, b) => {
                let (va, vb) = self.broadcast_operands(*a, *b, out.shape());
                let ga = gd.iter().zip(&vb).map(|(g, y)| g / y).collect();
                let gb = gd
                    .iter()
                    .zip(va.iter().zip(&vb))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.acc_broadcast(*a, out.shape(), ga, grads);
                self.acc_broadcast(*b, out.shape(), gb, grads);
            }
            Op::Scale(x, f) => self.acc(*x, gd.iter().map(|g| g * f).collect(), grads),
            Op::Offset(x) => self.acc(*x, gd.to_vec(), grads),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_grad_lhs(gd, self.value(*b).data(), &mut da, m, k, n);
                    self.acc(*a, da, grads);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_grad_rhs(self.value(*a).data(), gd, &mut db, m, k, n);
                    self.acc(*b, db, grads);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; bsz * m * k];
                    for i in 0..bsz {
                        kernels::matmul_grad_lhs(
                            &gd[i * m * n..(i + 1) * m * n],
                            &vb[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    self.acc(*a, da, grads);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; bsz * k * n];
                    for i in 0..bsz {
                        kernels::matmul_grad_rhs(
                            &va[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.acc(*b, db, grads);
                }
            }
            Op::Tanh(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Gelu(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &v)| g * kernels::gelu_grad(v))
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                self.acc(*x, d, grads);
            }
            Op::Log(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| g / v)
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Sqrt(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * 0.5 / y)
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Softmax(x) => {
                let n = out.last_dim();
                let mut d = vec![0.0; gd.len()];
                for ((y, gr), dst) in out
                    .data()
                    .chunks_exact(n)
                    .zip(gd.chunks_exact(n))
                    .zip(d.chunks_exact_mut(n))
                {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yi), gi) in dst.iter_mut().zip(y).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                self.acc(*x, d, grads);
            }
            Op::LogSoftmax(x) => {
                let n = out.last_dim();
                let mut d = vec![0.0; gd.len()];
                for ((ls, gr), dst) in out
                    .data()
                    .chunks_exact(n)
                    .zip(gd.chunks_exact(n))
                    .zip(d.chunks_exact_mut(n))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, l), gi) in dst.iter_mut().zip(ls).zip(gr) {
                        *o = gi - l.exp() * total;
                    }
                }
                self.acc(*x, d, grads);
            }
            Op::LayerNorm { x, inv_std } => {
                let n = out.last_dim();
                let mut d = vec![0.0; gd.len()];
                for (((y, gr), dst), is) in out
                    .data()
                    .chunks_exact(n)
                    .zip(gd.chunks_exact(n))
                    .zip(d.chunks_exact_mut(n))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, yi), gi) in dst.iter_mut().zip(y).zip(gr) {
                        *o = is * (gi - mean_g - yi * mean_gy);
                    }
                }
                self.acc(*x, d, grads);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                self.acc(*x, vec![gd[0]; n], grads);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                self.acc(*x, vec![gd[0] / n as f64; n], grads);
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = kernels::split_axis(shape, *axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        d[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.acc(*x, d, grads);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::split_axis(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.requires_grad(*v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[from..from + len * inner]);
                        }
                        self.acc(*v, d, grads);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, full, inner) = kernels::split_axis(shape, *axis);
                let len = out.shape()[*axis];
                let mut d = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    d[to..to + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.acc(*x, d, grads);
            }
            Op::IndexSelect { x, indices } => {
                let src = self.value(*x);
                let inner = src.numel() / src.shape()[0];
                let mut d = vec![0.0; src.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for (dst, s) in d[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(&gd[r * inner..(r + 1) * inner])
                    {
                        *dst += s;
                    }
                }
                self.acc(*x, d, grads);
            }
            Op::GatherLast { x, indices } => {
                let src = self.value(*x);
                let n = src.last_dim();
                let mut d = vec![0.0; src.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    d[r * n + i] += gd[r];
                }
                self.acc(*x, d, grads);
            }
            Op::Reshape(x) => self.acc(*x, gd.to_vec(), grads),
            Op::TransposeLast2(x) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                self.acc(*x, transpose_blocks(gd, r, c), grads);
            }
            Op::Conv1d { x, w, geom } => {
                let rows = geom.batch * geom.len_out();
                let plen = geom.patch_len();
                if self.requires_grad(*w) {
                    let cols = kernels::im2col(self.value(*x).data(), geom);
                    let mut dw = vec![0.0; plen * geom.c_out];
                    kernels::matmul_grad_rhs(&cols, gd, &mut dw, rows, plen, geom.c_out);
                    self.acc(*w, dw, grads);
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![0.0; rows * plen];
                    kernels::matmul_grad_lhs(
                        gd,
                        self.value(*w).data(),
                        &mut dcols,
                        rows,
                        plen,
                        geom.c_out,
                    );
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    kernels::col2im_acc(&dcols, geom, &mut dx);
                    self.acc(*x, dx, grads);
                }
            }
            Op::StraightThrough(x) => self.acc(*x, gd.to_vec(), grads),
        }
    }

    fn broadcast_operands(&self, a: Var, b: Var, out: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let expand = |v: Var| -> Vec<f64> {
            let t = self.value(v);
            if t.shape() == out {
                t.data().to_vec()
            } else {
                kernels::broadcast_index(out, t.shape())
                    .into_iter()
                    .map(|i| t.data()[i])
                    .collect()
            }
        };
        (expand(a), expand(b))
    }

    fn acc_broadcast(&self, v: Var, out: &[usize], g: Vec<f64>, grads: &mut [Option<Tensor>]) {
        if !self.requires_grad(v) {
            return;
        }
        let shape = self.shape(v);
        if shape == out {
            self.acc(v, g, grads);
        } else {
            let index = kernels::broadcast_index(out, shape);
            let reduced = kernels::reduce_broadcast(&g, &index, self.value(v).numel());
            self.acc(v, reduced, grads);
        }
    }

    fn acc(&self, v: Var, g: Vec<f64>, grads: &mut [Option<Tensor>]) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                    *e += x;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), g));
            }
        }
    }
}

/// Transposes each trailing `r×c` block.
fn transpose_blocks(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; src.len()];
    for (s, d) in src.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}
