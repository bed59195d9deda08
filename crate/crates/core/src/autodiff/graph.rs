//! Tape of forward operations and the reverse sweep over it.
//!
//! Every operation appends a node holding its output value. Nodes are only
//! ever appended, so node ids form a topological order and the backward pass
//! is a single reverse scan.

use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    L2NormalizeRows(Var, Option<f64>),
    ConcatRows(Var, Var),
    Reshape(Var),
    /// Keeps the unrolled input patches when a gradient will be needed.
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        patches: Option<Vec<f64>>,
    },
    MaxPool2(Var),
    LogSoftmaxRows(Var, Option<Var>),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn as_matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (as_matrix(av), as_matrix(bv)) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(mismatch("matmul", &[av.shape(), bv.shape()])),
        };
        debug_assert_eq!(k, k2);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let (m, n) = as_matrix(av).ok_or_else(|| mismatch("transpose", &[av.shape()]))?;
        let t = Tensor::new(vec![n, m], transpose_raw(av.data(), m, n))?;
        Ok(self.push_op(t, Op::Transpose(a), &[a]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, &[av.shape(), bv.shape()]));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.row_len();
        if av.shape().len() < 2 || bv.shape() != [n] {
            return Err(mismatch("add_row_bias", &[av.shape(), bv.shape()]));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push_op(t, Op::AddRowBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push_op(t, Op::Scale(a, c), &[a])
    }

    /// Multiplies every entry of `a` by the single value held in `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(mismatch("scale_by", &[self.shape(a), sv.shape()]));
        }
        let c = sv.item();
        let t = self.map(a, |x| x * c);
        Ok(self.push_op(t, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x + c);
        self.push_op(t, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push_op(t, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(i) = self.value(a).data().iter().position(|x| *x <= 0.0) {
            return Err(AutodiffError::Domain {
                op: "log",
                index: i,
                value: self.value(a).data()[i],
            });
        }
        let t = self.map(a, f64::ln);
        Ok(self.push_op(t, Op::Log(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push_op(t, Op::Relu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_op(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(mismatch("mean", &[av.shape()]));
        }
        let t = Tensor::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        Ok(self.push_op(t, Op::Mean(a), &[a]))
    }

    /// Scales each row to unit Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.normalize_impl(a, None)
    }

    /// Like [`Graph::l2_normalize_rows`] but divides by `max(norm, floor)`,
    /// so degenerate rows map to (near) zero instead of failing.
    pub fn l2_normalize_rows_clamped(&mut self, a: Var, floor: f64) -> Result<Var, AutodiffError> {
        self.normalize_impl(a, Some(floor))
    }

    fn normalize_impl(&mut self, a: Var, floor: Option<f64>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.shape().is_empty() {
            return Err(mismatch("l2_normalize", &[av.shape()]));
        }
        let n = if av.shape().len() == 1 { av.len() } else { av.row_len() };
        let mut data = av.data().to_vec();
        for (r, row) in data.chunks_mut(n.max(1)).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = match floor {
                Some(f) => norm.max(f),
                None if norm == 0.0 => {
                    return Err(AutodiffError::DegenerateRow {
                        op: "l2_normalize",
                        row: r,
                    })
                }
                None => norm,
            };
            row.iter_mut().for_each(|x| *x /= denom);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push_op(t, Op::L2NormalizeRows(a, floor), &[a]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() < 2 || av.shape().len() != bv.shape().len() || av.shape()[1..] != bv.shape()[1..] {
            return Err(mismatch("concat_rows", &[av.shape(), bv.shape()]));
        }
        let mut shape = av.shape().to_vec();
        shape[0] += bv.shape()[0];
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let t = Tensor::new(shape, data)?;
        Ok(self.push_op(t, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push_op(t, Op::Reshape(a), &[a]))
    }

    /// Stride-1 "same" convolution.
    ///
    /// `input` is `[batch, height, width, in_ch]`, `kernel` is
    /// `[kh, kw, in_ch, out_ch]` with odd kh/kw, `bias` is `[out_ch]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (iv, kv, bv) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = match (iv.shape(), kv.shape(), bv.shape()) {
            (&[b, h, w, ci], &[kh, kw, ki, co], &[bo]) if ci == ki && co == bo && kh % 2 == 1 && kw % 2 == 1 => {
                ConvGeom {
                    b,
                    h,
                    w,
                    ci,
                    kh,
                    kw,
                    co,
                }
            }
            _ => return Err(mismatch("conv2d", &[iv.shape(), kv.shape(), bv.shape()])),
        };
        let patches = geom.unroll(iv.data());
        let out = conv2d_forward(&geom, &patches, kv.data(), bv.data());
        let t = Tensor::new(vec![geom.b, geom.h, geom.w, geom.co], out)?;
        let keep = [kernel, bias].iter().any(|v| self.nodes[v.0].requires_grad);
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            patches: keep.then_some(patches),
        };
        Ok(self.push_op(t, op, &[input, kernel, bias]))
    }

    /// 2×2 max-pooling with stride 2 over `[batch, height, width, ch]`; odd edges are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let &[b, h, w, c] = av.shape() else {
            return Err(mismatch("max_pool2", &[av.shape()]));
        };
        let (oh, ow) = (h / 2, w / 2);
        let x = av.data();
        let mut out = vec![0.0; b * oh * ow * c];
        for (o, idx) in out.iter_mut().zip(pool_argmax(x, b, h, w, c)) {
            *o = x[idx];
        }
        let t = Tensor::new(vec![b, oh, ow, c], out)?;
        Ok(self.push_op(t, Op::MaxPool2(a), &[a]))
    }

    /// Row-wise log-softmax of an `m × n` matrix. With `extra`, a column
    /// holding the single value of `extra` is appended before normalizing,
    /// giving an `m × (n + 1)` result.
    pub fn log_softmax_rows(&mut self, a: Var, extra: Option<Var>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let (m, n) = as_matrix(av).ok_or_else(|| mismatch("log_softmax", &[av.shape()]))?;
        let extra_val = match extra {
            Some(e) => {
                let ev = self.value(e);
                if ev.len() != 1 {
                    return Err(mismatch("log_softmax", &[av.shape(), ev.shape()]));
                }
                Some(ev.item())
            }
            None => None,
        };
        let width = n + usize::from(extra_val.is_some());
        if width == 0 {
            return Err(mismatch("log_softmax", &[av.shape()]));
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            let row = &av.data()[i * n..(i + 1) * n];
            let start = out.len();
            out.extend_from_slice(row);
            out.extend(extra_val);
            let lse = log_sum_exp(&out[start..]);
            out[start..].iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::new(vec![m, width], out)?;
        let mut parents = vec![a];
        parents.extend(extra);
        Ok(self.push_op(t, Op::LogSoftmaxRows(a, extra), &parents))
    }

    /// Selects `a[i, index[i]]` for every row `i` of an `m × n` matrix.
    pub fn pick(&mut self, a: Var, index: Vec<usize>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let (m, n) = as_matrix(av).ok_or_else(|| mismatch("pick", &[av.shape()]))?;
        if index.len() != m || index.iter().any(|&j| j >= n) {
            return Err(mismatch("pick", &[av.shape(), &[index.len()]]));
        }
        let data = index.iter().enumerate().map(|(i, &j)| av.data()[i * n + j]).collect();
        let t = Tensor::new(vec![m], data)?;
        Ok(self.push_op(t, Op::Pick(a, index), &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, pg) in self.local_grads(node, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).expect("grad shape");
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(val(*a)).expect("matrix");
                let n = val(*b).shape()[1];
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                // grad · bᵀ and aᵀ · grad through strides
                gemm((m, n, k), gd, (n, 1), val(*b).data(), (1, n), &mut ga);
                gemm((k, m, n), val(*a).data(), (1, k), gd, (n, 1), &mut gb);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(val(*a)).expect("matrix");
                vec![(*a, like(*a, transpose_raw(gd, n, m)))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, gd.iter().map(|x| -x).collect()))],
            Op::AddRowBias(a, b) => {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                vec![(*a, g.clone()), (*b, like(*b, gb))]
            }
            Op::Mul(a, b) => {
                let ga = gd.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                let gb = gd.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Scale(a, c) => vec![(*a, like(*a, gd.iter().map(|x| x * c).collect()))],
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                let gs: f64 = gd.iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                vec![
                    (*a, like(*a, gd.iter().map(|x| x * c).collect())),
                    (*s, like(*s, vec![gs])),
                ]
            }
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Exp(a) => {
                let data = gd.iter().zip(node.value.data()).map(|(x, y)| x * y).collect();
                vec![(*a, like(*a, data))]
            }
            Op::Log(a) => {
                let data = gd.iter().zip(val(*a).data()).map(|(x, y)| x / y).collect();
                vec![(*a, like(*a, data))]
            }
            Op::Relu(a) => {
                let data = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                    .collect();
                vec![(*a, like(*a, data))]
            }
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), gd[0]))],
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                vec![(*a, Tensor::filled(val(*a).shape(), gd[0] / n))]
            }
            Op::L2NormalizeRows(a, floor) => {
                let x = val(*a);
                let n = if x.shape().len() == 1 { x.len() } else { x.row_len() };
                let y = node.value.data();
                let mut out = vec![0.0; x.len()];
                for r in 0..x.len() / n.max(1) {
                    let span = r * n..(r + 1) * n;
                    let xr = &x.data()[span.clone()];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (&y[span.clone()], &gd[span.clone()]);
                    let o = &mut out[span];
                    if floor.is_some_and(|f| norm <= f) {
                        let f = floor.unwrap_or(1.0);
                        o.iter_mut().zip(gr).for_each(|(o, g)| *o = g / f);
                    } else {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, g), yv) in o.iter_mut().zip(gr).zip(yr) {
                            *o = (g - yv * dot) / norm;
                        }
                    }
                }
                vec![(*a, like(*a, out))]
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).len();
                vec![
                    (*a, like(*a, gd[..split].to_vec())),
                    (*b, like(*b, gd[split..].to_vec())),
                ]
            }
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::Conv2d {
                input,
                kernel,
                bias,
                patches,
            } => {
                let (iv, kv) = (val(*input), val(*kernel));
                let s = iv.shape();
                let ks = kv.shape();
                let geom = ConvGeom {
                    b: s[0],
                    h: s[1],
                    w: s[2],
                    ci: s[3],
                    kh: ks[0],
                    kw: ks[1],
                    co: ks[3],
                };
                let mut out = Vec::with_capacity(3);
                if self.nodes[input.0].requires_grad {
                    out.push((*input, like(*input, conv2d_input_grad(&geom, kv.data(), gd))));
                }
                let unrolled;
                let patches = match patches {
                    Some(p) => p,
                    None => {
                        unrolled = geom.unroll(iv.data());
                        &unrolled
                    }
                };
                let (gk, gb) = conv2d_param_grads(&geom, patches, gd);
                out.push((*kernel, like(*kernel, gk)));
                out.push((*bias, like(*bias, gb)));
                out
            }
            Op::MaxPool2(a) => {
                let x = val(*a);
                let &[b, h, w, c] = x.shape() else { unreachable!() };
                let mut out = vec![0.0; x.len()];
                for (gv, idx) in gd.iter().zip(pool_argmax(x.data(), b, h, w, c)) {
                    out[idx] += gv;
                }
                vec![(*a, like(*a, out))]
            }
            Op::LogSoftmaxRows(a, extra) => {
                let (m, n) = as_matrix(val(*a)).expect("matrix");
                let width = node.value.shape()[1];
                let mut ga = vec![0.0; m * n];
                let mut ge = 0.0;
                for i in 0..m {
                    let lp = &node.value.data()[i * width..(i + 1) * width];
                    let gr = &gd[i * width..(i + 1) * width];
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        ga[i * n + j] = gr[j] - lp[j].exp() * total;
                    }
                    if extra.is_some() {
                        ge += gr[n] - lp[n].exp() * total;
                    }
                }
                let mut out = vec![(*a, like(*a, ga))];
                if let Some(e) = extra {
                    out.push((*e, like(*e, vec![ge])));
                }
                out
            }
            Op::Pick(a, index) => {
                let n = val(*a).shape()[1];
                let mut out = vec![0.0; val(*a).len()];
                for (i, (&j, gv)) in index.iter().zip(gd).enumerate() {
                    out[i * n + j] = *gv;
                }
                vec![(*a, like(*a, out))]
            }
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `out = a · b` for an `m × k` by `k × n` product; operands are given with
/// their (row, column) strides.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
) {
    let reach = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= reach(m, k, rsa, csa) && b.len() >= reach(k, n, rsb, csb) && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertion above keeps every strided access in bounds, and
    // `out` is a distinct mutable slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm((m, k, n), a, (k, 1), b, (n, 1), &mut out);
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
}

impl ConvGeom {
    fn pixels(&self) -> usize {
        self.b * self.h * self.w
    }

    /// Patch width: one row of the unrolled input per output pixel.
    fn patch(&self) -> usize {
        self.kh * self.kw * self.ci
    }

    /// Calls `f(out_pixel, in_pixel, tap, taps)` for every run of in-bounds
    /// taps along one kernel row: `taps` horizontally adjacent input pixels
    /// starting at `in_pixel` feed kernel taps `tap..tap + taps`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for n in 0..self.b {
            for y in 0..self.h {
                for x in 0..self.w {
                    let opix = (n * self.h + y) * self.w + x;
                    // kernel columns whose input column lies inside the image
                    let kx0 = pw.saturating_sub(x);
                    let kx1 = self.kw.min(self.w + pw - x);
                    for ky in 0..self.kh {
                        let iy = y + ky;
                        if iy < ph || iy - ph >= self.h {
                            continue;
                        }
                        let ipix = (n * self.h + iy - ph) * self.w + x + kx0 - pw;
                        f(opix, ipix, ky * self.kw + kx0, kx1 - kx0);
                    }
                }
            }
        }
    }

    /// `pixels × patch` matrix of input patches, zero where the kernel leaves the image.
    fn unroll(&self, input: &[f64]) -> Vec<f64> {
        let (ci, patch) = (self.ci, self.patch());
        let mut cols = vec![0.0; self.pixels() * patch];
        self.for_each_run(|opix, ipix, tap, taps| {
            let dst = opix * patch + tap * ci;
            cols[dst..dst + taps * ci].copy_from_slice(&input[ipix * ci..(ipix + taps) * ci]);
        });
        cols
    }
}

fn conv2d_forward(g: &ConvGeom, patches: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.pixels() * g.co];
    gemm(
        (g.pixels(), g.patch(), g.co),
        patches,
        (g.patch(), 1),
        kernel,
        (g.co, 1),
        &mut out,
    );
    for pix in out.chunks_mut(g.co) {
        for (o, b) in pix.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

fn conv2d_input_grad(g: &ConvGeom, kernel: &[f64], grad: &[f64]) -> Vec<f64> {
    let (pixels, patch, ci) = (g.pixels(), g.patch(), g.ci);
    let mut gcols = vec![0.0; pixels * patch];
    gemm((pixels, g.co, patch), grad, (g.co, 1), kernel, (1, g.co), &mut gcols);
    let mut gi = vec![0.0; pixels * ci];
    g.for_each_run(|opix, ipix, tap, taps| {
        let src = opix * patch + tap * ci;
        for (acc, v) in gi[ipix * ci..(ipix + taps) * ci]
            .iter_mut()
            .zip(&gcols[src..src + taps * ci])
        {
            *acc += v;
        }
    });
    gi
}

fn conv2d_param_grads(g: &ConvGeom, patches: &[f64], grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (pixels, patch) = (g.pixels(), g.patch());
    let mut gk = vec![0.0; patch * g.co];
    gemm((patch, pixels, g.co), patches, (1, patch), grad, (g.co, 1), &mut gk);
    let mut gb = vec![0.0; g.co];
    for pix in grad.chunks(g.co) {
        for (acc, v) in gb.iter_mut().zip(pix) {
            *acc += v;
        }
    }
    (gk, gb)
}

/// Flat input index of the maximum for every pooled output, first max on ties.
fn pool_argmax(x: &[f64], b: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * oh * ow * c);
    for n in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut best = ((n * h + 2 * y) * w + 2 * xo) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((n * h + 2 * y + dy) * w + 2 * xo + dx) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    out
}
