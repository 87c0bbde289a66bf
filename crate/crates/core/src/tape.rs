//! Reverse-mode automatic differentiation over tensor operations.
//!
//! A [`Tape`] records a computation as a sequence of primitive tensor ops,
//! evaluating each eagerly as it is recorded. [`Tape::grad`] then walks the
//! record backwards from a scalar output, applying each primitive's
//! vector-Jacobian product by hand-derived formulas.
//!
//! The primitive set is exactly what the forecasting model needs: dense
//! matmul, causal dilated convolution, row softmax, row layer normalization,
//! broadcast add/mul against row or column vectors, and a few elementwise
//! maps. Dropout needs no dedicated primitive: masks enter as constants and
//! flow through `mul`.
//!
//! Gradients follow these conventions at non-smooth points: `relu` and
//! `leaky_relu` use the right derivative at zero, and `sqrt` requires a
//! strictly positive argument.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddScalar { a: usize },
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    Relu { a: usize },
    LeakyRelu { a: usize, slope: f64 },
    Sqrt { a: usize },
    Sum { a: usize },
    RowSoftmax { a: usize },
    LayerNormRows { a: usize, eps: f64 },
    AddBcastRow { a: usize, v: usize },
    MulBcastRow { a: usize, v: usize },
    AddBcastCol { a: usize, v: usize },
    MulBcastCol { a: usize, v: usize },
    CausalConv { x: usize, w: usize, b: usize, dilation: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A recorded computation. Append-only; every op consumes ids the tape
/// produced earlier, so the record is topologically ordered by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    /// Registers an input tensor. Whether it acts as a trainable parameter or
    /// a constant is decided later by which ids are passed to [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    /// Forward value of a recorded node.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, v))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, v))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a.0].value.mul(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, v))
    }

    pub fn scale(&mut self, a: ValueId, factor: f64) -> ValueId {
        let v = self.nodes[a.0].value.scale(factor);
        self.push(Op::Scale { a: a.0, factor }, v)
    }

    pub fn add_scalar(&mut self, a: ValueId, offset: f64) -> ValueId {
        let v = self.nodes[a.0].value.map(|x| x + offset);
        self.push(Op::AddScalar { a: a.0 }, v)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(Op::MatMul { a: a.0, b: b.0 }, v))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        let v = self.nodes[a.0].value.transpose()?;
        Ok(self.push(Op::Transpose { a: a.0 }, v))
    }

    pub fn reshape(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        let v = self.nodes[a.0].value.reshape(shape)?;
        Ok(self.push(Op::Reshape { a: a.0 }, v))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let v = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu { a: a.0 }, v)
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: f64) -> ValueId {
        let v = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu { a: a.0, slope }, v)
    }

    /// Elementwise square root; every input entry must be positive.
    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        if self.nodes[a.0].value.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidArgument(
                "sqrt on the tape needs strictly positive entries".into(),
            ));
        }
        let v = self.nodes[a.0].value.map(fmath::sqrt);
        Ok(self.push(Op::Sqrt { a: a.0 }, v))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = Tensor::from_vec(&[1], vec![self.nodes[a.0].value.sum()]).unwrap();
        self.push(Op::Sum { a: a.0 }, v)
    }

    /// Softmax along each row of a rank-2 tensor, max-shifted for stability.
    pub fn row_softmax(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let hi = row.iter().fold(f64::NEG_INFINITY, |h, &v| h.max(v));
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = fmath::exp(v - hi);
                total += *o;
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let v = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::RowSoftmax { a: a.0 }, v))
    }

    /// Normalizes each row of a rank-2 tensor to zero mean and unit variance
    /// (biased variance estimate, stabilized by `eps`). Learnable gain and
    /// bias are applied by the caller through the broadcast ops.
    pub fn layer_norm_rows(&mut self, a: ValueId, eps: f64) -> Result<ValueId> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        if n == 0 {
            return Err(Error::InvalidArgument("layer norm over empty rows".into()));
        }
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let (mu, sd) = row_moments(row, eps);
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mu) / sd;
            }
        }
        let v = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::LayerNormRows { a: a.0, eps }, v))
    }

    fn bcast_dims(&self, a: usize, v: usize, along_rows: bool, op: &str) -> Result<(usize, usize)> {
        let (m, n) = self.nodes[a].value.dims2()?;
        let vlen = self.nodes[v].value.len();
        let want = if along_rows { n } else { m };
        if self.nodes[v].value.shape().len() != 1 || vlen != want {
            return Err(Error::ShapeMismatch(format!(
                "{op}: [{m}, {n}] against vector of shape {:?}",
                self.nodes[v].value.shape()
            )));
        }
        Ok((m, n))
    }

    /// `out[i][j] = a[i][j] + v[j]`.
    pub fn add_bcast_row(&mut self, a: ValueId, v: ValueId) -> Result<ValueId> {
        let (m, n) = self.bcast_dims(a.0, v.0, true, "add_bcast_row")?;
        let av = self.nodes[a.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] + vv[j];
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::AddBcastRow { a: a.0, v: v.0 }, t))
    }

    /// `out[i][j] = a[i][j] * v[j]`.
    pub fn mul_bcast_row(&mut self, a: ValueId, v: ValueId) -> Result<ValueId> {
        let (m, n) = self.bcast_dims(a.0, v.0, true, "mul_bcast_row")?;
        let av = self.nodes[a.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] * vv[j];
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::MulBcastRow { a: a.0, v: v.0 }, t))
    }

    /// `out[i][j] = a[i][j] + v[i]`.
    pub fn add_bcast_col(&mut self, a: ValueId, v: ValueId) -> Result<ValueId> {
        let (m, n) = self.bcast_dims(a.0, v.0, false, "add_bcast_col")?;
        let av = self.nodes[a.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] + vv[i];
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::AddBcastCol { a: a.0, v: v.0 }, t))
    }

    /// `out[i][j] = a[i][j] * v[i]`.
    pub fn mul_bcast_col(&mut self, a: ValueId, v: ValueId) -> Result<ValueId> {
        let (m, n) = self.bcast_dims(a.0, v.0, false, "mul_bcast_col")?;
        let av = self.nodes[a.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] * vv[i];
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(Op::MulBcastCol { a: a.0, v: v.0 }, t))
    }

    /// Causal dilated 1-D convolution along time.
    ///
    /// `x` is `[c_in, len]`, `w` is `[c_out, c_in, k]`, `b` is `[c_out]`;
    /// the output is `[c_out, len]` with
    /// `out[o][t] = b[o] + sum_{i,j} w[o][i][j] * x[i][t - dilation*j]`,
    /// where indices before the start of the signal read as zero.
    pub fn causal_conv(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        dilation: usize,
    ) -> Result<ValueId> {
        let (c_in, len) = self.nodes[x.0].value.dims2()?;
        let wshape = self.nodes[w.0].value.shape().to_vec();
        let [c_out, wc_in, k] = wshape.as_slice() else {
            return Err(Error::ShapeMismatch(format!(
                "causal_conv kernel must be rank 3, got {wshape:?}"
            )));
        };
        let (c_out, wc_in, k) = (*c_out, *wc_in, *k);
        if wc_in != c_in {
            return Err(Error::ShapeMismatch(format!(
                "causal_conv: input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        if self.nodes[b.0].value.shape() != [c_out] {
            return Err(Error::ShapeMismatch(format!(
                "causal_conv: bias shape {:?} does not match {c_out} output channels",
                self.nodes[b.0].value.shape()
            )));
        }
        if dilation == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "causal_conv needs dilation >= 1 and a nonempty kernel".into(),
            ));
        }

        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; c_out * len];
        for o in 0..c_out {
            let orow = &mut out[o * len..(o + 1) * len];
            orow.fill(bd[o]);
            for i in 0..c_in {
                let xrow = &xd[i * len..(i + 1) * len];
                for j in 0..k {
                    let shift = dilation * j;
                    if shift >= len {
                        break;
                    }
                    let wij = wd[(o * c_in + i) * k + j];
                    if wij == 0.0 {
                        continue;
                    }
                    for t in shift..len {
                        orow[t] += wij * xrow[t - shift];
                    }
                }
            }
        }
        let t = Tensor::from_vec(&[c_out, len], out)?;
        Ok(self.push(Op::CausalConv { x: x.0, w: w.0, b: b.0, dilation }, t))
    }

    /// Reverse-mode gradients of a scalar `output` with respect to `params`.
    /// A param the output does not depend on gets a zero gradient.
    pub fn grad(&self, output: ValueId, params: &[ValueId]) -> Result<Vec<Tensor>> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "grad needs a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed = Tensor::filled(self.nodes[output.0].value.shape(), 1.0);
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }

        Ok(params
            .iter()
            .map(|p| match &grads[p.0] {
                Some(t) => t.clone(),
                None => Tensor::zeros(self.nodes[p.0].value.shape()),
            })
            .collect())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                let da = g.mul(&self.nodes[*b].value).unwrap();
                let db = g.mul(&self.nodes[*a].value).unwrap();
                accum(grads, *a, da);
                accum(grads, *b, db);
            }
            Op::Scale { a, factor } => accum(grads, *a, g.scale(*factor)),
            Op::AddScalar { a } => accum(grads, *a, g.clone()),
            Op::MatMul { a, b } => {
                let bt = self.nodes[*b].value.transpose().unwrap();
                let at = self.nodes[*a].value.transpose().unwrap();
                accum(grads, *a, g.matmul(&bt).unwrap());
                accum(grads, *b, at.matmul(g).unwrap());
            }
            Op::Transpose { a } => accum(grads, *a, g.transpose().unwrap()),
            Op::Reshape { a } => {
                accum(grads, *a, g.reshape(self.nodes[*a].value.shape()).unwrap());
            }
            Op::Relu { a } => {
                let x = &self.nodes[*a].value;
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                accum(grads, *a, d);
            }
            Op::LeakyRelu { a, slope } => {
                let x = &self.nodes[*a].value;
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *dv *= slope;
                    }
                }
                accum(grads, *a, d);
            }
            Op::Sqrt { a } => {
                let y = &self.nodes[i].value;
                let mut d = g.clone();
                for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= 0.5 / yv;
                }
                accum(grads, *a, d);
            }
            Op::Sum { a } => {
                accum(grads, *a, Tensor::filled(self.nodes[*a].value.shape(), g.data()[0]));
            }
            Op::RowSoftmax { a } => {
                let y = &self.nodes[i].value;
                let (m, n) = y.dims2().unwrap();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let yrow = &y.data()[r * n..(r + 1) * n];
                    let grow = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        d[r * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                accum(grads, *a, Tensor::from_vec(&[m, n], d).unwrap());
            }
            Op::LayerNormRows { a, eps } => {
                let x = &self.nodes[*a].value;
                let y = &self.nodes[i].value;
                let (m, n) = y.dims2().unwrap();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let xrow = &x.data()[r * n..(r + 1) * n];
                    let yrow = &y.data()[r * n..(r + 1) * n];
                    let grow = &g.data()[r * n..(r + 1) * n];
                    let (_, sd) = row_moments(xrow, *eps);
                    let gmean: f64 = grow.iter().sum::<f64>() / n as f64;
                    let gymean: f64 =
                        grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / n as f64;
                    for j in 0..n {
                        d[r * n + j] = (grow[j] - gmean - yrow[j] * gymean) / sd;
                    }
                }
                accum(grads, *a, Tensor::from_vec(&[m, n], d).unwrap());
            }
            Op::AddBcastRow { a, v } => {
                let (m, n) = g.dims2().unwrap();
                accum(grads, *a, g.clone());
                let mut dv = vec![0.0; n];
                for r in 0..m {
                    for j in 0..n {
                        dv[j] += g.data()[r * n + j];
                    }
                }
                accum(grads, *v, Tensor::from_vec(&[n], dv).unwrap());
            }
            Op::MulBcastRow { a, v } => {
                let (m, n) = g.dims2().unwrap();
                let vv = self.nodes[*v].value.data();
                let av = self.nodes[*a].value.data();
                let mut da = vec![0.0; m * n];
                let mut dv = vec![0.0; n];
                for r in 0..m {
                    for j in 0..n {
                        let gij = g.data()[r * n + j];
                        da[r * n + j] = gij * vv[j];
                        dv[j] += gij * av[r * n + j];
                    }
                }
                accum(grads, *a, Tensor::from_vec(&[m, n], da).unwrap());
                accum(grads, *v, Tensor::from_vec(&[n], dv).unwrap());
            }
            Op::AddBcastCol { a, v } => {
                let (m, n) = g.dims2().unwrap();
                accum(grads, *a, g.clone());
                let mut dv = vec![0.0; m];
                for (r, d) in dv.iter_mut().enumerate() {
                    *d = g.data()[r * n..(r + 1) * n].iter().sum();
                }
                accum(grads, *v, Tensor::from_vec(&[m], dv).unwrap());
            }
            Op::MulBcastCol { a, v } => {
                let (m, n) = g.dims2().unwrap();
                let vv = self.nodes[*v].value.data();
                let av = self.nodes[*a].value.data();
                let mut da = vec![0.0; m * n];
                let mut dv = vec![0.0; m];
                for r in 0..m {
                    for j in 0..n {
                        let gij = g.data()[r * n + j];
                        da[r * n + j] = gij * vv[r];
                        dv[r] += gij * av[r * n + j];
                    }
                }
                accum(grads, *a, Tensor::from_vec(&[m, n], da).unwrap());
                accum(grads, *v, Tensor::from_vec(&[m], dv).unwrap());
            }
            Op::CausalConv { x, w, b, dilation } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (c_in, len) = xv.dims2().unwrap();
                let c_out = wv.shape()[0];
                let k = wv.shape()[2];
                let d = *dilation;

                let mut dx = vec![0.0; c_in * len];
                let mut dw = vec![0.0; c_out * c_in * k];
                let mut db = vec![0.0; c_out];
                for o in 0..c_out {
                    let grow = &g.data()[o * len..(o + 1) * len];
                    db[o] = grow.iter().sum();
                    for i in 0..c_in {
                        let xrow = &xv.data()[i * len..(i + 1) * len];
                        let dxrow = &mut dx[i * len..(i + 1) * len];
                        for j in 0..k {
                            let shift = d * j;
                            if shift >= len {
                                break;
                            }
                            let wij = wv.data()[(o * c_in + i) * k + j];
                            let mut dwij = 0.0;
                            for t in shift..len {
                                dxrow[t - shift] += wij * grow[t];
                                dwij += grow[t] * xrow[t - shift];
                            }
                            dw[(o * c_in + i) * k + j] += dwij;
                        }
                    }
                }
                accum(grads, *x, Tensor::from_vec(&[c_in, len], dx).unwrap());
                accum(grads, *w, Tensor::from_vec(&[c_out, c_in, k], dw).unwrap());
                accum(grads, *b, Tensor::from_vec(&[c_out], db).unwrap());
            }
        }
    }
}

/// Mean and stabilized standard deviation of one row.
fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, fmath::sqrt(var + eps))
}

fn accum(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
    match &mut grads[idx] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
