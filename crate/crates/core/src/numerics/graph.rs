//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records primitive operations in execution order, so the node
//! list is topologically sorted by construction. [`Graph::backward`] walks it
//! in reverse from a scalar seed and accumulates gradients into the slots of
//! the leaf tensors.
//!
//! ```
//! use hclm_core::numerics::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let theta = g.leaf(Tensor::vector(vec![3.0, 4.0]));
//! let sq = g.square(theta);
//! let f = g.sum(sq);
//! g.backward(f).unwrap();
//! assert_eq!(g.grad(theta).unwrap(), vec![6.0, 8.0]);
//! ```

use std::cell::RefCell;

use super::linalg::{covariance_with_centered, SpdEigen};
use super::tensor::{matmul_values, transpose_values, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxLast(Var),
    LogSoftmaxLast(Var),
    Covariance { input: Var, centered: Vec<f64> },
    AddIdentity(Var),
    LogDetSpd { input: Var, inverse: Vec<f64> },
    Trace(Var),
    Slice { src: Var, offset: usize },
    Reshape(Var),
    Bmm(Var, Var),
    MeanAxis1(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of recorded operations. Confined to one thread.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with(a, |t| {
            let data = t.data().iter().map(|&x| f(x)).collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        });
        let needs = self.needs(&[a]);
        self.push(value, op, needs)
    }

    /// Differentiable input; its gradient slot is filled by [`Graph::backward`].
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input treated as constant by differentiation.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        let mut t = self.with(v, Tensor::clone);
        t.zero_grad();
        t
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.with(v, |t| t.shape().to_vec())
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.with(v, Tensor::item)
    }

    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        self.with(v, |t| t.grad().map(<[f64]>::to_vec))
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.value.zero_grad();
        }
    }

    fn binary_same_shape(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.shape() != tb.shape() {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                ));
            }
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// `a[r x c] + b[c]` broadcast over rows.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (r, c) = ta.require_matrix("add_row")?;
            if tb.numel() != c {
                return Err(Error::shape(
                    "add_row",
                    format!("row vector has {} entries, matrix has {c} columns", tb.numel()),
                ));
            }
            let mut data = ta.data().to_vec();
            for i in 0..r {
                for (x, y) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                    *x += y;
                }
            }
            Tensor::new(vec![r, c], data)?
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), needs))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = ta.require_matrix("matmul")?;
            let (k2, n) = tb.require_matrix("matmul")?;
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("inner extents differ: {m}x{k} times {k2}x{n}"),
                ));
            }
            Tensor::new(vec![m, n], matmul_values(ta.data(), tb.data(), m, k, n))?
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// Swaps the last two axes of a matrix or a batch of matrices.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |t| -> Result<Tensor> {
            let s = t.shape();
            match s.len() {
                2 => Tensor::new(vec![s[1], s[0]], transpose_values(t.data(), s[0], s[1])),
                3 => {
                    let (n, r, c) = (s[0], s[1], s[2]);
                    let data = (0..n)
                        .flat_map(|b| transpose_values(&t.data()[b * r * c..(b + 1) * r * c], r, c))
                        .collect();
                    Tensor::new(vec![n, c, r], data)
                }
                _ => Err(Error::shape("transpose", format!("rank {} unsupported", s.len()))),
            }
        })?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::Transpose(a), needs))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.with(a, |t| t.data().iter().sum());
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = self.with(a, |t| t.data().iter().sum::<f64>() / t.numel() as f64);
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Sum of elementwise products, `<a, b>`.
    pub fn inner(&self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    fn rowwise(&self, a: Var, op: Op, f: impl Fn(&[f64], &mut [f64])) -> Var {
        let value = self.with(a, |t| {
            let c = last_dim(t);
            let mut out = vec![0.0; t.numel()];
            for (src, dst) in t.data().chunks(c).zip(out.chunks_mut(c)) {
                f(src, dst);
            }
            Tensor::new(t.shape().to_vec(), out).expect("same shape")
        });
        let needs = self.needs(&[a]);
        self.push(value, op, needs)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        self.rowwise(a, Op::SoftmaxLast(a), |src, dst| {
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - m).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, a: Var) -> Var {
        self.rowwise(a, Op::LogSoftmaxLast(a), |src, dst| {
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + src.iter().map(|&s| (s - m).exp()).sum::<f64>().ln();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        })
    }

    /// Empirical covariance `(Z - mean)^T (Z - mean) / (B - 1)` of a `B x p` matrix.
    pub fn covariance(&self, z: Var) -> Result<Var> {
        let (value, centered) = self.with(z, covariance_with_centered)?;
        let needs = self.needs(&[z]);
        Ok(self.push(value, Op::Covariance { input: z, centered }, needs))
    }

    /// `A + c I` for square `A`.
    pub fn add_identity(&self, a: Var, c: f64) -> Result<Var> {
        let value = self.with(a, |t| -> Result<Tensor> {
            let n = t.require_square("add_identity")?;
            let mut t = t.clone();
            t.zero_grad();
            for i in 0..n {
                t.data_mut()[i * n + i] += c;
            }
            Ok(t)
        })?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::AddIdentity(a), needs))
    }

    /// `log det M` of a symmetric positive-definite matrix via eigendecomposition.
    /// The cached inverse `V diag(1/lambda) V^T` supplies the gradient.
    pub fn log_det_spd(&self, m: Var) -> Result<Var> {
        let eig = self.with(m, SpdEigen::new)?;
        let value = Tensor::scalar(eig.log_det());
        let needs = self.needs(&[m]);
        let inverse = if needs { eig.inverse() } else { Vec::new() };
        Ok(self.push(value, Op::LogDetSpd { input: m, inverse }, needs))
    }

    pub fn trace(&self, a: Var) -> Result<Var> {
        let s = self.with(a, |t| -> Result<f64> {
            let n = t.require_square("trace")?;
            Ok((0..n).map(|i| t.get(i, i)).sum())
        })?;
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Trace(a), needs))
    }

    /// Contiguous window of the flattened `src`, reshaped to `shape`.
    pub fn slice(&self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let value = self.with(src, |t| {
            if offset + len > t.numel() {
                return Err(Error::shape(
                    "slice",
                    format!("window {offset}..{} exceeds {} elements", offset + len, t.numel()),
                ));
            }
            Tensor::new(shape.to_vec(), t.data()[offset..offset + len].to_vec())
        })?;
        let needs = self.needs(&[src]);
        Ok(self.push(value, Op::Slice { src, offset }, needs))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.with(a, |t| t.clone().reshaped(shape.to_vec()))?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Batched matrix product `[n x m x k] . [n x k x p] -> [n x m x p]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(Error::shape("bmm", format!("{sa:?} vs {sb:?}")));
            }
            let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
            let data = (0..n)
                .flat_map(|i| {
                    matmul_values(
                        &ta.data()[i * m * k..(i + 1) * m * k],
                        &tb.data()[i * k * p..(i + 1) * k * p],
                        m,
                        k,
                        p,
                    )
                })
                .collect();
            Tensor::new(vec![n, m, p], data)?
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Bmm(a, b), needs))
    }

    /// Mean over axis 1 of a rank-3 tensor: `[n x l x e] -> [n x e]`.
    pub fn mean_axis1(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |t| {
            let s = t.shape();
            if s.len() != 3 {
                return Err(Error::shape("mean_axis1", format!("expected rank 3, got {s:?}")));
            }
            let (n, l, e) = (s[0], s[1], s[2]);
            let mut out = vec![0.0; n * e];
            for i in 0..n {
                for j in 0..l {
                    let src = &t.data()[(i * l + j) * e..(i * l + j + 1) * e];
                    for (o, v) in out[i * e..(i + 1) * e].iter_mut().zip(src) {
                        *o += v / l as f64;
                    }
                }
            }
            Tensor::new(vec![n, e], out)
        })?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::MeanAxis1(a), needs))
    }

    /// Accumulates d(seed)/d(leaf) into every leaf's gradient slot.
    /// Repeated calls add up until [`Graph::zero_grad`].
    pub fn backward(&self, seed: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let seed_shape = nodes[seed.0].value.shape().to_vec();
        if nodes[seed.0].value.numel() != 1 {
            return Err(Error::NonScalarSeed { shape: seed_shape });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; seed.0 + 1];
        adj[seed.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut adj[v.0] {
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=seed.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            let node = &nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    nodes[i].value.accumulate_grad(&g);
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.iter().map(|x| -x).collect());
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let ga = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g.iter().map(|x| c * x).collect()),
                Op::AddScalar(a) | Op::Reshape(a) | Op::AddIdentity(a) => acc(&mut adj, *a, g),
                Op::AddRow(a, b) => {
                    let c = nodes[b.0].value.numel();
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut adj, *b, gb);
                    acc(&mut adj, *a, g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let bt = transpose_values(tb.data(), k, n);
                    let at = transpose_values(ta.data(), m, k);
                    let ga = matmul_values(&g, &bt, m, n, k);
                    let gb = matmul_values(&at, &g, k, m, n);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Transpose(a) => {
                    let s = out.shape();
                    let ga = if s.len() == 2 {
                        transpose_values(&g, s[0], s[1])
                    } else {
                        let (n, r, c) = (s[0], s[1], s[2]);
                        (0..n)
                            .flat_map(|b| transpose_values(&g[b * r * c..(b + 1) * r * c], r, c))
                            .collect()
                    };
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)).collect();
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let va = nodes[a.0].value.data();
                    let ga = g
                        .iter()
                        .zip(va)
                        .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                        .collect();
                    acc(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.iter().zip(out.data()).map(|(x, y)| x * y).collect();
                    acc(&mut adj, *a, ga);
                }
                Op::Log(a) => {
                    let va = nodes[a.0].value.data();
                    let ga = g.iter().zip(va).map(|(x, y)| x / y).collect();
                    acc(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let va = nodes[a.0].value.data();
                    let ga = g.iter().zip(va).map(|(x, y)| 2.0 * x * y).collect();
                    acc(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let n = nodes[a.0].value.numel();
                    acc(&mut adj, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = nodes[a.0].value.numel();
                    acc(&mut adj, *a, vec![g[0] / n as f64; n]);
                }
                Op::SoftmaxLast(a) => {
                    let c = last_dim(out);
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(c).zip(out.data().chunks(c)).zip(ga.chunks_mut(c)) {
                        let s: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = y * (x - s);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::LogSoftmaxLast(a) => {
                    let c = last_dim(out);
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(c).zip(out.data().chunks(c)).zip(ga.chunks_mut(c)) {
                        let s: f64 = gr.iter().sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = x - y.exp() * s;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Covariance { input, centered } => {
                    // dZ = C (G + G^T) / (B - 1); C has zero column means so no
                    // extra centering term survives.
                    let p = out.shape()[0];
                    let b = centered.len() / p;
                    let sym: Vec<f64> = (0..p * p)
                        .map(|idx| g[idx] + g[(idx % p) * p + idx / p])
                        .collect();
                    let mut gz = matmul_values(centered, &sym, b, p, p);
                    gz.iter_mut().for_each(|x| *x /= (b - 1) as f64);
                    acc(&mut adj, *input, gz);
                }
                Op::LogDetSpd { input, inverse } => {
                    acc(&mut adj, *input, inverse.iter().map(|x| g[0] * x).collect());
                }
                Op::Trace(a) => {
                    let n = nodes[a.0].value.shape()[0];
                    let mut ga = vec![0.0; n * n];
                    for k in 0..n {
                        ga[k * n + k] = g[0];
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Slice { src, offset } => {
                    let mut gs = vec![0.0; nodes[src.0].value.numel()];
                    gs[*offset..offset + g.len()].copy_from_slice(&g);
                    acc(&mut adj, *src, gs);
                }
                Op::Bmm(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (n, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                    let p = tb.shape()[2];
                    let mut ga = Vec::with_capacity(n * m * k);
                    let mut gb = Vec::with_capacity(n * k * p);
                    for i in 0..n {
                        let gi = &g[i * m * p..(i + 1) * m * p];
                        let ai = &ta.data()[i * m * k..(i + 1) * m * k];
                        let bi = &tb.data()[i * k * p..(i + 1) * k * p];
                        ga.extend(matmul_values(gi, &transpose_values(bi, k, p), m, p, k));
                        gb.extend(matmul_values(&transpose_values(ai, m, k), gi, k, m, p));
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MeanAxis1(a) => {
                    let s = nodes[a.0].value.shape().to_vec();
                    let (n, l, e) = (s[0], s[1], s[2]);
                    let mut ga = vec![0.0; n * l * e];
                    for i in 0..n {
                        for j in 0..l {
                            for k in 0..e {
                                ga[(i * l + j) * e + k] = g[i * e + k] / l as f64;
                            }
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
            }
        }
        Ok(())
    }

    /// Gradient of scalar `seed` with respect to leaf `wrt`, leaving all slots cleared.
    pub fn gradient(&self, seed: Var, wrt: Var) -> Result<Vec<f64>> {
        self.zero_grad();
        self.backward(seed)?;
        let n = self.with(wrt, Tensor::numel);
        let g = self.grad(wrt).unwrap_or_else(|| vec![0.0; n]);
        self.zero_grad();
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let a = g.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let p = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.constant(m(&[vec![1.0, 2.0]]));
        let c = g.constant(m(&[vec![3.0], vec![4.0]]));
        let rc = g.matmul(r, c).unwrap();
        assert_eq!(g.value(rc).data(), &[11.0]);

        let z = g.constant(Tensor::zeros(&[2, 3]));
        let any = g.constant(m(&[vec![1.0, -2.0], vec![0.5, 7.0], vec![3.0, 3.0]]));
        let zp = g.matmul(z, any).unwrap();
        assert!(g.value(zp).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_mismatched_inner_extent() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn squared_norm_gradient() {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let f = g.inner(t, t).unwrap();
        assert_eq!(g.gradient(f, t).unwrap(), vec![6.0, 8.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let c = g.constant(Tensor::scalar(5.0));
        assert_eq!(g.gradient(c, t).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let f = g.sum(t);
        g.backward(f).unwrap();
        g.backward(f).unwrap();
        assert_eq!(g.grad(t).unwrap(), vec![2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(t).is_none());
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(t), Err(Error::NonScalarSeed { .. })));
    }

    #[test]
    fn log_det_rejects_indefinite() {
        let g = Graph::new();
        let a = g.leaf(m(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        assert!(matches!(
            g.log_det_spd(a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = Graph::new();
        let a = g.constant(m(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 800.0]]));
        let s = g.softmax(a);
        let v = g.value(s);
        for i in 0..2 {
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        let ls = g.log_softmax(a);
        assert!(g.value(ls).is_finite());
    }
}
