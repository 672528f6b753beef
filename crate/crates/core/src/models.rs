//! Small differentiable encoders and the synthetic supervised tasks they train on.
//!
//! Parameters live in one flat vector. Every layer is a window into it, so the
//! gradient of any scalar with respect to the whole parameter vector comes out
//! of a single leaf.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng, Graph, Tensor, Var};

pub type ParamVector = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    Attn1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// Widths of the hidden layers before the representation layer (MLP only).
    pub hidden_dims: Vec<usize>,
    /// Width of the representation `Z`.
    pub rep_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Number of tokens the input is split into (attention encoder only).
    pub seq_len: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Mlp,
            input_dim: 8,
            hidden_dims: vec![16],
            rep_dim: 8,
            output_dim: 3,
            activation: Activation::Tanh,
            seq_len: 2,
        }
    }
}

/// One weight block inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug)]
struct Dense {
    w: Block,
    b: Block,
}

#[derive(Clone, Debug)]
enum Layout {
    Mlp { layers: Vec<Dense>, head: Dense },
    Attn { q: Block, k: Block, v: Block, head: Dense },
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim >= 1
            && self.rep_dim >= 1
            && self.output_dim >= 1
            && self.hidden_dims.iter().all(|&h| h >= 1);
        if !dims_ok {
            return Err(Error::config(format!("encoder dims must all be >= 1: {self:?}")));
        }
        if self.kind == EncoderKind::Attn1
            && (self.seq_len == 0 || !self.input_dim.is_multiple_of(self.seq_len))
        {
            return Err(Error::config(format!(
                "encoder.seq_len {} must divide encoder.input_dim {}",
                self.seq_len, self.input_dim
            )));
        }
        Ok(())
    }

    fn token_dim(&self) -> usize {
        self.input_dim / self.seq_len
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        match self.kind {
            EncoderKind::Mlp => {
                let mut widths = vec![self.input_dim];
                widths.extend(&self.hidden_dims);
                widths.push(self.rep_dim);
                let layers = widths
                    .windows(2)
                    .map(|w| Dense {
                        w: block(w[0], w[1]),
                        b: block(1, w[1]),
                    })
                    .collect();
                let head = Dense {
                    w: block(self.rep_dim, self.output_dim),
                    b: block(1, self.output_dim),
                };
                Layout::Mlp { layers, head }
            }
            EncoderKind::Attn1 => {
                let e = self.token_dim();
                let q = block(e, self.rep_dim);
                let k = block(e, self.rep_dim);
                let v = block(e, self.rep_dim);
                let head = Dense {
                    w: block(self.rep_dim, self.output_dim),
                    b: block(1, self.output_dim),
                };
                Layout::Attn { q, k, v, head }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let dense = |d: &Dense| d.w.rows * d.w.cols + d.b.cols;
        match self.layout() {
            Layout::Mlp { layers, head } => layers.iter().map(dense).sum::<usize>() + dense(&head),
            Layout::Attn { q, k, v, head } => {
                [q, k, v].iter().map(|b| b.rows * b.cols).sum::<usize>() + dense(&head)
            }
        }
    }
}

/// Weights i.i.d. `N(0, 1/fan_in)`, biases zero.
pub fn init_params(spec: &EncoderSpec, seed: u64) -> ParamVector {
    let mut theta = vec![0.0; spec.param_count()];
    let mut r = rng::stream(seed, 1);
    let mut fill = |b: &Block| {
        let std = 1.0 / (b.rows as f64).sqrt();
        for x in &mut theta[b.offset..b.offset + b.rows * b.cols] {
            *x = std * rng::standard_normal(&mut r);
        }
    };
    match spec.layout() {
        Layout::Mlp { layers, head } => {
            layers.iter().for_each(|d| fill(&d.w));
            fill(&head.w);
        }
        Layout::Attn { q, k, v, head } => {
            [q, k, v].iter().for_each(&mut fill);
            fill(&head.w);
        }
    }
    theta
}

fn block_var(g: &Graph, theta: Var, b: &Block) -> Result<Var> {
    g.slice(theta, b.offset, &[b.rows, b.cols])
}

fn dense(g: &Graph, theta: Var, x: Var, d: &Dense) -> Result<Var> {
    let w = block_var(g, theta, &d.w)?;
    let b = g.slice(theta, d.b.offset, &[d.b.cols])?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

fn activate(g: &Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
    }
}

/// Records the encoder on `g`, returning the representation `Z` (`B x rep_dim`,
/// post-activation) and the head output `Yhat` (`B x output_dim`).
pub fn forward(g: &Graph, theta: Var, x: Var, spec: &EncoderSpec) -> Result<(Var, Var)> {
    let n = g.shape(theta).iter().product::<usize>();
    if n != spec.param_count() {
        return Err(Error::shape(
            "forward",
            format!("encoder needs {} parameters, got {n}", spec.param_count()),
        ));
    }
    let xs = g.shape(x);
    if xs.len() != 2 || xs[1] != spec.input_dim {
        return Err(Error::shape(
            "forward",
            format!("input must be B x {}, got {xs:?}", spec.input_dim),
        ));
    }
    let batch = xs[0];
    match spec.layout() {
        Layout::Mlp { layers, head } => {
            let mut h = x;
            for layer in &layers {
                let pre = dense(g, theta, h, layer)?;
                h = activate(g, pre, spec.activation);
            }
            let y = dense(g, theta, h, &head)?;
            Ok((h, y))
        }
        Layout::Attn { q, k, v, head } => {
            let (l, e) = (spec.seq_len, spec.token_dim());
            // B x d is already row-major (B*l) x e
            let tokens = g.reshape(x, &[batch * l, e])?;
            let project = |blk: &Block| -> Result<Var> {
                let w = block_var(g, theta, blk)?;
                let p = g.matmul(tokens, w)?;
                g.reshape(p, &[batch, l, spec.rep_dim])
            };
            let (qv, kv, vv) = (project(&q)?, project(&k)?, project(&v)?);
            let kt = g.transpose(kv)?;
            let scores = g.bmm(qv, kt)?;
            let scores = g.scale(scores, 1.0 / (spec.rep_dim as f64).sqrt());
            let attn = g.softmax(scores);
            let mixed = g.bmm(attn, vv)?;
            let pooled = g.mean_axis1(mixed)?;
            let z = activate(g, pooled, spec.activation);
            let y = dense(g, theta, z, &head)?;
            Ok((z, y))
        }
    }
}

/// Value-only forward pass.
pub fn forward_values(theta: &[f64], x: &Tensor, spec: &EncoderSpec) -> Result<(Tensor, Tensor)> {
    let g = Graph::new();
    let t = g.constant(Tensor::vector(theta.to_vec()));
    let xv = g.constant(x.clone());
    let (z, y) = forward(&g, t, xv, spec)?;
    Ok((g.value(z), g.value(y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RegressionLowrank,
    ClassifyGaussians,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out samples used for the reward signal.
    pub n_val: usize,
    pub input_dim: usize,
    /// Target noise for regression; isotropic cluster spread for classification.
    pub noise_std: f64,
    pub seed: u64,
    /// Rank of the input projection the regression target depends on.
    pub rank: usize,
    pub n_outputs: usize,
    pub n_classes: usize,
    /// Norm of each class mean.
    pub separation: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::ClassifyGaussians,
            n_train: 512,
            n_test: 512,
            n_val: 128,
            input_dim: 8,
            noise_std: 1.0,
            seed: 0,
            rank: 2,
            n_outputs: 1,
            n_classes: 3,
            separation: 2.0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 {
            return Err(Error::config(format!("task.n_train must be >= 2, got {}", self.n_train)));
        }
        if self.n_test < 1 || self.n_val < 1 {
            return Err(Error::config("task.n_test and task.n_val must be >= 1"));
        }
        if self.input_dim < 1 {
            return Err(Error::config("task.input_dim must be >= 1"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config(format!("task.noise_std must be >= 0, got {}", self.noise_std)));
        }
        match self.kind {
            TaskKind::RegressionLowrank if self.rank < 1 || self.rank >= self.input_dim.max(2) => {
                Err(Error::config(format!(
                    "task.rank must satisfy 1 <= rank < input_dim, got {} with input_dim {}",
                    self.rank, self.input_dim
                )))
            }
            TaskKind::RegressionLowrank if self.n_outputs < 1 => {
                Err(Error::config("task.n_outputs must be >= 1"))
            }
            TaskKind::ClassifyGaussians if self.n_classes < 2 => {
                Err(Error::config("task.n_classes must be >= 2"))
            }
            _ => Ok(()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            TaskKind::RegressionLowrank => self.n_outputs,
            TaskKind::ClassifyGaussians => self.n_classes,
        }
    }
}

/// Inputs and targets; classification targets are one-hot.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of this dataset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let pick = |t: &Tensor| {
            let c = t.cols();
            let data = idx.iter().flat_map(|&i| t.row(i).to_vec()).collect();
            Tensor::new(vec![idx.len(), c], data).expect("row selection")
        };
        Dataset {
            x: pick(&self.x),
            y: pick(&self.y),
        }
    }

    /// Header `x_0..x_{d-1},y_0..y_{o-1}`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (d, o) = (self.x.cols(), self.y.cols());
        let header: Vec<String> = (0..d)
            .map(|i| format!("x_{i}"))
            .chain((0..o).map(|i| format!("y_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i))
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TaskData {
    pub kind: TaskKind,
    pub train: Dataset,
    pub test: Dataset,
    pub val: Dataset,
}

/// Draws train, test and validation splits from one task distribution.
pub fn generate_task(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let d = spec.input_dim;
    let mut r = rng::stream(spec.seed, 2);
    let total = spec.n_train + spec.n_test + spec.n_val;
    let (x, y) = match spec.kind {
        TaskKind::RegressionLowrank => {
            let (k, o) = (spec.rank, spec.n_outputs);
            // target = x V^T U + noise, V: k x d, U: k x o
            let v = rng::normal_vec(&mut r, k * d, 1.0 / (d as f64).sqrt());
            let u = rng::normal_vec(&mut r, k * o, 1.0 / (k as f64).sqrt());
            let x = rng::normal_vec(&mut r, total * d, 1.0);
            let mut y = Vec::with_capacity(total * o);
            for i in 0..total {
                let xi = &x[i * d..(i + 1) * d];
                let proj: Vec<f64> = (0..k)
                    .map(|a| xi.iter().zip(&v[a * d..(a + 1) * d]).map(|(p, q)| p * q).sum())
                    .collect();
                for j in 0..o {
                    let clean: f64 = (0..k).map(|a| proj[a] * u[a * o + j]).sum();
                    y.push(clean + spec.noise_std * rng::standard_normal(&mut r));
                }
            }
            (x, (y, o))
        }
        TaskKind::ClassifyGaussians => {
            let c = spec.n_classes;
            let mut means = Vec::with_capacity(c * d);
            for _ in 0..c {
                let dir = rng::normal_vec(&mut r, d, 1.0);
                let n = crate::numerics::norm(&dir);
                means.extend(dir.iter().map(|v| spec.separation * v / n));
            }
            let mut x = Vec::with_capacity(total * d);
            let mut y = vec![0.0; total * c];
            for i in 0..total {
                let label = rand::Rng::random_range(&mut r, 0..c);
                y[i * c + label] = 1.0;
                for j in 0..d {
                    x.push(means[label * d + j] + spec.noise_std * rng::standard_normal(&mut r));
                }
            }
            (x, (y, c))
        }
    };
    let (y, o) = y;
    let split = |lo: usize, hi: usize| Dataset {
        x: Tensor::new(vec![hi - lo, d], x[lo * d..hi * d].to_vec()).expect("split"),
        y: Tensor::new(vec![hi - lo, o], y[lo * o..hi * o].to_vec()).expect("split"),
    };
    let (a, b) = (spec.n_train, spec.n_train + spec.n_test);
    Ok(TaskData {
        kind: spec.kind,
        train: split(0, a),
        test: split(a, b),
        val: split(b, total),
    })
}

/// Mean squared error for regression, mean softmax cross-entropy for classification.
pub fn pred_loss(g: &Graph, yhat: Var, y: Var, kind: TaskKind) -> Result<Var> {
    let (sa, sb) = (g.shape(yhat), g.shape(y));
    if sa != sb {
        return Err(Error::shape("pred_loss", format!("{sa:?} vs {sb:?}")));
    }
    match kind {
        TaskKind::RegressionLowrank => {
            let diff = g.sub(yhat, y)?;
            let sq = g.square(diff);
            Ok(g.mean(sq))
        }
        TaskKind::ClassifyGaussians => {
            let logp = g.log_softmax(yhat);
            let picked = g.inner(logp, y)?;
            Ok(g.scale(picked, -1.0 / sa[0] as f64))
        }
    }
}

pub fn loss_value(theta: &[f64], data: &Dataset, spec: &EncoderSpec, kind: TaskKind) -> Result<f64> {
    let g = Graph::new();
    let t = g.constant(Tensor::vector(theta.to_vec()));
    let x = g.constant(data.x.clone());
    let y = g.constant(data.y.clone());
    let (_, yhat) = forward(&g, t, x, spec)?;
    let l = pred_loss(&g, yhat, y, kind)?;
    g.scalar(l)
}

/// Test loss minus train loss.
pub fn gen_gap(
    theta: &[f64],
    train: &Dataset,
    test: &Dataset,
    spec: &EncoderSpec,
    kind: TaskKind,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("gen_gap needs nonempty train and test sets"));
    }
    Ok(loss_value(theta, test, spec, kind)? - loss_value(theta, train, spec, kind)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};

    fn mlp(input: usize, hidden: Vec<usize>, rep: usize, out: usize) -> EncoderSpec {
        EncoderSpec {
            kind: EncoderKind::Mlp,
            input_dim: input,
            hidden_dims: hidden,
            rep_dim: rep,
            output_dim: out,
            activation: Activation::Tanh,
            seq_len: 1,
        }
    }

    #[test]
    fn param_count_for_2_4_2() {
        assert_eq!(mlp(2, vec![], 4, 2).param_count(), 22);
        assert_eq!(mlp(3, vec![5, 4], 2, 1).param_count(), (3 + 1) * 5 + (5 + 1) * 4 + (4 + 1) * 2 + (2 + 1));
    }

    #[test]
    fn init_is_seeded() {
        let spec = EncoderSpec::default();
        assert_eq!(init_params(&spec, 3), init_params(&spec, 3));
        assert_ne!(init_params(&spec, 3), init_params(&spec, 4));
        let spec = mlp(2, vec![], 4, 2);
        let theta = init_params(&spec, 1);
        // first layer bias occupies entries 8..12
        assert!(theta[8..12].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        for kind in [EncoderKind::Mlp, EncoderKind::Attn1] {
            let spec = EncoderSpec { kind, ..EncoderSpec::default() };
            let theta = vec![0.0; spec.param_count()];
            let x = Tensor::new(vec![3, 8], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
            let (z, y) = forward_values(&theta, &x, &spec).unwrap();
            assert!(z.data().iter().all(|&v| v == 0.0));
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_layer_linear_encoder_is_xw() {
        // relu of a nonnegative product acts as the identity here
        let mut spec = mlp(2, vec![], 2, 1);
        spec.activation = Activation::Relu;
        let mut theta = vec![0.0; spec.param_count()];
        theta[..4].copy_from_slice(&[1.0, 2.0, 0.5, 1.0]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let (z, _) = forward_values(&theta, &x, &spec).unwrap();
        assert_eq!(z.data(), &[2.0, 4.0, 3.0, 6.0]);
    }

    #[test]
    fn equal_keys_give_mean_value_row() {
        let spec = EncoderSpec {
            kind: EncoderKind::Attn1,
            input_dim: 6,
            seq_len: 3,
            rep_dim: 2,
            output_dim: 1,
            ..EncoderSpec::default()
        };
        let mut theta = init_params(&spec, 9);
        // key projection is the second 2x2 block
        theta[4..8].iter_mut().for_each(|w| *w = 0.0);
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]]).unwrap();
        let (z, _) = forward_values(&theta, &x, &spec).unwrap();
        let wv = &theta[8..12];
        let tokens = [[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        for j in 0..2 {
            let mean_v: f64 = tokens
                .iter()
                .map(|t| t[0] * wv[j] + t[1] * wv[2 + j])
                .sum::<f64>()
                / 3.0;
            assert!((z.data()[j] - mean_v.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_examples() {
        let g = Graph::new();
        let yhat = g.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let y = g.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let l = pred_loss(&g, yhat, y, TaskKind::RegressionLowrank).unwrap();
        assert_eq!(g.scalar(l).unwrap(), 4.0);
        let same = pred_loss(&g, y, y, TaskKind::RegressionLowrank).unwrap();
        assert_eq!(g.scalar(same).unwrap(), 0.0);

        let k = 5;
        let logits = g.constant(Tensor::new(vec![2, k], vec![0.3; 2 * k]).unwrap());
        let mut onehot = vec![0.0; 2 * k];
        onehot[1] = 1.0;
        onehot[k + 4] = 1.0;
        let targets = g.constant(Tensor::new(vec![2, k], onehot).unwrap());
        let ce = pred_loss(&g, logits, targets, TaskKind::ClassifyGaussians).unwrap();
        assert!((g.scalar(ce).unwrap() - (k as f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn gen_gap_of_identical_sets_is_zero() {
        let spec = EncoderSpec::default();
        let data = generate_task(&TaskSpec::default()).unwrap();
        let theta = init_params(&spec, 0);
        let gap = gen_gap(&theta, &data.train, &data.train, &spec, data.kind).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn random_init_gap_is_small_on_gaussian_clusters() {
        let task = TaskSpec { n_train: 2000, n_test: 2000, ..TaskSpec::default() };
        let data = generate_task(&task).unwrap();
        let spec = EncoderSpec::default();
        let theta: Vec<f64> = init_params(&spec, 5).iter().map(|w| 0.05 * w).collect();
        let gap = gen_gap(&theta, &data.train, &data.test, &spec, data.kind).unwrap();
        let l = loss_value(&theta, &data.train, &spec, data.kind).unwrap();
        assert!((l - 3f64.ln()).abs() < 0.05, "train loss {l}");
        assert!(gap.abs() < 0.02, "gap {gap}");
    }

    #[test]
    fn tasks_are_seeded_and_shaped() {
        for kind in [TaskKind::RegressionLowrank, TaskKind::ClassifyGaussians] {
            let spec = TaskSpec { kind, n_train: 10, n_test: 4, n_val: 3, ..TaskSpec::default() };
            let a = generate_task(&spec).unwrap();
            let b = generate_task(&spec).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.train.x.shape(), &[10, 8]);
            assert_eq!(a.test.y.shape(), &[4, spec.output_dim()]);
            assert_eq!(a.val.len(), 3);
        }
        let bad = TaskSpec { n_train: 1, ..TaskSpec::default() };
        assert!(generate_task(&bad).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = TaskSpec { n_train: 2, n_test: 1, n_val: 1, input_dim: 2, n_classes: 2, ..TaskSpec::default() };
        let data = generate_task(&spec).unwrap();
        let mut buf = Vec::new();
        data.train.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_0,x_1,y_0,y_1");
        assert_eq!(lines.len(), 3);
        let first: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, data.train.x.get(0, 0));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let data = generate_task(&TaskSpec { n_train: 6, ..TaskSpec::default() }).unwrap();
        for kind in [EncoderKind::Mlp, EncoderKind::Attn1] {
            let spec = EncoderSpec { kind, ..EncoderSpec::default() };
            let theta0 = init_params(&spec, 17);
            let g = Graph::new();
            let t = g.leaf(Tensor::vector(theta0.clone()));
            let x = g.constant(data.train.x.clone());
            let y = g.constant(data.train.y.clone());
            let (_, yhat) = forward(&g, t, x, &spec).unwrap();
            let l = pred_loss(&g, yhat, y, data.kind).unwrap();
            let analytic = g.gradient(l, t).unwrap();
            let fd = finite_diff_grad(
                |th| loss_value(th.data(), &data.train, &spec, data.kind),
                &Tensor::vector(theta0),
                1e-4,
            )
            .unwrap();
            let err = relative_error(&analytic, fd.data(), 1e-12);
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
    }
}
