//! Operation tape and reverse sweep.
//!
//! Nodes are appended in evaluation order, which is a topological order of
//! the graph; [`Tape::backward`] walks it once in reverse and accumulates
//! gradients additively where a value fans out.

use rand_distr::{Distribution, Normal};

use super::conv::ConvGeometry;
use super::{gemm, MatRef, Real, Tensor, TensorError};
use crate::loss;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic layers (dropout, noise) are active and batch
/// normalization uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum BnStats<T> {
    /// Batch statistics; gradient flows through the mean and variance.
    Batch,
    /// Fixed running statistics.
    Fixed(#[allow(dead_code)] Vec<T>),
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        stats: BnStats<T>,
    },
    GlobalAvgPool(Var),
    /// `y = x * mask`; dropout and spatial dropout.
    MaskMul {
        input: Var,
        mask: Vec<T>,
    },
    /// `y = x + c` for a constant `c`; Gaussian noise.
    AddConst(Var),
    /// Weighted BCE of logits; `grad` is `dLoss/dlogits`.
    WeightedBce {
        logits: Var,
        grad: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the leaves that require them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn nchw(shape: &[usize], what: &str) -> Result<[usize; 4], TensorError> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(TensorError::Shape(format!("{what} expects N×C×H×W, got {shape:?}"))),
    }
}

fn check_rate(rate: f64) -> Result<(), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted (parameters, gradient-check inputs).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient (data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "add")?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "mul")?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| v * c).collect()).unwrap();
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let out = Tensor::new(x.shape(), data).unwrap();
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| T::from_f64(loss::sigmoid(v.to_f64())))
            .collect();
        let out = Tensor::new(x.shape(), data).unwrap();
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
            dilation,
            padding,
        )?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.out_channels] {
                return Err(TensorError::Shape(format!(
                    "conv2d bias must have shape [{}], got {:?}",
                    geom.out_channels,
                    self.value(b).shape()
                )));
            }
        }
        let shape = geom.output_shape();
        let mut out = vec![T::ZERO; shape.iter().product()];
        geom.forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::new(&shape, out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// `y = x W^T + b` for `x: N×I`, `W: O×I`, `b: O`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(weight);
        let (&[n, i], &[o, wi]) = (x.shape(), w.shape()) else {
            return Err(TensorError::Shape(format!(
                "dense expects N×I input and O×I weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        };
        if i != wi {
            return Err(TensorError::Shape(format!(
                "dense input has {i} features, weight expects {wi}"
            )));
        }
        let mut out = vec![T::ZERO; n * o];
        gemm(
            T::ONE,
            MatRef::row_major(x.data(), n, i),
            MatRef::row_major(w.data(), o, i).t(),
            T::ZERO,
            &mut out,
        );
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(TensorError::Shape(format!(
                    "dense bias must have shape [{o}], got {:?}",
                    bv.shape()
                )));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv.data()).for_each(|(v, &b)| *v += b);
            }
        }
        let value = Tensor::new(&[n, o], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Dense { input, weight, bias }, &inputs))
    }

    /// Channelwise batch normalization with batch statistics. Returns the
    /// output and the batch mean and (biased) variance per channel.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>), TensorError> {
        let [n, c, h, w] = nchw(self.value(input).shape(), "batch_norm")?;
        self.check_affine(gamma, beta, c)?;
        let x = self.value(input).data();
        let hw = h * w;
        let count = T::from_usize(n * hw);
        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        for ch in 0..c {
            let mut s = T::ZERO;
            for b in 0..n {
                s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s / count;
            let mut v = T::ZERO;
            for b in 0..n {
                for &xv in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    v += (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + T::from_f64(eps)).sqrt()).collect();
        let (out, x_hat) = self.bn_apply(input, gamma, beta, &mean, &inv_std, [n, c, h, w]);
        let var_out = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                stats: BnStats::Batch,
            },
            &[input, gamma, beta],
        );
        Ok((var_out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let [n, c, h, w] = nchw(self.value(input).shape(), "batch_norm")?;
        self.check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::Shape("running statistics length".into()));
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::ONE / (v + T::from_f64(eps)).sqrt())
            .collect();
        let (out, x_hat) = self.bn_apply(input, gamma, beta, running_mean, &inv_std, [n, c, h, w]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                stats: BnStats::Fixed(running_mean.to_vec()),
            },
            &[input, gamma, beta],
        ))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<(), TensorError> {
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(TensorError::Shape(format!(
                "batch_norm gamma/beta must have shape [{c}]"
            )));
        }
        Ok(())
    }

    fn bn_apply(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        [n, c, h, w]: [usize; 4],
    ) -> (Tensor<T>, Vec<T>) {
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let hw = h * w;
        let mut x_hat = vec![T::ZERO; x.len()];
        let mut out = vec![T::ZERO; x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        (Tensor::new(&[n, c, h, w], out).unwrap(), x_hat)
    }

    /// `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let [n, c, h, w] = nchw(self.value(input).shape(), "global_avg_pool")?;
        let x = self.value(input).data();
        let hw = h * w;
        let inv = T::ONE / T::from_usize(hw);
        let data = (0..n * c)
            .map(|i| x[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(input), &[input]))
    }

    /// Elementwise dropout; survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        check_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(input).numel())
            .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
            .collect();
        Ok(self.mask_mul(input, mask))
    }

    /// Drops whole channels of an `N×C×H×W` tensor.
    pub fn spatial_dropout<R: rand::Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        check_rate(rate)?;
        let [n, c, h, w] = nchw(self.value(input).shape(), "spatial_dropout")?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mut mask = Vec::with_capacity(n * c * h * w);
        for _ in 0..n * c {
            let m = if rng.random::<f64>() < rate { T::ZERO } else { keep };
            mask.extend(std::iter::repeat_n(m, h * w));
        }
        Ok(self.mask_mul(input, mask))
    }

    fn mask_mul(&mut self, input: Var, mask: Vec<T>) -> Var {
        let x = self.value(input);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.shape(), data).unwrap();
        self.push(out, Op::MaskMul { input, mask }, &[input])
    }

    /// Adds `N(0, stddev)` noise elementwise.
    pub fn gaussian_noise<R: rand::Rng + ?Sized>(
        &mut self,
        input: Var,
        stddev: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(stddev >= 0.0 && stddev.is_finite()) {
            return Err(TensorError::Invalid(format!("noise stddev {stddev}")));
        }
        if mode == Mode::Eval || stddev == 0.0 {
            return Ok(input);
        }
        let normal = Normal::new(0.0, stddev).expect("validated stddev");
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v + T::from_f64(normal.sample(rng))).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::AddConst(input), &[input]))
    }

    /// Scalar weighted BCE of `N×H` logits against binary targets, averaged
    /// over samples and then over heads.
    pub fn weighted_bce(&mut self, logits: Var, targets: &[u8], w1: &[f64], w0: &[f64]) -> Result<Var, TensorError> {
        let z = self.value(logits);
        let &[n, h] = z.shape() else {
            return Err(TensorError::Shape(format!(
                "weighted_bce expects N×H logits, got {:?}",
                z.shape()
            )));
        };
        let zf = z.to_f64_vec();
        let (l, g) = loss::multilabel_loss_from_logits(n, h, targets, &zf, w1, w0)
            .map_err(|e| TensorError::Shape(e.to_string()))?;
        let grad = g.into_iter().map(T::from_f64).collect();
        Ok(self.push(
            Tensor::scalar(T::from_f64(l)),
            Op::WeightedBce { logits, grad },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar node. Only leaves created with
    /// [`Tape::leaf`] keep their gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.needs_grad => Some(Tensor::new(node.value.shape(), g).unwrap()),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let len = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        self.acc(grads, v).iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = self.acc(grads, *a);
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if self.wants(*b) {
                    let d = self.acc(grads, *b);
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let d = self.acc(grads, *a);
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *c);
            }
            Op::Sum(a) => {
                let d = self.acc(grads, *a);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = self.acc(grads, *a);
                for i in 0..g.len() {
                    if x[i] > T::ZERO {
                        d[i] += g[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = self.acc(grads, *a);
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (T::ONE - y[i]);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let mut dx = self.wants(*input).then(|| self.take_acc(grads, *input));
                let mut dk = self.wants(*kernel).then(|| self.take_acc(grads, *kernel));
                let mut db = bias.filter(|b| self.wants(*b)).map(|b| self.take_acc(grads, b));
                geom.backward(x, k, g, dx.as_deref_mut(), dk.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    grads[input.0] = Some(dx);
                }
                if let Some(dk) = dk {
                    grads[kernel.0] = Some(dk);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    grads[b.0] = Some(db);
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, i) = (x.shape()[0], x.shape()[1]);
                let o = w.shape()[0];
                let gm = MatRef::row_major(g, n, o);
                if self.wants(*input) {
                    let d = self.acc(grads, *input);
                    gemm(T::ONE, gm, MatRef::row_major(w.data(), o, i), T::ONE, d);
                }
                if self.wants(*weight) {
                    let d = self.acc(grads, *weight);
                    gemm(T::ONE, gm.t(), MatRef::row_major(x.data(), n, i), T::ONE, d);
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    let d = self.acc(grads, b);
                    for row in g.chunks(o) {
                        d.iter_mut().zip(row).for_each(|(d, &gi)| *d += gi);
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                stats,
            } => {
                let [n, c, h, w] = nchw(self.value(*input).shape(), "batch_norm").unwrap();
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::ZERO; c];
                let mut sum_gx = vec![T::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * x_hat[i];
                        }
                    }
                }
                if self.wants(*gamma) {
                    let d = self.acc(grads, *gamma);
                    d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s);
                }
                if self.wants(*beta) {
                    let d = self.acc(grads, *beta);
                    d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s);
                }
                if self.wants(*input) {
                    let m = T::from_usize(n * hw);
                    let d = self.acc(grads, *input);
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let scale = gam[ch] * inv_std[ch];
                            match stats {
                                BnStats::Batch => {
                                    let (mg, mgx) = (sum_g[ch] / m, sum_gx[ch] / m);
                                    for i in base..base + hw {
                                        d[i] += scale * (g[i] - mg - x_hat[i] * mgx);
                                    }
                                }
                                BnStats::Fixed(_) => {
                                    for i in base..base + hw {
                                        d[i] += scale * g[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                let shape = self.value(*a).shape();
                let hw = shape[2] * shape[3];
                let inv = T::ONE / T::from_usize(hw);
                let d = self.acc(grads, *a);
                for (i, &gi) in g.iter().enumerate() {
                    d[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v += gi * inv);
                }
            }
            Op::MaskMul { input, mask } => {
                let d = self.acc(grads, *input);
                for i in 0..g.len() {
                    d[i] += g[i] * mask[i];
                }
            }
            Op::AddConst(a) => {
                let d = self.acc(grads, *a);
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            Op::WeightedBce { logits, grad } => {
                let d = self.acc(grads, *logits);
                for i in 0..grad.len() {
                    d[i] += g[0] * grad[i];
                }
            }
        }
    }

    fn take_acc(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Vec<T> {
        let len = self.nodes[v.0].value.numel();
        grads[v.0].take().unwrap_or_else(|| vec![T::ZERO; len])
    }
}
