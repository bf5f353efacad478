//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! information to run its vector-Jacobian product. Nodes are appended in
//! execution order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::spectral;
use crate::tensor::{gemm_acc, transpose, Strided, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Short reborrow of an optional RNG so it can be passed down more than once.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Zero-padding policy for [`Tape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric padding that preserves the spatial size (odd kernels only).
    Same,
    None,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Sum(Var),
    Silu(Var),
    Gelu(Var),
    MulConst(Var, Vec<f64>),
    CausalConv1d { x: Var, w: Var, dilation: usize },
    Conv2d { x: Var, w: Var, pad: (usize, usize) },
    AvgPool2d { x: Var, window: (usize, usize) },
    ConcatCols(Var, Var),
    StackScales(Vec<Var>),
    Reshape(Var),
    Rfft(Var),
    Slab(Var, usize),
    Irfft { re: Var, im: Var },
    Hypot(Var, Var),
    Atan2 { y: Var, x: Var },
    InfoNce(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Transpose(a) | Scale(a, _) | Sum(a) | Silu(a) | Gelu(a) | MulConst(a, _)
            | Reshape(a) | Rfft(a) | Slab(a, _) => vec![*a],
            AvgPool2d { x, .. } => vec![*x],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRowBias(a, b)
            | AddChannelBias(a, b) | ConcatCols(a, b) | Hypot(a, b) | InfoNce(a, b) => {
                vec![*a, *b]
            }
            CausalConv1d { x, w, .. } | Conv2d { x, w, .. } => vec![*x, *w],
            Irfft { re, im } => vec![*re, *im],
            Atan2 { y, x } => vec![*y, *x],
            StackScales(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Wengert list of executed operations bound to one parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn empty_store() -> &'static ParamStore {
    static EMPTY: OnceLock<ParamStore> = OnceLock::new();
    EMPTY.get_or_init(ParamStore::new)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Row-wise softmax of an `n×n` logit matrix plus the summed
/// `logsumexp(row) − diagonal` loss.
fn infonce_parts(logits: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut probs = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &l) in probs[i * n..(i + 1) * n].iter_mut().zip(row) {
            *p = (l - max).exp();
            z += *p;
        }
        for p in &mut probs[i * n..(i + 1) * n] {
            *p /= z;
        }
        loss += max + z.ln() - row[i];
    }
    (probs, loss)
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn dims3(op: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape()[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Dimension(format!(
            "{op}: expected a rank-3 tensor, got {:?}",
            t.shape()
        ))),
    }
}

fn dims4(op: &str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape()[..] {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::Dimension(format!(
            "{op}: expected a rank-4 tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Valid output columns `[x0, x1)` for kernel column `b` (input column is `x + b − pw`).
fn conv_cols(b: usize, pw: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let x0 = pw.saturating_sub(b);
    let x1 = (w_in + pw).saturating_sub(b).min(w_out);
    (x0, x1.max(x0))
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A tape with no parameters attached.
    pub fn detached() -> Tape<'static> {
        Tape::new(empty_store())
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => &self.store.get(id).value,
            _ => node.value.as_ref().expect("non-parameter node holds a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let inputs = op.inputs();
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Node bound to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        Ok(Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect(),
        ))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// `a[i, j] + bias[j]` for an `m×n` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (_, n) = x.dims2()?;
        if b.len() != n {
            return Err(Error::Dimension(format!(
                "row bias of length {} for matrix {:?}",
                b.len(),
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b.data()[i % n])
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    /// `a[c, …] + bias[c]` along the leading axis.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let c = x.shape()[0];
        if b.len() != c {
            return Err(Error::Dimension(format!(
                "channel bias of length {} for tensor {:?}",
                b.len(),
                x.shape()
            )));
        }
        let inner = x.len() / c;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b.data()[i / inner])
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(out, Op::AddChannelBias(a, bias)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if factor.len() != x.len() {
            return Err(Error::Dimension(format!(
                "constant factor of length {} for tensor {:?}",
                factor.len(),
                x.shape()
            )));
        }
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(&factor).map(|(v, f)| v * f).collect(),
        );
        Ok(self.push(out, Op::MulConst(a, factor)))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`; otherwise
    /// the identity.
    pub fn dropout(
        &mut self,
        a: Var,
        rate: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    /// Causal dilated convolution of a `T×Cin` sequence with a `k×Cin×Cout`
    /// kernel. The input is left-padded with `(k−1)·dilation` zeros so the
    /// output has `T` rows and row `t` only sees inputs at rows `≤ t`.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (t, cin) = xv.dims2()?;
        let (k, wcin, cout) = dims3("causal_conv1d", wv)?;
        if dilation < 1 {
            return Err(Error::Parameter("dilation must be at least 1".into()));
        }
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "causal_conv1d: input {:?} vs kernel {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let mut out = vec![0.0; t * cout];
        for j in 0..k {
            let s = (k - 1 - j) * dilation;
            if s >= t {
                continue;
            }
            gemm_acc(
                t - s,
                cin,
                cout,
                Strided::rm(xv.data(), cin),
                Strided::rm(&wv.data()[j * cin * cout..], cout),
                &mut out[s * cout..],
                cout,
                1,
            );
        }
        let out = Tensor::from_parts(vec![t, cout], out);
        Ok(self.push(out, Op::CausalConv1d { x, w, dilation }))
    }

    /// 2-D cross-correlation of a `Cin×H×W` map with a `kh×kw×Cin×Cout` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, padding: Padding) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (cin, h, wd) = dims3("conv2d", xv)?;
        let (kh, kw, wcin, cout) = dims4("conv2d", wv)?;
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "conv2d: input {:?} vs kernel {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let pad = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::Parameter(format!(
                        "same padding needs an odd kernel, got {kh}x{kw}"
                    )));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::None => (0, 0),
        };
        if kh > h + 2 * pad.0 || kw > wd + 2 * pad.1 {
            return Err(Error::Parameter(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad.0,
                wd + 2 * pad.1
            )));
        }
        let (ho, wo) = (h + 2 * pad.0 - kh + 1, wd + 2 * pad.1 - kw + 1);
        let mut out = vec![0.0; cout * ho * wo];
        for a in 0..kh {
            for b in 0..kw {
                let wab = &wv.data()[(a * kw + b) * cin * cout..];
                let (x0, x1) = conv_cols(b, pad.1, wd, wo);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..ho {
                    let yy = y + a;
                    if yy < pad.0 || yy - pad.0 >= h {
                        continue;
                    }
                    let yy = yy - pad.0;
                    let xx0 = x0 + b - pad.1;
                    gemm_acc(
                        cout,
                        cin,
                        x1 - x0,
                        Strided::rm_t(wab, cout),
                        Strided {
                            data: &xv.data()[yy * wd + xx0..],
                            rs: h * wd,
                            cs: 1,
                        },
                        &mut out[y * wo + x0..],
                        ho * wo,
                        1,
                    );
                }
            }
        }
        let out = Tensor::from_parts(vec![cout, ho, wo], out);
        Ok(self.push(out, Op::Conv2d { x, w, pad }))
    }

    /// Non-overlapping window means of a `C×H×W` map.
    pub fn avg_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        let (c, h, w) = dims3("avg_pool2d", xv)?;
        let (ph, pw) = window;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(Error::Parameter(format!(
                "pool window {ph}x{pw} does not fit input {h}x{w}"
            )));
        }
        let (ho, wo) = (h / ph, w / pw);
        let inv = 1.0 / (ph * pw) as f64;
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho * ph {
                for xx in 0..wo * pw {
                    out[(ch * ho + y / ph) * wo + xx / pw] += xv.data()[(ch * h + y) * w + xx] * inv;
                }
            }
        }
        let out = Tensor::from_parts(vec![c, ho, wo], out);
        Ok(self.push(out, Op::AvgPool2d { x, window }))
    }

    /// `[a ‖ b]` along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, n1) = av.dims2()?;
        let (m2, n2) = bv.dims2()?;
        if m != m2 {
            return Err(Error::Contract(format!(
                "cannot concatenate {:?} and {:?}: row counts differ",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            out.extend_from_slice(&av.data()[i * n1..(i + 1) * n1]);
            out.extend_from_slice(&bv.data()[i * n2..(i + 1) * n2]);
        }
        let out = Tensor::from_parts(vec![m, n1 + n2], out);
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Stacks `n` matrices of shape `T×K` into a `K×n×T` map.
    pub fn stack_scales(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack_scales needs at least one input".into()))?;
        let (t, k) = self.value(*first).dims2()?;
        let n = parts.len();
        let mut out = vec![0.0; k * n * t];
        for (j, p) in parts.iter().enumerate() {
            let v = self.value(*p);
            if v.shape() != [t, k] {
                return Err(Error::Dimension(format!(
                    "stack_scales: part {j} has shape {:?}, expected [{t}, {k}]",
                    v.shape()
                )));
            }
            for tt in 0..t {
                for kk in 0..k {
                    out[(kk * n + j) * t + tt] = v.data()[tt * k + kk];
                }
            }
        }
        let out = Tensor::from_parts(vec![k, n, t], out);
        Ok(self.push(out, Op::StackScales(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Column-wise real FFT of a `T×F` matrix; output is `[2, c, F]`
    /// (real part, imaginary part).
    pub fn rfft(&mut self, a: Var) -> Result<Var> {
        let xv = self.value(a);
        let (t, f) = xv.dims2()?;
        if t < 2 {
            return Err(Error::Parameter(format!(
                "rfft needs at least 2 time steps, got {t}"
            )));
        }
        let (mut re, im) = spectral::rfft_raw(xv.data(), t, f);
        let c = spectral::num_bins(t);
        re.extend(im);
        Ok(self.push(Tensor::from_parts(vec![2, c, f], re), Op::Rfft(a)))
    }

    /// Slice `i` along the leading axis.
    pub fn slab(&mut self, a: Var, i: usize) -> Result<Var> {
        let v = self.value(a);
        let lead = v.shape()[0];
        if i >= lead || v.rank() < 2 {
            return Err(Error::Dimension(format!(
                "slab {i} of tensor {:?}",
                v.shape()
            )));
        }
        let inner = v.len() / lead;
        let out = Tensor::from_parts(
            v.shape()[1..].to_vec(),
            v.data()[i * inner..(i + 1) * inner].to_vec(),
        );
        Ok(self.push(out, Op::Slab(a, i)))
    }

    /// Inverse of [`Tape::rfft`] from separate `c×F` real/imaginary parts.
    pub fn irfft(&mut self, re: Var, im: Var, len: usize) -> Result<Var> {
        let (rv, iv) = (self.value(re), self.value(im));
        same_shape("irfft", rv, iv)?;
        let (c, f) = rv.dims2()?;
        if c != spectral::num_bins(len) {
            return Err(Error::Contract(format!(
                "{c} bins do not match signal length {len}"
            )));
        }
        let out = spectral::irfft_raw(rv.data(), iv.data(), len, f);
        let out = Tensor::from_parts(vec![len, f], out);
        Ok(self.push(out, Op::Irfft { re, im }))
    }

    /// Elementwise modulus `√(re² + im²)`.
    pub fn hypot(&mut self, re: Var, im: Var) -> Result<Var> {
        let out = self.zip(re, im, "hypot", spectral::modulus)?;
        Ok(self.push(out, Op::Hypot(re, im)))
    }

    /// Elementwise argument of `x + i·y` in `(−π, π]`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        let out = self.zip(y, x, "atan2", |yy, xx| spectral::argument(xx, yy))?;
        Ok(self.push(out, Op::Atan2 { y, x }))
    }

    /// Summed InfoNCE over rows: `Σ_i [logsumexp_k(a_i·b_k) − a_i·b_i]` for
    /// `n×d` matrices `a`, `b`. Row `i` of `b` is the positive for row `i`
    /// of `a`; every other row of `b` is a negative.
    pub fn info_nce(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Contract(format!(
                "info_nce: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, d) = av.dims2()?;
        let mut logits = vec![0.0; n * n];
        gemm_acc(
            n,
            d,
            n,
            Strided::rm(av.data(), d),
            Strided::rm_t(bv.data(), d),
            &mut logits,
            n,
            1,
        );
        let (_, loss) = infonce_parts(&logits, n);
        Ok(self.push(Tensor::scalar(loss), Op::InfoNce(a, b)))
    }

    /// Gradients of a scalar node with respect to every leaf and parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut kept: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                kept[i] = Some(Tensor::from_parts(self.value(Var(i)).shape().to_vec(), g));
                continue;
            }
            self.vjp(Var(i), &g, &mut grads);
        }
        let mut params = vec![None; self.store.len()];
        for (id, v) in &self.param_vars {
            params[id.0] = kept[v.0].take();
        }
        Ok(Gradients {
            nodes: kept,
            params,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn vjp(&self, out: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let op = &self.nodes[out.0].op;
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_acc(m, n, k, Strided::rm(g, n), Strided::rm_t(bv, n), ga, k, 1);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_acc(k, m, n, Strided::rm_t(av, k), Strided::rm(g, n), gb, n, 1);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                if let Some(ga) = self.slot(grads, *a) {
                    for (d, s) in ga.iter_mut().zip(transpose(g, c, r)) {
                        *d += s;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d += sign * s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::AddRowBias(a, b) => {
                let n = self.value(*b).len();
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                }
            }
            Op::AddChannelBias(a, b) => {
                let inner = g.len() / self.value(*b).len();
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (i, v) in g.iter().enumerate() {
                        gb[i / inner] += v;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Silu(a) => {
                let xv = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        let s = sigmoid(xv[i]);
                        ga[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::MulConst(a, factor) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * factor[i];
                    }
                }
            }
            Op::CausalConv1d { x, w, dilation } => {
                let (t, cin) = self.value(*x).dims2().unwrap();
                let (k, _, cout) = dims3("", self.value(*w)).unwrap();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..k {
                        let s = (k - 1 - j) * dilation;
                        if s >= t {
                            continue;
                        }
                        gemm_acc(
                            t - s,
                            cout,
                            cin,
                            Strided::rm(&g[s * cout..], cout),
                            Strided::rm_t(&wv[j * cin * cout..], cout),
                            gx,
                            cin,
                            1,
                        );
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for j in 0..k {
                        let s = (k - 1 - j) * dilation;
                        if s >= t {
                            continue;
                        }
                        gemm_acc(
                            cin,
                            t - s,
                            cout,
                            Strided::rm_t(xv, cin),
                            Strided::rm(&g[s * cout..], cout),
                            &mut gw[j * cin * cout..],
                            cout,
                            1,
                        );
                    }
                }
            }
            Op::Conv2d { x, w, pad } => {
                let (cin, h, wd) = dims3("", self.value(*x)).unwrap();
                let (kh, kw, _, cout) = dims4("", self.value(*w)).unwrap();
                let (ho, wo) = (h + 2 * pad.0 - kh + 1, wd + 2 * pad.1 - kw + 1);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut gx = self.slot(grads, *x).map(std::mem::take);
                let mut gw = self.slot(grads, *w).map(std::mem::take);
                for a in 0..kh {
                    for b in 0..kw {
                        let off = (a * kw + b) * cin * cout;
                        let (x0, x1) = conv_cols(b, pad.1, wd, wo);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in 0..ho {
                            let yy = y + a;
                            if yy < pad.0 || yy - pad.0 >= h {
                                continue;
                            }
                            let yy = yy - pad.0;
                            let xx0 = x0 + b - pad.1;
                            let gview = Strided {
                                data: &g[y * wo + x0..],
                                rs: ho * wo,
                                cs: 1,
                            };
                            if let Some(gx) = gx.as_mut() {
                                gemm_acc(
                                    cin,
                                    cout,
                                    x1 - x0,
                                    Strided::rm(&wv[off..], cout),
                                    gview,
                                    &mut gx[yy * wd + xx0..],
                                    h * wd,
                                    1,
                                );
                            }
                            if let Some(gw) = gw.as_mut() {
                                gemm_acc(
                                    cin,
                                    x1 - x0,
                                    cout,
                                    Strided {
                                        data: &xv[yy * wd + xx0..],
                                        rs: h * wd,
                                        cs: 1,
                                    },
                                    Strided {
                                        data: &g[y * wo + x0..],
                                        rs: 1,
                                        cs: ho * wo,
                                    },
                                    &mut gw[off..],
                                    cout,
                                    1,
                                );
                            }
                        }
                    }
                }
                if let Some(v) = gx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = gw {
                    grads[w.0] = Some(v);
                }
            }
            Op::AvgPool2d { x, window } => {
                let (c, h, w) = dims3("", self.value(*x)).unwrap();
                let (ph, pw) = *window;
                let (ho, wo) = (h / ph, w / pw);
                let inv = 1.0 / (ph * pw) as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    for ch in 0..c {
                        for y in 0..ho * ph {
                            for xx in 0..wo * pw {
                                gx[(ch * h + y) * w + xx] += g[(ch * ho + y / ph) * wo + xx / pw] * inv;
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, n1) = self.value(*a).dims2().unwrap();
                let n2 = self.value(*b).shape()[1];
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n1 {
                            ga[i * n1 + j] += g[i * (n1 + n2) + j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..m {
                        for j in 0..n2 {
                            gb[i * n2 + j] += g[i * (n1 + n2) + n1 + j];
                        }
                    }
                }
            }
            Op::StackScales(parts) => {
                let n = parts.len();
                let (t, k) = self.value(parts[0]).dims2().unwrap();
                for (j, p) in parts.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, *p) {
                        for tt in 0..t {
                            for kk in 0..k {
                                gp[tt * k + kk] += g[(kk * n + j) * t + tt];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Rfft(a) => {
                let (t, f) = self.value(*a).dims2().unwrap();
                let half = g.len() / 2;
                let gx = spectral::rfft_vjp(&g[..half], &g[half..], t, f);
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(gx).for_each(|(d, v)| *d += v);
                }
            }
            Op::Slab(a, i) => {
                let inner = g.len();
                if let Some(ga) = self.slot(grads, *a) {
                    ga[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d += v);
                }
            }
            Op::Irfft { re, im } => {
                let (t, f) = self.value(out).dims2().unwrap();
                let (gre, gim) = spectral::irfft_vjp(g, t, f);
                if let Some(gr) = self.slot(grads, *re) {
                    gr.iter_mut().zip(gre).for_each(|(d, v)| *d += v);
                }
                if let Some(gi) = self.slot(grads, *im) {
                    gi.iter_mut().zip(gim).for_each(|(d, v)| *d += v);
                }
            }
            Op::Hypot(re, im) => {
                let (rv, iv) = (self.value(*re).data(), self.value(*im).data());
                let amp = self.value(out).data();
                if let Some(gr) = self.slot(grads, *re) {
                    for i in 0..g.len() {
                        if amp[i] > 0.0 {
                            gr[i] += g[i] * rv[i] / amp[i];
                        }
                    }
                }
                if let Some(gi) = self.slot(grads, *im) {
                    for i in 0..g.len() {
                        if amp[i] > 0.0 {
                            gi[i] += g[i] * iv[i] / amp[i];
                        }
                    }
                }
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (self.value(*y).data(), self.value(*x).data());
                if let Some(gy) = self.slot(grads, *y) {
                    for i in 0..g.len() {
                        let r2 = xv[i] * xv[i] + yv[i] * yv[i];
                        if r2 > 0.0 {
                            gy[i] += g[i] * xv[i] / r2;
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        let r2 = xv[i] * xv[i] + yv[i] * yv[i];
                        if r2 > 0.0 {
                            gx[i] -= g[i] * yv[i] / r2;
                        }
                    }
                }
            }
            Op::InfoNce(a, b) => {
                let (n, d) = self.value(*a).dims2().unwrap();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut logits = vec![0.0; n * n];
                gemm_acc(n, d, n, Strided::rm(av, d), Strided::rm_t(bv, d), &mut logits, n, 1);
                let (mut dl, _) = infonce_parts(&logits, n);
                for i in 0..n {
                    dl[i * n + i] -= 1.0;
                }
                dl.iter_mut().for_each(|v| *v *= g[0]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_acc(n, n, d, Strided::rm(&dl, n), Strided::rm(bv, d), ga, d, 1);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_acc(n, n, d, Strided::rm_t(&dl, n), Strided::rm(av, d), gb, d, 1);
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::leaf`], if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter; `None` when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter, zero-filled when unreachable.
    pub fn param_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape().to_vec()))
    }

    pub(crate) fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::detached();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let out = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::detached();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = tape.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::detached();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn causal_conv_hand_example() {
        let mut tape = Tape::detached();
        let x = tape.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap());
        let y = tape.causal_conv1d(x, w, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0, 5.0, 7.0]);
        assert!(matches!(tape.causal_conv1d(x, w, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn conv2d_ones_valid() {
        let mut tape = Tape::detached();
        let x = tape.constant(Tensor::full(vec![1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(vec![3, 3, 1, 1], 1.0));
        let y = tape.conv2d(x, w, Padding::None).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
        let big = tape.constant(Tensor::full(vec![5, 5, 1, 1], 1.0));
        assert!(matches!(tape.conv2d(x, big, Padding::None), Err(Error::Parameter(_))));
    }

    #[test]
    fn pool_mean_and_bad_window() {
        let mut tape = Tape::detached();
        let x = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.avg_pool2d(x, (2, 2)).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
        assert!(tape.avg_pool2d(x, (3, 1)).is_err());
    }

    #[test]
    fn sum_and_square_gradients() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::detached();
        let p = tape.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::full(vec![2], 1.0), false).unwrap();
        let b = store.add("b", Tensor::full(vec![2], 1.0), false).unwrap();
        let mut tape = Tape::new(&store);
        let va = tape.param(a);
        let s = tape.sum(va);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(a).unwrap().data(), &[1.0, 1.0]);
        assert!(g.param(b).is_none());
        assert_eq!(g.param_or_zero(&store, b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn silu_values() {
        let mut tape = Tape::detached();
        let x = tape.leaf(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
        let y = tape.silu(x);
        assert_eq!(tape.value(y).data()[0], 0.0);
        assert!((tape.value(y).data()[1] - 0.731_058_579).abs() < 1e-9);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!((g.wrt(x).unwrap().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn info_nce_single_row_is_zero() {
        let mut tape = Tape::detached();
        let a = tape.constant(Tensor::from_rows(&[&[3.0, -1.0]]));
        let b = tape.constant(Tensor::from_rows(&[&[0.5, 2.0]]));
        let l = tape.info_nce(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }
}
