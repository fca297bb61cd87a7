//! The tape: an append-only arena of tensors plus the operation that produced each.

use crate::element::Real;
use crate::error::{AutodiffError, OpKind, Result};
use crate::kernels::{self, ConvGeom};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; inputs always have smaller ids than their consumers.
    pub fn id(self) -> usize {
        self.0
    }
}

/// A dense array recorded on the tape.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    id: usize,
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with frozen running statistics (inference).
    Running { mean: &'a [T], var: &'a [T] },
}

/// Batch statistics produced by a training-mode [`Graph::batch_norm`].
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
    /// Number of elements each channel's statistics were computed over.
    pub count: usize,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, n: usize, geom: ConvGeom, cols: Vec<T> },
    ConvTranspose2d { x: Var, w: Var, n: usize, geom: ConvGeom, cin: usize },
    MaxPool2x2 { x: Var, argmax: Vec<u32> },
    Upsample2x { x: Var, planes: usize, h: usize, w: usize },
    Add { a: Var, b: Var },
    AddBias { x: Var, b: Var, channels: usize, inner: usize },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScalarMul { x: Var, c: T },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Tanh { x: Var },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Abs { x: Var },
    Square { x: Var },
    L2NormSquared { x: Var },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
        n: usize,
        c: usize,
        l: usize,
    },
    SliceRows { x: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::MaxPool2x2 { .. } => OpKind::MaxPool2x2,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
            Op::Add { .. } => OpKind::Add,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::ScalarMul { .. } => OpKind::ScalarMul,
            Op::Relu { .. } => OpKind::Relu,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Abs { .. } => OpKind::Abs,
            Op::Square { .. } => OpKind::Square,
            Op::L2NormSquared { .. } => OpKind::L2NormSquared,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::ConcatRows { .. } => OpKind::ConcatRows,
        }
    }
}

/// A single-threaded recording of tensors and the operations between them.
///
/// Forward methods append to the tape and return a [`Var`]. [`Graph::backward`]
/// walks the tape once in reverse and accumulates `d root / d leaf` into every
/// leaf created with [`Graph::param`].
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    last_visits: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        Err(AutodiffError::InvalidShape(shape.to_vec()))
    } else {
        Ok(())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), ops: Vec::new(), last_visits: 0 }
    }

    /// Number of recorded tensors (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// First element; intended for scalar results.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].values[0]
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.ops[v.0].kind()
    }

    /// Input ids of the operation that produced `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.ops[v.0] {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![*a, *b]
            }
            Op::Conv2d { x, w, .. } | Op::ConvTranspose2d { x, w, .. } => vec![*x, *w],
            Op::AddBias { x, b, .. } => vec![*x, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows { parts } => parts.clone(),
            Op::MaxPool2x2 { x, .. }
            | Op::Upsample2x { x, .. }
            | Op::ScalarMul { x, .. }
            | Op::Relu { x }
            | Op::LeakyRelu { x, .. }
            | Op::Tanh { x }
            | Op::Reshape { x }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Abs { x }
            | Op::Square { x }
            | Op::L2NormSquared { x }
            | Op::SliceRows { x, .. } => vec![*x],
        }
    }

    /// Operations visited by the most recent [`Graph::backward`] call.
    pub fn last_backward_visits(&self) -> usize {
        self.last_visits
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        let id = self.nodes.len();
        self.nodes.push(Tensor { id, shape, values, grad: None, requires_grad });
        self.ops.push(op);
        Var(id)
    }

    fn leaf(&mut self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        check_shape(shape)?;
        if numel(shape) != values.len() {
            return Err(AutodiffError::LengthMismatch { shape: shape.to_vec(), len: values.len() });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    /// A trainable leaf whose gradient is tracked.
    pub fn param(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, false)
    }

    /// A constant copy of `v`: same values, gradient flow stopped.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = &self.nodes[v.0];
        let (values, shape) = (t.values.clone(), t.shape.clone());
        self.push(shape, values, Op::Leaf, false)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, op: OpKind, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    fn zip_map(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op.kind(), a, b)?;
        let values: Vec<T> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), values, op, rg))
    }

    fn map(&mut self, op: Op<T>, x: Var, f: impl Fn(T) -> T) -> Var {
        let values: Vec<T> = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), values, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Add { a, b }, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Sub { a, b }, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Mul { a, b }, a, b, |x, y| x * y)
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.map(Op::ScalarMul { x, c }, x, |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(Op::Relu { x }, x, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64(slope);
        self.map(Op::LeakyRelu { x, slope }, x, |v| if v > T::zero() { v } else { v * slope })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(Op::Tanh { x }, x, |v| v.tanh())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(Op::Abs { x }, x, |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(Op::Square { x }, x, |v| v * v)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if numel(shape) != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::Reshape,
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let values = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), values, Op::Reshape { x }, rg))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum { x }, rg)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.value(x).len() as f64);
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s / n], Op::Mean { x }, rg)
    }

    /// Sum of squared elements (squared Frobenius norm), shape `[1]`.
    pub fn l2_norm_squared(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().map(|&v| v * v).sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::L2NormSquared { x }, rg)
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::MatMul,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a),
            k as isize,
            1,
            self.value(b),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, rg))
    }

    /// Adds a per-channel bias `[C]` to `x` of shape `[N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(AutodiffError::ShapeMismatch { op: OpKind::AddBias, lhs: sx, rhs: sb });
        }
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let mut values = self.value(x).to_vec();
        let bias = self.value(b);
        for (i, chunk) in values.chunks_mut(inner).enumerate() {
            let bv = bias[i % channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(sx, values, Op::AddBias { x, b, channels, inner }, rg))
    }

    /// Cross-correlation of `x [N, C, H, W]` with `w [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch =
            || AutodiffError::ShapeMismatch { op: OpKind::Conv2d, lhs: sx.clone(), rhs: sw.clone() };
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch());
        }
        let geom =
            ConvGeom::new(sx[1], sx[2], sx[3], sw[2], sw[3], stride, pad).ok_or_else(mismatch)?;
        let (n, o) = (sx[0], sw[0]);
        let l = geom.out_len();
        let pl = geom.patch_len();
        let mut cols = vec![T::zero(); pl * n * l];
        kernels::im2col(self.value(x), n, &geom, &mut cols);
        // [O, N*L] = W[O, PL] * cols[PL, N*L]
        let mut tmp = vec![T::zero(); o * n * l];
        T::gemm(
            o,
            pl,
            n * l,
            T::one(),
            self.value(w),
            pl as isize,
            1,
            &cols,
            (n * l) as isize,
            1,
            T::zero(),
            &mut tmp,
            (n * l) as isize,
            1,
        );
        let mut out = vec![T::zero(); n * o * l];
        kernels::swap_leading(&tmp, o, n, l, &mut out);
        let rg = self.rg(x) || self.rg(w);
        let keep = if self.rg(w) { cols } else { Vec::new() };
        Ok(self.push(
            vec![n, o, geom.out_h, geom.out_w],
            out,
            Op::Conv2d { x, w, n, geom, cols: keep },
            rg,
        ))
    }

    /// Transposed convolution of `x [N, Cin, H, W]` with `w [Cin, Cout, kh, kw]`.
    ///
    /// Output side is `(H - 1) * stride - 2 * pad + kh`; this is the adjoint of
    /// [`Graph::conv2d`] with the same kernel, stride and padding.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch = || AutodiffError::ShapeMismatch {
            op: OpKind::ConvTranspose2d,
            lhs: sx.clone(),
            rhs: sw.clone(),
        };
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || stride == 0 {
            return Err(mismatch());
        }
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[1], sw[2], sw[3]);
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad).filter(|&v| v > 0).ok_or_else(mismatch)?;
        let ow = ((wd - 1) * stride + kw).checked_sub(2 * pad).filter(|&v| v > 0).ok_or_else(mismatch)?;
        let geom = ConvGeom::new(cout, oh, ow, kh, kw, stride, pad).ok_or_else(mismatch)?;
        if geom.out_h != h || geom.out_w != wd {
            return Err(mismatch());
        }
        let l = h * wd;
        let pl = geom.patch_len();
        let mut xt = vec![T::zero(); cin * n * l];
        kernels::swap_leading(self.value(x), n, cin, l, &mut xt);
        // cols[PL, N*L] = W^T[PL, Cin] * X[Cin, N*L]
        let mut cols = vec![T::zero(); pl * n * l];
        T::gemm(
            pl,
            cin,
            n * l,
            T::one(),
            self.value(w),
            1,
            pl as isize,
            &xt,
            (n * l) as isize,
            1,
            T::zero(),
            &mut cols,
            (n * l) as isize,
            1,
        );
        let mut out = vec![T::zero(); n * cout * oh * ow];
        kernels::col2im(&cols, n, &geom, &mut out);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(vec![n, cout, oh, ow], out, Op::ConvTranspose2d { x, w, n, geom, cin }, rg))
    }

    /// 2x2 max pooling, stride 2, over `[N, C, H, W]` with even `H` and `W`.
    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || sx[2] % 2 != 0 || sx[3] % 2 != 0 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::MaxPool2x2,
                msg: format!("needs [N, C, H, W] with even H and W, got {sx:?}"),
            });
        }
        let planes = sx[0] * sx[1];
        let (oh, ow) = (sx[2] / 2, sx[3] / 2);
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut argmax = vec![0u32; planes * oh * ow];
        kernels::max_pool2x2(self.value(x), planes, sx[2], sx[3], &mut out, &mut argmax);
        let rg = self.rg(x);
        Ok(self.push(vec![sx[0], sx[1], oh, ow], out, Op::MaxPool2x2 { x, argmax }, rg))
    }

    /// Bilinear 2x upsampling of `[N, C, H, W]` (half-pixel centers).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Upsample2x,
                msg: format!("needs [N, C, H, W], got {sx:?}"),
            });
        }
        let (planes, h, w) = (sx[0] * sx[1], sx[2], sx[3]);
        let mut out = vec![T::zero(); planes * 4 * h * w];
        kernels::upsample2x(self.value(x), planes, h, w, &mut out);
        let rg = self.rg(x);
        Ok(self.push(vec![sx[0], sx[1], 2 * h, 2 * w], out, Op::Upsample2x { x, planes, h, w }, rg))
    }

    /// Batch normalization over all axes but the channel axis 1 of `[N, C, ...]`.
    ///
    /// With [`NormMode::Batch`] the current batch statistics are used and returned so
    /// the caller can update running averages; with [`NormMode::Running`] the op is an
    /// affine map of `x`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let sx = self.shape(x).to_vec();
        let bad = |other: &[usize]| AutodiffError::ShapeMismatch {
            op: OpKind::BatchNorm,
            lhs: sx.clone(),
            rhs: other.to_vec(),
        };
        if sx.len() < 2 {
            return Err(bad(&[]));
        }
        let (n, c) = (sx[0], sx[1]);
        let l: usize = sx[2..].iter().product();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(bad(self.shape(p)));
            }
        }
        let eps = T::from_f64(eps);
        let (mean, var, moments) = match mode {
            NormMode::Batch => {
                if n * l < 2 {
                    return Err(AutodiffError::InvalidArgument {
                        op: OpKind::BatchNorm,
                        msg: "batch statistics need at least two values per channel".into(),
                    });
                }
                let (m, v) = kernels::channel_moments(self.value(x), n, c, l);
                let moments = BatchMoments { mean: m.clone(), var: v.clone(), count: n * l };
                (m, v, Some(moments))
            }
            NormMode::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(bad(&[mean.len(), var.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xs = self.value(x);
        let (gs, bs) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                for i in off..off + l {
                    let h = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gs[ch] * h + bs[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: moments.is_some(),
            n,
            c,
            l,
        };
        Ok((self.push(sx, out, op, rg), moments))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if len == 0 || start + len > sx[0] {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::SliceRows,
                msg: format!("rows {start}..{} out of range for {sx:?}", start + len),
            });
        }
        let row: usize = sx[1..].iter().product();
        let values = self.value(x)[start * row..(start + len) * row].to_vec();
        let mut shape = sx;
        shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(shape, values, Op::SliceRows { x, start }, rg))
    }

    /// Concatenation along axis 0; trailing dimensions must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::InvalidArgument {
            op: OpKind::ConcatRows,
            msg: "nothing to concatenate".into(),
        })?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut values = Vec::new();
        let mut rg = false;
        for &p in parts {
            let sp = self.shape(p);
            if sp[1..] != tail[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: OpKind::ConcatRows,
                    lhs: self.shape(*first).to_vec(),
                    rhs: sp.to_vec(),
                });
            }
            rows += sp[0];
            values.extend_from_slice(self.value(p));
            rg |= self.rg(p);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        Ok(self.push(shape, values, Op::ConcatRows { parts: parts.to_vec() }, rg))
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse pass from a scalar `root`.
    ///
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if self.shape(root) != [1] {
            return Err(AutodiffError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        let mut visits = 0;
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.ops[id] {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            visits += 1;
            self.backward_op(id, &g, &mut grads);
        }
        self.last_visits = visits;
        Ok(())
    }

    /// Gradient buffer for `v` if it needs one.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].values.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backward_op(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[id];
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        s.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, &gi), &y) in s.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((d, &gi), &x) in s.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            Op::ScalarMul { x, c } => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *c);
                }
            }
            Op::Relu { x } => {
                let vx = self.value(*x);
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in s.iter_mut().zip(g).zip(vx) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let vx = self.value(*x);
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in s.iter_mut().zip(g).zip(vx) {
                        *d += if xi > T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Tanh { x } => {
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &y) in s.iter_mut().zip(g).zip(&out.values) {
                        *d += gi * (T::one() - y * y);
                    }
                }
            }
            Op::Abs { x } => {
                let vx = self.value(*x);
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in s.iter_mut().zip(g).zip(vx) {
                        if xi > T::zero() {
                            *d += gi;
                        } else if xi < T::zero() {
                            *d -= gi;
                        }
                    }
                }
            }
            Op::Square { x } => {
                let vx = self.value(*x);
                let two = T::from_f64(2.0);
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in s.iter_mut().zip(g).zip(vx) {
                        *d += two * xi * gi;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::SliceRows { x, start } => {
                let row: usize = out.shape[1..].iter().product();
                if let Some(s) = self.slot(grads, *x) {
                    s[start * row..][..g.len()].iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(s) = self.slot(grads, p) {
                        s.iter_mut().zip(&g[off..off + len]).for_each(|(d, &gi)| *d += gi);
                    }
                    off += len;
                }
            }
            Op::Sum { x } => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean { x } => {
                let n = T::from_f64(self.value(*x).len() as f64);
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::L2NormSquared { x } => {
                let vx = self.value(*x);
                let two = T::from_f64(2.0);
                if let Some(s) = self.slot(grads, *x) {
                    for (d, &xi) in s.iter_mut().zip(vx) {
                        *d += two * xi * g[0];
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    // dA[m,k] += G[m,n] * B^T[n,k]
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, vb, 1, n as isize, T::one(), s, k as isize, 1);
                }
                if let Some(s) = self.slot(grads, *b) {
                    // dB[k,n] += A^T[k,m] * G[m,n]
                    T::gemm(k, m, n, T::one(), va, 1, k as isize, g, n as isize, 1, T::one(), s, n as isize, 1);
                }
            }
            Op::AddBias { x, b, channels, inner } => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (i, chunk) in g.chunks(*inner).enumerate() {
                        s[i % channels] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Conv2d { x, w, n, geom, cols } => {
                let (n, l, pl) = (*n, geom.out_len(), geom.patch_len());
                let o = self.shape(*w)[0];
                let mut gt = vec![T::zero(); o * n * l];
                kernels::swap_leading(g, n, o, l, &mut gt);
                if let Some(s) = self.slot(grads, *w) {
                    // dW[O, PL] += G[O, N*L] * cols^T[N*L, PL]
                    T::gemm(o, n * l, pl, T::one(), &gt, (n * l) as isize, 1, cols, 1, (n * l) as isize, T::one(), s, pl as isize, 1);
                }
                let vw = self.value(*w);
                if let Some(s) = self.slot(grads, *x) {
                    let mut dcols = vec![T::zero(); pl * n * l];
                    // dcols[PL, N*L] = W^T[PL, O] * G[O, N*L]
                    T::gemm(pl, o, n * l, T::one(), vw, 1, pl as isize, &gt, (n * l) as isize, 1, T::zero(), &mut dcols, (n * l) as isize, 1);
                    kernels::col2im(&dcols, n, geom, s);
                }
            }
            Op::ConvTranspose2d { x, w, n, geom, cin } => {
                let (n, cin) = (*n, *cin);
                let (l, pl) = (geom.out_len(), geom.patch_len());
                let mut dcols = vec![T::zero(); pl * n * l];
                kernels::im2col(g, n, geom, &mut dcols);
                if let Some(s) = self.slot(grads, *w) {
                    let mut xt = vec![T::zero(); cin * n * l];
                    kernels::swap_leading(self.value(*x), n, cin, l, &mut xt);
                    // dW[Cin, PL] += X[Cin, N*L] * dcols^T[N*L, PL]
                    T::gemm(cin, n * l, pl, T::one(), &xt, (n * l) as isize, 1, &dcols, 1, (n * l) as isize, T::one(), s, pl as isize, 1);
                }
                let vw = self.value(*w);
                if let Some(s) = self.slot(grads, *x) {
                    let mut dxt = vec![T::zero(); cin * n * l];
                    // dX[Cin, N*L] = W[Cin, PL] * dcols[PL, N*L]
                    T::gemm(cin, pl, n * l, T::one(), vw, pl as isize, 1, &dcols, (n * l) as isize, 1, T::zero(), &mut dxt, (n * l) as isize, 1);
                    let mut dx = vec![T::zero(); n * cin * l];
                    kernels::swap_leading(&dxt, cin, n, l, &mut dx);
                    s.iter_mut().zip(&dx).for_each(|(d, &v)| *d += v);
                }
            }
            Op::MaxPool2x2 { x, argmax } => {
                if let Some(s) = self.slot(grads, *x) {
                    for (&gi, &idx) in g.iter().zip(argmax) {
                        s[idx as usize] += gi;
                    }
                }
            }
            Op::Upsample2x { x, planes, h, w } => {
                if let Some(s) = self.slot(grads, *x) {
                    kernels::upsample2x_backward(g, *planes, *h, *w, s);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats, n, c, l } => {
                let (n, c, l) = (*n, *c, *l);
                let gs = self.value(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * l;
                        for i in off..off + l {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *gamma) {
                    s.iter_mut().zip(&sum_gx).for_each(|(d, &v)| *d += v);
                }
                if let Some(s) = self.slot(grads, *beta) {
                    s.iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += v);
                }
                if let Some(s) = self.slot(grads, *x) {
                    let m = T::from_f64((n * l) as f64);
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * l;
                            let k = gs[ch] * inv_std[ch];
                            for i in off..off + l {
                                if *batch_stats {
                                    s[i] += k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m);
                                } else {
                                    s[i] += k * g[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
